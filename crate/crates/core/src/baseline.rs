//! The VM-only baseline: every VM offers a single service type at a time.
//!
//! Adds one boolean `u_{vm}_st{service}` per candidate and service type.
//! A VM can switch its type only while idle, paying a fresh deployment.

use std::collections::BTreeSet;

use milp_core::{Domain, LinearExpr, Relation};

use crate::error::CoreResult;
use crate::ffsipp::{build_with, BuiltModel, Candidate, ModelRules, OptimizerConfig, SchedulingState};
use crate::landscape::StepState;

#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineRules;

impl BaselineRules {
    fn offers(state: &SchedulingState, cand: &Candidate, service: usize) -> bool {
        cand.fleet.is_some_and(|f| state.fleet[f].offered() == Some(service))
    }
}

impl ModelRules for BaselineRules {
    fn overhead(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64 {
        let svc = &state.catalog.services[step.service];
        let deploy = svc.image_pull_time + svc.container_start_time;
        match cand.fleet {
            Some(f) if Self::offers(state, cand, step.service) => step.expected_duration + state.fleet[f].start_delay(state.catalog, step.service),
            Some(f) => step.expected_duration + state.fleet[f].boot_wait + deploy,
            None => step.expected_duration + deploy + state.catalog.vm_types[cand.vm_type].startup_time,
        }
    }

    fn deploy_factor(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64 {
        if Self::offers(state, cand, step.service) {
            0.0
        } else {
            1.0
        }
    }

    fn extend(&self, state: &SchedulingState, model: &mut BuiltModel) -> CoreResult<()> {
        for (k, c) in model.candidates.iter().enumerate() {
            let placed: Vec<_> = model.xvars.iter().filter(|x| x.cand == k).collect();
            let mut services: BTreeSet<usize> = placed.iter().map(|x| state.instances[x.inst].steps[x.step].service).collect();
            let current = c.fleet.and_then(|f| state.fleet[f].offered());
            services.extend(current);
            if services.is_empty() {
                continue;
            }
            let locked = c.fleet.is_some_and(|f| !state.fleet[f].idle);
            let tag = c.vm.tag();
            let mut one = LinearExpr::new();
            for &s in &services {
                let fixed = if locked { Some(if current == Some(s) { 1.0 } else { 0.0 }) } else { None };
                let (lo, hi) = fixed.map_or((0.0, 1.0), |v| (v, v));
                let u = model.problem.add_var(format!("u_{tag}_st{s}"), Domain::Boolean, lo, hi);
                one.add_term(1.0, u);
                for x in placed.iter().filter(|x| state.instances[x.inst].steps[x.step].service == s) {
                    let mut e = LinearExpr::term(1.0, x.var);
                    e.add_term(-1.0, u);
                    let name = format!("offer_{}", model.problem.var(x.var).name);
                    model.problem.add_constraint(name, e, Relation::Le, 0.0);
                }
            }
            if services.len() > 1 {
                model.problem.add_constraint(format!("single_{tag}"), one, Relation::Le, 1.0);
            }
        }
        Ok(())
    }
}

/// Builds the baseline model.
pub fn build_baseline(state: &SchedulingState, config: &OptimizerConfig) -> CoreResult<BuiltModel> {
    build_with(state, config, &BaselineRules)
}
