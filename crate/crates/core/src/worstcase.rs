//! Worst-case remaining enactment durations.
//!
//! Remaining time is computed by structural recursion: sequences add,
//! AND blocks take the longest branch, XOR blocks take the chosen branch once
//! entered and the longest branch before, loops add the current iteration's
//! remainder to the worst case of every iteration still allowed. Pending
//! steps count `e + Δ_c + Δ_st + Δ`.

use milp_core::{LinearExpr, VarId};

use crate::landscape::{top_level_children, Catalog, Ms, NodeKind, ProcessInstance, ServiceType, StepStatus};

/// Remaining-time expression: affine leaves combined by sums and maxima.
#[derive(Debug, Clone, PartialEq)]
pub enum Wc {
    Affine(LinearExpr),
    Sum(Vec<Wc>),
    Max(Vec<Wc>),
}

impl Wc {
    pub fn constant(v: f64) -> Self {
        Wc::Affine(LinearExpr::constant(v))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Wc::Affine(e) if e.is_constant() => Some(e.constant),
            _ => None,
        }
    }

    /// Sum with affine parts merged.
    pub fn sum(items: Vec<Wc>) -> Self {
        let mut affine = LinearExpr::new();
        let mut rest = Vec::new();
        for it in items {
            match it {
                Wc::Affine(e) => {
                    affine.add_scaled(1.0, &e);
                }
                Wc::Sum(inner) => match Wc::sum(inner) {
                    Wc::Affine(e) => {
                        affine.add_scaled(1.0, &e);
                    }
                    Wc::Sum(v) => rest.extend(v),
                    other => rest.push(other),
                },
                other => rest.push(other),
            }
        }
        if rest.is_empty() {
            return Wc::Affine(affine);
        }
        if !(affine.is_constant() && affine.constant == 0.0) {
            rest.push(Wc::Affine(affine));
        }
        if rest.len() == 1 {
            rest.pop().unwrap()
        } else {
            Wc::Sum(rest)
        }
    }

    /// Maximum with constant branches folded into one.
    pub fn max(items: Vec<Wc>) -> Self {
        let mut best_const: Option<f64> = None;
        let mut rest = Vec::new();
        for it in items {
            match it.as_constant() {
                Some(c) => best_const = Some(best_const.map_or(c, |b: f64| b.max(c))),
                None => rest.push(it),
            }
        }
        match (best_const, rest.is_empty()) {
            (Some(c), true) => Wc::constant(c),
            (None, true) => Wc::constant(0.0),
            (c, false) => {
                if let Some(c) = c {
                    rest.push(Wc::constant(c));
                }
                if rest.len() == 1 {
                    rest.pop().unwrap()
                } else {
                    Wc::Max(rest)
                }
            }
        }
    }

    pub fn eval(&self, values: &[f64]) -> f64 {
        match self {
            Wc::Affine(e) => e.eval(values),
            Wc::Sum(v) => v.iter().map(|w| w.eval(values)).sum(),
            Wc::Max(v) => v.iter().map(|w| w.eval(values)).fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn variables(&self, out: &mut Vec<VarId>) {
        match self {
            Wc::Affine(e) => out.extend(e.terms().iter().map(|&(_, v)| v)),
            Wc::Sum(v) | Wc::Max(v) => v.iter().for_each(|w| w.variables(out)),
        }
    }
}

/// Which running and scheduled work a remaining-time expression includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    /// From now: running steps contribute their remaining time.
    FromNow,
    /// From the next round: running steps contribute nothing.
    NextRound,
}

/// Σ (e + Δ_c + Δ_st + Δ) over `(service, expected duration)` pairs.
pub fn overhead_sum(catalog: &Catalog, steps: impl IntoIterator<Item = (usize, f64)>, delta: f64) -> f64 {
    steps
        .into_iter()
        .map(|(s, e)| {
            let svc = &catalog.services[s];
            e + svc.container_start_time + svc.image_pull_time + delta
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StartupBasis {
    /// Catalog-wide worst case Δ.
    WorstCase(f64),
    /// Startup time of the concrete VM type Δ_v.
    Concrete(f64),
}

/// `e + (Δ_c + Δ_st)(1 − z) + Δ(1 − β)`.
pub fn invocation_overhead(service: &ServiceType, expected_duration: f64, image_cached: bool, vm_running: bool, startup: StartupBasis) -> f64 {
    let delta = match startup {
        StartupBasis::WorstCase(d) | StartupBasis::Concrete(d) => d,
    };
    let deploy = if image_cached { 0.0 } else { service.container_start_time + service.image_pull_time };
    let boot = if vm_running { 0.0 } else { delta };
    expected_duration + deploy + boot
}

fn step_wc(inst: &ProcessInstance, catalog: &Catalog, s: usize) -> f64 {
    let st = &inst.steps[s];
    catalog.worst_case_step(st.service, st.expected_duration)
}

/// Worst case of the subtree at `n` as if none of it had started.
pub fn fresh_worst_case(inst: &ProcessInstance, catalog: &Catalog, n: usize) -> f64 {
    let node = inst.node(n);
    let kids = node.children.iter().map(|&c| fresh_worst_case(inst, catalog, c));
    match node.kind {
        NodeKind::Step => step_wc(inst, catalog, node.step.unwrap()),
        NodeKind::Sequence => kids.sum(),
        NodeKind::And | NodeKind::Xor => kids.fold(0.0, f64::max),
        NodeKind::Loop => node.max_repetitions as f64 * kids.sum::<f64>(),
    }
}

/// Remaining-time expression of the subtree at `n`. `next_term` supplies the
/// contribution of each schedulable next step.
pub fn remaining_expr(inst: &ProcessInstance, catalog: &Catalog, n: usize, horizon: Horizon, next_term: &mut dyn FnMut(usize) -> Wc) -> Wc {
    if inst.is_complete(n) {
        return Wc::constant(0.0);
    }
    let node = inst.node(n);
    match node.kind {
        NodeKind::Step => {
            let s = node.step.unwrap();
            let st = &inst.steps[s];
            match st.status {
                StepStatus::Done => Wc::constant(0.0),
                StepStatus::Running => match horizon {
                    Horizon::FromNow => Wc::constant(st.remaining_time),
                    Horizon::NextRound => Wc::constant(0.0),
                },
                StepStatus::Next => next_term(s),
                StepStatus::Pending => Wc::constant(step_wc(inst, catalog, s)),
            }
        }
        NodeKind::Sequence => Wc::sum(node.children.iter().map(|&c| remaining_expr(inst, catalog, c, horizon, next_term)).collect()),
        NodeKind::And => Wc::max(node.children.iter().map(|&c| remaining_expr(inst, catalog, c, horizon, next_term)).collect()),
        NodeKind::Xor => {
            if inst.is_entered(n) {
                remaining_expr(inst, catalog, node.children[inst.xor_choice[n]], horizon, next_term)
            } else {
                Wc::constant(fresh_worst_case(inst, catalog, n))
            }
        }
        NodeKind::Loop => {
            let body: f64 = node.children.iter().map(|&c| fresh_worst_case(inst, catalog, c)).sum();
            if !inst.is_entered(n) && inst.loop_done[n] == 0 {
                return Wc::constant(node.max_repetitions as f64 * body);
            }
            let later = node.max_repetitions.saturating_sub(inst.loop_done[n] + 1) as f64 * body;
            let mut parts: Vec<Wc> = node.children.iter().map(|&c| remaining_expr(inst, catalog, c, horizon, next_term)).collect();
            parts.push(Wc::constant(later));
            Wc::sum(parts)
        }
    }
}

/// Running remainders plus the worst case of everything not yet running.
pub fn worst_case_from_now(inst: &ProcessInstance, catalog: &Catalog) -> f64 {
    remaining_expr(inst, catalog, 0, Horizon::FromNow, &mut |s| Wc::constant(step_wc(inst, catalog, s))).eval(&[])
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseReport {
    pub e_i: f64,
    pub e_seq: f64,
    pub e_la: f64,
    pub e_lx: f64,
    pub e_rl: f64,
    /// ê^s of the top-level sequence (steps not running).
    pub sequence_overhead: f64,
    /// ê^l of every AND/XOR path at top level, in block order.
    pub path_overheads: Vec<f64>,
    /// ex of every schedulable next step under the catalog-wide Δ.
    pub step_coefficients: Vec<(usize, f64)>,
    pub delta: f64,
}

/// Worst-case remaining duration from the next round on. Each entry of
/// `scheduled` is a next step with the `ex` value subtracted from its own
/// structural component; running steps are excluded.
pub fn remaining_duration(inst: &ProcessInstance, catalog: &Catalog, scheduled: &[(usize, f64)]) -> WorstCaseReport {
    let delta = catalog.max_startup();
    let mut term = |s: usize| {
        let wc = step_wc(inst, catalog, s);
        let ex = scheduled.iter().find(|(j, _)| *j == s).map_or(0.0, |(_, ex)| *ex);
        Wc::constant(wc - ex)
    };
    let (mut e_seq, mut e_la, mut e_lx, mut e_rl) = (0.0, 0.0, 0.0, 0.0);
    let mut sequence_overhead = 0.0;
    let mut path_overheads = Vec::new();
    let pending_overhead = |steps: Vec<usize>| {
        overhead_sum(
            catalog,
            steps
                .into_iter()
                .filter(|&s| matches!(inst.steps[s].status, StepStatus::Pending | StepStatus::Next))
                .map(|s| (inst.steps[s].service, inst.steps[s].expected_duration)),
            delta,
        )
    };
    for c in top_level_children(&inst.model) {
        let v = remaining_expr(inst, catalog, c, Horizon::NextRound, &mut term).eval(&[]);
        let node = inst.node(c);
        match node.kind {
            NodeKind::Step | NodeKind::Sequence => {
                e_seq += v;
                sequence_overhead += pending_overhead(inst.model.steps_under(c));
            }
            NodeKind::And | NodeKind::Xor => {
                if node.kind == NodeKind::And {
                    e_la += v;
                } else {
                    e_lx += v;
                }
                for &b in &node.children {
                    path_overheads.push(pending_overhead(inst.model.steps_under(b)));
                }
            }
            NodeKind::Loop => e_rl += v,
        }
    }
    let step_coefficients = inst.schedulable_steps().into_iter().map(|s| (s, step_wc(inst, catalog, s))).collect();
    WorstCaseReport {
        e_i: e_seq + e_la + e_lx + e_rl,
        e_seq,
        e_la,
        e_lx,
        e_rl,
        sequence_overhead,
        path_overheads,
        step_coefficients,
        delta,
    }
}

/// Latest start DL_j* of every next step: the instance deadline minus the
/// step's own worst case and the worst case of everything structurally
/// after it. Entries for other steps are `None`.
pub fn step_deadlines(inst: &ProcessInstance, catalog: &Catalog) -> Vec<Option<Ms>> {
    let mut out = vec![None; inst.steps.len()];
    latest(inst, catalog, 0, inst.deadline as f64 / 1000.0, &mut out);
    out
}

pub fn step_deadline(inst: &ProcessInstance, catalog: &Catalog, step: usize) -> Option<Ms> {
    step_deadlines(inst, catalog)[step]
}

fn remaining_const(inst: &ProcessInstance, catalog: &Catalog, n: usize) -> f64 {
    remaining_expr(inst, catalog, n, Horizon::FromNow, &mut |s| Wc::constant(step_wc(inst, catalog, s))).eval(&[])
}

fn latest(inst: &ProcessInstance, catalog: &Catalog, n: usize, finish_by: f64, out: &mut [Option<Ms>]) {
    if inst.is_complete(n) {
        return;
    }
    let node = inst.node(n);
    match node.kind {
        NodeKind::Step => {
            let s = node.step.unwrap();
            if inst.steps[s].status == StepStatus::Next {
                out[s] = Some((1000.0 * (finish_by - step_wc(inst, catalog, s))).round() as Ms);
            }
        }
        NodeKind::Sequence => seq_latest(inst, catalog, &node.children, finish_by, out),
        NodeKind::And => {
            for &c in &node.children {
                latest(inst, catalog, c, finish_by, out);
            }
        }
        NodeKind::Xor => {
            if inst.is_entered(n) {
                latest(inst, catalog, node.children[inst.xor_choice[n]], finish_by, out);
            }
        }
        NodeKind::Loop => {
            let body: f64 = node.children.iter().map(|&c| fresh_worst_case(inst, catalog, c)).sum();
            let later = node.max_repetitions.saturating_sub(inst.loop_done[n] + 1) as f64 * body;
            seq_latest(inst, catalog, &node.children, finish_by - later, out);
        }
    }
}

fn seq_latest(inst: &ProcessInstance, catalog: &Catalog, children: &[usize], finish_by: f64, out: &mut [Option<Ms>]) {
    let mut t = finish_by;
    for &c in children.iter().rev() {
        latest(inst, catalog, c, t, out);
        t -= remaining_const(inst, catalog, c);
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::landscape::{ProcessModel, Provider, VmType, WorkflowNode};

    fn svc(id: &str, cpu: f64, dur: f64) -> ServiceType {
        ServiceType {
            id: id.into(),
            cpu_demand: cpu,
            ram_demand: 0.0,
            duration: dur,
            image_pull_time: 30.0,
            container_start_time: 2.0,
        }
    }

    fn catalog() -> Catalog {
        Catalog {
            services: vec![svc("A", 45.0, 40.0), svc("C", 75.0, 120.0)],
            vm_types: vec![VmType {
                id: "1".into(),
                provider: Provider::Private,
                cpu_supply: 100.0,
                ram_supply: 0.0,
                btu_length: 300.0,
                cost_per_btu: 10.0,
                startup_time: 60.0,
                pool_limit: None,
            }],
        }
    }

    fn instance(root: WorkflowNode, deadline: Ms) -> ProcessInstance {
        let c = catalog();
        ProcessInstance::new(0, Arc::new(ProcessModel::new(1, root).unwrap()), &c, 0, deadline, 1.0)
    }

    fn a() -> WorkflowNode {
        WorkflowNode::Step { service: 0 }
    }

    #[test]
    fn overhead_sums() {
        let c = catalog();
        assert_eq!(overhead_sum(&c, [(0, 40.0), (0, 40.0)], 60.0), 264.0);
        assert_eq!(overhead_sum(&c, [], 60.0), 0.0);
        assert_eq!(overhead_sum(&c, [(1, 120.0)], 60.0), 212.0);
    }

    #[test]
    fn sequence_remaining_with_and_without_scheduling() {
        let c = catalog();
        let inst = instance(WorkflowNode::Sequence(vec![a(), a()]), 1_000_000);
        let r = remaining_duration(&inst, &c, &[]);
        assert_eq!(r.e_i, 264.0);
        assert_eq!(r.sequence_overhead, 264.0);
        let r = remaining_duration(&inst, &c, &[(0, 132.0)]);
        assert_eq!(r.e_i, 132.0);
        assert_eq!(r.e_i, r.e_seq + r.e_la + r.e_lx + r.e_rl);
    }

    #[test]
    fn and_block_takes_longest_path() {
        let c = catalog();
        let inst = instance(WorkflowNode::And(vec![a(), WorkflowNode::Step { service: 1 }]), 1_000_000);
        let r = remaining_duration(&inst, &c, &[]);
        assert_eq!(r.e_la, 212.0);
        assert_eq!(r.path_overheads, vec![132.0, 212.0]);
    }

    #[test]
    fn invocation_overhead_variants() {
        let s = svc("A", 45.0, 40.0);
        assert_eq!(invocation_overhead(&s, 40.0, true, true, StartupBasis::Concrete(60.0)), 40.0);
        assert_eq!(invocation_overhead(&s, 40.0, false, true, StartupBasis::Concrete(60.0)), 72.0);
        assert_eq!(invocation_overhead(&s, 40.0, false, false, StartupBasis::WorstCase(60.0)), 132.0);
    }

    #[test]
    fn last_step_deadline() {
        let c = catalog();
        let inst = instance(a(), 1_000_000);
        assert_eq!(step_deadline(&inst, &c, 0), Some(868_000));
        let inst = instance(WorkflowNode::Sequence(vec![a(), a()]), 1_000_000);
        assert_eq!(step_deadline(&inst, &c, 0), Some(736_000));
    }

    #[test]
    fn past_deadline_gives_negative_slack() {
        let c = catalog();
        let inst = instance(a(), 50_000);
        assert!(step_deadline(&inst, &c, 0).unwrap() < 0);
    }

    #[test]
    fn loop_counts_every_allowed_iteration() {
        let c = catalog();
        let mut inst = instance(
            WorkflowNode::Loop {
                body: vec![a()],
                max_repetitions: 3,
            },
            1_000_000,
        );
        assert_eq!(remaining_duration(&inst, &c, &[]).e_rl, 396.0);
        inst.loop_total[0] = 3;
        inst.complete_step(0);
        assert_eq!(remaining_duration(&inst, &c, &[]).e_rl, 264.0);
    }

    #[test]
    fn entered_xor_uses_chosen_branch() {
        let c = catalog();
        let mut inst = instance(WorkflowNode::Xor(vec![a(), WorkflowNode::Step { service: 1 }]), 1_000_000);
        assert_eq!(remaining_duration(&inst, &c, &[]).e_lx, 132.0);
        inst.set_choices(vec![1, 0, 0], vec![1, 1, 1]);
        assert_eq!(remaining_duration(&inst, &c, &[]).e_lx, 212.0);
    }
}
