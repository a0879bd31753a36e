//! The four-fold placement MILP: build, decode, next wake-up.
//!
//! Process steps are placed on VM instances (running ones and anonymous
//! fresh candidates per type); containers are derived afterwards by the
//! controller. Names of model variables are legal LP identifiers:
//! `x_i{instance}_s{step}_{vm}`, `y_{vm}`, `g_{vm}`, `fc_{vm}`, `fr_{vm}`,
//! `gamma_v{type}`, `ep_i{instance}` and `tau_next`, where `{vm}` is
//! `k{id}` for a leased instance and `n{type}_{slot}` for a fresh one.

use std::collections::BTreeMap;

use milp_core::{solve, verify, Domain, LinearExpr, MilpProblem, MilpSolution, Relation, SolveParams, SolveStatus, VarId};

use crate::cloud::VmRuntime;
use crate::error::{CoreError, CoreResult};
use crate::landscape::{ms, secs, Catalog, Ms, ProcessInstance, Provider, StepState};
use crate::worstcase::{remaining_expr, step_deadlines, Horizon, Wc};

#[derive(Debug, Clone, PartialEq, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    /// Per placement that needs an image pull.
    pub omega_z: f64,
    /// Per second of remaining lease of the chosen VM.
    pub omega_d: f64,
    /// Per percent of unused CPU.
    pub omega_fc: f64,
    pub omega_fr: f64,
    /// Per second of slack before a step's latest start.
    pub omega_dl: f64,
    /// Multiplier on the penalty term during planning.
    pub penalty: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            omega_z: 1.0,
            omega_d: 0.0001,
            omega_fc: 0.01,
            omega_fr: 0.0,
            omega_dl: 0.001,
            penalty: 5000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub weights: Weights,
    /// Minimum distance to the next optimization period.
    pub epsilon: Ms,
    pub btu_max: u32,
    /// Big-M bounding placements per VM.
    pub mn: f64,
    pub fresh_candidates_per_type: u32,
    pub gap_tol: f64,
    pub time_limit_ms: Option<u64>,
    pub node_limit: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            weights: Weights::default(),
            epsilon: 5_000,
            btu_max: 1000,
            mn: 1e6,
            fresh_candidates_per_type: 3,
            gap_tol: 1e-6,
            time_limit_ms: None,
            node_limit: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> CoreResult<()> {
        let bad = |field: &str, reason: &str| {
            Err(CoreError::InvalidValue {
                field: field.into(),
                reason: reason.into(),
            })
        };
        let w = &self.weights;
        if [w.omega_z, w.omega_d, w.omega_fc, w.omega_fr, w.omega_dl, w.penalty].iter().any(|v| !(*v >= 0.0)) {
            return bad("weights", "must be non-negative");
        }
        if self.epsilon <= 0 {
            return bad("epsilon_ms", "must be positive");
        }
        if self.btu_max < 1 {
            return bad("solver.btu_max", "must be at least 1");
        }
        if !(self.mn >= 1.0) {
            return bad("solver.mn", "must be at least 1");
        }
        if self.fresh_candidates_per_type < 1 {
            return bad("solver.fresh_candidates", "must be at least 1");
        }
        if !(self.gap_tol >= 0.0) {
            return bad("solver.gap", "must be non-negative");
        }
        Ok(())
    }

    pub fn solve_params(&self) -> SolveParams {
        SolveParams {
            gap_tol: self.gap_tol,
            time_limit_ms: self.time_limit_ms,
            node_limit: self.node_limit,
            seed: 0,
        }
    }
}

/// Snapshot of one leased VM instance as seen by the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetVm {
    pub id: u32,
    pub vm_type: usize,
    /// d: remaining paid lease in seconds.
    pub remaining_lease: f64,
    /// Seconds until the VM finishes booting.
    pub boot_wait: f64,
    /// Cached images (z = 1) with seconds until each finishes pulling.
    pub images: Vec<(usize, f64)>,
    /// Deployed containers with seconds until each is ready.
    pub containers: Vec<(usize, f64)>,
    /// No invocation runs or waits on the VM.
    pub idle: bool,
}

impl FleetVm {
    pub fn from_runtime(vm: &VmRuntime, now: Ms) -> Self {
        let wait = |t: Ms| secs((t - now).max(0));
        Self {
            id: vm.id,
            vm_type: vm.vm_type,
            remaining_lease: secs(vm.remaining_lease(now)),
            boot_wait: wait(vm.ready_at),
            images: vm.images.iter().map(|(&s, &t)| (s, wait(t))).collect(),
            containers: vm.containers.iter().map(|(&s, c)| (s, wait(c.ready_at))).collect(),
            idle: vm.is_idle(),
        }
    }

    pub fn has_image(&self, service: usize) -> bool {
        self.images.iter().any(|&(s, _)| s == service)
    }

    /// Service type of the first deployed container.
    pub fn offered(&self) -> Option<usize> {
        self.containers.first().map(|&(s, _)| s)
    }

    /// Seconds from now until an invocation of `service` could start here.
    pub fn start_delay(&self, catalog: &Catalog, service: usize) -> f64 {
        if let Some(&(_, w)) = self.containers.iter().find(|&&(s, _)| s == service) {
            return w;
        }
        let svc = &catalog.services[service];
        let image = match self.images.iter().find(|&&(s, _)| s == service) {
            Some(&(_, w)) => w,
            None => self.boot_wait + svc.image_pull_time,
        };
        image + svc.container_start_time
    }
}

#[derive(Debug, Clone)]
pub struct SchedulingState<'a> {
    pub now: Ms,
    pub instances: Vec<&'a ProcessInstance>,
    pub fleet: Vec<FleetVm>,
    pub catalog: &'a Catalog,
}

impl<'a> SchedulingState<'a> {
    pub fn fleet_index(&self, id: u32) -> Option<usize> {
        self.fleet.iter().position(|v| v.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VmRef {
    Existing(u32),
    Fresh { vm_type: usize, slot: u32 },
}

impl VmRef {
    pub fn tag(&self) -> String {
        match self {
            VmRef::Existing(id) => format!("k{id}"),
            VmRef::Fresh { vm_type, slot } => format!("n{vm_type}_{slot}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub vm: VmRef,
    pub vm_type: usize,
    /// Position in the state's fleet for leased instances.
    pub fleet: Option<usize>,
    pub y: VarId,
    pub g: VarId,
    pub fc: VarId,
    pub fr: Option<VarId>,
}

impl Candidate {
    pub fn is_running(&self) -> bool {
        self.fleet.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XVar {
    /// Position in the state's instance list.
    pub inst: usize,
    pub step: usize,
    pub cand: usize,
    pub var: VarId,
    pub running: bool,
    /// Seconds from placement to expected completion on this candidate.
    pub overhead: f64,
}

/// An FFSIPP (or baseline) model with the bookkeeping needed to decode it.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub problem: MilpProblem,
    pub candidates: Vec<Candidate>,
    pub xvars: Vec<XVar>,
    pub gamma: Vec<(usize, VarId)>,
    /// e^p per instance, in state order.
    pub penalties: Vec<VarId>,
    /// e_i from the next period on, per instance.
    pub remaining: Vec<Wc>,
    /// The six objective terms; their sum is the objective.
    pub terms: [LinearExpr; 6],
    pub tau_next: VarId,
}

impl BuiltModel {
    pub fn x_of(&self, inst: usize, step: usize) -> impl Iterator<Item = &XVar> + '_ {
        self.xvars.iter().filter(move |x| x.inst == inst && x.step == step)
    }
}

/// Variant-specific parts of the placement model.
pub trait ModelRules {
    /// Seconds from placement until the step is expected to finish on `cand`.
    fn overhead(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64;
    /// Factor of ω_z for placing the step on `cand`.
    fn deploy_factor(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64;
    /// Adds variant-specific variables and rows.
    fn extend(&self, _state: &SchedulingState, _model: &mut BuiltModel) -> CoreResult<()> {
        Ok(())
    }
}

/// Placement rules of the container-aware model.
#[derive(Debug, Clone, Copy, Default)]
pub struct FfsippRules;

impl ModelRules for FfsippRules {
    fn overhead(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64 {
        match cand.fleet {
            Some(f) => step.expected_duration + state.fleet[f].start_delay(state.catalog, step.service),
            None => {
                let svc = &state.catalog.services[step.service];
                step.expected_duration + svc.container_start_time + svc.image_pull_time + state.catalog.vm_types[cand.vm_type].startup_time
            }
        }
    }

    fn deploy_factor(&self, state: &SchedulingState, step: &StepState, cand: &Candidate) -> f64 {
        match cand.fleet {
            Some(f) if state.fleet[f].has_image(step.service) => 0.0,
            _ => 1.0,
        }
    }
}

fn add_row(p: &mut MilpProblem, name: String, mut expr: LinearExpr, rel: Relation, rhs: f64) {
    let c = expr.constant;
    expr.constant = 0.0;
    p.add_constraint(name, expr, rel, rhs - c);
}

/// Replaces every maximum by an auxiliary variable bounded below by each
/// branch; minimizing e^p makes the auxiliaries tight where it matters.
fn linearize(p: &mut MilpProblem, wc: &Wc, tag: &str, aux: &mut usize) -> LinearExpr {
    match wc {
        Wc::Affine(e) => e.clone(),
        Wc::Sum(items) => {
            let mut out = LinearExpr::new();
            for w in items {
                let l = linearize(p, w, tag, aux);
                out.add_scaled(1.0, &l);
            }
            out
        }
        Wc::Max(items) => {
            let id = *aux;
            *aux += 1;
            let a = p.add_var(format!("w_{tag}_{id}"), Domain::Continuous, 0.0, f64::INFINITY);
            for (b, w) in items.iter().enumerate() {
                let l = linearize(p, w, tag, aux);
                let mut e = LinearExpr::term(1.0, a);
                e.add_scaled(-1.0, &l);
                add_row(p, format!("max_{tag}_{id}_{b}"), e, Relation::Ge, 0.0);
            }
            LinearExpr::term(1.0, a)
        }
    }
}

/// Builds the container-aware placement model.
pub fn build(state: &SchedulingState, config: &OptimizerConfig) -> CoreResult<BuiltModel> {
    build_with(state, config, &FfsippRules)
}

/// Builds the placement model with variant-specific `rules`.
pub fn build_with(state: &SchedulingState, config: &OptimizerConfig, rules: &dyn ModelRules) -> CoreResult<BuiltModel> {
    config.validate()?;
    let catalog = state.catalog;
    let tau = secs(state.now);
    let w = &config.weights;
    let btu_max = config.btu_max as f64;
    let mut p = MilpProblem::new();

    let schedulable: Vec<Vec<usize>> = state.instances.iter().map(|i| i.schedulable_steps()).collect();
    for (inst, steps) in state.instances.iter().zip(&schedulable) {
        for &s in steps {
            let st = &inst.steps[s];
            if !catalog.vm_types.iter().any(|t| t.fits(st.cpu_demand, st.ram_demand)) {
                return Err(CoreError::NoCandidate { instance: inst.id, step: s });
            }
        }
    }

    // Candidates: the fleet, then fresh instances per type.
    let mut candidates = Vec::new();
    let mut new_cand = |p: &mut MilpProblem, vm: VmRef, vm_type: usize, fleet: Option<usize>| {
        let tag = vm.tag();
        let running = fleet.is_some();
        let y = p.add_var(format!("y_{tag}"), Domain::Integer, 0.0, if running { btu_max - 1.0 } else { btu_max });
        let g = p.add_var(format!("g_{tag}"), Domain::Boolean, if running { 1.0 } else { 0.0 }, 1.0);
        let fc = p.add_var(format!("fc_{tag}"), Domain::Continuous, 0.0, f64::INFINITY);
        let fr = (w.omega_fr > 0.0).then(|| p.add_var(format!("fr_{tag}"), Domain::Continuous, 0.0, f64::INFINITY));
        candidates.push(Candidate { vm, vm_type, fleet, y, g, fc, fr });
    };
    for (f, vm) in state.fleet.iter().enumerate() {
        new_cand(&mut p, VmRef::Existing(vm.id), vm.vm_type, Some(f));
    }
    for (v, t) in catalog.vm_types.iter().enumerate() {
        let fitting = state
            .instances
            .iter()
            .zip(&schedulable)
            .flat_map(|(i, steps)| steps.iter().map(move |&s| &i.steps[s]))
            .filter(|st| t.fits(st.cpu_demand, st.ram_demand))
            .count() as u32;
        let mut n = config.fresh_candidates_per_type.min(fitting);
        if let (Provider::Private, Some(limit)) = (t.provider, t.pool_limit) {
            let used = state.fleet.iter().filter(|f| f.vm_type == v).count() as u32;
            n = n.min(limit.saturating_sub(used));
        }
        for slot in 0..n {
            new_cand(&mut p, VmRef::Fresh { vm_type: v, slot }, v, None);
        }
    }
    for k in 0..candidates.len() {
        let c = &candidates[k];
        if c.is_running() {
            continue;
        }
        let tag = c.vm.tag();
        let mut e = LinearExpr::term(1.0, c.g);
        e.add_term(-1.0, c.y);
        add_row(&mut p, format!("glo_{tag}"), e, Relation::Le, 0.0);
        let mut e = LinearExpr::term(1.0, c.y);
        e.add_term(-btu_max, c.g);
        add_row(&mut p, format!("ghi_{tag}"), e, Relation::Le, 0.0);
        if let VmRef::Fresh { vm_type, slot } = c.vm {
            if slot > 0 {
                let prev = candidates.iter().find(|o| o.vm == VmRef::Fresh { vm_type, slot: slot - 1 }).unwrap();
                let mut e = LinearExpr::term(1.0, c.g);
                e.add_term(-1.0, prev.g);
                add_row(&mut p, format!("sym_{tag}"), e, Relation::Le, 0.0);
            }
        }
    }

    // Placement variables.
    let mut xvars = Vec::new();
    for (ii, inst) in state.instances.iter().enumerate() {
        for &s in &schedulable[ii] {
            let st = &inst.steps[s];
            for (k, c) in candidates.iter().enumerate() {
                if !catalog.vm_types[c.vm_type].fits(st.cpu_demand, st.ram_demand) {
                    continue;
                }
                let var = p.bool_var(format!("x_i{}_s{}_{}", inst.id, s, c.vm.tag()));
                let overhead = rules.overhead(state, st, c);
                xvars.push(XVar {
                    inst: ii,
                    step: s,
                    cand: k,
                    var,
                    running: false,
                    overhead,
                });
            }
        }
        for s in inst.running_steps() {
            let st = &inst.steps[s];
            let vm = st.assigned_vm.ok_or(CoreError::Malformed(format!("running step {s} of instance {} has no VM", inst.id)))?;
            let f = state.fleet_index(vm).ok_or(CoreError::UnknownVm(vm))?;
            let var = p.add_var(format!("x_i{}_s{}_k{}", inst.id, s, vm), Domain::Boolean, 1.0, 1.0);
            xvars.push(XVar {
                inst: ii,
                step: s,
                cand: f,
                var,
                running: true,
                overhead: st.remaining_time,
            });
        }
    }

    // Per-candidate capacity, free capacity, usage and lease coverage.
    for (k, c) in candidates.iter().enumerate() {
        let t = &catalog.vm_types[c.vm_type];
        let tag = c.vm.tag();
        let placed: Vec<&XVar> = xvars.iter().filter(|x| x.cand == k).collect();
        let mut cpu = LinearExpr::new();
        let mut ram = LinearExpr::new();
        let mut count = LinearExpr::new();
        for x in &placed {
            let st = &state.instances[x.inst].steps[x.step];
            cpu.add_term(st.cpu_demand, x.var);
            ram.add_term(st.ram_demand, x.var);
            count.add_term(1.0, x.var);
        }
        if !placed.is_empty() {
            let mut e = cpu.clone();
            e.add_term(-t.cpu_supply, c.g);
            add_row(&mut p, format!("cpu_{tag}"), e, Relation::Le, 0.0);
            if !ram.is_constant() {
                let mut e = ram.clone();
                e.add_term(-t.ram_supply, c.g);
                add_row(&mut p, format!("ram_{tag}"), e, Relation::Le, 0.0);
            }
        }
        let mut e = LinearExpr::term(t.cpu_supply, c.g);
        e.add_scaled(-1.0, &cpu);
        e.add_term(-1.0, c.fc);
        add_row(&mut p, format!("freec_{tag}"), e, Relation::Le, 0.0);
        if let Some(fr) = c.fr {
            let mut e = LinearExpr::term(t.ram_supply, c.g);
            e.add_scaled(-1.0, &ram);
            e.add_term(-1.0, fr);
            add_row(&mut p, format!("freer_{tag}"), e, Relation::Le, 0.0);
        }
        if !c.is_running() && !placed.is_empty() {
            let mut e = count;
            e.add_term(-config.mn.min(placed.len() as f64), c.g);
            add_row(&mut p, format!("use_{tag}"), e, Relation::Le, 0.0);
        }
        let d = c.fleet.map_or(0.0, |f| state.fleet[f].remaining_lease);
        for x in &placed {
            let xname = p.var(x.var).name.clone();
            if x.running {
                if x.overhead > d {
                    let e = LinearExpr::term(-t.btu_length, c.y);
                    add_row(&mut p, format!("run_{xname}"), e, Relation::Le, d - x.overhead);
                }
            } else if (c.is_running() && x.overhead > d) || (!c.is_running() && x.overhead > t.btu_length) {
                let mut e = LinearExpr::term(x.overhead, x.var);
                e.add_term(-t.btu_length, c.y);
                add_row(&mut p, format!("lease_{xname}"), e, Relation::Le, d);
            }
        }
    }

    // BTU totals per type.
    let mut gamma = Vec::new();
    for v in 0..catalog.vm_types.len() {
        let ys: Vec<VarId> = candidates.iter().filter(|c| c.vm_type == v).map(|c| c.y).collect();
        if ys.is_empty() {
            continue;
        }
        let gv = p.add_var(format!("gamma_v{v}"), Domain::Integer, 0.0, btu_max * ys.len() as f64);
        let mut e = LinearExpr::new();
        for y in ys {
            e.add_term(1.0, y);
        }
        e.add_term(-1.0, gv);
        add_row(&mut p, format!("btus_v{v}"), e, Relation::Le, 0.0);
        gamma.push((v, gv));
    }

    // At most one placement per next step.
    for (ii, inst) in state.instances.iter().enumerate() {
        for &s in &schedulable[ii] {
            let mut e = LinearExpr::new();
            for x in xvars.iter().filter(|x| x.inst == ii && x.step == s) {
                e.add_term(1.0, x.var);
            }
            if e.terms().len() > 1 {
                add_row(&mut p, format!("once_i{}_s{s}", inst.id), e, Relation::Le, 1.0);
            }
        }
    }

    // Deadline coupling through worst-case remaining durations.
    let tau_next = p.add_var("tau_next", Domain::Continuous, tau + secs(config.epsilon), tau + secs(config.epsilon));
    let mut penalties = Vec::new();
    let mut remaining = Vec::new();
    let mut aux = 0usize;
    for (ii, inst) in state.instances.iter().enumerate() {
        let xs_of = |s: usize| xvars.iter().filter(move |x| x.inst == ii && x.step == s && !x.running);
        let mut now_term = |s: usize| {
            let wc = catalog.worst_case_step(inst.steps[s].service, inst.steps[s].expected_duration);
            let mut e = LinearExpr::constant(wc);
            for x in xs_of(s) {
                e.add_term(x.overhead - wc, x.var);
            }
            Wc::Affine(e)
        };
        let w_now = remaining_expr(inst, catalog, 0, Horizon::FromNow, &mut now_term);
        let mut next_term = |s: usize| {
            let wc = catalog.worst_case_step(inst.steps[s].service, inst.steps[s].expected_duration);
            let mut e = LinearExpr::constant(wc);
            for x in xs_of(s) {
                e.add_term(-wc, x.var);
            }
            Wc::Affine(e)
        };
        let w_next = remaining_expr(inst, catalog, 0, Horizon::NextRound, &mut next_term);
        let ep = p.add_var(format!("ep_i{}", inst.id), Domain::Continuous, 0.0, f64::INFINITY);
        let dl = secs(inst.deadline);
        let tag = format!("i{}", inst.id);
        let l = linearize(&mut p, &w_now, &tag, &mut aux);
        let mut e = LinearExpr::term(1.0, ep);
        e.add_scaled(-1.0, &l);
        add_row(&mut p, format!("due_{tag}"), e, Relation::Ge, tau - dl);
        let l = linearize(&mut p, &w_next, &tag, &mut aux);
        let mut e = LinearExpr::term(1.0, ep);
        e.add_scaled(-1.0, &l);
        e.add_term(-1.0, tau_next);
        add_row(&mut p, format!("period_{tag}"), e, Relation::Ge, -dl);
        penalties.push(ep);
        remaining.push(w_next);
    }

    // Objective terms.
    let mut terms: [LinearExpr; 6] = Default::default();
    for &(v, gv) in &gamma {
        terms[0].add_term(catalog.vm_types[v].cost_per_btu, gv);
    }
    for (ii, inst) in state.instances.iter().enumerate() {
        terms[1].add_term(w.penalty * inst.penalty_rate, penalties[ii]);
    }
    let deadlines: Vec<Vec<Option<Ms>>> = state.instances.iter().map(|i| step_deadlines(i, catalog)).collect();
    for x in xvars.iter().filter(|x| !x.running) {
        let st = &state.instances[x.inst].steps[x.step];
        let c = &candidates[x.cand];
        terms[2].add_term(w.omega_z * rules.deploy_factor(state, st, c), x.var);
        let d = c.fleet.map_or(0.0, |f| state.fleet[f].remaining_lease);
        terms[3].add_term(w.omega_d * d, x.var);
        let dl = deadlines[x.inst][x.step].map_or(0.0, |t| secs(t) - tau);
        terms[5].add_term(w.omega_dl * dl, x.var);
    }
    for c in &candidates {
        terms[4].add_term(w.omega_fc, c.fc);
        if let Some(fr) = c.fr {
            terms[4].add_term(w.omega_fr, fr);
        }
    }

    let mut model = BuiltModel {
        problem: p,
        candidates,
        xvars,
        gamma,
        penalties,
        remaining,
        terms,
        tau_next,
    };
    rules.extend(state, &mut model)?;
    let mut objective = LinearExpr::new();
    for t in &model.terms {
        objective.add_scaled(1.0, t);
    }
    model.problem.objective = objective;
    Ok(model)
}

/// A feasible point that postpones every next step and extends leases only
/// as far as running steps require.
pub fn postpone_all(state: &SchedulingState, model: &BuiltModel) -> CoreResult<Vec<f64>> {
    let mut p = model.problem.clone();
    for x in &model.xvars {
        let v = if x.running { 1.0 } else { 0.0 };
        p.set_bounds(x.var, v, v);
    }
    let mut totals: BTreeMap<usize, f64> = BTreeMap::new();
    for (k, c) in model.candidates.iter().enumerate() {
        let t = &state.catalog.vm_types[c.vm_type];
        let (g, y) = match c.fleet {
            Some(f) => {
                let d = state.fleet[f].remaining_lease;
                let need = model.xvars.iter().filter(|x| x.running && x.cand == k).map(|x| x.overhead).fold(d, f64::max);
                (1.0, ((need - d) / t.btu_length).ceil())
            }
            None => (0.0, 0.0),
        };
        p.set_bounds(c.g, g, g);
        p.set_bounds(c.y, y, y);
        *totals.entry(c.vm_type).or_default() += y;
    }
    for &(v, gv) in &model.gamma {
        let y = totals.get(&v).copied().unwrap_or(0.0);
        p.set_bounds(gv, y, y);
    }
    let sol = solve(&p, &SolveParams::default())?;
    if !sol.has_incumbent() {
        return Err(CoreError::NoIncumbent);
    }
    Ok(sol.values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub instance: u32,
    pub step: usize,
    pub service: usize,
    pub vm: VmRef,
    pub vm_type: usize,
    pub cpu: f64,
    pub ram: f64,
    /// Already running before this round.
    pub running: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulingPlan {
    pub now: Ms,
    /// Running and newly placed steps.
    pub assignments: Vec<Assignment>,
    /// BTUs to lease or extend per VM, only entries with y > 0.
    pub leases: Vec<(VmRef, u64)>,
    pub gamma: Vec<(usize, u64)>,
    /// e^p per instance id, seconds.
    pub penalties: Vec<(u32, f64)>,
    pub free_cpu: Vec<(VmRef, f64)>,
    pub free_ram: Vec<(VmRef, f64)>,
    /// Per instance id, the latest next optimization time from its deadline.
    pub wakeups: Vec<(u32, Ms)>,
    pub next_wakeup: Ms,
    pub terms: [f64; 6],
    pub objective: f64,
}

impl SchedulingPlan {
    pub fn new_assignments(&self) -> impl Iterator<Item = &Assignment> + '_ {
        self.assignments.iter().filter(|a| !a.running)
    }

    pub fn btus_for(&self, vm: VmRef) -> u64 {
        self.leases.iter().find(|(v, _)| *v == vm).map_or(0, |(_, b)| *b)
    }
}

fn round_integral(problem: &MilpProblem, values: &[f64]) -> CoreResult<Vec<f64>> {
    let mut out = values.to_vec();
    for (j, v) in problem.variables.iter().enumerate() {
        if v.domain.is_integral() {
            let r = out[j].round();
            if (out[j] - r).abs() > 1e-6 {
                return Err(CoreError::Unroundable {
                    var: v.name.clone(),
                    value: out[j],
                });
            }
            out[j] = r;
        }
    }
    Ok(out)
}

/// Maps a solution back to a plan and cross-checks the objective breakdown.
pub fn decode(state: &SchedulingState, model: &BuiltModel, solution: &MilpSolution, config: &OptimizerConfig) -> CoreResult<SchedulingPlan> {
    if solution.status == SolveStatus::Infeasible || !solution.has_incumbent() {
        return Err(CoreError::NoIncumbent);
    }
    let values = round_integral(&model.problem, &solution.values)?;
    let violations = verify(&model.problem, &values)?;
    if !violations.is_empty() {
        return Err(CoreError::InvalidPlan(format!("{:?}", violations[0])));
    }
    let mut terms = [0.0; 6];
    for (t, e) in terms.iter_mut().zip(&model.terms) {
        *t = e.eval(&values);
    }
    let total: f64 = terms.iter().sum();
    let objective = model.problem.objective.eval(&values);
    if (total - solution.objective_value).abs() > 1e-6 {
        return Err(CoreError::ObjectiveMismatch {
            terms: total,
            solver: solution.objective_value,
        });
    }
    let assignments = model
        .xvars
        .iter()
        .filter(|x| values[x.var.0] > 0.5)
        .map(|x| {
            let inst = state.instances[x.inst];
            let st = &inst.steps[x.step];
            let c = &model.candidates[x.cand];
            Assignment {
                instance: inst.id,
                step: x.step,
                service: st.service,
                vm: c.vm,
                vm_type: c.vm_type,
                cpu: st.cpu_demand,
                ram: st.ram_demand,
                running: x.running,
            }
        })
        .collect();
    let leases = model
        .candidates
        .iter()
        .filter_map(|c| {
            let y = values[c.y.0] as u64;
            (y > 0).then_some((c.vm, y))
        })
        .collect();
    let gamma = model.gamma.iter().map(|&(v, g)| (v, values[g.0] as u64)).collect();
    let penalties: Vec<(u32, f64)> = state.instances.iter().zip(&model.penalties).map(|(i, ep)| (i.id, values[ep.0])).collect();
    let free_cpu = model.candidates.iter().map(|c| (c.vm, values[c.fc.0])).collect();
    let free_ram = model.candidates.iter().filter_map(|c| c.fr.map(|fr| (c.vm, values[fr.0]))).collect();
    let wakeups: Vec<(u32, Ms)> = state
        .instances
        .iter()
        .enumerate()
        .map(|(ii, inst)| {
            let e = model.remaining[ii].eval(&values);
            (inst.id, inst.deadline + ms(penalties[ii].1 - e))
        })
        .collect();
    let next_wakeup = next_wakeup(state.now, wakeups.iter().map(|&(_, t)| t), config);
    Ok(SchedulingPlan {
        now: state.now,
        assignments,
        leases,
        gamma,
        penalties,
        free_cpu,
        free_ram,
        wakeups,
        next_wakeup,
        terms,
        objective,
    })
}

/// `max(τ_t + ε, min_i (DL_i + e^p_i − e_i))`, with τ_t + ε for no instances.
pub fn next_wakeup(now: Ms, candidates: impl IntoIterator<Item = Ms>, config: &OptimizerConfig) -> Ms {
    let floor = now + config.epsilon;
    candidates.into_iter().min().map_or(floor, |t| t.max(floor))
}
