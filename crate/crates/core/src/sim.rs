//! Deterministic discrete-event simulation of one scenario run.
//!
//! Every optimization round snapshots the landscape, builds and solves the
//! approach's model, transforms the plan into containers and applies the
//! resulting actions with boot, pull and container-start latencies. Step
//! durations are drawn at invocation, CPU demands when a step becomes next.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::path::PathBuf;

use milp_core::{export_lp, solve_with_incumbent, MilpSolution, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::cloud::{CloudState, StepKey};
use crate::controller::{apply_actions, plan_actions, transform, Action, ContainerPlan, ContainerPolicy};
use crate::error::{CoreError, CoreResult};
use crate::ffsipp::{decode, next_wakeup, postpone_all, FleetVm, SchedulingState, VmRef};
use crate::landscape::{ms, secs, Catalog, Ms, NodeKind, ProcessInstance, ServiceType, StepStatus};
use crate::scenario::{PenaltyPolicy, Scenario};
use crate::strategy::PlacementStrategy;
use crate::worstcase::worst_case_from_now;

/// Normal draw with σ = μ/10, redrawn while below μ/10.
pub fn sample_truncated<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> f64 {
    let normal = Normal::new(mu, mu / 10.0).expect("finite mean");
    loop {
        let v = normal.sample(rng);
        if v >= mu / 10.0 {
            return v;
        }
    }
}

pub fn sample_duration<R: Rng + ?Sized>(service: &ServiceType, rng: &mut R) -> f64 {
    sample_truncated(service.duration, rng)
}

pub fn sample_cpu<R: Rng + ?Sized>(service: &ServiceType, rng: &mut R) -> f64 {
    sample_truncated(service.cpu_demand, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Draw {
    Duration,
    Cpu,
    Choices,
}

/// Independent stream per draw site, so results do not depend on event order.
fn draw_rng(seed: u64, draw: Draw, instance: u32, step: usize, execution: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stream = (((draw as u64) << 56) | ((instance as u64) << 32) | ((step as u64) << 16)) ^ execution as u64;
    rng.set_stream(stream);
    rng
}

/// Penalty units for finishing at `finish`.
pub fn penalty_units(instance: &ProcessInstance, finish: Ms, policy: PenaltyPolicy) -> f64 {
    let late = (finish - instance.deadline).max(0);
    if late == 0 {
        return 0.0;
    }
    let unit = match policy {
        PenaltyPolicy::RelativeWindow => (instance.deadline - instance.arrival_time) as f64 / 10.0,
        PenaltyPolicy::PerTenSeconds => 10_000.0,
    };
    (late as f64 / unit).ceil()
}

/// Instances not in `flagged` whose worst-case completion from `now` lies
/// strictly after their deadline.
pub fn foresee_violations<'a>(instances: impl IntoIterator<Item = &'a ProcessInstance>, catalog: &Catalog, now: Ms, flagged: &BTreeSet<u32>) -> BTreeSet<u32> {
    instances
        .into_iter()
        .filter(|i| !flagged.contains(&i.id) && !i.is_finished())
        .filter(|i| now + ms(worst_case_from_now(i, catalog)) > i.deadline)
        .map(|i| i.id)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    StepFinished { instance: u32, step: usize },
    VmReady { vm: u32 },
    ImagePulled { vm: u32, service: usize },
    ContainerStarted { vm: u32, service: usize },
    LeaseExpiry { vm: u32, lease_end: Ms },
    Arrival { request: usize },
    Wakeup { generation: u64 },
}

impl EventKind {
    /// Tie order among events at one timestamp.
    fn rank(&self) -> u8 {
        match self {
            EventKind::StepFinished { .. } => 0,
            EventKind::VmReady { .. } => 1,
            EventKind::ImagePulled { .. } => 2,
            EventKind::ContainerStarted { .. } => 3,
            EventKind::LeaseExpiry { .. } => 4,
            EventKind::Arrival { .. } => 5,
            EventKind::Wakeup { .. } => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: Ms,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.kind.rank(), other.seq).cmp(&(self.time, self.kind.rank(), self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: u32,
    /// 1-based model number.
    pub model: u32,
    pub arrival: Ms,
    pub deadline: Ms,
    pub finish: Ms,
    pub delay_s: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoreUsage {
    pub minute: u64,
    pub leased_cores: f64,
    pub parallel_requests: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub sla_adherence_pct: f64,
    pub total_makespan_min: f64,
    pub leasing_cost: f64,
    pub penalty_cost: f64,
    pub total_cost: f64,
    pub instances: Vec<InstanceRecord>,
    pub core_usage: Vec<CoreUsage>,
    pub rounds: usize,
    /// Rounds whose decoded plan passed the model check.
    pub plans_verified: usize,
    /// Rounds that fell back to postponing every next step.
    pub fallbacks: usize,
    /// Rounds where the search stopped before proving optimality.
    pub truncated_rounds: usize,
    pub invocations: usize,
    pub btus_billed: u64,
    /// Σ over rounds of the planned leasing cost (Term 1).
    pub planned_leasing_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Collect the action audit log.
    pub audit: bool,
    /// Write every round's model as an LP file into this directory.
    pub dump_lp: Option<PathBuf>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub audit: Vec<String>,
}

struct Running {
    vm: u32,
    start: Ms,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    strategy: &'a dyn PlacementStrategy,
    seed: u64,
    options: &'a RunOptions,
    clock: Ms,
    queue: BinaryHeap<Event>,
    seq: u64,
    cloud: CloudState,
    instances: BTreeMap<u32, ProcessInstance>,
    models: BTreeMap<u32, u32>,
    running: BTreeMap<StepKey, Running>,
    flagged: BTreeSet<u32>,
    wake_generation: u64,
    pending_arrivals: usize,
    report: MetricsReport,
    audit: Vec<String>,
    first_arrival: Option<Ms>,
    last_finish: Ms,
    next_minute: u64,
}

/// Runs `scenario` under `strategy` with `seed`.
pub fn run(scenario: &Scenario, strategy: &dyn PlacementStrategy, seed: u64, options: &RunOptions) -> CoreResult<RunOutput> {
    let requests = scenario.requests(seed);
    let mut sim = Sim {
        scenario,
        strategy,
        seed,
        options,
        clock: 0,
        queue: BinaryHeap::new(),
        seq: 0,
        cloud: CloudState::new(),
        instances: BTreeMap::new(),
        models: BTreeMap::new(),
        running: BTreeMap::new(),
        flagged: BTreeSet::new(),
        wake_generation: 0,
        pending_arrivals: requests.len(),
        report: MetricsReport::default(),
        audit: Vec::new(),
        first_arrival: None,
        last_finish: 0,
        next_minute: 0,
    };
    for (i, r) in requests.iter().enumerate() {
        sim.push(r.time, EventKind::Arrival { request: i });
    }
    sim.run_loop(&requests)?;
    Ok(RunOutput {
        report: sim.finish(),
        audit: sim.audit,
    })
}

impl Sim<'_> {
    fn push(&mut self, time: Ms, kind: EventKind) {
        self.seq += 1;
        self.queue.push(Event { time, seq: self.seq, kind });
    }

    fn log(&mut self, line: impl FnOnce() -> String) {
        if self.options.audit {
            let l = line();
            self.audit.push(format!("{}\t{l}", self.clock));
        }
    }

    fn catalog(&self) -> &Catalog {
        &self.scenario.catalog
    }

    fn done(&self) -> bool {
        self.pending_arrivals == 0 && self.instances.values().all(|i| i.is_finished())
    }

    fn sample_usage_until(&mut self, t: Ms) {
        while (self.next_minute as Ms) * 60_000 < t {
            let sample = CoreUsage {
                minute: self.next_minute,
                leased_cores: self.cloud.leased_cores(&self.scenario.catalog),
                parallel_requests: self.instances.values().filter(|i| !i.is_finished()).count(),
            };
            self.report.core_usage.push(sample);
            self.next_minute += 1;
        }
    }

    fn run_loop(&mut self, requests: &[crate::scenario::Request]) -> CoreResult<()> {
        while let Some(first) = self.queue.pop() {
            if self.done() {
                self.clock = self.clock.max(first.time);
                self.release_expired();
                continue;
            }
            self.sample_usage_until(first.time);
            self.clock = first.time;
            let mut batch = vec![first];
            while self.queue.peek().is_some_and(|e| e.time == self.clock) {
                batch.push(self.queue.pop().unwrap());
            }
            let mut trigger = false;
            for ev in batch {
                trigger |= self.handle(ev.kind, requests)?;
            }
            self.release_expired();
            if !self.done() {
                self.snapshot_remaining();
                let foreseen = foresee_violations(self.instances.values(), self.catalog(), self.clock, &self.flagged);
                if !foreseen.is_empty() {
                    self.log(|| format!("foreseen\t{foreseen:?}"));
                    trigger = true;
                }
                if trigger {
                    self.round()?;
                }
            }
            self.check_invariants()?;
        }
        let end = self.last_finish.max(self.clock);
        self.sample_usage_until(end + 1);
        Ok(())
    }

    fn handle(&mut self, kind: EventKind, requests: &[crate::scenario::Request]) -> CoreResult<bool> {
        match kind {
            EventKind::Arrival { request } => {
                self.pending_arrivals -= 1;
                self.arrive(request, requests[request]);
                Ok(true)
            }
            EventKind::StepFinished { instance, step } => {
                self.finish_step(instance, step)?;
                Ok(true)
            }
            EventKind::Wakeup { generation } => Ok(generation == self.wake_generation),
            EventKind::LeaseExpiry { vm, lease_end } => match self.cloud.vms.get(&vm) {
                Some(v) if v.lease_end == lease_end => {
                    if v.is_idle() {
                        Ok(false)
                    } else {
                        self.log(|| format!("lease_expiry_busy\tk{vm}"));
                        Ok(true)
                    }
                }
                _ => Ok(false),
            },
            EventKind::VmReady { vm } => {
                self.log(|| format!("vm_ready\tk{vm}"));
                Ok(false)
            }
            EventKind::ImagePulled { vm, service } => {
                self.log(|| format!("image_pulled\tk{vm}\tst={service}"));
                Ok(false)
            }
            EventKind::ContainerStarted { vm, service } => {
                self.log(|| format!("container_started\tk{vm}\tst={service}"));
                Ok(false)
            }
        }
    }

    fn arrive(&mut self, index: usize, request: crate::scenario::Request) {
        let id = index as u32 + 1;
        let model = &self.scenario.models[request.model];
        let window = self.scenario.window(request.model);
        let deadline = request.time + ms(window);
        let rate = self.scenario.penalty_rate(window);
        let mut inst = ProcessInstance::new(id, model.clone(), self.catalog(), request.time, deadline, rate);
        let mut rng = draw_rng(self.seed, Draw::Choices, id, 0, 0);
        let mut xor = vec![0; model.nodes.len()];
        let mut loops: Vec<u32> = model.nodes.iter().map(|n| n.max_repetitions).collect();
        for (n, node) in model.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Xor => xor[n] = rng.random_range(0..node.children.len()),
                NodeKind::Loop => loops[n] = rng.random_range(1..=node.max_repetitions.max(1)),
                _ => {}
            }
        }
        inst.set_choices(xor, loops);
        let next: Vec<usize> = inst.schedulable_steps();
        self.sample_demands(&mut inst, &next);
        self.first_arrival.get_or_insert(request.time);
        self.log(|| format!("arrival\ti={id} model={} deadline={deadline}", request.model + 1));
        self.models.insert(id, request.model as u32 + 1);
        self.instances.insert(id, inst);
    }

    fn sample_demands(&self, inst: &mut ProcessInstance, steps: &[usize]) {
        for &s in steps {
            let st = &mut inst.steps[s];
            let mut rng = draw_rng(self.seed, Draw::Cpu, inst.id, s, st.executions);
            st.cpu_demand = sample_cpu(&self.scenario.catalog.services[st.service], &mut rng);
        }
    }

    fn finish_step(&mut self, instance: u32, step: usize) -> CoreResult<()> {
        let run = self.running.remove(&(instance, step)).ok_or_else(|| CoreError::InvalidPlan(format!("step {instance}/{step} finished but was not running")))?;
        let mut inst = self.instances.remove(&instance).ok_or_else(|| CoreError::InvalidPlan(format!("unknown instance {instance}")))?;
        if inst.steps[step].assigned_vm != Some(run.vm) {
            return Err(CoreError::InvalidPlan(format!("step {instance}/{step} moved off k{} while running", run.vm)));
        }
        let service = inst.steps[step].service;
        let vm = self.cloud.vm_mut(run.vm)?;
        if let Some(c) = vm.containers.get_mut(&service) {
            c.invocations.remove(&(instance, step));
        }
        let promoted = inst.complete_step(step);
        self.sample_demands(&mut inst, &promoted);
        self.log(|| format!("step_finished\ti={instance} s={step} k{}", run.vm));
        self.last_finish = self.last_finish.max(self.clock);
        if inst.is_finished() {
            let penalty = penalty_units(&inst, self.clock, self.scenario.penalty_policy);
            self.report.instances.push(InstanceRecord {
                id: inst.id,
                model: self.models[&inst.id],
                arrival: inst.arrival_time,
                deadline: inst.deadline,
                finish: self.clock,
                delay_s: secs((self.clock - inst.deadline).max(0)),
                penalty,
            });
            self.flagged.remove(&inst.id);
        }
        self.instances.insert(instance, inst);
        Ok(())
    }

    fn release_expired(&mut self) {
        let expired: Vec<u32> = self.cloud.vms.values().filter(|v| v.lease_end <= self.clock && v.is_idle()).map(|v| v.id).collect();
        for id in expired {
            self.cloud.terminate(id);
            self.log(|| format!("terminate_vm\tk{id}"));
        }
    }

    fn check_invariants(&self) -> CoreResult<()> {
        self.cloud.check_capacity(self.catalog()).map_err(CoreError::InvalidPlan)?;
        if let Some(v) = self.cloud.vms.values().find(|v| v.lease_end <= self.clock && !v.is_idle()) {
            return Err(CoreError::InvalidPlan(format!("lease of k{} ended with invocations in flight", v.id)));
        }
        Ok(())
    }

    fn snapshot_remaining(&mut self) {
        for (&(i, s), run) in &self.running {
            let inst = self.instances.get_mut(&i).expect("running step of a known instance");
            let st = &mut inst.steps[s];
            let expected_end = run.start + ms(st.expected_duration);
            st.remaining_time = secs(expected_end - self.clock).max(1.0);
        }
    }

    fn round(&mut self) -> CoreResult<()> {
        self.snapshot_remaining();
        self.report.rounds += 1;
        let round = self.report.rounds;
        let scenario = self.scenario;
        let config = &scenario.optimizer;
        let catalog = &scenario.catalog;
        let active: Vec<&ProcessInstance> = self.instances.values().filter(|i| !i.is_finished()).collect();
        let state = SchedulingState {
            now: self.clock,
            instances: active,
            fleet: self.cloud.vms.values().map(|v| FleetVm::from_runtime(v, self.clock)).collect(),
            catalog,
        };
        let model = self.strategy.build(&state, config)?;
        if let Some(dir) = &self.options.dump_lp {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("round_{round:05}.lp")), export_lp(&model.problem))?;
        }
        let hint = postpone_all(&state, &model)?;
        let solution = match solve_with_incumbent(&model.problem, &config.solve_params(), Some(&hint)) {
            Ok(s) if s.has_incumbent() => s,
            _ => {
                self.report.fallbacks += 1;
                if self.options.audit {
                    self.audit.push(format!("{}\tfallback\t{round}\tpostponing all next steps", self.clock));
                }
                MilpSolution {
                    status: SolveStatus::TimeLimit,
                    objective_value: model.problem.objective.eval(&hint),
                    values: hint,
                    bound: f64::NEG_INFINITY,
                    root_bound: f64::NEG_INFINITY,
                    nodes: 0,
                }
            }
        };
        if solution.status != SolveStatus::Optimal {
            self.report.truncated_rounds += 1;
        }
        let plan = decode(&state, &model, &solution, config)?;
        self.report.plans_verified += 1;
        let placed: BTreeSet<StepKey> = plan.assignments.iter().map(|a| (a.instance, a.step)).collect();
        let postponed: Vec<Ms> = plan
            .wakeups
            .iter()
            .filter(|(id, _)| state.instances.iter().any(|i| i.id == *id && i.schedulable_steps().iter().any(|&s| !placed.contains(&(*id, s)))))
            .map(|&(_, t)| t)
            .collect();
        let wake = (!postponed.is_empty()).then(|| next_wakeup(self.clock, postponed, config));
        let planned_cost: f64 = plan.gamma.iter().map(|&(v, g)| catalog.vm_types[v].cost_per_btu * g as f64).sum();
        drop(state);

        self.report.planned_leasing_cost += planned_cost;
        let container_plan = transform(&plan);
        check_container_plan(&container_plan, catalog)?;
        let policy = ContainerPolicy {
            retain_idle: self.strategy.retains_idle_containers(),
            drop_images: self.strategy.drops_images_on_stop(),
        };
        let actions = plan_actions(&container_plan, &self.cloud, catalog, policy)?;
        let before: BTreeMap<u32, (Ms, BTreeSet<usize>)> = self.cloud.vms.iter().map(|(&id, v)| (id, (v.lease_end, v.images.keys().copied().collect()))).collect();
        let (ids, started) = apply_actions(&mut self.cloud, catalog, &actions, self.clock)?;
        self.log(|| {
            let mut s = format!("round\t{round}\tstatus={:?} nodes={} objective={:.6}", solution.status, solution.nodes, plan.objective);
            for a in &actions {
                let _ = write!(s, "\n{}\t{a}", plan.now);
            }
            s
        });
        self.schedule_cloud_events(&actions, &ids, &before);
        for inv in started {
            let (i, s) = inv.key;
            let inst = self.instances.get_mut(&i).expect("invoked step of a known instance");
            let st = &mut inst.steps[s];
            st.status = StepStatus::Running;
            st.assigned_vm = Some(inv.vm);
            st.scheduled_at = Some(self.clock);
            st.remaining_time = secs(inv.start - self.clock) + st.expected_duration;
            let mut rng = draw_rng(self.seed, Draw::Duration, i, s, st.executions);
            let duration = sample_duration(&self.scenario.catalog.services[inv.service], &mut rng);
            let end = inv.start + ms(duration).max(1);
            self.running.insert(inv.key, Running { vm: inv.vm, start: inv.start });
            self.report.invocations += 1;
            self.push(end, EventKind::StepFinished { instance: i, step: s });
        }
        self.flagged = foresee_violations(self.instances.values(), catalog, self.clock, &BTreeSet::new());
        self.wake_generation += 1;
        if let Some(t) = wake {
            let generation = self.wake_generation;
            self.push(t, EventKind::Wakeup { generation });
        }
        Ok(())
    }

    fn schedule_cloud_events(&mut self, actions: &[Action], ids: &BTreeMap<VmRef, u32>, before: &BTreeMap<u32, (Ms, BTreeSet<usize>)>) {
        let mut events = Vec::new();
        for v in self.cloud.vms.values() {
            let old = before.get(&v.id);
            if old.is_none() {
                events.push((v.ready_at, EventKind::VmReady { vm: v.id }));
            }
            if old.is_none_or(|o| o.0 != v.lease_end) {
                events.push((v.lease_end, EventKind::LeaseExpiry { vm: v.id, lease_end: v.lease_end }));
            }
            for (&s, &t) in &v.images {
                if old.is_none_or(|o| !o.1.contains(&s)) {
                    events.push((t, EventKind::ImagePulled { vm: v.id, service: s }));
                }
            }
        }
        for a in actions {
            if let Action::DeployContainer { vm, service, .. } = *a {
                let id = match vm {
                    VmRef::Existing(id) => Some(id),
                    fresh => ids.get(&fresh).copied(),
                };
                if let Some(c) = id.and_then(|id| self.cloud.vms.get(&id)).and_then(|v| v.containers.get(&service)) {
                    events.push((c.ready_at, EventKind::ContainerStarted { vm: id.unwrap(), service }));
                }
            }
        }
        events.sort();
        events.dedup();
        for (t, k) in events {
            self.push(t, k);
        }
    }

    fn finish(&mut self) -> MetricsReport {
        let mut r = std::mem::take(&mut self.report);
        r.instances.sort_by_key(|i| i.id);
        let n = r.instances.len();
        let met = r.instances.iter().filter(|i| i.finish <= i.deadline).count();
        r.sla_adherence_pct = if n == 0 { 100.0 } else { 100.0 * met as f64 / n as f64 };
        r.total_makespan_min = self.first_arrival.map_or(0.0, |a| secs(self.last_finish - a) / 60.0);
        r.leasing_cost = self.cloud.leasing_cost;
        r.btus_billed = self.cloud.btus_billed;
        r.penalty_cost = r.instances.iter().map(|i| i.penalty).sum();
        r.total_cost = r.leasing_cost + r.penalty_cost;
        r
    }
}

/// One container per (service, VM) and summed sizes within each VM's supply.
pub fn check_container_plan(plan: &ContainerPlan, catalog: &Catalog) -> CoreResult<()> {
    let mut seen = BTreeSet::new();
    let mut load: BTreeMap<_, (f64, f64, usize)> = BTreeMap::new();
    for c in &plan.containers {
        if !seen.insert((c.host, c.service)) {
            return Err(CoreError::InvalidPlan(format!("two containers of st{} on {}", c.service, c.host.tag())));
        }
        let l = load.entry(c.host).or_insert((0.0, 0.0, c.vm_type));
        l.0 += c.cpu;
        l.1 += c.ram;
    }
    for (host, (cpu, ram, t)) in load {
        let vt = &catalog.vm_types[t];
        if cpu > vt.cpu_supply + 1e-6 || ram > vt.ram_supply + 1e-6 {
            return Err(CoreError::InvalidPlan(format!("containers on {} exceed its supply", host.tag())));
        }
    }
    Ok(())
}
