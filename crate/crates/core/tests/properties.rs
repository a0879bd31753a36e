use std::collections::BTreeMap;
use std::path::Path;

use ffsipp_core::baseline::build_baseline;
use ffsipp_core::cloud::CloudState;
use ffsipp_core::controller::{apply_actions, plan_actions, transform, ContainerPolicy};
use ffsipp_core::ffsipp::{build, decode, BuiltModel, FleetVm, OptimizerConfig, SchedulingPlan, SchedulingState, VmRef};
use ffsipp_core::landscape::{average_makespan, enumerate_paths, ms, NodeKind, ProcessInstance, StepStatus};
use ffsipp_core::scenario::Scenario;
use ffsipp_core::worstcase::{invocation_overhead, remaining_duration, step_deadline, StartupBasis};
use milp_core::verify::slacks;
use milp_core::{solve, MilpSolution, SolveStatus};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOW: i64 = 600_000;

fn scenario() -> Scenario {
    Scenario::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("presets/constant_strict_intensive.toml")).unwrap()
}

/// A random instance of `model`, with XOR/loop choices drawn and a few
/// steps completed.
fn random_instance(s: &Scenario, rng: &mut ChaCha8Rng, id: u32, model: usize) -> ProcessInstance {
    let window = s.window(model) * if rng.random_bool(0.5) { 1.0 } else { 2.5 / 1.5 };
    let arrival = NOW - ms(rng.random_range(0.0..window));
    let m = s.models[model].clone();
    let mut inst = ProcessInstance::new(id, m.clone(), &s.catalog, arrival, arrival + ms(window), s.penalty_rate(window));
    let xor = m.nodes.iter().map(|n| if n.kind == NodeKind::Xor { rng.random_range(0..n.children.len()) } else { 0 }).collect();
    let loops = m.nodes.iter().map(|n| if n.kind == NodeKind::Loop { rng.random_range(1..=n.max_repetitions) } else { n.max_repetitions }).collect();
    inst.set_choices(xor, loops);
    for _ in 0..rng.random_range(0..4) {
        if let Some(&st) = inst.schedulable_steps().first() {
            if inst.schedulable_steps().len() > 1 || rng.random_bool(0.5) {
                inst.complete_step(st);
            }
        }
    }
    inst
}

struct Snapshot {
    scenario: Scenario,
    cloud: CloudState,
    instances: Vec<ProcessInstance>,
}

impl Snapshot {
    fn new(seed: u64, max_instances: u32) -> Self {
        let scenario = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let small: Vec<usize> = (0..scenario.models.len()).filter(|&m| scenario.models[m].num_steps() <= 8).collect();
        let mut instances: Vec<ProcessInstance> = (1..=rng.random_range(1..=max_instances))
            .map(|id| {
                let m = small[rng.random_range(0..small.len())];
                random_instance(&scenario, &mut rng, id, m)
            })
            .collect();
        let catalog = &scenario.catalog;
        let mut cloud = CloudState::new();
        for _ in 0..rng.random_range(0..=2) {
            let t = rng.random_range(0..catalog.vm_types.len());
            let id = cloud.lease(catalog, t, rng.random_range(3..=4), 0);
            let svc = rng.random_range(0..catalog.services.len());
            let cpu = catalog.services[svc].cpu_demand;
            if cpu <= catalog.vm_types[t].cpu_supply {
                cloud.deploy(catalog, id, svc, cpu, 0.0, 0).unwrap();
            }
        }
        // Pin one next step to the first VM as a running invocation.
        if let Some((&id, vm)) = cloud.vms.iter_mut().next() {
            let inst = &mut instances[0];
            if let Some(&s) = inst.schedulable_steps().first() {
                let st = &mut inst.steps[s];
                let supply = catalog.vm_types[vm.vm_type].cpu_supply;
                if st.cpu_demand <= supply {
                    vm.containers.clear();
                    vm.images.insert(st.service, 0);
                    vm.containers.insert(
                        st.service,
                        ffsipp_core::cloud::Container {
                            service: st.service,
                            cpu: st.cpu_demand,
                            ram: 0.0,
                            ready_at: 0,
                            invocations: [(inst.id, s)].into(),
                        },
                    );
                    st.status = StepStatus::Running;
                    st.assigned_vm = Some(id);
                    st.scheduled_at = Some(NOW - 5_000);
                    st.remaining_time = (st.expected_duration - 5.0).max(1.0);
                }
            }
        }
        Self { scenario, cloud, instances }
    }

    fn state(&self) -> SchedulingState<'_> {
        SchedulingState {
            now: NOW,
            instances: self.instances.iter().collect(),
            fleet: self.cloud.vms.values().map(|v| FleetVm::from_runtime(v, NOW)).collect(),
            catalog: &self.scenario.catalog,
        }
    }
}

fn exact(config: &OptimizerConfig) -> OptimizerConfig {
    OptimizerConfig {
        gap_tol: 0.0,
        node_limit: None,
        time_limit_ms: None,
        ..config.clone()
    }
}

fn solve_model(model: &BuiltModel, config: &OptimizerConfig) -> MilpSolution {
    let s = solve(&model.problem, &config.solve_params()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    s
}

fn plan_of(snap: &Snapshot, baseline: bool) -> (BuiltModel, MilpSolution, SchedulingPlan) {
    let state = snap.state();
    let config = exact(&snap.scenario.optimizer);
    let model = if baseline { build_baseline(&state, &config) } else { build(&state, &config) }.unwrap();
    let sol = solve_model(&model, &config);
    let plan = decode(&state, &model, &sol, &config).unwrap();
    (model, sol, plan)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, ..ProptestConfig::default() })]

    #[test]
    fn paths_partition_steps(model in 0usize..10) {
        let s = scenario();
        let m = &s.models[model];
        prop_assert_eq!(enumerate_paths(m).total_steps(), m.num_steps());
    }

    #[test]
    fn next_steps_exclude_running_and_done(seed in any::<u64>(), model in 0usize..10) {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inst = random_instance(&s, &mut rng, 1, model);
        for _ in 0..64 {
            for st in inst.next_steps() {
                prop_assert!(matches!(inst.steps[st].status, StepStatus::Next | StepStatus::Pending));
            }
            let next = inst.schedulable_steps();
            if next.is_empty() {
                break;
            }
            let pick = next[rng.random_range(0..next.len())];
            if rng.random_bool(0.3) {
                inst.steps[pick].status = StepStatus::Running;
                prop_assert!(!inst.next_steps().contains(&pick));
            }
            inst.complete_step(pick);
        }
        prop_assert!(inst.is_finished());
    }

    #[test]
    fn makespan_and_deadline_are_monotone(model in 0usize..10, service in 0usize..10, extra in 1.0f64..200.0) {
        let s = scenario();
        let mut slower = s.catalog.clone();
        slower.services[service].duration += extra;
        let m = &s.models[model];
        prop_assert!(average_makespan(m, &slower) >= average_makespan(m, &s.catalog));
        let a = ProcessInstance::new(1, m.clone(), &s.catalog, 0, 10_000_000, 1.0);
        let b = ProcessInstance::new(1, m.clone(), &slower, 0, 10_000_000, 1.0);
        for st in a.schedulable_steps() {
            prop_assert!(step_deadline(&b, &slower, st) <= step_deadline(&a, &s.catalog, st));
        }
    }

    #[test]
    fn scheduling_never_increases_the_remainder(seed in any::<u64>(), model in 0usize..10) {
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&s, &mut rng, 1, model);
        let empty = remaining_duration(&inst, &s.catalog, &[]);
        prop_assert_eq!(empty.e_i, empty.e_seq + empty.e_la + empty.e_lx + empty.e_rl);
        let scheduled: Vec<(usize, f64)> = empty.step_coefficients.iter().filter(|_| rng.random_bool(0.6)).copied().collect();
        let with = remaining_duration(&inst, &s.catalog, &scheduled);
        prop_assert!(with.e_i <= empty.e_i + 1e-9);
        prop_assert_eq!(with.e_i, with.e_seq + with.e_la + with.e_lx + with.e_rl);
    }

    #[test]
    fn worst_case_overhead_dominates(service in 0usize..10, cached in any::<bool>(), booted in any::<bool>(), startup in 0.0f64..60.0) {
        let s = scenario();
        let svc = &s.catalog.services[service];
        let worst = invocation_overhead(svc, svc.duration, cached, booted, StartupBasis::WorstCase(s.catalog.max_startup()));
        let concrete = invocation_overhead(svc, svc.duration, cached, booted, StartupBasis::Concrete(startup));
        prop_assert!(worst >= concrete);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn optimal_plans_are_tight(seed in any::<u64>()) {
        let snap = Snapshot::new(seed, 2);
        let state = snap.state();
        let (model, sol, plan) = plan_of(&snap, false);
        let v = &sol.values;
        let slack = slacks(&model.problem, v);
        let row = |name: &str| model.problem.constraints.iter().position(|c| c.name == name);
        for (inst, &ep) in state.instances.iter().zip(&model.penalties) {
            if v[ep.0] > 1e-6 {
                let binding = [format!("due_i{}", inst.id), format!("period_i{}", inst.id)]
                    .iter()
                    .filter_map(|n| row(n))
                    .any(|r| slack[r].abs() < 1e-6);
                prop_assert!(binding, "e^p of {} is not tight", inst.id);
            }
        }
        let catalog = &snap.scenario.catalog;
        for &(t, gv) in &model.gamma {
            if catalog.vm_types[t].cost_per_btu > 0.0 {
                let ys: f64 = model.candidates.iter().filter(|c| c.vm_type == t).map(|c| v[c.y.0]).sum();
                prop_assert!((v[gv.0] - ys).abs() < 1e-6);
            }
        }
        if snap.scenario.optimizer.weights.omega_fc > 0.0 {
            for (k, c) in model.candidates.iter().enumerate() {
                let used: f64 = model.xvars.iter().filter(|x| x.cand == k).map(|x| state.instances[x.inst].steps[x.step].cpu_demand * v[x.var.0]).sum();
                let expect = v[c.g.0] * catalog.vm_types[c.vm_type].cpu_supply - used;
                prop_assert!((v[c.fc.0] - expect).abs() < 1e-6, "free cpu of {}", c.vm.tag());
            }
        }
        for inst in &state.instances {
            for s in inst.running_steps() {
                let vm = inst.steps[s].assigned_vm.unwrap();
                let a = plan.assignments.iter().find(|a| a.instance == inst.id && a.step == s).unwrap();
                prop_assert_eq!(a.vm, VmRef::Existing(vm));
                prop_assert!(a.running);
            }
        }
    }

    #[test]
    fn argmin_is_scale_invariant(seed in any::<u64>(), factor in 0.5f64..4.0) {
        let snap = Snapshot::new(seed, 2);
        let config = exact(&snap.scenario.optimizer);
        let (_, sol, _) = plan_of(&snap, false);

        let mut scaled = Snapshot::new(seed, 2);
        for t in &mut scaled.scenario.catalog.vm_types {
            t.cost_per_btu *= factor;
        }
        for i in &mut scaled.instances {
            i.penalty_rate *= factor;
        }
        let mut sc = config.clone();
        let w = &mut sc.weights;
        for v in [&mut w.omega_z, &mut w.omega_d, &mut w.omega_fc, &mut w.omega_fr, &mut w.omega_dl] {
            *v *= factor;
        }
        let state = scaled.state();
        let model = build(&state, &sc).unwrap();
        let s2 = solve_model(&model, &sc);
        prop_assert!((s2.objective_value - factor * sol.objective_value).abs() <= 1e-6 * (1.0 + s2.objective_value.abs()));
        // The unscaled optimum is optimal for the scaled model too.
        prop_assert!((model.problem.objective.eval(&sol.values) - s2.objective_value).abs() <= 1e-6 * (1.0 + s2.objective_value.abs()));
    }

    #[test]
    fn baseline_plans_keep_one_type_per_vm(seed in any::<u64>()) {
        let snap = Snapshot::new(seed, 2);
        let (_, _, plan) = plan_of(&snap, true);
        let mut types: BTreeMap<VmRef, usize> = BTreeMap::new();
        for a in &plan.assignments {
            prop_assert_eq!(*types.entry(a.vm).or_insert(a.service), a.service);
        }
        for (id, vm) in &snap.cloud.vms {
            if let (Some(&t), false) = (types.get(&VmRef::Existing(*id)), vm.is_idle()) {
                prop_assert!(vm.containers.contains_key(&t));
            }
        }
    }

    #[test]
    fn transform_and_actions_realise_the_plan(seed in any::<u64>(), baseline in any::<bool>()) {
        let snap = Snapshot::new(seed, 2);
        let (_, _, plan) = plan_of(&snap, baseline);
        let catalog = &snap.scenario.catalog;
        let cp = transform(&plan);
        let mut hosts: BTreeMap<VmRef, (f64, usize)> = BTreeMap::new();
        let mut seen = std::collections::BTreeSet::new();
        for c in &cp.containers {
            prop_assert!(seen.insert((c.host, c.service)));
            let h = hosts.entry(c.host).or_insert((0.0, c.vm_type));
            h.0 += c.cpu;
        }
        for (cpu, t) in hosts.values() {
            prop_assert!(*cpu <= catalog.vm_types[*t].cpu_supply + 1e-6);
        }
        let mut invoked: Vec<_> = cp.containers.iter().flat_map(|c| c.invocations.iter().copied()).collect();
        let mut assigned: Vec<_> = plan.assignments.iter().map(|a| (a.instance, a.step)).collect();
        invoked.sort();
        assigned.sort();
        prop_assert_eq!(invoked, assigned);

        let policy = ContainerPolicy { retain_idle: baseline, drop_images: baseline };
        let mut cloud = snap.cloud.clone();
        let actions = plan_actions(&cp, &cloud, catalog, policy).unwrap();
        let (ids, _) = apply_actions(&mut cloud, catalog, &actions, NOW).unwrap();
        cloud.check_capacity(catalog).unwrap();
        for c in &cp.containers {
            let id = match c.host {
                VmRef::Existing(id) => id,
                fresh => ids[&fresh],
            };
            let live = &cloud.vms[&id].containers[&c.service];
            prop_assert!((live.cpu - c.cpu).abs() < 1e-9);
            prop_assert!((live.ram - c.ram).abs() < 1e-9);
        }
    }
}
