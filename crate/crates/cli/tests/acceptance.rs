//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ffsipp_cli::{run_experiment, ExperimentConfig, ExperimentSummary, METRICS_FILE};
use ffsipp_core::baseline::build_baseline;
use ffsipp_core::ffsipp::{build, FleetVm, OptimizerConfig, SchedulingState, Weights};
use ffsipp_core::landscape::{ms, NodeKind, ProcessInstance, StepStatus};
use ffsipp_core::scenario::{arrival_pyramid, Scenario, PYRAMID_LAST_MINUTE};
use ffsipp_core::worstcase::{invocation_overhead, overhead_sum, remaining_duration, step_deadline, StartupBasis};
use milp_core::{enumerate_oracle, solve, Domain, LinearExpr, MilpProblem, Relation, SolveParams, SolveStatus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/presets").join(format!("{name}.toml"))
}

struct PresetRun {
    summary: ExperimentSummary,
    per_approach: BTreeMap<String, Duration>,
}

impl PresetRun {
    fn mean(&self, approach: &str, metric: &str) -> f64 {
        self.summary.aggregate.iter().find(|a| a.approach == approach).and_then(|a| a.mean(metric)).expect("approach ran")
    }

    fn ratio(&self) -> f64 {
        self.mean("ffsipp", "total_cost") / self.mean("sipp", "total_cost")
    }

    fn slowest(&self) -> Duration {
        self.per_approach.values().copied().max().unwrap_or_default()
    }
}

/// Runs both approaches over `SEEDS`, timing each approach separately.
fn run_preset(name: &str, root: &Path) -> anyhow::Result<PresetRun> {
    let mut rows = Vec::new();
    let mut aggregate = Vec::new();
    let mut outputs = Vec::new();
    let mut per_approach = BTreeMap::new();
    for approach in ["ffsipp", "sipp"] {
        let started = Instant::now();
        let s = run_experiment(&ExperimentConfig {
            scenario: preset(name),
            approaches: vec![approach.into()],
            seeds: SEEDS.to_vec(),
            out: root.join(name).join(approach),
            sla_factor: None,
            dump_lp: None,
        })?;
        per_approach.insert(approach.to_string(), started.elapsed());
        rows.extend(s.rows);
        aggregate.extend(s.aggregate);
        outputs.extend(s.outputs);
    }
    Ok(PresetRun {
        summary: ExperimentSummary { rows, aggregate, outputs },
        per_approach,
    })
}

fn random_milp(rng: &mut ChaCha8Rng) -> MilpProblem {
    let mut p = MilpProblem::new();
    let vars: Vec<_> = (0..rng.random_range(1..=6))
        .map(|i| {
            if rng.random_bool(0.3) {
                p.bool_var(format!("b{i}"))
            } else {
                let lo = rng.random_range(0..=2) as f64;
                let hi = lo + rng.random_range(0..=5 - lo as i32) as f64;
                p.add_var(format!("x{i}"), Domain::Integer, lo, hi)
            }
        })
        .collect();
    let mut obj = LinearExpr::new();
    for &v in &vars {
        obj.add_term(rng.random_range(-10..=10) as f64, v);
    }
    p.objective = obj;
    for c in 0..rng.random_range(0..=8) {
        let mut e = LinearExpr::new();
        for &v in &vars {
            if rng.random_bool(0.6) {
                e.add_term(rng.random_range(-5..=5) as f64, v);
            }
        }
        let (rel, rhs) = match rng.random_range(0..8) {
            0 => (Relation::Eq, rng.random_range(-3..=6)),
            1..=3 => (Relation::Ge, rng.random_range(-20..=4)),
            _ => (Relation::Le, rng.random_range(0..=20)),
        };
        p.add_constraint(format!("c{c}"), e, rel, rhs as f64);
    }
    p
}

fn solver_soundness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..200 {
        let p = random_milp(&mut rng);
        let (Ok(got), Ok(want)) = (solve(&p, &SolveParams::default()), enumerate_oracle(&p)) else {
            mismatches += 1;
            continue;
        };
        let same = match want.status {
            SolveStatus::Optimal => got.status == SolveStatus::Optimal && (got.objective_value - want.objective_value).abs() < 1e-9,
            s => got.status == s,
        };
        mismatches += usize::from(!same);
    }
    let t = started.elapsed();
    outcome(mismatches == 0 && t < Duration::from_secs(60), format!("{mismatches} mismatches in 200 problems, {:.2} s", t.as_secs_f64()))
}

fn plan_feasibility(runs: &[&PresetRun]) -> Outcome {
    let outputs: Vec<_> = runs.iter().flat_map(|r| &r.summary.outputs).collect();
    let rounds: usize = outputs.iter().map(|o| o.report.rounds).sum();
    let verified: usize = outputs.iter().map(|o| o.report.plans_verified).sum();
    let fallbacks: usize = outputs.iter().map(|o| o.report.fallbacks).sum();
    outcome(
        rounds == verified && rounds > 0,
        format!("{verified}/{rounds} plans verified over {} runs ({fallbacks} fallbacks)", outputs.len()),
    )
}

fn ratio_check(run: &PresetRun, band: (f64, f64), min_adherence: Option<f64>, max_time: Option<Duration>) -> Outcome {
    let ratio = run.ratio();
    let adherence = run.mean("ffsipp", "sla_adherence_pct");
    let mut pass = (band.0..=band.1).contains(&ratio);
    let mut detail = format!("cost ratio {ratio:.3} in [{:.2}, {:.2}]", band.0, band.1);
    if let Some(min) = min_adherence {
        pass &= adherence >= min;
        detail += &format!(", ffsipp adherence {adherence:.2}% >= {min}%");
    }
    if let Some(max) = max_time {
        pass &= run.slowest() <= max;
        detail += &format!(", slowest approach {:.0} s", run.slowest().as_secs_f64());
    }
    outcome(pass, detail)
}

fn random_snapshot(scenario: &Scenario, rng: &mut ChaCha8Rng, case: u32) -> (Vec<ProcessInstance>, Vec<FleetVm>) {
    let catalog = &scenario.catalog;
    let now = ms(600.0);
    let small: Vec<usize> = (0..scenario.models.len()).filter(|&m| scenario.models[m].step_services.len() <= 8).collect();
    let mut instances = Vec::new();
    for k in 0..rng.random_range(1..=3u32) {
        let m = small[rng.random_range(0..small.len())];
        let window = scenario.average_makespans[m] * if rng.random_bool(0.5) { 1.5 } else { 2.5 };
        let arrival = now - ms(rng.random_range(0.0..window));
        let model = scenario.models[m].clone();
        let mut inst = ProcessInstance::new(case * 10 + k + 1, model.clone(), catalog, arrival, arrival + ms(window), scenario.penalty_rate(window));
        let xor = model.nodes.iter().map(|n| if n.kind == NodeKind::Xor { rng.random_range(0..n.children.len()) } else { 0 }).collect();
        let loops = model.nodes.iter().map(|n| if n.kind == NodeKind::Loop { rng.random_range(1..=n.max_repetitions) } else { n.max_repetitions }).collect();
        inst.set_choices(xor, loops);
        for _ in 0..rng.random_range(0..3) {
            let next = inst.schedulable_steps();
            if next.len() > 1 || (next.len() == 1 && rng.random_bool(0.5)) {
                inst.complete_step(next[0]);
            }
        }
        instances.push(inst);
    }
    let mut fleet = Vec::new();
    for id in 1..=rng.random_range(0..=2u32) {
        let vm_type = rng.random_range(0..catalog.vm_types.len());
        let service = rng.random_range(0..catalog.services.len());
        let fits = catalog.services[service].cpu_demand <= catalog.vm_types[vm_type].cpu_supply;
        fleet.push(FleetVm {
            id,
            vm_type,
            remaining_lease: rng.random_range(10.0..300.0),
            boot_wait: 0.0,
            images: vec![(service, 0.0)],
            containers: if fits { vec![(service, 0.0)] } else { vec![] },
            idle: true,
        });
    }
    // One running step pins a leased VM when it fits.
    if let Some(vm) = fleet.first_mut() {
        let inst = &mut instances[0];
        if let Some(&s) = inst.schedulable_steps().first() {
            let st = &mut inst.steps[s];
            if st.cpu_demand <= catalog.vm_types[vm.vm_type].cpu_supply {
                st.status = StepStatus::Running;
                st.assigned_vm = Some(vm.id);
                st.scheduled_at = Some(now - ms(5.0));
                st.remaining_time = (st.expected_duration - 5.0).max(1.0);
                vm.idle = false;
                vm.images = vec![(st.service, 0.0)];
                vm.containers = vec![(st.service, 0.0)];
            }
        }
    }
    (instances, fleet)
}

fn baseline_dominance() -> Outcome {
    let scenario = Scenario::load(&preset("constant_strict_intensive")).expect("preset loads");
    let config = OptimizerConfig {
        weights: Weights {
            omega_z: 0.0,
            omega_d: 0.0,
            omega_fc: 0.0,
            omega_fr: 0.0,
            omega_dl: 0.0,
            ..scenario.optimizer.weights.clone()
        },
        gap_tol: 0.0,
        time_limit_ms: None,
        node_limit: None,
        ..scenario.optimizer.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worse = Vec::new();
    let mut unsolved = 0;
    for case in 0..50 {
        let (instances, fleet) = random_snapshot(&scenario, &mut rng, case);
        let state = SchedulingState {
            now: ms(600.0),
            instances: instances.iter().collect(),
            fleet,
            catalog: &scenario.catalog,
        };
        let costs: Vec<Option<f64>> = [build(&state, &config), build_baseline(&state, &config)]
            .into_iter()
            .map(|m| {
                let m = m.ok()?;
                let s = solve(&m.problem, &config.solve_params()).ok()?;
                (s.status == SolveStatus::Optimal).then_some(s.objective_value)
            })
            .collect();
        match (costs[0], costs[1]) {
            (Some(f), Some(b)) if f > b + 1e-6 * b.abs().max(1.0) => worse.push((case, f, b)),
            (Some(_), Some(_)) => {}
            _ => unsolved += 1,
        }
    }
    outcome(
        worse.is_empty() && unsolved == 0,
        format!("{} of 50 snapshots cost more under ffsipp, {unsolved} unsolved {:?}", worse.len(), worse.first()),
    )
}

fn worst_case_values() -> Outcome {
    use ffsipp_core::landscape::{Catalog, ProcessModel, Provider, ServiceType, VmType, WorkflowNode};
    use std::sync::Arc;
    let svc = |id: &str, cpu: f64, duration: f64| ServiceType {
        id: id.into(),
        cpu_demand: cpu,
        ram_demand: 0.0,
        duration,
        image_pull_time: 30.0,
        container_start_time: 2.0,
    };
    let catalog = Catalog {
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
    };
    let a = || WorkflowNode::Step { service: 0 };
    let inst = |root| ProcessInstance::new(1, Arc::new(ProcessModel::new(1, root).unwrap()), &catalog, 0, 1_000_000, 1.0);
    let got = [
        overhead_sum(&catalog, [(0, 40.0), (0, 40.0)], 60.0),
        remaining_duration(&inst(WorkflowNode::And(vec![a(), WorkflowNode::Step { service: 1 }])), &catalog, &[]).e_la,
        invocation_overhead(&catalog.services[0], 40.0, false, false, StartupBasis::WorstCase(60.0)),
        step_deadline(&inst(a()), &catalog, 0).map_or(f64::NAN, |d| d as f64 / 1000.0),
    ];
    outcome(got == [264.0, 212.0, 132.0, 868.0], format!("{got:?}"))
}

fn pyramid_total() -> Outcome {
    let sum: u32 = (0..=PYRAMID_LAST_MINUTE).map(arrival_pyramid).sum();
    let issued = Scenario::load(&preset("pyramid_strict_intensive")).map(|s| s.requests(1).len()).unwrap_or(0);
    outcome(sum == 99 && issued == 100, format!("sum {sum}, padded scenario issues {issued}"))
}

fn determinism(root: &Path) -> anyhow::Result<Outcome> {
    let mut files = Vec::new();
    for pass in ["a", "b"] {
        let out = root.join("determinism").join(pass);
        run_experiment(&ExperimentConfig {
            scenario: preset("constant_strict_light"),
            approaches: vec!["ffsipp".into(), "sipp".into()],
            seeds: vec![1],
            out: out.clone(),
            sla_factor: None,
            dump_lp: None,
        })?;
        files.push(std::fs::read(out.join(METRICS_FILE))?);
    }
    Ok(outcome(files[0] == files[1], format!("{} bytes each", files[0].len())))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("criterion {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    let failed_run = |e: anyhow::Error| outcome(false, format!("run failed: {e:#}"));

    report("1 solver soundness", solver_soundness());
    let presets: BTreeMap<&str, anyhow::Result<PresetRun>> = ["constant_strict_intensive", "constant_lenient_intensive", "pyramid_strict_intensive", "constant_strict_light"]
        .into_iter()
        .map(|p| (p, run_preset(p, root.path())))
        .collect();
    let ok: Vec<&PresetRun> = presets.values().filter_map(|r| r.as_ref().ok()).collect();
    let all_ran = ok.len() == presets.len();
    let feasibility = plan_feasibility(&ok);
    report("2 plan feasibility", if all_ran { feasibility } else { outcome(false, "a preset run failed") });

    match &presets["constant_strict_intensive"] {
        Ok(r) => report("3 constant strict intensive", ratio_check(r, (0.40, 0.70), Some(95.0), Some(Duration::from_secs(600)))),
        Err(e) => report("3 constant strict intensive", outcome(false, format!("{e:#}"))),
    }
    match (&presets["constant_lenient_intensive"], &presets["constant_strict_intensive"]) {
        (Ok(l), Ok(s)) => {
            let adherence = l.mean("ffsipp", "sla_adherence_pct");
            let (lm, sm) = (l.mean("ffsipp", "makespan_min"), s.mean("ffsipp", "makespan_min"));
            report(
                "4 constant lenient",
                outcome(adherence >= 99.0 && lm > sm, format!("ffsipp adherence {adherence:.2}% >= 99%, makespan {lm:.2} > strict {sm:.2} min")),
            );
        }
        _ => report("4 constant lenient", outcome(false, "a preset run failed")),
    }
    match &presets["pyramid_strict_intensive"] {
        Ok(r) => report("5 pyramid strict intensive", ratio_check(r, (0.40, 0.70), Some(95.0), None)),
        Err(e) => report("5 pyramid strict intensive", outcome(false, format!("{e:#}"))),
    }
    match &presets["constant_strict_light"] {
        Ok(r) => report("6 constant strict light", ratio_check(r, (0.28, 0.52), None, None)),
        Err(e) => report("6 constant strict light", outcome(false, format!("{e:#}"))),
    }
    report("7 baseline dominance", baseline_dominance());
    report("8 worst-case values", worst_case_values());
    report("9 pyramid total", pyramid_total());
    report("10 determinism", determinism(root.path()).unwrap_or_else(failed_run));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
