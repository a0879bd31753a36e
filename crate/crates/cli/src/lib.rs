//! Batch experiment runner: seeded runs per approach, CSV reports and
//! their aggregation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ffsipp_core::experiment::{aggregate, AggregateRow, RunRow, METRICS, METRICS_HEADER};
use ffsipp_core::scenario::Scenario;
use ffsipp_core::sim::{run, RunOptions, RunOutput};
use ffsipp_core::strategy::StrategyRegistry;
use rayon::prelude::*;

pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: PathBuf,
    pub approaches: Vec<String>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    /// Replaces the scenario's SLA factor.
    pub sla_factor: Option<f64>,
    pub dump_lp: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.approaches.is_empty() {
            bail!("at least one approach is required");
        }
        if let Some(f) = self.sla_factor {
            if !(f > 1.0) {
                bail!("sla factor must exceed 1, got {f}");
            }
        }
        Ok(())
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<RunRow>,
    pub aggregate: Vec<AggregateRow>,
    pub outputs: Vec<RunOutput>,
}

/// Runs every (approach, seed) pair in parallel and writes the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    config.validate()?;
    if !config.scenario.is_file() {
        bail!("scenario file {} does not exist", config.scenario.display());
    }
    let mut scenario = Scenario::load(&config.scenario).with_context(|| format!("loading {}", config.scenario.display()))?;
    if let Some(f) = config.sla_factor {
        scenario.sla_factor = f;
    }
    let registry = StrategyRegistry::with_defaults();
    for a in &config.approaches {
        registry.get(a)?;
    }
    fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;
    let jobs: Vec<(&str, u64)> = config.approaches.iter().flat_map(|a| config.seeds.iter().map(move |&s| (a.as_str(), s))).collect();
    let outputs = jobs
        .par_iter()
        .map(|&(approach, seed)| {
            let options = RunOptions {
                audit: true,
                dump_lp: config.dump_lp.as_ref().map(|d| d.join(format!("{approach}_{seed}"))),
            };
            run(&scenario, registry.get(approach)?, seed, &options).with_context(|| format!("run {approach} seed {seed}"))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<RunRow> = jobs
        .iter()
        .zip(&outputs)
        .map(|(&(approach, seed), out)| RunRow::new(&scenario.name, approach, scenario.arrival_label(), &scenario.sla_label(), seed, &out.report))
        .collect();
    write_metrics(&config.out.join(METRICS_FILE), &rows)?;
    for (&(approach, seed), out) in jobs.iter().zip(&outputs) {
        write_run_files(&config.out, approach, seed, out)?;
    }
    let aggregate = aggregate(&rows);
    write_aggregate(&config.out.join(AGGREGATE_FILE), &aggregate)?;
    Ok(ExperimentSummary { rows, aggregate, outputs })
}

/// Re-aggregates the metrics CSV in `dir`.
pub fn report(dir: &Path) -> Result<Vec<AggregateRow>> {
    let rows = read_metrics(&dir.join(METRICS_FILE))?;
    let agg = aggregate(&rows);
    write_aggregate(&dir.join(AGGREGATE_FILE), &agg)?;
    Ok(agg)
}

pub fn write_metrics(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    if r.headers()?.iter().ne(METRICS_HEADER) {
        bail!("{} does not have the metrics header", path.display());
    }
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64> { rec[i].parse().with_context(|| format!("column {} in {}", METRICS_HEADER[i], path.display())) };
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(RunRow {
                run_id: rec[0].to_string(),
                approach: rec[1].to_string(),
                arrival: rec[2].to_string(),
                sla: rec[3].to_string(),
                seed: rec[4].parse()?,
                sla_adherence_pct: num(&rec, 5)?,
                makespan_min: num(&rec, 6)?,
                leasing_cost: num(&rec, 7)?,
                penalty_cost: num(&rec, 8)?,
                total_cost: num(&rec, 9)?,
            })
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["approach".to_string(), "arrival".into(), "sla".into(), "runs".into()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sd"));
    }
    w.write_record(&header)?;
    for a in rows {
        let mut rec = vec![a.approach.clone(), a.arrival.clone(), a.sla.clone(), a.runs.to_string()];
        for &(_, mean, sd) in &a.metrics {
            rec.push(mean.to_string());
            rec.push(sd.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_run_files(out: &Path, approach: &str, seed: u64, run: &RunOutput) -> Result<()> {
    let stem = format!("{approach}_{seed}");
    let dir = out.join("core_usage");
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["minute", "leased_cores", "parallel_requests"])?;
    for u in &run.report.core_usage {
        w.write_record([u.minute.to_string(), u.leased_cores.to_string(), u.parallel_requests.to_string()])?;
    }
    w.flush()?;

    let dir = out.join("instances");
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["instance", "model", "arrival_ms", "deadline_ms", "finish_ms", "delay_s", "penalty"])?;
    for i in &run.report.instances {
        w.write_record([
            i.id.to_string(),
            i.model.to_string(),
            i.arrival.to_string(),
            i.deadline.to_string(),
            i.finish.to_string(),
            i.delay_s.to_string(),
            i.penalty.to_string(),
        ])?;
    }
    w.flush()?;

    let dir = out.join("audit");
    fs::create_dir_all(&dir)?;
    let mut text = run.audit.join("\n");
    text.push('\n');
    fs::write(dir.join(format!("{stem}.log")), text)?;
    Ok(())
}

/// Plain-text rendering of an aggregate, one line per approach.
pub fn render(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    for a in rows {
        s.push_str(&format!("{} {} {} (n={})", a.approach, a.arrival, a.sla, a.runs));
        for &(m, mean, sd) in &a.metrics {
            s.push_str(&format!("  {m}={mean:.2} ({sd:.2})"));
        }
        s.push('\n');
    }
    s
}
