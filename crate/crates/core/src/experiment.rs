//! Per-run metric rows and their aggregation over seeds.

use std::collections::BTreeMap;

use crate::sim::MetricsReport;

/// Column names of [`RunRow`] in order.
pub const METRICS_HEADER: [&str; 10] = [
    "run_id",
    "approach",
    "arrival",
    "sla",
    "seed",
    "sla_adherence_pct",
    "makespan_min",
    "leasing_cost",
    "penalty_cost",
    "total_cost",
];

/// Metric columns that are aggregated.
pub const METRICS: [&str; 5] = ["sla_adherence_pct", "makespan_min", "leasing_cost", "penalty_cost", "total_cost"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub run_id: String,
    pub approach: String,
    pub arrival: String,
    pub sla: String,
    pub seed: u64,
    pub sla_adherence_pct: f64,
    pub makespan_min: f64,
    pub leasing_cost: f64,
    pub penalty_cost: f64,
    pub total_cost: f64,
}

impl RunRow {
    pub fn new(scenario: &str, approach: &str, arrival: &str, sla: &str, seed: u64, report: &MetricsReport) -> Self {
        Self {
            run_id: format!("{scenario}/{approach}/{seed}"),
            approach: approach.into(),
            arrival: arrival.into(),
            sla: sla.into(),
            seed,
            sla_adherence_pct: report.sla_adherence_pct,
            makespan_min: report.total_makespan_min,
            leasing_cost: report.leasing_cost,
            penalty_cost: report.penalty_cost,
            total_cost: report.total_cost,
        }
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "sla_adherence_pct" => self.sla_adherence_pct,
            "makespan_min" => self.makespan_min,
            "leasing_cost" => self.leasing_cost,
            "penalty_cost" => self.penalty_cost,
            "total_cost" => self.total_cost,
            _ => return None,
        })
    }

    /// Fields in [`METRICS_HEADER`] order.
    pub fn fields(&self) -> [String; 10] {
        [
            self.run_id.clone(),
            self.approach.clone(),
            self.arrival.clone(),
            self.sla.clone(),
            self.seed.to_string(),
            self.sla_adherence_pct.to_string(),
            self.makespan_min.to_string(),
            self.leasing_cost.to_string(),
            self.penalty_cost.to_string(),
            self.total_cost.to_string(),
        ]
    }
}

/// Arithmetic mean and sample standard deviation (0 for one value).
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub approach: String,
    pub arrival: String,
    pub sla: String,
    pub runs: usize,
    /// (metric, mean, sample σ) in [`METRICS`] order.
    pub metrics: Vec<(&'static str, f64, f64)>,
}

impl AggregateRow {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.0 == metric).map(|m| m.1)
    }
}

/// Groups rows by (approach, arrival, sla).
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.approach.clone(), r.arrival.clone(), r.sla.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((approach, arrival, sla), rs)| AggregateRow {
            approach,
            arrival,
            sla,
            runs: rs.len(),
            metrics: METRICS
                .iter()
                .map(|&m| {
                    let vals: Vec<f64> = rs.iter().map(|r| r.metric(m).unwrap()).collect();
                    let (mean, sd) = mean_and_sd(&vals);
                    (m, mean, sd)
                })
                .collect(),
        })
        .collect()
}
