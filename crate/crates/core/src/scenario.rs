//! Scenario files: resource catalog, process models, arrival pattern, SLA
//! policy and optimizer settings, read from TOML.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{CoreError, CoreResult};
use crate::ffsipp::{OptimizerConfig, Weights};
use crate::landscape::{average_makespan, ms, Catalog, Ms, ProcessModel, Provider, ServiceType, VmType, WorkflowNode};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmTypeSpec {
    pub id: Option<String>,
    pub cores: f64,
    #[serde(default)]
    pub ram: f64,
    pub cost_per_btu: f64,
    pub provider: Provider,
    pub pool_limit: Option<u32>,
    #[serde(default = "default_startup")]
    pub startup_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub id: String,
    /// Percent of one core.
    pub cpu: f64,
    #[serde(default)]
    pub ram: f64,
    pub duration: f64,
    #[serde(default = "default_pull")]
    pub pull_s: f64,
    #[serde(default = "default_start")]
    pub start_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Block expression over `seq`, `and`, `xor`, `loop[n]` with `s` leaves.
    pub structure: String,
    /// Service ids filling the `s` leaves left to right.
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ArrivalSpec {
    /// `batch` requests every `interval_s`, alternating between the two
    /// halves of the model list, until `total` were sent.
    Constant {
        #[serde(default = "default_batch")]
        batch: u32,
        #[serde(default = "default_constant_interval")]
        interval_s: f64,
        #[serde(default = "default_constant_total")]
        total: u32,
    },
    /// Batches from [`arrival_pyramid`] per interval; requests beyond the
    /// pattern's own sum are added to the first batch.
    Pyramid {
        #[serde(default = "default_pyramid_interval")]
        interval_s: f64,
        #[serde(default = "default_pyramid_total")]
        total_requests: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyPolicy {
    /// One unit per started 10 % of the deadline window.
    #[default]
    RelativeWindow,
    /// One unit per started 10 s.
    PerTenSeconds,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlaSpec {
    pub factor: f64,
    #[serde(default)]
    pub penalty_policy: PenaltyPolicy,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub gap: f64,
    pub time_limit_ms: Option<u64>,
    pub node_limit: Option<usize>,
    pub fresh_candidates: u32,
    pub btu_max: u32,
    pub mn: f64,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self {
            gap: 0.01,
            time_limit_ms: None,
            node_limit: Some(2000),
            fresh_candidates: 3,
            btu_max: 1000,
            mn: 1e6,
        }
    }
}

/// Raw scenario file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    #[serde(default = "default_btu")]
    pub btu_seconds: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon_ms: Ms,
    pub vm_types: Vec<VmTypeSpec>,
    pub services: Vec<ServiceSpec>,
    pub models: Vec<ModelSpec>,
    pub arrival: ArrivalSpec,
    pub sla: SlaSpec,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub solver: SolverSpec,
}

fn default_startup() -> f64 {
    60.0
}
fn default_pull() -> f64 {
    30.0
}
fn default_start() -> f64 {
    2.0
}
fn default_batch() -> u32 {
    2
}
fn default_constant_interval() -> f64 {
    120.0
}
fn default_constant_total() -> u32 {
    50
}
fn default_pyramid_interval() -> f64 {
    60.0
}
fn default_pyramid_total() -> u32 {
    100
}
fn default_btu() -> f64 {
    300.0
}
fn default_epsilon() -> Ms {
    5_000
}

/// One process request of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub time: Ms,
    /// Index into [`Scenario::models`].
    pub model: usize,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub catalog: Catalog,
    pub models: Vec<Arc<ProcessModel>>,
    /// Service-time makespan per model, seconds.
    pub average_makespans: Vec<f64>,
    pub arrival: ArrivalSpec,
    pub sla_factor: f64,
    pub penalty_policy: PenaltyPolicy,
    pub optimizer: OptimizerConfig,
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> CoreError {
    CoreError::InvalidValue {
        field: field.into(),
        reason: reason.into(),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> CoreResult<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| CoreError::Malformed(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> CoreResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut s = Self::from_toml(&text)?;
        if s.name.is_empty() {
            s.name = path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(s)
    }

    pub fn from_file(file: ScenarioFile) -> CoreResult<Self> {
        if !(file.btu_seconds > 0.0) {
            return Err(invalid("btu_seconds", "must be positive"));
        }
        let services = file
            .services
            .iter()
            .map(|s| ServiceType {
                id: s.id.clone(),
                cpu_demand: s.cpu,
                ram_demand: s.ram,
                duration: s.duration,
                image_pull_time: s.pull_s,
                container_start_time: s.start_s,
            })
            .collect::<Vec<_>>();
        for s in &services {
            s.validate()?;
        }
        let vm_types = file
            .vm_types
            .iter()
            .enumerate()
            .map(|(i, v)| VmType {
                id: v.id.clone().unwrap_or_else(|| (i + 1).to_string()),
                provider: v.provider,
                cpu_supply: v.cores * 100.0,
                ram_supply: v.ram,
                btu_length: file.btu_seconds,
                cost_per_btu: v.cost_per_btu,
                startup_time: v.startup_s,
                pool_limit: v.pool_limit,
            })
            .collect::<Vec<_>>();
        if vm_types.is_empty() {
            return Err(invalid("vm_types", "at least one VM type is required"));
        }
        for v in &vm_types {
            v.validate()?;
        }
        let catalog = Catalog { services, vm_types };
        if file.models.is_empty() {
            return Err(CoreError::NoProcessModels);
        }
        let models = file
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let root = parse_structure(&m.structure, &m.steps, &catalog)?;
                ProcessModel::new(i as u32 + 1, root).map(Arc::new)
            })
            .collect::<CoreResult<Vec<_>>>()?;
        let average_makespans = models.iter().map(|m| average_makespan(m, &catalog)).collect();
        match file.arrival {
            ArrivalSpec::Constant { batch, interval_s, .. } => {
                if batch == 0 || !(interval_s > 0.0) {
                    return Err(invalid("arrival", "batch and interval_s must be positive"));
                }
            }
            ArrivalSpec::Pyramid { interval_s, .. } => {
                if !(interval_s > 0.0) {
                    return Err(invalid("arrival.interval_s", "must be positive"));
                }
            }
        }
        if !(file.sla.factor > 1.0) {
            return Err(invalid("sla.factor", "must exceed 1"));
        }
        let optimizer = OptimizerConfig {
            weights: file.weights,
            epsilon: file.epsilon_ms,
            btu_max: file.solver.btu_max,
            mn: file.solver.mn,
            fresh_candidates_per_type: file.solver.fresh_candidates,
            gap_tol: file.solver.gap,
            time_limit_ms: file.solver.time_limit_ms,
            node_limit: file.solver.node_limit,
        };
        optimizer.validate()?;
        Ok(Self {
            name: file.name.unwrap_or_default(),
            catalog,
            models,
            average_makespans,
            arrival: file.arrival,
            sla_factor: file.sla.factor,
            penalty_policy: file.sla.penalty_policy,
            optimizer,
        })
    }

    /// `arrival`/`sla` labels used in reports.
    pub fn arrival_label(&self) -> &'static str {
        match self.arrival {
            ArrivalSpec::Constant { .. } => "constant",
            ArrivalSpec::Pyramid { .. } => "pyramid",
        }
    }

    pub fn sla_label(&self) -> String {
        if self.sla_factor == 1.5 {
            "strict".into()
        } else if self.sla_factor == 2.5 {
            "lenient".into()
        } else {
            format!("x{}", self.sla_factor)
        }
    }

    /// Request times and models; pyramid requests are shuffled with `seed`.
    pub fn requests(&self, seed: u64) -> Vec<Request> {
        let n_models = self.models.len();
        match self.arrival {
            ArrivalSpec::Constant { batch, interval_s, total } => {
                let half = n_models.div_ceil(2);
                let (first, second) = (half, n_models - half);
                let mut used = [0usize; 2];
                (0..total as usize)
                    .map(|i| {
                        let wave = i / batch as usize;
                        let side = if second == 0 { 0 } else { i % 2 };
                        let model = if side == 0 { used[0] % first } else { half + used[1] % second };
                        used[side] += 1;
                        Request {
                            time: wave as Ms * ms(interval_s),
                            model,
                        }
                    })
                    .collect()
            }
            ArrivalSpec::Pyramid { interval_s, total_requests } => {
                let mut slots = Vec::new();
                for n in 0..=PYRAMID_LAST_MINUTE {
                    for _ in 0..arrival_pyramid(n) {
                        slots.push(n);
                    }
                }
                let extra = (total_requests as usize).saturating_sub(slots.len());
                slots.splice(0..0, std::iter::repeat_n(0, extra));
                slots.truncate(total_requests as usize);
                let mut models: Vec<usize> = (0..slots.len()).map(|i| i % n_models).collect();
                models.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                slots
                    .into_iter()
                    .zip(models)
                    .map(|(n, model)| Request {
                        time: n * ms(interval_s),
                        model,
                    })
                    .collect()
            }
        }
    }

    /// Deadline window in seconds for instances of `model`.
    pub fn window(&self, model: usize) -> f64 {
        self.sla_factor * self.average_makespans[model]
    }

    /// Cost units per second of delay.
    pub fn penalty_rate(&self, window: f64) -> f64 {
        match self.penalty_policy {
            PenaltyPolicy::RelativeWindow => 1.0 / (0.1 * window),
            PenaltyPolicy::PerTenSeconds => 0.1,
        }
    }
}

/// Last minute with requests in the pyramid pattern.
pub const PYRAMID_LAST_MINUTE: i64 = 51;

/// Requests sent in minute `n` of the pyramid pattern; 0 outside `0..=51`.
pub fn arrival_pyramid(n: i64) -> u32 {
    let ceil_div = |a: i64, b: i64| ((a + b - 1) / b) as u32;
    match n {
        0..=4 => 1,
        5..=17 => ceil_div(n + 1, 4),
        18..=19 => 0,
        20..=35 => 1,
        36..=51 => ceil_div(n - 9, 20),
        _ => 0,
    }
}

/// Parses a block expression such as `seq(s,and(s,s),loop[3](s))`, filling
/// each `s` with the next id from `steps`.
pub fn parse_structure(text: &str, steps: &[String], catalog: &Catalog) -> CoreResult<WorkflowNode> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        steps,
        next_step: 0,
        catalog,
    };
    let node = p.node()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    if p.next_step != steps.len() {
        return Err(CoreError::Malformed(format!("structure `{text}` has {} steps but {} services are listed", p.next_step, steps.len())));
    }
    Ok(node)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    steps: &'a [String],
    next_step: usize,
    catalog: &'a Catalog,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> CoreError {
        CoreError::Malformed(format!("{what} at offset {} in `{}`", self.pos, String::from_utf8_lossy(self.src)))
    }

    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.src.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> CoreResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn word(&mut self) -> &str {
        self.skip_ws();
        let start = self.pos;
        while self.src.get(self.pos).is_some_and(|c| c.is_ascii_alphanumeric()) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("")
    }

    fn number(&mut self) -> CoreResult<u32> {
        let w = self.word().to_string();
        w.parse().map_err(|_| self.error("expected a repetition count"))
    }

    fn children(&mut self) -> CoreResult<Vec<WorkflowNode>> {
        self.expect(b'(')?;
        let mut out = vec![self.node()?];
        while self.eat(b',') {
            out.push(self.node()?);
        }
        self.expect(b')')?;
        Ok(out)
    }

    fn node(&mut self) -> CoreResult<WorkflowNode> {
        let w = self.word().to_string();
        match w.as_str() {
            "s" => {
                let id = self.steps.get(self.next_step).ok_or_else(|| self.error("more steps than listed services"))?;
                self.next_step += 1;
                let service = self.catalog.service_index(id)?;
                Ok(WorkflowNode::Step { service })
            }
            "seq" => Ok(WorkflowNode::Sequence(self.children()?)),
            "and" => Ok(WorkflowNode::And(self.children()?)),
            "xor" => Ok(WorkflowNode::Xor(self.children()?)),
            "loop" => {
                self.expect(b'[')?;
                let max_repetitions = self.number()?;
                self.expect(b']')?;
                Ok(WorkflowNode::Loop {
                    body: self.children()?,
                    max_repetitions,
                })
            }
            "" => Err(self.error("expected a block")),
            other => Err(self.error(&format!("unknown block `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
        [[vm_types]]
        cores = 1
        cost_per_btu = 10
        provider = "private"
        pool_limit = 5

        [[services]]
        id = "A"
        cpu = 45
        duration = 40

        [[services]]
        id = "B"
        cpu = 75
        duration = 80

        [[models]]
        structure = "seq(s, xor(s, s))"
        steps = ["A", "A", "B"]

        [[models]]
        structure = "s"
        steps = ["B"]

        [arrival]
        kind = "constant"

        [sla]
        factor = 1.5
    "#;

    #[test]
    fn pyramid_examples() {
        assert_eq!(arrival_pyramid(0), 1);
        assert_eq!(arrival_pyramid(8), 3);
        assert_eq!(arrival_pyramid(18), 0);
        assert_eq!(arrival_pyramid(52), 0);
        assert_eq!(arrival_pyramid(-1), 0);
        assert_eq!((0..=PYRAMID_LAST_MINUTE).map(arrival_pyramid).sum::<u32>(), 99);
    }

    #[test]
    fn parses_a_small_scenario() {
        let s = Scenario::from_toml(SMALL).unwrap();
        assert_eq!(s.models.len(), 2);
        assert_eq!(s.average_makespans, vec![120.0, 80.0]);
        assert_eq!(s.catalog.vm_types[0].cpu_supply, 100.0);
        assert_eq!(s.catalog.vm_types[0].btu_length, 300.0);
        assert_eq!(s.catalog.services[0].image_pull_time, 30.0);
        assert_eq!(s.sla_label(), "strict");
        assert_eq!(s.window(0), 180.0);
        assert!((s.penalty_rate(180.0) - 1.0 / 18.0).abs() < 1e-12);
    }

    #[test]
    fn constant_requests_alternate_halves() {
        let s = Scenario::from_toml(SMALL).unwrap();
        let r = s.requests(1);
        assert_eq!(r.len(), 50);
        assert_eq!(r[0], Request { time: 0, model: 0 });
        assert_eq!(r[1], Request { time: 0, model: 1 });
        assert_eq!(r[2].time, 120_000);
        assert_eq!(r[49].time, 24 * 120_000);
    }

    #[test]
    fn pyramid_requests_are_padded_and_shuffled() {
        let text = SMALL.replace("kind = \"constant\"", "kind = \"pyramid\"");
        let s = Scenario::from_toml(&text).unwrap();
        let a = s.requests(1);
        assert_eq!(a.len(), 100);
        assert_eq!(a.iter().filter(|r| r.time == 0).count(), 2);
        assert_eq!(a.last().unwrap().time, 51 * 60_000);
        assert_eq!(a, s.requests(1));
        assert_ne!(a, s.requests(2));
        let text = text.replace("kind = \"pyramid\"", "kind = \"pyramid\"\ntotal_requests = 99");
        assert_eq!(Scenario::from_toml(&text).unwrap().requests(1).len(), 99);
    }

    #[test]
    fn structure_parser() {
        let s = Scenario::from_toml(SMALL).unwrap();
        let ids: Vec<String> = ["A", "B", "A"].iter().map(|s| s.to_string()).collect();
        let n = parse_structure("seq(s, loop[3](s, s))", &ids, &s.catalog).unwrap();
        assert_eq!(
            n,
            WorkflowNode::Sequence(vec![
                WorkflowNode::Step { service: 0 },
                WorkflowNode::Loop {
                    body: vec![WorkflowNode::Step { service: 1 }, WorkflowNode::Step { service: 0 }],
                    max_repetitions: 3
                }
            ])
        );
        assert!(parse_structure("seq(s, s)", &ids, &s.catalog).is_err());
        assert!(parse_structure("par(s)", &ids, &s.catalog).is_err());
        assert!(parse_structure("seq(s,s,s) x", &ids, &s.catalog).is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Scenario::from_toml(&SMALL.replace("steps = [\"B\"]", "steps = [\"Z\"]")), Err(CoreError::UnknownService(_))));
        assert!(matches!(Scenario::from_toml(&SMALL.replace("duration = 80", "duration = 0")), Err(CoreError::InvalidValue { .. })));
        assert!(matches!(Scenario::from_toml(&SMALL.replace("factor = 1.5", "factor = 1.0")), Err(CoreError::InvalidValue { .. })));
        assert!(matches!(Scenario::from_toml(&SMALL.replace("cores = 1", "cores = 1\ncolour = 2")), Err(CoreError::Malformed(_))));
        let no_models = "models = []\n".to_string() + SMALL.split("[[models]]").next().unwrap() + "[arrival]\nkind = \"constant\"\n[sla]\nfactor = 1.5\n";
        assert!(matches!(Scenario::from_toml(&no_models), Err(CoreError::NoProcessModels)));
    }
}
