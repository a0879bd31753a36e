//! Services, VM types, process models and process instances.

use std::sync::Arc;

use crate::error::{CoreError, CoreResult};

/// Simulation time in integer milliseconds.
pub type Ms = i64;

pub fn ms(seconds: f64) -> Ms {
    (seconds * 1000.0).round() as Ms
}

pub fn secs(t: Ms) -> f64 {
    t as f64 / 1000.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceType {
    pub id: String,
    /// Mean CPU demand in percent of one core.
    pub cpu_demand: f64,
    pub ram_demand: f64,
    /// Mean duration in seconds.
    pub duration: f64,
    /// Image pull time in seconds.
    pub image_pull_time: f64,
    /// Container start time in seconds.
    pub container_start_time: f64,
}

impl ServiceType {
    pub fn validate(&self) -> CoreResult<()> {
        let bad = |field: &str, reason: &str| {
            Err(CoreError::InvalidValue {
                field: format!("services.{}.{field}", self.id),
                reason: reason.into(),
            })
        };
        if !(self.cpu_demand > 0.0 || self.ram_demand > 0.0) || self.cpu_demand < 0.0 || self.ram_demand < 0.0 {
            return bad("cpu", "needs a positive cpu or ram demand");
        }
        if !(self.duration > 0.0) {
            return bad("duration", "must be positive");
        }
        if !(self.image_pull_time >= 0.0) || !(self.container_start_time >= 0.0) {
            return bad("pull_s", "latencies must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provider {
    Private,
    Public,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmType {
    pub id: String,
    pub provider: Provider,
    /// CPU supply in percent (cores × 100).
    pub cpu_supply: f64,
    pub ram_supply: f64,
    /// Billing time unit in seconds.
    pub btu_length: f64,
    pub cost_per_btu: f64,
    /// Startup time in seconds.
    pub startup_time: f64,
    /// Maximum concurrent instances; `None` is unbounded.
    pub pool_limit: Option<u32>,
}

impl VmType {
    pub fn validate(&self) -> CoreResult<()> {
        let bad = |field: &str, reason: &str| {
            Err(CoreError::InvalidValue {
                field: format!("vm_types.{}.{field}", self.id),
                reason: reason.into(),
            })
        };
        if !(self.cpu_supply > 0.0) {
            return bad("cores", "must be positive");
        }
        if !(self.btu_length > 0.0) {
            return bad("btu_seconds", "must be positive");
        }
        if !(self.cost_per_btu > 0.0) {
            return bad("cost_per_btu", "must be positive");
        }
        if !(self.startup_time >= 0.0) {
            return bad("startup_s", "must be non-negative");
        }
        if self.pool_limit == Some(0) {
            return bad("pool_limit", "must be at least 1");
        }
        Ok(())
    }

    pub fn fits(&self, cpu: f64, ram: f64) -> bool {
        cpu <= self.cpu_supply + 1e-9 && ram <= self.ram_supply + 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub services: Vec<ServiceType>,
    pub vm_types: Vec<VmType>,
}

impl Catalog {
    pub fn service_index(&self, id: &str) -> CoreResult<usize> {
        self.services.iter().position(|s| s.id == id).ok_or_else(|| CoreError::UnknownService(id.to_string()))
    }

    /// Worst-case VM startup time Δ over the catalog.
    pub fn max_startup(&self) -> f64 {
        self.vm_types.iter().map(|v| v.startup_time).fold(0.0, f64::max)
    }

    /// Worst-case duration of one invocation including deployment:
    /// `e + Δ_c + Δ_st + Δ`.
    pub fn worst_case_step(&self, service: usize, expected_duration: f64) -> f64 {
        let s = &self.services[service];
        expected_duration + s.container_start_time + s.image_pull_time + self.max_startup()
    }
}

/// Workflow tree of a process model.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkflowNode {
    Step { service: usize },
    Sequence(Vec<WorkflowNode>),
    And(Vec<WorkflowNode>),
    Xor(Vec<WorkflowNode>),
    /// Body children run in sequence, up to `max_repetitions` times.
    Loop { body: Vec<WorkflowNode>, max_repetitions: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Step,
    Sequence,
    And,
    Xor,
    Loop,
}

/// Flattened node: kind, children (node ids), step id for leaves, loop bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatNode {
    pub kind: NodeKind,
    pub children: Vec<usize>,
    pub step: Option<usize>,
    pub max_repetitions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessModel {
    pub id: u32,
    pub root: WorkflowNode,
    /// Pre-order arena; node 0 is the root.
    pub nodes: Vec<FlatNode>,
    /// Service of every step, indexed by step id (pre-order position).
    pub step_services: Vec<usize>,
}

impl ProcessModel {
    pub fn new(id: u32, root: WorkflowNode) -> CoreResult<Self> {
        let mut model = Self {
            id,
            root: root.clone(),
            nodes: Vec::new(),
            step_services: Vec::new(),
        };
        model.flatten(&root)?;
        Ok(model)
    }

    fn flatten(&mut self, node: &WorkflowNode) -> CoreResult<usize> {
        let id = self.nodes.len();
        let (kind, kids, re): (NodeKind, &[WorkflowNode], u32) = match node {
            WorkflowNode::Step { service } => {
                self.nodes.push(FlatNode {
                    kind: NodeKind::Step,
                    children: Vec::new(),
                    step: Some(self.step_services.len()),
                    max_repetitions: 1,
                });
                self.step_services.push(*service);
                return Ok(id);
            }
            WorkflowNode::Sequence(c) => (NodeKind::Sequence, c, 1),
            WorkflowNode::And(c) => (NodeKind::And, c, 1),
            WorkflowNode::Xor(c) => (NodeKind::Xor, c, 1),
            WorkflowNode::Loop { body, max_repetitions } => (NodeKind::Loop, body, *max_repetitions),
        };
        if kids.is_empty() {
            return Err(CoreError::Malformed(format!("model {}: composite node without children", self.id)));
        }
        if re == 0 {
            return Err(CoreError::Malformed(format!("model {}: loop with zero repetitions", self.id)));
        }
        self.nodes.push(FlatNode {
            kind,
            children: Vec::new(),
            step: None,
            max_repetitions: re,
        });
        let mut children = Vec::with_capacity(kids.len());
        for k in kids {
            children.push(self.flatten(k)?);
        }
        self.nodes[id].children = children;
        Ok(id)
    }

    pub fn num_steps(&self) -> usize {
        self.step_services.len()
    }

    /// Step ids inside the subtree of `node`.
    pub fn steps_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let f = &self.nodes[n];
            if let Some(s) = f.step {
                out.push(s);
            }
            stack.extend(f.children.iter().rev());
        }
        out
    }

    /// Number of XOR, AND and loop blocks.
    pub fn pattern_counts(&self) -> (usize, usize, usize) {
        let count = |k| self.nodes.iter().filter(|n| n.kind == k).count();
        (count(NodeKind::Xor), count(NodeKind::And), count(NodeKind::Loop))
    }
}

/// Structural positions of a model's steps, taken from the root's children
/// (a root that is not a sequence counts as a sequence of one).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathSets {
    pub sequence: Vec<Vec<usize>>,
    pub and_paths: Vec<Vec<Vec<usize>>>,
    pub xor_paths: Vec<Vec<Vec<usize>>>,
    pub loops: Vec<(Vec<usize>, u32)>,
}

impl PathSets {
    pub fn total_steps(&self) -> usize {
        self.sequence.iter().map(Vec::len).sum::<usize>()
            + self.and_paths.iter().flatten().map(Vec::len).sum::<usize>()
            + self.xor_paths.iter().flatten().map(Vec::len).sum::<usize>()
            + self.loops.iter().map(|(b, _)| b.len()).sum::<usize>()
    }
}

pub fn top_level_children(model: &ProcessModel) -> Vec<usize> {
    let root = &model.nodes[0];
    if root.kind == NodeKind::Sequence {
        root.children.clone()
    } else {
        vec![0]
    }
}

pub fn enumerate_paths(model: &ProcessModel) -> PathSets {
    let mut out = PathSets::default();
    let mut seq = Vec::new();
    for c in top_level_children(model) {
        let node = &model.nodes[c];
        match node.kind {
            NodeKind::Step | NodeKind::Sequence => seq.extend(model.steps_under(c)),
            NodeKind::And => out.and_paths.push(node.children.iter().map(|&b| model.steps_under(b)).collect()),
            NodeKind::Xor => out.xor_paths.push(node.children.iter().map(|&b| model.steps_under(b)).collect()),
            NodeKind::Loop => out.loops.push((model.steps_under(c), node.max_repetitions)),
        }
    }
    if !seq.is_empty() {
        out.sequence.push(seq);
    }
    out
}

/// Service-time-only makespan from mean durations: sequences add, AND and
/// XOR take the longest branch, loops multiply by the repetition bound.
pub fn average_makespan(model: &ProcessModel, catalog: &Catalog) -> f64 {
    fn walk(model: &ProcessModel, catalog: &Catalog, n: usize) -> f64 {
        let node = &model.nodes[n];
        let kids = node.children.iter().map(|&c| walk(model, catalog, c));
        match node.kind {
            NodeKind::Step => catalog.services[model.step_services[node.step.unwrap()]].duration,
            NodeKind::Sequence => kids.sum(),
            NodeKind::And | NodeKind::Xor => kids.fold(0.0, f64::max),
            NodeKind::Loop => node.max_repetitions as f64 * kids.sum::<f64>(),
        }
    }
    walk(model, catalog, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StepStatus {
    Pending,
    Next,
    Running,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    pub service: usize,
    pub status: StepStatus,
    pub cpu_demand: f64,
    pub ram_demand: f64,
    /// Expected duration in seconds (the service mean).
    pub expected_duration: f64,
    pub assigned_vm: Option<u32>,
    /// Expected remaining time in seconds while running, including any wait
    /// for the host to become ready.
    pub remaining_time: f64,
    pub scheduled_at: Option<Ms>,
    pub step_deadline: Option<Ms>,
    /// Completed executions of this step (loops re-run their body).
    pub executions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessInstance {
    pub id: u32,
    pub model: Arc<ProcessModel>,
    pub arrival_time: Ms,
    pub deadline: Ms,
    /// Cost units per second of delay.
    pub penalty_rate: f64,
    pub steps: Vec<StepState>,
    /// Branch taken by each XOR node (indexed by node id).
    pub xor_choice: Vec<usize>,
    /// Iterations each loop node will actually run.
    pub loop_total: Vec<u32>,
    /// Iterations each loop node has completed.
    pub loop_done: Vec<u32>,
}

impl ProcessInstance {
    /// New instance with all steps pending. XOR choices default to the first
    /// branch and loops to their repetition bound.
    pub fn new(id: u32, model: Arc<ProcessModel>, catalog: &Catalog, arrival_time: Ms, deadline: Ms, penalty_rate: f64) -> Self {
        let steps = model
            .step_services
            .iter()
            .map(|&s| {
                let svc = &catalog.services[s];
                StepState {
                    service: s,
                    status: StepStatus::Pending,
                    cpu_demand: svc.cpu_demand,
                    ram_demand: svc.ram_demand,
                    expected_duration: svc.duration,
                    assigned_vm: None,
                    remaining_time: 0.0,
                    scheduled_at: None,
                    step_deadline: None,
                    executions: 0,
                }
            })
            .collect();
        let n = model.nodes.len();
        let loop_total = model.nodes.iter().map(|f| f.max_repetitions).collect();
        let mut inst = Self {
            id,
            model,
            arrival_time,
            deadline,
            penalty_rate,
            steps,
            xor_choice: vec![0; n],
            loop_total,
            loop_done: vec![0; n],
        };
        inst.refresh();
        inst
    }

    /// Installs the branch choices and loop counts drawn by the simulator and
    /// restarts the instance from its first steps.
    pub fn set_choices(&mut self, xor_choice: Vec<usize>, loop_total: Vec<u32>) {
        self.xor_choice = xor_choice;
        self.loop_total = loop_total;
        self.reset(0);
        self.refresh();
    }

    pub fn node(&self, n: usize) -> &FlatNode {
        &self.model.nodes[n]
    }

    pub fn is_complete(&self, n: usize) -> bool {
        let node = self.node(n);
        match node.kind {
            NodeKind::Step => self.steps[node.step.unwrap()].status == StepStatus::Done,
            NodeKind::Sequence | NodeKind::And => node.children.iter().all(|&c| self.is_complete(c)),
            NodeKind::Xor => self.is_complete(node.children[self.xor_choice[n]]),
            NodeKind::Loop => self.loop_done[n] >= self.loop_total[n],
        }
    }

    pub fn is_finished(&self) -> bool {
        self.is_complete(0)
    }

    fn frontier(&self, n: usize, out: &mut Vec<usize>) {
        if self.is_complete(n) {
            return;
        }
        let node = self.node(n);
        match node.kind {
            NodeKind::Step => {
                let s = node.step.unwrap();
                if matches!(self.steps[s].status, StepStatus::Pending | StepStatus::Next) {
                    out.push(s);
                }
            }
            NodeKind::Sequence | NodeKind::Loop => {
                if let Some(&c) = node.children.iter().find(|&&c| !self.is_complete(c)) {
                    self.frontier(c, out);
                }
            }
            NodeKind::And => {
                for &c in &node.children {
                    self.frontier(c, out);
                }
            }
            NodeKind::Xor => self.frontier(node.children[self.xor_choice[n]], out),
        }
    }

    /// Steps whose structural predecessors are all done, excluding running
    /// and done steps.
    pub fn next_steps(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.frontier(0, &mut out);
        out
    }

    /// Next steps not yet bound to a VM.
    pub fn schedulable_steps(&self) -> Vec<usize> {
        self.next_steps().into_iter().filter(|&s| self.steps[s].status == StepStatus::Next).collect()
    }

    pub fn running_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.steps.len()).filter(|&s| self.steps[s].status == StepStatus::Running)
    }

    /// Promotes frontier steps to `Next`. Returns the newly promoted ids.
    pub fn refresh(&mut self) -> Vec<usize> {
        let mut promoted = Vec::new();
        for s in self.next_steps() {
            if self.steps[s].status == StepStatus::Pending {
                self.steps[s].status = StepStatus::Next;
                promoted.push(s);
            }
        }
        promoted
    }

    /// Marks `step` done, advances loops whose body completed and promotes
    /// the new frontier. Returns the newly promoted step ids.
    pub fn complete_step(&mut self, step: usize) -> Vec<usize> {
        let st = &mut self.steps[step];
        st.status = StepStatus::Done;
        st.assigned_vm = None;
        st.remaining_time = 0.0;
        st.executions += 1;
        self.settle(0);
        self.refresh()
    }

    fn settle(&mut self, n: usize) {
        let children = self.model.nodes[n].children.clone();
        for &c in &children {
            self.settle(c);
        }
        if self.model.nodes[n].kind == NodeKind::Loop && self.loop_done[n] < self.loop_total[n] && children.iter().all(|&c| self.is_complete(c)) {
            self.loop_done[n] += 1;
            if self.loop_done[n] < self.loop_total[n] {
                for &c in &children {
                    self.reset(c);
                }
            }
        }
    }

    fn reset(&mut self, n: usize) {
        let model = Arc::clone(&self.model);
        let node = &model.nodes[n];
        if let Some(s) = node.step {
            let st = &mut self.steps[s];
            st.status = StepStatus::Pending;
            st.scheduled_at = None;
            st.step_deadline = None;
        }
        self.loop_done[n] = 0;
        for &c in &node.children {
            self.reset(c);
        }
    }

    /// Whether the simulator's XOR choice at node `n` is already visible to
    /// the planner, i.e. the block has been entered.
    pub fn is_entered(&self, n: usize) -> bool {
        self.model.steps_under(n).iter().any(|&s| self.steps[s].status != StepStatus::Pending)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn svc(id: &str, cpu: f64, dur: f64) -> ServiceType {
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
            services: vec![svc("A", 45.0, 40.0), svc("B", 75.0, 80.0), svc("C", 75.0, 120.0)],
            vm_types: vec![VmType {
                id: "1".into(),
                provider: Provider::Private,
                cpu_supply: 100.0,
                ram_supply: 0.0,
                btu_length: 300.0,
                cost_per_btu: 10.0,
                startup_time: 60.0,
                pool_limit: Some(5),
            }],
        }
    }

    fn step(s: usize) -> WorkflowNode {
        WorkflowNode::Step { service: s }
    }

    #[test]
    fn paths_of_pure_sequence() {
        let m = ProcessModel::new(1, WorkflowNode::Sequence(vec![step(0), step(1), step(2)])).unwrap();
        let p = enumerate_paths(&m);
        assert_eq!(p.sequence, vec![vec![0, 1, 2]]);
        assert!(p.and_paths.is_empty() && p.xor_paths.is_empty() && p.loops.is_empty());
    }

    #[test]
    fn and_block_paths_and_loop_subpath() {
        let m = ProcessModel::new(1, WorkflowNode::And(vec![step(0), step(2)])).unwrap();
        assert_eq!(enumerate_paths(&m).and_paths, vec![vec![vec![0], vec![1]]]);
        let m = ProcessModel::new(
            2,
            WorkflowNode::Loop {
                body: vec![step(0)],
                max_repetitions: 3,
            },
        )
        .unwrap();
        assert_eq!(enumerate_paths(&m).loops, vec![(vec![0], 3)]);
    }

    #[test]
    fn makespan_examples() {
        let c = catalog();
        let seq = ProcessModel::new(1, WorkflowNode::Sequence(vec![step(0), step(1), step(2)])).unwrap();
        assert_eq!(average_makespan(&seq, &c), 240.0);
        let and = ProcessModel::new(2, WorkflowNode::And(vec![step(0), step(2)])).unwrap();
        assert_eq!(average_makespan(&and, &c), 120.0);
        let lp = ProcessModel::new(
            3,
            WorkflowNode::Loop {
                body: vec![step(0)],
                max_repetitions: 3,
            },
        )
        .unwrap();
        assert_eq!(average_makespan(&lp, &c), 120.0);
    }

    #[test]
    fn next_steps_follow_structure() {
        let c = catalog();
        let m = Arc::new(ProcessModel::new(1, WorkflowNode::Sequence(vec![step(0), WorkflowNode::And(vec![step(1), step(2)]), step(0)])).unwrap());
        let mut inst = ProcessInstance::new(0, m, &c, 0, 1000, 1.0);
        assert_eq!(inst.next_steps(), vec![0]);
        inst.steps[0].status = StepStatus::Running;
        assert!(inst.next_steps().is_empty());
        assert_eq!(inst.complete_step(0), vec![1, 2]);
        inst.complete_step(1);
        assert_eq!(inst.next_steps(), vec![2]);
        assert_eq!(inst.complete_step(2), vec![3]);
        inst.complete_step(3);
        assert!(inst.next_steps().is_empty());
        assert!(inst.is_finished());
    }

    #[test]
    fn loop_resets_body_until_total() {
        let c = catalog();
        let m = Arc::new(
            ProcessModel::new(
                1,
                WorkflowNode::Sequence(vec![
                    WorkflowNode::Loop {
                        body: vec![step(0), step(1)],
                        max_repetitions: 3,
                    },
                    step(2),
                ]),
            )
            .unwrap(),
        );
        let mut inst = ProcessInstance::new(0, m, &c, 0, 1000, 1.0);
        inst.loop_total[1] = 2;
        inst.complete_step(0);
        assert_eq!(inst.complete_step(1), vec![0]);
        assert_eq!(inst.loop_done[1], 1);
        inst.complete_step(0);
        assert_eq!(inst.complete_step(1), vec![2]);
        assert_eq!(inst.steps[0].executions, 2);
    }

    #[test]
    fn xor_only_exposes_chosen_branch() {
        let c = catalog();
        let m = Arc::new(ProcessModel::new(1, WorkflowNode::Xor(vec![step(0), WorkflowNode::Sequence(vec![step(1), step(2)])])).unwrap());
        let mut inst = ProcessInstance::new(0, m, &c, 0, 1000, 1.0);
        assert_eq!(inst.next_steps(), vec![0]);
        inst.xor_choice[0] = 1;
        inst.steps[0].status = StepStatus::Pending;
        inst.refresh();
        assert_eq!(inst.schedulable_steps(), vec![1]);
        inst.complete_step(1);
        inst.complete_step(2);
        assert!(inst.is_finished());
    }

    #[test]
    fn dangling_service_is_reported() {
        assert!(matches!(catalog().service_index("Z"), Err(CoreError::UnknownService(_))));
    }
}
