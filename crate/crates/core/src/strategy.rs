//! Placement approaches selectable by name at runtime.

use std::collections::BTreeMap;

use crate::baseline::build_baseline;
use crate::error::{CoreError, CoreResult};
use crate::ffsipp::{build, BuiltModel, OptimizerConfig, SchedulingState};

pub trait PlacementStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn build(&self, state: &SchedulingState, config: &OptimizerConfig) -> CoreResult<BuiltModel>;

    /// Containers whose invocations all finished stay deployed.
    fn retains_idle_containers(&self) -> bool;

    /// Stopping a container also discards its image.
    fn drops_images_on_stop(&self) -> bool;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Ffsipp;

impl PlacementStrategy for Ffsipp {
    fn name(&self) -> &'static str {
        "ffsipp"
    }

    fn build(&self, state: &SchedulingState, config: &OptimizerConfig) -> CoreResult<BuiltModel> {
        build(state, config)
    }

    fn retains_idle_containers(&self) -> bool {
        false
    }

    fn drops_images_on_stop(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sipp;

impl PlacementStrategy for Sipp {
    fn name(&self) -> &'static str {
        "sipp"
    }

    fn build(&self, state: &SchedulingState, config: &OptimizerConfig) -> CoreResult<BuiltModel> {
        build_baseline(state, config)
    }

    fn retains_idle_containers(&self) -> bool {
        true
    }

    fn drops_images_on_stop(&self) -> bool {
        true
    }
}

#[derive(Default)]
pub struct StrategyRegistry {
    strategies: BTreeMap<&'static str, Box<dyn PlacementStrategy>>,
}

impl StrategyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding `ffsipp` and `sipp`.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Box::new(Ffsipp));
        r.register(Box::new(Sipp));
        r
    }

    pub fn register(&mut self, strategy: Box<dyn PlacementStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn get(&self, name: &str) -> CoreResult<&dyn PlacementStrategy> {
        self.strategies.get(name).map(|s| s.as_ref()).ok_or_else(|| CoreError::UnknownStrategy(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.strategies.keys().copied()
    }
}
