//! Lever settings, derived lever artifacts and the scenario runner.

mod batch;
mod engine;
mod levers;
mod tolls;

use serde::{Deserialize, Serialize};

pub use batch::{run_batch, run_single, BatchInputs, BatchResult};
pub use engine::{
    derive_artifacts, run_scenario, EngineConfig, PlanArtifacts, ScenarioError, ScenarioInputs, ScenarioLog, ScenarioOutcome,
};
pub use levers::{
    allocate_revenue, apply_transit_lever, cell_index, enumerate_doe, rebate_per_person, replication_seed, DoeConfig,
    LeverSettings, ScenarioPlan, TransitEdit, BUS_SPEEDUP, CACC_SHARE, RAIL_MAX_HEADWAY, RAIL_WINDOW,
    SUBURBAN_FREQUENCY_GAIN, TELECOMMUTE_RATE, TRANSIT_SHARE,
};
pub use tolls::{compute_toll_profile, TollError, TollProfile};

use crate::demand::PopulationSpec;

/// Scenario config file: design size and seeds, the population to
/// synthesize, engine parameters and, for single runs, the lever vector.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub doe: DoeConfig,
    pub population: PopulationSpec,
    pub engine: EngineConfig,
    pub levers: Option<LeverSettings>,
    pub replication: u32,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
