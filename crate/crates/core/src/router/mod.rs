//! Time-dependent generalized-cost routing with information mixing between
//! prevailing conditions and travel times learned over past iterations.

mod astar;
mod skims;
mod table;
mod transit;

use serde::{Deserialize, Serialize};

pub use astar::{shortest_path_td, static_lower_bounds, turn_cost, AStar, RouteQuery, TurnCost};
pub use skims::{compute_skims, SkimBand, Skims};
pub use table::{TravelTimeTable, TableError};
pub use transit::{transit_path_cost, TransitLeg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Drive,
    Transit,
    Walk,
    Tnc,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Drive, Mode::Transit, Mode::Walk, Mode::Tnc];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Drive => "drive",
            Mode::Transit => "transit",
            Mode::Walk => "walk",
            Mode::Tnc => "tnc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Value of time, $/h.
    pub vot: f64,
    /// Mode-specific constants, $ per trip, indexed by [`Mode::index`].
    pub mode_constants: [f64; 4],
    pub transfer_penalty: f64,
    pub theta0: f64,
    /// Distance scale of the mixing weight, m.
    pub distance_scale: f64,
    pub theta_min: f64,
    pub walk_speed: f64,
    /// Access and egress radius for transit stops, m.
    pub walk_radius: f64,
    /// Largest walk between stops at a transfer, m.
    pub transfer_radius: f64,
    /// Cap on expected wait, s.
    pub wait_cap: f64,
    /// Flat transit fare per trip, $.
    pub transit_fare: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            vot: 18.0,
            mode_constants: [0.0; 4],
            transfer_penalty: 300.0,
            theta0: 1.0,
            distance_scale: 5000.0,
            theta_min: 0.05,
            walk_speed: 1.3,
            walk_radius: 800.0,
            transfer_radius: 400.0,
            wait_cap: 1800.0,
            transit_fare: 2.25,
        }
    }
}

impl CostParams {
    /// Dollars per second of travel.
    pub fn dollars_per_second(&self) -> f64 {
        self.vot / 3600.0
    }
}

/// Weight on prevailing conditions for a link `distance` meters from the
/// trip origin at DTA iteration `iteration`.
pub fn mix_weight(iteration: u32, distance: f64, params: &CostParams) -> f64 {
    let theta = params.theta0 / (1.0 + iteration as f64) * (-distance / params.distance_scale).exp();
    theta.max(params.theta_min).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub mode: Mode,
    /// Link indices for road modes; empty for transit and walk.
    pub links: Vec<usize>,
    /// Transit legs, in order.
    pub legs: Vec<TransitLeg>,
    pub depart: f64,
    pub arrival: f64,
    pub time_cost: f64,
    pub toll_cost: f64,
    pub fare_cost: f64,
}

impl Path {
    pub fn cost(&self) -> f64 {
        self.time_cost + self.toll_cost + self.fare_cost
    }

    pub fn duration(&self) -> f64 {
        self.arrival - self.depart
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum NoPath {
    #[error("destination not reachable on the road network")]
    Disconnected,
    #[error("no transit service")]
    NoTransitService,
    #[error("no transit stop within walking distance")]
    NoStopInRadius,
}

/// Relative gap between experienced and shortest costs, with each trip's
/// experienced cost floored at its shortest cost.
pub fn relative_gap(pairs: &[(f64, f64)]) -> f64 {
    let (excess, total) = pairs.iter().fold((0.0, 0.0), |(e, s), &(exp, short)| (e + (exp.max(short) - short), s + short));
    if total > 0.0 {
        excess / total
    } else {
        0.0
    }
}
