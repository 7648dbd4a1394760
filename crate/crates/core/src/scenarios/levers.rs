use serde::{Deserialize, Serialize};

use crate::clock::{self, HOUR};
use crate::demand::EcommLevel;
use crate::energy::EvLevel;
use crate::netmodel::{Agency, Network};
use crate::seed;

pub const TELECOMMUTE_RATE: f64 = 0.15;
pub const CACC_SHARE: f64 = 0.40;

/// One cell of the full-factorial design. Telecommuting and CACC
/// penetration are fixed context shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeverSettings {
    pub pricing: bool,
    pub transit: bool,
    pub signals: bool,
    pub tnc_policy: bool,
    pub ohd: bool,
    pub ecomm_level: EcommLevel,
    pub ev_level: EvLevel,
}

impl LeverSettings {
    pub const fn telecommute(&self) -> f64 {
        TELECOMMUTE_RATE
    }

    pub const fn cacc_share(&self) -> f64 {
        CACC_SHARE
    }

    /// All levers off at the given demand cell.
    pub fn bau(ecomm_level: EcommLevel, ev_level: EvLevel) -> Self {
        LeverSettings { pricing: false, transit: false, signals: false, tnc_policy: false, ohd: false, ecomm_level, ev_level }
    }

    pub fn is_bau(&self) -> bool {
        !(self.pricing || self.transit || self.signals || self.tnc_policy || self.ohd)
    }

    /// The same demand cell with supply levers off.
    pub fn baseline(&self) -> Self {
        LeverSettings::bau(self.ecomm_level, self.ev_level)
    }

    fn code(&self) -> u64 {
        let bits = [self.pricing, self.transit, self.signals, self.tnc_policy, self.ohd];
        let supply = bits.iter().enumerate().fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i));
        supply | ((self.ecomm_level as u64) << 5) | ((self.ev_level as u64) << 6)
    }

    /// Every cell of the design: supply bits vary fastest in the order
    /// pricing, transit, signals, tnc, ohd, then e-commerce, then EV.
    pub fn all() -> Vec<LeverSettings> {
        let mut out = Vec::with_capacity(192);
        for ev_level in [EvLevel::Low, EvLevel::Med, EvLevel::High] {
            for ecomm_level in [EcommLevel::Low, EcommLevel::High] {
                for bits in 0u32..32 {
                    out.push(LeverSettings {
                        pricing: bits & 1 != 0,
                        transit: bits & 2 != 0,
                        signals: bits & 4 != 0,
                        tnc_policy: bits & 8 != 0,
                        ohd: bits & 16 != 0,
                        ecomm_level,
                        ev_level,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub settings: LeverSettings,
    pub replication: u32,
    /// Seed of this plan, derived from settings, replication and master
    /// seed.
    pub seed: u64,
    /// Seed shared by every plan of the replication (common random
    /// numbers for population, demand and freight).
    pub common_seed: u64,
    pub master_seed: u64,
    pub max_iterations: u32,
    pub gap_threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoeConfig {
    pub replications: u32,
    pub master_seed: u64,
    pub max_iterations: u32,
    pub gap_threshold: f64,
}

impl Default for DoeConfig {
    fn default() -> Self {
        DoeConfig { replications: 1, master_seed: 1, max_iterations: 20, gap_threshold: 0.03 }
    }
}

pub fn replication_seed(master: u64, replication: u32) -> u64 {
    seed::derive(&[master, seed::tag("replication"), replication as u64])
}

impl ScenarioPlan {
    pub fn new(settings: LeverSettings, replication: u32, cfg: &DoeConfig) -> Self {
        ScenarioPlan {
            settings,
            replication,
            seed: seed::derive(&[cfg.master_seed, settings.code(), replication as u64]),
            common_seed: replication_seed(cfg.master_seed, replication),
            master_seed: cfg.master_seed,
            max_iterations: cfg.max_iterations,
            gap_threshold: cfg.gap_threshold,
        }
    }

    /// The all-levers-off plan of the same demand cell and replication.
    pub fn baseline(&self) -> ScenarioPlan {
        let cfg = DoeConfig {
            replications: self.replication + 1,
            master_seed: self.master_seed,
            max_iterations: self.max_iterations,
            gap_threshold: self.gap_threshold,
        };
        ScenarioPlan::new(self.settings.baseline(), self.replication, &cfg)
    }

    /// Position of the settings in [`LeverSettings::all`].
    pub fn cell_index(&self) -> usize {
        cell_index(&self.settings)
    }
}

pub fn cell_index(s: &LeverSettings) -> usize {
    let bits = [s.pricing, s.transit, s.signals, s.tnc_policy, s.ohd];
    let supply = bits.iter().enumerate().fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
    (s.ev_level as usize * 2 + s.ecomm_level as usize) * 32 + supply
}

/// All 192·R plans, ordered by replication then settings.
pub fn enumerate_doe(cfg: &DoeConfig) -> Vec<ScenarioPlan> {
    let cells = LeverSettings::all();
    (0..cfg.replications).flat_map(|r| cells.iter().map(move |&s| ScenarioPlan::new(s, r, cfg))).collect()
}

/// One schedule or speed change made by the transit lever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitEdit {
    pub route: u32,
    pub field: String,
    /// Clock hour the edit applies to, for hourly headways.
    pub hour: Option<u32>,
    pub before: f64,
    pub after: f64,
}

pub const BUS_SPEEDUP: f64 = 1.3;
pub const SUBURBAN_FREQUENCY_GAIN: f64 = 1.4;
pub const RAIL_MAX_HEADWAY: f64 = 30.0;
pub const RAIL_WINDOW: (f64, f64) = (6.0 * HOUR, 22.0 * HOUR);

/// Improved transit service: faster and more frequent improvable urban
/// buses, more frequent suburban buses, and a headway cap on commuter
/// rail during the day.
pub fn apply_transit_lever(net: &Network) -> (Network, Vec<TransitEdit>) {
    let mut edits = Vec::new();
    let mut routes = net.routes.clone();
    for r in &mut routes {
        let mut edit = |field: &str, hour: Option<u32>, before: f64, after: f64| {
            edits.push(TransitEdit { route: r.id, field: field.into(), hour, before, after });
        };
        match r.agency {
            Agency::UrbanBus if r.improvable => {
                let speed = r.speed * BUS_SPEEDUP;
                edit("speed", None, r.speed, speed);
                r.speed = speed;
                let n = r.headways.len();
                for (i, h) in r.headways.iter_mut().enumerate() {
                    let after = *h / BUS_SPEEDUP;
                    edit("headway", hour_label(i, n), *h, after);
                    *h = after;
                }
            }
            Agency::SuburbanBus => {
                let n = r.headways.len();
                for (i, h) in r.headways.iter_mut().enumerate() {
                    let after = *h / SUBURBAN_FREQUENCY_GAIN;
                    edit("headway", hour_label(i, n), *h, after);
                    *h = after;
                }
            }
            Agency::CommuterRail => {
                if r.headways.len() == 1 {
                    r.headways = vec![r.headways[0]; clock::NUM_HOURS];
                }
                for (i, h) in r.headways.iter_mut().enumerate() {
                    let t = clock::HORIZON_START + i as f64 * HOUR;
                    if t >= RAIL_WINDOW.0 && t < RAIL_WINDOW.1 && *h > RAIL_MAX_HEADWAY {
                        edit("headway", hour_label(i, clock::NUM_HOURS), *h, RAIL_MAX_HEADWAY);
                        *h = RAIL_MAX_HEADWAY;
                    }
                }
            }
            _ => {}
        }
    }
    for e in &edits {
        log::debug!("transit lever: route {} {} {:?}: {} -> {}", e.route, e.field, e.hour, e.before, e.after);
    }
    (net.with_routes(routes), edits)
}

fn hour_label(i: usize, len: usize) -> Option<u32> {
    (len > 1).then(|| ((clock::HORIZON_START / HOUR) as u32 + i as u32) % 24)
}

pub const TRANSIT_SHARE: f64 = 0.20;

/// Split toll revenue into (transit budget, rebate pool).
pub fn allocate_revenue(revenue: f64, transit_lever: bool) -> (f64, f64) {
    if transit_lever {
        let budget = TRANSIT_SHARE * revenue;
        (budget, revenue - budget)
    } else {
        (0.0, revenue)
    }
}

/// Equal rebate per bottom-quintile person; zero when there are none.
pub fn rebate_per_person(pool: f64, bottom_quintile_persons: usize) -> f64 {
    if bottom_quintile_persons == 0 {
        0.0
    } else {
        pool / bottom_quintile_persons as f64
    }
}
