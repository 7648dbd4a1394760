//! Powertrain assignment and surrogate energy, GHG and PM2.5 accounting.
//!
//! Per-kilometer intensities come from a speed-binned lookup table standing
//! in for vehicle-model and well-to-wheel tools. The shipped table is
//! illustrative; any table with the same schema can replace it.

use std::collections::BTreeMap;
use std::io::Read;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::netmodel::Network;
use crate::seed;

/// Lower edges of the speed bins, km/h.
pub const SPEED_BINS_KMH: [f64; 8] = [0.0, 15.0, 30.0, 45.0, 60.0, 75.0, 90.0, 105.0];

const DEFAULT_TABLE: &str = include_str!("../data/powertrain_table.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Ld,
    Md,
    Hd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Powertrain {
    Ice,
    Hev,
    Bev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvLevel {
    Low,
    Med,
    High,
}

impl EvLevel {
    pub const ALL: [EvLevel; 3] = [EvLevel::Low, EvLevel::Med, EvLevel::High];

    pub fn name(self) -> &'static str {
        match self {
            EvLevel::Low => "low",
            EvLevel::Med => "med",
            EvLevel::High => "high",
        }
    }
}

/// BEV shares of the light-duty and medium/heavy-duty stocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetMix {
    pub ld_bev: f64,
    pub hdmd_bev: f64,
}

impl FleetMix {
    pub fn from_level(level: EvLevel) -> Self {
        match level {
            EvLevel::Low => FleetMix { ld_bev: 0.15, hdmd_bev: 0.10 },
            EvLevel::Med => FleetMix { ld_bev: 0.35, hdmd_bev: 0.25 },
            EvLevel::High => FleetMix { ld_bev: 0.75, hdmd_bev: 0.50 },
        }
    }

    pub fn bev_share(&self, class: VehicleClass) -> f64 {
        match class {
            VehicleClass::Ld => self.ld_bev,
            VehicleClass::Md | VehicleClass::Hd => self.hdmd_bev,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub intensity_kwh_per_km: f64,
    pub wtw_g_per_kwh: f64,
    pub pm25_exhaust_g_per_km: f64,
    pub pm25_wear_g_per_km: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("powertrain table line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("powertrain table has no rows for {0:?}/{1:?}")]
    Missing(VehicleClass, Powertrain),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Speed-binned intensities per (class, powertrain).
#[derive(Debug, Clone, PartialEq)]
pub struct PowertrainTable {
    rows: BTreeMap<(VehicleClass, Powertrain), BTreeMap<usize, TableRow>>,
}

#[derive(Deserialize)]
struct RawRow {
    class: VehicleClass,
    powertrain: Powertrain,
    speed_bin_kmh_lo: f64,
    intensity_kwh_per_km: f64,
    wtw_g_per_kwh: f64,
    pm25_exhaust_g_per_km: f64,
    pm25_wear_g_per_km: f64,
}

fn bin_of_kmh(kmh: f64) -> usize {
    SPEED_BINS_KMH.iter().rposition(|&lo| kmh >= lo).unwrap_or(0)
}

impl PowertrainTable {
    /// The shipped illustrative table.
    pub fn shipped() -> Self {
        PowertrainTable::read_csv(DEFAULT_TABLE.as_bytes()).expect("shipped table is valid")
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
        let mut rows: BTreeMap<_, BTreeMap<usize, TableRow>> = BTreeMap::new();
        for (i, rec) in rd.deserialize::<RawRow>().enumerate() {
            let line = i + 2;
            let raw = rec?;
            let bad = |msg: &str| TableError::Invalid { line, msg: msg.to_string() };
            if !(raw.intensity_kwh_per_km > 0.0) {
                return Err(bad("intensity must be positive"));
            }
            if raw.powertrain == Powertrain::Bev && raw.pm25_exhaust_g_per_km != 0.0 {
                return Err(bad("BEV exhaust PM2.5 must be zero"));
            }
            if raw.wtw_g_per_kwh < 0.0 || raw.pm25_exhaust_g_per_km < 0.0 || raw.pm25_wear_g_per_km < 0.0 {
                return Err(bad("factors must be non-negative"));
            }
            let bin = SPEED_BINS_KMH
                .iter()
                .position(|&lo| (lo - raw.speed_bin_kmh_lo).abs() < 1e-9)
                .ok_or_else(|| bad("speed_bin_kmh_lo is not a bin edge"))?;
            rows.entry((raw.class, raw.powertrain)).or_default().insert(
                bin,
                TableRow {
                    intensity_kwh_per_km: raw.intensity_kwh_per_km,
                    wtw_g_per_kwh: raw.wtw_g_per_kwh,
                    pm25_exhaust_g_per_km: raw.pm25_exhaust_g_per_km,
                    pm25_wear_g_per_km: raw.pm25_wear_g_per_km,
                },
            );
        }
        for class in [VehicleClass::Ld, VehicleClass::Md, VehicleClass::Hd] {
            for pt in [Powertrain::Ice, Powertrain::Hev, Powertrain::Bev] {
                if !rows.contains_key(&(class, pt)) {
                    return Err(TableError::Missing(class, pt));
                }
            }
        }
        Ok(PowertrainTable { rows })
    }

    /// Row for a link mean speed in m/s; absent bins fall back to the
    /// nearest present bin.
    pub fn lookup(&self, class: VehicleClass, pt: Powertrain, speed_mps: f64) -> TableRow {
        let bins = &self.rows[&(class, pt)];
        let bin = bin_of_kmh(speed_mps * 3.6);
        if let Some(r) = bins.get(&bin) {
            return *r;
        }
        let (_, r) = bins.iter().min_by_key(|(b, _)| (b.abs_diff(bin), **b)).expect("non-empty");
        log::debug!("no {class:?}/{pt:?} row for speed bin {bin}; using nearest");
        *r
    }

    /// Well-to-wheel factor for a powertrain, taken from its first row.
    pub fn wtw(&self, class: VehicleClass, pt: Powertrain) -> f64 {
        self.rows[&(class, pt)].values().next().expect("non-empty").wtw_g_per_kwh
    }
}

/// BEV/HEV/ICE powertrains for a vehicle stock. BEVs per class are
/// `share·N` rounded half up; the rest split between HEV and ICE by
/// largest remainder using `hev_fraction`. Which vehicle gets which
/// powertrain follows a seeded shuffle.
pub fn assign_powertrains(vehicles: &[VehicleClass], mix: FleetMix, hev_fraction: f64, seed_value: u64) -> Vec<Powertrain> {
    let mut out = vec![Powertrain::Ice; vehicles.len()];
    for class in [VehicleClass::Ld, VehicleClass::Md, VehicleClass::Hd] {
        let mut idx: Vec<usize> = (0..vehicles.len()).filter(|&i| vehicles[i] == class).collect();
        let n = idx.len();
        if n == 0 {
            continue;
        }
        let bev = ((mix.bev_share(class) * n as f64) + 0.5).floor().min(n as f64) as usize;
        let rest = n - bev;
        let hev_quota = hev_fraction * rest as f64;
        let ice_quota = rest as f64 - hev_quota;
        let mut hev = hev_quota.floor() as usize;
        if hev + (ice_quota.floor() as usize) < rest && hev_quota.fract() >= ice_quota.fract() {
            hev += 1;
        }
        let mut rng = seed::rng(&[seed_value, seed::tag("powertrain"), class as u64]);
        idx.shuffle(&mut rng);
        for (k, &i) in idx.iter().enumerate() {
            out[i] = if k < bev {
                Powertrain::Bev
            } else if k < bev + hev {
                Powertrain::Hev
            } else {
                Powertrain::Ice
            };
        }
    }
    out
}

/// One traversed link: length in m and mean speed in m/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkTraversal {
    pub link: usize,
    pub length: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Emissions {
    pub kwh: f64,
    pub ghg_g: f64,
    pub pm25_g: f64,
}

/// Energy of a trip: Σ length_km × intensity at the link's speed bin.
pub fn trip_energy(traversals: &[LinkTraversal], class: VehicleClass, pt: Powertrain, table: &PowertrainTable) -> f64 {
    traversals.iter().map(|t| t.length / 1000.0 * table.lookup(class, pt, t.speed).intensity_kwh_per_km).sum()
}

pub fn trip_ghg(kwh: f64, class: VehicleClass, pt: Powertrain, table: &PowertrainTable) -> f64 {
    kwh * table.wtw(class, pt)
}

/// Per-link energy, GHG and PM2.5 (exhaust plus wear) of one traversal.
pub fn link_emissions(t: &LinkTraversal, class: VehicleClass, pt: Powertrain, table: &PowertrainTable) -> Emissions {
    let row = table.lookup(class, pt, t.speed);
    let km = t.length / 1000.0;
    let kwh = km * row.intensity_kwh_per_km;
    Emissions {
        kwh,
        ghg_g: kwh * table.wtw(class, pt),
        pm25_g: km * (row.pm25_exhaust_g_per_km + row.pm25_wear_g_per_km),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneExposure {
    pub grams: f64,
    /// g per resident; `None` for zones without population.
    pub per_capita: Option<f64>,
}

/// Zone PM2.5 from per-link grams, assigning each link to its midpoint
/// zone.
pub fn pm25_by_zone(link_grams: &[f64], net: &Network) -> Vec<ZoneExposure> {
    let mut grams = vec![0.0; net.zones.len()];
    for (l, &g) in link_grams.iter().enumerate() {
        grams[net.zone_of_link(l)] += g;
    }
    grams
        .into_iter()
        .zip(&net.zones)
        .map(|(g, z)| ZoneExposure { grams: g, per_capita: (z.population > 0).then(|| g / z.population as f64) })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MepParams {
    /// Time decay, 1/min.
    pub beta: f64,
    /// Energy penalty, 1/kWh.
    pub gamma: f64,
}

impl Default for MepParams {
    fn default() -> Self {
        MepParams { beta: 0.08, gamma: 0.5 }
    }
}

/// Simplified mobility energy productivity of one origin zone:
/// Σ_modes Σ_j opportunities_j · exp(−β·t) / (1 + γ·e), with `times_min` and
/// `energy_kwh` holding one row per mode (entries per destination zone).
/// Unreachable cells carry infinite time and contribute nothing.
pub fn mep_simplified(opportunities: &[f64], times_min: &[Vec<f64>], energy_kwh: &[Vec<f64>], params: MepParams) -> f64 {
    let mut total = 0.0;
    for (times, energies) in times_min.iter().zip(energy_kwh) {
        for ((&o, &t), &e) in opportunities.iter().zip(times).zip(energies) {
            if t.is_finite() {
                total += o * (-params.beta * t).exp() / (1.0 + params.gamma * e);
            }
        }
    }
    total
}
