use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock;
use crate::demand::{EcommLevel, Population, METERS_PER_MILE};
use crate::energy::{link_emissions, pm25_by_zone, EvLevel, LinkTraversal, Powertrain, PowertrainTable, VehicleClass};
use crate::flowsim::ExitRecord;
use crate::netmodel::{LinkClass, Network};
use crate::router::Mode;
use crate::scenarios::{allocate_revenue, rebate_per_person, LeverSettings, TollProfile};

/// Who drives a simulated leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegKind {
    Private,
    Tnc,
    Cargo,
    Freight,
    Parcel,
}

/// One vehicle movement loaded onto the network; indexed by its tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegInfo {
    pub kind: LegKind,
    pub class: VehicleClass,
    pub powertrain: Powertrain,
    /// Carries a person to an activity, a passenger or goods.
    pub productive: bool,
    /// Person paying operating cost and tolls (private drives).
    pub person: Option<u32>,
}

/// A vehicle still on a link when the run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenTraversal {
    pub tag: u64,
    pub link: usize,
    pub t_in: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTrip {
    pub person: u32,
    pub mode: Mode,
    /// Reached its activity.
    pub reached: bool,
    /// Network leg of a private drive.
    pub leg: Option<u64>,
    /// Person-meters travelled off the road network (transit, walking).
    pub offnet_distance: f64,
    /// Door-to-door time, s.
    pub time: f64,
    pub fare: f64,
    pub parking: f64,
}

/// Everything a day of simulation leaves behind for metric accounting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayLog {
    pub legs: Vec<LegInfo>,
    pub exits: Vec<ExitRecord>,
    pub open: Vec<OpenTraversal>,
    pub trips: Vec<PersonTrip>,
    pub fmlm_subsidy: f64,
    pub overnight_freight_tours: usize,
    /// Accessibility score per zone.
    pub mep_by_zone: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("missing log: {0}")]
    MissingLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    /// Vehicle operating cost, $/mi.
    pub operating_cost_per_mi: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { operating_cost_per_mi: 0.2 }
    }
}

/// One person's daily travel cost components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PersonCost {
    pub quintile: u8,
    pub operating: f64,
    pub fares: f64,
    pub tolls: f64,
    pub parking: f64,
    pub travel_hours: f64,
    /// $/h.
    pub vot: f64,
    pub rebate: f64,
}

impl PersonCost {
    pub fn total(&self) -> f64 {
        self.operating + self.fares + self.tolls + self.parking + self.travel_hours * self.vot - self.rebate
    }
}

/// Mean daily cost per person within each income quintile; may be
/// negative when rebates exceed costs. Empty quintiles report 0.
pub fn cost_burden(ledger: &[PersonCost]) -> [f64; 5] {
    let mut sum = [0.0; 5];
    let mut n = [0usize; 5];
    for p in ledger {
        let q = (p.quintile.clamp(1, 5) - 1) as usize;
        sum[q] += p.total();
        n[q] += 1;
    }
    std::array::from_fn(|q| if n[q] > 0 { sum[q] / n[q] as f64 } else { 0.0 })
}

mod bit {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(serde::de::Error::custom(format!("expected 0 or 1, got {other:?}"))),
        }
    }
}

/// Region-level outcomes of one scenario replication. Column order is
/// the batch table contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    #[serde(with = "bit")]
    pub pricing: bool,
    #[serde(with = "bit")]
    pub transit: bool,
    #[serde(with = "bit")]
    pub signals: bool,
    #[serde(with = "bit")]
    pub tnc: bool,
    #[serde(with = "bit")]
    pub ohd: bool,
    pub ecomm: EcommLevel,
    pub ev: EvLevel,
    pub replication: u32,
    pub seed: u64,
    pub vmt: f64,
    pub vht: f64,
    pub productive_miles: f64,
    pub trips: u64,
    pub peak_expressway_vht_share: f64,
    pub energy_kwh: f64,
    pub ghg_g: f64,
    pub ghg_g_per_mi: f64,
    pub efficiency_mi_per_kwh: Option<f64>,
    pub mep: f64,
    pub pm25_dac_g_per_person: f64,
    pub pm25_nondac_g_per_person: f64,
    pub cost_q1: f64,
    pub cost_q2: f64,
    pub cost_q3: f64,
    pub cost_q4: f64,
    pub cost_q5: f64,
    pub toll_revenue: f64,
    pub fmlm_subsidy: f64,
    pub overnight_freight_tours: u64,
    pub iterations: u32,
    #[serde(with = "bit")]
    pub converged: bool,
    pub gap: f64,
    pub error: String,
}

impl MetricsRow {
    /// Row with zero outcomes, used for empty days and failed plans.
    pub fn zero(settings: &LeverSettings, replication: u32, seed: u64) -> Self {
        MetricsRow {
            pricing: settings.pricing,
            transit: settings.transit,
            signals: settings.signals,
            tnc: settings.tnc_policy,
            ohd: settings.ohd,
            ecomm: settings.ecomm_level,
            ev: settings.ev_level,
            replication,
            seed,
            vmt: 0.0,
            vht: 0.0,
            productive_miles: 0.0,
            trips: 0,
            peak_expressway_vht_share: 0.0,
            energy_kwh: 0.0,
            ghg_g: 0.0,
            ghg_g_per_mi: 0.0,
            efficiency_mi_per_kwh: None,
            mep: 0.0,
            pm25_dac_g_per_person: 0.0,
            pm25_nondac_g_per_person: 0.0,
            cost_q1: 0.0,
            cost_q2: 0.0,
            cost_q3: 0.0,
            cost_q4: 0.0,
            cost_q5: 0.0,
            toll_revenue: 0.0,
            fmlm_subsidy: 0.0,
            overnight_freight_tours: 0,
            iterations: 0,
            converged: false,
            gap: 0.0,
            error: String::new(),
        }
    }

    pub fn settings(&self) -> LeverSettings {
        LeverSettings {
            pricing: self.pricing,
            transit: self.transit,
            signals: self.signals,
            tnc_policy: self.tnc,
            ohd: self.ohd,
            ecomm_level: self.ecomm,
            ev_level: self.ev,
        }
    }

    pub fn costs(&self) -> [f64; 5] {
        [self.cost_q1, self.cost_q2, self.cost_q3, self.cost_q4, self.cost_q5]
    }

    /// Numeric value of a metric column by name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "vmt" => self.vmt,
            "vht" => self.vht,
            "productive_miles" => self.productive_miles,
            "trips" => self.trips as f64,
            "peak_expressway_vht_share" => self.peak_expressway_vht_share,
            "energy_kwh" => self.energy_kwh,
            "ghg_g" => self.ghg_g,
            "ghg_g_per_mi" => self.ghg_g_per_mi,
            "efficiency_mi_per_kwh" => self.efficiency_mi_per_kwh?,
            "mep" => self.mep,
            "pm25_dac_g_per_person" => self.pm25_dac_g_per_person,
            "pm25_nondac_g_per_person" => self.pm25_nondac_g_per_person,
            "cost_q1" => self.cost_q1,
            "cost_q2" => self.cost_q2,
            "cost_q3" => self.cost_q3,
            "cost_q4" => self.cost_q4,
            "cost_q5" => self.cost_q5,
            "toll_revenue" => self.toll_revenue,
            "fmlm_subsidy" => self.fmlm_subsidy,
            "overnight_freight_tours" => self.overnight_freight_tours as f64,
            _ => return None,
        })
    }

    pub fn failed(&self) -> bool {
        !self.error.is_empty()
    }
}

/// Names accepted by [`MetricsRow::metric`].
pub const METRIC_NAMES: &[&str] = &[
    "vmt",
    "vht",
    "productive_miles",
    "trips",
    "peak_expressway_vht_share",
    "energy_kwh",
    "ghg_g",
    "ghg_g_per_mi",
    "efficiency_mi_per_kwh",
    "mep",
    "pm25_dac_g_per_person",
    "pm25_nondac_g_per_person",
    "cost_q1",
    "cost_q2",
    "cost_q3",
    "cost_q4",
    "cost_q5",
    "toll_revenue",
    "fmlm_subsidy",
    "overnight_freight_tours",
];

pub fn write_metrics<W: Write>(rows: &[MetricsRow], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics<R: Read>(r: R) -> csv::Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Inputs besides the day log that metric accounting needs.
pub struct MetricInputs<'a> {
    pub settings: &'a LeverSettings,
    pub replication: u32,
    pub seed: u64,
    pub population: &'a Population,
    pub net: &'a Network,
    pub table: &'a PowertrainTable,
    pub tolls: &'a TollProfile,
    pub costs: CostParams,
}

/// Fold a day log into a metrics row. Convergence fields are left for
/// the caller.
pub fn aggregate_metrics(log: &DayLog, inp: &MetricInputs) -> Result<MetricsRow, MetricsError> {
    let net = inp.net;
    let pop = inp.population;
    let mut row = MetricsRow::zero(inp.settings, inp.replication, inp.seed);
    let mut costs: Vec<PersonCost> = pop
        .persons
        .iter()
        .map(|p| PersonCost { quintile: p.income_quintile, vot: p.vot, ..Default::default() })
        .collect();
    let person_slot = |id: u32| -> Result<usize, MetricsError> {
        let i = id as usize;
        (i < pop.persons.len() && pop.persons[i].id == id)
            .then_some(i)
            .ok_or_else(|| MetricsError::MissingLog(format!("population (person {id})")))
    };

    let mut link_pm = vec![0.0; net.links.len()];
    let (mut meters, mut seconds, mut productive_m) = (0.0, 0.0, 0.0);
    let (mut peak_s, mut peak_expr_s) = (0.0, 0.0);
    let (mut kwh, mut ghg, mut revenue) = (0.0, 0.0, 0.0);
    let mut leg_tolls = vec![0.0; log.legs.len()];
    let mut leg_meters = vec![0.0; log.legs.len()];
    let mut peak = |link: usize, t_in: f64, dur: f64| {
        if clock::is_peak(t_in) {
            peak_s += dur;
            if net.links[link].class == LinkClass::Expressway {
                peak_expr_s += dur;
            }
        }
    };
    for e in &log.exits {
        let leg = log
            .legs
            .get(e.tag as usize)
            .ok_or_else(|| MetricsError::MissingLog(format!("vehicle registry (tag {})", e.tag)))?;
        let length = net.links[e.link].length;
        let dur = (e.t_out - e.t_in).max(0.0);
        meters += length;
        seconds += dur;
        peak(e.link, e.t_in, dur);
        if leg.productive {
            productive_m += length;
        }
        let speed = if dur > 0.0 { length / dur } else { net.links[e.link].free_flow_speed };
        let em = link_emissions(&LinkTraversal { link: e.link, length, speed }, leg.class, leg.powertrain, inp.table);
        kwh += em.kwh;
        ghg += em.ghg_g;
        link_pm[e.link] += em.pm25_g;
        let toll = inp.tolls.toll(e.link, e.t_in);
        revenue += toll;
        leg_tolls[e.tag as usize] += toll;
        leg_meters[e.tag as usize] += length;
    }
    for o in &log.open {
        if o.tag as usize >= log.legs.len() {
            return Err(MetricsError::MissingLog(format!("vehicle registry (tag {})", o.tag)));
        }
        let dur = (o.t_end - o.t_in).max(0.0);
        seconds += dur;
        peak(o.link, o.t_in, dur);
    }
    for (tag, leg) in log.legs.iter().enumerate() {
        if let (LegKind::Private, Some(pid)) = (leg.kind, leg.person) {
            let c = &mut costs[person_slot(pid)?];
            c.operating += inp.costs.operating_cost_per_mi * leg_meters[tag] / METERS_PER_MILE;
            c.tolls += leg_tolls[tag];
        }
    }
    for t in &log.trips {
        let c = &mut costs[person_slot(t.person)?];
        c.fares += t.fare;
        c.parking += t.parking;
        c.travel_hours += t.time / clock::HOUR;
        if t.reached {
            productive_m += t.offnet_distance;
        }
    }

    let (_, pool) = allocate_revenue(revenue, inp.settings.transit);
    let bottom = costs.iter().filter(|c| c.quintile == 1).count();
    let rebate = rebate_per_person(pool, bottom);
    for c in costs.iter_mut().filter(|c| c.quintile == 1) {
        c.rebate = rebate;
    }
    let burden = cost_burden(&costs);

    let zones = pm25_by_zone(&link_pm, net);
    let (mut dac_g, mut dac_n, mut other_g, mut other_n) = (0.0, 0usize, 0.0, 0usize);
    for (z, zone) in net.zones.iter().enumerate() {
        if zone.dac {
            dac_g += zones[z].grams;
        } else {
            other_g += zones[z].grams;
        }
    }
    let mut mep_sum = 0.0;
    for p in &pop.persons {
        if net.zones[p.home_zone].dac {
            dac_n += 1;
        } else {
            other_n += 1;
        }
        mep_sum += log.mep_by_zone.get(p.home_zone).copied().unwrap_or(0.0);
    }

    row.vmt = meters / METERS_PER_MILE;
    row.vht = seconds / clock::HOUR;
    row.productive_miles = productive_m / METERS_PER_MILE;
    row.trips = log.trips.len() as u64;
    row.peak_expressway_vht_share = if peak_s > 0.0 { peak_expr_s / peak_s } else { 0.0 };
    row.energy_kwh = kwh;
    row.ghg_g = ghg;
    row.ghg_g_per_mi = if row.vmt > 0.0 { ghg / row.vmt } else { 0.0 };
    row.efficiency_mi_per_kwh = (kwh > 0.0).then(|| row.productive_miles / kwh);
    row.mep = if pop.persons.is_empty() { 0.0 } else { mep_sum / pop.persons.len() as f64 };
    row.pm25_dac_g_per_person = if dac_n > 0 && dac_g > 0.0 { dac_g / dac_n as f64 } else { 0.0 };
    row.pm25_nondac_g_per_person = if other_n > 0 && other_g > 0.0 { other_g / other_n as f64 } else { 0.0 };
    [row.cost_q1, row.cost_q2, row.cost_q3, row.cost_q4, row.cost_q5] = burden;
    row.toll_revenue = revenue;
    row.fmlm_subsidy = log.fmlm_subsidy;
    row.overnight_freight_tours = log.overnight_freight_tours as u64;
    Ok(row)
}
