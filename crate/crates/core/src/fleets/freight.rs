use std::io::Read;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{self, HOUR, OVERNIGHT_END, OVERNIGHT_START};
use crate::energy::VehicleClass;
use crate::netmodel::Network;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub id: u32,
    /// Zone index.
    pub zone: usize,
    /// Node index.
    pub node: usize,
    pub ohd_accepting: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shipment {
    pub id: u32,
    /// Business receiver; household parcels have none.
    pub receiver: Option<u32>,
    /// Node index.
    pub node: usize,
    pub size: u32,
    pub window: (f64, f64),
    /// Window requested before any off-hours rewrite.
    pub day_window: (f64, f64),
    pub class: VehicleClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepotKind {
    Parcel,
    Freight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depot {
    pub id: u32,
    /// Node index.
    pub node: usize,
    pub kind: DepotKind,
}

#[derive(Debug, Error)]
pub enum DepotError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: unknown node id {node}")]
    UnknownNode { line: usize, node: u32 },
}

#[derive(Deserialize)]
struct DepotRow {
    depot_id: u32,
    node_id: u32,
    kind: DepotKind,
}

/// Depot table with columns `depot_id,node_id,kind`.
pub fn read_depots<R: Read>(net: &Network, r: R) -> Result<Vec<Depot>, DepotError> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (i, row) in rd.deserialize().enumerate() {
        let row: DepotRow = row?;
        let node = net.node_idx(row.node_id).ok_or(DepotError::UnknownNode { line: i + 2, node: row.node_id })?;
        out.push(Depot { id: row.depot_id, node, kind: row.kind });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreightSpec {
    /// Receivers per unit of zone opportunities.
    pub receivers_per_opportunity: f64,
    /// Probability a receiver gets a second shipment today.
    pub second_shipment: f64,
    pub hd_share: f64,
    /// Daytime window start range, s, and width, s.
    pub window_start: (f64, f64),
    pub window_width: f64,
    pub max_size: u32,
}

impl Default for FreightSpec {
    fn default() -> Self {
        FreightSpec {
            receivers_per_opportunity: 0.02,
            second_shipment: 0.3,
            hd_share: 0.3,
            window_start: (7.0 * HOUR, 13.0 * HOUR),
            window_width: 4.0 * HOUR,
            max_size: 4,
        }
    }
}

/// Business receivers, about `receivers_per_opportunity · opportunities`
/// per zone, each at a random node of its zone.
pub fn generate_receivers(net: &Network, spec: &FreightSpec, seed_value: u64) -> Vec<Receiver> {
    let mut rng = seed::rng(&[seed_value, seed::tag("receivers")]);
    let mut out = Vec::new();
    for (z, zone) in net.zones.iter().enumerate() {
        let n = (zone.opportunities.max(0.0) * spec.receivers_per_opportunity).round() as usize;
        let nodes = net.zone_nodes(z);
        for _ in 0..n {
            let node = nodes.get(rng.random_range(0..nodes.len().max(1))).copied().unwrap_or(zone.centroid);
            out.push(Receiver { id: out.len() as u32, zone: z, node, ohd_accepting: false });
        }
    }
    out
}

/// One or two daytime shipments per receiver.
pub fn generate_shipments(receivers: &[Receiver], spec: &FreightSpec, seed_value: u64) -> Vec<Shipment> {
    let mut out = Vec::new();
    for r in receivers {
        let mut rng = seed::rng(&[seed_value, seed::tag("shipments"), r.id as u64]);
        let count = 1 + rng.random_bool(spec.second_shipment) as usize;
        for _ in 0..count {
            let start = rng.random_range(spec.window_start.0..spec.window_start.1);
            let window = (start, start + spec.window_width);
            let class = if rng.random_bool(spec.hd_share) { VehicleClass::Hd } else { VehicleClass::Md };
            out.push(Shipment {
                id: out.len() as u32,
                receiver: Some(r.id),
                node: r.node,
                size: rng.random_range(1..=spec.max_size),
                window,
                day_window: window,
                class,
            });
        }
    }
    out
}

/// Flag exactly `round(rate·N)` receivers as accepting off-hours
/// delivery and move their shipments to the overnight window. The
/// receiver order comes from one seeded shuffle, so a higher rate flags a
/// superset of a lower one.
pub fn assign_ohd(receivers: &mut [Receiver], shipments: &mut [Shipment], rate: f64, seed_value: u64) -> usize {
    let k = (rate.clamp(0.0, 1.0) * receivers.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..receivers.len()).collect();
    order.shuffle(&mut seed::rng(&[seed_value, seed::tag("ohd")]));
    for r in receivers.iter_mut() {
        r.ohd_accepting = false;
    }
    for &i in order.iter().take(k) {
        receivers[i].ohd_accepting = true;
    }
    for s in shipments.iter_mut() {
        let ohd = s.receiver.is_some_and(|r| receivers[r as usize].ohd_accepting);
        s.window = if ohd { (OVERNIGHT_START, OVERNIGHT_END) } else { s.day_window };
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TourStop {
    pub shipment: u32,
    pub node: usize,
    pub arrival: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryTour {
    pub vehicle: u32,
    pub depot: u32,
    pub depot_node: usize,
    pub class: VehicleClass,
    pub stops: Vec<TourStop>,
    pub depart: f64,
    pub return_time: f64,
    pub load: u32,
}

impl DeliveryTour {
    pub fn is_overnight(&self) -> bool {
        clock::is_overnight(self.depart)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub shipment: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TourPlan {
    pub tours: Vec<DeliveryTour>,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TourParams {
    pub capacity: u32,
    /// Dwell per stop, s.
    pub service_time: f64,
    /// Earliest depot departure for daytime and overnight tours, s.
    pub day_shift_start: f64,
    pub night_shift_start: f64,
}

impl Default for TourParams {
    fn default() -> Self {
        TourParams { capacity: 20, service_time: 180.0, day_shift_start: 6.0 * HOUR, night_shift_start: OVERNIGHT_START }
    }
}

/// Length of the closed tour depot → order → depot under `cost`.
pub fn tour_length(depot: usize, order: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut prev = depot;
    let mut total = 0.0;
    for &n in order {
        total += cost(prev, n);
        prev = n;
    }
    total + cost(prev, depot)
}

/// Greedy nearest-neighbor visiting order of `nodes` from `depot`; ties
/// go to the earlier entry.
pub fn nearest_neighbor_order(depot: usize, nodes: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut left: Vec<usize> = nodes.to_vec();
    let mut order = Vec::with_capacity(nodes.len());
    let mut at = depot;
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .map(|(i, &n)| (i, cost(at, n)))
            .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        at = left.remove(i);
        order.push(at);
    }
    order
}

/// 2-opt segment reversal until no strictly improving move remains.
pub fn two_opt(depot: usize, order: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut tour = order.to_vec();
    let n = tour.len();
    if n < 3 {
        return tour;
    }
    let mut best = tour_length(depot, &tour, cost);
    loop {
        let mut improved = false;
        for i in 0..n - 1 {
            for j in i + 1..n {
                let mut cand = tour.clone();
                cand[i..=j].reverse();
                let len = tour_length(depot, &cand, cost);
                if len < best - 1e-9 * best.abs().max(1.0) {
                    tour = cand;
                    best = len;
                    improved = true;
                }
            }
        }
        if !improved {
            return tour;
        }
    }
}

/// Planned arrivals, waiting at early stops; the index of the first stop
/// reached after its window closes, if any.
fn timetable(
    depot: usize,
    stops: &[&Shipment],
    params: &TourParams,
    shift_start: f64,
    cost: &dyn Fn(usize, usize) -> f64,
) -> (f64, Vec<f64>, f64, Option<usize>) {
    let first = stops[0];
    let depart = shift_start.max(first.window.0 - cost(depot, first.node));
    let mut t = depart;
    let mut at = depot;
    let mut arrivals = Vec::with_capacity(stops.len());
    let mut violation = None;
    for (k, s) in stops.iter().enumerate() {
        let arr = (t + cost(at, s.node)).max(s.window.0);
        if arr > s.window.1 && violation.is_none() {
            violation = Some(k);
        }
        arrivals.push(arr);
        t = arr + params.service_time;
        at = s.node;
    }
    (depart, arrivals, t + cost(at, depot), violation)
}

fn is_night(s: &Shipment) -> bool {
    s.window.0 >= OVERNIGHT_START
}

/// Capacitated tours per depot: shipments go to their nearest depot,
/// are swept by angle into capacity-feasible clusters (separately for
/// daytime and overnight windows and for each vehicle class), ordered
/// by nearest neighbor and improved by 2-opt. A tour that misses a window
/// is split at the first late stop. A shipment that cannot be served on
/// its own is rejected with a reason.
pub fn build_tours(
    net: &Network,
    shipments: &[Shipment],
    depots: &[Depot],
    params: &TourParams,
    cost: &dyn Fn(usize, usize) -> f64,
) -> TourPlan {
    let mut plan = TourPlan::default();
    if depots.is_empty() {
        plan.rejected = shipments.iter().map(|s| Rejection { shipment: s.id, reason: "no depot".into() }).collect();
        return plan;
    }
    let mut by_depot: Vec<Vec<&Shipment>> = vec![Vec::new(); depots.len()];
    for s in shipments {
        if s.size > params.capacity {
            plan.rejected.push(Rejection {
                shipment: s.id,
                reason: format!("size {} exceeds vehicle capacity {}", s.size, params.capacity),
            });
            continue;
        }
        let d = (0..depots.len())
            .min_by(|&a, &b| {
                net.distance(depots[a].node, s.node).total_cmp(&net.distance(depots[b].node, s.node)).then(a.cmp(&b))
            })
            .unwrap();
        by_depot[d].push(s);
    }
    for (di, mut list) in by_depot.into_iter().enumerate() {
        let depot = &depots[di];
        let (dx, dy) = net.position(depot.node);
        let angle = |s: &Shipment| {
            let (x, y) = net.position(s.node);
            (y - dy).atan2(x - dx)
        };
        list.sort_by(|a, b| {
            is_night(a)
                .cmp(&is_night(b))
                .then(a.class.cmp(&b.class))
                .then(angle(a).total_cmp(&angle(b)))
                .then(a.id.cmp(&b.id))
        });
        let mut clusters: Vec<Vec<&Shipment>> = Vec::new();
        let mut load = 0;
        for s in list {
            let fits = clusters.last().is_some_and(|c| {
                load + s.size <= params.capacity && is_night(c[0]) == is_night(s) && c[0].class == s.class
            });
            if !fits {
                clusters.push(Vec::new());
                load = 0;
            }
            load += s.size;
            clusters.last_mut().unwrap().push(s);
        }
        for cluster in clusters {
            let nodes: Vec<usize> = (0..cluster.len()).collect();
            let c = |a: usize, b: usize| {
                let node = |i: usize| if i == usize::MAX { depot.node } else { cluster[i].node };
                cost(node(a), node(b))
            };
            let order = two_opt(usize::MAX, &nearest_neighbor_order(usize::MAX, &nodes, &c), &c);
            let ordered: Vec<&Shipment> = order.iter().map(|&i| cluster[i]).collect();
            emit_tours(depot, ordered, params, cost, &mut plan);
        }
    }
    plan
}

fn emit_tours(
    depot: &Depot,
    mut stops: Vec<&Shipment>,
    params: &TourParams,
    cost: &dyn Fn(usize, usize) -> f64,
    plan: &mut TourPlan,
) {
    while !stops.is_empty() {
        let shift = if is_night(stops[0]) { params.night_shift_start } else { params.day_shift_start };
        let (depart, arrivals, ret, violation) = timetable(depot.node, &stops, params, shift, cost);
        let cut = match violation {
            Some(0) => {
                let s = stops.remove(0);
                plan.rejected.push(Rejection {
                    shipment: s.id,
                    reason: format!(
                        "window closes at {:.0} s before the earliest arrival {:.0} s",
                        s.window.1, arrivals[0]
                    ),
                });
                continue;
            }
            Some(k) => k,
            None => stops.len(),
        };
        let rest = stops.split_off(cut);
        let (depart, arrivals, ret) = if cut == arrivals.len() {
            (depart, arrivals, ret)
        } else {
            let (d, a, r, _) = timetable(depot.node, &stops, params, shift, cost);
            (d, a, r)
        };
        plan.tours.push(DeliveryTour {
            vehicle: plan.tours.len() as u32,
            depot: depot.id,
            depot_node: depot.node,
            class: stops[0].class,
            stops: stops.iter().zip(&arrivals).map(|(s, &a)| TourStop { shipment: s.id, node: s.node, arrival: a }).collect(),
            depart,
            return_time: ret,
            load: stops.iter().map(|s| s.size).sum(),
        });
        stops = rest;
    }
}

/// Relative change in medium and heavy-duty tours leaving overnight;
/// absent when the baseline has none.
pub fn overnight_trip_ratio(baseline: &[DeliveryTour], scenario: &[DeliveryTour]) -> Option<f64> {
    let count = |tours: &[DeliveryTour]| {
        tours.iter().filter(|t| matches!(t.class, VehicleClass::Md | VehicleClass::Hd) && t.is_overnight()).count()
    };
    let base = count(baseline);
    (base > 0).then(|| count(scenario) as f64 / base as f64 - 1.0)
}
