use std::collections::{BTreeMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{SubsidyLedger, Tariff};
use crate::energy::Powertrain;
use crate::netmodel::Network;
use crate::router::{transit_path_cost, CostParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceType {
    Door,
    Corner,
    Fmlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Cbd,
    Suburban,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TncPolicy {
    /// Corner-to-corner service inside the CBD.
    pub corner: bool,
    /// Half-price FMLM rides to suburban transit stops.
    pub fmlm_subsidy: bool,
    pub corner_walk_radius: f64,
    /// Seconds between matching rounds.
    pub match_interval: f64,
    /// Largest delay an insertion may add to an onboard rider, s.
    pub max_detour: f64,
    /// Unmatched requests are dropped after this long, s.
    pub expiry: f64,
    /// Straight-line speed used for dispatch estimates, m/s.
    pub eta_speed: f64,
    pub seats: u32,
    pub reposition: bool,
    pub reposition_interval: f64,
}

impl Default for TncPolicy {
    fn default() -> Self {
        TncPolicy {
            corner: false,
            fmlm_subsidy: false,
            corner_walk_radius: 250.0,
            match_interval: 30.0,
            max_detour: 300.0,
            expiry: 900.0,
            eta_speed: 8.0,
            seats: 4,
            reposition: true,
            reposition_interval: 600.0,
        }
    }
}

/// Best FMLM alternative for a trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmlmOption {
    /// Node index of the transit stop.
    pub stop: usize,
    /// Ride to the stop (first mile) rather than from it (last mile).
    pub first_mile: bool,
    /// Generalized cost, $.
    pub total: f64,
    /// All-TNC generalized cost, $.
    pub direct: f64,
}

/// Returns the transit stop minimizing ride-hailing leg plus transit cost
/// when that beats riding the whole way. `tnc_leg(a, b)` gives (meters,
/// seconds) for a ride between nodes. Ties go to the lowest stop id.
#[allow(clippy::too_many_arguments)]
pub fn fmlm_feasible(
    net: &Network,
    origin: usize,
    dest: usize,
    depart: f64,
    params: &CostParams,
    tariff: &Tariff,
    tnc_leg: &dyn Fn(usize, usize) -> (f64, f64),
) -> Option<FmlmOption> {
    let ride = |a: usize, b: usize| {
        let (m, s) = tnc_leg(a, b);
        (tariff.full_fare(m, s) + s * params.dollars_per_second(), s)
    };
    let (direct, _) = ride(origin, dest);
    let mut stops: Vec<usize> =
        net.routes.iter().flat_map(|r| r.stops.iter().copied()).filter(|&s| !net.is_cbd_node(s)).collect();
    stops.sort_by_key(|&s| net.nodes[s].id);
    stops.dedup();
    let mut best: Option<FmlmOption> = None;
    for s in stops.into_iter().filter(|&s| s != origin && s != dest) {
        let mut consider = |total: f64, first_mile: bool| {
            if total.is_finite() && best.is_none_or(|b| total < b.total - 1e-9 * b.total.abs().max(1.0)) {
                best = Some(FmlmOption { stop: s, first_mile, total, direct });
            }
        };
        let (c, secs) = ride(origin, s);
        if let Ok(p) = transit_path_cost(net, s, dest, depart + secs, params) {
            consider(c + p.cost(), true);
        }
        if let Ok(p) = transit_path_cost(net, origin, s, depart, params) {
            let (c, _) = ride(s, dest);
            consider(p.cost() + c, false);
        }
    }
    best.filter(|b| b.total < direct)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub service: ServiceType,
    pub region: Region,
    /// Node where the rider is picked up.
    pub pickup: usize,
    /// Node where the rider is dropped off.
    pub dropoff: usize,
    pub fmlm: Option<FmlmOption>,
}

/// Service type and stops for a ride between two points. CBD-internal
/// rides snap to corners when the policy allows and corners are within
/// the walk radius. Suburban rides become FMLM when `fmlm(o, d)` finds a
/// better transit combination.
pub fn classify_request(
    net: &Network,
    origin: (f64, f64),
    dest: (f64, f64),
    policy: &TncPolicy,
    fmlm: impl FnOnce(usize, usize) -> Option<FmlmOption>,
) -> Classification {
    let o = net.nearest_intersection(origin, f64::INFINITY).expect("network has nodes");
    let d = net.nearest_intersection(dest, f64::INFINITY).expect("network has nodes");
    let cbd = net.is_cbd_node(o) && net.is_cbd_node(d);
    let region = if cbd { Region::Cbd } else { Region::Suburban };
    let door = Classification { service: ServiceType::Door, region, pickup: o, dropoff: d, fmlm: None };
    if cbd {
        if !policy.corner {
            return door;
        }
        let snap_o = net.nearest_intersection(origin, policy.corner_walk_radius);
        let snap_d = net.nearest_intersection(dest, policy.corner_walk_radius);
        return match (snap_o, snap_d) {
            (Some(a), Some(b)) => Classification { service: ServiceType::Corner, region, pickup: a, dropoff: b, fmlm: None },
            _ => door,
        };
    }
    if policy.fmlm_subsidy {
        if let Some(opt) = fmlm(o, d) {
            let (pickup, dropoff) = if opt.first_mile { (o, opt.stop) } else { (opt.stop, d) };
            return Classification { service: ServiceType::Fmlm, region, pickup, dropoff, fmlm: Some(opt) };
        }
    }
    door
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TncRequest {
    pub id: u32,
    pub person: Option<u32>,
    pub request_time: f64,
    pub service: ServiceType,
    pub region: Region,
    pub pickup: usize,
    pub dropoff: usize,
    /// Transit stop of an FMLM ride.
    pub transit_stop: Option<usize>,
    /// Served by a cargo vehicle (on-demand delivery).
    pub cargo: bool,
    pub subsidized: bool,
    /// Charged fare, $.
    pub fare: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TncState {
    Idle,
    Pickup,
    Occupied,
    Repositioning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStop {
    pub node: usize,
    pub request: u32,
    pub kind: StopKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TncVehicle {
    pub id: u32,
    pub state: TncState,
    /// Last node reached.
    pub location: usize,
    pub stops: VecDeque<PlannedStop>,
    pub onboard: Vec<u32>,
    pub capacity: u32,
    pub region: Region,
    pub powertrain: Powertrain,
    pub cargo: bool,
    /// Estimated arrival at the node the vehicle is heading to.
    pub leg_eta: f64,
    /// Node the current leg ends at.
    pub heading_to: Option<usize>,
    pub idle_since: f64,
}

impl TncVehicle {
    pub fn new(id: u32, location: usize, region: Region, capacity: u32, powertrain: Powertrain, cargo: bool) -> Self {
        TncVehicle {
            id,
            state: TncState::Idle,
            location,
            stops: VecDeque::new(),
            onboard: Vec::new(),
            capacity,
            region,
            powertrain,
            cargo,
            leg_eta: 0.0,
            heading_to: None,
            idle_since: 0.0,
        }
    }

    /// Riders onboard plus riders assigned and waiting.
    pub fn committed(&self) -> u32 {
        self.onboard.len() as u32 + self.stops.iter().filter(|s| s.kind == StopKind::Pickup).count() as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FleetEventKind {
    Assign,
    Pickup,
    Dropoff,
    Expire,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FleetEvent {
    pub time: f64,
    pub kind: FleetEventKind,
    pub request: u32,
    pub vehicle: Option<u32>,
    pub node: Option<usize>,
}

pub fn write_fleet_events<W: Write>(net: &Network, events: &[FleetEvent], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["time", "event", "request", "vehicle", "node_id"])?;
    for e in events {
        let kind = match e.kind {
            FleetEventKind::Assign => "assign",
            FleetEventKind::Pickup => "pickup",
            FleetEventKind::Dropoff => "dropoff",
            FleetEventKind::Expire => "expire",
        };
        wr.write_record([
            format!("{}", e.time),
            kind.to_string(),
            e.request.to_string(),
            e.vehicle.map(|v| v.to_string()).unwrap_or_default(),
            e.node.map(|n| net.nodes[n].id.to_string()).unwrap_or_default(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

fn travel(net: &Network, a: usize, b: usize, speed: f64) -> f64 {
    net.distance(a, b) / speed
}

/// Estimated times at each stop of `stops`, starting from the vehicle's
/// current leg.
fn schedule(net: &Network, v: &TncVehicle, stops: &[PlannedStop], t: f64, speed: f64) -> Vec<f64> {
    let (mut at, mut node) = match v.heading_to {
        Some(n) => (v.leg_eta.max(t), n),
        None => (t, v.location),
    };
    stops
        .iter()
        .map(|s| {
            at += travel(net, node, s.node, speed);
            node = s.node;
            at
        })
        .collect()
}

/// Cheapest feasible insertion of a pooled request into an en-route
/// vehicle: (pickup eta, stops after insertion). The current leg target
/// is kept, so insertions start after the first planned stop, and the
/// pickup must precede the last planned dropoff.
fn best_insertion(
    net: &Network,
    v: &TncVehicle,
    req: &TncRequest,
    t: f64,
    policy: &TncPolicy,
) -> Option<(f64, Vec<PlannedStop>)> {
    let current: Vec<PlannedStop> = v.stops.iter().copied().collect();
    if current.is_empty() {
        return None;
    }
    let before = schedule(net, v, &current, t, policy.eta_speed);
    let dropoff_time = |stops: &[PlannedStop], times: &[f64], r: u32| {
        stops.iter().zip(times).find(|(s, _)| s.request == r && s.kind == StopKind::Dropoff).map(|(_, &x)| x)
    };
    let mut best: Option<(f64, Vec<PlannedStop>)> = None;
    let pu = PlannedStop { node: req.pickup, request: req.id, kind: StopKind::Pickup };
    let dr = PlannedStop { node: req.dropoff, request: req.id, kind: StopKind::Dropoff };
    // pooled pickups must come before the last rider already planned
    let Some(last_drop) = current.iter().rposition(|s| s.kind == StopKind::Dropoff) else {
        return None;
    };
    for i in 1..=last_drop {
        for j in i..=current.len() {
            let mut cand = current.clone();
            cand.insert(j, dr);
            cand.insert(i, pu);
            let times = schedule(net, v, &cand, t, policy.eta_speed);
            let ok = current.iter().filter(|s| s.kind == StopKind::Dropoff).all(|s| {
                let old = dropoff_time(&current, &before, s.request).unwrap();
                let new = dropoff_time(&cand, &times, s.request).unwrap();
                new - old <= policy.max_detour
            });
            if !ok {
                continue;
            }
            let eta = times[i];
            if best.as_ref().is_none_or(|(b, _)| eta < *b) {
                best = Some((eta, cand));
            }
        }
    }
    best
}

/// One matching round. Pending requests are taken in request-time order
/// and matched greedily to the vehicle with the smallest pickup estimate:
/// idle vehicles of the right region and kind, or, for corner requests,
/// pooled insertion into an en-route corner vehicle. Requests older than
/// the expiry are dropped. Returns (request, vehicle) assignments.
pub fn dispatch(
    pending: &mut Vec<TncRequest>,
    vehicles: &mut [TncVehicle],
    t: f64,
    policy: &TncPolicy,
    net: &Network,
    events: &mut Vec<FleetEvent>,
) -> Vec<(u32, u32)> {
    pending.sort_by(|a, b| a.request_time.total_cmp(&b.request_time).then(a.id.cmp(&b.id)));
    let mut assigned = Vec::new();
    let mut waiting = Vec::new();
    for req in pending.drain(..) {
        if t - req.request_time > policy.expiry {
            events.push(FleetEvent { time: t, kind: FleetEventKind::Expire, request: req.id, vehicle: None, node: None });
            continue;
        }
        let mut best: Option<(f64, usize, Option<Vec<PlannedStop>>)> = None;
        for (vi, v) in vehicles.iter().enumerate() {
            if v.cargo != req.cargo || (!req.cargo && v.region != req.region) {
                continue;
            }
            let cand = match v.state {
                TncState::Idle => Some((t + travel(net, v.location, req.pickup, policy.eta_speed), None)),
                TncState::Pickup | TncState::Occupied
                    if req.service == ServiceType::Corner && v.committed() < v.capacity && pooled_with_corner(v, &req) =>
                {
                    best_insertion(net, v, &req, t, policy).map(|(eta, stops)| (eta, Some(stops)))
                }
                _ => None,
            };
            if let Some((eta, stops)) = cand {
                if best.as_ref().is_none_or(|(b, _, _)| eta < *b) {
                    best = Some((eta, vi, stops));
                }
            }
        }
        match best {
            Some((_, vi, stops)) => {
                let v = &mut vehicles[vi];
                match stops {
                    Some(s) => v.stops = s.into(),
                    None => {
                        v.stops.push_back(PlannedStop { node: req.pickup, request: req.id, kind: StopKind::Pickup });
                        v.stops.push_back(PlannedStop { node: req.dropoff, request: req.id, kind: StopKind::Dropoff });
                        v.state = TncState::Pickup;
                    }
                }
                events.push(FleetEvent {
                    time: t,
                    kind: FleetEventKind::Assign,
                    request: req.id,
                    vehicle: Some(v.id),
                    node: None,
                });
                assigned.push((req.id, v.id));
            }
            None => waiting.push(req),
        }
    }
    *pending = waiting;
    assigned
}

fn pooled_with_corner(v: &TncVehicle, _req: &TncRequest) -> bool {
    v.region == Region::Cbd && !v.cargo
}

/// A drive the simulation should perform for a fleet vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegOrder {
    pub vehicle: u32,
    pub from: usize,
    pub to: usize,
    pub depart: f64,
    /// Riders or goods aboard during the leg.
    pub occupied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServedRide {
    pub request: u32,
    pub vehicle: u32,
    pub pickup_time: f64,
    pub dropoff_time: f64,
}

/// Fleet state between simulation steps: matching rounds, stop handling
/// on arrivals and idle repositioning. The simulation executes the
/// returned legs and reports arrivals back.
#[derive(Debug, Clone)]
pub struct FleetOperator {
    pub policy: TncPolicy,
    pub vehicles: Vec<TncVehicle>,
    pub pending: Vec<TncRequest>,
    pub requests: BTreeMap<u32, TncRequest>,
    pub events: Vec<FleetEvent>,
    pub served: Vec<ServedRide>,
    pub ledger: SubsidyLedger,
    pickup_times: BTreeMap<u32, f64>,
    next_match: f64,
    next_reposition: f64,
}

impl FleetOperator {
    pub fn new(policy: TncPolicy, vehicles: Vec<TncVehicle>, start: f64) -> Self {
        let next_reposition = start + policy.reposition_interval;
        FleetOperator {
            policy,
            vehicles,
            pending: Vec::new(),
            requests: BTreeMap::new(),
            events: Vec::new(),
            served: Vec::new(),
            ledger: SubsidyLedger::default(),
            pickup_times: BTreeMap::new(),
            next_match: start,
            next_reposition,
        }
    }

    pub fn submit(&mut self, req: TncRequest) {
        self.requests.insert(req.id, req.clone());
        self.pending.push(req);
    }

    pub fn unserved(&self) -> usize {
        self.events.iter().filter(|e| e.kind == FleetEventKind::Expire).count()
    }

    pub fn is_quiet(&self) -> bool {
        self.pending.is_empty() && self.vehicles.iter().all(|v| v.state == TncState::Idle)
    }

    /// Run a matching round when due and start legs for vehicles that
    /// just got work.
    pub fn tick(&mut self, t: f64, net: &Network) -> Vec<LegOrder> {
        let mut legs = Vec::new();
        if t + 1e-9 >= self.next_match {
            self.next_match = t + self.policy.match_interval;
            if !self.pending.is_empty() {
                let assigned = dispatch(&mut self.pending, &mut self.vehicles, t, &self.policy, net, &mut self.events);
                for (_, vid) in assigned {
                    let v = &self.vehicles[vid as usize];
                    if v.heading_to.is_none() {
                        legs.extend(self.start_next(vid as usize, t, net));
                    }
                }
            }
        }
        if self.policy.reposition && t + 1e-9 >= self.next_reposition {
            self.next_reposition = t + self.policy.reposition_interval;
            legs.extend(self.reposition(t, net));
        }
        legs
    }

    /// Handle stops at `node` and return the next leg, if any.
    pub fn on_arrival(&mut self, vehicle: u32, node: usize, t: f64, net: &Network) -> Vec<LegOrder> {
        let vi = vehicle as usize;
        {
            let v = &mut self.vehicles[vi];
            v.location = node;
            v.heading_to = None;
            if v.state == TncState::Repositioning {
                v.state = TncState::Idle;
                v.idle_since = t;
            }
        }
        self.start_next(vi, t, net)
    }

    fn start_next(&mut self, vi: usize, t: f64, net: &Network) -> Vec<LegOrder> {
        loop {
            let v = &mut self.vehicles[vi];
            let Some(&stop) = v.stops.front() else {
                v.state = TncState::Idle;
                v.idle_since = t;
                return Vec::new();
            };
            if stop.node != v.location {
                v.state = if v.onboard.is_empty() { TncState::Pickup } else { TncState::Occupied };
                v.heading_to = Some(stop.node);
                v.leg_eta = t + travel(net, v.location, stop.node, self.policy.eta_speed);
                return vec![LegOrder {
                    vehicle: v.id,
                    from: v.location,
                    to: stop.node,
                    depart: t,
                    occupied: !v.onboard.is_empty(),
                }];
            }
            v.stops.pop_front();
            let vid = v.id;
            match stop.kind {
                StopKind::Pickup => {
                    v.onboard.push(stop.request);
                    self.pickup_times.insert(stop.request, t);
                    self.events.push(FleetEvent {
                        time: t,
                        kind: FleetEventKind::Pickup,
                        request: stop.request,
                        vehicle: Some(vid),
                        node: Some(stop.node),
                    });
                }
                StopKind::Dropoff => {
                    v.onboard.retain(|&r| r != stop.request);
                    self.events.push(FleetEvent {
                        time: t,
                        kind: FleetEventKind::Dropoff,
                        request: stop.request,
                        vehicle: Some(vid),
                        node: Some(stop.node),
                    });
                    let pickup_time = self.pickup_times.remove(&stop.request).unwrap_or(t);
                    self.served.push(ServedRide { request: stop.request, vehicle: vid, pickup_time, dropoff_time: t });
                }
            }
        }
    }

    /// Idle vehicles that have waited a full interval drift to the zone
    /// with the most unserved requests in their region.
    fn reposition(&mut self, t: f64, net: &Network) -> Vec<LegOrder> {
        let since = t - self.policy.reposition_interval;
        let mut demand: BTreeMap<(Region, bool, usize), usize> = BTreeMap::new();
        for e in self.events.iter().rev() {
            if e.time < since {
                break;
            }
            if e.kind == FleetEventKind::Expire {
                let r = &self.requests[&e.request];
                *demand.entry((r.region, r.cargo, net.zone_of_node(r.pickup))).or_default() += 1;
            }
        }
        for r in &self.pending {
            *demand.entry((r.region, r.cargo, net.zone_of_node(r.pickup))).or_default() += 1;
        }
        let mut legs = Vec::new();
        for v in &mut self.vehicles {
            if v.state != TncState::Idle || t - v.idle_since < self.policy.reposition_interval {
                continue;
            }
            let target = demand
                .iter()
                .filter(|((region, cargo, _), _)| *region == v.region && *cargo == v.cargo)
                .max_by(|a, b| a.1.cmp(b.1).then(b.0 .2.cmp(&a.0 .2)))
                .map(|((_, _, z), _)| *z);
            let Some(z) = target else { continue };
            if net.zone_of_node(v.location) == z {
                continue;
            }
            let to = net.zones[z].centroid;
            v.state = TncState::Repositioning;
            v.heading_to = Some(to);
            v.leg_eta = t + travel(net, v.location, to, self.policy.eta_speed);
            legs.push(LegOrder { vehicle: v.id, from: v.location, to, depart: t, occupied: false });
        }
        legs
    }
}
