//! Discrete-vehicle link-transmission model in Lagrangian coordinates.
//!
//! Every vehicle carries its own position. Within a link vehicles follow
//! Newell's car-following form of the kinematic wave model; at nodes,
//! fractional sending and receiving credits turn link capacities into whole
//! vehicle transfers. Signals gate movements, optionally using connected
//! vehicle observations, and CACC share on a link raises its capacity.

mod cacc;
mod newell;
mod signal;

use std::collections::VecDeque;
use std::io::Write;

pub use cacc::{cacc_adjust, DEFAULT_ALPHA};
pub use newell::{newell_advance, sample_lagged};
pub use signal::{signal_decide, Observations, SignalDecision, SignalRuntime};

use crate::clock;
use crate::netmodel::Network;

/// Position tolerance for "at the stop line".
const END_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Step length, s.
    pub dt: f64,
    /// Quadratic CACC capacity gain coefficient.
    pub cacc_alpha: f64,
    /// Upper bound on accumulated fractional credits, vehicles.
    pub credit_cap: f64,
    /// Use connected-vehicle signal logic where the signal is flagged
    /// connected; otherwise every signal runs fixed-time.
    pub connected_signals: bool,
    /// Simulation clock at construction.
    pub start_time: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            dt: 1.0,
            cacc_alpha: DEFAULT_ALPHA,
            credit_cap: 2.0,
            connected_signals: true,
            start_time: clock::HORIZON_START,
        }
    }
}

/// What the caller supplies to put a vehicle on the network.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    /// Opaque owner key echoed back in events.
    pub tag: u64,
    pub cacc: bool,
    /// Link indices, contiguous.
    pub path: Vec<usize>,
    /// Node index where the vehicle leaves the network.
    pub destination: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub tag: u64,
    pub cacc: bool,
    /// Link index while on the network; `None` while in a loading buffer.
    pub link: Option<usize>,
    /// Meters from the entry of the current link.
    pub position: f64,
    pub prev_position: f64,
    /// Entry order on the current link; leaders have smaller ranks.
    pub rank: u64,
    pub entered_link_at: f64,
    /// Remaining links after the current one.
    pub path: VecDeque<usize>,
    pub destination: usize,
    waiting_since: Option<f64>,
    route_requested: bool,
    /// Odometer, newest first, at step resolution.
    odo_history: VecDeque<f64>,
    link_start_odo: f64,
}

impl VehicleState {
    pub fn speed(&self, dt: f64) -> f64 {
        (self.position - self.prev_position) / dt
    }

    fn odometer(&self) -> f64 {
        self.link_start_odo + self.position
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRuntime {
    /// Vehicle slots, leader first.
    pub queue: VecDeque<usize>,
    /// Per-lane capacity after CACC adjustment, veh/s/lane.
    pub effective_capacity: f64,
    pub effective_w: f64,
    pub sending_credit: f64,
    pub receiving_credit: f64,
    buffer: VecDeque<usize>,
    next_rank: u64,
    tt_sum: Vec<f64>,
    tt_count: Vec<u32>,
    recent_tt: f64,
    recent_at: f64,
    pub exits: u64,
}

/// One vehicle leaving one link.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExitRecord {
    pub vehicle_id: u32,
    pub tag: u64,
    pub link: usize,
    pub t_in: f64,
    pub t_out: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub vehicle_id: u32,
    pub tag: u64,
    pub node: usize,
    pub time: f64,
}

/// A vehicle reached the end of its path away from its destination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RouteRequest {
    pub vehicle_id: u32,
    pub slot: usize,
    pub tag: u64,
    pub node: usize,
    pub link: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompletedPhase {
    pub node: usize,
    pub phase: usize,
    pub green: f64,
    pub min_green: f64,
    pub max_green: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub arrivals: Vec<Arrival>,
    pub route_requests: Vec<RouteRequest>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    /// Handed to `load` (buffer or network).
    pub loaded: u64,
    /// Entered a link from a loading buffer.
    pub entered: u64,
    pub arrived: u64,
    pub on_network: u64,
    pub buffered: u64,
}

pub struct Simulation<'n> {
    net: &'n Network,
    params: FlowParams,
    now: f64,
    links: Vec<LinkRuntime>,
    signals: Vec<SignalRuntime>,
    vehicles: Vec<Option<VehicleState>>,
    free_slots: Vec<usize>,
    next_vehicle_id: u32,
    history_depth: usize,
    counts: Counts,
    exits: Vec<ExitRecord>,
    phases: Vec<CompletedPhase>,
}

impl<'n> Simulation<'n> {
    pub fn new(net: &'n Network, params: FlowParams) -> Self {
        let tau_max = net
            .links
            .iter()
            .map(|l| 1.0 / (l.jam_density * l.lanes as f64 * l.wave_speed))
            .fold(0.0_f64, f64::max);
        let history_depth = (tau_max / params.dt).ceil() as usize + 2;
        let links = net
            .links
            .iter()
            .map(|l| LinkRuntime {
                queue: VecDeque::new(),
                effective_capacity: l.capacity,
                effective_w: l.wave_speed,
                sending_credit: 0.0,
                receiving_credit: 0.0,
                buffer: VecDeque::new(),
                next_rank: 0,
                tt_sum: vec![0.0; clock::NUM_PERIODS],
                tt_count: vec![0; clock::NUM_PERIODS],
                recent_tt: l.free_flow_time(),
                recent_at: f64::NEG_INFINITY,
                exits: 0,
            })
            .collect();
        let signals = net.signals.iter().map(|_| SignalRuntime { active_phase: 0, phase_elapsed: 0.0 }).collect();
        Simulation {
            net,
            now: params.start_time,
            params,
            links,
            signals,
            vehicles: Vec::new(),
            free_slots: Vec::new(),
            next_vehicle_id: 0,
            history_depth,
            counts: Counts::default(),
            exits: Vec::new(),
            phases: Vec::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn network(&self) -> &'n Network {
        self.net
    }

    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn link_runtime(&self, link: usize) -> &LinkRuntime {
        &self.links[link]
    }

    pub fn signal_runtime(&self, signal: usize) -> &SignalRuntime {
        &self.signals[signal]
    }

    pub fn vehicle(&self, slot: usize) -> Option<&VehicleState> {
        self.vehicles.get(slot).and_then(Option::as_ref)
    }

    /// Vehicles on a link, leader first.
    pub fn vehicles_on(&self, link: usize) -> impl Iterator<Item = &VehicleState> {
        self.links[link].queue.iter().filter_map(move |&s| self.vehicles[s].as_ref())
    }

    pub fn completed_phases(&self) -> &[CompletedPhase] {
        &self.phases
    }

    /// Drain the vehicle-link exit records accumulated so far.
    pub fn take_exits(&mut self) -> Vec<ExitRecord> {
        std::mem::take(&mut self.exits)
    }

    /// Queue a vehicle at the loading buffer of its first link. Returns the
    /// vehicle slot.
    pub fn load(&mut self, spec: VehicleSpec) -> usize {
        assert!(!spec.path.is_empty(), "vehicles need at least one link");
        debug_assert!(spec.path.windows(2).all(|w| self.net.links[w[0]].to == self.net.links[w[1]].from));
        let first = spec.path[0];
        let mut path: VecDeque<usize> = spec.path.into();
        path.pop_front();
        let v = VehicleState {
            id: self.next_vehicle_id,
            tag: spec.tag,
            cacc: spec.cacc,
            link: None,
            position: 0.0,
            prev_position: 0.0,
            rank: 0,
            entered_link_at: self.now,
            path,
            destination: spec.destination,
            waiting_since: None,
            route_requested: false,
            odo_history: VecDeque::new(),
            link_start_odo: 0.0,
        };
        self.next_vehicle_id += 1;
        let slot = match self.free_slots.pop() {
            Some(s) => {
                self.vehicles[s] = Some(v);
                s
            }
            None => {
                self.vehicles.push(Some(v));
                self.vehicles.len() - 1
            }
        };
        self.links[first].buffer.push_back(slot);
        self.counts.loaded += 1;
        self.counts.buffered += 1;
        slot
    }

    /// Replace the remaining path of a vehicle (after a route request).
    /// `path` starts with the link that follows the vehicle's current link.
    pub fn reroute(&mut self, slot: usize, path: Vec<usize>, destination: usize) {
        if let Some(v) = self.vehicles[slot].as_mut() {
            v.path = path.into();
            v.destination = destination;
            v.route_requested = false;
        }
    }

    /// Current travel-time estimate for a link: the larger of free-flow
    /// time, recent experienced times, and the discharge time of the
    /// vehicles standing on it.
    pub fn prevailing_time(&self, link: usize) -> f64 {
        let l = &self.net.links[link];
        let rt = &self.links[link];
        let ff = l.free_flow_time();
        let recent = if self.now - rt.recent_at <= 300.0 { rt.recent_tt } else { ff };
        let dt = self.params.dt;
        let stopped = rt
            .queue
            .iter()
            .filter(|&&s| {
                self.vehicles[s].as_ref().is_some_and(|v| v.entered_link_at < self.now && v.speed(dt) < 1.0)
            })
            .count() as f64
            + rt.buffer.len() as f64;
        let discharge = rt.effective_capacity * l.lanes as f64;
        ff.max(recent).max(ff + stopped / discharge)
    }

    /// Prevailing times for every link.
    pub fn prevailing_times(&self) -> Vec<f64> {
        (0..self.links.len()).map(|l| self.prevailing_time(l)).collect()
    }

    /// Mean experienced link time per (link, period of entry); `None` where
    /// no vehicle completed the link.
    pub fn measured_times(&self) -> Vec<Vec<Option<f64>>> {
        self.links
            .iter()
            .map(|rt| {
                rt.tt_sum
                    .iter()
                    .zip(&rt.tt_count)
                    .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
                    .collect()
            })
            .collect()
    }

    /// Mean experienced link time per (link, hour of entry), weighting the
    /// 15-minute cells by their vehicle counts.
    pub fn measured_hourly_times(&self) -> Vec<Vec<Option<f64>>> {
        let per_hour = (clock::HOUR / clock::PERIOD) as usize;
        self.links
            .iter()
            .map(|rt| {
                (0..clock::NUM_HOURS)
                    .map(|h| {
                        let cells = h * per_hour..(h + 1) * per_hour;
                        let s: f64 = rt.tt_sum[cells.clone()].iter().sum();
                        let c: u32 = rt.tt_count[cells].iter().sum();
                        (c > 0).then(|| s / c as f64)
                    })
                    .collect()
            })
            .collect()
    }

    /// Advance the network by one step.
    pub fn step(&mut self) -> StepOutput {
        let dt = self.params.dt;
        let t1 = self.now + dt;
        let mut out = StepOutput::default();

        // (1) CACC adjustment from vehicles currently on each link
        for (li, rt) in self.links.iter_mut().enumerate() {
            let n = rt.queue.len();
            let p = if n == 0 {
                0.0
            } else {
                let equipped =
                    rt.queue.iter().filter(|&&s| self.vehicles[s].as_ref().is_some_and(|v| v.cacc)).count();
                equipped as f64 / n as f64
            };
            let (cap, w) = cacc_adjust(&self.net.links[li], p, self.params.cacc_alpha);
            rt.effective_capacity = cap;
            rt.effective_w = w;
        }

        // (2) signal decisions
        for si in 0..self.signals.len() {
            self.decide_signal(si);
        }

        // (3) car following, leader first on each link
        for li in 0..self.links.len() {
            self.advance_link(li);
        }

        // (4) node transfers and loading
        let cap = self.params.credit_cap;
        for (li, rt) in self.links.iter_mut().enumerate() {
            let rate = rt.effective_capacity * self.net.links[li].lanes as f64 * dt;
            rt.sending_credit = (rt.sending_credit + rate).min(cap.max(rate));
            rt.receiving_credit = (rt.receiving_credit + rate).min(cap.max(rate));
        }
        for node in 0..self.net.nodes.len() {
            self.transfer_at(node, t1, &mut out);
        }
        for li in 0..self.links.len() {
            self.load_from_buffer(li, t1);
        }

        self.now = t1;
        out
    }

    fn decide_signal(&mut self, si: usize) {
        let sig = &self.net.signals[si];
        let mut sig_view;
        let sig_ref = if self.params.connected_signals || !sig.connected {
            sig
        } else {
            sig_view = sig.clone();
            sig_view.connected = false;
            &sig_view
        };
        let obs = if sig_ref.connected { self.observe(si) } else { Observations::default() };
        let decision = signal_decide(sig_ref, &self.signals[si], &obs);
        let rt = &mut self.signals[si];
        if decision.switches() {
            let phase = &sig.phases[rt.active_phase];
            self.phases.push(CompletedPhase {
                node: sig.node,
                phase: rt.active_phase,
                green: rt.phase_elapsed,
                min_green: phase.min_green,
                max_green: phase.max_green,
            });
            rt.active_phase = (rt.active_phase + 1) % sig.phases.len();
            rt.phase_elapsed = self.params.dt;
        } else {
            rt.phase_elapsed += self.params.dt;
        }
    }

    /// Earliest stop-line arrival of connected vehicles on each approach.
    fn observe(&self, si: usize) -> Observations {
        let sig = &self.net.signals[si];
        let dt = self.params.dt;
        let mut earliest_crossing = Vec::new();
        for phase in &sig.phases {
            for &m in &phase.movements {
                let Some(li) = self.net.link_idx(m) else { continue };
                let len = self.net.links[li].length;
                let t = self
                    .vehicles_on(li)
                    .filter(|v| v.cacc)
                    .filter_map(|v| {
                        let remaining = len - v.position;
                        if remaining <= 0.5 {
                            return Some(0.0);
                        }
                        let speed = v.speed(dt);
                        (speed > 0.1).then(|| remaining / speed)
                    })
                    .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.min(t))));
                earliest_crossing.push((m, t));
            }
        }
        Observations { earliest_crossing }
    }

    fn advance_link(&mut self, li: usize) {
        let link = &self.net.links[li];
        let dt = self.params.dt;
        let end = link.length;
        let spacing = 1.0 / (link.jam_density * link.lanes as f64);
        let tau = spacing / self.links[li].effective_w;
        let depth = self.history_depth;
        let mut leader: Option<usize> = None;
        for qi in 0..self.links[li].queue.len() {
            let slot = self.links[li].queue[qi];
            let lagged = leader.map(|ls| {
                let l = self.vehicles[ls].as_ref().unwrap();
                // leader's newest sample is already at t + dt
                sample_lagged(&l.odo_history, tau, dt) - l.link_start_odo
            });
            let v = self.vehicles[slot].as_mut().unwrap();
            let x = newell_advance(v.position, link.free_flow_speed, dt, lagged, spacing, end);
            v.prev_position = v.position;
            v.position = x;
            let odo = v.odometer();
            v.odo_history.push_front(odo);
            v.odo_history.truncate(depth);
            if v.position >= end - END_EPS && v.waiting_since.is_none() {
                v.waiting_since = Some(self.now + dt);
            }
            leader = Some(slot);
        }
    }

    /// Move eligible front vehicles across `node`.
    fn transfer_at(&mut self, node: usize, t1: f64, out: &mut StepOutput) {
        let net = self.net;
        let mut candidates: Vec<(f64, u32, usize, usize)> = Vec::new();
        for &li in net.in_links(node) {
            let Some(&slot) = self.links[li].queue.front() else { continue };
            let v = self.vehicles[slot].as_ref().unwrap();
            if let Some(since) = v.waiting_since {
                candidates.push((since, net.links[li].id, li, slot));
            }
        }
        if candidates.is_empty() {
            return;
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let signal = net.signal_index_at(node);
        for (_, link_id, li, slot) in candidates {
            if self.links[li].sending_credit < 1.0 {
                continue;
            }
            let next = self.vehicles[slot].as_ref().unwrap().path.front().copied();
            match next {
                None => {
                    let v = self.vehicles[slot].as_mut().unwrap();
                    if v.destination != node {
                        if !v.route_requested {
                            v.route_requested = true;
                            out.route_requests.push(RouteRequest {
                                vehicle_id: v.id,
                                slot,
                                tag: v.tag,
                                node,
                                link: li,
                            });
                        }
                        continue;
                    }
                    self.links[li].sending_credit -= 1.0;
                    self.exit_link(li, t1);
                    let v = self.vehicles[slot].take().unwrap();
                    self.free_slots.push(slot);
                    self.counts.arrived += 1;
                    self.counts.on_network -= 1;
                    out.arrivals.push(Arrival { vehicle_id: v.id, tag: v.tag, node, time: t1 });
                }
                Some(to) => {
                    if let Some(si) = signal {
                        let sig = &net.signals[si];
                        let active = &sig.phases[self.signals[si].active_phase];
                        if sig.phase_of(link_id).is_some() && !active.movements.contains(&link_id) {
                            continue;
                        }
                    }
                    if !self.can_receive(to) {
                        continue;
                    }
                    self.links[li].sending_credit -= 1.0;
                    self.links[to].receiving_credit -= 1.0;
                    self.exit_link(li, t1);
                    let v = self.vehicles[slot].as_mut().unwrap();
                    let carried = v.link_start_odo + net.links[li].length;
                    v.path.pop_front();
                    self.enter_link(slot, to, carried, t1);
                }
            }
        }
    }

    fn can_receive(&self, link: usize) -> bool {
        let l = &self.net.links[link];
        let rt = &self.links[link];
        if rt.receiving_credit < 1.0 {
            return false;
        }
        if (rt.queue.len() as f64 + 1.0) > l.storage() {
            return false;
        }
        let spacing = 1.0 / (l.jam_density * l.lanes as f64);
        match rt.queue.back() {
            Some(&tail) => self.vehicles[tail].as_ref().unwrap().position >= spacing - 1e-9,
            None => true,
        }
    }

    fn exit_link(&mut self, li: usize, t1: f64) {
        let slot = self.links[li].queue.pop_front().unwrap();
        let v = self.vehicles[slot].as_ref().unwrap();
        let rec = ExitRecord { vehicle_id: v.id, tag: v.tag, link: li, t_in: v.entered_link_at, t_out: t1 };
        let rt = &mut self.links[li];
        let tt = rec.t_out - rec.t_in;
        if let Some(p) = clock::period_of(rec.t_in) {
            rt.tt_sum[p] += tt;
            rt.tt_count[p] += 1;
        }
        rt.recent_tt = if t1 - rt.recent_at <= 300.0 { 0.7 * rt.recent_tt + 0.3 * tt } else { tt };
        rt.recent_at = t1;
        rt.exits += 1;
        self.exits.push(rec);
    }

    fn enter_link(&mut self, slot: usize, li: usize, odo: f64, t1: f64) {
        let depth = self.history_depth;
        let rt = &mut self.links[li];
        let v = self.vehicles[slot].as_mut().unwrap();
        v.link = Some(li);
        v.link_start_odo = odo;
        v.position = 0.0;
        v.prev_position = 0.0;
        v.entered_link_at = t1;
        v.waiting_since = None;
        v.rank = rt.next_rank;
        if v.odo_history.is_empty() {
            v.odo_history.extend(std::iter::repeat_n(odo, depth));
        }
        rt.next_rank += 1;
        rt.queue.push_back(slot);
    }

    fn load_from_buffer(&mut self, li: usize, t1: f64) {
        let Some(&slot) = self.links[li].buffer.front() else { return };
        if !self.can_receive(li) {
            return;
        }
        self.links[li].buffer.pop_front();
        self.links[li].receiving_credit -= 1.0;
        self.counts.buffered -= 1;
        self.counts.entered += 1;
        self.counts.on_network += 1;
        self.enter_link(slot, li, 0.0, t1);
    }

    /// Vehicles still waiting in loading buffers or on links.
    pub fn active_vehicles(&self) -> impl Iterator<Item = (usize, &VehicleState)> {
        self.vehicles.iter().enumerate().filter_map(|(i, v)| v.as_ref().map(|v| (i, v)))
    }
}

/// Write exit records as `vehicle_id,link_id,t_in,t_out`.
pub fn write_exit_log<W: Write>(net: &Network, records: &[ExitRecord], w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["vehicle_id", "link_id", "t_in", "t_out"])?;
    for r in records {
        wr.write_record([
            r.vehicle_id.to_string(),
            net.links[r.link].id.to_string(),
            r.t_in.to_string(),
            r.t_out.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
