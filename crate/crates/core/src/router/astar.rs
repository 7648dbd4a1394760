use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use super::{mix_weight, transit_path_cost, CostParams, Mode, NoPath, Path, TravelTimeTable};
use crate::netmodel::Network;
use crate::scenarios::TollProfile;

/// Immutable inputs of a route query.
#[derive(Clone, Copy)]
pub struct RouteQuery<'a> {
    pub net: &'a Network,
    pub table: &'a TravelTimeTable,
    /// Prevailing link times observed at query time; `None` before any
    /// simulation, which puts all weight on the historical table.
    pub prevailing: Option<&'a [f64]>,
    pub tolls: Option<&'a TollProfile>,
    pub params: &'a CostParams,
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnCost {
    /// Expected traversal time, s.
    pub time: f64,
    pub toll: f64,
    /// Generalized cost, $.
    pub cost: f64,
}

/// Expected cost of entering `link` at time `t` for a trip that began at
/// node `origin`.
pub fn turn_cost(q: &RouteQuery, link: usize, t: f64, origin: usize) -> TurnCost {
    let hist = q.table.at(link, t);
    let time = match q.prevailing {
        Some(prev) => {
            let d = q.net.distance(origin, q.net.links[link].from);
            let theta = mix_weight(q.iteration, d, q.params);
            theta * prev[link] + (1.0 - theta) * hist
        }
        None => hist,
    };
    let toll = q.tolls.map_or(0.0, |tp| tp.toll(link, t));
    TurnCost { time, toll, cost: time * q.params.dollars_per_second() + toll }
}

/// Free-flow generalized-cost lower bound from every node to `dest`,
/// ignoring turn restrictions and tolls.
pub fn static_lower_bounds(net: &Network, dest: usize, params: &CostParams) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.nodes.len()];
    let mut heap = BinaryHeap::new();
    dist[dest] = 0.0;
    heap.push(Entry { f: 0.0, g: 0.0, key: dest });
    while let Some(Entry { g, key: n, .. }) = heap.pop() {
        if g > dist[n] {
            continue;
        }
        for &l in net.in_links(n) {
            let link = &net.links[l];
            let c = g + link.free_flow_time() * params.dollars_per_second();
            if c < dist[link.from] {
                dist[link.from] = c;
                heap.push(Entry { f: c, g: c, key: link.from });
            }
        }
    }
    dist
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    f: f64,
    g: f64,
    key: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // min-heap on f, then on key
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.key.cmp(&self.key))
    }
}

const NONE: usize = usize::MAX;

/// Cheap identity of a network's geometry and free-flow times.
fn fingerprint(net: &Network) -> u64 {
    let mut parts = Vec::with_capacity(net.links.len() * 3 + net.nodes.len() * 2);
    for l in &net.links {
        parts.extend([l.from as u64, l.to as u64, l.free_flow_time().to_bits()]);
    }
    for n in &net.nodes {
        parts.extend([n.x.to_bits(), n.y.to_bits()]);
    }
    crate::seed::derive(&parts)
}

/// Reusable A* workspace. Labels live on links so turn prohibitions are
/// honored exactly.
pub struct AStar {
    cost: Vec<f64>,
    time: Vec<f64>,
    toll: Vec<f64>,
    pred: Vec<usize>,
    stamp: Vec<u32>,
    closed: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Entry>,
    verify: bool,
    /// Lower bounds per destination, valid for the network at `bounds_net`.
    bounds: HashMap<usize, Vec<f64>>,
    bounds_net: u64,
}

impl Default for AStar {
    fn default() -> Self {
        AStar::new()
    }
}

impl AStar {
    pub fn new() -> Self {
        AStar {
            cost: Vec::new(),
            time: Vec::new(),
            toll: Vec::new(),
            pred: Vec::new(),
            stamp: Vec::new(),
            closed: Vec::new(),
            generation: 0,
            heap: BinaryHeap::new(),
            verify: cfg!(debug_assertions),
            bounds: HashMap::new(),
            bounds_net: 0,
        }
    }

    /// Turn the debug-build heuristic admissibility check on or off.
    pub fn verify_heuristic(mut self, on: bool) -> Self {
        self.verify = on;
        self
    }

    fn reset(&mut self, n: usize) {
        if self.stamp.len() != n {
            self.cost = vec![0.0; n];
            self.time = vec![0.0; n];
            self.toll = vec![0.0; n];
            self.pred = vec![NONE; n];
            self.stamp = vec![0; n];
            self.closed = vec![0; n];
            self.generation = 0;
            self.bounds.clear();
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.fill(0);
            self.closed.fill(0);
            self.generation = 1;
        }
        self.heap.clear();
    }

    fn label(&self, l: usize) -> Option<f64> {
        (self.stamp[l] == self.generation).then(|| self.cost[l])
    }

    /// Node sequence (external ids) of the labeled path ending with link `l`.
    fn node_sequence(&self, net: &Network, l: usize) -> Vec<u32> {
        let mut links = vec![l];
        let mut cur = l;
        while self.pred[cur] != NONE {
            cur = self.pred[cur];
            links.push(cur);
        }
        links.reverse();
        let mut seq = vec![net.nodes[net.links[links[0]].from].id];
        seq.extend(links.iter().map(|&l| net.nodes[net.links[l].to].id));
        seq
    }

    fn prefers(&self, net: &Network, pred: usize, to: usize) -> bool {
        let mut cand = self.node_sequence(net, pred);
        cand.push(net.nodes[net.links[to].to].id);
        cand < self.node_sequence(net, to)
    }

    /// Least generalized-cost road path from node `origin` to node `dest`
    /// leaving at `depart`.
    pub fn road_path(
        &mut self,
        q: &RouteQuery,
        origin: usize,
        dest: usize,
        depart: f64,
        mode: Mode,
    ) -> Result<Path, NoPath> {
        let net = q.net;
        if origin == dest {
            return Ok(Path {
                mode,
                links: Vec::new(),
                legs: Vec::new(),
                depart,
                arrival: depart,
                time_cost: 0.0,
                toll_cost: 0.0,
                fare_cost: 0.0,
            });
        }
        self.reset(net.links.len());
        let vot_s = q.params.dollars_per_second();
        let speed = net.max_crow_speed();
        let h = |n: usize| net.distance(n, dest) / speed * vot_s;
        let net_key = if self.verify { fingerprint(net) } else { 0 };
        if self.bounds_net != net_key {
            self.bounds.clear();
            self.bounds_net = net_key;
        }
        let bounds = if self.verify {
            Some(self.bounds.entry(dest).or_insert_with(|| static_lower_bounds(net, dest, q.params)).clone())
        } else {
            None
        };
        let generation = self.generation;
        for &l in net.out_links(origin) {
            let tc = turn_cost(q, l, depart, origin);
            self.stamp[l] = generation;
            self.cost[l] = tc.cost;
            self.time[l] = depart + tc.time;
            self.toll[l] = tc.toll;
            self.pred[l] = NONE;
            self.heap.push(Entry { f: tc.cost + h(net.links[l].to), g: tc.cost, key: l });
        }
        while let Some(Entry { g, key: l, .. }) = self.heap.pop() {
            if self.closed[l] == generation || g > self.cost[l] {
                continue;
            }
            self.closed[l] = generation;
            let node = net.links[l].to;
            if let Some(b) = &bounds {
                debug_assert!(h(node) <= b[node] + 1e-9, "heuristic overestimates at node {node}");
            }
            if node == dest {
                return Ok(self.build(l, mode, depart));
            }
            let t = self.time[l];
            for turn in net.turns_from(l) {
                if !turn.allowed {
                    continue;
                }
                let next = turn.out_link;
                if self.closed[next] == generation {
                    continue;
                }
                let tc = turn_cost(q, next, t, origin);
                let c = g + tc.cost;
                let better = match self.label(next) {
                    None => true,
                    Some(old) => c < old || (c == old && self.prefers(net, l, next)),
                };
                if better {
                    self.stamp[next] = generation;
                    self.cost[next] = c;
                    self.time[next] = t + tc.time;
                    self.toll[next] = self.toll[l] + tc.toll;
                    self.pred[next] = l;
                    self.heap.push(Entry { f: c + h(net.links[next].to), g: c, key: next });
                }
            }
        }
        Err(NoPath::Disconnected)
    }

    fn build(&self, last: usize, mode: Mode, depart: f64) -> Path {
        let mut links = vec![last];
        let mut cur = last;
        while self.pred[cur] != NONE {
            cur = self.pred[cur];
            links.push(cur);
        }
        links.reverse();
        let toll_cost = self.toll[last];
        Path {
            mode,
            links,
            legs: Vec::new(),
            depart,
            arrival: self.time[last],
            time_cost: self.cost[last] - toll_cost,
            toll_cost,
            fare_cost: 0.0,
        }
    }

    /// Multimodal entry point: road modes use A*, transit uses the
    /// schedule-free itinerary model, walking is straight-line.
    pub fn path(&mut self, q: &RouteQuery, origin: usize, dest: usize, depart: f64, mode: Mode) -> Result<Path, NoPath> {
        match mode {
            Mode::Drive | Mode::Tnc => self.road_path(q, origin, dest, depart, mode),
            Mode::Transit => transit_path_cost(q.net, origin, dest, depart, q.params),
            Mode::Walk => {
                let secs = q.net.distance(origin, dest) / q.params.walk_speed;
                Ok(Path {
                    mode,
                    links: Vec::new(),
                    legs: Vec::new(),
                    depart,
                    arrival: depart + secs,
                    time_cost: secs * q.params.dollars_per_second(),
                    toll_cost: 0.0,
                    fare_cost: 0.0,
                })
            }
        }
    }
}

/// One-shot convenience wrapper around [`AStar::path`].
pub fn shortest_path_td(q: &RouteQuery, origin: usize, dest: usize, depart: f64, mode: Mode) -> Result<Path, NoPath> {
    AStar::new().path(q, origin, dest, depart, mode)
}
