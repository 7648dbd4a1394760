//! Network, zone, and transit data model.
//!
//! A [`Network`] is immutable once built. External ids from the input tables
//! are kept on every record; all cross references inside the model are dense
//! indices into the owning vectors.

mod io;
mod spatial;
mod validate;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use io::{load_network, write_network, LoadError, LoadErrorKind};
pub use spatial::SpatialIndex;
pub use validate::{validate_network, Issue, ValidationReport};

use crate::clock;

/// Relative slack allowed when checking capacity against the triangular apex.
pub const FD_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_T_GREEN: f64 = 6.0;
pub const DEFAULT_T_RED: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub zone_id: u32,
    pub signalized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkClass {
    Expressway,
    Arterial,
    Local,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: u32,
    /// Node index.
    pub from: usize,
    /// Node index.
    pub to: usize,
    /// Meters.
    pub length: f64,
    pub lanes: u32,
    /// Free-flow speed, m/s.
    pub free_flow_speed: f64,
    /// Backward wave speed, m/s.
    pub wave_speed: f64,
    /// Jam density, veh/m/lane.
    pub jam_density: f64,
    /// Capacity, veh/s/lane.
    pub capacity: f64,
    pub class: LinkClass,
    pub toll_profile: Option<String>,
}

impl Link {
    /// Jam spacing per lane, d = 1/k_j.
    pub fn jam_spacing(&self) -> f64 {
        1.0 / self.jam_density
    }

    /// Peak flow of the triangular diagram, veh/s/lane.
    pub fn apex_flow(&self) -> f64 {
        triangular_apex(self.free_flow_speed, self.wave_speed, self.jam_density)
    }

    pub fn free_flow_time(&self) -> f64 {
        self.length / self.free_flow_speed
    }

    /// Vehicles the link holds at jam density.
    pub fn storage(&self) -> f64 {
        self.jam_density * self.length * self.lanes as f64
    }

    pub fn is_tollable(&self) -> bool {
        self.class == LinkClass::Expressway
    }
}

pub fn triangular_apex(vf: f64, w: f64, kj: f64) -> f64 {
    vf * w * kj / (vf + w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    /// Link index.
    pub in_link: usize,
    /// Link index.
    pub out_link: usize,
    pub allowed: bool,
    /// Movements are identified by the approach: the in-link's external id.
    pub movement: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    /// Movement ids (approach link ids) that receive green.
    pub movements: Vec<u32>,
    pub min_green: f64,
    pub desired_green: f64,
    pub max_green: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    /// Node index.
    pub node: usize,
    pub phases: Vec<Phase>,
    pub connected: bool,
    /// Horizon for "protected traffic can still cross", s.
    pub t_green: f64,
    /// Horizon for "opposing traffic can cross", s.
    pub t_red: f64,
}

impl Signal {
    pub fn phase_of(&self, movement: u32) -> Option<usize> {
        self.phases.iter().position(|p| p.movements.contains(&movement))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agency {
    UrbanBus,
    UrbanRail,
    SuburbanBus,
    CommuterRail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitRoute {
    pub id: u32,
    pub agency: Agency,
    /// Node indices in service order; the route runs in both directions.
    pub stops: Vec<usize>,
    /// Headway in minutes for each hour of the horizon (index 0 = 04:00).
    pub headways: Vec<f64>,
    /// Running speed, m/s.
    pub speed: f64,
    pub improvable: bool,
}

impl TransitRoute {
    /// Headway in minutes at clock time `t`.
    pub fn headway_at(&self, t: f64) -> f64 {
        if self.headways.len() == 1 {
            return self.headways[0];
        }
        self.headways[clock::hour_index(t).min(self.headways.len() - 1)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub id: u32,
    /// Node index.
    pub centroid: usize,
    pub population: u64,
    pub median_income: f64,
    pub opportunities: f64,
    pub low_income_percentile: f64,
    pub burden_percentiles: BTreeMap<String, f64>,
    pub cbd: bool,
    pub dac: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub turns: Vec<Turn>,
    pub signals: Vec<Signal>,
    pub routes: Vec<TransitRoute>,
    pub zones: Vec<Zone>,
    node_index: HashMap<u32, usize>,
    link_index: HashMap<u32, usize>,
    zone_index: HashMap<u32, usize>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    /// Turn indices keyed by in-link.
    turns_from: Vec<Vec<usize>>,
    signal_at: Vec<Option<usize>>,
    node_zone: Vec<usize>,
    link_zone: Vec<usize>,
    spatial: SpatialIndex,
}

/// Raw parts of a network before cross-indexing. Turn prohibitions are
/// pairs of link indices.
#[derive(Debug, Clone, Default)]
pub struct NetworkParts {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub prohibited_turns: Vec<(usize, usize)>,
    pub signals: Vec<Signal>,
    pub routes: Vec<TransitRoute>,
    pub zones: Vec<Zone>,
}

impl Network {
    /// Build the derived indices. Inputs are assumed already validated by
    /// the loader (or constructed programmatically by trusted code).
    pub fn from_parts(parts: NetworkParts) -> Self {
        let NetworkParts { nodes, links, prohibited_turns, signals, routes, zones } = parts;
        let node_index = nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let link_index = links.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
        let zone_index: HashMap<u32, usize> =
            zones.iter().enumerate().map(|(i, z)| (z.id, i)).collect();
        let mut out_links = vec![Vec::new(); nodes.len()];
        let mut in_links = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            out_links[l.from].push(i);
            in_links[l.to].push(i);
        }
        let mut turns = Vec::new();
        let mut turns_from = vec![Vec::new(); links.len()];
        for (a, la) in links.iter().enumerate() {
            for &b in &out_links[la.to] {
                turns_from[a].push(turns.len());
                turns.push(Turn {
                    in_link: a,
                    out_link: b,
                    allowed: !prohibited_turns.contains(&(a, b)),
                    movement: la.id,
                });
            }
        }
        let mut signal_at = vec![None; nodes.len()];
        for (i, s) in signals.iter().enumerate() {
            signal_at[s.node] = Some(i);
        }
        let node_zone = nodes
            .iter()
            .map(|n| zone_index.get(&n.zone_id).copied().unwrap_or(0))
            .collect::<Vec<_>>();
        let spatial = SpatialIndex::build(&nodes);
        let link_zone = links
            .iter()
            .map(|l| {
                let (a, b) = (&nodes[l.from], &nodes[l.to]);
                let mid = ((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
                let n = spatial.nearest(&nodes, mid, f64::INFINITY).unwrap_or(l.from);
                node_zone[n]
            })
            .collect();
        Network {
            nodes,
            links,
            turns,
            signals,
            routes,
            zones,
            node_index,
            link_index,
            zone_index,
            out_links,
            in_links,
            turns_from,
            signal_at,
            node_zone,
            link_zone,
            spatial,
        }
    }

    pub fn into_parts(self) -> NetworkParts {
        let prohibited_turns =
            self.turns.iter().filter(|t| !t.allowed).map(|t| (t.in_link, t.out_link)).collect();
        NetworkParts {
            nodes: self.nodes,
            links: self.links,
            prohibited_turns,
            signals: self.signals,
            routes: self.routes,
            zones: self.zones,
        }
    }

    pub fn node_idx(&self, id: u32) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn link_idx(&self, id: u32) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub fn zone_idx(&self, id: u32) -> Option<usize> {
        self.zone_index.get(&id).copied()
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    /// Turns (by index into `turns`) leaving the downstream end of `link`.
    pub fn turns_from(&self, link: usize) -> impl Iterator<Item = &Turn> {
        self.turns_from[link].iter().map(move |&t| &self.turns[t])
    }

    pub fn turn_allowed(&self, in_link: usize, out_link: usize) -> bool {
        self.turns_from(in_link).any(|t| t.out_link == out_link && t.allowed)
    }

    pub fn signal_at(&self, node: usize) -> Option<&Signal> {
        self.signal_at[node].map(|i| &self.signals[i])
    }

    pub fn signal_index_at(&self, node: usize) -> Option<usize> {
        self.signal_at[node]
    }

    /// Zone index of a node.
    pub fn zone_of_node(&self, node: usize) -> usize {
        self.node_zone[node]
    }

    /// Zone index of a link, assigned by its midpoint.
    pub fn zone_of_link(&self, link: usize) -> usize {
        self.link_zone[link]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (&self.nodes[a], &self.nodes[b]);
        (p.x - q.x).hypot(p.y - q.y)
    }

    pub fn position(&self, node: usize) -> (f64, f64) {
        (self.nodes[node].x, self.nodes[node].y)
    }

    /// Nearest node to `point` within `max_radius` meters; ties go to the
    /// lowest node id.
    pub fn nearest_intersection(&self, point: (f64, f64), max_radius: f64) -> Option<usize> {
        self.spatial.nearest(&self.nodes, point, max_radius)
    }

    /// All nodes within `radius` of `point`, ascending by id.
    pub fn nodes_within(&self, point: (f64, f64), radius: f64) -> Vec<usize> {
        self.spatial.within(&self.nodes, point, radius)
    }

    /// Nodes belonging to a zone, in index order.
    pub fn zone_nodes(&self, zone: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&n| self.node_zone[n] == zone).collect()
    }

    pub fn is_cbd_node(&self, node: usize) -> bool {
        self.zones.get(self.node_zone[node]).is_some_and(|z| z.cbd)
    }

    /// Largest free-flow crow-fly speed over all links; the A* heuristic
    /// divides straight-line distance by this to stay admissible.
    pub fn max_crow_speed(&self) -> f64 {
        self.links
            .iter()
            .map(|l| self.distance(l.from, l.to) / l.free_flow_time())
            .fold(0.0_f64, f64::max)
            .max(1e-6)
    }

    /// Return a copy with transit routes replaced.
    pub fn with_routes(&self, routes: Vec<TransitRoute>) -> Network {
        let mut net = self.clone();
        net.routes = routes;
        net
    }

    /// Return a copy where every signal's `connected` flag is forced off.
    pub fn with_signals_disconnected(&self) -> Network {
        let mut net = self.clone();
        for s in &mut net.signals {
            s.connected = false;
        }
        net
    }

    pub fn bounding_box(&self) -> ((f64, f64), (f64, f64)) {
        self.spatial.bounds()
    }
}

/// Zone DAC flag rule: more than the 65th percentile of low-income
/// households and at least one burden indicator at or above the 90th.
pub fn is_dac(low_income_percentile: f64, burden_percentiles: &BTreeMap<String, f64>) -> bool {
    low_income_percentile > 65.0 && burden_percentiles.values().any(|&p| p >= 90.0)
}
