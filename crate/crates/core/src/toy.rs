//! Deterministic synthetic city: an arterial grid with signals, a ring
//! expressway, four transit routes and a central business district.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::NUM_HOURS;
use crate::fleets::{Depot, DepotKind};
use crate::netmodel::{
    is_dac, write_network, Agency, Link, LinkClass, LoadError, Network, NetworkParts, Node, Phase, Signal,
    TransitRoute, Zone, DEFAULT_T_GREEN, DEFAULT_T_RED,
};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToySpec {
    pub rows: usize,
    pub cols: usize,
    /// Block length, m.
    pub spacing: f64,
    /// Grid nodes per zone side.
    pub zone_block: usize,
    pub population: u64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        ToySpec { rows: 8, cols: 8, spacing: 800.0, zone_block: 2, population: 20_000, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToySpecError(pub String);

impl fmt::Display for ToySpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid toy city spec: {}", self.0)
    }
}

impl std::error::Error for ToySpecError {}

/// Grid dimensions written `ROWSxCOLS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSize(pub usize, pub usize);

impl FromStr for GridSize {
    type Err = ToySpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s.split_once(['x', 'X']).ok_or_else(|| ToySpecError(format!("grid `{s}` is not ROWSxCOLS")))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| ToySpecError(format!("grid `{s}` is not ROWSxCOLS")));
        Ok(GridSize(parse(r)?, parse(c)?))
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<(), ToySpecError> {
        if self.rows < 4 || self.cols < 4 {
            return Err(ToySpecError("grid must be at least 4x4".into()));
        }
        if self.zone_block == 0 || self.zone_block > self.rows.min(self.cols) {
            return Err(ToySpecError("zone block must fit the grid".into()));
        }
        if !(self.spacing > 0.0) {
            return Err(ToySpecError("spacing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyCity {
    pub network: Network,
    pub depots: Vec<Depot>,
    pub spec: ToySpec,
}

struct Builder {
    nodes: Vec<Node>,
    links: Vec<Link>,
}

impl Builder {
    fn link(&mut self, from: usize, to: usize, lanes: u32, vf: f64, w: f64, q: f64, class: LinkClass) {
        let (a, b) = (&self.nodes[from], &self.nodes[to]);
        let length = (a.x - b.x).hypot(a.y - b.y);
        self.links.push(Link {
            id: self.links.len() as u32 + 1,
            from,
            to,
            length,
            lanes,
            free_flow_speed: vf,
            wave_speed: w,
            jam_density: 0.15,
            capacity: q,
            class,
            toll_profile: None,
        });
    }

    fn both(&mut self, a: usize, b: usize, lanes: u32, vf: f64, w: f64, q: f64, class: LinkClass) {
        self.link(a, b, lanes, vf, w, q, class);
        self.link(b, a, lanes, vf, w, q, class);
    }
}

fn headways(peak: f64, off: f64) -> Vec<f64> {
    (0..NUM_HOURS)
        .map(|h| {
            let hour = 4 + h;
            if (6..9).contains(&hour) || (15..18).contains(&hour) {
                peak
            } else if (5..23).contains(&hour) {
                off
            } else {
                off * 2.0
            }
        })
        .collect()
}

pub fn make_toy(spec: &ToySpec) -> Result<ToyCity, ToySpecError> {
    spec.validate()?;
    let (rows, cols, s) = (spec.rows, spec.cols, spec.spacing);
    let mut rng = seed::rng(&[spec.seed, seed::tag("toy")]);
    let zr = rows.div_ceil(spec.zone_block);
    let zc = cols.div_ceil(spec.zone_block);
    let zone_of = |r: usize, c: usize| (r / spec.zone_block) * zc + c / spec.zone_block;
    let grid = |r: usize, c: usize| r * cols + c;

    let mut b = Builder { nodes: Vec::new(), links: Vec::new() };
    for r in 0..rows {
        for c in 0..cols {
            let interior = r > 0 && r + 1 < rows && c > 0 && c + 1 < cols;
            b.nodes.push(Node {
                id: (grid(r, c) + 1) as u32,
                x: c as f64 * s,
                y: r as f64 * s,
                zone_id: zone_of(r, c) as u32 + 1,
                signalized: interior,
            });
        }
    }

    // ring one block outside the grid, clockwise from the south-west corner
    let (w, h) = ((cols - 1) as f64 * s, (rows - 1) as f64 * s);
    let mut ring: Vec<((f64, f64), (usize, usize))> = Vec::new();
    ring.push(((-s, -s), (0, 0)));
    for c in 0..cols {
        ring.push(((c as f64 * s, -s), (0, c)));
    }
    ring.push(((w + s, -s), (0, cols - 1)));
    for r in 0..rows {
        ring.push(((w + s, r as f64 * s), (r, cols - 1)));
    }
    ring.push(((w + s, h + s), (rows - 1, cols - 1)));
    for c in (0..cols).rev() {
        ring.push(((c as f64 * s, h + s), (rows - 1, c)));
    }
    ring.push(((-s, h + s), (rows - 1, 0)));
    for r in (0..rows).rev() {
        ring.push(((-s, r as f64 * s), (r, 0)));
    }
    let ring_start = b.nodes.len();
    for (k, &((x, y), (r, c))) in ring.iter().enumerate() {
        b.nodes.push(Node { id: 1001 + k as u32, x, y, zone_id: zone_of(r, c) as u32 + 1, signalized: false });
    }

    // arterials
    for r in 0..rows {
        for c in 0..cols {
            let main = r == rows / 2 || c == cols / 2;
            let lanes = if main { 2 } else { 1 };
            if c + 1 < cols {
                b.both(grid(r, c), grid(r, c + 1), lanes, 12.0, 5.0, 0.5, LinkClass::Arterial);
            }
            if r + 1 < rows {
                b.both(grid(r, c), grid(r + 1, c), lanes, 12.0, 5.0, 0.5, LinkClass::Arterial);
            }
        }
    }
    // expressway ring
    let n_ring = ring.len();
    for k in 0..n_ring {
        b.both(ring_start + k, ring_start + (k + 1) % n_ring, 2, 28.0, 6.0, 0.6, LinkClass::Expressway);
    }
    // ramps at every other perimeter node, skipping corner ring nodes
    for (k, &((x, y), (r, c))) in ring.iter().enumerate() {
        let g = grid(r, c);
        let (gx, gy) = (b.nodes[g].x, b.nodes[g].y);
        let straight = (gx - x).abs() < 1e-9 || (gy - y).abs() < 1e-9;
        let on_side = if (gx - x).abs() < 1e-9 { c } else { r };
        if straight && on_side % 2 == 1 {
            b.both(ring_start + k, g, 1, 15.0, 5.0, 0.5, LinkClass::Local);
        }
    }

    let links = &b.links;
    let mut signals = Vec::new();
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let node = grid(r, c);
            let (mut ns, mut ew) = (Vec::new(), Vec::new());
            for l in links.iter().filter(|l| l.to == node) {
                if (b.nodes[l.from].x - b.nodes[node].x).abs() < 1e-9 {
                    ns.push(l.id);
                } else {
                    ew.push(l.id);
                }
            }
            let phase = |movements: Vec<u32>| Phase { movements, min_green: 10.0, desired_green: 30.0, max_green: 60.0 };
            signals.push(Signal {
                node,
                phases: vec![phase(ns), phase(ew)],
                connected: true,
                t_green: DEFAULT_T_GREEN,
                t_red: DEFAULT_T_RED,
            });
        }
    }

    let routes = vec![
        TransitRoute {
            id: 1,
            agency: Agency::UrbanBus,
            stops: (0..cols).map(|c| grid(rows / 2, c)).collect(),
            headways: headways(10.0, 15.0),
            speed: 7.0,
            improvable: true,
        },
        TransitRoute {
            id: 2,
            agency: Agency::UrbanBus,
            stops: (0..rows).map(|r| grid(r, cols / 2)).collect(),
            headways: headways(10.0, 15.0),
            speed: 7.0,
            improvable: true,
        },
        TransitRoute {
            id: 3,
            agency: Agency::SuburbanBus,
            stops: (0..cols).map(|c| grid(1, c)).collect(),
            headways: headways(20.0, 30.0),
            speed: 9.0,
            improvable: true,
        },
        TransitRoute {
            id: 4,
            agency: Agency::CommuterRail,
            stops: std::iter::once(ring_start).chain((1..rows / 2).map(|k| grid(k, k))).collect(),
            headways: headways(20.0, 60.0),
            speed: 18.0,
            improvable: true,
        },
    ];

    // zones: centroid nearest the block center, CBD in the middle
    let (cx, cy) = (w / 2.0, h / 2.0);
    let cbd_radius = spec.zone_block as f64 * s;
    let mut zones = Vec::new();
    for z in 0..zr * zc {
        let members: Vec<usize> = (0..rows * cols).filter(|&n| zone_of(n / cols, n % cols) == z).collect();
        let (mx, my) = members.iter().fold((0.0, 0.0), |(ax, ay), &n| (ax + b.nodes[n].x, ay + b.nodes[n].y));
        let (mx, my) = (mx / members.len() as f64, my / members.len() as f64);
        let centroid = *members
            .iter()
            .min_by(|&&a, &&c| {
                let d = |n: usize| (b.nodes[n].x - mx).hypot(b.nodes[n].y - my);
                d(a).total_cmp(&d(c)).then(a.cmp(&c))
            })
            .unwrap();
        let cbd = (mx - cx).abs() < cbd_radius && (my - cy).abs() < cbd_radius;
        let edge = members.iter().any(|&n| {
            let (r, c) = (n / cols, n % cols);
            r == 0 || c == 0 || r + 1 == rows || c + 1 == cols
        });
        let pop_w = if cbd { 0.5 } else { 1.0 } * rng.random_range(0.7..1.3);
        let opp_w = if cbd { 8.0 } else { 1.0 } * rng.random_range(0.7..1.3);
        let wealth = (0.6 * mx / w.max(1.0) + 0.4 * my / h.max(1.0) + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0);
        let pollution: f64 = if edge { 80.0 } else { 30.0 } + rng.random_range(0.0..20.0);
        zones.push((centroid, cbd, pop_w, opp_w, 30_000.0 + 90_000.0 * wealth, pollution));
    }
    let pop_total: f64 = zones.iter().map(|z| z.2).sum();
    let opp_total: f64 = zones.iter().map(|z| z.3).sum();
    let mut incomes: Vec<f64> = zones.iter().map(|z| z.4).collect();
    incomes.sort_by(f64::total_cmp);
    let zones: Vec<Zone> = zones
        .into_iter()
        .enumerate()
        .map(|(k, (centroid, cbd, pw, ow, income, pollution))| {
            let rank = incomes.iter().position(|&v| v == income).unwrap_or(0);
            let low_income = 100.0 * (1.0 - rank as f64 / incomes.len().max(1) as f64);
            let mut burden = BTreeMap::new();
            burden.insert("pollution".to_string(), pollution.round());
            let dac = is_dac(low_income, &burden);
            Zone {
                id: k as u32 + 1,
                centroid,
                population: (spec.population as f64 * pw / pop_total).round() as u64,
                median_income: income.round(),
                opportunities: (0.6 * spec.population as f64 * ow / opp_total).round(),
                low_income_percentile: low_income.round(),
                burden_percentiles: burden,
                cbd,
                dac,
            }
        })
        .collect();

    let depot_at = |target: (f64, f64)| {
        (ring_start..ring_start + n_ring)
            .min_by(|&a, &c| {
                let d = |n: usize| (b.nodes[n].x - target.0).hypot(b.nodes[n].y - target.1);
                d(a).total_cmp(&d(c)).then(a.cmp(&c))
            })
            .unwrap()
    };
    let depots = vec![
        Depot { id: 1, node: depot_at((-s, cy)), kind: DepotKind::Parcel },
        Depot { id: 2, node: depot_at((w + s, cy)), kind: DepotKind::Freight },
    ];

    let network = Network::from_parts(NetworkParts { nodes: b.nodes, links: b.links, signals, routes, zones, ..Default::default() });
    Ok(ToyCity { network, depots, spec: spec.clone() })
}

/// Write the network tables, `depots.csv` and `toy.json` into `dir`.
pub fn write_toy(city: &ToyCity, dir: &Path) -> Result<(), LoadError> {
    write_network(&city.network, dir)?;
    let io_err = |file: &str| {
        let file = file.to_string();
        move |source: std::io::Error| LoadError::Io { file: file.clone(), source }
    };
    let mut f = std::fs::File::create(dir.join("depots.csv")).map_err(io_err("depots.csv"))?;
    writeln!(f, "depot_id,node_id,kind").map_err(io_err("depots.csv"))?;
    for d in &city.depots {
        let kind = match d.kind {
            DepotKind::Parcel => "parcel",
            DepotKind::Freight => "freight",
        };
        writeln!(f, "{},{},{}", d.id, city.network.nodes[d.node].id, kind).map_err(io_err("depots.csv"))?;
    }
    let json = serde_json::to_string_pretty(&city.spec).expect("spec serializes");
    std::fs::write(dir.join("toy.json"), json + "\n").map_err(io_err("toy.json"))?;
    Ok(())
}
