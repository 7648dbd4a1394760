use std::collections::BinaryHeap;

use super::{transit_path_cost, CostParams, RouteQuery};
use crate::clock::{self, HOUR};
use crate::netmodel::Network;

/// A block of the day with a representative time for zone-level skims.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkimBand {
    pub start: f64,
    pub end: f64,
}

impl SkimBand {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Default bands: early, AM peak, midday, PM peak, evening, night.
    pub fn defaults() -> Vec<SkimBand> {
        let cuts = [4.0, 7.0, 9.0, 16.0, 18.0, 22.0, 28.0];
        cuts.windows(2).map(|w| SkimBand { start: w[0] * HOUR, end: w[1] * HOUR }).collect()
    }
}

/// Zone-to-zone level-of-service matrices per band.
#[derive(Debug, Clone, PartialEq)]
pub struct Skims {
    pub bands: Vec<SkimBand>,
    pub zones: usize,
    /// Drive time, s.
    pub drive_time: Vec<f64>,
    /// Tolls along the drive path, $.
    pub drive_toll: Vec<f64>,
    /// Drive distance, m.
    pub drive_dist: Vec<f64>,
    /// Transit door-to-door time, s; infinite when unavailable.
    pub transit_time: Vec<f64>,
    /// Walk time, s.
    pub walk_time: Vec<f64>,
}

impl Skims {
    pub fn band_of(&self, t: f64) -> usize {
        self.bands.iter().position(|b| t < b.end).unwrap_or(self.bands.len() - 1)
    }

    fn idx(&self, band: usize, from: usize, to: usize) -> usize {
        (band * self.zones + from) * self.zones + to
    }

    pub fn drive_time(&self, band: usize, from: usize, to: usize) -> f64 {
        self.drive_time[self.idx(band, from, to)]
    }

    pub fn drive_toll(&self, band: usize, from: usize, to: usize) -> f64 {
        self.drive_toll[self.idx(band, from, to)]
    }

    pub fn drive_dist(&self, band: usize, from: usize, to: usize) -> f64 {
        self.drive_dist[self.idx(band, from, to)]
    }

    pub fn transit_time(&self, band: usize, from: usize, to: usize) -> f64 {
        self.transit_time[self.idx(band, from, to)]
    }

    pub fn walk_time(&self, from: usize, to: usize) -> f64 {
        self.walk_time[from * self.zones + to]
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Item {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

/// Build skims between zone centroids with a static generalized-cost tree
/// per (band, origin zone) using historical times at the band midpoint.
/// Intrazonal entries use half the distance to the nearest other centroid.
pub fn compute_skims(q: &RouteQuery, bands: &[SkimBand]) -> Skims {
    let net: &Network = q.net;
    let z = net.zones.len();
    let nb = bands.len();
    let mut s = Skims {
        bands: bands.to_vec(),
        zones: z,
        drive_time: vec![0.0; nb * z * z],
        drive_toll: vec![0.0; nb * z * z],
        drive_dist: vec![0.0; nb * z * z],
        transit_time: vec![f64::INFINITY; nb * z * z],
        walk_time: vec![0.0; z * z],
    };
    let params: &CostParams = q.params;
    let vot_s = params.dollars_per_second();
    let intrazonal: Vec<f64> = (0..z)
        .map(|a| {
            let d = (0..z)
                .filter(|&b| b != a)
                .map(|b| net.distance(net.zones[a].centroid, net.zones[b].centroid))
                .fold(f64::INFINITY, f64::min);
            if d.is_finite() { 0.5 * d } else { 250.0 }
        })
        .collect();
    for a in 0..z {
        for b in 0..z {
            let d = if a == b { intrazonal[a] } else { net.distance(net.zones[a].centroid, net.zones[b].centroid) };
            s.walk_time[a * z + b] = d / params.walk_speed;
        }
    }
    let n = net.nodes.len();
    for (bi, band) in bands.iter().enumerate() {
        let t = band.midpoint().min(clock::HORIZON_END - 1.0);
        for a in 0..z {
            let origin = net.zones[a].centroid;
            let mut cost = vec![f64::INFINITY; n];
            let mut time = vec![0.0; n];
            let mut toll = vec![0.0; n];
            let mut dist = vec![0.0; n];
            let mut heap = BinaryHeap::new();
            cost[origin] = 0.0;
            heap.push(Item(0.0, origin));
            while let Some(Item(c, u)) = heap.pop() {
                if c > cost[u] {
                    continue;
                }
                for &l in net.out_links(u) {
                    let link = &net.links[l];
                    let tt = q.table.at(l, t);
                    let tl = q.tolls.map_or(0.0, |tp| tp.toll(l, t));
                    let nc = c + tt * vot_s + tl;
                    if nc < cost[link.to] {
                        cost[link.to] = nc;
                        time[link.to] = time[u] + tt;
                        toll[link.to] = toll[u] + tl;
                        dist[link.to] = dist[u] + link.length;
                        heap.push(Item(nc, link.to));
                    }
                }
            }
            for b in 0..z {
                let i = s.idx(bi, a, b);
                let dn = net.zones[b].centroid;
                if a == b {
                    s.drive_dist[i] = intrazonal[a];
                    s.drive_time[i] = intrazonal[a] / 10.0;
                    s.transit_time[i] = f64::INFINITY;
                    continue;
                }
                s.drive_time[i] = if cost[dn].is_finite() { time[dn] } else { f64::INFINITY };
                s.drive_toll[i] = toll[dn];
                s.drive_dist[i] = dist[dn];
                if let Ok(p) = transit_path_cost(net, origin, dn, t, params) {
                    s.transit_time[i] = p.duration() + if p.legs.len() > 1 { params.transfer_penalty } else { 0.0 };
                }
            }
        }
    }
    s
}
