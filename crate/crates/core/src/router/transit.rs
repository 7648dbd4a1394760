use super::{CostParams, Mode, NoPath, Path};
use crate::netmodel::Network;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitLeg {
    /// Route index.
    pub route: usize,
    /// Boarding stop node.
    pub board: usize,
    /// Alighting stop node.
    pub alight: usize,
    pub wait: f64,
    pub in_vehicle: f64,
}

fn expected_wait(net: &Network, route: usize, t: f64, params: &CostParams) -> f64 {
    (net.routes[route].headway_at(t) * 60.0 / 2.0).min(params.wait_cap)
}

/// Cumulative along-route distances from the first stop.
fn chainage(net: &Network, route: usize) -> Vec<f64> {
    let stops = &net.routes[route].stops;
    let mut out = Vec::with_capacity(stops.len());
    let mut acc = 0.0;
    for (i, &s) in stops.iter().enumerate() {
        if i > 0 {
            acc += net.distance(stops[i - 1], s);
        }
        out.push(acc);
    }
    out
}

struct Candidate {
    time: f64,
    penalty: f64,
    legs: Vec<TransitLeg>,
}

/// Best one- or two-route transit itinerary between two nodes, found by
/// enumerating stops within walking distance. Routes run both directions;
/// waits are half the headway at boarding time, capped.
pub fn transit_path_cost(
    net: &Network,
    origin: usize,
    dest: usize,
    depart: f64,
    params: &CostParams,
) -> Result<Path, NoPath> {
    if net.routes.is_empty() {
        return Err(NoPath::NoTransitService);
    }
    let walk = |a: usize, b: usize| net.distance(a, b) / params.walk_speed;
    let chains: Vec<Vec<f64>> = (0..net.routes.len()).map(|r| chainage(net, r)).collect();
    let ivt = |r: usize, i: usize, j: usize| (chains[r][i] - chains[r][j]).abs() / net.routes[r].speed;
    let near = |node: usize, radius: f64| -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for (r, route) in net.routes.iter().enumerate() {
            for (i, &s) in route.stops.iter().enumerate() {
                if net.distance(node, s) <= radius {
                    v.push((r, i));
                }
            }
        }
        v
    };
    let access = near(origin, params.walk_radius);
    let egress = near(dest, params.walk_radius);
    if access.is_empty() || egress.is_empty() {
        return Err(NoPath::NoStopInRadius);
    }

    let mut best: Option<(f64, Candidate)> = None;
    let mut consider = |cand: Candidate| {
        let score = cand.time + cand.penalty;
        if best.as_ref().is_none_or(|(s, _)| score < *s) {
            best = Some((score, cand));
        }
    };

    for &(r1, i) in &access {
        let stops1 = &net.routes[r1].stops;
        let t_board = depart + walk(origin, stops1[i]);
        let wait1 = expected_wait(net, r1, t_board, params);
        // one route
        for &(r, j) in &egress {
            if r != r1 || j == i {
                continue;
            }
            let iv = ivt(r1, i, j);
            let time = walk(origin, stops1[i]) + wait1 + iv + walk(stops1[j], dest);
            consider(Candidate {
                time,
                penalty: 0.0,
                legs: vec![TransitLeg { route: r1, board: stops1[i], alight: stops1[j], wait: wait1, in_vehicle: iv }],
            });
        }
        // two routes
        for (k, &xk) in stops1.iter().enumerate() {
            if k == i {
                continue;
            }
            let iv1 = ivt(r1, i, k);
            for &(r2, j) in &egress {
                if r2 == r1 {
                    continue;
                }
                let stops2 = &net.routes[r2].stops;
                for (m, &xm) in stops2.iter().enumerate() {
                    if m == j || net.distance(xk, xm) > params.transfer_radius {
                        continue;
                    }
                    let t_transfer = t_board + wait1 + iv1 + walk(xk, xm);
                    let wait2 = expected_wait(net, r2, t_transfer, params);
                    let iv2 = ivt(r2, m, j);
                    let time = walk(origin, stops1[i]) + wait1 + iv1 + walk(xk, xm) + wait2 + iv2 + walk(stops2[j], dest);
                    consider(Candidate {
                        time,
                        penalty: params.transfer_penalty,
                        legs: vec![
                            TransitLeg { route: r1, board: stops1[i], alight: xk, wait: wait1, in_vehicle: iv1 },
                            TransitLeg { route: r2, board: xm, alight: stops2[j], wait: wait2, in_vehicle: iv2 },
                        ],
                    });
                }
            }
        }
    }
    let (_, c) = best.ok_or(NoPath::NoStopInRadius)?;
    let vot_s = params.dollars_per_second();
    Ok(Path {
        mode: Mode::Transit,
        links: Vec::new(),
        legs: c.legs,
        depart,
        arrival: depart + c.time,
        time_cost: (c.time + c.penalty) * vot_s,
        toll_cost: 0.0,
        fare_cost: params.transit_fare,
    })
}
