mod common;

use common::*;
use mesopolis::flowsim::{FlowParams, Simulation, VehicleSpec};
use mesopolis::netmodel::{Phase, Signal};
use mesopolis::seed;
use rand::Rng;

fn params() -> FlowParams {
    FlowParams { start_time: 0.0, ..Default::default() }
}

fn spec(tag: u64, path: Vec<usize>, destination: usize) -> VehicleSpec {
    VehicleSpec { tag, cacc: false, path, destination }
}

#[test]
fn single_vehicle_traverses_two_links_at_free_flow() {
    let net = network(
        vec![node(1, 0.0, 0.0), node(2, 1000.0, 0.0), node(3, 1500.0, 0.0)],
        vec![link(1, 0, 1, 1000.0, 20.0, 5.0, 0.15, 0.5), link(2, 1, 2, 500.0, 10.0, 5.0, 0.15, 0.5)],
    );
    let mut sim = Simulation::new(&net, params());
    sim.load(spec(7, vec![0, 1], 2));
    let mut arrival = None;
    for _ in 0..200 {
        if let Some(a) = sim.step().arrivals.first() {
            arrival = Some(*a);
            break;
        }
    }
    let a = arrival.expect("vehicle arrives");
    assert_eq!(a.tag, 7);
    // one step to enter, 50 s + 50 s of free-flow travel
    assert!((a.time - 101.0).abs() <= 1.0, "arrival at {}", a.time);
    let exits = sim.take_exits();
    assert_eq!(exits.len(), 2);
    assert!((exits[0].t_out - exits[0].t_in - 50.0).abs() <= 1.0);
    assert!((exits[1].t_out - exits[1].t_in - 50.0).abs() <= 1.0);
}

/// Upstream capacity 0.8, bottleneck 0.5, inflow 0.6 veh/s for 600 s. The
/// queue at the bottleneck grows at 0.1 veh/s and clears 120 s after inflow
/// stops. The upstream link is long enough that the congested region
/// (density kj - q/w) never spills back to its entry.
#[test]
fn bottleneck_queue_matches_point_queue_oracle() {
    let net = network(
        vec![node(1, 0.0, 0.0), node(2, 3000.0, 0.0), node(3, 4000.0, 0.0)],
        vec![link(1, 0, 1, 3000.0, 20.0, 10.0, 0.125, 0.8), link(2, 1, 2, 1000.0, 20.0, 10.0, 0.125, 0.5)],
    );
    let rate = 0.6;
    let n = (600.0 * rate) as usize;
    let departures: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let mut sim = Simulation::new(&net, params());
    let mut next = 0;
    while sim.now() < 1500.0 {
        while next < n && departures[next] <= sim.now() {
            sim.load(spec(next as u64, vec![0, 1], 2));
            next += 1;
        }
        sim.step();
    }
    let exits = sim.take_exits();
    let entries: Vec<f64> = exits.iter().filter(|e| e.link == 0).map(|e| e.t_in).collect();
    let outs: Vec<f64> = exits.iter().filter(|e| e.link == 0).map(|e| e.t_out).collect();
    assert_eq!(entries.len(), n);
    let tff = 150.0;
    let queue = |t: f64| {
        let a = entries.iter().filter(|&&e| e + tff <= t).count() as f64;
        let d = outs.iter().filter(|&&o| o <= t).count() as f64;
        a - d
    };
    for k in 1..=12 {
        let t = tff + 50.0 * k as f64;
        let expected = 0.1 * (t - tff);
        assert!((queue(t) - expected).abs() <= 2.0, "queue({t}) = {} vs {expected}", queue(t));
    }
    let last_out = outs.iter().cloned().fold(0.0, f64::max);
    assert!((last_out - (tff + 720.0)).abs() <= 2.0, "cleared at {last_out}");
}

#[test]
fn queue_discharges_at_capacity_after_red() {
    // node 2 is signalized: phase 0 serves the cross street, phase 1 serves link 1
    let mut nodes = vec![node(1, 0.0, 0.0), node(2, 200.0, 0.0), node(3, 700.0, 0.0), node(4, 200.0, -300.0)];
    nodes[1].signalized = true;
    let links = vec![
        link(1, 0, 1, 200.0, 20.0, 5.0, 0.125, 0.5),
        link(2, 1, 2, 500.0, 20.0, 5.0, 0.125, 1.0),
        link(3, 3, 1, 300.0, 20.0, 5.0, 0.125, 0.5),
    ];
    let signal = Signal {
        node: 1,
        phases: vec![
            Phase { movements: vec![3], min_green: 40.0, desired_green: 40.0, max_green: 40.0 },
            Phase { movements: vec![1], min_green: 60.0, desired_green: 60.0, max_green: 60.0 },
        ],
        connected: false,
        t_green: 6.0,
        t_red: 3.0,
    };
    let net = mesopolis::netmodel::Network::from_parts(mesopolis::netmodel::NetworkParts {
        nodes,
        links,
        signals: vec![signal],
        zones: vec![zone()],
        ..Default::default()
    });
    let mut sim = Simulation::new(&net, params());
    for i in 0..8 {
        sim.load(spec(i, vec![0, 1], 2));
    }
    let mut green_at = None;
    while sim.now() < 120.0 {
        sim.step();
        if green_at.is_none() && sim.signal_runtime(0).active_phase == 1 {
            green_at = Some(sim.now());
        }
    }
    let green = green_at.unwrap();
    let mut crossings: Vec<f64> = sim.take_exits().iter().filter(|e| e.link == 0).map(|e| e.t_out).collect();
    crossings.sort_by(f64::total_cmp);
    assert_eq!(crossings.len(), 8);
    assert!(crossings[0] >= green - 1.0, "crossed during red");
    for (k, &t) in crossings.iter().enumerate() {
        let expected = green + k as f64 / 0.5;
        assert!((t - expected).abs() <= 2.0, "vehicle {k} crossed at {t}, expected {expected}");
    }
}

#[test]
fn route_request_then_reroute_reaches_destination() {
    let net = network(
        vec![node(1, 0.0, 0.0), node(2, 300.0, 0.0), node(3, 600.0, 0.0)],
        vec![link(1, 0, 1, 300.0, 15.0, 5.0, 0.15, 0.5), link(2, 1, 2, 300.0, 15.0, 5.0, 0.15, 0.5)],
    );
    let mut sim = Simulation::new(&net, params());
    sim.load(spec(1, vec![0], 2));
    let mut requests = 0;
    for _ in 0..200 {
        let out = sim.step();
        for r in &out.route_requests {
            requests += 1;
            assert_eq!(r.node, 1);
            sim.reroute(r.slot, vec![1], 2);
        }
        if !out.arrivals.is_empty() {
            assert_eq!(out.arrivals[0].node, 2);
            break;
        }
    }
    assert_eq!(requests, 1);
    assert_eq!(sim.counts().arrived, 1);
}

/// Random trips on the grid; checks conservation, spacing, outflow and
/// signal greens while running.
fn run_grid(seed_value: u64, cacc_share: f64, credit_cap: f64) -> (Vec<(u32, usize, f64, f64)>, Vec<f64>) {
    let net = grid4();
    let mut rng = seed::rng(&[seed_value]);
    let mut sim = Simulation::new(&net, FlowParams { credit_cap, ..params() });
    let rows = [[1, 2, 3, 4], [5, 6, 7, 8], [9, 10, 11, 12], [13, 14, 15, 16]];
    let mut trips = Vec::new();
    for i in 0..240 {
        let r = rng.random_range(0..4);
        let c = rng.random_range(0..4);
        let path: Vec<u32> = if rng.random_bool(0.5) {
            rows[r].to_vec()
        } else {
            (0..4).map(|k| rows[k][c]).collect()
        };
        let path = if rng.random_bool(0.5) { path.into_iter().rev().collect() } else { path };
        let depart = i as f64 * 2.0;
        trips.push((depart, path, rng.random_bool(cacc_share)));
    }
    let mut next = 0;
    let mut exits_per_link = vec![Vec::new(); net.links.len()];
    while sim.now() < 1500.0 {
        while next < trips.len() && trips[next].0 <= sim.now() {
            let (_, ids, cacc) = &trips[next];
            let dest = net.node_idx(*ids.last().unwrap()).unwrap();
            sim.load(VehicleSpec { tag: next as u64, cacc: *cacc, path: path_through(&net, ids), destination: dest });
            next += 1;
        }
        sim.step();
        let c = sim.counts();
        assert_eq!(c.loaded, c.arrived + c.on_network + c.buffered);
        for li in 0..net.links.len() {
            let d = net.links[li].jam_spacing() / net.links[li].lanes as f64;
            let pos: Vec<f64> = sim.vehicles_on(li).map(|v| v.position).collect();
            let ranks: Vec<u64> = sim.vehicles_on(li).map(|v| v.rank).collect();
            assert!(ranks.windows(2).all(|w| w[1] == w[0] + 1), "ranks {ranks:?}");
            for w in pos.windows(2) {
                assert!(w[0] - w[1] >= d - 1e-6, "spacing {} < {d} on link {li}", w[0] - w[1]);
            }
            assert!(pos.iter().all(|&x| x <= net.links[li].length + 1e-9));
        }
        for e in sim.take_exits() {
            exits_per_link[e.link].push((e.vehicle_id, e.link, e.t_in, e.t_out));
        }
    }
    assert_eq!(sim.counts().arrived, trips.len() as u64, "all trips finish");
    // outflow over a window of W steps is bounded by q·W plus the banked
    // credit, which is at most credit_cap
    for (li, ex) in exits_per_link.iter().enumerate() {
        let l = &net.links[li];
        let qmax = mesopolis::flowsim::cacc_adjust(l, 1.0, mesopolis::flowsim::DEFAULT_ALPHA).0 * l.lanes as f64;
        let outs: Vec<f64> = ex.iter().map(|e| e.3).collect();
        for (i, &t0) in outs.iter().enumerate() {
            for window in [1.0, 3.0, 10.0, 60.0] {
                let n = outs[i..].iter().take_while(|&&t| t < t0 + window).count() as f64;
                assert!(n <= qmax * window + credit_cap + 1e-9, "link {li}: {n} exits in {window}s");
            }
        }
    }
    for p in sim.completed_phases() {
        assert!(p.green >= p.min_green - 1e-9 && p.green <= p.max_green + 1e-9, "{p:?}");
    }
    let mut all: Vec<_> = exits_per_link.into_iter().flatten().collect();
    all.sort_by(|a, b| a.3.total_cmp(&b.3).then(a.0.cmp(&b.0)));
    (all, sim.prevailing_times())
}

#[test]
fn grid_run_respects_invariants() {
    run_grid(11, 0.3, 2.0);
    run_grid(12, 0.0, 2.0);
    run_grid(13, 1.0, 2.0);
}

#[test]
fn unit_credit_cap_bounds_outflow_by_one_vehicle() {
    run_grid(14, 0.3, 1.0);
    run_grid(15, 0.0, 1.0);
}

#[test]
fn identical_inputs_give_identical_runs() {
    assert_eq!(run_grid(5, 0.4, 2.0), run_grid(5, 0.4, 2.0));
}

#[test]
fn measured_times_are_keyed_by_entry_period() {
    let net = network(
        vec![node(1, 0.0, 0.0), node(2, 1000.0, 0.0)],
        vec![link(1, 0, 1, 1000.0, 20.0, 5.0, 0.15, 0.5)],
    );
    let mut sim = Simulation::new(&net, FlowParams { start_time: 4.0 * 3600.0 + 880.0, ..Default::default() });
    sim.load(spec(0, vec![0], 1));
    for _ in 0..100 {
        sim.step();
    }
    let m = sim.measured_times();
    assert!(m[0][0].is_some());
    assert!(m[0][1].is_none());
    assert!((m[0][0].unwrap() - 50.0).abs() <= 1.0);
}

#[test]
fn exit_log_has_fixed_header() {
    let net = grid4();
    let mut sim = Simulation::new(&net, params());
    sim.load(spec(0, path_through(&net, &[1, 2, 3]), net.node_idx(3).unwrap()));
    for _ in 0..200 {
        sim.step();
    }
    let mut buf = Vec::new();
    mesopolis::flowsim::write_exit_log(&net, &sim.take_exits(), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("vehicle_id,link_id,t_in,t_out"));
    assert_eq!(lines.count(), 2);
}
