mod common;

use common::oracles::{exhaustive, grid3, random_table};
use common::*;
use mesopolis::clock;
use mesopolis::netmodel::{Agency, Network, NetworkParts, TransitRoute};
use mesopolis::router::{
    compute_skims, shortest_path_td, transit_path_cost, turn_cost, AStar, CostParams, Mode, NoPath, RouteQuery,
    SkimBand, TravelTimeTable,
};
use mesopolis::scenarios::TollProfile;
use mesopolis::seed;
use rand::Rng;

fn query<'a>(
    net: &'a Network,
    table: &'a TravelTimeTable,
    prevailing: Option<&'a [f64]>,
    tolls: Option<&'a TollProfile>,
    params: &'a CostParams,
) -> RouteQuery<'a> {
    RouteQuery { net, table, prevailing, tolls, params, iteration: 0 }
}

const T0: f64 = 8.0 * 3600.0;

#[test]
fn turn_cost_mixes_prevailing_and_historical() {
    let net = network(vec![node(1, 0.0, 0.0), node(2, 2000.0, 0.0)], vec![link(1, 0, 1, 2000.0, 40.0, 5.0, 0.15, 0.5)]);
    let mut table = TravelTimeTable::free_flow(&net);
    let p = table.period_index(T0);
    table.set(0, p, 60.0);
    let prevailing = [120.0];
    // theta = max(theta_min, theta0) at iteration 0, zero distance
    let params = CostParams { theta0: 0.25, theta_min: 0.25, ..Default::default() };
    let q = query(&net, &table, Some(&prevailing), None, &params);
    let c = turn_cost(&q, 0, T0, 0);
    assert!((c.cost - 0.375).abs() < 1e-12, "{}", c.cost);

    // $0.16/km over 2 km
    let tolls = TollProfile { tolls: [(0, vec![0.32; clock::NUM_HOURS])].into() };
    let q = query(&net, &table, Some(&prevailing), Some(&tolls), &params);
    let c = turn_cost(&q, 0, T0, 0);
    assert!((c.cost - 0.695).abs() < 1e-12, "{}", c.cost);

    let full = CostParams { theta_min: 1.0, ..Default::default() };
    let q = query(&net, &table, Some(&prevailing), None, &full);
    assert!((turn_cost(&q, 0, T0, 0).time - 120.0).abs() < 1e-12);
}

#[test]
fn single_edge_path_costs_its_turn() {
    let net = network(vec![node(1, 0.0, 0.0), node(2, 1000.0, 0.0)], vec![link(1, 0, 1, 1000.0, 20.0, 5.0, 0.15, 0.5)]);
    let table = TravelTimeTable::free_flow(&net);
    let params = CostParams::default();
    let q = query(&net, &table, None, None, &params);
    let p = shortest_path_td(&q, 0, 1, T0, Mode::Drive).unwrap();
    assert_eq!(p.links, vec![0]);
    assert!((p.cost() - turn_cost(&q, 0, T0, 0).cost).abs() < 1e-15);
    assert!((p.arrival - T0 - 50.0).abs() < 1e-12);
    assert_eq!(shortest_path_td(&q, 1, 0, T0, Mode::Drive), Err(NoPath::Disconnected));
}

/// 3x3 grid with both directions on every edge; link lengths vary so
/// geometry and free-flow speeds differ.
#[test]
fn astar_matches_exhaustive_search_on_random_instances() {
    let params = CostParams::default();
    let mut astar = AStar::new().verify_heuristic(true);
    for inst in 0..100u64 {
        let mut rng = seed::rng(&[seed::tag("astar"), inst]);
        let net = grid3(&mut rng);
        let table = random_table(&net, &mut rng);
        let prevailing: Vec<f64> =
            (0..net.links.len()).map(|l| table.free_flow_time(l) + rng.random_range(0.0..300.0)).collect();
        let prev = if inst % 2 == 0 { Some(prevailing.as_slice()) } else { None };
        let q = RouteQuery { iteration: (inst % 4) as u32, ..query(&net, &table, prev, None, &params) };
        let o = rng.random_range(0..9);
        let mut d = rng.random_range(0..9);
        if d == o {
            d = (o + 4) % 9;
        }
        let depart = clock::HORIZON_START + rng.random_range(0.0..20.0 * 3600.0);
        let got = astar.path(&q, o, d, depart, Mode::Drive).unwrap().cost();
        let want = exhaustive(&q, o, d, depart).unwrap();
        assert_eq!(got, want, "instance {inst}");
    }
}

#[test]
fn path_cost_equals_component_sum_and_is_contiguous() {
    let mut rng = seed::rng(&[3]);
    let net = grid3(&mut rng);
    let table = random_table(&net, &mut rng);
    let params = CostParams::default();
    let tolls = TollProfile { tolls: [(2, vec![0.5; clock::NUM_HOURS])].into() };
    let q = query(&net, &table, None, Some(&tolls), &params);
    let p = shortest_path_td(&q, 0, 8, T0, Mode::Drive).unwrap();
    assert!(p.links.windows(2).all(|w| net.links[w[0]].to == net.links[w[1]].from));
    assert_eq!(net.links[p.links[0]].from, 0);
    assert_eq!(net.links[*p.links.last().unwrap()].to, 8);
    let (mut t, mut time, mut toll) = (T0, 0.0, 0.0);
    for &l in &p.links {
        let c = turn_cost(&q, l, t, 0);
        t += c.time;
        time += c.time * params.vot / 3600.0;
        toll += c.toll;
    }
    assert!((p.time_cost - time).abs() < 1e-9);
    assert!((p.toll_cost - toll).abs() < 1e-9);
    assert!((p.arrival - t).abs() < 1e-9);
    assert!((p.cost() - (p.time_cost + p.toll_cost + p.fare_cost)).abs() < 1e-9);
}

#[test]
fn expensive_toll_diverts_to_arterial() {
    // 1 -> 2 direct expressway (2 km at 30 m/s) vs arterial 1 -> 3 -> 2
    // (2 x 1.2 km at 15 m/s): time difference 160 - 66.7 = 93.3 s = $0.467
    let nodes = vec![node(1, 0.0, 0.0), node(2, 2000.0, 0.0), node(3, 1000.0, 600.0)];
    let mut express = link(1, 0, 1, 2000.0, 30.0, 8.0, 0.12, 0.6);
    express.class = mesopolis::netmodel::LinkClass::Expressway;
    let links = vec![express, link(2, 0, 2, 1200.0, 15.0, 5.0, 0.15, 0.5), link(3, 2, 1, 1200.0, 15.0, 5.0, 0.15, 0.5)];
    let net = network(nodes, links);
    let table = TravelTimeTable::free_flow(&net);
    let params = CostParams::default();
    let cheap = TollProfile { tolls: [(0, vec![0.40; clock::NUM_HOURS])].into() };
    let dear = TollProfile { tolls: [(0, vec![0.50; clock::NUM_HOURS])].into() };
    let q = query(&net, &table, None, Some(&cheap), &params);
    assert_eq!(shortest_path_td(&q, 0, 1, T0, Mode::Drive).unwrap().links, vec![0]);
    let q = query(&net, &table, None, Some(&dear), &params);
    assert_eq!(shortest_path_td(&q, 0, 1, T0, Mode::Drive).unwrap().links, vec![1, 2]);
}

#[test]
fn raising_a_toll_never_attracts_paths() {
    let net = grid4();
    let mut rng = seed::rng(&[seed::tag("toll-monotone")]);
    let table = random_table(&net, &mut rng);
    let params = CostParams::default();
    let od: Vec<(usize, usize)> = (0..16).flat_map(|o| (0..16).map(move |d| (o, d))).filter(|(o, d)| o != d).collect();
    let target = link_between(&net, 6, 7);
    let mut prev_share = usize::MAX;
    let mut astar = AStar::new();
    for toll in [0.0, 0.05, 0.2, 0.5, 2.0, 50.0] {
        let tp = TollProfile { tolls: [(target, vec![toll; clock::NUM_HOURS])].into() };
        let q = query(&net, &table, None, Some(&tp), &params);
        let share = od
            .iter()
            .filter(|&&(o, d)| astar.path(&q, o, d, T0, Mode::Drive).unwrap().links.contains(&target))
            .count();
        assert!(share <= prev_share, "toll {toll}: {share} > {prev_share}");
        prev_share = share;
    }
    assert_eq!(prev_share, 0);
}

#[test]
fn prohibited_turn_is_never_used() {
    let net0 = grid4();
    let a = link_between(&net0, 5, 6);
    let b = link_between(&net0, 6, 7);
    let mut parts = net0.into_parts();
    parts.prohibited_turns.push((a, b));
    let net = Network::from_parts(parts);
    let table = TravelTimeTable::free_flow(&net);
    let params = CostParams::default();
    let q = query(&net, &table, None, None, &params);
    let p = shortest_path_td(&q, net.node_idx(5).unwrap(), net.node_idx(7).unwrap(), T0, Mode::Drive).unwrap();
    assert!(!p.links.windows(2).any(|w| w == [a, b]));
}

fn transit_net(headway_min: f64) -> Network {
    let nodes = vec![node(1, 0.0, 0.0), node(2, 2500.0, 0.0), node(3, 5000.0, 0.0), node(4, 5000.0, 3000.0)];
    let links = vec![link(1, 0, 1, 2500.0, 15.0, 5.0, 0.15, 0.5), link(2, 1, 2, 2500.0, 15.0, 5.0, 0.15, 0.5)];
    let route = TransitRoute {
        id: 1,
        agency: Agency::UrbanBus,
        stops: vec![0, 1, 2],
        headways: vec![headway_min],
        speed: 10.0,
        improvable: true,
    };
    Network::from_parts(NetworkParts { nodes, links, routes: vec![route], zones: vec![zone()], ..Default::default() })
}

#[test]
fn transit_same_route_cost_is_wait_plus_ivt() {
    let net = transit_net(10.0);
    let params = CostParams::default();
    let p = transit_path_cost(&net, 0, 2, T0, &params).unwrap();
    assert_eq!(p.legs.len(), 1);
    assert!((p.legs[0].wait - 300.0).abs() < 1e-12);
    assert!((p.legs[0].in_vehicle - 500.0).abs() < 1e-12);
    assert!((p.duration() - 800.0).abs() < 1e-9);
    assert!((p.cost() - (800.0 * 18.0 / 3600.0 + params.transit_fare)).abs() < 1e-9);

    let capped = transit_path_cost(&transit_net(80.0), 0, 2, T0, &params).unwrap();
    assert_eq!(capped.legs[0].wait, 1800.0);

    assert_eq!(transit_path_cost(&net, 0, 3, T0, &params).unwrap_err(), NoPath::NoStopInRadius);
    let bare = net.with_routes(Vec::new());
    assert_eq!(transit_path_cost(&bare, 0, 2, T0, &params).unwrap_err(), NoPath::NoTransitService);
}

#[test]
fn transit_uses_a_transfer_when_needed() {
    let net = grid4();
    let mut routes = net.routes.clone();
    // second route down column 3: nodes 7, 11, 15
    routes.push(TransitRoute {
        id: 2,
        agency: Agency::SuburbanBus,
        stops: [7, 11, 15].iter().map(|&i| net.node_idx(i).unwrap()).collect(),
        headways: vec![20.0],
        speed: 8.0,
        improvable: false,
    });
    let net = net.with_routes(routes);
    let params = CostParams { walk_radius: 100.0, ..Default::default() };
    let p = transit_path_cost(&net, net.node_idx(5).unwrap(), net.node_idx(15).unwrap(), T0, &params).unwrap();
    assert_eq!(p.legs.len(), 2);
    assert_eq!(p.legs[0].alight, net.node_idx(7).unwrap());
    let expected_time = 300.0 + 1000.0 / 8.0 + 600.0 + 1000.0 / 8.0;
    assert!((p.duration() - expected_time).abs() < 1e-9);
    assert!((p.time_cost - (expected_time + params.transfer_penalty) * 18.0 / 3600.0).abs() < 1e-9);
}

#[test]
fn historical_update_follows_successive_averages() {
    let net = network(vec![node(1, 0.0, 0.0), node(2, 500.0, 0.0)], vec![link(1, 0, 1, 500.0, 10.0, 5.0, 0.15, 0.5)]);
    let mut t = TravelTimeTable::free_flow(&net);
    let mut measured = vec![vec![None; clock::NUM_PERIODS]];
    measured[0][0] = Some(70.0);
    t.update_historical(&measured, 0);
    assert_eq!(t.get(0, 0), 70.0);
    assert_eq!(t.get(0, 1), 50.0);
    t.set(0, 0, 100.0);
    t.set(0, 1, 100.0);
    measured[0][0] = Some(60.0);
    t.update_historical(&measured, 3);
    assert_eq!(t.get(0, 0), 90.0);
    assert_eq!(t.get(0, 1), 87.5);
    assert_eq!(t.iteration, 4);
}

#[test]
fn constant_measurements_contract_at_msa_rate() {
    let net = network(vec![node(1, 0.0, 0.0), node(2, 500.0, 0.0)], vec![link(1, 0, 1, 500.0, 10.0, 5.0, 0.15, 0.5)]);
    let mut t = TravelTimeTable::free_flow(&net);
    t.set(0, 5, 150.0);
    let m = 80.0;
    let measured = vec![(0..clock::NUM_PERIODS).map(|_| Some(m)).collect::<Vec<_>>()];
    let start = 150.0;
    for k in 1..=20u32 {
        t.update_historical(&measured, k);
        let rel = (t.get(0, 5) - m).abs() / (start - m);
        assert!(rel <= 1.0 / (k as f64 + 1.0) + 1e-12, "k={k}: {rel}");
    }
}

#[test]
fn table_csv_round_trip() {
    let net = grid4();
    let mut rng = seed::rng(&[9]);
    let t = random_table(&net, &mut rng);
    let mut buf = Vec::new();
    t.write_csv(&net, &mut buf).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("link_id,period_idx,seconds\n"));
    let back = TravelTimeTable::read_csv(&net, buf.as_slice()).unwrap();
    for l in 0..net.links.len() {
        for p in 0..clock::NUM_PERIODS {
            assert_eq!(back.get(l, p), t.get(l, p));
        }
    }
    let err = TravelTimeTable::read_csv(&net, "link_id,period_idx,seconds\n999,0,5\n".as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 2"));
}

#[test]
fn skims_bound_by_free_flow_and_transit_when_available() {
    let net = grid4();
    let table = TravelTimeTable::free_flow(&net);
    let params = CostParams::default();
    let q = query(&net, &table, None, None, &params);
    let s = compute_skims(&q, &SkimBand::defaults());
    let z = net.zones.len();
    for b in 0..s.bands.len() {
        for i in 0..z {
            for j in 0..z {
                let t = s.drive_time(b, i, j);
                assert!(t.is_finite() && t > 0.0);
                if i != j {
                    let d = net.distance(net.zones[i].centroid, net.zones[j].centroid);
                    assert!(s.drive_dist(b, i, j) >= d - 1e-9);
                }
            }
        }
    }
    assert_eq!(s.band_of(8.0 * 3600.0), 1);
    assert_eq!(s.band_of(27.0 * 3600.0), 5);
}
