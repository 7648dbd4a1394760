//! Independent reference implementations shared by the module tests and
//! the acceptance suite.

use std::collections::BTreeMap;

use mesopolis::analytics::{fit_ols, predict_metric, MetricsRow, Objective, RegressionResult, Term, TermSpec};
use mesopolis::clock;
use mesopolis::demand::EcommLevel;
use mesopolis::energy::EvLevel;
use mesopolis::fleets::tour_length;
use mesopolis::netmodel::Network;
use mesopolis::router::{turn_cost, RouteQuery, TravelTimeTable};
use mesopolis::scenarios::LeverSettings;
use mesopolis::seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{link, network, node};

fn t(s: &str) -> Term {
    s.parse().unwrap()
}

// ---- router ----

pub fn grid3(rng: &mut seed::Rng) -> Network {
    let mut nodes = Vec::new();
    for j in 0..3 {
        for i in 0..3 {
            nodes.push(node(j * 3 + i + 1, i as f64 * 400.0, j as f64 * 400.0));
        }
    }
    let mut links = Vec::new();
    let mut id = 1;
    for a in 0..9usize {
        for b in 0..9usize {
            let (ax, ay) = (a % 3, a / 3);
            let (bx, by) = (b % 3, b / 3);
            if ax.abs_diff(bx) + ay.abs_diff(by) == 1 {
                let len = 400.0 * rng.random_range(1.0..1.5);
                let vf = rng.random_range(8.0..25.0);
                links.push(link(id, a, b, len, vf, 5.0, 0.15, 0.5));
                id += 1;
            }
        }
    }
    network(nodes, links)
}

/// Random FIFO table: per-period times within [ff, ff + 600 s]. Times are
/// piecewise constant, so any drop at a period boundary would let a later
/// entry exit earlier; each link's delays are therefore non-decreasing.
pub fn random_table(net: &Network, rng: &mut seed::Rng) -> TravelTimeTable {
    let mut t = TravelTimeTable::free_flow(net);
    for l in 0..net.links.len() {
        let ff = t.free_flow_time(l);
        let mut delays: Vec<f64> = (0..clock::NUM_PERIODS).map(|_| rng.random_range(0.0..600.0)).collect();
        delays.sort_by(f64::total_cmp);
        for (p, d) in delays.into_iter().enumerate() {
            t.set(l, p, ff + d);
        }
    }
    t
}

/// Exhaustive search over node-simple paths, evaluating each with the same
/// turn costs in path order. Under FIFO times and zero tolls, cycles never
/// help, so this is the time-expanded optimum.
pub fn exhaustive(q: &RouteQuery, origin: usize, dest: usize, depart: f64) -> Option<f64> {
    fn go(q: &RouteQuery, origin: usize, node: usize, dest: usize, t: f64, cost: f64, seen: &mut Vec<bool>, best: &mut Option<f64>) {
        if node == dest {
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        for &l in q.net.out_links(node) {
            let next = q.net.links[l].to;
            if seen[next] {
                continue;
            }
            let tc = turn_cost(q, l, t, origin);
            seen[next] = true;
            go(q, origin, next, dest, t + tc.time, cost + tc.cost, seen, best);
            seen[next] = false;
        }
    }
    let mut seen = vec![false; q.net.nodes.len()];
    seen[origin] = true;
    let mut best = None;
    go(q, origin, origin, dest, depart, 0.0, &mut seen, &mut best);
    best
}

// ---- regression and optimizer ----

pub fn rows_from(mut f: impl FnMut(&LeverSettings, usize) -> f64, n: usize) -> Vec<MetricsRow> {
    let cells = LeverSettings::all();
    (0..n)
        .map(|i| {
            let s = cells[i % cells.len()];
            let mut r = MetricsRow::zero(&s, (i / cells.len()) as u32, i as u64);
            r.vht = f(&s, i);
            r
        })
        .collect()
}

pub fn coverage(reps: u64, seed_base: u64) -> f64 {
    let truth = [
        (Term::intercept(), 5.0),
        (t("pricing"), 0.4),
        (t("transit"), 0.1),
        (t("signals"), -0.2),
        (t("tnc"), 0.05),
        (t("ohd"), -0.1),
        (t("ecomm"), -0.6),
        (t("ev_med"), -0.7),
        (t("ev_high"), -1.0),
        (t("pricing:signals"), 0.3),
        (t("transit:ecomm"), 0.2),
        (t("tnc:ecomm"), -0.1),
        (t("pricing:signals:tnc"), -0.2),
        (t("ohd:ev_high"), 0.1),
    ];
    let model = RegressionResult::from_coefficients("vht", &truth).unwrap();
    let terms: Vec<Term> = truth[1..].iter().map(|x| x.0.clone()).collect();
    let noise = Normal::new(0.0, 0.5).unwrap();
    let (mut covered, mut total) = (0usize, 0usize);
    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_base + rep);
        let rows = rows_from(|s, _| predict_metric(&model, s) + noise.sample(&mut rng), 760);
        let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(terms.clone())).unwrap();
        for (term, c) in &truth {
            let st = fit.terms.iter().find(|x| &x.term == term).unwrap();
            total += 1;
            if (st.coef - c).abs() <= 2.0 * st.std_err.unwrap() {
                covered += 1;
            }
        }
    }
    covered as f64 / total as f64
}

pub fn brute_force_levers(models: &[(RegressionResult, Objective)]) -> (LeverSettings, f64) {
    fn value(names: &[&str], x: &BTreeMap<&str, f64>) -> f64 {
        names.iter().map(|n| x[n]).product()
    }
    let eval = |m: &RegressionResult, x: &BTreeMap<&str, f64>| -> f64 {
        let mut y = 0.0;
        for s in &m.terms {
            let name = s.term.to_string();
            let parts: Vec<&str> = if name == "const" { vec![] } else { name.split(':').collect() };
            y += s.coef * value(&parts, x);
        }
        y
    };
    let mut cands = Vec::new();
    for p in 0..2 {
        for tr in 0..2 {
            for sg in 0..2 {
                for tn in 0..2 {
                    for oh in 0..2 {
                        for ec in 0..2 {
                            for ev in 0..3 {
                                let x: BTreeMap<&str, f64> = [
                                    ("pricing", p as f64),
                                    ("transit", tr as f64),
                                    ("signals", sg as f64),
                                    ("tnc", tn as f64),
                                    ("ohd", oh as f64),
                                    ("ecomm", ec as f64),
                                    ("ev_med", (ev == 1) as u8 as f64),
                                    ("ev_high", (ev == 2) as u8 as f64),
                                ]
                                .into_iter()
                                .collect();
                                let zero: BTreeMap<&str, f64> = x.keys().map(|k| (*k, 0.0)).collect();
                                let mut obj = 0.0;
                                for (m, o) in models {
                                    let base = eval(m, &zero);
                                    let pct = 100.0 * (eval(m, &x) - base) / base;
                                    obj += o.weight * if o.higher_is_better { -pct } else { pct };
                                }
                                let s = LeverSettings {
                                    pricing: p == 1,
                                    transit: tr == 1,
                                    signals: sg == 1,
                                    tnc_policy: tn == 1,
                                    ohd: oh == 1,
                                    ecomm_level: if ec == 1 { EcommLevel::High } else { EcommLevel::Low },
                                    ev_level: [EvLevel::Low, EvLevel::Med, EvLevel::High][ev],
                                };
                                cands.push((s, obj));
                            }
                        }
                    }
                }
            }
        }
    }
    let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let scale = cands.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
    *cands.iter().find(|c| c.1 <= min + 1e-12 * scale).unwrap()
}

pub fn random_models(rng: &mut ChaCha8Rng) -> Vec<(RegressionResult, Objective)> {
    let mut pool = Term::mains();
    pool.extend(Term::pairs());
    pool.push(t("pricing:signals:tnc"));
    pool.push(t("transit:ohd:ev_high"));
    let metrics = ["vht", "vmt", "energy_kwh", "ghg_g_per_mi", "mep", "efficiency_mi_per_kwh"];
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|i| {
            let mut coefs = vec![(Term::intercept(), rng.random_range(5.0..50.0))];
            for term in &pool {
                if rng.random_bool(0.3) {
                    coefs.push((term.clone(), rng.random_range(-3.0..3.0)));
                }
            }
            let metric = metrics[(i + rng.random_range(0..metrics.len())) % metrics.len()];
            let weight = if i == 0 { rng.random_range(0.1..2.0) } else if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..2.0) };
            (RegressionResult::from_coefficients(metric, &coefs).unwrap(), Objective::new(metric, weight))
        })
        .collect()
}

// ---- tours ----

pub fn tsp_brute_force(depot: usize, nodes: &[usize], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    fn rec(depot: usize, left: &mut Vec<usize>, order: &mut Vec<usize>, cost: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if left.is_empty() {
            *best = best.min(tour_length(depot, order, cost));
            return;
        }
        for i in 0..left.len() {
            let n = left.remove(i);
            order.push(n);
            rec(depot, left, order, cost, best);
            order.pop();
            left.insert(i, n);
        }
    }
    let mut best = f64::INFINITY;
    rec(depot, &mut nodes.to_vec(), &mut Vec::new(), cost, &mut best);
    best
}
