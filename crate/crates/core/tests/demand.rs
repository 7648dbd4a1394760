mod common;

use std::collections::BTreeMap;

use mesopolis::demand::*;
use mesopolis::netmodel::{Network, NetworkParts, Zone};
use mesopolis::router::Mode;
use mesopolis::seed;

fn zone(id: u32, centroid: usize, population: u64, opportunities: f64) -> Zone {
    Zone {
        id,
        centroid,
        population,
        median_income: 50_000.0 + 10_000.0 * id as f64,
        opportunities,
        low_income_percentile: 10.0,
        burden_percentiles: BTreeMap::new(),
        cbd: false,
        dac: false,
    }
}

fn two_zone_net(opp: (f64, f64)) -> Network {
    let nodes = vec![common::node(1, 0.0, 0.0), common::node(2, 5000.0, 0.0)];
    let links = vec![
        common::link(1, 0, 1, 5000.0, 15.0, 5.0, 0.15, 0.5),
        common::link(2, 1, 0, 5000.0, 15.0, 5.0, 0.15, 0.5),
    ];
    Network::from_parts(NetworkParts {
        nodes,
        links,
        zones: vec![zone(1, 0, 500, opp.0), zone(2, 1, 500, opp.1)],
        ..Default::default()
    })
}

/// Same cost for every mode and pair.
struct FlatLos {
    opp: Vec<f64>,
    time: f64,
    money: [f64; 4],
}

impl LevelOfService for FlatLos {
    fn zones(&self) -> usize {
        self.opp.len()
    }
    fn opportunities(&self, zone: usize) -> f64 {
        self.opp[zone]
    }
    fn leg(&self, mode: Mode, _from: usize, _to: usize, _t: f64, _p: &Person) -> Option<LegCost> {
        Some(LegCost { time: self.time, money: self.money[mode.index()], distance: 3000.0 })
    }
}

fn flat_los() -> FlatLos {
    FlatLos { opp: vec![50.0, 50.0], time: 900.0, money: [2.0, 2.25, 0.0, 12.0] }
}

fn quiet_config() -> DemandConfig {
    DemandConfig { shop_rate: 0.0, errand_rate: 0.0, leisure_rate: 0.0, ..Default::default() }
}

fn person(id: u32, worker: bool) -> Person {
    Person {
        id,
        household_id: id,
        home_zone: 0,
        work_zone: worker.then_some(1),
        income: 50_000.0,
        income_quintile: 3,
        worker,
        telecommuter_today: false,
        vot: 18.0,
        vehicle_access: true,
        cacc_household: false,
    }
}

fn household(id: u32) -> Household {
    Household { id, zone: 0, income: 50_000.0, vehicle: true, cacc: false, members: vec![id] }
}

fn within_3_sigma(observed: f64, mean: f64, var: f64) -> bool {
    (observed - mean).abs() <= 3.0 * var.sqrt()
}

#[test]
fn one_zone_population_lives_there() {
    let mut net = two_zone_net((1.0, 1.0));
    net.zones[1].population = 0;
    let pop = synthesize_population(&net, &PopulationSpec { total: 10, ..Default::default() }, 1);
    assert_eq!(pop.persons.len(), 10);
    assert!(pop.persons.iter().all(|p| p.home_zone == 0));
}

#[test]
fn zero_population_is_empty() {
    let mut net = two_zone_net((1.0, 1.0));
    net.zones.iter_mut().for_each(|z| z.population = 0);
    let pop = synthesize_population(&net, &PopulationSpec::default(), 1);
    assert!(pop.persons.is_empty() && pop.households.is_empty());
}

#[test]
fn quintiles_are_rank_based() {
    let net = two_zone_net((1.0, 1.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 1000, ..Default::default() }, 7);
    let mut counts = [0; 5];
    for p in &pop.persons {
        counts[p.income_quintile as usize - 1] += 1;
    }
    assert_eq!(counts, [200; 5]);
    let max_q1 = pop.persons.iter().filter(|p| p.income_quintile == 1).map(|p| p.income).fold(0.0, f64::max);
    let min_q2 = pop.persons.iter().filter(|p| p.income_quintile == 2).map(|p| p.income).fold(f64::INFINITY, f64::min);
    assert!(max_q1 <= min_q2);
}

#[test]
fn gravity_split_follows_opportunities() {
    let net = two_zone_net((90.0, 10.0));
    let spec = PopulationSpec { total: 2000, work_distance_decay: f64::INFINITY, ..Default::default() };
    for s in 0..5 {
        let pop = synthesize_population(&net, &spec, s);
        let workers: Vec<_> = pop.persons.iter().filter(|p| p.worker).collect();
        let n = workers.len() as f64;
        let first = workers.iter().filter(|p| p.work_zone == Some(0)).count() as f64;
        assert!(within_3_sigma(first, 0.9 * n, n * 0.9 * 0.1), "seed {s}: {first} of {n}");
    }
}

#[test]
fn cacc_share_is_exact() {
    let net = two_zone_net((1.0, 1.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 3000, ..Default::default() }, 3);
    let vehicle = pop.households.iter().filter(|h| h.vehicle).count();
    let cacc = pop.households.iter().filter(|h| h.cacc).count();
    assert_eq!(cacc, (0.4 * vehicle as f64).round() as usize);
    assert!(pop.households.iter().all(|h| !h.cacc || h.vehicle));
}

#[test]
fn logit_closed_form() {
    let p = logit(&[Some(-1.0), Some(-2.0)]);
    let e = 1.0 / (1.0 + (-1.0f64).exp());
    assert!((p[0] - e).abs() < 1e-12 && (p[0] - 0.7311).abs() < 1e-4);
    assert!((p[1] - 0.2689).abs() < 1e-4);
    let p = logit(&[Some(-1.0), None, Some(-1.0)]);
    assert_eq!(p[1], 0.0);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn equal_utilities_split_evenly() {
    let coeffs = ChoiceCoefficients { asc: [0.0; 4], ..Default::default() };
    let costs = [(Mode::Drive, Some(5.0)), (Mode::Transit, Some(5.0)), (Mode::Walk, None)];
    let mut rng = seed::rng(&[11]);
    let n = 10_000;
    let drive = (0..n).filter(|_| mode_choice(&costs, &coeffs, &mut rng).unwrap() == Mode::Drive).count();
    assert!((drive as f64 / n as f64 - 0.5).abs() < 0.02);
}

#[test]
fn no_feasible_mode_is_an_error() {
    let costs = [(Mode::Drive, None), (Mode::Transit, Some(f64::INFINITY))];
    let mut rng = seed::rng(&[1]);
    assert_eq!(mode_choice(&costs, &ChoiceCoefficients::default(), &mut rng), Err(NoFeasibleMode));
}

#[test]
fn cheaper_tnc_is_more_likely() {
    let coeffs = ChoiceCoefficients::default();
    let share = |fare: f64| {
        let costs = [(Mode::Drive, Some(8.0)), (Mode::Transit, Some(9.0)), (Mode::Tnc, Some(fare))];
        mode_probabilities(&costs, &coeffs)[2].1
    };
    assert!(share(7.0) > share(14.0));
}

#[test]
fn departure_flat_profile_peaks_at_preferred() {
    let coeffs = ChoiceCoefficients::default();
    let preferred = 8.0 * 3600.0;
    let mut rng = seed::rng(&[5]);
    let mut hist = BTreeMap::new();
    for _ in 0..2000 {
        let t = departure_time_choice(preferred, |_| Some((600.0, 0.0)), 18.0, &coeffs, &mut rng);
        *hist.entry(t as i64).or_insert(0) += 1;
    }
    let mode = hist.iter().max_by_key(|(_, c)| **c).unwrap().0;
    assert_eq!(*mode, preferred as i64);
}

#[test]
fn departure_avoids_peak_toll() {
    let coeffs = ChoiceCoefficients { beta_shift: 0.1, ..Default::default() };
    let preferred = 8.0 * 3600.0;
    let profile = |t: f64| Some((600.0, if (t - preferred).abs() < 1.0 { 3.0 } else { 0.0 }));
    let mut rng = seed::rng(&[6]);
    let n = 5000;
    let draws: Vec<f64> = (0..n).map(|_| departure_time_choice(preferred, profile, 18.0, &coeffs, &mut rng)).collect();
    let peak = draws.iter().filter(|&&t| t == preferred).count();
    let shoulder = draws.iter().filter(|&&t| t == preferred + 900.0).count();
    assert!(shoulder > peak, "shoulder {shoulder} peak {peak}");
}

#[test]
fn departure_infinite_beta_is_degenerate() {
    let coeffs = ChoiceCoefficients { beta_shift: 1e9, ..Default::default() };
    let mut rng = seed::rng(&[7]);
    for _ in 0..200 {
        let t = departure_time_choice(8.0 * 3600.0, |t| Some((600.0 + t * 1e-3, 1.0)), 18.0, &coeffs, &mut rng);
        assert_eq!(t, 8.0 * 3600.0);
    }
}

#[test]
fn non_worker_without_activities_stays_home() {
    let plan = generate_activities(&person(0, false), &quiet_config(), &flat_los(), 1);
    assert!(plan.is_stay_home());
    assert_eq!(plan.trip_count(), 0);
}

#[test]
fn worker_without_activities_commutes() {
    let plan = generate_activities(&person(0, true), &quiet_config(), &flat_los(), 1);
    let trips = plan.trips();
    assert_eq!(trips.len(), 2);
    assert_eq!((trips[0].origin_purpose, trips[0].purpose), (ActivityType::Home, ActivityType::Work));
    assert_eq!((trips[1].origin_purpose, trips[1].purpose), (ActivityType::Work, ActivityType::Home));
    let work = &plan.activities[1];
    assert!(work.start >= 6.0 * 3600.0 && work.start <= 10.0 * 3600.0);
}

#[test]
fn shop_count_is_poisson() {
    let cfg = DemandConfig { shop_rate: 0.5, errand_rate: 0.0, leisure_rate: 0.0, ..Default::default() };
    let los = flat_los();
    let shops: usize = (0..10_000)
        .map(|i| {
            generate_activities(&person(i, false), &cfg, &los, 42)
                .activities
                .iter()
                .filter(|a| a.kind == ActivityType::Shop)
                .count()
        })
        .sum();
    // Poisson variance bounds the capped count's variance from above
    assert!(within_3_sigma(shops as f64, 5000.0, 5000.0), "{shops}");
}

#[test]
fn plans_are_closed_and_ordered() {
    let net = two_zone_net((60.0, 40.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 600, ..Default::default() }, 9);
    let cfg = DemandConfig { shop_rate: 0.8, errand_rate: 0.6, leisure_rate: 0.6, ..Default::default() };
    let los = flat_los();
    for p in &pop.persons {
        let plan = generate_activities(p, &cfg, &los, 9);
        let acts = &plan.activities;
        assert_eq!(acts.first().unwrap().kind, ActivityType::Home);
        assert_eq!(acts.last().unwrap().kind, ActivityType::Home);
        assert_eq!(acts.first().unwrap().zone, p.home_zone);
        assert_eq!(acts.last().unwrap().zone, p.home_zone);
        for w in acts.windows(2) {
            assert!(w[0].end() <= w[1].depart.unwrap() + 1e-9 || w[0].kind == ActivityType::Home);
            assert!(w[1].depart.unwrap() <= w[1].start + 1e-9);
            assert!(w[0].end() <= w[1].start + 1e-9, "overlap for person {}", p.id);
        }
        let trips = plan.trips();
        for w in trips.windows(2) {
            assert_eq!(w[0].to_zone, w[1].from_zone);
        }
    }
}

#[test]
fn plans_are_deterministic() {
    let net = two_zone_net((60.0, 40.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 300, ..Default::default() }, 2);
    let cfg = DemandConfig { shop_rate: 0.5, ..Default::default() };
    let run = || pop.persons.iter().map(|p| generate_activities(p, &cfg, &flat_los(), 2)).collect::<Vec<_>>();
    assert_eq!(run(), run());
}

#[test]
fn telecommute_flags_exact_share() {
    let mut persons: Vec<Person> = (0..1200).map(|i| person(i, i < 1000)).collect();
    assert_eq!(apply_telecommute(&mut persons, 0.15, 3), 150);
    assert_eq!(persons.iter().filter(|p| p.telecommuter_today).count(), 150);
    assert!(persons.iter().all(|p| !p.telecommuter_today || p.worker));
    assert_eq!(apply_telecommute(&mut persons, 0.0, 3), 0);
    assert!(persons.iter().all(|p| !p.telecommuter_today));
}

#[test]
fn telecommuters_keep_discretionary_trips() {
    let cfg = DemandConfig { shop_rate: 1.0, leisure_rate: 0.5, ..Default::default() };
    let los = flat_los();
    for i in 0..200 {
        let commuter = person(i, true);
        let mut home_worker = commuter.clone();
        home_worker.telecommuter_today = true;
        let a = generate_activities(&commuter, &cfg, &los, 5);
        let b = generate_activities(&home_worker, &cfg, &los, 5);
        let disc = |p: &ActivityPlan| p.activities.iter().filter(|a| a.kind.is_discretionary()).count();
        assert_eq!(disc(&a), disc(&b));
        assert!(b.activities.iter().all(|a| a.kind != ActivityType::Work));
        let expected = if disc(&b) == 0 { 0 } else { disc(&b) + 1 };
        assert_eq!(b.trip_count(), expected);
        assert_eq!(a.trip_count(), disc(&a) + 2);
    }
}

#[test]
fn telecommute_reduces_trips() {
    let net = two_zone_net((60.0, 40.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 2000, ..Default::default() }, 4);
    let cfg = DemandConfig::default();
    let los = flat_los();
    let trips_at = |rate: f64| {
        let mut persons = pop.persons.clone();
        apply_telecommute(&mut persons, rate, 4);
        persons.iter().map(|p| generate_activities(p, &cfg, &los, 4).trip_count()).sum::<usize>()
    };
    let counts: Vec<usize> = [0.0, 0.15, 0.3, 0.6].iter().map(|&r| trips_at(r)).collect();
    assert!(counts.windows(2).all(|w| w[1] < w[0]), "{counts:?}");
}

#[test]
fn delivery_totals_high_level() {
    let hh: Vec<Household> = (0..700).map(household).collect();
    let rates = DeliveryRates::for_level(EcommLevel::High);
    let reqs = generate_deliveries(&hh, &rates, 8);
    for (cat, mean) in [(DeliveryCategory::Ecommerce, 980.0), (DeliveryCategory::Grocery, 150.0), (DeliveryCategory::Meal, 350.0)] {
        let n = reqs.iter().filter(|r| r.category == cat).count() as f64;
        assert!(within_3_sigma(n, mean, mean), "{cat:?}: {n}");
    }
    for r in &reqs {
        if r.category.is_on_demand() {
            assert!((r.window.1 - r.window.0 - PROMISE).abs() < 1e-6);
            assert_eq!(r.window.0, r.request_time);
        } else {
            assert_eq!(r.window, PARCEL_WINDOW);
        }
    }
}

#[test]
fn delivery_low_level_mean() {
    let rates = DeliveryRates::for_level(EcommLevel::Low);
    assert!((rates.daily_total() - 0.857).abs() < 5e-4);
    let hh: Vec<Household> = (0..5000).map(household).collect();
    let n = generate_deliveries(&hh, &rates, 2).len() as f64;
    let mean = 5000.0 * rates.daily_total();
    assert!(within_3_sigma(n, mean, mean));
}

#[test]
fn zero_rates_no_deliveries() {
    let hh: Vec<Household> = (0..100).map(household).collect();
    let rates = DeliveryRates { ecommerce: 0.0, grocery: 0.0, meal: 0.0 };
    assert!(generate_deliveries(&hh, &rates, 1).is_empty());
}

fn shopping_plan(person: u32, shops: usize) -> ActivityPlan {
    let mut p = ActivityPlan::stay_home(person, 0);
    let mut acts = vec![p.activities[0].clone()];
    acts[0].duration = 3600.0;
    for k in 0..shops {
        acts.push(Activity {
            kind: ActivityType::Shop,
            zone: 1,
            start: 10.0 * 3600.0 + k as f64 * 7200.0,
            duration: 1800.0,
            mode: Some(Mode::Drive),
            depart: Some(10.0 * 3600.0 + k as f64 * 7200.0 - 600.0),
            flexible: true,
        });
    }
    let mut home = acts[0].clone();
    home.start = 22.0 * 3600.0;
    home.mode = Some(Mode::Drive);
    home.depart = Some(21.0 * 3600.0);
    acts.push(home);
    p.activities = acts;
    p
}

fn delivery(household: u32, category: DeliveryCategory) -> DeliveryRequest {
    DeliveryRequest { id: household, household, zone: 0, category, request_time: PARCEL_WINDOW.0, window: PARCEL_WINDOW }
}

fn pop_of(n: u32) -> Population {
    Population { persons: (0..n).map(|i| person(i, false)).collect(), households: (0..n).map(household).collect() }
}

#[test]
fn substitution_boundaries() {
    let pop = pop_of(2);
    let dels = [delivery(0, DeliveryCategory::Ecommerce)];
    let mut plans = vec![shopping_plan(0, 3), shopping_plan(1, 3)];
    assert!(substitute_shopping_trips(&mut plans, &pop, &dels, 0.0, 1).is_empty());
    let log = substitute_shopping_trips(&mut plans, &pop, &dels, 1.0, 1);
    assert_eq!(log.len(), 3);
    assert!(log.iter().all(|r| r.person == 0 && r.cause == "delivery substitution"));
    assert!(plans[0].is_stay_home());
    assert_eq!(plans[1].activities.len(), 5);
    // meals do not substitute for shopping
    let mut plans = vec![shopping_plan(0, 3)];
    assert!(substitute_shopping_trips(&mut plans, &pop, &[delivery(0, DeliveryCategory::Meal)], 1.0, 1).is_empty());
}

#[test]
fn substitution_rate_is_binomial() {
    let pop = pop_of(5000);
    let dels: Vec<DeliveryRequest> = (0..5000).map(|h| delivery(h, DeliveryCategory::Grocery)).collect();
    let mut plans: Vec<ActivityPlan> = (0..5000).map(|i| shopping_plan(i, 2)).collect();
    let removed = substitute_shopping_trips(&mut plans, &pop, &dels, 0.3, 12).len() as f64;
    assert!(within_3_sigma(removed, 3000.0, 10_000.0 * 0.3 * 0.7), "{removed}");
}

#[test]
fn dump_round_trip() {
    let net = two_zone_net((60.0, 40.0));
    let pop = synthesize_population(&net, &PopulationSpec { total: 200, ..Default::default() }, 2);
    let mut buf = Vec::new();
    write_persons(&pop.persons, &mut buf).unwrap();
    assert_eq!(read_persons(buf.as_slice()).unwrap(), pop.persons);

    let cfg = DemandConfig { shop_rate: 0.5, ..Default::default() };
    let plans: Vec<ActivityPlan> = pop.persons.iter().map(|p| generate_activities(p, &cfg, &flat_los(), 2)).collect();
    let mut buf = Vec::new();
    write_plans(&plans, &mut buf).unwrap();
    assert_eq!(read_plans(buf.as_slice()).unwrap(), plans);
}

#[test]
fn dump_rejects_bad_rows() {
    let text = "person,seq,kind,zone,start,duration,mode,depart,flexible\n0,0,home,0,0,10,,,false\n0,2,work,1,10,10,drive,5,false\n";
    let err = read_plans(text.as_bytes()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}
