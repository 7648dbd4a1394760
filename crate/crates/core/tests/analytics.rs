mod common;

use common::oracles::{brute_force_levers, coverage, random_models, rows_from};
use mesopolis::analytics::*;
use mesopolis::demand::{EcommLevel, Population};
use mesopolis::energy::{EvLevel, Powertrain, PowertrainTable, VehicleClass};
use mesopolis::flowsim::ExitRecord;
use mesopolis::netmodel::Zone;
use mesopolis::scenarios::{LeverSettings, TollProfile};
use num_traits::Zero;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn model_file(name: &str) -> RegressionResult {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/models").join(name);
    RegressionResult::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn on(fs: &[Factor]) -> LeverSettings {
    let mut s = LeverSettings::all()[0];
    for f in fs {
        f.apply(&mut s);
    }
    s
}

fn t(s: &str) -> Term {
    s.parse().unwrap()
}

// ---- regression ----

#[test]
fn noiseless_planted_model_recovered() {
    let rows = rows_from(|s, _| 2.0 + 3.0 * s.pricing as u8 as f64 - 1.0 * s.signals as u8 as f64, 192);
    let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(vec![t("pricing"), t("signals")])).unwrap();
    assert!((fit.intercept() - 2.0).abs() < 1e-9);
    assert!((fit.coef(&t("pricing")).unwrap() - 3.0).abs() < 1e-9);
    assert!((fit.coef(&t("signals")).unwrap() + 1.0).abs() < 1e-9);
    assert_eq!(fit.n, 192);
}

#[test]
fn noiseless_interaction_model_recovered() {
    let truth = [
        (Term::intercept(), 10.0),
        (t("pricing"), -0.5),
        (t("ev_high"), -4.0),
        (t("ev_med"), -2.5),
        (t("pricing:signals"), 0.75),
        (t("transit:ecomm"), 1.25),
        (t("pricing:signals:tnc"), -0.3),
    ];
    let model = RegressionResult::from_coefficients("vht", &truth).unwrap();
    let rows = rows_from(|s, _| predict_metric(&model, s), 384);
    let terms: Vec<Term> = truth[1..].iter().map(|x| x.0.clone()).collect();
    let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(terms)).unwrap();
    for (term, c) in &truth {
        assert!((fit.coef(term).unwrap() - c).abs() < 1e-9, "{term}");
    }
}

#[test]
fn monte_carlo_two_se_coverage() {
    let rate = coverage(200, 0);
    assert!(rate >= 0.95, "coverage {rate}");
}

#[test]
fn standard_errors_calibrated() {
    // P(|T| <= 2) with 746 degrees of freedom is 0.9541.
    let rate = coverage(2000, 1_000_000);
    assert!((rate - 0.9541).abs() < 0.005, "coverage {rate}");
}

#[test]
fn t_statistic_is_coef_over_se_and_p_is_two_sided() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = rows_from(|s, _| 1.0 + 0.1 * s.ohd as u8 as f64 + rng.random_range(-1.0..1.0), 384);
    let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(vec![t("ohd")])).unwrap();
    for s in &fit.terms {
        assert!((s.t.unwrap() - s.coef / s.std_err.unwrap()).abs() < 1e-12);
        assert_eq!(s.signif, signif_code(s.p.unwrap()));
        assert!(s.p.unwrap() >= 0.0 && s.p.unwrap() <= 1.0);
    }
    // A large |t| gives a tiny p.
    assert!(fit.terms[0].p.unwrap() < 1e-10);
    assert!(fit.adj_r2.unwrap() < 1.0);
}

#[test]
fn rank_deficient_design_names_collinear_terms() {
    let rows: Vec<MetricsRow> = rows_from(|s, _| s.pricing as u8 as f64, 192)
        .into_iter()
        .filter(|r| r.ev == EvLevel::Low)
        .collect();
    let err = fit_ols(&rows, "vht", &TermSpec::Fixed(vec![t("pricing"), t("ev_med"), t("ev_high")])).unwrap_err();
    assert_eq!(err, RegressionError::RankDeficient(vec!["ev_med".into(), "ev_high".into()]));
    assert!(err.to_string().contains("ev_med, ev_high"));
}

#[test]
fn too_few_rows_and_unknown_metric() {
    let rows = rows_from(|_, i| i as f64, 2);
    assert!(matches!(fit_ols(&rows, "vht", &TermSpec::Fixed(vec![t("pricing")])), Err(RegressionError::TooFewRows { .. })));
    assert!(matches!(fit_ols(&rows, "nope", &TermSpec::default()), Err(RegressionError::UnknownMetric(_))));
}

#[test]
fn failed_rows_are_skipped() {
    let mut rows = rows_from(|s, _| 1.0 + s.pricing as u8 as f64, 192);
    rows[0].error = "boom".into();
    rows[0].vht = 1e9;
    let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(vec![t("pricing")])).unwrap();
    assert_eq!(fit.n, 191);
    assert!((fit.coef(&t("pricing")).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn scan_keeps_strong_interactions_only() {
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows = rows_from(
        |s, _| {
            let x = |f: Factor| f.value(s) as u8 as f64;
            3.0 + 0.2 * x(Factor::Pricing) - 0.4 * x(Factor::Ecomm) + 1.0 * x(Factor::Pricing) * x(Factor::Signals)
                + noise.sample(&mut rng)
        },
        768,
    );
    let fit = fit_ols(&rows, "vht", &TermSpec::default()).unwrap();
    let names = fit.term_names();
    assert_eq!(&names[..9], &["const", "pricing", "transit", "signals", "tnc", "ohd", "ecomm", "ev_med", "ev_high"]);
    assert!(names.contains(&"pricing:signals".to_string()));
    for s in &fit.terms[9..] {
        assert_eq!(s.term.factors().len(), 2);
    }
    assert!(names.len() < 9 + 6, "{names:?}");
}

#[test]
fn significance_codes_on_boundaries() {
    let fixture = [
        (0.0, "***"),
        (0.0005, "***"),
        (0.001, "***"),
        (0.0011, "**"),
        (0.005, "**"),
        (0.01, "**"),
        (0.0101, "*"),
        (0.05, "*"),
        (0.0501, "."),
        (0.1, "."),
        (0.1001, " "),
        (1.0, " "),
    ];
    for (p, code) in fixture {
        assert_eq!(signif_code(p), code, "p = {p}");
    }
}

#[test]
fn reference_model_codes_match_their_tables() {
    let vht = model_file("vht.json");
    let codes: Vec<&str> = vht.terms.iter().map(|s| s.signif.as_str()).collect();
    assert_eq!(codes, ["***", ".", "**", ".", ".", "***", "**", ".", "***", "."]);
    let energy = model_file("energy_kwh.json");
    let codes: Vec<&str> = energy.terms.iter().map(|s| s.signif.as_str()).collect();
    assert_eq!(codes, ["***", "***", "*", "*", "***", "***", "**"]);
    let ghg = model_file("ghg_g_per_mi.json");
    let codes: Vec<&str> = ghg.terms.iter().map(|s| s.signif.as_str()).collect();
    assert_eq!(codes, ["***", "***", "***", "**", "***", "***", "***"]);
}

#[test]
fn reference_model_sensitivities_recomputed() {
    let vht = model_file("vht.json");
    let pct = |name: &str| 100.0 * vht.terms.iter().find(|s| s.term == t(name)).unwrap().sensitivity.unwrap();
    assert_eq!(format!("{:.1}", pct("pricing")), "-0.9");
    assert_eq!(format!("{:.1}", pct("signals")), "-1.7");
    assert_eq!(format!("{:.1}", pct("ecomm")), "-4.6");
    assert_eq!(format!("{:.1}", pct("pricing:signals")), "1.9");
    assert!(vht.terms[0].sensitivity.is_none());
    let energy = model_file("energy_kwh.json");
    let ev = 100.0 * energy.coef(&t("ev_high")).unwrap() / energy.intercept();
    assert_eq!(format!("{ev:.2}"), "-35.33");
}

#[test]
fn report_layout() {
    let vht = model_file("vht.json");
    let mut buf = Vec::new();
    vht.write_report(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "term,coef,std_err,t,p,signif,sensitivity");
    assert!(lines[1].starts_with("const,6.975,0.035,"));
    assert_eq!(lines.len(), 1 + 10 + 2);
    assert_eq!(lines[11], "N,760,,,,,");
    assert_eq!(lines[12], "adj_R2,0.364,,,,,");
}

#[test]
fn model_json_round_trip() {
    let vht = model_file("vht.json");
    let again = RegressionResult::from_json(&vht.to_json()).unwrap();
    assert_eq!(again, vht);
    assert!(RegressionResult::from_json(r#"{"response":"vht","terms":[{"term":"pricing","coef":1}]}"#).is_err());
    assert!(RegressionResult::from_json(r#"{"response":"vht","terms":[{"term":"const","coef":1},{"term":"warp","coef":1}]}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn residuals_orthogonal_to_design(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let terms = vec![t("pricing"), t("ecomm"), t("ev_med"), t("ev_high"), t("pricing:transit")];
        let rows = rows_from(|_, _| rng.random_range(-5.0..5.0), 400);
        let fit = fit_ols(&rows, "vht", &TermSpec::Fixed(terms)).unwrap();
        let all: Vec<Term> = fit.terms.iter().map(|s| s.term.clone()).collect();
        let mut xtr = vec![0.0; all.len()];
        let mut scale = 0.0f64;
        for r in &rows {
            let x = design_row(&all, &r.settings());
            let resid = r.vht - predict_metric(&fit, &r.settings());
            for (j, v) in x.iter().enumerate() {
                xtr[j] += v * resid;
            }
            scale = scale.max(r.vht.abs());
        }
        for v in xtr {
            prop_assert!(v.abs() <= 1e-8 * scale * rows.len() as f64);
        }
    }
}

// ---- prediction, optimizer, decomposition on the reference models ----

#[test]
fn vht_model_all_off_and_pricing_signals() {
    let vht = model_file("vht.json");
    let off = LeverSettings::all()[0];
    assert_eq!(predict_metric(&vht, &off), 6.975);
    let ps = predict_metric(&vht, &on(&[Factor::Pricing, Factor::Signals]));
    assert!((ps - 6.927).abs() < 1e-12);
    let pct = 100.0 * (ps - 6.975) / 6.975;
    assert_eq!(format!("{pct:.2}"), "-0.69");
    assert_eq!(format!("{pct:.1}"), "-0.7");
}

#[test]
fn vht_model_optimum() {
    let vht = model_file("vht.json");
    let choice = optimize_levers(&[(&vht, Objective::new("vht", 1.0))]).unwrap();
    let want = on(&[Factor::Pricing, Factor::Signals, Factor::Tnc, Factor::Ohd, Factor::Ecomm]);
    assert_eq!(choice.settings, want);
    assert_eq!(choice.vector(), [1, 0, 1, 1, 1, 1, 1, 0, 0]);
    let d = &choice.deltas[0];
    assert!((d.predicted - d.baseline + 0.488).abs() < 1e-12);
    assert_eq!(format!("{:.1}", d.percent), "-7.0");
}

#[test]
fn vht_model_decomposition() {
    let vht = model_file("vht.json");
    let seq = [Factor::Pricing, Factor::Signals, Factor::Tnc, Factor::Ohd, Factor::Ecomm];
    let dec = cumulative_decomposition(&vht, &seq).unwrap();
    let sum = dec.steps.iter().fold(num_rational::BigRational::zero(), |a, s| a + &s.delta_exact);
    assert_eq!(sum, dec.total_exact);
    assert!((dec.total + 0.488).abs() < 1e-12);
    assert_eq!(format!("{:.1}", dec.total_percent()), "-7.0");
    let tnc = &dec.steps[2];
    assert!((tnc.isolated - 0.071).abs() < 1e-12);
    assert!(tnc.delta < 0.0);
    let single = cumulative_decomposition(&vht, &[Factor::Ecomm]).unwrap();
    assert!((single.total + 0.321).abs() < 1e-12);
}

#[test]
fn energy_model_optimum_includes_ev_high_and_pricing() {
    let energy = model_file("energy_kwh.json");
    let choice = optimize_levers(&[(&energy, Objective::new("energy_kwh", 1.0))]).unwrap();
    assert_eq!(choice.settings.ev_level, EvLevel::High);
    assert!(choice.settings.pricing);
    assert_eq!(choice.settings.ecomm_level, EcommLevel::Low);
}

#[test]
fn zero_weight_falls_back_to_all_off() {
    let vht = model_file("vht.json");
    let energy = model_file("energy_kwh.json");
    // Energy weight alone: VHT-only levers (signals) fall to the default.
    let choice = optimize_levers(&[(&vht, Objective::new("vht", 0.0)), (&energy, Objective::new("energy_kwh", 1.0))]).unwrap();
    assert!(!choice.settings.signals && !choice.settings.transit);
    assert!(matches!(optimize_levers(&[(&vht, Objective::new("vht", 0.0))]), Err(OptimizeError::Weights)));
    assert!(matches!(optimize_levers(&[(&vht, Objective::new("vht", -1.0))]), Err(OptimizeError::Weights)));
}

#[test]
fn higher_is_better_metrics_are_negated() {
    let eff = model_file("efficiency_mi_per_kwh.json");
    let o = Objective::new("efficiency_mi_per_kwh", 1.0);
    assert!(o.higher_is_better);
    let choice = optimize_levers(&[(&eff, o)]).unwrap();
    assert_eq!(choice.settings.ev_level, EvLevel::High);
    assert!(choice.deltas[0].percent > 0.0);
    assert!(Objective::new("mep", 1.0).higher_is_better);
    assert!(!Objective::new("vht", 1.0).higher_is_better);
}

// Separately coded brute force: explicit nested loops and term products
// evaluated from factor names.
#[test]
fn optimizer_matches_brute_force_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..50 {
        let models = random_models(&mut rng);
        let refs: Vec<(&RegressionResult, Objective)> = models.iter().map(|(m, o)| (m, o.clone())).collect();
        let choice = optimize_levers(&refs).unwrap();
        let (s, obj) = brute_force_levers(&models);
        assert_eq!(choice.settings, s, "case {case}");
        assert!((choice.objective - obj).abs() <= 1e-9 * obj.abs().max(1.0), "case {case}");
    }
}

#[test]
fn argmin_invariant_under_weight_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let models = random_models(&mut rng);
        let refs: Vec<(&RegressionResult, Objective)> = models.iter().map(|(m, o)| (m, o.clone())).collect();
        let base = optimize_levers(&refs).unwrap().settings;
        for c in [1e-3, 0.37, 3.0, 1e6] {
            let scaled: Vec<(&RegressionResult, Objective)> =
                models.iter().map(|(m, o)| (m, Objective { weight: o.weight * c, ..o.clone() })).collect();
            assert_eq!(optimize_levers(&scaled).unwrap().settings, base, "scale {c}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn decomposition_telescopes_for_any_order(seed in any::<u64>(), order in Just(Factor::ALL.to_vec()).prop_shuffle(), k in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, _) = random_models(&mut rng).remove(0);
        let seq: Vec<Factor> = order.into_iter().filter(|f| *f != Factor::EvMed).take(k).collect();
        let dec = cumulative_decomposition(&model, &seq).unwrap();
        let sum = dec.steps.iter().fold(num_rational::BigRational::zero(), |a, s| a + &s.delta_exact);
        prop_assert_eq!(sum, dec.total_exact.clone());
        let last = on(&seq);
        prop_assert!((dec.baseline + dec.total - predict_metric(&model, &last)).abs() < 1e-9);
    }
}

// ---- metric accounting ----

const MILE: f64 = 1609.344;

fn uniform_table(ld_ice_kwh_per_km: f64) -> PowertrainTable {
    let mut csv = String::from("class,powertrain,speed_bin_kmh_lo,intensity_kwh_per_km,wtw_g_per_kwh,pm25_exhaust_g_per_km,pm25_wear_g_per_km\n");
    for class in ["ld", "md", "hd"] {
        for pt in ["ice", "hev", "bev"] {
            let k = if class == "ld" && pt == "ice" { ld_ice_kwh_per_km } else { 1.0 };
            let exhaust = if pt == "bev" { 0.0 } else { 0.01 };
            csv.push_str(&format!("{class},{pt},0,{k},300,{exhaust},0.01\n"));
        }
    }
    PowertrainTable::read_csv(csv.as_bytes()).unwrap()
}

fn two_link_net() -> mesopolis::netmodel::Network {
    use common::*;
    let nodes = vec![node(1, 0.0, 0.0), node(2, 10.0 * MILE, 0.0), node(3, 15.0 * MILE, 0.0)];
    let links = vec![link(1, 0, 1, 10.0 * MILE, 30.0, 5.0, 0.15, 0.5), link(2, 1, 2, 5.0 * MILE, 30.0, 5.0, 0.15, 0.5)];
    network(nodes, links)
}

fn leg(kind: LegKind, productive: bool) -> LegInfo {
    LegInfo { kind, class: VehicleClass::Ld, powertrain: Powertrain::Ice, productive, person: None }
}

fn exit(tag: u64, link: usize, t_in: f64, t_out: f64) -> ExitRecord {
    ExitRecord { vehicle_id: tag as u32, tag, link, t_in, t_out }
}

fn aggregate(log: &DayLog, table: &PowertrainTable) -> Result<MetricsRow, MetricsError> {
    let net = two_link_net();
    let s = LeverSettings::all()[0];
    let pop = Population::default();
    let tolls = TollProfile::empty();
    aggregate_metrics(
        log,
        &MetricInputs { settings: &s, replication: 0, seed: 0, population: &pop, net: &net, table, tolls: &tolls, costs: CostParams::default() },
    )
}

#[test]
fn ten_mile_trip_on_four_kwh() {
    let table = uniform_table(4.0 / (10.0 * MILE / 1000.0));
    let log = DayLog { legs: vec![leg(LegKind::Private, true)], exits: vec![exit(0, 0, 8.0 * 3600.0, 8.5 * 3600.0)], ..Default::default() };
    let row = aggregate(&log, &table).unwrap();
    assert!((row.vmt - 10.0).abs() < 1e-9);
    assert!((row.energy_kwh - 4.0).abs() < 1e-9);
    assert!((row.efficiency_mi_per_kwh.unwrap() - 2.5).abs() < 1e-9);
    assert!((row.ghg_g_per_mi - row.ghg_g / row.vmt).abs() < 1e-9);
    assert!((row.vht - 0.5).abs() < 1e-12);
}

#[test]
fn deadhead_miles_are_not_productive() {
    let table = uniform_table(0.2);
    let log = DayLog {
        legs: vec![leg(LegKind::Tnc, true), leg(LegKind::Tnc, false)],
        exits: vec![exit(0, 0, 0.0, 900.0), exit(1, 1, 900.0, 1400.0)],
        ..Default::default()
    };
    let row = aggregate(&log, &table).unwrap();
    assert!((row.vmt - 15.0).abs() < 1e-9);
    assert!((row.productive_miles - 10.0).abs() < 1e-9);
    assert!((row.efficiency_mi_per_kwh.unwrap() - row.productive_miles / row.energy_kwh).abs() < 1e-9);
}

#[test]
fn zero_energy_reports_no_efficiency() {
    let row = aggregate(&DayLog::default(), &PowertrainTable::shipped()).unwrap();
    assert_eq!(row.efficiency_mi_per_kwh, None);
    assert_eq!(row.ghg_g_per_mi, 0.0);
    assert_eq!(row.metric("efficiency_mi_per_kwh"), None);
}

#[test]
fn unknown_vehicle_tag_names_the_missing_log() {
    let log = DayLog { exits: vec![exit(3, 0, 0.0, 10.0)], ..Default::default() };
    let err = aggregate(&log, &PowertrainTable::shipped()).unwrap_err();
    assert!(err.to_string().starts_with("missing log: vehicle registry"));
}

#[test]
fn metrics_table_round_trip_and_columns() {
    let mut rows = rows_from(|_, i| i as f64 * 0.25, 3);
    rows[1].efficiency_mi_per_kwh = Some(1.5);
    rows[2].error = "bad fixture".into();
    let mut buf = Vec::new();
    write_metrics(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("pricing,transit,signals,tnc,ohd,ecomm,ev,replication,seed,vmt,vht,"));
    assert!(header.ends_with("iterations,converged,gap,error"));
    assert_eq!(read_metrics(buf.as_slice()).unwrap(), rows);
}

// ---- cost burden and DAC ----

#[test]
fn cost_burden_examples() {
    let p = PersonCost { quintile: 1, operating: 2.0, tolls: 1.0, travel_hours: 1.0, vot: 15.0, ..Default::default() };
    assert_eq!(cost_burden(&[p])[0], 18.0);
    let all = PersonCost { rebate: 18.0, ..p };
    assert_eq!(cost_burden(&[all])[0], 0.0);
    let more = PersonCost { rebate: 20.0, ..p };
    assert_eq!(cost_burden(&[more])[0], -2.0);
}

fn zone_with(income: f64, burden: f64) -> Zone {
    let mut z = common::zone();
    z.low_income_percentile = income;
    z.burden_percentiles = [("pm25".to_string(), burden), ("energy".to_string(), 10.0)].into_iter().collect();
    z
}

#[test]
fn dac_rule_examples() {
    let zones = vec![zone_with(70.0, 95.0), zone_with(70.0, 80.0), zone_with(65.0, 95.0), zone_with(66.0, 90.0)];
    let flagged = flag_dac(&zones);
    let dac: Vec<bool> = flagged.iter().map(|z| z.dac).collect();
    assert_eq!(dac, [true, false, false, true]);
    assert!(zones.iter().all(|z| !z.dac), "inputs untouched");
}

