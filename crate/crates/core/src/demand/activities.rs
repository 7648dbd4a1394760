use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    departure_time_choice, destination_choice, mode_choice, Activity, ActivityPlan, ActivityType, DeliveryCategory,
    DeliveryRequest, DemandConfig, LevelOfService, Person, Population,
};
use crate::clock::{self, HORIZON_END, HORIZON_START};
use crate::router::Mode;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trip {
    pub person: u32,
    /// Position in the person's day.
    pub seq: u32,
    pub from_zone: usize,
    pub to_zone: usize,
    pub depart: f64,
    pub mode: Mode,
    pub purpose: ActivityType,
    pub origin_purpose: ActivityType,
}

struct Skeleton {
    work: Option<(f64, f64)>,
    discretionary: Vec<(ActivityType, f64, f64)>,
}

const MAX_DISCRETIONARY: usize = 2;

/// E[min(N, cap)] for N ~ Poisson(lambda).
fn capped_mean(lambda: f64, cap: usize) -> f64 {
    let mut p = (-lambda).exp();
    let (mut mean, mut below) = (0.0, 0.0);
    for k in 0..cap {
        mean += k as f64 * p;
        below += p;
        p *= lambda / (k + 1) as f64;
    }
    mean + cap as f64 * (1.0 - below)
}

/// A count in 0..=cap drawn as min(N, cap) with N Poisson, its rate
/// raised so the capped mean equals `rate` (rates at or above the cap
/// give the cap).
fn capped_poisson(rate: f64, cap: usize, rng: &mut impl Rng) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    if rate >= cap as f64 {
        return cap;
    }
    let (mut lo, mut hi) = (rate, rate.max(1.0));
    while capped_mean(hi, cap) < rate {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if capped_mean(mid, cap) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let n = Poisson::new(0.5 * (lo + hi)).expect("positive rate").sample(rng) as usize;
    n.min(cap)
}

/// Activity types and planned times, independent of the network. Work
/// and discretionary draws use separate streams so telecommuting leaves
/// the discretionary part unchanged.
fn skeleton(person: &Person, cfg: &DemandConfig, seed_value: u64) -> Skeleton {
    let mut wr = seed::rng(&[seed_value, seed::tag("work"), person.id as u64]);
    let work_start = wr.random_range(cfg.work_start.0..cfg.work_start.1);
    let work = (person.worker).then_some((work_start, cfg.work_duration));

    let mut dr = seed::rng(&[seed_value, seed::tag("discretionary"), person.id as u64]);
    let rates = [
        (ActivityType::Shop, cfg.shop_rate.max(0.0)),
        (ActivityType::Errand, cfg.errand_rate.max(0.0)),
        (ActivityType::Leisure, cfg.leisure_rate.max(0.0)),
    ];
    let total: f64 = rates.iter().map(|r| r.1).sum();
    let count = capped_poisson(total, MAX_DISCRETIONARY, &mut dr);
    let mut kinds = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u = dr.random::<f64>() * total;
        let mut kind = rates[rates.len() - 1].0;
        for &(k, r) in &rates {
            if u < r {
                kind = k;
                break;
            }
            u -= r;
        }
        kinds.push(kind);
    }
    let mut t = if person.worker {
        work_start + cfg.work_duration + dr.random_range(600.0..2400.0)
    } else {
        dr.random_range(9.0 * 3600.0..18.0 * 3600.0)
    };
    let mut discretionary = Vec::new();
    for kind in kinds {
        let base = match kind {
            ActivityType::Shop => 2700.0,
            ActivityType::Errand => 1800.0,
            _ => 5400.0,
        };
        let dur = base * dr.random_range(0.6..1.4);
        discretionary.push((kind, t, dur));
        t += dur + 1200.0;
    }
    Skeleton { work, discretionary }
}

/// Build one person's day: activity skeleton, destinations for
/// discretionary activities, one mode per home-based tour and departure
/// times. All draws come from streams keyed by (seed, person, position),
/// so re-running with updated level of service reuses the same random
/// numbers.
pub fn generate_activities(person: &Person, cfg: &DemandConfig, los: &dyn LevelOfService, seed_value: u64) -> ActivityPlan {
    let sk = skeleton(person, cfg, seed_value);
    let coeffs = &cfg.coefficients;
    let home = person.home_zone;
    let pid = person.id as u64;
    let mut acts = vec![Activity {
        kind: ActivityType::Home,
        zone: home,
        start: HORIZON_START,
        duration: 0.0,
        mode: None,
        depart: None,
        flexible: false,
    }];
    if let (Some((start, dur)), false) = (sk.work, person.telecommuter_today) {
        acts.push(Activity {
            kind: ActivityType::Work,
            zone: person.work_zone.unwrap_or(home),
            start,
            duration: dur,
            mode: None,
            depart: None,
            flexible: false,
        });
    }
    for (k, &(kind, start, dur)) in sk.discretionary.iter().enumerate() {
        let from = acts.last().unwrap().zone;
        let mut rng = seed::rng(&[seed_value, seed::tag("destination"), pid, k as u64]);
        let zone = destination_choice(from, start, los, person, coeffs, &mut rng).unwrap_or(home);
        acts.push(Activity { kind, zone, start, duration: dur, mode: None, depart: None, flexible: true });
    }
    if acts.len() == 1 {
        return ActivityPlan::stay_home(person.id, home);
    }
    let last_end = acts.last().unwrap().end();
    acts.push(Activity {
        kind: ActivityType::Home,
        zone: home,
        start: last_end,
        duration: 0.0,
        mode: None,
        depart: None,
        flexible: false,
    });

    // one mode for the whole tour
    let mut costs = Vec::new();
    for m in Mode::ALL {
        let mut total = 0.0;
        let mut feasible = true;
        for w in acts.windows(2) {
            let t = if w[1].kind == ActivityType::Home { w[0].end() } else { w[1].start };
            match los.leg(m, w[0].zone, w[1].zone, t, person) {
                Some(c) => total += c.generalized(person.vot),
                None => {
                    feasible = false;
                    break;
                }
            }
        }
        costs.push((m, feasible.then_some(total)));
    }
    let mut rng = seed::rng(&[seed_value, seed::tag("mode"), pid]);
    let mode = match mode_choice(&costs, coeffs, &mut rng) {
        Ok(m) => m,
        Err(_) => {
            log::debug!("person {}: no feasible mode, staying home", person.id);
            return ActivityPlan::stay_home(person.id, home);
        }
    };

    // departure times, in order, keeping activities from overlapping
    let latest_depart = HORIZON_END - 2.0 * clock::PERIOD;
    let mut prev_arrival = HORIZON_START;
    for i in 1..acts.len() {
        let (from, to) = (acts[i - 1].zone, acts[i].zone);
        let leg_time = |t: f64| los.leg(mode, from, to, t, person).map_or(0.0, |c| c.time);
        let preferred = if acts[i].kind == ActivityType::Home {
            acts[i - 1].end()
        } else {
            acts[i].start - leg_time(acts[i].start)
        };
        let mut rng = seed::rng(&[seed_value, seed::tag("depart"), pid, i as u64]);
        let chosen = if mode == Mode::Walk {
            preferred
        } else {
            let profile = |t: f64| {
                los.leg(mode, from, to, t, person).map(|c| {
                    let toll = if mode == Mode::Drive { c.money } else { 0.0 };
                    (c.time, toll)
                })
            };
            departure_time_choice(preferred, profile, person.vot, coeffs, &mut rng)
        };
        let min_stay = if i == 1 { 0.0 } else { (0.5 * acts[i - 1].duration).max(600.0) };
        let earliest = if i == 1 { HORIZON_START } else { prev_arrival + min_stay };
        let depart = chosen.max(earliest).min(latest_depart.max(earliest));
        let arrival = depart + leg_time(depart);
        if i > 1 {
            acts[i - 1].duration = depart - acts[i - 1].start;
        } else {
            acts[0].duration = depart - HORIZON_START;
        }
        acts[i].start = arrival;
        acts[i].depart = Some(depart);
        acts[i].mode = Some(mode);
        prev_arrival = arrival;
    }
    let last = acts.len() - 1;
    acts[last].duration = (HORIZON_END - acts[last].start).max(0.0);
    ActivityPlan { person: person.id, activities: acts }
}

/// Flag exactly `round(rate·workers)` workers as telecommuting today,
/// chosen uniformly by a seeded shuffle. Returns the number flagged.
pub fn apply_telecommute(persons: &mut [Person], rate: f64, seed_value: u64) -> usize {
    let mut workers: Vec<usize> = (0..persons.len()).filter(|&i| persons[i].worker).collect();
    let k = (rate.clamp(0.0, 1.0) * workers.len() as f64).round() as usize;
    let mut rng = seed::rng(&[seed_value, seed::tag("telecommute")]);
    workers.shuffle(&mut rng);
    for p in persons.iter_mut() {
        p.telecommuter_today = false;
    }
    for &i in workers.iter().take(k) {
        persons[i].telecommuter_today = true;
    }
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub person: u32,
    pub kind: ActivityType,
    pub zone: usize,
    pub cause: String,
}

/// Drop shop activities of members of households receiving goods today
/// (e-commerce or grocery), each with probability `sigma`.
pub fn substitute_shopping_trips(
    plans: &mut [ActivityPlan],
    pop: &Population,
    deliveries: &[DeliveryRequest],
    sigma: f64,
    seed_value: u64,
) -> Vec<Removal> {
    let served: HashSet<u32> = deliveries
        .iter()
        .filter(|d| matches!(d.category, DeliveryCategory::Ecommerce | DeliveryCategory::Grocery))
        .map(|d| d.household)
        .collect();
    let mut log = Vec::new();
    if sigma <= 0.0 {
        return log;
    }
    for plan in plans.iter_mut() {
        let person = &pop.persons[plan.person as usize];
        if !served.contains(&person.household_id) {
            continue;
        }
        let mut rng = seed::rng(&[seed_value, seed::tag("substitution"), plan.person as u64]);
        let mut kept = Vec::with_capacity(plan.activities.len());
        for a in plan.activities.drain(..) {
            if a.kind == ActivityType::Shop && rng.random_bool(sigma.min(1.0)) {
                log.push(Removal { person: person.id, kind: a.kind, zone: a.zone, cause: "delivery substitution".into() });
                continue;
            }
            kept.push(a);
        }
        kept.dedup_by(|b, a| a.kind == ActivityType::Home && b.kind == ActivityType::Home);
        if kept.len() <= 1 {
            *plan = ActivityPlan::stay_home(plan.person, person.home_zone);
        } else {
            let last = kept.len() - 1;
            kept[last].duration = (HORIZON_END - kept[last].start).max(0.0);
            plan.activities = kept;
        }
    }
    log
}
