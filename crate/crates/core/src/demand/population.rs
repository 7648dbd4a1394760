use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::netmodel::Network;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub id: u32,
    pub household_id: u32,
    /// Zone index.
    pub home_zone: usize,
    /// Zone index.
    pub work_zone: Option<usize>,
    /// Household income, $/yr.
    pub income: f64,
    pub income_quintile: u8,
    pub worker: bool,
    pub telecommuter_today: bool,
    /// Value of time, $/h.
    pub vot: f64,
    pub vehicle_access: bool,
    pub cacc_household: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Household {
    pub id: u32,
    pub zone: usize,
    pub income: f64,
    pub vehicle: bool,
    pub cacc: bool,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub persons: Vec<Person>,
    pub households: Vec<Household>,
}

impl Population {
    pub fn workers(&self) -> usize {
        self.persons.iter().filter(|p| p.worker).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    /// Persons to synthesize; allocated to zones by zone population.
    pub total: u64,
    pub sigma_log_income: f64,
    pub worker_rate: f64,
    pub vehicle_rate: f64,
    /// Probabilities of household sizes 1..=n.
    pub household_sizes: Vec<f64>,
    /// Share of vehicle-owning households with CACC vehicles.
    pub cacc_share: f64,
    /// Exponent on income in CACC adoption weights.
    pub cacc_income_weight: f64,
    /// Gravity decay for work locations, m (infinite = distance-neutral).
    pub work_distance_decay: f64,
    pub base_vot: f64,
    /// Scale VOT by income relative to the population median.
    pub income_vot: bool,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            total: 20_000,
            sigma_log_income: 0.6,
            worker_rate: 0.6,
            vehicle_rate: 0.9,
            household_sizes: vec![0.28, 0.34, 0.16, 0.14, 0.08],
            cacc_share: 0.4,
            cacc_income_weight: 1.0,
            work_distance_decay: 6000.0,
            base_vot: 18.0,
            income_vot: false,
        }
    }
}

/// Split `total` across weights by largest remainder (ties to lower index).
pub(crate) fn largest_remainder(weights: &[f64], total: u64) -> Vec<u64> {
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 || total == 0 {
        return vec![0; weights.len()];
    }
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take((total - assigned) as usize) {
        out[i] += 1;
    }
    out
}

/// Build persons and households. Everything is a function of `seed_value`.
pub fn synthesize_population(net: &Network, spec: &PopulationSpec, seed_value: u64) -> Population {
    let weights: Vec<f64> = net.zones.iter().map(|z| z.population as f64).collect();
    let per_zone = largest_remainder(&weights, spec.total);
    let mut pop = Population::default();
    if per_zone.iter().sum::<u64>() == 0 {
        return pop;
    }
    let size_dist = WeightedIndex::new(&spec.household_sizes).expect("valid household size weights");
    let mut rng = seed::rng(&[seed_value, seed::tag("population")]);
    let opp: Vec<f64> = net.zones.iter().map(|z| z.opportunities.max(0.0)).collect();

    for (zi, &n) in per_zone.iter().enumerate() {
        let zone = &net.zones[zi];
        let income_dist = LogNormal::new(zone.median_income.max(1.0).ln(), spec.sigma_log_income).expect("valid lognormal");
        let work_weights: Vec<f64> = (0..net.zones.len())
            .map(|j| {
                let d = net.distance(zone.centroid, net.zones[j].centroid);
                let decay = if spec.work_distance_decay.is_finite() { (-d / spec.work_distance_decay).exp() } else { 1.0 };
                opp[j] * decay
            })
            .collect();
        let work_dist = WeightedIndex::new(&work_weights).ok();
        let mut placed = 0u64;
        while placed < n {
            let size = ((size_dist.sample(&mut rng) + 1) as u64).min(n - placed);
            let hid = pop.households.len() as u32;
            let income = income_dist.sample(&mut rng);
            let vehicle = rng.random_bool(spec.vehicle_rate.clamp(0.0, 1.0));
            let mut members = Vec::with_capacity(size as usize);
            for _ in 0..size {
                let id = pop.persons.len() as u32;
                let worker = work_dist.is_some() && rng.random_bool(spec.worker_rate.clamp(0.0, 1.0));
                let work_zone = if worker { work_dist.as_ref().map(|d| d.sample(&mut rng)) } else { None };
                pop.persons.push(Person {
                    id,
                    household_id: hid,
                    home_zone: zi,
                    work_zone,
                    income,
                    income_quintile: 0,
                    worker: work_zone.is_some(),
                    telecommuter_today: false,
                    vot: spec.base_vot,
                    vehicle_access: vehicle,
                    cacc_household: false,
                });
                members.push(id);
            }
            pop.households.push(Household { id: hid, zone: zi, income, vehicle, cacc: false, members });
            placed += size;
        }
    }

    assign_quintiles(&mut pop.persons);
    assign_cacc(&mut pop, spec, seed_value);
    if spec.income_vot {
        let mut incomes: Vec<f64> = pop.persons.iter().map(|p| p.income).collect();
        incomes.sort_by(f64::total_cmp);
        let median = incomes[incomes.len() / 2];
        for p in &mut pop.persons {
            p.vot = spec.base_vot * p.income / median;
        }
    }
    pop
}

/// Rank-based quintiles: the k-th lowest income (ties by id) gets
/// quintile `floor(5k/N) + 1`.
fn assign_quintiles(persons: &mut [Person]) {
    let n = persons.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| persons[a].income.total_cmp(&persons[b].income).then(persons[a].id.cmp(&persons[b].id)));
    for (rank, &i) in order.iter().enumerate() {
        persons[i].income_quintile = (rank * 5 / n) as u8 + 1;
    }
}

/// Flag exactly `round(share·H)` vehicle households as CACC owners, by
/// weighted sampling without replacement with weight income^w.
fn assign_cacc(pop: &mut Population, spec: &PopulationSpec, seed_value: u64) {
    let eligible: Vec<usize> = (0..pop.households.len()).filter(|&h| pop.households[h].vehicle).collect();
    let k = (spec.cacc_share * eligible.len() as f64).round() as usize;
    let mut rng = seed::rng(&[seed_value, seed::tag("cacc")]);
    let mut keyed: Vec<(f64, usize)> = eligible
        .iter()
        .map(|&h| {
            let w = pop.households[h].income.max(1.0).powf(spec.cacc_income_weight);
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, h)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, h) in keyed.iter().take(k) {
        pop.households[h].cacc = true;
        for &m in &pop.households[h].members.clone() {
            pop.persons[m as usize].cacc_household = true;
        }
    }
}
