use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{DeliveryRates, Household};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryCategory {
    Ecommerce,
    Grocery,
    Meal,
}

impl DeliveryCategory {
    pub const ALL: [DeliveryCategory; 3] = [DeliveryCategory::Ecommerce, DeliveryCategory::Grocery, DeliveryCategory::Meal];

    pub fn name(self) -> &'static str {
        match self {
            DeliveryCategory::Ecommerce => "ecommerce",
            DeliveryCategory::Grocery => "grocery",
            DeliveryCategory::Meal => "meal",
        }
    }

    /// Parcels go to the depot tour builder; groceries and meals are on
    /// demand.
    pub fn is_on_demand(self) -> bool {
        !matches!(self, DeliveryCategory::Ecommerce)
    }

    fn weekly(self, rates: &DeliveryRates) -> f64 {
        match self {
            DeliveryCategory::Ecommerce => rates.ecommerce,
            DeliveryCategory::Grocery => rates.grocery,
            DeliveryCategory::Meal => rates.meal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRequest {
    pub id: u32,
    pub household: u32,
    /// Zone index of the household.
    pub zone: usize,
    pub category: DeliveryCategory,
    /// Time the request is placed, s.
    pub request_time: f64,
    /// Delivery window, s.
    pub window: (f64, f64),
}

/// Daytime window for parcels.
pub const PARCEL_WINDOW: (f64, f64) = (8.0 * 3600.0, 19.0 * 3600.0);
/// Promise window for on-demand orders.
pub const PROMISE: f64 = 3600.0;

/// Midday and evening order peaks: (share, start h, end h).
const GROCERY_PROFILE: [(f64, f64, f64); 2] = [(0.45, 10.0, 14.0), (0.55, 16.0, 20.0)];
const MEAL_PROFILE: [(f64, f64, f64); 2] = [(0.4, 11.0, 13.5), (0.6, 17.5, 20.5)];

fn order_time(profile: &[(f64, f64, f64)], rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(share, a, b) in profile {
        acc += share;
        if u < acc {
            return rng.random_range(a..b) * 3600.0;
        }
    }
    let &(_, a, b) = profile.last().unwrap();
    rng.random_range(a..b) * 3600.0
}

/// Daily requests per household and category, Poisson with mean
/// weekly/7. Each household has its own stream.
pub fn generate_deliveries(households: &[Household], rates: &DeliveryRates, seed_value: u64) -> Vec<DeliveryRequest> {
    let mut out = Vec::new();
    for hh in households {
        let mut rng = seed::rng(&[seed_value, seed::tag("deliveries"), hh.id as u64]);
        for cat in DeliveryCategory::ALL {
            let mean = cat.weekly(rates) / 7.0;
            if mean <= 0.0 {
                continue;
            }
            let n = Poisson::new(mean).expect("positive rate").sample(&mut rng) as usize;
            for _ in 0..n {
                let (request_time, window) = match cat {
                    DeliveryCategory::Ecommerce => (PARCEL_WINDOW.0, PARCEL_WINDOW),
                    DeliveryCategory::Grocery => {
                        let t = order_time(&GROCERY_PROFILE, &mut rng);
                        (t, (t, t + PROMISE))
                    }
                    DeliveryCategory::Meal => {
                        let t = order_time(&MEAL_PROFILE, &mut rng);
                        (t, (t, t + PROMISE))
                    }
                };
                out.push(DeliveryRequest {
                    id: out.len() as u32,
                    household: hh.id,
                    zone: hh.zone,
                    category: cat,
                    request_time,
                    window,
                });
            }
        }
    }
    out
}
