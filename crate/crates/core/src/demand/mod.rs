//! Synthetic population, daily activity plans and travel choices, plus the
//! telecommute and e-commerce demand levers.

mod activities;
mod choice;
mod deliveries;
mod io;
mod los;
mod population;

use serde::{Deserialize, Serialize};

pub use activities::{apply_telecommute, generate_activities, substitute_shopping_trips, Removal, Trip};
pub use choice::{
    departure_time_choice, destination_choice, logit, mode_choice, mode_probabilities, ChoiceCoefficients, NoFeasibleMode,
};
pub use deliveries::{generate_deliveries, DeliveryCategory, DeliveryRequest, PARCEL_WINDOW, PROMISE};
pub use io::{read_persons, read_plans, write_persons, write_plans, DumpError};
pub use los::{LegCost, LevelOfService, SkimLos, METERS_PER_MILE};
pub use population::{synthesize_population, Household, Person, Population, PopulationSpec};

use crate::router::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityType {
    Home,
    Work,
    Shop,
    Errand,
    Leisure,
}

impl ActivityType {
    pub const DISCRETIONARY: [ActivityType; 3] = [ActivityType::Shop, ActivityType::Errand, ActivityType::Leisure];

    pub fn name(self) -> &'static str {
        match self {
            ActivityType::Home => "home",
            ActivityType::Work => "work",
            ActivityType::Shop => "shop",
            ActivityType::Errand => "errand",
            ActivityType::Leisure => "leisure",
        }
    }

    pub fn is_discretionary(self) -> bool {
        matches!(self, ActivityType::Shop | ActivityType::Errand | ActivityType::Leisure)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub kind: ActivityType,
    /// Zone index.
    pub zone: usize,
    /// Planned start, s.
    pub start: f64,
    /// Planned duration, s.
    pub duration: f64,
    /// Mode of the trip that reaches this activity (none for the opening
    /// home activity).
    pub mode: Option<Mode>,
    /// Departure time of the trip that reaches this activity.
    pub depart: Option<f64>,
    pub flexible: bool,
}

impl Activity {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// A person's day: activities in order, opening and closing at home. A
/// single home activity means the person stays home.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityPlan {
    pub person: u32,
    pub activities: Vec<Activity>,
}

impl ActivityPlan {
    pub fn stay_home(person: u32, home_zone: usize) -> Self {
        ActivityPlan {
            person,
            activities: vec![Activity {
                kind: ActivityType::Home,
                zone: home_zone,
                start: crate::clock::HORIZON_START,
                duration: crate::clock::HORIZON_END - crate::clock::HORIZON_START,
                mode: None,
                depart: None,
                flexible: false,
            }],
        }
    }

    pub fn is_stay_home(&self) -> bool {
        self.activities.len() <= 1
    }

    pub fn trip_count(&self) -> usize {
        self.activities.len().saturating_sub(1)
    }

    /// Trips between consecutive activities.
    pub fn trips(&self) -> Vec<Trip> {
        self.activities
            .windows(2)
            .enumerate()
            .map(|(seq, w)| Trip {
                person: self.person,
                seq: seq as u32,
                from_zone: w[0].zone,
                to_zone: w[1].zone,
                depart: w[1].depart.unwrap_or(w[0].end()),
                mode: w[1].mode.unwrap_or(Mode::Walk),
                purpose: w[1].kind,
                origin_purpose: w[0].kind,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EcommLevel {
    Low,
    High,
}

/// Weekly deliveries per household.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRates {
    pub ecommerce: f64,
    pub grocery: f64,
    pub meal: f64,
}

impl DeliveryRates {
    pub fn for_level(level: EcommLevel) -> Self {
        match level {
            EcommLevel::Low => DeliveryRates { ecommerce: 3.5, grocery: 0.7, meal: 1.8 },
            EcommLevel::High => DeliveryRates { ecommerce: 9.8, grocery: 1.5, meal: 3.5 },
        }
    }

    pub fn daily_total(&self) -> f64 {
        (self.ecommerce + self.grocery + self.meal) / 7.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    pub telecommute_rate: f64,
    pub ecomm_level: EcommLevel,
    /// Overrides the level's weekly rates when set.
    pub delivery_rates: Option<DeliveryRates>,
    /// Probability a shop activity is dropped in a household receiving
    /// goods that day.
    pub substitution: f64,
    /// Daily Poisson rates of discretionary activities per person.
    pub shop_rate: f64,
    pub errand_rate: f64,
    pub leisure_rate: f64,
    /// Work start window, s.
    pub work_start: (f64, f64),
    pub work_duration: f64,
    pub coefficients: ChoiceCoefficients,
}

impl Default for DemandConfig {
    fn default() -> Self {
        DemandConfig {
            telecommute_rate: 0.15,
            ecomm_level: EcommLevel::Low,
            delivery_rates: None,
            substitution: 0.3,
            shop_rate: 0.35,
            errand_rate: 0.3,
            leisure_rate: 0.3,
            work_start: (7.0 * 3600.0, 9.0 * 3600.0),
            work_duration: 8.0 * 3600.0,
            coefficients: ChoiceCoefficients::default(),
        }
    }
}

impl DemandConfig {
    pub fn rates(&self) -> DeliveryRates {
        self.delivery_rates.unwrap_or_else(|| DeliveryRates::for_level(self.ecomm_level))
    }
}
