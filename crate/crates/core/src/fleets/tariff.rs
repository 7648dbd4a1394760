use serde::{Deserialize, Serialize};

/// Ride-hailing tariff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tariff {
    pub base: f64,
    pub per_km: f64,
    pub per_min: f64,
    /// Share of the fare paid by the rider on subsidized FMLM legs.
    pub fmlm_rider_share: f64,
}

impl Default for Tariff {
    fn default() -> Self {
        Tariff { base: 2.0, per_km: 0.8, per_min: 0.2, fmlm_rider_share: 0.5 }
    }
}

impl Tariff {
    /// Full fare for a ride of `meters` taking `seconds`.
    pub fn full_fare(&self, meters: f64, seconds: f64) -> f64 {
        self.base + self.per_km * meters / 1000.0 + self.per_min * seconds / 60.0
    }

    pub fn full_fare_cents(&self, meters: f64, seconds: f64) -> i64 {
        (self.full_fare(meters, seconds) * 100.0).round() as i64
    }
}

/// Charged fare in cents. Subsidized FMLM rides pay the rider share of
/// the full fare, rounded half up to the cent.
pub fn fare_cents(tariff: &Tariff, meters: f64, seconds: f64, subsidized: bool) -> i64 {
    let full = tariff.full_fare_cents(meters, seconds);
    if subsidized {
        (full as f64 * tariff.fmlm_rider_share + 0.5).floor() as i64
    } else {
        full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FareRecord {
    pub request: u32,
    pub full_cents: i64,
    pub charged_cents: i64,
}

/// Subsidy paid from the scenario budget, kept in whole cents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubsidyLedger {
    pub records: Vec<FareRecord>,
    pub subsidy_cents: i64,
}

impl SubsidyLedger {
    /// Price a ride and record it; returns the charged fare in dollars.
    pub fn charge(&mut self, tariff: &Tariff, request: u32, meters: f64, seconds: f64, subsidized: bool) -> f64 {
        let full_cents = tariff.full_fare_cents(meters, seconds);
        let charged_cents = fare_cents(tariff, meters, seconds, subsidized);
        self.records.push(FareRecord { request, full_cents, charged_cents });
        self.subsidy_cents += full_cents - charged_cents;
        charged_cents as f64 / 100.0
    }

    pub fn subsidy(&self) -> f64 {
        self.subsidy_cents as f64 / 100.0
    }

    pub fn revenue(&self) -> f64 {
        self.records.iter().map(|r| r.charged_cents).sum::<i64>() as f64 / 100.0
    }
}
