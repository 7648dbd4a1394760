use super::Person;
use crate::fleets::Tariff;
use crate::netmodel::Network;
use crate::router::{Mode, Skims};

/// Time, money and distance of one leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegCost {
    pub time: f64,
    pub money: f64,
    pub distance: f64,
}

impl LegCost {
    pub fn generalized(&self, vot: f64) -> f64 {
        self.money + self.time * vot / 3600.0
    }
}

/// Zone-level level of service the choice models consult.
pub trait LevelOfService {
    fn zones(&self) -> usize;
    fn opportunities(&self, zone: usize) -> f64;
    /// Cost of a leg by `mode` departing at `t`; `None` when the mode is
    /// unavailable for this person and leg.
    fn leg(&self, mode: Mode, from: usize, to: usize, t: f64, person: &Person) -> Option<LegCost>;
}

/// Level of service read off zone skims.
#[derive(Debug, Clone)]
pub struct SkimLos<'a> {
    pub skims: &'a Skims,
    pub opportunities: Vec<f64>,
    pub cbd: Vec<bool>,
    pub tariff: Tariff,
    pub transit_fare: f64,
    /// Vehicle operating cost, $/mi.
    pub operating_cost_per_mi: f64,
    /// Charge for a drive trip ending at a non-home activity in the CBD, $.
    pub cbd_parking: f64,
    /// Expected TNC pickup wait, s.
    pub tnc_wait: f64,
    /// Longest acceptable walk, s.
    pub walk_max: f64,
    /// Subsidized fares for suburban TNC trips with transit available.
    pub fmlm_subsidy: bool,
}

pub const METERS_PER_MILE: f64 = 1609.344;

impl<'a> SkimLos<'a> {
    pub fn new(net: &Network, skims: &'a Skims) -> Self {
        SkimLos {
            skims,
            opportunities: net.zones.iter().map(|z| z.opportunities).collect(),
            cbd: net.zones.iter().map(|z| z.cbd).collect(),
            tariff: Tariff::default(),
            transit_fare: 2.25,
            operating_cost_per_mi: 0.2,
            cbd_parking: 5.0,
            tnc_wait: 300.0,
            walk_max: 2700.0,
            fmlm_subsidy: false,
        }
    }

    /// Whether a TNC trip between these zones would be served as a
    /// suburban first/last-mile connection.
    pub fn fmlm_candidate(&self, from: usize, to: usize, t: f64) -> bool {
        let band = self.skims.band_of(t);
        !(self.cbd[from] && self.cbd[to]) && self.skims.transit_time(band, from, to).is_finite()
    }
}

impl LevelOfService for SkimLos<'_> {
    fn zones(&self) -> usize {
        self.skims.zones
    }

    fn opportunities(&self, zone: usize) -> f64 {
        self.opportunities[zone]
    }

    fn leg(&self, mode: Mode, from: usize, to: usize, t: f64, person: &Person) -> Option<LegCost> {
        let band = self.skims.band_of(t);
        let s = self.skims;
        match mode {
            Mode::Drive => {
                if !person.vehicle_access {
                    return None;
                }
                let distance = s.drive_dist(band, from, to);
                let parking = if self.cbd[to] && to != person.home_zone { self.cbd_parking } else { 0.0 };
                Some(LegCost {
                    time: s.drive_time(band, from, to),
                    money: s.drive_toll(band, from, to) + self.operating_cost_per_mi * distance / METERS_PER_MILE + parking,
                    distance,
                })
            }
            Mode::Transit => {
                let time = s.transit_time(band, from, to);
                time.is_finite().then(|| LegCost { time, money: self.transit_fare, distance: s.drive_dist(band, from, to) })
            }
            Mode::Walk => {
                let time = s.walk_time(from, to);
                (time <= self.walk_max).then(|| LegCost { time, money: 0.0, distance: time * 1.3 })
            }
            Mode::Tnc => {
                let distance = s.drive_dist(band, from, to);
                let ride = s.drive_time(band, from, to);
                let mut fare = self.tariff.full_fare(distance, ride) + s.drive_toll(band, from, to);
                if self.fmlm_subsidy && self.fmlm_candidate(from, to, t) {
                    fare *= self.tariff.fmlm_rider_share;
                }
                Some(LegCost { time: ride + self.tnc_wait, money: fare, distance })
            }
        }
    }
}
