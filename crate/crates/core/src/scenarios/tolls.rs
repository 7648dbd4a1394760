use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock;
use crate::netmodel::Network;

/// Fixed time-of-day expressway tolls, $ per (link, hour).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TollProfile {
    /// Keyed by link index; each entry has one toll per horizon hour.
    pub tolls: BTreeMap<usize, Vec<f64>>,
}

impl TollProfile {
    pub fn empty() -> Self {
        TollProfile::default()
    }

    pub fn is_empty(&self) -> bool {
        self.tolls.values().all(|h| h.iter().all(|&t| t == 0.0))
    }

    /// Toll for entering `link` at clock time `t`.
    pub fn toll(&self, link: usize, t: f64) -> f64 {
        self.tolls.get(&link).map_or(0.0, |h| h[clock::hour_index(t)])
    }

    /// Length-weighted mean toll per km over tolled links during the
    /// hours that start inside `window`.
    pub fn average_per_km(&self, net: &Network, window: (f64, f64)) -> f64 {
        let (mut dollars, mut km) = (0.0, 0.0);
        for (&link, hours) in &self.tolls {
            let len_km = net.links[link].length / 1000.0;
            for (h, &toll) in hours.iter().enumerate() {
                let start = clock::HORIZON_START + h as f64 * clock::HOUR;
                if clock::in_window(start, window) {
                    dollars += toll;
                    km += len_km;
                }
            }
        }
        if km > 0.0 {
            dollars / km
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TollError {
    #[error("pricing requires baseline run")]
    MissingBaseline,
}

/// Derive delay-based tolls from a baseline run: for every expressway link
/// and hour, the mean delay over free flow valued at `vot` $/h. Hours with
/// no observations carry no toll.
///
/// `hourly_times[link][hour]` is the mean experienced travel time in s.
pub fn compute_toll_profile(
    net: &Network,
    hourly_times: Option<&[Vec<Option<f64>>]>,
    vot: f64,
) -> Result<TollProfile, TollError> {
    let times = hourly_times.ok_or(TollError::MissingBaseline)?;
    if times.len() != net.links.len() {
        return Err(TollError::MissingBaseline);
    }
    let mut tolls = BTreeMap::new();
    for (li, link) in net.links.iter().enumerate() {
        if !link.is_tollable() {
            continue;
        }
        let ff = link.free_flow_time();
        let hours = (0..clock::NUM_HOURS)
            .map(|h| {
                let tt = times[li].get(h).copied().flatten().unwrap_or(ff);
                (tt - ff).max(0.0) / clock::HOUR * vot
            })
            .collect();
        tolls.insert(li, hours);
    }
    Ok(TollProfile { tolls })
}
