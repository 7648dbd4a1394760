use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LevelOfService, Person};
use crate::clock;
use crate::router::Mode;

/// Logit coefficients of the mode, destination and departure-time models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChoiceCoefficients {
    /// Utility per dollar of generalized cost.
    pub lambda: f64,
    /// Alternative-specific constants indexed by [`Mode::index`].
    pub asc: [f64; 4],
    /// Utility per hour of departure shift.
    pub beta_shift: f64,
    /// Destination utility per minute of travel time.
    pub mu_destination: f64,
    /// Half-width of the departure window, in 15-minute bins.
    pub shift_bins: i32,
}

impl Default for ChoiceCoefficients {
    fn default() -> Self {
        ChoiceCoefficients {
            lambda: 0.45,
            asc: [0.0, -0.6, -0.4, -1.6],
            beta_shift: 1.5,
            mu_destination: 0.08,
            shift_bins: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no feasible mode")]
pub struct NoFeasibleMode;

/// Multinomial logit probabilities; `None` utilities get probability 0.
pub fn logit(utilities: &[Option<f64>]) -> Vec<f64> {
    let max = utilities.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![0.0; utilities.len()];
    }
    let w: Vec<f64> = utilities.iter().map(|u| u.map_or(0.0, |u| (u - max).exp())).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Mode probabilities from generalized costs ($); `None` marks an
/// infeasible mode.
pub fn mode_probabilities(costs: &[(Mode, Option<f64>)], coeffs: &ChoiceCoefficients) -> Vec<(Mode, f64)> {
    let utilities: Vec<Option<f64>> =
        costs.iter().map(|(m, c)| c.filter(|c| c.is_finite()).map(|c| -coeffs.lambda * c + coeffs.asc[m.index()])).collect();
    costs.iter().map(|(m, _)| *m).zip(logit(&utilities)).collect()
}

pub fn mode_choice(
    costs: &[(Mode, Option<f64>)],
    coeffs: &ChoiceCoefficients,
    rng: &mut impl Rng,
) -> Result<Mode, NoFeasibleMode> {
    let probs = mode_probabilities(costs, coeffs);
    if probs.iter().all(|(_, p)| *p == 0.0) {
        return Err(NoFeasibleMode);
    }
    let p: Vec<f64> = probs.iter().map(|(_, p)| *p).collect();
    Ok(probs[draw(&p, rng)].0)
}

/// Departure time by logit over 15-minute bins around `preferred`.
/// `profile(t)` gives (travel time s, toll $) for leaving at `t`.
pub fn departure_time_choice(
    preferred: f64,
    profile: impl Fn(f64) -> Option<(f64, f64)>,
    vot: f64,
    coeffs: &ChoiceCoefficients,
    rng: &mut impl Rng,
) -> f64 {
    let lo = clock::HORIZON_START;
    let hi = clock::HORIZON_END - clock::PERIOD;
    let bins: Vec<f64> = (-coeffs.shift_bins..=coeffs.shift_bins)
        .map(|k| preferred + k as f64 * clock::PERIOD)
        .collect();
    let utilities: Vec<Option<f64>> = bins
        .iter()
        .zip(-coeffs.shift_bins..=coeffs.shift_bins)
        .map(|(&t, k)| {
            if t < lo || t > hi {
                return None;
            }
            let (tt, toll) = profile(t)?;
            let shift = if k == 0 { 0.0 } else { coeffs.beta_shift * k.unsigned_abs() as f64 * 0.25 };
            Some(-coeffs.lambda * (tt * vot / 3600.0 + toll) - shift)
        })
        .collect();
    let probs = logit(&utilities);
    if probs.iter().all(|&p| p == 0.0) {
        return preferred.clamp(lo, hi);
    }
    bins[draw(&probs, rng)]
}

/// Destination zone by logit with utility ln(opportunities) − μ·minutes,
/// where minutes is the fastest feasible mode's time from `from` at `t`.
pub fn destination_choice(
    from: usize,
    t: f64,
    los: &dyn LevelOfService,
    person: &Person,
    coeffs: &ChoiceCoefficients,
    rng: &mut impl Rng,
) -> Option<usize> {
    let utilities: Vec<Option<f64>> = (0..los.zones())
        .map(|j| {
            let opp = los.opportunities(j);
            if opp <= 0.0 {
                return None;
            }
            let minutes = Mode::ALL
                .iter()
                .filter_map(|&m| los.leg(m, from, j, t, person).map(|c| c.time))
                .fold(f64::INFINITY, f64::min)
                / 60.0;
            minutes.is_finite().then(|| opp.ln() - coeffs.mu_destination * minutes)
        })
        .collect();
    let probs = logit(&utilities);
    if probs.iter().all(|&p| p == 0.0) {
        return None;
    }
    Some(draw(&probs, rng))
}
