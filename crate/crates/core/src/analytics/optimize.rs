use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::regression::{Factor, RegressionResult};
use crate::scenarios::LeverSettings;

/// Model prediction at a lever vector: intercept plus the coefficients of
/// every active term.
pub fn predict_metric(model: &RegressionResult, s: &LeverSettings) -> f64 {
    model.terms.iter().filter(|t| t.term.value(s)).map(|t| t.coef).sum()
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite coefficient")
}

/// Prediction in exact rational arithmetic over the binary coefficients.
pub fn predict_exact(model: &RegressionResult, s: &LeverSettings) -> BigRational {
    model.terms.iter().filter(|t| t.term.value(s)).fold(BigRational::zero(), |acc, t| acc + exact(t.coef))
}

/// Metrics where larger values are better and enter the objective negated.
pub const HIGHER_IS_BETTER: &[&str] = &["mep", "efficiency_mi_per_kwh", "productive_miles"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub metric: String,
    pub weight: f64,
    pub higher_is_better: bool,
}

impl Objective {
    pub fn new(metric: &str, weight: f64) -> Self {
        Objective { metric: metric.into(), weight, higher_is_better: HIGHER_IS_BETTER.contains(&metric) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub baseline: f64,
    pub predicted: f64,
    /// Percent change from the all-off prediction.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverChoice {
    pub settings: LeverSettings,
    pub objective: f64,
    pub deltas: Vec<MetricDelta>,
}

impl LeverChoice {
    /// (pricing, transit, signals, tnc, ohd, ecomm_high, ev_low, ev_med,
    /// ev_high) as 0/1.
    pub fn vector(&self) -> [u8; 9] {
        let s = &self.settings;
        let ev = s.ev_level as usize;
        let mut v = [
            s.pricing as u8,
            s.transit as u8,
            s.signals as u8,
            s.tnc_policy as u8,
            s.ohd as u8,
            Factor::Ecomm.value(s) as u8,
            0,
            0,
            0,
        ];
        v[6 + ev] = 1;
        v
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimizeError {
    #[error("weights must be non-negative with at least one positive")]
    Weights,
    #[error("metric {0} has a zero all-off prediction")]
    ZeroBaseline(String),
    #[error("lever {0} repeated or conflicting in sequence")]
    Sequence(String),
}

/// Lexicographic key of a lever vector; smaller wins ties.
pub fn tie_key(s: &LeverSettings) -> [u8; 7] {
    [
        s.pricing as u8,
        s.transit as u8,
        s.signals as u8,
        s.tnc_policy as u8,
        s.ohd as u8,
        s.ecomm_level as u8,
        s.ev_level as u8,
    ]
}

fn percent_change(model: &RegressionResult, base: f64, s: &LeverSettings) -> f64 {
    100.0 * (predict_metric(model, s) - base) / base
}

/// Exhaustive search over all 192 lever vectors for the minimum weighted
/// sum of signed percent changes. Objectives within a relative 1e-12 of
/// the minimum are ties, broken by [`tie_key`].
pub fn optimize_levers(models: &[(&RegressionResult, Objective)]) -> Result<LeverChoice, OptimizeError> {
    if models.iter().any(|(_, o)| !(o.weight >= 0.0)) || !models.iter().any(|(_, o)| o.weight > 0.0) {
        return Err(OptimizeError::Weights);
    }
    let off = LeverSettings::all()[0];
    let bases = models
        .iter()
        .map(|(m, o)| {
            let b = predict_metric(m, &off);
            if b == 0.0 {
                Err(OptimizeError::ZeroBaseline(o.metric.clone()))
            } else {
                Ok(b)
            }
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let objective = |s: &LeverSettings| -> f64 {
        models
            .iter()
            .zip(&bases)
            .map(|((m, o), &b)| {
                let sign = if o.higher_is_better { -1.0 } else { 1.0 };
                o.weight * sign * percent_change(m, b, s)
            })
            .sum()
    };
    let mut cands: Vec<(LeverSettings, f64)> = LeverSettings::all().into_iter().map(|s| (s, objective(&s))).collect();
    cands.sort_by_key(|(s, _)| tie_key(s));
    let min = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let scale = cands.iter().map(|c| c.1.abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    let (settings, obj) = *cands.iter().find(|c| c.1 <= min + tol).expect("192 candidates");
    let deltas = models
        .iter()
        .zip(&bases)
        .map(|((m, o), &b)| MetricDelta {
            metric: o.metric.clone(),
            baseline: b,
            predicted: predict_metric(m, &settings),
            percent: percent_change(m, b, &settings),
        })
        .collect();
    Ok(LeverChoice { settings, objective: obj, deltas })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionStep {
    pub lever: Factor,
    /// Effect of this lever alone against all-off.
    pub isolated: f64,
    /// Change from adding this lever to the previous steps.
    pub delta: f64,
    pub delta_exact: BigRational,
    /// Prediction with the first k levers on.
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub baseline: f64,
    pub steps: Vec<DecompositionStep>,
    pub total: f64,
    pub total_exact: BigRational,
}

impl Decomposition {
    pub fn total_percent(&self) -> f64 {
        100.0 * self.total / self.baseline
    }
}

/// Turn levers on one at a time from all-off. Step deltas are exact
/// differences of exact predictions, so they sum to the total exactly.
pub fn cumulative_decomposition(model: &RegressionResult, sequence: &[Factor]) -> Result<Decomposition, OptimizeError> {
    let off = LeverSettings::all()[0];
    let mut s = off;
    let base = predict_exact(model, &off);
    let mut prev = base.clone();
    let mut steps = Vec::with_capacity(sequence.len());
    for (i, &f) in sequence.iter().enumerate() {
        let ev = |x: Factor| matches!(x, Factor::EvMed | Factor::EvHigh);
        if sequence[..i].iter().any(|&g| g == f || (ev(f) && ev(g))) {
            return Err(OptimizeError::Sequence(f.name().into()));
        }
        let mut alone = off;
        f.apply(&mut alone);
        f.apply(&mut s);
        let cur = predict_exact(model, &s);
        let delta_exact = &cur - &prev;
        steps.push(DecompositionStep {
            lever: f,
            isolated: to_f64(&(predict_exact(model, &alone) - &base)),
            delta: to_f64(&delta_exact),
            delta_exact,
            cumulative: to_f64(&cur),
        });
        prev = cur;
    }
    let total_exact = &prev - &base;
    Ok(Decomposition { baseline: to_f64(&base), steps, total: to_f64(&total_exact), total_exact })
}

fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}
