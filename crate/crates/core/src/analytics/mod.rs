//! Metric accounting, interaction regressions and lever selection.

mod metrics;
mod optimize;
mod regression;

pub use metrics::{
    aggregate_metrics, cost_burden, read_metrics, write_metrics, CostParams, DayLog, LegInfo, LegKind, MetricInputs,
    MetricsError, MetricsRow, OpenTraversal, PersonCost, PersonTrip, METRIC_NAMES,
};
pub use optimize::{
    cumulative_decomposition, optimize_levers, predict_exact, predict_metric, tie_key, Decomposition,
    DecompositionStep, LeverChoice, MetricDelta, Objective, OptimizeError, HIGHER_IS_BETTER,
};
pub use regression::{
    design_row, fit_ols, signif_code, Factor, RegressionError, RegressionResult, Term, TermSpec, TermStat,
    INTERCEPT_NAME,
};

use crate::netmodel::{is_dac, Zone};

/// Copy of the zones with the DAC flag recomputed from their percentiles.
pub fn flag_dac(zones: &[Zone]) -> Vec<Zone> {
    zones
        .iter()
        .map(|z| Zone { dac: is_dac(z.low_income_percentile, &z.burden_percentiles), ..z.clone() })
        .collect()
}
