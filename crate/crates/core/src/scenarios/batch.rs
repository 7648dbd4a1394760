use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};

use super::engine::{run_scenario, EngineConfig, ScenarioError, ScenarioInputs, ScenarioOutcome};
use super::levers::{LeverSettings, ScenarioPlan, CACC_SHARE};
use super::tolls::{compute_toll_profile, TollProfile};
use crate::analytics::MetricsRow;
use crate::demand::{synthesize_population, Population, PopulationSpec};
use crate::energy::PowertrainTable;
use crate::fleets::Depot;
use crate::netmodel::Network;
use crate::par::{self, Execution};

/// Shared, read-only inputs of a batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchInputs<'a> {
    pub net: &'a Network,
    pub depots: &'a [Depot],
    pub population: &'a PopulationSpec,
    pub table: &'a PowertrainTable,
}

#[derive(Debug, Clone, Default)]
pub struct BatchResult {
    /// One row per plan, sorted by (settings, replication).
    pub rows: Vec<MetricsRow>,
}

impl BatchResult {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed()).count()
    }
}

/// Baseline toll cell: demand settings and replication.
type Cell = (LeverSettings, u32);

fn guarded(plan: &ScenarioPlan, inp: &ScenarioInputs, cfg: &EngineConfig) -> Result<ScenarioOutcome, String> {
    match catch_unwind(AssertUnwindSafe(|| run_scenario(plan, inp, cfg))) {
        Ok(Ok(o)) => Ok(o),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            Err(format!("panic: {msg}"))
        }
    }
}

fn error_row(plan: &ScenarioPlan, msg: String) -> MetricsRow {
    log::error!("plan {:?} replication {} failed: {msg}", plan.settings, plan.replication);
    MetricsRow { error: msg, ..MetricsRow::zero(&plan.settings, plan.replication, plan.seed) }
}

/// Run independent plans. Each replication synthesizes its population
/// once. Priced plans first need the converged all-off run of their demand
/// cell, which is run (or reused from the batch) before anything else;
/// its hourly expressway times become the frozen toll profile. Failures
/// turn into error rows without stopping the batch. Output does not depend
/// on the execution mode.
pub fn run_batch(plans: &[ScenarioPlan], inp: &BatchInputs, cfg: &EngineConfig, exec: Execution) -> BatchResult {
    let spec = PopulationSpec { cacc_share: CACC_SHARE, ..inp.population.clone() };
    let mut reps: BTreeMap<u32, u64> = BTreeMap::new();
    for p in plans {
        reps.insert(p.replication, p.common_seed);
    }
    let rep_list: Vec<(u32, u64)> = reps.into_iter().collect();
    let pops: Vec<Population> = par::map_with(exec, &rep_list, |&(_, s)| synthesize_population(inp.net, &spec, s));
    let population_of: BTreeMap<u32, &Population> = rep_list.iter().map(|r| r.0).zip(&pops).collect();
    fn scenario_inputs<'a>(
        inp: &BatchInputs<'a>,
        population: &'a Population,
        tolls: Option<&'a TollProfile>,
    ) -> ScenarioInputs<'a> {
        ScenarioInputs { net: inp.net, depots: inp.depots, population, tolls, table: inp.table }
    }

    // Baselines behind every priced plan, plus all-off plans requested
    // directly.
    let mut baselines: BTreeMap<Cell, ScenarioPlan> = BTreeMap::new();
    for p in plans {
        if p.settings.pricing || p.settings.is_bau() {
            let b = if p.settings.is_bau() { p.clone() } else { p.baseline() };
            baselines.entry((p.settings.baseline(), p.replication)).or_insert(b);
        }
    }
    let base_list: Vec<(Cell, ScenarioPlan)> = baselines.into_iter().collect();
    let base_runs: Vec<Result<ScenarioOutcome, String>> =
        par::map_with(exec, &base_list, |(cell, plan)| guarded(plan, &scenario_inputs(inp, population_of[&cell.1], None), cfg));
    let mut base_rows: BTreeMap<Cell, Result<MetricsRow, String>> = BTreeMap::new();
    let mut profiles: BTreeMap<Cell, TollProfile> = BTreeMap::new();
    for ((cell, _), run) in base_list.iter().zip(base_runs) {
        match run {
            Ok(o) => {
                if let Ok(tp) = compute_toll_profile(inp.net, Some(&o.log.hourly_times), cfg.cost.vot) {
                    profiles.insert(*cell, tp);
                }
                base_rows.insert(*cell, Ok(o.row));
            }
            Err(e) => {
                base_rows.insert(*cell, Err(e));
            }
        }
    }

    let rest: Vec<&ScenarioPlan> = plans.iter().filter(|p| !p.settings.is_bau()).collect();
    let rest_rows: Vec<MetricsRow> = par::map_with(exec, &rest, |plan| {
        let cell = (plan.settings.baseline(), plan.replication);
        let tolls = if plan.settings.pricing {
            match profiles.get(&cell) {
                Some(tp) => Some(tp),
                None => return error_row(plan, ScenarioError::MissingBaseline.to_string()),
            }
        } else {
            None
        };
        match guarded(plan, &scenario_inputs(inp, population_of[&plan.replication], tolls), cfg) {
            Ok(o) => o.row,
            Err(e) => error_row(plan, e),
        }
    });

    let mut rest_iter = rest_rows.into_iter();
    let mut rows: Vec<MetricsRow> = plans
        .iter()
        .map(|plan| {
            if plan.settings.is_bau() {
                match &base_rows[&(plan.settings, plan.replication)] {
                    Ok(r) => r.clone(),
                    Err(e) => error_row(plan, e.clone()),
                }
            } else {
                rest_iter.next().expect("one row per plan")
            }
        })
        .collect();
    rows.sort_by_key(|r| (super::levers::cell_index(&r.settings()), r.replication));
    BatchResult { rows }
}

/// One plan with its diagnostics, synthesizing the population and, for a
/// priced plan, running the baseline first exactly as [`run_batch`] does.
pub fn run_single(plan: &ScenarioPlan, inp: &BatchInputs, cfg: &EngineConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let spec = PopulationSpec { cacc_share: CACC_SHARE, ..inp.population.clone() };
    let population = synthesize_population(inp.net, &spec, plan.common_seed);
    let base = ScenarioInputs { net: inp.net, depots: inp.depots, population: &population, tolls: None, table: inp.table };
    if !plan.settings.pricing {
        return run_scenario(plan, &base, cfg);
    }
    let baseline = run_scenario(&plan.baseline(), &base, cfg)?;
    let tolls = compute_toll_profile(inp.net, Some(&baseline.log.hourly_times), cfg.cost.vot)
        .map_err(|_| ScenarioError::MissingBaseline)?;
    run_scenario(plan, &ScenarioInputs { tolls: Some(&tolls), ..base }, cfg)
}
