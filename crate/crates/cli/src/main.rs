//! Command-line front end: build the toy city, run one scenario or the full
//! design, fit regressions over a batch table and search lever vectors.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use mesopolis::analytics::{
    cumulative_decomposition, fit_ols, optimize_levers, read_metrics, write_metrics, Factor, Objective, RegressionResult,
    TermSpec,
};
use mesopolis::energy::PowertrainTable;
use mesopolis::fleets::{read_depots, write_fleet_events, Depot};
use mesopolis::netmodel::{load_network, validate_network, Network};
use mesopolis::par::Execution;
use mesopolis::scenarios::{
    enumerate_doe, run_batch, run_single, BatchInputs, LeverSettings, ScenarioConfig, ScenarioPlan,
};
use mesopolis::toy::{make_toy, write_toy, GridSize, ToySpec};

const USAGE: u8 = 2;
const FAILED: u8 = 1;
const ERROR_LOG: &str = "errors.jsonl";

#[derive(Parser)]
#[command(name = "mesopolis", version, about = "Mesoscopic transportation scenario simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic toy city.
    MakeToy(MakeToyArgs),
    /// Run one scenario plan and write its metrics and logs.
    Run(RunArgs),
    /// Run the full factorial design.
    Doe(RunArgs),
    /// Fit interaction regressions over a batch metrics table.
    Analyze(AnalyzeArgs),
    /// Search all lever vectors against fitted models.
    Optimize(OptimizeArgs),
}

#[derive(Args)]
struct MakeToyArgs {
    /// Grid dimensions, ROWSxCOLS.
    #[arg(long, default_value = "8x8")]
    grid: GridSize,
    /// Residents the zone populations sum to.
    #[arg(long, default_value_t = 20_000)]
    pop: u64,
    /// Grid nodes per zone side.
    #[arg(long, default_value_t = 2)]
    zone_block: usize,
    /// Block length, m.
    #[arg(long, default_value_t = 800.0)]
    spacing: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory with the network tables and depots.csv.
    #[arg(long)]
    network: PathBuf,
    /// Scenario config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Batch metrics table.
    #[arg(long)]
    metrics: PathBuf,
    /// Analysis config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Model file; repeat for several metrics.
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Objective weight as METRIC=W; metrics without one get weight 0.
    #[arg(long = "weight", required = true)]
    weights: Vec<String>,
    /// Lever order of the decomposition, comma separated; defaults to the
    /// winner's levers.
    #[arg(long, value_delimiter = ',')]
    sequence: Option<Vec<Factor>>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct AnalysisConfig {
    responses: Vec<String>,
    terms: TermSpec,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            responses: ["vht", "energy_kwh", "ghg_g_per_mi", "efficiency_mi_per_kwh"].map(String::from).to_vec(),
            terms: TermSpec::default(),
        }
    }
}

/// One line of the structured error log.
#[derive(Debug, Serialize)]
struct ErrorRecord {
    command: &'static str,
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    cell: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    replication: Option<u32>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    error: anyhow::Error,
}

trait Classify<T> {
    fn usage(self, kind: &'static str) -> Result<T, Failure>;
    fn failed(self, kind: &'static str) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self, kind: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: USAGE, kind, error: e.into() })
    }

    fn failed(self, kind: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { code: FAILED, kind, error: e.into() })
    }
}

/// Appends records to `<out>/errors.jsonl`, created on first use.
struct ErrorLog {
    command: &'static str,
    path: Option<PathBuf>,
}

impl ErrorLog {
    fn record(&self, rec: ErrorRecord) {
        log::error!("{}: {}: {}", rec.command, rec.kind, rec.message);
        self.append(&rec);
    }

    fn append(&self, rec: &ErrorRecord) {
        let Some(path) = &self.path else { return };
        let line = serde_json::to_string(rec).expect("record serializes");
        let res = fs::OpenOptions::new().create(true).append(true).open(path).and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = res {
            log::error!("cannot write {}: {e}", path.display());
        }
    }

    fn failure(&self, f: &Failure) {
        self.append(&ErrorRecord {
            command: self.command,
            kind: f.kind,
            message: format!("{:#}", f.error),
            cell: None,
            replication: None,
        });
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MESOPOLIS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let (name, out) = match &cli.command {
        Command::MakeToy(a) => ("make-toy", &a.out),
        Command::Run(a) => ("run", &a.out),
        Command::Doe(a) => ("doe", &a.out),
        Command::Analyze(a) => ("analyze", &a.out),
        Command::Optimize(a) => ("optimize", &a.out),
    };
    let mut errors = ErrorLog { command: name, path: None };
    if let Err(e) = prepare_out(out) {
        eprintln!("error: {e:#}");
        return ExitCode::from(USAGE);
    }
    errors.path = Some(out.join(ERROR_LOG));
    let res = match cli.command {
        Command::MakeToy(a) => cmd_make_toy(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Doe(a) => cmd_doe(&a, &errors),
        Command::Analyze(a) => cmd_analyze(&a, &errors),
        Command::Optimize(a) => cmd_optimize(&a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            errors.failure(&f);
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

/// Create the output directory and drop a stale error log.
fn prepare_out(out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let log = out.join(ERROR_LOG);
    if log.exists() {
        fs::remove_file(&log).with_context(|| format!("cannot replace {}", log.display()))?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot write {}", path.display())).failed("output")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display())).failed("output")
}

fn cmd_make_toy(a: &MakeToyArgs) -> Result<u8, Failure> {
    let spec = ToySpec {
        rows: a.grid.0,
        cols: a.grid.1,
        spacing: a.spacing,
        zone_block: a.zone_block,
        population: a.pop,
        seed: a.seed,
    };
    let city = make_toy(&spec).usage("spec")?;
    let report = validate_network(&city.network);
    if !report.is_simulatable() {
        return Err(anyhow!("generated network has issues: {:?}", report.issues)).failed("validation");
    }
    write_toy(&city, &a.out).failed("output")?;
    println!(
        "toy city {}x{}: {} nodes, {} links, {} zones, {} tollable links",
        spec.rows,
        spec.cols,
        city.network.nodes.len(),
        city.network.links.len(),
        city.network.zones.len(),
        report.tollable_links.len()
    );
    Ok(0)
}

struct Loaded {
    net: Network,
    depots: Vec<Depot>,
    config: ScenarioConfig,
    table: PowertrainTable,
}

/// Network, depots and config of `run` and `doe`. A config without a
/// population total takes the one recorded by `make-toy`.
fn load_inputs(a: &RunArgs) -> Result<Loaded, Failure> {
    let net = load_network(&a.network).usage("network")?;
    let report = validate_network(&net);
    if !report.is_simulatable() {
        return Err(anyhow!("network {} is not simulatable: {:?}", a.network.display(), report.issues)).usage("network");
    }
    let depot_path = a.network.join("depots.csv");
    let depot_file = File::open(&depot_path).with_context(|| format!("cannot read {}", depot_path.display())).usage("network")?;
    let depots = read_depots(&net, depot_file).usage("network")?;

    let (mut config, has_total) = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).usage("config")?;
            let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("bad config {}", p.display())).usage("config")?;
            let has_total = value.pointer("/population/total").is_some();
            let cfg = ScenarioConfig::from_json(&text).with_context(|| format!("bad config {}", p.display())).usage("config")?;
            (cfg, has_total)
        }
        None => (ScenarioConfig::default(), false),
    };
    if !has_total {
        let toy = a.network.join("toy.json");
        if let Ok(text) = fs::read_to_string(&toy) {
            let spec: ToySpec = serde_json::from_str(&text).with_context(|| format!("bad {}", toy.display())).usage("network")?;
            config.population.total = spec.population;
        }
    }
    config.doe.master_seed = a.seed;
    Ok(Loaded { net, depots, config, table: PowertrainTable::shipped() })
}

#[derive(Serialize)]
struct RunSummary {
    plan: ScenarioPlan,
    iterations: usize,
    loaded: u64,
    arrived: u64,
    still_on_network: u64,
    freight_shipments: usize,
    ohd_shipments: usize,
    rejected_shipments: usize,
    delivery_tours: usize,
    overnight_tours: usize,
    substituted_trips: usize,
    telecommuters: usize,
    tnc_requests: usize,
    tnc_unserved: usize,
}

#[derive(Serialize)]
struct TourRecord {
    vehicle: u32,
    depot: u32,
    class: mesopolis::energy::VehicleClass,
    depart: f64,
    return_time: f64,
    stops: usize,
    load: u32,
    overnight: u8,
}

fn cmd_run(a: &RunArgs) -> Result<u8, Failure> {
    let l = load_inputs(a)?;
    let settings = l.config.levers.unwrap_or(LeverSettings::all()[0]);
    let plan = ScenarioPlan::new(settings, l.config.replication, &l.config.doe);
    let inp = BatchInputs { net: &l.net, depots: &l.depots, population: &l.config.population, table: &l.table };
    let out = run_single(&plan, &inp, &l.config.engine).failed("plan")?;
    let log = &out.log;

    write_metrics(std::slice::from_ref(&out.row), create(&a.out.join("metrics.csv"))?).failed("output")?;
    let mut gaps = create(&a.out.join("gaps.csv"))?;
    let mut w = || -> std::io::Result<()> {
        writeln!(gaps, "iteration,gap")?;
        for (i, g) in log.gaps.iter().enumerate() {
            writeln!(gaps, "{},{}", i + 1, g)?;
        }
        gaps.flush()
    };
    w().failed("output")?;
    write_fleet_events(&l.net, &log.fleet_events, create(&a.out.join("fleet_events.csv"))?).failed("output")?;
    let mut tours = csv::Writer::from_writer(create(&a.out.join("tours.csv"))?);
    for t in &log.tours {
        tours
            .serialize(TourRecord {
                vehicle: t.vehicle,
                depot: t.depot,
                class: t.class,
                depart: t.depart,
                return_time: t.return_time,
                stops: t.stops.len(),
                load: t.load,
                overnight: t.is_overnight() as u8,
            })
            .failed("output")?;
    }
    tours.flush().failed("output")?;
    let mut edits = csv::Writer::from_writer(create(&a.out.join("transit_edits.csv"))?);
    for e in &log.transit_edits {
        edits.serialize(e).failed("output")?;
    }
    edits.flush().failed("output")?;
    write_json(
        &a.out.join("run_summary.json"),
        &RunSummary {
            plan: plan.clone(),
            iterations: log.gaps.len(),
            loaded: log.loaded,
            arrived: log.arrived,
            still_on_network: log.still_on_network,
            freight_shipments: log.freight_shipments,
            ohd_shipments: log.ohd_shipments,
            rejected_shipments: log.rejected_shipments,
            delivery_tours: log.tours.len(),
            overnight_tours: log.tours.iter().filter(|t| t.is_overnight()).count(),
            substituted_trips: log.substituted_trips,
            telecommuters: log.telecommuters,
            tnc_requests: log.tnc_requests,
            tnc_unserved: log.tnc_unserved,
        },
    )?;
    println!(
        "vht {:.3} vmt {:.1} energy {:.1} kWh, {} iterations, gap {:.4}",
        out.row.vht,
        out.row.vmt,
        out.row.energy_kwh,
        out.row.iterations,
        out.row.gap
    );
    Ok(0)
}

fn cmd_doe(a: &RunArgs, errors: &ErrorLog) -> Result<u8, Failure> {
    let l = load_inputs(a)?;
    let plans = enumerate_doe(&l.config.doe);
    log::info!("running {} plans on {} workers", plans.len(), a.workers.max(1));
    let inp = BatchInputs { net: &l.net, depots: &l.depots, population: &l.config.population, table: &l.table };
    let result = run_batch(&plans, &inp, &l.config.engine, Execution::from_workers(a.workers));
    write_metrics(&result.rows, create(&a.out.join("metrics.csv"))?).failed("output")?;
    for r in result.rows.iter().filter(|r| r.failed()) {
        errors.record(ErrorRecord {
            command: "doe",
            kind: "plan",
            message: r.error.clone(),
            cell: Some(mesopolis::scenarios::cell_index(&r.settings())),
            replication: Some(r.replication),
        });
    }
    println!("{} plans, {} failed", result.rows.len(), result.failures());
    Ok(if result.failures() > 0 { FAILED } else { 0 })
}

fn cmd_analyze(a: &AnalyzeArgs, errors: &ErrorLog) -> Result<u8, Failure> {
    let cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).usage("config")?;
            serde_json::from_str::<AnalysisConfig>(&text).with_context(|| format!("bad config {}", p.display())).usage("config")?
        }
        None => AnalysisConfig::default(),
    };
    let file = File::open(&a.metrics).with_context(|| format!("cannot read {}", a.metrics.display())).usage("metrics")?;
    let rows = read_metrics(file).with_context(|| format!("bad metrics table {}", a.metrics.display())).usage("metrics")?;
    let mut code = 0;
    for response in &cfg.responses {
        match fit_ols(&rows, response, &cfg.terms) {
            Ok(model) => {
                let mut w = create(&a.out.join(format!("{response}_report.csv")))?;
                model.write_report(&mut w).failed("output")?;
                w.flush().failed("output")?;
                fs::write(a.out.join(format!("{response}.json")), model.to_json() + "\n").failed("output")?;
                println!("{response}: {} terms, n {}, adj R2 {:?}", model.terms.len(), model.n, model.adj_r2);
            }
            Err(e) => {
                errors.record(ErrorRecord {
                    command: "analyze",
                    kind: "regression",
                    message: format!("{response}: {e}"),
                    cell: None,
                    replication: None,
                });
                code = FAILED;
            }
        }
    }
    Ok(code)
}

fn parse_weight(s: &str) -> anyhow::Result<(String, f64)> {
    let (m, w) = s.split_once('=').ok_or_else(|| anyhow!("weight `{s}` is not METRIC=W"))?;
    let w: f64 = w.trim().parse().with_context(|| format!("weight `{s}` is not METRIC=W"))?;
    Ok((m.trim().to_string(), w))
}

fn cmd_optimize(a: &OptimizeArgs) -> Result<u8, Failure> {
    let mut models = Vec::new();
    for p in &a.models {
        let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display())).usage("model")?;
        let m = RegressionResult::from_json(&text).with_context(|| format!("bad model file {}", p.display())).usage("model")?;
        if models.iter().any(|o: &RegressionResult| o.response == m.response) {
            return Err(anyhow!("two model files for {}", m.response)).usage("model");
        }
        models.push(m);
    }
    let weights = a.weights.iter().map(|s| parse_weight(s)).collect::<anyhow::Result<Vec<_>>>().usage("weights")?;
    for (m, _) in &weights {
        if !models.iter().any(|o| &o.response == m) {
            return Err(anyhow!("weight names {m}, which has no model file")).usage("weights");
        }
    }
    let set: Vec<(&RegressionResult, Objective)> = models
        .iter()
        .map(|m| {
            let w = weights.iter().filter(|(n, _)| n == &m.response).map(|x| x.1).sum();
            (m, Objective::new(&m.response, w))
        })
        .collect();
    let choice = optimize_levers(&set).usage("weights")?;

    let mut w = create(&a.out.join("optimize_report.csv"))?;
    let mut write_report = || -> std::io::Result<()> {
        let v = choice.vector();
        writeln!(w, "pricing,transit,signals,tnc,ohd,ecomm_high,ev_low,ev_med,ev_high,objective")?;
        let cells: Vec<String> = v.iter().map(|b| b.to_string()).collect();
        writeln!(w, "{},{}", cells.join(","), choice.objective)?;
        writeln!(w)?;
        writeln!(w, "metric,weight,baseline,predicted,percent_change")?;
        for ((_, o), d) in set.iter().zip(&choice.deltas) {
            writeln!(w, "{},{},{},{},{:.1}", d.metric, o.weight, d.baseline, d.predicted, d.percent)?;
        }
        w.flush()
    };
    write_report().failed("output")?;

    let sequence: Vec<Factor> = match &a.sequence {
        Some(s) => s.clone(),
        None => Factor::ALL.into_iter().filter(|f| f.value(&choice.settings)).collect(),
    };
    let mut w = create(&a.out.join("decomposition.csv"))?;
    writeln!(w, "metric,step,lever,isolated,delta,cumulative,cumulative_percent").failed("output")?;
    for m in &models {
        let d = cumulative_decomposition(m, &sequence).usage("sequence")?;
        writeln!(w, "{},0,all_off,0,0,{},0.0", m.response, d.baseline).failed("output")?;
        for (i, s) in d.steps.iter().enumerate() {
            let pct = 100.0 * (s.cumulative - d.baseline) / d.baseline;
            writeln!(w, "{},{},{},{},{},{},{:.1}", m.response, i + 1, s.lever.name(), s.isolated, s.delta, s.cumulative, pct)
                .failed("output")?;
        }
    }
    w.flush().failed("output")?;

    let on: Vec<&str> = Factor::ALL.into_iter().filter(|f| f.value(&choice.settings)).map(|f| f.name()).collect();
    println!("winner: {}", if on.is_empty() { "all off".to_string() } else { on.join(" + ") });
    for d in &choice.deltas {
        println!("{}: {:.3} -> {:.3} ({:+.1}%)", d.metric, d.baseline, d.predicted, d.percent);
    }
    Ok(0)
}
