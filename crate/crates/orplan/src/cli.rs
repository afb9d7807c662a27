use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use orplan_core::evalmc::{evaluate_plan, k_sensitivity, validation_scenarios, write_k_csv, KSensitivityParams, VALIDATION_K};
use orplan_core::instgen::{default_specialties, sample_scenarios, specialty_by_code, CostStructure, FlowtimeUnit, GenConfig};
use orplan_core::model::{Instance, Scenario};
use orplan_core::planners::{plan, Method, PlannerConfig};
use orplan_core::rng::VALIDATION_OFFSET;
use orplan_core::simpolicy::{simulate, simulate_traced, PolicyParams};
use orplan_core::surrogate::{SurrogateParams, SurrogateSet, DEFAULT_POINTS};
use serde::Serialize;

use crate::artifacts::{
    content_id, generate_with_surrogates, read_json, read_jsonl, surrogates_for, write_json, write_jsonl, PlanArtifact,
};
use crate::store::Store;

#[derive(Debug, Parser)]
#[command(name = "orplan", version, about = "Elective and emergency surgery planning")]
pub struct Cli {
    /// Artifact and surrogate cache directory.
    #[arg(long, global = true, env = "ORPLAN_DATA_DIR", default_value = "orplan-data")]
    pub data_dir: PathBuf,
    /// Worker threads for parallel solves and simulations.
    #[arg(long, global = true, env = "ORPLAN_SOLVER_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an instance.
    Gen(GenArgs),
    /// Build and cache the second-stage surrogates of every specialty.
    Surrogate(SurrogateArgs),
    /// Sample scenarios of an instance as JSON lines.
    Scenarios(ScenarioArgs),
    /// Assign patients to blocks and fix tentative times.
    Plan(PlanArgs),
    /// Run the online policy on scenarios.
    Simulate(SimulateArgs),
    /// Monte Carlo evaluation of a plan.
    Eval(EvalArgs),
    /// Factorial sweep of planners and policy parameters to CSV.
    Bench(BenchArgs),
    /// Sample-size sensitivity of the block LP to CSV.
    Ksens(KsensArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SurrogateOpts {
    /// Sampled loads per surrogate fit.
    #[arg(long, default_value_t = DEFAULT_POINTS)]
    pub points: usize,
    /// Scenarios per sampled load.
    #[arg(long, default_value_t = orplan_core::stage2::SURROGATE_K)]
    pub surrogate_k: usize,
    #[arg(long, default_value_t = orplan_core::surrogate::DEFAULT_PIECES)]
    pub pieces: usize,
}

impl SurrogateOpts {
    fn params(&self) -> SurrogateParams {
        SurrogateParams { n: self.points, k: self.surrogate_k, pieces: self.pieces, ..SurrogateParams::default() }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(short = 'n', long, default_value_t = 70)]
    pub n: u32,
    /// Mean emergency arrivals per day.
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
    #[arg(long, default_value = "day")]
    pub unit: FlowtimeUnit,
    #[arg(long, default_value = "cs3")]
    pub cost_structure: CostStructure,
    #[arg(long)]
    pub w0: Option<f64>,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SurrogateArgs {
    #[arg(long, default_value = "cs3")]
    pub cost_structure: CostStructure,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value_t = VALIDATION_K)]
    pub count: usize,
    /// The instance's validation stream when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// JSON planner configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub n_e: Option<u32>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub mip_gap: Option<f64>,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PolicyOpts {
    #[arg(long, default_value_t = 120.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
}

impl PolicyOpts {
    fn params(&self) -> anyhow::Result<PolicyParams> {
        let p = PolicyParams { delta: self.delta, alpha: self.alpha };
        let problems = p.problems();
        if !problems.is_empty() {
            bail!("{}", problems.join("; "));
        }
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub scenario_file: PathBuf,
    #[command(flatten)]
    pub policy: PolicyOpts,
    /// Include the event trace and load estimates.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// Scenario file; validation scenarios of the instance when absent.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long, default_value_t = VALIDATION_K)]
    pub count: usize,
    #[command(flatten)]
    pub policy: PolicyOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    pub seeds: Vec<u64>,
    #[arg(short = 'n', long, value_delimiter = ',', default_values_t = [70u32])]
    pub n: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 3.0])]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "day")]
    pub units: Vec<FlowtimeUnit>,
    #[arg(long, value_delimiter = ',', default_value = "cs3")]
    pub cost_structures: Vec<CostStructure>,
    #[arg(long, value_delimiter = ',', default_value = "smb2ss,det,firstfit")]
    pub methods: Vec<Method>,
    /// Dummy emergency counts tried with the surrogate planner when emergencies occur.
    #[arg(long, value_delimiter = ',', default_values_t = [0u32, 5])]
    pub n_e: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_values_t = [120.0])]
    pub deltas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.7])]
    pub alphas: Vec<f64>,
    /// Validation scenarios per evaluation.
    #[arg(long, default_value_t = VALIDATION_K)]
    pub k: usize,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[command(flatten)]
    pub surrogate: SurrogateOpts,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KsensArgs {
    #[arg(long, default_value = "MED")]
    pub specialty: String,
    #[arg(long, default_value = "cs3")]
    pub cost_structure: CostStructure,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 150, 450, 1000])]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    pub reference: usize,
    #[arg(long, default_value_t = 10)]
    pub blocks: usize,
    #[arg(long, default_value_t = 6)]
    pub patients: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ORPLAN_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    let surrogate_dir = cli.data_dir.join("surrogates");
    match cli.command {
        Command::Gen(a) => {
            let config = GenConfig {
                seed: a.seed,
                n_patients: a.n,
                rate: a.rate,
                flowtime_unit: a.unit,
                cost_structure: a.cost_structure,
                w0: a.w0,
                ..GenConfig::default()
            };
            let problems = config.problems();
            if !problems.is_empty() {
                bail!("{}", problems.join("; "));
            }
            let instance = generate_with_surrogates(&surrogate_dir, &config, &a.surrogate.params())?;
            write_json(&a.out, &instance)
        }
        Command::Surrogate(a) => {
            let set = SurrogateSet::load_or_build(
                &surrogate_dir,
                &default_specialties(),
                a.cost_structure.rates(),
                &a.surrogate.params(),
            )?;
            for (s, m) in &set.models {
                println!(
                    "{s}: {} pieces, mean relative deviation {:.4}",
                    m.pieces.len(),
                    m.stats.mean_abs_rel_dev
                );
            }
            Ok(())
        }
        Command::Scenarios(a) => {
            let instance: Instance = read_json(&a.instance)?;
            let seed = a.seed.unwrap_or(instance.seed.wrapping_add(VALIDATION_OFFSET));
            write_jsonl(&a.out, &sample_scenarios(&instance, a.count, seed)?)
        }
        Command::Plan(a) => {
            let instance: Instance = read_json(&a.instance)?;
            let mut config: PlannerConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => PlannerConfig::default(),
            };
            if let Some(m) = a.method {
                config.method = m;
            }
            if let Some(v) = a.n_e {
                config.n_e = v;
            }
            if let Some(v) = a.k {
                config.k = v;
            }
            if a.time_limit.is_some() {
                config.time_limit = a.time_limit;
            }
            if let Some(v) = a.mip_gap {
                config.mip_gap = v;
            }
            let artifact = plan_instance(&surrogate_dir, instance, config, &a.surrogate.params())?;
            eprintln!(
                "{}: objective {:.3}, gap {:.4}, {:.1}s",
                artifact.report.method.name(),
                artifact.report.objective,
                artifact.report.gap,
                artifact.report.wall_time
            );
            write_json(&a.out, &artifact)
        }
        Command::Simulate(a) => {
            let planned: PlanArtifact = read_json(&a.plan)?;
            let scenarios: Vec<Scenario> = read_jsonl(&a.scenario_file)?;
            let params = a.policy.params()?;
            let mut lines = Vec::with_capacity(scenarios.len());
            for (index, s) in scenarios.iter().enumerate() {
                let (outcome, trace) = if a.trace {
                    let (o, t) = simulate_traced(&planned.instance, &planned.plan, s, &params)?;
                    (o, Some(t))
                } else {
                    (simulate(&planned.instance, &planned.plan, s, &params)?, None)
                };
                let cost = orplan_core::evalmc::total_cost(&planned.instance, &outcome)?;
                lines.push(SimulationLine { index, cost, outcome, trace });
            }
            write_jsonl(&a.out, &lines)
        }
        Command::Eval(a) => {
            let planned: PlanArtifact = read_json(&a.plan)?;
            let scenarios = match &a.scenarios {
                Some(p) => read_jsonl(p)?,
                None => validation_scenarios(&planned.instance, a.count)?,
            };
            let report = evaluate_plan(&planned.instance, &planned.plan, &scenarios, &a.policy.params()?)?
                .with_planner(planned.report);
            eprintln!("mean total {:.3}, median {:.3}", report.total.mean, report.total.median);
            write_json(&a.out, &report)
        }
        Command::Bench(a) => bench(&surrogate_dir, &a),
        Command::Ksens(a) => {
            let specialty = specialty_by_code(&a.specialty).with_context(|| format!("unknown specialty {}", a.specialty))?;
            let params = KSensitivityParams {
                blocks: a.blocks,
                patients: a.patients,
                reference_k: a.reference,
                seed: a.seed,
                ..KSensitivityParams::default()
            };
            let points = k_sensitivity(&specialty, a.cost_structure.rates(), &a.grid, &params)?;
            if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_k_csv(&points, fs::File::create(&a.out)?)?;
            Ok(())
        }
        Command::Serve(a) => serve(&cli.data_dir, cli.threads, &a.host, a.port),
    }
}

#[derive(Debug, Serialize)]
struct SimulationLine {
    index: usize,
    cost: orplan_core::model::CostBreakdown,
    outcome: orplan_core::model::SimulationOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<orplan_core::simpolicy::Trace>,
}

pub fn plan_instance(
    surrogate_dir: &Path,
    instance: Instance,
    config: PlannerConfig,
    params: &SurrogateParams,
) -> anyhow::Result<PlanArtifact> {
    let surrogates = match config.method {
        Method::Smb2ss => Some(surrogates_for(surrogate_dir, &instance, params)?),
        _ => None,
    };
    let out = plan(&instance, surrogates.as_ref(), &config)?;
    let id = content_id(&(&instance, &config));
    Ok(PlanArtifact { id, instance_id: None, config, instance, plan: out.plan, report: out.report })
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub seed: u64,
    pub n: u32,
    pub rate: f64,
    pub unit: String,
    pub cost_structure: String,
    pub method: String,
    pub n_e: u32,
    pub delta: f64,
    pub alpha: f64,
    pub objective: f64,
    pub gap: f64,
    pub plan_seconds: f64,
    pub mean_total: f64,
    pub median_total: f64,
    pub scheduling: f64,
    pub waiting: f64,
    pub idle: f64,
    pub overtime: f64,
    pub migration: f64,
    pub postponed: u64,
    pub rescheduled: u64,
    pub canceled: u64,
}

fn bench(surrogate_dir: &Path, a: &BenchArgs) -> anyhow::Result<()> {
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = csv::Writer::from_path(&a.out)?;
    let params = a.surrogate.params();
    let mut sets: BTreeMap<CostStructure, SurrogateSet> = BTreeMap::new();
    for cs in &a.cost_structures {
        sets.insert(*cs, SurrogateSet::load_or_build(surrogate_dir, &default_specialties(), cs.rates(), &params)?);
    }
    for &seed in &a.seeds {
        for &n in &a.n {
            for &rate in &a.rates {
                for unit in &a.units {
                    for cs in &a.cost_structures {
                        let set = &sets[cs];
                        let config = GenConfig {
                            seed,
                            n_patients: n,
                            rate,
                            flowtime_unit: *unit,
                            cost_structure: *cs,
                            ..GenConfig::default()
                        };
                        let instance = orplan_core::instgen::generate(&config, &set.rightmost_slopes())?;
                        let scenarios = validation_scenarios(&instance, a.k)?;
                        for method in &a.methods {
                            let dummies: Vec<u32> = if *method == Method::Smb2ss && rate > 0.0 { a.n_e.clone() } else { vec![0] };
                            for n_e in dummies {
                                let pc = PlannerConfig { n_e, time_limit: a.time_limit, ..PlannerConfig::with_method(*method) };
                                let started = Instant::now();
                                let out_plan = plan(&instance, Some(set), &pc)?;
                                let plan_seconds = started.elapsed().as_secs_f64();
                                for &delta in &a.deltas {
                                    for &alpha in &a.alphas {
                                        let policy = PolicyParams { delta, alpha };
                                        let r = evaluate_plan(&instance, &out_plan.plan, &scenarios, &policy)?;
                                        let k = r.scenarios.len() as u64;
                                        out.serialize(BenchRow {
                                            seed,
                                            n,
                                            rate,
                                            unit: format!("{unit:?}").to_lowercase(),
                                            cost_structure: cs.name().into(),
                                            method: method.name().into(),
                                            n_e,
                                            delta,
                                            alpha,
                                            objective: out_plan.report.objective,
                                            gap: out_plan.report.gap,
                                            plan_seconds,
                                            mean_total: r.total.mean,
                                            median_total: r.total.median,
                                            scheduling: r.mean.scheduling,
                                            waiting: r.mean.waiting,
                                            idle: r.mean.idle,
                                            overtime: r.mean.overtime,
                                            migration: r.mean.migration,
                                            postponed: r.status.postponed / k,
                                            rescheduled: r.status.rescheduled,
                                            canceled: r.status.canceled,
                                        })?;
                                        out.flush()?;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn serve(data_dir: &Path, threads: Option<usize>, host: &str, port: u16) -> anyhow::Result<()> {
    let store = Store::open(data_dir)?;
    let workers = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = crate::api::AppState::new(store, workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, crate::api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
