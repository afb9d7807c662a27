//! Offline planners assigning electives to blocks and setting tentative
//! starting times.

mod benders;
mod deterministic;
mod firstfit;
mod saa;
mod smb2ss;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instgen::sample_scenarios;
use crate::model::{BlockId, BlockRef, Instance, PatientId, Plan, Scenario};
use crate::rng::TRAINING_OFFSET;
use crate::solver::{LinearModel, SolveStatus, Var};
use crate::stage2::{solve_block_lp, BlockProblem, PLANNING_K};
use crate::surrogate::SurrogateSet;
use crate::{Error, Result};

pub use benders::{plan_benders_on, BendersIteration, CutAudit, CutKind};
pub use deterministic::plan_deterministic;
pub use firstfit::{firstfit_order, plan_firstfit};
pub use saa::plan_saa_on;
pub use smb2ss::plan_smb2ss;

/// Dummy emergencies below this expected length are left out of the model.
pub const MIN_DUMMY_MINUTES: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Smb2ss,
    Det,
    Firstfit,
    Saa,
    Benders,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Smb2ss, Method::Det, Method::Firstfit, Method::Saa, Method::Benders];

    pub fn name(self) -> &'static str {
        match self {
            Method::Smb2ss => "smb2ss",
            Method::Det => "det",
            Method::Firstfit => "firstfit",
            Method::Saa => "saa",
            Method::Benders => "benders",
        }
    }

    fn default_time_limit(self) -> f64 {
        match self {
            Method::Saa | Method::Benders => 300.0,
            _ => 20.0,
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub method: Method,
    /// Dummy emergencies per day.
    pub n_e: u32,
    /// Training scenarios for the sample-average models and tentative times.
    pub k: usize,
    /// Seconds per subproblem; the method's default when absent.
    pub time_limit: Option<f64>,
    pub mip_gap: f64,
    /// Duration quantile of the deterministic and first-fit planners.
    pub quantile: f64,
    pub big_m: f64,
    /// Relative gap at which the Benders loop stops.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Training scenario seed; instance seed plus the training offset when absent.
    pub scenario_seed: Option<u64>,
    /// Solve the surrogate model over all specialties at once even without dummies.
    pub force_joint: bool,
    pub cut_kind: CutKind,
    /// Random assignments each Benders cut is checked against.
    pub audit_probes: usize,
    pub dump_models: Option<PathBuf>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            method: Method::Smb2ss,
            n_e: 0,
            k: PLANNING_K,
            time_limit: None,
            mip_gap: crate::solver::DEFAULT_MIP_GAP,
            quantile: 0.7,
            big_m: 1000.0,
            epsilon: 1e-3,
            max_iterations: 500,
            scenario_seed: None,
            force_joint: false,
            cut_kind: CutKind::default(),
            audit_probes: 0,
            dump_models: None,
        }
    }
}

impl PlannerConfig {
    pub fn with_method(method: Method) -> Self {
        PlannerConfig { method, ..Self::default() }
    }

    pub fn time_limit(&self) -> f64 {
        self.time_limit.unwrap_or_else(|| self.method.default_time_limit())
    }

    pub fn scenario_seed(&self, instance: &Instance) -> u64 {
        self.scenario_seed.unwrap_or(instance.seed + TRAINING_OFFSET)
    }

    /// Field-level validation messages; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.k == 0 {
            out.push("k: must be at least 1".to_string());
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            out.push("quantile: must lie in (0, 1)".to_string());
        }
        if !(self.mip_gap >= 0.0) {
            out.push("mip_gap: must be nonnegative".to_string());
        }
        if !(self.big_m > 0.0) {
            out.push("big_m: must be positive".to_string());
        }
        if !(self.epsilon >= 0.0) {
            out.push("epsilon: must be nonnegative".to_string());
        }
        if self.time_limit.is_some_and(|t| !(t > 0.0)) {
            out.push("time_limit: must be positive".to_string());
        }
        if self.max_iterations == 0 {
            out.push("max_iterations: must be at least 1".to_string());
        }
        out
    }

    fn check(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }
}

/// Solve summary of one subproblem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartReport {
    /// Specialties covered; several when solved jointly.
    pub specialties: Vec<String>,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub wall_time: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<BendersIteration>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audits: Vec<CutAudit>,
}

impl PartReport {
    fn from_solve(specialties: Vec<String>, res: &crate::solver::SolveResult) -> Self {
        PartReport {
            specialties,
            objective: res.objective,
            bound: res.bound,
            gap: res.gap,
            wall_time: res.wall_time,
            status: res.status,
            iterations: 1,
            trace: Vec::new(),
            audits: Vec::new(),
        }
    }

    fn trivial(specialties: Vec<String>, objective: f64) -> Self {
        PartReport {
            specialties,
            objective,
            bound: objective,
            gap: 0.0,
            wall_time: 0.0,
            status: SolveStatus::Optimal,
            iterations: 0,
            trace: Vec::new(),
            audits: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerReport {
    pub method: Method,
    /// Model objective summed over subproblems.
    pub objective: f64,
    /// Largest relative gap of any subproblem.
    pub gap: f64,
    pub wall_time: f64,
    pub status: SolveStatus,
    pub parts: Vec<PartReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerOutput {
    pub plan: Plan,
    pub report: PlannerReport,
}

/// Expected length of the j-th dummy emergency of a day, j = 1..n_e:
/// the emergency mean times the probability of at least j arrivals.
pub fn dummy_emergency_durations(rate: f64, mean: f64, n_e: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_e as usize);
    let mut pmf = (-rate).exp();
    let mut cdf = 0.0;
    for j in 0..n_e {
        cdf += pmf;
        out.push(mean * (1.0 - cdf).max(0.0));
        pmf *= rate / f64::from(j + 1);
    }
    out
}

/// Training scenarios for `config`.
pub fn training_scenarios(instance: &Instance, config: &PlannerConfig) -> Result<Vec<Scenario>> {
    sample_scenarios(instance, config.k, config.scenario_seed(instance))
}

/// Runs the configured planner. The surrogate-based method needs `surrogates`.
pub fn plan(instance: &Instance, surrogates: Option<&SurrogateSet>, config: &PlannerConfig) -> Result<PlannerOutput> {
    config.check()?;
    instance.validate()?;
    let started = Instant::now();
    let (plan, parts) = match config.method {
        Method::Smb2ss => {
            let s = surrogates.ok_or_else(|| Error::Config("the surrogate planner needs surrogates".into()))?;
            let scenarios = training_scenarios(instance, config)?;
            plan_smb2ss(instance, s, config, &scenarios)?
        }
        Method::Det => plan_deterministic(instance, config)?,
        Method::Firstfit => plan_firstfit(instance, config)?,
        Method::Saa => {
            let scenarios = training_scenarios(instance, config)?;
            plan_saa_on(instance, config, &scenarios)?
        }
        Method::Benders => {
            let scenarios = training_scenarios(instance, config)?;
            plan_benders_on(instance, config, &scenarios)?
        }
    };
    plan.validate(instance)?;
    let report = summarize(config.method, parts, started.elapsed().as_secs_f64());
    Ok(PlannerOutput { plan, report })
}

fn summarize(method: Method, parts: Vec<PartReport>, wall_time: f64) -> PlannerReport {
    let rank = |s: SolveStatus| match s {
        SolveStatus::Optimal => 0,
        SolveStatus::FeasibleWithGap => 1,
        SolveStatus::TimeLimit => 2,
        SolveStatus::Infeasible => 3,
        SolveStatus::Error => 4,
    };
    let status = parts.iter().map(|p| p.status).max_by_key(|s| rank(*s)).unwrap_or(SolveStatus::Optimal);
    PlannerReport {
        method,
        objective: parts.iter().map(|p| p.objective).sum(),
        gap: parts.iter().map(|p| p.gap).fold(0.0, f64::max),
        wall_time,
        status,
        parts,
    }
}

/// Binary assignment variables of one specialty's patients over its blocks
/// and the postponement option, each patient assigned exactly once.
pub(crate) struct Assignment {
    pub patients: Vec<PatientId>,
    pub blocks: Vec<BlockId>,
    /// `x[i][b]` for the i-th patient and b-th block; the last column is postponement.
    pub x: Vec<Vec<Var>>,
}

impl Assignment {
    pub fn build(lp: &mut LinearModel, instance: &Instance, specialty: &str) -> Self {
        let patients = instance.svf(&instance.patients_of(specialty));
        let blocks = instance.blocks_of(specialty);
        let mut x = Vec::with_capacity(patients.len());
        for p in &patients {
            let row = &instance.costs.assign[p];
            let mut vars: Vec<Var> = blocks.iter().map(|b| lp.binary(format!("x_{p}_{b}"), row.blocks[b])).collect();
            vars.push(lp.binary(format!("x_{p}_post"), row.postpone));
            lp.add_constraint(format!("one_{p}"), vars.iter().map(|v| (*v, 1.0)).collect(), crate::solver::Cmp::Eq, 1.0);
            x.push(vars);
        }
        Assignment { patients, blocks, x }
    }

    /// Reads the chosen block of every patient.
    pub fn read(&self, primal: &[f64]) -> BTreeMap<PatientId, BlockRef> {
        let mut out = BTreeMap::new();
        for (i, p) in self.patients.iter().enumerate() {
            let pick = (0..self.x[i].len())
                .max_by(|a, b| primal[self.x[i][*a].0].total_cmp(&primal[self.x[i][*b].0]))
                .expect("nonempty row");
            let target = self.blocks.get(pick).map_or(BlockRef::Dummy, |b| BlockRef::Block(*b));
            out.insert(*p, target);
        }
        out
    }
}

/// Scheduled patients of each block in processing order.
pub(crate) fn block_sequences(
    instance: &Instance,
    assignment: &BTreeMap<PatientId, BlockRef>,
) -> BTreeMap<BlockId, Vec<PatientId>> {
    let mut members: BTreeMap<BlockId, Vec<PatientId>> = BTreeMap::new();
    for (p, b) in assignment {
        if let BlockRef::Block(b) = b {
            members.entry(*b).or_default().push(*p);
        }
    }
    members.into_iter().map(|(b, ps)| (b, instance.svf(&ps))).collect()
}

/// Tentative times from the block LP of every scheduled block.
pub fn tentative_from_lp(
    instance: &Instance,
    assignment: &BTreeMap<PatientId, BlockRef>,
    scenarios: &[Scenario],
) -> Result<BTreeMap<PatientId, f64>> {
    let seqs: Vec<(BlockId, Vec<PatientId>)> = block_sequences(instance, assignment).into_iter().collect();
    let per_block = seqs
        .par_iter()
        .map(|(b, seq)| {
            let problem = BlockProblem::from_instance(instance, seq, scenarios, instance.block(*b).regular_time)?;
            let sol = solve_block_lp(&problem)?;
            Ok(seq.iter().copied().zip(sol.tentative).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_block.into_iter().flatten().collect())
}

/// Tentative times as running sums of per-patient planning durations.
pub(crate) fn tentative_cumulative(
    instance: &Instance,
    assignment: &BTreeMap<PatientId, BlockRef>,
    duration: impl Fn(PatientId) -> f64,
) -> BTreeMap<PatientId, f64> {
    let mut out = BTreeMap::new();
    for seq in block_sequences(instance, assignment).values() {
        let mut t = 0.0;
        for p in seq {
            out.insert(*p, t);
            t += duration(*p);
        }
    }
    out
}

fn quantile_durations(instance: &Instance, q: f64) -> Result<Vec<f64>> {
    instance.patients.iter().map(|p| p.quantile_duration(q)).collect()
}

fn check_solution(res: &crate::solver::SolveResult, what: &str) -> Result<()> {
    if res.has_solution() {
        Ok(())
    } else {
        Err(Error::Solver(format!("{what}: no solution ({:?}, {})", res.status, res.message)))
    }
}

/// `p[i][k]`: duration of `patients[i]` in scenario k.
fn duration_matrix(patients: &[PatientId], scenarios: &[Scenario]) -> Result<Vec<Vec<f64>>> {
    patients
        .iter()
        .map(|p| {
            scenarios
                .iter()
                .map(|s| {
                    s.elective_durations
                        .get(p)
                        .copied()
                        .ok_or_else(|| Error::Mismatch(format!("scenario lacks patient {p}")))
                })
                .collect()
        })
        .collect()
}

fn run_parts<F>(instance: &Instance, solve: F) -> Result<(BTreeMap<PatientId, BlockRef>, Vec<PartReport>)>
where
    F: Fn(&str) -> Result<(BTreeMap<PatientId, BlockRef>, PartReport)> + Sync,
{
    let solved = instance
        .active_specialties()
        .par_iter()
        .map(|s| solve(s))
        .collect::<Result<Vec<_>>>()?;
    let mut assignment = BTreeMap::new();
    let mut parts = Vec::with_capacity(solved.len());
    for (a, r) in solved {
        assignment.extend(a);
        parts.push(r);
    }
    Ok((assignment, parts))
}
