//! Monte Carlo evaluation of plans under the online policy.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instgen::{draw_case_lognormal, sample_scenarios, DEFAULT_CV_REDUCTION, DEFAULT_DELTA_NOISE_SD};
use crate::model::{BlockId, BlockRef, Case, CostBreakdown, Instance, Plan, Rates, Scenario, SimulationOutcome, Specialty};
use crate::planners::PlannerReport;
use crate::rng::{substream, VALIDATION_OFFSET};
use crate::simpolicy::{simulate, PolicyParams};
use crate::stage2::{solve_block_lp, svf_order, BlockProblem};
use crate::{Error, Result};

/// Validation set size used for reporting.
pub const VALIDATION_K: usize = 450;

const TOL: f64 = 1e-6;

/// Recomputes every cost term of an outcome from its schedule.
pub fn total_cost(instance: &Instance, outcome: &SimulationOutcome) -> Result<CostBreakdown> {
    let c = &instance.costs;
    let mut scheduling = 0.0;
    for p in &instance.patients {
        let b = outcome
            .final_block
            .get(&p.id)
            .ok_or_else(|| Error::Mismatch(format!("outcome lacks patient {}", p.id)))?;
        scheduling += c
            .assign_cost(p.id, *b)
            .ok_or_else(|| Error::Mismatch(format!("patient {} cannot use block {b}", p.id)))?;
    }
    if outcome.final_block.len() != instance.patients.len() {
        return Err(Error::Mismatch("outcome names unknown patients".into()));
    }
    let mut busy: BTreeMap<BlockId, f64> = BTreeMap::new();
    let mut last_end: BTreeMap<BlockId, f64> = BTreeMap::new();
    let mut operated = BTreeMap::new();
    for op in &outcome.operations {
        if op.block as usize >= instance.blocks.len() {
            return Err(Error::Mismatch(format!("operation in unknown block {}", op.block)));
        }
        if !(op.duration > 0.0 && op.start >= 0.0) {
            return Err(Error::Mismatch(format!("malformed operation in block {}", op.block)));
        }
        *busy.entry(op.block).or_default() += op.duration;
        let end = last_end.entry(op.block).or_insert(0.0);
        *end = end.max(op.end());
        if let Case::Elective { patient } = op.case {
            if operated.insert(patient, (op.block, op.start)).is_some() {
                return Err(Error::Mismatch(format!("patient {patient} operated twice")));
            }
        }
    }
    let mut waiting = 0.0;
    for (p, b) in &outcome.final_block {
        match (b, operated.get(p)) {
            (BlockRef::Dummy, None) => {}
            (BlockRef::Block(b), Some((ob, s))) if ob == b => {
                let t = outcome
                    .final_tentative
                    .get(p)
                    .ok_or_else(|| Error::Mismatch(format!("patient {p} lacks a tentative time")))?;
                if outcome.start.get(p) != Some(s) {
                    return Err(Error::Mismatch(format!("start of patient {p} disagrees with its operation")));
                }
                if *s < t - TOL {
                    return Err(Error::Mismatch(format!("patient {p} starts before its tentative time")));
                }
                waiting += s - t;
            }
            _ => return Err(Error::Mismatch(format!("patient {p} final block disagrees with operations"))),
        }
    }
    let mut idle = 0.0;
    let mut overtime = 0.0;
    for blk in &instance.blocks {
        let load = outcome.load.get(&blk.id).copied().unwrap_or(0.0);
        let end = last_end.get(&blk.id).copied().unwrap_or(0.0);
        if (load - end).abs() > TOL * (1.0 + end) {
            return Err(Error::Mismatch(format!("load of block {} is not its last completion", blk.id)));
        }
        idle += load - busy.get(&blk.id).copied().unwrap_or(0.0);
        overtime += (load - blk.regular_time).max(0.0);
    }
    let moves: u32 = outcome.migrations.values().sum();
    let mut cost = CostBreakdown {
        scheduling,
        waiting: c.waiting * waiting,
        idle: c.idle * idle,
        overtime: c.overtime * overtime,
        migration: c.migration * f64::from(moves),
        total: 0.0,
    };
    cost.total = cost.scheduling + cost.waiting + cost.idle + cost.overtime + cost.migration;
    Ok(cost)
}

/// Patients by planning decision and by what the policy did with them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub scheduled: u64,
    pub postponed: u64,
    pub as_planned: u64,
    pub rescheduled: u64,
    pub canceled: u64,
}

impl StatusCounts {
    pub fn of(plan: &Plan, outcome: &SimulationOutcome) -> StatusCounts {
        let mut s = StatusCounts::default();
        for (p, b) in &plan.assignment {
            if b.is_dummy() {
                s.postponed += 1;
                continue;
            }
            s.scheduled += 1;
            if outcome.migrations.get(p).copied().unwrap_or(0) == 0 {
                s.as_planned += 1;
            } else if outcome.final_block.get(p).is_some_and(|f| f.is_dummy()) {
                s.canceled += 1;
            } else {
                s.rescheduled += 1;
            }
        }
        s
    }

    fn add(&mut self, o: &StatusCounts) {
        self.scheduled += o.scheduled;
        self.postponed += o.postponed;
        self.as_planned += o.as_planned;
        self.rescheduled += o.rescheduled;
        self.canceled += o.canceled;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub p05: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        Summary {
            mean,
            sd: var.sqrt(),
            min: v[0],
            p05: quantile_sorted(&v, 0.05),
            p25: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            p75: quantile_sorted(&v, 0.75),
            p95: quantile_sorted(&v, 0.95),
            max: v[v.len() - 1],
        }
    }
}

/// Linearly interpolated quantile of sorted values.
pub fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub index: usize,
    pub cost: CostBreakdown,
    pub status: StatusCounts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: PolicyParams,
    pub scenarios: Vec<ScenarioResult>,
    /// Component-wise mean over scenarios.
    pub mean: CostBreakdown,
    pub total: Summary,
    /// Status counts summed over scenarios.
    pub status: StatusCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planner: Option<PlannerReport>,
}

impl EvalReport {
    pub fn with_planner(mut self, report: PlannerReport) -> Self {
        self.planner = Some(report);
        self
    }
}

/// Simulates the plan on every scenario and aggregates the costs.
pub fn evaluate_plan(
    instance: &Instance,
    plan: &Plan,
    scenarios: &[Scenario],
    params: &PolicyParams,
) -> Result<EvalReport> {
    if scenarios.is_empty() {
        return Err(Error::Config("evaluation needs at least one scenario".into()));
    }
    let results = scenarios
        .par_iter()
        .enumerate()
        .map(|(index, s)| {
            let outcome = simulate(instance, plan, s, params)?;
            let cost = total_cost(instance, &outcome)?;
            Ok(ScenarioResult { index, cost, status: StatusCounts::of(plan, &outcome) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(*params, results))
}

fn aggregate(params: PolicyParams, results: Vec<ScenarioResult>) -> EvalReport {
    let n = results.len() as f64;
    let mut mean = CostBreakdown::default();
    let mut status = StatusCounts::default();
    for r in &results {
        mean.scheduling += r.cost.scheduling;
        mean.waiting += r.cost.waiting;
        mean.idle += r.cost.idle;
        mean.overtime += r.cost.overtime;
        mean.migration += r.cost.migration;
        mean.total += r.cost.total;
        status.add(&r.status);
    }
    for v in [&mut mean.scheduling, &mut mean.waiting, &mut mean.idle, &mut mean.overtime, &mut mean.migration, &mut mean.total] {
        *v /= n;
    }
    let totals: Vec<f64> = results.iter().map(|r| r.cost.total).collect();
    EvalReport { params, total: Summary::of(&totals), scenarios: results, mean, status, planner: None }
}

/// Validation scenarios, drawn from a stream disjoint from planning.
pub fn validation_scenarios(instance: &Instance, count: usize) -> Result<Vec<Scenario>> {
    sample_scenarios(instance, count, instance.seed.wrapping_add(VALIDATION_OFFSET))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KSensitivityParams {
    pub blocks: usize,
    pub patients: usize,
    pub reference_k: usize,
    pub regular_time: f64,
    pub seed: u64,
}

impl Default for KSensitivityParams {
    fn default() -> Self {
        KSensitivityParams { blocks: 10, patients: 6, reference_k: 10_000, regular_time: 480.0, seed: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    /// Mean over blocks of the relative gap to the reference optimum.
    pub deviation: f64,
    /// Mean solve time per block.
    pub seconds: f64,
}

/// Accuracy and cost of the block LP against sample size on random blocks of
/// one specialty, in SVF order. Smaller samples are prefixes of the
/// reference sample.
pub fn k_sensitivity(
    specialty: &Specialty,
    rates: Rates,
    grid: &[usize],
    params: &KSensitivityParams,
) -> Result<Vec<KPoint>> {
    if params.blocks == 0 || params.patients == 0 {
        return Err(Error::Config("blocks and patients must be positive".into()));
    }
    if let Some(k) = grid.iter().find(|k| **k == 0 || **k > params.reference_k) {
        return Err(Error::Config(format!("sample size {k} outside 1..={}", params.reference_k)));
    }
    let mut deviation = vec![0.0; grid.len()];
    let mut seconds = vec![0.0; grid.len()];
    for b in 0..params.blocks {
        let mut rng = substream(params.seed, b as u64);
        let cases = (0..params.patients)
            .map(|_| {
                draw_case_lognormal(
                    specialty.marginal_mean,
                    specialty.marginal_var,
                    DEFAULT_CV_REDUCTION,
                    DEFAULT_DELTA_NOISE_SD,
                    &mut rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let order = svf_order(&cases);
        let durations = order
            .iter()
            .map(|i| {
                let (mu, sigma) = cases[*i];
                let d = LogNormal::new(mu, sigma).map_err(|e| Error::Domain(e.to_string()))?;
                let mut r = substream(params.seed, ((b as u64 + 1) << 32) | *i as u64);
                Ok((0..params.reference_k).map(|_| d.sample(&mut r)).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let solve = |k: usize| -> Result<(f64, f64)> {
            let sub = durations.iter().map(|d| d[..k].to_vec()).collect();
            let problem = BlockProblem::new(sub, params.regular_time, rates)?;
            let clock = Instant::now();
            let cost = solve_block_lp(&problem)?.cost;
            Ok((cost, clock.elapsed().as_secs_f64()))
        };
        let (reference, _) = solve(params.reference_k)?;
        for (g, k) in grid.iter().enumerate() {
            let (cost, secs) = solve(*k)?;
            deviation[g] += (cost - reference).abs() / reference.abs().max(f64::MIN_POSITIVE);
            seconds[g] += secs;
        }
    }
    let n = params.blocks as f64;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(g, k)| KPoint { k: *k, deviation: deviation[g] / n, seconds: seconds[g] / n })
        .collect())
}

/// Writes the curve as CSV with a `K,deviation,seconds` header.
pub fn write_k_csv<W: Write>(points: &[KPoint], mut out: W) -> Result<()> {
    writeln!(out, "K,deviation,seconds")?;
    for p in points {
        writeln!(out, "{},{},{}", p.k, p.deviation, p.seconds)?;
    }
    Ok(())
}
