//! Second-stage machinery of a single block: sample-average LP for tentative
//! times, shortest-variance-first ordering and the realized-cost recursion.
//!
//! The LP is solved through its dual, which has one variable per
//! (patient, scenario) pair plus one per scenario and is roughly half the
//! size of the primal. Tentative times come back as the duals of the
//! per-patient coupling rows. The primal form is kept as a cross-check.

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::model::{Instance, PatientId, Rates, Scenario};
use crate::solver::{self, Cmp, LinearModel, LpMethod, SolveStatus};
use crate::{Error, Result};

pub const PLANNING_K: usize = 450;
pub const SURROGATE_K: usize = 1000;
/// Largest block the exhaustive ordering oracle accepts.
pub const ORACLE_MAX: usize = 7;

/// Patients of one block in processing order with their sampled durations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockProblem {
    /// `durations[i][k]`: duration of the i-th patient in scenario k.
    pub durations: Vec<Vec<f64>>,
    pub regular_time: f64,
    pub rates: Rates,
}

impl BlockProblem {
    pub fn new(durations: Vec<Vec<f64>>, regular_time: f64, rates: Rates) -> Result<Self> {
        let p = BlockProblem { durations, regular_time, rates };
        p.check()?;
        Ok(p)
    }

    /// Problem for `order` on the given scenarios of an instance.
    pub fn from_instance(
        instance: &Instance,
        order: &[PatientId],
        scenarios: &[Scenario],
        regular_time: f64,
    ) -> Result<Self> {
        let durations = order
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
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(durations, regular_time, instance.rates())
    }

    pub fn n(&self) -> usize {
        self.durations.len()
    }

    pub fn k(&self) -> usize {
        self.durations.first().map_or(0, Vec::len)
    }

    fn check(&self) -> Result<()> {
        if let Some(first) = self.durations.first() {
            if first.is_empty() {
                return Err(Error::Domain("block problem needs at least one scenario".into()));
            }
            if self.durations.iter().any(|d| d.len() != first.len()) {
                return Err(Error::Domain("ragged duration matrix".into()));
            }
        }
        if self.durations.iter().flatten().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Domain("durations must be positive".into()));
        }
        if !(self.regular_time > 0.0) {
            return Err(Error::Domain("regular time must be positive".into()));
        }
        Ok(())
    }

    /// The same patients in another order.
    pub fn permuted(&self, perm: &[usize]) -> BlockProblem {
        BlockProblem {
            durations: perm.iter().map(|i| self.durations[*i].clone()).collect(),
            regular_time: self.regular_time,
            rates: self.rates,
        }
    }

    /// Mean over scenarios of the total duration.
    pub fn mean_load(&self) -> f64 {
        let k = self.k();
        if k == 0 {
            return 0.0;
        }
        self.durations.iter().flatten().sum::<f64>() / k as f64
    }
}

/// Realized block terms in minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realized {
    pub starts: Vec<f64>,
    pub waiting: f64,
    pub idle: f64,
    pub overtime: f64,
    pub load: f64,
}

impl Realized {
    pub fn cost(&self, rates: &Rates) -> f64 {
        rates.waiting * self.waiting + rates.idle * self.idle + rates.overtime * self.overtime
    }
}

/// Start times and waiting, idle and overtime minutes of one realization.
pub fn realized_block_costs(tentative: &[f64], durations: &[f64], regular_time: f64) -> Realized {
    assert_eq!(tentative.len(), durations.len(), "one tentative time per patient");
    let mut starts = Vec::with_capacity(tentative.len());
    let mut waiting = 0.0;
    let mut free = f64::NEG_INFINITY;
    for (t, p) in tentative.iter().zip(durations) {
        let s = if free > *t { free } else { *t };
        waiting += s - t;
        starts.push(s);
        free = s + p;
    }
    let load = if starts.is_empty() { 0.0 } else { free };
    let busy: f64 = durations.iter().sum();
    Realized {
        starts,
        waiting,
        idle: load - busy,
        overtime: (load - regular_time).max(0.0),
        load,
    }
}

/// Sample-average second-stage cost of fixed tentative times.
pub fn saa_cost(problem: &BlockProblem, tentative: &[f64]) -> f64 {
    let k = problem.k();
    if problem.n() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut col = vec![0.0; problem.n()];
    for s in 0..k {
        for (i, c) in col.iter_mut().enumerate() {
            *c = problem.durations[i][s];
        }
        total += realized_block_costs(tentative, &col, problem.regular_time).cost(&problem.rates);
    }
    total / k as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSolution {
    pub tentative: Vec<f64>,
    pub cost: f64,
}

/// Optimal dual multipliers in the form used for optimality cuts: the
/// block's cost plus idle-time correction is bounded below by
/// `sum_ik lambda[i][k] p_ik - T sum_k alpha[k]`, tight at this problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDual {
    pub cost: f64,
    pub psi: f64,
    pub lambda: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub tentative: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    #[default]
    Dual,
    Primal,
}

fn lp_method(problem: &BlockProblem) -> LpMethod {
    if problem.n() * problem.k() >= 6000 {
        LpMethod::Ipm
    } else {
        LpMethod::Simplex
    }
}

/// Optimal tentative times and cost of the block's sample-average LP.
pub fn solve_block_lp(problem: &BlockProblem) -> Result<BlockSolution> {
    solve_block_lp_with(problem, Formulation::Dual)
}

pub fn solve_block_lp_with(problem: &BlockProblem, form: Formulation) -> Result<BlockSolution> {
    problem.check()?;
    if problem.n() == 0 {
        return Ok(BlockSolution { tentative: Vec::new(), cost: 0.0 });
    }
    match form {
        Formulation::Dual => block_dual(problem).map(|d| BlockSolution { tentative: d.tentative, cost: d.cost }),
        Formulation::Primal => solve_primal(problem),
    }
}

pub(crate) fn tidy_tentative(raw: impl Iterator<Item = f64>, waiting: f64) -> Vec<f64> {
    let mut run = 0.0f64;
    raw.map(|t| {
        if waiting == 0.0 {
            return 0.0;
        }
        run = run.max(t.max(0.0));
        run
    })
    .collect()
}

/// Solves the dual of the block LP.
///
/// Variables `m[j][k] >= 0` and `v[k] in [0, c^o/K]`; with prefix sums
/// `A_jk` of durations before patient j and scenario totals `P_k`:
///
/// ```text
/// min  sum_jk m_jk A_jk - sum_k v_k (P_k - T)
/// s.t. sum_k m_jk >= c^w                                   (t_j)
///      sum_{j>=0} m_jk - v_k  = (n c^w + c^i)/K
///      sum_{j>=i} m_jk - v_k <= ((n-i) c^w + c^i)/K        i = 1..n-1
/// ```
///
/// The primal optimum is `c^w/K sum_ik (n-1-i) p_ik` minus this value.
pub fn block_dual(problem: &BlockProblem) -> Result<BlockDual> {
    problem.check()?;
    let n = problem.n();
    let kk = problem.k();
    let r = problem.rates;
    let t_reg = problem.regular_time;
    if n == 0 {
        return Ok(BlockDual { cost: 0.0, psi: 0.0, lambda: Vec::new(), alpha: Vec::new(), tentative: Vec::new() });
    }
    let kf = kk as f64;
    let mut lp = LinearModel::new();
    lp.method = lp_method(problem);
    let mut m = vec![Vec::with_capacity(kk); n];
    let mut v = Vec::with_capacity(kk);
    let mut base = 0.0;
    for k in 0..kk {
        let mut prefix = 0.0;
        for (j, mj) in m.iter_mut().enumerate() {
            mj.push(lp.continuous(format!("m_{j}_{k}"), 0.0, f64::INFINITY, prefix));
            let p = problem.durations[j][k];
            base += r.waiting / kf * (n - 1 - j) as f64 * p;
            prefix += p;
        }
        v.push(lp.continuous(format!("v_{k}"), 0.0, r.overtime / kf, -(prefix - t_reg)));
    }
    let coupling: Vec<usize> = (0..n)
        .map(|j| lp.add_constraint(format!("t_{j}"), m[j].iter().map(|x| (*x, 1.0)).collect(), Cmp::Ge, r.waiting))
        .collect();
    for k in 0..kk {
        for i in 0..n {
            let mut terms: Vec<(solver::Var, f64)> = (i..n).map(|j| (m[j][k], 1.0)).collect();
            terms.push((v[k], -1.0));
            let rhs = ((n - i) as f64 * r.waiting + r.idle) / kf;
            let cmp = if i == 0 { Cmp::Eq } else { Cmp::Le };
            lp.add_constraint(format!("chain_{i}_{k}"), terms, cmp, rhs);
        }
    }
    let res = solver::solve(&lp);
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!("block LP ended with {:?}: {}", res.status, res.message)));
    }
    let duals = res.row_duals.as_ref().expect("LP duals");
    let tentative = tidy_tentative(coupling.iter().map(|row| duals[*row]), r.waiting);
    let cost = base - res.objective;
    let mut lambda = vec![vec![0.0; kk]; n];
    let mut alpha = vec![0.0; kk];
    for k in 0..kk {
        let mut cum = 0.0;
        for j in 0..n {
            cum += res.value(m[j][k]);
            lambda[j][k] = if j + 1 < n {
                (cum - (j + 1) as f64 * r.waiting / kf).max(0.0)
            } else {
                res.value(v[k]) + r.idle / kf
            };
        }
        alpha[k] = res.value(v[k]);
    }
    let psi = cost + r.idle * problem.mean_load();
    Ok(BlockDual { cost, psi, lambda, alpha, tentative })
}

fn solve_primal(problem: &BlockProblem) -> Result<BlockSolution> {
    let n = problem.n();
    let kk = problem.k();
    let kf = kk as f64;
    let r = problem.rates;
    let mut lp = LinearModel::new();
    lp.method = lp_method(problem);
    let t: Vec<_> = (0..n)
        .map(|i| lp.continuous(format!("t_{i}"), 0.0, f64::INFINITY, -r.waiting))
        .collect();
    for k in 0..kk {
        let s: Vec<_> = (0..n)
            .map(|i| lp.continuous(format!("s_{i}_{k}"), 0.0, f64::INFINITY, r.waiting / kf))
            .collect();
        let l = lp.continuous(format!("L_{k}"), f64::NEG_INFINITY, f64::INFINITY, r.idle / kf);
        let o = lp.continuous(format!("O_{k}"), 0.0, f64::INFINITY, r.overtime / kf);
        for i in 0..n {
            lp.add_constraint(format!("tent_{i}_{k}"), vec![(s[i], 1.0), (t[i], -1.0)], Cmp::Ge, 0.0);
            if i > 0 {
                lp.add_constraint(
                    format!("prec_{i}_{k}"),
                    vec![(s[i], 1.0), (s[i - 1], -1.0)],
                    Cmp::Ge,
                    problem.durations[i - 1][k],
                );
            }
        }
        lp.add_constraint(format!("load_{k}"), vec![(l, 1.0), (s[n - 1], -1.0)], Cmp::Eq, problem.durations[n - 1][k]);
        lp.add_constraint(format!("over_{k}"), vec![(o, 1.0), (l, -1.0)], Cmp::Ge, -problem.regular_time);
    }
    lp.obj_offset = -r.idle * problem.mean_load();
    let res = solver::solve(&lp);
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!("block LP ended with {:?}: {}", res.status, res.message)));
    }
    let tentative = tidy_tentative(t.iter().map(|v| res.value(*v)), r.waiting);
    Ok(BlockSolution { tentative, cost: res.objective })
}

/// Lognormal variance order, ties by position.
pub fn svf_order(mu_sigma: &[(f64, f64)]) -> Vec<usize> {
    let var: Vec<f64> = mu_sigma.iter().map(|(m, s)| crate::model::ln_var(*m, *s)).collect();
    let mut idx: Vec<usize> = (0..mu_sigma.len()).collect();
    idx.sort_by(|a, b| var[*a].total_cmp(&var[*b]).then(a.cmp(b)));
    idx
}

/// Exhaustively finds the processing order with the lowest LP cost.
pub fn best_order_oracle(problem: &BlockProblem) -> Result<(Vec<usize>, f64)> {
    let n = problem.n();
    if n > ORACLE_MAX {
        return Err(Error::Domain(format!("ordering oracle refuses {n} > {ORACLE_MAX} patients")));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for perm in (0..n).permutations(n) {
        let cost = solve_block_lp(&problem.permuted(&perm))?.cost;
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((perm, cost));
        }
    }
    Ok(best.unwrap_or((Vec::new(), 0.0)))
}
