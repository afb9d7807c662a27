//! Declarative linear and mixed-integer models solved by HiGHS.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, RowProblem, Sense};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative MIP gap used when a model does not set one.
pub const DEFAULT_MIP_GAP: f64 = 0.005;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Binary,
    Integer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpMethod {
    #[default]
    Auto,
    Simplex,
    Ipm,
}

#[derive(Clone, Debug)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub obj: f64,
}

#[derive(Clone, Debug)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(Var, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LinearModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub obj_offset: f64,
    pub time_limit: Option<f64>,
    pub mip_gap: Option<f64>,
    pub method: LpMethod,
}

impl LinearModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, kind: VarKind, lower: f64, upper: f64, obj: f64) -> Var {
        let (lower, upper) = match kind {
            VarKind::Binary => (lower.max(0.0), upper.min(1.0)),
            _ => (lower, upper),
        };
        self.vars.push(Variable { name: name.into(), kind, lower, upper, obj });
        Var(self.vars.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64, obj: f64) -> Var {
        self.add_var(name, VarKind::Continuous, lower, upper, obj)
    }

    pub fn binary(&mut self, name: impl Into<String>, obj: f64) -> Var {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, obj)
    }

    pub fn add_obj(&mut self, v: Var, coef: f64) {
        self.vars[v.0].obj += coef;
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(Var, f64)>, cmp: Cmp, rhs: f64) -> usize {
        self.constraints.push(Constraint { name: name.into(), terms, cmp, rhs });
        self.constraints.len() - 1
    }

    pub fn is_mip(&self) -> bool {
        self.vars.iter().any(|v| v.kind != VarKind::Continuous)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.vars {
            if v.lower > v.upper || v.lower.is_nan() || v.upper.is_nan() || !v.obj.is_finite() {
                return Err(Error::Solver(format!("variable {} has invalid bounds or cost", v.name)));
            }
        }
        for c in &self.constraints {
            if c.rhs.is_nan() {
                return Err(Error::Solver(format!("constraint {} has NaN right-hand side", c.name)));
            }
            for (v, a) in &c.terms {
                if v.0 >= self.vars.len() {
                    return Err(Error::Solver(format!("constraint {} references an undeclared variable", c.name)));
                }
                if !a.is_finite() {
                    return Err(Error::Solver(format!("constraint {} has a non-finite coefficient", c.name)));
                }
            }
        }
        Ok(())
    }

    fn row_bounds(c: &Constraint) -> (f64, f64) {
        match c.cmp {
            Cmp::Le => (f64::NEG_INFINITY, c.rhs),
            Cmp::Eq => (c.rhs, c.rhs),
            Cmp::Ge => (c.rhs, f64::INFINITY),
        }
    }

    /// The model in CPLEX LP text format.
    pub fn to_lp_string(&self) -> String {
        let name = |k: usize| sanitize(&self.vars[k].name, 'x', k);
        let mut s = String::from("\\ generated by orplan\nMinimize\n obj:");
        let mut any = false;
        for (k, v) in self.vars.iter().enumerate() {
            if v.obj != 0.0 {
                let _ = write!(s, " {:+} {}", v.obj, name(k));
                any = true;
            }
        }
        if !any {
            s.push_str(" 0");
        }
        if self.obj_offset != 0.0 {
            let _ = write!(s, " {:+}", self.obj_offset);
        }
        s.push_str("\nSubject To\n");
        for (r, c) in self.constraints.iter().enumerate() {
            let _ = write!(s, " {}:", sanitize(&c.name, 'c', r));
            if c.terms.is_empty() {
                s.push_str(" 0");
            }
            for (v, a) in &c.terms {
                let _ = write!(s, " {:+} {}", a, name(v.0));
            }
            let op = match c.cmp {
                Cmp::Le => "<=",
                Cmp::Eq => "=",
                Cmp::Ge => ">=",
            };
            let _ = writeln!(s, " {op} {}", c.rhs);
        }
        s.push_str("Bounds\n");
        for (k, v) in self.vars.iter().enumerate() {
            let lo = if v.lower.is_infinite() { "-inf".to_string() } else { v.lower.to_string() };
            let hi = if v.upper.is_infinite() { "+inf".to_string() } else { v.upper.to_string() };
            let _ = writeln!(s, " {lo} <= {} <= {hi}", name(k));
        }
        let ints: Vec<String> = (0..self.vars.len())
            .filter(|k| self.vars[*k].kind == VarKind::Integer)
            .map(name)
            .collect();
        let bins: Vec<String> = (0..self.vars.len())
            .filter(|k| self.vars[*k].kind == VarKind::Binary)
            .map(name)
            .collect();
        if !ints.is_empty() {
            let _ = writeln!(s, "General\n {}", ints.join(" "));
        }
        if !bins.is_empty() {
            let _ = writeln!(s, "Binary\n {}", bins.join(" "));
        }
        s.push_str("End\n");
        s
    }

    /// Writes the LP text into `dir` as `<stem>.lp` when a dump directory is set.
    pub fn dump(&self, dir: Option<&Path>, stem: &str) -> Result<()> {
        if let Some(dir) = dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(format!("{stem}.lp")), self.to_lp_string())?;
        }
        Ok(())
    }
}

fn sanitize(name: &str, prefix: char, k: usize) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    if clean.is_empty() || clean.starts_with(|c: char| c.is_ascii_digit()) {
        format!("{prefix}{k}_{clean}")
    } else {
        clean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    FeasibleWithGap,
    Infeasible,
    TimeLimit,
    Error,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Row duals, present for pure LPs.
    pub row_duals: Option<Vec<f64>>,
    /// Reduced costs, present for pure LPs.
    pub col_duals: Option<Vec<f64>>,
    pub gap: f64,
    /// Proven lower bound on the optimum; the objective itself for LPs.
    pub bound: f64,
    pub wall_time: f64,
    pub message: String,
}

impl SolveResult {
    fn failed(status: SolveStatus, message: impl Into<String>, wall_time: f64) -> Self {
        SolveResult {
            status,
            objective: f64::NAN,
            primal: Vec::new(),
            row_duals: None,
            col_duals: None,
            gap: f64::INFINITY,
            bound: f64::NEG_INFINITY,
            wall_time,
            message: message.into(),
        }
    }

    pub fn has_solution(&self) -> bool {
        !self.primal.is_empty()
            && matches!(
                self.status,
                SolveStatus::Optimal | SolveStatus::FeasibleWithGap | SolveStatus::TimeLimit
            )
    }

    pub fn value(&self, v: Var) -> f64 {
        self.primal[v.0]
    }

    /// Objective of the dual solution: each row dual times its active bound
    /// plus each reduced cost times its active variable bound.
    pub fn dual_objective(&self, model: &LinearModel) -> Option<f64> {
        let y = self.row_duals.as_ref()?;
        let d = self.col_duals.as_ref()?;
        let mut total = model.obj_offset;
        for (c, yr) in model.constraints.iter().zip(y) {
            let (lo, hi) = LinearModel::row_bounds(c);
            total += active(*yr, lo, hi)?;
        }
        for (v, dc) in model.vars.iter().zip(d) {
            total += active(*dc, v.lower, v.upper)?;
        }
        Some(total)
    }
}

fn active(mult: f64, lo: f64, hi: f64) -> Option<f64> {
    if mult > 0.0 {
        lo.is_finite().then_some(mult * lo).or((mult < 1e-9).then_some(0.0))
    } else if mult < 0.0 {
        hi.is_finite().then_some(mult * hi).or((mult > -1e-9).then_some(0.0))
    } else {
        Some(0.0)
    }
}

fn solver_threads() -> Option<i32> {
    std::env::var("ORPLAN_SOLVER_THREADS").ok()?.parse::<i32>().ok().filter(|t| *t > 0)
}

/// Solves `model` (minimization).
pub fn solve(model: &LinearModel) -> SolveResult {
    let started = Instant::now();
    if let Err(e) = model.validate() {
        return SolveResult::failed(SolveStatus::Error, e.to_string(), 0.0);
    }
    let mip = model.is_mip();
    let mut pb = RowProblem::default();
    let cols: Vec<highs::Col> = model
        .vars
        .iter()
        .map(|v| match v.kind {
            VarKind::Continuous => pb.add_column(v.obj, v.lower..=v.upper),
            VarKind::Binary | VarKind::Integer => pb.add_integer_column(v.obj, v.lower..=v.upper),
        })
        .collect();
    for c in &model.constraints {
        let (lo, hi) = LinearModel::row_bounds(c);
        let terms: Vec<(highs::Col, f64)> = c.terms.iter().map(|(v, a)| (cols[v.0], *a)).collect();
        pb.add_row(lo..=hi, terms);
    }
    let mut hm = match pb.try_optimise(Sense::Minimise) {
        Ok(m) => m,
        Err(e) => {
            return SolveResult::failed(
                SolveStatus::Error,
                format!("engine rejected the model: {e:?}"),
                started.elapsed().as_secs_f64(),
            )
        }
    };
    hm.make_quiet();
    if let Some(t) = model.time_limit {
        let _ = hm.try_set_option("time_limit", t.max(0.0));
    }
    if mip {
        let _ = hm.try_set_option("mip_rel_gap", model.mip_gap.unwrap_or(DEFAULT_MIP_GAP));
    } else {
        let method = match model.method {
            LpMethod::Auto => "choose",
            LpMethod::Simplex => "simplex",
            LpMethod::Ipm => "ipm",
        };
        let _ = hm.try_set_option("solver", method);
    }
    if let Some(t) = solver_threads() {
        let _ = hm.try_set_option("threads", t);
    }
    let solved = match hm.try_solve() {
        Ok(s) => s,
        Err(e) => {
            return SolveResult::failed(
                SolveStatus::Error,
                format!("engine failed: {e:?}"),
                started.elapsed().as_secs_f64(),
            )
        }
    };
    let wall_time = started.elapsed().as_secs_f64();
    let engine_status = solved.status();
    let feasible = solved.primal_solution_status() == HighsSolutionStatus::Feasible;
    let status = match engine_status {
        HighsModelStatus::Optimal => SolveStatus::Optimal,
        HighsModelStatus::ModelEmpty => SolveStatus::Optimal,
        HighsModelStatus::Infeasible => SolveStatus::Infeasible,
        HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
        HighsModelStatus::ReachedIterationLimit
        | HighsModelStatus::ReachedSolutionLimit
        | HighsModelStatus::ReachedInterrupt
        | HighsModelStatus::ReachedMemoryLimit
        | HighsModelStatus::ObjectiveBound
        | HighsModelStatus::ObjectiveTarget
            if feasible =>
        {
            SolveStatus::FeasibleWithGap
        }
        other => {
            return SolveResult::failed(SolveStatus::Error, format!("engine status {other:?}"), wall_time)
        }
    };
    if status == SolveStatus::Infeasible || (!feasible && engine_status != HighsModelStatus::ModelEmpty) {
        let mut r = SolveResult::failed(status, format!("engine status {engine_status:?}"), wall_time);
        if status == SolveStatus::Optimal {
            r.status = SolveStatus::Error;
        }
        return r;
    }
    let sol = solved.get_solution();
    let gap = if mip {
        let g = solved.mip_gap();
        if g.is_finite() { g.max(0.0) } else { f64::INFINITY }
    } else {
        0.0
    };
    let objective = solved.objective_value() + model.obj_offset;
    let bound = if mip {
        solved
            .double_info_value(c"mip_dual_bound")
            .ok()
            .filter(|b| b.is_finite())
            .map_or(f64::NEG_INFINITY, |b| b + model.obj_offset)
            .min(objective)
    } else {
        objective
    };
    let (row_duals, col_duals) = if mip {
        (None, None)
    } else {
        (Some(sol.dual_rows().to_vec()), Some(sol.dual_columns().to_vec()))
    };
    SolveResult {
        status,
        objective,
        primal: sol.columns().to_vec(),
        row_duals,
        col_duals,
        gap,
        bound,
        wall_time,
        message: format!("{engine_status:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_bound() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        m.add_constraint("lb", vec![(x, 1.0)], Cmp::Ge, 3.0);
        let r = solve(&m);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.objective, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.dual_objective(&m).unwrap(), 3.0, epsilon = 1e-9);
    }

    #[test]
    fn binary_cover() {
        let mut m = LinearModel::new();
        let x = m.binary("x", 1.0);
        let y = m.binary("y", 1.0);
        m.add_constraint("cover", vec![(x, 1.0), (y, 1.0)], Cmp::Ge, 2.0);
        let r = solve(&m);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.objective, 2.0, epsilon = 1e-9);
        assert!(r.row_duals.is_none());
    }

    #[test]
    fn infeasible() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", f64::NEG_INFINITY, f64::INFINITY, 1.0);
        m.add_constraint("a", vec![(x, 1.0)], Cmp::Ge, 1.0);
        m.add_constraint("b", vec![(x, 1.0)], Cmp::Le, 0.0);
        assert_eq!(solve(&m).status, SolveStatus::Infeasible);
    }

    #[test]
    fn malformed_model_is_an_error() {
        let mut m = LinearModel::new();
        m.continuous("x", 0.0, 1.0, 1.0);
        m.add_constraint("bad", vec![(Var(5), 1.0)], Cmp::Le, 1.0);
        assert_eq!(solve(&m).status, SolveStatus::Error);
    }

    #[test]
    fn lp_text_mentions_everything() {
        let mut m = LinearModel::new();
        let x = m.continuous("x", 0.0, f64::INFINITY, 2.0);
        let b = m.binary("pick", -1.0);
        m.add_constraint("link", vec![(x, 1.0), (b, -5.0)], Cmp::Le, 0.0);
        let s = m.to_lp_string();
        for needle in ["Minimize", "Subject To", "link:", "Binary", "pick", "End"] {
            assert!(s.contains(needle), "{needle} missing from\n{s}");
        }
    }
}
