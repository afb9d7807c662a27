use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_solution, duration_matrix, run_parts, tentative_from_lp, Assignment, PartReport, PlannerConfig};
use crate::model::{BlockRef, Instance, PatientId, Plan, Scenario};
use crate::rng::substream;
use crate::solver::{self, Cmp, LinearModel, SolveStatus};
use crate::stage2::{block_dual, BlockProblem};
use crate::{Error, Result};

/// How an optimality cut is derived from a block's subproblem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutKind {
    /// Duals of the block LP over the assigned patients only; patients
    /// outside the block get coefficient zero.
    #[default]
    Mapped,
    /// Duals of the block LP over all patients of the specialty with the
    /// assignment in the right-hand side and waiting linearized by big-M.
    /// Valid for every assignment.
    Lifted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BendersIteration {
    pub iteration: usize,
    pub lower_bound: f64,
    pub upper_bound: f64,
    /// Objective of the master incumbent in this iteration.
    pub master_objective: f64,
    /// Proven bound of this master solve.
    pub master_bound: f64,
    pub cuts_added: usize,
    pub elapsed: f64,
}

/// Check of one added cut against its generating assignment and random others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutAudit {
    pub iteration: usize,
    pub block: u32,
    /// Absolute difference between cut and block value at the generating assignment.
    pub tight_error: f64,
    pub probes: usize,
    /// Largest excess of the cut over the block value on a probe; nonpositive when valid.
    pub max_violation: f64,
    /// Relative scale for tolerances: one plus the largest block value seen.
    pub scale: f64,
}

/// `z_b >= sum_i x_ib coef_i + constant`, coefficients by patient position.
#[derive(Clone, Debug)]
struct Cut {
    coef: Vec<f64>,
    constant: f64,
}

impl Cut {
    fn value(&self, members: &[usize]) -> f64 {
        self.constant + members.iter().map(|i| self.coef[*i]).sum::<f64>()
    }
}

/// Benders decomposition per specialty: a master over assignments with
/// optimality cuts from the dual of each block's LP.
pub fn plan_benders_on(
    instance: &Instance,
    config: &PlannerConfig,
    scenarios: &[Scenario],
) -> Result<(Plan, Vec<PartReport>)> {
    if scenarios.is_empty() {
        return Err(Error::Config("decomposition needs at least one scenario".into()));
    }
    let (assignment, parts) = run_parts(instance, |s| solve_specialty(instance, config, scenarios, s))?;
    let tentative = tentative_from_lp(instance, &assignment, scenarios)?;
    Ok((Plan { assignment, tentative }, parts))
}

struct Ctx<'a> {
    instance: &'a Instance,
    patients: Vec<PatientId>,
    blocks: Vec<u32>,
    p: Vec<Vec<f64>>,
    mean_p: Vec<f64>,
}

impl Ctx<'_> {
    /// Block cost plus idle rate times mean assigned duration, with its dual.
    fn psi(&self, block: usize, members: &[usize]) -> Result<crate::stage2::BlockDual> {
        let problem = BlockProblem::new(
            members.iter().map(|i| self.p[*i].clone()).collect(),
            self.instance.block(self.blocks[block]).regular_time,
            self.instance.rates(),
        )?;
        block_dual(&problem)
    }

    fn members(&self, choice: &[usize], block: usize) -> Vec<usize> {
        (0..self.patients.len()).filter(|i| choice[*i] == block).collect()
    }
}

fn solve_specialty(
    instance: &Instance,
    config: &PlannerConfig,
    scenarios: &[Scenario],
    s: &str,
) -> Result<(BTreeMap<PatientId, BlockRef>, PartReport)> {
    let started = Instant::now();
    let r = instance.rates();
    let patients = instance.svf(&instance.patients_of(s));
    let blocks = instance.blocks_of(s);
    if patients.is_empty() {
        return Ok((BTreeMap::new(), PartReport::trivial(vec![s.to_string()], 0.0)));
    }
    let p = duration_matrix(&patients, scenarios)?;
    let kf = scenarios.len() as f64;
    let mean_p: Vec<f64> = p.iter().map(|row| row.iter().sum::<f64>() / kf).collect();
    let ctx = Ctx { instance, patients, blocks, p, mean_p };
    let n = ctx.patients.len();
    let nb = ctx.blocks.len();
    let mut cuts: Vec<Vec<Cut>> = ctx
        .blocks
        .iter()
        .map(|b| {
            let reg = instance.block(*b).regular_time;
            vec![
                Cut { coef: ctx.mean_p.iter().map(|m| r.idle * m).collect(), constant: 0.0 },
                Cut { coef: ctx.mean_p.iter().map(|m| (r.overtime + r.idle) * m).collect(), constant: -r.overtime * reg },
            ]
        })
        .collect();
    let master_gap = config.mip_gap.min(config.epsilon);
    let mut lb = f64::NEG_INFINITY;
    let mut ub = f64::INFINITY;
    let mut incumbent: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let mut audits = Vec::new();
    let mut status = SolveStatus::TimeLimit;
    for iteration in 1..=config.max_iterations {
        let remaining = config.time_limit() - started.elapsed().as_secs_f64();
        if remaining <= 0.0 {
            break;
        }
        let mut lp = LinearModel::new();
        lp.time_limit = Some(remaining);
        lp.mip_gap = Some(master_gap);
        let a = Assignment::build(&mut lp, instance, s);
        debug_assert_eq!(a.patients, ctx.patients);
        let z: Vec<_> = ctx.blocks.iter().map(|b| lp.continuous(format!("z_{b}"), 0.0, f64::INFINITY, 1.0)).collect();
        for bi in 0..nb {
            for i in 0..n {
                lp.add_obj(a.x[i][bi], -r.idle * ctx.mean_p[i]);
            }
            for (c, cut) in cuts[bi].iter().enumerate() {
                let mut row = vec![(z[bi], 1.0)];
                row.extend((0..n).filter(|i| cut.coef[*i] != 0.0).map(|i| (a.x[i][bi], -cut.coef[i])));
                lp.add_constraint(format!("cut_{}_{c}", ctx.blocks[bi]), row, Cmp::Ge, cut.constant);
            }
        }
        if iteration == 1 {
            lp.dump(config.dump_models.as_deref(), &format!("benders-master-{s}"))?;
        }
        let res = solver::solve(&lp);
        if !res.has_solution() {
            if incumbent.is_some() && res.status == SolveStatus::TimeLimit {
                break;
            }
            check_solution(&res, "decomposition master")?;
        }
        lb = lb.max(res.bound);
        let choice: Vec<usize> = (0..n)
            .map(|i| {
                (0..=nb)
                    .max_by(|x, y| res.value(a.x[i][*x]).total_cmp(&res.value(a.x[i][*y])))
                    .expect("nonempty row")
            })
            .collect();
        let duals = (0..nb)
            .into_par_iter()
            .map(|bi| {
                let m = ctx.members(&choice, bi);
                ctx.psi(bi, &m).map(|d| (m, d))
            })
            .collect::<Result<Vec<_>>>()?;
        let first: f64 = (0..n)
            .map(|i| {
                let row = &instance.costs.assign[&ctx.patients[i]];
                match ctx.blocks.get(choice[i]) {
                    Some(b) => row.blocks[b] - r.idle * ctx.mean_p[i],
                    None => row.postpone,
                }
            })
            .sum();
        let candidate = first + duals.iter().map(|(_, d)| d.psi).sum::<f64>();
        if candidate < ub {
            ub = candidate;
            incumbent = Some(choice.clone());
        }
        let mut added = 0;
        for (bi, (members, d)) in duals.iter().enumerate() {
            let zb = res.value(z[bi]);
            if d.psi <= zb + 1e-7 * (1.0 + d.psi.abs()) {
                continue;
            }
            let cut = match config.cut_kind {
                CutKind::Mapped => {
                    let mut coef = vec![0.0; n];
                    for (j, i) in members.iter().enumerate() {
                        coef[*i] = d.lambda[j].iter().zip(&ctx.p[*i]).map(|(l, pk)| l * pk).sum();
                    }
                    let reg = instance.block(ctx.blocks[bi]).regular_time;
                    Cut { coef, constant: -reg * d.alpha.iter().sum::<f64>() }
                }
                CutKind::Lifted => lifted_cut(&ctx, bi, &choice, config.big_m)?,
            };
            if config.audit_probes > 0 {
                audits.push(audit(&ctx, &cut, bi, members, d.psi, iteration, config.audit_probes)?);
            }
            cuts[bi].push(cut);
            added += 1;
        }
        trace.push(BendersIteration {
            iteration,
            lower_bound: lb,
            upper_bound: ub,
            master_objective: res.objective,
            master_bound: res.bound,
            cuts_added: added,
            elapsed: started.elapsed().as_secs_f64(),
        });
        tracing::debug!(specialty = s, iteration, lb, ub, added, "decomposition iteration");
        if relative_gap(lb, ub) <= config.epsilon || added == 0 {
            status = SolveStatus::Optimal;
            break;
        }
    }
    let choice = incumbent.ok_or_else(|| Error::Solver(format!("decomposition found no assignment for {s}")))?;
    if status != SolveStatus::Optimal && started.elapsed().as_secs_f64() < config.time_limit() {
        status = SolveStatus::FeasibleWithGap;
    }
    let assignment = ctx
        .patients
        .iter()
        .zip(&choice)
        .map(|(p, c)| (*p, ctx.blocks.get(*c).map_or(BlockRef::Dummy, |b| BlockRef::Block(*b))))
        .collect();
    let report = PartReport {
        specialties: vec![s.to_string()],
        objective: ub,
        bound: lb,
        gap: relative_gap(lb, ub).max(0.0),
        wall_time: started.elapsed().as_secs_f64(),
        status,
        iterations: trace.len(),
        trace,
        audits,
    };
    Ok((assignment, report))
}

/// Cut from the row duals of the block LP over every patient of the
/// specialty, where `x` only enters right-hand sides: the LP value is convex
/// in them, so the duals give a global underestimator.
fn lifted_cut(ctx: &Ctx, block: usize, choice: &[usize], big_m: f64) -> Result<Cut> {
    let r = ctx.instance.rates();
    let n = ctx.patients.len();
    let kk = ctx.p[0].len();
    let kf = kk as f64;
    let reg = ctx.instance.block(ctx.blocks[block]).regular_time;
    let x: Vec<f64> = choice.iter().map(|c| if *c == block { 1.0 } else { 0.0 }).collect();
    let mut lp = LinearModel::new();
    let t: Vec<_> = (0..n).map(|i| lp.continuous(format!("t_{i}"), 0.0, f64::INFINITY, 0.0)).collect();
    let mut prec = vec![vec![usize::MAX; kk]; n];
    let mut wait = vec![vec![0; kk]; n];
    let mut over = Vec::with_capacity(kk);
    for k in 0..kk {
        let mut prev = None;
        for i in 0..n {
            let s_ik = lp.continuous(format!("s_{i}_{k}"), 0.0, f64::INFINITY, 0.0);
            let w = lp.continuous(format!("w_{i}_{k}"), 0.0, f64::INFINITY, r.waiting / kf);
            lp.add_constraint(format!("tent_{i}_{k}"), vec![(s_ik, 1.0), (t[i], -1.0)], Cmp::Ge, 0.0);
            if let Some(sp) = prev {
                prec[i - 1][k] =
                    lp.add_constraint(format!("prec_{i}_{k}"), vec![(s_ik, 1.0), (sp, -1.0)], Cmp::Ge, ctx.p[i - 1][k] * x[i - 1]);
            }
            wait[i][k] = lp.add_constraint(
                format!("wait_{i}_{k}"),
                vec![(w, 1.0), (s_ik, -1.0), (t[i], 1.0)],
                Cmp::Ge,
                -big_m * (1.0 - x[i]),
            );
            prev = Some(s_ik);
        }
        let l = lp.continuous(format!("L_{k}"), 0.0, f64::INFINITY, r.idle / kf);
        let o = lp.continuous(format!("O_{k}"), 0.0, f64::INFINITY, r.overtime / kf);
        prec[n - 1][k] = lp.add_constraint(
            format!("load_{k}"),
            vec![(l, 1.0), (prev.expect("nonempty specialty"), -1.0)],
            Cmp::Ge,
            ctx.p[n - 1][k] * x[n - 1],
        );
        over.push(lp.add_constraint(format!("over_{k}"), vec![(o, 1.0), (l, -1.0)], Cmp::Ge, -reg));
    }
    let res = solver::solve(&lp);
    if res.status != SolveStatus::Optimal {
        return Err(Error::Solver(format!("lifted block LP ended with {:?}: {}", res.status, res.message)));
    }
    let y = res.row_duals.as_ref().expect("LP duals");
    let mut coef = vec![0.0; n];
    let mut constant = -reg * over.iter().map(|row| y[*row]).sum::<f64>();
    for i in 0..n {
        for k in 0..kk {
            coef[i] += y[prec[i][k]] * ctx.p[i][k] + big_m * y[wait[i][k]];
            constant -= big_m * y[wait[i][k]];
        }
    }
    Ok(Cut { coef, constant })
}

fn relative_gap(lb: f64, ub: f64) -> f64 {
    if !ub.is_finite() || !lb.is_finite() {
        return f64::INFINITY;
    }
    (ub - lb) / ub.abs().max(1e-9)
}

fn audit(
    ctx: &Ctx,
    cut: &Cut,
    block: usize,
    members: &[usize],
    psi: f64,
    iteration: usize,
    probes: usize,
) -> Result<CutAudit> {
    let n = ctx.patients.len();
    let nb = ctx.blocks.len();
    let mut rng = substream(ctx.instance.seed, (iteration * 1000 + block) as u64);
    let mut max_violation = f64::NEG_INFINITY;
    let mut scale = 1.0 + psi.abs();
    for _ in 0..probes {
        let choice: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=nb)).collect();
        let m = ctx.members(&choice, block);
        let value = ctx.psi(block, &m)?.psi;
        scale = scale.max(1.0 + value.abs());
        max_violation = max_violation.max(cut.value(&m) - value);
    }
    Ok(CutAudit {
        iteration,
        block: ctx.blocks[block],
        tight_error: (cut.value(members) - psi).abs(),
        probes,
        max_violation,
        scale,
    })
}
