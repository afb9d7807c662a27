use std::collections::BTreeMap;

use super::{check_solution, duration_matrix, run_parts, Assignment, PartReport, PlannerConfig};
use crate::model::{BlockRef, Instance, Plan, Scenario};
use crate::solver::{self, Cmp, LinearModel};
use crate::stage2::tidy_tentative;
use crate::{Error, Result};

/// Solves the integrated sample-average model per specialty: assignment,
/// tentative times and per-scenario schedules in one MIP, with waiting
/// linearized by big-M. Emergencies are not modeled.
pub fn plan_saa_on(instance: &Instance, config: &PlannerConfig, scenarios: &[Scenario]) -> Result<(Plan, Vec<PartReport>)> {
    if scenarios.is_empty() {
        return Err(Error::Config("the sample-average model needs at least one scenario".into()));
    }
    let tentative = std::sync::Mutex::new(BTreeMap::new());
    let (assignment, parts) = run_parts(instance, |s| {
        let (a, t, r) = solve_specialty(instance, config, scenarios, s)?;
        tentative.lock().expect("no poisoned lock").extend(t);
        Ok((a, r))
    })?;
    let tentative = tentative.into_inner().expect("no poisoned lock");
    Ok((Plan { assignment, tentative }, parts))
}

type Solved = (BTreeMap<u32, BlockRef>, BTreeMap<u32, f64>, PartReport);

fn solve_specialty(instance: &Instance, config: &PlannerConfig, scenarios: &[Scenario], s: &str) -> Result<Solved> {
    let r = instance.rates();
    let kk = scenarios.len();
    let kf = kk as f64;
    let big_m = config.big_m;
    let mut lp = LinearModel::new();
    lp.time_limit = Some(config.time_limit());
    lp.mip_gap = Some(config.mip_gap);
    let a = Assignment::build(&mut lp, instance, s);
    let n = a.patients.len();
    if n == 0 {
        return Ok((BTreeMap::new(), BTreeMap::new(), PartReport::trivial(vec![s.to_string()], 0.0)));
    }
    let p = duration_matrix(&a.patients, scenarios)?;
    let mut t = vec![Vec::with_capacity(a.blocks.len()); n];
    for (bi, b) in a.blocks.iter().enumerate() {
        let reg = instance.block(*b).regular_time;
        for i in 0..n {
            lp.add_obj(a.x[i][bi], -r.idle * p[i].iter().sum::<f64>() / kf);
            t[i].push(lp.continuous(format!("t_{}_{b}", a.patients[i]), 0.0, f64::INFINITY, 0.0));
        }
        for k in 0..kk {
            let mut prev: Option<(solver::Var, usize)> = None;
            for i in 0..n {
                let pid = a.patients[i];
                let s_ik = lp.continuous(format!("s_{pid}_{b}_{k}"), 0.0, f64::INFINITY, 0.0);
                let d_ik = lp.continuous(format!("w_{pid}_{b}_{k}"), 0.0, f64::INFINITY, r.waiting / kf);
                lp.add_constraint(format!("tent_{pid}_{b}_{k}"), vec![(s_ik, 1.0), (t[i][bi], -1.0)], Cmp::Ge, 0.0);
                if let Some((s_prev, j)) = prev {
                    lp.add_constraint(
                        format!("prec_{pid}_{b}_{k}"),
                        vec![(s_ik, 1.0), (s_prev, -1.0), (a.x[j][bi], -p[j][k])],
                        Cmp::Ge,
                        0.0,
                    );
                }
                lp.add_constraint(
                    format!("wait_{pid}_{b}_{k}"),
                    vec![(d_ik, 1.0), (s_ik, -1.0), (t[i][bi], 1.0), (a.x[i][bi], -big_m)],
                    Cmp::Ge,
                    -big_m,
                );
                prev = Some((s_ik, i));
            }
            let (s_last, last) = prev.expect("nonempty specialty");
            let l = lp.continuous(format!("L_{b}_{k}"), 0.0, f64::INFINITY, r.idle / kf);
            let o = lp.continuous(format!("O_{b}_{k}"), 0.0, f64::INFINITY, r.overtime / kf);
            lp.add_constraint(
                format!("load_{b}_{k}"),
                vec![(l, 1.0), (s_last, -1.0), (a.x[last][bi], -p[last][k])],
                Cmp::Ge,
                0.0,
            );
            lp.add_constraint(format!("over_{b}_{k}"), vec![(o, 1.0), (l, -1.0)], Cmp::Ge, -reg);
        }
    }
    lp.dump(config.dump_models.as_deref(), &format!("saa-{s}"))?;
    let res = solver::solve(&lp);
    check_solution(&res, "sample-average model")?;
    let assignment = a.read(&res.primal);
    let mut tentative = BTreeMap::new();
    for (bi, b) in a.blocks.iter().enumerate() {
        let members: Vec<usize> = (0..n).filter(|i| assignment[&a.patients[*i]] == BlockRef::Block(*b)).collect();
        let times = tidy_tentative(members.iter().map(|i| res.value(t[*i][bi])), r.waiting);
        tentative.extend(members.iter().map(|i| a.patients[*i]).zip(times));
    }
    Ok((assignment, tentative, PartReport::from_solve(vec![s.to_string()], &res)))
}
