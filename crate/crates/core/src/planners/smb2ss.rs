use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    check_solution, dummy_emergency_durations, tentative_from_lp, Assignment, PartReport, PlannerConfig,
    MIN_DUMMY_MINUTES,
};
use crate::model::{BlockId, BlockRef, Instance, PatientId, Plan, Scenario};
use crate::solver::{self, Cmp, LinearModel, Var};
use crate::surrogate::SurrogateSet;
use crate::Result;

/// Assigns patients by minimizing assignment cost plus the surrogate
/// second-stage cost of each block's expected load, with `n_e` dummy
/// emergencies per day spread over that day's blocks. Tentative times come
/// from the block LP on `scenarios`.
pub fn plan_smb2ss(
    instance: &Instance,
    surrogates: &SurrogateSet,
    config: &PlannerConfig,
    scenarios: &[Scenario],
) -> Result<(Plan, Vec<PartReport>)> {
    let dummies: Vec<f64> =
        dummy_emergency_durations(instance.emergencies.rate, instance.emergencies.marginal_mean, config.n_e)
            .into_iter()
            .filter(|l| *l >= MIN_DUMMY_MINUTES)
            .collect();
    let active = instance.active_specialties();
    let groups: Vec<Vec<String>> = if !dummies.is_empty() || config.force_joint {
        vec![active]
    } else {
        active.into_iter().map(|s| vec![s]).collect()
    };
    let solved = groups
        .par_iter()
        .map(|g| solve_group(instance, surrogates, config, g, &dummies))
        .collect::<Result<Vec<_>>>()?;
    let mut assignment = BTreeMap::new();
    let mut parts = Vec::with_capacity(solved.len());
    for (a, part) in solved {
        assignment.extend(a);
        parts.push(part);
    }
    let tentative = tentative_from_lp(instance, &assignment, scenarios)?;
    Ok((Plan { assignment, tentative }, parts))
}

fn solve_group(
    instance: &Instance,
    surrogates: &SurrogateSet,
    config: &PlannerConfig,
    group: &[String],
    dummies: &[f64],
) -> Result<(BTreeMap<PatientId, BlockRef>, PartReport)> {
    let mut lp = LinearModel::new();
    lp.time_limit = Some(config.time_limit());
    lp.mip_gap = Some(config.mip_gap);
    let mut loads: BTreeMap<BlockId, Vec<(Var, f64)>> = BTreeMap::new();
    let mut assigns = Vec::with_capacity(group.len());
    for s in group {
        let a = Assignment::build(&mut lp, instance, s);
        if !a.patients.is_empty() || !dummies.is_empty() {
            for b in &a.blocks {
                loads.insert(*b, Vec::new());
            }
        }
        for (i, p) in a.patients.iter().enumerate() {
            let e = instance.patient(*p).expected_duration();
            for (bi, b) in a.blocks.iter().enumerate() {
                loads.get_mut(b).expect("block registered").push((a.x[i][bi], e));
            }
        }
        assigns.push(a);
    }
    if !dummies.is_empty() {
        for d in &instance.horizon {
            let blocks: Vec<BlockId> = instance.blocks_on(*d).into_iter().filter(|b| loads.contains_key(b)).collect();
            if blocks.is_empty() {
                continue;
            }
            for (j, l) in dummies.iter().enumerate() {
                let z: Vec<Var> = blocks.iter().map(|b| lp.binary(format!("z_{d}_{j}_{b}"), 0.0)).collect();
                lp.add_constraint(format!("dummy_{d}_{j}"), z.iter().map(|v| (*v, 1.0)).collect(), Cmp::Eq, 1.0);
                for (b, v) in blocks.iter().zip(z) {
                    loads.get_mut(b).expect("block registered").push((v, *l));
                }
            }
        }
    }
    for (b, terms) in &loads {
        let model = surrogates.get(&instance.block(*b).specialty)?;
        let y = lp.continuous(format!("y_{b}"), 0.0, f64::INFINITY, 1.0);
        for (r, piece) in model.pieces.iter().enumerate() {
            let mut row = vec![(y, 1.0)];
            row.extend(terms.iter().map(|(v, e)| (*v, -piece.slope * e)));
            lp.add_constraint(format!("piece_{b}_{r}"), row, Cmp::Ge, piece.intercept);
        }
    }
    if lp.vars.is_empty() {
        return Ok((BTreeMap::new(), PartReport::trivial(group.to_vec(), 0.0)));
    }
    lp.dump(config.dump_models.as_deref(), &format!("smb2ss-{}", group.join("-")))?;
    let res = solver::solve(&lp);
    check_solution(&res, "surrogate model")?;
    let mut assignment = BTreeMap::new();
    for a in &assigns {
        assignment.extend(a.read(&res.primal));
    }
    Ok((assignment, PartReport::from_solve(group.to_vec(), &res)))
}
