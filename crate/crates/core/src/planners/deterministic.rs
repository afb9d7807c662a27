use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{check_solution, quantile_durations, tentative_cumulative, Assignment, PartReport, PlannerConfig};
use crate::model::{Instance, Plan};
use crate::solver::{self, Cmp, LinearModel};
use crate::Result;

/// Replaces every duration by its `config.quantile` quantile and minimizes
/// assignment plus overtime cost; tentative times are running sums of the
/// quantiles.
pub fn plan_deterministic(instance: &Instance, config: &PlannerConfig) -> Result<(Plan, Vec<PartReport>)> {
    let d = quantile_durations(instance, config.quantile)?;
    let parts = instance
        .active_specialties()
        .par_iter()
        .map(|s| {
            let mut lp = LinearModel::new();
            lp.time_limit = Some(config.time_limit());
            lp.mip_gap = Some(config.mip_gap);
            let a = Assignment::build(&mut lp, instance, s);
            if a.patients.is_empty() {
                return Ok((BTreeMap::new(), PartReport::trivial(vec![s.clone()], 0.0)));
            }
            for (bi, b) in a.blocks.iter().enumerate() {
                let y = lp.continuous(format!("y_{b}"), 0.0, f64::INFINITY, instance.costs.overtime);
                let mut row = vec![(y, 1.0)];
                row.extend(a.patients.iter().enumerate().map(|(i, p)| (a.x[i][bi], -d[*p as usize])));
                lp.add_constraint(format!("over_{b}"), row, Cmp::Ge, -instance.block(*b).regular_time);
            }
            lp.dump(config.dump_models.as_deref(), &format!("det-{s}"))?;
            let res = solver::solve(&lp);
            check_solution(&res, "deterministic model")?;
            Ok((a.read(&res.primal), PartReport::from_solve(vec![s.clone()], &res)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut assignment = BTreeMap::new();
    let mut reports = Vec::new();
    for (a, r) in parts {
        assignment.extend(a);
        reports.push(r);
    }
    let tentative = tentative_cumulative(instance, &assignment, |p| d[p as usize]);
    Ok((Plan { assignment, tentative }, reports))
}
