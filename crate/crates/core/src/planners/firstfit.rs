use std::collections::BTreeMap;

use super::{quantile_durations, tentative_cumulative, PartReport, PlannerConfig};
use crate::model::{BlockRef, Instance, PatientId, Plan};
use crate::Result;

/// Patients of `specialty` by nonincreasing regret per planned minute,
/// where regret is the gap between the two cheapest options. Ties by id.
pub fn firstfit_order(instance: &Instance, specialty: &str, d: &[f64]) -> Vec<PatientId> {
    let ratio = |p: PatientId| {
        let row = &instance.costs.assign[&p];
        let mut costs: Vec<f64> = row.blocks.values().copied().chain([row.postpone]).collect();
        costs.sort_by(f64::total_cmp);
        let regret = if costs.len() >= 2 { costs[1] - costs[0] } else { 0.0 };
        regret / d[p as usize]
    };
    let mut order = instance.patients_of(specialty);
    order.sort_by(|a, b| ratio(*b).total_cmp(&ratio(*a)).then(a.cmp(b)));
    order
}

/// Inserts patients in regret order into the first block, by day then id,
/// whose planned load stays within regular time; the rest are postponed.
pub fn plan_firstfit(instance: &Instance, config: &PlannerConfig) -> Result<(Plan, Vec<PartReport>)> {
    let d = quantile_durations(instance, config.quantile)?;
    let mut assignment = BTreeMap::new();
    let mut reports = Vec::new();
    for s in instance.active_specialties() {
        let blocks = instance.blocks_of(&s);
        let mut load = vec![0.0; blocks.len()];
        let mut objective = 0.0;
        for p in firstfit_order(instance, &s, &d) {
            let dp = d[p as usize];
            let slot = (0..blocks.len()).find(|k| load[*k] + dp <= instance.block(blocks[*k]).regular_time);
            let target = match slot {
                Some(k) => {
                    load[k] += dp;
                    BlockRef::Block(blocks[k])
                }
                None => BlockRef::Dummy,
            };
            objective += instance.costs.assign_cost(p, target).expect("priced option");
            assignment.insert(p, target);
        }
        reports.push(PartReport::trivial(vec![s], objective));
    }
    let tentative = tentative_cumulative(instance, &assignment, |p| d[p as usize]);
    Ok((Plan { assignment, tentative }, reports))
}
