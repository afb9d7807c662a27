mod common;

use std::collections::BTreeMap;

use approx::assert_relative_eq;
use common::*;
use orplan_core::evalmc::*;
use orplan_core::instgen::{default_specialties, generate, specialty_by_code, CostStructure, GenConfig};
use orplan_core::model::{BlockRef, Case, Operation, Plan, SimulationOutcome};
use orplan_core::planners::{plan, Method, PlannerConfig};
use orplan_core::simpolicy::{simulate, PolicyParams};

fn two_patient_outcome() -> (orplan_core::model::Instance, SimulationOutcome) {
    let inst = hand_instance(&[(0, 120.0)], &[fixed(100.0), fixed(50.0)], &vec![(vec![0.0], 300.0); 2], CostStructure::Cs6.rates());
    let outcome = SimulationOutcome {
        final_block: BTreeMap::from([(0, BlockRef::Block(0)), (1, BlockRef::Block(0))]),
        final_tentative: BTreeMap::from([(0, 0.0), (1, 90.0)]),
        start: BTreeMap::from([(0, 0.0), (1, 100.0)]),
        migrations: BTreeMap::new(),
        load: BTreeMap::from([(0, 150.0)]),
        operations: vec![
            Operation { block: 0, case: Case::Elective { patient: 0 }, start: 0.0, duration: 100.0 },
            Operation { block: 0, case: Case::Elective { patient: 1 }, start: 100.0, duration: 50.0 },
        ],
        ..SimulationOutcome::default()
    };
    (inst, outcome)
}

#[test]
fn hand_built_outcome_costs() {
    let (inst, outcome) = two_patient_outcome();
    let c = total_cost(&inst, &outcome).unwrap();
    assert_relative_eq!(c.waiting, 10.0);
    assert_relative_eq!(c.idle, 0.0);
    assert_relative_eq!(c.overtime, 30.0);
    assert_relative_eq!(c.scheduling, 0.0);
    assert_relative_eq!(c.total, 40.0);
}

#[test]
fn all_postponed_costs_the_postponements() {
    let inst = hand_instance(&[(0, 480.0)], &[fixed(100.0), fixed(50.0)], &[(vec![0.0], 300.0), (vec![0.0], 250.0)], CostStructure::Cs3.rates());
    let outcome = SimulationOutcome {
        final_block: BTreeMap::from([(0, BlockRef::Dummy), (1, BlockRef::Dummy)]),
        ..SimulationOutcome::default()
    };
    assert_relative_eq!(total_cost(&inst, &outcome).unwrap().total, 550.0);
}

#[test]
fn cancellation_costs_migration_plus_postponement() {
    let (inst, kept) = two_patient_outcome();
    let mut canceled = kept.clone();
    canceled.final_block.insert(1, BlockRef::Dummy);
    canceled.final_tentative.remove(&1);
    canceled.start.remove(&1);
    canceled.operations.pop();
    canceled.load.insert(0, 100.0);
    canceled.migrations.insert(1, 1);
    let a = total_cost(&inst, &kept).unwrap();
    let b = total_cost(&inst, &canceled).unwrap();
    let first_stage = (b.scheduling + b.migration) - (a.scheduling + a.migration);
    assert_relative_eq!(first_stage, inst.costs.migration + 300.0 - 0.0);
}

#[test]
fn inconsistent_outcomes_are_rejected() {
    let (inst, outcome) = two_patient_outcome();
    let mut missing = outcome.clone();
    missing.final_block.remove(&1);
    assert!(total_cost(&inst, &missing).is_err());
    let mut early = outcome.clone();
    early.final_tentative.insert(1, 120.0);
    assert!(total_cost(&inst, &early).is_err());
    let mut wrong_load = outcome.clone();
    wrong_load.load.insert(0, 140.0);
    assert!(total_cost(&inst, &wrong_load).is_err());
    let mut ghost = outcome;
    ghost.final_block.insert(1, BlockRef::Dummy);
    assert!(total_cost(&inst, &ghost).is_err());
}

fn setup(rate: f64, seed: u64) -> (orplan_core::model::Instance, Plan) {
    let slopes: BTreeMap<String, f64> = default_specialties().into_iter().map(|s| (s.id, 1.0)).collect();
    let inst = generate(&GenConfig { seed, n_patients: 40, rate, ..GenConfig::default() }, &slopes).unwrap();
    let out = plan(&inst, None, &PlannerConfig::with_method(Method::Det)).unwrap();
    (inst, out.plan)
}

#[test]
fn recomputed_costs_match_the_simulator() {
    let (inst, plan) = setup(3.0, 6);
    for s in validation_scenarios(&inst, 30).unwrap() {
        let out = simulate(&inst, &plan, &s, &PolicyParams { delta: 60.0, alpha: 0.8 }).unwrap();
        let c = total_cost(&inst, &out).unwrap();
        let d = out.cost_breakdown;
        for (x, y) in [(c.scheduling, d.scheduling), (c.waiting, d.waiting), (c.idle, d.idle), (c.overtime, d.overtime), (c.migration, d.migration), (c.total, d.total)] {
            assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{c:?} vs {d:?}");
        }
    }
}

#[test]
fn report_aggregates_consistently() {
    let (inst, plan) = setup(2.0, 9);
    let scenarios = validation_scenarios(&inst, 40).unwrap();
    let report = evaluate_plan(&inst, &plan, &scenarios, &PolicyParams::default()).unwrap();
    let mean = report.scenarios.iter().map(|r| r.cost.total).sum::<f64>() / 40.0;
    assert!((report.total.mean - mean).abs() <= 1e-9 * mean);
    assert!((report.mean.total - mean).abs() <= 1e-9 * mean);
    for r in &report.scenarios {
        let c = r.cost;
        assert!((c.scheduling + c.waiting + c.idle + c.overtime + c.migration - c.total).abs() <= 1e-6);
        let s = r.status;
        assert_eq!(s.scheduled + s.postponed, inst.patients.len() as u64);
        assert_eq!(s.as_planned + s.rescheduled + s.canceled, s.scheduled);
    }
    assert!(report.total.min <= report.total.median && report.total.median <= report.total.max);

    let again = evaluate_plan(&inst, &plan, &scenarios, &PolicyParams::default()).unwrap();
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());

    let mut reversed = scenarios.clone();
    reversed.reverse();
    let flipped = evaluate_plan(&inst, &plan, &reversed, &PolicyParams::default()).unwrap();
    assert!((flipped.total.mean - report.total.mean).abs() <= 1e-9 * report.total.mean);
    assert_eq!(flipped.total.median, report.total.median);
}

#[test]
fn deterministic_scenarios_have_no_spread() {
    let (mut inst, _) = setup(0.0, 3);
    for p in &mut inst.patients {
        p.sigma = 0.0;
    }
    let plan = plan(&inst, None, &PlannerConfig::with_method(Method::Firstfit)).unwrap().plan;
    let report = evaluate_plan(&inst, &plan, &validation_scenarios(&inst, 10).unwrap(), &PolicyParams::default()).unwrap();
    assert_eq!(report.total.sd, 0.0);
    assert_eq!(report.total.min, report.total.max);
}

#[test]
fn disabled_migration_fixes_the_first_stage() {
    let (inst, plan) = setup(0.0, 12);
    let report = evaluate_plan(&inst, &plan, &validation_scenarios(&inst, 25).unwrap(), &PolicyParams { delta: 1000.0, alpha: 0.7 }).unwrap();
    let first = report.scenarios[0].cost.scheduling;
    for r in &report.scenarios {
        assert_eq!(r.cost.migration, 0.0);
        assert_eq!(r.cost.scheduling, first);
    }
    assert_eq!(report.status.rescheduled + report.status.canceled, 0);
}

#[test]
fn empty_scenario_set_is_an_error() {
    let (inst, plan) = setup(0.0, 1);
    assert!(evaluate_plan(&inst, &plan, &[], &PolicyParams::default()).is_err());
}

#[test]
fn sample_size_curve_basics() {
    let med = specialty_by_code("MED").unwrap();
    let params = KSensitivityParams { blocks: 2, reference_k: 300, ..KSensitivityParams::default() };
    let points = k_sensitivity(&med, CostStructure::Cs3.rates(), &[10, 300], &params).unwrap();
    assert_eq!(points[1].deviation, 0.0);
    assert!(points[0].deviation > 0.0);
    let mut csv = Vec::new();
    write_k_csv(&points, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("K,deviation,seconds\n10,"));
    assert_eq!(text.lines().count(), 3);
    assert!(k_sensitivity(&med, CostStructure::Cs3.rates(), &[301], &params).is_err());
}

#[test]
fn summary_quantiles_interpolate() {
    let s = Summary::of(&[4.0, 1.0, 3.0, 2.0]);
    assert_eq!(s.median, 2.5);
    assert_eq!(s.min, 1.0);
    assert_eq!(s.max, 4.0);
    assert_relative_eq!(s.p25, 1.75);
    assert_relative_eq!(s.mean, 2.5);
}
