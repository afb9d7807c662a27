#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use orplan_core::instgen::{generate, sample_scenarios, subinstance, CostStructure, GenConfig};
use orplan_core::model::{
    AssignRow, Block, CostParams, ElectivePatient, EmergencyCase, EmergencyParams, Instance, Rates, Scenario, Specialty,
};
use orplan_core::stage2::{solve_block_lp_with, BlockProblem, Formulation};
use orplan_core::surrogate::{SurrogateParams, SurrogateSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TINY_SPECIALTIES: [&str; 5] = ["CARD", "GASTRO", "GYN", "ORTH", "URO"];

pub struct Tiny {
    pub instance: Instance,
    pub scenarios: Vec<Scenario>,
    pub cost_structure: CostStructure,
}

/// One specialty, two blocks, at most eight patients, no emergencies.
pub fn tiny_case(seed: u64, k: usize) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cost_structure = CostStructure::ALL[rng.gen_range(0..6)];
    let specialty = TINY_SPECIALTIES[rng.gen_range(0..TINY_SPECIALTIES.len())];
    let n = rng.gen_range(3..=8);
    let slopes: BTreeMap<String, f64> =
        TINY_SPECIALTIES.iter().chain(&["MED"]).map(|s| (s.to_string(), 1.0)).collect();
    let config = GenConfig { seed, n_patients: 140, cost_structure, ..GenConfig::default() };
    let full = generate(&config, &slopes).unwrap();
    let instance = subinstance(&full, specialty, n, 2).unwrap();
    let scenarios = sample_scenarios(&instance, k, seed + 7).unwrap();
    Tiny { instance, scenarios, cost_structure }
}

/// Small surrogate set for the tiny instance's specialty.
pub fn tiny_surrogates(t: &Tiny) -> SurrogateSet {
    let params = SurrogateParams { n: 60, k: 40, ..SurrogateParams::default() };
    SurrogateSet::build(&t.instance.specialties, t.instance.rates(), &params).unwrap()
}

/// Every assignment of the patients to the blocks or postponement, in
/// base-(blocks+1) counting order; `None` is postponement.
pub fn assignments(n: usize, blocks: usize) -> impl Iterator<Item = Vec<Option<usize>>> {
    let base = blocks + 1;
    let total = base.pow(n as u32);
    (0..total).map(move |mut code| {
        (0..n)
            .map(|_| {
                let d = code % base;
                code /= base;
                (d < blocks).then_some(d)
            })
            .collect()
    })
}

fn block_cost(instance: &Instance, scenarios: &[Scenario], block: u32, members: &[u32]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let order = instance.svf(members);
    let problem = BlockProblem::from_instance(instance, &order, scenarios, instance.block(block).regular_time).unwrap();
    solve_block_lp_with(&problem, Formulation::Primal).unwrap().cost
}

fn assignment_cost(instance: &Instance, choice: &[Option<usize>], blocks: &[u32]) -> f64 {
    choice
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let row = &instance.costs.assign[&(i as u32)];
            c.map_or(row.postpone, |b| row.blocks[&blocks[b]])
        })
        .sum()
}

fn members(choice: &[Option<usize>], b: usize) -> Vec<u32> {
    (0..choice.len()).filter(|i| choice[*i] == Some(b)).map(|i| i as u32).collect()
}

/// Exhaustive optimum of assignment cost plus the block LP cost of every block.
pub fn enumerate_saa(instance: &Instance, scenarios: &[Scenario]) -> f64 {
    let blocks: Vec<u32> = instance.blocks.iter().map(|b| b.id).collect();
    let mut memo: HashMap<(u32, Vec<u32>), f64> = HashMap::new();
    let mut best = f64::INFINITY;
    for choice in assignments(instance.patients.len(), blocks.len()) {
        let mut total = assignment_cost(instance, &choice, &blocks);
        for (bi, b) in blocks.iter().enumerate() {
            let m = members(&choice, bi);
            total += *memo.entry((*b, m.clone())).or_insert_with(|| block_cost(instance, scenarios, *b, &m));
        }
        best = best.min(total);
    }
    best
}

/// Exhaustive optimum of assignment cost plus the clipped surrogate of each block's expected load.
pub fn enumerate_surrogate(instance: &Instance, surrogates: &SurrogateSet) -> f64 {
    let blocks: Vec<u32> = instance.blocks.iter().map(|b| b.id).collect();
    let mut best = f64::INFINITY;
    for choice in assignments(instance.patients.len(), blocks.len()) {
        let mut total = assignment_cost(instance, &choice, &blocks);
        for (bi, b) in blocks.iter().enumerate() {
            let load: f64 = members(&choice, bi).iter().map(|p| instance.patient(*p).expected_duration()).sum();
            let f = surrogates.get(&instance.block(*b).specialty).unwrap();
            let y = f.pieces.iter().map(|p| p.slope * load + p.intercept).fold(0.0, f64::max);
            total += y;
        }
        best = best.min(total);
    }
    best
}

/// Single-specialty instance with `blocks[b] = (day, regular time)` and
/// `patients[i] = (mu, sigma)`; `costs[i]` holds one cost per block and the
/// postponement cost.
pub fn hand_instance(blocks: &[(u32, f64)], patients: &[(f64, f64)], costs: &[(Vec<f64>, f64)], rates: Rates) -> Instance {
    let specialty = Specialty { id: "GYN".into(), marginal_mean: 78.0, marginal_var: 52.0 * 52.0 };
    let mut horizon: Vec<u32> = blocks.iter().map(|b| b.0).collect();
    horizon.sort_unstable();
    horizon.dedup();
    let blocks: Vec<Block> = blocks
        .iter()
        .enumerate()
        .map(|(k, (day, t))| Block { id: k as u32, room: k as u32, specialty: "GYN".into(), day: *day, regular_time: *t })
        .collect();
    let patients_v: Vec<ElectivePatient> = patients
        .iter()
        .enumerate()
        .map(|(i, (mu, sigma))| ElectivePatient {
            id: i as u32,
            specialty: "GYN".into(),
            mu: *mu,
            sigma: *sigma,
            entry_time: 0,
            weight: 1.0,
        })
        .collect();
    let assign = costs
        .iter()
        .enumerate()
        .map(|(i, (per_block, postpone))| {
            let row = AssignRow {
                blocks: per_block.iter().enumerate().map(|(b, c)| (b as u32, *c)).collect(),
                postpone: *postpone,
            };
            (i as u32, row)
        })
        .collect();
    let instance = Instance {
        seed: 1,
        specialties: vec![specialty],
        blocks,
        patients: patients_v,
        costs: CostParams {
            overtime: rates.overtime,
            waiting: rates.waiting,
            idle: rates.idle,
            migration: 120.0,
            assign,
        },
        emergencies: EmergencyParams { rate: 0.0, marginal_mean: 90.0, marginal_var: 4900.0, max_per_day: 10 },
        horizon,
    };
    instance.validate().unwrap();
    instance
}

/// Patient with a fixed duration.
pub fn fixed(minutes: f64) -> (f64, f64) {
    (minutes.ln(), 0.0)
}

/// Scenario with the given elective durations and per-day emergencies.
pub fn scenario(durations: &[f64], emergencies: Vec<Vec<EmergencyCase>>) -> Scenario {
    Scenario {
        elective_durations: durations.iter().enumerate().map(|(i, d)| (i as u32, *d)).collect(),
        emergency_arrivals: emergencies,
    }
}

/// Emergency with a fixed duration.
pub fn emergency(minutes: f64) -> EmergencyCase {
    EmergencyCase { mu: minutes.ln(), sigma: 0.0, duration: minutes }
}

pub fn rates(overtime: f64, waiting: f64, idle: f64) -> Rates {
    Rates { overtime, waiting, idle }
}
