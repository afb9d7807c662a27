//! Random benchmark instances and scenario sets.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{
    AssignRow, Block, CostParams, ElectivePatient, EmergencyCase, EmergencyParams, Instance,
    Rates, Scenario, Specialty,
};
use crate::rng::substream;
use crate::{Error, Result};

pub const REGULAR_TIME: f64 = 480.0;
pub const MIGRATION_COST: f64 = 120.0;
pub const EMERGENCY_MEAN: f64 = 90.0;
pub const EMERGENCY_SD: f64 = 70.0;
pub const DEFAULT_CV_REDUCTION: f64 = 0.5;
pub const DEFAULT_DELTA_NOISE_SD: f64 = 0.15;

pub const DAY_NAMES: [&str; 5] = ["Mon", "Tue", "Wed", "Thu", "Fri"];

/// (code, mean minutes, sd minutes, share of the patient mix in percent).
const SPECIALTY_TABLE: [(&str, f64, f64, u32); 6] = [
    ("CARD", 99.0, 53.0, 14),
    ("GASTRO", 132.0, 76.0, 18),
    ("GYN", 78.0, 52.0, 28),
    ("MED", 75.0, 72.0, 5),
    ("ORTH", 142.0, 58.0, 17),
    ("URO", 72.0, 38.0, 18),
];

/// Weekly room plan, one row per operating room, Monday to Friday.
const MSS: [[&str; 5]; 10] = [
    ["GASTRO", "GASTRO", "GASTRO", "", ""],
    ["", "", "GASTRO", "GASTRO", "GASTRO"],
    ["CARD", "", "CARD", "", "CARD"],
    ["ORTH", "ORTH", "", "ORTH", "ORTH"],
    ["", "ORTH", "MED", "", ""],
    ["GYN", "GYN", "GYN", "GYN", ""],
    ["", "GYN", "GYN", "GYN", "GYN"],
    ["URO", "URO", "", "URO", "URO"],
    ["CARD", "", "URO", "", "CARD"],
    ["URO", "", "ORTH", "", ""],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostStructure {
    Cs1,
    Cs2,
    Cs3,
    Cs4,
    Cs5,
    Cs6,
}

impl CostStructure {
    pub const ALL: [CostStructure; 6] = [
        CostStructure::Cs1,
        CostStructure::Cs2,
        CostStructure::Cs3,
        CostStructure::Cs4,
        CostStructure::Cs5,
        CostStructure::Cs6,
    ];

    pub fn rates(self) -> Rates {
        let (overtime, waiting, idle) = match self {
            CostStructure::Cs1 => (1.0, 0.0, 0.0),
            CostStructure::Cs2 => (1.0, 1.0, 0.0),
            CostStructure::Cs3 => (1.0, 2.0, 2.0),
            CostStructure::Cs4 => (1.0, 2.0 / 15.0, 2.0 / 3.0),
            CostStructure::Cs5 => (1.0, 2.0 / 3.0, 2.0 / 3.0),
            CostStructure::Cs6 => (1.0, 1.0, 1.0),
        };
        Rates { overtime, waiting, idle }
    }

    pub fn name(self) -> &'static str {
        match self {
            CostStructure::Cs1 => "cs1",
            CostStructure::Cs2 => "cs2",
            CostStructure::Cs3 => "cs3",
            CostStructure::Cs4 => "cs4",
            CostStructure::Cs5 => "cs5",
            CostStructure::Cs6 => "cs6",
        }
    }
}

impl std::str::FromStr for CostStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CostStructure::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown cost structure {s:?}, expected cs1..cs6")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowtimeUnit {
    Day,
    Week,
}

impl FlowtimeUnit {
    pub fn default_w0(self) -> f64 {
        match self {
            FlowtimeUnit::Day => 0.05,
            FlowtimeUnit::Week => 1.0,
        }
    }

    fn max_entry(self) -> u32 {
        match self {
            FlowtimeUnit::Day => 7,
            FlowtimeUnit::Week => 2,
        }
    }

    fn block_time(self, day: u32) -> f64 {
        match self {
            FlowtimeUnit::Day => day as f64,
            FlowtimeUnit::Week => 0.0,
        }
    }
}

impl std::str::FromStr for FlowtimeUnit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "day" => Ok(FlowtimeUnit::Day),
            "week" => Ok(FlowtimeUnit::Week),
            _ => Err(Error::Config(format!("unknown flowtime unit {s:?}, expected day or week"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_patients: u32,
    pub rate: f64,
    pub flowtime_unit: FlowtimeUnit,
    pub cost_structure: CostStructure,
    /// Weight scale; the unit's default when absent.
    pub w0: Option<f64>,
    pub cv_reduction: f64,
    pub delta_noise_sd: f64,
    pub max_emergencies_per_day: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            n_patients: 70,
            rate: 0.0,
            flowtime_unit: FlowtimeUnit::Day,
            cost_structure: CostStructure::Cs3,
            w0: None,
            cv_reduction: DEFAULT_CV_REDUCTION,
            delta_noise_sd: DEFAULT_DELTA_NOISE_SD,
            max_emergencies_per_day: 10,
        }
    }
}

impl GenConfig {
    pub fn w0(&self) -> f64 {
        self.w0.unwrap_or_else(|| self.flowtime_unit.default_w0())
    }

    /// Field-level validation messages; empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_patients == 0 {
            out.push("n_patients: must be positive".to_string());
        }
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            out.push("rate: must be a nonnegative number".to_string());
        }
        if !(self.w0() > 0.0) {
            out.push("w0: must be positive".to_string());
        }
        if !(self.cv_reduction > 0.0 && self.cv_reduction <= 1.0) {
            out.push("cv_reduction: must lie in (0, 1]".to_string());
        }
        if !(self.delta_noise_sd >= 0.0) {
            out.push("delta_noise_sd: must be nonnegative".to_string());
        }
        out
    }
}

pub fn default_specialties() -> Vec<Specialty> {
    SPECIALTY_TABLE
        .iter()
        .map(|(id, m, sd, _)| Specialty {
            id: id.to_string(),
            marginal_mean: *m,
            marginal_var: sd * sd,
        })
        .collect()
}

pub fn specialty_by_code(code: &str) -> Option<Specialty> {
    default_specialties().into_iter().find(|s| s.id == code)
}

/// The weekly master surgery schedule: 32 blocks, ids in (day, room) order.
pub fn default_mss() -> Vec<Block> {
    let mut blocks = Vec::new();
    for day in 0..5u32 {
        for (room, row) in MSS.iter().enumerate() {
            let s = row[day as usize];
            if s.is_empty() {
                continue;
            }
            blocks.push(Block {
                id: blocks.len() as u32,
                room: room as u32 + 1,
                specialty: s.to_string(),
                day,
                regular_time: REGULAR_TIME,
            });
        }
    }
    blocks
}

/// Patients per specialty for a total of `n`, by largest remainder on the fixed mix.
pub fn specialty_counts(n: u32) -> Vec<(String, u32)> {
    let total: u32 = SPECIALTY_TABLE.iter().map(|r| r.3).sum();
    let mut counts: Vec<(usize, u32, u64)> = SPECIALTY_TABLE
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let exact = n as u64 * r.3 as u64;
            (k, (exact / total as u64) as u32, exact % total as u64)
        })
        .collect();
    let assigned: u32 = counts.iter().map(|c| c.1).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|a, b| {
        counts[*b]
            .2
            .cmp(&counts[*a].2)
            .then(SPECIALTY_TABLE[*b].3.cmp(&SPECIALTY_TABLE[*a].3))
            .then(a.cmp(b))
    });
    for k in order.into_iter().take((n - assigned) as usize) {
        counts[k].1 += 1;
    }
    counts.into_iter().map(|(k, c, _)| (SPECIALTY_TABLE[k].0.to_string(), c)).collect()
}

/// Log-scale parameters of the marginal lognormal with mean `m` and variance `v`.
pub fn marginal_lognormal(m: f64, v: f64) -> (f64, f64) {
    let r = 1.0 + v / (m * m);
    ((m / r.sqrt()).ln(), r.ln().sqrt())
}

/// Duration model of one case given its noise factor `delta`.
///
/// Returns `(mu', sigma', sigma)`: the case's log-mean is drawn from
/// N(mu', sigma') and its shape is `sigma`, so that pooled over cases the
/// marginal mean and variance are `m` and `v`.
pub fn lognormal_hyper(m: f64, v: f64, delta: f64, cv_reduction: f64) -> Result<(f64, f64, f64)> {
    if !(v >= 0.0) || !(m > 0.0) {
        return Err(Error::Domain(format!("invalid marginal moments m={m}, v={v}")));
    }
    let cv2 = v / (m * m);
    let shrink = (cv_reduction * delta).powi(2);
    if !(shrink <= 1.0) {
        return Err(Error::Domain(format!("noise factor {delta} leaves no room for case-level spread")));
    }
    let sigma = (shrink * cv2).ln_1p().sqrt();
    let mu_mean = (m / (1.0 + cv2).sqrt()).ln();
    let mu_sd = ((1.0 + cv2) / (1.0 + shrink * cv2)).ln().max(0.0).sqrt();
    Ok((mu_mean, mu_sd, sigma))
}

/// Draws `(mu, sigma)` for one case of a specialty with marginals (`m`, `v`),
/// using the given noise factor.
pub fn derive_patient_lognormal<R: Rng>(
    m: f64,
    v: f64,
    delta: f64,
    cv_reduction: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (mu_mean, mu_sd, sigma) = lognormal_hyper(m, v, delta, cv_reduction)?;
    let mu = Normal::new(mu_mean, mu_sd)
        .map_err(|e| Error::Domain(e.to_string()))?
        .sample(rng);
    Ok((mu, sigma))
}

/// Draws a noise factor and a duration model; factors outside the admissible
/// range are redrawn.
pub fn draw_case_lognormal<R: Rng>(
    m: f64,
    v: f64,
    cv_reduction: f64,
    delta_noise_sd: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let noise = Normal::new(1.0, delta_noise_sd).map_err(|e| Error::Domain(e.to_string()))?;
    let delta = loop {
        let d: f64 = noise.sample(rng);
        if d > 0.0 && cv_reduction * d <= 1.0 {
            break d;
        }
    };
    derive_patient_lognormal(m, v, delta, cv_reduction, rng)
}

/// Quadratic flowtime cost `w (t + e)^2`.
pub fn flowtime_cost(weight: f64, entry: u32, block_time: f64) -> f64 {
    weight * (block_time + entry as f64).powi(2)
}

/// Scheduling costs of every patient in every block of its specialty.
pub fn scheduling_costs(
    patients: &[ElectivePatient],
    blocks: &[Block],
    unit: FlowtimeUnit,
) -> BTreeMap<u32, BTreeMap<u32, f64>> {
    patients
        .iter()
        .map(|p| {
            let row = blocks
                .iter()
                .filter(|b| b.specialty == p.specialty)
                .map(|b| (b.id, flowtime_cost(p.weight, p.entry_time, unit.block_time(b.day))))
                .collect();
            (p.id, row)
        })
        .collect()
}

/// Postponement cost: midpoint between the largest block cost and the
/// cheapest block cost plus the marginal overtime-like cost of the case.
///
/// Returns the cost and whether the bounds were inconsistent and clamped.
pub fn postpone_cost(block_costs: &[f64], rightmost_slope: f64, expected: f64) -> (f64, bool) {
    let hi = block_costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = block_costs.iter().copied().fold(f64::INFINITY, f64::min);
    let upper = lo + rightmost_slope * expected;
    let mid = 0.5 * (hi + upper);
    if hi > upper {
        (upper, true)
    } else {
        (mid, false)
    }
}

/// Generates an instance. `rightmost_slopes` maps each specialty to the
/// steepest slope of its surrogate, used for postponement costs.
pub fn generate(config: &GenConfig, rightmost_slopes: &BTreeMap<String, f64>) -> Result<Instance> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let specialties = default_specialties();
    let blocks = default_mss();
    let mut rng = substream(config.seed, 0);
    let w0 = config.w0();
    let mut patients = Vec::with_capacity(config.n_patients as usize);
    for (code, count) in specialty_counts(config.n_patients) {
        let s = specialties.iter().find(|s| s.id == code).expect("known specialty");
        for _ in 0..count {
            let (mu, sigma) = draw_case_lognormal(
                s.marginal_mean,
                s.marginal_var,
                config.cv_reduction,
                config.delta_noise_sd,
                &mut rng,
            )?;
            let entry_time = rng.gen_range(1..=config.flowtime_unit.max_entry());
            let weight = rng.gen_range(w0..=4.0 * w0);
            patients.push(ElectivePatient {
                id: patients.len() as u32,
                specialty: code.clone(),
                mu,
                sigma,
                entry_time,
                weight,
            });
        }
    }
    let block_costs = scheduling_costs(&patients, &blocks, config.flowtime_unit);
    let mut assign = BTreeMap::new();
    for p in &patients {
        let row = &block_costs[&p.id];
        if row.is_empty() {
            return Err(Error::Config(format!("specialty {} has no blocks", p.specialty)));
        }
        let slope = *rightmost_slopes
            .get(&p.specialty)
            .ok_or_else(|| Error::Config(format!("missing surrogate for {}", p.specialty)))?;
        let costs: Vec<f64> = row.values().copied().collect();
        let (postpone, clamped) = postpone_cost(&costs, slope, p.expected_duration());
        if clamped {
            tracing::warn!(patient = p.id, "postponement cost bounds inconsistent, clamped to upper bound");
        }
        assign.insert(p.id, AssignRow { blocks: row.clone(), postpone });
    }
    let rates = config.cost_structure.rates();
    let instance = Instance {
        seed: config.seed,
        specialties,
        blocks,
        patients,
        costs: CostParams {
            overtime: rates.overtime,
            waiting: rates.waiting,
            idle: rates.idle,
            migration: MIGRATION_COST,
            assign,
        },
        emergencies: EmergencyParams {
            rate: config.rate,
            marginal_mean: EMERGENCY_MEAN,
            marginal_var: EMERGENCY_SD * EMERGENCY_SD,
            max_per_day: config.max_emergencies_per_day,
        },
        horizon: (0..5).collect(),
    };
    instance.validate()?;
    Ok(instance)
}

/// The first `n_patients` patients and first `n_blocks` blocks (by day, id)
/// of one specialty, renumbered densely.
pub fn subinstance(instance: &Instance, specialty: &str, n_patients: usize, n_blocks: usize) -> Result<Instance> {
    let spec = instance
        .specialty(specialty)
        .ok_or_else(|| Error::Config(format!("unknown specialty {specialty}")))?
        .clone();
    let old_blocks: Vec<u32> = instance.blocks_of(specialty).into_iter().take(n_blocks).collect();
    let old_patients: Vec<u32> = instance.patients_of(specialty).into_iter().take(n_patients).collect();
    let blocks: Vec<Block> = old_blocks
        .iter()
        .enumerate()
        .map(|(k, b)| Block { id: k as u32, ..instance.block(*b).clone() })
        .collect();
    let patients: Vec<ElectivePatient> = old_patients
        .iter()
        .enumerate()
        .map(|(k, p)| ElectivePatient { id: k as u32, ..instance.patient(*p).clone() })
        .collect();
    let mut assign = BTreeMap::new();
    for (k, p) in old_patients.iter().enumerate() {
        let row = &instance.costs.assign[p];
        let costs = old_blocks.iter().enumerate().map(|(j, b)| (j as u32, row.blocks[b])).collect();
        assign.insert(k as u32, AssignRow { blocks: costs, postpone: row.postpone });
    }
    let sub = Instance {
        seed: instance.seed,
        specialties: vec![spec],
        blocks,
        patients,
        costs: CostParams { assign, ..instance.costs.clone() },
        emergencies: instance.emergencies.clone(),
        horizon: instance.horizon.clone(),
    };
    sub.validate()?;
    Ok(sub)
}

/// Scenario number `index` of the stream seeded by `seed`.
pub fn sample_scenario(instance: &Instance, seed: u64, index: u64) -> Result<Scenario> {
    let mut rng = substream(seed, index);
    let mut elective_durations = BTreeMap::new();
    for p in &instance.patients {
        let d = LogNormal::new(p.mu, p.sigma).map_err(|e| Error::Domain(e.to_string()))?;
        elective_durations.insert(p.id, d.sample(&mut rng));
    }
    let e = &instance.emergencies;
    let poisson = if e.rate > 0.0 {
        Some(Poisson::new(e.rate).map_err(|err| Error::Domain(err.to_string()))?)
    } else {
        None
    };
    let mut emergency_arrivals = Vec::with_capacity(instance.horizon.len());
    for _ in &instance.horizon {
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut day = Vec::with_capacity(count);
        for _ in 0..count {
            let (mu, sigma) = draw_case_lognormal(
                e.marginal_mean,
                e.marginal_var,
                DEFAULT_CV_REDUCTION,
                DEFAULT_DELTA_NOISE_SD,
                &mut rng,
            )?;
            let d = LogNormal::new(mu, sigma).map_err(|err| Error::Domain(err.to_string()))?;
            day.push(EmergencyCase { mu, sigma, duration: d.sample(&mut rng) });
        }
        emergency_arrivals.push(day);
    }
    Ok(Scenario { elective_durations, emergency_arrivals })
}

/// `count` reproducible scenarios; scenario k depends only on (`seed`, k).
pub fn sample_scenarios(instance: &Instance, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    (0..count as u64)
        .into_par_iter()
        .map(|k| sample_scenario(instance, seed, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_slopes() -> BTreeMap<String, f64> {
        default_specialties().into_iter().map(|s| (s.id, 1.0)).collect()
    }

    #[test]
    fn mss_layout() {
        let mss = default_mss();
        assert_eq!(mss.len(), 32);
        assert!(mss.iter().all(|b| b.regular_time == 480.0));
        let per_day: Vec<usize> = (0..5).map(|d| mss.iter().filter(|b| b.day == d).count()).collect();
        assert_eq!(per_day, vec![7, 6, 8, 5, 6]);
        let or1: Vec<(u32, &str)> = mss
            .iter()
            .filter(|b| b.room == 1)
            .map(|b| (b.day, b.specialty.as_str()))
            .collect();
        assert_eq!(or1, vec![(0, "GASTRO"), (1, "GASTRO"), (2, "GASTRO")]);
        let count = |s: &str| mss.iter().filter(|b| b.specialty == s).count();
        assert_eq!(
            [count("GASTRO"), count("CARD"), count("ORTH"), count("MED"), count("GYN"), count("URO")],
            [6, 5, 6, 1, 8, 6]
        );
        let monday: Vec<&str> =
            mss.iter().filter(|b| b.day == 0).map(|b| b.specialty.as_str()).collect();
        assert_eq!(monday, vec!["GASTRO", "CARD", "ORTH", "GYN", "URO", "CARD", "URO"]);
    }

    #[test]
    fn hyperparameters_match_closed_forms() {
        let (_, _, s) = lognormal_hyper(72.0, 38.0 * 38.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(s, (1444.0 / (4.0 * 72.0 * 72.0) + 1.0f64).ln().sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s, 0.2595, epsilon = 1e-4);
        let (m, sd, _) = lognormal_hyper(99.0, 53.0 * 53.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(m, 4.4690, epsilon = 2e-4);
        assert_relative_eq!(sd, 0.4275, epsilon = 1e-4);
        let (m, sd, s) = lognormal_hyper(80.0, 0.0, 1.3, 0.5).unwrap();
        assert_eq!((sd, s), (0.0, 0.0));
        assert_relative_eq!(m, 80f64.ln(), epsilon = 1e-12);
        assert!(lognormal_hyper(80.0, -1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn flowtime_examples() {
        assert_eq!(flowtime_cost(1.0, 1, 0.0), 1.0);
        assert_eq!(flowtime_cost(2.0, 3, 4.0), 98.0);
    }

    #[test]
    fn postponement_midpoint() {
        assert_eq!(postpone_cost(&[7.0, 7.0], 0.0, 90.0), (7.0, false));
        assert_eq!(postpone_cost(&[10.0, 40.0], 1.0, 100.0), (75.0, false));
        assert_eq!(postpone_cost(&[10.0, 400.0], 1.0, 100.0), (110.0, true));
    }

    #[test]
    fn counts_follow_mix() {
        let c = specialty_counts(100);
        let n: Vec<u32> = c.iter().map(|x| x.1).collect();
        assert_eq!(n, vec![14, 18, 28, 5, 17, 18]);
        for n in [1u32, 7, 70, 140, 200, 333] {
            assert_eq!(specialty_counts(n).iter().map(|x| x.1).sum::<u32>(), n);
        }
    }

    #[test]
    fn week_unit_gives_flat_costs() {
        let cfg = GenConfig { flowtime_unit: FlowtimeUnit::Week, ..Default::default() };
        let inst = generate(&cfg, &flat_slopes()).unwrap();
        for row in inst.costs.assign.values() {
            let v: Vec<f64> = row.blocks.values().copied().collect();
            assert!(v.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn generated_instance_is_consistent() {
        let cfg = GenConfig { seed: 4, n_patients: 70, ..Default::default() };
        let inst = generate(&cfg, &flat_slopes()).unwrap();
        assert_eq!(inst.patients.len(), 70);
        for p in &inst.patients {
            assert!(p.weight >= 0.05 && p.weight <= 0.2);
            assert!((1..=7).contains(&p.entry_time));
            let row = &inst.costs.assign[&p.id];
            let hi = row.blocks.values().copied().fold(f64::MIN, f64::max);
            assert!(hi <= row.postpone);
        }
        let again = generate(&cfg, &flat_slopes()).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn scenarios_reproducible_and_quiet_without_emergencies() {
        let cfg = GenConfig { seed: 9, n_patients: 20, rate: 0.0, ..Default::default() };
        let inst = generate(&cfg, &flat_slopes()).unwrap();
        let a = sample_scenarios(&inst, 30, 77).unwrap();
        let b = sample_scenarios(&inst, 30, 77).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.emergency_arrivals.iter().all(|d| d.is_empty())));
        for s in &a {
            s.check(&inst).unwrap();
        }
    }

    #[test]
    fn poisson_mean_daily_arrivals() {
        let cfg = GenConfig { seed: 3, n_patients: 1, rate: 1.0, ..Default::default() };
        let inst = generate(&cfg, &flat_slopes()).unwrap();
        let sc = sample_scenarios(&inst, 100_000, 5).unwrap();
        let total: usize = sc.iter().flat_map(|s| s.emergency_arrivals.iter()).map(|d| d.len()).sum();
        let mean = total as f64 / (100_000.0 * 5.0);
        assert!((0.99..=1.01).contains(&mean), "mean arrivals {mean}");
    }

    #[test]
    fn elective_sample_mean_matches_lognormal_mean() {
        let cfg = GenConfig { seed: 11, n_patients: 3, ..Default::default() };
        let inst = generate(&cfg, &flat_slopes()).unwrap();
        let sc = sample_scenarios(&inst, 100_000, 6).unwrap();
        for p in &inst.patients {
            let mean: f64 = sc.iter().map(|s| s.elective_durations[&p.id]).sum::<f64>() / 1e5;
            let rel = (mean - p.expected_duration()).abs() / p.expected_duration();
            assert!(rel < 0.01, "patient {} rel error {rel}", p.id);
        }
    }
}
