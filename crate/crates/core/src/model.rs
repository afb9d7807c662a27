//! Domain types shared by every stage of the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

pub type PatientId = u32;
pub type BlockId = u32;

/// A real block or the dummy block collecting postponed and canceled patients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockRef {
    Block(BlockId),
    Dummy,
}

impl BlockRef {
    pub fn block(self) -> Option<BlockId> {
        match self {
            BlockRef::Block(b) => Some(b),
            BlockRef::Dummy => None,
        }
    }

    pub fn is_dummy(self) -> bool {
        self == BlockRef::Dummy
    }
}

impl fmt::Display for BlockRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockRef::Block(b) => write!(f, "{b}"),
            BlockRef::Dummy => f.write_str("dummy"),
        }
    }
}

impl Serialize for BlockRef {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BlockRef::Block(b) => s.serialize_u32(*b),
            BlockRef::Dummy => s.serialize_str("dummy"),
        }
    }
}

impl<'de> Deserialize<'de> for BlockRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Id(u32),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Id(b) => Ok(BlockRef::Block(b)),
            Raw::Tag(t) if t == "dummy" => Ok(BlockRef::Dummy),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!(
                "expected a block id or \"dummy\", got {t:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Specialty {
    pub id: String,
    pub marginal_mean: f64,
    pub marginal_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub room: u32,
    pub specialty: String,
    pub day: u32,
    pub regular_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectivePatient {
    pub id: PatientId,
    pub specialty: String,
    pub mu: f64,
    pub sigma: f64,
    pub entry_time: u32,
    pub weight: f64,
}

impl ElectivePatient {
    pub fn expected_duration(&self) -> f64 {
        ln_mean(self.mu, self.sigma)
    }

    pub fn duration_variance(&self) -> f64 {
        ln_var(self.mu, self.sigma)
    }

    pub fn quantile_duration(&self, q: f64) -> Result<f64> {
        ln_quantile(self.mu, self.sigma, q)
    }
}

/// Mean of LN(mu, sigma).
pub fn ln_mean(mu: f64, sigma: f64) -> f64 {
    (mu + 0.5 * sigma * sigma).exp()
}

/// Variance of LN(mu, sigma).
pub fn ln_var(mu: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2.exp_m1() * (2.0 * mu + s2).exp()
}

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Quantile of LN(mu, sigma) at probability `q`.
pub fn ln_quantile(mu: f64, sigma: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    Ok((mu + sigma * std_normal().inverse_cdf(q)).exp())
}

/// Cost rates per minute of the second-stage terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub overtime: f64,
    pub waiting: f64,
    pub idle: f64,
}

/// Assignment costs of one patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssignRow {
    pub blocks: BTreeMap<BlockId, f64>,
    pub postpone: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub overtime: f64,
    pub waiting: f64,
    pub idle: f64,
    pub migration: f64,
    pub assign: BTreeMap<PatientId, AssignRow>,
}

impl CostParams {
    pub fn rates(&self) -> Rates {
        Rates {
            overtime: self.overtime,
            waiting: self.waiting,
            idle: self.idle,
        }
    }

    /// Assignment cost of `patient` in `block`; `None` if the pair is not allowed.
    pub fn assign_cost(&self, patient: PatientId, block: BlockRef) -> Option<f64> {
        let row = self.assign.get(&patient)?;
        match block {
            BlockRef::Block(b) => row.blocks.get(&b).copied(),
            BlockRef::Dummy => Some(row.postpone),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergencyParams {
    pub rate: f64,
    pub marginal_mean: f64,
    pub marginal_var: f64,
    pub max_per_day: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub seed: u64,
    pub specialties: Vec<Specialty>,
    pub blocks: Vec<Block>,
    pub patients: Vec<ElectivePatient>,
    pub costs: CostParams,
    pub emergencies: EmergencyParams,
    pub horizon: Vec<u32>,
}

impl Instance {
    /// Checks structural consistency. Patient and block ids must be dense
    /// `0..n` so they double as indices.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Mismatch(m));
        for (k, p) in self.patients.iter().enumerate() {
            if p.id as usize != k {
                return bad(format!("patient at position {k} has id {}", p.id));
            }
            if !(p.sigma >= 0.0) || !(p.weight > 0.0) || !p.expected_duration().is_finite() {
                return bad(format!("patient {} has an invalid duration model", p.id));
            }
            if self.specialty(&p.specialty).is_none() {
                return bad(format!("patient {} has unknown specialty {}", p.id, p.specialty));
            }
            let Some(row) = self.costs.assign.get(&p.id) else {
                return bad(format!("no assignment costs for patient {}", p.id));
            };
            for b in self.blocks.iter().filter(|b| b.specialty == p.specialty) {
                if !row.blocks.contains_key(&b.id) {
                    return bad(format!("no cost for patient {} in block {}", p.id, b.id));
                }
            }
            for b in row.blocks.keys() {
                match self.blocks.get(*b as usize) {
                    Some(blk) if blk.specialty == p.specialty => {}
                    _ => return bad(format!("patient {} priced in foreign block {b}", p.id)),
                }
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.id as usize != k {
                return bad(format!("block at position {k} has id {}", b.id));
            }
            if !(b.regular_time > 0.0) {
                return bad(format!("block {} has nonpositive regular time", b.id));
            }
            if !self.horizon.contains(&b.day) {
                return bad(format!("block {} lies outside the horizon", b.id));
            }
            if self.specialty(&b.specialty).is_none() {
                return bad(format!("block {} has unknown specialty {}", b.id, b.specialty));
            }
        }
        if self.horizon.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizon days must be strictly increasing".into());
        }
        let c = &self.costs;
        if [c.overtime, c.waiting, c.idle, c.migration].iter().any(|r| !(*r >= 0.0)) {
            return bad("cost rates must be nonnegative".into());
        }
        let e = &self.emergencies;
        if !(e.rate >= 0.0) || !(e.marginal_mean > 0.0) || !(e.marginal_var >= 0.0) {
            return bad("invalid emergency parameters".into());
        }
        Ok(())
    }

    pub fn specialty(&self, id: &str) -> Option<&Specialty> {
        self.specialties.iter().find(|s| s.id == id)
    }

    pub fn patient(&self, id: PatientId) -> &ElectivePatient {
        &self.patients[id as usize]
    }

    pub fn block(&self, id: BlockId) -> &Block {
        &self.blocks[id as usize]
    }

    pub fn rates(&self) -> Rates {
        self.costs.rates()
    }

    /// Blocks of a specialty, ordered by day then id.
    pub fn blocks_of(&self, specialty: &str) -> Vec<BlockId> {
        let mut v: Vec<&Block> = self.blocks.iter().filter(|b| b.specialty == specialty).collect();
        v.sort_by_key(|b| (b.day, b.id));
        v.into_iter().map(|b| b.id).collect()
    }

    /// Blocks of a day, ordered by id.
    pub fn blocks_on(&self, day: u32) -> Vec<BlockId> {
        self.blocks.iter().filter(|b| b.day == day).map(|b| b.id).collect()
    }

    pub fn patients_of(&self, specialty: &str) -> Vec<PatientId> {
        self.patients.iter().filter(|p| p.specialty == specialty).map(|p| p.id).collect()
    }

    /// Specialties in declaration order that have at least one patient or block.
    pub fn active_specialties(&self) -> Vec<String> {
        self.specialties
            .iter()
            .filter(|s| {
                self.patients.iter().any(|p| p.specialty == s.id)
                    || self.blocks.iter().any(|b| b.specialty == s.id)
            })
            .map(|s| s.id.clone())
            .collect()
    }

    /// Shortest-variance-first order of the given patients, ties by id.
    pub fn svf(&self, patients: &[PatientId]) -> Vec<PatientId> {
        let mut v = patients.to_vec();
        v.sort_by(|a, b| {
            let va = self.patient(*a).duration_variance();
            let vb = self.patient(*b).duration_variance();
            va.total_cmp(&vb).then(a.cmp(b))
        });
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergencyCase {
    pub mu: f64,
    pub sigma: f64,
    pub duration: f64,
}

impl EmergencyCase {
    pub fn expected_duration(&self) -> f64 {
        ln_mean(self.mu, self.sigma)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub elective_durations: BTreeMap<PatientId, f64>,
    /// Arrivals per horizon day, in horizon order.
    pub emergency_arrivals: Vec<Vec<EmergencyCase>>,
}

impl Scenario {
    pub fn check(&self, instance: &Instance) -> Result<()> {
        for p in &instance.patients {
            match self.elective_durations.get(&p.id) {
                Some(d) if *d > 0.0 && d.is_finite() => {}
                Some(d) => {
                    return Err(Error::Mismatch(format!("patient {} has duration {d}", p.id)))
                }
                None => {
                    return Err(Error::Mismatch(format!("scenario lacks patient {}", p.id)))
                }
            }
        }
        if self.emergency_arrivals.len() != instance.horizon.len() {
            return Err(Error::Mismatch(format!(
                "scenario covers {} days, horizon has {}",
                self.emergency_arrivals.len(),
                instance.horizon.len()
            )));
        }
        if self
            .emergency_arrivals
            .iter()
            .flatten()
            .any(|e| !(e.duration > 0.0 && e.duration.is_finite()))
        {
            return Err(Error::Mismatch("emergency with nonpositive duration".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub assignment: BTreeMap<PatientId, BlockRef>,
    pub tentative: BTreeMap<PatientId, f64>,
}

impl Plan {
    /// Patients of `block` in the order they are operated.
    pub fn sequence(&self, instance: &Instance, block: BlockId) -> Vec<PatientId> {
        let members: Vec<PatientId> = self
            .assignment
            .iter()
            .filter(|(_, b)| **b == BlockRef::Block(block))
            .map(|(p, _)| *p)
            .collect();
        instance.svf(&members)
    }

    pub fn validate(&self, instance: &Instance) -> Result<()> {
        let bad = |m: String| Err(Error::Mismatch(m));
        if self.assignment.len() != instance.patients.len() {
            return bad(format!(
                "plan assigns {} patients, instance has {}",
                self.assignment.len(),
                instance.patients.len()
            ));
        }
        for p in &instance.patients {
            let Some(b) = self.assignment.get(&p.id) else {
                return bad(format!("patient {} is not assigned", p.id));
            };
            match b {
                BlockRef::Dummy => {
                    if self.tentative.contains_key(&p.id) {
                        return bad(format!("postponed patient {} has a tentative time", p.id));
                    }
                }
                BlockRef::Block(id) => {
                    let Some(blk) = instance.blocks.get(*id as usize) else {
                        return bad(format!("patient {} assigned to unknown block {id}", p.id));
                    };
                    if blk.specialty != p.specialty {
                        return bad(format!("patient {} assigned across specialties", p.id));
                    }
                    match self.tentative.get(&p.id) {
                        Some(t) if *t >= 0.0 && t.is_finite() => {}
                        _ => return bad(format!("patient {} lacks a valid tentative time", p.id)),
                    }
                }
            }
        }
        if self.tentative.len() != self.assignment.values().filter(|b| !b.is_dummy()).count() {
            return bad("tentative times for unknown patients".into());
        }
        for b in &instance.blocks {
            let seq = self.sequence(instance, b.id);
            for w in seq.windows(2) {
                if self.tentative[&w[1]] + 1e-6 < self.tentative[&w[0]] {
                    return bad(format!("tentative times decrease within block {}", b.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub scheduling: f64,
    pub waiting: f64,
    pub idle: f64,
    pub overtime: f64,
    pub migration: f64,
    pub total: f64,
}

impl CostBreakdown {
    pub fn second_stage(&self) -> f64 {
        self.waiting + self.idle + self.overtime
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Case {
    Elective { patient: PatientId },
    Emergency { day: u32, index: u32 },
}

/// One executed surgery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Operation {
    pub block: BlockId,
    pub case: Case,
    pub start: f64,
    pub duration: f64,
}

impl Operation {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub final_block: BTreeMap<PatientId, BlockRef>,
    pub final_tentative: BTreeMap<PatientId, f64>,
    pub start: BTreeMap<PatientId, f64>,
    pub migrations: BTreeMap<PatientId, u32>,
    pub load: BTreeMap<BlockId, f64>,
    pub operations: Vec<Operation>,
    pub cost_breakdown: CostBreakdown,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lognormal_mean_examples() {
        assert_eq!(ln_mean(0.0, 0.0), 1.0);
        assert_relative_eq!(ln_mean(90f64.ln(), 0.0), 90.0, epsilon = 1e-9);
        assert_relative_eq!(ln_mean(4.0, 0.5), 61.867, epsilon = 1e-3);
    }

    #[test]
    fn lognormal_quantile_examples() {
        assert_relative_eq!(ln_quantile(90f64.ln(), 0.0, 0.7).unwrap(), 90.0, epsilon = 1e-9);
        assert_relative_eq!(ln_quantile(3.3, 0.8, 0.5).unwrap(), 3.3f64.exp(), epsilon = 1e-9);
        let q = ln_quantile(4.0, 0.5, 0.7).unwrap();
        assert_relative_eq!(q, (4.0 + 0.5 * 0.524_400_512_708_041_f64).exp(), epsilon = 1e-9);
        assert!((q - 70.93).abs() / 70.93 < 1e-3);
        assert!(ln_quantile(4.0, 0.5, 0.0).is_err());
        assert!(ln_quantile(4.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn blockref_json_shape() {
        assert_eq!(serde_json::to_string(&BlockRef::Block(7)).unwrap(), "7");
        assert_eq!(serde_json::to_string(&BlockRef::Dummy).unwrap(), "\"dummy\"");
        let back: Vec<BlockRef> = serde_json::from_str("[3, \"dummy\"]").unwrap();
        assert_eq!(back, vec![BlockRef::Block(3), BlockRef::Dummy]);
        assert!(serde_json::from_str::<BlockRef>("\"b3\"").is_err());
    }

    #[test]
    fn case_json_shape() {
        let c = Case::Emergency { day: 2, index: 1 };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(s, r#"{"kind":"emergency","day":2,"index":1}"#);
    }
}
