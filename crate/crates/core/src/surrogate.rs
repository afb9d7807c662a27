//! Per-specialty piecewise-linear surrogates of the optimal second-stage
//! block cost as a function of expected block load.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::instgen::{draw_case_lognormal, DEFAULT_CV_REDUCTION, DEFAULT_DELTA_NOISE_SD};
use crate::model::{ln_mean, ln_var, Rates, Specialty};
use crate::rng::substream;
use crate::stage2::{solve_block_lp, BlockProblem, SURROGATE_K};
use crate::{Error, Result};

pub const DEFAULT_POINTS: usize = 1000;
pub const DEFAULT_PIECES: usize = 3;
pub const DEFAULT_SEED: u64 = 20_240_601;
/// Expected-load targets are drawn from this range, as fractions of T.
pub const LOAD_SPAN: (f64, f64) = (0.3, 1.3);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub slope: f64,
    pub intercept: f64,
}

impl Piece {
    pub fn at(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub x: f64,
    pub y: f64,
    pub patients: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub points: usize,
    pub mean_abs_rel_dev: f64,
    pub rmse: f64,
}

/// Everything the cloud depends on; two models with equal keys are interchangeable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateKey {
    pub specialty: Specialty,
    pub rates: Rates,
    pub regular_time: f64,
    pub k: usize,
    pub n: usize,
    pub pieces: usize,
    pub seed: u64,
}

impl SurrogateKey {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("key serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn file_name(&self) -> String {
        format!("surrogate-{}-{}.json", self.specialty.id, self.digest())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub specialty: String,
    pub pieces: Vec<Piece>,
    pub cloud: Vec<CloudPoint>,
    pub stats: FitStats,
    pub key: SurrogateKey,
}

impl SurrogateModel {
    pub fn evaluate(&self, x: f64) -> f64 {
        evaluate(&self.pieces, x)
    }

    pub fn rightmost_slope(&self) -> f64 {
        self.pieces.iter().map(|p| p.slope).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Pointwise maximum of the pieces.
pub fn evaluate(pieces: &[Piece], x: f64) -> f64 {
    pieces.iter().map(|p| p.at(x)).fold(f64::NEG_INFINITY, f64::max)
}

/// Mean of `|f(x) - y| / max(y, 1)` over the points.
pub fn mean_abs_rel_dev(pieces: &[Piece], points: &[CloudPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| (evaluate(pieces, p.x) - p.y).abs() / p.y.max(1.0)).sum::<f64>()
        / points.len() as f64
}

fn rmse(pieces: &[Piece], points: &[CloudPoint]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    (points.iter().map(|p| (evaluate(pieces, p.x) - p.y).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
}

/// One cloud point: a random block of the specialty whose expected load
/// just exceeds a uniform target, scored by the block LP.
pub fn sample_cloud_point(key: &SurrogateKey, index: u64) -> Result<CloudPoint> {
    let s = &key.specialty;
    let mut rng = substream(key.seed, index);
    let target = rng.gen_range(LOAD_SPAN.0 * key.regular_time..LOAD_SPAN.1 * key.regular_time);
    let mut cases: Vec<(f64, f64)> = Vec::new();
    let mut x = 0.0;
    while x <= target {
        let c = draw_case_lognormal(
            s.marginal_mean,
            s.marginal_var,
            DEFAULT_CV_REDUCTION,
            DEFAULT_DELTA_NOISE_SD,
            &mut rng,
        )?;
        x += ln_mean(c.0, c.1);
        cases.push(c);
    }
    cases.sort_by(|a, b| ln_var(a.0, a.1).total_cmp(&ln_var(b.0, b.1)));
    let durations = cases
        .iter()
        .map(|(mu, sigma)| {
            let d = LogNormal::new(*mu, *sigma).map_err(|e| Error::Domain(e.to_string()))?;
            Ok((0..key.k).map(|_| d.sample(&mut rng)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let problem = BlockProblem::new(durations, key.regular_time, key.rates)?;
    let y = solve_block_lp(&problem)?.cost;
    Ok(CloudPoint { x, y, patients: cases.len() })
}

/// `key.n` cloud points, independent and reproducible.
pub fn sample_second_stage_cloud(key: &SurrogateKey) -> Result<Vec<CloudPoint>> {
    (0..key.n as u64).into_par_iter().map(|j| sample_cloud_point(key, j)).collect()
}

fn ols(points: &[CloudPoint]) -> Piece {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.x).sum::<f64>() / n;
    let my = points.iter().map(|p| p.y).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.x - mx) * (p.y - my)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) * n {
        return Piece { slope: 0.0, intercept: my };
    }
    let slope = sxy / sxx;
    Piece { slope, intercept: my - slope * mx }
}

/// Splits the x-sorted cloud into `r` equal-count groups and fits one
/// least-squares line per group.
pub fn fit_piecewise(cloud: &[CloudPoint], r: usize) -> Result<Vec<Piece>> {
    if r == 0 || cloud.len() < 2 * r {
        return Err(Error::Domain(format!("cannot fit {r} pieces to {} points", cloud.len())));
    }
    let mut sorted = cloud.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x));
    let base = sorted.len() / r;
    let extra = sorted.len() % r;
    let mut pieces = Vec::with_capacity(r);
    let mut at = 0;
    for g in 0..r {
        let size = base + usize::from(g < extra);
        pieces.push(ols(&sorted[at..at + size]));
        at += size;
    }
    Ok(pieces)
}

pub fn build(key: SurrogateKey) -> Result<SurrogateModel> {
    let cloud = sample_second_stage_cloud(&key)?;
    let pieces = fit_piecewise(&cloud, key.pieces)?;
    let stats = FitStats {
        points: cloud.len(),
        mean_abs_rel_dev: mean_abs_rel_dev(&pieces, &cloud),
        rmse: rmse(&pieces, &cloud),
    };
    Ok(SurrogateModel { specialty: key.specialty.id.clone(), pieces, cloud, stats, key })
}

/// Generation budget shared by all specialties of a surrogate set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateParams {
    pub n: usize,
    pub k: usize,
    pub pieces: usize,
    pub seed: u64,
    pub regular_time: f64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            n: DEFAULT_POINTS,
            k: SURROGATE_K,
            pieces: DEFAULT_PIECES,
            seed: DEFAULT_SEED,
            regular_time: crate::instgen::REGULAR_TIME,
        }
    }
}

impl SurrogateParams {
    pub fn key(&self, specialty: &Specialty, rates: Rates) -> SurrogateKey {
        SurrogateKey {
            specialty: specialty.clone(),
            rates,
            regular_time: self.regular_time,
            k: self.k,
            n: self.n,
            pieces: self.pieces,
            seed: self.seed,
        }
    }
}

/// Surrogates for several specialties under one cost structure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSet {
    pub models: BTreeMap<String, SurrogateModel>,
}

impl SurrogateSet {
    pub fn get(&self, specialty: &str) -> Result<&SurrogateModel> {
        self.models
            .get(specialty)
            .ok_or_else(|| Error::Config(format!("no surrogate for specialty {specialty}")))
    }

    pub fn rightmost_slopes(&self) -> BTreeMap<String, f64> {
        self.models.iter().map(|(s, m)| (s.clone(), m.rightmost_slope())).collect()
    }

    /// Builds the set in memory.
    pub fn build(specialties: &[Specialty], rates: Rates, params: &SurrogateParams) -> Result<Self> {
        let mut models = BTreeMap::new();
        for s in specialties {
            models.insert(s.id.clone(), build(params.key(s, rates))?);
        }
        Ok(SurrogateSet { models })
    }

    /// Loads cached models from `dir`, building and caching missing ones.
    pub fn load_or_build(dir: &Path, specialties: &[Specialty], rates: Rates, params: &SurrogateParams) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut models = BTreeMap::new();
        for s in specialties {
            let key = params.key(s, rates);
            let path = dir.join(key.file_name());
            let model = match read_cached(&path, &key)? {
                Some(m) => m,
                None => {
                    tracing::info!(specialty = %s.id, points = key.n, k = key.k, "building surrogate");
                    let m = build(key)?;
                    write_atomic(&path, &serde_json::to_vec_pretty(&m)?)?;
                    m
                }
            };
            models.insert(s.id.clone(), model);
        }
        Ok(SurrogateSet { models })
    }

    /// Loads every cached model in `dir` matching the rates and params.
    pub fn load_cached(dir: &Path, specialties: &[Specialty], rates: Rates, params: &SurrogateParams) -> Result<Option<Self>> {
        let mut models = BTreeMap::new();
        for s in specialties {
            let key = params.key(s, rates);
            match read_cached(&dir.join(key.file_name()), &key)? {
                Some(m) => {
                    models.insert(s.id.clone(), m);
                }
                None => return Ok(None),
            }
        }
        Ok(Some(SurrogateSet { models }))
    }
}

fn read_cached(path: &Path, key: &SurrogateKey) -> Result<Option<SurrogateModel>> {
    if !path.exists() {
        return Ok(None);
    }
    let model: SurrogateModel = serde_json::from_slice(&std::fs::read(path)?)?;
    Ok((model.key == *key).then_some(model))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp: PathBuf = path.with_extension(format!("tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pts(f: impl Fn(f64) -> f64) -> Vec<CloudPoint> {
        (0..60).map(|i| {
            let x = 150.0 + 8.0 * i as f64;
            CloudPoint { x, y: f(x), patients: 1 }
        }).collect()
    }

    #[test]
    fn recovers_a_line() {
        for p in fit_piecewise(&pts(|x| 2.0 * x), 3).unwrap() {
            assert_abs_diff_eq!(p.slope, 2.0, epsilon = 1e-9);
            assert_abs_diff_eq!(p.intercept, 0.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn constant_cloud() {
        for p in fit_piecewise(&pts(|_| 5.0), 3).unwrap() {
            assert_abs_diff_eq!(p.slope, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.intercept, 5.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn degenerate_group_is_flat() {
        let cloud: Vec<CloudPoint> = (0..6).map(|i| CloudPoint { x: 10.0, y: i as f64, patients: 1 }).collect();
        let p = fit_piecewise(&cloud, 1).unwrap();
        assert_eq!(p[0].slope, 0.0);
        assert_abs_diff_eq!(p[0].intercept, 2.5, epsilon = 1e-12);
        assert!(fit_piecewise(&cloud, 4).is_err());
    }

    #[test]
    fn hinge_examples() {
        let hinge = [Piece { slope: 0.0, intercept: 0.0 }, Piece { slope: 1.0, intercept: -480.0 }];
        assert_eq!(evaluate(&hinge, 400.0), 0.0);
        assert_eq!(evaluate(&hinge, 500.0), 20.0);
    }

    #[test]
    fn noisy_hinge_slopes() {
        use rand::SeedableRng;
        use rand_distr::Normal;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let cloud: Vec<CloudPoint> = (0..3000)
            .map(|i| {
                let x = 720.0 * i as f64 / 3000.0;
                CloudPoint { x, y: (x - 480.0).max(0.0) + noise.sample(&mut rng), patients: 1 }
            })
            .collect();
        let p = fit_piecewise(&cloud, 3).unwrap();
        assert_abs_diff_eq!(p[1].slope, 0.0, epsilon = 0.05);
        assert_abs_diff_eq!(p[2].slope, 1.0, epsilon = 0.05);
    }

    #[test]
    fn deterministic_specialty_lies_on_hinge() {
        let key = SurrogateKey {
            specialty: Specialty { id: "FLAT".into(), marginal_mean: 90.0, marginal_var: 0.0 },
            rates: Rates { overtime: 1.0, waiting: 0.0, idle: 0.0 },
            regular_time: 480.0,
            k: 5,
            n: 40,
            pieces: 3,
            seed: 1,
        };
        for p in sample_second_stage_cloud(&key).unwrap() {
            assert_abs_diff_eq!(p.y, (p.x - 480.0).max(0.0), epsilon = 1e-6);
        }
    }
}
