use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use orplan_core::evalmc::EvalReport;
use orplan_core::instgen::{default_specialties, generate, GenConfig};
use orplan_core::model::{CostBreakdown, Instance, Plan, Scenario, SimulationOutcome};
use orplan_core::planners::{PlannerConfig, PlannerReport};
use orplan_core::simpolicy::{PolicyParams, Trace};
use orplan_core::surrogate::{SurrogateParams, SurrogateSet};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Hex digest of the value's JSON encoding.
pub fn content_id<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("artifact serializes");
    hex::encode(&Sha256::digest(&bytes)[..12])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRequest {
    #[serde(flatten)]
    pub config: GenConfig,
    #[serde(default)]
    pub surrogate: SurrogateParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceArtifact {
    pub id: String,
    pub config: GenConfig,
    pub surrogate: SurrogateParams,
    pub instance: Instance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub config: PlannerConfig,
    pub instance: Instance,
    pub plan: Plan,
    pub report: PlannerReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationArtifact {
    pub id: String,
    pub plan_id: String,
    pub scenario_seed: u64,
    pub scenario_index: u64,
    pub params: PolicyParams,
    pub scenario: Scenario,
    pub outcome: SimulationOutcome,
    pub cost: CostBreakdown,
    pub trace: Trace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloArtifact {
    pub id: String,
    pub plan_id: String,
    pub k: usize,
    pub scenario_seed: u64,
    pub report: EvalReport,
}

/// Surrogates of every specialty under the instance's cost rates, cached in `dir`.
pub fn surrogates_for(dir: &Path, instance: &Instance, params: &SurrogateParams) -> anyhow::Result<SurrogateSet> {
    Ok(SurrogateSet::load_or_build(dir, &instance.specialties, instance.rates(), params)?)
}

/// Builds or loads surrogates for the configured cost structure, then generates.
pub fn generate_with_surrogates(
    dir: &Path,
    config: &GenConfig,
    params: &SurrogateParams,
) -> anyhow::Result<Instance> {
    let set = SurrogateSet::load_or_build(dir, &default_specialties(), config.cost_structure.rates(), params)?;
    Ok(generate(config, &set.rightmost_slopes())?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    write_atomic(path, &bytes)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = PathBuf::from(path);
    tmp.set_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut out = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
