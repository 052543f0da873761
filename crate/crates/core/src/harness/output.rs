use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{stream_seeds, AgentConfig, EvalRecord, SeedRun, Snapshot};
use crate::agent_off::OffPolicyConfig;
use crate::agent_on::OnPolicyConfig;
use crate::buffer::write_jsonl;
use crate::discover::NetworkSpec;
use crate::error::{Error, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRANSITIONS_PREFIX: &str = "transitions_seed";
pub const MODEL_PREFIX: &str = "model_seed";
pub const DIVERGENCE_PREFIX: &str = "divergence_seed";

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    step: u64,
    seed: u64,
    mean_return: f64,
    std_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    pub seed: u64,
    pub last10_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub eval_seed: u64,
    pub streams: BTreeMap<String, u64>,
    pub diverged_at: Option<u64>,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: AgentConfig,
    pub lambda: f64,
    pub off_policy: Option<OffPolicyConfig>,
    pub on_policy: Option<OnPolicyConfig>,
    pub explorer: Option<NetworkSpec>,
    pub eval_seed_offset: u64,
    pub seeds: Vec<SeedManifest>,
}

impl Manifest {
    pub fn new(config: &AgentConfig, runs: &[SeedRun]) -> Result<Self> {
        let off_policy = config
            .algo
            .is_off_policy()
            .then(|| config.off_policy_config())
            .transpose()?;
        let on_policy = (!config.algo.is_off_policy())
            .then(|| config.on_policy_config())
            .transpose()?;
        let explorer = (config.exploration == super::Exploration::Discover)
            .then(|| config.explorer_spec())
            .transpose()?;
        Ok(Self {
            config: config.clone(),
            lambda: config.lambda_value(),
            off_policy,
            on_policy,
            explorer,
            eval_seed_offset: config.eval_seed_offset,
            seeds: runs
                .iter()
                .map(|r| SeedManifest {
                    seed: r.seed,
                    eval_seed: r.seed + config.eval_seed_offset,
                    streams: stream_seeds(r.seed),
                    diverged_at: r.divergence.as_ref().map(|d| d.step),
                })
                .collect(),
        })
    }
}

/// `step,seed,mean_return,std_return`, one row per evaluation.
pub fn results_csv<W: Write>(out: W, runs: &[SeedRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for e in &run.evals {
            w.serialize(ResultRow {
                step: e.step,
                seed: e.seed,
                mean_return: e.mean,
                std_return: e.std,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `setting,seed,last10_mean`.
pub fn summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-evaluation `(step, seed, mean, std)` rows; per-episode returns are
/// not stored in the CSV and come back empty.
pub fn read_results_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<ResultRow>()
        .map(|row| {
            let row = row?;
            Ok(EvalRecord {
                step: row.step,
                seed: row.seed,
                returns: Vec::new(),
                mean: row.mean_return,
                std: row.std_return,
            })
        })
        .collect()
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let file =
        File::open(path).map_err(|e| Error::MissingArtifact(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Writes results, summary and manifest, plus transition logs and final
/// networks when recording is enabled, and a record per diverged seed.
pub fn write_run(dir: &Path, config: &AgentConfig, runs: &[SeedRun]) -> Result<()> {
    fs::create_dir_all(dir)?;
    results_csv(BufWriter::new(File::create(dir.join(RESULTS_FILE))?), runs)?;
    let label = config.setting_label();
    let summary: Vec<SummaryRow> = runs
        .iter()
        .map(|r| SummaryRow {
            setting: label.clone(),
            seed: r.seed,
            last10_mean: r.last10_mean(),
        })
        .collect();
    summary_csv(
        BufWriter::new(File::create(dir.join(SUMMARY_FILE))?),
        &summary,
    )?;
    write_json(&dir.join(MANIFEST_FILE), &Manifest::new(config, runs)?)?;

    for run in runs {
        if config.record_transitions {
            let path = dir.join(format!("{TRANSITIONS_PREFIX}{}.jsonl", run.seed));
            write_jsonl(BufWriter::new(File::create(path)?), &run.transitions)?;
            write_json(
                &dir.join(format!("{MODEL_PREFIX}{}.json", run.seed)),
                &run.snapshot,
            )?;
        }
        if let Some(d) = &run.divergence {
            write_json(
                &dir.join(format!("{DIVERGENCE_PREFIX}{}.json", run.seed)),
                d,
            )?;
        }
    }
    Ok(())
}
