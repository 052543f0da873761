use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    run, summary_csv, Ablation, AgentConfig, Exploration, SeedRun, SummaryRow, LAMBDA_GRID,
    SUMMARY_FILE,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// DISCOVER over the lambda grid.
    Lambda,
    /// Lambda grid plus each single ablation at the base lambda
    /// (off-policy only for the ablations).
    Ablation,
    /// DISCOVER at the base lambda against Gaussian noise and greedy.
    Baselines,
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Lambda => "lambda",
            SweepMode::Ablation => "ablation",
            SweepMode::Baselines => "baselines",
        })
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepMode::Lambda),
            "ablation" => Ok(SweepMode::Ablation),
            "baselines" => Ok(SweepMode::Baselines),
            other => Err(Error::Config(format!(
                "unknown sweep mode `{other}`; valid: lambda, ablation, baselines"
            ))),
        }
    }
}

/// The configurations a sweep runs, in order.
pub fn sweep_settings(base: &AgentConfig, mode: SweepMode) -> Result<Vec<AgentConfig>> {
    let discover = AgentConfig {
        exploration: Exploration::Discover,
        ablation: BTreeSet::new(),
        ..base.clone()
    };
    let lambda_grid = || {
        LAMBDA_GRID.iter().map(|&l| AgentConfig {
            lambda: Some(l),
            ..discover.clone()
        })
    };
    let settings: Vec<AgentConfig> = match mode {
        SweepMode::Lambda => lambda_grid().collect(),
        SweepMode::Ablation => {
            if base.exploration != Exploration::Discover {
                return Err(Error::Config(
                    "ablation sweeps require exploration = discover".into(),
                ));
            }
            let mut all: Vec<AgentConfig> = lambda_grid().collect();
            if base.algo.is_off_policy() {
                all.extend(Ablation::ALL.iter().map(|&a| AgentConfig {
                    ablation: BTreeSet::from([a]),
                    ..discover.clone()
                }));
            }
            all
        }
        SweepMode::Baselines => {
            let mut all = vec![discover.clone()];
            if base.algo.is_off_policy() {
                all.push(AgentConfig {
                    exploration: Exploration::Gaussian,
                    ..discover.clone()
                });
            }
            all.push(AgentConfig {
                exploration: Exploration::Greedy,
                ..discover.clone()
            });
            all
        }
    };
    for s in &settings {
        s.validate()?;
    }
    Ok(settings)
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub settings: Vec<(String, Vec<SeedRun>)>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every setting over the base seeds. With `out_dir`, each setting gets
/// its own subdirectory and a combined `summary.csv` is written at the top.
pub fn sweep(base: &AgentConfig, mode: SweepMode, out_dir: Option<&Path>) -> Result<SweepResult> {
    let configs = sweep_settings(base, mode)?;
    let mut settings = Vec::with_capacity(configs.len());
    let mut summary = Vec::new();
    for config in &configs {
        let label = config.setting_label();
        let dir = out_dir.map(|d| d.join(&label));
        let runs = run(config, dir.as_deref())?;
        summary.extend(runs.iter().map(|r| SummaryRow {
            setting: label.clone(),
            seed: r.seed,
            last10_mean: r.last10_mean(),
        }));
        settings.push((label, runs));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        summary_csv(
            BufWriter::new(File::create(dir.join(SUMMARY_FILE))?),
            &summary,
        )?;
    }
    Ok(SweepResult { settings, summary })
}
