//! Resolved per-command configurations. Each is what the run manifest
//! echoes and what `--config` accepts back.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::ValueEnum;
use nat_core::reconstruct::{DEFAULT_BANDWIDTHS, DEFAULT_MIX_EPS};
use nat_core::synth::{SuiteParams, TOY_OBSERVERS, TOY_REALIZATIONS};
use nat_core::{Discrepancy, ExperimentConfig, LossMode, Shape};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Reads a config file holding either the bare config object or a run
/// manifest with the config under `"config"`.
pub fn load<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("command").is_some() {
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
    }
    serde_json::from_value(value).with_context(|| format!("invalid config in {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeSel {
    Tt,
    Nat,
    Both,
}

impl ModeSel {
    pub fn modes(self) -> Vec<LossMode> {
        match self {
            ModeSel::Tt => vec![LossMode::Tt],
            ModeSel::Nat => vec![LossMode::Nat],
            ModeSel::Both => vec![LossMode::Tt, LossMode::Nat],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub frames: usize,
    /// Defaults to one video per frame.
    pub videos: Option<usize>,
    pub observers: usize,
    pub grid: Shape,
    pub sigma: f64,
    pub suite: SuiteParams,
    pub perturb_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 10,
            videos: None,
            observers: 5,
            grid: Shape {
                width: 64,
                height: 64,
            },
            sigma: 2.0,
            suite: SuiteParams::default(),
            perturb_sd: 1.0,
            seed: 0,
        }
    }
}

/// Where a command reads frames from. A directory is a dataset written by
/// `synth`; a file is a bare FIXCSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub input: Option<PathBuf>,
    /// Overrides the dataset's stored grid; required for a bare FIXCSV.
    pub grid: Option<Shape>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    #[serde(flatten)]
    pub data: InputConfig,
    pub gold_standard: bool,
    pub bandwidths: Vec<f64>,
    pub mix_eps: Vec<f64>,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            data: InputConfig::default(),
            gold_standard: false,
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            mix_eps: DEFAULT_MIX_EPS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatsConfig {
    #[serde(flatten)]
    pub data: InputConfig,
    pub discrepancy: Discrepancy,
    pub realizations: usize,
    pub seed: u64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            data: InputConfig::default(),
            discrepancy: Discrepancy::Kld,
            realizations: nat_core::noise_stats::DEFAULT_REALIZATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Dataset to train on; frames are synthesized from the experiment
    /// settings when absent.
    pub input: Option<PathBuf>,
    pub modes: ModeSel,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            input: None,
            modes: ModeSel::Both,
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareConfig {
    pub n_values: Vec<usize>,
    pub v_values: Vec<usize>,
    pub modes: ModeSel,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            n_values: vec![3, 30],
            v_values: vec![5],
            modes: ModeSel::Both,
            experiment: ExperimentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub n_values: Vec<usize>,
    pub realizations: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_values: TOY_OBSERVERS.to_vec(),
            realizations: TOY_REALIZATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IocConfig {
    #[serde(flatten)]
    pub data: InputConfig,
    pub realizations: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for IocConfig {
    fn default() -> Self {
        Self {
            data: InputConfig::default(),
            realizations: nat_core::ioc::DEFAULT_IOC_REALIZATIONS,
            stride: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub predicted: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    /// FIXCSV supplying fixations for NSS and AUC.
    pub fixations: Option<PathBuf>,
    pub frame: Option<u64>,
}
