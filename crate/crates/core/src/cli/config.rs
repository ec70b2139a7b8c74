//! Experiment configuration file (TOML).
//!
//! ```toml
//! sweep = [1, 2, 3]          # client counts; default [simulation.clients]
//!
//! [simulation]               # every key optional, defaults shown
//! clients = 10
//! rounds = 1
//! epochs = 10
//! batch = 8
//! lr = 0.01
//! momentum = 0.9
//! boost = 2.0
//! seed = 0
//! partition = "replicate"    # or "iid"
//! # trusted_ids = [0, 1, 2]  # default: server 0 and clients 1..=clients
//! intruder_ids = []
//! identical_client_seeds = false
//! measured_times = false
//! parallel = true
//! update_times = { model = "lognormal", mu = 0.0, sigma = 0.25 }
//! # update_times = { model = "fixed", times = [1.0, 2.0] }
//!
//! [data]
//! source = "synthetic"       # seed = 7, instances = 600, features = 20, classes = 6
//! # source = "har"
//! # dir = "data/UCI HAR Dataset"
//!
//! [output]
//! dir = "fogfed-out"
//! chain_file = "chain.fgch"  # relative to dir
//!
//! [model]
//! # layers = [{ kind = "conv1d", filters = 8, kernel = 3 }, ...]
//! ```
//!
//! Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::dataset::ShardMode;
use crate::neuralnet::LayerSpec;
use crate::simnet::SimConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataConfig {
    Har {
        dir: PathBuf,
    },
    Synthetic {
        #[serde(default = "synth_seed")]
        seed: u64,
        #[serde(default = "synth_instances")]
        instances: usize,
        #[serde(default = "synth_features")]
        features: usize,
        #[serde(default = "synth_classes")]
        classes: usize,
    },
}

fn synth_seed() -> u64 {
    7
}
fn synth_instances() -> usize {
    600
}
fn synth_features() -> usize {
    20
}
fn synth_classes() -> usize {
    6
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic {
            seed: synth_seed(),
            instances: synth_instances(),
            features: synth_features(),
            classes: synth_classes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_chain_file")]
    pub chain_file: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("fogfed-out")
}
fn default_chain_file() -> PathBuf {
    PathBuf::from("chain.fgch")
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            chain_file: default_chain_file(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub sweep: Option<Vec<usize>>,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub model: ModelConfig,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Client counts to run, defaulting to the configured count alone.
    pub fn sweep(&self) -> Vec<usize> {
        self.sweep
            .clone()
            .unwrap_or_else(|| vec![self.simulation.clients])
    }

    pub fn chain_path(&self) -> PathBuf {
        self.output.dir.join(&self.output.chain_file)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub clients: Option<usize>,
    pub rounds: Option<usize>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub boost: Option<f64>,
    pub seed: Option<u64>,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub partition: Option<ShardMode>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ConfigFile) {
        let sim = &mut cfg.simulation;
        if let Some(v) = self.clients {
            sim.clients = v;
            // an explicit client count replaces a sweep from the file
            cfg.sweep = None;
        }
        if let Some(v) = self.rounds {
            sim.rounds = v;
        }
        if let Some(v) = self.epochs {
            sim.epochs = v;
        }
        if let Some(v) = self.batch {
            sim.batch = v;
        }
        if let Some(v) = self.lr {
            sim.lr = v;
        }
        if let Some(v) = self.boost {
            sim.boost = v;
        }
        if let Some(v) = self.seed {
            sim.seed = v;
        }
        if let Some(v) = self.partition {
            sim.partition = v;
        }
        if let Some(dir) = &self.data_dir {
            cfg.data = DataConfig::Har { dir: dir.clone() };
        }
        if let Some(dir) = &self.out_dir {
            cfg.output.dir = dir.clone();
        }
    }
}

/// Default, then file, then flags.
pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<ConfigFile> {
    let mut cfg = match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    overrides.apply(&mut cfg);
    Ok(cfg)
}
