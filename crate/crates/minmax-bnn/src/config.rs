//! Run configuration: one flat struct covering data paths, architecture,
//! objective, optimizer, loop, and evaluation settings. Every field except
//! the data paths has a default, so a config file may be arbitrarily sparse;
//! unknown keys are rejected.

use crate::encoder::ArchId;
use crate::error::{Error, Result};
use crate::params::SampleMode;
use crate::rate::PairwiseScope;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Which way the variance player moves along its gradient. The objective is
/// a minimax game: the mean network always ascends; the variance network
/// descends by default (`min`), with `max` kept as the alternative reading
/// of the players' pull on the pair distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetvDirection {
    Min,
    Max,
}

impl std::fmt::Display for NetvDirection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NetvDirection::Min => "min",
            NetvDirection::Max => "max",
        })
    }
}

impl std::str::FromStr for NetvDirection {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min" => Ok(NetvDirection::Min),
            "max" => Ok(NetvDirection::Max),
            other => Err(Error::Config(format!(
                "unknown netv direction {other:?}; expected min or max"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // data
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Original dataset class ids kept in scope.
    pub classes: Vec<u8>,
    /// Cap on training samples per class; absent means all available.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,

    // architecture
    pub arch: ArchId,
    pub feature_dim: usize,

    // objective
    pub eps_sq: f64,
    pub pairwise_scope: PairwiseScope,

    // training loop
    pub numsteps: u64,
    /// Mean-network updates per outer step; the variance network always
    /// takes exactly one.
    pub ns: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub batch_per_class: usize,
    pub seed: u64,
    pub sigma_init: f64,
    pub init_std: f64,
    pub netv_direction: NetvDirection,
    /// Skip the mean-player gradient path through the sampled network.
    pub detach_generator_for_d: bool,
    pub sample_mode: SampleMode,

    // evaluation + artifacts
    pub k_nn: usize,
    /// Evaluate every this many outer steps (and always after the last).
    pub eval_every: u64,
    /// Checkpoint every this many outer steps; 0 means final only.
    pub checkpoint_every: u64,
    /// Populate the ms column; off by default to keep reruns byte-identical.
    pub timing: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            classes: (0..=9).collect(),
            train_per_class: None,
            test_per_class: None,
            arch: ArchId::ConvResLite,
            feature_dim: 128,
            eps_sq: 0.5,
            pairwise_scope: PairwiseScope::PerClass,
            numsteps: 200,
            ns: 1,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_per_class: 128,
            seed: 0,
            sigma_init: 0.02,
            init_std: 0.02,
            netv_direction: NetvDirection::Min,
            detach_generator_for_d: false,
            sample_mode: SampleMode::Fresh,
            k_nn: 5,
            eval_every: 1,
            checkpoint_every: 0,
            timing: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.classes.is_empty() {
            return fail(String::from("classes must not be empty"));
        }
        if let Some(&c) = self.classes.iter().find(|&&c| c > 9) {
            return fail(format!("class {c} out of range 0..=9"));
        }
        let mut sorted = self.classes.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return fail(String::from("classes contains duplicates"));
        }
        if self.feature_dim < 2 {
            return fail(format!("feature_dim = {} must be >= 2", self.feature_dim));
        }
        if !self.eps_sq.is_finite() || self.eps_sq <= 0.0 {
            return fail(format!("eps_sq = {} must be > 0", self.eps_sq));
        }
        if self.numsteps == 0 {
            return fail(String::from("numsteps must be >= 1"));
        }
        if self.ns == 0 {
            return fail(String::from("ns must be >= 1"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return fail(format!("lr = {} must be > 0", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} = {b} must lie in [0, 1)"));
            }
        }
        if !self.adam_epsilon.is_finite() || self.adam_epsilon <= 0.0 {
            return fail(format!("adam_epsilon = {} must be > 0", self.adam_epsilon));
        }
        if self.batch_per_class == 0 {
            return fail(String::from("batch_per_class must be >= 1"));
        }
        if !self.sigma_init.is_finite() || self.sigma_init < 0.0 {
            return fail(format!("sigma_init = {} must be >= 0", self.sigma_init));
        }
        if !self.init_std.is_finite() || self.init_std <= 0.0 {
            return fail(format!("init_std = {} must be > 0", self.init_std));
        }
        if self.train_per_class == Some(0) || self.test_per_class == Some(0) {
            return fail(String::from("per-class caps must be >= 1 when set"));
        }
        if self.k_nn == 0 {
            return fail(String::from("k_nn must be >= 1"));
        }
        if self.eval_every == 0 {
            return fail(String::from("eval_every must be >= 1"));
        }
        Ok(())
    }

    /// Resolve a required data path, naming the missing key in the error.
    pub fn require_path(&self, which: &str) -> Result<&Path> {
        let got = match which {
            "train_images" => &self.train_images,
            "train_labels" => &self.train_labels,
            "test_images" => &self.test_images,
            "test_labels" => &self.test_labels,
            other => panic!("unknown path key {other}"),
        };
        got.as_deref()
            .ok_or_else(|| Error::Data(format!("data path `{which}` is not set")))
    }
}
