//! Run configuration: a flat JSON document with defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backtest::{BacktestSettings, Execution};
use crate::error::{Error, Result};
use crate::extraction::FilterGranularity;
use crate::Day;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgumentSourceKind {
    /// Pre-extracted arguments from `argument_file`.
    #[default]
    File,
    /// Raw documents from `raw_file` through the offline echo agent.
    Mock,
    /// Raw documents from `raw_file` through the chat endpoint.
    Live,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Deterministic hashed bag-of-words vectors.
    #[default]
    Mock,
    Live,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// Project only when the encoder dimension exceeds 256.
    #[default]
    Auto,
    On,
    Off,
}

/// Component switches. All on is the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Structured argument generation; off feeds raw documents as arguments.
    pub sag: bool,
    /// Mixture modes; off makes every argument its own mode.
    pub mot: bool,
    /// Soft posteriors; off hardens them to one-hot.
    pub pm: bool,
    /// Optimal temporal alignment; off matches by index or not at all.
    pub ta: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            sag: true,
            mot: true,
            pm: true,
            ta: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub universe_file: Option<PathBuf>,
    pub price_file: Option<PathBuf>,
    pub argument_source: ArgumentSourceKind,
    pub argument_file: Option<PathBuf>,
    pub raw_file: Option<PathBuf>,
    pub prompts_dir: Option<PathBuf>,
    pub filter_granularity: FilterGranularity,
    pub max_reprompts: usize,
    pub encoder: EncoderKind,
    /// Output dimension of the mock encoder.
    pub encoder_dim: usize,
    pub cache_dir: Option<PathBuf>,
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub top_fraction: f64,
    pub cost_rate: f64,
    pub annualization: f64,
    pub risk_free: f64,
    pub execution: Execution,
    pub seed: u64,
    /// Start each day's EM from the previous day's means when shapes match.
    pub warm_start: bool,
    pub projection: ProjectionMode,
    pub projection_dim: usize,
    /// Days used to fit the projection; they are not traded.
    pub burn_in_days: usize,
    pub ablation: Ablation,
    pub regime_file: Option<PathBuf>,
    pub index_file: Option<PathBuf>,
    pub state_dir: PathBuf,
    pub start: Option<Day>,
    pub end: Option<Day>,
    pub parallelism: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            universe_file: None,
            price_file: None,
            argument_source: ArgumentSourceKind::File,
            argument_file: None,
            raw_file: None,
            prompts_dir: None,
            filter_granularity: FilterGranularity::PerModality,
            max_reprompts: 2,
            encoder: EncoderKind::Mock,
            encoder_dim: 64,
            cache_dir: None,
            k: 20,
            lambda: 0.5,
            epsilon: 1e-5,
            top_fraction: 0.2,
            cost_rate: 1.5e-4,
            annualization: 252.0,
            risk_free: 0.0,
            execution: Execution::OpenToOpen,
            seed: 0,
            warm_start: true,
            projection: ProjectionMode::Auto,
            projection_dim: 64,
            burn_in_days: 10,
            ablation: Ablation::default(),
            regime_file: None,
            index_file: None,
            state_dir: PathBuf::from("state"),
            start: None,
            end: None,
            parallelism: 4,
        }
    }
}

/// Encoder dimensions above this are projected in `auto` mode.
pub const AUTO_PROJECTION_THRESHOLD: usize = 256;

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return fail(format!("top_fraction {} outside (0, 1]", self.top_fraction));
        }
        if !(self.cost_rate >= 0.0) {
            return fail(format!("cost_rate {} is negative", self.cost_rate));
        }
        if !(self.annualization > 0.0) {
            return fail(format!("annualization {} must be positive", self.annualization));
        }
        if self.encoder_dim == 0 || self.projection_dim == 0 {
            return fail("encoder_dim and projection_dim must be at least 1".into());
        }
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return fail(format!("start {s} after end {e}"));
            }
        }
        Ok(())
    }

    pub fn backtest_settings(&self) -> BacktestSettings {
        BacktestSettings {
            cost_rate: self.cost_rate,
            annualization: self.annualization,
            risk_free: self.risk_free,
            execution: self.execution,
        }
    }

    /// Hash over every field that shapes the state stream. The end date,
    /// state location and thread count may change between resumed runs.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for key in ["end", "state_dir", "parallelism", "cache_dir", "regime_file", "index_file"] {
                obj.remove(key);
            }
        }
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
