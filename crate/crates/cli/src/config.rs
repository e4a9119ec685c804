//! JSON experiment and training configurations.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zdc_core::baselines::ClassifierMode;
use zdc_core::qlearning::{StartLaw, TrainConfig};
use zdc_core::{SourceSpec, SpaceMode};

use crate::error::{read_file, CliError};

/// A grid of (method, rate, seed) cells over one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of every output file.
    pub name: String,
    pub source: SourceSpec,
    pub methods: Vec<MethodSpec>,
    /// Channel alphabet sizes `M`; each is reported as `log2(M)` bits.
    pub rates: Vec<usize>,
    /// Evaluation length `T`.
    pub eval_samples: u64,
    /// Length of the sample path the O-FSSQ is designed on.
    #[serde(default = "default_train_samples")]
    pub train_samples: usize,
    pub seeds: Vec<u64>,
    /// Label of the method the gain table is measured against.
    #[serde(default)]
    pub baseline: Option<String>,
    pub output_dir: PathBuf,
}

fn default_train_samples() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Algorithm1(Algorithm1Spec),
    Ofssq(OfssqSpec),
    LloydMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Algorithm1Spec {
    pub n: u32,
    #[serde(default = "defaults::beta")]
    pub beta: f64,
    #[serde(default = "defaults::stop_epsilon")]
    pub stop_epsilon: f64,
    #[serde(default = "defaults::max_steps")]
    pub max_steps: u64,
    #[serde(default = "defaults::check_interval")]
    pub check_interval: u64,
    #[serde(default = "defaults::min_state_visits")]
    pub min_state_visits: u64,
    /// Quantizers explored during training.
    #[serde(default = "defaults::space")]
    pub space: SpaceMode,
    #[serde(default)]
    pub start: StartLaw,
}

mod defaults {
    use super::*;

    pub fn beta() -> f64 {
        TrainConfig::default().beta
    }
    pub fn stop_epsilon() -> f64 {
        TrainConfig::default().stop_epsilon
    }
    pub fn max_steps() -> u64 {
        TrainConfig::default().max_steps
    }
    pub fn check_interval() -> u64 {
        TrainConfig::default().check_interval
    }
    pub fn min_state_visits() -> u64 {
        TrainConfig::default().min_state_visits
    }
    pub fn space() -> SpaceMode {
        SpaceMode::Full
    }
    pub fn classifier() -> ClassifierMode {
        ClassifierMode::Identity
    }
}

impl Algorithm1Spec {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n: self.n,
            beta: self.beta,
            stop_epsilon: self.stop_epsilon,
            check_interval: self.check_interval,
            max_steps: self.max_steps,
            seed,
            min_state_visits: self.min_state_visits,
            start: self.start,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfssqSpec {
    #[serde(rename = "K", alias = "k")]
    pub k: usize,
    #[serde(default = "defaults::classifier")]
    pub classifier: ClassifierMode,
}

impl MethodSpec {
    /// Name used in result rows and plot columns.
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Algorithm1(a) => format!("alg1_n{}", a.n),
            MethodSpec::Ofssq(o) => format!("ofssq_k{}", o.k),
            MethodSpec::LloydMax => "lloyd_max".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::from_json(&read_file(path)?).map_err(|e| match e {
            CliError::ConfigParse(msg) => CliError::ConfigParse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::ConfigParse(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} is not a plain file stem", self.name));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.rates.is_empty() {
            return bad("at least one rate is required".into());
        }
        if let Some(&m) = self.rates.iter().find(|&&m| !(1..=256).contains(&m)) {
            return bad(format!("rate M = {m} outside 1..=256"));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.eval_samples == 0 {
            return bad("eval_samples must be positive".into());
        }
        let mut seen = HashSet::new();
        for method in &self.methods {
            if !seen.insert(method.label()) {
                return bad(format!("method {} listed twice", method.label()));
            }
            if let MethodSpec::Algorithm1(a) = method {
                a.train_config(0).validate().map_err(|e| CliError::ConfigParse(e.to_string()))?;
            }
        }
        if let Some(b) = &self.baseline {
            if !seen.contains(b) {
                return bad(format!("baseline {b} is not one of the methods"));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<String> {
        self.methods.iter().map(MethodSpec::label).collect()
    }
}

/// A single training run for `zdc train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainJob {
    pub source: SourceSpec,
    /// Channel alphabet size `M`.
    pub levels: usize,
    pub algorithm1: Algorithm1Spec,
    #[serde(default)]
    pub seed: u64,
    pub policy_out: PathBuf,
    /// Where to write the learned Q-table, if anywhere.
    #[serde(default)]
    pub table_out: Option<PathBuf>,
}

impl TrainJob {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let job: Self = serde_json::from_str(&read_file(path)?)
            .map_err(|e| CliError::ConfigParse(format!("{}: {e}", path.display())))?;
        job.algorithm1
            .train_config(job.seed)
            .validate()
            .map_err(|e| CliError::ConfigParse(e.to_string()))?;
        Ok(job)
    }
}
