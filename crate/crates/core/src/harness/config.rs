//! Run configuration, read from TOML.
//!
//! ```toml
//! schema_version = 1
//! method = "gem"
//! policy = "median_length"
//! memory_fraction = 0.05
//! epochs_per_stage = 4
//!
//! [optimizer]
//! method = "sgd"
//! lr = 0.1
//! ```
//!
//! Omitted fields take their defaults; `domains` defaults to the three-domain
//! desk benchmark for the run's seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::domain::DomainSpec;
use crate::autodiff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::lifelong::{RegularizerConfig, SelectionPolicy};
use crate::model::ModelConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Finetune,
    Ewc,
    OnlineEwc,
    Si,
    Kd,
    Gem,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Finetune,
        Method::Ewc,
        Method::OnlineEwc,
        Method::Si,
        Method::Kd,
        Method::Gem,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "finetune",
            Method::Ewc => "ewc",
            Method::OnlineEwc => "online_ewc",
            Method::Si => "si",
            Method::Kd => "kd",
            Method::Gem => "gem",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    BeamLm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Empty means [`default_domains`](super::default_domains) for the seed.
    pub domains: Vec<DomainSpec>,
    pub method: Method,
    /// Memory selection policy; GEM only.
    pub policy: Option<SelectionPolicy>,
    /// Memory capacity as a fraction of the mean training-set size in frames.
    pub memory_fraction: f64,
    /// Absolute capacity in frames; overrides `memory_fraction` when set.
    pub memory_frames: Option<usize>,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub regularizer: RegularizerConfig,
    pub epochs_per_stage: usize,
    pub batch_size: usize,
    /// Evaluate every this many optimizer steps (0: only at stage ends).
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub lm_order: usize,
    pub lm_add_k: f64,
    pub decode: DecodeMode,
    pub beam_width: usize,
    pub lm_weight: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domains: Vec::new(),
            method: Method::Finetune,
            policy: None,
            memory_fraction: 0.05,
            memory_frames: None,
            model: ModelConfig {
                input_dim: 8,
                vocab_size: 6,
                ..ModelConfig::default()
            },
            optimizer: OptimizerConfig {
                clip_norm: Some(5.0),
                ..OptimizerConfig::sgd(0.1)
            },
            regularizer: RegularizerConfig::default(),
            epochs_per_stage: 4,
            batch_size: 8,
            eval_every: 25,
            seeds: vec![0, 1, 2, 3, 4],
            lm_order: 2,
            lm_add_k: 0.5,
            decode: DecodeMode::Greedy,
            beam_width: 8,
            lm_weight: 0.3,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// GEM with its policy, or any other method.
    pub fn with_method(&self, method: Method, policy: Option<SelectionPolicy>) -> Self {
        Self {
            method,
            policy,
            ..self.clone()
        }
    }

    /// The effective selection policy of a GEM run (median length when unset).
    pub fn gem_policy(&self) -> SelectionPolicy {
        self.policy.unwrap_or(SelectionPolicy::MedianLength)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.policy.is_some() && self.method != Method::Gem {
            return bad("a selection policy only applies to method = \"gem\"");
        }
        if !(self.memory_fraction >= 0.0 && self.memory_fraction.is_finite()) {
            return bad("memory_fraction must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.lm_order == 0 || !(self.lm_add_k > 0.0) {
            return bad("lm_order must be >= 1 and lm_add_k > 0");
        }
        if self.decode == DecodeMode::BeamLm && self.beam_width == 0 {
            return bad("beam_width must be positive");
        }
        let r = &self.regularizer;
        if !(r.lambda >= 0.0 && r.kd_weight >= 0.0 && r.kd_temperature > 0.0 && r.si_xi > 0.0) {
            return bad("need lambda >= 0, kd_weight >= 0, kd_temperature > 0, si_xi > 0");
        }
        if !(r.ewc_online_decay > 0.0 && r.ewc_online_decay <= 1.0) {
            return bad("ewc_online_decay must lie in (0, 1]");
        }
        self.model.validate()?;
        self.optimizer.validate()?;
        for d in &self.domains {
            d.validate()?;
            if d.vocab_size != self.model.vocab_size || d.input_dim != self.model.input_dim {
                return bad("domain vocab_size/input_dim must match the model");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml("schema_version = 1\nmethod = \"gem\"\npolicy = \"random\"\n").unwrap();
        assert_eq!(c.method, Method::Gem);
        assert_eq!(c.policy, Some(SelectionPolicy::Random));
        assert_eq!(c.batch_size, RunConfig::default().batch_size);
    }

    #[test]
    fn policy_requires_gem() {
        let err = RunConfig::from_toml("method = \"kd\"\npolicy = \"random\"\n");
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn unknown_schema_and_fields_are_rejected() {
        assert!(RunConfig::from_toml("schema_version = 2\n").is_err());
        assert!(RunConfig::from_toml("epochs = 3\n").is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("lwf".parse::<Method>().is_err());
    }
}
