//! Experiment configuration, stored as TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use drs_core::reward::{RewardWeights, DFG, LINT, PASS, SIM, SYNC};
use drs_core::sim::SimRewardLadder;
use drs_policy::{DecodeConfig, ModelDims, PretrainConfig};
use drs_ppo::PpoConfig;

use crate::corpus::DifficultyMix;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{kind:?} experiments use components {expected:?}, config enables {found:?}")]
    ComponentSet {
        kind: ExperimentKind,
        expected: Vec<String>,
        found: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Unit tests and data-flow match as the optional rewards.
    General,
    /// Simulator feedback as the optional reward.
    Robotics,
}

impl ExperimentKind {
    /// Optional reward components this kind enables.
    pub fn optional_components(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::General => &[DFG, PASS],
            ExperimentKind::Robotics => &[SIM],
        }
    }

    /// Every active reward component, KL excluded.
    pub fn components(self) -> Vec<&'static str> {
        let mut v = vec![SYNC, LINT];
        v.extend(self.optional_components());
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::General => "general",
            ExperimentKind::Robotics => "robotics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Seed of the task generator; independent of the training seed so that
    /// runs with different seeds share one held-out set.
    pub seed: u64,
    pub n_train: usize,
    pub n_eval: usize,
    pub mix: DifficultyMix,
    /// Pre-generated corpora; generated into the run directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_path: Option<PathBuf>,
}

/// Supervised warm-up that stops once the policy is competent but imperfect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainBudget {
    pub optim: PretrainConfig,
    pub max_steps: usize,
    /// Validation checks happen every this many steps.
    pub check_every: usize,
    /// Training tasks held back from supervised updates for the checks.
    pub n_validation: usize,
    /// Stop at the first check whose validation success reaches this rate.
    pub stop_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Seeds model initialization, pretraining and PPO; `ppo.seed` is
    /// overwritten with a value derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// PPO steps after pretraining.
    pub steps: usize,
    /// Held-out evaluation and checkpoint refresh every this many steps; 0
    /// disables both.
    pub eval_every: usize,
    pub weights: RewardWeights,
    pub ladder: SimRewardLadder,
    pub ppo: PpoConfig,
    pub eval_decode: DecodeConfig,
    pub model: ModelDims,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainBudget,
    pub value_init: ValueInit,
}

/// Starting weights of the value network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueInit {
    Random,
    /// A copy of the warmed-up policy's trunk under a zero readout.
    PolicyTrunk,
}

impl ExperimentConfig {
    fn base(kind: ExperimentKind, weights: RewardWeights, minibatch_size: usize) -> Self {
        ExperimentConfig {
            kind,
            seed: 0,
            output_dir: PathBuf::from("runs"),
            steps: 300,
            eval_every: 50,
            weights,
            ladder: SimRewardLadder::default(),
            ppo: PpoConfig {
                minibatch_size,
                rollout_batch: 64,
                policy_lr: 3e-5,
                value_lr: 3e-5,
                ..PpoConfig::default()
            },
            eval_decode: DecodeConfig::greedy(),
            model: ModelDims {
                tie_output: true,
                ..ModelDims::default()
            },
            corpus: CorpusConfig {
                seed: 12345,
                n_train: 2000,
                n_eval: 200,
                mix: DifficultyMix::default(),
                train_path: None,
                eval_path: None,
            },
            pretrain: PretrainBudget {
                optim: PretrainConfig::default(),
                max_steps: 4000,
                check_every: 20,
                n_validation: 200,
                stop_at: 0.25,
            },
            value_init: ValueInit::PolicyTrunk,
        }
    }

    /// Syntax, lint, data-flow and unit-test rewards (0.1/0.1/0.1/0.7, β 0.1).
    pub fn general() -> Self {
        let weights = RewardWeights {
            sync: 0.1,
            lint: 0.1,
            kl: 0.1,
            opt: BTreeMap::from([(DFG.to_string(), 0.1), (PASS.to_string(), 0.7)]),
        };
        Self::base(ExperimentKind::General, weights, 8)
    }

    /// Syntax, lint and simulator rewards (0.1/0.1/0.8, β 0.9).
    pub fn robotics() -> Self {
        let weights = RewardWeights {
            sync: 0.1,
            lint: 0.1,
            kl: 0.9,
            opt: BTreeMap::from([(SIM.to_string(), 0.8)]),
        };
        Self::base(ExperimentKind::Robotics, weights, 4)
    }

    pub fn for_kind(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::General => Self::general(),
            ExperimentKind::Robotics => Self::robotics(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.weights.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let expected: BTreeSet<&str> = self.kind.optional_components().iter().copied().collect();
        let found: BTreeSet<&str> = self.weights.opt.keys().map(String::as_str).collect();
        if expected != found {
            return Err(ConfigError::ComponentSet {
                kind: self.kind,
                expected: expected.into_iter().map(String::from).collect(),
                found: found.into_iter().map(String::from).collect(),
            });
        }
        self.ppo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.corpus.mix.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let m = &self.model;
        if m.n_heads == 0 || m.d_model % m.n_heads != 0 || m.n_layers == 0 || m.d_ff == 0 {
            return bad(format!("model dims {m:?} are inconsistent"));
        }
        if m.vocab != drs_core::Vocab::standard().len() {
            return bad(format!("model vocab {} does not match the vocabulary", m.vocab));
        }
        if self.corpus.n_train == 0 || self.corpus.n_eval == 0 {
            return bad("corpus needs training and evaluation tasks".into());
        }
        if self.pretrain.n_validation >= self.corpus.n_train {
            return bad("n_validation must leave training tasks for pretraining".into());
        }
        if self.pretrain.check_every == 0 {
            return bad("pretrain.check_every must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.pretrain.stop_at) {
            return bad("pretrain.stop_at must lie in [0, 1]".into());
        }
        let longest_prompt = 16;
        for (name, d) in [("ppo.decode", &self.ppo.decode), ("eval_decode", &self.eval_decode)] {
            if d.max_new_tokens == 0 || d.max_new_tokens + longest_prompt > m.max_len {
                return bad(format!("{name}.max_new_tokens must be in 1..={}", m.max_len - longest_prompt));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Run directory under `root` (or `output_dir`), named by kind and seed.
    pub fn run_dir(&self, root: Option<&Path>) -> PathBuf {
        root.unwrap_or(&self.output_dir).join(format!("{}-seed{}", self.kind.name(), self.seed))
    }
}
