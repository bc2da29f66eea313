//! Policy, value and reference models for RoboLang generation.
//!
//! All three share one decoder-only transformer architecture
//! ([`model::Transformer`]); the policy reads out vocabulary logits, the value
//! model a scalar per position, and the reference model is a frozen copy of
//! the policy taken before fine-tuning.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod sample;

use rand::Rng;
use sha2::{Digest, Sha256};

use drs_core::TokenId;

pub use model::{ModelDims, ModelError, Transformer};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use pretrain::{pretrain_supervised, Example, PretrainConfig, Pretrainer};
pub use sample::{Constraint, DecodeConfig, Sampled};

/// Hex SHA-256 over the little-endian bytes of a parameter buffer.
pub fn param_checksum(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// π_θ: next-token distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub net: Transformer,
}

impl PolicyModel {
    pub fn new<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        PolicyModel {
            net: Transformer::new(dims, dims.vocab, false, rng),
        }
    }

    pub fn sample<R: Rng>(&self, prompt: &[TokenId], cfg: &DecodeConfig, rng: &mut R) -> Result<Sampled, ModelError> {
        sample::sample(&self.net, prompt, cfg, rng)
    }

    pub fn score(&self, prompt: &[TokenId], response: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<f64>, ModelError> {
        sample::score(&self.net, prompt, response, cfg.constraint, cfg.max_new_tokens)
    }

    pub fn logits(&self, ids: &[TokenId]) -> Result<ndarray::Array2<f64>, ModelError> {
        self.net.forward(ids)
    }

    pub fn checksum(&self) -> String {
        param_checksum(self.net.params())
    }
}

/// V_φ: independent trunk with a scalar readout, initialized to output zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub net: Transformer,
}

impl ValueModel {
    pub fn new<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        ValueModel {
            net: Transformer::new(dims, 1, true, rng),
        }
    }

    /// Separate copy of the policy's trunk under a zero scalar readout.
    pub fn from_policy_trunk(policy: &PolicyModel) -> Self {
        let dims = *policy.net.dims();
        let trunk = policy.net.layout().head_offset();
        let mut params = policy.net.params()[..trunk].to_vec();
        params.resize(model::Layout::new(&dims, 1).total(), 0.0);
        ValueModel {
            net: Transformer::from_params(dims, 1, params).expect("same trunk layout"),
        }
    }

    /// One value per response position.
    pub fn values(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        sample::values_with_tape(&self.net, prompt, response).map(|(v, _, _)| v)
    }

    pub fn checksum(&self) -> String {
        param_checksum(self.net.params())
    }
}

/// π_ref: read-only snapshot of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceModel {
    net: Transformer,
}

impl ReferenceModel {
    pub fn snapshot(policy: &PolicyModel) -> Self {
        ReferenceModel {
            net: policy.net.clone(),
        }
    }

    pub fn net(&self) -> &Transformer {
        &self.net
    }

    pub fn score(&self, prompt: &[TokenId], response: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<f64>, ModelError> {
        sample::score(&self.net, prompt, response, cfg.constraint, cfg.max_new_tokens)
    }

    pub fn checksum(&self) -> String {
        param_checksum(self.net.params())
    }
}
