//! Supervised next-token pretraining on prompt/program pairs.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use drs_core::TokenId;

use crate::model::ModelError;
use crate::optim::{clip_grad_norm, Adam, AdamConfig};
use crate::sample::{backward_logp, logp_with_tape, Constraint};
use crate::PolicyModel;

/// A prompt and its target response (program tokens followed by EOS).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            lr: 1e-3,
            batch_size: 16,
            grad_clip: 1.0,
        }
    }
}

/// Mean negative log-likelihood of the response tokens.
pub fn example_loss(policy: &PolicyModel, ex: &Example) -> Result<f64, ModelError> {
    let (lp, _) = logp_with_tape(&policy.net, &ex.prompt, &ex.response, Constraint::Off, ex.response.len())?;
    Ok(-lp.iter().sum::<f64>() / lp.len() as f64)
}

/// Adam state carried across calls so training can be interleaved with
/// evaluation.
pub struct Pretrainer {
    pub cfg: PretrainConfig,
    adam: Adam,
}

impl Pretrainer {
    pub fn new(cfg: PretrainConfig, policy: &PolicyModel) -> Self {
        Pretrainer {
            cfg,
            adam: Adam::new(AdamConfig::with_lr(cfg.lr), policy.net.num_params()),
        }
    }

    /// One update on `batch`; returns the mean token NLL before the update.
    pub fn step(&mut self, policy: &mut PolicyModel, batch: &[&Example]) -> Result<f64, ModelError> {
        let tokens: usize = batch.iter().map(|e| e.response.len()).sum();
        let mut grad = vec![0.0; policy.net.num_params()];
        let mut loss = 0.0;
        for ex in batch {
            let (lp, tape) =
                logp_with_tape(&policy.net, &ex.prompt, &ex.response, Constraint::Off, ex.response.len())?;
            loss -= lp.iter().sum::<f64>();
            let d = vec![-1.0 / tokens as f64; lp.len()];
            backward_logp(&policy.net, &tape, &d, &mut grad);
        }
        clip_grad_norm(&mut grad, self.cfg.grad_clip);
        self.adam.step(policy.net.params_mut(), &grad);
        Ok(loss / tokens as f64)
    }
}

/// Trains for `steps` random mini-batches; returns the loss per step.
pub fn pretrain_supervised<R: Rng>(
    policy: &mut PolicyModel,
    data: &[Example],
    steps: usize,
    cfg: PretrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ModelError> {
    let mut trainer = Pretrainer::new(cfg, policy);
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch: Vec<&Example> = data.choose_multiple(rng, cfg.batch_size.min(data.len())).collect();
        losses.push(trainer.step(policy, &batch)?);
    }
    Ok(losses)
}
