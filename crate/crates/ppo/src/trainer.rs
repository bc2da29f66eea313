//! Rollout, evaluation and optimization phases of one PPO step.

use std::collections::BTreeMap;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use drs_core::reward::{compose, kl_per_token, Placement, RewardInputs, RewardVector, RewardWeights};
use drs_core::sim::{OutcomeKind, SimOutcome, SimRewardLadder};
use drs_core::TokenId;
use drs_policy::sample::{backward_logp, backward_values, logp_with_tape, values_with_tape};
use drs_policy::{clip_grad_norm, Adam, AdamConfig, DecodeConfig, PolicyModel, ReferenceModel, ValueModel};

use crate::env::{evaluate, parse_failure_scores, Evaluation, RewardTask};
use crate::objective::{gae, policy_loss_with_grad, value_loss, value_loss_grad, whiten};
use crate::PpoError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub policy_lr: f64,
    pub value_lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub rollout_batch: usize,
    pub whiten: bool,
    pub grad_clip: f64,
    /// Optimization is skipped once the mean per-token KL exceeds this.
    pub kl_stop: f64,
    pub placement: Placement,
    pub decode: DecodeConfig,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            policy_lr: 1e-4,
            value_lr: 1e-4,
            gamma: 1.0,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            minibatch_size: 4,
            epochs: 4,
            rollout_batch: 16,
            whiten: true,
            grad_clip: 1.0,
            kl_stop: 10.0,
            placement: Placement::Dense,
            decode: DecodeConfig::sampling(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.rollout_batch == 0 {
            return bad("epochs, minibatch_size and rollout_batch must be positive");
        }
        if self.policy_lr < 0.0 || self.value_lr < 0.0 || self.grad_clip <= 0.0 {
            return bad("learning rates must be non-negative and grad_clip positive");
        }
        Ok(())
    }
}

/// One rollout record.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub task_id: String,
    pub prompt: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub logp_old: Vec<f64>,
    pub logp_ref: Vec<f64>,
    pub values_old: Vec<f64>,
    pub rewards: RewardVector,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    pub code_mask: Vec<bool>,
    pub syntax: Vec<f64>,
    pub outcome: SimOutcome,
    pub passed: bool,
}

/// Counts per outcome class, in worst-to-best order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub parse_error: usize,
    pub simulation_error: usize,
    pub completion_error: usize,
    pub success: usize,
}

impl OutcomeCounts {
    pub fn add(&mut self, kind: OutcomeKind) {
        *self.get_mut(kind) += 1;
    }

    fn get_mut(&mut self, kind: OutcomeKind) -> &mut usize {
        match kind {
            OutcomeKind::ParseError => &mut self.parse_error,
            OutcomeKind::SimulationError => &mut self.simulation_error,
            OutcomeKind::CompletionError => &mut self.completion_error,
            OutcomeKind::Success => &mut self.success,
        }
    }

    pub fn get(&self, kind: OutcomeKind) -> usize {
        match kind {
            OutcomeKind::ParseError => self.parse_error,
            OutcomeKind::SimulationError => self.simulation_error,
            OutcomeKind::CompletionError => self.completion_error,
            OutcomeKind::Success => self.success,
        }
    }

    pub fn total(&self) -> usize {
        OutcomeKind::ALL.iter().map(|&k| self.get(k)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean per-trajectory sum of the composite reward.
    pub mean_return: f64,
    /// Mean per-trajectory sum of each reward component.
    pub component_means: BTreeMap<String, f64>,
    /// Mean per-token `log π - log π_ref` over the rollout batch.
    pub kl_mean: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    /// Largest `|ρ - 1|` in the first mini-batch of the step.
    pub first_ratio_dev: f64,
    pub outcomes: OutcomeCounts,
    pub pass_rate: f64,
    pub mean_response_len: f64,
    /// The KL guard tripped and no update was made.
    pub stopped: bool,
}

pub struct PpoTrainer {
    pub cfg: PpoConfig,
    pub weights: RewardWeights,
    pub ladder: SimRewardLadder,
    pub policy: PolicyModel,
    pub value: ValueModel,
    reference: ReferenceModel,
    policy_opt: Adam,
    value_opt: Adam,
    rng: StdRng,
    steps: usize,
}

impl PpoTrainer {
    /// Snapshots the reference model from `policy`.
    pub fn new(
        cfg: PpoConfig,
        weights: RewardWeights,
        ladder: SimRewardLadder,
        policy: PolicyModel,
        value: ValueModel,
    ) -> Result<Self, PpoError> {
        cfg.validate()?;
        weights.validate()?;
        let reference = ReferenceModel::snapshot(&policy);
        Ok(PpoTrainer {
            policy_opt: Adam::new(AdamConfig::with_lr(cfg.policy_lr), policy.net.num_params()),
            value_opt: Adam::new(AdamConfig::with_lr(cfg.value_lr), value.net.num_params()),
            rng: StdRng::seed_from_u64(cfg.seed),
            cfg,
            weights,
            ladder,
            policy,
            value,
            reference,
            steps: 0,
        })
    }

    pub fn reference(&self) -> &ReferenceModel {
        &self.reference
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Samples and scores one response per task.
    pub fn rollout(&mut self, tasks: &[&RewardTask]) -> Result<Vec<Trajectory>, PpoError> {
        let mut out = Vec::with_capacity(tasks.len());
        for task in tasks {
            let s = self.policy.sample(&task.prompt, &self.cfg.decode, &mut self.rng)?;
            // Rescored on the full-sequence path the reference uses, so that
            // identical weights give bit-identical log-probabilities.
            let logp_old = self.policy.score(&task.prompt, &s.response, &self.cfg.decode)?;
            let logp_ref = self.reference.score(&task.prompt, &s.response, &self.cfg.decode)?;
            let values_old = self.value.values(&task.prompt, &s.response)?;
            let kl = kl_per_token(&logp_old, &logp_ref)?;
            let eval = evaluate(task, &s.response, &self.weights, &self.ladder);
            let (eval, rewards) = match self.rewards(&eval, &s.syntax, &kl) {
                Ok(r) => (eval, r),
                Err(_) => {
                    // Fall back to the parse-error reward rather than dropping the sample.
                    let fallback = Evaluation {
                        outcome: SimOutcome {
                            kind: OutcomeKind::ParseError,
                            fail_span: None,
                            detail: "evaluation failed".into(),
                        },
                        passed: false,
                        diagnostics: Vec::new(),
                        sequence: parse_failure_scores(&self.weights, &self.ladder),
                        code_mask: eval.code_mask.clone(),
                    };
                    let r = self.rewards(&fallback, &s.syntax, &kl)?;
                    (fallback, r)
                }
            };
            let (advantages, returns) = gae(&rewards.total, &values_old, self.cfg.gamma, self.cfg.gae_lambda)?;
            out.push(Trajectory {
                task_id: task.spec.id.clone(),
                prompt: task.prompt.clone(),
                response: s.response,
                logp_old,
                logp_ref,
                values_old,
                rewards,
                advantages,
                returns,
                code_mask: eval.code_mask,
                syntax: s.syntax,
                outcome: eval.outcome,
                passed: eval.passed,
            });
        }
        Ok(out)
    }

    fn rewards(&self, eval: &Evaluation, syntax: &[f64], kl: &[f64]) -> Result<RewardVector, PpoError> {
        let inputs = RewardInputs {
            code_mask: &eval.code_mask,
            syntax_scores: syntax,
            diagnostics: &eval.diagnostics,
            sequence: &eval.sequence,
            kl,
        };
        Ok(compose(&inputs, &self.weights, self.cfg.placement)?)
    }

    /// Full Rollout → Evaluation → Optimization step.
    pub fn train_step(&mut self, tasks: &[&RewardTask]) -> Result<StepMetrics, PpoError> {
        self.train_step_traced(tasks).map(|(m, _)| m)
    }

    /// [`Self::train_step`], also returning the scored rollout batch.
    pub fn train_step_traced(&mut self, tasks: &[&RewardTask]) -> Result<(StepMetrics, Vec<Trajectory>), PpoError> {
        let trajs = self.rollout(tasks)?;
        let n = trajs.len() as f64;
        let tokens: usize = trajs.iter().map(|t| t.response.len()).sum();
        let kl_mean = trajs
            .iter()
            .flat_map(|t| t.logp_old.iter().zip(&t.logp_ref).map(|(a, b)| a - b))
            .sum::<f64>()
            / tokens as f64;
        let mut outcomes = OutcomeCounts::default();
        let mut component_means = BTreeMap::new();
        for t in &trajs {
            outcomes.add(t.outcome.kind);
            for (k, v) in t.rewards.component_sums() {
                *component_means.entry(k).or_insert(0.0) += v / n;
            }
        }
        let mut m = StepMetrics {
            step: self.steps,
            mean_return: trajs.iter().map(|t| t.rewards.return_sum()).sum::<f64>() / n,
            component_means,
            kl_mean,
            policy_loss: 0.0,
            value_loss: 0.0,
            clip_fraction: 0.0,
            first_ratio_dev: 0.0,
            outcomes,
            pass_rate: trajs.iter().filter(|t| t.passed).count() as f64 / n,
            mean_response_len: tokens as f64 / n,
            stopped: kl_mean > self.cfg.kl_stop,
        };
        self.steps += 1;
        if m.stopped {
            return Ok((m, trajs));
        }
        let stats = self.optimize(&trajs)?;
        m.policy_loss = stats.policy_loss;
        m.value_loss = stats.value_loss;
        m.clip_fraction = stats.clip_fraction;
        m.first_ratio_dev = stats.first_ratio_dev;
        Ok((m, trajs))
    }

    /// K epochs of shuffled mini-batch updates on a rollout batch.
    pub fn optimize(&mut self, trajs: &[Trajectory]) -> Result<OptimStats, PpoError> {
        let advantages: Vec<Vec<f64>> = if self.cfg.whiten {
            let flat: Vec<f64> = trajs.iter().flat_map(|t| t.advantages.iter().copied()).collect();
            let w = whiten(&flat)?;
            let mut at = 0;
            trajs
                .iter()
                .map(|t| {
                    let v = w[at..at + t.advantages.len()].to_vec();
                    at += t.advantages.len();
                    v
                })
                .collect()
        } else {
            trajs.iter().map(|t| t.advantages.clone()).collect()
        };
        let decode = self.cfg.decode;
        let mut stats = OptimStats::default();
        let mut batches = 0usize;
        let mut order: Vec<usize> = (0..trajs.len()).collect();
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for (mb, chunk) in order.chunks(self.cfg.minibatch_size).enumerate() {
                // Policy update.
                let mut tapes = Vec::with_capacity(chunk.len());
                let (mut new, mut old, mut adv) = (Vec::new(), Vec::new(), Vec::new());
                for &i in chunk {
                    let t = &trajs[i];
                    let (lp, tape) =
                        logp_with_tape(&self.policy.net, &t.prompt, &t.response, decode.constraint, decode.max_new_tokens)?;
                    new.extend_from_slice(&lp);
                    old.extend_from_slice(&t.logp_old);
                    adv.extend_from_slice(&advantages[i]);
                    tapes.push(tape);
                }
                let pl = policy_loss_with_grad(&new, &old, &adv, self.cfg.clip_eps)?;
                if epoch == 0 && mb == 0 {
                    stats.first_ratio_dev = pl.max_ratio_dev;
                }
                let mut grad = vec![0.0; self.policy.net.num_params()];
                let mut at = 0;
                for (&i, tape) in chunk.iter().zip(&tapes) {
                    let len = trajs[i].response.len();
                    backward_logp(&self.policy.net, tape, &pl.grad[at..at + len], &mut grad);
                    at += len;
                }
                drop(tapes);
                clip_grad_norm(&mut grad, self.cfg.grad_clip);
                self.policy_opt.step(self.policy.net.params_mut(), &grad);

                // Value update.
                let mut vtapes = Vec::with_capacity(chunk.len());
                let (mut vals, mut rets) = (Vec::new(), Vec::new());
                for &i in chunk {
                    let t = &trajs[i];
                    let (v, tape, rows) = values_with_tape(&self.value.net, &t.prompt, &t.response)?;
                    vals.extend_from_slice(&v);
                    rets.extend_from_slice(&t.returns);
                    vtapes.push((tape, rows));
                }
                let vl = value_loss(&vals, &rets)?;
                let vg = value_loss_grad(&vals, &rets)?;
                let mut grad = vec![0.0; self.value.net.num_params()];
                let mut at = 0;
                for (&i, (tape, rows)) in chunk.iter().zip(&vtapes) {
                    let t = &trajs[i];
                    let len = t.response.len();
                    backward_values(&self.value.net, tape, *rows, t.prompt.len(), &vg[at..at + len], &mut grad);
                    at += len;
                }
                clip_grad_norm(&mut grad, self.cfg.grad_clip);
                self.value_opt.step(self.value.net.params_mut(), &grad);

                stats.policy_loss += pl.loss;
                stats.value_loss += vl;
                stats.clip_fraction += pl.clip_fraction;
                batches += 1;
            }
        }
        let b = batches.max(1) as f64;
        stats.policy_loss /= b;
        stats.value_loss /= b;
        stats.clip_fraction /= b;
        Ok(stats)
    }
}

/// Averages over all mini-batch updates of one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub first_ratio_dev: f64,
}
