//! Held-out evaluation: pass@1 and the outcome histogram.

use std::collections::BTreeMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use drs_core::lang::{self, syntax_scores};
use drs_core::reward::{compose, Placement, RewardError, RewardInputs, RewardWeights};
use drs_core::sim::{OutcomeKind, SimRewardLadder};
use drs_core::{TokenId, Vocab};
use drs_policy::checkpoint::{self, CheckpointError, ModelKind};
use drs_policy::{DecodeConfig, ModelError, PolicyModel};
use drs_ppo::{evaluate, OutcomeCounts, RewardTask};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("checkpoint vocabulary does not match the task vocabulary")]
    VocabMismatch,
    #[error(transparent)]
    Checkpoint(CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("no tasks to evaluate")]
    Empty,
}

impl From<CheckpointError> for EvalError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::VocabMismatch => EvalError::VocabMismatch,
            other => EvalError::Checkpoint(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEval {
    pub task_id: String,
    pub outcome: OutcomeKind,
    pub passed: bool,
    pub response: String,
    /// Per-component reward sums (KL excluded, no reference at eval time).
    pub reward_sums: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pass_at_1: f64,
    pub outcomes: OutcomeCounts,
    pub tasks: Vec<TaskEval>,
}

impl EvalReport {
    pub fn success_rate(&self) -> f64 {
        self.outcomes.success as f64 / self.tasks.len() as f64
    }

    pub fn rate(&self, kind: OutcomeKind) -> f64 {
        self.outcomes.get(kind) as f64 / self.tasks.len() as f64
    }

    fn from_tasks(tasks: Vec<TaskEval>) -> Result<Self, EvalError> {
        if tasks.is_empty() {
            return Err(EvalError::Empty);
        }
        let mut outcomes = OutcomeCounts::default();
        for t in &tasks {
            outcomes.add(t.outcome);
        }
        let passed = tasks.iter().filter(|t| t.passed).count();
        Ok(EvalReport {
            pass_at_1: passed as f64 / tasks.len() as f64,
            outcomes,
            tasks,
        })
    }
}

fn score_response(
    task: &RewardTask,
    response: &[TokenId],
    syntax: &[f64],
    weights: &RewardWeights,
    ladder: &SimRewardLadder,
) -> Result<TaskEval, EvalError> {
    let e = evaluate(task, response, weights, ladder);
    let kl = vec![0.0; response.len()];
    let inputs = RewardInputs {
        code_mask: &e.code_mask,
        syntax_scores: syntax,
        diagnostics: &e.diagnostics,
        sequence: &e.sequence,
        kl: &kl,
    };
    let mut reward_sums = compose(&inputs, weights, Placement::Dense)?.component_sums();
    reward_sums.remove(drs_core::reward::KL);
    Ok(TaskEval {
        task_id: task.spec.id.clone(),
        outcome: e.outcome.kind,
        passed: e.passed,
        response: lang::detokenize(Vocab::standard(), response),
        reward_sums,
    })
}

/// Decodes one response per task and scores it.
pub fn evaluate_policy(
    policy: &PolicyModel,
    tasks: &[RewardTask],
    decode: &DecodeConfig,
    weights: &RewardWeights,
    ladder: &SimRewardLadder,
) -> Result<EvalReport, EvalError> {
    // Only consulted when `decode` samples; greedy decoding never draws.
    let mut rng = StdRng::seed_from_u64(0);
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let s = policy.sample(&task.prompt, decode, &mut rng)?;
        out.push(score_response(task, &s.response, &s.syntax, weights, ladder)?);
    }
    EvalReport::from_tasks(out)
}

/// Scores each task's own reference program, bypassing the model.
pub fn evaluate_references(
    tasks: &[RewardTask],
    weights: &RewardWeights,
    ladder: &SimRewardLadder,
) -> Result<EvalReport, EvalError> {
    let mut out = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut ids = lang::tokenize(Vocab::standard(), &task.spec.reference_program)
            .expect("validated reference")
            .ids;
        ids.push(TokenId::EOS);
        let syntax = syntax_scores(&ids);
        out.push(score_response(task, &ids, &syntax, weights, ladder)?);
    }
    EvalReport::from_tasks(out)
}

/// Loads a policy checkpoint and evaluates it.
pub fn evaluate_checkpoint(
    path: &Path,
    tasks: &[RewardTask],
    decode: &DecodeConfig,
    weights: &RewardWeights,
    ladder: &SimRewardLadder,
) -> Result<EvalReport, EvalError> {
    let net = checkpoint::load(path, ModelKind::Policy)?;
    evaluate_policy(&PolicyModel { net }, tasks, decode, weights, ladder)
}
