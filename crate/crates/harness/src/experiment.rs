//! End-to-end runs: corpus, supervised warm-up, PPO, evaluation, artifacts.
//!
//! A run directory holds:
//!
//! | file                     | contents                                        |
//! |--------------------------|-------------------------------------------------|
//! | `config.toml`            | the effective configuration                     |
//! | `corpus/train.jsonl`     | training tasks (generated runs only)            |
//! | `corpus/eval.jsonl`      | held-out tasks (generated runs only)            |
//! | `pretrain.jsonl`         | one line per validation check                   |
//! | `policy_pretrained.ckpt` | policy after warm-up, also the PPO reference    |
//! | `eval_before.json`       | [`EvalReport`] of the warmed-up policy          |
//! | `metrics.jsonl`          | one [`StepMetrics`] line per PPO step           |
//! | `eval_history.jsonl`     | periodic held-out evaluations                   |
//! | `rewards.jsonl`          | per-trajectory reward dumps (`dump_rewards`)    |
//! | `policy.ckpt`            | latest policy, refreshed at each evaluation     |
//! | `value.ckpt`             | latest value model, refreshed alongside         |
//! | `eval_after.json`        | [`EvalReport`] of the final policy              |
//! | `report.txt`             | rendered tables                                 |

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use drs_core::sim::{OutcomeKind, TaskSpec};
use drs_core::{TokenId, Vocab};
use drs_policy::checkpoint::{self, CheckpointError, ModelKind};
use drs_policy::pretrain::example_loss;
use drs_policy::{Example, PolicyModel, Pretrainer, ValueModel};
use drs_ppo::{OutcomeCounts, PpoError, PpoTrainer, RewardTask, StepMetrics, Trajectory};

use crate::config::{ConfigError, ExperimentConfig, ExperimentKind, ValueInit};
use crate::corpus::{self, encode_prompt, CorpusError};
use crate::eval::{evaluate_policy, EvalError, EvalReport};
use crate::report;

pub const CONFIG_FILE: &str = "config.toml";
pub const TRAIN_CORPUS: &str = "corpus/train.jsonl";
pub const EVAL_CORPUS: &str = "corpus/eval.jsonl";
pub const PRETRAIN_LOG: &str = "pretrain.jsonl";
pub const PRETRAINED_CKPT: &str = "policy_pretrained.ckpt";
pub const EVAL_BEFORE: &str = "eval_before.json";
pub const METRICS: &str = "metrics.jsonl";
pub const EVAL_HISTORY: &str = "eval_history.jsonl";
pub const REWARD_DUMP: &str = "rewards.jsonl";
pub const POLICY_CKPT: &str = "policy.ckpt";
pub const VALUE_CKPT: &str = "value.ckpt";
pub const EVAL_AFTER: &str = "eval_after.json";
pub const REPORT: &str = "report.txt";

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("task {id}: {reason}")]
    Task { id: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<drs_policy::ModelError> for ExperimentError {
    fn from(e: drs_policy::ModelError) -> Self {
        ExperimentError::Ppo(e.into())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// One PPO step on four tasks with a token warm-up; every artifact is
    /// still written.
    pub dry_run: bool,
    /// Write per-trajectory reward components to `rewards.jsonl`.
    pub dump_rewards: bool,
    /// Start PPO from this policy checkpoint instead of warming up.
    pub init_policy: Option<PathBuf>,
    /// Progress lines on stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainCheck {
    pub step: usize,
    /// Mean token NLL on the validation tasks' references.
    pub validation_loss: f64,
    /// Headline rate of the experiment kind on the validation tasks.
    pub validation_success: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub steps: usize,
    pub checks: Vec<PretrainCheck>,
    pub reached_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub pass_at_1: f64,
    pub outcomes: OutcomeCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RewardDump<'a> {
    step: usize,
    task_id: &'a str,
    response_len: usize,
    outcome: OutcomeKind,
    components: BTreeMap<String, f64>,
    total: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub pretrain: Option<PretrainOutcome>,
    pub before: EvalReport,
    pub after: EvalReport,
    pub steps_run: usize,
    /// The KL guard ended training early.
    pub halted: bool,
}

/// The kind's headline rate: simulator success or pass@1.
pub fn headline(kind: ExperimentKind, r: &EvalReport) -> f64 {
    match kind {
        ExperimentKind::Robotics => r.success_rate(),
        ExperimentKind::General => r.pass_at_1,
    }
}

pub fn reward_tasks(specs: &[TaskSpec]) -> Result<Vec<RewardTask>, ExperimentError> {
    specs
        .iter()
        .map(|s| {
            let prompt = encode_prompt(&s.prompt)?;
            RewardTask::new(s.clone(), prompt).map_err(|reason| ExperimentError::Task { id: s.id.clone(), reason })
        })
        .collect()
}

/// Supervised example for a task: its reference program followed by EOS.
pub fn example_for(task: &RewardTask) -> Example {
    let mut response = drs_core::lang::tokenize(Vocab::standard(), &task.spec.reference_program)
        .expect("validated reference")
        .ids;
    response.push(TokenId::EOS);
    Example {
        prompt: task.prompt.clone(),
        response,
    }
}

/// Reads the configured corpora, or generates them into `dir/corpus`.
pub fn prepare_corpus(cfg: &ExperimentConfig, dir: &Path) -> Result<(Vec<TaskSpec>, Vec<TaskSpec>), ExperimentError> {
    let c = &cfg.corpus;
    if let (Some(train), Some(eval)) = (&c.train_path, &c.eval_path) {
        return Ok((corpus::read_tasks(train)?, corpus::read_tasks(eval)?));
    }
    let all = corpus::generate_corpus(c.seed, c.n_train + c.n_eval, &c.mix)?;
    let (train, eval) = corpus::split_holdout(all, c.n_eval);
    fs::create_dir_all(dir.join("corpus"))?;
    corpus::write_tasks(&dir.join(TRAIN_CORPUS), &train)?;
    corpus::write_tasks(&dir.join(EVAL_CORPUS), &eval)?;
    Ok((train, eval))
}

fn json_line<T: Serialize>(out: &mut impl Write, value: &T) -> io::Result<()> {
    writeln!(out, "{}", serde_json::to_string(value).expect("metrics serialize"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("reports serialize") + "\n")
}

/// Supervised warm-up on `train[n_validation..]`, checking the headline
/// rate on `train[..n_validation]` and stopping once it reaches `stop_at`.
pub fn pretrain(
    cfg: &ExperimentConfig,
    policy: &mut PolicyModel,
    train: &[RewardTask],
    rng: &mut StdRng,
    mut on_check: impl FnMut(&PretrainCheck) -> io::Result<()>,
) -> Result<PretrainOutcome, ExperimentError> {
    let budget = &cfg.pretrain;
    let (validation, fit) = train.split_at(budget.n_validation.min(train.len().saturating_sub(1)));
    let fit_examples: Vec<Example> = fit.iter().map(example_for).collect();
    let val_examples: Vec<Example> = validation.iter().map(example_for).collect();
    let mut trainer = Pretrainer::new(budget.optim, policy);
    let mut checks = Vec::new();
    let mut step = 0;
    let check = |policy: &PolicyModel, step: usize| -> Result<PretrainCheck, ExperimentError> {
        let validation_loss = if val_examples.is_empty() {
            0.0
        } else {
            let mut s = 0.0;
            for ex in &val_examples {
                s += example_loss(policy, ex)?;
            }
            s / val_examples.len() as f64
        };
        let validation_success = if validation.is_empty() {
            0.0
        } else {
            headline(cfg.kind, &evaluate_policy(policy, validation, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?)
        };
        Ok(PretrainCheck {
            step,
            validation_loss,
            validation_success,
        })
    };
    while step < budget.max_steps {
        let n = budget.optim.batch_size.min(fit_examples.len());
        let batch: Vec<&Example> = fit_examples.choose_multiple(rng, n).collect();
        trainer.step(policy, &batch)?;
        step += 1;
        if step % budget.check_every == 0 || step == budget.max_steps {
            let c = check(policy, step)?;
            on_check(&c)?;
            let done = c.validation_success >= budget.stop_at;
            checks.push(c);
            if done {
                return Ok(PretrainOutcome {
                    steps: step,
                    checks,
                    reached_target: true,
                });
            }
        }
    }
    Ok(PretrainOutcome {
        steps: step,
        checks,
        reached_target: false,
    })
}

/// Shrinks a configuration to the dry-run smoke size.
pub fn dry_run_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.steps = 1;
    c.eval_every = 0;
    c.corpus.n_train = 8;
    c.corpus.n_eval = 4;
    c.corpus.train_path = None;
    c.corpus.eval_path = None;
    c.pretrain.max_steps = 2;
    c.pretrain.check_every = 1;
    c.pretrain.n_validation = 4;
    c.ppo.rollout_batch = 4;
    c.ppo.minibatch_size = c.ppo.minibatch_size.min(4);
    c
}

/// Corpus preparation and warm-up only; writes the pretrained checkpoint,
/// the warm-up log and the held-out evaluation of the warmed-up policy.
pub fn run_pretrain(cfg: &ExperimentConfig, dir: &Path, verbose: bool) -> Result<(PretrainOutcome, EvalReport), ExperimentError> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let (train_specs, eval_specs) = prepare_corpus(cfg, dir)?;
    let train = reward_tasks(&train_specs)?;
    let eval = reward_tasks(&eval_specs)?;
    let mut seeds = StdRng::seed_from_u64(cfg.seed);
    let mut init_rng = StdRng::seed_from_u64(seeds.gen());
    let mut pretrain_rng = StdRng::seed_from_u64(seeds.gen());
    let mut policy = PolicyModel::new(cfg.model, &mut init_rng);
    let mut out = BufWriter::new(File::create(dir.join(PRETRAIN_LOG))?);
    let outcome = pretrain(cfg, &mut policy, &train, &mut pretrain_rng, |c| {
        if verbose {
            eprintln!("pretrain step {}: loss {:.4}, validation success {:.3}", c.step, c.validation_loss, c.validation_success);
        }
        json_line(&mut out, c)
    })?;
    out.flush()?;
    checkpoint::save(&dir.join(PRETRAINED_CKPT), &policy.net, ModelKind::Policy)?;
    let before = evaluate_policy(&policy, &eval, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?;
    write_json(&dir.join(EVAL_BEFORE), &before)?;
    Ok((outcome, before))
}

/// Runs an experiment into `dir`, writing every artifact listed in the
/// module documentation.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, opts: &RunOptions) -> Result<RunSummary, ExperimentError> {
    let cfg = if opts.dry_run { dry_run_config(cfg) } else { cfg.clone() };
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    cfg.save(&dir.join(CONFIG_FILE))?;
    let log = |msg: String| {
        if opts.verbose {
            eprintln!("{msg}");
        }
    };

    let (train_specs, eval_specs) = prepare_corpus(&cfg, dir)?;
    let train = reward_tasks(&train_specs)?;
    let eval = reward_tasks(&eval_specs)?;
    log(format!("corpus: {} train, {} eval tasks", train.len(), eval.len()));

    let mut seeds = StdRng::seed_from_u64(cfg.seed);
    let mut init_rng = StdRng::seed_from_u64(seeds.gen());
    let mut pretrain_rng = StdRng::seed_from_u64(seeds.gen());
    let ppo_seed: u64 = seeds.gen();
    let mut batch_rng = StdRng::seed_from_u64(seeds.gen());

    let mut policy = PolicyModel::new(cfg.model, &mut init_rng);
    let value = ValueModel::new(cfg.model, &mut init_rng);
    let pretrain_outcome = match &opts.init_policy {
        Some(path) => {
            policy.net = checkpoint::load(path, ModelKind::Policy)?;
            None
        }
        None => {
            let mut out = BufWriter::new(File::create(dir.join(PRETRAIN_LOG))?);
            let outcome = pretrain(&cfg, &mut policy, &train, &mut pretrain_rng, |c| {
                log(format!(
                    "pretrain step {}: loss {:.4}, validation success {:.3}",
                    c.step, c.validation_loss, c.validation_success
                ));
                json_line(&mut out, c)
            })?;
            out.flush()?;
            Some(outcome)
        }
    };
    checkpoint::save(&dir.join(PRETRAINED_CKPT), &policy.net, ModelKind::Policy)?;
    let value = match cfg.value_init {
        ValueInit::Random => value,
        ValueInit::PolicyTrunk => ValueModel::from_policy_trunk(&policy),
    };

    let before = evaluate_policy(&policy, &eval, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?;
    write_json(&dir.join(EVAL_BEFORE), &before)?;
    log(format!("before: pass@1 {:.3}, outcomes {:?}", before.pass_at_1, before.outcomes));

    let mut ppo_cfg = cfg.ppo;
    ppo_cfg.seed = ppo_seed;
    let mut trainer = PpoTrainer::new(ppo_cfg, cfg.weights.clone(), cfg.ladder, policy, value)?;
    let mut metrics = BufWriter::new(File::create(dir.join(METRICS))?);
    let mut history = BufWriter::new(File::create(dir.join(EVAL_HISTORY))?);
    let mut dump = if opts.dump_rewards {
        Some(BufWriter::new(File::create(dir.join(REWARD_DUMP))?))
    } else {
        None
    };
    let mut halted = false;
    let mut steps_run = 0;
    for step in 0..cfg.steps {
        let n = cfg.ppo.rollout_batch.min(train.len());
        let batch: Vec<&RewardTask> = train.choose_multiple(&mut batch_rng, n).collect();
        let (m, trajs) = trainer.train_step_traced(&batch)?;
        json_line(&mut metrics, &m)?;
        if let Some(out) = dump.as_mut() {
            dump_rewards(out, step, &trajs)?;
        }
        steps_run += 1;
        log(step_line(&m));
        if m.stopped {
            log(format!("KL guard tripped at step {step} (mean KL {:.4}); halting", m.kl_mean));
            halted = true;
            break;
        }
        if cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.steps {
            let r = evaluate_policy(&trainer.policy, &eval, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?;
            log(format!("eval at step {}: pass@1 {:.3}, outcomes {:?}", step + 1, r.pass_at_1, r.outcomes));
            checkpoint::save(&dir.join(POLICY_CKPT), &trainer.policy.net, ModelKind::Policy)?;
            checkpoint::save(&dir.join(VALUE_CKPT), &trainer.value.net, ModelKind::Value)?;
            json_line(
                &mut history,
                &EvalPoint {
                    step: step + 1,
                    pass_at_1: r.pass_at_1,
                    outcomes: r.outcomes,
                },
            )?;
        }
    }
    metrics.flush()?;
    if let Some(mut out) = dump {
        out.flush()?;
    }

    let after = evaluate_policy(&trainer.policy, &eval, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?;
    json_line(
        &mut history,
        &EvalPoint {
            step: steps_run,
            pass_at_1: after.pass_at_1,
            outcomes: after.outcomes,
        },
    )?;
    history.flush()?;
    write_json(&dir.join(EVAL_AFTER), &after)?;
    checkpoint::save(&dir.join(POLICY_CKPT), &trainer.policy.net, ModelKind::Policy)?;
    checkpoint::save(&dir.join(VALUE_CKPT), &trainer.value.net, ModelKind::Value)?;
    log(format!("after: pass@1 {:.3}, outcomes {:?}", after.pass_at_1, after.outcomes));
    fs::write(dir.join(REPORT), report::render_reports(&before, &after).text)?;

    Ok(RunSummary {
        dir: dir.to_path_buf(),
        pretrain: pretrain_outcome,
        before,
        after,
        steps_run,
        halted,
    })
}

fn step_line(m: &StepMetrics) -> String {
    format!(
        "step {:>4}: return {:+.3}, kl {:.4}, clip {:.3}, pass {:.2}, outcomes {}/{}/{}/{}",
        m.step,
        m.mean_return,
        m.kl_mean,
        m.clip_fraction,
        m.pass_rate,
        m.outcomes.parse_error,
        m.outcomes.simulation_error,
        m.outcomes.completion_error,
        m.outcomes.success
    )
}

fn dump_rewards(out: &mut impl Write, step: usize, trajs: &[Trajectory]) -> io::Result<()> {
    for t in trajs {
        json_line(
            out,
            &RewardDump {
                step,
                task_id: &t.task_id,
                response_len: t.response.len(),
                outcome: t.outcome.kind,
                components: t.rewards.component_sums(),
                total: t.rewards.return_sum(),
            },
        )?;
    }
    Ok(())
}
