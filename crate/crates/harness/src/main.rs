use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drs_core::lang::parse_source;
use drs_core::lint::{lint, rules_table, LintContext};
use drs_harness::config::{ExperimentConfig, ExperimentKind};
use drs_harness::corpus::{self, read_tasks};
use drs_harness::eval::{evaluate_checkpoint, evaluate_references, EvalReport};
use drs_harness::experiment::{self, reward_tasks, run_experiment, run_pretrain, RunOptions};
use drs_harness::report;

#[derive(Parser)]
#[command(name = "drs", version, about = "Dense-reward PPO fine-tuning for RoboLang program generation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the preset for --kind.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Preset used when no --config is given.
    #[arg(long, global = true, value_parser = parse_kind, default_value = "robotics")]
    kind: ExperimentKind,
    /// Overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root for run directories; overrides `output_dir`.
    #[arg(long, global = true, env = "DRS_RUN_DIR")]
    run_root: Option<PathBuf>,
    /// Progress on stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print the preset configuration for --kind.
    InitConfig,
    /// Generate and write the training and held-out corpora.
    GenCorpus {
        /// Output directory for train.jsonl and eval.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Corpus preparation and supervised warm-up only.
    Pretrain,
    /// Full run: warm-up, PPO, evaluation and artifacts.
    Train {
        /// One PPO step on four tasks, writing every artifact.
        #[arg(long)]
        dry_run: bool,
        /// Write per-trajectory reward components to rewards.jsonl.
        #[arg(long)]
        dump_rewards: bool,
        /// Start PPO from this policy checkpoint instead of warming up.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint on a corpus.
    Eval {
        /// Policy checkpoint; omit together with --references to score the
        /// reference programs themselves.
        #[arg(long, required_unless_present = "references")]
        checkpoint: Option<PathBuf>,
        /// JSONL corpus; defaults to the run directory's held-out set.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        references: bool,
        /// Also write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render the before/after tables of a run directory.
    Report {
        /// Defaults to the configured run directory.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Print machine-readable rows instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Lint a RoboLang source file, or list the rules.
    Lint {
        #[arg(long)]
        rules: bool,
        #[arg(required_unless_present = "rules")]
        file: Option<PathBuf>,
    },
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    match s {
        "general" => Ok(ExperimentKind::General),
        "robotics" => Ok(ExperimentKind::Robotics),
        _ => Err(format!("unknown kind {s:?}; expected general or robotics")),
    }
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::for_kind(self.kind),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn run_dir(&self, cfg: &ExperimentConfig) -> PathBuf {
        cfg.run_dir(self.run_root.as_deref())
    }
}

fn print_eval(r: &EvalReport) {
    println!("pass@1 {:.3}", r.pass_at_1);
    println!(
        "parse {}  simulation {}  completion {}  success {}  total {}",
        r.outcomes.parse_error,
        r.outcomes.simulation_error,
        r.outcomes.completion_error,
        r.outcomes.success,
        r.tasks.len()
    );
}

fn lint_file(path: &Path) -> Result<()> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (prog, ast) = parse_source(&src).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    let diags = lint(&ast, &prog, &LintContext::default());
    for d in &diags {
        println!("{} {:?} tokens {}: {}", d.rule.code(), d.severity, d.token_span, d.message);
    }
    if diags.is_empty() {
        println!("clean");
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let common = &cli.common;
    match &cli.command {
        Command::InitConfig => print!("{}", common.config()?.to_toml()),
        Command::GenCorpus { out } => {
            let cfg = common.config()?;
            let seed = common.seed.unwrap_or(cfg.corpus.seed);
            let c = &cfg.corpus;
            let all = corpus::generate_corpus(seed, c.n_train + c.n_eval, &c.mix)?;
            let (train, eval) = corpus::split_holdout(all, c.n_eval);
            std::fs::create_dir_all(out)?;
            corpus::write_tasks(&out.join("train.jsonl"), &train)?;
            corpus::write_tasks(&out.join("eval.jsonl"), &eval)?;
            println!("wrote {} training and {} held-out tasks to {}", train.len(), eval.len(), out.display());
        }
        Command::Pretrain => {
            let cfg = common.config()?;
            let dir = common.run_dir(&cfg);
            let (outcome, before) = run_pretrain(&cfg, &dir, common.verbose)?;
            let last = outcome.checks.last().map_or(0.0, |c| c.validation_success);
            println!("warm-up: {} steps, validation rate {last:.3}", outcome.steps);
            print_eval(&before);
            println!("run directory: {}", dir.display());
        }
        Command::Train {
            dry_run,
            dump_rewards,
            init,
        } => {
            let cfg = common.config()?;
            let dir = common.run_dir(&cfg);
            let opts = RunOptions {
                dry_run: *dry_run,
                dump_rewards: *dump_rewards,
                init_policy: init.clone(),
                verbose: common.verbose,
            };
            let summary = run_experiment(&cfg, &dir, &opts)?;
            print!("{}", report::render_reports(&summary.before, &summary.after).text);
            if summary.halted {
                println!("training halted early by the KL guard after {} steps", summary.steps_run);
            }
            println!("run directory: {}", dir.display());
        }
        Command::Eval {
            checkpoint,
            corpus: corpus_path,
            references,
            out,
        } => {
            let cfg = common.config()?;
            let path = corpus_path.clone().unwrap_or_else(|| common.run_dir(&cfg).join(experiment::EVAL_CORPUS));
            let tasks = reward_tasks(&read_tasks(&path).with_context(|| format!("reading {}", path.display()))?)?;
            let r = match (checkpoint, references) {
                (_, true) => evaluate_references(&tasks, &cfg.weights, &cfg.ladder)?,
                (Some(ckpt), false) => evaluate_checkpoint(ckpt, &tasks, &cfg.eval_decode, &cfg.weights, &cfg.ladder)?,
                (None, false) => bail!("--checkpoint is required"),
            };
            print_eval(&r);
            if let Some(out) = out {
                std::fs::write(out, serde_json::to_string_pretty(&r)?)?;
            }
        }
        Command::Report { run_dir, json } => {
            let dir = match run_dir {
                Some(d) => d.clone(),
                None => common.run_dir(&common.config()?),
            };
            let r = report::report(&dir)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r.rows)?);
            } else {
                print!("{}", r.text);
            }
        }
        Command::Lint { rules, file } => {
            if *rules {
                print!("{}", rules_table());
            }
            if let Some(f) = file {
                lint_file(f)?;
            }
        }
    }
    Ok(())
}
