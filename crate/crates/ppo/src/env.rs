//! Turns a sampled response into verifiable feedback for one task.

use drs_core::dfg::{dfg_match, extract_dfg, DataFlowGraph};
use drs_core::lang::{parse_ids, parse_source, TokenizedProgram};
use drs_core::lint::{lint, Diagnostic, LintContext};
use drs_core::reward::{self, RewardWeights, SequenceScore};
use drs_core::sim::{run_program, sim_reward, OutcomeKind, SimOutcome, SimRewardLadder, TaskSpec};
use drs_core::{TokenId, Vocab};

/// A task together with its encoded prompt and precomputed reference data.
#[derive(Debug, Clone)]
pub struct RewardTask {
    pub spec: TaskSpec,
    pub prompt: Vec<TokenId>,
    pub reference_dfg: DataFlowGraph,
    pub lint_ctx: LintContext,
}

impl RewardTask {
    /// Fails if the reference program does not parse.
    pub fn new(spec: TaskSpec, prompt: Vec<TokenId>) -> Result<Self, String> {
        let (_, ast) = parse_source(&spec.reference_program).map_err(|e| format!("{}: {e}", spec.id))?;
        let lint_ctx = LintContext {
            objects: Some(spec.initial_world.objects.keys().cloned().collect()),
        };
        Ok(RewardTask {
            reference_dfg: extract_dfg(&ast),
            spec,
            prompt,
            lint_ctx,
        })
    }
}

/// Everything the reward needs to know about one response.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub outcome: SimOutcome,
    /// Success with every post-hoc assertion satisfied.
    pub passed: bool,
    pub diagnostics: Vec<Diagnostic>,
    /// One entry per enabled optional component.
    pub sequence: Vec<SequenceScore>,
    pub code_mask: Vec<bool>,
}

/// Code tokens are everything before a terminating EOS.
pub fn code_mask(response: &[TokenId]) -> Vec<bool> {
    let mut mask = vec![true; response.len()];
    if response.last() == Some(&TokenId::EOS) {
        *mask.last_mut().expect("non-empty") = false;
    }
    mask
}

/// Sequence scores a failed parse would produce for the enabled components.
pub fn parse_failure_scores(weights: &RewardWeights, ladder: &SimRewardLadder) -> Vec<SequenceScore> {
    weights
        .opt
        .keys()
        .map(|name| SequenceScore {
            name: name.clone(),
            score: if name == reward::SIM { ladder.parse_error } else { 0.0 },
            span: None,
        })
        .collect()
}

pub fn evaluate(task: &RewardTask, response: &[TokenId], weights: &RewardWeights, ladder: &SimRewardLadder) -> Evaluation {
    let vocab = Vocab::standard();
    let mask = code_mask(response);
    let ast = parse_ids(vocab, response).ok();
    let (outcome, passed, diagnostics, dfg_score) = match &ast {
        None => (
            SimOutcome {
                kind: OutcomeKind::ParseError,
                fail_span: None,
                detail: "parse error".into(),
            },
            false,
            Vec::new(),
            0.0,
        ),
        Some(ast) => {
            let run = run_program(ast, &task.spec);
            let passed = run.passes_tests(&task.spec);
            let code_len = mask.iter().filter(|&&m| m).count();
            let prog = TokenizedProgram::with_mask(vocab, response[..code_len].to_vec(), vec![true; code_len]);
            let diags = lint(ast, &prog, &task.lint_ctx);
            let d = dfg_match(&extract_dfg(ast), &task.reference_dfg);
            (run.outcome, passed, diags, d)
        }
    };
    let sequence = weights
        .opt
        .keys()
        .map(|name| {
            let (score, span) = match name.as_str() {
                reward::SIM => sim_reward(&outcome, ladder),
                reward::PASS => (if passed { 1.0 } else { 0.0 }, None),
                reward::DFG => (dfg_score, None),
                _ => (0.0, None),
            };
            SequenceScore {
                name: name.clone(),
                score,
                span,
            }
        })
        .collect();
    Evaluation {
        outcome,
        passed,
        diagnostics,
        sequence,
        code_mask: mask,
    }
}
