//! Autoregressive sampling, log-probability scoring and value readout.
//!
//! A sequence is `prompt ‖ response`; the output row at position
//! `prompt.len() - 1 + t` predicts response token `t` and carries its value
//! estimate. Log-probabilities are always taken from the policy distribution
//! itself (temperature 1, no nucleus truncation), restricted to the legal set
//! when decoding is constrained, so sampled-time and rescored values agree.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use drs_core::lang::{advance, legal_next_mask, GrammarState};
use drs_core::{TokenId, Vocab};

use crate::model::{ModelError, Tape, Transformer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    #[default]
    Off,
    /// Grammar-illegal tokens are removed before sampling.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    /// `0` selects greedy argmax decoding.
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub constraint: Constraint,
}

impl DecodeConfig {
    pub fn sampling() -> Self {
        DecodeConfig {
            temperature: 1.0,
            top_p: 0.95,
            max_new_tokens: 48,
            constraint: Constraint::Off,
        }
    }

    pub fn greedy() -> Self {
        DecodeConfig {
            temperature: 0.0,
            top_p: 1.0,
            max_new_tokens: 48,
            constraint: Constraint::Off,
        }
    }
}

/// One sampled response.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub response: Vec<TokenId>,
    /// Log-probability of each emitted token.
    pub logp: Vec<f64>,
    /// `-1` on the first grammar violation, `0` elsewhere.
    pub syntax: Vec<f64>,
    /// The legal set emptied at some step and EOS was forced.
    pub degenerate: bool,
}

impl Sampled {
    pub fn terminated(&self) -> bool {
        self.response.last() == Some(&TokenId::EOS)
    }
}

/// Legal tokens for the next slot when `remaining` slots are left
/// (this one included), keeping room for a shortest completion plus EOS.
pub fn budget_mask(state: &GrammarState, remaining: usize) -> Vec<bool> {
    let vocab = Vocab::standard();
    let mut mask = legal_next_mask(state, vocab);
    for tok in vocab.ids() {
        if mask[tok.index()] && tok != TokenId::EOS {
            let fits = advance(state, tok)
                .min_completion()
                .is_some_and(|m| m + 1 < remaining);
            mask[tok.index()] = fits;
        }
    }
    mask
}

/// Log-softmax restricted to `mask` (illegal entries become `-inf`).
fn log_softmax(logits: ArrayView1<f64>, mask: Option<&[bool]>) -> Vec<f64> {
    let ok = |i: usize| mask.is_none_or(|m| m[i]);
    let mx = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| ok(*i))
        .fold(f64::NEG_INFINITY, |a, (_, &b)| a.max(b));
    let z: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| ok(*i))
        .map(|(_, &l)| (l - mx).exp())
        .sum();
    let lz = mx + z.ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if ok(i) { l - lz } else { f64::NEG_INFINITY })
        .collect()
}

fn choose<R: Rng>(lp: &[f64], cfg: &DecodeConfig, rng: &mut R) -> usize {
    let argmax = || {
        lp.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    };
    if cfg.temperature <= 0.0 {
        return argmax();
    }
    let scaled: Vec<f64> = lp.iter().map(|&l| l / cfg.temperature).collect();
    let mx = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = scaled
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_finite())
        .map(|(i, &l)| (i, (l - mx).exp()))
        .collect();
    let z: f64 = probs.iter().map(|(_, p)| p).sum();
    if !(z.is_finite() && z > 0.0) {
        return argmax();
    }
    probs.iter_mut().for_each(|(_, p)| *p /= z);
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut keep = probs.len();
    if cfg.top_p < 1.0 {
        let mut acc = 0.0;
        for (k, (_, p)) in probs.iter().enumerate() {
            acc += p;
            if acc >= cfg.top_p {
                keep = k + 1;
                break;
            }
        }
    }
    let nucleus = &probs[..keep];
    let total: f64 = nucleus.iter().map(|(_, p)| p).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(i, p) in nucleus {
        u -= p;
        if u <= 0.0 {
            return i;
        }
    }
    nucleus[keep - 1].0
}

fn check_budget(net: &Transformer, prompt: &[TokenId], max_new: usize) -> Result<(), ModelError> {
    if prompt.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let len = prompt.len() + max_new;
    if len > net.dims().max_len {
        return Err(ModelError::SequenceTooLong {
            len,
            max: net.dims().max_len,
        });
    }
    Ok(())
}

/// Samples a response token by token using the cached decoder.
pub fn sample<R: Rng>(
    net: &Transformer,
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    rng: &mut R,
) -> Result<Sampled, ModelError> {
    check_budget(net, prompt, cfg.max_new_tokens)?;
    let mut dec = net.decoder();
    let mut logits = None;
    for &tok in prompt {
        logits = Some(dec.step(tok)?);
    }
    let mut logits = logits.expect("non-empty prompt");
    let mut out = Sampled {
        response: Vec::new(),
        logp: Vec::new(),
        syntax: Vec::new(),
        degenerate: false,
    };
    let mut state = GrammarState::initial();
    let mut blamed = false;
    for step in 0..cfg.max_new_tokens {
        let mask = match cfg.constraint {
            Constraint::Off => None,
            Constraint::Mask => Some(budget_mask(&state, cfg.max_new_tokens - step)),
        };
        let (tok, lp) = if mask.as_ref().is_some_and(|m| m.iter().all(|&b| !b)) {
            out.degenerate = true;
            (TokenId::EOS, 0.0)
        } else {
            let lp = log_softmax(logits.view(), mask.as_deref());
            let i = choose(&lp, cfg, rng);
            (TokenId(i as u32), lp[i])
        };
        out.response.push(tok);
        out.logp.push(lp);
        state = advance(&state, tok);
        if !blamed && !state.accepting() {
            blamed = true;
            out.syntax.push(-1.0);
        } else {
            out.syntax.push(0.0);
        }
        if tok == TokenId::EOS {
            break;
        }
        if step + 1 < cfg.max_new_tokens {
            logits = dec.step(tok)?;
        }
    }
    Ok(out)
}

/// Input fed to the network for scoring `response` after `prompt`.
fn scoring_input(prompt: &[TokenId], response: &[TokenId]) -> Vec<TokenId> {
    let mut seq = prompt.to_vec();
    if let Some((_, head)) = response.split_last() {
        seq.extend_from_slice(head);
    }
    seq
}

/// Per-position masked distributions retained for the backward pass.
pub struct LogpTape {
    tape: Tape,
    rows: usize,
    /// (row, token, probabilities) per response position; `None` where the
    /// legal set was empty.
    positions: Vec<Option<(usize, usize, Vec<f64>)>>,
}

/// Log-probability of each response token together with a tape for
/// [`backward_logp`].
pub fn logp_with_tape(
    net: &Transformer,
    prompt: &[TokenId],
    response: &[TokenId],
    constraint: Constraint,
    max_new_tokens: usize,
) -> Result<(Vec<f64>, LogpTape), ModelError> {
    check_budget(net, prompt, response.len())?;
    let seq = scoring_input(prompt, response);
    let (logits, tape) = net.forward_tape(&seq)?;
    let mut state = GrammarState::initial();
    let mut logp = Vec::with_capacity(response.len());
    let mut positions = Vec::with_capacity(response.len());
    for (t, &tok) in response.iter().enumerate() {
        let row = prompt.len() - 1 + t;
        let mask = match constraint {
            Constraint::Off => None,
            Constraint::Mask => Some(budget_mask(&state, max_new_tokens.saturating_sub(t))),
        };
        if mask.as_ref().is_some_and(|m| m.iter().all(|&b| !b)) {
            logp.push(0.0);
            positions.push(None);
        } else {
            let lp = log_softmax(logits.row(row), mask.as_deref());
            logp.push(lp[tok.index()]);
            positions.push(Some((row, tok.index(), lp.iter().map(|l| l.exp()).collect())));
        }
        state = advance(&state, tok);
    }
    Ok((
        logp,
        LogpTape {
            tape,
            rows: seq.len(),
            positions,
        },
    ))
}

/// Accumulates ∂L/∂θ given ∂L/∂logp per response token.
pub fn backward_logp(net: &Transformer, lt: &LogpTape, dlogp: &[f64], grad: &mut [f64]) {
    assert_eq!(dlogp.len(), lt.positions.len(), "one gradient per response token");
    let mut d_out = Array2::zeros((lt.rows, net.out_dim()));
    for (pos, &g) in lt.positions.iter().zip(dlogp) {
        if let Some((row, tok, probs)) = pos {
            let mut r = d_out.row_mut(*row);
            for (v, p) in probs.iter().enumerate() {
                r[v] -= g * p;
            }
            r[*tok] += g;
        }
    }
    net.backward(&lt.tape, &d_out, grad);
}

/// Log-probabilities of `response` under `net` (no gradient bookkeeping).
pub fn score(
    net: &Transformer,
    prompt: &[TokenId],
    response: &[TokenId],
    constraint: Constraint,
    max_new_tokens: usize,
) -> Result<Vec<f64>, ModelError> {
    logp_with_tape(net, prompt, response, constraint, max_new_tokens).map(|(lp, _)| lp)
}

/// Value estimates per response position and a tape for [`backward_values`].
pub fn values_with_tape(
    net: &Transformer,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<(Vec<f64>, Tape, usize), ModelError> {
    check_budget(net, prompt, response.len())?;
    let seq = scoring_input(prompt, response);
    let (out, tape) = net.forward_tape(&seq)?;
    let start = prompt.len() - 1;
    let v = (0..response.len()).map(|t| out[[start + t, 0]]).collect();
    Ok((v, tape, seq.len()))
}

pub fn backward_values(
    net: &Transformer,
    tape: &Tape,
    rows: usize,
    prompt_len: usize,
    dvalues: &[f64],
    grad: &mut [f64],
) {
    let mut d_out = Array2::zeros((rows, 1));
    for (t, &g) in dvalues.iter().enumerate() {
        d_out[[prompt_len - 1 + t, 0]] = g;
    }
    net.backward(tape, &d_out, grad);
}
