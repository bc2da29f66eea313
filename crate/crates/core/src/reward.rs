//! Weighted composite reward with token-level attribution.
//!
//! Each reward channel ends up as a per-token vector:
//!
//! - syntax scores are already per token and are scaled by their weight;
//! - lint diagnostics and simulator faults are spread evenly over the span they
//!   point at;
//! - sequence-level scores without a span (unit tests, data-flow match,
//!   non-fault simulator outcomes) are spread evenly over the code tokens, and
//!   land on the final position when the response has no code at all;
//! - the KL term enters at every position with weight `-β`.
//!
//! The total at position `t` is the sum of the channels at `t`, so the
//! per-trajectory return matches what a terminal-only placement would give.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::lang::Span;
use crate::lint::{lint_score, Diagnostic};

pub const SYNC: &str = "sync";
pub const LINT: &str = "lint";
pub const KL: &str = "kl";
pub const DFG: &str = "dfg";
pub const PASS: &str = "pass@1";
pub const SIM: &str = "sim";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("span {0} has zero width")]
    EmptySpan(Span),
    #[error("span {span} exceeds sequence length {len}")]
    SpanOutOfBounds { span: Span, len: usize },
    #[error("no code tokens to spread a non-zero score over")]
    NoCodeTokens,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid reward weights: {0}")]
    InvalidWeights(String),
    #[error("score supplied for disabled component {0}")]
    UnknownComponent(String),
    #[error("enabled component {0} has no score")]
    MissingComponent(String),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

/// Coefficients of the composite reward. `kl` is the β of the KL penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub sync: f64,
    pub lint: f64,
    pub kl: f64,
    /// Optional task-specific components by name.
    #[serde(default)]
    pub opt: BTreeMap<String, f64>,
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), RewardError> {
        let all = [("sync", self.sync), ("lint", self.lint), ("kl", self.kl)]
            .into_iter()
            .chain(self.opt.iter().map(|(k, v)| (k.as_str(), *v)));
        let mut any_positive = false;
        for (name, w) in all {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(RewardError::InvalidWeights(format!("{name} = {w}")));
            }
            any_positive |= name != "kl" && w > 0.0;
        }
        if !any_positive {
            return Err(RewardError::InvalidWeights(
                "at least one non-KL weight must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Enabled component names, KL included.
    pub fn component_names(&self) -> Vec<String> {
        let mut names = vec![SYNC.to_string(), LINT.to_string(), KL.to_string()];
        names.extend(self.opt.keys().cloned());
        names.sort();
        names
    }

    /// Weight of a component by name.
    pub fn weight(&self, name: &str) -> Option<f64> {
        match name {
            SYNC => Some(self.sync),
            LINT => Some(self.lint),
            KL => Some(self.kl),
            other => self.opt.get(other).copied(),
        }
    }
}

/// Per-token rewards for one trajectory plus the breakdown by component.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RewardVector {
    pub total: Vec<f64>,
    pub components: BTreeMap<String, Vec<f64>>,
}

impl RewardVector {
    pub fn len(&self) -> usize {
        self.total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.total.is_empty()
    }

    /// Sum of each component over the trajectory.
    pub fn component_sums(&self) -> BTreeMap<String, f64> {
        self.components
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().sum()))
            .collect()
    }

    pub fn return_sum(&self) -> f64 {
        self.total.iter().sum()
    }
}

/// `weight * score` split evenly over `span`, zero elsewhere.
pub fn attribute_span(score: f64, span: Span, weight: f64, n: usize) -> Result<Vec<f64>, RewardError> {
    if span.is_empty() {
        return Err(RewardError::EmptySpan(span));
    }
    if span.end > n {
        return Err(RewardError::SpanOutOfBounds { span, len: n });
    }
    let mut out = vec![0.0; n];
    let share = weight * score / span.len() as f64;
    for x in &mut out[span.indices()] {
        *x = share;
    }
    Ok(out)
}

/// `weight * score` split evenly over the code tokens.
pub fn attribute_uniform(score: f64, weight: f64, code_mask: &[bool]) -> Result<Vec<f64>, RewardError> {
    let count = code_mask.iter().filter(|&&m| m).count();
    let mut out = vec![0.0; code_mask.len()];
    if score == 0.0 || weight == 0.0 {
        return Ok(out);
    }
    if count == 0 {
        return Err(RewardError::NoCodeTokens);
    }
    let share = weight * score / count as f64;
    for (x, &m) in out.iter_mut().zip(code_mask) {
        if m {
            *x = share;
        }
    }
    Ok(out)
}

/// Per-token k1 estimate `log π(y_t) - log π_ref(y_t)`.
pub fn kl_per_token(logp_policy: &[f64], logp_ref: &[f64]) -> Result<Vec<f64>, RewardError> {
    if logp_policy.len() != logp_ref.len() {
        return Err(RewardError::LengthMismatch(logp_policy.len(), logp_ref.len()));
    }
    Ok(logp_policy.iter().zip(logp_ref).map(|(p, r)| p - r).collect())
}

/// A sequence-level score for an optional component.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub name: String,
    pub score: f64,
    /// Tokens responsible, when the evaluator can tell.
    pub span: Option<Span>,
}

/// Where sequence-level rewards are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Spans and uniform spreading over code tokens.
    #[default]
    Dense,
    /// Everything except KL on the final token.
    Terminal,
}

#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub code_mask: &'a [bool],
    pub syntax_scores: &'a [f64],
    pub diagnostics: &'a [Diagnostic],
    pub sequence: &'a [SequenceScore],
    pub kl: &'a [f64],
}

fn uniform_or_last(score: f64, weight: f64, mask: &[bool]) -> Result<Vec<f64>, RewardError> {
    match attribute_uniform(score, weight, mask) {
        Err(RewardError::NoCodeTokens) => {
            let mut v = vec![0.0; mask.len()];
            *v.last_mut().ok_or(RewardError::EmptyTrajectory)? = weight * score;
            Ok(v)
        }
        other => other,
    }
}

/// Assembles the composite per-token reward.
pub fn compose(
    inputs: &RewardInputs<'_>,
    weights: &RewardWeights,
    placement: Placement,
) -> Result<RewardVector, RewardError> {
    let n = inputs.code_mask.len();
    if n == 0 {
        return Err(RewardError::EmptyTrajectory);
    }
    for len in [inputs.syntax_scores.len(), inputs.kl.len()] {
        if len != n {
            return Err(RewardError::LengthMismatch(len, n));
        }
    }
    let mut components = BTreeMap::new();

    components.insert(
        SYNC.to_string(),
        inputs.syntax_scores.iter().map(|s| weights.sync * s).collect::<Vec<_>>(),
    );

    // Rescale so the attributed lint penalty sums to the clamped score.
    let raw: f64 = inputs.diagnostics.iter().map(|d| d.score_delta).sum();
    let factor = if raw != 0.0 { lint_score(inputs.diagnostics) / raw } else { 0.0 };
    let mut lint = vec![0.0; n];
    for d in inputs.diagnostics {
        let part = attribute_span(d.score_delta * factor, d.token_span, weights.lint, n)?;
        for (acc, p) in lint.iter_mut().zip(part) {
            *acc += p;
        }
    }
    components.insert(LINT.to_string(), lint);

    for s in inputs.sequence {
        let w = *weights
            .opt
            .get(&s.name)
            .ok_or_else(|| RewardError::UnknownComponent(s.name.clone()))?;
        let v = match s.span {
            Some(span) => attribute_span(s.score, span, w, n)?,
            None => uniform_or_last(s.score, w, inputs.code_mask)?,
        };
        components.insert(s.name.clone(), v);
    }
    if let Some(missing) = weights.opt.keys().find(|k| !components.contains_key(*k)) {
        return Err(RewardError::MissingComponent(missing.clone()));
    }

    if placement == Placement::Terminal {
        for v in components.values_mut() {
            let sum: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x = 0.0);
            v[n - 1] = sum;
        }
    }

    components.insert(KL.to_string(), inputs.kl.iter().map(|k| -weights.kl * k).collect());

    let mut total = vec![0.0; n];
    for v in components.values() {
        for (t, x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    Ok(RewardVector { total, components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lint::{Rule, Severity};

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    fn diag(span: Span, delta: f64) -> Diagnostic {
        Diagnostic {
            rule: Rule::UnusedVariable,
            severity: Severity::Style,
            token_span: span,
            score_delta: delta,
            message: String::new(),
        }
    }

    fn table4() -> RewardWeights {
        RewardWeights {
            sync: 0.1,
            lint: 0.1,
            kl: 0.9,
            opt: BTreeMap::from([(SIM.to_string(), 0.8)]),
        }
    }

    #[test]
    fn span_division() {
        let v = attribute_span(-0.5, Span::new(2, 4), 0.1, 6).unwrap();
        assert!(close(&v, &[0.0, 0.0, -0.025, -0.025, 0.0, 0.0]));
        assert!(attribute_span(0.0, Span::new(0, 3), 1.0, 3).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(
            attribute_span(1.0, Span::new(2, 2), 1.0, 3),
            Err(RewardError::EmptySpan(Span::new(2, 2)))
        );
        assert!(attribute_span(1.0, Span::new(2, 5), 1.0, 3).is_err());
    }

    #[test]
    fn uniform_division() {
        let mut mask = vec![true; 7];
        mask.extend([false; 3]);
        let v = attribute_uniform(1.0, 0.7, &mask).unwrap();
        for (i, x) in v.iter().enumerate() {
            let want = if i < 7 { 0.1 } else { 0.0 };
            assert!((x - want).abs() < 1e-12);
        }
        assert!((v.iter().sum::<f64>() - 0.7).abs() < 1e-12);
        assert!(attribute_uniform(0.0, 0.7, &mask).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(attribute_uniform(1.0, 0.7, &[false, false]), Err(RewardError::NoCodeTokens));
    }

    #[test]
    fn kl_is_a_difference() {
        assert_eq!(kl_per_token(&[-1.0], &[-1.5]).unwrap(), vec![0.5]);
        assert_eq!(kl_per_token(&[-0.3, -2.0], &[-0.3, -2.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(kl_per_token(&[0.0], &[]), Err(RewardError::LengthMismatch(1, 0)));
    }

    #[test]
    fn zero_inputs_give_zero_reward() {
        let mask = [true, true, false];
        let zeros = [0.0; 3];
        let seq = [SequenceScore { name: SIM.into(), score: 0.0, span: None }];
        let rv = compose(
            &RewardInputs {
                code_mask: &mask,
                syntax_scores: &zeros,
                diagnostics: &[],
                sequence: &seq,
                kl: &zeros,
            },
            &table4(),
            Placement::Dense,
        )
        .unwrap();
        assert!(rv.total.iter().all(|&x| x == 0.0));
        assert_eq!(rv.components.len(), 4);
    }

    #[test]
    fn success_under_robotics_weights() {
        let mask = [true, true, true, true, false];
        let kl = [0.1, -0.05, 0.2, 0.0, 0.3];
        let seq = [SequenceScore { name: SIM.into(), score: 1.0, span: None }];
        let rv = compose(
            &RewardInputs {
                code_mask: &mask,
                syntax_scores: &[0.0; 5],
                diagnostics: &[],
                sequence: &seq,
                kl: &kl,
            },
            &table4(),
            Placement::Dense,
        )
        .unwrap();
        let want = 0.8 - 0.9 * kl.iter().sum::<f64>();
        assert!((rv.return_sum() - want).abs() < 1e-12);
        assert_eq!(rv.components[SIM][4], 0.0);
        assert!((rv.components[SIM][0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn general_weights_component_sums() {
        let w = RewardWeights {
            sync: 0.1,
            lint: 0.1,
            kl: 0.1,
            opt: BTreeMap::from([(PASS.to_string(), 0.7), (DFG.to_string(), 0.1)]),
        };
        let mask = [true; 6];
        let seq = [
            SequenceScore { name: PASS.into(), score: 1.0, span: None },
            SequenceScore { name: DFG.into(), score: 0.667, span: None },
        ];
        let rv = compose(
            &RewardInputs {
                code_mask: &mask,
                syntax_scores: &[0.0; 6],
                diagnostics: &[],
                sequence: &seq,
                kl: &[0.0; 6],
            },
            &w,
            Placement::Dense,
        )
        .unwrap();
        let sums = rv.component_sums();
        assert!((sums[PASS] - 0.7).abs() < 1e-12);
        assert!((sums[DFG] - 0.1 * 0.667).abs() < 1e-12);
    }

    #[test]
    fn overlapping_diagnostics_add_up() {
        let n = 8;
        let diags = [
            diag(Span::new(0, 4), -0.2),
            diag(Span::new(2, 6), -0.3),
            diag(Span::new(3, 4), -0.2),
        ];
        let rv = compose(
            &RewardInputs {
                code_mask: &[true; 8],
                syntax_scores: &[0.0; 8],
                diagnostics: &diags,
                sequence: &[],
                kl: &[0.0; 8],
            },
            &RewardWeights { sync: 0.1, lint: 0.1, kl: 0.0, opt: BTreeMap::new() },
            Placement::Dense,
        )
        .unwrap();
        let mut want = vec![0.0; n];
        for d in &diags {
            let part = attribute_span(d.score_delta, d.token_span, 0.1, n).unwrap();
            want.iter_mut().zip(part).for_each(|(w, p)| *w += p);
        }
        assert!(close(&rv.components[LINT], &want));
    }

    #[test]
    fn lint_penalty_respects_clamp() {
        let diags = [
            diag(Span::new(0, 1), -0.5),
            diag(Span::new(1, 2), -0.5),
            diag(Span::new(2, 3), -0.5),
        ];
        let rv = compose(
            &RewardInputs {
                code_mask: &[true; 3],
                syntax_scores: &[0.0; 3],
                diagnostics: &diags,
                sequence: &[],
                kl: &[0.0; 3],
            },
            &RewardWeights { sync: 0.0, lint: 1.0, kl: 0.0, opt: BTreeMap::new() },
            Placement::Dense,
        )
        .unwrap();
        assert!((rv.component_sums()[LINT] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn codeless_response_routes_to_last_token() {
        let seq = [SequenceScore { name: SIM.into(), score: -1.0, span: None }];
        let rv = compose(
            &RewardInputs {
                code_mask: &[false],
                syntax_scores: &[-1.0],
                diagnostics: &[],
                sequence: &seq,
                kl: &[0.0],
            },
            &table4(),
            Placement::Dense,
        )
        .unwrap();
        assert!((rv.components[SIM][0] + 0.8).abs() < 1e-12);
        assert!((rv.total[0] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn terminal_placement_keeps_the_return() {
        let mask = [true, true, true, false];
        let kl = [0.2, 0.1, -0.1, 0.05];
        let seq = [SequenceScore { name: SIM.into(), score: -0.5, span: Some(Span::new(1, 3)) }];
        let diags = [diag(Span::new(0, 2), -0.2)];
        let inputs = RewardInputs {
            code_mask: &mask,
            syntax_scores: &[0.0, 0.0, -1.0, 0.0],
            diagnostics: &diags,
            sequence: &seq,
            kl: &kl,
        };
        let dense = compose(&inputs, &table4(), Placement::Dense).unwrap();
        let sparse = compose(&inputs, &table4(), Placement::Terminal).unwrap();
        assert!((dense.return_sum() - sparse.return_sum()).abs() < 1e-12);
        assert_eq!(sparse.components[KL], dense.components[KL]);
        assert_eq!(sparse.components[SIM][..3], [0.0; 3]);
    }

    #[test]
    fn component_bookkeeping_errors() {
        let seq = [SequenceScore { name: DFG.into(), score: 1.0, span: None }];
        let base = RewardInputs {
            code_mask: &[true],
            syntax_scores: &[0.0],
            diagnostics: &[],
            sequence: &seq,
            kl: &[0.0],
        };
        assert_eq!(
            compose(&base, &table4(), Placement::Dense),
            Err(RewardError::UnknownComponent(DFG.into()))
        );
        let none = RewardInputs { sequence: &[], ..base };
        assert_eq!(
            compose(&none, &table4(), Placement::Dense),
            Err(RewardError::MissingComponent(SIM.into()))
        );
    }

    #[test]
    fn weight_validation() {
        assert!(table4().validate().is_ok());
        let mut w = table4();
        w.sync = -0.1;
        assert!(w.validate().is_err());
        let only_kl = RewardWeights { sync: 0.0, lint: 0.0, kl: 1.0, opt: BTreeMap::new() };
        assert!(only_kl.validate().is_err());
    }
}
