//! Core building blocks for dense-reward fine-tuning of a code-generating policy.
//!
//! The crate defines RoboLang, a small robot-control language, together with
//! everything needed to turn a generated program into per-token feedback:
//!
//! - [`lang`]: vocabulary, tokenizer, incremental grammar automaton and parser.
//! - [`lint`]: rule-based static checks producing span-addressed diagnostics.
//! - [`dfg`]: def-use data-flow graphs and a rename-invariant similarity score.
//! - [`sim`]: interpreter plus a discrete world simulator with feasibility checks.
//! - [`reward`]: weighted composite reward and token-level attribution.

pub mod dfg;
pub mod lang;
pub mod lint;
pub mod reward;
pub mod sim;

pub use lang::{Span, TokenId, TokenizedProgram, Vocab};
