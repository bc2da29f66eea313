//! RoboLang: vocabulary, tokenizer, grammar automaton, AST and parser.
//!
//! A program is a non-empty statement sequence:
//!
//! ```text
//! x = loc ( cup )
//! if x == lab { go_to ( lab ) pick ( cup ) } else { say ( no ) }
//! ```
//!
//! The full grammar lives in `docs/grammar.md`.

pub mod ast;
pub mod grammar;
pub mod parser;
pub mod token;
pub mod vocab;

pub use ast::{Action, BinOp, CmpOp, Cond, Expr, ExprKind, Program, Span, Stmt, StmtKind};
pub use grammar::{advance, first_violation, legal_next_mask, syntax_scores, GrammarState};
pub use parser::{parse_ids, ParseError};
pub use token::{detokenize, render, tokenize, TokenizedProgram};
pub use vocab::{TokenId, TokenKind, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LangError {
    #[error("unknown token at byte {position}")]
    UnknownToken { position: usize },
    #[error("invalid vocabulary: {0}")]
    Vocab(String),
}

/// Parses the token ids of `prog` (all of them, regardless of the code mask).
pub fn parse(prog: &TokenizedProgram) -> Result<Program, ParseError> {
    parse_ids(Vocab::standard(), &prog.ids)
}

/// Tokenizes and parses source text in one go.
pub fn parse_source(source: &str) -> Result<(TokenizedProgram, Program), SourceError> {
    let prog = tokenize(Vocab::standard(), source)?;
    let ast = parse(&prog)?;
    Ok((prog, ast))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error(transparent)]
    Lex(#[from] LangError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}
