use super::ast::*;
use super::vocab::{TokenId, TokenKind, Vocab};

/// Index of the first token that cannot continue a valid program. Equals
/// the token count when the input ends early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("parse error at token {index}")]
pub struct ParseError {
    pub index: usize,
}

struct Parser<'a> {
    vocab: &'a Vocab,
    ids: &'a [TokenId],
    pos: usize,
    /// Position of the terminating EOS, or `ids.len()`.
    end: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<TokenKind> {
        (self.pos < self.end).then(|| self.vocab.kind(self.ids[self.pos]))
    }

    fn err<T>(&self) -> PResult<T> {
        Err(ParseError { index: self.pos })
    }

    fn expect(&mut self, want: impl Fn(TokenKind) -> bool) -> PResult<TokenKind> {
        match self.peek() {
            Some(k) if want(k) => {
                self.pos += 1;
                Ok(k)
            }
            _ => self.err(),
        }
    }

    fn surface(&self, at: usize) -> String {
        self.vocab.surface(self.ids[at]).to_string()
    }

    fn starts_stmt(k: TokenKind) -> bool {
        matches!(
            k,
            TokenKind::Var | TokenKind::If | TokenKind::Repeat | TokenKind::Assert
        ) || k.is_action()
    }

    fn program(&mut self) -> PResult<Program> {
        let mut stmts = vec![self.stmt()?];
        loop {
            match self.peek() {
                None => break,
                Some(k) if Self::starts_stmt(k) => stmts.push(self.stmt()?),
                Some(_) => return self.err(),
            }
        }
        Ok(Program {
            span: Span::new(0, self.pos),
            stmts,
        })
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(|k| k == TokenKind::LBrace)?;
        let mut stmts = vec![self.stmt()?];
        loop {
            match self.peek() {
                Some(TokenKind::RBrace) => break,
                Some(k) if Self::starts_stmt(k) => stmts.push(self.stmt()?),
                _ => return self.err(),
            }
        }
        self.expect(|k| k == TokenKind::RBrace)?;
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let start = self.pos;
        let kind = match self.peek() {
            Some(TokenKind::Var) => {
                let var = self.surface(self.pos);
                self.pos += 1;
                self.expect(|k| k == TokenKind::Assign)?;
                let value = self.expr()?;
                StmtKind::Assign { var, value }
            }
            Some(k) if k.is_action() => {
                self.pos += 1;
                let action = match k {
                    TokenKind::GoTo => Action::GoTo,
                    TokenKind::Pick => Action::Pick,
                    TokenKind::Place => Action::Place,
                    _ => Action::Say,
                };
                self.expect(|k| k == TokenKind::LParen)?;
                let arg = self.expr()?;
                self.expect(|k| k == TokenKind::RParen)?;
                StmtKind::Call { action, arg }
            }
            Some(TokenKind::If) => {
                self.pos += 1;
                let cond = self.cond()?;
                let header = Span::new(start, self.pos);
                let then_body = self.block()?;
                let else_body = if self.peek() == Some(TokenKind::Else) {
                    self.pos += 1;
                    Some(self.block()?)
                } else {
                    None
                };
                StmtKind::If {
                    cond,
                    then_body,
                    else_body,
                    header,
                }
            }
            Some(TokenKind::Repeat) => {
                self.pos += 1;
                self.expect(|k| k == TokenKind::LParen)?;
                let count = match self.expect(|k| matches!(k, TokenKind::Int(n) if n >= 1))? {
                    TokenKind::Int(n) => n as u32,
                    _ => unreachable!(),
                };
                self.expect(|k| k == TokenKind::RParen)?;
                let header = Span::new(start, self.pos);
                let body = self.block()?;
                StmtKind::Repeat {
                    count,
                    body,
                    header,
                }
            }
            Some(TokenKind::Assert) => {
                self.pos += 1;
                self.expect(|k| k == TokenKind::LParen)?;
                let cond = self.cond()?;
                self.expect(|k| k == TokenKind::RParen)?;
                StmtKind::Assert { cond }
            }
            _ => return self.err(),
        };
        Ok(Stmt {
            kind,
            span: Span::new(start, self.pos),
        })
    }

    fn cond(&mut self) -> PResult<Cond> {
        let start = self.pos;
        let lhs = self.expr()?;
        let op = match self.expect(|k| {
            matches!(k, TokenKind::Eq | TokenKind::Ne | TokenKind::Lt | TokenKind::Gt)
        })? {
            TokenKind::Eq => CmpOp::Eq,
            TokenKind::Ne => CmpOp::Ne,
            TokenKind::Lt => CmpOp::Lt,
            _ => CmpOp::Gt,
        };
        let rhs = self.expr()?;
        Ok(Cond {
            lhs,
            op,
            rhs,
            span: Span::new(start, self.pos),
        })
    }

    fn expr(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let mut lhs = self.term()?;
        while let Some(k @ (TokenKind::Plus | TokenKind::Minus)) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if k == TokenKind::Plus { BinOp::Add } else { BinOp::Sub };
            lhs = Expr {
                kind: ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span: Span::new(start, self.pos),
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let start = self.pos;
        let kind = match self.peek() {
            Some(TokenKind::Int(n)) => {
                self.pos += 1;
                ExprKind::Int(n as i64)
            }
            Some(k) if k.is_name() => {
                self.pos += 1;
                ExprKind::Name(self.surface(start))
            }
            Some(TokenKind::Var) => {
                self.pos += 1;
                ExprKind::Var(self.surface(start))
            }
            Some(TokenKind::Loc) => {
                self.pos += 1;
                self.expect(|k| k == TokenKind::LParen)?;
                let inner = self.expr()?;
                self.expect(|k| k == TokenKind::RParen)?;
                ExprKind::Loc(Box::new(inner))
            }
            _ => return self.err(),
        };
        Ok(Expr {
            kind,
            span: Span::new(start, self.pos),
        })
    }
}

/// Parses a token sequence. A single trailing EOS terminates the program;
/// anything after it is an error.
pub fn parse_ids(vocab: &Vocab, ids: &[TokenId]) -> Result<Program, ParseError> {
    let end = ids.iter().position(|&t| t == TokenId::EOS).unwrap_or(ids.len());
    let mut p = Parser {
        vocab,
        ids,
        pos: 0,
        end,
    };
    let program = p.program()?;
    debug_assert_eq!(p.pos, end);
    if end + 1 < ids.len() {
        return Err(ParseError { index: end + 1 });
    }
    Ok(program)
}
