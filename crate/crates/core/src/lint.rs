//! Rule-based static checks over a parsed program.
//!
//! Every finding carries the token span it is about and a negative score
//! contribution, so it can be attributed back to the tokens responsible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::lang::{Action, Cond, Expr, ExprKind, Program, Span, Stmt, StmtKind, TokenizedProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Severity {
    Style,
    Logic,
    Safety,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Style => "style",
            Severity::Logic => "logic",
            Severity::Safety => "safety",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    UnusedVariable,
    UndefinedVariable,
    UnreachableAfterFailingLoop,
    UnknownObject,
    DuplicateStatement,
    SelfComparison,
}

pub struct RuleInfo {
    pub rule: Rule,
    pub code: &'static str,
    pub severity: Severity,
    pub weight: f64,
    pub description: &'static str,
}

pub const RULES: &[RuleInfo] = &[
    RuleInfo {
        rule: Rule::UnusedVariable,
        code: "L001",
        severity: Severity::Style,
        weight: -0.2,
        description: "variable assigned but never read",
    },
    RuleInfo {
        rule: Rule::UndefinedVariable,
        code: "L002",
        severity: Severity::Logic,
        weight: -0.5,
        description: "variable read before any definition",
    },
    RuleInfo {
        rule: Rule::UnreachableAfterFailingLoop,
        code: "L003",
        severity: Severity::Logic,
        weight: -0.5,
        description: "statements after a repeat whose body always fails an assert",
    },
    RuleInfo {
        rule: Rule::UnknownObject,
        code: "L004",
        severity: Severity::Safety,
        weight: -0.5,
        description: "pick of an object that is not in the world",
    },
    RuleInfo {
        rule: Rule::DuplicateStatement,
        code: "L005",
        severity: Severity::Style,
        weight: -0.2,
        description: "statement repeats the previous one verbatim",
    },
    RuleInfo {
        rule: Rule::SelfComparison,
        code: "L006",
        severity: Severity::Logic,
        weight: -0.3,
        description: "variable compared with itself",
    },
];

impl Rule {
    pub fn info(self) -> &'static RuleInfo {
        RULES.iter().find(|r| r.rule == self).expect("every rule is listed")
    }

    pub fn code(self) -> &'static str {
        self.info().code
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub rule: Rule,
    pub severity: Severity,
    /// Half-open token range, never empty.
    pub token_span: Span,
    /// Always negative.
    pub score_delta: f64,
    pub message: String,
}

impl Diagnostic {
    fn new(rule: Rule, token_span: Span, message: String) -> Self {
        let info = rule.info();
        Diagnostic {
            rule,
            severity: info.severity,
            token_span,
            score_delta: info.weight,
            message,
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} ({}) at {}: {}",
            self.rule.code(),
            self.severity,
            self.score_delta,
            self.token_span,
            self.message
        )
    }
}

/// World knowledge the linter may use.
#[derive(Debug, Clone, Default)]
pub struct LintContext {
    /// Objects declared by the task's world; `None` disables L004.
    pub objects: Option<BTreeSet<String>>,
}

struct Linter<'a> {
    prog: &'a TokenizedProgram,
    ctx: &'a LintContext,
    out: Vec<Diagnostic>,
    /// Assignment spans with a "read" flag.
    defs: Vec<(String, Span, bool)>,
}

type Live = BTreeMap<String, BTreeSet<usize>>;

fn const_value(e: &Expr) -> Option<Result<i64, &str>> {
    match &e.kind {
        ExprKind::Int(n) => Some(Ok(*n)),
        ExprKind::Name(s) => Some(Err(s)),
        ExprKind::Binary { op, lhs, rhs } => match (const_value(lhs)?, const_value(rhs)?) {
            (Ok(a), Ok(b)) => Some(Ok(match op {
                crate::lang::BinOp::Add => a + b,
                crate::lang::BinOp::Sub => a - b,
            })),
            _ => None,
        },
        _ => None,
    }
}

/// Whether `c` is false no matter the state.
fn always_false(c: &Cond) -> bool {
    use crate::lang::CmpOp;
    let (Some(a), Some(b)) = (const_value(&c.lhs), const_value(&c.rhs)) else {
        return false;
    };
    match c.op {
        CmpOp::Eq => a != b,
        CmpOp::Ne => a == b,
        CmpOp::Lt => matches!((a, b), (Ok(x), Ok(y)) if x >= y),
        CmpOp::Gt => matches!((a, b), (Ok(x), Ok(y)) if x <= y),
    }
}

impl Linter<'_> {
    fn read(&mut self, e: &Expr, live: &Live) {
        for (var, at) in e.reads() {
            match live.get(var).filter(|d| !d.is_empty()) {
                Some(defs) => {
                    for &d in defs {
                        self.defs[d].2 = true;
                    }
                }
                None => self.out.push(Diagnostic::new(
                    Rule::UndefinedVariable,
                    Span::new(at, at + 1),
                    format!("{var} is read before it is assigned"),
                )),
            }
        }
    }

    fn cond(&mut self, c: &Cond, live: &Live) {
        self.read(&c.lhs, live);
        self.read(&c.rhs, live);
        if let (ExprKind::Var(a), ExprKind::Var(b)) = (&c.lhs.kind, &c.rhs.kind) {
            if a == b {
                self.out.push(Diagnostic::new(
                    Rule::SelfComparison,
                    c.span,
                    format!("{a} is compared with itself"),
                ));
            }
        }
    }

    fn block(&mut self, stmts: &[Stmt], live: &mut Live) {
        for (i, s) in stmts.iter().enumerate() {
            if i > 0 {
                let prev = &stmts[i - 1];
                if self.prog.ids[prev.span.indices()] == self.prog.ids[s.span.indices()] {
                    self.out.push(Diagnostic::new(
                        Rule::DuplicateStatement,
                        s.span,
                        "statement duplicates the previous one".into(),
                    ));
                }
            }
            self.stmt(s, live);
            if let StmtKind::Repeat { body, .. } = &s.kind {
                let fails = body
                    .iter()
                    .any(|b| matches!(&b.kind, StmtKind::Assert { cond } if always_false(cond)));
                if fails && i + 1 < stmts.len() {
                    let span = Span::new(stmts[i + 1].span.start, stmts[stmts.len() - 1].span.end);
                    self.out.push(Diagnostic::new(
                        Rule::UnreachableAfterFailingLoop,
                        span,
                        "unreachable: the loop above always fails an assert".into(),
                    ));
                }
            }
        }
    }

    fn stmt(&mut self, s: &Stmt, live: &mut Live) {
        match &s.kind {
            StmtKind::Assign { var, value } => {
                self.read(value, live);
                self.defs.push((var.clone(), s.span, false));
                live.insert(var.clone(), BTreeSet::from([self.defs.len() - 1]));
            }
            StmtKind::Call { action, arg } => {
                self.read(arg, live);
                if *action == Action::Pick {
                    if let (ExprKind::Name(o), Some(objects)) = (&arg.kind, &self.ctx.objects) {
                        if !objects.contains(o) {
                            self.out.push(Diagnostic::new(
                                Rule::UnknownObject,
                                s.span,
                                format!("{o} is not an object in this world"),
                            ));
                        }
                    }
                }
            }
            StmtKind::Assert { cond } => self.cond(cond, live),
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                self.cond(cond, live);
                let mut then_live = live.clone();
                self.block(then_body, &mut then_live);
                if let Some(e) = else_body {
                    self.block(e, live);
                }
                for (var, defs) in then_live {
                    live.entry(var).or_default().extend(defs);
                }
            }
            StmtKind::Repeat { body, .. } => self.block(body, live),
        }
    }
}

/// Runs every rule; the result is sorted by span start, then rule.
pub fn lint(ast: &Program, prog: &TokenizedProgram, ctx: &LintContext) -> Vec<Diagnostic> {
    let mut l = Linter {
        prog,
        ctx,
        out: Vec::new(),
        defs: Vec::new(),
    };
    l.block(&ast.stmts, &mut Live::new());
    let unused: Vec<Diagnostic> = l
        .defs
        .iter()
        .filter(|(_, _, used)| !used)
        .map(|(var, span, _)| {
            Diagnostic::new(Rule::UnusedVariable, *span, format!("{var} is never read"))
        })
        .collect();
    l.out.extend(unused);
    l.out.sort_by(|a, b| {
        (a.token_span.start, a.rule, a.token_span.end).cmp(&(
            b.token_span.start,
            b.rule,
            b.token_span.end,
        ))
    });
    l.out
}

/// Sum of the diagnostic penalties, clamped to `[-1, 0]`.
pub fn lint_score(diags: &[Diagnostic]) -> f64 {
    diags.iter().map(|d| d.score_delta).sum::<f64>().clamp(-1.0, 0.0)
}

/// Fixed-width rendering of [`RULES`].
pub fn rules_table() -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<6}{:<9}{:>7}  {}", "id", "severity", "weight", "description");
    for r in RULES {
        let _ = writeln!(
            out,
            "{:<6}{:<9}{:>7.1}  {}",
            r.code,
            r.severity.to_string(),
            r.weight,
            r.description
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_source;

    fn run(src: &str, objects: Option<&[&str]>) -> Vec<Diagnostic> {
        let (prog, ast) = parse_source(src).unwrap();
        let ctx = LintContext {
            objects: objects.map(|o| o.iter().map(|s| s.to_string()).collect()),
        };
        lint(&ast, &prog, &ctx)
    }

    fn codes(d: &[Diagnostic]) -> Vec<&'static str> {
        d.iter().map(|d| d.rule.code()).collect()
    }

    #[test]
    fn unused_assignment() {
        let d = run("x = 3 go_to ( lab )", None);
        assert_eq!(codes(&d), ["L001"]);
        assert_eq!(d[0].token_span, Span::new(0, 3));
        assert_eq!(d[0].score_delta, -0.2);
    }

    #[test]
    fn clean_program() {
        assert!(run("x = loc ( cup ) go_to ( x ) pick ( cup )", Some(&["cup"])).is_empty());
    }

    #[test]
    fn unknown_object() {
        let d = run("go_to ( lab ) pick ( hat )", Some(&["cup", "book"]));
        assert_eq!(codes(&d), ["L004"]);
        assert_eq!(d[0].token_span, Span::new(4, 8));
        assert!(run("pick ( hat )", None).is_empty());
    }

    #[test]
    fn undefined_and_self_comparison() {
        let d = run("if y == y { say ( ok ) }", None);
        assert_eq!(codes(&d), ["L002", "L006", "L002"]);
        assert_eq!(d[0].token_span, Span::new(1, 2));
        assert_eq!(d[1].token_span, Span::new(1, 4));
    }

    #[test]
    fn duplicate_and_unreachable() {
        let d = run(
            "say ( ok ) say ( ok ) repeat ( 2 ) { assert ( 1 == 2 ) } go_to ( lab ) say ( bye )",
            None,
        );
        assert_eq!(codes(&d), ["L005", "L003"]);
        assert_eq!(d[0].token_span, Span::new(4, 8));
        assert_eq!(d[1].token_span, Span::new(20, 28));
    }

    #[test]
    fn score_clamps() {
        let mk = |w: f64| Diagnostic {
            rule: Rule::UnusedVariable,
            severity: Severity::Style,
            token_span: Span::new(0, 1),
            score_delta: w,
            message: String::new(),
        };
        assert_eq!(lint_score(&[]), 0.0);
        assert!((lint_score(&[mk(-0.2), mk(-0.5)]) + 0.7).abs() < 1e-12);
        assert_eq!(lint_score(&[mk(-0.5), mk(-0.5), mk(-0.5)]), -1.0);
    }

    #[test]
    fn rules_table_lists_every_rule() {
        let t = rules_table();
        assert_eq!(t.lines().count(), RULES.len() + 1);
        assert!(t.contains("L004  safety      -0.5"));
    }
}
