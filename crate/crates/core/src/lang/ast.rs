use std::fmt;

/// Half-open range of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index < self.end
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub stmts: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    GoTo,
    Pick,
    Place,
    Say,
}

impl Action {
    pub fn name(self) -> &'static str {
        match self {
            Action::GoTo => "go_to",
            Action::Pick => "pick",
            Action::Place => "place",
            Action::Say => "say",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Assign {
        var: String,
        value: Expr,
    },
    Call {
        action: Action,
        arg: Expr,
    },
    If {
        cond: Cond,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
        /// `if <cond>`
        header: Span,
    },
    Repeat {
        count: u32,
        body: Vec<Stmt>,
        /// `repeat ( n )`
        header: Span,
    },
    Assert {
        cond: Cond,
    },
}

impl Stmt {
    /// The tokens that identify the statement when it faults: the whole
    /// statement for simple statements, the header for compound ones.
    pub fn fault_span(&self) -> Span {
        match &self.kind {
            StmtKind::If { header, .. } | StmtKind::Repeat { header, .. } => *header,
            _ => self.span,
        }
    }

    /// Nested statement lists, in source order.
    pub fn children(&self) -> Vec<&[Stmt]> {
        match &self.kind {
            StmtKind::If {
                then_body,
                else_body,
                ..
            } => {
                let mut out = vec![then_body.as_slice()];
                if let Some(e) = else_body {
                    out.push(e.as_slice());
                }
                out
            }
            StmtKind::Repeat { body, .. } => vec![body.as_slice()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExprKind {
    Int(i64),
    Name(String),
    Var(String),
    Loc(Box<Expr>),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    /// Variable reads in evaluation order, with the token index of each read.
    pub fn reads(&self) -> Vec<(&str, usize)> {
        let mut out = Vec::new();
        self.collect_reads(&mut out);
        out
    }

    fn collect_reads<'a>(&'a self, out: &mut Vec<(&'a str, usize)>) {
        match &self.kind {
            ExprKind::Var(v) => out.push((v, self.span.start)),
            ExprKind::Loc(e) => e.collect_reads(out),
            ExprKind::Binary { lhs, rhs, .. } => {
                lhs.collect_reads(out);
                rhs.collect_reads(out);
            }
            ExprKind::Int(_) | ExprKind::Name(_) => {}
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self.kind, ExprKind::Int(_) | ExprKind::Name(_))
    }
}

impl Cond {
    pub fn reads(&self) -> Vec<(&str, usize)> {
        let mut out = self.lhs.reads();
        out.extend(self.rhs.reads());
        out
    }
}

/// Pre-order walk over every statement, including nested ones.
pub fn walk_stmts<'a>(stmts: &'a [Stmt], f: &mut impl FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        for body in s.children() {
            walk_stmts(body, f);
        }
    }
}
