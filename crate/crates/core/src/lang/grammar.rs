//! Incremental LL(1) recognizer for RoboLang.
//!
//! The grammar is small enough that the predictive table is computed once at
//! startup from the production list below. A [`GrammarState`] is the parser
//! stack after consuming a token prefix; because the table is LL(1) and
//! ε-moves are only taken on tokens in the FOLLOW set, the automaton rejects a
//! token exactly when the extended prefix stops being a viable prefix.

use std::sync::LazyLock;

use super::vocab::{TokenId, TokenKind, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Terminal {
    LParen,
    RParen,
    LBrace,
    RBrace,
    Assign,
    Cmp,
    AddOp,
    If,
    Else,
    Repeat,
    Assert,
    Action,
    Loc,
    Var,
    Int,
    /// Integer literal usable as a repeat bound (1..=32).
    Count,
    Name,
}

impl Terminal {
    fn matches(self, kind: TokenKind) -> bool {
        use TokenKind as K;
        match self {
            Terminal::LParen => kind == K::LParen,
            Terminal::RParen => kind == K::RParen,
            Terminal::LBrace => kind == K::LBrace,
            Terminal::RBrace => kind == K::RBrace,
            Terminal::Assign => kind == K::Assign,
            Terminal::Cmp => matches!(kind, K::Eq | K::Ne | K::Lt | K::Gt),
            Terminal::AddOp => matches!(kind, K::Plus | K::Minus),
            Terminal::If => kind == K::If,
            Terminal::Else => kind == K::Else,
            Terminal::Repeat => kind == K::Repeat,
            Terminal::Assert => kind == K::Assert,
            Terminal::Action => kind.is_action(),
            Terminal::Loc => kind == K::Loc,
            Terminal::Var => kind == K::Var,
            Terminal::Int => matches!(kind, K::Int(_)),
            Terminal::Count => matches!(kind, K::Int(n) if n >= 1),
            Terminal::Name => kind.is_name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NonTerminal {
    Program,
    StmtsTail,
    Stmt,
    Block,
    ElseOpt,
    Cond,
    Expr,
    ExprTail,
    Term,
}

const NONTERMINALS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sym {
    T(Terminal),
    N(NonTerminal),
}

struct Production {
    lhs: NonTerminal,
    rhs: &'static [Sym],
}

macro_rules! rhs {
    ($($kind:ident $name:ident),*) => { &[$(rhs!(@ $kind $name)),*] };
    (@ t $name:ident) => { Sym::T(Terminal::$name) };
    (@ n $name:ident) => { Sym::N(NonTerminal::$name) };
}

static PRODUCTIONS: &[Production] = &[
    Production { lhs: NonTerminal::Program, rhs: rhs!(n Stmt, n StmtsTail) },
    Production { lhs: NonTerminal::StmtsTail, rhs: rhs!(n Stmt, n StmtsTail) },
    Production { lhs: NonTerminal::StmtsTail, rhs: &[] },
    Production { lhs: NonTerminal::Stmt, rhs: rhs!(t Var, t Assign, n Expr) },
    Production { lhs: NonTerminal::Stmt, rhs: rhs!(t Action, t LParen, n Expr, t RParen) },
    Production {
        lhs: NonTerminal::Stmt,
        rhs: rhs!(t If, n Cond, t LBrace, n Block, t RBrace, n ElseOpt),
    },
    Production {
        lhs: NonTerminal::Stmt,
        rhs: rhs!(t Repeat, t LParen, t Count, t RParen, t LBrace, n Block, t RBrace),
    },
    Production { lhs: NonTerminal::Stmt, rhs: rhs!(t Assert, t LParen, n Cond, t RParen) },
    Production { lhs: NonTerminal::Block, rhs: rhs!(n Stmt, n StmtsTail) },
    Production { lhs: NonTerminal::ElseOpt, rhs: rhs!(t Else, t LBrace, n Block, t RBrace) },
    Production { lhs: NonTerminal::ElseOpt, rhs: &[] },
    Production { lhs: NonTerminal::Cond, rhs: rhs!(n Expr, t Cmp, n Expr) },
    Production { lhs: NonTerminal::Expr, rhs: rhs!(n Term, n ExprTail) },
    Production { lhs: NonTerminal::ExprTail, rhs: rhs!(t AddOp, n Term, n ExprTail) },
    Production { lhs: NonTerminal::ExprTail, rhs: &[] },
    Production { lhs: NonTerminal::Term, rhs: rhs!(t Int) },
    Production { lhs: NonTerminal::Term, rhs: rhs!(t Name) },
    Production { lhs: NonTerminal::Term, rhs: rhs!(t Var) },
    Production { lhs: NonTerminal::Term, rhs: rhs!(t Loc, t LParen, n Expr, t RParen) },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Entry {
    Error,
    Expand(u8),
}

struct Table {
    /// `predict[nt][token]`
    predict: Vec<Vec<Entry>>,
    /// Whether `nt` may vanish at end of input.
    ends: [bool; NONTERMINALS],
    /// Shortest terminal yield of each nonterminal.
    min_len: [usize; NONTERMINALS],
    kinds: Vec<TokenKind>,
}

type TermSet = Vec<Terminal>;

fn add(set: &mut TermSet, t: Terminal) -> bool {
    if set.contains(&t) {
        false
    } else {
        set.push(t);
        true
    }
}

fn build_table(vocab: &Vocab) -> Table {
    let nt = |n: NonTerminal| n as usize;
    let mut nullable = [false; NONTERMINALS];
    let mut first: Vec<TermSet> = vec![Vec::new(); NONTERMINALS];
    let mut follow: Vec<TermSet> = vec![Vec::new(); NONTERMINALS];
    let mut follow_end = [false; NONTERMINALS];
    follow_end[nt(NonTerminal::Program)] = true;

    // FIRST of a symbol string, plus whether it is nullable.
    fn first_of(rhs: &[Sym], nullable: &[bool], first: &[TermSet]) -> (TermSet, bool) {
        let mut out = Vec::new();
        for s in rhs {
            match *s {
                Sym::T(t) => {
                    add(&mut out, t);
                    return (out, false);
                }
                Sym::N(n) => {
                    for &t in &first[n as usize] {
                        add(&mut out, t);
                    }
                    if !nullable[n as usize] {
                        return (out, false);
                    }
                }
            }
        }
        (out, true)
    }

    let mut changed = true;
    while changed {
        changed = false;
        for p in PRODUCTIONS {
            let (f, null) = first_of(p.rhs, &nullable, &first);
            for t in f {
                changed |= add(&mut first[nt(p.lhs)], t);
            }
            if null && !nullable[nt(p.lhs)] {
                nullable[nt(p.lhs)] = true;
                changed = true;
            }
        }
    }
    changed = true;
    while changed {
        changed = false;
        for p in PRODUCTIONS {
            for (i, s) in p.rhs.iter().enumerate() {
                let Sym::N(b) = *s else { continue };
                let (f, null) = first_of(&p.rhs[i + 1..], &nullable, &first);
                for t in f {
                    changed |= add(&mut follow[nt(b)], t);
                }
                if null {
                    let inherited = follow[nt(p.lhs)].clone();
                    for t in inherited {
                        changed |= add(&mut follow[nt(b)], t);
                    }
                    if follow_end[nt(p.lhs)] && !follow_end[nt(b)] {
                        follow_end[nt(b)] = true;
                        changed = true;
                    }
                }
            }
        }
    }

    let kinds: Vec<TokenKind> = vocab.ids().map(|id| vocab.kind(id)).collect();
    let mut predict = vec![vec![Entry::Error; kinds.len()]; NONTERMINALS];
    let mut ends = [false; NONTERMINALS];
    for (pi, p) in PRODUCTIONS.iter().enumerate() {
        let (f, null) = first_of(p.rhs, &nullable, &first);
        for (tok, &kind) in kinds.iter().enumerate() {
            let hit = f.iter().any(|t| t.matches(kind))
                || (null && follow[nt(p.lhs)].iter().any(|t| t.matches(kind)));
            if hit {
                let slot = &mut predict[nt(p.lhs)][tok];
                assert_eq!(*slot, Entry::Error, "LL(1) conflict in {:?}", p.lhs);
                *slot = Entry::Expand(pi as u8);
            }
        }
        if null && follow_end[nt(p.lhs)] {
            ends[nt(p.lhs)] = true;
        }
    }

    let mut min_len = [usize::MAX; NONTERMINALS];
    changed = true;
    while changed {
        changed = false;
        for p in PRODUCTIONS {
            let mut total = 0usize;
            for s in p.rhs {
                total = total.saturating_add(match *s {
                    Sym::T(_) => 1,
                    Sym::N(n) => min_len[n as usize],
                });
            }
            if total < min_len[nt(p.lhs)] {
                min_len[nt(p.lhs)] = total;
                changed = true;
            }
        }
    }

    Table {
        predict,
        ends,
        min_len,
        kinds,
    }
}

static TABLE: LazyLock<Table> = LazyLock::new(|| build_table(Vocab::standard()));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Status {
    Live,
    /// EOS consumed after a complete program.
    Finished,
    Dead,
}

/// Parser configuration after a token prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarState {
    stack: Vec<Sym>,
    status: Status,
    complete: bool,
}

impl Default for GrammarState {
    fn default() -> Self {
        Self::initial()
    }
}

impl GrammarState {
    pub fn initial() -> Self {
        GrammarState {
            stack: vec![Sym::N(NonTerminal::Program)],
            status: Status::Live,
            complete: false,
        }
    }

    pub fn dead() -> Self {
        GrammarState {
            stack: Vec::new(),
            status: Status::Dead,
            complete: false,
        }
    }

    /// The consumed prefix can still be extended to a complete program.
    pub fn accepting(&self) -> bool {
        self.status != Status::Dead
    }

    /// The consumed prefix is itself a complete program (or was terminated by EOS).
    pub fn complete(&self) -> bool {
        match self.status {
            Status::Live => self.complete,
            Status::Finished => true,
            Status::Dead => false,
        }
    }

    /// EOS has been consumed; nothing further is legal.
    pub fn finished(&self) -> bool {
        self.status == Status::Finished
    }

    /// Length of the shortest token sequence that completes the program,
    /// excluding EOS. `None` for dead states.
    pub fn min_completion(&self) -> Option<usize> {
        match self.status {
            Status::Dead => None,
            Status::Finished => Some(0),
            Status::Live => Some(
                self.stack
                    .iter()
                    .map(|s| match *s {
                        Sym::T(_) => 1,
                        Sym::N(n) => TABLE.min_len[n as usize],
                    })
                    .sum(),
            ),
        }
    }

    fn compute_complete(stack: &[Sym]) -> bool {
        stack.iter().all(|s| match *s {
            Sym::T(_) => false,
            Sym::N(n) => TABLE.ends[n as usize],
        })
    }
}

/// Successor state after consuming `tok`; dead states absorb.
pub fn advance(state: &GrammarState, tok: TokenId) -> GrammarState {
    let table = &*TABLE;
    if state.status != Status::Live || tok.index() >= table.kinds.len() {
        return GrammarState::dead();
    }
    let kind = table.kinds[tok.index()];
    if kind == TokenKind::Eos {
        return if state.complete {
            GrammarState {
                stack: Vec::new(),
                status: Status::Finished,
                complete: true,
            }
        } else {
            GrammarState::dead()
        };
    }
    let mut stack = state.stack.clone();
    loop {
        match stack.pop() {
            None => return GrammarState::dead(),
            Some(Sym::T(t)) => {
                if t.matches(kind) {
                    break;
                }
                return GrammarState::dead();
            }
            Some(Sym::N(n)) => match table.predict[n as usize][tok.index()] {
                Entry::Error => return GrammarState::dead(),
                Entry::Expand(p) => stack.extend(PRODUCTIONS[p as usize].rhs.iter().rev()),
            },
        }
    }
    let complete = GrammarState::compute_complete(&stack);
    GrammarState {
        stack,
        status: Status::Live,
        complete,
    }
}

/// `mask[v]` is true iff `advance(state, v)` is accepting.
pub fn legal_next_mask(state: &GrammarState, vocab: &Vocab) -> Vec<bool> {
    vocab.ids().map(|v| advance(state, v).accepting()).collect()
}

/// State after feeding a whole token sequence.
pub fn run(ids: &[TokenId]) -> GrammarState {
    ids.iter()
        .fold(GrammarState::initial(), |s, &t| advance(&s, t))
}

/// Per-token syntax feedback: `-1` on the token that first kills the prefix,
/// `0` everywhere else (including after the violation).
pub fn syntax_scores(ids: &[TokenId]) -> Vec<f64> {
    let mut scores = vec![0.0; ids.len()];
    let mut state = GrammarState::initial();
    for (t, &tok) in ids.iter().enumerate() {
        state = advance(&state, tok);
        if !state.accepting() {
            scores[t] = -1.0;
            break;
        }
    }
    scores
}

/// Index of the first token that leaves the viable-prefix set, if any.
pub fn first_violation(ids: &[TokenId]) -> Option<usize> {
    let mut state = GrammarState::initial();
    for (t, &tok) in ids.iter().enumerate() {
        state = advance(&state, tok);
        if !state.accepting() {
            return Some(t);
        }
    }
    None
}
