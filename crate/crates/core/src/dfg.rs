//! Def-use data-flow graphs and their rename-invariant comparison.
//!
//! Statements are numbered in pre-order. Every assignment creates a new
//! definition node `(var, ordinal)`, where the ordinal counts previous
//! definitions of the same variable. Each variable read produces one edge per
//! reaching definition; the arms of an `if` are analysed separately and their
//! definitions are merged at the join, and `repeat` bodies are analysed once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::lang::{Expr, Program, Stmt, StmtKind};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DefNode {
    pub var: String,
    pub ordinal: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Def(DefNode),
    /// Read of a variable with no reaching definition.
    Undef(String),
}

impl Source {
    pub fn var(&self) -> &str {
        match self {
            Source::Def(d) => &d.var,
            Source::Undef(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: Source,
    /// Pre-order ordinal of the statement containing the read.
    pub use_stmt: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataFlowGraph {
    pub nodes: BTreeSet<DefNode>,
    /// Sorted edge multiset.
    pub edges: Vec<Edge>,
    /// Variables in order of first appearance.
    pub var_order: Vec<String>,
}

impl DataFlowGraph {
    /// Line-oriented dump: one `def var ordinal` line per node followed by
    /// one `edge var ordinal|UNDEF stmt` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for n in &self.nodes {
            let _ = writeln!(out, "def {} {}", n.var, n.ordinal);
        }
        for e in &self.edges {
            match &e.from {
                Source::Def(d) => {
                    let _ = writeln!(out, "edge {} {} {}", d.var, d.ordinal, e.use_stmt);
                }
                Source::Undef(v) => {
                    let _ = writeln!(out, "edge {} UNDEF {}", v, e.use_stmt);
                }
            }
        }
        out
    }

    /// Definitions that no edge starts from.
    pub fn unused_defs(&self) -> Vec<&DefNode> {
        self.nodes
            .iter()
            .filter(|n| {
                !self
                    .edges
                    .iter()
                    .any(|e| matches!(&e.from, Source::Def(d) if d == *n))
            })
            .collect()
    }
}

type Reaching = BTreeMap<String, BTreeSet<usize>>;

#[derive(Default)]
struct Extractor {
    graph: DataFlowGraph,
    next_stmt: usize,
    next_ordinal: BTreeMap<String, usize>,
}

impl Extractor {
    fn see(&mut self, var: &str) {
        if !self.graph.var_order.iter().any(|v| v == var) {
            self.graph.var_order.push(var.to_string());
        }
    }

    fn reads(&mut self, exprs: &[&Expr], stmt: usize, env: &Reaching) {
        for e in exprs {
            for (var, _) in e.reads() {
                self.see(var);
                match env.get(var).filter(|defs| !defs.is_empty()) {
                    Some(defs) => {
                        for &ordinal in defs {
                            self.graph.edges.push(Edge {
                                from: Source::Def(DefNode {
                                    var: var.to_string(),
                                    ordinal,
                                }),
                                use_stmt: stmt,
                            });
                        }
                    }
                    None => self.graph.edges.push(Edge {
                        from: Source::Undef(var.to_string()),
                        use_stmt: stmt,
                    }),
                }
            }
        }
    }

    fn block(&mut self, stmts: &[Stmt], env: &mut Reaching) {
        for s in stmts {
            self.stmt(s, env);
        }
    }

    fn stmt(&mut self, s: &Stmt, env: &mut Reaching) {
        let ord = self.next_stmt;
        self.next_stmt += 1;
        match &s.kind {
            StmtKind::Assign { var, value } => {
                self.reads(&[value], ord, env);
                self.see(var);
                let slot = self.next_ordinal.entry(var.clone()).or_insert(0);
                let ordinal = *slot;
                *slot += 1;
                self.graph.nodes.insert(DefNode {
                    var: var.clone(),
                    ordinal,
                });
                env.insert(var.clone(), BTreeSet::from([ordinal]));
            }
            StmtKind::Call { arg, .. } => self.reads(&[arg], ord, env),
            StmtKind::Assert { cond } => self.reads(&[&cond.lhs, &cond.rhs], ord, env),
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                self.reads(&[&cond.lhs, &cond.rhs], ord, env);
                let mut then_env = env.clone();
                self.block(then_body, &mut then_env);
                let mut else_env = env.clone();
                if let Some(e) = else_body {
                    self.block(e, &mut else_env);
                }
                for (var, defs) in then_env {
                    else_env.entry(var).or_default().extend(defs);
                }
                *env = else_env;
            }
            StmtKind::Repeat { body, .. } => self.block(body, env),
        }
    }
}

pub fn extract_dfg(program: &Program) -> DataFlowGraph {
    let mut x = Extractor::default();
    let mut env = Reaching::new();
    x.block(&program.stmts, &mut env);
    x.graph.edges.sort();
    x.graph
}

/// Anonymized edge: variable replaced by its discovery index.
type CanonEdge = (usize, Option<usize>, usize);

fn canonical(g: &DataFlowGraph) -> BTreeMap<CanonEdge, usize> {
    let mut counts = BTreeMap::new();
    for e in &g.edges {
        let var = g
            .var_order
            .iter()
            .position(|v| v == e.from.var())
            .unwrap_or(usize::MAX);
        let ordinal = match &e.from {
            Source::Def(d) => Some(d.ordinal),
            Source::Undef(_) => None,
        };
        *counts.entry((var, ordinal, e.use_stmt)).or_insert(0) += 1;
    }
    counts
}

/// F1 between the anonymized edge multisets; 1.0 when both are empty.
pub fn dfg_match(candidate: &DataFlowGraph, reference: &DataFlowGraph) -> f64 {
    let (c, r) = (canonical(candidate), canonical(reference));
    let total: usize = c.values().sum::<usize>() + r.values().sum::<usize>();
    if total == 0 {
        return 1.0;
    }
    let common: usize = c
        .iter()
        .map(|(k, &n)| n.min(r.get(k).copied().unwrap_or(0)))
        .sum();
    2.0 * common as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse_source;

    fn dfg(src: &str) -> DataFlowGraph {
        extract_dfg(&parse_source(src).unwrap().1)
    }

    fn def(var: &str, ordinal: usize) -> DefNode {
        DefNode {
            var: var.into(),
            ordinal,
        }
    }

    #[test]
    fn single_def_use() {
        let g = dfg("x = 3 go_to ( kitchen ) say ( x )");
        assert_eq!(g.nodes, BTreeSet::from([def("x", 0)]));
        assert_eq!(
            g.edges,
            vec![Edge {
                from: Source::Def(def("x", 0)),
                use_stmt: 2
            }]
        );
    }

    #[test]
    fn no_variables_no_graph() {
        let g = dfg("go_to ( lab ) pick ( cup )");
        assert!(g.nodes.is_empty() && g.edges.is_empty());
        assert_eq!(dfg_match(&g, &g), 1.0);
    }

    #[test]
    fn redefinition_gets_new_ordinal() {
        let g = dfg("x = 1 x = 2 say ( x )");
        assert_eq!(g.nodes, BTreeSet::from([def("x", 0), def("x", 1)]));
        assert_eq!(g.edges.len(), 1);
        assert_eq!(g.edges[0].from, Source::Def(def("x", 1)));
        assert_eq!(g.unused_defs(), vec![&def("x", 0)]);
    }

    #[test]
    fn both_branches_reach_the_join() {
        let g = dfg("x = 1 if x == 1 { x = 2 } say ( x )");
        let sources: Vec<_> = g
            .edges
            .iter()
            .filter(|e| e.use_stmt == 3)
            .map(|e| e.from.clone())
            .collect();
        assert_eq!(
            sources,
            vec![Source::Def(def("x", 0)), Source::Def(def("x", 1))]
        );
    }

    #[test]
    fn undefined_reads_come_from_undef() {
        let g = dfg("say ( y )");
        assert_eq!(g.edges[0].from, Source::Undef("y".into()));
        assert!(g.to_edge_list().contains("edge y UNDEF 0"));
    }

    #[test]
    fn match_examples() {
        let a = dfg("x = 3 say ( x )");
        let empty = dfg("say ( ok )");
        assert_eq!(dfg_match(&a, &a), 1.0);
        assert_eq!(dfg_match(&empty, &a), 0.0);
        let renamed = dfg("y = 3 say ( y )");
        assert_eq!(dfg_match(&renamed, &a), 1.0);
    }

    #[test]
    fn partial_overlap_f1() {
        // Reference edges: x0@1, x0@2, y0@3. Candidate: x0@1, x0@2, x0@3.
        let reference = dfg("x = 1 say ( x ) say ( x ) y = 2 say ( y )");
        let candidate = dfg("x = 1 say ( x ) say ( x ) say ( x )");
        assert_eq!(reference.edges.len(), 3);
        assert_eq!(candidate.edges.len(), 3);
        // y's read sits at statement 4 in the reference, x's third read at 3.
        let expected = 2.0 * 2.0 / 6.0;
        assert!((dfg_match(&candidate, &reference) - expected).abs() < 1e-12);
    }
}
