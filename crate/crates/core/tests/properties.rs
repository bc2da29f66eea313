//! Property tests for the language, analyses, simulator and reward assembly.
//! Oracles here are written independently of the library internals.

use std::collections::BTreeMap;

use drs_core::dfg::{dfg_match, extract_dfg};
use drs_core::lang::grammar::run;
use drs_core::lang::vocab::{OBJECTS, ROOMS, VARIABLES, WORDS};
use drs_core::lang::{
    advance, detokenize, legal_next_mask, parse_ids, parse_source, syntax_scores, tokenize,
    GrammarState, TokenId, Vocab,
};
use drs_core::lint::{lint, lint_score, LintContext, Rule};
use drs_core::reward::{
    attribute_span, compose, Placement, RewardInputs, RewardWeights, SequenceScore,
};
use drs_core::sim::{execute, Location, WorldState};
use drs_core::Span;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

// ---------------------------------------------------------------------------
// Random program text generator.

struct Gen<'a> {
    rng: &'a mut StdRng,
    out: Vec<String>,
    vars: &'a [&'a str],
}

impl Gen<'_> {
    fn push(&mut self, s: &str) {
        self.out.push(s.to_string());
    }

    fn pick<'b>(&mut self, xs: &[&'b str]) -> &'b str {
        xs[self.rng.gen_range(0..xs.len())]
    }

    fn term(&mut self, depth: usize) {
        match self.rng.gen_range(0..if depth > 0 { 4 } else { 3 }) {
            0 => {
                let n = self.rng.gen_range(0..=32).to_string();
                self.push(&n);
            }
            1 => {
                let pool: Vec<&str> = ROOMS.iter().chain(OBJECTS).chain(WORDS).copied().collect();
                let s = self.pick(&pool);
                self.push(s);
            }
            2 => {
                let v = self.pick(self.vars);
                self.push(v);
            }
            _ => {
                self.push("loc");
                self.push("(");
                self.expr(depth - 1);
                self.push(")");
            }
        }
    }

    fn expr(&mut self, depth: usize) {
        self.term(depth);
        while self.rng.gen_bool(0.2) {
            let op = self.pick(&["+", "-"]);
            self.push(op);
            self.term(depth);
        }
    }

    fn cond(&mut self) {
        self.expr(1);
        let op = self.pick(&["==", "!=", "<", ">"]);
        self.push(op);
        self.expr(1);
    }

    fn block(&mut self, depth: usize) {
        let n = self.rng.gen_range(1..=3);
        for _ in 0..n {
            self.stmt(depth);
        }
    }

    fn stmt(&mut self, depth: usize) {
        let k = self.rng.gen_range(0..if depth > 0 { 5 } else { 3 });
        match k {
            0 => {
                let v = self.pick(self.vars);
                self.push(v);
                self.push("=");
                self.expr(1);
            }
            1 => {
                let a = self.pick(&["go_to", "pick", "place", "say"]);
                self.push(a);
                self.push("(");
                self.expr(1);
                self.push(")");
            }
            2 => {
                self.push("assert");
                self.push("(");
                self.cond();
                self.push(")");
            }
            3 => {
                self.push("if");
                self.cond();
                self.push("{");
                self.block(depth - 1);
                self.push("}");
                if self.rng.gen_bool(0.5) {
                    self.push("else");
                    self.push("{");
                    self.block(depth - 1);
                    self.push("}");
                }
            }
            _ => {
                self.push("repeat");
                self.push("(");
                let n = self.rng.gen_range(1..=32).to_string();
                self.push(&n);
                self.push(")");
                self.push("{");
                self.block(depth - 1);
                self.push("}");
            }
        }
    }
}

fn random_program_with(rng: &mut StdRng, vars: &[&str]) -> Vec<String> {
    let mut g = Gen { rng, out: Vec::new(), vars };
    let n = g.rng.gen_range(1..=5);
    for _ in 0..n {
        g.stmt(2);
    }
    g.out
}

fn random_program(rng: &mut StdRng) -> Vec<String> {
    random_program_with(rng, VARIABLES)
}

fn ids_of(words: &[String]) -> Vec<TokenId> {
    let v = Vocab::standard();
    words.iter().map(|w| v.expect_id(w)).collect()
}

// ---------------------------------------------------------------------------
// Independent reference scanner: longest vocabulary match at each byte.

fn reference_scan(source: &str) -> Option<Vec<u32>> {
    let v = Vocab::standard();
    let mut table: Vec<(&str, u32)> = v
        .surfaces()
        .iter()
        .enumerate()
        .filter(|(i, _)| *i > 2)
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    table.sort_by_key(|(s, _)| std::cmp::Reverse(s.len()));
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let (s, id) = table.iter().find(|(s, _)| source[i..].starts_with(s))?;
        // A word-like token must not run into further word characters.
        let word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
        let end = i + s.len();
        if word(bytes[i]) && end < bytes.len() && word(bytes[end]) {
            // fall back to the longest word-bounded candidate
            let (s2, id2) = table.iter().find(|(c, _)| {
                source[i..].starts_with(c)
                    && (i + c.len() == bytes.len() || !word(bytes[i + c.len()]))
            })?;
            out.push(*id2);
            i += s2.len();
            continue;
        }
        out.push(*id);
        i = end;
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Independent viable-prefix oracle: a recursive-descent recognizer that
// reports running out of input separately from a hard error.

#[derive(Debug, PartialEq)]
enum Fail {
    Eof,
    At(usize),
}

struct Rd<'a> {
    toks: &'a [&'a str],
    pos: usize,
}

fn is_int(s: &str) -> bool {
    s.parse::<u8>().map(|n| n <= 32).unwrap_or(false) && s.chars().all(|c| c.is_ascii_digit())
}

fn is_name(s: &str) -> bool {
    ROOMS.contains(&s) || OBJECTS.contains(&s) || WORDS.contains(&s)
}

impl Rd<'_> {
    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).copied()
    }

    fn need(&self) -> Result<&str, Fail> {
        self.peek().ok_or(Fail::Eof)
    }

    fn eat(&mut self, want: impl Fn(&str) -> bool) -> Result<(), Fail> {
        let t = self.need()?;
        if want(t) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Fail::At(self.pos))
        }
    }

    fn stmt_start(t: &str) -> bool {
        VARIABLES.contains(&t)
            || matches!(t, "go_to" | "pick" | "place" | "say" | "if" | "repeat" | "assert")
    }

    fn program(&mut self) -> Result<(), Fail> {
        self.stmt()?;
        while self.peek().is_some_and(Self::stmt_start) {
            self.stmt()?;
        }
        Ok(())
    }

    fn block(&mut self) -> Result<(), Fail> {
        self.eat(|t| t == "{")?;
        self.stmt()?;
        while self.need()? != "}" {
            if !Self::stmt_start(self.need()?) {
                return Err(Fail::At(self.pos));
            }
            self.stmt()?;
        }
        self.pos += 1;
        Ok(())
    }

    fn stmt(&mut self) -> Result<(), Fail> {
        let t = self.need()?;
        match t {
            _ if VARIABLES.contains(&t) => {
                self.pos += 1;
                self.eat(|t| t == "=")?;
                self.expr()
            }
            "go_to" | "pick" | "place" | "say" => {
                self.pos += 1;
                self.eat(|t| t == "(")?;
                self.expr()?;
                self.eat(|t| t == ")")
            }
            "assert" => {
                self.pos += 1;
                self.eat(|t| t == "(")?;
                self.cond()?;
                self.eat(|t| t == ")")
            }
            "if" => {
                self.pos += 1;
                self.cond()?;
                self.block()?;
                if self.peek() == Some("else") {
                    self.pos += 1;
                    self.block()?;
                }
                Ok(())
            }
            "repeat" => {
                self.pos += 1;
                self.eat(|t| t == "(")?;
                self.eat(|t| is_int(t) && t != "0")?;
                self.eat(|t| t == ")")?;
                self.block()
            }
            _ => Err(Fail::At(self.pos)),
        }
    }

    fn cond(&mut self) -> Result<(), Fail> {
        self.expr()?;
        self.eat(|t| matches!(t, "==" | "!=" | "<" | ">"))?;
        self.expr()
    }

    fn expr(&mut self) -> Result<(), Fail> {
        self.term()?;
        while matches!(self.peek(), Some("+" | "-")) {
            self.pos += 1;
            self.term()?;
        }
        Ok(())
    }

    fn term(&mut self) -> Result<(), Fail> {
        let t = self.need()?;
        if t == "loc" {
            self.pos += 1;
            self.eat(|t| t == "(")?;
            self.expr()?;
            return self.eat(|t| t == ")");
        }
        self.eat(|t| is_int(t) || is_name(t) || VARIABLES.contains(&t))
    }
}

/// (viable, complete) for a prefix of surfaces; EOS handled at the end only.
fn oracle_prefix(words: &[&str]) -> (bool, bool) {
    let (body, eos) = match words.iter().position(|&w| w == "<eos>") {
        Some(i) if i + 1 == words.len() => (&words[..i], true),
        Some(_) => return (false, false),
        None => (words, false),
    };
    if body.iter().any(|w| matches!(*w, "<pad>" | "<bos>" | "```") || !is_known_code(w)) {
        return (false, false);
    }
    let mut rd = Rd { toks: body, pos: 0 };
    match rd.program() {
        Err(Fail::At(_)) => (false, false),
        Err(Fail::Eof) => (!eos, false),
        Ok(()) if rd.pos < body.len() => (false, false),
        Ok(()) => (true, true),
    }
}

fn is_known_code(w: &str) -> bool {
    is_int(w)
        || is_name(w)
        || VARIABLES.contains(&w)
        || matches!(
            w,
            "(" | ")" | "{" | "}" | "=" | "==" | "!=" | "<" | ">" | "+" | "-" | "if" | "else"
                | "repeat" | "assert" | "go_to" | "pick" | "place" | "say" | "loc"
        )
}

fn surfaces(ids: &[TokenId]) -> Vec<&'static str> {
    let v = Vocab::standard();
    ids.iter().map(|&i| v.surface(i)).collect()
}

/// Reachable states by random walks that mostly follow the mask.
fn random_states(rng: &mut StdRng, n: usize) -> Vec<(Vec<TokenId>, GrammarState)> {
    let v = Vocab::standard();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut ids = Vec::new();
        let mut st = GrammarState::initial();
        let len = rng.gen_range(0..24);
        for _ in 0..len {
            let mask = legal_next_mask(&st, v);
            let legal: Vec<TokenId> = v.ids().filter(|t| mask[t.index()]).collect();
            let tok = if legal.is_empty() || rng.gen_bool(0.05) {
                TokenId(rng.gen_range(0..v.len() as u32))
            } else {
                *legal.choose(rng).unwrap()
            };
            st = advance(&st, tok);
            ids.push(tok);
        }
        out.push((ids, st));
    }
    out
}

// ---------------------------------------------------------------------------

#[test]
fn tokenizer_round_trip_on_generated_programs() {
    let v = Vocab::standard();
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..10_000 {
        let words = random_program(&mut rng);
        let text = words.join(" ");
        let prog = tokenize(v, &text).unwrap();
        assert_eq!(detokenize(v, &prog.ids), text);
        let want: Vec<u32> = ids_of(&words).iter().map(|t| t.0).collect();
        assert_eq!(prog.ids.iter().map(|t| t.0).collect::<Vec<_>>(), want);
        for (i, &(s, e)) in prog.char_spans.iter().enumerate() {
            assert_eq!(&text[s..e], words[i]);
            if i > 0 {
                assert!(prog.char_spans[i - 1].1 <= s);
            }
        }
    }
}

#[test]
fn tokenizer_matches_reference_scanner_without_spaces() {
    let v = Vocab::standard();
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..500 {
        let words = random_program(&mut rng);
        // Drop the space around punctuation only, keeping word boundaries.
        let mut text = String::new();
        for w in &words {
            let wordy = w.chars().next().unwrap().is_ascii_alphanumeric();
            let prev_wordy = text.chars().last().is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
            if wordy && prev_wordy {
                text.push(' ');
            }
            text.push_str(w);
        }
        let got: Vec<u32> = tokenize(v, &text).unwrap().ids.iter().map(|t| t.0).collect();
        assert_eq!(Some(got), reference_scan(&text), "{text}");
    }
}

#[test]
fn mask_agrees_with_advance_on_random_states() {
    let v = Vocab::standard();
    let mut rng = StdRng::seed_from_u64(13);
    for (_, st) in random_states(&mut rng, 1500) {
        let mask = legal_next_mask(&st, v);
        for tok in v.ids() {
            assert_eq!(mask[tok.index()], advance(&st, tok).accepting());
        }
        if st.accepting() {
            assert_eq!(mask[TokenId::EOS.index()], st.complete() && !st.finished());
        } else {
            assert!(mask.iter().all(|m| !m));
        }
    }
}

#[test]
fn automaton_matches_prefix_oracle() {
    let mut rng = StdRng::seed_from_u64(14);
    for (ids, st) in random_states(&mut rng, 3000) {
        let words = surfaces(&ids);
        let (viable, complete) = oracle_prefix(&words);
        assert_eq!(st.accepting(), viable, "{words:?}");
        if viable {
            assert_eq!(st.complete(), complete, "{words:?}");
        }
    }
}

#[test]
fn blame_matches_parse_error_index() {
    let v = Vocab::standard();
    let mut rng = StdRng::seed_from_u64(15);
    for _ in 0..3000 {
        let mut ids = ids_of(&random_program(&mut rng));
        // Corrupt, truncate or leave intact.
        match rng.gen_range(0..3) {
            0 => {
                let i = rng.gen_range(0..ids.len());
                ids[i] = TokenId(rng.gen_range(4..v.len() as u32));
            }
            1 => {
                let keep = rng.gen_range(0..ids.len());
                ids.truncate(keep);
            }
            _ => {}
        }
        ids.push(TokenId::EOS);
        let scores = syntax_scores(&ids);
        let blamed: Vec<usize> = (0..ids.len()).filter(|&i| scores[i] == -1.0).collect();
        assert!(scores.iter().all(|&s| s == 0.0 || s == -1.0));
        match parse_ids(v, &ids) {
            Ok(_) => assert!(blamed.is_empty()),
            Err(e) => assert_eq!(blamed, vec![e.index]),
        }
    }
}

#[test]
fn budgeted_masked_walks_always_parse() {
    let v = Vocab::standard();
    let mut rng = StdRng::seed_from_u64(16);
    for _ in 0..1000 {
        let budget = rng.gen_range(4..40);
        let mut ids = Vec::new();
        let mut st = GrammarState::initial();
        loop {
            let room = budget - ids.len();
            let mask = legal_next_mask(&st, v);
            let legal: Vec<TokenId> = v
                .ids()
                .filter(|&t| mask[t.index()])
                .filter(|&t| {
                    t == TokenId::EOS
                        || advance(&st, t).min_completion().is_some_and(|m| m + 1 < room)
                })
                .collect();
            let tok = *legal.choose(&mut rng).expect("budget-aware mask never empties");
            ids.push(tok);
            st = advance(&st, tok);
            if tok == TokenId::EOS {
                break;
            }
        }
        assert!(ids.len() <= budget);
        assert!(parse_ids(v, &ids).is_ok(), "{:?}", surfaces(&ids));
        assert!(run(&ids).finished());
    }
}

fn rename(words: &[String], map: &BTreeMap<&str, &str>) -> Vec<String> {
    words
        .iter()
        .map(|w| map.get(w.as_str()).map_or(w.clone(), |r| r.to_string()))
        .collect()
}

#[test]
fn l001_agrees_with_unused_definitions() {
    let mut rng = StdRng::seed_from_u64(17);
    for _ in 0..2000 {
        let src = random_program(&mut rng).join(" ");
        let (prog, ast) = parse_source(&src).unwrap();
        let unused = extract_dfg(&ast).unused_defs().len();
        let l001 = lint(&ast, &prog, &LintContext::default())
            .iter()
            .filter(|d| d.rule == Rule::UnusedVariable)
            .count();
        assert_eq!(l001, unused, "{src}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dfg_match_is_symmetric(a in any::<u64>(), b in any::<u64>()) {
        let ga = extract_dfg(&parse_source(&random_program(&mut StdRng::seed_from_u64(a)).join(" ")).unwrap().1);
        let gb = extract_dfg(&parse_source(&random_program(&mut StdRng::seed_from_u64(b)).join(" ")).unwrap().1);
        prop_assert_eq!(dfg_match(&ga, &gb), dfg_match(&gb, &ga));
        prop_assert_eq!(dfg_match(&ga, &ga), 1.0);
        let m = dfg_match(&ga, &gb);
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn dfg_match_ignores_renaming(a in any::<u64>(), b in any::<u64>(), perm in Just(VARIABLES.to_vec()).prop_shuffle()) {
        let wa = random_program(&mut StdRng::seed_from_u64(a));
        let wb = random_program(&mut StdRng::seed_from_u64(b));
        let map: BTreeMap<&str, &str> = VARIABLES.iter().copied().zip(perm.iter().copied()).collect();
        let ga = extract_dfg(&parse_source(&wa.join(" ")).unwrap().1);
        let gr = extract_dfg(&parse_source(&rename(&wa, &map).join(" ")).unwrap().1);
        let gb = extract_dfg(&parse_source(&wb.join(" ")).unwrap().1);
        prop_assert_eq!(dfg_match(&gr, &gb), dfg_match(&ga, &gb));
        prop_assert_eq!(dfg_match(&gr, &ga), 1.0);
    }

    #[test]
    fn lint_is_deterministic_and_bounded(seed in any::<u64>()) {
        let src = random_program(&mut StdRng::seed_from_u64(seed)).join(" ");
        let (prog, ast) = parse_source(&src).unwrap();
        let ctx = LintContext { objects: Some(["cup", "book"].iter().map(|s| s.to_string()).collect()) };
        let d1 = lint(&ast, &prog, &ctx);
        prop_assert_eq!(&d1, &lint(&ast, &prog, &ctx));
        let s = lint_score(&d1);
        prop_assert!((-1.0..=0.0).contains(&s));
        for d in &d1 {
            prop_assert!(!d.token_span.is_empty() && d.token_span.end <= prog.len());
            prop_assert!(d.score_delta < 0.0);
        }
        prop_assert!(d1.windows(2).all(|w| w[0].token_span.start <= w[1].token_span.start));
    }

    #[test]
    fn primitives_preserve_world_invariants(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let rooms: Vec<&str> = ROOMS[..rng.gen_range(3..=6)].to_vec();
        let mut w = WorldState {
            rooms: rooms.iter().map(|s| s.to_string()).collect(),
            objects: OBJECTS[..rng.gen_range(2..=8)]
                .iter()
                .map(|o| (o.to_string(), Location::Room(rooms.choose(&mut rng).unwrap().to_string())))
                .collect(),
            robot_room: rooms[0].to_string(),
            holding: None,
            adjacency: Default::default(),
            said: vec![],
        };
        for pair in rooms.windows(2) {
            if rng.gen_bool(0.8) {
                w.connect(pair[0], pair[1]);
            }
        }
        for _ in 0..50 {
            let before = w.clone();
            let ok = match rng.gen_range(0..3) {
                0 => w.go_to(ROOMS.choose(&mut rng).unwrap()).is_ok(),
                1 => w.pick(OBJECTS.choose(&mut rng).unwrap()).is_ok(),
                _ => w.place(OBJECTS.choose(&mut rng).unwrap()).is_ok(),
            };
            prop_assert!(w.check_invariants().is_ok());
            if !ok {
                prop_assert_eq!(&w, &before);
            }
        }
    }

    #[test]
    fn execution_is_deterministic(seed in any::<u64>()) {
        let src = random_program(&mut StdRng::seed_from_u64(seed)).join(" ");
        let (_, ast) = parse_source(&src).unwrap();
        let mut w = WorldState {
            rooms: ["kitchen", "lab"].iter().map(|s| s.to_string()).collect(),
            objects: [("cup".to_string(), Location::Room("lab".into()))].into(),
            robot_room: "kitchen".into(),
            holding: None,
            adjacency: Default::default(),
            said: vec![],
        };
        w.connect("kitchen", "lab");
        let a = execute(&ast, &w);
        let b = execute(&ast, &w);
        prop_assert_eq!(a.world, b.world);
        prop_assert_eq!(a.steps, b.steps);
        prop_assert!(a.steps <= drs_core::sim::STEP_BUDGET + 1);
    }
}

// ---------------------------------------------------------------------------
// Composite reward properties.

struct Instance {
    mask: Vec<bool>,
    syntax: Vec<f64>,
    diags: Vec<drs_core::lint::Diagnostic>,
    seq: Vec<SequenceScore>,
    kl: Vec<f64>,
    weights: RewardWeights,
}

fn random_instance(rng: &mut StdRng) -> Instance {
    let n = rng.gen_range(1..40);
    let code = rng.gen_range(0..n);
    let mask: Vec<bool> = (0..n).map(|i| i < code).collect();
    let mut syntax = vec![0.0; n];
    if rng.gen_bool(0.3) {
        // Blame lands on a code token or on the terminator.
        let at = if code > 0 && rng.gen_bool(0.7) { rng.gen_range(0..code) } else { n - 1 };
        syntax[at] = -1.0;
    }
    let mut diags = Vec::new();
    if code > 0 {
        for _ in 0..rng.gen_range(0..5) {
            let s = rng.gen_range(0..code);
            let e = rng.gen_range(s + 1..=code);
            let rule = *[Rule::UnusedVariable, Rule::UndefinedVariable, Rule::SelfComparison]
                .choose(rng)
                .unwrap();
            diags.push(drs_core::lint::Diagnostic {
                rule,
                severity: rule.info().severity,
                token_span: Span::new(s, e),
                score_delta: rule.info().weight,
                message: String::new(),
            });
        }
    }
    let names = ["pass@1", "dfg", "sim"];
    let mut opt = BTreeMap::new();
    let mut seq = Vec::new();
    for name in names {
        if rng.gen_bool(0.6) {
            opt.insert(name.to_string(), rng.gen_range(0.0..1.0));
            let span = if code > 0 && rng.gen_bool(0.3) {
                let s = rng.gen_range(0..code);
                Some(Span::new(s, rng.gen_range(s + 1..=code)))
            } else {
                None
            };
            seq.push(SequenceScore { name: name.into(), score: rng.gen_range(-1.0..1.0), span });
        }
    }
    Instance {
        mask,
        syntax,
        diags,
        seq,
        kl: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        weights: RewardWeights {
            sync: rng.gen_range(0.01..1.0),
            lint: rng.gen_range(0.0..1.0),
            kl: rng.gen_range(0.0..1.0),
            opt,
        },
    }
}

impl Instance {
    fn inputs(&self) -> RewardInputs<'_> {
        RewardInputs {
            code_mask: &self.mask,
            syntax_scores: &self.syntax,
            diagnostics: &self.diags,
            sequence: &self.seq,
            kl: &self.kl,
        }
    }
}

#[test]
fn reward_conservation_and_mask_discipline() {
    let mut rng = StdRng::seed_from_u64(18);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let rv = compose(&inst.inputs(), &inst.weights, Placement::Dense).unwrap();
        let sums = rv.component_sums();
        let w = &inst.weights;
        assert!((sums["sync"] - w.sync * inst.syntax.iter().sum::<f64>()).abs() < 1e-9);
        assert!((sums["lint"] - w.lint * lint_score(&inst.diags)).abs() < 1e-9);
        assert!((sums["kl"] + w.kl * inst.kl.iter().sum::<f64>()).abs() < 1e-9);
        for s in &inst.seq {
            assert!((sums[&s.name] - w.opt[&s.name] * s.score).abs() < 1e-9);
        }
        for t in 0..rv.len() {
            let direct: f64 = rv.components.values().map(|v| v[t]).sum();
            assert!((rv.total[t] - direct).abs() < 1e-12);
        }
        let last = rv.len() - 1;
        for (name, v) in &rv.components {
            if name == "kl" {
                continue;
            }
            for t in 0..rv.len() {
                // The terminator may carry syntax blame or the no-code fallback.
                if !inst.mask[t] && t != last {
                    assert_eq!(v[t], 0.0, "{name} at {t}");
                }
            }
        }
    }
}

#[test]
fn dense_and_terminal_returns_agree() {
    let mut rng = StdRng::seed_from_u64(19);
    for _ in 0..1000 {
        let inst = random_instance(&mut rng);
        let dense = compose(&inst.inputs(), &inst.weights, Placement::Dense).unwrap();
        let sparse = compose(&inst.inputs(), &inst.weights, Placement::Terminal).unwrap();
        assert!((dense.return_sum() - sparse.return_sum()).abs() < 1e-9);
    }
}

#[test]
fn reward_is_linear_in_sequence_scores() {
    let mut rng = StdRng::seed_from_u64(20);
    for _ in 0..300 {
        let inst = random_instance(&mut rng);
        let Some(first) = inst.seq.first().cloned() else { continue };
        let base = compose(&inst.inputs(), &inst.weights, Placement::Dense).unwrap();
        let mut seq2 = inst.seq.clone();
        seq2[0].score = 2.0 * first.score;
        let twice = compose(&RewardInputs { sequence: &seq2, ..inst.inputs() }, &inst.weights, Placement::Dense)
            .unwrap();
        for t in 0..base.len() {
            let a = base.components[&first.name][t];
            assert!((twice.components[&first.name][t] - 2.0 * a).abs() < 1e-12);
        }
    }
}

#[test]
fn removing_a_diagnostic_changes_only_its_span() {
    let mut rng = StdRng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 300 {
        let inst = random_instance(&mut rng);
        if inst.diags.is_empty() {
            continue;
        }
        // Locality is exact only while the lint sum stays inside the clamp.
        let raw: f64 = inst.diags.iter().map(|d| d.score_delta).sum();
        if raw < -1.0 {
            continue;
        }
        checked += 1;
        let full = compose(&inst.inputs(), &inst.weights, Placement::Dense).unwrap();
        let k = rng.gen_range(0..inst.diags.len());
        let mut fewer = inst.diags.clone();
        let removed = fewer.remove(k);
        let less = compose(&RewardInputs { diagnostics: &fewer, ..inst.inputs() }, &inst.weights, Placement::Dense)
            .unwrap();
        let single =
            attribute_span(removed.score_delta, removed.token_span, inst.weights.lint, full.len()).unwrap();
        for t in 0..full.len() {
            let diff = full.total[t] - less.total[t];
            if removed.token_span.contains(t) {
                assert!((diff - single[t]).abs() < 1e-12);
            } else {
                assert!(diff.abs() < 1e-12);
            }
        }
    }
}
