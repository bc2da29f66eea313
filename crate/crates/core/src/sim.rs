//! Deterministic RoboLang interpreter on top of a discrete service-robot world.
//!
//! Execution stops at the first problem. Infeasible robot actions (navigating
//! to an unknown or unreachable room, grasping an object that is not there,
//! ...) are [`SimulationFault`]s, and so are type errors and undefined
//! variables, located at the statement that evaluated them; a failing
//! `assert` ends the run as a completion failure.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::lang::{
    self, Action, BinOp, CmpOp, Cond, Expr, ExprKind, Program, Span, Stmt, StmtKind, TokenId,
    Vocab,
};

/// Primitive steps allowed before execution is aborted.
pub const STEP_BUDGET: usize = 1024;

/// Location marker for the object in the robot's gripper.
pub const HELD: &str = "HELD";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Location {
    Room(String),
    Held,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub rooms: BTreeSet<String>,
    pub objects: BTreeMap<String, Location>,
    pub robot_room: String,
    pub holding: Option<String>,
    /// Unordered room pairs, stored with the lexicographically smaller room first.
    pub adjacency: BTreeSet<(String, String)>,
    pub said: Vec<String>,
}

impl WorldState {
    pub fn adjacent(&self, a: &str, b: &str) -> bool {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.adjacency.contains(&key)
    }

    pub fn connect(&mut self, a: &str, b: &str) {
        let key = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        self.adjacency.insert(key);
    }

    /// Whether `to` can be reached from `from` through adjacent rooms.
    pub fn reachable(&self, from: &str, to: &str) -> bool {
        if !self.rooms.contains(to) || !self.rooms.contains(from) {
            return false;
        }
        let mut seen = BTreeSet::from([from.to_string()]);
        let mut queue = VecDeque::from([from.to_string()]);
        while let Some(r) = queue.pop_front() {
            if r == to {
                return true;
            }
            for (a, b) in &self.adjacency {
                let next = if *a == r {
                    b
                } else if *b == r {
                    a
                } else {
                    continue;
                };
                if seen.insert(next.clone()) {
                    queue.push_back(next.clone());
                }
            }
        }
        false
    }

    /// Room an object currently occupies; a held object is where the robot is.
    pub fn object_room(&self, object: &str) -> Option<&str> {
        match self.objects.get(object)? {
            Location::Room(r) => Some(r),
            Location::Held => Some(&self.robot_room),
        }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if !self.rooms.contains(&self.robot_room) {
            return Err(format!("robot room {} is not a room", self.robot_room));
        }
        let held: Vec<&String> = self
            .objects
            .iter()
            .filter(|(_, l)| **l == Location::Held)
            .map(|(o, _)| o)
            .collect();
        if held.len() > 1 {
            return Err("more than one object held".into());
        }
        if held.first().copied() != self.holding.as_ref() {
            return Err("holding disagrees with object locations".into());
        }
        for (o, l) in &self.objects {
            if let Location::Room(r) = l {
                if !self.rooms.contains(r) {
                    return Err(format!("{o} is in unknown room {r}"));
                }
            }
        }
        for (a, b) in &self.adjacency {
            if a > b || !self.rooms.contains(a) || !self.rooms.contains(b) {
                return Err(format!("bad adjacency ({a}, {b})"));
            }
        }
        Ok(())
    }

    /// `go_to` primitive.
    pub fn go_to(&mut self, room: &str) -> Result<(), String> {
        if !self.rooms.contains(room) {
            return Err(format!("{room} is not a room in this world"));
        }
        if !self.reachable(&self.robot_room, room) {
            return Err(format!("{room} is not reachable from {}", self.robot_room));
        }
        self.robot_room = room.to_string();
        Ok(())
    }

    /// `pick` primitive.
    pub fn pick(&mut self, object: &str) -> Result<(), String> {
        if let Some(h) = &self.holding {
            return Err(format!("already holding {h}"));
        }
        match self.objects.get(object) {
            None => Err(format!("{object} does not exist")),
            Some(Location::Room(r)) if *r == self.robot_room => {
                self.objects.insert(object.to_string(), Location::Held);
                self.holding = Some(object.to_string());
                Ok(())
            }
            Some(_) => Err(format!("{object} is not in {}", self.robot_room)),
        }
    }

    /// `place` primitive.
    pub fn place(&mut self, object: &str) -> Result<(), String> {
        if self.holding.as_deref() != Some(object) {
            return Err(format!("not holding {object}"));
        }
        self.objects
            .insert(object.to_string(), Location::Room(self.robot_room.clone()));
        self.holding = None;
        Ok(())
    }

    pub fn transcript(&self) -> &[String] {
        &self.said
    }
}

/// Atomic postcondition over the final world and transcript.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Atom {
    ObjectAt(String, String),
    RobotAt(String),
    SaidContains(String),
    Holding(String),
    HoldingNothing,
}

impl Atom {
    pub fn holds(&self, world: &WorldState) -> bool {
        match self {
            Atom::ObjectAt(o, r) => {
                world.objects.get(o) == Some(&Location::Room(r.clone()))
            }
            Atom::RobotAt(r) => world.robot_room == *r,
            Atom::SaidContains(s) => world.said.iter().any(|x| x == s),
            Atom::Holding(o) => world.holding.as_deref() == Some(o.as_str()),
            Atom::HoldingNothing => world.holding.is_none(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::ObjectAt(o, r) => write!(f, "object_at({o},{r})"),
            Atom::RobotAt(r) => write!(f, "robot_at({r})"),
            Atom::SaidContains(s) => write!(f, "said_contains({s})"),
            Atom::Holding(o) => write!(f, "holding({o})"),
            Atom::HoldingNothing => write!(f, "holding_nothing"),
        }
    }
}

impl FromStr for Atom {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "holding_nothing" {
            return Ok(Atom::HoldingNothing);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("bad atom {s:?}"))?;
        let args: Vec<&str> = rest
            .strip_suffix(')')
            .ok_or_else(|| format!("bad atom {s:?}"))?
            .split(',')
            .collect();
        match (name, args.as_slice()) {
            ("object_at", [o, r]) => Ok(Atom::ObjectAt(o.to_string(), r.to_string())),
            ("robot_at", [r]) => Ok(Atom::RobotAt(r.to_string())),
            ("said_contains", [x]) => Ok(Atom::SaidContains(x.to_string())),
            ("holding", [o]) => Ok(Atom::Holding(o.to_string())),
            _ => Err(format!("bad atom {s:?}")),
        }
    }
}

impl TryFrom<String> for Atom {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Atom> for String {
    fn from(a: Atom) -> String {
        a.to_string()
    }
}

/// One instruction–program pair grounded in a world.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub id: String,
    pub prompt: String,
    pub initial_world: WorldState,
    pub goal: Vec<Atom>,
    pub assertions: Vec<Atom>,
    pub reference_program: String,
}

/// Flat, line-serializable form of a [`TaskSpec`]; field order is the
/// on-disk order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub prompt: String,
    pub rooms: Vec<String>,
    pub adjacency: Vec<(String, String)>,
    pub objects: BTreeMap<String, String>,
    pub robot_room: String,
    pub goal_atoms: Vec<Atom>,
    pub assertions: Vec<Atom>,
    pub reference_program: String,
}

impl From<&TaskSpec> for TaskRecord {
    fn from(t: &TaskSpec) -> Self {
        let w = &t.initial_world;
        TaskRecord {
            id: t.id.clone(),
            prompt: t.prompt.clone(),
            rooms: w.rooms.iter().cloned().collect(),
            adjacency: w.adjacency.iter().cloned().collect(),
            objects: w
                .objects
                .iter()
                .map(|(o, l)| {
                    let loc = match l {
                        Location::Room(r) => r.clone(),
                        Location::Held => HELD.to_string(),
                    };
                    (o.clone(), loc)
                })
                .collect(),
            robot_room: w.robot_room.clone(),
            goal_atoms: t.goal.clone(),
            assertions: t.assertions.clone(),
            reference_program: t.reference_program.clone(),
        }
    }
}

impl TryFrom<TaskRecord> for TaskSpec {
    type Error = String;

    fn try_from(r: TaskRecord) -> Result<Self, Self::Error> {
        let mut world = WorldState {
            rooms: r.rooms.into_iter().collect(),
            objects: BTreeMap::new(),
            robot_room: r.robot_room,
            holding: None,
            adjacency: BTreeSet::new(),
            said: Vec::new(),
        };
        for (a, b) in r.adjacency {
            world.connect(&a, &b);
        }
        for (o, l) in r.objects {
            let loc = if l == HELD {
                world.holding = Some(o.clone());
                Location::Held
            } else {
                Location::Room(l)
            };
            world.objects.insert(o, loc);
        }
        world.check_invariants()?;
        Ok(TaskSpec {
            id: r.id,
            prompt: r.prompt,
            initial_world: world,
            goal: r.goal_atoms,
            assertions: r.assertions,
            reference_program: r.reference_program,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Name(String),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Name(s) => f.write_str(s),
        }
    }
}

/// An infeasible action, located at the statement that attempted it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationFault {
    pub span: Span,
    pub detail: String,
}

/// Why execution stopped early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Halt {
    Fault(SimulationFault),
    /// An in-program `assert` evaluated to false.
    AssertFailed { span: Span },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Execution {
    pub world: WorldState,
    pub halt: Option<Halt>,
    pub steps: usize,
}

impl Execution {
    pub fn transcript(&self) -> &[String] {
        &self.world.said
    }

    pub fn fault(&self) -> Option<&SimulationFault> {
        match &self.halt {
            Some(Halt::Fault(f)) => Some(f),
            _ => None,
        }
    }
}

struct Interp {
    world: WorldState,
    env: BTreeMap<String, Value>,
    steps: usize,
    /// Headers of the enclosing `repeat` loops, innermost last.
    loops: Vec<Span>,
}

impl Interp {
    /// Expression errors (undefined variables, ill-typed operands, `loc` of
    /// an unknown object) carry only a message; the enclosing statement
    /// turns them into a fault at its own span.
    fn eval(&self, e: &Expr) -> Result<Value, String> {
        match &e.kind {
            ExprKind::Int(n) => Ok(Value::Int(*n)),
            ExprKind::Name(s) => Ok(Value::Name(s.clone())),
            ExprKind::Var(v) => self.env.get(v).cloned().ok_or_else(|| format!("undefined variable {v}")),
            ExprKind::Loc(inner) => match self.eval(inner)? {
                Value::Name(o) => match self.world.object_room(&o) {
                    Some(r) => Ok(Value::Name(r.to_string())),
                    None => Err(format!("{o} does not exist")),
                },
                Value::Int(n) => Err(format!("loc expects an object, got the number {n}")),
            },
            ExprKind::Binary { op, lhs, rhs } => match (self.eval(lhs)?, self.eval(rhs)?) {
                (Value::Int(a), Value::Int(b)) => Ok(Value::Int(match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                })),
                _ => Err("arithmetic on a name".into()),
            },
        }
    }

    fn test(&self, c: &Cond) -> Result<bool, String> {
        let (a, b) = (self.eval(&c.lhs)?, self.eval(&c.rhs)?);
        match c.op {
            CmpOp::Eq => Ok(a == b),
            CmpOp::Ne => Ok(a != b),
            CmpOp::Lt | CmpOp::Gt => match (a, b) {
                (Value::Int(a), Value::Int(b)) => Ok(if c.op == CmpOp::Lt { a < b } else { a > b }),
                _ => Err("ordering comparison on a name".into()),
            },
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), Halt> {
        stmts.iter().try_for_each(|s| self.stmt(s))
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), Halt> {
        self.steps += 1;
        if self.steps > STEP_BUDGET {
            return Err(Halt::Fault(SimulationFault {
                span: self.loops.last().copied().unwrap_or(s.fault_span()),
                detail: format!("step budget of {STEP_BUDGET} exceeded"),
            }));
        }
        let fault = |detail: String| {
            Halt::Fault(SimulationFault {
                span: s.fault_span(),
                detail,
            })
        };
        match &s.kind {
            StmtKind::Assign { var, value } => {
                let v = self.eval(value).map_err(fault)?;
                self.env.insert(var.clone(), v);
            }
            StmtKind::Call { action, arg } => {
                let v = self.eval(arg).map_err(fault)?;
                match (action, v) {
                    (Action::Say, v) => self.world.said.push(v.to_string()),
                    (_, Value::Int(n)) => {
                        return Err(fault(format!("{} got the number {n}", action.name())))
                    }
                    (Action::GoTo, Value::Name(r)) => self.world.go_to(&r).map_err(fault)?,
                    (Action::Pick, Value::Name(o)) => self.world.pick(&o).map_err(fault)?,
                    (Action::Place, Value::Name(o)) => self.world.place(&o).map_err(fault)?,
                }
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                if self.test(cond).map_err(fault)? {
                    self.block(then_body)?;
                } else if let Some(e) = else_body {
                    self.block(e)?;
                }
            }
            StmtKind::Repeat {
                count,
                body,
                header,
            } => {
                self.loops.push(*header);
                for _ in 0..*count {
                    self.block(body)?;
                }
                self.loops.pop();
            }
            StmtKind::Assert { cond } => {
                if !self.test(cond).map_err(fault)? {
                    return Err(Halt::AssertFailed { span: s.span });
                }
            }
        }
        Ok(())
    }
}

/// Runs `program` from `world`. Pure: the same inputs give the same result.
pub fn execute(program: &Program, world: &WorldState) -> Execution {
    let mut it = Interp {
        world: world.clone(),
        env: BTreeMap::new(),
        steps: 0,
        loops: Vec::new(),
    };
    let halt = it.block(&program.stmts).err();
    Execution {
        world: it.world,
        halt,
        steps: it.steps,
    }
}

/// Outcome classes, ordered from worst to best.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    ParseError,
    SimulationError,
    CompletionError,
    Success,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 4] = [
        OutcomeKind::ParseError,
        OutcomeKind::SimulationError,
        OutcomeKind::CompletionError,
        OutcomeKind::Success,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OutcomeKind::ParseError => "Parse err.",
            OutcomeKind::SimulationError => "Simulation err.",
            OutcomeKind::CompletionError => "Completion err.",
            OutcomeKind::Success => "Success",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimOutcome {
    pub kind: OutcomeKind,
    /// Present exactly for simulation errors.
    pub fail_span: Option<Span>,
    pub detail: String,
}

impl SimOutcome {
    fn new(kind: OutcomeKind, detail: impl Into<String>) -> Self {
        SimOutcome {
            kind,
            fail_span: None,
            detail: detail.into(),
        }
    }
}

/// Outcome plus the final world when the program ran.
#[derive(Debug, Clone)]
pub struct ProgramRun {
    pub outcome: SimOutcome,
    pub execution: Option<Execution>,
}

/// Classifies a token sequence (optionally EOS-terminated) against a task.
pub fn run_ids(ids: &[TokenId], task: &TaskSpec) -> ProgramRun {
    match lang::parse_ids(Vocab::standard(), ids) {
        Err(e) => ProgramRun {
            outcome: SimOutcome::new(OutcomeKind::ParseError, e.to_string()),
            execution: None,
        },
        Ok(ast) => run_program(&ast, task),
    }
}

pub fn run_program(ast: &Program, task: &TaskSpec) -> ProgramRun {
    let exec = execute(ast, &task.initial_world);
    let outcome = match &exec.halt {
        Some(Halt::Fault(f)) => SimOutcome {
            kind: OutcomeKind::SimulationError,
            fail_span: Some(f.span),
            detail: f.detail.clone(),
        },
        Some(Halt::AssertFailed { span }) => {
            SimOutcome::new(OutcomeKind::CompletionError, format!("assert failed at {span}"))
        }
        None => match task.goal.iter().find(|a| !a.holds(&exec.world)) {
            Some(a) => SimOutcome::new(OutcomeKind::CompletionError, format!("goal {a} not met")),
            None => SimOutcome::new(OutcomeKind::Success, ""),
        },
    };
    ProgramRun {
        outcome,
        execution: Some(exec),
    }
}

fn run_source(source: &str, task: &TaskSpec) -> ProgramRun {
    match lang::tokenize(Vocab::standard(), source) {
        Ok(p) => run_ids(&p.ids, task),
        Err(e) => ProgramRun {
            outcome: SimOutcome::new(OutcomeKind::ParseError, e.to_string()),
            execution: None,
        },
    }
}

pub fn classify(source: &str, task: &TaskSpec) -> SimOutcome {
    run_source(source, task).outcome
}

impl ProgramRun {
    /// Pass@1 style check: success and every post-hoc assertion holds.
    pub fn passes_tests(&self, task: &TaskSpec) -> bool {
        match (&self.outcome.kind, &self.execution) {
            (OutcomeKind::Success, Some(exec)) => {
                task.assertions.iter().all(|a| a.holds(&exec.world))
            }
            _ => false,
        }
    }
}

/// 1 when the program succeeds and all task assertions hold, else 0.
pub fn unit_test_reward(source: &str, task: &TaskSpec) -> f64 {
    if run_source(source, task).passes_tests(task) {
        1.0
    } else {
        0.0
    }
}

/// Scalar reward per outcome class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRewardLadder {
    pub success: f64,
    pub completion_error: f64,
    pub simulation_error: f64,
    pub parse_error: f64,
}

impl Default for SimRewardLadder {
    fn default() -> Self {
        SimRewardLadder {
            success: 1.0,
            completion_error: 0.0,
            simulation_error: -0.5,
            parse_error: -1.0,
        }
    }
}

/// Simulator feedback and, for simulation errors, the span to blame.
pub fn sim_reward(outcome: &SimOutcome, ladder: &SimRewardLadder) -> (f64, Option<Span>) {
    match outcome.kind {
        OutcomeKind::Success => (ladder.success, None),
        OutcomeKind::CompletionError => (ladder.completion_error, None),
        OutcomeKind::SimulationError => (ladder.simulation_error, outcome.fail_span),
        OutcomeKind::ParseError => (ladder.parse_error, None),
    }
}
