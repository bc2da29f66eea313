//! Procedural instruction/program corpus over randomly generated worlds.
//!
//! Every task is produced by one of five templates and re-validated before it
//! is accepted: the reference program must run to `Success` and satisfy every
//! assertion in the task's own world.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use drs_core::lang::vocab::{OBJECTS, ROOMS, WORDS};
use drs_core::sim::{run_ids, Atom, Location, OutcomeKind, TaskRecord, TaskSpec, WorldState};
use drs_core::{lang, TokenId, Vocab};

/// Attempts per task before generation gives up.
pub const MAX_ATTEMPTS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("n_tasks must be at least 1")]
    NoTasks,
    #[error("invalid difficulty mix: {0}")]
    InvalidMix(String),
    #[error("task {index}: no valid task after {MAX_ATTEMPTS} attempts")]
    GenerationRetryExhausted { index: usize },
    #[error("prompt word {0:?} is not in the vocabulary")]
    UnknownWord(String),
    #[error("task {id}: {reason}")]
    InvalidTask { id: String, reason: String },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Share of tasks drawn from each difficulty tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyMix {
    pub one_step: f64,
    pub multi_step: f64,
    pub conditional: f64,
}

impl Default for DifficultyMix {
    fn default() -> Self {
        DifficultyMix {
            one_step: 0.4,
            multi_step: 0.4,
            conditional: 0.2,
        }
    }
}

impl DifficultyMix {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let parts = [self.one_step, self.multi_step, self.conditional];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CorpusError::InvalidMix("shares must be non-negative".into()));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidMix(format!("shares sum to {total}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    Announce,
    Fetch,
    Deliver,
    MultiPickup,
    ConditionalFetch,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::Announce,
        Template::Fetch,
        Template::Deliver,
        Template::MultiPickup,
        Template::ConditionalFetch,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tier {
    OneStep,
    MultiStep,
    Conditional,
}

/// A task before validation.
struct Draft {
    prompt: String,
    world: WorldState,
    goal: Vec<Atom>,
    program: String,
}

fn random_world(rng: &mut StdRng) -> WorldState {
    let n_rooms = rng.gen_range(3..=6);
    let n_objects = rng.gen_range(2..=8);
    let rooms: Vec<&str> = ROOMS.choose_multiple(rng, n_rooms).copied().collect();
    let objects: Vec<&str> = OBJECTS.choose_multiple(rng, n_objects).copied().collect();
    let mut w = WorldState {
        rooms: rooms.iter().map(|r| r.to_string()).collect(),
        objects: objects
            .iter()
            .map(|o| (o.to_string(), Location::Room(rooms.choose(rng).expect("rooms").to_string())))
            .collect(),
        robot_room: rooms.choose(rng).expect("rooms").to_string(),
        holding: None,
        adjacency: BTreeSet::new(),
        said: Vec::new(),
    };
    // Random spanning tree plus a few shortcuts keeps every room reachable.
    for i in 1..rooms.len() {
        let j = rng.gen_range(0..i);
        w.connect(rooms[i], rooms[j]);
    }
    for _ in 0..rng.gen_range(0..=2) {
        let a = rooms.choose(rng).expect("rooms");
        let b = rooms.choose(rng).expect("rooms");
        if a != b {
            w.connect(a, b);
        }
    }
    w
}

fn give(w: &mut WorldState, object: &str) {
    w.objects.insert(object.to_string(), Location::Held);
    w.holding = Some(object.to_string());
}

fn room_of(w: &WorldState, object: &str) -> String {
    w.object_room(object).expect("object on the floor").to_string()
}

fn pick_object(w: &WorldState, rng: &mut StdRng) -> String {
    w.objects.keys().choose(rng).expect("objects").clone()
}

fn pick_room(w: &WorldState, rng: &mut StdRng) -> String {
    w.rooms.iter().choose(rng).expect("rooms").clone()
}

fn draft(tier: Tier, rng: &mut StdRng) -> (Template, Draft) {
    let mut w = random_world(rng);
    let obj = pick_object(&w, rng);
    match (tier, rng.gen_range(0..3)) {
        (Tier::OneStep, 0) => {
            let word = WORDS.choose(rng).expect("words");
            let d = Draft {
                prompt: format!("say {word}"),
                goal: vec![Atom::SaidContains(word.to_string())],
                program: format!("say ( {word} )"),
                world: w,
            };
            (Template::Announce, d)
        }
        (Tier::OneStep, 1) => {
            w.robot_room = room_of(&w, &obj);
            let d = Draft {
                prompt: format!("fetch {obj}"),
                goal: vec![Atom::Holding(obj.clone())],
                program: format!("pick ( {obj} )"),
                world: w,
            };
            (Template::Fetch, d)
        }
        (Tier::OneStep, _) => {
            give(&mut w, &obj);
            let here = w.robot_room.clone();
            let d = Draft {
                prompt: format!("drop {obj}"),
                goal: vec![Atom::ObjectAt(obj.clone(), here)],
                program: format!("place ( {obj} )"),
                world: w,
            };
            (Template::Deliver, d)
        }
        (Tier::MultiStep, 0) => match rng.gen_range(0..3) {
            0 => {
                let (a, b) = (rng.gen_range(0..=16u32), rng.gen_range(0..=16u32));
                let d = Draft {
                    prompt: format!("say the sum of {a} and {b}"),
                    goal: vec![Atom::SaidContains((a + b).to_string())],
                    program: format!("x = {a} + {b} say ( x )"),
                    world: w,
                };
                (Template::Announce, d)
            }
            1 => {
                let a = rng.gen_range(1..=32u32);
                let b = rng.gen_range(0..=a);
                let d = Draft {
                    prompt: format!("say the difference of {a} and {b}"),
                    goal: vec![Atom::SaidContains((a - b).to_string())],
                    program: format!("x = {a} - {b} say ( x )"),
                    world: w,
                };
                (Template::Announce, d)
            }
            _ => {
                let room = room_of(&w, &obj);
                let d = Draft {
                    prompt: format!("say where is {obj}"),
                    goal: vec![Atom::SaidContains(room)],
                    program: format!("x = loc ( {obj} ) say ( x )"),
                    world: w,
                };
                (Template::Announce, d)
            }
        },
        (Tier::MultiStep, 1) => {
            if rng.gen_bool(0.5) {
                let room = room_of(&w, &obj);
                let d = Draft {
                    prompt: format!("fetch {obj} from {room}"),
                    goal: vec![Atom::Holding(obj.clone())],
                    program: format!("go_to ( {room} ) pick ( {obj} )"),
                    world: w,
                };
                (Template::Fetch, d)
            } else {
                give(&mut w, &obj);
                let room = pick_room(&w, rng);
                let d = Draft {
                    prompt: format!("deliver {obj} to {room}"),
                    goal: vec![Atom::ObjectAt(obj.clone(), room.clone())],
                    program: format!("go_to ( {room} ) place ( {obj} )"),
                    world: w,
                };
                (Template::Deliver, d)
            }
        }
        (Tier::MultiStep, _) => {
            // Drop the held object, then pick up a second one.
            let other = pick_object(&w, rng);
            give(&mut w, &obj);
            let here = w.robot_room.clone();
            let (prompt, program) = if rng.gen_bool(0.5) {
                w.objects.insert(other.clone(), Location::Room(here.clone()));
                (format!("drop {obj} then fetch {other}"), format!("place ( {obj} ) pick ( {other} )"))
            } else {
                let room = room_of(&w, &other);
                (
                    format!("drop {obj} then fetch {other} from {room}"),
                    format!("place ( {obj} ) go_to ( {room} ) pick ( {other} )"),
                )
            };
            let d = Draft {
                prompt,
                goal: vec![Atom::ObjectAt(obj.clone(), here), Atom::Holding(other)],
                program,
                world: w,
            };
            (Template::MultiPickup, d)
        }
        (Tier::Conditional, 0) => {
            let d = Draft {
                prompt: format!("fetch {obj} from where it is"),
                goal: vec![Atom::Holding(obj.clone())],
                program: format!("x = loc ( {obj} ) go_to ( x ) pick ( {obj} )"),
                world: w,
            };
            (Template::Fetch, d)
        }
        (Tier::Conditional, _) => {
            let room = if rng.gen_bool(0.5) { room_of(&w, &obj) } else { pick_room(&w, rng) };
            let word = WORDS.choose(rng).expect("words");
            let goal = if room_of(&w, &obj) == room {
                Atom::Holding(obj.clone())
            } else {
                Atom::SaidContains(word.to_string())
            };
            let d = Draft {
                prompt: format!("fetch {obj} if in {room} else say {word}"),
                goal: vec![goal],
                program: format!("if loc ( {obj} ) == {room} {{ go_to ( {room} ) pick ( {obj} ) }} else {{ say ( {word} ) }}"),
                world: w,
            };
            (Template::ConditionalFetch, d)
        }
    }
}

/// Checks that hold after the reference run and are not already goals.
fn assertion_candidates(goal: &[Atom], end: &WorldState) -> Vec<Atom> {
    let mut out = vec![Atom::RobotAt(end.robot_room.clone())];
    out.push(match &end.holding {
        Some(o) => Atom::Holding(o.clone()),
        None => Atom::HoldingNothing,
    });
    for (o, l) in &end.objects {
        if let Location::Room(r) = l {
            out.push(Atom::ObjectAt(o.clone(), r.clone()));
        }
    }
    for s in &end.said {
        out.push(Atom::SaidContains(s.clone()));
    }
    out.retain(|a| !goal.contains(a));
    out
}

/// BOS, the prompt words, then the code fence.
pub fn encode_prompt(text: &str) -> Result<Vec<TokenId>, CorpusError> {
    let vocab = Vocab::standard();
    let mut ids = vec![TokenId::BOS];
    for w in text.split_whitespace() {
        ids.push(vocab.id(w).ok_or_else(|| CorpusError::UnknownWord(w.to_string()))?);
    }
    ids.push(TokenId::FENCE);
    Ok(ids)
}

/// Full re-validation of a task: world invariants, encodable prompt, and a
/// reference program that succeeds and passes every assertion.
pub fn validate_task(task: &TaskSpec) -> Result<(), String> {
    task.initial_world.check_invariants()?;
    encode_prompt(&task.prompt).map_err(|e| e.to_string())?;
    if task.assertions.is_empty() || task.assertions.len() > 3 {
        return Err(format!("{} assertions, expected 1 to 3", task.assertions.len()));
    }
    let prog = lang::tokenize(Vocab::standard(), &task.reference_program).map_err(|e| e.to_string())?;
    let run = run_ids(&prog.ids, task);
    if run.outcome.kind != OutcomeKind::Success {
        return Err(format!("reference classifies as {:?}: {}", run.outcome.kind, run.outcome.detail));
    }
    if !run.passes_tests(task) {
        return Err("reference fails an assertion".into());
    }
    Ok(())
}

fn finish(id: String, d: Draft, rng: &mut StdRng) -> Option<TaskSpec> {
    let mut task = TaskSpec {
        id,
        prompt: d.prompt,
        initial_world: d.world,
        goal: d.goal,
        assertions: Vec::new(),
        reference_program: d.program,
    };
    let prog = lang::tokenize(Vocab::standard(), &task.reference_program).ok()?;
    let run = run_ids(&prog.ids, &task);
    let end = run.execution.as_ref()?.world.clone();
    let candidates = assertion_candidates(&task.goal, &end);
    if candidates.is_empty() {
        return None;
    }
    let k = rng.gen_range(1..=3.min(candidates.len()));
    let mut chosen: Vec<Atom> = candidates.choose_multiple(rng, k).cloned().collect();
    chosen.sort();
    task.assertions = chosen;
    validate_task(&task).ok()?;
    Some(task)
}

/// Generates `n_tasks` validated tasks; identical seeds give identical corpora.
pub fn generate_corpus(seed: u64, n_tasks: usize, mix: &DifficultyMix) -> Result<Vec<TaskSpec>, CorpusError> {
    generate_tagged(seed, n_tasks, mix).map(|v| v.into_iter().map(|(_, t)| t).collect())
}

/// Like [`generate_corpus`], also reporting the template behind each task.
pub fn generate_tagged(
    seed: u64,
    n_tasks: usize,
    mix: &DifficultyMix,
) -> Result<Vec<(Template, TaskSpec)>, CorpusError> {
    if n_tasks == 0 {
        return Err(CorpusError::NoTasks);
    }
    mix.validate()?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_tasks);
    for index in 0..n_tasks {
        let u: f64 = rng.gen();
        let tier = if u < mix.one_step {
            Tier::OneStep
        } else if u < mix.one_step + mix.multi_step {
            Tier::MultiStep
        } else {
            Tier::Conditional
        };
        let id = format!("s{seed}-{index:05}");
        let task = (0..MAX_ATTEMPTS).find_map(|_| {
            let (template, d) = draft(tier, &mut rng);
            finish(id.clone(), d, &mut rng).map(|t| (template, t))
        });
        out.push(task.ok_or(CorpusError::GenerationRetryExhausted { index })?);
    }
    Ok(out)
}

/// Splits off the last `n_eval` tasks as the held-out set.
pub fn split_holdout(mut tasks: Vec<TaskSpec>, n_eval: usize) -> (Vec<TaskSpec>, Vec<TaskSpec>) {
    let eval = tasks.split_off(tasks.len().saturating_sub(n_eval));
    (tasks, eval)
}

/// One JSON object per line, in [`TaskRecord`] field order.
pub fn write_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for t in tasks {
        let line = serde_json::to_string(&TaskRecord::from(t)).expect("task records serialize");
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads and re-validates every task in a JSONL corpus.
pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>, CorpusError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut tasks = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        let id = record.id.clone();
        let task = TaskSpec::try_from(record).map_err(|reason| CorpusError::InvalidTask { id: id.clone(), reason })?;
        validate_task(&task).map_err(|reason| CorpusError::InvalidTask { id: id.clone(), reason })?;
        if seen.insert(id.clone(), i).is_some() {
            return Err(CorpusError::InvalidTask { id, reason: "duplicate task id".into() });
        }
        tasks.push(task);
    }
    Ok(tasks)
}
