//! The elicitation loop: select, ask, update, and finally commit to a profile.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{select, AcquisitionScore};
use crate::belief::{predict_profile, BeliefModel};
use crate::error::{Error, Result};
use crate::seed::{session_seed, turn_rng};
use crate::types::{
    CriterionId, CriterionRegistry, History, Observation, PreferenceProfile, PreferenceValue,
    SessionConfig, TaskSpec,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub value: PreferenceValue,
    /// Set when the answer is a fallback rather than what the user said.
    pub warning: Option<String>,
}

impl Answer {
    pub fn clean(value: PreferenceValue) -> Self {
        Self {
            value,
            warning: None,
        }
    }
}

/// Anything that can answer "how do you feel about criterion c?".
pub trait UserAgent {
    fn answer(&mut self, criterion: &CriterionId) -> Result<Answer>;
}

/// Answers from a known profile: the level for cared criteria, NoPreference
/// for everything else.
#[derive(Debug, Clone)]
pub struct PassiveUser {
    profile: PreferenceProfile,
}

pub fn simulate_passive_user(profile: &PreferenceProfile) -> PassiveUser {
    PassiveUser {
        profile: profile.clone(),
    }
}

impl UserAgent for PassiveUser {
    fn answer(&mut self, criterion: &CriterionId) -> Result<Answer> {
        Ok(Answer::clean(self.profile.answer_for(criterion)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnDetail {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<AcquisitionScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Transcript and outcome of one session.
///
/// Wall time is kept out of the serialized form so records of identical runs
/// are byte-identical; see [`write_timings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub task_id: String,
    pub user_index: usize,
    pub config: SessionConfig,
    pub history: History,
    pub turns: Vec<TurnDetail>,
    pub predicted: PreferenceProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PreferenceProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SessionRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn warnings(&self) -> impl Iterator<Item = &str> {
        self.turns.iter().filter_map(|t| t.warning.as_deref())
    }
}

/// Runs one session. Randomness comes only from `config.seed`, per turn.
///
/// A failing user agent ends the session early; the returned record carries
/// the error and an empty prediction.
pub fn run_session<M: BeliefModel>(
    task: &TaskSpec,
    model: &M,
    user: &mut dyn UserAgent,
    config: &SessionConfig,
) -> Result<SessionRecord> {
    let start = Instant::now();
    let mut state = model.init();
    let mut turns = Vec::new();
    let mut record = SessionRecord {
        task_id: task.task_id().to_string(),
        user_index: 0,
        config: config.clone(),
        history: History::new(),
        turns: Vec::new(),
        predicted: PreferenceProfile::new(),
        ground_truth: None,
        error: None,
        wall_time: Duration::ZERO,
    };
    for t in 0..config.effective_budget(task) {
        let history = model.history(&state);
        let remaining: Vec<CriterionId> = task
            .criteria()
            .iter()
            .filter(|c| !history.contains(c))
            .cloned()
            .collect();
        let mut rng = turn_rng(config.seed, t);
        let sel = select(model, &state, &remaining, config, &mut rng)?;
        let answer = match user.answer(&sel.criterion) {
            Ok(a) => a,
            Err(e) => {
                record.history = model.history(&state).clone();
                record.turns = turns;
                record.error = Some(e.to_string());
                record.wall_time = start.elapsed();
                return Ok(record);
            }
        };
        state = model.observe(
            &state,
            &Observation {
                criterion: sel.criterion,
                answer: answer.value,
            },
        )?;
        turns.push(TurnDetail {
            scores: sel.scores,
            warning: answer.warning,
        });
    }
    record.predicted = predict_profile(model, &state, task, config.care_threshold)?;
    record.history = model.history(&state).clone();
    record.turns = turns;
    record.wall_time = start.elapsed();
    Ok(record)
}

/// Number of consecutive malformed inputs accepted before falling back.
pub const MAX_PROMPTS: usize = 3;

/// Parses a typed answer: a level 1..5, or "none".
pub fn parse_typed_answer(line: &str) -> Option<PreferenceValue> {
    let s = line.trim().to_ascii_lowercase();
    match s.as_str() {
        "none" | "no preference" | "no" | "-" => Some(PreferenceValue::NoPreference),
        _ => match s.parse::<u8>() {
            Ok(n @ 1..=5) => Some(PreferenceValue::Level(n)),
            _ => None,
        },
    }
}

struct TerminalUser<'a, R: BufRead, W: Write> {
    registry: &'a CriterionRegistry,
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> UserAgent for TerminalUser<'_, R, W> {
    fn answer(&mut self, criterion: &CriterionId) -> Result<Answer> {
        let io = |e| Error::io("<terminal>", e);
        let description = self
            .registry
            .get(criterion)
            .map(|c| c.description.as_str())
            .unwrap_or_else(|| criterion.as_str());
        writeln!(self.output, "\n[{criterion}] {description}").map_err(io)?;
        writeln!(
            self.output,
            "Rate 1 (strongly avoid) to 5 (strongly prefer), or \"none\" for no preference."
        )
        .map_err(io)?;
        for attempt in 1..=MAX_PROMPTS {
            write!(self.output, "> ").map_err(io)?;
            self.output.flush().map_err(io)?;
            let mut line = String::new();
            if self.input.read_line(&mut line).map_err(io)? == 0 {
                return Ok(Answer {
                    value: PreferenceValue::NoPreference,
                    warning: Some(format!("input closed before answering {criterion}")),
                });
            }
            if let Some(v) = parse_typed_answer(&line) {
                return Ok(Answer::clean(v));
            }
            if attempt < MAX_PROMPTS {
                writeln!(self.output, "Please enter 1-5 or \"none\".").map_err(io)?;
            }
        }
        writeln!(self.output, "No valid answer; recording no preference.").map_err(io)?;
        Ok(Answer {
            value: PreferenceValue::NoPreference,
            warning: Some(format!(
                "{MAX_PROMPTS} malformed answers for {criterion}; recorded no preference"
            )),
        })
    }
}

/// Human-in-the-loop session over any line-oriented terminal.
pub fn run_interactive<M: BeliefModel, R: BufRead, W: Write>(
    task: &TaskSpec,
    registry: &CriterionRegistry,
    model: &M,
    config: &SessionConfig,
    input: R,
    mut output: W,
) -> Result<SessionRecord> {
    let io = |e| Error::io("<terminal>", e);
    writeln!(output, "{}", task.prompt_text()).map_err(io)?;
    let mut user = TerminalUser {
        registry,
        input,
        output: &mut output,
    };
    let record = run_session(task, model, &mut user, config)?;
    writeln!(output, "\nPredicted profile:").map_err(io)?;
    for (c, e) in record.predicted.iter() {
        writeln!(output, "  {c}: {}", e.value).map_err(io)?;
    }
    Ok(record)
}

/// One simulated session per (task, user), users given as complete profiles
/// per task. Session seeds derive from `(config.seed, task id, user index)`
/// and records come back in (task, user) order whatever the parallelism.
pub fn run_batch<M: BeliefModel>(
    tasks: &[TaskSpec],
    model: &M,
    users: &[Vec<PreferenceProfile>],
    config: &SessionConfig,
    parallelism: usize,
) -> Result<Vec<SessionRecord>> {
    if tasks.len() != users.len() {
        return Err(Error::invalid("run_batch needs one user list per task"));
    }
    let jobs: Vec<(usize, usize)> = users
        .iter()
        .enumerate()
        .flat_map(|(t, us)| (0..us.len()).map(move |u| (t, u)))
        .collect();
    let run = |&(t, u): &(usize, usize)| {
        let task = &tasks[t];
        let truth = &users[t][u];
        let mut cfg = config.clone();
        cfg.seed = session_seed(config.seed, task.task_id(), u);
        let mut agent = simulate_passive_user(truth);
        let mut rec = run_session(task, model, &mut agent, &cfg).unwrap_or_else(|e| SessionRecord {
            task_id: task.task_id().to_string(),
            user_index: u,
            config: cfg.clone(),
            history: History::new(),
            turns: Vec::new(),
            predicted: PreferenceProfile::new(),
            ground_truth: None,
            error: Some(e.to_string()),
            wall_time: Duration::ZERO,
        });
        rec.user_index = u;
        rec.ground_truth = Some(truth.clone());
        rec
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(run).collect()))
}

/// Writes one JSON record per line.
pub fn write_jsonl(path: &Path, records: &[SessionRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SessionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Record {
                path: path.to_path_buf(),
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Per-session wall times as CSV (task_id, user_index, wall_time_ms).
pub fn write_timings(path: &Path, records: &[SessionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["task_id", "user_index", "wall_time_ms"])?;
    for r in records {
        w.write_record([
            r.task_id.clone(),
            r.user_index.to_string(),
            format!("{:.3}", r.wall_time.as_secs_f64() * 1e3),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
