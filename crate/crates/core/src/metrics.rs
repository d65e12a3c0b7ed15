//! Scoring predicted profiles, normalizing against the generic and oracle
//! endpoints, adaptivity probes and budget/alignment curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::acquisition::select;
use crate::belief::BeliefModel;
use crate::engine::{run_session, simulate_passive_user, SessionRecord};
use crate::error::{Error, Result};
use crate::seed::{session_seed, turn_rng, SeedDeriver};
use crate::types::{
    validate_profile, CriterionId, Observation, PreferenceProfile, PreferenceValue,
    SessionConfig, TaskSpec,
};

/// Rubric points for one truth criterion given the predicted entry.
pub fn rubric_score(predicted: Option<PreferenceValue>, truth_level: u8) -> u8 {
    match predicted {
        Some(PreferenceValue::Level(p)) => match p.abs_diff(truth_level) {
            0 => 5,
            1 => 3,
            _ => 1,
        },
        _ => 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    /// Weighted mean rubric score in [0, 5]; 0 when the truth cares about nothing.
    pub score: f64,
    pub per_criterion: Vec<(CriterionId, u8)>,
    /// Share of predicted cared criteria the user actually cares about.
    pub precision: Option<f64>,
}

/// Scores `predicted` on the criteria `truth` cares about. Predicted
/// NoPreference counts as not addressing the criterion; extra predicted
/// criteria do not affect the score.
pub fn judge_profile(predicted: &PreferenceProfile, truth: &PreferenceProfile) -> Judgement {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut per_criterion = Vec::new();
    for (c, e) in truth.cared() {
        let PreferenceValue::Level(level) = e.value else { continue };
        let s = rubric_score(predicted.value(c), level);
        num += e.weight * s as f64;
        den += e.weight;
        per_criterion.push((c.clone(), s));
    }
    let predicted_cared = predicted.cared_count();
    let hits = predicted
        .cared()
        .filter(|(c, _)| truth.value(c).is_some_and(|v| v.is_level()))
        .count();
    Judgement {
        score: if den > 0.0 { num / den } else { 0.0 },
        per_criterion,
        precision: (predicted_cared > 0).then(|| hits as f64 / predicted_cared as f64),
    }
}

/// [`judge_profile`] after checking both profiles against `task`.
pub fn judge_for_task(
    predicted: &PreferenceProfile,
    truth: &PreferenceProfile,
    task: &TaskSpec,
) -> Result<Judgement> {
    for (name, p) in [("predicted", predicted), ("truth", truth)] {
        if let Some(v) = validate_profile(p, task).first() {
            return Err(Error::invalid(format!(
                "{name} profile does not match task {}: {v}",
                task.task_id()
            )));
        }
    }
    Ok(judge_profile(predicted, truth))
}

/// 100 (S − S_generic) / (S_oracle − S_generic).
pub fn pct_of_oracle(method: f64, generic: f64, oracle: f64) -> Result<f64> {
    if !(oracle > generic) {
        return Err(Error::DegenerateBaseline { generic, oracle });
    }
    Ok(100.0 * ((method - generic) / (oracle - generic)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub sessions: usize,
    pub raw_score: f64,
    pub generic_score: f64,
    pub oracle_score: f64,
    /// None when the oracle does not beat the generic baseline.
    pub pct_of_oracle: Option<f64>,
    pub precision: Option<f64>,
    /// Mean rubric points per criterion id, over sessions where it was cared.
    pub per_criterion: Vec<(CriterionId, f64)>,
    pub failed_sessions: usize,
}

/// Aggregates simulated sessions (those with ground truth). Generic is the
/// empty profile and oracle the truth itself, both judged like any method.
pub fn alignment_report(records: &[SessionRecord]) -> AlignmentReport {
    let mut raw = 0.0;
    let mut generic = 0.0;
    let mut oracle = 0.0;
    let mut n = 0usize;
    let mut failed = 0;
    let mut prec_sum = 0.0;
    let mut prec_n = 0usize;
    let mut per: std::collections::BTreeMap<CriterionId, (f64, usize)> = Default::default();
    let empty = PreferenceProfile::new();
    for r in records {
        if r.failed() {
            failed += 1;
        }
        let Some(truth) = &r.ground_truth else { continue };
        let j = judge_profile(&r.predicted, truth);
        raw += j.score;
        generic += judge_profile(&empty, truth).score;
        oracle += judge_profile(truth, truth).score;
        n += 1;
        if let Some(p) = j.precision {
            prec_sum += p;
            prec_n += 1;
        }
        for (c, s) in j.per_criterion {
            let e = per.entry(c).or_default();
            e.0 += s as f64;
            e.1 += 1;
        }
    }
    let d = n.max(1) as f64;
    let (raw, generic, oracle) = (raw / d, generic / d, oracle / d);
    AlignmentReport {
        sessions: n,
        raw_score: raw,
        generic_score: generic,
        oracle_score: oracle,
        pct_of_oracle: pct_of_oracle(raw, generic, oracle).ok(),
        precision: (prec_n > 0).then(|| prec_sum / prec_n as f64),
        per_criterion: per.into_iter().map(|(c, (s, k))| (c, s / k as f64)).collect(),
        failed_sessions: failed,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnAdaptivity {
    pub turn: usize,
    pub probes: usize,
    pub differing: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdaptivityReport {
    pub probe_count: usize,
    pub differing_count: usize,
    pub adaptivity: f64,
    pub per_turn: Vec<TurnAdaptivity>,
}

impl AdaptivityReport {
    /// Pools probe counts from several reports (for example one per task).
    pub fn combine(reports: &[AdaptivityReport]) -> AdaptivityReport {
        let mut per_turn: Vec<TurnAdaptivity> = Vec::new();
        for r in reports {
            for t in &r.per_turn {
                if per_turn.len() <= t.turn {
                    per_turn.resize_with(t.turn + 1, Default::default);
                }
                let slot = &mut per_turn[t.turn];
                slot.turn = t.turn;
                slot.probes += t.probes;
                slot.differing += t.differing;
            }
        }
        let probe_count = per_turn.iter().map(|t| t.probes).sum();
        let differing_count = per_turn.iter().map(|t| t.differing).sum();
        AdaptivityReport {
            probe_count,
            differing_count,
            adaptivity: ratio(differing_count, probe_count),
            per_turn,
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else {
        0.0
    }
}

/// How often the next question changes when the answer to the current one
/// changes. Every session is replayed; at each turn t < T − 1 every other
/// possible answer to a_t is injected and a_{t+1} recomputed with the same
/// turn randomness (or, with `independent_branch_seeds`, fresh randomness for
/// the counterfactual branch).
pub fn measure_adaptivity<M: BeliefModel>(
    task: &TaskSpec,
    model: &M,
    users: &[PreferenceProfile],
    config: &SessionConfig,
    independent_branch_seeds: bool,
) -> Result<AdaptivityReport> {
    let budget = config.effective_budget(task);
    if budget < 2 {
        return Err(Error::invalid("adaptivity needs an effective budget of at least 2"));
    }
    let mut per_turn: Vec<TurnAdaptivity> = (0..budget - 1)
        .map(|turn| TurnAdaptivity { turn, ..Default::default() })
        .collect();
    for (u, truth) in users.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.seed = session_seed(config.seed, task.task_id(), u);
        let rec = run_session(task, model, &mut simulate_passive_user(truth), &cfg)?;
        if let Some(e) = rec.error {
            return Err(Error::UserAgent(e));
        }
        let obs = rec.history.observations();
        let mut state = model.init();
        for t in 0..budget - 1 {
            let a_t = &obs[t];
            let remaining: Vec<CriterionId> = task
                .criteria()
                .iter()
                .filter(|c| !rec.history.prefix(t + 1).contains(c))
                .cloned()
                .collect();
            let factual = model.observe(&state, a_t)?;
            let next = select(model, &factual, &remaining, &cfg, &mut turn_rng(cfg.seed, t + 1))?;
            for v in PreferenceValue::all() {
                if v == a_t.answer {
                    continue;
                }
                let alt = model.observe(
                    &state,
                    &Observation {
                        criterion: a_t.criterion.clone(),
                        answer: v,
                    },
                )?;
                let mut rng = if independent_branch_seeds {
                    SeedDeriver::new("adaptivity-branch")
                        .u64(cfg.seed)
                        .u64(t as u64)
                        .u64(v.outcome_index() as u64)
                        .rng()
                } else {
                    turn_rng(cfg.seed, t + 1)
                };
                let other = select(model, &alt, &remaining, &cfg, &mut rng)?;
                per_turn[t].probes += 1;
                if other.criterion != next.criterion {
                    per_turn[t].differing += 1;
                }
            }
            state = factual;
        }
    }
    let probe_count: usize = per_turn.iter().map(|t| t.probes).sum();
    let differing_count: usize = per_turn.iter().map(|t| t.differing).sum();
    Ok(AdaptivityReport {
        probe_count,
        differing_count,
        adaptivity: ratio(differing_count, probe_count),
        per_turn,
    })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub mean_pct: f64,
    pub std_pct: f64,
    pub trials: usize,
}

/// Mean ± sample std of %-of-Oracle per budget, sorted by budget.
pub fn efficiency_curve(per_budget: &[(usize, Vec<f64>)]) -> Vec<CurvePoint> {
    let mut rows: Vec<CurvePoint> = per_budget
        .iter()
        .map(|(b, xs)| {
            let (mean_pct, std_pct) = mean_std(xs);
            CurvePoint {
                budget: *b,
                mean_pct,
                std_pct,
                trials: xs.len(),
            }
        })
        .collect();
    rows.sort_by_key(|r| r.budget);
    rows
}

/// Fractional number of questions at which the curve first reaches
/// `threshold`, interpolating linearly on its running maximum.
pub fn queries_to_threshold(curve: &[CurvePoint], threshold: f64) -> Option<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut prev: Option<(f64, f64)> = None;
    for p in curve {
        best = best.max(p.mean_pct);
        let x = p.budget as f64;
        if best >= threshold {
            return Some(match prev {
                Some((px, py)) if best > py => px + (threshold - py) / (best - py) * (x - px),
                _ => x,
            });
        }
        prev = Some((x, best));
    }
    None
}

pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
