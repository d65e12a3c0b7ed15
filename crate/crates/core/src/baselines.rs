//! Reference policies without a learned world model: the population-modal
//! profile, fixed question orders, and a tabular policy-gradient learner
//! trained only on the terminal alignment score.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{judge_profile, pct_of_oracle};
use crate::population::PopulationDataset;
use crate::seed::SeedDeriver;
use crate::types::{
    CriterionId, PreferenceProfile, PreferenceValue, SessionConfig, StrategyName, TaskSpec,
    NUM_OUTCOMES,
};

/// Per-criterion care rate and modal cared level over a training population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationAverage {
    pub criteria: BTreeMap<CriterionId, (f64, u8)>,
}

pub fn population_average_policy(train: &PopulationDataset) -> PopulationAverage {
    let mut counts: BTreeMap<CriterionId, (usize, [usize; 5])> = BTreeMap::new();
    for u in &train.users {
        let Some(task) = train.task(&u.task_id) else { continue };
        for c in task.criteria() {
            let e = counts.entry(c.clone()).or_default();
            e.0 += 1;
            if let PreferenceValue::Level(l) = u.profile.answer_for(c) {
                e.1[(l - 1) as usize] += 1;
            }
        }
    }
    let criteria = counts
        .into_iter()
        .map(|(c, (n, levels))| {
            let cared: usize = levels.iter().sum();
            let mut mode = 0;
            for i in 1..5 {
                if levels[i] > levels[mode] {
                    mode = i;
                }
            }
            (c, (cared as f64 / n as f64, mode as u8 + 1))
        })
        .collect();
    PopulationAverage { criteria }
}

impl PopulationAverage {
    /// Modal profile: criteria cared about by at least half the population, at
    /// their most common level. Asks nothing.
    pub fn predict(&self, task: &TaskSpec) -> PreferenceProfile {
        let mut out = PreferenceProfile::new();
        for c in task.criteria() {
            if let Some(&(rate, level)) = self.criteria.get(c) {
                if rate >= 0.5 {
                    out.insert(c.clone(), PreferenceValue::Level(level), 1.0);
                }
            }
        }
        out
    }

    /// Criteria by descending care rate, ties by id.
    pub fn care_rate_order(&self) -> Vec<CriterionId> {
        let mut v: Vec<(&CriterionId, f64)> = self.criteria.iter().map(|(c, (r, _))| (c, *r)).collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().map(|(c, _)| c.clone()).collect()
    }
}

/// Session configuration asking `order` front to back regardless of answers.
pub fn static_sequence_policy(order: Vec<CriterionId>, budget: usize, seed: u64) -> Result<SessionConfig> {
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = order.iter().find(|c| !seen.insert(*c)) {
        return Err(Error::invalid(format!("criterion {dup} repeats in the static order")));
    }
    if order.len() < budget {
        return Err(Error::invalid(format!(
            "static order has {} criteria but the budget is {budget}",
            order.len()
        )));
    }
    Ok(SessionConfig::new(budget, StrategyName::Static, seed).with_static_order(order))
}

/// Belief-free prediction: the answers heard, nothing else.
pub fn copy_prediction(task: &TaskSpec, asked: &[(usize, PreferenceValue)]) -> PreferenceProfile {
    let mut p = PreferenceProfile::new();
    for &(a, v) in asked {
        if v.is_level() {
            p.insert(task.criteria()[a].clone(), v, 1.0);
        }
    }
    p
}

/// Largest instance the tabular learner accepts.
pub const MAX_LEARNER_CRITERIA: usize = 10;
pub const MAX_LEARNER_BUDGET: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub budget: usize,
    pub episodes: usize,
    pub learning_rate: f64,
    /// Evaluate (and log a curve point) every this many episodes.
    pub eval_every: usize,
    /// Stop once the stochastic policy's expected %-of-Oracle on the eval
    /// users reaches this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_pct: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningPoint {
    pub episode: usize,
    pub cumulative_queries: usize,
    /// Expected %-of-Oracle of the stochastic policy on the eval users.
    pub mean_alignment: f64,
    /// %-of-Oracle of the greedy policy on the eval users.
    pub greedy_alignment: f64,
}

/// Softmax policy with one logit vector per history.
#[derive(Debug, Clone, Default)]
pub struct TabularPolicy {
    logits: HashMap<Vec<u16>, Vec<f64>>,
    num_actions: usize,
}

fn state_key(asked: &[(usize, PreferenceValue)]) -> Vec<u16> {
    asked
        .iter()
        .map(|&(a, v)| (a * NUM_OUTCOMES + v.outcome_index()) as u16)
        .collect()
}

impl TabularPolicy {
    fn new(num_actions: usize) -> Self {
        Self {
            logits: HashMap::new(),
            num_actions,
        }
    }

    fn remaining(&self, asked: &[(usize, PreferenceValue)]) -> Vec<usize> {
        (0..self.num_actions)
            .filter(|a| !asked.iter().any(|(b, _)| b == a))
            .collect()
    }

    /// Action probabilities over the remaining actions.
    pub fn probabilities(&self, asked: &[(usize, PreferenceValue)]) -> Vec<(usize, f64)> {
        let rem = self.remaining(asked);
        let logits = self.logits.get(&state_key(asked));
        let l = |a: usize| logits.map_or(0.0, |v| v[a]);
        let max = rem.iter().map(|&a| l(a)).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = rem.iter().map(|&a| (l(a) - max).exp()).collect();
        let z: f64 = w.iter().sum();
        rem.into_iter().zip(w).map(|(a, x)| (a, x / z)).collect()
    }

    /// Highest-logit action, lowest index on ties.
    pub fn greedy(&self, asked: &[(usize, PreferenceValue)]) -> usize {
        let logits = self.logits.get(&state_key(asked));
        let mut best: Option<(usize, f64)> = None;
        for a in self.remaining(asked) {
            let v = logits.map_or(0.0, |l| l[a]);
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((a, v));
            }
        }
        best.expect("an action remains").0
    }

    pub fn states(&self) -> usize {
        self.logits.len()
    }
}

fn answers(task: &TaskSpec, user: &PreferenceProfile) -> Vec<PreferenceValue> {
    task.criteria().iter().map(|c| user.answer_for(c)).collect()
}

fn score_of(task: &TaskSpec, asked: &[(usize, PreferenceValue)], user: &PreferenceProfile) -> f64 {
    judge_profile(&copy_prediction(task, asked), user).score
}

fn oracle_mean(users: &[PreferenceProfile]) -> f64 {
    users.iter().map(|u| judge_profile(u, u).score).sum::<f64>() / users.len().max(1) as f64
}

fn to_pct(mean_score: f64, users: &[PreferenceProfile]) -> f64 {
    pct_of_oracle(mean_score, 0.0, oracle_mean(users)).unwrap_or(f64::NAN)
}

/// Expected rubric score of the stochastic policy for one user, by exact
/// enumeration of its question sequences.
fn expected_score(
    policy: &TabularPolicy,
    task: &TaskSpec,
    user: &PreferenceProfile,
    ans: &[PreferenceValue],
    asked: &mut Vec<(usize, PreferenceValue)>,
    left: usize,
) -> f64 {
    if left == 0 {
        return score_of(task, asked, user);
    }
    let mut total = 0.0;
    for (a, p) in policy.probabilities(asked) {
        if p == 0.0 {
            continue;
        }
        asked.push((a, ans[a]));
        total += p * expected_score(policy, task, user, ans, asked, left - 1);
        asked.pop();
    }
    total
}

fn greedy_score(policy: &TabularPolicy, task: &TaskSpec, user: &PreferenceProfile, budget: usize) -> f64 {
    let ans = answers(task, user);
    let mut asked = Vec::new();
    for _ in 0..budget {
        let a = policy.greedy(&asked);
        asked.push((a, ans[a]));
    }
    score_of(task, &asked, user)
}

/// Expected and greedy %-of-Oracle of `policy` on `users`.
pub fn evaluate_policy(
    policy: &TabularPolicy,
    task: &TaskSpec,
    users: &[PreferenceProfile],
    budget: usize,
) -> (f64, f64) {
    let n = users.len().max(1) as f64;
    let mut expected = 0.0;
    let mut greedy = 0.0;
    for u in users {
        let ans = answers(task, u);
        expected += expected_score(policy, task, u, &ans, &mut Vec::new(), budget);
        greedy += greedy_score(policy, task, u, budget);
    }
    (to_pct(expected / n, users), to_pct(greedy / n, users))
}

#[derive(Debug, Clone)]
pub struct LearnerRun {
    pub policy: TabularPolicy,
    pub curve: Vec<LearningPoint>,
    pub episodes_run: usize,
    /// Episodes after which the policy first met the target.
    pub reached_after: Option<usize>,
}

impl LearnerRun {
    /// User queries spent until the target was met (Q = episodes × T).
    pub fn queries_to_target(&self, budget: usize) -> Option<usize> {
        self.reached_after.map(|e| e * budget)
    }
}

/// Trains a tabular softmax policy with REINFORCE. Each episode samples a
/// training user, asks `budget` questions, and receives only the final rubric
/// score of the copy-through prediction (scaled to [0, 1]); a running mean of
/// past rewards is the baseline.
pub fn sparse_reward_learner(
    task: &TaskSpec,
    train_users: &[PreferenceProfile],
    eval_users: &[PreferenceProfile],
    config: &LearnerConfig,
) -> Result<LearnerRun> {
    let c = task.criteria().len();
    if c > MAX_LEARNER_CRITERIA || config.budget > MAX_LEARNER_BUDGET {
        return Err(Error::invalid(format!(
            "instance too large for a tabular policy (C = {c}, T = {}; limits {MAX_LEARNER_CRITERIA} and {MAX_LEARNER_BUDGET})",
            config.budget
        )));
    }
    if config.budget == 0 || config.budget > c {
        return Err(Error::invalid("budget must lie in 1..=C"));
    }
    if train_users.is_empty() || eval_users.is_empty() {
        return Err(Error::invalid("learner needs training and evaluation users"));
    }
    let eval_every = config.eval_every.max(1);
    let train_answers: Vec<Vec<PreferenceValue>> = train_users.iter().map(|u| answers(task, u)).collect();
    let mut rng = SeedDeriver::new("learner").u64(config.seed).rng();
    let mut policy = TabularPolicy::new(c);
    let mut curve = Vec::new();
    let mut baseline = 0.0;
    let mut reached_after = None;

    let log = |policy: &TabularPolicy, episode: usize, curve: &mut Vec<LearningPoint>| {
        let (mean_alignment, greedy_alignment) = evaluate_policy(policy, task, eval_users, config.budget);
        curve.push(LearningPoint {
            episode,
            cumulative_queries: episode * config.budget,
            mean_alignment,
            greedy_alignment,
        });
        mean_alignment
    };
    let met = |g: f64| config.target_pct.is_some_and(|t| g >= t - 1e-9);

    if met(log(&policy, 0, &mut curve)) {
        reached_after = Some(0);
    }
    let mut episode = 0;
    while reached_after.is_none() && episode < config.episodes {
        let u = rng.gen_range(0..train_users.len());
        let ans = &train_answers[u];
        let mut asked = Vec::with_capacity(config.budget);
        let mut steps = Vec::with_capacity(config.budget);
        for _ in 0..config.budget {
            let probs = policy.probabilities(&asked);
            let mut x = rng.gen::<f64>();
            let mut a = probs.last().expect("an action remains").0;
            for &(b, p) in &probs {
                x -= p;
                if x < 0.0 {
                    a = b;
                    break;
                }
            }
            steps.push((state_key(&asked), a, probs));
            asked.push((a, ans[a]));
        }
        let reward = score_of(task, &asked, &train_users[u]) / 5.0;
        let advantage = reward - baseline;
        if config.learning_rate != 0.0 && advantage != 0.0 {
            for (key, a, probs) in steps {
                let logits = policy.logits.entry(key).or_insert_with(|| vec![0.0; c]);
                for (b, p) in probs {
                    let grad = if b == a { 1.0 - p } else { -p };
                    logits[b] += config.learning_rate * advantage * grad;
                }
            }
        }
        episode += 1;
        baseline += (reward - baseline) / episode as f64;
        if episode % eval_every == 0 || episode == config.episodes {
            if met(log(&policy, episode, &mut curve)) {
                reached_after = Some(episode);
            }
        }
    }
    Ok(LearnerRun {
        policy,
        curve,
        episodes_run: episode,
        reached_after,
    })
}

/// Best achievable mean rubric score of any adaptive `budget`-question policy
/// with copy-through prediction, by exhaustive expectimax over `users`.
pub fn optimal_policy_value(task: &TaskSpec, users: &[PreferenceProfile], budget: usize) -> f64 {
    fn go(
        task: &TaskSpec,
        users: &[PreferenceProfile],
        ans: &[Vec<PreferenceValue>],
        group: &[usize],
        asked: &mut Vec<(usize, PreferenceValue)>,
        left: usize,
    ) -> f64 {
        if left == 0 || asked.len() == task.criteria().len() {
            return group.iter().map(|&i| score_of(task, asked, &users[i])).sum::<f64>();
        }
        let mut best = f64::NEG_INFINITY;
        for a in 0..task.criteria().len() {
            if asked.iter().any(|(b, _)| *b == a) {
                continue;
            }
            let mut split: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &i in group {
                split.entry(ans[i][a].outcome_index()).or_default().push(i);
            }
            let mut total = 0.0;
            for (o, sub) in split {
                asked.push((a, PreferenceValue::from_outcome_index(o)));
                total += go(task, users, ans, &sub, asked, left - 1);
                asked.pop();
            }
            best = best.max(total);
        }
        best
    }
    if users.is_empty() {
        return 0.0;
    }
    let ans: Vec<Vec<PreferenceValue>> = users.iter().map(|u| answers(task, u)).collect();
    let group: Vec<usize> = (0..users.len()).collect();
    go(task, users, &ans, &group, &mut Vec::new(), budget) / users.len() as f64
}

/// Learning curve CSV: episode, cumulative_queries, mean_alignment, greedy_alignment.
pub fn write_learning_curve(path: &Path, curve: &[LearningPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in curve {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(n: u8) -> PreferenceValue {
        PreferenceValue::Level(n)
    }

    fn two_criteria() -> (TaskSpec, Vec<PreferenceProfile>) {
        let task = TaskSpec::new("t", "", vec!["a".into(), "b".into()]).unwrap();
        let users = vec![
            PreferenceProfile::new().with("a", lv(4)),
            PreferenceProfile::new().with("a", lv(2)),
        ];
        (task, users)
    }

    #[test]
    fn learner_finds_the_informative_question() {
        let (task, users) = two_criteria();
        let cfg = LearnerConfig {
            budget: 1,
            episodes: 2000,
            learning_rate: 0.5,
            eval_every: 100,
            target_pct: None,
            seed: 1,
        };
        let run = sparse_reward_learner(&task, &users, &users, &cfg).unwrap();
        assert_eq!(run.policy.greedy(&[]), 0);
        let best = optimal_policy_value(&task, &users, 1);
        assert_eq!(best, 5.0);
        assert_eq!(run.curve.last().unwrap().greedy_alignment, 100.0);
    }

    #[test]
    fn zero_learning_rate_stays_uniform() {
        let (task, users) = two_criteria();
        let cfg = LearnerConfig {
            budget: 1,
            episodes: 300,
            learning_rate: 0.0,
            eval_every: 50,
            target_pct: None,
            seed: 1,
        };
        let run = sparse_reward_learner(&task, &users, &users, &cfg).unwrap();
        assert_eq!(run.policy.states(), 0);
        assert!(run.curve.iter().all(|p| p.mean_alignment == 50.0));
    }

    #[test]
    fn oversized_instance_is_refused() {
        let ids: Vec<CriterionId> = (0..11).map(|i| CriterionId::new(format!("c{i:02}"))).collect();
        let task = TaskSpec::new("t", "", ids).unwrap();
        let cfg = LearnerConfig { budget: 2, episodes: 1, learning_rate: 0.1, eval_every: 1, target_pct: None, seed: 0 };
        let users = vec![PreferenceProfile::new()];
        assert!(sparse_reward_learner(&task, &users, &users, &cfg).is_err());
    }

    #[test]
    fn population_average_modal_profile() {
        let (task, _) = two_criteria();
        let ds = PopulationDataset {
            criteria: crate::types::CriterionRegistry::new(vec![
                crate::types::Criterion::new("a", ""),
                crate::types::Criterion::new("b", ""),
            ])
            .unwrap(),
            tasks: vec![task.clone()],
            users: [lv(4), lv(4), lv(2)]
                .into_iter()
                .map(|v| crate::population::UserRecord {
                    task_id: "t".into(),
                    profile: PreferenceProfile::new().with("a", v),
                    latent_type: None,
                })
                .collect(),
            split: None,
        };
        let avg = population_average_policy(&ds);
        assert_eq!(avg.predict(&task), PreferenceProfile::new().with("a", lv(4)));
        assert_eq!(avg.care_rate_order(), vec!["a".into(), "b".into()]);
        assert!(population_average_policy(&PopulationDataset::default()).predict(&task).is_empty());
    }

    #[test]
    fn static_order_validation() {
        assert!(static_sequence_policy(vec!["a".into()], 2, 0).is_err());
        assert!(static_sequence_policy(vec!["a".into(), "a".into()], 1, 0).is_err());
        let cfg = static_sequence_policy(vec!["b".into(), "a".into()], 1, 0).unwrap();
        assert_eq!(cfg.static_order[0], "b".into());
    }
}
