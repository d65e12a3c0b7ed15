//! Seeded end-to-end experiments: the reference population, the structure
//! ablation, adaptivity probes and the query-complexity comparison.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    optimal_policy_value, population_average_policy, sparse_reward_learner, LearnerConfig,
    LearningPoint,
};
use crate::belief::{fit_gmm, BeliefModel, FittedModel, GmmConfig};
use crate::engine::{run_batch, SessionRecord};
use crate::error::{Error, Result};
use crate::metrics::{judge_profile, mean_std, measure_adaptivity, pct_of_oracle, AdaptivityReport};
use crate::population::{generate, split_by_task, GeneratorSpec, PopulationDataset};
use crate::seed::SeedDeriver;
use crate::types::{PreferenceProfile, SessionConfig, StrategyName, TaskSpec};

/// Synthetic population used by the ablation: six user types over twenty
/// criteria, a handful of consensus criteria plus type-specific ones.
pub fn reference_generator(seed: u64) -> GeneratorSpec {
    GeneratorSpec {
        k: 6,
        criteria_per_task: 20,
        vocabulary_size: None,
        num_tasks: 50,
        users_per_task: 50,
        care_sparsity: 5.7,
        shared_criteria: 5,
        type_value_means: None,
        care_probs: None,
        answer_noise: 0.1,
        seed,
    }
}

/// Dataset with its task split, train and test views.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: PopulationDataset,
    pub train: PopulationDataset,
    pub test: PopulationDataset,
}

impl Prepared {
    pub fn new(dataset: &PopulationDataset, test_fraction: f64, seed: u64) -> Result<Self> {
        let dataset = split_by_task(dataset, test_fraction, seed)?;
        Ok(Self {
            train: dataset.train()?,
            test: dataset.test()?,
            dataset,
        })
    }

    /// Keeps the dataset's own split when it has one.
    pub fn from_dataset(dataset: &PopulationDataset, test_fraction: f64, seed: u64) -> Result<Self> {
        match dataset.split {
            Some(_) => Ok(Self {
                train: dataset.train()?,
                test: dataset.test()?,
                dataset: dataset.clone(),
            }),
            None => Self::new(dataset, test_fraction, seed),
        }
    }

    /// Test tasks and their users' profiles, aligned by index.
    pub fn test_sessions(&self) -> (Vec<TaskSpec>, Vec<Vec<PreferenceProfile>>) {
        let tasks = self.test.tasks.clone();
        let users = tasks
            .iter()
            .map(|t| self.test.users_of(t.task_id()).map(|(_, u)| u.profile.clone()).collect())
            .collect();
        (tasks, users)
    }
}

/// One line of the ablation: a world model and a selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Fitted K-type mixture with the given strategy.
    Full(StrategyName),
    /// Single-type mixture (independent per-criterion marginals).
    NoCorrelation(StrategyName),
    /// Population-modal profile, no questions.
    PopulationAverage,
}

impl Arm {
    pub fn label(&self) -> String {
        match self {
            Arm::Full(s) => format!("full-{s}"),
            Arm::NoCorrelation(s) => format!("nocorr-{s}"),
            Arm::PopulationAverage => "population-average".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub generator: GeneratorSpec,
    pub test_fraction: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub trials: usize,
    pub budgets: Vec<usize>,
    pub arms: Vec<Arm>,
    pub seed: u64,
    pub parallelism: usize,
}

impl AblationConfig {
    pub fn reference(seed: u64) -> Self {
        Self {
            generator: reference_generator(seed),
            test_fraction: 0.2,
            k: 6,
            trials: 20,
            budgets: (0..=8).collect(),
            arms: vec![
                Arm::Full(StrategyName::Infogain),
                Arm::Full(StrategyName::Random),
                Arm::NoCorrelation(StrategyName::Infogain),
                Arm::PopulationAverage,
            ],
            seed,
            parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub budget: usize,
    pub mean_pct: f64,
    pub std_pct: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub train_users: usize,
    pub test_users: usize,
}

impl AblationResult {
    pub fn get(&self, arm: &Arm, budget: usize) -> Option<&AblationRow> {
        let label = arm.label();
        self.rows.iter().find(|r| r.arm == label && r.budget == budget)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// %-of-Oracle of trial `trial`: the test sessions resampled with
/// replacement. The resample depends only on `(seed, trial)`, so arms are
/// compared on the same users within a trial.
pub fn bootstrap_pct(scores: &[(f64, f64)], seed: u64, trial: usize) -> f64 {
    let mut rng = SeedDeriver::new("bootstrap").u64(seed).u64(trial as u64).rng();
    let n = scores.len();
    let (mut m, mut o) = (0.0, 0.0);
    for _ in 0..n {
        let (s, so) = scores[rng.gen_range(0..n)];
        m += s;
        o += so;
    }
    pct_of_oracle(m / n as f64, 0.0, o / n as f64).unwrap_or(f64::NAN)
}

/// Per-session (rubric score, oracle score) pairs; fails on any failed session.
pub fn session_scores(records: &[SessionRecord]) -> Result<Vec<(f64, f64)>> {
    records
        .iter()
        .map(|r| {
            if let Some(e) = &r.error {
                return Err(Error::invalid(format!("session {}#{} failed: {e}", r.task_id, r.user_index)));
            }
            let truth = r.ground_truth.as_ref().ok_or_else(|| Error::invalid("record lacks ground truth"))?;
            Ok((judge_profile(&r.predicted, truth).score, judge_profile(truth, truth).score))
        })
        .collect()
}

/// Outcome of running one configuration over repeated trials.
#[derive(Debug, Clone)]
pub struct TrialRun {
    /// %-of-Oracle per trial.
    pub pcts: Vec<f64>,
    /// Session records of the first trial.
    pub records: Vec<SessionRecord>,
}

/// Runs `config` over the given sessions `trials` times. Each trial draws its
/// own master seed (deterministic strategies run once and are reused) and its
/// own bootstrap resample of sessions.
pub fn run_trials<M: BeliefModel + Sync>(
    tasks: &[TaskSpec],
    users: &[Vec<PreferenceProfile>],
    model: &M,
    config: &SessionConfig,
    trials: usize,
    parallelism: usize,
) -> Result<TrialRun> {
    let mut pcts = Vec::with_capacity(trials);
    let mut first: Option<Vec<SessionRecord>> = None;
    let mut cached: Option<Vec<(f64, f64)>> = None;
    for trial in 0..trials {
        let scores = match (&cached, config.strategy.is_deterministic()) {
            (Some(s), true) => s.clone(),
            _ => {
                let mut cfg = config.clone();
                cfg.seed = SeedDeriver::new("trial").u64(config.seed).u64(trial as u64).finish();
                let recs = run_batch(tasks, model, users, &cfg, parallelism)?;
                let s = session_scores(&recs)?;
                first.get_or_insert(recs);
                cached = Some(s.clone());
                s
            }
        };
        pcts.push(bootstrap_pct(&scores, config.seed, trial));
    }
    Ok(TrialRun {
        pcts,
        records: first.unwrap_or_default(),
    })
}

/// Generates the configured population and runs the ablation on it.
pub fn run_ablation(config: &AblationConfig) -> Result<AblationResult> {
    run_ablation_on(&generate(&config.generator)?, config)
}

/// Runs every (arm, budget) over the test sessions of `data`, splitting it by
/// task when it carries no split of its own.
pub fn run_ablation_on(data: &PopulationDataset, config: &AblationConfig) -> Result<AblationResult> {
    let prep = Prepared::from_dataset(data, config.test_fraction, config.seed)?;
    let full = FittedModel::Gmm(fit_gmm(&prep.train, &GmmConfig::new(config.k, config.seed))?);
    let nocorr = FittedModel::Gmm(fit_gmm(&prep.train, &GmmConfig::new(1, config.seed))?);
    let average = population_average_policy(&prep.train);
    let (tasks, users) = prep.test_sessions();

    let mut rows = Vec::new();
    for arm in &config.arms {
        let label = arm.label();
        for &budget in &config.budgets {
            let pcts = match arm {
                Arm::PopulationAverage => {
                    let scores: Vec<(f64, f64)> = tasks
                        .iter()
                        .zip(&users)
                        .flat_map(|(t, us)| {
                            let pred = average.predict(t);
                            us.iter()
                                .map(move |u| (judge_profile(&pred, u).score, judge_profile(u, u).score))
                                .collect::<Vec<_>>()
                        })
                        .collect();
                    (0..config.trials).map(|i| bootstrap_pct(&scores, config.seed, i)).collect()
                }
                Arm::Full(s) | Arm::NoCorrelation(s) => {
                    let model = if matches!(arm, Arm::Full(_)) { &full } else { &nocorr };
                    let cfg = SessionConfig::new(budget, *s, config.seed);
                    run_trials(&tasks, &users, model, &cfg, config.trials, config.parallelism)?.pcts
                }
            };
            let (mean_pct, std_pct) = mean_std(&pcts);
            rows.push(AblationRow {
                arm: label.clone(),
                budget,
                mean_pct,
                std_pct,
                trials: pcts.len(),
            });
        }
    }
    Ok(AblationResult {
        rows,
        train_users: prep.train.users.len(),
        test_users: prep.test.users.len(),
    })
}

/// Two user types caring about disjoint criteria, used for adaptivity probes.
pub fn separating_generator(seed: u64) -> GeneratorSpec {
    let c = 8;
    let mut care = vec![vec![0.05; c]; 2];
    let mut means = vec![vec![3.0; c]; 2];
    for i in 0..4 {
        care[0][i] = 0.9;
        means[0][i] = [5.0, 4.0, 2.0, 1.0][i];
        care[1][i + 4] = 0.9;
        means[1][i + 4] = [1.0, 2.0, 4.0, 5.0][i];
    }
    GeneratorSpec {
        k: 2,
        criteria_per_task: c,
        vocabulary_size: None,
        num_tasks: 10,
        users_per_task: 50,
        care_sparsity: 3.6,
        shared_criteria: 0,
        type_value_means: Some(means),
        care_probs: Some(care),
        answer_noise: 0.1,
        seed,
    }
}

/// Adaptivity of each strategy pooled over the test tasks. `Static` asks in
/// descending training care rate.
pub fn adaptivity_table(
    prep: &Prepared,
    model: &FittedModel,
    strategies: &[StrategyName],
    budget: usize,
    seed: u64,
    independent_branch_seeds: bool,
) -> Result<Vec<(StrategyName, AdaptivityReport)>> {
    let (tasks, users) = prep.test_sessions();
    let order = population_average_policy(&prep.train).care_rate_order();
    strategies
        .iter()
        .map(|&strategy| {
            let mut cfg = SessionConfig::new(budget, strategy, seed);
            if strategy == StrategyName::Static {
                cfg.static_order = order.clone();
            }
            let reports = tasks
                .par_iter()
                .zip(&users)
                .map(|(t, u)| measure_adaptivity(t, model, u, &cfg, independent_branch_seeds))
                .collect::<Result<Vec<_>>>()?;
            Ok((strategy, AdaptivityReport::combine(&reports)))
        })
        .collect()
}

/// Adaptivity of the static order and of a fitted two-type mixture with
/// information-gain selection on the separating population.
pub fn separating_adaptivity(seed: u64, budget: usize) -> Result<Vec<(StrategyName, AdaptivityReport)>> {
    let prep = Prepared::new(&generate(&separating_generator(seed))?, 0.2, seed)?;
    let model = FittedModel::Gmm(fit_gmm(&prep.train, &GmmConfig::new(2, seed))?);
    adaptivity_table(&prep, &model, &[StrategyName::Static, StrategyName::Infogain], budget, seed, false)
}

/// Demo instance for the query-complexity comparison: two noise-free types
/// over eight criteria that share one criterion at opposite levels.
pub fn complexity_generator(seed: u64) -> GeneratorSpec {
    let c = 8;
    let mut care = vec![vec![0.0; c]; 2];
    let mut means = vec![vec![3.0; c]; 2];
    for (k, prefs) in [[(2, 5.0), (5, 4.0), (7, 2.0)], [(2, 1.0), (1, 5.0), (6, 3.0)]].iter().enumerate() {
        for &(i, level) in prefs {
            care[k][i] = 1.0;
            means[k][i] = level;
        }
    }
    GeneratorSpec {
        k: 2,
        criteria_per_task: c,
        vocabulary_size: None,
        num_tasks: 2,
        users_per_task: 100,
        care_sparsity: 3.0,
        shared_criteria: 0,
        type_value_means: Some(means),
        care_probs: Some(care),
        answer_noise: 0.0,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityConfig {
    pub generator: GeneratorSpec,
    pub budgets: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub max_episodes: usize,
    pub eval_every: usize,
    /// The learner counts as matching once its expected alignment is within
    /// this many points of the target.
    pub match_tolerance_pct: f64,
    /// Independent learner runs per learning rate; the median is reported.
    pub learner_seeds: usize,
    pub seed: u64,
}

impl ComplexityConfig {
    pub fn reference(seed: u64) -> Self {
        Self {
            generator: complexity_generator(seed),
            budgets: vec![1, 2, 3],
            learning_rates: vec![0.1, 0.3, 1.0],
            max_episodes: 200_000,
            eval_every: 50,
            match_tolerance_pct: 1.0,
            learner_seeds: 5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityRow {
    pub budget: usize,
    /// Belief-model %-of-Oracle at this budget.
    pub belief_pct: f64,
    /// Best %-of-Oracle any copy-through policy can reach at this budget.
    pub learner_optimum_pct: f64,
    /// Level the learner must reach: the smaller of the two above.
    pub target_pct: f64,
    /// Answered queries spent collecting the training profiles.
    pub belief_offline_queries: usize,
    /// Questions asked to evaluation users.
    pub belief_online_queries: usize,
    pub belief_total_queries: usize,
    /// Median learner queries to reach the target, at the best learning rate.
    pub learner_queries: Option<usize>,
    pub learner_learning_rate: Option<f64>,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityResult {
    pub rows: Vec<ComplexityRow>,
    /// Learning curve of the median run at the winning learning rate, per budget.
    pub curves: Vec<(usize, Vec<LearningPoint>)>,
}

impl ComplexityResult {
    pub fn write_csv(&self, rows_path: &Path, curves_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(rows_path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(rows_path, e))?;
        let mut w = csv::Writer::from_path(curves_path)?;
        w.write_record(["budget", "episode", "cumulative_queries", "mean_alignment", "greedy_alignment"])?;
        for (b, curve) in &self.curves {
            for p in curve {
                w.write_record([
                    b.to_string(),
                    p.episode.to_string(),
                    p.cumulative_queries.to_string(),
                    format!("{:.6}", p.mean_alignment),
                    format!("{:.6}", p.greedy_alignment),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(curves_path, e))
    }
}

/// Compares user-query cost: the belief model pays one answer per cared
/// criterion of each training profile plus T questions per evaluation user;
/// the learner pays T per training episode until its stochastic policy reaches
/// the belief model's alignment (or the best a copy-through policy can do).
/// The first generated task supplies training users, the second evaluation users.
pub fn run_complexity(config: &ComplexityConfig) -> Result<ComplexityResult> {
    let data = generate(&config.generator)?;
    if data.tasks.len() < 2 {
        return Err(Error::invalid("complexity demo needs a training and an evaluation task"));
    }
    let train = data.restrict_to_tasks(&[data.tasks[0].task_id().to_string()]);
    let eval_task = data.tasks[1].clone();
    let train_task = data.tasks[0].clone();
    let train_users: Vec<PreferenceProfile> = train.users.iter().map(|u| u.profile.clone()).collect();
    let eval_users: Vec<PreferenceProfile> =
        data.users_of(eval_task.task_id()).map(|(_, u)| u.profile.clone()).collect();
    let model = FittedModel::Gmm(fit_gmm(&train, &GmmConfig::new(config.generator.k, config.seed))?);
    let offline = train.answered_queries();
    let oracle: f64 = eval_users.iter().map(|u| judge_profile(u, u).score).sum::<f64>() / eval_users.len() as f64;

    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for &budget in &config.budgets {
        let cfg = SessionConfig::new(budget, StrategyName::Infogain, config.seed);
        let recs = run_batch(std::slice::from_ref(&eval_task), &model, &[eval_users.clone()], &cfg, 1)?;
        let scores = session_scores(&recs)?;
        let belief_pct = pct_of_oracle(
            scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64,
            0.0,
            oracle,
        )?;
        let learner_optimum_pct = pct_of_oracle(optimal_policy_value(&eval_task, &eval_users, budget), 0.0, oracle)?;
        let target_pct = belief_pct.min(learner_optimum_pct);

        let mut best: Option<(usize, f64, Vec<LearningPoint>)> = None;
        for &lr in &config.learning_rates {
            let mut runs = (0..config.learner_seeds.max(1) as u64)
                .into_par_iter()
                .map(|rep| {
                    let run = sparse_reward_learner(
                        &train_task,
                        &train_users,
                        &eval_users,
                        &LearnerConfig {
                            budget,
                            episodes: config.max_episodes,
                            learning_rate: lr,
                            eval_every: config.eval_every,
                            target_pct: Some(target_pct - config.match_tolerance_pct),
                            seed: SeedDeriver::new("complexity-learner").u64(config.seed).u64(rep).finish(),
                        },
                    )?;
                    Ok((run.queries_to_target(budget).unwrap_or(usize::MAX), run.curve))
                })
                .collect::<Result<Vec<_>>>()?;
            runs.sort_by_key(|r| r.0);
            let (q, curve) = runs.swap_remove(runs.len() / 2);
            if q != usize::MAX && best.as_ref().map_or(true, |(bq, _, _)| q < *bq) {
                best = Some((q, lr, curve));
            }
        }
        let online = budget * eval_users.len();
        let total = offline + online;
        rows.push(ComplexityRow {
            budget,
            belief_pct,
            learner_optimum_pct,
            target_pct,
            belief_offline_queries: offline,
            belief_online_queries: online,
            belief_total_queries: total,
            learner_queries: best.as_ref().map(|b| b.0),
            learner_learning_rate: best.as_ref().map(|b| b.1),
            ratio: best.as_ref().map(|b| b.0 as f64 / total as f64),
        });
        if let Some((_, _, curve)) = best {
            curves.push((budget, curve));
        }
    }
    Ok(ComplexityResult { rows, curves })
}
