//! Mixture of user types with categorical answer distributions per criterion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{entropy, BeliefModel, Predictive};
use crate::error::{Error, Result};
use crate::population::PopulationDataset;
use crate::seed::SeedDeriver;
use crate::types::{CriterionId, History, Observation, PreferenceValue, NUM_OUTCOMES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub alpha: f64,
    pub restarts: usize,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl GmmConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            alpha: 1.0,
            restarts: 5,
            tolerance: 1e-6,
            max_iterations: 500,
            seed,
        }
    }
}

/// Fitted mixture: global type proportions and per-type emission tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    vocabulary: Vec<CriterionId>,
    prior: Vec<f64>,
    /// `emissions[k][c]` is the answer distribution of type `k` on criterion `c`.
    emissions: Vec<Vec<[f64; NUM_OUTCOMES]>>,
    #[serde(default)]
    pub log_likelihood: f64,
}

/// Session belief: posterior over types plus the answers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmBelief {
    pub posterior: Vec<f64>,
    pub history: History,
}

impl GmmModel {
    /// Builds a model from explicit tables. The vocabulary is sorted by id
    /// together with the emission columns.
    pub fn new(
        vocabulary: Vec<CriterionId>,
        prior: Vec<f64>,
        emissions: Vec<Vec<[f64; NUM_OUTCOMES]>>,
    ) -> Result<Self> {
        let k = prior.len();
        if k == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if emissions.len() != k || emissions.iter().any(|r| r.len() != vocabulary.len()) {
            return Err(Error::invalid("emission table shape does not match K x vocabulary"));
        }
        let valid_dist = |p: &[f64]| {
            p.iter().all(|x| x.is_finite() && *x >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9
        };
        if !valid_dist(&prior) {
            return Err(Error::invalid("prior must be a probability vector"));
        }
        if emissions.iter().flatten().any(|row| !valid_dist(row)) {
            return Err(Error::invalid("emission rows must be probability vectors"));
        }
        let mut order: Vec<usize> = (0..vocabulary.len()).collect();
        order.sort_by(|&a, &b| vocabulary[a].cmp(&vocabulary[b]));
        if order.windows(2).any(|w| vocabulary[w[0]] == vocabulary[w[1]]) {
            return Err(Error::invalid("duplicate criterion in vocabulary"));
        }
        Ok(Self {
            vocabulary: order.iter().map(|&i| vocabulary[i].clone()).collect(),
            prior,
            emissions: emissions
                .into_iter()
                .map(|row| order.iter().map(|&i| row[i]).collect())
                .collect(),
            log_likelihood: 0.0,
        })
    }

    pub fn num_types(&self) -> usize {
        self.prior.len()
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn index_of(&self, c: &CriterionId) -> Result<usize> {
        self.vocabulary
            .binary_search(c)
            .map_err(|_| Error::UnknownCriterion(c.to_string()))
    }

    pub fn emission(&self, k: usize, c: &CriterionId) -> Result<&[f64; NUM_OUTCOMES]> {
        Ok(&self.emissions[k][self.index_of(c)?])
    }

    /// Bayes step on a bare type posterior.
    pub fn update_posterior(
        &self,
        posterior: &[f64],
        c: &CriterionId,
        v: PreferenceValue,
    ) -> Result<Vec<f64>> {
        let ci = self.index_of(c)?;
        let o = v.outcome_index();
        let mut out: Vec<f64> = posterior
            .iter()
            .zip(&self.emissions)
            .map(|(p, e)| p * e[ci][o])
            .collect();
        let z: f64 = out.iter().sum();
        if !(z > 0.0) {
            return Err(Error::Numerical(format!(
                "answer {v} on {c} has zero likelihood under every type"
            )));
        }
        out.iter_mut().for_each(|x| *x /= z);
        Ok(out)
    }

    /// Σ_k π_k P(v | c, k).
    pub fn marginal(&self, posterior: &[f64], c: &CriterionId) -> Result<[f64; NUM_OUTCOMES]> {
        let ci = self.index_of(c)?;
        let mut out = [0.0; NUM_OUTCOMES];
        for (p, e) in posterior.iter().zip(&self.emissions) {
            for (o, x) in out.iter_mut().zip(e[ci]) {
                *o += p * x;
            }
        }
        Ok(out)
    }

    /// Mutual information between the answer on `c` and the type.
    pub fn type_information(&self, posterior: &[f64], c: &CriterionId) -> Result<f64> {
        let ci = self.index_of(c)?;
        let prior_h = entropy(posterior);
        let b = self.marginal(posterior, c)?;
        let mut expected = 0.0;
        let mut post = vec![0.0; posterior.len()];
        for (o, &bo) in b.iter().enumerate() {
            if bo <= 0.0 {
                continue;
            }
            for (k, p) in post.iter_mut().enumerate() {
                *p = posterior[k] * self.emissions[k][ci][o] / bo;
            }
            expected += bo * entropy(&post);
        }
        Ok((prior_h - expected).max(0.0))
    }
}

impl BeliefModel for GmmModel {
    type State = GmmBelief;

    fn vocabulary(&self) -> &[CriterionId] {
        &self.vocabulary
    }

    fn init(&self) -> GmmBelief {
        GmmBelief {
            posterior: self.prior.clone(),
            history: History::new(),
        }
    }

    fn observe(&self, state: &GmmBelief, obs: &Observation) -> Result<GmmBelief> {
        let posterior = self.update_posterior(&state.posterior, &obs.criterion, obs.answer)?;
        let history = state.history.extended(obs.criterion.clone(), obs.answer)?;
        Ok(GmmBelief { posterior, history })
    }

    fn history<'a>(&self, state: &'a GmmBelief) -> &'a History {
        &state.history
    }

    fn predictive(&self, state: &GmmBelief, c: &CriterionId) -> Result<Predictive> {
        if let Some(v) = state.history.answer(c) {
            self.index_of(c)?;
            return Ok(Predictive::point(v));
        }
        Ok(Predictive {
            probs: self.marginal(&state.posterior, c)?,
            gaussian: None,
        })
    }

    fn uncertainty(&self, state: &GmmBelief, c: &CriterionId, _exact: bool) -> Result<f64> {
        Ok(self.predictive(state, c)?.entropy())
    }

    fn information_gain(&self, state: &GmmBelief, remaining: &[CriterionId]) -> Result<Vec<f64>> {
        remaining
            .iter()
            .map(|c| self.type_information(&state.posterior, c))
            .collect()
    }
}

/// One training profile as (vocabulary index, outcome index) pairs over its
/// task's criteria; uncared criteria are NoPreference answers.
fn encode_users(ds: &PopulationDataset, vocab: &[CriterionId]) -> Result<Vec<Vec<(usize, usize)>>> {
    ds.users
        .iter()
        .map(|u| {
            let task = ds
                .task(&u.task_id)
                .ok_or_else(|| Error::invalid(format!("unknown task {}", u.task_id)))?;
            task.criteria()
                .iter()
                .map(|c| {
                    let ci = vocab
                        .binary_search(c)
                        .map_err(|_| Error::UnknownCriterion(c.to_string()))?;
                    Ok((ci, u.profile.answer_for(c).outcome_index()))
                })
                .collect()
        })
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

struct EmState {
    prior: Vec<f64>,
    emissions: Vec<Vec<[f64; NUM_OUTCOMES]>>,
}

fn m_step(data: &[Vec<(usize, usize)>], resp: &[Vec<f64>], k: usize, v: usize, alpha: f64) -> EmState {
    let n = data.len() as f64;
    let mut counts = vec![vec![[0.0; NUM_OUTCOMES]; v]; k];
    let mut mass = vec![0.0; k];
    for (x, r) in data.iter().zip(resp) {
        for j in 0..k {
            if r[j] == 0.0 {
                continue;
            }
            mass[j] += r[j];
            for &(c, o) in x {
                counts[j][c][o] += r[j];
            }
        }
    }
    let emissions = counts
        .into_iter()
        .map(|rows| {
            rows.into_iter()
                .map(|row| {
                    let total: f64 = row.iter().sum::<f64>() + alpha * NUM_OUTCOMES as f64;
                    let mut out = [0.0; NUM_OUTCOMES];
                    for (o, x) in out.iter_mut().zip(row) {
                        *o = (x + alpha) / total;
                    }
                    out
                })
                .collect()
        })
        .collect();
    EmState {
        prior: mass.iter().map(|m| m / n).collect(),
        emissions,
    }
}

fn e_step(data: &[Vec<(usize, usize)>], st: &EmState, resp: &mut [Vec<f64>]) -> f64 {
    let k = st.prior.len();
    let log_prior: Vec<f64> = st.prior.iter().map(|p| p.ln()).collect();
    let log_em: Vec<Vec<[f64; NUM_OUTCOMES]>> = st
        .emissions
        .iter()
        .map(|rows| rows.iter().map(|r| r.map(f64::ln)).collect())
        .collect();
    let mut ll = 0.0;
    let mut lj = vec![0.0; k];
    for (x, r) in data.iter().zip(resp.iter_mut()) {
        for j in 0..k {
            lj[j] = log_prior[j] + x.iter().map(|&(c, o)| log_em[j][c][o]).sum::<f64>();
        }
        let z = log_sum_exp(&lj);
        ll += z;
        for j in 0..k {
            r[j] = (lj[j] - z).exp();
        }
    }
    ll
}

/// k-means++ seeding under Hamming distance on shared criteria, then hard
/// assignment to the nearest seed.
fn initial_responsibilities(data: &[Vec<(usize, usize)>], k: usize, v: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let dense: Vec<Vec<Option<usize>>> = data
        .iter()
        .map(|x| {
            let mut d = vec![None; v];
            for &(c, o) in x {
                d[c] = Some(o);
            }
            d
        })
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        dense[a]
            .iter()
            .zip(&dense[b])
            .filter(|(x, y)| matches!((x, y), (Some(p), Some(q)) if p != q))
            .count() as f64
    };
    let n = data.len();
    let mut centers = vec![rng.gen_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| dist(i, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = nearest.iter().map(|d| d * d).sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                u -= d * d;
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centers.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(dist(i, next));
        }
    }
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &c) in centers.iter().enumerate() {
                let d = dist(i, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            let mut r = vec![0.0; k];
            r[best] = 1.0;
            r
        })
        .collect()
}

/// Fits the mixture by EM with several seeded restarts, keeping the best
/// log-likelihood.
pub fn fit_gmm(train: &PopulationDataset, config: &GmmConfig) -> Result<GmmModel> {
    if config.k == 0 {
        return Err(Error::invalid("K must be ≥ 1"));
    }
    if train.users.is_empty() {
        return Err(Error::invalid("training set has no users"));
    }
    if config.k > train.users.len() {
        return Err(Error::invalid(format!(
            "K = {} exceeds the number of training users ({})",
            config.k,
            train.users.len()
        )));
    }
    if !(config.alpha > 0.0) {
        return Err(Error::invalid("smoothing alpha must be > 0"));
    }
    let vocab = train.vocabulary();
    let v = vocab.len();
    let data = encode_users(train, &vocab)?;

    let mut best: Option<(f64, EmState)> = None;
    for restart in 0..config.restarts.max(1) {
        let mut rng = SeedDeriver::new("gmm-restart")
            .u64(config.seed)
            .u64(restart as u64)
            .rng();
        let mut resp = initial_responsibilities(&data, config.k, v, &mut rng);
        let mut st = m_step(&data, &resp, config.k, v, config.alpha);
        let mut ll = e_step(&data, &st, &mut resp);
        for _ in 0..config.max_iterations {
            let next = m_step(&data, &resp, config.k, v, config.alpha);
            let next_ll = e_step(&data, &next, &mut resp);
            let gain = next_ll - ll;
            st = next;
            ll = next_ll;
            if gain < config.tolerance {
                break;
            }
        }
        if best.as_ref().map_or(true, |(b, _)| ll > *b) {
            best = Some((ll, st));
        }
    }
    let (ll, st) = best.expect("at least one restart");
    Ok(GmmModel {
        vocabulary: vocab,
        prior: st.prior,
        emissions: st.emissions,
        log_likelihood: ll,
    })
}
