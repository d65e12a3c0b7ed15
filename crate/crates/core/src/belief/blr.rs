//! Per-criterion Bayesian linear regression on answers to other criteria.
//!
//! Each vocabulary criterion has two conjugate Gaussian heads over the same
//! features: a care head (linear probability that the user cares) and a value
//! head over the centered level `(v - 3) / 2`. Features for target `c` are an
//! intercept followed by, for every other vocabulary criterion, an observed
//! indicator and the centered answer (0 when unobserved or NoPreference).

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{entropy, BeliefModel, Predictive, ValueGaussian};
use crate::error::{Error, Result};
use crate::population::PopulationDataset;
use crate::seed::SeedDeriver;
use crate::types::{
    CriterionId, History, Observation, PreferenceValue, MAX_LEVEL, NO_PREFERENCE_INDEX,
    NUM_OUTCOMES,
};

/// Below this magnitude an expected variance change is treated as rounding.
const IG_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrConfig {
    /// Prior weight standard deviation.
    pub tau: f64,
    /// Observation noise standard deviation.
    pub sigma: f64,
    pub masks_per_profile: usize,
    /// Largest simulated partial history; mask sizes are uniform in 0..=this.
    pub max_mask_size: usize,
    pub seed: u64,
}

impl BlrConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            tau: 1.0,
            sigma: 0.5,
            masks_per_profile: 20,
            max_mask_size: 8,
            seed,
        }
    }
}

/// Gaussian weight posterior with a dense covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPosterior {
    pub mean: Vec<f64>,
    /// Row-major `d x d`.
    pub covariance: Vec<f64>,
}

impl WeightPosterior {
    pub fn prior(dim: usize, tau: f64) -> Self {
        let mut covariance = vec![0.0; dim * dim];
        for i in 0..dim {
            covariance[i * dim + i] = tau * tau;
        }
        Self {
            mean: vec![0.0; dim],
            covariance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean_at(&self, z: &[f64]) -> f64 {
        self.mean.iter().zip(z).map(|(a, b)| a * b).sum()
    }

    /// zᵀ Σ z.
    pub fn quad(&self, z: &[f64]) -> f64 {
        let d = self.dim();
        let mut acc = 0.0;
        for (i, zi) in z.iter().enumerate() {
            if *zi == 0.0 {
                continue;
            }
            let row = &self.covariance[i * d..(i + 1) * d];
            acc += zi * row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.covariance)
    }

    /// Closed-form conjugate posterior from accumulated sufficient statistics.
    fn from_statistics(gram: DMatrix<f64>, rhs: DVector<f64>, tau: f64, sigma: f64) -> Result<Self> {
        let d = rhs.len();
        let s2 = sigma * sigma;
        let mut precision = gram / s2;
        for i in 0..d {
            precision[(i, i)] += 1.0 / (tau * tau);
        }
        let chol = precision
            .cholesky()
            .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
        let mean = chol.solve(&(rhs / s2));
        let inv = chol.inverse();
        let cov = (&inv + inv.transpose()) * 0.5;
        Ok(Self {
            mean: mean.iter().copied().collect(),
            covariance: cov.transpose().iter().copied().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionHeads {
    pub care: WeightPosterior,
    pub value: WeightPosterior,
    pub care_rows: usize,
    pub value_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlrModel {
    vocabulary: Vec<CriterionId>,
    pub tau: f64,
    pub sigma: f64,
    heads: Vec<CriterionHeads>,
}

/// One simulated partial observation of a training profile.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRow {
    /// Vocabulary index and answer of each revealed criterion.
    pub observed: Vec<(usize, PreferenceValue)>,
    pub cares: bool,
    /// Centered target value; meaningful only when `cares`.
    pub value: f64,
}

/// Feature dimension for a vocabulary of `v` criteria.
pub fn feature_dim(v: usize) -> usize {
    2 * v.saturating_sub(1) + 1
}

fn slot(target: usize, other: usize) -> usize {
    if other < target {
        other
    } else {
        other - 1
    }
}

/// Dense feature vector for `target` given revealed answers. Entries for the
/// target itself are ignored.
pub fn encode(v: usize, target: usize, observed: &[(usize, PreferenceValue)]) -> Vec<f64> {
    let mut z = vec![0.0; feature_dim(v)];
    z[0] = 1.0;
    for &(c, ans) in observed {
        if c == target {
            continue;
        }
        let s = slot(target, c);
        z[1 + 2 * s] = 1.0;
        z[2 + 2 * s] = ans.centered();
    }
    z
}

fn sparse_encode(target: usize, observed: &[(usize, PreferenceValue)]) -> Vec<(usize, f64)> {
    let mut z = vec![(0, 1.0)];
    for &(c, ans) in observed {
        if c == target {
            continue;
        }
        let s = slot(target, c);
        z.push((1 + 2 * s, 1.0));
        let x = ans.centered();
        if x != 0.0 {
            z.push((2 + 2 * s, x));
        }
    }
    z
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Spreads `care` over levels 1..5 by integrating N(mean, variance) over the
/// centered-scale bins, with the remainder on NoPreference.
pub fn discretize(care: f64, mean: f64, variance: f64) -> [f64; NUM_OUTCOMES] {
    let sd = variance.sqrt();
    let mut out = [0.0; NUM_OUTCOMES];
    let mut prev = 0.0;
    for l in 1..=MAX_LEVEL as usize {
        let cdf = if l == MAX_LEVEL as usize {
            1.0
        } else {
            std_normal_cdf(((l as f64 - 2.5) / 2.0 - mean) / sd)
        };
        out[l - 1] = care * (cdf - prev);
        prev = cdf;
    }
    out[NO_PREFERENCE_INDEX] = 1.0 - care;
    out
}

/// Simulated training rows for one target criterion, deterministic in
/// `(config.seed, target id)`.
pub fn training_rows(train: &PopulationDataset, config: &BlrConfig, target: &CriterionId) -> Result<Vec<MaskedRow>> {
    let vocab = train.vocabulary();
    vocab
        .binary_search(target)
        .map_err(|_| Error::UnknownCriterion(target.to_string()))?;
    let mut rng = SeedDeriver::new("blr-masks")
        .u64(config.seed)
        .str(target.as_str())
        .rng();
    let mut rows = Vec::new();
    for u in &train.users {
        let task = train
            .task(&u.task_id)
            .ok_or_else(|| Error::invalid(format!("unknown task {}", u.task_id)))?;
        if !task.contains(target) {
            continue;
        }
        let others: Vec<(usize, PreferenceValue)> = task
            .criteria()
            .iter()
            .filter(|c| *c != target)
            .map(|c| {
                let i = vocab.binary_search(c).map_err(|_| Error::UnknownCriterion(c.to_string()))?;
                Ok((i, u.profile.answer_for(c)))
            })
            .collect::<Result<_>>()?;
        let answer = u.profile.answer_for(target);
        for _ in 0..config.masks_per_profile {
            let size = rng.gen_range(0..=config.max_mask_size.min(others.len()));
            let mut pick = index::sample(&mut rng, others.len(), size).into_vec();
            pick.sort_unstable();
            rows.push(MaskedRow {
                observed: pick.iter().map(|&i| others[i]).collect(),
                cares: answer.is_level(),
                value: answer.centered(),
            });
        }
    }
    Ok(rows)
}

fn fit_heads(v: usize, target: usize, rows: &[MaskedRow], tau: f64, sigma: f64) -> Result<CriterionHeads> {
    let d = feature_dim(v);
    let mut care_gram = DMatrix::<f64>::zeros(d, d);
    let mut care_rhs = DVector::<f64>::zeros(d);
    let mut val_gram = DMatrix::<f64>::zeros(d, d);
    let mut val_rhs = DVector::<f64>::zeros(d);
    let mut value_rows = 0;
    for row in rows {
        let z = sparse_encode(target, &row.observed);
        let y_care = if row.cares { 1.0 } else { 0.0 };
        for &(i, zi) in &z {
            care_rhs[i] += zi * y_care;
            for &(j, zj) in &z {
                care_gram[(i, j)] += zi * zj;
            }
        }
        if row.cares {
            value_rows += 1;
            for &(i, zi) in &z {
                val_rhs[i] += zi * row.value;
                for &(j, zj) in &z {
                    val_gram[(i, j)] += zi * zj;
                }
            }
        }
    }
    Ok(CriterionHeads {
        care: WeightPosterior::from_statistics(care_gram, care_rhs, tau, sigma)?,
        value: WeightPosterior::from_statistics(val_gram, val_rhs, tau, sigma)?,
        care_rows: rows.len(),
        value_rows,
    })
}

/// Fits both heads for every vocabulary criterion. Criteria without training
/// rows keep the prior.
pub fn fit_blr(train: &PopulationDataset, config: &BlrConfig) -> Result<BlrModel> {
    if train.users.is_empty() {
        return Err(Error::invalid("training set has no users"));
    }
    if !(config.tau > 0.0 && config.sigma > 0.0) {
        return Err(Error::invalid("tau and sigma must be > 0"));
    }
    let vocab = train.vocabulary();
    let v = vocab.len();
    let heads = vocab
        .par_iter()
        .enumerate()
        .map(|(t, c)| {
            let rows = training_rows(train, config, c)?;
            fit_heads(v, t, &rows, config.tau, config.sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BlrModel {
        vocabulary: vocab,
        tau: config.tau,
        sigma: config.sigma,
        heads,
    })
}

impl BlrModel {
    /// Model from explicit heads, indexed like the sorted `vocabulary`.
    pub fn from_heads(vocabulary: Vec<CriterionId>, tau: f64, sigma: f64, heads: Vec<CriterionHeads>) -> Result<Self> {
        if vocabulary.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("vocabulary must be sorted and distinct"));
        }
        let d = feature_dim(vocabulary.len());
        if heads.len() != vocabulary.len()
            || heads.iter().any(|h| h.care.dim() != d || h.value.dim() != d)
        {
            return Err(Error::invalid("head dimensions do not match the vocabulary"));
        }
        Ok(Self { vocabulary, tau, sigma, heads })
    }

    pub fn heads(&self, c: &CriterionId) -> Result<&CriterionHeads> {
        Ok(&self.heads[self.index_of(c)?])
    }

    pub fn index_of(&self, c: &CriterionId) -> Result<usize> {
        self.vocabulary
            .binary_search(c)
            .map_err(|_| Error::UnknownCriterion(c.to_string()))
    }

    fn observed(&self, history: &History) -> Result<Vec<(usize, PreferenceValue)>> {
        history
            .iter()
            .map(|o| Ok((self.index_of(&o.criterion)?, o.answer)))
            .collect()
    }

    fn features(&self, observed: &[(usize, PreferenceValue)], target: usize) -> Vec<f64> {
        encode(self.vocabulary.len(), target, observed)
    }

    fn value_variance(&self, observed: &[(usize, PreferenceValue)], target: usize) -> f64 {
        let z = self.features(observed, target);
        self.heads[target].value.quad(&z) + self.sigma * self.sigma
    }

    fn gaussian(&self, observed: &[(usize, PreferenceValue)], target: usize) -> ValueGaussian {
        let z = self.features(observed, target);
        let h = &self.heads[target];
        ValueGaussian {
            care: h.care.mean_at(&z).clamp(0.0, 1.0),
            mean: h.value.mean_at(&z),
            variance: h.value.quad(&z) + self.sigma * self.sigma,
        }
    }
}

impl BeliefModel for BlrModel {
    type State = History;

    fn vocabulary(&self) -> &[CriterionId] {
        &self.vocabulary
    }

    fn init(&self) -> History {
        History::new()
    }

    fn observe(&self, state: &History, obs: &Observation) -> Result<History> {
        self.index_of(&obs.criterion)?;
        state.extended(obs.criterion.clone(), obs.answer)
    }

    fn history<'a>(&self, state: &'a History) -> &'a History {
        state
    }

    fn predictive(&self, state: &History, c: &CriterionId) -> Result<Predictive> {
        let t = self.index_of(c)?;
        if let Some(v) = state.answer(c) {
            return Ok(Predictive::point(v));
        }
        let g = self.gaussian(&self.observed(state)?, t);
        Ok(Predictive {
            probs: discretize(g.care, g.mean, g.variance),
            gaussian: Some(g),
        })
    }

    fn uncertainty(&self, state: &History, c: &CriterionId, exact_entropy: bool) -> Result<f64> {
        let p = self.predictive(state, c)?;
        match p.gaussian {
            Some(g) if !exact_entropy => Ok(g.care * g.variance),
            Some(_) => Ok(entropy(&p.probs)),
            None => Ok(0.0),
        }
    }

    /// Expected drop in summed value variance over the other remaining
    /// criteria after hearing the candidate's answer. The quadratic form can
    /// grow when a feature switches on, so scores may be negative.
    fn information_gain(&self, state: &History, remaining: &[CriterionId]) -> Result<Vec<f64>> {
        let observed = self.observed(state)?;
        let idx: Vec<usize> = remaining.iter().map(|c| self.index_of(c)).collect::<Result<_>>()?;
        for c in remaining {
            if state.contains(c) {
                return Err(Error::invalid(format!("criterion {c} is already observed")));
            }
        }
        let base: Vec<f64> = idx.iter().map(|&t| self.value_variance(&observed, t)).collect();
        let mut out = Vec::with_capacity(idx.len());
        let mut extended = observed.clone();
        for (a, &ca) in idx.iter().enumerate() {
            let g = self.gaussian(&observed, ca);
            let b = discretize(g.care, g.mean, g.variance);
            let before: f64 = (0..idx.len()).filter(|&j| j != a).map(|j| base[j]).sum();
            let mut after = 0.0;
            for (o, &bo) in b.iter().enumerate() {
                if bo <= 0.0 {
                    continue;
                }
                extended.push((ca, PreferenceValue::from_outcome_index(o)));
                let s: f64 = idx
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != a)
                    .map(|(_, &t)| self.value_variance(&extended, t))
                    .sum();
                extended.pop();
                after += bo * s;
            }
            let ig = before - after;
            out.push(if ig.abs() < IG_SNAP { 0.0 } else { ig });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior_model(v: usize, tau: f64, sigma: f64) -> BlrModel {
        let vocab: Vec<CriterionId> = (0..v).map(|i| CriterionId::new(format!("c{i}"))).collect();
        let d = feature_dim(v);
        let heads = (0..v)
            .map(|_| CriterionHeads {
                care: WeightPosterior::prior(d, tau),
                value: WeightPosterior::prior(d, tau),
                care_rows: 0,
                value_rows: 0,
            })
            .collect();
        BlrModel::from_heads(vocab, tau, sigma, heads).unwrap()
    }

    #[test]
    fn scalar_conjugate_case() {
        let gram = DMatrix::from_element(1, 1, 1.0);
        let rhs = DVector::from_element(1, 1.0);
        let p = WeightPosterior::from_statistics(gram, rhs, 1.0, 1.0).unwrap();
        assert!((p.mean[0] - 0.5).abs() < 1e-12);
        assert!((p.covariance[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_rows_keeps_prior() {
        let d = 5;
        let p = WeightPosterior::from_statistics(DMatrix::zeros(d, d), DVector::zeros(d), 2.0, 0.5).unwrap();
        assert_eq!(p, WeightPosterior::prior(d, 2.0));
    }

    #[test]
    fn empty_history_encodes_intercept_only() {
        let z = encode(4, 1, &[]);
        assert_eq!(z.len(), 7);
        assert_eq!(z, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let z = encode(4, 1, &[(3, PreferenceValue::NoPreference), (0, PreferenceValue::Level(5))]);
        assert_eq!(z, vec![1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn prior_predictive_variance() {
        let m = prior_model(3, 1.0, 0.5);
        let p = m.predictive(&History::new(), &"c1".into()).unwrap();
        let g = p.gaussian.unwrap();
        assert_eq!(g.mean, 0.0);
        assert!((g.variance - 1.25).abs() < 1e-12);
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discretization_bins_are_symmetric() {
        let p = discretize(0.8, 0.0, 0.3);
        assert!((p[0] - p[4]).abs() < 1e-12 && (p[1] - p[3]).abs() < 1e-12);
        assert!((p[5] - 0.2).abs() < 1e-12);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn last_remaining_criterion_has_zero_gain() {
        let m = prior_model(3, 1.0, 0.5);
        let h = History::new()
            .extended("c0".into(), PreferenceValue::Level(2))
            .unwrap()
            .extended("c1".into(), PreferenceValue::NoPreference)
            .unwrap();
        assert_eq!(m.information_gain(&h, &["c2".into()]).unwrap(), vec![0.0]);
        assert!(m.information_gain(&h, &["c1".into()]).is_err());
    }

    #[test]
    fn decoupled_model_has_zero_gain() {
        let v = 4;
        let d = feature_dim(v);
        let intercept_only = || {
            let mut p = WeightPosterior::prior(d, 0.0);
            p.mean[0] = 0.3;
            p.covariance[0] = 0.2;
            p
        };
        let heads = (0..v)
            .map(|_| CriterionHeads {
                care: intercept_only(),
                value: intercept_only(),
                care_rows: 0,
                value_rows: 0,
            })
            .collect();
        let vocab = (0..v).map(|i| CriterionId::new(format!("c{i}"))).collect();
        let m = BlrModel::from_heads(vocab, 1.0, 0.5, heads).unwrap();
        let rem: Vec<CriterionId> = m.vocabulary().to_vec();
        assert!(m.information_gain(&History::new(), &rem).unwrap().iter().all(|&x| x == 0.0));
    }
}
