//! Choosing the next criterion to ask about.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::belief::BeliefModel;
use crate::error::{Error, Result};
use crate::types::{CriterionId, SessionConfig, StrategyName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub criterion: CriterionId,
    pub score: f64,
}

/// Outcome of one selection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub criterion: CriterionId,
    /// Scores behind the choice; empty for random and static selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<AcquisitionScore>,
}

fn check_finite(scores: Vec<AcquisitionScore>) -> Result<Vec<AcquisitionScore>> {
    match scores.iter().find(|s| !s.score.is_finite()) {
        Some(s) => Err(Error::Numerical(format!(
            "non-finite acquisition score {} for {}",
            s.score, s.criterion
        ))),
        None => Ok(scores),
    }
}

pub fn select_random(remaining: &[CriterionId], rng: &mut impl Rng) -> Result<CriterionId> {
    if remaining.is_empty() {
        return Err(Error::invalid("no criteria left to ask about"));
    }
    Ok(remaining[rng.gen_range(0..remaining.len())].clone())
}

pub fn score_uncertainty<M: BeliefModel>(
    model: &M,
    state: &M::State,
    remaining: &[CriterionId],
    exact_entropy: bool,
) -> Result<Vec<AcquisitionScore>> {
    let scores = remaining
        .iter()
        .map(|c| {
            Ok(AcquisitionScore {
                criterion: c.clone(),
                score: model.uncertainty(state, c, exact_entropy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    check_finite(scores)
}

pub fn score_infogain<M: BeliefModel>(
    model: &M,
    state: &M::State,
    remaining: &[CriterionId],
) -> Result<Vec<AcquisitionScore>> {
    let ig = model.information_gain(state, remaining)?;
    check_finite(
        remaining
            .iter()
            .zip(ig)
            .map(|(c, score)| AcquisitionScore {
                criterion: c.clone(),
                score,
            })
            .collect(),
    )
}

/// Highest score; ties go to the lowest criterion id.
pub fn select_argmax(scores: &[AcquisitionScore]) -> Result<CriterionId> {
    scores
        .iter()
        .max_by(|a, b| {
            a.score
                .total_cmp(&b.score)
                .then_with(|| b.criterion.cmp(&a.criterion))
        })
        .map(|s| s.criterion.clone())
        .ok_or_else(|| Error::invalid("no criteria left to ask about"))
}

/// Softmax sampling over `score / temperature`.
pub fn soft_probabilities(scores: &[AcquisitionScore], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature must be > 0"));
    }
    if scores.is_empty() {
        return Err(Error::invalid("no criteria left to ask about"));
    }
    let max = scores.iter().map(|s| s.score).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores
        .iter()
        .map(|s| ((s.score - max) / temperature).exp())
        .collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

pub fn select_soft(scores: &[AcquisitionScore], temperature: f64, rng: &mut impl Rng) -> Result<CriterionId> {
    let p = soft_probabilities(scores, temperature)?;
    let mut u = rng.gen::<f64>();
    for (s, pi) in scores.iter().zip(&p) {
        u -= pi;
        if u < 0.0 {
            return Ok(s.criterion.clone());
        }
    }
    let last = p.iter().rposition(|&x| x > 0.0).unwrap_or(scores.len() - 1);
    Ok(scores[last].criterion.clone())
}

/// Applies the configured strategy to the remaining criteria (taken in id
/// order so tie-breaking and sampling are canonical).
pub fn select<M: BeliefModel>(
    model: &M,
    state: &M::State,
    remaining: &[CriterionId],
    config: &SessionConfig,
    rng: &mut impl Rng,
) -> Result<Selection> {
    let mut remaining = remaining.to_vec();
    remaining.sort();
    let plain = |criterion| Selection {
        criterion,
        scores: Vec::new(),
    };
    match config.strategy {
        StrategyName::Random => Ok(plain(select_random(&remaining, rng)?)),
        StrategyName::Static => config
            .static_order
            .iter()
            .find(|c| remaining.binary_search(c).is_ok())
            .map(|c| plain(c.clone()))
            .ok_or_else(|| Error::invalid("static question order is shorter than the budget")),
        StrategyName::Uncertainty | StrategyName::UncertaintySoft => {
            let scores = score_uncertainty(model, state, &remaining, config.exact_entropy)?;
            let criterion = if config.strategy == StrategyName::Uncertainty {
                select_argmax(&scores)?
            } else {
                select_soft(&scores, config.temperature, rng)?
            };
            Ok(Selection { criterion, scores })
        }
        StrategyName::Infogain | StrategyName::InfogainSoft => {
            let scores = score_infogain(model, state, &remaining)?;
            let criterion = if config.strategy == StrategyName::Infogain {
                select_argmax(&scores)?
            } else {
                select_soft(&scores, config.temperature, rng)?
            };
            Ok(Selection { criterion, scores })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn scores(v: &[f64]) -> Vec<AcquisitionScore> {
        v.iter()
            .enumerate()
            .map(|(i, &score)| AcquisitionScore {
                criterion: CriterionId::new(format!("c{i}")),
                score,
            })
            .collect()
    }

    #[test]
    fn singleton_random() {
        let mut rng = rng_from(1);
        assert_eq!(select_random(&["x".into()], &mut rng).unwrap(), "x".into());
        assert!(select_random(&[], &mut rng).is_err());
    }

    #[test]
    fn random_draws_are_uniform() {
        let items: Vec<CriterionId> = (0..4).map(|i| CriterionId::new(format!("c{i}"))).collect();
        let mut rng = rng_from(7);
        let n = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let c = select_random(&items, &mut rng).unwrap();
            counts[items.iter().position(|x| *x == c).unwrap()] += 1;
        }
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for k in counts {
            assert!((k as f64 - n as f64 * 0.25).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        assert_eq!(select_argmax(&scores(&[0.5, 0.9, 0.9])).unwrap(), "c1".into());
    }

    #[test]
    fn soft_matches_exp_weights() {
        let s = scores(&[2f64.ln(), 0.0]);
        let p = soft_probabilities(&s, 1.0).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        let mut rng = rng_from(3);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| select_soft(&s, 1.0, &mut rng).unwrap() == "c0".into())
            .count();
        let sd = (n as f64 * 2.0 / 9.0).sqrt();
        assert!((hits as f64 - n as f64 * 2.0 / 3.0).abs() < 3.0 * sd);
    }

    #[test]
    fn soft_equal_scores_are_uniform_and_cold_is_argmax() {
        let p = soft_probabilities(&scores(&[1.0, 1.0, 1.0]), 1.0).unwrap();
        assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = soft_probabilities(&scores(&[0.1, 0.3, 0.2]), 1e-9).unwrap();
        assert!(p[1] >= 1.0 - 1e-6);
        assert!(soft_probabilities(&scores(&[0.1]), 0.0).is_err());
    }
}
