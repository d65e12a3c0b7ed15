//! Belief models: offline fitting on complete profiles and online updating
//! from a session's answers.

pub mod blr;
pub mod gmm;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    CriterionId, History, Observation, PreferenceProfile, PreferenceValue, TaskSpec,
    NO_PREFERENCE_INDEX, NUM_OUTCOMES,
};

pub use blr::{fit_blr, BlrConfig, BlrModel};
pub use gmm::{fit_gmm, GmmBelief, GmmConfig, GmmModel};

/// Gaussian view of a BLR prediction on the centered value scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueGaussian {
    pub care: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Posterior predictive over one criterion's answer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictive {
    /// Probabilities of levels 1..5 followed by NoPreference.
    pub probs: [f64; NUM_OUTCOMES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian: Option<ValueGaussian>,
}

impl Predictive {
    pub fn point(v: PreferenceValue) -> Self {
        let mut probs = [0.0; NUM_OUTCOMES];
        probs[v.outcome_index()] = 1.0;
        Self {
            probs,
            gaussian: None,
        }
    }

    pub fn prob(&self, v: PreferenceValue) -> f64 {
        self.probs[v.outcome_index()]
    }

    pub fn care_probability(&self) -> f64 {
        1.0 - self.probs[NO_PREFERENCE_INDEX]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(&self.probs)
    }

    /// Most probable level, lowest level on ties.
    pub fn modal_level(&self) -> u8 {
        let mut best = 0;
        for i in 1..NO_PREFERENCE_INDEX {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        best as u8 + 1
    }
}

pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Common contract of fitted world models. Models are immutable; each session
/// owns its `State`.
pub trait BeliefModel: Send + Sync {
    type State: Clone + Send + Sync;

    fn vocabulary(&self) -> &[CriterionId];

    /// Belief before any answer.
    fn init(&self) -> Self::State;

    /// Belief after one more answer. The input state is left untouched.
    fn observe(&self, state: &Self::State, obs: &Observation) -> Result<Self::State>;

    fn history<'a>(&self, state: &'a Self::State) -> &'a History;

    fn predictive(&self, state: &Self::State, criterion: &CriterionId) -> Result<Predictive>;

    /// Marginal-uncertainty score. With `exact_entropy` the discrete predictive
    /// entropy is used for every model kind.
    fn uncertainty(
        &self,
        state: &Self::State,
        criterion: &CriterionId,
        exact_entropy: bool,
    ) -> Result<f64>;

    /// Information-gain score for each of `remaining` (all unobserved).
    fn information_gain(&self, state: &Self::State, remaining: &[CriterionId])
        -> Result<Vec<f64>>;

    fn observe_all(&self, history: &History) -> Result<Self::State> {
        let mut s = self.init();
        for o in history.iter() {
            s = self.observe(&s, o)?;
        }
        Ok(s)
    }
}

/// Committed profile after a session: observed answers copied as given, and
/// each unobserved criterion included at its modal level when its care
/// probability reaches `care_threshold`.
pub fn predict_profile<M: BeliefModel>(
    model: &M,
    state: &M::State,
    task: &TaskSpec,
    care_threshold: f64,
) -> Result<PreferenceProfile> {
    let history = model.history(state);
    let mut out = PreferenceProfile::new();
    for c in task.criteria() {
        if let Some(v) = history.answer(c) {
            out.insert(c.clone(), v, 1.0);
            continue;
        }
        let p = model.predictive(state, c)?;
        if p.care_probability() >= care_threshold {
            out.insert(c.clone(), PreferenceValue::Level(p.modal_level()), 1.0);
        }
    }
    Ok(out)
}

/// Either fitted model kind, dispatching the belief contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FittedModel {
    Gmm(GmmModel),
    Blr(BlrModel),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BeliefState {
    Gmm(GmmBelief),
    Blr(History),
}

fn state_mismatch() -> Error {
    Error::invalid("belief state does not belong to this model kind")
}

impl BeliefModel for FittedModel {
    type State = BeliefState;

    fn vocabulary(&self) -> &[CriterionId] {
        match self {
            Self::Gmm(m) => m.vocabulary(),
            Self::Blr(m) => m.vocabulary(),
        }
    }

    fn init(&self) -> BeliefState {
        match self {
            Self::Gmm(m) => BeliefState::Gmm(m.init()),
            Self::Blr(m) => BeliefState::Blr(m.init()),
        }
    }

    fn observe(&self, state: &BeliefState, obs: &Observation) -> Result<BeliefState> {
        match (self, state) {
            (Self::Gmm(m), BeliefState::Gmm(s)) => Ok(BeliefState::Gmm(m.observe(s, obs)?)),
            (Self::Blr(m), BeliefState::Blr(s)) => Ok(BeliefState::Blr(m.observe(s, obs)?)),
            _ => Err(state_mismatch()),
        }
    }

    fn history<'a>(&self, state: &'a BeliefState) -> &'a History {
        match state {
            BeliefState::Gmm(s) => &s.history,
            BeliefState::Blr(h) => h,
        }
    }

    fn predictive(&self, state: &BeliefState, criterion: &CriterionId) -> Result<Predictive> {
        match (self, state) {
            (Self::Gmm(m), BeliefState::Gmm(s)) => m.predictive(s, criterion),
            (Self::Blr(m), BeliefState::Blr(s)) => m.predictive(s, criterion),
            _ => Err(state_mismatch()),
        }
    }

    fn uncertainty(
        &self,
        state: &BeliefState,
        criterion: &CriterionId,
        exact_entropy: bool,
    ) -> Result<f64> {
        match (self, state) {
            (Self::Gmm(m), BeliefState::Gmm(s)) => m.uncertainty(s, criterion, exact_entropy),
            (Self::Blr(m), BeliefState::Blr(s)) => m.uncertainty(s, criterion, exact_entropy),
            _ => Err(state_mismatch()),
        }
    }

    fn information_gain(
        &self,
        state: &BeliefState,
        remaining: &[CriterionId],
    ) -> Result<Vec<f64>> {
        match (self, state) {
            (Self::Gmm(m), BeliefState::Gmm(s)) => m.information_gain(s, remaining),
            (Self::Blr(m), BeliefState::Blr(s)) => m.information_gain(s, remaining),
            _ => Err(state_mismatch()),
        }
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Provenance of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitManifest {
    pub dataset_sha256: String,
    pub seed: u64,
    pub hyperparameters: serde_json::Value,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema_version: u32,
    pub manifest: FitManifest,
    pub model: FittedModel,
}

impl ModelFile {
    pub fn new(model: FittedModel, manifest: FitManifest) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            manifest,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a model document, refusing any other schema version.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("model file has no schema_version"))?;
        if found != MODEL_SCHEMA_VERSION as u64 {
            return Err(Error::SchemaVersion {
                found: found as u32,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_endpoints() {
        assert!((entropy(&[1.0 / 6.0; 6]) - 6f64.ln()).abs() < 1e-12);
        assert_eq!(Predictive::point(PreferenceValue::Level(2)).entropy(), 0.0);
    }

    #[test]
    fn modal_level_prefers_lowest_on_ties() {
        let p = Predictive {
            probs: [0.1, 0.3, 0.3, 0.0, 0.0, 0.3],
            gaussian: None,
        };
        assert_eq!(p.modal_level(), 2);
    }
}
