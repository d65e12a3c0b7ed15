//! Shared vocabulary: criteria, tasks, preference values, profiles and histories.
//!
//! Everything here is an immutable value once built. Constructors enforce the
//! structural invariants (distinct criteria, no repeated questions); semantic
//! checks that depend on a task live in [`validate_profile`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Lowest and highest ordinal preference level.
pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 5;

/// Number of distinct answers a criterion admits: five levels plus indifference.
pub const NUM_OUTCOMES: usize = 6;

/// Outcome index reserved for [`PreferenceValue::NoPreference`].
pub const NO_PREFERENCE_INDEX: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CriterionId(String);

impl CriterionId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CriterionId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// One preference dimension. The value domain is fixed: levels 1..=5 and
/// `NoPreference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub id: CriterionId,
    #[serde(default)]
    pub description: String,
}

impl Criterion {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            id: CriterionId::new(id),
            description: description.into(),
        }
    }

    pub fn value_domain() -> [PreferenceValue; NUM_OUTCOMES] {
        PreferenceValue::all()
    }
}

/// Criteria keyed by id. Ids are unique by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Criterion>", into = "Vec<Criterion>")]
pub struct CriterionRegistry {
    by_id: BTreeMap<CriterionId, Criterion>,
}

impl CriterionRegistry {
    pub fn new(criteria: Vec<Criterion>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for c in criteria {
            if by_id.contains_key(&c.id) {
                return Err(Error::invalid(format!("duplicate criterion id {}", c.id)));
            }
            by_id.insert(c.id.clone(), c);
        }
        Ok(Self { by_id })
    }

    pub fn get(&self, id: &CriterionId) -> Option<&Criterion> {
        self.by_id.get(id)
    }

    pub fn contains(&self, id: &CriterionId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &CriterionId> {
        self.by_id.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Criterion> {
        self.by_id.values()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&CriterionId) -> bool) {
        self.by_id.retain(|id, _| keep(id));
    }
}

impl TryFrom<Vec<Criterion>> for CriterionRegistry {
    type Error = Error;

    fn try_from(v: Vec<Criterion>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CriterionRegistry> for Vec<Criterion> {
    fn from(r: CriterionRegistry) -> Self {
        r.by_id.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RawTaskSpec {
    task_id: String,
    #[serde(default)]
    prompt_text: String,
    criteria: Vec<CriterionId>,
}

/// A task and its spanning set of preference dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTaskSpec", into = "RawTaskSpec")]
pub struct TaskSpec {
    task_id: String,
    prompt_text: String,
    criteria: Vec<CriterionId>,
}

impl TaskSpec {
    pub fn new(
        task_id: impl Into<String>,
        prompt_text: impl Into<String>,
        criteria: Vec<CriterionId>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if criteria.is_empty() {
            return Err(Error::invalid(format!("task {task_id} has no criteria")));
        }
        let mut seen = BTreeSet::new();
        for c in &criteria {
            if !seen.insert(c) {
                return Err(Error::invalid(format!(
                    "task {task_id} lists criterion {c} twice"
                )));
            }
        }
        Ok(Self {
            task_id,
            prompt_text: prompt_text.into(),
            criteria,
        })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn prompt_text(&self) -> &str {
        &self.prompt_text
    }

    pub fn criteria(&self) -> &[CriterionId] {
        &self.criteria
    }

    pub fn contains(&self, id: &CriterionId) -> bool {
        self.criteria.iter().any(|c| c == id)
    }

    /// Same task restricted to the criteria accepted by `keep`. Returns `None`
    /// when nothing survives.
    pub fn filtered(&self, mut keep: impl FnMut(&CriterionId) -> bool) -> Option<TaskSpec> {
        let criteria: Vec<_> = self.criteria.iter().filter(|c| keep(c)).cloned().collect();
        if criteria.is_empty() {
            return None;
        }
        Some(TaskSpec {
            task_id: self.task_id.clone(),
            prompt_text: self.prompt_text.clone(),
            criteria,
        })
    }
}

impl TryFrom<RawTaskSpec> for TaskSpec {
    type Error = Error;

    fn try_from(raw: RawTaskSpec) -> Result<Self> {
        TaskSpec::new(raw.task_id, raw.prompt_text, raw.criteria)
    }
}

impl From<TaskSpec> for RawTaskSpec {
    fn from(t: TaskSpec) -> Self {
        RawTaskSpec {
            task_id: t.task_id,
            prompt_text: t.prompt_text,
            criteria: t.criteria,
        }
    }
}

/// An answer or profile value. Serialized as the bare integer level, or the
/// string `"none"` for indifference.
///
/// `Level` may hold an out-of-range number when parsed from untrusted input;
/// [`validate_profile`] reports it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PreferenceValue {
    Level(u8),
    NoPreference,
}

impl PreferenceValue {
    pub fn level(n: u8) -> Result<Self> {
        if (MIN_LEVEL..=MAX_LEVEL).contains(&n) {
            Ok(Self::Level(n))
        } else {
            Err(Error::invalid(format!("level {n} out of range 1..=5")))
        }
    }

    pub fn all() -> [PreferenceValue; NUM_OUTCOMES] {
        [
            Self::Level(1),
            Self::Level(2),
            Self::Level(3),
            Self::Level(4),
            Self::Level(5),
            Self::NoPreference,
        ]
    }

    /// Index into a length-6 outcome table: levels map to 0..=4, indifference to 5.
    pub fn outcome_index(self) -> usize {
        match self {
            Self::Level(n) => {
                debug_assert!((MIN_LEVEL..=MAX_LEVEL).contains(&n));
                (n - 1) as usize
            }
            Self::NoPreference => NO_PREFERENCE_INDEX,
        }
    }

    pub fn from_outcome_index(i: usize) -> Self {
        match i {
            0..=4 => Self::Level(i as u8 + 1),
            _ => Self::NoPreference,
        }
    }

    pub fn is_level(self) -> bool {
        matches!(self, Self::Level(_))
    }

    pub fn is_valid(self) -> bool {
        match self {
            Self::Level(n) => (MIN_LEVEL..=MAX_LEVEL).contains(&n),
            Self::NoPreference => true,
        }
    }

    /// Centered value `(v - 3) / 2` in `[-1, 1]`; indifference encodes as 0.
    pub fn centered(self) -> f64 {
        match self {
            Self::Level(n) => (n as f64 - 3.0) / 2.0,
            Self::NoPreference => 0.0,
        }
    }
}

impl fmt::Display for PreferenceValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Level(n) => write!(f, "{n}"),
            Self::NoPreference => f.write_str("none"),
        }
    }
}

impl FromStr for PreferenceValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("none") {
            return Ok(Self::NoPreference);
        }
        let n: u8 = t
            .parse()
            .map_err(|_| Error::invalid(format!("not a preference value: {s:?}")))?;
        Self::level(n)
    }
}

impl Serialize for PreferenceValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Level(n) => s.serialize_u8(*n),
            Self::NoPreference => s.serialize_str("none"),
        }
    }
}

impl<'de> Deserialize<'de> for PreferenceValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = PreferenceValue;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an integer level or \"none\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Self::Value, E> {
                u8::try_from(v)
                    .map(PreferenceValue::Level)
                    .map_err(|_| E::custom(format!("level {v} does not fit a byte")))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Self::Value, E> {
                u8::try_from(v)
                    .map(PreferenceValue::Level)
                    .map_err(|_| E::custom(format!("level {v} is negative or too large")))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Self::Value, E> {
                if v.eq_ignore_ascii_case("none") {
                    Ok(PreferenceValue::NoPreference)
                } else {
                    Err(E::custom(format!("unknown preference value {v:?}")))
                }
            }

            fn visit_unit<E: de::Error>(self) -> std::result::Result<Self::Value, E> {
                Ok(PreferenceValue::NoPreference)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub value: PreferenceValue,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_weight() -> f64 {
    1.0
}

/// Sparse map from criterion to preferred value and importance weight.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceProfile {
    entries: BTreeMap<CriterionId, ProfileEntry>,
}

impl PreferenceProfile {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `(criterion, value)` with unit weight.
    pub fn with(mut self, id: impl Into<CriterionId>, value: PreferenceValue) -> Self {
        self.insert(id.into(), value, 1.0);
        self
    }

    pub fn insert(&mut self, id: CriterionId, value: PreferenceValue, weight: f64) {
        self.entries.insert(id, ProfileEntry { value, weight });
    }

    pub fn get(&self, id: &CriterionId) -> Option<&ProfileEntry> {
        self.entries.get(id)
    }

    pub fn value(&self, id: &CriterionId) -> Option<PreferenceValue> {
        self.entries.get(id).map(|e| e.value)
    }

    pub fn remove(&mut self, id: &CriterionId) -> Option<ProfileEntry> {
        self.entries.remove(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CriterionId, &ProfileEntry)> {
        self.entries.iter()
    }

    /// Entries holding an actual level, i.e. the criteria the user cares about.
    pub fn cared(&self) -> impl Iterator<Item = (&CriterionId, &ProfileEntry)> {
        self.entries.iter().filter(|(_, e)| e.value.is_level())
    }

    pub fn cared_count(&self) -> usize {
        self.cared().count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&CriterionId) -> bool) {
        self.entries.retain(|id, _| keep(id));
    }

    /// Answer a passive user with this profile gives when asked about `id`.
    pub fn answer_for(&self, id: &CriterionId) -> PreferenceValue {
        match self.entries.get(id) {
            Some(e) if e.value.is_level() => e.value,
            _ => PreferenceValue::NoPreference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    UnknownCriterion(CriterionId),
    LevelOutOfRange(CriterionId, u8),
    NegativeWeight(CriterionId),
    NonFiniteWeight(CriterionId),
    NoPositiveWeight,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownCriterion(c) => write!(f, "unknown criterion {c}"),
            Self::LevelOutOfRange(c, n) => write!(f, "level out of range: {c} = {n}"),
            Self::NegativeWeight(c) => write!(f, "negative weight on {c}"),
            Self::NonFiniteWeight(c) => write!(f, "non-finite weight on {c}"),
            Self::NoPositiveWeight => f.write_str("non-empty profile has no positive weight"),
        }
    }
}

/// Every invariant violation of `profile` with respect to `task`. An empty list
/// means the profile is valid.
pub fn validate_profile(profile: &PreferenceProfile, task: &TaskSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut any_positive = false;
    for (id, e) in profile.iter() {
        if !task.contains(id) {
            out.push(Violation::UnknownCriterion(id.clone()));
        }
        if let PreferenceValue::Level(n) = e.value {
            if !(MIN_LEVEL..=MAX_LEVEL).contains(&n) {
                out.push(Violation::LevelOutOfRange(id.clone(), n));
            }
        }
        if !e.weight.is_finite() {
            out.push(Violation::NonFiniteWeight(id.clone()));
        } else if e.weight < 0.0 {
            out.push(Violation::NegativeWeight(id.clone()));
        } else if e.weight > 0.0 {
            any_positive = true;
        }
    }
    if !profile.is_empty() && !any_positive {
        out.push(Violation::NoPositiveWeight);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub criterion: CriterionId,
    pub answer: PreferenceValue,
}

/// Ordered question/answer pairs of one session. No criterion appears twice.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Observation>", into = "Vec<Observation>")]
pub struct History {
    observations: Vec<Observation>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, criterion: CriterionId, answer: PreferenceValue) -> Result<()> {
        if self.contains(&criterion) {
            return Err(Error::invalid(format!(
                "criterion {criterion} already asked in this session"
            )));
        }
        self.observations.push(Observation { criterion, answer });
        Ok(())
    }

    /// Copy with one more observation appended.
    pub fn extended(&self, criterion: CriterionId, answer: PreferenceValue) -> Result<Self> {
        let mut h = self.clone();
        h.push(criterion, answer)?;
        Ok(h)
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self {
            observations: self.observations[..len.min(self.observations.len())].to_vec(),
        }
    }

    pub fn contains(&self, criterion: &CriterionId) -> bool {
        self.observations.iter().any(|o| &o.criterion == criterion)
    }

    pub fn answer(&self, criterion: &CriterionId) -> Option<PreferenceValue> {
        self.observations
            .iter()
            .find(|o| &o.criterion == criterion)
            .map(|o| o.answer)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

impl TryFrom<Vec<Observation>> for History {
    type Error = Error;

    fn try_from(v: Vec<Observation>) -> Result<Self> {
        let mut h = History::new();
        for o in v {
            h.push(o.criterion, o.answer)?;
        }
        Ok(h)
    }
}

impl From<History> for Vec<Observation> {
    fn from(h: History) -> Self {
        h.observations
    }
}

/// Acquisition strategy by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Random,
    Uncertainty,
    UncertaintySoft,
    Infogain,
    InfogainSoft,
    /// Fixed question order, independent of answers.
    Static,
}

impl StrategyName {
    pub const VALID: [&'static str; 6] = [
        "random",
        "uncertainty",
        "uncertainty-soft",
        "infogain",
        "infogain-soft",
        "static",
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Uncertainty => "uncertainty",
            Self::UncertaintySoft => "uncertainty-soft",
            Self::Infogain => "infogain",
            Self::InfogainSoft => "infogain-soft",
            Self::Static => "static",
        }
    }

    /// Whether selection depends only on the belief state (no sampling).
    pub fn is_deterministic(self) -> bool {
        matches!(self, Self::Uncertainty | Self::Infogain | Self::Static)
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Self::Random,
            "uncertainty" => Self::Uncertainty,
            "uncertainty-soft" => Self::UncertaintySoft,
            "infogain" => Self::Infogain,
            "infogain-soft" => Self::InfogainSoft,
            "static" => Self::Static,
            other => {
                return Err(Error::UnknownStrategy {
                    name: other.to_string(),
                    valid: Self::VALID.join(", "),
                })
            }
        })
    }
}

fn default_temperature() -> f64 {
    1.0
}

fn default_care_threshold() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub budget: usize,
    pub strategy: StrategyName,
    pub seed: u64,
    #[serde(default)]
    pub belief_model_ref: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_care_threshold")]
    pub care_threshold: f64,
    /// Score BLR uncertainty by discrete predictive entropy instead of
    /// care-scaled variance.
    #[serde(default)]
    pub exact_entropy: bool,
    /// Question order for [`StrategyName::Static`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub static_order: Vec<CriterionId>,
}

impl SessionConfig {
    pub fn new(budget: usize, strategy: StrategyName, seed: u64) -> Self {
        Self {
            budget,
            strategy,
            seed,
            belief_model_ref: String::new(),
            temperature: default_temperature(),
            care_threshold: default_care_threshold(),
            exact_entropy: false,
            static_order: Vec::new(),
        }
    }

    pub fn with_static_order(mut self, order: Vec<CriterionId>) -> Self {
        self.strategy = StrategyName::Static;
        self.static_order = order;
        self
    }

    pub fn effective_budget(&self, task: &TaskSpec) -> usize {
        self.budget.min(task.criteria().len())
    }
}
