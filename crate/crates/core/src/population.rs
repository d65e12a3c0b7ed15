//! Training and evaluation populations: synthetic generation, file ingestion
//! with frequency filters, and task-level train/test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seed::SeedDeriver;
use crate::types::{
    validate_profile, Criterion, CriterionId, CriterionRegistry, PreferenceProfile,
    PreferenceValue, TaskSpec, MAX_LEVEL, MIN_LEVEL, NUM_OUTCOMES, NO_PREFERENCE_INDEX,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub task_id: String,
    pub profile: PreferenceProfile,
    /// Generating user type, when known (synthetic data only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_type: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Tasks, their criteria, and complete user profiles.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PopulationDataset {
    pub criteria: CriterionRegistry,
    pub tasks: Vec<TaskSpec>,
    pub users: Vec<UserRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl PopulationDataset {
    pub fn task(&self, task_id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id() == task_id)
    }

    /// Users of one task, with their index within that task.
    pub fn users_of<'a>(
        &'a self,
        task_id: &'a str,
    ) -> impl Iterator<Item = (usize, &'a UserRecord)> + 'a {
        self.users
            .iter()
            .filter(move |u| u.task_id == task_id)
            .enumerate()
    }

    /// Global criterion vocabulary in id order.
    pub fn vocabulary(&self) -> Vec<CriterionId> {
        self.criteria.ids().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty() && self.users.is_empty()
    }

    /// Total number of answered criteria over all profiles: the user-query cost
    /// of collecting this dataset when only cared criteria are elicited.
    pub fn answered_queries(&self) -> usize {
        self.users.iter().map(|u| u.profile.cared_count()).sum()
    }

    /// Structural check: every task criterion is registered, every user refers to
    /// a known task and validates against it, and split parts are disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(t.task_id()) {
                return Err(Error::invalid(format!("duplicate task id {}", t.task_id())));
            }
            for c in t.criteria() {
                if !self.criteria.contains(c) {
                    return Err(Error::invalid(format!(
                        "task {} uses unregistered criterion {c}",
                        t.task_id()
                    )));
                }
            }
        }
        for (i, u) in self.users.iter().enumerate() {
            let task = self
                .task(&u.task_id)
                .ok_or_else(|| Error::invalid(format!("user {i}: unknown task {}", u.task_id)))?;
            let v = validate_profile(&u.profile, task);
            if let Some(first) = v.first() {
                return Err(Error::invalid(format!("user {i}: {first}")));
            }
        }
        if let Some(split) = &self.split {
            let train: BTreeSet<_> = split.train.iter().collect();
            if let Some(t) = split.test.iter().find(|t| train.contains(t)) {
                return Err(Error::invalid(format!("task {t} is in both train and test")));
            }
        }
        Ok(())
    }

    /// Sub-dataset over the given tasks (in this dataset's order).
    pub fn restrict_to_tasks(&self, task_ids: &[String]) -> PopulationDataset {
        let keep: BTreeSet<&str> = task_ids.iter().map(String::as_str).collect();
        PopulationDataset {
            criteria: self.criteria.clone(),
            tasks: self
                .tasks
                .iter()
                .filter(|t| keep.contains(t.task_id()))
                .cloned()
                .collect(),
            users: self
                .users
                .iter()
                .filter(|u| keep.contains(u.task_id.as_str()))
                .cloned()
                .collect(),
            split: None,
        }
    }

    pub fn train(&self) -> Result<PopulationDataset> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no train/test split"))?;
        Ok(self.restrict_to_tasks(&split.train))
    }

    pub fn test(&self) -> Result<PopulationDataset> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| Error::invalid("dataset has no train/test split"))?;
        Ok(self.restrict_to_tasks(&split.test))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Writes the dataset as pretty JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Loads and validates a dataset file without applying any filters.
    pub fn load(path: &Path) -> Result<PopulationDataset> {
        let (ds, _) = ingest(path, &IngestFilters::disabled())?;
        Ok(ds)
    }
}

fn default_care_sparsity() -> f64 {
    3.0
}

/// Parameters of the type-based synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Number of latent user types.
    #[serde(rename = "K")]
    pub k: usize,
    /// Criteria per task.
    #[serde(rename = "C")]
    pub criteria_per_task: usize,
    /// Size of the global criterion vocabulary tasks draw from; defaults to `C`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_size: Option<usize>,
    pub num_tasks: usize,
    pub users_per_task: usize,
    /// Expected cared-criteria count per user; used only when `care_probs` is
    /// not given explicitly.
    #[serde(default = "default_care_sparsity")]
    pub care_sparsity: f64,
    /// Vocabulary criteria with a population-wide consensus level, cared about by
    /// every type at the same rate; used only for sampled structure.
    #[serde(default)]
    pub shared_criteria: usize,
    /// K x vocabulary matrix of preferred levels in [1, 5].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_value_means: Option<Vec<Vec<f64>>>,
    /// K x vocabulary matrix of care probabilities in [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub care_probs: Option<Vec<Vec<f64>>>,
    /// Probability that a cared value lands one level off its type mean.
    #[serde(default)]
    pub answer_noise: f64,
    pub seed: u64,
}

/// Care rate of shared criteria in sampled structures.
pub const SHARED_CARE: f64 = 0.6;
/// Care rate of type-specific criteria in sampled structures.
pub const TYPE_CARE: f64 = 0.9;

/// Resolved per-type generating tables over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeStructure {
    pub value_means: Vec<Vec<f64>>,
    pub care_probs: Vec<Vec<f64>>,
    pub answer_noise: f64,
}

impl TypeStructure {
    /// Exact distribution over the six outcomes for type `k` on vocabulary
    /// criterion `c`, including off-by-one noise and clipping.
    pub fn emission(&self, k: usize, c: usize) -> [f64; NUM_OUTCOMES] {
        let mut out = [0.0; NUM_OUTCOMES];
        let care = self.care_probs[k][c];
        let mean = round_level(self.value_means[k][c]);
        let noise = self.answer_noise;
        let lo = mean.saturating_sub(1).max(MIN_LEVEL);
        let hi = (mean + 1).min(MAX_LEVEL);
        out[(mean - 1) as usize] += care * (1.0 - noise);
        out[(lo - 1) as usize] += care * noise / 2.0;
        out[(hi - 1) as usize] += care * noise / 2.0;
        out[NO_PREFERENCE_INDEX] = 1.0 - care;
        out
    }

    pub fn num_types(&self) -> usize {
        self.care_probs.len()
    }
}

fn round_level(v: f64) -> u8 {
    v.round().clamp(MIN_LEVEL as f64, MAX_LEVEL as f64) as u8
}

impl GeneratorSpec {
    /// Sampled structure with `k` types over `c` criteria per task, ten tasks
    /// of fifty users and no answer noise.
    pub fn new(k: usize, c: usize, seed: u64) -> Self {
        Self {
            k,
            criteria_per_task: c,
            vocabulary_size: None,
            num_tasks: 10,
            users_per_task: 50,
            care_sparsity: default_care_sparsity(),
            shared_criteria: 0,
            type_value_means: None,
            care_probs: None,
            answer_noise: 0.0,
            seed,
        }
    }

    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary_size.unwrap_or(self.criteria_per_task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("K must be ≥ 1"));
        }
        if self.criteria_per_task == 0 {
            return Err(Error::invalid("C must be ≥ 1"));
        }
        let vocab = self.vocabulary_size();
        if vocab < self.criteria_per_task {
            return Err(Error::invalid("vocabulary_size must be ≥ C"));
        }
        if !(0.0..=1.0).contains(&self.answer_noise) {
            return Err(Error::invalid("answer_noise must lie in [0, 1]"));
        }
        if !(self.care_sparsity >= 0.0) {
            return Err(Error::invalid("care_sparsity must be ≥ 0"));
        }
        if self.shared_criteria > vocab {
            return Err(Error::invalid("shared_criteria exceeds vocabulary size"));
        }
        let check = |name: &str, m: &Vec<Vec<f64>>, lo: f64, hi: f64| -> Result<()> {
            if m.len() != self.k || m.iter().any(|row| row.len() != vocab) {
                return Err(Error::invalid(format!(
                    "{name} must be a {} x {vocab} matrix",
                    self.k
                )));
            }
            if m.iter().flatten().any(|v| !(lo..=hi).contains(v)) {
                return Err(Error::invalid(format!("{name} entries must lie in [{lo}, {hi}]")));
            }
            Ok(())
        };
        if let Some(m) = &self.type_value_means {
            check("type_value_means", m, 1.0, 5.0)?;
        }
        if let Some(m) = &self.care_probs {
            check("care_probs", m, 0.0, 1.0)?;
        }
        Ok(())
    }

    /// Generating tables: the explicit matrices when given, otherwise a
    /// structure sampled from the seed.
    pub fn structure(&self) -> Result<TypeStructure> {
        self.validate()?;
        let vocab = self.vocabulary_size();
        let mut rng = SeedDeriver::new("generator-structure").u64(self.seed).rng();
        let mut means = vec![vec![3.0; vocab]; self.k];
        let mut care = vec![vec![0.0; vocab]; self.k];

        if self.type_value_means.is_none() || self.care_probs.is_none() {
            let mut order: Vec<usize> = (0..vocab).collect();
            order.shuffle(&mut rng);
            let (shared, specific) = order.split_at(self.shared_criteria);
            for &c in shared {
                let level = rng.gen_range(1..=5) as f64;
                for k in 0..self.k {
                    means[k][c] = level;
                    care[k][c] = SHARED_CARE;
                }
            }
            let target = self.care_sparsity * vocab as f64 / self.criteria_per_task as f64;
            let per_type = ((target - SHARED_CARE * shared.len() as f64) / TYPE_CARE)
                .round()
                .clamp(0.0, specific.len() as f64) as usize;
            for k in 0..self.k {
                let mut pool = specific.to_vec();
                pool.shuffle(&mut rng);
                for &c in &pool[..per_type] {
                    care[k][c] = TYPE_CARE;
                    means[k][c] = rng.gen_range(1..=5) as f64;
                }
            }
        }
        if let Some(m) = &self.type_value_means {
            means = m.clone();
        }
        if let Some(m) = &self.care_probs {
            care = m.clone();
        }
        Ok(TypeStructure {
            value_means: means,
            care_probs: care,
            answer_noise: self.answer_noise,
        })
    }
}

/// Zero-padded id of vocabulary criterion `i`, so lexicographic order matches
/// index order.
pub fn criterion_name(i: usize, vocab: usize) -> CriterionId {
    let width = vocab.saturating_sub(1).to_string().len().max(2);
    CriterionId::new(format!("c{i:0width$}"))
}

/// Draws a synthetic population. Deterministic given `spec.seed`.
///
/// Each user samples a type uniformly, then independently per task criterion
/// decides whether to care (with the type's care probability) and, if so,
/// takes the type's level, moved one step up or down with probability
/// `answer_noise` and clipped to [1, 5].
pub fn generate(spec: &GeneratorSpec) -> Result<PopulationDataset> {
    let structure = spec.structure()?;
    let vocab = spec.vocabulary_size();
    let names: Vec<CriterionId> = (0..vocab).map(|i| criterion_name(i, vocab)).collect();
    let criteria = CriterionRegistry::new(
        names
            .iter()
            .map(|id| Criterion {
                id: id.clone(),
                description: format!("preference dimension {id}"),
            })
            .collect(),
    )?;

    let mut rng = SeedDeriver::new("generator-users").u64(spec.seed).rng();
    let task_width = spec.num_tasks.saturating_sub(1).to_string().len().max(3);
    let mut tasks = Vec::with_capacity(spec.num_tasks);
    let mut users = Vec::with_capacity(spec.num_tasks * spec.users_per_task);

    for t in 0..spec.num_tasks {
        let mut idx: Vec<usize> = if vocab == spec.criteria_per_task {
            (0..vocab).collect()
        } else {
            rand::seq::index::sample(&mut rng, vocab, spec.criteria_per_task).into_vec()
        };
        idx.sort_unstable();
        let task_id = format!("task-{t:0task_width$}");
        let task = TaskSpec::new(
            task_id.clone(),
            format!("synthetic task {t}"),
            idx.iter().map(|&i| names[i].clone()).collect(),
        )?;

        for _ in 0..spec.users_per_task {
            let z = rng.gen_range(0..spec.k);
            let mut profile = PreferenceProfile::new();
            for &c in &idx {
                let cares = rng.gen::<f64>() < structure.care_probs[z][c];
                let mut level = round_level(structure.value_means[z][c]) as i32;
                let u = rng.gen::<f64>();
                if !cares {
                    continue;
                }
                if u < spec.answer_noise / 2.0 {
                    level -= 1;
                } else if u < spec.answer_noise {
                    level += 1;
                }
                let level = level.clamp(MIN_LEVEL as i32, MAX_LEVEL as i32) as u8;
                profile.insert(names[c].clone(), PreferenceValue::Level(level), 1.0);
            }
            users.push(UserRecord {
                task_id: task_id.clone(),
                profile,
                latent_type: Some(z),
            });
        }
        tasks.push(task);
    }

    Ok(PopulationDataset {
        criteria,
        tasks,
        users,
        split: None,
    })
}

/// Manifest written next to every generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub generator: GeneratorSpec,
    pub seed: u64,
    pub dataset_sha256: String,
    pub tool_version: String,
}

impl GenerationManifest {
    pub fn new(spec: &GeneratorSpec, ds: &PopulationDataset) -> Result<Self> {
        Ok(Self {
            generator: spec.clone(),
            seed: spec.seed,
            dataset_sha256: ds.content_hash()?,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn path_for(dataset_path: &Path) -> PathBuf {
        let mut name = dataset_path
            .file_name()
            .map(|n| n.to_os_string())
            .unwrap_or_default();
        name.push(".manifest.json");
        dataset_path.with_file_name(name)
    }
}

/// Filters applied on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestFilters {
    /// Drop criteria present in at least this percentage of tasks.
    pub max_task_share_pct: Option<f64>,
    /// Drop criteria cared about by at most this many users.
    pub min_users_exclusive: Option<usize>,
}

impl Default for IngestFilters {
    fn default() -> Self {
        Self {
            max_task_share_pct: Some(10.0),
            min_users_exclusive: Some(3),
        }
    }
}

impl IngestFilters {
    pub fn disabled() -> Self {
        Self {
            max_task_share_pct: None,
            min_users_exclusive: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dropped_common: Vec<CriterionId>,
    pub dropped_rare: Vec<CriterionId>,
    pub dropped_tasks: Vec<String>,
    pub dropped_users: usize,
}

impl IngestReport {
    pub fn is_noop(&self) -> bool {
        self.dropped_common.is_empty()
            && self.dropped_rare.is_empty()
            && self.dropped_tasks.is_empty()
            && self.dropped_users == 0
    }
}

/// Reads a dataset file, validates every record and applies `filters`.
///
/// Any malformed record aborts the whole ingestion with its section and index.
pub fn ingest(path: &Path, filters: &IngestFilters) -> Result<(PopulationDataset, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok((PopulationDataset::default(), IngestReport::default()));
    }
    let root: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        index: 0,
        message: format!("not a JSON document (line {}): {e}", e.line()),
    })?;
    let section = |name: &str| -> Vec<serde_json::Value> {
        root.get(name)
            .and_then(|v| v.as_array())
            .cloned()
            .unwrap_or_default()
    };
    let record_err = |name: &str, index: usize, e: &dyn std::fmt::Display| Error::Record {
        path: path.to_path_buf(),
        index,
        message: format!("{name}[{index}]: {e}"),
    };

    let mut criteria = Vec::new();
    for (i, v) in section("criteria").into_iter().enumerate() {
        criteria.push(serde_json::from_value::<Criterion>(v).map_err(|e| record_err("criteria", i, &e))?);
    }
    let criteria = CriterionRegistry::new(criteria).map_err(|e| record_err("criteria", 0, &e))?;
    let mut tasks = Vec::new();
    for (i, v) in section("tasks").into_iter().enumerate() {
        tasks.push(serde_json::from_value::<TaskSpec>(v).map_err(|e| record_err("tasks", i, &e))?);
    }
    let mut users = Vec::new();
    for (i, v) in section("users").into_iter().enumerate() {
        users.push(serde_json::from_value::<UserRecord>(v).map_err(|e| record_err("users", i, &e))?);
    }
    let split = match root.get("split") {
        Some(v) if !v.is_null() => Some(
            serde_json::from_value::<Split>(v.clone()).map_err(|e| record_err("split", 0, &e))?,
        ),
        _ => None,
    };

    let ds = PopulationDataset {
        criteria,
        tasks,
        users,
        split,
    };
    for (i, u) in ds.users.iter().enumerate() {
        let task = ds
            .task(&u.task_id)
            .ok_or_else(|| record_err("users", i, &format!("unknown task {}", u.task_id)))?;
        if let Some(v) = validate_profile(&u.profile, task).first() {
            return Err(record_err("users", i, v));
        }
    }
    ds.validate().map_err(|e| Error::Record {
        path: path.to_path_buf(),
        index: 0,
        message: e.to_string(),
    })?;
    Ok(apply_filters(ds, filters))
}

/// Applies the frequency filters until nothing more is dropped, so applying
/// them again is a no-op.
pub fn apply_filters(
    mut ds: PopulationDataset,
    filters: &IngestFilters,
) -> (PopulationDataset, IngestReport) {
    let mut report = IngestReport::default();
    loop {
        let mut drop: BTreeSet<CriterionId> = BTreeSet::new();
        if let Some(pct) = filters.max_task_share_pct {
            let n_tasks = ds.tasks.len();
            let mut counts: BTreeMap<&CriterionId, usize> = BTreeMap::new();
            for t in &ds.tasks {
                for c in t.criteria() {
                    *counts.entry(c).or_default() += 1;
                }
            }
            for (c, n) in counts {
                if n_tasks > 0 && 100.0 * n as f64 / n_tasks as f64 >= pct {
                    drop.insert(c.clone());
                    report.dropped_common.push(c.clone());
                }
            }
        }
        if let Some(k) = filters.min_users_exclusive {
            let mut cared: BTreeMap<&CriterionId, usize> = BTreeMap::new();
            for u in &ds.users {
                for (c, _) in u.profile.cared() {
                    *cared.entry(c).or_default() += 1;
                }
            }
            let in_use: BTreeSet<&CriterionId> =
                ds.tasks.iter().flat_map(|t| t.criteria()).collect();
            for c in in_use {
                if drop.contains(c) {
                    continue;
                }
                if cared.get(c).copied().unwrap_or(0) <= k {
                    drop.insert(c.clone());
                    report.dropped_rare.push(c.clone());
                }
            }
        }
        if drop.is_empty() {
            break;
        }

        let mut kept_tasks = Vec::new();
        for t in &ds.tasks {
            match t.filtered(|c| !drop.contains(c)) {
                Some(t) => kept_tasks.push(t),
                None => report.dropped_tasks.push(t.task_id().to_string()),
            }
        }
        let live: BTreeSet<String> = kept_tasks.iter().map(|t| t.task_id().to_string()).collect();
        let before = ds.users.len();
        ds.users.retain(|u| live.contains(&u.task_id));
        report.dropped_users += before - ds.users.len();
        for u in &mut ds.users {
            u.profile.retain(|c| !drop.contains(c));
        }
        ds.criteria.retain(|c| !drop.contains(c));
        ds.tasks = kept_tasks;
        if let Some(split) = &mut ds.split {
            split.train.retain(|t| live.contains(t));
            split.test.retain(|t| live.contains(t));
        }
    }
    (ds, report)
}

/// Partitions tasks into train and test. Users follow their task.
pub fn split_by_task(
    ds: &PopulationDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<PopulationDataset> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie strictly between 0 and 1"));
    }
    let n = ds.tasks.len();
    if n < 2 {
        return Err(Error::invalid("splitting needs at least 2 tasks"));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut ids: Vec<&str> = ds.tasks.iter().map(|t| t.task_id()).collect();
    ids.sort_unstable();
    let mut rng = SeedDeriver::new("split").u64(seed).rng();
    ids.shuffle(&mut rng);
    let test: BTreeSet<&str> = ids[..n_test].iter().copied().collect();

    let mut split = Split::default();
    for t in &ds.tasks {
        if test.contains(t.task_id()) {
            split.test.push(t.task_id().to_string());
        } else {
            split.train.push(t.task_id().to_string());
        }
    }
    let mut out = ds.clone();
    out.split = Some(split);
    Ok(out)
}
