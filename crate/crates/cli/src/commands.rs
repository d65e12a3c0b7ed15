use std::cell::OnceCell;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::Local;
use elicit_core::baselines::population_average_policy;
use elicit_core::belief::{fit_blr, fit_gmm, BlrConfig, FitManifest, FittedModel, GmmConfig, ModelFile};
use elicit_core::engine::{run_interactive, write_jsonl, write_timings};
use elicit_core::experiment::{
    adaptivity_table, complexity_generator, reference_generator, run_ablation, run_ablation_on, run_complexity,
    run_trials, separating_generator, AblationConfig, AblationResult, Arm, ComplexityConfig, ComplexityResult,
    Prepared,
};
use elicit_core::metrics::{alignment_report, mean_std, AdaptivityReport, AlignmentReport};
use elicit_core::population::{generate, split_by_task, GenerationManifest, GeneratorSpec, PopulationDataset};
use elicit_core::types::{PreferenceProfile, SessionConfig, StrategyName, TaskSpec};
use serde::Serialize;

use crate::settings::Settings;
use crate::{
    AblateArgs, AdaptivityArgs, Cli, Command, ComplexityArgs, ElicitArgs, Failure, FitArgs, GenerateArgs,
    ReferenceArgs,
};

const REFERENCE_PRESET: &str = include_str!("../../../configs/reference-experiment.json");

struct Ctx {
    settings: Settings,
    seed: Option<u64>,
    parallel: usize,
    out: PathBuf,
    run_dir: OnceCell<PathBuf>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// `<out>/<timestamp>-seed<seed>`, created on first use.
    fn run_dir(&self) -> Result<&Path, Failure> {
        if let Some(d) = self.run_dir.get() {
            return Ok(d);
        }
        let stamp = Local::now().format("%Y%m%dT%H%M%S");
        let base = self.out.join(format!("{stamp}-seed{}", self.seed()));
        let mut dir = base.clone();
        let mut n = 1;
        while dir.exists() {
            dir = PathBuf::from(format!("{}-{n}", base.display()));
            n += 1;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(self.run_dir.get_or_init(|| dir))
    }

    fn output(&self, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
        match explicit {
            Some(p) => Ok(p.clone()),
            None => Ok(self.run_dir()?.join(name)),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_input(path: &Path) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{} does not exist", path.display())))
    }
}

fn load_dataset(path: &Path) -> Result<PopulationDataset, Failure> {
    require_input(path)?;
    Ok(PopulationDataset::load(path).with_context(|| format!("loading dataset {}", path.display()))?)
}

fn load_model(path: &Path) -> Result<ModelFile, Failure> {
    require_input(path)?;
    Ok(ModelFile::load(path).with_context(|| format!("loading model {}", path.display()))?)
}

fn parse_strategy(name: &str) -> Result<StrategyName, Failure> {
    name.parse().map_err(|e: elicit_core::Error| usage(e.to_string()))
}

fn parse_arm(label: &str) -> Result<Arm, Failure> {
    if label == "population-average" {
        return Ok(Arm::PopulationAverage);
    }
    if let Some(s) = label.strip_prefix("full-") {
        return Ok(Arm::Full(parse_strategy(s)?));
    }
    if let Some(s) = label.strip_prefix("nocorr-") {
        return Ok(Arm::NoCorrelation(parse_strategy(s)?));
    }
    Err(usage(format!(
        "unknown arm {label:?}; use full-<strategy>, nocorr-<strategy> or population-average"
    )))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn test_sessions(ds: &PopulationDataset) -> (Vec<TaskSpec>, Vec<Vec<PreferenceProfile>>) {
    let users = ds
        .tasks
        .iter()
        .map(|t| ds.users_of(t.task_id()).map(|(_, u)| u.profile.clone()).collect())
        .collect();
    (ds.tasks.clone(), users)
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let preset = matches!(cli.command, Command::ReferenceExperiment(_)).then_some(REFERENCE_PRESET);
    let settings = Settings::load(cli.global.config.as_deref(), preset)?;
    let default_parallel = std::thread::available_parallelism().map_or(1, |n| n.get());
    let ctx = Ctx {
        seed: settings.opt(cli.global.seed, "seed")?,
        parallel: settings.get(cli.global.parallel, "parallel", default_parallel)?.max(1),
        out: settings.get(cli.global.out, "out", PathBuf::from("runs"))?,
        run_dir: OnceCell::new(),
        settings,
    };
    match cli.command {
        Command::Generate(a) => generate_cmd(ctx, a),
        Command::Fit(a) => fit_cmd(&ctx, a),
        Command::Elicit(a) => elicit_cmd(&ctx, a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Adaptivity(a) => adaptivity_cmd(&ctx, a),
        Command::ComplexityDemo(a) => complexity_cmd(&ctx, a),
        Command::ReferenceExperiment(a) => reference_cmd(&ctx, a),
    }
}

fn preset_spec(name: &str, seed: u64) -> Result<GeneratorSpec, Failure> {
    match name {
        "reference" => Ok(reference_generator(seed)),
        "separating" => Ok(separating_generator(seed)),
        "complexity" => Ok(complexity_generator(seed)),
        other => Err(usage(format!(
            "unknown preset {other:?}; valid presets: reference, separating, complexity"
        ))),
    }
}

fn generate_cmd(mut ctx: Ctx, a: GenerateArgs) -> Result<(), Failure> {
    let mut spec = match (&a.spec, &a.preset) {
        (Some(path), _) => {
            require_input(path)?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<GeneratorSpec>(&text)
                .map_err(|e| usage(format!("invalid generator spec {}: {e}", path.display())))?
        }
        (None, Some(name)) => preset_spec(name, ctx.seed())?,
        (None, None) => return Err(usage("give --spec FILE or --preset NAME")),
    };
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    ctx.seed = Some(spec.seed);
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let test_fraction: f64 = ctx.settings.get(a.test_fraction, "test_fraction", 0.2)?;

    let mut ds = generate(&spec)?;
    if test_fraction > 0.0 {
        ds = split_by_task(&ds, test_fraction, spec.seed).map_err(|e| usage(e.to_string()))?;
    }
    let path = ctx.output(&a.output, "dataset.json")?;
    ds.save(&path).with_context(|| format!("writing {}", path.display()))?;
    write_json(&GenerationManifest::path_for(&path), &GenerationManifest::new(&spec, &ds)?)?;
    println!(
        "wrote {} users over {} tasks ({} criteria) to {}",
        ds.users.len(),
        ds.tasks.len(),
        ds.criteria.len(),
        path.display()
    );
    Ok(())
}

fn fit_cmd(ctx: &Ctx, a: FitArgs) -> Result<(), Failure> {
    let ds = load_dataset(&a.dataset)?;
    let train = if ds.split.is_some() { ds.train()? } else { ds.clone() };
    let s = &ctx.settings;
    let seed = ctx.seed();
    let kind: String = s.get(a.model.clone(), "model", "gmm".into())?;
    let (model, hyperparameters) = match kind.as_str() {
        "gmm" => {
            let mut c = GmmConfig::new(s.get(a.k, "k", 6)?, seed);
            if c.k == 0 {
                return Err(usage("K must be ≥ 1"));
            }
            c.alpha = s.get(a.alpha, "alpha", c.alpha)?;
            c.restarts = s.get(a.restarts, "restarts", c.restarts)?;
            let m = fit_gmm(&train, &c)?;
            (FittedModel::Gmm(m), serde_json::to_value(&c).context("recording hyperparameters")?)
        }
        "blr" => {
            let mut c = BlrConfig::new(seed);
            c.tau = s.get(a.tau, "tau", c.tau)?;
            c.sigma = s.get(a.sigma, "sigma", c.sigma)?;
            c.masks_per_profile = s.get(a.masks, "masks", c.masks_per_profile)?;
            c.max_mask_size = s.get(a.max_mask, "max_mask", c.max_mask_size)?;
            if !(c.tau > 0.0 && c.sigma > 0.0) {
                return Err(usage("tau and sigma must be > 0"));
            }
            let m = fit_blr(&train, &c)?;
            (FittedModel::Blr(m), serde_json::to_value(&c).context("recording hyperparameters")?)
        }
        other => return Err(usage(format!("unknown model kind {other:?}; valid kinds: gmm, blr"))),
    };
    let file = ModelFile::new(
        model,
        FitManifest {
            dataset_sha256: ds.content_hash()?,
            seed,
            hyperparameters,
        },
    );
    let path = ctx.output(&a.output, "model.json")?;
    file.save(&path).with_context(|| format!("writing {}", path.display()))?;
    println!("fitted {kind} on {} training users; wrote {}", train.users.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct ElicitReport {
    strategy: StrategyName,
    budget: usize,
    trials: usize,
    mean_pct_of_oracle: f64,
    std_pct_of_oracle: f64,
    trial_pct_of_oracle: Vec<f64>,
    first_trial: AlignmentReport,
}

fn elicit_cmd(ctx: &Ctx, a: ElicitArgs) -> Result<(), Failure> {
    let s = &ctx.settings;
    let strategy = parse_strategy(&s.get(a.strategy.clone(), "strategy", "infogain".to_string())?)?;
    let budget: usize = s.get(a.budget, "budget", 5)?;
    let trials: usize = s.get(a.trials, "trials", 20)?;
    let temperature: f64 = s.get(a.temperature, "temperature", 1.0)?;
    if trials == 0 {
        return Err(usage("trials must be ≥ 1"));
    }
    let file = load_model(&a.model_file)?;
    let ds = load_dataset(&a.dataset)?;
    let (train, test) = match ds.split {
        Some(_) => (ds.train()?, ds.test()?),
        None => (ds.clone(), ds.clone()),
    };
    let mut cfg = SessionConfig::new(budget, strategy, ctx.seed());
    cfg.temperature = temperature;
    if strategy == StrategyName::Static {
        cfg.static_order = population_average_policy(&train).care_rate_order();
    }

    if a.interactive {
        let task = match &a.task {
            Some(id) => ds.task(id).cloned().ok_or_else(|| usage(format!("unknown task {id:?}")))?,
            None => test.tasks.first().cloned().ok_or_else(|| usage("dataset has no tasks"))?,
        };
        let rec = run_interactive(&task, &ds.criteria, &file.model, &cfg, std::io::stdin().lock(), std::io::stdout())?;
        let path = ctx.run_dir()?.join("interactive.jsonl");
        write_jsonl(&path, std::slice::from_ref(&rec))?;
        println!("session written to {}", path.display());
        return Ok(());
    }

    let (tasks, users) = test_sessions(&test);
    let run = run_trials(&tasks, &users, &file.model, &cfg, trials, ctx.parallel)?;
    let (mean, std) = mean_std(&run.pcts);
    let dir = ctx.run_dir()?;
    write_jsonl(&dir.join("sessions.jsonl"), &run.records)?;
    write_timings(&dir.join("timings.csv"), &run.records)?;
    let report = ElicitReport {
        strategy,
        budget,
        trials,
        mean_pct_of_oracle: mean,
        std_pct_of_oracle: std,
        trial_pct_of_oracle: run.pcts,
        first_trial: alignment_report(&run.records),
    };
    write_json(&dir.join("report.json"), &report)?;
    println!(
        "{strategy} at T={budget}: pct_of_oracle {mean:.2} ± {std:.2} over {trials} trials ({} sessions)",
        run.records.len()
    );
    println!("outputs in {}", dir.display());
    Ok(())
}

fn print_ablation(result: &AblationResult, arms: &[Arm], budgets: &[usize]) {
    print!("{:<24}", "arm \\ T");
    for b in budgets {
        print!("{b:>8}");
    }
    println!();
    for arm in arms {
        print!("{:<24}", arm.label());
        for &b in budgets {
            match result.get(arm, b) {
                Some(r) => print!("{:>8.1}", r.mean_pct),
                None => print!("{:>8}", "-"),
            }
        }
        println!();
    }
    let adaptive = arms
        .iter()
        .find(|a| matches!(a, Arm::Full(s) if *s != StrategyName::Random && *s != StrategyName::Static));
    if let (Some(adaptive), Some(a5), Some(r6)) = (
        adaptive,
        adaptive.and_then(|a| result.get(a, 5)),
        result.get(&Arm::Full(StrategyName::Random), 6),
    ) {
        println!(
            "{} at T=5: {:.1} ± {:.1}; full-random at T=6: {:.1} ± {:.1}; difference {:+.1} points",
            adaptive.label(),
            a5.mean_pct,
            a5.std_pct,
            r6.mean_pct,
            r6.std_pct,
            a5.mean_pct - r6.mean_pct
        );
    }
}

fn ablation_config(ctx: &Ctx, k: Option<usize>, trials: Option<usize>, max_budget: Option<usize>) -> Result<AblationConfig, Failure> {
    let s = &ctx.settings;
    let mut cfg = AblationConfig::reference(ctx.seed());
    cfg.k = s.get(k, "k", cfg.k)?;
    cfg.trials = s.get(trials, "trials", cfg.trials)?;
    cfg.budgets = (0..=s.get(max_budget, "max_budget", 8usize)?).collect();
    cfg.parallelism = ctx.parallel;
    if cfg.k == 0 {
        return Err(usage("K must be ≥ 1"));
    }
    if cfg.trials == 0 {
        return Err(usage("trials must be ≥ 1"));
    }
    Ok(cfg)
}

fn ablate_cmd(ctx: &Ctx, a: AblateArgs) -> Result<(), Failure> {
    let mut cfg = ablation_config(ctx, a.k, a.trials, a.max_budget)?;
    if let Some(labels) = ctx.settings.opt(a.arms.clone(), "arms")? {
        cfg.arms = labels.iter().map(|l| parse_arm(l)).collect::<Result<_, _>>()?;
    }
    let result = match &a.dataset {
        Some(p) => run_ablation_on(&load_dataset(p)?, &cfg)?,
        None => run_ablation(&cfg)?,
    };
    let dir = ctx.run_dir()?;
    result.write_csv(&dir.join("ablation.csv"))?;
    write_json(&dir.join("ablation_config.json"), &cfg)?;
    println!(
        "{} train / {} test users, {} trials, %-of-Oracle:",
        result.train_users, result.test_users, cfg.trials
    );
    print_ablation(&result, &cfg.arms, &cfg.budgets);
    println!("outputs in {}", dir.display());
    Ok(())
}

fn write_adaptivity(dir: &Path, table: &[(StrategyName, AdaptivityReport)]) -> Result<(), Failure> {
    let path = dir.join("adaptivity.csv");
    let mut w = String::new();
    w.push_str("strategy,turn,differing,probes,adaptivity\n");
    for (s, r) in table {
        w.push_str(&format!("{s},all,{},{},{:.6}\n", r.differing_count, r.probe_count, r.adaptivity));
        for t in &r.per_turn {
            let frac = if t.probes > 0 { t.differing as f64 / t.probes as f64 } else { 0.0 };
            w.push_str(&format!("{s},{},{},{},{frac:.6}\n", t.turn, t.differing, t.probes));
        }
    }
    fs::write(&path, w).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_adaptivity(table: &[(StrategyName, AdaptivityReport)]) {
    println!("{:<18}{:>12}{:>12}", "strategy", "adaptivity", "probes");
    for (s, r) in table {
        println!("{:<18}{:>12.4}{:>12}", s.as_str(), r.adaptivity, r.probe_count);
    }
}

fn adaptivity_cmd(ctx: &Ctx, a: AdaptivityArgs) -> Result<(), Failure> {
    let s = &ctx.settings;
    let seed = ctx.seed();
    let budget: usize = s.get(a.budget, "budget", 5)?;
    if budget < 2 {
        return Err(usage("adaptivity needs a budget of at least 2"));
    }
    let names: Vec<String> = s.get(
        a.strategies.clone(),
        "strategies",
        StrategyName::VALID.iter().map(|n| n.to_string()).collect(),
    )?;
    let strategies = names.iter().map(|n| parse_strategy(n)).collect::<Result<Vec<_>, _>>()?;
    let independent = a.independent_branch_seeds || s.get(None, "independent_branch_seeds", false)?;
    let data = match &a.dataset {
        Some(p) => load_dataset(p)?,
        None => generate(&separating_generator(seed))?,
    };
    let prep = Prepared::from_dataset(&data, 0.2, seed)?;
    let model = match &a.model_file {
        Some(p) => load_model(p)?.model,
        None => {
            let k = s.get(a.k, "k", 2usize)?;
            if k == 0 {
                return Err(usage("K must be ≥ 1"));
            }
            FittedModel::Gmm(fit_gmm(&prep.train, &GmmConfig::new(k, seed))?)
        }
    };
    let table = adaptivity_table(&prep, &model, &strategies, budget, seed, independent)?;
    let dir = ctx.run_dir()?;
    write_adaptivity(dir, &table)?;
    println!("adaptivity at T={budget} over {} test users:", prep.test.users.len());
    print_adaptivity(&table);
    println!("outputs in {}", dir.display());
    Ok(())
}

fn print_complexity(result: &ComplexityResult) {
    for r in &result.rows {
        let learner = match (r.learner_queries, r.ratio) {
            (Some(q), Some(ratio)) => format!("learner matched after {q} queries (ratio {ratio:.2})"),
            _ => "learner never matched within the episode cap".to_string(),
        };
        println!(
            "T={}: belief {:.1}% using {} offline + {} online = {} queries; target {:.1}%; {learner}",
            r.budget,
            r.belief_pct,
            r.belief_offline_queries,
            r.belief_online_queries,
            r.belief_total_queries,
            r.target_pct
        );
    }
}

fn complexity_config(ctx: &Ctx, budgets: Option<Vec<usize>>, max_episodes: Option<usize>, learner_seeds: Option<usize>) -> Result<ComplexityConfig, Failure> {
    let s = &ctx.settings;
    let mut cfg = ComplexityConfig::reference(ctx.seed());
    cfg.budgets = s.get(budgets, "budgets", cfg.budgets)?;
    cfg.max_episodes = s.get(max_episodes, "max_episodes", cfg.max_episodes)?;
    cfg.learner_seeds = s.get(learner_seeds, "learner_seeds", cfg.learner_seeds)?;
    if cfg.budgets.is_empty() || cfg.budgets.iter().any(|&b| b == 0 || b > 4) {
        return Err(usage("complexity budgets must lie in 1..=4"));
    }
    Ok(cfg)
}

fn complexity_cmd(ctx: &Ctx, a: ComplexityArgs) -> Result<(), Failure> {
    let cfg = complexity_config(ctx, a.budgets, a.max_episodes, a.learner_seeds)?;
    let result = run_complexity(&cfg)?;
    let dir = ctx.run_dir()?;
    result.write_csv(&dir.join("complexity.csv"), &dir.join("learning_curves.csv"))?;
    print_complexity(&result);
    println!("outputs in {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    threshold: String,
    pass: bool,
}

fn reference_cmd(ctx: &Ctx, a: ReferenceArgs) -> Result<(), Failure> {
    let s = &ctx.settings;
    let dir = ctx.run_dir()?.to_path_buf();

    let cfg = ablation_config(ctx, None, a.trials, None)?;
    let ablation = run_ablation(&cfg)?;
    ablation.write_csv(&dir.join("ablation.csv"))?;
    println!("== ablation ({} trials)", cfg.trials);
    print_ablation(&ablation, &cfg.arms, &cfg.budgets);

    let budget: usize = s.get(None, "adaptivity_budget", 5)?;
    let seed = ctx.seed();
    let prep = Prepared::new(&generate(&separating_generator(seed))?, 0.2, seed)?;
    let model = FittedModel::Gmm(fit_gmm(&prep.train, &GmmConfig::new(2, seed))?);
    let table = adaptivity_table(&prep, &model, &[StrategyName::Static, StrategyName::Infogain], budget, seed, false)?;
    write_adaptivity(&dir, &table)?;
    println!("== adaptivity (T={budget}, two-type separating population)");
    print_adaptivity(&table);

    let ccfg = complexity_config(ctx, None, a.max_episodes, None)?;
    let complexity = run_complexity(&ccfg)?;
    complexity.write_csv(&dir.join("complexity.csv"), &dir.join("learning_curves.csv"))?;
    println!("== query complexity");
    print_complexity(&complexity);

    let pct = |arm: Arm, b: usize| ablation.get(&arm, b).map_or(f64::NAN, |r| r.mean_pct);
    let full5 = pct(Arm::Full(StrategyName::Infogain), 5);
    let nocorr_drift = (1..=8)
        .map(|b| (pct(Arm::NoCorrelation(StrategyName::Infogain), b) - pct(Arm::PopulationAverage, b)).abs())
        .fold(0.0, f64::max);
    let ig = |name| table.iter().find(|(s, _)| *s == name).map_or(f64::NAN, |(_, r)| r.adaptivity);
    let ratio = complexity
        .rows
        .iter()
        .find(|r| r.budget == 3)
        .and_then(|r| r.ratio)
        .unwrap_or(f64::NAN);
    let checks = vec![
        Check {
            name: "full-infogain minus nocorr-infogain at T=5",
            value: full5 - pct(Arm::NoCorrelation(StrategyName::Infogain), 5),
            threshold: ">= 15".into(),
            pass: full5 - pct(Arm::NoCorrelation(StrategyName::Infogain), 5) >= 15.0,
        },
        Check {
            name: "largest |nocorr-infogain minus population-average| over T=1..8",
            value: nocorr_drift,
            threshold: "<= 5".into(),
            pass: nocorr_drift <= 5.0,
        },
        Check {
            name: "full-infogain at T=5 minus full-random at T=6",
            value: full5 - pct(Arm::Full(StrategyName::Random), 6),
            threshold: ">= -2".into(),
            pass: full5 - pct(Arm::Full(StrategyName::Random), 6) >= -2.0,
        },
        Check {
            name: "static adaptivity",
            value: ig(StrategyName::Static),
            threshold: "== 0".into(),
            pass: ig(StrategyName::Static) == 0.0,
        },
        Check {
            name: "infogain adaptivity",
            value: ig(StrategyName::Infogain),
            threshold: ">= 0.30".into(),
            pass: ig(StrategyName::Infogain) >= 0.30,
        },
        Check {
            name: "learner / belief-model queries at T=3",
            value: ratio,
            threshold: ">= 10".into(),
            pass: ratio >= 10.0,
        },
    ];
    println!("== summary");
    for c in &checks {
        println!("{} {}: {:.3} (want {})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    write_json(&dir.join("summary.json"), &checks)?;
    println!("outputs in {}", dir.display());
    Ok(())
}
