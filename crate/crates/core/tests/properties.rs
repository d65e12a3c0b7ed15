use elicit_core::acquisition::select;
use elicit_core::baselines::{optimal_policy_value, sparse_reward_learner, LearnerConfig};
use elicit_core::belief::blr::discretize;
use elicit_core::belief::{fit_blr, fit_gmm, BeliefModel, BlrConfig, GmmConfig, GmmModel};
use elicit_core::engine::{run_session, simulate_passive_user};
use elicit_core::metrics::{judge_profile, measure_adaptivity};
use elicit_core::population::{apply_filters, generate, GeneratorSpec, IngestFilters};
use elicit_core::seed::rng_from;
use elicit_core::types::{
    CriterionId, History, Observation, PreferenceProfile, PreferenceValue, SessionConfig, StrategyName, TaskSpec,
    NUM_OUTCOMES,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn value() -> impl Strategy<Value = PreferenceValue> {
    prop_oneof![(1u8..=5).prop_map(PreferenceValue::Level), Just(PreferenceValue::NoPreference)]
}

fn strategies() -> Vec<StrategyName> {
    StrategyName::VALID.iter().map(|n| n.parse().unwrap()).collect()
}

fn ids(n: usize) -> Vec<CriterionId> {
    (0..n).map(|i| CriterionId::new(format!("c{i}"))).collect()
}

fn profile() -> impl Strategy<Value = PreferenceProfile> {
    prop::collection::btree_map(0usize..12, (value(), 0.0f64..5.0), 0..12).prop_map(|m| {
        let mut p = PreferenceProfile::new();
        for (i, (v, w)) in m {
            p.insert(CriterionId::new(format!("c{i}")), v, w);
        }
        p
    })
}

fn random_gmm(seed: u64, k: usize, c: usize) -> GmmModel {
    let mut rng = rng_from(seed);
    let mut dist = |n: usize| {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let prior = dist(k);
    let em = (0..k)
        .map(|_| (0..c).map(|_| <[f64; NUM_OUTCOMES]>::try_from(dist(NUM_OUTCOMES).as_slice()).unwrap()).collect())
        .collect();
    GmmModel::new(ids(c), prior, em).unwrap()
}

fn small_population(seed: u64) -> elicit_core::population::PopulationDataset {
    let mut spec = GeneratorSpec::new(3, 6, seed);
    spec.num_tasks = 3;
    spec.users_per_task = 30;
    spec.vocabulary_size = Some(8);
    spec.answer_noise = 0.1;
    generate(&spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profile_round_trips(p in profile()) {
        let text = serde_json::to_string(&p).unwrap();
        prop_assert_eq!(serde_json::from_str::<PreferenceProfile>(&text).unwrap(), p);
    }

    #[test]
    fn task_round_trips(n in 1usize..15, prompt in "[a-zA-Z ,.]{0,40}") {
        let task = TaskSpec::new("t", prompt, ids(n)).unwrap();
        let text = serde_json::to_string(&task).unwrap();
        prop_assert_eq!(serde_json::from_str::<TaskSpec>(&text).unwrap(), task);
    }

    #[test]
    fn history_round_trips_and_rejects_repeats(order in Just((0..10usize).collect::<Vec<_>>()).prop_shuffle(),
                                               len in 0usize..10,
                                               answers in prop::collection::vec(value(), 10)) {
        let mut h = History::new();
        for (&i, &v) in order[..len].iter().zip(&answers) {
            h.push(CriterionId::new(format!("c{i}")), v).unwrap();
        }
        let text = serde_json::to_string(&h).unwrap();
        prop_assert_eq!(&serde_json::from_str::<History>(&text).unwrap(), &h);
        if let Some(&i) = order[..len].first() {
            let repeat = CriterionId::new(format!("c{i}"));
            prop_assert!(h.push(repeat, PreferenceValue::Level(1)).is_err());
            let dup = format!(r#"[{{"criterion":"c{i}","answer":1}},{{"criterion":"c{i}","answer":2}}]"#);
            prop_assert!(serde_json::from_str::<History>(&dup).is_err());
        }
    }

    #[test]
    fn gmm_posterior_is_normalized_and_order_free(seed in any::<u64>(), k in 1usize..5, c in 2usize..9) {
        let model = random_gmm(seed, k, c);
        let mut rng = rng_from(seed ^ 1);
        let mut obs = Vec::new();
        for criterion in ids(c) {
            if rng.gen_bool(0.5) {
                let answer = PreferenceValue::from_outcome_index(rng.gen_range(0..NUM_OUTCOMES));
                obs.push(Observation { criterion, answer });
            }
        }
        let a = model.observe_all(&History::try_from(obs.clone()).unwrap()).unwrap();
        obs.shuffle(&mut rng);
        let b = model.observe_all(&History::try_from(obs).unwrap()).unwrap();
        prop_assert!((a.posterior.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for (x, y) in a.posterior.iter().zip(&b.posterior) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn gmm_information_gain_is_bounded_by_type_entropy(seed in any::<u64>(), k in 1usize..5, c in 2usize..9) {
        let model = random_gmm(seed, k, c);
        let mut rng = rng_from(seed ^ 2);
        let mut state = model.init();
        let vocab = ids(c);
        let asked = rng.gen_range(0..c);
        for id in &vocab[..asked] {
            let obs = Observation { criterion: id.clone(), answer: PreferenceValue::Level(rng.gen_range(1..=5)) };
            state = model.observe(&state, &obs).unwrap();
        }
        let h: f64 = state.posterior.iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
        let before = state.clone();
        let ig = model.information_gain(&state, &vocab[asked..]).unwrap();
        prop_assert_eq!(&before, &state);
        prop_assert_eq!(&ig, &model.information_gain(&state, &vocab[asked..]).unwrap());
        for g in ig {
            prop_assert!((0.0..=h + 1e-9).contains(&g));
        }
    }

    #[test]
    fn gmm_map_type_ignores_joint_rescaling(seed in any::<u64>(), k in 2usize..5, c in 2usize..9, scale in 0.01f64..100.0) {
        let model = random_gmm(seed, k, c);
        let mut rng = rng_from(seed ^ 3);
        let mut post = model.prior().to_vec();
        let mut scaled = post.iter().map(|p| p * scale).collect::<Vec<_>>();
        for id in &ids(c) {
            if !rng.gen_bool(0.6) {
                continue;
            }
            let v = PreferenceValue::from_outcome_index(rng.gen_range(0..NUM_OUTCOMES));
            post = model.update_posterior(&post, id, v).unwrap();
            scaled = model.update_posterior(&scaled, id, v).unwrap();
        }
        let argmax = |p: &[f64]| (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        prop_assert_eq!(argmax(&post), argmax(&scaled));
    }

    #[test]
    fn discretized_predictive_sums_to_one(care in 0.0f64..=1.0, mean in -4.0f64..4.0, var in 1e-8f64..10.0) {
        let p = discretize(care, mean, var);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn judge_is_scale_and_relabel_invariant(truth in profile(), predicted in profile(),
                                            lambda in prop_oneof![Just(0.1), Just(1.0), Just(7.0), 0.01f64..50.0],
                                            shift in 1usize..12) {
        let base = judge_profile(&predicted, &truth);
        prop_assert!((0.0..=5.0).contains(&base.score));

        let mut scaled = PreferenceProfile::new();
        for (c, e) in truth.iter() {
            scaled.insert(c.clone(), e.value, e.weight * lambda);
        }
        prop_assert!((judge_profile(&predicted, &scaled).score - base.score).abs() <= 1e-12);

        let relabel = |p: &PreferenceProfile| {
            let mut out = PreferenceProfile::new();
            for (c, e) in p.iter() {
                let i: usize = c.as_str()[1..].parse().unwrap();
                out.insert(CriterionId::new(format!("r{}", (i + shift) % 12)), e.value, e.weight);
            }
            out
        };
        prop_assert!((judge_profile(&relabel(&predicted), &relabel(&truth)).score - base.score).abs() <= 1e-12);
    }

    #[test]
    fn ingest_filters_are_idempotent(seed in any::<u64>(), pct in 5.0f64..80.0, min_users in 0usize..6) {
        let mut spec = GeneratorSpec::new(3, 4, seed);
        spec.num_tasks = 6;
        spec.users_per_task = 8;
        spec.vocabulary_size = Some(10);
        let filters = IngestFilters { max_task_share_pct: Some(pct), min_users_exclusive: Some(min_users) };
        let (once, _) = apply_filters(generate(&spec).unwrap(), &filters);
        let (twice, report) = apply_filters(once.clone(), &filters);
        prop_assert_eq!(twice, once);
        prop_assert!(report.is_noop());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn blr_variance_never_below_noise(seed in any::<u64>(), sigma in 0.1f64..1.5, tau in 0.2f64..3.0) {
        let data = small_population(seed);
        let mut config = BlrConfig::new(seed);
        config.masks_per_profile = 3;
        config.sigma = sigma;
        config.tau = tau;
        let model = fit_blr(&data, &config).unwrap();
        let mut rng = rng_from(seed);
        for _ in 0..10 {
            let mut h = History::new();
            for c in model.vocabulary() {
                if rng.gen_bool(0.4) {
                    h.push(c.clone(), PreferenceValue::from_outcome_index(rng.gen_range(0..NUM_OUTCOMES))).unwrap();
                }
            }
            for c in model.vocabulary().iter().filter(|c| !h.contains(c)) {
                let p = model.predictive(&h, c).unwrap();
                prop_assert!(p.gaussian.unwrap().variance >= sigma * sigma);
                prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn blr_uncertainty_choice_survives_monotone_transforms(seed in any::<u64>()) {
        let data = small_population(seed);
        let mut config = BlrConfig::new(seed);
        config.masks_per_profile = 3;
        let model = fit_blr(&data, &config).unwrap();
        let state = History::new();
        let remaining = model.vocabulary().to_vec();
        let cfg = SessionConfig::new(3, StrategyName::Uncertainty, seed);
        let chosen = select(&model, &state, &remaining, &cfg, &mut rng_from(seed)).unwrap();
        let scores: Vec<f64> = remaining.iter().map(|c| model.uncertainty(&state, c, false).unwrap()).collect();
        for f in [|x: f64| x.ln(), |x: f64| x.powi(3), |x: f64| 2.0 * x + 1.0] {
            let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
            let best = (0..t.len()).fold(0, |b, i| if t[i] > t[b] { i } else { b });
            prop_assert_eq!(&remaining[best], &chosen.criterion);
        }
    }

    #[test]
    fn sessions_copy_answers_and_never_repeat(seed in any::<u64>(), budget in 0usize..10,
                                              strategy in prop::sample::select(strategies())) {
        let data = small_population(seed);
        let model = fit_gmm(&data, &GmmConfig::new(3, seed)).unwrap();
        let task = &data.tasks[0];
        let truth = &data.users[0].profile;
        let mut cfg = SessionConfig::new(budget, strategy, seed);
        cfg.static_order = task.criteria().to_vec();
        let rec = run_session(task, &model, &mut simulate_passive_user(truth), &cfg).unwrap();
        prop_assert_eq!(rec.history.len(), budget.min(task.criteria().len()));
        let mut seen = std::collections::BTreeSet::new();
        for o in rec.history.iter() {
            prop_assert!(seen.insert(o.criterion.clone()));
            if o.answer.is_level() {
                prop_assert_eq!(rec.predicted.value(&o.criterion), Some(o.answer));
            }
        }
    }

    #[test]
    fn full_budget_prediction_is_strategy_independent(seed in any::<u64>()) {
        let data = small_population(seed);
        let model = fit_gmm(&data, &GmmConfig::new(3, seed)).unwrap();
        let task = &data.tasks[1];
        let truth = &data.users.iter().find(|u| u.task_id == task.task_id()).unwrap().profile;
        let full = task.criteria().len();
        let predict = |s: StrategyName| {
            let cfg = SessionConfig::new(full, s, seed).with_static_order(task.criteria().to_vec());
            run_session(task, &model, &mut simulate_passive_user(truth), &cfg).unwrap().predicted
        };
        let reference = predict(StrategyName::Infogain);
        for s in strategies() {
            prop_assert_eq!(&predict(s), &reference);
        }
    }

    #[test]
    fn answer_independent_orders_have_zero_adaptivity(seed in any::<u64>(), budget in 2usize..6) {
        let data = small_population(seed);
        let model = fit_gmm(&data, &GmmConfig::new(3, seed)).unwrap();
        let task = &data.tasks[0];
        let users: Vec<PreferenceProfile> = data.users_of(task.task_id()).map(|(_, u)| u.profile.clone()).collect();
        let mut order = task.criteria().to_vec();
        order.shuffle(&mut rng_from(seed));
        let cfg = SessionConfig::new(budget, StrategyName::Static, seed).with_static_order(order);
        let report = measure_adaptivity(task, &model, &users, &cfg, false).unwrap();
        prop_assert_eq!(report.differing_count, 0);
        prop_assert_eq!(report.adaptivity, 0.0);
        let random = SessionConfig::new(budget, StrategyName::Random, seed);
        prop_assert_eq!(measure_adaptivity(task, &model, &users, &random, false).unwrap().adaptivity, 0.0);
    }

    #[test]
    fn learner_never_beats_the_exhaustive_optimum(seed in any::<u64>(), c in 2usize..5, budget in 1usize..3) {
        let mut spec = GeneratorSpec::new(2, c, seed);
        spec.num_tasks = 1;
        spec.users_per_task = 20;
        spec.answer_noise = 0.2;
        let data = generate(&spec).unwrap();
        let task = &data.tasks[0];
        let users: Vec<PreferenceProfile> = data.users.iter().map(|u| u.profile.clone()).collect();
        let oracle: f64 = users.iter().map(|u| judge_profile(u, u).score).sum::<f64>() / users.len() as f64;
        prop_assume!(oracle > 0.0);
        let budget = budget.min(c);
        let best = 100.0 * (optimal_policy_value(task, &users, budget) / oracle);
        let config = LearnerConfig {
            budget,
            episodes: 400,
            learning_rate: 0.5,
            eval_every: 20,
            target_pct: None,
            seed,
        };
        let run = sparse_reward_learner(task, &users, &users, &config).unwrap();
        for p in &run.curve {
            prop_assert!(p.mean_alignment <= best + 1e-9, "{} > {best}", p.mean_alignment);
            prop_assert!(p.greedy_alignment <= best + 1e-9, "{} > {best}", p.greedy_alignment);
        }
    }
}
