use cvil_core::dataset::{generate_synthetic, Dataset, Instance, SyntheticSpec};
use cvil_core::simulator::{
    complexity_check, run_al_baseline, run_al_from, run_cvil_oracle, run_ivil_from, run_ivil_oracle,
    run_strategy, ExperimentLog, Scenario, SimConfig, SimError, StrategyKind,
};
use cvil_core::LabelStore;

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn two_blobs(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::blobs(2, per_class, 4, seed)).unwrap()
}

fn assert_monotone(log: &ExperimentLog) {
    for w in log.rounds.windows(2) {
        assert!(w[1].manual >= w[0].manual);
        assert!(w[1].batch >= w[0].batch);
        assert!(w[1].steps >= w[0].steps);
        assert!(w[1].visits >= w[0].visits);
    }
    for r in &log.rounds {
        assert!((0.0..=1.0).contains(&r.accuracy));
    }
    assert!(log.summary.manual + log.summary.batch <= log.summary.instances);
}

#[test]
fn strategies_are_deterministic_and_monotone() {
    let ds = two_blobs(40, 3);
    let cfg = SimConfig::with_seed(3);
    for kind in [StrategyKind::CvilOracle, StrategyKind::IvilOracle, StrategyKind::AlMinMargin] {
        let a = run_strategy(kind, &ds, &cfg).unwrap();
        let b = run_strategy(kind, &ds, &cfg).unwrap();
        assert_eq!(a, b, "{kind:?}");
        assert_monotone(&a);
        assert_eq!(a.summary.strategy, kind);
    }
}

#[test]
fn truthless_dataset_is_rejected() {
    let instances = (0..4)
        .map(|id| Instance {
            id,
            embedding: vec![id as f64, 0.0],
            image_path: None,
            truth_class: None,
        })
        .collect();
    let ds = Dataset::new(vec!["a".into(), "b".into()], instances).unwrap();
    let cfg = SimConfig::default();
    assert!(matches!(run_cvil_oracle(&ds, &cfg), Err(SimError::NoGroundTruth)));
    assert!(matches!(run_ivil_oracle(&ds, &cfg), Err(SimError::NoGroundTruth)));
    assert!(matches!(run_al_baseline(&ds, &cfg), Err(SimError::NoGroundTruth)));
}

#[test]
fn cvil_two_class_thousand_per_class_reaches_098() {
    let mut spec = SyntheticSpec::blobs(2, 1000, 8, 0);
    spec.class_separation = 2.0 * 1.644_853_626_951_472_2;
    let ds = generate_synthetic(&spec).unwrap();
    let log = run_cvil_oracle(&ds, &SimConfig::with_seed(0)).unwrap();
    assert!(log.summary.final_accuracy >= 0.98, "{:?}", log.summary);
    assert_monotone(&log);
}

#[test]
fn best_case_visits_each_class_once() {
    let r = complexity_check(Scenario::Best, 4, 25, &[0], &SimConfig::default()).unwrap();
    assert!(r.cvil_visits.iter().all(|&v| v == 4), "{r:?}");
    assert!(r.cvil_labeled.iter().all(|&l| l == 100));
    assert!(r.holds);
}

#[test]
fn worst_case_parity_and_cost_growth() {
    let (m, n_c) = (5, 20);
    let worst = complexity_check(Scenario::Worst, m, n_c, &SEEDS, &SimConfig::default()).unwrap();
    assert!((0.8..=1.25).contains(&worst.ratio), "{worst:?}");
    assert!(worst.holds);
    let best = complexity_check(Scenario::Best, m, n_c, &SEEDS, &SimConfig::default()).unwrap();
    assert!(
        worst.median_cvil_steps >= best.median_cvil_steps * m as f64 / 2.0,
        "worst {} best {}",
        worst.median_cvil_steps,
        best.median_cvil_steps
    );
}

#[test]
fn average_case_favours_cvil() {
    let r = complexity_check(Scenario::Average, 10, 20, &SEEDS, &SimConfig::default()).unwrap();
    assert!(r.median_cvil_steps < r.median_ivil_steps, "{r:?}");
    assert!(r.holds);
}

#[test]
fn ivil_on_a_single_cluster_inspects_everything() {
    let n = 40;
    let instances = (0..n)
        .map(|id| Instance {
            id,
            embedding: vec![1.0, 2.0, 3.0],
            image_path: None,
            truth_class: Some(id % 2),
        })
        .collect();
    let ds = Dataset::new(vec!["a".into(), "b".into()], instances).unwrap();
    let log = run_ivil_oracle(&ds, &SimConfig::default()).unwrap();
    assert_eq!(log.summary.manual + log.summary.batch, n);
    assert!(log.summary.steps >= n && log.summary.steps <= 2 * n, "{:?}", log.summary);
    assert_eq!(log.summary.final_accuracy, 1.0);
}

#[test]
fn ivil_with_nothing_left_takes_no_steps() {
    let ds = two_blobs(10, 1);
    let mut labels = LabelStore::new(ds.len(), 2);
    for id in ds.ids() {
        labels.label_instance(id, ds.truth(id).unwrap()).unwrap();
    }
    let log = run_ivil_from(&ds, &SimConfig::default(), Some(labels)).unwrap();
    assert_eq!(log.summary.steps, 0);
    assert_eq!(log.summary.final_accuracy, 1.0);
}

#[test]
fn al_on_separable_blobs_after_50_queries() {
    let ds = two_blobs(100, 5);
    let cfg = SimConfig {
        query_budget: Some(50),
        ..SimConfig::with_seed(5)
    };
    let log = run_al_baseline(&ds, &cfg).unwrap();
    assert_eq!(log.summary.manual, 52);
    assert!(log.summary.final_accuracy >= 0.95, "{:?}", log.summary);
}

#[test]
fn al_terminates_when_everything_is_labeled() {
    let ds = two_blobs(10, 2);
    let mut labels = LabelStore::new(ds.len(), 2);
    for id in ds.ids() {
        labels.label_instance(id, ds.truth(id).unwrap()).unwrap();
    }
    let log = run_al_from(&ds, &SimConfig::default(), Some(labels)).unwrap();
    assert_eq!(log.summary.steps, 0);
}

#[test]
fn al_retrain_schedule_only_changes_retrains() {
    let ds = two_blobs(30, 4);
    let base = SimConfig {
        query_budget: Some(20),
        ..SimConfig::with_seed(4)
    };
    let every = run_al_baseline(&ds, &SimConfig { retrain_every: 1, ..base.clone() }).unwrap();
    let tenth = run_al_baseline(&ds, &SimConfig { retrain_every: 10, ..base }).unwrap();
    assert_eq!(every.summary.manual, tenth.summary.manual);
    assert_eq!(
        every.rounds.last().unwrap().manual,
        tenth.rounds.last().unwrap().manual
    );
    assert!(every.summary.retrains > tenth.summary.retrains);
}

#[test]
fn experiment_log_files() {
    let ds = two_blobs(20, 0);
    let log = run_cvil_oracle(&ds, &SimConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    log.write_dir(dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("rounds.csv")).unwrap();
    assert!(csv.starts_with("round,manual,batch,steps,visits,accuracy"));
    assert_eq!(csv.lines().count(), log.rounds.len() + 1);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], log.summary.steps);
}
