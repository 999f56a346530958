//! Headless acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::io::BufReader;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cvil_core::analytics::{kde_values, project, ProjectionMethod};
use cvil_core::classifier::{ClassifierModel, Optimizer, ProbMatrix, Sample, TrainConfig};
use cvil_core::dataset::{generate_synthetic, Dataset, Instance, SyntheticSpec};
use cvil_core::measures::{self, MeasureContext, MeasureKind, DEFAULT_K};
use cvil_core::simulator::{
    complexity_check, median, run_cvil_oracle, run_ivil_oracle, Scenario, SimConfig,
};
use cvil_core::workflow::{self, Action, LabelStatus, LabelStore, Session};

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_dataset(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> Dataset {
    let instances = (0..n)
        .map(|id| Instance {
            id,
            embedding: (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect(),
            image_path: None,
            truth_class: Some(rng.random_range(0..classes)),
        })
        .collect();
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    Dataset::new(names, instances).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> ProbMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    ProbMatrix::from_rows(&rows)
}

fn gradient_correctness() -> Outcome {
    let mut worst = 0.0_f64;
    for seed in 0..6u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(3..=8);
        let m = rng.random_range(2..=4);
        let mut model = ClassifierModel::new(d, m, seed).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let batch: Vec<Sample> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                x,
                target: i % m,
                weight: if i % 2 == 0 { 1.0 } else { 0.1 },
            })
            .collect();
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let h = 1e-6;
        for p in 0..model.param_count() {
            let orig = model.params()[p];
            model.params_mut()[p] = orig + h;
            let (up, _) = model.loss_and_grad(&batch).unwrap();
            model.params_mut()[p] = orig - h;
            let (down, _) = model.loss_and_grad(&batch).unwrap();
            model.params_mut()[p] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[p] - numeric).abs() / grad[p].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    check(worst < 1e-4, format!("max relative error {worst:.2e} (< 1e-4)"))
}

fn sample_weight_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = ClassifierModel::new(6, 3, 7).unwrap();
    let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let grad_at = |w: f64| {
        model
            .loss_and_grad(&[Sample { x: &x, target: 1, weight: w }])
            .unwrap()
            .1
    };
    let full = grad_at(1.0);
    let tenth = grad_at(0.1);
    let dev = full
        .iter()
        .zip(&tenth)
        .map(|(a, b)| (0.1 * a - b).abs())
        .fold(0.0, f64::max);

    let zero_grad = grad_at(0.0);
    let mut stepped = model.clone();
    let cfg = TrainConfig {
        epochs: 5,
        optimizer: Optimizer::Sgd,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let other: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
    // only the weight-0 sample: nothing to train on
    let rejected = stepped
        .fit(&[Sample { x: &x, target: 1, weight: 0.0 }], &cfg, &mut |_, _| {
            std::ops::ControlFlow::Continue(())
        })
        .is_err();
    let untouched_alone = stepped.params() == model.params();
    // with and without an extra weight-0 sample the result is identical
    let mut a = model.clone();
    let mut b = model.clone();
    let noop = &mut |_: usize, _: f64| std::ops::ControlFlow::Continue(());
    a.fit(&[Sample { x: &other, target: 0, weight: 1.0 }], &cfg, noop).unwrap();
    b.fit(
        &[
            Sample { x: &other, target: 0, weight: 1.0 },
            Sample { x: &x, target: 2, weight: 0.0 },
        ],
        &cfg,
        noop,
    )
    .unwrap();
    let ok = dev <= 1e-10
        && zero_grad.iter().all(|&g| g == 0.0)
        && rejected
        && untouched_alone
        && a.params() == b.params();
    check(
        ok,
        format!(
            "max |0.1*g(1) - g(0.1)| = {dev:.1e}; weight-0 gradient zero: {}; weight-0 sample ignored: {}",
            zero_grad.iter().all(|&g| g == 0.0),
            rejected && untouched_alone && a.params() == b.params()
        ),
    )
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_row = 0.0_f64;
    for seed in 0..5u64 {
        let ds = random_dataset(&mut rng, 100, 5, 4);
        let mut model = ClassifierModel::new(5, 4, seed).unwrap();
        // blow up the weights so some logits are large
        for p in model.params_mut() {
            *p *= 40.0;
        }
        let probs = model.predict_all(&ds);
        for (_, row) in probs.rows() {
            worst_row = worst_row.max((row.iter().sum::<f64>() - 1.0).abs());
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
    let mut integrals = Vec::new();
    for i in 0..20 {
        let n = rng.random_range(2..300);
        let values: Vec<f64> = (0..n)
            .map(|_| match i % 4 {
                0 => rng.random::<f64>(),
                1 => -rng.random::<f64>().ln() * 5.0,
                2 => {
                    if rng.random_bool(0.3) {
                        0.0
                    } else {
                        rng.random_range(0.5..0.6)
                    }
                }
                _ => rng.random::<f64>().powi(8),
            })
            .collect();
        integrals.push(kde_values(&values, None).unwrap().integral());
    }
    let (lo, hi) = integrals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    check(
        worst_row <= 1e-6 && lo >= 0.98 && hi <= 1.02,
        format!("max |row sum - 1| = {worst_row:.1e}; KDE integrals in [{lo:.4}, {hi:.4}]"),
    )
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn measure_oracles() -> Outcome {
    let n = 200;
    let classes = 4;
    let mut worst: Vec<(MeasureKind, f64)> = MeasureKind::ALL.iter().map(|&k| (k, 0.0)).collect();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let ds = random_dataset(&mut rng, n, 6, classes);
        let probs = random_probs(&mut rng, n, classes);
        let mut labels = LabelStore::new(n, classes);
        for id in 0..n {
            match rng.random_range(0..4) {
                0 => labels.label_instance(id, rng.random_range(0..classes)).unwrap(),
                1 => {
                    labels.label_batch(&[id], rng.random_range(0..classes)).unwrap();
                }
                _ => {}
            }
        }
        let ids: Vec<usize> = (0..n).collect();
        let focus = 1;
        let predicted: Vec<usize> = (0..n)
            .map(|id| {
                let row = probs.row(id).unwrap();
                (0..classes).fold(0, |b, c| if row[c] > row[b] { c } else { b })
            })
            .collect();

        for slot in worst.iter_mut() {
            let kind = slot.0;
            let ctx = MeasureContext {
                dataset: &ds,
                labels: &labels,
                probs: &probs,
                k: DEFAULT_K,
            };
            let got = measures::compute(kind, focus, &ids, ctx).unwrap();
            for &id in &ids {
                let x = ds.embedding(id);
                let expected = match kind {
                    MeasureKind::MinMargin => {
                        let mut row = probs.row(id).unwrap().to_vec();
                        row.sort_by(|a, b| b.total_cmp(a));
                        1.0 - (row[0] - row[1])
                    }
                    MeasureKind::Eccentricity => {
                        let members: Vec<usize> = (0..n)
                            .filter(|&j| labels.status(j).class() == Some(focus))
                            .collect();
                        let centroid: Vec<f64> = (0..ds.dim())
                            .map(|k| {
                                members.iter().map(|&j| ds.embedding(j)[k]).sum::<f64>()
                                    / members.len() as f64
                            })
                            .collect();
                        euclid(x, &centroid)
                    }
                    MeasureKind::Density => {
                        let mut d: Vec<f64> = (0..n)
                            .filter(|&j| j != id)
                            .map(|j| euclid(x, ds.embedding(j)))
                            .collect();
                        d.sort_by(f64::total_cmp);
                        d[..DEFAULT_K].iter().sum::<f64>() / DEFAULT_K as f64
                    }
                    MeasureKind::Border => {
                        let nearest = |same: bool| {
                            (0..n)
                                .filter(|&j| j != id && (predicted[j] == predicted[id]) == same)
                                .map(|j| euclid(x, ds.embedding(j)))
                                .fold(f64::INFINITY, f64::min)
                        };
                        let (s, o) = (nearest(true), nearest(false));
                        s / (s + o)
                    }
                    MeasureKind::Coverage => (0..n)
                        .filter(|&j| labels.status(j).is_labeled())
                        .map(|j| euclid(x, ds.embedding(j)))
                        .fold(f64::INFINITY, f64::min),
                    MeasureKind::Disagreement => {
                        let mut order: Vec<usize> = (0..n).filter(|&j| j != id).collect();
                        order.sort_by(|&a, &b| {
                            euclid(x, ds.embedding(a)).total_cmp(&euclid(x, ds.embedding(b)))
                        });
                        let mut counts = [0.0; 4];
                        for &j in &order[..DEFAULT_K] {
                            counts[predicted[j]] += 1.0;
                        }
                        let h: f64 = counts
                            .iter()
                            .filter(|&&c| c > 0.0)
                            .map(|&c| {
                                let p = c / DEFAULT_K as f64;
                                -p * p.ln()
                            })
                            .sum();
                        h / (classes as f64).ln()
                    }
                };
                slot.1 = slot.1.max((got.values[&id] - expected).abs());
            }
        }
    }
    let ok = worst.iter().all(|(_, e)| *e <= 1e-9);
    let detail = worst
        .iter()
        .map(|(k, e)| format!("{}={e:.1e}", k.as_str()))
        .collect::<Vec<_>>()
        .join(" ");
    check(ok, format!("max abs error {detail}"))
}

fn loo_purity(coords: &[[f64; 2]], truth: &[usize], k: usize) -> f64 {
    let n = coords.len();
    let mut hits = 0usize;
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let dx = coords[i][0] - coords[j][0];
                let dy = coords[i][1] - coords[j][1];
                (dx * dx + dy * dy, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        hits += d[..k].iter().filter(|(_, j)| truth[*j] == truth[i]).count();
    }
    hits as f64 / (n * k) as f64
}

fn projection_quality() -> Outcome {
    let mut passing = 0;
    let mut purities = Vec::new();
    let mut deterministic = true;
    for seed in 0..10u64 {
        let ds = generate_synthetic(&SyntheticSpec::blobs(3, 50, 10, seed)).unwrap();
        let ids: Vec<usize> = ds.ids().collect();
        let p = project(&ids, &ds, ProjectionMethod::Tsne, seed).unwrap();
        if seed == 0 {
            deterministic = p == project(&ids, &ds, ProjectionMethod::Tsne, seed).unwrap();
        }
        let coords: Vec<[f64; 2]> = ids.iter().map(|id| p.coords[id]).collect();
        let truth: Vec<usize> = ids.iter().map(|&id| ds.truth(id).unwrap()).collect();
        let purity = loo_purity(&coords, &truth, 5);
        if purity >= 0.95 {
            passing += 1;
        }
        purities.push(purity);
    }
    check(
        passing >= 8 && deterministic,
        format!(
            "{passing}/10 seeds with 5-NN purity >= 0.95 (min {:.3}); deterministic: {deterministic}",
            purities.iter().cloned().fold(f64::INFINITY, f64::min)
        ),
    )
}

fn best_case_complexity() -> Outcome {
    let seeds: Vec<u64> = (0..10).collect();
    let (m, n_c) = (5usize, 20usize);
    let r = complexity_check(Scenario::Best, m, n_c, &seeds, &SimConfig::default()).unwrap();
    let lo = m * n_c;
    let hi = (1.2 * (m * n_c) as f64) as usize + m;
    let ok = r.cvil_visits.iter().all(|&v| v == m)
        && r.cvil_batch_actions.iter().all(|&b| b == m)
        && r.cvil_labeled.iter().all(|&l| l == m * n_c)
        && r.cvil_steps.iter().all(|&s| (lo..=hi).contains(&s));
    check(
        ok,
        format!(
            "visits {:?}, batch actions {:?}, labeled {:?}, steps {:?} within [{lo}, {hi}]",
            r.cvil_visits, r.cvil_batch_actions, r.cvil_labeled, r.cvil_steps
        ),
    )
}

/// Separation of two unit-variance blobs whose Bayes error is 5%:
/// `2 * z` with `z` the 95th percentile of the standard normal.
const FIVE_PERCENT_OVERLAP_SEPARATION: f64 = 2.0 * 1.644_853_626_951_472_2;

fn efficiency_ordering() -> Outcome {
    let mut cvil = Vec::new();
    let mut ivil = Vec::new();
    for seed in 0..10u64 {
        let mut spec = SyntheticSpec::blobs(2, 1000, 8, seed);
        spec.class_separation = FIVE_PERCENT_OVERLAP_SEPARATION;
        let ds = generate_synthetic(&spec).unwrap();
        let cfg = SimConfig::with_seed(seed);
        let reach = |log: cvil_core::simulator::ExperimentLog| {
            log.steps_to_accuracy(0.98).map_or(f64::INFINITY, |s| s as f64)
        };
        cvil.push(reach(run_cvil_oracle(&ds, &cfg).unwrap()));
        ivil.push(reach(run_ivil_oracle(&ds, &cfg).unwrap()));
    }
    let (c, i) = (median(&cvil), median(&ivil));
    check(
        c.is_finite() && c < i,
        format!("median steps to accuracy 0.98: cVIL {c} vs iVIL {i}"),
    )
}

fn random_action(rng: &mut ChaCha8Rng, n: usize, m: usize, session: &Session) -> Action {
    let ids = |rng: &mut ChaCha8Rng| -> Vec<usize> {
        let len = rng.random_range(0..8);
        (0..len).map(|_| rng.random_range(0..n + 2)).collect()
    };
    match rng.random_range(0..10) {
        0 | 1 => Action::LabelBatch { ids: ids(rng), class: rng.random_range(0..m + 1) },
        2 | 3 => Action::LabelInstance { id: rng.random_range(0..n), class: rng.random_range(0..m) },
        4 => Action::Select { ids: ids(rng) },
        5 => {
            let mut sel = session.state.selection.clone();
            sel.shuffle(rng);
            sel.truncate(2);
            Action::Exclude { ids: sel }
        }
        6 => Action::SetFocus { class: rng.random_range(0..m) },
        7 => Action::SetCutoff { k: rng.random_range(0..m + 2) },
        8 => Action::BeginGuidance,
        _ => Action::EnterResidual,
    }
}

fn bookkeeping() -> Outcome {
    let (n, m) = (300usize, 4usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = random_dataset(&mut rng, n, 3, m);
    let probs = random_probs(&mut rng, n, m);
    let mut session = Session::new(n, m, 11);
    let mut applied = 0;
    for _ in 0..1000 {
        let action = random_action(&mut rng, n, m, &session);
        if session.apply(action).is_ok() {
            applied += 1;
        }
        let stats = measures::class_stats(&session.labels, &probs);
        let total: usize = stats
            .iter()
            .map(|s| s.predicted_unlabeled + s.batch_labeled + s.manually_labeled)
            .sum();
        if total != n {
            return Err(format!("partition broken: {total} != {n}"));
        }
    }
    let replayed = Session::replay(n, m, 11, session.log()).unwrap();
    let mut buf = Vec::new();
    session.write_log(&mut buf).unwrap();
    let parsed = workflow::read_log(BufReader::new(buf.as_slice())).unwrap();
    let reread = Session::replay(n, m, 11, &parsed).unwrap();

    let mut csv = Vec::new();
    workflow::write_labels(&mut csv, &session.labels, &ds, Some(&probs)).unwrap();
    let imported = workflow::read_labels(csv.as_slice(), &ds).unwrap();
    let round_trip = imported.statuses() == session.labels.statuses();
    let labeled = session
        .labels
        .statuses()
        .iter()
        .filter(|s| !matches!(s, LabelStatus::Unlabeled))
        .count();
    check(
        replayed == session && reread == session && round_trip,
        format!(
            "{applied}/1000 actions accepted, {labeled} labeled; replay identical: {}; export/import identical: {round_trip}",
            replayed == session && reread == session
        ),
    )
}

fn bootstrap_sampling() -> Outcome {
    let mut good = 0;
    for seed in 0..10u64 {
        let ds = generate_synthetic(&SyntheticSpec::blobs(8, 40, 8, seed)).unwrap();
        let picks = workflow::bootstrap_sample(&ds, 8, seed, &BTreeSet::new()).unwrap();
        let blobs: BTreeSet<usize> = picks.iter().map(|&id| ds.truth(id).unwrap()).collect();
        if picks.len() == 8 && blobs.len() == 8 {
            good += 1;
        }
    }
    check(good == 10, format!("{good}/10 seeds with one sample per blob"))
}

fn usage_scenario() -> Outcome {
    let ds = generate_synthetic(&SyntheticSpec::blobs(20, 50, 32, 1)).unwrap();
    let log = run_cvil_oracle(&ds, &SimConfig::with_seed(1)).unwrap();
    let bootstrap = log.rounds.iter().find(|r| r.round == 0).map(|r| r.accuracy);
    let first = log.rounds.iter().find(|r| r.round == 1).map(|r| r.accuracy);
    let batch = log.summary.batch_accuracy;
    let ok = matches!((bootstrap, first), (Some(b), Some(f)) if b < f)
        && batch.is_some_and(|b| b >= 0.95);
    check(
        ok,
        format!(
            "accuracy after bootstrap {bootstrap:?}, after round 1 {first:?}; batch-label accuracy {batch:?}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("gradient correctness", gradient_correctness, Duration::from_secs(5)),
        ("sample-weight contract", sample_weight_contract, Duration::from_secs(1)),
        ("softmax/KDE normalization", normalization, Duration::from_secs(5)),
        ("measure oracle equivalence", measure_oracles, Duration::from_secs(10)),
        ("projection quality", projection_quality, Duration::from_secs(60)),
        ("best-case complexity", best_case_complexity, Duration::from_secs(60)),
        ("efficiency ordering", efficiency_ordering, Duration::from_secs(600)),
        ("bookkeeping invariants", bookkeeping, Duration::from_secs(10)),
        ("bootstrap sampling", bootstrap_sampling, Duration::from_secs(10)),
        ("usage-scenario shape", usage_scenario, Duration::from_secs(300)),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| *f == n.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let in_time = took <= *budget;
        let (status, detail) = match (&outcome, in_time) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over budget {budget:?}")),
            (Err(d), _) => ("FAIL", d.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {n:>2} {status} {name}: {detail} [{:.2}s]", took.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
