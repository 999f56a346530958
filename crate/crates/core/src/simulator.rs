//! Headless oracle annotators for comparing labeling strategies.
//!
//! Every strategy drives a [`Session`] with ground-truth knowledge and is
//! charged interaction steps:
//!
//! * one step per inspected instance,
//! * one step per class visit and one per batch action,
//! * an individual label costs the rank of the true class in the model's
//!   predicted ordering, skipping classes the oracle already ruled out for
//!   that instance. The inspection is part of that cost.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{self, AnalyticsError, ProjectionMethod};
use crate::classifier::{ClassifierError, ClassifierModel, ProbMatrix, TrainConfig};
use crate::dataset::{generate_synthetic, Dataset, DatasetError, SyntheticSpec};
use crate::kmeans;
use crate::measures::{class_stats, min_margin};
use crate::workflow::{
    bootstrap_sample, evaluate_accuracy, focus_subset, guidance_order, Direction, LabelStore,
    Session, WorkflowError,
};
use crate::{ClassId, InstanceId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dataset has no ground truth")]
    NoGroundTruth,
    #[error("invalid simulation parameters: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    CvilOracle,
    IvilOracle,
    AlMinMargin,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::CvilOracle => "cvil",
            StrategyKind::IvilOracle => "ivil",
            StrategyKind::AlMinMargin => "al",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cvil" | "cvil_oracle" => Ok(StrategyKind::CvilOracle),
            "ivil" | "ivil_oracle" => Ok(StrategyKind::IvilOracle),
            "al" | "al_min_margin" => Ok(StrategyKind::AlMinMargin),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub train: TrainConfig,
    /// Consecutive oracle errors that end a class scan.
    pub error_run: usize,
    /// Drag errors found during a class scan to their true class right away
    /// instead of leaving them for the residual phase.
    pub relabel_errors: bool,
    /// Guidance rounds before the residual phase at the latest.
    pub max_rounds: usize,
    /// Residual labels between retrains.
    pub residual_chunk: usize,
    pub direction: Direction,
    pub projection: ProjectionMethod,
    /// Active-learning queries between retrains.
    pub retrain_every: usize,
    /// Active-learning query budget; `None` labels everything.
    pub query_budget: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: TrainConfig::default(),
            error_run: 3,
            relabel_errors: true,
            max_rounds: 20,
            residual_chunk: 50,
            direction: Direction::Descending,
            projection: ProjectionMethod::Pca,
            retrain_every: 10,
            query_budget: None,
        }
    }
}

impl SimConfig {
    pub fn with_seed(seed: u64) -> Self {
        let mut cfg = Self {
            seed,
            ..Self::default()
        };
        cfg.train.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub manual: usize,
    pub batch: usize,
    pub steps: usize,
    pub visits: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub instances: usize,
    pub classes: usize,
    pub manual: usize,
    pub batch: usize,
    pub steps: usize,
    pub visits: usize,
    pub batch_actions: usize,
    pub retrains: usize,
    pub bootstrap_steps: usize,
    pub final_accuracy: f64,
    pub manual_accuracy: Option<f64>,
    pub batch_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub rounds: Vec<RoundRecord>,
    pub summary: Summary,
}

impl ExperimentLog {
    /// Cumulative steps at the first record with accuracy ≥ `target`.
    pub fn steps_to_accuracy(&self, target: f64) -> Option<usize> {
        self.rounds.iter().find(|r| r.accuracy >= target).map(|r| r.steps)
    }

    pub fn write_rounds_csv(&self, out: impl io::Write) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rounds {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `rounds.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), SimError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_rounds_csv(std::fs::File::create(dir.join("rounds.csv"))?)?;
        let file = std::fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(file, &self.summary)?;
        Ok(())
    }
}

/// Rank (1-based) of `truth` in `row` by descending probability among the
/// classes not in `ruled_out`; ties by class index.
pub fn individual_cost(row: &[f64], truth: ClassId, ruled_out: &[ClassId]) -> usize {
    let pt = row[truth];
    1 + row
        .iter()
        .enumerate()
        .filter(|&(c, &p)| c != truth && !ruled_out.contains(&c) && (p > pt || (p == pt && c < truth)))
        .count()
}

/// Shared bookkeeping of one simulated run.
struct Run<'a> {
    ds: &'a Dataset,
    cfg: &'a SimConfig,
    strategy: StrategyKind,
    session: Session,
    model: ClassifierModel,
    probs: ProbMatrix,
    steps: usize,
    visits: usize,
    batch_actions: usize,
    retrains: usize,
    bootstrap_steps: usize,
    /// Classes the oracle has ruled out per instance.
    ruled_out: BTreeMap<InstanceId, Vec<ClassId>>,
    rounds: Vec<RoundRecord>,
}

impl<'a> Run<'a> {
    fn new(
        ds: &'a Dataset,
        cfg: &'a SimConfig,
        strategy: StrategyKind,
        initial: Option<LabelStore>,
    ) -> Result<Self, SimError> {
        if !ds.has_ground_truth() {
            return Err(SimError::NoGroundTruth);
        }
        if cfg.error_run == 0 || cfg.residual_chunk == 0 || cfg.retrain_every == 0 {
            return Err(SimError::InvalidConfig(
                "error_run, residual_chunk and retrain_every must be positive".into(),
            ));
        }
        let mut session = Session::new(ds.len(), ds.class_count(), cfg.seed);
        if let Some(store) = initial {
            for entry in store.history() {
                session.apply(entry.action.clone())?;
            }
        }
        let model = ClassifierModel::new(ds.dim(), ds.class_count(), cfg.seed)?;
        let probs = model.predict_all(ds);
        let mut run = Self {
            ds,
            cfg,
            strategy,
            session,
            model,
            probs,
            steps: 0,
            visits: 0,
            batch_actions: 0,
            retrains: 0,
            bootstrap_steps: 0,
            ruled_out: BTreeMap::new(),
            rounds: Vec::new(),
        };
        if run.trainable() {
            run.retrain()?;
        }
        Ok(run)
    }

    fn truth(&self, id: InstanceId) -> ClassId {
        self.ds.truth(id).expect("ground truth checked at start")
    }

    /// One oracle lookup, charged as one step.
    fn inspect(&mut self, id: InstanceId) -> ClassId {
        self.steps += 1;
        self.truth(id)
    }

    fn rule_out(&mut self, id: InstanceId, class: ClassId) {
        let v = self.ruled_out.entry(id).or_default();
        if !v.contains(&class) {
            v.push(class);
        }
    }

    fn is_ruled_out(&self, id: InstanceId, class: ClassId) -> bool {
        self.ruled_out.get(&id).is_some_and(|v| v.contains(&class))
    }

    /// Manual label at rank cost; returns the cost charged.
    fn label_individually(&mut self, id: InstanceId, extra_ruled_out: Option<ClassId>) -> Result<usize, SimError> {
        let truth = self.truth(id);
        let mut ruled: Vec<ClassId> = self.ruled_out.get(&id).cloned().unwrap_or_default();
        ruled.extend(extra_ruled_out.filter(|&c| c != truth));
        let row = self.probs.row(id).expect("predictions cover the dataset");
        let cost = individual_cost(row, truth, &ruled);
        self.steps += cost;
        self.session.label_instance(id, truth)?;
        Ok(cost)
    }

    fn trainable(&self) -> bool {
        let mut seen = vec![false; self.ds.class_count()];
        for s in self.session.labels.statuses() {
            if let Some(c) = s.class() {
                seen[c] = true;
            }
        }
        seen.iter().all(|&b| b)
    }

    fn retrain(&mut self) -> Result<(), SimError> {
        if !self.trainable() {
            return Ok(());
        }
        self.model.train(self.ds, &self.session.labels, &self.cfg.train)?;
        self.probs = self.model.predict_all(self.ds);
        self.retrains += 1;
        Ok(())
    }

    fn unlabeled(&self) -> Vec<InstanceId> {
        self.session.labels.unlabeled().collect()
    }

    fn accuracy(&self) -> Result<f64, SimError> {
        Ok(evaluate_accuracy(&self.session.labels, Some(&self.probs), self.ds)?.overall)
    }

    fn record(&mut self) -> Result<(), SimError> {
        let labels = &self.session.labels;
        let rec = RoundRecord {
            round: self.rounds.len(),
            manual: labels.manual_counts().iter().sum(),
            batch: labels.batch_counts().iter().sum(),
            steps: self.steps,
            visits: self.visits,
            accuracy: self.accuracy()?,
        };
        self.rounds.push(rec);
        Ok(())
    }

    fn finish(self) -> Result<ExperimentLog, SimError> {
        let acc = evaluate_accuracy(&self.session.labels, Some(&self.probs), self.ds)?;
        let labels = &self.session.labels;
        let summary = Summary {
            strategy: self.strategy,
            seed: self.cfg.seed,
            instances: self.ds.len(),
            classes: self.ds.class_count(),
            manual: labels.manual_counts().iter().sum(),
            batch: labels.batch_counts().iter().sum(),
            steps: self.steps,
            visits: self.visits,
            batch_actions: self.batch_actions,
            retrains: self.retrains,
            bootstrap_steps: self.bootstrap_steps,
            final_accuracy: acc.overall,
            manual_accuracy: acc.manual_only,
            batch_accuracy: acc.batch_only,
        };
        Ok(ExperimentLog {
            rounds: self.rounds,
            summary,
        })
    }
}

pub fn run_strategy(kind: StrategyKind, ds: &Dataset, cfg: &SimConfig) -> Result<ExperimentLog, SimError> {
    match kind {
        StrategyKind::CvilOracle => run_cvil_oracle(ds, cfg),
        StrategyKind::IvilOracle => run_ivil_oracle(ds, cfg),
        StrategyKind::AlMinMargin => run_al_baseline(ds, cfg),
    }
}

pub fn run_cvil_oracle(ds: &Dataset, cfg: &SimConfig) -> Result<ExperimentLog, SimError> {
    run_cvil_from(ds, cfg, None)
}

/// Class-centric oracle: bootstrap probing, guidance rounds of
/// measure-sorted class scans with batch labels, then residual labeling.
pub fn run_cvil_from(ds: &Dataset, cfg: &SimConfig, initial: Option<LabelStore>) -> Result<ExperimentLog, SimError> {
    let mut run = Run::new(ds, cfg, StrategyKind::CvilOracle, initial)?;
    let m = ds.class_count();

    // bootstrap: probe cluster representatives until every class is seeded
    let mut shown = BTreeSet::new();
    let mut probe = 0u64;
    while !run.session.labels.bootstrap_complete() {
        let ids = match bootstrap_sample(ds, m, cfg.seed.wrapping_add(probe), &shown) {
            Ok(ids) => ids,
            Err(WorkflowError::FewerInstancesThanSlots { available, .. }) => available,
            Err(e) => return Err(e.into()),
        };
        if ids.is_empty() {
            break;
        }
        probe += 1;
        for id in ids {
            shown.insert(id);
            let truth = run.inspect(id);
            if run.session.labels.manual_counts()[truth] == 0 {
                run.session.label_instance(id, truth)?;
            }
        }
    }
    run.bootstrap_steps = run.steps;
    run.retrain()?;
    run.record()?;

    for _ in 0..cfg.max_rounds {
        if run.session.labels.unlabeled().next().is_none() {
            break;
        }
        let stats = class_stats(&run.session.labels, &run.probs);
        let order = guidance_order(&stats, cfg.direction);
        let mut labeled_this_round = 0;
        for class in order {
            let subset = focus_subset(class, 1, &run.probs, &run.session.labels)?;
            let mut candidates: Vec<(f64, InstanceId)> = subset
                .unlabeled
                .iter()
                .filter(|&&id| !run.is_ruled_out(id, class))
                .map(|&id| {
                    let row = run.probs.row(id).expect("predictions cover the dataset");
                    Ok((min_margin(row).expect("at least two classes"), id))
                })
                .collect::<Result<_, SimError>>()?;
            if candidates.is_empty() {
                continue;
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            run.visits += 1;
            run.steps += 1;
            run.session.set_focus(class)?;

            let mut accepted = Vec::new();
            let mut rejected = Vec::new();
            let mut prefix_len = 0;
            let mut misses = 0;
            for (pos, &(_, id)) in candidates.iter().enumerate() {
                if run.inspect(id) == class {
                    accepted.push(id);
                    prefix_len = pos + 1;
                    misses = 0;
                } else {
                    rejected.push(id);
                    run.rule_out(id, class);
                    misses += 1;
                    if misses >= cfg.error_run {
                        break;
                    }
                }
            }
            let rejected_all = rejected.clone();
            if accepted.is_empty() {
                if cfg.relabel_errors {
                    for id in rejected_all {
                        run.label_individually(id, None)?;
                    }
                }
                continue;
            }
            let prefix: Vec<InstanceId> = candidates[..prefix_len].iter().map(|&(_, id)| id).collect();
            run.session.select(&prefix)?;
            let inside: Vec<InstanceId> = rejected.into_iter().filter(|id| prefix.contains(id)).collect();
            if !inside.is_empty() {
                run.session.exclude(&inside)?;
            }
            let out = run.session.label_selection()?;
            run.steps += 1;
            run.batch_actions += 1;
            labeled_this_round += out.labeled.len();
            if cfg.relabel_errors {
                for id in rejected_all {
                    run.label_individually(id, None)?;
                }
            }
        }
        run.retrain()?;
        run.record()?;
        if labeled_this_round < m {
            break;
        }
    }

    // residual: known errors first, then most uncertain first
    if run.session.labels.unlabeled().next().is_some() {
        run.session.enter_residual()?;
    }
    loop {
        let mut pending = run.unlabeled();
        if pending.is_empty() {
            break;
        }
        let key = |id: InstanceId| {
            let known = run.ruled_out.contains_key(&id);
            let mm = min_margin(run.probs.row(id).expect("predictions cover the dataset")).unwrap_or(0.0);
            (!known, -mm, id)
        };
        pending.sort_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.cmp(&kb.2))
        });
        for &id in pending.iter().take(cfg.residual_chunk) {
            run.label_individually(id, None)?;
        }
        run.retrain()?;
        run.record()?;
    }
    run.finish()
}

pub fn run_ivil_oracle(ds: &Dataset, cfg: &SimConfig) -> Result<ExperimentLog, SimError> {
    run_ivil_from(ds, cfg, None)
}

/// Instance-centric oracle over a 2D projection of all instances: label the
/// largest spatial cluster's majority as one batch and its minority one by
/// one; retrain after every `m` clusters.
pub fn run_ivil_from(ds: &Dataset, cfg: &SimConfig, initial: Option<LabelStore>) -> Result<ExperimentLog, SimError> {
    let mut run = Run::new(ds, cfg, StrategyKind::IvilOracle, initial)?;
    let m = ds.class_count();
    let ids: Vec<InstanceId> = ds.ids().collect();
    let projection = analytics::project(&ids, ds, cfg.projection, cfg.seed)?;
    run.record()?;

    let mut pick = 0u64;
    loop {
        let mut picked_any = false;
        for _ in 0..m {
            let unlabeled = run.unlabeled();
            if unlabeled.is_empty() {
                break;
            }
            picked_any = true;
            let points: Vec<&[f64]> = unlabeled.iter().map(|id| projection.coords[id].as_slice()).collect();
            let clustering = kmeans::kmeans(
                &points,
                m.min(unlabeled.len()),
                cfg.seed.wrapping_add(pick),
                kmeans::DEFAULT_RESTARTS,
            );
            pick += 1;
            let sizes = clustering.sizes();
            let largest = (0..sizes.len())
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .expect("at least one cluster");
            let members: Vec<InstanceId> = unlabeled
                .iter()
                .zip(&clustering.assignment)
                .filter(|&(_, &a)| a == largest)
                .map(|(&id, _)| id)
                .collect();

            let truths: Vec<ClassId> = members.iter().map(|&id| run.inspect(id)).collect();
            let mut counts = vec![0usize; m];
            truths.iter().for_each(|&t| counts[t] += 1);
            let majority = (0..m)
                .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
                .expect("classes");
            let (major, minor): (Vec<_>, Vec<_>) = members.iter().zip(&truths).partition(|&(_, &t)| t == majority);
            let major: Vec<InstanceId> = major.into_iter().map(|(&id, _)| id).collect();
            run.session.label_batch(&major, majority)?;
            run.steps += 1;
            run.batch_actions += 1;
            for (&id, _) in minor {
                run.label_individually(id, Some(majority))?;
            }
        }
        if !picked_any {
            break;
        }
        run.retrain()?;
        run.record()?;
    }
    run.finish()
}

pub fn run_al_baseline(ds: &Dataset, cfg: &SimConfig) -> Result<ExperimentLog, SimError> {
    run_al_from(ds, cfg, None)
}

/// Uncertainty sampling: one random seed label per class, then label the
/// unlabeled instance with the largest min-margin, retraining every
/// `retrain_every` queries.
pub fn run_al_from(ds: &Dataset, cfg: &SimConfig, initial: Option<LabelStore>) -> Result<ExperimentLog, SimError> {
    let mut run = Run::new(ds, cfg, StrategyKind::AlMinMargin, initial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for class in 0..ds.class_count() {
        if run.session.labels.manual_counts()[class] > 0 {
            continue;
        }
        let pool: Vec<InstanceId> = ds
            .ids()
            .filter(|&id| ds.truth(id) == Some(class) && !run.session.labels.status(id).is_labeled())
            .collect();
        if let Some(&id) = pool.choose(&mut rng) {
            run.steps += 1;
            run.session.label_instance(id, class)?;
        }
    }
    run.bootstrap_steps = run.steps;
    run.retrain()?;
    run.record()?;

    let budget = cfg.query_budget.unwrap_or(usize::MAX);
    let mut queries = 0;
    let mut since_retrain = 0;
    while queries < budget {
        let next = run
            .session
            .labels
            .unlabeled()
            .map(|id| (min_margin(run.probs.row(id).expect("predictions cover the dataset")).unwrap_or(0.0), id))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((_, id)) = next else { break };
        run.label_individually(id, None)?;
        queries += 1;
        since_retrain += 1;
        if since_retrain == cfg.retrain_every {
            since_retrain = 0;
            run.retrain()?;
            run.record()?;
        }
    }
    if since_retrain > 0 {
        run.retrain()?;
        run.record()?;
    }
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Well-separated blobs, one per class.
    Best,
    /// Blobs with 10% of each class scattered into other blobs.
    Average,
    /// Positions independent of class.
    Worst,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(Scenario::Best),
            "average" | "avg" => Ok(Scenario::Average),
            "worst" => Ok(Scenario::Worst),
            _ => Err(format!("unknown scenario {s:?}")),
        }
    }
}

/// Embedding dimension of the complexity scenarios.
pub const SCENARIO_DIM: usize = 16;
/// Per-axis blob spread of the complexity scenarios; blobs are 10 apart.
pub const SCENARIO_SPREAD: f64 = 0.25;

pub fn scenario_spec(scenario: Scenario, m: usize, n_c: usize, seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::blobs(m, n_c, SCENARIO_DIM, seed);
    spec.cluster_spread = SCENARIO_SPREAD;
    spec.scatter_fraction = match scenario {
        Scenario::Best => 0.0,
        Scenario::Average => 0.1,
        Scenario::Worst => 1.0,
    };
    spec
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityReport {
    pub scenario: Scenario,
    pub m: usize,
    pub n_c: usize,
    pub seeds: Vec<u64>,
    pub cvil_steps: Vec<usize>,
    pub ivil_steps: Vec<usize>,
    pub cvil_visits: Vec<usize>,
    pub cvil_batch_actions: Vec<usize>,
    pub cvil_labeled: Vec<usize>,
    pub median_cvil_steps: f64,
    pub median_ivil_steps: f64,
    /// Median cVIL steps over median iVIL steps.
    pub ratio: f64,
    pub expectation: String,
    pub holds: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs both oracles on the scenario's synthetic data for every seed and
/// checks the expected step ordering: parity within [0.8, 1.25] for the
/// best and worst cases, cVIL strictly cheaper on average.
pub fn complexity_check(
    scenario: Scenario,
    m: usize,
    n_c: usize,
    seeds: &[u64],
    base: &SimConfig,
) -> Result<ComplexityReport, SimError> {
    if m < 2 || n_c == 0 || seeds.is_empty() {
        return Err(SimError::InvalidConfig("need m ≥ 2, n_c ≥ 1 and at least one seed".into()));
    }
    let mut report = ComplexityReport {
        scenario,
        m,
        n_c,
        seeds: seeds.to_vec(),
        cvil_steps: Vec::new(),
        ivil_steps: Vec::new(),
        cvil_visits: Vec::new(),
        cvil_batch_actions: Vec::new(),
        cvil_labeled: Vec::new(),
        median_cvil_steps: 0.0,
        median_ivil_steps: 0.0,
        ratio: 0.0,
        expectation: String::new(),
        holds: false,
    };
    for &seed in seeds {
        let ds = generate_synthetic(&scenario_spec(scenario, m, n_c, seed))?;
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.train.seed = seed;
        let c = run_cvil_oracle(&ds, &cfg)?;
        let i = run_ivil_oracle(&ds, &cfg)?;
        report.cvil_steps.push(c.summary.steps);
        report.ivil_steps.push(i.summary.steps);
        report.cvil_visits.push(c.summary.visits);
        report.cvil_batch_actions.push(c.summary.batch_actions);
        report.cvil_labeled.push(c.summary.manual + c.summary.batch);
    }
    let as_f64 = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    report.median_cvil_steps = median(&as_f64(&report.cvil_steps));
    report.median_ivil_steps = median(&as_f64(&report.ivil_steps));
    report.ratio = report.median_cvil_steps / report.median_ivil_steps;
    (report.expectation, report.holds) = match scenario {
        Scenario::Average => (
            "cVIL steps < iVIL steps".into(),
            report.median_cvil_steps < report.median_ivil_steps,
        ),
        Scenario::Best | Scenario::Worst => (
            "cVIL/iVIL step ratio in [0.8, 1.25]".into(),
            (0.8..=1.25).contains(&report.ratio),
        ),
    };
    Ok(report)
}
