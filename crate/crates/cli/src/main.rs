use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use cvil_core::classifier::ClassifierModel;
use cvil_core::dataset::{generate_synthetic, load_manifest, write_manifest, EmbeddingFormat};
use cvil_core::measures::{self, MeasureContext, MeasureKind, DEFAULT_K};
use cvil_core::simulator::{self, Scenario, SimConfig, StrategyKind};
use cvil_core::workflow::{focus_subset, import_labels};
use cvil_core::{Dataset, SyntheticSpec, TrainConfig};
use cvil_service::{snapshot, AppState, ServeConfig};

#[derive(Parser, Debug)]
#[command(name = "cvil", version, about = "Class-centric visual interactive labeling engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate or check datasets
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Per-instance measures for one focus class
    #[command(subcommand)]
    Measures(MeasuresCmd),
    /// Serve a labeling session over HTTP
    Serve {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Save or load the session of a running server
    Session {
        #[command(subcommand)]
        action: SessionCmd,
        /// Base URL of the server
        #[arg(long, global = true, default_value = "http://127.0.0.1:8080")]
        server: String,
    },
    /// Oracle simulations
    #[command(subcommand)]
    Sim(SimCmd),
}

#[derive(Subcommand, Debug)]
enum DatasetCmd {
    /// Write a Gaussian-blob dataset as manifest + embeddings
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 10.0)]
        separation: f64,
        /// Fraction of each class placed around another class's centroid
        #[arg(long, default_value_t = 0.0)]
        scatter: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Binary)]
        format: Format,
    },
    /// Load a manifest and print a summary
    Validate { manifest: PathBuf },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Binary,
}

#[derive(Subcommand, Debug)]
enum MeasuresCmd {
    /// Train on exported labels, then print `id,value` for the focus class
    Compute {
        #[arg(long)]
        manifest: PathBuf,
        /// Label CSV as written by the export endpoint
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        kind: String,
        /// Focus class, by name or index
        #[arg(long)]
        focus: String,
        /// Class-rank cutoff of the focus subset
        #[arg(long, default_value_t = 1)]
        cutoff: usize,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        /// Include already labeled members of the subset
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum SessionCmd {
    Save { path: PathBuf },
    Load { path: PathBuf },
}

#[derive(Subcommand, Debug)]
enum SimCmd {
    /// Run one oracle strategy and write rounds.csv + summary.json
    Run(SimRun),
    /// Compare cVIL and iVIL step counts on a synthetic scenario
    Complexity {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        m: usize,
        #[arg(long)]
        nc: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SimRun {
    #[arg(long)]
    strategy: String,
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    manifest: Option<PathBuf>,
    /// Synthetic spec: inline JSON, a JSON file, or `classes,per_class,dim`
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// SimConfig overrides as inline JSON or a JSON file
    #[arg(long)]
    config: Option<String>,
    /// Active-learning query budget
    #[arg(long)]
    budget: Option<usize>,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Dataset(cmd) => dataset(cmd),
        Command::Measures(MeasuresCmd::Compute {
            manifest,
            labels,
            kind,
            focus,
            cutoff,
            k,
            seed,
            epochs,
            all,
            out,
        }) => {
            let kind: MeasureKind = kind.parse()?;
            let ds = load_manifest(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let focus = class_arg(&ds, &focus)?;
            let labels = import_labels(&labels, &ds)?;
            let mut cfg = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            let mut model = ClassifierModel::new(ds.dim(), ds.class_count(), seed)?;
            model.train(&ds, &labels, &cfg)?;
            let probs = model.predict_all(&ds);
            let subset = focus_subset(focus, cutoff, &probs, &labels)?;
            let ids = if all { subset.all() } else { subset.unlabeled.clone() };
            let ctx = MeasureContext {
                dataset: &ds,
                labels: &labels,
                probs: &probs,
                k,
            };
            let values = measures::compute(kind, focus, &ids, ctx)?;
            let mut text = String::from("id,value\n");
            for (id, v) in &values.values {
                text.push_str(&format!("{id},{v}\n"));
            }
            emit(out.as_deref(), &text)
        }
        Command::Serve {
            manifest,
            port,
            host,
            seed,
        } => serve(&manifest, &host, port, seed),
        Command::Session { action, server } => {
            let (endpoint, path) = match action {
                SessionCmd::Save { path } => ("save", path),
                SessionCmd::Load { path } => ("load", path),
            };
            let path = std::path::absolute(&path)?;
            let url = format!("{}/session/{endpoint}", server.trim_end_matches('/'));
            let mut resp = ureq::post(&url)
                .config()
                .http_status_as_error(false)
                .build()
                .header("content-type", "application/json")
                .send(json!({ "path": path }).to_string())
                .with_context(|| format!("contacting {url}"))?;
            let status = resp.status();
            let body: Value = serde_json::from_str(&resp.body_mut().read_to_string()?).unwrap_or(Value::Null);
            if !status.is_success() {
                bail!("{} {}: {}", status.as_u16(), body["error"], body["message"]);
            }
            println!("{}", serde_json::to_string_pretty(&body)?);
            Ok(())
        }
        Command::Sim(SimCmd::Run(args)) => sim_run(args),
        Command::Sim(SimCmd::Complexity {
            scenario,
            m,
            nc,
            seeds,
            out,
        }) => {
            let scenario: Scenario = scenario.parse().map_err(anyhow::Error::msg)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let report = simulator::complexity_check(scenario, m, nc, &seeds, &SimConfig::default())?;
            eprintln!(
                "{:?} m={m} n_c={nc}: median cVIL {} vs iVIL {} ({}): {}",
                scenario,
                report.median_cvil_steps,
                report.median_ivil_steps,
                report.expectation,
                if report.holds { "holds" } else { "does not hold" }
            );
            emit(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
    }
}

fn dataset(cmd: DatasetCmd) -> Result<()> {
    match cmd {
        DatasetCmd::Gen {
            out,
            classes,
            per_class,
            dim,
            spread,
            separation,
            scatter,
            seed,
            format,
        } => {
            let spec = SyntheticSpec {
                classes,
                per_class,
                dim,
                cluster_spread: spread,
                class_separation: separation,
                seed,
                scatter_fraction: scatter,
            };
            let ds = generate_synthetic(&spec)?;
            let fmt = match format {
                Format::Csv => EmbeddingFormat::Csv,
                Format::Binary => EmbeddingFormat::Binary,
            };
            let path = write_manifest(&ds, &out, fmt)?;
            println!("{}", path.display());
            Ok(())
        }
        DatasetCmd::Validate { manifest } => {
            let ds = load_manifest(&manifest).with_context(|| format!("loading {}", manifest.display()))?;
            let counts = ds.class_names().iter().enumerate().map(|(c, name)| {
                let n = ds.ids().filter(|&id| ds.truth(id) == Some(c)).count();
                (name.clone(), json!(n))
            });
            let summary = json!({
                "n": ds.len(),
                "dim": ds.dim(),
                "m": ds.class_count(),
                "ground_truth": ds.has_ground_truth(),
                "images": ds.ids().filter(|&id| ds.image_path(id).is_some()).count(),
                "truth_counts": counts.collect::<serde_json::Map<_, _>>(),
                "fingerprint": snapshot::fingerprint(&ds),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
    }
}

fn class_arg(ds: &Dataset, s: &str) -> Result<usize> {
    if let Some(c) = ds.class_id(s) {
        return Ok(c);
    }
    match s.parse::<usize>() {
        Ok(c) if c < ds.class_count() => Ok(c),
        _ => bail!("unknown class {s:?}"),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, text)?;
        }
        None => {
            io::stdout().write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                println!();
            }
        }
    }
    Ok(())
}

fn json_arg(s: &str) -> Result<Value> {
    let text = if s.trim_start().starts_with('{') {
        s.to_string()
    } else {
        fs::read_to_string(s).with_context(|| format!("reading {s}"))?
    };
    Ok(serde_json::from_str(&text)?)
}

fn synthetic_spec(s: &str, seed: u64) -> Result<SyntheticSpec> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() == 3 && parts.iter().all(|p| p.trim().parse::<usize>().is_ok()) {
        let n: Vec<usize> = parts.iter().map(|p| p.trim().parse().unwrap()).collect();
        return Ok(SyntheticSpec::blobs(n[0], n[1], n[2], seed));
    }
    let mut v = json_arg(s)?;
    if let Value::Object(map) = &mut v {
        map.entry("seed").or_insert(json!(seed));
        let base = serde_json::to_value(SyntheticSpec::blobs(2, 1, 2, seed))?;
        for (k, dv) in base.as_object().expect("spec is an object") {
            map.entry(k.clone()).or_insert(dv.clone());
        }
    }
    Ok(serde_json::from_value(v)?)
}

fn sim_run(args: SimRun) -> Result<()> {
    let kind: StrategyKind = args.strategy.parse().map_err(anyhow::Error::msg)?;
    let ds = match (&args.manifest, &args.synthetic) {
        (Some(m), _) => load_manifest(m).with_context(|| format!("loading {}", m.display()))?,
        (None, Some(s)) => generate_synthetic(&synthetic_spec(s, args.seed)?)?,
        (None, None) => bail!("either --manifest or --synthetic is required"),
    };
    let mut cfg = SimConfig::with_seed(args.seed);
    if let Some(c) = &args.config {
        let mut base = serde_json::to_value(&cfg)?;
        let Value::Object(overrides) = json_arg(c)? else {
            bail!("--config must be a JSON object");
        };
        for (k, v) in overrides {
            base[k] = v;
        }
        cfg = serde_json::from_value(base)?;
    }
    if args.budget.is_some() {
        cfg.query_budget = args.budget;
    }
    let log = simulator::run_strategy(kind, &ds, &cfg)?;
    log.write_dir(&args.out)?;
    let s = &log.summary;
    eprintln!(
        "{kind}: {} steps, {} manual, {} batch, accuracy {:.4}",
        s.steps, s.manual, s.batch, s.final_accuracy
    );
    println!("{}", serde_json::to_string_pretty(s)?);
    Ok(())
}

fn serve(manifest: &Path, host: &str, port: u16, seed: u64) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    let state = AppState::open(
        manifest,
        ServeConfig {
            seed,
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
        },
    )
    .with_context(|| format!("loading {}", manifest.display()))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port)).await?;
        let addr = listener.local_addr()?;
        tracing::info!(%addr, n = state.status().n, "serving");
        println!("listening on http://{addr}");
        cvil_service::serve(listener, state).await?;
        Ok(())
    })
}
