//! Command-line front end: fit a model and write its artifacts, score labels,
//! or export Gower distances.

pub mod artifacts;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mixclus_core::data::{load_dataset, parse_schema, read_labels};
use mixclus_core::metrics::{gower_matrix, precision_scores, silhouette};
use mixclus_core::{Error, MixedDataset};
use serde_json::{json, Map, Value};

use crate::artifacts::{
    align_truth, distance_csv, encode_labels, labels_csv, matrix_csv, read_text, trace_csv,
    write_text,
};
use crate::config::{config_hash, thread_count, RunConfig};

/// Failure of a command, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mixclus",
    version,
    about = "Deep Gaussian mixture clustering of mixed data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write labels, embeddings, trace, metrics and parameters.
    Fit(FitArgs),
    /// Silhouette of a labelling, and precision against a truth file.
    Metrics(MetricsArgs),
    /// Pairwise Gower distance matrix.
    Gower(GowerArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of m1, m2, ddgmm, dgmm.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; falls back to MIXCLUS_THREADS.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Ground-truth labels for precision scores.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GowerArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a).map(|_| ()),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Gower(a) => cmd_gower(&a),
    }
}

fn load(data: &Path, schema: &Path) -> Result<MixedDataset, CliError> {
    let schema = parse_schema(&read_text(schema)?)?;
    Ok(load_dataset(&read_text(data)?, &schema)?)
}

fn load_labels(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_labels(&read_text(path)?)?)
}

fn to_json(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

/// Silhouette and, with a truth file, micro and macro precision.
fn metrics_json(
    ds: &MixedDataset,
    pred: &[usize],
    truth: Option<Vec<String>>,
) -> Result<Map<String, Value>, CliError> {
    let (d, _) = gower_matrix(ds)?;
    let mut m = Map::new();
    m.insert("silhouette".into(), json!(silhouette(pred, &d)));
    if let Some(truth) = truth {
        let truth = align_truth(truth, ds.n, &ds.source_rows)?;
        let (micro, macro_) = precision_scores(pred, &truth)?;
        m.insert("micro".into(), json!(micro));
        m.insert("macro".into(), json!(macro_));
    }
    Ok(m)
}

/// Train and write the artifacts; returns the output directory.
pub fn cmd_fit(a: &FitArgs) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let file = match &a.config {
        Some(p) => RunConfig::from_json(&read_text(p)?)?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        data: a.data.clone(),
        schema: a.schema.clone(),
        mode: a.mode.clone(),
        seed: a.seed,
        threads: a.threads,
        labels: a.labels.clone(),
        out: a.out.clone(),
        ..RunConfig::default()
    };
    let rc = file.overridden_by(flags);
    let data = rc
        .data
        .clone()
        .ok_or_else(|| CliError::Config("no data file given".into()))?;
    let schema = rc
        .schema
        .clone()
        .ok_or_else(|| CliError::Config("no schema file given".into()))?;
    let out = rc
        .out
        .clone()
        .ok_or_else(|| CliError::Config("no output directory given".into()))?;
    let fc = rc.fit_config()?;
    let threads = thread_count(
        a.threads,
        std::env::var("MIXCLUS_THREADS").ok().as_deref(),
        rc.threads,
    )?;
    let ds = load(&data, &schema)?;
    let truth = rc.labels.as_deref().map(load_labels).transpose()?;
    fc.validate(&ds)?;
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let load_seconds = start.elapsed().as_secs_f64();
    let (result, metrics) = pool.install(|| -> Result<_, CliError> {
        let result = mixclus_core::fit(&ds, &fc)?;
        let metrics = metrics_json(&ds, &result.labels, truth)?;
        Ok((result, metrics))
    })?;
    let fit_seconds = start.elapsed().as_secs_f64() - load_seconds;

    write_text(&out.join("labels.csv"), &labels_csv(&result.labels))?;
    for (q, e) in result.embeddings.iter().enumerate() {
        write_text(
            &out.join(format!("embedding_layer{q}.csv")),
            &matrix_csv(e, "z"),
        )?;
    }
    write_text(&out.join("trace.csv"), &trace_csv(&result.trace))?;
    let mut metrics = metrics;
    metrics.insert(
        "n_clusters".into(),
        json!(result
            .trace
            .iter()
            .find(|r| r.iteration == result.selected_iteration)
            .map(|r| r.n_clusters)),
    );
    metrics.insert(
        "selected_iteration".into(),
        json!(result.selected_iteration),
    );
    write_text(&out.join("metrics.json"), &to_json(&metrics))?;
    write_text(&out.join("model.json"), &to_json(&result.params))?;
    let meta = json!({
        "seed": fc.seed,
        "config_hash": config_hash(&fc),
        "config": fc,
        "versions": {
            "mixclus": env!("CARGO_PKG_VERSION"),
        },
        "threads": threads.unwrap_or_else(|| pool.current_num_threads()),
        "data": data,
        "schema": schema,
        "n_observations": ds.n,
        "dropped_rows": ds.dropped_rows,
        "architecture_final": result.architecture_final,
        "clustering_layer": result.clustering_layer,
        "selected_iteration": result.selected_iteration,
        "iterations": result.trace.len(),
        "timings": {
            "load_seconds": load_seconds,
            "fit_seconds": fit_seconds,
            "iteration_seconds": result.trace.iter().map(|r| r.seconds).collect::<Vec<_>>(),
        },
        "init": result.init_report,
        "warnings": ds.warnings.iter().chain(&result.warnings).collect::<Vec<_>>(),
    });
    write_text(&out.join("run_meta.json"), &to_json(&meta))?;
    Ok(out)
}

pub fn cmd_metrics(a: &MetricsArgs) -> Result<(), CliError> {
    let ds = load(&a.data, &a.schema)?;
    let pred = load_labels(&a.pred)?;
    if pred.len() != ds.n {
        return Err(CliError::Config(format!(
            "prediction file has {} rows, the data has {} usable rows",
            pred.len(),
            ds.n
        )));
    }
    let truth = a.truth.as_deref().map(load_labels).transpose()?;
    let m = metrics_json(&ds, &encode_labels(&pred), truth)?;
    let text = to_json(&m);
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn cmd_gower(a: &GowerArgs) -> Result<(), CliError> {
    let ds = load(&a.data, &a.schema)?;
    let (d, warnings) = gower_matrix(&ds)?;
    for w in &warnings {
        eprintln!("warning: feature '{w}' has zero range and is skipped");
    }
    write_text(&a.out, &distance_csv(&d))
}
