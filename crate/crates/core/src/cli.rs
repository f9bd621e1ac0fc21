//! Command-line surface. Every subcommand validates and computes everything
//! before touching the filesystem, so a failing invocation writes nothing.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed gradient
//! check), 2 invalid input or usage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigLayer;
use crate::diagnostics::{hubness_report, recall_at_k, HubnessConfig};
use crate::embedding::{cosine_similarity, l2_normalize, EmbeddingSet};
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, GradcheckSettings};
use crate::io::{
    ground_truth_from_text, rankings_from_csv, rankings_to_csv, read_embeddings, read_text, to_json, write_atomic,
    write_embeddings,
};
use crate::losses::TaskMode;
use crate::pipeline::run_stream;
use crate::synth::{make_shifted, ShiftKind, SynthSpec, GENERATOR};
use crate::PairedDataset;

#[derive(Debug, Parser)]
#[command(
    name = "hubtta",
    version,
    about = "Hubness-aware online retrieval over embedding files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded paired dataset (+ optional query shift) and manifest.
    Synth(SynthArgs),
    /// Hubness report of plain cosine rankings.
    Diagnose(DiagnoseArgs),
    /// Memory-based reranking only (no adaptation); writes a rankings CSV.
    Rerank(StreamArgs),
    /// Full online adaptation pass; writes a stream report.
    Adapt(StreamArgs),
    /// Recall@K of a rankings CSV.
    Eval(EvalArgs),
    /// Finite-difference check of all loss gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    frames: usize,
    /// none | gaussian | hub_attractor | frame_shuffle
    #[arg(long, default_value = "none")]
    shift: String,
    #[arg(long, default_value_t = 0.0)]
    strength: f64,
    #[arg(long, default_value_t = 5)]
    n_hubs: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    jitter: f64,
    #[arg(long, default_value_t = 0.5)]
    frame_jitter: f64,
    #[arg(long, default_value = "v2t")]
    task: String,
    /// Output directory for queries.hatv, gallery.hatv and manifest.toml.
    #[arg(long)]
    out_dir: PathBuf,
}

/// Input files, either directly or through a config/manifest file.
#[derive(Debug, Args)]
struct InputArgs {
    /// Key-value config or manifest file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    gallery: Option<PathBuf>,
    /// One gallery index per line; identity by default.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 15)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    atkinson_epsilon: f64,
    #[arg(long, default_value_t = 2.0)]
    hub_factor: f64,
    /// JSON report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StreamArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    m: Option<f64>,
    /// Memory window K.
    #[arg(long)]
    memory: Option<usize>,
    #[arg(long)]
    rm_capacity: Option<usize>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    hub_k: Option<usize>,
    #[arg(long)]
    rank_after_update: Option<bool>,
    /// Gallery indices per query in the rankings CSV.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Rankings CSV path (required for `rerank`).
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// JSON report path (required for `adapt`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    rankings: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ks: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    instances: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses `args` (including the program name), runs, and returns the exit
/// code. Diagnostics go to stderr, summaries to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io { .. } => 1,
                _ => 2,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Rerank(a) => stream(a, true),
        Command::Adapt(a) => stream(a, false),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth(a: SynthArgs) -> Result<i32> {
    let spec = SynthSpec {
        n_items: a.n,
        dim: a.dim,
        n_frames: a.frames,
        shift: a.shift.parse::<ShiftKind>()?,
        strength: a.strength,
        n_hubs: a.n_hubs,
        seed: a.seed,
        jitter: a.jitter,
        frame_jitter: a.frame_jitter,
    };
    let task = a.task.parse::<TaskMode>()?;
    let data = make_shifted(&spec)?;
    let queries = match task {
        TaskMode::V2t => data.queries,
        TaskMode::T2v => EmbeddingSet::new(data.queries.data().clone())?,
    };
    let manifest = ConfigLayer {
        queries: Some("queries.hatv".into()),
        gallery: Some("gallery.hatv".into()),
        task: Some(task),
        seed: Some(spec.seed),
        generator: Some(format!(
            "{GENERATOR}; n={} dim={} frames={} shift={} strength={} n_hubs={} jitter={} frame_jitter={}",
            spec.n_items,
            spec.dim,
            spec.n_frames,
            spec.shift,
            spec.strength,
            spec.n_hubs,
            spec.jitter,
            spec.frame_jitter
        )),
        ..Default::default()
    };
    let text = manifest.to_text()?;

    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_embeddings(&queries, a.out_dir.join("queries.hatv"))?;
    write_embeddings(&data.gallery, a.out_dir.join("gallery.hatv"))?;
    write_atomic(a.out_dir.join("manifest.toml"), text.as_bytes())?;
    println!(
        "wrote {} queries ({} frames) and {} gallery items, dim {}, shift {} @ {} to {}",
        queries.len(),
        queries.n_frames(),
        data.gallery.len(),
        spec.dim,
        spec.shift,
        spec.strength,
        a.out_dir.display()
    );
    Ok(0)
}

/// Merged config layer plus the loaded dataset.
fn load_inputs(input: &InputArgs, flags: ConfigLayer) -> Result<(ConfigLayer, PairedDataset)> {
    let file = match &input.config {
        Some(p) => ConfigLayer::load(p)?,
        None => ConfigLayer::default(),
    };
    let direct = ConfigLayer {
        queries: input.queries.clone(),
        gallery: input.gallery.clone(),
        ground_truth: input.ground_truth.clone(),
        ..Default::default()
    };
    let layer = direct.over(flags).over(file);
    let queries_path = layer
        .queries
        .clone()
        .ok_or_else(|| Error::Config("no query embeddings given (--queries or config)".into()))?;
    let gallery_path = layer
        .gallery
        .clone()
        .ok_or_else(|| Error::Config("no gallery embeddings given (--gallery or config)".into()))?;
    let queries = read_embeddings(&queries_path)?;
    let gallery = read_embeddings(&gallery_path)?;
    let ground_truth = load_ground_truth(layer.ground_truth.as_deref(), queries.len())?;
    if ground_truth.len() != queries.len() {
        return Err(Error::Config(format!(
            "ground truth has {} entries for {} queries",
            ground_truth.len(),
            queries.len()
        )));
    }
    Ok((
        layer,
        PairedDataset {
            queries,
            gallery,
            ground_truth,
        },
    ))
}

fn load_ground_truth(path: Option<&Path>, n: usize) -> Result<Vec<usize>> {
    match path {
        Some(p) => ground_truth_from_text(&read_text(p)?),
        None => Ok((0..n).collect()),
    }
}

fn diagnose(a: DiagnoseArgs) -> Result<i32> {
    let (_, data) = load_inputs(&a.input, ConfigLayer::default())?;
    let q = l2_normalize(&data.queries)?;
    let g = l2_normalize(&data.gallery)?;
    let rankings = cosine_similarity(&q, &g)?.rankings();
    let cfg = HubnessConfig {
        k: a.k,
        atkinson_epsilon: a.atkinson_epsilon,
        hub_factor: a.hub_factor,
    };
    let report = hubness_report(&rankings, g.len(), &cfg, Some(&data.ground_truth), &[1, 5, 10])?;
    let json = to_json(&report)?;
    write_atomic(&a.out, json.as_bytes())?;
    println!(
        "k={} skew={:.4} trunc_skew={:.4} atkinson={:.4} robin_hood={:.4} antihub={:.4} hub_occ={:.4} R@1={:.2}",
        report.k,
        report.skew,
        report.trunc_skew,
        report.atkinson,
        report.robin_hood,
        report.antihub_rate,
        report.hub_occurrence,
        report.recall_at.get(&1).copied().unwrap_or(f64::NAN)
    );
    Ok(0)
}

fn stream(a: StreamArgs, rerank_only: bool) -> Result<i32> {
    let flags = ConfigLayer {
        task: a.task.as_deref().map(str::parse).transpose()?,
        batch_size: a.batch_size,
        tau: a.tau,
        t: a.t,
        lr: if rerank_only { Some(0.0) } else { a.lr },
        weight_decay: a.weight_decay,
        alpha: a.alpha,
        beta: a.beta,
        m: a.m,
        memory: a.memory,
        rm_capacity: a.rm_capacity,
        kappa: a.kappa,
        lambda: a.lambda,
        seed: a.seed,
        hub_k: a.hub_k,
        rank_after_update: a.rank_after_update,
        ..Default::default()
    };
    if rerank_only && a.rankings.is_none() {
        return Err(Error::Config("rerank needs --rankings".into()));
    }
    if !rerank_only && a.out.is_none() {
        return Err(Error::Config("adapt needs --out".into()));
    }
    let (layer, data) = load_inputs(&a.input, flags)?;
    let config = layer.stream_config()?;
    let outcome = run_stream(&data, &config)?;

    let csv = rankings_to_csv(&outcome.rankings, a.top);
    let json = to_json(&outcome.report)?;
    if let Some(path) = &a.rankings {
        write_atomic(path, csv.as_bytes())?;
    }
    if let Some(path) = &a.out {
        write_atomic(path, json.as_bytes())?;
    }
    let r = &outcome.report;
    let at = |m: &std::collections::BTreeMap<usize, f64>, k| m.get(&k).copied().unwrap_or(f64::NAN);
    println!(
        "{} queries in {} batches: R@1 {:.2} (raw {:.2}), R@5 {:.2}, R@10 {:.2}; N_{} skew {:.3} (raw {:.3})",
        r.n_queries,
        r.n_batches,
        at(&r.recall, 1),
        at(&r.recall_raw, 1),
        at(&r.recall, 5),
        at(&r.recall, 10),
        r.hubness.k,
        r.hubness.skew,
        r.hubness_raw.skew
    );
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let rankings = rankings_from_csv(&read_text(&a.rankings)?)?;
    let gt = load_ground_truth(a.ground_truth.as_deref(), rankings.len())?;
    let recall = recall_at_k(&rankings, &gt, &a.ks)?;
    if let Some(path) = &a.out {
        write_atomic(path, to_json(&recall)?.as_bytes())?;
    }
    let parts: Vec<String> = recall.iter().map(|(k, v)| format!("R@{k}={v:.2}")).collect();
    println!("{} queries: {}", rankings.len(), parts.join(" "));
    Ok(0)
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let settings = GradcheckSettings {
        instances: a.instances,
        ..GradcheckSettings::default()
    };
    if settings.instances == 0 {
        return Err(Error::Config("need at least one instance".into()));
    }
    let results = run_suite(a.seed, &settings)?;
    if let Some(path) = &a.out {
        write_atomic(path, to_json(&results)?.as_bytes())?;
    }
    let mut ok = true;
    for r in &results {
        ok &= r.passed;
        println!(
            "{:<14} max rel. error {:.3e} over {} instances  {}",
            r.check.name(),
            r.max_rel_error,
            r.instances,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    Ok(if ok { 0 } else { 1 })
}
