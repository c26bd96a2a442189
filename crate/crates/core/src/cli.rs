//! Command-line surface: dataset generation, training, evaluation,
//! invariance verification, weight sweeps, gradient checking, and run
//! reports.
//!
//! Conventions shared by every command:
//! - exit codes: 0 success, 1 runtime/numeric failure, 2 usage error;
//! - commands are idempotent with respect to `--out` unless `--force` is
//!   passed: existing output is kept and the work is skipped;
//! - `SMILE_LOG` (error/info/debug) controls diagnostics on stderr, while
//!   stdout carries only the machine-readable results.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::autodiff::Tape;
use crate::clustering::kmeans;
use crate::data::{corrupt, make_synthetic, CorruptionSpec};
use crate::error::{Result, SmileError};
use crate::io::{load_dataset, save_dataset};
use crate::losses::{
    batch_loss, ccl_loss, dar_loss, encode_views, sil_terms_on_tape, soft_assignments, Batch,
    LossWeights, PairAnchors, ViewBatch,
};
use crate::metrics::MetricsReport;
use crate::network::{grad, Model};
use crate::rng::{mix, KeyRng};
use crate::theorem::{invariance_sweep, verify_semantic_invariance, Scenario};
use crate::trainer::{
    encode_all, evaluate, load_run, train, train_into_dir, EpochRecord, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "smile",
    version,
    about = "Multi-view clustering under fully incomplete information",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multi-view dataset, optionally corrupted.
    Generate(GenerateArgs),
    /// Train a model on a dataset directory into a run directory.
    Train(TrainArgs),
    /// Evaluate a trained run, or train-and-evaluate across several seeds.
    Eval(EvalArgs),
    /// Check the semantic-invariance property on constructed scenarios.
    Verify(VerifyArgs),
    /// Train across invariance weights and correlate outcome metrics.
    Sweep(SweepArgs),
    /// Compare analytic loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarize a finished run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of instances.
    #[arg(long)]
    n: usize,
    /// Number of categories.
    #[arg(long)]
    k: usize,
    /// Comma-separated feature dimension per view, e.g. 20,20.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    views: Vec<usize>,
    /// Dimension of the shared latent factors behind the views.
    #[arg(long, default_value_t = 8)]
    d_latent: usize,
    /// Additive noise scale.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of instances with a missing view.
    #[arg(long)]
    eta: Option<f64>,
    /// Fraction of instances with destroyed alignment.
    #[arg(long)]
    zeta: Option<f64>,
    /// Single incompleteness rate, split evenly: eta = zeta = rho/2.
    #[arg(long, conflicts_with_all = ["eta", "zeta"])]
    rho: Option<f64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Regenerate even if the output already exists.
    #[arg(long)]
    force: bool,
}

/// Per-field overrides applied on top of the config file (or defaults).
#[derive(Args, Clone, Default)]
struct ConfigOverrides {
    /// Cluster count (defaults to the dataset's label count).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    warmup_epochs: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_sil: Option<f64>,
    #[arg(long)]
    lambda_ccl: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau_assign: Option<f64>,
    #[arg(long)]
    tau_ccl: Option<f64>,
    /// Neighbors averaged when imputing a missing latent.
    #[arg(long)]
    k_impute: Option<usize>,
    #[arg(long)]
    kmeans_restarts: Option<usize>,
    #[arg(long)]
    adaption_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    encoder_hidden: Option<Vec<usize>>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    decoder_hidden: Option<Vec<usize>>,
    #[arg(long)]
    hidden_slope: Option<f64>,
    /// Comma-separated epochs at which metric snapshots are recorded.
    #[arg(long, value_delimiter = ',')]
    snapshot_epochs: Option<Vec<usize>>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl ConfigOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.k {
            cfg.k = Some(v);
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.warmup_epochs {
            cfg.warmup_epochs = v;
        }
        if let Some(v) = self.max_epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.lambda_sil {
            cfg.lambda_sil = v;
        }
        if let Some(v) = self.lambda_ccl {
            cfg.lambda_ccl = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.tau_assign {
            cfg.tau_assign = v;
        }
        if let Some(v) = self.tau_ccl {
            cfg.tau_ccl = v;
        }
        if let Some(v) = self.k_impute {
            cfg.k_impute = v;
        }
        if let Some(v) = self.kmeans_restarts {
            cfg.kmeans_restarts = v;
        }
        if let Some(v) = self.adaption_dim {
            cfg.adaption_dim = v;
        }
        if let Some(v) = &self.encoder_hidden {
            cfg.encoder_hidden = v.clone();
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = &self.decoder_hidden {
            cfg.decoder_hidden = v.clone();
        }
        if let Some(v) = self.hidden_slope {
            cfg.hidden_slope = v;
        }
        if let Some(v) = &self.snapshot_epochs {
            cfg.snapshot_epochs = v.clone();
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = Some(v);
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory (as written by `generate`).
    #[arg(long)]
    data: PathBuf,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    /// JSON config file with flat keys matching the config field names.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Replace an existing run directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory of a finished training (single-run mode).
    #[arg(long, conflicts_with = "seeds")]
    run: Option<PathBuf>,
    /// Dataset directory to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Train-and-evaluate this many consecutive seeds and report mean/std.
    #[arg(long)]
    seeds: Option<usize>,
    /// JSON config file (multi-seed mode).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Where to write the metrics JSON (default: <run>/metrics.json in
    /// single-run mode).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Scenario to check; omit to check all of them.
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Instances in the constructed label set.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Categories in the constructed label set.
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 3)]
    views: usize,
    /// Number of seeds to quantify over.
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Invariance weights to sweep over.
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.04,0.16")]
    lambdas: Vec<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Maximum tolerated relative error between analytic and numeric
    /// gradients.
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory to summarize.
    #[arg(long)]
    run: PathBuf,
    /// Optional JSON output path for the summary.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV dump of the per-epoch history.
    #[arg(long)]
    history_csv: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let env = env_logger::Env::new().filter_or("SMILE_LOG", "error");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

/// Load the config file (defaults when absent) and apply flag overrides.
/// Bad config files are usage errors carrying the offending key.
fn resolve_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<TrainConfig> {
    let mut cfg = match path {
        None => TrainConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| SmileError::io(format!("read config {}", p.display()), e))?;
            serde_json::from_str(&text).map_err(|e| {
                SmileError::config(format!("config {} line {}: {e}", p.display(), e.line()))
            })?
        }
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Idempotency helper: true when the output already exists and `--force`
/// was not passed; the caller should skip its work.
fn keep_existing(path: &Path, force: bool) -> bool {
    if force || !path.exists() {
        return false;
    }
    log::info!(
        "{} already exists; keeping it (pass --force to replace)",
        path.display()
    );
    true
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| SmileError::io(format!("create {}", parent.display()), e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| SmileError::io(format!("write {}", path.display()), e))
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    if keep_existing(&a.out.join("view_0.csv"), a.force) {
        println!("{}", a.out.display());
        return Ok(());
    }
    let spec = match (a.rho, a.eta, a.zeta) {
        (Some(rho), None, None) => Some(CorruptionSpec::from_rho(rho, a.seed)?),
        (None, None, None) => None,
        (None, eta, zeta) => Some(CorruptionSpec::new(
            eta.unwrap_or(0.0),
            zeta.unwrap_or(0.0),
            a.seed,
        )?),
        _ => unreachable!("clap rejects rho together with eta/zeta"),
    };
    let complete = make_synthetic(a.n, a.k, a.d_latent, &a.views, a.noise, a.seed)?;
    let ds = match spec {
        Some(spec) => corrupt(&complete, &spec)?,
        None => complete,
    };
    save_dataset(&ds, &a.out)?;
    let (eta, zeta) = ds.rates();
    log::info!(
        "wrote {} instances, {} views to {} (eta={eta}, zeta={zeta})",
        ds.n(),
        ds.n_views(),
        a.out.display()
    );
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let config = resolve_config(a.config.as_deref(), &a.overrides)?;
    if a.out.join("config.json").exists() && !a.force {
        // Reuse only a finished run of the same config; anything else needs
        // --force so half-written state is never silently extended.
        match load_run(&a.out) {
            Ok((existing, state))
                if existing == config && state.epoch >= config.max_epochs =>
            {
                log::info!(
                    "{} already holds this finished run; skipping (pass --force to retrain)",
                    a.out.display()
                );
                println!("{}", a.out.display());
                return Ok(());
            }
            _ => {
                return Err(SmileError::argument(format!(
                    "{} holds a different or unfinished run; pass --force to replace it",
                    a.out.display()
                )));
            }
        }
    }
    if a.force && a.out.exists() {
        std::fs::remove_dir_all(&a.out)
            .map_err(|e| SmileError::io(format!("clear {}", a.out.display()), e))?;
    }
    let ds = load_dataset(&a.data)?;
    train_into_dir(&ds, &config, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct MultiSeedReport {
    seeds: Vec<u64>,
    mean: serde_json::Map<String, serde_json::Value>,
    /// Sample standard deviation (n-1 denominator; 0 for a single seed).
    std: serde_json::Map<String, serde_json::Value>,
    runs: Vec<MetricsReport>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

fn summarize_runs(runs: Vec<MetricsReport>, seeds: Vec<u64>) -> MultiSeedReport {
    let mut mean = serde_json::Map::new();
    let mut std = serde_json::Map::new();
    let fields: [(&str, fn(&MetricsReport) -> Option<f64>); 5] = [
        ("acc", |r| r.values.acc),
        ("nmi", |r| r.values.nmi),
        ("ari", |r| r.values.ari),
        ("car", |r| r.values.car),
        ("nrmse", |r| r.values.nrmse),
    ];
    for (name, get) in fields {
        let values: Vec<f64> = runs.iter().filter_map(get).collect();
        if values.len() == runs.len() && !values.is_empty() {
            let (m, s) = mean_std(&values);
            mean.insert(name.to_string(), m.into());
            std.insert(name.to_string(), s.into());
        }
    }
    MultiSeedReport {
        seeds,
        mean,
        std,
        runs,
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let out_path = match (&a.out, &a.run) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(run)) => Some(run.join("metrics.json")),
        (None, None) => None,
    };
    if let Some(p) = &out_path {
        if keep_existing(p, a.force) {
            let text = std::fs::read_to_string(p)
                .map_err(|e| SmileError::io(format!("read {}", p.display()), e))?;
            print!("{text}");
            return Ok(());
        }
    }
    let ds = load_dataset(&a.data)?;
    let json = match (&a.run, a.seeds) {
        (Some(run), None) => {
            let (mut config, state) = load_run(run)?;
            a.overrides.apply(&mut config);
            let report = evaluate(&state.model, &ds, &config)?;
            to_pretty_json(&report)
        }
        (None, Some(seeds)) => {
            if seeds == 0 {
                return Err(SmileError::argument("--seeds must be at least 1"));
            }
            let base = resolve_config(a.config.as_deref(), &a.overrides)?;
            let mut runs = Vec::with_capacity(seeds);
            let mut used = Vec::with_capacity(seeds);
            for s in 0..seeds as u64 {
                let config = TrainConfig {
                    seed: base.seed + s,
                    ..base.clone()
                };
                log::info!("seed {} ({}/{seeds})", config.seed, s + 1);
                let (model, _) = train(&ds, &config)?;
                runs.push(evaluate(&model, &ds, &config)?);
                used.push(config.seed);
            }
            to_pretty_json(&summarize_runs(runs, used))
        }
        (None, None) => {
            return Err(SmileError::argument(
                "pass --run for a finished run or --seeds N to train-and-evaluate",
            ));
        }
        (Some(_), Some(_)) => unreachable!("clap rejects --run with --seeds"),
    };
    if let Some(p) = &out_path {
        write_text(p, &json)?;
    }
    print!("{json}");
    Ok(())
}

#[derive(Serialize)]
struct VerifyOutcome {
    scenario: &'static str,
    seeds: usize,
    max_mi: f64,
    /// Category-blind scenarios must stay at zero; the category-dependent
    /// control must not.
    expect_zero: bool,
    pass: bool,
}

fn cmd_verify(a: VerifyArgs) -> Result<()> {
    if a.seeds == 0 {
        return Err(SmileError::argument("--seeds must be at least 1"));
    }
    let labels: Vec<usize> = (0..a.n).map(|i| i % a.k).collect();
    let scenarios: Vec<Scenario> = match a.scenario {
        Some(s) => vec![s],
        None => Scenario::ALL.to_vec(),
    };
    let mut outcomes = Vec::new();
    for scenario in scenarios {
        let mut max_mi = 0.0f64;
        for s in 0..a.seeds as u64 {
            let mi = verify_semantic_invariance(&labels, a.views, scenario, a.seed + s)?;
            max_mi = max_mi.max(mi.abs());
        }
        let expect_zero = scenario != Scenario::CategoryDependentMissing;
        let pass = if expect_zero {
            max_mi <= 1e-12
        } else {
            max_mi > 0.0
        };
        println!(
            "scenario={} seeds={} max_mi={} {}",
            scenario.name(),
            a.seeds,
            max_mi,
            if pass { "PASS" } else { "FAIL" }
        );
        outcomes.push(VerifyOutcome {
            scenario: scenario.name(),
            seeds: a.seeds,
            max_mi,
            expect_zero,
            pass,
        });
    }
    if let Some(p) = &a.out {
        if !keep_existing(p, a.force) {
            write_text(p, &to_pretty_json(&outcomes))?;
        }
    }
    if outcomes.iter().all(|o| o.pass) {
        Ok(())
    } else {
        Err(SmileError::numeric(
            "semantic invariance violated in a category-blind scenario",
        ))
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    if keep_existing(&a.out, a.force) {
        print!(
            "{}",
            std::fs::read_to_string(&a.out)
                .map_err(|e| SmileError::io(format!("read {}", a.out.display()), e))?
        );
        return Ok(());
    }
    let base = resolve_config(a.config.as_deref(), &a.overrides)?;
    let configs: Vec<TrainConfig> = a
        .lambdas
        .iter()
        .map(|&lambda_sil| TrainConfig {
            lambda_sil,
            ..base.clone()
        })
        .collect();
    let ds = load_dataset(&a.data)?;
    let report = invariance_sweep(&ds, &configs)?;
    write_text(&a.out, &report.to_csv())?;
    let correlations = serde_json::json!({
        "rho_acc": report.rho_acc,
        "rho_car": report.rho_car,
        "rho_nrmse": report.rho_nrmse,
        "csv": a.out.display().to_string(),
    });
    println!("{}", serde_json::to_string_pretty(&correlations).expect("json"));
    Ok(())
}

/// Relative error between analytic and central-difference gradients of one
/// loss component, maximized over a stride of parameters.
fn component_max_rel_err(
    model: &Model,
    batch: &Batch,
    centers: &Array2<f64>,
    weights: &LossWeights,
    component: usize,
) -> Result<f64> {
    let build = |tape: &mut Tape, model: &Model, mv: &crate::network::ModelVars| -> Result<crate::autodiff::Var> {
        match component {
            0 => {
                let zs = encode_views(tape, model, mv, batch)?;
                dar_loss(tape, model, mv, batch, &zs)
            }
            1 | 2 => {
                let zs = encode_views(tape, model, mv, batch)?;
                let cs = soft_assignments(tape, &zs, centers, weights.tau_assign)?;
                let (sil_s, sil_v) = sil_terms_on_tape(tape, &cs)?;
                Ok(if component == 1 { sil_s } else { sil_v })
            }
            3 => {
                let zs = encode_views(tape, model, mv, batch)?;
                Ok(ccl_loss(tape, &zs, &batch.pairs, weights.tau_ccl)?.0)
            }
            _ => Ok(batch_loss(tape, model, mv, batch, Some(centers), weights)?.total),
        }
    };
    let (_, analytic) = grad(model, |tape, mv| build(tape, model, mv))?;

    let value_at = |params: &[f64]| -> Result<f64> {
        let m = Model::with_params(model.config.clone(), params.to_vec())?;
        let mut tape = Tape::new();
        let mv = m.bind(&mut tape);
        let var = build(&mut tape, &m, &mv)?;
        Ok(tape.scalar(var))
    };
    // Probe every coordinate and compare in the max-norm: each central
    // difference carries absolute noise on the order of eps*|f|/h, so a
    // per-coordinate quotient would turn near-zero coordinates (where loss
    // terms cancel) into spurious failures. Scaling by the gradient's
    // largest coordinate keeps full sensitivity to real gradient bugs,
    // which perturb coordinates at the gradient's own scale.
    let h = 1e-5;
    let mut params = model.params.clone();
    let mut numeric = vec![0.0f64; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let up = value_at(&params)?;
        params[i] = orig - h;
        let down = value_at(&params)?;
        params[i] = orig;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let scale = analytic
        .iter()
        .chain(&numeric)
        .fold(1e-8f64, |m, x| m.max(x.abs()));
    let max_rel = numeric
        .iter()
        .zip(&analytic)
        .fold(0.0f64, |m, (n, a)| m.max((n - a).abs() / scale));
    Ok(max_rel)
}

/// Compare reverse-mode gradients of every loss component (and the total)
/// against central finite differences on a random 16-instance batch drawn
/// from a fresh random dataset. Returns `(component name, max relative
/// error over all parameters)` per component. Shared by the `gradcheck`
/// subcommand and the acceptance suite.
pub fn gradient_check(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let ds = make_synthetic(32, 3, 4, &[5, 4], 0.1, seed)?;
    let config = TrainConfig {
        k: Some(3),
        seed,
        adaption_dim: 8,
        encoder_hidden: vec![8],
        latent_dim: 4,
        decoder_hidden: vec![8],
        ..TrainConfig::default()
    };
    let model = Model::init(config.model_config(&ds.dims()))?;

    let mut chosen: Vec<usize> = (0..ds.n()).collect();
    KeyRng::new(seed, &[0x6762]).shuffle(&mut chosen);
    chosen.truncate(16);
    chosen.sort_unstable();
    let b = chosen.len();

    let views = (0..ds.n_views())
        .map(|v| {
            let mut x = Array2::zeros((b, ds.views[v].ncols()));
            for (local, &i) in chosen.iter().enumerate() {
                x.row_mut(local).assign(&ds.views[v].row(i));
            }
            ViewBatch { x, instances: chosen.clone() }
        })
        .collect::<Vec<_>>();
    let mut pairs = Vec::new();
    for v1 in 0..ds.n_views() {
        for v2 in 0..ds.n_views() {
            if v1 != v2 {
                pairs.push(PairAnchors {
                    v1,
                    v2,
                    rows: (0..b).map(|i| (i, i)).collect(),
                });
            }
        }
    }
    let batch = Batch { views, pairs };

    let zs = encode_all(&model, &ds)?;
    let mut pool = Array2::zeros((b * ds.n_views(), config.latent_dim));
    for (v, z) in zs.iter().enumerate() {
        for (local, &i) in chosen.iter().enumerate() {
            pool.row_mut(v * b + local).assign(&z.row(i));
        }
    }
    let centers = kmeans(&pool, 3, mix(seed, &[0x6763]))?.centers;
    let weights = config.weights();

    ["dar", "sil_s", "sil_v", "ccl", "total"]
        .iter()
        .enumerate()
        .map(|(component, name)| {
            component_max_rel_err(&model, &batch, &centers, &weights, component).map(|rel| (*name, rel))
        })
        .collect()
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut worst = 0.0f64;
    for (name, rel) in gradient_check(a.seed)? {
        println!("component={name} max_rel_err={rel:.3e}");
        worst = worst.max(rel);
    }
    if worst < a.tol {
        println!("gradcheck PASS (worst {worst:.3e} < tol {:e})", a.tol);
        Ok(())
    } else {
        Err(SmileError::numeric(format!(
            "gradcheck FAIL: worst relative error {worst:.3e} >= tol {:e}",
            a.tol
        )))
    }
}

#[derive(Serialize)]
struct RunSummary {
    epochs: usize,
    config_hash: String,
    config: TrainConfig,
    final_loss: crate::losses::LossReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
}

fn read_history(dir: &Path) -> Result<Vec<EpochRecord>> {
    let path = dir.join("history.jsonl");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| SmileError::io(format!("read {}", path.display()), e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| SmileError::Parse {
                file: path.display().to_string(),
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let (config, _) = load_run(&a.run)?;
    let history = read_history(&a.run)?;
    let last = history
        .last()
        .ok_or_else(|| SmileError::argument("run has an empty history"))?;
    let metrics_path = a.run.join("metrics.json");
    let metrics: Option<MetricsReport> = if metrics_path.exists() {
        let text = std::fs::read_to_string(&metrics_path)
            .map_err(|e| SmileError::io(format!("read {}", metrics_path.display()), e))?;
        Some(serde_json::from_str(&text).map_err(|e| SmileError::Parse {
            file: metrics_path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?)
    } else {
        None
    };
    let summary = RunSummary {
        epochs: history.len(),
        config_hash: config.hash(),
        config,
        final_loss: last.loss,
        metrics,
    };
    let json = to_pretty_json(&summary);
    if let Some(p) = &a.out {
        if !keep_existing(p, a.force) {
            write_text(p, &json)?;
        }
    }
    if let Some(p) = &a.history_csv {
        if !keep_existing(p, a.force) {
            let mut csv = String::from("epoch,dar,sil_s,sil_v,ccl,total,inertia\n");
            for r in &history {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.epoch,
                    r.loss.dar,
                    r.loss.sil_s,
                    r.loss.sil_v,
                    r.loss.ccl,
                    r.loss.total,
                    r.inertia.map(|x| x.to_string()).unwrap_or_default()
                ));
            }
            write_text(p, &csv)?;
        }
    }
    print!("{json}");
    Ok(())
}
