//! End-to-end training: a reconstruction warmup, per-epoch refresh of the
//! cluster centers by spherical k-means, mini-batch optimization of the
//! combined objective with Adam, and post-training evaluation through
//! latent-space recovery and final clustering.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, kmeans_best_of};
use crate::data::MultiViewDataset;
use crate::error::{Result, SmileError};
use crate::losses::{batch_loss, Batch, LossReport, LossWeights, PairAnchors, ViewBatch};
use crate::metrics::{self, fnv1a64_hex, MetricValues, MetricsReport};
use crate::network::{grad, load_checkpoint, save_checkpoint, Adam, Model, ModelConfig, OptimizerState};
use crate::recovery::{assemble_instance_features, decode_imputations, recover};
use crate::rng::{mix, KeyRng};

const TAG_CENTERS: u64 = 0x6570;
const TAG_SHUFFLE: u64 = 0x7368;
const TAG_FINAL_KMEANS: u64 = 0x666B;

/// Full training configuration. Deserializes from flat JSON with exactly
/// these field names; missing fields take the defaults, unknown fields are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Cluster count; `None` takes the category count of the dataset labels.
    pub k: Option<usize>,
    pub seed: u64,
    pub warmup_epochs: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_sil: f64,
    pub lambda_ccl: f64,
    pub gamma: f64,
    pub tau_assign: f64,
    pub tau_ccl: f64,
    pub k_impute: usize,
    pub kmeans_restarts: usize,
    pub adaption_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub hidden_slope: f64,
    /// Epochs (1-based) after which metric snapshots are recorded when the
    /// dataset carries ground truth.
    pub snapshot_epochs: Vec<usize>,
    /// Write a checkpoint every this many epochs (run-directory mode).
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: None,
            seed: 0,
            warmup_epochs: 50,
            max_epochs: 150,
            batch_size: 256,
            lr: 1e-3,
            lambda_sil: 0.04,
            lambda_ccl: 0.01,
            gamma: 5.0,
            tau_assign: 0.1,
            tau_ccl: 0.2,
            k_impute: 1,
            kmeans_restarts: 10,
            adaption_dim: 128,
            encoder_hidden: vec![128],
            latent_dim: 32,
            decoder_hidden: vec![128, 128],
            hidden_slope: 0.2,
            snapshot_epochs: vec![],
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.k {
            if k < 2 {
                return Err(SmileError::config("k must be at least 2"));
            }
        }
        if self.warmup_epochs > self.max_epochs {
            return Err(SmileError::config(format!(
                "warmup_epochs={} exceeds max_epochs={}",
                self.warmup_epochs, self.max_epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(SmileError::config("batch_size must be at least 2"));
        }
        for (name, t) in [("tau_assign", self.tau_assign), ("tau_ccl", self.tau_ccl)] {
            if !(t > 0.0) {
                return Err(SmileError::config(format!("{name}={t} must be positive")));
            }
        }
        if !(self.lr > 0.0) {
            return Err(SmileError::config("lr must be positive"));
        }
        for (name, w) in [
            ("lambda_sil", self.lambda_sil),
            ("lambda_ccl", self.lambda_ccl),
            ("gamma", self.gamma),
        ] {
            if !(w >= 0.0) {
                return Err(SmileError::config(format!("{name}={w} must be >= 0")));
            }
        }
        if self.k_impute == 0 {
            return Err(SmileError::config("k_impute must be positive"));
        }
        if self.kmeans_restarts == 0 {
            return Err(SmileError::config("kmeans_restarts must be positive"));
        }
        if self.checkpoint_every == Some(0) {
            return Err(SmileError::config("checkpoint_every must be positive"));
        }
        // Architecture fields are validated by the model configuration.
        self.model_config(&[1]).validate()
    }

    pub fn model_config(&self, view_dims: &[usize]) -> ModelConfig {
        ModelConfig {
            view_dims: view_dims.to_vec(),
            adaption_dim: self.adaption_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            latent_dim: self.latent_dim,
            decoder_hidden: self.decoder_hidden.clone(),
            hidden_slope: self.hidden_slope,
            seed: self.seed,
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_sil: self.lambda_sil,
            lambda_ccl: self.lambda_ccl,
            gamma: self.gamma,
            tau_assign: self.tau_assign,
            tau_ccl: self.tau_ccl,
        }
    }

    /// Cluster count from the config, falling back to the dataset labels.
    pub fn resolve_k(&self, ds: &MultiViewDataset) -> Result<usize> {
        match self.k.or_else(|| ds.k()) {
            Some(k) if k >= 2 => Ok(k),
            Some(k) => Err(SmileError::config(format!("k={k} must be at least 2"))),
            None => Err(SmileError::config(
                "cluster count unknown: set k or provide labels",
            )),
        }
    }

    /// Stable fingerprint of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        fnv1a64_hex(&json)
    }
}

/// One epoch of history: mean loss components over the epoch's batches, the
/// center-refresh inertia (post-warmup only), and an optional metric
/// snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossReport,
    /// Total anchor count over the epoch's contrastive terms.
    pub anchors: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inertia: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricValues>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// Encode the observed rows of every view. Returns per-view N×d latent
/// matrices whose unobserved rows are zero and must not be read.
pub fn encode_all(model: &Model, ds: &MultiViewDataset) -> Result<Vec<Array2<f64>>> {
    let n = ds.n();
    let mut zs = Vec::with_capacity(ds.n_views());
    for v in 0..ds.n_views() {
        let rows = ds.observed_rows(v);
        let mut z = Array2::zeros((n, model.config.latent_dim));
        if !rows.is_empty() {
            let mut x = Array2::zeros((rows.len(), ds.views[v].ncols()));
            for (r, &p) in rows.iter().enumerate() {
                x.row_mut(r).assign(&ds.views[v].row(p));
            }
            let sub = model.encode(&x, v)?;
            for (r, &p) in rows.iter().enumerate() {
                z.row_mut(p).assign(&sub.row(r));
            }
        }
        zs.push(z);
    }
    Ok(zs)
}

/// Pool every observed latent row across views into one matrix.
fn pooled_latents(zs: &[Array2<f64>], ds: &MultiViewDataset) -> Array2<f64> {
    let total: usize = (0..ds.n_views()).map(|v| ds.observed_rows(v).len()).sum();
    let d = zs[0].ncols();
    let mut pool = Array2::zeros((total, d));
    let mut r = 0;
    for (v, z) in zs.iter().enumerate() {
        for p in ds.observed_rows(v) {
            pool.row_mut(r).assign(&z.row(p));
            r += 1;
        }
    }
    pool
}

/// Assemble one training batch from a chunk of instance positions.
fn build_batch(ds: &MultiViewDataset, chunk: &[usize]) -> Batch {
    let m = ds.n_views();
    let mut views = Vec::with_capacity(m);
    let mut row_of: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(m);
    for v in 0..m {
        let instances: Vec<usize> = chunk.iter().copied().filter(|&p| ds.obs[p][v]).collect();
        let mut x = Array2::zeros((instances.len(), ds.views[v].ncols()));
        let mut map = BTreeMap::new();
        for (r, &p) in instances.iter().enumerate() {
            x.row_mut(r).assign(&ds.views[v].row(p));
            map.insert(p, r);
        }
        views.push(ViewBatch { x, instances });
        row_of.push(map);
    }
    let mut pairs = Vec::new();
    for v1 in 0..m {
        for v2 in 0..m {
            if v1 == v2 {
                continue;
            }
            let rows: Vec<(usize, usize)> = chunk
                .iter()
                .filter(|&&p| ds.aligned[p] && ds.obs[p][v1] && ds.obs[p][v2])
                .map(|p| (row_of[v1][p], row_of[v2][p]))
                .collect();
            if !rows.is_empty() {
                pairs.push(PairAnchors { v1, v2, rows });
            }
        }
    }
    Batch { views, pairs }
}

/// Training state that can be checkpointed and resumed.
pub struct TrainState {
    pub model: Model,
    pub optimizer: OptimizerState,
    /// Number of completed epochs.
    pub epoch: usize,
}

/// Run Algorithm-style training from scratch.
pub fn train(ds: &MultiViewDataset, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_from(ds, config, None, &mut |_, _| Ok(()))
}

/// Training with an optional resume state and a per-epoch callback
/// (history streaming, periodic checkpoints). The callback receives the
/// finished epoch's record and the current state.
pub fn train_from(
    ds: &MultiViewDataset,
    config: &TrainConfig,
    start: Option<TrainState>,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    ds.validate()?;
    let model_config = config.model_config(&ds.dims());
    let needs_centers = config.max_epochs > config.warmup_epochs;
    let k = if needs_centers { Some(config.resolve_k(ds)?) } else { None };

    let (mut model, opt_state, start_epoch) = match start {
        None => (Model::init(model_config.clone())?, None, 0),
        Some(state) => {
            if state.model.config != model_config {
                return Err(SmileError::config(
                    "resume state was trained with a different model configuration",
                ));
            }
            (state.model, Some(state.optimizer), state.epoch)
        }
    };
    let mut adam = match opt_state {
        None => Adam::new(config.lr, model.param_count()),
        Some(s) => Adam::with_state(config.lr, s),
    };
    let weights = config.weights();
    let n = ds.n();
    let mut history = TrainHistory::default();

    for epoch in (start_epoch + 1)..=config.max_epochs {
        // Refresh cluster centers on all pooled observed latents once the
        // warmup has ended; they stay constant within the epoch.
        let (centers, inertia) = if epoch > config.warmup_epochs {
            let zs = encode_all(&model, ds)?;
            let pool = pooled_latents(&zs, ds);
            let fit = kmeans(&pool, k.expect("resolved above"), mix(config.seed, &[TAG_CENTERS, epoch as u64]))
                .map_err(|e| SmileError::numeric(format!("epoch {epoch} center refresh: {e}")))?;
            (Some(fit.centers), Some(fit.inertia))
        } else {
            (None, None)
        };

        let mut order: Vec<usize> = (0..n).collect();
        KeyRng::new(config.seed, &[TAG_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let mut sums = LossReport::default();
        let mut batches = 0usize;
        let mut anchors = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = build_batch(ds, chunk);
            let mut report = LossReport::default();
            let mut batch_anchors = 0;
            let (_, g) = grad(&model, |tape, mv| {
                let out = batch_loss(tape, &model, mv, &batch, centers.as_ref(), &weights)?;
                report = out.report;
                batch_anchors = out.anchors;
                Ok(out.total)
            })
            .map_err(|e| SmileError::numeric(format!("epoch {epoch} batch {b}: {e}")))?;
            adam.step(&mut model.params, &g);
            sums.dar += report.dar;
            sums.sil_s += report.sil_s;
            sums.sil_v += report.sil_v;
            sums.ccl += report.ccl;
            sums.total += report.total;
            anchors += batch_anchors;
            batches += 1;
        }
        let scale = 1.0 / batches as f64;
        let loss = LossReport {
            dar: sums.dar * scale,
            sil_s: sums.sil_s * scale,
            sil_v: sums.sil_v * scale,
            ccl: sums.ccl * scale,
            total: sums.total * scale,
        };

        let metrics = if config.snapshot_epochs.contains(&epoch) && ds.labels.is_some() {
            Some(evaluate_values(&model, ds, config)?)
        } else {
            None
        };

        let record = EpochRecord {
            epoch,
            loss,
            anchors,
            inertia,
            metrics,
        };
        log::info!(
            "epoch {epoch}/{}: total={:.6} dar={:.6} sil_s={:.6} sil_v={:.6} ccl={:.6}",
            config.max_epochs,
            loss.total,
            loss.dar,
            loss.sil_s,
            loss.sil_v,
            loss.ccl
        );
        let state = TrainState {
            model,
            optimizer: adam.state.clone(),
            epoch,
        };
        on_epoch(&record, &state)?;
        model = state.model;
        history.epochs.push(record);
    }
    Ok((model, history))
}

/// Encode, recover, assemble, cluster, and score one dataset with a trained
/// model. Metrics appear only where the matching truth exists: labels for
/// acc/nmi/ari, labels + permutation truth for car, hidden rows for nrmse.
pub fn evaluate_values(
    model: &Model,
    ds: &MultiViewDataset,
    config: &TrainConfig,
) -> Result<MetricValues> {
    ds.validate()?;
    let k = config.resolve_k(ds)?;
    let zs = encode_all(model, ds)?;
    let recovery = recover(&zs, &ds.obs, &ds.aligned, config.k_impute)?;
    let features = assemble_instance_features(&zs, &ds.obs, &ds.aligned, &recovery)?;
    let fit = kmeans_best_of(
        &features,
        k,
        mix(config.seed, &[TAG_FINAL_KMEANS]),
        config.kmeans_restarts,
    )?;

    let (mut acc, mut nmi, mut ari, mut car) = (None, None, None, None);
    if let Some(labels) = &ds.labels {
        acc = Some(metrics::acc(&fit.labels, labels)?);
        nmi = Some(metrics::nmi(&fit.labels, labels)?);
        ari = Some(metrics::ari(&fit.labels, labels)?);
        if !recovery.realignments.is_empty() {
            if let Some(owners) = (0..ds.n_views())
                .map(|v| ds.row_owner(v))
                .collect::<Option<Vec<_>>>()
            {
                let anchor: Vec<usize> = recovery
                    .realignments
                    .iter()
                    .map(|r| labels[r.position])
                    .collect();
                let counterpart: Vec<usize> = recovery
                    .realignments
                    .iter()
                    .map(|r| labels[owners[r.view][r.matched_row]])
                    .collect();
                car = Some(metrics::car(&counterpart, &anchor)?);
            }
        }
    }

    let nrmse = match &ds.hidden {
        Some(hidden) if !recovery.imputations.is_empty() => {
            let decoded = decode_imputations(model, &recovery.imputations)?;
            let mut imputed = Vec::new();
            let mut truth = Vec::new();
            for (i, v, x) in &decoded {
                let t = hidden.get(&(*i, *v)).ok_or_else(|| {
                    SmileError::invariant(format!("no hidden truth for imputed slot ({i},{v})"))
                })?;
                imputed.extend_from_slice(x);
                truth.extend_from_slice(t);
            }
            Some(metrics::nrmse(&imputed, &truth)?)
        }
        _ => None,
    };

    Ok(MetricValues {
        acc,
        nmi,
        ari,
        car,
        nrmse,
    })
}

/// [`evaluate_values`] wrapped with run provenance.
pub fn evaluate(model: &Model, ds: &MultiViewDataset, config: &TrainConfig) -> Result<MetricsReport> {
    let values = evaluate_values(model, ds, config)?;
    let (eta, zeta) = ds.rates();
    Ok(MetricsReport {
        values,
        seed: config.seed,
        config_hash: config.hash(),
        eta,
        zeta,
    })
}

/// Train into a run directory: writes `config.json`, streams
/// `history.jsonl` one record per epoch, and keeps `checkpoint.json`
/// current (every `checkpoint_every` epochs and at the end).
pub fn train_into_dir(
    ds: &MultiViewDataset,
    config: &TrainConfig,
    dir: &Path,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    std::fs::create_dir_all(dir)
        .map_err(|e| SmileError::io(format!("create run directory {}", dir.display()), e))?;
    let config_json =
        serde_json::to_string_pretty(config).expect("config serializes") + "\n";
    std::fs::write(dir.join("config.json"), config_json)
        .map_err(|e| SmileError::io("write config.json", e))?;

    let history_path = dir.join("history.jsonl");
    let mut history_file = std::fs::File::create(&history_path)
        .map_err(|e| SmileError::io(format!("create {}", history_path.display()), e))?;
    let checkpoint_path = dir.join("checkpoint.json");

    let (model, history) = train_from(ds, config, None, &mut |record, state| {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(history_file, "{line}")
            .map_err(|e| SmileError::io(format!("append {}", history_path.display()), e))?;
        let due = config
            .checkpoint_every
            .is_some_and(|every| record.epoch % every == 0);
        if due || record.epoch == config.max_epochs {
            save_checkpoint(&checkpoint_path, &state.model, &state.optimizer, state.epoch)?;
        }
        Ok(())
    })?;
    Ok((model, history))
}

/// Load the model (and training state) saved by [`train_into_dir`].
pub fn load_run(dir: &Path) -> Result<(TrainConfig, TrainState)> {
    let config_path = dir.join("config.json");
    let text = std::fs::read_to_string(&config_path)
        .map_err(|e| SmileError::io(format!("read {}", config_path.display()), e))?;
    let config: TrainConfig = serde_json::from_str(&text).map_err(|e| SmileError::Parse {
        file: config_path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let (model, optimizer, epoch) = load_checkpoint(&dir.join("checkpoint.json"), None)?;
    Ok((
        config,
        TrainState {
            model,
            optimizer,
            epoch,
        },
    ))
}
