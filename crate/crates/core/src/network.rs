//! Shared-encoder / multi-branch-decoder network.
//!
//! Per view v the encode path is
//!   adaption_v: D_v -> adaption_dim   (view-specific affine, leaky rectifier)
//!   encoder:    adaption_dim -> ... -> latent_dim   (shared across views)
//! and each view owns a decoder branch latent_dim -> ... -> D_v. Hidden
//! layers use a leaky rectifier (slope 0.2 by default); the latent layer and
//! every decoder output layer are linear.
//!
//! Parameters live in one flat `Vec<f64>` described by a layout table, so
//! optimizers and checkpoints treat the model as a single vector. Weights
//! are stored input-major (`rows = fan_in`, `cols = fan_out`).

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{ArrayView2, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SmileError};
use crate::rng::{fnv1a64, KeyRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Linear,
    Leaky,
}

/// Architecture description; two models with equal configs have identical
/// layouts, and equal configs + seeds have identical initial weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub view_dims: Vec<usize>,
    pub adaption_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub hidden_slope: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(view_dims: Vec<usize>, seed: u64) -> Self {
        ModelConfig {
            view_dims,
            adaption_dim: 128,
            encoder_hidden: vec![128],
            latent_dim: 32,
            decoder_hidden: vec![128, 128],
            hidden_slope: 0.2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.view_dims.is_empty() {
            return Err(SmileError::argument("model needs at least one view"));
        }
        if self.view_dims.iter().any(|&d| d == 0) {
            return Err(SmileError::argument("view dimensions must be positive"));
        }
        for (what, dim) in [("adaption_dim", self.adaption_dim), ("latent_dim", self.latent_dim)] {
            if dim == 0 {
                return Err(SmileError::argument(format!("{what} must be positive")));
            }
        }
        if self.encoder_hidden.iter().chain(&self.decoder_hidden).any(|&d| d == 0) {
            return Err(SmileError::argument("hidden widths must be positive"));
        }
        if !self.hidden_slope.is_finite() {
            return Err(SmileError::argument("hidden_slope must be finite"));
        }
        Ok(())
    }
}

/// One parameter tensor inside the flat vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Affine layer as (weight slot, bias slot, activation).
#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    act: Activation,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    layout: Vec<ParamSlot>,
    adaption: Vec<Layer>,
    encoder: Vec<Layer>,
    decoders: Vec<Vec<Layer>>,
}

/// Tape bindings of every parameter slot, in layout order.
pub struct ModelVars {
    slots: Vec<Var>,
}

struct LayoutBuilder {
    slots: Vec<ParamSlot>,
    next: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        LayoutBuilder { slots: Vec::new(), next: 0 }
    }

    fn layer(&mut self, name: &str, d_in: usize, d_out: usize, act: Activation) -> Layer {
        let w = self.slot(format!("{name}.w"), d_in, d_out);
        let b = self.slot(format!("{name}.b"), 1, d_out);
        Layer { w, b, act }
    }

    fn slot(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let slot = ParamSlot { name, offset: self.next, rows, cols };
        self.next += slot.len();
        self.slots.push(slot);
        self.slots.len() - 1
    }

    /// Layer chain over a dim sequence; every layer but the last uses `act`.
    fn chain(&mut self, prefix: &str, dims: &[usize], act: Activation) -> Vec<Layer> {
        (0..dims.len() - 1)
            .map(|l| {
                let a = if l + 1 == dims.len() - 1 { Activation::Linear } else { act };
                self.layer(&format!("{prefix}.{l}"), dims[l], dims[l + 1], a)
            })
            .collect()
    }
}

/// Initialization key for a parameter slot: the slot name with the view
/// index stripped from the leading component ("adaption3.w" -> "adaption.w",
/// "decoder2.1.w" -> "decoder.1.w"). Keying draws by role + shape instead of
/// per-view identity gives every same-shaped view branch an identical start
/// (symmetric initialization). With no paired samples, nothing in the losses
/// prefers one cross-view cluster correspondence over another, so an
/// asymmetric start would freeze in an arbitrary permutation; a symmetric
/// start lets the data itself decide how views co-embed.
fn init_role(name: &str) -> String {
    let head = name.chars().take_while(|c| c.is_ascii_alphabetic()).count();
    let digits = name[head..].chars().take_while(|c| c.is_ascii_digit()).count();
    format!("{}{}", &name[..head], &name[head + digits..])
}

impl Model {
    /// Build the layout and draw initial weights: uniform on
    /// (-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero. Each slot draws from
    /// a stream keyed by its role and shape (see [`init_role`]), so
    /// initialization is order-independent and same-shaped view branches
    /// start identical.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = LayoutBuilder::new();

        let adaption = config
            .view_dims
            .iter()
            .enumerate()
            .map(|(v, &d)| b.layer(&format!("adaption{v}"), d, config.adaption_dim, Activation::Leaky))
            .collect();

        let mut enc_dims = vec![config.adaption_dim];
        enc_dims.extend(&config.encoder_hidden);
        enc_dims.push(config.latent_dim);
        let encoder = b.chain("encoder", &enc_dims, Activation::Leaky);

        let decoders = config
            .view_dims
            .iter()
            .enumerate()
            .map(|(v, &d)| {
                let mut dims = vec![config.latent_dim];
                dims.extend(&config.decoder_hidden);
                dims.push(d);
                b.chain(&format!("decoder{v}"), &dims, Activation::Leaky)
            })
            .collect();

        let mut params = vec![0.0; b.next];
        for slot in &b.slots {
            if slot.name.ends_with(".w") {
                let bound = 1.0 / (slot.rows as f64).sqrt();
                let role = fnv1a64(init_role(&slot.name).as_bytes());
                let mut rng =
                    KeyRng::new(config.seed, &[0x1417, role, slot.rows as u64, slot.cols as u64]);
                for p in &mut params[slot.offset..slot.offset + slot.len()] {
                    *p = rng.uniform_in(-bound, bound);
                }
            }
        }

        Ok(Model { config, params, layout: b.slots, adaption, encoder, decoders })
    }

    /// Rebuild a model around an existing parameter vector.
    pub fn with_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        let mut model = Model::init(config)?;
        if params.len() != model.params.len() {
            return Err(SmileError::config(format!(
                "parameter vector has {} entries, layout requires {}",
                params.len(),
                model.params.len()
            )));
        }
        model.params = params;
        Ok(model)
    }

    pub fn layout(&self) -> &[ParamSlot] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn n_views(&self) -> usize {
        self.config.view_dims.len()
    }

    pub fn slot_named(&self, name: &str) -> Option<&ParamSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    /// Overwrite one named tensor (test and tooling helper).
    pub fn set_slot(&mut self, name: &str, values: &Array2<f64>) -> Result<()> {
        let slot = self
            .slot_named(name)
            .ok_or_else(|| SmileError::argument(format!("no parameter slot named {name}")))?
            .clone();
        if values.dim() != (slot.rows, slot.cols) {
            return Err(SmileError::argument(format!(
                "slot {name} expects {}x{}",
                slot.rows, slot.cols
            )));
        }
        for (dst, src) in self.params[slot.offset..slot.offset + slot.len()]
            .iter_mut()
            .zip(values.iter())
        {
            *dst = *src;
        }
        Ok(())
    }

    fn slot_view(&self, idx: usize) -> ArrayView2<'_, f64> {
        let s = &self.layout[idx];
        ArrayView2::from_shape((s.rows, s.cols), &self.params[s.offset..s.offset + s.len()])
            .expect("layout shape is consistent")
    }

    fn apply_layer(&self, x: &Array2<f64>, layer: &Layer) -> Array2<f64> {
        let mut y = x.dot(&self.slot_view(layer.w));
        let bias = self.slot_view(layer.b);
        let bias = bias.row(0);
        for mut row in y.rows_mut() {
            row += &bias;
        }
        if layer.act == Activation::Leaky {
            let slope = self.config.hidden_slope;
            y.mapv_inplace(|v| if v > 0.0 { v } else { slope * v });
        }
        y
    }

    fn check_view(&self, v: usize) -> Result<()> {
        if v >= self.n_views() {
            return Err(SmileError::argument(format!(
                "view index {v} out of range (model has {} views)",
                self.n_views()
            )));
        }
        Ok(())
    }

    fn check_input(x: &Array2<f64>, cols: usize, what: &str) -> Result<()> {
        if x.ncols() != cols {
            return Err(SmileError::argument(format!(
                "{what} expects {cols} columns, got {}",
                x.ncols()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SmileError::numeric(format!("non-finite input to {what}")));
        }
        Ok(())
    }

    /// Latent codes for a batch of view-v samples (rows).
    pub fn encode(&self, x: &Array2<f64>, v: usize) -> Result<Array2<f64>> {
        self.check_view(v)?;
        Self::check_input(x, self.config.view_dims[v], "encode")?;
        let mut y = self.apply_layer(x, &self.adaption[v]);
        for layer in &self.encoder {
            y = self.apply_layer(&y, layer);
        }
        Ok(y)
    }

    /// Reconstructions of latent codes through the view-v decoder branch.
    pub fn decode(&self, z: &Array2<f64>, v: usize) -> Result<Array2<f64>> {
        self.check_view(v)?;
        Self::check_input(z, self.config.latent_dim, "decode")?;
        let mut y = z.clone();
        for layer in &self.decoders[v] {
            y = self.apply_layer(&y, layer);
        }
        Ok(y)
    }

    /// Register every parameter tensor on a tape.
    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        let slots = self
            .layout
            .iter()
            .map(|s| {
                let m = Array2::from_shape_vec(
                    (s.rows, s.cols),
                    self.params[s.offset..s.offset + s.len()].to_vec(),
                )
                .expect("layout shape is consistent");
                tape.param(m, s.offset, s.name.clone())
            })
            .collect();
        ModelVars { slots }
    }

    fn apply_layer_on_tape(&self, tape: &mut Tape, mv: &ModelVars, x: Var, layer: &Layer) -> Var {
        let wx = tape.matmul(x, mv.slots[layer.w]);
        let y = tape.add_bias(wx, mv.slots[layer.b]);
        match layer.act {
            Activation::Leaky => tape.leaky_relu(y, self.config.hidden_slope),
            Activation::Linear => y,
        }
    }

    /// Differentiable encode; `x` is typically a tape constant.
    pub fn encode_on_tape(&self, tape: &mut Tape, mv: &ModelVars, x: Var, v: usize) -> Var {
        let mut y = self.apply_layer_on_tape(tape, mv, x, &self.adaption[v]);
        for layer in &self.encoder {
            y = self.apply_layer_on_tape(tape, mv, y, layer);
        }
        y
    }

    /// Differentiable decode through branch v.
    pub fn decode_on_tape(&self, tape: &mut Tape, mv: &ModelVars, z: Var, v: usize) -> Var {
        let mut y = z;
        for layer in &self.decoders[v] {
            y = self.apply_layer_on_tape(tape, mv, y, layer);
        }
        y
    }
}

/// Evaluate a scalar loss built from tape ops and return `(value, gradient)`
/// with the gradient laid out exactly like `model.params`.
pub fn grad<F>(model: &Model, build: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Tape, &ModelVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mv = model.bind(&mut tape);
    let loss = build(&mut tape, &mv)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        let culprit = tape
            .find_non_finite()
            .map(|v| tape.describe(v))
            .unwrap_or_else(|| "loss".to_string());
        return Err(SmileError::numeric(format!(
            "non-finite value in {culprit} during loss evaluation"
        )));
    }
    let mut g = vec![0.0; model.param_count()];
    tape.backward_params(loss, &mut g)?;
    if !g.iter().all(|v| v.is_finite()) {
        return Err(SmileError::numeric("non-finite gradient"));
    }
    Ok((value, g))
}

/// Optimizer moments, persisted verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: OptimizerState,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: OptimizerState { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 },
        }
    }

    pub fn with_state(lr: f64, state: OptimizerState) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, state }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.state.m.len());
        self.state.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.state.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.state.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

#[derive(Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    meta: CheckpointMeta,
    params: Vec<f64>,
    optimizer: OptimizerState,
}

pub fn save_checkpoint(path: &Path, model: &Model, opt: &OptimizerState, epoch: usize) -> Result<()> {
    let file = CheckpointFile {
        meta: CheckpointMeta { model: model.config.clone(), epoch },
        params: model.params.clone(),
        optimizer: opt.clone(),
    };
    let out = File::create(path)
        .map_err(|e| SmileError::io(format!("creating checkpoint {}", path.display()), e))?;
    serde_json::to_writer(BufWriter::new(out), &file)
        .map_err(|e| SmileError::io(format!("writing checkpoint {}", path.display()), std::io::Error::other(e)))?;
    Ok(())
}

/// Load a checkpoint; when `expected` is given, any architecture mismatch is
/// rejected rather than silently reinterpreted.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<(Model, OptimizerState, usize)> {
    let file = File::open(path)
        .map_err(|e| SmileError::io(format!("opening checkpoint {}", path.display()), e))?;
    let ckpt: CheckpointFile = serde_json::from_reader(BufReader::new(file)).map_err(|e| {
        SmileError::Parse {
            file: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        }
    })?;
    if let Some(expected) = expected {
        if *expected != ckpt.meta.model {
            return Err(SmileError::config(format!(
                "checkpoint {} was written for a different model spec",
                path.display()
            )));
        }
    }
    let model = Model::with_params(ckpt.meta.model.clone(), ckpt.params)?;
    if ckpt.optimizer.m.len() != model.param_count() || ckpt.optimizer.v.len() != model.param_count() {
        return Err(SmileError::config(format!(
            "checkpoint {} optimizer state does not match the parameter layout",
            path.display()
        )));
    }
    Ok((model, ckpt.optimizer, ckpt.meta.epoch))
}
