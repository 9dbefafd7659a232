//! Fully connected ReLU regression networks with minibatch training.
//!
//! Networks map 50-dimensional acoustic vectors to either EigenTongue
//! coefficients or raw pixels. Training minimizes mean squared error in
//! standardized target space with SGD, RMSProp or Adam, seeded shuffling and
//! early stopping on validation loss; the parameters of the best validation
//! epoch are returned. All updates run in a fixed order, so a fixed seed
//! reproduces a training run bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acoustic::AcousticFeatureVector;
use crate::binio::*;
use crate::eigentongue::{reconstruct, EigenTongueBasis, EtCoefficients};
use crate::error::{Error, Result};
use crate::image::{devectorize_clamped, Frame};

const MLP_MAGIC: &[u8; 4] = b"MLPR";

/// Smallest standard deviation a scaler will divide by.
const STD_FLOOR: f64 = 1e-12;

/// What the network output represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Raw pixel intensities, devectorized to a square frame.
    Pixels,
    /// EigenTongue coefficients, reconstructed through a basis.
    Et,
}

impl TargetMode {
    fn tag(&self) -> u8 {
        match self {
            TargetMode::Pixels => 0,
            TargetMode::Et => 1,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(TargetMode::Pixels),
            1 => Ok(TargetMode::Et),
            other => Err(Error::Format(format!("unknown target mode tag {other}"))),
        }
    }
}

/// Architecture of a network: layer widths only, since hidden activations
/// are always rectifiers and the output is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = MlpSpec { input_dim, hidden_layers, output_dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Validation("input and output dimensions must be >= 1".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::Validation("need at least one hidden layer".into()));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::Validation("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-dimension standardization parameters.
///
/// `std` stores the effective divisor: dimensions with (near-)zero variance
/// are floored to 1 so they pass through centered, and the inverse transform
/// uses the same divisor, keeping the round trip exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Scaler { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Population mean/std per column.
    pub fn fit(rows: &Array2<f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Size("cannot fit a scaler on an empty matrix".into()));
        }
        let n = rows.nrows() as f64;
        let mean = rows.mean_axis(Axis(0)).expect("nonempty");
        let mut std = vec![0.0; rows.ncols()];
        for row in rows.rows() {
            for (d, (&v, &m)) in row.iter().zip(mean.iter()).enumerate() {
                std[d] += (v - m) * (v - m);
            }
        }
        for s in &mut std {
            *s = (*s / n).sqrt();
            if *s < STD_FLOOR {
                *s = 1.0;
            }
        }
        Ok(Scaler { mean: mean.to_vec(), std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    pub fn transform_rows(&self, rows: &Array2<f64>) -> Array2<f64> {
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.std[d];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out x in`.
    weights: Array2<f64>,
    bias: Array1<f64>,
}

/// Parameter-shaped gradient set returned by [`MlpModel::loss_and_gradient`].
#[derive(Debug, Clone)]
pub struct Gradients {
    layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    /// Flattened view in the same order as [`MlpModel::get_param`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Optimizer family and hyperparameters for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::RmsProp),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 100,
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be >= 1".into()));
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Validation("early-stop patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Validation("max epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss trajectory of one training run. Losses are in standardized target
/// space; `best_epoch` indexes into the per-epoch vectors.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub best_epoch: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    pub input_scaler: Scaler,
    pub target_scaler: Scaler,
    pub target_mode: TargetMode,
}

impl MlpModel {
    /// He-uniform initialization: weights uniform in `+-sqrt(6 / fan_in)`,
    /// biases zero, identity scalers. Deterministic for a fixed seed.
    pub fn init(spec: &MlpSpec, target_mode: TargetMode, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dims = vec![spec.input_dim];
        dims.extend_from_slice(&spec.hidden_layers);
        dims.push(spec.output_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-bound..bound));
                Layer { weights, bias: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(MlpModel {
            layers,
            input_scaler: Scaler::identity(spec.input_dim),
            target_scaler: Scaler::identity(spec.output_dim),
            target_mode,
        })
    }

    pub fn spec(&self) -> MlpSpec {
        let input_dim = self.layers[0].weights.ncols();
        let output_dim = self.layers.last().unwrap().weights.nrows();
        let hidden_layers = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weights.nrows())
            .collect();
        MlpSpec { input_dim, hidden_layers, output_dim }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    /// Attaches the standardization parameters used for raw-space prediction.
    pub fn set_scalers(&mut self, input: Scaler, target: Scaler) -> Result<()> {
        if input.dim() != self.input_dim() || target.dim() != self.output_dim() {
            return Err(Error::Size("scaler dimensions do not match the network".into()));
        }
        self.input_scaler = input;
        self.target_scaler = target;
        Ok(())
    }

    /// Forward pass on a raw feature vector: the input scaler is applied
    /// internally and the output is mapped back through the target scaler.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Size(format!(
                "input has {} values, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite network input".into()));
        }
        let mut h = Array1::from_vec(self.input_scaler.transform_vec(x));
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.weights.dot(&h) + &layer.bias;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(|v| v.max(0.0));
            }
        }
        Ok(self.target_scaler.inverse_vec(h.as_slice().expect("contiguous")))
    }

    /// Batched forward in standardized space, keeping every activation.
    fn forward_batch(&self, x_std: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x_std.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights.t());
            for mut row in z.rows_mut() {
                row += &layer.bias;
            }
            if i + 1 < self.layers.len() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        activations
    }

    /// Mean squared error of a standardized batch, averaged over batch rows
    /// and output dimensions.
    pub fn loss(&self, x_std: &Array2<f64>, y_std: &Array2<f64>) -> Result<f64> {
        self.check_batch(x_std, y_std)?;
        let mut total = 0.0;
        // Bounded-size chunks keep the activation workspace small.
        for (xc, yc) in chunked(x_std, y_std, 2048) {
            let pred = self.forward_batch(&xc.to_owned());
            let diff = pred.last().unwrap() - &yc;
            total += diff.iter().map(|d| d * d).sum::<f64>();
        }
        Ok(total / (x_std.nrows() * self.output_dim()) as f64)
    }

    /// MSE loss and backpropagated gradients for a standardized batch.
    /// The rectifier subgradient at exactly zero is taken as zero.
    pub fn loss_and_gradient(
        &self,
        x_std: &Array2<f64>,
        y_std: &Array2<f64>,
    ) -> Result<(f64, Gradients)> {
        self.check_batch(x_std, y_std)?;
        let batch = x_std.nrows();
        let activations = self.forward_batch(x_std);
        let output = activations.last().unwrap();
        let scale = 1.0 / (batch * self.output_dim()) as f64;
        let diff = output - y_std;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() * scale;
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }

        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        let mut delta = diff * (2.0 * scale);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let grad_w = delta.t().dot(&activations[i]);
            let grad_b = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut back = delta.dot(&layer.weights);
                back.zip_mut_with(&activations[i], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads[i] = (grad_w, grad_b);
        }
        Ok((loss, Gradients { layers: grads }))
    }

    fn check_batch(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Size("empty batch".into()));
        }
        if x.nrows() != y.nrows() {
            return Err(Error::Size("feature and target row counts differ".into()));
        }
        if x.ncols() != self.input_dim() || y.ncols() != self.output_dim() {
            return Err(Error::Size(format!(
                "batch shapes {}x{} / {}x{} do not match network {} -> {}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols(),
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Total number of parameters (weights and biases).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter access, layer-major (weights row-major, then bias).
    pub fn get_param(&self, mut index: usize) -> f64 {
        for layer in &self.layers {
            if index < layer.weights.len() {
                return layer.weights.as_slice().expect("contiguous")[index];
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                return layer.bias[index];
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for layer in &mut self.layers {
            if index < layer.weights.len() {
                layer.weights.as_slice_mut().expect("contiguous")[index] = value;
                return;
            }
            index -= layer.weights.len();
            if index < layer.bias.len() {
                layer.bias[index] = value;
                return;
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }
}

fn chunked<'a>(
    x: &'a Array2<f64>,
    y: &'a Array2<f64>,
    size: usize,
) -> impl Iterator<Item = (ndarray::ArrayView2<'a, f64>, ndarray::ArrayView2<'a, f64>)> {
    x.axis_chunks_iter(Axis(0), size).zip(y.axis_chunks_iter(Axis(0), size))
}

/// Trains a model on standardized features and targets with minibatch
/// updates, seeded shuffling and early stopping on validation loss.
/// Returns the parameters of the best validation epoch.
pub fn train(
    model: MlpModel,
    x_train: &Array2<f64>,
    y_train: &Array2<f64>,
    x_val: &Array2<f64>,
    y_val: &Array2<f64>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    model.check_batch(x_train, y_train)?;
    model.check_batch(x_val, y_val)?;

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut current = model;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &current);

    let n = x_train.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_model = current.clone();
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(x_train, chunk);
            let yb = gather_rows(y_train, chunk);
            let (loss, grads) = current.loss_and_gradient(&xb, &yb).map_err(|e| match e {
                Error::Numeric(msg) => Error::Training { epoch, message: msg },
                other => other,
            })?;
            opt.apply(&mut current, &grads);
            epoch_loss += loss * chunk.len() as f64;
        }
        epoch_loss /= n as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training { epoch, message: "training loss diverged".into() });
        }
        let val_loss = current.loss(x_val, y_val)?;
        if !val_loss.is_finite() {
            return Err(Error::Training { epoch, message: "validation loss diverged".into() });
        }
        train_losses.push(epoch_loss);
        val_losses.push(val_loss);

        if val_loss < best_val {
            best_val = val_loss;
            best_model = current.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let report = TrainReport {
        train_loss: train_losses,
        validation_loss: val_losses,
        best_epoch,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((best_model, report))
}

fn gather_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), m.ncols()));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, model: &MlpModel) -> Self {
        let zeros: Vec<(Array2<f64>, Array1<f64>)> = model
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
            .collect();
        Optimizer { kind, lr, step: 0, m: zeros.clone(), v: zeros }
    }

    fn apply(&mut self, model: &mut MlpModel, grads: &Gradients) {
        const EPS: f64 = 1e-8;
        const BETA1: f64 = 0.9;
        const BETA2: f64 = 0.999;
        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads.layers) {
                    layer.weights.scaled_add(-lr, gw);
                    layer.bias.scaled_add(-lr, gb);
                }
            }
            OptimizerKind::RmsProp => {
                for ((layer, (gw, gb)), (vw, vb)) in
                    model.layers.iter_mut().zip(&grads.layers).zip(self.v.iter_mut())
                {
                    update_rmsprop(&mut layer.weights, gw, vw, lr, EPS);
                    update_rmsprop_1d(&mut layer.bias, gb, vb, lr, EPS);
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - BETA1.powi(self.step as i32);
                let bc2 = 1.0 - BETA2.powi(self.step as i32);
                for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in model
                    .layers
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    update_adam(&mut layer.weights, gw, mw, vw, lr, bc1, bc2, BETA1, BETA2, EPS);
                    update_adam_1d(&mut layer.bias, gb, mb, vb, lr, bc1, bc2, BETA1, BETA2, EPS);
                }
            }
        }
    }
}

fn update_rmsprop(w: &mut Array2<f64>, g: &Array2<f64>, v: &mut Array2<f64>, lr: f64, eps: f64) {
    azip_3(w, g, v, |w, g, v| {
        *v = 0.9 * *v + 0.1 * g * g;
        *w -= lr * g / (v.sqrt() + eps);
    });
}

fn update_rmsprop_1d(w: &mut Array1<f64>, g: &Array1<f64>, v: &mut Array1<f64>, lr: f64, eps: f64) {
    for ((w, &g), v) in w.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
        *v = 0.9 * *v + 0.1 * g * g;
        *w -= lr * g / (v.sqrt() + eps);
    }
}

#[allow(clippy::too_many_arguments)]
fn update_adam(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let (ws, gs, ms, vs) = (
        w.as_slice_mut().expect("contiguous"),
        g.as_slice().expect("contiguous"),
        m.as_slice_mut().expect("contiguous"),
        v.as_slice_mut().expect("contiguous"),
    );
    for i in 0..ws.len() {
        ms[i] = beta1 * ms[i] + (1.0 - beta1) * gs[i];
        vs[i] = beta2 * vs[i] + (1.0 - beta2) * gs[i] * gs[i];
        let m_hat = ms[i] / bc1;
        let v_hat = vs[i] / bc2;
        ws[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

#[allow(clippy::too_many_arguments)]
fn update_adam_1d(
    w: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    bc1: f64,
    bc2: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    for i in 0..w.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

fn azip_3(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    v: &mut Array2<f64>,
    f: impl Fn(&mut f64, f64, &mut f64),
) {
    let (ws, gs, vs) = (
        w.as_slice_mut().expect("contiguous"),
        g.as_slice().expect("contiguous"),
        v.as_slice_mut().expect("contiguous"),
    );
    for i in 0..ws.len() {
        f(&mut ws[i], gs[i], &mut vs[i]);
    }
}

/// Runs the network over an utterance's features and materializes frames.
///
/// ET-mode models reconstruct through `basis`; pixel-mode models devectorize
/// directly. In both cases output pixels are clamped to `[0, 255]`.
pub fn predict_utterance(
    model: &MlpModel,
    features: &[AcousticFeatureVector],
    basis: Option<&EigenTongueBasis>,
) -> Result<Vec<Frame>> {
    match (model.target_mode, basis) {
        (TargetMode::Et, Some(basis)) => {
            if basis.n_components() != model.output_dim() {
                return Err(Error::Contract(format!(
                    "model outputs {} coefficients but basis holds {} components",
                    model.output_dim(),
                    basis.n_components()
                )));
            }
            features
                .iter()
                .map(|f| {
                    let values = model.forward(&f.concatenated())?;
                    reconstruct(&EtCoefficients { values, frame_index: f.frame_index }, basis)
                })
                .collect()
        }
        (TargetMode::Pixels, None) => {
            let dim = model.output_dim();
            let side = (dim as f64).sqrt().round() as usize;
            if side * side != dim {
                return Err(Error::Contract(format!(
                    "pixel-mode output dimension {dim} is not a square image"
                )));
            }
            features
                .iter()
                .map(|f| devectorize_clamped(&model.forward(&f.concatenated())?, side, side))
                .collect()
        }
        (TargetMode::Et, None) => {
            Err(Error::Contract("ET-mode prediction requires a basis".into()))
        }
        (TargetMode::Pixels, Some(_)) => {
            Err(Error::Contract("pixel-mode prediction takes no basis".into()))
        }
    }
}

// ---------------------------------------------------------------------------
// `.mlp` model files
// ---------------------------------------------------------------------------

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let err = |e: std::io::Error| Error::io(path, e);
    w.write_all(MLP_MAGIC).map_err(err)?;
    write_u32(&mut w, model.layers.len() as u32).map_err(err)?;
    for layer in &model.layers {
        write_u32(&mut w, layer.weights.nrows() as u32).map_err(err)?;
        write_u32(&mut w, layer.weights.ncols() as u32).map_err(err)?;
        write_f64_slice(&mut w, layer.weights.as_slice().expect("contiguous")).map_err(err)?;
        write_f64_slice(&mut w, layer.bias.as_slice().expect("contiguous")).map_err(err)?;
    }
    write_f64_slice(&mut w, &model.input_scaler.mean).map_err(err)?;
    write_f64_slice(&mut w, &model.input_scaler.std).map_err(err)?;
    write_f64_slice(&mut w, &model.target_scaler.mean).map_err(err)?;
    write_f64_slice(&mut w, &model.target_scaler.std).map_err(err)?;
    w.write_all(&[model.target_mode.tag()]).map_err(err)?;
    w.flush().map_err(err)
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_magic(&mut r, MLP_MAGIC, "network model")?;
    let n_layers = read_u32(&mut r, "layer count")? as usize;
    if n_layers < 2 {
        return Err(Error::Format("model must have at least two layers".into()));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let rows = read_u32(&mut r, "layer rows")? as usize;
        let cols = read_u32(&mut r, "layer cols")? as usize;
        let flat = read_f64_vec(&mut r, rows * cols, "weights")?;
        let weights = Array2::from_shape_vec((rows, cols), flat)
            .map_err(|e| Error::Corruption(format!("weight block malformed: {e}")))?;
        let bias = Array1::from_vec(read_f64_vec(&mut r, rows, "bias")?);
        layers.push(Layer { weights, bias });
    }
    for pair in layers.windows(2) {
        if pair[1].weights.ncols() != pair[0].weights.nrows() {
            return Err(Error::Format("layer shapes do not chain".into()));
        }
    }
    let input_dim = layers[0].weights.ncols();
    let output_dim = layers.last().unwrap().weights.nrows();
    let input_scaler = Scaler {
        mean: read_f64_vec(&mut r, input_dim, "input scaler mean")?,
        std: read_f64_vec(&mut r, input_dim, "input scaler std")?,
    };
    let target_scaler = Scaler {
        mean: read_f64_vec(&mut r, output_dim, "target scaler mean")?,
        std: read_f64_vec(&mut r, output_dim, "target scaler std")?,
    };
    let mut tag = [0u8; 1];
    r.read_exact(&mut tag)
        .map_err(|_| Error::Corruption("missing target mode tag".into()))?;
    let target_mode = TargetMode::from_tag(tag[0])?;
    expect_eof(&mut r, "network model")?;
    let model = MlpModel { layers, input_scaler, target_scaler, target_mode };
    if model
        .layers
        .iter()
        .any(|l| l.weights.iter().any(|v| !v.is_finite()) || l.bias.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Validation("model parameters must be finite".into()));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net(widths: &[usize]) -> MlpModel {
        // Hand-built weights for tiny deterministic checks.
        let spec = MlpSpec::new(widths[0], widths[1..widths.len() - 1].to_vec(), *widths.last().unwrap())
            .unwrap();
        MlpModel::init(&spec, TargetMode::Pixels, 0).unwrap()
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = MlpSpec::new(50, vec![32, 16], 8).unwrap();
        let a = MlpModel::init(&spec, TargetMode::Et, 9).unwrap();
        let b = MlpModel::init(&spec, TargetMode::Et, 9).unwrap();
        assert_eq!(a, b);
        let c = MlpModel::init(&spec, TargetMode::Et, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_respects_he_uniform_bound() {
        let spec = MlpSpec::new(50, vec![64], 4).unwrap();
        let m = MlpModel::init(&spec, TargetMode::Pixels, 3).unwrap();
        let bound = (6.0 / 50.0f64).sqrt();
        assert!((bound - 0.3464).abs() < 1e-4);
        let w = &m.layers[0].weights;
        assert!(w.iter().all(|&v| v.abs() < bound));
        assert!(w.iter().any(|&v| v.abs() > 0.8 * bound));
        assert!(m.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn fresh_model_maps_zero_to_zero() {
        let spec = MlpSpec::new(50, vec![32, 16], 8).unwrap();
        let m = MlpModel::init(&spec, TargetMode::Et, 1).unwrap();
        let y = m.forward(&vec![0.0; 50]).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_hand_computation() {
        let mut m = identity_net(&[1, 1, 1]);
        m.layers[0].weights = array![[2.0]];
        m.layers[0].bias = array![0.0];
        m.layers[1].weights = array![[1.5]];
        m.layers[1].bias = array![0.25];
        // x = 3 -> hidden relu(6) = 6 -> output 1.5 * 6 + 0.25 = 9.25
        let y = m.forward(&[3.0]).unwrap();
        assert!((y[0] - 9.25).abs() < 1e-12);
        // Negative pre-activation rectifies to zero.
        let y = m.forward(&[-5.0 / 2.0]).unwrap();
        assert!((y[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let spec = MlpSpec::new(5, vec![7, 6], 3).unwrap();
        let m = MlpModel::init(&spec, TargetMode::Et, 21).unwrap();
        let x: Vec<f64> = (0..5).map(|i| 0.3 * i as f64 - 0.7).collect();
        let got = m.forward(&x).unwrap();
        // Plain nested-loop evaluation.
        let mut h: Vec<f64> = x.clone();
        for (li, layer) in m.layers.iter().enumerate() {
            let mut next = vec![0.0; layer.weights.nrows()];
            for r in 0..layer.weights.nrows() {
                let mut acc = layer.bias[r];
                for c in 0..layer.weights.ncols() {
                    acc += layer.weights[[r, c]] * h[c];
                }
                next[r] = if li + 1 < m.layers.len() { acc.max(0.0) } else { acc };
            }
            h = next;
        }
        for (g, w) in got.iter().zip(&h) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_predictions_give_zero_loss_and_gradient() {
        let mut m = identity_net(&[2, 2, 2]);
        m.layers[0].weights = array![[1.0, 0.0], [0.0, 1.0]];
        m.layers[1].weights = array![[1.0, 0.0], [0.0, 1.0]];
        m.layers[1].bias = array![0.0, 0.0];
        let x = array![[0.5, 1.25], [2.0, 0.75]];
        let (loss, grads) = m.loss_and_gradient(&x, &x).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_unit_loss_and_gradient_match_hand_values() {
        let mut m = identity_net(&[1, 1, 1]);
        m.layers[0].weights = array![[1.0]];
        m.layers[1].weights = array![[2.0]];
        let x = array![[1.0]];
        let y = array![[0.0]];
        let (loss, grads) = m.loss_and_gradient(&x, &y).unwrap();
        assert!((loss - 4.0).abs() < 1e-12);
        // d(w2*x)^2 / dw2 = 2 * 2 * 1 = 4 for the output weight.
        let flat = grads.flat();
        // Layout: w1, b1, w2, b2.
        assert!((flat[2] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let spec = MlpSpec::new(50, vec![8], 4).unwrap();
        let mut m = MlpModel::init(&spec, TargetMode::Et, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Array2::from_shape_fn((6, 50), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));

        // Keep pre-activations away from the rectifier kink so the central
        // difference does not straddle it.
        let margin = relu_margin(&m, &x);
        assert!(margin > 1e-3, "unlucky seed: margin {margin}");

        let (_, grads) = m.loss_and_gradient(&x, &y).unwrap();
        let analytic = grads.flat();
        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for i in 0..m.param_count() {
            let orig = m.get_param(i);
            m.set_param(i, orig + eps);
            let up = m.loss(&x, &y).unwrap();
            m.set_param(i, orig - eps);
            let down = m.loss(&x, &y).unwrap();
            m.set_param(i, orig);
            let numeric = (up - down) / (2.0 * eps);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel <= 1e-4, "max relative gradient error {max_rel}");
    }

    fn relu_margin(m: &MlpModel, x: &Array2<f64>) -> f64 {
        let acts = m.forward_batch(x);
        let mut margin = f64::INFINITY;
        for a in &acts[1..acts.len() - 1] {
            for &v in a {
                if v > 0.0 {
                    margin = margin.min(v);
                }
            }
        }
        margin
    }

    fn linear_task(
        n: usize,
        seed: u64,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((4, 10), |_| rng.random_range(-1.0..1.0));
        let x = Array2::from_shape_fn((n, 10), |_| rng.random_range(-1.0..1.0));
        let y = x.dot(&a.t());
        let split = n * 9 / 10;
        (
            x.slice(ndarray::s![..split, ..]).to_owned(),
            y.slice(ndarray::s![..split, ..]).to_owned(),
            x.slice(ndarray::s![split.., ..]).to_owned(),
            y.slice(ndarray::s![split.., ..]).to_owned(),
        )
    }

    #[test]
    fn adam_learns_a_linear_map() {
        let (xt, yt, xv, yv) = linear_task(2000, 100);
        let spec = MlpSpec::new(10, vec![64, 64], 4).unwrap();
        let model = MlpModel::init(&spec, TargetMode::Et, 0).unwrap();
        let initial = model.loss(&xv, &yv).unwrap();
        let cfg = TrainConfig { max_epochs: 100, ..TrainConfig::default() };
        let (trained, report) = train(model, &xt, &yt, &xv, &yv, &cfg).unwrap();
        let final_loss = trained.loss(&xv, &yv).unwrap();
        assert!(
            final_loss < 0.05 * initial,
            "validation loss {final_loss} vs initial {initial} (epochs: {})",
            report.validation_loss.len()
        );
    }

    #[test]
    fn all_optimizers_reduce_training_loss() {
        let (xt, yt, xv, yv) = linear_task(800, 200);
        for kind in [OptimizerKind::Sgd, OptimizerKind::RmsProp, OptimizerKind::Adam] {
            let spec = MlpSpec::new(10, vec![32], 4).unwrap();
            let model = MlpModel::init(&spec, TargetMode::Et, 1).unwrap();
            let lr = match kind {
                OptimizerKind::Sgd => 0.05,
                _ => 1e-3,
            };
            let cfg = TrainConfig {
                optimizer: kind,
                learning_rate: lr,
                max_epochs: 40,
                early_stop_patience: 40,
                ..TrainConfig::default()
            };
            let (_, report) = train(model, &xt, &yt, &xv, &yv, &cfg).unwrap();
            let first = report.train_loss[0];
            let last = *report.train_loss.last().unwrap();
            assert!(
                last < 0.5 * first,
                "{}: final {last} not < half of initial {first}",
                kind.as_str()
            );
        }
    }

    #[test]
    fn early_stopping_returns_best_epoch_parameters() {
        // Validation targets oppose the training targets, so validation loss
        // rises as soon as the network starts fitting the training set.
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        let x = Array2::from_shape_fn((200, 6), |_| rng.random_range(-1.0..1.0));
        let y = x.clone().slice_move(ndarray::s![.., ..3]);
        let xv = Array2::from_shape_fn((50, 6), |_| rng.random_range(-1.0..1.0));
        let yv = -xv.clone().slice_move(ndarray::s![.., ..3]);
        let spec = MlpSpec::new(6, vec![32], 3).unwrap();
        let model = MlpModel::init(&spec, TargetMode::Et, 2).unwrap();
        let cfg = TrainConfig {
            early_stop_patience: 3,
            max_epochs: 50,
            ..TrainConfig::default()
        };
        let (best, report) = train(model, &x, &y, &xv, &yv, &cfg).unwrap();
        let k = report.best_epoch;
        let epochs_run = report.validation_loss.len();
        assert!(epochs_run <= k + 1 + 3, "ran {epochs_run} epochs, best at {k}");
        let best_val = report.validation_loss[k];
        assert!(report.validation_loss.iter().all(|&v| v >= best_val));
        // The returned parameters really are the snapshot from epoch k.
        let reevaluated = best.loss(&xv, &yv).unwrap();
        assert!((reevaluated - best_val).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (xt, yt, xv, yv) = linear_task(400, 400);
        let spec = MlpSpec::new(10, vec![16], 4).unwrap();
        let cfg = TrainConfig { max_epochs: 5, ..TrainConfig::default() };
        let run = || {
            let model = MlpModel::init(&spec, TargetMode::Et, 3).unwrap();
            train(model, &xt, &yt, &xv, &yv, &cfg).unwrap()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1.train_loss, r2.train_loss);
        assert_eq!(r1.validation_loss, r2.validation_loss);
    }

    #[test]
    fn scaler_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = Array2::from_shape_fn((40, 7), |_| rng.random_range(-30.0..90.0));
        let scaler = Scaler::fit(&rows).unwrap();
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-30.0..90.0)).collect();
        let back = scaler.inverse_vec(&scaler.transform_vec(&x));
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        // Standardized training columns have zero mean and unit variance.
        let t = scaler.transform_rows(&rows);
        for c in 0..7 {
            let col = t.column(c);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scaler_handles_constant_dimensions() {
        let rows = Array2::from_elem((10, 3), 5.0);
        let scaler = Scaler::fit(&rows).unwrap();
        let t = scaler.transform_vec(&[5.0, 5.0, 5.0]);
        assert!(t.iter().all(|&v| v == 0.0));
        let back = scaler.inverse_vec(&t);
        assert!(back.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn predict_utterance_modes_and_contracts() {
        use crate::eigentongue::fit_basis;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..16).map(|_| rng.random_range(0.0..255.0)).collect())
            .collect();
        let basis = fit_basis(&frames, 3).unwrap();

        let features: Vec<AcousticFeatureVector> = (0..4)
            .map(|i| AcousticFeatureVector {
                mfcc: vec![0.1; 25],
                delta: vec![0.0; 25],
                frame_index: i,
            })
            .collect();

        let spec = MlpSpec::new(50, vec![8], 3).unwrap();
        let et_model = MlpModel::init(&spec, TargetMode::Et, 4).unwrap();
        let frames_out = predict_utterance(&et_model, &features, Some(&basis)).unwrap();
        assert_eq!(frames_out.len(), 4);
        assert_eq!(frames_out[0].width(), 4);

        // Zero network output reconstructs the basis mean.
        let zero_model = {
            let mut m = MlpModel::init(&spec, TargetMode::Et, 4).unwrap();
            for layer in &mut m.layers {
                layer.weights.fill(0.0);
                layer.bias.fill(0.0);
            }
            m
        };
        let frames_mean = predict_utterance(&zero_model, &features, Some(&basis)).unwrap();
        let mean_frame = basis.mean_frame().unwrap();
        for f in &frames_mean {
            for (a, b) in f.data().iter().zip(mean_frame.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }

        assert!(matches!(
            predict_utterance(&et_model, &features, None),
            Err(Error::Contract(_))
        ));

        let px_spec = MlpSpec::new(50, vec![8], 16).unwrap();
        let px_model = MlpModel::init(&px_spec, TargetMode::Pixels, 4).unwrap();
        let frames_px = predict_utterance(&px_model, &features, None).unwrap();
        assert_eq!(frames_px[0].width(), 4);
        assert_eq!(frames_px[0].height(), 4);
        assert!(matches!(
            predict_utterance(&px_model, &features, Some(&basis)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn model_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = MlpSpec::new(50, vec![12, 7], 5).unwrap();
        let mut m = MlpModel::init(&spec, TargetMode::Et, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let rows = Array2::from_shape_fn((30, 50), |_| rng.random_range(-4.0..4.0));
        let targets = Array2::from_shape_fn((30, 5), |_| rng.random_range(-4.0..4.0));
        m.set_scalers(Scaler::fit(&rows).unwrap(), Scaler::fit(&targets).unwrap()).unwrap();
        let path = dir.path().join("m.mlp");
        save_model(&m, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(m, back);
    }
}
