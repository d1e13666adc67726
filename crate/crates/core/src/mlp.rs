//! Pose regression from `(1/N)UᵀU` features with a leaky-ReLU multilayer
//! perceptron, trained with Adam on the angular loss, plus the chance
//! baseline the regressor is compared against.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{error_summary, ErrorSummary};
use crate::geometry::{canonical_direction, rotation_geodesic, translation_angle, CameraIntrinsics, Quaternion};
use crate::seed::{derive_seed, item_seed, rng_from};
use crate::synth::{sample_accepted_pose, DatasetRecord, PoseDistribution, PoseKind, SceneConfig};

pub const FEATURE_DIM: usize = 81;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("feature dimension {got} does not match the model's {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}, step {step}; last finite loss {last_finite:?}")]
    NonFinite { epoch: usize, step: usize, last_finite: Option<f64> },
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("model file: {0}")]
    ModelFile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Rotation,
    Translation,
}

impl Task {
    pub fn output_dim(&self) -> usize {
        match self {
            Task::Rotation => 4,
            Task::Translation => 3,
        }
    }

    fn target(&self, r: &DatasetRecord) -> Vec<f64> {
        match self {
            Task::Rotation => r.quat.to_vec(),
            Task::Translation => r.t_dir.to_vec(),
        }
    }
}

impl std::str::FromStr for Task {
    type Err = MlpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rotation" => Ok(Task::Rotation),
            "translation" => Ok(Task::Translation),
            other => Err(MlpError::InvalidConfig(format!("unknown task '{other}' (expected rotation or translation)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub leaky_slope: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale each input entry by the training-set mean and deviation.
    pub standardize: bool,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: FEATURE_DIM,
            hidden_layers: 3,
            hidden_width: 512,
            leaky_slope: 0.01,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 30,
            seed: 0,
            standardize: true,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), MlpError> {
        let bad = |m: String| Err(MlpError::InvalidConfig(m));
        if self.input_dim == 0 || self.hidden_layers == 0 || self.hidden_width == 0 || self.batch_size == 0 {
            return bad("dimensions, layer count and batch size must be at least 1".into());
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return bad(format!("leaky slope {} must lie in (0, 1)", self.leaky_slope));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Weights are `out × in`; rows of a batch are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
    pub step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub task: Task,
    pub layers: Vec<Layer>,
    pub input_mean: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub adam: AdamState,
}

fn zeros_like(layers: &[Layer]) -> Vec<Layer> {
    layers
        .iter()
        .map(|l| Layer { weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()), bias: DVector::zeros(l.bias.len()) })
        .collect()
}

impl MlpModel {
    /// Uniform `±√(6/(fan_in + fan_out))` weights, zero biases.
    pub fn new(config: &MlpConfig, task: Task, rng: &mut impl Rng) -> Result<Self, MlpError> {
        config.validate()?;
        let mut dims = vec![config.input_dim];
        dims.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
        dims.push(task.output_dim());
        let layers: Vec<Layer> = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weight: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-limit..=limit)),
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        let adam = AdamState { m: zeros_like(&layers), v: zeros_like(&layers), step: 0 };
        Ok(MlpModel {
            config: config.clone(),
            task,
            input_mean: vec![0.0; config.input_dim],
            input_scale: vec![1.0; config.input_dim],
            layers,
            adam,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights (column-major) then bias, layer by layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), MlpError> {
        if flat.len() != self.param_count() {
            return Err(MlpError::ModelFile(format!("{} parameters, model needs {}", flat.len(), self.param_count())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Sets the input standardization from training features (rows).
    pub fn fit_standardization(&mut self, features: &DMatrix<f64>) {
        let n = features.nrows() as f64;
        for j in 0..features.ncols() {
            let col = features.column(j);
            let mean = col.mean();
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            self.input_mean[j] = mean;
            self.input_scale[j] = if sd > 1e-12 * mean.abs().max(1.0) { 1.0 / sd } else { 1.0 };
        }
    }

    fn standardized(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x.clone();
        for (j, mut col) in z.column_iter_mut().enumerate() {
            let (m, s) = (self.input_mean[j], self.input_scale[j]);
            col.apply(|v| *v = (*v - m) * s);
        }
        z
    }

    fn check_dim(&self, x: &DMatrix<f64>) -> Result<(), MlpError> {
        if x.ncols() != self.config.input_dim {
            return Err(MlpError::DimensionMismatch { expected: self.config.input_dim, got: x.ncols() });
        }
        Ok(())
    }

    /// Pre-activations of every layer and post-activations of the hidden ones.
    fn run(&self, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let slope = self.config.leaky_slope;
        let mut inputs = vec![self.standardized(x)];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (k, l) in self.layers.iter().enumerate() {
            let mut z = inputs.last().unwrap() * l.weight.transpose();
            for mut row in z.row_iter_mut() {
                row += l.bias.transpose();
            }
            if k + 1 < self.layers.len() {
                inputs.push(z.map(|v| if v > 0.0 { v } else { slope * v }));
            }
            pre.push(z);
        }
        (pre, inputs)
    }

    /// Raw (unnormalized) network outputs.
    pub fn raw_output(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, MlpError> {
        self.check_dim(x)?;
        Ok(self.run(x).0.pop().unwrap())
    }

    /// Unit-norm predictions; translation outputs are flipped to `t_z ≥ 0`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>, MlpError> {
        let raw = self.raw_output(x)?;
        let mut out = raw.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let (unit, _) = normalize_output(&raw.row(i).transpose(), self.task);
            row.copy_from(&unit.transpose());
        }
        Ok(out)
    }
}

/// `(ŷ, σ)` with `ŷ = σ·y/‖y‖`; `σ = −1` only for a translation with `y_z < 0`.
fn normalize_output(y: &DVector<f64>, task: Task) -> (DVector<f64>, f64) {
    let n = y.norm();
    let sign = if task == Task::Translation && y[2] < 0.0 { -1.0 } else { 1.0 };
    if n == 0.0 {
        return (DVector::zeros(y.len()), sign);
    }
    (y * (sign / n), sign)
}

/// Angular loss (radians) of one unit prediction against its target and the
/// derivative with respect to the cosine. Rotation uses `2·acos(|⟨q̂, q⟩|)`,
/// translation `acos(⟨t̂, t⟩)`. Returns `clamped = true` when the cosine had to
/// be clipped into `[−1, 1]` or sat on the nondifferentiable end point, in
/// which case the derivative is reported as zero.
pub fn angular_loss(pred: &[f64], target: &[f64], task: Task) -> (f64, f64, bool) {
    let c: f64 = pred.iter().zip(target).map(|(a, b)| a * b).sum();
    match task {
        Task::Rotation => {
            let s = if c < 0.0 { -1.0 } else { 1.0 };
            let a = (s * c).min(1.0);
            let clamped = s * c >= 1.0 - 1e-15;
            let d = if clamped { 0.0 } else { -2.0 * s / (1.0 - a * a).sqrt() };
            (2.0 * a.acos(), d, clamped)
        }
        Task::Translation => {
            let a = c.clamp(-1.0, 1.0);
            let clamped = c.abs() >= 1.0 - 1e-15;
            let d = if clamped { 0.0 } else { -1.0 / (1.0 - a * a).sqrt() };
            (a.acos(), d, clamped)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    /// Mean loss in radians.
    pub loss: f64,
    pub grads: Vec<Layer>,
    pub clamped: usize,
}

/// Mean angular loss of a batch and its gradient by backpropagation.
pub fn loss_and_grad(model: &MlpModel, x: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<LossAndGrad, MlpError> {
    model.check_dim(x)?;
    let task = model.task;
    if targets.ncols() != task.output_dim() || targets.nrows() != x.nrows() {
        return Err(MlpError::DimensionMismatch { expected: task.output_dim(), got: targets.ncols() });
    }
    let b = x.nrows();
    if b == 0 {
        return Err(MlpError::Empty("batch"));
    }
    let (pre, inputs) = model.run(x);
    let out = pre.last().unwrap();
    let mut d_out = DMatrix::zeros(b, task.output_dim());
    let mut loss = 0.0;
    let mut clamped = 0;
    for i in 0..b {
        let y = out.row(i).transpose();
        let (unit, sign) = normalize_output(&y, task);
        let t: Vec<f64> = targets.row(i).iter().copied().collect();
        let (l, dl_dc, was_clamped) = angular_loss(unit.as_slice(), &t, task);
        loss += l;
        clamped += was_clamped as usize;
        let n = y.norm();
        if n > 0.0 && dl_dc != 0.0 {
            // c = ⟨σy/‖y‖, t⟩  ⇒  ∂c/∂y = σ(t − (σ·ŷ·... )) / ‖y‖ = σ(I − ŷŷᵀ)t / ‖y‖
            let tv = DVector::from_vec(t);
            let c = unit.dot(&tv);
            let dc_dy = (tv - &unit * c) * (sign / n);
            d_out.set_row(i, &(dc_dy * (dl_dc / b as f64)).transpose());
        }
    }
    let slope = model.config.leaky_slope;
    let mut grads = zeros_like(&model.layers);
    let mut delta = d_out;
    for k in (0..model.layers.len()).rev() {
        grads[k].weight = delta.transpose() * &inputs[k];
        grads[k].bias = delta.row_sum().transpose();
        if k > 0 {
            let mut back = &delta * &model.layers[k].weight;
            let z = &pre[k - 1];
            back.zip_apply(z, |g, zv| {
                if zv <= 0.0 {
                    *g *= slope
                }
            });
            delta = back;
        }
    }
    Ok(LossAndGrad { loss: loss / b as f64, grads, clamped })
}

/// One Adam update. A zero gradient leaves the parameters unchanged.
pub fn adam_step(model: &mut MlpModel, grads: &[Layer], lr: f64) {
    let st = &mut model.adam;
    st.step += 1;
    let t = st.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
        }
    };
    for (k, layer) in model.layers.iter_mut().enumerate() {
        update(layer.weight.as_mut_slice(), grads[k].weight.as_slice(), st.m[k].weight.as_mut_slice(), st.v[k].weight.as_mut_slice());
        update(layer.bias.as_mut_slice(), grads[k].bias.as_slice(), st.m[k].bias.as_mut_slice(), st.v[k].bias.as_mut_slice());
    }
}

/// Features (rows) and unit targets for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
    pub task: Task,
}

impl TrainingSet {
    pub fn from_records(records: &[DatasetRecord], task: Task) -> Result<Self, MlpError> {
        if records.is_empty() {
            return Err(MlpError::Empty("dataset"));
        }
        let dim = records[0].feature.len();
        if let Some(r) = records.iter().find(|r| r.feature.len() != dim) {
            return Err(MlpError::DimensionMismatch { expected: dim, got: r.feature.len() });
        }
        let features = DMatrix::from_fn(records.len(), dim, |i, j| records[i].feature[j]);
        let out = task.output_dim();
        let targets = DMatrix::from_fn(records.len(), out, |i, j| task.target(&records[i])[j]);
        Ok(TrainingSet { features, targets, task })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same features with the target rows permuted: a null model's data.
    pub fn with_shuffled_targets(&self, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng_from(seed));
        let targets = DMatrix::from_fn(self.len(), self.targets.ncols(), |i, j| self.targets[(order[i], j)]);
        TrainingSet { features: self.features.clone(), targets, task: self.task }
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.features.select_rows(idx), self.targets.select_rows(idx))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Mean training loss per epoch, degrees.
    pub epoch_loss_deg: Vec<f64>,
    pub clamp_events: usize,
}

/// Seeded initialization, standardization from the training features, then
/// shuffled mini-batch Adam at a constant learning rate.
pub fn train(config: &MlpConfig, data: &TrainingSet) -> Result<(MlpModel, TrainingLog), MlpError> {
    config.validate()?;
    if data.is_empty() {
        return Err(MlpError::Empty("training set"));
    }
    if data.features.ncols() != config.input_dim {
        return Err(MlpError::DimensionMismatch { expected: config.input_dim, got: data.features.ncols() });
    }
    let mut model = MlpModel::new(config, data.task, &mut rng_from(derive_seed(config.seed, "mlp-init")))?;
    if config.standardize {
        model.fit_standardization(&data.features);
    }
    let mut order_rng = rng_from(derive_seed(config.seed, "mlp-batches"));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = TrainingLog { epoch_loss_deg: Vec::with_capacity(config.epochs), clamp_events: 0 };
    let mut last_finite = None;
    for epoch in 0..config.epochs {
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let (x, y) = data.rows(idx);
            let lg = loss_and_grad(&model, &x, &y)?;
            if !lg.loss.is_finite() {
                return Err(MlpError::NonFinite { epoch, step, last_finite });
            }
            last_finite = Some(lg.loss);
            log.clamp_events += lg.clamped;
            total += lg.loss * idx.len() as f64;
            adam_step(&mut model, &lg.grads, config.learning_rate);
            if model.layers.iter().any(|l| l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
                return Err(MlpError::NonFinite { epoch, step, last_finite });
            }
        }
        log.epoch_loss_deg.push((total / data.len() as f64).to_degrees());
    }
    Ok((model, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub summary: ErrorSummary,
    pub errors_deg: Vec<f64>,
}

/// Angular error in degrees between a unit prediction and a target.
pub fn angular_error_deg(pred: &[f64], target: &[f64], task: Task) -> f64 {
    match task {
        Task::Rotation => {
            let q = |v: &[f64]| Quaternion::normalized(v[0], v[1], v[2], v[3]).unwrap_or(Quaternion::IDENTITY);
            rotation_geodesic(&q(pred), &q(target)).unwrap_or(f64::NAN)
        }
        Task::Translation => {
            let v = |s: &[f64]| Vector3::new(s[0], s[1], s[2]);
            translation_angle(&v(pred), &v(target)).unwrap_or(f64::NAN)
        }
    }
}

pub fn evaluate(model: &MlpModel, data: &TrainingSet, threshold_deg: f64) -> Result<EvalReport, MlpError> {
    if data.is_empty() {
        return Err(MlpError::Empty("test set"));
    }
    let pred = model.forward(&data.features)?;
    let errors: Vec<f64> = (0..data.len())
        .map(|i| {
            let p: Vec<f64> = pred.row(i).iter().copied().collect();
            let t: Vec<f64> = data.targets.row(i).iter().copied().collect();
            angular_error_deg(&p, &t, model.task)
        })
        .collect();
    let summary = error_summary(&errors, threshold_deg).map_err(|_| MlpError::Empty("test set"))?;
    Ok(EvalReport { task: model.task, summary, errors_deg: errors })
}

/// Error of an independent draw against a ground truth, both from the
/// accepted-instance pose distribution. Trial `i` uses its own derived seed.
pub fn chance_errors(kind: PoseKind, draws: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let d = PoseDistribution::new(kind);
    let cfg = SceneConfig::default();
    let cam = CameraIntrinsics::synthetic();
    let base = derive_seed(seed, "chance");
    (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(item_seed(base, i));
            let (r1, t1) = sample_accepted_pose(&d, &cfg, &cam, &mut rng);
            let (r2, t2) = sample_accepted_pose(&d, &cfg, &cam, &mut rng);
            let rot = rotation_geodesic(&r1.to_quaternion(), &r2.to_quaternion()).unwrap();
            let dir = |t: &Vector3<f64>| canonical_direction(t).unwrap();
            let trans = translation_angle(&dir(&t1), &dir(&t2)).unwrap();
            (rot, trans)
        })
        .unzip()
}

pub fn chance_baseline(kind: PoseKind, task: Task, draws: usize, seed: u64, threshold_deg: f64) -> Result<EvalReport, MlpError> {
    if draws < 1000 {
        return Err(MlpError::InvalidConfig(format!("{draws} chance draws, need at least 1000")));
    }
    let (rot, trans) = chance_errors(kind, draws, seed);
    let errors = match task {
        Task::Rotation => rot,
        Task::Translation => trans,
    };
    let summary = error_summary(&errors, threshold_deg).map_err(|_| MlpError::Empty("chance draws"))?;
    Ok(EvalReport { task, summary, errors_deg: errors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelHeader {
    format: String,
    config: MlpConfig,
    task: Task,
    input_mean: Vec<f64>,
    input_scale: Vec<f64>,
    param_count: usize,
}

const MODEL_FORMAT: &str = "emm-mlp-v1";

/// One JSON header line, then `param_count` little-endian f64 values.
pub fn save_model<W: Write>(model: &MlpModel, mut out: W) -> Result<(), MlpError> {
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        config: model.config.clone(),
        task: model.task,
        input_mean: model.input_mean.clone(),
        input_scale: model.input_scale.clone(),
        param_count: model.param_count(),
    };
    serde_json::to_writer(&mut out, &header).map_err(|e| MlpError::ModelFile(e.to_string()))?;
    out.write_all(b"\n")?;
    for p in model.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_model<R: BufRead>(mut input: R) -> Result<MlpModel, MlpError> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: ModelHeader =
        serde_json::from_str(line.trim_end()).map_err(|e| MlpError::ModelFile(format!("bad header: {e}")))?;
    if header.format != MODEL_FORMAT {
        return Err(MlpError::ModelFile(format!("unknown format '{}'", header.format)));
    }
    let mut model = MlpModel::new(&header.config, header.task, &mut rng_from(0))?;
    if header.param_count != model.param_count() {
        return Err(MlpError::ModelFile(format!(
            "header declares {} parameters, configuration implies {}",
            header.param_count,
            model.param_count()
        )));
    }
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * header.param_count {
        return Err(MlpError::ModelFile(format!(
            "parameter block has {} bytes, expected {}",
            bytes.len(),
            8 * header.param_count
        )));
    }
    let params: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    model.set_params(&params)?;
    model.input_mean = header.input_mean;
    model.input_scale = header.input_scale;
    Ok(model)
}

pub fn save_model_file(model: &MlpModel, path: &Path) -> Result<(), MlpError> {
    let f = std::fs::File::create(path)?;
    save_model(model, std::io::BufWriter::new(f))
}

pub fn load_model_file(path: &Path) -> Result<MlpModel, MlpError> {
    let f = std::fs::File::open(path)?;
    load_model(std::io::BufReader::new(f))
}

/// Unit quaternion from a 4-vector prediction, for callers that want one.
pub fn quaternion_of(pred: &Vector4<f64>) -> Option<Quaternion> {
    Quaternion::normalized(pred[0], pred[1], pred[2], pred[3]).ok()
}
