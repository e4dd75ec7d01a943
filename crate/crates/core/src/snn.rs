//! Dense feed-forward network with one (default) or more hidden layers,
//! inverted dropout, configurable initialization and activation, and
//! mini-batch Adam training.
//!
//! Training is single-threaded and fully determined by the hyperparameter
//! seed: weight init, per-epoch shuffles, and per-batch dropout masks all
//! come from one sequential ChaCha stream.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SnnError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("input has {got} columns, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("labels length {labels} does not match {rows} rows")]
    LabelMismatch { labels: usize, rows: usize },
    #[error("cannot train on an empty batch")]
    EmptyInput,
    #[error("dropout mask {index} has shape {got:?}, expected {expected:?}")]
    BadMask {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
}

/// Weight initialization schemes (fan-based variants use the layer's input
/// width; Glorot also uses the output width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Uniform,
    LecunUniform,
    Normal,
    GlorotNormal,
    HeNormal,
    HeUniform,
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            InitMode::Uniform => "uniform",
            InitMode::LecunUniform => "lecun_uniform",
            InitMode::Normal => "normal",
            InitMode::GlorotNormal => "glorot_normal",
            InitMode::HeNormal => "he_normal",
            InitMode::HeUniform => "he_uniform",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::Sigmoid => write!(f, "sigmoid"),
        }
    }
}

/// Output head: sigmoid probability for classification, raw linear value for
/// regression. Decides the training loss (BCE vs MSE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Sigmoid,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnnHyperparams {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_mode: InitMode,
    pub activation: Activation,
    pub learning_rate: f64,
    pub seed: u64,
}

impl SnnHyperparams {
    /// The fixed configuration used while the selection threshold is tuned:
    /// 20 epochs, he_normal init, dropout 0.5, relu, mini-batch 512.
    pub fn fixed_defaults(seed: u64) -> Self {
        Self {
            hidden_layers: 1,
            hidden_units: 10,
            dropout: 0.5,
            epochs: 20,
            batch_size: 512,
            init_mode: InitMode::HeNormal,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SnnError> {
        let fail = |msg: &str| Err(SnnError::InvalidHyperparams(msg.to_string()));
        if self.hidden_layers < 1 {
            return fail("hidden_layers must be >= 1");
        }
        if self.hidden_units < 1 {
            return fail("hidden_units must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(fan_in, fan_out)` weight grid.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
    pub activation: Activation,
    pub output_kind: OutputKind,
    pub input_dim: usize,
}

/// Per-parameter gradients in model layout.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub hidden: Vec<(Array2<f64>, Array1<f64>)>,
    pub output: (Array2<f64>, Array1<f64>),
}

/// Dropout behaviour for a forward pass.
pub enum ForwardMode<'a> {
    /// No mask, no scaling.
    Inference,
    /// Fresh Bernoulli(1 - rate) masks, survivors scaled by 1/(1 - rate).
    Training { dropout: f64, rng: &'a mut ChaCha8Rng },
    /// Caller-supplied masks (one per hidden layer), same scaling.
    FixedMask { dropout: f64, masks: &'a [Array2<f64>] },
}

const BCE_CLAMP: f64 = 1e-7;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn draw_weights(rows: usize, cols: usize, mode: InitMode, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let fan_in = rows as f64;
    let fan_out = cols as f64;
    let mut sample: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match mode {
        InitMode::Uniform => {
            let d = Uniform::new(-0.05, 0.05);
            Box::new(move |r| d.sample(r))
        }
        InitMode::LecunUniform => {
            let limit = (3.0 / fan_in).sqrt();
            let d = Uniform::new(-limit, limit);
            Box::new(move |r| d.sample(r))
        }
        InitMode::Normal => {
            let d = Normal::new(0.0, 0.05).expect("valid std");
            Box::new(move |r| d.sample(r))
        }
        InitMode::GlorotNormal => {
            let d = Normal::new(0.0, (2.0 / (fan_in + fan_out)).sqrt()).expect("valid std");
            Box::new(move |r| d.sample(r))
        }
        InitMode::HeNormal => {
            let d = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
            Box::new(move |r| d.sample(r))
        }
        InitMode::HeUniform => {
            let limit = (6.0 / fan_in).sqrt();
            let d = Uniform::new(-limit, limit);
            Box::new(move |r| d.sample(r))
        }
    };
    Array2::from_shape_fn((rows, cols), |_| sample(rng))
}

fn init_with_rng(
    hp: &SnnHyperparams,
    input_dim: usize,
    output_kind: OutputKind,
    rng: &mut ChaCha8Rng,
) -> SnnModel {
    let mut hidden = Vec::with_capacity(hp.hidden_layers);
    let mut fan_in = input_dim;
    for _ in 0..hp.hidden_layers {
        hidden.push(DenseLayer {
            weights: draw_weights(fan_in, hp.hidden_units, hp.init_mode, rng),
            bias: Array1::zeros(hp.hidden_units),
        });
        fan_in = hp.hidden_units;
    }
    let output = DenseLayer {
        weights: draw_weights(fan_in, 1, hp.init_mode, rng),
        bias: Array1::zeros(1),
    };
    SnnModel {
        hidden,
        output,
        activation: hp.activation,
        output_kind,
        input_dim,
    }
}

/// Fresh model with mode-specific random weights and zero biases,
/// reproducible from `hp.seed`.
pub fn init_model(
    hp: &SnnHyperparams,
    input_dim: usize,
    output_kind: OutputKind,
) -> Result<SnnModel, SnnError> {
    hp.validate()?;
    if input_dim == 0 {
        return Err(SnnError::DimensionMismatch { expected: 1, got: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    Ok(init_with_rng(hp, input_dim, output_kind, &mut rng))
}

/// Forward-pass bookkeeping needed by backprop.
struct Trace {
    /// Input to each hidden layer, then to the output layer.
    layer_inputs: Vec<Array2<f64>>,
    /// Post-activation, pre-dropout hidden values.
    hidden_post: Vec<Array2<f64>>,
    masks: Vec<Option<Array2<f64>>>,
    output_z: Array1<f64>,
}

enum MaskSource<'a> {
    None,
    Sample { rate: f64, rng: &'a mut ChaCha8Rng },
    Fixed { rate: f64, masks: &'a [Array2<f64>] },
}

impl SnnModel {
    fn run_forward(
        &self,
        x: ArrayView2<'_, f64>,
        mut masks: MaskSource<'_>,
    ) -> Result<Trace, SnnError> {
        if x.ncols() != self.input_dim {
            return Err(SnnError::DimensionMismatch {
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        if let MaskSource::Fixed { masks, .. } = &masks {
            if masks.len() != self.hidden.len() {
                return Err(SnnError::BadMask {
                    index: masks.len(),
                    expected: (self.hidden.len(), 0),
                    got: (0, 0),
                });
            }
        }
        let m = x.nrows();
        let mut layer_inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut hidden_post = Vec::with_capacity(self.hidden.len());
        let mut mask_log = Vec::with_capacity(self.hidden.len());
        let mut current = x.to_owned();
        for (l, layer) in self.hidden.iter().enumerate() {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            let h = match self.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Sigmoid => z.mapv(sigmoid),
            };
            let (dropped, mask) = match &mut masks {
                MaskSource::None => (h.clone(), None),
                MaskSource::Sample { rate, rng } => {
                    if *rate == 0.0 {
                        (h.clone(), None)
                    } else {
                        let keep = 1.0 - *rate;
                        let mask = Array2::from_shape_fn(h.dim(), |_| {
                            if rng.gen::<f64>() < keep {
                                1.0
                            } else {
                                0.0
                            }
                        });
                        ((&h * &mask) / keep, Some(mask))
                    }
                }
                MaskSource::Fixed { rate, masks } => {
                    let mask = &masks[l];
                    if mask.dim() != h.dim() {
                        return Err(SnnError::BadMask {
                            index: l,
                            expected: h.dim(),
                            got: mask.dim(),
                        });
                    }
                    if *rate == 0.0 {
                        (h.clone(), None)
                    } else {
                        ((&h * mask) / (1.0 - *rate), Some(mask.clone()))
                    }
                }
            };
            layer_inputs.push(current);
            hidden_post.push(h);
            mask_log.push(mask);
            current = dropped;
        }
        let mut z = current.dot(&self.output.weights);
        z += &self.output.bias;
        layer_inputs.push(current);
        debug_assert_eq!(z.dim(), (m, 1));
        Ok(Trace {
            layer_inputs,
            hidden_post,
            masks: mask_log,
            output_z: z.index_axis(Axis(1), 0).to_owned(),
        })
    }

    fn head(&self, z: &Array1<f64>) -> Array1<f64> {
        match self.output_kind {
            OutputKind::Sigmoid => z.mapv(sigmoid),
            OutputKind::Linear => z.clone(),
        }
    }

    /// Forward pass. Inference is a pure function of (model, x); training
    /// mode applies inverted dropout to the hidden layers only.
    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: ForwardMode<'_>) -> Result<Array1<f64>, SnnError> {
        let source = match mode {
            ForwardMode::Inference => MaskSource::None,
            ForwardMode::Training { dropout, rng } => MaskSource::Sample { rate: dropout, rng },
            ForwardMode::FixedMask { dropout, masks } => MaskSource::Fixed { rate: dropout, masks },
        };
        let trace = self.run_forward(x, source)?;
        Ok(self.head(&trace.output_z))
    }

    /// Inference scores (probabilities for a sigmoid head, raw values for a
    /// linear head).
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>, SnnError> {
        self.forward(x, ForwardMode::Inference)
    }
}

/// Mean loss over the batch: clamped binary cross-entropy for sigmoid heads,
/// squared error for linear heads.
fn batch_loss(output_kind: OutputKind, z: &Array1<f64>, y: &[f64]) -> f64 {
    let m = y.len() as f64;
    match output_kind {
        OutputKind::Sigmoid => {
            z.iter()
                .zip(y)
                .map(|(&zi, &yi)| {
                    let p = sigmoid(zi).clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                    -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
                })
                .sum::<f64>()
                / m
        }
        OutputKind::Linear => {
            z.iter().zip(y).map(|(&zi, &yi)| (zi - yi) * (zi - yi)).sum::<f64>() / m
        }
    }
}

/// d(loss)/d(output pre-activation), accounting for the BCE clamp (clamped
/// samples contribute zero gradient, matching the computed loss exactly).
fn output_delta(output_kind: OutputKind, z: &Array1<f64>, y: &[f64]) -> Array1<f64> {
    let m = y.len() as f64;
    match output_kind {
        OutputKind::Sigmoid => Array1::from_iter(z.iter().zip(y).map(|(&zi, &yi)| {
            let p = sigmoid(zi);
            if p <= BCE_CLAMP || p >= 1.0 - BCE_CLAMP {
                0.0
            } else {
                (p - yi) / m
            }
        })),
        OutputKind::Linear => {
            Array1::from_iter(z.iter().zip(y).map(|(&zi, &yi)| 2.0 * (zi - yi) / m))
        }
    }
}

/// Mean batch loss and analytic backpropagation gradients. `dropout` carries
/// an optional fixed mask set (one 0/1 grid per hidden layer); `None` means
/// no dropout.
pub fn loss_and_gradients(
    model: &SnnModel,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    dropout: Option<(f64, &[Array2<f64>])>,
) -> Result<(f64, Gradients), SnnError> {
    if x.nrows() == 0 {
        return Err(SnnError::EmptyInput);
    }
    if y.len() != x.nrows() {
        return Err(SnnError::LabelMismatch { labels: y.len(), rows: x.nrows() });
    }
    let source = match dropout {
        None => MaskSource::None,
        Some((rate, masks)) => MaskSource::Fixed { rate, masks },
    };
    let trace = model.run_forward(x, source)?;
    let loss = batch_loss(model.output_kind, &trace.output_z, y);
    let delta = output_delta(model.output_kind, &trace.output_z, y);

    let delta_col = delta.view().insert_axis(Axis(1));
    let out_in = trace.layer_inputs.last().expect("output input present");
    let grad_w_out = out_in.t().dot(&delta_col);
    let grad_b_out = delta_col.sum_axis(Axis(0));

    let mut grads_hidden: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(model.hidden.len());
    let mut upstream: Array2<f64> = delta_col.dot(&model.output.weights.t());
    for l in (0..model.hidden.len()).rev() {
        if let Some(mask) = &trace.masks[l] {
            let rate = match dropout {
                Some((rate, _)) => rate,
                None => unreachable!("mask recorded without dropout"),
            };
            upstream = (&upstream * mask) / (1.0 - rate);
        }
        let h = &trace.hidden_post[l];
        let gate = match model.activation {
            Activation::Relu => h.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
            Activation::Sigmoid => h.mapv(|v| v * (1.0 - v)),
        };
        let dz = &upstream * &gate;
        let grad_w = trace.layer_inputs[l].t().dot(&dz);
        let grad_b = dz.sum_axis(Axis(0));
        grads_hidden.push((grad_w, grad_b));
        if l > 0 {
            upstream = dz.dot(&model.hidden[l].weights.t());
        }
    }
    grads_hidden.reverse();
    Ok((
        loss,
        Gradients {
            hidden: grads_hidden,
            output: (grad_w_out, grad_b_out),
        },
    ))
}

struct AdamState {
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    step: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    fn new(model: &SnnModel) -> Self {
        let zeros = |layer: &DenseLayer| {
            (
                Array2::zeros(layer.weights.dim()),
                Array1::zeros(layer.bias.len()),
            )
        };
        let mut m: Vec<_> = model.hidden.iter().map(zeros).collect();
        m.push(zeros(&model.output));
        let v = m.clone();
        Self { m, v, step: 0 }
    }

    fn update(&mut self, model: &mut SnnModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let bias1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bias2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let n_hidden = model.hidden.len();
        for l in 0..n_hidden {
            let layer = &mut model.hidden[l];
            apply_adam(&mut layer.weights, &grads.hidden[l].0, &mut self.m[l].0, &mut self.v[l].0, lr, bias1, bias2);
            apply_adam_vec(&mut layer.bias, &grads.hidden[l].1, &mut self.m[l].1, &mut self.v[l].1, lr, bias1, bias2);
        }
        apply_adam(
            &mut model.output.weights,
            &grads.output.0,
            &mut self.m[n_hidden].0,
            &mut self.v[n_hidden].0,
            lr,
            bias1,
            bias2,
        );
        apply_adam_vec(
            &mut model.output.bias,
            &grads.output.1,
            &mut self.m[n_hidden].1,
            &mut self.v[n_hidden].1,
            lr,
            bias1,
            bias2,
        );
    }
}

fn apply_adam(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    });
}

fn apply_adam_vec(
    w: &mut Array1<f64>,
    g: &Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    lr: f64,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(w).and(g).and(m).and(v).for_each(|w, &g, m, v| {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    });
}

/// Trains a network with mini-batch Adam. Rows are reshuffled every epoch,
/// the final partial batch is processed, and each batch draws a fresh
/// dropout mask. Returns the model and the per-epoch mean training loss.
pub fn train(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    hp: &SnnHyperparams,
    output_kind: OutputKind,
) -> Result<(SnnModel, Vec<f64>), SnnError> {
    hp.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(SnnError::EmptyInput);
    }
    if y.len() != n {
        return Err(SnnError::LabelMismatch { labels: y.len(), rows: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = init_with_rng(hp, x.ncols(), output_kind, &mut rng);
    let mut adam = AdamState::new(&model);
    let mut loss_log = Vec::with_capacity(hp.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..hp.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(hp.batch_size).enumerate() {
            let bx = Array2::from_shape_fn((chunk.len(), x.ncols()), |(i, j)| x[(chunk[i], j)]);
            let by: Vec<f64> = chunk.iter().map(|&r| y[r]).collect();
            let masks: Vec<Array2<f64>> = if hp.dropout > 0.0 {
                let keep = 1.0 - hp.dropout;
                model
                    .hidden
                    .iter()
                    .map(|layer| {
                        Array2::from_shape_fn((chunk.len(), layer.bias.len()), |_| {
                            if rng.gen::<f64>() < keep {
                                1.0
                            } else {
                                0.0
                            }
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let dropout = (hp.dropout > 0.0).then_some((hp.dropout, masks.as_slice()));
            let (loss, grads) = loss_and_gradients(&model, bx.view(), &by, dropout)?;
            if !loss.is_finite() {
                return Err(SnnError::NanLoss { epoch, batch: batch_idx });
            }
            adam.update(&mut model, &grads, hp.learning_rate);
            loss_sum += loss * chunk.len() as f64;
        }
        loss_log.push(loss_sum / n as f64);
    }
    Ok((model, loss_log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auc_roc, r2, ScoredLabels};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn hp(seed: u64) -> SnnHyperparams {
        SnnHyperparams {
            dropout: 0.0,
            ..SnnHyperparams::fixed_defaults(seed)
        }
    }

    #[test]
    fn biases_start_at_zero_and_init_is_seeded() {
        let a = init_model(&hp(5), 7, OutputKind::Sigmoid).unwrap();
        let b = init_model(&hp(5), 7, OutputKind::Sigmoid).unwrap();
        assert_eq!(a, b);
        assert!(a.hidden[0].bias.iter().all(|&v| v == 0.0));
        assert!(a.output.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn he_normal_empirical_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = draw_weights(100, 1000, InitMode::HeNormal, &mut rng);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let std = (w.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        let expected = (2.0f64 / 100.0).sqrt();
        assert!((std - expected).abs() / expected < 0.03, "std {std}");
    }

    #[test]
    fn init_ranges_match_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = draw_weights(48, 100, InitMode::Uniform, &mut rng);
        assert!(w.iter().all(|&v| v.abs() <= 0.05));
        let w = draw_weights(48, 100, InitMode::LecunUniform, &mut rng);
        let limit = (3.0f64 / 48.0).sqrt();
        assert!(w.iter().all(|&v| v.abs() <= limit));
        let w = draw_weights(48, 100, InitMode::HeUniform, &mut rng);
        let limit = (6.0f64 / 48.0).sqrt();
        assert!(w.iter().all(|&v| v.abs() <= limit));
    }

    #[test]
    fn zero_weights_sigmoid_outputs_half() {
        let mut model = init_model(&hp(0), 3, OutputKind::Sigmoid).unwrap();
        for layer in model.hidden.iter_mut().chain(std::iter::once(&mut model.output)) {
            layer.weights.fill(0.0);
        }
        let x = array![[1.0, -2.0, 3.0], [0.0, 0.0, 0.0]];
        let out = model.predict(x.view()).unwrap();
        assert_eq!(out.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn dropout_zero_matches_inference() {
        let model = init_model(&hp(11), 4, OutputKind::Sigmoid).unwrap();
        let x = array![[0.1, 0.2, 0.3, 0.4], [1.0, -1.0, 0.5, -0.5]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let trained = model
            .forward(x.view(), ForwardMode::Training { dropout: 0.0, rng: &mut rng })
            .unwrap();
        let infer = model.predict(x.view()).unwrap();
        assert_eq!(trained, infer);
    }

    #[test]
    fn fixed_all_ones_mask_scales_kept_units() {
        // 1 input -> 2 hidden -> 1 output, hand-checkable numbers
        let model = SnnModel {
            hidden: vec![DenseLayer {
                weights: array![[0.5, -1.0]],
                bias: array![0.1, 0.2],
            }],
            output: DenseLayer {
                weights: array![[2.0], [1.0]],
                bias: array![0.05],
            },
            activation: Activation::Relu,
            output_kind: OutputKind::Linear,
            input_dim: 1,
        };
        let x = array![[2.0]];
        // hidden pre-act: [1.1, -1.8] -> relu [1.1, 0.0]
        // no dropout: out = 2*1.1 + 0.05 = 2.25
        let plain = model.predict(x.view()).unwrap();
        assert_abs_diff_eq!(plain[0], 2.25, epsilon = 1e-12);
        // dropout 0.5 with an all-ones mask doubles the kept activations:
        // out = 2*(1.1/0.5) + 0.05 = 4.45
        let masks = vec![array![[1.0, 1.0]]];
        let dropped = model
            .forward(x.view(), ForwardMode::FixedMask { dropout: 0.5, masks: &masks })
            .unwrap();
        assert_abs_diff_eq!(dropped[0], 4.45, epsilon = 1e-12);
        // masking out the live unit leaves only the bias
        let masks = vec![array![[0.0, 1.0]]];
        let dropped = model
            .forward(x.view(), ForwardMode::FixedMask { dropout: 0.5, masks: &masks })
            .unwrap();
        assert_abs_diff_eq!(dropped[0], 0.05, epsilon = 1e-12);
    }

    #[test]
    fn dropout_expectation_matches_plain_activation() {
        let model = init_model(&hp(21), 5, OutputKind::Linear).unwrap();
        let x = array![[0.3, -0.2, 0.8, 0.5, -0.9]];
        let plain = model.predict(x.view()).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let trials = 10_000;
        let mut sum = 0.0;
        for _ in 0..trials {
            sum += model
                .forward(x.view(), ForwardMode::Training { dropout: 0.3, rng: &mut rng })
                .unwrap()[0];
        }
        let mean = sum / trials as f64;
        assert!(
            (mean - plain).abs() <= 0.02 * plain.abs().max(0.1),
            "mean {mean} vs plain {plain}"
        );
    }

    #[test]
    fn zero_model_balanced_batch_has_zero_output_bias_gradient() {
        let mut model = init_model(&hp(0), 2, OutputKind::Sigmoid).unwrap();
        for layer in model.hidden.iter_mut().chain(std::iter::once(&mut model.output)) {
            layer.weights.fill(0.0);
        }
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let y = [0.0, 1.0];
        let (_, grads) = loss_and_gradients(&model, x.view(), &y, None).unwrap();
        assert_abs_diff_eq!(grads.output.1[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn mse_perfect_predictions_have_zero_gradients() {
        // linear head, weights chosen so the model reproduces y exactly
        let model = SnnModel {
            hidden: vec![DenseLayer {
                weights: array![[1.0]],
                bias: array![0.0],
            }],
            output: DenseLayer {
                weights: array![[1.0]],
                bias: array![0.0],
            },
            activation: Activation::Relu,
            output_kind: OutputKind::Linear,
            input_dim: 1,
        };
        let x = array![[1.0], [2.0], [3.0]];
        let y = [1.0, 2.0, 3.0];
        let (loss, grads) = loss_and_gradients(&model, x.view(), &y, None).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.output.0.iter().all(|&g| g == 0.0));
        assert!(grads.hidden[0].0.iter().all(|&g| g == 0.0));
    }

    /// Central finite differences over every parameter.
    fn finite_difference_check(activation: Activation, output_kind: OutputKind, seed: u64) -> f64 {
        let hp = SnnHyperparams {
            hidden_layers: 2,
            hidden_units: 4,
            activation,
            ..hp(seed)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let model = init_model(&hp, 3, output_kind).unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..5)
            .map(|_| match output_kind {
                OutputKind::Sigmoid => f64::from(rng.gen::<f64>() < 0.5),
                OutputKind::Linear => rng.gen::<f64>() * 2.0 - 1.0,
            })
            .collect();
        let (_, grads) = loss_and_gradients(&model, x.view(), &y, None).unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let mut check = |get: &mut dyn FnMut(&mut SnnModel) -> &mut f64, analytic: f64| {
            let mut probe = model.clone();
            *get(&mut probe) += h;
            let (up, _) = loss_and_gradients(&probe, x.view(), &y, None).unwrap();
            let mut probe = model.clone();
            *get(&mut probe) -= h;
            let (down, _) = loss_and_gradients(&probe, x.view(), &y, None).unwrap();
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max((analytic - numeric).abs() / denom);
        };
        for l in 0..model.hidden.len() {
            for r in 0..model.hidden[l].weights.nrows() {
                for c in 0..model.hidden[l].weights.ncols() {
                    check(&mut |m| &mut m.hidden[l].weights[(r, c)], grads.hidden[l].0[(r, c)]);
                }
            }
            for b in 0..model.hidden[l].bias.len() {
                check(&mut |m| &mut m.hidden[l].bias[b], grads.hidden[l].1[b]);
            }
        }
        for r in 0..model.output.weights.nrows() {
            check(&mut |m| &mut m.output.weights[(r, 0)], grads.output.0[(r, 0)]);
        }
        check(&mut |m| &mut m.output.bias[0], grads.output.1[0]);
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (activation, output_kind) in [
            (Activation::Relu, OutputKind::Sigmoid),
            (Activation::Relu, OutputKind::Linear),
            (Activation::Sigmoid, OutputKind::Sigmoid),
            (Activation::Sigmoid, OutputKind::Linear),
        ] {
            let worst = finite_difference_check(activation, output_kind, 7);
            assert!(
                worst < 1e-5,
                "max relative error {worst} for {activation:?}/{output_kind:?}"
            );
        }
    }

    #[test]
    fn gradient_check_with_fixed_dropout_mask() {
        let hp = hp(13);
        let model = init_model(&hp, 3, OutputKind::Sigmoid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((4, 3), |_| rng.gen::<f64>() - 0.5);
        let y = [1.0, 0.0, 1.0, 0.0];
        let masks = vec![Array2::from_shape_fn((4, hp.hidden_units), |_| {
            f64::from(rng.gen::<f64>() < 0.5)
        })];
        let rate = 0.5;
        let (_, grads) =
            loss_and_gradients(&model, x.view(), &y, Some((rate, &masks))).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for r in 0..3 {
            for c in 0..hp.hidden_units {
                let mut up = model.clone();
                up.hidden[0].weights[(r, c)] += h;
                let (lu, _) = loss_and_gradients(&up, x.view(), &y, Some((rate, &masks))).unwrap();
                let mut down = model.clone();
                down.hidden[0].weights[(r, c)] -= h;
                let (ld, _) =
                    loss_and_gradients(&down, x.view(), &y, Some((rate, &masks))).unwrap();
                let numeric = (lu - ld) / (2.0 * h);
                let analytic = grads.hidden[0].0[(r, c)];
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((analytic - numeric).abs() / denom);
            }
        }
        assert!(worst < 1e-5, "max relative error {worst}");
    }

    fn blobs(seed: u64, n: usize) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |(i, _)| {
            let center = if i % 2 == 0 { -1.0 } else { 1.0 };
            center + rng.gen::<f64>() * 0.6 - 0.3
        });
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        (x, y)
    }

    #[test]
    fn separable_blobs_reach_high_training_auc() {
        let (x, y) = blobs(3, 200);
        let hp = SnnHyperparams {
            epochs: 50,
            batch_size: 32,
            ..hp(17)
        };
        let (model, losses) = train(x.view(), &y, &hp, OutputKind::Sigmoid).unwrap();
        assert_eq!(losses.len(), 50);
        let scores = model.predict(x.view()).unwrap();
        let sl = ScoredLabels::new(scores.to_vec(), y).unwrap();
        assert!(auc_roc(&sl).unwrap() >= 0.99);
        // loss is non-increasing after warm-up, allowing 5% upticks
        for w in losses[5..].windows(2) {
            assert!(w[1] <= w[0] * 1.05, "loss jumped from {} to {}", w[0], w[1]);
        }
    }

    #[test]
    fn linear_target_regression_fits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen::<f64>() * 2.0 - 1.0);
        let y: Vec<f64> = (0..n)
            .map(|i| 3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + (rng.gen::<f64>() - 0.5) * 0.02)
            .collect();
        let hp = SnnHyperparams {
            epochs: 200,
            batch_size: 32,
            learning_rate: 5e-3,
            ..hp(19)
        };
        let (model, _) = train(x.view(), &y, &hp, OutputKind::Linear).unwrap();
        let pred = model.predict(x.view()).unwrap();
        let score = r2(pred.as_slice().unwrap(), &y).unwrap();
        assert!(score >= 0.95, "training R^2 {score}");
    }

    #[test]
    fn training_is_deterministic_and_inference_pure() {
        let (x, y) = blobs(5, 60);
        let hp = SnnHyperparams {
            epochs: 8,
            batch_size: 16,
            dropout: 0.4,
            ..hp(23)
        };
        let (a, la) = train(x.view(), &y, &hp, OutputKind::Sigmoid).unwrap();
        let (b, lb) = train(x.view(), &y, &hp, OutputKind::Sigmoid).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let p1 = a.predict(x.view()).unwrap();
        let p2 = a.predict(x.view()).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut bad = hp(0);
        bad.epochs = 0;
        assert!(matches!(
            train(array![[1.0]].view(), &[1.0], &bad, OutputKind::Sigmoid).unwrap_err(),
            SnnError::InvalidHyperparams(_)
        ));
        let mut bad = hp(0);
        bad.dropout = 1.0;
        assert!(init_model(&bad, 2, OutputKind::Sigmoid).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let model = init_model(&hp(0), 3, OutputKind::Sigmoid).unwrap();
        let x = array![[1.0, 2.0]];
        assert!(matches!(
            model.predict(x.view()).unwrap_err(),
            SnnError::DimensionMismatch { expected: 3, got: 2 }
        ));
    }
}
