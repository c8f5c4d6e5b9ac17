//! Deep fully connected autoencoder whose bottleneck is the channel chart.
//!
//! Training minimizes `(1/2N) sum ||f - dec(enc(f))||^2 + (beta/2) ||W_enc_last||_F^2`
//! with mini-batch Adam. Gradients are computed by hand-written reverse-mode
//! accumulation through every layer.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ChannelChart, Diagnostics};
use crate::error::{Error, Result};
use crate::features::FeatureSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Softplus,
    Relu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Identity,
        Activation::Tanh,
        Activation::Softplus,
        Activation::Relu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Softplus => 2,
            Activation::Relu => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.code() == code)
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            // log(1 + e^x) without overflow
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown activation {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_seed: 1,
            shuffle_seed: 2,
        }
    }
}

/// Layer layout of the autoencoder. The decoder mirrors the encoder's widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderSpec {
    /// Hidden encoder widths; the bottleneck (chart dimension) follows them.
    pub hidden: Vec<usize>,
    pub encoder_activations: Vec<Activation>,
    pub decoder_activations: Vec<Activation>,
    /// Weight decay on the last encoder layer's weights.
    pub weight_decay: f64,
    pub training: TrainingSettings,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        use Activation::*;
        Self {
            hidden: vec![500, 100, 50, 20],
            encoder_activations: vec![Tanh, Tanh, Softplus, Tanh, Identity],
            decoder_activations: vec![Relu, Tanh, Softplus, Tanh, Identity],
            weight_decay: 1e-3,
            training: TrainingSettings::default(),
        }
    }
}

impl AutoencoderSpec {
    pub fn layers_per_side(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `(fan_in, fan_out)` of every layer, encoder first.
    pub fn layer_shapes(&self, input_dim: usize, chart_dims: usize) -> Vec<(usize, usize)> {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(chart_dims);
        widths.extend(self.hidden.iter().rev());
        widths.push(input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.encoder_activations
            .iter()
            .chain(&self.decoder_activations)
            .copied()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.layers_per_side();
        if self.encoder_activations.len() != l || self.decoder_activations.len() != l {
            return Err(Error::Parameter(format!(
                "{} layers per side need {l} activations each, got {} and {}",
                l,
                self.encoder_activations.len(),
                self.decoder_activations.len()
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Parameter("hidden widths must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter("weight_decay must be non-negative".into()));
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Parameter("epochs and batch_size must be positive".into()));
        }
        if t.learning_rate.is_nan()
            || t.learning_rate <= 0.0
            || !(0.0..1.0).contains(&t.beta1)
            || !(0.0..1.0).contains(&t.beta2)
            || t.epsilon.is_nan()
            || t.epsilon <= 0.0
        {
            return Err(Error::Parameter("invalid optimizer settings".into()));
        }
        Ok(())
    }

    fn record(&self, diag: &mut Diagnostics) {
        let m = &mut diag.settings;
        let t = &self.training;
        m.insert("hidden".into(), join(&self.hidden));
        m.insert("encoder_activations".into(), join(&self.encoder_activations));
        m.insert("decoder_activations".into(), join(&self.decoder_activations));
        m.insert("weight_decay".into(), self.weight_decay.to_string());
        m.insert("epochs".into(), t.epochs.to_string());
        m.insert("batch_size".into(), t.batch_size.to_string());
        m.insert("learning_rate".into(), t.learning_rate.to_string());
        m.insert(
            "optimizer".into(),
            format!("adam(beta1={}, beta2={}, eps={})", t.beta1, t.beta2, t.epsilon),
        );
        m.insert("init".into(), "uniform(+-sqrt(6/(fan_in+fan_out))), zero bias".into());
        m.insert("init_seed".into(), t.init_seed.to_string());
        m.insert("shuffle_seed".into(), t.shuffle_seed.to_string());
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out x fan_in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Trained (or initialized) network weights, encoder layers first.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub layers: Vec<Layer>,
    pub activations: Vec<Activation>,
    /// Number of encoder layers; the last of them produces the chart point.
    pub encoder_layers: usize,
}

impl AutoencoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &AutoencoderSpec, input_dim: usize, chart_dims: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes(input_dim, chart_dims)
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_fn((fan_out, fan_in), |_| limit * (2.0 * rng.random::<f64>() - 1.0)),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self {
            layers,
            activations: spec.activations(),
            encoder_layers: spec.layers_per_side(),
        }
    }

    /// All-zero parameters with the spec's shapes.
    pub fn zeros(spec: &AutoencoderSpec, input_dim: usize, chart_dims: usize) -> Self {
        let layers = spec
            .layer_shapes(input_dim, chart_dims)
            .into_iter()
            .map(|(fan_in, fan_out)| Layer {
                weights: Array2::zeros((fan_out, fan_in)),
                bias: Array1::zeros(fan_out),
            })
            .collect();
        Self {
            layers,
            activations: spec.activations(),
            encoder_layers: spec.layers_per_side(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.weights.ncols())
    }

    pub fn chart_dims(&self) -> usize {
        self.layers[self.encoder_layers - 1].weights.nrows()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != self.activations.len() {
            return Err(Error::Contract("one activation per layer required".into()));
        }
        if self.encoder_layers == 0 || self.encoder_layers > self.layers.len() {
            return Err(Error::Contract("encoder layer count out of range".into()));
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].weights.nrows() != w[1].weights.ncols() {
                return Err(Error::Contract(format!(
                    "layer {i} output does not feed layer {}",
                    i + 1
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::Contract(format!("layer {i} bias length mismatch")));
            }
        }
        if self.layers.last().map(|l| l.weights.nrows()) != Some(self.input_dim()) {
            return Err(Error::Contract("decoder output width differs from input width".into()));
        }
        Ok(())
    }

    fn encoder_last_weights(&self) -> &Array2<f64> {
        &self.layers[self.encoder_layers - 1].weights
    }
}

/// Per-layer cached values of a batched forward pass.
struct Trace {
    /// `outputs[0]` is the input batch; `outputs[l + 1]` the output of layer `l`.
    outputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

fn forward_batch(params: &AutoencoderParams, x: ArrayView2<'_, f64>, upto: usize) -> Trace {
    let mut outputs = Vec::with_capacity(upto + 1);
    let mut pre = Vec::with_capacity(upto);
    outputs.push(x.to_owned());
    for (layer, act) in params.layers.iter().zip(&params.activations).take(upto) {
        let input = outputs.last().expect("input present");
        let mut a = input.dot(&layer.weights.t());
        a += &layer.bias;
        let y = a.mapv(|v| act.apply(v));
        pre.push(a);
        outputs.push(y);
    }
    Trace { outputs, pre }
}

/// Chart point and reconstruction of a single feature vector.
pub fn ae_forward(params: &AutoencoderParams, f: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    params.validate()?;
    if f.len() != params.input_dim() {
        return Err(Error::Contract(format!(
            "feature has {} entries, network expects {}",
            f.len(),
            params.input_dim()
        )));
    }
    let x = f.insert_axis(Axis(0));
    let trace = forward_batch(params, x, params.layers.len());
    let z = trace.outputs[params.encoder_layers].row(0).to_owned();
    let fhat = trace.outputs.last().expect("output").row(0).to_owned();
    Ok((z, fhat))
}

/// Encodes every row of `features` (`N x M'`) into a `D' x N` chart.
pub fn encode(params: &AutoencoderParams, features: ArrayView2<'_, f64>) -> Array2<f64> {
    let trace = forward_batch(params, features, params.encoder_layers);
    trace.outputs[params.encoder_layers].t().to_owned()
}

/// Gradients with the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

/// Regularized loss on `batch` (`B x M'`) normalized by the batch size, and its gradient.
pub fn loss_and_gradient(
    params: &AutoencoderParams,
    batch: ArrayView2<'_, f64>,
    weight_decay: f64,
) -> (f64, Gradients) {
    let nb = batch.nrows() as f64;
    let depth = params.layers.len();
    let trace = forward_batch(params, batch, depth);
    let out = trace.outputs.last().expect("output");
    let resid = out - &batch;
    let w_last = params.encoder_last_weights();
    let loss = resid.iter().map(|v| v * v).sum::<f64>() / (2.0 * nb)
        + 0.5 * weight_decay * w_last.iter().map(|v| v * v).sum::<f64>();

    let mut gw = vec![Array2::zeros((0, 0)); depth];
    let mut gb = vec![Array1::zeros(0); depth];
    let mut upstream = resid / nb;
    for l in (0..depth).rev() {
        let act = params.activations[l];
        let pre = &trace.pre[l];
        let y = &trace.outputs[l + 1];
        let mut delta = upstream;
        ndarray::Zip::from(&mut delta)
            .and(pre)
            .and(y)
            .for_each(|d, &x, &yv| *d *= act.derivative(x, yv));
        let input = &trace.outputs[l];
        let mut w_grad = delta.t().dot(input);
        if l == params.encoder_layers - 1 && weight_decay != 0.0 {
            w_grad.scaled_add(weight_decay, &params.layers[l].weights);
        }
        gb[l] = delta.sum_axis(Axis(0));
        gw[l] = w_grad;
        upstream = if l > 0 {
            delta.dot(&params.layers[l].weights)
        } else {
            Array2::zeros((0, 0))
        };
    }
    (loss, Gradients { weights: gw, bias: gb })
}

/// Regularized loss over the full feature matrix.
pub fn full_loss(params: &AutoencoderParams, features: ArrayView2<'_, f64>, weight_decay: f64) -> f64 {
    let n = features.nrows();
    let mut sq = 0.0;
    let chunk = 256;
    for start in (0..n).step_by(chunk) {
        let x = features.slice(s![start..(start + chunk).min(n), ..]);
        let trace = forward_batch(params, x, params.layers.len());
        sq += (trace.outputs.last().expect("output") - &x)
            .iter()
            .map(|v| v * v)
            .sum::<f64>();
    }
    let w = params.encoder_last_weights();
    sq / (2.0 * n as f64) + 0.5 * weight_decay * w.iter().map(|v| v * v).sum::<f64>()
}

struct Adam {
    mw: Vec<Array2<f64>>,
    vw: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    step: i32,
}

impl Adam {
    fn new(params: &AutoencoderParams) -> Self {
        Self {
            mw: params
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            vw: params
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            mb: params.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            vb: params.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut AutoencoderParams, grads: &Gradients, s: &TrainingSettings) {
        self.step += 1;
        let c1 = 1.0 - s.beta1.powi(self.step);
        let c2 = 1.0 - s.beta2.powi(self.step);
        let lr = s.learning_rate;
        let (b1, b2, eps) = (s.beta1, s.beta2, s.epsilon);
        for (l, layer) in params.layers.iter_mut().enumerate() {
            ndarray::Zip::from(&mut layer.weights)
                .and(&grads.weights[l])
                .and(&mut self.mw[l])
                .and(&mut self.vw[l])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&grads.bias[l])
                .and(&mut self.mb[l])
                .and(&mut self.vb[l])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

/// Trains an autoencoder on the feature rows and returns it with the chart
/// formed by the encoder outputs.
pub fn ae_train(
    spec: &AutoencoderSpec,
    features: &FeatureSet,
    chart_dims: usize,
) -> Result<(AutoencoderParams, ChannelChart)> {
    spec.validate()?;
    if chart_dims == 0 {
        return Err(Error::Parameter("chart dimension must be positive".into()));
    }
    let n = features.len();
    let t = &spec.training;
    if n < t.batch_size {
        return Err(Error::Parameter(format!(
            "{n} feature vectors are fewer than the batch size {}",
            t.batch_size
        )));
    }
    let x = features.vectors.view();
    let mut params = AutoencoderParams::init(spec, features.dim(), chart_dims, t.init_seed);
    let mut adam = Adam::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(t.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(t.epochs);
    let mut batch = Array2::zeros((t.batch_size, features.dim()));

    for epoch in 0..t.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(t.batch_size) {
            if batch.nrows() != chunk.len() {
                batch = Array2::zeros((chunk.len(), features.dim()));
            }
            for (r, &i) in chunk.iter().enumerate() {
                batch.row_mut(r).assign(&x.row(i));
            }
            let (loss, grads) = loss_and_gradient(&params, batch.view(), spec.weight_decay);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len();
            adam.update(&mut params, &grads, t);
        }
        let mean = epoch_loss / seen as f64;
        log::debug!("epoch {epoch}: loss {mean:.6e}");
        history.push(mean);
    }

    let points = encode(&params, x);
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::TrainingDivergence { epoch: t.epochs });
    }
    let mut diagnostics = Diagnostics {
        iterations: t.epochs,
        final_objective: Some(full_loss(&params, x, spec.weight_decay)),
        objective_history: history,
        ..Diagnostics::default()
    };
    spec.record(&mut diagnostics);
    let chart = ChannelChart {
        points,
        method: "ae".into(),
        diagnostics,
    };
    Ok((params, chart))
}
