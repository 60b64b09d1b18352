//! A small tanh MLP field trained with the conditional flow-matching loss.
//! Backpropagation is written out by hand; there is no autodiff.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GmmTarget, VectorField};
use crate::error::{Error, Result};
use crate::trajectory::rng::{sample_prior, stream_rng, streams};
use crate::trajectory::Path;

/// Fully connected network: tanh on hidden layers, identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    /// `weights[l]` has shape `(widths[l+1], widths[l])`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Parameter-shaped gradient (or optimizer moment) buffers.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl MlpGrads {
    fn zeros_like(m: &Mlp) -> Self {
        MlpGrads {
            weights: m.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: m.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self.weights.iter().map(|w| w.iter().map(|x| x * x).sum::<f64>()).sum();
        let b: f64 = self.biases.iter().map(|b| b.iter().map(|x| x * x).sum::<f64>()).sum();
        (w + b).sqrt()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(format!("bad MLP widths {widths:?}")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Visits parameters in checkpoint order: per layer, weights row-major then biases.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(self.biases.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    /// Returns the activations of every layer, input first, output last.
    fn forward_trace(&self, input: Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(input);
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = acts[l].dot(&w.t());
            z += b;
            if l < last {
                z.mapv_inplace(f64::tanh);
            }
            acts.push(z);
        }
        acts
    }

    /// Batched forward pass; rows are samples.
    pub fn forward(&self, input: Array2<f64>) -> Array2<f64> {
        self.forward_trace(input).pop().unwrap()
    }

    /// Mean over rows of `||f(x) - y||^2`, and its gradient.
    pub fn mse_and_grad(&self, input: Array2<f64>, target: &Array2<f64>) -> (f64, MlpGrads) {
        let batch = input.nrows() as f64;
        let acts = self.forward_trace(input);
        let out = acts.last().unwrap();
        let resid = out - target;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / batch;

        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = resid * (2.0 / batch);
        for l in (0..self.weights.len()).rev() {
            grads.weights[l] = delta.t().dot(&acts[l]);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.weights[l]);
                back.zip_mut_with(&acts[l], |g, a| *g *= 1.0 - a * a);
                delta = back;
            }
        }
        (loss, grads)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, model: &mut Mlp, grads: &MlpGrads, lr: f64) {
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        let g = grads.flatten();
        for (((p, g), m), v) in model
            .params_mut()
            .zip(&g)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / b1t;
            let v_hat = *v / b2t;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// An MLP read as a path field: input is `vec(tau)` followed by `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpField {
    pub net: Mlp,
    dim: usize,
    horizon: usize,
}

impl MlpField {
    /// `hidden` are the hidden-layer widths; input and output widths follow
    /// from the path shape.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        horizon: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let n = dim * (horizon + 1);
        let mut widths = vec![n + 1];
        widths.extend_from_slice(hidden);
        widths.push(n);
        Ok(MlpField {
            net: Mlp::new(&widths, rng)?,
            dim,
            horizon,
        })
    }

    pub fn from_net(net: Mlp, dim: usize, horizon: usize) -> Result<Self> {
        let n = dim * (horizon + 1);
        let w = net.widths();
        if w[0] != n + 1 || *w.last().unwrap() != n {
            return Err(Error::invalid(format!(
                "MLP widths {w:?} do not fit paths with {n} coordinates"
            )));
        }
        Ok(MlpField { net, dim, horizon })
    }

    fn input_rows(&self, taus: &[&Path], ts: &[f64]) -> Array2<f64> {
        let n = self.dim * (self.horizon + 1);
        let mut x = Array2::zeros((taus.len(), n + 1));
        for (i, (tau, t)) in taus.iter().zip(ts).enumerate() {
            let mut row = x.row_mut(i);
            for (dst, src) in row.iter_mut().zip(tau.as_slice()) {
                *dst = *src;
            }
            row[n] = *t;
        }
        x
    }
}

impl VectorField for MlpField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        self.check_input(tau)?;
        let out = self.net.forward(self.input_rows(&[tau], &[t]));
        Path::from_columns(self.dim, out.into_iter().collect())
    }
}

/// One CFM minibatch: times, noise paths, data paths.
#[derive(Clone, Debug)]
pub struct CfmBatch {
    pub times: Vec<f64>,
    pub noise: Vec<Path>,
    pub data: Vec<Path>,
}

impl CfmBatch {
    pub fn sample<R: Rng + ?Sized>(gmm: &GmmTarget, size: usize, rng: &mut R) -> Self {
        let mut batch = CfmBatch {
            times: Vec::with_capacity(size),
            noise: Vec::with_capacity(size),
            data: Vec::with_capacity(size),
        };
        for _ in 0..size {
            batch.times.push(rng.random::<f64>());
            batch.noise.push(sample_prior(gmm.dim(), gmm.horizon(), rng));
            batch.data.push(gmm.sample(rng));
        }
        batch
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CfmBatchLoss {
    pub value: f64,
    pub grad_norm: f64,
}

/// CFM loss `mean ||v_t(tau_t) - (tau_1 - tau_0)||^2` along
/// `tau_t = (1 - t) tau_0 + t tau_1`, with its parameter gradient.
pub fn cfm_loss_and_grad(model: &MlpField, batch: &CfmBatch) -> (f64, MlpGrads) {
    let interps: Vec<Path> = batch
        .times
        .iter()
        .zip(&batch.noise)
        .zip(&batch.data)
        .map(|((&t, x0), x1)| {
            let mut tau = x0 * (1.0 - t);
            tau.axpy(t, x1);
            tau
        })
        .collect();
    let refs: Vec<&Path> = interps.iter().collect();
    let input = model.input_rows(&refs, &batch.times);
    let n = model.dim * (model.horizon + 1);
    let mut target = Array2::zeros((batch.times.len(), n));
    for (i, (x0, x1)) in batch.noise.iter().zip(&batch.data).enumerate() {
        for ((dst, a), b) in target.row_mut(i).iter_mut().zip(x1.as_slice()).zip(x0.as_slice()) {
            *dst = a - b;
        }
    }
    model.net.mse_and_grad(input, &target)
}

/// Samples a batch, evaluates the loss, and applies one Adam step.
/// Returns the loss measured before the update.
pub fn cfm_train_step<R: Rng + ?Sized>(
    model: &mut MlpField,
    opt: &mut Adam,
    gmm: &GmmTarget,
    batch_size: usize,
    learning_rate: f64,
    rng: &mut R,
) -> Result<CfmBatchLoss> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    let batch = CfmBatch::sample(gmm, batch_size, rng);
    let (value, grads) = cfm_loss_and_grad(model, &batch);
    let grad_norm = grads.norm();
    if !value.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence(format!(
            "loss {value}, gradient norm {grad_norm} at step {}",
            opt.steps_taken() + 1
        )));
    }
    opt.update(&mut model.net, &grads, learning_rate);
    if model.net.params().any(|p| !p.is_finite()) {
        return Err(Error::Divergence("non-finite parameter after update".into()));
    }
    Ok(CfmBatchLoss { value, grad_norm })
}

/// Resumable position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, as a decimal string (it is a `u128`).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(seed: u64, rng: &ChaCha8Rng) -> Self {
        RngState {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = stream_rng(self.seed, self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| Error::invalid(format!("rng word position: {e}")))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }

    pub fn fresh(seed: u64) -> Self {
        RngState::capture(seed, &stream_rng(seed, streams::TRAINING))
    }
}

/// JSON checkpoint layout for [`MlpField`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub d: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub widths: Vec<usize>,
    /// One row-major `(out, in)` matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: String,
    pub rng_state: RngState,
}

impl MlpCheckpoint {
    pub fn from_field(field: &MlpField, rng_state: RngState) -> Self {
        MlpCheckpoint {
            d: field.dim,
            horizon: field.horizon,
            widths: field.net.widths.clone(),
            weights: field.net.weights.iter().map(|w| w.iter().copied().collect()).collect(),
            biases: field.net.biases.iter().map(|b| b.to_vec()).collect(),
            activation: "tanh".into(),
            rng_state,
        }
    }

    pub fn to_field(&self) -> Result<MlpField> {
        if self.activation != "tanh" {
            return Err(Error::invalid(format!("unsupported activation {}", self.activation)));
        }
        let layers = self.widths.len().saturating_sub(1);
        if layers == 0 || self.weights.len() != layers || self.biases.len() != layers {
            return Err(Error::invalid("checkpoint layer count does not match widths"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in self.widths.windows(2).enumerate() {
            let w = Array2::from_shape_vec((pair[1], pair[0]), self.weights[l].clone())
                .map_err(|e| Error::invalid(format!("layer {l} weights: {e}")))?;
            if self.biases[l].len() != pair[1] {
                return Err(Error::invalid(format!("layer {l} bias length")));
            }
            if w.iter().chain(&self.biases[l]).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("checkpoint parameters"));
            }
            weights.push(w);
            biases.push(Array1::from(self.biases[l].clone()));
        }
        let net = Mlp {
            widths: self.widths.clone(),
            weights,
            biases,
        };
        MlpField::from_net(net, self.d, self.horizon)
    }
}

/// Hyperparameters for [`train_cfm`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainParams {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            hidden: vec![128, 128],
            steps: 5000,
            batch_size: 64,
            learning_rate: 3e-4,
            seed: 0,
        }
    }
}

impl TrainParams {
    /// The untrained model: Xavier initialization from the `INIT` stream.
    pub fn init_field(&self, dim: usize, horizon: usize) -> Result<MlpField> {
        MlpField::new(dim, horizon, &self.hidden, &mut stream_rng(self.seed, streams::INIT))
    }
}

/// Result of a training run: the model, per-step losses and the position of
/// the training stream after the last step.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub field: MlpField,
    pub losses: Vec<f64>,
    pub rng_state: RngState,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint::from_field(&self.field, self.rng_state.clone())
    }
}

/// Initializes from the `INIT` stream and runs `steps` Adam updates on the
/// `TRAINING` stream. `on_step` sees the 1-based step, its loss and the
/// updated model.
pub fn train_cfm<F: FnMut(usize, CfmBatchLoss, &MlpField) -> Result<()>>(
    gmm: &GmmTarget,
    params: &TrainParams,
    mut on_step: F,
) -> Result<TrainOutcome> {
    let mut field = params.init_field(gmm.dim(), gmm.horizon())?;
    let mut opt = Adam::new(field.net.num_params());
    let mut rng = stream_rng(params.seed, streams::TRAINING);
    let mut losses = Vec::with_capacity(params.steps);
    for step in 1..=params.steps {
        let loss = cfm_train_step(
            &mut field,
            &mut opt,
            gmm,
            params.batch_size,
            params.learning_rate,
            &mut rng,
        )?;
        losses.push(loss.value);
        on_step(step, loss, &field)?;
    }
    Ok(TrainOutcome {
        field,
        losses,
        rng_state: RngState::capture(params.seed, &rng),
    })
}
