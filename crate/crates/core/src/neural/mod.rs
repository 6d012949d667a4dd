//! 1-D convolutional networks over windowed inputs: a fully convolutional
//! network and a residual network, trained with Adadelta.

mod layers;
mod spec;
mod tensor;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::{Samples, Standardizer, WindowedTensor};
use crate::model::{Estimator, Scorer};
use crate::seed;

use layers::{backward, compile, forward, initial_state, Compiled, Ctx, Init};
pub use layers::ParamTensor;
pub use spec::{
    build_fcnn, build_resnet, fcnn_with, resnet_with, LayerShape, LayerSpec, NetworkSpec, Shortcut,
    FCNN_FILTERS, FCNN_KERNELS, RESNET_FILTERS, RESNET_KERNELS,
};
pub use tensor::{Real, Tensor};

/// A network with its parameters and batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: NetworkSpec,
    compiled: Compiled,
    pub params: Vec<T>,
    pub state: Vec<T>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

/// Mean softmax cross-entropy (each sample scaled by its class weight) and
/// its gradient with respect to the logits.
fn softmax_ce<T: Real>(logits: &Tensor<T>, labels: &[bool], weights: [f64; 2]) -> (T, Tensor<T>) {
    let b = T::of(labels.len() as f64);
    let mut grad = Tensor::zeros(logits.n, 1, 2);
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let z = &logits.data[2 * i..2 * i + 2];
        let mx = z[0].max(z[1]);
        let e = [(z[0] - mx).exp(), (z[1] - mx).exp()];
        let s = e[0] + e[1];
        let cls = usize::from(y);
        let w = T::of(weights[cls]);
        loss = loss + w * (s.ln() + mx - z[cls]);
        for k in 0..2 {
            let target = if k == cls { T::one() } else { T::zero() };
            grad.data[2 * i + k] = w * (e[k] / s - target) / b;
        }
    }
    (loss / b, grad)
}

impl<T: Real> Network<T> {
    /// Glorot-uniform kernels, zero biases, unit batch-norm scales.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.shapes()?;
        let compiled = compile(&spec);
        let mut rng = seed::rng(seed);
        let mut params = vec![T::zero(); compiled.n_params];
        for t in &compiled.tensors {
            let slot = &mut params[t.offset..t.offset + t.len];
            match t.init {
                Init::Glorot { fan_in, fan_out } => {
                    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    slot.iter_mut().for_each(|p| *p = T::of(rng.gen_range(-limit..limit)));
                }
                Init::Zeros => slot.fill(T::zero()),
                Init::Ones => slot.fill(T::one()),
            }
        }
        let mut state = vec![T::zero(); compiled.n_state];
        initial_state(&compiled.layers, &mut state);
        Ok(Network { spec, compiled, params, state, bn_momentum: 0.9, bn_epsilon: 1e-3 })
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.compiled.tensors
    }

    fn input(&self, values: Vec<T>, n: usize) -> Tensor<T> {
        Tensor { n, t: self.spec.h, c: self.spec.m, data: values }
    }

    /// Inference-mode logits (frozen batch-norm statistics).
    pub fn logits(&self, values: Vec<T>, n: usize) -> Tensor<T> {
        let mut state = self.state.clone();
        let mut ctx = Ctx {
            params: &self.params,
            state: &mut state,
            train: false,
            momentum: T::of(self.bn_momentum),
            eps: T::of(self.bn_epsilon),
            tape: None,
            relu_signs: None,
        };
        forward(&self.compiled.layers, self.input(values, n), &mut ctx)
    }

    /// Training-mode loss and parameter gradient. Updates the running
    /// statistics.
    pub fn loss_and_grad(&mut self, values: Vec<T>, labels: &[bool], weights: [f64; 2]) -> (T, Vec<T>) {
        let n = labels.len();
        let x = self.input(values, n);
        let mut ctx = Ctx {
            params: &self.params,
            state: &mut self.state,
            train: true,
            momentum: T::of(self.bn_momentum),
            eps: T::of(self.bn_epsilon),
            tape: Some(Vec::new()),
            relu_signs: None,
        };
        let logits = forward(&self.compiled.layers, x, &mut ctx);
        let mut tape = ctx.tape.take().unwrap();
        let (loss, dlogits) = softmax_ce(&logits, labels, weights);
        let mut grads = vec![T::zero(); self.params.len()];
        backward(&self.compiled.layers, dlogits, &self.params, &mut grads, &mut tape);
        debug_assert!(tape.is_empty());
        (loss, grads)
    }

    /// Training-mode loss without touching the running statistics.
    pub fn train_loss(&self, values: Vec<T>, labels: &[bool], weights: [f64; 2]) -> T {
        let mut state = self.state.clone();
        let mut ctx = Ctx {
            params: &self.params,
            state: &mut state,
            train: true,
            momentum: T::of(self.bn_momentum),
            eps: T::of(self.bn_epsilon),
            tape: None,
            relu_signs: None,
        };
        let logits = forward(&self.compiled.layers, self.input(values, labels.len()), &mut ctx);
        softmax_ce(&logits, labels, weights).0
    }

    /// Training-mode loss plus the sign pattern of every ReLU input.
    fn train_loss_and_signs(&self, values: Vec<T>, labels: &[bool]) -> (T, Vec<bool>) {
        let mut state = self.state.clone();
        let mut ctx = Ctx {
            params: &self.params,
            state: &mut state,
            train: true,
            momentum: T::of(self.bn_momentum),
            eps: T::of(self.bn_epsilon),
            tape: None,
            relu_signs: Some(Vec::new()),
        };
        let logits = forward(&self.compiled.layers, self.input(values, labels.len()), &mut ctx);
        let signs = ctx.relu_signs.take().unwrap();
        (softmax_ce(&logits, labels, [1.0, 1.0]).0, signs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Adadelta decay.
    pub rho: f64,
    /// Adadelta stabilizer.
    pub epsilon: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Fit per-feature standardization on the training data.
    pub standardize: bool,
    /// Weight classes by N / (2 · n_class). Off by default.
    pub balanced_class_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 64,
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
            bn_momentum: 0.9,
            bn_epsilon: 1e-3,
            standardize: true,
            balanced_class_weights: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.rho) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("invalid Adadelta settings"));
        }
        Ok(())
    }
}

struct Adadelta {
    rho: f32,
    eps: f32,
    lr: f32,
    grad_sq: Vec<f32>,
    delta_sq: Vec<f32>,
}

impl Adadelta {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Adadelta {
            rho: cfg.rho as f32,
            eps: cfg.epsilon as f32,
            lr: cfg.learning_rate as f32,
            grad_sq: vec![0.0; n],
            delta_sq: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        let (rho, eps, lr) = (self.rho, self.eps, self.lr);
        for i in 0..params.len() {
            let g = grads[i];
            self.grad_sq[i] = rho * self.grad_sq[i] + (1.0 - rho) * g * g;
            let delta = ((self.delta_sq[i] + eps).sqrt() / (self.grad_sq[i] + eps).sqrt()) * g;
            params[i] -= lr * delta;
            self.delta_sq[i] = rho * self.delta_sq[i] + (1.0 - rho) * delta * delta;
        }
    }
}

pub const NETWORK_FORMAT: &str = "faultprone.network/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedNetwork {
    pub spec: NetworkSpec,
    pub config: TrainConfig,
    pub seed: u64,
    pub class_weights: [f64; 2],
    pub standardizer: Standardizer,
    pub params: Vec<f32>,
    pub state: Vec<f32>,
    /// Mean training loss per epoch.
    pub loss_log: Vec<f64>,
}

fn check_shape(spec: &NetworkSpec, data: &WindowedTensor) -> Result<()> {
    if data.h != spec.h || data.m != spec.m {
        return Err(Error::Shape { expected_h: spec.h, expected_m: spec.m, got_h: data.h, got_m: data.m });
    }
    Ok(())
}

fn gather(data: &[f32], sample_len: usize, idx: &[usize]) -> Vec<f32> {
    let mut out = Vec::with_capacity(idx.len() * sample_len);
    for &i in idx {
        out.extend_from_slice(&data[i * sample_len..(i + 1) * sample_len]);
    }
    out
}

/// Mini-batch Adadelta on softmax cross-entropy. Initialization and the
/// per-epoch shuffles are derived from `seed`.
pub fn train(spec: &NetworkSpec, data: &WindowedTensor, cfg: &TrainConfig, seed: u64) -> Result<TrainedNetwork> {
    cfg.validate()?;
    check_shape(spec, data)?;
    let pos = data.positives();
    if pos == 0 || pos == data.n {
        return Err(Error::invalid("training set has a single class"));
    }
    let standardizer = if cfg.standardize { Standardizer::fit(data) } else { Standardizer::identity(data.m) };
    let mut values = data.values.clone();
    standardizer.apply(&mut values);
    let class_weights = if cfg.balanced_class_weights {
        let n = data.n as f64;
        [n / (2.0 * (data.n - pos) as f64), n / (2.0 * pos as f64)]
    } else {
        [1.0, 1.0]
    };

    let mut net = Network::<f32>::new(spec.clone(), seed::derive(seed, seed::stream::NETWORK_INIT, 0))?;
    net.bn_momentum = cfg.bn_momentum;
    net.bn_epsilon = cfg.bn_epsilon;
    let mut opt = Adadelta::new(cfg, net.params.len());
    let sample_len = data.h * data.m;
    let mut order: Vec<usize> = (0..data.n).collect();
    let mut loss_log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut seed::derived_rng(seed, seed::stream::NETWORK_SHUFFLE, epoch as u64));
        let mut total = 0.0f64;
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = gather(&values, sample_len, idx);
            let labels: Vec<bool> = idx.iter().map(|&i| data.labels[i]).collect();
            let (loss, grads) = net.loss_and_grad(x, &labels, class_weights);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            total += f64::from(loss) * idx.len() as f64;
            opt.step(&mut net.params, &grads);
        }
        let mean = total / data.n as f64;
        log::debug!("{} epoch {epoch}: loss {mean:.5}", spec.name);
        loss_log.push(mean);
    }
    Ok(TrainedNetwork {
        spec: spec.clone(),
        config: cfg.clone(),
        seed,
        class_weights,
        standardizer,
        params: net.params,
        state: net.state,
        loss_log,
    })
}

const PREDICT_BATCH: usize = 64;

impl TrainedNetwork {
    pub fn network(&self) -> Network<f32> {
        let compiled = compile(&self.spec);
        Network {
            spec: self.spec.clone(),
            compiled,
            params: self.params.clone(),
            state: self.state.clone(),
            bn_momentum: self.config.bn_momentum,
            bn_epsilon: self.config.bn_epsilon,
        }
    }

    /// Class probabilities per sample, scored `batch` samples at a time.
    pub fn predict_proba(&self, data: &WindowedTensor, batch: usize) -> Result<Vec<[f64; 2]>> {
        check_shape(&self.spec, data)?;
        let net = self.network();
        let mut values = data.values.clone();
        self.standardizer.apply(&mut values);
        let sample_len = data.h * data.m;
        let mut out = Vec::with_capacity(data.n);
        for chunk in values.chunks(batch.max(1) * sample_len.max(1)) {
            let n = chunk.len() / sample_len;
            let logits = net.logits(chunk.to_vec(), n);
            for z in logits.data.chunks(2) {
                let (z0, z1) = (f64::from(z[0]), f64::from(z[1]));
                let mx = z0.max(z1);
                let (e0, e1) = ((z0 - mx).exp(), (z1 - mx).exp());
                out.push([e0 / (e0 + e1), e1 / (e0 + e1)]);
            }
        }
        Ok(out)
    }

    /// Positive-class probability per sample.
    pub fn predict_scores(&self, data: &WindowedTensor) -> Result<Vec<f64>> {
        Ok(self.predict_proba(data, PREDICT_BATCH)?.into_iter().map(|p| p[1]).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }
}

impl Scorer<WindowedTensor> for TrainedNetwork {
    fn score(&self, data: &WindowedTensor) -> Result<Vec<f64>> {
        self.predict_scores(data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Fcnn,
    Resnet,
}

/// Architecture with its filter and kernel sizes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkPreset {
    pub architecture: Architecture,
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
}

impl NetworkPreset {
    pub fn fcnn() -> Self {
        NetworkPreset { architecture: Architecture::Fcnn, filters: FCNN_FILTERS.into(), kernels: FCNN_KERNELS.into() }
    }

    pub fn resnet() -> Self {
        NetworkPreset {
            architecture: Architecture::Resnet,
            filters: RESNET_FILTERS.into(),
            kernels: RESNET_KERNELS.into(),
        }
    }

    /// Same layout at an eighth of the width, for single-core runs.
    pub fn desk(architecture: Architecture) -> Self {
        let full = match architecture {
            Architecture::Fcnn => Self::fcnn(),
            Architecture::Resnet => Self::resnet(),
        };
        NetworkPreset { filters: full.filters.iter().map(|f| (f / 8).max(1)).collect(), ..full }
    }

    pub fn build(&self, h: usize, m: usize) -> NetworkSpec {
        match self.architecture {
            Architecture::Fcnn => fcnn_with(h, m, &self.filters, &self.kernels),
            Architecture::Resnet => resnet_with(h, m, &self.filters, &self.kernels),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEstimator {
    pub preset: NetworkPreset,
    pub config: TrainConfig,
}

impl Estimator<WindowedTensor> for NetworkEstimator {
    fn id(&self) -> String {
        match self.preset.architecture {
            Architecture::Fcnn => "FCNN".into(),
            Architecture::Resnet => "ResNet".into(),
        }
    }

    fn fit(&self, train_set: &WindowedTensor, seed: u64) -> Result<Box<dyn Scorer<WindowedTensor>>> {
        let spec = self.preset.build(train_set.h, train_set.m);
        Ok(Box::new(train(&spec, train_set, &self.config, seed)?))
    }
}

/// A saved network with the catalog it was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub format: String,
    pub catalog_digest: String,
    pub feature_names: Vec<String>,
    pub network: TrainedNetwork,
}

impl NetworkFile {
    pub fn new(network: TrainedNetwork, catalog_digest: &str, feature_names: &[String]) -> Self {
        NetworkFile {
            format: NETWORK_FORMAT.into(),
            catalog_digest: catalog_digest.into(),
            feature_names: feature_names.to_vec(),
            network,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: NetworkFile = serde_json::from_slice(&bytes)?;
        if file.format != NETWORK_FORMAT {
            return Err(Error::Artifact {
                path: path.display().to_string(),
                message: format!("unsupported network format `{}`", file.format),
            });
        }
        Ok(file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// Worst relative error over every checked entry.
    pub max_relative_error: f64,
    /// Worst relative error per parameter tensor.
    pub per_tensor: Vec<(String, f64)>,
    /// Entries skipped because a ±step perturbation moved some ReLU input
    /// across zero, where central differences are meaningless.
    pub skipped_at_kinks: usize,
}

/// Smallest denominator used when comparing near-zero gradients.
pub const GRADIENT_FLOOR: f64 = 1e-6;

/// Compares back-propagated gradients with central differences (step 1e-5)
/// in double precision, with batch norm in training mode. Up to
/// `entries_per_tensor` randomly chosen entries of every parameter tensor are
/// checked. Biases and batch-norm parameters are jittered away from their
/// initial values first so that no gradient is trivially symmetric.
pub fn gradient_check(
    spec: &NetworkSpec,
    data: &WindowedTensor,
    seed: u64,
    entries_per_tensor: usize,
) -> Result<GradientCheck> {
    check_shape(spec, data)?;
    const STEP: f64 = 1e-5;
    let mut net = Network::<f64>::new(spec.clone(), seed)?;
    let mut rng = seed::rng(seed ^ 0x5eed);
    for t in net.tensors().to_vec() {
        if !matches!(t.init, Init::Glorot { .. }) {
            for p in &mut net.params[t.offset..t.offset + t.len] {
                *p += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let x: Vec<f64> = data.values.iter().map(|&v| f64::from(v)).collect();
    let (_, analytic) = net.clone().loss_and_grad(x.clone(), &data.labels, [1.0, 1.0]);
    let (_, base_signs) = net.train_loss_and_signs(x.clone(), &data.labels);
    let mut per_tensor = Vec::new();
    let mut worst = 0.0f64;
    let mut skipped = 0;
    for t in net.tensors().to_vec() {
        let mut order: Vec<usize> = (0..t.len).collect();
        order.shuffle(&mut rng);
        let mut checked = 0;
        let mut tensor_worst = 0.0f64;
        for j in order.into_iter().map(|j| t.offset + j) {
            if checked == entries_per_tensor {
                break;
            }
            let orig = net.params[j];
            net.params[j] = orig + STEP;
            let (up, up_signs) = net.train_loss_and_signs(x.clone(), &data.labels);
            net.params[j] = orig - STEP;
            let (down, down_signs) = net.train_loss_and_signs(x.clone(), &data.labels);
            net.params[j] = orig;
            if up_signs != base_signs || down_signs != base_signs {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
            tensor_worst = tensor_worst.max(err);
            checked += 1;
        }
        worst = worst.max(tensor_worst);
        per_tensor.push((t.name.clone(), tensor_worst));
    }
    Ok(GradientCheck { max_relative_error: worst, per_tensor, skipped_at_kinks: skipped })
}
