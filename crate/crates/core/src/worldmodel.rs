//! Frozen encoder, multilayer perceptrons with hand-written backprop, the
//! forward-dynamics ensemble that supplies the columns of the state matrix,
//! and the RND target/predictor pair.

use std::io::{self, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::curiosity::StateMatrix;
use crate::error::{Error, Result};
use crate::matlin::DenseMatrix;
use crate::optim::Sgd;
use crate::seeding::{derive_seed, Rng};
use rand::SeedableRng;

/// Snapshot file magic.
pub const SNAPSHOT_MAGIC: [u8; 4] = *b"NNMW";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Feed-forward network: tanh on hidden layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    weights: Vec<DenseMatrix>,
    biases: Vec<Vec<f64>>,
}

/// Per-layer activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

/// Gradient (or update) with the same layout as an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.data().len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        self.values_mut().for_each(|x| *x *= c);
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    /// Flattened in the same order as [`Mlp::params_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl Mlp {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization of every layer.
    pub fn new(layer_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(DenseMatrix::new(fan_out, fan_in, data)?);
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<DenseMatrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::InvalidSpec(format!(
                "MLP needs matching non-empty weight/bias lists ({} vs {})",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].cols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_sizes.last().unwrap() {
                return Err(Error::dimension(
                    "Mlp::from_parts",
                    format!("layer {i} expects {} inputs", w.cols()),
                    format!("previous layer emits {}", layer_sizes.last().unwrap()),
                ));
            }
            if b.len() != w.rows() {
                return Err(Error::dimension(
                    "Mlp::from_parts",
                    format!("layer {i} weights {}x{}", w.rows(), w.cols()),
                    format!("bias of length {}", b.len()),
                ));
            }
            if b.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("bias of layer {i}")));
            }
            layer_sizes.push(w.rows());
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
        })
    }

    /// A network of the given shape with every parameter zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| DenseMatrix::zeros(p[1], p[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "MLP layer sizes {layer_sizes:?} need at least two positive entries"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[DenseMatrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.data().len() + b.len())
            .sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let last = self.weights.len() - 1;
        let mut x = input.to_vec();
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = w.matvec(&x)?;
            y.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            x = y;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        self.check_input(input)?;
        let last = self.weights.len() - 1;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(input.to_vec());
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut y = w.matvec(activations.last().unwrap())?;
            y.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(y);
        }
        Ok(ForwardCache { activations })
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::dimension(
                "Mlp::forward",
                format!("network input {}", self.input_dim()),
                format!("vector of length {}", input.len()),
            ));
        }
        Ok(())
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d output`,
    /// and returns `d loss / d input`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut Gradients) -> Vec<f64> {
        self.backpropagate(cache, grad_output, grads, true)
    }

    /// Like [`Mlp::backward`] without the input gradient.
    pub fn accumulate_gradients(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut Gradients) {
        self.backpropagate(cache, grad_output, grads, false);
    }

    fn backpropagate(&self, cache: &ForwardCache, grad_output: &[f64], grads: &mut Gradients, input_grad: bool) -> Vec<f64> {
        assert_eq!(grad_output.len(), self.output_dim(), "gradient length");
        let mut delta = grad_output.to_vec();
        for i in (0..self.weights.len()).rev() {
            let a_in = &cache.activations[i];
            let w = &self.weights[i];
            let cols = w.cols();
            let gw = &mut grads.weights[i];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[r * cols..(r + 1) * cols];
                row.iter_mut().zip(a_in).for_each(|(g, &a)| *g += d * a);
            }
            grads.biases[i].iter_mut().zip(&delta).for_each(|(g, &d)| *g += d);
            if i == 0 && !input_grad {
                return Vec::new();
            }
            let mut grad_in = w.matvec_transposed(&delta).expect("shapes checked at construction");
            if i > 0 {
                // a_in = tanh(pre), d tanh = 1 - a^2
                grad_in
                    .iter_mut()
                    .zip(a_in)
                    .for_each(|(g, &a)| *g *= 1.0 - a * a);
            }
            delta = grad_in;
        }
        delta
    }

    /// `params -= step`, failing if any parameter becomes non-finite.
    pub fn apply_step(&mut self, step: &Gradients) -> Result<()> {
        for (w, s) in self.weights.iter_mut().zip(&step.weights) {
            w.data_mut().iter_mut().zip(s).for_each(|(p, d)| *p -= d);
        }
        for (b, s) in self.biases.iter_mut().zip(&step.biases) {
            b.iter_mut().zip(s).for_each(|(p, d)| *p -= d);
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("network parameters after update".into()));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(DenseMatrix::is_finite)
            && self.biases.iter().flatten().all(|x| x.is_finite())
    }

    /// Parameters flattened layer by layer: weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dimension(
                "Mlp::set_params_flat",
                format!("{} parameters", self.param_count()),
                format!("{} values", params.len()),
            ));
        }
        let mut it = params.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.data_mut().iter_mut().for_each(|p| *p = it.next().unwrap());
            b.iter_mut().for_each(|p| *p = it.next().unwrap());
        }
        if !self.is_finite() {
            return Err(Error::NonFinite("flat parameter vector".into()));
        }
        Ok(())
    }

    /// FNV-1a over the parameter bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.params_flat() {
            for byte in p.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let plus = f(&probe);
            probe[i] = orig - h;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// Largest `|a - b| / max(|a|, |b|, 1e-6)` over paired entries. The floor keeps
/// gradients that are analytically zero from dividing roundoff by zero.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Step size used by [`gradient_check`].
pub const GRADIENT_CHECK_STEP: f64 = 1e-5;

/// Compares backprop gradients of `0.5 |net(input) - target|^2` with central
/// finite differences and returns the largest relative error.
pub fn gradient_check(net: &Mlp, input: &[f64], target: &[f64]) -> Result<f64> {
    let analytic = loss_gradient(net, input, target)?.to_flat();
    let mut probe = net.clone();
    let numeric = central_difference(
        |p| {
            probe.set_params_flat(p).expect("finite probe");
            half_squared_error(&probe.forward(input).expect("checked"), target)
        },
        &net.params_flat(),
        GRADIENT_CHECK_STEP,
    );
    Ok(max_relative_error(&analytic, &numeric))
}

/// Backprop gradient of `0.5 |net(input) - target|^2`.
pub fn loss_gradient(net: &Mlp, input: &[f64], target: &[f64]) -> Result<Gradients> {
    if target.len() != net.output_dim() {
        return Err(Error::dimension(
            "loss_gradient",
            format!("network output {}", net.output_dim()),
            format!("target of length {}", target.len()),
        ));
    }
    let cache = net.forward_cached(input)?;
    let grad_out: Vec<f64> = cache.output().iter().zip(target).map(|(y, t)| y - t).collect();
    let mut grads = Gradients::zeros_like(net);
    net.backward(&cache, &grad_out, &mut grads);
    Ok(grads)
}

fn half_squared_error(y: &[f64], t: &[f64]) -> f64 {
    0.5 * y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Frozen random projection `tanh(W o + b)` from observations to encodings.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    weights: DenseMatrix,
    bias: Vec<f64>,
}

impl Encoder {
    /// Weights uniform in (-1, 1), bias uniform in (-0.1, 0.1).
    pub fn new(obs_dim: usize, encoding_dim: usize, rng: &mut Rng) -> Result<Self> {
        let weights = DenseMatrix::from_fn(encoding_dim, obs_dim, |_, _| rng.random_range(-1.0..1.0))?;
        let bias = (0..encoding_dim).map(|_| rng.random_range(-0.1..0.1)).collect();
        Ok(Self { weights, bias })
    }

    pub fn from_parts(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dimension(
                "Encoder::from_parts",
                format!("weights {}x{}", weights.rows(), weights.cols()),
                format!("bias of length {}", bias.len()),
            ));
        }
        Ok(Self { weights, bias })
    }

    pub fn encode(&self, observation: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(observation)?;
        z.iter_mut().zip(&self.bias).for_each(|(v, b)| *v = (*v + b).tanh());
        Ok(z)
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn obs_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn encoding_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn fingerprint(&self) -> u64 {
        Mlp::from_parts(vec![self.weights.clone()], vec![self.bias.clone()])
            .expect("encoder shapes are consistent")
            .fingerprint()
    }
}

/// `concat(z, one_hot(action))`.
pub fn state_action_input(z: &[f64], action: usize, action_count: usize) -> Result<Vec<f64>> {
    if action >= action_count {
        return Err(Error::InvalidAction {
            action,
            count: action_count,
        });
    }
    let mut x = Vec::with_capacity(z.len() + action_count);
    x.extend_from_slice(z);
    x.extend((0..action_count).map(|a| if a == action { 1.0 } else { 0.0 }));
    Ok(x)
}

/// One `(z_t, a_t, z_{t+1})` training example.
#[derive(Debug, Clone, Copy)]
pub struct DynamicsSample<'a> {
    pub z: &'a [f64],
    pub action: usize,
    pub next_z: &'a [f64],
}

/// Shape and optimizer settings shared by the learned models.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoding_dim: usize,
    pub action_count: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl ModelConfig {
    pub fn new(encoding_dim: usize, action_count: usize) -> Self {
        Self {
            encoding_dim,
            action_count,
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            clip_norm: 5.0,
        }
    }

    fn layer_sizes(&self, output: usize) -> Vec<usize> {
        let mut sizes = vec![self.encoding_dim + self.action_count];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(output);
        sizes
    }
}

/// A trainable regression network with its SGD optimizer.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub net: Mlp,
    pub optimizer: Sgd,
}

impl Predictor {
    /// One SGD step on the batch mean of the squared distance
    /// `||net(x) - y||^2`; returns the loss measured before the step.
    pub fn train_step(&mut self, inputs: &[Vec<f64>], targets: &[&[f64]]) -> Result<f64> {
        let scale = 2.0 / inputs.len() as f64;
        let mut grads = Gradients::zeros_like(&self.net);
        let mut loss = 0.0;
        let mut grad_out = vec![0.0; self.net.output_dim()];
        for (x, y) in inputs.iter().zip(targets) {
            let cache = self.net.forward_cached(x)?;
            for ((g, p), t) in grad_out.iter_mut().zip(cache.output()).zip(y.iter()) {
                let e = p - t;
                loss += e * e;
                *g = scale * e;
            }
            self.net.accumulate_gradients(&cache, &grad_out, &mut grads);
        }
        loss *= scale / 2.0;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { member: 0, loss });
        }
        self.optimizer
            .step(&mut self.net, &grads)
            .map_err(|_| Error::TrainingDivergence { member: 0, loss })?;
        Ok(loss)
    }
}

/// `n` forward-dynamics models `g_i(z_t, a_t) -> z_{t+1}` with independent initializations.
#[derive(Debug, Clone)]
pub struct Ensemble {
    members: Vec<Predictor>,
    config: ModelConfig,
}

impl Ensemble {
    /// Member `i` is initialized from a seed derived from `(seed, i)`.
    pub fn new(n: usize, config: ModelConfig, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::DegenerateEnsemble(n));
        }
        let sizes = config.layer_sizes(config.encoding_dim);
        let members = (0..n)
            .map(|i| {
                let mut rng = Rng::seed_from_u64(derive_seed(seed, i as u64));
                Ok(Predictor {
                    net: Mlp::new(&sizes, &mut rng)?,
                    optimizer: Sgd::new(config.learning_rate, config.clip_norm),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { members, config })
    }

    pub fn from_members(nets: Vec<Mlp>, config: ModelConfig) -> Result<Self> {
        if nets.len() < 2 {
            return Err(Error::DegenerateEnsemble(nets.len()));
        }
        let expected = config.layer_sizes(config.encoding_dim);
        for net in &nets {
            if net.input_dim() != expected[0] || net.output_dim() != config.encoding_dim {
                return Err(Error::dimension(
                    "Ensemble::from_members",
                    format!("{} -> {}", expected[0], config.encoding_dim),
                    format!("{} -> {}", net.input_dim(), net.output_dim()),
                ));
            }
        }
        let members = nets
            .into_iter()
            .map(|net| Predictor {
                net,
                optimizer: Sgd::new(config.learning_rate, config.clip_norm),
            })
            .collect();
        Ok(Self { members, config })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> impl Iterator<Item = &Mlp> {
        self.members.iter().map(|p| &p.net)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.members.iter_mut().for_each(|p| p.optimizer.learning_rate = lr);
    }

    pub fn predictions(&self, z: &[f64], action: usize) -> Result<Vec<Vec<f64>>> {
        let x = state_action_input(z, action, self.config.action_count)?;
        self.members.iter().map(|p| p.net.forward(&x)).collect()
    }

    /// `m x n` matrix whose column `i` is member `i`'s prediction.
    pub fn predict_matrix(&self, z: &[f64], action: usize) -> Result<StateMatrix> {
        StateMatrix::from_columns(&self.predictions(z, action)?)
    }

    /// One gradient step per member on the batch; returns each member's
    /// pre-step mean squared error.
    pub fn train_step(&mut self, batch: &[DynamicsSample<'_>]) -> Result<Vec<f64>> {
        if batch.is_empty() {
            return Err(Error::Empty("dynamics training batch"));
        }
        let (inputs, targets) = split_batch(batch, self.config.action_count)?;
        let mut losses = Vec::with_capacity(self.members.len());
        for (i, member) in self.members.iter_mut().enumerate() {
            let loss = member.train_step(&inputs, &targets).map_err(|e| match e {
                Error::TrainingDivergence { loss, .. } => Error::TrainingDivergence { member: i, loss },
                other => other,
            })?;
            losses.push(loss);
        }
        Ok(losses)
    }
}

/// Network inputs paired with borrowed targets.
type Batch<'a> = (Vec<Vec<f64>>, Vec<&'a [f64]>);

fn split_batch<'a>(batch: &[DynamicsSample<'a>], action_count: usize) -> Result<Batch<'a>> {
    let inputs = batch
        .iter()
        .map(|s| state_action_input(s.z, s.action, action_count))
        .collect::<Result<Vec<_>>>()?;
    let targets = batch.iter().map(|s| s.next_z).collect();
    Ok((inputs, targets))
}

/// Single forward model for the ICM reward.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    predictor: Predictor,
    config: ModelConfig,
}

impl ForwardModel {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let net = Mlp::new(&config.layer_sizes(config.encoding_dim), rng)?;
        Ok(Self {
            predictor: Predictor {
                net,
                optimizer: Sgd::new(config.learning_rate, config.clip_norm),
            },
            config,
        })
    }

    pub fn net(&self) -> &Mlp {
        &self.predictor.net
    }

    /// Replaces the network parameters; shapes must match.
    pub fn restore(&mut self, net: &Mlp) -> Result<()> {
        self.predictor.net.set_params_flat(&net.params_flat())
    }

    pub fn predict(&self, z: &[f64], action: usize) -> Result<Vec<f64>> {
        let x = state_action_input(z, action, self.config.action_count)?;
        self.predictor.net.forward(&x)
    }

    pub fn train_step(&mut self, batch: &[DynamicsSample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("dynamics training batch"));
        }
        let (inputs, targets) = split_batch(batch, self.config.action_count)?;
        self.predictor.train_step(&inputs, &targets)
    }
}

/// Frozen random target network and the predictor distilled towards it.
#[derive(Debug, Clone)]
pub struct RndPair {
    frozen: Mlp,
    predictor: Predictor,
    config: ModelConfig,
}

impl RndPair {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        let sizes = config.layer_sizes(config.encoding_dim);
        let frozen = Mlp::new(&sizes, rng)?;
        let net = Mlp::new(&sizes, rng)?;
        Ok(Self {
            frozen,
            predictor: Predictor {
                net,
                optimizer: Sgd::new(config.learning_rate, config.clip_norm),
            },
            config,
        })
    }

    pub fn frozen(&self) -> &Mlp {
        &self.frozen
    }

    pub fn predictor(&self) -> &Mlp {
        &self.predictor.net
    }

    pub fn restore(&mut self, predictor: &Mlp, frozen: &Mlp) -> Result<()> {
        self.predictor.net.set_params_flat(&predictor.params_flat())?;
        self.frozen.set_params_flat(&frozen.params_flat())
    }

    /// `(predictor output, frozen output)` for a state-action pair.
    pub fn outputs(&self, z: &[f64], action: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = state_action_input(z, action, self.config.action_count)?;
        Ok((self.predictor.net.forward(&x)?, self.frozen.forward(&x)?))
    }

    pub fn train_step(&mut self, batch: &[DynamicsSample<'_>]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("distillation batch"));
        }
        let inputs = batch
            .iter()
            .map(|s| state_action_input(s.z, s.action, self.config.action_count))
            .collect::<Result<Vec<_>>>()?;
        let frozen_out = inputs
            .iter()
            .map(|x| self.frozen.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<&[f64]> = frozen_out.iter().map(Vec::as_slice).collect();
        self.predictor.train_step(&inputs, &targets)
    }
}

/// Writes one network record: magic, version, layer count, layer sizes,
/// then every layer's weights (row-major) and bias as little-endian f64.
pub fn write_mlp<W: Write>(out: &mut W, net: &Mlp) -> io::Result<()> {
    out.write_all(&SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&(net.weights.len() as u32).to_le_bytes())?;
    for &s in &net.layer_sizes {
        out.write_all(&(s as u32).to_le_bytes())?;
    }
    for p in net.params_flat() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one network record; `Ok(None)` on a clean end of stream.
pub fn read_mlp<R: Read>(input: &mut R) -> Result<Option<Mlp>> {
    let mut magic = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        let n = input.read(&mut magic[filled..])?;
        if n == 0 {
            if filled == 0 {
                return Ok(None);
            }
            return Err(Error::Snapshot("truncated record header".into()));
        }
        filled += n;
    }
    if magic != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot(format!("bad magic {magic:?}")));
    }
    let version = read_u32(input)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let layers = read_u32(input)? as usize;
    if layers == 0 || layers > 1024 {
        return Err(Error::Snapshot(format!("implausible layer count {layers}")));
    }
    let sizes = (0..=layers)
        .map(|_| read_u32(input).map(|s| s as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut net = Mlp::zeros(&sizes).map_err(|e| Error::Snapshot(e.to_string()))?;
    let mut params = vec![0.0; net.param_count()];
    let mut buf = [0u8; 8];
    for p in params.iter_mut() {
        input
            .read_exact(&mut buf)
            .map_err(|_| Error::Snapshot("truncated parameter data".into()))?;
        *p = f64::from_le_bytes(buf);
    }
    net.set_params_flat(&params)
        .map_err(|e| Error::Snapshot(e.to_string()))?;
    Ok(Some(net))
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input
        .read_exact(&mut buf)
        .map_err(|_| Error::Snapshot("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Writes a sequence of network records to `path`.
pub fn save_snapshot(path: &Path, nets: &[&Mlp]) -> Result<()> {
    let mut out = io::BufWriter::new(std::fs::File::create(path)?);
    for net in nets {
        write_mlp(&mut out, net)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<Vec<Mlp>> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let mut input = io::BufReader::new(std::fs::File::open(path)?);
    let mut nets = Vec::new();
    while let Some(net) = read_mlp(&mut input)? {
        nets.push(net);
    }
    Ok(nets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let w = DenseMatrix::from_rows(&[[1.0, 2.0], [-1.0, 0.5]]).unwrap();
        let net = Mlp::from_parts(vec![w], vec![vec![0.25, -1.0]]).unwrap();
        assert_eq!(net.forward(&[2.0, 4.0]).unwrap(), vec![10.25, -1.0]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = Mlp::zeros(&[3, 2]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let w1 = DenseMatrix::zeros(4, 3);
        let w2 = DenseMatrix::zeros(2, 5);
        assert!(Mlp::from_parts(vec![w1.clone(), w2], vec![vec![0.0; 4], vec![0.0; 2]]).is_err());
        assert!(Mlp::from_parts(vec![w1], vec![vec![0.0; 3]]).is_err());
    }

    #[test]
    fn linear_one_by_one_gradient_is_exact() {
        let w = DenseMatrix::from_rows(&[[0.7]]).unwrap();
        let net = Mlp::from_parts(vec![w], vec![vec![-0.2]]).unwrap();
        assert!(gradient_check(&net, &[1.3], &[0.4]).unwrap() <= 1e-8);
    }

    #[test]
    fn zero_input_zero_target_output_weight_gradient_vanishes() {
        let net = Mlp::new(&[3, 4, 2], &mut rng(3)).unwrap();
        let cache = net.forward_cached(&[0.0; 3]).unwrap();
        let target = vec![0.0; 2];
        let g = loss_gradient(&net, &[0.0; 3], &target).unwrap();
        // First-layer weights multiply a zero input, so their gradient is exactly zero.
        assert!(g.weights[0].iter().all(|&x| x == 0.0));
        // Output bias gradient equals the output itself.
        assert_eq!(g.biases[1], cache.output().to_vec());
        assert!(gradient_check(&net, &[0.0; 3], &target).unwrap() <= 1e-4);
    }

    #[test]
    fn encoder_is_deterministic_and_zero_obs_gives_tanh_bias() {
        let enc = Encoder::new(6, 4, &mut rng(11)).unwrap();
        let zero = enc.encode(&[0.0; 6]).unwrap();
        let expected: Vec<f64> = enc.bias().iter().map(|b| b.tanh()).collect();
        assert_eq!(zero, expected);
        let o = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(enc.encode(&o).unwrap(), enc.encode(&o).unwrap());
        assert!(enc.encode(&[1.0; 5]).is_err());
    }

    #[test]
    fn ensemble_needs_two_members() {
        assert!(matches!(
            Ensemble::new(1, ModelConfig::new(4, 2), 0),
            Err(Error::DegenerateEnsemble(1))
        ));
    }

    #[test]
    fn identical_members_give_rank_one_matrix() {
        let cfg = ModelConfig::new(6, 3);
        let net = Mlp::new(&[9, 64, 64, 6], &mut rng(5)).unwrap();
        let ens = Ensemble::from_members(vec![net.clone(), net.clone(), net], cfg).unwrap();
        let z = ens.predict_matrix(&[0.1, -0.2, 0.3, 0.0, 0.5, -0.9], 1).unwrap();
        let r = crate::curiosity::nnm_reward(&z).unwrap();
        assert!((r - 1.0 / 6.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn hand_set_linear_members() {
        let mut cfg = ModelConfig::new(2, 1);
        cfg.hidden.clear();
        let a = Mlp::from_parts(
            vec![DenseMatrix::from_rows(&[[1.0, 0.0, 1.0], [0.0, 2.0, 0.0]]).unwrap()],
            vec![vec![0.0, 1.0]],
        )
        .unwrap();
        let b = Mlp::from_parts(
            vec![DenseMatrix::from_rows(&[[0.0, 1.0, 0.0], [-1.0, 0.0, 3.0]]).unwrap()],
            vec![vec![0.5, 0.0]],
        )
        .unwrap();
        let ens = Ensemble::from_members(vec![a, b], cfg).unwrap();
        let z = ens.predict_matrix(&[2.0, 3.0], 0).unwrap();
        // input (2, 3, 1)
        assert_eq!(z.matrix().column(0), vec![3.0, 7.0]);
        assert_eq!(z.matrix().column(1), vec![3.5, 1.0]);
    }

    #[test]
    fn train_step_with_exact_targets_is_identity() {
        let cfg = ModelConfig::new(3, 2);
        let mut ens = Ensemble::new(2, cfg, 9).unwrap();
        let z = [0.2, -0.1, 0.4];
        let preds = ens.predictions(&z, 1).unwrap();
        // Both members must see their own predictions as targets, so train them one at a time.
        let before: Vec<Mlp> = ens.members().cloned().collect();
        for (i, p) in preds.iter().enumerate() {
            let sample = [DynamicsSample { z: &z, action: 1, next_z: p }];
            let loss = ens.members[i].train_step(
                &[state_action_input(&z, 1, 2).unwrap()],
                &[sample[0].next_z],
            );
            assert_eq!(loss.unwrap(), 0.0);
        }
        let after: Vec<Mlp> = ens.members().cloned().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let cfg = ModelConfig::new(3, 2);
        let mut ens = Ensemble::new(3, cfg, 1).unwrap();
        ens.set_learning_rate(0.0);
        let before: Vec<u64> = ens.members().map(Mlp::fingerprint).collect();
        let z = [0.5, 0.5, -0.5];
        let next = [0.0, 1.0, 0.0];
        let losses = ens
            .train_step(&[DynamicsSample { z: &z, action: 0, next_z: &next }])
            .unwrap();
        assert!(losses.iter().all(|&l| l > 0.0));
        let after: Vec<u64> = ens.members().map(Mlp::fingerprint).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut ens = Ensemble::new(2, ModelConfig::new(3, 2), 1).unwrap();
        assert!(matches!(ens.train_step(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn snapshot_rejects_bad_magic_and_truncation() {
        let net = Mlp::new(&[2, 3, 1], &mut rng(4)).unwrap();
        let mut bytes = Vec::new();
        write_mlp(&mut bytes, &net).unwrap();
        assert_eq!(&bytes[..4], b"NNMW");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 3 * 4 + net.param_count() * 8);

        let back = read_mlp(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!(back, net);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(read_mlp(&mut corrupt.as_slice()), Err(Error::Snapshot(_))));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(read_mlp(&mut &truncated[..]), Err(Error::Snapshot(_))));
        assert!(read_mlp(&mut &[][..]).unwrap().is_none());
    }

    #[test]
    fn missing_snapshot_is_explicit() {
        let err = load_snapshot(Path::new("/definitely/not/here.nnmw")).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
    }
}
