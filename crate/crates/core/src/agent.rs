//! Actor-critic agent: rollout collection with curiosity rewards, GAE and
//! clipped-surrogate PPO updates.
//!
//! Each step encodes the observation, samples an action, computes the
//! intrinsic reward from the configured curiosity model and stores
//! `alpha * r_int + beta * r_ext`. The critic has two heads: the extrinsic
//! head is episodic (bootstrapping stops at `done`), the intrinsic head is
//! not, so ending an episode never cuts off future novelty.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::curiosity::{self, MatrixSource, RewardMethod, RewardMixer, RewardSpec, StateMatrix};
use crate::envs::{make_env, noise_wrap, EnvSpec, Environment};
use crate::error::{Error, Result};
use crate::memory::{ReplayBuffer, Transition, DEFAULT_CAPACITY};
use crate::optim::Adam;
use crate::seeding::{derive_seed, rng_for, tags, Rng};
use crate::worldmodel::{
    DynamicsSample, Encoder, Ensemble, ForwardModel, Gradients, Mlp, ModelConfig, RndPair,
};

/// Episodes kept for the trailing mean return.
pub const RECENT_EPISODES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub policy_hidden: Vec<usize>,
    pub encoding_dim: usize,
    pub model_hidden: Vec<usize>,
    pub model_learning_rate: f64,
    pub model_clip_norm: f64,
    pub model_batch: usize,
    /// Dynamics/distillation gradient steps after every rollout.
    pub model_updates: usize,
    pub replay_capacity: usize,
    /// Std of Gaussian noise added to every encoded feature vector.
    pub noise_sigma: f64,
    pub reward: RewardSpec,
}

impl AgentConfig {
    pub fn new(reward: RewardSpec) -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            rollout_len: 512,
            epochs: 4,
            minibatch_size: 64,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            policy_hidden: vec![64, 64],
            encoding_dim: 32,
            model_hidden: vec![64, 64],
            model_learning_rate: 1e-3,
            model_clip_norm: 5.0,
            model_batch: 32,
            model_updates: 64,
            replay_capacity: DEFAULT_CAPACITY,
            noise_sigma: 0.0,
            reward,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return bad(format!("clip_epsilon must be positive, got {}", self.clip_epsilon));
        }
        if self.rollout_len == 0 || self.epochs == 0 || self.minibatch_size == 0 {
            return bad("rollout_len, epochs and minibatch_size must be at least 1".into());
        }
        if self.encoding_dim == 0 || self.model_batch == 0 || self.replay_capacity == 0 {
            return bad("encoding_dim, model_batch and replay_capacity must be at least 1".into());
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("model_learning_rate", self.model_learning_rate),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        self.reward.validate()
    }

    fn model_config(&self, action_count: usize) -> ModelConfig {
        ModelConfig {
            encoding_dim: self.encoding_dim,
            action_count,
            hidden: self.model_hidden.clone(),
            learning_rate: self.model_learning_rate,
            clip_norm: self.model_clip_norm,
        }
    }
}

/// Actor, the two critic heads and their optimizers.
#[derive(Debug, Clone)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic_ext: Mlp,
    pub critic_int: Mlp,
    actor_opt: Adam,
    critic_ext_opt: Adam,
    critic_int_opt: Adam,
}

impl PolicyParams {
    pub fn new(
        encoding_dim: usize,
        action_count: usize,
        hidden: &[usize],
        learning_rate: f64,
        clip_norm: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let sizes = |out: usize| {
            let mut s = vec![encoding_dim];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let mut actor = Mlp::new(&sizes(action_count), rng)?;
        // Start close to the uniform policy.
        let mut params = actor.params_flat();
        let last = actor.layer_sizes().len() - 2;
        let tail = actor.weights()[last].data().len() + actor.biases()[last].len();
        let n = params.len();
        params[n - tail..].iter_mut().for_each(|p| *p *= 0.01);
        actor.set_params_flat(&params)?;
        let critic_ext = Mlp::new(&sizes(1), rng)?;
        let critic_int = Mlp::new(&sizes(1), rng)?;
        Ok(Self::from_nets(actor, critic_ext, critic_int, learning_rate, clip_norm))
    }

    pub fn from_nets(actor: Mlp, critic_ext: Mlp, critic_int: Mlp, learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            actor_opt: Adam::new(&actor, learning_rate, clip_norm),
            critic_ext_opt: Adam::new(&critic_ext, learning_rate, clip_norm),
            critic_int_opt: Adam::new(&critic_int, learning_rate, clip_norm),
            actor,
            critic_ext,
            critic_int,
        }
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic_ext.is_finite() && self.critic_int.is_finite()
    }

    pub fn action_probs(&self, z: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.actor.forward(z)?)
    }

    pub fn values(&self, z: &[f64]) -> Result<(f64, f64)> {
        Ok((self.critic_ext.forward(z)?[0], self.critic_int.forward(z)?[0]))
    }
}

/// Numerically stable softmax; fails on non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::PolicyDivergence(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub log_prob: f64,
    pub value_ext: f64,
    pub value_int: f64,
}

/// Samples from `softmax(actor(z))` and evaluates both critic heads.
pub fn select_action(p: &PolicyParams, z: &[f64], rng: &mut Rng) -> Result<ActionSample> {
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("policy input encoding".into()));
    }
    let logits = p.actor.forward(z)?;
    let probs = softmax(&logits)?;
    let logp = log_softmax(&logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut action = probs.len() - 1;
    for (i, &pr) in probs.iter().enumerate() {
        acc += pr;
        if u < acc {
            action = i;
            break;
        }
    }
    let (value_ext, value_int) = p.values(z)?;
    Ok(ActionSample {
        action,
        log_prob: logp[action],
        value_ext,
        value_int,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    /// Policy input (encoded, possibly noisy, observation).
    pub z: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub value_ext: f64,
    pub value_int: f64,
    pub r_ext: f64,
    /// Raw intrinsic reward.
    pub r_int: f64,
    /// Intrinsic reward after optional running-std normalization.
    pub r_int_scaled: f64,
    pub r_total: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub ext_return: f64,
    pub length: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    /// Critic values of the state following the last step.
    pub last_value_ext: f64,
    pub last_value_int: f64,
    /// Episodes that finished during this rollout.
    pub episodes: Vec<EpisodeRecord>,
}

/// Generalized advantage estimates for one reward stream. With `episodic`
/// set, `dones[t]` stops bootstrapping from step `t + 1`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
    episodic: bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let keep = if episodic && dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * keep * next_value - values[t];
        running = delta + gamma * lambda * keep * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advantages {
    /// Combined advantages, normalized per batch (when the batch has more than one step).
    pub advantages: Vec<f64>,
    /// Combined advantages before normalization.
    pub raw: Vec<f64>,
    pub returns_ext: Vec<f64>,
    pub returns_int: Vec<f64>,
}

/// Extrinsic stream `beta * r_ext` (episodic) plus intrinsic stream
/// `alpha * r_int_scaled` (non-episodic).
pub fn compute_advantages(rollout: &Rollout, cfg: &AgentConfig) -> Advantages {
    let spec = &cfg.reward;
    let dones: Vec<bool> = rollout.steps.iter().map(|s| s.done).collect();
    let r_ext: Vec<f64> = rollout.steps.iter().map(|s| spec.beta * s.r_ext).collect();
    let r_int: Vec<f64> = rollout.steps.iter().map(|s| spec.alpha * s.r_int_scaled).collect();
    let v_ext: Vec<f64> = rollout.steps.iter().map(|s| s.value_ext).collect();
    let v_int: Vec<f64> = rollout.steps.iter().map(|s| s.value_int).collect();
    let (a_ext, returns_ext) = gae(&r_ext, &v_ext, &dones, rollout.last_value_ext, cfg.gamma, cfg.gae_lambda, true);
    let (a_int, returns_int) = gae(&r_int, &v_int, &dones, rollout.last_value_int, cfg.gamma, cfg.gae_lambda, false);
    let raw: Vec<f64> = a_ext.iter().zip(&a_int).map(|(a, b)| a + b).collect();
    Advantages {
        advantages: normalize(&raw),
        raw,
        returns_ext,
        returns_int,
    }
}

fn normalize(xs: &[f64]) -> Vec<f64> {
    if xs.len() < 2 {
        return xs.to_vec();
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    xs.iter().map(|x| (x - mean) / (std + 1e-8)).collect()
}

/// Input to the clipped surrogate for one step.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateSample<'a> {
    pub z: &'a [f64],
    pub action: usize,
    pub old_log_prob: f64,
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SurrogateStats {
    pub loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Mean of `-min(ratio A, clip(ratio, 1 - eps, 1 + eps) A) - entropy_coef H`
/// over the batch, and its gradient with respect to the actor parameters.
pub fn surrogate_loss(
    actor: &Mlp,
    batch: &[SurrogateSample<'_>],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<(SurrogateStats, Gradients)> {
    let mut grads = Gradients::zeros_like(actor);
    let mut stats = SurrogateStats::default();
    let inv = 1.0 / batch.len() as f64;
    for s in batch {
        let cache = actor.forward_cached(s.z)?;
        let logits = cache.output();
        let probs = softmax(logits)?;
        let logp = log_softmax(logits);
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let log_ratio = logp[s.action] - s.old_log_prob;
        let ratio = log_ratio.exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon) * s.advantage;
        let objective = unclipped.min(clipped);
        stats.loss += inv * (-objective - entropy_coef * entropy);
        stats.entropy += inv * entropy;
        stats.approx_kl += inv * (ratio - 1.0 - log_ratio);
        if (ratio - 1.0).abs() > clip_epsilon {
            stats.clip_fraction += inv;
        }
        // d(-objective)/d logp[action]
        let g_logp = if unclipped <= clipped { -ratio * s.advantage } else { 0.0 };
        let grad_logits: Vec<f64> = probs
            .iter()
            .zip(&logp)
            .enumerate()
            .map(|(j, (&p, &l))| {
                let onehot = if j == s.action { 1.0 } else { 0.0 };
                inv * (g_logp * (onehot - p) + entropy_coef * p * (l + entropy))
            })
            .collect();
        actor.accumulate_gradients(&cache, &grad_logits, &mut grads);
    }
    if !stats.loss.is_finite() {
        return Err(Error::PolicyDivergence(format!("surrogate loss {}", stats.loss)));
    }
    Ok((stats, grads))
}

/// `0.5 * value_coef * mean (critic(z) - target)^2` and its gradient.
pub fn value_loss(critic: &Mlp, inputs: &[&[f64]], targets: &[f64], value_coef: f64) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(critic);
    let inv = 1.0 / inputs.len() as f64;
    let mut loss = 0.0;
    for (z, &t) in inputs.iter().zip(targets) {
        let cache = critic.forward_cached(z)?;
        let e = cache.output()[0] - t;
        loss += 0.5 * value_coef * inv * e * e;
        critic.accumulate_gradients(&cache, &[value_coef * inv * e], &mut grads);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate PPO over `cfg.epochs` shuffled passes of minibatches.
/// Reported statistics are averages over all minibatches.
pub fn update_policy(
    p: &mut PolicyParams,
    rollout: &Rollout,
    adv: &Advantages,
    cfg: &AgentConfig,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    let n = rollout.steps.len();
    if n == 0 {
        return Err(Error::Empty("rollout"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let samples: Vec<SurrogateSample<'_>> = chunk
                .iter()
                .map(|&i| SurrogateSample {
                    z: &rollout.steps[i].z,
                    action: rollout.steps[i].action,
                    old_log_prob: rollout.steps[i].log_prob,
                    advantage: adv.advantages[i],
                })
                .collect();
            let (s, g_actor) = surrogate_loss(&p.actor, &samples, cfg.clip_epsilon, cfg.entropy_coef)?;
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| rollout.steps[i].z.as_slice()).collect();
            let t_ext: Vec<f64> = chunk.iter().map(|&i| adv.returns_ext[i]).collect();
            let t_int: Vec<f64> = chunk.iter().map(|&i| adv.returns_int[i]).collect();
            let (l_ext, g_ext) = value_loss(&p.critic_ext, &inputs, &t_ext, cfg.value_coef)?;
            let (l_int, g_int) = value_loss(&p.critic_int, &inputs, &t_int, cfg.value_coef)?;
            if !(l_ext + l_int).is_finite() {
                return Err(Error::PolicyDivergence(format!(
                    "value loss {l_ext} + {l_int} (policy loss {}, entropy {})",
                    s.loss, s.entropy
                )));
            }
            let diverged = |e: Error| Error::PolicyDivergence(format!("{e} (policy loss {}, entropy {})", s.loss, s.entropy));
            p.actor_opt.step(&mut p.actor, &g_actor).map_err(diverged)?;
            p.critic_ext_opt.step(&mut p.critic_ext, &g_ext).map_err(diverged)?;
            p.critic_int_opt.step(&mut p.critic_int, &g_int).map_err(diverged)?;
            stats.policy_loss += s.loss;
            stats.value_loss += l_ext + l_int;
            stats.entropy += s.entropy;
            stats.approx_kl += s.approx_kl;
            stats.clip_fraction += s.clip_fraction;
            batches += 1;
        }
    }
    let k = batches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.approx_kl /= k;
    stats.clip_fraction /= k;
    Ok(stats)
}

/// The learned (or memory-based) source of intrinsic reward.
#[derive(Debug, Clone)]
pub enum CuriosityModel {
    /// `alpha = 0`: intrinsic machinery bypassed.
    Off,
    NnmEnsemble(Ensemble),
    NnmKnn,
    Disagreement(Ensemble),
    Icm(ForwardModel),
    Rnd(RndPair),
    Apt,
}

impl CuriosityModel {
    pub fn new(spec: &RewardSpec, model: ModelConfig, seed: u64) -> Result<Self> {
        if spec.extrinsic_only() {
            return Ok(CuriosityModel::Off);
        }
        Ok(match (spec.method, spec.source) {
            (RewardMethod::Nnm, MatrixSource::Ensemble) => {
                CuriosityModel::NnmEnsemble(Ensemble::new(spec.n, model, derive_seed(seed, tags::ENSEMBLE))?)
            }
            (RewardMethod::Nnm, MatrixSource::Knn) => CuriosityModel::NnmKnn,
            (RewardMethod::Disagreement, _) => {
                CuriosityModel::Disagreement(Ensemble::new(spec.n, model, derive_seed(seed, tags::ENSEMBLE))?)
            }
            (RewardMethod::Icm, _) => {
                CuriosityModel::Icm(ForwardModel::new(model, &mut rng_for(seed, tags::FORWARD_MODEL))?)
            }
            (RewardMethod::Rnd, _) => CuriosityModel::Rnd(RndPair::new(model, &mut rng_for(seed, tags::RND))?),
            (RewardMethod::Apt, _) => CuriosityModel::Apt,
        })
    }

    /// Raw intrinsic reward for the transition `(z, action) -> next_z`.
    pub fn reward(
        &self,
        spec: &RewardSpec,
        z: &[f64],
        action: usize,
        next_z: &[f64],
        memory: &ReplayBuffer,
    ) -> Result<f64> {
        match self {
            CuriosityModel::Off => Ok(0.0),
            CuriosityModel::NnmEnsemble(ens) => curiosity::nnm_reward(&ens.predict_matrix(z, action)?),
            CuriosityModel::NnmKnn => {
                let k = (spec.n - 1).min(memory.len());
                if k == 0 {
                    // Nothing stored yet: maximally novel.
                    return Ok(1.0);
                }
                let mut cols = vec![next_z.to_vec()];
                cols.extend(memory.knn(next_z, k)?);
                curiosity::nnm_reward(&StateMatrix::from_columns(&cols)?)
            }
            CuriosityModel::Disagreement(ens) => curiosity::disagreement_reward(&ens.predictions(z, action)?),
            CuriosityModel::Icm(fm) => curiosity::icm_reward(&fm.predict(z, action)?, next_z),
            CuriosityModel::Rnd(pair) => {
                let (pred, frozen) = pair.outputs(z, action)?;
                curiosity::rnd_reward(&pred, &frozen)
            }
            CuriosityModel::Apt => {
                let k = spec.k.min(memory.len());
                if k == 0 {
                    return Ok(0.0);
                }
                curiosity::apt_reward(next_z, &memory.knn(next_z, k)?)
            }
        }
    }

    /// One gradient step of every learned component on `batch`; returns the mean loss.
    pub fn train(&mut self, batch: &[DynamicsSample<'_>]) -> Result<f64> {
        match self {
            CuriosityModel::NnmEnsemble(ens) | CuriosityModel::Disagreement(ens) => {
                let losses = ens.train_step(batch)?;
                Ok(losses.iter().sum::<f64>() / losses.len() as f64)
            }
            CuriosityModel::Icm(fm) => fm.train_step(batch),
            CuriosityModel::Rnd(pair) => pair.train_step(batch),
            CuriosityModel::Off | CuriosityModel::NnmKnn | CuriosityModel::Apt => Ok(0.0),
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(
            self,
            CuriosityModel::NnmEnsemble(_)
                | CuriosityModel::Disagreement(_)
                | CuriosityModel::Icm(_)
                | CuriosityModel::Rnd(_)
        )
    }

    pub fn nets(&self) -> Vec<&Mlp> {
        match self {
            CuriosityModel::NnmEnsemble(ens) | CuriosityModel::Disagreement(ens) => ens.members().collect(),
            CuriosityModel::Icm(fm) => vec![fm.net()],
            CuriosityModel::Rnd(pair) => vec![pair.predictor(), pair.frozen()],
            CuriosityModel::Off | CuriosityModel::NnmKnn | CuriosityModel::Apt => Vec::new(),
        }
    }
}

/// Summary of one collect-and-update iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_ext_return: f64,
    pub recent_ext_return: f64,
    pub total_episodes: u64,
    pub total_successes: u64,
    pub mean_r_int: f64,
    pub model_loss: f64,
    pub stats: UpdateStats,
}

impl IterationReport {
    pub fn success_rate(&self) -> f64 {
        if self.total_episodes == 0 {
            0.0
        } else {
            self.total_successes as f64 / self.total_episodes as f64
        }
    }
}

/// One agent with its environment, encoder, curiosity model, policy and replay.
pub struct Agent {
    cfg: AgentConfig,
    env: Box<dyn Environment>,
    encoder: Encoder,
    curiosity: CuriosityModel,
    policy: PolicyParams,
    memory: ReplayBuffer,
    mixer: RewardMixer,
    action_rng: Rng,
    noise_rng: Rng,
    minibatch_rng: Rng,
    replay_rng: Rng,
    obs: Vec<f64>,
    z: Vec<f64>,
    episode_return: f64,
    episode_len: usize,
    env_steps: u64,
    updates: usize,
    total_episodes: u64,
    total_successes: u64,
    recent: VecDeque<f64>,
}

impl Agent {
    /// Builds every component from streams derived from `seed`. The
    /// environment's own seed is overridden with a derived one.
    pub fn new(env_spec: &EnvSpec, cfg: AgentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let env_spec = env_spec.clone().with_seed(derive_seed(seed, tags::ENV));
        let mut env = make_env(&env_spec)?;
        let action_count = env.action_count();
        let encoder = Encoder::new(env.obs_dim(), cfg.encoding_dim, &mut rng_for(seed, tags::ENCODER))?;
        let curiosity = CuriosityModel::new(&cfg.reward, cfg.model_config(action_count), seed)?;
        let policy = PolicyParams::new(
            cfg.encoding_dim,
            action_count,
            &cfg.policy_hidden,
            cfg.learning_rate,
            cfg.max_grad_norm,
            &mut rng_for(seed, tags::POLICY_INIT),
        )?;
        let mut noise_rng = rng_for(seed, tags::FEATURE_NOISE);
        let obs = env.reset();
        let z = noise_wrap(&encoder.encode(&obs)?, cfg.noise_sigma, &mut noise_rng)?;
        Ok(Self {
            memory: ReplayBuffer::new(cfg.replay_capacity),
            mixer: RewardMixer::new(cfg.reward.clone()),
            env,
            encoder,
            curiosity,
            policy,
            action_rng: rng_for(seed, tags::ACTIONS),
            noise_rng,
            minibatch_rng: rng_for(seed, tags::MINIBATCH),
            replay_rng: rng_for(seed, tags::REPLAY),
            obs,
            z,
            episode_return: 0.0,
            episode_len: 0,
            env_steps: 0,
            updates: 0,
            total_episodes: 0,
            total_successes: 0,
            recent: VecDeque::with_capacity(RECENT_EPISODES),
            cfg,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn curiosity(&self) -> &CuriosityModel {
        &self.curiosity
    }

    pub fn memory(&self) -> &ReplayBuffer {
        &self.memory
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    fn encode(&mut self, obs: &[f64]) -> Result<Vec<f64>> {
        noise_wrap(&self.encoder.encode(obs)?, self.cfg.noise_sigma, &mut self.noise_rng)
    }

    /// Runs `rollout_len` environment steps with the current policy.
    pub fn collect_rollout(&mut self) -> Result<Rollout> {
        let spec = self.cfg.reward.clone();
        let mut steps = Vec::with_capacity(self.cfg.rollout_len);
        let mut episodes = Vec::new();
        for _ in 0..self.cfg.rollout_len {
            let sample = select_action(&self.policy, &self.z, &mut self.action_rng)?;
            let result = self.env.step(sample.action)?;
            let next_z = self.encode(&result.next_obs)?;
            let r_int = self
                .curiosity
                .reward(&spec, &self.z, sample.action, &next_z, &self.memory)?;
            let (r_int_scaled, r_total) = if spec.extrinsic_only() {
                (0.0, curiosity::combine(0.0, result.r_ext, &spec))
            } else {
                self.mixer.combine(r_int, result.r_ext)
            };
            if !r_total.is_finite() {
                return Err(Error::NonFinite(format!("total reward (r_int {r_int})")));
            }
            self.memory.push(Transition {
                obs: std::mem::take(&mut self.obs),
                action: sample.action,
                r_ext: result.r_ext,
                r_int,
                done: result.done,
                next_obs: result.next_obs.clone(),
                z: self.z.clone(),
                next_z: next_z.clone(),
            });
            steps.push(RolloutStep {
                z: std::mem::replace(&mut self.z, next_z),
                action: sample.action,
                log_prob: sample.log_prob,
                value_ext: sample.value_ext,
                value_int: sample.value_int,
                r_ext: result.r_ext,
                r_int,
                r_int_scaled,
                r_total,
                done: result.done,
            });
            self.obs = result.next_obs;
            self.episode_return += result.r_ext;
            self.episode_len += 1;
            self.env_steps += 1;
            if result.done {
                episodes.push(EpisodeRecord {
                    ext_return: self.episode_return,
                    length: self.episode_len,
                    success: result.goal_reached,
                });
                self.episode_return = 0.0;
                self.episode_len = 0;
                self.obs = self.env.reset();
                self.z = self.encode(&self.obs.clone())?;
            }
        }
        let (last_value_ext, last_value_int) = self.policy.values(&self.z)?;
        Ok(Rollout {
            steps,
            last_value_ext,
            last_value_int,
            episodes,
        })
    }

    /// Gradient steps of the curiosity model on replay samples.
    pub fn train_curiosity(&mut self) -> Result<f64> {
        if !self.curiosity.is_learned() || self.memory.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for _ in 0..self.cfg.model_updates {
            let sample = self.memory.sample(self.cfg.model_batch, &mut self.replay_rng)?;
            let batch: Vec<DynamicsSample<'_>> = sample
                .iter()
                .map(|t| DynamicsSample {
                    z: &t.z,
                    action: t.action,
                    next_z: &t.next_z,
                })
                .collect();
            total += self.curiosity.train(&batch)?;
        }
        Ok(total / self.cfg.model_updates.max(1) as f64)
    }

    /// Collect, update the policy, then train the curiosity model.
    pub fn iterate(&mut self) -> Result<IterationReport> {
        let rollout = self.collect_rollout()?;
        let adv = compute_advantages(&rollout, &self.cfg);
        let stats = update_policy(&mut self.policy, &rollout, &adv, &self.cfg, &mut self.minibatch_rng)?;
        let model_loss = self.train_curiosity()?;
        self.updates += 1;

        for ep in &rollout.episodes {
            self.total_episodes += 1;
            self.total_successes += ep.success as u64;
            if self.recent.len() == RECENT_EPISODES {
                self.recent.pop_front();
            }
            self.recent.push_back(ep.ext_return);
        }
        let mean_ext_return = if rollout.episodes.is_empty() {
            0.0
        } else {
            rollout.episodes.iter().map(|e| e.ext_return).sum::<f64>() / rollout.episodes.len() as f64
        };
        let recent_ext_return = if self.recent.is_empty() {
            0.0
        } else {
            self.recent.iter().sum::<f64>() / self.recent.len() as f64
        };
        let mean_r_int = rollout.steps.iter().map(|s| s.r_int).sum::<f64>() / rollout.steps.len() as f64;
        Ok(IterationReport {
            update: self.updates,
            env_steps: self.env_steps,
            episodes: rollout.episodes.len(),
            mean_ext_return,
            recent_ext_return,
            total_episodes: self.total_episodes,
            total_successes: self.total_successes,
            mean_r_int,
            model_loss,
            stats,
        })
    }

    /// Networks in snapshot order: encoder (as a one-layer record), actor,
    /// extrinsic critic, intrinsic critic, then curiosity-model networks.
    pub fn snapshot_nets(&self) -> Vec<Mlp> {
        let encoder = Mlp::from_parts(vec![self.encoder.weights().clone()], vec![self.encoder.bias().to_vec()])
            .expect("encoder shapes are consistent");
        let mut nets = vec![
            encoder,
            self.policy.actor.clone(),
            self.policy.critic_ext.clone(),
            self.policy.critic_int.clone(),
        ];
        nets.extend(self.curiosity.nets().into_iter().cloned());
        nets
    }

    /// Restores encoder and policy from a snapshot. Curiosity-model networks
    /// are restored when the snapshot carries a matching set, and ignored when
    /// this agent has no learned curiosity model.
    pub fn load_snapshot(&mut self, nets: Vec<Mlp>) -> Result<()> {
        if nets.len() < 4 {
            return Err(Error::Snapshot(format!(
                "expected at least 4 networks (encoder, actor, two critics), found {}",
                nets.len()
            )));
        }
        let mut it = nets.into_iter();
        let enc = it.next().unwrap();
        let (actor, critic_ext, critic_int) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
        let rest: Vec<Mlp> = it.collect();

        let same = |a: &Mlp, b: &Mlp| a.layer_sizes() == b.layer_sizes();
        if enc.layer_sizes() != [self.encoder.obs_dim(), self.encoder.encoding_dim()]
            || !same(&actor, &self.policy.actor)
            || !same(&critic_ext, &self.policy.critic_ext)
            || !same(&critic_int, &self.policy.critic_int)
        {
            return Err(Error::Snapshot("encoder or policy shapes do not match the configuration".into()));
        }
        self.encoder = Encoder::from_parts(enc.weights()[0].clone(), enc.biases()[0].clone())?;
        self.policy = PolicyParams::from_nets(actor, critic_ext, critic_int, self.cfg.learning_rate, self.cfg.max_grad_norm);

        let current = self.curiosity.nets();
        if !current.is_empty() && !rest.is_empty() {
            let matches = current.len() == rest.len() && current.iter().zip(&rest).all(|(a, b)| same(a, b));
            if !matches {
                return Err(Error::Snapshot("curiosity-model networks do not match the configured method".into()));
            }
            let model = self.cfg.model_config(self.env.action_count());
            self.curiosity = match &self.curiosity {
                CuriosityModel::NnmEnsemble(_) => CuriosityModel::NnmEnsemble(Ensemble::from_members(rest, model)?),
                CuriosityModel::Disagreement(_) => CuriosityModel::Disagreement(Ensemble::from_members(rest, model)?),
                // ICM and RND carry optimizer-free single nets; keep freshly built ones
                // but copy parameters.
                other => {
                    let mut rebuilt = other.clone();
                    restore_single(&mut rebuilt, &rest)?;
                    rebuilt
                }
            };
        }
        // Re-encode the current observation with the restored encoder.
        self.z = self.encode(&self.obs.clone())?;
        Ok(())
    }
}

fn restore_single(model: &mut CuriosityModel, nets: &[Mlp]) -> Result<()> {
    match model {
        CuriosityModel::Icm(fm) => fm.restore(&nets[0]),
        CuriosityModel::Rnd(pair) => pair.restore(&nets[0], &nets[1]),
        _ => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn step(r: f64, v: f64, done: bool) -> RolloutStep {
        RolloutStep {
            z: vec![0.0],
            action: 0,
            log_prob: 0.0,
            value_ext: v,
            value_int: 0.0,
            r_ext: r,
            r_int: 0.0,
            r_int_scaled: 0.0,
            r_total: r,
            done,
        }
    }

    #[test]
    fn geometric_returns() {
        let (adv, ret) = gae(&[1.0, 1.0, 1.0], &[0.0; 3], &[false; 3], 0.0, 0.5, 1.0, true);
        assert_eq!(ret, vec![1.75, 1.5, 1.0]);
        assert_eq!(adv, ret);
    }

    #[test]
    fn zero_rewards_zero_advantages() {
        let rollout = Rollout {
            steps: (0..5).map(|_| step(0.0, 0.0, false)).collect(),
            last_value_ext: 0.0,
            last_value_int: 0.0,
            episodes: vec![],
        };
        let adv = compute_advantages(&rollout, &AgentConfig::new(RewardSpec::new(RewardMethod::Nnm)));
        assert!(adv.advantages.iter().all(|&a| a == 0.0));
        assert!(adv.raw.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn episodic_stream_stops_at_done_intrinsic_does_not() {
        let r = [0.0, 0.0];
        let v = [0.0, 0.0];
        let (a_ep, _) = gae(&r, &v, &[true, false], 10.0, 0.9, 1.0, true);
        let (a_ne, _) = gae(&r, &v, &[true, false], 10.0, 0.9, 1.0, false);
        assert_eq!(a_ep[0], 0.0);
        assert!((a_ne[0] - 8.1).abs() < 1e-12);
    }

    #[test]
    fn softmax_sums_to_one_and_rejects_nan() {
        let p = softmax(&[1000.0, -3.0, 0.5, 999.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(Error::PolicyDivergence(_))));
    }

    #[test]
    fn uniform_logits_give_uniform_log_probs() {
        let actor = Mlp::zeros(&[3, 4]).unwrap();
        let critic = Mlp::zeros(&[3, 1]).unwrap();
        let p = PolicyParams::from_nets(actor, critic.clone(), critic, 1e-3, 0.5);
        let mut rng = Rng::seed_from_u64(0);
        let s = select_action(&p, &[0.3, -0.2, 0.9], &mut rng).unwrap();
        assert!((s.log_prob - 0.25_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn agent_config_validation() {
        let mut cfg = AgentConfig::new(RewardSpec::new(RewardMethod::Nnm));
        assert!(cfg.validate().is_ok());
        cfg.gamma = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = AgentConfig::new(RewardSpec::new(RewardMethod::Nnm));
        cfg.rollout_len = 0;
        assert!(cfg.validate().is_err());
    }
}
