//! PPO with dynamic action masking over the acquisition environment.

mod policy;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{positive_scores, ClassifierError, RewardModel, INFERENCE_BATCH};
use crate::data::Record;
use crate::env::{observation_batch, ActionMode, Env, EnvConfig, EnvError, EnvState};
use crate::masking::{apply_mask, budget, AddMode, ColumnMask, MaskError};
use crate::numerics::checkpoint::CheckpointError;
use crate::numerics::{clip_grad_norm, AdamWConfig, AdamWState, ComplexTensor, NumericsError, Tape, Tensor};

pub use policy::{forward, masked_argmax, masked_categorical, masked_log_probs, Policy, PolicyConfig, CHECKPOINT_MAGIC};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("no legal action")]
    NoLegalAction,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration}: surrogate {surrogate}, value loss {value_loss}, entropy {entropy}")]
    NonFiniteLoss {
        iteration: usize,
        surrogate: f64,
        value_loss: f64,
        entropy: f64,
    },
    #[error("reward model parameters changed during policy training")]
    ClassifierMutated,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub optimizer: AdamWConfig,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub grad_clip: f64,
    pub n_envs: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub total_steps: usize,
    pub normalize_advantages: bool,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            grad_clip: 0.5,
            n_envs: 128,
            epochs: 4,
            minibatch: 256,
            total_steps: 200_000,
            normalize_advantages: true,
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::Config(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]".into());
        }
        if self.n_envs == 0 || self.epochs == 0 || self.minibatch == 0 {
            return bad("n_envs, epochs and minibatch must be positive".into());
        }
        if self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }
}

/// Rollout storage. Transitions of one episode are contiguous and in time
/// order; every episode ends with `done`.
#[derive(Debug, Clone, Default)]
pub struct EpisodeBatch {
    /// Observation `s_t` before each action, `[d_r, d_c]`.
    pub observations: Vec<ComplexTensor<f32>>,
    /// Action set the action was sampled from, `d_c` bits per transition.
    pub legal: Vec<Vec<bool>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub invalid: Vec<bool>,
    pub episode: Vec<usize>,
    pub record_ids: Vec<u64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl EpisodeBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.dones.iter().filter(|&&d| d).count()
    }

    /// Mean undiscounted episode return.
    pub fn mean_episode_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.n_episodes().max(1) as f64
    }
}

/// Generalized advantage estimation over contiguous episodes:
/// `Â_t = Σ_l (γλ)^l δ_{t+l}` with `δ_t = r_t + γ V(s_{t+1})(1 − done_t) − V(s_t)`.
/// Returns `(advantages, returns = advantages + values)`.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    for i in (0..n).rev() {
        let (next_value, carry) = if dones[i] || i + 1 == n {
            (0.0, 0.0)
        } else {
            (values[i + 1], next_adv)
        };
        let delta = rewards[i] + gamma * next_value - values[i];
        adv[i] = delta + gamma * lambda * carry;
        next_adv = adv[i];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Per-term clipped surrogate `min(l·Â, clip(l, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - eps, 1.0 + eps) * advantage)
}

/// Runs `n_envs` synchronized episodes to completion under the sampling
/// policy and records every transition.
pub fn rollout_batch<M: RewardModel + ?Sized>(
    env: &Env<'_, M>,
    policy: &Policy<f32>,
    n_envs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeBatch, PpoError> {
    let mut states: Vec<EnvState> = (0..n_envs).map(|_| env.reset(rng)).collect();
    let t_max = env.budget();
    let d_c = env.d_c();
    let mut per_env: Vec<EpisodeBatch> = vec![EpisodeBatch::default(); n_envs];
    for _ in 0..t_max {
        let refs: Vec<&EnvState> = states.iter().collect();
        let x = observation_batch(&refs)?;
        let (logits, values) = evaluate_chunked(policy, &x)?;
        let mut actions = Vec::with_capacity(n_envs);
        for (i, s) in states.iter().enumerate() {
            let legal = match env.config().mode {
                ActionMode::Strict => s.legal(),
                ActionMode::Penalty => vec![true; d_c],
            };
            let (a, lp, _) = masked_categorical(&logits[i], &legal, rng)?;
            let b = &mut per_env[i];
            b.observations.push(s.observed().clone());
            b.legal.push(legal);
            b.actions.push(a);
            b.log_probs.push(lp);
            b.values.push(values[i]);
            b.episode.push(i);
            b.record_ids.push(s.record_id());
            actions.push(a);
        }
        let mut items: Vec<(&mut EnvState, usize)> = states.iter_mut().zip(actions).collect();
        let results = env.step_many(&mut items)?;
        for (b, r) in per_env.iter_mut().zip(results) {
            b.rewards.push(r.reward);
            b.dones.push(r.done);
            b.invalid.push(r.invalid);
        }
    }
    let mut batch = EpisodeBatch::default();
    for b in per_env {
        batch.observations.extend(b.observations);
        batch.legal.extend(b.legal);
        batch.actions.extend(b.actions);
        batch.log_probs.extend(b.log_probs);
        batch.rewards.extend(b.rewards);
        batch.values.extend(b.values);
        batch.dones.extend(b.dones);
        batch.invalid.extend(b.invalid);
        batch.episode.extend(b.episode);
        batch.record_ids.extend(b.record_ids);
    }
    Ok(batch)
}

fn evaluate_chunked(policy: &Policy<f32>, x: &ComplexTensor<f32>) -> Result<(Vec<Vec<f64>>, Vec<f64>), PpoError> {
    let b = x.shape()[0];
    let plane = x.len() / b.max(1);
    let mut logits = Vec::with_capacity(b);
    let mut values = Vec::with_capacity(b);
    for start in (0..b).step_by(INFERENCE_BATCH) {
        let n = INFERENCE_BATCH.min(b - start);
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        let chunk = ComplexTensor::new(
            Tensor::new(shape.clone(), x.re.data()[start * plane..(start + n) * plane].to_vec())?,
            Tensor::new(shape, x.im.data()[start * plane..(start + n) * plane].to_vec())?,
        )?;
        let (l, v) = policy.evaluate(&chunk)?;
        logits.extend(l);
        values.extend(v);
    }
    Ok((logits, values))
}

/// Loss terms of one minibatch, averaged over its transitions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub loss: f64,
}

/// `loss = −surrogate + value_coef·value_loss − entropy_coef·entropy` over
/// the transitions `idx`, with `advantages` already prepared by the caller.
/// Returns the loss terms and the gradient per policy parameter.
pub fn minibatch_loss(
    policy: &Policy<f32>,
    batch: &EpisodeBatch,
    advantages: &[f64],
    idx: &[usize],
    config: &PpoConfig,
) -> Result<(LossParts, Vec<Tensor<f32>>), PpoError> {
    let obs: Vec<&ComplexTensor<f32>> = idx.iter().map(|&i| &batch.observations[i]).collect();
    let shape = obs[0].shape().to_vec();
    let x = ComplexTensor::stack(&obs)?.reshape(&[idx.len(), 1, shape[0], shape[1]])?;
    let legal: Vec<bool> = idx.iter().flat_map(|&i| batch.legal[i].iter().copied()).collect();
    let actions: Vec<usize> = idx.iter().map(|&i| batch.actions[i]).collect();
    let n = idx.len();
    let vec1 = |f: &dyn Fn(usize) -> f64| Tensor::new(vec![n], idx.iter().map(|&i| f(i) as f32).collect());
    let old = vec1(&|i| batch.log_probs[i])?;
    let adv = vec1(&|i| advantages[i])?;
    let ret = vec1(&|i| batch.returns[i])?;

    let tape = Tape::new();
    let p = policy.params.bind(&tape);
    let (logits, values) = forward(&policy.config, &p, tape.complex_constant(x))?;
    let logp = logits.log_softmax(Some(legal))?;
    let new = logp.gather(&actions)?;
    let ratio = new.sub(tape.constant(old))?.exp();
    let eps = config.clip_eps as f32;
    let s1 = ratio.mul_const(adv.clone())?;
    let s2 = ratio.clamp(1.0 - eps, 1.0 + eps).mul_const(adv)?;
    let surrogate = s1.min(s2)?.mean();
    let diff = values.sub(tape.constant(ret))?;
    let value_loss = diff.mul(diff)?.mean();
    let entropy = logp.entropy()?.mean();
    let loss = surrogate
        .scale(-1.0)
        .add(value_loss.scale(config.value_coef as f32))?
        .sub(entropy.scale(config.entropy_coef as f32))?;
    let parts = LossParts {
        surrogate: surrogate.value().data()[0] as f64,
        value_loss: value_loss.value().data()[0] as f64,
        entropy: entropy.value().data()[0] as f64,
        loss: loss.value().data()[0] as f64,
    };
    let grads = p.grads(&tape.backward(loss)?);
    Ok((parts, grads))
}

/// Mean statistics of one [`ppo_update`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Pre-clipping global gradient norm.
    pub grad_norm: f64,
}

/// Clipped-surrogate PPO update: `epochs` passes of shuffled minibatches,
/// gradient clipping and AdamW. Expects advantages and returns filled in.
pub fn ppo_update(
    policy: &mut Policy<f32>,
    opt: &mut AdamWState<f32>,
    batch: &EpisodeBatch,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<UpdateStats, PpoError> {
    if batch.is_empty() || batch.advantages.len() != batch.len() || batch.returns.len() != batch.len() {
        return Err(PpoError::Config("batch needs advantages and returns for every transition".into()));
    }
    let advantages = if config.normalize_advantages {
        normalized(&batch.advantages)
    } else {
        batch.advantages.clone()
    };
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch) {
            let (parts, mut grads) = minibatch_loss(policy, batch, &advantages, idx, config)?;
            if !parts.loss.is_finite() {
                return Err(PpoError::NonFiniteLoss {
                    iteration,
                    surrogate: parts.surrogate,
                    value_loss: parts.value_loss,
                    entropy: parts.entropy,
                });
            }
            let norm = clip_grad_norm(&mut grads, config.grad_clip)?;
            opt.step(&mut policy.params, &grads)?;
            stats.surrogate += parts.surrogate;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.grad_norm += norm;
            count += 1.0;
        }
    }
    stats.surrogate /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.grad_norm /= count;
    Ok(stats)
}

/// Zero mean, unit standard deviation (population).
pub fn normalized(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    x.iter().map(|v| (v - mean) / std).collect()
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub iteration: usize,
    pub env_steps: usize,
    pub mean_episode_reward: f64,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub invalid_actions: usize,
}

pub const TRAIN_LOG_HEADER: &str = "iteration\tenv_steps\tmean_episode_reward\tsurrogate\tvalue_loss\tentropy\tgrad_norm\tinvalid_actions";

impl fmt::Display for TrainLogLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}",
            self.iteration,
            self.env_steps,
            self.mean_episode_reward,
            self.surrogate,
            self.value_loss,
            self.entropy,
            self.grad_norm,
            self.invalid_actions
        )
    }
}

/// Trains a policy against a frozen reward model on `records`.
pub fn train_policy<M: RewardModel + ?Sized>(
    records: Vec<&Record>,
    model: &M,
    config: &PpoConfig,
) -> Result<(Policy<f32>, Vec<TrainLogLine>), PpoError> {
    train_policy_with(records, model, config, |_, _| Ok(()))
}

/// As [`train_policy`], calling `on_iteration` after every update (for
/// checkpointing and progress output).
pub fn train_policy_with<M, F>(
    records: Vec<&Record>,
    model: &M,
    config: &PpoConfig,
    mut on_iteration: F,
) -> Result<(Policy<f32>, Vec<TrainLogLine>), PpoError>
where
    M: RewardModel + ?Sized,
    F: FnMut(&TrainLogLine, &Policy<f32>) -> Result<(), PpoError>,
{
    config.validate()?;
    let frozen = model.checksum();
    let env = Env::new(records, model, config.env)?;
    if config.policy.d_c != env.d_c() {
        return Err(PpoError::Config(format!(
            "policy over {} columns for d_c = {}",
            config.policy.d_c,
            env.d_c()
        )));
    }
    let mut policy = Policy::<f32>::init(config.policy.clone(), config.seed)?;
    let mut opt = AdamWState::new(config.optimizer, &policy.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let per_iter = config.n_envs * env.budget();
    let iterations = config.total_steps.div_ceil(per_iter).max(1);
    let mut log = Vec::with_capacity(iterations);
    for iteration in 0..iterations {
        let mut batch = rollout_batch(&env, &policy, config.n_envs, &mut rng)?;
        let (adv, ret) = compute_gae(&batch.rewards, &batch.values, &batch.dones, config.gamma, config.gae_lambda);
        batch.advantages = adv;
        batch.returns = ret;
        let stats = ppo_update(&mut policy, &mut opt, &batch, config, &mut rng, iteration)?;
        let line = TrainLogLine {
            iteration,
            env_steps: (iteration + 1) * per_iter,
            mean_episode_reward: batch.mean_episode_reward(),
            surrogate: stats.surrogate,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            grad_norm: stats.grad_norm,
            invalid_actions: batch.invalid.iter().filter(|&&b| b).count(),
        };
        on_iteration(&line, &policy)?;
        log.push(line);
    }
    if model.checksum() != frozen {
        return Err(PpoError::ClassifierMutated);
    }
    Ok((policy, log))
}

/// Greedy acquisition order per record: `steps` argmax actions over the
/// not-yet-acquired columns.
pub fn acquisition_orders(policy: &Policy<f32>, records: &[&Record], steps: usize) -> Result<Vec<Vec<usize>>, PpoError> {
    let d_c = policy.config.d_c;
    if steps > d_c {
        return Err(PpoError::Config(format!("{steps} steps exceed d_c = {d_c}")));
    }
    let mut orders = Vec::with_capacity(records.len());
    for chunk in records.chunks(INFERENCE_BATCH) {
        let mut masks = vec![ColumnMask::empty(d_c); chunk.len()];
        let mut chunk_orders = vec![Vec::with_capacity(steps); chunk.len()];
        for _ in 0..steps {
            let obs = chunk
                .iter()
                .zip(&masks)
                .map(|(r, m)| apply_mask(&r.kspace, m))
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&ComplexTensor<f32>> = obs.iter().collect();
            let shape = refs[0].shape().to_vec();
            let x = ComplexTensor::stack(&refs)?.reshape(&[refs.len(), 1, shape[0], shape[1]])?;
            let (logits, _) = policy.evaluate(&x)?;
            for ((m, o), l) in masks.iter_mut().zip(&mut chunk_orders).zip(&logits) {
                let a = masked_argmax(l, &m.complement())?;
                m.add(a, AddMode::Strict)?;
                o.push(a);
            }
        }
        orders.extend(chunk_orders);
    }
    Ok(orders)
}

/// Masks and positive-class scores of one method at one rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RateEvaluation {
    pub rate: f64,
    pub masks: Vec<ColumnMask>,
    pub scores: Vec<f64>,
}

/// Evaluates prefixes of per-record acquisition orders at each rate with
/// the shared classifier.
pub fn evaluate_orders<M: RewardModel + ?Sized>(
    model: &M,
    records: &[&Record],
    orders: &[Vec<usize>],
    rates: &[f64],
    d_c: usize,
) -> Result<Vec<RateEvaluation>, PpoError> {
    if rates.windows(2).any(|w| w[0] > w[1]) {
        return Err(PpoError::Config("rates must be sorted ascending".into()));
    }
    rates
        .iter()
        .map(|&rate| {
            let k = budget(rate, d_c);
            let masks = orders
                .iter()
                .map(|o| {
                    if o.len() < k {
                        return Err(PpoError::Config(format!("order of {} columns for budget {k}", o.len())));
                    }
                    Ok(ColumnMask::from_columns(d_c, &o[..k])?)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let refs: Vec<&ColumnMask> = masks.iter().collect();
            let scores = positive_scores(model, records, &refs)?;
            Ok(RateEvaluation { rate, masks, scores })
        })
        .collect()
}

/// One greedy trajectory per record up to the largest rate, scored at
/// every rate's prefix.
pub fn evaluate_policy<M: RewardModel + ?Sized>(
    policy: &Policy<f32>,
    model: &M,
    records: &[&Record],
    rates: &[f64],
) -> Result<Vec<RateEvaluation>, PpoError> {
    let d_c = policy.config.d_c;
    let max_rate = rates.iter().copied().fold(0.0, f64::max);
    let orders = acquisition_orders(policy, records, budget(max_rate, d_c))?;
    evaluate_orders(model, records, &orders, rates, d_c)
}
