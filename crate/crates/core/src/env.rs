//! Sequential column-acquisition environment with a frozen classifier as
//! reward model.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, RewardModel};
use crate::data::Record;
use crate::masking::{budget, AddMode, ColumnMask, MaskError};
use crate::numerics::{ComplexTensor, NumericsError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("sampling rate {0} outside (0, 1]")]
    BadRate(f64),
    #[error("rate {rate} gives an empty budget for d_c = {d_c}")]
    EmptyBudget { rate: f64, d_c: usize },
    #[error("no records to sample from")]
    EmptySplit,
    #[error("balanced sampling needs both classes")]
    SingleClass,
    #[error("column {0} already acquired in this episode")]
    IllegalAction(usize),
    #[error("action {action} out of range for d_c = {d_c}")]
    OutOfRange { action: usize, d_c: usize },
    #[error("episode already finished")]
    EpisodeDone,
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Handling of repeated columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    /// Acquired columns are removed from the action space; repeats are errors.
    Strict,
    /// Repeats are allowed but earn reward −1 and leave the state unchanged.
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvSampling {
    /// Records drawn with probability ∝ 1 / frequency of their label.
    Balanced,
    /// Records drawn uniformly.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// `r_t = log q(y | s_{t+1})`.
    Absolute,
    /// `r_t = log q(y | s_{t+1}) − log q(y | s_t)`.
    Incremental,
    /// Zero until the last step, which earns `log q(y | s_T)`.
    Terminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub rate: f64,
    pub mode: ActionMode,
    pub sampling: EnvSampling,
    pub reward: RewardMode,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            rate: 0.125,
            mode: ActionMode::Strict,
            sampling: EnvSampling::Balanced,
            reward: RewardMode::Absolute,
        }
    }
}

/// One episode's state. The fully sampled k-space stays inside the
/// environment; only [`EnvState::observed`] is exposed.
#[derive(Debug, Clone)]
pub struct EnvState {
    record: usize,
    record_id: u64,
    label: u8,
    observed: ComplexTensor<f32>,
    mask: ColumnMask,
    selected: Vec<usize>,
    t: usize,
    budget: usize,
    last_ll: f64,
}

impl EnvState {
    pub fn record_id(&self) -> u64 {
        self.record_id
    }

    /// `s_t = M_t ⊙ x`.
    pub fn observed(&self) -> &ComplexTensor<f32> {
        &self.observed
    }

    pub fn mask(&self) -> &ColumnMask {
        &self.mask
    }

    /// Acquired columns in acquisition order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn done(&self) -> bool {
        self.t == self.budget
    }

    /// Columns not yet acquired.
    pub fn legal(&self) -> Vec<bool> {
        self.mask.complement()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub done: bool,
    pub legal: Vec<bool>,
    /// The action repeated a column (penalty mode only).
    pub invalid: bool,
}

/// Environment over a fixed record set with a frozen reward model.
pub struct Env<'a, M: RewardModel + ?Sized> {
    records: Vec<&'a Record>,
    model: &'a M,
    config: EnvConfig,
    sampler: WeightedIndex<f64>,
    d_c: usize,
    budget: usize,
    /// `log q(y | 0)` for y = 0, 1.
    empty_ll: [f64; 2],
}

impl<'a, M: RewardModel + ?Sized> Env<'a, M> {
    pub fn new(records: Vec<&'a Record>, model: &'a M, config: EnvConfig) -> Result<Self, EnvError> {
        if !(config.rate > 0.0 && config.rate <= 1.0) {
            return Err(EnvError::BadRate(config.rate));
        }
        let first = records.first().ok_or(EnvError::EmptySplit)?;
        let shape = first.kspace.shape().to_vec();
        let d_c = shape[1];
        let budget = budget(config.rate, d_c);
        if budget == 0 {
            return Err(EnvError::EmptyBudget { rate: config.rate, d_c });
        }
        let n_pos = records.iter().filter(|r| r.label == 1).count();
        let n_neg = records.len() - n_pos;
        let weights: Vec<f64> = match config.sampling {
            EnvSampling::Naive => vec![1.0; records.len()],
            EnvSampling::Balanced => {
                if n_pos == 0 || n_neg == 0 {
                    return Err(EnvError::SingleClass);
                }
                records
                    .iter()
                    .map(|r| 1.0 / if r.label == 1 { n_pos } else { n_neg } as f64)
                    .collect()
            }
        };
        let sampler = WeightedIndex::new(&weights).map_err(|_| EnvError::EmptySplit)?;
        let zero = ComplexTensor::zeros(&[1, 1, shape[0], shape[1]]);
        let lp = model.log_probs(&zero)?[0];
        Ok(Self {
            records,
            model,
            config,
            sampler,
            d_c,
            budget,
            empty_ll: lp,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn records(&self) -> &[&'a Record] {
        &self.records
    }

    /// Starts an episode on a record drawn per the sampling mode.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        self.reset_to(self.sampler.sample(rng))
    }

    /// Starts an episode on `records()[index]`.
    pub fn reset_to(&self, index: usize) -> EnvState {
        let r = self.records[index];
        EnvState {
            record: index,
            record_id: r.id,
            label: r.label,
            observed: ComplexTensor::zeros(r.kspace.shape()),
            mask: ColumnMask::empty(self.d_c),
            selected: Vec::new(),
            t: 0,
            budget: self.budget,
            last_ll: self.empty_ll[r.label as usize],
        }
    }

    /// Applies `action` to `state` without computing the reward. Returns
    /// whether the action was an (allowed, penalized) repeat.
    fn transition(&self, state: &mut EnvState, action: usize) -> Result<bool, EnvError> {
        if state.done() {
            return Err(EnvError::EpisodeDone);
        }
        if action >= self.d_c {
            return Err(EnvError::OutOfRange { action, d_c: self.d_c });
        }
        let repeat = state.mask.contains(action);
        match (repeat, self.config.mode) {
            (true, ActionMode::Strict) => return Err(EnvError::IllegalAction(action)),
            (true, ActionMode::Penalty) => {}
            (false, _) => {
                state.mask.add(action, AddMode::Strict)?;
                state.selected.push(action);
                let src = &self.records[state.record].kspace;
                let d_c = self.d_c;
                for (dst, s) in [(&mut state.observed.re, &src.re), (&mut state.observed.im, &src.im)] {
                    let sd = s.data();
                    for (row, v) in dst.data_mut().chunks_mut(d_c).enumerate() {
                        v[action] = sd[row * d_c + action];
                    }
                }
            }
        }
        state.t += 1;
        Ok(repeat)
    }

    fn reward(&self, state: &mut EnvState, ll: f64, invalid: bool) -> f64 {
        let previous = state.last_ll;
        state.last_ll = ll;
        if invalid {
            return -1.0;
        }
        match self.config.reward {
            RewardMode::Absolute => ll,
            RewardMode::Incremental => ll - previous,
            RewardMode::Terminal => {
                if state.done() {
                    ll
                } else {
                    0.0
                }
            }
        }
    }

    /// Advances one episode by `action`; `state` becomes `s_{t+1}`.
    pub fn step(&self, state: &mut EnvState, action: usize) -> Result<StepResult, EnvError> {
        let mut v = self.step_many(&mut [(state, action)])?;
        Ok(v.pop().expect("one result"))
    }

    /// Advances several episodes at once with a single batched classifier
    /// call for the rewards.
    pub fn step_many(&self, items: &mut [(&mut EnvState, usize)]) -> Result<Vec<StepResult>, EnvError> {
        let mut invalid = Vec::with_capacity(items.len());
        for (state, action) in items.iter_mut() {
            invalid.push(self.transition(state, *action)?);
        }
        let lls = self.log_likelihoods(items.iter().map(|(s, _)| &**s))?;
        Ok(items
            .iter_mut()
            .zip(lls)
            .zip(invalid)
            .map(|(((state, _), ll), inv)| {
                let ll = if inv { state.last_ll } else { ll };
                let reward = self.reward(state, ll, inv);
                StepResult {
                    reward,
                    done: state.done(),
                    legal: state.legal(),
                    invalid: inv,
                }
            })
            .collect())
    }

    fn log_likelihoods<'s>(&self, states: impl Iterator<Item = &'s EnvState>) -> Result<Vec<f64>, EnvError> {
        let states: Vec<&EnvState> = states.collect();
        if states.is_empty() {
            return Ok(Vec::new());
        }
        let obs: Vec<&ComplexTensor<f32>> = states.iter().map(|s| &s.observed).collect();
        let shape = obs[0].shape().to_vec();
        let x = ComplexTensor::stack(&obs)?.reshape(&[obs.len(), 1, shape[0], shape[1]])?;
        let lp = self.model.log_probs(&x)?;
        Ok(states.iter().zip(lp).map(|(s, row)| row[s.label as usize]).collect())
    }
}

/// Stacks observations into a `[B, 1, d_r, d_c]` batch.
pub fn observation_batch(states: &[&EnvState]) -> Result<ComplexTensor<f32>, EnvError> {
    let obs: Vec<&ComplexTensor<f32>> = states.iter().map(|s| s.observed()).collect();
    let shape = obs.first().ok_or(EnvError::EmptySplit)?.shape().to_vec();
    Ok(ComplexTensor::stack(&obs)?.reshape(&[obs.len(), 1, shape[0], shape[1]])?)
}

/// Legal-action bits of several states as a row-major `[B, d_c]` vector.
pub fn legal_batch(states: &[&EnvState]) -> Vec<bool> {
    states.iter().flat_map(|s| s.legal()).collect()
}

/// One transition of the episode log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLine {
    pub episode: u64,
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

/// Writes `episode \t t \t action \t reward \t done` lines.
pub fn write_episode_log<W: Write>(w: &mut W, lines: &[LogLine]) -> Result<(), EnvError> {
    for l in lines {
        writeln!(w, "{}\t{}\t{}\t{}\t{}", l.episode, l.t, l.action, l.reward, u8::from(l.done))?;
    }
    Ok(())
}

pub fn parse_episode_log(text: &str) -> Result<Vec<LogLine>, String> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(format!("line {}: expected 5 fields", i + 1));
            }
            let bad = |what: &str| format!("line {}: bad {what}", i + 1);
            Ok(LogLine {
                episode: f[0].parse().map_err(|_| bad("episode"))?,
                t: f[1].parse().map_err(|_| bad("t"))?,
                action: f[2].parse().map_err(|_| bad("action"))?,
                reward: f[3].parse().map_err(|_| bad("reward"))?,
                done: match f[4] {
                    "1" => true,
                    "0" => false,
                    _ => return Err(bad("done")),
                },
            })
        })
        .collect()
}

/// Checks that no episode in a log repeats a column, and that every
/// finished episode has exactly `budget` transitions.
pub fn audit_episode_log(lines: &[LogLine], budget: usize) -> Result<(), String> {
    let mut current: Option<(u64, Vec<usize>)> = None;
    for l in lines {
        let (ep, seen) = current.get_or_insert_with(|| (l.episode, Vec::new()));
        if *ep != l.episode {
            return Err(format!("episode {} ended without done", ep));
        }
        if seen.contains(&l.action) {
            return Err(format!("episode {} repeats column {}", l.episode, l.action));
        }
        seen.push(l.action);
        if seen.len() != l.t + 1 {
            return Err(format!("episode {} step index {} out of order", l.episode, l.t));
        }
        if l.done {
            if seen.len() != budget {
                return Err(format!("episode {} finished after {} of {budget} steps", l.episode, seen.len()));
            }
            current = None;
        }
    }
    match current {
        Some((ep, _)) => Err(format!("episode {ep} never finished")),
        None => Ok(()),
    }
}
