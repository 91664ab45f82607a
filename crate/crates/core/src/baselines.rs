//! Non-adaptive comparison methods sharing the frozen classifier: random
//! variable-density sampling, the greedy forward-selected sequence, best-of-K
//! mask search, and exhaustive search for small instances.

use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{positive_scores, record_orders, score_mask, ClassifierError, RewardModel};
use crate::data::Record;
use crate::masking::{budget, sample_mask, AddMode, ColumnMask, MaskError, VdsPrior};
use crate::ppo::{evaluate_orders, PpoError, RateEvaluation};

/// Largest candidate count [`brute_force_best_mask`] enumerates.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{count} candidate masks exceed the limit of {limit}")]
    TooManyCandidates { count: u128, limit: u128 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot parse mask sequence line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
}

/// Ordered column choices with the score of every prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSequence {
    pub method: String,
    pub d_c: usize,
    pub columns: Vec<usize>,
    /// `scores[t]` is the score of the mask made of `columns[..=t]`.
    pub scores: Vec<f64>,
}

impl MaskSequence {
    /// Mask of the first `t` columns.
    pub fn prefix(&self, t: usize) -> Result<ColumnMask, MaskError> {
        ColumnMask::from_columns(self.d_c, &self.columns[..t.min(self.columns.len())])
    }
}

/// One line per step: `<t> <column> <score>`, with `t` starting at 1.
impl fmt::Display for MaskSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (t, (c, s)) in self.columns.iter().zip(&self.scores).enumerate() {
            writeln!(f, "{} {} {}", t + 1, c, s)?;
        }
        Ok(())
    }
}

impl MaskSequence {
    pub fn parse(text: &str, method: &str, d_c: usize) -> Result<Self, BaselineError> {
        let mut seq = MaskSequence {
            method: method.to_string(),
            d_c,
            columns: Vec::new(),
            scores: Vec::new(),
        };
        for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let bad = |reason: &str| BaselineError::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("expected three fields"));
            }
            let t: usize = f[0].parse().map_err(|_| bad("step"))?;
            if t != i + 1 {
                return Err(bad("steps out of order"));
            }
            let c = usize::from_str(f[1]).map_err(|_| bad("column"))?;
            if c >= d_c || seq.columns.contains(&c) {
                return Err(bad("column out of range or repeated"));
            }
            seq.columns.push(c);
            seq.scores.push(f[2].parse().map_err(|_| bad("score"))?);
        }
        Ok(seq)
    }
}

/// Random VDS sampling per record. Each record gets one without-replacement
/// draw order; the mask at every rate is a prefix of it.
pub fn vds_policy_eval<M: RewardModel + ?Sized>(
    model: &M,
    prior: &VdsPrior,
    records: &[&Record],
    rates: &[f64],
    seed: u64,
) -> Result<Vec<RateEvaluation>, BaselineError> {
    let orders = record_orders(prior, records, seed)?;
    Ok(evaluate_orders(model, records, &orders, rates, prior.d_c())?)
}

/// Evaluates one fixed column sequence (the same for every record) at each
/// rate by taking prefixes.
pub fn sequence_eval<M: RewardModel + ?Sized>(
    model: &M,
    records: &[&Record],
    seq: &MaskSequence,
    rates: &[f64],
) -> Result<Vec<RateEvaluation>, BaselineError> {
    let orders = vec![seq.columns.clone(); records.len()];
    Ok(evaluate_orders(model, records, &orders, rates, seq.d_c)?)
}

/// Scores each record under one fixed mask.
pub fn fixed_mask_eval<M: RewardModel + ?Sized>(
    model: &M,
    records: &[&Record],
    mask: &ColumnMask,
    rate: f64,
) -> Result<RateEvaluation, BaselineError> {
    let masks = vec![mask; records.len()];
    Ok(RateEvaluation {
        rate,
        masks: vec![mask.clone(); records.len()],
        scores: positive_scores(model, records, &masks)?,
    })
}

/// Greedy forward selection `s_{t+1} = s_t + argmax_j V(s_t + e_j)` over
/// `subset`, for `steps` steps (all `d_c` when `None`). Ties go to the lowest
/// column index.
pub fn greedy_sequence<M: RewardModel + ?Sized>(
    model: &M,
    subset: &[&Record],
    d_c: usize,
    steps: Option<usize>,
) -> Result<MaskSequence, BaselineError> {
    let steps = steps.unwrap_or(d_c).min(d_c);
    let mut mask = ColumnMask::empty(d_c);
    let mut seq = MaskSequence {
        method: "greedy".into(),
        d_c,
        columns: Vec::with_capacity(steps),
        scores: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let candidates: Vec<usize> = (0..d_c).filter(|&j| !mask.contains(j)).collect();
        let scores = candidates
            .par_iter()
            .map(|&j| {
                let mut m = mask.clone();
                m.add(j, AddMode::Strict)?;
                Ok(score_mask(model, subset, &m)?)
            })
            .collect::<Result<Vec<f64>, BaselineError>>()?;
        let mut best = 0;
        for i in 1..candidates.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        mask.add(candidates[best], AddMode::Strict)?;
        seq.columns.push(candidates[best]);
        seq.scores.push(scores[best]);
    }
    Ok(seq)
}

/// Result of [`emrt_select`]: the winning mask and every candidate's score.
#[derive(Debug, Clone, PartialEq)]
pub struct EmrtResult {
    pub mask: ColumnMask,
    pub score: f64,
    pub candidates: Vec<(ColumnMask, f64)>,
}

/// Samples `k` masks at `rate` from `prior` and keeps the best-scoring one
/// (first among equals).
pub fn emrt_select<M: RewardModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prior: &VdsPrior,
    rate: f64,
    k: usize,
    subset: &[&Record],
    rng: &mut R,
) -> Result<EmrtResult, BaselineError> {
    if k == 0 {
        return Err(BaselineError::InvalidArgument("K must be at least 1".into()));
    }
    let masks = (0..k).map(|_| sample_mask(prior, rate, rng)).collect::<Result<Vec<_>, _>>()?;
    let scores = masks
        .par_iter()
        .map(|m| score_mask(model, subset, m))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best = 0;
    for i in 1..k {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok(EmrtResult {
        mask: masks[best].clone(),
        score: scores[best],
        candidates: masks.into_iter().zip(scores).collect(),
    })
}

pub fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k.min(n));
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exhaustive maximization of the score over all masks with
/// `round(rate · d_c)` columns. Returns the best mask (first in
/// lexicographic order among equals), its score and the number of masks
/// evaluated.
pub fn brute_force_best_mask<M: RewardModel + ?Sized>(
    model: &M,
    subset: &[&Record],
    rate: f64,
    d_c: usize,
) -> Result<(ColumnMask, f64, usize), BaselineError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(BaselineError::InvalidArgument(format!("rate must lie in (0, 1], got {rate}")));
    }
    let k = budget(rate, d_c);
    let count = binomial(d_c, k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(BaselineError::TooManyCandidates {
            count,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let masks = (0..d_c)
        .combinations(k)
        .map(|cols| ColumnMask::from_columns(d_c, &cols))
        .collect::<Result<Vec<_>, _>>()?;
    let scores = masks
        .par_iter()
        .map(|m| score_mask(model, subset, m))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut best = 0;
    for i in 1..masks.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    Ok((masks[best].clone(), scores[best], masks.len()))
}
