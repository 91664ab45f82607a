use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PpoError;
use crate::classifier::net::{self, NetConfig};
use crate::numerics::checkpoint::{read_checkpoint, write_checkpoint};
use crate::numerics::{BoundParams, ComplexTensor, ComplexVar, NumericsError, ParamSet, Real, Tape, Var};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"KPOL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub trunk: NetConfig,
    /// Hidden width of the actor and critic heads.
    pub hidden: usize,
    pub d_c: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            trunk: NetConfig::default(),
            hidden: 32,
            d_c: 32,
        }
    }
}

/// Actor-critic sharing one kspace-net trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub config: PolicyConfig,
    pub params: ParamSet<T>,
}

impl<T: Real> Policy<T> {
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self, PpoError> {
        config.trunk.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let f = config.trunk.feature_dim();
        net::init_trunk(&config.trunk, "trunk", &mut rng, &mut params);
        // small initial actor output keeps the first policy near uniform
        net::init_mlp("actor", (f, config.hidden, config.d_c), 0.01, &mut rng, &mut params);
        net::init_mlp("critic", (f, config.hidden, 1), 1.0, &mut rng, &mut params);
        Ok(Self { config, params })
    }

    pub fn config_json(&self) -> String {
        serde_json::to_string(&self.config).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), PpoError> {
        Ok(write_checkpoint(path, CHECKPOINT_MAGIC, &self.config_json(), &self.params)?)
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let (json, params) = read_checkpoint(path, CHECKPOINT_MAGIC)?;
        let config: PolicyConfig = serde_json::from_str(&json).map_err(|e| PpoError::Config(e.to_string()))?;
        let fresh = Self::init(config.clone(), 0)?;
        let expected: Vec<(&str, &[usize])> = fresh.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let found: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if expected != found {
            return Err(PpoError::Config("checkpoint parameters do not match its config".into()));
        }
        Ok(Self { config, params })
    }

    /// Actor logits `[B, d_c]` and critic values `[B]` for observations
    /// `[B, 1, d_r, d_c]`.
    pub fn evaluate(&self, x: &ComplexTensor<T>) -> Result<(Vec<Vec<f64>>, Vec<f64>), PpoError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let (logits, values) = forward(&self.config, &p, tape.complex_constant(x.clone()))?;
        let d_c = self.config.d_c;
        let l = logits.value();
        let v = values.value();
        Ok((
            l.data().chunks(d_c).map(|r| r.iter().map(|x| x.to_f64()).collect()).collect(),
            v.data().iter().map(|x| x.to_f64()).collect(),
        ))
    }
}

/// Recorded forward pass: `(logits [B, d_c], values [B])`.
pub fn forward<'t, T: Real>(
    config: &PolicyConfig,
    p: &BoundParams<'t, T>,
    x: ComplexVar<'t, T>,
) -> Result<(Var<'t, T>, Var<'t, T>), NumericsError> {
    let b = x.shape()[0];
    let h = net::trunk(&config.trunk, p, "trunk", x)?;
    let logits = net::mlp(p, "actor", h)?;
    let values = net::mlp(p, "critic", h)?.reshape(&[b])?;
    Ok((logits, values))
}

/// Draws from `softmax(logits)` restricted to `legal`. Returns the action,
/// its log-probability under the restricted distribution and that
/// distribution's entropy.
pub fn masked_categorical<R: Rng + ?Sized>(logits: &[f64], legal: &[bool], rng: &mut R) -> Result<(usize, f64, f64), PpoError> {
    let (logp, entropy) = masked_log_probs(logits, legal)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (j, lp) in logp.iter().enumerate() {
        if let Some(lp) = lp {
            last = Some(j);
            acc += lp.exp();
            if u < acc {
                return Ok((j, *lp, entropy));
            }
        }
    }
    // rounding left u beyond the accumulated mass
    let j = last.expect("at least one legal action");
    Ok((j, logp[j].expect("legal"), entropy))
}

/// Highest-logit legal action, ties to the lowest index.
pub fn masked_argmax(logits: &[f64], legal: &[bool]) -> Result<usize, PpoError> {
    let mut best: Option<usize> = None;
    for (j, (&l, &ok)) in logits.iter().zip(legal).enumerate() {
        if ok && best.is_none_or(|b| l > logits[b]) {
            best = Some(j);
        }
    }
    best.ok_or(PpoError::NoLegalAction)
}

/// Log-probabilities of the legal-restricted softmax (`None` for illegal
/// entries) and its entropy.
pub fn masked_log_probs(logits: &[f64], legal: &[bool]) -> Result<(Vec<Option<f64>>, f64), PpoError> {
    if logits.len() != legal.len() {
        return Err(PpoError::Config(format!("{} logits for {} legal bits", logits.len(), legal.len())));
    }
    let max = logits
        .iter()
        .zip(legal)
        .filter(|(_, &ok)| ok)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(PpoError::NoLegalAction);
    }
    let z: f64 = logits.iter().zip(legal).filter(|(_, &ok)| ok).map(|(&l, _)| (l - max).exp()).sum();
    let lz = max + z.ln();
    let logp: Vec<Option<f64>> = logits.iter().zip(legal).map(|(&l, &ok)| ok.then_some(l - lz)).collect();
    let entropy = -logp.iter().flatten().map(|lp| lp.exp() * lp).sum::<f64>();
    Ok((logp, entropy))
}
