//! Cartesian column masks and the variable-density sampling prior.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::numerics::{ComplexTensor, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("column {column} out of range for d_c = {d_c}")]
    OutOfRange { column: usize, d_c: usize },
    #[error("column {0} already selected")]
    Duplicate(usize),
    #[error("mask has d_c = {mask} but k-space has {kspace} columns")]
    DimMismatch { mask: usize, kspace: usize },
    #[error("sampling rate {rate} selects no columns of {d_c}")]
    EmptySelection { rate: f64, d_c: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot parse mask: {0}")]
    Parse(String),
}

/// How [`ColumnMask::add`] treats an already-selected column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddMode {
    /// Duplicates are errors.
    Strict,
    /// Duplicates are no-ops.
    Lenient,
}

/// Binary selection over the `d_c` columns of a k-space matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ColumnMask {
    bits: Vec<bool>,
}

impl ColumnMask {
    pub fn empty(d_c: usize) -> Self {
        Self { bits: vec![false; d_c] }
    }

    pub fn full(d_c: usize) -> Self {
        Self { bits: vec![true; d_c] }
    }

    pub fn from_columns(d_c: usize, cols: &[usize]) -> Result<Self, MaskError> {
        let mut m = Self::empty(d_c);
        for &c in cols {
            m.add(c, AddMode::Lenient)?;
        }
        Ok(m)
    }

    pub fn d_c(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, column: usize) -> bool {
        self.bits.get(column).copied().unwrap_or(false)
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Selected columns in ascending order.
    pub fn columns(&self) -> Vec<usize> {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    /// Sets bit `column`.
    pub fn add(&mut self, column: usize, mode: AddMode) -> Result<(), MaskError> {
        let d_c = self.d_c();
        let bit = self.bits.get_mut(column).ok_or(MaskError::OutOfRange { column, d_c })?;
        if *bit && mode == AddMode::Strict {
            return Err(MaskError::Duplicate(column));
        }
        *bit = true;
        Ok(())
    }

    pub fn is_subset_of(&self, other: &ColumnMask) -> bool {
        self.d_c() == other.d_c() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Complement: the columns still available for acquisition.
    pub fn complement(&self) -> Vec<bool> {
        self.bits.iter().map(|&b| !b).collect()
    }
}

/// `"d_c=<n>;cols=<sorted comma-separated indices>"`.
impl fmt::Display for ColumnMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<String> = self.columns().iter().map(|c| c.to_string()).collect();
        write!(f, "d_c={};cols={}", self.d_c(), cols.join(","))
    }
}

impl FromStr for ColumnMask {
    type Err = MaskError;

    fn from_str(s: &str) -> Result<Self, MaskError> {
        let bad = || MaskError::Parse(s.to_string());
        let (head, tail) = s.trim().split_once(';').ok_or_else(bad)?;
        let d_c: usize = head.strip_prefix("d_c=").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let cols = tail.strip_prefix("cols=").ok_or_else(bad)?;
        let mut mask = ColumnMask::empty(d_c);
        if !cols.is_empty() {
            for c in cols.split(',') {
                let c: usize = c.parse().map_err(|_| bad())?;
                mask.add(c, AddMode::Strict)?;
            }
        }
        Ok(mask)
    }
}

/// Zero-fills every unselected column of `kspace` (`[..., d_r, d_c]`).
pub fn apply_mask<T: Real>(kspace: &ComplexTensor<T>, mask: &ColumnMask) -> Result<ComplexTensor<T>, MaskError> {
    let d_c = *kspace.shape().last().unwrap_or(&0);
    if d_c != mask.d_c() {
        return Err(MaskError::DimMismatch {
            mask: mask.d_c(),
            kspace: d_c,
        });
    }
    let mut out = kspace.clone();
    for part in [&mut out.re, &mut out.im] {
        for row in part.data_mut().chunks_mut(d_c) {
            for (v, &keep) in row.iter_mut().zip(mask.bits()) {
                if !keep {
                    *v = T::ZERO;
                }
            }
        }
    }
    Ok(out)
}

/// Number of columns acquired at sampling rate `rate`: `round(rate · d_c)`
/// with halves rounded up.
pub fn budget(rate: f64, d_c: usize) -> usize {
    (rate * d_c as f64 + 0.5).floor() as usize
}

/// Variable-density prior over columns, peaked at the centre (DC) column.
#[derive(Debug, Clone, PartialEq)]
pub struct VdsPrior {
    pub probs: Vec<f64>,
    pub decay_power: f64,
    pub floor_epsilon: f64,
}

impl VdsPrior {
    pub fn d_c(&self) -> usize {
        self.probs.len()
    }
}

/// `g(j) = (1 − |j − c| / (c + 1))^power + floor`, normalized, with `c = d_c / 2`.
pub fn make_vds_prior(d_c: usize, decay_power: f64, floor_epsilon: f64) -> Result<VdsPrior, MaskError> {
    if d_c < 2 {
        return Err(MaskError::InvalidArgument(format!("d_c must be ≥ 2, got {d_c}")));
    }
    if !(decay_power >= 0.0) {
        return Err(MaskError::InvalidArgument(format!("decay_power must be ≥ 0, got {decay_power}")));
    }
    if !(floor_epsilon >= 0.0) {
        return Err(MaskError::InvalidArgument(format!("floor_epsilon must be ≥ 0, got {floor_epsilon}")));
    }
    let c = (d_c / 2) as f64;
    let g: Vec<f64> = (0..d_c)
        .map(|j| (1.0 - (j as f64 - c).abs() / (c + 1.0)).powf(decay_power) + floor_epsilon)
        .collect();
    let total: f64 = g.iter().sum();
    Ok(VdsPrior {
        probs: g.iter().map(|v| v / total).collect(),
        decay_power,
        floor_epsilon,
    })
}

/// Draws `count` distinct columns by sequential renormalized draws from
/// `prior`. The order of the draws is returned, so every prefix is itself a
/// valid lower-rate sample.
pub fn sample_order<R: Rng + ?Sized>(prior: &VdsPrior, count: usize, rng: &mut R) -> Result<Vec<usize>, MaskError> {
    let d_c = prior.d_c();
    if count > d_c {
        return Err(MaskError::InvalidArgument(format!("cannot draw {count} of {d_c} columns")));
    }
    let mut weights = prior.probs.clone();
    let mut order = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = None;
        for (j, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            pick = Some(j);
            if u < w {
                break;
            }
            u -= w;
        }
        let j = pick.ok_or_else(|| MaskError::InvalidArgument("prior has no remaining mass".into()))?;
        weights[j] = 0.0;
        order.push(j);
    }
    Ok(order)
}

/// Mask with exactly `round(rate · d_c)` columns drawn from `prior`.
pub fn sample_mask<R: Rng + ?Sized>(prior: &VdsPrior, rate: f64, rng: &mut R) -> Result<ColumnMask, MaskError> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(MaskError::InvalidArgument(format!("rate must lie in (0, 1], got {rate}")));
    }
    let d_c = prior.d_c();
    let count = budget(rate, d_c);
    if count == 0 {
        return Err(MaskError::EmptySelection { rate, d_c });
    }
    let order = sample_order(prior, count, rng)?;
    ColumnMask::from_columns(d_c, &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_k(d_r: usize, d_c: usize, seed: u64) -> ComplexTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ComplexTensor::new(
            Tensor::from_fn(&[d_r, d_c], |_| rng.gen_range(-1.0..1.0)),
            Tensor::from_fn(&[d_r, d_c], |_| rng.gen_range(-1.0..1.0)),
        )
        .unwrap()
    }

    #[test]
    fn uniform_prior_without_decay() {
        let p = make_vds_prior(7, 0.0, 0.0).unwrap();
        assert!(p.probs.iter().all(|v| (v - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn prior_peaks_at_centre_and_is_symmetric() {
        let p = make_vds_prior(5, 3.0, 0.01).unwrap();
        assert!(p.probs.iter().enumerate().all(|(j, &v)| j == 2 || v < p.probs[2]));
        assert_eq!(p.probs[0], p.probs[4]);
        assert_eq!(p.probs[1], p.probs[3]);
    }

    #[test]
    fn prior_matches_closed_form() {
        let p = make_vds_prior(32, 3.0, 0.01).unwrap();
        let g: Vec<f64> = (0..32).map(|j| (1.0 - ((j as f64) - 16.0).abs() / 17.0).powi(3) + 0.01).collect();
        let s: f64 = g.iter().sum();
        for (a, b) in p.probs.iter().zip(&g) {
            assert!((a - b / s).abs() < 1e-12);
        }
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prior_argument_errors() {
        assert!(make_vds_prior(1, 3.0, 0.01).is_err());
        assert!(make_vds_prior(8, -1.0, 0.01).is_err());
    }

    #[test]
    fn full_rate_selects_everything() {
        let p = make_vds_prior(16, 3.0, 0.01).unwrap();
        let m = sample_mask(&p, 1.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m, ColumnMask::full(16));
    }

    #[test]
    fn knee_width_rate_counts() {
        let p = make_vds_prior(400, 3.0, 0.01).unwrap();
        let m = sample_mask(&p, 0.125, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(m.popcount(), 50);
        for (rate, n) in [(0.05, 20), (0.08, 32), (0.10, 40)] {
            assert_eq!(sample_mask(&p, rate, &mut ChaCha8Rng::seed_from_u64(2)).unwrap().popcount(), n);
        }
    }

    #[test]
    fn zero_budget_is_an_error() {
        let p = make_vds_prior(16, 3.0, 0.01).unwrap();
        let e = sample_mask(&p, 0.01, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(e, Err(MaskError::EmptySelection { .. })));
        assert!(sample_mask(&p, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    /// Exact inclusion probabilities of sequential renormalized sampling by
    /// enumerating every ordered draw sequence.
    fn inclusion_oracle(probs: &[f64], count: usize) -> Vec<f64> {
        fn rec(probs: &[f64], taken: &mut Vec<usize>, p: f64, left: usize, out: &mut [f64]) {
            if left == 0 {
                for &t in taken.iter() {
                    out[t] += p;
                }
                return;
            }
            let rem: f64 = (0..probs.len()).filter(|j| !taken.contains(j)).map(|j| probs[j]).sum();
            for j in 0..probs.len() {
                if taken.contains(&j) {
                    continue;
                }
                taken.push(j);
                rec(probs, taken, p * probs[j] / rem, left - 1, out);
                taken.pop();
            }
        }
        let mut out = vec![0.0; probs.len()];
        rec(probs, &mut Vec::new(), 1.0, count, &mut out);
        out
    }

    #[test]
    fn selection_frequencies_match_inclusion_oracle() {
        let p = make_vds_prior(16, 3.0, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        // α = 0.05 on 16 columns selects round(0.8) = 1 column; α = 0.2 selects 3
        for (rate, count) in [(0.05, 1), (0.2, 3)] {
            let oracle = inclusion_oracle(&p.probs, count);
            let mut freq = vec![0.0; 16];
            for _ in 0..n {
                let m = sample_mask(&p, rate, &mut rng).unwrap();
                assert_eq!(m.popcount(), count);
                for c in m.columns() {
                    freq[c] += 1.0 / n as f64;
                }
            }
            for (f, o) in freq.iter().zip(&oracle) {
                let tol = (0.02 * o).max(4.0 * (o * (1.0 - o) / n as f64).sqrt());
                assert!((f - o).abs() <= tol, "rate {rate}: freq {f} vs oracle {o}");
            }
        }
    }

    #[test]
    fn apply_mask_definitions() {
        let k = random_k(3, 4, 1);
        assert_eq!(apply_mask(&k, &ColumnMask::empty(4)).unwrap(), ComplexTensor::zeros(&[3, 4]));
        assert_eq!(apply_mask(&k, &ColumnMask::full(4)).unwrap(), k);
        let m = ColumnMask::from_columns(4, &[0, 3]).unwrap();
        let y = apply_mask(&k, &m).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let i = r * 4 + c;
                if c == 1 || c == 2 {
                    assert_eq!(y.re.data()[i], 0.0);
                    assert_eq!(y.im.data()[i], 0.0);
                } else {
                    assert_eq!(y.re.data()[i].to_bits(), k.re.data()[i].to_bits());
                    assert_eq!(y.im.data()[i].to_bits(), k.im.data()[i].to_bits());
                }
            }
        }
        assert!(matches!(
            apply_mask(&k, &ColumnMask::empty(5)),
            Err(MaskError::DimMismatch { .. })
        ));
    }

    #[test]
    fn add_modes() {
        let mut m = ColumnMask::empty(4);
        m.add(0, AddMode::Strict).unwrap();
        assert_eq!(m.popcount(), 1);
        assert_eq!(m.add(0, AddMode::Strict), Err(MaskError::Duplicate(0)));
        m.add(0, AddMode::Lenient).unwrap();
        assert_eq!(m.popcount(), 1);
        assert!(matches!(m.add(4, AddMode::Lenient), Err(MaskError::OutOfRange { .. })));
        for j in 1..4 {
            m.add(j, AddMode::Strict).unwrap();
        }
        assert_eq!(m.popcount(), 4);
    }

    #[test]
    fn text_format() {
        let m = ColumnMask::from_columns(8, &[5, 1, 3]).unwrap();
        assert_eq!(m.to_string(), "d_c=8;cols=1,3,5");
        assert_eq!("d_c=8;cols=1,3,5".parse::<ColumnMask>().unwrap(), m);
        assert_eq!("d_c=3;cols=".parse::<ColumnMask>().unwrap(), ColumnMask::empty(3));
        assert!("d_c=3;cols=1,1".parse::<ColumnMask>().is_err());
        assert!("cols=1".parse::<ColumnMask>().is_err());
    }

    #[test]
    fn budget_rounds_half_up() {
        assert_eq!(budget(0.125, 32), 4);
        assert_eq!(budget(0.05, 32), 2);
        assert_eq!(budget(0.08, 32), 3);
        assert_eq!(budget(0.10, 32), 3);
        assert_eq!(budget(0.125, 20), 3); // 2.5 → 3
    }

    proptest! {
        #[test]
        fn apply_mask_idempotent_and_monotone(seed in 0u64..1000, a in prop::collection::vec(0usize..12, 0..8), b in prop::collection::vec(0usize..12, 0..8)) {
            let k = random_k(3, 12, seed);
            let s = ColumnMask::from_columns(12, &a).unwrap();
            let mut cols = a.clone();
            cols.extend(&b);
            let s2 = ColumnMask::from_columns(12, &cols).unwrap();
            let once = apply_mask(&k, &s).unwrap();
            prop_assert_eq!(apply_mask(&once, &s).unwrap(), once.clone());
            prop_assert!(s.is_subset_of(&s2));
            // columns zeroed under the larger mask are zeroed under the smaller one
            for j in 0..12 {
                if !s2.contains(j) {
                    prop_assert!(!s.contains(j));
                }
            }
        }

        #[test]
        fn sampled_masks_never_repeat(seed in 0u64..10_000, rate in 0.05f64..1.0) {
            let p = make_vds_prior(24, 3.0, 0.01).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let order = sample_order(&p, budget(rate, 24), &mut rng).unwrap();
            let mut sorted = order.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), order.len());
        }

        #[test]
        fn prior_invariants(d_c in 2usize..64, power in 0.0f64..6.0, floor in 0.0f64..0.2) {
            let p = make_vds_prior(d_c, power, floor).unwrap();
            prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let c = d_c / 2;
            for k in 1..=c {
                if c + k < d_c {
                    prop_assert!((p.probs[c - k] - p.probs[c + k]).abs() < 1e-15);
                }
            }
            for &v in &p.probs {
                prop_assert!(v >= floor / d_c as f64 - 1e-15);
            }
        }
    }
}
