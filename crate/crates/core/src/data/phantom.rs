//! Synthetic phantoms with an optional striped lesion.
//!
//! The background is a blurred sum of soft ellipses, so nearly all of its
//! k-space energy sits in a few columns around DC. A positive record adds a
//! Gaussian blob modulated by `cos(2π f x / d_c)` along the horizontal axis,
//! which puts the lesion's energy in columns `center ± f` of the centred
//! k-space. Which column offsets `f` are used depends on the variant:
//!
//! * `Easy`: a single fixed offset.
//! * `Hard`: one of two offsets, chosen by a per-record key that also sets the
//!   orientation of the main ellipse. The key is visible in the low-frequency
//!   columns, so the best high-frequency column to acquire depends on what
//!   has been observed near DC.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::numerics::{fft2, fftshift, ifft2, ifftshift, ComplexTensor, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub variant: Variant,
    /// Lesion column offset for the easy variant, as a fraction of `d_c`.
    pub easy_offset: f64,
    /// The two candidate offsets of the hard variant, as fractions of `d_c`.
    pub hard_offsets: [f64; 2],
    /// Lesion envelope standard deviation as a fraction of the image extent.
    pub lesion_sigma: f64,
    /// Lesion amplitude range (image intensity units).
    pub amplitude: [f64; 2],
    /// Background blur standard deviation as a fraction of the image extent.
    pub blur_sigma: f64,
    /// Half-width (fraction of `d_c`) of the low-frequency band holding the
    /// background energy.
    pub low_band: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            variant: Variant::Hard,
            easy_offset: 10.0 / 32.0,
            hard_offsets: [8.0 / 32.0, 12.0 / 32.0],
            lesion_sigma: 3.0 / 32.0,
            amplitude: [0.2, 0.45],
            blur_sigma: 1.8 / 32.0,
            low_band: 4.0 / 32.0,
        }
    }
}

impl PhantomParams {
    fn offset_cols(frac: f64, d_c: usize) -> usize {
        ((frac * d_c as f64).round() as usize).clamp(1, d_c / 2)
    }

    /// Candidate lesion offsets (columns from centre) for this variant.
    pub fn band_offsets(&self, d_c: usize) -> Vec<usize> {
        match self.variant {
            Variant::Easy => vec![Self::offset_cols(self.easy_offset, d_c)],
            Variant::Hard => self.hard_offsets.iter().map(|&f| Self::offset_cols(f, d_c)).collect(),
        }
    }

    pub fn low_band_cols(&self, d_c: usize) -> usize {
        (self.low_band * d_c as f64).round() as usize
    }

    /// Column indices (centred layout) within ±1 of any lesion offset, on both
    /// sides of DC.
    pub fn informative_columns(&self, d_c: usize) -> Vec<usize> {
        let c = d_c / 2;
        let mut cols: Vec<usize> = self
            .band_offsets(d_c)
            .into_iter()
            .flat_map(|f| {
                (f.saturating_sub(1)..=f + 1).flat_map(move |o| [c as isize + o as isize, c as isize - o as isize])
            })
            .filter(|&j| j >= 0 && (j as usize) < d_c)
            .map(|j| j as usize)
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    fn validate(&self) -> Result<(), DataError> {
        let ok = self.lesion_sigma > 0.0
            && self.blur_sigma >= 0.0
            && self.amplitude[0] >= 0.0
            && self.amplitude[1] >= self.amplitude[0]
            && self.low_band >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidConfig(format!("bad phantom parameters {self:?}")))
        }
    }
}

/// One generated image and the lesion band it was built with.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub image: Tensor<f64>,
    /// Column offset from centre of the lesion stripes (positives only).
    pub lesion_offset: Option<usize>,
    /// Band key (index into the variant's offsets) that also fixed the
    /// background orientation.
    pub key: usize,
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    theta: f64,
    intensity: f64,
}

impl Ellipse {
    fn inside(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.ax;
        let v = (-dx * s + dy * c) / self.ay;
        u * u + v * v <= 1.0
    }
}

/// Multiplies the spectrum by a Gaussian transfer function.
fn gaussian_blur(img: &Tensor<f64>, sigma_r: f64, sigma_c: f64) -> Tensor<f64> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let spec = fft2(&ComplexTensor::from_real(img.clone())).expect("finite image");
    let mut spec = spec;
    for r in 0..h {
        let fr = if r <= h / 2 { r as f64 } else { r as f64 - h as f64 } / h as f64;
        for c in 0..w {
            let fc = if c <= w / 2 { c as f64 } else { c as f64 - w as f64 } / w as f64;
            let g = (-2.0 * std::f64::consts::PI.powi(2) * (sigma_r * sigma_r * fr * fr + sigma_c * sigma_c * fc * fc)).exp();
            spec.re.data_mut()[r * w + c] *= g;
            spec.im.data_mut()[r * w + c] *= g;
        }
    }
    ifft2(&spec).expect("finite spectrum").re
}

/// Generates one phantom image of shape `[d_r, d_c]`.
pub fn generate_phantom(
    rng: &mut ChaCha8Rng,
    d_r: usize,
    d_c: usize,
    positive: bool,
    params: &PhantomParams,
) -> Result<Phantom, DataError> {
    if d_r < 16 || d_c < 16 {
        return Err(DataError::InvalidConfig(format!("phantom needs d_r, d_c ≥ 16, got {d_r}×{d_c}")));
    }
    params.validate()?;
    let offsets = params.band_offsets(d_c);
    let key = rng.gen_range(0..offsets.len());
    // the hard variant ties orientation to the key; the easy variant draws it freely
    let tall = match params.variant {
        Variant::Hard => key == 1,
        Variant::Easy => rng.gen_bool(0.5),
    };
    let (long, short) = (rng.gen_range(0.68..0.8), rng.gen_range(0.4..0.5));
    let (ax, ay) = if tall { (short, long) } else { (long, short) };
    let main = Ellipse {
        cx: rng.gen_range(-0.08..0.08),
        cy: rng.gen_range(-0.08..0.08),
        ax,
        ay,
        theta: rng.gen_range(-0.15..0.15),
        intensity: rng.gen_range(0.55..0.75),
    };
    let mut inner = Vec::new();
    for _ in 0..3 {
        let rho: f64 = rng.gen_range(0.0..0.5);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        inner.push(Ellipse {
            cx: main.cx + rho * main.ax * phi.cos(),
            cy: main.cy + rho * main.ay * phi.sin(),
            ax: rng.gen_range(0.08..0.25),
            ay: rng.gen_range(0.08..0.25),
            theta: rng.gen_range(0.0..std::f64::consts::PI),
            intensity: rng.gen_range(0.05..0.25),
        });
    }

    let coord = |i: usize, n: usize| (i as f64 - (n / 2) as f64) / (n as f64 / 2.0);
    let mut bg = Tensor::zeros(&[d_r, d_c]);
    for r in 0..d_r {
        let y = coord(r, d_r);
        for c in 0..d_c {
            let x = coord(c, d_c);
            let mut v = 0.0;
            if main.inside(x, y) {
                v += main.intensity;
                for e in &inner {
                    if e.inside(x, y) {
                        v += e.intensity;
                    }
                }
            }
            bg.data_mut()[r * d_c + c] = v.clamp(0.0, 1.0);
        }
    }
    let mut image = gaussian_blur(&bg, params.blur_sigma * d_r as f64, params.blur_sigma * d_c as f64);
    image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));

    let lesion_offset = if positive {
        let f = offsets[key];
        let rho: f64 = rng.gen_range(0.0..0.45);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let lx = main.cx + rho * main.ax * phi.cos();
        let ly = main.cy + rho * main.ay * phi.sin();
        let amp = rng.gen_range(params.amplitude[0]..=params.amplitude[1]);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let sr = params.lesion_sigma * d_r as f64;
        let sc = params.lesion_sigma * d_c as f64;
        let lr = ly * d_r as f64 / 2.0 + (d_r / 2) as f64;
        let lc = lx * d_c as f64 / 2.0 + (d_c / 2) as f64;
        for r in 0..d_r {
            for c in 0..d_c {
                let dr = r as f64 - lr;
                let dc = c as f64 - lc;
                let env = (-(dr * dr) / (2.0 * sr * sr) - (dc * dc) / (2.0 * sc * sc)).exp();
                let stripe = (std::f64::consts::TAU * f as f64 * c as f64 / d_c as f64 + phase).cos();
                let v = &mut image.data_mut()[r * d_c + c];
                *v = (*v + amp * env * stripe).max(0.0);
            }
        }
        Some(f)
    } else {
        None
    };
    Ok(Phantom {
        image,
        lesion_offset,
        key,
    })
}

/// Centred k-space of `image` plus complex Gaussian noise.
///
/// The spectrum is `fftshift(fft2(image))`, i.e. DC sits at `(d_r/2, d_c/2)`.
/// Each noise component has standard deviation `noise_sigma · mean|X|`.
pub fn to_kspace(image: &Tensor<f64>, noise_sigma: f64, rng: &mut ChaCha8Rng) -> Result<ComplexTensor<f64>, DataError> {
    if !(noise_sigma >= 0.0) {
        return Err(DataError::InvalidConfig(format!("noise_sigma must be ≥ 0, got {noise_sigma}")));
    }
    let mut k = fftshift(&fft2(&ComplexTensor::from_real(image.clone()))?);
    if noise_sigma > 0.0 {
        let mean_mag = k.magnitude().sum() / k.len() as f64;
        let std = noise_sigma * mean_mag;
        let normal = rand_distr::Normal::new(0.0, std).expect("finite std");
        for v in k.re.data_mut().iter_mut().chain(k.im.data_mut().iter_mut()) {
            *v += rng.sample(normal);
        }
    }
    Ok(k)
}

/// Image-domain magnitude of a centred k-space.
pub fn image_from_kspace(k: &ComplexTensor<f64>) -> Result<Tensor<f64>, DataError> {
    Ok(ifft2(&ifftshift(k))?.magnitude())
}

/// Per-column energy `Σ_r |X[r, j]|²`.
pub fn column_energy<T: crate::numerics::Real>(k: &ComplexTensor<T>) -> Vec<f64> {
    let shape = k.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let mut e = vec![0.0; w];
    for plane in 0..k.len() / (h * w) {
        for r in 0..h {
            for (c, ec) in e.iter_mut().enumerate() {
                let i = plane * h * w + r * w + c;
                let (a, b) = (k.re.data()[i].to_f64(), k.im.data()[i].to_f64());
                *ec += a * a + b * b;
            }
        }
    }
    e
}
