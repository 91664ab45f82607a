//! Two-dimensional discrete Fourier transforms over the trailing two axes.
//!
//! Convention: the forward transform is unnormalized,
//! `X[u,v] = Σ x[r,c] · exp(-2πi (u·r/H + v·c/W))`, and the inverse carries the
//! full `1/(H·W)` factor. Classifier features are magnitudes of inverse
//! transforms, so this scale is part of the model contract.
//!
//! Power-of-two extents use an iterative radix-2 kernel; any other extent falls
//! back to a direct `O(n²)` DFT along that axis.

use std::f64::consts::PI;

use super::{ComplexTensor, NumericsError, Real};

/// Precomputed one-dimensional transform of a fixed length.
struct Plan<T> {
    n: usize,
    /// `cos(2πk/n)`, `sin(2πk/n)` for `k < n`.
    cos: Vec<T>,
    sin: Vec<T>,
    bitrev: Option<Vec<usize>>,
}

impl<T: Real> Plan<T> {
    fn new(n: usize) -> Self {
        let cos = (0..n)
            .map(|k| T::from_f64((2.0 * PI * k as f64 / n as f64).cos()))
            .collect();
        let sin = (0..n)
            .map(|k| T::from_f64((2.0 * PI * k as f64 / n as f64).sin()))
            .collect();
        let bitrev = n.is_power_of_two().then(|| {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
                .collect()
        });
        Self { n, cos, sin, bitrev }
    }

    /// In-place transform of one line. `inverse` flips the exponent sign only;
    /// scaling is applied by the caller.
    fn run(&self, re: &mut [T], im: &mut [T], inverse: bool, scratch: &mut Vec<T>) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        // forward uses exp(-iθ): (c, -s); inverse uses (c, +s)
        let sign = if inverse { T::ONE } else { -T::ONE };
        match &self.bitrev {
            Some(rev) => {
                for (i, &j) in rev.iter().enumerate().take(n) {
                    if j > i {
                        re.swap(i, j);
                        im.swap(i, j);
                    }
                }
                let mut len = 2;
                while len <= n {
                    let half = len / 2;
                    let step = n / len;
                    for start in (0..n).step_by(len) {
                        for k in 0..half {
                            let wr = self.cos[k * step];
                            let wi = sign * self.sin[k * step];
                            let a = start + k;
                            let b = a + half;
                            let tr = re[b] * wr - im[b] * wi;
                            let ti = re[b] * wi + im[b] * wr;
                            re[b] = re[a] - tr;
                            im[b] = im[a] - ti;
                            re[a] += tr;
                            im[a] += ti;
                        }
                    }
                    len *= 2;
                }
            }
            None => {
                scratch.clear();
                scratch.resize(2 * n, T::ZERO);
                for k in 0..n {
                    let mut sr = T::ZERO;
                    let mut si = T::ZERO;
                    for j in 0..n {
                        let idx = (j * k) % n;
                        let wr = self.cos[idx];
                        let wi = sign * self.sin[idx];
                        sr += re[j] * wr - im[j] * wi;
                        si += re[j] * wi + im[j] * wr;
                    }
                    scratch[k] = sr;
                    scratch[n + k] = si;
                }
                re.copy_from_slice(&scratch[..n]);
                im.copy_from_slice(&scratch[n..]);
            }
        }
    }
}

fn check_input<T: Real>(x: &ComplexTensor<T>) -> Result<(usize, usize), NumericsError> {
    let shape = x.shape();
    if shape.len() < 2 {
        return Err(NumericsError::ShapeMismatch(format!(
            "2D transform needs at least two axes, got {shape:?}"
        )));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h == 0 || w == 0 {
        return Err(NumericsError::ShapeMismatch(format!("empty transform axes {shape:?}")));
    }
    if !x.all_finite() {
        return Err(NumericsError::NonFinite("fft input".into()));
    }
    Ok((h, w))
}

/// Transforms every trailing `h×w` plane of `re`/`im` in place.
pub(crate) fn transform_planes<T: Real>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    let row_plan = Plan::<T>::new(w);
    let col_plan = Plan::<T>::new(h);
    let plane = h * w;
    let mut scratch = Vec::new();
    let mut col_re = vec![T::ZERO; h];
    let mut col_im = vec![T::ZERO; h];
    for (pre, pim) in re.chunks_mut(plane).zip(im.chunks_mut(plane)) {
        for (rr, ri) in pre.chunks_mut(w).zip(pim.chunks_mut(w)) {
            row_plan.run(rr, ri, inverse, &mut scratch);
        }
        for c in 0..w {
            for r in 0..h {
                col_re[r] = pre[r * w + c];
                col_im[r] = pim[r * w + c];
            }
            col_plan.run(&mut col_re, &mut col_im, inverse, &mut scratch);
            for r in 0..h {
                pre[r * w + c] = col_re[r];
                pim[r * w + c] = col_im[r];
            }
        }
        if inverse {
            let scale = T::from_f64(1.0 / plane as f64);
            for v in pre.iter_mut().chain(pim.iter_mut()) {
                *v *= scale;
            }
        }
    }
}

/// Unnormalized forward 2D DFT over the last two axes.
pub fn fft2<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>, NumericsError> {
    let (h, w) = check_input(x)?;
    let mut out = x.clone();
    transform_planes(out.re.data_mut(), out.im.data_mut(), h, w, false);
    Ok(out)
}

/// Inverse 2D DFT with `1/(H·W)` normalization over the last two axes.
pub fn ifft2<T: Real>(x: &ComplexTensor<T>) -> Result<ComplexTensor<T>, NumericsError> {
    let (h, w) = check_input(x)?;
    let mut out = x.clone();
    transform_planes(out.re.data_mut(), out.im.data_mut(), h, w, true);
    Ok(out)
}

fn roll_planes<T: Real>(x: &ComplexTensor<T>, shift_r: usize, shift_c: usize) -> ComplexTensor<T> {
    let shape = x.shape();
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    let plane = h * w;
    let mut out = x.clone();
    for (src, dst) in [(&x.re, &mut out.re), (&x.im, &mut out.im)] {
        for (sp, dp) in src.data().chunks(plane).zip(dst.data_mut().chunks_mut(plane)) {
            for r in 0..h {
                let rr = (r + shift_r) % h;
                for c in 0..w {
                    dp[rr * w + (c + shift_c) % w] = sp[r * w + c];
                }
            }
        }
    }
    out
}

/// Moves the zero-frequency bin to `(H/2, W/2)` on each trailing plane.
pub fn fftshift<T: Real>(x: &ComplexTensor<T>) -> ComplexTensor<T> {
    let shape = x.shape();
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    roll_planes(x, h / 2, w / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Real>(x: &ComplexTensor<T>) -> ComplexTensor<T> {
    let shape = x.shape();
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    roll_planes(x, h - h / 2, w - w / 2)
}
