//! 2D convolution (cross-correlation convention, as in most deep learning
//! libraries: the kernel is not flipped).
//!
//! `out[n,o,y,x] = Σ_{c,i,j} in[n,c, y·s + i − p, x·s + j − p] · w[o,c,i,j]`
//! with zero padding `p` and stride `s`.

use rayon::prelude::*;

use super::{ComplexTensor, NumericsError, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self, NumericsError> {
        if input.len() != 4 || kernel.len() != 4 {
            return Err(NumericsError::ShapeMismatch(format!(
                "conv2d expects [N,C,H,W] input and [O,C,k,k] kernel, got {input:?} and {kernel:?}"
            )));
        }
        if stride == 0 {
            return Err(NumericsError::InvalidArgument("conv2d stride must be ≥ 1".into()));
        }
        let (n, c_in, h, w) = (input[0], input[1], input[2], input[3]);
        let (c_out, kc, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if kc != c_in {
            return Err(NumericsError::ShapeMismatch(format!(
                "kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad || kh == 0 || kw == 0 {
            return Err(NumericsError::ShapeMismatch(format!(
                "kernel {kh}×{kw} does not fit padded input {h}×{w} (pad {pad})"
            )));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c_out, self.ho, self.wo]
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let ohw = self.out_hw();
        for c in 0..self.c_in {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * ohw;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        let dst = &mut col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.iter_mut().for_each(|v| *v = T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::ZERO
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let ohw = self.out_hw();
        for c in 0..self.c_in {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = ((c * self.kh + i) * self.kw + j) * ohw;
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &col[row + oy * self.wo..row + (oy + 1) * self.wo];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                plane[iy as usize * self.w + ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn parallel() -> bool {
    rayon::current_num_threads() > 1
}

pub(crate) fn forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T]) -> Vec<T> {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.out_hw();
    let mut out = vec![T::ZERO; g.n * out_sz];
    let kdim = g.col_rows();
    let ohw = g.out_hw();
    let run = |(xn, yn): (&[T], &mut [T])| {
        let mut col = vec![T::ZERO; kdim * ohw];
        g.im2col(xn, &mut col);
        T::gemm(
            g.c_out,
            kdim,
            ohw,
            T::ONE,
            weight,
            (kdim as isize, 1),
            &col,
            (ohw as isize, 1),
            T::ZERO,
            yn,
            (ohw as isize, 1),
        );
    };
    if parallel() {
        x.par_chunks(in_sz).zip(out.par_chunks_mut(out_sz)).for_each(run);
    } else {
        x.chunks(in_sz).zip(out.chunks_mut(out_sz)).for_each(run);
    }
    out
}

/// Returns `(d_input, d_weight)`; either may be skipped.
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let in_sz = g.c_in * g.h * g.w;
    let out_sz = g.c_out * g.out_hw();
    let kdim = g.col_rows();
    let ohw = g.out_hw();
    let w_sz = g.c_out * kdim;

    let per_sample = |n: usize| -> (Vec<T>, Vec<T>) {
        let xn = &x[n * in_sz..(n + 1) * in_sz];
        let dyn_ = &dy[n * out_sz..(n + 1) * out_sz];
        let mut col = vec![T::ZERO; kdim * ohw];
        let mut dxn = Vec::new();
        let mut dwn = Vec::new();
        if need_dw {
            g.im2col(xn, &mut col);
            dwn = vec![T::ZERO; w_sz];
            // dW = dY · colᵀ
            T::gemm(
                g.c_out,
                ohw,
                kdim,
                T::ONE,
                dyn_,
                (ohw as isize, 1),
                &col,
                (1, ohw as isize),
                T::ZERO,
                &mut dwn,
                (kdim as isize, 1),
            );
        }
        if need_dx {
            // dcol = Wᵀ · dY
            T::gemm(
                kdim,
                g.c_out,
                ohw,
                T::ONE,
                weight,
                (1, kdim as isize),
                dyn_,
                (ohw as isize, 1),
                T::ZERO,
                &mut col,
                (ohw as isize, 1),
            );
            dxn = vec![T::ZERO; in_sz];
            g.col2im(&col, &mut dxn);
        }
        (dxn, dwn)
    };

    let parts: Vec<(Vec<T>, Vec<T>)> = if parallel() {
        (0..g.n).into_par_iter().map(per_sample).collect()
    } else {
        (0..g.n).map(per_sample).collect()
    };

    let dx = need_dx.then(|| {
        let mut dx = Vec::with_capacity(g.n * in_sz);
        for (dxn, _) in &parts {
            dx.extend_from_slice(dxn);
        }
        dx
    });
    // summed in sample order so the result does not depend on thread count
    let dw = need_dw.then(|| {
        let mut dw = vec![T::ZERO; w_sz];
        for (_, dwn) in &parts {
            for (a, &b) in dw.iter_mut().zip(dwn) {
                *a += b;
            }
        }
        dw
    });
    (dx, dw)
}

fn batched(input: &Tensor<impl Real>) -> Result<(Vec<usize>, bool), NumericsError> {
    match input.shape().len() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(input.shape());
            Ok((s, true))
        }
        4 => Ok((input.shape().to_vec(), false)),
        _ => Err(NumericsError::ShapeMismatch(format!(
            "conv2d input must be [C,H,W] or [N,C,H,W], got {:?}",
            input.shape()
        ))),
    }
}

/// Cross-correlation of `input` (`[C_in,H,W]` or `[N,C_in,H,W]`) with
/// `kernel` (`[C_out,C_in,k,k]`).
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, NumericsError> {
    let (shape, squeeze) = batched(input)?;
    let g = ConvGeom::new(&shape, kernel.shape(), stride, padding)?;
    let out = forward(&g, input.data(), kernel.data());
    let mut out_shape = g.out_shape();
    if squeeze {
        out_shape.remove(0);
    }
    Tensor::new(out_shape, out)
}

/// Complex cross-correlation built from four real convolutions:
/// `(a+bi)⊛(c+di) = (a⊛c − b⊛d) + (a⊛d + b⊛c)i`.
pub fn complex_conv2d<T: Real>(
    input: &ComplexTensor<T>,
    kernel: &ComplexTensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ComplexTensor<T>, NumericsError> {
    let ac = conv2d(&input.re, &kernel.re, stride, padding)?;
    let bd = conv2d(&input.im, &kernel.im, stride, padding)?;
    let ad = conv2d(&input.re, &kernel.im, stride, padding)?;
    let bc = conv2d(&input.im, &kernel.re, stride, padding)?;
    let re = Tensor::new(
        ac.shape().to_vec(),
        ac.data().iter().zip(bd.data()).map(|(&p, &q)| p - q).collect(),
    )?;
    let im = Tensor::new(
        ad.shape().to_vec(),
        ad.data().iter().zip(bc.data()).map(|(&p, &q)| p + q).collect(),
    )?;
    ComplexTensor::new(re, im)
}
