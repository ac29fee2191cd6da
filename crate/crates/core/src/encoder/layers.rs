//! Layer kernels with hand-written backward passes.
//!
//! Activations are stored channel-major, `[channel][batch][time]`, so a
//! convolution over the whole batch is one GEMM against an im2col buffer.

use super::scalar::{matmul, Scalar};
use super::params::ParamId;

/// Activation tensor laid out `[c][b][l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub c: usize,
    pub b: usize,
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Act<T> {
    pub fn zeros(c: usize, b: usize, l: usize) -> Self {
        Self {
            c,
            b,
            l,
            data: vec![T::zero(); c * b * l],
        }
    }

    pub fn same_shape(&self) -> Self {
        Self::zeros(self.c, self.b, self.l)
    }

    fn positions(&self) -> usize {
        self.b * self.l
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: ParamId,
}

impl Conv1d {
    pub fn out_len(&self, l: usize) -> usize {
        (l + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn im2col<T: Scalar>(&self, x: &Act<T>, lout: usize) -> Vec<T> {
        let n = x.b * lout;
        let mut col = vec![T::zero(); self.cin * self.kernel * n];
        for ci in 0..self.cin {
            for kk in 0..self.kernel {
                let row = &mut col[(ci * self.kernel + kk) * n..][..n];
                for b in 0..x.b {
                    let src = &x.data[(ci * x.b + b) * x.l..][..x.l];
                    let dst = &mut row[b * lout..][..lout];
                    for (t, d) in dst.iter_mut().enumerate() {
                        let pos = (t * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < x.l {
                            *d = src[pos as usize];
                        }
                    }
                }
            }
        }
        col
    }

    pub fn forward<T: Scalar>(&self, w: &[T], x: &Act<T>) -> Act<T> {
        debug_assert_eq!(x.c, self.cin);
        let lout = self.out_len(x.l);
        let col = self.im2col(x, lout);
        let mut y = Act::zeros(self.cout, x.b, lout);
        matmul(
            self.cout,
            self.cin * self.kernel,
            x.b * lout,
            w,
            false,
            &col,
            false,
            T::zero(),
            &mut y.data,
        );
        y
    }

    /// Accumulates the weight gradient into `dw` and returns the input gradient.
    pub fn backward<T: Scalar>(&self, w: &[T], x: &Act<T>, dy: &Act<T>, dw: &mut [T]) -> Act<T> {
        let lout = dy.l;
        let n = x.b * lout;
        let ck = self.cin * self.kernel;
        let col = self.im2col(x, lout);
        matmul(self.cout, n, ck, &dy.data, false, &col, true, T::one(), dw);

        let mut dcol = vec![T::zero(); ck * n];
        matmul(ck, self.cout, n, w, true, &dy.data, false, T::zero(), &mut dcol);

        let mut dx = x.same_shape();
        for ci in 0..self.cin {
            for kk in 0..self.kernel {
                let row = &dcol[(ci * self.kernel + kk) * n..][..n];
                for b in 0..x.b {
                    let dst = &mut dx.data[(ci * x.b + b) * x.l..][..x.l];
                    for (t, &g) in row[b * lout..][..lout].iter().enumerate() {
                        let pos = (t * self.stride + kk) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < x.l {
                            dst[pos as usize] += g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Affine normalization across channels at every (sample, time) position.
/// Uses no batch statistics, so outputs do not depend on batch composition.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl ChannelNorm {
    pub fn forward<T: Scalar>(&self, gamma: &[T], beta: &[T], x: &Act<T>) -> (Act<T>, NormCache<T>) {
        let p = x.positions();
        let c = x.c;
        let inv_c = T::of(1.0 / c as f64);
        let mut mean = vec![T::zero(); p];
        for ch in 0..c {
            for (m, &v) in mean.iter_mut().zip(&x.data[ch * p..][..p]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        let mut var = vec![T::zero(); p];
        for ch in 0..c {
            for ((s, &v), &m) in var.iter_mut().zip(&x.data[ch * p..][..p]).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let eps = T::of(NORM_EPS);
        let inv_std: Vec<T> = var.iter().map(|&s| (s * inv_c + eps).sqrt().recip()).collect();

        let mut xhat = vec![T::zero(); c * p];
        let mut y = x.same_shape();
        for ch in 0..c {
            let (g, bt) = (gamma[ch], beta[ch]);
            let src = &x.data[ch * p..][..p];
            let xh = &mut xhat[ch * p..][..p];
            let dst = &mut y.data[ch * p..][..p];
            for i in 0..p {
                xh[i] = (src[i] - mean[i]) * inv_std[i];
                dst[i] = g * xh[i] + bt;
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(
        &self,
        gamma: &[T],
        cache: &NormCache<T>,
        dy: &Act<T>,
        dgamma: &mut [T],
        dbeta: &mut [T],
    ) -> Act<T> {
        let p = dy.positions();
        let c = dy.c;
        let inv_c = T::of(1.0 / c as f64);
        let mut mean_g = vec![T::zero(); p];
        let mut mean_gx = vec![T::zero(); p];
        for ch in 0..c {
            let d = &dy.data[ch * p..][..p];
            let xh = &cache.xhat[ch * p..][..p];
            let mut sg = T::zero();
            let mut sb = T::zero();
            for i in 0..p {
                sg += d[i] * xh[i];
                sb += d[i];
                let g = d[i] * gamma[ch];
                mean_g[i] += g;
                mean_gx[i] += g * xh[i];
            }
            dgamma[ch] += sg;
            dbeta[ch] += sb;
        }
        mean_g.iter_mut().for_each(|v| *v *= inv_c);
        mean_gx.iter_mut().for_each(|v| *v *= inv_c);
        let mut dx = dy.same_shape();
        for ch in 0..c {
            let d = &dy.data[ch * p..][..p];
            let xh = &cache.xhat[ch * p..][..p];
            let out = &mut dx.data[ch * p..][..p];
            for i in 0..p {
                out[i] = cache.inv_std[i] * (d[i] * gamma[ch] - mean_g[i] - xh[i] * mean_gx[i]);
            }
        }
        dx
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Gradient through a ReLU given its output.
pub fn relu_backward<T: Scalar>(out: &[T], dy: &mut [T]) {
    for (d, &o) in dy.iter_mut().zip(out) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
}

/// Mean over time; returns `[b][c]` row-major features.
pub fn global_avg_pool<T: Scalar>(x: &Act<T>) -> Vec<T> {
    let inv = T::of(1.0 / x.l as f64);
    let mut out = vec![T::zero(); x.b * x.c];
    for ch in 0..x.c {
        for b in 0..x.b {
            let s: T = x.data[(ch * x.b + b) * x.l..][..x.l].iter().copied().sum();
            out[b * x.c + ch] = s * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(dfeat: &[T], c: usize, b: usize, l: usize) -> Act<T> {
    let inv = T::of(1.0 / l as f64);
    let mut dx = Act::zeros(c, b, l);
    for ch in 0..c {
        for bi in 0..b {
            let g = dfeat[bi * c + ch] * inv;
            dx.data[(ch * b + bi) * l..][..l].iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// `x` is `[rows][inputs]`; returns `[rows][outputs]`.
    pub fn forward<T: Scalar>(&self, w: &[T], bias: &[T], x: &[T], rows: usize) -> Vec<T> {
        let mut y = vec![T::zero(); rows * self.outputs];
        for r in 0..rows {
            y[r * self.outputs..][..self.outputs].copy_from_slice(bias);
        }
        matmul(rows, self.inputs, self.outputs, x, false, w, true, T::one(), &mut y);
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        w: &[T],
        x: &[T],
        dy: &[T],
        rows: usize,
        dw: &mut [T],
        dbias: &mut [T],
    ) -> Vec<T> {
        matmul(self.outputs, rows, self.inputs, dy, true, x, false, T::one(), dw);
        for r in 0..rows {
            for (db, &g) in dbias.iter_mut().zip(&dy[r * self.outputs..][..self.outputs]) {
                *db += g;
            }
        }
        let mut dx = vec![T::zero(); rows * self.inputs];
        matmul(rows, self.outputs, self.inputs, dy, false, w, false, T::zero(), &mut dx);
        dx
    }
}
