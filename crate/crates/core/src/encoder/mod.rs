//! Contrastive representation learning: a 1-D residual encoder with a
//! projection head, trained under NT-Xent with AdamW.
//!
//! Stage-2 consumers use the backbone features (global-average-pooled, before
//! the projection head); the loss sees the l2-normalized projections.

mod checkpoint;
mod layers;
mod loss;
mod network;
mod optim;
mod params;
mod scalar;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use layers::{Act, ChannelNorm, Conv1d, Dense};
pub use loss::{nt_xent, nt_xent_grad};
pub use network::{Encoder, EncoderOutput, ForwardCache};
pub use optim::AdamW;
pub use params::{EncoderParams, ParamInfo};
pub use scalar::{matmul, Scalar};
pub use train::{embed_corpus, train, TrainFailure, TrainTelemetry, TrainedEncoder};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub input_len: usize,
    pub stage_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub block_kernel: usize,
    /// Width of the backbone features; equals the last stage width.
    pub embed_dim: usize,
    /// Projection head widths `[in, hidden, out]`.
    pub proj_dims: Vec<usize>,
    pub tau: f64,
    pub eps_norm: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_pairs: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Half-width ResNet-18 layout sized for CPU training.
    pub fn desk() -> Self {
        Self {
            input_len: 200,
            stage_channels: vec![16, 32, 64, 128],
            blocks_per_stage: 2,
            stem_kernel: 7,
            stem_stride: 2,
            block_kernel: 3,
            embed_dim: 128,
            proj_dims: vec![128, 128, 128],
            tau: 0.1,
            eps_norm: 1e-6,
            lr: 2e-4,
            weight_decay: 1e-4,
            batch_pairs: 64,
            epochs: 20,
            seed: 0,
        }
    }

    /// Full-width ResNet-18 layout with a 512-wide head.
    pub fn full_scale() -> Self {
        Self {
            stage_channels: vec![64, 128, 256, 512],
            embed_dim: 512,
            proj_dims: vec![512, 512, 512],
            batch_pairs: 512,
            epochs: 200,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.eps_norm > 0.0) {
            return param_err("tau and eps_norm must be positive");
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return param_err("lr and weight_decay must be non-negative");
        }
        if self.batch_pairs < 2 {
            return param_err("batch_pairs must be at least 2");
        }
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) || self.blocks_per_stage == 0 {
            return param_err("need at least one stage with positive width and one block per stage");
        }
        if self.embed_dim != *self.stage_channels.last().expect("non-empty") {
            return param_err(format!(
                "embed_dim {} must equal the last stage width {:?}",
                self.embed_dim, self.stage_channels
            ));
        }
        if self.proj_dims.len() != 3 || self.proj_dims[0] != self.embed_dim || self.proj_dims.contains(&0) {
            return param_err(format!(
                "proj_dims must be [embed_dim, hidden, out], got {:?}",
                self.proj_dims
            ));
        }
        if self.stem_kernel % 2 == 0 || self.block_kernel % 2 == 0 || self.stem_stride == 0 {
            return param_err("kernels must be odd and stride positive");
        }
        if self.input_len < self.stem_kernel {
            return param_err("input shorter than the stem kernel");
        }
        Ok(())
    }
}

pub(crate) fn l2_normalize_into<T: Scalar>(v: &[T], eps: T, out: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let denom = norm.max(eps);
    for (o, &x) in out.iter_mut().zip(v) {
        *o = x / denom;
    }
}

/// Gradient of `v / max(|v|, eps)` given the upstream gradient `g`.
pub(crate) fn l2_normalize_backward<T: Scalar>(v: &[T], g: &[T], eps: T, out: &mut [T]) {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if norm >= eps {
        let inv = norm.recip();
        let dot = v.iter().zip(g).map(|(&x, &y)| x * y).sum::<T>() * inv * inv;
        for ((o, &x), &y) in out.iter_mut().zip(v).zip(g) {
            *o = (y - x * dot) * inv;
        }
    } else {
        let inv = eps.recip();
        for (o, &y) in out.iter_mut().zip(g) {
            *o = y * inv;
        }
    }
}

/// `v / max(|v|_2, eps)`.
pub fn l2_normalize(v: &[f64], eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    l2_normalize_into(v, eps, &mut out);
    out
}

/// Mean cosine similarity between corresponding rows.
pub fn mean_pairwise_cosine(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<f64> {
    if a.rows() != b.rows() || a.cols() != b.cols() || a.rows() == 0 {
        return param_err("cosine needs two non-empty matrices of equal shape");
    }
    let total: f64 = a
        .iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| {
            let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
            let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nx == 0.0 || ny == 0.0 {
                0.0
            } else {
                (dot / (nx * ny)).clamp(-1.0, 1.0)
            }
        })
        .sum();
    Ok(total / a.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(l2_normalize(&[0.0, 3.0, 4.0], 1e-6), [0.0, 0.6, 0.8]);
        assert_eq!(l2_normalize(&[0.0; 3], 1e-6), [0.0; 3]);
        let tiny = l2_normalize(&[1e-8, 0.0], 1e-6);
        assert!((tiny[0] - 1e-2).abs() < 1e-15);
        for v in [[1.0, -2.0, 0.5], [1e-3, 2e-3, 0.0], [5e5, 1.0, -3.0]] {
            let n: f64 = l2_normalize(&v, 1e-6).iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_examples() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((mean_pairwise_cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = Matrix::from_rows(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        assert!((mean_pairwise_cosine(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let half = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((mean_pairwise_cosine(&a, &half).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(EncoderConfig::desk().validate().is_ok());
        assert!(EncoderConfig::full_scale().validate().is_ok());
        let bad = EncoderConfig { embed_dim: 64, ..EncoderConfig::desk() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { tau: 0.0, ..EncoderConfig::desk() };
        assert!(bad.validate().is_err());
        let bad = EncoderConfig { batch_pairs: 1, ..EncoderConfig::desk() };
        assert!(bad.validate().is_err());
    }
}
