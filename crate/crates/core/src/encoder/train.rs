//! Contrastive training loop and frozen-encoder embedding export.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::nt_xent_grad;
use super::network::Encoder;
use super::optim::AdamW;
use super::params::EncoderParams;
use super::scalar::Scalar;
use super::mean_pairwise_cosine;
use crate::augment::Augmenter;
use crate::conditioning::Window;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_key, substream};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const VIEW_STREAM: u64 = 0x5649_4557;
const EMBED_BATCH: usize = 256;

/// One record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTelemetry {
    pub epoch: usize,
    pub loss: f64,
    pub mean_view_cosine: f64,
    pub wall_time_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder<T> {
    pub params: EncoderParams<T>,
    pub telemetry: Vec<TrainTelemetry>,
}

#[derive(Debug)]
pub enum TrainFailure<T> {
    Invalid(Error),
    /// A non-finite loss or gradient; `last_good` holds the parameters from
    /// before the failing step.
    Diverged {
        epoch: usize,
        detail: String,
        last_good: Box<TrainedEncoder<T>>,
    },
}

impl<T> From<Error> for TrainFailure<T> {
    fn from(e: Error) -> Self {
        Self::Invalid(e)
    }
}

impl<T> From<TrainFailure<T>> for Error {
    fn from(f: TrainFailure<T>) -> Self {
        match f {
            TrainFailure::Invalid(e) => e,
            TrainFailure::Diverged { epoch, detail, .. } => Error::Training { epoch, detail },
        }
    }
}

fn to_f64<T: Scalar>(m: &Matrix<T>) -> Matrix<f64> {
    Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|v| v.f64()).collect())
        .expect("same shape")
}

/// Trains from `init` for `encoder.config().epochs` epochs.
///
/// Each epoch shuffles the corpus with a seeded stream, drops the last
/// incomplete batch and builds view pairs from substreams keyed by
/// `(seed, epoch, window_index, view)`, so results depend only on the seed.
pub fn train<T: Scalar>(
    encoder: &Encoder,
    augmenter: &Augmenter,
    corpus: &[Window],
    init: EncoderParams<T>,
    mut on_epoch: impl FnMut(&TrainTelemetry),
) -> std::result::Result<TrainedEncoder<T>, TrainFailure<T>> {
    let cfg = encoder.config().clone();
    encoder.check_params(&init)?;
    let n = cfg.batch_pairs;
    if cfg.epochs > 0 && corpus.len() < 2 * n {
        return Err(Error::Parameter(format!(
            "corpus of {} windows is smaller than 2 x batch_pairs ({})",
            corpus.len(),
            2 * n
        ))
        .into());
    }
    if let Some(w) = corpus.iter().find(|w| w.samples.len() != cfg.input_len) {
        return Err(Error::Parameter(format!(
            "window {}@{} has {} samples, expected {}",
            w.source_id,
            w.start_index,
            w.samples.len(),
            cfg.input_len
        ))
        .into());
    }

    let mut params = init;
    let mut opt = AdamW::<T>::new(params.len());
    let mut telemetry = Vec::with_capacity(cfg.epochs);
    let len = cfg.input_len;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut substream(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let view_seed = derive_key(cfg.seed, &[VIEW_STREAM, epoch as u64]);

        let (mut loss_sum, mut cos_sum, mut batches) = (0.0, 0.0, 0usize);
        for batch in order.chunks_exact(n) {
            let mut data = vec![T::zero(); 2 * n * len];
            for (slot, &idx) in batch.iter().enumerate() {
                let pair = augmenter.make_pair(&corpus[idx], view_seed, idx as u64)?;
                for (dst, v) in data[slot * len..][..len].iter_mut().zip(&pair.view_a.samples) {
                    *dst = T::of(*v);
                }
                for (dst, v) in data[(n + slot) * len..][..len].iter_mut().zip(&pair.view_b.samples) {
                    *dst = T::of(*v);
                }
            }
            let input = Matrix::from_vec(2 * n, len, data)?;
            let (out, cache) = encoder.forward_train(&params, &input)?;
            let proj = to_f64(&out.projections);
            let za = proj.select_rows(&(0..n).collect::<Vec<_>>());
            let zb = proj.select_rows(&(n..2 * n).collect::<Vec<_>>());
            let (loss, ga, gb) = nt_xent_grad(&za, &zb, cfg.tau)?;
            let cosine = mean_pairwise_cosine(&za, &zb)?;

            let d_proj = Matrix::from_vec(
                2 * n,
                proj.cols(),
                ga.as_slice().iter().chain(gb.as_slice()).map(|&g| T::of(g)).collect(),
            )?;
            let grads = encoder.backward(&params, &cache, &d_proj);
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainFailure::Diverged {
                    epoch,
                    detail: format!("non-finite loss or gradient at step {} (loss {loss})", opt.steps() + 1),
                    last_good: Box::new(TrainedEncoder { params, telemetry }),
                });
            }
            opt.step(params.flat_mut(), &grads, cfg.lr, cfg.weight_decay);
            loss_sum += loss;
            cos_sum += cosine;
            batches += 1;
        }

        let record = TrainTelemetry {
            epoch,
            loss: loss_sum / batches as f64,
            mean_view_cosine: cos_sum / batches as f64,
            wall_time_s: started.elapsed().as_secs_f64(),
            seed: cfg.seed,
        };
        on_epoch(&record);
        telemetry.push(record);
    }
    Ok(TrainedEncoder { params, telemetry })
}

/// Backbone features for every window, computed in fixed-size batches.
pub fn embed_corpus<T: Scalar>(encoder: &Encoder, params: &EncoderParams<T>, windows: &[Window]) -> Result<Matrix<f64>> {
    encoder.check_params(params)?;
    let len = encoder.config().input_len;
    let dim = encoder.feature_dim();
    let mut out = Vec::with_capacity(windows.len() * dim);
    for chunk in windows.chunks(EMBED_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * len);
        for w in chunk {
            if w.samples.len() != len {
                return Err(Error::Parameter(format!("window has {} samples, expected {len}", w.samples.len())));
            }
            data.extend(w.samples.iter().map(|&v| T::of(v)));
        }
        let feats = encoder.features(params, &Matrix::from_vec(chunk.len(), len, data)?)?;
        out.extend(feats.as_slice().iter().map(|v| v.f64()));
    }
    Matrix::from_vec(windows.len(), dim, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::AugmentConfig;
    use crate::encoder::EncoderConfig;

    fn tiny(epochs: usize) -> EncoderConfig {
        EncoderConfig {
            stage_channels: vec![4, 8],
            blocks_per_stage: 1,
            embed_dim: 8,
            proj_dims: vec![8, 16, 8],
            batch_pairs: 4,
            epochs,
            lr: 1e-3,
            seed: 11,
            ..EncoderConfig::desk()
        }
    }

    fn corpus(n: usize) -> Vec<Window> {
        (0..n)
            .map(|i| {
                let f = 1.0 + 0.1 * i as f64;
                let samples = (0..200)
                    .map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / 25.0).sin() + 0.01 * (i * t % 7) as f64)
                    .collect::<Vec<_>>();
                let (samples, degenerate) = crate::conditioning::zscore(&samples);
                Window { samples, source_id: format!("s{i}"), start_index: 0, degenerate }
            })
            .collect()
    }

    #[test]
    fn seeded_runs_are_identical() {
        let cfg = tiny(2);
        let enc = Encoder::new(&cfg).unwrap();
        let aug = Augmenter::new(AugmentConfig::default()).unwrap();
        let data = corpus(10);
        let run = || train(&enc, &aug, &data, enc.init_params::<f32>(cfg.seed), |_| {}).map_err(Error::from).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.params, b.params);
        let strip = |t: &[TrainTelemetry]| t.iter().map(|r| (r.epoch, r.loss, r.mean_view_cosine)).collect::<Vec<_>>();
        assert_eq!(strip(&a.telemetry), strip(&b.telemetry));
        assert_eq!(a.telemetry.len(), 2);
        assert_ne!(a.params, enc.init_params::<f32>(cfg.seed));
    }

    #[test]
    fn callback_sees_every_epoch() {
        let cfg = tiny(3);
        let enc = Encoder::new(&cfg).unwrap();
        let aug = Augmenter::new(AugmentConfig::default()).unwrap();
        let mut seen = Vec::new();
        train(&enc, &aug, &corpus(8), enc.init_params::<f32>(0), |r| seen.push(r.epoch))
            .map_err(Error::from)
            .unwrap();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn small_corpus_is_rejected() {
        let cfg = tiny(1);
        let enc = Encoder::new(&cfg).unwrap();
        let aug = Augmenter::new(AugmentConfig::default()).unwrap();
        let err = train(&enc, &aug, &corpus(7), enc.init_params::<f32>(0), |_| {}).unwrap_err();
        assert!(matches!(err, TrainFailure::Invalid(Error::Parameter(_))));
    }

    #[test]
    fn embedding_ignores_batch_composition() {
        let cfg = tiny(0);
        let enc = Encoder::new(&cfg).unwrap();
        let p = enc.init_params::<f32>(2);
        let data = corpus(9);
        let all = embed_corpus(&enc, &p, &data).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let back = embed_corpus(&enc, &p, &rev).unwrap();
        for i in 0..9 {
            assert_eq!(all.row(i), back.row(8 - i));
        }
        assert_eq!(all.cols(), 8);
    }
}
