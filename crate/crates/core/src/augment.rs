//! Stochastic view generation for contrastive training.
//!
//! A view is the fixed band-pass applied to a conditioned window, followed by
//! two to four distinct transforms drawn without replacement from eight kinds,
//! then a fresh z-score.

use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::conditioning::{design_bandpass, filtfilt, zscore, FilterSpec, Window};
use crate::error::{param_err, Result};
use crate::rng::{substream, StreamRng};

pub const CROP_KEEP: (f64, f64) = (0.5, 0.7);
pub const WARP_FACTOR: (f64, f64) = (0.97, 1.03);
pub const JITTER_SIGMA_FRAC: f64 = 0.01;
pub const SCALE: (f64, f64) = (0.95, 1.05);
pub const SHIFT_SAMPLES: i64 = 25;
pub const BLACKOUT_LEN: (usize, usize) = (10, 40);
pub const DROPOUT_WIDTH_HZ: (f64, f64) = (0.25, 1.0);
pub const DROPOUT_CENTER_HZ: (f64, f64) = (0.75, 7.5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentationKind {
    CropResize,
    TimeWarp,
    Jitter,
    MagScale,
    FreqDropout,
    CircShift,
    Polarity,
    Blackout,
}

impl AugmentationKind {
    pub const ALL: [AugmentationKind; 8] = [
        Self::CropResize,
        Self::TimeWarp,
        Self::Jitter,
        Self::MagScale,
        Self::FreqDropout,
        Self::CircShift,
        Self::Polarity,
        Self::Blackout,
    ];
}

/// A fully parameterized transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentationSpec {
    /// Keep `keep` of the window starting at `start_frac` of the slack, then
    /// stretch back to full length.
    CropResize { keep: f64, start_frac: f64 },
    TimeWarp { factor: f64 },
    /// Additive Gaussian noise with SD `sigma_frac` times the window SD.
    Jitter { sigma_frac: f64 },
    MagScale { scale: f64 },
    FreqDropout { low_hz: f64, high_hz: f64 },
    /// Rotation to the right by `shift` samples.
    CircShift { shift: i64 },
    Polarity,
    Blackout { start: usize, len: usize },
}

impl AugmentationSpec {
    pub fn kind(&self) -> AugmentationKind {
        match self {
            Self::CropResize { .. } => AugmentationKind::CropResize,
            Self::TimeWarp { .. } => AugmentationKind::TimeWarp,
            Self::Jitter { .. } => AugmentationKind::Jitter,
            Self::MagScale { .. } => AugmentationKind::MagScale,
            Self::FreqDropout { .. } => AugmentationKind::FreqDropout,
            Self::CircShift { .. } => AugmentationKind::CircShift,
            Self::Polarity => AugmentationKind::Polarity,
            Self::Blackout { .. } => AugmentationKind::Blackout,
        }
    }

    pub fn validate(&self, win_len: usize) -> Result<()> {
        let within = |v: f64, (lo, hi): (f64, f64)| (lo..=hi).contains(&v);
        let ok = match *self {
            Self::CropResize { keep, start_frac } => within(keep, CROP_KEEP) && within(start_frac, (0.0, 1.0)),
            Self::TimeWarp { factor } => within(factor, WARP_FACTOR),
            Self::Jitter { sigma_frac } => within(sigma_frac, (0.0, JITTER_SIGMA_FRAC)),
            Self::MagScale { scale } => within(scale, SCALE),
            Self::FreqDropout { low_hz, high_hz } => low_hz >= 0.0 && low_hz <= high_hz,
            Self::CircShift { shift } => shift.abs() <= SHIFT_SAMPLES,
            Self::Polarity => true,
            Self::Blackout { start, len } => {
                (BLACKOUT_LEN.0..=BLACKOUT_LEN.1).contains(&len) && start + len <= win_len
            }
        };
        if ok {
            Ok(())
        } else {
            param_err(format!("augmentation parameters out of range: {self:?}"))
        }
    }

    /// Draws parameters for `kind` uniformly within their ranges.
    pub fn draw(kind: AugmentationKind, win_len: usize, rng: &mut StreamRng) -> Self {
        match kind {
            AugmentationKind::CropResize => Self::CropResize {
                keep: rng.random_range(CROP_KEEP.0..=CROP_KEEP.1),
                start_frac: rng.random_range(0.0..=1.0),
            },
            AugmentationKind::TimeWarp => Self::TimeWarp {
                factor: rng.random_range(WARP_FACTOR.0..=WARP_FACTOR.1),
            },
            AugmentationKind::Jitter => Self::Jitter {
                sigma_frac: JITTER_SIGMA_FRAC,
            },
            AugmentationKind::MagScale => Self::MagScale {
                scale: rng.random_range(SCALE.0..=SCALE.1),
            },
            AugmentationKind::FreqDropout => {
                let width = rng.random_range(DROPOUT_WIDTH_HZ.0..=DROPOUT_WIDTH_HZ.1);
                let center = rng.random_range(DROPOUT_CENTER_HZ.0..=DROPOUT_CENTER_HZ.1);
                Self::FreqDropout {
                    low_hz: center - width / 2.0,
                    high_hz: center + width / 2.0,
                }
            }
            AugmentationKind::CircShift => Self::CircShift {
                shift: rng.random_range(-SHIFT_SAMPLES..=SHIFT_SAMPLES),
            },
            AugmentationKind::Polarity => Self::Polarity,
            AugmentationKind::Blackout => {
                let len = rng.random_range(BLACKOUT_LEN.0..=BLACKOUT_LEN.1).min(win_len);
                Self::Blackout {
                    start: rng.random_range(0..=win_len - len),
                    len,
                }
            }
        }
    }
}

/// Linear interpolation of `x` at fractional position `pos`, clamped to the ends.
fn lerp_at(x: &[f64], pos: f64) -> f64 {
    let last = (x.len() - 1) as f64;
    let pos = pos.clamp(0.0, last);
    let i = pos.floor() as usize;
    if i + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let t = pos - i as f64;
    x[i] * (1.0 - t) + x[i + 1] * t
}

fn population_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Zeroes every FFT bin whose absolute frequency lies in `[low_hz, high_hz]`.
pub fn fft_band_stop(x: &[f64], fs_hz: f64, low_hz: f64, high_hz: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k) as f64;
        let f = bin * fs_hz / n as f64;
        if f >= low_hz && f <= high_hz {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Applies one transform; output length always equals input length.
pub fn apply_transform(
    w: &[f64],
    spec: &AugmentationSpec,
    fs_hz: f64,
    rng: &mut StreamRng,
) -> Result<Vec<f64>> {
    let n = w.len();
    if n < 2 {
        return param_err("augmentation needs at least 2 samples");
    }
    spec.validate(n)?;
    let out = match *spec {
        AugmentationSpec::CropResize { keep, start_frac } => {
            let kept = ((keep * n as f64).round() as usize).clamp(2, n);
            let start = (start_frac * (n - kept) as f64).round() as usize;
            let seg = &w[start..start + kept];
            let step = (kept - 1) as f64 / (n - 1) as f64;
            (0..n).map(|i| lerp_at(seg, i as f64 * step)).collect()
        }
        AugmentationSpec::TimeWarp { factor } => {
            let c = (n - 1) as f64 / 2.0;
            (0..n).map(|i| lerp_at(w, c + (i as f64 - c) / factor)).collect()
        }
        AugmentationSpec::Jitter { sigma_frac } => {
            let sigma = sigma_frac * population_std(w);
            if sigma > 0.0 {
                let noise = Normal::new(0.0, sigma).expect("finite sigma");
                w.iter().map(|v| v + noise.sample(rng)).collect()
            } else {
                w.to_vec()
            }
        }
        AugmentationSpec::MagScale { scale } => w.iter().map(|v| v * scale).collect(),
        AugmentationSpec::FreqDropout { low_hz, high_hz } => fft_band_stop(w, fs_hz, low_hz, high_hz),
        AugmentationSpec::CircShift { shift } => {
            let s = shift.rem_euclid(n as i64) as usize;
            (0..n).map(|i| w[(i + n - s) % n]).collect()
        }
        AugmentationSpec::Polarity => w.iter().map(|v| -v).collect(),
        AugmentationSpec::Blackout { start, len } => {
            let mut out = w.to_vec();
            out[start..start + len].iter_mut().for_each(|v| *v = 0.0);
            out
        }
    };
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Band-pass applied to every view before the random transforms.
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub fs_hz: f64,
    pub min_transforms: usize,
    pub max_transforms: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 8.0,
            order: 3,
            fs_hz: 25.0,
            min_transforms: 2,
            max_transforms: 4,
        }
    }
}

/// One augmented view and the transforms that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub window: Window,
    pub provenance: Vec<AugmentationSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewPair {
    pub view_a: Window,
    pub view_b: Window,
    pub provenance_a: Vec<AugmentationSpec>,
    pub provenance_b: Vec<AugmentationSpec>,
    pub rng_seed: u64,
}

#[derive(Debug, Clone)]
pub struct Augmenter {
    cfg: AugmentConfig,
    filter: Arc<FilterSpec>,
}

impl Augmenter {
    pub fn new(cfg: AugmentConfig) -> Result<Self> {
        if cfg.min_transforms == 0
            || cfg.min_transforms > cfg.max_transforms
            || cfg.max_transforms > AugmentationKind::ALL.len()
        {
            return param_err(format!(
                "transform count range {}..={} invalid",
                cfg.min_transforms, cfg.max_transforms
            ));
        }
        let filter = design_bandpass(cfg.low_hz, cfg.high_hz, cfg.order, cfg.fs_hz)?;
        Ok(Self {
            cfg,
            filter: Arc::new(filter),
        })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn compose_view(&self, w: &Window, rng: &mut StreamRng) -> Result<View> {
        let mut x = filtfilt(&self.filter, &w.samples)?;
        let k = rng.random_range(self.cfg.min_transforms..=self.cfg.max_transforms);
        let picks = sample(rng, AugmentationKind::ALL.len(), k);
        let mut provenance = Vec::with_capacity(k);
        for idx in picks.iter() {
            let spec = AugmentationSpec::draw(AugmentationKind::ALL[idx], x.len(), rng);
            x = apply_transform(&x, &spec, self.cfg.fs_hz, rng)?;
            provenance.push(spec);
        }
        let (samples, degenerate) = zscore(&x);
        Ok(View {
            window: Window {
                samples,
                source_id: w.source_id.clone(),
                start_index: w.start_index,
                degenerate,
            },
            provenance,
        })
    }

    /// Two independent views from substreams `(seed, window_index, 0|1)`.
    pub fn make_pair(&self, w: &Window, seed: u64, window_index: u64) -> Result<ViewPair> {
        let a = self.compose_view(w, &mut substream(seed, &[window_index, 0]))?;
        let b = self.compose_view(w, &mut substream(seed, &[window_index, 1]))?;
        Ok(ViewPair {
            view_a: a.window,
            view_b: b.window,
            provenance_a: a.provenance,
            provenance_b: b.provenance,
            rng_seed: seed,
        })
    }
}
