//! Signal conditioning: band-pass at the native rate, resample to a common
//! rate, then cut z-scored fixed-length windows.

mod butterworth;
mod resample;

pub use butterworth::{design_bandpass, filtfilt, Biquad, FilterSpec};
pub use resample::{limit_denominator, resample, Resampler};

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};

/// Population standard deviation at or below which a window counts as flat.
pub const DEGENERATE_STD: f64 = 1e-10;

/// A raw optical trace at its native sampling rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrace {
    pub samples: Vec<f64>,
    pub fs_hz: f64,
    pub source_id: String,
}

impl RawTrace {
    pub fn new(samples: Vec<f64>, fs_hz: f64, source_id: impl Into<String>) -> Result<Self> {
        let trace = Self {
            samples,
            fs_hz,
            source_id: source_id.into(),
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return param_err(format!("trace {}: fs_hz must be positive", self.source_id));
        }
        if self.samples.is_empty() {
            return param_err(format!("trace {}: no samples", self.source_id));
        }
        if self.samples.iter().any(|v| !v.is_finite()) {
            return param_err(format!("trace {}: non-finite sample", self.source_id));
        }
        Ok(())
    }
}

/// One conditioned, z-scored segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub samples: Vec<f64>,
    pub source_id: String,
    pub start_index: usize,
    /// Zero-variance input; such windows bypass the encoder and are gated poor.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConditioningConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub target_fs_hz: f64,
    pub win_len: usize,
    pub hop: usize,
}

impl Default for ConditioningConfig {
    fn default() -> Self {
        Self {
            low_hz: 0.5,
            high_hz: 8.0,
            order: 3,
            target_fs_hz: 25.0,
            win_len: 200,
            hop: 100,
        }
    }
}

impl ConditioningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.win_len < 2 || self.hop == 0 || self.hop > self.win_len {
            return param_err(format!(
                "window geometry requires win_len >= 2 and 1 <= hop <= win_len (win_len={}, hop={})",
                self.win_len, self.hop
            ));
        }
        // band edges are checked against the target rate here and against
        // each trace's native rate when it is filtered
        design_bandpass(self.low_hz, self.high_hz, self.order, self.target_fs_hz)?;
        Ok(())
    }
}

/// Population z-score. Returns the normalized vector and whether the input
/// had (numerically) zero variance, in which case the output is all zeros.
pub fn zscore(w: &[f64]) -> (Vec<f64>, bool) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= DEGENERATE_STD || !std.is_finite() {
        return (vec![0.0; w.len()], true);
    }
    (w.iter().map(|v| (v - mean) / std).collect(), false)
}

/// Number of windows [`segment`] produces.
pub fn window_count(len: usize, win_len: usize, hop: usize) -> usize {
    if len < win_len {
        0
    } else {
        (len - win_len) / hop + 1
    }
}

/// Cuts `x` into windows of `win_len` every `hop` samples, z-scoring each.
pub fn segment(x: &[f64], win_len: usize, hop: usize, source_id: &str) -> Result<Vec<Window>> {
    if win_len < 2 || hop == 0 || hop > win_len {
        return param_err(format!("invalid window geometry win_len={win_len} hop={hop}"));
    }
    Ok((0..window_count(x.len(), win_len, hop))
        .map(|i| {
            let start = i * hop;
            let (samples, degenerate) = zscore(&x[start..start + win_len]);
            Window {
                samples,
                source_id: source_id.to_string(),
                start_index: start,
                degenerate,
            }
        })
        .collect())
}

/// Full chain for one trace: filter at native rate, resample, segment.
pub fn condition_trace(trace: &RawTrace, cfg: &ConditioningConfig) -> Result<Vec<Window>> {
    trace.validate()?;
    let spec = design_bandpass(cfg.low_hz, cfg.high_hz, cfg.order, trace.fs_hz)?;
    let filtered = filtfilt(&spec, &trace.samples)?;
    let resampled = resample(&filtered, trace.fs_hz, cfg.target_fs_hz)?;
    segment(&resampled, cfg.win_len, cfg.hop, &trace.source_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zscore_closed_form() {
        let (z, flat) = zscore(&[1.0, 2.0, 3.0]);
        assert!(!flat);
        let s = 1.5f64.sqrt();
        for (a, b) in z.iter().zip([-s, 0.0, s]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((z[0] + 1.2247).abs() < 1e-4);
    }

    #[test]
    fn zscore_flat() {
        assert_eq!(zscore(&[5.0, 5.0, 5.0]), (vec![0.0; 3], true));
    }

    #[test]
    fn segment_offsets() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.3).sin()).collect();
        let w = segment(&x, 200, 100, "s").unwrap();
        assert_eq!(w.iter().map(|w| w.start_index).collect::<Vec<_>>(), [0, 100, 200, 300]);
        assert!(segment(&x[..199], 200, 100, "s").unwrap().is_empty());
        assert_eq!(segment(&x[..200], 200, 100, "s").unwrap().len(), 1);
        assert!(segment(&x, 200, 0, "s").is_err());
        assert!(segment(&x, 200, 201, "s").is_err());
    }

    #[test]
    fn segment_count_exhaustive() {
        for len in 0..=400 {
            for win in 2..=12 {
                for hop in 1..=win {
                    let brute = (0..len).filter(|s| s % hop == 0 && s + win <= len).count();
                    assert_eq!(window_count(len, win, hop), brute);
                }
            }
        }
        for len in (0..=10_000).step_by(37) {
            assert_eq!(window_count(len, 200, 100), (0..len).filter(|s| s % 100 == 0 && s + 200 <= len).count());
        }
    }

    #[test]
    fn conditioned_windows_are_normalized() {
        let fs = 128.0;
        let samples: Vec<f64> = (0..(fs as usize * 30))
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * std::f64::consts::PI * 1.2 * t).sin() + 0.2 * t
            })
            .collect();
        let trace = RawTrace::new(samples, fs, "t").unwrap();
        let windows = condition_trace(&trace, &ConditioningConfig::default()).unwrap();
        assert_eq!(windows.len(), window_count(750, 200, 100));
        for w in &windows {
            assert_eq!(w.samples.len(), 200);
            let mean = w.samples.iter().sum::<f64>() / 200.0;
            let std = (w.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 200.0).sqrt();
            assert!(mean.abs() < 1e-9);
            assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn flatline_trace_gives_degenerate_windows() {
        let trace = RawTrace::new(vec![3.3; 25 * 20], 25.0, "flat").unwrap();
        let windows = condition_trace(&trace, &ConditioningConfig::default()).unwrap();
        assert!(!windows.is_empty());
        assert!(windows.iter().all(|w| w.degenerate));
    }

    #[test]
    fn raw_trace_validation() {
        assert!(RawTrace::new(vec![], 25.0, "x").is_err());
        assert!(RawTrace::new(vec![1.0], 0.0, "x").is_err());
        assert!(RawTrace::new(vec![f64::NAN], 25.0, "x").is_err());
    }

    proptest! {
        #[test]
        fn zscore_idempotent(v in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let (once, flat) = zscore(&v);
            let (twice, _) = zscore(&once);
            if !flat {
                for (a, b) in once.iter().zip(&twice) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
