//! Synthetic PPG with controlled artifacts, used as labelled test data.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::conditioning::{condition_trace, ConditioningConfig, RawTrace, Window};
use crate::error::{param_err, Result};
use crate::rng::{substream, StreamRng};

const DICROTIC_RATIO: f64 = 0.4;
const DICROTIC_OFFSET: f64 = 0.25;
const SYSTOLIC_WIDTH: f64 = 0.07;
const DICROTIC_WIDTH: f64 = 0.08;
const DC_LEVEL: f64 = 2.0;
/// Large enough that the upper part of the wander band survives filtering.
const WANDER_AMPLITUDE: f64 = 60.0;
/// Raw sampling rate of corpus traces before conditioning.
pub const CORPUS_FS_HZ: f64 = 64.0;
/// Corpus traces span two windows; the middle window is kept.
pub const CORPUS_TRACE_S: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    None,
    MotionSpike,
    BaselineWander,
    Saturation,
    Dropout,
    WhiteNoise,
}

impl ArtifactKind {
    pub const INJECTED: [Self; 5] = [
        Self::MotionSpike,
        Self::BaselineWander,
        Self::Saturation,
        Self::Dropout,
        Self::WhiteNoise,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    pub hrv_pct: f64,
    pub duration_s: f64,
    pub fs_hz: f64,
    pub artifact: ArtifactKind,
    pub severity: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn clean(hr_bpm: f64, duration_s: f64, fs_hz: f64, seed: u64) -> Self {
        Self {
            hr_bpm,
            hrv_pct: 3.0,
            duration_s,
            fs_hz,
            artifact: ArtifactKind::None,
            severity: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(40.0..=180.0).contains(&self.hr_bpm) {
            return param_err(format!("hr_bpm {} outside [40, 180]", self.hr_bpm));
        }
        if !(0.0..=20.0).contains(&self.hrv_pct) {
            return param_err(format!("hrv_pct {} outside [0, 20]", self.hrv_pct));
        }
        if !(self.duration_s > 0.0) || !(self.fs_hz > 0.0) || !self.duration_s.is_finite() || !self.fs_hz.is_finite() {
            return param_err("duration_s and fs_hz must be positive");
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return param_err(format!("severity {} outside [0, 1]", self.severity));
        }
        Ok(())
    }
}

fn gaussian(t: f64, centre: f64, width: f64) -> f64 {
    let z = (t - centre) / width;
    (-0.5 * z * z).exp()
}

fn pulse_train(spec: &SynthSpec, n: usize, rng: &mut StreamRng) -> Vec<f64> {
    let period = 60.0 / spec.hr_bpm;
    let jitter = Normal::new(0.0, spec.hrv_pct / 100.0).expect("finite");
    let mut onsets = Vec::new();
    let mut t = -rng.random_range(0.0..period) - period;
    while t < spec.duration_s + period {
        let ibi = period * (1.0 + jitter.sample(rng)).max(0.5);
        onsets.push((t, ibi));
        t += ibi;
    }
    (0..n)
        .map(|i| {
            let time = i as f64 / spec.fs_hz;
            let pulse: f64 = onsets
                .iter()
                .filter(|(o, ibi)| (time - o).abs() < 2.0 * ibi)
                .map(|&(o, ibi)| {
                    gaussian(time, o, SYSTOLIC_WIDTH * ibi)
                        + DICROTIC_RATIO * gaussian(time, o + DICROTIC_OFFSET * ibi, DICROTIC_WIDTH * ibi)
                })
                .sum();
            DC_LEVEL + pulse
        })
        .collect()
}

/// Splits `n` samples into `parts` equal segments and picks one span per
/// segment whose length is `frac_range` of the segment.
fn spans(n: usize, parts: usize, frac_range: (f64, f64), rng: &mut StreamRng) -> Vec<(usize, usize)> {
    let seg = n / parts.max(1);
    (0..parts)
        .filter(|_| seg > 0)
        .map(|p| {
            let len = ((rng.random_range(frac_range.0..=frac_range.1) * seg as f64) as usize).clamp(1, seg);
            let start = p * seg + rng.random_range(0..=seg - len);
            (start, start + len)
        })
        .collect()
}

fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

fn inject(x: &mut [f64], spec: &SynthSpec, rng: &mut StreamRng) {
    let s = spec.severity;
    let n = x.len();
    let fs = spec.fs_hz;
    let normal = Normal::new(0.0, 1.0).expect("finite");
    match spec.artifact {
        ArtifactKind::None => {}
        ArtifactKind::MotionSpike => {
            // Tapered random-walk bursts, one per ~2.5 s segment.
            let parts = ((s * spec.duration_s / 2.5).round() as usize).max(1);
            let step = 3.0 * s / fs.sqrt();
            for (a, b) in spans(n, parts, (0.6, 1.0), rng) {
                let len = b - a;
                let mut walk = 0.0;
                for (k, v) in x[a..b].iter_mut().enumerate() {
                    walk += step * normal.sample(rng);
                    let taper = (std::f64::consts::PI * k as f64 / len as f64).sin();
                    *v += 4.0 * s * taper * (walk + normal.sample(rng) * 0.5 * s);
                }
            }
        }
        ArtifactKind::BaselineWander => {
            let f = rng.random_range(0.1..=0.4);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for (i, v) in x.iter_mut().enumerate() {
                *v += WANDER_AMPLITUDE * s * (std::f64::consts::TAU * f * i as f64 / fs + phase).sin();
            }
        }
        ArtifactKind::Saturation => {
            // A slow drift pushes the signal into both rails before clipping.
            let f = rng.random_range(0.15..=0.35);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            for (i, v) in x.iter_mut().enumerate() {
                *v += 3.0 * s * (std::f64::consts::TAU * f * i as f64 / fs + phase).sin();
            }
            let (lo, hi) = (quantile(x, 0.45 * s), quantile(x, 1.0 - 0.45 * s));
            x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        }
        ArtifactKind::Dropout => {
            let parts = ((spec.duration_s / 2.0).round() as usize).max(1);
            for (a, b) in spans(n, parts, (0.8 * s, s), rng) {
                x[a..b].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        ArtifactKind::WhiteNoise => {
            x.iter_mut().for_each(|v| *v += 4.0 * s * normal.sample(rng));
        }
    }
}

/// A two-Gaussian pulse train with interval jitter plus the requested artifact.
pub fn synth_ppg(spec: &SynthSpec) -> Result<RawTrace> {
    spec.validate()?;
    let n = (spec.duration_s * spec.fs_hz).round() as usize;
    let mut x = pulse_train(spec, n, &mut substream(spec.seed, &[0]));
    if spec.severity > 0.0 && n > 0 {
        inject(&mut x, spec, &mut substream(spec.seed, &[1]));
    }
    Ok(RawTrace {
        samples: x,
        fs_hz: spec.fs_hz,
        source_id: format!("synth-{}", spec.seed),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub windows: Vec<Window>,
    /// 1 for clean, 0 for poor.
    pub truth: Vec<u8>,
    pub specs: Vec<SynthSpec>,
}

fn corpus_spec(clean: bool, seed: u64, index: u64) -> SynthSpec {
    let mut rng = substream(seed, &[index]);
    let hr_bpm = rng.random_range(50.0..=100.0);
    let (artifact, severity) = if clean {
        if rng.random_bool(0.5) {
            (ArtifactKind::None, 0.0)
        } else {
            (ArtifactKind::INJECTED[rng.random_range(0..5)], rng.random_range(0.0..0.1))
        }
    } else {
        (ArtifactKind::INJECTED[rng.random_range(0..5)], rng.random_range(0.6..=1.0))
    };
    SynthSpec {
        hr_bpm,
        hrv_pct: 3.0,
        duration_s: CORPUS_TRACE_S,
        fs_hz: CORPUS_FS_HZ,
        artifact,
        severity,
        seed: crate::rng::derive_key(seed, &[index, 1]),
    }
}

/// `n_clean` clean windows followed by `n_poor` poor ones, each the middle
/// window of a conditioned 16 s trace.
pub fn make_corpus(n_clean: usize, n_poor: usize, seed: u64, cfg: &ConditioningConfig) -> Result<SynthCorpus> {
    if n_clean + n_poor == 0 {
        return param_err("corpus must contain at least one window");
    }
    let mut out = SynthCorpus { windows: Vec::new(), truth: Vec::new(), specs: Vec::new() };
    for i in 0..n_clean + n_poor {
        let clean = i < n_clean;
        let spec = corpus_spec(clean, seed, i as u64);
        let mut trace = synth_ppg(&spec)?;
        trace.source_id = format!("synth-{i:06}");
        let windows = condition_trace(&trace, cfg)?;
        let mut w = windows[windows.len() / 2].clone();
        w.source_id = trace.source_id;
        out.windows.push(w);
        out.truth.push(u8::from(clean));
        out.specs.push(spec);
    }
    Ok(out)
}
