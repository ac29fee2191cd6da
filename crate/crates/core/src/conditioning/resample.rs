//! Rational polyphase resampling with a Kaiser-windowed sinc kernel.

use crate::error::{param_err, Result};

/// Taps per polyphase branch.
pub const TAPS_PER_PHASE: usize = 64;
/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 8.6;
/// Largest denominator accepted when reducing the rate ratio.
pub const MAX_DENOMINATOR: u64 = 1024;
/// Anti-aliasing cutoff as a fraction of the lower Nyquist frequency.
pub const CUTOFF_FRACTION: f64 = 0.9;

/// Best rational approximation `num/den` of `x` with `den <= max_den`
/// (continued-fraction convergents plus the final semiconvergent).
pub fn limit_denominator(x: f64, max_den: u64) -> (u64, u64) {
    assert!(x > 0.0 && x.is_finite() && max_den >= 1);
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut r = x;
    loop {
        let a = r.floor();
        let a_int = a as u64;
        let q2 = q0 + a_int * q1;
        if q2 > max_den {
            break;
        }
        let p2 = p0 + a_int * p1;
        (p0, q0, p1, q1) = (p1, q1, p2, q2);
        let frac = r - a;
        if frac < 1e-9 {
            return (p1, q1);
        }
        r = 1.0 / frac;
    }
    let k = (max_den - q0) / q1;
    let (sp, sq) = (p0 + k * p1, q0 + k * q1);
    let semi_err = (sp as f64 / sq as f64 - x).abs();
    let conv_err = (p1 as f64 / q1 as f64 - x).abs();
    if semi_err < conv_err {
        (sp, sq)
    } else {
        (p1, q1)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half_sq = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= half_sq / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase resampler for the rational factor `up / down`.
#[derive(Debug, Clone)]
pub struct Resampler {
    pub up: usize,
    pub down: usize,
    bank: Vec<[f64; TAPS_PER_PHASE]>,
}

impl Resampler {
    pub fn new(fs_in: f64, fs_out: f64) -> Result<Self> {
        if !(fs_in.is_finite() && fs_in > 0.0 && fs_out.is_finite() && fs_out > 0.0) {
            return param_err(format!("sampling rates must be positive: {fs_in} -> {fs_out}"));
        }
        let (up, down) = limit_denominator(fs_out / fs_in, MAX_DENOMINATOR);
        let (up, down) = (up as usize, down as usize);
        if up == 0 {
            return param_err(format!("rate ratio {fs_out}/{fs_in} is below 1/{MAX_DENOMINATOR}"));
        }

        // cutoff in cycles per input sample
        let cutoff = fs_in.min(fs_out) / 2.0 * CUTOFF_FRACTION / fs_in;
        let half = (TAPS_PER_PHASE / 2) as f64;
        let i0_beta = bessel_i0(KAISER_BETA);
        let kernel = |tau: f64| {
            let r = tau / half;
            if r.abs() > 1.0 {
                return 0.0;
            }
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
            2.0 * cutoff * sinc(2.0 * cutoff * tau) * window
        };

        let bank = (0..up)
            .map(|phase| {
                let frac = phase as f64 / up as f64;
                let mut taps = [0.0; TAPS_PER_PHASE];
                for (j, t) in taps.iter_mut().enumerate() {
                    *t = kernel(half - 1.0 - j as f64 + frac);
                }
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Ok(Self { up, down, bank })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        if self.up == self.down {
            return x.to_vec();
        }
        let n_out = self.output_len(x.len());
        let offset = TAPS_PER_PHASE as i64 / 2 - 1;
        (0..n_out)
            .map(|n| {
                let pos = n * self.down;
                let (base, phase) = ((pos / self.up) as i64, pos % self.up);
                let taps = &self.bank[phase];
                taps.iter()
                    .enumerate()
                    .filter_map(|(j, &h)| {
                        let k = base - offset + j as i64;
                        (k >= 0 && (k as usize) < x.len()).then(|| h * x[k as usize])
                    })
                    .sum()
            })
            .collect()
    }
}

/// Resamples `x` from `fs_in` to `fs_out`; output length is
/// `ceil(len * up / down)` for the reduced ratio `up/down`.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>> {
    let r = Resampler::new(fs_in, fs_out)?;
    if x.len() < 2 {
        return param_err(format!("resampling needs at least 2 samples, got {}", x.len()));
    }
    Ok(r.process(x))
}
