//! Butterworth band-pass design and zero-phase filtering with second-order sections.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

/// One second-order section, `a[0]` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[1], self.a[2]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    /// Steady-state transposed direct-form II state for a unit step input.
    fn step_state(&self) -> ([f64; 2], f64) {
        let gain = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        (
            [gain - self.b[0], self.b[2] - self.a[2] * gain],
            gain,
        )
    }
}

/// A band-pass filter realized as a cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub fs_hz: f64,
    pub sections: Vec<Biquad>,
}

impl FilterSpec {
    /// Complex frequency response at `f_hz`.
    pub fn response(&self, f_hz: f64) -> Complex64 {
        let w = 2.0 * std::f64::consts::PI * f_hz / self.fs_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn gain(&self, f_hz: f64) -> f64 {
        self.response(f_hz).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    /// Edge padding used by [`filtfilt`].
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.order + 1)
    }
}

/// Designs an order-`order` Butterworth band-pass (2·order poles) by the
/// analog prototype, low-pass to band-pass transform and a pre-warped bilinear
/// transform. Each section carries one zero at z = 1 and one at z = -1 and is
/// scaled to unit gain at the band center.
pub fn design_bandpass(low_hz: f64, high_hz: f64, order: usize, fs_hz: f64) -> Result<FilterSpec> {
    if !(fs_hz.is_finite() && fs_hz > 0.0) {
        return param_err(format!("sampling rate must be positive, got {fs_hz}"));
    }
    if order == 0 {
        return param_err("filter order must be at least 1");
    }
    let nyquist = fs_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return param_err(format!(
            "band edges must satisfy 0 < low < high < fs/2: low={low_hz}, high={high_hz}, fs/2={nyquist}"
        ));
    }

    let fs2 = 2.0 * fs_hz;
    let warp = |f: f64| fs2 * (std::f64::consts::PI * f / fs_hz).tan();
    let (w_lo, w_hi) = (warp(low_hz), warp(high_hz));
    let bw = w_hi - w_lo;
    let w0 = (w_lo * w_hi).sqrt();

    let n = order as f64;
    let mut digital = Vec::with_capacity(2 * order);
    for m in (0..order).map(|k| -(n - 1.0) + 2.0 * k as f64) {
        let proto = -Complex64::from_polar(1.0, std::f64::consts::PI * m / (2.0 * n));
        let scaled = proto * (bw / 2.0);
        let disc = (scaled * scaled - w0 * w0).sqrt();
        for s in [scaled + disc, scaled - disc] {
            digital.push((fs2 + s) / (fs2 - s));
        }
    }

    let tol = 1e-10;
    let mut upper: Vec<Complex64> = digital.iter().copied().filter(|p| p.im > tol).collect();
    let mut real: Vec<f64> = digital.iter().filter(|p| p.im.abs() <= tol).map(|p| p.re).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    real.sort_by(f64::total_cmp);
    if real.len() % 2 != 0 {
        return Err(Error::Parameter("unpaired real pole in band-pass design".into()));
    }

    let mut sections: Vec<Biquad> = upper
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    sections.extend(real.chunks(2).map(|pair| Biquad {
        b: [1.0, 0.0, -1.0],
        a: [1.0, -(pair[0] + pair[1]), pair[0] * pair[1]],
    }));

    let center = 2.0 * (w0 / fs2).atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    for section in &mut sections {
        let g = section.response(z_inv).norm();
        for b in &mut section.b {
            *b /= g;
        }
    }

    Ok(FilterSpec {
        low_hz,
        high_hz,
        order,
        fs_hz,
        sections,
    })
}

/// Runs the cascade over `x` in place, starting each section from its step
/// steady state scaled by the first input sample.
fn sosfilt_steady(sections: &[Biquad], x: &mut [f64]) {
    let Some(&first) = x.first() else {
        return;
    };
    let mut level = first;
    for s in sections {
        let (unit_state, gain) = s.step_state();
        let (mut s1, mut s2) = (unit_state[0] * level, unit_state[1] * level);
        for v in x.iter_mut() {
            let input = *v;
            let y = s.b[0] * input + s1;
            s1 = s.b[1] * input - s.a[1] * y + s2;
            s2 = s.b[2] * input - s.a[2] * y;
            *v = y;
        }
        level *= gain;
    }
}

fn forward_backward(sections: &[Biquad], x: &mut [f64]) {
    sosfilt_steady(sections, x);
    x.reverse();
    sosfilt_steady(sections, x);
    x.reverse();
}

/// Zero-phase filtering.
///
/// The input is extended at both ends by odd reflection of
/// [`FilterSpec::pad_len`] samples. The extended sequence is filtered
/// forward-then-backward and backward-then-forward and the two results are
/// averaged, which makes the operator exactly time-reversal symmetric. Both
/// passes start from steady-state section states, so a constant input maps to
/// (numerically) zero.
pub fn filtfilt(spec: &FilterSpec, x: &[f64]) -> Result<Vec<f64>> {
    let pad = spec.pad_len();
    if x.len() <= pad {
        return Err(Error::Length {
            needed: pad + 1,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return param_err("filter input contains non-finite samples");
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let mut fb = ext.clone();
    forward_backward(&spec.sections, &mut fb);

    let mut bf = ext;
    bf.reverse();
    forward_backward(&spec.sections, &mut bf);
    bf.reverse();

    Ok(fb[pad..pad + n]
        .iter()
        .zip(&bf[pad..pad + n])
        .map(|(a, b)| 0.5 * (a + b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Magnitude evaluated straight from the section polynomials.
    fn coeff_gain(spec: &FilterSpec, f: f64) -> f64 {
        let w = 2.0 * PI * f / spec.fs_hz;
        let mut g = 1.0;
        for s in &spec.sections {
            let eval = |c: &[f64; 3]| {
                let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
                let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
                (re * re + im * im).sqrt()
            };
            g *= eval(&s.b) / eval(&s.a);
        }
        g
    }

    fn bisect(spec: &FilterSpec, mut lo: f64, mut hi: f64) -> f64 {
        let target = 1.0 / 2f64.sqrt();
        let rising = coeff_gain(spec, lo) < coeff_gain(spec, hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let below = coeff_gain(spec, mid) < target;
            if below == rising {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn passband_and_dc_gain_at_25hz() {
        let spec = design_bandpass(0.5, 8.0, 3, 25.0).unwrap();
        assert_eq!(spec.sections.len(), 3);
        assert_eq!(spec.poles().len(), 6);
        let g4 = coeff_gain(&spec, 4.0);
        assert!((0.98..=1.0).contains(&g4), "gain at 4 Hz = {g4}");
        assert!(coeff_gain(&spec, 0.0) <= 1e-4);
        assert!((spec.gain(4.0) - g4).abs() < 1e-12);
    }

    #[test]
    fn half_power_points_at_128hz() {
        let spec = design_bandpass(0.5, 8.0, 3, 128.0).unwrap();
        let center = 2.0;
        let lo = bisect(&spec, 0.01, center);
        let hi = bisect(&spec, center, 60.0);
        assert!((lo - 0.5).abs() <= 0.05 * 0.5, "lower -3 dB at {lo}");
        assert!((hi - 8.0).abs() <= 0.05 * 8.0, "upper -3 dB at {hi}");
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(matches!(design_bandpass(8.0, 0.5, 3, 25.0), Err(Error::Parameter(_))));
        assert!(design_bandpass(0.0, 8.0, 3, 25.0).is_err());
        assert!(design_bandpass(0.5, 12.5, 3, 25.0).is_err());
        assert!(design_bandpass(0.5, 8.0, 0, 25.0).is_err());
    }

    #[test]
    fn stable_at_common_rates() {
        for fs in [25.0, 32.0, 64.0, 128.0] {
            let spec = design_bandpass(0.5, 8.0, 3, fs).unwrap();
            for p in spec.poles() {
                assert!(p.norm() < 1.0, "pole {p} at fs {fs}");
            }
        }
    }

    #[test]
    fn constant_input_is_removed() {
        let spec = design_bandpass(0.5, 8.0, 3, 25.0).unwrap();
        let y = filtfilt(&spec, &vec![1.0; 200]).unwrap();
        assert_eq!(y.len(), 200);
        assert!(y.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn in_band_sine_keeps_amplitude_and_phase() {
        let spec = design_bandpass(0.5, 8.0, 3, 25.0).unwrap();
        let x: Vec<f64> = (0..500).map(|i| (2.0 * PI * 4.0 * i as f64 / 25.0).sin()).collect();
        let y = filtfilt(&spec, &x).unwrap();
        let mid = &y[100..400];
        let amp = mid.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // forward-backward magnitude is |H|^2
        let expected = spec.gain(4.0).powi(2);
        assert!((amp - 1.0).abs() < 0.04, "amplitude {amp}");
        assert!((amp - expected).abs() < 0.01);
        let lag = (-5i64..=5)
            .max_by(|&a, &b| xcorr(&x, &y, a).total_cmp(&xcorr(&x, &y, b)))
            .unwrap();
        assert_eq!(lag, 0);
    }

    fn xcorr(x: &[f64], y: &[f64], lag: i64) -> f64 {
        (100..400)
            .map(|i| x[i] * y[(i as i64 + lag) as usize])
            .sum()
    }

    #[test]
    fn too_short_input_is_a_length_error() {
        let spec = design_bandpass(0.5, 8.0, 3, 25.0).unwrap();
        assert!(matches!(
            filtfilt(&spec, &[1.0; 5]),
            Err(Error::Length { needed: 22, got: 5 })
        ));
    }

    #[test]
    fn time_reversal_symmetry() {
        use rand::{Rng, SeedableRng};
        let spec = design_bandpass(0.5, 8.0, 3, 25.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = filtfilt(&spec, &x).unwrap();
        let mut xr = x.clone();
        xr.reverse();
        let mut yr = filtfilt(&spec, &xr).unwrap();
        yr.reverse();
        for (a, b) in y.iter().zip(&yr) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
