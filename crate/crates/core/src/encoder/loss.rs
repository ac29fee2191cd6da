//! Normalized-temperature cross-entropy over paired views.

use crate::error::{param_err, Result};
use crate::matrix::Matrix;

fn check(za: &Matrix<f64>, zb: &Matrix<f64>, tau: f64) -> Result<()> {
    if za.rows() != zb.rows() || za.cols() != zb.cols() {
        return param_err("view matrices differ in shape");
    }
    if za.rows() < 2 {
        return param_err(format!("NT-Xent needs at least 2 pairs for negatives, got {}", za.rows()));
    }
    if !(tau > 0.0) {
        return param_err(format!("temperature must be positive, got {tau}"));
    }
    Ok(())
}

struct Logits {
    n2: usize,
    sim: Vec<f64>,
}

impl Logits {
    fn new<'a>(za: &'a Matrix<f64>, zb: &'a Matrix<f64>, tau: f64) -> (Self, Vec<&'a [f64]>) {
        let rows: Vec<&[f64]> = za.iter_rows().chain(zb.iter_rows()).collect();
        let n2 = rows.len();
        let mut sim = vec![0.0; n2 * n2];
        for i in 0..n2 {
            for j in i..n2 {
                let s = rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
                sim[i * n2 + j] = s;
                sim[j * n2 + i] = s;
            }
        }
        (Self { n2, sim }, rows)
    }

    fn positive(&self, i: usize) -> usize {
        let n = self.n2 / 2;
        if i < n {
            i + n
        } else {
            i - n
        }
    }

    /// Per-anchor loss and the softmax row over non-self candidates.
    fn anchor(&self, i: usize) -> (f64, Vec<f64>) {
        let row = &self.sim[i * self.n2..][..self.n2];
        let max = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &s)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut soft: Vec<f64> = row
            .iter()
            .enumerate()
            .map(|(k, &s)| if k == i { 0.0 } else { (s - max).exp() })
            .collect();
        let total: f64 = soft.iter().sum();
        soft.iter_mut().for_each(|v| *v /= total);
        let loss = (max - row[self.positive(i)]) + total.ln();
        (loss, soft)
    }
}

/// Mean over all 2N anchors of `-log softmax(sim/tau)` at the paired view,
/// self-similarity excluded. Rows are expected to be unit length.
pub fn nt_xent(za: &Matrix<f64>, zb: &Matrix<f64>, tau: f64) -> Result<f64> {
    check(za, zb, tau)?;
    let (logits, _) = Logits::new(za, zb, tau);
    // running mean is exact when every anchor has the same loss
    let mut mean = 0.0;
    for i in 0..logits.n2 {
        let (l, _) = logits.anchor(i);
        mean += (l - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Loss and its gradient with respect to both view matrices.
pub fn nt_xent_grad(za: &Matrix<f64>, zb: &Matrix<f64>, tau: f64) -> Result<(f64, Matrix<f64>, Matrix<f64>)> {
    check(za, zb, tau)?;
    let (logits, rows) = Logits::new(za, zb, tau);
    let n2 = logits.n2;
    let d = za.cols();
    let mut coef = vec![0.0; n2 * n2];
    let mut mean = 0.0;
    for i in 0..n2 {
        let (l, soft) = logits.anchor(i);
        mean += (l - mean) / (i + 1) as f64;
        let p = logits.positive(i);
        for k in 0..n2 {
            let g = (soft[k] - if k == p { 1.0 } else { 0.0 }) / n2 as f64;
            coef[i * n2 + k] += g;
            coef[k * n2 + i] += g;
        }
    }
    let mut grad = vec![0.0; n2 * d];
    for i in 0..n2 {
        let out = &mut grad[i * d..][..d];
        for (k, row) in rows.iter().enumerate() {
            let c = coef[i * n2 + k] / tau;
            if c != 0.0 {
                out.iter_mut().zip(*row).for_each(|(o, v)| *o += c * v);
            }
        }
    }
    let n = n2 / 2;
    let gb = grad.split_off(n * d);
    Ok((mean, Matrix::from_vec(n, d, grad)?, Matrix::from_vec(n, d, gb)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix<f64> {
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            let r = m.row_mut(i);
            r.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter_mut().for_each(|v| *v /= norm);
        }
        m
    }

    /// Textbook form: -log(exp(s_ip) / sum_{k != i} exp(s_ik)).
    fn direct(za: &Matrix<f64>, zb: &Matrix<f64>, tau: f64) -> f64 {
        let rows: Vec<&[f64]> = za.iter_rows().chain(zb.iter_rows()).collect();
        let n2 = rows.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut total = 0.0;
        for i in 0..n2 {
            let p = (i + n2 / 2) % n2;
            let denom: f64 = (0..n2).filter(|&k| k != i).map(|k| (dot(rows[i], rows[k]) / tau).exp()).sum();
            total += -((dot(rows[i], rows[p]) / tau).exp() / denom).ln();
        }
        total / n2 as f64
    }

    #[test]
    fn collapse_is_log_of_candidates() {
        for n in 2..=8 {
            let row = vec![0.6, 0.8];
            let za = Matrix::from_rows(&vec![row.clone(); n]).unwrap();
            let loss = nt_xent(&za, &za, 0.1).unwrap();
            assert_eq!(loss, ((2 * n - 1) as f64).ln());
        }
        let za = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        assert!((nt_xent(&za, &za, 0.1).unwrap() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_pairs_closed_form() {
        let za = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let loss = nt_xent(&za, &za, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((loss - (-(e / (e + 2.0)).ln())).abs() < 1e-12);
        assert!((loss - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.random_range(2..=8);
            let d = rng.random_range(1..=16);
            let tau = rng.random_range(0.05..2.0);
            let za = unit_rows(&mut rng, n, d);
            let zb = unit_rows(&mut rng, n, d);
            let loss = nt_xent(&za, &zb, tau).unwrap();
            assert!((loss - direct(&za, &zb, tau)).abs() < 1e-10);
            assert!(loss >= 0.0);
        }
    }

    #[test]
    fn rotation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let za = unit_rows(&mut rng, 4, 2);
        let zb = unit_rows(&mut rng, 4, 2);
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rot = |m: &Matrix<f64>| {
            let rows: Vec<Vec<f64>> = m.iter_rows().map(|r| vec![c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect();
            Matrix::from_rows(&rows).unwrap()
        };
        let a = nt_xent(&za, &zb, 0.1).unwrap();
        let b = nt_xent(&rot(&za), &rot(&zb), 0.1).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let za = unit_rows(&mut rng, 3, 4);
        let zb = unit_rows(&mut rng, 3, 4);
        let (loss, ga, gb) = nt_xent_grad(&za, &zb, 0.5).unwrap();
        assert!((loss - nt_xent(&za, &zb, 0.5).unwrap()).abs() < 1e-15);
        let h = 1e-6;
        for (which, g) in [(0, &ga), (1, &gb)] {
            for i in 0..3 {
                for j in 0..4 {
                    let bump = |delta: f64| {
                        let (mut a, mut b) = (za.clone(), zb.clone());
                        let m = if which == 0 { &mut a } else { &mut b };
                        m.row_mut(i)[j] += delta;
                        nt_xent(&a, &b, 0.5).unwrap()
                    };
                    let num = (bump(h) - bump(-h)) / (2.0 * h);
                    assert!((num - g.row(i)[j]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn needs_two_pairs() {
        let za = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert!(nt_xent(&za, &za, 0.1).is_err());
    }
}
