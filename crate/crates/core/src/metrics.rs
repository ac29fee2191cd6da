//! Clustering-validity scores and the template-matching baseline.
//!
//! The validity functions treat every distinct label value as a cluster;
//! noise handling is decided by the caller through [`apply_noise_policy`].

use serde::{Deserialize, Serialize};

use crate::clustering::NOISE;
use crate::error::{param_err, Error, Result};
use crate::matrix::{euclidean, Matrix};

/// Reported in place of an infinite Calinski-Harabasz score.
pub const CH_CAP: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    NoiseAsCluster,
    NoiseExcluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub n_points: usize,
    pub n_clusters: usize,
    pub noise_policy: Option<NoisePolicy>,
}

/// Maps labels to dense cluster indices `0..k` in order of first appearance.
fn dense_labels(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut seen: Vec<i64> = Vec::new();
    let dense = labels
        .iter()
        .map(|l| match seen.iter().position(|s| s == l) {
            Some(p) => p,
            None => {
                seen.push(*l);
                seen.len() - 1
            }
        })
        .collect();
    (dense, seen.len())
}

fn check(points: &Matrix, labels: &[i64]) -> Result<(Vec<usize>, usize)> {
    if points.rows() != labels.len() {
        return param_err(format!("{} points but {} labels", points.rows(), labels.len()));
    }
    let (dense, k) = dense_labels(labels);
    if k < 2 {
        return Err(Error::UndefinedMetric(format!("{k} cluster(s); at least 2 are needed")));
    }
    Ok((dense, k))
}

fn centroids(points: &Matrix, dense: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; points.cols()]; k];
    let mut counts = vec![0usize; k];
    for (&c, row) in dense.iter().zip(points.iter_rows()) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, &m) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= m as f64);
    }
    (sums, counts)
}

/// Mean silhouette; members of singleton clusters score 0.
pub fn silhouette(points: &Matrix, labels: &[i64]) -> Result<f64> {
    let (dense, k) = check(points, labels)?;
    let n = points.rows();
    let mut counts = vec![0usize; k];
    dense.iter().for_each(|&c| counts[c] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            sums[dense[j]] += euclidean(points.row(i), points.row(j));
        }
        let own = dense[i];
        if counts[own] == 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

/// Davies-Bouldin index with mean distance to centroid as dispersion.
pub fn davies_bouldin(points: &Matrix, labels: &[i64]) -> Result<f64> {
    let (dense, k) = check(points, labels)?;
    let (cent, counts) = centroids(points, &dense, k);
    let mut spread = vec![0.0; k];
    for (&c, row) in dense.iter().zip(points.iter_rows()) {
        spread[c] += euclidean(row, &cent[c]);
    }
    for (s, &m) in spread.iter_mut().zip(&counts) {
        *s /= m as f64;
    }
    let mut total = 0.0;
    for a in 0..k {
        let worst = (0..k)
            .filter(|&b| b != a)
            .map(|b| {
                let num = spread[a] + spread[b];
                let sep = euclidean(&cent[a], &cent[b]);
                if num == 0.0 {
                    0.0
                } else if sep == 0.0 {
                    f64::INFINITY
                } else {
                    num / sep
                }
            })
            .fold(0.0, f64::max);
        total += worst;
    }
    Ok(total / k as f64)
}

/// Calinski-Harabasz variance ratio; [`CH_CAP`] when within-cluster
/// dispersion is exactly zero.
pub fn calinski_harabasz(points: &Matrix, labels: &[i64]) -> Result<f64> {
    let (dense, k) = check(points, labels)?;
    let n = points.rows();
    if n == k {
        return Err(Error::UndefinedMetric("every point is its own cluster".into()));
    }
    let (cent, counts) = centroids(points, &dense, k);
    let mut grand = vec![0.0; points.cols()];
    for row in points.iter_rows() {
        for (g, v) in grand.iter_mut().zip(row) {
            *g += v;
        }
    }
    grand.iter_mut().for_each(|g| *g /= n as f64);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let between: f64 = (0..k).map(|c| counts[c] as f64 * sq(&cent[c], &grand)).sum();
    let within: f64 = dense.iter().zip(points.iter_rows()).map(|(&c, row)| sq(row, &cent[c])).sum();
    if within == 0.0 {
        return Ok(CH_CAP);
    }
    Ok((between / (k - 1) as f64) / (within / (n - k) as f64))
}

/// Applies a noise policy to HDBSCAN labels, returning the retained points
/// and their labels.
pub fn apply_noise_policy(points: &Matrix, labels: &[i64], policy: NoisePolicy) -> (Matrix, Vec<i64>) {
    match policy {
        NoisePolicy::NoiseAsCluster => (points.clone(), labels.to_vec()),
        NoisePolicy::NoiseExcluded => {
            let keep: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != NOISE).collect();
            (points.select_rows(&keep), keep.iter().map(|&i| labels[i]).collect())
        }
    }
}

/// All three scores for one labelling.
pub fn validity(points: &Matrix, labels: &[i64], noise_policy: Option<NoisePolicy>) -> Result<ValidityReport> {
    let (p, l) = match noise_policy {
        Some(policy) => apply_noise_policy(points, labels, policy),
        None => (points.clone(), labels.to_vec()),
    };
    Ok(ValidityReport {
        silhouette: silhouette(&p, &l)?,
        davies_bouldin: davies_bouldin(&p, &l)?,
        calinski_harabasz: calinski_harabasz(&p, &l)?,
        n_points: p.rows(),
        n_clusters: dense_labels(&l).1,
        noise_policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Acceptance fraction; `None` matches the pipeline's own acceptance rate.
    pub q: Option<f64>,
    pub min_peak_distance_s: f64,
    /// Beat snippet length in samples; `None` uses the median inter-beat interval.
    pub template_len: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            q: None,
            min_peak_distance_s: 0.33,
            template_len: None,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(q) = self.q {
            if !(q > 0.0 && q < 1.0) {
                return param_err(format!("q = {q} must lie strictly between 0 and 1"));
            }
        }
        if !(self.min_peak_distance_s > 0.0) {
            return param_err("min_peak_distance_s must be positive");
        }
        if self.template_len.is_some_and(|l| l < 2) {
            return param_err("template_len must be at least 2");
        }
        Ok(())
    }
}

/// Local maxima (strictly above the left neighbour, not below the right),
/// thinned greedily from the tallest so that no two are closer than
/// `min_distance` samples. Returned in index order.
pub fn detect_peaks(x: &[f64], min_distance: f64) -> Vec<usize> {
    let mut candidates: Vec<usize> = (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1])
        .collect();
    candidates.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| (k.abs_diff(c) as f64) >= min_distance) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median Pearson correlation of each beat snippet with the mean beat,
/// clipped to [0, 1]. Fewer than two complete beats score 0.
pub fn template_sqi(w: &[f64], fs_hz: f64, cfg: &BaselineConfig) -> f64 {
    let peaks = detect_peaks(w, cfg.min_peak_distance_s * fs_hz);
    if peaks.len() < 2 {
        return 0.0;
    }
    let len = cfg.template_len.unwrap_or_else(|| {
        let mut ibi: Vec<f64> = peaks.windows(2).map(|p| (p[1] - p[0]) as f64).collect();
        median(&mut ibi).round() as usize
    });
    if len < 2 {
        return 0.0;
    }
    let half = len / 2;
    let snippets: Vec<&[f64]> = peaks
        .iter()
        .filter(|&&p| p >= half && p - half + len <= w.len())
        .map(|&p| &w[p - half..p - half + len])
        .collect();
    if snippets.len() < 2 {
        return 0.0;
    }
    let mut template = vec![0.0; len];
    for s in &snippets {
        for (t, v) in template.iter_mut().zip(s.iter()) {
            *t += v;
        }
    }
    template.iter_mut().for_each(|t| *t /= snippets.len() as f64);
    let mut scores: Vec<f64> = snippets.iter().map(|s| pearson(s, &template).clamp(0.0, 1.0)).collect();
    median(&mut scores)
}

/// Number of windows accepted at prevalence `q`: ⌈q·n⌉, with products that
/// are integers up to rounding error taken as exact.
pub fn accepted_count(q: f64, n: usize) -> usize {
    let x = q * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Accepts the ⌈q·n⌉ highest scores; ties go to the lower index.
pub fn prevalence_match(scores: &[f64], q: f64) -> Result<Vec<u8>> {
    if !(q > 0.0 && q < 1.0) {
        return param_err(format!("q = {q} must lie strictly between 0 and 1"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![0u8; scores.len()];
    for &i in order.iter().take(accepted_count(q, scores.len())) {
        out[i] = 1;
    }
    Ok(out)
}

pub fn agreement(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return param_err(format!("length mismatch: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return param_err("agreement of empty vectors");
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64)
}
