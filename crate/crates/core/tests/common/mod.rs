//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use ppg_gate_core::clustering::mutual_reachability;
use ppg_gate_core::matrix::{euclidean, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Finite H0 pairs by sweeping thresholds and tracking runs of indices whose
/// value is at or below the threshold. When runs merge, every run except the
/// one holding the earliest (value, index) minimum dies.
pub fn sweep_h0(seq: &[f64]) -> Vec<(f64, f64)> {
    let mut levels = seq.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut previous: Vec<(usize, usize)> = Vec::new();
    let mut bars = Vec::new();
    let argmin = |lo: usize, hi: usize| (lo..=hi).min_by(|&a, &b| seq[a].total_cmp(&seq[b]).then(a.cmp(&b))).unwrap();
    for &t in &levels {
        let mut runs = Vec::new();
        let mut i = 0;
        while i < seq.len() {
            if seq[i] <= t {
                let start = i;
                while i + 1 < seq.len() && seq[i + 1] <= t {
                    i += 1;
                }
                runs.push((start, i));
            }
            i += 1;
        }
        for &(lo, hi) in &runs {
            let inside: Vec<&(usize, usize)> = previous.iter().filter(|r| r.0 >= lo && r.1 <= hi).collect();
            if inside.len() > 1 {
                let survivor = argmin(lo, hi);
                for r in inside {
                    let m = argmin(r.0, r.1);
                    if m != survivor && seq[m] < t {
                        bars.push((seq[m], t));
                    }
                }
            }
        }
        previous = runs;
    }
    bars.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bars
}

/// H1 pairs from a plain left-to-right reduction of the full boundary matrix
/// of the Rips complex up to dimension 2.
pub fn naive_h1(points: &Matrix) -> Vec<(f64, f64)> {
    let m = points.rows();
    let d = |i: usize, j: usize| euclidean(points.row(i), points.row(j));
    let mut simplices: Vec<(f64, usize, Vec<usize>)> = Vec::new();
    for i in 0..m {
        simplices.push((0.0, 0, vec![i]));
    }
    for i in 0..m {
        for j in i + 1..m {
            simplices.push((d(i, j), 1, vec![i, j]));
        }
    }
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                simplices.push((d(i, j).max(d(i, k)).max(d(j, k)), 2, vec![i, j, k]));
            }
        }
    }
    simplices.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let position = |v: &[usize]| simplices.iter().position(|s| s.2 == v).unwrap();
    let mut columns: Vec<Vec<usize>> = simplices
        .iter()
        .map(|s| {
            if s.1 == 0 {
                return Vec::new();
            }
            let mut faces: Vec<usize> = (0..s.2.len())
                .map(|skip| {
                    let face: Vec<usize> = s.2.iter().enumerate().filter(|&(p, _)| p != skip).map(|(_, &v)| v).collect();
                    position(&face)
                })
                .collect();
            faces.sort_unstable();
            faces
        })
        .collect();
    let n = columns.len();
    let mut low_owner = vec![usize::MAX; n];
    for j in 0..n {
        while let Some(&low) = columns[j].last() {
            let owner = low_owner[low];
            if owner == usize::MAX {
                low_owner[low] = j;
                break;
            }
            let other = columns[owner].clone();
            let mut merged: Vec<usize> = columns[j].iter().chain(&other).copied().collect();
            merged.sort_unstable();
            let mut out = Vec::new();
            for v in merged {
                if out.last() == Some(&v) {
                    out.pop();
                } else {
                    out.push(v);
                }
            }
            columns[j] = out;
        }
    }
    let mut bars = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        if simplices[j].1 == 2 {
            if let Some(&low) = col.last() {
                let (birth, death) = (simplices[low].0, simplices[j].0);
                if death > birth {
                    bars.push((birth, death));
                }
            }
        }
    }
    bars.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bars
}

pub fn blobs(centers: &[(Vec<f64>, f64, usize)], seed: u64) -> (Matrix, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (label, (center, sd, count)) in centers.iter().enumerate() {
        let noise = Normal::new(0.0, *sd).unwrap();
        for _ in 0..*count {
            rows.push(center.iter().map(|c| c + noise.sample(&mut rng)).collect::<Vec<f64>>());
            truth.push(label);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), truth)
}

/// Fraction of points whose label matches the truth under the best
/// one-to-one mapping of two clusters.
pub fn two_cluster_accuracy(labels: &[i64], truth: &[usize]) -> f64 {
    let hits = |map: [i64; 2]| labels.iter().zip(truth).filter(|(&l, &t)| l == map[t]).count();
    hits([0, 1]).max(hits([1, 0])) as f64 / labels.len() as f64
}

/// Kruskal over the explicit mutual-reachability matrix.
pub fn brute_mst_weight(points: &Matrix, core: &[f64]) -> f64 {
    let n = points.rows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.push((mutual_reachability(euclidean(points.row(i), points.row(j)), core[i], core[j]), i, j));
        }
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut comp: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for (w, i, j) in edges {
        let (ci, cj) = (comp[i], comp[j]);
        if ci != cj {
            total += w;
            comp.iter_mut().filter(|c| **c == cj).for_each(|c| *c = ci);
        }
    }
    total
}

/// Mean silhouette from the definition: a(i) is the mean distance to the
/// other members of i's cluster, b(i) the smallest mean distance to another
/// cluster; singletons score 0.
pub fn silhouette_direct(points: &Matrix, labels: &[i64]) -> f64 {
    let n = points.rows();
    let d = |i: usize, j: usize| euclidean(points.row(i), points.row(j));
    let mut names: Vec<i64> = labels.to_vec();
    names.sort_unstable();
    names.dedup();
    let mut total = 0.0;
    for i in 0..n {
        let own: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if own.is_empty() {
            continue;
        }
        let a = own.iter().map(|&j| d(i, j)).sum::<f64>() / own.len() as f64;
        let b = names
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| {
                let other: Vec<usize> = (0..n).filter(|&j| labels[j] == c).collect();
                other.iter().map(|&j| d(i, j)).sum::<f64>() / other.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / n as f64
}

fn clusters(points: &Matrix, labels: &[i64]) -> Vec<(Vec<f64>, Vec<usize>)> {
    let mut names: Vec<i64> = labels.to_vec();
    names.sort_unstable();
    names.dedup();
    names
        .iter()
        .map(|&c| {
            let members: Vec<usize> = (0..points.rows()).filter(|&i| labels[i] == c).collect();
            let centroid = (0..points.cols())
                .map(|k| members.iter().map(|&i| points.row(i)[k]).sum::<f64>() / members.len() as f64)
                .collect();
            (centroid, members)
        })
        .collect()
}

/// Davies–Bouldin: mean over clusters of the worst (s_i + s_j) / d(c_i, c_j),
/// s being the mean member distance to the centroid.
pub fn davies_bouldin_direct(points: &Matrix, labels: &[i64]) -> f64 {
    let cl = clusters(points, labels);
    let scatter: Vec<f64> = cl
        .iter()
        .map(|(c, m)| m.iter().map(|&i| euclidean(points.row(i), c)).sum::<f64>() / m.len() as f64)
        .collect();
    let k = cl.len();
    (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i)
                .map(|j| (scatter[i] + scatter[j]) / euclidean(&cl[i].0, &cl[j].0))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum::<f64>()
        / k as f64
}

/// Calinski–Harabasz: between-cluster over within-cluster dispersion, each
/// divided by its degrees of freedom.
pub fn calinski_harabasz_direct(points: &Matrix, labels: &[i64]) -> f64 {
    let n = points.rows();
    let cl = clusters(points, labels);
    let k = cl.len();
    let grand: Vec<f64> = (0..points.cols()).map(|c| (0..n).map(|i| points.row(i)[c]).sum::<f64>() / n as f64).collect();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let between: f64 = cl.iter().map(|(c, m)| m.len() as f64 * sq(c, &grand)).sum();
    let within: f64 = cl.iter().map(|(c, m)| m.iter().map(|&i| sq(points.row(i), c)).sum::<f64>()).sum();
    (between / (k - 1) as f64) / (within / (n - k) as f64)
}
