//! HDBSCAN over persistence signatures, dominant-cluster SQI and the k-means
//! ablation arm.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::matrix::{euclidean, Matrix};
use crate::rng::substream;

pub const NOISE: i64 = -1;
const KMEANS_RESTARTS: usize = 50;
const KMEANS_TOL: f64 = 1e-8;
const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl HdbscanParams {
    /// `max(25, 1 % of n)` for both parameters.
    pub fn for_corpus(n: usize) -> Self {
        let m = 25.max(n.div_ceil(100));
        Self { min_cluster_size: m, min_samples: m }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 || self.min_samples < 1 {
            return param_err("min_cluster_size must be at least 2 and min_samples at least 1");
        }
        Ok(())
    }
}

/// Column means and standard deviations used by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(points: &Matrix) -> Result<Self> {
        let n = points.rows();
        if n < 2 {
            return Err(Error::Length { needed: 2, got: n });
        }
        let d = points.cols();
        let mut mean = vec![0.0; d];
        for row in points.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in points.iter_rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
        Ok(Self { mean, std })
    }

    /// Zero-variance columns map to zero.
    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn transform(&self, points: &Matrix) -> Result<Matrix> {
        if points.cols() != self.mean.len() {
            return param_err(format!("expected {} columns, got {}", self.mean.len(), points.cols()));
        }
        let data = points.iter_rows().flat_map(|r| self.transform_row(r)).collect();
        Matrix::from_vec(points.rows(), points.cols(), data)
    }
}

/// Per-column z-scoring with population standard deviation.
pub fn standardize(points: &Matrix) -> Result<Matrix> {
    Scaler::fit(points)?.transform(points)
}

/// Distance to the k-th nearest neighbour, the point itself being the first.
pub fn core_distances(points: &Matrix, k: usize) -> Result<Vec<f64>> {
    let n = points.rows();
    if k == 0 || k > n {
        return param_err(format!("core distance neighbour count {k} must lie in 1..={n}"));
    }
    let mut row = vec![0.0; n];
    Ok((0..n)
        .map(|i| {
            for (j, d) in row.iter_mut().enumerate() {
                *d = euclidean(points.row(i), points.row(j));
            }
            *row.select_nth_unstable_by(k - 1, f64::total_cmp).1
        })
        .collect())
}

pub fn mutual_reachability(d_ab: f64, core_a: f64, core_b: f64) -> f64 {
    d_ab.max(core_a).max(core_b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Prim's algorithm over the implicit mutual-reachability graph; edges are
/// returned in ascending weight order (stable in discovery order).
pub fn mst_single_linkage(points: &Matrix, core: &[f64]) -> Result<Vec<MstEdge>> {
    let n = points.rows();
    if n < 2 {
        return Err(Error::Length { needed: 2, got: n });
    }
    if core.len() != n {
        return param_err("core distance count differs from point count");
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_w = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let w = mutual_reachability(euclidean(points.row(current), points.row(j)), core[current], core[j]);
            if w < best[j] {
                best[j] = w;
                from[j] = current;
            }
            if best[j] < next_w || next == usize::MAX {
                next_w = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push(MstEdge { a: from[next], b: next, weight: next_w });
        current = next;
    }
    edges.sort_by(|x, y| x.weight.total_cmp(&y.weight));
    Ok(edges)
}

/// Single-linkage merge: children are point ids (< n) or `n + merge index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

pub fn dendrogram(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for e in mst {
        let (ra, rb) = (find(&mut parent, e.a), find(&mut parent, e.b));
        let node = n + merges.len();
        size[node] = size[ra] + size[rb];
        parent[ra] = node;
        parent[rb] = node;
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: e.weight,
            size: size[node],
        });
    }
    merges
}

/// Condensed-tree row: `child` is a point id (< n, size 1) or a cluster id (≥ n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CondensedEntry {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub child_size: usize,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

fn subtree_points(n: usize, merges: &[Merge], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let m = &merges[x - n];
            stack.push(m.right);
            stack.push(m.left);
        }
    }
}

/// Condenses the merge tree: splits into two parts of at least
/// `min_cluster_size` create clusters; smaller parts shed their points.
/// The root cluster has id `n`.
pub fn condense_tree(n: usize, merges: &[Merge], min_cluster_size: usize) -> Vec<CondensedEntry> {
    let mut out = Vec::new();
    if merges.is_empty() {
        return out;
    }
    let node_size = |x: usize| if x < n { 1 } else { merges[x - n].size };
    let mut label = vec![usize::MAX; 2 * n];
    let root = n + merges.len() - 1;
    label[root] = n;
    let mut next_label = n + 1;
    let mut queue = VecDeque::from([root]);
    let mut leaves = Vec::new();
    while let Some(node) = queue.pop_front() {
        let m = merges[node - n];
        let lambda = lambda_of(m.distance);
        let parent = label[node];
        let (ls, rs) = (node_size(m.left), node_size(m.right));
        let mut shed = |child: usize, out: &mut Vec<CondensedEntry>| {
            leaves.clear();
            subtree_points(n, merges, child, &mut leaves);
            for &p in leaves.iter() {
                out.push(CondensedEntry { parent, child: p, lambda, child_size: 1 });
            }
        };
        match (ls >= min_cluster_size, rs >= min_cluster_size) {
            (true, true) => {
                for (child, size) in [(m.left, ls), (m.right, rs)] {
                    label[child] = next_label;
                    out.push(CondensedEntry { parent, child: next_label, lambda, child_size: size });
                    next_label += 1;
                    queue.push_back(child);
                }
            }
            (false, false) => {
                shed(m.left, &mut out);
                shed(m.right, &mut out);
            }
            (true, false) => {
                shed(m.right, &mut out);
                label[m.left] = parent;
                queue.push_back(m.left);
            }
            (false, true) => {
                shed(m.left, &mut out);
                label[m.right] = parent;
                queue.push_back(m.right);
            }
        }
    }
    out
}

/// Excess-of-mass stability of every condensed cluster, indexed by `id - n`.
pub fn stabilities(n: usize, tree: &[CondensedEntry]) -> Vec<f64> {
    let last = tree.iter().map(|e| if e.child >= n { e.child } else { e.parent }).max();
    let clusters = last.map_or(0, |m| m + 1 - n);
    let mut birth = vec![0.0; clusters];
    for e in tree.iter().filter(|e| e.child >= n) {
        birth[e.child - n] = e.lambda;
    }
    let mut stab = vec![0.0; clusters];
    for e in tree {
        let b = birth[e.parent - n];
        if e.lambda > b {
            stab[e.parent - n] += (e.lambda - b) * e.child_size as f64;
        }
    }
    stab
}

/// Output of [`hdbscan`]: labels are `0..k` in tree order or [`NOISE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HdbscanOutput {
    pub labels: Vec<i64>,
    pub stabilities: Vec<f64>,
    pub core_distances: Vec<f64>,
}

/// HDBSCAN with excess-of-mass selection. The root cluster is never
/// selected, so a corpus without any qualifying split comes back all noise.
pub fn hdbscan(points: &Matrix, params: &HdbscanParams) -> Result<HdbscanOutput> {
    params.validate()?;
    let n = points.rows();
    let core = core_distances(points, params.min_samples.min(n))?;
    if n < 2 {
        return Ok(HdbscanOutput { labels: vec![NOISE; n], stabilities: vec![], core_distances: core });
    }
    let mst = mst_single_linkage(points, &core)?;
    let merges = dendrogram(n, &mst);
    let tree = condense_tree(n, &merges, params.min_cluster_size);
    let stab = stabilities(n, &tree);
    let k = stab.len();

    let mut parent = vec![usize::MAX; k];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    for e in tree.iter().filter(|e| e.child >= n) {
        parent[e.child - n] = e.parent - n;
        children[e.parent - n].push(e.child - n);
    }
    // Children always carry larger ids than their parent.
    let mut selected = vec![false; k];
    let mut best = stab.clone();
    for c in (1..k).rev() {
        let below: f64 = children[c].iter().map(|&ch| best[ch]).sum();
        if children[c].is_empty() || stab[c] > below {
            selected[c] = true;
            best[c] = stab[c];
            let mut stack = children[c].clone();
            while let Some(x) = stack.pop() {
                selected[x] = false;
                stack.extend_from_slice(&children[x]);
            }
        } else {
            best[c] = below;
        }
    }
    let mut owner = vec![None; k];
    for c in 1..k {
        owner[c] = if selected[c] { Some(c) } else { owner[parent[c]] };
    }
    let mut renumber = vec![NOISE; k];
    let mut out_stab = Vec::new();
    for c in (0..k).filter(|&c| selected[c]) {
        renumber[c] = out_stab.len() as i64;
        out_stab.push(stab[c]);
    }
    let mut labels = vec![NOISE; n];
    for e in tree.iter().filter(|e| e.child < n) {
        if let Some(c) = owner[e.parent - n] {
            labels[e.child] = renumber[c];
        }
    }
    Ok(HdbscanOutput { labels, stabilities: out_stab, core_distances: core })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub labels: Vec<i64>,
    pub stabilities: Vec<f64>,
    pub core_distances: Vec<f64>,
    pub sqi: Vec<u8>,
    pub clean_cluster_id: i64,
    /// Size of the largest cluster over the second largest; infinite for one cluster.
    pub density_ratio: f64,
}

impl ClusterResult {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.stabilities.len()];
        for &l in self.labels.iter().filter(|&&l| l >= 0) {
            sizes[l as usize] += 1;
        }
        sizes
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.sqi.iter().filter(|&&s| s == 1).count() as f64 / self.sqi.len().max(1) as f64
    }
}

/// The largest cluster is clean; equal sizes go to the lower mean core distance.
pub fn assign_sqi(out: HdbscanOutput) -> Result<ClusterResult> {
    let k = out.labels.iter().copied().max().unwrap_or(NOISE);
    if k < 0 {
        return Err(Error::NoCleanStratum);
    }
    let k = k as usize + 1;
    let mut size = vec![0usize; k];
    let mut core_sum = vec![0.0; k];
    for (&l, &c) in out.labels.iter().zip(&out.core_distances) {
        if l >= 0 {
            size[l as usize] += 1;
            core_sum[l as usize] += c;
        }
    }
    let mean_core = |c: usize| core_sum[c] / size[c].max(1) as f64;
    let clean = (0..k)
        .min_by(|&a, &b| size[b].cmp(&size[a]).then(mean_core(a).total_cmp(&mean_core(b))).then(a.cmp(&b)))
        .expect("k >= 1");
    let mut sorted = size.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let density_ratio = match sorted.get(1) {
        Some(&second) if second > 0 => sorted[0] as f64 / second as f64,
        _ => f64::INFINITY,
    };
    let sqi = out.labels.iter().map(|&l| u8::from(l == clean as i64)).collect();
    Ok(ClusterResult {
        labels: out.labels,
        stabilities: out.stabilities,
        core_distances: out.core_distances,
        sqi,
        clean_cluster_id: clean as i64,
        density_ratio,
    })
}

/// True when the run should be marked low-confidence.
pub fn density_ratio_guard(density_ratio: f64, threshold: f64) -> bool {
    density_ratio < threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<i64>,
    pub centroids: Matrix,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_once(points: &Matrix, k: usize, rng: &mut impl Rng) -> KMeansResult {
    let (n, dim) = (points.rows(), points.cols());
    let mut centroids = Matrix::<f64>::zeros(k, dim);
    centroids.row_mut(0).copy_from_slice(points.row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = points.iter_rows().map(|p| sq_dist(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            d2.iter()
                .position(|&w| {
                    target -= w;
                    target < 0.0
                })
                .unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).expect("positive total"))
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (d, p) in d2.iter_mut().zip(points.iter_rows()) {
            *d = d.min(sq_dist(p, centroids.row(c)));
        }
    }

    let mut labels = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        for (l, p) in labels.iter_mut().zip(points.iter_rows()) {
            *l = nearest(p, &centroids).0;
        }
        let mut sums = Matrix::<f64>::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points.iter_rows()) {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums.row(c).iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, centroids.row(c)).sqrt());
            centroids.row_mut(c).copy_from_slice(&new);
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (l, p) in labels.iter_mut().zip(points.iter_rows()) {
        let (c, d) = nearest(p, &centroids);
        *l = c;
        inertia += d;
    }
    KMeansResult {
        labels: labels.into_iter().map(|l| l as i64).collect(),
        centroids,
        inertia,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the lowest-inertia of 50 restarts wins.
pub fn kmeans(points: &Matrix, k: usize, seed: u64) -> Result<KMeansResult> {
    if k == 0 || k > points.rows() {
        return param_err(format!("k = {k} must lie in 1..={}", points.rows()));
    }
    let mut best: Option<KMeansResult> = None;
    for restart in 0..KMEANS_RESTARTS {
        let run = kmeans_once(points, k, &mut substream(seed, &[restart as u64]));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Inductive stand-in for the transductive clustering: new points are clean
/// when their nearest cluster centroid is the clean one and they lie within
/// the clean cluster's largest member distance (standardized space).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenGate {
    pub scaler: Scaler,
    pub centroids: Vec<Vec<f64>>,
    pub clean_cluster_id: usize,
    pub clean_radius: f64,
}

impl FrozenGate {
    pub fn fit(scaler: Scaler, standardized: &Matrix, result: &ClusterResult) -> Result<Self> {
        let k = result.stabilities.len();
        if result.clean_cluster_id < 0 || k == 0 {
            return Err(Error::NoCleanStratum);
        }
        let mut centroids = vec![vec![0.0; standardized.cols()]; k];
        let mut counts = vec![0usize; k];
        for (&l, row) in result.labels.iter().zip(standardized.iter_rows()) {
            if l >= 0 {
                counts[l as usize] += 1;
                for (c, v) in centroids[l as usize].iter_mut().zip(row) {
                    *c += v;
                }
            }
        }
        for (c, &m) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= m.max(1) as f64);
        }
        let clean = result.clean_cluster_id as usize;
        let clean_radius = result
            .labels
            .iter()
            .zip(standardized.iter_rows())
            .filter(|(&l, _)| l == clean as i64)
            .map(|(_, row)| euclidean(row, &centroids[clean]))
            .fold(0.0, f64::max);
        Ok(Self { scaler, centroids, clean_cluster_id: clean, clean_radius })
    }

    pub fn dim(&self) -> usize {
        self.scaler.mean.len()
    }

    /// 1 for clean, 0 for poor; `raw` is an unstandardized signature.
    pub fn classify(&self, raw: &[f64]) -> u8 {
        let z = self.scaler.transform_row(raw);
        let dists: Vec<f64> = self.centroids.iter().map(|c| euclidean(&z, c)).collect();
        let nearest = (0..dists.len()).min_by(|&a, &b| dists[a].total_cmp(&dists[b])).expect("non-empty");
        u8::from(nearest == self.clean_cluster_id && dists[nearest] <= self.clean_radius)
    }
}
