//! Persistence signatures of embedding vectors.
//!
//! H0 comes from the sublevel-set filtration of the embedding read as a 1-D
//! sequence. H1 comes from Vietoris-Rips persistence of its delay embedding,
//! since a 1-D complex carries no loops of its own.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::matrix::{euclidean, Matrix};

pub const DEFAULT_MAX_POINTS: usize = 512;

/// One persistence pair. `capped` marks an essential class whose death was
/// clamped to the filtration maximum (H0) or to `max_radius` (H1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub birth: f64,
    pub death: f64,
    pub capped: bool,
}

impl Bar {
    pub fn lifetime(&self) -> f64 {
        self.death - self.birth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceDiagram {
    pub dim: usize,
    pub pairs: Vec<Bar>,
}

impl PersistenceDiagram {
    pub fn finite(&self) -> impl Iterator<Item = &Bar> {
        self.pairs.iter().filter(|b| !b.capped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TopoSignature {
    pub n_h1: usize,
    pub sum_h1: f64,
    pub max_h0: f64,
    pub mean_h0: f64,
}

impl TopoSignature {
    pub const NAMES: [&'static str; 4] = ["n_H1", "sum_H1", "max_H0", "mean_H0"];

    pub fn to_array(&self) -> [f64; 4] {
        [self.n_h1 as f64, self.sum_h1, self.max_h0, self.mean_h0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopoConfig {
    pub delay_dim: usize,
    pub lag: usize,
    /// Bars must live strictly longer than this to count towards n_H1.
    pub pers_threshold: f64,
    /// Rips truncation radius; `None` means the cloud diameter.
    pub max_radius: Option<f64>,
    pub max_points: usize,
}

impl Default for TopoConfig {
    fn default() -> Self {
        Self {
            delay_dim: 3,
            lag: 1,
            pers_threshold: 0.0,
            max_radius: None,
            max_points: DEFAULT_MAX_POINTS,
        }
    }
}

impl TopoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay_dim < 2 || self.lag == 0 {
            return param_err("delay_dim must be at least 2 and lag positive");
        }
        if !(self.pers_threshold >= 0.0) {
            return param_err("pers_threshold must be non-negative");
        }
        if let Some(r) = self.max_radius {
            if !(r >= 0.0) || !r.is_finite() {
                return param_err("max_radius must be finite and non-negative");
            }
        }
        if self.max_points < 3 {
            return param_err("max_points must be at least 3");
        }
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// H0 of the sublevel-set filtration of `seq` as a path graph.
///
/// Values are processed in stable sorted order; when two components meet, the
/// one born later dies. Zero-length pairs are not emitted. The surviving class
/// is reported as `(min, max)` with `capped` set.
pub fn sublevel_h0(seq: &[f64]) -> Result<PersistenceDiagram> {
    if seq.len() < 2 {
        return Err(Error::Length { needed: 2, got: seq.len() });
    }
    if seq.iter().any(|v| !v.is_finite()) {
        return param_err("sequence contains non-finite values");
    }
    let n = seq.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| seq[a].total_cmp(&seq[b]));
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }

    // Each root remembers the vertex where its component was born.
    let mut uf = UnionFind::new(n);
    let mut born = vec![usize::MAX; n];
    let mut active = vec![false; n];
    let mut pairs = Vec::new();
    for &i in &order {
        active[i] = true;
        born[i] = i;
        let neighbours = [i.checked_sub(1), (i + 1 < n).then_some(i + 1)];
        for j in neighbours.into_iter().flatten().filter(|&j| active[j]) {
            let (ri, rj) = (uf.find(i), uf.find(j));
            if ri == rj {
                continue;
            }
            let (elder, younger) = if rank[born[ri]] < rank[born[rj]] { (ri, rj) } else { (rj, ri) };
            let birth = seq[born[younger]];
            if seq[i] > birth {
                pairs.push(Bar { birth, death: seq[i], capped: false });
            }
            uf.parent[younger] = elder;
        }
    }
    pairs.push(Bar {
        birth: seq[order[0]],
        death: seq[order[n - 1]],
        capped: true,
    });
    Ok(PersistenceDiagram { dim: 0, pairs })
}

/// Sliding-window embedding: point `i` is `(x[i], x[i+lag], ..)`.
pub fn delay_embed(seq: &[f64], dim: usize, lag: usize) -> Result<Matrix> {
    if dim == 0 || lag == 0 {
        return param_err("delay dimension and lag must be positive");
    }
    let span = (dim - 1) * lag;
    if seq.len() < span + 1 {
        return Err(Error::Length { needed: span + 1, got: seq.len() });
    }
    let m = seq.len() - span;
    let data = (0..m).flat_map(|i| (0..dim).map(move |k| seq[i + k * lag])).collect();
    Matrix::from_vec(m, dim, data)
}

fn edge_index(i: usize, j: usize) -> usize {
    debug_assert!(i < j);
    j * (j - 1) / 2 + i
}

/// A simplex in filtration order: by diameter, ties by combinatorial index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Key {
    diam: f64,
    index: u64,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.diam.total_cmp(&other.diam).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn triangle_index(mut v: [usize; 3]) -> u64 {
    v.sort_unstable();
    let [a, b, c] = v.map(|x| x as u64);
    c * (c.saturating_sub(1)) * (c.saturating_sub(2)) / 6 + b * (b.saturating_sub(1)) / 2 + a
}

/// Symmetric difference of two ascending key lists.
fn xor_into(acc: &mut Vec<Key>, other: &[Key], scratch: &mut Vec<Key>) {
    scratch.clear();
    let (mut i, mut j) = (0, 0);
    while i < acc.len() && j < other.len() {
        match acc[i].cmp(&other[j]) {
            Ordering::Less => {
                scratch.push(acc[i]);
                i += 1;
            }
            Ordering::Greater => {
                scratch.push(other[j]);
                j += 1;
            }
            Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    scratch.extend_from_slice(&acc[i..]);
    scratch.extend_from_slice(&other[j..]);
    std::mem::swap(acc, scratch);
}

/// Dimension-1 Vietoris-Rips persistence up to `max_radius` (default: the
/// cloud diameter).
///
/// Reduces the coboundary matrix of edges over Z/2, which yields the same
/// barcode as boundary reduction. Edges that kill an H0 class are cleared
/// beforehand by a Kruskal pass in the same total order.
pub fn rips_h1(points: &Matrix, max_radius: Option<f64>, max_points: usize) -> Result<PersistenceDiagram> {
    let m = points.rows();
    if m > max_points {
        return Err(Error::Resource(format!(
            "{m} points exceed the Rips cap of {max_points}; subsample the cloud first"
        )));
    }
    if m < 3 {
        return Err(Error::Length { needed: 3, got: m });
    }
    let mut dist = vec![0.0; m * m];
    for i in 0..m {
        for j in i + 1..m {
            let d = euclidean(points.row(i), points.row(j));
            if !d.is_finite() {
                return param_err("non-finite pairwise distance");
            }
            dist[i * m + j] = d;
            dist[j * m + i] = d;
        }
    }
    let diameter = dist.iter().copied().fold(0.0, f64::max);
    let radius = max_radius.unwrap_or(diameter);

    let mut edges: Vec<(Key, usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for j in 1..m {
        for i in 0..j {
            let diam = dist[i * m + j];
            if diam <= radius {
                edges.push((Key { diam, index: edge_index(i, j) as u64 }, i, j));
            }
        }
    }
    edges.sort_by(|a, b| a.0.cmp(&b.0));

    let mut uf = UnionFind::new(m);
    let mut cleared = vec![false; edges.len()];
    for (slot, &(_, i, j)) in edges.iter().enumerate() {
        let (ri, rj) = (uf.find(i), uf.find(j));
        if ri != rj {
            uf.parent[ri.max(rj)] = ri.min(rj);
            cleared[slot] = true;
        }
    }

    let mut pivots: HashMap<u64, Vec<Key>> = HashMap::new();
    let mut pairs = Vec::new();
    let mut scratch = Vec::new();
    for (slot, &(key, i, j)) in edges.iter().enumerate().rev() {
        if cleared[slot] {
            continue;
        }
        let mut column: Vec<Key> = (0..m)
            .filter(|&k| k != i && k != j)
            .filter_map(|k| {
                let diam = key.diam.max(dist[i * m + k]).max(dist[j * m + k]);
                (diam <= radius).then(|| Key { diam, index: triangle_index([i, j, k]) })
            })
            .collect();
        column.sort_unstable();
        while let Some(&pivot) = column.first() {
            match pivots.get(&pivot.index) {
                Some(reducer) => xor_into(&mut column, reducer, &mut scratch),
                None => break,
            }
        }
        match column.first() {
            Some(&pivot) => {
                if pivot.diam > key.diam {
                    pairs.push(Bar { birth: key.diam, death: pivot.diam, capped: false });
                }
                pivots.insert(pivot.index, column);
            }
            None => {
                if radius > key.diam {
                    pairs.push(Bar { birth: key.diam, death: radius, capped: true });
                }
            }
        }
    }
    pairs.sort_by(|a, b| a.birth.total_cmp(&b.birth).then(a.death.total_cmp(&b.death)));
    Ok(PersistenceDiagram { dim: 1, pairs })
}

/// The four-number persistence summary of one embedding vector.
pub fn signature(embedding: &[f64], cfg: &TopoConfig) -> Result<TopoSignature> {
    let h0 = sublevel_h0(embedding)?;
    let lifetimes: Vec<f64> = h0.finite().map(Bar::lifetime).collect();
    let (max_h0, mean_h0) = if lifetimes.is_empty() {
        (0.0, 0.0)
    } else {
        (
            lifetimes.iter().copied().fold(0.0, f64::max),
            lifetimes.iter().sum::<f64>() / lifetimes.len() as f64,
        )
    };
    let cloud = delay_embed(embedding, cfg.delay_dim, cfg.lag)?;
    let h1 = rips_h1(&cloud, cfg.max_radius, cfg.max_points)?;
    let (mut n_h1, mut sum_h1) = (0, 0.0);
    for bar in &h1.pairs {
        if bar.lifetime() > cfg.pers_threshold {
            n_h1 += 1;
            sum_h1 += bar.lifetime();
        }
    }
    Ok(TopoSignature { n_h1, sum_h1, max_h0, mean_h0 })
}

/// Signatures for every row of `embeddings`.
pub fn signatures(embeddings: &Matrix, cfg: &TopoConfig) -> Result<Vec<TopoSignature>> {
    cfg.validate()?;
    embeddings.iter_rows().map(|row| signature(row, cfg)).collect()
}
