//! kNN graph construction, smooth-kNN calibration and the fuzzy / Markov
//! graphs derived from it.
//!
//! For every node `i` with sorted neighbor distances `d_1 <= ... <= d_k`,
//! `rho_i = d_1` and `sigma_i` is calibrated so that
//! `sum_j exp(-max(0, d_j - rho_i) / sigma_i) = log2(k)`. The directed
//! weights `p_ij` feed a row-normalized transition matrix for random walks,
//! and their fuzzy union feeds the layout.

use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::EmbeddingMatrix;
use crate::rng::{self, Purpose};
use crate::sparse::CsrMatrix;

pub const DEFAULT_K: usize = 15;
pub const DEFAULT_TOL: f64 = 1e-5;
pub const DEFAULT_MAX_ITER: usize = 64;
pub const MIN_SIGMA: f64 = 1e-3;
pub const MAX_SIGMA: f64 = 1e6;
pub const DEFAULT_EXACT_THRESHOLD: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} must be smaller than the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("metric undefined for row {0} (zero vector under cosine)")]
    MetricUndefined(usize),
    #[error("smooth-kNN parameters do not match the graph ({params} rows vs {nodes} nodes)")]
    Misaligned { params: usize, nodes: usize },
    #[error("row {0} has no positive weight")]
    EmptyRow(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            other => Err(format!("unknown metric `{other}` (expected cosine or euclidean)")),
        }
    }
}

/// Rows prepared for repeated distance evaluation: unit-normalized for cosine.
pub struct PreparedRows {
    metric: Metric,
    dims: usize,
    data: Vec<f32>,
}

impl PreparedRows {
    pub fn new(matrix: &EmbeddingMatrix, metric: Metric) -> Result<Self, GraphError> {
        let dims = matrix.dims();
        let mut data = matrix.data().to_vec();
        if metric == Metric::Cosine {
            for (i, row) in data.chunks_mut(dims).enumerate() {
                let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(GraphError::MetricUndefined(i));
                }
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Ok(Self { metric, dims, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row(i), self.row(j));
        match self.metric {
            Metric::Cosine => {
                let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (1.0 - dot as f64).max(0.0)
            }
            Metric::Euclidean => {
                let sq: f32 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (sq as f64).sqrt()
            }
        }
    }

    /// Distances from row `i` to every row.
    pub fn distances_from(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|j| self.distance(i, j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
    pub metric: Metric,
    /// Brute force at or below this many points, neighbor descent above.
    pub exact_threshold: usize,
    pub seed: u64,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            metric: Metric::Cosine,
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            seed: 42,
        }
    }
}

/// `k` neighbors per node, ascending by `(distance, id)`, self excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnGraph {
    k: usize,
    indices: Vec<u32>,
    distances: Vec<f64>,
}

impl KnnGraph {
    /// Each row must hold exactly `k` `(id, distance)` pairs; rows are sorted here.
    pub fn from_rows(k: usize, rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut indices = Vec::with_capacity(rows.len() * k);
        let mut distances = Vec::with_capacity(rows.len() * k);
        for mut row in rows {
            assert_eq!(row.len(), k, "every kNN row needs exactly k entries");
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            for (j, d) in row {
                indices.push(j);
                distances.push(d);
            }
        }
        Self {
            k,
            indices,
            distances,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.indices.len() / self.k.max(1)
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn distances(&self, i: usize) -> &[f64] {
        &self.distances[i * self.k..(i + 1) * self.k]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.neighbors(i).iter().copied().zip(self.distances(i).iter().copied())
    }
}

/// Builds the kNN graph: brute force up to `exact_threshold`, neighbor descent above.
pub fn build_knn(matrix: &EmbeddingMatrix, params: &KnnParams) -> Result<KnnGraph, GraphError> {
    let n = matrix.rows();
    check_k(params.k, n)?;
    let rows = PreparedRows::new(matrix, params.metric)?;
    if n <= params.exact_threshold {
        Ok(exact_knn(&rows, params.k))
    } else {
        Ok(nn_descent(&rows, params.k, params.seed, &NnDescentConfig::default()))
    }
}

fn check_k(k: usize, n: usize) -> Result<(), GraphError> {
    if k < 2 {
        return Err(GraphError::KTooSmall(k));
    }
    if k >= n {
        return Err(GraphError::KTooLarge { k, n });
    }
    Ok(())
}

/// Keeps the `k` smallest `(distance, id)` pairs, sorted.
fn push_bounded(best: &mut Vec<(f64, u32)>, k: usize, d: f64, j: u32) {
    let key = (d, j);
    if best.len() == k {
        let worst = best[k - 1];
        if d.total_cmp(&worst.0).then(j.cmp(&worst.1)).is_ge() {
            return;
        }
        best.pop();
    }
    let pos = best.partition_point(|&(bd, bj)| bd.total_cmp(&key.0).then(bj.cmp(&key.1)).is_lt());
    best.insert(pos, key);
}

/// Exact kNN by exhaustive search.
pub fn exact_knn(rows: &PreparedRows, k: usize) -> KnnGraph {
    let n = rows.len();
    let lists: Vec<Vec<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = Vec::with_capacity(k + 1);
            for j in 0..n {
                if j != i {
                    push_bounded(&mut best, k, rows.distance(i, j), j as u32);
                }
            }
            best.into_iter().map(|(d, j)| (j, d)).collect()
        })
        .collect();
    KnnGraph::from_rows(k, lists)
}

#[derive(Debug, Clone)]
pub struct NnDescentConfig {
    pub max_iters: usize,
    /// Stop once fewer than `delta * n * k` list updates happen in an iteration.
    pub delta: f64,
    /// Internal list size on top of `k`; wider lists raise recall.
    pub extra_candidates: usize,
}

impl Default for NnDescentConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            delta: 0.0005,
            extra_candidates: 10,
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    dist: f64,
    id: u32,
    fresh: bool,
}

/// Neighbor descent with a deterministic update order: joins run in parallel
/// against a frozen snapshot, updates are applied sequentially by node.
pub fn nn_descent(rows: &PreparedRows, k: usize, seed: u64, config: &NnDescentConfig) -> KnnGraph {
    let n = rows.len();
    let width = (k + config.extra_candidates).min(n - 1);
    let mut lists: Vec<Vec<Candidate>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, Purpose::KnnInit, i as u64);
            let mut chosen: Vec<u32> = Vec::with_capacity(width);
            while chosen.len() < width {
                let j = rng.random_range(0..n) as u32;
                if j as usize != i && !chosen.contains(&j) {
                    chosen.push(j);
                }
            }
            let mut list: Vec<Candidate> = chosen
                .into_iter()
                .map(|j| Candidate {
                    dist: rows.distance(i, j as usize),
                    id: j,
                    fresh: true,
                })
                .collect();
            list.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
            list
        })
        .collect();

    for _ in 0..config.max_iters {
        let mut fresh: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut old: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (i, list) in lists.iter_mut().enumerate() {
            for c in list.iter_mut() {
                if c.fresh {
                    fresh[i].push(c.id);
                    c.fresh = false;
                } else {
                    old[i].push(c.id);
                }
            }
        }
        let mut fresh_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut old_rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in &fresh[i] {
                if fresh_rev[j as usize].len() < width {
                    fresh_rev[j as usize].push(i as u32);
                }
            }
            for &j in &old[i] {
                if old_rev[j as usize].len() < width {
                    old_rev[j as usize].push(i as u32);
                }
            }
        }
        for i in 0..n {
            for j in std::mem::take(&mut fresh_rev[i]) {
                if !fresh[i].contains(&j) {
                    fresh[i].push(j);
                }
            }
            for j in std::mem::take(&mut old_rev[i]) {
                if !old[i].contains(&j) {
                    old[i].push(j);
                }
            }
        }

        let snapshot_worst: Vec<f64> = lists.iter().map(|l| l[l.len() - 1].dist).collect();
        let updates: Vec<Vec<(u32, u32, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut out = Vec::new();
                let (f, o) = (&fresh[i], &old[i]);
                for (a_idx, &a) in f.iter().enumerate() {
                    let partners = f[a_idx + 1..].iter().chain(o.iter());
                    for &b in partners {
                        if a == b {
                            continue;
                        }
                        let d = rows.distance(a as usize, b as usize);
                        if d < snapshot_worst[a as usize] || d < snapshot_worst[b as usize] {
                            out.push((a, b, d));
                        }
                    }
                }
                out
            })
            .collect();

        let mut changes = 0usize;
        for (a, b, d) in updates.into_iter().flatten() {
            changes += insert_candidate(&mut lists[a as usize], b, d) as usize;
            changes += insert_candidate(&mut lists[b as usize], a, d) as usize;
        }
        log::debug!("nn-descent iteration: {changes} updates");
        if (changes as f64) < config.delta * (n * k) as f64 {
            break;
        }
    }

    let rows: Vec<Vec<(u32, f64)>> = lists
        .into_iter()
        .map(|l| l.into_iter().take(k).map(|c| (c.id, c.dist)).collect())
        .collect();
    KnnGraph::from_rows(k, rows)
}

fn insert_candidate(list: &mut Vec<Candidate>, id: u32, dist: f64) -> bool {
    let last = list[list.len() - 1];
    if dist.total_cmp(&last.dist).then(id.cmp(&last.id)).is_ge() {
        return false;
    }
    if list.iter().any(|c| c.id == id) {
        return false;
    }
    list.pop();
    let pos = list.partition_point(|c| c.dist.total_cmp(&dist).then(c.id.cmp(&id)).is_lt());
    list.insert(
        pos,
        Candidate {
            dist,
            id,
            fresh: true,
        },
    );
    true
}

/// Fraction of exact neighbors recovered by `graph` on the given rows.
pub fn sampled_recall(graph: &KnnGraph, rows: &PreparedRows, sample: &[usize]) -> f64 {
    let k = graph.k();
    let mut hit = 0usize;
    for &i in sample {
        let mut best = Vec::with_capacity(k + 1);
        for j in 0..rows.len() {
            if j != i {
                push_bounded(&mut best, k, rows.distance(i, j), j as u32);
            }
        }
        hit += best
            .iter()
            .filter(|(_, j)| graph.neighbors(i).contains(j))
            .count();
    }
    hit as f64 / (sample.len() * k) as f64
}

/// Per-node kernel offset and bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothKnn {
    pub rho: f64,
    pub sigma: f64,
    /// The target mass could not be reached; `sigma` was clamped.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothKnnParams {
    pub rows: Vec<SmoothKnn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn kernel_mass(distances: &[f64], rho: f64, sigma: f64) -> f64 {
    distances
        .iter()
        .map(|&d| (-(d - rho).max(0.0) / sigma).exp())
        .sum()
}

/// Finds `sigma` with `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)` by
/// geometric bisection on `[MIN_SIGMA, MAX_SIGMA]`.
pub fn calibrate_smooth_knn(
    distances: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SmoothKnn, GraphError> {
    let k = distances.len();
    if k < 2 {
        return Err(GraphError::KTooSmall(k));
    }
    let rho = distances[0];
    let target = (k as f64).log2();
    let mass = |s: f64| kernel_mass(distances, rho, s);

    let at_min = mass(MIN_SIGMA);
    if at_min >= target {
        return Ok(SmoothKnn {
            rho,
            sigma: MIN_SIGMA,
            degenerate: at_min - target > tol,
        });
    }
    let at_max = mass(MAX_SIGMA);
    if at_max < target - tol {
        return Ok(SmoothKnn {
            rho,
            sigma: MAX_SIGMA,
            degenerate: true,
        });
    }

    let (mut lo, mut hi) = (MIN_SIGMA, MAX_SIGMA);
    let mut sigma = (lo * hi).sqrt();
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        sigma = (lo * hi).sqrt();
        let m = mass(sigma);
        residual = m - target;
        if residual.abs() <= tol {
            break;
        }
        if residual > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
    }
    Ok(SmoothKnn {
        rho,
        sigma,
        degenerate: residual.abs() > tol,
    })
}

pub fn calibrate_graph(knn: &KnnGraph, config: &CalibrationConfig) -> Result<SmoothKnnParams, GraphError> {
    let rows = (0..knn.n())
        .into_par_iter()
        .map(|i| calibrate_smooth_knn(knn.distances(i), config.tol, config.max_iter))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SmoothKnnParams { rows })
}

/// Directed UMAP-kernel weights `p_ij`; only strictly positive weights are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyGraph(pub CsrMatrix);

/// Fuzzy union `w_ij = p_ij + p_ji - p_ij * p_ji`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricGraph(pub CsrMatrix);

/// Row-stochastic `T_ij = p_ij / sum_m p_im`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix(pub CsrMatrix);

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.0.n_rows()
    }

    /// Samples the successor of `node` given a uniform draw `u` in `[0, 1)`.
    pub fn step(&self, node: usize, u: f64) -> usize {
        let (cols, vals) = self.0.row(node);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v;
            if u < acc {
                return c as usize;
            }
        }
        *cols.last().expect("transition rows are never empty") as usize
    }
}

pub fn fuzzy_weight(distance: f64, smooth: &SmoothKnn) -> f64 {
    (-(distance - smooth.rho).max(0.0) / smooth.sigma).exp()
}

pub fn fuzzy_graph(
    knn: &KnnGraph,
    params: &SmoothKnnParams,
) -> Result<(FuzzyGraph, SymmetricGraph), GraphError> {
    if params.rows.len() != knn.n() {
        return Err(GraphError::Misaligned {
            params: params.rows.len(),
            nodes: knn.n(),
        });
    }
    let rows = (0..knn.n())
        .map(|i| {
            let s = &params.rows[i];
            knn.row(i)
                .map(|(j, d)| (j, fuzzy_weight(d, s)))
                .filter(|&(_, p)| p > 0.0)
                .collect()
        })
        .collect();
    let directed = CsrMatrix::from_rows(rows);
    let symmetric = fuzzy_union(&directed);
    Ok((FuzzyGraph(directed), SymmetricGraph(symmetric)))
}

fn fuzzy_union(p: &CsrMatrix) -> CsrMatrix {
    let pt = p.transpose();
    let rows = (0..p.n_rows())
        .map(|i| {
            let mut a = p.row_iter(i).peekable();
            let mut b = pt.row_iter(i).peekable();
            let mut out = Vec::new();
            loop {
                let entry = match (a.peek().copied(), b.peek().copied()) {
                    (None, None) => break,
                    (Some((ja, pa)), Some((jb, pb))) if ja == jb => {
                        a.next();
                        b.next();
                        (ja, pa + pb - pa * pb)
                    }
                    (Some((ja, pa)), Some((jb, _))) if ja < jb => {
                        a.next();
                        (ja, pa)
                    }
                    (Some((ja, pa)), None) => {
                        a.next();
                        (ja, pa)
                    }
                    (_, Some((jb, pb))) => {
                        b.next();
                        (jb, pb)
                    }
                };
                out.push(entry);
            }
            out
        })
        .collect();
    CsrMatrix::from_rows(rows)
}

pub fn transition_matrix(fuzzy: &FuzzyGraph) -> Result<TransitionMatrix, GraphError> {
    let p = &fuzzy.0;
    let rows = (0..p.n_rows())
        .map(|i| {
            let total = p.row_sum(i);
            if total <= 0.0 {
                return Err(GraphError::EmptyRow(i));
            }
            Ok(p.row_iter(i).map(|(j, v)| (j, v / total)).collect())
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TransitionMatrix(CsrMatrix::from_rows(rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn knn_params(k: usize, metric: Metric) -> KnnParams {
        KnnParams {
            k,
            metric,
            ..KnnParams::default()
        }
    }

    #[test]
    fn collinear_euclidean_neighbors() {
        let m = matrix(&[&[0.0], &[1.0], &[2.0], &[4.0]]);
        let g = build_knn(&m, &knn_params(2, Metric::Euclidean)).unwrap();
        assert_eq!(g.row(0).collect::<Vec<_>>(), vec![(1, 1.0), (2, 2.0)]);
        assert_eq!(g.row(3).collect::<Vec<_>>(), vec![(2, 2.0), (1, 3.0)]);
    }

    #[test]
    fn basis_vectors_under_cosine() {
        let m = matrix(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let g = build_knn(&m, &knn_params(2, Metric::Cosine)).unwrap();
        for i in 0..3 {
            assert_eq!(g.distances(i), &[1.0, 1.0]);
            assert!(!g.neighbors(i).contains(&(i as u32)));
        }
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn k_bounds_and_zero_rows() {
        let m = matrix(&[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(
            build_knn(&m, &knn_params(3, Metric::Euclidean)),
            Err(GraphError::KTooLarge { k: 3, n: 3 })
        );
        assert_eq!(
            build_knn(&m, &knn_params(1, Metric::Euclidean)),
            Err(GraphError::KTooSmall(1))
        );
        let z = matrix(&[&[1.0, 0.0], &[0.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(
            build_knn(&z, &knn_params(2, Metric::Cosine)),
            Err(GraphError::MetricUndefined(1))
        );
    }

    /// Bisection on the linear scale over [1e-3, 1e3], independent of the
    /// geometric bisection used in the implementation.
    fn sigma_oracle(d: &[f64], target: f64) -> f64 {
        let f = |s: f64| d.iter().map(|&x| (-(x - d[0]) / s).exp()).sum::<f64>() - target;
        let (mut lo, mut hi) = (1e-3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid
            } else {
                lo = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn calibrates_one_two_three_four() {
        let d = [1.0, 2.0, 3.0, 4.0];
        let s = calibrate_smooth_knn(&d, 1e-5, 64).unwrap();
        // root of 1 + e^{-1/s} + e^{-2/s} + e^{-3/s} = 2
        let expected = sigma_oracle(&d, 2.0);
        assert!((expected - 1.641_017_929_928_488).abs() < 1e-9);
        assert_eq!(s.rho, 1.0);
        assert!(!s.degenerate);
        assert!((kernel_mass(&d, 1.0, s.sigma) - 2.0).abs() <= 1e-5);
        assert!((s.sigma - expected).abs() < 1e-4);
    }

    #[test]
    fn equal_distances_are_degenerate() {
        let s = calibrate_smooth_knn(&[2.0; 4], 1e-5, 64).unwrap();
        assert_eq!((s.rho, s.sigma, s.degenerate), (2.0, MIN_SIGMA, true));
    }

    #[test]
    fn target_met_by_nearest_alone() {
        let s = calibrate_smooth_knn(&[0.0, 10.0], 1e-5, 64).unwrap();
        assert_eq!((s.rho, s.sigma), (0.0, MIN_SIGMA));
        assert_eq!(calibrate_smooth_knn(&[1.0], 1e-5, 64), Err(GraphError::KTooSmall(1)));
    }

    #[test]
    fn fuzzy_weights_and_union() {
        let s = SmoothKnn {
            rho: 0.5,
            sigma: 2.0,
            degenerate: false,
        };
        assert_eq!(fuzzy_weight(0.5, &s), 1.0);
        assert!((fuzzy_weight(2.5, &s) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((fuzzy_weight(2.5, &s) - 0.3679).abs() < 1e-4);

        // p_01 = 1, p_10 = 0.5
        let p = CsrMatrix::from_rows(vec![vec![(1, 1.0)], vec![(0, 0.5)]]);
        let w = fuzzy_union(&p);
        assert_eq!(w.get(0, 1), Some(1.0));
        assert_eq!(w.get(1, 0), Some(1.0));
    }

    #[test]
    fn transition_rows() {
        let p = FuzzyGraph(CsrMatrix::from_rows(vec![
            vec![(1, 1.0), (2, 1.0), (3, 1.0)],
            vec![(0, 1.0), (2, 0.5), (3, 0.5)],
            vec![(0, 1.0)],
            vec![(0, 1.0)],
        ]));
        let t = transition_matrix(&p).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(t.0.row(0).1, &[third, third, third]);
        assert_eq!(t.0.row(1).1, &[0.5, 0.25, 0.25]);
        assert_eq!(t.0.row(2).1, &[1.0]);
        let empty = FuzzyGraph(CsrMatrix::from_rows(vec![vec![]]));
        assert_eq!(transition_matrix(&empty), Err(GraphError::EmptyRow(0)));
    }

    #[test]
    fn step_follows_cumulative_mass() {
        let t = TransitionMatrix(CsrMatrix::from_rows(vec![vec![(1, 0.25), (2, 0.75)], vec![], vec![]]));
        assert_eq!(t.step(0, 0.0), 1);
        assert_eq!(t.step(0, 0.2499), 1);
        assert_eq!(t.step(0, 0.25), 2);
        assert_eq!(t.step(0, 0.999_999), 2);
    }

    #[test]
    fn misaligned_params_rejected() {
        let m = matrix(&[&[0.0], &[1.0], &[3.0]]);
        let g = build_knn(&m, &knn_params(2, Metric::Euclidean)).unwrap();
        let params = SmoothKnnParams { rows: vec![] };
        assert_eq!(
            fuzzy_graph(&g, &params).unwrap_err(),
            GraphError::Misaligned { params: 0, nodes: 3 }
        );
    }
}
