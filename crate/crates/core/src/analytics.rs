//! Triage signals for rare concepts and a layout quality measure.
//!
//! * outlier scores: 2-D distance to the m-th nearest neighbor in a level layout
//! * region sizes: how many lower-level features each landmark stands for
//! * duplicate groups: components of the explanation-embedding cosine graph
//! * trustworthiness: rank-based neighborhood preservation of a layout

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Hierarchy, HierarchyError};
use crate::ingest::EmbeddingMatrix;
use crate::neighbor_graph::{GraphError, Metric, PreparedRows};

pub const DEFAULT_OUTLIER_M: usize = 10;
pub const DEFAULT_DUPLICATE_THRESHOLD: f64 = 0.95;
pub const DEFAULT_TRUSTWORTHINESS_M: usize = 15;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("m = {m} is too large for {n} points")]
    MTooLarge { m: usize, n: usize },
    #[error("m must be at least 1")]
    MTooSmall,
    #[error("threshold must be a positive finite number, got {0}")]
    BadThreshold(f64),
    #[error("point counts differ: {high} high-dimensional rows vs {low} positions")]
    Misaligned { high: usize, low: usize },
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn dist2d(a: [f32; 2], b: [f32; 2]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Distance from each point to its `m`-th nearest other point.
pub fn outlier_scores(positions: &[[f32; 2]], m: usize) -> Result<Vec<f64>, AnalyticsError> {
    let n = positions.len();
    if m == 0 {
        return Err(AnalyticsError::MTooSmall);
    }
    if m >= n {
        return Err(AnalyticsError::MTooLarge { m, n });
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| dist2d(positions[i], positions[j]))
                .collect();
            let (_, kth, _) = d.select_nth_unstable_by(m - 1, f64::total_cmp);
            *kth
        })
        .collect())
}

/// Indices by descending score, ties by ascending index.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Region-of-influence size per node of `level` (>= 1), in level order, as
/// `(global node id, size)`.
pub fn region_sizes(hierarchy: &Hierarchy, level: usize) -> Result<Vec<(u32, usize)>, AnalyticsError> {
    if level == 0 || level >= hierarchy.levels.len() {
        return Err(HierarchyError::BadLevel(level).into());
    }
    let fibers = hierarchy.fibers(level)?;
    let nodes = &hierarchy.levels[level].nodes;
    Ok(nodes.iter().zip(fibers).map(|(&g, f)| (g, f.len())).collect())
}

/// Rows whose explanations are near-duplicates of one another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    /// Row indices, ascending.
    pub members: Vec<usize>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Connected components of the graph with an edge wherever cosine similarity
/// is at least `threshold`. Singletons are omitted; groups are ordered by size
/// descending, then by smallest member.
pub fn duplicate_groups(matrix: &EmbeddingMatrix, threshold: f64) -> Result<Vec<DuplicateGroup>, AnalyticsError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(AnalyticsError::BadThreshold(threshold));
    }
    let n = matrix.rows();
    let rows = PreparedRows::new(matrix, Metric::Cosine)?;
    let edges: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let rows = &rows;
            (i + 1..n)
                .filter(move |&j| 1.0 - rows.distance(i, j) >= threshold)
                .map(move |j| (i, j))
        })
        .collect();
    let mut uf = UnionFind((0..n).collect());
    for (i, j) in edges {
        uf.union(i, j);
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<DuplicateGroup> = groups
        .into_values()
        .filter(|g| g.len() > 1)
        .map(|members| DuplicateGroup { members })
        .collect();
    out.sort_by(|a, b| b.members.len().cmp(&a.members.len()).then(a.members[0].cmp(&b.members[0])));
    Ok(out)
}

fn check_trust_m(m: usize, n: usize) -> Result<(), AnalyticsError> {
    if m == 0 {
        return Err(AnalyticsError::MTooSmall);
    }
    if 2 * n <= 3 * m + 1 || m >= n {
        return Err(AnalyticsError::MTooLarge { m, n });
    }
    Ok(())
}

/// Sum over the embedding's m-NN of `i` that are not among its
/// high-dimensional m-NN of `(high-dimensional rank - m)`.
fn point_penalty(rows: &PreparedRows, positions: &[[f32; 2]], i: usize, m: usize) -> f64 {
    let n = positions.len();
    let high = rows.distances_from(i);
    let mut by_high: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    by_high.sort_by(|&a, &b| high[a].total_cmp(&high[b]).then(a.cmp(&b)));
    let mut rank = vec![0usize; n];
    for (r, &j) in by_high.iter().enumerate() {
        rank[j] = r + 1;
    }
    let mut by_low: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    let low: Vec<f64> = (0..n).map(|j| dist2d(positions[i], positions[j])).collect();
    by_low.sort_by(|&a, &b| low[a].total_cmp(&low[b]).then(a.cmp(&b)));
    by_low[..m]
        .iter()
        .filter(|&&j| rank[j] > m)
        .map(|&j| (rank[j] - m) as f64)
        .sum()
}

/// Trustworthiness of `positions` against exact high-dimensional ranks.
pub fn trustworthiness(
    high: &EmbeddingMatrix,
    metric: Metric,
    positions: &[[f32; 2]],
    m: usize,
) -> Result<f64, AnalyticsError> {
    let sample: Vec<usize> = (0..high.rows()).collect();
    trustworthiness_sampled(high, metric, positions, m, &sample)
}

/// Trustworthiness with the penalty sum estimated from `sample` rows; equal
/// to [`trustworthiness`] when every row is sampled.
pub fn trustworthiness_sampled(
    high: &EmbeddingMatrix,
    metric: Metric,
    positions: &[[f32; 2]],
    m: usize,
    sample: &[usize],
) -> Result<f64, AnalyticsError> {
    let n = high.rows();
    if positions.len() != n {
        return Err(AnalyticsError::Misaligned {
            high: n,
            low: positions.len(),
        });
    }
    check_trust_m(m, n)?;
    let rows = PreparedRows::new(high, metric)?;
    let penalty: f64 = sample
        .par_iter()
        .map(|&i| point_penalty(&rows, positions, i, m))
        .sum();
    let penalty = penalty * n as f64 / sample.len().max(1) as f64;
    let (nf, mf) = (n as f64, m as f64);
    Ok(1.0 - 2.0 / (nf * mf * (2.0 * nf - 3.0 * mf - 1.0)) * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn planted_outlier_scores_highest() {
        let p = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [10.0, 10.0]];
        let s = outlier_scores(&p, 2).unwrap();
        assert_eq!(descending_order(&s)[0], 3);
    }

    #[test]
    fn coincident_points_score_zero() {
        assert_eq!(outlier_scores(&[[2.0, 2.0]; 5], 3).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn collinear_scores_match_brute_force() {
        let p: [[f32; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]];
        // brute force over all pairs: nearest other point for each
        let brute: Vec<f64> = (0..3)
            .map(|i| {
                (0..3)
                    .filter(|&j| j != i)
                    .map(|j| (p[i][0] - p[j][0]).abs() as f64)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        assert_eq!(brute, vec![1.0, 1.0, 2.0]);
        assert_eq!(outlier_scores(&p, 1).unwrap(), brute);
        assert_eq!(outlier_scores(&p, 3), Err(AnalyticsError::MTooLarge { m: 3, n: 3 }));
        assert_eq!(outlier_scores(&p, 0), Err(AnalyticsError::MTooSmall));
    }

    #[test]
    fn outliers_translation_invariant() {
        let p = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.5], [4.0, 4.0]];
        let q: Vec<[f32; 2]> = p.iter().map(|v| [v[0] + 8.0, v[1] - 2.0]).collect();
        let (a, b) = (outlier_scores(&p, 2).unwrap(), outlier_scores(&q, 2).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    fn m(rows: &[Vec<f32>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_and_orthogonal_rows() {
        let same = m(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![-3.0, 0.0, 1.0]]);
        assert_eq!(
            duplicate_groups(&same, 0.99).unwrap(),
            vec![DuplicateGroup { members: vec![0, 1] }]
        );
        let ortho = m(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(duplicate_groups(&ortho, 0.5).unwrap().is_empty());
        assert!(duplicate_groups(&same, 1.01).unwrap().is_empty());
        assert_eq!(duplicate_groups(&same, 0.0), Err(AnalyticsError::BadThreshold(0.0)));
    }

    /// Cholesky factor of a 3x3 Gram matrix; its rows are vectors with the
    /// requested pairwise inner products.
    fn gram_vectors(g: [[f64; 3]; 3]) -> Vec<Vec<f32>> {
        let mut l = [[0.0f64; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                l[i][j] = if i == j { (g[i][i] - s).sqrt() } else { (g[i][j] - s) / l[j][j] };
            }
        }
        l.iter().map(|r| r.iter().map(|&v| v as f32).collect()).collect()
    }

    #[test]
    fn chained_near_duplicates_form_one_component() {
        let v = gram_vectors([[1.0, 0.96, 0.90], [0.96, 1.0, 0.96], [0.90, 0.96, 1.0]]);
        let rows = PreparedRows::new(&m(&v), Metric::Cosine).unwrap();
        assert!((1.0 - rows.distance(0, 2) - 0.90).abs() < 1e-6);
        assert!((1.0 - rows.distance(0, 1) - 0.96).abs() < 1e-6);
        assert_eq!(
            duplicate_groups(&m(&v), 0.95).unwrap(),
            vec![DuplicateGroup { members: vec![0, 1, 2] }]
        );
    }

    #[test]
    fn isometric_copy_is_fully_trustworthy() {
        let pts: Vec<Vec<f32>> = (0..30)
            .map(|i| vec![(i as f32 * 0.37).sin() * 5.0, (i as f32 * 0.91).cos() * 3.0 + i as f32 * 0.1])
            .collect();
        let high = m(&pts);
        // rotate by 30 degrees, scale by 2, translate
        let (c, s) = (30f32.to_radians().cos(), 30f32.to_radians().sin());
        let low: Vec<[f32; 2]> = pts
            .iter()
            .map(|p| [2.0 * (c * p[0] - s * p[1]) + 1.0, 2.0 * (s * p[0] + c * p[1]) - 4.0])
            .collect();
        let t = trustworthiness(&high, Metric::Euclidean, &low, 5).unwrap();
        assert!((t - 1.0).abs() < 1e-12, "{t}");
    }

    #[test]
    fn trustworthiness_bounds_on_m() {
        let high = m(&(0..10).map(|i| vec![i as f32, 1.0]).collect::<Vec<_>>());
        let low: Vec<[f32; 2]> = (0..10).map(|i| [i as f32, 0.0]).collect();
        assert_eq!(
            trustworthiness(&high, Metric::Euclidean, &low, 7),
            Err(AnalyticsError::MTooLarge { m: 7, n: 10 })
        );
        assert_eq!(
            trustworthiness(&high, Metric::Euclidean, &low[..9], 2),
            Err(AnalyticsError::Misaligned { high: 10, low: 9 })
        );
    }
}
