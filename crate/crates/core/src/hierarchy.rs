//! Landmark hierarchy: random-walk landmark ranking, regions of influence,
//! the representation matrix `R` and landmark dissimilarity
//! `S = 1 - RᵀR / max(RᵀR)`.
//!
//! Level 0 holds every feature. Level `l + 1` holds the landmarks selected at
//! level `l`, in rank order, and its neighborhood graph comes from the `k`
//! smallest entries of each row of `S`.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::EmbeddingMatrix;
use crate::layout::LayoutParams;
use crate::neighbor_graph::{
    self, build_knn, calibrate_graph, fuzzy_graph, transition_matrix, CalibrationConfig,
    FuzzyGraph, GraphError, KnnGraph, KnnParams, Metric, SmoothKnnParams, SymmetricGraph,
    TransitionMatrix,
};
use crate::rng::{self, Purpose};
use crate::sparse::CsrMatrix;

pub const MIN_LEVEL_SIZE: usize = 10;
pub const DEFAULT_WALKS_PER_NODE: usize = 10;
pub const DEFAULT_WALK_LENGTH: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("level {level} would have {size} nodes (minimum {MIN_LEVEL_SIZE})")]
    LevelTooSmall { level: usize, size: usize },
    #[error("level {level} would have {size} nodes, not fewer than the {previous} below it")]
    NotDecreasing {
        level: usize,
        size: usize,
        previous: usize,
    },
    #[error("requested {requested} landmarks from {available} nodes")]
    TooManyLandmarks { requested: usize, available: usize },
    #[error("representation matrix has no nonzero entry")]
    AllZeroR,
    #[error("landmark set is empty")]
    NoLandmarks,
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error("level {0} does not exist")]
    BadLevel(usize),
}

/// How many landmarks each coarser level keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelSizing {
    /// Fraction of the level below, rounded half up.
    Fractions(Vec<f64>),
    /// Absolute landmark counts.
    Counts(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub k: usize,
    pub metric: Metric,
    pub sizing: LevelSizing,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub seed: u64,
    pub exact_threshold: usize,
    pub calibration: CalibrationConfig,
    pub layout: LayoutParams,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            k: neighbor_graph::DEFAULT_K,
            metric: Metric::Cosine,
            sizing: LevelSizing::Fractions(vec![0.2, 0.2]),
            walks_per_node: DEFAULT_WALKS_PER_NODE,
            walk_length: DEFAULT_WALK_LENGTH,
            seed: 42,
            exact_threshold: neighbor_graph::DEFAULT_EXACT_THRESHOLD,
            calibration: CalibrationConfig::default(),
            layout: LayoutParams::default(),
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

impl BuildConfig {
    /// Sizes of every level, starting with `n`.
    pub fn level_sizes(&self, n: usize) -> Result<Vec<usize>, HierarchyError> {
        if self.walks_per_node == 0 || self.walk_length == 0 {
            return Err(HierarchyError::InvalidConfig(
                "walks per node and walk length must be at least 1".into(),
            ));
        }
        let mut sizes = vec![n];
        let steps: Vec<Box<dyn Fn(usize) -> usize>> = match &self.sizing {
            LevelSizing::Fractions(fs) => {
                if let Some(f) = fs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
                    return Err(HierarchyError::InvalidConfig(format!(
                        "level fraction {f} outside (0, 1)"
                    )));
                }
                fs.iter()
                    .map(|&f| Box::new(move |prev: usize| round_half_up(f * prev as f64)) as Box<dyn Fn(usize) -> usize>)
                    .collect()
            }
            LevelSizing::Counts(cs) => cs
                .iter()
                .map(|&c| Box::new(move |_prev: usize| c) as Box<dyn Fn(usize) -> usize>)
                .collect(),
        };
        for (i, step) in steps.iter().enumerate() {
            let prev = sizes[sizes.len() - 1];
            let size = step(prev);
            let level = i + 1;
            if size < MIN_LEVEL_SIZE {
                return Err(HierarchyError::LevelTooSmall { level, size });
            }
            if size >= prev {
                return Err(HierarchyError::NotDecreasing {
                    level,
                    size,
                    previous: prev,
                });
            }
            sizes.push(size);
        }
        Ok(sizes)
    }
}

/// Per-node visit tallies. Walk origins are not counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitCounts(pub Vec<u64>);

/// Level-local ids promoted to the next level, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet(pub Vec<u32>);

/// For every level-local node, the level-local id of its landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMap(pub Vec<u32>);

/// Columns indexed by landmark; column `u` is the normalized visit frequency
/// of walks started at `u`, as sorted `(node, frequency)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationMatrix {
    pub n_rows: usize,
    pub columns: Vec<Vec<(u32, f64)>>,
}

/// `S = 1 - RᵀR / max(RᵀR)` stored through the nonzero overlaps of `RᵀR`;
/// pairs with no overlap have `S = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSimilarity {
    overlaps: CsrMatrix,
    max_overlap: f64,
}

impl LandmarkSimilarity {
    pub fn n(&self) -> usize {
        self.overlaps.n_rows()
    }

    pub fn max_overlap(&self) -> f64 {
        self.max_overlap
    }

    pub fn overlap(&self, u: usize, v: usize) -> f64 {
        self.overlaps.get(u, v as u32).unwrap_or(0.0)
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        1.0 - self.overlap(u, v) / self.max_overlap
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|u| (0..self.n()).map(|v| self.get(u, v)).collect())
            .collect()
    }

    /// The `k` peers of `u` with smallest `S`, ties by ascending id.
    pub fn nearest(&self, u: usize, k: usize) -> Vec<(u32, f64)> {
        let mut below_one: Vec<(u32, f64)> = self
            .overlaps
            .row_iter(u)
            .filter(|&(v, _)| v as usize != u)
            .map(|(v, o)| (v, 1.0 - o / self.max_overlap))
            .filter(|&(_, s)| s < 1.0)
            .collect();
        below_one.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        below_one.truncate(k);
        if below_one.len() < k {
            let mut taken: Vec<u32> = below_one.iter().map(|&(v, _)| v).collect();
            taken.sort_unstable();
            let pad = (0..self.n() as u32)
                .filter(|&v| v as usize != u && taken.binary_search(&v).is_err())
                .take(k - below_one.len())
                .map(|v| (v, 1.0))
                .collect::<Vec<_>>();
            below_one.extend(pad);
        }
        below_one
    }
}

/// Runs `len` steps from `start`, calling `on_step` with each visited node;
/// stops early when `on_step` returns `false`.
fn walk<R: Rng>(
    t: &TransitionMatrix,
    start: usize,
    len: usize,
    rng: &mut R,
    mut on_step: impl FnMut(usize) -> bool,
) {
    let mut node = start;
    for _ in 0..len {
        node = t.step(node, rng.random::<f64>());
        if !on_step(node) {
            return;
        }
    }
}

pub fn random_walk_visit_counts(
    t: &TransitionMatrix,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> VisitCounts {
    let n = t.n();
    let counts = (0..n)
        .into_par_iter()
        .fold(
            || vec![0u64; n],
            |mut acc, start| {
                let mut rng = rng::stream(seed, Purpose::LandmarkWalks, start as u64);
                for _ in 0..walks_per_node {
                    walk(t, start, walk_length, &mut rng, |v| {
                        acc[v] += 1;
                        true
                    });
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    VisitCounts(counts)
}

/// Top `n_landmarks` nodes by visit count, ties by ascending id.
pub fn select_landmarks(
    counts: &VisitCounts,
    n_landmarks: usize,
) -> Result<LandmarkSet, HierarchyError> {
    let n = counts.0.len();
    if n_landmarks == 0 {
        return Err(HierarchyError::NoLandmarks);
    }
    if n_landmarks > n {
        return Err(HierarchyError::TooManyLandmarks {
            requested: n_landmarks,
            available: n,
        });
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| counts.0[b as usize].cmp(&counts.0[a as usize]).then(a.cmp(&b)));
    order.truncate(n_landmarks);
    Ok(LandmarkSet(order))
}

/// Maps every node to the landmark its walks reach first most often.
pub fn assign_influence(
    t: &TransitionMatrix,
    landmarks: &LandmarkSet,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> Result<InfluenceMap, HierarchyError> {
    let n = t.n();
    if landmarks.0.is_empty() {
        return Err(HierarchyError::NoLandmarks);
    }
    let mut is_landmark = vec![false; n];
    for &u in &landmarks.0 {
        is_landmark[u as usize] = true;
    }
    let map = (0..n)
        .into_par_iter()
        .map(|i| {
            if is_landmark[i] {
                return i as u32;
            }
            let mut rng = rng::stream(seed, Purpose::InfluenceWalks, i as u64);
            let mut hits: HashMap<u32, u32> = HashMap::new();
            for _ in 0..walks_per_node {
                walk(t, i, walk_length, &mut rng, |v| {
                    if is_landmark[v] {
                        *hits.entry(v as u32).or_default() += 1;
                        false
                    } else {
                        true
                    }
                });
            }
            hits.into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(u, _)| u)
                .unwrap_or_else(|| bfs_fallback(t, i, &is_landmark, landmarks))
        })
        .collect();
    Ok(InfluenceMap(map))
}

/// Breadth-first search from `start`; in the first layer that contains
/// landmarks, picks the one with the strongest best-path transition product.
fn bfs_fallback(t: &TransitionMatrix, start: usize, is_landmark: &[bool], landmarks: &LandmarkSet) -> u32 {
    let n = t.n();
    let mut strength = vec![0.0f64; n];
    let mut depth = vec![usize::MAX; n];
    depth[start] = 0;
    strength[start] = 1.0;
    let mut frontier = vec![start];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next: Vec<usize> = Vec::new();
        for &v in &frontier {
            for (w, p) in t.0.row_iter(v) {
                let w = w as usize;
                if depth[w] == usize::MAX {
                    depth[w] = d;
                    next.push(w);
                }
                if depth[w] == d {
                    strength[w] = strength[w].max(strength[v] * p);
                }
            }
        }
        let best = next
            .iter()
            .filter(|&&w| is_landmark[w])
            .max_by(|&&a, &&b| strength[a].total_cmp(&strength[b]).then(b.cmp(&a)));
        if let Some(&u) = best {
            return u as u32;
        }
        frontier = next;
    }
    log::warn!("node {start} cannot reach any landmark; assigning the top-ranked landmark");
    landmarks.0[0]
}

pub fn representation_matrix(
    t: &TransitionMatrix,
    landmarks: &LandmarkSet,
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> Result<RepresentationMatrix, HierarchyError> {
    if landmarks.0.is_empty() {
        return Err(HierarchyError::NoLandmarks);
    }
    let columns = landmarks
        .0
        .par_iter()
        .map(|&u| {
            let mut rng = rng::stream(seed, Purpose::RepresentationWalks, u as u64);
            let mut visits: HashMap<u32, u64> = HashMap::new();
            for _ in 0..walks_per_node {
                walk(t, u as usize, walk_length, &mut rng, |v| {
                    *visits.entry(v as u32).or_default() += 1;
                    true
                });
            }
            let total: u64 = visits.values().sum();
            let mut col: Vec<(u32, f64)> = visits
                .into_iter()
                .map(|(v, c)| (v, c as f64 / total as f64))
                .collect();
            col.sort_unstable_by_key(|&(v, _)| v);
            col
        })
        .collect();
    Ok(RepresentationMatrix {
        n_rows: t.n(),
        columns,
    })
}

pub fn landmark_similarity(r: &RepresentationMatrix) -> Result<LandmarkSimilarity, HierarchyError> {
    let m = r.columns.len();
    let mut by_node: Vec<Vec<(u32, f64)>> = vec![Vec::new(); r.n_rows];
    for (u, col) in r.columns.iter().enumerate() {
        for &(i, val) in col {
            by_node[i as usize].push((u as u32, val));
        }
    }
    let rows: Vec<Vec<(u32, f64)>> = (0..m)
        .into_par_iter()
        .map(|u| {
            let mut acc: HashMap<u32, f64> = HashMap::new();
            for &(i, r_iu) in &r.columns[u] {
                for &(v, r_iv) in &by_node[i as usize] {
                    *acc.entry(v).or_insert(0.0) += r_iu * r_iv;
                }
            }
            acc.into_iter().filter(|&(_, o)| o > 0.0).collect()
        })
        .collect();
    let overlaps = CsrMatrix::from_rows(rows);
    let max_overlap = overlaps.vals().iter().copied().fold(0.0, f64::max);
    if max_overlap <= 0.0 {
        return Err(HierarchyError::AllZeroR);
    }
    Ok(LandmarkSimilarity {
        overlaps,
        max_overlap,
    })
}

/// One resolution of the hierarchy. Graph indices are level-local.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub index: usize,
    /// Global feature rows, in level-local order.
    pub nodes: Vec<u32>,
    pub knn: KnnGraph,
    pub smooth: SmoothKnnParams,
    pub fuzzy: FuzzyGraph,
    pub symmetric: SymmetricGraph,
    pub transition: TransitionMatrix,
    /// Dissimilarity the level's graph was built from (levels >= 1).
    pub similarity: Option<LandmarkSimilarity>,
    /// Promotion to the next level; absent on the top level.
    pub promotion: Option<Promotion>,
    local: HashMap<u32, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub visit_counts: VisitCounts,
    pub landmarks: LandmarkSet,
    pub influence: InfluenceMap,
}

/// The persisted part of a level; everything else is recomputed from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub index: usize,
    pub nodes: Vec<u32>,
    pub knn: KnnGraph,
    pub similarity: Option<LandmarkSimilarity>,
    pub promotion: Option<Promotion>,
}

impl Level {
    fn from_graph(
        index: usize,
        nodes: Vec<u32>,
        knn: KnnGraph,
        similarity: Option<LandmarkSimilarity>,
        calibration: &CalibrationConfig,
    ) -> Result<Self, HierarchyError> {
        let smooth = calibrate_graph(&knn, calibration)?;
        let degenerate = smooth.rows.iter().filter(|r| r.degenerate).count();
        if degenerate > 0 {
            log::debug!("level {index}: {degenerate} degenerate smooth-kNN rows");
        }
        let (fuzzy, symmetric) = fuzzy_graph(&knn, &smooth)?;
        let transition = transition_matrix(&fuzzy)?;
        let local = nodes
            .iter()
            .enumerate()
            .map(|(l, &g)| (g, l as u32))
            .collect();
        Ok(Self {
            index,
            nodes,
            knn,
            smooth,
            fuzzy,
            symmetric,
            transition,
            similarity,
            promotion: None,
            local,
        })
    }

    pub fn from_record(record: LevelRecord, calibration: &CalibrationConfig) -> Result<Self, HierarchyError> {
        let mut level = Self::from_graph(
            record.index,
            record.nodes,
            record.knn,
            record.similarity,
            calibration,
        )?;
        level.promotion = record.promotion;
        Ok(level)
    }

    pub fn to_record(&self) -> LevelRecord {
        LevelRecord {
            index: self.index,
            nodes: self.nodes.clone(),
            knn: self.knn.clone(),
            similarity: self.similarity.clone(),
            promotion: self.promotion.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Level-local index of a global feature row.
    pub fn local_index(&self, global: u32) -> Option<usize> {
        self.local.get(&global).map(|&l| l as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub config: BuildConfig,
    pub levels: Vec<Level>,
}

impl Hierarchy {
    pub fn level(&self, index: usize) -> Result<&Level, HierarchyError> {
        self.levels.get(index).ok_or(HierarchyError::BadLevel(index))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Level::len).collect()
    }

    /// For each node of `level` (>= 1), the level-local ids of its region of
    /// influence at `level - 1`.
    pub fn fibers(&self, level: usize) -> Result<Vec<Vec<u32>>, HierarchyError> {
        if level == 0 {
            return Err(HierarchyError::BadLevel(level));
        }
        let upper = self.level(level)?;
        let lower = self.level(level - 1)?;
        let promotion = lower
            .promotion
            .as_ref()
            .ok_or(HierarchyError::BadLevel(level))?;
        // landmark local id at `level - 1` -> rank = local id at `level`
        let mut rank_of = vec![u32::MAX; lower.len()];
        for (rank, &u) in promotion.landmarks.0.iter().enumerate() {
            rank_of[u as usize] = rank as u32;
        }
        let mut fibers = vec![Vec::new(); upper.len()];
        for (i, &u) in promotion.influence.0.iter().enumerate() {
            fibers[rank_of[u as usize] as usize].push(i as u32);
        }
        Ok(fibers)
    }

    pub fn from_records(config: BuildConfig, records: Vec<LevelRecord>) -> Result<Self, HierarchyError> {
        let levels = records
            .into_iter()
            .map(|r| Level::from_record(r, &config.calibration))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { config, levels })
    }
}

fn level_seed(seed: u64, level: usize) -> u64 {
    seed.wrapping_add((level as u64).wrapping_mul(0xA076_1D64_78BD_642F))
}

/// `k` nearest peers per landmark under `S`.
pub fn knn_from_similarity(s: &LandmarkSimilarity, k: usize) -> KnnGraph {
    let rows = (0..s.n()).into_par_iter().map(|u| s.nearest(u, k)).collect();
    KnnGraph::from_rows(k, rows)
}

/// Builds every level's graphs and promotions. Layouts are computed separately.
pub fn build_hierarchy(matrix: &EmbeddingMatrix, config: &BuildConfig) -> Result<Hierarchy, HierarchyError> {
    let sizes = config.level_sizes(matrix.rows())?;
    let knn = build_knn(
        matrix,
        &KnnParams {
            k: config.k,
            metric: config.metric,
            exact_threshold: config.exact_threshold,
            seed: config.seed,
        },
    )?;
    let mut levels = vec![Level::from_graph(
        0,
        (0..matrix.rows() as u32).collect(),
        knn,
        None,
        &config.calibration,
    )?];

    for (next, &size) in sizes.iter().enumerate().skip(1) {
        let current = levels.last_mut().expect("level 0 exists");
        let seed = level_seed(config.seed, current.index);
        let t = &current.transition;
        let counts = random_walk_visit_counts(t, config.walks_per_node, config.walk_length, seed);
        let landmarks = select_landmarks(&counts, size)?;
        let influence = assign_influence(t, &landmarks, config.walks_per_node, config.walk_length, seed)?;
        let r = representation_matrix(t, &landmarks, config.walks_per_node, config.walk_length, seed)?;
        let s = landmark_similarity(&r)?;
        let nodes: Vec<u32> = landmarks.0.iter().map(|&u| current.nodes[u as usize]).collect();
        current.promotion = Some(Promotion {
            visit_counts: counts,
            landmarks,
            influence,
        });
        let k = config.k.min(size - 1);
        let knn = knn_from_similarity(&s, k);
        levels.push(Level::from_graph(next, nodes, knn, Some(s), &config.calibration)?);
    }
    Ok(Hierarchy {
        config: config.clone(),
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: Vec<Vec<(u32, f64)>>) -> TransitionMatrix {
        TransitionMatrix(CsrMatrix::from_rows(rows))
    }

    #[test]
    fn sizes_round_half_up() {
        let cfg = BuildConfig {
            sizing: LevelSizing::Fractions(vec![0.2, 0.25]),
            ..BuildConfig::default()
        };
        assert_eq!(cfg.level_sizes(1000).unwrap(), vec![1000, 200, 50]);
        let cfg = BuildConfig::default();
        assert_eq!(cfg.level_sizes(36864).unwrap(), vec![36864, 7373, 1475]);
        assert_eq!(cfg.level_sizes(3000).unwrap(), vec![3000, 600, 120]);
        let single = BuildConfig {
            sizing: LevelSizing::Fractions(vec![]),
            ..BuildConfig::default()
        };
        assert_eq!(single.level_sizes(50).unwrap(), vec![50]);
    }

    #[test]
    fn sizes_reject_small_and_non_decreasing() {
        let cfg = BuildConfig::default();
        assert_eq!(
            cfg.level_sizes(100),
            Err(HierarchyError::LevelTooSmall { level: 2, size: 4 })
        );
        let counts = BuildConfig {
            sizing: LevelSizing::Counts(vec![600, 700]),
            ..BuildConfig::default()
        };
        assert!(matches!(
            counts.level_sizes(3000),
            Err(HierarchyError::NotDecreasing { level: 2, .. })
        ));
        let bad = BuildConfig {
            sizing: LevelSizing::Fractions(vec![1.5]),
            ..BuildConfig::default()
        };
        assert!(matches!(bad.level_sizes(3000), Err(HierarchyError::InvalidConfig(_))));
    }

    #[test]
    fn alternating_pair_counts() {
        let tm = t(vec![vec![(1, 1.0)], vec![(0, 1.0)]]);
        for seed in [0, 1, 99] {
            assert_eq!(random_walk_visit_counts(&tm, 1, 2, seed).0, vec![2, 2]);
        }
        assert_eq!(random_walk_visit_counts(&tm, 3, 0, 7).0, vec![0, 0]);
    }

    #[test]
    fn landmark_ranking_ties() {
        let counts = VisitCounts(vec![5, 3, 3, 1]);
        assert_eq!(select_landmarks(&counts, 2).unwrap().0, vec![0, 1]);
        let flat = VisitCounts(vec![4; 10]);
        assert_eq!(select_landmarks(&flat, 3).unwrap().0, vec![0, 1, 2]);
        assert_eq!(select_landmarks(&counts, 4).unwrap().0, vec![0, 1, 2, 3]);
        assert_eq!(
            select_landmarks(&counts, 5),
            Err(HierarchyError::TooManyLandmarks {
                requested: 5,
                available: 4
            })
        );
    }

    #[test]
    fn forced_absorption_and_identity_influence() {
        // 0 -> 1 always; 1 <-> 2
        let tm = t(vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(1, 1.0)]]);
        let map = assign_influence(&tm, &LandmarkSet(vec![1]), 5, 3, 1).unwrap();
        assert_eq!(map.0, vec![1, 1, 1]);
        let all = assign_influence(&tm, &LandmarkSet(vec![2, 0, 1]), 5, 3, 1).unwrap();
        assert_eq!(all.0, vec![0, 1, 2]);
    }

    #[test]
    fn bfs_fallback_when_walks_too_short() {
        // chain 0 -> 1 -> 2 -> 3, landmark at 3 is three hops away
        let tm = t(vec![
            vec![(1, 1.0)],
            vec![(2, 1.0)],
            vec![(3, 1.0)],
            vec![(2, 1.0)],
        ]);
        let map = assign_influence(&tm, &LandmarkSet(vec![3]), 4, 1, 0).unwrap();
        assert_eq!(map.0, vec![3, 3, 3, 3]);
    }

    #[test]
    fn bfs_prefers_strongest_connection() {
        // node 0 reaches landmarks 1 (0.2) and 2 (0.8) in one hop, but walks of
        // length 0 never move
        let tm = t(vec![vec![(1, 0.2), (2, 0.8)], vec![(0, 1.0)], vec![(0, 1.0)]]);
        let map = assign_influence(&tm, &LandmarkSet(vec![1, 2]), 1, 0, 0).unwrap();
        assert_eq!(map.0[0], 2);
    }

    #[test]
    fn isolated_pair_representation() {
        let tm = t(vec![vec![(1, 1.0)], vec![(0, 1.0)], vec![(3, 1.0)], vec![(2, 1.0)]]);
        let r = representation_matrix(&tm, &LandmarkSet(vec![0, 2]), 10, 1, 3).unwrap();
        assert_eq!(r.columns[0], vec![(1, 1.0)]);
        assert_eq!(r.columns[1], vec![(3, 1.0)]);
        let s = landmark_similarity(&r).unwrap();
        assert_eq!(s.overlap(0, 1), 0.0);
        assert_eq!(s.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn similarity_of_identical_columns() {
        let r = RepresentationMatrix {
            n_rows: 3,
            columns: vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)], vec![(2, 1.0)]],
        };
        let s = landmark_similarity(&r).unwrap();
        assert_eq!(s.get(0, 1), s.get(0, 0));
        assert_eq!(s.get(0, 1), s.get(1, 1));
        // max overlap is column 2 with itself (1.0)
        assert_eq!(s.get(2, 2), 0.0);
        assert_eq!(s.get(0, 1), 0.5);
        assert_eq!(s.get(0, 2), 1.0);
    }

    #[test]
    fn all_zero_r_rejected() {
        let r = RepresentationMatrix {
            n_rows: 2,
            columns: vec![vec![], vec![]],
        };
        assert_eq!(landmark_similarity(&r), Err(HierarchyError::AllZeroR));
    }

    #[test]
    fn nearest_pads_with_unrelated_peers() {
        let r = RepresentationMatrix {
            n_rows: 4,
            columns: vec![
                vec![(0, 1.0)],
                vec![(0, 0.5), (1, 0.5)],
                vec![(2, 1.0)],
                vec![(3, 1.0)],
            ],
        };
        let s = landmark_similarity(&r).unwrap();
        let near = s.nearest(0, 3);
        assert_eq!(near[0], (1, 0.5));
        assert_eq!(near[1], (2, 1.0));
        assert_eq!(near[2], (3, 1.0));
    }
}
