use conceptmap_core::neighbor_graph::*;
use conceptmap_core::EmbeddingMatrix;
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = EmbeddingMatrix> {
    (12usize..40, 2usize..6).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0f32..5.0, n * d).prop_filter_map("zero row", move |data| {
            let m = EmbeddingMatrix::new(n, d, data).ok()?;
            m.validate_embedding().ok()?;
            Some(m)
        })
    })
}

fn graphs(m: &EmbeddingMatrix, k: usize, metric: Metric) -> (KnnGraph, SmoothKnnParams, FuzzyGraph, SymmetricGraph) {
    let knn = build_knn(m, &KnnParams { k, metric, ..KnnParams::default() }).unwrap();
    let smooth = calibrate_graph(&knn, &CalibrationConfig::default()).unwrap();
    let (fuzzy, sym) = fuzzy_graph(&knn, &smooth).unwrap();
    (knn, smooth, fuzzy, sym)
}

/// Brute-force neighbor distances of row `i`, sorted.
fn brute_distances(m: &EmbeddingMatrix, i: usize, metric: Metric) -> Vec<f64> {
    let norm = |r: &[f32]| r.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    let mut d: Vec<f64> = (0..m.rows())
        .filter(|&j| j != i)
        .map(|j| {
            let (a, b) = (m.row(i), m.row(j));
            match metric {
                Metric::Euclidean => a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt(),
                Metric::Cosine => {
                    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
                    1.0 - dot / (norm(a) * norm(b))
                }
            }
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_knn_matches_brute_force(m in matrix_strategy(), k in 2usize..8, cosine in any::<bool>()) {
        let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
        let (knn, ..) = graphs(&m, k, metric);
        for i in 0..m.rows() {
            let brute = brute_distances(&m, i, metric);
            for (got, want) in knn.distances(i).iter().zip(&brute[..k]) {
                prop_assert!((got - want).abs() < 1e-5, "row {i}: {got} vs {want}");
            }
            prop_assert!(!knn.neighbors(i).contains(&(i as u32)));
        }
    }

    #[test]
    fn transition_rows_are_stochastic(m in matrix_strategy(), k in 2usize..8) {
        let (_, _, fuzzy, _) = graphs(&m, k, Metric::Euclidean);
        let t = transition_matrix(&fuzzy).unwrap();
        for i in 0..t.n() {
            let s: f64 = t.0.row(i).1.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
            prop_assert!(t.0.row(i).1.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn symmetric_graph_equals_transpose(m in matrix_strategy(), k in 2usize..8) {
        let (_, _, _, sym) = graphs(&m, k, Metric::Cosine);
        prop_assert_eq!(&sym.0.transpose(), &sym.0);
        prop_assert!(sym.0.vals().iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn calibration_hits_target_and_nearest_weight_is_one(m in matrix_strategy(), k in 2usize..8) {
        let (knn, smooth, fuzzy, _) = graphs(&m, k, Metric::Euclidean);
        let target = (k as f64).log2();
        for i in 0..knn.n() {
            let s = &smooth.rows[i];
            let mass: f64 = knn.distances(i).iter().map(|&d| (-(d - s.rho).max(0.0) / s.sigma).exp()).sum();
            if !s.degenerate {
                prop_assert!((mass - target).abs() <= DEFAULT_TOL, "row {i}: mass {mass}");
            }
            let nearest = knn.neighbors(i)[0];
            prop_assert_eq!(fuzzy.0.get(i, nearest), Some(1.0));
            prop_assert!(fuzzy.0.row(i).1.iter().all(|&p| p <= 1.0));
        }
    }

    #[test]
    fn sigma_solves_a_monotone_equation(mut d in prop::collection::vec(0.0f64..10.0, 3..30)) {
        d.sort_by(f64::total_cmp);
        let s = calibrate_smooth_knn(&d, 1e-9, 200).unwrap();
        let mass = |sigma: f64| d.iter().map(|&x| (-(x - d[0]).max(0.0) / sigma).exp()).sum::<f64>();
        let target = (d.len() as f64).log2();
        if !s.degenerate {
            prop_assert!((mass(s.sigma) - target).abs() <= 1e-9);
            prop_assert!(mass(s.sigma * 0.99) <= mass(s.sigma) && mass(s.sigma) <= mass(s.sigma * 1.01));
        } else {
            // every distance beyond rho ties with it, so mass never drops to the target
            prop_assert!(mass(MIN_SIGMA) > target);
        }
    }
}

#[test]
fn nn_descent_recall_on_sampled_rows() {
    let (m, _) = conceptmap_core::fixtures::gaussian_blobs(3000, 64, 3, 42);
    let rows = PreparedRows::new(&m, Metric::Cosine).unwrap();
    let g = nn_descent(&rows, 15, 42, &NnDescentConfig::default());
    let sample: Vec<usize> = (0..100).map(|i| i * 29 + 3).collect();
    let recall = sampled_recall(&g, &rows, &sample);
    assert!(recall >= 0.95, "recall {recall}");
    let forced = build_knn(&m, &KnnParams { exact_threshold: 100, ..KnnParams::default() }).unwrap();
    assert_eq!(forced, g);
}
