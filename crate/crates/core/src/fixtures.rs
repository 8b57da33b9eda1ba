//! Synthetic inputs for tests, benches and demos.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::ingest::{ActivationContext, EmbeddingMatrix, FeatureCatalog, FeatureRecord};
use crate::rng::{self, Purpose};

/// `n` points in `d` dimensions drawn around `clusters` centers.
///
/// Centers are N(0, 4²) per coordinate, points add N(0, 1) noise. Labels are
/// contiguous: point i belongs to cluster `i * clusters / n`.
pub fn gaussian_blobs(n: usize, d: usize, clusters: usize, seed: u64) -> (EmbeddingMatrix, Vec<usize>) {
    assert!(clusters >= 1 && n >= clusters && d >= 1);
    let mut rng = rng::stream(seed, Purpose::Fixture, 0);
    let wide = Normal::new(0.0f64, 4.0).unwrap();
    let unit = Normal::new(0.0f64, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..d).map(|_| wide.sample(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i * clusters / n;
        labels.push(c);
        data.extend(centers[c].iter().map(|&x| (x + unit.sample(&mut rng)) as f32));
    }
    (EmbeddingMatrix::new(n, d, data).expect("finite fixture"), labels)
}

const THEMES: [(&str, &[&str]); 5] = [
    ("punctuation", &["dash", "comma", "semicolon", "ellipsis", "hyphen"]),
    ("code", &["bracket", "indentation", "keyword", "operator", "identifier"]),
    ("time", &["month", "weekday", "year", "hour", "season"]),
    ("places", &["city", "river", "country", "street", "mountain"]),
    ("emotion", &["anger", "joy", "fear", "surprise", "sadness"]),
];

/// A catalog and matching embeddings of `n` toy features in five themes.
///
/// Feature ids are `1000 + row`. Embeddings are blob samples, one blob per
/// theme, so the hierarchy has clear regions to find.
pub fn toy_catalog(n: usize, d: usize, seed: u64) -> (FeatureCatalog, EmbeddingMatrix) {
    let (matrix, labels) = gaussian_blobs(n, d, THEMES.len(), seed);
    let mut rng = rng::stream(seed, Purpose::Fixture, 1);
    let records = labels
        .iter()
        .enumerate()
        .map(|(row, &theme)| {
            let (category, words) = THEMES[theme];
            let word = words[rng.random_range(0..words.len())];
            let tokens: Vec<String> = ["the", word, "again"].iter().map(|s| s.to_string()).collect();
            FeatureRecord {
                feature_id: 1000 + row as u64,
                explanation: format!("fires on {word} tokens ({category}, variant {row})"),
                contexts: vec![ActivationContext {
                    tokens,
                    target_index: 1,
                    activation: rng.random_range(0.5f32..8.0),
                }],
                category: Some(category.to_string()),
            }
        })
        .collect();
    (FeatureCatalog::from_records(records).expect("unique ids"), matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_labelled_contiguously() {
        let (a, la) = gaussian_blobs(30, 4, 3, 9);
        let (b, lb) = gaussian_blobs(30, 4, 3, 9);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert_eq!(&la[..10], &[0; 10]);
        assert_eq!(&la[20..], &[2; 10]);
    }

    #[test]
    fn toy_catalog_mentions_dash() {
        let (cat, m) = toy_catalog(100, 8, 1);
        assert_eq!(cat.len(), m.rows());
        assert!(cat.records().iter().any(|r| r.explanation.contains("dash")));
    }
}
