//! Hierarchical landmark maps of feature explanations.
//!
//! Embeddings of feature explanations are summarized by a stack of
//! progressively smaller landmark levels. Each level has its own kNN graph,
//! a 2-D layout, and a mapping from every lower-level node to the landmark
//! whose region it falls in, so a user can start at the coarsest level and
//! drill into any region.

pub mod analytics;
pub mod fixtures;
pub mod hierarchy;
pub mod ingest;
pub mod layout;
pub mod neighbor_graph;
pub mod sparse;
pub mod store;

mod rng;

pub use analytics::{duplicate_groups, outlier_scores, region_sizes, trustworthiness, AnalyticsError, DuplicateGroup};
pub use hierarchy::{build_hierarchy, BuildConfig, Hierarchy, HierarchyError, Level, LevelSizing};
pub use ingest::{EmbeddingMatrix, FeatureCatalog, FeatureRecord, IngestError};
pub use layout::{drill_down, embed_all, embed_level, InitMethod, LayoutError, LayoutParams, LevelEmbedding, SubEmbedding};
pub use neighbor_graph::{GraphError, KnnGraph, Metric};
pub use store::{load_artifact, save_artifact, Annotation, AnnotationScope, ExplorerArtifact, Manifest, StoreError};
