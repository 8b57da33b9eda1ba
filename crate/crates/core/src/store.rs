//! On-disk explorer artifact.
//!
//! ```text
//! <dir>/manifest.json             versions, config, level summary, FNV-1a checksums
//! <dir>/catalog.jsonl             feature metadata, one record per line
//! <dir>/embeddings.cxem           explanation embeddings
//! <dir>/levels/<l>.positions.cxem 2-D layout of level l
//! <dir>/levels/<l>.relations.json nodes, kNN graph, S, promotion, layout trace
//! <dir>/annotations.log           annotation records, one per line, last write wins
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::hash::Hasher;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{BuildConfig, Hierarchy, HierarchyError, LevelRecord};
use crate::ingest::{self, EmbeddingMatrix, FeatureCatalog, IngestError};
use crate::layout::LevelEmbedding;

pub const FORMAT_VERSION: &str = "1.0";
const FORMAT_MAJOR: u64 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CATALOG_FILE: &str = "catalog.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.cxem";
pub const ANNOTATIONS_FILE: &str = "annotations.log";

pub fn positions_file(level: usize) -> String {
    format!("levels/{level}.positions.cxem")
}

pub fn relations_file(level: usize) -> String {
    format!("levels/{level}.relations.json")
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Serialization(String),
    #[error("checksum mismatch for {file}")]
    ChecksumMismatch { file: String },
    #[error("unsupported artifact version {0}")]
    VersionUnsupported(String),
    #[error("missing payload {0}")]
    MissingPayload(String),
    #[error("annotation scope does not exist: {0}")]
    UnknownScope(String),
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
}

impl From<serde_json::Error> for StoreError {
    fn from(e: serde_json::Error) -> Self {
        StoreError::Serialization(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub index: usize,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub created_at: String,
    pub seed: u64,
    pub n_features: usize,
    pub dims: usize,
    pub config: BuildConfig,
    pub levels: Vec<LevelSummary>,
    /// Relative path → 64-bit FNV-1a of the file contents, hex.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnnotationScope {
    Feature { feature_id: u64 },
    /// A landmark at `level` (>= 1) and its region of influence below.
    Region { level: usize, landmark_id: u32 },
    Lasso { level: usize, node_ids: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub scope: AnnotationScope,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<String>,
    pub created_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFilter {
    pub level: Option<usize>,
    pub feature_id: Option<u64>,
}

impl AnnotationFilter {
    pub fn matches(&self, a: &Annotation) -> bool {
        let level_ok = self.level.is_none_or(|l| match &a.scope {
            AnnotationScope::Region { level, .. } | AnnotationScope::Lasso { level, .. } => *level == l,
            AnnotationScope::Feature { .. } => false,
        });
        let feature_ok = self.feature_id.is_none_or(|f| {
            matches!(&a.scope, AnnotationScope::Feature { feature_id } if *feature_id == f)
        });
        level_ok && feature_ok
    }
}

#[derive(Debug, Clone)]
pub struct ExplorerArtifact {
    pub created_at: String,
    pub catalog: FeatureCatalog,
    pub embeddings: EmbeddingMatrix,
    pub hierarchy: Hierarchy,
    pub positions: Vec<LevelEmbedding>,
    pub annotations: BTreeMap<String, Annotation>,
    /// Directory the artifact was loaded from or saved to; annotation writes
    /// are appended to its log.
    pub directory: Option<PathBuf>,
}

impl PartialEq for ExplorerArtifact {
    fn eq(&self, other: &Self) -> bool {
        self.created_at == other.created_at
            && self.catalog == other.catalog
            && self.embeddings == other.embeddings
            && self.hierarchy == other.hierarchy
            && self.positions == other.positions
            && self.annotations == other.annotations
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl ExplorerArtifact {
    pub fn new(
        catalog: FeatureCatalog,
        embeddings: EmbeddingMatrix,
        hierarchy: Hierarchy,
        positions: Vec<LevelEmbedding>,
    ) -> Self {
        Self {
            created_at: now_rfc3339(),
            catalog,
            embeddings,
            hierarchy,
            positions,
            annotations: BTreeMap::new(),
            directory: None,
        }
    }

    pub fn level_summary(&self) -> Vec<LevelSummary> {
        self.hierarchy
            .sizes()
            .into_iter()
            .enumerate()
            .map(|(index, size)| LevelSummary { index, size })
            .collect()
    }

    fn check_scope(&self, scope: &AnnotationScope) -> Result<(), StoreError> {
        let levels = &self.hierarchy.levels;
        match scope {
            AnnotationScope::Feature { feature_id } => {
                if self.catalog.get(*feature_id).is_none() {
                    return Err(StoreError::UnknownScope(format!("feature {feature_id}")));
                }
            }
            AnnotationScope::Region { level, landmark_id } => {
                let ok = *level >= 1
                    && levels.get(*level).is_some_and(|l| l.local_index(*landmark_id).is_some());
                if !ok {
                    return Err(StoreError::UnknownScope(format!(
                        "region of landmark {landmark_id} at level {level}"
                    )));
                }
            }
            AnnotationScope::Lasso { level, node_ids } => {
                let lvl = levels
                    .get(*level)
                    .ok_or_else(|| StoreError::UnknownScope(format!("level {level}")))?;
                if node_ids.is_empty() {
                    return Err(StoreError::UnknownScope("empty lasso".into()));
                }
                if let Some(bad) = node_ids.iter().find(|&&g| lvl.local_index(g).is_none()) {
                    return Err(StoreError::UnknownScope(format!("node {bad} at level {level}")));
                }
            }
        }
        Ok(())
    }

    /// Inserts or replaces by id and appends to the on-disk log when the
    /// artifact has a directory.
    pub fn upsert_annotation(&mut self, annotation: Annotation) -> Result<String, StoreError> {
        if annotation.id.trim().is_empty() {
            return Err(StoreError::InvalidAnnotation("empty id".into()));
        }
        if let Some(color) = &annotation.color {
            let hex = color.strip_prefix('#').unwrap_or("");
            if !matches!(hex.len(), 3 | 6 | 8) || !hex.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(StoreError::InvalidAnnotation(format!("bad color {color}")));
            }
        }
        self.check_scope(&annotation.scope)?;
        if let Some(dir) = &self.directory {
            let mut log = OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(ANNOTATIONS_FILE))?;
            let mut line = serde_json::to_vec(&annotation)?;
            line.push(b'\n');
            log.write_all(&line)?;
        }
        let id = annotation.id.clone();
        self.annotations.insert(id.clone(), annotation);
        Ok(id)
    }

    pub fn list_annotations(&self, filter: &AnnotationFilter) -> Vec<&Annotation> {
        self.annotations.values().filter(|a| filter.matches(a)).collect()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RelationsFile {
    #[serde(flatten)]
    record: LevelRecord,
    epoch_count: usize,
    objective_trace: Vec<f64>,
}

/// Writes every payload, then the manifest. Compacts the annotation log.
pub fn save_artifact(artifact: &ExplorerArtifact, dir: impl AsRef<Path>) -> Result<Manifest, StoreError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("levels"))?;
    let mut checksums = BTreeMap::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<(), StoreError> {
        write_atomic(&dir.join(&name), &bytes)?;
        checksums.insert(name, format!("{:016x}", fnv1a64(&bytes)));
        Ok(())
    };

    let mut catalog = Vec::new();
    ingest::write_feature_metadata(&artifact.catalog, &mut catalog)?;
    put(CATALOG_FILE.into(), catalog)?;
    put(EMBEDDINGS_FILE.into(), ingest::cxem_bytes(&artifact.embeddings))?;
    for (l, level) in artifact.hierarchy.levels.iter().enumerate() {
        let emb = artifact
            .positions
            .get(l)
            .ok_or_else(|| StoreError::MissingPayload(positions_file(l)))?;
        let flat: Vec<f32> = emb.positions.iter().flatten().copied().collect();
        let matrix = EmbeddingMatrix::new(emb.positions.len(), 2, flat)?;
        put(positions_file(l), ingest::cxem_bytes(&matrix))?;
        let relations = RelationsFile {
            record: level.to_record(),
            epoch_count: emb.epoch_count,
            objective_trace: emb.objective_trace.clone(),
        };
        put(relations_file(l), serde_json::to_vec(&relations)?)?;
    }

    let mut log = Vec::new();
    for a in artifact.annotations.values() {
        serde_json::to_writer(&mut log, a)?;
        log.push(b'\n');
    }
    write_atomic(&dir.join(ANNOTATIONS_FILE), &log)?;

    let manifest = Manifest {
        format_version: FORMAT_VERSION.into(),
        created_at: artifact.created_at.clone(),
        seed: artifact.hierarchy.config.seed,
        n_features: artifact.catalog.len(),
        dims: artifact.embeddings.dims(),
        config: artifact.hierarchy.config.clone(),
        levels: artifact.level_summary(),
        checksums,
    };
    write_atomic(&dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest, StoreError> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingPayload(MANIFEST_FILE.into()),
        _ => StoreError::Io(e),
    })?;
    let manifest: Manifest = serde_json::from_slice(&bytes)?;
    let major = manifest
        .format_version
        .split('.')
        .next()
        .and_then(|m| m.parse::<u64>().ok());
    if major != Some(FORMAT_MAJOR) {
        return Err(StoreError::VersionUnsupported(manifest.format_version));
    }
    Ok(manifest)
}

fn read_verified(dir: &Path, manifest: &Manifest, name: &str) -> Result<Vec<u8>, StoreError> {
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| StoreError::MissingPayload(name.into()))?;
    let bytes = fs::read(dir.join(name)).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => StoreError::MissingPayload(name.into()),
        _ => StoreError::Io(e),
    })?;
    if &format!("{:016x}", fnv1a64(&bytes)) != expected {
        return Err(StoreError::ChecksumMismatch { file: name.into() });
    }
    Ok(bytes)
}

fn replay_annotations(path: &Path) -> Result<BTreeMap<String, Annotation>, StoreError> {
    let mut out = BTreeMap::new();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(e.into()),
    };
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: Annotation = serde_json::from_str(&line)?;
        out.insert(a.id.clone(), a);
    }
    Ok(out)
}

pub fn load_artifact(dir: impl AsRef<Path>) -> Result<ExplorerArtifact, StoreError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let catalog = ingest::parse_feature_metadata(read_verified(dir, &manifest, CATALOG_FILE)?.as_slice())?;
    let embeddings = ingest::read_cxem(read_verified(dir, &manifest, EMBEDDINGS_FILE)?.as_slice())?;
    let mut records = Vec::new();
    let mut positions = Vec::new();
    for summary in &manifest.levels {
        let l = summary.index;
        let rel: RelationsFile =
            serde_json::from_slice(&read_verified(dir, &manifest, &relations_file(l))?)?;
        let matrix = ingest::read_cxem(read_verified(dir, &manifest, &positions_file(l))?.as_slice())?;
        if matrix.rows() != summary.size || matrix.dims() != 2 {
            return Err(IngestError::ShapeMismatch {
                found: matrix.rows(),
                expected: summary.size,
            }
            .into());
        }
        positions.push(LevelEmbedding {
            level: l,
            positions: matrix.data().chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
            epoch_count: rel.epoch_count,
            objective_trace: rel.objective_trace,
        });
        records.push(rel.record);
    }
    let hierarchy = Hierarchy::from_records(manifest.config.clone(), records)?;
    Ok(ExplorerArtifact {
        created_at: manifest.created_at,
        catalog,
        embeddings,
        hierarchy,
        positions,
        annotations: replay_annotations(&dir.join(ANNOTATIONS_FILE))?,
        directory: Some(dir.to_path_buf()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn filter_semantics() {
        let region = Annotation {
            id: "r".into(),
            scope: AnnotationScope::Region { level: 1, landmark_id: 42 },
            label: "punctuation".into(),
            color: None,
            created_at: "t".into(),
        };
        let feature = Annotation {
            id: "f".into(),
            scope: AnnotationScope::Feature { feature_id: 7 },
            label: "x".into(),
            color: Some("#ff0000".into()),
            created_at: "t".into(),
        };
        let level1 = AnnotationFilter { level: Some(1), feature_id: None };
        assert!(level1.matches(&region) && !level1.matches(&feature));
        let f7 = AnnotationFilter { level: None, feature_id: Some(7) };
        assert!(f7.matches(&feature) && !f7.matches(&region));
        assert!(AnnotationFilter::default().matches(&region));
        let json = serde_json::to_string(&region.scope).unwrap();
        assert_eq!(json, r#"{"kind":"region","level":1,"landmark_id":42}"#);
    }
}
