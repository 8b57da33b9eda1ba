//! HTTP API over a loaded explorer artifact.
//!
//! All routes live under `/api` and speak JSON, except
//! `GET /api/levels/{l}/points.bin` which returns the level's positions as a
//! CXEM payload. Errors are `{"code", "message"}` objects.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use conceptmap_core::analytics::{self, DEFAULT_DUPLICATE_THRESHOLD, DEFAULT_OUTLIER_M};
use conceptmap_core::ingest::{self, ActivationContext, EmbeddingMatrix};
use conceptmap_core::layout::{self, SubEmbedding};
use conceptmap_core::store::{self, Annotation, AnnotationFilter, AnnotationScope};
use conceptmap_core::{DuplicateGroup, ExplorerArtifact, StoreError};

mod error;

pub use error::{ApiError, ErrorBody};

pub const DEFAULT_DRILLDOWN_BUDGET: usize = 50_000;
pub const NEIGHBOR_COUNT: usize = 10;
pub const DEFAULT_SEARCH_LIMIT: usize = 20;
pub const DEFAULT_OUTLIER_LIMIT: usize = 50;

type ApiResult<T> = Result<T, ApiError>;

struct Loaded {
    artifact: RwLock<ExplorerArtifact>,
    /// Unit-length copies of the explanation embeddings.
    unit_rows: Vec<f32>,
    dims: usize,
    duplicates: Mutex<HashMap<u64, Arc<Vec<DuplicateGroup>>>>,
}

#[derive(Clone)]
pub struct AppState {
    loaded: Option<Arc<Loaded>>,
    pub drilldown_budget: usize,
}

fn unit_rows(m: &EmbeddingMatrix) -> Vec<f32> {
    let mut out = Vec::with_capacity(m.data().len());
    for i in 0..m.rows() {
        let row = m.row(i);
        let norm = row.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let inv = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        out.extend(row.iter().map(|&x| (x as f64 * inv) as f32));
    }
    out
}

impl AppState {
    pub fn new(artifact: Option<ExplorerArtifact>) -> Self {
        let loaded = artifact.map(|a| {
            Arc::new(Loaded {
                unit_rows: unit_rows(&a.embeddings),
                dims: a.embeddings.dims(),
                artifact: RwLock::new(a),
                duplicates: Mutex::new(HashMap::new()),
            })
        });
        Self {
            loaded,
            drilldown_budget: DEFAULT_DRILLDOWN_BUDGET,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        Ok(Self::new(Some(store::load_artifact(dir)?)))
    }

    fn loaded(&self) -> ApiResult<&Arc<Loaded>> {
        self.loaded.as_ref().ok_or_else(ApiError::not_loaded)
    }
}

impl Loaded {
    fn read(&self) -> std::sync::RwLockReadGuard<'_, ExplorerArtifact> {
        self.artifact.read().unwrap_or_else(|e| e.into_inner())
    }

    fn cosine(&self, i: usize, query: &[f32]) -> f64 {
        let row = &self.unit_rows[i * self.dims..(i + 1) * self.dims];
        row.iter().zip(query).map(|(&a, &b)| a as f64 * b as f64).sum()
    }

    /// Rows by cosine to `query` (unit length), best first, ties by row.
    fn ranked(&self, query: &[f32], skip: Option<usize>, limit: usize) -> Vec<(usize, f64)> {
        let n = self.unit_rows.len() / self.dims.max(1);
        let mut scored: Vec<(usize, f64)> = (0..n)
            .filter(|&i| Some(i) != skip)
            .map(|i| (i, self.cosine(i, query)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(limit);
        scored
    }
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/hierarchy", get(get_hierarchy))
        .route("/levels/{level}/{resource}", get(get_level_resource))
        .route("/features/{id}", get(get_feature))
        .route("/drilldown", post(post_drilldown))
        .route("/search", post(post_search))
        .route("/analytics/outliers", get(get_outliers))
        .route("/analytics/region-sizes", get(get_region_sizes))
        .route("/analytics/duplicates", get(get_duplicates))
        .route("/annotations", get(get_annotations).post(post_annotation));
    Router::new()
        .nest("/api", api)
        .fallback(|| async { ApiError::not_found("NOT_FOUND", "no such route") })
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("BAD_REQUEST", e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> ApiResult<T> {
    q.map(|Query(v)| v)
        .map_err(|e| ApiError::bad_request("BAD_REQUEST", e.body_text()))
}

fn parse_level(raw: &str) -> ApiResult<usize> {
    raw.parse()
        .map_err(|_| ApiError::bad_request("BAD_REQUEST", format!("invalid level {raw:?}")))
}

fn check_level(a: &ExplorerArtifact, level: usize) -> ApiResult<()> {
    if level < a.hierarchy.levels.len() {
        Ok(())
    } else {
        Err(ApiError::bad_level(level))
    }
}

#[derive(Serialize)]
struct LevelMeta {
    index: usize,
    size: usize,
}

async fn get_hierarchy(State(state): State<AppState>) -> ApiResult<Json<Value>> {
    let loaded = state.loaded()?;
    let a = loaded.read();
    let levels: Vec<LevelMeta> = a
        .hierarchy
        .sizes()
        .into_iter()
        .enumerate()
        .map(|(index, size)| LevelMeta { index, size })
        .collect();
    Ok(Json(serde_json::json!({
        "levels": levels,
        "config": a.hierarchy.config,
        "seed": a.hierarchy.config.seed,
        "n_features": a.catalog.len(),
        "dims": a.embeddings.dims(),
        "created_at": a.created_at,
    })))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PointRecord {
    pub node_id: u32,
    pub feature_id: u64,
    pub x: f32,
    pub y: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_size: Option<usize>,
    pub category: Option<String>,
    pub annotation_labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LevelPointsResponse {
    pub level: usize,
    pub points: Vec<PointRecord>,
}

/// Labels attached to each node of `level`, in annotation-id order.
fn labels_by_node(a: &ExplorerArtifact, level: usize) -> HashMap<u32, Vec<String>> {
    let mut out: HashMap<u32, Vec<String>> = HashMap::new();
    for ann in a.annotations.values() {
        match &ann.scope {
            AnnotationScope::Feature { feature_id } => {
                if let Some(row) = a.catalog.row_of(*feature_id) {
                    out.entry(row as u32).or_default().push(ann.label.clone());
                }
            }
            AnnotationScope::Region { level: l, landmark_id } if *l == level => {
                out.entry(*landmark_id).or_default().push(ann.label.clone());
            }
            AnnotationScope::Lasso { level: l, node_ids } if *l == level => {
                for &g in node_ids {
                    out.entry(g).or_default().push(ann.label.clone());
                }
            }
            _ => {}
        }
    }
    out
}

fn level_points(a: &ExplorerArtifact, level: usize) -> ApiResult<LevelPointsResponse> {
    check_level(a, level)?;
    let lvl = &a.hierarchy.levels[level];
    let emb = a
        .positions
        .get(level)
        .ok_or_else(|| ApiError::internal(format!("no layout for level {level}")))?;
    let sizes = if level >= 1 {
        Some(analytics::region_sizes(&a.hierarchy, level)?)
    } else {
        None
    };
    let mut labels = labels_by_node(a, level);
    let points = lvl
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let record = &a.catalog.records()[g as usize];
            PointRecord {
                node_id: g,
                feature_id: record.feature_id,
                x: emb.positions[i][0],
                y: emb.positions[i][1],
                region_size: sizes.as_ref().map(|s| s[i].1),
                category: record.category.clone(),
                annotation_labels: labels.remove(&g).unwrap_or_default(),
            }
        })
        .collect();
    Ok(LevelPointsResponse { level, points })
}

async fn get_level_resource(
    State(state): State<AppState>,
    UrlPath((level, resource)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let level = parse_level(&level)?;
    let loaded = state.loaded()?;
    let a = loaded.read();
    match resource.as_str() {
        "points" => Ok(Json(level_points(&a, level)?).into_response()),
        "points.bin" => {
            check_level(&a, level)?;
            let flat: Vec<f32> = a.positions[level].positions.iter().flatten().copied().collect();
            let n = flat.len() / 2;
            let m = EmbeddingMatrix::new(n, 2, flat).map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(([(header::CONTENT_TYPE, "application/octet-stream")], ingest::cxem_bytes(&m)).into_response())
        }
        _ => Err(ApiError::not_found("NOT_FOUND", format!("no resource {resource:?}"))),
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Neighbor {
    pub feature_id: u64,
    pub cosine: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct FeatureDetail {
    pub feature_id: u64,
    pub node_id: u32,
    pub explanation: String,
    pub category: Option<String>,
    pub contexts: Vec<ActivationContext>,
    pub annotations: Vec<Annotation>,
    pub neighbors: Vec<Neighbor>,
}

async fn get_feature(State(state): State<AppState>, UrlPath(raw): UrlPath<String>) -> ApiResult<Json<FeatureDetail>> {
    let id: u64 = raw
        .parse()
        .map_err(|_| ApiError::bad_request("BAD_REQUEST", format!("invalid feature id {raw:?}")))?;
    let loaded = state.loaded()?;
    let a = loaded.read();
    let row = a
        .catalog
        .row_of(id)
        .ok_or_else(|| ApiError::not_found("UNKNOWN_FEATURE", format!("feature {id} does not exist")))?;
    let record = &a.catalog.records()[row];
    let query = loaded.unit_rows[row * loaded.dims..(row + 1) * loaded.dims].to_vec();
    let neighbors = loaded
        .ranked(&query, Some(row), NEIGHBOR_COUNT)
        .into_iter()
        .map(|(i, cosine)| Neighbor {
            feature_id: a.catalog.feature_id(i),
            cosine,
        })
        .collect();
    let filter = AnnotationFilter {
        level: None,
        feature_id: Some(id),
    };
    Ok(Json(FeatureDetail {
        feature_id: id,
        node_id: row as u32,
        explanation: record.explanation.clone(),
        category: record.category.clone(),
        contexts: record.contexts.clone(),
        annotations: a.list_annotations(&filter).into_iter().cloned().collect(),
        neighbors,
    }))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrilldownMode {
    #[default]
    Reoptimize,
    Stored,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DrilldownRequest {
    pub level: usize,
    pub landmark_ids: Vec<u32>,
    #[serde(default)]
    pub mode: DrilldownMode,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct DrilldownResponse {
    pub mode: DrilldownMode,
    #[serde(flatten)]
    pub sub: SubEmbedding,
}

fn drilldown_blocking(loaded: &Loaded, req: DrilldownRequest, budget: usize) -> ApiResult<DrilldownResponse> {
    let a = loaded.read();
    check_level(&a, req.level)?;
    if req.level == 0 {
        return Err(ApiError::bad_request("BAD_LEVEL", "level 0 has no regions to drill into"));
    }
    let sub = match req.mode {
        DrilldownMode::Stored => layout::reveal_stored(&a.hierarchy, &a.positions, req.level, &req.landmark_ids)?,
        DrilldownMode::Reoptimize => {
            let sizes: BTreeMap<u32, usize> = analytics::region_sizes(&a.hierarchy, req.level)?.into_iter().collect();
            let mut ids = req.landmark_ids.clone();
            ids.sort_unstable();
            ids.dedup();
            let members: usize = ids.iter().filter_map(|g| sizes.get(g)).sum();
            if members > budget {
                return Err(ApiError::new(
                    StatusCode::PAYLOAD_TOO_LARGE,
                    "BUDGET_EXCEEDED",
                    format!("selection has {members} members, budget is {budget}"),
                ));
            }
            let mut params = a.hierarchy.config.layout.clone();
            params.deterministic = true;
            let seed = req.seed.unwrap_or(a.hierarchy.config.seed);
            layout::drill_down(&a.hierarchy, &a.positions, req.level, &req.landmark_ids, &params, seed)?
        }
    };
    Ok(DrilldownResponse { mode: req.mode, sub })
}

async fn post_drilldown(
    State(state): State<AppState>,
    body: Result<Json<DrilldownRequest>, JsonRejection>,
) -> ApiResult<Json<DrilldownResponse>> {
    let loaded = state.loaded()?.clone();
    let req = json_body(body)?;
    let budget = state.drilldown_budget;
    tokio::task::spawn_blocking(move || drilldown_blocking(&loaded, req, budget))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SearchRequest {
    pub text: Option<String>,
    pub vector: Option<Vec<f32>>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchHit {
    pub feature_id: u64,
    pub score: f64,
    pub explanation: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SearchResponse {
    pub mode: String,
    pub results: Vec<SearchHit>,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

async fn post_search(
    State(state): State<AppState>,
    body: Result<Json<SearchRequest>, JsonRejection>,
) -> ApiResult<Json<SearchResponse>> {
    let loaded = state.loaded()?;
    let req = json_body(body)?;
    let limit = req.limit.unwrap_or(DEFAULT_SEARCH_LIMIT);
    if limit == 0 {
        return Err(ApiError::bad_request("BAD_REQUEST", "limit must be at least 1"));
    }
    let a = loaded.read();
    match (req.text, req.vector) {
        (Some(text), None) => {
            let mut terms = tokenize(&text);
            terms.sort();
            terms.dedup();
            if terms.is_empty() {
                return Err(ApiError::bad_request("EMPTY_QUERY", "search text has no tokens"));
            }
            let mut hits: Vec<(usize, u64)> = a
                .catalog
                .records()
                .iter()
                .map(|r| {
                    let tokens = tokenize(&r.explanation);
                    terms.iter().filter(|t| tokens.contains(t)).count()
                })
                .enumerate()
                .filter(|&(_, score)| score > 0)
                .map(|(row, score)| (score, a.catalog.feature_id(row)))
                .collect();
            hits.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
            hits.truncate(limit);
            let results = hits
                .into_iter()
                .map(|(score, id)| SearchHit {
                    feature_id: id,
                    score: score as f64,
                    explanation: a.catalog.get(id).map(|r| r.explanation.clone()).unwrap_or_default(),
                })
                .collect();
            Ok(Json(SearchResponse {
                mode: "text".into(),
                results,
            }))
        }
        (None, Some(vector)) => {
            if vector.len() != loaded.dims {
                return Err(ApiError::bad_request(
                    "BAD_VECTOR_DIM",
                    format!("vector has {} dimensions, expected {}", vector.len(), loaded.dims),
                ));
            }
            let norm = vector.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                return Err(ApiError::bad_request("BAD_VECTOR", "vector must be finite and nonzero"));
            }
            let query: Vec<f32> = vector.iter().map(|&x| (x as f64 / norm) as f32).collect();
            let results = loaded
                .ranked(&query, None, limit)
                .into_iter()
                .map(|(row, score)| SearchHit {
                    feature_id: a.catalog.feature_id(row),
                    score,
                    explanation: a.catalog.records()[row].explanation.clone(),
                })
                .collect();
            Ok(Json(SearchResponse {
                mode: "vector".into(),
                results,
            }))
        }
        _ => Err(ApiError::bad_request("BAD_REQUEST", "give exactly one of text or vector")),
    }
}

#[derive(Debug, Deserialize)]
pub struct OutlierQuery {
    pub level: Option<usize>,
    pub m: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct OutlierRecord {
    pub node_id: u32,
    pub feature_id: u64,
    pub score: f64,
}

async fn get_outliers(
    State(state): State<AppState>,
    q: Result<Query<OutlierQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let loaded = state.loaded()?;
    let q = query(q)?;
    let (level, m) = (q.level.unwrap_or(0), q.m.unwrap_or(DEFAULT_OUTLIER_M));
    let a = loaded.read();
    check_level(&a, level)?;
    let scores = analytics::outlier_scores(&a.positions[level].positions, m)?;
    let nodes = &a.hierarchy.levels[level].nodes;
    let outliers: Vec<OutlierRecord> = analytics::descending_order(&scores)
        .into_iter()
        .take(q.limit.unwrap_or(DEFAULT_OUTLIER_LIMIT))
        .map(|i| OutlierRecord {
            node_id: nodes[i],
            feature_id: a.catalog.feature_id(nodes[i] as usize),
            score: scores[i],
        })
        .collect();
    Ok(Json(serde_json::json!({ "level": level, "m": m, "outliers": outliers })))
}

#[derive(Debug, Deserialize)]
pub struct RegionQuery {
    pub level: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RegionRecord {
    pub landmark_id: u32,
    pub feature_id: u64,
    pub size: usize,
}

async fn get_region_sizes(
    State(state): State<AppState>,
    q: Result<Query<RegionQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let loaded = state.loaded()?;
    let level = query(q)?.level.unwrap_or(1);
    let a = loaded.read();
    check_level(&a, level)?;
    if level == 0 {
        return Err(ApiError::bad_request("BAD_LEVEL", "level 0 has no regions"));
    }
    let mut regions: Vec<RegionRecord> = analytics::region_sizes(&a.hierarchy, level)?
        .into_iter()
        .map(|(g, size)| RegionRecord {
            landmark_id: g,
            feature_id: a.catalog.feature_id(g as usize),
            size,
        })
        .collect();
    regions.sort_by_key(|r| (r.size, r.landmark_id));
    Ok(Json(serde_json::json!({ "level": level, "regions": regions })))
}

#[derive(Debug, Deserialize)]
pub struct DuplicateQuery {
    pub threshold: Option<f64>,
}

async fn get_duplicates(
    State(state): State<AppState>,
    q: Result<Query<DuplicateQuery>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let loaded = state.loaded()?.clone();
    let threshold = query(q)?.threshold.unwrap_or(DEFAULT_DUPLICATE_THRESHOLD);
    let cached = loaded
        .duplicates
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .get(&threshold.to_bits())
        .cloned();
    let groups = match cached {
        Some(g) => g,
        None => {
            let worker = loaded.clone();
            let groups = tokio::task::spawn_blocking(move || {
                analytics::duplicate_groups(&worker.read().embeddings, threshold)
            })
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
            let groups = Arc::new(groups);
            loaded
                .duplicates
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(threshold.to_bits(), groups.clone());
            groups
        }
    };
    let a = loaded.read();
    let groups: Vec<Value> = groups
        .iter()
        .map(|g| {
            let ids: Vec<u64> = g.members.iter().map(|&r| a.catalog.feature_id(r)).collect();
            serde_json::json!({ "size": ids.len(), "feature_ids": ids })
        })
        .collect();
    Ok(Json(serde_json::json!({ "threshold": threshold, "groups": groups })))
}

async fn get_annotations(
    State(state): State<AppState>,
    q: Result<Query<AnnotationFilter>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let loaded = state.loaded()?;
    let filter = query(q)?;
    let a = loaded.read();
    Ok(Json(serde_json::json!({ "annotations": a.list_annotations(&filter) })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub id: Option<String>,
    pub scope: AnnotationScope,
    pub label: String,
    pub color: Option<String>,
}

async fn post_annotation(
    State(state): State<AppState>,
    body: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Annotation>)> {
    let loaded = state.loaded()?;
    let req = json_body(body)?;
    if req.label.trim().is_empty() {
        return Err(ApiError::bad_request("INVALID_ANNOTATION", "label must not be empty"));
    }
    let mut a = loaded.artifact.write().unwrap_or_else(|e| e.into_inner());
    let id = match req.id {
        Some(id) => id,
        None => (1..)
            .map(|n| format!("ann-{n}"))
            .find(|id| !a.annotations.contains_key(id))
            .expect("unbounded"),
    };
    let annotation = Annotation {
        id,
        scope: req.scope,
        label: req.label,
        color: req.color,
        created_at: store::now_rfc3339(),
    };
    a.upsert_annotation(annotation.clone())?;
    Ok((StatusCode::CREATED, Json(annotation)))
}
