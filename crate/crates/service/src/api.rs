//! JSON handlers under `/api`.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use labelsweep_core::cluster::MergeStep;
use labelsweep_core::sanitize::RunSummary;
use labelsweep_core::similarity::{unit_similarity, LabelScore};
use labelsweep_core::{ClusterParams, Decision, DecisionAction, Error, Flag, FlagRules, MergeAnchor, Provenance};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::session::{Session, SessionError, Snapshot};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;
const NEAREST: usize = 5;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            kind,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Busy => ApiError::new(StatusCode::CONFLICT, "busy", "a re-cluster is already running"),
            SessionError::StaleVersion { expected, current } => ApiError::new(
                StatusCode::CONFLICT,
                "stale_version",
                format!("request made against version {expected}, current is {current}"),
            ),
            SessionError::Core(e) => {
                let status = match &e {
                    Error::UnknownImage(_) => StatusCode::NOT_FOUND,
                    Error::UnknownLabel(_) | Error::InvalidConfig(_) => StatusCode::UNPROCESSABLE_ENTITY,
                    _ => StatusCode::INTERNAL_SERVER_ERROR,
                };
                ApiError::new(status, e.kind(), e.to_string())
            }
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub async fn health(State(s): State<Arc<Session>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "version": s.snapshot().version }))
}

#[derive(Serialize)]
pub struct SummaryBody {
    pub version: u64,
    pub params: ClusterParams,
    pub rules: FlagRules,
    pub top_k: usize,
    pub distinct_labels: usize,
    pub cluster_count: usize,
    pub reduction: String,
    pub summary: RunSummary,
    pub decision_warnings: usize,
}

pub fn summary_of(snap: &Snapshot) -> SummaryBody {
    let c = &snap.computed;
    SummaryBody {
        version: snap.version,
        params: snap.cfg.cluster,
        rules: snap.cfg.rules,
        top_k: snap.cfg.top_k,
        distinct_labels: c.clusters.distinct_labels,
        cluster_count: c.clusters.cluster_count,
        reduction: format!("{} \u{2192} {}", c.clusters.distinct_labels, c.clusters.cluster_count),
        summary: c.run.summary.clone(),
        decision_warnings: c.decision_warnings.len(),
    }
}

pub async fn summary(State(s): State<Arc<Session>>) -> ApiResult<SummaryBody> {
    if s.is_reclustering() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "busy", "re-cluster in progress"));
    }
    Ok(Json(summary_of(&s.snapshot())))
}

#[derive(Deserialize)]
pub struct ImagesQuery {
    #[serde(default)]
    flag: Option<String>,
    #[serde(default)]
    page: Option<usize>,
    #[serde(default)]
    page_size: Option<usize>,
}

#[derive(Serialize)]
pub struct ImageItem<'a> {
    image_id: &'a str,
    original_labels: &'a [String],
    assigned: &'a [LabelScore],
    best_assigned: &'a LabelScore,
    best_dataset: &'a LabelScore,
    gap: f64,
    flags: &'a [Flag],
    final_label: &'a str,
    similarity: f64,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

pub async fn images(State(s): State<Arc<Session>>, Query(q): Query<ImagesQuery>) -> Result<Response, ApiError> {
    let flag = match q.flag.as_deref() {
        None | Some("") => None,
        Some(f) => Some(
            Flag::parse(f).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "unknown_flag", format!("unknown flag {f:?}")))?,
        ),
    };
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let snap = s.snapshot();
    let c = &snap.computed;
    let matching: Vec<_> = c
        .diagnostics
        .images
        .iter()
        .zip(&c.run.records)
        .filter(|(d, _)| flag.is_none_or(|f| d.has_flag(f)))
        .collect();
    let items: Vec<ImageItem> = matching
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .map(|(d, r)| ImageItem {
            image_id: &d.image_id,
            original_labels: &r.original_labels,
            assigned: &d.assigned,
            best_assigned: &d.best_assigned,
            best_dataset: d.top_dataset(),
            gap: d.gap,
            flags: &d.flags,
            final_label: &r.final_label,
            similarity: r.similarity,
            provenance: r.provenance,
            note: r.note.as_deref(),
        })
        .collect();
    Ok(Json(json!({
        "version": snap.version,
        "total": matching.len(),
        "page": page,
        "page_size": page_size,
        "items": items,
    }))
    .into_response())
}

/// Raw image bytes for thumbnails.
pub async fn image_file(State(s): State<Arc<Session>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dataset = &s.inputs().dataset;
    let record = dataset
        .record(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_image", format!("unknown image {id:?}")))?;
    let path = s.snapshot().cfg.dataset.join(&record.image_path);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "io", format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("png") => "image/png",
        Some("gif") => "image/gif",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        Some("tif" | "tiff") => "image/tiff",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Serialize)]
pub struct ClusterRow<'a> {
    cluster_id: usize,
    representative: &'a str,
    rep_frequency: u64,
    total_frequency: u64,
    size: usize,
}

pub async fn clusters(State(s): State<Arc<Session>>) -> Response {
    let snap = s.snapshot();
    let set = &snap.computed.clusters;
    let rows: Vec<ClusterRow> = set
        .clusters
        .iter()
        .map(|c| ClusterRow {
            cluster_id: c.cluster_id,
            representative: &c.representative,
            rep_frequency: c.rep_frequency,
            total_frequency: c.total_frequency,
            size: c.members.len(),
        })
        .collect();
    Json(json!({
        "version": snap.version,
        "params": set.params,
        "distinct_labels": set.distinct_labels,
        "cluster_count": set.cluster_count,
        "clusters": rows,
        "merge_log": set.merge_log,
    }))
    .into_response()
}

#[derive(Serialize)]
pub struct MemberFrequency {
    pub label: String,
    pub frequency: u64,
}

#[derive(Serialize)]
pub struct Neighbor {
    pub cluster_id: usize,
    pub representative: String,
    pub distance: f64,
}

#[derive(Serialize)]
pub struct ClusterDetail {
    pub version: u64,
    pub cluster_id: usize,
    pub representative: String,
    pub rep_frequency: u64,
    pub total_frequency: u64,
    /// Most frequent first, then byte order.
    pub members: Vec<MemberFrequency>,
    pub nearest: Vec<Neighbor>,
    pub merged_from: Vec<MergeStep>,
}

pub async fn cluster_detail(State(s): State<Arc<Session>>, Path(id): Path<usize>) -> ApiResult<ClusterDetail> {
    let snap = s.snapshot();
    let set = &snap.computed.clusters;
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "unknown_cluster", format!("no cluster {id}"));
    let cluster = set.cluster(id).ok_or_else(not_found)?;
    let vocab = &s.inputs().dataset.vocabulary;
    let store = &s.inputs().store;
    let mut members: Vec<MemberFrequency> = cluster
        .members
        .iter()
        .map(|m| MemberFrequency {
            label: m.clone(),
            frequency: vocab.frequency(m).unwrap_or(0),
        })
        .collect();
    members.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.label.cmp(&b.label)));

    let mode = set.params.merge_anchor;
    let internal = |e: Error| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.kind(), e.to_string());
    let anchor = set.anchor(cluster, mode, store).map_err(internal)?;
    let mut nearest = set
        .clusters
        .iter()
        .filter(|c| c.cluster_id != id)
        .map(|c| {
            Ok(Neighbor {
                cluster_id: c.cluster_id,
                representative: c.representative.clone(),
                distance: 1.0 - unit_similarity(anchor, set.anchor(c, mode, store)?),
            })
        })
        .collect::<Result<Vec<_>, Error>>()
        .map_err(internal)?;
    nearest.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.cluster_id.cmp(&b.cluster_id)));
    nearest.truncate(NEAREST);

    Ok(Json(ClusterDetail {
        version: snap.version,
        cluster_id: id,
        representative: cluster.representative.clone(),
        rep_frequency: cluster.rep_frequency,
        total_frequency: cluster.total_frequency,
        members,
        nearest,
        merged_from: set.merge_log.iter().filter(|m| m.target_id == id).cloned().collect(),
    }))
}

/// Missing fields keep their current value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReclusterRequest {
    pub eps: Option<f64>,
    pub min_samples: Option<usize>,
    pub merge_threshold: Option<usize>,
    pub merge_anchor: Option<MergeAnchor>,
    pub version: Option<u64>,
}

pub async fn recluster(
    State(s): State<Arc<Session>>,
    body: Result<Json<ReclusterRequest>, JsonRejection>,
) -> ApiResult<SummaryBody> {
    let Json(req) = body?;
    let cur = s.snapshot().cfg.cluster;
    let params = ClusterParams {
        eps: req.eps.unwrap_or(cur.eps),
        min_samples: req.min_samples.unwrap_or(cur.min_samples),
        merge_threshold: req.merge_threshold.unwrap_or(cur.merge_threshold),
        merge_anchor: req.merge_anchor.unwrap_or(cur.merge_anchor),
    };
    let snap = s.recluster(params, req.version).await?;
    Ok(Json(summary_of(&snap)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub image_id: String,
    pub action: DecisionAction,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub version: Option<u64>,
}

pub async fn decide(
    State(s): State<Arc<Session>>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(req) = body?;
    let decision = Decision {
        image_id: req.image_id,
        action: req.action,
        label: req.label,
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        note: req.note,
    };
    let snap = s.decide(decision.clone(), req.version).await?;
    let record = snap.computed.run.record(&decision.image_id);
    let counts: &BTreeMap<Provenance, usize> = &snap.computed.run.summary.provenance_counts;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "version": snap.version,
            "decision": decision,
            "record": record,
            "provenance_counts": counts,
        })),
    )
        .into_response())
}
