//! Request and response bodies, and the handlers that produce them.

use std::sync::Arc;
use std::time::UNIX_EPOCH;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use mindrel_core::engine::{EngineConfig, Session, Status, StepRecord};
use mindrel_core::model::Classifier;

use crate::error::ApiError;
use crate::store::Entry;
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    /// Raw public values keyed by feature name; every other feature is sensitive.
    pub public: IndexMap<String, f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub selector: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRequest {
    pub value: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRef {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub index: usize,
    pub name: String,
    /// Normalized value the engine used.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreView {
    pub feature: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub feature: FeatureRef,
    pub value: f64,
    pub clipped: bool,
    pub scores: Vec<ScoreView>,
    pub is_core_after: bool,
    pub confidence_after: f64,
    pub entropy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub label: usize,
    pub confidence: f64,
    pub features_revealed: Vec<String>,
    pub leakage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigView {
    pub delta: f64,
    pub selector: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: Status,
    pub requested: Option<FeatureRef>,
    /// Largest class probability under the current posterior.
    pub confidence: f64,
    pub entropy: f64,
    pub public: Vec<FeatureValue>,
    pub sensitive: Vec<String>,
    pub revealed: Vec<FeatureValue>,
    pub log: Vec<StepView>,
    pub decision: Option<Decision>,
    pub config: ConfigView,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    #[serde(flatten)]
    pub session: SessionView,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    #[serde(flatten)]
    pub session: SessionView,
    pub step: StepView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub feature: FeatureRef,
    pub value: f64,
    pub clipped: bool,
    pub confidence_after: f64,
    pub would_decide: bool,
    pub label_if_decided: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub family: String,
    pub num_features: usize,
    pub num_classes: usize,
    pub features: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub service: String,
    pub version: String,
    pub model: ModelInfo,
    pub defaults: ConfigView,
    pub selectors: Vec<String>,
    pub sessions: usize,
}

fn clip_warning(name: &str, normalized: f64) -> Option<String> {
    (!(-1.0..=1.0).contains(&normalized)).then(|| {
        format!(
            "value for `{name}` normalizes to {normalized}, outside [-1, 1]; clipped to {}",
            normalized.clamp(-1.0, 1.0)
        )
    })
}

fn finite(field: &str, v: f64) -> ApiResult<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ApiError::invalid(field, "value must be a finite number"))
    }
}

impl AppState {
    fn feature_ref(&self, index: usize) -> FeatureRef {
        FeatureRef {
            index,
            name: self.names[index].clone(),
        }
    }

    fn step_view(&self, r: &StepRecord) -> StepView {
        StepView {
            feature: self.feature_ref(r.feature),
            value: r.value,
            clipped: r.clipped,
            scores: r
                .scores
                .iter()
                .map(|s| ScoreView {
                    feature: self.names[s.feature].clone(),
                    score: s.score,
                })
                .collect(),
            is_core_after: r.is_core_after,
            confidence_after: r.confidence_after,
            entropy_after: r.entropy_after,
        }
    }

    fn view(&self, id: &str, entry: &Entry, s: &Session) -> SessionView {
        let value = |index: usize, value: f64| FeatureValue {
            index,
            name: self.names[index].clone(),
            value,
        };
        let config = entry.engine.config();
        SessionView {
            session_id: id.to_owned(),
            status: s.status(),
            requested: s.requested().map(|f| self.feature_ref(f)),
            confidence: s.confidence,
            entropy: s.entropy,
            public: s
                .partition
                .public_idx
                .iter()
                .zip(&s.public_values)
                .map(|(&i, &v)| value(i, v))
                .collect(),
            sensitive: s.partition.sensitive_idx.iter().map(|&i| self.names[i].clone()).collect(),
            revealed: s.revealed.iter().map(|r| value(r.feature, r.value)).collect(),
            log: s.log.iter().map(|r| self.step_view(r)).collect(),
            decision: s.terminal.and_then(|t| {
                t.label.map(|label| Decision {
                    label,
                    confidence: t.confidence,
                    features_revealed: s.revealed.iter().map(|r| self.names[r.feature].clone()).collect(),
                    leakage: s.leakage(),
                })
            }),
            config: ConfigView {
                delta: config.delta,
                selector: config.selector.clone(),
            },
            created_at: entry
                .created
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<Entry>> {
        self.store.get(id).ok_or_else(|| ApiError::not_found(id))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })
}

pub async fn health(State(state): State<AppState>) -> Json<Health> {
    let a = &state.artifacts;
    Json(Health {
        status: "ok".into(),
        service: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model: ModelInfo {
            family: a.model.family().to_string(),
            num_features: a.model.num_features(),
            num_classes: a.model.num_classes(),
            features: state.names.to_vec(),
        },
        defaults: ConfigView {
            delta: state.defaults.delta,
            selector: state.defaults.selector.clone(),
        },
        selectors: state.registry.names().into_iter().map(str::to_owned).collect(),
        sessions: state.store.len(),
    })
}

pub async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let Json(req) = body?;
    let config = EngineConfig {
        delta: finite("delta", req.delta.unwrap_or(state.defaults.delta))?,
        selector: req.selector.unwrap_or_else(|| state.defaults.selector.clone()),
        ..state.defaults.clone()
    };
    if !(0.0..0.5).contains(&config.delta) {
        return Err(ApiError::invalid("delta", format!("delta must lie in [0, 0.5), got {}", config.delta)));
    }
    let engine = state.artifacts.engine(config, &state.registry)?;

    let names: Vec<&str> = req.public.keys().map(String::as_str).collect();
    let partition = state.artifacts.partition_public(&names)?;
    let mut warnings = Vec::new();
    let mut values = Vec::with_capacity(partition.public_idx.len());
    for &i in &partition.public_idx {
        let name = &state.names[i];
        let raw = finite(name, req.public[name.as_str()])?;
        let v = state.artifacts.normalize(i, raw);
        warnings.extend(clip_warning(name, v));
        values.push(v.clamp(-1.0, 1.0));
    }

    let e = engine.clone();
    let session = blocking(move || e.start(&partition, &values)).await??;
    let id = state.store.insert(engine, session);
    let entry = state.entry(&id)?;
    let view = state.view(&id, &entry, &entry.snapshot());
    log::info!("session {id} created, status {:?}", view.status);
    Ok((StatusCode::CREATED, Json(CreateResponse { session: view, warnings })))
}

pub async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionView>> {
    let entry = state.entry(&id)?;
    Ok(Json(state.view(&id, &entry, &entry.snapshot())))
}

pub async fn submit_feature(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<SubmitRequest>, JsonRejection>,
) -> ApiResult<Json<SubmitResponse>> {
    let Json(req) = body?;
    let entry = state.entry(&id)?;
    let guard = entry.try_writer().ok_or_else(|| ApiError::busy(&id))?;
    let current = entry.snapshot();
    let feature = current.requested().ok_or(mindrel_core::Error::SessionTerminal)?;
    let name = &state.names[feature];
    let normalized = state.artifacts.normalize(feature, finite("value", req.value)?);
    let warning = clip_warning(name, normalized);

    let engine = entry.engine.clone();
    let mut next = (*current).clone();
    let (next, record) = blocking(move || engine.step(&mut next, normalized).map(|r| (next, r))).await??;
    entry.publish(&guard, next);
    drop(guard);
    let snapshot = entry.snapshot();
    Ok(Json(SubmitResponse {
        session: state.view(&id, &entry, &snapshot),
        step: state.step_view(&record),
        warning,
    }))
}

pub async fn whatif(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> ApiResult<Json<WhatIfResponse>> {
    let Json(req) = body?;
    let entry = state.entry(&id)?;
    let feature = state
        .artifacts
        .feature_index(&req.feature)
        .ok_or_else(|| ApiError::invalid("feature", format!("unknown feature `{}`", req.feature)))?;
    let normalized = state.artifacts.normalize(feature, finite("value", req.value)?);
    let session = entry.snapshot();
    if session.is_terminal() {
        return Err(mindrel_core::Error::SessionTerminal.into());
    }
    if !session.partition.is_sensitive(feature) || session.is_revealed(feature) {
        return Err(ApiError::invalid(
            "feature",
            format!("`{}` is not an unrevealed sensitive feature", req.feature),
        ));
    }
    let engine = entry.engine.clone();
    let w = blocking(move || engine.whatif(&session, feature, normalized)).await??;
    Ok(Json(WhatIfResponse {
        feature: state.feature_ref(feature),
        value: w.value,
        clipped: w.clipped,
        confidence_after: w.confidence_after,
        would_decide: w.would_decide,
        label_if_decided: w.label_if_decided,
        warning: clip_warning(&req.feature, normalized),
    }))
}
