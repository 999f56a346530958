use std::convert::Infallible;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::broadcast::error::RecvError;

use cvil_core::analytics::{self, ProjectionMethod};
use cvil_core::measures::{MeasureKind, DEFAULT_K};
use cvil_core::workflow::{Action, Direction};
use cvil_core::{InstanceId, TrainConfig};

use crate::engine::{ClassRef, ProjectedPoint};
use crate::{AppState, ServiceError};

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/bootstrap/sample", post(bootstrap_sample))
        .route("/instances/{id}/image", get(image))
        .route("/labels/batch", post(label_batch))
        .route("/labels/instance", post(label_instance))
        .route("/selection", post(select))
        .route("/selection/exclude", post(exclude))
        .route("/focus", post(set_focus))
        .route("/cutoff", post(set_cutoff))
        .route("/classes/window", post(set_window))
        .route("/phase", post(set_phase))
        .route("/train", post(train))
        .route("/train/cancel", post(cancel_train))
        .route("/events", get(events))
        .route("/classes/order", get(class_order))
        .route("/focus/measures", get(focus_measures))
        .route("/focus/kde", get(focus_kde))
        .route("/focus/projection", get(focus_projection))
        .route("/export", get(export))
        .route("/accuracy", get(accuracy))
        .route("/session/save", post(save_session))
        .route("/session/load", post(load_session))
        .with_state(state)
}

async fn status(State(state): State<AppState>) -> Json<crate::Status> {
    Json(state.status())
}

#[derive(Deserialize)]
struct SampleRequest {
    slots: usize,
    #[serde(default)]
    exclude: Vec<InstanceId>,
}

async fn bootstrap_sample(State(state): State<AppState>, Json(req): Json<SampleRequest>) -> ApiResult<Json<Value>> {
    let ids = state.read().bootstrap_sample(req.slots, &req.exclude)?;
    Ok(Json(json!({ "ids": ids })))
}

fn content_type(path: &std::path::Path) -> &'static str {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "bmp" => "image/bmp",
        "svg" => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

async fn image(State(state): State<AppState>, Path(id): Path<InstanceId>) -> ApiResult<Response> {
    let rel = {
        let engine = state.read();
        if id >= engine.dataset().len() {
            return Err(ServiceError::NotFound(format!("instance {id}")));
        }
        engine
            .dataset()
            .image_path(id)
            .map(PathBuf::from)
            .ok_or_else(|| ServiceError::NotFound(format!("instance {id} has no image")))?
    };
    let path = state.asset_root().join(rel);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::NotFound(format!("image {}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

#[derive(Deserialize)]
struct BatchRequest {
    ids: Vec<InstanceId>,
    class: ClassRef,
}

async fn label_batch(State(state): State<AppState>, Json(req): Json<BatchRequest>) -> ApiResult<impl IntoResponse> {
    let out = state.mutate(|e| {
        let class = e.resolve_class(&req.class)?;
        e.apply(Action::LabelBatch { ids: req.ids, class })
    })?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct InstanceRequest {
    id: InstanceId,
    class: ClassRef,
}

async fn label_instance(State(state): State<AppState>, Json(req): Json<InstanceRequest>) -> ApiResult<impl IntoResponse> {
    let out = state.mutate(|e| {
        let class = e.resolve_class(&req.class)?;
        e.apply(Action::LabelInstance { id: req.id, class })
    })?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct IdsRequest {
    ids: Vec<InstanceId>,
}

async fn select(State(state): State<AppState>, Json(req): Json<IdsRequest>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.mutate(|e| e.apply(Action::Select { ids: req.ids }))?))
}

async fn exclude(State(state): State<AppState>, Json(req): Json<IdsRequest>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.mutate(|e| e.apply(Action::Exclude { ids: req.ids }))?))
}

#[derive(Deserialize)]
struct FocusRequest {
    class: ClassRef,
}

async fn set_focus(State(state): State<AppState>, Json(req): Json<FocusRequest>) -> ApiResult<impl IntoResponse> {
    let out = state.mutate(|e| {
        let class = e.resolve_class(&req.class)?;
        e.apply(Action::SetFocus { class })
    })?;
    Ok(Json(out))
}

#[derive(Deserialize)]
struct CutoffRequest {
    k: usize,
}

async fn set_cutoff(State(state): State<AppState>, Json(req): Json<CutoffRequest>) -> ApiResult<impl IntoResponse> {
    Ok(Json(state.mutate(|e| e.apply(Action::SetCutoff { k: req.k }))?))
}

#[derive(Deserialize)]
struct WindowRequest {
    start: usize,
    len: usize,
}

async fn set_window(State(state): State<AppState>, Json(req): Json<WindowRequest>) -> ApiResult<impl IntoResponse> {
    let action = Action::SetClassWindow {
        start: req.start,
        len: req.len,
    };
    Ok(Json(state.mutate(|e| e.apply(action))?))
}

#[derive(Deserialize)]
struct PhaseRequest {
    phase: String,
}

async fn set_phase(State(state): State<AppState>, Json(req): Json<PhaseRequest>) -> ApiResult<impl IntoResponse> {
    let action = match req.phase.as_str() {
        "class_guidance" | "guidance" => Action::BeginGuidance,
        "residual" => Action::EnterResidual,
        other => return Err(ServiceError::BadRequest(format!("cannot switch to phase {other:?}"))),
    };
    Ok(Json(state.mutate(|e| e.apply(action))?))
}

/// Overlays the JSON object in `body` onto `base`.
fn merge_config(base: &TrainConfig, body: &[u8]) -> ApiResult<TrainConfig> {
    let mut value = serde_json::to_value(base)?;
    if !body.iter().all(u8::is_ascii_whitespace) {
        let overrides: Value = serde_json::from_slice(body)?;
        let Value::Object(overrides) = overrides else {
            return Err(ServiceError::BadRequest("training overrides must be a JSON object".into()));
        };
        let target = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in overrides {
            if !target.contains_key(&k) {
                return Err(ServiceError::BadRequest(format!("unknown training option {k:?}")));
            }
            target.insert(k, v);
        }
    }
    serde_json::from_value(value).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

async fn train(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let config = {
        let base = state.read().train_config.clone();
        merge_config(&base, &body)?
    };
    let config = state.start_training(config)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "config": config }))))
}

async fn cancel_train(State(state): State<AppState>) -> ApiResult<impl IntoResponse> {
    state.cancel_training()?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "cancelling": true }))))
}

async fn events(State(state): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = serde_json::to_string(&ev).unwrap_or_default();
                    return Some((Ok(Event::default().event(ev.name()).data(data)), rx));
                }
                Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[derive(Deserialize)]
struct OrderQuery {
    direction: Option<String>,
}

async fn class_order(State(state): State<AppState>, Query(q): Query<OrderQuery>) -> ApiResult<Json<Value>> {
    let direction = match q.direction {
        Some(d) => d.parse::<Direction>().map_err(ServiceError::BadRequest)?,
        None => Direction::default(),
    };
    let engine = state.read();
    let name = format!("order:{direction:?}");
    if let Some(v) = engine.cached(&name) {
        return Ok(Json(v));
    }
    let v = engine.class_order(direction)?;
    engine.store(name, v.clone());
    Ok(Json(v))
}

#[derive(Deserialize)]
struct MeasureQuery {
    kind: String,
    k: Option<usize>,
    bandwidth: Option<f64>,
}

fn parse_kind(s: &str) -> ApiResult<MeasureKind> {
    s.parse().map_err(|e: cvil_core::measures::MeasureError| ServiceError::BadRequest(e.to_string()))
}

async fn focus_measures(State(state): State<AppState>, Query(q): Query<MeasureQuery>) -> ApiResult<Json<Value>> {
    let kind = parse_kind(&q.kind)?;
    let k = q.k.unwrap_or(DEFAULT_K);
    let engine = state.read();
    let name = format!("measures:{kind}:{k}");
    if let Some(v) = engine.cached(&name) {
        return Ok(Json(v));
    }
    let mv = engine.focus_measures(kind, k)?;
    let values: Vec<Value> = mv.values.iter().map(|(id, v)| json!({ "id": id, "value": v })).collect();
    let v = json!({ "kind": kind, "focus_class": mv.focus_class, "values": values });
    engine.store(name, v.clone());
    Ok(Json(v))
}

async fn focus_kde(State(state): State<AppState>, Query(q): Query<MeasureQuery>) -> ApiResult<Json<Value>> {
    let kind = parse_kind(&q.kind)?;
    let k = q.k.unwrap_or(DEFAULT_K);
    let engine = state.read();
    let name = format!("kde:{kind}:{k}:{:?}", q.bandwidth.map(f64::to_bits));
    if let Some(v) = engine.cached(&name) {
        return Ok(Json(v));
    }
    let mv = engine.focus_measures(kind, k)?;
    let curve = analytics::kde(&mv, q.bandwidth)?;
    let v = serde_json::to_value(curve)?;
    engine.store(name, v.clone());
    Ok(Json(v))
}

#[derive(Deserialize)]
struct ProjectionQuery {
    method: Option<String>,
    seed: Option<u64>,
}

async fn focus_projection(State(state): State<AppState>, Query(q): Query<ProjectionQuery>) -> ApiResult<Json<Value>> {
    let method = match q.method {
        Some(m) => m.parse::<ProjectionMethod>().map_err(ServiceError::BadRequest)?,
        None => ProjectionMethod::Tsne,
    };
    let seed = q.seed.unwrap_or(0);
    let name = format!("projection:{method:?}:{seed}");
    let (points, dataset, key) = {
        let engine = state.read();
        if let Some(v) = engine.cached(&name) {
            return Ok(Json(v));
        }
        (engine.focus_points()?, engine.dataset().clone(), engine.cache_key_now())
    };
    let ids: Vec<InstanceId> = points.iter().map(|p| p.0).collect();
    let proj = tokio::task::spawn_blocking(move || analytics::project(&ids, &dataset, method, seed))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    let out: Vec<ProjectedPoint> = points
        .into_iter()
        .map(|(id, status)| {
            let [x, y] = proj.coords[&id];
            ProjectedPoint { id, x, y, status }
        })
        .collect();
    let v = json!({
        "method": proj.method,
        "seed": proj.seed,
        "perplexity": proj.perplexity,
        "points": out,
    });
    state.read().store_if(key, name, v.clone());
    Ok(Json(v))
}

async fn export(State(state): State<AppState>) -> ApiResult<Response> {
    let csv = state.read().export_csv()?;
    Ok(([(header::CONTENT_TYPE, "text/csv")], csv).into_response())
}

async fn accuracy(State(state): State<AppState>) -> ApiResult<Json<cvil_core::workflow::Accuracy>> {
    Ok(Json(state.read().accuracy()?))
}

#[derive(Deserialize)]
struct PathRequest {
    path: PathBuf,
}

async fn save_session(State(state): State<AppState>, Json(req): Json<PathRequest>) -> ApiResult<Json<Value>> {
    let snap = state.read().save(&req.path)?;
    Ok(Json(json!({
        "path": req.path,
        "model": snap.model,
        "session_id": snap.session_id,
        "log_len": snap.log.len(),
    })))
}

async fn load_session(State(state): State<AppState>, Json(req): Json<PathRequest>) -> ApiResult<Json<Value>> {
    let snap = state.load_session(&req.path)?;
    Ok(Json(json!({
        "path": req.path,
        "session_id": snap.session_id,
        "log_len": snap.log.len(),
        "trained": snap.trained,
    })))
}
