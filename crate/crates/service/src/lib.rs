//! Read-only JSON API over an immutable dataset snapshot.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use yieldtrack::analysis::{equality_products, Analysis};
use yieldtrack::export::{centroid_boundaries, export_map, ClassBreaks, MapValue};
use yieldtrack::scenario::{EngineConfig, ScenarioKind, ScenarioOutcome, ScenarioSpec};
use yieldtrack::snapshot::Dataset;
use yieldtrack::trend::BandKind;

pub struct AppState {
    pub dataset: Dataset,
    pub breaks: ClassBreaks,
    pub config: EngineConfig,
}

impl AppState {
    pub fn new(dataset: Dataset, breaks: ClassBreaks) -> Self {
        AppState {
            dataset,
            breaks,
            config: EngineConfig::default(),
        }
    }

    fn analysis(&self, config: EngineConfig) -> Result<Analysis, ApiError> {
        Analysis::new(&self.dataset.table, config).map_err(ApiError::unprocessable)
    }

    fn outcome(&self, spec: &ScenarioSpec) -> Result<ScenarioOutcome, ApiError> {
        spec.kind.validate().map_err(|e| ApiError::bad_request("kind", e))?;
        spec.config.validate().map_err(|e| ApiError::bad_request("config", e))?;
        let analysis = self.analysis(spec.config)?;
        if spec.aez_cap {
            let ceilings = analysis
                .ceilings(&self.dataset.table, &self.dataset.registry)
                .map_err(ApiError::unprocessable)?;
            analysis
                .capped_scenario(spec.kind, &ceilings, &self.dataset.registry)
                .map_err(ApiError::unprocessable)
        } else {
            analysis.scenario(spec.kind).map_err(ApiError::unprocessable)
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    field: Option<String>,
    message: String,
}

impl ApiError {
    fn bad_request(field: &str, e: impl ToString) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            field: Some(field.to_string()),
            message: e.to_string(),
        }
    }

    fn unprocessable(e: impl ToString) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            field: None,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(f) = self.field {
            body["field"] = json!(f);
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let text = r.body_text();
        // serde_path_to_error prefixes the offending path, e.g. "config.band: unknown variant"
        let detail = text.rsplit_once("target type: ").map_or(text.as_str(), |(_, d)| d);
        let field = detail
            .split_once(": ")
            .map(|(path, _)| path)
            .filter(|p| !p.contains(' '))
            .unwrap_or("body");
        ApiError {
            status: StatusCode::BAD_REQUEST,
            field: Some(field.to_string()),
            message: detail.to_string(),
        }
    }
}

type Shared = State<Arc<AppState>>;

async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::unprocessable(format!("evaluation aborted: {e}")))?
}

async fn health(State(state): Shared) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "villages": state.dataset.registry.len(),
        "villages_with_data": state.dataset.table.len(),
    }))
}

async fn villages(State(state): Shared) -> Json<Value> {
    let rows: Vec<Value> = state
        .dataset
        .registry
        .villages()
        .map(|v| {
            json!({
                "village_id": v.village_id,
                "name": v.name,
                "district": v.district,
                "province": v.province,
                "aez_id": v.aez_id,
                "lon": v.centroid.map(|c| c.0),
                "lat": v.centroid.map(|c| c.1),
            })
        })
        .collect();
    Json(json!({ "villages": rows }))
}

async fn trajectory(State(state): Shared) -> Result<Json<Value>, ApiError> {
    blocking(state, |s| {
        let analysis = s.analysis(s.config)?;
        let t = analysis
            .trajectory(&s.dataset.table, Default::default())
            .map_err(ApiError::unprocessable)?;
        Ok(Json(serde_json::to_value(t).map_err(ApiError::unprocessable)?))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct BandQuery {
    band: Option<String>,
}

fn parse_band(q: &BandQuery) -> Result<BandKind, ApiError> {
    match &q.band {
        None => Ok(BandKind::Mean),
        Some(b) => b.parse().map_err(|e| ApiError::bad_request("band", e)),
    }
}

#[derive(Serialize)]
struct TrendRow {
    village_id: String,
    slope: f64,
    y_baseline: f64,
    y_end: f64,
    ratio: f64,
    on_track: bool,
    flagged_degenerate: bool,
}

async fn trends(State(state): Shared, Query(q): Query<BandQuery>) -> Result<Json<Value>, ApiError> {
    let band = parse_band(&q)?;
    blocking(state, move |s| {
        let config = EngineConfig { band, ..s.config };
        let analysis = s.analysis(config)?;
        let statuses = analysis.track_statuses().map_err(ApiError::unprocessable)?;
        let rows: Vec<TrendRow> = statuses
            .into_iter()
            .map(|st| TrendRow {
                slope: analysis.trends.models[&st.village_id].slope,
                village_id: st.village_id,
                y_baseline: st.y_baseline,
                y_end: st.y_end,
                ratio: st.ratio,
                on_track: st.on_track,
                flagged_degenerate: st.flagged_degenerate,
            })
            .collect();
        let on_track = rows.iter().filter(|r| r.on_track).count();
        Ok(Json(json!({
            "band": band,
            "confidence": config.confidence,
            "baseline_year": config.baseline_year,
            "end_year": config.end_year,
            "on_track": on_track,
            "villages": rows,
            "excluded": analysis.trends.excluded,
        })))
    })
    .await
}

#[derive(Debug, Deserialize)]
pub struct EqualityQuery {
    cohort_year: Option<i32>,
}

async fn equality(State(state): Shared, Query(q): Query<EqualityQuery>) -> Result<Json<Value>, ApiError> {
    blocking(state, move |s| {
        let year = q.cohort_year.unwrap_or(s.config.cohort_year);
        let products = equality_products(&s.dataset.table, year).map_err(ApiError::unprocessable)?;
        Ok(Json(json!({
            "cohort_year": year,
            "cohorts": products.cells,
            "inequality": products.inequality,
        })))
    })
    .await
}

async fn scenario(
    State(state): Shared,
    body: Result<Json<ScenarioSpec>, JsonRejection>,
) -> Result<Json<ScenarioOutcome>, ApiError> {
    let Json(spec) = body?;
    blocking(state, move |s| s.outcome(&spec).map(Json)).await
}

#[derive(Debug, Deserialize)]
pub struct MapQuery {
    band: Option<String>,
    value: Option<f64>,
    #[serde(default)]
    aez_cap: bool,
}

async fn map(
    State(state): Shared,
    Path(name): Path<String>,
    Query(q): Query<MapQuery>,
) -> Result<Json<Value>, ApiError> {
    let band = parse_band(&BandQuery { band: q.band.clone() })?;
    let kind = ScenarioKind::parse(&name, q.value).map_err(|e| ApiError::bad_request("scenario", e))?;
    blocking(state, move |s| {
        let spec = ScenarioSpec {
            kind,
            config: EngineConfig { band, ..s.config },
            aez_cap: q.aez_cap,
        };
        let outcome = s.outcome(&spec)?;
        let values: BTreeMap<String, MapValue> = outcome
            .per_village
            .iter()
            .map(|v| (v.village_id.clone(), MapValue::from(v)))
            .collect();
        let fallback;
        let boundaries = match &s.dataset.boundaries {
            Some(b) => b,
            None => {
                fallback = centroid_boundaries(&s.dataset.registry);
                &fallback
            }
        };
        let (mut fc, summary) =
            export_map(&values, boundaries, Some(&s.dataset.registry), &s.breaks).map_err(ApiError::unprocessable)?;
        fc["scenario"] = json!(outcome.scenario);
        fc["band"] = json!(band);
        fc["summary"] = json!(summary);
        Ok(Json(fc))
    })
    .await
}

/// All API routes, plus static files from `ui_dir` under `/` when given.
pub fn router(state: Arc<AppState>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/villages", get(villages))
        .route("/api/trajectory", get(trajectory))
        .route("/api/trends", get(trends))
        .route("/api/equality", get(equality))
        .route("/api/scenario", post(scenario))
        .route("/api/map/{scenario}", get(map))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, ui_dir)).await
}
