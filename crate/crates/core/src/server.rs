//! JSON API over a repository for the experiment viewer.
//!
//! Endpoints (all under `/api`):
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/campaigns` | campaign metadata |
//! | GET | `/tests`, `/tests/{uid}` | test metadata; the single form adds the kernel source |
//! | GET | `/configs` | configurations |
//! | GET | `/executions` | records; `campaign`, `test`, `config`, `outcome`, `mode`, `generator_version`, `limit`, `offset`, `view` |
//! | GET | `/verdicts?campaign=` | test and EMI verdicts |
//! | GET | `/views`, `/views/{name}` | view definitions |
//! | PUT | `/views/{name}` | save a view (422 on unknown key paths) |
//! | GET | `/rerun-command?test=&config=&threads=` | the exact command line |
//! | POST | `/rerun` | `{test, config, threads?, campaign?}`; runs once and appends |
//!
//! Errors are always `{"status", "code", "message"}`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::Error;
use crate::minikernel::EvalParams;
use crate::runner::{self, ExecutionRecord};
use crate::store::{resolve_key_path, QueryFilter, Repository, ViewDef};
use crate::uid::Uid;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            status: status.as_u16(),
            code: code.to_owned(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> ApiError {
        let (status, code) = match &e {
            Error::NotFound(_) | Error::UnknownUid(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::UnknownCampaign(_) => (StatusCode::NOT_FOUND, "unknown_campaign"),
            Error::SchemaViolation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "schema_violation"),
            Error::InvalidArgument(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            Error::InactiveTest(_) => (StatusCode::CONFLICT, "inactive_test"),
            Error::Locked(_) | Error::ReadOnly => (StatusCode::CONFLICT, "read_only"),
            Error::ExecutorNotFound(_) => (StatusCode::BAD_GATEWAY, "executor_not_found"),
            Error::BadTemplate(_) => (StatusCode::UNPROCESSABLE_ENTITY, "bad_template"),
            Error::Io(_) | Error::Json(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            _ => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

struct AppState {
    repo: Repository,
    // at most one rerun in flight
    rerun: tokio::sync::Mutex<()>,
}

type Shared = Arc<AppState>;

/// Builds the API router. Reruns need `repo` to be opened as writer.
pub fn router(repo: Repository) -> Router {
    let state = Arc::new(AppState {
        repo,
        rerun: tokio::sync::Mutex::new(()),
    });
    Router::new()
        .route("/api/campaigns", get(campaigns))
        .route("/api/tests", get(tests))
        .route("/api/tests/{uid}", get(test_detail))
        .route("/api/configs", get(configs))
        .route("/api/executions", get(executions))
        .route("/api/verdicts", get(verdicts))
        .route("/api/views", get(views))
        .route("/api/views/{name}", get(view).put(put_view))
        .route("/api/rerun-command", get(rerun_command))
        .route("/api/rerun", post(rerun))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves on 127.0.0.1:`port` until Ctrl-C.
pub fn serve(repo: Repository, port: u16) -> crate::Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let addr = SocketAddr::from(([127, 0, 0, 1], port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("serving {} on http://{}", repo.root().display(), listener.local_addr()?);
        axum::serve(listener, router(repo))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

type Params = Query<HashMap<String, String>>;

fn uid_param(params: &HashMap<String, String>, key: &str) -> ApiResult<Option<Uid>> {
    params
        .get(key)
        .filter(|s| !s.is_empty())
        .map(|s| Uid::parse(s).map_err(|_| ApiError::bad_request(format!("malformed {key} uid {s:?}"))))
        .transpose()
}

fn usize_param(params: &HashMap<String, String>, key: &str) -> ApiResult<Option<usize>> {
    params
        .get(key)
        .map(|s| s.parse().map_err(|_| ApiError::bad_request(format!("{key} must be a non-negative integer"))))
        .transpose()
}

fn threads_param(params: &HashMap<String, String>) -> ApiResult<Option<EvalParams>> {
    params
        .get("threads")
        .map(|s| {
            s.parse::<u32>()
                .ok()
                .and_then(|t| EvalParams::new(t).ok())
                .ok_or_else(|| ApiError::bad_request("threads must be a positive integer"))
        })
        .transpose()
}

async fn blocking<T, F>(state: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Repository) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || f(&state.repo))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn campaigns(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    blocking(&s, |repo| Ok(Json(json!(repo.campaigns()?)))).await
}

async fn tests(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    blocking(&s, |repo| Ok(Json(json!(repo.tests()?)))).await
}

async fn test_detail(State(s): State<Shared>, Path(uid): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |repo| {
        let uid = Uid::parse(&uid).map_err(|_| ApiError::bad_request(format!("malformed uid {uid:?}")))?;
        let test = repo.test(&uid)?;
        let source = repo.test_source(&test)?;
        Ok(Json(json!({ "test": test, "source": source })))
    })
    .await
}

async fn configs(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    blocking(&s, |repo| Ok(Json(json!(repo.configs()?)))).await
}

fn apply_filters(mut filter: QueryFilter, pairs: &BTreeMap<String, String>) -> ApiResult<QueryFilter> {
    for (k, v) in pairs {
        filter = filter.with(k, v).map_err(|e| ApiError::bad_request(e.to_string()))?;
    }
    Ok(filter)
}

async fn executions(State(s): State<Shared>, Query(params): Params) -> ApiResult<Json<Value>> {
    blocking(&s, move |repo| {
        let view = match params.get("view") {
            Some(name) => Some(repo.view(name)?.ok_or_else(|| {
                ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("no view named {name:?}"))
            })?),
            None => None,
        };
        // the view's filters are defaults; explicit parameters win
        let mut pairs: BTreeMap<String, String> = view.as_ref().map(|v| v.filters.clone()).unwrap_or_default();
        for key in ["test", "config", "outcome", "mode", "generator_version"] {
            if let Some(v) = params.get(key).filter(|v| !v.is_empty()) {
                pairs.insert(key.to_owned(), v.clone());
            }
        }
        let filter = apply_filters(QueryFilter::default(), &pairs)?;
        let campaigns = match uid_param(&params, "campaign")? {
            Some(c) => vec![c],
            None => repo.campaigns()?.into_iter().map(|c| c.uid).collect(),
        };
        let mut records: Vec<ExecutionRecord> = Vec::new();
        for c in &campaigns {
            records.extend(repo.query(c, &filter)?);
        }
        let offset = usize_param(&params, "offset")?.unwrap_or(0);
        let limit = usize_param(&params, "limit")?.unwrap_or(usize::MAX);
        let page: Vec<ExecutionRecord> = records.into_iter().skip(offset).take(limit).collect();
        match view {
            None => Ok(Json(json!(page))),
            Some(v) => Ok(Json(project(repo, &v, &page)?)),
        }
    })
    .await
}

/// Rows of `view.columns` for each record, joined with verdicts, tests and
/// configurations.
fn project(repo: &Repository, view: &ViewDef, records: &[ExecutionRecord]) -> ApiResult<Value> {
    let mut verdicts = HashMap::new();
    let mut tests = HashMap::new();
    let mut configs = HashMap::new();
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        if !verdicts.contains_key(&r.campaign_id) {
            let vs: HashMap<Uid, _> = repo
                .verdicts(&r.campaign_id)?
                .into_iter()
                .map(|v| (v.test_uid.clone(), v))
                .collect();
            verdicts.insert(r.campaign_id.clone(), vs);
        }
        let test = tests
            .entry(r.test_uid.clone())
            .or_insert_with(|| repo.test(&r.test_uid).ok());
        let config = configs
            .entry(r.config_uid.clone())
            .or_insert_with(|| repo.config(&r.config_uid).ok());
        let verdict = verdicts[&r.campaign_id].get(&r.test_uid);
        let row: Vec<Value> = view
            .columns
            .iter()
            .map(|c| resolve_key_path(c, r, verdict, test.as_ref(), config.as_ref()))
            .collect();
        rows.push(row);
    }
    Ok(json!({ "view": view.name, "columns": view.columns, "rows": rows }))
}

async fn verdicts(State(s): State<Shared>, Query(params): Params) -> ApiResult<Json<Value>> {
    blocking(&s, move |repo| {
        let campaign = uid_param(&params, "campaign")?
            .ok_or_else(|| ApiError::bad_request("campaign is required"))?;
        Ok(Json(json!({
            "campaign": campaign,
            "verdicts": repo.verdicts(&campaign)?,
            "emi": repo.emi_verdicts(&campaign)?,
        })))
    })
    .await
}

async fn views(State(s): State<Shared>) -> ApiResult<Json<Value>> {
    blocking(&s, |repo| Ok(Json(json!(repo.views()?)))).await
}

async fn view(State(s): State<Shared>, Path(name): Path<String>) -> ApiResult<Json<Value>> {
    blocking(&s, move |repo| match repo.view(&name)? {
        Some(v) => Ok(Json(json!(v))),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no view named {name:?}"),
        )),
    })
    .await
}

async fn put_view(State(s): State<Shared>, Path(name): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let mut v: ViewDef = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", e.to_string()))?;
    v.name = name;
    blocking(&s, move |repo| Ok(Json(json!(repo.put_view(v)?)))).await
}

async fn rerun_command(State(s): State<Shared>, Query(params): Params) -> ApiResult<Json<Value>> {
    blocking(&s, move |repo| {
        let test = uid_param(&params, "test")?.ok_or_else(|| ApiError::bad_request("test is required"))?;
        let config = uid_param(&params, "config")?.ok_or_else(|| ApiError::bad_request("config is required"))?;
        let eval = resolve_params(repo, threads_param(&params)?, uid_param(&params, "campaign")?.as_ref())?;
        let command = runner::rerun_command(repo, &test, &config, &eval)?;
        Ok(Json(json!({ "command": command })))
    })
    .await
}

/// Explicit threads win; otherwise the campaign's, otherwise one thread.
fn resolve_params(repo: &Repository, threads: Option<EvalParams>, campaign: Option<&Uid>) -> ApiResult<EvalParams> {
    if let Some(p) = threads {
        return Ok(p);
    }
    if let Some(c) = campaign {
        return Ok(repo.campaign(c)?.params);
    }
    Ok(EvalParams::new(1).expect("one thread is valid"))
}

#[derive(Debug, Deserialize)]
struct RerunRequest {
    test: String,
    config: String,
    #[serde(default)]
    threads: Option<u32>,
    #[serde(default)]
    campaign: Option<String>,
}

async fn rerun(State(s): State<Shared>, body: Bytes) -> ApiResult<Json<ExecutionRecord>> {
    let req: RerunRequest = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let parse = |k: &str, v: &str| Uid::parse(v).map_err(|_| ApiError::bad_request(format!("malformed {k} uid {v:?}")));
    let test_uid = parse("test", &req.test)?;
    let config_uid = parse("config", &req.config)?;
    let campaign = req.campaign.as_deref().map(|c| parse("campaign", c)).transpose()?;
    let threads = req
        .threads
        .map(|t| EvalParams::new(t).map_err(|_| ApiError::bad_request("threads must be a positive integer")))
        .transpose()?;

    let _guard = s.rerun.lock().await;
    blocking(&s, move |repo| {
        if !repo.is_writer() {
            return Err(Error::ReadOnly.into());
        }
        let test = repo.test(&test_uid).map_err(not_found_uid)?;
        let config = repo.config(&config_uid).map_err(not_found_uid)?;
        let params = resolve_params(repo, threads, campaign.as_ref())?;
        let campaign_id = match campaign {
            Some(c) => c,
            None => runner::rerun_campaign(repo, &params)?,
        };
        Ok(runner::run_one(repo, &test, &config, &params, &campaign_id)?)
    })
    .await
    .map(Json)
}

fn not_found_uid(e: Error) -> Error {
    match e {
        Error::NotFound(u) => Error::UnknownUid(u),
        e => e,
    }
}
