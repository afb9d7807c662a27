use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use orplan_core::evalmc::{evaluate_plan, total_cost, VALIDATION_K};
use orplan_core::instgen::sample_scenario;
use orplan_core::planners::{plan, Method, PlannerConfig};
use orplan_core::rng::VALIDATION_OFFSET;
use orplan_core::simpolicy::{simulate_traced, PolicyParams};
use orplan_core::Error as CoreError;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::artifacts::{
    content_id, generate_with_surrogates, surrogates_for, InstanceArtifact, InstanceRequest, MonteCarloArtifact,
    PlanArtifact, SimulationArtifact,
};
use crate::store::{JobKind, JobRecord, JobStatus, Jobs, Store};

pub struct AppState {
    pub store: Store,
    pub jobs: Jobs,
    /// One permit per solver-heavy task allowed to run at once.
    pub workers: Semaphore,
}

impl AppState {
    pub fn new(store: Store, workers: usize) -> Arc<AppState> {
        let jobs = Jobs::load(&store);
        Arc::new(AppState { store, jobs, workers: Semaphore::new(workers.max(1)) })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/instances", post(create_instance))
        .route("/instances/{id}", get(get_instance))
        .route("/plans", post(create_plan))
        .route("/plans/{id}", get(get_plan))
        .route("/simulations", post(create_simulation))
        .route("/simulations/{id}", get(get_simulation))
        .route("/montecarlo", post(create_montecarlo))
        .route("/montecarlo/{id}", get(get_montecarlo))
        .route("/jobs/{id}", get(get_job))
        .with_state(state)
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(Vec<String>),
    NotFound(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, body) = match self {
            ApiError::BadRequest(fields) => {
                (StatusCode::BAD_REQUEST, json!({ "error": "invalid request", "fields": fields }))
            }
            ApiError::NotFound(what) => (StatusCode::NOT_FOUND, json!({ "error": format!("{what} not found") })),
            ApiError::Internal(msg) => (StatusCode::INTERNAL_SERVER_ERROR, json!({ "error": msg })),
        };
        (status, Json(body)).into_response()
    }
}

impl From<anyhow::Error> for ApiError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<CoreError>() {
            Some(CoreError::Config(m)) | Some(CoreError::Domain(m)) | Some(CoreError::Mismatch(m)) => {
                ApiError::BadRequest(vec![m.clone()])
            }
            _ => ApiError::Internal(format!("{e:#}")),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(vec![e.to_string()]))
}

fn stored(state: &AppState, kind: &str, id: &str, what: &str) -> ApiResult<Response> {
    match state.store.bytes(kind, id) {
        Some(b) => Ok(([(header::CONTENT_TYPE, "application/json")], b).into_response()),
        None => Err(ApiError::NotFound(format!("{what} {id}"))),
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> anyhow::Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?.map_err(ApiError::from)
}

async fn create_instance(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: InstanceRequest = parse(&body)?;
    let mut problems = req.config.problems();
    if req.surrogate.n == 0 || req.surrogate.k == 0 || req.surrogate.pieces == 0 {
        problems.push("surrogate: n, k and pieces must be positive".into());
    }
    if !problems.is_empty() {
        return Err(ApiError::BadRequest(problems));
    }
    let id = content_id(&req);
    if !state.store.contains("instances", &id) {
        let _permit = state.workers.acquire().await.map_err(|e| ApiError::Internal(e.to_string()))?;
        let st = state.clone();
        let key = id.clone();
        blocking(move || {
            let instance = generate_with_surrogates(&st.store.surrogate_dir(), &req.config, &req.surrogate)?;
            let artifact = InstanceArtifact { id: key.clone(), config: req.config, surrogate: req.surrogate, instance };
            st.store.put("instances", &key, &artifact)
        })
        .await?;
    }
    let mut resp = stored(&state, "instances", &id, "instance")?;
    *resp.status_mut() = StatusCode::CREATED;
    Ok(resp)
}

async fn get_instance(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    stored(&state, "instances", &id, "instance")
}

#[derive(Debug, Serialize, Deserialize)]
struct PlanRequest {
    instance_id: String,
    #[serde(default)]
    config: PlannerConfig,
}

fn plan_problems(config: &PlannerConfig) -> Vec<String> {
    let mut out = config.problems();
    if config.dump_models.is_some() {
        out.push("dump_models: not available over the API".into());
    }
    out
}

fn submit_job(state: &Arc<AppState>, id: String, kind: JobKind, request: serde_json::Value) -> ApiResult<(JobRecord, bool)> {
    let job = JobRecord { id, kind, request, status: JobStatus::Queued, result: None, error: None };
    state.jobs.submit(&state.store, job).map_err(ApiError::from)
}

/// Runs `work` on the worker pool and records its outcome on the job.
fn spawn_job(state: Arc<AppState>, id: String, result: String, work: impl FnOnce() -> anyhow::Result<()> + Send + 'static) {
    tokio::spawn(async move {
        let Ok(_permit) = state.workers.acquire().await else {
            return;
        };
        let _ = state.jobs.update(&state.store, &id, |j| j.status = JobStatus::Running);
        let outcome = tokio::task::spawn_blocking(work).await;
        let (status, error) = match outcome {
            Ok(Ok(())) => (JobStatus::Done, None),
            Ok(Err(e)) => (JobStatus::Failed, Some(format!("{e:#}"))),
            Err(e) => (JobStatus::Failed, Some(e.to_string())),
        };
        if let Err(e) = state.jobs.update(&state.store, &id, |j| {
            j.status = status;
            j.error = error;
            if status == JobStatus::Done {
                j.result = Some(result);
            }
        }) {
            tracing::error!(job = %id, "cannot record job outcome: {e:#}");
        }
    });
}

fn accepted(job: JobRecord) -> Response {
    (StatusCode::ACCEPTED, Json(job)).into_response()
}

async fn create_plan(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: PlanRequest = parse(&body)?;
    let problems = plan_problems(&req.config);
    if !problems.is_empty() {
        return Err(ApiError::BadRequest(problems));
    }
    let inst: InstanceArtifact = state
        .store
        .get("instances", &req.instance_id)?
        .ok_or_else(|| ApiError::NotFound(format!("instance {}", req.instance_id)))?;
    let id = content_id(&req);
    let job_id = format!("plan-{id}");
    if state.store.contains("plans", &id) && state.jobs.get(&job_id).is_none() {
        return stored(&state, "plans", &id, "plan");
    }
    let (job, fresh) = submit_job(&state, job_id.clone(), JobKind::Plan, serde_json::to_value(&req).expect("json"))?;
    if fresh {
        let st = state.clone();
        let key = id.clone();
        spawn_job(state.clone(), job_id, format!("/plans/{id}"), move || {
            let surrogates = match req.config.method {
                Method::Smb2ss => Some(surrogates_for(&st.store.surrogate_dir(), &inst.instance, &inst.surrogate)?),
                _ => None,
            };
            let out = plan(&inst.instance, surrogates.as_ref(), &req.config)?;
            let artifact = PlanArtifact {
                id: key.clone(),
                instance_id: Some(inst.id),
                config: req.config,
                instance: inst.instance,
                plan: out.plan,
                report: out.report,
            };
            st.store.put("plans", &key, &artifact)
        });
    }
    Ok(accepted(job))
}

/// The stored result, or the job record while it is still being computed.
fn result_or_job(state: &AppState, kind: &str, prefix: &str, id: &str, what: &str) -> ApiResult<Response> {
    if state.store.contains(kind, id) {
        return stored(state, kind, id, what);
    }
    match state.jobs.get(&format!("{prefix}-{id}")) {
        Some(job) => Ok(accepted(job)),
        None => Err(ApiError::NotFound(format!("{what} {id}"))),
    }
}

async fn get_plan(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    result_or_job(&state, "plans", "plan", &id, "plan")
}

#[derive(Debug, Serialize, Deserialize)]
struct SimulationRequest {
    plan_id: String,
    /// Validation stream of the instance when absent.
    #[serde(default)]
    scenario_seed: Option<u64>,
    #[serde(default)]
    scenario_index: u64,
    #[serde(flatten)]
    params: PolicyParams,
}

async fn create_simulation(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: SimulationRequest = parse(&body)?;
    let problems = req.params.problems();
    if !problems.is_empty() {
        return Err(ApiError::BadRequest(problems));
    }
    let planned: PlanArtifact =
        state.store.get("plans", &req.plan_id)?.ok_or_else(|| ApiError::NotFound(format!("plan {}", req.plan_id)))?;
    let seed = req.scenario_seed.unwrap_or(planned.instance.seed.wrapping_add(VALIDATION_OFFSET));
    let id = content_id(&(&req.plan_id, seed, req.scenario_index, req.params));
    if !state.store.contains("simulations", &id) {
        let st = state.clone();
        let key = id.clone();
        blocking(move || {
            let scenario = sample_scenario(&planned.instance, seed, req.scenario_index)?;
            let (outcome, trace) = simulate_traced(&planned.instance, &planned.plan, &scenario, &req.params)?;
            let cost = total_cost(&planned.instance, &outcome)?;
            let artifact = SimulationArtifact {
                id: key.clone(),
                plan_id: req.plan_id,
                scenario_seed: seed,
                scenario_index: req.scenario_index,
                params: req.params,
                scenario,
                outcome,
                cost,
                trace,
            };
            st.store.put("simulations", &key, &artifact)
        })
        .await?;
    }
    let mut resp = stored(&state, "simulations", &id, "simulation")?;
    *resp.status_mut() = StatusCode::CREATED;
    Ok(resp)
}

async fn get_simulation(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    stored(&state, "simulations", &id, "simulation")
}

#[derive(Debug, Serialize, Deserialize)]
struct MonteCarloRequest {
    plan_id: String,
    #[serde(default = "default_k")]
    k: usize,
    #[serde(default)]
    scenario_seed: Option<u64>,
    #[serde(flatten)]
    params: PolicyParams,
}

fn default_k() -> usize {
    VALIDATION_K
}

async fn create_montecarlo(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let req: MonteCarloRequest = parse(&body)?;
    let mut problems = req.params.problems();
    if req.k == 0 {
        problems.push("k: must be positive".into());
    }
    if !problems.is_empty() {
        return Err(ApiError::BadRequest(problems));
    }
    let planned: PlanArtifact =
        state.store.get("plans", &req.plan_id)?.ok_or_else(|| ApiError::NotFound(format!("plan {}", req.plan_id)))?;
    let seed = req.scenario_seed.unwrap_or(planned.instance.seed.wrapping_add(VALIDATION_OFFSET));
    let id = content_id(&(&req.plan_id, req.k, seed, req.params));
    let job_id = format!("montecarlo-{id}");
    if state.store.contains("montecarlo", &id) && state.jobs.get(&job_id).is_none() {
        return stored(&state, "montecarlo", &id, "report");
    }
    let (job, fresh) =
        submit_job(&state, job_id.clone(), JobKind::Montecarlo, serde_json::to_value(&req).expect("json"))?;
    if fresh {
        let st = state.clone();
        let key = id.clone();
        spawn_job(state.clone(), job_id, format!("/montecarlo/{id}"), move || {
            let scenarios = orplan_core::instgen::sample_scenarios(&planned.instance, req.k, seed)?;
            let report = evaluate_plan(&planned.instance, &planned.plan, &scenarios, &req.params)?
                .with_planner(planned.report);
            let artifact = MonteCarloArtifact { id: key.clone(), plan_id: req.plan_id, k: req.k, scenario_seed: seed, report };
            st.store.put("montecarlo", &key, &artifact)
        });
    }
    Ok(accepted(job))
}

async fn get_montecarlo(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    result_or_job(&state, "montecarlo", "montecarlo", &id, "report")
}

async fn get_job(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    state.jobs.get(&id).map(Json).ok_or_else(|| ApiError::NotFound(format!("job {id}")))
}
