//! HTTP/JSON service for qPOTS.
//!
//! Long experiments run on blocking worker threads and are polled by id;
//! stateless operations (problem evaluation, hypervolume, Sobol points,
//! single acquisitions) answer directly.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use qpots_core::acquisition::{acquire, AcquisitionRound, NystromConfig};
use qpots_core::harness::{self, ExperimentConfig, IterationRecord, Observations, Policy, RunOptions, RunTrace, SummaryRow, SweepPoint};
use qpots_core::nsga2::EvolverConfig;
use qpots_core::pareto::{fast_nondominated_sort, hypervolume, nondominated_filter};
use qpots_core::problems::{analytic_front_sample, ConstraintKind, Problem, Values, PROBLEM_NAMES};
use qpots_core::{sobol, Error};

/// A JSON error body with an HTTP status.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn not_found(what: impl Into<String>) -> Self {
        Self(StatusCode::NOT_FOUND, what.into())
    }

    fn conflict(what: impl Into<String>) -> Self {
        Self(StatusCode::CONFLICT, what.into())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => StatusCode::BAD_REQUEST,
            Error::NotAvailable(_) | Error::AcquisitionFailed { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self(status, e.to_string())
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        Self(StatusCode::BAD_REQUEST, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

fn bad_request(msg: &str) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub name: String,
    pub dim: usize,
    pub num_objectives: usize,
    pub constraints: Vec<ConstraintKind>,
    pub bounds: Vec<(f64, f64)>,
    pub reference_point: Vec<f64>,
    pub has_analytic_front: bool,
}

impl From<&Problem> for ProblemInfo {
    fn from(p: &Problem) -> Self {
        Self {
            name: p.name.clone(),
            dim: p.dim,
            num_objectives: p.num_objectives,
            constraints: p.constraints.clone(),
            bounds: p.bounds.clone(),
            reference_point: p.reference_point.clone(),
            has_analytic_front: p.has_analytic_front(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PointsBody {
    pub points: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValuesBody {
    pub values: Vec<Values>,
}

#[derive(Debug, Deserialize)]
struct FrontQuery {
    m: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HypervolumeRequest {
    pub front: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HypervolumeBody {
    pub hypervolume: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NondominatedBody {
    pub nondominated: Vec<usize>,
    pub fronts: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SobolRequest {
    pub dim: usize,
    #[serde(default)]
    pub index: u64,
    pub q: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRequest {
    pub problem: String,
    pub pop_sizes: Vec<usize>,
    pub n_generations: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_front_samples")]
    pub front_samples: usize,
}

fn default_front_samples() -> usize {
    1000
}

/// One ask/tell step: observations so far in, the next batch out.
#[derive(Debug, Serialize, Deserialize)]
pub struct AcquireRequest {
    pub problem: String,
    /// Observed sites in natural units.
    pub sites: Vec<Vec<f64>>,
    pub values: Vec<Values>,
    pub q: usize,
    #[serde(default)]
    pub seed: u64,
    pub noise_variance: Option<f64>,
    pub evolver: Option<EvolverConfig>,
    pub nystrom: Option<NystromConfig>,
    pub eq_tolerance: Option<f64>,
    pub max_retries: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AcquireResponse {
    /// Next points in natural units.
    pub points: Vec<Vec<f64>>,
    pub attempts: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentState {
    Running,
    Completed,
    Stopped,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub id: u64,
    pub state: ExperimentState,
    pub config: ExperimentConfig,
    /// Evaluations so far, per replicate.
    pub evals: Vec<usize>,
    /// Latest hypervolume, per replicate.
    pub hypervolume: Vec<f64>,
    pub error: Option<String>,
}

struct Experiment {
    status: ExperimentStatus,
    traces: Vec<RunTrace>,
    summary: Option<Vec<SummaryRow>>,
    stop: Arc<AtomicBool>,
}

#[derive(Default)]
struct Registry {
    next_id: u64,
    experiments: BTreeMap<u64, Experiment>,
}

#[derive(Clone, Default)]
pub struct AppState {
    registry: Arc<Mutex<Registry>>,
}

impl AppState {
    fn with_experiment<T>(&self, id: u64, f: impl FnOnce(&mut Experiment) -> T) -> Result<T, ApiError> {
        let mut reg = self.registry.lock().expect("registry lock");
        reg.experiments.get_mut(&id).map(f).ok_or_else(|| ApiError::not_found(format!("no experiment {id}")))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/problems", get(list_problems))
        .route("/v1/problems/{name}", get(problem_info))
        .route("/v1/problems/{name}/evaluate", post(evaluate))
        .route("/v1/problems/{name}/front", get(front))
        .route("/v1/hypervolume", post(hypervolume_handler))
        .route("/v1/pareto/nondominated", post(nondominated))
        .route("/v1/sobol", post(sobol_handler))
        .route("/v1/nsga2/sweep", post(sweep))
        .route("/v1/acquire", post(acquire_handler))
        .route("/v1/experiments", post(start_experiment).get(list_experiments))
        .route("/v1/experiments/{id}", get(experiment_status).delete(stop_experiment))
        .route("/v1/experiments/{id}/traces", get(experiment_traces))
        .route("/v1/experiments/{id}/summary", get(experiment_summary))
        .with_state(state)
}

/// Binds `addr` and serves in a background task, returning the bound address.
pub async fn spawn(addr: &str) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(AppState::default());
    Ok((local, tokio::spawn(async move { axum::serve(listener, app).await })))
}

async fn health() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_problems() -> ApiResult<Vec<ProblemInfo>> {
    let problems = PROBLEM_NAMES.iter().map(|n| Problem::by_name(n).map(|p| ProblemInfo::from(&p)));
    Ok(Json(problems.collect::<Result<_, _>>()?))
}

async fn problem_info(Path(name): Path<String>) -> ApiResult<ProblemInfo> {
    Ok(Json(ProblemInfo::from(&Problem::by_name(&name)?)))
}

async fn evaluate(Path(name): Path<String>, Json(body): Json<PointsBody>) -> ApiResult<ValuesBody> {
    let problem = Problem::by_name(&name)?;
    let values = body.points.iter().map(|x| problem.evaluate(x)).collect::<Result<_, _>>()?;
    Ok(Json(ValuesBody { values }))
}

async fn front(Path(name): Path<String>, Query(query): Query<FrontQuery>) -> ApiResult<PointsBody> {
    let problem = Problem::by_name(&name)?;
    Ok(Json(PointsBody { points: analytic_front_sample(&problem, query.m.unwrap_or(1000))? }))
}

async fn hypervolume_handler(Json(body): Json<HypervolumeRequest>) -> ApiResult<HypervolumeBody> {
    let hv = tokio::task::spawn_blocking(move || hypervolume(&body.front, &body.reference))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(HypervolumeBody { hypervolume: hv }))
}

async fn nondominated(Json(body): Json<PointsBody>) -> ApiResult<NondominatedBody> {
    if let Some(first) = body.points.first() {
        if body.points.iter().any(|p| p.len() != first.len()) {
            return Err(bad_request("points must share one length"));
        }
    }
    Ok(Json(NondominatedBody {
        nondominated: nondominated_filter(&body.points),
        fronts: fast_nondominated_sort(&body.points),
    }))
}

async fn sobol_handler(Json(body): Json<SobolRequest>) -> ApiResult<PointsBody> {
    Ok(Json(PointsBody { points: sobol::sobol_batch(body.dim, body.index, body.q)? }))
}

async fn sweep(Json(body): Json<SweepRequest>) -> ApiResult<Vec<SweepPoint>> {
    let problem = Problem::by_name(&body.problem)?;
    let settings: Vec<(usize, usize)> =
        body.pop_sizes.iter().flat_map(|&p| body.n_generations.iter().map(move |&g| (p, g))).collect();
    let rows = tokio::task::spawn_blocking(move || harness::nsga2_sweep(&problem, &settings, &body.seeds, body.front_samples))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(rows))
}

fn acquire_blocking(req: AcquireRequest) -> Result<AcquireResponse, ApiError> {
    let mut config = ExperimentConfig::new(&req.problem, Policy::Qpots)?;
    let problem = config.validate()?;
    if let Some(v) = req.noise_variance {
        config.noise_variance = v;
    }
    if let Some(e) = req.evolver {
        config.evolver = e;
    }
    if req.sites.len() != req.values.len() {
        return Err(bad_request("sites and values differ in length"));
    }
    let mut obs = Observations::default();
    for (x, v) in req.sites.iter().zip(req.values) {
        if x.len() != problem.dim
            || v.objectives.len() != problem.num_objectives
            || v.constraints.len() != problem.num_constraints()
        {
            return Err(bad_request("observation shape does not match the problem"));
        }
        if x.iter().zip(&problem.bounds).any(|(x, (lo, hi))| !(lo..=hi).contains(&x)) {
            return Err(bad_request("observed site outside the problem bounds"));
        }
        obs.push(problem.to_unit(x), v);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let (objectives, constraints) = harness::fit_surrogates(&problem, &obs, &config, &[], &mut rng)?;
    let round = AcquisitionRound {
        objectives,
        constraints,
        q: req.q,
        eq_tolerance: req.eq_tolerance.unwrap_or(config.eq_tolerance),
        evolver: config.evolver,
        nystrom: req.nystrom.unwrap_or_default(),
        observed_sites: obs.sites,
    };
    let batch = acquire(&round, &mut rng, req.max_retries.unwrap_or(config.max_retries))?;
    Ok(AcquireResponse {
        points: batch.points.iter().map(|u| problem.from_unit(u)).collect(),
        attempts: batch.attempts(),
    })
}

async fn acquire_handler(Json(req): Json<AcquireRequest>) -> ApiResult<AcquireResponse> {
    let out = tokio::task::spawn_blocking(move || acquire_blocking(req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(out))
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Fills the fields missing from a partial config with the problem defaults.
pub fn resolve_config(body: Value) -> Result<ExperimentConfig, ApiError> {
    let problem = body
        .get("problem")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "missing \"problem\"".into()))?;
    let policy = match body.get("policy") {
        Some(p) => serde_json::from_value(p.clone())?,
        None => Policy::Qpots,
    };
    let mut base = serde_json::to_value(ExperimentConfig::new(problem, policy)?)?;
    let n_seed_only = body.get("n_seed").is_some() && body.get("budget").is_none();
    merge(&mut base, body);
    let mut config: ExperimentConfig = serde_json::from_value(base)?;
    if n_seed_only {
        config.budget = config.n_seed + 10 * config.q;
    }
    config.validate()?;
    Ok(config)
}

async fn start_experiment(State(state): State<AppState>, Json(body): Json<Value>) -> Result<(StatusCode, Json<ExperimentStatus>), ApiError> {
    let config = resolve_config(body)?;
    let stop = Arc::new(AtomicBool::new(false));
    let reps = config.replicates;
    let status = ExperimentStatus {
        id: 0,
        state: ExperimentState::Running,
        config: config.clone(),
        evals: vec![0; reps],
        hypervolume: vec![0.0; reps],
        error: None,
    };
    let id = {
        let mut reg = state.registry.lock().expect("registry lock");
        let id = reg.next_id;
        reg.next_id += 1;
        let status = ExperimentStatus { id, ..status };
        let traces = (0..reps).map(|replicate| RunTrace { replicate, records: vec![] }).collect();
        reg.experiments.insert(id, Experiment { status, traces, summary: None, stop: stop.clone() });
        id
    };
    let progress_state = state.clone();
    let options = RunOptions {
        stop: Some(stop.clone()),
        progress: Some(Arc::new(move |rep: usize, record: &IterationRecord| {
            let _ = progress_state.with_experiment(id, |e| {
                e.status.evals[rep] = record.evals;
                e.status.hypervolume[rep] = record.hypervolume;
                e.traces[rep].records.push(record.clone());
            });
        })),
        ..Default::default()
    };
    let finish_state = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = harness::run(&config, &options);
        let _ = finish_state.with_experiment(id, |e| match result {
            Ok(report) => {
                e.status.evals = report.traces.iter().map(RunTrace::evals).collect();
                e.status.hypervolume = report.traces.iter().map(RunTrace::final_hypervolume).collect();
                e.status.state = if report.complete { ExperimentState::Completed } else { ExperimentState::Stopped };
                e.traces = report.traces;
                e.summary = report.summary;
            }
            Err(err) => {
                tracing::error!(id, error = %err, "experiment failed");
                e.status.state = ExperimentState::Failed;
                e.status.error = Some(err.to_string());
            }
        });
    });
    let status = state.with_experiment(id, |e| e.status.clone())?;
    Ok((StatusCode::CREATED, Json(status)))
}

async fn list_experiments(State(state): State<AppState>) -> Json<Vec<ExperimentStatus>> {
    let reg = state.registry.lock().expect("registry lock");
    Json(reg.experiments.values().map(|e| e.status.clone()).collect())
}

async fn experiment_status(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<ExperimentStatus> {
    Ok(Json(state.with_experiment(id, |e| e.status.clone())?))
}

async fn stop_experiment(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<ExperimentStatus> {
    Ok(Json(state.with_experiment(id, |e| {
        e.stop.store(true, Ordering::Relaxed);
        e.status.clone()
    })?))
}

async fn experiment_traces(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Vec<RunTrace>> {
    Ok(Json(state.with_experiment(id, |e| e.traces.clone())?))
}

async fn experiment_summary(State(state): State<AppState>, Path(id): Path<u64>) -> ApiResult<Vec<SummaryRow>> {
    state
        .with_experiment(id, |e| e.summary.clone())?
        .map(Json)
        .ok_or_else(|| ApiError::conflict(format!("experiment {id} has no summary yet")))
}
