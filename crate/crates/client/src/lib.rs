//! Thin async client for the qPOTS HTTP service.

use std::time::Duration;

use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use qpots_core::harness::{ExperimentConfig, RunTrace, SummaryRow, SweepPoint};
use qpots_core::problems::{ConstraintKind, Values};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api { status: StatusCode, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

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
    pub evals: Vec<usize>,
    pub hypervolume: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcquireResponse {
    pub points: Vec<Vec<f64>>,
    pub attempts: usize,
}

#[derive(Debug, Deserialize)]
struct Points {
    points: Vec<Vec<f64>>,
}

#[derive(Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` like `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base: base_url.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn send<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<&Value>) -> Result<T> {
        let mut req = self.http.request(method, format!("{}{}", self.base, path));
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        if !status.is_success() {
            let message = match resp.json::<Value>().await {
                Ok(v) => v.get("error").and_then(Value::as_str).unwrap_or_default().to_string(),
                Err(e) => e.to_string(),
            };
            return Err(ClientError::Api { status, message });
        }
        Ok(resp.json().await?)
    }

    pub async fn health(&self) -> Result<()> {
        self.send::<Value>(Method::GET, "/health", None).await.map(|_| ())
    }

    pub async fn problems(&self) -> Result<Vec<ProblemInfo>> {
        self.send(Method::GET, "/v1/problems", None).await
    }

    pub async fn problem(&self, name: &str) -> Result<ProblemInfo> {
        self.send(Method::GET, &format!("/v1/problems/{name}"), None).await
    }

    pub async fn evaluate(&self, problem: &str, points: &[Vec<f64>]) -> Result<Vec<Values>> {
        #[derive(Deserialize)]
        struct Out {
            values: Vec<Values>,
        }
        let out: Out =
            self.send(Method::POST, &format!("/v1/problems/{problem}/evaluate"), Some(&json!({ "points": points }))).await?;
        Ok(out.values)
    }

    pub async fn analytic_front(&self, problem: &str, m: usize) -> Result<Vec<Vec<f64>>> {
        let out: Points = self.send(Method::GET, &format!("/v1/problems/{problem}/front?m={m}"), None).await?;
        Ok(out.points)
    }

    pub async fn hypervolume(&self, front: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
        let out: Value =
            self.send(Method::POST, "/v1/hypervolume", Some(&json!({ "front": front, "reference": reference }))).await?;
        Ok(out["hypervolume"].as_f64().unwrap_or(f64::NAN))
    }

    pub async fn sobol(&self, dim: usize, index: u64, q: usize) -> Result<Vec<Vec<f64>>> {
        let out: Points = self.send(Method::POST, "/v1/sobol", Some(&json!({ "dim": dim, "index": index, "q": q }))).await?;
        Ok(out.points)
    }

    pub async fn sweep(
        &self,
        problem: &str,
        pop_sizes: &[usize],
        n_generations: &[usize],
        seeds: &[u64],
    ) -> Result<Vec<SweepPoint>> {
        let body = json!({ "problem": problem, "pop_sizes": pop_sizes, "n_generations": n_generations, "seeds": seeds });
        self.send(Method::POST, "/v1/nsga2/sweep", Some(&body)).await
    }

    /// One ask/tell step; `request` follows the service's acquire schema.
    pub async fn acquire(&self, request: &Value) -> Result<AcquireResponse> {
        self.send(Method::POST, "/v1/acquire", Some(request)).await
    }

    /// Starts an experiment from a full or partial config.
    pub async fn start_experiment(&self, config: &Value) -> Result<ExperimentStatus> {
        self.send(Method::POST, "/v1/experiments", Some(config)).await
    }

    pub async fn experiments(&self) -> Result<Vec<ExperimentStatus>> {
        self.send(Method::GET, "/v1/experiments", None).await
    }

    pub async fn experiment(&self, id: u64) -> Result<ExperimentStatus> {
        self.send(Method::GET, &format!("/v1/experiments/{id}"), None).await
    }

    pub async fn stop_experiment(&self, id: u64) -> Result<ExperimentStatus> {
        self.send(Method::DELETE, &format!("/v1/experiments/{id}"), None).await
    }

    pub async fn traces(&self, id: u64) -> Result<Vec<RunTrace>> {
        self.send(Method::GET, &format!("/v1/experiments/{id}/traces"), None).await
    }

    pub async fn summary(&self, id: u64) -> Result<Vec<SummaryRow>> {
        self.send(Method::GET, &format!("/v1/experiments/{id}/summary"), None).await
    }

    /// Polls until the experiment leaves the running state, calling
    /// `on_poll` with every status seen.
    pub async fn wait(
        &self,
        id: u64,
        interval: Duration,
        mut on_poll: impl FnMut(&ExperimentStatus),
    ) -> Result<ExperimentStatus> {
        loop {
            let status = self.experiment(id).await?;
            on_poll(&status);
            if status.state != ExperimentState::Running {
                return Ok(status);
            }
            tokio::time::sleep(interval).await;
        }
    }
}
