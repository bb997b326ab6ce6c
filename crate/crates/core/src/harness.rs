//! The outer optimization loop: seeding, refits, acquisition, observation,
//! hypervolume tracking and persistent traces.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{
    acquire, AcquisitionRound, ConstraintModel, FunctionModel, NystromConfig, DEFAULT_EQ_TOLERANCE,
    DEFAULT_MAX_RETRIES,
};
use crate::error::{Error, Result};
use crate::gp::{fit, Dataset, FitOptions, KernelFamily, KernelSpec};
use crate::nsga2::{minimize, EvolverConfig, FnEvaluator, Evaluation};
use crate::pareto::{hypervolume, igd, nondominated_filter};
use crate::problems::{analytic_front_sample, ConstraintKind, NoisyOracle, Problem, Values};
use crate::sobol::sobol_batch_shifted;

/// Smallest noise variance given to a surrogate, in standardized units.
pub const MIN_MODEL_NOISE: f64 = 1e-6;

const TRACE_HEADER: [&str; 5] = ["iter", "evals", "hypervolume", "cum_seconds", "points"];
const SUMMARY_HEADER: [&str; 4] = ["iter", "evals", "hv_mean", "hv_std"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Qpots,
    Sobol,
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qpots" => Ok(Policy::Qpots),
            "sobol" => Ok(Policy::Sobol),
            _ => Err(Error::invalid(format!("unknown policy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: String,
    pub policy: Policy,
    pub q: usize,
    pub n_seed: usize,
    pub budget: usize,
    pub noise_variance: f64,
    pub nystrom: NystromConfig,
    pub evolver: EvolverConfig,
    pub replicates: usize,
    pub master_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub eq_tolerance: f64,
    pub max_retries: usize,
    /// Track hypervolume on noiseless re-evaluations of the observed points.
    pub noiseless_hv: bool,
    pub kernel: KernelFamily,
    pub fit: FitOptions,
}

impl ExperimentConfig {
    /// Defaults for `problem`: 10·d seed points, 100·d population, ten
    /// replicates, τ² = 1e-3 and ten sequential iterations.
    pub fn new(problem: &str, policy: Policy) -> Result<Self> {
        let p = Problem::by_name(problem)?;
        let n_seed = (10 * p.dim).max(2);
        Ok(Self {
            problem: p.name.clone(),
            policy,
            q: 1,
            n_seed,
            budget: n_seed + 10,
            noise_variance: 1e-3,
            nystrom: NystromConfig::default(),
            evolver: EvolverConfig::for_dim(p.dim),
            replicates: 10,
            master_seed: 0,
            output_dir: None,
            eq_tolerance: DEFAULT_EQ_TOLERANCE,
            max_retries: DEFAULT_MAX_RETRIES,
            noiseless_hv: false,
            kernel: KernelFamily::Matern52,
            fit: FitOptions::default(),
        })
    }

    /// Checks the config and resolves its problem.
    pub fn validate(&self) -> Result<Problem> {
        let problem = Problem::by_name(&self.problem)?;
        if self.n_seed < 2 {
            return Err(Error::invalid("n_seed must be at least 2"));
        }
        if self.q == 0 {
            return Err(Error::invalid("q must be positive"));
        }
        if self.budget < self.n_seed {
            return Err(Error::invalid("budget must be at least n_seed"));
        }
        if (self.budget - self.n_seed) % self.q != 0 {
            return Err(Error::invalid("budget - n_seed must be divisible by q"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(Error::invalid("noise variance must be finite and nonnegative"));
        }
        if !(self.eq_tolerance.is_finite() && self.eq_tolerance >= 0.0) {
            return Err(Error::invalid("equality tolerance must be nonnegative"));
        }
        self.evolver.validate()?;
        Ok(problem)
    }

    /// Seed of replicate `i`: `master_seed ^ i`.
    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        self.master_seed ^ replicate as u64
    }
}

/// Observed sites (unit box) and their noisy values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    pub sites: Vec<Vec<f64>>,
    pub values: Vec<Values>,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn push(&mut self, site: Vec<f64>, values: Values) {
        self.sites.push(site);
        self.values.push(values);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub evals: usize,
    pub hypervolume: f64,
    pub cum_seconds: f64,
    /// Points evaluated in this iteration, natural units.
    pub points: Vec<Vec<f64>>,
    /// The policy failed and a single uniform point was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub replicate: usize,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn final_hypervolume(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.hypervolume)
    }

    pub fn evals(&self) -> usize {
        self.records.last().map_or(0, |r| r.evals)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub iter: usize,
    pub evals: usize,
    pub hv_mean: f64,
    pub hv_std: f64,
}

pub type ProgressFn = Arc<dyn Fn(usize, &IterationRecord) + Send + Sync>;

/// Controls for long runs.
#[derive(Clone, Default)]
pub struct RunOptions {
    /// Checked between iterations; a set flag ends the run early.
    pub stop: Option<Arc<AtomicBool>>,
    /// Iterations to perform per replicate in this call, for staged runs.
    pub max_new_iterations: Option<usize>,
    pub progress: Option<ProgressFn>,
    /// Worker threads for replicates. Defaults to the available parallelism.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub traces: Vec<RunTrace>,
    /// Present when every replicate reached the budget and the traces align.
    pub summary: Option<Vec<SummaryRow>>,
    pub complete: bool,
}

/// Uniform random points in the unit box.
pub fn seed_sites<R: Rng + ?Sized>(dim: usize, n_seed: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n_seed).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Draws `n_seed` uniform sites and observes each once.
pub fn seed_design<R: Rng + ?Sized>(oracle: &mut NoisyOracle, n_seed: usize, rng: &mut R) -> Result<Observations> {
    if n_seed < 2 {
        return Err(Error::invalid("n_seed must be at least 2"));
    }
    let mut obs = Observations::default();
    for u in seed_sites(oracle.problem().dim, n_seed, rng) {
        let v = oracle.observe(&oracle.problem().from_unit(&u))?;
        obs.push(u, v);
    }
    Ok(obs)
}

/// Sobol points `index..index+q` with a digital shift, in natural units.
pub fn sobol_points(problem: &Problem, index: u64, q: usize, shift: &[u32]) -> Result<Vec<Vec<f64>>> {
    Ok(sobol_batch_shifted(problem.dim, index, q, shift)?.iter().map(|u| problem.from_unit(u)).collect())
}

fn is_feasible(kinds: &[ConstraintKind], constraints: &[f64], eq_tolerance: f64) -> bool {
    kinds.iter().zip(constraints).all(|(k, c)| match k {
        ConstraintKind::Inequality => *c >= 0.0,
        ConstraintKind::Equality => c.abs() <= eq_tolerance,
    })
}

/// Hypervolume of the feasible nondominated observations. With `noiseless`
/// the problem is re-evaluated at the observed sites.
pub fn observed_hypervolume(problem: &Problem, obs: &Observations, eq_tolerance: f64, noiseless: bool) -> Result<f64> {
    let mut front = Vec::new();
    for (u, v) in obs.sites.iter().zip(&obs.values) {
        let exact;
        let v = if noiseless {
            exact = problem.evaluate(&problem.from_unit(u))?;
            &exact
        } else {
            v
        };
        if is_feasible(&problem.constraints, &v.constraints, eq_tolerance) {
            front.push(v.objectives.clone());
        }
    }
    let keep = nondominated_filter(&front);
    let front: Vec<&Vec<f64>> = keep.iter().map(|&i| &front[i]).collect();
    hypervolume(&front, &problem.reference_point)
}

/// Standardizes every objective and constraint column and fits one GP each.
/// `warm` holds the previous hyperparameters, used as the first restart.
pub fn fit_surrogates<R: Rng + ?Sized>(
    problem: &Problem,
    obs: &Observations,
    config: &ExperimentConfig,
    warm: &[Option<KernelSpec>],
    rng: &mut R,
) -> Result<(Vec<FunctionModel>, Vec<ConstraintModel>)> {
    let k = problem.num_objectives;
    let total = k + problem.num_constraints();
    let mut models = Vec::with_capacity(total);
    for f in 0..total {
        let column: Vec<f64> = obs
            .values
            .iter()
            .map(|v| if f < k { v.objectives[f] } else { v.constraints[f - k] })
            .collect();
        let n = column.len() as f64;
        let mean = column.iter().sum::<f64>() / n;
        let sd = (column.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n).sqrt();
        let scale = if sd > 1e-9 * mean.abs().max(1.0) { sd } else { 1.0 };
        let standardized = column.iter().map(|y| (y - mean) / scale).collect();
        let noise = (config.noise_variance / (scale * scale)).max(MIN_MODEL_NOISE);
        let data = Dataset::new(obs.sites.clone(), standardized, noise)?;
        let spec0 = match warm.get(f) {
            Some(Some(spec)) => spec.clone(),
            _ => KernelSpec::isotropic(config.kernel, problem.dim, 0.5, 1.0)?,
        };
        let model = fit(&data, &spec0, &config.fit, rng)?;
        models.push(FunctionModel::new(model, mean, scale)?);
    }
    let constraints = models
        .split_off(k)
        .into_iter()
        .zip(&problem.constraints)
        .map(|(function, kind)| ConstraintModel { function, kind: *kind })
        .collect();
    Ok((models, constraints))
}

/// Per-iteration mean and sample standard deviation of the hypervolume.
pub fn summarize(traces: &[RunTrace]) -> Result<Vec<SummaryRow>> {
    let first = traces.first().ok_or_else(|| Error::Trace("no traces to summarize".into()))?;
    for t in traces {
        if t.records.len() != first.records.len() {
            return Err(Error::Trace(format!(
                "replicate {} has {} records, replicate {} has {}",
                t.replicate,
                t.records.len(),
                first.replicate,
                first.records.len()
            )));
        }
    }
    let n = traces.len() as f64;
    (0..first.records.len())
        .map(|i| {
            let r = &first.records[i];
            if traces.iter().any(|t| t.records[i].evals != r.evals) {
                return Err(Error::Trace(format!("evaluation counts differ at iteration {}", r.iter)));
            }
            let mean = traces.iter().map(|t| t.records[i].hypervolume).sum::<f64>() / n;
            let std = if traces.len() > 1 {
                (traces.iter().map(|t| (t.records[i].hypervolume - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(SummaryRow { iter: r.iter, evals: r.evals, hv_mean: mean, hv_std: std })
        })
        .collect()
}

fn format_points(points: &[Vec<f64>]) -> String {
    points
        .iter()
        .map(|p| p.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join(";")
}

/// Parses the `points` column of a trace CSV.
pub fn parse_points(field: &str) -> Result<Vec<Vec<f64>>> {
    if field.is_empty() {
        return Ok(vec![]);
    }
    field
        .split(';')
        .map(|p| {
            p.split(',')
                .map(|v| v.parse::<f64>().map_err(|_| Error::Trace(format!("bad coordinate {v:?}"))))
                .collect()
        })
        .collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn trace_csv(trace: &RunTrace) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER)?;
    for r in &trace.records {
        w.write_record([
            r.iter.to_string(),
            r.evals.to_string(),
            r.hypervolume.to_string(),
            r.cum_seconds.to_string(),
            format_points(&r.points),
        ])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Trace(e.to_string()))?)
        .map_err(|e| Error::Trace(e.to_string()))
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([r.iter.to_string(), r.evals.to_string(), r.hv_mean.to_string(), r.hv_std.to_string()])?;
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Trace(e.to_string()))?)
        .map_err(|e| Error::Trace(e.to_string()))
}

/// Reads a trace CSV back. The `fallback` flags are not stored in the CSV.
pub fn read_trace_csv(path: &Path, replicate: usize) -> Result<RunTrace> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(TRACE_HEADER) {
        return Err(Error::Trace(format!("{} does not have a trace header", path.display())));
    }
    let mut records = Vec::new();
    for row in r.records() {
        let row = row?;
        let num = |i: usize| row[i].parse::<f64>().map_err(|_| Error::Trace(format!("bad number {:?}", &row[i])));
        records.push(IterationRecord {
            iter: num(0)? as usize,
            evals: num(1)? as usize,
            hypervolume: num(2)?,
            cum_seconds: num(3)?,
            points: parse_points(&row[4])?,
            fallback: false,
        });
    }
    Ok(RunTrace { replicate, records })
}

pub fn trace_path(dir: &Path, replicate: usize) -> PathBuf {
    dir.join(format!("trace_rep{replicate}.csv"))
}

fn state_path(dir: &Path, replicate: usize) -> PathBuf {
    dir.join(format!("state_rep{replicate}.json"))
}

/// Everything needed to continue a replicate exactly where it stopped.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ReplicateState {
    records: Vec<IterationRecord>,
    observations: Observations,
    noise_word_pos: u128,
    acquisition_word_pos: u128,
    kernels: Vec<Option<KernelSpec>>,
    sobol_shift: Vec<u32>,
    sobol_index: u64,
}

/// Observations of a replicate persisted under `dir`, in evaluation order.
pub fn load_observations(dir: &Path, replicate: usize) -> Result<Observations> {
    let state: ReplicateState = serde_json::from_slice(&fs::read(state_path(dir, replicate))?)?;
    Ok(state.observations)
}

const DESIGN_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const ACQUISITION_STREAM: u64 = 2;

fn stream(seed: u64, stream: u64, word_pos: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    rng
}

struct Replicate<'a> {
    config: &'a ExperimentConfig,
    problem: &'a Problem,
    index: usize,
    oracle: NoisyOracle,
    acq_rng: ChaCha8Rng,
    state: ReplicateState,
}

impl<'a> Replicate<'a> {
    fn start(config: &'a ExperimentConfig, problem: &'a Problem, index: usize) -> Result<Self> {
        let seed = config.replicate_seed(index);
        let clock = Instant::now();
        let mut design = stream(seed, DESIGN_STREAM, 0);
        let mut oracle = NoisyOracle::new(problem.clone(), config.noise_variance, stream(seed, NOISE_STREAM, 0))?;
        let observations = seed_design(&mut oracle, config.n_seed, &mut design)?;
        let sobol_shift = (0..problem.dim).map(|_| design.random()).collect();
        let hv = observed_hypervolume(problem, &observations, config.eq_tolerance, config.noiseless_hv)?;
        let record = IterationRecord {
            iter: 0,
            evals: observations.len(),
            hypervolume: hv,
            cum_seconds: clock.elapsed().as_secs_f64(),
            points: observations.sites.iter().map(|u| problem.from_unit(u)).collect(),
            fallback: false,
        };
        let state = ReplicateState {
            records: vec![record],
            observations,
            noise_word_pos: oracle.rng().get_word_pos(),
            acquisition_word_pos: 0,
            kernels: vec![None; problem.num_objectives + problem.num_constraints()],
            sobol_shift,
            sobol_index: 0,
        };
        Ok(Self { config, problem, index, oracle, acq_rng: stream(seed, ACQUISITION_STREAM, 0), state })
    }

    fn resume(config: &'a ExperimentConfig, problem: &'a Problem, index: usize, state: ReplicateState) -> Result<Self> {
        let seed = config.replicate_seed(index);
        let oracle =
            NoisyOracle::new(problem.clone(), config.noise_variance, stream(seed, NOISE_STREAM, state.noise_word_pos))?;
        let acq_rng = stream(seed, ACQUISITION_STREAM, state.acquisition_word_pos);
        Ok(Self { config, problem, index, oracle, acq_rng, state })
    }

    fn evals(&self) -> usize {
        self.state.observations.len()
    }

    fn done(&self) -> bool {
        self.evals() >= self.config.budget
    }

    fn propose(&mut self, count: usize) -> Result<Vec<Vec<f64>>> {
        match self.config.policy {
            Policy::Sobol => {
                let pts = sobol_batch_shifted(self.problem.dim, self.state.sobol_index, count, &self.state.sobol_shift)?;
                self.state.sobol_index += count as u64;
                Ok(pts)
            }
            Policy::Qpots => {
                let (objectives, constraints) = fit_surrogates(
                    self.problem,
                    &self.state.observations,
                    self.config,
                    &self.state.kernels,
                    &mut self.acq_rng,
                )?;
                self.state.kernels = objectives
                    .iter()
                    .chain(constraints.iter().map(|c| &c.function))
                    .map(|f| Some(f.model.kernel().clone()))
                    .collect();
                let round = AcquisitionRound {
                    objectives,
                    constraints,
                    q: count,
                    eq_tolerance: self.config.eq_tolerance,
                    evolver: self.config.evolver.clone(),
                    nystrom: self.config.nystrom.clone(),
                    observed_sites: self.state.observations.sites.clone(),
                };
                Ok(acquire(&round, &mut self.acq_rng, self.config.max_retries)?.points)
            }
        }
    }

    fn step(&mut self) -> Result<()> {
        let clock = Instant::now();
        let count = self.config.q.min(self.config.budget - self.evals());
        let (sites, fallback) = match self.propose(count) {
            Ok(points) => (points, false),
            Err(e @ (Error::AcquisitionFailed { .. } | Error::Numerical { .. })) => {
                tracing::warn!(replicate = self.index, evals = self.evals(), error = %e, "falling back to a uniform point");
                (seed_sites(self.problem.dim, 1, &mut self.acq_rng), true)
            }
            Err(e) => return Err(e),
        };
        let mut points = Vec::with_capacity(sites.len());
        for u in sites {
            let x = self.problem.from_unit(&u);
            let v = self.oracle.observe(&x)?;
            self.state.observations.push(u, v);
            points.push(x);
        }
        let hv = observed_hypervolume(self.problem, &self.state.observations, self.config.eq_tolerance, self.config.noiseless_hv)?;
        let last = self.state.records.last().expect("seed record");
        let record = IterationRecord {
            iter: last.iter + 1,
            evals: self.evals(),
            hypervolume: hv,
            cum_seconds: last.cum_seconds + clock.elapsed().as_secs_f64(),
            points,
            fallback,
        };
        self.state.records.push(record);
        self.state.noise_word_pos = self.oracle.rng().get_word_pos();
        self.state.acquisition_word_pos = self.acq_rng.get_word_pos();
        Ok(())
    }

    fn trace(&self) -> RunTrace {
        RunTrace { replicate: self.index, records: self.state.records.clone() }
    }

    fn persist(&self, dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = dir {
            write_atomic(&state_path(dir, self.index), &serde_json::to_vec(&self.state)?)?;
            write_atomic(&trace_path(dir, self.index), trace_csv(&self.trace())?.as_bytes())?;
        }
        Ok(())
    }
}

fn run_replicate(
    config: &ExperimentConfig,
    problem: &Problem,
    index: usize,
    options: &RunOptions,
) -> Result<RunTrace> {
    let dir = config.output_dir.as_deref();
    let saved = dir.map(|d| state_path(d, index)).filter(|p| p.exists());
    let mut rep = match saved {
        Some(path) => {
            let state: ReplicateState = serde_json::from_slice(&fs::read(path)?)?;
            Replicate::resume(config, problem, index, state)?
        }
        None => {
            let rep = Replicate::start(config, problem, index)?;
            rep.persist(dir)?;
            if let Some(progress) = &options.progress {
                progress(index, &rep.state.records[0]);
            }
            rep
        }
    };
    let mut performed = 0;
    while !rep.done() {
        if options.stop.as_ref().is_some_and(|s| s.load(Ordering::Relaxed))
            || options.max_new_iterations.is_some_and(|m| performed >= m)
        {
            break;
        }
        rep.step()?;
        performed += 1;
        rep.persist(dir)?;
        if let Some(progress) = &options.progress {
            progress(index, rep.state.records.last().expect("record"));
        }
    }
    Ok(rep.trace())
}

/// Runs (or resumes) every replicate of an experiment. With an output
/// directory, traces are persisted after every iteration and a later call
/// with the same config continues from the last completed iteration.
pub fn run(config: &ExperimentConfig, options: &RunOptions) -> Result<RunReport> {
    let problem = config.validate()?;
    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        let json = serde_json::to_string_pretty(config)?;
        if path.exists() {
            let existing: serde_json::Value = serde_json::from_slice(&fs::read(&path)?)?;
            if existing != serde_json::to_value(config)? {
                return Err(Error::invalid(format!("{} holds a different experiment", dir.display())));
            }
        } else {
            write_atomic(&path, json.as_bytes())?;
        }
    }
    let workers = options
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .clamp(1, config.replicates);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunTrace>>>> = Mutex::new((0..config.replicates).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= config.replicates {
                    break;
                }
                let result = run_replicate(config, &problem, i, options);
                results.lock().expect("results lock")[i] = Some(result);
            });
        }
    });
    let traces = results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("every replicate ran"))
        .collect::<Result<Vec<_>>>()?;
    let complete = traces.iter().all(|t| t.evals() >= config.budget);
    let summary = if complete {
        match summarize(&traces) {
            Ok(rows) => Some(rows),
            Err(e) => {
                tracing::warn!(error = %e, "traces do not align, no summary written");
                None
            }
        }
    } else {
        None
    };
    if let (Some(dir), Some(rows)) = (&config.output_dir, &summary) {
        write_atomic(&dir.join("summary.csv"), summary_csv(rows)?.as_bytes())?;
    }
    Ok(RunReport { traces, summary, complete })
}

/// IGD after scaling every objective by the extent of `reference_front`.
pub fn normalized_igd<P: AsRef<[f64]>, Q: AsRef<[f64]>>(front: &[P], reference_front: &[Q]) -> Result<f64> {
    let first = reference_front.first().ok_or_else(|| Error::invalid("empty reference front"))?;
    let k = first.as_ref().len();
    let mut lo = vec![f64::INFINITY; k];
    let mut hi = vec![f64::NEG_INFINITY; k];
    for p in reference_front {
        Error::check_dim(k, p.as_ref().len())?;
        for (j, v) in p.as_ref().iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    let span: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| if h > l { h - l } else { 1.0 }).collect();
    let scale = |p: &[f64]| -> Vec<f64> { p.iter().zip(&lo).zip(&span).map(|((v, l), s)| (v - l) / s).collect() };
    let a: Vec<Vec<f64>> = front.iter().map(|p| scale(p.as_ref())).collect();
    let b: Vec<Vec<f64>> = reference_front.iter().map(|p| scale(p.as_ref())).collect();
    igd(&a, &b)
}

/// NSGA-II on the noiseless problem, reported as a maximization front.
pub fn solve_true_problem(problem: &Problem, config: &EvolverConfig, eq_tolerance: f64) -> Result<Vec<Vec<f64>>> {
    let kinds = problem.constraints.clone();
    let evaluate = |u: &[f64]| {
        let v = problem.evaluate(&problem.from_unit(u)).expect("unit genomes stay in bounds");
        let objectives = v.objectives.iter().map(|y| -y).collect();
        let (mut ineq, mut eq) = (Vec::new(), Vec::new());
        for (k, c) in kinds.iter().zip(&v.constraints) {
            match k {
                ConstraintKind::Inequality => ineq.push(*c),
                ConstraintKind::Equality => eq.push(*c),
            }
        }
        Evaluation::with_constraints(objectives, &ineq, &eq, eq_tolerance)
    };
    let front = if problem.constraints.is_empty() {
        minimize(problem.dim, &mut FnEvaluator::new(evaluate), config)?
    } else {
        minimize(problem.dim, &mut FnEvaluator::constrained(evaluate), config)?
    };
    Ok(front.points.into_iter().map(|p| p.into_iter().map(|v| -v).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub pop_size: usize,
    pub n_generations: usize,
    pub seed: u64,
    /// Normalized IGD to the analytic front; infinite when no feasible point was found.
    pub igd: f64,
}

/// Solver validation: IGD of NSGA-II on the true problem for each
/// `(pop_size, n_generations)` setting and seed.
pub fn nsga2_sweep(problem: &Problem, settings: &[(usize, usize)], seeds: &[u64], front_samples: usize) -> Result<Vec<SweepPoint>> {
    let reference = analytic_front_sample(problem, front_samples)?;
    let mut out = Vec::with_capacity(settings.len() * seeds.len());
    for &(pop_size, n_generations) in settings {
        for &seed in seeds {
            let config = EvolverConfig { pop_size, n_generations, seed, ..Default::default() };
            let front = solve_true_problem(problem, &config, DEFAULT_EQ_TOLERANCE)?;
            let igd = if front.is_empty() { f64::INFINITY } else { normalized_igd(&front, &reference)? };
            out.push(SweepPoint { pop_size, n_generations, seed, igd });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(problem: &str, policy: Policy) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(problem, policy).unwrap();
        c.n_seed = 6;
        c.budget = 12;
        c.q = 2;
        c.replicates = 2;
        c.evolver = EvolverConfig { pop_size: 24, n_generations: 8, ..Default::default() };
        c.fit = FitOptions { restarts: 1, max_iterations: 30, ..Default::default() };
        c
    }

    #[test]
    fn config_validation() {
        let mut c = small("branin_currin", Policy::Sobol);
        assert!(c.validate().is_ok());
        c.budget = 11;
        assert!(c.validate().is_err());
        c.budget = 12;
        c.n_seed = 1;
        assert!(c.validate().is_err());
        c.n_seed = 6;
        c.problem = "nope".into();
        assert!(c.validate().is_err());
        assert_eq!("sobol".parse::<Policy>().unwrap(), Policy::Sobol);
        assert!("random".parse::<Policy>().is_err());
        let d = ExperimentConfig::new("zdt3", Policy::Qpots).unwrap();
        assert_eq!((d.n_seed, d.evolver.pop_size, d.replicates), (60, 600, 10));
        assert_eq!(d.noise_variance, 1e-3);
    }

    #[test]
    fn config_json_is_snake_case() {
        let c = small("branin_currin", Policy::Qpots);
        let v = serde_json::to_value(&c).unwrap();
        for key in ["problem", "policy", "q", "n_seed", "budget", "noise_variance", "nystrom", "evolver", "replicates", "master_seed", "output_dir"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["policy"], "qpots");
        let back: ExperimentConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn paired_seed_designs() {
        let a = small("branin_currin", Policy::Qpots);
        let b = small("branin_currin", Policy::Sobol);
        let p = a.validate().unwrap();
        let ra = Replicate::start(&a, &p, 1).unwrap();
        let rb = Replicate::start(&b, &p, 1).unwrap();
        assert_eq!(ra.state.observations, rb.state.observations);
        let rc = Replicate::start(&a, &p, 2).unwrap();
        assert_ne!(ra.state.observations, rc.state.observations);
        for u in &ra.state.observations.sites {
            assert!(u.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn seed_sites_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = seed_sites(3, 10_000, &mut rng);
        for j in 0..3 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            assert!((mean - 0.5).abs() < 0.02);
        }
        let p = Problem::by_name("branin_currin").unwrap();
        let mut oracle = NoisyOracle::new(p, 0.0, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(seed_design(&mut oracle, 1, &mut rng).is_err());
    }

    #[test]
    fn budget_equal_to_seed_gives_one_record() {
        let mut c = small("branin_currin", Policy::Qpots);
        c.budget = c.n_seed;
        let report = run(&c, &RunOptions::default()).unwrap();
        for t in &report.traces {
            assert_eq!(t.records.len(), 1);
            assert_eq!(t.records[0].evals, 6);
        }
        assert!(report.complete);
    }

    #[test]
    fn sobol_accounting_and_points() {
        let c = small("zdt3:3", Policy::Sobol);
        let report = run(&c, &RunOptions::default()).unwrap();
        for t in &report.traces {
            assert_eq!(t.evals(), c.budget);
            assert_eq!(t.records.len(), 1 + (c.budget - c.n_seed) / c.q);
            for r in &t.records[1..] {
                assert_eq!(r.points.len(), c.q);
            }
        }
        let p = Problem::by_name("branin_currin").unwrap();
        assert_eq!(sobol_points(&p, 0, 1, &[0, 0]).unwrap()[0], vec![-5.0, 0.0]);
    }

    #[test]
    fn qpots_runs_to_budget_with_noiseless_monotone_hv() {
        let mut c = small("branin_currin", Policy::Qpots);
        c.noise_variance = 0.0;
        let report = run(&c, &RunOptions::default()).unwrap();
        assert!(report.complete);
        for t in &report.traces {
            assert_eq!(t.evals(), c.budget);
            for w in t.records.windows(2) {
                assert!(w[1].hypervolume >= w[0].hypervolume);
                assert!(w[1].cum_seconds >= w[0].cum_seconds);
            }
        }
        assert_eq!(report.summary.unwrap().len(), report.traces[0].records.len());
    }

    #[test]
    fn summary_statistics() {
        let rec = |hv: f64| IterationRecord { iter: 0, evals: 5, hypervolume: hv, cum_seconds: 0.0, points: vec![], fallback: false };
        let a = RunTrace { replicate: 0, records: vec![rec(1.0)] };
        let b = RunTrace { replicate: 1, records: vec![rec(3.0)] };
        let s = summarize(&[a.clone(), b]).unwrap();
        assert_eq!(s[0].hv_mean, 2.0);
        assert!((s[0].hv_std - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[a.clone()]).unwrap()[0].hv_std, 0.0);
        let longer = RunTrace { replicate: 2, records: vec![rec(1.0), rec(2.0)] };
        assert!(matches!(summarize(&[a, longer]), Err(Error::Trace(_))));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn files_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small("constrained_branin_currin", Policy::Qpots);
        c.output_dir = Some(dir.path().join("full"));
        let full = run(&c, &RunOptions::default()).unwrap();

        c.output_dir = Some(dir.path().join("staged"));
        let partial = run(&c, &RunOptions { max_new_iterations: Some(1), ..Default::default() }).unwrap();
        assert!(!partial.complete);
        assert!(!dir.path().join("staged/summary.csv").exists());
        let resumed = run(&c, &RunOptions::default()).unwrap();
        assert!(resumed.complete);
        for (a, b) in full.traces.iter().zip(&resumed.traces) {
            assert_eq!(a.records.len(), b.records.len());
            for (x, y) in a.records.iter().zip(&b.records) {
                assert_eq!((x.iter, x.evals, x.hypervolume, &x.points), (y.iter, y.evals, y.hypervolume, &y.points));
            }
        }
        let csv = fs::read_to_string(dir.path().join("full/trace_rep0.csv")).unwrap();
        assert!(csv.starts_with("iter,evals,hypervolume,cum_seconds,points\n"));
        let back = read_trace_csv(&dir.path().join("full/trace_rep1.csv"), 1).unwrap();
        assert_eq!(back.records.len(), full.traces[1].records.len());
        assert_eq!(back.records[2].points, full.traces[1].records[2].points);
        let summary = fs::read_to_string(dir.path().join("full/summary.csv")).unwrap();
        assert!(summary.starts_with("iter,evals,hv_mean,hv_std\n"));
        assert!(dir.path().join("full/config.json").exists());
        let obs = load_observations(&dir.path().join("full"), 0).unwrap();
        assert_eq!(obs.len(), c.budget);

        let mut other = c.clone();
        other.q = 3;
        other.budget = 12;
        assert!(run(&other, &RunOptions::default()).is_err());
    }

    #[test]
    fn stop_flag_halts_between_iterations() {
        let c = small("branin_currin", Policy::Sobol);
        let stop = Arc::new(AtomicBool::new(true));
        let report = run(&c, &RunOptions { stop: Some(stop), ..Default::default() }).unwrap();
        assert!(!report.complete);
        assert!(report.traces.iter().all(|t| t.records.len() == 1));
    }

    #[test]
    fn hypervolume_uses_feasible_points_only() {
        let p = Problem::by_name("constrained_branin_currin").unwrap();
        let mut obs = Observations::default();
        obs.push(vec![0.5, 0.5], Values { objectives: vec![-10.0, -5.0], constraints: vec![-1.0] });
        assert_eq!(observed_hypervolume(&p, &obs, 0.01, false).unwrap(), 0.0);
        obs.push(vec![0.4, 0.5], Values { objectives: vec![-10.0, -5.0], constraints: vec![1.0] });
        let expected = (308.2 - 10.0) * (13.9 - 5.0);
        assert!((observed_hypervolume(&p, &obs, 0.01, false).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn points_round_trip() {
        let pts = vec![vec![0.25, -1.5], vec![3.0, 1e-17]];
        assert_eq!(parse_points(&format_points(&pts)).unwrap(), pts);
        assert!(parse_points("").unwrap().is_empty());
        assert!(parse_points("1,x").is_err());
    }

    #[test]
    fn normalized_igd_scales_objectives() {
        let reference = vec![vec![0.0, 100.0], vec![1.0, 0.0]];
        let front = vec![vec![0.0, 90.0], vec![1.0, 0.0]];
        assert!((normalized_igd(&front, &reference).unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sweep_reports_finite_igd() {
        let p = Problem::by_name("linear_tradeoff").unwrap();
        let rows = nsga2_sweep(&p, &[(20, 10)], &[0, 1], 200).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.igd.is_finite() && r.igd < 0.1));
        assert!(nsga2_sweep(&Problem::by_name("osy").unwrap(), &[(20, 10)], &[0], 10).is_err());
    }
}
