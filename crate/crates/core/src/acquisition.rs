//! The qPOTS acquisition: Pareto sets of posterior sample paths and
//! greedy maximin batch selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{same_site, GpModel, Landmarks, PathSampler};
use crate::nsga2::{minimize, BatchEvaluator, Evaluation, EvolverConfig};
use crate::pareto::{nondominated_filter, squared_distance, ParetoFront};
use crate::problems::ConstraintKind;

/// Default number of path redraws after an empty or short first draw.
pub const DEFAULT_MAX_RETRIES: usize = 5;

/// Default equality band, in standardized output units.
pub const DEFAULT_EQ_TOLERANCE: f64 = 1e-2;

/// A GP fitted to standardized observations `(y - offset) / scale`.
#[derive(Debug, Clone)]
pub struct FunctionModel {
    pub model: GpModel,
    pub offset: f64,
    pub scale: f64,
}

impl FunctionModel {
    pub fn new(model: GpModel, offset: f64, scale: f64) -> Result<Self> {
        if !(offset.is_finite() && scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid("standardization needs a finite offset and positive scale"));
        }
        Ok(Self { model, offset, scale })
    }

    /// A model of data that was not standardized.
    pub fn unscaled(model: GpModel) -> Self {
        Self { model, offset: 0.0, scale: 1.0 }
    }

    pub fn to_natural(&self, y: f64) -> f64 {
        self.offset + self.scale * y
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintModel {
    pub function: FunctionModel,
    pub kind: ConstraintKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandmarkRule {
    NondominatedTrainingPoints,
    FirstM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NystromConfig {
    pub enabled: bool,
    pub landmark_rule: LandmarkRule,
    pub max_landmarks: usize,
}

impl Default for NystromConfig {
    fn default() -> Self {
        Self { enabled: false, landmark_rule: LandmarkRule::NondominatedTrainingPoints, max_landmarks: 50 }
    }
}

impl NystromConfig {
    pub fn pareto(max_landmarks: usize) -> Self {
        Self { enabled: true, landmark_rule: LandmarkRule::NondominatedTrainingPoints, max_landmarks }
    }

    pub fn first(m: usize) -> Self {
        Self { enabled: true, landmark_rule: LandmarkRule::FirstM, max_landmarks: m }
    }
}

/// Everything one acquisition needs. All models share the training sites
/// `observed_sites`, in the normalized unit box.
#[derive(Debug, Clone)]
pub struct AcquisitionRound {
    pub objectives: Vec<FunctionModel>,
    pub constraints: Vec<ConstraintModel>,
    pub q: usize,
    pub eq_tolerance: f64,
    pub evolver: EvolverConfig,
    pub nystrom: NystromConfig,
    pub observed_sites: Vec<Vec<f64>>,
}

impl AcquisitionRound {
    pub fn validate(&self) -> Result<()> {
        if self.objectives.is_empty() {
            return Err(Error::invalid("at least one objective model is required"));
        }
        if self.q == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.eq_tolerance.is_finite() && self.eq_tolerance >= 0.0) {
            return Err(Error::invalid("equality tolerance must be nonnegative"));
        }
        if self.nystrom.enabled && self.nystrom.max_landmarks == 0 {
            return Err(Error::invalid("Nyström needs at least one landmark"));
        }
        let d = self.dim();
        for m in self.constraints.iter().map(|c| &c.function).chain(&self.objectives) {
            Error::check_dim(d, m.model.dim())?;
        }
        for s in &self.observed_sites {
            Error::check_dim(d, s.len())?;
        }
        self.evolver.validate()
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].model.dim()
    }

    fn models(&self) -> Vec<GpModel> {
        self.objectives
            .iter()
            .chain(self.constraints.iter().map(|c| &c.function))
            .map(|f| f.model.clone())
            .collect()
    }

    /// Training sites whose objective observations are mutually nondominated.
    fn nondominated_training_sites(&self) -> Vec<Vec<f64>> {
        let data = self.objectives[0].model.data();
        let n = data.len();
        let values: Vec<Vec<f64>> =
            (0..n).map(|i| self.objectives.iter().map(|f| f.model.data().values()[i]).collect()).collect();
        nondominated_filter(&values)
            .into_iter()
            .take(self.nystrom.max_landmarks)
            .map(|i| data.sites()[i].clone())
            .collect()
    }

    fn sampler(&self, rng: ChaCha8Rng) -> Result<PathSampler> {
        if !self.nystrom.enabled {
            return PathSampler::new(self.models(), rng);
        }
        let landmarks = match self.nystrom.landmark_rule {
            LandmarkRule::NondominatedTrainingPoints => Landmarks::Sites(self.nondominated_training_sites()),
            LandmarkRule::FirstM => Landmarks::FirstM(self.nystrom.max_landmarks),
        };
        PathSampler::with_nystrom(self.models(), landmarks, rng)
    }
}

/// `|value| <= tolerance`: the relaxed event `Y(x) = 0` for an equality constraint.
pub fn equality_indicator(sampled_value: f64, eq_tolerance: f64) -> bool {
    sampled_value.abs() <= eq_tolerance
}

/// Routes NSGA-II evaluations through one joint draw of every path.
struct PathEvaluator<'a> {
    round: &'a AcquisitionRound,
    sampler: PathSampler,
}

impl BatchEvaluator for PathEvaluator<'_> {
    fn evaluate(&mut self, genomes: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        let samples = self.sampler.sample_all(genomes)?;
        let k = self.round.objectives.len();
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        Ok((0..genomes.len())
            .map(|i| {
                let objectives = (0..k).map(|f| -samples[f][i]).collect();
                ineq.clear();
                eq.clear();
                for (c, cm) in self.round.constraints.iter().enumerate() {
                    let y = samples[k + c][i];
                    match cm.kind {
                        ConstraintKind::Inequality => ineq.push(cm.function.to_natural(y)),
                        // Standardized units: raw / scale.
                        ConstraintKind::Equality => eq.push(cm.function.to_natural(y) / cm.function.scale),
                    }
                }
                Evaluation::with_constraints(objectives, &ineq, &eq, self.round.eq_tolerance)
            })
            .collect())
    }

    fn retain(&mut self, survivors: &[Vec<f64>]) -> Result<()> {
        self.sampler.retain(survivors)
    }

    fn constrained(&self) -> bool {
        !self.round.constraints.is_empty()
    }
}

/// One draw of the sample paths together with their Pareto set.
pub struct PathDraw {
    /// Sampled objective values (natural units, maximization) and the Pareto set.
    pub front: ParetoFront,
    pub sampler: PathSampler,
}

/// Draws fresh sample paths and solves the multiobjective problem on them.
pub fn draw_pareto_set<R: Rng + ?Sized>(round: &AcquisitionRound, rng: &mut R) -> Result<PathDraw> {
    round.validate()?;
    let path_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let evolver = EvolverConfig { seed: rng.random(), ..round.evolver.clone() };
    let mut evaluator = PathEvaluator { round, sampler: round.sampler(path_rng)? };
    let mut front = minimize(round.dim(), &mut evaluator, &evolver)?;
    for p in &mut front.points {
        for (v, f) in p.iter_mut().zip(&round.objectives) {
            *v = f.to_natural(-*v);
        }
    }
    Ok(PathDraw { front, sampler: evaluator.sampler })
}

/// The Pareto front and set of one fresh draw of the sample paths.
pub fn sample_pareto_set<R: Rng + ?Sized>(round: &AcquisitionRound, rng: &mut R) -> Result<ParetoFront> {
    Ok(draw_pareto_set(round, rng)?.front)
}

/// Outcome of [`maximin_select`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Indices into the candidate list, in pick order.
    pub indices: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// Fewer than `q` points could be chosen.
    pub shortfall: bool,
}

/// Greedy sequential maximin: each pick maximizes the minimum Euclidean
/// distance to the observed sites and the earlier picks. Ties go to the
/// lowest candidate index. Candidates that coincide with an earlier pick
/// are never chosen.
pub fn maximin_select<P: AsRef<[f64]>, Q: AsRef<[f64]>>(candidates: &[P], observed: &[Q], q: usize) -> Selection {
    let mut min_d2: Vec<f64> = candidates
        .iter()
        .map(|c| observed.iter().map(|o| squared_distance(c.as_ref(), o.as_ref())).fold(f64::INFINITY, f64::min))
        .collect();
    let mut available: Vec<bool> = vec![true; candidates.len()];
    let mut indices = Vec::new();
    while indices.len() < q {
        let mut best: Option<usize> = None;
        for i in 0..candidates.len() {
            if available[i] && best.is_none_or(|b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        let Some(pick) = best else { break };
        indices.push(pick);
        available[pick] = false;
        let p = candidates[pick].as_ref();
        for i in 0..candidates.len() {
            if available[i] {
                let c = candidates[i].as_ref();
                if same_site(c, p) {
                    available[i] = false;
                }
                min_d2[i] = min_d2[i].min(squared_distance(c, p));
            }
        }
    }
    Selection {
        shortfall: indices.len() < q,
        points: indices.iter().map(|&i| candidates[i].as_ref().to_vec()).collect(),
        indices,
    }
}

/// A batch of points to evaluate next, in normalized coordinates.
#[derive(Debug, Clone)]
pub struct CandidateBatch {
    pub points: Vec<Vec<f64>>,
    /// Front of every path draw made, in draw order.
    pub fronts: Vec<ParetoFront>,
    /// Index into `fronts` of the draw each point came from.
    pub source: Vec<usize>,
}

impl CandidateBatch {
    pub fn attempts(&self) -> usize {
        self.fronts.len()
    }

    /// Front of the draw that supplied the first point.
    pub fn pathwise_front(&self) -> &ParetoFront {
        &self.fronts[self.source.first().copied().unwrap_or(0)]
    }
}

/// Draws paths and selects points until `q` are gathered or `1 + max_retries`
/// draws are spent. Points that repeat an observed site are discarded.
pub fn acquire<R: Rng + ?Sized>(round: &AcquisitionRound, rng: &mut R, max_retries: usize) -> Result<CandidateBatch> {
    round.validate()?;
    let mut batch = CandidateBatch { points: Vec::new(), fronts: Vec::new(), source: Vec::new() };
    let mut taken: Vec<Vec<f64>> = round.observed_sites.clone();
    for attempt in 0..=max_retries {
        let front = sample_pareto_set(round, rng)?;
        let fresh: Vec<&Vec<f64>> =
            front.preimages.iter().filter(|x| !taken.iter().any(|t| same_site(x, t))).collect();
        let selection = maximin_select(&fresh, &taken, round.q - batch.points.len());
        for p in selection.points {
            taken.push(p.clone());
            batch.points.push(p);
            batch.source.push(attempt);
        }
        batch.fronts.push(front);
        if batch.points.len() == round.q {
            break;
        }
        tracing::debug!(attempt, gathered = batch.points.len(), q = round.q, "short pathwise Pareto set, redrawing");
    }
    if batch.points.is_empty() {
        return Err(Error::AcquisitionFailed { attempts: batch.fronts.len() });
    }
    Ok(batch)
}
