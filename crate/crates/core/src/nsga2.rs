//! NSGA-II with feasibility-first constraint handling.
//!
//! The solver minimizes over the unit box `[0,1]^d`. Objective values flow
//! through a caller-supplied [`BatchEvaluator`] so that a whole population
//! can be evaluated in one joint call.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pareto::{sort_into_fronts, ParetoFront};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolverConfig {
    pub pop_size: usize,
    pub n_generations: usize,
    pub crossover_prob: f64,
    pub crossover_eta: f64,
    /// Per-variable mutation probability; `None` means `1/d`.
    pub mutation_prob: Option<f64>,
    pub mutation_eta: f64,
    pub seed: u64,
}

impl Default for EvolverConfig {
    fn default() -> Self {
        Self {
            pop_size: 100,
            n_generations: 100,
            crossover_prob: 0.9,
            crossover_eta: 15.0,
            mutation_prob: None,
            mutation_eta: 20.0,
            seed: 0,
        }
    }
}

impl EvolverConfig {
    /// Defaults with a population of `100 * dim`.
    pub fn for_dim(dim: usize) -> Self {
        Self { pop_size: 100 * dim.max(1), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || self.pop_size % 2 != 0 {
            return Err(Error::invalid("population size must be even and at least 2"));
        }
        if self.n_generations == 0 {
            return Err(Error::invalid("at least one generation is required"));
        }
        let probs = [Some(self.crossover_prob), self.mutation_prob];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        if !(self.crossover_eta > 0.0 && self.mutation_eta > 0.0) {
            return Err(Error::invalid("distribution indices must be positive"));
        }
        Ok(())
    }
}

/// Objectives (minimized) and aggregate constraint violation of one genome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    pub constraint_violation: f64,
}

impl Evaluation {
    pub fn unconstrained(objectives: Vec<f64>) -> Self {
        Self { objectives, constraint_violation: 0.0 }
    }

    /// Violation is `Σ max(0, -g_i) + Σ max(0, |h_j| - eq_tol)` for `g_i >= 0` and `h_j = 0`.
    pub fn with_constraints(objectives: Vec<f64>, inequalities: &[f64], equalities: &[f64], eq_tol: f64) -> Self {
        let v: f64 = inequalities.iter().map(|g| (-g).max(0.0)).sum::<f64>()
            + equalities.iter().map(|h| (h.abs() - eq_tol).max(0.0)).sum::<f64>();
        Self { objectives, constraint_violation: v }
    }

    pub fn is_feasible(&self) -> bool {
        self.constraint_violation <= 0.0
    }
}

/// Batch objective hook used by the solver.
pub trait BatchEvaluator {
    fn evaluate(&mut self, genomes: &[Vec<f64>]) -> Result<Vec<Evaluation>>;

    /// Called with the surviving population after every environmental selection.
    fn retain(&mut self, _survivors: &[Vec<f64>]) -> Result<()> {
        Ok(())
    }

    /// Whether any constraints are present.
    fn constrained(&self) -> bool {
        false
    }
}

/// Pointwise evaluator built from a closure.
pub struct FnEvaluator<F> {
    f: F,
    constrained: bool,
}

impl<F: FnMut(&[f64]) -> Evaluation> FnEvaluator<F> {
    pub fn new(f: F) -> Self {
        Self { f, constrained: false }
    }

    pub fn constrained(f: F) -> Self {
        Self { f, constrained: true }
    }
}

impl<F: FnMut(&[f64]) -> Evaluation> BatchEvaluator for FnEvaluator<F> {
    fn evaluate(&mut self, genomes: &[Vec<f64>]) -> Result<Vec<Evaluation>> {
        Ok(genomes.iter().map(|g| (self.f)(g)).collect())
    }

    fn constrained(&self) -> bool {
        self.constrained
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Vec<f64>,
    pub objectives: Vec<f64>,
    pub constraint_violation: f64,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    fn new(genome: Vec<f64>, eval: Evaluation) -> Self {
        Self {
            genome,
            objectives: eval.objectives,
            constraint_violation: eval.constraint_violation,
            rank: 0,
            crowding: 0.0,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.constraint_violation <= 0.0
    }
}

/// Feasibility-first dominance for minimization.
pub fn constrained_dominates(a: &Individual, b: &Individual) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.constraint_violation < b.constraint_violation,
        (true, true) => {
            let mut strict = false;
            for (x, y) in a.objectives.iter().zip(&b.objectives) {
                if x > y {
                    return false;
                }
                strict |= x < y;
            }
            strict
        }
    }
}

/// Sets the crowding distance of every member of `front`.
pub fn crowding_distance(front: &mut [Individual]) {
    let n = front.len();
    for ind in front.iter_mut() {
        ind.crowding = 0.0;
    }
    if n == 0 {
        return;
    }
    let k = front[0].objectives.len();
    let mut order: Vec<usize> = (0..n).collect();
    for m in 0..k {
        order.sort_by(|&i, &j| front[i].objectives[m].total_cmp(&front[j].objectives[m]).then(i.cmp(&j)));
        let lo = front[order[0]].objectives[m];
        let hi = front[order[n - 1]].objectives[m];
        front[order[0]].crowding = f64::INFINITY;
        front[order[n - 1]].crowding = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let gap = front[order[w + 1]].objectives[m] - front[order[w - 1]].objectives[m];
            front[order[w]].crowding += gap / range;
        }
    }
}

/// Indices of `keep` members of a front, removing the most crowded member
/// one at a time and updating its neighbours' distances after each removal.
fn prune_by_crowding(front: &[&[f64]], keep: usize) -> Vec<usize> {
    let n = front.len();
    if keep >= n {
        return (0..n).collect();
    }
    let k = front[0].len();
    let mut prev = vec![vec![usize::MAX; n]; k];
    let mut next = vec![vec![usize::MAX; n]; k];
    let mut range = vec![0.0; k];
    let mut boundary = vec![false; n];
    for m in 0..k {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| front[i][m].total_cmp(&front[j][m]).then(i.cmp(&j)));
        for w in 0..n {
            if w > 0 {
                prev[m][order[w]] = order[w - 1];
            }
            if w + 1 < n {
                next[m][order[w]] = order[w + 1];
            }
        }
        boundary[order[0]] = true;
        boundary[order[n - 1]] = true;
        range[m] = front[order[n - 1]][m] - front[order[0]][m];
    }
    let distance = |i: usize, prev: &[Vec<usize>], next: &[Vec<usize>]| -> f64 {
        if boundary[i] {
            return f64::INFINITY;
        }
        (0..k)
            .filter(|&m| range[m] > 0.0)
            .map(|m| (front[next[m][i]][m] - front[prev[m][i]][m]) / range[m])
            .sum()
    };
    let mut crowd: Vec<f64> = (0..n).map(|i| distance(i, &prev, &next)).collect();
    let mut alive = vec![true; n];
    for _ in keep..n {
        let mut victim = usize::MAX;
        for i in (0..n).rev() {
            if alive[i] && (victim == usize::MAX || crowd[i] <= crowd[victim]) {
                victim = i;
            }
        }
        alive[victim] = false;
        let mut touched = Vec::with_capacity(2 * k);
        for m in 0..k {
            let (p, q) = (prev[m][victim], next[m][victim]);
            if p != usize::MAX {
                next[m][p] = q;
                touched.push(p);
            }
            if q != usize::MAX {
                prev[m][q] = p;
                touched.push(q);
            }
        }
        for t in touched {
            crowd[t] = distance(t, &prev, &next);
        }
    }
    (0..n).filter(|&i| alive[i]).collect()
}

/// Ranks `pop` into fronts and computes crowding. Returns the fronts.
fn rank_population(pop: &mut [Individual]) -> Vec<Vec<usize>> {
    let fronts = sort_into_fronts(pop.len(), |i, j| constrained_dominates(&pop[i], &pop[j]));
    for (r, front) in fronts.iter().enumerate() {
        let mut members: Vec<Individual> = front.iter().map(|&i| pop[i].clone()).collect();
        crowding_distance(&mut members);
        for (&i, m) in front.iter().zip(members) {
            pop[i].crowding = m.crowding;
            pop[i].rank = r;
        }
    }
    fronts
}

/// Runs the solver and returns the final population.
pub fn evolve<E: BatchEvaluator + ?Sized>(
    dim: usize,
    evaluator: &mut E,
    config: &EvolverConfig,
    mut on_generation: impl FnMut(usize, &[Individual]),
) -> Result<Vec<Individual>> {
    config.validate()?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.pop_size;
    let genomes: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    let mut pop = evaluate(evaluator, genomes)?;
    rank_population(&mut pop);
    on_generation(0, &pop);
    let mutation_prob = config.mutation_prob.unwrap_or(1.0 / dim as f64);
    for gen in 1..=config.n_generations {
        let mut children = Vec::with_capacity(n);
        let mut seen: HashSet<Vec<u64>> = pop.iter().map(|i| genome_key(&i.genome)).collect();
        let mut attempts = 0;
        while children.len() < n {
            attempts += 1;
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let (mut c1, mut c2) = (pop[a].genome.clone(), pop[b].genome.clone());
            if rng.random::<f64>() < config.crossover_prob {
                sbx(&mut c1, &mut c2, config.crossover_eta, &mut rng);
            }
            for c in [&mut c1, &mut c2] {
                polynomial_mutation(c, mutation_prob, config.mutation_eta, &mut rng);
                // Duplicates are rejected unless the search space seems exhausted.
                if children.len() < n && (seen.insert(genome_key(c)) || attempts > 100 * n) {
                    children.push(c.clone());
                }
            }
        }
        let offspring = evaluate(evaluator, children)?;
        pop.extend(offspring);
        let fronts = rank_population(&mut pop);
        let mut next: Vec<Individual> = Vec::with_capacity(n);
        for front in fronts {
            if next.len() + front.len() <= n {
                next.extend(front.iter().map(|&i| pop[i].clone()));
            } else {
                let members: Vec<&[f64]> = front.iter().map(|&i| pop[i].objectives.as_slice()).collect();
                let kept = prune_by_crowding(&members, n - next.len());
                next.extend(kept.into_iter().map(|j| pop[front[j]].clone()));
            }
            if next.len() == n {
                break;
            }
        }
        pop = next;
        rank_population(&mut pop);
        let survivors: Vec<Vec<f64>> = pop.iter().map(|i| i.genome.clone()).collect();
        evaluator.retain(&survivors)?;
        on_generation(gen, &pop);
    }
    Ok(pop)
}

/// Runs the solver and returns the first front of the final population.
///
/// Points are objective values in minimization units; only feasible members
/// are kept, so a constrained run with no feasible individual returns an
/// empty front.
pub fn minimize<E: BatchEvaluator + ?Sized>(dim: usize, evaluator: &mut E, config: &EvolverConfig) -> Result<ParetoFront> {
    let pop = evolve(dim, evaluator, config, |_, _| {})?;
    Ok(first_front(&pop))
}

/// Feasible rank-0 members of a ranked population, without duplicate genomes.
pub fn first_front(pop: &[Individual]) -> ParetoFront {
    let mut seen = HashSet::new();
    let mut front = ParetoFront::default();
    for ind in pop.iter().filter(|i| i.rank == 0 && i.is_feasible()) {
        if seen.insert(genome_key(&ind.genome)) {
            front.points.push(ind.objectives.clone());
            front.preimages.push(ind.genome.clone());
        }
    }
    front
}

fn genome_key(g: &[f64]) -> Vec<u64> {
    g.iter().map(|v| v.to_bits()).collect()
}

fn evaluate<E: BatchEvaluator + ?Sized>(evaluator: &mut E, genomes: Vec<Vec<f64>>) -> Result<Vec<Individual>> {
    let evals = evaluator.evaluate(&genomes)?;
    Error::check_dim(genomes.len(), evals.len())?;
    if let Some(first) = evals.first() {
        let k = first.objectives.len();
        for e in &evals {
            Error::check_dim(k, e.objectives.len())?;
            if e.objectives.iter().any(|v| v.is_nan()) || e.constraint_violation.is_nan() {
                return Err(Error::invalid("evaluator returned NaN"));
            }
        }
    }
    Ok(genomes.into_iter().zip(evals).map(|(g, e)| Individual::new(g, e)).collect())
}

fn tournament<R: Rng>(pop: &[Individual], rng: &mut R) -> usize {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    let ord = pop[a].rank.cmp(&pop[b].rank).then_with(|| pop[b].crowding.total_cmp(&pop[a].crowding));
    match ord {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.random::<bool>() {
                a
            } else {
                b
            }
        }
    }
}

/// Simulated binary crossover on `[0,1]`, each variable crossed with probability 1/2.
fn sbx<R: Rng>(x1: &mut [f64], x2: &mut [f64], eta: f64, rng: &mut R) {
    for i in 0..x1.len() {
        if rng.random::<f64>() > 0.5 || (x1[i] - x2[i]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if x1[i] < x2[i] { (x1[i], x2[i]) } else { (x2[i], x1[i]) };
        let u = rng.random::<f64>();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(1.0 / (eta + 1.0))
            } else {
                (1.0 / (2.0 - u * alpha)).powf(1.0 / (eta + 1.0))
            }
        };
        let betaq = spread(1.0 + 2.0 * y1 / (y2 - y1));
        let c1 = 0.5 * ((y1 + y2) - betaq * (y2 - y1));
        let betaq = spread(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
        let c2 = 0.5 * ((y1 + y2) + betaq * (y2 - y1));
        let (c1, c2) = (c1.clamp(0.0, 1.0), c2.clamp(0.0, 1.0));
        if rng.random::<bool>() {
            x1[i] = c2;
            x2[i] = c1;
        } else {
            x1[i] = c1;
            x2[i] = c2;
        }
    }
}

/// Bounded polynomial mutation on `[0,1]`.
fn polynomial_mutation<R: Rng>(x: &mut [f64], prob: f64, eta: f64, rng: &mut R) {
    let power = 1.0 / (eta + 1.0);
    for v in x.iter_mut() {
        if rng.random::<f64>() >= prob {
            continue;
        }
        let y = *v;
        let r = rng.random::<f64>();
        let delta = if r < 0.5 {
            let xy = 1.0 - y;
            let val = 2.0 * r + (1.0 - 2.0 * r) * xy.powf(eta + 1.0);
            val.powf(power) - 1.0
        } else {
            let xy = y;
            let val = 2.0 * (1.0 - r) + 2.0 * (r - 0.5) * xy.powf(eta + 1.0);
            1.0 - val.powf(power)
        };
        *v = (y + delta).clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::{hypervolume, igd};

    fn ind(objectives: Vec<f64>, violation: f64) -> Individual {
        Individual { genome: vec![0.0], objectives, constraint_violation: violation, rank: 0, crowding: 0.0 }
    }

    #[test]
    fn constrained_dominance_rules() {
        assert!(constrained_dominates(&ind(vec![9.0, 9.0], 0.0), &ind(vec![0.0, 0.0], 0.5)));
        assert!(constrained_dominates(&ind(vec![9.0, 9.0], 0.2), &ind(vec![0.0, 0.0], 0.5)));
        assert!(!constrained_dominates(&ind(vec![0.0, 0.0], 0.5), &ind(vec![9.0, 9.0], 0.2)));
        assert!(constrained_dominates(&ind(vec![1.0, 3.0], 0.0), &ind(vec![2.0, 3.0], 0.0)));
        assert!(!constrained_dominates(&ind(vec![2.0, 3.0], 0.0), &ind(vec![2.0, 3.0], 0.0)));
    }

    #[test]
    fn crowding_examples() {
        let mut two = vec![ind(vec![0.0, 1.0], 0.0), ind(vec![1.0, 0.0], 0.0)];
        crowding_distance(&mut two);
        assert!(two.iter().all(|i| i.crowding.is_infinite()));

        let mut three = vec![ind(vec![0.0, 2.0], 0.0), ind(vec![1.0, 1.0], 0.0), ind(vec![2.0, 0.0], 0.0)];
        crowding_distance(&mut three);
        assert_eq!(three[1].crowding, 2.0);

        let mut flat = vec![ind(vec![1.0, 1.0], 0.0); 4];
        crowding_distance(&mut flat);
        let finite: Vec<f64> = flat.iter().map(|i| i.crowding).filter(|c| c.is_finite()).collect();
        assert_eq!(finite, vec![0.0, 0.0]);
    }

    #[test]
    fn violation_aggregate() {
        let e = Evaluation::with_constraints(vec![0.0], &[1.0, -0.5], &[0.3, -0.01], 0.05);
        assert!((e.constraint_violation - 0.75).abs() < 1e-12);
        assert!(!e.is_feasible());
    }

    #[test]
    fn linear_tradeoff_front() {
        let cfg = EvolverConfig { pop_size: 40, n_generations: 50, seed: 1, ..Default::default() };
        let mut ev = FnEvaluator::new(|x: &[f64]| Evaluation::unconstrained(vec![x[0], 1.0 - x[0]]));
        let front = minimize(1, &mut ev, &cfg).unwrap();
        let reference: Vec<Vec<f64>> = (0..=200).map(|i| vec![i as f64 / 200.0, 1.0 - i as f64 / 200.0]).collect();
        let d = igd(&front.points, &reference).unwrap();
        assert!(d < 0.01, "IGD {d}");
    }

    #[test]
    fn single_objective_collapses() {
        let cfg = EvolverConfig { pop_size: 40, n_generations: 50, seed: 2, ..Default::default() };
        let mut ev = FnEvaluator::new(|x: &[f64]| {
            Evaluation::unconstrained(vec![x.iter().map(|v| (v - 0.5).powi(2)).sum()])
        });
        let front = minimize(2, &mut ev, &cfg).unwrap();
        assert_eq!(front.len(), 1);
        assert!(front.preimages[0].iter().all(|v| (v - 0.5).abs() < 1e-2));
    }

    #[test]
    fn infeasible_everywhere_gives_empty_front() {
        let cfg = EvolverConfig { pop_size: 20, n_generations: 5, ..Default::default() };
        let mut ev = FnEvaluator::constrained(|x: &[f64]| Evaluation::with_constraints(vec![x[0]], &[-1.0], &[], 0.0));
        assert!(minimize(1, &mut ev, &cfg).unwrap().is_empty());
    }

    #[test]
    fn elitism_and_bounds() {
        let cfg = EvolverConfig { pop_size: 30, n_generations: 30, seed: 5, ..Default::default() };
        let mut ev = FnEvaluator::new(|x: &[f64]| {
            let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / 2.0;
            Evaluation::unconstrained(vec![x[0], g * (1.0 - (x[0] / g).sqrt())])
        });
        let mut last = 0.0;
        let mut checked = 0;
        evolve(3, &mut ev, &cfg, |_, pop| {
            assert!(pop.iter().all(|i| i.genome.iter().all(|v| (0.0..=1.0).contains(v))));
            let front: Vec<Vec<f64>> =
                pop.iter().filter(|i| i.rank == 0).map(|i| i.objectives.iter().map(|v| -v).collect()).collect();
            let hv = hypervolume(&front, &[-1.1, -11.0]).unwrap();
            // Only a first front larger than the population can lose members.
            if front.len() < pop.len() {
                assert!(hv >= last - 1e-12, "{hv} < {last}");
                checked += 1;
            }
            last = hv;
        })
        .unwrap();
        assert!(checked > 5);
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = EvolverConfig { pop_size: 20, n_generations: 10, seed: 11, ..Default::default() };
        let run = || {
            let mut ev = FnEvaluator::new(|x: &[f64]| Evaluation::unconstrained(vec![x[0] * x[1], 1.0 - x[0]]));
            evolve(2, &mut ev, &cfg, |_, _| {}).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(EvolverConfig { pop_size: 3, ..Default::default() }.validate().is_err());
        assert!(EvolverConfig { crossover_prob: 1.5, ..Default::default() }.validate().is_err());
        assert!(EvolverConfig { n_generations: 0, ..Default::default() }.validate().is_err());
        assert_eq!(EvolverConfig::for_dim(6).pop_size, 600);
    }
}
