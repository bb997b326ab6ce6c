//! Pareto dominance, nondominated sorting and the hypervolume indicator.
//!
//! Everything in this module uses the maximization convention: larger is
//! better in every objective. Minimization problems are negated before they
//! reach this code.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mutually nondominated objective vectors together with their preimages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub points: Vec<Vec<f64>>,
    pub preimages: Vec<Vec<f64>>,
}

impl ParetoFront {
    /// Keeps the nondominated members of `objectives`, with their design points.
    pub fn from_candidates(objectives: Vec<Vec<f64>>, designs: Vec<Vec<f64>>) -> Result<Self> {
        Error::check_dim(objectives.len(), designs.len())?;
        if objectives.is_empty() {
            return Ok(Self::default());
        }
        let keep = nondominated_filter(&objectives);
        let mut points = Vec::with_capacity(keep.len());
        let mut preimages = Vec::with_capacity(keep.len());
        let (mut objectives, mut designs) = (objectives, designs);
        for &i in &keep {
            points.push(std::mem::take(&mut objectives[i]));
            preimages.push(std::mem::take(&mut designs[i]));
        }
        Ok(Self { points, preimages })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `a` Pareto-dominates `b`: at least as good everywhere and strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    Error::check_dim(a.len(), b.len())?;
    Ok(dominates_unchecked(a, b))
}

#[inline]
pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Indices of the points not dominated by any other point, in ascending order.
///
/// Points are visited in decreasing lexicographic order, so a point can only
/// be dominated by one visited before it; by transitivity it suffices to test
/// against the archive of survivors so far.
pub fn nondominated_filter<P: AsRef<[f64]>>(points: &[P]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i].as_ref(), points[j].as_ref());
        for (x, y) in a.iter().zip(b) {
            match y.partial_cmp(x) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        i.cmp(&j)
    });
    let mut archive: Vec<usize> = Vec::new();
    for i in order {
        let p = points[i].as_ref();
        if !archive
            .iter()
            .any(|&a| dominates_unchecked(points[a].as_ref(), p))
        {
            archive.push(i);
        }
    }
    archive.sort_unstable();
    archive
}

/// Partitions the points into successive nondominated fronts.
pub fn fast_nondominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Vec<Vec<usize>> {
    sort_into_fronts(points.len(), |i, j| {
        dominates_unchecked(points[i].as_ref(), points[j].as_ref())
    })
}

/// Deb's domination-count sort under an arbitrary strict partial order.
/// Members of each front are listed by ascending index.
pub(crate) fn sort_into_fronts(n: usize, dominates: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut dominated_by_me: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(i, j) {
                dominated_by_me[i].push(j);
                count[j] += 1;
            } else if dominates(j, i) {
                dominated_by_me[j].push(i);
                count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by_me[i] {
                count[j] -= 1;
                if count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Number of samples used when [`hypervolume`] falls back to Monte-Carlo.
pub const MONTE_CARLO_SAMPLES: usize = 1 << 20;

/// Objective counts up to this use the exact sweep.
pub const EXACT_HV_MAX_OBJECTIVES: usize = 4;

/// Hypervolume dominated by `front` and bounded below by `reference`.
///
/// Exact for up to four objectives. Beyond that a fixed-seed Monte-Carlo
/// estimate is returned; use [`hypervolume_monte_carlo`] to get its standard
/// error. Members that fail to strictly dominate the reference in every
/// coordinate enclose an empty box and contribute nothing.
pub fn hypervolume<P: AsRef<[f64]>>(front: &[P], reference: &[f64]) -> Result<f64> {
    let k = reference.len();
    if k == 0 {
        return Err(Error::invalid("reference point has no coordinates"));
    }
    let pts = contributing(front, reference)?;
    if pts.is_empty() {
        return Ok(0.0);
    }
    if k <= EXACT_HV_MAX_OBJECTIVES {
        return Ok(sweep(pts, reference, k));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x4856);
    Ok(monte_carlo(&pts, reference, MONTE_CARLO_SAMPLES, &mut rng).value)
}

/// A Monte-Carlo hypervolume estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Monte-Carlo hypervolume with its binomial standard error, for any objective count.
pub fn hypervolume_monte_carlo<P: AsRef<[f64]>, R: Rng + ?Sized>(
    front: &[P],
    reference: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<HvEstimate> {
    if samples == 0 {
        return Err(Error::invalid("monte-carlo hypervolume needs at least one sample"));
    }
    let pts = contributing(front, reference)?;
    if pts.is_empty() {
        return Ok(HvEstimate { value: 0.0, std_error: 0.0 });
    }
    Ok(monte_carlo(&pts, reference, samples, rng))
}

fn contributing<'a, P: AsRef<[f64]>>(front: &'a [P], reference: &[f64]) -> Result<Vec<&'a [f64]>> {
    let mut out = Vec::with_capacity(front.len());
    for p in front {
        let p = p.as_ref();
        Error::check_dim(reference.len(), p.len())?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("hypervolume of a non-finite objective vector"));
        }
        if p.iter().zip(reference).all(|(v, r)| v > r) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Recursive dimension sweep: slice along the last objective and integrate
/// the hypervolume of the projected prefix.
fn sweep(mut pts: Vec<&[f64]>, reference: &[f64], dims: usize) -> f64 {
    match dims {
        1 => pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max) - reference[0],
        2 => {
            pts.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
            let mut area = 0.0;
            let mut height = reference[1];
            for p in pts {
                if p[1] > height {
                    area += (p[0] - reference[0]) * (p[1] - height);
                    height = p[1];
                }
            }
            area
        }
        _ => {
            let last = dims - 1;
            pts.sort_by(|a, b| b[last].total_cmp(&a[last]));
            let mut volume = 0.0;
            let mut slab: Vec<&[f64]> = Vec::with_capacity(pts.len());
            for i in 0..pts.len() {
                slab.push(pts[i]);
                let below = if i + 1 < pts.len() { pts[i + 1][last] } else { reference[last] };
                let depth = pts[i][last] - below;
                if depth > 0.0 {
                    let keep = nondominated_prefix(&slab, last);
                    volume += depth * sweep(keep, reference, last);
                }
            }
            volume
        }
    }
}

/// Nondominated members of `pts` projected onto the first `dims` objectives.
fn nondominated_prefix<'a>(pts: &[&'a [f64]], dims: usize) -> Vec<&'a [f64]> {
    let projected: Vec<&[f64]> = pts.iter().map(|p| &p[..dims]).collect();
    let keep = nondominated_filter(&projected);
    let mut out: Vec<&[f64]> = keep.into_iter().map(|i| pts[i]).collect();
    // Identical projections survive the filter together; one is enough.
    out.dedup_by(|a, b| a[..dims] == b[..dims]);
    out
}

fn monte_carlo<R: Rng + ?Sized>(pts: &[&[f64]], reference: &[f64], samples: usize, rng: &mut R) -> HvEstimate {
    let k = reference.len();
    let upper: Vec<f64> = (0..k)
        .map(|j| pts.iter().map(|p| p[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let box_volume: f64 = upper.iter().zip(reference).map(|(u, r)| u - r).product();
    let mut sample = vec![0.0; k];
    let mut hits = 0usize;
    for _ in 0..samples {
        for j in 0..k {
            sample[j] = reference[j] + rng.random::<f64>() * (upper[j] - reference[j]);
        }
        if pts.iter().any(|p| p.iter().zip(&sample).all(|(a, s)| a >= s)) {
            hits += 1;
        }
    }
    let frac = hits as f64 / samples as f64;
    HvEstimate {
        value: box_volume * frac,
        std_error: box_volume * (frac * (1.0 - frac) / samples as f64).sqrt(),
    }
}

/// Inverted generational distance: mean over `reference_front` of the
/// Euclidean distance to the nearest member of `front`.
pub fn igd<P: AsRef<[f64]>, Q: AsRef<[f64]>>(front: &[P], reference_front: &[Q]) -> Result<f64> {
    if front.is_empty() || reference_front.is_empty() {
        return Err(Error::invalid("igd needs two nonempty fronts"));
    }
    let k = reference_front[0].as_ref().len();
    for p in front {
        Error::check_dim(k, p.as_ref().len())?;
    }
    let mut total = 0.0;
    for r in reference_front {
        let r = r.as_ref();
        Error::check_dim(k, r.len())?;
        let nearest = front
            .iter()
            .map(|p| squared_distance(p.as_ref(), r))
            .fold(f64::INFINITY, f64::min);
        total += nearest.sqrt();
    }
    Ok(total / reference_front.len() as f64)
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
