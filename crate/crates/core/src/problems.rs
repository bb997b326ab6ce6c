//! Benchmark problems.
//!
//! Every problem is evaluated in natural units and reports objectives in the
//! maximization convention: the published minimization objectives are
//! negated. Inequality constraints are reported as `g(x)` with `g >= 0`
//! meaning feasible.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Feasible when `g(x) >= 0`.
    Inequality,
    /// Feasible when `h(x) = 0`, up to a configured tolerance.
    Equality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    BraninCurrin,
    ConstrainedBraninCurrin,
    Zdt3,
    Dtlz3,
    Dtlz7,
    Osy,
    Dh3,
    VehicleSafety,
    CarSideImpact,
    DiscBrake,
    LinearTradeoff,
    ConstrainedDemo,
}

/// Noiseless objective and constraint values at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Values {
    pub objectives: Vec<f64>,
    pub constraints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: String,
    kind: Kind,
    pub dim: usize,
    pub num_objectives: usize,
    pub constraints: Vec<ConstraintKind>,
    pub bounds: Vec<(f64, f64)>,
    /// Hypervolume reference point, maximization convention.
    pub reference_point: Vec<f64>,
}

/// Names accepted by [`Problem::by_name`]. Names marked with a default
/// dimension also accept a `name:d` suffix.
pub const PROBLEM_NAMES: [&str; 12] = [
    "branin_currin",
    "constrained_branin_currin",
    "zdt3",
    "dtlz3",
    "dtlz7",
    "osy",
    "dh3",
    "vehicle_safety",
    "car_side_impact",
    "disc_brake",
    "linear_tradeoff",
    "constrained_demo",
];

impl Problem {
    /// Looks up a registered problem, e.g. `"zdt3"` or `"dtlz3:20"`.
    pub fn by_name(spec: &str) -> Result<Self> {
        let (base, dim) = match spec.split_once(':') {
            Some((b, d)) => {
                let d: usize = d.parse().map_err(|_| Error::invalid(format!("bad dimension in {spec:?}")))?;
                (b, Some(d))
            }
            None => (spec, None),
        };
        let ineq = |n: usize| vec![ConstraintKind::Inequality; n];
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<f64>>();
        let resizable = |default: usize, min: usize| -> Result<usize> {
            let d = dim.unwrap_or(default);
            if d < min {
                return Err(Error::invalid(format!("{base} needs at least {min} dimensions")));
            }
            Ok(d)
        };
        let fixed = |d: usize| -> Result<usize> {
            match dim {
                Some(x) if x != d => Err(Error::invalid(format!("{base} has fixed dimension {d}"))),
                _ => Ok(d),
            }
        };
        let p = match base {
            "branin_currin" | "constrained_branin_currin" => {
                let constrained = base.starts_with("constrained");
                Problem {
                    name: base.into(),
                    kind: if constrained { Kind::ConstrainedBraninCurrin } else { Kind::BraninCurrin },
                    dim: fixed(2)?,
                    num_objectives: 2,
                    constraints: ineq(usize::from(constrained)),
                    bounds: vec![(-5.0, 10.0), (0.0, 15.0)],
                    reference_point: neg(&[308.2, 13.9]),
                }
            }
            "zdt3" => {
                let d = resizable(6, 2)?;
                Problem {
                    name: format!("zdt3:{d}"),
                    kind: Kind::Zdt3,
                    dim: d,
                    num_objectives: 2,
                    constraints: vec![],
                    bounds: vec![(0.0, 1.0); d],
                    reference_point: neg(&[1.0, 10.0]),
                }
            }
            "dtlz3" => {
                let d = resizable(10, 2)?;
                // g <= 100 (k + 1.25 k) with k = d - 1.
                let worst = 225.0 * (d - 1) as f64 + 1.0;
                Problem {
                    name: format!("dtlz3:{d}"),
                    kind: Kind::Dtlz3,
                    dim: d,
                    num_objectives: 2,
                    constraints: vec![],
                    bounds: vec![(0.0, 1.0); d],
                    reference_point: neg(&[worst, worst]),
                }
            }
            "dtlz7" => {
                let d = resizable(6, 2)?;
                Problem {
                    name: format!("dtlz7:{d}"),
                    kind: Kind::Dtlz7,
                    dim: d,
                    num_objectives: 2,
                    constraints: vec![],
                    bounds: vec![(0.0, 1.0); d],
                    reference_point: neg(&[1.0, 22.0]),
                }
            }
            "osy" => Problem {
                name: base.into(),
                kind: Kind::Osy,
                dim: fixed(6)?,
                num_objectives: 2,
                constraints: ineq(6),
                bounds: vec![(0.0, 10.0), (0.0, 10.0), (1.0, 5.0), (0.0, 6.0), (1.0, 5.0), (0.0, 10.0)],
                reference_point: neg(&[0.0, 386.0]),
            },
            "dh3" => {
                let d = resizable(10, 3)?;
                let mut bounds = vec![(0.0, 1.0), (0.0, 1.0)];
                bounds.resize(d, (-1.0, 1.0));
                Problem {
                    name: format!("dh3:{d}"),
                    kind: Kind::Dh3,
                    dim: d,
                    num_objectives: 2,
                    constraints: vec![],
                    bounds,
                    reference_point: neg(&[1.0, 2.0 * (50.0 * (d - 2) as f64 + 1.0)]),
                }
            }
            "vehicle_safety" => Problem {
                name: base.into(),
                kind: Kind::VehicleSafety,
                dim: fixed(5)?,
                num_objectives: 3,
                constraints: vec![],
                bounds: vec![(1.0, 3.0); 5],
                reference_point: neg(&[1704.6, 11.7, 0.27]),
            },
            "car_side_impact" => Problem {
                name: base.into(),
                kind: Kind::CarSideImpact,
                dim: fixed(7)?,
                num_objectives: 4,
                constraints: vec![],
                bounds: vec![(0.5, 1.45), (0.45, 1.35), (0.5, 1.45), (0.5, 1.45), (0.875, 2.625), (0.4, 1.2), (0.4, 1.2)],
                reference_point: neg(&[42.0, 4.45, 13.1, 14.0]),
            },
            "disc_brake" => Problem {
                name: base.into(),
                kind: Kind::DiscBrake,
                dim: fixed(4)?,
                num_objectives: 2,
                constraints: ineq(4),
                bounds: vec![(55.0, 80.0), (75.0, 110.0), (1000.0, 3000.0), (11.0, 20.0)],
                reference_point: neg(&[8.45, 9.1]),
            },
            "linear_tradeoff" => Problem {
                name: base.into(),
                kind: Kind::LinearTradeoff,
                dim: fixed(1)?,
                num_objectives: 2,
                constraints: vec![],
                bounds: vec![(0.0, 1.0)],
                reference_point: neg(&[1.0, 1.0]),
            },
            "constrained_demo" => Problem {
                name: base.into(),
                kind: Kind::ConstrainedDemo,
                dim: fixed(2)?,
                num_objectives: 2,
                constraints: ineq(2),
                bounds: vec![(-2.0, 2.0), (-2.0, 2.0)],
                reference_point: neg(&[800.0, 13.0]),
            },
            _ => return Err(Error::invalid(format!("unknown problem {spec:?}"))),
        };
        Ok(p)
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Noiseless values at `x` (natural units).
    pub fn evaluate(&self, x: &[f64]) -> Result<Values> {
        Error::check_dim(self.dim, x.len())?;
        for (v, &(lo, hi)) in x.iter().zip(&self.bounds) {
            let slack = 1e-12 * (hi - lo);
            if !(v.is_finite() && *v >= lo - slack && *v <= hi + slack) {
                return Err(Error::invalid(format!("{v} outside [{lo}, {hi}]")));
            }
        }
        let (raw, constraints) = self.raw(x);
        Ok(Values { objectives: raw.iter().map(|v| -v).collect(), constraints })
    }

    /// Maps a point of the unit box to natural units.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.bounds).map(|(u, (lo, hi))| (lo + u * (hi - lo)).clamp(*lo, *hi)).collect()
    }

    /// Maps natural units to the unit box.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bounds).map(|(x, (lo, hi))| (x - lo) / (hi - lo)).collect()
    }

    /// Published (minimization) objectives and the constraint values.
    fn raw(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            Kind::BraninCurrin => (branin_currin(x).to_vec(), vec![]),
            Kind::ConstrainedBraninCurrin => {
                let c = 50.0 - (x[0] - 2.5).powi(2) - (x[1] - 7.5).powi(2);
                (branin_currin(x).to_vec(), vec![c])
            }
            Kind::Zdt3 => (zdt3(x).to_vec(), vec![]),
            Kind::Dtlz3 => (dtlz3(x).to_vec(), vec![]),
            Kind::Dtlz7 => (dtlz7(x).to_vec(), vec![]),
            Kind::Osy => osy(x),
            Kind::Dh3 => (dh3(x).to_vec(), vec![]),
            Kind::VehicleSafety => (vehicle_safety(x).to_vec(), vec![]),
            Kind::CarSideImpact => (car_side_impact(x).to_vec(), vec![]),
            Kind::DiscBrake => disc_brake(x),
            Kind::LinearTradeoff => (vec![x[0], 1.0 - x[0]], vec![]),
            Kind::ConstrainedDemo => constrained_demo(x),
        }
    }

    /// Whether [`analytic_front_sample`] supports this problem.
    pub fn has_analytic_front(&self) -> bool {
        matches!(self.kind, Kind::Zdt3 | Kind::Dtlz3 | Kind::Dtlz7 | Kind::LinearTradeoff | Kind::ConstrainedDemo)
    }
}

/// Branin on `[-5,10]x[0,15]` and Currin on the same point rescaled to the unit square.
fn branin_currin(x: &[f64]) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    let b = (x2 - 5.1 / (4.0 * PI * PI) * x1 * x1 + 5.0 / PI * x1 - 6.0).powi(2)
        + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * x1.cos()
        + 10.0;
    let (u1, u2) = ((x1 + 5.0) / 15.0, x2 / 15.0);
    let factor = if u2 > 0.0 { 1.0 - (-1.0 / (2.0 * u2)).exp() } else { 1.0 };
    let c = factor * (2300.0 * u1.powi(3) + 1900.0 * u1 * u1 + 2092.0 * u1 + 60.0)
        / (100.0 * u1.powi(3) + 500.0 * u1 * u1 + 4.0 * u1 + 20.0);
    [b, c]
}

/// ZDT3 (Zitzler, Deb and Thiele, 2000).
fn zdt3(x: &[f64]) -> [f64; 2] {
    let n = x.len() as f64;
    let f1 = x[0];
    let g = 1.0 + 9.0 / (n - 1.0) * x[1..].iter().sum::<f64>();
    let t = f1 / g;
    [f1, g * (1.0 - t.sqrt() - t * (10.0 * PI * f1).sin())]
}

/// DTLZ3 with two objectives (Deb, Thiele, Laumanns and Zitzler, 2005).
fn dtlz3(x: &[f64]) -> [f64; 2] {
    let tail = &x[1..];
    let g = 100.0
        * (tail.len() as f64
            + tail.iter().map(|v| (v - 0.5).powi(2) - (20.0 * PI * (v - 0.5)).cos()).sum::<f64>());
    let a = x[0] * PI / 2.0;
    [(1.0 + g) * a.cos(), (1.0 + g) * a.sin()]
}

/// DTLZ7 with two objectives.
fn dtlz7(x: &[f64]) -> [f64; 2] {
    let tail = &x[1..];
    let f1 = x[0];
    let g = 1.0 + 9.0 / tail.len() as f64 * tail.iter().sum::<f64>();
    let h = 2.0 - f1 / (1.0 + g) * (1.0 + (3.0 * PI * f1).sin());
    [f1, (1.0 + g) * h]
}

/// Osyczka and Kundu (1995).
fn osy(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (x1, x2, x3, x4, x5, x6) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let f1 = -(25.0 * (x1 - 2.0).powi(2) + (x2 - 2.0).powi(2) + (x3 - 1.0).powi(2) + (x4 - 4.0).powi(2) + (x5 - 1.0).powi(2));
    let f2 = x.iter().map(|v| v * v).sum();
    let c = vec![
        x1 + x2 - 2.0,
        6.0 - x1 - x2,
        2.0 - x2 + x1,
        2.0 - x1 + 3.0 * x2,
        4.0 - (x3 - 3.0).powi(2) - x4,
        (x5 - 3.0).powi(2) + x6 - 4.0,
    ];
    (vec![f1, f2], c)
}

/// DH3 (Deb and Gupta, 2006).
fn dh3(x: &[f64]) -> [f64; 2] {
    let (x1, x2) = (x[0], x[1]);
    let h = 2.0 - 0.8 * (-((x2 - 0.35) / 0.25).powi(2)).exp() - (-((x2 - 0.85) / 0.03).powi(2)).exp();
    let g = 50.0 * x[2..].iter().map(|v| v * v).sum::<f64>();
    let s = 1.0 - x1.sqrt();
    [x1, h * (g + s)]
}

/// Vehicle crashworthiness response surfaces (Liao et al., 2008).
fn vehicle_safety(x: &[f64]) -> [f64; 3] {
    let (x1, x2, x3, x4, x5) = (x[0], x[1], x[2], x[3], x[4]);
    let f1 = 1640.2823 + 2.3573285 * x1 + 2.3220035 * x2 + 4.5688768 * x3 + 7.7213633 * x4 + 4.4559504 * x5;
    let f2 = 6.5856 + 1.15 * x1 - 1.0427 * x2 + 0.9738 * x3 + 0.8364 * x4 - 0.3695 * x1 * x4 + 0.0861 * x1 * x5
        + 0.3628 * x2 * x4
        - 0.1106 * x1 * x1
        - 0.3437 * x3 * x3
        + 0.1764 * x4 * x4;
    let f3 = -0.0551 + 0.0181 * x1 + 0.1024 * x2 + 0.0421 * x3 - 0.0073 * x1 * x2 + 0.024 * x2 * x3
        - 0.0118 * x2 * x4
        - 0.0204 * x3 * x4
        - 0.008 * x3 * x5
        - 0.0241 * x2 * x2
        + 0.0109 * x4 * x4;
    [f1, f2, f3]
}

/// Car side-impact (Jain and Deb, 2014); the fourth objective is the total
/// violation of the ten design constraints.
fn car_side_impact(x: &[f64]) -> [f64; 4] {
    let (x1, x2, x3, x4, x5, x6, x7) = (x[0], x[1], x[2], x[3], x[4], x[5], x[6]);
    let f1 = 1.98 + 4.9 * x1 + 6.67 * x2 + 6.98 * x3 + 4.01 * x4 + 1.78 * x5 + 0.00001 * x6 + 2.73 * x7;
    let f2 = 4.72 - 0.5 * x4 - 0.19 * x2 * x3;
    let v_mbp = 10.58 - 0.674 * x1 * x2 - 0.67275 * x2;
    let v_fd = 16.45 - 0.489 * x3 * x7 - 0.843 * x5 * x6;
    let f3 = 0.5 * (v_mbp + v_fd);
    let g = [
        1.0 - 0.3717 * x2 * x4 - 0.0092928 * x3,
        0.32 - (0.261 - 0.0159 * x1 * x2 - 0.06486 * x1 - 0.019 * x2 * x7 + 0.0144 * x3 * x5 + 0.0154464 * x6),
        0.32 - (0.214 + 0.00817 * x5 - 0.045195 * x1 - 0.0135168 * x1 + 0.03099 * x2 * x6 - 0.018 * x2 * x7
            + 0.007176 * x3
            + 0.023232 * x3
            - 0.00364 * x5 * x6
            - 0.018 * x2 * x2),
        0.32 - (0.74 - 0.61 * x2 - 0.031296 * x3 - 0.031872 * x7 + 0.227 * x2 * x2),
        32.0 - (28.98 + 3.818 * x3 - 4.2 * x1 * x2 + 1.27296 * x6 - 2.68065 * x7),
        32.0 - (33.86 + 2.95 * x3 - 5.057 * x1 * x2 - 3.795 * x2 - 3.4431 * x7 + 1.45728),
        32.0 - (46.36 - 9.9 * x2 - 4.4505 * x1),
        4.0 - f2,
        9.9 - v_mbp,
        15.7 - v_fd,
    ];
    let f4 = g.iter().map(|v| (-v).max(0.0)).sum();
    [f1, f2, f3, f4]
}

/// Disc brake design (Ray and Liew, 2002). Ratios of `x2^k - x1^k` are
/// factored to avoid 0/0; the radial gap is floored at 1 mm inside the
/// constraint expressions, which only changes already-infeasible designs.
fn disc_brake(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (x1, x2, x3, x4) = (x[0], x[1], x[2], x[3]);
    let gap = (x2 - x1).max(1.0);
    let sum = x1 + x2;
    let quad = x1 * x1 + x1 * x2 + x2 * x2;
    let f1 = 4.9e-5 * (x2 * x2 - x1 * x1) * (x4 - 1.0);
    let f2 = 9.82e6 * sum / quad / (x3 * x4);
    let c = vec![
        (x2 - x1) - 20.0,
        0.4 - x3 / (3.14 * sum * gap),
        1.0 - 2.22e-3 * x3 * quad / (sum * sum * gap),
        2.66e-2 * x3 * x4 * quad / sum - 900.0,
    ];
    (vec![f1, f2], c)
}

/// Constrained two-variable demonstration problem used to validate the
/// inner solver; its front is `x2 = 0`, `x1` in `[0.1, 0.4] ∪ [0.6, 0.9]`.
fn constrained_demo(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (x1, x2) = (x[0], x[1]);
    let f = vec![100.0 * (x1 * x1 + x2 * x2), (x1 - 1.0).powi(2) + x2 * x2];
    // Published as g <= 0; reported here with the feasible side >= 0.
    let c = vec![-2.0 * (x1 - 0.1) * (x1 - 0.9) / 0.18, 20.0 * (x1 - 0.4) * (x1 - 0.6) / 4.8];
    (f, c)
}

/// `m` points of the true Pareto front in the maximization convention,
/// ordered by increasing first raw objective.
pub fn analytic_front_sample(problem: &Problem, m: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    let raw: Vec<[f64; 2]> = match problem.kind {
        Kind::Dtlz3 => (0..m)
            .map(|j| {
                let t = if m == 1 { 0.0 } else { j as f64 / (m - 1) as f64 };
                let a = (1.0 - t) * PI / 2.0;
                [a.cos(), a.sin()]
            })
            .collect(),
        Kind::LinearTradeoff => sample_segments(&[(0.0, 1.0)], m).into_iter().map(|t| [t, 1.0 - t]).collect(),
        Kind::Zdt3 => {
            let curve = |t: f64| 1.0 - t.sqrt() - t * (10.0 * PI * t).sin();
            sample_segments(&front_segments(curve), m).into_iter().map(|t| [t, curve(t)]).collect()
        }
        Kind::Dtlz7 => {
            let curve = |t: f64| 4.0 - t * (1.0 + (3.0 * PI * t).sin());
            sample_segments(&front_segments(curve), m).into_iter().map(|t| [t, curve(t)]).collect()
        }
        Kind::ConstrainedDemo => sample_segments(&[(0.1, 0.4), (0.6, 0.9)], m)
            .into_iter()
            .map(|x1| [100.0 * x1 * x1, (x1 - 1.0).powi(2)])
            .collect(),
        _ => return Err(Error::NotAvailable(format!("no analytic front for {}", problem.name))),
    };
    Ok(raw.into_iter().map(|p| vec![-p[0], -p[1]]).collect())
}

/// Maximal intervals of `t in [0,1]` on which `(t, curve(t))` is
/// nondominated (minimization), resolved on a grid of spacing 1e-6.
fn front_segments(curve: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    const N: usize = 1_000_000;
    let mut segments = Vec::new();
    let mut best = f64::INFINITY;
    let mut open: Option<(f64, f64)> = None;
    for i in 0..=N {
        let t = i as f64 / N as f64;
        let v = curve(t);
        if v < best {
            best = v;
            open = Some(match open {
                Some((a, _)) => (a, t),
                None => (t, t),
            });
        } else if let Some(s) = open.take() {
            segments.push(s);
        }
    }
    segments.extend(open);
    segments
}

/// `m` parameter values spread evenly over the total length of `segments`.
fn sample_segments(segments: &[(f64, f64)], m: usize) -> Vec<f64> {
    let total: f64 = segments.iter().map(|(a, b)| b - a).sum();
    (0..m)
        .map(|j| {
            let mut s = if m == 1 { 0.0 } else { total * j as f64 / (m - 1) as f64 };
            for &(a, b) in segments {
                if s <= b - a {
                    return a + s;
                }
                s -= b - a;
            }
            segments.last().map_or(0.0, |s| s.1)
        })
        .collect()
}

/// A problem with additive Gaussian observation noise.
#[derive(Debug, Clone)]
pub struct NoisyOracle {
    problem: Problem,
    noise_variance: f64,
    rng: ChaCha8Rng,
}

impl NoisyOracle {
    pub fn new(problem: Problem, noise_variance: f64, rng: ChaCha8Rng) -> Result<Self> {
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::invalid("noise variance must be finite and nonnegative"));
        }
        Ok(Self { problem, noise_variance, rng })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    /// Noisy values at `x` (natural units); every component gets independent noise.
    pub fn observe(&mut self, x: &[f64]) -> Result<Values> {
        let mut v = self.problem.evaluate(x)?;
        if self.noise_variance > 0.0 {
            let sd = self.noise_variance.sqrt();
            for y in v.objectives.iter_mut().chain(v.constraints.iter_mut()) {
                *y += sd * self.rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn raw(p: &Problem, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let v = p.evaluate(x).unwrap();
        (v.objectives.iter().map(|y| -y).collect(), v.constraints)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * y.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }

    // Golden values below come from an independent numpy transcription of the
    // published formulas.
    #[test]
    fn golden_values() {
        let p = Problem::by_name("branin_currin").unwrap();
        close(&raw(&p, &[PI, 2.275]).0, &[0.39788735772973816, 11.023462104796744], 1e-12);
        assert!((raw(&p, &[PI, 2.275]).0[0] - 0.397887).abs() < 1e-5);
        close(&raw(&p, &[1.0, 4.0]).0, &[15.47709507916227, 10.567384302713302], 1e-12);
        close(&raw(&p, &[-5.0, 0.0]).0, &[308.12909601160663, 3.0], 1e-12);
        let p = Problem::by_name("constrained_branin_currin").unwrap();
        close(&raw(&p, &[1.0, 4.0]).1, &[35.5], 1e-12);

        let p = Problem::by_name("zdt3").unwrap();
        close(&raw(&p, &[0.0; 6]).0, &[0.0, 1.0], 1e-12);
        close(&raw(&p, &[0.3, 0.1, 0.2, 0.4, 0.5, 0.9]).0, &[0.3, 3.582502609606184], 1e-12);

        let p = Problem::by_name("dtlz3").unwrap();
        let mut x = vec![0.5; 10];
        x[0] = 0.3;
        close(&raw(&p, &x).0, &[0.8910065241883679, 0.45399049973954675], 1e-12);
        close(
            &raw(&p, &[0.3, 0.1, 0.2, 0.4, 0.5, 0.9, 0.55, 0.45, 0.7, 0.2]).0,
            &[406.74447829198994, 207.2466631311031],
            1e-12,
        );

        let p = Problem::by_name("dtlz7").unwrap();
        close(&raw(&p, &[0.3, 0.1, 0.2, 0.4, 0.5, 0.9]).0, &[0.3, 11.167294901687516], 1e-12);

        let p = Problem::by_name("dh3").unwrap();
        close(&raw(&p, &[0.25, 0.8, 0.1, -0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 0.5]).0, &[0.25, 38.129847197973874], 1e-12);

        let p = Problem::by_name("vehicle_safety").unwrap();
        close(&raw(&p, &[1.5, 2.0, 2.5, 1.2, 2.8]).0, &[1681.6267888300004, 8.087661, 0.15397600000000006], 1e-12);

        let p = Problem::by_name("car_side_impact").unwrap();
        close(
            &raw(&p, &[1.0, 0.9, 1.0, 1.0, 1.75, 0.8, 0.8]).0,
            &[29.172008, 4.0489999999999995, 12.1232625, 1.0485000000000042],
            1e-10,
        );
        close(
            &raw(&p, &[0.5, 0.45, 0.5, 0.5, 0.875, 0.4, 0.4]).0,
            &[15.576004000000003, 4.42725, 13.091381250000001, 9.422298200000002],
            1e-10,
        );

        let p = Problem::by_name("disc_brake").unwrap();
        let (f, c) = raw(&p, &[60.0, 90.0, 2000.0, 15.0]);
        close(&f, &[3.087, 2.871345029239766], 1e-12);
        close(&c, &[10.0, 0.25845718329794765, 0.88752, 90071.99999999999], 1e-12);
        let (f, c) = raw(&p, &[70.0, 75.0, 1500.0, 12.0]);
        close(&f, &[0.390775, 5.014615249163585], 1e-12);
        close(&c, &[-15.0, -0.2589062156819679, 0.5003020214030915, 51190.13793103448], 1e-12);

        let p = Problem::by_name("constrained_demo").unwrap();
        let (f, c) = raw(&p, &[0.3, 0.2]);
        close(&f, &[13.0, 0.53], 1e-12);
        // Published g <= 0 values (-1.333.., -0.125) with the sign flipped.
        close(&c, &[1.3333333333333335, 0.12500000000000006], 1e-12);
    }

    #[test]
    fn osy_hand_computation() {
        let p = Problem::by_name("osy").unwrap();
        let (f, c) = raw(&p, &[5.0, 1.0, 2.0, 0.0, 5.0, 10.0]);
        // 25*9 + 1 + 1 + 16 + 16 = 259; 25 + 1 + 4 + 0 + 25 + 100 = 155.
        close(&f, &[-259.0, 155.0], 1e-15);
        close(&c, &[4.0, 0.0, 6.0, 0.0, 3.0, 10.0], 1e-15);
        let (f, c) = raw(&p, &[1.5, 2.5, 3.3, 4.1, 2.2, 7.7]);
        close(&f, &[-13.24, 100.33], 1e-12);
        close(&c, &[2.0, 2.0, 1.0, 8.0, -0.19, 4.34], 1e-12);
    }

    #[test]
    fn registry_round_trip_and_reference_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in PROBLEM_NAMES {
            let p = Problem::by_name(name).unwrap();
            assert_eq!(p.bounds.len(), p.dim);
            assert_eq!(p.reference_point.len(), p.num_objectives);
            for _ in 0..200 {
                let u: Vec<f64> = (0..p.dim).map(|_| rng.random()).collect();
                let x = p.from_unit(&u);
                for (a, b) in p.to_unit(&x).iter().zip(&u) {
                    assert!((a - b).abs() < 1e-12);
                }
                let v = p.evaluate(&x).unwrap();
                assert_eq!(v.constraints.len(), p.num_constraints());
                assert!(v.objectives.iter().chain(&v.constraints).all(|y| y.is_finite()));
                // The reference point is dominated by every evaluation.
                assert!(v.objectives.iter().zip(&p.reference_point).all(|(y, r)| y >= r), "{name}");
            }
        }
    }

    #[test]
    fn sized_names() {
        assert_eq!(Problem::by_name("dtlz3:20").unwrap().dim, 20);
        assert_eq!(Problem::by_name("dh3:20").unwrap().dim, 20);
        assert!(Problem::by_name("osy:7").is_err());
        assert!(Problem::by_name("zdt3:1").is_err());
        assert!(Problem::by_name("nope").is_err());
    }

    #[test]
    fn out_of_bounds_rejected() {
        let p = Problem::by_name("osy").unwrap();
        assert!(matches!(p.evaluate(&[5.0, 1.0, 0.5, 0.0, 5.0, 10.0]), Err(Error::InvalidArgument(_))));
        assert!(p.evaluate(&[5.0]).is_err());
    }

    #[test]
    fn known_feasible_points() {
        let osy = Problem::by_name("osy").unwrap();
        assert!(osy.evaluate(&[5.0, 1.0, 2.0, 0.0, 5.0, 10.0]).unwrap().constraints.iter().all(|c| *c >= 0.0));
        let demo = Problem::by_name("constrained_demo").unwrap();
        assert!(demo.evaluate(&[0.2, 0.0]).unwrap().constraints.iter().all(|c| *c >= 0.0));
        let bc = Problem::by_name("constrained_branin_currin").unwrap();
        assert!(bc.evaluate(&[2.5, 7.5]).unwrap().constraints[0] > 0.0);
    }

    #[test]
    fn zdt3_front_relation_and_segments() {
        let p = Problem::by_name("zdt3").unwrap();
        let front = analytic_front_sample(&p, 2000).unwrap();
        for q in &front {
            let (f1, f2) = (-q[0], -q[1]);
            assert!((f2 - (1.0 - f1.sqrt() - f1 * (10.0 * PI * f1).sin())).abs() < 1e-12);
        }
        let f1: Vec<f64> = front.iter().map(|q| -q[0]).collect();
        let mut gaps: Vec<f64> = f1.windows(2).map(|w| w[1] - w[0]).collect();
        let big: Vec<f64> = gaps.clone();
        gaps.sort_by(f64::total_cmp);
        let median = gaps[gaps.len() / 2];
        assert_eq!(big.iter().filter(|g| **g > 5.0 * median).count(), 4);

        // Segment ends agree with the published intervals of the front.
        let segments = front_segments(|t| 1.0 - t.sqrt() - t * (10.0 * PI * t).sin());
        let expected = [
            (0.0, 0.0830015349),
            (0.1822287280, 0.2577623634),
            (0.4093136748, 0.4538821041),
            (0.6183967944, 0.6525117038),
            (0.8233317983, 0.8518328654),
        ];
        assert_eq!(segments.len(), 5);
        for (s, e) in segments.iter().zip(expected) {
            assert!((s.0 - e.0).abs() < 2e-6 && (s.1 - e.1).abs() < 2e-6, "{s:?} vs {e:?}");
        }
    }

    #[test]
    fn other_fronts() {
        let p = Problem::by_name("dtlz3").unwrap();
        for q in analytic_front_sample(&p, 50).unwrap() {
            assert!((q[0] * q[0] + q[1] * q[1] - 1.0).abs() < 1e-9);
        }
        let single = analytic_front_sample(&p, 1).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single[0][0].abs() < 1e-15 && single[0][1] == -1.0);
        let z = Problem::by_name("zdt3").unwrap();
        assert_eq!(analytic_front_sample(&z, 1).unwrap(), vec![vec![-0.0, -1.0]]);
        let demo = Problem::by_name("constrained_demo").unwrap();
        for q in analytic_front_sample(&demo, 40).unwrap() {
            let x1 = (-q[0] / 100.0).sqrt();
            assert!((0.1 - 1e-12..=0.4 + 1e-12).contains(&x1) || (0.6 - 1e-12..=0.9 + 1e-12).contains(&x1));
        }
        let bc = Problem::by_name("branin_currin").unwrap();
        assert!(matches!(analytic_front_sample(&bc, 10), Err(Error::NotAvailable(_))));
    }

    #[test]
    fn noise_statistics_and_determinism() {
        let p = Problem::by_name("zdt3").unwrap();
        let x = [0.3, 0.1, 0.2, 0.4, 0.5, 0.9];
        let exact = p.evaluate(&x).unwrap();
        let mut quiet = NoisyOracle::new(p.clone(), 0.0, ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(quiet.observe(&x).unwrap(), exact);

        let tau2 = 1e-3;
        let mut noisy = NoisyOracle::new(p.clone(), tau2, ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = 10_000;
        let mut mean = [0.0; 2];
        for _ in 0..n {
            let v = noisy.observe(&x).unwrap();
            mean[0] += v.objectives[0] / n as f64;
            mean[1] += v.objectives[1] / n as f64;
        }
        for k in 0..2 {
            assert!((mean[k] - exact.objectives[k]).abs() < 4.0 * (tau2 / n as f64).sqrt());
        }

        let mut a = NoisyOracle::new(p.clone(), tau2, ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut b = NoisyOracle::new(p, tau2, ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a.observe(&x).unwrap(), b.observe(&x).unwrap());
    }
}
