//! Bounded local minimizers for sums of squared residuals, plus a multi-start driver.
//!
//! Derivatives come from central finite differences. Variables are expected
//! in scaled units where one unit is a meaningful change, so the default
//! difference step of `1e-2` applies uniformly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub trait LeastSquaresProblem: Sync {
    fn dim(&self) -> usize;
    fn residuals(&self, z: &[f64]) -> Vec<f64>;

    fn value(&self, z: &[f64]) -> f64 {
        sum_sq(&self.residuals(z))
    }
}

pub fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn symmetric(dim: usize, half_width: f64) -> Self {
        Self {
            lower: vec![-half_width; dim],
            upper: vec![half_width; dim],
        }
    }

    pub fn clamp(&self, z: &mut [f64]) {
        for ((v, lo), hi) in z.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalSettings {
    pub fd_step: f64,
    pub tol_v: f64,
    pub tol_step: f64,
    pub max_iterations: usize,
}

impl Default for LocalSettings {
    fn default() -> Self {
        Self {
            fd_step: 1e-2,
            tol_v: 1e-10,
            tol_step: 1e-12,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Objective is exactly zero.
    ExactFit,
    RelativeDecrease,
    SmallStep,
    /// No trial step lowered the objective.
    NoImprovement,
    MaxIterations,
    NonFinite,
}

impl StopReason {
    pub fn converged(self) -> bool {
        !matches!(self, StopReason::MaxIterations | StopReason::NonFinite)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOutcome {
    pub start: Vec<f64>,
    pub start_value: f64,
    pub z: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

pub trait LocalMinimizer: Sync {
    fn name(&self) -> &'static str;
    fn minimize(
        &self,
        problem: &dyn LeastSquaresProblem,
        start: &[f64],
        bounds: &Bounds,
        settings: &LocalSettings,
    ) -> LocalOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinimizerKind {
    /// Bounded Levenberg-Marquardt on the residual vector.
    #[default]
    Lm,
    /// Projected BFGS on the summed objective.
    Bfgs,
}

impl MinimizerKind {
    pub fn minimizer(self) -> &'static dyn LocalMinimizer {
        match self {
            MinimizerKind::Lm => &BoundedLevenbergMarquardt,
            MinimizerKind::Bfgs => &ProjectedBfgs,
        }
    }
}

fn fd_jacobian(problem: &dyn LeastSquaresProblem, z: &[f64], h: f64) -> Vec<Vec<f64>> {
    (0..z.len())
        .into_par_iter()
        .map(|k| {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[k] += h;
            zm[k] -= h;
            let rp = problem.residuals(&zp);
            let rm = problem.residuals(&zm);
            rp.iter().zip(&rm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
        })
        .collect()
}

fn fd_gradient(problem: &dyn LeastSquaresProblem, z: &[f64], h: f64) -> Vec<f64> {
    (0..z.len())
        .into_par_iter()
        .map(|k| {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[k] += h;
            zm[k] -= h;
            (problem.value(&zp) - problem.value(&zm)) / (2.0 * h)
        })
        .collect()
}

// A variable is held when it sits on a bound and the descent direction points outward.
fn free_mask(z: &[f64], grad: &[f64], bounds: &Bounds) -> Vec<bool> {
    z.iter()
        .zip(grad)
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|((&v, &g), (&lo, &hi))| !((v <= lo && g > 0.0) || (v >= hi && g < 0.0)))
        .collect()
}

fn step_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Levenberg-Marquardt with Marquardt diagonal scaling. Bounds are handled by
/// freezing variables pinned against a bound and projecting trial points.
#[derive(Debug, Clone, Copy, Default)]
pub struct BoundedLevenbergMarquardt;

impl LocalMinimizer for BoundedLevenbergMarquardt {
    fn name(&self) -> &'static str {
        "levenberg-marquardt"
    }

    fn minimize(
        &self,
        problem: &dyn LeastSquaresProblem,
        start: &[f64],
        bounds: &Bounds,
        settings: &LocalSettings,
    ) -> LocalOutcome {
        let n = problem.dim();
        let mut z = start.to_vec();
        bounds.clamp(&mut z);
        let mut r = problem.residuals(&z);
        let mut value = sum_sq(&r);
        let mut out = LocalOutcome {
            start: z.clone(),
            start_value: value,
            z: z.clone(),
            value,
            iterations: 0,
            evaluations: 1,
            reason: StopReason::MaxIterations,
        };
        if !value.is_finite() {
            out.reason = StopReason::NonFinite;
            return out;
        }
        let mut mu = 1e-3;
        for iter in 0..settings.max_iterations {
            out.iterations = iter + 1;
            if value == 0.0 {
                out.reason = StopReason::ExactFit;
                break;
            }
            let jac = fd_jacobian(problem, &z, settings.fd_step);
            out.evaluations += 2 * n;
            let mut jtj = DMatrix::<f64>::zeros(n, n);
            let mut grad = vec![0.0; n];
            for a in 0..n {
                grad[a] = jac[a].iter().zip(&r).map(|(j, e)| j * e).sum();
                for b in a..n {
                    let s: f64 = jac[a].iter().zip(&jac[b]).map(|(x, y)| x * y).sum();
                    jtj[(a, b)] = s;
                    jtj[(b, a)] = s;
                }
            }
            if !grad.iter().all(|g| g.is_finite()) {
                out.reason = StopReason::NonFinite;
                break;
            }
            let free = free_mask(&z, &grad, bounds);
            let idx: Vec<usize> = (0..n).filter(|&k| free[k]).collect();
            if idx.is_empty() || grad.iter().all(|&g| g == 0.0) {
                out.reason = StopReason::SmallStep;
                break;
            }
            let m = idx.len();
            let dmax = idx.iter().map(|&k| jtj[(k, k)]).fold(0.0, f64::max);
            let floor = (dmax * 1e-15).max(f64::MIN_POSITIVE);
            let mut accepted = None;
            while mu < 1e30 {
                let a = DMatrix::from_fn(m, m, |p, q| {
                    let v = jtj[(idx[p], idx[q])];
                    if p == q {
                        v + mu * v.max(floor)
                    } else {
                        v
                    }
                });
                let rhs = DVector::from_fn(m, |p, _| -grad[idx[p]]);
                let Some(chol) = a.cholesky() else {
                    mu *= 10.0;
                    continue;
                };
                let delta = chol.solve(&rhs);
                let mut trial = z.clone();
                for (p, &k) in idx.iter().enumerate() {
                    trial[k] += delta[p];
                }
                bounds.clamp(&mut trial);
                let tr = problem.residuals(&trial);
                out.evaluations += 1;
                let tv = sum_sq(&tr);
                if !tv.is_finite() {
                    mu *= 10.0;
                    continue;
                }
                if tv < value {
                    accepted = Some((trial, tr, tv));
                    mu = (mu * 0.3).max(1e-12);
                    break;
                }
                mu *= 10.0;
                if step_norm(&trial, &z) < settings.tol_step {
                    break;
                }
            }
            let Some((trial, tr, tv)) = accepted else {
                out.reason = StopReason::NoImprovement;
                break;
            };
            let rel = (value - tv) / value;
            let step = step_norm(&trial, &z);
            z = trial;
            r = tr;
            value = tv;
            if rel < settings.tol_v {
                out.reason = StopReason::RelativeDecrease;
                break;
            }
            if step < settings.tol_step {
                out.reason = StopReason::SmallStep;
                break;
            }
        }
        out.z = z;
        out.value = value;
        out
    }
}

/// Projected BFGS with Armijo backtracking on the bound-projected path.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProjectedBfgs;

impl LocalMinimizer for ProjectedBfgs {
    fn name(&self) -> &'static str {
        "projected-bfgs"
    }

    fn minimize(
        &self,
        problem: &dyn LeastSquaresProblem,
        start: &[f64],
        bounds: &Bounds,
        settings: &LocalSettings,
    ) -> LocalOutcome {
        let n = problem.dim();
        let mut z = start.to_vec();
        bounds.clamp(&mut z);
        let mut value = problem.value(&z);
        let mut out = LocalOutcome {
            start: z.clone(),
            start_value: value,
            z: z.clone(),
            value,
            iterations: 0,
            evaluations: 1,
            reason: StopReason::MaxIterations,
        };
        if !value.is_finite() {
            out.reason = StopReason::NonFinite;
            return out;
        }
        let mut hinv = DMatrix::<f64>::identity(n, n);
        let mut grad = fd_gradient(problem, &z, settings.fd_step);
        out.evaluations += 2 * n;
        let mut scaled_first = false;
        for iter in 0..settings.max_iterations {
            out.iterations = iter + 1;
            if value == 0.0 {
                out.reason = StopReason::ExactFit;
                break;
            }
            if !grad.iter().all(|g| g.is_finite()) {
                out.reason = StopReason::NonFinite;
                break;
            }
            let free = free_mask(&z, &grad, bounds);
            let g = DVector::from_fn(n, |k, _| if free[k] { grad[k] } else { 0.0 });
            if g.norm() == 0.0 {
                out.reason = StopReason::SmallStep;
                break;
            }
            let mut dir = -(&hinv * &g);
            for k in 0..n {
                if !free[k] {
                    dir[k] = 0.0;
                }
            }
            if dir.dot(&g) >= 0.0 {
                hinv = DMatrix::identity(n, n);
                dir = -g.clone();
            }
            if !scaled_first {
                // first step: size the steepest-descent direction to the difference step scale
                let s = (value / g.norm_squared()).min(1.0 / g.norm());
                dir *= s.max(settings.fd_step / g.norm());
                scaled_first = true;
            }
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let mut trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
                bounds.clamp(&mut trial);
                let tv = problem.value(&trial);
                out.evaluations += 1;
                let moved: f64 = trial.iter().zip(&z).zip(g.iter()).map(|((a, b), gg)| (a - b) * gg).sum();
                if tv.is_finite() && tv <= value + 1e-4 * moved {
                    accepted = Some((trial, tv));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, tv)) = accepted else {
                out.reason = StopReason::NoImprovement;
                break;
            };
            let new_grad = fd_gradient(problem, &trial, settings.fd_step);
            out.evaluations += 2 * n;
            let s = DVector::from_fn(n, |k, _| trial[k] - z[k]);
            let y = DVector::from_fn(n, |k, _| new_grad[k] - grad[k]);
            let sy = s.dot(&y);
            if sy > 1e-12 * s.norm() * y.norm() {
                let rho = 1.0 / sy;
                let ident = DMatrix::<f64>::identity(n, n);
                let left = &ident - rho * &s * y.transpose();
                let right = &ident - rho * &y * s.transpose();
                hinv = &left * &hinv * &right + rho * &s * s.transpose();
            }
            let rel = (value - tv) / value;
            let step = s.norm();
            z = trial;
            value = tv;
            grad = new_grad;
            if rel < settings.tol_v {
                out.reason = StopReason::RelativeDecrease;
                break;
            }
            if step < settings.tol_step {
                out.reason = StopReason::SmallStep;
                break;
            }
        }
        out.z = z;
        out.value = value;
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimizeError {
    #[error("every start produced a non-finite objective ({0} starts)")]
    AllStartsFailed(usize),
    #[error("at least one start is required")]
    NoStarts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiStartOutcome {
    pub best: LocalOutcome,
    pub runs: Vec<LocalOutcome>,
    pub discarded: usize,
}

/// Start points: the origin (clamped into the box) followed by `count - 1`
/// uniform draws inside the box.
pub fn start_points(bounds: &Bounds, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let dim = bounds.lower.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut starts = Vec::with_capacity(count);
    if count > 0 {
        let mut origin = vec![0.0; dim];
        bounds.clamp(&mut origin);
        starts.push(origin);
    }
    for _ in 1..count {
        let p = (0..dim)
            .map(|k| rng.gen_range(bounds.lower[k]..=bounds.upper[k]))
            .collect();
        starts.push(p);
    }
    starts
}

/// Runs the minimizer from each start and keeps the lowest objective.
/// Starts that hit a non-finite objective are discarded.
pub fn multi_start(
    problem: &dyn LeastSquaresProblem,
    minimizer: &dyn LocalMinimizer,
    bounds: &Bounds,
    settings: &LocalSettings,
    starts: &[Vec<f64>],
) -> Result<MultiStartOutcome, OptimizeError> {
    if starts.is_empty() {
        return Err(OptimizeError::NoStarts);
    }
    let runs: Vec<LocalOutcome> = starts
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let o = minimizer.minimize(problem, s, bounds, settings);
            log::debug!(
                "start {i}: V {:.6e} -> {:.6e} in {} iterations ({:?})",
                o.start_value,
                o.value,
                o.iterations,
                o.reason
            );
            o
        })
        .collect();
    let mut discarded = 0;
    let mut best: Option<&LocalOutcome> = None;
    for (i, o) in runs.iter().enumerate() {
        if o.reason == StopReason::NonFinite || !o.value.is_finite() {
            log::warn!("start {i} discarded: non-finite objective");
            discarded += 1;
            continue;
        }
        if best.map_or(true, |b| o.value < b.value) {
            best = Some(o);
        }
    }
    let best = best.ok_or(OptimizeError::AllStartsFailed(runs.len()))?.clone();
    Ok(MultiStartOutcome {
        best,
        runs,
        discarded,
    })
}
