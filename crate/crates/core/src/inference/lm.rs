//! Damped least squares for small weighted problems.
//!
//! Minimises `Σ ((yᵢ − f(xᵢ; p)) / σᵢ)²`. Steps are only accepted when they
//! lower the weighted residual norm; the iteration stops once the largest
//! relative parameter change falls below `xtol`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::FitError;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub xtol: f64,
    pub max_iterations: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            xtol: 1e-8,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub chi2: f64,
    pub damping: f64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub chi2: f64,
    /// `(JᵀWJ)⁻¹` at the solution, `None` when singular.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub trace: Vec<IterationRecord>,
}

/// A weighted least-squares problem.
pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_points(&self) -> usize;
    /// Model prediction at point `i`.
    fn model(&self, params: &[f64], i: usize) -> f64;
    fn observed(&self, i: usize) -> f64;
    fn sigma(&self, i: usize) -> f64;
    /// Whether `params` lie in the model's domain.
    fn feasible(&self, _params: &[f64]) -> bool {
        true
    }
    /// Typical magnitude of each parameter, for finite-difference steps.
    fn scale(&self, j: usize, params: &[f64]) -> f64 {
        params[j].abs().max(1e-6)
    }
}

fn chi2<P: Problem + ?Sized>(p: &P, params: &[f64]) -> f64 {
    (0..p.n_points())
        .map(|i| ((p.observed(i) - p.model(params, i)) / p.sigma(i)).powi(2))
        .sum()
}

/// Weighted residuals and Jacobian of the weighted model (central differences).
fn linearise<P: Problem + ?Sized>(p: &P, params: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let m = p.n_points();
    let n = p.n_params();
    let r = DVector::from_fn(m, |i, _| (p.observed(i) - p.model(params, i)) / p.sigma(i));
    let mut jac = DMatrix::zeros(m, n);
    let mut work = params.to_vec();
    for j in 0..n {
        let h = 1e-6 * p.scale(j, params);
        work[j] = params[j] + h;
        let plus: Vec<f64> = (0..m).map(|i| p.model(&work, i)).collect();
        work[j] = params[j] - h;
        let minus: Vec<f64> = (0..m).map(|i| p.model(&work, i)).collect();
        work[j] = params[j];
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h * p.sigma(i));
        }
    }
    (r, jac)
}

pub fn minimize<P: Problem + ?Sized>(
    problem: &P,
    initial: &[f64],
    opts: &LmOptions,
) -> Result<LmSolution, FitError> {
    let n = problem.n_params();
    if problem.n_points() < n {
        return Err(FitError::InsufficientData {
            needed: n,
            got: problem.n_points(),
        });
    }
    if !problem.feasible(initial) {
        return Err(FitError::BadInitialGuess(initial.to_vec()));
    }
    let mut params = initial.to_vec();
    let mut cost = chi2(problem, &params);
    if !cost.is_finite() {
        return Err(FitError::BadInitialGuess(initial.to_vec()));
    }
    let mut trace = vec![IterationRecord {
        iteration: 0,
        chi2: cost,
        damping: 0.0,
        params: params.clone(),
    }];
    let mut damping = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let (r, jac) = linearise(problem, &params);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag: Vec<f64> = (0..n).map(|j| jtj[(j, j)].max(1e-300)).collect();

        let mut accepted = None;
        while damping < 1e20 {
            let mut a = jtj.clone();
            for j in 0..n {
                a[(j, j)] += damping * diag[j];
            }
            let step = a.lu().solve(&grad);
            if let Some(step) = step {
                let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, s)| p + s).collect();
                if problem.feasible(&trial) {
                    let trial_cost = chi2(problem, &trial);
                    if trial_cost.is_finite() && trial_cost <= cost {
                        accepted = Some((trial, trial_cost, step));
                        break;
                    }
                }
            }
            damping *= 4.0;
        }

        let Some((trial, trial_cost, step)) = accepted else {
            // No downhill step at any damping: already at the minimum.
            converged = true;
            break;
        };
        let rel = step
            .iter()
            .zip(&params)
            .enumerate()
            .map(|(j, (s, p))| s.abs() / p.abs().max(problem.scale(j, &params) * 1e-6))
            .fold(0.0f64, f64::max);
        params = trial;
        cost = trial_cost;
        damping = (damping / 3.0).max(1e-12);
        trace.push(IterationRecord {
            iteration: iterations,
            chi2: cost,
            damping,
            params: params.clone(),
        });
        if rel < opts.xtol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::NonConvergence { trace });
    }

    let (_, jac) = linearise(problem, &params);
    let jtj = jac.transpose() * &jac;
    let covariance = jtj.try_inverse().filter(|c| {
        (0..n).all(|j| c[(j, j)].is_finite() && c[(j, j)] >= 0.0)
    });
    Ok(LmSolution {
        params,
        chi2: cost,
        covariance,
        iterations,
        trace,
    })
}
