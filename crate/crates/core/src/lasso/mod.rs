//! ℓ₁-penalized logistic regression.
//!
//! The objective is the (1/n)-scaled negative log-likelihood plus
//! `λ Σ_j pf_j |β_j|`, where the penalty factor `pf_j` is zero for an
//! unpenalized intercept and otherwise 1 (or the column's standard deviation
//! when standardization is requested, which is the same problem as fitting
//! on unit-variance columns and back-transforming).
//!
//! Each outer iteration forms the IRLS quadratic surrogate at the current
//! coefficients and minimizes it by cyclic coordinate descent over a working
//! set; a backtracking step on the true objective keeps the sequence of outer
//! iterates monotone. Convergence is declared on the KKT residual of the
//! original problem, never on the surrogate.

mod cv;
mod mle;

pub use cv::{cross_validate_lambda, fit_cross_validated, lambda_grid, CvOptions, CvResult, LambdaRule};
pub use mle::{fit_logistic_mle, MleFit};

use crate::error::{Error, Result};
use crate::numerics::dot;
use crate::types::{Dataset, FittedModel};

/// Lower clamp for the IRLS weights `h(η)(1 − h(η))`.
pub const IRLS_WEIGHT_FLOOR: f64 = 1e-5;

const MAX_OUTER: usize = 200;

/// Numerically stable logistic function `exp(z) / (1 + exp(z))`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(z))` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Per-observation loss `log(1 + exp(η)) − y η`.
pub fn logistic_loss(eta: f64, y: f64) -> f64 {
    softplus(eta) - y * eta
}

/// `(1/n) Σ_i [log(1 + exp(X_iᵀβ)) − y_i X_iᵀβ]`.
pub fn neg_log_likelihood(beta: &[f64], data: &Dataset) -> f64 {
    let x = data.x();
    let n = data.n();
    (0..n)
        .map(|i| logistic_loss(dot(x.row(i), beta), data.y()[i]))
        .sum::<f64>()
        / n as f64
}

/// Gradient of [`neg_log_likelihood`]: `(1/n) Σ_i X_i (h(X_iᵀβ) − y_i)`.
pub fn nll_gradient(beta: &[f64], data: &Dataset) -> Vec<f64> {
    let x = data.x();
    let n = data.n();
    let mut g = vec![0.0; data.p()];
    for i in 0..n {
        let row = x.row(i);
        let r = sigmoid(dot(row, beta)) - data.y()[i];
        for (gj, xij) in g.iter_mut().zip(row) {
            *gj += r * xij;
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoOptions {
    /// Budget of single-coordinate updates for one fit.
    pub max_iter: usize,
    /// Tolerance on the KKT residual.
    pub tol: f64,
    pub warm_start: Option<Vec<f64>>,
    /// Penalize columns proportionally to their standard deviation.
    pub standardize: bool,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tol: 1e-7,
            warm_start: None,
            standardize: false,
        }
    }
}

/// Penalty factor per column.
pub fn penalty_factors(data: &Dataset, penalize_intercept: bool, standardize: bool) -> Vec<f64> {
    let x = data.x();
    let n = data.n() as f64;
    (0..data.p())
        .map(|j| {
            if j == 0 && data.has_intercept_column() && !penalize_intercept {
                return 0.0;
            }
            if !standardize {
                return 1.0;
            }
            let (mut s, mut ss) = (0.0, 0.0);
            for i in 0..data.n() {
                s += x[(i, j)];
                ss += x[(i, j)] * x[(i, j)];
            }
            let var = (ss / n - (s / n) * (s / n)).max(0.0);
            // constant columns keep unit weight
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// Largest KKT violation of the penalized problem at `beta`, given the
/// gradient of the smooth part.
pub fn kkt_residual(beta: &[f64], grad: &[f64], lambda: f64, pf: &[f64]) -> f64 {
    beta.iter()
        .zip(grad)
        .zip(pf)
        .map(|((&b, &g), &w)| coordinate_kkt(b, g, lambda * w))
        .fold(0.0, f64::max)
}

fn coordinate_kkt(beta: f64, grad: f64, penalty: f64) -> f64 {
    if penalty == 0.0 {
        grad.abs()
    } else if beta == 0.0 {
        (grad.abs() - penalty).max(0.0)
    } else {
        (grad + penalty * beta.signum()).abs()
    }
}

/// `Σ wᵢ xᵢ rᵢ` with four partial sums.
fn weighted_dot(w: &[f64], x: &[f64], r: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (w4, x4, r4) = (w.chunks_exact(4), x.chunks_exact(4), r.chunks_exact(4));
    let tail: f64 = w4
        .remainder()
        .iter()
        .zip(x4.remainder())
        .zip(r4.remainder())
        .map(|((w, x), r)| w * x * r)
        .sum();
    for ((w, x), r) in w4.zip(x4).zip(r4) {
        for k in 0..4 {
            acc[k] += w[k] * x[k] * r[k];
        }
    }
    acc[0] + acc[1] + acc[2] + acc[3] + tail
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Reusable coordinate-descent state for one dataset: column-major design,
/// current coefficients and linear predictor.
pub(crate) struct LassoSolver<'a> {
    data: &'a Dataset,
    cols: Vec<f64>,
    n: usize,
    p: usize,
    pf: Vec<f64>,
    beta: Vec<f64>,
    eta: Vec<f64>,
    // scratch
    prob: Vec<f64>,
    weight: Vec<f64>,
    resid: Vec<f64>,
    pub(crate) trace: Option<Vec<f64>>,
}

pub(crate) struct SolveStats {
    pub converged: bool,
    pub updates: usize,
    pub kkt: f64,
    pub objective: f64,
}

impl<'a> LassoSolver<'a> {
    pub(crate) fn new(data: &'a Dataset, pf: Vec<f64>) -> Self {
        let (n, p) = (data.n(), data.p());
        let mut solver = Self {
            data,
            cols: data.x().to_column_major(),
            n,
            p,
            pf,
            beta: vec![0.0; p],
            eta: vec![0.0; n],
            prob: vec![0.0; n],
            weight: vec![0.0; n],
            resid: vec![0.0; n],
            trace: None,
        };
        solver.reset_to_null_model();
        solver
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    /// Intercept at `logit(ȳ)` (if unpenalized), everything else zero.
    pub(crate) fn reset_to_null_model(&mut self) {
        self.beta.iter_mut().for_each(|b| *b = 0.0);
        if self.has_free_intercept() {
            let ybar = self.data.mean_outcome().clamp(1e-5, 1.0 - 1e-5);
            self.beta[0] = logit(ybar);
        }
        self.refresh_eta();
    }

    fn has_free_intercept(&self) -> bool {
        self.data.has_intercept_column() && self.pf[0] == 0.0
    }

    pub(crate) fn set_beta(&mut self, beta: &[f64]) {
        self.beta.copy_from_slice(beta);
        self.refresh_eta();
    }

    pub(crate) fn beta(&self) -> &[f64] {
        &self.beta
    }

    fn refresh_eta(&mut self) {
        self.eta.iter_mut().for_each(|e| *e = 0.0);
        for j in 0..self.p {
            let b = self.beta[j];
            if b != 0.0 {
                let (cols, n) = (&self.cols, self.n);
                for (e, x) in self.eta.iter_mut().zip(&cols[j * n..(j + 1) * n]) {
                    *e += b * x;
                }
            }
        }
    }

    pub(crate) fn nll(&self) -> f64 {
        let y = self.data.y();
        self.eta
            .iter()
            .zip(y)
            .map(|(&e, &yi)| logistic_loss(e, yi))
            .sum::<f64>()
            / self.n as f64
    }

    fn objective(&self, lambda: f64) -> f64 {
        self.nll() + lambda * self.penalty()
    }

    fn penalty(&self) -> f64 {
        self.beta.iter().zip(&self.pf).map(|(b, w)| w * b.abs()).sum()
    }

    fn refresh_prob(&mut self) {
        for (p, &e) in self.prob.iter_mut().zip(&self.eta) {
            *p = sigmoid(e);
        }
    }

    /// Smooth-part gradient for coordinate `j`; `prob` must be current.
    fn grad_j(&self, j: usize) -> f64 {
        let col = self.col(j);
        let mut acc = [0.0; 4];
        let (c4, p4, y4) = (col.chunks_exact(4), self.prob.chunks_exact(4), self.data.y().chunks_exact(4));
        let tail: f64 = c4
            .remainder()
            .iter()
            .zip(p4.remainder())
            .zip(y4.remainder())
            .map(|((x, p), y)| x * (p - y))
            .sum();
        for ((x, p), y) in c4.zip(p4).zip(y4) {
            for k in 0..4 {
                acc[k] += x[k] * (p[k] - y[k]);
            }
        }
        (acc[0] + acc[1] + acc[2] + acc[3] + tail) / self.n as f64
    }

    pub(crate) fn gradient(&mut self) -> Vec<f64> {
        self.refresh_prob();
        (0..self.p).map(|j| self.grad_j(j)).collect()
    }

    /// Minimizes the penalized objective at `lambda`, starting from the
    /// current state. `lambda_prev` (≥ lambda) seeds the sequential strong
    /// rule for the initial working set.
    pub(crate) fn solve(&mut self, lambda: f64, lambda_prev: f64, max_updates: usize, tol: f64) -> SolveStats {
        let grad = self.gradient();
        let screen = (2.0 * lambda - lambda_prev).max(0.0);
        let mut in_set: Vec<bool> = (0..self.p)
            .map(|j| self.beta[j] != 0.0 || self.pf[j] == 0.0 || grad[j].abs() >= self.pf[j] * screen)
            .collect();
        let mut updates = 0usize;
        let mut obj = self.objective(lambda);
        if let Some(t) = self.trace.as_mut() {
            t.push(obj);
        }
        loop {
            let working: Vec<usize> = (0..self.p).filter(|&j| in_set[j]).collect();
            let ok = self.solve_working_set(&working, lambda, max_updates, tol, &mut updates, &mut obj);
            let grad = self.gradient();
            let mut added = false;
            for j in 0..self.p {
                if !in_set[j] && grad[j].abs() > lambda * self.pf[j] + tol {
                    in_set[j] = true;
                    added = true;
                }
            }
            if !added || !ok {
                let kkt = kkt_residual(&self.beta, &grad, lambda, &self.pf);
                return SolveStats {
                    converged: ok && kkt <= tol,
                    updates,
                    kkt,
                    objective: obj,
                };
            }
        }
    }

    /// IRLS + coordinate descent restricted to `working`. Returns false when
    /// the update budget ran out.
    fn solve_working_set(
        &mut self,
        working: &[usize],
        lambda: f64,
        max_updates: usize,
        tol: f64,
        updates: &mut usize,
        obj: &mut f64,
    ) -> bool {
        let n = self.n as f64;
        let y = self.data.y();
        let mut curvature = vec![0.0; self.p];
        let mut old_beta = self.beta.clone();
        for _ in 0..MAX_OUTER {
            self.refresh_prob();
            let restricted_kkt = working
                .iter()
                .map(|&j| coordinate_kkt(self.beta[j], self.grad_j(j), lambda * self.pf[j]))
                .fold(0.0, f64::max);
            if restricted_kkt <= tol {
                return true;
            }
            for i in 0..self.n {
                let p = self.prob[i];
                let w = (p * (1.0 - p)).max(IRLS_WEIGHT_FLOOR);
                self.weight[i] = w;
                self.resid[i] = (y[i] - p) / w;
            }
            for &j in working {
                let col = &self.cols[j * self.n..(j + 1) * self.n];
                curvature[j] = col.iter().zip(&self.weight).map(|(x, w)| w * x * x).sum::<f64>() / n;
            }
            old_beta.copy_from_slice(&self.beta);

            // Coordinate descent on the surrogate: sweep the working set, then
            // iterate on its nonzero part until stable, then confirm with a
            // full sweep.
            let inner_tol = 0.5 * tol;
            let mut active_only = false;
            loop {
                let mut max_change = 0.0f64;
                for &j in working {
                    if active_only && self.beta[j] == 0.0 && self.pf[j] != 0.0 {
                        continue;
                    }
                    let a = curvature[j];
                    if a <= 0.0 {
                        continue;
                    }
                    let col = &self.cols[j * self.n..(j + 1) * self.n];
                    let g = weighted_dot(&self.weight, col, &self.resid) / n;
                    let bj = self.beta[j];
                    let new = soft_threshold(a * bj + g, lambda * self.pf[j]) / a;
                    let delta = new - bj;
                    *updates += 1;
                    if delta != 0.0 {
                        self.beta[j] = new;
                        for ((r, e), x) in self.resid.iter_mut().zip(self.eta.iter_mut()).zip(col) {
                            *r -= delta * x;
                            *e += delta * x;
                        }
                        max_change = max_change.max((a * delta).abs());
                    }
                }
                if *updates > max_updates {
                    return false;
                }
                if max_change <= inner_tol {
                    if active_only {
                        active_only = false;
                    } else {
                        break;
                    }
                } else {
                    active_only = true;
                }
            }

            // Backtrack toward the previous iterate until the true objective
            // does not increase.
            let mut new_obj = self.objective(lambda);
            let mut step = 1.0;
            let target = self.beta.clone();
            while new_obj > *obj + 1e-13 * obj.abs().max(1.0) && step > 1e-10 {
                step *= 0.5;
                for j in 0..self.p {
                    self.beta[j] = old_beta[j] + step * (target[j] - old_beta[j]);
                }
                self.refresh_eta();
                new_obj = self.objective(lambda);
            }
            if new_obj > *obj {
                // no descent possible along this direction
                self.set_beta(&old_beta);
                return true;
            }
            *obj = new_obj;
            if let Some(t) = self.trace.as_mut() {
                t.push(new_obj);
            }
        }
        true
    }

    pub(crate) fn to_model(&self, lambda: f64, stats: &SolveStats) -> FittedModel {
        FittedModel {
            beta_hat: self.beta.clone(),
            lambda,
            objective_value: stats.objective,
            iterations: stats.updates,
            converged: stats.converged,
            kkt_residual: stats.kkt,
        }
    }
}

/// Fits the penalized logistic MLE at a single `lambda`.
///
/// A run that exhausts `opts.max_iter` still returns its last iterate, with
/// `converged == false`.
pub fn fit_logistic_lasso(
    data: &Dataset,
    lambda: f64,
    penalize_intercept: bool,
    opts: &LassoOptions,
) -> Result<FittedModel> {
    fit_traced(data, lambda, penalize_intercept, opts, false).map(|(m, _)| m)
}

pub(crate) fn fit_traced(
    data: &Dataset,
    lambda: f64,
    penalize_intercept: bool,
    opts: &LassoOptions,
    trace: bool,
) -> Result<(FittedModel, Vec<f64>)> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let pf = penalty_factors(data, penalize_intercept, opts.standardize);
    let mut solver = LassoSolver::new(data, pf);
    if let Some(w) = &opts.warm_start {
        if w.len() != data.p() {
            return Err(Error::DimensionMismatch {
                what: "warm start length",
                expected: data.p(),
                found: w.len(),
            });
        }
        solver.set_beta(w);
    }
    if trace {
        solver.trace = Some(Vec::new());
    }
    let stats = solver.solve(lambda, lambda, opts.max_iter, opts.tol);
    let model = solver.to_model(lambda, &stats);
    if !model.converged {
        log::warn!(
            "lasso fit at lambda {lambda:.4e} stopped after {} updates (kkt {:.2e})",
            stats.updates,
            stats.kkt
        );
    }
    Ok((model, solver.trace.take().unwrap_or_default()))
}

/// Smallest λ at which every penalized coefficient is zero.
pub fn lambda_max(data: &Dataset, penalize_intercept: bool, standardize: bool) -> f64 {
    let pf = penalty_factors(data, penalize_intercept, standardize);
    let mut solver = LassoSolver::new(data, pf.clone());
    solver.reset_to_null_model();
    let grad = solver.gradient();
    grad.iter()
        .zip(&pf)
        .filter(|(_, &w)| w > 0.0)
        .map(|(g, w)| g.abs() / w)
        .fold(0.0, f64::max)
}
