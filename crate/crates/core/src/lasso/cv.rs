use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{lambda_max, logistic_loss, penalty_factors, LassoOptions, LassoSolver};
use crate::error::{Error, Result};
use crate::numerics::{dot, RngStream};
use crate::types::{Dataset, FittedModel};

/// Which grid point cross-validation hands back.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    Min,
    OneSe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub n_folds: usize,
    pub grid_size: usize,
    /// Smallest grid value as a fraction of λ_max.
    pub epsilon: f64,
    pub rule: LambdaRule,
    pub penalize_intercept: bool,
    pub lasso: LassoOptions,
    /// A path stops once the training deviance explained reaches this.
    pub max_deviance_ratio: f64,
    /// KKT tolerance for the path fits that only score held-out deviance.
    /// The refit at the selected λ uses `lasso.tol`.
    pub path_tol: f64,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            n_folds: 10,
            grid_size: 50,
            epsilon: 0.01,
            rule: LambdaRule::Min,
            penalize_intercept: false,
            lasso: LassoOptions::default(),
            max_deviance_ratio: 0.999,
            path_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Strictly decreasing; only the prefix fit on every fold is kept.
    pub lambda_grid: Vec<f64>,
    pub cv_deviance: Vec<f64>,
    pub cv_se: Vec<f64>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub index_min: usize,
    pub index_1se: usize,
    /// Length of the untruncated grid.
    pub full_grid_size: usize,
}

impl CvResult {
    pub fn selected(&self, rule: LambdaRule) -> (usize, f64) {
        match rule {
            LambdaRule::Min => (self.index_min, self.lambda_min),
            LambdaRule::OneSe => (self.index_1se, self.lambda_1se),
        }
    }
}

/// Geometric grid from `lmax` down to `epsilon · lmax`.
pub fn lambda_grid(lmax: f64, size: usize, epsilon: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lmax];
    }
    let ratio = epsilon.ln() / (size - 1) as f64;
    (0..size)
        .map(|k| match k {
            0 => lmax,
            k if k == size - 1 => lmax * epsilon,
            k => lmax * (ratio * k as f64).exp(),
        })
        .collect()
}

/// Walks the grid with warm starts. Returns the coefficients at each grid
/// point reached; the walk stops early once the deviance ratio saturates.
fn fit_path(data: &Dataset, grid: &[f64], opts: &CvOptions, stop_at: Option<usize>) -> Vec<Vec<f64>> {
    let tol = opts.path_tol.max(opts.lasso.tol);
    let pf = penalty_factors(data, opts.penalize_intercept, opts.lasso.standardize);
    let mut solver = LassoSolver::new(data, pf);
    let null_nll = solver.nll();
    let mut path = Vec::with_capacity(grid.len());
    let last = stop_at.unwrap_or(grid.len() - 1);
    for (k, &lambda) in grid.iter().enumerate().take(last + 1) {
        let prev = if k == 0 { lambda } else { grid[k - 1] };
        let stats = solver.solve(lambda, prev, opts.lasso.max_iter, tol);
        if !stats.converged {
            log::debug!("path fit at lambda {lambda:.4e} not converged (kkt {:.2e})", stats.kkt);
        }
        path.push(solver.beta().to_vec());
        let ratio = 1.0 - solver.nll() / null_nll;
        if stop_at.is_none() && ratio >= opts.max_deviance_ratio {
            break;
        }
    }
    path
}

fn fold_assignment(n: usize, n_folds: usize, stream: &RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream.rng());
    let mut fold = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        fold[i] = k % n_folds;
    }
    fold
}

/// K-fold cross-validation of λ over a geometric grid, scored by held-out
/// mean negative log-likelihood.
pub fn cross_validate_lambda(data: &Dataset, opts: &CvOptions, stream: &RngStream) -> Result<CvResult> {
    let n = data.n();
    if opts.n_folds < 2 || n < opts.n_folds {
        return Err(Error::Domain(format!(
            "cross-validation needs 2 <= folds <= n, got {} folds for n = {n}",
            opts.n_folds
        )));
    }
    if opts.grid_size < 1 || !(opts.epsilon > 0.0 && opts.epsilon < 1.0) {
        return Err(Error::Domain("lambda grid needs size >= 1 and epsilon in (0, 1)".into()));
    }
    let lmax = lambda_max(data, opts.penalize_intercept, opts.lasso.standardize);
    if !(lmax > 0.0) {
        return Err(Error::Domain("lambda_max is zero: outcomes carry no signal".into()));
    }
    let grid = lambda_grid(lmax, opts.grid_size, opts.epsilon);
    let fold = fold_assignment(n, opts.n_folds, stream);

    let mut fold_means: Vec<Vec<f64>> = Vec::with_capacity(opts.n_folds);
    let mut fold_sizes = Vec::with_capacity(opts.n_folds);
    for k in 0..opts.n_folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| fold[i] == k).collect();
        let path = fit_path(&data.select_rows(&train), &grid, opts, None);
        let means = path
            .iter()
            .map(|beta| {
                test.iter()
                    .map(|&i| logistic_loss(dot(data.x().row(i), beta), data.y()[i]))
                    .sum::<f64>()
                    / test.len() as f64
            })
            .collect();
        fold_means.push(means);
        fold_sizes.push(test.len() as f64);
    }
    let len = fold_means.iter().map(Vec::len).min().unwrap_or(0).max(1);
    let total: f64 = fold_sizes.iter().sum();
    let mut cv_deviance = Vec::with_capacity(len);
    let mut cv_se = Vec::with_capacity(len);
    for l in 0..len {
        let mean = fold_means.iter().zip(&fold_sizes).map(|(m, w)| w * m[l]).sum::<f64>() / total;
        let var = fold_means
            .iter()
            .zip(&fold_sizes)
            .map(|(m, w)| w * (m[l] - mean).powi(2))
            .sum::<f64>()
            / total
            / (opts.n_folds - 1) as f64;
        cv_deviance.push(mean);
        cv_se.push(var.sqrt());
    }
    let index_min = cv_deviance
        .iter()
        .enumerate()
        .fold(0, |best, (l, &v)| if v < cv_deviance[best] { l } else { best });
    let cutoff = cv_deviance[index_min] + cv_se[index_min];
    // grid is decreasing, so the first point under the cutoff is the largest λ
    let index_1se = cv_deviance.iter().position(|&v| v <= cutoff).unwrap_or(index_min);
    let lambda_grid = grid[..len].to_vec();
    Ok(CvResult {
        lambda_min: lambda_grid[index_min],
        lambda_1se: lambda_grid[index_1se],
        index_min,
        index_1se,
        lambda_grid,
        cv_deviance,
        cv_se,
        full_grid_size: grid.len(),
    })
}

/// Cross-validates λ and refits on the full data at the selected grid point,
/// warm-starting down the grid.
pub fn fit_cross_validated(data: &Dataset, opts: &CvOptions, stream: &RngStream) -> Result<(CvResult, FittedModel)> {
    let cv = cross_validate_lambda(data, opts, stream)?;
    let (index, lambda) = cv.selected(opts.rule);
    let path = fit_path(data, &cv.lambda_grid, opts, Some(index));
    let warm = path.last().cloned();
    // final polish at the selected λ so the returned model carries its own
    // convergence diagnostics
    let lasso = LassoOptions {
        warm_start: warm,
        ..opts.lasso.clone()
    };
    let model = super::fit_logistic_lasso(data, lambda, opts.penalize_intercept, &lasso)?;
    Ok((cv, model))
}
