use serde::{Deserialize, Serialize};

use super::{logistic_loss, sigmoid};
use crate::error::{Error, Result};
use crate::numerics::{cholesky, dot, LowerTriangular, Matrix};
use crate::types::Dataset;

/// Linear predictors beyond this magnitude are treated as separation.
pub const SEPARATION_ETA: f64 = 30.0;

const MAX_NEWTON: usize = 100;
const GRAD_TOL: f64 = 1e-10;

/// Unpenalized logistic MLE on a low-dimensional design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleFit {
    pub coefficients: Vec<f64>,
    /// `(Xᵀ W X)⁻¹` at the final iterate.
    pub covariance: Matrix,
    pub converged: bool,
    pub separation_detected: bool,
    pub iterations: usize,
}

fn information(x: &Matrix, eta: &[f64]) -> Matrix {
    let k = x.cols();
    let mut h = Matrix::zeros(k, k);
    for (i, &e) in eta.iter().enumerate() {
        let p = sigmoid(e);
        let w = p * (1.0 - p);
        let row = x.row(i);
        for a in 0..k {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..=a {
                h[(a, b)] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h
}

fn total_loss(x: &Matrix, y: &[f64], beta: &[f64]) -> f64 {
    (0..x.rows()).map(|i| logistic_loss(dot(x.row(i), beta), y[i])).sum()
}

/// Newton–Raphson with step halving.
///
/// Separation is flagged when some `|X_iᵀb|` exceeds [`SEPARATION_ETA`] or
/// the information matrix turns numerically singular before the gradient
/// vanishes; the fit then stops at the last iterate.
pub fn fit_logistic_mle(data: &Dataset) -> Result<MleFit> {
    let (n, k) = (data.n(), data.p());
    if k >= n {
        return Err(Error::Domain(format!("MLE needs fewer columns than rows ({k} >= {n})")));
    }
    let x = data.x();
    let y = data.y();
    let mut beta = vec![0.0; k];
    if data.has_intercept_column() {
        let ybar = data.mean_outcome().clamp(1e-10, 1.0 - 1e-10);
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut eta = x.mul_vec(&beta);
    let mut loss = total_loss(x, y, &beta);
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;
    let mut last_factor: Option<LowerTriangular> = None;

    for it in 0..MAX_NEWTON {
        iterations = it;
        if eta.iter().any(|e| e.abs() > SEPARATION_ETA) {
            separation = true;
            break;
        }
        let mut grad = vec![0.0; k];
        for i in 0..n {
            let r = y[i] - sigmoid(eta[i]);
            for (g, xij) in grad.iter_mut().zip(x.row(i)) {
                *g += r * xij;
            }
        }
        let factor = match cholesky(&information(x, &eta)) {
            Ok(f) => f,
            Err(_) => {
                separation = true;
                last_factor = None;
                break;
            }
        };
        if grad.iter().fold(0.0f64, |m, g| m.max(g.abs())) / n as f64 <= GRAD_TOL {
            converged = true;
            last_factor = Some(factor);
            break;
        }
        let step = factor.solve(&grad);
        last_factor = Some(factor);
        let mut t = 1.0;
        let mut accepted = false;
        while t > 1e-12 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let trial_loss = total_loss(x, y, &trial);
            if trial_loss <= loss + 1e-12 * loss.abs().max(1.0) {
                beta = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        eta = x.mul_vec(&beta);
        if !accepted {
            // stalled at machine precision
            converged = true;
            break;
        }
    }

    let factor = match last_factor {
        Some(f) if !separation => cholesky(&information(x, &eta)).unwrap_or(f),
        _ => cholesky(&information(x, &eta)).map_err(|_| Error::SingularHessian)?,
    };
    Ok(MleFit {
        coefficients: beta,
        covariance: factor.inverse(),
        converged,
        separation_detected: separation,
        iterations,
    })
}
