//! Bias-corrected inference for a case probability.
//!
//! A single lasso fit, Gram matrix and weight vector serve every loading;
//! each loading then needs its own projection direction.
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::lasso::{fit_cross_validated, fit_logistic_lasso, logit, sigmoid, CvOptions, CvResult};
use crate::numerics::{dot, std_normal_cdf, upper_quantile, RngStream};
use crate::projection::{projection_direction, sample_gram, Gram, ProjectionDirection, ProjectionOptions};
use crate::types::{Dataset, FittedModel, InferenceResult, Loading, Method};

/// Default lower clamp on the linearization weights.
pub const WEIGHT_FLOOR: f64 = 1e-4;
/// Stream index used for the cross-validation fold shuffle.
pub const CV_STREAM: u64 = 0;

/// `wᵢ = h(Xᵢᵀβ̂)(1 − h(Xᵢᵀβ̂))`, clamped below at `floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    w: Vec<f64>,
    floor: f64,
    clamped: usize,
}

impl Weights {
    pub fn new(data: &Dataset, beta_hat: &[f64], floor: f64) -> Result<Self> {
        if !(floor >= 0.0 && floor <= 0.25) {
            return Err(Error::Domain(format!("weight floor must lie in [0, 0.25], got {floor}")));
        }
        if beta_hat.len() != data.p() {
            return Err(Error::DimensionMismatch {
                what: "coefficients vs dataset columns",
                expected: data.p(),
                found: beta_hat.len(),
            });
        }
        let mut clamped = 0;
        let w = data
            .x()
            .mul_vec(beta_hat)
            .into_iter()
            .map(|eta| {
                let h = sigmoid(eta);
                let w = h * (1.0 - h);
                if w < floor {
                    clamped += 1;
                    floor
                } else {
                    w
                }
            })
            .collect();
        Ok(Self { w, floor, clamped })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Number of weights raised to the floor.
    pub fn clamped(&self) -> usize {
        self.clamped
    }
}

/// `x*ᵀβ̂ + ûᵀ (1/n) Σᵢ wᵢ⁻¹ Xᵢ (yᵢ − h(Xᵢᵀβ̂))`.
pub fn live_linear_estimate(data: &Dataset, beta_hat: &[f64], weights: &Weights, u_hat: &[f64], x_star: &Loading) -> f64 {
    let x = data.x();
    let n = data.n();
    let mut correction = 0.0;
    for i in 0..n {
        let row = x.row(i);
        let resid = data.y()[i] - sigmoid(dot(row, beta_hat));
        correction += dot(row, u_hat) * resid / weights.w[i];
    }
    dot(x_star.values(), beta_hat) + correction / n as f64
}

/// `(1/n²) Σᵢ wᵢ⁻¹ (ûᵀXᵢ)²`.
pub fn live_variance(data: &Dataset, weights: &Weights, u_hat: &[f64]) -> f64 {
    let x = data.x();
    let n = data.n() as f64;
    let total: f64 = (0..data.n())
        .map(|i| {
            let s = dot(x.row(i), u_hat);
            s * s / weights.w[i]
        })
        .sum();
    total / (n * n)
}

pub fn case_probability(linear_estimate: f64) -> f64 {
    sigmoid(linear_estimate)
}

/// Two-sided interval on the linear scale, mapped through the sigmoid.
pub fn confidence_interval(linear_estimate: f64, variance: f64, alpha: f64) -> Result<(f64, f64)> {
    if !(variance >= 0.0) {
        return Err(Error::Domain(format!("variance must be nonnegative, got {variance}")));
    }
    let half = upper_quantile(alpha / 2.0)? * variance.sqrt();
    Ok((sigmoid(linear_estimate - half), sigmoid(linear_estimate + half)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelTest {
    pub reject: bool,
    /// One-sided: large values of the estimate count against the null.
    pub p_value: f64,
}

/// Tests `h(x*ᵀβ) < c*` against `h(x*ᵀβ) ≥ c*` at level `alpha`.
pub fn case_label_test(linear_estimate: f64, variance: f64, alpha: f64, threshold: f64) -> Result<LabelTest> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Domain(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if !(variance >= 0.0) {
        return Err(Error::Domain(format!("variance must be nonnegative, got {variance}")));
    }
    if variance == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let z_alpha = upper_quantile(alpha)?;
    let sd = variance.sqrt();
    let cut = logit(threshold);
    let reject = linear_estimate - z_alpha * sd >= cut;
    let p_value = std_normal_cdf(-(linear_estimate - cut) / sd)?;
    Ok(LabelTest { reject, p_value })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOptions {
    pub cv: CvOptions,
    /// Fit at this λ instead of cross-validating.
    pub lambda: Option<f64>,
    pub projection: ProjectionOptions,
    pub weight_floor: f64,
    /// Seeds the cross-validation folds in [`infer`] and [`infer_batch`].
    pub seed: u64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            cv: CvOptions::default(),
            lambda: None,
            projection: ProjectionOptions::default(),
            weight_floor: WEIGHT_FLOOR,
            seed: 0,
        }
    }
}

/// The lasso fit every method shares, plus the CV curve when λ was chosen by
/// cross-validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedFit {
    pub model: FittedModel,
    pub cv: Option<CvResult>,
}

/// Lasso fit at the fixed λ of `opts`, or cross-validated with folds drawn
/// from `cv_stream`.
pub fn fit_shared(data: &Dataset, opts: &InferenceOptions, cv_stream: &RngStream) -> Result<SharedFit> {
    let fit = match opts.lambda {
        Some(lambda) => SharedFit {
            model: fit_logistic_lasso(data, lambda, opts.cv.penalize_intercept, &opts.cv.lasso)?,
            cv: None,
        },
        None => {
            let (cv, model) = fit_cross_validated(data, &opts.cv, cv_stream)?;
            SharedFit { model, cv: Some(cv) }
        }
    };
    if !fit.model.converged {
        log::warn!("lasso fit did not converge (kkt residual {:.3e})", fit.model.kkt_residual);
    }
    Ok(fit)
}

/// Everything about a dataset that is reused across loadings.
#[derive(Debug, Clone)]
pub struct LiveContext {
    pub fit: SharedFit,
    pub gram: Gram,
    pub weights: Weights,
}

impl LiveContext {
    pub fn new(data: &Dataset, fit: SharedFit, weight_floor: f64) -> Result<Self> {
        let weights = Weights::new(data, &fit.model.beta_hat, weight_floor)?;
        Ok(Self {
            gram: sample_gram(data),
            weights,
            fit,
        })
    }

    pub fn direction(&self, x_star: &Loading, opts: &ProjectionOptions) -> Result<ProjectionDirection> {
        projection_direction(&self.gram, x_star, opts)
    }

    /// Estimate, interval and test for one loading.
    pub fn infer(
        &self,
        data: &Dataset,
        x_star: &Loading,
        alpha: f64,
        threshold: f64,
        opts: &ProjectionOptions,
    ) -> Result<InferenceResult> {
        x_star.check_dim(data.p())?;
        let direction = self.direction(x_star, opts)?;
        let beta = &self.fit.model.beta_hat;
        let estimate = live_linear_estimate(data, beta, &self.weights, &direction.u_hat, x_star);
        let variance = live_variance(data, &self.weights, &direction.u_hat);
        let (lo, hi) = confidence_interval(estimate, variance, alpha)?;
        let mut warnings = Vec::new();
        if !direction.feasible {
            warnings.push(format!(
                "projection direction infeasible at lambda_n {:.4e} (linf residual {:.3e}, loading residual {:.3e})",
                direction.lambda_n, direction.linf_residual, direction.loading_residual
            ));
        }
        if self.weights.clamped() > 0 {
            warnings.push(format!("{} weights clamped at {:e}", self.weights.clamped(), self.weights.floor()));
        }
        let test = match case_label_test(estimate, variance, alpha, threshold) {
            Ok(t) => Some(t),
            Err(Error::ZeroVariance) => {
                warnings.push("zero variance: labelling test skipped".into());
                None
            }
            Err(e) => return Err(e),
        };
        Ok(InferenceResult {
            method: Method::Live,
            linear_estimate: estimate,
            variance: Some(variance),
            case_probability: case_probability(estimate),
            ci_lower: Some(lo),
            ci_upper: Some(hi),
            alpha,
            threshold,
            reject_null: test.map(|t| t.reject),
            p_value: test.map(|t| t.p_value),
            certificate: Some(direction.certificate()),
            separation_detected: false,
            clamped_weights: self.weights.clamped(),
            warnings,
        })
    }
}

/// LiVE inference for a single loading: cross-validated fit, projection
/// direction, estimate, interval and test.
pub fn infer(data: &Dataset, x_star: &Loading, alpha: f64, threshold: f64, opts: &InferenceOptions) -> Result<InferenceResult> {
    x_star.check_dim(data.p())?;
    let ctx = LiveContext::new(data, fit_shared(data, opts, &RngStream::new(opts.seed, CV_STREAM))?, opts.weight_floor)?;
    ctx.infer(data, x_star, alpha, threshold, &opts.projection)
}

/// LiVE inference for many loadings sharing one fit. Projection solves run on
/// up to `jobs` threads.
pub fn infer_batch(
    data: &Dataset,
    loadings: &[Loading],
    alpha: f64,
    threshold: f64,
    opts: &InferenceOptions,
    jobs: usize,
) -> Result<Vec<Result<InferenceResult>>> {
    for l in loadings {
        l.check_dim(data.p())?;
    }
    let ctx = LiveContext::new(data, fit_shared(data, opts, &RngStream::new(opts.seed, CV_STREAM))?, opts.weight_floor)?;
    Ok(map_indexed(loadings.len(), jobs, |k| {
        ctx.infer(data, &loadings[k], alpha, threshold, &opts.projection)
    }))
}
