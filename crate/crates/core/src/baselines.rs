//! Comparison methods built on the shared lasso fit: the plug-in estimate and
//! refitting on the selected support.
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{case_label_test, case_probability, confidence_interval};
use crate::lasso::{fit_logistic_mle, MleFit};
use crate::numerics::dot;
use crate::types::{Dataset, FittedModel, InferenceResult, Loading, Method};

/// Coefficients below this magnitude count as unselected.
pub const SUPPORT_THRESHOLD: f64 = 1e-10;

/// `h(x*ᵀβ̂)` with no uncertainty quantification.
pub fn plugin_lasso_inference(model: &FittedModel, x_star: &Loading, alpha: f64, threshold: f64) -> Result<InferenceResult> {
    x_star.check_dim(model.beta_hat.len())?;
    let estimate = dot(x_star.values(), &model.beta_hat);
    Ok(InferenceResult {
        method: Method::PluginLasso,
        linear_estimate: estimate,
        variance: None,
        case_probability: case_probability(estimate),
        ci_lower: None,
        ci_upper: None,
        alpha,
        threshold,
        reject_null: None,
        p_value: None,
        certificate: None,
        separation_detected: false,
        clamped_weights: 0,
        warnings: Vec::new(),
    })
}

/// Support of a fit plus the unpenalized refit on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    /// Sorted column indices; column 0 is included when it is the intercept.
    pub support: Vec<usize>,
    /// `None` when the refit is undefined (`|S| ≥ n` or a singular Hessian).
    pub mle: Option<MleFit>,
}

pub fn select_support(data: &Dataset, beta_hat: &[f64]) -> Vec<usize> {
    (0..beta_hat.len())
        .filter(|&j| (j == 0 && data.has_intercept_column()) || beta_hat[j].abs() >= SUPPORT_THRESHOLD)
        .collect()
}

pub fn refit_selected(data: &Dataset, model: &FittedModel) -> Result<SelectedModel> {
    let support = select_support(data, &model.beta_hat);
    if support.is_empty() || support.len() >= data.n() {
        return Ok(SelectedModel { support, mle: None });
    }
    let mle = match fit_logistic_mle(&data.select_columns(&support)) {
        Ok(fit) => Some(fit),
        Err(Error::SingularHessian) => None,
        Err(e) => return Err(e),
    };
    Ok(SelectedModel { support, mle })
}

/// Post-selection inference: classical MLE standard errors on the lasso's
/// support, ignoring the selection step.
pub fn post_selection_inference(
    data: &Dataset,
    model: &FittedModel,
    x_star: &Loading,
    alpha: f64,
    threshold: f64,
) -> Result<InferenceResult> {
    x_star.check_dim(data.p())?;
    let selected = refit_selected(data, model)?;
    let xs: Vec<f64> = selected.support.iter().map(|&j| x_star.values()[j]).collect();
    let mut result = InferenceResult {
        method: Method::PostSelection,
        linear_estimate: 0.0,
        variance: None,
        case_probability: 0.5,
        ci_lower: Some(0.0),
        ci_upper: Some(1.0),
        alpha,
        threshold,
        reject_null: Some(false),
        p_value: None,
        certificate: None,
        separation_detected: false,
        clamped_weights: 0,
        warnings: Vec::new(),
    };
    let Some(mle) = selected.mle else {
        // degenerate refit: report the lasso value on the support and the
        // trivial interval
        let estimate: f64 = selected.support.iter().map(|&j| x_star.values()[j] * model.beta_hat[j]).sum();
        result.linear_estimate = estimate;
        result.case_probability = case_probability(estimate);
        result.separation_detected = true;
        result.warnings.push(format!(
            "refit on {} selected columns is degenerate (n = {})",
            selected.support.len(),
            data.n()
        ));
        return Ok(result);
    };
    let estimate = dot(&xs, &mle.coefficients);
    let variance = dot(&xs, &mle.covariance.mul_vec(&xs)).max(0.0);
    let (lo, hi) = confidence_interval(estimate, variance, alpha)?;
    result.linear_estimate = estimate;
    result.case_probability = case_probability(estimate);
    result.variance = Some(variance);
    result.ci_lower = Some(lo);
    result.ci_upper = Some(hi);
    result.separation_detected = mle.separation_detected;
    if mle.separation_detected {
        result.warnings.push("separation detected in the refit".into());
    }
    match case_label_test(estimate, variance, alpha, threshold) {
        Ok(t) => {
            result.reject_null = Some(t.reject);
            result.p_value = Some(t.p_value);
        }
        Err(Error::ZeroVariance) => {
            result.reject_null = None;
            result.warnings.push("zero variance: labelling test skipped".into());
        }
        Err(e) => return Err(e),
    }
    Ok(result)
}
