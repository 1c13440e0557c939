use serde::{Deserialize, Serialize};

use super::ReplicationResult;
use crate::error::{Error, Result};
use crate::types::Method;

/// Table-row summary of one method over the replications.
///
/// Metrics a method cannot provide (coverage of the plug-in, say) are
/// `None`; replications where the method failed are left out and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Fraction of intervals containing the truth.
    pub cov: Option<f64>,
    /// Fraction of tests rejecting.
    pub err: Option<f64>,
    /// Mean interval length.
    pub len: Option<f64>,
    pub rmse: Option<f64>,
    pub bias: Option<f64>,
    /// Population standard deviation of the probability estimates.
    pub se: Option<f64>,
    pub mean_runtime: f64,
    pub replications: usize,
    pub failures: usize,
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub truth: f64,
    pub methods: Vec<MethodSummary>,
}

impl SummaryMetrics {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Cov, ERR, Len, RMSE, Bias and SE per method, in order of first
/// appearance.
pub fn aggregate(results: &[ReplicationResult], truth: f64) -> Result<SummaryMetrics> {
    if results.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty result list".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    for o in results.iter().flat_map(|r| &r.outcomes) {
        if !methods.contains(&o.method) {
            methods.push(o.method);
        }
    }
    let summaries = methods
        .into_iter()
        .map(|method| {
            let outcomes: Vec<_> = results.iter().filter_map(|r| r.outcome(method)).collect();
            let probs: Vec<f64> = outcomes.iter().filter_map(|o| o.probability).collect();
            let cis: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| o.ci()).collect();
            let tests: Vec<f64> = outcomes.iter().filter_map(|o| o.reject).map(|r| f64::from(u8::from(r))).collect();
            let covered: Vec<f64> = cis
                .iter()
                .map(|&(lo, hi)| f64::from(u8::from(lo <= truth && truth <= hi)))
                .collect();
            let lengths: Vec<f64> = cis.iter().map(|&(lo, hi)| hi - lo).collect();
            let bias = mean(&probs).map(|m| m - truth);
            let se = mean(&probs).map(|m| (probs.iter().map(|p| (p - m).powi(2)).sum::<f64>() / probs.len() as f64).sqrt());
            let runtimes: Vec<f64> = outcomes.iter().map(|o| o.runtime_seconds).collect();
            MethodSummary {
                method,
                cov: mean(&covered),
                err: mean(&tests),
                len: mean(&lengths),
                rmse: bias.zip(se).map(|(b, s)| (b * b + s * s).sqrt()),
                bias,
                se,
                mean_runtime: mean(&runtimes).unwrap_or(0.0),
                replications: outcomes.len(),
                failures: outcomes.iter().filter(|o| o.error.is_some()).count(),
                infeasible: outcomes.iter().filter(|o| o.feasible == Some(false)).count(),
            }
        })
        .collect();
    Ok(SummaryMetrics {
        truth,
        methods: summaries,
    })
}
