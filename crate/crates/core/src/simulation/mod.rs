//! Monte-Carlo harness: AR(1)-type Gaussian designs, coefficient and loading
//! generators, a replication runner and table-style summaries.
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{plugin_lasso_inference, post_selection_inference};
use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::inference::{fit_shared, InferenceOptions, LiveContext};
use crate::lasso::sigmoid;
use crate::numerics::{cholesky, dot, sample_standard_gaussian, LowerTriangular, Matrix, RngStream};
use crate::types::{validate_dataset, Dataset, InferenceResult, Loading, Method};

mod metrics;

pub use metrics::{aggregate, MethodSummary, SummaryMetrics};

/// Stream index reserved for drawing the loading of an experiment.
pub const LOADING_STREAM: u64 = u64::MAX;
/// AR base of the design covariance.
pub const DESIGN_RHO: f64 = 0.5;
/// AR base used to draw Loading 2.
pub const LOADING2_RHO: f64 = -0.75;

/// `Σ_{jl} = |ρ|·ρ^{|j−l|}` of size `dim`, which is `ρ^{1+|j−l|}` for
/// positive `ρ`. Taking the leading factor in absolute value keeps the matrix
/// positive definite for negative bases.
pub fn make_ar_covariance(dim: usize, rho: f64) -> Result<Matrix> {
    if dim < 1 {
        return Err(Error::Domain("covariance dimension must be at least 1".into()));
    }
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("AR base must satisfy |rho| < 1, got {rho}")));
    }
    let mut s = Matrix::zeros(dim, dim);
    for j in 0..dim {
        for l in 0..dim {
            s[(j, l)] = rho.abs() * rho.powi(j.abs_diff(l) as i32);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BetaSpec {
    /// `β_j = (j−1)/20` for `j = 2..11` (1-based), zero elsewhere.
    ExactSparse,
    /// `β_j = (j−1)^(−exponent)` for `j ≥ 2`.
    Decay { exponent: f64 },
    /// Exact sparse with `β₉ = β₁₀ = 0.01`.
    ExactSparseAdversarial,
    /// Exact sparse with a nonzero intercept.
    ExactSparseWithIntercept { intercept: f64 },
}

/// Coefficient vector of length `p`, intercept first.
pub fn gen_beta(spec: BetaSpec, p: usize) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    match spec {
        BetaSpec::Decay { exponent } => {
            for (k, b) in beta.iter_mut().enumerate().skip(1) {
                *b = (k as f64).powf(-exponent);
            }
        }
        _ => {
            for (k, b) in beta.iter_mut().enumerate().take(11).skip(1) {
                *b = k as f64 / 20.0;
            }
        }
    }
    match spec {
        BetaSpec::ExactSparseAdversarial => {
            for b in beta.iter_mut().take(10).skip(8) {
                *b = 0.01;
            }
        }
        BetaSpec::ExactSparseWithIntercept { intercept } => beta[0] = intercept,
        _ => {}
    }
    beta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LoadingSpec {
    /// Basis drawn with the design covariance; entries past the 11th scaled
    /// by `r`.
    Loading1 { r: f64 },
    /// As Loading 1 but the basis uses an AR base of −0.75.
    Loading2 { r: f64 },
    /// Loading 1 with `r = 1/25` and entries 9 and 10 set to 10.
    Loading3,
}

/// `x*₁ = 1`, the rest drawn from `N(0, Σ)` and shrunk per `spec`.
pub fn gen_loading(spec: LoadingSpec, p: usize, stream: &RngStream) -> Result<Loading> {
    if p < 2 {
        return Err(Error::Domain(format!("loading needs p >= 2, got {p}")));
    }
    let (rho, r) = match spec {
        LoadingSpec::Loading1 { r } => (DESIGN_RHO, r),
        LoadingSpec::Loading2 { r } => (LOADING2_RHO, r),
        LoadingSpec::Loading3 => (DESIGN_RHO, 1.0 / 25.0),
    };
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::Domain(format!("shrink ratio must be positive, got {r}")));
    }
    let chol = cholesky(&make_ar_covariance(p - 1, rho)?)?;
    let z = sample_standard_gaussian(&mut stream.rng(), p - 1);
    let mut x = Vec::with_capacity(p);
    x.push(1.0);
    x.extend(chol.mul_vec(&z));
    for v in x.iter_mut().skip(11) {
        *v *= r;
    }
    if spec == LoadingSpec::Loading3 {
        for v in x.iter_mut().take(10).skip(8) {
            *v = 10.0;
        }
    }
    Loading::new(x)
}

/// First loading seed `0, 1, 2, …` (below `max_seed`) whose case probability
/// `h(x*ᵀβ)` lies within `tol` of `target`, with that probability.
pub fn find_loading_seed(
    beta: BetaSpec,
    loading: LoadingSpec,
    p: usize,
    target: f64,
    tol: f64,
    max_seed: u64,
) -> Result<Option<(u64, f64)>> {
    let b = gen_beta(beta, p);
    for seed in 0..max_seed {
        let x = gen_loading(loading, p, &RngStream::new(seed, LOADING_STREAM))?;
        let prob = sigmoid(dot(x.values(), &b));
        if (prob - target).abs() <= tol {
            return Ok(Some((seed, prob)));
        }
    }
    Ok(None)
}

/// `n` rows with `X_{i1} = 1`, `X_{i,−1} = L z`, `yᵢ ~ Bernoulli(h(Xᵢᵀβ))`.
pub fn gen_dataset(n: usize, beta: &[f64], chol: &LowerTriangular, stream: &RngStream) -> Result<Dataset> {
    let p = beta.len();
    if chol.dim() + 1 != p {
        return Err(Error::DimensionMismatch {
            what: "design factor vs coefficients",
            expected: p - 1,
            found: chol.dim(),
        });
    }
    let mut rng = stream.rng();
    let mut data = Vec::with_capacity(n * p);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let z = sample_standard_gaussian(&mut rng, p - 1);
        let start = data.len();
        data.push(1.0);
        data.extend(chol.mul_vec(&z));
        let prob = sigmoid(dot(&data[start..], beta));
        y.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
    }
    validate_dataset(Matrix::from_row_major(n, p, data)?, y, true)
}

fn default_design_rho() -> f64 {
    DESIGN_RHO
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    /// Columns including the intercept.
    pub p: usize,
    pub beta: BetaSpec,
    pub loading: LoadingSpec,
    pub n_reps: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub master_seed: u64,
    /// Seed of the loading draw; the master seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loading_seed: Option<u64>,
    pub methods: Vec<Method>,
    #[serde(default = "default_design_rho")]
    pub design_rho: f64,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Domain(msg));
        if self.n < 20 {
            return fail(format!("n: must be at least 20, got {}", self.n));
        }
        if self.p < 2 {
            return fail(format!("p: must be at least 2, got {}", self.p));
        }
        if self.n_reps < 1 {
            return fail("n_reps: must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha: must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return fail(format!("threshold: must lie in (0, 1), got {}", self.threshold));
        }
        if self.methods.is_empty() {
            return fail("methods: at least one method is required".into());
        }
        if !(self.design_rho.abs() < 1.0) {
            return fail(format!("design_rho: must satisfy |rho| < 1, got {}", self.design_rho));
        }
        match self.loading {
            LoadingSpec::Loading1 { r } | LoadingSpec::Loading2 { r } if !(r > 0.0 && r.is_finite()) => {
                fail(format!("loading.r: must be positive, got {r}"))
            }
            LoadingSpec::Loading3 if self.p < 11 => fail(format!("loading: Loading3 needs p >= 11, got {}", self.p)),
            _ => Ok(()),
        }
    }

    pub fn loading_stream(&self) -> RngStream {
        RngStream::new(self.loading_seed.unwrap_or(self.master_seed), LOADING_STREAM)
    }
}

/// Everything fixed across the replications of one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: SimulationConfig,
    pub beta: Vec<f64>,
    pub loading: Loading,
    /// `h(x*ᵀβ)`.
    pub truth: f64,
    pub options: InferenceOptions,
    chol: LowerTriangular,
}

impl Experiment {
    pub fn new(config: SimulationConfig, options: InferenceOptions) -> Result<Self> {
        config.validate()?;
        let beta = gen_beta(config.beta, config.p);
        let loading = gen_loading(config.loading, config.p, &config.loading_stream())?;
        let chol = cholesky(&make_ar_covariance(config.p - 1, config.design_rho)?)?;
        let truth = sigmoid(dot(loading.values(), &beta));
        Ok(Self {
            config,
            beta,
            loading,
            truth,
            options,
            chol,
        })
    }

    /// Data of replication `rep` (stream `2·rep` of the master seed).
    pub fn dataset(&self, rep: usize) -> Result<Dataset> {
        let stream = RngStream::new(self.config.master_seed, 2 * rep as u64);
        gen_dataset(self.config.n, &self.beta, &self.chol, &stream)
    }

    fn cv_stream(&self, rep: usize) -> RngStream {
        RngStream::new(self.config.master_seed, 2 * rep as u64 + 1)
    }
}

/// One method's observables in one replication. Fields are `None` when the
/// method failed or does not provide them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub linear_estimate: Option<f64>,
    #[serde(default)]
    pub variance: Option<f64>,
    pub probability: Option<f64>,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub reject: Option<bool>,
    pub feasible: Option<bool>,
    /// Tuning level at which the feasibility certificate was checked.
    #[serde(default)]
    pub lambda_n: Option<f64>,
    pub runtime_seconds: f64,
    pub error: Option<String>,
}

impl MethodOutcome {
    fn from_result(method: Method, result: Result<InferenceResult>, runtime_seconds: f64) -> Self {
        match result {
            Ok(r) => Self {
                method,
                linear_estimate: Some(r.linear_estimate),
                variance: r.variance,
                probability: Some(r.case_probability),
                ci_lower: r.ci_lower,
                ci_upper: r.ci_upper,
                reject: r.reject_null,
                feasible: r.certificate.map(|c| c.feasible),
                lambda_n: r.certificate.map(|c| c.lambda_n),
                runtime_seconds,
                error: None,
            },
            Err(e) => Self {
                method,
                linear_estimate: None,
                variance: None,
                probability: None,
                ci_lower: None,
                ci_upper: None,
                reject: None,
                feasible: None,
                lambda_n: None,
                runtime_seconds,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn ci(&self) -> Option<(f64, f64)> {
        self.ci_lower.zip(self.ci_upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub rep_index: usize,
    pub truth: f64,
    pub outcomes: Vec<MethodOutcome>,
}

impl ReplicationResult {
    pub fn outcome(&self, method: Method) -> Option<&MethodOutcome> {
        self.outcomes.iter().find(|o| o.method == method)
    }
}

/// Runs every configured method on replication `rep`. Failures are recorded
/// per method and never abort the replication.
pub fn run_replication(exp: &Experiment, rep: usize) -> ReplicationResult {
    let cfg = &exp.config;
    let (alpha, threshold) = (cfg.alpha, cfg.threshold);
    let fail_all = |e: Error, elapsed: f64| ReplicationResult {
        rep_index: rep,
        truth: exp.truth,
        outcomes: cfg
            .methods
            .iter()
            .map(|&m| MethodOutcome::from_result(m, Err(e.clone()), elapsed))
            .collect(),
    };
    let start = Instant::now();
    let data = match exp.dataset(rep) {
        Ok(d) => d,
        Err(e) => return fail_all(e, 0.0),
    };
    let fit = match fit_shared(&data, &exp.options, &exp.cv_stream(rep)) {
        Ok(f) => f,
        Err(e) => return fail_all(e, start.elapsed().as_secs_f64()),
    };
    let fit_time = start.elapsed().as_secs_f64();
    let x = &exp.loading;
    let outcomes = cfg
        .methods
        .iter()
        .map(|&method| {
            let t = Instant::now();
            let result = match method {
                Method::Live => LiveContext::new(&data, fit.clone(), exp.options.weight_floor)
                    .and_then(|ctx| ctx.infer(&data, x, alpha, threshold, &exp.options.projection)),
                Method::PluginLasso => plugin_lasso_inference(&fit.model, x, alpha, threshold),
                Method::PostSelection => post_selection_inference(&data, &fit.model, x, alpha, threshold),
            };
            MethodOutcome::from_result(method, result, fit_time + t.elapsed().as_secs_f64())
        })
        .collect();
    ReplicationResult {
        rep_index: rep,
        truth: exp.truth,
        outcomes,
    }
}

/// The given replications in index order, on up to `jobs` threads.
pub fn run_replications(exp: &Experiment, reps: &[usize], jobs: usize) -> Vec<ReplicationResult> {
    map_indexed(reps.len(), jobs, |k| run_replication(exp, reps[k]))
}

/// All `n_reps` replications of an experiment.
pub fn run_experiment(exp: &Experiment, jobs: usize) -> Vec<ReplicationResult> {
    let reps: Vec<usize> = (0..exp.config.n_reps).collect();
    run_replications(exp, &reps, jobs)
}
