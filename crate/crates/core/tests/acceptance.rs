//! Monte-Carlo acceptance suite. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.
//!
//! `LIVE_ACCEPTANCE_REPS` overrides the replication count (default 200) for
//! a quick look; the criteria are only meaningful at the default.
use std::process::ExitCode;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use live_core::exec::{available_jobs, map_indexed};
use live_core::inference::{fit_shared, infer, InferenceOptions, CV_STREAM};
use live_core::lasso::fit_logistic_mle;
use live_core::lasso::{logit, neg_log_likelihood, nll_gradient, sigmoid};
use live_core::numerics::{cholesky, std_normal_cdf, std_normal_quantile, upper_quantile, RngStream};
use live_core::projection::{default_lambda_n, sample_gram, solve_projection_dual, DualOptions};
use live_core::simulation::{
    aggregate, find_loading_seed, gen_dataset, make_ar_covariance, run_experiment, BetaSpec, Experiment, LoadingSpec,
    ReplicationResult, SimulationConfig, SummaryMetrics, DESIGN_RHO,
};
use live_core::types::{Dataset, Loading, Method};

const P: usize = 501;
const MASTER_SEED: u64 = 2024;

struct Report {
    failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn reps() -> usize {
    std::env::var("LIVE_ACCEPTANCE_REPS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(200)
}

struct Run {
    exp: Experiment,
    results: Vec<ReplicationResult>,
    summary: SummaryMetrics,
    seconds: f64,
}

impl Run {
    fn metric(&self, m: Method, f: impl Fn(&live_core::simulation::MethodSummary) -> Option<f64>) -> f64 {
        self.summary.method(m).and_then(f).unwrap_or(f64::NAN)
    }
}

fn simulate(beta: BetaSpec, loading: LoadingSpec, target: f64, n: usize) -> Run {
    let (loading_seed, _) = find_loading_seed(beta, loading, P, target, 0.02, 10_000)
        .expect("loading search")
        .expect("a loading near the target probability");
    let config = SimulationConfig {
        n,
        p: P,
        beta,
        loading,
        n_reps: reps(),
        alpha: 0.05,
        threshold: 0.5,
        master_seed: MASTER_SEED,
        loading_seed: Some(loading_seed),
        methods: Method::ALL.to_vec(),
        design_rho: DESIGN_RHO,
    };
    let started = Instant::now();
    let exp = Experiment::new(config, InferenceOptions::default()).expect("valid experiment");
    let results = run_experiment(&exp, available_jobs());
    let summary = aggregate(&results, exp.truth).expect("nonempty");
    let seconds = started.elapsed().as_secs_f64();
    let live = summary.method(Method::Live).unwrap();
    println!(
        "  ran {beta:?} {loading:?} n={n}: truth {:.4}, LiVE cov {:?} err {:?} bias {:?}, {:.0}s",
        exp.truth,
        live.cov,
        live.err,
        live.bias,
        seconds
    );
    Run {
        exp,
        results,
        summary,
        seconds,
    }
}

fn f3(v: f64) -> String {
    format!("{v:.3}")
}

/// Gradient of (1/n)·NLL computed directly from the definition.
fn gradient_oracle(data: &Dataset, beta: &[f64]) -> Vec<f64> {
    let (n, p) = (data.n(), data.p());
    let mut g = vec![0.0; p];
    for i in 0..n {
        let row = data.x().row(i);
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        let r = 1.0 / (1.0 + (-eta).exp()) - data.y()[i];
        for j in 0..p {
            g[j] += row[j] * r / n as f64;
        }
    }
    g
}

/// Largest violation of the lasso optimality conditions with an
/// unpenalized intercept.
fn kkt_violation(data: &Dataset, beta: &[f64], lambda: f64) -> f64 {
    let g = gradient_oracle(data, beta);
    let mut worst: f64 = 0.0;
    for j in 0..beta.len() {
        let v = if j == 0 && data.has_intercept_column() {
            g[j].abs()
        } else if beta[j] != 0.0 {
            (g[j] + lambda * beta[j].signum()).abs()
        } else {
            (g[j].abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

fn design(n: usize, beta: &[f64], seed: u64, stream: u64) -> Dataset {
    let chol = cholesky(&make_ar_covariance(beta.len() - 1, DESIGN_RHO).unwrap()).unwrap();
    gen_dataset(n, beta, &chol, &RngStream::new(seed, stream)).unwrap()
}

fn main() -> ExitCode {
    let started = Instant::now();
    let mut report = Report { failed: 0 };
    let jobs = available_jobs();
    println!("acceptance: {} replications per setting, {jobs} worker(s)", reps());

    let r = 1.0 / 25.0;
    let l1: Vec<Run> = [200, 400, 600]
        .into_iter()
        .map(|n| simulate(BetaSpec::ExactSparse, LoadingSpec::Loading1 { r }, 0.732, n))
        .collect();
    let l2: Vec<Run> = [200, 400, 600]
        .into_iter()
        .map(|n| simulate(BetaSpec::ExactSparse, LoadingSpec::Loading2 { r }, 0.293, n))
        .collect();
    let l3 = simulate(BetaSpec::ExactSparseAdversarial, LoadingSpec::Loading3, 0.578, 400);
    let decay = simulate(BetaSpec::Decay { exponent: 2.0 }, LoadingSpec::Loading1 { r }, 0.481, 400);

    // 1
    let cov = l1[1].metric(Method::Live, |m| m.cov);
    report.check(
        "coverage, loading 1, n=400",
        (0.89..=0.99).contains(&cov) && l1[1].seconds < 600.0,
        format!("LiVE coverage {} in [0.89, 0.99], {:.0}s (< 600s)", f3(cov), l1[1].seconds),
    );

    // 2
    let err: Vec<f64> = l1.iter().map(|run| run.metric(Method::Live, |m| m.err)).collect();
    report.check(
        "power trend, loading 1",
        err[0] < err[2] && err[2] >= 0.85,
        format!("ERR n=200 {} < n=600 {}, and n=600 >= 0.85 (n=400 {})", f3(err[0]), f3(err[2]), f3(err[1])),
    );

    // 3
    let err: Vec<f64> = l2.iter().map(|run| run.metric(Method::Live, |m| m.err)).collect();
    report.check(
        "type-I control, loading 2",
        err.iter().all(|e| *e <= 0.08),
        format!("ERR at n=200/400/600: {}/{}/{} all <= 0.08", f3(err[0]), f3(err[1]), f3(err[2])),
    );

    // 4
    let ratio = |m: Method| l1[1].metric(m, |s| Some(s.bias?.abs() / s.se?));
    let (live_ratio, plugin_ratio) = (ratio(Method::Live), ratio(Method::PluginLasso));
    report.check(
        "bias correction, n=400",
        live_ratio <= 0.5 && plugin_ratio >= 1.0,
        format!("|Bias|/SE LiVE {} <= 0.5, plug-in {} >= 1.0", f3(live_ratio), f3(plugin_ratio)),
    );

    // 5
    let (post_cov, live_cov) = (l3.metric(Method::PostSelection, |m| m.cov), l3.metric(Method::Live, |m| m.cov));
    report.check(
        "adversarial post-selection, loading 3, n=400",
        post_cov <= 0.85 && live_cov >= 0.90,
        format!("post-selection coverage {} <= 0.85, LiVE {} >= 0.90", f3(post_cov), f3(live_cov)),
    );

    // 6
    let (cov, err) = (decay.metric(Method::Live, |m| m.cov), decay.metric(Method::Live, |m| m.err));
    report.check(
        "approximate sparsity, decay 2, n=400",
        (0.88..=0.99).contains(&cov) && err <= 0.08,
        format!("LiVE coverage {} in [0.88, 0.99], ERR {} <= 0.08", f3(cov), f3(err)),
    );

    // 7: invariant suites
    let all_runs: Vec<&Run> = l1.iter().chain(&l2).chain([&l3, &decay]).collect();

    let mut worst_kkt: f64 = 0.0;
    let mut fits = 0;
    for (k, &(n, p)) in [(200, 501), (400, 501), (600, 501), (300, 51), (1000, 11)].iter().enumerate() {
        let spec = if k % 2 == 0 { BetaSpec::ExactSparse } else { BetaSpec::Decay { exponent: 1.0 } };
        let beta = live_core::simulation::gen_beta(spec, p);
        for s in 0..4u64 {
            let data = design(n, &beta, 77 + s, k as u64);
            let fit = fit_shared(&data, &InferenceOptions::default(), &RngStream::new(s, CV_STREAM)).unwrap();
            worst_kkt = worst_kkt.max(kkt_violation(&data, &fit.model.beta_hat, fit.model.lambda));
            fits += 1;
        }
    }
    report.check(
        "KKT certification of lasso fits",
        worst_kkt <= 1e-7,
        format!("largest violation {worst_kkt:.2e} over {fits} cross-validated fits (tol 1e-7)"),
    );

    let (mut certified, mut total) = (0usize, 0usize);
    for run in &all_runs {
        let default = default_lambda_n(P, run.exp.config.n);
        for res in &run.results {
            if let Some(o) = res.outcome(Method::Live) {
                total += 1;
                let at_default = o.lambda_n.is_some_and(|l| (l - default).abs() <= 1e-12 * default);
                if o.feasible == Some(true) && at_default {
                    certified += 1;
                }
            }
        }
    }
    let rate = certified as f64 / total.max(1) as f64;
    report.check(
        "projection feasibility at default lambda_n",
        rate >= 0.95,
        format!("{certified}/{total} certified ({}) >= 0.95", f3(rate)),
    );

    let mut worst_recovery: f64 = 0.0;
    for s in 0..5u64 {
        let beta = live_core::simulation::gen_beta(BetaSpec::ExactSparse, 101);
        let data = design(150, &beta, 500 + s, 0);
        let gram = sample_gram(&data);
        let x = live_core::simulation::gen_loading(LoadingSpec::Loading1 { r: 1.0 }, 101, &RngStream::new(s, 9)).unwrap();
        let b: Vec<f64> = x.values().iter().map(|v| v / x.norm()).collect();
        for mu in [0.05, 0.2, 1.0] {
            let sol = solve_projection_dual(&gram, &x, mu, &DualOptions::default()).unwrap();
            let u = sol.normalized_direction();
            let v = &sol.dual_v;
            for j in 0..u.len() {
                let recovered = -(v[j + 1] + v[0] * b[j]) / 2.0;
                worst_recovery = worst_recovery.max((u[j] - recovered).abs() / (1.0 + recovered.abs()));
            }
        }
    }
    report.check(
        "primal-dual recovery identity",
        worst_recovery <= 1e-12,
        format!("largest deviation {worst_recovery:.2e} (tol 1e-12)"),
    );

    let mut worst_fd: f64 = 0.0;
    let mut rng = StdRng::seed_from_u64(5);
    for s in 0..5u64 {
        let beta = live_core::simulation::gen_beta(BetaSpec::ExactSparse, 21);
        let data = design(200, &beta, 900 + s, 0);
        let point: Vec<f64> = (0..21).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = nll_gradient(&point, &data);
        for j in 0..21 {
            let h = 1e-5;
            let (mut up, mut down) = (point.clone(), point.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (neg_log_likelihood(&up, &data) - neg_log_likelihood(&down, &data)) / (2.0 * h);
            worst_fd = worst_fd.max((g[j] - fd).abs() / g[j].abs().max(1e-3));
        }
    }
    report.check(
        "gradient vs central differences",
        worst_fd <= 1e-6,
        format!("largest relative gap {worst_fd:.2e} (tol 1e-6)"),
    );

    let mut worst_rmse: f64 = 0.0;
    for run in &all_runs {
        for m in &run.summary.methods {
            if let (Some(rmse), Some(bias), Some(se)) = (m.rmse, m.bias, m.se) {
                worst_rmse = worst_rmse.max((rmse * rmse - bias * bias - se * se).abs());
            }
        }
    }
    report.check(
        "RMSE^2 = Bias^2 + SE^2",
        worst_rmse <= 1e-14,
        format!("largest gap {worst_rmse:.2e}"),
    );

    let z = upper_quantile(0.025).unwrap();
    let mut worst_image: f64 = 0.0;
    let mut intervals = 0;
    for run in &all_runs {
        for res in &run.results {
            let o = res.outcome(Method::Live).unwrap();
            if let (Some(est), Some(var), Some((lo, hi))) = (o.linear_estimate, o.variance, o.ci()) {
                let sd = var.sqrt();
                worst_image = worst_image.max((lo - sigmoid(est - z * sd)).abs()).max((hi - sigmoid(est + z * sd)).abs());
                intervals += 1;
            }
        }
    }
    report.check(
        "CI is the image of the linear-scale interval",
        worst_image <= f64::EPSILON,
        format!("largest endpoint gap {worst_image:.2e} over {intervals} intervals"),
    );

    let mut rng = StdRng::seed_from_u64(11);
    let mut taylor_violations = 0;
    for _ in 0..10_000 {
        let a: f64 = rng.random_range(-8.0..8.0);
        let x = a + rng.random_range(-3.0..3.0);
        let d = x - a;
        let ha = sigmoid(a);
        let deriv = ha * (1.0 - ha);
        let lhs = (sigmoid(x) - ha - deriv * d).abs() / deriv;
        if lhs > d.abs().exp() * d * d {
            taylor_violations += 1;
        }
    }
    report.check(
        "second-order Taylor bound for the logistic link",
        taylor_violations == 0,
        format!("{taylor_violations} violations in 10^4 pairs"),
    );

    let mut worst_q: f64 = 0.0;
    for k in 1..2000 {
        let q = k as f64 / 2000.0;
        worst_q = worst_q.max((std_normal_cdf(std_normal_quantile(q).unwrap()).unwrap() - q).abs());
    }
    for e in 1..=12 {
        let q = 10f64.powi(-e);
        for q in [q, 1.0 - q] {
            worst_q = worst_q.max((std_normal_cdf(std_normal_quantile(q).unwrap()).unwrap() - q).abs());
        }
    }
    report.check(
        "normal quantile/CDF round trip",
        worst_q <= 1e-8,
        format!("largest gap {worst_q:.2e} (tol 1e-8)"),
    );

    let truth_linear = logit(l1[2].exp.truth);
    let t: Vec<f64> = l1[2]
        .results
        .iter()
        .filter_map(|res| {
            let o = res.outcome(Method::Live)?;
            Some((o.linear_estimate? - truth_linear) / o.variance?.sqrt())
        })
        .collect();
    let mean = t.iter().sum::<f64>() / t.len() as f64;
    let var = t.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t.len() as f64 - 1.0);
    report.check(
        "studentized errors, loading 1, n=600",
        mean.abs() <= 0.2 && (0.7..=1.4).contains(&var),
        format!("mean {} (|.| <= 0.2), variance {} in [0.7, 1.4]", f3(mean), f3(var)),
    );

    // null design, x* = e₂
    let null_started = Instant::now();
    let p_null = 201;
    let x_null = {
        let mut v = vec![0.0; p_null];
        v[1] = 1.0;
        Loading::new(v).unwrap()
    };
    let zero = vec![0.0; p_null];
    let null_rejects = map_indexed(reps(), jobs, |rep| {
        let data = design(400, &zero, MASTER_SEED, 2 * rep as u64);
        let opts = InferenceOptions {
            seed: rep as u64,
            ..Default::default()
        };
        infer(&data, &x_null, 0.05, 0.5, &opts).map(|r| r.reject_null == Some(true))
    });
    let failed = null_rejects.iter().filter(|r| r.is_err()).count();
    let rejected = null_rejects.iter().filter(|r| matches!(r, Ok(true))).count();
    let rate = rejected as f64 / reps() as f64;
    report.check(
        "type-I error under a null design",
        rate <= 0.08 && failed == 0,
        format!(
            "rejection rate {} <= 0.08 with {failed} failures (n=400, p={p_null}, {:.0}s)",
            f3(rate),
            null_started.elapsed().as_secs_f64()
        ),
    );

    // determinism of the full pipeline
    let data = design(300, &live_core::simulation::gen_beta(BetaSpec::ExactSparse, 101), 3, 0);
    let x_det = live_core::simulation::gen_loading(LoadingSpec::Loading1 { r: 1.0 }, 101, &RngStream::new(3, 1)).unwrap();
    let opts = InferenceOptions::default();
    let first = infer(&data, &x_det, 0.05, 0.5, &opts).unwrap();
    let second = infer(&data, &x_det, 0.05, 0.5, &opts).unwrap();
    report.check("inference is deterministic", first == second, "two calls give identical results".into());

    // 8
    let oracle_started = Instant::now();
    let beta_low = vec![0.3, 0.8, -0.6, 0.4];
    let x_low = Loading::new(vec![1.0, 0.5, -0.4, 0.3]).unwrap();
    let agree = map_indexed(100, jobs, |rep| {
        let data = design(5000, &beta_low, 31, rep as u64);
        let live = infer(&data, &x_low, 0.05, 0.5, &InferenceOptions { seed: rep as u64, ..Default::default() }).ok()?;
        let mle = fit_logistic_mle(&data).ok()?;
        let plug: f64 = mle.coefficients.iter().zip(x_low.values()).map(|(b, x)| b * x).sum();
        let sd = live.variance?.sqrt();
        Some((sigmoid(plug) - live.case_probability).abs() <= 3.0 * sd)
    });
    let within = agree.iter().filter(|a| **a == Some(true)).count();
    let oracle_seconds = oracle_started.elapsed().as_secs_f64();
    report.check(
        "low-dimensional agreement with the MLE",
        within >= 95 && oracle_seconds < 60.0,
        format!("{within}/100 within 3 sd (>= 95), {oracle_seconds:.1}s (< 60s)"),
    );

    println!(
        "acceptance: {} failed, total {:.0}s",
        report.failed,
        started.elapsed().as_secs_f64()
    );
    if report.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
