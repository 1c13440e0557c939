//! Variance-enhanced projection direction.
//!
//! For the normalized loading `b = x*/‖x*‖₂` and `H = [b, I_p]`, the program
//!
//! ```text
//! min uᵀΣ̂u  s.t.  ‖Σ̂u − b‖∞ ≤ μ,  |bᵀΣ̂u − 1| ≤ μ
//! ```
//!
//! has the lasso-type dual
//!
//! ```text
//! min_v  ¼ vᵀHᵀΣ̂Hv + bᵀHv + μ‖v‖₁
//! ```
//!
//! with primal recovery `u = −Hv/2 = −(v₋₁ + v₁b)/2`. The direction for `x*`
//! itself is `‖x*‖₂ · u`, which satisfies the unnormalized constraints with
//! tolerance `‖x*‖₂ μ` and `‖x*‖₂² μ`.
//!
//! The dual is solved by cyclic coordinate descent in the `p + 1` dual
//! coordinates while maintaining `w = Hv` and `Σ̂w`, so each update costs
//! `O(p)` and `HᵀΣ̂H` is never formed. When `Σ̂` is singular and μ is small
//! enough the dual is unbounded below; the solver reports that through a
//! divergence certificate rather than an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, norm_inf, Matrix};
use crate::types::{Dataset, Loading};

/// Sample second-moment matrix `Σ̂ = (1/n) Σ_i X_i X_iᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    sigma: Matrix,
    n: usize,
}

impl Gram {
    pub fn sigma(&self) -> &Matrix {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.sigma.rows()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.sigma.mul_vec(v)
    }

    /// Wraps an explicit symmetric PSD matrix.
    pub fn from_matrix(sigma: Matrix, n: usize) -> Result<Self> {
        let p = sigma.rows();
        if sigma.cols() != p {
            return Err(Error::DimensionMismatch {
                what: "gram columns",
                expected: p,
                found: sigma.cols(),
            });
        }
        for i in 0..p {
            if sigma[(i, i)] < 0.0 {
                return Err(Error::Domain(format!("negative diagonal entry at {i}")));
            }
            for j in 0..i {
                let (a, b) = (sigma[(i, j)], sigma[(j, i)]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self { sigma, n })
    }
}

/// `(1/n) XᵀX`, symmetrized.
pub fn sample_gram(data: &Dataset) -> Gram {
    let (n, p) = (data.n(), data.p());
    let x = data.x();
    let mut sigma = Matrix::zeros(p, p);
    for i in 0..n {
        let row = x.row(i);
        for a in 0..p {
            let xa = row[a];
            if xa == 0.0 {
                continue;
            }
            let out = sigma.row_mut(a);
            for b in a..p {
                out[b] += xa * row[b];
            }
        }
    }
    let scale = 1.0 / n as f64;
    for a in 0..p {
        for b in a..p {
            let v = sigma[(a, b)] * scale;
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    Gram { sigma, n }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualOptions {
    /// Budget of full coordinate passes.
    pub max_iter: usize,
    /// Tolerance on the dual KKT residual.
    pub tol: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            tol: 1e-9,
        }
    }
}

/// Objective threshold (times `1 + ‖b‖²`) below which the dual is declared
/// unbounded.
pub const DIVERGENCE_OBJECTIVE: f64 = -1e6;
/// Iterate size beyond which the dual is declared unbounded.
pub const DIVERGENCE_NORM: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    /// `v = (v₁, v₋₁)`, length `p + 1`.
    pub dual_v: Vec<f64>,
    /// False when the divergence certificate fired.
    pub finite: bool,
    pub objective: f64,
    pub passes: usize,
    /// Largest dual KKT violation at `dual_v`.
    pub kkt_residual: f64,
    /// `w = Hv`.
    w: Vec<f64>,
    /// `Σ̂w`.
    sigma_w: Vec<f64>,
}

impl DualSolution {
    /// `u = −(v₋₁ + v₁ b)/2` for the normalized loading.
    pub fn normalized_direction(&self) -> Vec<f64> {
        self.w.iter().map(|v| -0.5 * v).collect()
    }

    /// `uᵀΣ̂u` for the normalized direction.
    pub fn normalized_quadratic(&self) -> f64 {
        0.25 * dot(&self.w, &self.sigma_w)
    }
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

fn coordinate_kkt(v: f64, grad: f64, mu: f64) -> f64 {
    if v == 0.0 {
        (grad.abs() - mu).max(0.0)
    } else {
        (grad + mu * v.signum()).abs()
    }
}

struct DualState<'a> {
    sigma: &'a Matrix,
    b: &'a [f64],
    sigma_b: Vec<f64>,
    b_sigma_b: f64,
    v: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
    mu: f64,
}

impl DualState<'_> {
    fn grad(&self, k: usize) -> f64 {
        if k == 0 {
            0.5 * dot(self.b, &self.g) + 1.0
        } else {
            0.5 * self.g[k - 1] + self.b[k - 1]
        }
    }

    fn curvature(&self, k: usize) -> f64 {
        if k == 0 {
            0.5 * self.b_sigma_b
        } else {
            0.5 * self.sigma[(k - 1, k - 1)]
        }
    }

    /// A flat coordinate whose slope beats the penalty: the objective is
    /// linear and decreasing along it.
    fn unbounded_along(&self, k: usize) -> bool {
        self.curvature(k) <= 0.0 && self.grad(k).abs() > self.mu
    }

    /// Exact minimization along coordinate `k`; returns |curvature · step|.
    fn update(&mut self, k: usize) -> f64 {
        let a = self.curvature(k);
        if a <= 0.0 {
            return 0.0;
        }
        let old = self.v[k];
        let new = soft_threshold(a * old - self.grad(k), self.mu) / a;
        let delta = new - old;
        if delta == 0.0 {
            return 0.0;
        }
        self.v[k] = new;
        if k == 0 {
            for ((w, g), (&bj, &sb)) in self.w.iter_mut().zip(self.g.iter_mut()).zip(self.b.iter().zip(&self.sigma_b)) {
                *w += delta * bj;
                *g += delta * sb;
            }
        } else {
            let j = k - 1;
            self.w[j] += delta;
            // Σ̂ is symmetric: row j is column j
            for (g, s) in self.g.iter_mut().zip(self.sigma.row(j)) {
                *g += delta * s;
            }
        }
        (a * delta).abs()
    }

    fn objective(&self) -> f64 {
        0.25 * dot(&self.w, &self.g) + dot(self.b, &self.w) + self.mu * self.v.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn kkt(&self) -> f64 {
        (0..self.v.len())
            .map(|k| coordinate_kkt(self.v[k], self.grad(k), self.mu))
            .fold(0.0, f64::max)
    }
}

/// Coordinate descent on the dual program at penalty `mu`.
///
/// Returns `finite == false` when the objective drops below
/// `DIVERGENCE_OBJECTIVE · (1 + ‖b‖²)` or `‖v‖∞` exceeds
/// [`DIVERGENCE_NORM`]; returns [`Error::NonConvergence`] when neither that
/// nor the KKT tolerance is reached within the pass budget.
pub fn solve_projection_dual(gram: &Gram, x_star: &Loading, mu: f64, opts: &DualOptions) -> Result<DualSolution> {
    solve_dual_from(gram, x_star, mu, opts, None)
}

fn solve_dual_from(
    gram: &Gram,
    x_star: &Loading,
    mu: f64,
    opts: &DualOptions,
    warm: Option<&[f64]>,
) -> Result<DualSolution> {
    let p = gram.dim();
    x_star.check_dim(p)?;
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::Domain(format!("dual penalty mu must be positive, got {mu}")));
    }
    let norm = x_star.norm();
    let b: Vec<f64> = x_star.values().iter().map(|v| v / norm).collect();
    let sigma = gram.sigma();
    let sigma_b = sigma.mul_vec(&b);
    let b_sigma_b = dot(&b, &sigma_b);
    let mut state = DualState {
        sigma,
        b: &b,
        sigma_b,
        b_sigma_b,
        v: vec![0.0; p + 1],
        w: vec![0.0; p],
        g: vec![0.0; p],
        mu,
    };
    if let Some(v0) = warm {
        state.v.copy_from_slice(v0);
        for j in 0..p {
            state.w[j] = v0[j + 1] + v0[0] * b[j];
        }
        state.g = sigma.mul_vec(&state.w);
    }
    let floor = DIVERGENCE_OBJECTIVE * (1.0 + dot(&b, &b));
    let change_tol = 0.1 * opts.tol;
    let mut passes = 0;
    let diverged = |s: &DualState| s.objective() < floor || norm_inf(&s.v) > DIVERGENCE_NORM;
    if (0..=p).any(|k| state.unbounded_along(k)) {
        return Ok(finish(state, false, 0));
    }
    while passes < opts.max_iter {
        // full sweep, then sweeps over the nonzero coordinates until stable
        passes += 1;
        let mut max_change = (0..=p).map(|k| state.update(k)).fold(0.0, f64::max);
        if max_change <= change_tol && state.kkt() <= opts.tol {
            return Ok(finish(state, true, passes));
        }
        while max_change > change_tol && passes < opts.max_iter {
            passes += 1;
            max_change = 0.0;
            for k in 0..=p {
                if state.v[k] != 0.0 {
                    max_change = max_change.max(state.update(k));
                }
            }
            if passes % 16 == 0 && diverged(&state) {
                return Ok(finish(state, false, passes));
            }
        }
        if diverged(&state) {
            return Ok(finish(state, false, passes));
        }
    }
    Err(Error::NonConvergence { iterations: passes })
}

fn finish(state: DualState<'_>, finite: bool, passes: usize) -> DualSolution {
    let objective = state.objective();
    let kkt_residual = state.kkt();
    DualSolution {
        dual_v: state.v,
        finite,
        objective,
        passes,
        kkt_residual,
        w: state.w,
        sigma_w: state.g,
    }
}

/// Lower end of the μ search.
pub const MU_FLOOR: f64 = 1e-4;
/// Upper end of the μ search.
pub const MU_CEILING: f64 = 1e3;

/// `λₙ = √(2 log p / n)`.
pub fn default_lambda_n(p: usize, n: usize) -> f64 {
    (2.0 * (p.max(2) as f64).ln() / n as f64).sqrt()
}

/// Finiteness of the dual at `mu`. A solve that neither converges nor
/// diverges within budget is not counted as finite.
fn probe(
    gram: &Gram,
    x_star: &Loading,
    mu: f64,
    opts: &DualOptions,
    warm: Option<&[f64]>,
) -> Result<Option<DualSolution>> {
    match solve_dual_from(gram, x_star, mu, opts, warm) {
        Ok(sol) if sol.finite => Ok(Some(sol)),
        Ok(_) | Err(Error::NonConvergence { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Smallest μ for which the dual has a finite minimum.
///
/// Starts at `0.5 λₙ` and halves while the dual stays finite, stopping at
/// [`MU_FLOOR`]; once a divergent μ is found the boundary is bisected
/// (geometrically) to a relative width of 0.1. Starting points that diverge
/// are doubled up to [`MU_CEILING`].
pub fn select_mu(gram: &Gram, x_star: &Loading, lambda_n: f64, opts: &DualOptions) -> Result<f64> {
    let start = (0.5 * lambda_n).clamp(MU_FLOOR, MU_CEILING);
    let (mut finite_mu, mut infinite_mu);
    if probe(gram, x_star, start, opts, None)?.is_some() {
        finite_mu = start;
        loop {
            if finite_mu <= MU_FLOOR {
                return Ok(MU_FLOOR);
            }
            let next = (finite_mu * 0.5).max(MU_FLOOR);
            if probe(gram, x_star, next, opts, None)?.is_some() {
                finite_mu = next;
            } else {
                infinite_mu = next;
                break;
            }
        }
    } else {
        infinite_mu = start;
        loop {
            let next = infinite_mu * 2.0;
            if next > MU_CEILING {
                return Err(Error::NoFiniteMu { ceiling: MU_CEILING });
            }
            if probe(gram, x_star, next, opts, None)?.is_some() {
                finite_mu = next;
                break;
            }
            infinite_mu = next;
        }
    }
    while finite_mu / infinite_mu > 1.1 {
        let mid = (finite_mu * infinite_mu).sqrt();
        if probe(gram, x_star, mid, opts, None)?.is_some() {
            finite_mu = mid;
        } else {
            infinite_mu = mid;
        }
    }
    Ok(finite_mu)
}

/// How the dual penalty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MuPolicy {
    /// [`select_mu`]: the smallest μ with a finite dual minimum.
    SmallestFinite,
    /// Start at λₙ and divide by `ratio` while the dual stays finite and the
    /// direction's standard deviation stays below `max_sd_growth` times its
    /// value at λₙ, for at most `max_steps` reductions.
    VarianceGuarded {
        ratio: f64,
        max_steps: usize,
        max_sd_growth: f64,
    },
}

impl Default for MuPolicy {
    fn default() -> Self {
        MuPolicy::VarianceGuarded {
            ratio: 1.5,
            max_steps: 5,
            max_sd_growth: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionOptions {
    pub dual: DualOptions,
    pub mu_policy: MuPolicy,
    /// Overrides `√(2 log p / n)`.
    pub lambda_n: Option<f64>,
    /// Relative slack allowed in the feasibility certificate.
    pub slack_tol: f64,
    /// λₙ relaxations (×1.25 each) tried when the certificate fails.
    pub max_relaxations: usize,
    /// Pass budget for each trial solve in the μ search; a trial that has
    /// not converged by then counts as divergent.
    pub probe_passes: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            dual: DualOptions::default(),
            mu_policy: MuPolicy::default(),
            lambda_n: None,
            slack_tol: 1e-3,
            max_relaxations: 5,
            probe_passes: 5_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDirection {
    pub u_hat: Vec<f64>,
    pub mu: f64,
    pub dual_v: Vec<f64>,
    /// `‖Σ̂û − x*‖∞`.
    pub linf_residual: f64,
    /// `|x*ᵀΣ̂û − ‖x*‖₂²|`.
    pub loading_residual: f64,
    /// λₙ at which the certificate was evaluated (after relaxations).
    pub lambda_n: f64,
    pub feasible: bool,
    pub relaxations: usize,
}

impl ProjectionDirection {
    pub fn certificate(&self) -> crate::types::Certificate {
        crate::types::Certificate {
            linf_residual: self.linf_residual,
            loading_residual: self.loading_residual,
            lambda_n: self.lambda_n,
            mu: self.mu,
            feasible: self.feasible,
        }
    }
}

/// `(‖Σ̂u − x*‖∞, |x*ᵀΣ̂u − ‖x*‖₂²|)`.
pub fn residuals(gram: &Gram, x_star: &Loading, u: &[f64]) -> (f64, f64) {
    let su = gram.mul_vec(u);
    let x = x_star.values();
    let linf = su.iter().zip(x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let load = (dot(x, &su) - dot(x, x)).abs();
    (linf, load)
}

/// Does the certificate hold at `lambda_n`?
pub fn certificate_holds(linf: f64, load: f64, x_star: &Loading, lambda_n: f64, slack_tol: f64) -> bool {
    let norm = x_star.norm();
    let scale = lambda_n * (1.0 + slack_tol);
    linf <= norm * scale && load <= norm * norm * scale
}

fn choose_dual(gram: &Gram, x_star: &Loading, lambda_n: f64, opts: &ProjectionOptions) -> Result<(f64, DualSolution)> {
    let probe_opts = DualOptions {
        max_iter: opts.probe_passes.min(opts.dual.max_iter),
        ..opts.dual.clone()
    };
    match opts.mu_policy {
        MuPolicy::SmallestFinite => {
            let mu = select_mu(gram, x_star, lambda_n, &probe_opts)?;
            let sol = solve_projection_dual(gram, x_star, mu, &opts.dual)?;
            Ok((mu, sol))
        }
        MuPolicy::VarianceGuarded {
            ratio,
            max_steps,
            max_sd_growth,
        } => {
            if !(ratio > 1.0) {
                return Err(Error::Domain(format!("mu ratio must exceed 1, got {ratio}")));
            }
            let mut mu = lambda_n.clamp(MU_FLOOR, MU_CEILING);
            let mut best = probe(gram, x_star, mu, &probe_opts, None)?;
            while best.is_none() {
                mu *= ratio;
                if mu > MU_CEILING {
                    return Err(Error::NoFiniteMu { ceiling: MU_CEILING });
                }
                best = probe(gram, x_star, mu, &probe_opts, None)?;
            }
            let mut best = (mu, best.expect("loop exits on a finite solve"));
            if mu > lambda_n {
                // λₙ itself was infeasible: no downward search
                return Ok(best);
            }
            let sd0 = best.1.normalized_quadratic().sqrt();
            for _ in 0..max_steps {
                let next = mu / ratio;
                if next < MU_FLOOR {
                    break;
                }
                match probe(gram, x_star, next, &probe_opts, Some(&best.1.dual_v))? {
                    Some(sol) if sol.normalized_quadratic().sqrt() < max_sd_growth * sd0 => {
                        mu = next;
                        best = (mu, sol);
                    }
                    _ => break,
                }
            }
            Ok(best)
        }
    }
}

/// Projection direction û for `x_star`, with its feasibility certificate.
///
/// When the certificate fails at λₙ it is re-evaluated (and μ re-selected)
/// at λₙ·1.25ᵏ for up to `max_relaxations` steps; if it never holds the best
/// effort direction comes back with `feasible == false`.
pub fn projection_direction(gram: &Gram, x_star: &Loading, opts: &ProjectionOptions) -> Result<ProjectionDirection> {
    let p = gram.dim();
    x_star.check_dim(p)?;
    let diag: Vec<f64> = (0..p).map(|j| gram.sigma()[(j, j)]).filter(|&d| d > 0.0).collect();
    let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    if dmax > 10.0 * dmin {
        log::warn!("gram diagonal spans {dmin:.3e}..{dmax:.3e}; lambda_n is not scale-adjusted");
    }
    let base = opts.lambda_n.unwrap_or_else(|| default_lambda_n(p, gram.n()));
    let norm = x_star.norm();
    let mut last = None;
    for k in 0..=opts.max_relaxations {
        let lambda_n = base * 1.25f64.powi(k as i32);
        let (mu, sol) = choose_dual(gram, x_star, lambda_n, opts)?;
        let u_hat: Vec<f64> = sol.normalized_direction().into_iter().map(|v| v * norm).collect();
        let (linf, load) = residuals(gram, x_star, &u_hat);
        let feasible = certificate_holds(linf, load, x_star, lambda_n, opts.slack_tol);
        let dir = ProjectionDirection {
            u_hat,
            mu,
            dual_v: sol.dual_v,
            linf_residual: linf,
            loading_residual: load,
            lambda_n,
            feasible,
            relaxations: k,
        };
        if feasible {
            return Ok(dir);
        }
        last = Some(dir);
    }
    let dir = last.expect("at least one attempt");
    log::warn!(
        "projection certificate failed after {} relaxations (linf {:.3e}, loading {:.3e})",
        opts.max_relaxations,
        dir.linf_residual,
        dir.loading_residual
    );
    Ok(dir)
}

/// `‖X û‖∞`, the statistic behind the dropped third constraint.
pub fn design_sup_norm(data: &Dataset, u: &[f64]) -> f64 {
    norm_inf(&data.x().mul_vec(u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sample_standard_gaussian, RngStream};
    use crate::types::validate_dataset;
    use approx::assert_abs_diff_eq;

    fn random_data(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed, 0).rng();
        let mut rows = Vec::new();
        for _ in 0..n {
            let mut r = sample_standard_gaussian(&mut rng, p);
            r[0] = 1.0;
            rows.push(r);
        }
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        validate_dataset(Matrix::from_rows(&rows).unwrap(), y, true).unwrap()
    }

    fn e(p: usize, j: usize) -> Loading {
        let mut v = vec![0.0; p];
        v[j] = 1.0;
        Loading::new(v).unwrap()
    }

    #[test]
    fn gram_hand_example() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let d = validate_dataset(x, vec![0.0, 1.0], false).unwrap();
        let g = sample_gram(&d);
        assert_eq!(g.sigma(), &Matrix::from_rows(&[[5.0, 7.0], [7.0, 10.0]]).unwrap());
    }

    #[test]
    fn gram_of_identity_rows() {
        let d = validate_dataset(Matrix::identity(4), vec![0.0, 1.0, 0.0, 1.0], false).unwrap();
        let g = sample_gram(&d);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(g.sigma()[(i, j)], if i == j { 0.25 } else { 0.0 });
            }
        }
    }

    #[test]
    fn gram_matches_double_loop() {
        let d = random_data(50, 20, 3);
        let g = sample_gram(&d);
        for a in 0..20 {
            for b in 0..20 {
                let mut s = 0.0;
                for i in 0..50 {
                    s += d.x()[(i, a)] * d.x()[(i, b)];
                }
                assert_abs_diff_eq!(g.sigma()[(a, b)], s / 50.0, epsilon = 1e-12);
            }
        }
    }

    /// Brute-force oracle on the primal: projected-gradient-free penalty
    /// method. Minimizes uᵀΣu + ρ Σ max(0, |c_k(u)| − μ)² with increasing ρ
    /// by plain gradient descent.
    fn primal_penalty_oracle(sigma: &Matrix, b: &[f64], mu: f64) -> Vec<f64> {
        let p = b.len();
        let mut u = b.to_vec();
        let mut rho = 10.0;
        for _ in 0..8 {
            let step = 1.0 / (2.0 + 4.0 * rho * (p as f64 + 1.0));
            for _ in 0..200_000 {
                let su = sigma.mul_vec(&u);
                let mut grad: Vec<f64> = su.iter().map(|v| 2.0 * v).collect();
                // coordinate constraints (Σu − b)_j
                for j in 0..p {
                    let c = su[j] - b[j];
                    let ex = c.abs() - mu;
                    if ex > 0.0 {
                        let coef = 2.0 * rho * ex * c.signum();
                        for (k, g) in grad.iter_mut().enumerate() {
                            *g += coef * sigma[(j, k)];
                        }
                    }
                }
                let c = dot(b, &su) - 1.0;
                let ex = c.abs() - mu;
                if ex > 0.0 {
                    let sb = sigma.mul_vec(b);
                    for (g, s) in grad.iter_mut().zip(&sb) {
                        *g += 2.0 * rho * ex * c.signum() * s;
                    }
                }
                let gn = norm_inf(&grad);
                for (v, g) in u.iter_mut().zip(&grad) {
                    *v -= step * g;
                }
                if gn < 1e-12 {
                    break;
                }
            }
            rho *= 10.0;
        }
        u
    }

    #[test]
    fn identity_gram_matches_primal_oracle() {
        let p = 6;
        let gram = Gram::from_matrix(Matrix::identity(p), 100).unwrap();
        let x = e(p, 0);
        let sol = solve_projection_dual(&gram, &x, 0.05, &DualOptions::default()).unwrap();
        assert!(sol.finite);
        let u = sol.normalized_direction();
        // analytic: u = (1 − μ) e₁
        assert_abs_diff_eq!(u[0], 0.95, epsilon = 1e-8);
        let oracle = primal_penalty_oracle(gram.sigma(), x.values(), 0.05);
        for (a, b) in u.iter().zip(&oracle) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-4);
        }
    }

    #[test]
    fn correlated_gram_matches_primal_oracle() {
        let d = random_data(40, 5, 9);
        let gram = sample_gram(&d);
        let x = Loading::new(vec![1.0, 0.5, -0.3, 0.8, 0.0]).unwrap();
        let mu = 0.1;
        let sol = solve_projection_dual(&gram, &x, mu, &DualOptions::default()).unwrap();
        let u = sol.normalized_direction();
        let b: Vec<f64> = x.values().iter().map(|v| v / x.norm()).collect();
        let oracle = primal_penalty_oracle(gram.sigma(), &b, mu);
        let obj = |u: &[f64]| dot(u, &gram.mul_vec(u));
        assert_abs_diff_eq!(obj(&u), obj(&oracle), epsilon = 1e-4);
        for (a, o) in u.iter().zip(&oracle) {
            assert_abs_diff_eq!(*a, *o, epsilon = 1e-3);
        }
    }

    #[test]
    fn singular_gram_diverges_for_small_mu() {
        // rank one Σ̂ = a aᵀ with b not parallel to a
        let a = [1.0, 0.5, 0.0];
        let mut s = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                s[(i, j)] = a[i] * a[j];
            }
        }
        let gram = Gram::from_matrix(s, 1).unwrap();
        let x = Loading::new(vec![0.0, 0.0, 1.0]).unwrap();
        let sol = solve_projection_dual(&gram, &x, 0.01, &DualOptions::default()).unwrap();
        assert!(!sol.finite);
    }

    #[test]
    fn dual_depends_on_loading_only_through_direction() {
        let d = random_data(30, 8, 4);
        let gram = sample_gram(&d);
        let x = Loading::new(vec![1.0, 0.2, -0.4, 0.0, 0.7, 0.1, 0.0, -0.2]).unwrap();
        let a = solve_projection_dual(&gram, &x, 0.05, &DualOptions::default()).unwrap();
        let b = solve_projection_dual(&gram, &x.scaled(7.0).unwrap(), 0.05, &DualOptions::default()).unwrap();
        for (u, v) in a.dual_v.iter().zip(&b.dual_v) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn smallest_finite_mu_on_pd_gram_is_floor() {
        let gram = Gram::from_matrix(Matrix::identity(5), 50).unwrap();
        let mu = select_mu(&gram, &e(5, 0), default_lambda_n(5, 50), &DualOptions::default()).unwrap();
        assert_eq!(mu, MU_FLOOR);
    }

    #[test]
    fn smallest_finite_mu_brackets_the_boundary() {
        // Σ̂ of rank 3 in dimension 4; loading with a null-space component
        let d = random_data(3, 4, 12);
        let gram = sample_gram(&d);
        let x = Loading::new(vec![1.0, 0.3, -0.5, 0.8]).unwrap();
        let opts = DualOptions::default();
        let mu = select_mu(&gram, &x, default_lambda_n(4, 3), &opts).unwrap();
        assert!(mu > MU_FLOOR);
        assert!(solve_projection_dual(&gram, &x, mu, &opts).unwrap().finite);
        let below = solve_projection_dual(&gram, &x, mu / 1.1, &opts);
        assert!(matches!(below, Ok(ref s) if !s.finite) || below.is_err());
        assert_eq!(mu, select_mu(&gram, &x, default_lambda_n(4, 3), &opts).unwrap());
    }

    #[test]
    fn primal_recovery_and_certificate_are_honest() {
        let d = random_data(60, 30, 5);
        let gram = sample_gram(&d);
        let mut v = vec![0.0; 30];
        v[0] = 1.0;
        v[1] = 0.8;
        v[5] = -1.2;
        let x = Loading::new(v).unwrap();
        let dir = projection_direction(&gram, &x, &ProjectionOptions::default()).unwrap();
        let b: Vec<f64> = x.values().iter().map(|v| v / x.norm()).collect();
        for j in 0..30 {
            let rec = -x.norm() * (dir.dual_v[j + 1] + dir.dual_v[0] * b[j]) / 2.0;
            assert!((rec - dir.u_hat[j]).abs() <= 1e-12 * dir.u_hat[j].abs().max(1.0));
        }
        let (linf, load) = residuals(&gram, &x, &dir.u_hat);
        assert_abs_diff_eq!(linf, dir.linf_residual, epsilon = 1e-12);
        assert_abs_diff_eq!(load, dir.loading_residual, epsilon = 1e-12);
        assert!(dir.feasible);
        // dual stationarity at the returned v
        let sol = solve_projection_dual(&gram, &x, dir.mu, &DualOptions::default()).unwrap();
        assert!(sol.kkt_residual <= DualOptions::default().tol);
    }

    #[test]
    fn direction_is_homogeneous() {
        let d = random_data(50, 20, 6);
        let gram = sample_gram(&d);
        let mut v = vec![0.1; 20];
        v[0] = 1.0;
        v[3] = 2.0;
        let x = Loading::new(v).unwrap();
        let opts = ProjectionOptions::default();
        let a = projection_direction(&gram, &x, &opts).unwrap();
        let b = projection_direction(&gram, &x.scaled(7.0).unwrap(), &opts).unwrap();
        for (u, w) in a.u_hat.iter().zip(&b.u_hat) {
            assert!((7.0 * u - w).abs() <= 1e-8 * w.abs().max(1.0));
        }
    }

    #[test]
    fn orthogonal_design_gives_unit_direction() {
        let d = random_data(4000, 5, 8);
        let gram = sample_gram(&d);
        let x = e(5, 1);
        let dir = projection_direction(&gram, &x, &ProjectionOptions::default()).unwrap();
        assert!(dir.feasible);
        for (j, u) in dir.u_hat.iter().enumerate() {
            let target = if j == 1 { 1.0 } else { 0.0 };
            assert!((u - target).abs() <= 3.0 * dir.lambda_n, "u[{j}] = {u}");
        }
    }

    #[test]
    fn rejects_bad_mu() {
        let gram = Gram::from_matrix(Matrix::identity(2), 3).unwrap();
        assert!(solve_projection_dual(&gram, &e(2, 0), 0.0, &DualOptions::default()).is_err());
    }
}
