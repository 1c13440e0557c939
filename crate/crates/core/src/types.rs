//! Shared data model: datasets, loadings, fitted models and inference results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{norm2, Matrix};

/// Design matrix and binary outcomes. When `has_intercept_column` is set the
/// first column is exactly all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
    has_intercept_column: bool,
}

/// Checks every dataset invariant and builds the [`Dataset`].
pub fn validate_dataset(x: Matrix, y: Vec<f64>, has_intercept_column: bool) -> Result<Dataset> {
    let (n, p) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            what: "outcome length vs design rows",
            expected: n,
            found: y.len(),
        });
    }
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 observations, got {n}")));
    }
    if p < 1 {
        return Err(Error::Domain("design has no columns".into()));
    }
    for i in 0..n {
        if let Some(j) = x.row(i).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { row: i, col: j });
        }
    }
    if let Some(index) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryOutcome {
            index,
            value: y[index],
        });
    }
    if has_intercept_column {
        if let Some(row) = (0..n).find(|&i| x[(i, 0)] != 1.0) {
            return Err(Error::BadInterceptColumn {
                row,
                value: x[(row, 0)],
            });
        }
    }
    Ok(Dataset {
        x,
        y,
        has_intercept_column,
    })
}

impl Dataset {
    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn has_intercept_column(&self) -> bool {
        self.has_intercept_column
    }

    /// Sub-dataset on a subset of observations.
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            has_intercept_column: self.has_intercept_column,
        }
    }

    /// Sub-dataset on a subset of columns. The intercept flag survives only
    /// when column 0 is kept in first position.
    pub fn select_columns(&self, columns: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(columns),
            y: self.y.clone(),
            has_intercept_column: self.has_intercept_column && columns.first() == Some(&0),
        }
    }

    pub fn mean_outcome(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.n() as f64
    }
}

/// The covariate vector x* whose case probability is queried.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loading {
    values: Vec<f64>,
}

impl Loading {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEntry { row: 0, col: j });
        }
        if norm2(&values) == 0.0 {
            return Err(Error::ZeroLoading);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }

    pub fn check_dim(&self, p: usize) -> Result<()> {
        if self.values.len() != p {
            return Err(Error::DimensionMismatch {
                what: "loading length vs dataset columns",
                expected: p,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Penalized logistic fit at a single λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub beta_hat: Vec<f64>,
    pub lambda: f64,
    pub objective_value: f64,
    /// Coordinate updates performed.
    pub iterations: usize,
    pub converged: bool,
    /// Largest KKT residual at the returned coefficients.
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "live")]
    Live,
    #[serde(rename = "plugin")]
    PluginLasso,
    #[serde(rename = "postsel")]
    PostSelection,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Live, Method::PluginLasso, Method::PostSelection];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Live => "live",
            Method::PluginLasso => "plugin",
            Method::PostSelection => "postsel",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(Method::Live),
            "plugin" => Ok(Method::PluginLasso),
            "postsel" => Ok(Method::PostSelection),
            other => Err(Error::Domain(format!("unknown method '{other}'"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Feasibility certificate of a projection direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub linf_residual: f64,
    pub loading_residual: f64,
    pub lambda_n: f64,
    pub mu: f64,
    pub feasible: bool,
}

/// Point estimate, interval and labelling test for one loading.
///
/// `variance`, the interval and the test are absent for the plug-in Lasso,
/// which provides no valid uncertainty quantification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub method: Method,
    pub linear_estimate: f64,
    pub variance: Option<f64>,
    pub case_probability: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub alpha: f64,
    pub threshold: f64,
    pub reject_null: Option<bool>,
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Certificate>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub separation_detected: bool,
    /// Observations whose linearization weight hit the floor.
    #[serde(default)]
    pub clamped_weights: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl InferenceResult {
    pub fn ci(&self) -> Option<(f64, f64)> {
        self.ci_lower.zip(self.ci_upper)
    }
}
