//! Per-factor linear predictors: L1-penalised least squares by cyclic coordinate descent,
//! plus an ordinary least-squares fit used as the unpenalised baseline.
//!
//! The coordinate-descent solver works on centered (and by default standardized) columns
//! and minimises
//!
//! ```text
//! (1 / 2N) * sum_j (y_j - w.x_j - b)^2 + lambda * |w|_1
//! ```
//!
//! which is half of [`objective`] evaluated at penalty `2 * lambda`. With this scaling the
//! coordinate update is `soft_threshold(x_j.r / N, lambda) / (x_j.x_j / N)` and every weight
//! is zero once `lambda >= max_j |x_j.y| / N`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RegressionError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid lasso config: {0}")]
    InvalidConfig(String),
    #[error("least-squares solve failed: {0}")]
    Solve(String),
    #[error("model text: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub lambda: f64,
    pub max_sweeps: usize,
    /// Convergence threshold on the largest coefficient change within a sweep.
    pub tol: f64,
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_sweeps: 1000,
            tol: 1e-8,
            standardize: true,
        }
    }
}

impl LassoConfig {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), RegressionError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RegressionError::InvalidConfig(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(RegressionError::InvalidConfig(format!(
                "tol must be > 0, got {}",
                self.tol
            )));
        }
        if self.max_sweeps == 0 {
            return Err(RegressionError::InvalidConfig("max_sweeps must be >= 1".into()));
        }
        Ok(())
    }

    /// Penalty coefficient under which [`objective`] is the function this config minimises.
    pub fn objective_lambda(&self) -> f64 {
        2.0 * self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    Lasso,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ols => "ols",
            Self::Lasso => "lasso",
        }
    }
}

/// How a model was produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInfo {
    pub kind: ModelKind,
    pub lambda: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// Affine predictor `intercept + weights . x` in raw feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub target_name: String,
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_means: Vec<f64>,
    /// Standardization scales used during the fit; 1.0 for unscaled or dropped features.
    pub feature_scales: Vec<f64>,
    pub info: FitInfo,
}

impl LinearModel {
    /// Model with the given weights and intercept and no fit history.
    pub fn from_parts(target_name: &str, feature_names: &[String], weights: Vec<f64>, intercept: f64) -> Self {
        let n = weights.len();
        assert_eq!(feature_names.len(), n, "one weight per feature name");
        Self {
            target_name: target_name.to_string(),
            feature_names: feature_names.to_vec(),
            weights,
            intercept,
            feature_means: vec![0.0; n],
            feature_scales: vec![1.0; n],
            info: FitInfo {
                kind: ModelKind::Ols,
                lambda: 0.0,
                sweeps: 0,
                converged: true,
            },
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Renames the target and features (fits default to `y` and `x0, x1, ...`).
    pub fn named(mut self, target: &str, features: &[String]) -> Self {
        assert_eq!(features.len(), self.weights.len(), "one name per feature");
        self.target_name = target.to_string();
        self.feature_names = features.to_vec();
        self
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    /// Plain-text `key = value` block.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "target = {}", self.target_name);
        let _ = writeln!(out, "kind = {}", self.info.kind.as_str());
        let _ = writeln!(out, "lambda = {}", self.info.lambda);
        let _ = writeln!(out, "sweeps = {}", self.info.sweeps);
        let _ = writeln!(out, "converged = {}", self.info.converged);
        let _ = writeln!(out, "intercept = {}", self.intercept);
        for (name, w) in self.feature_names.iter().zip(&self.weights) {
            let _ = writeln!(out, "weight.{name} = {w}");
        }
        for (name, m) in self.feature_names.iter().zip(&self.feature_means) {
            let _ = writeln!(out, "mean.{name} = {m}");
        }
        for (name, s) in self.feature_names.iter().zip(&self.feature_scales) {
            let _ = writeln!(out, "scale.{name} = {s}");
        }
        out
    }

    /// Parses a block written by [`LinearModel::to_kv`]. Feature order follows the order of
    /// the `weight.*` lines.
    pub fn from_kv(text: &str) -> Result<Self, RegressionError> {
        let fmt_err = |m: String| RegressionError::Format(m);
        let mut scalars: BTreeMap<&str, &str> = BTreeMap::new();
        let mut names = Vec::new();
        let mut weights = Vec::new();
        let mut means: BTreeMap<&str, f64> = BTreeMap::new();
        let mut scales: BTreeMap<&str, f64> = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| fmt_err(format!("expected key = value, got '{line}'")))?;
            let num = || -> Result<f64, RegressionError> {
                value
                    .parse::<f64>()
                    .map_err(|_| fmt_err(format!("bad number for {key}: '{value}'")))
            };
            if let Some(name) = key.strip_prefix("weight.") {
                names.push(name.to_string());
                weights.push(num()?);
            } else if let Some(name) = key.strip_prefix("mean.") {
                means.insert(name, num()?);
            } else if let Some(name) = key.strip_prefix("scale.") {
                scales.insert(name, num()?);
            } else {
                scalars.insert(key, value);
            }
        }
        let get = |k: &str| {
            scalars
                .get(k)
                .copied()
                .ok_or_else(|| fmt_err(format!("missing key '{k}'")))
        };
        let kind = match get("kind")? {
            "ols" => ModelKind::Ols,
            "lasso" => ModelKind::Lasso,
            other => return Err(fmt_err(format!("unknown model kind '{other}'"))),
        };
        let parse_f = |k: &str| -> Result<f64, RegressionError> {
            get(k)?
                .parse()
                .map_err(|_| fmt_err(format!("bad number for {k}")))
        };
        let info = FitInfo {
            kind,
            lambda: parse_f("lambda")?,
            sweeps: get("sweeps")?
                .parse()
                .map_err(|_| fmt_err("bad sweeps".into()))?,
            converged: get("converged")?
                .parse()
                .map_err(|_| fmt_err("bad converged flag".into()))?,
        };
        let feature_means = names
            .iter()
            .map(|n| means.get(n.as_str()).copied().unwrap_or(0.0))
            .collect();
        let feature_scales: Vec<f64> = names
            .iter()
            .map(|n| scales.get(n.as_str()).copied().unwrap_or(1.0))
            .collect();
        if feature_scales.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(fmt_err("feature scales must be positive".into()));
        }
        if weights.iter().any(|w: &f64| !w.is_finite()) {
            return Err(fmt_err("weights must be finite".into()));
        }
        Ok(Self {
            target_name: get("target")?.to_string(),
            feature_names: names,
            weights,
            intercept: parse_f("intercept")?,
            feature_means,
            feature_scales,
            info,
        })
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// `intercept + weights . x`.
pub fn predict(model: &LinearModel, x: &[f64]) -> Result<f64, RegressionError> {
    if x.len() != model.weights.len() {
        return Err(RegressionError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    Ok(model.intercept + dot(&model.weights, x))
}

/// `(1/N) * sum_j (y_j - w.x_j - b)^2 + lambda * |w|_1`.
pub fn objective(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    intercept: f64,
    lambda: f64,
) -> Result<f64, RegressionError> {
    if x.len() != y.len() {
        return Err(RegressionError::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if y.is_empty() {
        return Err(RegressionError::TooFewSamples(0));
    }
    let mut rss = 0.0;
    for (row, &target) in x.iter().zip(y) {
        if row.len() != weights.len() {
            return Err(RegressionError::DimensionMismatch {
                expected: weights.len(),
                got: row.len(),
            });
        }
        let r = target - dot(weights, row) - intercept;
        rss += r * r;
    }
    let l1: f64 = weights.iter().map(|w| w.abs()).sum();
    Ok(rss / y.len() as f64 + lambda * l1)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Validated, column-major copy of the design.
struct Design {
    n_samples: usize,
    n_features: usize,
    columns: Vec<Vec<f64>>,
}

impl Design {
    fn new(x: &[Vec<f64>], y: &[f64]) -> Result<Self, RegressionError> {
        if x.len() != y.len() {
            return Err(RegressionError::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if y.len() < 2 {
            return Err(RegressionError::TooFewSamples(y.len()));
        }
        let n_features = x[0].len();
        if let Some(row) = x.iter().find(|r| r.len() != n_features) {
            return Err(RegressionError::DimensionMismatch {
                expected: n_features,
                got: row.len(),
            });
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite("features"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite("target"));
        }
        let columns = (0..n_features)
            .map(|j| x.iter().map(|r| r[j]).collect())
            .collect();
        Ok(Self {
            n_samples: y.len(),
            n_features,
            columns,
        })
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn intercept_only(p: usize, intercept: f64, means: Vec<f64>, info: FitInfo) -> LinearModel {
    LinearModel {
        target_name: "y".into(),
        feature_names: default_names(p),
        weights: vec![0.0; p],
        intercept,
        feature_means: means,
        feature_scales: vec![1.0; p],
        info,
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

pub fn fit_lasso(x: &[Vec<f64>], y: &[f64], config: &LassoConfig) -> Result<LinearModel, RegressionError> {
    fit_lasso_traced(x, y, config).map(|(m, _)| m)
}

/// Like [`fit_lasso`], also returning the objective after every sweep (entry 0 is the
/// all-zero start). Values are [`objective`] at `config.objective_lambda()` on the centered,
/// standardized working problem.
pub fn fit_lasso_traced(
    x: &[Vec<f64>],
    y: &[f64],
    config: &LassoConfig,
) -> Result<(LinearModel, Vec<f64>), RegressionError> {
    config.validate()?;
    let design = Design::new(x, y)?;
    let n = design.n_samples as f64;
    let p = design.n_features;
    let means: Vec<f64> = design.columns.iter().map(|c| mean(c)).collect();
    let y_mean = mean(y);

    if is_constant(y) {
        let info = FitInfo {
            kind: ModelKind::Lasso,
            lambda: config.lambda,
            sweeps: 0,
            converged: true,
        };
        return Ok((intercept_only(p, y[0], means, info), Vec::new()));
    }

    // Working columns: centered, optionally scaled to unit population variance.
    let mut scales = vec![1.0; p];
    let mut active = vec![true; p];
    let mut columns = design.columns;
    for (j, col) in columns.iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v -= means[j];
        }
        let ss = dot(col, col) / n;
        if ss == 0.0 || is_constant(&design_column_raw(x, j)) {
            active[j] = false;
            col.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        if config.standardize {
            let s = ss.sqrt();
            scales[j] = s;
            col.iter_mut().for_each(|v| *v /= s);
        }
    }
    let norms: Vec<f64> = columns.iter().map(|c| dot(c, c) / n).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let mut w = vec![0.0; p];
    // Zero is optimal for lambda >= max_j |x_j.y| / N; the slack absorbs re-standardization
    // rounding right at the boundary.
    let lambda_max = columns
        .iter()
        .map(|c| (dot(c, &yc) / n).abs())
        .fold(0.0, f64::max);
    let null_model = config.lambda > 0.0 && config.lambda >= lambda_max * (1.0 - 1e-12);
    let mut resid = yc.clone();
    let penalty = config.objective_lambda();
    let rows_of = |cols: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..yc.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
    };
    let working_rows = rows_of(&columns);
    let mut trace = vec![objective(&working_rows, &yc, &w, 0.0, penalty)?];

    let mut sweeps = 0;
    let mut converged = null_model;
    while !converged && sweeps < config.max_sweeps {
        sweeps += 1;
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if !active[j] {
                continue;
            }
            let col = &columns[j];
            let rho = dot(col, &resid) / n + norms[j] * w[j];
            let updated = soft_threshold(rho, config.lambda) / norms[j];
            let delta = updated - w[j];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(col) {
                    *r -= delta * c;
                }
                w[j] = updated;
                max_delta = max_delta.max(delta.abs());
            }
        }
        trace.push(objective(&working_rows, &yc, &w, 0.0, penalty)?);
        if max_delta < config.tol {
            converged = true;
            break;
        }
    }

    let weights: Vec<f64> = w.iter().zip(&scales).map(|(wj, s)| wj / s).collect();
    let intercept = y_mean - dot(&weights, &means);
    if weights.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
        return Err(RegressionError::NonFinite("fitted weights"));
    }
    let model = LinearModel {
        target_name: "y".into(),
        feature_names: default_names(p),
        weights,
        intercept,
        feature_means: means,
        feature_scales: scales,
        info: FitInfo {
            kind: ModelKind::Lasso,
            lambda: config.lambda,
            sweeps,
            converged,
        },
    };
    Ok((model, trace))
}

fn design_column_raw(x: &[Vec<f64>], j: usize) -> Vec<f64> {
    x.iter().map(|r| r[j]).collect()
}

/// Least squares with an unpenalised intercept; rank-deficient systems get the
/// minimum-norm weight vector (via SVD on the centered design).
pub fn fit_ols(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel, RegressionError> {
    let design = Design::new(x, y)?;
    let p = design.n_features;
    let means: Vec<f64> = design.columns.iter().map(|c| mean(c)).collect();
    let y_mean = mean(y);
    let info = FitInfo {
        kind: ModelKind::Ols,
        lambda: 0.0,
        sweeps: 0,
        converged: true,
    };
    if is_constant(y) {
        return Ok(intercept_only(p, y[0], means, info));
    }
    if p == 0 {
        return Ok(intercept_only(p, y_mean, means, info));
    }

    let n = design.n_samples;
    let a = DMatrix::from_fn(n, p, |i, j| design.columns[j][i] - means[j]);
    let b = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let svd = a.svd(true, true);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 {
        return Ok(intercept_only(p, y_mean, means, info));
    }
    let eps = max_sv * (n.max(p) as f64) * f64::EPSILON;
    let sol = svd
        .solve(&b, eps)
        .map_err(|e| RegressionError::Solve(e.to_string()))?;
    let weights: Vec<f64> = sol.iter().copied().collect();
    let intercept = y_mean - dot(&weights, &means);
    if weights.iter().any(|v| !v.is_finite()) || !intercept.is_finite() {
        return Err(RegressionError::NonFinite("fitted weights"));
    }
    Ok(LinearModel {
        target_name: "y".into(),
        feature_names: default_names(p),
        weights,
        intercept,
        feature_means: means,
        feature_scales: vec![1.0; p],
        info,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(rng: &mut ChaCha8Rng, n: usize, p: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v).sum::<f64>() + rng.gen_range(-0.5..0.5))
            .collect();
        (x, y)
    }

    /// Normal equations on [1 | X] by Gauss-Jordan elimination with partial pivoting.
    fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> (f64, Vec<f64>) {
        let p = x[0].len() + 1;
        let mut a = vec![vec![0.0; p + 1]; p];
        for (row, &t) in x.iter().zip(y) {
            let aug: Vec<f64> = std::iter::once(1.0).chain(row.iter().copied()).collect();
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += aug[i] * aug[j];
                }
                a[i][p] += aug[i] * t;
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for i in 0..p {
                if i != col {
                    let f = a[i][col];
                    let pivot_row = a[col].clone();
                    for (v, pv) in a[i].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        (a[0][p], (1..p).map(|i| a[i][p]).collect())
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-1.0, 2.0), 0.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        for z in [-3.5, 0.0, 1e-9, 42.0] {
            assert_eq!(soft_threshold(z, 0.0), z);
        }
    }

    #[test]
    fn lasso_zero_lambda_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, y) = random_system(&mut rng, 50, 5);
        let m = fit_lasso(&x, &y, &LassoConfig::default()).unwrap();
        let (b, w) = normal_equations(&x, &y);
        for (a, e) in m.weights.iter().zip(&w) {
            assert!((a - e).abs() < 1e-6, "{a} vs {e}");
        }
        assert!((m.intercept - b).abs() < 1e-6);
        assert!(m.info.converged);
    }

    #[test]
    fn lasso_lambda_max_zeroes_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = random_system(&mut rng, 40, 4);
        let n = y.len() as f64;
        let y_mean = mean(&y);
        // lambda_max on the standardized problem
        let lambda_max = (0..4)
            .map(|j| {
                let col: Vec<f64> = x.iter().map(|r| r[j]).collect();
                let m = mean(&col);
                let s = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                col.iter().zip(&y).map(|(c, t)| (c - m) / s * (t - y_mean)).sum::<f64>().abs() / n
            })
            .fold(0.0, f64::max);
        let m = fit_lasso(&x, &y, &LassoConfig::with_lambda(lambda_max)).unwrap();
        assert!(m.weights.iter().all(|w| *w == 0.0), "{:?}", m.weights);
        assert!((m.intercept - y_mean).abs() < 1e-12);
        let m = fit_lasso(&x, &y, &LassoConfig::with_lambda(lambda_max * 0.9)).unwrap();
        assert!(m.weights.iter().any(|w| *w != 0.0));
    }

    #[test]
    fn one_dimensional_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let m = mean(&x);
        let s = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        x.iter_mut().for_each(|v| *v = (*v - m) / s);
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + rng.gen_range(-0.3..0.3)).collect();
        let xty = dot(&x, &y) / n as f64;
        let xtx = dot(&x, &x) / n as f64;
        for gamma in [0.0, 0.1, 0.5, 2.0] {
            let rows: Vec<Vec<f64>> = x.iter().map(|v| vec![*v]).collect();
            let fit = fit_lasso(&rows, &y, &LassoConfig::with_lambda(gamma)).unwrap();
            let expected = soft_threshold(xty, gamma) / xtx;
            assert!((fit.weights[0] - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn sweeps_are_monotone_and_lambda_shrinks_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut x, y) = random_system(&mut rng, 60, 6);
        // make two columns strongly correlated
        for r in x.iter_mut() {
            r[5] = r[0] * 0.95 + r[5] * 0.05;
        }
        let mut last_l1 = f64::INFINITY;
        for lambda in [0.0, 0.01, 0.05, 0.1, 0.3, 1.0, 3.0] {
            let (m, trace) = fit_lasso_traced(&x, &y, &LassoConfig::with_lambda(lambda)).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
            // l1 in standardized space is what the penalty controls
            let l1: f64 = m.weights.iter().zip(&m.feature_scales).map(|(w, s)| (w * s).abs()).sum();
            assert!(l1 <= last_l1 + 1e-9, "lambda {lambda}: {l1} > {last_l1}");
            last_l1 = l1;
        }
    }

    #[test]
    fn unstandardized_fit_agrees_at_zero_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (x, y) = random_system(&mut rng, 50, 3);
        let cfg = LassoConfig {
            standardize: false,
            ..LassoConfig::default()
        };
        let a = fit_lasso(&x, &y, &cfg).unwrap();
        let b = fit_ols(&x, &y).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_target_gives_intercept_only() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 5.0]];
        let y = vec![4.0; 3];
        for m in [
            fit_lasso(&x, &y, &LassoConfig::default()).unwrap(),
            fit_ols(&x, &y).unwrap(),
        ] {
            assert_eq!(m.weights, vec![0.0, 0.0]);
            assert_eq!(m.intercept, 4.0);
        }
    }

    #[test]
    fn fit_errors() {
        let cfg = LassoConfig::default();
        assert_eq!(
            fit_lasso(&[vec![1.0]], &[1.0], &cfg).unwrap_err(),
            RegressionError::TooFewSamples(1)
        );
        assert!(matches!(
            fit_lasso(&[vec![1.0], vec![f64::NAN]], &[1.0, 2.0], &cfg),
            Err(RegressionError::NonFinite(_))
        ));
        assert!(matches!(
            fit_ols(&[vec![1.0], vec![2.0]], &[1.0, f64::INFINITY]),
            Err(RegressionError::NonFinite(_))
        ));
        assert!(matches!(
            fit_lasso(&[vec![1.0], vec![2.0]], &[1.0], &cfg),
            Err(RegressionError::DimensionMismatch { .. })
        ));
        let bad = LassoConfig {
            lambda: -1.0,
            ..cfg
        };
        assert!(matches!(
            fit_lasso(&[vec![1.0], vec![2.0]], &[1.0, 2.0], &bad),
            Err(RegressionError::InvalidConfig(_))
        ));
        let bad = LassoConfig { tol: 0.0, ..cfg };
        assert!(bad.validate().is_err());
        let bad = LassoConfig { max_sweeps: 0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn max_sweeps_is_reported_not_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = random_system(&mut rng, 30, 4);
        let cfg = LassoConfig {
            max_sweeps: 1,
            tol: 1e-300,
            ..LassoConfig::default()
        };
        let m = fit_lasso(&x, &y, &cfg).unwrap();
        assert_eq!(m.info.sweeps, 1);
        assert!(!m.info.converged);
    }

    #[test]
    fn ols_interpolates_exact_linear_data() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, ((i * i) % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|r| 3.0 + 2.0 * r[0] - 0.5 * r[1]).collect();
        let m = fit_ols(&x, &y).unwrap();
        for (r, t) in x.iter().zip(&y) {
            assert!((predict(&m, r).unwrap() - t).abs() < 1e-9);
        }
    }

    #[test]
    fn ols_constant_feature() {
        let x = vec![vec![1.0]; 5];
        let y = vec![1.0, 2.0, 3.0, 4.0, 10.0];
        let m = fit_ols(&x, &y).unwrap();
        assert_eq!(m.weights, vec![0.0]);
        assert!((m.intercept - 4.0).abs() < 1e-12);
    }

    #[test]
    fn ols_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (x, y) = random_system(&mut rng, 20, 3);
        let m = fit_ols(&x, &y).unwrap();
        let (b, w) = normal_equations(&x, &y);
        for (a, e) in m.weights.iter().zip(&w) {
            assert!((a - e).abs() < 1e-8);
        }
        assert!((m.intercept - b).abs() < 1e-8);
        // in-sample prediction agrees with the oracle's fitted value
        let oracle = b + dot(&w, &x[4]);
        assert!((predict(&m, &x[4]).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn ols_rank_deficient_is_minimum_norm() {
        // second column duplicates the first: min-norm splits the weight evenly
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..8).map(|i| 1.0 + 2.0 * i as f64).collect();
        let m = fit_ols(&x, &y).unwrap();
        assert!((m.weights[0] - 1.0).abs() < 1e-9);
        assert!((m.weights[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_contract() {
        let names = vec!["a".to_string(), "b".to_string()];
        let m = LinearModel::from_parts("a", &names, vec![0.0, 0.0], 2.5);
        assert_eq!(predict(&m, &[9.0, -4.0]).unwrap(), 2.5);
        let m = LinearModel::from_parts("a", &names, vec![1.0, 0.0], 0.0);
        assert_eq!(predict(&m, &[3.0, 8.0]).unwrap(), 3.0);
        assert!(matches!(
            predict(&m, &[1.0]),
            Err(RegressionError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn objective_formula() {
        let x = vec![vec![1.0], vec![2.0]];
        assert_eq!(objective(&x, &[2.0, 4.0], &[2.0], 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(objective(&x, &[1.0, 3.0], &[0.0], 0.0, 0.7).unwrap(), 5.0);
        assert_eq!(objective(&x, &[2.0, 4.0], &[1.0], 0.0, 0.5).unwrap(), 2.5 + 0.5);
        assert!(objective(&x, &[1.0], &[0.0], 0.0, 0.0).is_err());
        assert!(objective(&x, &[1.0, 2.0], &[0.0, 1.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn fitted_objective_dominates_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (x, y) = random_system(&mut rng, 40, 5);
        let y_mean = mean(&y);
        for lambda in [0.0, 0.05, 0.5] {
            let cfg = LassoConfig {
                standardize: false,
                ..LassoConfig::with_lambda(lambda)
            };
            let m = fit_lasso(&x, &y, &cfg).unwrap();
            let pen = cfg.objective_lambda();
            let fitted = objective(&x, &y, &m.weights, m.intercept, pen).unwrap();
            let zero = objective(&x, &y, &[0.0; 5], y_mean, pen).unwrap();
            assert!(fitted <= zero + 1e-12);
        }
    }

    #[test]
    fn kv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = random_system(&mut rng, 30, 3);
        let names: Vec<String> = ["close", "sma_5", "return_1"].iter().map(|s| s.to_string()).collect();
        let m = fit_lasso(&x, &y, &LassoConfig::with_lambda(0.05)).unwrap().named("close", &names);
        let text = m.to_kv();
        assert!(text.contains("weight.sma_5 = "));
        assert_eq!(LinearModel::from_kv(&text).unwrap(), m);
        assert!(LinearModel::from_kv("target = y\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn predict_is_affine(
                w in prop::collection::vec(-5.0f64..5.0, 3),
                b in -10.0f64..10.0,
                x1 in prop::collection::vec(-100.0f64..100.0, 3),
                x2 in prop::collection::vec(-100.0f64..100.0, 3),
                a in -2.0f64..2.0,
            ) {
                let names = default_names(3);
                let m = LinearModel::from_parts("y", &names, w, b);
                let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + (1.0 - a) * v).collect();
                let lhs = predict(&m, &mix).unwrap();
                let rhs = a * predict(&m, &x1).unwrap() + (1.0 - a) * predict(&m, &x2).unwrap();
                prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
            }

            #[test]
            fn lasso_and_ols_agree_at_zero_lambda(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (x, y) = random_system(&mut rng, 30, 3);
                let a = fit_lasso(&x, &y, &LassoConfig::default()).unwrap();
                let b = fit_ols(&x, &y).unwrap();
                for (u, v) in a.weights.iter().zip(&b.weights) {
                    prop_assert!((u - v).abs() < 1e-6);
                }
            }
        }
    }
}
