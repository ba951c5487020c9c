//! Recursive factor prediction: one fitted model per factor maps the state at `t-1` to the
//! factor's value at `t`, and rolling the bank forward produces long-horizon paths.
//! Optional multiplicative shocks keep noisy paths from settling on a fixed point.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data_ingest::{make_supervised, split_point, FactorMatrix, IngestError};
use crate::evaluation::r_squared;
use crate::regression::{
    fit_lasso, fit_ols, predict, LassoConfig, LinearModel, ModelKind, RegressionError,
};

/// Any state component above this magnitude aborts a path.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ForecastError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("no candidate models: empty lambda grid with OLS excluded")]
    NoCandidates,
    #[error("validation tail is empty ({pairs} training pairs, val_fraction {val_fraction})")]
    EmptyValidation { pairs: usize, val_fraction: f64 },
    #[error("state has {got} components, bank expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("path diverged at step {step}: factor '{factor}' = {value}")]
    Diverged {
        step: usize,
        factor: String,
        value: f64,
    },
    #[error("horizon must be >= 1")]
    ZeroHorizon,
    #[error("invalid noise config: {0}")]
    InvalidNoise(String),
    #[error("bank text: {0}")]
    Format(String),
}

/// Which candidate won for one factor, and its one-step validation R^2.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub factor: String,
    pub kind: ModelKind,
    pub lambda: f64,
    pub val_r2: f64,
}

/// One linear model per factor, in `factor_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelBank {
    factor_order: Vec<String>,
    models: Vec<LinearModel>,
    selection_report: Vec<Selection>,
}

impl FactorModelBank {
    /// Assembles a bank from hand-built or deserialized models.
    pub fn from_models(
        factor_order: Vec<String>,
        models: Vec<LinearModel>,
        selection_report: Vec<Selection>,
    ) -> Result<Self, ForecastError> {
        let n = factor_order.len();
        if models.len() != n {
            return Err(ForecastError::DimensionMismatch {
                expected: n,
                got: models.len(),
            });
        }
        for (name, model) in factor_order.iter().zip(&models) {
            if model.n_features() != n {
                return Err(ForecastError::DimensionMismatch {
                    expected: n,
                    got: model.n_features(),
                });
            }
            if &model.target_name != name {
                return Err(ForecastError::Format(format!(
                    "model for '{}' placed at factor '{name}'",
                    model.target_name
                )));
            }
        }
        Ok(Self {
            factor_order,
            models,
            selection_report,
        })
    }

    /// Bank whose model for factor `i` has weight row `matrix[i]` and the given intercept.
    pub fn from_linear_map(
        factor_order: Vec<String>,
        matrix: &[Vec<f64>],
        intercepts: &[f64],
    ) -> Result<Self, ForecastError> {
        let models = factor_order
            .iter()
            .zip(matrix)
            .zip(intercepts)
            .map(|((name, row), &b)| LinearModel::from_parts(name, &factor_order, row.clone(), b))
            .collect();
        Self::from_models(factor_order, models, Vec::new())
    }

    pub fn identity(factor_order: Vec<String>) -> Self {
        let n = factor_order.len();
        let eye: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::from_linear_map(factor_order, &eye, &vec![0.0; n]).expect("square identity")
    }

    pub fn factor_order(&self) -> &[String] {
        &self.factor_order
    }

    pub fn models(&self) -> &[LinearModel] {
        &self.models
    }

    pub fn model(&self, factor: &str) -> Option<&LinearModel> {
        self.factor_index(factor).map(|i| &self.models[i])
    }

    pub fn factor_index(&self, factor: &str) -> Option<usize> {
        self.factor_order.iter().position(|f| f == factor)
    }

    pub fn selection_report(&self) -> &[Selection] {
        &self.selection_report
    }

    pub fn n_factors(&self) -> usize {
        self.factor_order.len()
    }

    /// Text form: a `factors = ...` header, then one `[model]` block per factor.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# factor model bank\n");
        let _ = writeln!(out, "factors = {}", self.factor_order.join(","));
        for (i, model) in self.models.iter().enumerate() {
            out.push_str("\n[model]\n");
            if let Some(sel) = self.selection_report.get(i) {
                let _ = writeln!(out, "val_r2 = {}", sel.val_r2);
            }
            out.push_str(&model.to_kv());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ForecastError> {
        let mut blocks = text.split("[model]");
        let header = blocks.next().unwrap_or_default();
        let factors: Vec<String> = header
            .lines()
            .filter_map(|l| l.trim().strip_prefix("factors"))
            .filter_map(|rest| rest.trim().strip_prefix('='))
            .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
            .next()
            .ok_or_else(|| ForecastError::Format("missing 'factors = ...' header".into()))?;
        let mut models = Vec::new();
        let mut report = Vec::new();
        for block in blocks {
            let mut val_r2 = None;
            let mut body = String::new();
            for line in block.lines() {
                match line.trim().strip_prefix("val_r2") {
                    Some(rest) => {
                        let v = rest.trim().trim_start_matches('=').trim();
                        val_r2 = Some(v.parse::<f64>().map_err(|_| {
                            ForecastError::Format(format!("bad val_r2 '{v}'"))
                        })?);
                    }
                    None => {
                        body.push_str(line);
                        body.push('\n');
                    }
                }
            }
            let model = LinearModel::from_kv(&body)?;
            if let Some(val_r2) = val_r2 {
                report.push(Selection {
                    factor: model.target_name.clone(),
                    kind: model.info.kind,
                    lambda: model.info.lambda,
                    val_r2,
                });
            }
            models.push(model);
        }
        if !report.is_empty() && report.len() != models.len() {
            return Err(ForecastError::Format("val_r2 present for only some models".into()));
        }
        Self::from_models(factors, models, report)
    }
}

/// Candidate set and validation split for [`fit_bank_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct BankConfig {
    pub lambda_grid: Vec<f64>,
    pub include_ols: bool,
    /// Fraction of the supervised pairs held out (from the end) for model selection.
    pub val_fraction: f64,
    /// Solver settings for the Lasso candidates; `lambda` is overridden per grid point.
    pub lasso: LassoConfig,
}

impl BankConfig {
    pub fn new(lambda_grid: Vec<f64>, val_fraction: f64) -> Self {
        Self {
            lambda_grid,
            include_ols: true,
            val_fraction,
            lasso: LassoConfig::default(),
        }
    }
}

/// Fits `{OLS} ∪ {Lasso(λ)}` for every factor on the training head and keeps the best
/// one-step validation R^2; ties go to the larger λ.
pub fn fit_bank(
    train: &FactorMatrix,
    lambda_grid: &[f64],
    val_fraction: f64,
) -> Result<FactorModelBank, ForecastError> {
    fit_bank_with(train, &BankConfig::new(lambda_grid.to_vec(), val_fraction))
}

pub fn fit_bank_with(train: &FactorMatrix, config: &BankConfig) -> Result<FactorModelBank, ForecastError> {
    if config.lambda_grid.is_empty() && !config.include_ols {
        return Err(ForecastError::NoCandidates);
    }
    for &lambda in &config.lambda_grid {
        LassoConfig {
            lambda,
            ..config.lasso
        }
        .validate()?;
    }
    let pairs = make_supervised(train)?;
    let head = split_point(pairs.len(), 1.0 - config.val_fraction).ok_or(
        ForecastError::EmptyValidation {
            pairs: pairs.len(),
            val_fraction: config.val_fraction,
        },
    )?;
    let (fit_set, val_set) = pairs.split_at(head);
    if fit_set.len() < 2 {
        return Err(RegressionError::TooFewSamples(fit_set.len()).into());
    }
    let names = train.names().to_vec();

    let results: Vec<Result<(LinearModel, Selection), ForecastError>> = (0..names.len())
        .into_par_iter()
        .map(|i| select_model(i, &names, &fit_set, &val_set, config))
        .collect();
    let mut models = Vec::with_capacity(names.len());
    let mut report = Vec::with_capacity(names.len());
    for r in results {
        let (m, s) = r?;
        models.push(m);
        report.push(s);
    }
    FactorModelBank::from_models(names, models, report)
}

fn select_model(
    target: usize,
    names: &[String],
    fit_set: &crate::data_ingest::SupervisedSet,
    val_set: &crate::data_ingest::SupervisedSet,
    config: &BankConfig,
) -> Result<(LinearModel, Selection), ForecastError> {
    let y = fit_set.target_column(target);
    let truth = val_set.target_column(target);

    // (model, λ used for tie-breaking); OLS ranks below every Lasso candidate.
    let mut candidates: Vec<(LinearModel, f64)> = Vec::new();
    if config.include_ols {
        candidates.push((fit_ols(&fit_set.inputs, &y)?, -1.0));
    }
    for &lambda in &config.lambda_grid {
        let cfg = LassoConfig {
            lambda,
            ..config.lasso
        };
        candidates.push((fit_lasso(&fit_set.inputs, &y, &cfg)?, lambda));
    }

    let mut best: Option<(LinearModel, f64, f64)> = None;
    for (model, rank) in candidates {
        let pred = val_set
            .inputs
            .iter()
            .map(|x| predict(&model, x))
            .collect::<Result<Vec<_>, _>>()?;
        // Constant (or single-point) validation targets score 0 by convention.
        let score = r_squared(&truth, &pred).unwrap_or(0.0);
        let better = match &best {
            None => true,
            Some((_, best_score, best_rank)) => {
                score > best_score + 1e-12 || ((score - best_score).abs() <= 1e-12 && rank > *best_rank)
            }
        };
        if better {
            best = Some((model, score, rank));
        }
    }
    let (model, score, _) = best.ok_or(ForecastError::NoCandidates)?;
    let model = model.named(&names[target], names);
    let selection = Selection {
        factor: names[target].clone(),
        kind: model.info.kind,
        lambda: model.info.lambda,
        val_r2: score,
    };
    Ok((model, selection))
}

/// One application of every factor's model to `state`.
pub fn step(bank: &FactorModelBank, state: &[f64]) -> Result<Vec<f64>, ForecastError> {
    if state.len() != bank.n_factors() {
        return Err(ForecastError::DimensionMismatch {
            expected: bank.n_factors(),
            got: state.len(),
        });
    }
    bank.models
        .iter()
        .map(|m| predict(m, state).map_err(ForecastError::from))
        .collect()
}

/// Rows `0..=horizon` of a rolled-forward state; row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPath {
    pub factor_names: Vec<String>,
    pub states: Vec<Vec<f64>>,
    pub seed_used: Option<u64>,
}

impl ForecastPath {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }

    /// Values of factor `idx` for steps `1..=horizon`.
    pub fn predicted(&self, idx: usize) -> Vec<f64> {
        self.states[1..].iter().map(|s| s[idx]).collect()
    }

    /// `# seed=<n|none>` then `step,<factor>,...`.
    pub fn to_csv(&self) -> String {
        let mut out = match self.seed_used {
            Some(s) => format!("# seed={s}\n"),
            None => "# seed=none\n".to_string(),
        };
        out.push_str("step");
        for n in &self.factor_names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (t, row) in self.states.iter().enumerate() {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn check_state(bank: &FactorModelBank, state: &[f64], step: usize) -> Result<(), ForecastError> {
    for (name, &v) in bank.factor_order.iter().zip(state) {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(ForecastError::Diverged {
                step,
                factor: name.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

pub fn forecast(
    bank: &FactorModelBank,
    initial: &[f64],
    horizon: usize,
) -> Result<ForecastPath, ForecastError> {
    roll(bank, initial, horizon, None)
}

pub fn forecast_noisy(
    bank: &FactorModelBank,
    initial: &[f64],
    horizon: usize,
    config: &NoiseConfig,
) -> Result<ForecastPath, ForecastError> {
    config.validate()?;
    if config.alpha.len() != bank.n_factors() {
        return Err(ForecastError::DimensionMismatch {
            expected: bank.n_factors(),
            got: config.alpha.len(),
        });
    }
    roll(bank, initial, horizon, Some(config))
}

fn roll(
    bank: &FactorModelBank,
    initial: &[f64],
    horizon: usize,
    noise: Option<&NoiseConfig>,
) -> Result<ForecastPath, ForecastError> {
    if horizon == 0 {
        return Err(ForecastError::ZeroHorizon);
    }
    if initial.len() != bank.n_factors() {
        return Err(ForecastError::DimensionMismatch {
            expected: bank.n_factors(),
            got: initial.len(),
        });
    }
    check_state(bank, initial, 0)?;
    let mut rng = noise.map(|c| ChaCha8Rng::seed_from_u64(c.seed));
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(initial.to_vec());
    for t in 1..=horizon {
        let mut next = step(bank, &states[t - 1])?;
        if let (Some(cfg), Some(rng)) = (noise, rng.as_mut()) {
            next = perturb(&next, cfg, rng)?;
        }
        check_state(bank, &next, t)?;
        states.push(next);
    }
    Ok(ForecastPath {
        factor_names: bank.factor_order.clone(),
        states,
        seed_used: noise.map(|c| c.seed),
    })
}

/// Shock settings: with `eps ~ U(0,1)` per factor per step, a factor moves by
/// `psi(eps, t1, t2) * alpha_i` of its value.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    pub alpha: Vec<f64>,
    pub t1: f64,
    pub t2: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub const DEFAULT_T1: f64 = 0.9;
    pub const DEFAULT_T2: f64 = 0.1;

    /// Same amplitude for every factor, default thresholds.
    pub fn uniform(n_factors: usize, alpha: f64, seed: u64) -> Self {
        Self {
            alpha: vec![alpha; n_factors],
            t1: Self::DEFAULT_T1,
            t2: Self::DEFAULT_T2,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ForecastError> {
        if !(0.0..=1.0).contains(&self.t1) || !(0.0..=1.0).contains(&self.t2) {
            return Err(ForecastError::InvalidNoise(format!(
                "thresholds must lie in [0, 1], got t1={} t2={}",
                self.t1, self.t2
            )));
        }
        if self.t2 > self.t1 {
            return Err(ForecastError::InvalidNoise(format!(
                "t2 ({}) must not exceed t1 ({})",
                self.t2, self.t1
            )));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(ForecastError::InvalidNoise(format!(
                "alpha must be finite and >= 0, got {a}"
            )));
        }
        Ok(())
    }
}

/// `1` above `t1`, `-1` below `t2`, `0` on `[t2, t1]` (both ends inclusive).
pub fn psi(x: f64, t1: f64, t2: f64) -> Result<i8, ForecastError> {
    if t2 > t1 {
        return Err(ForecastError::InvalidNoise(format!(
            "t2 ({t2}) must not exceed t1 ({t1})"
        )));
    }
    Ok(if x > t1 {
        1
    } else if x < t2 {
        -1
    } else {
        0
    })
}

/// Draws one `U(0,1)` per factor, in factor order, and applies
/// `x_i + psi(eps_i) * alpha_i * x_i`.
pub fn perturb<R: Rng + ?Sized>(
    state: &[f64],
    config: &NoiseConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ForecastError> {
    if state.len() != config.alpha.len() {
        return Err(ForecastError::DimensionMismatch {
            expected: config.alpha.len(),
            got: state.len(),
        });
    }
    state
        .iter()
        .zip(&config.alpha)
        .map(|(&x, &alpha)| {
            let eps: f64 = rng.gen();
            let shock = psi(eps, config.t1, config.t2)?;
            Ok(x + f64::from(shock) * alpha * x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    /// Matrix from `x_t = A x_{t-1} + c`.
    fn linear_recursion(a: &[Vec<f64>], c: &[f64], x0: &[f64], steps: usize) -> FactorMatrix {
        let mut rows = vec![x0.to_vec()];
        for _ in 1..steps {
            let prev = rows.last().unwrap();
            rows.push(apply(a, c, prev));
        }
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let dates = (0..steps).map(|i| start + chrono::Days::new(i as u64)).collect();
        FactorMatrix::new("gen", dates, names(c.len()), rows).unwrap()
    }

    fn apply(a: &[Vec<f64>], c: &[f64], x: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(c)
            .map(|(row, ci)| ci + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn generator() -> (Vec<Vec<f64>>, Vec<f64>) {
        let (r, th) = (0.995f64, 0.2f64);
        let a = vec![
            vec![r * th.cos(), -r * th.sin(), 0.0],
            vec![r * th.sin(), r * th.cos(), 0.0],
            vec![0.05, 0.0, 0.97],
        ];
        // fixed point near (10, 5, 3)
        let fixed = [10.0, 5.0, 3.0];
        let c: Vec<f64> = (0..3)
            .map(|i| fixed[i] - a[i].iter().zip(&fixed).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        (a, c)
    }

    #[test]
    fn bank_recovers_generator_coefficients() {
        let (a, c) = generator();
        let m = linear_recursion(&a, &c, &[13.0, 4.0, 1.0], 200);
        let bank = fit_bank(&m, &[0.0], 0.2).unwrap();
        for (i, model) in bank.models().iter().enumerate() {
            for (w, e) in model.weights.iter().zip(&a[i]) {
                assert!((w - e).abs() < 1e-6, "factor {i}: {w} vs {e}");
            }
            assert!((model.intercept - c[i]).abs() < 1e-5);
        }
        let state = [7.0, 2.0, 9.0];
        let out = step(&bank, &state).unwrap();
        for (o, e) in out.iter().zip(apply(&a, &c, &state)) {
            assert!((o - e).abs() < 1e-5);
        }
        let path = forecast(&bank, m.last_row().unwrap(), 20).unwrap();
        let mut truth = m.last_row().unwrap().to_vec();
        for t in 1..=20 {
            truth = apply(&a, &c, &truth);
            for (p, e) in path.states[t].iter().zip(&truth) {
                assert!((p - e).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn huge_lambda_loses_to_ols() {
        let (a, c) = generator();
        let m = linear_recursion(&a, &c, &[13.0, 4.0, 1.0], 120);
        let bank = fit_bank(&m, &[1e9], 0.25).unwrap();
        for sel in bank.selection_report() {
            assert_eq!(sel.kind, ModelKind::Ols, "{sel:?}");
        }
        // with OLS excluded the lasso candidate is the zero model
        let cfg = BankConfig {
            include_ols: false,
            ..BankConfig::new(vec![1e9], 0.25)
        };
        let bank = fit_bank_with(&m, &cfg).unwrap();
        assert!(bank.models().iter().all(|m| m.weights.iter().all(|w| *w == 0.0)));
    }

    #[test]
    fn constant_factor_is_intercept_only() {
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
        let dates = (0..20).map(|i| start + chrono::Days::new(i)).collect();
        let m = FactorMatrix::new("c", dates, names(1), vec![vec![4.2]; 20]).unwrap();
        let bank = fit_bank(&m, &[0.1], 0.2).unwrap();
        assert_eq!(bank.models()[0].weights, vec![0.0]);
        assert_eq!(bank.models()[0].intercept, 4.2);
        assert_eq!(bank.selection_report()[0].val_r2, 0.0);
    }

    #[test]
    fn fit_bank_errors() {
        let (a, c) = generator();
        let m = linear_recursion(&a, &c, &[13.0, 4.0, 1.0], 30);
        let cfg = BankConfig {
            include_ols: false,
            ..BankConfig::new(vec![], 0.2)
        };
        assert_eq!(fit_bank_with(&m, &cfg), Err(ForecastError::NoCandidates));
        assert!(matches!(
            fit_bank(&m, &[0.1], 0.0),
            Err(ForecastError::EmptyValidation { .. })
        ));
        assert!(matches!(
            fit_bank(&m, &[-1.0], 0.2),
            Err(ForecastError::Regression(RegressionError::InvalidConfig(_)))
        ));
    }

    #[test]
    fn identity_and_constant_banks() {
        let bank = FactorModelBank::identity(names(3));
        let s = [1.5, -2.0, 7.0];
        assert_eq!(step(&bank, &s).unwrap(), s.to_vec());
        let path = forecast(&bank, &s, 50).unwrap();
        assert_eq!(path.states.len(), 51);
        assert!(path.states.iter().all(|r| r == &s.to_vec()));

        let zero = vec![vec![0.0; 3]; 3];
        let bank = FactorModelBank::from_linear_map(names(3), &zero, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(step(&bank, &[9.0, 9.0, 9.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            step(&bank, &[1.0]),
            Err(ForecastError::DimensionMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn contraction_decays_geometrically() {
        let half = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
        let bank = FactorModelBank::from_linear_map(names(2), &half, &[0.0, 0.0]).unwrap();
        let path = forecast(&bank, &[1.0, 1.0], 3).unwrap();
        assert_eq!(path.predicted(0), vec![0.5, 0.25, 0.125]);
        assert_eq!(path.states[0], vec![1.0, 1.0]);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let grow = vec![vec![1000.0]];
        let bank = FactorModelBank::from_linear_map(names(1), &grow, &[0.0]).unwrap();
        let err = forecast(&bank, &[1.0], 10).unwrap_err();
        assert!(matches!(err, ForecastError::Diverged { step: 5, .. }), "{err:?}");
        assert_eq!(forecast(&bank, &[1.0], 0), Err(ForecastError::ZeroHorizon));
    }

    #[test]
    fn psi_branches() {
        assert_eq!(psi(0.9, 0.9, 0.1).unwrap(), 0);
        assert_eq!(psi(0.1, 0.9, 0.1).unwrap(), 0);
        assert_eq!(psi(0.95, 0.9, 0.1).unwrap(), 1);
        assert_eq!(psi(0.05, 0.9, 0.1).unwrap(), -1);
        assert_eq!(psi(0.5, 0.5, 0.5).unwrap(), 0);
        assert!(psi(0.5, 0.1, 0.9).is_err());
    }

    #[test]
    fn perturb_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let off = NoiseConfig::uniform(3, 0.0, 0);
        let s = [3.0, -1.0, 100.0];
        assert_eq!(perturb(&s, &off, &mut rng).unwrap(), s.to_vec());

        let up = NoiseConfig {
            alpha: vec![0.1],
            t1: 0.0,
            t2: 0.0,
            seed: 0,
        };
        for _ in 0..20 {
            assert_eq!(perturb(&[100.0], &up, &mut rng).unwrap(), vec![110.0]);
        }
        let any = NoiseConfig::uniform(1, 0.5, 0);
        for _ in 0..20 {
            assert_eq!(perturb(&[0.0], &any, &mut rng).unwrap(), vec![0.0]);
        }
        assert!(perturb(&[1.0, 2.0], &any, &mut rng).is_err());
    }

    #[test]
    fn noise_config_validation() {
        assert!(NoiseConfig::uniform(2, 0.1, 1).validate().is_ok());
        let mut c = NoiseConfig::uniform(2, 0.1, 1);
        c.t2 = 0.95;
        assert!(c.validate().is_err());
        let mut c = NoiseConfig::uniform(2, 0.1, 1);
        c.alpha[1] = -0.1;
        assert!(c.validate().is_err());
        let mut c = NoiseConfig::uniform(2, 0.1, 1);
        c.t1 = 1.5;
        assert!(c.validate().is_err());
    }

    fn damped_bank() -> FactorModelBank {
        let a = vec![vec![0.9, 0.05], vec![0.1, 0.8]];
        FactorModelBank::from_linear_map(names(2), &a, &[1.0, 0.5]).unwrap()
    }

    #[test]
    fn noisy_path_reproducible_and_degenerate_cases() {
        let bank = damped_bank();
        let init = [5.0, 3.0];
        let plain = forecast(&bank, &init, 40).unwrap();

        let off = NoiseConfig::uniform(2, 0.0, 42);
        assert_eq!(forecast_noisy(&bank, &init, 40, &off).unwrap().states, plain.states);

        let closed = NoiseConfig {
            t1: 1.0,
            t2: 0.0,
            ..NoiseConfig::uniform(2, 0.3, 42)
        };
        assert_eq!(forecast_noisy(&bank, &init, 40, &closed).unwrap().states, plain.states);

        let cfg = NoiseConfig::uniform(2, 0.05, 7);
        let a = forecast_noisy(&bank, &init, 40, &cfg).unwrap();
        let b = forecast_noisy(&bank, &init, 40, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed_used, Some(7));
        assert_ne!(a.states, plain.states);
        let c = forecast_noisy(&bank, &init, 40, &cfg.with_seed(8)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn path_csv_layout() {
        let half = vec![vec![0.5]];
        let bank = FactorModelBank::from_linear_map(vec!["close".into()], &half, &[0.0]).unwrap();
        let path = forecast(&bank, &[2.0], 2).unwrap();
        assert_eq!(path.to_csv(), "# seed=none\nstep,close\n0,2\n1,1\n2,0.5\n");
    }

    #[test]
    fn bank_text_round_trip() {
        let (a, c) = generator();
        let m = linear_recursion(&a, &c, &[13.0, 4.0, 1.0], 80);
        let bank = fit_bank(&m, &[0.0, 0.01, 0.1], 0.2).unwrap();
        let text = bank.to_text();
        assert_eq!(FactorModelBank::from_text(&text).unwrap(), bank);
        assert!(FactorModelBank::from_text("[model]\n").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn perturb_moves_by_allowed_factor(
                state in prop::collection::vec(-1e3f64..1e3, 1..6),
                alpha in 0.0f64..0.5,
                seed in any::<u64>(),
            ) {
                let cfg = NoiseConfig::uniform(state.len(), alpha, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let out = perturb(&state, &cfg, &mut rng).unwrap();
                for (o, s) in out.iter().zip(&state) {
                    let allowed = [s + alpha * s, *s, s - alpha * s];
                    prop_assert!(allowed.contains(o));
                }
            }

            #[test]
            fn identity_path_is_fixed(init in prop::collection::vec(-1e6f64..1e6, 1..5), h in 1usize..60) {
                let bank = FactorModelBank::identity(names(init.len()));
                let path = forecast(&bank, &init, h).unwrap();
                prop_assert!(path.states.iter().all(|r| r == &init));
            }
        }
    }
}
