//! R^2 scoring, out-of-sample backtests and the repeated-noise protocol.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data_ingest::{split_train_test, FactorMatrix, IngestError};
use crate::recursive_forecast::{
    fit_bank_with, forecast, forecast_noisy, BankConfig, FactorModelBank, ForecastError,
    NoiseConfig,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: truth has {truth}, prediction has {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("need at least 2 points, got {0}")]
    TooShort(usize),
    #[error("truth series is constant; R^2 is undefined")]
    ConstantTruth,
    #[error("unknown target factor '{0}'")]
    UnknownFactor(String),
    #[error("horizon {horizon} exceeds test segment of {test_len} rows")]
    HorizonTooLong { horizon: usize, test_len: usize },
    #[error("runs must be >= 1")]
    ZeroRuns,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Forecast(#[from] ForecastError),
}

/// `1 - SS_res / SS_tot`.
pub fn r_squared(truth: &[f64], pred: &[f64]) -> Result<f64, EvalError> {
    if truth.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            pred: pred.len(),
        });
    }
    if truth.len() < 2 {
        return Err(EvalError::TooShort(truth.len()));
    }
    if truth.iter().all(|v| *v == truth[0]) {
        return Err(EvalError::ConstantTruth);
    }
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestConfig {
    pub train_fraction: f64,
    pub horizon: usize,
    pub bank: BankConfig,
}

impl BacktestConfig {
    pub fn new(train_fraction: f64, lambda_grid: Vec<f64>, horizon: usize) -> Self {
        Self {
            train_fraction,
            horizon,
            bank: BankConfig::new(lambda_grid, 0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub r2: f64,
    pub n_points: usize,
    pub target_factor: String,
    pub horizon: usize,
    pub truth: Vec<f64>,
    pub pred: Vec<f64>,
}

impl EvalReport {
    /// `step,truth,predict` for plotting.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("step,truth,predict\n");
        for (i, (t, p)) in self.truth.iter().zip(&self.pred).enumerate() {
            let _ = writeln!(out, "{},{t},{p}", i + 1);
        }
        out
    }

    pub fn to_text(&self) -> String {
        format!(
            "target: {}\nhorizon: {}\npoints: {}\nr2: {:.6}\n",
            self.target_factor, self.horizon, self.n_points, self.r2
        )
    }
}

/// Split, bank fit and target index shared by the backtest and the noise protocol.
struct Prepared {
    bank: FactorModelBank,
    initial: Vec<f64>,
    truth: Vec<f64>,
    target_idx: usize,
}

fn prepare(matrix: &FactorMatrix, target: &str, config: &BacktestConfig) -> Result<Prepared, EvalError> {
    let target_idx = matrix
        .column_index(target)
        .ok_or_else(|| EvalError::UnknownFactor(target.to_string()))?;
    let (train, test) = split_train_test(matrix, config.train_fraction)?;
    if config.horizon > test.n_rows() {
        return Err(EvalError::HorizonTooLong {
            horizon: config.horizon,
            test_len: test.n_rows(),
        });
    }
    let truth: Vec<f64> = test.rows()[..config.horizon]
        .iter()
        .map(|r| r[target_idx])
        .collect();
    if config.horizon >= 2 && truth.iter().all(|v| *v == truth[0]) {
        return Err(EvalError::ConstantTruth);
    }
    let bank = fit_bank_with(&train, &config.bank)?;
    let initial = train.last_row().expect("non-empty train split").to_vec();
    Ok(Prepared {
        bank,
        initial,
        truth,
        target_idx,
    })
}

/// Fits on the training segment, forecasts `horizon` steps from its last state without
/// noise and scores the target factor against the start of the test segment.
pub fn backtest(matrix: &FactorMatrix, target: &str, config: &BacktestConfig) -> Result<EvalReport, EvalError> {
    let prep = prepare(matrix, target, config)?;
    let path = forecast(&prep.bank, &prep.initial, config.horizon)?;
    let pred = path.predicted(prep.target_idx);
    Ok(EvalReport {
        r2: r_squared(&prep.truth, &pred)?,
        n_points: pred.len(),
        target_factor: target.to_string(),
        horizon: config.horizon,
        truth: prep.truth,
        pred,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProtocolReport {
    pub runs: usize,
    pub target_factor: String,
    pub horizon: usize,
    /// R^2 of the noiseless forecast on the same split.
    pub noiseless_r2: f64,
    pub r2_mean: f64,
    /// Population standard deviation over runs.
    pub r2_std: f64,
    pub per_run: Vec<(u64, f64)>,
}

impl NoiseProtocolReport {
    pub fn from_runs(
        target_factor: &str,
        horizon: usize,
        noiseless_r2: f64,
        per_run: Vec<(u64, f64)>,
    ) -> Self {
        let (r2_mean, r2_std) = mean_std(per_run.iter().map(|(_, r)| *r));
        Self {
            runs: per_run.len(),
            target_factor: target_factor.to_string(),
            horizon,
            noiseless_r2,
            r2_mean,
            r2_std,
            per_run,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "target: {}\nhorizon: {}\nruns: {}\nnoiseless r2: {:.6}\nr2: {:.4} ± {:.4}\n",
            self.target_factor, self.horizon, self.runs, self.noiseless_r2, self.r2_mean, self.r2_std
        );
        for (seed, r2) in &self.per_run {
            let _ = writeln!(out, "  seed {seed}: r2 = {r2:.6}");
        }
        out
    }

    /// One `run` row per run, then a `summary` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,run,seed,r2,r2_mean,r2_std\n");
        for (i, (seed, r2)) in self.per_run.iter().enumerate() {
            let _ = writeln!(out, "run,{i},{seed},{r2},,");
        }
        let _ = writeln!(out, "summary,,,,{},{}", self.r2_mean, self.r2_std);
        out
    }
}

/// Welford mean and population std; identical inputs give exactly their value and 0.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for v in values {
        n += 1;
        let delta = v - mean;
        mean += delta / n as f64;
        m2 += delta * (v - mean);
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    (mean, (m2 / n as f64).sqrt())
}

/// Repeats the backtest with noisy paths; run `r` is seeded with `noise.seed + r`.
pub fn noise_protocol(
    matrix: &FactorMatrix,
    target: &str,
    config: &BacktestConfig,
    noise: &NoiseConfig,
    runs: usize,
) -> Result<NoiseProtocolReport, EvalError> {
    if runs == 0 {
        return Err(EvalError::ZeroRuns);
    }
    noise.validate()?;
    let prep = prepare(matrix, target, config)?;
    let noiseless = forecast(&prep.bank, &prep.initial, config.horizon)?;
    let noiseless_r2 = r_squared(&prep.truth, &noiseless.predicted(prep.target_idx))?;

    let per_run = (0..runs as u64)
        .into_par_iter()
        .map(|r| {
            let seed = noise.seed.wrapping_add(r);
            let path = forecast_noisy(&prep.bank, &prep.initial, config.horizon, &noise.with_seed(seed))?;
            let r2 = r_squared(&prep.truth, &path.predicted(prep.target_idx))?;
            Ok((seed, r2))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(NoiseProtocolReport::from_runs(
        target,
        config.horizon,
        noiseless_r2,
        per_run,
    ))
}
