//! Industry-trend analysis from stock-market data.
//!
//! The explicit path fits one linear model per factor ([`regression`]), rolls the bank
//! forward to get long-horizon trends ([`recursive_forecast`]), aggregates listed companies
//! into industry curves ([`industry`]) and scores forecasts ([`evaluation`]). The implicit
//! path probes a language model with event-conditioned prompts ([`lm_probe`]).

pub mod data_ingest;
pub mod evaluation;
pub mod industry;
pub mod lm_probe;
pub mod recursive_forecast;
pub mod regression;

pub use data_ingest::{
    compute_factors, make_supervised, parse_price_csv, split_train_test, FactorKind, FactorMatrix,
    FactorSpec, IngestError, PriceBar, PriceSeries, SupervisedSet,
};
pub use evaluation::{backtest, noise_protocol, r_squared, BacktestConfig, EvalError, EvalReport, NoiseProtocolReport};
pub use industry::{
    actual_trend, assess, expected_trend, Direction, IndustryError, IndustryPanel, IndustryTrend,
    TrendAssessment,
};
pub use recursive_forecast::{
    fit_bank, fit_bank_with, forecast, forecast_noisy, perturb, psi, step, BankConfig,
    FactorModelBank, ForecastError, ForecastPath, NoiseConfig,
};
pub use regression::{
    fit_lasso, fit_lasso_traced, fit_ols, objective, predict, soft_threshold, LassoConfig,
    LinearModel, RegressionError,
};
