//! Company-to-industry aggregation: the actual trend is a weighted sum of per-member
//! z-scored signal factors over the common date range; the expected trend applies the same
//! normalization to each member's noiseless forecast.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::data_ingest::{compute_factors, FactorMatrix, FactorSpec, IngestError, PriceSeries};
use crate::recursive_forecast::{fit_bank_with, forecast, BankConfig, FactorModelBank, ForecastError};

/// Trading days ahead for the expected trend, and the range accepted from users.
pub const DEFAULT_HORIZON_DAYS: usize = 90;
pub const MIN_HORIZON_DAYS: usize = 60;
pub const MAX_HORIZON_DAYS: usize = 126;
/// Volatility of the normalized actual series above which the direction is `uncertain`.
pub const DEFAULT_VOLATILITY_THRESHOLD: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IndustryError {
    #[error("panel: {0}")]
    Panel(String),
    #[error("panel weights sum to {0}, expected 1")]
    WeightSum(f64),
    #[error("no factor matrix for member '{0}'")]
    MissingMember(String),
    #[error("no model bank for member '{0}'")]
    MissingBank(String),
    #[error("member '{member}' has no factor '{factor}'")]
    MissingFactor { member: String, factor: String },
    #[error("members share no dates")]
    EmptyIntersection,
    #[error("horizon must be >= 1")]
    ZeroHorizon,
    #[error("horizon {0} outside {MIN_HORIZON_DAYS}..={MAX_HORIZON_DAYS} trading days")]
    HorizonOutOfRange(usize),
    #[error("need at least 2 actual points, got {0}")]
    TooShort(usize),
    #[error("member '{member}': {source}")]
    Member {
        member: String,
        #[source]
        source: ForecastError,
    },
    #[error("member '{member}': {source}")]
    MemberIngest {
        member: String,
        #[source]
        source: IngestError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndustryPanel {
    industry_name: String,
    members: Vec<(String, f64)>,
    signal_factor: String,
    horizon_days: usize,
}

impl IndustryPanel {
    pub fn new(
        industry_name: impl Into<String>,
        members: Vec<(String, f64)>,
        signal_factor: impl Into<String>,
    ) -> Result<Self, IndustryError> {
        if members.is_empty() {
            return Err(IndustryError::Panel("at least one member required".into()));
        }
        let mut seen = BTreeSet::new();
        for (id, w) in &members {
            if !(w.is_finite() && *w >= 0.0) {
                return Err(IndustryError::Panel(format!("member '{id}' has invalid weight {w}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(IndustryError::Panel(format!("member '{id}' listed twice")));
            }
        }
        let sum: f64 = members.iter().map(|(_, w)| w).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(IndustryError::WeightSum(sum));
        }
        Ok(Self {
            industry_name: industry_name.into(),
            members,
            signal_factor: signal_factor.into(),
            horizon_days: DEFAULT_HORIZON_DAYS,
        })
    }

    pub fn with_horizon(mut self, horizon_days: usize) -> Self {
        self.horizon_days = horizon_days;
        self
    }

    /// First line `industry,signal_factor,horizon_days`, then one `entity_id,weight` per
    /// member. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, IndustryError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .enumerate()
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| IndustryError::Panel("empty panel file".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let [name, signal, horizon] = fields[..] else {
            return Err(IndustryError::Panel(format!(
                "header must be 'industry,signal_factor,horizon', got '{header}'"
            )));
        };
        let horizon: usize = horizon
            .parse()
            .map_err(|_| IndustryError::Panel(format!("bad horizon '{horizon}'")))?;
        let mut members = Vec::new();
        for (i, line) in lines {
            let (id, w) = line
                .split_once(',')
                .ok_or_else(|| IndustryError::Panel(format!("line {}: expected 'entity_id,weight'", i + 1)))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| IndustryError::Panel(format!("line {}: bad weight '{}'", i + 1, w.trim())))?;
            members.push((id.trim().to_string(), w));
        }
        Ok(Self::new(name, members, signal)?.with_horizon(horizon))
    }

    pub fn industry_name(&self) -> &str {
        &self.industry_name
    }

    pub fn members(&self) -> &[(String, f64)] {
        &self.members
    }

    pub fn signal_factor(&self) -> &str {
        &self.signal_factor
    }

    pub fn horizon_days(&self) -> usize {
        self.horizon_days
    }

    /// Members in entity-id order, so aggregation does not depend on listing order.
    fn sorted_members(&self) -> Vec<&(String, f64)> {
        let mut m: Vec<_> = self.members.iter().collect();
        m.sort_by(|a, b| a.0.cmp(&b.0));
        m
    }
}

/// Checks a user-supplied horizon against the supported window.
pub fn validate_horizon(horizon_days: usize) -> Result<usize, IndustryError> {
    if (MIN_HORIZON_DAYS..=MAX_HORIZON_DAYS).contains(&horizon_days) {
        Ok(horizon_days)
    } else {
        Err(IndustryError::HorizonOutOfRange(horizon_days))
    }
}

/// Per-member z-score parameters over the common range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: f64,
    /// Population std; 1.0 when the member's signal is constant over the range.
    pub scale: f64,
}

impl Normalization {
    fn fit(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let constant = values.iter().all(|v| *v == values[0]);
        Self {
            mean,
            scale: if constant || var == 0.0 { 1.0 } else { var.sqrt() },
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActualTrend {
    pub dates: Vec<NaiveDate>,
    pub values: Vec<f64>,
    pub normalization: HashMap<String, Normalization>,
}

fn signal_index(matrix: &FactorMatrix, factor: &str, member: &str) -> Result<usize, IndustryError> {
    matrix
        .column_index(factor)
        .ok_or_else(|| IndustryError::MissingFactor {
            member: member.to_string(),
            factor: factor.to_string(),
        })
}

/// Weighted sum of z-scored member signals over the dates every member has.
pub fn actual_trend(
    panel: &IndustryPanel,
    matrices: &HashMap<String, FactorMatrix>,
) -> Result<ActualTrend, IndustryError> {
    let members = panel.sorted_members();
    let mut common: Option<BTreeSet<NaiveDate>> = None;
    for (id, _) in &members {
        let m = matrices
            .get(id)
            .ok_or_else(|| IndustryError::MissingMember(id.clone()))?;
        signal_index(m, &panel.signal_factor, id)?;
        let dates: BTreeSet<NaiveDate> = m.dates().iter().copied().collect();
        common = Some(match common {
            None => dates,
            Some(c) => c.intersection(&dates).copied().collect(),
        });
    }
    let dates: Vec<NaiveDate> = common.unwrap_or_default().into_iter().collect();
    if dates.is_empty() {
        return Err(IndustryError::EmptyIntersection);
    }

    let mut values = vec![0.0; dates.len()];
    let mut normalization = HashMap::new();
    for (id, weight) in &members {
        let m = &matrices[id];
        let col = signal_index(m, &panel.signal_factor, id)?;
        let series = member_values_on(m, col, &dates);
        let norm = Normalization::fit(&series);
        for (acc, v) in values.iter_mut().zip(&series) {
            *acc += weight * norm.apply(*v);
        }
        normalization.insert(id.clone(), norm);
    }
    Ok(ActualTrend {
        dates,
        values,
        normalization,
    })
}

fn member_values_on(m: &FactorMatrix, col: usize, dates: &[NaiveDate]) -> Vec<f64> {
    // dates is a sorted subset of m.dates()
    let mut out = Vec::with_capacity(dates.len());
    let mut j = 0;
    for (d, row) in m.dates().iter().zip(m.rows()) {
        if j < dates.len() && *d == dates[j] {
            out.push(row[col]);
            j += 1;
        }
    }
    out
}

/// Weighted sum over members of their normalized, noiseless signal forecasts for steps
/// `1..=horizon_days`.
pub fn expected_trend(
    panel: &IndustryPanel,
    banks: &HashMap<String, FactorModelBank>,
    initial_states: &HashMap<String, Vec<f64>>,
    actual: &ActualTrend,
    horizon_days: usize,
) -> Result<Vec<f64>, IndustryError> {
    if horizon_days == 0 {
        return Err(IndustryError::ZeroHorizon);
    }
    let members = panel.sorted_members();
    let paths = members
        .par_iter()
        .map(|(id, _)| {
            let bank = banks
                .get(id)
                .ok_or_else(|| IndustryError::MissingBank(id.clone()))?;
            let col = bank
                .factor_index(&panel.signal_factor)
                .ok_or_else(|| IndustryError::MissingFactor {
                    member: id.clone(),
                    factor: panel.signal_factor.clone(),
                })?;
            let init = initial_states
                .get(id)
                .ok_or_else(|| IndustryError::MissingMember(id.clone()))?;
            let path = forecast(bank, init, horizon_days).map_err(|source| IndustryError::Member {
                member: id.clone(),
                source,
            })?;
            Ok(path.predicted(col))
        })
        .collect::<Result<Vec<_>, IndustryError>>()?;

    let mut out = vec![0.0; horizon_days];
    for ((id, weight), path) in members.iter().zip(paths) {
        let norm = actual
            .normalization
            .get(id)
            .ok_or_else(|| IndustryError::MissingMember(id.clone()))?;
        for (acc, v) in out.iter_mut().zip(path) {
            *acc += weight * norm.apply(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndustryTrend {
    pub industry_name: String,
    pub dates: Vec<NaiveDate>,
    pub actual: Vec<f64>,
    pub expected: Vec<f64>,
    pub horizon_days: usize,
}

impl IndustryTrend {
    /// `segment,label,value`: actual rows labelled by date, expected rows by day `1..=h`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("segment,label,value\n");
        for (d, v) in self.dates.iter().zip(&self.actual) {
            let _ = writeln!(out, "actual,{},{v}", d.format("%Y-%m-%d"));
        }
        for (i, v) in self.expected.iter().enumerate() {
            let _ = writeln!(out, "expected,{},{v}", i + 1);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Uncertain,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Rising => "rising",
            Self::Falling => "falling",
            Self::Uncertain => "uncertain",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendAssessment {
    pub direction: Direction,
    pub actual_slope: f64,
    pub expected_slope: f64,
    pub volatility: f64,
}

impl fmt::Display for TrendAssessment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "direction={} actual_slope={:.6} expected_slope={:.6} volatility={:.6}",
            self.direction, self.actual_slope, self.expected_slope, self.volatility
        )
    }
}

/// Least-squares slope against the index; returns exactly 0 when the fitted change over
/// the series is at rounding level.
fn slope(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dt = i as f64 - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let s = sxy / sxx;
    let magnitude = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    if (s * n).abs() <= 1e-12 * magnitude {
        0.0
    } else {
        s
    }
}

pub fn assess(trend: &IndustryTrend) -> Result<TrendAssessment, IndustryError> {
    assess_with(trend, DEFAULT_VOLATILITY_THRESHOLD)
}

/// Rising when both slopes are positive, falling when both are negative, otherwise (or when
/// volatility exceeds the threshold) uncertain. A single expected point is compared with
/// the last actual value.
pub fn assess_with(trend: &IndustryTrend, volatility_threshold: f64) -> Result<TrendAssessment, IndustryError> {
    let actual = &trend.actual;
    if actual.len() < 2 {
        return Err(IndustryError::TooShort(actual.len()));
    }
    let actual_slope = slope(actual);
    let expected_slope = match trend.expected.len() {
        0 => 0.0,
        1 => slope(&[actual[actual.len() - 1], trend.expected[0]]),
        _ => slope(&trend.expected),
    };
    let diffs: Vec<f64> = actual.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let volatility = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();

    let direction = if volatility > volatility_threshold {
        Direction::Uncertain
    } else if actual_slope > 0.0 && expected_slope > 0.0 {
        Direction::Rising
    } else if actual_slope < 0.0 && expected_slope < 0.0 {
        Direction::Falling
    } else {
        Direction::Uncertain
    };
    Ok(TrendAssessment {
        direction,
        actual_slope,
        expected_slope,
        volatility,
    })
}

/// Result of [`analyze`]: both curves plus the member banks that produced the forecast.
#[derive(Debug, Clone)]
pub struct IndustryAnalysis {
    pub trend: IndustryTrend,
    pub assessment: TrendAssessment,
    pub banks: HashMap<String, FactorModelBank>,
}

/// Factors, banks, both curves and the assessment from raw member prices. Each member's
/// forecast starts from its state on the last common date.
pub fn analyze(
    panel: &IndustryPanel,
    prices: &HashMap<String, PriceSeries>,
    specs: &[FactorSpec],
    bank_config: &BankConfig,
) -> Result<IndustryAnalysis, IndustryError> {
    let members = panel.sorted_members();
    let fitted = members
        .par_iter()
        .map(|(id, _)| {
            let series = prices
                .get(id)
                .ok_or_else(|| IndustryError::MissingMember(id.clone()))?;
            let matrix = compute_factors(series, specs).map_err(|source| IndustryError::MemberIngest {
                member: id.clone(),
                source,
            })?;
            let bank = fit_bank_with(&matrix, bank_config).map_err(|source| IndustryError::Member {
                member: id.clone(),
                source,
            })?;
            Ok((id.clone(), matrix, bank))
        })
        .collect::<Result<Vec<_>, IndustryError>>()?;

    let mut matrices = HashMap::new();
    let mut banks = HashMap::new();
    for (id, matrix, bank) in fitted {
        matrices.insert(id.clone(), matrix);
        banks.insert(id, bank);
    }
    let actual = actual_trend(panel, &matrices)?;
    let last = *actual.dates.last().expect("non-empty intersection");
    let initial_states: HashMap<String, Vec<f64>> = matrices
        .iter()
        .map(|(id, m)| {
            let row = m.dates().iter().position(|d| *d == last).expect("common date");
            (id.clone(), m.rows()[row].clone())
        })
        .collect();
    let horizon = panel.horizon_days();
    let expected = expected_trend(panel, &banks, &initial_states, &actual, horizon)?;
    let trend = IndustryTrend {
        industry_name: panel.industry_name().to_string(),
        dates: actual.dates,
        actual: actual.values,
        expected,
        horizon_days: horizon,
    };
    let assessment = assess(&trend)?;
    Ok(IndustryAnalysis {
        trend,
        assessment,
        banks,
    })
}
