//! Price CSV parsing, factor derivation and supervised-pair assembly.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum IngestError {
    #[error("empty input: no data rows")]
    Empty,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate date {date}")]
    DuplicateDate { line: usize, date: NaiveDate },
    #[error("line {line}: {reason}")]
    BarInvariant { line: usize, reason: String },
    #[error("unknown factor kind '{0}'")]
    UnknownFactor(String),
    #[error("invalid window {window} for factor '{name}'")]
    InvalidWindow { name: String, window: usize },
    #[error("too few rows: factor '{name}' needs at least {needed} rows, series has {have}")]
    WindowTooLarge {
        name: String,
        needed: usize,
        have: usize,
    },
    #[error("too few rows: need at least {needed}, have {have}")]
    TooFewRows { needed: usize, have: usize },
    #[error("train fraction {fraction} leaves an empty split of {rows} rows")]
    EmptySplit { fraction: f64, rows: usize },
    #[error("non-finite factor value at row {row}, column '{name}'")]
    NonFinite { row: usize, name: String },
    #[error("{0}")]
    Shape(String),
}

/// One daily OHLCV observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl PriceBar {
    pub fn validate(&self) -> Result<(), String> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err("prices must be finite and positive".into());
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err("volume must be finite and non-negative".into());
        }
        if self.high < self.low {
            return Err(format!("high {} < low {}", self.high, self.low));
        }
        if self.open < self.low || self.open > self.high {
            return Err(format!("open {} outside [low, high]", self.open));
        }
        if self.close < self.low || self.close > self.high {
            return Err(format!("close {} outside [low, high]", self.close));
        }
        Ok(())
    }
}

/// Bars for one listed entity, strictly increasing in date.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    entity_id: String,
    bars: Vec<PriceBar>,
}

impl PriceSeries {
    /// Builds a series from bars in any order. Rejects empty input and duplicate dates.
    pub fn new(entity_id: impl Into<String>, mut bars: Vec<PriceBar>) -> Result<Self, IngestError> {
        if bars.is_empty() {
            return Err(IngestError::Empty);
        }
        for (i, bar) in bars.iter().enumerate() {
            bar.validate()
                .map_err(|reason| IngestError::BarInvariant { line: i + 1, reason })?;
        }
        bars.sort_by_key(|b| b.date);
        if let Some(w) = bars.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(IngestError::DuplicateDate {
                line: 0,
                date: w[0].date,
            });
        }
        Ok(Self {
            entity_id: entity_id.into(),
            bars,
        })
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn bars(&self) -> &[PriceBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }
}

const HEADER: [&str; 6] = ["date", "open", "high", "low", "close", "volume"];

/// Parses `date,open,high,low,close,volume` CSV text. Line numbers in errors are 1-based
/// and count the header.
pub fn parse_price_csv(entity_id: &str, text: &str) -> Result<PriceSeries, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(IngestError::Empty),
        Some(rec) => rec.map_err(|e| IngestError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?,
    };
    let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != HEADER {
        return Err(IngestError::Malformed {
            line: 1,
            reason: format!("expected header '{}', got '{}'", HEADER.join(","), names.join(",")),
        });
    }

    let mut bars = Vec::new();
    let mut seen: HashSet<NaiveDate> = HashSet::new();
    for rec in records {
        let rec = rec.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        if rec.len() != HEADER.len() {
            return Err(IngestError::Malformed {
                line,
                reason: format!("expected {} fields, got {}", HEADER.len(), rec.len()),
            });
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d").map_err(|e| {
            IngestError::Malformed {
                line,
                reason: format!("bad date '{}': {e}", &rec[0]),
            }
        })?;
        let num = |idx: usize| -> Result<f64, IngestError> {
            rec[idx].parse::<f64>().map_err(|_| IngestError::Malformed {
                line,
                reason: format!("bad number '{}' in column '{}'", &rec[idx], HEADER[idx]),
            })
        };
        let bar = PriceBar {
            date,
            open: num(1)?,
            high: num(2)?,
            low: num(3)?,
            close: num(4)?,
            volume: num(5)?,
        };
        bar.validate()
            .map_err(|reason| IngestError::BarInvariant { line, reason })?;
        if !seen.insert(date) {
            return Err(IngestError::DuplicateDate { line, date });
        }
        bars.push(bar);
    }
    if bars.is_empty() {
        return Err(IngestError::Empty);
    }
    bars.sort_by_key(|b| b.date);
    Ok(PriceSeries {
        entity_id: entity_id.to_string(),
        bars,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FactorKind {
    Close,
    Return1,
    LogReturn1,
    /// Simple moving average of close.
    Sma,
    /// Population standard deviation of `return_1` over the window.
    Volatility,
    /// `close_t / close_{t-k} - 1`.
    Momentum,
}

impl FactorKind {
    pub fn is_windowed(self) -> bool {
        matches!(self, Self::Sma | Self::Volatility | Self::Momentum)
    }

    fn prefix(self) -> &'static str {
        match self {
            Self::Close => "close",
            Self::Return1 => "return_1",
            Self::LogReturn1 => "log_return_1",
            Self::Sma => "sma",
            Self::Volatility => "volatility",
            Self::Momentum => "momentum",
        }
    }
}

/// A named factor derived from a price series.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FactorSpec {
    pub name: String,
    pub kind: FactorKind,
    pub window: usize,
}

impl FactorSpec {
    pub fn new(kind: FactorKind, window: usize) -> Result<Self, IngestError> {
        let name = if kind.is_windowed() {
            format!("{}_{}", kind.prefix(), window)
        } else {
            kind.prefix().to_string()
        };
        if window == 0 || (!kind.is_windowed() && window != 1) {
            return Err(IngestError::InvalidWindow { name, window });
        }
        Ok(Self { name, kind, window })
    }

    /// Leading rows for which this factor is undefined.
    pub fn warm_up(&self) -> usize {
        match self.kind {
            FactorKind::Close => 0,
            FactorKind::Return1 | FactorKind::LogReturn1 => 1,
            FactorKind::Sma => self.window - 1,
            FactorKind::Volatility | FactorKind::Momentum => self.window,
        }
    }

    /// `close, return_1, sma_5, sma_20, volatility_20, momentum_10`.
    pub fn default_set() -> Vec<FactorSpec> {
        ["close", "return_1", "sma_5", "sma_20", "volatility_20", "momentum_10"]
            .iter()
            .map(|s| s.parse().expect("default factor names are valid"))
            .collect()
    }

    /// Parses a comma-separated list such as `close,sma_5,momentum_10`.
    pub fn parse_list(list: &str) -> Result<Vec<FactorSpec>, IngestError> {
        list.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl FromStr for FactorSpec {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "close" => return FactorSpec::new(FactorKind::Close, 1),
            "return_1" => return FactorSpec::new(FactorKind::Return1, 1),
            "log_return_1" => return FactorSpec::new(FactorKind::LogReturn1, 1),
            _ => {}
        }
        let (prefix, window) = s
            .rsplit_once('_')
            .ok_or_else(|| IngestError::UnknownFactor(s.to_string()))?;
        let kind = match prefix {
            "sma" => FactorKind::Sma,
            "volatility" => FactorKind::Volatility,
            "momentum" => FactorKind::Momentum,
            _ => return Err(IngestError::UnknownFactor(s.to_string())),
        };
        let window: usize = window
            .parse()
            .map_err(|_| IngestError::UnknownFactor(s.to_string()))?;
        FactorSpec::new(kind, window)
    }
}

impl fmt::Display for FactorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Time-indexed factor values for one entity. Rows are time steps, columns are factors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    entity_id: String,
    dates: Vec<NaiveDate>,
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl FactorMatrix {
    pub fn new(
        entity_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, IngestError> {
        if dates.len() != rows.len() {
            return Err(IngestError::Shape(format!(
                "{} dates for {} rows",
                dates.len(),
                rows.len()
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != names.len()) {
            return Err(IngestError::Shape(format!(
                "row {i} has {} values for {} factors",
                rows[i].len(),
                names.len()
            )));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(IngestError::Shape("dates must be strictly increasing".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(IngestError::NonFinite {
                    row: i,
                    name: names[j].clone(),
                });
            }
        }
        Ok(Self {
            entity_id: entity_id.into(),
            dates,
            names,
            rows,
        })
    }

    pub fn entity_id(&self) -> &str {
        &self.entity_id
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_factors(&self) -> usize {
        self.names.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[idx]).collect()
    }

    pub fn last_row(&self) -> Option<&[f64]> {
        self.rows.last().map(Vec::as_slice)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            entity_id: self.entity_id.clone(),
            dates: self.dates[range.clone()].to_vec(),
            names: self.names.clone(),
            rows: self.rows[range].to_vec(),
        }
    }

    /// `date,<factor>,...` with one row per time step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("date");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (d, row) in self.dates.iter().zip(&self.rows) {
            out.push_str(&d.format("%Y-%m-%d").to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Derives the requested factor columns and drops warm-up rows.
pub fn compute_factors(
    series: &PriceSeries,
    specs: &[FactorSpec],
) -> Result<FactorMatrix, IngestError> {
    if specs.is_empty() {
        return Err(IngestError::Shape("no factors requested".into()));
    }
    let closes = series.closes();
    let len = closes.len();
    for spec in specs {
        if spec.window == 0 {
            return Err(IngestError::InvalidWindow {
                name: spec.name.clone(),
                window: spec.window,
            });
        }
        if spec.warm_up() >= len || spec.window > len {
            return Err(IngestError::WindowTooLarge {
                name: spec.name.clone(),
                needed: spec.warm_up() + 1,
                have: len,
            });
        }
    }
    let warm_up = specs.iter().map(FactorSpec::warm_up).max().unwrap_or(0);

    let returns: Vec<f64> = std::iter::once(f64::NAN)
        .chain(closes.windows(2).map(|w| w[1] / w[0] - 1.0))
        .collect();

    let columns: Vec<Vec<f64>> = specs
        .iter()
        .map(|spec| factor_column(spec, &closes, &returns))
        .collect();

    let mut rows = Vec::with_capacity(len - warm_up);
    for t in warm_up..len {
        let row: Vec<f64> = columns.iter().map(|c| c[t]).collect();
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFinite {
                row: t - warm_up,
                name: specs[j].name.clone(),
            });
        }
        rows.push(row);
    }
    let dates = series.bars()[warm_up..].iter().map(|b| b.date).collect();
    let names = specs.iter().map(|s| s.name.clone()).collect();
    FactorMatrix::new(series.entity_id(), dates, names, rows)
}

/// Full-length column with NaN in the warm-up region.
fn factor_column(spec: &FactorSpec, closes: &[f64], returns: &[f64]) -> Vec<f64> {
    let len = closes.len();
    let k = spec.window;
    let mut col = vec![f64::NAN; len];
    match spec.kind {
        FactorKind::Close => col.copy_from_slice(closes),
        FactorKind::Return1 => col.copy_from_slice(returns),
        FactorKind::LogReturn1 => {
            for t in 1..len {
                col[t] = (closes[t] / closes[t - 1]).ln();
            }
        }
        FactorKind::Sma => {
            for t in (k - 1)..len {
                col[t] = closes[t + 1 - k..=t].iter().sum::<f64>() / k as f64;
            }
        }
        FactorKind::Volatility => {
            for t in k..len {
                let w = &returns[t + 1 - k..=t];
                let mean = w.iter().sum::<f64>() / k as f64;
                let var = w.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k as f64;
                col[t] = var.sqrt();
            }
        }
        FactorKind::Momentum => {
            for t in k..len {
                col[t] = closes[t] / closes[t - k] - 1.0;
            }
        }
    }
    col
}

/// Consecutive-state pairs: `inputs[j]` is the state at step j, `targets[j]` the state at j+1.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSet {
    pub names: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl SupervisedSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Target column for factor `idx`.
    pub fn target_column(&self, idx: usize) -> Vec<f64> {
        self.targets.iter().map(|r| r[idx]).collect()
    }

    /// Chronological split into the first `head` pairs and the rest.
    pub fn split_at(&self, head: usize) -> (SupervisedSet, SupervisedSet) {
        let part = |r: std::ops::Range<usize>| SupervisedSet {
            names: self.names.clone(),
            inputs: self.inputs[r.clone()].to_vec(),
            targets: self.targets[r].to_vec(),
        };
        (part(0..head), part(head..self.len()))
    }
}

pub fn make_supervised(matrix: &FactorMatrix) -> Result<SupervisedSet, IngestError> {
    let rows = matrix.rows();
    if rows.len() < 2 {
        return Err(IngestError::TooFewRows {
            needed: 2,
            have: rows.len(),
        });
    }
    Ok(SupervisedSet {
        names: matrix.names().to_vec(),
        inputs: rows[..rows.len() - 1].to_vec(),
        targets: rows[1..].to_vec(),
    })
}

/// Chronological split: the first `floor(T * train_fraction)` rows train, the rest test.
pub fn split_train_test(
    matrix: &FactorMatrix,
    train_fraction: f64,
) -> Result<(FactorMatrix, FactorMatrix), IngestError> {
    let rows = matrix.n_rows();
    let head = split_point(rows, train_fraction)
        .ok_or(IngestError::EmptySplit {
            fraction: train_fraction,
            rows,
        })?;
    Ok((matrix.slice(0..head), matrix.slice(head..rows)))
}

/// Head length for a fractional split, or `None` when either side would be empty.
pub(crate) fn split_point(rows: usize, fraction: f64) -> Option<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return None;
    }
    // The epsilon keeps e.g. 100 * 0.29 from rounding down to 28.
    let head = (rows as f64 * fraction + 1e-9).floor() as usize;
    (head >= 1 && head < rows).then_some(head)
}
