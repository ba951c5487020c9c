//! `indtrend`: fit factor banks, roll forecasts, aggregate industries, score backtests and
//! probe a language model from the command line.
//!
//! Exit codes: 0 on success, 1 on a user or data error (one line on stderr), 2 when an
//! internal invariant fails.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use indtrend::evaluation::{backtest, noise_protocol, r_squared, BacktestConfig, NoiseProtocolReport};
use indtrend::industry::{analyze, validate_horizon, IndustryPanel};
use indtrend::lm_probe::{
    build_prompt, detokenize, generate_greedy, read_corpus, sequence_logprob, serve_model, tokenize,
    train_ngram, LanguageModel, NgramModel, ProcessBackend, PromptTemplate, TokenSeq, Vocab, EOS,
};
use indtrend::recursive_forecast::{fit_bank_with, forecast, forecast_noisy, BankConfig, FactorModelBank, NoiseConfig};
use indtrend::{compute_factors, parse_price_csv, FactorMatrix, FactorSpec, PriceSeries};

const DEFAULT_FACTORS: &str = "close,return_1,sma_5,sma_20,volatility_20,momentum_10";
const DEFAULT_LAMBDAS: &str = "0.0001,0.001,0.01,0.1";

#[derive(Parser)]
#[command(name = "indtrend", version, about = "Industry-trend analysis from stock-market data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model per factor and write the bank with its starting state.
    Fit(FitArgs),
    /// Roll a fitted bank forward, optionally with seeded noise.
    Forecast(ForecastArgs),
    /// Aggregate member companies into actual and expected industry trends.
    Industry(IndustryArgs),
    /// Out-of-sample backtest, optionally repeated under noise.
    Evaluate(EvaluateArgs),
    /// Greedy continuation of an event-conditioned prompt.
    Probe(ProbeArgs),
    /// Answer next-token queries for an n-gram model over stdin/stdout until EOF.
    ServeLm(ServeArgs),
}

#[derive(Args)]
struct BankArgs {
    /// Comma-separated factor names.
    #[arg(long, default_value = DEFAULT_FACTORS)]
    factors: String,
    /// Comma-separated Lasso penalties; OLS is always a candidate.
    #[arg(long, default_value = DEFAULT_LAMBDAS)]
    lambdas: String,
    /// Share of supervised pairs held out for model selection.
    #[arg(long, default_value_t = 0.2)]
    val_fraction: f64,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    prices: PathBuf,
    #[command(flatten)]
    bank: BankArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NoiseArgs {
    /// Shock amplitude applied to every factor.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = NoiseConfig::DEFAULT_T1)]
    t1: f64,
    #[arg(long, default_value_t = NoiseConfig::DEFAULT_T2)]
    t2: f64,
    /// Base seed; required whenever noise or repeated runs are requested.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Price CSV continuing past the model's state date; scores every run with --runs.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value = "close")]
    target: String,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the per-run report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct IndustryArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Directory holding `<entity_id>.csv` for every member.
    #[arg(long)]
    prices_dir: PathBuf,
    /// Overrides the panel's horizon (trading days, 60 to 126).
    #[arg(long)]
    horizon: Option<usize>,
    #[command(flatten)]
    bank: BankArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    prices: PathBuf,
    #[command(flatten)]
    bank: BankArgs,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value = "close")]
    target: String,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Where to write the `step,truth,predict` series.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write the per-run report CSV.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct LmArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 0.01)]
    k: f64,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    lm: LmArgs,
    #[arg(long, default_value = "")]
    event: String,
    #[arg(long)]
    question: String,
    #[arg(long, default_value = "Answer:")]
    task_form: String,
    #[arg(long, default_value_t = 10)]
    max_new: usize,
    /// External backend command speaking the JSON-lines protocol; its vocabulary must match
    /// the one built from --corpus.
    #[arg(long, num_args = 1.., allow_hyphen_values = true)]
    backend: Option<Vec<String>>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    lm: LmArgs,
}

/// Failure in user input or data; reported as one line with exit code 1.
struct UserError(String);

impl<E: std::fmt::Display> From<E> for UserError {
    fn from(e: E) -> Self {
        Self(e.to_string())
    }
}

type CliResult<T> = Result<T, UserError>;

fn fail(msg: impl Into<String>) -> UserError {
    UserError(msg.into())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| fail(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| fail(format!("cannot write {}: {e}", path.display())))
}

fn load_prices(path: &Path) -> CliResult<PriceSeries> {
    let text = read_text(path)?;
    let entity = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    parse_price_csv(entity, &text).map_err(|e| fail(format!("{}: {e}", path.display())))
}

fn parse_floats(list: &str, what: &str) -> CliResult<Vec<f64>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| fail(format!("bad {what} value '{s}'"))))
        .collect()
}

impl BankArgs {
    fn specs(&self) -> CliResult<Vec<FactorSpec>> {
        let specs = FactorSpec::parse_list(&self.factors)?;
        if specs.is_empty() {
            return Err(fail("--factors is empty"));
        }
        Ok(specs)
    }

    fn config(&self) -> CliResult<BankConfig> {
        let grid = parse_floats(&self.lambdas, "lambda")?;
        if let Some(l) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(fail(format!("lambda must be finite and >= 0, got {l}")));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(fail(format!("--val-fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        Ok(BankConfig::new(grid, self.val_fraction))
    }
}

impl NoiseArgs {
    /// `None` when no noise flag was given.
    fn config(&self, n_factors: usize) -> CliResult<Option<(NoiseConfig, Option<usize>)>> {
        if self.alpha.is_none() && self.runs.is_none() {
            return Ok(None);
        }
        let seed = self
            .seed
            .ok_or_else(|| fail("--seed is required with --alpha or --runs"))?;
        if self.runs == Some(0) {
            return Err(fail("--runs must be >= 1"));
        }
        let mut config = NoiseConfig::uniform(n_factors, self.alpha.unwrap_or(0.0), seed);
        config.t1 = self.t1;
        config.t2 = self.t2;
        config.validate()?;
        Ok(Some((config, self.runs)))
    }
}

/// Model file: the state the forecast starts from, then the bank text.
struct ModelFile {
    state_date: NaiveDate,
    state: Vec<f64>,
    bank: FactorModelBank,
}

impl ModelFile {
    fn to_text(&self) -> String {
        let state: Vec<String> = self.state.iter().map(f64::to_string).collect();
        format!(
            "state_date = {}\nstate = {}\n{}",
            self.state_date.format("%Y-%m-%d"),
            state.join(","),
            self.bank.to_text()
        )
    }

    fn parse(text: &str, path: &Path) -> CliResult<Self> {
        let bad = |what: &str| fail(format!("{}: {what}", path.display()));
        let field = |key: &str| {
            text.lines()
                .take_while(|l| !l.trim_start().starts_with("[model]"))
                .filter_map(|l| l.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
        };
        let date = field("state_date").ok_or_else(|| bad("missing state_date"))?;
        let state_date =
            NaiveDate::parse_from_str(date, "%Y-%m-%d").map_err(|_| bad("bad state_date"))?;
        let state = parse_floats(field("state").ok_or_else(|| bad("missing state"))?, "state")?;
        let bank = FactorModelBank::from_text(text).map_err(|e| bad(&e.to_string()))?;
        if state.len() != bank.n_factors() {
            return Err(bad("state length does not match the factor list"));
        }
        Ok(Self {
            state_date,
            state,
            bank,
        })
    }
}

fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let specs = args.bank.specs()?;
    let config = args.bank.config()?;
    let series = load_prices(&args.prices)?;
    let matrix = compute_factors(&series, &specs)?;
    let bank = fit_bank_with(&matrix, &config)?;
    let state = matrix.last_row().expect("fitted matrix has rows").to_vec();
    let state_date = *matrix.dates().last().expect("fitted matrix has rows");
    let model = ModelFile {
        state_date,
        state,
        bank,
    };
    write_text(&args.out, &model.to_text())?;

    let mut out = String::from("factor,kind,lambda,val_r2\n");
    for sel in model.bank.selection_report() {
        let _ = writeln!(out, "{},{},{},{:.6}", sel.factor, sel.kind.as_str(), sel.lambda, sel.val_r2);
    }
    print!("{out}");
    Ok(())
}

/// Target values on the first `horizon` dates after `after`, computed with the model's
/// factor definitions over the whole truth file.
fn truth_after(
    path: &Path,
    bank: &FactorModelBank,
    target: &str,
    after: NaiveDate,
    horizon: usize,
) -> CliResult<Vec<f64>> {
    let specs = bank
        .factor_order()
        .iter()
        .map(|n| n.parse::<FactorSpec>())
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = compute_factors(&load_prices(path)?, &specs)?;
    let idx = matrix
        .column_index(target)
        .ok_or_else(|| fail(format!("unknown target factor '{target}'")))?;
    let truth: Vec<f64> = matrix
        .dates()
        .iter()
        .zip(matrix.rows())
        .filter(|(d, _)| **d > after)
        .take(horizon)
        .map(|(_, r)| r[idx])
        .collect();
    if truth.len() < horizon {
        return Err(fail(format!(
            "{} has {} rows after {after}, horizon needs {horizon}",
            path.display(),
            truth.len()
        )));
    }
    Ok(truth)
}

fn cmd_forecast(args: &ForecastArgs) -> CliResult<()> {
    if args.horizon == 0 {
        return Err(fail("--horizon must be >= 1"));
    }
    let model = ModelFile::parse(&read_text(&args.model)?, &args.model)?;
    let bank = &model.bank;
    let noise = args.noise.config(bank.n_factors())?;
    let target_idx = bank
        .factor_index(&args.target)
        .ok_or_else(|| fail(format!("unknown target factor '{}'", args.target)))?;

    let (config, runs) = match noise {
        None => {
            let path = forecast(bank, &model.state, args.horizon)?;
            return write_text(&args.out, &path.to_csv());
        }
        Some(n) => n,
    };
    let Some(runs) = runs else {
        let path = forecast_noisy(bank, &model.state, args.horizon, &config)?;
        return write_text(&args.out, &path.to_csv());
    };
    let truth_path = args
        .truth
        .as_ref()
        .ok_or_else(|| fail("--runs needs --truth to score each run"))?;
    let truth = truth_after(truth_path, bank, &args.target, model.state_date, args.horizon)?;

    let noiseless = forecast(bank, &model.state, args.horizon)?;
    let noiseless_r2 = r_squared(&truth, &noiseless.predicted(target_idx))?;
    let mut paths = String::new();
    let mut per_run = Vec::with_capacity(runs);
    for r in 0..runs as u64 {
        let seed = config.seed.wrapping_add(r);
        let path = forecast_noisy(bank, &model.state, args.horizon, &config.with_seed(seed))?;
        per_run.push((seed, r_squared(&truth, &path.predicted(target_idx))?));
        paths.push_str(&path.to_csv());
    }
    write_text(&args.out, &paths)?;
    let report = NoiseProtocolReport::from_runs(&args.target, args.horizon, noiseless_r2, per_run);
    if let Some(p) = &args.report {
        write_text(p, &report.to_csv())?;
    }
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_industry(args: &IndustryArgs) -> CliResult<()> {
    let mut panel = IndustryPanel::parse(&read_text(&args.panel)?)
        .map_err(|e| fail(format!("{}: {e}", args.panel.display())))?;
    let horizon = validate_horizon(args.horizon.unwrap_or(panel.horizon_days()))?;
    panel = panel.with_horizon(horizon);
    let specs = args.bank.specs()?;
    let config = args.bank.config()?;

    let mut prices = HashMap::new();
    for (id, _) in panel.members() {
        let path = args.prices_dir.join(format!("{id}.csv"));
        if !path.is_file() {
            return Err(fail(format!("member '{id}': missing price file {}", path.display())));
        }
        prices.insert(id.clone(), load_prices(&path)?);
    }
    let analysis = analyze(&panel, &prices, &specs, &config)?;
    write_text(&args.out, &analysis.trend.to_csv())?;
    println!("{}: {}", panel.industry_name(), analysis.assessment);
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let specs = args.bank.specs()?;
    let mut config = BacktestConfig::new(args.train_fraction, Vec::new(), args.horizon);
    config.bank = args.bank.config()?;
    let matrix: FactorMatrix = compute_factors(&load_prices(&args.prices)?, &specs)?;
    let report = backtest(&matrix, &args.target, &config)?;
    if let Some(p) = &args.out {
        write_text(p, &report.series_csv())?;
    }
    print!("{}", report.to_text());

    if let Some((noise, runs)) = args.noise.config(matrix.n_factors())? {
        let runs = runs.unwrap_or(1);
        let protocol = noise_protocol(&matrix, &args.target, &config, &noise, runs)?;
        if let Some(p) = &args.report {
            write_text(p, &protocol.to_csv())?;
        }
        print!("{}", protocol.to_text());
    }
    Ok(())
}

fn train_from_corpus(lm: &LmArgs) -> CliResult<(Vocab, NgramModel)> {
    let text = read_text(&lm.corpus)?;
    let docs = read_corpus(&text);
    let vocab = Vocab::build(docs.iter().copied());
    let seqs: Vec<TokenSeq> = docs.iter().map(|d| tokenize(d, &vocab)).collect();
    let model = train_ngram(&seqs, vocab.len(), lm.order, lm.k)
        .map_err(|e| fail(format!("{}: {e}", lm.corpus.display())))?;
    Ok((vocab, model))
}

fn run_probe<M: LanguageModel>(model: &M, vocab: &Vocab, args: &ProbeArgs) -> CliResult<()> {
    let template = PromptTemplate::new(&args.event, &args.question, &args.task_form);
    let prompt = build_prompt(&template, vocab)?;
    let continuation = generate_greedy(model, &prompt, args.max_new)?;
    let logprob = sequence_logprob(model, &prompt.concat(&continuation))?;
    println!("prompt: {}", template.render()?.replace('\n', " | "));
    println!("continuation: {}", detokenize(&continuation, vocab));
    println!("logprob: {logprob:.6}");
    Ok(())
}

fn cmd_probe(args: &ProbeArgs) -> CliResult<()> {
    if args.max_new == 0 {
        return Err(fail("--max-new must be >= 1"));
    }
    let (vocab, model) = train_from_corpus(&args.lm)?;
    match &args.backend {
        None => run_probe(&model, &vocab, args),
        Some(cmd) => {
            let backend = ProcessBackend::spawn(&cmd[0], &cmd[1..], Some(EOS))?;
            if backend.vocab_size() != vocab.len() {
                return Err(fail(format!(
                    "backend vocabulary has {} tokens, corpus has {}",
                    backend.vocab_size(),
                    vocab.len()
                )));
            }
            run_probe(&backend, &vocab, args)
        }
    }
}

fn cmd_serve(args: &ServeArgs) -> CliResult<()> {
    let (_, model) = train_from_corpus(&args.lm)?;
    let stdin = io::stdin().lock();
    let stdout = BufWriter::new(io::stdout().lock());
    serve_model(&model, stdin, stdout)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Industry(a) => cmd_industry(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Probe(a) => cmd_probe(a),
        Command::ServeLm(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    std::panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match std::panic::catch_unwind(|| dispatch(&cli)) {
        Ok(Ok(())) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Ok(Err(UserError(msg))) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(_) => ExitCode::from(2),
    }
}
