//! `modeflow` command line.
//!
//! Endpoints and credentials for live backends come from the environment:
//! `MODEFLOW_CHAT_URL`, `MODEFLOW_CHAT_API_KEY`, `MODEFLOW_CHAT_MODEL` for the
//! argument agents and `MODEFLOW_EMBED_URL`, `MODEFLOW_EMBED_API_KEY`,
//! `MODEFLOW_EMBED_MODEL` for the text encoder.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modeflow::alignment::{align_mode_sets, align_modes, brute_force_align, ModeAlignment};
use modeflow::backtest::{run_backtest, IndexSeries};
use modeflow::extraction::synthetic::{synthesize_arguments, SyntheticSpec};
use modeflow::extraction::{store, AgentBackend, EchoBackend, ExtractionOptions, PromptSet};
use modeflow::market::{read_universe, write_universe, PriceTable};
use modeflow::modes::DailyModeSet;
use modeflow::pipeline::{
    export, summarize, ArgumentSource, ArgumentSourceKind, EncoderKind, ExtractedArguments, Pipeline,
    ProjectionMode, RunConfig, StateStore,
};
use modeflow::signal::{build_portfolio, read_signals_csv, read_weights_csv, signals_by_day, PortfolioWeights};
use modeflow::lifecycle::RegimeCalendar;
use modeflow::Day;

#[derive(Parser)]
#[command(name = "modeflow", version, about = "Mode discovery, tracking and backtesting over investment arguments")]
struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn raw documents (JSONL) into an arguments file.
    Extract(ExtractArgs),
    /// Run the full pipeline over a date range.
    Run(RunArgs),
    /// Backtest a signals file (and optionally its weights).
    Backtest(BacktestArgs),
    /// Rebuild reports and lifecycle tables from a state directory.
    Report(ReportArgs),
    /// Compare the assignment solver against exhaustive search, or align two mode files.
    AlignCheck(AlignCheckArgs),
    /// Write a planted-theme synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    universe: Option<PathBuf>,
    #[arg(long)]
    prices: Option<PathBuf>,
    #[arg(long)]
    arguments: Option<PathBuf>,
    #[arg(long)]
    raw: Option<PathBuf>,
    #[arg(long, value_enum)]
    source: Option<SourceFlag>,
    #[arg(long, value_enum)]
    encoder: Option<EncoderFlag>,
    #[arg(long)]
    encoder_dim: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    top_fraction: Option<f64>,
    #[arg(long)]
    cost_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    projection: Option<ProjectionFlag>,
    #[arg(long)]
    regimes: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    state_dir: Option<PathBuf>,
    #[arg(long)]
    start: Option<Day>,
    #[arg(long)]
    end: Option<Day>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Switch off structured argument generation.
    #[arg(long)]
    no_sag: bool,
    /// Switch off mode discovery (one mode per argument).
    #[arg(long)]
    no_mot: bool,
    /// Use hard mode assignments instead of posteriors.
    #[arg(long)]
    no_pm: bool,
    /// Skip cross-day alignment; modes are reborn daily.
    #[arg(long)]
    no_ta: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceFlag {
    File,
    Mock,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncoderFlag {
    Mock,
    Live,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectionFlag {
    Auto,
    On,
    Off,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        fn set_opt<T: Clone>(dst: &mut Option<T>, v: &Option<T>) {
            if v.is_some() {
                *dst = v.clone();
            }
        }
        set_opt(&mut c.universe_file, &self.universe);
        set_opt(&mut c.price_file, &self.prices);
        set_opt(&mut c.argument_file, &self.arguments);
        set_opt(&mut c.raw_file, &self.raw);
        set_opt(&mut c.cache_dir, &self.cache_dir);
        set_opt(&mut c.prompts_dir, &self.prompts_dir);
        set_opt(&mut c.regime_file, &self.regimes);
        set_opt(&mut c.index_file, &self.index);
        set_opt(&mut c.start, &self.start);
        set_opt(&mut c.end, &self.end);
        set(&mut c.encoder_dim, &self.encoder_dim);
        set(&mut c.k, &self.k);
        set(&mut c.lambda, &self.lambda);
        set(&mut c.top_fraction, &self.top_fraction);
        set(&mut c.cost_rate, &self.cost_rate);
        set(&mut c.seed, &self.seed);
        set(&mut c.state_dir, &self.state_dir);
        set(&mut c.parallelism, &self.parallelism);
        if let Some(s) = self.source {
            c.argument_source = match s {
                SourceFlag::File => ArgumentSourceKind::File,
                SourceFlag::Mock => ArgumentSourceKind::Mock,
                SourceFlag::Live => ArgumentSourceKind::Live,
            };
        }
        if let Some(e) = self.encoder {
            c.encoder = match e {
                EncoderFlag::Mock => EncoderKind::Mock,
                EncoderFlag::Live => EncoderKind::Live,
            };
        }
        if let Some(p) = self.projection {
            c.projection = match p {
                ProjectionFlag::Auto => ProjectionMode::Auto,
                ProjectionFlag::On => ProjectionMode::On,
                ProjectionFlag::Off => ProjectionMode::Off,
            };
        }
        c.ablation.sag &= !self.no_sag;
        c.ablation.mot &= !self.no_mot;
        c.ablation.pm &= !self.no_pm;
        c.ablation.ta &= !self.no_ta;
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Output arguments JSONL.
    #[arg(long)]
    out: PathBuf,
    /// Where to write per-document failures (JSONL).
    #[arg(long)]
    failures: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Directory for the report, series and lifecycle tables.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Keep everything in memory; nothing is written to the state directory.
    #[arg(long)]
    no_state: bool,
}

#[derive(Args)]
struct BacktestArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    signals: PathBuf,
    /// Weights CSV; built from the signals with the configured top fraction when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AlignCheckArgs {
    /// Previous day's mode set (JSON); with --curr, prints their alignment.
    #[arg(long, requires = "curr")]
    prev: Option<PathBuf>,
    #[arg(long, requires = "prev")]
    curr: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    instances: usize,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 6)]
    k_max: usize,
    #[arg(long, default_value_t = 4)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    days: usize,
    #[arg(long, default_value_t = 30)]
    stocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig> {
    let mut c = match path {
        Some(p) => RunConfig::from_json_file(p).with_context(|| format!("reading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut c);
    c.validate()?;
    Ok(c)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    match p {
        Some(p) => Ok(p),
        None => bail!("{flag} is required (flag or config file)"),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Extract(a) => extract(load_config(cfg, &a.overrides)?, &a),
        Command::Run(a) => run(load_config(cfg, &a.overrides)?, &a),
        Command::Backtest(a) => backtest(load_config(cfg, &a.overrides)?, &a),
        Command::Report(a) => report(load_config(cfg, &a.overrides)?, &a),
        Command::AlignCheck(a) => align_check(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn extract(config: RunConfig, a: &ExtractArgs) -> Result<()> {
    let raws = store::read_raw(required(&config.raw_file, "--raw")?)?;
    let backend: Box<dyn AgentBackend> = match config.argument_source {
        ArgumentSourceKind::Live => Box::new(modeflow::extraction::HttpChatBackend::from_env()?),
        _ => Box::new(EchoBackend),
    };
    let prompts = match &config.prompts_dir {
        Some(d) => PromptSet::load_dir(d)?,
        None => PromptSet::default(),
    };
    let options = ExtractionOptions {
        prompts,
        max_reprompts: config.max_reprompts,
        parallelism: config.parallelism.max(1),
        granularity: config.filter_granularity,
        ..ExtractionOptions::default()
    };
    let days: BTreeSet<Day> = raws
        .iter()
        .map(|r| r.day)
        .filter(|d| config.start.map_or(true, |s| *d >= s) && config.end.map_or(true, |e| *d <= e))
        .collect();
    let source = ExtractedArguments::new(raws, backend, options, config.ablation.sag);
    let mut arguments = Vec::new();
    let mut failures = Vec::new();
    for day in days {
        let outcome = source.arguments(day)?;
        log::info!("{day}: {} arguments, {} failures", outcome.arguments.len(), outcome.failures.len());
        arguments.extend(outcome.arguments);
        failures.extend(outcome.failures);
    }
    store::write_jsonl(&a.out, &arguments)?;
    if let Some(path) = &a.failures {
        store::write_jsonl(path, &failures)?;
    }
    println!("{} arguments written to {}, {} failures", arguments.len(), a.out.display(), failures.len());
    Ok(())
}

fn run(config: RunConfig, a: &RunArgs) -> Result<()> {
    let store = if a.no_state {
        None
    } else {
        Some(StateStore::open(&config.state_dir)?)
    };
    let started = Instant::now();
    let mut pipeline = Pipeline::from_config(config)?;
    let output = pipeline.run(store.as_ref())?;
    export(&a.out, &output.states, &output.report)?;
    if let Some(bt) = &output.report.backtest {
        print!("{}", bt.to_text());
    }
    println!(
        "{} days ({} burn-in) in {:.1?}; outputs in {}",
        output.states.len(),
        output.burn_in.len(),
        started.elapsed(),
        a.out.display()
    );
    Ok(())
}

fn market(config: &RunConfig) -> Result<(PriceTable, Vec<String>)> {
    let prices = PriceTable::read_csv(required(&config.price_file, "--prices")?)?;
    let universe = read_universe(required(&config.universe_file, "--universe")?)?;
    Ok((prices, universe))
}

fn backtest(config: RunConfig, a: &BacktestArgs) -> Result<()> {
    let (prices, universe) = market(&config)?;
    let signals = read_signals_csv(&a.signals)?;
    let weights: Vec<PortfolioWeights> = match &a.weights {
        Some(p) => read_weights_csv(p)?,
        None => signals_by_day(&signals)
            .into_iter()
            .map(|(day, s)| build_portfolio(day, &s, config.top_fraction))
            .collect::<modeflow::Result<_>>()?,
    };
    let index = config.index_file.as_deref().map(IndexSeries::read_csv).transpose()?;
    let report = run_backtest(&signals, &weights, &prices, &universe, &config.backtest_settings(), index.as_ref())?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    std::fs::write(a.out.join("report.txt"), report.to_text())?;
    report.write_series_csv(&a.out.join("series.csv"))?;
    print!("{}", report.to_text());
    Ok(())
}

fn report(config: RunConfig, a: &ReportArgs) -> Result<()> {
    let (prices, universe) = market(&config)?;
    let store = StateStore::open(&config.state_dir)?;
    let mut states = store.load_all()?;
    if states.is_empty() {
        bail!("no states in {}", config.state_dir.display());
    }
    states.retain(|s| config.start.map_or(true, |d| s.day >= d) && config.end.map_or(true, |d| s.day <= d));
    let calendar = config.regime_file.as_deref().map(RegimeCalendar::read_csv).transpose()?;
    let index = config.index_file.as_deref().map(IndexSeries::read_csv).transpose()?;
    let report = summarize(&states, &prices, &universe, &config, calendar.as_ref(), index.as_ref())?;
    export(&a.out, &states, &report)?;
    let alignments: Vec<&ModeAlignment> = states.iter().filter_map(|s| s.alignment.as_ref()).collect();
    store::write_jsonl(&a.out.join("alignments.jsonl"), &alignments)?;
    match &report.lifecycle {
        Some(records) => println!("{} lineages classified", records.len()),
        None => println!("no regime file; lifecycle tables skipped"),
    }
    println!("report for {} days written to {}", states.len(), a.out.display());
    Ok(())
}

fn align_check(a: &AlignCheckArgs) -> Result<()> {
    if let (Some(prev), Some(curr)) = (&a.prev, &a.curr) {
        let read = |p: &Path| -> Result<DailyModeSet> {
            Ok(serde_json::from_slice(&std::fs::read(p).with_context(|| p.display().to_string())?)?)
        };
        let (prev, curr) = (read(prev)?, read(curr)?);
        let matching = align_mode_sets(&prev, &curr)?;
        let alignment = ModeAlignment::new(prev.day, curr.day, matching);
        println!("{}", serde_json::to_string(&alignment)?);
        return Ok(());
    }
    if a.k_min == 0 || a.k_min > a.k_max {
        bail!("need 1 <= k-min <= k-max");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut centroids = |k: usize| -> Vec<Vec<f64>> {
        (0..k).map(|_| (0..a.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    };
    let started = Instant::now();
    let mut mismatches = 0;
    for i in 0..a.instances {
        let kp = rng_k(a, i, 0);
        let kc = rng_k(a, i, 1);
        let (p, c) = (centroids(kp), centroids(kc));
        let fast = align_modes(&p, &c)?;
        let slow = brute_force_align(&p, &c)?;
        if fast.cost != slow.cost {
            mismatches += 1;
            println!("instance {i}: solver {} vs exhaustive {}", fast.cost, slow.cost);
        }
    }
    println!(
        "{} instances, {mismatches} cost mismatches, {:.1?}",
        a.instances,
        started.elapsed()
    );
    if mismatches > 0 {
        bail!("assignment solver disagrees with exhaustive search");
    }
    Ok(())
}

/// Side sizes cycle deterministically through the range so every shape is covered.
fn rng_k(a: &AlignCheckArgs, i: usize, side: usize) -> usize {
    let span = a.k_max - a.k_min + 1;
    let idx = if side == 0 { i % span } else { (i / span) % span };
    a.k_min + idx
}

fn synth(a: &SynthArgs) -> Result<()> {
    let scenario = synthesize_arguments(&SyntheticSpec::planted(a.days, a.stocks), a.seed);
    std::fs::create_dir_all(&a.out)?;
    let prices = PriceTable::from_bars(scenario.prices.iter().cloned())?;
    prices.write_csv(&a.out.join("prices.csv"))?;
    write_universe(&a.out.join("universe.txt"), &scenario.universe)?;
    let arguments: Vec<_> = scenario.arguments.iter().map(|t| t.argument.clone()).collect();
    store::write_jsonl(&a.out.join("arguments.jsonl"), &arguments)?;
    let raws: Vec<_> = scenario.days.iter().flat_map(|d| scenario.raw_documents(*d)).collect();
    store::write_jsonl(&a.out.join("raw.jsonl"), &raws)?;
    // first half bull, second half bear
    let mid = scenario.days.len() / 2;
    let mut regimes = String::from("start,end,label\n");
    if mid > 0 {
        regimes.push_str(&format!("{},{},bull\n", scenario.days[0], scenario.days[mid - 1]));
    }
    if let Some(last) = scenario.days.last() {
        regimes.push_str(&format!("{},{last},bear\n", scenario.days[mid]));
    }
    std::fs::write(a.out.join("regimes.csv"), regimes)?;
    println!(
        "{} days, {} stocks, {} arguments written to {}",
        scenario.days.len(),
        scenario.universe.len(),
        arguments.len(),
        a.out.display()
    );
    Ok(())
}
