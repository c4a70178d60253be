//! Day-by-day orchestration: extraction, embedding, mode fitting, alignment,
//! performance memory, signals and portfolios, with one persisted state per
//! trading day so a run can stop and resume anywhere.
//!
//! Timing. On day `t` the modes `M_t` are fitted to day-`t` arguments and
//! aligned against `M_{t-1}`. Yesterday's arguments are scored with the
//! close-to-close return into `t`, which updates the memory of `M_{t-1}`; that
//! memory, carried through the alignment, scores today's arguments. A new
//! mode starts from zero. Day `t`'s portfolio is traded from the next open.

mod config;
mod source;
mod state;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::{align_mode_sets, identity_or_rebirth, Matching, ModeAlignment};
use crate::backtest::{run_backtest, BacktestReport, IndexSeries};
use crate::embedding::{Embedder, EmbedderOptions, EmbeddingCache, HashEncoder};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_mode_scores, carry_lineage, excess_returns_between, realized_score, update_perf, PerfState};
use crate::extraction::{store, EchoBackend, ExtractionFailure, ExtractionOptions, InvestmentArgument, PromptSet};
use crate::lifecycle::{
    category_shares, classify_modes, daily_shares, perf_by_day, write_lineage_csv, write_shares_csv, ModeCategory,
    ModeLifecycleRecord, PerfHistory, RegimeCalendar,
};
use crate::market::{read_universe, PriceTable};
use crate::modes::{fit_daily_modes, one_hot_argmax, singleton_modes, GmmOptions, ModeFit, Projection};
use crate::numeric::mix_seed;
use crate::signal::{build_portfolio, equal_weight, predict_argument_score, stock_signal, write_signals_csv, write_weights_csv, StockSignal};
use crate::Day;

pub use config::{Ablation, ArgumentSourceKind, EncoderKind, ProjectionMode, RunConfig, AUTO_PROJECTION_THRESHOLD};
pub use source::{ArgumentSource, ExtractedArguments, StaticArguments};
pub use state::{ArgumentRef, DailyState, StateStore};

/// Post-fit relabelling hook: given the day and mode count, the permutation
/// applied to the fitted modes (new index `i` takes old index `perm[i]`).
pub type Relabel = Box<dyn Fn(Day, usize) -> Vec<usize> + Send + Sync>;

pub struct Pipeline {
    config: RunConfig,
    prices: PriceTable,
    universe: Vec<String>,
    source: Box<dyn ArgumentSource>,
    embedder: Embedder,
    projection: Projection,
    relabel: Option<Relabel>,
}

/// Everything a finished range produced.
pub struct RunOutput {
    pub states: Vec<DailyState>,
    /// Days spent fitting the projection; they carry no state.
    pub burn_in: Vec<Day>,
    pub report: RunReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    /// Absent when the range is too short to hold a position.
    pub backtest: Option<BacktestReport>,
    /// Absent without a regime calendar.
    pub lifecycle: Option<Vec<ModeLifecycleRecord>>,
    #[serde(skip)]
    pub category_shares: Vec<(Day, ModeCategory, f64)>,
    #[serde(skip)]
    pub mode_shares: BTreeMap<Day, Vec<(u64, f64)>>,
    pub gap_days: Vec<Day>,
    pub failures: Vec<ExtractionFailure>,
}

fn day_salt(day: Day) -> u64 {
    use chrono::Datelike;
    day.num_days_from_ce() as u64
}

fn zero_signals(day: Day, active: &[String]) -> Vec<StockSignal> {
    active
        .iter()
        .map(|t| StockSignal {
            day,
            ticker: t.clone(),
            value: 0.0,
        })
        .collect()
}

fn identity_matching(k: usize) -> Matching {
    Matching {
        pairs: (0..k).map(|i| (i, i)).collect(),
        retired: Vec::new(),
        born: Vec::new(),
        cost: 0.0,
    }
}

impl Pipeline {
    pub fn new(
        config: RunConfig,
        prices: PriceTable,
        universe: Vec<String>,
        source: Box<dyn ArgumentSource>,
        embedder: Embedder,
    ) -> Result<Self> {
        config.validate()?;
        if universe.is_empty() {
            return Err(Error::EmptyUniverse);
        }
        Ok(Pipeline {
            config,
            prices,
            universe,
            source,
            embedder,
            projection: Projection::Identity,
            relabel: None,
        })
    }

    /// Loads prices, universe and argument inputs named by `config`.
    pub fn from_config(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let need = |p: &Option<std::path::PathBuf>, what: &str| {
            p.clone().ok_or_else(|| Error::Config(format!("{what} is required")))
        };
        let prices = PriceTable::read_csv(&need(&config.price_file, "price_file")?)?;
        let universe = read_universe(&need(&config.universe_file, "universe_file")?)?;
        let source = source_from_config(&config)?;
        let embedder = embedder_from_config(&config)?;
        Pipeline::new(config, prices, universe, source, embedder)
    }

    pub fn with_relabel(mut self, relabel: Relabel) -> Self {
        self.relabel = Some(relabel);
        self
    }

    pub fn with_projection(mut self, projection: Projection) -> Self {
        self.projection = projection;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn prices(&self) -> &PriceTable {
        &self.prices
    }

    pub fn universe(&self) -> &[String] {
        &self.universe
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    /// Trading days of the price file inside the configured start/end.
    pub fn trading_days(&self) -> Vec<Day> {
        self.prices
            .days()
            .into_iter()
            .filter(|d| self.config.start.map_or(true, |s| *d >= s))
            .filter(|d| self.config.end.map_or(true, |e| *d <= e))
            .collect()
    }

    fn day_arguments(&self, day: Day, active: &[String]) -> Result<(Vec<InvestmentArgument>, Vec<ExtractionFailure>)> {
        let outcome = self.source.arguments(day).map_err(|e| e.at_stage(day, "extract"))?;
        let active: BTreeSet<&str> = active.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        let mut args = Vec::with_capacity(outcome.arguments.len());
        for a in outcome.arguments {
            if a.day != day || !active.contains(a.ticker.as_str()) {
                log::debug!("{day}: dropping argument {} for {} outside the active universe", a.id, a.ticker);
                continue;
            }
            if !seen.insert(a.id.clone()) {
                return Err(Error::Config(format!("duplicate argument id {}", a.id)).at_stage(day, "extract"));
            }
            args.push(a);
        }
        Ok((args, outcome.failures))
    }

    fn embed(&self, day: Day, args: &[InvestmentArgument]) -> Result<Vec<Vec<f64>>> {
        let embedded = self.embedder.embed_day(args).map_err(|e| e.at_stage(day, "embed"))?;
        embedded
            .into_iter()
            .map(|e| self.projection.project(&e.vector))
            .collect::<Result<_>>()
            .map_err(|e| e.at_stage(day, "embed"))
    }

    fn fit(&self, day: Day, args: &[InvestmentArgument], points: &[Vec<f64>], prev: Option<&DailyState>) -> Result<ModeFit> {
        let ids: Vec<String> = args.iter().map(|a| a.id.clone()).collect();
        let opts = GmmOptions {
            k_target: self.config.k,
            seed: mix_seed(self.config.seed, day_salt(day)),
            ..GmmOptions::default()
        };
        let mut fit = if self.config.ablation.mot {
            let init = if self.config.warm_start {
                prev.and_then(|p| p.modes.as_ref())
            } else {
                None
            };
            fit_daily_modes(day, &ids, points, &opts, init)
        } else {
            singleton_modes(day, &ids, points, opts.variance_floor)
        }
        .map_err(|e| e.at_stage(day, "modes"))?;
        if !self.config.ablation.pm {
            fit.responsibilities = fit.responsibilities.hardened();
        }
        if let Some(relabel) = &self.relabel {
            let perm = relabel(day, fit.modes.k);
            fit.modes = fit.modes.permuted(&perm);
            fit.responsibilities = fit.responsibilities.permuted(&perm);
        }
        Ok(fit)
    }

    /// Memory of `prev`'s modes after scoring `prev`'s arguments with the
    /// returns into `day`, labelled like `prev.modes`. `None` when `prev` had
    /// no arguments, in which case its carried memory already has those labels.
    fn refresh_perf(&self, prev: &DailyState, day: Day) -> Result<Option<PerfState>> {
        let (Some(modes), Some(resp)) = (&prev.modes, &prev.responsibilities) else {
            return Ok(None);
        };
        let returns = excess_returns_between(&self.prices, prev.day, day, &self.universe);
        let mut rows = Vec::with_capacity(prev.arguments.len());
        let mut scores = Vec::with_capacity(prev.arguments.len());
        for (arg, row) in prev.arguments.iter().zip(&resp.rows) {
            if let Some(r) = returns.get(&arg.ticker) {
                rows.push(row.clone());
                scores.push(realized_score(arg.p, *r));
            }
        }
        let agg = aggregate_mode_scores(&rows, &scores, modes.k)?;
        let (memory, matching) = match (&prev.perf, &prev.alignment) {
            (Some(perf), Some(a)) => (perf.clone(), a.matching.clone()),
            // first fitted day: memory starts at zero on every mode
            _ => (
                PerfState {
                    perf: vec![0.0; modes.k],
                    lineage: prev.lineage.clone(),
                    ..PerfState::empty(prev.day)
                },
                identity_matching(modes.k),
            ),
        };
        update_perf(&memory, &matching, &agg, self.config.lambda, day, &prev.lineage).map(Some)
    }

    /// Runs one trading day on top of the previous day's state. Pure: nothing
    /// is written, and a failure leaves no trace.
    pub fn run_day(&self, prev: Option<&DailyState>, day: Day) -> Result<DailyState> {
        if let Some(p) = prev {
            if p.day >= day {
                return Err(Error::Config(format!("state for {} cannot precede {day}", p.day)));
            }
        }
        let active = self.prices.active(day, &self.universe);
        if active.is_empty() {
            return Err(Error::EmptyUniverse.at_stage(day, "portfolio"));
        }
        let (args, failures) = self.day_arguments(day, &active)?;

        let carried = prev.filter(|p| p.modes.is_some());
        if args.is_empty() {
            log::warn!("{day}: no arguments, carrying the previous portfolio");
            return self.gap_day(carried, prev, day, &active, failures);
        }

        let points = self.embed(day, &args)?;
        let fit = self.fit(day, &args, &points, carried)?;
        let k = fit.modes.k;
        let refs: Vec<ArgumentRef> = args.iter().map(ArgumentRef::from).collect();
        let digest = Some(fit.responsibilities.digest());

        let Some(prev) = carried else {
            return Ok(DailyState {
                day,
                lineage: (0..k as u64).collect(),
                next_lineage: k as u64,
                modes: Some(fit.modes),
                responsibilities: Some(fit.responsibilities),
                responsibility_digest: digest,
                arguments: refs,
                alignment: None,
                perf: None,
                perf_updated: false,
                signals: zero_signals(day, &active),
                weights: equal_weight(day, &active).map_err(|e| e.at_stage(day, "portfolio"))?,
                gap: false,
                failures,
            });
        };
        let prev_modes = prev.modes.as_ref().expect("carried state has modes");

        let matching = if self.config.ablation.ta {
            align_mode_sets(prev_modes, &fit.modes)
        } else {
            identity_or_rebirth(&prev_modes.means, &fit.modes.means)
        }
        .map_err(|e| e.at_stage(day, "align"))?;

        let refreshed = self.refresh_perf(prev, day).map_err(|e| e.at_stage(day, "evaluate"))?;
        let perf_updated = refreshed.is_some();
        let perf = match refreshed {
            Some(p) => p,
            None => prev.perf.clone().unwrap_or_else(|| PerfState {
                perf: vec![0.0; prev_modes.k],
                lineage: prev.lineage.clone(),
                ..PerfState::empty(day)
            }),
        };

        let mut next_lineage = prev.next_lineage;
        let lineage = carry_lineage(&prev.lineage, &matching, k, &mut next_lineage);
        // today's arguments are scored under yesterday's mixture and memory
        let mut per_stock: BTreeMap<&str, Vec<(crate::extraction::Polarity, f64)>> = BTreeMap::new();
        for (arg, x) in args.iter().zip(&points) {
            let score = prev_modes
                .posterior(x)
                .map(|post| if self.config.ablation.pm { post } else { one_hot_argmax(&post) })
                .and_then(|post| predict_argument_score(&post, &perf.perf))
                .map_err(|e| e.at_stage(day, "signal"))?;
            per_stock.entry(arg.ticker.as_str()).or_default().push((arg.polarity, score));
        }
        let signals: Vec<StockSignal> = active
            .iter()
            .map(|t| StockSignal {
                day,
                ticker: t.clone(),
                value: per_stock
                    .get(t.as_str())
                    .map_or(0.0, |s| stock_signal(s, self.config.epsilon)),
            })
            .collect();
        let weights = build_portfolio(day, &signals, self.config.top_fraction).map_err(|e| e.at_stage(day, "portfolio"))?;

        Ok(DailyState {
            day,
            modes: Some(fit.modes),
            lineage,
            next_lineage,
            responsibilities: Some(fit.responsibilities),
            responsibility_digest: digest,
            arguments: refs,
            alignment: Some(ModeAlignment::new(prev.day, day, matching)),
            perf: Some(perf),
            perf_updated,
            signals,
            weights,
            gap: false,
            failures,
        })
    }

    fn gap_day(
        &self,
        carried: Option<&DailyState>,
        prev: Option<&DailyState>,
        day: Day,
        active: &[String],
        failures: Vec<ExtractionFailure>,
    ) -> Result<DailyState> {
        let weights = match prev {
            Some(p) => p.weights.carried_to(day),
            None => equal_weight(day, active).map_err(|e| e.at_stage(day, "portfolio"))?,
        };
        let Some(p) = carried else {
            return Ok(DailyState {
                day,
                modes: None,
                lineage: Vec::new(),
                next_lineage: prev.map_or(0, |p| p.next_lineage),
                responsibilities: None,
                responsibility_digest: None,
                arguments: Vec::new(),
                alignment: None,
                perf: None,
                perf_updated: false,
                signals: zero_signals(day, active),
                weights,
                gap: true,
                failures,
            });
        };
        let refreshed = self.refresh_perf(p, day).map_err(|e| e.at_stage(day, "evaluate"))?;
        let perf_updated = refreshed.is_some();
        Ok(DailyState {
            day,
            modes: p.modes.clone(),
            lineage: p.lineage.clone(),
            next_lineage: p.next_lineage,
            responsibilities: None,
            responsibility_digest: None,
            arguments: Vec::new(),
            alignment: None,
            perf: refreshed.or_else(|| p.perf.clone()),
            perf_updated,
            signals: zero_signals(day, active),
            weights,
            gap: true,
            failures,
        })
    }

    fn wants_projection(&self, first_dim: usize) -> bool {
        match self.config.projection {
            ProjectionMode::On => true,
            ProjectionMode::Off => false,
            ProjectionMode::Auto => first_dim > AUTO_PROJECTION_THRESHOLD,
        }
    }

    /// Fits the frozen projection on the first `burn_in_days` trading days
    /// when projection is enabled. Returns the burn-in days.
    fn prepare_projection(&mut self, days: &[Day], store: Option<&StateStore>) -> Result<Vec<Day>> {
        if let Some(p) = store.map(StateStore::load_projection).transpose()?.flatten() {
            let n = if matches!(p, Projection::Identity) { 0 } else { self.config.burn_in_days };
            self.projection = p;
            return Ok(days[..n.min(days.len())].to_vec());
        }
        let first_dim = match self.config.projection {
            ProjectionMode::Auto => {
                let mut dim = None;
                for &d in days {
                    let (args, _) = self.day_arguments(d, &self.prices.active(d, &self.universe))?;
                    if let Some(a) = args.first() {
                        dim = Some(self.embedder.embed_argument(a).map_err(|e| e.at_stage(d, "embed"))?.vector.len());
                        break;
                    }
                }
                dim.unwrap_or(0)
            }
            _ => 0,
        };
        let (projection, burn_in) = if self.wants_projection(first_dim) {
            let burn_in = days[..self.config.burn_in_days.min(days.len())].to_vec();
            let mut corpus = Vec::new();
            for &d in &burn_in {
                let (args, _) = self.day_arguments(d, &self.prices.active(d, &self.universe))?;
                let vecs = self.embedder.embed_day(&args).map_err(|e| e.at_stage(d, "embed"))?;
                corpus.extend(vecs.into_iter().map(|e| e.vector));
            }
            let input_dim = corpus.first().map_or(0, Vec::len);
            let dim = self.config.projection_dim.min(input_dim.max(1));
            let p = Projection::fit(&corpus, dim, mix_seed(self.config.seed, 0x5052_4f4a))?;
            (p, burn_in)
        } else {
            (Projection::Identity, Vec::new())
        };
        if let Some(s) = store {
            s.save_projection(&projection)?;
        }
        self.projection = projection;
        Ok(burn_in)
    }

    /// Runs every trading day of the configured range in order. With a
    /// store, days already on disk are reused (resume) and each new day is
    /// saved before the next one starts.
    pub fn run(&mut self, store: Option<&StateStore>) -> Result<RunOutput> {
        let days = self.trading_days();
        if days.is_empty() {
            return Err(Error::EmptyRange);
        }
        if let Some(s) = store {
            s.claim(&self.config.fingerprint())?;
        }
        let burn_in = self.prepare_projection(&days, store)?;
        let mut states: Vec<DailyState> = Vec::with_capacity(days.len());
        for &day in &days[burn_in.len()..] {
            let stored = store.map(|s| s.load(day)).transpose()?.flatten();
            let state = match stored {
                Some(s) => s,
                None => {
                    let s = self.run_day(states.last(), day)?;
                    if let Some(st) = store {
                        st.save(&s)?;
                    }
                    s
                }
            };
            states.push(state);
        }
        if let Some(dir) = &self.config.cache_dir {
            log::debug!("embedding cache at {}", dir.display());
            self.embedder.cache().flush()?;
        }
        let report = self.report(&states)?;
        Ok(RunOutput { states, burn_in, report })
    }

    pub fn report(&self, states: &[DailyState]) -> Result<RunReport> {
        let calendar = self.config.regime_file.as_deref().map(RegimeCalendar::read_csv).transpose()?;
        let index = self.config.index_file.as_deref().map(IndexSeries::read_csv).transpose()?;
        summarize(states, &self.prices, &self.universe, &self.config, calendar.as_ref(), index.as_ref())
    }
}

/// Lineage id to `(day, perf)` for every freshly updated memory.
pub fn perf_history(states: &[DailyState]) -> PerfHistory {
    let mut h = PerfHistory::new();
    for s in states.iter().filter(|s| s.perf_updated) {
        if let Some(p) = &s.perf {
            for (id, v) in p.lineage.iter().zip(&p.perf) {
                h.entry(*id).or_default().push((s.day, *v));
            }
        }
    }
    h
}

pub fn summarize(
    states: &[DailyState],
    prices: &PriceTable,
    universe: &[String],
    config: &RunConfig,
    calendar: Option<&RegimeCalendar>,
    index: Option<&IndexSeries>,
) -> Result<RunReport> {
    let signals: Vec<StockSignal> = states.iter().flat_map(|s| s.signals.iter().cloned()).collect();
    let weights: Vec<_> = states.iter().map(|s| s.weights.clone()).collect();
    let backtest = match run_backtest(&signals, &weights, prices, universe, &config.backtest_settings(), index) {
        Ok(r) => Some(r),
        Err(Error::EmptyRange) => None,
        Err(e) => return Err(e),
    };
    let history = perf_history(states);
    let mode_shares = daily_shares(&perf_by_day(&history));
    let (lifecycle, category) = match calendar {
        Some(c) => {
            let records = classify_modes(&history, c)?;
            let cats = category_shares(&mode_shares, &records);
            (Some(records), cats)
        }
        None => (None, Vec::new()),
    };
    Ok(RunReport {
        backtest,
        lifecycle,
        category_shares: category,
        mode_shares,
        gap_days: states.iter().filter(|s| s.gap).map(|s| s.day).collect(),
        failures: states.iter().flat_map(|s| s.failures.iter().cloned()).collect(),
    })
}

/// Writes the report and per-day series into `dir`.
pub fn export(dir: &Path, states: &[DailyState], report: &RunReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    if let Some(bt) = &report.backtest {
        let mut text = bt.to_text();
        if !report.gap_days.is_empty() {
            text.push_str(&format!("gap days {}\n", report.gap_days.len()));
        }
        if !report.failures.is_empty() {
            text.push_str(&format!("extraction failures {}\n", report.failures.len()));
        }
        std::fs::write(dir.join("report.txt"), text)?;
        bt.write_series_csv(&dir.join("series.csv"))?;
    }
    let signals: Vec<StockSignal> = states.iter().flat_map(|s| s.signals.iter().cloned()).collect();
    write_signals_csv(&dir.join("signals.csv"), &signals)?;
    let weights: Vec<_> = states.iter().map(|s| s.weights.clone()).collect();
    write_weights_csv(&dir.join("weights.csv"), &weights)?;
    export_lifecycle(dir, report)
}

/// Lineage classes, category shares and per-lineage shares.
pub fn export_lifecycle(dir: &Path, report: &RunReport) -> Result<()> {
    if let Some(records) = &report.lifecycle {
        write_lineage_csv(&dir.join("lineages.csv"), records)?;
        write_shares_csv(&dir.join("shares.csv"), &report.category_shares)?;
    }
    let mut w = csv::Writer::from_path(dir.join("mode_shares.csv"))?;
    w.write_record(["day", "lineage_id", "share"])?;
    for (day, shares) in &report.mode_shares {
        for (id, s) in shares {
            w.write_record([day.to_string(), id.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn extraction_options(config: &RunConfig) -> Result<ExtractionOptions> {
    let prompts = match &config.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::default(),
    };
    Ok(ExtractionOptions {
        prompts,
        max_reprompts: config.max_reprompts,
        parallelism: config.parallelism.max(1),
        granularity: config.filter_granularity,
        ..ExtractionOptions::default()
    })
}

fn source_from_config(config: &RunConfig) -> Result<Box<dyn ArgumentSource>> {
    let raws = || -> Result<Vec<_>> {
        let path = config
            .raw_file
            .as_deref()
            .ok_or_else(|| Error::Config("raw_file is required for this argument source".into()))?;
        store::read_raw(path)
    };
    let structured = config.ablation.sag;
    Ok(match config.argument_source {
        ArgumentSourceKind::File if structured => {
            let path = config
                .argument_file
                .as_deref()
                .ok_or_else(|| Error::Config("argument_file is required".into()))?;
            Box::new(StaticArguments::new(store::read_arguments(path)?))
        }
        ArgumentSourceKind::File | ArgumentSourceKind::Mock => Box::new(ExtractedArguments::new(
            raws()?,
            Box::new(EchoBackend),
            extraction_options(config)?,
            structured,
        )),
        ArgumentSourceKind::Live => {
            #[cfg(feature = "http")]
            {
                Box::new(ExtractedArguments::new(
                    raws()?,
                    Box::new(crate::extraction::HttpChatBackend::from_env()?),
                    extraction_options(config)?,
                    structured,
                ))
            }
            #[cfg(not(feature = "http"))]
            {
                return Err(Error::Config("live extraction needs the `http` feature".into()));
            }
        }
    })
}

fn embedder_from_config(config: &RunConfig) -> Result<Embedder> {
    let cache = match &config.cache_dir {
        Some(dir) => EmbeddingCache::open(dir)?,
        None => EmbeddingCache::in_memory(),
    };
    let options = EmbedderOptions {
        parallelism: config.parallelism.max(1),
        ..EmbedderOptions::default()
    };
    let encoder: Box<dyn crate::embedding::EncoderBackend> = match config.encoder {
        EncoderKind::Mock => Box::new(HashEncoder::new(config.encoder_dim, config.seed)),
        EncoderKind::Live => {
            #[cfg(feature = "http")]
            {
                Box::new(crate::embedding::HttpEncoder::from_env()?)
            }
            #[cfg(not(feature = "http"))]
            {
                return Err(Error::Config("live encoding needs the `http` feature".into()));
            }
        }
    };
    Ok(Embedder::new(encoder, cache, options))
}

/// A mock-encoder embedder with an in-memory cache.
pub fn mock_embedder(dim: usize, seed: u64) -> Embedder {
    Embedder::new(
        Box::new(HashEncoder::new(dim, seed)),
        EmbeddingCache::in_memory(),
        EmbedderOptions {
            retry: crate::concurrency::RetryPolicy::none(),
            ..EmbedderOptions::default()
        },
    )
}

/// Pipeline over a generated scenario with the mock encoder. With structured
/// generation switched off, the scenario's per-stock documents are fed to the
/// echo agent as raw pseudo-arguments.
pub fn synthetic_pipeline(config: RunConfig, scenario: &crate::extraction::synthetic::SyntheticScenario) -> Result<Pipeline> {
    let prices = PriceTable::from_bars(scenario.prices.iter().cloned())?;
    let source: Box<dyn ArgumentSource> = if config.ablation.sag {
        Box::new(StaticArguments::new(scenario.arguments.iter().map(|t| t.argument.clone())))
    } else {
        let raws: Vec<_> = scenario.days.iter().flat_map(|d| scenario.raw_documents(*d)).collect();
        Box::new(ExtractedArguments::new(
            raws,
            Box::new(EchoBackend),
            ExtractionOptions {
                parallelism: 1,
                retry: crate::concurrency::RetryPolicy::none(),
                ..ExtractionOptions::default()
            },
            false,
        ))
    };
    let embedder = mock_embedder(config.encoder_dim, config.seed);
    Pipeline::new(config, prices, scenario.universe.clone(), source, embedder)
}
