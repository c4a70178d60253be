//! Daily-rebalanced portfolio simulation with proportional costs, and the
//! correlation and return metric suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PriceTable;
use crate::numeric::{average_ranks, mean, pearson, population_std};
use crate::signal::{PortfolioWeights, StockSignal};
use crate::Day;

/// Which prices bracket the holding period of weights decided on day `t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Enter at the open of `t+1`, exit at the open of `t+2`.
    #[default]
    OpenToOpen,
    /// Enter at the close of `t+1`, exit at the close of `t+2`.
    CloseToClose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingPriceEvent {
    pub day: Day,
    pub ticker: String,
    pub action: String,
}

/// One simulated holding period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRow {
    /// Day the weights were decided.
    pub day: Day,
    pub entry: Day,
    pub exit: Day,
    pub gross: f64,
    pub turnover: f64,
    pub cost: f64,
    pub net: f64,
    pub wealth: f64,
    pub benchmark: f64,
    pub benchmark_wealth: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub rows: Vec<PeriodRow>,
    pub events: Vec<MissingPriceEvent>,
}

impl Simulation {
    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.net).collect()
    }

    pub fn benchmark_returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.benchmark).collect()
    }

    /// Wealth path starting at `W_0 = 1`.
    pub fn wealth(&self) -> Vec<f64> {
        std::iter::once(1.0).chain(self.rows.iter().map(|r| r.wealth)).collect()
    }
}

fn price(prices: &PriceTable, day: Day, ticker: &str, exec: Execution) -> Option<f64> {
    match exec {
        Execution::OpenToOpen => prices.open(day, ticker),
        Execution::CloseToClose => prices.close(day, ticker),
    }
}

/// Latest observed price of `ticker` strictly before `day`.
fn last_price_before(prices: &PriceTable, day: Day, ticker: &str) -> Option<f64> {
    let mut d = prices.previous_day(day)?;
    loop {
        if let Some(q) = prices.quote(d, ticker) {
            return Some(q.close);
        }
        d = prices.previous_day(d)?;
    }
}

/// Walks the weight sequence through the price table. Periods whose exit day
/// lies beyond the last priced day are not simulated.
pub fn simulate(
    weights: &[PortfolioWeights],
    prices: &PriceTable,
    cost_rate: f64,
    execution: Execution,
) -> Result<Simulation> {
    let mut sim = Simulation::default();
    let mut wealth = 1.0;
    let mut bench_wealth = 1.0;
    // previous weights and their realized period returns
    let mut last: Option<(BTreeMap<String, f64>, BTreeMap<String, f64>)> = None;

    for w in weights {
        let Some(entry) = prices.next_day(w.day) else { break };
        let Some(exit) = prices.next_day(entry) else { break };

        let mut returns = BTreeMap::new();
        for ticker in w.weights.keys() {
            let held = w.weight(ticker) > 0.0;
            let Some(p_in) = price(prices, entry, ticker, execution) else {
                if held {
                    log::warn!("{ticker}: no entry price on {entry}, held as cash");
                    sim.events.push(MissingPriceEvent {
                        day: entry,
                        ticker: ticker.clone(),
                        action: "not entered".into(),
                    });
                }
                continue;
            };
            let p_out = match price(prices, exit, ticker, execution) {
                Some(p) => p,
                None => {
                    let fallback = last_price_before(prices, exit, ticker).unwrap_or(p_in);
                    if held {
                        log::warn!("{ticker}: no exit price on {exit}, exited at {fallback}");
                        sim.events.push(MissingPriceEvent {
                            day: exit,
                            ticker: ticker.clone(),
                            action: format!("exited at last price {fallback}"),
                        });
                    }
                    fallback
                }
            };
            returns.insert(ticker.clone(), p_out / p_in - 1.0);
        }

        let gross: f64 = w
            .weights
            .iter()
            .map(|(t, x)| x * returns.get(t).copied().unwrap_or(0.0))
            .sum();
        let turnover = match &last {
            None => w.weights.values().map(|x| x.abs()).sum(),
            Some((prev_w, prev_r)) => {
                let grown: BTreeMap<&str, f64> = prev_w
                    .iter()
                    .map(|(t, x)| (t.as_str(), x * (1.0 + prev_r.get(t).copied().unwrap_or(0.0))))
                    .collect();
                let total: f64 = grown.values().sum();
                let drifted = |t: &str| {
                    if total > 0.0 {
                        grown.get(t).copied().unwrap_or(0.0) / total
                    } else {
                        0.0
                    }
                };
                let mut names: Vec<&str> = w.weights.keys().map(String::as_str).collect();
                names.extend(prev_w.keys().map(String::as_str));
                names.sort_unstable();
                names.dedup();
                names.iter().map(|t| (w.weight(t) - drifted(t)).abs()).sum()
            }
        };
        let cost = cost_rate * turnover;
        let net = gross - cost;
        wealth *= 1.0 + net;

        let bench: Vec<f64> = returns.values().copied().collect();
        let benchmark = mean(&bench).unwrap_or(0.0);
        bench_wealth *= 1.0 + benchmark;

        sim.rows.push(PeriodRow {
            day: w.day,
            entry,
            exit,
            gross,
            turnover,
            cost,
            net,
            wealth,
            benchmark,
            benchmark_wealth: bench_wealth,
        });
        last = Some((w.weights.clone(), returns));
    }
    Ok(sim)
}

/// Close-to-close return from each day to the next trading day, keyed by the
/// earlier day. This is the prediction target for the correlation metrics.
pub fn forward_returns(prices: &PriceTable, universe: &[String]) -> BTreeMap<Day, BTreeMap<String, f64>> {
    let days = prices.days();
    days.windows(2)
        .map(|w| {
            let r = universe
                .iter()
                .filter_map(|t| Some((t.clone(), prices.close(w[1], t)? / prices.close(w[0], t)? - 1.0)))
                .collect();
            (w[0], r)
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyCorrelation {
    pub day: Day,
    pub ic: Option<f64>,
    pub rank_ic: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMetrics {
    pub ic: Option<f64>,
    pub icir: Option<f64>,
    pub rank_ic: Option<f64>,
    pub rank_icir: Option<f64>,
    pub days_used: usize,
    /// Days with fewer than three stocks or a constant side.
    pub days_skipped: usize,
    #[serde(skip)]
    pub daily: Vec<DailyCorrelation>,
}

/// Mean over population std; `None` when either is undefined or the std is 0.
fn ratio(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let s = population_std(values)?;
    (s > 1e-15).then(|| m / s)
}

/// Daily cross-sectional Pearson and Spearman correlations between signals
/// and forward returns, summarized by mean and mean/std.
pub fn correlation_metrics(
    signals: &BTreeMap<Day, Vec<StockSignal>>,
    forward: &BTreeMap<Day, BTreeMap<String, f64>>,
) -> CorrelationMetrics {
    let mut out = CorrelationMetrics::default();
    let mut ics = Vec::new();
    let mut rics = Vec::new();
    for (day, sigs) in signals {
        let Some(fwd) = forward.get(day) else { continue };
        let (x, y): (Vec<f64>, Vec<f64>) = sigs
            .iter()
            .filter_map(|s| Some((s.value, *fwd.get(&s.ticker)?)))
            .unzip();
        let (ic, ric) = if x.len() >= 3 {
            (pearson(&x, &y), pearson(&average_ranks(&x), &average_ranks(&y)))
        } else {
            (None, None)
        };
        match (ic, ric) {
            (Some(a), Some(b)) => {
                ics.push(a);
                rics.push(b);
                out.days_used += 1;
            }
            _ => {
                log::debug!("{day}: degenerate cross-section skipped");
                out.days_skipped += 1;
            }
        }
        out.daily.push(DailyCorrelation {
            day: *day,
            ic,
            rank_ic: ric,
        });
    }
    out.ic = mean(&ics);
    out.icir = ratio(&ics);
    out.rank_ic = mean(&rics);
    out.rank_icir = ratio(&rics);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioMetrics {
    pub annualized_return: f64,
    pub max_drawdown: f64,
    /// `None` when the excess-return std is zero.
    pub sharpe: Option<f64>,
    pub mean: f64,
    pub std: f64,
    pub periods: usize,
}

/// Largest peak-to-trough decline of a wealth path, as a fraction of the peak.
pub fn max_drawdown(wealth: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &w in wealth {
        peak = peak.max(w);
        if peak > 0.0 {
            worst = worst.max(1.0 - w / peak);
        }
    }
    worst
}

pub fn wealth_path(returns: &[f64]) -> Vec<f64> {
    let mut w = 1.0;
    std::iter::once(1.0)
        .chain(returns.iter().map(|r| {
            w *= 1.0 + r;
            w
        }))
        .collect()
}

pub fn portfolio_metrics(returns: &[f64], annualization: f64, risk_free: f64) -> Result<PortfolioMetrics> {
    if returns.is_empty() {
        return Err(Error::EmptyInput("return series"));
    }
    if !(annualization > 0.0) {
        return Err(Error::Config(format!("annualization factor {annualization} must be positive")));
    }
    let m = mean(returns).expect("non-empty");
    let excess: Vec<f64> = returns.iter().map(|r| r - risk_free).collect();
    let em = mean(&excess).expect("non-empty");
    let es = population_std(&excess).expect("non-empty");
    let sharpe = (es > 1e-12 * em.abs().max(1e-300)).then(|| em / es * annualization.sqrt());
    Ok(PortfolioMetrics {
        annualized_return: annualization * m,
        max_drawdown: max_drawdown(&wealth_path(returns)),
        sharpe,
        mean: m,
        std: population_std(returns).expect("non-empty"),
        periods: returns.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestSettings {
    pub cost_rate: f64,
    pub annualization: f64,
    pub risk_free: f64,
    pub execution: Execution,
}

impl Default for BacktestSettings {
    fn default() -> Self {
        BacktestSettings {
            cost_rate: 1.5e-4,
            annualization: 252.0,
            risk_free: 0.0,
            execution: Execution::OpenToOpen,
        }
    }
}

/// Closing levels of an external index, CSV `day,close`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexSeries {
    pub closes: BTreeMap<Day, f64>,
}

#[derive(Deserialize)]
struct IndexRow {
    day: Day,
    close: f64,
}

impl IndexSeries {
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut closes = BTreeMap::new();
        for row in r.deserialize::<IndexRow>() {
            let row = row?;
            closes.insert(row.day, row.close);
        }
        Ok(IndexSeries { closes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub settings: BacktestSettings,
    pub first_day: Day,
    pub last_day: Day,
    pub correlation: CorrelationMetrics,
    pub portfolio: PortfolioMetrics,
    pub benchmark: PortfolioMetrics,
    /// Portfolio minus equal-weight benchmark, period by period.
    pub relative: PortfolioMetrics,
    pub index: Option<PortfolioMetrics>,
    pub mean_turnover: f64,
    pub missing_price_events: Vec<MissingPriceEvent>,
    #[serde(skip)]
    pub rows: Vec<PeriodRow>,
}

pub fn run_backtest(
    signals: &[StockSignal],
    weights: &[PortfolioWeights],
    prices: &PriceTable,
    universe: &[String],
    settings: &BacktestSettings,
    index: Option<&IndexSeries>,
) -> Result<BacktestReport> {
    let sim = simulate(weights, prices, settings.cost_rate, settings.execution)?;
    if sim.rows.is_empty() {
        return Err(Error::EmptyRange);
    }
    let returns = sim.returns();
    let bench = sim.benchmark_returns();
    let relative: Vec<f64> = returns.iter().zip(&bench).map(|(a, b)| a - b).collect();
    let index_returns: Vec<f64> = match index {
        Some(ix) => sim
            .rows
            .iter()
            .filter_map(|r| Some(ix.closes.get(&r.exit)? / ix.closes.get(&r.entry)? - 1.0))
            .collect(),
        None => Vec::new(),
    };
    let correlation = correlation_metrics(
        &crate::signal::signals_by_day(signals),
        &forward_returns(prices, universe),
    );
    let turnovers: Vec<f64> = sim.rows.iter().map(|r| r.turnover).collect();
    Ok(BacktestReport {
        settings: settings.clone(),
        first_day: sim.rows[0].day,
        last_day: sim.rows[sim.rows.len() - 1].day,
        correlation,
        portfolio: portfolio_metrics(&returns, settings.annualization, settings.risk_free)?,
        benchmark: portfolio_metrics(&bench, settings.annualization, settings.risk_free)?,
        relative: portfolio_metrics(&relative, settings.annualization, 0.0)?,
        index: if index_returns.is_empty() {
            None
        } else {
            Some(portfolio_metrics(&index_returns, settings.annualization, settings.risk_free)?)
        },
        mean_turnover: mean(&turnovers).unwrap_or(0.0),
        missing_price_events: sim.events,
        rows: sim.rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl BacktestReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "period      {} .. {} ({} periods)", self.first_day, self.last_day, self.portfolio.periods);
        let _ = writeln!(
            s,
            "settings    cost {} | A {} | r_f {} | {:?}",
            self.settings.cost_rate, self.settings.annualization, self.settings.risk_free, self.settings.execution
        );
        let c = &self.correlation;
        let _ = writeln!(s, "IC          {:>10}   ICIR  {:>10}", fmt_opt(c.ic), fmt_opt(c.icir));
        let _ = writeln!(s, "Rank IC     {:>10}   RICIR {:>10}", fmt_opt(c.rank_ic), fmt_opt(c.rank_icir));
        let _ = writeln!(s, "IC days     {:>10}   skipped {:>8}", c.days_used, c.days_skipped);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12}{:>12}{:>12}{:>12}", "", "AR", "MDD", "SR");
        let mut row = |name: &str, m: &PortfolioMetrics| {
            let _ = writeln!(
                s,
                "{:<12}{:>12.4}{:>12.4}{:>12}",
                name,
                m.annualized_return,
                m.max_drawdown,
                fmt_opt(m.sharpe)
            );
        };
        row("portfolio", &self.portfolio);
        row("benchmark", &self.benchmark);
        row("relative", &self.relative);
        if let Some(ix) = &self.index {
            row("index", ix);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "mean turnover {:.4}", self.mean_turnover);
        let _ = writeln!(s, "missing-price events {}", self.missing_price_events.len());
        s
    }

    /// Series CSV: one line per holding period with the day's correlations.
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let daily: BTreeMap<Day, &DailyCorrelation> = self.correlation.daily.iter().map(|d| (d.day, d)).collect();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "day",
            "entry",
            "exit",
            "portfolio_return",
            "benchmark_return",
            "turnover",
            "cost",
            "wealth",
            "benchmark_wealth",
            "ic",
            "rank_ic",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let d = daily.get(&r.day);
            w.write_record([
                r.day.to_string(),
                r.entry.to_string(),
                r.exit.to_string(),
                r.net.to_string(),
                r.benchmark.to_string(),
                r.turnover.to_string(),
                r.cost.to_string(),
                r.wealth.to_string(),
                r.benchmark_wealth.to_string(),
                opt(d.and_then(|d| d.ic)),
                opt(d.and_then(|d| d.rank_ic)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
