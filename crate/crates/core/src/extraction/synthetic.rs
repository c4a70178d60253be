//! Offline argument source with planted themes and a matching price path.
//!
//! Each theme owns a vocabulary, a probability of being bullish, and a
//! ground-truth effect: a stock whose day-`t` arguments of theme `j` have mean
//! polarity `m` gains `m * excess_return[j]` on its day-`t+1` return. Opens
//! equal the previous close, so open-to-open holding captures the same move.

use chrono::{Datelike, Weekday};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{InvestmentArgument, Modality, Polarity, RawDataPoint};
use crate::market::PriceBar;
use crate::Day;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThemeSpec {
    pub name: String,
    /// Rationale templates; `{ticker}` is substituted.
    pub rationales: Vec<String>,
    pub evidences: Vec<String>,
    /// Theme-identifying tokens sprinkled into every argument.
    pub vocabulary: Vec<String>,
    /// Probability that an argument of this theme is bullish.
    pub bullish_bias: f64,
    /// Probability that a stock carries this theme on a given day.
    pub presence: f64,
    /// Next-day return per unit of mean polarity.
    pub excess_return: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub start: Day,
    pub days: usize,
    pub tickers: Vec<String>,
    pub themes: Vec<ThemeSpec>,
    pub max_args_per_theme: usize,
    /// Vocabulary tokens added per argument.
    pub theme_words: usize,
    /// Words shared by every theme, added as noise.
    pub filler: Vec<String>,
    pub filler_words: usize,
    pub noise_vol: f64,
    pub market_vol: f64,
}

/// An argument together with the index of the theme that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedArgument {
    pub argument: InvestmentArgument,
    pub theme: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScenario {
    pub days: Vec<Day>,
    pub universe: Vec<String>,
    pub arguments: Vec<TaggedArgument>,
    pub prices: Vec<PriceBar>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl SyntheticSpec {
    /// Three themes: the first pays +50 bps per unit polarity, the second is
    /// noise, the third pays -50 bps (its bulls are wrong).
    pub fn planted(days: usize, stocks: usize) -> Self {
        let value = ThemeSpec {
            name: "value".into(),
            rationales: words(&[
                "{ticker} trades at a deep valuation discount to sector peers",
                "{ticker} earnings yield signals a rerating from depressed multiples",
                "book value support for {ticker} limits downside at current multiples",
                "{ticker} dividend yield cushions valuation against cyclical drawdown",
            ]),
            evidences: words(&[
                "price to book ratio sits at a multi year percentile low",
                "trailing price earnings multiple below the five year median",
                "dividend payout and free cash flow yield both above peer average",
                "enterprise value to ebitda discount versus industry index",
            ]),
            vocabulary: words(&["valuation", "multiple", "discount", "rerating", "yield", "book", "cheap", "percentile"]),
            bullish_bias: 0.6,
            presence: 0.6,
            excess_return: 0.005,
        };
        let macro_flow = ThemeSpec {
            name: "flows".into(),
            rationales: words(&[
                "northbound capital flows into {ticker} track index rebalancing",
                "{ticker} margin financing balance moves with broad liquidity",
                "fund positioning in {ticker} follows quarterly allocation shifts",
                "{ticker} turnover rises with exchange wide trading volume",
            ]),
            evidences: words(&[
                "net inflow through the connect channel over five sessions",
                "margin balance changed alongside the interbank rate",
                "mutual fund holdings reported in the latest quarterly filing",
                "daily turnover ratio compared with the market average",
            ]),
            vocabulary: words(&["inflow", "liquidity", "margin", "allocation", "positioning", "turnover", "connect", "rebalancing"]),
            bullish_bias: 0.5,
            presence: 0.6,
            excess_return: 0.0,
        };
        let hype = ThemeSpec {
            name: "hype".into(),
            rationales: words(&[
                "{ticker} concept rally attracts retail chatter and headline momentum",
                "social buzz around {ticker} narrative theme promises explosive upside",
                "{ticker} rumor of strategic partnership fuels speculative excitement",
                "hot sector story pulls {ticker} into a crowded thematic trade",
            ]),
            evidences: words(&[
                "forum mentions and search trends spiked over the past week",
                "limit up streak accompanied by surging retail order flow",
                "unconfirmed media report cited anonymous industry sources",
                "thematic etf inclusion chatter across trading community posts",
            ]),
            vocabulary: words(&["buzz", "rumor", "concept", "retail", "chatter", "speculative", "hot", "headline"]),
            bullish_bias: 0.6,
            presence: 0.6,
            excess_return: -0.005,
        };
        SyntheticSpec {
            start: Day::from_ymd_opt(2024, 1, 2).expect("valid date"),
            days,
            tickers: (0..stocks).map(|i| format!("SYN{i:03}")).collect(),
            themes: vec![value, macro_flow, hype],
            max_args_per_theme: 1,
            theme_words: 3,
            filler: words(&["market", "shares", "analysts", "session", "outlook", "company", "investors", "quarter"]),
            filler_words: 2,
            noise_vol: 0.015,
            market_vol: 0.01,
        }
    }
}

/// Weekdays starting at `start`.
pub fn business_days(start: Day, count: usize) -> Vec<Day> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &'a [String]) -> &'a str {
    pool.choose(rng).map(String::as_str).unwrap_or("")
}

fn sprinkle(rng: &mut ChaCha8Rng, base: String, pool: &[String], n: usize) -> String {
    let mut text = base;
    for _ in 0..n {
        if let Some(w) = pool.choose(rng) {
            text.push(' ');
            text.push_str(w);
        }
    }
    text
}

/// Generates the full scenario. Identical `(spec, seed)` gives identical output.
pub fn synthesize_arguments(spec: &SyntheticSpec, seed: u64) -> SyntheticScenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let days = business_days(spec.start, spec.days);
    let n = spec.tickers.len();
    let mut arguments = Vec::new();
    let mut prices = Vec::with_capacity(days.len() * n);

    let mut close: Vec<f64> = (0..n)
        .map(|_| 10.0 * (0.3 * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    // mean polarity per (stock, theme) from the previous day
    let mut carried = vec![vec![0.0; spec.themes.len()]; n];

    for (t, &day) in days.iter().enumerate() {
        if t == 0 {
            for (s, ticker) in spec.tickers.iter().enumerate() {
                prices.push(PriceBar {
                    day,
                    ticker: ticker.clone(),
                    open: close[s],
                    close: close[s],
                });
            }
        } else {
            let market = spec.market_vol * rng.sample::<f64, _>(StandardNormal);
            for (s, ticker) in spec.tickers.iter().enumerate() {
                let alpha: f64 = spec
                    .themes
                    .iter()
                    .zip(&carried[s])
                    .map(|(th, m)| th.excess_return * m)
                    .sum();
                let noise = spec.noise_vol * rng.sample::<f64, _>(StandardNormal);
                let ret = (market + alpha + noise).max(-0.5);
                let open = close[s];
                close[s] = open * (1.0 + ret);
                prices.push(PriceBar {
                    day,
                    ticker: ticker.clone(),
                    open,
                    close: close[s],
                });
            }
        }

        for (s, ticker) in spec.tickers.iter().enumerate() {
            let mut index = 0;
            for (j, theme) in spec.themes.iter().enumerate() {
                carried[s][j] = 0.0;
                if !rng.gen_bool(theme.presence.clamp(0.0, 1.0)) {
                    continue;
                }
                let count = rng.gen_range(1..=spec.max_args_per_theme.max(1));
                let mut net = 0.0;
                for _ in 0..count {
                    let polarity = if rng.gen_bool(theme.bullish_bias.clamp(0.0, 1.0)) {
                        Polarity::Bullish
                    } else {
                        Polarity::Bearish
                    };
                    net += polarity.sign();
                    let rationale = pick(&mut rng, &theme.rationales).replace("{ticker}", ticker);
                    let rationale = sprinkle(&mut rng, rationale, &theme.vocabulary, spec.theme_words);
                    let evidence = pick(&mut rng, &theme.evidences).to_string();
                    let evidence = sprinkle(&mut rng, evidence, &spec.filler, spec.filler_words);
                    let argument = InvestmentArgument::new(
                        day,
                        ticker,
                        polarity,
                        rationale,
                        evidence,
                        InvestmentArgument::make_id(day, ticker, index),
                    )
                    .expect("templates are non-empty");
                    index += 1;
                    arguments.push(TaggedArgument { argument, theme: j });
                }
                carried[s][j] = net / count as f64;
            }
        }
    }

    SyntheticScenario {
        days,
        universe: spec.tickers.clone(),
        arguments,
        prices,
    }
}

impl SyntheticScenario {
    pub fn arguments_on(&self, day: Day) -> Vec<TaggedArgument> {
        self.arguments
            .iter()
            .filter(|a| a.argument.day == day)
            .cloned()
            .collect()
    }

    /// The day's arguments rendered as one news document per stock, one
    /// `+ rationale | evidence` line per argument.
    pub fn raw_documents(&self, day: Day) -> Vec<RawDataPoint> {
        let mut docs: Vec<RawDataPoint> = Vec::new();
        for tagged in self.arguments.iter().filter(|a| a.argument.day == day) {
            let a = &tagged.argument;
            let sign = if a.polarity == Polarity::Bullish { '+' } else { '-' };
            let line = format!("{sign} {} | {}", a.rationale, a.evidence);
            match docs.last_mut() {
                Some(d) if d.ticker == a.ticker => {
                    d.body.push('\n');
                    d.body.push_str(&line);
                }
                _ => docs.push(RawDataPoint::new(day, &a.ticker, Modality::News, line).expect("non-empty")),
            }
        }
        docs
    }
}
