//! Predicted argument scores, per-stock signals and the top-fraction
//! equal-weight portfolio.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extraction::Polarity;
use crate::numeric::ordered_sum;
use crate::Day;

/// `Σ_k ω̂_k · Perf_k`, summed in an order that ignores mode labels.
pub fn predict_argument_score(posterior: &[f64], perf: &[f64]) -> Result<f64> {
    if posterior.len() != perf.len() {
        return Err(Error::ShapeMismatch(format!(
            "posterior over {} modes, performance for {}",
            posterior.len(),
            perf.len()
        )));
    }
    Ok(ordered_sum(posterior.iter().zip(perf).map(|(w, p)| w * p)))
}

/// Mean bullish score minus mean bearish score, each mean taken with an
/// `eps`-padded count. A side without arguments contributes 0.
pub fn stock_signal(scores: &[(Polarity, f64)], eps: f64) -> f64 {
    let mut bull = (0.0, 0usize);
    let mut bear = (0.0, 0usize);
    for (p, s) in scores {
        let side = match p {
            Polarity::Bullish => &mut bull,
            Polarity::Bearish => &mut bear,
        };
        side.0 += s;
        side.1 += 1;
    }
    bull.0 / (bull.1 as f64 + eps) - bear.0 / (bear.1 as f64 + eps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StockSignal {
    pub day: Day,
    pub ticker: String,
    #[serde(rename = "signal")]
    pub value: f64,
}

/// Weights for every ticker of the day's universe; holdings are the tickers
/// with positive weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioWeights {
    pub day: Day,
    pub weights: BTreeMap<String, f64>,
}

impl PortfolioWeights {
    pub fn holdings(&self) -> Vec<&str> {
        self.weights
            .iter()
            .filter(|(_, w)| **w > 0.0)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn weight(&self, ticker: &str) -> f64 {
        self.weights.get(ticker).copied().unwrap_or(0.0)
    }

    /// Same weights stamped with another day (carrying a portfolio forward).
    pub fn carried_to(&self, day: Day) -> PortfolioWeights {
        PortfolioWeights {
            day,
            weights: self.weights.clone(),
        }
    }
}

/// Number of holdings for a universe of `n` stocks.
pub fn holding_count(n: usize, top_fraction: f64) -> usize {
    // the small slack keeps e.g. 0.2 * 10 from rounding up to 3
    ((top_fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
}

/// Equal weight on the `ceil(top_fraction · N)` highest signals; ties go to
/// the lexicographically smaller ticker.
pub fn build_portfolio(day: Day, signals: &[StockSignal], top_fraction: f64) -> Result<PortfolioWeights> {
    if signals.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::Config(format!("top fraction {top_fraction} outside (0, 1]")));
    }
    let mut ranked: Vec<&StockSignal> = signals.iter().collect();
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.ticker.cmp(&b.ticker)));
    let n = holding_count(signals.len(), top_fraction);
    let w = 1.0 / n as f64;
    let mut weights: BTreeMap<String, f64> = signals.iter().map(|s| (s.ticker.clone(), 0.0)).collect();
    for s in &ranked[..n] {
        weights.insert(s.ticker.clone(), w);
    }
    Ok(PortfolioWeights { day, weights })
}

/// Equal weight over the whole universe.
pub fn equal_weight(day: Day, universe: &[String]) -> Result<PortfolioWeights> {
    if universe.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    let w = 1.0 / universe.len() as f64;
    Ok(PortfolioWeights {
        day,
        weights: universe.iter().map(|t| (t.clone(), w)).collect(),
    })
}

#[derive(Serialize, Deserialize)]
struct WeightRow {
    day: Day,
    ticker: String,
    weight: f64,
}

pub fn write_signals_csv(path: &Path, signals: &[StockSignal]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in signals {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signals_csv(path: &Path) -> Result<Vec<StockSignal>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_weights_csv(path: &Path, weights: &[PortfolioWeights]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for pw in weights {
        for (ticker, weight) in &pw.weights {
            w.serialize(WeightRow {
                day: pw.day,
                ticker: ticker.clone(),
                weight: *weight,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights_csv(path: &Path) -> Result<Vec<PortfolioWeights>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut by_day: BTreeMap<Day, BTreeMap<String, f64>> = BTreeMap::new();
    for row in r.deserialize::<WeightRow>() {
        let row = row?;
        by_day.entry(row.day).or_default().insert(row.ticker, row.weight);
    }
    Ok(by_day
        .into_iter()
        .map(|(day, weights)| PortfolioWeights { day, weights })
        .collect())
}

/// Groups a flat signal list by day, tickers sorted.
pub fn signals_by_day(signals: &[StockSignal]) -> BTreeMap<Day, Vec<StockSignal>> {
    let mut out: BTreeMap<Day, Vec<StockSignal>> = BTreeMap::new();
    for s in signals {
        out.entry(s.day).or_default().push(s.clone());
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.ticker.cmp(&b.ticker));
    }
    out
}
