//! Price bars, the trading calendar they imply, and universe files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Day;

/// One adjusted daily bar. Price file columns: `day,ticker,open,close`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub day: Day,
    pub ticker: String,
    pub open: f64,
    pub close: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quote {
    pub open: f64,
    pub close: f64,
}

/// Bars indexed by day then ticker. The set of days is the trading calendar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PriceTable {
    bars: BTreeMap<Day, BTreeMap<String, Quote>>,
}

impl PriceTable {
    pub fn from_bars(bars: impl IntoIterator<Item = PriceBar>) -> Result<Self> {
        let mut table = PriceTable::default();
        for b in bars {
            if !(b.open > 0.0 && b.close > 0.0 && b.open.is_finite() && b.close.is_finite()) {
                return Err(Error::Config(format!(
                    "non-positive price for {} on {}",
                    b.ticker, b.day
                )));
            }
            let prev = table.bars.entry(b.day).or_default().insert(
                b.ticker.clone(),
                Quote {
                    open: b.open,
                    close: b.close,
                },
            );
            if prev.is_some() {
                return Err(Error::Config(format!("duplicate bar for {} on {}", b.ticker, b.day)));
            }
        }
        Ok(table)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let bars = reader
            .deserialize::<PriceBar>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_bars(bars)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for bar in self.bars() {
            w.serialize(bar)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn bars(&self) -> impl Iterator<Item = PriceBar> + '_ {
        self.bars.iter().flat_map(|(day, m)| {
            m.iter().map(move |(t, q)| PriceBar {
                day: *day,
                ticker: t.clone(),
                open: q.open,
                close: q.close,
            })
        })
    }

    pub fn days(&self) -> Vec<Day> {
        self.bars.keys().copied().collect()
    }

    pub fn tickers(&self) -> BTreeSet<String> {
        self.bars.values().flat_map(|m| m.keys().cloned()).collect()
    }

    pub fn quote(&self, day: Day, ticker: &str) -> Option<Quote> {
        self.bars.get(&day)?.get(ticker).copied()
    }

    pub fn close(&self, day: Day, ticker: &str) -> Option<f64> {
        self.quote(day, ticker).map(|q| q.close)
    }

    pub fn open(&self, day: Day, ticker: &str) -> Option<f64> {
        self.quote(day, ticker).map(|q| q.open)
    }

    pub fn has_day(&self, day: Day) -> bool {
        self.bars.contains_key(&day)
    }

    pub fn previous_day(&self, day: Day) -> Option<Day> {
        self.bars.range(..day).next_back().map(|(d, _)| *d)
    }

    pub fn next_day(&self, day: Day) -> Option<Day> {
        use std::ops::Bound::{Excluded, Unbounded};
        self.bars.range((Excluded(day), Unbounded)).next().map(|(d, _)| *d)
    }

    /// Tickers of `universe` that have a bar on `day`.
    pub fn active(&self, day: Day, universe: &[String]) -> Vec<String> {
        match self.bars.get(&day) {
            Some(m) => universe.iter().filter(|t| m.contains_key(*t)).cloned().collect(),
            None => Vec::new(),
        }
    }

    /// Copy restricted to days `<= last`.
    pub fn truncated(&self, last: Day) -> Self {
        PriceTable {
            bars: self.bars.range(..=last).map(|(d, m)| (*d, m.clone())).collect(),
        }
    }
}

/// One ticker per line; blank lines and `#` comments are skipped.
pub fn read_universe(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let tickers: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if tickers.is_empty() {
        return Err(Error::EmptyUniverse);
    }
    Ok(tickers)
}

pub fn write_universe(path: &Path, tickers: &[String]) -> Result<()> {
    let mut text = tickers.join("\n");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(m: u32, day: u32) -> Day {
        Day::from_ymd_opt(2024, m, day).unwrap()
    }

    fn bar(day: Day, t: &str, o: f64, c: f64) -> PriceBar {
        PriceBar {
            day,
            ticker: t.into(),
            open: o,
            close: c,
        }
    }

    #[test]
    fn calendar_navigation_skips_gaps() {
        let t = PriceTable::from_bars([
            bar(d(1, 5), "A", 1.0, 1.0),
            bar(d(1, 8), "A", 1.0, 1.1),
            bar(d(1, 9), "B", 2.0, 2.0),
        ])
        .unwrap();
        assert_eq!(t.previous_day(d(1, 8)), Some(d(1, 5)));
        assert_eq!(t.next_day(d(1, 5)), Some(d(1, 8)));
        assert_eq!(t.previous_day(d(1, 5)), None);
        assert_eq!(t.active(d(1, 9), &["A".into(), "B".into()]), vec!["B".to_string()]);
    }

    #[test]
    fn rejects_bad_bars() {
        assert!(PriceTable::from_bars([bar(d(1, 5), "A", 0.0, 1.0)]).is_err());
        assert!(PriceTable::from_bars([bar(d(1, 5), "A", 1.0, 1.0), bar(d(1, 5), "A", 1.0, 1.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let t = PriceTable::from_bars([bar(d(1, 5), "A", 1.25, 1.5), bar(d(1, 8), "B", 3.0, 2.75)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prices.csv");
        t.write_csv(&p).unwrap();
        assert!(fs::read_to_string(&p).unwrap().starts_with("day,ticker,open,close\n2024-01-05,A,1.25,1.5"));
        assert_eq!(PriceTable::read_csv(&p).unwrap(), t);
    }
}
