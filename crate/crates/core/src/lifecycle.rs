//! Effectiveness categories for mode lineages over labelled market regimes,
//! and softmax share series of the daily performance scores.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ordered_sum;
use crate::Day;

pub const LONG_TERM_THRESHOLD: f64 = 0.65;
pub const REGIME_THRESHOLD: f64 = 0.70;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bull,
    Bear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpan {
    pub start: Day,
    pub end: Day,
    pub label: Regime,
}

/// Inclusive, non-overlapping regime spans. CSV: `start,end,label`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeCalendar {
    spans: Vec<RegimeSpan>,
}

impl RegimeCalendar {
    pub fn new(mut spans: Vec<RegimeSpan>) -> Result<Self> {
        spans.sort_by_key(|s| s.start);
        for s in &spans {
            if s.end < s.start {
                return Err(Error::Config(format!("regime span {}..{} ends before it starts", s.start, s.end)));
            }
        }
        for w in spans.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::Config(format!(
                    "regime spans {}..{} and {}..{} overlap",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(RegimeCalendar { spans })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let spans = r.deserialize().collect::<std::result::Result<Vec<RegimeSpan>, _>>()?;
        Self::new(spans)
    }

    pub fn spans(&self) -> &[RegimeSpan] {
        &self.spans
    }

    pub fn label(&self, day: Day) -> Option<Regime> {
        self.spans
            .iter()
            .find(|s| s.start <= day && day <= s.end)
            .map(|s| s.label)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeCategory {
    LongTerm,
    BullEffective,
    BearEffective,
    Ineffective,
}

impl ModeCategory {
    pub const ALL: [ModeCategory; 4] = [
        ModeCategory::LongTerm,
        ModeCategory::BullEffective,
        ModeCategory::BearEffective,
        ModeCategory::Ineffective,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModeCategory::LongTerm => "long_term",
            ModeCategory::BullEffective => "bull_effective",
            ModeCategory::BearEffective => "bear_effective",
            ModeCategory::Ineffective => "ineffective",
        }
    }
}

impl fmt::Display for ModeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Share of `values` that are strictly positive; 0 for an empty slice.
fn positive_fraction(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let (mut n, mut pos) = (0usize, 0usize);
    for v in values {
        n += 1;
        if v > 0.0 {
            pos += 1;
        }
    }
    let frac = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
    (n, frac)
}

/// Applies the ordered rules to one lineage's `(regime, perf)` observations.
pub fn classify_series(observations: &[(Regime, f64)]) -> ModeCategory {
    let (_, all) = positive_fraction(observations.iter().map(|o| o.1));
    let (_, bull) = positive_fraction(observations.iter().filter(|o| o.0 == Regime::Bull).map(|o| o.1));
    let (_, bear) = positive_fraction(observations.iter().filter(|o| o.0 == Regime::Bear).map(|o| o.1));
    if all > LONG_TERM_THRESHOLD {
        ModeCategory::LongTerm
    } else if bull > REGIME_THRESHOLD {
        ModeCategory::BullEffective
    } else if bear > REGIME_THRESHOLD {
        ModeCategory::BearEffective
    } else {
        ModeCategory::Ineffective
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeLifecycleRecord {
    pub lineage_id: u64,
    pub category: ModeCategory,
    pub active_days: usize,
    pub positive_fraction: f64,
    pub bull_days: usize,
    pub bull_positive_fraction: f64,
    pub bear_days: usize,
    pub bear_positive_fraction: f64,
    #[serde(skip)]
    pub perf: Vec<(Day, f64)>,
}

/// Per-lineage performance observations, one entry per active day.
pub type PerfHistory = BTreeMap<u64, Vec<(Day, f64)>>;

/// Classifies every lineage of `history`. Observed days outside the
/// calendar are an error.
pub fn classify_modes(history: &PerfHistory, calendar: &RegimeCalendar) -> Result<Vec<ModeLifecycleRecord>> {
    let mut uncovered: Vec<Day> = history
        .values()
        .flatten()
        .map(|(d, _)| *d)
        .filter(|d| calendar.label(*d).is_none())
        .collect();
    uncovered.sort();
    uncovered.dedup();
    if !uncovered.is_empty() {
        return Err(Error::UncoveredDays(uncovered));
    }
    Ok(history
        .iter()
        .map(|(id, series)| {
            let obs: Vec<(Regime, f64)> = series
                .iter()
                .map(|(d, p)| (calendar.label(*d).expect("checked"), *p))
                .collect();
            let (active_days, positive) = positive_fraction(obs.iter().map(|o| o.1));
            let (bull_days, bull) = positive_fraction(obs.iter().filter(|o| o.0 == Regime::Bull).map(|o| o.1));
            let (bear_days, bear) = positive_fraction(obs.iter().filter(|o| o.0 == Regime::Bear).map(|o| o.1));
            ModeLifecycleRecord {
                lineage_id: *id,
                category: classify_series(&obs),
                active_days,
                positive_fraction: positive,
                bull_days,
                bull_positive_fraction: bull,
                bear_days,
                bear_positive_fraction: bear,
                perf: series.clone(),
            }
        })
        .collect())
}

/// `exp(x_k) / Σ_j exp(x_j)` with max subtraction.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total = ordered_sum(e.iter().copied());
    e.into_iter().map(|x| x / total).collect()
}

/// Softmax shares per day, keyed by lineage id.
pub fn daily_shares(perf_by_day: &BTreeMap<Day, Vec<(u64, f64)>>) -> BTreeMap<Day, Vec<(u64, f64)>> {
    perf_by_day
        .iter()
        .filter(|(_, modes)| !modes.is_empty())
        .map(|(day, modes)| {
            let values: Vec<f64> = modes.iter().map(|m| m.1).collect();
            let shares = softmax(&values);
            (*day, modes.iter().map(|m| m.0).zip(shares).collect())
        })
        .collect()
}

/// Shares summed by category; every category appears on every day.
pub fn category_shares(
    shares: &BTreeMap<Day, Vec<(u64, f64)>>,
    records: &[ModeLifecycleRecord],
) -> Vec<(Day, ModeCategory, f64)> {
    let category: BTreeMap<u64, ModeCategory> = records.iter().map(|r| (r.lineage_id, r.category)).collect();
    let mut out = Vec::new();
    for (day, modes) in shares {
        for c in ModeCategory::ALL {
            let s = ordered_sum(
                modes
                    .iter()
                    .filter(|(id, _)| category.get(id) == Some(&c))
                    .map(|m| m.1),
            );
            out.push((*day, c, s));
        }
    }
    out
}

/// Inverts a lineage history into per-day `(lineage, perf)` lists.
pub fn perf_by_day(history: &PerfHistory) -> BTreeMap<Day, Vec<(u64, f64)>> {
    let mut out: BTreeMap<Day, Vec<(u64, f64)>> = BTreeMap::new();
    for (id, series) in history {
        for (day, p) in series {
            out.entry(*day).or_default().push((*id, *p));
        }
    }
    out
}

pub fn write_lineage_csv(path: &Path, records: &[ModeLifecycleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lineage_id", "category", "active_days", "positive_fraction"])?;
    for r in records {
        w.write_record([
            r.lineage_id.to_string(),
            r.category.to_string(),
            r.active_days.to_string(),
            r.positive_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_shares_csv(path: &Path, rows: &[(Day, ModeCategory, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["day", "category", "share"])?;
    for (d, c, s) in rows {
        w.write_record([d.to_string(), c.to_string(), s.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
