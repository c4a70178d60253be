//! Realized scoring of yesterday's arguments and the per-mode performance
//! memory carried through alignments.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::alignment::Matching;
use crate::error::{Error, Result};
use crate::extraction::Polarity;
use crate::market::PriceTable;
use crate::modes::ResponsibilityMatrix;
use crate::Day;

/// Responsibility mass below which a mode's aggregate score is defined as 0.
pub const DEAD_MODE_MASS: f64 = 1e-12;

/// Cross-sectionally demeaned one-day returns.
pub fn excess_returns(closes_t: &[f64], closes_prev: &[f64]) -> Result<Vec<f64>> {
    if closes_t.len() != closes_prev.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} closes against {} previous closes",
            closes_t.len(),
            closes_prev.len()
        )));
    }
    if closes_t.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(bad) = closes_t.iter().chain(closes_prev).find(|c| !(**c > 0.0)) {
        return Err(Error::NumericalFailure(format!("non-positive close {bad}")));
    }
    let raw: Vec<f64> = closes_t
        .iter()
        .zip(closes_prev)
        .map(|(c, p)| (c - p) / p)
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(raw.into_iter().map(|r| r - mean).collect())
}

/// Excess returns from `prev` close to `day` close for the tickers of
/// `universe` priced on both days. Tickers missing either close are left out
/// of the cross-section.
pub fn excess_returns_between(
    prices: &PriceTable,
    prev: Day,
    day: Day,
    universe: &[String],
) -> BTreeMap<String, f64> {
    let mut tickers = Vec::new();
    let mut now = Vec::new();
    let mut before = Vec::new();
    for t in universe {
        match (prices.close(day, t), prices.close(prev, t)) {
            (Some(c), Some(p)) => {
                tickers.push(t.clone());
                now.push(c);
                before.push(p);
            }
            _ => log::warn!("{t}: no close on {prev} or {day}, left out of the cross-section"),
        }
    }
    let r = excess_returns(&now, &before).expect("validated prices");
    tickers.into_iter().zip(r).collect()
}

pub fn realized_score(polarity: Polarity, excess_return: f64) -> f64 {
    polarity.sign() * excess_return
}

/// Responsibility-weighted mean score for every mode.
pub fn aggregate_mode_scores(resp: &[Vec<f64>], scores: &[f64], k: usize) -> Result<Vec<f64>> {
    if resp.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} responsibility rows for {} scores",
            resp.len(),
            scores.len()
        )));
    }
    if let Some(r) = resp.iter().find(|r| r.len() != k) {
        return Err(Error::ShapeMismatch(format!("row of length {} for {k} modes", r.len())));
    }
    Ok((0..k)
        .map(|m| {
            let mass: f64 = resp.iter().map(|r| r[m]).sum();
            if mass < DEAD_MODE_MASS {
                return 0.0;
            }
            let weighted: f64 = resp.iter().zip(scores).map(|(r, s)| r[m] * s).sum();
            weighted / mass
        })
        .collect())
}

/// [`aggregate_mode_scores`] over the rows of a [`ResponsibilityMatrix`].
pub fn aggregate_matrix(resp: &ResponsibilityMatrix, scores: &[f64], k: usize) -> Result<Vec<f64>> {
    aggregate_mode_scores(&resp.rows, scores, k)
}

/// Per-mode performance memory in the labels of the modes fitted on `day`.
/// JSON: `{"day","perf","lineage","archived"}`; `archived` maps the lineage id
/// of every mode retired by this update to its last value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfState {
    pub day: Day,
    pub perf: Vec<f64>,
    #[serde(default)]
    pub lineage: Vec<u64>,
    #[serde(default)]
    pub archived: BTreeMap<String, f64>,
}

impl PerfState {
    pub fn empty(day: Day) -> Self {
        PerfState {
            day,
            perf: Vec::new(),
            lineage: Vec::new(),
            archived: BTreeMap::new(),
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> PerfState {
        PerfState {
            day: self.day,
            perf: perm.iter().map(|&p| self.perf[p]).collect(),
            lineage: if self.lineage.is_empty() {
                Vec::new()
            } else {
                perm.iter().map(|&p| self.lineage[p]).collect()
            },
            archived: self.archived.clone(),
        }
    }
}

/// Exponential update through an alignment from `prev`'s modes to the modes
/// scored by `agg`. Matched modes blend `λ·prev + (1−λ)·agg`; newborn modes
/// start from zero memory; retired modes are archived under their lineage.
pub fn update_perf(
    prev: &PerfState,
    alignment: &Matching,
    agg: &[f64],
    lambda: f64,
    day: Day,
    lineage: &[u64],
) -> Result<PerfState> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    if lineage.len() != agg.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} lineage ids for {} modes",
            lineage.len(),
            agg.len()
        )));
    }
    let in_range = alignment
        .pairs
        .iter()
        .all(|&(i, j)| i < prev.perf.len() && j < agg.len())
        && alignment.retired.iter().all(|&i| i < prev.perf.len());
    if !in_range {
        return Err(Error::ShapeMismatch(format!(
            "alignment does not fit {} previous and {} current modes",
            prev.perf.len(),
            agg.len()
        )));
    }
    let perf = agg
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let memory = alignment.source_of(k).map_or(0.0, |j| prev.perf[j]);
            lambda * memory + (1.0 - lambda) * a
        })
        .collect();
    let archived = alignment
        .retired
        .iter()
        .map(|&j| {
            let id = prev.lineage.get(j).map_or_else(|| format!("#{j}"), u64::to_string);
            (id, prev.perf[j])
        })
        .collect();
    Ok(PerfState {
        day,
        perf,
        lineage: lineage.to_vec(),
        archived,
    })
}

/// Lineage ids for the current modes: matched modes inherit, newborn modes
/// draw fresh ids from `next`.
pub fn carry_lineage(prev: &[u64], alignment: &Matching, k_curr: usize, next: &mut u64) -> Vec<u64> {
    (0..k_curr)
        .map(|k| match alignment.source_of(k) {
            Some(j) => prev[j],
            None => {
                let id = *next;
                *next += 1;
                id
            }
        })
        .collect()
}
