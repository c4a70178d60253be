//! Per-day loop state and its on-disk store.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::ModeAlignment;
use crate::error::{Error, Result};
use crate::evaluation::PerfState;
use crate::extraction::{ExtractionFailure, InvestmentArgument, Polarity};
use crate::modes::{DailyModeSet, Projection, ResponsibilityMatrix};
use crate::signal::{PortfolioWeights, StockSignal};
use crate::Day;

/// What the next day needs to know about one of today's arguments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentRef {
    pub id: String,
    pub ticker: String,
    pub p: Polarity,
}

impl From<&InvestmentArgument> for ArgumentRef {
    fn from(a: &InvestmentArgument) -> Self {
        ArgumentRef {
            id: a.id.clone(),
            ticker: a.ticker.clone(),
            p: a.polarity,
        }
    }
}

/// Everything day `t+1` reads from day `t`.
///
/// `modes` are the mixture today's arguments were fitted to (carried forward
/// unchanged on a day without arguments) and `lineage` their lineage ids.
/// `perf` holds the performance memory used to score today's arguments; it is
/// labelled like the previous day's modes, and `alignment` maps those labels
/// onto today's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyState {
    pub day: Day,
    pub modes: Option<DailyModeSet>,
    pub lineage: Vec<u64>,
    pub next_lineage: u64,
    pub responsibilities: Option<ResponsibilityMatrix>,
    pub responsibility_digest: Option<String>,
    pub arguments: Vec<ArgumentRef>,
    pub alignment: Option<ModeAlignment>,
    pub perf: Option<PerfState>,
    /// Whether `perf` was freshly updated today (false when carried over).
    pub perf_updated: bool,
    pub signals: Vec<StockSignal>,
    pub weights: PortfolioWeights,
    /// No arguments arrived; modes and portfolio were carried forward.
    pub gap: bool,
    pub failures: Vec<ExtractionFailure>,
}

/// One JSON document per day under `<dir>/days/`, written atomically.
pub struct StateStore {
    dir: PathBuf,
}

const MANIFEST: &str = "manifest.json";
const PROJECTION: &str = "projection.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    fingerprint: String,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

impl StateStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(dir.join("days"))?;
        Ok(StateStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn day_path(&self, day: Day) -> PathBuf {
        self.dir.join("days").join(format!("{day}.json"))
    }

    pub fn save(&self, state: &DailyState) -> Result<()> {
        write_atomic(&self.day_path(state.day), &serde_json::to_vec(state)?)
    }

    pub fn load(&self, day: Day) -> Result<Option<DailyState>> {
        match fs::read(self.day_path(day)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Every stored day, ascending.
    pub fn days(&self) -> Result<Vec<Day>> {
        let mut days = Vec::new();
        for entry in fs::read_dir(self.dir.join("days"))? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_suffix(".json") {
                if let Ok(d) = stem.parse::<Day>() {
                    days.push(d);
                }
            }
        }
        days.sort();
        Ok(days)
    }

    pub fn load_all(&self) -> Result<Vec<DailyState>> {
        self.days()?
            .into_iter()
            .map(|d| self.load(d).map(|s| s.expect("listed")))
            .collect()
    }

    /// Records the run fingerprint, or checks it against the stored one so
    /// that a resume never mixes settings.
    pub fn claim(&self, fingerprint: &str) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        match fs::read(&path) {
            Ok(bytes) => {
                let m: Manifest = serde_json::from_slice(&bytes)?;
                if m.fingerprint != fingerprint {
                    return Err(Error::Config(format!(
                        "state directory {} was written with different settings",
                        self.dir.display()
                    )));
                }
                Ok(())
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(
                &path,
                &serde_json::to_vec(&Manifest {
                    fingerprint: fingerprint.to_string(),
                })?,
            ),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save_projection(&self, p: &Projection) -> Result<()> {
        write_atomic(&self.dir.join(PROJECTION), &serde_json::to_vec(p)?)
    }

    pub fn load_projection(&self) -> Result<Option<Projection>> {
        match fs::read(self.dir.join(PROJECTION)) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}
