//! JSON-lines persistence for arguments and raw data points.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{InvestmentArgument, RawDataPoint};
use crate::error::{Error, Result};

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            Error::Config(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads an argument file, re-validating every record.
pub fn read_arguments(path: &Path) -> Result<Vec<InvestmentArgument>> {
    read_jsonl::<InvestmentArgument>(path)?
        .into_iter()
        .map(|a| InvestmentArgument::new(a.day, a.ticker, a.polarity, a.rationale, a.evidence, a.id))
        .collect()
}

pub fn read_raw(path: &Path) -> Result<Vec<RawDataPoint>> {
    let raws: Vec<RawDataPoint> = read_jsonl(path)?;
    if raws.iter().any(|r| r.body.trim().is_empty()) {
        return Err(Error::EmptyInput("raw data body"));
    }
    Ok(raws)
}
