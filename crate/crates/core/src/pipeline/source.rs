//! Where a day's arguments come from.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::extraction::{
    extract_day, pseudo_arguments, AgentBackend, ExtractionOptions, ExtractionOutcome, InvestmentArgument,
    RawDataPoint,
};
use crate::Day;

pub trait ArgumentSource: Send + Sync {
    /// Arguments (and recorded extraction failures) for `day`. Must only
    /// read inputs dated `day`.
    fn arguments(&self, day: Day) -> Result<ExtractionOutcome>;
}

/// Arguments extracted ahead of time.
pub struct StaticArguments {
    by_day: BTreeMap<Day, Vec<InvestmentArgument>>,
}

impl StaticArguments {
    pub fn new(arguments: impl IntoIterator<Item = InvestmentArgument>) -> Self {
        let mut by_day: BTreeMap<Day, Vec<InvestmentArgument>> = BTreeMap::new();
        for a in arguments {
            by_day.entry(a.day).or_default().push(a);
        }
        StaticArguments { by_day }
    }
}

impl ArgumentSource for StaticArguments {
    fn arguments(&self, day: Day) -> Result<ExtractionOutcome> {
        Ok(ExtractionOutcome {
            arguments: self.by_day.get(&day).cloned().unwrap_or_default(),
            failures: Vec::new(),
        })
    }
}

/// Raw documents run through an agent backend on demand. With `structured`
/// off each document becomes one argument carrying its own text.
pub struct ExtractedArguments {
    raws: BTreeMap<Day, Vec<RawDataPoint>>,
    backend: Box<dyn AgentBackend>,
    options: ExtractionOptions,
    structured: bool,
}

impl ExtractedArguments {
    pub fn new(
        raws: impl IntoIterator<Item = RawDataPoint>,
        backend: Box<dyn AgentBackend>,
        options: ExtractionOptions,
        structured: bool,
    ) -> Self {
        let mut by_day: BTreeMap<Day, Vec<RawDataPoint>> = BTreeMap::new();
        for r in raws {
            by_day.entry(r.day).or_default().push(r);
        }
        ExtractedArguments {
            raws: by_day,
            backend,
            options,
            structured,
        }
    }
}

impl ArgumentSource for ExtractedArguments {
    fn arguments(&self, day: Day) -> Result<ExtractionOutcome> {
        let Some(raws) = self.raws.get(&day) else {
            return Ok(ExtractionOutcome::default());
        };
        Ok(if self.structured {
            extract_day(day, raws, self.backend.as_ref(), &self.options)
        } else {
            pseudo_arguments(day, raws, self.backend.as_ref(), &self.options)
        })
    }
}
