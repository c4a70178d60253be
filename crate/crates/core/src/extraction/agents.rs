use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::backend::{AgentBackend, AgentTask, ChatRequest};
use super::parse::{parse_argument_json, parse_filter_reply};
use super::prompts::PromptSet;
use super::{FilteredInfo, InvestmentArgument, Modality, Polarity, RawDataPoint};
use crate::concurrency::{fan_out, RetryPolicy};
use crate::error::{Error, Result};
use crate::Day;

/// How many filter calls a modality with several documents gets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterGranularity {
    /// Documents of one modality are concatenated into a single call.
    #[default]
    PerModality,
    PerDocument,
}

#[derive(Clone, Debug)]
pub struct ExtractionOptions {
    pub prompts: PromptSet,
    /// Extra attempts after a schema violation.
    pub max_reprompts: usize,
    pub retry: RetryPolicy,
    pub parallelism: usize,
    pub granularity: FilterGranularity,
}

impl Default for ExtractionOptions {
    fn default() -> Self {
        ExtractionOptions {
            prompts: PromptSet::default(),
            max_reprompts: 2,
            retry: RetryPolicy::default(),
            parallelism: 4,
            granularity: FilterGranularity::PerModality,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionFailure {
    pub day: Day,
    pub ticker: String,
    pub modality: Option<Modality>,
    pub stage: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtractionOutcome {
    pub arguments: Vec<InvestmentArgument>,
    pub failures: Vec<ExtractionFailure>,
}

fn call_with_reprompts<T>(
    backend: &dyn AgentBackend,
    request: &ChatRequest<'_>,
    opts: &ExtractionOptions,
    parse: impl Fn(&str) -> Result<T>,
) -> Result<T> {
    let mut last = None;
    for attempt in 0..=opts.max_reprompts {
        let reply = opts.retry.run(|| backend.complete(request))?;
        match parse(&reply) {
            Ok(v) => return Ok(v),
            Err(e) if e.is_schema_violation() => {
                log::debug!("schema violation on attempt {}: {e}", attempt + 1);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Filter agent: distils one modality's raw data into a summary.
pub fn filter_information(
    raw: &RawDataPoint,
    backend: &dyn AgentBackend,
    opts: &ExtractionOptions,
) -> Result<FilteredInfo> {
    let request = ChatRequest {
        system: &opts.prompts.system,
        user: opts.prompts.filter_prompt(raw),
        task: AgentTask::Filter(raw),
    };
    let reply = call_with_reprompts(backend, &request, opts, |t| parse_filter_reply(t, &raw.ticker))?;
    if !reply.modality_name.eq_ignore_ascii_case(raw.modality.name()) {
        log::debug!(
            "{} {}: filter labelled modality `{}`",
            raw.day,
            raw.ticker,
            reply.modality_name
        );
    }
    Ok(FilteredInfo {
        day: raw.day,
        ticker: raw.ticker.clone(),
        modality: raw.modality,
        summary: reply.summary,
    })
}

/// Generator agent: turns the filtered summaries of one stock-day into arguments.
///
/// Schema violations are re-prompted up to `opts.max_reprompts` times; the
/// final violation is returned so the caller can record it.
pub fn generate_arguments(
    name: &str,
    infos: &[FilteredInfo],
    backend: &dyn AgentBackend,
    opts: &ExtractionOptions,
) -> Result<Vec<InvestmentArgument>> {
    let first = infos.first().ok_or(Error::EmptyInput("filtered information"))?;
    let (day, ticker) = (first.day, first.ticker.as_str());
    if infos.iter().any(|i| i.day != day || i.ticker != ticker) {
        return Err(Error::ShapeMismatch(
            "generator input mixes stock-days".to_string(),
        ));
    }
    let request = ChatRequest {
        system: &opts.prompts.system,
        user: opts.prompts.generator_prompt(name, ticker, day, infos),
        task: AgentTask::Generate { day, ticker, infos },
    };
    let drafts = call_with_reprompts(backend, &request, opts, parse_argument_json)?;
    drafts
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.bind(day, ticker, i))
        .collect()
}

fn merge_documents(raws: &[RawDataPoint], granularity: FilterGranularity) -> Vec<RawDataPoint> {
    let mut sorted: Vec<&RawDataPoint> = raws.iter().collect();
    sorted.sort_by(|a, b| (&a.ticker, a.modality).cmp(&(&b.ticker, b.modality)));
    match granularity {
        FilterGranularity::PerDocument => sorted.into_iter().cloned().collect(),
        FilterGranularity::PerModality => {
            let mut merged: Vec<RawDataPoint> = Vec::new();
            for r in sorted {
                match merged.last_mut() {
                    Some(m) if m.ticker == r.ticker && m.modality == r.modality => {
                        m.body.push_str("\n\n");
                        m.body.push_str(&r.body);
                    }
                    _ => merged.push(r.clone()),
                }
            }
            merged
        }
    }
}

fn failure(day: Day, ticker: &str, modality: Option<Modality>, stage: &str, e: &Error) -> ExtractionFailure {
    log::warn!("{day} {ticker} {stage}: {e}");
    ExtractionFailure {
        day,
        ticker: ticker.to_string(),
        modality,
        stage: stage.to_string(),
        error: e.to_string(),
    }
}

/// Runs both agents over every raw data point of one day.
///
/// Calls fan out up to `opts.parallelism`; results come back ordered by
/// ticker, modality and argument index. A failed call leaves its data point
/// (or stock) without output and is recorded in `failures`.
pub fn extract_day(
    day: Day,
    raws: &[RawDataPoint],
    backend: &dyn AgentBackend,
    opts: &ExtractionOptions,
) -> ExtractionOutcome {
    let docs: Vec<RawDataPoint> = merge_documents(
        &raws.iter().filter(|r| r.day == day).cloned().collect::<Vec<_>>(),
        opts.granularity,
    );
    let filtered = fan_out(&docs, opts.parallelism, |r| filter_information(r, backend, opts));

    let mut outcome = ExtractionOutcome::default();
    let mut per_stock: BTreeMap<&str, (String, Vec<FilteredInfo>)> = BTreeMap::new();
    for (doc, res) in docs.iter().zip(filtered) {
        match res {
            Ok(info) => per_stock
                .entry(doc.ticker.as_str())
                .or_insert_with(|| (doc.asset_name().to_string(), Vec::new()))
                .1
                .push(info),
            Err(e) => outcome
                .failures
                .push(failure(day, &doc.ticker, Some(doc.modality), "filter", &e)),
        }
    }

    let stocks: Vec<(&str, (String, Vec<FilteredInfo>))> = per_stock.into_iter().collect();
    let generated = fan_out(&stocks, opts.parallelism, |(_, (name, infos))| {
        generate_arguments(name, infos, backend, opts)
    });
    for ((ticker, _), res) in stocks.iter().zip(generated) {
        match res {
            Ok(args) => outcome.arguments.extend(args),
            Err(e) => outcome.failures.push(failure(day, ticker, None, "generate", &e)),
        }
    }
    outcome
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SignReply {
    p: Polarity,
}

/// Raw-text pseudo-arguments used when structured argument generation is
/// switched off: one argument per document whose text is the document
/// itself and whose polarity comes from a single sign prompt.
pub fn pseudo_arguments(
    day: Day,
    raws: &[RawDataPoint],
    backend: &dyn AgentBackend,
    opts: &ExtractionOptions,
) -> ExtractionOutcome {
    let docs: Vec<RawDataPoint> = merge_documents(
        &raws.iter().filter(|r| r.day == day).cloned().collect::<Vec<_>>(),
        FilterGranularity::PerDocument,
    );
    let signs = fan_out(&docs, opts.parallelism, |r| {
        let request = ChatRequest {
            system: &opts.prompts.system,
            user: opts.prompts.polarity_prompt(r),
            task: AgentTask::Polarity(r),
        };
        call_with_reprompts(backend, &request, opts, |t| {
            let (inner, base) = super::parse::strip_code_fence(t)?;
            serde_json::from_str::<SignReply>(inner)
                .map(|s| s.p)
                .map_err(|e| Error::schema(base, e.to_string()))
        })
    });
    let mut outcome = ExtractionOutcome::default();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (doc, sign) in docs.iter().zip(signs) {
        match sign {
            Ok(p) => {
                let i = index.entry(doc.ticker.as_str()).or_insert(0);
                let arg = InvestmentArgument::new(
                    day,
                    &doc.ticker,
                    p,
                    &doc.body,
                    format!("{} raw data", doc.modality),
                    InvestmentArgument::make_id(day, &doc.ticker, *i),
                );
                *i += 1;
                match arg {
                    Ok(a) => outcome.arguments.push(a),
                    Err(e) => outcome
                        .failures
                        .push(failure(day, &doc.ticker, Some(doc.modality), "pseudo", &e)),
                }
            }
            Err(e) => outcome
                .failures
                .push(failure(day, &doc.ticker, Some(doc.modality), "polarity", &e)),
        }
    }
    outcome
}
