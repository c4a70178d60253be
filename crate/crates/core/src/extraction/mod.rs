//! Turning per-stock documents into validated investment arguments.
//!
//! Two routes produce [`InvestmentArgument`]s: the two-stage agent protocol
//! (a filter call per modality, then one generator call per stock-day) driven
//! through an [`AgentBackend`], and the offline [`synthetic`] generator.

mod agents;
mod backend;
mod parse;
mod prompts;
pub mod store;
pub mod synthetic;

use std::fmt;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::Day;

pub use agents::{
    extract_day, filter_information, generate_arguments, pseudo_arguments, ExtractionFailure,
    ExtractionOptions, ExtractionOutcome, FilterGranularity,
};
#[cfg(feature = "http")]
pub use backend::HttpChatBackend;
pub use backend::{AgentBackend, AgentTask, ChatRequest, EchoBackend};
pub use parse::{parse_argument_json, parse_filter_json, render_arguments, strip_code_fence};
pub use prompts::PromptSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Fundamental,
    News,
    Technical,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Fundamental, Modality::News, Modality::Technical];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Fundamental => "Fundamental",
            Modality::News => "News",
            Modality::Technical => "Technical",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDataPoint {
    pub day: Day,
    pub ticker: String,
    pub modality: Modality,
    pub body: String,
    /// Display name used in prompts; falls back to the ticker.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl RawDataPoint {
    pub fn new(day: Day, ticker: impl Into<String>, modality: Modality, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(Error::EmptyInput("raw data body"));
        }
        Ok(RawDataPoint {
            day,
            ticker: ticker.into(),
            modality,
            body,
            name: None,
        })
    }

    pub fn asset_name(&self) -> &str {
        self.name.as_deref().unwrap_or(&self.ticker)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredInfo {
    pub day: Day,
    pub ticker: String,
    pub modality: Modality,
    pub summary: String,
}

/// Directional stance of an argument. Serialized as the integer `1` or `-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Bullish,
    Bearish,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Bullish => 1.0,
            Polarity::Bearish => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Bullish => 1,
            Polarity::Bearish => -1,
        }
    }

    pub fn from_i64(v: i64) -> Option<Self> {
        match v {
            1 => Some(Polarity::Bullish),
            -1 => Some(Polarity::Bearish),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Bullish => Polarity::Bearish,
            Polarity::Bearish => Polarity::Bullish,
        }
    }
}

impl Serialize for Polarity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Polarity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct PolarityVisitor;

        impl de::Visitor<'_> for PolarityVisitor {
            type Value = Polarity;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("the integer 1 or -1")
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Polarity, E> {
                Polarity::from_i64(v)
                    .ok_or_else(|| E::invalid_value(de::Unexpected::Signed(v), &self))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Polarity, E> {
                if v == 1 {
                    Ok(Polarity::Bullish)
                } else {
                    Err(E::invalid_value(de::Unexpected::Unsigned(v), &self))
                }
            }
        }

        d.deserialize_i64(PolarityVisitor)
    }
}

/// One directional thesis about one stock on one day.
///
/// The serde form is the argument JSON-lines record:
/// `{"day", "ticker", "p", "a", "e", "id"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvestmentArgument {
    pub day: Day,
    pub ticker: String,
    #[serde(rename = "p")]
    pub polarity: Polarity,
    #[serde(rename = "a")]
    pub rationale: String,
    #[serde(rename = "e")]
    pub evidence: String,
    pub id: String,
}

impl InvestmentArgument {
    pub fn new(
        day: Day,
        ticker: impl Into<String>,
        polarity: Polarity,
        rationale: impl Into<String>,
        evidence: impl Into<String>,
        id: impl Into<String>,
    ) -> Result<Self> {
        let rationale = rationale.into();
        let evidence = evidence.into();
        if rationale.trim().is_empty() {
            return Err(Error::EmptyInput("argument rationale"));
        }
        if evidence.trim().is_empty() {
            return Err(Error::EmptyInput("argument evidence"));
        }
        Ok(InvestmentArgument {
            day,
            ticker: ticker.into(),
            polarity,
            rationale,
            evidence,
            id: id.into(),
        })
    }

    /// Identifier of the `index`-th argument produced for `(day, ticker)`.
    pub fn make_id(day: Day, ticker: &str, index: usize) -> String {
        format!("{day}:{ticker}:{index}")
    }
}

/// A parsed `{p, a, e}` object before it is bound to a stock-day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentDraft {
    #[serde(rename = "p")]
    pub polarity: Polarity,
    #[serde(rename = "a")]
    pub rationale: String,
    #[serde(rename = "e")]
    pub evidence: String,
}

impl ArgumentDraft {
    pub fn bind(self, day: Day, ticker: &str, index: usize) -> Result<InvestmentArgument> {
        InvestmentArgument::new(
            day,
            ticker,
            self.polarity,
            self.rationale,
            self.evidence,
            InvestmentArgument::make_id(day, ticker, index),
        )
    }
}

impl From<&InvestmentArgument> for ArgumentDraft {
    fn from(a: &InvestmentArgument) -> Self {
        ArgumentDraft {
            polarity: a.polarity,
            rationale: a.rationale.clone(),
            evidence: a.evidence.clone(),
        }
    }
}
