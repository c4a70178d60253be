use serde::{Deserialize, Deserializer};

use super::{ArgumentDraft, Polarity};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireArgument {
    p: Polarity,
    #[serde(deserialize_with = "non_empty")]
    a: String,
    #[serde(deserialize_with = "non_empty")]
    e: String,
}

#[derive(Deserialize)]
struct WireFilter {
    #[serde(rename = "Modality_name")]
    modality_name: String,
    #[serde(rename = "Analysis_summary", deserialize_with = "non_empty")]
    analysis_summary: String,
    #[serde(rename = "Asset_code")]
    asset_code: String,
}

fn non_empty<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    let s = String::deserialize(d)?;
    if s.trim().is_empty() {
        return Err(serde::de::Error::custom("empty string"));
    }
    Ok(s)
}

/// Removes a surrounding Markdown code fence (```` ``` ```` or ```` ```json ````).
///
/// Returns the inner text and its byte offset within `text`. A fence that is
/// opened but never closed is a schema violation.
pub fn strip_code_fence(text: &str) -> Result<(&str, usize)> {
    let lead = text.len() - text.trim_start().len();
    let trimmed = text.trim();
    let Some(after_open) = trimmed.strip_prefix("```") else {
        return Ok((trimmed, lead));
    };
    let tag_len = after_open
        .bytes()
        .take_while(|b| b.is_ascii_alphanumeric())
        .count();
    let body = &after_open[tag_len..];
    let Some(inner) = body.strip_suffix("```") else {
        return Err(Error::schema(text.len(), "unterminated code fence"));
    };
    let inner_lead = inner.len() - inner.trim_start().len();
    let offset = lead + 3 + tag_len + inner_lead;
    Ok((inner.trim(), offset))
}

fn byte_offset(text: &str, err: &serde_json::Error) -> usize {
    let line = err.line().max(1);
    let line_start = if line == 1 {
        0
    } else {
        text.match_indices('\n')
            .nth(line - 2)
            .map(|(i, _)| i + 1)
            .unwrap_or(text.len())
    };
    (line_start + err.column().saturating_sub(1)).min(text.len())
}

fn parse_strict<'a, T: Deserialize<'a>>(text: &'a str) -> Result<T> {
    let (inner, base) = strip_code_fence(text)?;
    serde_json::from_str::<T>(inner)
        .map_err(|e| Error::schema(base + byte_offset(inner, &e), e.to_string()))
}

/// Strict parse of a generator reply: a JSON array of objects with exactly
/// the keys `p`, `a`, `e`, where `p` is the integer 1 or -1.
pub fn parse_argument_json(text: &str) -> Result<Vec<ArgumentDraft>> {
    let wire: Vec<WireArgument> = parse_strict(text)?;
    Ok(wire
        .into_iter()
        .map(|w| ArgumentDraft {
            polarity: w.p,
            rationale: w.a,
            evidence: w.e,
        })
        .collect())
}

/// Compact JSON array accepted by [`parse_argument_json`].
pub fn render_arguments(args: &[ArgumentDraft]) -> String {
    serde_json::to_string(args).expect("argument drafts always serialize")
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct FilterReply {
    pub modality_name: String,
    pub summary: String,
}

/// Parses a filter-agent reply and checks that `Asset_code` names `ticker`.
pub fn parse_filter_json(text: &str, ticker: &str) -> Result<String> {
    parse_filter_reply(text, ticker).map(|r| r.summary)
}

pub(crate) fn parse_filter_reply(text: &str, ticker: &str) -> Result<FilterReply> {
    let wire: WireFilter = parse_strict(text)?;
    if wire.asset_code.trim() != ticker {
        let at = text.find("Asset_code").unwrap_or(0);
        return Err(Error::schema(
            at,
            format!("Asset_code `{}` does not match `{ticker}`", wire.asset_code),
        ));
    }
    Ok(FilterReply {
        modality_name: wire.modality_name,
        summary: wire.analysis_summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_bearish_payload() {
        let args = parse_argument_json(r#"[{"p":-1,"a":"x","e":"y"}]"#).unwrap();
        assert_eq!(args.len(), 1);
        assert_eq!(args[0].polarity, Polarity::Bearish);
        assert_eq!(args[0].rationale, "x");
        assert_eq!(args[0].evidence, "y");
    }

    #[test]
    fn fences_are_stripped() {
        assert!(parse_argument_json("```json [] ```").unwrap().is_empty());
        assert!(parse_argument_json("```\n[]\n```").unwrap().is_empty());
        let args = parse_argument_json("```json\n[{\"p\":1,\"a\":\"undervalued\",\"e\":\"P/E at 2.8th percentile\"}]\n```").unwrap();
        assert_eq!(args[0].polarity, Polarity::Bullish);
    }

    #[test]
    fn top_level_object_is_rejected() {
        let err = parse_argument_json(r#"{"p":1,"a":"x","e":"y"}"#).unwrap_err();
        assert!(err.is_schema_violation());
    }

    #[test]
    fn polarity_domain_is_enforced() {
        let text = r#"[{"p":0,"a":"x","e":"y"}]"#;
        match parse_argument_json(text).unwrap_err() {
            Error::SchemaViolation { offset, .. } => assert!(offset >= 6 && offset <= 8, "{offset}"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn offset_points_into_second_line() {
        let text = "[\n  {\"p\":1,\"a\":\"x\",\"e\":\"y\"},\n  {\"p\":1,\"a\":\"x\"}\n]";
        match parse_argument_json(text).unwrap_err() {
            Error::SchemaViolation { offset, .. } => {
                let second = text.find("  {\"p\":1,\"a\":\"x\"}").unwrap();
                assert!(offset >= second, "{offset} < {second}");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn filter_reply_accepted_and_checked() {
        let ok = r#"{"Modality_name":"News","Analysis_summary":"Bank margins stable","Asset_code":"000001.SZ"}"#;
        assert_eq!(parse_filter_json(ok, "000001.SZ").unwrap(), "Bank margins stable");
        assert!(parse_filter_json(ok, "600000.SH").unwrap_err().is_schema_violation());
        let missing = r#"{"Modality_name":"News","Asset_code":"000001.SZ"}"#;
        assert!(parse_filter_json(missing, "000001.SZ").unwrap_err().is_schema_violation());
    }

    fn draft() -> impl Strategy<Value = ArgumentDraft> {
        (any::<bool>(), "\\PC*[a-z]\\PC*", "[ -~]*[A-Z][ -~]*").prop_map(|(bull, a, e)| ArgumentDraft {
            polarity: if bull { Polarity::Bullish } else { Polarity::Bearish },
            rationale: a,
            evidence: e,
        })
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(args in prop::collection::vec(draft(), 0..6)) {
            let text = render_arguments(&args);
            prop_assert_eq!(parse_argument_json(&text).unwrap(), args);
        }

        #[test]
        fn arbitrary_text_never_panics(text in "\\PC{0,64}") {
            let _ = parse_argument_json(&text);
        }
    }
}
