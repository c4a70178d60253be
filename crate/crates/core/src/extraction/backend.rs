use serde_json::json;

use super::{FilteredInfo, RawDataPoint};
use crate::error::Result;
use crate::Day;

/// What a chat request is for. Live backends only see `system` and `user`;
/// offline backends may use the task to answer without a model.
#[derive(Clone, Copy, Debug)]
pub enum AgentTask<'a> {
    Filter(&'a RawDataPoint),
    Generate {
        day: Day,
        ticker: &'a str,
        infos: &'a [FilteredInfo],
    },
    Polarity(&'a RawDataPoint),
}

#[derive(Clone, Debug)]
pub struct ChatRequest<'a> {
    pub system: &'a str,
    pub user: String,
    pub task: AgentTask<'a>,
}

/// A chat-completion endpoint: system prompt plus user prompt in, text out.
pub trait AgentBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String>;
}

/// Deterministic offline backend.
///
/// The filter stage echoes the raw body as the summary. The generator reads
/// summary lines of the form `+ rationale | evidence` (bullish) or
/// `- rationale | evidence` (bearish) and ignores everything else.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoBackend;

impl EchoBackend {
    fn marked_lines<'s>(text: &'s str) -> impl Iterator<Item = (i8, &'s str, &'s str)> + 's {
        text.lines().filter_map(|line| {
            let line = line.trim();
            let (sign, rest) = if let Some(r) = line.strip_prefix("+ ") {
                (1, r)
            } else if let Some(r) = line.strip_prefix("- ") {
                (-1, r)
            } else {
                return None;
            };
            let (a, e) = rest.split_once('|')?;
            let (a, e) = (a.trim(), e.trim());
            (!a.is_empty() && !e.is_empty()).then_some((sign, a, e))
        })
    }
}

impl AgentBackend for EchoBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String> {
        let reply = match request.task {
            AgentTask::Filter(raw) => json!({
                "Modality_name": raw.modality.name(),
                "Analysis_summary": raw.body,
                "Asset_code": raw.ticker,
            }),
            AgentTask::Generate { infos, .. } => {
                let items: Vec<_> = infos
                    .iter()
                    .flat_map(|i| Self::marked_lines(&i.summary))
                    .map(|(p, a, e)| json!({"p": p, "a": a, "e": e}))
                    .collect();
                json!(items)
            }
            AgentTask::Polarity(raw) => {
                let net: i32 = Self::marked_lines(&raw.body).map(|(p, _, _)| p as i32).sum();
                json!({"p": if net < 0 { -1 } else { 1 }})
            }
        };
        Ok(reply.to_string())
    }
}

#[cfg(feature = "http")]
pub use http::HttpChatBackend;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::{AgentBackend, ChatRequest};
    use crate::error::{Error, Result};

    pub const ENV_URL: &str = "MODEFLOW_CHAT_URL";
    pub const ENV_KEY: &str = "MODEFLOW_CHAT_API_KEY";
    pub const ENV_MODEL: &str = "MODEFLOW_CHAT_MODEL";

    /// OpenAI-compatible `/chat/completions` client.
    pub struct HttpChatBackend {
        url: String,
        api_key: Option<String>,
        model: String,
        agent: ureq::Agent,
    }

    impl HttpChatBackend {
        pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .build()
                .into();
            HttpChatBackend {
                url: url.into(),
                api_key,
                model: model.into(),
                agent,
            }
        }

        /// Reads `MODEFLOW_CHAT_URL`, `MODEFLOW_CHAT_API_KEY` and `MODEFLOW_CHAT_MODEL`.
        pub fn from_env() -> Result<Self> {
            let url = std::env::var(ENV_URL)
                .map_err(|_| Error::Config(format!("{ENV_URL} is not set")))?;
            let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
            Ok(Self::new(url, std::env::var(ENV_KEY).ok(), model))
        }
    }

    impl AgentBackend for HttpChatBackend {
        fn complete(&self, request: &ChatRequest<'_>) -> Result<String> {
            let body = json!({
                "model": self.model,
                "messages": [
                    {"role": "system", "content": request.system},
                    {"role": "user", "content": request.user},
                ],
            });
            let mut call = self.agent.post(&self.url);
            if let Some(key) = &self.api_key {
                call = call.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = call
                .send_json(&body)
                .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
            let reply: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::BackendUnavailable(format!("unreadable response: {e}")))?;
            reply["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::BackendUnavailable("response has no choices[0].message.content".into()))
        }
    }
}
