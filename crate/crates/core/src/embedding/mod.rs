//! Argument text to fixed-length vectors.
//!
//! The encoded text is `rationale + "\n" + evidence`. Results are cached by a
//! digest of (encoder id, normalization flag, text), so identical arguments on
//! different days map to the same vector and reruns make no encoder calls.

mod cache;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{cache_key, CacheKey, EmbeddingCache};

use crate::concurrency::{fan_out, RetryPolicy};
use crate::error::{Error, Result};
use crate::extraction::InvestmentArgument;
use crate::numeric::l2_norm;
use crate::Day;

/// Separator placed between rationale and evidence before encoding.
pub const TEXT_SEPARATOR: &str = "\n";

pub fn argument_text(arg: &InvestmentArgument) -> String {
    format!("{}{TEXT_SEPARATOR}{}", arg.rationale, arg.evidence)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArgumentEmbedding {
    pub argument_id: String,
    pub day: Day,
    pub ticker: String,
    pub vector: Vec<f64>,
}

/// Batch text encoder.
pub trait EncoderBackend: Send + Sync {
    /// Stable identifier folded into cache keys.
    fn id(&self) -> String;
    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

/// Offline encoder: each lower-cased alphanumeric token maps to a
/// pseudo-random unit vector derived from `(seed, token)`; a text is the
/// renormalized sum of its token vectors.
#[derive(Clone, Debug)]
pub struct HashEncoder {
    dim: usize,
    seed: u64,
}

impl HashEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        HashEncoder { dim, seed }
    }

    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = l2_norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    fn encode_one(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let tv = self.token_vector(&token.to_lowercase());
            acc.iter_mut().zip(tv).for_each(|(a, b)| *a += b);
        }
        let n = l2_norm(&acc);
        if n > 0.0 {
            acc.iter_mut().for_each(|a| *a /= n);
        }
        acc
    }
}

impl EncoderBackend for HashEncoder {
    fn id(&self) -> String {
        format!("hash-{}-{}", self.dim, self.seed)
    }

    fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.encode_one(t)).collect())
    }
}

#[derive(Clone, Debug)]
pub struct EmbedderOptions {
    pub normalize: bool,
    pub batch_size: usize,
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for EmbedderOptions {
    fn default() -> Self {
        EmbedderOptions {
            normalize: true,
            batch_size: 64,
            parallelism: 1,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct Embedder {
    encoder: Box<dyn EncoderBackend>,
    encoder_id: String,
    cache: EmbeddingCache,
    options: EmbedderOptions,
    dim: OnceLock<usize>,
    calls: AtomicUsize,
}

impl Embedder {
    pub fn new(encoder: Box<dyn EncoderBackend>, cache: EmbeddingCache, options: EmbedderOptions) -> Self {
        let encoder_id = encoder.id();
        Embedder {
            encoder,
            encoder_id,
            cache,
            options,
            dim: OnceLock::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of `encode` calls issued so far (cache hits issue none).
    pub fn encoder_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Dimension pinned by the first vector seen, if any.
    pub fn dim(&self) -> Option<usize> {
        self.dim.get().copied()
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        let pinned = *self.dim.get_or_init(|| len);
        if pinned != len {
            return Err(Error::DimensionMismatch {
                expected: pinned,
                got: len,
            });
        }
        Ok(())
    }

    fn finish(&self, mut v: Vec<f64>) -> Result<Arc<[f64]>> {
        self.check_dim(v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("encoder returned a non-finite value".into()));
        }
        if self.options.normalize {
            let n = l2_norm(&v);
            if n == 0.0 {
                return Err(Error::NumericalFailure("cannot normalize a zero vector".into()));
            }
            v.iter_mut().for_each(|x| *x /= n);
        }
        Ok(Arc::from(v))
    }

    pub fn embed_argument(&self, arg: &InvestmentArgument) -> Result<ArgumentEmbedding> {
        Ok(self
            .embed_day(std::slice::from_ref(arg))?
            .pop()
            .expect("one embedding per argument"))
    }

    /// Embeds `args` in order. Cache misses are encoded in batches.
    pub fn embed_day(&self, args: &[InvestmentArgument]) -> Result<Vec<ArgumentEmbedding>> {
        let keyed: Vec<(CacheKey, String)> = args
            .iter()
            .map(|a| {
                let text = argument_text(a);
                (cache_key(&self.encoder_id, self.options.normalize, &text), text)
            })
            .collect();

        // first argument index for every missing key, in order of appearance
        let mut missing: Vec<usize> = Vec::new();
        let mut seen: HashMap<CacheKey, ()> = HashMap::new();
        for (i, (key, _)) in keyed.iter().enumerate() {
            if self.cache.get(key).is_none() && seen.insert(*key, ()).is_none() {
                missing.push(i);
            }
        }

        let batches: Vec<&[usize]> = missing.chunks(self.options.batch_size.max(1)).collect();
        let encoded = fan_out(&batches, self.options.parallelism, |batch| {
            let texts: Vec<String> = batch.iter().map(|&i| keyed[i].1.clone()).collect();
            self.options.retry.run(|| {
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.encoder.encode(&texts)
            })
        });
        for (batch, result) in batches.iter().zip(encoded) {
            let vectors = result.map_err(|e| e.for_argument(&args[batch[0]].id))?;
            if vectors.len() != batch.len() {
                return Err(Error::ShapeMismatch(format!(
                    "encoder returned {} vectors for {} texts",
                    vectors.len(),
                    batch.len()
                ))
                .for_argument(&args[batch[0]].id));
            }
            for (&i, v) in batch.iter().zip(vectors) {
                let v = self.finish(v).map_err(|e| e.for_argument(&args[i].id))?;
                self.cache.insert(keyed[i].0, v)?;
            }
        }
        self.cache.flush()?;

        args.iter()
            .zip(&keyed)
            .map(|(a, (key, _))| {
                let v = self.cache.get(key).expect("filled above");
                self.check_dim(v.len()).map_err(|e| e.for_argument(&a.id))?;
                Ok(ArgumentEmbedding {
                    argument_id: a.id.clone(),
                    day: a.day,
                    ticker: a.ticker.clone(),
                    vector: v.to_vec(),
                })
            })
            .collect()
    }
}

#[cfg(feature = "http")]
pub use http::HttpEncoder;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde_json::{json, Value};

    use super::EncoderBackend;
    use crate::error::{Error, Result};

    pub const ENV_URL: &str = "MODEFLOW_EMBED_URL";
    pub const ENV_KEY: &str = "MODEFLOW_EMBED_API_KEY";
    pub const ENV_MODEL: &str = "MODEFLOW_EMBED_MODEL";

    /// OpenAI-compatible `/embeddings` client: `{"model", "input": [..]}` in,
    /// `{"data": [{"index", "embedding"}]}` out.
    pub struct HttpEncoder {
        url: String,
        api_key: Option<String>,
        model: String,
        agent: ureq::Agent,
    }

    impl HttpEncoder {
        pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs(120)))
                .build()
                .into();
            HttpEncoder {
                url: url.into(),
                api_key,
                model: model.into(),
                agent,
            }
        }

        /// Reads `MODEFLOW_EMBED_URL`, `MODEFLOW_EMBED_API_KEY` and `MODEFLOW_EMBED_MODEL`.
        pub fn from_env() -> Result<Self> {
            let url = std::env::var(ENV_URL)
                .map_err(|_| Error::Config(format!("{ENV_URL} is not set")))?;
            let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
            Ok(Self::new(url, std::env::var(ENV_KEY).ok(), model))
        }
    }

    impl EncoderBackend for HttpEncoder {
        fn id(&self) -> String {
            format!("http:{}", self.model)
        }

        fn encode(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            let mut call = self.agent.post(&self.url);
            if let Some(key) = &self.api_key {
                call = call.header("Authorization", &format!("Bearer {key}"));
            }
            let mut resp = call
                .send_json(&json!({"model": self.model, "input": texts}))
                .map_err(|e| Error::BackendUnavailable(e.to_string()))?;
            let body: Value = resp
                .body_mut()
                .read_json()
                .map_err(|e| Error::BackendUnavailable(format!("unreadable response: {e}")))?;
            let data = body["data"]
                .as_array()
                .ok_or_else(|| Error::BackendUnavailable("response has no data array".into()))?;
            let mut out: Vec<(usize, Vec<f64>)> = data
                .iter()
                .enumerate()
                .map(|(pos, item)| {
                    let idx = item["index"].as_u64().map(|i| i as usize).unwrap_or(pos);
                    let v = item["embedding"]
                        .as_array()
                        .ok_or_else(|| Error::BackendUnavailable("item without embedding".into()))?
                        .iter()
                        .map(|x| x.as_f64().ok_or_else(|| Error::BackendUnavailable("non-numeric embedding".into())))
                        .collect::<Result<Vec<f64>>>()?;
                    Ok((idx, v))
                })
                .collect::<Result<_>>()?;
            out.sort_by_key(|(i, _)| *i);
            Ok(out.into_iter().map(|(_, v)| v).collect())
        }
    }
}
