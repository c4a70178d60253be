//! Content-addressed vector cache: an in-memory map backed by an optional
//! append-only `vectors.bin` (little-endian f64) plus an `index.json`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type CacheKey = [u8; 32];

/// Digest of (encoder identifier, normalization flag, text).
pub fn cache_key(encoder_id: &str, normalized: bool, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update(encoder_id.as_bytes());
    h.update([0u8, normalized as u8, 0u8]);
    h.update(text.as_bytes());
    h.finalize().into()
}

#[derive(Default, Serialize, Deserialize)]
struct Index {
    /// hex key -> [offset, length], both in f64 units
    entries: BTreeMap<String, (u64, usize)>,
}

struct DiskStore {
    dir: PathBuf,
    bin: File,
    index: Index,
    next_offset: u64,
    dirty: bool,
}

const BIN: &str = "vectors.bin";
const INDEX: &str = "index.json";

#[derive(Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<CacheKey, Arc<[f64]>>>,
    store: Option<Mutex<DiskStore>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache directory and loads every stored vector.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let index: Index = match fs::read_to_string(dir.join(INDEX)) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(e.into()),
        };
        let mut raw = Vec::new();
        if let Ok(mut f) = File::open(dir.join(BIN)) {
            f.read_to_end(&mut raw)?;
        }
        let floats: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut entries = HashMap::with_capacity(index.entries.len());
        for (hex_key, &(offset, len)) in &index.entries {
            let start = offset as usize;
            let slice = floats.get(start..start + len).ok_or_else(|| {
                Error::Config(format!("cache index points past {}", dir.join(BIN).display()))
            })?;
            let mut key = [0u8; 32];
            hex::decode_to_slice(hex_key, &mut key)
                .map_err(|e| Error::Config(format!("bad cache key {hex_key}: {e}")))?;
            entries.insert(key, Arc::from(slice));
        }
        let bin = OpenOptions::new().create(true).append(true).open(dir.join(BIN))?;
        Ok(EmbeddingCache {
            entries: RwLock::new(entries),
            store: Some(Mutex::new(DiskStore {
                dir: dir.to_path_buf(),
                bin,
                index,
                next_offset: floats.len() as u64,
                dirty: false,
            })),
        })
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<[f64]>> {
        self.entries.read().unwrap().get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, key: CacheKey, vector: Arc<[f64]>) -> Result<()> {
        if let Some(store) = &self.store {
            let mut s = store.lock().unwrap();
            let hex_key = hex::encode(key);
            if !s.index.entries.contains_key(&hex_key) {
                let bytes: Vec<u8> = vector.iter().flat_map(|v| v.to_le_bytes()).collect();
                s.bin.write_all(&bytes)?;
                let offset = s.next_offset;
                s.index.entries.insert(hex_key, (offset, vector.len()));
                s.next_offset += vector.len() as u64;
                s.dirty = true;
            }
        }
        self.entries.write().unwrap().insert(key, vector);
        Ok(())
    }

    /// Writes the index if anything was added since the last flush.
    pub fn flush(&self) -> Result<()> {
        let Some(store) = &self.store else {
            return Ok(());
        };
        let mut s = store.lock().unwrap();
        if !s.dirty {
            return Ok(());
        }
        s.bin.flush()?;
        let tmp = s.dir.join(format!("{INDEX}.tmp"));
        fs::write(&tmp, serde_json::to_vec(&s.index)?)?;
        fs::rename(&tmp, s.dir.join(INDEX))?;
        s.dirty = false;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_every_component() {
        let k = cache_key("enc", true, "text");
        assert_ne!(k, cache_key("enc2", true, "text"));
        assert_ne!(k, cache_key("enc", false, "text"));
        assert_ne!(k, cache_key("enc", true, "text2"));
        assert_eq!(k, cache_key("enc", true, "text"));
    }

    #[test]
    fn disk_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let v: Arc<[f64]> = Arc::from(vec![0.1, -1.0 / 3.0, f64::MIN_POSITIVE]);
        let w: Arc<[f64]> = Arc::from(vec![2.5, 7.0]);
        {
            let c = EmbeddingCache::open(dir.path()).unwrap();
            c.insert(cache_key("e", true, "a"), v.clone()).unwrap();
            c.insert(cache_key("e", true, "b"), w.clone()).unwrap();
            c.flush().unwrap();
        }
        let c = EmbeddingCache::open(dir.path()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&cache_key("e", true, "a")).unwrap(), v);
        assert_eq!(c.get(&cache_key("e", true, "b")).unwrap(), w);
    }
}
