use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, hex encoded.
pub fn content_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Serialize, Deserialize)]
struct Line<V> {
    key: String,
    value: V,
}

/// Content-addressed cache, optionally backed by an append-only JSONL file.
///
/// Concurrent inserts of the same key are harmless: values for a key are
/// identical by construction, and the last write wins.
pub struct ContentCache<V> {
    map: RwLock<HashMap<String, V>>,
    file: Option<Mutex<File>>,
}

impl<V: Clone + Serialize + DeserializeOwned> ContentCache<V> {
    pub fn in_memory() -> Self {
        Self {
            map: RwLock::new(HashMap::new()),
            file: None,
        }
    }

    /// Opens (or creates) a cache file and loads its entries. A torn last line is ignored.
    pub fn persistent(path: &Path) -> io::Result<Self> {
        let mut map = HashMap::new();
        if path.exists() {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if let Ok(entry) = serde_json::from_str::<Line<V>>(&line) {
                    map.insert(entry.key, entry.value);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let len = file.metadata()?.len();
        if len > 0 && !std::fs::read(path)?.ends_with(b"\n") {
            file.write_all(b"\n")?;
        }
        Ok(Self {
            map: RwLock::new(map),
            file: Some(Mutex::new(file)),
        })
    }

    pub fn get(&self, key: &str) -> Option<V> {
        self.map.read().unwrap().get(key).cloned()
    }

    pub fn insert(&self, key: String, value: V) {
        if let Some(file) = &self.file {
            let line = serde_json::to_string(&Line {
                key: key.clone(),
                value: value.clone(),
            })
            .expect("cache value serializes");
            let mut f = file.lock().unwrap();
            if let Err(e) = writeln!(f, "{line}") {
                log::warn!("cache append failed: {e}");
            }
        }
        self.map.write().unwrap().insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
