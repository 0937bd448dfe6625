use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{Message, Reply, Usage};
use crate::hash::sha256_hex;

#[derive(Serialize)]
struct KeyMaterial<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [Message],
}

pub fn cache_key(model: &str, temperature: f64, messages: &[Message]) -> String {
    let material = KeyMaterial { model, temperature, messages };
    sha256_hex(&serde_json::to_vec(&material).expect("cache key serializes"))
}

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    response_text: String,
    usage: Option<Usage>,
}

/// One JSON file per response, sharded by the first two hex digits of the
/// key. Unreadable entries are treated as misses and overwritten.
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    corrupt: AtomicU64,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            hits: AtomicU64::new(0),
            corrupt: AtomicU64::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<Reply> {
        let bytes = fs::read(self.path(key)).ok()?;
        match serde_json::from_slice::<Entry>(&bytes) {
            Ok(e) if e.key == key => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(Reply { text: e.response_text, usage: e.usage })
            }
            _ => {
                self.corrupt.fetch_add(1, Ordering::Relaxed);
                log::warn!("ignoring corrupt cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, key: &str, reply: &Reply) -> std::io::Result<()> {
        let path = self.path(key);
        fs::create_dir_all(path.parent().expect("sharded path"))?;
        let entry = Entry {
            key: key.to_owned(),
            response_text: reply.text.clone(),
            usage: reply.usage,
        };
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, serde_json::to_vec(&entry)?)?;
        fs::rename(tmp, path)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn corrupt(&self) -> u64 {
        self.corrupt.load(Ordering::Relaxed)
    }
}
