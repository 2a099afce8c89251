use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::TranslateError;
use crate::util::sha256_hex;

#[derive(Serialize, Deserialize)]
struct Record {
    k: String,
    v: String,
}

struct Inner {
    map: HashMap<String, String>,
    log: Option<File>,
}

/// Maps sha256(source|target|text) to a translation. With a backing file,
/// every new entry is appended as one JSON line before it becomes visible;
/// entries are never rewritten or evicted.
pub struct TranslationCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner { map: HashMap::new(), log: None }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Opens or creates the log at `path`. A torn final line left by an
    /// interrupted write is cut off; any other malformed line is an error.
    pub fn open(path: &Path) -> Result<Self, TranslateError> {
        let io = |e: std::io::Error| TranslateError::Io(format!("{}: {e}", path.display()));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let text = if path.exists() { std::fs::read_to_string(path).map_err(io)? } else { String::new() };
        let mut map = HashMap::new();
        let mut valid_len = 0;
        let mut offset = 0;
        let lines: Vec<&str> = text.split_inclusive('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            offset += line.len();
            if line.trim().is_empty() {
                valid_len = offset;
                continue;
            }
            let complete = line.ends_with('\n');
            match serde_json::from_str::<Record>(line) {
                Ok(r) if complete => {
                    map.insert(r.k, r.v);
                    valid_len = offset;
                }
                _ if i + 1 == lines.len() => {}
                _ => return Err(TranslateError::Io(format!("{} line {}: malformed record", path.display(), i + 1))),
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        if valid_len < text.len() {
            log.set_len(valid_len as u64).map_err(io)?;
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { map, log: Some(log) }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn key(source: &str, target: &str, text: &str) -> String {
        sha256_hex(format!("{source}|{target}|{text}").as_bytes())
    }

    pub fn get(&self, source: &str, target: &str, text: &str) -> Option<String> {
        let key = Self::key(source, target, text);
        let found = self.inner.lock().expect("cache lock").map.get(&key).cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    /// Inserts a translation. An existing entry for the key is kept as is.
    pub fn insert(&self, source: &str, target: &str, text: &str, translation: &str) -> Result<(), TranslateError> {
        let key = Self::key(source, target, text);
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.map.contains_key(&key) {
            return Ok(());
        }
        if let Some(log) = inner.log.as_mut() {
            let mut line = serde_json::to_string(&Record { k: key.clone(), v: translation.to_string() })
                .expect("record serializes");
            line.push('\n');
            log.write_all(line.as_bytes())
                .and_then(|_| log.flush())
                .map_err(|e| TranslateError::Io(e.to_string()))?;
        }
        inner.map.insert(key, translation.to_string());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
