//! Append-only translation cache.
//!
//! File layout: UTF-8, one JSON object per line, fields in this order:
//! `source_lang`, `target_lang`, `text_digest`, `backend_name`,
//! `source_text`, `translated_text`, `timestamp` (unix seconds).
//! Corrupt lines are skipped with a warning when the file is opened.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::corpus::Lang;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub source_lang: Lang,
    pub target_lang: Lang,
    pub text_digest: String,
    pub backend_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub source_lang: Lang,
    pub target_lang: Lang,
    pub text_digest: String,
    pub backend_name: String,
    pub source_text: String,
    pub translated_text: String,
    pub timestamp: u64,
}

impl CacheEntry {
    pub fn key(&self) -> CacheKey {
        CacheKey {
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
            text_digest: self.text_digest.clone(),
            backend_name: self.backend_name.clone(),
        }
    }
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Concurrent readers, one serialized writer. Each `put` is a single
/// `write_all` of one line to a file opened in append mode.
pub struct TranslationCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<CacheKey, CacheEntry>>,
    writer: Mutex<Option<File>>,
    load_warnings: usize,
}

impl TranslationCache {
    pub fn in_memory() -> Self {
        TranslationCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            load_warnings: 0,
        }
    }

    /// Opens (creating if needed) a cache file and loads its entries.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        let mut warnings = 0;
        if path.exists() {
            let content = fs::read_to_string(&path)?;
            for (i, line) in content.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(e) => {
                        entries.entry(e.key()).or_insert(e);
                    }
                    Err(err) => {
                        warnings += 1;
                        log::warn!(
                            "{}:{}: skipping corrupt cache line: {}",
                            path.display(),
                            i + 1,
                            err
                        );
                    }
                }
            }
            // A torn final line must not glue itself onto the next record.
            if !content.is_empty() && !content.ends_with('\n') {
                OpenOptions::new()
                    .append(true)
                    .open(&path)?
                    .write_all(b"\n")?;
            }
        } else if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(TranslationCache {
            path: Some(path),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(file)),
            load_warnings: warnings,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Number of corrupt lines skipped while opening.
    pub fn load_warnings(&self) -> usize {
        self.load_warnings
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.entries.read().get(key).cloned()
    }

    /// Inserts an entry; an entry whose key is already present is ignored.
    pub fn put(&self, entry: CacheEntry) -> std::io::Result<()> {
        let key = entry.key();
        let mut writer = self.writer.lock();
        if self.entries.read().contains_key(&key) {
            return Ok(());
        }
        if let Some(f) = writer.as_mut() {
            let mut line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        self.entries.write().insert(key, entry);
        Ok(())
    }
}
