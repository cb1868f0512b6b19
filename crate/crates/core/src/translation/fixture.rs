//! Backend that replays recorded translations.
//!
//! Fixture files are line-delimited JSON records with the fields
//! `source_lang`, `target_lang`, `source_text`, `translated_text`.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::Deserialize;

use super::{normalize, BackendError, TranslateError, TranslationBackend};
use crate::corpus::Lang;

#[derive(Debug, Deserialize)]
struct FixtureRecord {
    source_lang: Lang,
    target_lang: Lang,
    source_text: String,
    translated_text: String,
}

#[derive(Debug, Default)]
pub struct FixtureBackend {
    table: HashMap<(Lang, Lang, String), String>,
    pairs: HashSet<(Lang, Lang)>,
}

impl FixtureBackend {
    pub fn from_jsonl(content: &str) -> Result<Self, TranslateError> {
        let mut fx = FixtureBackend::default();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: FixtureRecord = serde_json::from_str(line)
                .map_err(|e| TranslateError::Config(format!("fixture line {}: {e}", i + 1)))?;
            fx.insert(
                r.source_lang,
                r.target_lang,
                &r.source_text,
                r.translated_text,
            );
        }
        Ok(fx)
    }

    pub fn load(path: &Path) -> Result<Self, TranslateError> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| TranslateError::Config(format!("{}: {e}", path.display())))?;
        Self::from_jsonl(&content)
    }

    pub fn insert(&mut self, src: Lang, dst: Lang, source: &str, translated: String) {
        self.pairs.insert((src.clone(), dst.clone()));
        self.table
            .insert((src, dst, normalize(source.trim())), translated);
    }
}

impl TranslationBackend for FixtureBackend {
    fn name(&self) -> &str {
        "fixture"
    }

    fn supports(&self, src: &Lang, dst: &Lang) -> bool {
        self.pairs.contains(&(src.clone(), dst.clone()))
    }

    fn translate_once(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String, BackendError> {
        self.table
            .get(&(src.clone(), dst.clone(), normalize(text.trim())))
            .cloned()
            .ok_or_else(|| BackendError::Fatal(format!("no recorded translation for {src}→{dst}")))
    }
}
