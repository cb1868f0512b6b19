//! Cleaning, tokenization and vocabulary for the pipeline language.

use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, Corpus, CorpusError};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const EMPTY: &str = "<empty>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const BOS_ID: usize = 2;
pub const EOS_ID: usize = 3;

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S+").expect("url regex"));
static MENTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"@[\w#]+").expect("mention regex"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningPolicy {
    pub strip_urls: bool,
    pub strip_mentions: bool,
    /// Drops the `#` but keeps the tag word.
    pub strip_hash_symbol: bool,
    pub lowercase: bool,
}

impl Default for CleaningPolicy {
    fn default() -> Self {
        CleaningPolicy {
            strip_urls: true,
            strip_mentions: true,
            strip_hash_symbol: true,
            lowercase: true,
        }
    }
}

impl CleaningPolicy {
    pub fn off() -> Self {
        CleaningPolicy {
            strip_urls: false,
            strip_mentions: false,
            strip_hash_symbol: false,
            lowercase: false,
        }
    }
}

fn squash_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn clean_pass(text: &str, policy: &CleaningPolicy) -> String {
    let mut s = text.to_string();
    if policy.strip_urls && URL_RE.is_match(&s) {
        s = squash_ws(&URL_RE.replace_all(&s, " "));
    }
    if policy.strip_mentions && MENTION_RE.is_match(&s) {
        s = squash_ws(&MENTION_RE.replace_all(&s, " "));
    }
    if policy.strip_hash_symbol && s.contains('#') {
        s = squash_ws(&s.replace('#', " "));
    }
    if policy.lowercase {
        s = s.to_lowercase();
    }
    s
}

/// Applies URL, mention, hash and lowercase rules in that order, repeated to
/// a fixed point so that `clean(clean(x)) == clean(x)`.
pub fn clean(text: &str, policy: &CleaningPolicy) -> String {
    let mut cur = clean_pass(text, policy);
    loop {
        let next = clean_pass(&cur, policy);
        if next == cur {
            break;
        }
        cur = next;
    }
    if cur.trim().is_empty() && text.chars().any(char::is_alphanumeric) {
        return EMPTY.to_string();
    }
    cur
}

fn is_special(chunk: &str) -> bool {
    chunk.len() > 2
        && chunk.starts_with('<')
        && chunk.ends_with('>')
        && chunk[1..chunk.len() - 1]
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_')
}

/// Whitespace split, then leading and trailing punctuation characters become
/// their own tokens. Inner punctuation (e.g. apostrophes) stays attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_special(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let is_word = |c: &char| c.is_alphanumeric();
        let start = chars.iter().position(is_word);
        let Some(start) = start else {
            out.extend(chars.iter().map(|c| c.to_string()));
            continue;
        };
        let end = chars.iter().rposition(is_word).expect("has a word char") + 1;
        out.extend(chars[..start].iter().map(|c| c.to_string()));
        out.push(chars[start..end].iter().collect());
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabConfig {
    pub min_frequency: usize,
    pub max_size: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            min_frequency: 2,
            max_size: 30_000,
        }
    }
}

/// Token ↔ id bijection with fixed reserved ids 0..=3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    itos: Vec<String>,
    stoi: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_itos(itos: Vec<String>) -> Self {
        let stoi = itos
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { itos, stoi }
    }

    /// Builds from token sequences. Most frequent first, ties broken by token.
    pub fn build<'a, I, S>(sequences: I, cfg: &VocabConfig) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut freq: HashMap<&str, usize> = HashMap::new();
        let seqs: Vec<&'a [S]> = sequences.into_iter().collect();
        for seq in &seqs {
            for t in seq.iter() {
                *freq.entry(t.as_ref()).or_insert(0) += 1;
            }
        }
        let reserved = [PAD, UNK, BOS, EOS];
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, n)| *n >= cfg.min_frequency.max(1) && !reserved.contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut itos: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        let room = cfg.max_size.saturating_sub(itos.len());
        itos.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Vocabulary::from_itos(itos)
    }

    pub fn len(&self) -> usize {
        self.itos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.itos.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.stoi.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.itos.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.stoi.contains_key(token)
    }

    pub fn numericalize<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.itos.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let itos: Vec<String> = text.lines().map(str::to_string).collect();
        let reserved = [PAD, UNK, BOS, EOS];
        if itos.len() < 4 || itos[..4] != reserved {
            return Err(CorpusError::BadRecord {
                line: 1,
                message: "vocabulary must start with <pad> <unk> <bos> <eos>".into(),
            });
        }
        let v = Vocabulary::from_itos(itos);
        if v.stoi.len() != v.itos.len() {
            return Err(CorpusError::BadRecord {
                line: 0,
                message: "vocabulary contains duplicate tokens".into(),
            });
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Clean + tokenize every example of a corpus.
pub fn tokenize_corpus(corpus: &Corpus, policy: &CleaningPolicy) -> Vec<Vec<String>> {
    corpus
        .iter()
        .map(|e| tokenize(&clean(&e.text, policy)))
        .collect()
}
