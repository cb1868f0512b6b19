//! Stance datasets: labels, examples, corpora, ingestion and splitting.
//!
//! Two on-disk layouts are supported:
//!
//! * the SemEval-2016 Task 6 layout, a UTF-8 file with a header line and
//!   rows `ID<TAB>Target<TAB>Tweet<TAB>Stance` (extra trailing columns such as
//!   `Opinion Towards` are ignored);
//! * the native interchange layout, one JSON object per line with the fields
//!   `id`, `target`, `text`, `stance`, `language`, `provenance`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "malformed row at line {line}: expected at least 4 tab-separated columns, found {found}"
    )]
    MalformedRow { line: usize, found: usize },
    #[error("unknown stance label '{token}' at line {line}")]
    UnknownStance { token: String, line: usize },
    #[error("unknown stance label '{0}'")]
    UnknownLabel(String),
    #[error("invalid language tag '{0}'")]
    InvalidLanguage(String),
    #[error("empty text for example '{id}'")]
    EmptyText { id: String },
    #[error("text of example '{id}' contains a tab or newline")]
    ControlInText { id: String },
    #[error("duplicate example id '{0}'")]
    DuplicateId(String),
    #[error("invalid record at line {line}: {message}")]
    BadRecord { line: usize, message: String },
    #[error("train fraction {0} is outside (0, 1)")]
    BadFraction(f64),
    #[error("corpus has {0} examples, at least 2 are required to split")]
    TooSmall(usize),
    #[error("stratum '{0}' has a single example and cannot be split")]
    SingletonStratum(String),
    #[error("merge requires at least one corpus")]
    EmptyMerge,
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The closed three-way stance label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StanceLabel {
    Favor,
    Against,
    None,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::None];

    /// Class index used by the classifier head.
    pub fn index(self) -> usize {
        match self {
            StanceLabel::Favor => 0,
            StanceLabel::Against => 1,
            StanceLabel::None => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Favor => "FAVOR",
            StanceLabel::Against => "AGAINST",
            StanceLabel::None => "NONE",
        }
    }
}

impl FromStr for StanceLabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" | "IN-FAVOR" => Ok(StanceLabel::Favor),
            "AGAINST" => Ok(StanceLabel::Against),
            "NONE" => Ok(StanceLabel::None),
            _ => Err(CorpusError::UnknownLabel(s.to_string())),
        }
    }
}

impl TryFrom<String> for StanceLabel {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StanceLabel> for String {
    fn from(l: StanceLabel) -> String {
        l.as_str().to_string()
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// BCP-47-style language tag such as `en`, `zu` or `pt-BR`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Lang(String);

impl Lang {
    pub fn new(tag: &str) -> Result<Self> {
        let ok = !tag.is_empty()
            && tag.split('-').all(|part| {
                (1..=8).contains(&part.len()) && part.chars().all(|c| c.is_ascii_alphanumeric())
            });
        if ok {
            Ok(Lang(tag.to_string()))
        } else {
            Err(CorpusError::InvalidLanguage(tag.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for Lang {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self> {
        Lang::new(s)
    }
}

impl TryFrom<String> for Lang {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self> {
        Lang::new(&s)
    }
}

impl From<Lang> for String {
    fn from(l: Lang) -> String {
        l.0
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One translation step applied to an example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub from: Lang,
    pub to: Lang,
}

impl Hop {
    pub fn new(from: &Lang, to: &Lang) -> Self {
        Hop {
            from: from.clone(),
            to: to.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StanceExample {
    pub id: String,
    pub target: String,
    pub text: String,
    pub stance: StanceLabel,
    pub language: Lang,
    #[serde(default)]
    pub provenance: Vec<Hop>,
}

impl StanceExample {
    pub fn is_original(&self) -> bool {
        self.provenance.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(CorpusError::EmptyText {
                id: self.id.clone(),
            });
        }
        if self.text.contains(['\t', '\n', '\r']) {
            return Err(CorpusError::ControlInText {
                id: self.id.clone(),
            });
        }
        Ok(())
    }
}

/// An ordered, immutable collection of examples from one domain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Corpus {
    domain_id: String,
    examples: Vec<StanceExample>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness and the per-example invariants.
    pub fn new(domain_id: impl Into<String>, examples: Vec<StanceExample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(examples.len());
        for ex in &examples {
            ex.validate()?;
            if !seen.insert(ex.id.as_str()) {
                return Err(CorpusError::DuplicateId(ex.id.clone()));
            }
        }
        Ok(Corpus {
            domain_id: domain_id.into(),
            examples,
        })
    }

    pub fn empty(domain_id: impl Into<String>) -> Self {
        Corpus {
            domain_id: domain_id.into(),
            examples: Vec::new(),
        }
    }

    pub fn domain_id(&self) -> &str {
        &self.domain_id
    }

    pub fn examples(&self) -> &[StanceExample] {
        &self.examples
    }

    pub fn into_examples(self) -> Vec<StanceExample> {
        self.examples
    }

    pub fn size(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StanceExample> {
        self.examples.iter()
    }

    pub fn with_domain_id(mut self, domain_id: impl Into<String>) -> Self {
        self.domain_id = domain_id.into();
        self
    }

    /// Content digest (hex SHA-256 of the native serialization).
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.domain_id.as_bytes());
        h.update(b"\n");
        h.update(self.to_jsonl().as_bytes());
        hex::encode(h.finalize())
    }

    /// Native line-delimited JSON form.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ex in &self.examples {
            // StanceExample serialization cannot fail: all fields are strings.
            out.push_str(&serde_json::to_string(ex).expect("serializable example"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(domain_id: impl Into<String>, content: &str) -> Result<Self> {
        let mut examples = Vec::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ex: StanceExample =
                serde_json::from_str(line).map_err(|e| CorpusError::BadRecord {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            examples.push(ex);
        }
        Corpus::new(domain_id, examples)
    }

    /// SemEval tab-separated form, header included.
    pub fn to_semeval(&self) -> String {
        let mut out = String::from("ID\tTarget\tTweet\tStance\n");
        for ex in &self.examples {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                ex.id, ex.target, ex.text, ex.stance
            ));
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let content = read_text(path)?;
        Corpus::from_jsonl(file_stem(path), &content)
    }

    pub fn write_semeval(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_semeval().as_bytes())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a StanceExample;
    type IntoIter = std::slice::Iter<'a, StanceExample>;
    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match String::from_utf8(bytes) {
        Ok(s) => Ok(s),
        Err(e) => {
            log::warn!(
                "{} is not valid UTF-8; invalid bytes replaced",
                path.display()
            );
            Ok(String::from_utf8_lossy(e.as_bytes()).into_owned())
        }
    }
}

/// Writes through a temporary sibling and renames, so readers never observe
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(io)?;
        }
    }
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Reads a SemEval-layout file. The corpus domain id is `<language>-<file stem>`.
pub fn parse_semeval(path: &Path, language: &Lang) -> Result<Corpus> {
    let content = read_text(path)?;
    parse_semeval_str(
        &content,
        language,
        &format!("{}-{}", language, file_stem(path)),
    )
}

pub fn parse_semeval_str(content: &str, language: &Lang, domain_id: &str) -> Result<Corpus> {
    let mut examples = Vec::new();
    let content = content.strip_prefix('\u{feff}').unwrap_or(content);
    for (i, raw) in content.lines().enumerate().skip(1) {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(CorpusError::MalformedRow {
                line: line_no,
                found: cols.len(),
            });
        }
        let stance = cols[3]
            .parse::<StanceLabel>()
            .map_err(|_| CorpusError::UnknownStance {
                token: cols[3].trim().to_string(),
                line: line_no,
            })?;
        examples.push(StanceExample {
            id: cols[0].trim().to_string(),
            target: cols[1].trim().to_string(),
            text: cols[2].to_string(),
            stance,
            language: language.clone(),
            provenance: Vec::new(),
        });
    }
    Corpus::new(domain_id, examples)
}

/// Grouping used by [`class_counts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountBy {
    Stance,
    Target,
    StanceTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum CountKey {
    Stance(StanceLabel),
    Target(String),
    StanceTarget(String, StanceLabel),
}

/// Category → count. Stance categories are always present, zero when absent.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CountTable {
    counts: BTreeMap<CountKey, usize>,
}

impl CountTable {
    pub fn get(&self, key: &CountKey) -> usize {
        self.counts.get(key).copied().unwrap_or(0)
    }

    pub fn stance(&self, label: StanceLabel) -> usize {
        self.get(&CountKey::Stance(label))
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CountKey, &usize)> {
        self.counts.iter()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Multiplies every count by `k`.
    pub fn scaled(&self, k: usize) -> CountTable {
        CountTable {
            counts: self
                .counts
                .iter()
                .map(|(c, n)| (c.clone(), n * k))
                .collect(),
        }
    }
}

impl std::ops::Add for CountTable {
    type Output = CountTable;
    fn add(mut self, rhs: CountTable) -> CountTable {
        for (k, v) in rhs.counts {
            *self.counts.entry(k).or_insert(0) += v;
        }
        self
    }
}

pub fn class_counts(corpus: &Corpus, by: CountBy) -> CountTable {
    let mut counts = BTreeMap::new();
    match by {
        CountBy::Stance => {
            for l in StanceLabel::ALL {
                counts.insert(CountKey::Stance(l), 0);
            }
            for ex in corpus {
                *counts.entry(CountKey::Stance(ex.stance)).or_insert(0) += 1;
            }
        }
        CountBy::Target => {
            for ex in corpus {
                *counts
                    .entry(CountKey::Target(ex.target.clone()))
                    .or_insert(0) += 1;
            }
        }
        CountBy::StanceTarget => {
            for ex in corpus {
                for l in StanceLabel::ALL {
                    counts
                        .entry(CountKey::StanceTarget(ex.target.clone(), l))
                        .or_insert(0);
                }
            }
            for ex in corpus {
                *counts
                    .entry(CountKey::StanceTarget(ex.target.clone(), ex.stance))
                    .or_insert(0) += 1;
            }
        }
    }
    CountTable { counts }
}

/// Per-label counts as a fixed array indexed by [`StanceLabel::index`].
pub fn label_counts(corpus: &Corpus) -> [usize; 3] {
    let mut c = [0usize; 3];
    for ex in corpus {
        c[ex.stance.index()] += 1;
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratify {
    Stance,
    Target,
}

fn stratum_key(ex: &StanceExample, by: Stratify) -> String {
    match by {
        Stratify::Stance => ex.stance.to_string(),
        Stratify::Target => ex.target.clone(),
    }
}

/// Number of training examples for a fraction: `floor(fraction * n)`.
pub fn train_size(fraction: f64, n: usize) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 10 = 7.000000000000001
    // or 0.57 * 100 = 56.99999999999999.
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Seeded train/test partition. Both halves keep the input order.
pub fn split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
    stratify_by: Option<Stratify>,
) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::BadFraction(train_fraction));
    }
    let n = corpus.size();
    if n < 2 {
        return Err(CorpusError::TooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; n];
    match stratify_by {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..train_size(train_fraction, n)] {
                in_train[i] = true;
            }
        }
        Some(by) => {
            let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, ex) in corpus.iter().enumerate() {
                strata.entry(stratum_key(ex, by)).or_default().push(i);
            }
            if let Some((k, _)) = strata.iter().find(|(_, v)| v.len() < 2) {
                return Err(CorpusError::SingletonStratum(k.clone()));
            }
            // Largest-remainder allocation so the total matches the unstratified size.
            let total = train_size(train_fraction, n);
            let mut alloc: Vec<(usize, f64)> = strata
                .values()
                .map(|v| {
                    let exact = train_fraction * v.len() as f64;
                    let base = (exact + 1e-9).floor();
                    (base as usize, exact - base)
                })
                .collect();
            let assigned: usize = alloc.iter().map(|a| a.0).sum();
            let mut order: Vec<usize> = (0..alloc.len()).collect();
            order.sort_by(|&a, &b| alloc[b].1.total_cmp(&alloc[a].1).then(a.cmp(&b)));
            for &s in order.iter().take(total.saturating_sub(assigned)) {
                alloc[s].0 += 1;
            }
            for (members, (take, _)) in strata.into_values().zip(alloc) {
                let mut members = members;
                members.shuffle(&mut rng);
                for &i in &members[..take] {
                    in_train[i] = true;
                }
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (ex, t) in corpus.iter().zip(in_train) {
        if t {
            train.push(ex.clone());
        } else {
            test.push(ex.clone());
        }
    }
    Ok((
        Corpus {
            domain_id: corpus.domain_id.clone(),
            examples: train,
        },
        Corpus {
            domain_id: corpus.domain_id.clone(),
            examples: test,
        },
    ))
}

/// Concatenates corpora, re-namespacing ids as `<domain_id>/<id>`.
pub fn merge(corpora: &[&Corpus]) -> Result<Corpus> {
    if corpora.is_empty() {
        return Err(CorpusError::EmptyMerge);
    }
    let domain_id = corpora
        .iter()
        .map(|c| c.domain_id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let mut examples = Vec::with_capacity(corpora.iter().map(|c| c.size()).sum());
    for c in corpora {
        for ex in c.iter() {
            let mut ex = ex.clone();
            ex.id = format!("{}/{}", c.domain_id, ex.id);
            examples.push(ex);
        }
    }
    Corpus::new(domain_id, examples)
}
