//! Training-set construction by translation.
//!
//! * Domain generalization (DG): several labelled corpora in different
//!   languages are translated into the pipeline language and merged.
//! * Domain randomization (DR): one corpus in the pipeline language is
//!   augmented with round-trip translations through intermediate languages.
//!   The originals are kept, so the output holds `(n_R + 1) * N` examples.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{merge, Corpus, CorpusError, Hop, Lang, StanceExample};
use crate::translation::{TranslateError, Translator};

/// Randomization degree at and beyond which performance is known to collapse.
pub const DEGRADATION_THRESHOLD: usize = 16;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("DG requires ≥ 2 sources, got {0}")]
    TooFewSources(usize),
    #[error("DR requires exactly one source corpus, got {0}")]
    DrSourceCount(usize),
    #[error("DR requires at least one intermediate language (n_R ≥ 1)")]
    NoIntermediates,
    #[error("duplicate intermediate language '{0}'")]
    DuplicateIntermediate(Lang),
    #[error("intermediate language '{0}' equals the base language")]
    PivotIsBase(Lang),
    #[error("DR source '{corpus}' is in {found}, expected base language {base}")]
    SourceNotBase {
        corpus: String,
        found: Lang,
        base: Lang,
    },
    #[error("unknown corpus '{0}'")]
    UnknownCorpus(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, AugmentError>;

/// Named corpora available to a plan.
pub type CorpusSet = BTreeMap<String, Corpus>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugmentationMode {
    #[serde(rename = "DG")]
    DomainGeneralization,
    #[serde(rename = "DR")]
    DomainRandomization,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceRef {
    pub corpus: String,
    pub language: Lang,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationPlan {
    pub mode: AugmentationMode,
    pub base_language: Lang,
    pub sources: Vec<SourceRef>,
    #[serde(default)]
    pub intermediates: Vec<Lang>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanWarning {
    /// `n_R` at or above [`DEGRADATION_THRESHOLD`].
    Degradation { n_r: usize },
}

/// Pivot languages by preset name.
pub fn preset(name: &str) -> Result<Vec<Lang>> {
    let tags: &[&str] = match name {
        // Same family as the Zulu target, plus Afrikaans.
        "african-family" => &["zu", "xh", "sn", "af"],
        // Unrelated families.
        "mixed-family" => &["fr", "ru", "zh", "ar", "hi", "sw"],
        _ => return Err(AugmentError::UnknownPreset(name.to_string())),
    };
    Ok(tags
        .iter()
        .map(|t| Lang::new(t).expect("valid tag"))
        .collect())
}

impl AugmentationPlan {
    pub fn dg(base: Lang, sources: Vec<SourceRef>, seed: u64) -> Self {
        AugmentationPlan {
            mode: AugmentationMode::DomainGeneralization,
            base_language: base,
            sources,
            intermediates: Vec::new(),
            seed,
        }
    }

    pub fn dr(base: Lang, source: SourceRef, intermediates: Vec<Lang>, seed: u64) -> Self {
        AugmentationPlan {
            mode: AugmentationMode::DomainRandomization,
            base_language: base,
            sources: vec![source],
            intermediates,
            seed,
        }
    }

    pub fn n_g(&self) -> usize {
        self.sources.len()
    }

    pub fn n_r(&self) -> usize {
        self.intermediates.len()
    }

    /// Checks the structural invariants. Returns warnings that do not block
    /// construction.
    pub fn validate(&self) -> Result<Vec<PlanWarning>> {
        let mut warnings = Vec::new();
        match self.mode {
            AugmentationMode::DomainGeneralization => {
                if self.sources.len() < 2 {
                    return Err(AugmentError::TooFewSources(self.sources.len()));
                }
            }
            AugmentationMode::DomainRandomization => {
                if self.sources.len() != 1 {
                    return Err(AugmentError::DrSourceCount(self.sources.len()));
                }
                if self.intermediates.is_empty() {
                    return Err(AugmentError::NoIntermediates);
                }
                let mut seen = HashSet::new();
                for l in &self.intermediates {
                    if *l == self.base_language {
                        return Err(AugmentError::PivotIsBase(l.clone()));
                    }
                    if !seen.insert(l) {
                        return Err(AugmentError::DuplicateIntermediate(l.clone()));
                    }
                }
                if self.n_r() >= DEGRADATION_THRESHOLD {
                    log::warn!(
                        "n_R = {} intermediate languages; expect degraded performance at this randomization degree",
                        self.n_r()
                    );
                    warnings.push(PlanWarning::Degradation { n_r: self.n_r() });
                }
            }
        }
        Ok(warnings)
    }
}

fn resolve<'a>(set: &'a CorpusSet, name: &str) -> Result<&'a Corpus> {
    set.get(name)
        .ok_or_else(|| AugmentError::UnknownCorpus(name.to_string()))
}

/// Translates every example of `corpus` from `src` to `dst`, appending the hop
/// to each example's provenance. Labels, targets and ids are kept.
pub fn translate_corpus(
    corpus: &Corpus,
    src: &Lang,
    dst: &Lang,
    translator: &Translator,
    jobs: usize,
) -> Result<Corpus> {
    if src == dst {
        return Ok(corpus.clone());
    }
    let texts: Vec<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    let out = translator.translate_many(&texts, src, dst, jobs)?;
    let examples = corpus
        .iter()
        .zip(out)
        .map(|(e, text)| {
            let mut provenance = e.provenance.clone();
            provenance.push(Hop::new(src, dst));
            StanceExample {
                text,
                language: dst.clone(),
                provenance,
                ..e.clone()
            }
        })
        .collect();
    Ok(Corpus::new(corpus.domain_id(), examples)?)
}

/// Domain generalization: every source translated into the base language,
/// then merged with namespaced ids.
pub fn build_dg(
    plan: &AugmentationPlan,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<Corpus> {
    plan.validate()?;
    for s in &plan.sources {
        resolve(corpora, &s.corpus)?;
        translator.check_pair(&s.language, &plan.base_language)?;
    }
    let mut parts = Vec::with_capacity(plan.sources.len());
    for s in &plan.sources {
        let c = resolve(corpora, &s.corpus)?;
        parts.push(translate_corpus(
            c,
            &s.language,
            &plan.base_language,
            translator,
            jobs,
        )?);
    }
    let refs: Vec<&Corpus> = parts.iter().collect();
    Ok(merge(&refs)?)
}

/// Domain randomization: originals followed by one round-trip block per
/// intermediate language, in plan order. Augmented ids are `<id>@<pivot>`.
pub fn build_dr(
    plan: &AugmentationPlan,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<Corpus> {
    plan.validate()?;
    let source = &plan.sources[0];
    let base = &plan.base_language;
    if source.language != *base {
        return Err(AugmentError::SourceNotBase {
            corpus: source.corpus.clone(),
            found: source.language.clone(),
            base: base.clone(),
        });
    }
    let corpus = resolve(corpora, &source.corpus)?;
    for pivot in &plan.intermediates {
        translator.check_pair(base, pivot)?;
        translator.check_pair(pivot, base)?;
    }
    let texts: Vec<&str> = corpus.iter().map(|e| e.text.as_str()).collect();
    let mut examples: Vec<StanceExample> = corpus.examples().to_vec();
    examples.reserve(corpus.size() * plan.n_r());
    for pivot in &plan.intermediates {
        let out = translator.round_trip_many(&texts, pivot, base, jobs)?;
        for (e, text) in corpus.iter().zip(out) {
            let mut provenance = e.provenance.clone();
            provenance.push(Hop::new(base, pivot));
            provenance.push(Hop::new(pivot, base));
            examples.push(StanceExample {
                id: format!("{}@{}", e.id, pivot),
                text,
                language: base.clone(),
                provenance,
                ..e.clone()
            });
        }
    }
    Ok(Corpus::new(corpus.domain_id(), examples)?)
}

/// Dispatches on the plan mode.
pub fn build(
    plan: &AugmentationPlan,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<Corpus> {
    match plan.mode {
        AugmentationMode::DomainGeneralization => build_dg(plan, corpora, translator, jobs),
        AugmentationMode::DomainRandomization => build_dr(plan, corpora, translator, jobs),
    }
}
