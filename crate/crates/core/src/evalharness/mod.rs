//! Metrics, cross-validation, experiment runners for the baseline /
//! randomization / adaptation roles, multi-seed aggregation, and tables.

mod folds;
mod metrics;
pub mod synthetic;
mod tables;

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augmentation::{self, AugmentError, AugmentationMode, AugmentationPlan, CorpusSet};
use crate::corpus::{label_counts, split, Corpus, CorpusError, Lang, StanceLabel, Stratify};
use crate::model::{
    finetune_lm, lm_document, pretrain_lm, train_classifier, ClassifierReport, LanguageModel,
    LmConfig, LmReport, ModelConfig, ModelError, StanceModel, TrainConfig, TrainingSet,
};
use crate::textprep::{clean, tokenize, CleaningPolicy, VocabConfig, Vocabulary};
use crate::translation::{TranslateError, Translator};

pub use folds::{fold_assignment, kfold};
pub use metrics::{accuracy, per_class_f1, MetricSet};
pub use tables::{emit_table, write_table, TableFormat, TableLayout, TableSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold has {gold} labels, predictions have {pred}")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("no labels to score")]
    EmptyInput,
    #[error("k-fold needs k >= 2 and at least k examples (k = {k}, n = {n})")]
    BadFolds { k: usize, n: usize },
    #[error("invalid experiment '{name}': {message}")]
    Spec { name: String, message: String },
    #[error("unknown corpus '{0}'")]
    UnknownCorpus(String),
    #[error("test example {0} also appears in training data")]
    Leakage(String),
    #[error("corpus '{name}' digest {found} does not match manifest {expected}")]
    DigestMismatch {
        name: String,
        expected: String,
        found: String,
    },
    #[error("no seed completed: {0}")]
    NoSeedCompleted(String),
    #[error("table row '{0}' has no report")]
    MissingRow(String),
    #[error("no reports to tabulate")]
    NoReports,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Translate(#[from] TranslateError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "DLB")]
    Dlb,
    #[serde(rename = "DUB")]
    Dub,
    #[serde(rename = "DR_sweep")]
    DrSweep,
    #[serde(rename = "DA")]
    Da,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    Holdout {
        train_fraction: f64,
        #[serde(default)]
        stratify: Option<Stratify>,
    },
    Kfold {
        k: usize,
        #[serde(default)]
        stratify: bool,
    },
}

fn yes() -> bool {
    true
}

/// A whole corpus used as a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    /// Column block name in the tables, e.g. "English".
    pub label: String,
    pub corpus: String,
    /// Translate the test texts into this language before scoring.
    #[serde(default)]
    pub translate_to: Option<Lang>,
    /// Some official scorers do not report accuracy; the cell then shows "/".
    #[serde(default = "yes")]
    pub accuracy: bool,
}

/// A labeled target corpus split into train/test parts per the protocol.
/// The test parts are always scored; the train parts join the training data
/// only when `train_on_split` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub corpus: String,
    pub label: String,
    pub protocol: Protocol,
    pub split_seed: u64,
    #[serde(default)]
    pub train_on_split: bool,
    #[serde(default)]
    pub translate_to: Option<Lang>,
    #[serde(default = "yes")]
    pub accuracy: bool,
}

/// Text processing, model and optimization settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub cleaning: CleaningPolicy,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    /// General-domain LM pretraining; only used with `pretrain_corpus`.
    pub pretrain: LmConfig,
    /// LM fine-tuning on the training texts, labels ignored.
    pub finetune: LmConfig,
    pub classifier: TrainConfig,
    pub eval_batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cleaning: CleaningPolicy::default(),
            vocab: VocabConfig::default(),
            model: ModelConfig::default(),
            pretrain: LmConfig::default(),
            finetune: LmConfig::default(),
            classifier: TrainConfig::default(),
            eval_batch_size: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub role: Role,
    /// Labeled corpora used as training data without augmentation.
    #[serde(default)]
    pub train: Vec<String>,
    /// Augmented training data. A DR plan with no intermediates is the
    /// unaugmented source corpus.
    #[serde(default)]
    pub plan: Option<AugmentationPlan>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
    /// Unlabeled text for LM pretraining.
    #[serde(default)]
    pub pretrain_corpus: Option<String>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    fn invalid(&self, message: impl Into<String>) -> EvalError {
        EvalError::Spec {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(self.invalid("at least one seed is required"));
        }
        if self.tests.is_empty() && self.target.is_none() {
            return Err(self.invalid("no test set"));
        }
        let target_training = self.target.as_ref().is_some_and(|t| t.train_on_split);
        let has_base = !self.train.is_empty() || self.plan.is_some();
        if !has_base && !target_training {
            return Err(self.invalid("no training data"));
        }
        let labels: Vec<&str> = self
            .tests
            .iter()
            .map(|t| t.label.as_str())
            .chain(self.target.iter().map(|t| t.label.as_str()))
            .collect();
        let unique: BTreeSet<&str> = labels.iter().copied().collect();
        if unique.len() != labels.len() {
            return Err(self.invalid("test labels must be distinct"));
        }
        if let Some(t) = &self.target {
            match t.protocol {
                Protocol::Holdout { train_fraction, .. }
                    if !(train_fraction > 0.0 && train_fraction < 1.0) =>
                {
                    return Err(
                        self.invalid(format!("train_fraction {train_fraction} not in (0, 1)"))
                    );
                }
                Protocol::Kfold { k, .. } if k < 2 => {
                    return Err(self.invalid("k-fold needs k >= 2"))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.plan {
            if !(p.mode == AugmentationMode::DomainRandomization && p.intermediates.is_empty()) {
                for w in p.validate()? {
                    warn!("{}: {w:?}", self.name);
                }
            }
        }
        match self.role {
            Role::Dub => {
                if self.plan.is_some() || target_training {
                    return Err(self.invalid("DUB trains on untranslated in-domain data only"));
                }
                if self.tests.iter().any(|t| t.translate_to.is_some()) {
                    return Err(self.invalid("DUB test sets are not translated"));
                }
            }
            Role::Dlb => {
                if self.plan.is_some() {
                    return Err(self.invalid("DLB has no augmentation"));
                }
                if target_training && !self.train.is_empty() {
                    return Err(
                        self.invalid("DLB trains on the source or on the target split, not both")
                    );
                }
            }
            Role::DrSweep => match &self.plan {
                Some(p) if p.mode == AugmentationMode::DomainRandomization => {}
                _ => return Err(self.invalid("DR_sweep needs a DR plan")),
            },
            Role::Da => {
                if !target_training {
                    return Err(self.invalid("DA trains on the labeled target split"));
                }
                if !has_base {
                    return Err(self.invalid("DA also needs source training data"));
                }
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(
            serde_json::to_vec(self).expect("spec serializes"),
        ))
    }

    fn referenced_corpora(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self.train.iter().cloned().collect();
        if let Some(p) = &self.plan {
            names.extend(p.sources.iter().map(|s| s.corpus.clone()));
        }
        if let Some(t) = &self.target {
            names.insert(t.corpus.clone());
        }
        names.extend(self.tests.iter().map(|t| t.corpus.clone()));
        names.extend(self.pretrain_corpus.iter().cloned());
        names
    }
}

/// One spec per randomization degree, using the first `n` intermediates of
/// the plan. `n = 0` trains on the source corpus alone.
pub fn dr_sweep(spec: &ExperimentSpec, degrees: &[usize]) -> Result<Vec<ExperimentSpec>> {
    let plan = match &spec.plan {
        Some(p) if p.mode == AugmentationMode::DomainRandomization => p,
        _ => return Err(spec.invalid("DR_sweep needs a DR plan")),
    };
    degrees
        .iter()
        .map(|&n| {
            if n > plan.intermediates.len() {
                return Err(spec.invalid(format!(
                    "degree {n} exceeds the {} listed intermediates",
                    plan.intermediates.len()
                )));
            }
            let mut s = spec.clone();
            s.name = format!("{}-{n}", spec.name);
            s.role = Role::DrSweep;
            let mut p = plan.clone();
            p.intermediates.truncate(n);
            s.plan = Some(p);
            Ok(s)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub label: String,
    pub per_seed: Vec<SeedMetrics>,
    pub mean: MetricSet,
    /// Sample standard deviation across seeds.
    pub std: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Train/test ids of one fold; ids are `<corpus name>/<example id>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub train_size: usize,
    pub train_ids: Vec<String>,
    pub test_ids: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub fold: usize,
    pub vocab_size: usize,
    pub pretrain: Option<LmReport>,
    pub finetune: LmReport,
    pub classifier: ClassifierReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub spec: ExperimentSpec,
    pub spec_digest: String,
    pub backend: String,
    pub corpus_digests: BTreeMap<String, String>,
    pub folds: Vec<FoldRecord>,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub role: Role,
    /// Seeds that completed.
    pub seeds: Vec<u64>,
    pub failures: Vec<SeedFailure>,
    pub results: Vec<TestResult>,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct Payload<'a> {
    experiment: &'a str,
    role: Role,
    seeds: &'a [u64],
    results: &'a [TestResult],
}

impl EvalReport {
    pub fn result(&self, label: &str) -> Option<&TestResult> {
        self.results.iter().find(|r| r.label == label)
    }

    /// Metric values only, as canonical JSON. Two runs of the same manifest
    /// produce identical payloads.
    pub fn metrics_payload(&self) -> String {
        serde_json::to_string_pretty(&Payload {
            experiment: &self.experiment,
            role: self.role,
            seeds: &self.seeds,
            results: &self.results,
        })
        .expect("payload serializes")
    }

    /// Train ids that also appear among the test ids of the same fold.
    pub fn leaked_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.manifest.folds {
            let train: BTreeSet<&String> = f.train_ids.iter().collect();
            for ids in f.test_ids.values() {
                out.extend(ids.iter().filter(|i| train.contains(i)).cloned());
            }
        }
        out
    }
}

/// Token lists of a corpus after cleaning.
fn tokens_of(corpus: &Corpus, policy: &CleaningPolicy) -> Vec<Vec<String>> {
    corpus
        .iter()
        .map(|e| tokenize(&clean(&e.text, policy)))
        .collect()
}

/// Training rows with the key of the original example they came from.
#[derive(Debug, Clone, Default)]
struct Rows {
    tokens: Vec<Vec<String>>,
    labels: Vec<usize>,
    domains: Vec<String>,
    origins: Vec<String>,
}

impl Rows {
    fn push_corpus(
        &mut self,
        name: &str,
        corpus: &Corpus,
        origins: &[String],
        policy: &CleaningPolicy,
    ) {
        self.tokens.extend(tokens_of(corpus, policy));
        for (e, o) in corpus.iter().zip(origins) {
            self.labels.push(e.stance.index());
            let hops: Vec<String> = e.provenance.iter().map(|h| h.to.to_string()).collect();
            let tag = if hops.is_empty() {
                name.to_string()
            } else {
                format!("{name}>{}", hops.join(">"))
            };
            self.domains.push(tag);
            self.origins.push(o.clone());
        }
    }
}

fn resolve<'a>(corpora: &'a CorpusSet, name: &str) -> Result<&'a Corpus> {
    corpora
        .get(name)
        .ok_or_else(|| EvalError::UnknownCorpus(name.to_string()))
}

fn keys(name: &str, corpus: &Corpus) -> Vec<String> {
    corpus.iter().map(|e| format!("{name}/{}", e.id)).collect()
}

fn translated(
    corpus: &Corpus,
    to: &Option<Lang>,
    translator: &Translator,
    jobs: usize,
) -> Result<Corpus> {
    let Some(dst) = to else {
        return Ok(corpus.clone());
    };
    let Some(first) = corpus.examples().first() else {
        return Ok(corpus.clone());
    };
    let src = first.language.clone();
    if corpus.iter().any(|e| e.language != src) {
        return Err(EvalError::Spec {
            name: corpus.domain_id().to_string(),
            message: "mixed-language corpus cannot be translated as one".into(),
        });
    }
    Ok(augmentation::translate_corpus(
        corpus, &src, dst, translator, jobs,
    )?)
}

/// The unaugmented training rows shared by every fold.
fn base_rows(
    spec: &ExperimentSpec,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<Rows> {
    let policy = &spec.pipeline.cleaning;
    let mut rows = Rows::default();
    if let Some(plan) = &spec.plan {
        match plan.mode {
            AugmentationMode::DomainRandomization => {
                let src = &plan.sources[0].corpus;
                let c = resolve(corpora, src)?;
                let built = if plan.intermediates.is_empty() {
                    c.clone()
                } else {
                    augmentation::build(plan, corpora, translator, jobs)?
                };
                // Originals first, then one block per intermediate in the same order.
                let base = keys(src, c);
                let origins: Vec<String> =
                    base.iter().cycle().take(built.size()).cloned().collect();
                rows.push_corpus(src, &built, &origins, policy);
            }
            AugmentationMode::DomainGeneralization => {
                let built = augmentation::build(plan, corpora, translator, jobs)?;
                let mut origins = Vec::with_capacity(built.size());
                for s in &plan.sources {
                    origins.extend(keys(&s.corpus, resolve(corpora, &s.corpus)?));
                }
                rows.push_corpus(built.domain_id(), &built, &origins, policy);
            }
        }
    }
    for name in &spec.train {
        let c = resolve(corpora, name)?;
        if spec.role == Role::Dub && c.iter().any(|e| !e.is_original()) {
            return Err(spec.invalid(format!("DUB corpus '{name}' contains translated examples")));
        }
        rows.push_corpus(name, c, &keys(name, c), policy);
    }
    Ok(rows)
}

struct Fold {
    train: Rows,
    /// Counts of the labeled target training part, used for λ_BF.
    target_counts: Option<[usize; 3]>,
    tests: Vec<PreparedTest>,
    record: FoldRecord,
}

struct PreparedTest {
    label: String,
    tokens: Vec<Vec<String>>,
    gold: Vec<StanceLabel>,
    accuracy: bool,
}

fn prepare_test(
    label: &str,
    corpus: &Corpus,
    accuracy: bool,
    policy: &CleaningPolicy,
) -> PreparedTest {
    PreparedTest {
        label: label.to_string(),
        tokens: tokens_of(corpus, policy),
        gold: corpus.iter().map(|e| e.stance).collect(),
        accuracy,
    }
}

fn prepare_folds(
    spec: &ExperimentSpec,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<Vec<Fold>> {
    let policy = &spec.pipeline.cleaning;
    let base = base_rows(spec, corpora, translator, jobs)?;
    let mut whole_tests = Vec::new();
    let mut whole_ids = BTreeMap::new();
    for t in &spec.tests {
        let c = translated(
            resolve(corpora, &t.corpus)?,
            &t.translate_to,
            translator,
            jobs,
        )?;
        if c.is_empty() {
            return Err(spec.invalid(format!("test corpus '{}' is empty", t.corpus)));
        }
        whole_ids.insert(t.label.clone(), keys(&t.corpus, &c));
        whole_tests.push(prepare_test(&t.label, &c, t.accuracy, policy));
    }
    let target_parts: Vec<Option<(Corpus, Corpus)>> = match &spec.target {
        None => vec![None],
        Some(t) => {
            let c = translated(
                resolve(corpora, &t.corpus)?,
                &t.translate_to,
                translator,
                jobs,
            )?;
            match t.protocol {
                Protocol::Holdout {
                    train_fraction,
                    stratify,
                } => {
                    vec![Some(split(&c, train_fraction, t.split_seed, stratify)?)]
                }
                Protocol::Kfold { k, stratify } => kfold(&c, k, t.split_seed, stratify)?
                    .into_iter()
                    .map(Some)
                    .collect(),
            }
        }
    };
    let mut folds = Vec::with_capacity(target_parts.len());
    for (f, part) in target_parts.into_iter().enumerate() {
        let mut train = base.clone();
        let mut tests: Vec<PreparedTest> = Vec::new();
        let mut test_ids = whole_ids.clone();
        let mut target_counts = None;
        if let (Some((tr, te)), Some(t)) = (part, &spec.target) {
            if t.train_on_split {
                train.push_corpus(&t.corpus, &tr, &keys(&t.corpus, &tr), policy);
                target_counts = Some(label_counts(&tr));
            }
            test_ids.insert(t.label.clone(), keys(&t.corpus, &te));
            tests.push(prepare_test(&t.label, &te, t.accuracy, policy));
        }
        tests.extend(whole_tests.iter().map(|t| PreparedTest {
            label: t.label.clone(),
            tokens: t.tokens.clone(),
            gold: t.gold.clone(),
            accuracy: t.accuracy,
        }));
        let mut train_ids: Vec<String> = train
            .origins
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        train_ids.shrink_to_fit();
        let record = FoldRecord {
            fold: f,
            train_size: train.labels.len(),
            train_ids,
            test_ids,
        };
        let train_set: BTreeSet<&String> = record.train_ids.iter().collect();
        for ids in record.test_ids.values() {
            if let Some(leak) = ids.iter().find(|i| train_set.contains(i)) {
                return Err(EvalError::Leakage(leak.clone()));
            }
        }
        folds.push(Fold {
            train,
            target_counts,
            tests,
            record,
        });
    }
    // Spec order for the result blocks: target first, then whole-corpus tests.
    Ok(folds)
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

type FoldOutcome = (BTreeMap<String, MetricSet>, RunRecord);

/// A classifier fitted on one fold, with the vocabulary it was trained on.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: StanceModel<f32>,
    /// The configuration the model was built with, seed included.
    pub model_config: ModelConfig,
    pub vocab: Vocabulary,
    pub record: RunRecord,
}

fn fit_fold(
    spec: &ExperimentSpec,
    fold: &Fold,
    pretrain: Option<&[Vec<String>]>,
    seed: u64,
) -> Result<TrainedModel> {
    let p = &spec.pipeline;
    let mut all_tokens: Vec<&[String]> = fold.train.tokens.iter().map(Vec::as_slice).collect();
    if let Some(pt) = pretrain {
        all_tokens.extend(pt.iter().map(Vec::as_slice));
    }
    let vocab = Vocabulary::build(all_tokens, &p.vocab);
    let docs = |toks: &[Vec<String>]| -> Vec<Vec<usize>> {
        toks.iter()
            .map(|t| lm_document(&vocab.numericalize(t)))
            .collect()
    };
    let train_docs = docs(&fold.train.tokens);
    let model_cfg = ModelConfig {
        seed: derive_seed(seed, 1),
        ..p.model
    };
    let model_config = model_cfg;
    let (lm, pre_report) = match pretrain {
        Some(pt) => {
            let cfg = LmConfig {
                seed: derive_seed(seed, 2),
                ..p.pretrain.clone()
            };
            let (lm, r) = pretrain_lm::<f32>(&docs(pt), vocab.len(), &model_cfg, &cfg)?;
            (lm, Some(r))
        }
        None => (LanguageModel::<f32>::new(vocab.len(), &model_cfg), None),
    };
    let ft_cfg = LmConfig {
        seed: derive_seed(seed, 3),
        ..p.finetune.clone()
    };
    let (lm, ft_report) = finetune_lm(lm, &train_docs, &model_cfg, &ft_cfg)?;
    let model = StanceModel::from_encoder(lm.encoder, &model_cfg);
    let data = TrainingSet {
        seqs: train_docs,
        labels: fold.train.labels.clone(),
        domains: fold.train.domains.clone(),
    };
    let clf_cfg = TrainConfig {
        seed: derive_seed(seed, 4),
        ..p.classifier.clone()
    };
    let (model, clf_report) =
        train_classifier(model, &data, fold.target_counts, &clf_cfg, &model_cfg)?;
    let record = RunRecord {
        seed,
        fold: fold.record.fold,
        vocab_size: vocab.len(),
        pretrain: pre_report,
        finetune: ft_report,
        classifier: clf_report,
    };
    Ok(TrainedModel {
        model,
        model_config,
        vocab,
        record,
    })
}

fn run_fold(
    spec: &ExperimentSpec,
    fold: &Fold,
    pretrain: Option<&[Vec<String>]>,
    seed: u64,
) -> Result<FoldOutcome> {
    let trained = fit_fold(spec, fold, pretrain, seed)?;
    let mut metrics = BTreeMap::new();
    for t in &fold.tests {
        let seqs: Vec<Vec<usize>> = t
            .tokens
            .iter()
            .map(|x| lm_document(&trained.vocab.numericalize(x)))
            .collect();
        let pred: Vec<StanceLabel> = trained
            .model
            .predict(&seqs, spec.pipeline.eval_batch_size)?
            .into_iter()
            .map(|i| StanceLabel::from_index(i).expect("three classes"))
            .collect();
        metrics.insert(
            t.label.clone(),
            MetricSet::compute(&t.gold, &pred, t.accuracy)?,
        );
    }
    Ok((metrics, trained.record))
}

fn pretrain_tokens(spec: &ExperimentSpec, corpora: &CorpusSet) -> Result<Option<Vec<Vec<String>>>> {
    match &spec.pretrain_corpus {
        Some(name) => Ok(Some(tokens_of(
            resolve(corpora, name)?,
            &spec.pipeline.cleaning,
        ))),
        None => Ok(None),
    }
}

/// Fits a single classifier for `spec` with one seed. When the target is
/// split, the first fold's training part is used.
pub fn train_model(
    spec: &ExperimentSpec,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
    seed: u64,
) -> Result<TrainedModel> {
    spec.validate()?;
    let folds = prepare_folds(spec, corpora, translator, jobs)?;
    let pretrain = pretrain_tokens(spec, corpora)?;
    fit_fold(spec, &folds[0], pretrain.as_deref(), seed)
}

/// Runs every seed of `spec`: build data, LM fine-tuning, staged classifier
/// training, scoring. Seeds run on up to `jobs` threads. A failing seed is
/// recorded and skipped; the report needs at least one completed seed.
pub fn run_experiment(
    spec: &ExperimentSpec,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<EvalReport> {
    spec.validate()?;
    let mut corpus_digests = BTreeMap::new();
    for name in spec.referenced_corpora() {
        corpus_digests.insert(name.clone(), resolve(corpora, &name)?.digest());
    }
    info!("experiment {}: preparing data", spec.name);
    let folds = prepare_folds(spec, corpora, translator, jobs)?;
    let pretrain_tokens = pretrain_tokens(spec, corpora)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| spec.invalid(e.to_string()))?;
    let per_seed: Vec<(u64, Result<Vec<FoldOutcome>>)> = pool.install(|| {
        spec.seeds
            .par_iter()
            .map(|&seed| {
                let out = folds
                    .iter()
                    .map(|f| run_fold(spec, f, pretrain_tokens.as_deref(), seed))
                    .collect::<Result<Vec<_>>>();
                (seed, out)
            })
            .collect()
    });

    let labels: Vec<String> = folds[0].tests.iter().map(|t| t.label.clone()).collect();
    let mut failures = Vec::new();
    let mut seeds = Vec::new();
    let mut runs = Vec::new();
    let mut by_label: BTreeMap<String, Vec<SeedMetrics>> = BTreeMap::new();
    for (seed, out) in per_seed {
        match out {
            Ok(outcomes) => {
                seeds.push(seed);
                for l in &labels {
                    let sets: Vec<MetricSet> = outcomes.iter().map(|(m, _)| m[l]).collect();
                    let metrics = MetricSet::mean(&sets).expect("at least one fold");
                    by_label
                        .entry(l.clone())
                        .or_default()
                        .push(SeedMetrics { seed, metrics });
                }
                runs.extend(outcomes.into_iter().map(|(_, r)| r));
            }
            Err(e) => {
                warn!("experiment {} seed {seed} failed: {e}", spec.name);
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if seeds.is_empty() {
        let msg = failures
            .iter()
            .map(|f| format!("seed {}: {}", f.seed, f.error))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(EvalError::NoSeedCompleted(msg));
    }
    let results = labels
        .iter()
        .map(|l| {
            let per_seed = by_label.remove(l).unwrap_or_default();
            let sets: Vec<MetricSet> = per_seed.iter().map(|s| s.metrics).collect();
            TestResult {
                label: l.clone(),
                mean: MetricSet::mean(&sets).expect("non-empty"),
                std: MetricSet::std(&sets).expect("non-empty"),
                per_seed,
            }
        })
        .collect();
    Ok(EvalReport {
        experiment: spec.name.clone(),
        role: spec.role,
        seeds,
        failures,
        results,
        manifest: RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            spec: spec.clone(),
            spec_digest: spec.digest(),
            backend: translator.backend_name().to_string(),
            corpus_digests,
            folds: folds.into_iter().map(|f| f.record).collect(),
            runs,
        },
    })
}

/// Re-runs the experiment recorded in `manifest`, after checking that the
/// supplied corpora are the ones it was run on.
pub fn replay(
    manifest: &RunManifest,
    corpora: &CorpusSet,
    translator: &Translator,
    jobs: usize,
) -> Result<EvalReport> {
    for (name, expected) in &manifest.corpus_digests {
        let found = resolve(corpora, name)?.digest();
        if &found != expected {
            return Err(EvalError::DigestMismatch {
                name: name.clone(),
                expected: expected.clone(),
                found,
            });
        }
    }
    run_experiment(&manifest.spec, corpora, translator, jobs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(role: Role) -> ExperimentSpec {
        ExperimentSpec {
            name: "x".into(),
            role,
            train: vec!["en".into()],
            plan: None,
            target: None,
            tests: vec![TestSpec {
                label: "English".into(),
                corpus: "en-test".into(),
                translate_to: None,
                accuracy: true,
            }],
            pretrain_corpus: None,
            pipeline: PipelineConfig::default(),
            seeds: vec![1],
        }
    }

    #[test]
    fn role_contracts() {
        assert!(spec(Role::Dub).validate().is_ok());
        assert!(spec(Role::Dlb).validate().is_ok());
        assert!(spec(Role::Da).validate().is_err());
        assert!(spec(Role::DrSweep).validate().is_err());
        let mut s = spec(Role::Dlb);
        s.seeds.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn sweep_truncates_intermediates() {
        let mut s = spec(Role::DrSweep);
        s.train.clear();
        let en = Lang::new("en").unwrap();
        s.plan = Some(AugmentationPlan::dr(
            en.clone(),
            crate::augmentation::SourceRef {
                corpus: "en".into(),
                language: en,
            },
            ["fr", "de", "ru"]
                .iter()
                .map(|l| Lang::new(l).unwrap())
                .collect(),
            0,
        ));
        let specs = dr_sweep(&s, &[0, 2]).unwrap();
        assert_eq!(specs[0].plan.as_ref().unwrap().n_r(), 0);
        assert_eq!(specs[1].plan.as_ref().unwrap().n_r(), 2);
        assert_eq!(specs[1].name, "x-2");
        assert!(specs.iter().all(|s| s.validate().is_ok()));
        assert!(dr_sweep(&s, &[4]).is_err());
    }
}
