//! The run configuration file.
//!
//! Every table rejects unknown keys. Relative paths are resolved against the
//! directory holding the config file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stancebridge::augmentation::{preset, AugmentationMode, AugmentationPlan, SourceRef};
use stancebridge::evalharness::synthetic::SyntheticConfig;
use stancebridge::evalharness::{
    dr_sweep, ExperimentSpec, PipelineConfig, Role, TableSpec, TargetSpec, TestSpec,
};
use stancebridge::translation::MockNoiseConfig;
use stancebridge::Lang;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds for every experiment. `--seed` replaces the list with one seed.
    pub seeds: Vec<u64>,
    pub paths: Paths,
    #[serde(default)]
    pub translation: TranslationConfig,
    pub corpora: BTreeMap<String, CorpusSource>,
    /// Augmented corpora written by `build`; experiments refer to them by name.
    #[serde(default)]
    pub plans: BTreeMap<String, PlanConfig>,
    /// Shared text processing, model, objective and optimizer settings.
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub experiments: Vec<ExperimentConfig>,
    /// Keyed by layout name, `table1` or `table2`.
    #[serde(default)]
    pub tables: BTreeMap<String, TableSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub output: PathBuf,
    /// Translation cache file. Defaults to one file per backend under the
    /// output directory.
    #[serde(default)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationConfig {
    pub mock_seed: u64,
    pub mock_noise: MockNoiseConfig,
    /// Languages the mock accepts; empty means its built-in list.
    pub mock_languages: Vec<Lang>,
    /// Backend whose cached entries `--backend cached` serves.
    pub replay: String,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig {
            mock_seed: 0,
            mock_noise: MockNoiseConfig::default(),
            mock_languages: Vec::new(),
            replay: "live".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Tab-separated `ID Target Tweet Stance` file.
    Semeval { path: PathBuf, language: Lang },
    /// One JSON example per line, as written by `build`.
    Jsonl { path: PathBuf },
    /// Generated English-like stance data.
    Synthetic {
        seed: u64,
        #[serde(default)]
        generator: SyntheticConfig,
    },
    /// Another corpus passed through the translation backend, one hop per
    /// listed language.
    Translated { source: String, hops: Vec<Lang> },
}

/// An augmentation plan. `mode`, `intermediates` (or `preset`) and `seed`
/// have no defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub mode: AugmentationMode,
    pub base_language: Lang,
    pub sources: Vec<SourceRef>,
    #[serde(default)]
    pub intermediates: Option<Vec<Lang>>,
    /// Named pivot list, e.g. "african-family". Exclusive with `intermediates`.
    #[serde(default)]
    pub preset: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub role: Role,
    #[serde(default)]
    pub train: Vec<String>,
    /// Name of an entry in `plans`.
    #[serde(default)]
    pub plan: Option<String>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub tests: Vec<TestSpec>,
    #[serde(default)]
    pub pretrain_corpus: Option<String>,
    /// Replaces the shared pipeline for this experiment.
    #[serde(default)]
    pub pipeline: Option<PipelineConfig>,
    /// For `DR_sweep`: one experiment per degree, named `<name>-<degree>`.
    #[serde(default)]
    pub sweep: Option<Vec<usize>>,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| invalid(format!("{}: {}", path.display(), e.message())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.output);
        if let Some(c) = &mut self.paths.cache {
            fix(c);
        }
        for src in self.corpora.values_mut() {
            match src {
                CorpusSource::Semeval { path, .. } | CorpusSource::Jsonl { path } => fix(path),
                _ => {}
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(invalid("`seeds` must list at least one seed"));
        }
        for (name, src) in &self.corpora {
            if let CorpusSource::Translated { source, hops } = src {
                if !self.corpora.contains_key(source) {
                    return Err(invalid(format!(
                        "corpus '{name}' translates unknown corpus '{source}'"
                    )));
                }
                if hops.is_empty() {
                    return Err(invalid(format!("corpus '{name}' lists no hops")));
                }
            }
        }
        self.corpus_order()?;
        for name in self.plans.keys() {
            self.plan(name)?;
        }
        let mut names = BTreeSet::new();
        for spec in self.experiment_specs()? {
            if !names.insert(spec.name.clone()) {
                return Err(invalid(format!(
                    "duplicate experiment name '{}'",
                    spec.name
                )));
            }
            spec.validate().map_err(|e| invalid(e.to_string()))?;
            for c in referenced(&spec) {
                if !self.corpora.contains_key(&c) {
                    return Err(invalid(format!(
                        "experiment '{}' refers to unknown corpus '{c}'",
                        spec.name
                    )));
                }
            }
        }
        for (key, t) in &self.tables {
            let expected = serde_json::to_value(t.layout).expect("layout serializes");
            if expected.as_str() != Some(key.as_str()) {
                return Err(invalid(format!("table '{key}' has layout {expected}")));
            }
            for row in &t.rows {
                if !names.contains(row) {
                    return Err(invalid(format!(
                        "table '{key}' lists unknown experiment '{row}'"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Corpus names with translated corpora after the ones they read.
    pub fn corpus_order(&self) -> Result<Vec<String>, CliError> {
        let mut done: Vec<String> = Vec::new();
        let mut pending: Vec<&String> = self.corpora.keys().collect();
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|name| match &self.corpora[*name] {
                CorpusSource::Translated { source, .. } if !done.contains(source) => true,
                _ => {
                    done.push((*name).clone());
                    false
                }
            });
            if pending.len() == before {
                return Err(invalid(format!(
                    "translated corpora form a cycle: {pending:?}"
                )));
            }
        }
        Ok(done)
    }

    pub fn plan(&self, name: &str) -> Result<AugmentationPlan, CliError> {
        let p = self
            .plans
            .get(name)
            .ok_or_else(|| invalid(format!("unknown plan '{name}'")))?;
        let intermediates = match (&p.intermediates, &p.preset) {
            (Some(_), Some(_)) => {
                return Err(invalid(format!(
                    "plan '{name}' sets both intermediates and preset"
                )))
            }
            (Some(l), None) => l.clone(),
            (None, Some(n)) => preset(n).map_err(|e| invalid(format!("plan '{name}': {e}")))?,
            (None, None) if p.mode == AugmentationMode::DomainGeneralization => Vec::new(),
            (None, None) => {
                return Err(invalid(format!(
                    "DR plan '{name}' must list `intermediates` or name a `preset`"
                )))
            }
        };
        for s in &p.sources {
            if !self.corpora.contains_key(&s.corpus) {
                return Err(invalid(format!(
                    "plan '{name}' refers to unknown corpus '{}'",
                    s.corpus
                )));
            }
        }
        let plan = AugmentationPlan {
            mode: p.mode,
            base_language: p.base_language.clone(),
            sources: p.sources.clone(),
            intermediates,
            seed: p.seed,
        };
        plan.validate()
            .map_err(|e| invalid(format!("plan '{name}': {e}")))?;
        Ok(plan)
    }

    /// Harness specs for every experiment, sweeps expanded.
    pub fn experiment_specs(&self) -> Result<Vec<ExperimentSpec>, CliError> {
        let mut out = Vec::new();
        for e in &self.experiments {
            let spec = ExperimentSpec {
                name: e.name.clone(),
                role: e.role,
                train: e.train.clone(),
                plan: e.plan.as_deref().map(|p| self.plan(p)).transpose()?,
                target: e.target.clone(),
                tests: e.tests.clone(),
                pretrain_corpus: e.pretrain_corpus.clone(),
                pipeline: e.pipeline.clone().unwrap_or_else(|| self.pipeline.clone()),
                seeds: self.seeds.clone(),
            };
            match &e.sweep {
                None => out.push(spec),
                Some(degrees) => {
                    out.extend(dr_sweep(&spec, degrees).map_err(|err| invalid(err.to_string()))?)
                }
            }
        }
        Ok(out)
    }

    /// Every language tag the config mentions, for backends that need the
    /// list up front.
    pub fn languages(&self) -> BTreeSet<Lang> {
        let mut out = BTreeSet::new();
        out.insert(Lang::new("en").expect("valid tag"));
        for src in self.corpora.values() {
            match src {
                CorpusSource::Semeval { language, .. } => {
                    out.insert(language.clone());
                }
                CorpusSource::Translated { hops, .. } => out.extend(hops.iter().cloned()),
                _ => {}
            }
        }
        for p in self.plans.values() {
            out.insert(p.base_language.clone());
            out.extend(p.sources.iter().map(|s| s.language.clone()));
            out.extend(p.intermediates.iter().flatten().cloned());
            if let Some(n) = &p.preset {
                out.extend(preset(n).unwrap_or_default());
            }
        }
        for e in &self.experiments {
            out.extend(e.tests.iter().filter_map(|t| t.translate_to.clone()));
            out.extend(e.target.iter().filter_map(|t| t.translate_to.clone()));
        }
        out
    }
}

fn referenced(spec: &ExperimentSpec) -> BTreeSet<String> {
    let mut names: BTreeSet<String> = spec.train.iter().cloned().collect();
    if let Some(p) = &spec.plan {
        names.extend(p.sources.iter().map(|s| s.corpus.clone()));
    }
    names.extend(spec.target.iter().map(|t| t.corpus.clone()));
    names.extend(spec.tests.iter().map(|t| t.corpus.clone()));
    names.extend(spec.pretrain_corpus.iter().cloned());
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seeds = [0]
[paths]
output = "out"
[corpora.en]
format = "synthetic"
seed = 1
generator = { n_examples = 20 }
[plans.dr]
mode = "DR"
base_language = "en"
sources = [{ corpus = "en", language = "en" }]
intermediates = ["fr", "de"]
seed = 0
[[experiments]]
name = "DLB"
role = "DLB"
train = ["en"]
tests = [{ label = "English", corpus = "en" }]
"#;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        cfg.resolve_paths(Path::new("/base"));
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_parses() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.paths.output, PathBuf::from("/base/out"));
        assert_eq!(cfg.plan("dr").unwrap().n_r(), 2);
        assert_eq!(cfg.experiment_specs().unwrap().len(), 1);
    }

    #[test]
    fn unknown_plan_key_is_named() {
        let text = MINIMAL.replace(
            "seed = 0\n[[experiments]]",
            "seed = 0\nn_r = 2\n[[experiments]]",
        );
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("n_r"), "{err}");
    }

    #[test]
    fn dr_plan_needs_explicit_pivots() {
        let text = MINIMAL.replace("intermediates = [\"fr\", \"de\"]\n", "");
        assert!(parse(&text).is_err());
        let text = MINIMAL.replace(
            "intermediates = [\"fr\", \"de\"]",
            "preset = \"african-family\"",
        );
        assert_eq!(parse(&text).unwrap().plan("dr").unwrap().n_r(), 4);
    }

    #[test]
    fn seeds_are_required() {
        assert!(parse(&MINIMAL.replace("seeds = [0]", "")).is_err());
        assert!(parse(&MINIMAL.replace("seeds = [0]", "seeds = []")).is_err());
    }

    #[test]
    fn unknown_corpus_reference_is_rejected() {
        let text = MINIMAL.replace("train = [\"en\"]", "train = [\"fr\"]");
        assert!(parse(&text).unwrap_err().to_string().contains("'fr'"));
    }

    #[test]
    fn sweep_expands() {
        let text = format!(
            "{MINIMAL}\n[[experiments]]\nname = \"R\"\nrole = \"DR_sweep\"\nplan = \"dr\"\nsweep = [0, 2]\ntests = [{{ label = \"English\", corpus = \"en\" }}]\n"
        );
        let names: Vec<String> = parse(&text)
            .unwrap()
            .experiment_specs()
            .unwrap()
            .into_iter()
            .map(|s| s.name)
            .collect();
        assert_eq!(names, ["DLB", "R-0", "R-2"]);
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = parse(MINIMAL).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shipped_configs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["demo.toml", "table1.toml", "table2.toml"] {
            let cfg = RunConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!cfg.experiment_specs().unwrap().is_empty());
        }
        let t1 = RunConfig::load(&dir.join("table1.toml")).unwrap();
        assert_eq!(t1.experiment_specs().unwrap().len(), 8);
    }
}
