use std::fs::{self, File, TryLockError};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::Serialize;
use stancebridge::augmentation::{self, CorpusSet};
use stancebridge::corpus::{parse_semeval, write_atomic};
use stancebridge::evalharness::synthetic::synthetic_corpus;
use stancebridge::evalharness::{
    emit_table, run_experiment, train_model, EvalReport, ExperimentSpec, TableFormat, TableLayout,
};
use stancebridge::model::{write_checkpoint, CheckpointMeta};
use stancebridge::translation::{
    unix_now, CacheOnlyBackend, HttpBackend, HttpBackendConfig, MockBackend, TranslateError,
    TranslationBackend, TranslationCache, Translator,
};
use stancebridge::{Corpus, Lang};

use crate::config::{CorpusSource, RunConfig};
use crate::{BackendChoice, Cli, CliError, Command};

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Holds an exclusive lock on the output directory for the life of a command.
/// The OS drops the lock if the process dies.
struct OutputLock {
    _file: File,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(".stancebridge.lock");
        let file = File::create(&path)
            .map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
        match file.try_lock() {
            Ok(()) => Ok(OutputLock { _file: file }),
            Err(TryLockError::WouldBlock) => Err(runtime(format!(
                "another stancebridge command is using {}",
                dir.display()
            ))),
            Err(TryLockError::Error(e)) => {
                Err(runtime(format!("cannot lock {}: {e}", path.display())))
            }
        }
    }
}

struct Context {
    cfg: RunConfig,
    out: PathBuf,
    translator: Translator,
    jobs: usize,
    _lock: OutputLock,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    backend: &'a str,
    jobs: usize,
    tool_version: &'a str,
    started_at: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(runtime)
}

fn cache_path(cfg: &RunConfig, out: &Path, backend: &str) -> PathBuf {
    cfg.paths.cache.clone().unwrap_or_else(|| {
        out.join("cache")
            .join(format!("translations-{backend}.jsonl"))
    })
}

fn translator(cli: &Cli, cfg: &RunConfig, out: &Path) -> Result<Translator, CliError> {
    let t = &cfg.translation;
    let (backend, cache_name): (Arc<dyn TranslationBackend>, String) = match cli.backend {
        BackendChoice::Mock => {
            t.mock_noise
                .validate()
                .map_err(|e| CliError::Validation(e.to_string()))?;
            let mut b = MockBackend::new(t.mock_seed, t.mock_noise);
            if !t.mock_languages.is_empty() {
                b = b
                    .with_languages(t.mock_languages.iter().map(Lang::as_str))
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            // Mock output depends on the seed, so each seed gets its own cache.
            (Arc::new(b), format!("mock-s{}", t.mock_seed))
        }
        BackendChoice::Cached => {
            let name = if t.replay == "mock" {
                format!("mock-s{}", t.mock_seed)
            } else {
                t.replay.clone()
            };
            (Arc::new(CacheOnlyBackend::new(t.replay.clone())), name)
        }
        BackendChoice::Live => {
            let http = HttpBackendConfig::from_env(cfg.languages()).map_err(|e| match e {
                TranslateError::MissingCredentials(m) | TranslateError::Config(m) => {
                    CliError::Validation(m)
                }
                other => runtime(other),
            })?;
            (Arc::new(HttpBackend::new(http)), "live".to_string())
        }
    };
    let path = cache_path(cfg, out, &cache_name);
    if cli.backend == BackendChoice::Cached && !path.exists() {
        return Err(CliError::Validation(format!(
            "--backend cached needs a translation cache at {}",
            path.display()
        )));
    }
    let cache = TranslationCache::open(&path)
        .map_err(|e| runtime(format!("cache {}: {e}", path.display())))?;
    if cache.load_warnings() > 0 {
        log::warn!(
            "skipped {} unreadable cache lines in {}",
            cache.load_warnings(),
            path.display()
        );
    }
    info!(
        "translation cache {} holds {} entries",
        path.display(),
        cache.len()
    );
    Ok(Translator::new(backend).with_cache(Arc::new(cache)))
}

fn context(cli: &Cli, command: &str) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("--config <file> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &cli.out {
        cfg.paths.output = o.clone();
    }
    let out = cfg.paths.output.clone();
    let jobs = cli
        .jobs
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);
    let translator = translator(cli, &cfg, &out)?;
    let lock = OutputLock::acquire(&out)?;
    let resolved = toml::to_string(&cfg).map_err(runtime)?;
    write_atomic(&out.join("resolved-config.toml"), resolved.as_bytes()).map_err(runtime)?;
    write_json(
        &out.join("run.json"),
        &RunInfo {
            command,
            backend: translator.backend_name(),
            jobs,
            tool_version: env!("CARGO_PKG_VERSION"),
            started_at: unix_now(),
        },
    )?;
    Ok(Context {
        cfg,
        out,
        translator,
        jobs,
        _lock: lock,
    })
}

fn corpus_language(name: &str, c: &Corpus) -> Result<Lang, CliError> {
    let first = c
        .examples()
        .first()
        .ok_or_else(|| runtime(format!("corpus '{name}' is empty")))?;
    if c.iter().any(|e| e.language != first.language) {
        return Err(runtime(format!("corpus '{name}' mixes languages")));
    }
    Ok(first.language.clone())
}

fn load_corpora(ctx: &Context) -> Result<CorpusSet, CliError> {
    let mut set = CorpusSet::new();
    for name in ctx.cfg.corpus_order()? {
        let corpus = match &ctx.cfg.corpora[&name] {
            CorpusSource::Semeval { path, language } => {
                parse_semeval(path, language).map_err(runtime)?
            }
            CorpusSource::Jsonl { path } => Corpus::read_jsonl(path).map_err(runtime)?,
            CorpusSource::Synthetic { seed, generator } => {
                synthetic_corpus(generator, *seed, &name)
            }
            CorpusSource::Translated { source, hops } => {
                let mut c = set[source].clone();
                let mut lang = corpus_language(source, &c)?;
                for hop in hops {
                    c = augmentation::translate_corpus(&c, &lang, hop, &ctx.translator, ctx.jobs)
                        .map_err(runtime)?;
                    lang = hop.clone();
                }
                c.with_domain_id(name.clone())
            }
        };
        info!("corpus {name}: {} examples", corpus.size());
        set.insert(name, corpus);
    }
    Ok(set)
}

fn log_translation(ctx: &Context) {
    let s = ctx.translator.stats();
    info!(
        "translation: {} backend calls, {} cache hits, {} misses",
        s.backend_calls, s.cache_hits, s.cache_misses
    );
}

fn cmd_build(ctx: &Context) -> Result<(), CliError> {
    let corpora = load_corpora(ctx)?;
    let dir = ctx.out.join("corpora");
    for (name, src) in &ctx.cfg.corpora {
        if matches!(src, CorpusSource::Translated { .. }) {
            let path = dir.join(format!("{name}.jsonl"));
            corpora[name].write_jsonl(&path).map_err(runtime)?;
            println!("{} ({} records)", path.display(), corpora[name].size());
        }
    }
    for name in ctx.cfg.plans.keys() {
        let plan = ctx.cfg.plan(name)?;
        let built = augmentation::build(&plan, &corpora, &ctx.translator, ctx.jobs)
            .map_err(runtime)?
            .with_domain_id(name.clone());
        let path = dir.join(format!("{name}.jsonl"));
        built.write_jsonl(&path).map_err(runtime)?;
        println!("{} ({} records)", path.display(), built.size());
    }
    log_translation(ctx);
    Ok(())
}

fn select(ctx: &Context, name: Option<&str>) -> Result<Vec<ExperimentSpec>, CliError> {
    let specs = ctx.cfg.experiment_specs()?;
    match name {
        None => Ok(specs),
        Some(n) => {
            let found: Vec<ExperimentSpec> = specs.into_iter().filter(|s| s.name == n).collect();
            if found.is_empty() {
                return Err(CliError::Validation(format!("no experiment named '{n}'")));
            }
            Ok(found)
        }
    }
}

fn cmd_train(ctx: &Context, experiment: Option<&str>) -> Result<(), CliError> {
    let spec = match experiment {
        Some(_) => select(ctx, experiment)?.remove(0),
        None => select(ctx, None)?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::Validation("the config defines no experiments".into()))?,
    };
    let seed = ctx.cfg.seeds[0];
    let corpora = load_corpora(ctx)?;
    let trained = train_model(&spec, &corpora, &ctx.translator, ctx.jobs, seed).map_err(runtime)?;
    let dir = ctx
        .out
        .join("models")
        .join(&spec.name)
        .join(format!("seed-{seed}"));
    let meta = CheckpointMeta {
        kind: "classifier".into(),
        vocab_size: trained.vocab.len(),
        model: trained.model_config,
        extra: serde_json::json!({ "experiment": spec.name, "seed": seed, "spec_digest": spec.digest() }),
    };
    write_checkpoint(&dir.join("model.ckpt"), &trained.model, &meta).map_err(runtime)?;
    trained
        .vocab
        .save(&dir.join("vocab.txt"))
        .map_err(runtime)?;
    write_json(&dir.join("training.json"), &trained.record)?;
    println!("{}", dir.join("model.ckpt").display());
    log_translation(ctx);
    Ok(())
}

fn report_paths(ctx: &Context, name: &str) -> (PathBuf, PathBuf) {
    let dir = ctx.out.join("reports");
    (
        dir.join(format!("{name}.json")),
        dir.join(format!("{name}.metrics.json")),
    )
}

/// A report already on disk for exactly this spec and backend.
fn existing_report(ctx: &Context, spec: &ExperimentSpec) -> Option<EvalReport> {
    let (path, _) = report_paths(ctx, &spec.name);
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(path).ok()?).ok()?;
    (report.manifest.spec_digest == spec.digest()
        && report.manifest.backend == ctx.translator.backend_name())
    .then_some(report)
}

fn evaluate(ctx: &Context, specs: &[ExperimentSpec]) -> Result<Vec<EvalReport>, CliError> {
    let mut corpora: Option<CorpusSet> = None;
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        if let Some(r) = existing_report(ctx, spec) {
            info!("experiment {}: report is current, skipping", spec.name);
            reports.push(r);
            continue;
        }
        if corpora.is_none() {
            corpora = Some(load_corpora(ctx)?);
        }
        let report = run_experiment(
            spec,
            corpora.as_ref().expect("loaded"),
            &ctx.translator,
            ctx.jobs,
        )
        .map_err(runtime)?;
        let (full, payload) = report_paths(ctx, &spec.name);
        // Payload first: a report file is only present once both are written.
        write_atomic(&payload, report.metrics_payload().as_bytes()).map_err(runtime)?;
        write_json(&full, &report)?;
        for r in &report.results {
            println!(
                "{}\t{}\tF1 {:.4} ± {:.4}",
                spec.name, r.label, r.mean.f1_macro_fa_ag, r.std.f1_macro_fa_ag
            );
        }
        reports.push(report);
    }
    log_translation(ctx);
    Ok(reports)
}

fn cmd_eval(ctx: &Context, experiment: Option<&str>) -> Result<(), CliError> {
    let specs = select(ctx, experiment)?;
    evaluate(ctx, &specs)?;
    Ok(())
}

fn cmd_reproduce(ctx: &Context, layout: TableLayout) -> Result<(), CliError> {
    let key = serde_json::to_value(layout).expect("layout serializes");
    let key = key.as_str().expect("string");
    let table =
        ctx.cfg.tables.get(key).ok_or_else(|| {
            CliError::Validation(format!("the config has no [tables.{key}] section"))
        })?;
    let specs: Vec<ExperimentSpec> = ctx
        .cfg
        .experiment_specs()?
        .into_iter()
        .filter(|s| table.rows.is_empty() || table.rows.contains(&s.name))
        .collect();
    let reports = evaluate(ctx, &specs)?;
    let dir = ctx.out.join("tables");
    for (format, ext) in [(TableFormat::Markdown, "md"), (TableFormat::Csv, "csv")] {
        let text = emit_table(&reports, table, format).map_err(runtime)?;
        write_atomic(&dir.join(format!("{key}.{ext}")), text.as_bytes()).map_err(runtime)?;
        if format == TableFormat::Markdown {
            println!("{text}");
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let name = match &cli.command {
        Command::Build => "build",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Reproduce { .. } => "reproduce",
    };
    let ctx = context(cli, name)?;
    match &cli.command {
        Command::Build => cmd_build(&ctx),
        Command::Train { experiment } => cmd_train(&ctx, experiment.as_deref()),
        Command::Eval { experiment } => cmd_eval(&ctx, experiment.as_deref()),
        Command::Reproduce { layout } => cmd_reproduce(&ctx, (*layout).into()),
    }
}
