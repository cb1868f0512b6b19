//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Run alone with `cargo test --release -p stancebridge --test acceptance`.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stancebridge::augmentation::{build_dg, build_dr, AugmentationPlan, CorpusSet, SourceRef};
use stancebridge::corpus::{class_counts, parse_semeval, CountBy, CountKey};
use stancebridge::evalharness::{replay, run_experiment, EvalReport, MetricSet, RunManifest};
use stancebridge::objectives::{lambda_bf, separability_loss_raw, SeparabilityConfig};
use stancebridge::translation::{
    BackendError, MockBackend, MockNoiseConfig, TranslationBackend, TranslationCache, Translator,
    DEFAULT_MOCK_LANGUAGES,
};
use stancebridge::{Corpus, Lang, StanceExample, StanceLabel};

use common::{desk_pipeline, lang, mock_translator, noisy_transfer_corpora, trend_specs};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
    Info(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------- oracles

fn oracle_dissim(u: &[f64], v: &[f64], eps: f64) -> f64 {
    let mut dot = 0.0;
    let mut uu = 0.0;
    let mut vv = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        uu += u[k] * u[k];
        vv += v[k] * v[k];
    }
    1.0 - dot / (uu.sqrt().max(eps) * vv.sqrt().max(eps))
}

fn oracle_mean(rows: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for k in 0..dim {
            m[k] += r[k];
        }
    }
    m.iter().map(|x| x / rows.len() as f64).collect()
}

/// The separability loss written out term by term.
fn oracle_sep(z: &[Vec<f64>], y: &[usize], lambda: f64, eps: f64, normalize_rows: bool) -> f64 {
    let dim = z[0].len();
    let mut present = Vec::new();
    let mut means = BTreeMap::new();
    for c in 0..3 {
        let rows: Vec<&Vec<f64>> = z
            .iter()
            .zip(y)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r)
            .collect();
        if !rows.is_empty() {
            present.push(c);
            means.insert(c, oracle_mean(&rows, dim));
        }
    }
    if z.len() < 2 || present.len() < 2 {
        return 0.0;
    }
    let all: Vec<&Vec<f64>> = z.iter().collect();
    let mu = oracle_mean(&all, dim);
    let mut num = 0.0;
    for (r, &c) in z.iter().zip(y) {
        num += oracle_dissim(r, &means[&c], eps);
    }
    if normalize_rows {
        num /= z.len() as f64;
    }
    let mut den = 0.0;
    for c in &present {
        den += oracle_dissim(&means[c], &mu, eps);
    }
    lambda * num / den.max(eps)
}

fn oracle_lambda(counts: &[usize]) -> f64 {
    let mut lo = usize::MAX;
    let mut hi = 0;
    for &c in counts {
        if c < lo {
            lo = c;
        }
        if c > hi {
            hi = c;
        }
    }
    lo as f64 / hi as f64
}

fn oracle_f1(gold: &[usize], pred: &[usize], c: usize) -> f64 {
    let tp = gold
        .iter()
        .zip(pred)
        .filter(|(&g, &p)| g == c && p == c)
        .count();
    let fp = gold
        .iter()
        .zip(pred)
        .filter(|(&g, &p)| g != c && p == c)
        .count();
    let fn_ = gold
        .iter()
        .zip(pred)
        .filter(|(&g, &p)| g == c && p != c)
        .count();
    if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

// -------------------------------------------------------------- criterion 2

fn random_batch(rng: &mut ChaCha8Rng, min_dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.gen_range(2..=8);
    let dim = rng.gen_range(min_dim..=5);
    let z = (0..n)
        .map(|_| (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let y = (0..n).map(|_| rng.gen_range(0..3)).collect();
    (z, y)
}

fn to_array(z: &[Vec<f64>]) -> Array2<f64> {
    let dim = z[0].len();
    Array2::from_shape_fn((z.len(), dim), |(r, k)| z[r][k])
}

fn objective_numerics() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_oracle: f64 = 0.0;
    for i in 0..200 {
        let (z, y) = random_batch(&mut rng, 1);
        let cfg = SeparabilityConfig {
            normalize_rows: i % 4 == 3,
            ..Default::default()
        };
        let lambda = rng.gen_range(0.0..1.0);
        let got = separability_loss_raw(to_array(&z).view(), &y, lambda, &cfg).value;
        let want = oracle_sep(&z, &y, lambda, cfg.epsilon, cfg.normalize_rows);
        worst_oracle = worst_oracle.max((got - want).abs());
    }

    let mut worst_grad: f64 = 0.0;
    let mut batches = 0;
    let h = 1e-6;
    // In one dimension every cosine is ±1 and the gradient is identically
    // zero, so relative error is meaningless there.
    while batches < 20 {
        let (z, y) = random_batch(&mut rng, 2);
        // With every class a singleton each row is its own class mean and the
        // loss is identically zero.
        let counts = (0..3).map(|c| y.iter().filter(|&&l| l == c).count());
        if y.iter().all(|&c| c == y[0]) || counts.max() < Some(2) {
            continue;
        }
        let cfg = SeparabilityConfig::default();
        let x = to_array(&z);
        let analytic = separability_loss_raw(x.view(), &y, 1.0, &cfg).grad;
        let mut numeric = Array2::<f64>::zeros(x.dim());
        for idx in ndarray::indices(x.dim()) {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            numeric[idx] = (separability_loss_raw(p.view(), &y, 1.0, &cfg).value
                - separability_loss_raw(m.view(), &y, 1.0, &cfg).value)
                / (2.0 * h);
        }
        let diff = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = analytic
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(numeric.mapv(|v| v * v).sum().sqrt());
        worst_grad = worst_grad.max(if scale == 0.0 { diff } else { diff / scale });
        batches += 1;
    }

    let sym = vec![
        vec![1.0, 0.0],
        vec![0.0, 1.0],
        vec![-1.0, 0.0],
        vec![0.0, -1.0],
    ];
    let sym_y = [0, 0, 1, 1];
    let sym_val = separability_loss_raw(
        to_array(&sym).view(),
        &sym_y,
        1.0,
        &SeparabilityConfig::default(),
    )
    .value;

    // 0.58579 is this value rounded to five places: 4(1 - cos 45°) / 2.
    let sym_exact = 2.0 - std::f64::consts::SQRT_2;

    let elapsed = t0.elapsed();
    let ok = worst_oracle <= 1e-10
        && worst_grad <= 1e-5
        && (sym_val - sym_exact).abs() <= 1e-6
        && elapsed < Duration::from_secs(30);
    verdict(
        ok,
        format!(
            "oracle max |Δ| {worst_oracle:.2e} (≤1e-10), grad rel err {worst_grad:.2e} (≤1e-5), \
             symmetric batch {sym_val:.9} (2-√2 ≈ 0.58579, ±1e-6), {:.1}s (<30s)",
            elapsed.as_secs_f64()
        ),
    )
}

// -------------------------------------------------------------- criterion 3

fn balancing_factor() -> Outcome {
    let balanced = lambda_bf(&[7, 7, 7]).unwrap();
    let skewed = lambda_bf(&[10, 25, 40]).unwrap();
    let zero = lambda_bf(&[0, 5, 9]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let counts: Vec<usize> = (0..3).map(|_| rng.gen_range(0..200)).collect();
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        if lambda_bf(&counts).unwrap().value != oracle_lambda(&counts) {
            mismatches += 1;
        }
    }
    let ok = balanced.value == 1.0
        && skewed.value == 0.25
        && zero.value == 0.0
        && zero.degenerate
        && !skewed.degenerate
        && mismatches == 0;
    verdict(
        ok,
        format!(
            "balanced {}, {{10,25,40}} {}, zero count {} (degenerate {}), {mismatches}/1000 oracle mismatches",
            balanced.value, skewed.value, zero.value, zero.degenerate
        ),
    )
}

// -------------------------------------------------------------- criterion 4

fn random_corpus(rng: &mut ChaCha8Rng, domain: &str, language: &str, n: usize) -> Corpus {
    const WORDS: [&str; 12] = [
        "we", "should", "vote", "never", "climate", "people", "faith", "rights", "today", "wrong",
        "great", "news",
    ];
    let examples = (0..n)
        .map(|i| {
            let len = rng.gen_range(3..10);
            let text: Vec<&str> = (0..len)
                .map(|_| WORDS[rng.gen_range(0..WORDS.len())])
                .collect();
            StanceExample {
                id: format!("{domain}-{i}"),
                target: ["Atheism", "Feminist Movement"][rng.gen_range(0..2)].into(),
                text: text.join(" "),
                stance: StanceLabel::ALL[rng.gen_range(0..3)],
                language: lang(language),
                provenance: vec![],
            }
        })
        .collect();
    Corpus::new(domain, examples).unwrap()
}

fn pivots(rng: &mut ChaCha8Rng, n: usize) -> Vec<Lang> {
    let mut pool: Vec<&str> = DEFAULT_MOCK_LANGUAGES
        .iter()
        .copied()
        .filter(|t| *t != "en")
        .collect();
    let mut out = Vec::new();
    for _ in 0..n {
        let i = rng.gen_range(0..pool.len());
        out.push(lang(pool.remove(i)));
    }
    out
}

/// Mock backend that starts failing with a rate-limit error once its call
/// budget is spent.
struct Budgeted {
    inner: MockBackend,
    left: AtomicUsize,
}

impl TranslationBackend for Budgeted {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn supports(&self, src: &Lang, dst: &Lang) -> bool {
        self.inner.supports(src, dst)
    }

    fn translate_once(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String, BackendError> {
        if self
            .left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_err()
        {
            return Err(BackendError::RateLimited("budget spent".into()));
        }
        self.inner.translate_once(text, src, dst)
    }
}

fn augmentation_laws() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let translator = mock_translator(9);
    let mut dr_failures = Vec::new();
    for case in 0..40 {
        let n = rng.gen_range(1..=50);
        let n_r = rng.gen_range(1..=6);
        let set: CorpusSet = [("src".to_string(), random_corpus(&mut rng, "src", "en", n))].into();
        let plan = AugmentationPlan::dr(
            lang("en"),
            SourceRef {
                corpus: "src".into(),
                language: lang("en"),
            },
            pivots(&mut rng, n_r),
            case,
        );
        let out = build_dr(&plan, &set, &translator, 1).unwrap();
        let scaled = class_counts(&set["src"], CountBy::Stance).scaled(n_r + 1);
        if out.size() != (n_r + 1) * n || class_counts(&out, CountBy::Stance) != scaled {
            dr_failures.push(format!("N={n} n_R={n_r}"));
        }
    }

    let mut dg_failures = Vec::new();
    for _ in 0..20 {
        let n_g = rng.gen_range(2..=4);
        let langs = pivots(&mut rng, n_g);
        let mut set = CorpusSet::new();
        let mut sources = Vec::new();
        for (i, l) in langs.iter().enumerate() {
            let name = format!("c{i}");
            let n = rng.gen_range(1..=50);
            set.insert(name.clone(), random_corpus(&mut rng, &name, l.as_str(), n));
            sources.push(SourceRef {
                corpus: name,
                language: l.clone(),
            });
        }
        let plan = AugmentationPlan::dg(lang("en"), sources, 0);
        let out = build_dg(&plan, &set, &translator, 1).unwrap();
        let total: usize = set.values().map(Corpus::size).sum();
        let mut expected = BTreeMap::new();
        for c in set.values() {
            for (k, v) in class_counts(c, CountBy::Stance).iter() {
                *expected.entry(k.clone()).or_insert(0) += v;
            }
        }
        let got: BTreeMap<CountKey, usize> = class_counts(&out, CountBy::Stance)
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        if out.size() != total || got != expected {
            dg_failures.push(format!("n_G={n_g}"));
        }
    }

    // Interrupt a DR build by exhausting the backend, resume from the
    // persisted cache in a "new process", compare to an uninterrupted build.
    let set: CorpusSet = [("src".to_string(), random_corpus(&mut rng, "src", "en", 30))].into();
    let plan = AugmentationPlan::dr(
        lang("en"),
        SourceRef {
            corpus: "src".into(),
            language: lang("en"),
        },
        vec![lang("zu"), lang("xh"), lang("fr")],
        0,
    );
    let uninterrupted = mock_translator(9).with_cache(Arc::new(TranslationCache::in_memory()));
    let reference = build_dr(&plan, &set, &uninterrupted, 1).unwrap();
    let needed = uninterrupted.stats().backend_calls;
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("cache.jsonl");
    let backend = |budget| {
        Arc::new(Budgeted {
            inner: MockBackend::new(9, MockNoiseConfig::default()),
            left: AtomicUsize::new(budget),
        })
    };
    let first = Translator::new(backend(70))
        .with_cache(Arc::new(TranslationCache::open(&cache_path).unwrap()))
        .with_retry(stancebridge::translation::RetryPolicy::immediate(2));
    let interrupted = build_dr(&plan, &set, &first, 1);
    let resumable = matches!(&interrupted, Err(stancebridge::augmentation::AugmentError::Translate(e)) if e.is_resumable());
    drop(first);
    let second = Translator::new(backend(usize::MAX))
        .with_cache(Arc::new(TranslationCache::open(&cache_path).unwrap()));
    let resumed = build_dr(&plan, &set, &second, 1).unwrap();
    // 70 calls completed before the interruption; none may be repeated.
    let repeated = second.stats().backend_calls;
    let resume_ok = resumable && resumed == reference && repeated == needed - 70;

    let elapsed = t0.elapsed();
    let ok = dr_failures.is_empty()
        && dg_failures.is_empty()
        && resume_ok
        && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!(
            "DR size/count law 40 cases ({} failures), DG additivity 20 cases ({} failures), \
             resume equal {} with {repeated} fresh calls for {} remaining, {:.1}s (<60s)",
            dr_failures.len(),
            dg_failures.len(),
            resumed == reference,
            needed - 70,
            elapsed.as_secs_f64()
        ),
    )
}

// -------------------------------------------------------------- criterion 5

fn labels(v: &[usize]) -> Vec<StanceLabel> {
    v.iter().map(|&i| StanceLabel::ALL[i]).collect()
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=80);
        let gold: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let m = MetricSet::compute(&labels(&gold), &labels(&pred), true).unwrap();
        let acc = gold.iter().zip(&pred).filter(|(g, p)| g == p).count() as f64 / n as f64;
        for (got, want) in [
            (m.favor_f1, oracle_f1(&gold, &pred, 0)),
            (m.against_f1, oracle_f1(&gold, &pred, 1)),
            (m.none_f1, oracle_f1(&gold, &pred, 2)),
            (m.accuracy.unwrap(), acc),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    // gold [F,F,A,N], pred [F,A,A,N]
    let w = MetricSet::compute(&labels(&[0, 0, 1, 2]), &labels(&[0, 1, 1, 2]), true).unwrap();
    let two_thirds = 2.0 / 3.0;
    let worked = (w.favor_f1 - two_thirds).abs() < 1e-12
        && (w.against_f1 - two_thirds).abs() < 1e-12
        && w.accuracy == Some(0.75);
    verdict(
        worst <= 1e-12 && worked,
        format!(
            "100 vectors max |Δ| {worst:.1e} (≤1e-12); worked example FAVOR {:.6} AGAINST {:.6} acc {:?}",
            w.favor_f1, w.against_f1, w.accuracy
        ),
    )
}

// -------------------------------------------------------------- criterion 6/8

struct TrendRun {
    corpora: CorpusSet,
    reports: Vec<EvalReport>,
    elapsed: Duration,
}

fn run_trend() -> TrendRun {
    let t0 = Instant::now();
    let translator = mock_translator(7);
    let corpora = noisy_transfer_corpora(600, &translator);
    let specs = trend_specs(desk_pipeline(32, 10), (0..5).collect(), &["xh", "sn", "af"]);
    let reports = [specs.dlb, specs.dr, specs.eng_only, specs.da]
        .iter()
        .map(|s| run_experiment(s, &corpora, &translator, 1).unwrap())
        .collect();
    TrendRun {
        corpora,
        reports,
        elapsed: t0.elapsed(),
    }
}

fn trend_check(run: &TrendRun) -> Outcome {
    let score = |i: usize, label: &str| run.reports[i].result(label).unwrap().mean.f1_macro_fa_ag;
    let dlb = score(0, "Target");
    let dr = score(1, "Target");
    let eng = score(2, "Target-30");
    let da = score(3, "Target-30");
    let ok = dr >= dlb + 0.02 && da > eng && run.elapsed <= Duration::from_secs(600);
    verdict(
        ok,
        format!(
            "noisy target FA/AG-F1 over 5 seeds: DLB {dlb:.4}, DR n_R=3 {dr:.4} (Δ {:+.4}, need ≥ +0.02); \
             Target-30: Eng-Only {eng:.4}, DA {da:.4} (Δ {:+.4}, need > 0); {:.0}s (≤600s)",
            dr - dlb,
            da - eng,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn replay_check(run: &TrendRun) -> Outcome {
    let mut detail = Vec::new();
    let mut ok = true;
    for i in [0, 3] {
        let original = &run.reports[i];
        let json = serde_json::to_string(&original.manifest).unwrap();
        let manifest: RunManifest = serde_json::from_str(&json).unwrap();
        let again = replay(&manifest, &run.corpora, &mock_translator(7), 1).unwrap();
        let same = again.metrics_payload().as_bytes() == original.metrics_payload().as_bytes();
        ok &= same;
        detail.push(format!(
            "{} {}",
            original.experiment,
            if same { "identical" } else { "DIFFERS" }
        ));
    }
    verdict(
        ok,
        format!(
            "payloads replayed from serialized manifests: {}",
            detail.join(", ")
        ),
    )
}

// -------------------------------------------------------------- criterion 7

fn real_data() -> Outcome {
    let source = std::env::var_os("STANCEBRIDGE_SOURCE_DATA").map(PathBuf::from);
    let zulu = std::env::var_os("STANCEBRIDGE_ZULU_DATA").map(PathBuf::from);
    let (Some(source), Some(zulu)) = (source, zulu) else {
        return Outcome::Skip(
            "real data not provided; set STANCEBRIDGE_SOURCE_DATA and STANCEBRIDGE_ZULU_DATA to SemEval-layout files".into(),
        );
    };
    let en = match parse_semeval(&source, &lang("en")) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("source corpus: {e}")),
    };
    let zu = match parse_semeval(&zulu, &lang("zu")) {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(format!("Zulu corpus: {e}")),
    };
    let targets = class_counts(&en, CountBy::Target).len();
    let stances = class_counts(&en, CountBy::Stance)
        .iter()
        .filter(|(_, &n)| n > 0)
        .count();
    verdict(
        en.size() == 4163 && targets == 5 && stances == 3 && zu.size() == 1343,
        format!(
            "source {} examples (4163), {targets} targets (5), {stances} stances (3); Zulu {} examples (1343)",
            en.size(),
            zu.size()
        ),
    )
}

fn main() {
    let mut rows: Vec<(&str, Outcome)> = vec![(
        "1 published-score reproduction",
        Outcome::Info("out of scope at desk scale; replaced by criteria 2-8".into()),
    )];
    rows.push(("2 objective numerics", objective_numerics()));
    rows.push(("3 balancing factor", balancing_factor()));
    rows.push(("4 augmentation laws", augmentation_laws()));
    rows.push(("5 metric oracle", metric_oracle()));
    let trend = run_trend();
    rows.push(("6 end-to-end trend", trend_check(&trend)));
    rows.push(("7 ingestion validation", real_data()));
    rows.push(("8 replay", replay_check(&trend)));

    let mut failed = 0;
    println!();
    for (name, outcome) in &rows {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Info(d) => ("INFO", d),
        };
        println!("[{tag}] {name}: {detail}");
    }
    println!();
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria met");
}
