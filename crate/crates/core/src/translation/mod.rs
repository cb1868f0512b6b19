//! Machine translation: pluggable backends, a persistent cache, retries and
//! round-trip (pivot) composition.
//!
//! [`Translator`] is the entry point. It wraps a [`TranslationBackend`] with an
//! optional [`TranslationCache`], consults the cache first and writes every
//! backend result back, so an interrupted run can resume without repeating
//! completed calls.

mod cache;
mod fixture;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::corpus::Lang;

pub use cache::{unix_now, CacheEntry, CacheKey, TranslationCache};
pub use fixture::FixtureBackend;
pub use http::{HttpBackend, HttpBackendConfig, ENV_ENDPOINT, ENV_KEY, ENV_MAX_REQUESTS};
pub use mock::{
    mock_translate, CacheOnlyBackend, MockBackend, MockNoiseConfig, DEFAULT_MOCK_LANGUAGES,
};

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Network or server failure; retried.
    #[error("transport failure: {0}")]
    Transport(String),
    /// Quota or rate limiting; retried, then surfaced as [`TranslateError::RateLimited`].
    #[error("rate limited: {0}")]
    RateLimited(String),
    /// Not worth retrying (bad request, missing fixture, cache-only miss).
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error("pair {src}→{dst} unsupported by backend '{backend}'")]
    Unsupported {
        src: Lang,
        dst: Lang,
        backend: String,
    },
    #[error("cannot translate empty text")]
    EmptyInput,
    #[error("backend '{backend}' returned an empty translation for {src}→{dst}")]
    EmptyOutput {
        src: Lang,
        dst: Lang,
        backend: String,
    },
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: usize, message: String },
    #[error("rate limit exhausted after {attempts} attempts ({message}); completed translations are cached, rerun to resume")]
    RateLimited { attempts: usize, message: String },
    #[error("backend error: {0}")]
    Backend(String),
    #[error("missing credentials: {0}")]
    MissingCredentials(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("translation cache error: {0}")]
    Cache(String),
}

impl TranslateError {
    pub fn is_resumable(&self) -> bool {
        matches!(
            self,
            TranslateError::RateLimited { .. } | TranslateError::Transport { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, TranslateError>;

/// A machine translation engine.
pub trait TranslationBackend: Send + Sync {
    fn name(&self) -> &str;

    fn supports(&self, src: &Lang, dst: &Lang) -> bool;

    /// One attempt at translating `text`. Only called for supported,
    /// non-identity pairs.
    fn translate_once(
        &self,
        text: &str,
        src: &Lang,
        dst: &Lang,
    ) -> std::result::Result<String, BackendError>;
}

/// NFC-normalizes `text`.
pub fn normalize(text: &str) -> String {
    text.nfc().collect()
}

/// Hex SHA-256 of the NFC-normalized UTF-8 text.
pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(normalize(text).as_bytes()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: usize,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: usize) -> Self {
        RetryPolicy {
            attempts,
            initial_backoff: Duration::ZERO,
        }
    }
}

/// Call counters, useful for asserting cache behaviour.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TranslatorStats {
    pub backend_calls: usize,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

pub struct Translator {
    backend: Arc<dyn TranslationBackend>,
    cache: Option<Arc<TranslationCache>>,
    retry: RetryPolicy,
    backend_calls: AtomicUsize,
    cache_hits: AtomicUsize,
    cache_misses: AtomicUsize,
}

impl Translator {
    pub fn new(backend: Arc<dyn TranslationBackend>) -> Self {
        Translator {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            backend_calls: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
            cache_misses: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Arc<TranslationCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn cache(&self) -> Option<&Arc<TranslationCache>> {
        self.cache.as_ref()
    }

    pub fn stats(&self) -> TranslatorStats {
        TranslatorStats {
            backend_calls: self.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            cache_misses: self.cache_misses.load(Ordering::Relaxed),
        }
    }

    pub fn supports(&self, src: &Lang, dst: &Lang) -> bool {
        src == dst || self.backend.supports(src, dst)
    }

    pub fn check_pair(&self, src: &Lang, dst: &Lang) -> Result<()> {
        if self.supports(src, dst) {
            Ok(())
        } else {
            Err(TranslateError::Unsupported {
                src: src.clone(),
                dst: dst.clone(),
                backend: self.backend.name().to_string(),
            })
        }
    }

    pub fn translate(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String> {
        if text.trim().is_empty() {
            return Err(TranslateError::EmptyInput);
        }
        if src == dst {
            return Ok(text.to_string());
        }
        self.check_pair(src, dst)?;

        let key = CacheKey {
            source_lang: src.clone(),
            target_lang: dst.clone(),
            text_digest: text_digest(text),
            backend_name: self.backend.name().to_string(),
        };
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(hit.translated_text);
            }
            self.cache_misses.fetch_add(1, Ordering::Relaxed);
        }

        let out = self.call_with_retry(text, src, dst)?;
        if out.trim().is_empty() {
            return Err(TranslateError::EmptyOutput {
                src: src.clone(),
                dst: dst.clone(),
                backend: self.backend.name().to_string(),
            });
        }
        if let Some(cache) = &self.cache {
            cache
                .put(CacheEntry {
                    source_lang: key.source_lang,
                    target_lang: key.target_lang,
                    text_digest: key.text_digest,
                    backend_name: key.backend_name,
                    source_text: text.to_string(),
                    translated_text: out.clone(),
                    timestamp: unix_now(),
                })
                .map_err(|e| TranslateError::Cache(e.to_string()))?;
        }
        Ok(out)
    }

    fn call_with_retry(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String> {
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut last = BackendError::Transport("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 && !backoff.is_zero() {
                thread::sleep(backoff);
                backoff *= 2;
            }
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.translate_once(text, src, dst) {
                Ok(s) => return Ok(s),
                Err(BackendError::Fatal(m)) => return Err(TranslateError::Backend(m)),
                Err(e) => {
                    log::warn!(
                        "{} {}→{} attempt {}/{} failed: {}",
                        self.backend.name(),
                        src,
                        dst,
                        attempt + 1,
                        attempts,
                        e
                    );
                    last = e;
                }
            }
        }
        Err(match last {
            BackendError::RateLimited(message) => TranslateError::RateLimited { attempts, message },
            BackendError::Transport(message) | BackendError::Fatal(message) => {
                TranslateError::Transport { attempts, message }
            }
        })
    }

    /// `base → pivot → base`.
    pub fn round_trip(&self, text: &str, pivot: &Lang, base: &Lang) -> Result<String> {
        self.check_pair(base, pivot)?;
        self.check_pair(pivot, base)?;
        let there = self.translate(text, base, pivot)?;
        self.translate(&there, pivot, base)
    }

    /// Translates many texts with at most `jobs` concurrent backend calls.
    /// Output order matches input order.
    pub fn translate_many(
        &self,
        texts: &[&str],
        src: &Lang,
        dst: &Lang,
        jobs: usize,
    ) -> Result<Vec<String>> {
        self.check_pair(src, dst)?;
        self.run_bounded(texts, jobs, |t| self.translate(t, src, dst))
    }

    pub fn round_trip_many(
        &self,
        texts: &[&str],
        pivot: &Lang,
        base: &Lang,
        jobs: usize,
    ) -> Result<Vec<String>> {
        self.check_pair(base, pivot)?;
        self.check_pair(pivot, base)?;
        self.run_bounded(texts, jobs, |t| self.round_trip(t, pivot, base))
    }

    fn run_bounded<F>(&self, texts: &[&str], jobs: usize, f: F) -> Result<Vec<String>>
    where
        F: Fn(&str) -> Result<String> + Sync + Send,
    {
        if jobs <= 1 || texts.len() < 2 {
            return texts.iter().map(|t| f(t)).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| TranslateError::Config(e.to_string()))?;
        pool.install(|| texts.par_iter().map(|t| f(t)).collect())
    }
}
