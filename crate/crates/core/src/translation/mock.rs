//! Offline backends: a deterministic noise mock and a cache-only backend.
//!
//! The mock does not translate. It perturbs the token sequence the way a
//! lossy translator would, so that round trips produce noisy paraphrases.
//!
//! Process, for a text split on whitespace into tokens `t_0 .. t_{n-1}`:
//!
//! 1. Seed a ChaCha8 stream with the 32-byte SHA-256 of
//!    `"stancebridge-mock-v1" || seed (u64 LE) || src || 0x00 || dst || 0x00 || NFC(text)`.
//!    The `src`/`dst` bytes are the per-pair salt.
//! 2. Uniforms are `(next_u64 >> 11) * 2^-53`.
//! 3. Walk left to right with cursor `i`. Draw `u`:
//!    * `u < dropout` drops `t_i`;
//!    * else draw `v`; if `v < swap` and `t_{i+1}` exists, emit `t_{i+1} t_i`
//!      and skip past both;
//!    * else emit `t_i`, draw `w`, and emit `t_i` again if `w < duplicate`.
//! 4. If nothing was emitted, emit `t_{k}` with `k = next_u64 mod n`.
//! 5. If no operation fired the input is returned verbatim; otherwise the
//!    emitted tokens are joined with single spaces.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize, BackendError, TranslateError, TranslationBackend};
use crate::corpus::Lang;

/// Languages the mock accepts unless configured otherwise.
pub const DEFAULT_MOCK_LANGUAGES: &[&str] = &[
    "af", "am", "ar", "de", "el", "en", "es", "fi", "fr", "ha", "he", "hi", "ig", "it", "ja", "ko",
    "nl", "pl", "pt", "ru", "sn", "so", "st", "sv", "sw", "tn", "tr", "xh", "yo", "zh", "zu",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MockNoiseConfig {
    pub dropout_prob: f64,
    pub swap_prob: f64,
    pub duplicate_prob: f64,
}

impl Default for MockNoiseConfig {
    fn default() -> Self {
        MockNoiseConfig {
            dropout_prob: 0.10,
            swap_prob: 0.05,
            duplicate_prob: 0.03,
        }
    }
}

impl MockNoiseConfig {
    pub fn silent() -> Self {
        MockNoiseConfig {
            dropout_prob: 0.0,
            swap_prob: 0.0,
            duplicate_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        for (name, p) in [
            ("dropout_prob", self.dropout_prob),
            ("swap_prob", self.swap_prob),
            ("duplicate_prob", self.duplicate_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TranslateError::Config(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        Ok(())
    }
}

fn stream(text: &str, src: &str, dst: &str, seed: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"stancebridge-mock-v1");
    h.update(seed.to_le_bytes());
    h.update(src.as_bytes());
    h.update([0u8]);
    h.update(dst.as_bytes());
    h.update([0u8]);
    h.update(normalize(text).as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

#[inline]
fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Deterministic token-level noise; see the module docs for the exact process.
pub fn mock_translate(
    text: &str,
    src: &Lang,
    dst: &Lang,
    seed: u64,
    cfg: &MockNoiseConfig,
) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return text.to_string();
    }
    let mut rng = stream(text, src.as_str(), dst.as_str(), seed);
    let mut out: Vec<&str> = Vec::with_capacity(tokens.len() + 2);
    let mut changed = false;
    let mut i = 0;
    while i < tokens.len() {
        if uniform(&mut rng) < cfg.dropout_prob {
            changed = true;
            i += 1;
            continue;
        }
        if uniform(&mut rng) < cfg.swap_prob && i + 1 < tokens.len() {
            out.push(tokens[i + 1]);
            out.push(tokens[i]);
            changed = true;
            i += 2;
            continue;
        }
        out.push(tokens[i]);
        if uniform(&mut rng) < cfg.duplicate_prob {
            out.push(tokens[i]);
            changed = true;
        }
        i += 1;
    }
    if out.is_empty() {
        let k = (rng.next_u64() % tokens.len() as u64) as usize;
        out.push(tokens[k]);
    }
    if !changed {
        return text.to_string();
    }
    out.join(" ")
}

pub struct MockBackend {
    seed: u64,
    cfg: MockNoiseConfig,
    languages: BTreeSet<Lang>,
}

impl MockBackend {
    pub fn new(seed: u64, cfg: MockNoiseConfig) -> Self {
        MockBackend {
            seed,
            cfg,
            languages: DEFAULT_MOCK_LANGUAGES
                .iter()
                .map(|l| Lang::new(l).expect("valid tag"))
                .collect(),
        }
    }

    pub fn with_languages<I, S>(mut self, langs: I) -> Result<Self, TranslateError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.languages = langs
            .into_iter()
            .map(|l| Lang::new(l.as_ref()).map_err(|e| TranslateError::Config(e.to_string())))
            .collect::<Result<_, _>>()?;
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise(&self) -> &MockNoiseConfig {
        &self.cfg
    }
}

impl TranslationBackend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn supports(&self, src: &Lang, dst: &Lang) -> bool {
        self.languages.contains(src) && self.languages.contains(dst)
    }

    fn translate_once(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String, BackendError> {
        Ok(mock_translate(text, src, dst, self.seed, &self.cfg))
    }
}

/// Serves nothing itself: every lookup must be satisfied by the cache that
/// wraps it. Reports the name of the backend whose entries it replays.
pub struct CacheOnlyBackend {
    replays: String,
}

impl CacheOnlyBackend {
    pub fn new(replays: impl Into<String>) -> Self {
        CacheOnlyBackend {
            replays: replays.into(),
        }
    }
}

impl TranslationBackend for CacheOnlyBackend {
    fn name(&self) -> &str {
        &self.replays
    }

    fn supports(&self, _: &Lang, _: &Lang) -> bool {
        true
    }

    fn translate_once(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String, BackendError> {
        Err(BackendError::Fatal(format!(
            "cache miss for {src}→{dst} text '{}' with backend '{}'",
            text.chars().take(40).collect::<String>(),
            self.replays
        )))
    }
}
