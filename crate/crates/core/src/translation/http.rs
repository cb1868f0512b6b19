//! HTTP client for a Google-Translate-v2-style JSON API.
//!
//! Request: `POST {endpoint}?key={key}` with body
//! `{"q": text, "source": src, "target": dst, "format": "text"}`.
//! Response: `{"data": {"translations": [{"translatedText": "..."}]}}`.
//!
//! Status mapping: 2xx parses the body; 429, and 403 whose body mentions a
//! rate limit, are rate limiting; 5xx is a transport failure; anything else is
//! fatal.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{BackendError, TranslateError, TranslationBackend};
use crate::corpus::Lang;

pub const ENV_ENDPOINT: &str = "STANCEBRIDGE_MT_ENDPOINT";
pub const ENV_KEY: &str = "STANCEBRIDGE_MT_KEY";
pub const ENV_MAX_REQUESTS: &str = "STANCEBRIDGE_MT_MAX_REQUESTS";

const DEFAULT_ENDPOINT: &str = "https://translation.googleapis.com/language/translate/v2";

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub api_key: String,
    pub languages: BTreeSet<Lang>,
    /// Requests allowed for the lifetime of the backend; `None` is unlimited.
    pub max_requests: Option<usize>,
    pub timeout: Duration,
}

impl HttpBackendConfig {
    /// Reads endpoint, key and quota from the environment.
    pub fn from_env(languages: BTreeSet<Lang>) -> Result<Self, TranslateError> {
        let api_key = std::env::var(ENV_KEY).ok().filter(|k| !k.trim().is_empty()).ok_or_else(|| {
            TranslateError::MissingCredentials(format!(
                "the live backend needs an API key; export {ENV_KEY}=<key> (and optionally {ENV_ENDPOINT}), \
                 or run with --backend mock or --backend cached"
            ))
        })?;
        let endpoint = std::env::var(ENV_ENDPOINT).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_string());
        let max_requests = match std::env::var(ENV_MAX_REQUESTS) {
            Ok(v) => Some(v.parse().map_err(|_| {
                TranslateError::Config(format!("{ENV_MAX_REQUESTS}={v} is not a count"))
            })?),
            Err(_) => None,
        };
        Ok(HttpBackendConfig {
            endpoint,
            api_key,
            languages,
            max_requests,
            timeout: Duration::from_secs(30),
        })
    }
}

pub struct HttpBackend {
    cfg: HttpBackendConfig,
    agent: ureq::Agent,
    sent: AtomicUsize,
}

#[derive(Deserialize)]
struct ApiResponse {
    data: ApiData,
}

#[derive(Deserialize)]
struct ApiData {
    translations: Vec<ApiTranslation>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ApiTranslation {
    translated_text: String,
}

pub(crate) fn request_body(text: &str, src: &Lang, dst: &Lang) -> serde_json::Value {
    json!({ "q": text, "source": src.as_str(), "target": dst.as_str(), "format": "text" })
}

pub(crate) fn map_response(status: u16, body: &str) -> Result<String, BackendError> {
    match status {
        200..=299 => {
            let parsed: ApiResponse = serde_json::from_str(body)
                .map_err(|e| BackendError::Fatal(format!("unexpected response body: {e}")))?;
            parsed
                .data
                .translations
                .into_iter()
                .next()
                .map(|t| t.translated_text)
                .ok_or_else(|| BackendError::Fatal("response contained no translations".into()))
        }
        429 => Err(BackendError::RateLimited(format!(
            "HTTP 429: {}",
            snippet(body)
        ))),
        403 if body.contains("RateLimit")
            || body.contains("rateLimit")
            || body.contains("quota") =>
        {
            Err(BackendError::RateLimited(format!(
                "HTTP 403: {}",
                snippet(body)
            )))
        }
        500..=599 => Err(BackendError::Transport(format!(
            "HTTP {status}: {}",
            snippet(body)
        ))),
        _ => Err(BackendError::Fatal(format!(
            "HTTP {status}: {}",
            snippet(body)
        ))),
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(cfg.timeout))
            .build()
            .into();
        HttpBackend {
            cfg,
            agent,
            sent: AtomicUsize::new(0),
        }
    }
}

impl TranslationBackend for HttpBackend {
    fn name(&self) -> &str {
        "live"
    }

    fn supports(&self, src: &Lang, dst: &Lang) -> bool {
        self.cfg.languages.contains(src) && self.cfg.languages.contains(dst)
    }

    fn translate_once(&self, text: &str, src: &Lang, dst: &Lang) -> Result<String, BackendError> {
        if let Some(max) = self.cfg.max_requests {
            if self.sent.fetch_add(1, Ordering::SeqCst) >= max {
                return Err(BackendError::RateLimited(format!(
                    "configured quota of {max} requests used up"
                )));
            }
        }
        let url = format!("{}?key={}", self.cfg.endpoint, self.cfg.api_key);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(request_body(text, src, dst))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        map_response(status, &body)
    }
}
