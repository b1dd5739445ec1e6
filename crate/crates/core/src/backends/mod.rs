//! Adapters for the three external services: language model completion,
//! web search and page reading.
//!
//! Providers implement the small [`LanguageModel`], [`SearchEngine`] and
//! [`PageReader`] traits. [`Services`] wraps a set of providers with the
//! retry policy, the optional on-disk response cache and ledger accounting;
//! the pipeline only talks to [`Services`].

mod http;
mod mock;
mod retry;
mod store;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::warn;

pub use http::{html_to_text, DirectFetchReader, HttpClientConfig, OpenAiCompatibleModel, ReaderApi, SerperSearch};
pub use mock::{
    mock_completion, mock_token_logprobs, ExtractionRule, FixtureModel, FixtureReader, FixtureSearch, FnModel,
    FnReader, FnSearch, RecordingModel, RecordingReader, RecordingSearch, Scenario, SearchRule, VerificationRule,
};
pub use retry::RetryPolicy;
pub use store::{request_key, ResponseStore};

use crate::accounting::{CallPurpose, CostLedger};
use crate::error::{BackendError, ConfigError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub want_logprobs: bool,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            want_logprobs: false,
            max_tokens: 1024,
            temperature: 0.0,
        }
    }

    pub fn with_logprobs(mut self, want: bool) -> Self {
        self.want_logprobs = want;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CompletionResult {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            token_logprobs: None,
            prompt_tokens: 0,
            completion_tokens: 0,
            warnings: Vec::new(),
        }
    }

    /// True when the logprob tokens concatenate back to `text`.
    pub fn logprobs_align(&self) -> bool {
        match &self.token_logprobs {
            None => true,
            Some(tokens) => {
                let mut rest = self.text.as_str();
                for t in tokens {
                    match rest.strip_prefix(t.token.as_str()) {
                        Some(r) => rest = r,
                        None => return false,
                    }
                }
                rest.is_empty()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError>;
}

pub trait SearchEngine: Send + Sync {
    /// Returns results in provider order. Truncation and de-duplication are
    /// applied by [`Services::search`].
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BackendError>;
}

pub trait PageReader: Send + Sync {
    fn read_page(&self, url: &str) -> Result<String, BackendError>;
}

/// A backend response plus how it was obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Served<T> {
    pub value: T,
    pub attempts: u32,
    pub cached: bool,
}

/// The providers used by one pipeline run.
#[derive(Clone)]
pub struct Services {
    llm: Arc<dyn LanguageModel>,
    search: Arc<dyn SearchEngine>,
    reader: Arc<dyn PageReader>,
    retry: RetryPolicy,
    cache: Option<ResponseStore>,
}

impl std::fmt::Debug for Services {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Services")
            .field("retry", &self.retry)
            .field("cache", &self.cache)
            .finish_non_exhaustive()
    }
}

impl Services {
    pub fn new(llm: Arc<dyn LanguageModel>, search: Arc<dyn SearchEngine>, reader: Arc<dyn PageReader>) -> Self {
        Self {
            llm,
            search,
            reader,
            retry: RetryPolicy::default(),
            cache: None,
        }
    }

    /// All three services backed by one [`Scenario`].
    pub fn from_scenario(scenario: Scenario) -> Self {
        let s = Arc::new(scenario);
        Self::new(s.clone(), s.clone(), s)
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: Option<ResponseStore>) -> Self {
        self.cache = cache;
        self
    }

    pub fn cache_enabled(&self) -> bool {
        self.cache.is_some()
    }

    pub fn complete(
        &self,
        ledger: &CostLedger,
        purpose: CallPurpose,
        request: &CompletionRequest,
    ) -> Result<Served<CompletionResult>, BackendError> {
        if request.prompt.trim().is_empty() {
            return Err(ConfigError::new("prompt", "must not be empty").into());
        }
        let key = request_key("llm", request);
        if let Some(hit) = self.cached::<CompletionResult>("llm", &key, ledger) {
            return Ok(hit);
        }
        let (mut result, attempts) = match self.retry.run(|| self.llm.complete(request)) {
            Ok(ok) => ok,
            Err(e) => {
                ledger.record_failure();
                return Err(e);
            }
        };
        ledger.record_completion(purpose, result.prompt_tokens, result.completion_tokens);
        if !result.logprobs_align() {
            result.token_logprobs = None;
            result
                .warnings
                .push("token logprobs do not reproduce the completion text; discarded".into());
        }
        if request.want_logprobs && result.token_logprobs.is_none() {
            warn!("backend returned no token logprobs; confidence gating disabled for this call");
            result.warnings.push("capability: token logprobs unavailable".into());
        }
        self.store("llm", &key, &result);
        Ok(Served {
            value: result,
            attempts,
            cached: false,
        })
    }

    pub fn search(&self, ledger: &CostLedger, query: &str, k: usize) -> Result<Served<Vec<SearchHit>>, BackendError> {
        if query.trim().is_empty() {
            return Err(ConfigError::new("query", "must not be empty").into());
        }
        if k == 0 {
            return Err(ConfigError::new("k", "must be at least 1").into());
        }
        let key = request_key("search", &(query, k));
        if let Some(hit) = self.cached::<Vec<SearchHit>>("search", &key, ledger) {
            return Ok(hit);
        }
        let (raw, attempts) = match self.retry.run(|| self.search.search(query, k)) {
            Ok(ok) => ok,
            Err(e) => {
                ledger.record_failure();
                return Err(e);
            }
        };
        ledger.record_search(k);
        let hits = dedup_hits(raw, k);
        self.store("search", &key, &hits);
        Ok(Served {
            value: hits,
            attempts,
            cached: false,
        })
    }

    pub fn read_page(&self, ledger: &CostLedger, url: &str) -> Result<Served<String>, BackendError> {
        let key = request_key("page", &url);
        if let Some(hit) = self.cached::<String>("page", &key, ledger) {
            return Ok(hit);
        }
        match self.retry.run(|| self.reader.read_page(url)) {
            Ok((body, attempts)) => {
                ledger.record_page();
                self.store("page", &key, &body);
                Ok(Served {
                    value: body,
                    attempts,
                    cached: false,
                })
            }
            Err(e) => {
                ledger.record_failure();
                Err(e)
            }
        }
    }

    fn cached<T: serde::de::DeserializeOwned>(&self, kind: &str, key: &str, ledger: &CostLedger) -> Option<Served<T>> {
        let value = self.cache.as_ref()?.get::<T>(kind, key)?;
        ledger.record_cache_hit();
        Some(Served {
            value,
            attempts: 0,
            cached: true,
        })
    }

    fn store<T: Serialize>(&self, kind: &str, key: &str, value: &T) {
        if let Some(cache) = &self.cache {
            if let Err(e) = cache.put(kind, key, value) {
                warn!(error = %e, "failed to write response cache entry");
            }
        }
    }
}

/// Keeps the first occurrence of each URL and at most `k` hits, in provider
/// order.
fn dedup_hits(hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    let mut seen = std::collections::HashSet::new();
    hits.into_iter()
        .filter(|h| !h.url.trim().is_empty() && seen.insert(h.url.clone()))
        .take(k)
        .collect()
}
