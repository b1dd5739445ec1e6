//! Offline providers.
//!
//! - `Fn*` adapters wrap closures, for tests that script behaviour in code.
//! - [`Scenario`] answers from a small JSON script keyed by prompt content.
//! - `Fixture*` providers replay responses captured by the `Recording*`
//!   wrappers (or left in a response cache), keyed by [`request_key`].
//!
//! Every mock is a pure function of the request, so identical runs produce
//! identical outputs.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::store::{request_key, ResponseStore};
use super::{CompletionRequest, CompletionResult, LanguageModel, PageReader, SearchEngine, SearchHit, TokenLogprob};
use crate::error::BackendError;
use crate::prompts;

pub struct FnModel<F>(F);
pub struct FnSearch<F>(F);
pub struct FnReader<F>(F);

impl<F> FnModel<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResult, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> LanguageModel for FnModel<F>
where
    F: Fn(&CompletionRequest) -> Result<CompletionResult, BackendError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        (self.0)(request)
    }
}

impl<F> FnSearch<F>
where
    F: Fn(&str, usize) -> Result<Vec<SearchHit>, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> SearchEngine for FnSearch<F>
where
    F: Fn(&str, usize) -> Result<Vec<SearchHit>, BackendError> + Send + Sync,
{
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BackendError> {
        (self.0)(query, k)
    }
}

impl<F> FnReader<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self(f)
    }
}

impl<F> PageReader for FnReader<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        (self.0)(url)
    }
}

static MOCK_TOKEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*[^\s#]+|\s*#+|\s+").unwrap());
static LABEL_SPAN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"###([^#\n]*)###").unwrap());

/// Logprob given to tokens outside label markers.
const FILLER_LOGPROB: f64 = -0.05;

/// Splits `text` into word-like tokens and assigns logprobs: tokens that
/// overlap the label inside the last `###…###` span of the i-th labelled line
/// get `label_logprob(i)`, everything else gets a small fixed value.
pub fn mock_token_logprobs(text: &str, label_logprob: impl Fn(usize) -> f64) -> Vec<TokenLogprob> {
    let mut label_ranges = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some(m) = LABEL_SPAN.captures_iter(line).last() {
            let g = m.get(1).unwrap();
            let lead = g.as_str().len() - g.as_str().trim_start().len();
            let a = offset + g.start() + lead;
            label_ranges.push((a, a + g.as_str().trim().len()));
        }
        offset += line.len();
    }
    MOCK_TOKEN
        .find_iter(text)
        .map(|m| {
            let lp = label_ranges
                .iter()
                .position(|&(a, b)| m.start() < b && a < m.end() && a < b)
                .map_or(FILLER_LOGPROB, &label_logprob);
            TokenLogprob {
                token: m.as_str().to_string(),
                logprob: lp,
            }
        })
        .collect()
}

/// A completion with whitespace-token usage counts and, optionally, mock
/// logprobs.
pub fn mock_completion(
    request: &CompletionRequest,
    text: &str,
    label_logprob: impl Fn(usize) -> f64,
) -> CompletionResult {
    CompletionResult {
        text: text.to_string(),
        token_logprobs: request.want_logprobs.then(|| mock_token_logprobs(text, label_logprob)),
        prompt_tokens: request.prompt.split_whitespace().count() as u64,
        completion_tokens: text.split_whitespace().count() as u64,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRule {
    /// Matches when the response chunk contains this text.
    pub chunk_contains: String,
    pub output: String,
    /// Logprob of every label token; defaults to -0.01.
    #[serde(default)]
    pub label_logprob: Option<f64>,
    /// Per labelled line overrides of `label_logprob`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRule {
    /// Exact claim text.
    pub claim: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRule {
    pub query: String,
    pub hits: Vec<SearchHit>,
}

fn default_true() -> bool {
    true
}

/// Scripted offline world: what the extractor says about each chunk, what the
/// verifier says about each claim, what search returns and what pages contain.
///
/// Unscripted extraction chunks yield `No verifiable claim.`, unscripted
/// claims get `not enough evidence`, unscripted queries return no hits and
/// unscripted URLs fail with a permanent 404.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub extractions: Vec<ExtractionRule>,
    #[serde(default)]
    pub verifications: Vec<VerificationRule>,
    #[serde(default)]
    pub searches: Vec<SearchRule>,
    #[serde(default)]
    pub pages: BTreeMap<String, String>,
    /// Whether the scripted model reports token logprobs.
    #[serde(default = "default_true")]
    pub logprobs: bool,
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::permanent(format!("reading scenario {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| BackendError::permanent(format!("parsing scenario {}: {e}", path.display())))
    }

    fn extraction_reply(&self, request: &CompletionRequest, chunk: &str) -> CompletionResult {
        let rule = self.extractions.iter().find(|r| chunk.contains(&r.chunk_contains));
        let Some(rule) = rule else {
            return mock_completion(request, "No verifiable claim.", |_| -0.01);
        };
        let base = rule.label_logprob.unwrap_or(-0.01);
        let mut result = mock_completion(request, &rule.output, |i| {
            rule.label_logprobs.get(i).copied().unwrap_or(base)
        });
        if !self.logprobs {
            result.token_logprobs = None;
        }
        result
    }
}

impl LanguageModel for Scenario {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        if let Some(chunk) = prompts::extraction_prompt_chunk(&request.prompt) {
            return Ok(self.extraction_reply(request, chunk));
        }
        if let Some(claim) = prompts::verification_prompt_claim(&request.prompt) {
            let output = self
                .verifications
                .iter()
                .find(|r| r.claim == claim)
                .map(|r| r.output.clone())
                .unwrap_or_else(|| "No scripted verdict for this claim.\nDecision: ###not enough evidence###".into());
            let mut result = mock_completion(request, &output, |_| -0.01);
            result.token_logprobs = None;
            return Ok(result);
        }
        Err(BackendError::permanent(
            "scenario model received an unrecognised prompt",
        ))
    }
}

impl SearchEngine for Scenario {
    fn search(&self, query: &str, _k: usize) -> Result<Vec<SearchHit>, BackendError> {
        Ok(self
            .searches
            .iter()
            .find(|r| r.query == query)
            .map(|r| r.hits.clone())
            .unwrap_or_default())
    }
}

impl PageReader for Scenario {
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        self.pages
            .get(url)
            .cloned()
            .ok_or_else(|| BackendError::permanent(format!("404 not found: {url}")))
    }
}

fn missing(kind: &str, key: &str) -> BackendError {
    BackendError::permanent(format!("no {kind} fixture for request {key}"))
}

/// Replays completions from a [`ResponseStore`], falling back to another
/// provider (typically a [`Scenario`]) when no fixture exists.
pub struct FixtureModel {
    store: ResponseStore,
    fallback: Option<Arc<dyn LanguageModel>>,
}

impl FixtureModel {
    pub fn new(store: ResponseStore, fallback: Option<Arc<dyn LanguageModel>>) -> Self {
        Self { store, fallback }
    }
}

impl LanguageModel for FixtureModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let key = request_key("llm", request);
        match (self.store.get("llm", &key), &self.fallback) {
            (Some(r), _) => Ok(r),
            (None, Some(f)) => f.complete(request),
            (None, None) => Err(missing("llm", &key)),
        }
    }
}

pub struct FixtureSearch {
    store: ResponseStore,
    fallback: Option<Arc<dyn SearchEngine>>,
}

impl FixtureSearch {
    pub fn new(store: ResponseStore, fallback: Option<Arc<dyn SearchEngine>>) -> Self {
        Self { store, fallback }
    }
}

impl SearchEngine for FixtureSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BackendError> {
        let key = request_key("search", &(query, k));
        match (self.store.get("search", &key), &self.fallback) {
            (Some(r), _) => Ok(r),
            (None, Some(f)) => f.search(query, k),
            (None, None) => Err(missing("search", &key)),
        }
    }
}

pub struct FixtureReader {
    store: ResponseStore,
    fallback: Option<Arc<dyn PageReader>>,
}

impl FixtureReader {
    pub fn new(store: ResponseStore, fallback: Option<Arc<dyn PageReader>>) -> Self {
        Self { store, fallback }
    }
}

impl PageReader for FixtureReader {
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        let key = request_key("page", &url);
        match (self.store.get("page", &key), &self.fallback) {
            (Some(r), _) => Ok(r),
            (None, Some(f)) => f.read_page(url),
            (None, None) => Err(missing("page", &key)),
        }
    }
}

/// Passes calls through to a live provider and captures successful
/// responses as fixtures.
pub struct RecordingModel {
    inner: Arc<dyn LanguageModel>,
    store: ResponseStore,
}

impl RecordingModel {
    pub fn new(inner: Arc<dyn LanguageModel>, store: ResponseStore) -> Self {
        Self { inner, store }
    }
}

impl LanguageModel for RecordingModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let r = self.inner.complete(request)?;
        let _ = self.store.put("llm", &request_key("llm", request), &r);
        Ok(r)
    }
}

pub struct RecordingSearch {
    inner: Arc<dyn SearchEngine>,
    store: ResponseStore,
}

impl RecordingSearch {
    pub fn new(inner: Arc<dyn SearchEngine>, store: ResponseStore) -> Self {
        Self { inner, store }
    }
}

impl SearchEngine for RecordingSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BackendError> {
        let r = self.inner.search(query, k)?;
        let _ = self.store.put("search", &request_key("search", &(query, k)), &r);
        Ok(r)
    }
}

pub struct RecordingReader {
    inner: Arc<dyn PageReader>,
    store: ResponseStore,
}

impl RecordingReader {
    pub fn new(inner: Arc<dyn PageReader>, store: ResponseStore) -> Self {
        Self { inner, store }
    }
}

impl PageReader for RecordingReader {
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        let r = self.inner.read_page(url)?;
        let _ = self.store.put("page", &request_key("page", &url), &r);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_tokens_concatenate_to_text() {
        let text = "- Paris is in France. ###SUPPORTED###\n- Lyon is big. ### likely supported ###\nNo labels here\n";
        let toks = mock_token_logprobs(text, |i| -(i as f64 + 1.0));
        let joined: String = toks.iter().map(|t| t.token.as_str()).collect();
        assert_eq!(joined, text);
        let labelled: Vec<_> = toks.iter().filter(|t| t.logprob != FILLER_LOGPROB).collect();
        assert_eq!(
            labelled.iter().map(|t| t.token.trim()).collect::<Vec<_>>(),
            vec!["SUPPORTED", "likely", "supported"]
        );
        assert_eq!(labelled[0].logprob, -1.0);
        assert_eq!(labelled[2].logprob, -2.0);
    }

    #[test]
    fn scenario_defaults() {
        let s = Scenario::default();
        let req = CompletionRequest::new(prompts::extraction("q", "Some chunk."));
        assert_eq!(s.complete(&req).unwrap().text, "No verifiable claim.");
        assert!(s.search("anything", 3).unwrap().is_empty());
        assert!(s.read_page("https://nowhere.example").is_err());
        assert!(s.complete(&CompletionRequest::new("hello")).is_err());
    }

    #[test]
    fn fixtures_replay_recordings() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResponseStore::new(dir.path()).unwrap();
        let live: Arc<dyn LanguageModel> = Arc::new(FnModel::new(|r: &CompletionRequest| {
            Ok(CompletionResult::text(format!("echo {}", r.prompt)))
        }));
        let rec = RecordingModel::new(live, store.clone());
        let req = CompletionRequest::new("abc");
        let recorded = rec.complete(&req).unwrap();
        let replay = FixtureModel::new(store, None);
        assert_eq!(replay.complete(&req).unwrap(), recorded);
        assert!(replay.complete(&CompletionRequest::new("other")).is_err());
    }
}
