//! Live HTTP providers: an OpenAI-compatible chat completion endpoint, a
//! Serper-style search endpoint, and two page readers (a content-extraction
//! API and a plain fetch with HTML stripping).

use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use reqwest::blocking::{Client, Response};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CompletionRequest, CompletionResult, LanguageModel, PageReader, SearchEngine, SearchHit, TokenLogprob};
use crate::error::BackendError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub timeout_secs: u64,
    pub user_agent: String,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        Self {
            timeout_secs: 60,
            user_agent: concat!("claimcheck/", env!("CARGO_PKG_VERSION")).to_string(),
        }
    }
}

impl HttpClientConfig {
    fn client(&self) -> Result<Client, BackendError> {
        Client::builder()
            .timeout(Duration::from_secs(self.timeout_secs))
            .user_agent(&self.user_agent)
            .build()
            .map_err(|e| BackendError::permanent(format!("http client: {e}")))
    }
}

fn send_error(e: reqwest::Error) -> BackendError {
    // connection resets, DNS hiccups and timeouts are worth retrying
    BackendError::transient(format!("request failed: {e}"))
}

fn check_status(resp: Response) -> Result<Response, BackendError> {
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    let body = resp.text().unwrap_or_default();
    let snippet: String = body.chars().take(200).collect();
    let msg = format!("http {status}: {snippet}");
    if status.is_server_error() || status.as_u16() == 429 || status.as_u16() == 408 {
        Err(BackendError::transient(msg))
    } else {
        Err(BackendError::permanent(msg))
    }
}

fn read_key(env_var: &str) -> Option<String> {
    std::env::var(env_var).ok().filter(|v| !v.trim().is_empty())
}

/// Chat completion endpoint speaking the OpenAI wire format
/// (`POST {base}/chat/completions`), with per-token logprobs.
#[derive(Debug, Clone)]
pub struct OpenAiCompatibleModel {
    client: Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl OpenAiCompatibleModel {
    pub fn new(base_url: &str, model: &str, key_env: &str, http: &HttpClientConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: http.client()?,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key: read_key(key_env),
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    logprobs: Option<ChatLogprobs>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatLogprobs {
    #[serde(default)]
    content: Option<Vec<ChatTokenLogprob>>,
}

#[derive(Deserialize)]
struct ChatTokenLogprob {
    token: String,
    logprob: f64,
}

#[derive(Deserialize)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl LanguageModel for OpenAiCompatibleModel {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, BackendError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        });
        if request.want_logprobs {
            body["logprobs"] = json!(true);
        }
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(send_error)?)?;
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| BackendError::permanent(format!("malformed completion payload: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::permanent("completion payload has no choices"))?;
        let token_logprobs = choice.logprobs.and_then(|l| l.content).map(|tokens| {
            tokens
                .into_iter()
                .map(|t| TokenLogprob {
                    token: t.token,
                    logprob: t.logprob,
                })
                .collect()
        });
        let usage = parsed.usage.unwrap_or(ChatUsage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(CompletionResult {
            text: choice.message.content.unwrap_or_default(),
            token_logprobs,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            warnings: Vec::new(),
        })
    }
}

/// Serper-style search API: `POST {endpoint}` with `{"q", "num"}`, results
/// under `organic[]` as `{title, link, snippet}`.
#[derive(Debug, Clone)]
pub struct SerperSearch {
    client: Client,
    endpoint: String,
    api_key: Option<String>,
}

impl SerperSearch {
    pub fn new(endpoint: &str, key_env: &str, http: &HttpClientConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: http.client()?,
            endpoint: endpoint.to_string(),
            api_key: read_key(key_env),
        })
    }
}

#[derive(Deserialize)]
struct SerperResponse {
    #[serde(default)]
    organic: Vec<SerperItem>,
}

#[derive(Deserialize)]
struct SerperItem {
    #[serde(default)]
    title: String,
    link: String,
    #[serde(default)]
    snippet: String,
}

impl SearchEngine for SerperSearch {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BackendError> {
        let mut req = self.client.post(&self.endpoint).json(&json!({ "q": query, "num": k }));
        if let Some(key) = &self.api_key {
            req = req.header("X-API-KEY", key);
        }
        let resp = check_status(req.send().map_err(send_error)?)?;
        let parsed: SerperResponse = resp
            .json()
            .map_err(|e| BackendError::permanent(format!("malformed search payload: {e}")))?;
        Ok(parsed
            .organic
            .into_iter()
            .filter(|i| reqwest::Url::parse(&i.link).is_ok())
            .map(|i| SearchHit {
                title: i.title,
                url: i.link,
                snippet: i.snippet,
            })
            .collect())
    }
}

/// Content-extraction service addressed as `GET {base}/{url}` that returns
/// the page's main text.
#[derive(Debug, Clone)]
pub struct ReaderApi {
    client: Client,
    base_url: String,
    api_key: Option<String>,
}

impl ReaderApi {
    pub fn new(base_url: &str, key_env: &str, http: &HttpClientConfig) -> Result<Self, BackendError> {
        Ok(Self {
            client: http.client()?,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: read_key(key_env),
        })
    }
}

impl PageReader for ReaderApi {
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        let mut req = self
            .client
            .get(format!("{}/{}", self.base_url, url))
            .header("Accept", "text/plain");
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = check_status(req.send().map_err(send_error)?)?;
        resp.text()
            .map_err(|e| BackendError::transient(format!("reading body: {e}")))
    }
}

/// Fetches the URL directly and converts HTML to plain text.
#[derive(Debug, Clone)]
pub struct DirectFetchReader {
    client: Client,
}

impl DirectFetchReader {
    pub fn new(http: &HttpClientConfig) -> Result<Self, BackendError> {
        Ok(Self { client: http.client()? })
    }
}

impl PageReader for DirectFetchReader {
    fn read_page(&self, url: &str) -> Result<String, BackendError> {
        let resp = check_status(self.client.get(url).send().map_err(send_error)?)?;
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("text/html")
            .to_ascii_lowercase();
        if !(content_type.starts_with("text/") || content_type.contains("html") || content_type.contains("xml")) {
            return Err(BackendError::permanent(format!("non-text content: {content_type}")));
        }
        let body = resp
            .text()
            .map_err(|e| BackendError::transient(format!("reading body: {e}")))?;
        if content_type.contains("html") {
            Ok(html_to_text(&body))
        } else {
            Ok(body)
        }
    }
}

static DROP_BLOCKS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)<(script|style|noscript|template|svg|head)\b[^>]*>.*?</(script|style|noscript|template|svg|head)\s*>|<!--.*?-->").unwrap()
});
static BREAK_TAGS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)<br\s*/?>|</?(p|div|li|ul|ol|tr|table|section|article|h[1-6]|header|footer|blockquote|pre)\b[^>]*>",
    )
    .unwrap()
});
static ANY_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<[^>]*>").unwrap());
static ENTITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[a-zA-Z]+);").unwrap());

/// Strips markup from an HTML document, keeping block structure as line
/// breaks and decoding common character entities.
pub fn html_to_text(html: &str) -> String {
    let s = DROP_BLOCKS.replace_all(html, " ");
    let s = BREAK_TAGS.replace_all(&s, "\n");
    let s = ANY_TAG.replace_all(&s, "");
    let s = ENTITY.replace_all(&s, |c: &regex::Captures| {
        decode_entity(&c[1]).unwrap_or_else(|| c[0].to_string())
    });
    s.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn decode_entity(name: &str) -> Option<String> {
    let c = match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        "mdash" => '—',
        "ndash" => '–',
        "hellip" => '…',
        "rsquo" => '’',
        "lsquo" => '‘',
        "rdquo" => '”',
        "ldquo" => '“',
        n if n.starts_with("#x") || n.starts_with("#X") => char::from_u32(u32::from_str_radix(&n[2..], 16).ok()?)?,
        n if n.starts_with('#') => char::from_u32(n[1..].parse().ok()?)?,
        _ => return None,
    };
    Some(c.to_string())
}
