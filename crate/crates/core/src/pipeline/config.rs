use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accounting::Pricing;
use crate::backends::RetryPolicy;
use crate::error::{ConfigError, PipelineError};
use crate::extraction::{validate_theta, DEFAULT_THETA};
use crate::retrieval::{
    Bm25Params, ChunkingConfig, DEFAULT_B, DEFAULT_CHUNK_LEN, DEFAULT_K1, DEFAULT_OVERLAP, DEFAULT_TOP_M,
};
use crate::scoring::{RecallMode, ScoreConfig, DEFAULT_GAMMA, DEFAULT_K_PRIME};
use crate::segmentation::DEFAULT_STRIDE;

/// How pages behind search hits are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReaderKind {
    /// A content-extraction service addressed as `{reader_base_url}/{url}`.
    Api,
    /// Plain HTTP fetch with HTML stripping.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub llm_base_url: String,
    pub llm_model: String,
    /// Environment variable holding the model API key.
    pub llm_api_key_env: String,
    pub search_endpoint: String,
    pub search_api_key_env: String,
    pub reader: ReaderKind,
    pub reader_base_url: String,
    pub reader_api_key_env: String,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            llm_base_url: "https://api.openai.com/v1".into(),
            llm_model: "gpt-4o-mini".into(),
            llm_api_key_env: "CLAIMCHECK_LLM_API_KEY".into(),
            search_endpoint: "https://google.serper.dev/search".into(),
            search_api_key_env: "CLAIMCHECK_SEARCH_API_KEY".into(),
            reader: ReaderKind::Api,
            reader_base_url: "https://r.jina.ai".into(),
            reader_api_key_env: "CLAIMCHECK_READER_API_KEY".into(),
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sentences per extraction chunk (w).
    pub stride: usize,
    /// Confidence gate threshold (θ).
    pub theta: f64,
    pub gamma: f64,
    /// Search results requested per claim.
    pub k: usize,
    /// Evidence chunks passed to the verifier.
    pub top_m: usize,
    pub chunk_len: usize,
    pub overlap: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub scoring_mode: RecallMode,
    /// K' (or K in safe mode) for responses without ground truth.
    pub k_prime: u64,
    pub extractor_max_tokens: u32,
    pub verifier_max_tokens: u32,
    pub retry: RetryPolicy,
    pub pricing: Pricing,
    pub backends: BackendConfig,
    /// Worker threads shared by response- and claim-level fan-out.
    pub parallelism: usize,
    /// On-disk response cache; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stride: DEFAULT_STRIDE,
            theta: DEFAULT_THETA,
            gamma: DEFAULT_GAMMA,
            k: 10,
            top_m: DEFAULT_TOP_M,
            chunk_len: DEFAULT_CHUNK_LEN,
            overlap: DEFAULT_OVERLAP,
            bm25_k1: DEFAULT_K1,
            bm25_b: DEFAULT_B,
            scoring_mode: RecallMode::Fastfact,
            k_prime: DEFAULT_K_PRIME,
            extractor_max_tokens: 2048,
            verifier_max_tokens: 1024,
            retry: RetryPolicy::default(),
            pricing: Pricing::default(),
            backends: BackendConfig::default(),
            parallelism: 8,
            cache_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.stride == 0 {
            return Err(ConfigError::new("stride", "must be at least 1"));
        }
        validate_theta(self.theta)?;
        if self.k == 0 {
            return Err(ConfigError::new("k", "must be at least 1"));
        }
        if self.top_m == 0 {
            return Err(ConfigError::new("top_m", "must be at least 1"));
        }
        if self.parallelism == 0 {
            return Err(ConfigError::new("parallelism", "must be at least 1"));
        }
        if self.retry.max_attempts == 0 {
            return Err(ConfigError::new("retry.max_attempts", "must be at least 1"));
        }
        self.chunking().validate()?;
        self.bm25().validate()?;
        self.score_config(self.k_prime).validate()
    }

    pub fn chunking(&self) -> ChunkingConfig {
        ChunkingConfig {
            chunk_len: self.chunk_len,
            overlap: self.overlap,
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params {
            k1: self.bm25_k1,
            b: self.bm25_b,
        }
    }

    pub fn score_config(&self, k: u64) -> ScoreConfig {
        ScoreConfig {
            gamma: self.gamma,
            mode: self.scoring_mode,
            k,
        }
    }

    /// The settings that can change results. Worker count and cache location
    /// are left out so they never affect records or digests.
    pub fn snapshot(&self) -> ConfigSnapshot {
        ConfigSnapshot {
            stride: self.stride,
            theta: self.theta,
            gamma: self.gamma,
            k: self.k,
            top_m: self.top_m,
            chunk_len: self.chunk_len,
            overlap: self.overlap,
            bm25_k1: self.bm25_k1,
            bm25_b: self.bm25_b,
            scoring_mode: self.scoring_mode,
            k_prime: self.k_prime,
            extractor_max_tokens: self.extractor_max_tokens,
            verifier_max_tokens: self.verifier_max_tokens,
            llm_model: self.backends.llm_model.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub stride: usize,
    pub theta: f64,
    pub gamma: f64,
    pub k: usize,
    pub top_m: usize,
    pub chunk_len: usize,
    pub overlap: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub scoring_mode: RecallMode,
    pub k_prime: u64,
    pub extractor_max_tokens: u32,
    pub verifier_max_tokens: u32,
    pub llm_model: String,
}
