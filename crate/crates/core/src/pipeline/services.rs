//! Assembling [`Services`] from configuration.

use std::path::Path;
use std::sync::Arc;

use super::config::{PipelineConfig, ReaderKind};
use crate::backends::{
    DirectFetchReader, FixtureModel, FixtureReader, FixtureSearch, HttpClientConfig, LanguageModel,
    OpenAiCompatibleModel, PageReader, ReaderApi, RecordingModel, RecordingReader, RecordingSearch, ResponseStore,
    Scenario, SearchEngine, SerperSearch, Services,
};
use crate::error::{ConfigError, PipelineError};

/// Name of the optional scripted scenario inside a fixtures directory.
pub const SCENARIO_FILE: &str = "scenario.json";

fn with_cache(services: Services, config: &PipelineConfig) -> Result<Services, PipelineError> {
    let cache = match &config.cache_dir {
        Some(dir) => Some(ResponseStore::new(dir).map_err(|e| PipelineError::io(dir, e))?),
        None => None,
    };
    Ok(services.with_retry(config.retry).with_cache(cache))
}

/// HTTP providers from `config.backends`. With `record_into`, every
/// successful response is also saved as a fixture for later offline runs.
pub fn live_services(config: &PipelineConfig, record_into: Option<&Path>) -> Result<Services, PipelineError> {
    let b = &config.backends;
    let http = HttpClientConfig {
        timeout_secs: b.timeout_secs,
        ..HttpClientConfig::default()
    };
    let mut llm: Arc<dyn LanguageModel> = Arc::new(OpenAiCompatibleModel::new(
        &b.llm_base_url,
        &b.llm_model,
        &b.llm_api_key_env,
        &http,
    )?);
    let mut search: Arc<dyn SearchEngine> =
        Arc::new(SerperSearch::new(&b.search_endpoint, &b.search_api_key_env, &http)?);
    let mut reader: Arc<dyn PageReader> = match b.reader {
        ReaderKind::Api => Arc::new(ReaderApi::new(&b.reader_base_url, &b.reader_api_key_env, &http)?),
        ReaderKind::Direct => Arc::new(DirectFetchReader::new(&http)?),
    };
    if let Some(dir) = record_into {
        let store = ResponseStore::new(dir).map_err(|e| PipelineError::io(dir, e))?;
        llm = Arc::new(RecordingModel::new(llm, store.clone()));
        search = Arc::new(RecordingSearch::new(search, store.clone()));
        reader = Arc::new(RecordingReader::new(reader, store));
    }
    with_cache(Services::new(llm, search, reader), config)
}

/// Offline providers from a fixtures directory: recorded responses under
/// `llm/`, `search/` and `page/`, backed by `scenario.json` when present.
pub fn mock_services(config: &PipelineConfig, fixtures: &Path) -> Result<Services, PipelineError> {
    if !fixtures.is_dir() {
        return Err(ConfigError::new("fixtures", format!("{} is not a directory", fixtures.display())).into());
    }
    let scenario_path = fixtures.join(SCENARIO_FILE);
    let scenario = if scenario_path.exists() {
        Some(Arc::new(Scenario::load(&scenario_path)?))
    } else {
        None
    };
    let store = ResponseStore::open(fixtures);
    let llm = FixtureModel::new(store.clone(), scenario.clone().map(|s| s as Arc<dyn LanguageModel>));
    let search = FixtureSearch::new(store.clone(), scenario.clone().map(|s| s as Arc<dyn SearchEngine>));
    let reader = FixtureReader::new(store, scenario.map(|s| s as Arc<dyn PageReader>));
    with_cache(Services::new(Arc::new(llm), Arc::new(search), Arc::new(reader)), config)
}
