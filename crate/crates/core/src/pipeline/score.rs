//! Re-scoring persisted records without touching any backend.

use serde::{Deserialize, Serialize};

use super::engine::{EvaluationRecord, KPrimeSource};
use super::run::GroundTruth;
use crate::error::ConfigError;
use crate::scoring::{score, ClaimTally, FactualityScore, RecallMode, ScoreConfig};

/// Overrides applied on top of each record's own scoring settings.
#[derive(Debug, Clone, Copy, Default)]
pub struct RescoreOptions {
    pub gamma: Option<f64>,
    pub mode: Option<RecallMode>,
    pub k_prime: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoredResponse {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_tag: Option<String>,
    pub k_prime_source: KPrimeSource,
    pub score: FactualityScore,
}

/// Tallies the stored verdicts again and scores them. K' comes from ground
/// truth when it has the id, then from `options.k_prime`, then from the
/// record.
pub fn rescore(
    records: &[EvaluationRecord],
    options: RescoreOptions,
    ground_truth: Option<&GroundTruth>,
) -> Result<Vec<RescoredResponse>, ConfigError> {
    records
        .iter()
        .map(|r| {
            let tally = ClaimTally::from_verdicts(&r.claims);
            let (k, source) = match (ground_truth.and_then(|g| g.k_prime(&r.id)), options.k_prime) {
                (Some(k), _) => (k, KPrimeSource::GroundTruth),
                (None, Some(k)) => (k, KPrimeSource::Config),
                (None, None) => (r.score.config.k, r.k_prime_source),
            };
            let config = ScoreConfig {
                gamma: options.gamma.unwrap_or(r.score.config.gamma),
                mode: options.mode.unwrap_or(r.score.config.mode),
                k,
            };
            Ok(RescoredResponse {
                id: r.id.clone(),
                benchmark_tag: r.benchmark_tag.clone(),
                k_prime_source: source,
                score: score(tally, config)?,
            })
        })
        .collect()
}
