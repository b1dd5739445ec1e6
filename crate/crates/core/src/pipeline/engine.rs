//! Evaluation of a single response.

use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::config::{ConfigSnapshot, PipelineConfig};
use crate::accounting::{reconcile, CallPurpose, CostLedger, LedgerSnapshot, PipelineParams, ReconcileReport};
use crate::backends::{CompletionRequest, SearchHit, Services};
use crate::error::{ExtractionError, PipelineError};
use crate::extraction::{
    apply_gate, dedup_claims, parse_extraction_output, render_extraction_prompt, AtomicClaim, DuplicateClaim,
    ParseWarning,
};
use crate::retrieval::{build_index, chunk_documents, retrieve_scored, FetchStatus, ScoredChunk, WebDocument};
use crate::scoring::{score, ClaimTally, FactualityScore};
use crate::segmentation::{chunk_source, split_sentences};
use crate::verification::{verify_claim, VerifiedClaim};

/// Version of every per-response JSON document written by the pipeline.
pub const SCHEMA_VERSION: u32 = 1;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as u64)
    }
}

/// A clock that never moves; makes records reproducible byte for byte.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseInput {
    pub id: String,
    pub question: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkExtraction {
    pub chunk_index: usize,
    pub sentence_count: usize,
    pub raw_output: String,
    pub parse_warnings: Vec<ParseWarning>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Step 1 output: chunks, raw extractor output and gated claims.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsStage {
    pub schema_version: u32,
    pub id: String,
    pub n_sentences: usize,
    pub chunks: Vec<ChunkExtraction>,
    pub claims: Vec<AtomicClaim>,
    pub duplicates: Vec<DuplicateClaim>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub url: String,
    pub title: String,
    pub word_count: usize,
    pub fetch_status: FetchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimEvidence {
    pub claim_id: String,
    pub query: String,
    pub hits: Vec<SearchHit>,
    pub documents: Vec<DocumentSummary>,
    pub retrieved: Vec<ScoredChunk>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Step 2 output for the claims that went to evidence verification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceStage {
    pub schema_version: u32,
    pub id: String,
    pub claims: Vec<ClaimEvidence>,
}

/// Step 3 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictsStage {
    pub schema_version: u32,
    pub id: String,
    pub verdicts: Vec<VerifiedClaim>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPrimeSource {
    GroundTruth,
    Config,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub schema_version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark_tag: Option<String>,
    pub question: String,
    pub response: String,
    pub n_sentences: usize,
    pub n_chunks: usize,
    pub claims: Vec<VerifiedClaim>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub duplicates: Vec<DuplicateClaim>,
    pub tally: ClaimTally,
    pub score: FactualityScore,
    pub k_prime_source: KPrimeSource,
    pub ledger: LedgerSnapshot,
    pub reconcile: ReconcileReport,
    pub config: ConfigSnapshot,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl EvaluationRecord {
    pub fn non_gated(&self) -> u64 {
        self.claims.iter().filter(|c| !c.claim.gated).count() as u64
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams::measured(
            self.n_sentences as u64,
            self.claims.len() as u64,
            self.config.k as u64,
            self.non_gated(),
            self.config.stride as u64,
        )
    }
}

/// Everything produced for one response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseOutcome {
    pub claims: ClaimsStage,
    pub evidence: EvidenceStage,
    pub verdicts: VerdictsStage,
    pub record: EvaluationRecord,
}

#[derive(Clone)]
pub struct Evaluator {
    services: Services,
    config: PipelineConfig,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator")
            .field("services", &self.services)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Evaluator {
    pub fn new(services: Services, config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            services,
            config,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    /// Evaluates one question/response pair with the configured K'.
    pub fn evaluate_response(&self, question: &str, response: &str) -> Result<EvaluationRecord, PipelineError> {
        let input = ResponseInput {
            id: "response".into(),
            question: question.into(),
            response: response.into(),
            benchmark_tag: None,
        };
        Ok(self.evaluate(&input, None)?.record)
    }

    /// Runs segmentation, extraction, gating, evidence verification and
    /// scoring. `k_prime` overrides the configured K' (e.g. from ground
    /// truth). Fails only when an extractor call cannot be completed.
    pub fn evaluate(&self, input: &ResponseInput, k_prime: Option<u64>) -> Result<ResponseOutcome, PipelineError> {
        let cfg = &self.config;
        let started = self.clock.now_ms();
        let ledger = CostLedger::new();
        let mut warnings = Vec::new();

        let sentences = split_sentences(&input.response);
        let chunks = chunk_source(&input.response, &sentences, cfg.stride)?;
        debug!(id = %input.id, sentences = sentences.len(), chunks = chunks.len(), "segmented response");

        let extracted: Vec<(ChunkExtraction, Vec<AtomicClaim>)> = chunks
            .par_iter()
            .map(|chunk| {
                let request = CompletionRequest::new(render_extraction_prompt(&input.question, chunk))
                    .with_logprobs(true)
                    .with_max_tokens(cfg.extractor_max_tokens);
                let served = self.services.complete(&ledger, CallPurpose::Extraction, &request)?;
                let result = served.value;
                let (claims, parse_warnings, mut notes) =
                    match parse_extraction_output(&result.text, result.token_logprobs.as_deref()) {
                        Ok(outcome) => {
                            let outcome = outcome.with_origin(&input.id, chunk.index);
                            (outcome.claims, outcome.parse_warnings, outcome.notes)
                        }
                        Err(ExtractionError::EmptyOutput) => {
                            (Vec::new(), Vec::new(), vec![ExtractionError::EmptyOutput.to_string()])
                        }
                    };
                notes.extend(result.warnings);
                let summary = ChunkExtraction {
                    chunk_index: chunk.index,
                    sentence_count: chunk.len(),
                    raw_output: result.text,
                    parse_warnings,
                    notes,
                };
                Ok((summary, claims))
            })
            .collect::<Result<_, PipelineError>>()?;

        let mut chunk_summaries = Vec::with_capacity(extracted.len());
        let mut all_claims = Vec::new();
        for (summary, claims) in extracted {
            for w in &summary.parse_warnings {
                warnings.push(format!("chunk {} line {}: {}", summary.chunk_index, w.line, w.reason));
            }
            chunk_summaries.push(summary);
            all_claims.extend(claims);
        }
        let (mut claims, duplicates) = dedup_claims(all_claims);
        apply_gate(&mut claims, cfg.theta)?;

        let results: Vec<(VerifiedClaim, Option<ClaimEvidence>)> = claims
            .par_iter()
            .map(|claim| {
                if claim.gated {
                    let verdict = VerifiedClaim::gated(claim.clone())?;
                    Ok((verdict, None))
                } else {
                    let (evidence, chunks) = self.gather_evidence(&ledger, claim);
                    let chunks: Vec<_> = chunks.into_iter().map(|s| s.chunk).collect();
                    let verdict =
                        verify_claim(&self.services, &ledger, claim.clone(), &chunks, cfg.verifier_max_tokens);
                    Ok((verdict, Some(evidence)))
                }
            })
            .collect::<Result<_, PipelineError>>()?;

        let mut verdicts = Vec::with_capacity(results.len());
        let mut evidence = Vec::new();
        for (verdict, ev) in results {
            if let Some(err) = &verdict.error {
                warnings.push(format!("{}: {}", verdict.claim.claim_id, err));
            }
            verdicts.push(verdict);
            evidence.extend(ev);
        }

        let tally = ClaimTally::from_verdicts(&verdicts);
        let (k, k_prime_source) = match k_prime {
            Some(k) => (k, KPrimeSource::GroundTruth),
            None => (cfg.k_prime, KPrimeSource::Config),
        };
        let factuality = score(tally, cfg.score_config(k))?;

        let finished = self.clock.now_ms();
        ledger.add_wall_time(Duration::from_millis(finished.saturating_sub(started)));
        let snapshot = ledger.snapshot();
        let non_gated = claims.iter().filter(|c| !c.gated).count() as u64;
        let params = PipelineParams::measured(
            sentences.len() as u64,
            claims.len() as u64,
            cfg.k as u64,
            non_gated,
            cfg.stride as u64,
        );
        let reconcile_report = reconcile(&snapshot, &params)?;
        if reconcile_report.exact_required && !reconcile_report.consistent() {
            warn!(id = %input.id, mismatches = ?reconcile_report.mismatches, "observed calls differ from budget");
        }

        let record = EvaluationRecord {
            schema_version: SCHEMA_VERSION,
            id: input.id.clone(),
            benchmark_tag: input.benchmark_tag.clone(),
            question: input.question.clone(),
            response: input.response.clone(),
            n_sentences: sentences.len(),
            n_chunks: chunks.len(),
            claims: verdicts.clone(),
            duplicates: duplicates.clone(),
            tally,
            score: factuality,
            k_prime_source,
            ledger: snapshot,
            reconcile: reconcile_report,
            config: cfg.snapshot(),
            started_at_ms: started,
            finished_at_ms: finished,
            warnings,
        };
        Ok(ResponseOutcome {
            claims: ClaimsStage {
                schema_version: SCHEMA_VERSION,
                id: input.id.clone(),
                n_sentences: sentences.len(),
                chunks: chunk_summaries,
                claims,
                duplicates,
            },
            evidence: EvidenceStage {
                schema_version: SCHEMA_VERSION,
                id: input.id.clone(),
                claims: evidence,
            },
            verdicts: VerdictsStage {
                schema_version: SCHEMA_VERSION,
                id: input.id.clone(),
                verdicts,
            },
            record,
        })
    }

    /// Search, read, chunk, index and retrieve for one claim. Failures are
    /// noted on the evidence and leave the claim with less (or no) evidence.
    fn gather_evidence(&self, ledger: &CostLedger, claim: &AtomicClaim) -> (ClaimEvidence, Vec<ScoredChunk>) {
        let cfg = &self.config;
        let mut errors = Vec::new();
        let hits = match self.services.search(ledger, &claim.text, cfg.k) {
            Ok(s) => s.value,
            Err(e) => {
                errors.push(format!("search failed: {e}"));
                Vec::new()
            }
        };
        let docs: Vec<WebDocument> = hits
            .iter()
            .map(|hit| match self.services.read_page(ledger, &hit.url) {
                Ok(s) => WebDocument::fetched(&hit.url, &hit.title, s.value),
                Err(e) => {
                    errors.push(format!("page {} failed: {e}", hit.url));
                    WebDocument::failed(&hit.url, &hit.title, e.to_string())
                }
            })
            .collect();
        // chunking parameters were validated with the config
        let chunks = chunk_documents(&docs, cfg.chunking()).unwrap_or_default();
        let index = build_index(chunks, cfg.bm25());
        let retrieved = retrieve_scored(&index, &claim.text, cfg.top_m);
        let evidence = ClaimEvidence {
            claim_id: claim.claim_id.clone(),
            query: claim.text.clone(),
            hits,
            documents: docs
                .into_iter()
                .map(|d| DocumentSummary {
                    url: d.url,
                    title: d.title,
                    word_count: d.word_count,
                    fetch_status: d.fetch_status,
                })
                .collect(),
            retrieved: retrieved.clone(),
            errors,
        };
        (evidence, retrieved)
    }
}
