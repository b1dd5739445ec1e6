//! End-to-end orchestration: configuration, per-response evaluation, batch
//! runs with resumable persistence, and reports.

mod config;
mod engine;
mod report;
mod run;
mod score;
mod services;

pub use config::{BackendConfig, ConfigSnapshot, PipelineConfig, ReaderKind};
pub use engine::{
    ChunkExtraction, ClaimEvidence, ClaimsStage, Clock, DocumentSummary, EvaluationRecord, Evaluator, EvidenceStage,
    FixedClock, KPrimeSource, ResponseInput, ResponseOutcome, SystemClock, VerdictsStage, SCHEMA_VERSION,
};
pub use report::{aggregate, render_text, AggregateReport, GroupSummary, UNTAGGED};
pub use run::{
    parse_input, read_input, read_jsonl_by_id, read_records, run_batch, GroundTruth, InputWarning, ResponseState,
    ResponseStatus, RunManifest, RunOptions, RunSummary, CLAIMS_FILE, EVIDENCE_FILE, MANIFEST_FILE, RECORDS_FILE,
    VERDICTS_FILE,
};
pub use score::{rescore, RescoreOptions, RescoredResponse};
pub use services::{live_services, mock_services, SCENARIO_FILE};
