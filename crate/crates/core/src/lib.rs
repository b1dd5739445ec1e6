//! Claim-level factuality evaluation of long-form model responses.
//!
//! A response is cut into chunks of sentences, each chunk is decomposed into
//! atomic claims with a pre-verification label, confident claims are settled
//! immediately, and the rest are checked against web evidence ranked with
//! BM25. Verdicts are tallied into precision, recall and F1.

pub mod accounting;
pub mod backends;
pub mod error;
pub mod extraction;
pub mod pipeline;
pub mod prompts;
pub mod retrieval;
pub mod scoring;
pub mod segmentation;
pub mod verification;
