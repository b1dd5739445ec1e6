//! Call and token accounting.
//!
//! [`CostLedger`] counts every external call made while evaluating one
//! response. [`predicted_calls`] gives the closed-form call budget of the
//! gated pipeline and of three reference pipelines, and [`reconcile`] checks
//! an observed ledger against the gated pipeline's budget.

use std::fmt;
use std::ops::AddAssign;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Which kind of model call is being recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Extraction,
    Verification,
}

/// Thread-safe counters for one response (or one run).
///
/// Increments are atomic and commutative, so the totals do not depend on
/// how work was scheduled across threads.
#[derive(Debug, Default)]
pub struct CostLedger {
    extractor_calls: AtomicU64,
    verifier_calls: AtomicU64,
    search_queries: AtomicU64,
    pages_fetched: AtomicU64,
    cache_hits: AtomicU64,
    failures: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    wall_time_ms: AtomicU64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_completion(&self, purpose: CallPurpose, prompt_tokens: u64, completion_tokens: u64) {
        match purpose {
            CallPurpose::Extraction => self.extractor_calls.fetch_add(1, Ordering::Relaxed),
            CallPurpose::Verification => self.verifier_calls.fetch_add(1, Ordering::Relaxed),
        };
        self.prompt_tokens.fetch_add(prompt_tokens, Ordering::Relaxed);
        self.completion_tokens.fetch_add(completion_tokens, Ordering::Relaxed);
    }

    /// One search call counts as `k` requested result slots.
    pub fn record_search(&self, k: usize) {
        self.search_queries.fetch_add(k as u64, Ordering::Relaxed);
    }

    pub fn record_page(&self) {
        self.pages_fetched.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_failure(&self) {
        self.failures.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add_wall_time(&self, elapsed: Duration) {
        self.wall_time_ms
            .fetch_add(elapsed.as_millis() as u64, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            extractor_calls: self.extractor_calls.load(Ordering::Relaxed),
            verifier_calls: self.verifier_calls.load(Ordering::Relaxed),
            search_queries: self.search_queries.load(Ordering::Relaxed),
            pages_fetched: self.pages_fetched.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            prompt_tokens: self.prompt_tokens.load(Ordering::Relaxed),
            completion_tokens: self.completion_tokens.load(Ordering::Relaxed),
            wall_time_ms: self.wall_time_ms.load(Ordering::Relaxed),
        }
    }
}

/// Plain-value copy of a [`CostLedger`], as persisted in records and manifests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub extractor_calls: u64,
    pub verifier_calls: u64,
    pub search_queries: u64,
    pub pages_fetched: u64,
    pub cache_hits: u64,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub wall_time_ms: u64,
}

impl LedgerSnapshot {
    pub fn llm_calls(&self) -> u64 {
        self.extractor_calls + self.verifier_calls
    }

    /// Counters that correspond to billable external calls.
    pub fn external_calls(&self) -> u64 {
        self.extractor_calls + self.verifier_calls + self.search_queries + self.pages_fetched
    }

    pub fn cost(&self, pricing: &Pricing) -> f64 {
        self.prompt_tokens as f64 / 1_000_000.0 * pricing.prompt_per_million
            + self.completion_tokens as f64 / 1_000_000.0 * pricing.completion_per_million
    }
}

impl AddAssign for LedgerSnapshot {
    fn add_assign(&mut self, o: Self) {
        self.extractor_calls += o.extractor_calls;
        self.verifier_calls += o.verifier_calls;
        self.search_queries += o.search_queries;
        self.pages_fetched += o.pages_fetched;
        self.cache_hits += o.cache_hits;
        self.failures += o.failures;
        self.prompt_tokens += o.prompt_tokens;
        self.completion_tokens += o.completion_tokens;
        self.wall_time_ms += o.wall_time_ms;
    }
}

impl std::iter::Sum for LedgerSnapshot {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut acc, x| {
            acc += x;
            acc
        })
    }
}

/// Per-million-token prices. Monetary cost is always derived from token
/// totals, never stored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pricing {
    pub prompt_per_million: f64,
    pub completion_per_million: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    FastFact,
    Safe,
    VeriScore,
    FactScore,
}

impl FromStr for Pipeline {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fastfact" => Ok(Pipeline::FastFact),
            "safe" => Ok(Pipeline::Safe),
            "veriscore" => Ok(Pipeline::VeriScore),
            "factscore" => Ok(Pipeline::FactScore),
            other => Err(ConfigError::new("pipeline", format!("unknown pipeline `{other}`"))),
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::FastFact => "fastfact",
            Pipeline::Safe => "safe",
            Pipeline::VeriScore => "veriscore",
            Pipeline::FactScore => "factscore",
        })
    }
}

/// Size parameters of one evaluated response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// Sentences in the response.
    pub n: u64,
    /// Atomic claims extracted (after exact-duplicate removal).
    pub m: u64,
    /// Search results fetched per searched claim.
    pub k: u64,
    /// Fraction of claims that fail the confidence gate.
    pub p: f64,
    /// Extraction stride in sentences.
    pub w: u64,
}

impl PipelineParams {
    /// Parameters measured from a finished evaluation. `p` is emergent:
    /// the share of claims that were not gated.
    pub fn measured(n: u64, m: u64, k: u64, non_gated: u64, w: u64) -> Self {
        let p = if m == 0 { 0.0 } else { non_gated as f64 / m as f64 };
        Self { n, m, k, p, w }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(ConfigError::new("p", "must lie in [0, 1]"));
        }
        if self.w == 0 {
            return Err(ConfigError::new("w", "must be at least 1"));
        }
        if self.k == 0 {
            return Err(ConfigError::new("k", "must be at least 1"));
        }
        Ok(())
    }

    /// ceil(p·M), treating products within 1e-9 of an integer as exact.
    pub fn searched_claims(&self) -> u64 {
        let pm = self.p * self.m as f64;
        let nearest = pm.round();
        if (pm - nearest).abs() < 1e-9 {
            nearest as u64
        } else {
            pm.ceil() as u64
        }
    }
}

/// Calls needed to evaluate one response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallBudget {
    pub extractor: u64,
    pub searches: u64,
    pub verifier: u64,
    pub total_llm: u64,
}

impl AddAssign for CallBudget {
    fn add_assign(&mut self, o: Self) {
        self.extractor += o.extractor;
        self.searches += o.searches;
        self.verifier += o.verifier;
        self.total_llm += o.total_llm;
    }
}

pub fn predicted_calls(pipeline: Pipeline, params: &PipelineParams) -> Result<CallBudget, ConfigError> {
    params.validate()?;
    let PipelineParams { n, m, k, w, .. } = *params;
    Ok(match pipeline {
        Pipeline::FactScore => CallBudget {
            extractor: n,
            searches: 0,
            verifier: m,
            total_llm: n + m,
        },
        Pipeline::VeriScore => CallBudget {
            extractor: n,
            searches: k * m,
            verifier: m,
            total_llm: n + m,
        },
        // query generation (+kM) is counted on the extractor side
        Pipeline::Safe => CallBudget {
            extractor: n + 2 * m + k * m,
            searches: k * m,
            verifier: m,
            total_llm: n + (3 + k) * m,
        },
        Pipeline::FastFact => {
            let extractor = n.div_ceil(w);
            let searched = params.searched_claims();
            CallBudget {
                extractor,
                searches: searched * k,
                verifier: searched,
                total_llm: extractor + searched,
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mismatch {
    pub counter: String,
    pub predicted: u64,
    pub observed: u64,
}

/// Observed versus predicted call counts for the gated pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconcileReport {
    pub predicted: CallBudget,
    pub observed: CallBudget,
    pub mismatches: Vec<Mismatch>,
    /// Exact agreement is only required when no cache served any call and no
    /// backend call failed.
    pub exact_required: bool,
    pub cache_mode: bool,
    pub failures: u64,
    pub pages_fetched: u64,
    /// k·ceil(p·M): pages that would be read if every search returned k hits
    /// and every page fetch succeeded.
    pub pages_expected: u64,
    pub notes: Vec<String>,
}

impl ReconcileReport {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }

    /// Sums several per-response reports into one run-level report.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a ReconcileReport>) -> Option<ReconcileReport> {
        let mut iter = reports.into_iter();
        let mut acc = iter.next()?.clone();
        for r in iter {
            acc.predicted += r.predicted;
            acc.observed += r.observed;
            acc.exact_required &= r.exact_required;
            acc.cache_mode |= r.cache_mode;
            acc.failures += r.failures;
            acc.pages_fetched += r.pages_fetched;
            acc.pages_expected += r.pages_expected;
        }
        acc.mismatches = mismatches(&acc.predicted, &acc.observed);
        acc.notes = summary_notes(&acc);
        Some(acc)
    }
}

fn mismatches(predicted: &CallBudget, observed: &CallBudget) -> Vec<Mismatch> {
    [
        ("extractor_calls", predicted.extractor, observed.extractor),
        ("search_queries", predicted.searches, observed.searches),
        ("verifier_calls", predicted.verifier, observed.verifier),
    ]
    .into_iter()
    .filter(|(_, p, o)| p != o)
    .map(|(c, p, o)| Mismatch {
        counter: c.to_string(),
        predicted: p,
        observed: o,
    })
    .collect()
}

fn summary_notes(r: &ReconcileReport) -> Vec<String> {
    let mut notes = Vec::new();
    if r.cache_mode {
        notes.push("cache served some calls; external counters exclude cache hits".to_string());
    }
    if r.failures > 0 {
        notes.push(format!("{} backend call(s) failed", r.failures));
    }
    if r.pages_fetched < r.pages_expected {
        notes.push(format!(
            "{} of {} expected pages fetched",
            r.pages_fetched, r.pages_expected
        ));
    }
    notes
}

/// Compares an observed ledger with the gated pipeline's predicted budget.
pub fn reconcile(ledger: &LedgerSnapshot, params: &PipelineParams) -> Result<ReconcileReport, ConfigError> {
    let predicted = predicted_calls(Pipeline::FastFact, params)?;
    let observed = CallBudget {
        extractor: ledger.extractor_calls,
        searches: ledger.search_queries,
        verifier: ledger.verifier_calls,
        total_llm: ledger.extractor_calls + ledger.verifier_calls,
    };
    let mut report = ReconcileReport {
        predicted,
        observed,
        mismatches: mismatches(&predicted, &observed),
        exact_required: ledger.cache_hits == 0 && ledger.failures == 0,
        cache_mode: ledger.cache_hits > 0,
        failures: ledger.failures,
        pages_fetched: ledger.pages_fetched,
        pages_expected: predicted.searches,
        notes: Vec::new(),
    };
    report.notes = summary_notes(&report);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: u64, m: u64, k: u64, p: f64, w: u64) -> PipelineParams {
        PipelineParams { n, m, k, p, w }
    }

    #[test]
    fn fastfact_example() {
        let b = predicted_calls(Pipeline::FastFact, &params(30, 20, 5, 0.5, 10)).unwrap();
        assert_eq!(
            b,
            CallBudget {
                extractor: 3,
                searches: 50,
                verifier: 10,
                total_llm: 13
            }
        );
    }

    #[test]
    fn safe_example() {
        let b = predicted_calls(Pipeline::Safe, &params(10, 5, 1, 1.0, 1)).unwrap();
        assert_eq!(b.total_llm, 30);
        assert_eq!(b.extractor + b.verifier, b.total_llm);
    }

    #[test]
    fn full_gating_means_no_search() {
        let b = predicted_calls(Pipeline::FastFact, &params(12, 9, 10, 0.0, 5)).unwrap();
        assert_eq!((b.searches, b.verifier), (0, 0));
        assert_eq!(b.extractor, 3);
    }

    #[test]
    fn fractional_terms_round_up_but_float_noise_does_not() {
        assert_eq!(params(1, 3, 1, 0.5, 1).searched_claims(), 2);
        // 0.1 * 30 = 3.0000000000000004 in binary floating point
        assert_eq!(params(1, 30, 1, 0.1, 1).searched_claims(), 3);
        assert_eq!(PipelineParams::measured(5, 7, 3, 3, 2).searched_claims(), 3);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(predicted_calls(Pipeline::FastFact, &params(1, 1, 1, 1.5, 1)).is_err());
        assert!(predicted_calls(Pipeline::FastFact, &params(1, 1, 0, 0.5, 1)).is_err());
        assert!(predicted_calls(Pipeline::FastFact, &params(1, 1, 1, 0.5, 0)).is_err());
        assert!("bm25".parse::<Pipeline>().is_err());
        assert_eq!("SAFE".parse::<Pipeline>().unwrap(), Pipeline::Safe);
    }

    #[test]
    fn reconcile_flags_mismatch_and_notes() {
        let ledger = LedgerSnapshot {
            extractor_calls: 3,
            verifier_calls: 10,
            search_queries: 50,
            pages_fetched: 48,
            failures: 2,
            ..Default::default()
        };
        let r = reconcile(&ledger, &params(30, 20, 5, 0.5, 10)).unwrap();
        assert!(r.consistent());
        assert!(!r.exact_required);
        assert!(r.notes.iter().any(|n| n.contains("48 of 50")));

        let bad = LedgerSnapshot {
            verifier_calls: 9,
            ..ledger
        };
        let r = reconcile(&bad, &params(30, 20, 5, 0.5, 10)).unwrap();
        assert_eq!(r.mismatches.len(), 1);
        assert_eq!(r.mismatches[0].counter, "verifier_calls");
    }

    #[test]
    fn ledger_counts_and_cost() {
        let l = CostLedger::new();
        l.record_completion(CallPurpose::Extraction, 100, 20);
        l.record_completion(CallPurpose::Verification, 1000, 80);
        l.record_search(5);
        l.record_page();
        l.record_failure();
        let s = l.snapshot();
        assert_eq!((s.extractor_calls, s.verifier_calls, s.search_queries), (1, 1, 5));
        assert_eq!((s.prompt_tokens, s.completion_tokens), (1100, 100));
        let cost = s.cost(&Pricing {
            prompt_per_million: 1.0,
            completion_per_million: 10.0,
        });
        assert!((cost - (0.0011 + 0.001)).abs() < 1e-12);
    }
}
