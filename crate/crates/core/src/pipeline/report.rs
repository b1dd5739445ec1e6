//! Run-level aggregation and the plain-text report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::engine::EvaluationRecord;
use super::run::{GroundTruth, ResponseState, ResponseStatus};
use crate::accounting::{LedgerSnapshot, ReconcileReport};
use crate::scoring::{alignment_metrics, AlignmentReport, ClaimTally, Predicted};

pub const UNTAGGED: &str = "untagged";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub responses: usize,
    pub no_claim_responses: usize,
    /// Mean over responses with a defined precision.
    pub mean_precision: Option<f64>,
    pub mean_recall: Option<f64>,
    pub mean_f1: Option<f64>,
    pub tally: ClaimTally,
}

impl GroupSummary {
    fn of(records: &[&EvaluationRecord]) -> Self {
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let mut tally = ClaimTally::default();
        for r in records {
            tally.s += r.tally.s;
            tally.nn += r.tally.nn;
            tally.i += r.tally.i;
            tally.d += r.tally.d;
        }
        Self {
            responses: records.len(),
            no_claim_responses: records.iter().filter(|r| r.score.no_claims).count(),
            mean_precision: mean(records.iter().filter_map(|r| r.score.precision).collect()),
            mean_recall: mean(records.iter().map(|r| r.score.recall).collect()),
            mean_f1: mean(records.iter().map(|r| r.score.f1).collect()),
            tally,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub responses: usize,
    pub complete: usize,
    pub failed: usize,
    pub pending: usize,
    pub overall: GroupSummary,
    pub per_tag: BTreeMap<String, GroupSummary>,
    pub ledger: LedgerSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconcile: Option<ReconcileReport>,
    pub estimated_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentReport>,
}

pub fn aggregate(
    records: &[EvaluationRecord],
    statuses: &[ResponseStatus],
    config: &PipelineConfig,
    ground_truth: Option<&GroundTruth>,
) -> AggregateReport {
    let all: Vec<&EvaluationRecord> = records.iter().collect();
    let mut grouped: BTreeMap<String, Vec<&EvaluationRecord>> = BTreeMap::new();
    for r in records {
        let tag = r.benchmark_tag.clone().unwrap_or_else(|| UNTAGGED.to_string());
        grouped.entry(tag).or_default().push(r);
    }
    let mut ledger = LedgerSnapshot::default();
    for r in records {
        ledger += r.ledger;
    }
    let count = |s: ResponseState| statuses.iter().filter(|r| r.status == s).count();
    let alignment = ground_truth.map(|g| {
        let predicted: Vec<Predicted> = records
            .iter()
            .map(|r| Predicted {
                id: r.id.clone(),
                tally: r.tally,
                f1: r.score.f1,
            })
            .collect();
        alignment_metrics(&predicted, &g.rows)
    });
    AggregateReport {
        responses: statuses.len(),
        complete: count(ResponseState::Complete),
        failed: count(ResponseState::Failed),
        pending: count(ResponseState::Pending),
        overall: GroupSummary::of(&all),
        per_tag: grouped.into_iter().map(|(k, v)| (k, GroupSummary::of(&v))).collect(),
        ledger,
        reconcile: ReconcileReport::combine(records.iter().map(|r| &r.reconcile)),
        estimated_cost: ledger.cost(&config.pricing),
        alignment,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Human-readable rendering of an aggregate report.
pub fn render_text(report: &AggregateReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "responses: {} (complete {}, failed {}, pending {})",
        report.responses, report.complete, report.failed, report.pending
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<20} {:>6} {:>10} {:>10} {:>10} {:>6} {:>6} {:>6} {:>6}",
        "group", "n", "precision", "recall", "f1", "S", "N", "I", "D"
    );
    let mut row = |name: &str, g: &GroupSummary| {
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>10} {:>10} {:>10} {:>6} {:>6} {:>6} {:>6}",
            name,
            g.responses,
            opt(g.mean_precision),
            opt(g.mean_recall),
            opt(g.mean_f1),
            g.tally.s,
            g.tally.nn,
            g.tally.i,
            g.tally.d
        );
    };
    for (tag, g) in &report.per_tag {
        row(tag, g);
    }
    row("overall", &report.overall);

    let l = &report.ledger;
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "calls: extractor {}, verifier {}, search results {}, pages {}, cache hits {}, failures {}",
        l.extractor_calls, l.verifier_calls, l.search_queries, l.pages_fetched, l.cache_hits, l.failures
    );
    let _ = writeln!(
        out,
        "tokens: prompt {}, completion {}; estimated cost {:.4}",
        l.prompt_tokens, l.completion_tokens, report.estimated_cost
    );
    if let Some(r) = &report.reconcile {
        let verdict = if r.consistent() { "matches" } else { "differs from" };
        let _ = writeln!(
            out,
            "budget: observed {} predicted (extractor {}/{}, searches {}/{}, verifier {}/{})",
            verdict,
            r.observed.extractor,
            r.predicted.extractor,
            r.observed.searches,
            r.predicted.searches,
            r.observed.verifier,
            r.predicted.verifier
        );
        for note in &r.notes {
            let _ = writeln!(out, "  note: {note}");
        }
    }
    if let Some(a) = &report.alignment {
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "alignment", "|dK'|", "|dF1|", "|dS|", "|dN|", "|dI|"
        );
        let mut arow = |name: &str, d: &crate::scoring::AlignmentDeltas| {
            let _ = writeln!(
                out,
                "{:<20} {:>8.3} {:>8.4} {:>8.3} {:>8.3} {:>8.3}",
                name, d.k_prime, d.f1, d.supported, d.unsupported, d.irrelevant
            );
        };
        for (tag, d) in &a.per_tag {
            arow(if tag.is_empty() { UNTAGGED } else { tag }, d);
        }
        if let Some(d) = &a.overall {
            arow("overall", d);
        }
        if !a.missing_truth.is_empty() {
            let _ = writeln!(out, "  no ground truth for: {}", a.missing_truth.join(", "));
        }
        if !a.missing_prediction.is_empty() {
            let _ = writeln!(out, "  no prediction for: {}", a.missing_prediction.join(", "));
        }
    }
    out
}
