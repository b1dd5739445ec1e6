//! Evidence-grounded verification and the mapping of every claim to a final
//! scoring category.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::accounting::{CallPurpose, CostLedger};
use crate::backends::{CompletionRequest, Services};
use crate::error::VerificationError;
use crate::extraction::{normalize_label, AtomicClaim, PreVerificationLabel};
use crate::prompts;
use crate::retrieval::EvidenceChunk;

/// Evidence block sent when retrieval produced nothing.
pub const NO_EVIDENCE: &str = "No evidence retrieved.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationLabel {
    Supported,
    Refuted,
    ConflictingEvidence,
    NotEnoughEvidence,
    Unverifiable,
}

impl VerificationLabel {
    pub const ALL: [VerificationLabel; 5] = [
        VerificationLabel::Supported,
        VerificationLabel::Refuted,
        VerificationLabel::ConflictingEvidence,
        VerificationLabel::NotEnoughEvidence,
        VerificationLabel::Unverifiable,
    ];

    pub fn as_prompt_str(self) -> &'static str {
        match self {
            VerificationLabel::Supported => "supported",
            VerificationLabel::Refuted => "refuted",
            VerificationLabel::ConflictingEvidence => "conflicting evidence",
            VerificationLabel::NotEnoughEvidence => "not enough evidence",
            VerificationLabel::Unverifiable => "unverifiable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = normalize_label(s);
        Self::ALL.into_iter().find(|l| l.as_prompt_str() == norm)
    }
}

impl fmt::Display for VerificationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_prompt_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalCategory {
    Supported,
    NonSupported,
    Irrelevant,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Gated,
    EvidenceVerified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub source_url: String,
    pub chunk_index: usize,
}

impl From<&EvidenceChunk> for EvidenceRef {
    fn from(c: &EvidenceChunk) -> Self {
        Self {
            source_url: c.source_url.clone(),
            chunk_index: c.chunk_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedClaim {
    pub claim: AtomicClaim,
    pub route: Route,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_label: Option<VerificationLabel>,
    #[serde(rename = "final")]
    pub final_category: FinalCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    #[serde(default)]
    pub evidence_used: Vec<EvidenceRef>,
    /// Set when the verdict is a fallback after a backend or parse failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl VerifiedClaim {
    /// Verdict for a claim that passed the confidence gate.
    pub fn gated(claim: AtomicClaim) -> Result<Self, VerificationError> {
        let final_category = map_to_final(Route::Gated, claim.pre_label, None)?;
        Ok(Self {
            claim,
            route: Route::Gated,
            verification_label: None,
            final_category,
            reasoning: None,
            evidence_used: Vec::new(),
            error: None,
        })
    }

    /// Verdict from a parsed verifier label.
    pub fn verified(
        claim: AtomicClaim,
        label: VerificationLabel,
        reasoning: String,
        evidence: &[EvidenceChunk],
    ) -> Self {
        Self {
            final_category: map_evidence_label(label),
            claim,
            route: Route::EvidenceVerified,
            verification_label: Some(label),
            reasoning: Some(reasoning),
            evidence_used: evidence.iter().map(EvidenceRef::from).collect(),
            error: None,
        }
    }

    /// Conservative fallback: counts the claim as lacking evidence.
    pub fn failed(claim: AtomicClaim, error: String, evidence: &[EvidenceChunk]) -> Self {
        Self {
            claim,
            route: Route::EvidenceVerified,
            verification_label: Some(VerificationLabel::NotEnoughEvidence),
            final_category: FinalCategory::NonSupported,
            reasoning: None,
            evidence_used: evidence.iter().map(EvidenceRef::from).collect(),
            error: Some(error),
        }
    }
}

/// Serializes evidence as numbered `Evidence i` blocks with source title and
/// content, separated by blank lines.
pub fn format_evidence(evidence: &[EvidenceChunk]) -> String {
    if evidence.is_empty() {
        return NO_EVIDENCE.to_string();
    }
    evidence
        .iter()
        .enumerate()
        .map(|(i, e)| {
            format!(
                "Evidence {}\nSource Title: {}\nContent: {}",
                i + 1,
                e.source_title.trim(),
                e.text.trim()
            )
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn render_verification_prompt(claim_text: &str, evidence: &[EvidenceChunk]) -> String {
    prompts::verification(claim_text.trim(), &format_evidence(evidence))
}

static LABEL_SPAN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"###([^#]*)###").unwrap());
static DECISION_TAIL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\s*decision\s*:?\s*$").unwrap());
static REASONING_HEAD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*reasoning\s*:\s*").unwrap());

/// Finds the last `###label###` span that names a verification label and
/// returns the text before it as reasoning.
pub fn parse_verification_output(raw: &str) -> Result<(String, VerificationLabel), VerificationError> {
    let (span, label) = LABEL_SPAN
        .captures_iter(raw)
        .filter_map(|c| {
            let label = VerificationLabel::parse(&c[1])?;
            Some((c.get(0).unwrap(), label))
        })
        .last()
        .ok_or(VerificationError::NoLabel)?;
    let before = &raw[..span.start()];
    let before = DECISION_TAIL.replace(before, "");
    let reasoning = REASONING_HEAD.replace(&before, "").trim().to_string();
    Ok((reasoning, label))
}

fn map_evidence_label(label: VerificationLabel) -> FinalCategory {
    match label {
        VerificationLabel::Supported => FinalCategory::Supported,
        VerificationLabel::Refuted | VerificationLabel::ConflictingEvidence | VerificationLabel::NotEnoughEvidence => {
            FinalCategory::NonSupported
        }
        VerificationLabel::Unverifiable => FinalCategory::Dropped,
    }
}

pub fn map_to_final(
    route: Route,
    pre_label: PreVerificationLabel,
    verification_label: Option<VerificationLabel>,
) -> Result<FinalCategory, VerificationError> {
    match (route, verification_label) {
        (Route::Gated, None) => match pre_label {
            PreVerificationLabel::Supported => Ok(FinalCategory::Supported),
            PreVerificationLabel::NonSupported => Ok(FinalCategory::NonSupported),
            PreVerificationLabel::Irrelevant => Ok(FinalCategory::Irrelevant),
            other => Err(VerificationError::InvariantViolation(other.to_string())),
        },
        (Route::Gated, Some(l)) => Err(VerificationError::InvariantViolation(format!(
            "gated claim carries verification label `{l}`"
        ))),
        (Route::EvidenceVerified, Some(l)) => Ok(map_evidence_label(l)),
        (Route::EvidenceVerified, None) => Err(VerificationError::InvariantViolation(
            "evidence route without a verification label".into(),
        )),
    }
}

/// Calls the verifier for one claim and maps its answer. Backend and parse
/// failures yield the conservative fallback verdict instead of an error.
pub fn verify_claim(
    services: &Services,
    ledger: &CostLedger,
    claim: AtomicClaim,
    evidence: &[EvidenceChunk],
    max_tokens: u32,
) -> VerifiedClaim {
    let request = CompletionRequest::new(render_verification_prompt(&claim.text, evidence)).with_max_tokens(max_tokens);
    let served = match services.complete(ledger, CallPurpose::Verification, &request) {
        Ok(s) => s,
        Err(e) => return VerifiedClaim::failed(claim, format!("verifier call failed: {e}"), evidence),
    };
    match parse_verification_output(&served.value.text) {
        Ok((reasoning, label)) => VerifiedClaim::verified(claim, label, reasoning, evidence),
        Err(e) => VerifiedClaim::failed(claim, e.to_string(), evidence),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KATAHDIN: &str = " The claim states that Mount Katahdin is 6,288.2 feet tall. However, Evidence 1 and 2 explicitly state that Katahdin \"stands at 5,269 feet tall\", refuteing the claim. Evidence 3 and 5 describe the mountain’s topography but do not mention its height, and Evidence 4 discusses elevation gain on trails but does not provide the summit’s total height. None of the evidence supports the claimed height of 6,288.2 feet. Since the explicit height provided in the search results (5,269 feet) refutes the claim and no other evidence supports the claimed height, the claim is refuted.\nDecision: ###refuted###";

    const METLIFE: &str = " The claim states that the 2026 FIFA World Cup final will be held at MetLife Stadium in New Jersey, USA. The content from the evidence confirms this. Evidence 1, 2, 3, 4, and 5 directly mention that FIFA announced MetLife Stadium in East Rutherford, New Jersey, as the venue for the final on July 19, 2026. There is no contradictory evidence in the search results, and all sources consistently support the claim. The evidence is specific, authoritative (e.g., ESPN, FIFA announcements, Wikipedia), and unambiguous. No part of the claim is challenged or left unverified.\nDecision: ###supported###";

    fn ev(i: usize) -> EvidenceChunk {
        EvidenceChunk {
            source_url: format!("https://s{i}.example"),
            source_title: format!("Title {i}"),
            chunk_index: i,
            text: format!("Body {i}."),
            first_sentence: 0,
            last_sentence: 0,
        }
    }

    fn claim(label: PreVerificationLabel) -> AtomicClaim {
        AtomicClaim {
            claim_id: "r/c0/l1".into(),
            text: "Something holds.".into(),
            source_chunk: 0,
            source_line: 1,
            pre_label: label,
            confidence: Some(0.99),
            gated: true,
        }
    }

    #[test]
    fn worked_examples_parse() {
        let (reasoning, label) = parse_verification_output(KATAHDIN).unwrap();
        assert_eq!(label, VerificationLabel::Refuted);
        assert!(reasoning.starts_with("The claim states that Mount Katahdin"));
        assert!(reasoning.ends_with("the claim is refuted."));
        assert_eq!(
            parse_verification_output(METLIFE).unwrap().1,
            VerificationLabel::Supported
        );
    }

    #[test]
    fn last_label_wins_and_junk_fails() {
        let raw = "Unlike ###supported### in the example, here\nDecision: ###Conflicting  Evidence###\n";
        let (reasoning, label) = parse_verification_output(raw).unwrap();
        assert_eq!(label, VerificationLabel::ConflictingEvidence);
        assert_eq!(reasoning, "Unlike ###supported### in the example, here");
        let raw = "Decision: ###unverifiable### trailing ###banana###";
        assert_eq!(
            parse_verification_output(raw).unwrap().1,
            VerificationLabel::Unverifiable
        );
        assert!(matches!(
            parse_verification_output("no markers here"),
            Err(VerificationError::NoLabel)
        ));
    }

    #[test]
    fn prompt_layout() {
        let p = render_verification_prompt("Claim X.", &(1..=10).map(ev).collect::<Vec<_>>());
        assert!(p.contains("Searched Results: Evidence 1\nSource Title: Title 1\nContent: Body 1.\n\nEvidence 2\n"));
        assert!(p.contains("Evidence 10\nSource Title: Title 10"));
        assert!(p.contains("Claim: Claim X.\n"));
        assert!(p.ends_with("Reasoning:"));
        let empty = render_verification_prompt("Claim X.", &[]);
        assert!(empty.contains(&format!("Searched Results: {NO_EVIDENCE}")));
        assert_eq!(empty, render_verification_prompt("Claim X.", &[]));
    }

    #[test]
    fn mapping_table() {
        use FinalCategory as F;
        use VerificationLabel as V;
        let ev = Route::EvidenceVerified;
        let any = PreVerificationLabel::Unsure;
        assert_eq!(
            map_to_final(ev, any, Some(V::ConflictingEvidence)).unwrap(),
            F::NonSupported
        );
        assert_eq!(map_to_final(ev, any, Some(V::Unverifiable)).unwrap(), F::Dropped);
        assert_eq!(map_to_final(ev, any, Some(V::Supported)).unwrap(), F::Supported);
        assert_eq!(map_to_final(ev, any, Some(V::Refuted)).unwrap(), F::NonSupported);
        assert_eq!(
            map_to_final(ev, any, Some(V::NotEnoughEvidence)).unwrap(),
            F::NonSupported
        );
        let g = Route::Gated;
        assert_eq!(
            map_to_final(g, PreVerificationLabel::Supported, None).unwrap(),
            F::Supported
        );
        assert_eq!(
            map_to_final(g, PreVerificationLabel::NonSupported, None).unwrap(),
            F::NonSupported
        );
        assert_eq!(
            map_to_final(g, PreVerificationLabel::Irrelevant, None).unwrap(),
            F::Irrelevant
        );
        assert!(map_to_final(g, PreVerificationLabel::LikelySupported, None).is_err());
        assert!(map_to_final(g, PreVerificationLabel::Supported, Some(V::Supported)).is_err());
        assert!(map_to_final(ev, any, None).is_err());
    }

    #[test]
    fn every_combination_respects_invariants() {
        for pre in PreVerificationLabel::ALL {
            for label in VerificationLabel::ALL {
                let f = map_to_final(Route::EvidenceVerified, pre, Some(label)).unwrap();
                assert_eq!(f == FinalCategory::Dropped, label == VerificationLabel::Unverifiable);
            }
            assert_eq!(map_to_final(Route::Gated, pre, None).is_ok(), pre.is_definite());
        }
    }

    #[test]
    fn fallback_verdict() {
        let v = VerifiedClaim::failed(claim(PreVerificationLabel::Unsure), "boom".into(), &[ev(1)]);
        assert_eq!(v.final_category, FinalCategory::NonSupported);
        assert_eq!(v.verification_label, Some(VerificationLabel::NotEnoughEvidence));
        assert_eq!(v.evidence_used.len(), 1);
        let g = VerifiedClaim::gated(claim(PreVerificationLabel::Irrelevant)).unwrap();
        assert_eq!(g.final_category, FinalCategory::Irrelevant);
        let json = serde_json::to_value(&g).unwrap();
        assert_eq!(json["final"], "irrelevant");
        assert_eq!(json["route"], "gated");
    }
}
