//! Claim extraction with reference-free pre-verification.
//!
//! The extractor sees one chunk of the response and answers with one claim
//! per line, each followed by a `###LABEL###` pre-verification verdict. A
//! claim skips evidence search only when its label is definite and the
//! model's probability for the label tokens exceeds a threshold.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::backends::TokenLogprob;
use crate::error::{ConfigError, ExtractionError};
use crate::prompts;
use crate::segmentation::Chunk;

/// Default confidence threshold for the gate.
pub const DEFAULT_THETA: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreVerificationLabel {
    Irrelevant,
    Supported,
    NonSupported,
    LikelySupported,
    LikelyNonSupported,
    Unsure,
}

impl PreVerificationLabel {
    pub const ALL: [PreVerificationLabel; 6] = [
        PreVerificationLabel::Irrelevant,
        PreVerificationLabel::Supported,
        PreVerificationLabel::NonSupported,
        PreVerificationLabel::LikelySupported,
        PreVerificationLabel::LikelyNonSupported,
        PreVerificationLabel::Unsure,
    ];

    /// Labels that express a committed judgement and may skip verification.
    pub fn is_definite(self) -> bool {
        matches!(
            self,
            PreVerificationLabel::Supported | PreVerificationLabel::NonSupported | PreVerificationLabel::Irrelevant
        )
    }

    /// The spelling used in the extraction prompt.
    pub fn as_prompt_str(self) -> &'static str {
        match self {
            PreVerificationLabel::Irrelevant => "IRRELEVANT",
            PreVerificationLabel::Supported => "SUPPORTED",
            PreVerificationLabel::NonSupported => "NON-SUPPORTED",
            PreVerificationLabel::LikelySupported => "LIKELY SUPPORTED",
            PreVerificationLabel::LikelyNonSupported => "LIKELY NON-SUPPORTED",
            PreVerificationLabel::Unsure => "UNSURE",
        }
    }

    /// Case- and whitespace-insensitive match; `-` and `_` count as spaces.
    pub fn parse(s: &str) -> Option<Self> {
        match normalize_label(s).as_str() {
            "irrelevant" => Some(PreVerificationLabel::Irrelevant),
            "supported" => Some(PreVerificationLabel::Supported),
            "non supported" => Some(PreVerificationLabel::NonSupported),
            "likely supported" => Some(PreVerificationLabel::LikelySupported),
            "likely non supported" => Some(PreVerificationLabel::LikelyNonSupported),
            "unsure" => Some(PreVerificationLabel::Unsure),
            _ => None,
        }
    }
}

impl fmt::Display for PreVerificationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_prompt_str())
    }
}

pub(crate) fn normalize_label(s: &str) -> String {
    s.replace(['-', '_'], " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicClaim {
    pub claim_id: String,
    pub text: String,
    pub source_chunk: usize,
    /// 1-based line of the claim in the extractor output.
    pub source_line: usize,
    pub pre_label: PreVerificationLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// True when the claim skips search and verification.
    pub gated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseWarning {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionOutcome {
    pub claims: Vec<AtomicClaim>,
    pub parse_warnings: Vec<ParseWarning>,
    pub raw_output: String,
    /// Problems that affect confidence but not the claim list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl ExtractionOutcome {
    /// Assigns stable claim ids from the response id, chunk index and line.
    pub fn with_origin(mut self, response_id: &str, chunk_index: usize) -> Self {
        for c in &mut self.claims {
            c.source_chunk = chunk_index;
            c.claim_id = claim_id(response_id, chunk_index, c.source_line);
        }
        self
    }
}

pub fn claim_id(response_id: &str, chunk_index: usize, line: usize) -> String {
    format!("{response_id}/c{chunk_index}/l{line}")
}

pub fn render_extraction_prompt(question: &str, chunk: &Chunk) -> String {
    prompts::extraction(question, &chunk.text)
}

static CLAIM_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*•]\s*)?(?P<text>.*?)\s*###(?P<label>[^#]*)###\s*$").unwrap());

fn is_no_claim_line(line: &str) -> bool {
    let t = line.trim().trim_matches(|c| c == '"' || c == '\'');
    t.trim_end_matches('.').eq_ignore_ascii_case("no verifiable claim")
        || t.trim_end_matches('.').eq_ignore_ascii_case("no verifiable claims")
}

fn has_bullet(line: &str) -> bool {
    matches!(line.trim_start().chars().next(), Some('-' | '*' | '•'))
}

/// Parses one extractor completion.
///
/// Every non-blank line other than `No verifiable claim.` is a candidate; each
/// candidate becomes either a claim or a warning, never both. Confidences are
/// attached when `token_logprobs` is given and lines up with `raw`.
pub fn parse_extraction_output(
    raw: &str,
    token_logprobs: Option<&[TokenLogprob]>,
) -> Result<ExtractionOutcome, ExtractionError> {
    if raw.trim().is_empty() {
        return Err(ExtractionError::EmptyOutput);
    }
    let offsets = token_logprobs.and_then(|t| token_offsets(raw, t));
    let mut notes = Vec::new();
    if token_logprobs.is_some() && offsets.is_none() {
        notes.push("token logprobs do not reproduce the output; confidences omitted".to_string());
    }

    let mut claims = Vec::new();
    let mut warnings = Vec::new();
    let mut line_start = 0;
    for (idx, line_with_nl) in raw.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let start = line_start;
        line_start += line_with_nl.len();
        let line = line_with_nl.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || is_no_claim_line(line) {
            continue;
        }
        let Some(caps) = CLAIM_LINE.captures(line) else {
            warnings.push(ParseWarning {
                line: line_no,
                reason: "no ###LABEL### marker".into(),
            });
            continue;
        };
        if !has_bullet(line) {
            warnings.push(ParseWarning {
                line: line_no,
                reason: "claim line does not start with '-'".into(),
            });
            continue;
        }
        let text = caps.name("text").map_or("", |m| m.as_str()).trim();
        let label_match = caps.name("label").unwrap();
        if text.is_empty() {
            warnings.push(ParseWarning {
                line: line_no,
                reason: "empty claim text".into(),
            });
            continue;
        }
        if text.contains("###") {
            warnings.push(ParseWarning {
                line: line_no,
                reason: "marker collision: claim text contains '###'".into(),
            });
            continue;
        }
        let Some(label) = PreVerificationLabel::parse(label_match.as_str()) else {
            warnings.push(ParseWarning {
                line: line_no,
                reason: format!("unknown label `{}`", label_match.as_str().trim()),
            });
            continue;
        };
        let confidence = match (&offsets, token_logprobs) {
            (Some(offs), Some(tokens)) => {
                let inner = label_match.as_str();
                let lead = inner.len() - inner.trim_start().len();
                let a = start + label_match.start() + lead;
                let b = a + inner.trim().len();
                locate_label_tokens(offs, a..b).and_then(|r| compute_label_confidence(tokens, r))
            }
            _ => None,
        };
        claims.push(AtomicClaim {
            claim_id: claim_id("", 0, line_no),
            text: text.to_string(),
            source_chunk: 0,
            source_line: line_no,
            pre_label: label,
            confidence,
            gated: false,
        });
    }
    Ok(ExtractionOutcome {
        claims,
        parse_warnings: warnings,
        raw_output: raw.to_string(),
        notes,
    })
}

/// Byte range of each token in `text`, or `None` when the tokens do not
/// concatenate to `text`.
fn token_offsets(text: &str, tokens: &[TokenLogprob]) -> Option<Vec<Range<usize>>> {
    let mut pos = 0;
    let mut out = Vec::with_capacity(tokens.len());
    for t in tokens {
        if !text[pos..].starts_with(t.token.as_str()) {
            return None;
        }
        out.push(pos..pos + t.token.len());
        pos += t.token.len();
    }
    (pos == text.len()).then_some(out)
}

/// Indices of the tokens overlapping the byte range `label`.
pub fn locate_label_tokens(token_ranges: &[Range<usize>], label: Range<usize>) -> Option<Range<usize>> {
    if label.is_empty() {
        return None;
    }
    let first = token_ranges
        .iter()
        .position(|r| r.end > label.start && r.start < label.end)?;
    let last = token_ranges
        .iter()
        .rposition(|r| r.end > label.start && r.start < label.end)?;
    Some(first..last + 1)
}

/// Geometric-mean probability of the label tokens: `exp(mean(logprob))`.
/// For a single-token label this is the token's probability.
pub fn compute_label_confidence(tokens: &[TokenLogprob], label_tokens: Range<usize>) -> Option<f64> {
    if label_tokens.is_empty() || label_tokens.end > tokens.len() {
        return None;
    }
    let slice = &tokens[label_tokens];
    let mean = slice.iter().map(|t| t.logprob).sum::<f64>() / slice.len() as f64;
    if !mean.is_finite() {
        return None;
    }
    Some(mean.exp().clamp(0.0, 1.0))
}

pub fn validate_theta(theta: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(ConfigError::new("theta", "must lie in [0, 1]"))
    }
}

/// True iff the label is definite and its confidence is strictly above
/// `theta`. A claim without a measured confidence never passes.
pub fn passes_confidence_gate(claim: &AtomicClaim, theta: f64) -> Result<bool, ConfigError> {
    validate_theta(theta)?;
    Ok(claim.pre_label.is_definite() && claim.confidence.is_some_and(|c| c > theta))
}

/// Sets `gated` on every claim and returns how many passed.
pub fn apply_gate(claims: &mut [AtomicClaim], theta: f64) -> Result<usize, ConfigError> {
    validate_theta(theta)?;
    let mut n = 0;
    for c in claims.iter_mut() {
        c.gated = passes_confidence_gate(c, theta)?;
        n += usize::from(c.gated);
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateClaim {
    pub claim_id: String,
    pub duplicate_of: String,
    pub text: String,
}

/// Drops claims whose text exactly repeats an earlier claim of the same
/// response.
pub fn dedup_claims(claims: Vec<AtomicClaim>) -> (Vec<AtomicClaim>, Vec<DuplicateClaim>) {
    let mut first: HashMap<String, String> = HashMap::new();
    let mut kept = Vec::with_capacity(claims.len());
    let mut dups = Vec::new();
    for c in claims {
        match first.get(&c.text) {
            Some(orig) => dups.push(DuplicateClaim {
                claim_id: c.claim_id,
                duplicate_of: orig.clone(),
                text: c.text,
            }),
            None => {
                first.insert(c.text.clone(), c.claim_id.clone());
                kept.push(c);
            }
        }
    }
    (kept, dups)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str, lp: f64) -> TokenLogprob {
        TokenLogprob {
            token: s.to_string(),
            logprob: lp,
        }
    }

    fn claim(label: PreVerificationLabel, confidence: Option<f64>) -> AtomicClaim {
        AtomicClaim {
            claim_id: "r/c0/l1".into(),
            text: "x".into(),
            source_chunk: 0,
            source_line: 1,
            pre_label: label,
            confidence,
            gated: false,
        }
    }

    #[test]
    fn confidence_arithmetic() {
        assert_eq!(compute_label_confidence(&[tok("A", 0.0)], 0..1), Some(1.0));
        let c = compute_label_confidence(&[tok("A", -0.10536)], 0..1).unwrap();
        assert!((c - 0.9).abs() < 1e-4, "{c}");
        let c = compute_label_confidence(&[tok("x", -9.0), tok("A", -0.2), tok("B", -0.4)], 1..3).unwrap();
        assert!((c - (-0.3f64).exp()).abs() < 1e-15);
        assert!((c - 0.7408).abs() < 1e-4);
        assert_eq!(compute_label_confidence(&[tok("A", 0.0)], 0..0), None);
        assert_eq!(compute_label_confidence(&[tok("A", 0.0)], 0..2), None);
    }

    #[test]
    fn gate_examples() {
        use PreVerificationLabel::*;
        assert!(passes_confidence_gate(&claim(Supported, Some(0.95)), 0.9).unwrap());
        assert!(!passes_confidence_gate(&claim(Unsure, Some(0.99)), 0.9).unwrap());
        assert!(!passes_confidence_gate(&claim(Supported, None), 0.9).unwrap());
        assert!(!passes_confidence_gate(&claim(Supported, Some(1.0)), 1.0).unwrap());
        assert!(passes_confidence_gate(&claim(Irrelevant, Some(0.01)), 0.0).unwrap());
        assert!(passes_confidence_gate(&claim(Supported, Some(0.5)), 1.5).is_err());
        assert!(passes_confidence_gate(&claim(Supported, Some(0.5)), -0.1).is_err());
    }

    #[test]
    fn parses_prompt_example_line() {
        let raw = "- Taylor Swift co-wrote \"Beautiful Ghosts\" with Andrew Lloyd Webber. ###LIKELY SUPPORTED###";
        let out = parse_extraction_output(raw, None).unwrap();
        assert_eq!(out.claims.len(), 1);
        assert_eq!(out.claims[0].pre_label, PreVerificationLabel::LikelySupported);
        assert_eq!(
            out.claims[0].text,
            "Taylor Swift co-wrote \"Beautiful Ghosts\" with Andrew Lloyd Webber."
        );
        assert!(out.parse_warnings.is_empty());
    }

    #[test]
    fn no_claim_and_garbage() {
        let out = parse_extraction_output("No verifiable claim.", None).unwrap();
        assert!(out.claims.is_empty() && out.parse_warnings.is_empty());
        let out = parse_extraction_output("Some text without markers", None).unwrap();
        assert!(out.claims.is_empty());
        assert_eq!(out.parse_warnings.len(), 1);
        assert!(matches!(
            parse_extraction_output("  \n ", None),
            Err(ExtractionError::EmptyOutput)
        ));
    }

    #[test]
    fn label_variants_and_unknown_labels() {
        let raw =
            "- a. ### supported ###\n- b. ###Non-Supported###\n- c. ###likely  non_supported###\n- d. ###maybe###\n";
        let out = parse_extraction_output(raw, None).unwrap();
        let labels: Vec<_> = out.claims.iter().map(|c| c.pre_label).collect();
        use PreVerificationLabel::*;
        assert_eq!(labels, vec![Supported, NonSupported, LikelyNonSupported]);
        assert_eq!(
            out.parse_warnings,
            vec![ParseWarning {
                line: 4,
                reason: "unknown label `maybe`".into()
            }]
        );
    }

    #[test]
    fn marker_collision_is_a_warning() {
        let raw = "- C### is ###not### a language ###SUPPORTED###\n- Fine claim. ###UNSURE###";
        let out = parse_extraction_output(raw, None).unwrap();
        assert_eq!(out.claims.len(), 1);
        assert_eq!(out.parse_warnings.len(), 1);
        assert!(out.parse_warnings[0].reason.contains("collision"));
    }

    #[test]
    fn confidence_from_aligned_tokens() {
        let raw = "- Paris is in France. ###SUPPORTED###\n- Lyon. ###LIKELY SUPPORTED###";
        let tokens = vec![
            tok("- Paris is in France.", -1.0),
            tok(" ###", -0.5),
            tok("SUPPORTED", -0.01),
            tok("###\n", -0.2),
            tok("- Lyon.", -1.0),
            tok(" ###", -0.5),
            tok("LIKELY", -0.2),
            tok(" SUPPORTED", -0.4),
            tok("###", -0.3),
        ];
        let out = parse_extraction_output(raw, Some(&tokens)).unwrap();
        assert!((out.claims[0].confidence.unwrap() - (-0.01f64).exp()).abs() < 1e-15);
        assert!((out.claims[1].confidence.unwrap() - (-0.3f64).exp()).abs() < 1e-15);

        let bad = vec![tok("nope", 0.0)];
        let out = parse_extraction_output(raw, Some(&bad)).unwrap();
        assert!(out.claims.iter().all(|c| c.confidence.is_none()));
        assert_eq!(out.notes.len(), 1);
    }

    #[test]
    fn ids_and_dedup() {
        let raw = "- A is B. ###SUPPORTED###\n- C is D. ###UNSURE###\n- A is B. ###SUPPORTED###";
        let out = parse_extraction_output(raw, None).unwrap().with_origin("resp-1", 2);
        assert_eq!(out.claims[1].claim_id, "resp-1/c2/l2");
        let (kept, dups) = dedup_claims(out.claims);
        assert_eq!(kept.len(), 2);
        assert_eq!(dups[0].claim_id, "resp-1/c2/l3");
        assert_eq!(dups[0].duplicate_of, "resp-1/c2/l1");
    }

    #[test]
    fn prompt_contains_chunk_between_markers() {
        let chunk = Chunk {
            index: 0,
            sentences: vec![],
            text: "Paris is in France.".into(),
        };
        let p = render_extraction_prompt("Where is Paris?", &chunk);
        assert!(p.contains("<SOS>Paris is in France.<EOS>"));
        assert!(p.contains("Question: Where is Paris?"));
        assert_eq!(p, render_extraction_prompt("Where is Paris?", &chunk));
    }
}
