//! Response-level factuality metrics and agreement with annotated ground
//! truth.
//!
//! ```text
//! P(y)            = S / (S + N)
//! R_safe(y)       = min(S / K, 1)
//! R_fastfact(y)   = 2 / (1 + exp(γ · |S − K'|))
//! F1              = 2PR / (P + R)
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::verification::{FinalCategory, VerifiedClaim};

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const DEFAULT_K_PRIME: u64 = 10;

/// Current version of the ground-truth row format.
pub const GROUND_TRUTH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimTally {
    #[serde(rename = "S")]
    pub s: u64,
    #[serde(rename = "N")]
    pub nn: u64,
    #[serde(rename = "I")]
    pub i: u64,
    #[serde(rename = "D")]
    pub d: u64,
}

impl ClaimTally {
    pub fn from_verdicts<'a>(verdicts: impl IntoIterator<Item = &'a VerifiedClaim>) -> Self {
        let mut t = Self::default();
        for v in verdicts {
            t.add(v.final_category);
        }
        t
    }

    pub fn add(&mut self, category: FinalCategory) {
        match category {
            FinalCategory::Supported => self.s += 1,
            FinalCategory::NonSupported => self.nn += 1,
            FinalCategory::Irrelevant => self.i += 1,
            FinalCategory::Dropped => self.d += 1,
        }
    }

    /// Predicted K: supported plus non-supported claims.
    pub fn k_pred(&self) -> u64 {
        self.s + self.nn
    }

    pub fn total(&self) -> u64 {
        self.s + self.nn + self.i + self.d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecallMode {
    Fastfact,
    Safe,
}

impl FromStr for RecallMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fastfact" => Ok(RecallMode::Fastfact),
            "safe" => Ok(RecallMode::Safe),
            other => Err(ConfigError::new("mode", format!("unknown recall mode `{other}`"))),
        }
    }
}

impl fmt::Display for RecallMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecallMode::Fastfact => "fastfact",
            RecallMode::Safe => "safe",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub gamma: f64,
    pub mode: RecallMode,
    /// K' in fastfact mode, K in safe mode.
    pub k: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            mode: RecallMode::Fastfact,
            k: DEFAULT_K_PRIME,
        }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_gamma(self.gamma)?;
        validate_k(self.k)
    }
}

fn validate_gamma(gamma: f64) -> Result<(), ConfigError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new("gamma", "must be a finite positive number"))
    }
}

fn validate_k(k: u64) -> Result<(), ConfigError> {
    if k >= 1 {
        Ok(())
    } else {
        Err(ConfigError::new("k", "must be at least 1"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualityScore {
    /// `None` when the response has no supported or non-supported claim.
    pub precision: Option<f64>,
    pub recall: f64,
    pub f1: f64,
    pub tally: ClaimTally,
    pub config: ScoreConfig,
    #[serde(default)]
    pub no_claims: bool,
}

pub fn precision(tally: &ClaimTally) -> Option<f64> {
    let k = tally.k_pred();
    (k > 0).then(|| tally.s as f64 / k as f64)
}

pub fn recall_safe(s: u64, k: u64) -> Result<f64, ConfigError> {
    validate_k(k)?;
    Ok((s as f64 / k as f64).min(1.0))
}

pub fn recall_fastfact(s: u64, k_prime: u64, gamma: f64) -> Result<f64, ConfigError> {
    validate_k(k_prime)?;
    validate_gamma(gamma)?;
    let diff = s.abs_diff(k_prime) as f64;
    Ok(2.0 / (1.0 + (gamma * diff).exp()))
}

/// Harmonic mean; zero when precision is undefined or both terms are zero.
pub fn f1(precision: Option<f64>, recall: f64) -> f64 {
    match precision {
        Some(p) if p + recall > 0.0 => 2.0 * p * recall / (p + recall),
        _ => 0.0,
    }
}

pub fn score(tally: ClaimTally, config: ScoreConfig) -> Result<FactualityScore, ConfigError> {
    config.validate()?;
    let p = precision(&tally);
    let recall = match config.mode {
        RecallMode::Fastfact => recall_fastfact(tally.s, config.k, config.gamma)?,
        RecallMode::Safe => recall_safe(tally.s, config.k)?,
    };
    Ok(FactualityScore {
        precision: p,
        recall,
        f1: f1(p, recall),
        tally,
        config,
        no_claims: p.is_none(),
    })
}

/// One annotated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub id: String,
    #[serde(default)]
    pub benchmark_tag: String,
    #[serde(rename = "K_prime")]
    pub k_prime: u64,
    #[serde(rename = "S_true")]
    pub s_true: u64,
    #[serde(rename = "N_true")]
    pub n_true: u64,
    #[serde(rename = "I_true")]
    pub i_true: u64,
    pub f1_true: f64,
    #[serde(default = "default_schema")]
    pub schema_version: u32,
}

fn default_schema() -> u32 {
    GROUND_TRUTH_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthWarning {
    pub line: usize,
    pub reason: String,
}

/// Parses JSON-lines ground truth. Blank lines are skipped; malformed rows,
/// rows from a newer schema and repeated ids are reported and skipped.
pub fn parse_ground_truth(text: &str) -> (Vec<GroundTruthRow>, Vec<GroundTruthWarning>) {
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<GroundTruthRow>(line) {
            Ok(row) if row.schema_version > GROUND_TRUTH_SCHEMA_VERSION => warnings.push(GroundTruthWarning {
                line: line_no,
                reason: format!("unsupported schema_version {}", row.schema_version),
            }),
            Ok(row) if row.k_prime == 0 => warnings.push(GroundTruthWarning {
                line: line_no,
                reason: "K_prime must be at least 1".into(),
            }),
            Ok(row) if !seen.insert(row.id.clone()) => warnings.push(GroundTruthWarning {
                line: line_no,
                reason: format!("duplicate id `{}`", row.id),
            }),
            Ok(row) => rows.push(row),
            Err(e) => warnings.push(GroundTruthWarning {
                line: line_no,
                reason: e.to_string(),
            }),
        }
    }
    (rows, warnings)
}

/// A scored response as seen by the alignment computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicted {
    pub id: String,
    pub tally: ClaimTally,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlignmentDeltas {
    pub k_prime: f64,
    pub f1: f64,
    pub supported: f64,
    pub unsupported: f64,
    pub irrelevant: f64,
}

impl AlignmentDeltas {
    fn between(p: &Predicted, t: &GroundTruthRow) -> Self {
        Self {
            k_prime: p.tally.k_pred().abs_diff(t.k_prime) as f64,
            f1: (p.f1 - t.f1_true).abs(),
            supported: p.tally.s.abs_diff(t.s_true) as f64,
            unsupported: p.tally.nn.abs_diff(t.n_true) as f64,
            irrelevant: p.tally.i.abs_diff(t.i_true) as f64,
        }
    }

    fn mean(items: &[AlignmentDeltas]) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let sum = items.iter().fold(Self::default(), |a, d| Self {
            k_prime: a.k_prime + d.k_prime,
            f1: a.f1 + d.f1,
            supported: a.supported + d.supported,
            unsupported: a.unsupported + d.unsupported,
            irrelevant: a.irrelevant + d.irrelevant,
        });
        Some(Self {
            k_prime: sum.k_prime / n,
            f1: sum.f1 / n,
            supported: sum.supported / n,
            unsupported: sum.unsupported / n,
            irrelevant: sum.irrelevant / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseAlignment {
    pub id: String,
    pub benchmark_tag: String,
    pub deltas: AlignmentDeltas,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub per_response: Vec<ResponseAlignment>,
    pub overall: Option<AlignmentDeltas>,
    pub per_tag: BTreeMap<String, AlignmentDeltas>,
    /// Predicted ids without ground truth.
    pub missing_truth: Vec<String>,
    /// Ground-truth ids without a prediction.
    pub missing_prediction: Vec<String>,
}

/// Absolute per-response differences, averaged overall and per benchmark
/// tag. Ids present on only one side are listed and left out.
pub fn alignment_metrics(predicted: &[Predicted], truth: &[GroundTruthRow]) -> AlignmentReport {
    let by_id: HashMap<&str, &GroundTruthRow> = truth.iter().map(|t| (t.id.as_str(), t)).collect();
    let predicted_ids: HashSet<&str> = predicted.iter().map(|p| p.id.as_str()).collect();
    let mut per_response = Vec::new();
    let mut missing_truth = Vec::new();
    for p in predicted {
        match by_id.get(p.id.as_str()) {
            Some(t) => per_response.push(ResponseAlignment {
                id: p.id.clone(),
                benchmark_tag: t.benchmark_tag.clone(),
                deltas: AlignmentDeltas::between(p, t),
            }),
            None => missing_truth.push(p.id.clone()),
        }
    }
    let missing_prediction = truth
        .iter()
        .filter(|t| !predicted_ids.contains(t.id.as_str()))
        .map(|t| t.id.clone())
        .collect();
    let all: Vec<_> = per_response.iter().map(|r| r.deltas).collect();
    let mut grouped: BTreeMap<String, Vec<AlignmentDeltas>> = BTreeMap::new();
    for r in &per_response {
        grouped.entry(r.benchmark_tag.clone()).or_default().push(r.deltas);
    }
    AlignmentReport {
        overall: AlignmentDeltas::mean(&all),
        per_tag: grouped
            .into_iter()
            .filter_map(|(tag, d)| AlignmentDeltas::mean(&d).map(|m| (tag, m)))
            .collect(),
        per_response,
        missing_truth,
        missing_prediction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(s: u64, nn: u64) -> ClaimTally {
        ClaimTally { s, nn, i: 0, d: 0 }
    }

    #[test]
    fn precision_cases() {
        assert_eq!(precision(&tally(3, 1)), Some(0.75));
        assert_eq!(precision(&tally(0, 5)), Some(0.0));
        assert_eq!(precision(&tally(0, 0)), None);
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_safe(5, 10).unwrap(), 0.5);
        assert_eq!(recall_safe(20, 10).unwrap(), 1.0);
        assert_eq!(recall_safe(0, 10).unwrap(), 0.0);
        assert!(recall_safe(1, 0).is_err());
        assert_eq!(recall_fastfact(7, 7, 0.3).unwrap(), 1.0);
        // 2 / (1 + e^1.5)
        assert!((recall_fastfact(10, 15, 0.3).unwrap() - 0.364851).abs() < 5e-7);
        assert!(recall_fastfact(1, 2, 0.0).is_err());
        assert!(recall_fastfact(1, 2, -1.0).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1(Some(1.0), 1.0), 1.0);
        assert!((f1(Some(0.8), 0.5) - 0.61538).abs() < 5e-6);
        assert_eq!(f1(Some(0.0), 0.7), 0.0);
        assert_eq!(f1(None, 0.7), 0.0);
    }

    #[test]
    fn empty_response_flags_no_claims() {
        let s = score(
            ClaimTally {
                s: 0,
                nn: 0,
                i: 2,
                d: 1,
            },
            ScoreConfig::default(),
        )
        .unwrap();
        assert!(s.no_claims);
        assert_eq!(s.precision, None);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn ground_truth_parsing() {
        let text = r#"{"id":"a","benchmark_tag":"t","K_prime":10,"S_true":8,"N_true":2,"I_true":1,"f1_true":0.8}

{"id":"a","benchmark_tag":"t","K_prime":10,"S_true":8,"N_true":2,"I_true":1,"f1_true":0.8}
not json
{"id":"b","benchmark_tag":"t","K_prime":3,"S_true":1,"N_true":2,"I_true":0,"f1_true":0.2,"schema_version":9}
{"id":"c","K_prime":0,"S_true":0,"N_true":0,"I_true":0,"f1_true":0}"#;
        let (rows, warnings) = parse_ground_truth(text);
        assert_eq!(rows.len(), 1);
        assert_eq!(warnings.iter().map(|w| w.line).collect::<Vec<_>>(), vec![3, 4, 5, 6]);
    }
}
