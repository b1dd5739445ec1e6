//! Shared scripted backends and fixtures for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Arc, LazyLock};

use claimcheck::backends::{mock_completion, FnModel, FnReader, FnSearch, PageReader, SearchHit, Services};
use claimcheck::error::BackendError;
use claimcheck::pipeline::{EvaluationRecord, Evaluator, FixedClock, PipelineConfig, ResponseInput};
use claimcheck::prompts;
use rand::Rng;
use regex::Regex;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn three_claims_dir() -> PathBuf {
    fixtures().join("three_claims")
}

/// A response of `n` sentences, each naming its own item.
pub fn item_response(n: usize) -> String {
    (1..=n)
        .map(|i| format!("Item {i} is listed."))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One scripted claim: the sentence it comes from, and how the extractor
/// labels it.
#[derive(Debug, Clone)]
pub struct PlannedClaim {
    pub sentence: usize,
    pub text: String,
    pub label: &'static str,
    pub logprob: f64,
}

impl PlannedClaim {
    /// Definite label with confidence exp(-0.01) ~ 0.99.
    pub fn confident(sentence: usize, text: String) -> Self {
        Self {
            sentence,
            text,
            label: "SUPPORTED",
            logprob: -0.01,
        }
    }

    /// Fails the gate at theta 0.9: either a hedged label or a definite one
    /// with confidence exp(-1) ~ 0.37.
    pub fn doubtful(sentence: usize, text: String, hedged: bool) -> Self {
        if hedged {
            Self {
                sentence,
                text,
                label: "UNSURE",
                logprob: -0.01,
            }
        } else {
            Self {
                sentence,
                text,
                label: "SUPPORTED",
                logprob: -1.0,
            }
        }
    }
}

/// Size and gate pattern of a randomized budget scenario.
#[derive(Debug, Clone)]
pub struct BudgetCase {
    pub n: usize,
    pub w: usize,
    pub k: usize,
    pub claims: Vec<PlannedClaim>,
}

impl BudgetCase {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=60);
        let w = rng.random_range(1..=n);
        let m = rng.random_range(0..=40);
        let k = rng.random_range(1..=10);
        // spread the gated share over the whole [0, 1] range
        let gated_share: f64 = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random(),
        };
        let claims = (0..m)
            .map(|j| {
                let sentence = rng.random_range(1..=n);
                let text = format!("Claim {j} concerns item {sentence}.");
                if rng.random::<f64>() < gated_share {
                    PlannedClaim::confident(sentence, text)
                } else {
                    PlannedClaim::doubtful(sentence, text, rng.random())
                }
            })
            .collect();
        Self { n, w, k, claims }
    }

    pub fn non_gated(&self) -> usize {
        self.claims
            .iter()
            .filter(|c| c.logprob < -0.5 || c.label == "UNSURE")
            .count()
    }
}

static ITEM: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"Item (\d+) is listed\.").unwrap());

/// Extractor that answers each chunk with the planned claims of its
/// sentences, a verifier that always says supported, a search engine with
/// `k + 2` distinct hits per query and a reader that echoes the URL.
pub fn planned_services(claims: Vec<PlannedClaim>) -> Services {
    let reader = FnReader::new(|url: &str| {
        Ok(format!(
            "This page is {url}. It mentions claims and items. Nothing else."
        ))
    });
    planned_services_with_reader(claims, Arc::new(reader))
}

pub fn planned_services_with_reader(claims: Vec<PlannedClaim>, reader: Arc<dyn PageReader>) -> Services {
    let claims = Arc::new(claims);
    let llm = FnModel::new(move |req| {
        if let Some(chunk) = prompts::extraction_prompt_chunk(&req.prompt) {
            let sentences: Vec<usize> = ITEM.captures_iter(chunk).map(|c| c[1].parse().unwrap()).collect();
            let mine: Vec<&PlannedClaim> = claims.iter().filter(|c| sentences.contains(&c.sentence)).collect();
            if mine.is_empty() {
                return Ok(mock_completion(req, "No verifiable claim.", |_| -0.01));
            }
            let text = mine
                .iter()
                .map(|c| format!("- {} ###{}###", c.text, c.label))
                .collect::<Vec<_>>()
                .join("\n");
            return Ok(mock_completion(req, &text, |i| mine[i].logprob));
        }
        if prompts::verification_prompt_claim(&req.prompt).is_some() {
            return Ok(mock_completion(
                req,
                "Reasoning: scripted.\nDecision: ###supported###",
                |_| -0.01,
            ));
        }
        Err(BackendError::permanent("unexpected prompt"))
    });
    let search = FnSearch::new(|query: &str, k: usize| {
        let slug: String = query.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        Ok((0..k + 2)
            .map(|j| SearchHit {
                title: format!("{query} ({j})"),
                url: format!("https://pages.test/{slug}/{j}"),
                snippet: query.to_string(),
            })
            .collect())
    });
    Services::new(Arc::new(llm), Arc::new(search), reader)
}

pub fn budget_config(case: &BudgetCase) -> PipelineConfig {
    PipelineConfig {
        stride: case.w,
        k: case.k,
        parallelism: 4,
        ..PipelineConfig::default()
    }
}

pub fn run_budget_case(case: &BudgetCase) -> EvaluationRecord {
    let evaluator = Evaluator::new(planned_services(case.claims.clone()), budget_config(case))
        .unwrap()
        .with_clock(Arc::new(FixedClock(0)));
    let input = ResponseInput {
        id: "case".into(),
        question: "List the items.".into(),
        response: item_response(case.n),
        benchmark_tag: None,
    };
    evaluator.evaluate(&input, None).unwrap().record
}

/// Scripted world for the three-claim fixture, with the fixed clock.
pub fn scripted_evaluator(config: PipelineConfig) -> Evaluator {
    let services = claimcheck::pipeline::mock_services(&config, &three_claims_dir()).unwrap();
    Evaluator::new(services, config)
        .unwrap()
        .with_clock(Arc::new(FixedClock(0)))
}
