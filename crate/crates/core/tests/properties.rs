use std::sync::Arc;

use claimcheck::accounting::{predicted_calls, CallPurpose, CostLedger, Pipeline, PipelineParams};
use claimcheck::backends::{mock_completion, CompletionRequest};
use claimcheck::extraction::{parse_extraction_output, PreVerificationLabel};
use claimcheck::pipeline::PipelineConfig;
use claimcheck::retrieval::{
    build_index, chunk_documents, query_terms, rank_order, retrieve_scored, Bm25Params, ChunkingConfig, EvidenceChunk,
    WebDocument,
};
use claimcheck::scoring::{f1, precision, recall_fastfact, ClaimTally};
use claimcheck::segmentation::{chunk_source, split_sentences};
use claimcheck::verification::{parse_verification_output, VerificationLabel};
use proptest::prelude::*;

fn claim_text() -> impl Strategy<Value = String> {
    "[A-Z][a-z]{1,8}( [a-z0-9,]{1,8}){0,8}\\."
}

proptest! {
    #[test]
    fn spans_are_ordered_slices_of_any_text(text in "\\PC{0,300}") {
        let spans = split_sentences(&text);
        let mut prev = 0;
        for s in &spans {
            prop_assert!(s.start >= prev && s.end > s.start);
            prop_assert_eq!(&text[s.start..s.end], s.text.as_str());
            prop_assert!(text[prev..s.start].trim().is_empty());
            prev = s.end;
        }
        prop_assert!(text[prev..].trim().is_empty());
    }

    #[test]
    fn chunk_text_spans_its_sentences(text in "([A-Z][a-z]{0,6} [a-z]{1,6}[.!?] ?\n?){0,40}", w in 1usize..12) {
        let spans = split_sentences(&text);
        let chunks = chunk_source(&text, &spans, w).unwrap();
        prop_assert_eq!(chunks.len(), spans.len().div_ceil(w));
        for c in &chunks {
            let (a, b) = (c.sentences[0].start, c.sentences.last().unwrap().end);
            prop_assert_eq!(&c.text, &text[a..b]);
        }
    }

    #[test]
    fn evidence_windows_cover_each_document(n in 1usize..40, len in 1usize..9, overlap_seed in 0usize..8) {
        let overlap = overlap_seed % len;
        let body: String = (0..n).map(|i| format!("Sentence {i} is here. ")).collect();
        let doc = WebDocument::fetched("https://a.test", "A", body);
        let chunks = chunk_documents(&[doc], ChunkingConfig { chunk_len: len, overlap }).unwrap();
        let step = len - overlap;
        let expected = if n <= len { 1 } else { (n - len).div_ceil(step) + 1 };
        prop_assert_eq!(chunks.len(), expected);
        prop_assert_eq!(chunks[0].first_sentence, 0);
        prop_assert_eq!(chunks.last().unwrap().last_sentence, n - 1);
        for (i, c) in chunks.iter().enumerate() {
            prop_assert_eq!(c.chunk_index, i);
            prop_assert_eq!(c.first_sentence, i * step);
            let size = c.last_sentence - c.first_sentence + 1;
            prop_assert!(size <= len);
            if i + 1 < chunks.len() {
                prop_assert_eq!(size, len);
            }
        }
    }

    #[test]
    fn retrieval_is_sorted_positive_and_bounded(
        texts in prop::collection::vec("([a-e]{1,2} ){1,8}", 0..30),
        query in "([a-f]{1,2} ){1,5}",
        m in 1usize..12,
    ) {
        let chunks: Vec<EvidenceChunk> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| EvidenceChunk {
                source_url: format!("https://{}.test", i % 3),
                source_title: String::new(),
                chunk_index: i,
                text: t.clone(),
                first_sentence: 0,
                last_sentence: 0,
            })
            .collect();
        let index = build_index(chunks, Bm25Params::default());
        let got = retrieve_scored(&index, &query, m);
        prop_assert!(got.len() <= m);
        for pair in got.windows(2) {
            prop_assert!(rank_order((&pair[0].chunk, pair[0].score), (&pair[1].chunk, pair[1].score)).is_le());
        }
        prop_assert!(got.iter().all(|s| s.score > 0.0));
        let terms = query_terms(&query);
        for (i, c) in index.chunks.iter().enumerate() {
            for (j, d) in index.chunks.iter().enumerate() {
                if c.text == d.text {
                    prop_assert_eq!(index.bm25_score(&terms, i), index.bm25_score(&terms, j));
                }
            }
        }
    }

    #[test]
    fn scores_stay_in_range(s in 0u64..300, n in 0u64..300, k in 1u64..300, gamma in 0.001f64..5.0) {
        let tally = ClaimTally { s, nn: n, i: 0, d: 0 };
        let p = precision(&tally);
        prop_assert!(p.is_none_or(|p| (0.0..=1.0).contains(&p)));
        let r = recall_fastfact(s, k, gamma).unwrap();
        // positive in exact arithmetic; underflows to 0 for very large gamma*|S-K'|
        prop_assert!((0.0..=1.0).contains(&r));
        let f = f1(p, r);
        prop_assert!((0.0..=1.0).contains(&f));
        if let Some(p) = p {
            prop_assert!(f <= p.max(r) + 1e-15 && f + 1e-15 >= p.min(r));
        }
        // recall shrinks as S moves away from K'
        let nearer = if s > k { s - 1 } else if s < k { s + 1 } else { s };
        prop_assert!(recall_fastfact(nearer, k, gamma).unwrap() >= r);
    }

    #[test]
    fn gated_budget_never_exceeds_baselines(n in 1u64..500, m in 0u64..200, k in 1u64..20, p in 0.0f64..=1.0, w in 1u64..60) {
        let params = PipelineParams { n, m, k, p, w };
        let fast = predicted_calls(Pipeline::FastFact, &params).unwrap();
        prop_assert_eq!(fast.total_llm, fast.extractor + fast.verifier);
        prop_assert_eq!(fast.searches, fast.verifier * k);
        prop_assert!(fast.verifier <= m);
        for other in [Pipeline::FactScore, Pipeline::VeriScore, Pipeline::Safe] {
            prop_assert!(fast.total_llm <= predicted_calls(other, &params).unwrap().total_llm);
        }
    }

    #[test]
    fn extraction_lines_round_trip(
        claims in prop::collection::vec((claim_text(), prop::sample::select(PreVerificationLabel::ALL.to_vec()), -3.0f64..0.0), 1..10),
    ) {
        let raw = claims
            .iter()
            .map(|(t, l, _)| format!("- {t} ###{}###", l.as_prompt_str()))
            .collect::<Vec<_>>()
            .join("\n");
        let request = CompletionRequest::new("p").with_logprobs(true);
        let completion = mock_completion(&request, &raw, |i| claims[i].2);
        let out = parse_extraction_output(&raw, completion.token_logprobs.as_deref()).unwrap();
        prop_assert!(out.parse_warnings.is_empty());
        prop_assert_eq!(out.claims.len(), claims.len());
        for (got, (text, label, lp)) in out.claims.iter().zip(&claims) {
            prop_assert_eq!(&got.text, text);
            prop_assert_eq!(got.pre_label, *label);
            prop_assert!((got.confidence.unwrap() - lp.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn verifier_decision_round_trips(reason in "[A-Za-z ,.]{0,80}", label in prop::sample::select(VerificationLabel::ALL.to_vec())) {
        let raw = format!("Reasoning: {reason}\nDecision: ###{}###", label.as_prompt_str().to_uppercase());
        let (reasoning, parsed) = parse_verification_output(&raw).unwrap();
        prop_assert_eq!(parsed, label);
        prop_assert_eq!(reasoning, reason.trim());
    }

    #[test]
    fn config_json_round_trips(stride in 1usize..100, theta in 0.0f64..=1.0, k in 1usize..20, gamma in 0.01f64..2.0) {
        let cfg = PipelineConfig { stride, theta, k, gamma, ..PipelineConfig::default() };
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        prop_assert_eq!(back.snapshot(), cfg.snapshot());
    }
}

#[test]
fn ledger_counts_concurrent_calls() {
    let ledger = Arc::new(CostLedger::new());
    std::thread::scope(|scope| {
        for _ in 0..8 {
            let l = ledger.clone();
            scope.spawn(move || {
                for _ in 0..1000 {
                    l.record_completion(CallPurpose::Extraction, 3, 2);
                    l.record_search(10);
                }
            });
        }
    });
    let s = ledger.snapshot();
    assert_eq!(
        (
            s.extractor_calls,
            s.search_queries,
            s.prompt_tokens,
            s.completion_tokens
        ),
        (8000, 80000, 24000, 16000)
    );
}
