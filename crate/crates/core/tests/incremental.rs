use chrono::DateTime;
use guardqa_core::corpus::{group_id_for, QARecord, RecordSource, RecordStatus};
use guardqa_core::provider::{Embedder, HashingEmbedder};
use guardqa_core::retrieval::{Bm25Params, HybridConfig, HybridIndex, InvertedIndex, JaccardScorer};
use guardqa_core::text::Tokenizer;
use proptest::prelude::*;

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec((0..20u8).prop_map(|i| format!("t{i}")), 1..=8).prop_map(|w| w.join(" ")),
        1..=40,
    )
}

fn record(i: usize, q: &str) -> QARecord {
    let answer = format!("answer {}", i % 7);
    QARecord {
        id: format!("r{i:03}"),
        group_id: group_id_for(&answer),
        caller_query_transcription: q.into(),
        relevant_question: q.into(),
        sanitized_question: q.into(),
        answer,
        theme: "t".into(),
        sub_theme: "s".into(),
        language: "hi".into(),
        status: RecordStatus::Published,
        created_at: DateTime::UNIX_EPOCH,
        source: RecordSource::Ingest,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn sparse_incremental_equals_batch(texts in words(), probes in words()) {
        let ids: Vec<String> = (0..texts.len()).map(|i| format!("d{i:03}")).collect();
        let batch = InvertedIndex::from_documents(
            ids.iter().map(String::as_str).zip(texts.iter().map(String::as_str)),
            Bm25Params::default(),
            Tokenizer::new(),
        ).unwrap();
        let mut inc = InvertedIndex::new(Bm25Params::default(), Tokenizer::new());
        for (id, t) in ids.iter().zip(&texts) {
            inc.add_document(id, t).unwrap();
        }
        prop_assert_eq!(inc.doc_count(), batch.doc_count());
        prop_assert_eq!(inc.avg_doc_length(), batch.avg_doc_length());
        prop_assert_eq!(inc.doc_lengths(), batch.doc_lengths());
        let terms: Vec<&str> = batch.terms().collect();
        prop_assert_eq!(inc.terms().collect::<Vec<_>>(), terms.clone());
        for t in terms {
            prop_assert_eq!(inc.postings(t), batch.postings(t));
        }
        for p in &probes {
            let q = Tokenizer::new().tokenize(p);
            prop_assert_eq!(inc.search(&q, 10), batch.search(&q, 10));
        }
    }

    #[test]
    fn hybrid_incremental_equals_batch(texts in words(), probes in words()) {
        let records: Vec<QARecord> = texts.iter().enumerate().map(|(i, t)| record(i, t)).collect();
        let e = HashingEmbedder::new(64);
        let cfg = HybridConfig::default();
        let batch = HybridIndex::build(&records, cfg, Tokenizer::new(), &e, 64).unwrap();
        let mut inc = HybridIndex::new(cfg, Tokenizer::new(), 64, e.provider_id());
        for r in &records {
            inc.add_document(r, &e).unwrap();
        }
        prop_assert_eq!(inc.version(), batch.version());
        prop_assert_eq!(inc.groups(), batch.groups());
        let scorer = JaccardScorer::new(Tokenizer::new());
        for p in &probes {
            prop_assert_eq!(inc.search(p, &e, &scorer).unwrap(), batch.search(p, &e, &scorer).unwrap());
        }
    }
}
