use std::collections::BTreeMap;

use guardqa_core::retrieval::{Bm25Params, InvertedIndex};
use guardqa_core::text::{TokenStream, Tokenizer};
use proptest::prelude::*;

/// Textbook Okapi BM25 over whitespace tokens, one document at a time.
fn oracle(docs: &[(String, Vec<String>)], query: &[String]) -> Vec<(String, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let mut out = Vec::new();
    for (id, toks) in docs {
        let mut s = 0.0;
        for q in query {
            let tf = toks.iter().filter(|t| *t == q).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let df = docs.iter().filter(|(_, t)| t.contains(q)).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * toks.len() as f64 / avg));
        }
        if s > 0.0 {
            out.push((id.clone(), s));
        }
    }
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

fn corpus() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = (0..15u8).prop_map(|i| format!("w{i}"));
    prop::collection::vec(prop::collection::vec(word, 1..=12), 1..=100)
}

fn query() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec((0..18u8).prop_map(|i| format!("w{i}")), 1..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn search_matches_the_textbook_formula(texts in corpus(), q in query(), k in 1usize..120) {
        let docs: Vec<(String, Vec<String>)> =
            texts.into_iter().enumerate().map(|(i, t)| (format!("d{i:03}"), t)).collect();
        let joined: Vec<(String, String)> = docs.iter().map(|(id, t)| (id.clone(), t.join(" "))).collect();
        let index = InvertedIndex::from_documents(
            joined.iter().map(|(i, t)| (i.as_str(), t.as_str())),
            Bm25Params::default(),
            Tokenizer::new(),
        ).unwrap();
        let want = oracle(&docs, &q);
        let got = index.search(&TokenStream::new(q.clone()), k);
        prop_assert_eq!(got.len(), want.len().min(k));
        let all: BTreeMap<&str, f64> = want.iter().map(|(i, s)| (i.as_str(), *s)).collect();
        for (g, w) in got.iter().zip(&want) {
            prop_assert!((g.sparse_score - w.1).abs() < 1e-9, "{} vs {}", g.sparse_score, w.1);
            // ids may swap only within a tie
            let own = all.get(g.record_id.as_str()).copied().unwrap_or(f64::NAN);
            prop_assert!((own - w.1).abs() < 1e-9, "{} out of order", g.record_id);
        }
        for (id, _) in &docs {
            let s = index.bm25_score(&TokenStream::new(q.clone()), id).unwrap();
            prop_assert!((s - all.get(id.as_str()).copied().unwrap_or(0.0)).abs() < 1e-9);
        }
    }
}

#[test]
fn two_document_fixture() {
    // N=2, "w1" in one doc: idf = ln(1.5/1.5 + 1) = ln 2; lengths 2 and 1, avg 1.5
    let index = InvertedIndex::from_documents(
        [("a", "w1 w2"), ("b", "w2")],
        Bm25Params::default(),
        Tokenizer::new(),
    )
    .unwrap();
    let hits = index.search(&TokenStream::new(vec!["w1".into()]), 5);
    let expect = 2f64.ln() * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / 1.5));
    assert_eq!(hits.len(), 1);
    assert!((hits[0].sparse_score - expect).abs() < 1e-12);
}
