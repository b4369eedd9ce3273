use std::collections::BTreeSet;

use approx::assert_abs_diff_eq;
use cemtm::retrieval::{
    select_examples, select_for_document, topic_similarity, RetrievalError, Similarity, ThetaIndex,
};
use proptest::prelude::*;

fn toy_index() -> ThetaIndex {
    let entries = [
        ("d1", [0.7, 0.2, 0.1]),
        ("d2", [0.1, 0.8, 0.1]),
        ("d3", [0.3, 0.3, 0.4]),
        ("d4", [0.6, 0.3, 0.1]),
        ("d5", [0.2, 0.2, 0.6]),
        ("d6", [0.7, 0.2, 0.1]),
    ];
    ThetaIndex::new(entries.iter().map(|(d, t)| (d.to_string(), t.to_vec()))).unwrap()
}

#[test]
fn ranking_matches_frozen_oracle() {
    let q = [0.5, 0.4, 0.1];
    let got = select_examples(&q, &toy_index(), 6, &BTreeSet::new(), Similarity::Cosine).unwrap();
    let ids: Vec<&str> = got.iter().map(|e| e.doc_id.as_str()).collect();
    assert_eq!(ids, ["d4", "d1", "d6", "d3", "d2", "d5"]);
    let expected = [
        0.9782838736655736,
        0.9239131562447777,
        0.9239131562447777,
        0.8203469922386927,
        0.7217503175777071,
        0.5582905262390825,
    ];
    for (e, want) in got.iter().zip(expected) {
        assert_abs_diff_eq!(e.similarity, want, epsilon = 1e-12);
    }
}

#[test]
fn default_k_takes_the_head() {
    let q = [0.5, 0.4, 0.1];
    let got = select_examples(&q, &toy_index(), 3, &BTreeSet::new(), Similarity::Cosine).unwrap();
    assert_eq!(got.len(), 3);
    assert_eq!(got[2].doc_id, "d6");
}

#[test]
fn document_never_retrieves_itself() {
    let got = select_for_document("d1", &toy_index(), 5, Similarity::Cosine).unwrap();
    assert_eq!(got[0].doc_id, "d6");
    assert!(got.iter().all(|e| e.doc_id != "d1"));
    assert!(matches!(
        select_for_document("missing", &toy_index(), 3, Similarity::Cosine),
        Err(RetrievalError::UnknownDocument(_))
    ));
}

#[test]
fn errors_on_bad_queries() {
    let index = toy_index();
    assert!(matches!(
        select_examples(&[0.5, 0.5], &index, 3, &BTreeSet::new(), Similarity::Cosine),
        Err(RetrievalError::DimensionMismatch { .. })
    ));
    assert!(matches!(
        select_examples(&[0.5, 0.4, 0.1], &index, 0, &BTreeSet::new(), Similarity::Cosine),
        Err(RetrievalError::ZeroK)
    ));
    let all: BTreeSet<String> = index.iter().map(|(d, _)| d.to_string()).collect();
    assert!(matches!(
        select_examples(&[0.5, 0.4, 0.1], &index, 3, &all, Similarity::Cosine),
        Err(RetrievalError::EmptyIndex)
    ));
}

#[test]
fn index_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("theta_index.json");
    let index = toy_index();
    index.save(&path).unwrap();
    let back = ThetaIndex::load(&path).unwrap();
    assert_eq!(back.to_json(), index.to_json());
    assert_eq!(back.get("d3"), Some(&[0.3, 0.3, 0.4][..]));
}

#[test]
fn jensen_shannon_prefers_closer_distributions() {
    let q = [0.5, 0.4, 0.1];
    let got = select_examples(&q, &toy_index(), 1, &BTreeSet::new(), Similarity::JensenShannon).unwrap();
    assert_eq!(got[0].doc_id, "d4");
    assert_abs_diff_eq!(Similarity::JensenShannon.score(&q, &q).unwrap(), 1.0, epsilon = 1e-12);
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn index_and_query() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
    (2usize..6).prop_flat_map(|k| (prop::collection::vec(simplex(k), 1..25), simplex(k), 1usize..8))
}

proptest! {
    #[test]
    fn results_are_sorted_distinct_and_bounded((thetas, q, k) in index_and_query()) {
        let index = ThetaIndex::new(thetas.into_iter().enumerate().map(|(i, t)| (format!("doc{i:03}"), t))).unwrap();
        let got = select_examples(&q, &index, k, &BTreeSet::new(), Similarity::Cosine).unwrap();
        prop_assert_eq!(got.len(), k.min(index.len()));
        for w in got.windows(2) {
            prop_assert!(w[0].similarity > w[1].similarity
                || (w[0].similarity == w[1].similarity && w[0].doc_id < w[1].doc_id));
        }
        let ids: BTreeSet<&str> = got.iter().map(|e| e.doc_id.as_str()).collect();
        prop_assert_eq!(ids.len(), got.len());
        prop_assert!(got.iter().all(|e| (0.0..=1.0 + 1e-12).contains(&e.similarity)));
    }

    #[test]
    fn excluded_ids_never_appear((thetas, q, k) in index_and_query(), mask in any::<u32>()) {
        let index = ThetaIndex::new(thetas.into_iter().enumerate().map(|(i, t)| (format!("doc{i:03}"), t))).unwrap();
        let exclude: BTreeSet<String> = (0..index.len()).filter(|i| mask >> (i % 32) & 1 == 1).map(|i| format!("doc{i:03}")).collect();
        match select_examples(&q, &index, k, &exclude, Similarity::Cosine) {
            Ok(got) => prop_assert!(got.iter().all(|e| !exclude.contains(&e.doc_id))),
            Err(e) => {
                prop_assert_eq!(exclude.len(), index.len());
                prop_assert!(matches!(e, RetrievalError::EmptyIndex));
            }
        }
    }

    #[test]
    fn cosine_ignores_query_scale((thetas, q, k) in index_and_query(), scale in 0.1f64..10.0) {
        let index = ThetaIndex::new(thetas.into_iter().enumerate().map(|(i, t)| (format!("doc{i:03}"), t))).unwrap();
        let scaled: Vec<f64> = q.iter().map(|x| x * scale).collect();
        let a = select_examples(&q, &index, k, &BTreeSet::new(), Similarity::Cosine).unwrap();
        let b = select_examples(&scaled, &index, k, &BTreeSet::new(), Similarity::Cosine).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x.similarity - y.similarity).abs() < 1e-9);
        }
    }

    #[test]
    fn similarity_is_symmetric(a in simplex(4), b in simplex(4)) {
        prop_assert!((topic_similarity(&a, &b).unwrap() - topic_similarity(&b, &a).unwrap()).abs() < 1e-12);
    }
}
