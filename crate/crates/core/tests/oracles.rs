mod common;

use proptest::prelude::*;

use common::*;
use silverforge::datamodel::{
    canonicalize, pair_universe_size, unrank_pair, SentenceId, SentencePair,
};
use silverforge::distmatch::{
    acceptance_from_densities, fit_kde, grid_point, kl_between, kl_divergence, DensityKind,
    GRID_POINTS,
};
use silverforge::embedsearch::EmbeddingMatrix;
use silverforge::evalmetrics::{auc_at, average_ranks, f1_positive, spearman, threshold_search};
use silverforge::textindex::{Bm25Index, Bm25Params};

fn docs_strategy() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::collection::vec(0u8..15, 0..10), 2..40).prop_map(|docs| {
        docs.into_iter()
            .map(|d| {
                d.iter()
                    .map(|t| format!("t{t}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    })
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(
                prop_oneof![0.0f64..1.0, (0u8..5).prop_map(|v| v as f64 / 4.0)],
                n,
            ),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bm25_top_k_equals_exhaustive_ranking(docs in docs_strategy(), k in 1usize..8, k1 in 0.1f64..3.0, b in 0.0f64..=1.0) {
        let index = Bm25Index::build(Bm25Params::new(k1, b).unwrap(), docs.iter().map(String::as_str));
        let brute = brute_bm25_all(&docs, k, k1, b);
        for (q, want) in brute.iter().enumerate() {
            let got = index.top_k(q, k).unwrap();
            prop_assert_eq!(got.iter().map(|h| h.0).collect::<Vec<_>>(), want.iter().map(|h| h.0).collect::<Vec<_>>());
            for (g, w) in got.iter().zip(want) {
                prop_assert!((g.1 - w.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bm25_index_invariants_hold(docs in docs_strategy()) {
        let index = Bm25Index::build(Bm25Params::default(), docs.iter().map(String::as_str));
        prop_assert_eq!(index.num_docs(), docs.len());
        let lens = index.doc_lengths();
        let mean = lens.iter().map(|&l| l as f64).sum::<f64>() / lens.len() as f64;
        prop_assert!((index.avg_doc_len() - mean).abs() < 1e-12);
        for t in 0..15 {
            let term = format!("t{t}");
            let p = index.postings(&term);
            prop_assert!(p.windows(2).all(|w| w[0].doc < w[1].doc));
            prop_assert!(index.idf(&term) > 0.0);
        }
    }

    #[test]
    fn cosine_top_k_equals_exhaustive_ranking(
        rows in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 2..50),
        k in 1usize..10,
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|x| x.abs() > 1e-3)));
        let m = EmbeddingMatrix::from_rows(rows.clone()).unwrap();
        for q in 0..rows.len() {
            let got = m.top_k(q, k).unwrap();
            let want = brute_cosine_top_k(&rows, q, k);
            prop_assert_eq!(got.len(), want.len());
            // ids may only differ inside a run of equal similarities
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g.1 - w.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spearman_matches_counting_ranks((x, _) in scores_and_labels(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let y = tied_scores(&mut r, x.len(), 6);
        prop_assert_eq!(average_ranks(&x), brute_ranks(&x));
        match spearman(&x, &y) {
            Ok(v) => {
                prop_assert!((v - brute_spearman(&x, &y)).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&v));
                prop_assert!((v - spearman(&y, &x).unwrap()).abs() < 1e-12);
            }
            Err(_) => prop_assert!(brute_spearman(&x, &y).is_nan()),
        }
    }

    #[test]
    fn f1_and_threshold_search_match_brute_force((scores, gold) in scores_and_labels()) {
        let pred: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
        prop_assert!((f1_positive(&pred, &gold).unwrap() - brute_f1(&pred, &gold)).abs() < 1e-9);
        let single = gold.iter().all(|&g| g) || gold.iter().all(|&g| !g);
        match threshold_search(&scores, &gold) {
            Ok((t, f)) => {
                let (_, bf) = brute_threshold_search(&scores, &gold);
                prop_assert!((f - bf).abs() < 1e-9);
                let at_t: Vec<bool> = scores.iter().map(|&s| s >= t).collect();
                prop_assert!((brute_f1(&at_t, &gold) - f).abs() < 1e-9);
            }
            Err(_) => prop_assert!(single),
        }
    }

    #[test]
    fn partial_auc_matches_roc_integral((scores, gold) in scores_and_labels(), cap in 0.01f64..=1.0) {
        let single = gold.iter().all(|&g| g) || gold.iter().all(|&g| !g);
        prop_assume!(!single);
        let got = auc_at(cap, &scores, &gold).unwrap();
        prop_assert!((got - brute_partial_auc(cap, &scores, &gold)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&got));
        prop_assert!((auc_at(1.0, &scores, &gold).unwrap() - mann_whitney(&scores, &gold)).abs() < 1e-9);
    }

    #[test]
    fn kde_grid_is_a_reflected_kernel_sum(scores in prop::collection::vec(0.0f64..=1.0, 5..80)) {
        prop_assume!(scores.iter().any(|&s| s != scores[0]));
        let m = fit_kde(DensityKind::Gold, &scores).unwrap();
        prop_assert!((m.bandwidth() - brute_silverman(&scores)).abs() < 1e-12);
        for i in (0..GRID_POINTS).step_by(17) {
            let want = naive_reflected_kde(&scores, m.bandwidth(), grid_point(i));
            prop_assert!((m.grid()[i] - want).abs() < 1e-9);
        }
        prop_assert!(kl_divergence(&m, &m) < 1e-9);
    }

    #[test]
    fn kl_is_nonnegative(a in prop::collection::vec(0.0f64..=1.0, 5..60), b in prop::collection::vec(0.0f64..=1.0, 5..60)) {
        prop_assume!(a.iter().any(|&s| s != a[0]) && b.iter().any(|&s| s != b[0]));
        prop_assert!(kl_between(&a, &b).unwrap() >= 0.0);
    }

    #[test]
    fn acceptance_is_a_probability(g in 0.0f64..10.0, s in 0.0f64..10.0) {
        let q = acceptance_from_densities(g, s);
        prop_assert!((0.0..=1.0).contains(&q));
        if g >= s {
            prop_assert_eq!(q, 1.0);
        } else {
            prop_assert!((q - g / s).abs() < 1e-12);
        }
    }

    #[test]
    fn canonicalize_orders_and_is_idempotent(a in 0u32..1000, b in 0u32..1000) {
        prop_assume!(a != b);
        let p = SentencePair { a: SentenceId(a), b: SentenceId(b) };
        let c = canonicalize(p).unwrap();
        prop_assert!(c.a < c.b);
        prop_assert_eq!(canonicalize(c).unwrap(), c);
        prop_assert_eq!(SentencePair::new(SentenceId(b), SentenceId(a)).unwrap(), c);
    }

    #[test]
    fn unrank_covers_the_pair_universe(n in 2usize..40) {
        let mut seen = std::collections::HashSet::new();
        for idx in 0..pair_universe_size(n) {
            let (i, j) = unrank_pair(n, idx);
            prop_assert!(i < j && j < n);
            prop_assert!(seen.insert((i, j)));
        }
        prop_assert_eq!(seen.len(), n * (n - 1) / 2);
    }
}
