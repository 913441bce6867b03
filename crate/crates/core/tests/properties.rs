use std::collections::HashSet;

use proptest::prelude::*;

use rprm::corpus::{k_core_filter, split_sizes, time_split, RawReview, SplitRatios};
use rprm::eval::{average_precision, paired_ttest};
use rprm::learn::{bpr_loss, phi_distribution, proploss_ui, proploss_uu, sim, Similarity};
use rprm::props::minmax_normalize;

fn raw_reviews() -> impl Strategy<Value = Vec<RawReview>> {
    prop::collection::vec((0..12u8, 0..10u8, 1..=5u8, 0..400i64, 0..30u64), 0..120).prop_map(|rows| {
        rows.into_iter()
            .map(|(u, i, rating, timestamp, helpful_votes)| RawReview {
                user_key: format!("u{u}"),
                item_key: format!("i{i}"),
                rating,
                text: format!("review by {u} of {i}"),
                timestamp,
                helpful_votes,
            })
            .collect()
    })
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0..6.0f64, len).prop_map(|w| phi_distribution(&w))
}

proptest! {
    #[test]
    fn k_core_meets_threshold_and_is_idempotent(raw in raw_reviews(), k in 1usize..5) {
        let Ok(ds) = k_core_filter(&raw, k) else { return Ok(()); };
        for list in ds.per_user.iter().chain(&ds.per_item) {
            prop_assert!(list.len() >= k);
        }
        let again = k_core_filter(&ds.to_raw(), k).unwrap();
        prop_assert_eq!(again.reviews.len(), ds.reviews.len());
        prop_assert_eq!(again.content_hash(), ds.content_hash());
    }

    #[test]
    fn split_partitions_each_user_chronologically(raw in raw_reviews()) {
        let Ok(ds) = k_core_filter(&raw, 3) else { return Ok(()); };
        let split = time_split(&ds, SplitRatios::default()).unwrap();
        for (u, us) in split.users.iter().enumerate() {
            let mut all: Vec<u32> = us.train.iter().chain(&us.valid).chain(&us.test).copied().collect();
            prop_assert!(!us.train.is_empty() && !us.valid.is_empty() && !us.test.is_empty());
            let ts = |ids: &[u32]| ids.iter().map(|&r| ds.review(r).timestamp).collect::<Vec<_>>();
            prop_assert!(ts(&us.train).iter().max() <= ts(&us.valid).iter().min());
            prop_assert!(ts(&us.valid).iter().max() <= ts(&us.test).iter().min());
            all.sort_unstable();
            let mut own = ds.per_user[u].clone();
            own.sort_unstable();
            prop_assert_eq!(all, own);
        }
    }

    #[test]
    fn split_sizes_sum_to_total(n in 3usize..500) {
        let (a, b, c) = split_sizes(n, SplitRatios::default()).unwrap();
        prop_assert_eq!(a + b + c, n);
        prop_assert!(a >= 1 && b >= 1 && c >= 1);
    }

    #[test]
    fn minmax_lands_in_unit_interval(raw in prop::collection::vec(-1e6..1e6f64, 1..50)) {
        let out = minmax_normalize(&raw);
        prop_assert!(out.iter().all(|x| (0.0..=1.0).contains(x)));
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo < hi {
            prop_assert!(out.contains(&0.0) && out.contains(&1.0));
        }
    }

    #[test]
    fn phi_distribution_is_positive_and_sums_to_one(w in prop::collection::vec(-30.0..30.0f64, 1..8)) {
        let p = phi_distribution(&w);
        prop_assert!(p.iter().all(|&x| x > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarities_are_bounded_and_maximal_on_self(p in distribution(6), q in distribution(6)) {
        for kind in [Similarity::Cosine, Similarity::InverseKl] {
            let s = sim(&p, &q, kind).unwrap();
            prop_assert!(s > 0.0 && s <= 1.0 + 1e-12);
            prop_assert!((sim(&p, &p, kind).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bpr_decreases_with_margin(pos in -20.0..20.0f64, neg in -20.0..20.0f64, step in 0.01..5.0f64) {
        prop_assert!(bpr_loss(pos + step, neg) < bpr_loss(pos, neg));
        prop_assert!(bpr_loss(pos, neg) > 0.0);
    }

    #[test]
    fn property_losses_are_bounded(u in distribution(6), a in distribution(6), b in distribution(6)) {
        for kind in [Similarity::Cosine, Similarity::InverseKl] {
            for loss in [proploss_uu(&u, &a, &b, kind).unwrap(), proploss_ui(&u, &a, &b, kind).unwrap()] {
                prop_assert!((-1.0..=1.0).contains(&loss));
            }
        }
    }

    #[test]
    fn ttest_is_antisymmetric(pairs in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64), 3..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = paired_ttest(&a, &b).unwrap();
        let ba = paired_ttest(&b, &a).unwrap();
        if !ab.degenerate {
            prop_assert!((ab.t + ba.t).abs() <= 1e-9 * ab.t.abs().max(1.0));
            prop_assert!((ab.p - ba.p).abs() < 1e-12);
        }
    }

    #[test]
    fn relevant_items_on_top_give_unit_ap(n in 1u32..60, r in 1u32..60) {
        let r = r.min(n);
        let ranked: Vec<u32> = (0..n).collect();
        let relevant: HashSet<u32> = (0..r).collect();
        prop_assert!((average_precision(&ranked, &relevant).unwrap() - 1.0).abs() < 1e-12);
    }
}
