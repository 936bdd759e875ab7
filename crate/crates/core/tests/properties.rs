#![allow(clippy::needless_range_loop)]

mod common;

use cfta_core::bank::fill_top_l;
use cfta_core::*;
use proptest::prelude::*;

fn simplex_strategy(k: usize) -> impl Strategy<Value = SoftLabel> {
    prop::collection::vec(1e-6f64..1.0, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        SoftLabel::new(w.iter().map(|v| v / s).collect()).unwrap()
    })
}

fn fuse_inputs() -> impl Strategy<Value = (SoftLabel, Vec<f64>, Vec<f64>)> {
    (2usize..8).prop_flat_map(|k| {
        (
            simplex_strategy(k),
            prop::collection::vec(-50.0f64..50.0, k),
            prop::collection::vec(0.0f64..10.0, k),
        )
    })
}

fn unit_vec(d: usize) -> impl Strategy<Value = FeatureVector> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(|v| FeatureVector::normalized(v).unwrap())
}

proptest! {
    #[test]
    fn fuse_output_is_on_simplex((y, g, v) in fuse_inputs()) {
        let z = fuse(&y, &g, &BankVote::from_vec(v)).unwrap();
        common::assert_finite_simplex(&z);
    }

    #[test]
    fn fuse_ignores_common_logit_shift((y, g, v) in fuse_inputs(), c in -1e3f64..1e3) {
        let votes = BankVote::from_vec(v);
        let a = fuse(&y, &g, &votes).unwrap();
        let shifted: Vec<f64> = g.iter().map(|x| x + c).collect();
        let b = fuse(&y, &shifted, &votes).unwrap();
        for k in 0..y.len() {
            prop_assert!((a.get(k) - b.get(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn larger_vote_raises_its_class((y, g, v) in fuse_inputs(), idx in 0usize..8, bump in 0.01f64..5.0) {
        let k = idx % y.len();
        let a = fuse(&y, &g, &BankVote::from_vec(v.clone())).unwrap();
        let mut w = v;
        w[k] += bump;
        let b = fuse(&y, &g, &BankVote::from_vec(w)).unwrap();
        // strictly larger unless already saturated at 1 in floating point
        prop_assert!(b.get(k) > a.get(k) || a.get(k) == 1.0);
    }

    #[test]
    fn zero_prior_entries_stay_zero((y, g, v) in fuse_inputs(), idx in 0usize..8) {
        let k = idx % y.len();
        let mut p = y.as_slice().to_vec();
        p[k] = 0.0;
        let s: f64 = p.iter().sum();
        let y0 = SoftLabel::new(p.iter().map(|x| x / s).collect()).unwrap();
        let z = fuse(&y0, &g, &BankVote::from_vec(v)).unwrap();
        prop_assert_eq!(z.get(k), 0.0);
        prop_assert!((0..y.len()).filter(|&j| j != k).all(|j| z.get(j) > 0.0 || g[j] < -40.0));
    }

    #[test]
    fn zero_shot_is_shift_invariant(x in unit_vec(6), ts in prop::collection::vec(unit_vec(6), 2..6), tau in 0.005f64..1.0) {
        prop_assume!(PrototypeSet::new(ts.clone()).is_ok());
        let protos = PrototypeSet::new(ts).unwrap();
        let y = zero_shot(&x, &protos, tau).unwrap();
        common::assert_finite_simplex(&y);
        let mut l = cfta_core::zeroshot::zero_shot_logits(&x, &protos, tau).unwrap();
        l.iter_mut().for_each(|v| *v += 123.0);
        cfta_core::math::softmax_in_place(&mut l);
        for k in 0..protos.num_classes() {
            prop_assert!((l[k] - y.get(k)).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_within_bounds(y in (2usize..10).prop_flat_map(simplex_strategy)) {
        let c = confidence(&y).value();
        let k = y.len() as f64;
        prop_assert!(c <= 0.0 && c >= -k.ln() - 1e-12);
    }

    #[test]
    fn two_class_confidence_grows_away_from_half(a in 0.0f64..0.5, b in 0.0f64..0.5) {
        prop_assume!((a - b).abs() > 1e-9);
        let c = |p: f64| confidence(&SoftLabel::new(vec![0.5 + p, 0.5 - p]).unwrap()).value();
        prop_assert_eq!(a > b, c(a) > c(b));
    }

    #[test]
    fn bank_invariants(
        cands in prop::collection::vec((prop::collection::vec(-5.0f64..5.0, 3), 0u8..4), 1..80),
        cap in 1usize..6,
    ) {
        let mut bank = KnowledgeBank::new(3, cap);
        let mut entries = Vec::new();
        let mut rejected = Vec::new();
        for (seq, (logits, dir)) in cands.iter().enumerate() {
            let mut p = logits.clone();
            cfta_core::math::softmax_in_place(&mut p);
            let y = SoftLabel::new(p).unwrap();
            let mut f = vec![0.1; 3];
            f[*dir as usize % 3] = 1.0;
            let e = BankEntry::new(FeatureVector::normalized(f).unwrap(), y.clone(), seq as u64);
            entries.push(e.clone());
            let out = bank.try_insert(y.argmax(), e.clone()).unwrap();
            prop_assert!((0..3).all(|k| bank.class_len(k) <= cap));
            if !out.admitted() {
                // idempotent rejection
                prop_assert!(!bank.clone().try_insert(y.argmax(), e.clone()).unwrap().admitted());
                rejected.push(e);
            }
        }
        for k in 0..3 {
            prop_assert!(bank.entries(k).all(|e| e.soft_label().argmax() == k));
        }
        for e in &rejected {
            let k = e.soft_label().argmax();
            prop_assert_eq!(bank.class_len(k), cap);
            prop_assert!(bank.entries(k).all(|b| b.confidence() >= e.confidence()));
        }
        let again = fill_top_l(entries.into_iter(), 3, cap);
        prop_assert_eq!(again.fill(), bank.fill());
    }
}
