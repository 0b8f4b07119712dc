//! Cross-module properties of the greedy filter and the matcher.

use mapfilter::calib::{greedy_filter_from, TripletState};
use mapfilter::synth::{brute_force_best_removal, brute_force_trace};
use mapfilter::{
    greedy_filter, l2_distance, match_query, CalibConfig, CalibrationTriplet, KeptSet,
    MatcherConfig, PooledMatrix,
};
use proptest::prelude::*;

fn arb_triplet(min_c: usize, max_c: usize) -> impl Strategy<Value = CalibrationTriplet> {
    (min_c..=max_c, prop_oneof![Just(1usize), Just(5usize)]).prop_flat_map(|(c, p)| {
        proptest::collection::vec(0.0f32..4.0, 3 * c * p).prop_map(move |v| {
            let m = |k: usize| PooledMatrix::new(c, p, v[k * c * p..(k + 1) * c * p].to_vec()).unwrap();
            CalibrationTriplet::new(0, m(0), m(1), m(2)).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn every_greedy_step_is_the_exhaustive_argmax(t in arb_triplet(2, 8), cutoff in 0.0f64..0.3) {
        let all = KeptSet::all(t.channels()).unwrap();
        let trace = greedy_filter_from(&t, &all, cutoff).unwrap();
        let mut kept = all;
        for &removed in &trace.removed {
            let (best, _) = brute_force_best_removal(&t, &kept).unwrap();
            prop_assert_eq!(best, removed);
            kept = KeptSet::new(kept.indices().iter().copied().filter(|&c| c != removed)).unwrap();
        }
        prop_assert_eq!(trace.removed, brute_force_trace(&t, cutoff).unwrap());
    }

    #[test]
    fn cached_distances_track_full_recomputation(t in arb_triplet(2, 40)) {
        let mut kept: Vec<usize> = (0..t.channels()).collect();
        let mut state = TripletState::new(&t, &KeptSet::all(t.channels()).unwrap()).unwrap();
        while kept.len() > 1 {
            let ks = KeptSet::new(kept.iter().copied()).unwrap();
            let (qr, rn) = state.distances();
            let full_qr = l2_distance(&t.query, &t.reference, &ks).unwrap();
            let full_rn = l2_distance(&t.reference, &t.negative, &ks).unwrap();
            prop_assert!((qr - full_qr).abs() <= 1e-6 * full_qr.max(1e-12));
            prop_assert!((rn - full_rn).abs() <= 1e-6 * full_rn.max(1e-12));
            let (worst, _) = state.best_removal().unwrap();
            state.remove(worst);
            kept.retain(|&c| c != worst);
        }
    }

    #[test]
    fn query_scale_does_not_change_match(
        refs in proptest::collection::vec(proptest::collection::vec(0.0f32..5.0, 10), 2..15),
        q in proptest::collection::vec(0.1f32..5.0, 10),
        scale in prop_oneof![Just(0.5f32), Just(2.0f32), Just(4.0f32), Just(0.25f32)],
        w in 0usize..3,
    ) {
        let refs: Vec<_> = refs.into_iter().map(|r| PooledMatrix::new(2, 5, r).unwrap()).collect();
        let scaled: Vec<f32> = q.iter().map(|v| v * scale).collect();
        let q = PooledMatrix::new(2, 5, q).unwrap();
        let qs = PooledMatrix::new(2, 5, scaled).unwrap();
        let kept = KeptSet::all(2).unwrap();
        let cfg = MatcherConfig { exclusion_window: w };
        let a = match_query("a", &q, &refs, &kept, &cfg).unwrap();
        let b = match_query("b", &qs, &refs, &kept, &cfg).unwrap();
        // power-of-two scales keep the float arithmetic exact
        prop_assert_eq!(a.best_index, b.best_index);
        prop_assert_eq!(a.quality, b.quality);
        prop_assert_eq!(a.normalized_scores, b.normalized_scores);
    }
}

#[test]
fn default_cutoff_matches_reported_setting() {
    assert_eq!(CalibConfig::default().gradient_cutoff, 0.1);
    assert_eq!(CalibConfig::default().num_calibration_images, 50);
}

#[test]
fn greedy_never_empties_the_kept_set() {
    // q == n, so every removal scores exactly 0; a zero cut-off accepts zero
    // improvement and the loop runs down to the one-map floor
    let c = 6;
    let q = PooledMatrix::new(c, 1, vec![0.0; c]).unwrap();
    let r = PooledMatrix::new(c, 1, (1..=c).map(|v| v as f32).collect()).unwrap();
    let n = PooledMatrix::new(c, 1, vec![0.0; c]).unwrap();
    let t = CalibrationTriplet::new(0, q, r, n).unwrap();
    let cfg = CalibConfig {
        gradient_cutoff: 0.0,
        ..CalibConfig::default()
    };
    let trace = greedy_filter(&t, &cfg).unwrap();
    assert_eq!(trace.removed.len(), c - 1);
}
