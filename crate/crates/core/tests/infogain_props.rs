use oselect_core::infogain::{entropy, information_gain, partition_entropy, response_marginal};
use oselect_core::response_model::ResponseId;
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (Vec<f64>, usize, Vec<usize>, f64)> {
    (1usize..=6, 1usize..=10)
        .prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                Just(k),
                prop::collection::vec(0..=k, n),
                prop_oneof![Just(0.0), 0.0f64..1.0, Just(1.0)],
            )
        })
        .prop_filter("positive mass", |(w, ..)| w.iter().sum::<f64>() > 1e-6)
        .prop_map(|(w, k, s, e)| {
            let z: f64 = w.iter().sum();
            (w.into_iter().map(|x| x / z).collect(), k, s, e)
        })
}

fn responses(slots: &[usize], k: usize) -> Vec<ResponseId> {
    slots.iter().map(|s| ResponseId::from_slot(*s, k)).collect()
}

/// Mutual information between hypothesis and response computed from the
/// joint table, independent of the posterior code path.
fn mutual_information(w: &[f64], correct: &[ResponseId], k: usize, e: f64) -> f64 {
    let lik = |r: usize, c: ResponseId| {
        let hit = if r == c.slot(k) { 1.0 - e } else { 0.0 };
        hit + e / (k as f64 + 1.0)
    };
    let mut marg = vec![0.0; k + 1];
    for (wi, c) in w.iter().zip(correct) {
        for (r, m) in marg.iter_mut().enumerate() {
            *m += wi * lik(r, *c);
        }
    }
    let mut mi = 0.0;
    for (wi, c) in w.iter().zip(correct) {
        for r in 0..=k {
            let j = wi * lik(r, *c);
            if j > 0.0 {
                mi += j * (lik(r, *c) / marg[r]).log2();
            }
        }
    }
    mi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1500))]

    #[test]
    fn ig_is_bounded_by_prior_entropy((w, k, slots, e) in instance()) {
        let c = responses(&slots, k);
        let ig = information_gain(&w, &c, k, e);
        let h = entropy(&w);
        prop_assert!(ig >= -1e-9, "ig {}", ig);
        prop_assert!(ig <= h + 1e-9, "ig {} > H {}", ig, h);
    }

    #[test]
    fn oracle_ig_equals_partition_entropy((w, k, slots, _e) in instance()) {
        let c = responses(&slots, k);
        let ig = information_gain(&w, &c, k, 0.0);
        prop_assert!((ig - partition_entropy(&w, &c, k)).abs() <= 1e-9);
    }

    #[test]
    fn ig_equals_mutual_information((w, k, slots, e) in instance()) {
        let c = responses(&slots, k);
        let ig = information_gain(&w, &c, k, e);
        prop_assert!((ig - mutual_information(&w, &c, k, e)).abs() <= 1e-9);
    }

    #[test]
    fn marginal_is_a_distribution((w, k, slots, e) in instance()) {
        let m = response_marginal(&w, &responses(&slots, k), k, e);
        prop_assert_eq!(m.len(), k + 1);
        prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_random_annotators_reveal_nothing((w, k, slots, _e) in instance()) {
        prop_assert!(information_gain(&w, &responses(&slots, k), k, 1.0).abs() <= 1e-9);
    }
}

#[test]
fn single_option_binary_split() {
    let w = [0.5, 0.5];
    let c = [ResponseId::Option(0), ResponseId::None];
    assert!((information_gain(&w, &c, 1, 0.0) - 1.0).abs() < 1e-12);
    // k = 1, e = 0.3: response probabilities 0.85/0.15 under either cluster.
    let h = |p: f64| -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
    assert!((information_gain(&w, &c, 1, 0.3) - (1.0 - h(0.85))).abs() < 1e-12);
}
