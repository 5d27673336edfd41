use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fairk::selection::{
    aou_update, fair_k, max_staleness, round_robin, top_mask, AoUVector, PolicyConfig, PolicyKind,
};

/// A dimension, a budget split and matching gradient and age vectors. Values
/// are drawn from a small grid so ties show up often.
fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<u64>, usize, usize)> {
    (1usize..80).prop_flat_map(|d| {
        (
            prop::collection::vec((-6i32..=6).prop_map(|v| v as f64 * 0.25), d),
            prop::collection::vec(0u64..8, d),
            0..=d,
        )
            .prop_flat_map(|(g, a, k)| (Just(g), Just(a), Just(k), 0..=k))
    })
}

proptest! {
    #[test]
    fn every_policy_selects_exactly_k((g, a, k, k_m) in instance(), seed in any::<u64>()) {
        let aou = AoUVector::from_ages(a);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for kind in PolicyKind::ALL {
            let mask = PolicyConfig::new(kind, k, k_m).unwrap().select(&g, &aou, &mut rng).unwrap();
            prop_assert_eq!(mask.count(), k);
            prop_assert_eq!(mask.len(), g.len());
        }
    }

    #[test]
    fn full_magnitude_share_is_top_k((g, a, k, _) in instance()) {
        let cfg = PolicyConfig::new(PolicyKind::FairK, k, k).unwrap();
        prop_assert_eq!(fair_k(&g, &AoUVector::from_ages(a), &cfg).unwrap(), top_mask(&g, k).unwrap());
    }

    #[test]
    fn zero_magnitude_share_is_round_robin((g, a, k, _) in instance()) {
        let aou = AoUVector::from_ages(a);
        let cfg = PolicyConfig::new(PolicyKind::FairK, k, 0).unwrap();
        prop_assert_eq!(fair_k(&g, &aou, &cfg).unwrap(), round_robin(&aou, k).unwrap());
    }

    #[test]
    fn positive_scaling_keeps_the_mask((g, a, k, k_m) in instance(), c in 1e-3f64..1e3) {
        let aou = AoUVector::from_ages(a);
        let cfg = PolicyConfig::new(PolicyKind::FairK, k, k_m).unwrap();
        let scaled: Vec<f64> = g.iter().map(|x| x * c).collect();
        prop_assert_eq!(fair_k(&g, &aou, &cfg).unwrap(), fair_k(&scaled, &aou, &cfg).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ages_stay_under_the_cap(
        d in 4usize..60,
        k_share in 0.05f64..0.5,
        m_share in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let k = ((k_share * d as f64).round() as usize).max(1);
        let k_m = ((m_share * k as f64).floor() as usize).min(k - 1);
        let cap = max_staleness(d, k_m, k - k_m).unwrap();
        let cfg = PolicyConfig::new(PolicyKind::FairK, k, k_m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut aou = AoUVector::zeros(d);
        for _ in 0..2 * cap + 5 {
            let g: Vec<f64> = (0..d).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let mask = fair_k(&g, &aou, &cfg).unwrap();
            aou = aou_update(&aou, &mask).unwrap();
            prop_assert!(aou.max() <= cap, "age {} above cap {}", aou.max(), cap);
        }
    }
}
