//! Property tests over random inputs.

mod common;

use proptest::prelude::*;
use shiftcvm::limit::{quantile_rank, LimitKind};
use shiftcvm::rng::inverse_normal_cdf;
use shiftcvm::study::two_sample_ks;
use shiftcvm::{edf, mle_shift, CounterRng, Path, QuantileTable};

fn random_walk(seed: u64, n: usize, dt: f64) -> Path {
    let rng = CounterRng::new(seed);
    let mut x = 0.0;
    let mut v = vec![x];
    for k in 0..n {
        x += -x * dt + dt.sqrt() * rng.normal(k as u64);
        v.push(x);
    }
    Path::new(dt, v, None, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mle_is_shift_equivariant(seed in 0u64..10_000, c in -4.0f64..4.0) {
        let m = common::ou();
        let p = random_walk(seed, 2_000, 0.01);
        let a = mle_shift(&p, &m).unwrap().theta_hat;
        let b = mle_shift(&p.shifted(c), &m).unwrap().theta_hat;
        prop_assert!((b - a - c).abs() < 1e-6, "{} vs {}", b - a, c);
    }

    #[test]
    fn edf_is_a_distribution_function(seed in 0u64..10_000) {
        let p = random_walk(seed, 500, 0.02);
        let grid: Vec<f64> = (0..200).map(|i| -4.0 + 0.04 * i as f64).collect();
        let e = edf(&p, &grid);
        prop_assert!(e.values.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn quantile_rank_stays_in_range(n in 1usize..100_000, eps in 1e-4f64..0.9999) {
        let r = quantile_rank(n, eps);
        prop_assert!(r >= 1 && r <= n);
        prop_assert!(r as f64 >= n as f64 * (1.0 - eps) - 1e-6);
    }

    #[test]
    fn table_text_round_trips(mut thr in proptest::collection::vec(0.01f64..100.0, 1..8), seed in any::<u64>()) {
        thr.sort_by(|a, b| b.total_cmp(a));
        thr.dedup();
        let eps: Vec<f64> = (1..=thr.len()).map(|i| i as f64 / 10.0).collect();
        let t = QuantileTable::new(LimitKind::Mu, "cubic(scale=2)".into(), eps, thr, 12_345, seed, "h=0.01;lo=-3;hi=3;substeps=1".into()).unwrap();
        prop_assert_eq!(QuantileTable::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn ks_distance_is_symmetric_and_bounded(a in proptest::collection::vec(-10.0f64..10.0, 1..60), b in proptest::collection::vec(-10.0f64..10.0, 1..60)) {
        let d = two_sample_ks(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, two_sample_ks(&b, &a));
    }

    #[test]
    fn inverse_normal_is_monotone(p in 1e-12f64..0.999_999, q in 1e-12f64..0.999_999) {
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        prop_assert!(inverse_normal_cdf(lo) <= inverse_normal_cdf(hi));
        prop_assert!((inverse_normal_cdf(p) + inverse_normal_cdf(1.0 - p)).abs() < 1e-8);
    }

    #[test]
    fn h_times_density_is_symmetric(z in -4.0f64..4.0, x in -4.0f64..4.0) {
        let law = law();
        let a = law.kernel_h(z, x).unwrap() * law.density_at(z, 0.0);
        let b = law.kernel_h(x, z).unwrap() * law.density_at(x, 0.0);
        prop_assert!((a - b).abs() < 1e-12);
    }
}

fn law() -> &'static shiftcvm::InvariantLaw {
    use std::sync::OnceLock;
    static LAW: OnceLock<shiftcvm::InvariantLaw> = OnceLock::new();
    LAW.get_or_init(common::ou_law)
}
