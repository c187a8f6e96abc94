use omt_core::locfdr::{locfdr, locfdr_equicorrelated};
use omt_core::policy::{constraint_value, decide, step_down_decide, step_down_decide_naive, CalibratedPolicy};
use omt_core::{BlockSpec, Criterion, EquicorrSpec, LocFdrVector, MarginalMixture, TwoGroupModel};
use proptest::prelude::*;

fn criterion() -> impl Strategy<Value = Criterion> {
    prop_oneof![Just(Criterion::Fdr), Just(Criterion::Pfdr)]
}

// locFDR-like vectors with plenty of ties and values near 0 and 1
fn tvec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            0.0..=1.0f64,
            Just(0.0),
            Just(1.0),
            (0..10u32).prop_map(|i| i as f64 / 10.0),
            (0.0..1e-6f64),
        ],
        1..=max_len,
    )
}

fn mu() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..50.0f64, (-3.0..5.0f64).prop_map(|e| 10f64.powf(e)), Just(0.0)]
}

fn is_prefix(d_sorted: &[bool]) -> bool {
    d_sorted.windows(2).all(|w| w[0] || !w[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn step_down_matches_naive(t in tvec(120), mu in mu(), alpha in 0.001..0.5f64, c in criterion()) {
        let t = LocFdrVector::new(t).unwrap();
        let fast = step_down_decide(&t, mu, alpha, c);
        let naive = step_down_decide_naive(&t, mu, alpha, c);
        prop_assert_eq!(fast.d_sorted, naive.d_sorted);
        prop_assert_eq!(fast.d, naive.d);
    }

    #[test]
    fn decisions_are_prefixes(t in tvec(120), mu in mu(), alpha in 0.001..0.5f64, c in criterion(), cut in 0.0..1.0f64) {
        let t = LocFdrVector::new(t).unwrap();
        let trace = step_down_decide(&t, mu, alpha, c);
        prop_assert!(is_prefix(&trace.d_sorted));
        prop_assert_eq!(t.unsort(&trace.d_sorted), trace.d);

        let policy = CalibratedPolicy::fixed(Criterion::Mfdr, alpha, cut).unwrap();
        let d = decide(&policy, &t);
        let d_sorted: Vec<bool> = t.sort_perm().iter().map(|&i| d[i]).collect();
        prop_assert!(is_prefix(&d_sorted));
    }

    #[test]
    fn fdr_constraint_is_posterior_fdp(t in tvec(150), mu in mu(), alpha in 0.001..0.5f64) {
        let t = LocFdrVector::new(t).unwrap();
        let sorted = t.sorted();
        let trace = step_down_decide(&t, mu, alpha, Criterion::Fdr);
        let g = constraint_value(&sorted, &trace.d_sorted, Criterion::Fdr, alpha).unwrap();
        let r = trace.rejections();
        let direct = if r == 0 { 0.0 } else { sorted[..r].iter().sum::<f64>() / r as f64 };
        prop_assert!((g - direct).abs() <= 1e-12, "{} vs {}", g, direct);

        let gp = constraint_value(&sorted, &trace.d_sorted, Criterion::Pfdr, alpha).unwrap();
        let expected = if r == 0 { 0.0 } else { direct - alpha };
        prop_assert!((gp - expected).abs() <= 1e-12);
    }

    #[test]
    fn fdr_rejections_shrink_with_mu(t in tvec(120), mu in mu(), bump in 0.0..10.0f64, alpha in 0.001..0.5f64) {
        let t = LocFdrVector::new(t).unwrap();
        let lo = step_down_decide(&t, mu, alpha, Criterion::Fdr).rejections();
        let hi = step_down_decide(&t, mu + bump, alpha, Criterion::Fdr).rejections();
        prop_assert!(hi <= lo);
    }

    #[test]
    fn independent_locfdr_is_scale_free(
        z in prop::collection::vec(-5.0..5.0f64, 1..40),
        pi in 0.01..0.99f64,
        theta in -4.0..4.0f64,
        c in 0.2..5.0f64,
    ) {
        let m = TwoGroupModel::independent(z.len(), MarginalMixture::standard(pi, theta).unwrap()).unwrap();
        let scaled = MarginalMixture::normal(pi, 0.0, c, c * theta, c).unwrap();
        let ms = TwoGroupModel::independent(z.len(), scaled).unwrap();
        let zs: Vec<f64> = z.iter().map(|v| c * v).collect();
        let a = locfdr(&m, &z).unwrap();
        let b = locfdr(&ms, &zs).unwrap();
        for (x, y) in a.t().iter().zip(b.t()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn block_locfdr_is_scale_free(
        z in prop::collection::vec(-4.0..4.0f64, 6),
        rho in -0.15..0.6f64,
        delta in -3.0..3.0f64,
        c in 0.3..3.0f64,
    ) {
        let spec = BlockSpec { alt_variance_shift: 0.2, ..BlockSpec::uniform(2, 3, rho, delta) };
        let scaled = BlockSpec {
            sizes: spec.sizes.clone(),
            rho: vec![c * c * rho],
            null_variance: c * c,
            alt_variance_shift: c * c * 0.2,
            delta: c * delta,
        };
        let a = locfdr(&TwoGroupModel::blocks(0.3, spec).unwrap(), &z).unwrap();
        let zs: Vec<f64> = z.iter().map(|v| c * v).collect();
        let b = locfdr(&TwoGroupModel::blocks(0.3, scaled).unwrap(), &zs).unwrap();
        for (x, y) in a.t().iter().zip(b.t()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn equicorrelated_locfdr_is_scale_free_and_permutation_equivariant(
        z in prop::collection::vec(-4.0..4.0f64, 2..25),
        rho in 0.0..0.8f64,
        delta in -3.0..3.0f64,
        c in 0.3..3.0f64,
        rot in 0usize..25,
    ) {
        let k = z.len();
        let spec = EquicorrSpec { rho, sigma2: 1.0, delta };
        let m = TwoGroupModel::equicorrelated(k, 0.2, spec).unwrap();
        let a = locfdr_equicorrelated(&m, &z).unwrap();

        let ms = TwoGroupModel::equicorrelated(k, 0.2, EquicorrSpec { rho, sigma2: c * c, delta: c * delta }).unwrap();
        let zs: Vec<f64> = z.iter().map(|v| c * v).collect();
        let b = locfdr_equicorrelated(&ms, &zs).unwrap();
        for (x, y) in a.t().iter().zip(b.t()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }

        let shift = rot % k;
        let mut zr = z.clone();
        zr.rotate_left(shift);
        let r = locfdr_equicorrelated(&m, &zr).unwrap();
        let mut expected = a.t().to_vec();
        expected.rotate_left(shift);
        for (x, y) in r.t().iter().zip(&expected) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn locfdr_is_a_probability(z in prop::collection::vec(-8.0..8.0f64, 1..60), pi in 0.0..=1.0f64, theta in -4.0..4.0f64) {
        let m = TwoGroupModel::independent(z.len(), MarginalMixture::standard(pi, theta).unwrap()).unwrap();
        let t = locfdr(&m, &z).unwrap();
        prop_assert!(t.t().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
