use corrfield::kalman_exponent::{periodic_exponent, scalar_exponent_at};
use corrfield::mc_detector::{llr_direct, llr_innovations};
use corrfield::{
    clustering_exponent, sample_observations, scalar_exponent, CorrelationCoefficient, FieldParams, Hypothesis,
    SensorLayout,
};
use proptest::prelude::*;

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.log10()..hi.log10()).prop_map(|e| 10f64.powf(e))
}

fn k_at(p: &FieldParams, a: f64) -> f64 {
    scalar_exponent_at(p, CorrelationCoefficient::new(a).unwrap()).unwrap().exponent_per_sensor
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn exponent_is_finite_and_nonnegative(
        a_rate in log_uniform(1e-2, 1e2), d in log_uniform(1e-3, 10.0), snr in log_uniform(1e-3, 1e3),
    ) {
        let p = FieldParams::from_snr(a_rate, snr).unwrap();
        let k = scalar_exponent(&p, d).unwrap().exponent_per_sensor;
        prop_assert!(k.is_finite() && k >= 0.0);
    }

    #[test]
    fn one_sensor_period_matches_scalar(
        a_rate in log_uniform(0.1, 10.0), d in log_uniform(1e-2, 3.0), snr in log_uniform(1e-2, 1e2),
    ) {
        let p = FieldParams::from_snr(a_rate, snr).unwrap();
        let k = scalar_exponent(&p, d).unwrap().exponent_per_sensor;
        let kv = periodic_exponent(&p, &[d]).unwrap().exponent_per_block;
        prop_assert!((k - kv).abs() < 1e-10);
    }

    #[test]
    fn clusters_match_periodic_model(
        m in 1usize..=5, a_rate in log_uniform(0.1, 10.0), period in log_uniform(1e-2, 3.0),
        snr in log_uniform(1e-2, 1e2),
    ) {
        let p = FieldParams::from_snr(a_rate, snr).unwrap();
        let layout = SensorLayout::Clustered { cluster_size: m, cluster_count: 4, period };
        let k = clustering_exponent(&p, &layout).unwrap().exponent_per_block;
        let mut offsets = vec![0.0; m];
        offsets[m - 1] = period;
        let kv = periodic_exponent(&p, &offsets).unwrap().exponent_per_block;
        prop_assert!((k - kv).abs() < 1e-8 * k.max(1.0));
    }

    #[test]
    fn two_sensor_exponent_is_mirror_symmetric(
        frac in 0.0f64..1.0, a_rate in log_uniform(0.5, 100.0), period in log_uniform(1e-3, 1.0),
        snr in log_uniform(0.1, 100.0),
    ) {
        let p = FieldParams::from_snr(a_rate, snr).unwrap();
        let d1 = frac * period;
        let k1 = periodic_exponent(&p, &[d1, period - d1]).unwrap().exponent_per_block;
        let k2 = periodic_exponent(&p, &[period - d1, d1]).unwrap().exponent_per_block;
        prop_assert!((k1 - k2).abs() < 1e-9 * k1.max(1.0));
    }

    #[test]
    fn exponent_grows_with_snr(a in 0.0f64..0.99, snr in log_uniform(1e-2, 1e2), factor in 1.05f64..10.0) {
        let lo = k_at(&FieldParams::from_snr(1.0, snr).unwrap(), a);
        let hi = k_at(&FieldParams::from_snr(1.0, snr * factor).unwrap(), a);
        prop_assert!(hi > lo);
    }

    #[test]
    fn high_snr_exponent_falls_with_correlation(a in 0.0f64..0.98, gap in 0.01f64..0.3, snr in 1.01f64..100.0) {
        let p = FieldParams::from_snr(1.0, snr).unwrap();
        let a2 = (a + gap).min(0.999);
        prop_assert!(k_at(&p, a) > k_at(&p, a2));
    }

    #[test]
    fn streaming_llr_equals_dense_llr(
        seed in any::<u64>(), h1 in any::<bool>(), n in 1usize..40, d in log_uniform(1e-3, 2.0),
        snr in log_uniform(0.1, 10.0),
    ) {
        let p = FieldParams::from_snr(1.0, snr).unwrap();
        let layout = SensorLayout::Uniform { spacing: d, count: n };
        let hyp = if h1 { Hypothesis::H1 } else { Hypothesis::H0 };
        let y = sample_observations(&p, &layout, hyp, seed).unwrap();
        let a = llr_innovations(&p, &layout, &y).unwrap();
        let b = llr_direct(&p, &layout, &y).unwrap();
        prop_assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0), "{} vs {}", a, b);
    }
}
