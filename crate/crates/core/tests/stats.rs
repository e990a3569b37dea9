use fleeting::rng::{stream, Domain};
use fleeting::stats::{bootstrap_ci, bootstrap_p, bootstrap_t_test, PairedDiffs, MIN_BOOTSTRAPS};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn null_sample(i: u64) -> Vec<f64> {
    let mut rng = stream(i, Domain::Simulation, 77);
    (0..10).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn null_calibration_and_coverage() {
    let (mut rejected, mut covered) = (0, 0);
    for i in 0..500 {
        let x = null_sample(i);
        let p = bootstrap_p(&x, MIN_BOOTSTRAPS, i).unwrap();
        assert!(p > 0.0);
        rejected += usize::from(p < 0.05);
        let (lo, hi) = bootstrap_ci(&x, 0.95, MIN_BOOTSTRAPS, i).unwrap();
        covered += usize::from(lo <= 0.0 && 0.0 <= hi);
    }
    let (rate, coverage) = (rejected as f64 / 500.0, covered as f64 / 500.0);
    eprintln!("rejection {rate}, coverage {coverage}");
    assert!((0.03..=0.08).contains(&rate), "rejection rate {rate}");
    assert!((0.92..=0.98).contains(&coverage), "coverage {coverage}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn sign_and_scale_invariance(
        x in prop::collection::vec(-5.0f64..5.0, 3..12),
        k in 0.01f64..100.0,
        seed in any::<u64>(),
    ) {
        let d = PairedDiffs::new("d", x.clone()).unwrap();
        let Ok(r) = bootstrap_t_test(&d, MIN_BOOTSTRAPS, seed) else { return Ok(()) };
        let neg = PairedDiffs::new("d", x.iter().map(|v| -v).collect()).unwrap();
        let rn = bootstrap_t_test(&neg, MIN_BOOTSTRAPS, seed).unwrap();
        prop_assert_eq!(rn.t_observed, -r.t_observed);
        prop_assert_eq!(rn.p_value, r.p_value);
        let scaled = PairedDiffs::new("d", x.iter().map(|v| k * v).collect()).unwrap();
        let rs = bootstrap_t_test(&scaled, MIN_BOOTSTRAPS, seed).unwrap();
        prop_assert!((rs.t_observed - r.t_observed).abs() <= 1e-9 * r.t_observed.abs().max(1.0));
        prop_assert!((rs.p_value - r.p_value).abs() <= 2.0 / (MIN_BOOTSTRAPS + 1) as f64);
        prop_assert!(r.ci_low <= r.mean && r.mean <= r.ci_high);
        prop_assert!(r.p_value >= 1.0 / (MIN_BOOTSTRAPS + 1) as f64 && r.p_value <= 1.0);
    }
}
