use chmm_core::margins::{weighted_mle, Margin, MarginFamily};
use chmm_core::numeric::integrate;
use proptest::prelude::*;

fn weighted_data() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| (prop::collection::vec(0.01..5.0f64, n), prop::collection::vec(0.01..1.0f64, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gaussian_mle_is_stationary((y, w) in weighted_data()) {
        let m = weighted_mle(MarginFamily::Gaussian, &w, &y).unwrap();
        let total: f64 = w.iter().sum();
        let mut g = [0.0; 2];
        for (yt, wt) in y.iter().zip(&w) {
            let s = m.score(*yt);
            g[0] += wt / total * s[0];
            g[1] += wt / total * s[1];
        }
        let scale = m.params()[1].recip();
        prop_assert!(g[0].abs() < 1e-10 * scale.max(1.0) && g[1].abs() < 1e-10 * scale.max(1.0), "{g:?}");
    }

    #[test]
    fn exponential_mle_is_stationary((y, w) in weighted_data()) {
        let m = weighted_mle(MarginFamily::Exponential, &w, &y).unwrap();
        let total: f64 = w.iter().sum();
        let g: f64 = y.iter().zip(&w).map(|(yt, wt)| wt / total * m.score(*yt)[0]).sum();
        prop_assert!(g.abs() < 1e-10 * m.params()[0].recip().max(1.0), "{g}");
    }

    #[test]
    fn weight_scale_invariance((y, w) in weighted_data(), c in 1e-3..1e3f64, gauss in any::<bool>()) {
        let family = if gauss { MarginFamily::Gaussian } else { MarginFamily::Exponential };
        let a = weighted_mle(family, &w, &y).unwrap().params();
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let b = weighted_mle(family, &scaled, &y).unwrap().params();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn zero_weight_points_are_ignored((y, w) in weighted_data(), extra in -5.0..5.0f64) {
        let a = weighted_mle(MarginFamily::Gaussian, &w, &y).unwrap().params();
        let mut y2 = y.clone();
        let mut w2 = w.clone();
        y2.push(extra);
        w2.push(0.0);
        let b = weighted_mle(MarginFamily::Gaussian, &w2, &y2).unwrap().params();
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn quantile_inverts_cdf(mean in -5.0..5.0f64, sd in 0.1..5.0f64, rate in 0.1..5.0f64, p in 1e-6..0.999_999f64) {
        for m in [Margin::gaussian(mean, sd).unwrap(), Margin::exponential(rate).unwrap()] {
            let y = m.quantile(p).unwrap();
            prop_assert!((m.cdf(y) - p).abs() < 1e-9, "{m} p={p}");
        }
    }
}

#[test]
fn densities_integrate_to_one() {
    let g = Margin::gaussian(1.0, 0.5).unwrap();
    let total = integrate(|y| g.pdf(y), -9.0, 11.0, 1e-12);
    assert!((total - 1.0).abs() < 1e-9);
    let e = Margin::exponential(1.7).unwrap();
    let total = integrate(|y| e.pdf(y), 0.0, 40.0, 1e-12);
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn equal_weights_give_plain_moments() {
    let m = weighted_mle(MarginFamily::Gaussian, &[0.5, 0.5], &[2.0, 4.0]).unwrap();
    assert_eq!(m.params(), vec![3.0, 1.0]);
    let m = weighted_mle(MarginFamily::Exponential, &[1.0, 1.0, 2.0], &[1.0, 3.0, 2.0]).unwrap();
    assert!((m.params()[0] - 0.5).abs() < 1e-15);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(weighted_mle(MarginFamily::Gaussian, &[0.0, 0.0], &[1.0, 2.0]).is_err());
    assert!(weighted_mle(MarginFamily::Gaussian, &[1.0, -1.0], &[1.0, 2.0]).is_err());
    assert!(weighted_mle(MarginFamily::Gaussian, &[1.0], &[1.0, 2.0]).is_err());
    assert!(weighted_mle(MarginFamily::Exponential, &[1.0, 1.0], &[1.0, -2.0]).is_err());
    assert!(Margin::gaussian(0.0, 0.0).is_err());
    assert!(Margin::exponential(-1.0).is_err());
    assert_eq!("gaussian".parse::<MarginFamily>().unwrap(), MarginFamily::Gaussian);
}
