mod common;

use chmm_core::copulas::{tau_to_theta, Copula, CopulaFamily};
use chmm_core::decode_loss::{
    closed_form_mixture_loss, conditional_misclassification, local_decode, mixture_misclassification, monte_carlo_loss,
    zero_one_loss,
};
use chmm_core::margins::Margin;
use chmm_core::model::{symmetric_mixture_model, CopulaHmm, StateSpec, Trajectory};
use chmm_core::rng::seeded;
use common::random_model;
use proptest::prelude::*;
use rand::Rng;

fn rescale(m: Margin, a: f64, b: f64) -> Margin {
    match m {
        Margin::Gaussian { mean, sd } => Margin::gaussian(a * mean + b, a * sd).unwrap(),
        Margin::Exponential { rate } => Margin::exponential(rate / a).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Decoding depends on the data only through the copula scale, so an
    /// increasing affine change of every coordinate with matching margins
    /// leaves the decoded path unchanged.
    #[test]
    fn decoding_invariant_under_increasing_transforms(seed in any::<u64>(), k in 2usize..4, len in 1usize..40) {
        let mut rng = seeded(seed);
        let model = random_model(&mut rng, k, false);
        let traj = model.simulate(len, &mut rng).unwrap();
        let coef: Vec<(f64, f64)> = (0..2)
            .map(|h| {
                let exp = model.states().iter().any(|s| matches!(s.margins[h], Margin::Exponential { .. }));
                (rng.random_range(0.2..5.0), if exp { 0.0 } else { rng.random_range(-3.0..3.0) })
            })
            .collect();
        let states = model
            .states()
            .iter()
            .map(|s| StateSpec::new(s.margins.iter().zip(&coef).map(|(&m, &(a, b))| rescale(m, a, b)).collect(), s.copula))
            .collect();
        let moved = CopulaHmm::new(model.pi().to_vec(), model.gamma().to_vec(), states).unwrap();
        let rows = traj.rows().map(|r| r.iter().zip(&coef).map(|(y, (a, b))| a * y + b).collect()).collect();
        let moved_traj = Trajectory::new(rows, None).unwrap();
        prop_assert_eq!(local_decode(&model, &traj).unwrap(), local_decode(&moved, &moved_traj).unwrap());
    }

    #[test]
    fn matched_loss_never_exceeds_raw(pred in prop::collection::vec(0usize..3, 1..50), seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let truth: Vec<usize> = pred.iter().map(|_| rng.random_range(0..3)).collect();
        let raw = zero_one_loss(&pred, &truth, 3, false).unwrap().zero_one;
        let matched = zero_one_loss(&pred, &truth, 3, true).unwrap();
        prop_assert!(matched.zero_one <= raw + 1e-15);
        let relabeled: Vec<usize> = pred.iter().map(|&p| matched.permutation[p]).collect();
        prop_assert!((zero_one_loss(&relabeled, &truth, 3, false).unwrap().zero_one - matched.zero_one).abs() < 1e-15);
    }
}

#[test]
fn monte_carlo_matches_closed_forms() {
    for (family, theta) in [(CopulaFamily::Fgm, 1.0), (CopulaFamily::Gauss, 0.6), (CopulaFamily::Frank, 3.0)] {
        let model = symmetric_mixture_model(family, theta).unwrap();
        let (mean, se) = monte_carlo_loss(&model, 100, 200, &mut seeded(31)).unwrap();
        let exact = closed_form_mixture_loss(family, theta).unwrap();
        assert!((mean - exact).abs() < 3.0 * se, "{family} θ={theta}: {mean} ± {se} vs {exact}");
    }
}

#[test]
fn closed_form_reference_values() {
    assert_eq!(closed_form_mixture_loss(CopulaFamily::Fgm, 1.0).unwrap(), 0.375);
    assert!((closed_form_mixture_loss(CopulaFamily::Gauss, 0.0).unwrap() - 0.5).abs() < 1e-15);
    assert!(closed_form_mixture_loss(CopulaFamily::Frank, 0.0).unwrap() == 0.5);
    assert!(closed_form_mixture_loss(CopulaFamily::Frank, 100.0).unwrap() < 0.014);
    assert!(closed_form_mixture_loss(CopulaFamily::Clayton, 2.0).is_err());
    assert!(closed_form_mixture_loss(CopulaFamily::Frank, -1.0).is_err());
}

#[test]
fn strong_dependence_decodes_almost_perfectly() {
    let model = symmetric_mixture_model(CopulaFamily::Frank, 100.0).unwrap();
    let (mean, _) = monte_carlo_loss(&model, 200, 50, &mut seeded(32)).unwrap();
    assert!(mean < 0.02, "{mean}");
}

#[test]
fn independent_states_decode_at_chance() {
    let model = symmetric_mixture_model(CopulaFamily::Frank, 0.0).unwrap();
    let traj = model.simulate(4000, &mut seeded(33)).unwrap();
    let pred = local_decode(&model, &traj).unwrap();
    assert!(pred.iter().all(|&p| p == 0));
    let loss = zero_one_loss(&pred, traj.labels().unwrap(), 2, false).unwrap().zero_one;
    assert!((loss - 0.5).abs() < 0.03, "{loss}");
}

/// Misclassification of a state whose copula tightens towards comonotonicity
/// while its competitor stays fixed.
#[test]
fn misclassification_shrinks_as_dependence_grows() {
    let n = Margin::gaussian(0.0, 1.0).unwrap();
    let mut prev: Option<(f64, f64)> = None;
    for tau in [0.5, 0.8, 0.95, 0.99] {
        let states = vec![
            StateSpec::new(vec![n, n], tau_to_theta(CopulaFamily::Frank, tau).unwrap()),
            StateSpec::new(vec![n, n], Copula::new(CopulaFamily::Frank, 2.0).unwrap()),
        ];
        let model = CopulaHmm::new(vec![0.5, 0.5], vec![vec![0.5, 0.5]; 2], states).unwrap();
        let (m, se) = mixture_misclassification(&model, 0, &[0.5, 0.5], 20_000, &mut seeded(34)).unwrap();
        if let Some((pm, pse)) = prev {
            assert!(m < pm + 3.0 * (se * se + pse * pse).sqrt(), "τ={tau}: {m} after {pm}");
        }
        prev = Some((m, se));
    }
    assert!(prev.unwrap().0 < 0.05);
}

/// When the neighbours always favour state 0, its decoding error is bounded
/// by the unweighted density-comparison error.
#[test]
fn neighbour_dominated_state_is_bounded_by_density_comparison() {
    let gamma = vec![vec![0.8, 0.2], vec![0.7, 0.3]];
    for a in 0..2 {
        for b in 0..2 {
            assert!(gamma[a][0] * gamma[0][b] >= gamma[a][1] * gamma[1][b]);
        }
    }
    let n = Margin::gaussian(0.0, 1.0).unwrap();
    let states = vec![
        StateSpec::new(vec![n, n], Copula::new(CopulaFamily::Frank, 5.0).unwrap()),
        StateSpec::new(vec![n, Margin::gaussian(0.3, 1.0).unwrap()], Copula::new(CopulaFamily::Frank, -5.0).unwrap()),
    ];
    let model = CopulaHmm::new(vec![7.0 / 9.0, 2.0 / 9.0], gamma, states).unwrap();
    let (bound, se_b) = mixture_misclassification(&model, 0, &[0.5, 0.5], 50_000, &mut seeded(35)).unwrap();
    let (cond, se_c) = conditional_misclassification(&model, 0, 200, 200, &mut seeded(36)).unwrap();
    assert!(cond <= bound + 3.0 * (se_b * se_b + se_c * se_c).sqrt(), "{cond} vs bound {bound}");
}

#[test]
fn loss_validation() {
    assert!(zero_one_loss(&[0, 1], &[0], 2, false).is_err());
    assert!(zero_one_loss(&[], &[], 2, false).is_err());
    assert!(zero_one_loss(&[2], &[0], 2, false).is_err());
    assert!(zero_one_loss(&[0; 9], &[0; 9], 9, true).is_err());
    let r = zero_one_loss(&[1, 1, 0], &[0, 0, 1], 2, true).unwrap();
    assert_eq!(r.zero_one, 0.0);
    assert_eq!(r.permutation, vec![1, 0]);
}
