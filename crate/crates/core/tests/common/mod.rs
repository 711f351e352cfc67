#![allow(dead_code)]

use chmm_core::copulas::{tau_to_theta, Copula, CopulaFamily};
use chmm_core::margins::Margin;
use chmm_core::model::{CopulaHmm, StateSpec};
use rand::Rng;

pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_copula<R: Rng>(rng: &mut R) -> Copula {
    let fam = CopulaFamily::ALL[rng.random_range(0..CopulaFamily::ALL.len())];
    match fam {
        CopulaFamily::Independence => Copula::independence(),
        CopulaFamily::Fgm => Copula::new(fam, rng.random_range(-0.95..0.95)).unwrap(),
        CopulaFamily::Frank | CopulaFamily::Gauss => tau_to_theta(fam, rng.random_range(-0.8..0.8)).unwrap(),
        _ => tau_to_theta(fam, rng.random_range(0.05..0.8)).unwrap(),
    }
}

pub fn random_margin<R: Rng>(rng: &mut R) -> Margin {
    if rng.random_bool(0.7) {
        Margin::gaussian(rng.random_range(-2.0..2.0), rng.random_range(0.5..2.0)).unwrap()
    } else {
        Margin::exponential(rng.random_range(0.5..2.0)).unwrap()
    }
}

/// Random bivariate model; with `mixture` every row of Γ equals π.
pub fn random_model<R: Rng>(rng: &mut R, k: usize, mixture: bool) -> CopulaHmm {
    let pi = random_simplex(rng, k);
    let gamma = if mixture { vec![pi.clone(); k] } else { (0..k).map(|_| random_simplex(rng, k)).collect() };
    let states = (0..k)
        .map(|_| StateSpec::new(vec![random_margin(rng), random_margin(rng)], random_copula(rng)))
        .collect();
    CopulaHmm::new(pi, gamma, states).unwrap()
}

/// Two-state Frank HMM with persistent transitions.
pub fn two_state_frank() -> CopulaHmm {
    let g = |m, s| Margin::gaussian(m, s).unwrap();
    CopulaHmm::new(
        vec![0.4, 0.6],
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![
            StateSpec::new(vec![g(0.0, 1.0), g(0.0, 1.0)], Copula::new(CopulaFamily::Frank, 6.0).unwrap()),
            StateSpec::new(vec![g(1.5, 1.0), g(1.0, 0.8)], Copula::new(CopulaFamily::Frank, -4.0).unwrap()),
        ],
    )
    .unwrap()
}
