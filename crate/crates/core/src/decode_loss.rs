//! Local decoding, zero-one loss with label matching, and loss oracles.

use rand::Rng;
use rayon::prelude::*;

use crate::copulas::CopulaFamily;
use crate::error::{Error, Result};
use crate::fb::{forward_backward, PosteriorSummaries};
use crate::model::{CopulaHmm, Trajectory};
use crate::numeric::mean_and_se;
use crate::rng::{draw_seeds, seeded};

/// Largest state count for exhaustive label matching.
pub const MAX_MATCHED_STATES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub zero_one: f64,
    /// Fraction of time points in each true state that were classified
    /// correctly; NaN for states that never occur in the truth.
    pub per_state_accuracy: Vec<f64>,
    /// `permutation[p]` is the true label assigned to predicted label `p`.
    pub permutation: Vec<usize>,
}

/// Column-wise argmax of û; ties go to the smallest index.
pub fn decode_posterior(post: &PosteriorSummaries) -> Vec<usize> {
    post.u_hat
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (k, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Most probable state at each time point given all observations.
pub fn local_decode(model: &CopulaHmm, traj: &Trajectory) -> Result<Vec<usize>> {
    Ok(decode_posterior(&forward_backward(model, traj)?))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Zero-one loss between predicted and true labels over `n_states` labels,
/// optionally minimized over all relabelings of the prediction.
pub fn zero_one_loss(predicted: &[usize], truth: &[usize], n_states: usize, match_labels: bool) -> Result<LossReport> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch { left: predicted.len(), right: truth.len() });
    }
    if predicted.is_empty() {
        return Err(Error::InsufficientData("empty label sequences".into()));
    }
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&l| l >= n_states) {
        return Err(Error::InvalidState { index: bad, count: n_states });
    }
    if match_labels && n_states > MAX_MATCHED_STATES {
        return Err(Error::TooManyStates(n_states));
    }
    let mut confusion = vec![vec![0usize; n_states]; n_states];
    for (&p, &t) in predicted.iter().zip(truth) {
        confusion[p][t] += 1;
    }
    let identity: Vec<usize> = (0..n_states).collect();
    let perm = if match_labels {
        let mut best = identity.clone();
        let mut best_hits = 0;
        for perm in permutations(n_states) {
            let hits: usize = perm.iter().enumerate().map(|(p, &t)| confusion[p][t]).sum();
            if hits > best_hits {
                best_hits = hits;
                best = perm;
            }
        }
        best
    } else {
        identity
    };
    let mut correct = vec![0usize; n_states];
    let mut count = vec![0usize; n_states];
    for (&p, &t) in predicted.iter().zip(truth) {
        count[t] += 1;
        if perm[p] == t {
            correct[t] += 1;
        }
    }
    let n = predicted.len() as f64;
    Ok(LossReport {
        zero_one: 1.0 - correct.iter().sum::<usize>() as f64 / n,
        per_state_accuracy: correct
            .iter()
            .zip(&count)
            .map(|(&c, &m)| if m == 0 { f64::NAN } else { c as f64 / m as f64 })
            .collect(),
        permutation: perm,
    })
}

/// Expected local-decoding loss of the equal-weight two-state mixture with
/// copulas at -θ and θ and identical margins.
pub fn closed_form_mixture_loss(family: CopulaFamily, theta: f64) -> Result<f64> {
    if !(theta >= 0.0) {
        return Err(Error::InvalidParameter(format!("θ must be ≥ 0, got {theta}")));
    }
    match family {
        CopulaFamily::Frank => {
            if theta < 1e-6 {
                // ½ - θ/16 + O(θ³)
                Ok(0.5 - theta / 16.0)
            } else {
                // ½ - (2/θ) ln cosh(θ/4) without the cancellation
                Ok(2.0 / theta * (std::f64::consts::LN_2 - (-theta / 2.0).exp().ln_1p()))
            }
        }
        CopulaFamily::Gauss => {
            if theta > 1.0 {
                return Err(Error::InvalidParameter(format!("ρ must be ≤ 1, got {theta}")));
            }
            Ok(theta.acos() / std::f64::consts::PI)
        }
        CopulaFamily::Fgm => {
            if theta > 1.0 {
                return Err(Error::InvalidParameter(format!("θ must be ≤ 1, got {theta}")));
            }
            Ok(0.5 - theta / 8.0)
        }
        other => Err(Error::NoClosedForm(other)),
    }
}

fn raw_loss(model: &CopulaHmm, traj: &Trajectory) -> Result<f64> {
    let pred = local_decode(model, traj)?;
    let truth = traj.labels().ok_or_else(|| Error::InvalidTrajectory("missing labels".into()))?;
    Ok(zero_one_loss(&pred, truth, model.n_states(), false)?.zero_one)
}

/// Mean and standard error of the unmatched local-decoding loss over simulated
/// trajectories decoded under the generating model.
pub fn monte_carlo_loss<R: Rng + ?Sized>(model: &CopulaHmm, len: usize, replicates: usize, rng: &mut R) -> Result<(f64, f64)> {
    let seeds = draw_seeds(rng, replicates);
    let losses = seeds
        .par_iter()
        .map(|&s| raw_loss(model, &model.simulate(len, &mut seeded(s))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_se(&losses))
}

/// Loss of the true model and of `model_independent` decoding the same
/// simulated data.
pub fn independence_baseline_loss<R: Rng + ?Sized>(
    model_true: &CopulaHmm,
    model_independent: &CopulaHmm,
    len: usize,
    replicates: usize,
    rng: &mut R,
) -> Result<((f64, f64), (f64, f64))> {
    if model_true.n_states() != model_independent.n_states() || model_true.dim() != model_independent.dim() {
        return Err(Error::InvalidModel("models differ in K or d".into()));
    }
    let seeds = draw_seeds(rng, replicates);
    let pairs = seeds
        .par_iter()
        .map(|&s| {
            let traj = model_true.simulate(len, &mut seeded(s))?;
            Ok((raw_loss(model_true, &traj)?, raw_loss(model_independent, &traj)?))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok((mean_and_se(&a), mean_and_se(&b)))
}

/// Monte Carlo estimate of ∫ 1{ω_k h_k(y) < max_{j≠k} ω_j h_j(y)} dH_k(y).
pub fn mixture_misclassification<R: Rng + ?Sized>(
    model: &CopulaHmm,
    state: usize,
    weights: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let k = model.n_states();
    model.state(state)?;
    if weights.len() != k {
        return Err(Error::LengthMismatch { left: weights.len(), right: k });
    }
    let path = vec![state; samples];
    let traj = model.simulate_observations(&path, rng)?;
    let log_b = model.log_emissions(&traj)?;
    let hits: Vec<f64> = (0..samples)
        .map(|t| {
            let own = weights[state].ln() + log_b[[t, state]];
            let other = (0..k)
                .filter(|&j| j != state)
                .map(|j| weights[j].ln() + log_b[[t, j]])
                .fold(f64::NEG_INFINITY, f64::max);
            if own < other { 1.0 } else { 0.0 }
        })
        .collect();
    Ok(mean_and_se(&hits))
}

/// Rate at which time points with true state `state` are locally decoded as
/// another state, estimated over simulated trajectories.
pub fn conditional_misclassification<R: Rng + ?Sized>(
    model: &CopulaHmm,
    state: usize,
    len: usize,
    replicates: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    model.state(state)?;
    let seeds = draw_seeds(rng, replicates);
    let per_rep = seeds
        .par_iter()
        .map(|&s| {
            let traj = model.simulate(len, &mut seeded(s))?;
            let pred = local_decode(model, &traj)?;
            let truth = traj.labels().unwrap_or_default();
            let mut n = 0usize;
            let mut wrong = 0usize;
            for (&p, &t) in pred.iter().zip(truth) {
                if t == state {
                    n += 1;
                    wrong += usize::from(p != state);
                }
            }
            Ok((wrong, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let rates: Vec<f64> = per_rep.iter().filter(|(_, n)| *n > 0).map(|&(w, n)| w as f64 / n as f64).collect();
    if rates.is_empty() {
        return Err(Error::InsufficientData(format!("state {} never visited", state + 1)));
    }
    Ok(mean_and_se(&rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};

    #[test]
    fn argmax_and_ties() {
        let post = PosteriorSummaries {
            u_hat: array![[0.2, 0.5], [0.7, 0.5], [0.1, 0.0]],
            v_hat: Array3::zeros((3, 3, 1)),
            log_likelihood: 0.0,
        };
        assert_eq!(decode_posterior(&post), vec![1, 0]);
    }

    #[test]
    fn loss_examples() {
        let truth = [0, 1, 1, 0, 2];
        let r = zero_one_loss(&truth, &truth, 3, false).unwrap();
        assert_eq!(r.zero_one, 0.0);
        let swapped: Vec<usize> = truth.iter().map(|&l| match l { 0 => 1, 1 => 0, x => x }).collect();
        let r = zero_one_loss(&swapped, &truth, 3, true).unwrap();
        assert_eq!(r.zero_one, 0.0);
        assert_eq!(r.permutation, vec![1, 0, 2]);
        let raw = zero_one_loss(&swapped, &truth, 3, false).unwrap();
        assert!((raw.zero_one - 0.8).abs() < 1e-15);
        assert!(zero_one_loss(&[0, 1], &[0], 2, true).is_err());
        assert!(matches!(zero_one_loss(&[0], &[0], 9, true), Err(Error::TooManyStates(9))));
    }

    #[test]
    fn closed_forms() {
        assert_eq!(closed_form_mixture_loss(CopulaFamily::Fgm, 1.0).unwrap(), 0.375);
        assert_eq!(closed_form_mixture_loss(CopulaFamily::Gauss, 0.0).unwrap(), 0.5);
        assert!(closed_form_mixture_loss(CopulaFamily::Gauss, 1.0).unwrap().abs() < 1e-15);
        assert!(closed_form_mixture_loss(CopulaFamily::Frank, 1e6).unwrap() < 1e-5);
        assert!((closed_form_mixture_loss(CopulaFamily::Frank, 1e-9).unwrap() - 0.5).abs() < 1e-9);
        assert!(matches!(closed_form_mixture_loss(CopulaFamily::Clayton, 1.0), Err(Error::NoClosedForm(_))));
    }
}
