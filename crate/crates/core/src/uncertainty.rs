//! Standard errors for η*: Monte Carlo Godambe sandwich and parametric bootstrap.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode_loss::{decode_posterior, zero_one_loss};
use crate::eifm::{estimating_function_psi, fit, numerical_jacobian, FitConfig};
use crate::error::{Error, Result};
use crate::model::CopulaHmm;
use crate::numeric::norm_quantile;
use crate::rng::{draw_seeds, seeded};

/// Largest tolerated condition number of Ĥ.
pub const MAX_CONDITION: f64 = 1e12;

/// Largest fraction of bootstrap replicates that may fail.
pub const MAX_DROP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UncertaintyMethod {
    GodambeMonteCarlo,
    ParametricBootstrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyReport {
    pub method: UncertaintyMethod,
    pub names: Vec<String>,
    pub estimate: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub level: f64,
    pub replicates: usize,
    pub dropped: usize,
    /// Interval adjusted: truncated to [0, 1] for probabilities, or widened to
    /// contain the estimate for percentile intervals.
    pub flagged: Vec<bool>,
}

/// Monte Carlo ingredients of the sandwich: per-replicate ψ, Ĝ and Ĥ.
#[derive(Debug, Clone, PartialEq)]
pub struct GodambeMatrices {
    pub psi: Vec<Vec<f64>>,
    pub g_hat: Vec<Vec<f64>>,
    pub h_hat: Vec<Vec<f64>>,
}

fn to_dmatrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

/// Sample covariance (divisor n - 1) with a fixed-order reduction.
pub fn sample_covariance(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = samples.len();
    let p = samples.first().map_or(0, |s| s.len());
    let mean: Vec<f64> = (0..p).map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; p]; p];
    for s in samples {
        for a in 0..p {
            for b in a..p {
                cov[a][b] += (s[a] - mean[a]) * (s[b] - mean[b]);
            }
        }
    }
    let denom = (n as f64 - 1.0).max(1.0);
    for a in 0..p {
        for b in a..p {
            cov[a][b] /= denom;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// ψ_T(η*; Y) for trajectories simulated under η*, one per seed.
pub fn psi_samples(model: &CopulaHmm, len: usize, seeds: &[u64]) -> Result<Vec<Vec<f64>>> {
    seeds
        .par_iter()
        .map(|&s| {
            let tr = model.simulate(len, &mut seeded(s))?;
            estimating_function_psi(model, std::slice::from_ref(&tr))
        })
        .collect()
}

/// Ĝ (sample covariance of ψ) and Ĥ (mean of -∂ψ/∂η) over simulated trajectories.
pub fn godambe_matrices(model: &CopulaHmm, len: usize, seeds: &[u64]) -> Result<GodambeMatrices> {
    let n_prob = model.probability_param_count();
    let eta = model.param_vector();
    let per_rep = seeds
        .par_iter()
        .map(|&s| {
            let tr = model.simulate(len, &mut seeded(s))?;
            let data = std::slice::from_ref(&tr);
            let psi = estimating_function_psi(model, data)?;
            let jac = numerical_jacobian(
                |e| estimating_function_psi(&model.with_param_vector(e)?, data),
                &eta,
                |i| i < n_prob,
            )?;
            Ok((psi, jac))
        })
        .collect::<Result<Vec<_>>>()?;
    let p = eta.len();
    let mut h_hat = vec![vec![0.0; p]; p];
    for (_, jac) in &per_rep {
        for a in 0..p {
            for b in 0..p {
                h_hat[a][b] -= jac[a][b];
            }
        }
    }
    let n = per_rep.len() as f64;
    h_hat.iter_mut().flatten().for_each(|x| *x /= n);
    let psi: Vec<Vec<f64>> = per_rep.into_iter().map(|(p, _)| p).collect();
    Ok(GodambeMatrices { g_hat: sample_covariance(&psi), psi, h_hat })
}

fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence level {level} outside (0, 1)")));
    }
    Ok(norm_quantile(0.5 + level / 2.0))
}

/// Sandwich covariance Ĥ⁻¹ĜĤ⁻ᵀ with Wald intervals.
pub fn godambe_monte_carlo<R: Rng + ?Sized>(
    model: &CopulaHmm,
    len: usize,
    replicates: usize,
    level: f64,
    rng: &mut R,
) -> Result<UncertaintyReport> {
    let seeds = draw_seeds(rng, replicates);
    godambe_with_seeds(model, len, &seeds, level)
}

pub fn godambe_with_seeds(model: &CopulaHmm, len: usize, seeds: &[u64], level: f64) -> Result<UncertaintyReport> {
    let z = z_value(level)?;
    let p = model.n_params();
    if seeds.len() < p + 1 {
        return Err(Error::InsufficientData(format!("{} replicates for {p} parameters", seeds.len())));
    }
    let mats = godambe_matrices(model, len, seeds)?;
    let h = to_dmatrix(&mats.h_hat);
    let sv = h.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition < MAX_CONDITION) {
        return Err(Error::SingularMatrix { condition });
    }
    let h_inv = h.try_inverse().ok_or(Error::SingularMatrix { condition })?;
    let mut cov = &h_inv * to_dmatrix(&mats.g_hat) * h_inv.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    let covariance = to_rows(&cov);
    let estimate = model.param_vector();
    let std_errors: Vec<f64> = (0..p).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let n_prob = model.probability_param_count();
    let mut flagged = vec![false; p];
    let intervals = (0..p)
        .map(|i| {
            let (mut lo, mut hi) = (estimate[i] - z * std_errors[i], estimate[i] + z * std_errors[i]);
            if i < n_prob && (lo < 0.0 || hi > 1.0) {
                lo = lo.max(0.0);
                hi = hi.min(1.0);
                flagged[i] = true;
            }
            (lo, hi)
        })
        .collect();
    Ok(UncertaintyReport {
        method: UncertaintyMethod::GodambeMonteCarlo,
        names: model.param_names(),
        estimate,
        covariance,
        std_errors,
        intervals,
        level,
        replicates: seeds.len(),
        dropped: 0,
        flagged,
    })
}

/// Refit one simulated replicate starting at η* and relabel it to the
/// generating model's state order. `Ok(None)` marks a dropped replicate.
pub fn bootstrap_replicate(model: &CopulaHmm, len: usize, seed: u64, config: &FitConfig) -> Result<Option<Vec<f64>>> {
    let tr = model.simulate(len, &mut seeded(seed))?;
    let res = match fit(std::slice::from_ref(&tr), model, config) {
        Ok(r) if r.trace.converged => r,
        _ => return Ok(None),
    };
    let pred = decode_posterior(&res.posteriors[0]);
    let truth = tr.labels().unwrap_or_default();
    let report = zero_one_loss(&pred, truth, model.n_states(), true)?;
    // fitted state p plays true state perm[p]; invert to get new order
    let mut order = vec![0; model.n_states()];
    for (p, &t) in report.permutation.iter().enumerate() {
        order[t] = p;
    }
    Ok(Some(res.model.permute_states(&order)?.param_vector()))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Covariance of refitted estimates over simulate-then-refit replicates, with
/// percentile intervals.
pub fn parametric_bootstrap<R: Rng + ?Sized>(
    model: &CopulaHmm,
    len: usize,
    replicates: usize,
    config: &FitConfig,
    level: f64,
    rng: &mut R,
) -> Result<UncertaintyReport> {
    let seeds = draw_seeds(rng, replicates);
    bootstrap_with_seeds(model, len, &seeds, config, level)
}

pub fn bootstrap_with_seeds(
    model: &CopulaHmm,
    len: usize,
    seeds: &[u64],
    config: &FitConfig,
    level: f64,
) -> Result<UncertaintyReport> {
    z_value(level)?;
    if seeds.len() < 2 {
        return Err(Error::InsufficientData("bootstrap needs at least 2 replicates".into()));
    }
    let results = seeds
        .par_iter()
        .map(|&s| bootstrap_replicate(model, len, s, config))
        .collect::<Result<Vec<_>>>()?;
    let total = results.len();
    let estimates: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let dropped = total - estimates.len();
    if dropped as f64 > MAX_DROP_FRACTION * total as f64 || estimates.len() < 2 {
        return Err(Error::TooManyDropped { dropped, total });
    }
    let covariance = sample_covariance(&estimates);
    let estimate = model.param_vector();
    let p = estimate.len();
    let std_errors: Vec<f64> = (0..p).map(|i| covariance[i][i].max(0.0).sqrt()).collect();
    let alpha = (1.0 - level) / 2.0;
    let mut flagged = vec![false; p];
    let intervals = (0..p)
        .map(|i| {
            let mut col: Vec<f64> = estimates.iter().map(|e| e[i]).collect();
            col.sort_by(f64::total_cmp);
            let (mut lo, mut hi) = (percentile(&col, alpha), percentile(&col, 1.0 - alpha));
            if estimate[i] < lo || estimate[i] > hi {
                lo = lo.min(estimate[i]);
                hi = hi.max(estimate[i]);
                flagged[i] = true;
            }
            (lo, hi)
        })
        .collect();
    Ok(UncertaintyReport {
        method: UncertaintyMethod::ParametricBootstrap,
        names: model.param_names(),
        estimate,
        covariance,
        std_errors,
        intervals,
        level,
        replicates: total,
        dropped,
        flagged,
    })
}
