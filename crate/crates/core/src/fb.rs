//! Log-space forward-backward recursions and an enumeration oracle.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::model::{CopulaHmm, Trajectory};
use crate::numeric::{log_add_exp, log_sum_exp};

/// Largest number of state paths `brute_force_posterior` will enumerate.
pub const MAX_ENUMERATED_PATHS: f64 = 1e6;

/// E-step output: state and transition posteriors plus the log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummaries {
    /// K×T, `u_hat[[k, t]] = P(X_t = k | y)`.
    pub u_hat: Array2<f64>,
    /// K×K×(T-1), `v_hat[[j, k, t]] = P(X_t = j, X_{t+1} = k | y)`.
    pub v_hat: Array3<f64>,
    pub log_likelihood: f64,
}

impl PosteriorSummaries {
    pub fn n_states(&self) -> usize {
        self.u_hat.nrows()
    }

    pub fn len(&self) -> usize {
        self.u_hat.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.u_hat.ncols() == 0
    }
}

fn ln_matrix(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|r| r.iter().map(|x| x.ln()).collect()).collect()
}

/// Posterior state and transition probabilities by the scaled log-space recursions.
pub fn forward_backward(model: &CopulaHmm, traj: &Trajectory) -> Result<PosteriorSummaries> {
    let log_b = model.log_emissions(traj)?;
    forward_backward_from_emissions(model, &log_b)
}

/// Forward-backward given a precomputed T×K log-emission matrix.
pub fn forward_backward_from_emissions(model: &CopulaHmm, log_b: &Array2<f64>) -> Result<PosteriorSummaries> {
    let n = log_b.nrows();
    let k = model.n_states();
    let ln_pi: Vec<f64> = model.pi().iter().map(|p| p.ln()).collect();
    let ln_g = ln_matrix(model.gamma());

    // alpha[t] holds log α_t normalized so that lse = 0; c[t] is the removed log scale
    let mut alpha = Array2::<f64>::zeros((n, k));
    let mut c = vec![0.0; n];
    let mut buf = vec![0.0; k];
    for t in 0..n {
        for j in 0..k {
            buf[j] = if t == 0 {
                ln_pi[j] + log_b[[0, j]]
            } else {
                log_sum_exp((0..k).map(|i| alpha[[t - 1, i]] + ln_g[i][j])) + log_b[[t, j]]
            };
        }
        let s = log_sum_exp(buf.iter().copied());
        if !s.is_finite() {
            return Err(Error::NonFiniteDensity { t: t + 1, state: 0 });
        }
        c[t] = s;
        for j in 0..k {
            alpha[[t, j]] = buf[j] - s;
        }
    }

    let mut beta = Array2::<f64>::zeros((n, k));
    for t in (0..n.saturating_sub(1)).rev() {
        for i in 0..k {
            beta[[t, i]] = log_sum_exp((0..k).map(|j| ln_g[i][j] + log_b[[t + 1, j]] + beta[[t + 1, j]])) - c[t + 1];
        }
    }

    let mut u_hat = Array2::<f64>::zeros((k, n));
    for t in 0..n {
        let mut total = 0.0;
        for j in 0..k {
            let v = (alpha[[t, j]] + beta[[t, j]]).exp();
            u_hat[[j, t]] = v;
            total += v;
        }
        for j in 0..k {
            u_hat[[j, t]] /= total;
        }
    }

    let mut v_hat = Array3::<f64>::zeros((k, k, n.saturating_sub(1)));
    for t in 0..n.saturating_sub(1) {
        let mut total = 0.0;
        for i in 0..k {
            for j in 0..k {
                let v = (alpha[[t, i]] + ln_g[i][j] + log_b[[t + 1, j]] + beta[[t + 1, j]] - c[t + 1]).exp();
                v_hat[[i, j, t]] = v;
                total += v;
            }
        }
        v_hat.index_axis_mut(ndarray::Axis(2), t).mapv_inplace(|v| v / total);
    }

    Ok(PosteriorSummaries { u_hat, v_hat, log_likelihood: c.iter().sum() })
}

/// log p(y_{1:T}) by the forward pass.
pub fn log_likelihood(model: &CopulaHmm, traj: &Trajectory) -> Result<f64> {
    let log_b = model.log_emissions(traj)?;
    let k = model.n_states();
    let ln_g = ln_matrix(model.gamma());
    let mut alpha: Vec<f64> = (0..k).map(|j| model.pi()[j].ln() + log_b[[0, j]]).collect();
    let mut next = vec![0.0; k];
    let mut total = 0.0;
    for t in 0..log_b.nrows() {
        if t > 0 {
            for j in 0..k {
                next[j] = log_sum_exp((0..k).map(|i| alpha[i] + ln_g[i][j])) + log_b[[t, j]];
            }
            std::mem::swap(&mut alpha, &mut next);
        }
        let s = log_sum_exp(alpha.iter().copied());
        if !s.is_finite() {
            return Err(Error::NonFiniteDensity { t: t + 1, state: 0 });
        }
        total += s;
        alpha.iter_mut().for_each(|a| *a -= s);
    }
    Ok(total)
}

/// Exact posteriors by summing over all K^T state paths.
pub fn brute_force_posterior(model: &CopulaHmm, traj: &Trajectory) -> Result<PosteriorSummaries> {
    let k = model.n_states();
    let n = traj.len();
    let paths = (k as f64).powi(n as i32);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(Error::InstanceTooLarge { paths });
    }
    let log_b = model.log_emissions(traj)?;
    let ln_pi: Vec<f64> = model.pi().iter().map(|p| p.ln()).collect();
    let ln_g = ln_matrix(model.gamma());

    let neg = f64::NEG_INFINITY;
    let mut lu = Array2::from_elem((k, n), neg);
    let mut lv = Array3::from_elem((k, k, n.saturating_sub(1)), neg);
    let mut total = neg;
    let mut x = vec![0usize; n];
    for _ in 0..paths as usize {
        let mut lp = ln_pi[x[0]] + log_b[[0, x[0]]];
        for t in 1..n {
            lp += ln_g[x[t - 1]][x[t]] + log_b[[t, x[t]]];
        }
        if lp > neg {
            total = log_add_exp(total, lp);
            for t in 0..n {
                lu[[x[t], t]] = log_add_exp(lu[[x[t], t]], lp);
                if t + 1 < n {
                    lv[[x[t], x[t + 1], t]] = log_add_exp(lv[[x[t], x[t + 1], t]], lp);
                }
            }
        }
        // odometer increment, last position fastest
        for t in (0..n).rev() {
            x[t] += 1;
            if x[t] < k {
                break;
            }
            x[t] = 0;
        }
    }
    if !total.is_finite() {
        return Err(Error::NonFiniteDensity { t: 0, state: 0 });
    }
    Ok(PosteriorSummaries {
        u_hat: lu.mapv(|v| (v - total).exp()),
        v_hat: lv.mapv(|v| (v - total).exp()),
        log_likelihood: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copulas::{Copula, CopulaFamily};
    use crate::margins::Margin;
    use crate::model::StateSpec;
    use crate::numeric::norm_ln_pdf;

    fn two_state() -> CopulaHmm {
        let n = Margin::gaussian(0.0, 1.0).unwrap();
        let m = Margin::gaussian(1.0, 0.7).unwrap();
        CopulaHmm::new(
            vec![0.3, 0.7],
            vec![vec![0.8, 0.2], vec![0.35, 0.65]],
            vec![
                StateSpec::new(vec![n, n], Copula::new(CopulaFamily::Frank, -4.0).unwrap()),
                StateSpec::new(vec![m, n], Copula::new(CopulaFamily::Clayton, 2.0).unwrap()),
            ],
        )
        .unwrap()
    }

    fn traj() -> Trajectory {
        Trajectory::new(
            vec![vec![0.1, -0.4], vec![1.2, 0.9], vec![-0.7, 0.3], vec![0.5, 0.6]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_state_is_trivial() {
        let n = Margin::gaussian(0.0, 1.0).unwrap();
        let m = CopulaHmm::new(vec![1.0], vec![vec![1.0]], vec![StateSpec::new(vec![n, n], Copula::independence())]).unwrap();
        let tr = Trajectory::new(vec![vec![0.0, 0.0]], None).unwrap();
        assert!((log_likelihood(&m, &tr).unwrap() - 2.0 * norm_ln_pdf(0.0)).abs() < 1e-15);
        let p = forward_backward(&m, &traj()).unwrap();
        assert!(p.u_hat.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(p.v_hat.iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert_eq!(p.v_hat.shape(), &[1, 1, 3]);
    }

    #[test]
    fn matches_enumeration() {
        let m = two_state();
        let a = forward_backward(&m, &traj()).unwrap();
        let b = brute_force_posterior(&m, &traj()).unwrap();
        let du = (&a.u_hat - &b.u_hat).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
        let dv = (&a.v_hat - &b.v_hat).mapv(f64::abs).fold(0.0f64, |x, &y| x.max(y));
        assert!(du < 1e-12 && dv < 1e-12, "{du} {dv}");
        assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-10);
        assert!((log_likelihood(&m, &traj()).unwrap() - a.log_likelihood).abs() < 1e-12);
    }

    #[test]
    fn enumeration_guard() {
        let m = two_state();
        let rows = vec![vec![0.0, 0.0]; 21];
        let tr = Trajectory::new(rows, None).unwrap();
        assert!(matches!(brute_force_posterior(&m, &tr), Err(Error::InstanceTooLarge { .. })));
    }
}
