//! Copula family selection by the Cramér–von Mises distance between the
//! empirical copula and a fitted parametric copula.

use rayon::prelude::*;
use serde::Serialize;

use crate::copulas::{Copula, CopulaFamily};
use crate::eifm::{copula_from_empirical_tau, default_theta_bounds, optimize_copula_theta};
use crate::error::{Error, Result};
use crate::numeric::kendall_tau;

/// Componentwise ranks scaled by 1/(n+1); ties get average ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoObservations {
    columns: Vec<Vec<f64>>,
}

impl PseudoObservations {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, h: usize) -> &[f64] {
        &self.columns[h]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// Rows of a bivariate sample.
    pub fn pairs(&self) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::InvalidTrajectory(format!("bivariate sample required, got d={}", self.dim())));
        }
        Ok(self.columns[0].iter().zip(&self.columns[1]).map(|(&a, &b)| [a, b]).collect())
    }
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        // positions i..=j share ranks i+1..=j+1
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pseudo-observations of the rows of an n×d sample.
pub fn pseudo_observations(rows: &[Vec<f64>]) -> Result<PseudoObservations> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("pseudo-observations need n ≥ 2, got {n}")));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidTrajectory("rows must share a positive dimension".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::InvalidTrajectory("non-finite observation".into()));
    }
    let scale = 1.0 / (n as f64 + 1.0);
    let columns = (0..d)
        .map(|h| {
            let col: Vec<f64> = rows.iter().map(|r| r[h]).collect();
            average_ranks(&col).into_iter().map(|r| r * scale).collect()
        })
        .collect();
    Ok(PseudoObservations { columns })
}

/// C_n(u_i) = (1/n) #{j : u_j ≤ u_i componentwise} for every sample point,
/// by a sweep over the first coordinate with a Fenwick tree on the second.
pub fn empirical_copula_at_sample(u: &[[f64; 2]]) -> Vec<f64> {
    let n = u.len();
    let mut second: Vec<f64> = u.iter().map(|p| p[1]).collect();
    second.sort_by(f64::total_cmp);
    second.dedup();
    let rank = |v: f64| second.partition_point(|&s| s <= v);
    let mut tree = vec![0usize; second.len() + 1];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| u[a][0].total_cmp(&u[b][0]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && u[order[j + 1]][0] == u[order[i]][0] {
            j += 1;
        }
        for &k in &order[i..=j] {
            let mut r = rank(u[k][1]);
            while r < tree.len() {
                tree[r] += 1;
                r += r & r.wrapping_neg();
            }
        }
        for &k in &order[i..=j] {
            let mut r = rank(u[k][1]);
            let mut c = 0;
            while r > 0 {
                c += tree[r];
                r -= r & r.wrapping_neg();
            }
            out[k] = c as f64 / n as f64;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvmFit {
    pub family: CopulaFamily,
    pub theta: f64,
    pub statistic: f64,
}

/// Pseudo-likelihood θ̂ started from Kendall-τ inversion.
pub fn fit_pseudo_likelihood(family: CopulaFamily, u: &[[f64; 2]]) -> Result<Copula> {
    if !family.is_parametric() {
        return Ok(Copula::independence());
    }
    let a: Vec<f64> = u.iter().map(|p| p[0]).collect();
    let b: Vec<f64> = u.iter().map(|p| p[1]).collect();
    let bounds = default_theta_bounds(family);
    let start = copula_from_empirical_tau(family, kendall_tau(&a, &b))?.theta().clamp(bounds.0, bounds.1);
    let weights = vec![1.0; u.len()];
    let theta = optimize_copula_theta(family, u, &weights, start, bounds)?;
    Copula::new(family, theta)
}

/// S_n = Σ_i (C_n(u_i) - C_θ̂(u_i))² with θ̂ fitted to the pseudo-observations.
pub fn cvm_statistic(pobs: &PseudoObservations, family: CopulaFamily) -> Result<CvmFit> {
    let u = pobs.pairs()?;
    let copula = fit_pseudo_likelihood(family, &u)?;
    let emp = empirical_copula_at_sample(&u);
    let mut statistic = 0.0;
    for (p, e) in u.iter().zip(&emp) {
        statistic += (e - copula.cdf(p)?).powi(2);
    }
    Ok(CvmFit { family, theta: copula.theta(), statistic })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySelection {
    pub best: CvmFit,
    /// One entry per candidate in input order; failed fits carry the error text.
    pub table: Vec<std::result::Result<CvmFit, String>>,
}

/// Candidate with the smallest Cramér–von Mises statistic.
pub fn select_family(rows: &[Vec<f64>], candidates: &[CopulaFamily]) -> Result<FamilySelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no candidate families".into()));
    }
    let pobs = pseudo_observations(rows)?;
    pobs.pairs()?;
    let table: Vec<_> = candidates
        .par_iter()
        .map(|&f| cvm_statistic(&pobs, f).map_err(|e| e.to_string()))
        .collect();
    let best = table
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .fold(None::<CvmFit>, |acc, f| match acc {
            Some(a) if a.statistic <= f.statistic => Some(a),
            _ => Some(*f),
        })
        .ok_or(Error::NoFamilyFits)?;
    Ok(FamilySelection { best, table })
}
