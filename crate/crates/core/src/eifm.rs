//! Expectation-IFM estimation: E-step, IFM-step, initialization, the fitting
//! loop, the estimating function ψ and the Gauss–Seidel convergence diagnostic.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::copulas::{tau_to_theta, Copula, CopulaFamily};
use crate::decode_loss::decode_posterior;
use crate::error::{Error, Result};
use crate::fb::{forward_backward, PosteriorSummaries};
use crate::margins::{weighted_mle, Margin, MarginFamily};
use crate::model::{CopulaHmm, StateSpec, Trajectory};
use crate::numeric::{brent_root, kendall_tau};

/// Effective state weight below which a state counts as collapsed.
pub const COLLAPSE_WEIGHT: f64 = 1e-6;

/// Initial Frank θ used when the empirical τ is exactly zero.
pub const FRANK_ZERO_FALLBACK: f64 = 1e-4;

/// Default θ search bracket per family.
pub fn default_theta_bounds(family: CopulaFamily) -> (f64, f64) {
    match family {
        CopulaFamily::Independence => (0.0, 0.0),
        CopulaFamily::Frank => (-500.0, 500.0),
        CopulaFamily::Clayton => (1e-6, 500.0),
        CopulaFamily::Gumbel | CopulaFamily::Joe => (1.0 + 1e-8, 500.0),
        CopulaFamily::Gauss => (-0.9999, 0.9999),
        CopulaFamily::Fgm => (-1.0 + 1e-10, 1.0 - 1e-10),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Relative log-likelihood change treated as convergence.
    pub tolerance: f64,
    /// When set, convergence also requires every parameter to move less than this.
    pub param_tolerance: Option<f64>,
    /// Overrides of `default_theta_bounds`.
    pub copula_search_bounds: BTreeMap<CopulaFamily, (f64, f64)>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iterations: 500,
            tolerance: 1e-6,
            param_tolerance: None,
            copula_search_bounds: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be ≥ 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("tolerance must be > 0".into()));
        }
        if let Some(p) = self.param_tolerance {
            if !(p > 0.0) {
                return Err(Error::InvalidParameter("param_tolerance must be > 0".into()));
            }
        }
        for (f, (lo, hi)) in &self.copula_search_bounds {
            let (a, b) = default_theta_bounds(*f);
            if !(lo < hi) || *lo < a.min(f.theta_range().0) || *hi > b.max(f.theta_range().1) {
                return Err(Error::InvalidParameter(format!("bad search bounds ({lo}, {hi}) for {f}")));
            }
        }
        Ok(())
    }

    pub fn theta_bounds(&self, family: CopulaFamily) -> (f64, f64) {
        self.copula_search_bounds.get(&family).copied().unwrap_or_else(|| default_theta_bounds(family))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub log_likelihood: f64,
    /// Largest absolute parameter change from the previous iterate (NaN for the first).
    pub max_param_change: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitTrace {
    pub entries: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    /// Index into `entries` of the returned iterate.
    pub best_index: usize,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: CopulaHmm,
    pub trace: FitTrace,
    /// Posteriors of the returned model, one per trajectory.
    pub posteriors: Vec<PosteriorSummaries>,
    pub log_likelihood: f64,
}

fn check_inputs(model: &CopulaHmm, posts: &[PosteriorSummaries], data: &[Trajectory]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InsufficientData("no trajectories".into()));
    }
    if posts.len() != data.len() {
        return Err(Error::LengthMismatch { left: posts.len(), right: data.len() });
    }
    for (p, tr) in posts.iter().zip(data) {
        model.check_trajectory(tr)?;
        if p.n_states() != model.n_states() || p.len() != tr.len() {
            return Err(Error::InvalidParameter("posterior shape does not match model and data".into()));
        }
    }
    Ok(())
}

fn transitions(posts: &[PosteriorSummaries], k: usize) -> Vec<Vec<f64>> {
    let mut n = vec![vec![0.0; k]; k];
    for p in posts {
        for t in 0..p.v_hat.shape()[2] {
            for (a, row) in n.iter_mut().enumerate() {
                for (b, x) in row.iter_mut().enumerate() {
                    *x += p.v_hat[[a, b, t]];
                }
            }
        }
    }
    n
}

/// One IFM update (π, Γ, margins, then copulas) from the current posteriors.
pub fn ifm_step(
    model: &CopulaHmm,
    posts: &[PosteriorSummaries],
    data: &[Trajectory],
    config: &FitConfig,
) -> Result<CopulaHmm> {
    check_inputs(model, posts, data)?;
    let k = model.n_states();
    let d = model.dim();
    let n_traj = data.len() as f64;

    let pi: Vec<f64> = (0..k).map(|j| posts.iter().map(|p| p.u_hat[[j, 0]]).sum::<f64>() / n_traj).collect();
    let counts = transitions(posts, k);
    let gamma: Vec<Vec<f64>> = counts
        .iter()
        .zip(model.gamma())
        .map(|(row, old)| {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter().map(|x| x / s).collect()
            } else {
                old.clone()
            }
        })
        .collect();

    let columns: Vec<Vec<f64>> = (0..d).map(|h| data.iter().flat_map(|tr| tr.column(h)).collect()).collect();
    let mut states = Vec::with_capacity(k);
    for (j, old) in model.states().iter().enumerate() {
        let w: Vec<f64> = posts.iter().flat_map(|p| p.u_hat.row(j).to_vec()).collect();
        let total: f64 = w.iter().sum();
        if !(total >= COLLAPSE_WEIGHT) {
            return Err(Error::StateCollapse { state: j + 1, weight: total });
        }
        let margins = old
            .margins
            .iter()
            .zip(&columns)
            .map(|(m, y)| weighted_mle(m.family(), &w, y))
            .collect::<Result<Vec<Margin>>>()?;
        let copula = if old.copula.family().is_parametric() {
            let u: Vec<[f64; 2]> = columns[0]
                .iter()
                .zip(&columns[1])
                .map(|(&a, &b)| [margins[0].cdf(a), margins[1].cdf(b)])
                .collect();
            let family = old.copula.family();
            let theta = optimize_copula_theta(family, &u, &w, old.copula.theta(), config.theta_bounds(family))?;
            Copula::new(family, theta)?
        } else {
            old.copula
        };
        states.push(StateSpec::new(margins, copula));
    }
    let pi_sum: f64 = pi.iter().sum();
    let pi = pi.into_iter().map(|p| p / pi_sum).collect();
    CopulaHmm::new(pi, gamma, states)
}

fn to_z(family: CopulaFamily, theta: f64) -> f64 {
    match family {
        CopulaFamily::Clayton => theta.ln(),
        CopulaFamily::Gumbel | CopulaFamily::Joe => (theta - 1.0).ln(),
        CopulaFamily::Gauss | CopulaFamily::Fgm => theta.atanh(),
        _ => theta,
    }
}

fn from_z(family: CopulaFamily, z: f64) -> f64 {
    match family {
        CopulaFamily::Clayton => z.exp(),
        CopulaFamily::Gumbel | CopulaFamily::Joe => 1.0 + z.exp(),
        CopulaFamily::Gauss | CopulaFamily::Fgm => z.tanh(),
        _ => z,
    }
}

/// Weighted copula score Σ_t w_t ∂/∂θ log c(u_t | θ).
pub fn weighted_copula_score(copula: &Copula, u: &[[f64; 2]], weights: &[f64]) -> f64 {
    u.iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, &w)| w * copula.score2(p[0], p[1]))
        .sum()
}

/// Weighted copula log-likelihood Σ_t w_t log c(u_t | θ).
pub fn weighted_copula_loglik(copula: &Copula, u: &[[f64; 2]], weights: &[f64]) -> f64 {
    u.iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, &w)| w * copula.ln_pdf2(p[0], p[1]))
        .sum()
}

/// Maximize the weighted copula log-likelihood in θ.
///
/// The score is followed on a transformed parameter from `start`: the bracket
/// is expanded in the ascent direction until the score changes sign, then the
/// root is polished by Brent's method. Returns a bound when the score keeps
/// its sign up to that bound.
pub fn optimize_copula_theta(
    family: CopulaFamily,
    u: &[[f64; 2]],
    weights: &[f64],
    start: f64,
    bounds: (f64, f64),
) -> Result<f64> {
    if !family.is_parametric() {
        return Ok(0.0);
    }
    if u.len() != weights.len() {
        return Err(Error::LengthMismatch { left: u.len(), right: weights.len() });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    if !(weights.iter().sum::<f64>() > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let (lo, hi) = bounds;
    let start = start.clamp(lo, hi);
    let (zlo, zhi) = (to_z(family, lo), to_z(family, hi));
    let score_at = |z: f64| -> Result<f64> {
        let c = Copula::new(family, from_z(family, z).clamp(lo, hi))?;
        let s = weighted_copula_score(&c, u, weights);
        if s.is_nan() {
            return Err(Error::OptimizerFailure(format!("{family} score is NaN at θ={}", c.theta())));
        }
        Ok(s)
    };
    let z0 = to_z(family, start);
    let g0 = score_at(z0)?;
    if g0 == 0.0 {
        return Ok(start);
    }
    let dir = g0.signum();
    let mut inner = z0;
    let mut step = 0.25;
    let outer = loop {
        let cand = if dir > 0.0 { (inner + step).min(zhi) } else { (inner - step).max(zlo) };
        let g = score_at(cand)?;
        if g.signum() != dir || g == 0.0 {
            break cand;
        }
        if cand == zhi || cand == zlo {
            return Ok(if dir > 0.0 { hi } else { lo });
        }
        inner = cand;
        step *= 2.0;
        if step > 1e6 {
            return Err(Error::OptimizerFailure(format!("{family}: bracket expansion did not terminate")));
        }
    };
    let (a, b) = if inner < outer { (inner, outer) } else { (outer, inner) };
    let mut failure = None;
    let root = brent_root(
        |z| match score_at(z) {
            Ok(s) => s,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        a,
        b,
        1e-13,
        300,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let z = root.ok_or_else(|| Error::OptimizerFailure(format!("{family}: no sign change in bracket")))?;
    Ok(from_z(family, z).clamp(lo, hi))
}

/// Settings for the two-stage initialization heuristic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    /// Target copula family of each state.
    pub copula_families: Vec<CopulaFamily>,
    /// Margin family of each observation dimension.
    pub margin_families: Vec<MarginFamily>,
    /// Independent stage-1 starts; the one with the highest likelihood is kept.
    pub restarts: usize,
    pub stage1: FitConfig,
}

impl InitConfig {
    /// Same copula family in all `k` states and Gaussian margins in `d` dimensions.
    pub fn uniform(k: usize, d: usize, family: CopulaFamily) -> Self {
        InitConfig {
            copula_families: vec![family; k],
            margin_families: vec![MarginFamily::Gaussian; d],
            restarts: 1,
            stage1: FitConfig { max_iterations: 200, ..FitConfig::default() },
        }
    }
}

fn tau_clip(family: CopulaFamily) -> (f64, f64) {
    match family {
        CopulaFamily::Independence => (0.0, 0.0),
        CopulaFamily::Clayton => (0.01, 0.95),
        CopulaFamily::Gumbel | CopulaFamily::Joe => (0.0, 0.95),
        CopulaFamily::Frank | CopulaFamily::Gauss => (-0.95, 0.95),
        CopulaFamily::Fgm => (-2.0 / 9.0, 2.0 / 9.0),
    }
}

/// Copula with Kendall's τ as close as the family allows to `tau`.
pub fn copula_from_empirical_tau(family: CopulaFamily, tau: f64) -> Result<Copula> {
    if !family.is_parametric() {
        return Ok(Copula::independence());
    }
    if family == CopulaFamily::Frank && tau == 0.0 {
        return Copula::new(family, FRANK_ZERO_FALLBACK);
    }
    let (a, b) = tau_clip(family);
    tau_to_theta(family, tau.clamp(a, b))
}

fn column_stats(data: &[Trajectory], h: usize) -> (f64, f64) {
    let col: Vec<f64> = data.iter().flat_map(|tr| tr.column(h)).collect();
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

fn stage1_start<R: Rng + ?Sized>(data: &[Trajectory], config: &InitConfig, rng: &mut R) -> Result<CopulaHmm> {
    let k = config.copula_families.len();
    let d = config.margin_families.len();
    let stats: Vec<(f64, f64)> = (0..d).map(|h| column_stats(data, h)).collect();
    let mut states = Vec::with_capacity(k);
    for _ in 0..k {
        let mut margins = Vec::with_capacity(d);
        for (h, fam) in config.margin_families.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            let (mean, sd) = stats[h];
            margins.push(match fam {
                // h is 0-based here, so (-1)^(h+1)
                MarginFamily::Gaussian => {
                    let sign = if h % 2 == 0 { -1.0 } else { 1.0 };
                    Margin::gaussian(sign * z.abs(), if sd > 0.0 { sd } else { 1.0 })?
                }
                MarginFamily::Exponential => {
                    let scale = if mean > 0.0 { mean } else { 1.0 };
                    Margin::exponential((0.5 + z.abs()) / scale)?
                }
            });
        }
        states.push(StateSpec::new(margins, Copula::independence()));
    }
    CopulaHmm::new(vec![1.0 / k as f64; k], vec![vec![1.0 / k as f64; k]; k], states)
}

/// Two-stage starting values: an independence-copula HMM fitted from random
/// means, then per-state copula parameters from the empirical Kendall τ of the
/// locally decoded subsets.
pub fn initialize<R: Rng + ?Sized>(data: &[Trajectory], config: &InitConfig, rng: &mut R) -> Result<CopulaHmm> {
    let k = config.copula_families.len();
    let d = config.margin_families.len();
    if k == 0 || d == 0 {
        return Err(Error::InvalidParameter("need at least one state and one dimension".into()));
    }
    if data.is_empty() || data.iter().any(|tr| tr.dim() != d) {
        return Err(Error::InvalidTrajectory(format!("trajectories must have d={d}")));
    }
    if config.copula_families.iter().any(|f| f.is_parametric()) && d != 2 {
        return Err(Error::UnsupportedDimension { family: config.copula_families[0], dim: d });
    }
    let total: usize = data.iter().map(|t| t.len()).sum();
    if total < k * (d + 2) {
        return Err(Error::InsufficientData(format!("{total} observations for {k} states and d={d}")));
    }

    let mut best: Option<FitResult> = None;
    let mut last_err = None;
    for _ in 0..config.restarts.max(1) {
        let start = stage1_start(data, config, rng)?;
        match fit(data, &start, &config.stage1) {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.log_likelihood > b.log_likelihood) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let stage1 = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(Error::NoFamilyFits)),
    };

    let mut subsets: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); k];
    if d == 2 {
        for (post, tr) in stage1.posteriors.iter().zip(data) {
            for (t, &s) in decode_posterior(post).iter().enumerate() {
                let y = tr.row(t);
                subsets[s].0.push(y[0]);
                subsets[s].1.push(y[1]);
            }
        }
    }
    let mut states = stage1.model.states().to_vec();
    for (j, state) in states.iter_mut().enumerate() {
        let family = config.copula_families[j];
        let (x, y) = &subsets[j];
        let tau = if x.len() < 2 { 0.1 } else { kendall_tau(x, y) };
        state.copula = copula_from_empirical_tau(family, tau)?;
    }
    CopulaHmm::new(stage1.model.pi().to_vec(), stage1.model.gamma().to_vec(), states)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Alternate E-steps and IFM-steps until the relative log-likelihood change
/// drops below the tolerance; the iterate with the highest log-likelihood is
/// returned.
pub fn fit(data: &[Trajectory], init: &CopulaHmm, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no trajectories".into()));
    }
    let e_step = |m: &CopulaHmm| -> Result<(Vec<PosteriorSummaries>, f64)> {
        let posts = data.iter().map(|tr| forward_backward(m, tr)).collect::<Result<Vec<_>>>()?;
        let ll = posts.iter().map(|p| p.log_likelihood).sum();
        Ok((posts, ll))
    };

    let mut model = init.clone();
    let mut trace = FitTrace::default();
    let mut best: Option<(CopulaHmm, Vec<PosteriorSummaries>, f64)> = None;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for iteration in 0..=config.max_iterations {
        let (posts, ll) = e_step(&model)?;
        let eta = model.param_vector();
        let change = prev.as_ref().map_or(f64::NAN, |(_, p)| max_abs_diff(p, &eta));
        trace.entries.push(TraceEntry { iteration, params: eta.clone(), log_likelihood: ll, max_param_change: change });
        trace.iterations = iteration;
        if best.as_ref().is_none_or(|b| ll > b.2) {
            best = Some((model.clone(), posts.clone(), ll));
            trace.best_index = trace.entries.len() - 1;
        }
        if let Some((prev_ll, _)) = &prev {
            let rel = (ll - prev_ll).abs() / prev_ll.abs().max(1.0);
            let params_ok = config.param_tolerance.is_none_or(|tol| change < tol);
            if rel < config.tolerance && params_ok {
                trace.converged = true;
                break;
            }
        }
        if iteration == config.max_iterations {
            break;
        }
        let next = ifm_step(&model, &posts, data, config)?;
        prev = Some((ll, eta));
        model = next;
    }
    let (model, posteriors, log_likelihood) = best.expect("at least one iterate");
    Ok(FitResult { model, trace, posteriors, log_likelihood })
}

/// ψ for one trajectory from given posteriors, laid out like `param_vector`.
pub fn psi_from_posterior(model: &CopulaHmm, post: &PosteriorSummaries, traj: &Trajectory) -> Vec<f64> {
    let k = model.n_states();
    let mut psi = Vec::with_capacity(model.n_params());
    for j in 0..k {
        psi.push(model.pi()[j] - post.u_hat[[j, 0]]);
    }
    let counts = transitions(std::slice::from_ref(post), k);
    for j in 0..k {
        let row: f64 = counts[j].iter().sum();
        for l in 0..k {
            psi.push(model.gamma()[j][l] * row - counts[j][l]);
        }
    }
    for (j, s) in model.states().iter().enumerate() {
        for (h, m) in s.margins.iter().enumerate() {
            let mut acc = [0.0; 2];
            for t in 0..traj.len() {
                let w = post.u_hat[[j, t]];
                let sc = m.score(traj.row(t)[h]);
                acc[0] += w * sc[0];
                acc[1] += w * sc[1];
            }
            psi.extend_from_slice(&acc[..m.n_params()]);
        }
    }
    for (j, s) in model.states().iter().enumerate() {
        if s.copula.family().is_parametric() {
            let mut acc = 0.0;
            for t in 0..traj.len() {
                let y = traj.row(t);
                acc += post.u_hat[[j, t]] * s.copula.score2(s.margins[0].cdf(y[0]), s.margins[1].cdf(y[1]));
            }
            psi.push(acc);
        }
    }
    psi
}

/// ψ_T(η; y) summed over trajectories, with posteriors evaluated at η.
pub fn estimating_function_psi(model: &CopulaHmm, data: &[Trajectory]) -> Result<Vec<f64>> {
    let mut total = vec![0.0; model.n_params()];
    for tr in data {
        let post = forward_backward(model, tr)?;
        for (a, b) in total.iter_mut().zip(psi_from_posterior(model, &post, tr)) {
            *a += b;
        }
    }
    Ok(total)
}

/// Outcome of the Gauss–Seidel local convergence diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussSeidelDiagnostic {
    /// ρ((D - L)⁻¹U); `None` when D is singular.
    pub spectral_radius: Option<f64>,
    /// Length of ξ = (û, v̂, η).
    pub dimension: usize,
    /// Number of leading coordinates (û, v̂, π, Γ).
    pub n5: usize,
    /// max |D_ii - 1| over the first `n5` coordinates.
    pub unit_diagonal_deviation: f64,
    /// First coordinate whose diagonal entry vanishes.
    pub singular_index: Option<usize>,
}

impl GaussSeidelDiagnostic {
    pub fn unit_diagonal_ok(&self, tol: f64) -> bool {
        self.unit_diagonal_deviation <= tol
    }
}

struct GSystem<'a> {
    model: &'a CopulaHmm,
    traj: &'a Trajectory,
    k: usize,
    n: usize,
    n_u: usize,
    n_v: usize,
    n_pi: usize,
    n_gamma: usize,
}

impl<'a> GSystem<'a> {
    fn new(model: &'a CopulaHmm, traj: &'a Trajectory) -> Self {
        let k = model.n_states();
        let n = traj.len();
        GSystem { model, traj, k, n, n_u: k * n, n_v: k * k * n.saturating_sub(1), n_pi: k, n_gamma: k * k }
    }

    fn n5(&self) -> usize {
        self.n_u + self.n_v + self.n_pi + self.n_gamma
    }

    fn dim(&self) -> usize {
        self.n_u + self.n_v + self.model.n_params()
    }

    fn pack(&self, post: &PosteriorSummaries) -> Vec<f64> {
        let mut xi = Vec::with_capacity(self.dim());
        for j in 0..self.k {
            for t in 0..self.n {
                xi.push(post.u_hat[[j, t]]);
            }
        }
        for a in 0..self.k {
            for b in 0..self.k {
                for t in 0..self.n.saturating_sub(1) {
                    xi.push(post.v_hat[[a, b, t]]);
                }
            }
        }
        xi.extend(self.model.param_vector());
        xi
    }

    /// Is coordinate `i` a probability parameter that must stay nonnegative?
    fn is_probability(&self, i: usize) -> bool {
        i >= self.n_u + self.n_v && i < self.n5()
    }

    fn eval(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let (k, n) = (self.k, self.n);
        let eta = &xi[self.n_u + self.n_v..];
        let model = self.model.with_param_vector(eta)?;
        let post = forward_backward(&model, self.traj)?;
        let u = |j: usize, t: usize| xi[j * n + t];
        let v = |a: usize, b: usize, t: usize| xi[self.n_u + (a * k + b) * (n - 1) + t];
        let mut g = Vec::with_capacity(xi.len());
        for j in 0..k {
            for t in 0..n {
                g.push(u(j, t) - post.u_hat[[j, t]]);
            }
        }
        for a in 0..k {
            for b in 0..k {
                for t in 0..n.saturating_sub(1) {
                    g.push(v(a, b, t) - post.v_hat[[a, b, t]]);
                }
            }
        }
        for j in 0..k {
            g.push(model.pi()[j] - u(j, 0));
        }
        for a in 0..k {
            let mut row_total = 0.0;
            let mut row = vec![0.0; k];
            for (b, r) in row.iter_mut().enumerate() {
                for t in 0..n.saturating_sub(1) {
                    *r += v(a, b, t);
                }
                row_total += *r;
            }
            // rows divided by the transition mass so that ∂g/∂γ = 1
            for b in 0..k {
                let val = model.gamma()[a][b] * row_total - row[b];
                g.push(if row_total != 0.0 { val / row_total } else { val });
            }
        }
        for (j, s) in model.states().iter().enumerate() {
            for (h, m) in s.margins.iter().enumerate() {
                let mut acc = [0.0; 2];
                for t in 0..n {
                    let sc = m.score(self.traj.row(t)[h]);
                    acc[0] += u(j, t) * sc[0];
                    acc[1] += u(j, t) * sc[1];
                }
                g.extend_from_slice(&acc[..m.n_params()]);
            }
        }
        for (j, s) in model.states().iter().enumerate() {
            if s.copula.family().is_parametric() {
                let mut acc = 0.0;
                for t in 0..n {
                    let y = self.traj.row(t);
                    acc += u(j, t) * s.copula.score2(s.margins[0].cdf(y[0]), s.margins[1].cdf(y[1]));
                }
                g.push(acc);
            }
        }
        Ok(g)
    }
}

/// Numerical Jacobian by central differences with step 1e-5·max(1, |x_i|);
/// coordinates flagged by `one_sided` fall back to a forward step when the
/// backward point would leave the nonnegative orthant.
pub fn numerical_jacobian<F>(f: F, x: &[f64], one_sided: impl Fn(usize) -> bool) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let f0 = f(x)?;
    let m = f0.len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = 1e-5 * x[i].abs().max(1.0);
        let forward_only = one_sided(i) && x[i] - h < 0.0;
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        let (fm, denom) = if forward_only {
            (f0.clone(), h)
        } else {
            xp[i] = x[i] - h;
            (f(&xp)?, 2.0 * h)
        };
        xp[i] = x[i];
        for r in 0..m {
            jac[r][i] = (fp[r] - fm[r]) / denom;
        }
    }
    Ok(jac)
}

/// Jacobian of the full estimating system g(ξ) at ξ = (û, v̂, η).
pub fn g_system_jacobian(model: &CopulaHmm, post: &PosteriorSummaries, traj: &Trajectory) -> Result<(Vec<Vec<f64>>, usize)> {
    model.check_trajectory(traj)?;
    let sys = GSystem::new(model, traj);
    let xi = sys.pack(post);
    let jac = numerical_jacobian(|x| sys.eval(x), &xi, |i| sys.is_probability(i))?;
    Ok((jac, sys.n5()))
}

/// ρ((D - L)⁻¹U) for the splitting J = D - L - U of the g(ξ) Jacobian.
pub fn gauss_seidel_spectral_radius(
    model: &CopulaHmm,
    post: &PosteriorSummaries,
    traj: &Trajectory,
) -> Result<GaussSeidelDiagnostic> {
    let (jac, n5) = g_system_jacobian(model, post, traj)?;
    let n = jac.len();
    let unit_dev = (0..n5).map(|i| (jac[i][i] - 1.0).abs()).fold(0.0, f64::max);
    let scale = jac.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    let singular_index = (0..n).find(|&i| jac[i][i].abs() <= 1e-12 * scale);
    let spectral_radius = if singular_index.is_some() { None } else { Some(gauss_seidel_radius(&jac)) };
    Ok(GaussSeidelDiagnostic { spectral_radius, dimension: n, n5, unit_diagonal_deviation: unit_dev, singular_index })
}

/// Apply M = (D - L)⁻¹U to `x`, where D - L is the lower triangle of `jac`
/// and U is minus its strict upper triangle.
pub fn gauss_seidel_apply(jac: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = jac.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut rhs = 0.0;
        for j in (i + 1)..n {
            rhs -= jac[i][j] * x[j];
        }
        for j in 0..i {
            rhs -= jac[i][j] * y[j];
        }
        y[i] = rhs / jac[i][i];
    }
    y
}

/// Spectral radius of the Gauss–Seidel iteration matrix by power iteration;
/// the growth rate is averaged geometrically to cope with complex pairs.
pub fn gauss_seidel_radius(jac: &[Vec<f64>]) -> f64 {
    let n = jac.len();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // deterministic start with all modes present
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64) * 0.618_033_988_7).fract()).collect();
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    const BURN: usize = 100;
    const WINDOW: usize = 400;
    let mut log_growth = 0.0;
    for it in 0..(BURN + WINDOW) {
        let y = gauss_seidel_apply(jac, &x);
        let ny = norm(&y);
        if ny == 0.0 || !ny.is_finite() {
            return if ny == 0.0 { 0.0 } else { f64::INFINITY };
        }
        if it >= BURN {
            log_growth += ny.ln();
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    (log_growth / WINDOW as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::scenario_model;
    use crate::rng::seeded;
    use ndarray::{Array2, Array3};

    #[test]
    fn optimizer_recovers_fgm() {
        let c = Copula::new(CopulaFamily::Fgm, 0.8).unwrap();
        let u = c.sample(10_000, &mut seeded(5));
        let w = vec![1.0; u.len()];
        let th = optimize_copula_theta(CopulaFamily::Fgm, &u, &w, 0.0, default_theta_bounds(CopulaFamily::Fgm)).unwrap();
        assert!((th - 0.8).abs() < 0.1, "{th}");
        let s = weighted_copula_score(&Copula::new(CopulaFamily::Fgm, th).unwrap(), &u, &w);
        assert!(th >= 1.0 - 1e-9 || s.abs() < 1e-6, "{s}");
    }

    #[test]
    fn optimizer_zero_score_keeps_start() {
        // the FGM score vanishes when either coordinate is ½
        let th = optimize_copula_theta(CopulaFamily::Fgm, &[[0.5, 0.3]], &[2.0], 0.25, (-0.99, 0.99)).unwrap();
        assert_eq!(th, 0.25);
        assert_eq!(optimize_copula_theta(CopulaFamily::Independence, &[[0.1, 0.2]], &[1.0], 0.0, (0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn frank_centre_point_runs_to_bound() {
        // c(½,½ | θ) = (θ/4) coth(θ/4) increases in θ
        let c = Copula::new(CopulaFamily::Frank, 3.0).unwrap();
        let h = 1e-6;
        let f = |t: f64| ((t / 4.0) / (t / 4.0).tanh()).ln();
        let fd = (f(3.0 + h) - f(3.0 - h)) / (2.0 * h);
        assert!((c.score2(0.5, 0.5) - fd).abs() < 1e-8);
        let th = optimize_copula_theta(CopulaFamily::Frank, &[[0.5, 0.5]], &[1.0], 3.0, (-50.0, 50.0)).unwrap();
        assert_eq!(th, 50.0);
    }

    #[test]
    fn ifm_step_closed_forms() {
        let m = scenario_model(4).unwrap().with_independence();
        let tr = m.simulate(6, &mut seeded(2)).unwrap();
        let mut u = Array2::zeros((3, 6));
        let mut v = Array3::zeros((3, 3, 5));
        // mass on states 1 and 2 alternating with known transition posteriors
        for t in 0..6 {
            u[[t % 2, t]] = 0.6;
            u[[2, t]] = 0.4;
        }
        for t in 0..5 {
            v[[t % 2, (t + 1) % 2, t]] = 0.5;
            v[[2, 2, t]] = 0.3;
            v[[2, 0, t]] = 0.2;
        }
        let post = PosteriorSummaries { u_hat: u, v_hat: v, log_likelihood: 0.0 };
        let next = ifm_step(&m, &[post], &[tr], &FitConfig::default()).unwrap();
        assert!((next.pi()[0] - 0.6).abs() < 1e-15);
        assert!((next.gamma()[2][2] - 0.6).abs() < 1e-15);
        assert!((next.gamma()[2][0] - 0.4).abs() < 1e-15);
        assert!((next.gamma()[0][1] - 1.0).abs() < 1e-15);
    }
}
