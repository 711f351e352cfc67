//! The copula HMM container, observation trajectories and simulation.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::copulas::{Copula, CopulaFamily, UNIT_CLAMP};
use crate::error::{Error, Result};
use crate::margins::Margin;

/// Current model file layout version.
pub const FORMAT_VERSION: u32 = 1;

const SIMPLEX_TOL: f64 = 1e-10;

/// Emission law of one hidden state: d margins glued by a copula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub margins: Vec<Margin>,
    pub copula: Copula,
}

impl StateSpec {
    pub fn new(margins: Vec<Margin>, copula: Copula) -> Self {
        StateSpec { margins, copula }
    }

    pub fn log_density(&self, y: &[f64]) -> f64 {
        let mut total = 0.0;
        for (m, &v) in self.margins.iter().zip(y) {
            total += m.ln_pdf(v);
        }
        if self.copula.family().is_parametric() {
            total += self.copula.ln_pdf2(self.margins[0].cdf(y[0]), self.margins[1].cdf(y[1]));
        }
        total
    }
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    pi: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    states: Vec<StateSpec>,
}

/// K-state HMM whose state-dependent laws are copula models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRepr", into = "ModelRepr")]
pub struct CopulaHmm {
    pi: Vec<f64>,
    gamma: Vec<Vec<f64>>,
    states: Vec<StateSpec>,
}

impl TryFrom<ModelRepr> for CopulaHmm {
    type Error = Error;
    fn try_from(r: ModelRepr) -> Result<Self> {
        if r.format_version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported format_version {}", r.format_version)));
        }
        let m = CopulaHmm::new(r.pi, r.gamma, r.states)?;
        if m.n_states() != r.k || m.dim() != r.d {
            return Err(Error::InvalidModel(format!(
                "declared K={}, d={} but found K={}, d={}",
                r.k,
                r.d,
                m.n_states(),
                m.dim()
            )));
        }
        Ok(m)
    }
}

impl From<CopulaHmm> for ModelRepr {
    fn from(m: CopulaHmm) -> Self {
        ModelRepr {
            format_version: FORMAT_VERSION,
            k: m.n_states(),
            d: m.dim(),
            pi: m.pi,
            gamma: m.gamma,
            states: m.states,
        }
    }
}

fn check_simplex(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidModel(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl CopulaHmm {
    pub fn new(pi: Vec<f64>, gamma: Vec<Vec<f64>>, states: Vec<StateSpec>) -> Result<Self> {
        let m = CopulaHmm { pi, gamma, states };
        m.check_shape()?;
        check_simplex(&m.pi, "pi")?;
        for (j, row) in m.gamma.iter().enumerate() {
            check_simplex(row, &format!("gamma row {}", j + 1))?;
        }
        Ok(m)
    }

    fn check_shape(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 {
            return Err(Error::InvalidModel("model needs at least one state".into()));
        }
        if self.gamma.len() != k || self.gamma.iter().any(|r| r.len() != k) || self.states.len() != k {
            return Err(Error::InvalidModel(format!("pi, gamma and states disagree on K={k}")));
        }
        let d = self.states[0].margins.len();
        if d == 0 {
            return Err(Error::InvalidModel("observation dimension must be ≥ 1".into()));
        }
        for (j, s) in self.states.iter().enumerate() {
            if s.margins.len() != d {
                return Err(Error::InvalidModel(format!("state {} has {} margins, expected {d}", j + 1, s.margins.len())));
            }
            if s.copula.family().is_parametric() && d != 2 {
                return Err(Error::UnsupportedDimension { family: s.copula.family(), dim: d });
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.pi.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].margins.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn gamma(&self) -> &[Vec<f64>] {
        &self.gamma
    }

    pub fn states(&self) -> &[StateSpec] {
        &self.states
    }

    pub fn state(&self, k: usize) -> Result<&StateSpec> {
        self.states.get(k).ok_or(Error::InvalidState { index: k, count: self.n_states() })
    }

    /// log h_k(y) for 0-based state `k`.
    pub fn state_log_density(&self, k: usize, y: &[f64]) -> Result<f64> {
        let s = self.state(k)?;
        if y.len() != self.dim() {
            return Err(Error::LengthMismatch { left: y.len(), right: self.dim() });
        }
        Ok(s.log_density(y))
    }

    /// T×K matrix of state log-densities.
    pub fn log_emissions(&self, traj: &Trajectory) -> Result<Array2<f64>> {
        self.check_trajectory(traj)?;
        let k = self.n_states();
        let mut out = Array2::zeros((traj.len(), k));
        for t in 0..traj.len() {
            let y = traj.row(t);
            let mut any_finite = false;
            for j in 0..k {
                let v = self.states[j].log_density(y);
                if v.is_nan() || v == f64::INFINITY {
                    return Err(Error::NonFiniteDensity { t: t + 1, state: j + 1 });
                }
                any_finite |= v.is_finite();
                out[[t, j]] = v;
            }
            if !any_finite {
                return Err(Error::NonFiniteDensity { t: t + 1, state: 0 });
            }
        }
        Ok(out)
    }

    pub fn check_trajectory(&self, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.dim() {
            return Err(Error::InvalidTrajectory(format!(
                "trajectory has d={} but the model has d={}",
                traj.dim(),
                self.dim()
            )));
        }
        if let Some(labels) = traj.labels() {
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.n_states()) {
                return Err(Error::InvalidState { index: bad, count: self.n_states() });
            }
        }
        Ok(())
    }

    /// Same model with every copula replaced by independence.
    pub fn with_independence(&self) -> Self {
        let mut m = self.clone();
        for s in &mut m.states {
            s.copula = Copula::independence();
        }
        m
    }

    /// Relabel states: new state `i` is old state `perm[i]`.
    pub fn permute_states(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_states();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidParameter("not a permutation of the states".into()));
        }
        Ok(CopulaHmm {
            pi: perm.iter().map(|&p| self.pi[p]).collect(),
            gamma: perm.iter().map(|&a| perm.iter().map(|&b| self.gamma[a][b]).collect()).collect(),
            states: perm.iter().map(|&p| self.states[p].clone()).collect(),
        })
    }

    /// Number of free-standing entries in the parameter vector η.
    pub fn n_params(&self) -> usize {
        let k = self.n_states();
        let margins: usize = self.states.iter().flat_map(|s| s.margins.iter()).map(|m| m.n_params()).sum();
        let copulas = self.states.iter().filter(|s| s.copula.family().is_parametric()).count();
        k + k * k + margins + copulas
    }

    /// η = (π, Γ row-major, margin parameters state by state, copula θ of parametric states).
    pub fn param_vector(&self) -> Vec<f64> {
        let mut eta = self.pi.clone();
        for row in &self.gamma {
            eta.extend_from_slice(row);
        }
        for s in &self.states {
            for m in &s.margins {
                eta.extend(m.params());
            }
        }
        for s in &self.states {
            if s.copula.family().is_parametric() {
                eta.push(s.copula.theta());
            }
        }
        eta
    }

    /// Human-readable names for the entries of `param_vector` (1-based indices).
    pub fn param_names(&self) -> Vec<String> {
        let k = self.n_states();
        let mut names: Vec<String> = (1..=k).map(|j| format!("pi[{j}]")).collect();
        for a in 1..=k {
            for b in 1..=k {
                names.push(format!("gamma[{a},{b}]"));
            }
        }
        for (j, s) in self.states.iter().enumerate() {
            for (h, m) in s.margins.iter().enumerate() {
                match m {
                    Margin::Gaussian { .. } => {
                        names.push(format!("mu[{},{}]", j + 1, h + 1));
                        names.push(format!("sigma[{},{}]", j + 1, h + 1));
                    }
                    Margin::Exponential { .. } => names.push(format!("rate[{},{}]", j + 1, h + 1)),
                }
            }
        }
        for (j, s) in self.states.iter().enumerate() {
            if s.copula.family().is_parametric() {
                names.push(format!("theta[{}]", j + 1));
            }
        }
        names
    }

    /// Indices of π and Γ entries within η.
    pub fn probability_param_count(&self) -> usize {
        let k = self.n_states();
        k + k * k
    }

    /// Rebuild from η. Margin and copula parameters are validated; π and Γ
    /// only need to be nonnegative so that perturbed vectors can be evaluated.
    pub fn with_param_vector(&self, eta: &[f64]) -> Result<Self> {
        if eta.len() != self.n_params() {
            return Err(Error::LengthMismatch { left: eta.len(), right: self.n_params() });
        }
        let k = self.n_states();
        let mut it = eta.iter().copied();
        let pi: Vec<f64> = it.by_ref().take(k).collect();
        let gamma: Vec<Vec<f64>> = (0..k).map(|_| it.by_ref().take(k).collect()).collect();
        if pi.iter().chain(gamma.iter().flatten()).any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::InvalidModel("negative probability in parameter vector".into()));
        }
        let mut states = self.states.clone();
        for s in &mut states {
            for m in &mut s.margins {
                let p: Vec<f64> = it.by_ref().take(m.n_params()).collect();
                *m = Margin::from_params(m.family(), &p)?;
            }
        }
        for s in &mut states {
            if s.copula.family().is_parametric() {
                s.copula = s.copula.with_theta(it.next().unwrap_or(f64::NAN))?;
            }
        }
        Ok(CopulaHmm { pi, gamma, states })
    }

    /// Draw a hidden state path of length `len`.
    pub fn simulate_path<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut path = Vec::with_capacity(len);
        if len == 0 {
            return path;
        }
        let mut x = draw_categorical(&self.pi, rng);
        path.push(x);
        for _ in 1..len {
            x = draw_categorical(&self.gamma[x], rng);
            path.push(x);
        }
        path
    }

    /// Draw observations for a given state path.
    pub fn simulate_observations<R: Rng + ?Sized>(&self, path: &[usize], rng: &mut R) -> Result<Trajectory> {
        let d = self.dim();
        let mut obs = Vec::with_capacity(path.len() * d);
        for &x in path {
            let s = self.state(x)?;
            let u: Vec<f64> = if s.copula.family().is_parametric() {
                s.copula.sample_one(rng).to_vec()
            } else {
                (0..d).map(|_| rng.random::<f64>()).collect()
            };
            for (m, p) in s.margins.iter().zip(u) {
                obs.push(m.quantile_unchecked(p.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)));
            }
        }
        Trajectory::from_flat(obs, d, Some(path.to_vec()))
    }

    /// Simulate a labelled trajectory: the state path first, then observations.
    pub fn simulate<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Result<Trajectory> {
        if len == 0 {
            return Err(Error::InvalidParameter("trajectory length must be ≥ 1".into()));
        }
        let path = self.simulate_path(len, rng);
        self.simulate_observations(&path, rng)
    }
}

fn draw_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            last = i;
            acc += w;
            if r < acc {
                return i;
            }
        }
    }
    last
}

/// A sequence of T observation vectors in R^d with optional 0-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    obs: Vec<f64>,
    dim: usize,
    labels: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn new(rows: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some((t, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::InvalidTrajectory(format!("row {} has {} values, expected {dim}", t + 1, r.len())));
        }
        Trajectory::from_flat(rows.into_iter().flatten().collect(), dim, labels)
    }

    pub fn from_flat(obs: Vec<f64>, dim: usize, labels: Option<Vec<usize>>) -> Result<Self> {
        if dim == 0 || obs.is_empty() || obs.len() % dim != 0 {
            return Err(Error::InvalidTrajectory("need T ≥ 1 rows of d ≥ 1 values".into()));
        }
        if let Some(i) = obs.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidTrajectory(format!("non-finite value at row {}", i / dim + 1)));
        }
        let len = obs.len() / dim;
        if let Some(l) = &labels {
            if l.len() != len {
                return Err(Error::LengthMismatch { left: l.len(), right: len });
            }
        }
        Ok(Trajectory { obs, dim, labels })
    }

    pub fn len(&self) -> usize {
        self.obs.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.obs[t * self.dim..(t + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.obs.chunks_exact(self.dim)
    }

    /// Column `h` as a vector.
    pub fn column(&self, h: usize) -> Vec<f64> {
        self.rows().map(|r| r[h]).collect()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn without_labels(&self) -> Self {
        Trajectory { labels: None, ..self.clone() }
    }

    /// Prefix of the first `len` rows.
    pub fn truncated(&self, len: usize) -> Result<Self> {
        let len = len.min(self.len());
        Trajectory::from_flat(
            self.obs[..len * self.dim].to_vec(),
            self.dim,
            self.labels.as_ref().map(|l| l[..len].to_vec()),
        )
    }
}

/// The four three-state Frank scenarios used for simulation studies.
pub fn scenario_model(index: usize) -> Result<CopulaHmm> {
    let thetas: [f64; 3] = match index {
        1 => [30.0, 30.0, 30.0],
        2 => [5.0, 30.0, 30.0],
        3 => [5.0, 5.0, 30.0],
        4 => [5.0, 5.0, 5.0],
        _ => return Err(Error::InvalidParameter(format!("scenario must be 1..=4, got {index}"))),
    };
    let gamma = (0..3)
        .map(|a| (0..3).map(|b| if a == b { 0.5 } else { 0.25 }).collect())
        .collect();
    let states = (0..3)
        .map(|k| {
            let mu = (k + 1) as f64;
            Ok(StateSpec::new(
                vec![Margin::gaussian(mu, 0.5)?, Margin::gaussian(mu + 3.0, 0.5)?],
                Copula::new(CopulaFamily::Frank, thetas[k])?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    CopulaHmm::new(vec![0.0, 1.0, 0.0], gamma, states)
}

/// Two-state equal-weight mixture with Frank copulas at -θ and θ and standard normal margins.
pub fn frank_mixture_model(theta: f64) -> Result<CopulaHmm> {
    symmetric_mixture_model(CopulaFamily::Frank, theta)
}

/// Two-state equal-weight mixture with copulas at -θ and θ and standard normal margins.
pub fn symmetric_mixture_model(family: CopulaFamily, theta: f64) -> Result<CopulaHmm> {
    let n = Margin::gaussian(0.0, 1.0)?;
    let states = vec![
        StateSpec::new(vec![n, n], Copula::new(family, -theta)?),
        StateSpec::new(vec![n, n], Copula::new(family, theta)?),
    ];
    CopulaHmm::new(vec![0.5, 0.5], vec![vec![0.5, 0.5], vec![0.5, 0.5]], states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::norm_ln_pdf;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal2() -> Vec<Margin> {
        vec![Margin::gaussian(0.0, 1.0).unwrap(); 2]
    }

    #[test]
    fn state_log_density_composes() {
        let frank = Copula::new(CopulaFamily::Frank, 5.0).unwrap();
        let m = CopulaHmm::new(vec![1.0], vec![vec![1.0]], vec![StateSpec::new(normal2(), frank)]).unwrap();
        let got = m.state_log_density(0, &[0.0, 0.0]).unwrap();
        let expected = frank.log_density(&[0.5, 0.5]).unwrap() + 2.0 * norm_ln_pdf(0.0);
        assert!((got - expected).abs() < 1e-14);
        assert!(matches!(m.state_log_density(1, &[0.0, 0.0]), Err(Error::InvalidState { .. })));
        let ind = m.with_independence();
        assert!((ind.state_log_density(0, &[0.3, -1.0]).unwrap() - norm_ln_pdf(0.3) - norm_ln_pdf(-1.0)).abs() < 1e-14);
    }

    #[test]
    fn validation_rejects_bad_models() {
        let s = StateSpec::new(normal2(), Copula::independence());
        assert!(CopulaHmm::new(vec![0.6, 0.6], vec![vec![0.5, 0.5]; 2], vec![s.clone(), s.clone()]).is_err());
        assert!(CopulaHmm::new(vec![0.5, 0.5], vec![vec![0.5, 0.6], vec![0.5, 0.5]], vec![s.clone(), s.clone()]).is_err());
        let s3 = StateSpec::new(vec![Margin::gaussian(0.0, 1.0).unwrap(); 3], Copula::new(CopulaFamily::Frank, 2.0).unwrap());
        assert!(CopulaHmm::new(vec![1.0], vec![vec![1.0]], vec![s3]).is_err());
    }

    #[test]
    fn single_state_labels_constant() {
        let s = StateSpec::new(normal2(), Copula::new(CopulaFamily::Clayton, 2.0).unwrap());
        let m = CopulaHmm::new(vec![1.0], vec![vec![1.0]], vec![s]).unwrap();
        let tr = m.simulate(20, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(tr.labels().unwrap().iter().all(|&l| l == 0));
    }

    #[test]
    fn param_vector_round_trip() {
        let m = scenario_model(2).unwrap();
        let eta = m.param_vector();
        assert_eq!(eta.len(), m.n_params());
        assert_eq!(eta.len(), 3 + 9 + 12 + 3);
        assert_eq!(m.param_names().len(), eta.len());
        assert_eq!(m.with_param_vector(&eta).unwrap(), m);
    }

    #[test]
    fn permutation_relabels() {
        let m = scenario_model(3).unwrap();
        let p = m.permute_states(&[2, 0, 1]).unwrap();
        assert_eq!(p.states()[0], m.states()[2]);
        assert_eq!(p.pi(), &[0.0, 0.0, 1.0]);
        assert!(m.permute_states(&[0, 0, 1]).is_err());
    }

    #[test]
    fn toml_round_trip_is_exact() {
        let m = scenario_model(2).unwrap().with_param_vector(&{
            let mut e = scenario_model(2).unwrap().param_vector();
            e[12] = 1.0 / 3.0;
            e[24] = std::f64::consts::PI;
            e
        }).unwrap();
        let text = toml::to_string(&m).unwrap();
        let back: CopulaHmm = toml::from_str(&text).unwrap();
        assert_eq!(back, m);
    }
}
