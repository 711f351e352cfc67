//! One-parameter bivariate copula families.
//!
//! Every family exposes its CDF, log-density, score in θ (analytic), Kendall's
//! τ and its inverse, and a sampler based on inverting the conditional
//! distribution `h(v | u) = ∂C(u, v)/∂u`.
//!
//! Densities and scores are evaluated at arguments clamped to
//! `[UNIT_CLAMP, 1 - UNIT_CLAMP]`; all log-space formulas are arranged so the
//! clamped corners stay finite for every admissible θ.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{brent_root, integrate, log_add_exp, norm_cdf, norm_quantile};

/// Boundary clamp applied to copula arguments before density evaluation.
pub const UNIT_CLAMP: f64 = 1e-12;

/// Largest |θ| considered for the Frank family.
pub const FRANK_THETA_MAX: f64 = 745.0;

const FRANK_SMALL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Independence,
    Frank,
    Clayton,
    Gumbel,
    Joe,
    Gauss,
    Fgm,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 7] = [
        CopulaFamily::Independence,
        CopulaFamily::Frank,
        CopulaFamily::Clayton,
        CopulaFamily::Gumbel,
        CopulaFamily::Joe,
        CopulaFamily::Gauss,
        CopulaFamily::Fgm,
    ];

    /// Whether the family carries a dependence parameter.
    pub fn is_parametric(self) -> bool {
        self != CopulaFamily::Independence
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CopulaFamily::Independence => "independence",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
            CopulaFamily::Gumbel => "gumbel",
            CopulaFamily::Joe => "joe",
            CopulaFamily::Gauss => "gauss",
            CopulaFamily::Fgm => "fgm",
        }
    }

    /// Admissible closed range of θ (open ends are handled by `validate`).
    pub fn theta_range(self) -> (f64, f64) {
        match self {
            CopulaFamily::Independence => (0.0, 0.0),
            CopulaFamily::Frank => (-FRANK_THETA_MAX, FRANK_THETA_MAX),
            CopulaFamily::Clayton => (0.0, f64::INFINITY),
            CopulaFamily::Gumbel | CopulaFamily::Joe => (1.0, f64::INFINITY),
            CopulaFamily::Gauss | CopulaFamily::Fgm => (-1.0, 1.0),
        }
    }

    /// Range of Kendall's τ attainable by the family.
    pub fn tau_range(self) -> (f64, f64) {
        match self {
            CopulaFamily::Independence => (0.0, 0.0),
            CopulaFamily::Frank | CopulaFamily::Gauss => (-1.0, 1.0),
            CopulaFamily::Clayton => (0.0, 1.0),
            CopulaFamily::Gumbel | CopulaFamily::Joe => (0.0, 1.0),
            CopulaFamily::Fgm => (-2.0 / 9.0, 2.0 / 9.0),
        }
    }

    fn validate(self, theta: f64) -> Result<()> {
        let ok = theta.is_finite()
            && match self {
                CopulaFamily::Independence => true,
                CopulaFamily::Frank => theta.abs() <= FRANK_THETA_MAX,
                CopulaFamily::Clayton => theta > 0.0,
                CopulaFamily::Gumbel | CopulaFamily::Joe => theta >= 1.0,
                CopulaFamily::Gauss => theta.abs() < 1.0,
                CopulaFamily::Fgm => theta.abs() <= 1.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("θ={theta} is outside the {self} range")))
        }
    }
}

impl fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CopulaFamily::Independence => "Independence",
            CopulaFamily::Frank => "Frank",
            CopulaFamily::Clayton => "Clayton",
            CopulaFamily::Gumbel => "Gumbel",
            CopulaFamily::Joe => "Joe",
            CopulaFamily::Gauss => "Gauss",
            CopulaFamily::Fgm => "FGM",
        };
        f.write_str(name)
    }
}

impl FromStr for CopulaFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        CopulaFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == lower || (lower == "gaussian" && *f == CopulaFamily::Gauss))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown copula family '{s}'")))
    }
}

#[derive(Serialize, Deserialize)]
struct CopulaRepr {
    family: CopulaFamily,
    #[serde(default)]
    theta: f64,
}

/// A copula family together with its dependence parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CopulaRepr", into = "CopulaRepr")]
pub struct Copula {
    family: CopulaFamily,
    theta: f64,
}

impl TryFrom<CopulaRepr> for Copula {
    type Error = Error;
    fn try_from(r: CopulaRepr) -> Result<Self> {
        Copula::new(r.family, r.theta)
    }
}

impl From<Copula> for CopulaRepr {
    fn from(c: Copula) -> Self {
        CopulaRepr { family: c.family, theta: c.theta }
    }
}

#[inline]
fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
}

impl Copula {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        family.validate(theta)?;
        let theta = if family == CopulaFamily::Independence { 0.0 } else { theta };
        Ok(Copula { family, theta })
    }

    pub fn independence() -> Self {
        Copula { family: CopulaFamily::Independence, theta: 0.0 }
    }

    pub fn family(&self) -> CopulaFamily {
        self.family
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Same family at a different parameter.
    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Copula::new(self.family, theta)
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        let ok = match self.family {
            CopulaFamily::Independence => dim >= 1,
            CopulaFamily::Gauss | CopulaFamily::Fgm => dim == 2,
            CopulaFamily::Frank if self.theta < 0.0 => dim == 2,
            _ => dim >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnsupportedDimension { family: self.family, dim })
        }
    }

    /// C(u | θ) for `u` in `[0, 1]^d`.
    pub fn cdf(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u.len())?;
        for &x in u {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidParameter(format!("copula CDF argument {x} outside [0, 1]")));
            }
        }
        if u.iter().any(|&x| x == 0.0) {
            return Ok(0.0);
        }
        let inner: Vec<f64> = u.iter().copied().filter(|&x| x < 1.0).collect();
        match inner.len() {
            0 => return Ok(1.0),
            1 => return Ok(inner[0]),
            _ => {}
        }
        let v = match self.family {
            CopulaFamily::Independence => inner.iter().product(),
            CopulaFamily::Frank => frank_cdf(self.theta, &inner),
            CopulaFamily::Clayton => clayton_cdf(self.theta, &inner),
            CopulaFamily::Gumbel => gumbel_cdf(self.theta, &inner),
            CopulaFamily::Joe => joe_cdf(self.theta, &inner),
            CopulaFamily::Gauss => gauss_cdf(self.theta, inner[0], inner[1]),
            CopulaFamily::Fgm => {
                let (a, b) = (inner[0], inner[1]);
                a * b * (1.0 + self.theta * (1.0 - a) * (1.0 - b))
            }
        };
        Ok(v.clamp(0.0, 1.0))
    }

    fn check_interior(&self, u: &[f64]) -> Result<()> {
        self.check_dim(u.len())?;
        if self.family != CopulaFamily::Independence && u.len() != 2 {
            return Err(Error::UnsupportedDimension { family: self.family, dim: u.len() });
        }
        for &x in u {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::NonInterior(x));
            }
        }
        Ok(())
    }

    /// log c(u | θ) for `u` strictly inside the unit hypercube.
    pub fn log_density(&self, u: &[f64]) -> Result<f64> {
        self.check_interior(u)?;
        if self.family == CopulaFamily::Independence {
            return Ok(0.0);
        }
        Ok(self.ln_pdf2(u[0], u[1]))
    }

    /// ∂/∂θ log c(u | θ).
    pub fn score(&self, u: &[f64]) -> Result<f64> {
        self.check_interior(u)?;
        if self.family == CopulaFamily::Independence {
            return Ok(0.0);
        }
        Ok(self.score2(u[0], u[1]))
    }

    /// Bivariate log-density without argument validation; inputs are clamped.
    pub fn ln_pdf2(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let t = self.theta;
        match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Frank => {
                if t.abs() < FRANK_SMALL {
                    t * (1.0 - 2.0 * u) * (1.0 - 2.0 * v) / 2.0
                } else if t > 0.0 {
                    frank_ln_pdf_pos(t, u, v)
                } else {
                    frank_ln_pdf_pos(-t, u, 1.0 - v)
                }
            }
            CopulaFamily::Clayton => clayton_ln_pdf(t, u, v),
            CopulaFamily::Gumbel => gumbel_ln_pdf(t, u, v),
            CopulaFamily::Joe => joe_ln_pdf(t, u, v),
            CopulaFamily::Gauss => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                let r2 = 1.0 - t * t;
                -0.5 * r2.ln() - (t * t * (x * x + y * y) - 2.0 * t * x * y) / (2.0 * r2)
            }
            CopulaFamily::Fgm => (1.0 + t * (1.0 - 2.0 * u) * (1.0 - 2.0 * v)).ln(),
        }
    }

    /// Bivariate score in θ without argument validation; inputs are clamped.
    pub fn score2(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let t = self.theta;
        match self.family {
            CopulaFamily::Independence => 0.0,
            CopulaFamily::Frank => {
                if t.abs() < FRANK_SMALL {
                    (1.0 - 2.0 * u) * (1.0 - 2.0 * v) / 2.0
                } else if t > 0.0 {
                    frank_score_pos(t, u, v)
                } else {
                    -frank_score_pos(-t, u, 1.0 - v)
                }
            }
            CopulaFamily::Clayton => clayton_score(t, u, v),
            CopulaFamily::Gumbel => gumbel_score(t, u, v),
            CopulaFamily::Joe => joe_score(t, u, v),
            CopulaFamily::Gauss => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                let r2 = 1.0 - t * t;
                let s = x * x + y * y;
                let q = t * t * s - 2.0 * t * x * y;
                let dq = 2.0 * t * s - 2.0 * x * y;
                t / r2 - (dq * r2 + 2.0 * t * q) / (2.0 * r2 * r2)
            }
            CopulaFamily::Fgm => {
                let a = (1.0 - 2.0 * u) * (1.0 - 2.0 * v);
                a / (1.0 + t * a)
            }
        }
    }

    /// Kendall's τ implied by the parameter.
    pub fn kendall_tau(&self) -> f64 {
        theta_to_tau(self.family, self.theta)
    }

    /// Conditional distribution `P(V ≤ v | U = u)`.
    pub fn h_function(&self, u: f64, v: f64) -> f64 {
        let (u, v) = (clamp_unit(u), clamp_unit(v));
        let t = self.theta;
        let h = match self.family {
            CopulaFamily::Independence => v,
            CopulaFamily::Frank => {
                if t.abs() < FRANK_SMALL {
                    v
                } else if t > 0.0 {
                    frank_h_pos(t, u, v)
                } else {
                    1.0 - frank_h_pos(-t, u, 1.0 - v)
                }
            }
            CopulaFamily::Clayton => {
                // h = u^{-θ-1} S^{-1/θ-1}, S = u^{-θ} + v^{-θ} - 1
                let (a, b) = (-t * u.ln(), -t * v.ln());
                let ln_s = clayton_ln_s(a, b);
                ((1.0 + t) / t * a - (1.0 / t + 1.0) * ln_s).exp()
            }
            CopulaFamily::Gumbel => gumbel_ln_h(t, u, v).exp(),
            CopulaFamily::Joe => joe_ln_h(t, u, v).exp(),
            CopulaFamily::Gauss => {
                let (x, y) = (norm_quantile(u), norm_quantile(v));
                norm_cdf((y - t * x) / (1.0 - t * t).sqrt())
            }
            CopulaFamily::Fgm => v + t * v * (1.0 - v) * (1.0 - 2.0 * u),
        };
        h.clamp(0.0, 1.0)
    }

    /// Inverse of `h_function` in its second argument.
    pub fn h_inverse(&self, u: f64, p: f64) -> f64 {
        let u = clamp_unit(u);
        let p = p.clamp(0.0, 1.0);
        let t = self.theta;
        let v = match self.family {
            CopulaFamily::Independence => p,
            CopulaFamily::Frank => {
                if t.abs() < FRANK_SMALL {
                    p
                } else if t > 0.0 {
                    frank_h_inv_pos(t, u, p)
                } else {
                    1.0 - frank_h_inv_pos(-t, u, 1.0 - p)
                }
            }
            CopulaFamily::Clayton => {
                if p <= 0.0 {
                    return 0.0;
                }
                // v = (1 + u^{-θ}(p^{-θ/(1+θ)} - 1))^{-1/θ}
                let a = -t * u.ln();
                let w = (-t / (1.0 + t) * p.ln()).exp_m1();
                let ln_inner = if a < 700.0 { (a.exp() * w).ln_1p() } else { a + w.ln() };
                (-ln_inner / t).exp()
            }
            CopulaFamily::Gauss => {
                let x = norm_quantile(u);
                norm_cdf(t * x + (1.0 - t * t).sqrt() * norm_quantile(p))
            }
            CopulaFamily::Fgm => {
                let a = t * (1.0 - 2.0 * u);
                let disc = ((1.0 + a) * (1.0 + a) - 4.0 * a * p).max(0.0);
                2.0 * p / ((1.0 + a) + disc.sqrt())
            }
            CopulaFamily::Gumbel | CopulaFamily::Joe => {
                if p <= 0.0 {
                    return 0.0;
                }
                if p >= 1.0 {
                    return 1.0;
                }
                let mut lo = 0.0f64;
                let mut hi = 1.0f64;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if self.h_function(u, mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        v.clamp(0.0, 1.0)
    }

    /// Draw `count` iid pairs by the conditional inversion method.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<[f64; 2]> {
        (0..count).map(|_| self.sample_one(rng)).collect()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let u: f64 = rng.random();
        let p: f64 = rng.random();
        [u, self.h_inverse(u, p)]
    }
}

impl fmt::Display for Copula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.family.is_parametric() {
            write!(f, "{}(θ={})", self.family, self.theta)
        } else {
            write!(f, "{}", self.family)
        }
    }
}

// ---------------------------------------------------------------------------
// Frank (θ > 0 kernels; negative θ goes through c_{-θ}(u, v) = c_θ(u, 1 - v))
// ---------------------------------------------------------------------------

fn frank_inner(t: f64, u: f64, v: f64) -> (f64, f64, f64, f64) {
    let (m, mx) = if u < v { (u, v) } else { (v, u) };
    let e_diff = (-t * (mx - m)).exp();
    let a = -(-t * mx).exp_m1();
    let b = -(-t * (1.0 - mx)).exp_m1();
    let inner = a + e_diff * b;
    (inner, m, mx, e_diff)
}

fn frank_ln_pdf_pos(t: f64, u: f64, v: f64) -> f64 {
    let (inner, m, mx, _) = frank_inner(t, u, v);
    t.ln() + (-(-t).exp_m1()).ln() - t * (mx - m) - 2.0 * inner.ln()
}

fn frank_score_pos(t: f64, u: f64, v: f64) -> f64 {
    let (inner, m, mx, e_diff) = frank_inner(t, u, v);
    let b = -(-t * (1.0 - mx)).exp_m1();
    let d_inner = mx * (-t * mx).exp() - (mx - m) * e_diff * b
        + e_diff * (1.0 - mx) * (-t * (1.0 - mx)).exp();
    1.0 / t + 1.0 / t.exp_m1() - (mx - m) - 2.0 * d_inner / inner
}

fn frank_cdf(t: f64, u: &[f64]) -> f64 {
    if t.abs() < FRANK_SMALL {
        return u.iter().product();
    }
    if t < 0.0 {
        // bivariate only (dimension checked by the caller)
        let pos = frank_cdf(-t, &[u[0], 1.0 - u[1]]);
        return u[0] - pos;
    }
    if u.len() == 2 {
        let (inner, m, _, _) = frank_inner(t, u[0], u[1]);
        return m - (inner.ln() - (-(-t).exp_m1()).ln()) / t;
    }
    let denom = (-t).exp_m1();
    let mut prod = 1.0;
    for &x in u {
        prod *= (-t * x).exp_m1();
    }
    prod /= denom.powi(u.len() as i32 - 1);
    -(prod.ln_1p()) / t
}

fn frank_h_pos(t: f64, u: f64, v: f64) -> f64 {
    // h = A / (A + B), A = e^{-θu}(1 - e^{-θv}), B = e^{-θv}(1 - e^{-θ(1-v)})
    let ln_ratio = -t * (v - u) + (-(-t * (1.0 - v)).exp_m1()).ln() - (-(-t * v).exp_m1()).ln();
    1.0 / (1.0 + ln_ratio.exp())
}

fn frank_h_inv_pos(t: f64, u: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    // v = [ln(p + (1-p)e^{-θu}) - ln((1-p)e^{-θu} + p e^{-θ})] / θ
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let num = log_add_exp(lp, lq - t * u);
    let den = log_add_exp(lq - t * u, lp - t);
    (num - den) / t
}

// ---------------------------------------------------------------------------
// Clayton
// ---------------------------------------------------------------------------

/// ln(e^a + e^b - 1) for a, b ≥ 0.
fn clayton_ln_s(a: f64, b: f64) -> f64 {
    let mx = a.max(b);
    if mx < 700.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        mx + ((a - mx).exp() + (b - mx).exp() - (-mx).exp()).ln()
    }
}

fn clayton_cdf(t: f64, u: &[f64]) -> f64 {
    let a: Vec<f64> = u.iter().map(|&x| -t * x.ln()).collect();
    let mx = a.iter().copied().fold(0.0, f64::max);
    let ln_s = if mx < 700.0 {
        a.iter().map(|x| x.exp_m1()).sum::<f64>().ln_1p()
    } else {
        let d = a.len() as f64;
        mx + (a.iter().map(|x| (x - mx).exp()).sum::<f64>() - (d - 1.0) * (-mx).exp()).ln()
    };
    (-ln_s / t).exp()
}

fn clayton_ln_pdf(t: f64, u: f64, v: f64) -> f64 {
    let (lu, lv) = (u.ln(), v.ln());
    let ln_s = clayton_ln_s(-t * lu, -t * lv);
    (1.0 + t).ln() - (1.0 + t) * (lu + lv) - (2.0 + 1.0 / t) * ln_s
}

fn clayton_score(t: f64, u: f64, v: f64) -> f64 {
    let (lu, lv) = (u.ln(), v.ln());
    let (a, b) = (-t * lu, -t * lv);
    let ln_s = clayton_ln_s(a, b);
    let mx = a.max(b);
    // S_θ / S with both scaled by e^{-mx}
    let s_scaled = (ln_s - mx).exp();
    let ds_scaled = -lu * (a - mx).exp() - lv * (b - mx).exp();
    1.0 / (1.0 + t) - lu - lv + ln_s / (t * t) - (2.0 + 1.0 / t) * ds_scaled / s_scaled
}

// ---------------------------------------------------------------------------
// Gumbel
// ---------------------------------------------------------------------------

fn gumbel_cdf(t: f64, u: &[f64]) -> f64 {
    let l_a = crate::numeric::log_sum_exp(u.iter().map(|&x| t * (-x.ln()).ln()));
    (-(l_a / t).exp()).exp()
}

fn gumbel_parts(t: f64, u: f64, v: f64) -> (f64, f64, f64, f64, f64, f64) {
    let (x, y) = (-u.ln(), -v.ln());
    let (lx, ly) = (x.ln(), y.ln());
    let l_a = log_add_exp(t * lx, t * ly);
    let w = (l_a / t).exp();
    (x, y, lx, ly, l_a, w)
}

fn gumbel_ln_pdf(t: f64, u: f64, v: f64) -> f64 {
    let (x, y, lx, ly, l_a, w) = gumbel_parts(t, u, v);
    -w + (t - 1.0) * (lx + ly) + x + y + (-2.0 + 1.0 / t) * l_a + (w + t - 1.0).ln()
}

fn gumbel_score(t: f64, u: f64, v: f64) -> f64 {
    let (_, _, lx, ly, l_a, w) = gumbel_parts(t, u, v);
    let px = (t * lx - l_a).exp();
    let py = (t * ly - l_a).exp();
    let dla = px * lx + py * ly;
    let dw = w * (dla / t - l_a / (t * t));
    -dw + lx + ly - l_a / (t * t) + (-2.0 + 1.0 / t) * dla + (dw + 1.0) / (w + t - 1.0)
}

fn gumbel_ln_h(t: f64, u: f64, v: f64) -> f64 {
    let (x, _, lx, _, l_a, w) = gumbel_parts(t, u, v);
    -w + (1.0 / t - 1.0) * l_a + (t - 1.0) * lx + x
}

// ---------------------------------------------------------------------------
// Joe
// ---------------------------------------------------------------------------

fn joe_cdf(t: f64, u: &[f64]) -> f64 {
    // S = 1 - Π(1 - ū_i^θ)
    let log_prod: f64 = u.iter().map(|&x| (-((1.0 - x).powf(t))).ln_1p()).sum();
    let s = -log_prod.exp_m1();
    1.0 - (s.ln() / t).exp()
}

/// (ln S, S_θ/S) for the bivariate Joe kernel.
fn joe_s(t: f64, lub: f64, lvb: f64) -> (f64, f64) {
    let (la, lb) = (t * lub, t * lvb);
    let (a, b) = (la.exp(), lb.exp());
    let (mx, mn) = if la >= lb { (la, lb) } else { (lb, la) };
    let scaled = -(mn.exp_m1()) + (mn - mx).exp();
    let ln_s = mx + scaled.ln();
    let ds_scaled = (la - mx).exp() * lub * (1.0 - b) + (lb - mx).exp() * lvb * (1.0 - a);
    (ln_s, ds_scaled / scaled)
}

fn joe_ln_pdf(t: f64, u: f64, v: f64) -> f64 {
    let (lub, lvb) = ((-u).ln_1p(), (-v).ln_1p());
    let (ln_s, _) = joe_s(t, lub, lvb);
    (1.0 / t - 2.0) * ln_s + (t - 1.0) * (lub + lvb) + (t - 1.0 + ln_s.exp()).ln()
}

fn joe_score(t: f64, u: f64, v: f64) -> f64 {
    let (lub, lvb) = ((-u).ln_1p(), (-v).ln_1p());
    let (ln_s, ds_over_s) = joe_s(t, lub, lvb);
    let s = ln_s.exp();
    let ds = ds_over_s * s;
    -ln_s / (t * t) + (1.0 / t - 2.0) * ds_over_s + lub + lvb + (1.0 + ds) / (t - 1.0 + s)
}

fn joe_ln_h(t: f64, u: f64, v: f64) -> f64 {
    let (lub, lvb) = ((-u).ln_1p(), (-v).ln_1p());
    let (ln_s, _) = joe_s(t, lub, lvb);
    (t - 1.0) * lub + (-(t * lvb).exp_m1()).ln() + (1.0 / t - 1.0) * ln_s
}

// ---------------------------------------------------------------------------
// Gauss
// ---------------------------------------------------------------------------

fn gauss_cdf(rho: f64, u: f64, v: f64) -> f64 {
    let (x, y) = (norm_quantile(u), norm_quantile(v));
    let base = u * v;
    if rho == 0.0 {
        return base;
    }
    let upper = rho.asin();
    let integrand = |s: f64| {
        let c = s.cos();
        (-(x * x + y * y - 2.0 * x * y * s.sin()) / (2.0 * c * c)).exp()
    };
    base + integrate(integrand, 0.0, upper, 1e-14) / (2.0 * PI)
}

// ---------------------------------------------------------------------------
// Kendall's τ
// ---------------------------------------------------------------------------

/// First Debye function D₁(x) = (1/x)∫₀ˣ t/(eᵗ-1) dt for x > 0.
pub fn debye1(x: f64) -> f64 {
    if x < 1e-8 {
        return 1.0 - x / 4.0;
    }
    let f = |t: f64| if t < 1e-300 { 1.0 } else { t / t.exp_m1() };
    integrate(f, 0.0, x, 1e-15) / x
}

fn joe_tau(t: f64) -> f64 {
    if t <= 1.0 {
        return 0.0;
    }
    const TERMS: usize = 1000;
    let mut sum = 0.0;
    for k in (1..=TERMS).rev() {
        let k = k as f64;
        sum += 1.0 / (k * (t * k + 2.0) * (t * (k - 1.0) + 2.0));
    }
    // tail Σ_{k>N} ≈ ∫_{N+1/2}^∞, in the variable s = 1/x
    let s_max = 1.0 / (TERMS as f64 + 0.5);
    let tail = integrate(|s| s / ((t + 2.0 * s) * (t + (2.0 - t) * s)), 0.0, s_max, 1e-18);
    1.0 - 4.0 * (sum + tail)
}

/// Kendall's τ of the family at parameter θ.
pub fn theta_to_tau(family: CopulaFamily, theta: f64) -> f64 {
    match family {
        CopulaFamily::Independence => 0.0,
        CopulaFamily::Frank => {
            let a = theta.abs();
            if a < 1e-6 {
                return theta / 9.0;
            }
            let tau = 1.0 - 4.0 / a * (1.0 - debye1(a));
            tau.copysign(theta)
        }
        CopulaFamily::Clayton => theta / (theta + 2.0),
        CopulaFamily::Gumbel => 1.0 - 1.0 / theta,
        CopulaFamily::Joe => joe_tau(theta),
        CopulaFamily::Gauss => 2.0 / PI * theta.asin(),
        CopulaFamily::Fgm => 2.0 * theta / 9.0,
    }
}

/// Parameter of `family` reproducing Kendall's τ.
pub fn tau_to_theta(family: CopulaFamily, tau: f64) -> Result<Copula> {
    let bad = || Error::UnattainableTau { family, tau };
    if !tau.is_finite() {
        return Err(bad());
    }
    let theta = match family {
        CopulaFamily::Independence => {
            if tau != 0.0 {
                return Err(bad());
            }
            0.0
        }
        CopulaFamily::Frank => {
            if tau.abs() >= 1.0 {
                return Err(bad());
            }
            if tau == 0.0 {
                0.0
            } else {
                let a = tau.abs();
                if a > theta_to_tau(family, FRANK_THETA_MAX) {
                    return Err(bad());
                }
                let r = brent_root(
                    |x| theta_to_tau(family, x) - a,
                    1e-7,
                    FRANK_THETA_MAX,
                    1e-14,
                    500,
                )
                .ok_or_else(bad)?;
                r.copysign(tau)
            }
        }
        CopulaFamily::Clayton => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(bad());
            }
            2.0 * tau / (1.0 - tau)
        }
        CopulaFamily::Gumbel => {
            if !(0.0..1.0).contains(&tau) {
                return Err(bad());
            }
            1.0 / (1.0 - tau)
        }
        CopulaFamily::Joe => {
            if !(0.0..1.0).contains(&tau) {
                return Err(bad());
            }
            if tau == 0.0 {
                1.0
            } else {
                let mut hi = 2.0;
                while joe_tau(hi) < tau {
                    hi *= 2.0;
                    if hi > 1e7 {
                        return Err(bad());
                    }
                }
                brent_root(|x| joe_tau(x) - tau, 1.0, hi, 1e-13, 500).ok_or_else(bad)?
            }
        }
        CopulaFamily::Gauss => {
            if tau.abs() >= 1.0 {
                return Err(bad());
            }
            (PI * tau / 2.0).sin()
        }
        CopulaFamily::Fgm => {
            if tau.abs() > 2.0 / 9.0 {
                return Err(bad());
            }
            (4.5 * tau).clamp(-1.0, 1.0)
        }
    };
    Copula::new(family, theta)
}
