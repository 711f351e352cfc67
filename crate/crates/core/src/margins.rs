//! Univariate state-dependent marginal families with closed-form weighted MLE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{norm_cdf, norm_ln_pdf, norm_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginFamily {
    Gaussian,
    Exponential,
}

impl MarginFamily {
    pub fn n_params(self) -> usize {
        match self {
            MarginFamily::Gaussian => 2,
            MarginFamily::Exponential => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MarginFamily::Gaussian => "gaussian",
            MarginFamily::Exponential => "exponential",
        }
    }
}

impl fmt::Display for MarginFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MarginFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(MarginFamily::Gaussian),
            "exponential" | "exp" => Ok(MarginFamily::Exponential),
            other => Err(Error::InvalidParameter(format!("unknown margin family '{other}'"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct MarginRepr {
    family: MarginFamily,
    params: Vec<f64>,
}

/// A univariate marginal distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarginRepr", into = "MarginRepr")]
pub enum Margin {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
}

impl TryFrom<MarginRepr> for Margin {
    type Error = Error;
    fn try_from(r: MarginRepr) -> Result<Self> {
        Margin::from_params(r.family, &r.params)
    }
}

impl From<Margin> for MarginRepr {
    fn from(m: Margin) -> Self {
        MarginRepr { family: m.family(), params: m.params() }
    }
}

impl Margin {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() || !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("Gaussian margin needs finite mean and sd>0, got ({mean}, {sd})")));
        }
        Ok(Margin::Gaussian { mean, sd })
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("exponential rate must be > 0, got {rate}")));
        }
        Ok(Margin::Exponential { rate })
    }

    pub fn from_params(family: MarginFamily, params: &[f64]) -> Result<Self> {
        if params.len() != family.n_params() {
            return Err(Error::InvalidParameter(format!(
                "{family} margin takes {} parameters, got {}",
                family.n_params(),
                params.len()
            )));
        }
        match family {
            MarginFamily::Gaussian => Margin::gaussian(params[0], params[1]),
            MarginFamily::Exponential => Margin::exponential(params[0]),
        }
    }

    pub fn family(&self) -> MarginFamily {
        match self {
            Margin::Gaussian { .. } => MarginFamily::Gaussian,
            Margin::Exponential { .. } => MarginFamily::Exponential,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Margin::Gaussian { mean, sd } => vec![mean, sd],
            Margin::Exponential { rate } => vec![rate],
        }
    }

    pub fn n_params(&self) -> usize {
        self.family().n_params()
    }

    pub fn ln_pdf(&self, y: f64) -> f64 {
        match *self {
            Margin::Gaussian { mean, sd } => norm_ln_pdf((y - mean) / sd) - sd.ln(),
            Margin::Exponential { rate } => {
                if y < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    rate.ln() - rate * y
                }
            }
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Margin::Gaussian { mean, sd } => norm_cdf((y - mean) / sd),
            Margin::Exponential { rate } => {
                if y <= 0.0 {
                    0.0
                } else {
                    -(-rate * y).exp_m1()
                }
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!("quantile level {p} outside (0, 1)")));
        }
        Ok(self.quantile_unchecked(p))
    }

    pub(crate) fn quantile_unchecked(&self, p: f64) -> f64 {
        match *self {
            Margin::Gaussian { mean, sd } => mean + sd * norm_quantile(p),
            Margin::Exponential { rate } => -(-p).ln_1p() / rate,
        }
    }

    /// Gradient of `ln_pdf(y)` in the parameters, in `params()` order.
    pub fn score(&self, y: f64) -> [f64; 2] {
        match *self {
            Margin::Gaussian { mean, sd } => {
                let z = (y - mean) / sd;
                [z / sd, (z * z - 1.0) / sd]
            }
            Margin::Exponential { rate } => [1.0 / rate - y, 0.0],
        }
    }
}

impl fmt::Display for Margin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Margin::Gaussian { mean, sd } => write!(f, "N({mean}, sd={sd})"),
            Margin::Exponential { rate } => write!(f, "Exp(rate={rate})"),
        }
    }
}

/// Maximizer of Σ_t w_t log f(y_t; λ) over the family's parameters.
pub fn weighted_mle(family: MarginFamily, weights: &[f64], data: &[f64]) -> Result<Margin> {
    if weights.len() != data.len() {
        return Err(Error::LengthMismatch { left: weights.len(), right: data.len() });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeights);
    }
    let mean = weights.iter().zip(data).map(|(w, y)| w / total * y).sum::<f64>();
    match family {
        MarginFamily::Gaussian => {
            let var = weights
                .iter()
                .zip(data)
                .map(|(w, y)| w / total * (y - mean) * (y - mean))
                .sum::<f64>();
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                return Err(Error::DegenerateData(format!(
                    "weighted standard deviation is zero (mean {mean})"
                )));
            }
            Margin::gaussian(mean, sd)
        }
        MarginFamily::Exponential => {
            if data.iter().zip(weights).any(|(y, w)| *w > 0.0 && *y < 0.0) {
                return Err(Error::DegenerateData("negative value under an exponential margin".into()));
            }
            if !(mean > 0.0) {
                return Err(Error::DegenerateData("weighted mean is zero for exponential margin".into()));
            }
            Margin::exponential(1.0 / mean)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_values() {
        let m = Margin::gaussian(0.0, 1.0).unwrap();
        assert!((m.pdf(0.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert_eq!(m.quantile(0.5).unwrap(), 0.0);
        let e = Margin::exponential(2.0).unwrap();
        assert!((e.cdf(1.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for m in [Margin::gaussian(1.5, 0.3).unwrap(), Margin::exponential(0.7).unwrap()] {
            for &p in &[1e-6, 0.1, 0.5, 0.9, 0.999] {
                let y = m.quantile(p).unwrap();
                assert!((m.cdf(y) - p).abs() < 1e-10, "{m} p={p}");
            }
        }
        assert!(Margin::gaussian(0.0, 1.0).unwrap().quantile(1.0).is_err());
    }

    #[test]
    fn weighted_mle_examples() {
        let m = weighted_mle(MarginFamily::Gaussian, &[0.5, 0.5], &[2.0, 4.0]).unwrap();
        assert_eq!(m, Margin::Gaussian { mean: 3.0, sd: 1.0 });
        let err = weighted_mle(MarginFamily::Gaussian, &[1.0, 0.0, 0.0], &[5.0, 1.0, 2.0]);
        assert!(matches!(err, Err(Error::DegenerateData(_))));
        assert!(matches!(weighted_mle(MarginFamily::Gaussian, &[0.0, 0.0], &[1.0, 2.0]), Err(Error::ZeroWeights)));
        let data = [1.0, 2.0, 3.0, 6.0];
        let m = weighted_mle(MarginFamily::Gaussian, &[1.0; 4], &data).unwrap();
        let Margin::Gaussian { mean, sd } = m else { unreachable!() };
        assert!((mean - 3.0).abs() < 1e-15);
        assert!((sd - 3.5f64.sqrt()).abs() < 1e-14);
        let e = weighted_mle(MarginFamily::Exponential, &[1.0, 3.0], &[2.0, 1.0]).unwrap();
        assert!((e.params()[0] - 4.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn score_matches_finite_difference() {
        let m = Margin::gaussian(0.4, 1.3).unwrap();
        let y = 2.1;
        let s = m.score(y);
        let h = 1e-6;
        let d_mu = (Margin::gaussian(0.4 + h, 1.3).unwrap().ln_pdf(y) - Margin::gaussian(0.4 - h, 1.3).unwrap().ln_pdf(y)) / (2.0 * h);
        let d_sd = (Margin::gaussian(0.4, 1.3 + h).unwrap().ln_pdf(y) - Margin::gaussian(0.4, 1.3 - h).unwrap().ln_pdf(y)) / (2.0 * h);
        assert!((s[0] - d_mu).abs() < 1e-8);
        assert!((s[1] - d_sd).abs() < 1e-8);
    }
}
