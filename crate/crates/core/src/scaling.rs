//! Initialization scales, the `(γ, γ')` phase-diagram coordinates, and the
//! regime classifier.
//!
//! The output and input weights start at `a ~ N(0, ν²)` and `w ~ N(0, ε² I)`.
//! With `κ = νε` and `κ' = ν/ε`, the coordinates are `γ = -log κ / log m` and
//! `γ' = -log κ' / log m`. Equivalently `ν = m^{-γ₁}`, `ε = m^{-γ₂}` with
//! `γ = γ₁ + γ₂` and `γ' = γ₁ - γ₂`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tie tolerance when deciding whether a point lies on a region boundary.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    LeCun,
    He,
    Xavier,
    Huang,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::LeCun, Scheme::He, Scheme::Xavier, Scheme::Huang];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::LeCun => "lecun",
            Scheme::He => "he",
            Scheme::Xavier => "xavier",
            Scheme::Huang => "huang",
        }
    }

    /// `(ν, ε)` at finite width and input dimension.
    pub fn scales(self, m: usize, d: usize) -> (f64, f64) {
        let (m, d) = (m as f64, d as f64);
        match self {
            Scheme::LeCun => ((1.0 / m).sqrt(), (1.0 / d).sqrt()),
            Scheme::He => ((2.0 / m).sqrt(), (2.0 / d).sqrt()),
            Scheme::Xavier => ((2.0 / (m + 1.0)).sqrt(), (2.0 / (m + d)).sqrt()),
            Scheme::Huang => (1.0, (1.0 / m).sqrt()),
        }
    }

    /// Limiting `(γ, γ')` as `m → ∞` with `d` fixed.
    pub fn asymptotic_coordinates(self) -> (f64, f64) {
        match self {
            Scheme::LeCun | Scheme::He => (0.5, 0.5),
            Scheme::Xavier => (1.0, 0.0),
            Scheme::Huang => (0.5, -0.5),
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.name() == lower)
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub m: usize,
    pub nu: f64,
    pub eps: f64,
    pub kappa: f64,
    pub kappa_prime: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    /// Set for named schemes; used for classification instead of the
    /// finite-width exponents.
    pub scheme: Option<Scheme>,
    pub asymptotic: Option<(f64, f64)>,
}

impl ScalingConfig {
    /// `ν = m^{-γ₁}`, `ε = m^{-γ₂}`.
    pub fn from_exponents(m: usize, gamma1: f64, gamma2: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidInput(format!("from_exponents needs m >= 2, got {m}")));
        }
        let mf = m as f64;
        let nu = mf.powf(-gamma1);
        let eps = mf.powf(-gamma2);
        Ok(ScalingConfig {
            m,
            nu,
            eps,
            kappa: nu * eps,
            kappa_prime: nu / eps,
            gamma1,
            gamma2,
            gamma: gamma1 + gamma2,
            gamma_prime: gamma1 - gamma2,
            scheme: None,
            asymptotic: None,
        })
    }

    /// Symmetric split `γ₁ = (γ+γ')/2`, `γ₂ = (γ-γ')/2`.
    pub fn from_coordinates(m: usize, gamma: f64, gamma_prime: f64) -> Result<Self> {
        Self::from_exponents(m, 0.5 * (gamma + gamma_prime), 0.5 * (gamma - gamma_prime))
    }

    /// Explicit scales; exponents are read back as `-log ν / log m` etc.
    pub fn from_scales(m: usize, nu: f64, eps: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidInput("width must be at least 1".into()));
        }
        if !(nu > 0.0 && eps > 0.0 && nu.is_finite() && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "scales must be positive, got nu={nu}, eps={eps}"
            )));
        }
        let logm = (m as f64).ln();
        let (gamma1, gamma2) =
            if m >= 2 { (-nu.ln() / logm, -eps.ln() / logm) } else { (f64::NAN, f64::NAN) };
        Ok(ScalingConfig {
            m,
            nu,
            eps,
            kappa: nu * eps,
            kappa_prime: nu / eps,
            gamma1,
            gamma2,
            gamma: gamma1 + gamma2,
            gamma_prime: gamma1 - gamma2,
            scheme: None,
            asymptotic: None,
        })
    }

    pub fn named_scheme(scheme: Scheme, m: usize, d: usize) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::InvalidInput("named schemes need m, d >= 1".into()));
        }
        let (nu, eps) = scheme.scales(m, d);
        let mut cfg = Self::from_scales(m, nu, eps)?;
        cfg.scheme = Some(scheme);
        cfg.asymptotic = Some(scheme.asymptotic_coordinates());
        Ok(cfg)
    }

    /// `(γ, γ')` used for classification: asymptotic for named schemes.
    pub fn phase_coordinates(&self) -> (f64, f64) {
        self.asymptotic.unwrap_or((self.gamma, self.gamma_prime))
    }

    pub fn regime(&self) -> RegimeLabel {
        let (g, gp) = self.phase_coordinates();
        classify_regime(g, gp)
    }
}

pub fn from_exponents(m: usize, gamma1: f64, gamma2: f64) -> Result<ScalingConfig> {
    ScalingConfig::from_exponents(m, gamma1, gamma2)
}

pub fn named_scheme(name: &str, m: usize, d: usize) -> Result<ScalingConfig> {
    ScalingConfig::named_scheme(name.parse()?, m, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeLabel {
    LinearThetaLazy,
    LinearWLazy,
    Critical,
    CondensedWLag,
    CondensedALag,
    Unclassified,
}

/// Coarse side of the diagram a label belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegimeSide {
    Linear,
    Condensed,
    Boundary,
}

impl RegimeLabel {
    pub fn side(self) -> RegimeSide {
        match self {
            RegimeLabel::LinearThetaLazy | RegimeLabel::LinearWLazy => RegimeSide::Linear,
            RegimeLabel::CondensedWLag | RegimeLabel::CondensedALag => RegimeSide::Condensed,
            RegimeLabel::Critical | RegimeLabel::Unclassified => RegimeSide::Boundary,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RegimeLabel::LinearThetaLazy => "linear_theta_lazy",
            RegimeLabel::LinearWLazy => "linear_w_lazy",
            RegimeLabel::Critical => "critical",
            RegimeLabel::CondensedWLag => "condensed_w_lag",
            RegimeLabel::CondensedALag => "condensed_a_lag",
            RegimeLabel::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for RegimeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Theoretical regime of the point `(γ, γ')`.
///
/// The line `γ' = γ - 1` with `γ ≥ 1` is critical; the leftover boundary
/// set (`γ = 1`, `γ' < 0`) is reported as unclassified.
pub fn classify_regime(gamma: f64, gamma_prime: f64) -> RegimeLabel {
    let tol = BOUNDARY_TOLERANCE;
    if gamma < 1.0 - tol {
        return RegimeLabel::LinearThetaLazy;
    }
    let offset = gamma_prime - (gamma - 1.0);
    if offset > tol {
        return RegimeLabel::LinearWLazy;
    }
    if offset.abs() <= tol {
        return RegimeLabel::Critical;
    }
    // below the critical line
    if gamma > 1.0 + tol {
        if gamma_prime >= 0.0 {
            RegimeLabel::CondensedWLag
        } else {
            RegimeLabel::CondensedALag
        }
    } else {
        RegimeLabel::Unclassified
    }
}

/// Euclidean distance from `(γ, γ')` to the linear/condensed separation:
/// the segment `γ = 1, γ' ≤ 0` together with the ray `γ' = γ - 1, γ ≥ 1`.
pub fn distance_to_boundary(gamma: f64, gamma_prime: f64) -> f64 {
    let to_segment = {
        let dy = if gamma_prime > 0.0 { gamma_prime } else { 0.0 };
        ((gamma - 1.0).powi(2) + dy * dy).sqrt()
    };
    let to_ray = {
        // project onto direction (1, 1)/√2 from (1, 0)
        let s = ((gamma - 1.0) + gamma_prime) / 2.0;
        let s = s.max(0.0);
        let (px, py) = (1.0 + s, s);
        ((gamma - px).powi(2) + (gamma_prime - py).powi(2)).sqrt()
    };
    to_segment.min(to_ray)
}
