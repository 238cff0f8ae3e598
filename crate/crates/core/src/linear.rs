//! The linearized dynamics around small weights and the terms that measure
//! how far the real flow departs from it.
//!
//! Replacing `σ(εs)/ε` by `s` and dropping the network output gives, in
//! normalized variables,
//!
//! ```text
//! da_k/dt = (ε/ν) ⟨w_k, z⟩        dw_k/dt = (ν/ε) a_k z
//! ```
//!
//! i.e. `d[(ν/ε) a_k; w_k]/dt = A [(ν/ε) a_k; w_k]` with
//! `A = [[0, zᵀ], [z, 0]]`.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::{CondensationDirection, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, SymmetricMatrix};
use crate::network::{residuals, NormalizedParams};
use crate::scaling::{classify_regime, RegimeLabel, ScalingConfig};

/// Largest `‖z‖ t` accepted by [`analytic_solution`]; `cosh` overflows past
/// roughly 710.
pub const MAX_GROWTH_EXPONENT: f64 = 700.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub direction: CondensationDirection,
    pub matrix: SymmetricMatrix,
}

impl LinearSystem {
    pub fn new(direction: CondensationDirection) -> Self {
        let d = direction.z.len();
        let z = &direction.z;
        let matrix = SymmetricMatrix::from_fn(d + 1, |i, j| match (i, j) {
            (0, j) if j > 0 => z[j - 1],
            _ => 0.0,
        });
        LinearSystem { direction, matrix }
    }

    pub fn dim(&self) -> usize {
        self.direction.z.len()
    }

    /// Right-hand side of the reduced flow for one neuron, on the
    /// normalized state `[a, w_1..w_d]`.
    pub fn rhs(&self, scaling: &ScalingConfig, state: &[f64], out: &mut [f64]) {
        let z = &self.direction.z;
        let (a, w) = (state[0], &state[1..]);
        out[0] = scaling.eps / scaling.nu * dot(w, z);
        let rate = scaling.nu / scaling.eps * a;
        for (o, zj) in out[1..].iter_mut().zip(z) {
            *o = rate * zj;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// The two nonzero eigenpairs `(‖z‖, [1, ẑ]/√2)` and `(-‖z‖, [-1, ẑ]/√2)`.
pub fn eigenpairs(system: &LinearSystem) -> [EigenPair; 2] {
    let dir = &system.direction;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let tail: Vec<f64> = dir.z_hat.iter().map(|v| v * s).collect();
    let with_head = |head: f64| {
        let mut v = Vec::with_capacity(tail.len() + 1);
        v.push(head);
        v.extend_from_slice(&tail);
        v
    };
    [
        EigenPair { value: dir.z_norm, vector: with_head(s) },
        EigenPair { value: -dir.z_norm, vector: with_head(-s) },
    ]
}

/// `(par, perp)` with `par = ⟨w, ẑ⟩` and `perp = w - par ẑ`.
pub fn decompose_w(w: &[f64], z_hat: &[f64]) -> Result<(f64, Vec<f64>)> {
    if w.len() != z_hat.len() {
        return Err(Error::DimensionMismatch { expected: z_hat.len(), found: w.len() });
    }
    let par = dot(w, z_hat);
    let perp = w.iter().zip(z_hat).map(|(x, u)| x - par * u).collect();
    Ok((par, perp))
}

/// Closed-form solution of the reduced flow for one neuron, returned in the
/// original scale as `(ν a(t), ε w(t))`.
pub fn analytic_solution(
    a0: f64,
    w0: &[f64],
    scaling: &ScalingConfig,
    direction: &CondensationDirection,
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("time must be non-negative, got {t}")));
    }
    let exponent = direction.z_norm * t;
    if exponent > MAX_GROWTH_EXPONENT {
        return Err(Error::HorizonExceeded { exponent });
    }
    let (nu, eps) = (scaling.nu, scaling.eps);
    // (r² + r⁻²)/2 and (r² - r⁻²)/2 with r = exp(‖z‖t/2)
    let (c, s) = (exponent.cosh(), exponent.sinh());
    let (par0, _) = decompose_w(w0, &direction.z_hat)?;
    let nu_a = nu * c * a0 + eps * s * par0;
    let along = nu * s * a0 + eps * c * par0 - eps * par0;
    let eps_w = w0.iter().zip(&direction.z_hat).map(|(w, u)| along * u + eps * w).collect();
    Ok((nu_a, eps_w))
}

/// Per-neuron gap between the real and the linearized flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerms {
    /// Length `m`.
    pub f: Vec<f64>,
    /// Row-major `m × d`.
    pub g: Vec<f64>,
}

/// `f_k = (1/n) Σ_i [e_i σ(ε w_kᵀx_i)/ε + y_i w_kᵀx_i]` and
/// `g_k = (1/n) Σ_i [e_i a_k σ'(ε w_kᵀx_i) x_i + y_i a_k x_i]`.
///
/// With these definitions the real flow reads
/// `(ν/ε) da_k/dt = ⟨w_k, z⟩ - f_k` and `dw_k/dt = (ν/ε)(a_k z - g_k)`.
pub fn residual_terms(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<ResidualTerms> {
    let e = residuals(params, scaling, act, dataset)?.e;
    let (m, n, d) = (params.m(), dataset.n(), dataset.d());
    let inv_n = 1.0 / n as f64;
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; m * d];
    for k in 0..m {
        let (ak, wk) = (params.a()[k], params.w_row(k));
        let gk = &mut g[k * d..(k + 1) * d];
        for i in 0..n {
            let (x, y) = (dataset.input(i), dataset.label(i));
            let s = dot(wk, x);
            let (phi, dphi) = act.scaled_pair(s, scaling.eps);
            f[k] += e[i] * phi + y * s;
            let c = ak * (e[i] * dphi + y);
            for (v, xj) in gk.iter_mut().zip(x) {
                *v += c * xj;
            }
        }
        f[k] *= inv_n;
        gk.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok(ResidualTerms { f, g })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuronEnergies {
    /// `((ν/ε)² a_k² + ‖w_k‖²)^{1/2}`
    pub q: Vec<f64>,
    /// `max(|a_k|, ‖w_k‖_∞)`
    pub p: Vec<f64>,
    pub q_max: f64,
    pub p_max: f64,
}

pub fn neuron_energies(params: &NormalizedParams, scaling: &ScalingConfig) -> NeuronEnergies {
    let ratio = scaling.nu / scaling.eps;
    let (q, p): (Vec<f64>, Vec<f64>) = (0..params.m())
        .map(|k| {
            let (a, w) = (params.a()[k], params.w_row(k));
            let q = ((ratio * a).powi(2) + dot(w, w)).sqrt();
            let p = w.iter().fold(a.abs(), |acc, v| acc.max(v.abs()));
            (q, p)
        })
        .unzip();
    let q_max = q.iter().copied().fold(0.0, f64::max);
    let p_max = p.iter().copied().fold(0.0, f64::max);
    NeuronEnergies { q, p, q_max, p_max }
}

/// First recorded time where `m ε² φ(t)³ > m^{-τ}`, `τ = (γ - γ' - 1)/4`,
/// with `φ` the running maximum of `q_max`; `+∞` if it never trips.
///
/// Requires the w-lag region `γ > 1`, `0 ≤ γ' < γ - 1`.
pub fn effective_horizon(times: &[f64], q_max: &[f64], scaling: &ScalingConfig) -> Result<f64> {
    let (gamma, gamma_prime) = (scaling.gamma, scaling.gamma_prime);
    if classify_regime(gamma, gamma_prime) != RegimeLabel::CondensedWLag {
        return Err(Error::WrongRegime(format!(
            "effective horizon needs the w-lag region, got ({gamma}, {gamma_prime})"
        )));
    }
    if times.len() != q_max.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), found: q_max.len() });
    }
    let m = scaling.m as f64;
    let tau = (gamma - gamma_prime - 1.0) / 4.0;
    let threshold = m.powf(-tau);
    let coeff = m * scaling.eps * scaling.eps;
    let mut phi = 0.0f64;
    for (t, q) in times.iter().zip(q_max) {
        phi = phi.max(*q);
        if coeff * phi.powi(3) > threshold {
            return Ok(*t);
        }
    }
    Ok(f64::INFINITY)
}

/// Upper bound `m ε² q_max² ‖w_k‖ + ε ‖w_k‖²` on `|f_k|` for unit-ball
/// inputs and labels in `[-1, 1]`.
pub fn f_bound(m: usize, eps: f64, q_max: f64, w_k: &[f64]) -> f64 {
    let wn = norm(w_k);
    m as f64 * eps * eps * q_max * q_max * wn + eps * wn * wn
}
