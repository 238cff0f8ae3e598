//! Smooth activation functions with closed-form first and second derivatives.
//!
//! Every activation here is evaluated analytically; finite differences only
//! appear in [`multiplicity`] (derivatives at the origin of arbitrary order)
//! and in tests.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this magnitude of `eps * s` the scaled activation switches to its
/// second-order Taylor expansion around zero.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Probe point used to read off the tail limits of `σ'`.
pub const TAIL_PROBE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Tanh,
    /// `2x / (1 + e^{-x})`
    ScaledSiLU,
    /// `x tanh(x)`
    XTanh,
    /// `2 (log(1 + e^x) - log 2)`
    ModifiedSoftplus,
    Linear,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Tanh,
        Activation::ScaledSiLU,
        Activation::XTanh,
        Activation::ModifiedSoftplus,
        Activation::Linear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::ScaledSiLU => "silu2",
            Activation::XTanh => "xtanh",
            Activation::ModifiedSoftplus => "softplus2",
            Activation::Linear => "linear",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Activation::Tanh => "hyperbolic tangent",
            Activation::ScaledSiLU => "scaled SiLU, 2x/(1+exp(-x))",
            Activation::XTanh => "x*tanh(x)",
            Activation::ModifiedSoftplus => "modified softplus, 2(log(1+exp(x)) - log 2)",
            Activation::Linear => "identity",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::ScaledSiLU => 2.0 * x * sigmoid(x),
            Activation::XTanh => x * x.tanh(),
            Activation::ModifiedSoftplus => 2.0 * (softplus(x) - LN_2),
            Activation::Linear => x,
        }
    }

    pub fn eval_d1(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::ScaledSiLU => {
                let s = sigmoid(x);
                2.0 * (s + x * s * (1.0 - s))
            }
            Activation::XTanh => {
                let t = x.tanh();
                t + x * (1.0 - t * t)
            }
            Activation::ModifiedSoftplus => 2.0 * sigmoid(x),
            Activation::Linear => 1.0,
        }
    }

    pub fn eval_d2(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::ScaledSiLU => {
                let s = sigmoid(x);
                2.0 * s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
            }
            Activation::XTanh => {
                let t = x.tanh();
                2.0 * (1.0 - t * t) * (1.0 - x * t)
            }
            Activation::ModifiedSoftplus => {
                let s = sigmoid(x);
                2.0 * s * (1.0 - s)
            }
            Activation::Linear => 0.0,
        }
    }

    /// `(σ(x), σ'(x))` sharing the transcendental evaluation.
    #[inline]
    pub fn eval_with_d1(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Activation::ScaledSiLU => {
                let s = sigmoid(x);
                (2.0 * x * s, 2.0 * (s + x * s * (1.0 - s)))
            }
            Activation::XTanh => {
                let t = x.tanh();
                (x * t, t + x * (1.0 - t * t))
            }
            Activation::ModifiedSoftplus => (2.0 * (softplus(x) - LN_2), 2.0 * sigmoid(x)),
            Activation::Linear => (x, 1.0),
        }
    }

    /// `σ(eps * s) / eps`, switching to `s σ'(0) + (eps s² / 2) σ''(0)` when
    /// `|eps * s|` is below [`SERIES_THRESHOLD`].
    #[inline]
    pub fn scaled_sigma(self, s: f64, eps: f64) -> f64 {
        if self == Activation::Linear {
            return s;
        }
        let u = eps * s;
        if u.abs() < SERIES_THRESHOLD {
            s * self.eval_d1(0.0) + 0.5 * eps * s * s * self.eval_d2(0.0)
        } else {
            self.eval(u) / eps
        }
    }

    /// `(σ(eps s)/eps, σ'(eps s))`, the two per-neuron factors of the flow.
    #[inline]
    pub fn scaled_pair(self, s: f64, eps: f64) -> (f64, f64) {
        if self == Activation::Linear {
            return (s, 1.0);
        }
        let u = eps * s;
        if u.abs() < SERIES_THRESHOLD {
            let d1 = self.eval_d1(0.0);
            let d2 = self.eval_d2(0.0);
            (s * d1 + 0.5 * eps * s * s * d2, d1 + u * d2)
        } else {
            let (v, d) = self.eval_with_d1(u);
            (v / eps, d)
        }
    }

    pub fn is_polynomial(self) -> bool {
        self == Activation::Linear
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownActivation(s.to_string()))
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.name().to_string()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of order `order` at the origin, by central differences with
/// Richardson extrapolation over successively halved steps.
pub fn derivative_at_zero(act: Activation, order: usize) -> f64 {
    if order == 0 {
        return act.eval(0.0);
    }
    let f = |x: f64| act.eval(x);
    let stencil = |h: f64| -> f64 {
        match order {
            1 => (f(h) - f(-h)) / (2.0 * h),
            2 => (f(h) - 2.0 * f(0.0) + f(-h)) / (h * h),
            3 => (f(2.0 * h) - 2.0 * f(h) + 2.0 * f(-h) - f(-2.0 * h)) / (2.0 * h * h * h),
            4 => {
                (f(2.0 * h) - 4.0 * f(h) + 6.0 * f(0.0) - 4.0 * f(-h) + f(-2.0 * h))
                    / (h * h * h * h)
            }
            _ => panic!("derivative order {order} not supported"),
        }
    };
    // all stencils above are even in h, so the error expands in h^2, h^4, ...
    const LEVELS: usize = 4;
    let h0 = 0.1;
    let mut table = [[0.0f64; LEVELS]; LEVELS];
    for i in 0..LEVELS {
        table[i][0] = stencil(h0 / f64::powi(2.0, i as i32));
        let mut factor = 4.0;
        for j in 1..=i {
            table[i][j] =
                table[i][j - 1] + (table[i][j - 1] - table[i - 1][j - 1]) / (factor - 1.0);
            factor *= 4.0;
        }
    }
    table[LEVELS - 1][LEVELS - 1]
}

/// Smallest `p` with `σ^{(s)}(0) ≈ 0` for `s < p` and `σ^{(p)}(0) ≠ 0`.
pub fn multiplicity(act: Activation, max_p: usize, tol: f64) -> Result<usize> {
    if max_p > 4 {
        return Err(Error::InvalidInput(format!("max_p = {max_p} exceeds 4")));
    }
    if derivative_at_zero(act, 0).abs() > tol {
        // σ(0) ≠ 0: multiplicity is undefined, no p ≥ 1 qualifies
        return Err(Error::NoMultiplicity { max_p });
    }
    for p in 1..=max_p {
        if derivative_at_zero(act, p).abs() > tol {
            return Ok(p);
        }
    }
    Err(Error::NoMultiplicity { max_p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivationAssumption {
    /// C² with bounded σ', σ'' and σ(0) = 0, σ'(0) = 1.
    Multiplicity1,
    /// Additionally non-polynomial with distinct tail limits of σ'.
    NTKStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationReport {
    pub activation: Activation,
    pub assumption: ActivationAssumption,
    pub passed: bool,
    pub value_at_zero: f64,
    pub slope_at_zero: f64,
    /// Empirical sup of |σ'| and |σ''| over the sampled window.
    pub max_abs_d1: f64,
    pub max_abs_d2: f64,
    pub tail_left: Option<f64>,
    pub tail_right: Option<f64>,
    pub violations: Vec<String>,
}

pub fn check_assumption(act: Activation, which: ActivationAssumption) -> ActivationReport {
    const SAMPLES: usize = 100_001;
    let mut violations = Vec::new();
    let (mut max_d1, mut max_d2) = (0.0f64, 0.0f64);
    let mut finite = true;
    for i in 0..SAMPLES {
        let x = -50.0 + 100.0 * i as f64 / (SAMPLES - 1) as f64;
        let (d1, d2) = (act.eval_d1(x), act.eval_d2(x));
        finite &= d1.is_finite() && d2.is_finite();
        max_d1 = max_d1.max(d1.abs());
        max_d2 = max_d2.max(d2.abs());
    }
    if !finite {
        violations.push("derivatives not finite on [-50, 50]".to_string());
    }
    let value_at_zero = act.eval(0.0);
    let slope_at_zero = act.eval_d1(0.0);
    if value_at_zero.abs() > 1e-12 {
        violations.push(format!("sigma(0) = {value_at_zero:e}, expected 0"));
    }
    if (slope_at_zero - 1.0).abs() > 1e-12 {
        violations.push(format!("sigma'(0) = {slope_at_zero}, expected 1"));
    }
    let (mut tail_left, mut tail_right) = (None, None);
    if which == ActivationAssumption::NTKStyle {
        if act.is_polynomial() {
            violations.push("activation is a polynomial".to_string());
        }
        let a = act.eval_d1(-TAIL_PROBE);
        let b = act.eval_d1(TAIL_PROBE);
        tail_left = Some(a);
        tail_right = Some(b);
        // σ' must also have settled at the probe points
        let settled = (act.eval_d1(-2.0 * TAIL_PROBE) - a).abs() < 1e-10
            && (act.eval_d1(2.0 * TAIL_PROBE) - b).abs() < 1e-10;
        if !settled {
            violations.push("sigma' has no tail limits at +-40".to_string());
        } else if (a - b).abs() <= 1e-10 {
            violations.push(format!("tail limits coincide: a = {a}, b = {b}"));
        }
    }
    ActivationReport {
        activation: act,
        assumption: which,
        passed: violations.is_empty(),
        value_at_zero,
        slope_at_zero,
        max_abs_d1: max_d1,
        max_abs_d2: max_d2,
        tail_left,
        tail_right,
        violations,
    }
}
