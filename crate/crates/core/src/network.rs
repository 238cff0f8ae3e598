//! The two-layer network in normalized variables.
//!
//! With original weights `a_k = ν ā_k` and `w_k = ε w̄_k`, the model is
//! `f(x) = Σ_k νε ā_k σ(ε w̄_kᵀx)/ε` and the gradient flow on the empirical
//! risk `R_S = (1/2n) Σ_i e_i²`, `e_i = f(x_i) - y_i`, becomes
//!
//! ```text
//! dā_k/dt = -(ε/ν) (1/n) Σ_i e_i σ(ε w̄_kᵀx_i)/ε
//! dw̄_k/dt = -(ν/ε) (1/n) Σ_i e_i ā_k σ'(ε w̄_kᵀx_i) x_i
//! ```
//!
//! Only the normalized (barred) variables are stored; the bars are dropped
//! in identifiers.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scaling::ScalingConfig;

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

/// Output weights `a` (length `m`) followed by the row-major `m × d` input
/// weights, in one contiguous buffer so the integrator can treat it as a
/// flat state vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedParams {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl NormalizedParams {
    pub fn new(a: Vec<f64>, w: Vec<f64>, d: usize) -> Result<Self> {
        let m = a.len();
        if m == 0 || d == 0 {
            return Err(Error::InvalidInput("params need m >= 1 and d >= 1".into()));
        }
        if w.len() != m * d {
            return Err(Error::DimensionMismatch { expected: m * d, found: w.len() });
        }
        let mut data = a;
        data.extend(w);
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("params contain non-finite values".into()));
        }
        Ok(NormalizedParams { m, d, data })
    }

    pub fn from_state(m: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * (d + 1) {
            return Err(Error::DimensionMismatch { expected: m * (d + 1), found: data.len() });
        }
        Ok(NormalizedParams { m, d, data })
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        NormalizedParams { m, d, data: vec![0.0; m * (d + 1)] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn a(&self) -> &[f64] {
        &self.data[..self.m]
    }

    pub fn a_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.m]
    }

    /// Row-major `m × d`.
    pub fn w(&self) -> &[f64] {
        &self.data[self.m..]
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        let m = self.m;
        &mut self.data[m..]
    }

    pub fn w_row(&self, k: usize) -> &[f64] {
        let start = self.m + k * self.d;
        &self.data[start..start + self.d]
    }

    pub fn state(&self) -> &[f64] {
        &self.data
    }

    pub fn state_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_state(self) -> Vec<f64> {
        self.data
    }

    /// `max_k max(|a_k|, ‖w_k‖_∞)`
    pub fn max_abs(&self) -> f64 {
        crate::linalg::max_abs(&self.data)
    }
}

/// Standard-normal `a` (drawn first) and `W` (row by row) from a PCG-64
/// stream seeded with `seed`.
pub fn init_params(m: usize, d: usize, seed: u64) -> Result<NormalizedParams> {
    if m == 0 || d == 0 {
        return Err(Error::InvalidInput("init_params needs m >= 1 and d >= 1".into()));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * (d + 1)).map(|_| rng.sample(StandardNormal)).collect();
    Ok(NormalizedParams { m, d, data })
}

fn check_dims(params: &NormalizedParams, dataset: &Dataset) -> Result<()> {
    if params.d() != dataset.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), found: dataset.d() });
    }
    Ok(())
}

/// `Σ_k νε a_k σ(ε w_kᵀx)/ε`
pub fn forward(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    act: Activation,
    x: &[f64],
) -> Result<f64> {
    if x.len() != params.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), found: x.len() });
    }
    let eps = scaling.eps;
    let sum: f64 = (0..params.m())
        .map(|k| params.a()[k] * act.scaled_sigma(dot(params.w_row(k), x), eps))
        .sum();
    Ok(scaling.kappa * sum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualVector {
    pub e: Vec<f64>,
}

impl ResidualVector {
    pub fn loss(&self) -> f64 {
        0.5 * dot(&self.e, &self.e) / self.e.len() as f64
    }
}

pub fn residuals(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    act: Activation,
    dataset: &Dataset,
) -> Result<ResidualVector> {
    check_dims(params, dataset)?;
    let e = (0..dataset.n())
        .map(|i| Ok(forward(params, scaling, act, dataset.input(i))? - dataset.label(i)))
        .collect::<Result<_>>()?;
    Ok(ResidualVector { e })
}

/// Empirical risk `(1/2n) ‖e‖²`.
pub fn loss(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    act: Activation,
    dataset: &Dataset,
) -> Result<f64> {
    Ok(residuals(params, scaling, act, dataset)?.loss())
}

/// Time derivatives `(da/dt, dW/dt)` of the normalized flow.
pub fn flow_rhs(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    act: Activation,
    dataset: &Dataset,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dims(params, dataset)?;
    let mut flow = Flow::new(scaling, act, dataset, params.m());
    let mut out = vec![0.0; params.state().len()];
    flow.eval(params.state(), &mut out);
    let w = out.split_off(params.m());
    Ok((out, w))
}

/// Reusable evaluator of the flow's right-hand side on flat states.
///
/// Keeps the per-(neuron, sample) activations from the latest evaluation so
/// callers can read the residual without a second forward pass.
#[derive(Debug, Clone)]
pub struct Flow<'a> {
    act: Activation,
    dataset: &'a Dataset,
    m: usize,
    eps: f64,
    kappa: f64,
    a_rate: f64,
    w_rate: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    residual: Vec<f64>,
}

impl<'a> Flow<'a> {
    pub fn new(scaling: &ScalingConfig, act: Activation, dataset: &'a Dataset, m: usize) -> Self {
        let n = dataset.n();
        Flow {
            act,
            dataset,
            m,
            eps: scaling.eps,
            kappa: scaling.kappa,
            a_rate: scaling.eps / scaling.nu,
            w_rate: scaling.nu / scaling.eps,
            phi: vec![0.0; m * n],
            dphi: vec![0.0; m * n],
            residual: vec![0.0; n],
        }
    }

    /// Writes the derivative of `state` into `out` and returns `R_S(state)`.
    pub fn eval(&mut self, state: &[f64], out: &mut [f64]) -> f64 {
        let (m, n, d) = (self.m, self.dataset.n(), self.dataset.d());
        debug_assert_eq!(state.len(), m * (d + 1));
        let (a, w) = state.split_at(m);
        let xs = self.dataset.inputs_flat();

        for k in 0..m {
            let wk = &w[k * d..(k + 1) * d];
            for i in 0..n {
                let s = dot(wk, &xs[i * d..(i + 1) * d]);
                let (p, dp) = self.act.scaled_pair(s, self.eps);
                self.phi[k * n + i] = p;
                self.dphi[k * n + i] = dp;
            }
        }

        self.residual.iter_mut().for_each(|r| *r = 0.0);
        for k in 0..m {
            let ak = a[k];
            for i in 0..n {
                self.residual[i] += ak * self.phi[k * n + i];
            }
        }
        for i in 0..n {
            self.residual[i] = self.kappa * self.residual[i] - self.dataset.label(i);
        }

        let inv_n = 1.0 / n as f64;
        let (da, dw) = out.split_at_mut(m);
        for k in 0..m {
            let phi_k = &self.phi[k * n..(k + 1) * n];
            da[k] = -self.a_rate * inv_n * dot(&self.residual, phi_k);

            let dwk = &mut dw[k * d..(k + 1) * d];
            dwk.iter_mut().for_each(|v| *v = 0.0);
            let dphi_k = &self.dphi[k * n..(k + 1) * n];
            for i in 0..n {
                let c = self.residual[i] * dphi_k[i];
                for (v, x) in dwk.iter_mut().zip(&xs[i * d..(i + 1) * d]) {
                    *v += c * x;
                }
            }
            let scale = -self.w_rate * inv_n * a[k];
            dwk.iter_mut().for_each(|v| *v *= scale);
        }
        0.5 * inv_n * dot(&self.residual, &self.residual)
    }

    /// Residual `e` from the latest [`Flow::eval`].
    pub fn residual(&self) -> &[f64] {
        &self.residual
    }
}

/// Header of a parameter snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub m: usize,
    pub d: usize,
    pub seed: u64,
    pub nu: f64,
    pub eps: f64,
    pub activation: Activation,
    pub t: f64,
    pub format_version: u32,
}

const SNAPSHOT_FIELDS: [&str; 8] =
    ["m", "d", "seed", "nu", "eps", "activation", "t", "format_version"];

/// CSV snapshot: the 8-field header line and its values, then `a_1..a_m`
/// and `W` row-major, one value per line.
pub fn write_snapshot<W: Write>(
    mut out: W,
    params: &NormalizedParams,
    header: &SnapshotHeader,
) -> Result<()> {
    let io = |e| Error::io("<snapshot writer>", e);
    writeln!(out, "{}", SNAPSHOT_FIELDS.join(",")).map_err(io)?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        header.m,
        header.d,
        header.seed,
        header.nu,
        header.eps,
        header.activation,
        header.t,
        header.format_version
    )
    .map_err(io)?;
    for v in params.state() {
        writeln!(out, "{v}").map_err(io)?;
    }
    Ok(())
}

pub fn save_snapshot(
    path: impl AsRef<Path>,
    params: &NormalizedParams,
    header: &SnapshotHeader,
) -> Result<()> {
    let mut buf = Vec::new();
    write_snapshot(&mut buf, params, header)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

pub fn read_snapshot(text: &str) -> Result<(SnapshotHeader, NormalizedParams)> {
    let parse_err =
        |row: usize, column: usize, message: String| Error::Parse { row, column, message };
    let mut lines = text.lines();
    let names = lines.next().ok_or_else(|| parse_err(0, 0, "empty snapshot".into()))?;
    if names.split(',').collect::<Vec<_>>() != SNAPSHOT_FIELDS {
        return Err(parse_err(0, 0, format!("unexpected snapshot header `{names}`")));
    }
    let values: Vec<&str> = lines
        .next()
        .ok_or_else(|| parse_err(1, 0, "missing header values".into()))?
        .split(',')
        .collect();
    if values.len() != SNAPSHOT_FIELDS.len() {
        return Err(parse_err(1, values.len(), "expected 8 header fields".into()));
    }
    fn field<T: std::str::FromStr>(values: &[&str], col: usize) -> Result<T> {
        values[col].parse().map_err(|_| Error::Parse {
            row: 1,
            column: col,
            message: format!("bad value `{}`", values[col]),
        })
    }
    let header = SnapshotHeader {
        m: field(&values, 0)?,
        d: field(&values, 1)?,
        seed: field(&values, 2)?,
        nu: field(&values, 3)?,
        eps: field(&values, 4)?,
        activation: values[5].parse()?,
        t: field(&values, 6)?,
        format_version: field(&values, 7)?,
    };
    if header.format_version != SNAPSHOT_FORMAT_VERSION {
        return Err(Error::SchemaVersion {
            path: "<snapshot>".into(),
            expected: SNAPSHOT_FORMAT_VERSION,
            found: header.format_version.to_string(),
        });
    }
    let data = lines
        .enumerate()
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|_| parse_err(i + 2, 0, format!("bad value `{l}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let params = NormalizedParams::from_state(header.m, header.d, data)?;
    Ok((header, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;
    use crate::scaling::from_exponents;
    use approx::assert_relative_eq;

    fn random_instance(m: usize, n: usize, d: usize, seed: u64) -> (NormalizedParams, Dataset) {
        (init_params(m, d, seed).unwrap(), synth_dataset(n, d, seed + 1000, 1.0).unwrap())
    }

    #[test]
    fn init_norm_bounds() {
        let (m, d) = (4096, 8);
        let p = init_params(m, d, 1).unwrap();
        let a2 = dot(p.a(), p.a());
        let w2 = dot(p.w(), p.w());
        let mf = m as f64;
        assert!(mf / 2.0 <= a2 && a2 <= 1.5 * mf);
        assert!(mf * d as f64 / 2.0 <= w2 && w2 <= 1.5 * mf * d as f64);
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_params(16, 3, 9).unwrap(), init_params(16, 3, 9).unwrap());
        assert_ne!(init_params(16, 3, 9).unwrap(), init_params(16, 3, 10).unwrap());
    }

    #[test]
    fn zero_output_weights_give_zero() {
        let mut p = init_params(8, 3, 2).unwrap();
        p.a_mut().iter_mut().for_each(|v| *v = 0.0);
        let s = from_exponents(8, 0.5, 0.5).unwrap();
        assert_eq!(forward(&p, &s, Activation::Tanh, &[0.3, -1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn linear_activation_is_bilinear() {
        let p = init_params(8, 3, 5).unwrap();
        let s = from_exponents(8, 0.7, 0.2).unwrap();
        let x = [0.4, -0.9, 1.3];
        let wx: Vec<f64> = (0..8).map(|k| dot(p.w_row(k), &x)).collect();
        let expected = s.nu * s.eps * dot(p.a(), &wx);
        let got = forward(&p, &s, Activation::Linear, &x).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-14);
    }

    #[test]
    fn forward_matches_neuron_loop() {
        let p = init_params(8, 3, 6).unwrap();
        let s = from_exponents(8, 0.3, -0.2).unwrap();
        let x = [0.2, 0.5, -0.7];
        let mut acc = 0.0;
        for k in 0..8 {
            let mut pre = 0.0;
            for j in 0..3 {
                pre += p.w()[k * 3 + j] * x[j];
            }
            acc += s.nu * s.eps * p.a()[k] * (s.eps * pre).tanh() / s.eps;
        }
        let got = forward(&p, &s, Activation::Tanh, &x).unwrap();
        assert!((got - acc).abs() <= 1e-13 * acc.abs().max(1.0));
    }

    #[test]
    fn loss_of_zero_network() {
        let (mut p, ds) = random_instance(8, 5, 3, 3);
        p.a_mut().iter_mut().for_each(|v| *v = 0.0);
        let s = from_exponents(8, 0.5, 0.5).unwrap();
        let expected = ds.labels().iter().map(|y| y * y).sum::<f64>() / (2.0 * ds.n() as f64);
        assert_relative_eq!(
            loss(&p, &s, Activation::Tanh, &ds).unwrap(),
            expected,
            max_relative = 1e-15
        );
    }

    #[test]
    fn loss_matches_forward_outputs() {
        let (p, ds) = random_instance(12, 6, 4, 4);
        let s = from_exponents(12, 0.2, 0.1).unwrap();
        let mut acc = 0.0;
        for i in 0..ds.n() {
            let e = forward(&p, &s, Activation::ScaledSiLU, ds.input(i)).unwrap() - ds.label(i);
            acc += e * e;
        }
        let got = loss(&p, &s, Activation::ScaledSiLU, &ds).unwrap();
        assert!((got - acc / (2.0 * ds.n() as f64)).abs() <= 1e-14);
    }

    #[test]
    fn flow_eval_loss_matches_loss() {
        let (p, ds) = random_instance(12, 6, 4, 5);
        let s = from_exponents(12, 0.4, 0.3).unwrap();
        let mut flow = Flow::new(&s, Activation::Tanh, &ds, 12);
        let mut out = vec![0.0; p.state().len()];
        let l = flow.eval(p.state(), &mut out);
        assert_relative_eq!(l, loss(&p, &s, Activation::Tanh, &ds).unwrap(), max_relative = 1e-13);
    }

    #[test]
    fn interpolating_params_are_stationary() {
        // one neuron, linear activation, label set to the network output
        let p = NormalizedParams::new(vec![1.5], vec![0.5, -0.25], 2).unwrap();
        let s = from_exponents(2, 0.5, 0.5).unwrap();
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ys: Vec<f64> =
            x.iter().map(|xi| forward(&p, &s, Activation::Linear, xi).unwrap()).collect();
        let ds = Dataset::new(x, ys).unwrap();
        let (da, dw) = flow_rhs(&p, &s, Activation::Linear, &ds).unwrap();
        assert!(da.iter().chain(&dw).all(|v| *v == 0.0));
    }

    #[test]
    fn linear_model_gradient_by_hand() {
        let (p, ds) = random_instance(5, 4, 3, 8);
        let s = from_exponents(5, 0.6, 0.1).unwrap();
        let (da, dw) = flow_rhs(&p, &s, Activation::Linear, &ds).unwrap();
        let e = residuals(&p, &s, Activation::Linear, &ds).unwrap().e;
        let n = ds.n() as f64;
        for k in 0..5 {
            let wk = p.w_row(k);
            let expect_a: f64 =
                -(s.eps / s.nu) / n * (0..ds.n()).map(|i| e[i] * dot(wk, ds.input(i))).sum::<f64>();
            assert_relative_eq!(da[k], expect_a, max_relative = 1e-12);
            for j in 0..3 {
                let expect_w: f64 = -(s.nu / s.eps) / n
                    * (0..ds.n()).map(|i| e[i] * p.a()[k] * ds.input(i)[j]).sum::<f64>();
                assert_relative_eq!(dw[k * 3 + j], expect_w, max_relative = 1e-12, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let p = init_params(6, 2, 3).unwrap();
        let header = SnapshotHeader {
            m: 6,
            d: 2,
            seed: 3,
            nu: 0.125,
            eps: 0.3,
            activation: Activation::XTanh,
            t: 1.5,
            format_version: SNAPSHOT_FORMAT_VERSION,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &p, &header).unwrap();
        let (h, q) = read_snapshot(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(h, header);
        assert_eq!(q, p);

        let bumped = String::from_utf8(buf).unwrap().replacen(",1.5,1\n", ",1.5,2\n", 1);
        assert!(matches!(read_snapshot(&bumped), Err(Error::SchemaVersion { .. })));
    }
}
