//! Gram matrices of the finite network, their infinite-width expectations by
//! Monte Carlo, and spectral summaries.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::linalg::{dot, jacobi_eigen, norm, SymmetricMatrix};
use crate::network::NormalizedParams;
use crate::scaling::{RegimeSide, ScalingConfig};

pub const DEFAULT_MC_SAMPLES: usize = 100_000;
/// Independent substreams a Monte Carlo estimate is split into.
pub const MC_SHARDS: usize = 16;
/// Relative slack allowed when comparing the loss against its decay bound.
pub const DECAY_SLACK: f64 = 1e-6;

fn check_dims(params: &NormalizedParams, dataset: &Dataset) -> Result<()> {
    if params.d() != dataset.d() {
        return Err(Error::DimensionMismatch { expected: params.d(), found: dataset.d() });
    }
    Ok(())
}

/// Row-major `m × n` tables of `σ(ε w_kᵀx_i)/ε` and `σ'(ε w_kᵀx_i)`.
fn neuron_features(
    params: &NormalizedParams,
    eps: f64,
    dataset: &Dataset,
    act: Activation,
) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (params.m(), dataset.n());
    let mut phi = Vec::with_capacity(m * n);
    let mut dphi = Vec::with_capacity(m * n);
    for k in 0..m {
        for i in 0..n {
            let (p, dp) = act.scaled_pair(dot(params.w_row(k), dataset.input(i)), eps);
            phi.push(p);
            dphi.push(dp);
        }
    }
    (phi, dphi)
}

fn input_gram(dataset: &Dataset) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(dataset.n(), |i, j| dot(dataset.input(i), dataset.input(j)))
}

/// `Σ_k c_k u_ki u_kj` over rows of a row-major `m × n` table.
fn weighted_outer_sum(table: &[f64], weights: Option<&[f64]>, n: usize) -> SymmetricMatrix {
    SymmetricMatrix::from_fn(n, |i, j| {
        table
            .chunks_exact(n)
            .enumerate()
            .map(|(k, row)| weights.map_or(1.0, |w| w[k]) * row[i] * row[j])
            .sum()
    })
}

/// `(νε³/m) Σ_k φ_k(x_i) φ_k(x_j)` with `φ_k(x) = σ(ε w_kᵀx)/ε`.
pub fn gram_a(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<SymmetricMatrix> {
    check_dims(params, dataset)?;
    let (phi, _) = neuron_features(params, scaling.eps, dataset, act);
    let factor = scaling.nu * scaling.eps.powi(3) / params.m() as f64;
    Ok(weighted_outer_sum(&phi, None, dataset.n()).scaled(factor))
}

/// `(ν³ε/m) Σ_k a_k² σ'(ε w_kᵀx_i) σ'(ε w_kᵀx_j) ⟨x_i, x_j⟩`
pub fn gram_w(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<SymmetricMatrix> {
    check_dims(params, dataset)?;
    let (_, dphi) = neuron_features(params, scaling.eps, dataset, act);
    let a2: Vec<f64> = params.a().iter().map(|a| a * a).collect();
    let factor = scaling.nu.powi(3) * scaling.eps / params.m() as f64;
    let n = dataset.n();
    let xx = input_gram(dataset);
    let s = weighted_outer_sum(&dphi, Some(&a2), n);
    Ok(SymmetricMatrix::from_fn(n, |i, j| factor * s.get(i, j) * xx.get(i, j)))
}

/// Tangent kernel `Θ` of the normalized flow, for which the residual obeys
/// `de/dt = -(1/n) Θ e`. Equals `(m/νε)(G_a + G_w)`.
pub fn flow_kernel(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<SymmetricMatrix> {
    check_dims(params, dataset)?;
    let n = dataset.n();
    let (phi, dphi) = neuron_features(params, scaling.eps, dataset, act);
    let a2: Vec<f64> = params.a().iter().map(|a| a * a).collect();
    let ka = weighted_outer_sum(&phi, None, n);
    let kw = weighted_outer_sum(&dphi, Some(&a2), n);
    let xx = input_gram(dataset);
    let (e2, v2) = (scaling.eps * scaling.eps, scaling.nu * scaling.nu);
    Ok(SymmetricMatrix::from_fn(n, |i, j| e2 * ka.get(i, j) + v2 * kw.get(i, j) * xx.get(i, j)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    A,
    W,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" | "A" => Ok(KernelKind::A),
            "w" | "W" => Ok(KernelKind::W),
            other => Err(Error::InvalidInput(format!("unknown kernel kind `{other}`"))),
        }
    }
}

/// Monte Carlo estimate together with its per-shard estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEstimate {
    pub mean: SymmetricMatrix,
    pub shards: Vec<SymmetricMatrix>,
    pub samples: usize,
}

impl KernelEstimate {
    /// Batch-means standard error of `λ_min`, from the spread of per-shard
    /// least eigenvalues.
    pub fn lambda_min_std_error(&self) -> Result<f64> {
        let lams = self
            .shards
            .iter()
            .map(|s| Ok(least_eigenvalue(s, 1e-12)?.lambda_min))
            .collect::<Result<Vec<f64>>>()?;
        Ok(batch_std_error(&lams))
    }

    /// Batch-means standard error of each entry.
    pub fn entry_std_error(&self) -> SymmetricMatrix {
        SymmetricMatrix::from_fn(self.mean.order(), |i, j| {
            let vals: Vec<f64> = self.shards.iter().map(|s| s.get(i, j)).collect();
            batch_std_error(&vals)
        })
    }
}

fn batch_std_error(values: &[f64]) -> f64 {
    let k = values.len();
    if k < 2 {
        return f64::INFINITY;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (var / k as f64).sqrt()
}

fn shard_rng(seed: u64, shard: usize) -> Pcg64 {
    Pcg64::seed_from_u64(seed ^ (shard as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Monte Carlo estimate of the infinite-width kernel over standard-normal
/// input weights:
/// `K_a[i,j] = E[σ(εwᵀx_i)σ(εwᵀx_j)]/ε²`,
/// `K_w[i,j] = E[σ'(εwᵀx_i)σ'(εwᵀx_j)] ⟨x_i, x_j⟩` (the `E[a²] = 1` factor
/// taken exactly).
pub fn kernel_mc(
    dataset: &Dataset,
    eps: f64,
    kind: KernelKind,
    samples: usize,
    seed: u64,
    act: Activation,
) -> Result<SymmetricMatrix> {
    Ok(kernel_mc_sharded(dataset, eps, kind, samples, seed, act)?.mean)
}

pub fn kernel_mc_sharded(
    dataset: &Dataset,
    eps: f64,
    kind: KernelKind,
    samples: usize,
    seed: u64,
    act: Activation,
) -> Result<KernelEstimate> {
    if samples == 0 {
        return Err(Error::InvalidInput("kernel_mc needs at least one sample".into()));
    }
    let (n, d) = (dataset.n(), dataset.d());
    let shards = MC_SHARDS.min(samples);
    let sums: Vec<(Vec<f64>, usize)> = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let count = samples / shards + usize::from(shard < samples % shards);
            let mut rng = shard_rng(seed, shard);
            let mut w = vec![0.0; d];
            let mut feat = vec![0.0; n];
            let mut acc = vec![0.0; n * n];
            for _ in 0..count {
                w.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                for (i, f) in feat.iter_mut().enumerate() {
                    let s = dot(&w, dataset.input(i));
                    *f = match kind {
                        KernelKind::A => act.scaled_sigma(s, eps),
                        KernelKind::W => act.eval_d1(eps * s),
                    };
                }
                for i in 0..n {
                    for j in i..n {
                        acc[i * n + j] += feat[i] * feat[j];
                    }
                }
            }
            (acc, count)
        })
        .collect();

    let xx = input_gram(dataset);
    let to_matrix = |acc: &[f64], count: usize| {
        SymmetricMatrix::from_fn(n, |i, j| {
            let v = acc[i * n + j] / count as f64;
            match kind {
                KernelKind::A => v,
                KernelKind::W => v * xx.get(i, j),
            }
        })
    };
    let mut total = vec![0.0; n * n];
    for (acc, _) in &sums {
        for (t, v) in total.iter_mut().zip(acc) {
            *t += v;
        }
    }
    Ok(KernelEstimate {
        mean: to_matrix(&total, samples),
        shards: sums.iter().map(|(acc, c)| to_matrix(acc, *c)).collect(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// `‖M v - λ_min v‖` for the returned eigenvector.
    pub residual: f64,
}

/// Extreme eigenvalues by cyclic Jacobi with a residual certificate.
pub fn least_eigenvalue(matrix: &SymmetricMatrix, tol: f64) -> Result<SpectralSummary> {
    if matrix.order() == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let eig = jacobi_eigen(matrix, tol)?;
    let (lambda_min, v) = (eig.values[0], &eig.vectors[0]);
    let mv = matrix.mul_vec(v);
    let res: Vec<f64> = mv.iter().zip(v).map(|(x, y)| x - lambda_min * y).collect();
    Ok(SpectralSummary {
        lambda_min,
        lambda_max: *eig.values.last().unwrap(),
        residual: norm(&res),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Why the check was not run, when it was not.
    pub skipped: Option<String>,
    pub passed: bool,
    pub rate: f64,
    /// `bound(t) / R_S(t)` at each recorded time.
    pub margins: Vec<f64>,
}

/// Compare the recorded loss against
/// `R_S(0) exp(-(m/n) ν²ε² ((ε/ν) λ_a + (ν/ε) λ_w) t)`.
pub fn decay_bound_check(
    trajectory: &Trajectory,
    lambda_a: f64,
    lambda_w: f64,
    scaling: &ScalingConfig,
) -> DecayReport {
    let n = trajectory.meta.samples;
    let regime = scaling.regime();
    if regime.side() != RegimeSide::Linear {
        return DecayReport {
            skipped: Some(format!("bound only applies in the linear regime, got {regime}")),
            passed: false,
            rate: f64::NAN,
            margins: Vec::new(),
        };
    }
    let (nu, eps) = (scaling.nu, scaling.eps);
    let rate = scaling.m as f64 / n as f64
        * (nu * eps).powi(2)
        * (eps / nu * lambda_a + nu / eps * lambda_w);
    let r0 = trajectory.loss_series.first().copied().unwrap_or(0.0);
    let mut passed = true;
    let margins = trajectory
        .times
        .iter()
        .zip(&trajectory.loss_series)
        .map(|(t, loss)| {
            let bound = r0 * (-rate * t).exp();
            if *loss > bound * (1.0 + DECAY_SLACK) {
                passed = false;
            }
            bound / loss
        })
        .collect();
    DecayReport { skipped: None, passed, rate, margins }
}
