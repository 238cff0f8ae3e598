//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is always
//! printed. Failures are reported, not fatal, unless `ACCEPTANCE_STRICT=1`.

use std::fmt::Write as _;
use std::time::Instant;

use phaselab::activation::Activation;
use phaselab::dataset::{synth_dataset, validate, CondensationDirection, Dataset};
use phaselab::gram::{
    decay_bound_check, kernel_mc, kernel_mc_sharded, least_eigenvalue, KernelKind,
    DEFAULT_MC_SAMPLES,
};
use phaselab::harness::{
    fit_scaling_law, phase_grid_csv, run_phase_grid, run_width_sweep, simulate_scaled, sweep_csv,
    BaseConfig, EmpiricalLabel, FitMode, SweepRow,
};
use phaselab::linear::{analytic_solution, LinearSystem};
use phaselab::network::{flow_rhs, init_params};
use phaselab::scaling::{ScalingConfig, Scheme};
use phaselab::NormalizedParams;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;

const SMOOTH: [Activation; 4] =
    [Activation::Tanh, Activation::ScaledSiLU, Activation::XTanh, Activation::ModifiedSoftplus];

struct Outcome {
    passed: bool,
    detail: String,
    /// Data behind the verdict, compared byte-for-byte on rerun.
    csv: Vec<u8>,
}

fn gaussian(rng: &mut Pcg64, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn log_uniform(rng: &mut Pcg64, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Empirical risk written out from the definition, independent of the
/// library's forward pass: `f(x) = ν Σ a_k σ(ε w_kᵀx)`.
fn risk_oracle(a: &[f64], w: &[f64], nu: f64, eps: f64, act: Activation, ds: &Dataset) -> f64 {
    let (n, d) = (ds.n(), ds.d());
    let mut total = 0.0;
    for i in 0..n {
        let x = ds.input(i);
        let f: f64 = a
            .iter()
            .enumerate()
            .map(|(k, ak)| {
                let s: f64 = w[k * d..(k + 1) * d].iter().zip(x).map(|(p, q)| p * q).sum();
                ak * act.eval(eps * s)
            })
            .sum();
        let e = nu * f - ds.label(i);
        total += e * e;
    }
    total / (2.0 * n as f64)
}

fn criterion_gradient() -> Outcome {
    let mut rng = Pcg64::seed_from_u64(101);
    let mut csv = String::from("instance,activation,m,n,d,rel_err\n");
    let mut worst: f64 = 0.0;
    for inst in 0..50 {
        let act = SMOOTH[inst % SMOOTH.len()];
        let (m, n, d) = (rng.gen_range(1..=16), rng.gen_range(1..=8), rng.gen_range(1..=4));
        let ds = Dataset::from_flat(
            gaussian(&mut rng, n * d),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            d,
        )
        .unwrap();
        let (nu, eps) = (log_uniform(&mut rng, 0.1, 3.0), log_uniform(&mut rng, 0.1, 3.0));
        let scaling = ScalingConfig::from_scales(m, nu, eps).unwrap();
        let params =
            NormalizedParams::new(gaussian(&mut rng, m), gaussian(&mut rng, m * d), d).unwrap();
        let (ga, gw) = flow_rhs(&params, &scaling, act, &ds).unwrap();

        // gradient flow in normalized variables: da = -(1/ν²)∂R/∂a, dW = -(1/ε²)∂R/∂W
        let mut state = params.state().to_vec();
        let mut fd = vec![0.0; state.len()];
        for j in 0..state.len() {
            let h = 1e-5 * state[j].abs().max(1.0);
            let orig = state[j];
            state[j] = orig + h;
            let up = risk_oracle(&state[..m], &state[m..], nu, eps, act, &ds);
            state[j] = orig - h;
            let down = risk_oracle(&state[..m], &state[m..], nu, eps, act, &ds);
            state[j] = orig;
            let precond = if j < m { nu * nu } else { eps * eps };
            fd[j] = -(up - down) / (2.0 * h) / precond;
        }
        let analytic: Vec<f64> = ga.iter().chain(&gw).copied().collect();
        let diff: Vec<f64> = analytic.iter().zip(&fd).map(|(p, q)| p - q).collect();
        let rel = norm(&diff) / norm(&analytic).max(1e-300);
        worst = worst.max(rel);
        let _ = writeln!(csv, "{inst},{act},{m},{n},{d},{rel:e}");
    }
    Outcome {
        passed: worst <= 1e-6,
        detail: format!("max rel err {worst:.2e} over 50 instances (tol 1e-6)"),
        csv: csv.into_bytes(),
    }
}

struct LinearCase {
    scaling: ScalingConfig,
    direction: CondensationDirection,
    a0: f64,
    w0: Vec<f64>,
}

fn linear_cases(seed: u64) -> Vec<LinearCase> {
    let mut rng = Pcg64::seed_from_u64(seed);
    (0..20)
        .map(|_| {
            let d = rng.gen_range(1..=4);
            let raw = gaussian(&mut rng, d);
            let z_norm = rng.gen_range(0.2..1.0);
            let z_hat: Vec<f64> = raw.iter().map(|v| v / norm(&raw)).collect();
            let z = z_hat.iter().map(|v| v * z_norm).collect();
            let (nu, eps) = (log_uniform(&mut rng, 0.2, 2.0), log_uniform(&mut rng, 0.2, 2.0));
            LinearCase {
                scaling: ScalingConfig::from_scales(64, nu, eps).unwrap(),
                direction: CondensationDirection { z, z_norm, z_hat },
                a0: rng.sample(StandardNormal),
                w0: gaussian(&mut rng, d),
            }
        })
        .collect()
}

fn criterion_linear_oracle() -> Outcome {
    let mut csv = String::from("case,max_fd_residual,max_rk4_error\n");
    let (mut worst_fd, mut worst_rk): (f64, f64) = (0.0, 0.0);
    for (ci, c) in linear_cases(202).into_iter().enumerate() {
        let z = &c.direction.z;
        let solve = |t: f64| analytic_solution(c.a0, &c.w0, &c.scaling, &c.direction, t).unwrap();

        // finite-difference residual of dA/dt = ⟨W, z⟩, dW/dt = A z in original scale
        let h = 1e-6;
        let mut fd_res: f64 = 0.0;
        for k in 1..=20 {
            let t = 0.25 * k as f64;
            let (a_up, w_up) = solve(t + h);
            let (a_dn, w_dn) = solve(t - h);
            let (a, w) = solve(t);
            let mut lhs = vec![(a_up - a_dn) / (2.0 * h)];
            lhs.extend(w_up.iter().zip(&w_dn).map(|(p, q)| (p - q) / (2.0 * h)));
            let mut rhs = vec![w.iter().zip(z).map(|(p, q)| p * q).sum::<f64>()];
            rhs.extend(z.iter().map(|zj| a * zj));
            let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(p, q)| p - q).collect();
            fd_res = fd_res.max(norm(&diff) / norm(&rhs));
        }

        let system = LinearSystem::new(c.direction.clone());
        let (nu, eps) = (c.scaling.nu, c.scaling.eps);
        let mut state = vec![c.a0];
        state.extend(&c.w0);
        let dt = 1e-3;
        let mut rk_err: f64 = 0.0;
        for step in 1..=5000 {
            state =
                phaselab::integrator::step_rk4(&state, dt, |y, out| system.rhs(&c.scaling, y, out));
            let (a, w) = solve(step as f64 * dt);
            rk_err = rk_err.max((nu * state[0] - a).abs());
            for (p, q) in state[1..].iter().zip(&w) {
                rk_err = rk_err.max((eps * p - q).abs());
            }
        }
        worst_fd = worst_fd.max(fd_res);
        worst_rk = worst_rk.max(rk_err);
        let _ = writeln!(csv, "{ci},{fd_res:e},{rk_err:e}");
    }
    Outcome {
        passed: worst_fd <= 1e-7 && worst_rk <= 1e-8,
        detail: format!(
            "FD residual {worst_fd:.2e} (tol 1e-7), RK4 max abs err {worst_rk:.2e} (tol 1e-8)"
        ),
        csv: csv.into_bytes(),
    }
}

fn criterion_conservation() -> Outcome {
    let mut csv = String::from("case,invariant_drift,perp_drift\n");
    let (mut worst_inv, mut worst_perp): (f64, f64) = (0.0, 0.0);
    for (ci, c) in linear_cases(303).into_iter().enumerate() {
        let u_hat = &c.direction.z_hat;
        let split = |w: &[f64]| {
            let par: f64 = w.iter().zip(u_hat).map(|(p, q)| p * q).sum();
            let perp: Vec<f64> = w.iter().zip(u_hat).map(|(p, q)| p - par * q).collect();
            (par, perp)
        };
        let (u0, w0) = analytic_solution(c.a0, &c.w0, &c.scaling, &c.direction, 0.0).unwrap();
        let (v0, perp0) = split(&w0);
        let c0 = u0 * u0 - v0 * v0;
        let scale = u0 * u0 + v0 * v0;
        let (mut inv, mut perp_drift): (f64, f64) = (0.0, 0.0);
        for k in 0..=100 {
            let t = 0.05 * k as f64;
            let (u, w) = analytic_solution(c.a0, &c.w0, &c.scaling, &c.direction, t).unwrap();
            let (v, perp) = split(&w);
            inv = inv.max(((u * u - v * v) - c0).abs() / scale);
            let drift: Vec<f64> = perp.iter().zip(&perp0).map(|(p, q)| p - q).collect();
            // coordinates of W(t) carry ulp(‖W(t)‖) rounding, so drift is measured
            // against max(1, ‖W(t)‖)
            perp_drift = perp_drift.max(norm(&drift) / norm(&w).max(1.0));
        }
        worst_inv = worst_inv.max(inv);
        worst_perp = worst_perp.max(perp_drift);
        let _ = writeln!(csv, "{ci},{inv:e},{perp_drift:e}");
    }
    Outcome {
        passed: worst_inv <= 1e-10 && worst_perp <= 1e-14,
        detail: format!(
            "u²-v² drift {worst_inv:.2e} rel (tol 1e-10), z-orthogonal drift {worst_perp:.2e} (tol 1e-14)"
        ),
        csv: csv.into_bytes(),
    }
}

fn criterion_init_statistics() -> Outcome {
    let (m, d) = (4096usize, 8usize);
    let delta: f64 = 0.01;
    let max_bound = (2.0 * (2.0 * m as f64 * (d as f64 + 1.0) / delta).ln()).sqrt();
    let mf = m as f64;
    let (a_lo, a_hi) = ((mf / 2.0).sqrt(), (3.0 * mf / 2.0).sqrt());
    let md = (m * d) as f64;
    let (w_lo, w_hi) = ((md / 2.0).sqrt(), (3.0 * md / 2.0).sqrt());
    let mut csv = String::from("seed,norm_a,norm_w,max_entry\n");
    let (mut norm_fail, mut max_fail) = (0, 0);
    for seed in 0..100u64 {
        let p = init_params(m, d, seed).unwrap();
        let (na, nw) = (norm(p.a()), norm(p.w()));
        let top = (0..m)
            .map(|k| p.w_row(k).iter().fold(p.a()[k].abs(), |acc, v| acc.max(v.abs())))
            .fold(0.0, f64::max);
        if !(a_lo..=a_hi).contains(&na) || !(w_lo..=w_hi).contains(&nw) {
            norm_fail += 1;
        }
        if top > max_bound {
            max_fail += 1;
        }
        let _ = writeln!(csv, "{seed},{na},{nw},{top}");
    }
    Outcome {
        passed: norm_fail <= 2 && max_fail <= 2,
        detail: format!(
            "norm-bound failures {norm_fail}/100, max-bound failures {max_fail}/100 (bound {max_bound:.3}, allowed 2)"
        ),
        csv: csv.into_bytes(),
    }
}

fn acceptance_dataset() -> Dataset {
    synth_dataset(6, 4, 0, 1.0).unwrap()
}

fn criterion_lazy_regime() -> Outcome {
    let ds = acceptance_dataset();
    let base = BaseConfig::new(ds.clone(), Activation::Tanh);
    let widths = [256usize, 1024, 4096];
    let seeds = [1u64, 2, 3];
    let eps = Scheme::LeCun.scales(widths[0], ds.d()).1;
    let lam = |kind| {
        let k = kernel_mc(&ds, eps, kind, DEFAULT_MC_SAMPLES, 7, Activation::Tanh).unwrap();
        least_eigenvalue(&k, 1e-12).unwrap().lambda_min
    };
    let (lambda_a, lambda_w) = (lam(KernelKind::A), lam(KernelKind::W));

    let mut csv = String::from("m,seed,sup_rd,decay_ok,decay_rate\n");
    let mut per_width = Vec::new();
    let mut all_decay = true;
    let mut max_rd: f64 = 0.0;
    for &m in &widths {
        let scaling = ScalingConfig::named_scheme(Scheme::LeCun, m, ds.d()).unwrap();
        let mut rds = Vec::new();
        for &seed in &seeds {
            let (traj, row) = simulate_scaled(&scaling, seed, &base).unwrap();
            let report = decay_bound_check(&traj, lambda_a, lambda_w, &scaling);
            let ok = report.skipped.is_none() && report.passed;
            all_decay &= ok;
            max_rd = max_rd.max(row.sup_rd);
            rds.push(row.sup_rd);
            let _ = writeln!(csv, "{m},{seed},{},{ok},{}", row.sup_rd, report.rate);
        }
        per_width.push(mean(&rds));
    }
    let decreasing = per_width.windows(2).all(|w| w[1] < w[0]);
    Outcome {
        passed: max_rd <= 0.2 && decreasing && all_decay,
        detail: format!(
            "sup RD max {max_rd:.3e} (tol 0.2), mean by width [{}], decreasing {decreasing}, decay bound held {all_decay} (λ_a {lambda_a:.3e}, λ_w {lambda_w:.3e})",
            per_width.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
        csv: csv.into_bytes(),
    }
}

fn width_means(rows: &[SweepRow], f: impl Fn(&SweepRow) -> f64) -> Vec<(usize, f64)> {
    let mut widths: Vec<usize> = rows.iter().map(|r| r.m).collect();
    widths.dedup();
    widths
        .into_iter()
        .map(|m| {
            let v: Vec<f64> = rows.iter().filter(|r| r.m == m).map(&f).collect();
            (m, mean(&v))
        })
        .collect()
}

const SCALING_WIDTHS: [usize; 4] = [256, 1024, 4096, 16384];
const SCALING_SEEDS: [u64; 3] = [1, 2, 3];

fn criterion_wlag() -> Outcome {
    let base = BaseConfig::new(acceptance_dataset(), Activation::Tanh);
    let rows = run_width_sweep(1.6, 0.0, &SCALING_WIDTHS, &SCALING_SEEDS, &base).unwrap();
    let peaks = width_means(&rows, |r| r.peak_ratio);
    let t_hats = width_means(&rows, |r| r.t_hat);
    let peaks_ok =
        rows.iter().all(|r| r.peak_ratio >= 0.8) && peaks.windows(2).all(|w| w[1].1 >= w[0].1);
    let fit = fit_scaling_law(&rows, FitMode::WLag);
    let (fit_ok, fit_text) = match &fit {
        Ok(f) => (
            f.r_squared >= 0.90 && f.slope > 0.0,
            format!("slope {:.4}, R² {:.3} (need ≥ 0.90, slope > 0)", f.slope, f.r_squared),
        ),
        Err(e) => (false, format!("fit refused: {e}")),
    };
    Outcome {
        passed: peaks_ok && fit_ok,
        detail: format!(
            "peak ratio by width {:.3?} (≥ 0.8, nondecreasing: {peaks_ok}); T̂ by width {:.3?}; {fit_text}",
            peaks.iter().map(|p| p.1).collect::<Vec<_>>(),
            t_hats.iter().map(|p| p.1).collect::<Vec<_>>(),
        ),
        csv: sweep_csv(&rows).unwrap(),
    }
}

fn criterion_alag() -> Outcome {
    let base = BaseConfig::new(acceptance_dataset(), Activation::Tanh);
    let rows = run_width_sweep(1.4, -0.4, &SCALING_WIDTHS, &SCALING_SEEDS, &base).unwrap();
    let t_hats = width_means(&rows, |r| r.t_hat);
    let fit = fit_scaling_law(&rows, FitMode::ALag);
    let (passed, fit_text) = match &fit {
        Ok(f) => (
            f.r_squared >= 0.85 && f.slope < 0.0,
            format!("log-log slope {:.4}, R² {:.3} (need ≥ 0.85, slope < 0)", f.slope, f.r_squared),
        ),
        Err(e) => (false, format!("fit refused: {e}")),
    };
    Outcome {
        passed,
        detail: format!(
            "T̂ by width {:.3?}; {fit_text}",
            t_hats.iter().map(|p| p.1).collect::<Vec<_>>()
        ),
        csv: sweep_csv(&rows).unwrap(),
    }
}

fn criterion_kernel_pd() -> Outcome {
    let ds = synth_dataset(4, 3, 0, 1.0).unwrap();
    let report = validate(&ds, 10.0);
    let samples = 200_000;
    let mut csv = String::from("kernel,lambda_min,std_error\n");
    let mut margins_ok = report.nonparallel_ok;
    let mut text = Vec::new();
    for (name, kind) in [("K_a", KernelKind::A), ("K_w", KernelKind::W)] {
        let est = kernel_mc_sharded(&ds, 1.0, kind, samples, 11, Activation::Tanh).unwrap();
        let lam = least_eigenvalue(&est.mean, 1e-12).unwrap().lambda_min;
        let se = est.lambda_min_std_error().unwrap();
        margins_ok &= lam > 0.0 && lam >= 3.0 * se;
        text.push(format!("{name} λ_min {lam:.4e} ({:.1} SE)", lam / se));
        let _ = writeln!(csv, "{name},{lam},{se}");
    }
    let kw = kernel_mc(&ds, 1e-8, KernelKind::W, samples, 11, Activation::Tanh).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..ds.n() {
        for j in 0..ds.n() {
            let g: f64 = ds.input(i).iter().zip(ds.input(j)).map(|(p, q)| p * q).sum();
            worst = worst.max((kw.get(i, j) - g).abs() / g.abs());
            let _ = writeln!(csv, "K_w_small_eps_{i}_{j},{},{g}", kw.get(i, j));
        }
    }
    Outcome {
        passed: margins_ok && worst <= 0.05,
        detail: format!(
            "{}; small-ε K_w vs XXᵀ max rel dev {worst:.2e} (tol 0.05)",
            text.join(", ")
        ),
        csv: csv.into_bytes(),
    }
}

fn criterion_phase_grid() -> Outcome {
    let base = BaseConfig::new(acceptance_dataset(), Activation::Tanh);
    let gammas = [0.4, 0.8, 1.2, 1.6, 2.0];
    let gamma_primes = [-0.8, -0.4, 0.0, 0.4, 0.8];
    let cells = run_phase_grid(&gammas, &gamma_primes, 4096, &[1], &base).unwrap();
    let mut interior = 0;
    let mut mismatches = Vec::new();
    for c in &cells {
        // distances of exactly 0.2 count as interior
        if c.boundary_distance >= 0.2 - 1e-9 {
            interior += 1;
            if !c.empirical_label.matches(c.theory_label.side()) {
                mismatches.push(format!("({}, {}) {}", c.gamma, c.gamma_prime, c.empirical_label));
            }
        }
    }
    let ambiguous = cells.iter().filter(|c| c.empirical_label == EmpiricalLabel::Ambiguous).count();
    Outcome {
        passed: mismatches.is_empty(),
        detail: format!(
            "{interior} interior cells, mismatches {mismatches:?}; {ambiguous} ambiguous cells overall"
        ),
        csv: phase_grid_csv(&cells).unwrap(),
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 9] = [
    (1, "flow gradient vs finite differences", criterion_gradient),
    (2, "linear oracle exactness", criterion_linear_oracle),
    (3, "conservation and freeze", criterion_conservation),
    (4, "initialization statistics", criterion_init_statistics),
    (5, "linear regime at desk scale (LeCun, tanh)", criterion_lazy_regime),
    (6, "w-lag scaling law (γ=1.6, γ'=0)", criterion_wlag),
    (7, "a-lag scaling law (γ=1.4, γ'=-0.4)", criterion_alag),
    (8, "kernel positive definiteness", criterion_kernel_pd),
    (9, "phase-grid consistency (m=4096)", criterion_phase_grid),
];

fn main() {
    // `cargo test -- --list` and filters from the default harness
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");

    // ACCEPTANCE_ONLY=5,7 runs a subset and skips the determinism rerun
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let selected: Vec<Criterion> = CRITERIA
        .into_iter()
        .filter(|(id, _, _)| only.as_ref().is_none_or(|o| o.contains(id)))
        .collect();

    let mut first = Vec::new();
    let mut failed = 0;
    for &(id, name, run) in &selected {
        let start = Instant::now();
        let out = run();
        let verdict = if out.passed { "PASS" } else { "FAIL" };
        failed += usize::from(!out.passed);
        println!(
            "[{verdict}] {id}. {name}: {} [{:.1}s]",
            out.detail,
            start.elapsed().as_secs_f64()
        );
        first.push(out.csv);
    }

    if only.is_some() {
        println!(
            "acceptance: {} of {} selected criteria passed",
            selected.len() - failed,
            selected.len()
        );
        if strict && failed > 0 {
            std::process::exit(1);
        }
        return;
    }

    let start = Instant::now();
    let mut differing = Vec::new();
    for ((id, _, run), bytes) in selected.iter().zip(&first) {
        if run().csv != *bytes {
            differing.push(*id);
        }
    }
    let same = differing.is_empty();
    failed += usize::from(!same);
    println!(
        "[{}] 10. determinism: reran criteria 1-9, CSV outputs {} [{:.1}s]",
        if same { "PASS" } else { "FAIL" },
        if same { "byte-identical".to_string() } else { format!("differ for {differing:?}") },
        start.elapsed().as_secs_f64()
    );
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if strict && failed > 0 {
        std::process::exit(1);
    }
}
