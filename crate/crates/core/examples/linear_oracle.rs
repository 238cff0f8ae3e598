//! Closed-form solution of the reduced single-neuron flow, checked against RK4.

use phaselab::dataset::{compute_direction, synth_dataset};
use phaselab::integrator::step_rk4;
use phaselab::linalg::{max_abs, norm};
use phaselab::linear::{analytic_solution, eigenpairs, LinearSystem};
use phaselab::ScalingConfig;

fn main() -> phaselab::Result<()> {
    let ds = synth_dataset(5, 3, 0, 1.0)?;
    let dir = compute_direction(&ds)?;
    let scaling = ScalingConfig::from_scales(1, 0.5, 0.8)?;
    let system = LinearSystem::new(dir.clone());
    for pair in eigenpairs(&system) {
        println!("eigenvalue {:+.5}", pair.value);
    }

    let (a0, w0) = (0.3, vec![0.1, -0.4, 0.2]);
    let mut state: Vec<f64> = std::iter::once(a0).chain(w0.iter().copied()).collect();
    let (dt, steps) = (1e-3, 3000);
    for _ in 0..steps {
        state = step_rk4(&state, dt, |s, out| system.rhs(&scaling, s, out));
    }
    let t = dt * steps as f64;
    let (nu_a, eps_w) = analytic_solution(a0, &w0, &scaling, &dir, t)?;
    let err_a = (scaling.nu * state[0] - nu_a).abs();
    let diff: Vec<f64> = state[1..].iter().zip(&eps_w).map(|(w, e)| scaling.eps * w - e).collect();
    println!(
        "t={t}: |W| = {:.4}, rk4 error a {:.2e}, w {:.2e}",
        norm(&eps_w),
        err_a,
        max_abs(&diff)
    );
    Ok(())
}
