//! Sweep widths at one phase-diagram point and fit the condensation-time law.
//!
//! `cargo run --release --example width_sweep -- [gamma] [gamma_prime]`

use phaselab::dataset::synth_dataset;
use phaselab::harness::{fit_scaling_law, run_width_sweep, BaseConfig, FitMode};
use phaselab::Activation;

fn main() -> phaselab::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<f64>().expect("number"));
    let gamma = args.next().unwrap_or(1.4);
    let gamma_prime = args.next().unwrap_or(-0.4);

    let base = BaseConfig::new(synth_dataset(6, 4, 0, 1.0)?, Activation::Tanh);
    let rows = run_width_sweep(gamma, gamma_prime, &[64, 256, 1024], &[1, 2], &base)?;
    for r in &rows {
        println!(
            "m={:5} seed={} t_hat={:7.3} peak={:.3} limited={}",
            r.m, r.seed, r.t_hat, r.peak_ratio, r.horizon_limited
        );
    }
    match FitMode::for_point(gamma, gamma_prime) {
        Some(mode) => match fit_scaling_law(&rows, mode) {
            Ok(fit) => println!("{}: slope {:.4}, R² {:.3}", mode.name(), fit.slope, fit.r_squared),
            Err(e) => println!("fit refused: {e}"),
        },
        None => println!("({gamma}, {gamma_prime}) is not in a condensed region; no law to fit"),
    }
    Ok(())
}
