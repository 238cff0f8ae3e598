//! Probe a coarse phase diagram and compare empirical with predicted labels.
//!
//! `cargo run --release --example phase_grid -- [m_probe]`

use phaselab::dataset::synth_dataset;
use phaselab::harness::{run_phase_grid, BaseConfig};
use phaselab::Activation;

fn main() -> phaselab::Result<()> {
    let m: usize = std::env::args().nth(1).map_or(256, |s| s.parse().expect("width"));
    let mut base = BaseConfig::new(synth_dataset(6, 4, 0, 1.0)?, Activation::Tanh);
    base.records = 100;

    let gammas = [0.25, 1.0, 1.75];
    let gamma_primes = [-0.5, 0.0, 0.5];
    let cells = run_phase_grid(&gammas, &gamma_primes, m, &[1], &base)?;
    for c in &cells {
        let note = if c.boundary_distance < 0.2 {
            "near boundary"
        } else if c.empirical_label.matches(c.theory_label.side()) {
            ""
        } else {
            "disagrees"
        };
        println!(
            "({:5.2}, {:5.2}) theory {:<16} empirical {:<10} dist {:.2} {}",
            c.gamma,
            c.gamma_prime,
            c.theory_label.name(),
            c.empirical_label.name(),
            c.boundary_distance,
            note
        );
    }
    Ok(())
}
