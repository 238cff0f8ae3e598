//! Integrate one network under a named scaling and print its metric series.
//!
//! `cargo run --release --example simulate_flow -- [m] [scheme]`

use phaselab::dataset::synth_dataset;
use phaselab::harness::{simulate_scaled, BaseConfig};
use phaselab::metrics::build_series;
use phaselab::scaling::named_scheme;
use phaselab::Activation;

fn main() -> phaselab::Result<()> {
    let mut args = std::env::args().skip(1);
    let m: usize = args.next().map_or(512, |s| s.parse().expect("width"));
    let scheme = args.next().unwrap_or_else(|| "lecun".into());

    let ds = synth_dataset(6, 4, 0, 1.0)?;
    let scaling = named_scheme(&scheme, m, ds.d())?;
    let mut base = BaseConfig::new(ds, Activation::Tanh);
    base.t_max = Some(4.0);
    base.records = 20;

    let (traj, row) = simulate_scaled(&scaling, 1, &base)?;
    println!("{scheme} m={m} regime={} stop={:?}", scaling.regime(), traj.stop_reason);
    println!("{:>8} {:>12} {:>12} {:>8}", "t", "loss", "rd", "ratio");
    let s = build_series(&traj)?;
    for i in 0..s.len() {
        println!("{:8.3} {:12.4e} {:12.4e} {:8.4}", s.times[i], s.loss[i], s.rd[i], s.ratio[i]);
    }
    println!("sup rd {:.3e}, peak ratio {:.3} at t={:.3}", row.sup_rd, row.peak_ratio, row.t_hat);
    Ok(())
}
