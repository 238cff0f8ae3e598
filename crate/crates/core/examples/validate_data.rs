//! Check a dataset and every activation against the model's assumptions.
//!
//! `cargo run --example validate_data -- [data.csv]`

use phaselab::activation::{check_assumption, ActivationAssumption};
use phaselab::dataset::{load_dataset, synth_dataset, validate};
use phaselab::Activation;

fn main() -> phaselab::Result<()> {
    let ds = match std::env::args().nth(1) {
        Some(path) => load_dataset(path)?,
        None => synth_dataset(8, 3, 0, 1.0)?,
    };
    let report = validate(&ds, 10.0);
    println!(
        "n={} d={}: nondegenerate {}, nonparallel {}",
        ds.n(),
        ds.d(),
        report.nondegenerate_ok,
        report.nonparallel_ok
    );
    for v in &report.violations {
        println!("  {v}");
    }
    for act in Activation::ALL {
        for which in [ActivationAssumption::Multiplicity1, ActivationAssumption::NTKStyle] {
            let r = check_assumption(act, which);
            println!(
                "{:<10} {:<14} {}",
                act.name(),
                format!("{which:?}"),
                if r.passed { "ok" } else { "fails" }
            );
        }
    }
    Ok(())
}
