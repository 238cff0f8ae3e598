//! Finite-width Gram matrices next to their Monte Carlo infinite-width limits.

use phaselab::dataset::synth_dataset;
use phaselab::gram::{gram_a, gram_w, kernel_mc_sharded, least_eigenvalue, KernelKind};
use phaselab::network::init_params;
use phaselab::{Activation, ScalingConfig};

fn main() -> phaselab::Result<()> {
    let ds = synth_dataset(4, 3, 0, 1.0)?;
    let act = Activation::Tanh;
    let scaling = ScalingConfig::from_scales(2048, 2048f64.powf(-0.5), 1.0)?;
    let params = init_params(2048, ds.d(), 1)?;

    for (name, g) in [
        ("G_a", gram_a(&params, &scaling, &ds, act)?),
        ("G_w", gram_w(&params, &scaling, &ds, act)?),
    ] {
        let s = least_eigenvalue(&g, 1e-12)?;
        println!("{name}: lambda_min {:.4e}, lambda_max {:.4e}", s.lambda_min, s.lambda_max);
    }
    for kind in [KernelKind::A, KernelKind::W] {
        let est = kernel_mc_sharded(&ds, scaling.eps, kind, 50_000, 7, act)?;
        let s = least_eigenvalue(&est.mean, 1e-12)?;
        println!(
            "K_{kind:?}: lambda_min {:.4e} ± {:.1e}",
            s.lambda_min,
            est.lambda_min_std_error()?
        );
    }
    Ok(())
}
