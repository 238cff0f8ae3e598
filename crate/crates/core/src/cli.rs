//! Subcommand implementations behind the `phaselab` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::activation::{check_assumption, ActivationAssumption, ActivationReport};
use crate::config::RunConfig;
use crate::dataset::{compute_direction, validate, AssumptionReport, Dataset};
use crate::error::{Error, Result};
use crate::gram::{
    gram_a, gram_w, kernel_mc_sharded, least_eigenvalue, KernelKind, SpectralSummary,
};
use crate::harness::{
    default_horizon, phase_grid_csv, run_phase_grid, run_width_sweep, sweep_csv, BaseConfig,
    FitEntry, FitMode, FitsReport,
};
use crate::integrator::{choose_step, integrate, IntegrationSchedule};
use crate::io::{write_atomic, SCHEMA_VERSION};
use crate::linalg::SymmetricMatrix;
use crate::metrics::{build_series, detect_t_hat, MetricSeries};
use crate::network::{init_params, write_snapshot, SnapshotHeader, SNAPSHOT_FORMAT_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "phaselab", version, about = "Gradient-flow phase-diagram experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config's `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Overrides the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (overrides the config's `threads`).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one run and export its trajectory.
    Simulate,
    /// Width sweeps with scaling-law fits.
    Sweep,
    /// Empirical labels over a (γ, γ') grid.
    PhaseGrid,
    /// Finite-width Gram matrices and Monte Carlo kernels.
    Gram,
    /// Check dataset and activation assumptions.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Sweep => "sweep",
            Command::PhaseGrid => "phase-grid",
            Command::Gram => "gram",
            Command::Validate => "validate",
        }
    }
}

/// Everything a command needs: the validated config and where to write.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: RunConfig,
    pub config_sha256: String,
    pub out: PathBuf,
}

impl Context {
    /// Load `path` and apply command-line overrides.
    pub fn from_file(path: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut config = RunConfig::load(path)?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let out = out.or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
        Ok(Context { config, config_sha256: hex_digest(&bytes), out })
    }

    fn write(&self, name: &str, bytes: &[u8], files: &mut Vec<String>) -> Result<()> {
        write_atomic(&self.out.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What a command produced; folded into `manifest.json`.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<String>,
    pub stop_reasons: Vec<String>,
    pub results: serde_json::Value,
    /// Nonzero when the command finished but the inputs failed a check.
    pub exit_code: i32,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    config_sha256: &'a str,
    seed: u64,
    version: &'a str,
    timestamp: u64,
    stop_reasons: &'a [String],
    files: &'a [String],
    results: &'a serde_json::Value,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        return EXIT_NUMERICAL;
    }
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn base_config(ctx: &Context, dataset: Dataset) -> Result<BaseConfig> {
    Ok(BaseConfig::new(dataset, ctx.config.activation()?))
}

fn missing(key: &str) -> Error {
    Error::Config(format!("missing section `{key}`"))
}

/// Trajectory export: `t, loss, rd, ratio, max_energy` with `max_energy`
/// the largest per-neuron energy `q_max`.
pub fn trajectory_csv(series: &MetricSeries) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "loss", "rd", "ratio", "max_energy", "schema_version"])?;
    for i in 0..series.len() {
        w.write_record([
            series.times[i].to_string(),
            series.loss[i].to_string(),
            series.rd[i].to_string(),
            series.ratio[i].to_string(),
            series.q_max[i].to_string(),
            SCHEMA_VERSION.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("<trajectory writer>", e.into_error()))
}

pub fn cmd_simulate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let sim = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let act = cfg.activation()?;
    let ds = cfg.load_dataset()?;
    let scaling = sim.scaling.resolve(ds.d(), "simulate.scaling")?;
    let params = init_params(scaling.m, ds.d(), cfg.seed)?;
    let dt = match sim.dt {
        Some(dt) => dt,
        None => choose_step(&params, &scaling, &ds, act)?,
    };
    let t_max = match sim.t_max {
        Some(t) => t,
        None => {
            let (g, gp) = scaling.phase_coordinates();
            default_horizon(g, gp, scaling.m, compute_direction(&ds)?.z_norm)
        }
    };
    let mut schedule = IntegrationSchedule::with_records(t_max, dt, sim.records);
    schedule.stop_loss_ratio = sim.stop_loss_ratio;
    schedule.blowup_norm = sim.blowup_norm;
    let mut traj = integrate(&params, &scaling, &ds, &schedule, act)?;
    traj.meta.seed = Some(cfg.seed);
    let series = build_series(&traj)?;
    let peak = detect_t_hat(&series);

    let mut files = Vec::new();
    ctx.write("trajectory.csv", &trajectory_csv(&series)?, &mut files)?;
    ctx.write("metrics.csv", &series.to_csv_bytes()?, &mut files)?;
    if sim.snapshot {
        let t_end = traj.steps as f64 * dt;
        let header = SnapshotHeader {
            m: scaling.m,
            d: ds.d(),
            seed: cfg.seed,
            nu: scaling.nu,
            eps: scaling.eps,
            activation: act,
            t: t_end,
            format_version: SNAPSHOT_FORMAT_VERSION,
        };
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &traj.last, &header)?;
        ctx.write("snapshot.csv", &buf, &mut files)?;
    }
    Ok(Outcome {
        files,
        stop_reasons: vec![traj.stop_reason.name().to_string()],
        results: serde_json::json!({
            "m": scaling.m,
            "nu": scaling.nu,
            "eps": scaling.eps,
            "regime": scaling.regime().name(),
            "dt": dt,
            "t_max": t_max,
            "steps": traj.steps,
            "t_hat": peak.t_hat,
            "peak_ratio": peak.peak_ratio,
            "sup_rd": series.sup_rd(),
            "horizon_limited": !series.is_saturated(),
        }),
        exit_code: EXIT_OK,
    })
}

pub fn cmd_sweep(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let sweep = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let mut base = base_config(ctx, cfg.load_dataset()?)?;
    base.t_max = sweep.t_max;
    base.dt = sweep.dt;
    base.records = sweep.records;
    base.stop_loss_ratio = sweep.stop_loss_ratio;
    base.max_steps = sweep.max_steps;
    let forced: Option<FitMode> = sweep.fit_mode.as_deref().map(str::parse).transpose()?;

    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for &[gamma, gamma_prime] in &sweep.points {
        let point_rows = run_width_sweep(gamma, gamma_prime, &sweep.widths, &sweep.seeds, &base)?;
        let mode = forced.or_else(|| FitMode::for_point(gamma, gamma_prime));
        fits.push(FitEntry::from_rows(gamma, gamma_prime, &point_rows, mode));
        rows.extend(point_rows);
    }

    let mut files = Vec::new();
    ctx.write("sweep.csv", &sweep_csv(&rows)?, &mut files)?;
    let report = FitsReport::new(fits);
    ctx.write("fits.json", &json_bytes(&report)?, &mut files)?;
    let limited = rows.iter().filter(|r| r.horizon_limited).count();
    Ok(Outcome {
        files,
        stop_reasons: Vec::new(),
        results: serde_json::json!({ "rows": rows.len(), "horizon_limited_rows": limited }),
        exit_code: EXIT_OK,
    })
}

pub fn cmd_phase_grid(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let grid = cfg.phase_grid.as_ref().ok_or_else(|| missing("phase_grid"))?;
    let mut base = base_config(ctx, cfg.load_dataset()?)?;
    base.thresholds = grid.thresholds;
    base.t_max = grid.t_max;
    base.records = grid.records;
    base.max_steps = grid.max_steps;
    let cells = run_phase_grid(&grid.gammas, &grid.gamma_primes, grid.m_probe, &grid.seeds, &base)?;

    let mut files = Vec::new();
    ctx.write("phase_grid.csv", &phase_grid_csv(&cells)?, &mut files)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &cells {
        *counts.entry(c.empirical_label.name()).or_default() += 1;
    }
    let notes: Vec<&str> = cells.iter().filter_map(|c| c.note.as_deref()).collect();
    Ok(Outcome {
        files,
        stop_reasons: Vec::new(),
        results: serde_json::json!({ "cells": cells.len(), "labels": counts, "notes": notes }),
        exit_code: EXIT_OK,
    })
}

/// Long-format matrix export: `matrix, i, j, value`.
fn matrices_csv(named: &[(&str, &SymmetricMatrix)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["matrix", "i", "j", "value", "schema_version"])?;
    for (name, m) in named {
        for i in 0..m.order() {
            for j in 0..m.order() {
                w.write_record([
                    name.to_string(),
                    i.to_string(),
                    j.to_string(),
                    m.get(i, j).to_string(),
                    SCHEMA_VERSION.to_string(),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::io("<gram writer>", e.into_error()))
}

#[derive(Debug, Serialize)]
struct SpectrumEntry {
    matrix: String,
    #[serde(flatten)]
    summary: SpectralSummary,
    /// Monte Carlo standard error of `λ_min`, kernels only.
    lambda_min_std_error: Option<f64>,
}

pub fn cmd_gram(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let gram = cfg.gram.as_ref().ok_or_else(|| missing("gram"))?;
    let act = cfg.activation()?;
    let ds = cfg.load_dataset()?;
    let scaling = gram.scaling.resolve(ds.d(), "gram.scaling")?;
    let params = init_params(scaling.m, ds.d(), cfg.seed)?;
    let eps = gram.kernel_eps.unwrap_or(scaling.eps);

    let ga = gram_a(&params, &scaling, &ds, act)?;
    let gw = gram_w(&params, &scaling, &ds, act)?;
    let ka = kernel_mc_sharded(&ds, eps, KernelKind::A, gram.samples, cfg.seed, act)?;
    let kw = kernel_mc_sharded(&ds, eps, KernelKind::W, gram.samples, cfg.seed, act)?;

    let mut spectra = Vec::new();
    for (name, m, se) in [
        ("G_a", &ga, None),
        ("G_w", &gw, None),
        ("K_a", &ka.mean, Some(ka.lambda_min_std_error()?)),
        ("K_w", &kw.mean, Some(kw.lambda_min_std_error()?)),
    ] {
        spectra.push(SpectrumEntry {
            matrix: name.to_string(),
            summary: least_eigenvalue(m, 1e-12)?,
            lambda_min_std_error: se,
        });
    }

    let mut files = Vec::new();
    let csv = matrices_csv(&[("G_a", &ga), ("G_w", &gw), ("K_a", &ka.mean), ("K_w", &kw.mean)])?;
    ctx.write("gram.csv", &csv, &mut files)?;
    let report = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "m": scaling.m,
        "kernel_eps": eps,
        "samples": gram.samples,
        "spectra": spectra,
    });
    ctx.write("spectra.json", &json_bytes(&report)?, &mut files)?;
    Ok(Outcome {
        files,
        stop_reasons: Vec::new(),
        results: serde_json::Value::Null,
        exit_code: EXIT_OK,
    })
}

#[derive(Debug, Serialize)]
struct ValidationReport {
    schema_version: u32,
    passed: bool,
    dataset: AssumptionReport,
    activation: Vec<ActivationReport>,
}

pub fn cmd_validate(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.config;
    let c = cfg.validate.clone().unwrap_or_default().c;
    let act = cfg.activation()?;
    let ds = cfg.load_dataset()?;
    let dataset = validate(&ds, c);
    let activation: Vec<ActivationReport> =
        [ActivationAssumption::Multiplicity1, ActivationAssumption::NTKStyle]
            .into_iter()
            .map(|which| check_assumption(act, which))
            .collect();
    // the tail condition is informational; tanh fails it by design
    let passed = dataset.nondegenerate_ok
        && dataset.nonparallel_ok
        && activation.iter().all(|r| r.passed || r.assumption == ActivationAssumption::NTKStyle);
    let report = ValidationReport { schema_version: SCHEMA_VERSION, passed, dataset, activation };

    let mut files = Vec::new();
    ctx.write("validation.json", &json_bytes(&report)?, &mut files)?;
    Ok(Outcome {
        files,
        stop_reasons: Vec::new(),
        results: serde_json::json!({ "passed": passed }),
        exit_code: if passed { EXIT_OK } else { EXIT_CONFIG },
    })
}

/// Run `command` and write its manifest; returns the process exit code.
pub fn execute(command: Command, ctx: &Context) -> Result<i32> {
    let outcome = match command {
        Command::Simulate => cmd_simulate(ctx),
        Command::Sweep => cmd_sweep(ctx),
        Command::PhaseGrid => cmd_phase_grid(ctx),
        Command::Gram => cmd_gram(ctx),
        Command::Validate => cmd_validate(ctx),
    }?;
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command.name(),
        config_sha256: &ctx.config_sha256,
        seed: ctx.config.seed,
        version: env!("CARGO_PKG_VERSION"),
        timestamp,
        stop_reasons: &outcome.stop_reasons,
        files: &outcome.files,
        results: &outcome.results,
    };
    write_atomic(&ctx.out.join("manifest.json"), &json_bytes(&manifest)?)?;
    Ok(outcome.exit_code)
}

/// Parse arguments, run, and report errors on stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = (|| {
        let path =
            cli.config.as_deref().ok_or_else(|| Error::Config("--config is required".into()))?;
        let ctx = Context::from_file(path, cli.out.clone(), cli.seed)?;
        if let Some(threads) = cli.threads.or(ctx.config.threads) {
            if threads == 0 {
                return Err(Error::Config("--threads must be at least 1".into()));
            }
            // a pool built earlier in this process keeps its size
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
        execute(cli.command, &ctx)
    })();
    match result {
        Ok(code) => {
            if code != EXIT_OK {
                eprintln!("phaselab {}: checks failed (exit {code})", cli.command.name());
            }
            code
        }
        Err(e) => {
            eprintln!("phaselab {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Blowup { t: 1.0 }), EXIT_NUMERICAL);
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::UnknownActivation("relu".into())), EXIT_CONFIG);
        let io = Error::io("/x", std::io::Error::from(std::io::ErrorKind::NotFound));
        assert_eq!(exit_code(&io), EXIT_IO);
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from([
            "phaselab",
            "phase-grid",
            "--config",
            "c.json",
            "--seed",
            "7",
            "--threads",
            "2",
        ])
        .unwrap();
        assert_eq!(cli.command, Command::PhaseGrid);
        assert_eq!(cli.seed, Some(7));
        assert_eq!(cli.threads, Some(2));
    }

    #[test]
    fn digest_is_hex_sha256() {
        let h = hex_digest(b"abc");
        assert_eq!(h, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
