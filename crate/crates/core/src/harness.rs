//! Width sweeps, phase-grid scans and scaling-law fits.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::{compute_direction, Dataset};
use crate::error::{Error, Result};
use crate::integrator::{
    choose_step, integrate, IntegrationSchedule, Trajectory, DEFAULT_BLOWUP_NORM,
};
use crate::io::SCHEMA_VERSION;
use crate::metrics::{build_series, detect_t_hat};
use crate::network::init_params;
use crate::scaling::{
    classify_regime, distance_to_boundary, from_exponents, RegimeLabel, RegimeSide, ScalingConfig,
};

pub const MIN_SWEEP_WIDTH: usize = 16;
pub const DEFAULT_RECORDS: usize = 2000;
pub const DEFAULT_STOP_LOSS_RATIO: f64 = 1e-6;
/// Horizon for cells outside the w-lag region.
pub const DEFAULT_HORIZON: f64 = 8.0;
/// Per-run step budget; stiff cells stop early and are flagged horizon-limited.
pub const DEFAULT_MAX_STEPS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub rd_lazy_max: f64,
    pub rd_cond_min: f64,
    pub ratio_min: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { rd_lazy_max: 0.2, rd_cond_min: 2.0, ratio_min: 0.8 }
    }
}

/// Settings shared by every run of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseConfig {
    pub dataset: Dataset,
    pub activation: Activation,
    /// Fixed step; chosen per run when absent.
    pub dt: Option<f64>,
    /// Fixed horizon; [`default_horizon`] when absent.
    pub t_max: Option<f64>,
    pub records: usize,
    pub stop_loss_ratio: f64,
    pub blowup_norm: f64,
    /// Horizon is clipped to `max_steps · dt` when set.
    pub max_steps: Option<usize>,
    pub thresholds: Thresholds,
}

impl BaseConfig {
    pub fn new(dataset: Dataset, activation: Activation) -> Self {
        BaseConfig {
            dataset,
            activation,
            dt: None,
            t_max: None,
            records: DEFAULT_RECORDS,
            stop_loss_ratio: DEFAULT_STOP_LOSS_RATIO,
            blowup_norm: DEFAULT_BLOWUP_NORM,
            max_steps: Some(DEFAULT_MAX_STEPS),
            thresholds: Thresholds::default(),
        }
    }
}

/// Symmetric split `γ₁ = (γ + γ')/2`, `γ₂ = (γ - γ')/2`.
pub fn split_scaling(m: usize, gamma: f64, gamma_prime: f64) -> Result<ScalingConfig> {
    from_exponents(m, (gamma + gamma_prime) / 2.0, (gamma - gamma_prime) / 2.0)
}

/// `4 (1 + ((γ - γ' - 1)/8) ln m) / ‖z‖` in the w-lag region, else
/// [`DEFAULT_HORIZON`].
pub fn default_horizon(gamma: f64, gamma_prime: f64, m: usize, z_norm: f64) -> f64 {
    if classify_regime(gamma, gamma_prime) == RegimeLabel::CondensedWLag {
        4.0 * (1.0 + (gamma - gamma_prime - 1.0) / 8.0 * (m as f64).ln()) / z_norm
    } else {
        DEFAULT_HORIZON
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: usize,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub seed: u64,
    pub t_hat: f64,
    pub peak_ratio: f64,
    pub sup_rd: f64,
    pub final_loss_ratio: f64,
    pub horizon_limited: bool,
}

/// Integrate one `(γ, γ', m, seed)` configuration and reduce it to a row.
pub fn run_cell(
    gamma: f64,
    gamma_prime: f64,
    m: usize,
    seed: u64,
    base: &BaseConfig,
) -> Result<SweepRow> {
    let wrap =
        |source: Error| Error::Cell { gamma, gamma_prime, m, seed, source: Box::new(source) };
    split_scaling(m, gamma, gamma_prime)
        .and_then(|scaling| run_scaled(&scaling, seed, base))
        .map_err(wrap)
}

/// Like [`run_cell`] for an arbitrary scaling, e.g. a named scheme. The row
/// carries the scaling's phase coordinates.
pub fn run_scaled(scaling: &ScalingConfig, seed: u64, base: &BaseConfig) -> Result<SweepRow> {
    simulate_scaled(scaling, seed, base).map(|(_, row)| row)
}

/// [`run_scaled`] keeping the trajectory.
pub fn simulate_scaled(
    scaling: &ScalingConfig,
    seed: u64,
    base: &BaseConfig,
) -> Result<(Trajectory, SweepRow)> {
    let ds = &base.dataset;
    let m = scaling.m;
    let (gamma, gamma_prime) = scaling.phase_coordinates();
    let params = init_params(m, ds.d(), seed)?;
    let dt = match base.dt {
        Some(dt) => dt,
        None => choose_step(&params, scaling, ds, base.activation)?,
    };
    let mut t_max = match base.t_max {
        Some(t) => t,
        None => default_horizon(gamma, gamma_prime, m, compute_direction(ds)?.z_norm),
    };
    let mut clipped = false;
    if let Some(budget) = base.max_steps {
        let cap = budget as f64 * dt;
        if t_max > cap {
            t_max = cap;
            clipped = true;
        }
    }
    let mut schedule = IntegrationSchedule::with_records(t_max, dt, base.records);
    schedule.stop_loss_ratio = base.stop_loss_ratio;
    schedule.blowup_norm = base.blowup_norm;
    let mut traj = integrate(&params, scaling, ds, &schedule, base.activation)?;
    traj.meta.seed = Some(seed);
    let series = build_series(&traj)?;
    let peak = detect_t_hat(&series);
    let loss0 = series.loss[0];
    let final_loss_ratio = if loss0 > 0.0 { series.loss[series.len() - 1] / loss0 } else { 0.0 };
    let row = SweepRow {
        m,
        gamma,
        gamma_prime,
        seed,
        t_hat: peak.t_hat,
        peak_ratio: peak.peak_ratio,
        sup_rd: series.sup_rd(),
        final_loss_ratio,
        horizon_limited: clipped || !series.is_saturated(),
    };
    Ok((traj, row))
}

/// All `(m, seed)` runs at one phase-diagram point, sorted by `(m, seed)`.
pub fn run_width_sweep(
    gamma: f64,
    gamma_prime: f64,
    widths: &[usize],
    seeds: &[u64],
    base: &BaseConfig,
) -> Result<Vec<SweepRow>> {
    if widths.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("sweep needs at least one width and one seed".into()));
    }
    if widths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!("widths must be increasing: {widths:?}")));
    }
    if let Some(m) = widths.iter().find(|m| **m < MIN_SWEEP_WIDTH) {
        return Err(Error::InvalidInput(format!("width {m} below the minimum {MIN_SWEEP_WIDTH}")));
    }
    let jobs: Vec<(usize, u64)> =
        widths.iter().flat_map(|m| seeds.iter().map(move |s| (*m, *s))).collect();
    let mut rows = jobs
        .par_iter()
        .map(|(m, seed)| run_cell(gamma, gamma_prime, *m, *seed, base))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.m, r.seed));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
///
/// `R² = 1 - SS_res/SS_tot`, and 0 for a constant response.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<RegressionFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), found: ys.len() });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidInput("a fit needs at least two points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>() {
        return Err(Error::DegenerateAbscissa);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 0.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(RegressionFit { slope, intercept, r_squared, n_points: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    /// `T̂` against `ln m`.
    WLag,
    /// `ln T̂` against `ln m`.
    ALag,
}

impl FitMode {
    /// Mode matching the theoretical region of `(γ, γ')`, if condensed.
    pub fn for_point(gamma: f64, gamma_prime: f64) -> Option<FitMode> {
        match classify_regime(gamma, gamma_prime) {
            RegimeLabel::CondensedWLag => Some(FitMode::WLag),
            RegimeLabel::CondensedALag => Some(FitMode::ALag),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FitMode::WLag => "w_lag",
            FitMode::ALag => "a_lag",
        }
    }
}

impl FromStr for FitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "w_lag" | "wlag" => Ok(FitMode::WLag),
            "a_lag" | "alag" => Ok(FitMode::ALag),
            _ => Err(Error::Config(format!("unknown fit mode `{s}`"))),
        }
    }
}

/// Fit the growth of `T̂` with width after averaging seeds at each width.
pub fn fit_scaling_law(rows: &[SweepRow], mode: FitMode) -> Result<RegressionFit> {
    let Some(first) = rows.first() else {
        return Err(Error::InvalidInput("no rows to fit".into()));
    };
    if rows.iter().any(|r| r.gamma != first.gamma || r.gamma_prime != first.gamma_prime) {
        return Err(Error::InvalidInput("rows mix several (γ, γ') points".into()));
    }
    let mut limited: Vec<usize> = rows.iter().filter(|r| r.horizon_limited).map(|r| r.m).collect();
    limited.dedup();
    if !limited.is_empty() {
        return Err(Error::HorizonLimited { widths: limited });
    }
    let mut by_width: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_width.entry(r.m).or_default().push(r.t_hat);
    }
    if by_width.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "a scaling fit needs at least 3 widths, got {}",
            by_width.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (m, mut ts) in by_width {
        // order-independent mean
        ts.sort_by(f64::total_cmp);
        let mean = ts.iter().sum::<f64>() / ts.len() as f64;
        xs.push((m as f64).ln());
        ys.push(match mode {
            FitMode::WLag => mean,
            FitMode::ALag => {
                if !(mean > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "log fit needs positive T̂, got {mean} at m = {m}"
                    )));
                }
                mean.ln()
            }
        });
    }
    ols_fit(&xs, &ys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmpiricalLabel {
    Lazy,
    Condensed,
    Ambiguous,
}

impl EmpiricalLabel {
    pub fn name(self) -> &'static str {
        match self {
            EmpiricalLabel::Lazy => "lazy",
            EmpiricalLabel::Condensed => "condensed",
            EmpiricalLabel::Ambiguous => "ambiguous",
        }
    }

    pub fn classify(sup_rd: f64, peak_ratio: f64, thresholds: &Thresholds) -> Self {
        if sup_rd <= thresholds.rd_lazy_max {
            EmpiricalLabel::Lazy
        } else if sup_rd >= thresholds.rd_cond_min && peak_ratio >= thresholds.ratio_min {
            EmpiricalLabel::Condensed
        } else {
            EmpiricalLabel::Ambiguous
        }
    }

    /// Whether this label sits on the given side of the diagram.
    pub fn matches(self, side: RegimeSide) -> bool {
        matches!(
            (self, side),
            (EmpiricalLabel::Lazy, RegimeSide::Linear)
                | (EmpiricalLabel::Condensed, RegimeSide::Condensed)
        )
    }
}

impl fmt::Display for EmpiricalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Seed-averaged observables of one cell at one width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub m: usize,
    pub sup_rd: f64,
    pub peak_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseCell {
    pub gamma: f64,
    pub gamma_prime: f64,
    pub theory_label: RegimeLabel,
    pub empirical_label: EmpiricalLabel,
    pub evidence: Vec<Evidence>,
    pub boundary_distance: f64,
    /// Set when a run in this cell aborted numerically.
    pub note: Option<String>,
}

/// Every `(γ, γ')` of the grid probed at width `m_probe`, in row-major
/// order over `gammas × gamma_primes`.
pub fn run_phase_grid(
    gammas: &[f64],
    gamma_primes: &[f64],
    m_probe: usize,
    seeds: &[u64],
    base: &BaseConfig,
) -> Result<Vec<PhaseCell>> {
    if gammas.is_empty() || gamma_primes.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput("phase grid needs nonempty axes and seeds".into()));
    }
    let points: Vec<(f64, f64)> =
        gammas.iter().flat_map(|g| gamma_primes.iter().map(move |gp| (*g, *gp))).collect();
    let jobs: Vec<(usize, u64)> =
        (0..points.len()).flat_map(|c| seeds.iter().map(move |s| (c, *s))).collect();
    let results: Vec<Result<SweepRow>> = jobs
        .par_iter()
        .map(|(c, seed)| run_cell(points[*c].0, points[*c].1, m_probe, *seed, base))
        .collect();

    let mut buckets: Vec<(Vec<SweepRow>, Option<String>)> = vec![(Vec::new(), None); points.len()];
    for ((c, _), res) in jobs.iter().zip(results) {
        match res {
            Ok(row) => buckets[*c].0.push(row),
            Err(e) if e.is_numerical() => buckets[*c].1 = Some(e.to_string()),
            Err(e) => return Err(e),
        }
    }

    let mut cells = Vec::with_capacity(points.len());
    for ((gamma, gamma_prime), (rows, note)) in points.iter().copied().zip(buckets) {
        let rds: Vec<f64> = rows.iter().map(|r| r.sup_rd).collect();
        let peaks: Vec<f64> = rows.iter().map(|r| r.peak_ratio).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (label, evidence) = if note.is_some() || rds.is_empty() {
            (EmpiricalLabel::Ambiguous, Vec::new())
        } else {
            let ev = Evidence { m: m_probe, sup_rd: mean(&rds), peak_ratio: mean(&peaks) };
            (EmpiricalLabel::classify(ev.sup_rd, ev.peak_ratio, &base.thresholds), vec![ev])
        };
        cells.push(PhaseCell {
            gamma,
            gamma_prime,
            theory_label: classify_regime(gamma, gamma_prime),
            empirical_label: label,
            evidence,
            boundary_distance: distance_to_boundary(gamma, gamma_prime),
            note,
        });
    }
    Ok(cells)
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "m",
        "gamma",
        "gamma_prime",
        "seed",
        "t_hat",
        "peak_ratio",
        "sup_rd",
        "final_loss_ratio",
        "horizon_limited",
        "schema_version",
    ])?;
    for r in rows {
        w.write_record([
            r.m.to_string(),
            r.gamma.to_string(),
            r.gamma_prime.to_string(),
            r.seed.to_string(),
            r.t_hat.to_string(),
            r.peak_ratio.to_string(),
            r.sup_rd.to_string(),
            r.final_loss_ratio.to_string(),
            r.horizon_limited.to_string(),
            SCHEMA_VERSION.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("<sweep writer>", e.into_error()))
}

pub fn phase_grid_csv(cells: &[PhaseCell]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "gamma",
        "gamma_prime",
        "theory_label",
        "empirical_label",
        "m",
        "sup_rd",
        "peak_ratio",
        "boundary_distance",
        "schema_version",
    ])?;
    for c in cells {
        let ev = c.evidence.first();
        w.write_record([
            c.gamma.to_string(),
            c.gamma_prime.to_string(),
            c.theory_label.name().to_string(),
            c.empirical_label.name().to_string(),
            ev.map_or_else(String::new, |e| e.m.to_string()),
            ev.map_or_else(String::new, |e| e.sup_rd.to_string()),
            ev.map_or_else(String::new, |e| e.peak_ratio.to_string()),
            c.boundary_distance.to_string(),
            SCHEMA_VERSION.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::io("<phase grid writer>", e.into_error()))
}

/// Fit outcome for one `(γ, γ')` point as stored in `fits.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEntry {
    pub gamma: f64,
    pub gamma_prime: f64,
    pub mode: Option<FitMode>,
    pub fit: Option<RegressionFit>,
    /// Reason the fit was not produced.
    pub refused: Option<String>,
}

impl FitEntry {
    pub fn from_rows(
        gamma: f64,
        gamma_prime: f64,
        rows: &[SweepRow],
        mode: Option<FitMode>,
    ) -> Self {
        let outcome = match mode {
            None => Err("no scaling law outside the condensed region".to_string()),
            Some(mode) => fit_scaling_law(rows, mode).map_err(|e| e.to_string()),
        };
        let (fit, refused) = match outcome {
            Ok(f) => (Some(f), None),
            Err(msg) => (None, Some(msg)),
        };
        FitEntry { gamma, gamma_prime, mode, fit, refused }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitsReport {
    pub schema_version: u32,
    pub fits: Vec<FitEntry>,
}

impl FitsReport {
    pub fn new(fits: Vec<FitEntry>) -> Self {
        FitsReport { schema_version: SCHEMA_VERSION, fits }
    }
}
