//! Observables along a trajectory: relative distance of the input weights
//! from initialization, the condensation ratio toward `ẑ`, and the time at
//! which that ratio peaks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::io::SCHEMA_VERSION;
use crate::linalg::{dot, norm};
use crate::linear::neuron_energies;

/// Fraction of the peak the last-quarter mean ratio must reach.
pub const SATURATION_TOLERANCE: f64 = 0.02;

/// `‖W_t - W_0‖_F / ‖W_0‖_F` on flattened matrices.
pub fn relative_distance(w_t: &[f64], w_0: &[f64]) -> Result<f64> {
    if w_t.len() != w_0.len() {
        return Err(Error::DimensionMismatch { expected: w_0.len(), found: w_t.len() });
    }
    let base = norm(w_0);
    if base == 0.0 {
        return Err(Error::ZeroInitialNorm);
    }
    let diff: f64 = w_t.iter().zip(w_0).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(diff.sqrt() / base)
}

/// `(Σ_k ⟨w_k, ẑ⟩²)^{1/2} / ‖W‖_F` for row-major `W` with rows of length
/// `z_hat.len()`.
pub fn condensation_ratio(w: &[f64], z_hat: &[f64]) -> Result<f64> {
    let d = z_hat.len();
    if d == 0 || !w.len().is_multiple_of(d) {
        return Err(Error::DimensionMismatch { expected: d, found: w.len() });
    }
    let total = norm(w);
    if total == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let aligned: f64 = w.chunks_exact(d).map(|row| dot(row, z_hat).powi(2)).sum();
    Ok((aligned.sqrt() / total).min(1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    pub loss: Vec<f64>,
    pub rd: Vec<f64>,
    pub ratio: Vec<f64>,
    pub q_max: Vec<f64>,
    pub p_max: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub t_hat: f64,
    pub peak_ratio: f64,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sup_rd(&self) -> f64 {
        self.rd.iter().copied().fold(0.0, f64::max)
    }

    /// Mean ratio over the last quarter of the recorded points.
    pub fn tail_mean_ratio(&self) -> f64 {
        let n = self.ratio.len();
        let k = n.div_ceil(4).max(1).min(n);
        self.ratio[n - k..].iter().sum::<f64>() / k as f64
    }

    /// Whether the ratio has settled near its peak by the end of the record.
    pub fn is_saturated(&self) -> bool {
        if self.is_empty() {
            return false;
        }
        let peak = detect_t_hat(self).peak_ratio;
        self.tail_mean_ratio() >= (1.0 - SATURATION_TOLERANCE) * peak
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "loss", "rd", "ratio", "q_max", "p_max", "schema_version"])?;
        let version = SCHEMA_VERSION.to_string();
        for i in 0..self.len() {
            w.write_record([
                self.times[i].to_string(),
                self.loss[i].to_string(),
                self.rd[i].to_string(),
                self.ratio[i].to_string(),
                self.q_max[i].to_string(),
                self.p_max[i].to_string(),
                version.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<metrics writer>", e))?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(buf)
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        crate::io::check_csv_schema(std::path::Path::new("<metrics>"), text)?;
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut s = MetricSeries::default();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let field = |col: usize| -> Result<f64> {
                record.get(col).and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                    row: row + 1,
                    column: col,
                    message: "expected a number".into(),
                })
            };
            s.times.push(field(0)?);
            s.loss.push(field(1)?);
            s.rd.push(field(2)?);
            s.ratio.push(field(3)?);
            s.q_max.push(field(4)?);
            s.p_max.push(field(5)?);
        }
        Ok(s)
    }
}

/// Earliest time at which the ratio attains its maximum over the record.
pub fn detect_t_hat(series: &MetricSeries) -> Peak {
    let mut best = Peak { t_hat: f64::NAN, peak_ratio: f64::NEG_INFINITY };
    for (t, r) in series.times.iter().zip(&series.ratio) {
        if *r > best.peak_ratio {
            best = Peak { t_hat: *t, peak_ratio: *r };
        }
    }
    best
}

/// Metric series of a trajectory, recomputed from snapshots when present
/// and otherwise taken from the summaries recorded during integration.
pub fn build_series(trajectory: &Trajectory) -> Result<MetricSeries> {
    if !trajectory.snapshots.is_empty() {
        series_from_snapshots(trajectory)
    } else {
        series_from_summaries(trajectory)
    }
}

pub fn series_from_summaries(trajectory: &Trajectory) -> Result<MetricSeries> {
    let n = trajectory.times.len();
    if n == 0 || trajectory.summaries.len() != n {
        return Err(Error::MissingSummaries);
    }
    let s = &trajectory.summaries;
    Ok(MetricSeries {
        times: trajectory.times.clone(),
        loss: s.iter().map(|v| v.loss).collect(),
        rd: s.iter().map(|v| v.rd).collect(),
        ratio: s.iter().map(|v| v.ratio).collect(),
        q_max: s.iter().map(|v| v.q_max).collect(),
        p_max: s.iter().map(|v| v.p_max).collect(),
    })
}

pub fn series_from_snapshots(trajectory: &Trajectory) -> Result<MetricSeries> {
    let n = trajectory.times.len();
    if n == 0 || trajectory.snapshots.len() != n {
        return Err(Error::MissingSummaries);
    }
    let scaling = &trajectory.meta.scaling;
    let z_hat = &trajectory.meta.z_hat;
    let w0 = trajectory.initial.w();
    let mut out = MetricSeries {
        times: trajectory.times.clone(),
        loss: trajectory.loss_series.clone(),
        ..Default::default()
    };
    for p in &trajectory.snapshots {
        let e = neuron_energies(p, scaling);
        out.rd.push(relative_distance(p.w(), w0)?);
        out.ratio.push(condensation_ratio(p.w(), z_hat)?);
        out.q_max.push(e.q_max);
        out.p_max.push(e.p_max);
    }
    Ok(out)
}
