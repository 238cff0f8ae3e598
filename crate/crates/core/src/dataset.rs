//! Training samples, the label-weighted mean input `z`, and the data
//! assumptions (non-degeneracy and pairwise non-parallel inputs).

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

/// `‖z‖` below this is treated as exact cancellation.
pub const DEGENERACY_CUTOFF: f64 = 1e-12;
/// Relative slack on Cauchy–Schwarz for the non-parallel check.
pub const PARALLEL_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_NORM_CONSTANT: f64 = 10.0;

const SYNTH_ATTEMPTS: usize = 100;
const SYNTH_MIN_Z_NORM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<f64>,
    n: usize,
    d: usize,
}

impl Dataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = inputs.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset needs at least one sample".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: labels.len() });
        }
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::InvalidInput("input dimension must be at least 1".into()));
        }
        let mut flat = Vec::with_capacity(n * d);
        for x in &inputs {
            if x.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: x.len() });
            }
            flat.extend_from_slice(x);
        }
        Self::from_flat(flat, labels, d)
    }

    /// Row-major `n × d` inputs.
    pub fn from_flat(inputs: Vec<f64>, labels: Vec<f64>, d: usize) -> Result<Self> {
        let n = labels.len();
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("dataset needs n >= 1 and d >= 1".into()));
        }
        if inputs.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: inputs.len() });
        }
        if inputs.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("dataset contains non-finite values".into()));
        }
        Ok(Dataset { inputs, labels, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.d..(i + 1) * self.d]
    }

    pub fn inputs_flat(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// SHA-256 over the little-endian bytes of `n`, `d`, inputs and labels.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for v in self.inputs.iter().chain(&self.labels) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for i in 0..self.n {
            let row: Vec<String> = self
                .input(i)
                .iter()
                .chain(std::iter::once(&self.labels[i]))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<dataset writer>", e))?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path.as_ref(), &buf)
    }

    /// Parse the headerless `x_1,...,x_d,y` CSV layout. Rows and columns in
    /// error messages are zero-based.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut width: Option<usize> = None;
        for (row, record) in rdr.records().enumerate() {
            let record =
                record.map_err(|e| Error::Parse { row, column: 0, message: e.to_string() })?;
            let cols = record.len();
            match width {
                None if cols < 2 => {
                    return Err(Error::Parse {
                        row,
                        column: cols,
                        message: "need at least one input coordinate and a label".into(),
                    })
                }
                None => width = Some(cols),
                Some(w) if w != cols => {
                    return Err(Error::Parse {
                        row,
                        column: cols.min(w),
                        message: format!("ragged row: expected {w} fields, found {cols}"),
                    })
                }
                Some(_) => {}
            }
            for (column, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    row,
                    column,
                    message: format!("not a number: `{field}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse { row, column, message: "non-finite value".into() });
                }
                if column + 1 == cols {
                    labels.push(v);
                } else {
                    inputs.push(v);
                }
            }
        }
        let width = width.ok_or_else(|| Error::Parse {
            row: 0,
            column: 0,
            message: "empty dataset file".into(),
        })?;
        Dataset::from_flat(inputs, labels, width - 1)
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondensationDirection {
    pub z: Vec<f64>,
    pub z_norm: f64,
    pub z_hat: Vec<f64>,
}

/// `z = (1/n) Σ y_i x_i` with its norm and unit vector.
pub fn compute_direction(dataset: &Dataset) -> Result<CondensationDirection> {
    let n = dataset.n() as f64;
    let mut z = vec![0.0; dataset.d()];
    for i in 0..dataset.n() {
        let y = dataset.label(i);
        for (zj, xj) in z.iter_mut().zip(dataset.input(i)) {
            *zj += y * xj;
        }
    }
    z.iter_mut().for_each(|v| *v /= n);
    let z_norm = norm(&z);
    if !(z_norm >= DEGENERACY_CUTOFF) {
        return Err(Error::DegenerateData { norm: z_norm });
    }
    let z_hat = z.iter().map(|v| v / z_norm).collect();
    Ok(CondensationDirection { z, z_norm, z_hat })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub nondegenerate_ok: bool,
    pub nonparallel_ok: bool,
    pub norm_bound_c: f64,
    pub violations: Vec<String>,
}

/// Check non-degeneracy (`1/c ≤ ‖x_i‖`, `|y_i| ≤ c`, `1/c ≤ ‖z‖ ≤ c`) and
/// pairwise non-parallel inputs. Never fails; findings go into the report.
pub fn validate(dataset: &Dataset, c: f64) -> AssumptionReport {
    let mut norm_findings = Vec::new();
    for i in 0..dataset.n() {
        let xn = norm(dataset.input(i));
        if xn < 1.0 / c {
            norm_findings.push(format!("|x_{i}| = {xn} < 1/c = {}", 1.0 / c));
        }
        let y = dataset.label(i);
        if y.abs() > c {
            norm_findings.push(format!("|y_{i}| = {} > c = {c}", y.abs()));
        }
    }

    let mut z_findings = Vec::new();
    match compute_direction(dataset) {
        Ok(dir) => {
            if dir.z_norm < 1.0 / c || dir.z_norm > c {
                z_findings.push(format!(
                    "|z| = {} outside [1/c, c] = [{}, {c}]",
                    dir.z_norm,
                    1.0 / c
                ));
            }
        }
        Err(_) => z_findings.push("sum of y_i x_i vanishes (degenerate data)".to_string()),
    }

    let mut parallel_findings = Vec::new();
    for i in 0..dataset.n() {
        let xi = dataset.input(i);
        let ni = norm(xi);
        for j in (i + 1)..dataset.n() {
            let xj = dataset.input(j);
            let bound = (1.0 - PARALLEL_TOLERANCE) * ni * norm(xj);
            if !(dot(xi, xj).abs() < bound) {
                parallel_findings.push(format!("x_{i} and x_{j} are parallel"));
            }
        }
    }

    let nondegenerate_ok = norm_findings.is_empty() && z_findings.is_empty();
    let nonparallel_ok = norm_findings.is_empty() && parallel_findings.is_empty();
    let mut violations = norm_findings;
    violations.extend(z_findings);
    violations.extend(parallel_findings);
    AssumptionReport { nondegenerate_ok, nonparallel_ok, norm_bound_c: c, violations }
}

/// Random dataset: directions uniform on the sphere with norms uniform in
/// `[0.5, 1.5]`, labels uniform in `[-label_scale, label_scale]`. Labels are
/// redrawn until `‖z‖ ≥ 0.1`.
pub fn synth_dataset(n: usize, d: usize, seed: u64, label_scale: f64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput("synth_dataset needs n >= 1 and d >= 1".into()));
    }
    if !(label_scale > 0.0) {
        return Err(Error::InvalidInput("label_scale must be positive".into()));
    }
    let mut rng = Pcg64::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n * d);
    for _ in 0..n {
        let dir: Vec<f64> = loop {
            let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let gn = norm(&g);
            if gn > 1e-8 {
                break g.into_iter().map(|v| v / gn).collect();
            }
        };
        let radius = rng.gen_range(0.5..=1.5);
        inputs.extend(dir.into_iter().map(|v| v * radius));
    }
    for _ in 0..SYNTH_ATTEMPTS {
        let labels: Vec<f64> = (0..n).map(|_| rng.gen_range(-label_scale..=label_scale)).collect();
        let ds = Dataset::from_flat(inputs.clone(), labels, d)?;
        if let Ok(dir) = compute_direction(&ds) {
            if dir.z_norm >= SYNTH_MIN_Z_NORM {
                return Ok(ds);
            }
        }
    }
    Err(Error::SynthesisFailed { attempts: SYNTH_ATTEMPTS })
}
