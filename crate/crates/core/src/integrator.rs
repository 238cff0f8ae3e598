//! Fixed-step classical Runge–Kutta integration of the normalized flow.

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::dataset::{compute_direction, CondensationDirection, Dataset};
use crate::error::{Error, Result};
use crate::gram::flow_kernel;
use crate::linalg::{jacobi_eigen, max_abs};
use crate::linear::neuron_energies;
use crate::metrics::{condensation_ratio, relative_distance};
use crate::network::{Flow, NormalizedParams};
use crate::scaling::ScalingConfig;

/// Widest network for which full parameter snapshots are kept.
pub const SNAPSHOT_WIDTH_CAP: usize = 4096;
pub const DEFAULT_BLOWUP_NORM: f64 = 1e8;
pub const MIN_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationSchedule {
    pub t_max: f64,
    pub dt: f64,
    /// Steps between recorded points.
    pub record_every: usize,
    /// Stop once `R_S(t) / R_S(0)` falls below this; 0 disables.
    pub stop_loss_ratio: f64,
    pub blowup_norm: f64,
    /// Keep full parameter snapshots (ignored above [`SNAPSHOT_WIDTH_CAP`]).
    #[serde(default)]
    pub keep_snapshots: bool,
}

impl IntegrationSchedule {
    /// Schedule recording roughly `records` points over the horizon.
    pub fn with_records(t_max: f64, dt: f64, records: usize) -> Self {
        let steps = (t_max / dt).ceil().max(1.0) as usize;
        IntegrationSchedule {
            t_max,
            dt,
            record_every: steps.div_ceil(records.max(1)).max(1),
            stop_loss_ratio: 0.0,
            blowup_norm: DEFAULT_BLOWUP_NORM,
            keep_snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("schedule: {what}")));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("t_max must be positive");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        if !(0.0..1.0).contains(&self.stop_loss_ratio) {
            return bad("stop_loss_ratio must lie in [0, 1)");
        }
        if !(self.blowup_norm > 0.0) {
            return bad("blowup_norm must be positive");
        }
        Ok(())
    }

    /// Number of steps needed to reach `t_max`.
    pub fn total_steps(&self) -> usize {
        // tolerate t_max being an exact multiple of dt up to rounding
        (self.t_max / self.dt - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Horizon,
    LossRatio,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Horizon => "horizon",
            StopReason::LossRatio => "loss_ratio",
        }
    }
}

/// Observables evaluated at one recorded point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub loss: f64,
    pub rd: f64,
    pub ratio: f64,
    pub q_max: f64,
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub scaling: ScalingConfig,
    pub activation: Activation,
    pub dataset_digest: String,
    /// Number of training samples.
    pub samples: usize,
    pub seed: Option<u64>,
    pub z_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub loss_series: Vec<f64>,
    pub summaries: Vec<Summary>,
    /// Empty unless snapshots were requested and the width is under the cap.
    pub snapshots: Vec<NormalizedParams>,
    pub initial: NormalizedParams,
    /// State at the stop point, `steps·dt`.
    pub last: NormalizedParams,
    pub meta: TrajectoryMeta,
    pub schedule: IntegrationSchedule,
    pub stop_reason: StopReason,
    pub steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

/// Stage buffers for RK4 on a flat state.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    stage: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            stage: vec![0.0; len],
        }
    }

    /// Fill the first stage slope at `state`; the slope is reused by the next
    /// [`Rk4::step_from_k1`].
    pub fn first_stage<F>(&mut self, state: &[f64], rhs: &mut F) -> f64
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        rhs(state, &mut self.k1)
    }

    /// Advance `state` by `h`, assuming `k1` already holds the slope at `state`.
    pub fn step_from_k1<F>(&mut self, state: &mut [f64], h: f64, rhs: &mut F)
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        let half = 0.5 * h;
        for ((s, x), k) in self.stage.iter_mut().zip(state.iter()).zip(&self.k1) {
            *s = x + half * k;
        }
        rhs(&self.stage, &mut self.k2);
        for ((s, x), k) in self.stage.iter_mut().zip(state.iter()).zip(&self.k2) {
            *s = x + half * k;
        }
        rhs(&self.stage, &mut self.k3);
        for ((s, x), k) in self.stage.iter_mut().zip(state.iter()).zip(&self.k3) {
            *s = x + h * k;
        }
        rhs(&self.stage, &mut self.k4);
        let sixth = h / 6.0;
        for (i, x) in state.iter_mut().enumerate() {
            *x += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
        }
    }

    pub fn step<F>(&mut self, state: &mut [f64], h: f64, rhs: &mut F)
    where
        F: FnMut(&[f64], &mut [f64]) -> f64,
    {
        self.first_stage(state, rhs);
        self.step_from_k1(state, h, rhs);
    }
}

/// One RK4 step of size `h` for `dy/dt = rhs(y)`.
pub fn step_rk4<F>(state: &[f64], h: f64, mut rhs: F) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut next = state.to_vec();
    let mut wrapped = |y: &[f64], out: &mut [f64]| {
        rhs(y, out);
        0.0
    };
    Rk4::new(state.len()).step(&mut next, h, &mut wrapped);
    next
}

/// Heuristic step `min(1e-2, 0.05/‖z‖, 0.05·√min(ν/ε, ε/ν))`, at least 1e-5.
pub fn suggest_step(scaling: &ScalingConfig, direction: &CondensationDirection) -> f64 {
    let ratio = scaling.nu / scaling.eps;
    let balance = ratio.min(1.0 / ratio).sqrt();
    1e-2f64.min(0.05 / direction.z_norm).min(0.05 * balance).max(MIN_STEP)
}

/// Step keeping `h·λ_max(Θ)/n ≤ 1` for the tangent kernel `Θ` of the flow
/// at `params`, well inside the RK4 stability interval.
pub fn stability_step(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<f64> {
    let kernel = flow_kernel(params, scaling, dataset, act)?;
    let eig = jacobi_eigen(&kernel, 1e-10)?;
    let rate = eig.values.last().copied().unwrap_or(0.0) / dataset.n() as f64;
    Ok(if rate > 0.0 { 1.0 / rate } else { f64::INFINITY })
}

/// [`suggest_step`] further limited by [`stability_step`].
pub fn choose_step(
    params: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    act: Activation,
) -> Result<f64> {
    let direction = compute_direction(dataset)?;
    let stable = stability_step(params, scaling, dataset, act)?;
    Ok(suggest_step(scaling, &direction).min(stable).max(MIN_STEP))
}

struct Recorder<'a> {
    w0: &'a [f64],
    z_hat: &'a [f64],
    scaling: &'a ScalingConfig,
}

impl Recorder<'_> {
    fn summary(&self, params: &NormalizedParams, loss: f64) -> Result<Summary> {
        let energies = neuron_energies(params, self.scaling);
        Ok(Summary {
            loss,
            rd: relative_distance(params.w(), self.w0)?,
            ratio: condensation_ratio(params.w(), self.z_hat)?,
            q_max: energies.q_max,
            p_max: energies.p_max,
        })
    }
}

/// Integrate the flow from `params0` under `schedule`.
///
/// Points are recorded every `record_every` steps at times
/// `k·record_every·dt`; the run stops at `t_max` or once the loss ratio
/// drops below `stop_loss_ratio`, checked at recorded points.
pub fn integrate(
    params0: &NormalizedParams,
    scaling: &ScalingConfig,
    dataset: &Dataset,
    schedule: &IntegrationSchedule,
    act: Activation,
) -> Result<Trajectory> {
    schedule.validate()?;
    if params0.d() != dataset.d() {
        return Err(Error::DimensionMismatch { expected: params0.d(), found: dataset.d() });
    }
    let direction = compute_direction(dataset)?;
    let (m, d) = (params0.m(), params0.d());
    let keep = schedule.keep_snapshots && m <= SNAPSHOT_WIDTH_CAP;
    let recorder = Recorder { w0: params0.w(), z_hat: &direction.z_hat, scaling };

    let mut flow = Flow::new(scaling, act, dataset, m);
    let mut rhs = |y: &[f64], out: &mut [f64]| flow.eval(y, out);
    let mut rk = Rk4::new(params0.state().len());
    let mut current = params0.clone();

    let total = schedule.total_steps();
    let dt = schedule.dt;
    let mut times = Vec::new();
    let mut loss_series = Vec::new();
    let mut summaries = Vec::new();
    let mut snapshots = Vec::new();
    let mut stop_reason = StopReason::Horizon;
    let mut initial_loss = f64::NAN;
    let mut step = 0;

    loop {
        let loss = rk.first_stage(current.state(), &mut rhs);
        if step % schedule.record_every == 0 {
            let t = step as f64 * dt;
            if !loss.is_finite() {
                return Err(Error::Blowup { t });
            }
            if step == 0 {
                initial_loss = loss;
            }
            times.push(t);
            loss_series.push(loss);
            summaries.push(recorder.summary(&current, loss)?);
            if keep {
                snapshots.push(current.clone());
            }
            if step > 0 && loss < schedule.stop_loss_ratio * initial_loss {
                stop_reason = StopReason::LossRatio;
                break;
            }
        }
        if step == total {
            break;
        }
        rk.step_from_k1(current.state_mut(), dt, &mut rhs);
        step += 1;
        let size = max_abs(current.state());
        if !(size <= schedule.blowup_norm) {
            return Err(Error::Blowup { t: step as f64 * dt });
        }
    }
    debug_assert_eq!(current.state().len(), m * (d + 1));

    Ok(Trajectory {
        times,
        loss_series,
        summaries,
        snapshots,
        initial: params0.clone(),
        last: current,
        meta: TrajectoryMeta {
            scaling: scaling.clone(),
            activation: act,
            dataset_digest: dataset.digest(),
            samples: dataset.n(),
            seed: None,
            z_hat: direction.z_hat,
        },
        schedule: schedule.clone(),
        stop_reason,
        steps: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;
    use crate::network::init_params;
    use crate::scaling::from_exponents;

    #[test]
    fn zero_rhs_leaves_state_bitwise() {
        let y = vec![1.25, -3.5, 1e-300];
        assert_eq!(step_rk4(&y, 0.1, |_, out| out.fill(0.0)), y);
    }

    #[test]
    fn scalar_decay_local_error() {
        for h in [0.1, 0.05, 0.2] {
            let y = step_rk4(&[1.0], h, |y, out| out[0] = -y[0]);
            assert!((y[0] - (-h).exp()).abs() <= h.powi(5));
        }
    }

    #[test]
    fn step_doubling_ratio() {
        // y' = -y², exact y = 1/(1+t)
        let f = |y: &[f64], out: &mut [f64]| out[0] = -y[0] * y[0];
        let h = 0.05;
        let exact = 1.0 / (1.0 + h);
        let one = step_rk4(&[1.0], h, f)[0];
        let two = step_rk4(&step_rk4(&[1.0], h / 2.0, f), h / 2.0, f)[0];
        let ratio = (one - exact).abs() / (two - exact).abs();
        // one step has error ~C h^5, two half steps ~2 C (h/2)^5
        assert!((13.0..19.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn suggested_step_examples() {
        let s = from_exponents(64, 0.5, 0.5).unwrap();
        let dir = |z_norm: f64| CondensationDirection { z: vec![z_norm], z_norm, z_hat: vec![1.0] };
        assert_eq!(suggest_step(&s, &dir(0.7)), 1e-2);
        assert_eq!(suggest_step(&s, &dir(100.0)), 5e-4);
        let lopsided = from_exponents(1 << 20, 0.0, 1.0).unwrap();
        assert_eq!(suggest_step(&lopsided, &dir(0.7)), 0.05 * (2f64).powi(-10));
    }

    #[test]
    fn schedule_validation() {
        let mut s = IntegrationSchedule::with_records(1.0, 0.1, 10);
        assert!(s.validate().is_ok());
        s.stop_loss_ratio = 1.0;
        assert!(s.validate().is_err());
        s.stop_loss_ratio = 0.0;
        s.dt = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn recorded_times_are_exact_multiples() {
        let ds = synth_dataset(4, 2, 1, 1.0).unwrap();
        let s = from_exponents(8, 0.5, 0.5).unwrap();
        let p = init_params(8, 2, 1).unwrap();
        let mut sched = IntegrationSchedule::with_records(1.0, 0.01, 10);
        sched.record_every = 7;
        let traj = integrate(&p, &s, &ds, &sched, Activation::Tanh).unwrap();
        for (k, t) in traj.times.iter().enumerate() {
            assert_eq!(*t, (k * 7) as f64 * 0.01);
        }
        assert_eq!(traj.times.len(), traj.loss_series.len());
        assert_eq!(traj.times.len(), traj.summaries.len());
        assert_eq!(traj.summaries[0].rd, 0.0);
    }

    #[test]
    fn interpolating_start_stays_put() {
        let p = NormalizedParams::new(vec![1.5], vec![0.5, -0.25], 2).unwrap();
        let s = from_exponents(2, 0.5, 0.5).unwrap();
        let x = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ys: Vec<f64> = x
            .iter()
            .map(|xi| crate::network::forward(&p, &s, Activation::Linear, xi).unwrap())
            .collect();
        let ds = Dataset::new(x, ys).unwrap();
        let mut sched = IntegrationSchedule::with_records(1.0, 0.1, 10);
        sched.keep_snapshots = true;
        let traj = integrate(&p, &s, &ds, &sched, Activation::Linear).unwrap();
        assert!(traj.snapshots.iter().all(|q| q == &p));
        assert!(traj.loss_series.iter().all(|l| *l == traj.loss_series[0]));
    }

    #[test]
    fn loss_is_monotone_and_run_deterministic() {
        let ds = synth_dataset(5, 3, 2, 1.0).unwrap();
        let s = from_exponents(32, 0.5, 0.5).unwrap();
        let p = init_params(32, 3, 4).unwrap();
        let dt = choose_step(&p, &s, &ds, Activation::Tanh).unwrap();
        let sched = IntegrationSchedule::with_records(2.0, dt, 50);
        let a = integrate(&p, &s, &ds, &sched, Activation::Tanh).unwrap();
        let b = integrate(&p, &s, &ds, &sched, Activation::Tanh).unwrap();
        assert_eq!(a, b);
        for w in a.loss_series.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn loss_ratio_stop() {
        let ds = synth_dataset(4, 2, 3, 1.0).unwrap();
        let s = from_exponents(64, 0.5, 0.0).unwrap();
        let p = init_params(64, 2, 5).unwrap();
        let dt = choose_step(&p, &s, &ds, Activation::Tanh).unwrap();
        let mut sched = IntegrationSchedule::with_records(200.0, dt, 2000);
        sched.stop_loss_ratio = 1e-3;
        let traj = integrate(&p, &s, &ds, &sched, Activation::Tanh).unwrap();
        assert_eq!(traj.stop_reason, StopReason::LossRatio);
        assert!(*traj.loss_series.last().unwrap() < 1e-3 * traj.loss_series[0]);
    }

    #[test]
    fn blowup_is_reported() {
        let ds = synth_dataset(4, 2, 3, 1.0).unwrap();
        let s = from_exponents(64, 0.5, 0.0).unwrap();
        let p = init_params(64, 2, 5).unwrap();
        let mut sched = IntegrationSchedule::with_records(1.0, 0.01, 10);
        sched.blowup_norm = 1e-3;
        assert!(matches!(
            integrate(&p, &s, &ds, &sched, Activation::Tanh),
            Err(Error::Blowup { .. })
        ));
    }
}
