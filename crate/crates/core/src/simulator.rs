//! Fixed-step closed-loop integration.
//!
//! The plant state `X`, the sign integrator `Pi` and the running integral of
//! `e_n` are advanced together with classical RK4, the control input being
//! re-evaluated from each stage state. `Pi' = C Sgn(e_n)` is discontinuous and
//! is integrated as-is; local accuracy degrades in steps where a component of
//! `e_n` changes sign.

use std::sync::Arc;

use nalgebra::DVector;

use crate::cascade::{cascade_coefficients, compute_errors, filtered_error, last_error_rate, CascadeCoefficients};
use crate::controller::{control_input, controller_state_derivative, ControllerState, GainSet};
use crate::error::{Error, Result};
use crate::plants::PlantModel;
use crate::reference::ReferenceTrajectory;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_BENCHMARK_HORIZON: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    /// Stacked `[x, x', ..., x^(n-1)]`.
    pub x: DVector<f64>,
    pub ctrl: ControllerState,
    pub t: f64,
}

/// One logged instant. `r` and `accel` use the true plant and are for
/// analysis only; the control law never reads them.
#[derive(Debug, Clone, PartialEq)]
pub struct LogSample {
    pub t: f64,
    pub x: DVector<f64>,
    /// Reference derivatives of order `0..=n`.
    pub reference: Vec<DVector<f64>>,
    /// `e_1, ..., e_n`.
    pub errors: Vec<DVector<f64>>,
    pub r: DVector<f64>,
    pub tau: DVector<f64>,
    pub pi: DVector<f64>,
    pub int_en: DVector<f64>,
    /// `x^(n) = h(X) + g(X) tau`.
    pub accel: DVector<f64>,
}

impl LogSample {
    pub fn e1(&self) -> &DVector<f64> {
        &self.errors[0]
    }

    pub fn en(&self) -> &DVector<f64> {
        self.errors.last().expect("cascade has at least one error")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub m: usize,
    pub n: usize,
    /// Spacing of logged samples (`decimation * step`).
    pub dt: f64,
    pub samples: Vec<LogSample>,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Channel `i` of `e_n` over the log.
    pub fn en_series(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.en()[i]).collect()
    }
}

/// Complete description of one closed-loop run starting at `t = 0`.
#[derive(Clone)]
pub struct Scenario {
    pub plant: Arc<dyn PlantModel>,
    pub reference: Arc<dyn ReferenceTrajectory>,
    pub gains: GainSet,
    pub initial_state: DVector<f64>,
    pub horizon: f64,
    pub step: f64,
    pub decimation: usize,
}

/// Pointwise closed-loop quantities at one state.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reference: Vec<DVector<f64>>,
    pub errors: Vec<DVector<f64>>,
    pub tau: DVector<f64>,
    pub accel: DVector<f64>,
}

/// Borrowed plant, reference and gains wired together.
pub struct ClosedLoop<'a> {
    pub plant: &'a dyn PlantModel,
    pub reference: &'a dyn ReferenceTrajectory,
    pub gains: &'a GainSet,
    pub coeffs: CascadeCoefficients,
}

fn split_state(x: &DVector<f64>, m: usize, n: usize) -> Vec<DVector<f64>> {
    (0..n).map(|k| x.rows(k * m, m).into_owned()).collect()
}

impl<'a> ClosedLoop<'a> {
    pub fn new(plant: &'a dyn PlantModel, reference: &'a dyn ReferenceTrajectory, gains: &'a GainSet) -> Result<Self> {
        let m = plant.inputs();
        let n = plant.order();
        if gains.dim() != m {
            return Err(Error::dims("gain set", m, gains.dim()));
        }
        if reference.dim() != m {
            return Err(Error::dims("reference", m, reference.dim()));
        }
        if reference.max_order() < n {
            return Err(Error::invalid(
                "reference",
                format!(
                    "needs derivatives through order {n}, provides {}",
                    reference.max_order()
                ),
            ));
        }
        if gains.d != plant.sign_matrix() {
            return Err(Error::invalid("D", "controller sign matrix differs from the plant's"));
        }
        Ok(Self {
            plant,
            reference,
            gains,
            coeffs: cascade_coefficients(n)?,
        })
    }

    pub fn m(&self) -> usize {
        self.plant.inputs()
    }

    pub fn n(&self) -> usize {
        self.plant.order()
    }

    /// Error cascade at `(t, X)`; reference derivatives through order `n`.
    pub fn errors_at(&self, t: f64, x: &DVector<f64>) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        let n = self.n();
        if x.len() != self.m() * n {
            return Err(Error::dims("state", self.m() * n, x.len()));
        }
        let xr = self.reference.derivatives(t, n);
        let errors = compute_errors(&split_state(x, self.m(), n), &xr, &self.coeffs)?;
        Ok((xr, errors))
    }

    pub fn evaluate(&self, t: f64, x: &DVector<f64>, ctrl: &ControllerState) -> Result<Evaluation> {
        let (reference, errors) = self.errors_at(t, x)?;
        let tau = control_input(errors.last().unwrap(), ctrl, self.gains)?;
        let accel = self.plant.highest_derivative(x, &tau);
        Ok(Evaluation {
            reference,
            errors,
            tau,
            accel,
        })
    }

    /// `dy/dt` for the packed vector `[X, Pi, int e_n]`.
    fn packed_rate(&self, t: f64, y: &DVector<f64>, en0: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.m();
        let len = m * self.n();
        let x = y.rows(0, len).into_owned();
        let ctrl = ControllerState::from_parts(
            y.rows(len, m).into_owned(),
            y.rows(len + m, m).into_owned(),
            en0.clone(),
        );
        let ev = self.evaluate(t, &x, &ctrl)?;
        let (pi_dot, int_dot) = controller_state_derivative(ev.errors.last().unwrap(), self.gains);
        let mut dy = DVector::zeros(y.len());
        dy.rows_mut(0, len - m).copy_from(&x.rows(m, len - m));
        dy.rows_mut(len - m, m).copy_from(&ev.accel);
        dy.rows_mut(len, m).copy_from(&pi_dot);
        dy.rows_mut(len + m, m).copy_from(&int_dot);
        Ok(dy)
    }

    pub fn step(&self, state: &ClosedLoopState, dt: f64) -> Result<ClosedLoopState> {
        if !(dt > 0.0) {
            return Err(Error::invalid("step", format!("must be positive, got {dt}")));
        }
        self.plant.check_input_gain(&state.x)?;
        let m = self.m();
        let len = m * self.n();
        let mut y = DVector::zeros(len + 2 * m);
        y.rows_mut(0, len).copy_from(&state.x);
        y.rows_mut(len, m).copy_from(&state.ctrl.pi);
        y.rows_mut(len + m, m).copy_from(&state.ctrl.int_en);
        let en0 = state.ctrl.en0();
        let t = state.t;

        let k1 = self.packed_rate(t, &y, en0)?;
        let k2 = self.packed_rate(t + 0.5 * dt, &(&y + &k1 * (0.5 * dt)), en0)?;
        let k3 = self.packed_rate(t + 0.5 * dt, &(&y + &k2 * (0.5 * dt)), en0)?;
        let k4 = self.packed_rate(t + dt, &(&y + &k3 * dt), en0)?;
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { t: t + dt });
        }
        Ok(ClosedLoopState {
            x: next.rows(0, len).into_owned(),
            ctrl: ControllerState::from_parts(
                next.rows(len, m).into_owned(),
                next.rows(len + m, m).into_owned(),
                en0.clone(),
            ),
            t: t + dt,
        })
    }

    /// Initial closed-loop state: `Pi = 0`, `int e_n = 0`, `e_n(0)` captured.
    pub fn initial_state(&self, x0: DVector<f64>) -> Result<ClosedLoopState> {
        let (_, errors) = self.errors_at(0.0, &x0)?;
        Ok(ClosedLoopState {
            x: x0,
            ctrl: ControllerState::new(errors.last().unwrap().clone()),
            t: 0.0,
        })
    }

    pub fn sample(&self, state: &ClosedLoopState) -> Result<LogSample> {
        let ev = self.evaluate(state.t, &state.x, &state.ctrl)?;
        let n = self.n();
        let mut e1_derivs: Vec<DVector<f64>> = ev
            .reference
            .iter()
            .zip(split_state(&state.x, self.m(), n))
            .map(|(xr, x)| xr - x)
            .collect();
        e1_derivs.push(&ev.reference[n] - &ev.accel);
        let en_dot = last_error_rate(&e1_derivs, &self.coeffs)?;
        let r = filtered_error(ev.errors.last().unwrap(), &en_dot, &self.gains.alpha)?;
        Ok(LogSample {
            t: state.t,
            x: state.x.clone(),
            reference: ev.reference,
            errors: ev.errors,
            r,
            tau: ev.tau,
            pi: state.ctrl.pi.clone(),
            int_en: state.ctrl.int_en.clone(),
            accel: ev.accel,
        })
    }
}

/// Single RK4 step of the closed loop.
pub fn step(
    state: &ClosedLoopState,
    plant: &dyn PlantModel,
    reference: &dyn ReferenceTrajectory,
    gains: &GainSet,
    dt: f64,
) -> Result<ClosedLoopState> {
    ClosedLoop::new(plant, reference, gains)?.step(state, dt)
}

fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid("step", format!("must be positive, got {dt}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(
            "horizon",
            format!("must be non-negative, got {horizon}"),
        ));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::invalid(
            "horizon",
            format!("{horizon} is not an integer multiple of the step {dt}"),
        ));
    }
    Ok(steps as usize)
}

pub fn run_scenario(scenario: &Scenario) -> Result<TrajectoryLog> {
    let steps = step_count(scenario.horizon, scenario.step)?;
    if scenario.decimation == 0 {
        return Err(Error::invalid("decimation", "must be at least 1"));
    }
    let plant = scenario.plant.as_ref();
    let cl = ClosedLoop::new(plant, scenario.reference.as_ref(), &scenario.gains)?;
    if scenario.initial_state.len() != plant.state_len() {
        return Err(Error::dims(
            "initial state",
            plant.state_len(),
            scenario.initial_state.len(),
        ));
    }

    let dt = scenario.step;
    let mut state = cl.initial_state(scenario.initial_state.clone())?;
    let mut samples = Vec::with_capacity(steps / scenario.decimation + 1);
    samples.push(cl.sample(&state)?);
    for k in 0..steps {
        let next = cl.step(&state, dt).map_err(|e| Error::AtTime {
            t: state.t,
            source: Box::new(e),
        })?;
        // uniform grid, no accumulated drift in t
        state = ClosedLoopState {
            t: (k + 1) as f64 * dt,
            ..next
        };
        if (k + 1) % scenario.decimation == 0 {
            samples.push(cl.sample(&state).map_err(|e| Error::AtTime {
                t: state.t,
                source: Box::new(e),
            })?);
        }
    }
    Ok(TrajectoryLog {
        m: cl.m(),
        n: cl.n(),
        dt: dt * scenario.decimation as f64,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::{scalar_toy_plant, two_link_as_plant};
    use crate::reference::{benchmark_reference, Constant, Riccati};
    use nalgebra::dvector;

    fn toy_gains() -> GainSet {
        GainSet::new(dvector![2.0], 5.0, dvector![], dvector![1.0], dvector![1.0]).unwrap()
    }

    fn toy_scenario(horizon: f64) -> Scenario {
        Scenario {
            plant: Arc::new(scalar_toy_plant()),
            reference: Arc::new(Constant(dvector![0.5])),
            gains: toy_gains(),
            initial_state: dvector![0.0],
            horizon,
            step: 1e-3,
            decimation: 10,
        }
    }

    #[test]
    fn zero_horizon_logs_initial_sample() {
        let log = run_scenario(&toy_scenario(0.0)).unwrap();
        assert_eq!(log.samples.len(), 1);
        let s = &log.samples[0];
        assert_eq!(s.t, 0.0);
        assert_eq!(s.tau, dvector![0.0]);
        assert_eq!(s.pi, dvector![0.0]);
    }

    #[test]
    fn invalid_steps_rejected() {
        let mut sc = toy_scenario(1.0);
        sc.step = 0.0;
        assert!(run_scenario(&sc).is_err());
        let mut sc = toy_scenario(-1.0);
        sc.step = 1e-3;
        assert!(run_scenario(&sc).is_err());
        let mut sc = toy_scenario(1.0);
        sc.decimation = 0;
        assert!(run_scenario(&sc).is_err());
    }

    #[test]
    fn runs_are_bit_identical() {
        let a = run_scenario(&toy_scenario(2.0)).unwrap();
        let b = run_scenario(&toy_scenario(2.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.samples.len(), 201);
    }

    #[test]
    fn grid_is_uniform() {
        let log = run_scenario(&toy_scenario(1.0)).unwrap();
        for (k, s) in log.samples.iter().enumerate() {
            assert_eq!(s.t, k as f64 * 10.0 * 1e-3);
        }
        assert!((log.dt - 0.01).abs() < 1e-15);
    }

    #[test]
    fn toy_set_point_converges() {
        let log = run_scenario(&toy_scenario(10.0)).unwrap();
        let last = log.samples.last().unwrap();
        assert!(last.e1()[0].abs() < 1e-3, "e1 = {}", last.e1()[0]);
    }

    #[test]
    fn logged_errors_recompute_exactly() {
        let sc = toy_scenario(1.0);
        let log = run_scenario(&sc).unwrap();
        let cl = ClosedLoop::new(sc.plant.as_ref(), sc.reference.as_ref(), &sc.gains).unwrap();
        for s in &log.samples {
            let (_, e) = cl.errors_at(s.t, &s.x).unwrap();
            assert_eq!(e, s.errors);
        }
    }

    fn matched_start_error(c: f64, dt: f64) -> f64 {
        let x0 = 0.4;
        let sc = Scenario {
            plant: Arc::new(scalar_toy_plant()),
            reference: Arc::new(Riccati { x0 }),
            gains: GainSet::new(dvector![2.0], 5.0, dvector![], dvector![c], dvector![1.0]).unwrap(),
            initial_state: dvector![x0],
            horizon: 1.0,
            step: dt,
            decimation: 1,
        };
        let log = run_scenario(&sc).unwrap();
        log.samples.iter().map(|s| s.e1()[0].abs()).fold(0.0, f64::max)
    }

    #[test]
    fn matched_start_on_exact_solution_stays_on_it() {
        // x_r solves x' = x^2 with tau = 0. With a negligible sign gain the
        // error is pure RK4 truncation and shrinks ~16x per halving.
        let coarse = matched_start_error(1e-9, 0.02);
        let fine = matched_start_error(1e-9, 0.01);
        assert!(coarse < 1e-6, "{coarse}");
        assert!(coarse / fine > 12.0, "ratio {}", coarse / fine);
        // A real sign gain reacts to round-off sized errors; the resulting
        // chatter is second order in the step.
        let coarse = matched_start_error(1.0, 0.02);
        let fine = matched_start_error(1.0, 0.01);
        assert!(coarse < 2e-4, "{coarse}");
        assert!(coarse / fine > 3.5, "ratio {}", coarse / fine);
    }

    #[test]
    fn mismatched_sign_matrix_rejected() {
        let plant = two_link_as_plant();
        let reference = benchmark_reference();
        let g = GainSet::new(
            dvector![1.0, 5.0],
            124.0,
            dvector![50.0],
            dvector![5.0, 5.0],
            dvector![1.0, -1.0],
        )
        .unwrap();
        assert!(ClosedLoop::new(&plant, &reference, &g).is_err());
    }

    #[test]
    fn non_finite_state_is_reported() {
        // finite-time blow-up of x' = x^2 at t = 1 / x0
        let sc = Scenario {
            plant: Arc::new(scalar_toy_plant()),
            reference: Arc::new(Constant(dvector![0.0])),
            gains: GainSet::new(dvector![1.0], 1e-6, dvector![], dvector![1e-6], dvector![1.0]).unwrap(),
            initial_state: dvector![50.0],
            horizon: 1.0,
            step: 1e-2,
            decimation: 1,
        };
        let err = run_scenario(&sc).unwrap_err();
        assert!(matches!(err, Error::AtTime { .. }));
        assert!(matches!(err.root(), Error::NonFiniteState { .. }));
    }
}
