//! Schrödinger propagation under a [`ControlSchedule`].
//!
//! Each substep applies the exact exponential of a fourth-order Magnus
//! generator built from two Gauss-Legendre samples of the field. For a
//! traceless 2x2 Hamiltonian the generator is `-i v.sigma` and its
//! exponential `cos|v| - i sin|v| v.sigma / |v|` is unitary to rounding, so
//! the norm never drifts. The step size adapts by step doubling.

use num_complex::Complex64 as C64;

use crate::error::{QdError, Result};
use crate::hamiltonian::{adiabatic_eigenstates, ControlSample, StateVector};
use crate::protocols::{ControlSchedule, Kick, KickAxis};

const SQRT3_6: f64 = 0.288_675_134_594_812_9;
const MIN_STEP_TAU: f64 = 1e-13;
/// Step-doubling differences below this are rounding noise.
const ROUNDOFF_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    /// Target global amplitude error over the whole sweep.
    pub rel_tol: f64,
    /// Upper bound on a substep, in rescaled time.
    pub max_step_tau: f64,
    /// Number of uniformly spaced output samples (kick instants are added).
    pub sample_count: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_step_tau: 1e-3,
            sample_count: 201,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(QdError::param("rel_tol", self.rel_tol, "must be > 0"));
        }
        if !(self.max_step_tau > 0.0 && self.max_step_tau <= 1.0) {
            return Err(QdError::param("max_step_tau", self.max_step_tau, "must lie in (0, 1]"));
        }
        if self.sample_count < 2 {
            return Err(QdError::param("sample_count", self.sample_count as f64, "must be >= 2"));
        }
        Ok(())
    }

    /// Same tolerances, recording only the end points.
    pub fn endpoints_only(&self) -> Self {
        Self {
            sample_count: 2,
            ..*self
        }
    }
}

/// Starting state of a propagation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Initial {
    /// Ground state of the followed Hamiltonian at `tau = 0`.
    #[default]
    Ground,
    State(StateVector),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub tau: f64,
    pub state: StateVector,
    pub control: ControlSample,
}

/// Time-ordered samples of one propagation.
///
/// The state at a sample includes every kick strictly before it; the final
/// sample at `tau = 1` also includes the exit kicks.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<TrajectorySample>,
    pub schedule_label: String,
    pub duration: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> StateVector {
        self.samples.last().expect("trajectory has samples").state
    }

    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.tau)
    }
}

/// Exact `exp(-i v.sigma)` applied to `psi`.
#[inline]
fn rotate(v: [f64; 3], psi: &StateVector) -> StateVector {
    let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if theta == 0.0 {
        return *psi;
    }
    let (s, c) = theta.sin_cos();
    let k = s / theta;
    let (nx, ny, nz) = (v[0] * k, v[1] * k, v[2] * k);
    // c I - i (nx sx + ny sy + nz sz)
    let u00 = C64::new(c, -nz);
    let u11 = C64::new(c, nz);
    let u01 = C64::new(-ny, -nx);
    let u10 = C64::new(ny, -nx);
    StateVector::new(u00 * psi.c0 + u01 * psi.c1, u10 * psi.c0 + u11 * psi.c1)
}

/// Applies `exp(-i area sz)`.
pub fn apply_kick(state: &StateVector, kick: &Kick) -> StateVector {
    match kick.axis {
        KickAxis::Z => {
            let phase = C64::from_polar(1.0, -kick.area);
            StateVector::new(state.c0 * phase, state.c1 * phase.conj())
        }
    }
}

/// One Magnus-4 step of length `h` (rescaled time) from `tau`.
#[inline]
fn magnus_step(schedule: &ControlSchedule, tau: f64, h: f64, psi: &StateVector) -> StateVector {
    let dt = h * schedule.duration();
    let a1 = schedule.field(tau + (0.5 - SQRT3_6) * h);
    let a2 = schedule.field(tau + (0.5 + SQRT3_6) * h);
    let cross = [
        a2[1] * a1[2] - a2[2] * a1[1],
        a2[2] * a1[0] - a2[0] * a1[2],
        a2[0] * a1[1] - a2[1] * a1[0],
    ];
    let k = SQRT3_6 * dt * dt;
    let v = [
        0.5 * dt * (a1[0] + a2[0]) + k * cross[0],
        0.5 * dt * (a1[1] + a2[1]) + k * cross[1],
        0.5 * dt * (a1[2] + a2[2]) + k * cross[2],
    ];
    rotate(v, psi)
}

struct Stepper<'a> {
    schedule: &'a ControlSchedule,
    cfg: &'a IntegratorConfig,
    h: f64,
}

impl Stepper<'_> {
    /// Advances `psi` from `from` to `to` with adaptive substeps.
    fn advance(&mut self, psi: StateVector, from: f64, to: f64) -> Result<StateVector> {
        let mut psi = psi;
        let mut tau = from;
        while tau < to {
            let remaining = to - tau;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            let full = magnus_step(self.schedule, tau, h, &psi);
            let mid = magnus_step(self.schedule, tau, 0.5 * h, &psi);
            let two = magnus_step(self.schedule, tau + 0.5 * h, 0.5 * h, &mid);
            let err = full.distance(&two);
            let allowed = (self.cfg.rel_tol * h).max(ROUNDOFF_FLOOR);
            if err <= allowed || h <= MIN_STEP_TAU {
                if !(err <= allowed) && h <= MIN_STEP_TAU {
                    return Err(QdError::StepUnderflow { tau, step: h });
                }
                psi = two.normalized();
                tau = if last { to } else { tau + h };
                let grow = if err == 0.0 {
                    2.0
                } else {
                    (0.9 * (allowed / err).powf(0.25)).clamp(0.2, 2.0)
                };
                if !last || grow < 1.0 {
                    self.h = (h * grow).min(self.cfg.max_step_tau);
                }
            } else {
                let shrink = (0.9 * (allowed / err).powf(0.25)).clamp(0.1, 0.9);
                self.h = (h * shrink).max(MIN_STEP_TAU);
                if !self.h.is_finite() {
                    return Err(QdError::NonFinite(format!("step size near tau = {tau}")));
                }
            }
        }
        Ok(psi)
    }
}

fn output_grid(schedule: &ControlSchedule, n: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    grid.extend(schedule.kicks().iter().map(|k| k.tau));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

fn initial_state(schedule: &ControlSchedule, initial: Initial) -> Result<StateVector> {
    match initial {
        Initial::Ground => schedule.reference_state(0.0),
        Initial::State(s) => {
            s.check_normalized(crate::hamiltonian::INPUT_NORM_TOL)?;
            Ok(s.normalized())
        }
    }
}

/// Propagates `i d|psi>/dt = H(t) |psi>` over `t in [0, T]`.
pub fn evolve(schedule: &ControlSchedule, cfg: &IntegratorConfig, initial: Initial) -> Result<Trajectory> {
    cfg.validate()?;
    let mut psi = initial_state(schedule, initial)?;
    let grid = output_grid(schedule, cfg.sample_count);
    let kicks = schedule.kicks();
    let mut next_kick = 0;
    let mut stepper = Stepper {
        schedule,
        cfg,
        h: cfg.max_step_tau.min(1e-4),
    };
    let mut samples = Vec::with_capacity(grid.len());
    let breaks = schedule.breakpoints();
    let mut prev = 0.0;
    for &tau in &grid {
        if tau > prev {
            for &b in breaks {
                if b > prev && b < tau {
                    psi = stepper.advance(psi, prev, b)?;
                    prev = b;
                }
            }
            psi = stepper.advance(psi, prev, tau)?;
            prev = tau;
        }
        let is_end = tau >= 1.0;
        if is_end {
            while next_kick < kicks.len() {
                psi = apply_kick(&psi, &kicks[next_kick]);
                next_kick += 1;
            }
        }
        samples.push(TrajectorySample {
            tau,
            state: psi,
            control: schedule.control(tau),
        });
        while next_kick < kicks.len() && kicks[next_kick].tau <= tau {
            psi = apply_kick(&psi, &kicks[next_kick]);
            next_kick += 1;
        }
    }
    Ok(Trajectory {
        samples,
        schedule_label: schedule.label().to_string(),
        duration: schedule.duration(),
    })
}

/// Final state only, without storing intermediate samples.
pub fn propagate(schedule: &ControlSchedule, cfg: &IntegratorConfig, initial: Initial) -> Result<StateVector> {
    Ok(evolve(schedule, &cfg.endpoints_only(), initial)?.final_state())
}

/// `|<psi_g(1)|psi(1)>|^2` starting from the ground state, where `psi_g` is
/// the ground state of the followed Hamiltonian.
pub fn final_fidelity(schedule: &ControlSchedule, cfg: &IntegratorConfig) -> Result<f64> {
    let psi = propagate(schedule, cfg, Initial::Ground)?;
    let target = schedule.reference_state(1.0)?;
    Ok(target.inner(&psi).norm_sqr().clamp(0.0, 1.0))
}

/// Ground state of `sample`, exposed for callers building initial states.
pub fn ground_state(sample: ControlSample) -> Result<StateVector> {
    Ok(adiabatic_eigenstates(sample)?.ground)
}
