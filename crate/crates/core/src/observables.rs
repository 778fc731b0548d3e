//! Fidelity and diabatic-population series measured along a trajectory.

use serde::{Deserialize, Serialize};

use crate::engine::Trajectory;
use crate::error::{QdError, Result};
use crate::hamiltonian::ControlSample;
use crate::protocols::ControlSchedule;

/// Tolerance on rounding excursions outside `[0, 1]` before clamping.
const RANGE_TOL: f64 = 1e-12;

/// Sign applied to Gamma in the closed-form diabatic population. `|0>` is the
/// lower diabatic level at `tau = 0` (`Gamma = -2`), so the population of the
/// initially empty level `|1>` is the closed form evaluated at `-Gamma`.
const PDIAB_GAMMA_SIGN: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    AdiabaticFidelity,
    DiabaticProbability,
}

impl ObservableKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObservableKind::AdiabaticFidelity => "adiabatic_fidelity",
            ObservableKind::DiabaticProbability => "diabatic_probability",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSeries {
    pub taus: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: ObservableKind,
}

fn clamp_unit(v: f64) -> Result<f64> {
    if !(-RANGE_TOL..=1.0 + RANGE_TOL).contains(&v) {
        return Err(QdError::NonFinite(format!("probability {v} outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

fn check_matches(traj: &Trajectory, schedule: &ControlSchedule) -> Result<()> {
    if traj.schedule_label != schedule.label() {
        return Err(QdError::ScheduleMismatch(format!(
            "trajectory of `{}` given schedule `{}`",
            traj.schedule_label,
            schedule.label()
        )));
    }
    if traj.duration != schedule.duration() {
        return Err(QdError::ScheduleMismatch(format!(
            "durations differ: {} vs {}",
            traj.duration,
            schedule.duration()
        )));
    }
    if let Some(s) = traj.samples.iter().find(|s| s.control != schedule.control(s.tau)) {
        return Err(QdError::ScheduleMismatch(format!("controls differ at tau = {}", s.tau)));
    }
    Ok(())
}

/// `F(tau) = |<psi_ref(tau)|psi(tau)>|^2`, where `psi_ref` is the state the
/// schedule is designed to follow (the instantaneous ground state, or for
/// superadiabatic schedules the base ground state in the protocol frame).
pub fn fidelity_series(traj: &Trajectory, schedule: &ControlSchedule) -> Result<ObservableSeries> {
    check_matches(traj, schedule)?;
    let mut values = Vec::with_capacity(traj.samples.len());
    for s in &traj.samples {
        let reference = schedule.reference_state(s.tau)?;
        values.push(clamp_unit(reference.inner(&s.state).norm_sqr())?);
    }
    Ok(ObservableSeries {
        taus: traj.taus().collect(),
        values,
        kind: ObservableKind::AdiabaticFidelity,
    })
}

/// Population of the diabatic state `|1>`.
pub fn diabatic_probability_series(traj: &Trajectory) -> Result<ObservableSeries> {
    let values = traj
        .samples
        .iter()
        .map(|s| clamp_unit(s.state.c1.norm_sqr()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ObservableSeries {
        taus: traj.taus().collect(),
        values,
        kind: ObservableKind::DiabaticProbability,
    })
}

/// Closed-form `|1>` population of the ground state,
/// `(omega^2 / 2) / (G^2 + omega^2 + G sqrt(G^2 + omega^2))` with
/// `G = -Gamma`.
///
/// Evaluated through the equivalent `(1 - G / R) / 2`, which avoids the
/// cancellation in the denominator when `G < 0` and `omega -> 0`.
pub fn analytic_pdiab(s: ControlSample) -> Result<f64> {
    s.validate()?;
    let r = s.radius();
    if r == 0.0 {
        return Err(QdError::GapClosed { tau: f64::NAN });
    }
    let g = PDIAB_GAMMA_SIGN * s.gamma;
    Ok((0.5 * (1.0 - g / r)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn literal(gamma: f64, omega: f64) -> f64 {
        let r = (gamma * gamma + omega * omega).sqrt();
        0.5 * omega * omega / (gamma * gamma + omega * omega + gamma * r)
    }

    fn pd(g: f64, w: f64) -> f64 {
        analytic_pdiab(ControlSample::new(g, w).unwrap()).unwrap()
    }

    #[test]
    fn anticrossing_is_half() {
        for w in [0.01, 0.5, 7.0] {
            assert!((pd(0.0, w) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn end_point_values_and_sign_convention() {
        let lit = literal(2.0, 0.5);
        assert!((lit - 0.125 / (4.25 + 2.0 * 4.25f64.sqrt())).abs() < 1e-15);
        assert!((lit - 0.01493).abs() < 1e-5);
        assert!((pd(2.0, 0.5) - (1.0 - lit)).abs() < 1e-14);
        assert!((pd(2.0, 0.5) - 0.98507).abs() < 1e-5);
        assert!((pd(-2.0, 0.5) - lit).abs() < 1e-14);
        assert!((pd(-2.0, 0.5) - literal(-PDIAB_GAMMA_SIGN * 2.0, 0.5)).abs() < 1e-14);
    }

    #[test]
    fn agrees_with_eigenvector() {
        for &(g, w) in &[(-2.0, 0.5), (1.3, 0.2), (0.1, 3.0)] {
            let s = ControlSample::new(g, w).unwrap();
            let ground = crate::hamiltonian::adiabatic_eigenstates(s).unwrap().ground;
            assert!((ground.c1.norm_sqr() - pd(g, w)).abs() < 1e-14);
        }
    }

    #[test]
    fn weak_coupling_limit() {
        assert_eq!(pd(1.0, 0.0), 1.0);
        assert!(pd(1.0, 1e-9) > 1.0 - 1e-15);
        assert_eq!(pd(-1.0, 0.0), 0.0);
        assert!(analytic_pdiab(ControlSample { gamma: 0.0, omega: 0.0 }).is_err());
    }

    #[test]
    fn point_symmetry() {
        for i in 0..200 {
            let g = -5.0 + 0.05 * i as f64;
            let w = 0.01 + 0.03 * i as f64;
            assert!((pd(g, w) + pd(-g, w) - 1.0).abs() < 1e-12);
        }
    }
}
