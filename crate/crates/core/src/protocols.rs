//! Control schedules: the sweep families and their superadiabatic variants.
//!
//! A [`ControlSchedule`] maps rescaled time `tau = t / T` in `[0, 1]` to the
//! pair `(Gamma, omega)`, optionally a third (`sy`) field, plus a list of
//! instantaneous `sz` kicks. All functions are pure so schedules can be shared
//! freely between scan workers.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{QdError, Result};
use crate::hamiltonian::{adiabatic_eigenstates, overlap_fidelity, ControlSample, StateVector, GAMMA0};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Step in tau for numerical derivatives of schedules without analytic rates.
pub const DERIVATIVE_STEP: f64 = 1e-6;

fn scalar(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KickAxis {
    Z,
}

/// Instantaneous rotation `exp(-i area sz)` at rescaled time `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kick {
    pub tau: f64,
    pub axis: KickAxis,
    /// Integral of Gamma over the impulse, in natural time units.
    pub area: f64,
}

impl Kick {
    pub fn z(tau: f64, area: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(QdError::param("kick tau", tau, "must lie in [0, 1]"));
        }
        if !area.is_finite() || area.abs() >= PI {
            return Err(QdError::param("kick area", area, "must satisfy |area| < pi"));
        }
        Ok(Self {
            tau,
            axis: KickAxis::Z,
            area,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    LinearLz,
    PowerLaw,
    LinearPlusSin,
    Tangent,
    RolandCerf,
    RcEta,
    CompositePulse,
    SuperadiabaticLinear,
    SuperadiabaticTangent,
    SuperadiabaticTangentUncorrected,
    Counterdiabatic,
    Custom,
}

impl Family {
    /// Families that sweep Gamma continuously from -2 to +2.
    pub fn is_sweep(self) -> bool {
        !matches!(self, Family::CompositePulse | Family::Custom)
    }

    /// Families with `Gamma(1 - tau) = -Gamma(tau)` and `omega(1 - tau) = omega(tau)`.
    pub fn is_point_symmetric(self) -> bool {
        matches!(
            self,
            Family::LinearLz
                | Family::PowerLaw
                | Family::LinearPlusSin
                | Family::Tangent
                | Family::RolandCerf
                | Family::RcEta
                | Family::SuperadiabaticLinear
                | Family::SuperadiabaticTangent
                | Family::SuperadiabaticTangentUncorrected
        )
    }
}

/// Which variant of the superadiabatic linear detuning to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuperLinearForm {
    /// Detuning derived from the counterdiabatic frame rotation; follows the
    /// ground state exactly.
    #[default]
    Exact,
    /// The closed form with `(tau - 1/2)^2` in the detuning denominator and a
    /// `4 (tau - 1/2)` numerator. Does not follow exactly.
    Simplified,
}

/// The state a schedule is designed to follow: the ground state of
/// `(gamma, omega)` rotated about z by `frame_angle` (zero when absent).
#[derive(Clone)]
pub struct Reference {
    gamma: ScalarFn,
    omega: ScalarFn,
    frame_angle: Option<ScalarFn>,
}

#[derive(Clone)]
pub struct ControlSchedule {
    label: String,
    family: Family,
    duration: f64,
    gamma: ScalarFn,
    omega: ScalarFn,
    gamma_rate: Option<ScalarFn>,
    omega_rate: Option<ScalarFn>,
    transverse: Option<ScalarFn>,
    kicks: Vec<Kick>,
    /// Interior tau values where the controls jump; steps never straddle them.
    breakpoints: Vec<f64>,
    reference: Option<Reference>,
}

impl fmt::Debug for ControlSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlSchedule")
            .field("label", &self.label)
            .field("family", &self.family)
            .field("duration", &self.duration)
            .field("kicks", &self.kicks)
            .field("transverse", &self.transverse.is_some())
            .finish()
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if !v.is_finite() || v <= 0.0 {
        return Err(QdError::param(name, v, "must be finite and > 0"));
    }
    Ok(())
}

impl ControlSchedule {
    /// Schedule from arbitrary `Gamma(tau)` and `omega(tau)` without kicks.
    pub fn from_fns(
        label: impl Into<String>,
        duration: f64,
        gamma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        omega: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::build(label.into(), Family::Custom, duration, scalar(gamma), scalar(omega))
    }

    fn build(label: String, family: Family, duration: f64, gamma: ScalarFn, omega: ScalarFn) -> Result<Self> {
        check_positive("T", duration)?;
        Ok(Self {
            label,
            family,
            duration,
            gamma,
            omega,
            gamma_rate: None,
            omega_rate: None,
            transverse: None,
            kicks: Vec::new(),
            breakpoints: Vec::new(),
            reference: None,
        })
    }

    fn with_rates(mut self, gamma_rate: Option<ScalarFn>, omega_rate: Option<ScalarFn>) -> Self {
        self.gamma_rate = gamma_rate;
        self.omega_rate = omega_rate;
        self
    }

    /// Appends a kick, keeping the list ordered by tau.
    pub fn with_kick(mut self, kick: Kick) -> Self {
        let pos = self.kicks.partition_point(|k| k.tau <= kick.tau);
        self.kicks.insert(pos, kick);
        self
    }

    fn with_reference(mut self, reference: Reference) -> Self {
        self.reference = Some(reference);
        self
    }

    /// The same tau-profile and kicks executed over a different duration.
    pub fn with_duration(&self, duration: f64) -> Result<Self> {
        check_positive("T", duration)?;
        let mut s = self.clone();
        s.duration = duration;
        Ok(s)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn kicks(&self) -> &[Kick] {
        &self.kicks
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn has_transverse(&self) -> bool {
        self.transverse.is_some()
    }

    pub fn gamma(&self, tau: f64) -> f64 {
        (self.gamma)(tau)
    }

    pub fn omega(&self, tau: f64) -> f64 {
        (self.omega)(tau)
    }

    /// Coefficient of `sy`; zero for two-axis schedules.
    pub fn transverse(&self, tau: f64) -> f64 {
        self.transverse.as_ref().map_or(0.0, |g| g(tau))
    }

    pub fn control(&self, tau: f64) -> ControlSample {
        ControlSample {
            gamma: self.gamma(tau),
            omega: self.omega(tau),
        }
    }

    /// Field vector `(x, y, z)` of `H = x sx + y sy + z sz`.
    #[inline]
    pub fn field(&self, tau: f64) -> [f64; 3] {
        [self.omega(tau), self.transverse(tau), self.gamma(tau)]
    }

    /// `dGamma/dtau`, analytic when the family provides it.
    pub fn gamma_rate(&self, tau: f64) -> f64 {
        match &self.gamma_rate {
            Some(r) => r(tau),
            None => central_difference(&self.gamma, tau),
        }
    }

    /// `domega/dtau`, analytic when the family provides it.
    pub fn omega_rate(&self, tau: f64) -> f64 {
        match &self.omega_rate {
            Some(r) => r(tau),
            None => central_difference(&self.omega, tau),
        }
    }

    /// Control values of the followed (base) Hamiltonian.
    pub fn reference_control(&self, tau: f64) -> ControlSample {
        match &self.reference {
            Some(r) => ControlSample {
                gamma: (r.gamma)(tau),
                omega: (r.omega)(tau),
            },
            None => self.control(tau),
        }
    }

    /// The state the protocol is designed to follow at `tau`.
    ///
    /// Frame rotations only act strictly inside `(0, 1)`: the samples at the
    /// end points are taken before the entry kicks and after the exit kicks.
    pub fn reference_state(&self, tau: f64) -> Result<StateVector> {
        let ground = adiabatic_eigenstates(self.reference_control(tau))
            .map_err(|e| with_tau(e, tau))?
            .ground;
        let angle = match &self.reference {
            Some(Reference {
                frame_angle: Some(phi), ..
            }) if tau > 0.0 && tau < 1.0 => phi(tau),
            _ => 0.0,
        };
        if angle == 0.0 {
            return Ok(ground);
        }
        let half = C64::from_polar(1.0, 0.5 * angle);
        Ok(StateVector::new(ground.c0 * half, ground.c1 * half.conj()))
    }

    /// Time-mirrored schedule `tau -> 1 - tau`, kicks mirrored with equal area.
    pub fn mirrored(&self) -> Self {
        let mirror = |f: &ScalarFn| -> ScalarFn {
            let f = Arc::clone(f);
            scalar(move |tau| f(1.0 - tau))
        };
        let mirror_rate = |f: &Option<ScalarFn>| -> Option<ScalarFn> {
            f.as_ref().map(|f| {
                let f = Arc::clone(f);
                scalar(move |tau| -f(1.0 - tau))
            })
        };
        let mut kicks: Vec<Kick> = self.kicks.iter().map(|k| Kick { tau: 1.0 - k.tau, ..*k }).collect();
        kicks.sort_by(|a, b| a.tau.total_cmp(&b.tau));
        ControlSchedule {
            label: format!("{} (mirrored)", self.label),
            family: Family::Custom,
            duration: self.duration,
            gamma: mirror(&self.gamma),
            omega: mirror(&self.omega),
            gamma_rate: mirror_rate(&self.gamma_rate),
            omega_rate: mirror_rate(&self.omega_rate),
            transverse: self.transverse.as_ref().map(mirror),
            kicks,
            breakpoints: self.breakpoints.iter().rev().map(|b| 1.0 - b).collect(),
            reference: self.reference.as_ref().map(|r| Reference {
                gamma: mirror(&r.gamma),
                omega: mirror(&r.omega),
                frame_angle: r.frame_angle.as_ref().map(mirror),
            }),
        }
    }
}

fn with_tau(e: QdError, tau: f64) -> QdError {
    match e {
        QdError::GapClosed { .. } => QdError::GapClosed { tau },
        other => other,
    }
}

/// Central difference in tau, shifted inwards near the interval ends.
fn central_difference(f: &ScalarFn, tau: f64) -> f64 {
    let h = DERIVATIVE_STEP;
    let lo = (tau - h).max(0.0);
    let hi = (tau + h).min(1.0);
    (f(hi) - f(lo)) / (hi - lo)
}

/// `Gamma(tau) = 4 (tau - 1/2)` at constant coupling.
pub fn linear_lz(omega: f64, duration: f64) -> Result<ControlSchedule> {
    check_positive("omega", omega)?;
    Ok(ControlSchedule::build(
        format!("linear-lz(omega={omega}, T={duration})"),
        Family::LinearLz,
        duration,
        scalar(|tau| 4.0 * (tau - 0.5)),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(|_| 4.0)), Some(scalar(|_| 0.0))))
}

/// Power-law sweep `Gamma = sign(x) 2 |2x|^alpha` with `x = tau - 1/2`.
/// Non-integer exponents are allowed; `alpha = 1` is the linear sweep.
pub fn power_law(alpha: f64, omega: f64, duration: f64) -> Result<ControlSchedule> {
    if !alpha.is_finite() || alpha < 1.0 {
        return Err(QdError::param("alpha", alpha, "must be >= 1"));
    }
    check_positive("omega", omega)?;
    let gamma = move |tau: f64| {
        let x = tau - 0.5;
        let mag = 2.0 * (2.0 * x.abs()).powf(alpha);
        if x < 0.0 {
            -mag
        } else {
            mag
        }
    };
    let rate = move |tau: f64| 4.0 * alpha * (2.0 * (tau - 0.5).abs()).powf(alpha - 1.0);
    Ok(ControlSchedule::build(
        format!("power-law(alpha={alpha}, omega={omega}, T={duration})"),
        Family::PowerLaw,
        duration,
        scalar(gamma),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(rate)), Some(scalar(|_| 0.0))))
}

/// Linear sweep plus a sinusoid, `Gamma = 4 [tau + delta sin(2 pi tau)] - 2`.
pub fn linear_plus_sin(delta: f64, omega: f64, duration: f64) -> Result<ControlSchedule> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(QdError::param("delta", delta, "must be >= 0"));
    }
    check_positive("omega", omega)?;
    // written about tau = 1/2 so that the point symmetry is exact
    let gamma = move |tau: f64| {
        let x = tau - 0.5;
        4.0 * (x - delta * (2.0 * PI * x).sin())
    };
    let rate = move |tau: f64| 4.0 * (1.0 - 2.0 * PI * delta * (2.0 * PI * (tau - 0.5)).cos());
    Ok(ControlSchedule::build(
        format!("linear-sin(delta={delta}, omega={omega}, T={duration})"),
        Family::LinearPlusSin,
        duration,
        scalar(gamma),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(rate)), Some(scalar(|_| 0.0))))
}

fn tangent_gamma(omega: f64) -> (impl Fn(f64) -> f64 + Copy, impl Fn(f64) -> f64 + Copy) {
    let a = (GAMMA0 / omega).atan();
    let gamma = move |tau: f64| omega * (2.0 * (tau - 0.5) * a).tan();
    let rate = move |tau: f64| {
        let c = (2.0 * (tau - 0.5) * a).cos();
        2.0 * a * omega / (c * c)
    };
    (gamma, rate)
}

/// Tangent sweep `Gamma = omega tan(2 (tau - 1/2) atan(2 / omega))`.
pub fn tangent(omega: f64, duration: f64) -> Result<ControlSchedule> {
    check_positive("omega", omega)?;
    let (gamma, rate) = tangent_gamma(omega);
    Ok(ControlSchedule::build(
        format!("tangent(omega={omega}, T={duration})"),
        Family::Tangent,
        duration,
        scalar(gamma),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(rate)), Some(scalar(|_| 0.0))))
}

/// Optimal detuning parameter `1 / sqrt(4 + omega^2)` of the locally
/// adiabatic sweep.
pub fn eta_opt(omega: f64) -> f64 {
    1.0 / (4.0 + omega * omega).sqrt()
}

/// Duration of the locally adiabatic sweep holding the instantaneous
/// infidelity at `epsilon^2`.
pub fn roland_cerf_duration(epsilon: f64, omega: f64) -> f64 {
    1.0 / (epsilon * omega * (4.0 + omega * omega).sqrt())
}

/// Locally adiabatic (Roland-Cerf) sweep with its duration fixed by `epsilon`.
pub fn roland_cerf(epsilon: f64, omega: f64) -> Result<ControlSchedule> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(QdError::param("epsilon", epsilon, "must lie in (0, 1)"));
    }
    check_positive("omega", omega)?;
    let t_f = roland_cerf_duration(epsilon, omega);
    let k = epsilon * omega * t_f;
    let gamma = move |tau: f64| {
        let x = tau - 0.5;
        4.0 * epsilon * omega * omega * t_f * x / (1.0 - 16.0 * k * k * x * x).sqrt()
    };
    let rate = move |tau: f64| {
        let x = tau - 0.5;
        4.0 * epsilon * omega * omega * t_f * (1.0 - 16.0 * k * k * x * x).powf(-1.5)
    };
    Ok(ControlSchedule::build(
        format!("roland-cerf(epsilon={epsilon}, omega={omega})"),
        Family::RolandCerf,
        t_f,
        scalar(gamma),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(rate)), Some(scalar(|_| 0.0))))
}

/// Roland-Cerf sweep labelled by `eta = epsilon omega T_F`, run over a free
/// duration. Requires `0 < eta^2 < 1/4`.
pub fn rc_eta(eta: f64, omega: f64, duration: f64) -> Result<ControlSchedule> {
    let eta_sq = eta * eta;
    if !(eta_sq > 0.0 && eta_sq < 0.25) {
        return Err(QdError::param("eta", eta, "requires 0 < eta^2 < 0.25"));
    }
    check_positive("omega", omega)?;
    let s = (1.0 - 4.0 * eta_sq).sqrt();
    let gamma = move |tau: f64| {
        let x = tau - 0.5;
        4.0 * s * x / (1.0 - 16.0 * eta_sq * x * x).sqrt()
    };
    let rate = move |tau: f64| {
        let x = tau - 0.5;
        4.0 * s * (1.0 - 16.0 * eta_sq * x * x).powf(-1.5)
    };
    Ok(ControlSchedule::build(
        format!("rc-eta(eta_sq={eta_sq}, omega={omega}, T={duration})"),
        Family::RcEta,
        duration,
        scalar(gamma),
        scalar(move |_| omega),
    )?
    .with_rates(Some(scalar(rate)), Some(scalar(|_| 0.0))))
}

/// Overlap `|<psi_g(+Gamma0)|psi_g(-Gamma0)>|` of the sweep's end-point
/// ground states at constant coupling.
pub fn endpoint_overlap(omega: f64, gamma0: f64) -> Result<f64> {
    let ini = adiabatic_eigenstates(ControlSample::new(-gamma0, omega)?)?.ground;
    let fin = adiabatic_eigenstates(ControlSample::new(gamma0, omega)?)?.ground;
    Ok(overlap_fidelity(&fin, &ini)?.sqrt())
}

/// Edge-pulse strength of the composite pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePulse {
    /// Delta kicks applied as exact unitaries.
    Ideal,
    /// Rectangular pulses of height `gamma_m` and width `pi / (4 gamma_m)`.
    Finite(f64),
}

/// Time-optimal composite pulse: a `pi/4` z-kick, a resonant Rabi segment at
/// `Gamma = 0`, and a `-pi/4` z-kick.
pub fn composite_pulse(omega: f64, edge: EdgePulse) -> Result<ControlSchedule> {
    check_positive("omega", omega)?;
    let rabi = endpoint_overlap(omega, GAMMA0)?.acos() / omega;
    match edge {
        EdgePulse::Ideal => {
            let gamma = |tau: f64| {
                if tau <= 0.0 {
                    -GAMMA0
                } else if tau >= 1.0 {
                    GAMMA0
                } else {
                    0.0
                }
            };
            Ok(ControlSchedule::build(
                format!("composite-pulse(omega={omega}, ideal)"),
                Family::CompositePulse,
                rabi,
                scalar(gamma),
                scalar(move |_| omega),
            )?
            .with_kick(Kick::z(0.0, FRAC_PI_4)?)
            .with_kick(Kick::z(1.0, -FRAC_PI_4)?))
        }
        EdgePulse::Finite(gamma_m) => {
            check_positive("gamma_m", gamma_m)?;
            let t0 = FRAC_PI_4 / gamma_m;
            let total = 2.0 * t0 + rabi;
            if t0 >= 0.5 * total {
                return Err(QdError::param("gamma_m", gamma_m, "edge pulses exceed T/2"));
            }
            let edge = t0 / total;
            let gamma = move |tau: f64| {
                if tau <= 0.0 {
                    -GAMMA0
                } else if tau >= 1.0 {
                    GAMMA0
                } else if tau <= edge {
                    gamma_m
                } else if tau >= 1.0 - edge {
                    -gamma_m
                } else {
                    0.0
                }
            };
            let mut s = ControlSchedule::build(
                format!("composite-pulse(omega={omega}, gamma_m={gamma_m})"),
                Family::CompositePulse,
                total,
                scalar(gamma),
                scalar(move |_| omega),
            )?;
            s.breakpoints = vec![edge, 1.0 - edge];
            Ok(s)
        }
    }
}

/// Entry and exit kick areas cancelling the frame rotation of a
/// superadiabatic schedule:
/// `area = -/+ 1/2 atan((Gamma omega' - omega Gamma') / (2 omega (Gamma^2 + omega^2)))`
/// with primes denoting time derivatives of the base controls.
pub fn edge_kick_areas(base: &ControlSchedule) -> (f64, f64) {
    let t = base.duration();
    let angle = |tau: f64| {
        let c = base.control(tau);
        let g_dot = base.gamma_rate(tau) / t;
        let w_dot = base.omega_rate(tau) / t;
        ((c.gamma * w_dot - c.omega * g_dot) / (2.0 * c.omega * (c.gamma * c.gamma + c.omega * c.omega))).atan()
    };
    (-0.5 * angle(0.0), 0.5 * angle(1.0))
}

/// Superadiabatic version of the linear sweep.
pub fn superadiabatic_linear(omega: f64, duration: f64, form: SuperLinearForm) -> Result<ControlSchedule> {
    let base = linear_lz(omega, duration)?;
    let t = duration;
    let half_w2 = 0.5 * omega * omega;
    let gamma: ScalarFn = match form {
        SuperLinearForm::Exact => scalar(move |tau: f64| {
            let x = tau - 0.5;
            let d = t * (8.0 * x * x + half_w2);
            4.0 * x - 8.0 * x / (d * d + 1.0)
        }),
        SuperLinearForm::Simplified => scalar(move |tau: f64| {
            let x = tau - 0.5;
            let d = t * (x * x + half_w2);
            4.0 * x - 4.0 * x / (d * d + 1.0)
        }),
    };
    let omega_p = move |tau: f64| {
        let x = tau - 0.5;
        let d = t * (8.0 * x * x + half_w2);
        omega * (1.0 + 1.0 / (d * d)).sqrt()
    };
    let frame = move |tau: f64| {
        let x = tau - 0.5;
        -(1.0 / (t * (8.0 * x * x + half_w2))).atan()
    };
    let (entry, exit) = edge_kick_areas(&base);
    let tag = match form {
        SuperLinearForm::Exact => "",
        SuperLinearForm::Simplified => ", simplified",
    };
    Ok(ControlSchedule::build(
        format!("superadiabatic-linear(omega={omega}, T={duration}{tag})"),
        Family::SuperadiabaticLinear,
        duration,
        gamma,
        scalar(omega_p),
    )?
    .with_kick(Kick::z(0.0, entry)?)
    .with_kick(Kick::z(1.0, exit)?)
    .with_reference(Reference {
        gamma: Arc::clone(&base.gamma),
        omega: Arc::clone(&base.omega),
        frame_angle: Some(scalar(frame)),
    }))
}

/// Constant coupling of the superadiabatic tangent sweep,
/// `omega sqrt(1 + atan(2/omega)^2 / (T omega)^2)`.
pub fn superadiabatic_tangent_coupling(omega: f64, duration: f64) -> f64 {
    let a = (GAMMA0 / omega).atan();
    omega * (1.0 + (a / (duration * omega)).powi(2)).sqrt()
}

fn tangent_family(omega: f64, duration: f64, corrected: bool) -> Result<ControlSchedule> {
    let base = tangent(omega, duration)?;
    let a = (GAMMA0 / omega).atan();
    let (entry, exit) = edge_kick_areas(&base);
    let (family, label, coupling) = if corrected {
        (
            Family::SuperadiabaticTangent,
            format!("superadiabatic-tangent(omega={omega}, T={duration})"),
            superadiabatic_tangent_coupling(omega, duration),
        )
    } else {
        (
            Family::SuperadiabaticTangentUncorrected,
            format!("superadiabatic-tangent-uncorrected(omega={omega}, T={duration})"),
            omega,
        )
    };
    let phi = -(a / (duration * omega)).atan();
    let reference = Reference {
        gamma: Arc::clone(&base.gamma),
        omega: Arc::clone(&base.omega),
        frame_angle: corrected.then(|| scalar(move |_| phi)),
    };
    Ok(ControlSchedule::build(
        label,
        family,
        duration,
        Arc::clone(&base.gamma),
        scalar(move |_| coupling),
    )?
    .with_rates(base.gamma_rate.clone(), Some(scalar(|_| 0.0)))
    .with_kick(Kick::z(0.0, entry)?)
    .with_kick(Kick::z(1.0, exit)?)
    .with_reference(reference))
}

/// Superadiabatic version of the tangent sweep: unchanged detuning, constant
/// raised coupling, and edge kicks.
pub fn superadiabatic_tangent(omega: f64, duration: f64) -> Result<ControlSchedule> {
    tangent_family(omega, duration, true)
}

/// Tangent detuning with the superadiabatic edge kicks but the coupling left
/// at `omega`.
pub fn superadiabatic_tangent_uncorrected(omega: f64, duration: f64) -> Result<ControlSchedule> {
    tangent_family(omega, duration, false)
}

/// Grid used to check a base schedule for gap closure.
const GAP_CHECK_POINTS: usize = 4001;

/// Adds the counterdiabatic field `g sy` with
/// `g = (omega' Gamma - Gamma' omega) / (2 (Gamma^2 + omega^2))` (time
/// derivatives), so that evolution follows the base ground state exactly.
pub fn counterdiabatic_construct(base: &ControlSchedule) -> Result<ControlSchedule> {
    if !base.kicks.is_empty() {
        return Err(QdError::param(
            "kicks",
            base.kicks.len() as f64,
            "base schedule must be differentiable (no kicks)",
        ));
    }
    if base.transverse.is_some() {
        return Err(QdError::param(
            "transverse",
            1.0,
            "base schedule already has an sy field",
        ));
    }
    for i in 0..GAP_CHECK_POINTS {
        let tau = i as f64 / (GAP_CHECK_POINTS - 1) as f64;
        let c = base.control(tau);
        c.validate()?;
        if c.gamma * c.gamma + c.omega * c.omega < 1e-24 {
            return Err(QdError::GapClosed { tau });
        }
    }
    let t = base.duration;
    let src = base.clone();
    let g = move |tau: f64| {
        let c = src.control(tau);
        let g_dot = src.gamma_rate(tau);
        let w_dot = src.omega_rate(tau);
        (w_dot * c.gamma - g_dot * c.omega) / (2.0 * t * (c.gamma * c.gamma + c.omega * c.omega))
    };
    let mut out = base.clone();
    out.label = format!("counterdiabatic({})", base.label);
    out.family = Family::Counterdiabatic;
    out.transverse = Some(scalar(g));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_on_grid(n: usize, f: impl Fn(f64) -> f64) -> f64 {
        (0..=n).map(|i| f(i as f64 / n as f64)).fold(0.0, f64::max)
    }

    #[test]
    fn linear_values() {
        let s = linear_lz(0.5, 3.0).unwrap();
        assert_eq!(s.gamma(0.0), -2.0);
        assert_eq!(s.gamma(0.5), 0.0);
        assert_eq!(s.gamma(0.75), 1.0);
        assert!(linear_lz(0.0, 1.0).is_err());
        assert!(linear_lz(0.5, -1.0).is_err());
    }

    #[test]
    fn power_law_reduces_to_linear() {
        let p = power_law(1.0, 0.5, 3.0).unwrap();
        let l = linear_lz(0.5, 3.0).unwrap();
        for i in 0..=1000 {
            let tau = i as f64 / 1000.0;
            assert_eq!(p.gamma(tau), l.gamma(tau));
        }
        let p4 = power_law(4.0, 0.5, 3.0).unwrap();
        assert_eq!(p4.gamma(0.0), -2.0);
        assert_eq!(p4.gamma(1.0), 2.0);
        assert!(power_law(0.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn linear_sin_values() {
        let s = linear_plus_sin(0.2, 0.5, 1.0).unwrap();
        assert!((s.gamma(0.0) + 2.0).abs() < 1e-15);
        let s = linear_plus_sin(0.4, 0.5, 1.0).unwrap();
        assert_eq!(s.gamma(0.5), 0.0);
        let slope = 4.0 * (1.0 - 2.0 * PI * 0.4);
        assert!((slope + 6.053).abs() < 1e-3);
        assert!((s.gamma_rate(0.5) - slope).abs() < 1e-12);
        let fd = (s.gamma(0.5 + 1e-6) - s.gamma(0.5 - 1e-6)) / 2e-6;
        assert!((fd - slope).abs() < 1e-6);
        assert!(linear_plus_sin(-0.1, 0.5, 1.0).is_err());
    }

    #[test]
    fn tangent_values() {
        let s = tangent(0.5, 1.0).unwrap();
        assert!((s.gamma(1.0) - 2.0).abs() < 1e-12);
        assert!(s.gamma(0.5).abs() < 1e-15);
        // 0.5 tan(atan(4) / 2)
        let direct = 0.5 * (0.5 * 4.0f64.atan()).tan();
        assert!((s.gamma(0.75) - direct).abs() < 1e-15);
        assert!((s.gamma(0.75) - 0.39039).abs() < 1e-5);
    }

    #[test]
    fn roland_cerf_duration_and_endpoints() {
        let s = roland_cerf(0.1f64.sqrt(), 0.5).unwrap();
        let expected = 1.0 / (0.1f64.sqrt() * 0.5 * 4.25f64.sqrt());
        assert!((s.duration() - expected).abs() < 1e-12);
        assert!((s.duration() - 3.06786).abs() < 1e-5);
        assert!((s.gamma(0.0) + 2.0).abs() < 1e-12);
        assert!((s.gamma(1.0) - 2.0).abs() < 1e-12);
        assert!(roland_cerf_duration(1e-9, 0.5) > 1e8);
        assert!(roland_cerf(0.0, 0.5).is_err());
        assert!(roland_cerf(1.0, 0.5).is_err());
    }

    #[test]
    fn rc_eta_values() {
        let s = rc_eta(0.1f64.sqrt(), 0.5, 4.0).unwrap();
        assert!((s.gamma(0.0) + 2.0).abs() < 1e-12);
        assert!((s.gamma(1.0) - 2.0).abs() < 1e-12);
        let e = eta_opt(0.5);
        assert!((e - 0.48507).abs() < 1e-5);
        assert!((e * e - 0.23529).abs() < 1e-5);
        assert!((eta_opt(0.45).powi(2) - 0.237954).abs() < 1e-6);
        assert!(rc_eta(0.5, 0.5, 1.0).is_err());
        assert!(rc_eta(0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn rc_eta_at_optimum_is_roland_cerf() {
        for &(eps, w) in &[(0.3, 0.5), (0.05, 1.3), (0.9, 0.1)] {
            let rc = roland_cerf(eps, w).unwrap();
            let re = rc_eta(eta_opt(w), w, rc.duration()).unwrap();
            for i in 0..=1000 {
                let tau = i as f64 / 1000.0;
                assert!((rc.gamma(tau) - re.gamma(tau)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn composite_pulse_duration_and_kicks() {
        let s = composite_pulse(0.5, EdgePulse::Ideal).unwrap();
        let expected = 0.24254f64.acos() / 0.5;
        assert!((s.duration() - expected).abs() < 1e-4);
        assert!((s.duration() - 2.6516).abs() < 1e-4);
        assert_eq!(s.kicks().len(), 2);
        assert!((s.kicks()[0].area - FRAC_PI_4).abs() < 1e-15);
        assert!((s.kicks()[1].area + FRAC_PI_4).abs() < 1e-15);
        assert_eq!(s.gamma(0.0), -2.0);
        assert_eq!(s.gamma(1.0), 2.0);
        assert_eq!(s.gamma(0.3), 0.0);

        let f = composite_pulse(0.5, EdgePulse::Finite(50.0)).unwrap();
        let t0 = FRAC_PI_4 / 50.0;
        assert!((f.duration() - (s.duration() + 2.0 * t0)).abs() < 1e-12);
        // area of the first edge pulse
        let tau_edge = t0 / f.duration();
        assert_eq!(f.gamma(0.5 * tau_edge), 50.0);
        assert_eq!(f.gamma(1.0 - 0.5 * tau_edge), -50.0);
        assert!(composite_pulse(0.5, EdgePulse::Finite(0.0)).is_err());
    }

    #[test]
    fn composite_rotation_shrinks_with_coupling() {
        let t_pi = |w: f64| PI / w;
        let mut last = 0.0;
        for &w in &[0.1, 0.5, 1.0, 2.0, 5.0, 20.0] {
            let s = composite_pulse(w, EdgePulse::Ideal).unwrap();
            let angle = s.duration() * w;
            assert!(angle < PI);
            assert!(s.duration() <= t_pi(w));
            if last > 0.0 {
                assert!(angle < last);
            }
            last = angle;
        }
    }

    #[test]
    fn superadiabatic_tangent_values() {
        let s = superadiabatic_tangent(0.5, 5.9).unwrap();
        let a = 4.0f64.atan();
        let expected = 0.5 * (1.0 + (a / (5.9 * 0.5)).powi(2)).sqrt();
        assert!((s.omega(0.3) - expected).abs() < 1e-15);
        assert!((s.omega(0.3) - 0.54818).abs() < 1e-5);
        let k = s.kicks();
        let area = 0.5 * (a / 2.95).atan();
        assert!((k[0].area - area).abs() < 1e-12);
        assert!((k[1].area + area).abs() < 1e-12);
        assert!((area - 0.2112).abs() < 1e-4);
        let slow = superadiabatic_tangent(0.5, 1e6).unwrap();
        assert!((slow.omega(0.5) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn superadiabatic_linear_limits_and_peak() {
        let fast = superadiabatic_linear(0.5, 5.9, SuperLinearForm::Exact).unwrap();
        let base = linear_lz(0.5, 5.9).unwrap();
        let peak_tau = (0..=10_000)
            .map(|i| i as f64 / 10_000.0)
            .max_by(|a, b| fast.omega(*a).total_cmp(&fast.omega(*b)))
            .unwrap();
        assert_eq!(peak_tau, 0.5);
        let slow = superadiabatic_linear(0.5, 1e7, SuperLinearForm::Exact).unwrap();
        let dev = max_on_grid(1000, |tau| {
            (slow.gamma(tau) - base.gamma(tau)).abs() + (slow.omega(tau) - 0.5).abs()
        });
        assert!(dev < 1e-6);
        let (a, b) = (fast.kicks()[0].area, fast.kicks()[1].area);
        assert!(a > 0.0 && (a + b).abs() < 1e-15);
    }

    #[test]
    fn tangent_counterdiabatic_field_is_constant() {
        let base = tangent(0.5, 5.9).unwrap();
        let cd = counterdiabatic_construct(&base).unwrap();
        let expected = -(4.0f64).atan() / 5.9;
        let dev = max_on_grid(1000, |tau| (cd.transverse(tau) - expected).abs());
        assert!(dev < 1e-12);
    }

    #[test]
    fn static_base_has_no_counterdiabatic_field() {
        let base = ControlSchedule::from_fns("static", 2.0, |_| -1.0, |_| 0.3).unwrap();
        let cd = counterdiabatic_construct(&base).unwrap();
        assert_eq!(max_on_grid(100, |tau| cd.transverse(tau).abs()), 0.0);
    }

    #[test]
    fn counterdiabatic_rejects_gap_closure() {
        let base = ControlSchedule::from_fns("closing", 1.0, |tau| tau - 0.5, |_| 0.0).unwrap();
        assert!(matches!(
            counterdiabatic_construct(&base),
            Err(QdError::GapClosed { .. })
        ));
    }

    #[test]
    fn numeric_and_analytic_rates_agree() {
        for s in [
            power_law(3.5, 0.5, 2.0).unwrap(),
            linear_plus_sin(0.3, 0.5, 2.0).unwrap(),
            tangent(0.7, 2.0).unwrap(),
            rc_eta(0.45, 0.5, 2.0).unwrap(),
        ] {
            let numeric = ControlSchedule::from_fns(
                "n",
                2.0,
                {
                    let s = s.clone();
                    move |t| s.gamma(t)
                },
                |_| 0.5,
            )
            .unwrap();
            for i in 1..100 {
                let tau = i as f64 / 100.0;
                let a = s.gamma_rate(tau);
                let n = numeric.gamma_rate(tau);
                assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "{}: {a} vs {n}", s.label());
            }
        }
    }

    #[test]
    fn kick_validation() {
        assert!(Kick::z(0.5, PI).is_err());
        assert!(Kick::z(1.5, 0.1).is_err());
        assert!(Kick::z(0.0, -3.0).is_ok());
    }

    #[test]
    fn mirrored_schedule_reverses_profile() {
        let s = linear_plus_sin(0.3, 0.5, 2.0).unwrap();
        let m = s.mirrored();
        for i in 0..=100 {
            let tau = i as f64 / 100.0;
            assert_eq!(m.gamma(tau), s.gamma(1.0 - tau));
        }
    }
}
