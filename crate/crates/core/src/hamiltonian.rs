//! Two-level Hamiltonian primitives.
//!
//! Everything here works with the dimensionless Hamiltonian
//! `H = Gamma * sz + omega * sx` (hbar = 1) written in the diabatic basis
//! `|0>, |1>`, where `sz |0> = +|0>`. Sweeps run from `Gamma = -2` to
//! `Gamma = +2`, so `|0>` is the lower diabatic level at the start of every
//! sweep and the ground state migrates from `|0>` to `|1>`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{QdError, Result};

/// Half-range of the detuning sweep.
pub const GAMMA0: f64 = 2.0;

/// Norm tolerance applied to states handed in by callers.
pub const INPUT_NORM_TOL: f64 = 1e-6;

/// Instantaneous values of the two control parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    /// Diabatic energy offset.
    pub gamma: f64,
    /// Transverse coupling, non-negative.
    pub omega: f64,
}

impl ControlSample {
    pub fn new(gamma: f64, omega: f64) -> Result<Self> {
        let s = Self { gamma, omega };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || !self.omega.is_finite() {
            return Err(QdError::NonFinite(format!(
                "Gamma = {}, omega = {}",
                self.gamma, self.omega
            )));
        }
        if self.omega < 0.0 {
            return Err(QdError::param("omega", self.omega, "must be >= 0"));
        }
        Ok(())
    }

    /// Half the adiabatic gap, `sqrt(Gamma^2 + omega^2)`.
    pub fn radius(&self) -> f64 {
        self.gamma.hypot(self.omega)
    }

    /// Mixing angle of the field direction measured from +z, in `[0, pi]`.
    pub fn mixing_angle(&self) -> f64 {
        self.omega.atan2(self.gamma)
    }
}

/// Pure state in the diabatic basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub c0: C64,
    pub c1: C64,
}

impl StateVector {
    pub const fn new(c0: C64, c1: C64) -> Self {
        Self { c0, c1 }
    }

    pub fn from_real(c0: f64, c1: f64) -> Self {
        Self::new(C64::new(c0, 0.0), C64::new(c1, 0.0))
    }

    /// The diabatic state `|0>`.
    pub fn zero() -> Self {
        Self::from_real(1.0, 0.0)
    }

    /// The diabatic state `|1>`.
    pub fn one() -> Self {
        Self::from_real(0.0, 1.0)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> C64 {
        self.c0.conj() * other.c0 + self.c1.conj() * other.c1
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self::new(self.c0 / n, self.c1 / n)
    }

    pub fn conj(&self) -> Self {
        Self::new(self.c0.conj(), self.c1.conj())
    }

    pub fn scale(&self, z: C64) -> Self {
        Self::new(self.c0 * z, self.c1 * z)
    }

    /// Rejects states whose norm deviates from one by more than `tol`.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let norm = self.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > tol {
            return Err(QdError::NotNormalized { norm });
        }
        Ok(())
    }

    /// Euclidean distance between amplitude vectors.
    pub fn distance(&self, other: &StateVector) -> f64 {
        ((self.c0 - other.c0).norm_sqr() + (self.c1 - other.c1).norm_sqr()).sqrt()
    }
}

/// Instantaneous eigenpair of `H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdiabaticPair {
    pub e_ground: f64,
    pub e_excited: f64,
    pub ground: StateVector,
    pub excited: StateVector,
}

impl AdiabaticPair {
    pub fn gap(&self) -> f64 {
        self.e_excited - self.e_ground
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Azimuth in the x-y plane.
    pub fn azimuth(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// Eigenvalues `-R, +R` and eigenvectors of `Gamma sz + omega sx`.
///
/// The ground state is `(sin(theta/2), -cos(theta/2))` with
/// `theta = atan2(omega, Gamma)`, so its `|0>` amplitude is real and
/// non-negative. At `omega = 0, Gamma < 0` it is exactly `|0>`.
pub fn adiabatic_eigenstates(s: ControlSample) -> Result<AdiabaticPair> {
    s.validate()?;
    let r = s.radius();
    if r == 0.0 {
        return Err(QdError::GapClosed { tau: f64::NAN });
    }
    // half-angle sine/cosine of theta = atan2(omega, Gamma), taking the
    // square root only of the well-conditioned branch
    let (sin_h, cos_h) = if s.gamma <= 0.0 {
        let sin_h = (0.5 * (1.0 - s.gamma / r)).sqrt();
        (sin_h, s.omega / (2.0 * r * sin_h))
    } else {
        let cos_h = (0.5 * (1.0 + s.gamma / r)).sqrt();
        (s.omega / (2.0 * r * cos_h), cos_h)
    };
    Ok(AdiabaticPair {
        e_ground: -r,
        e_excited: r,
        ground: StateVector::from_real(sin_h, -cos_h),
        excited: StateVector::from_real(cos_h, sin_h),
    })
}

/// `|<a|b>|^2` for normalized states.
pub fn overlap_fidelity(a: &StateVector, b: &StateVector) -> Result<f64> {
    a.check_normalized(INPUT_NORM_TOL)?;
    b.check_normalized(INPUT_NORM_TOL)?;
    Ok(a.inner(b).norm_sqr().clamp(0.0, 1.0))
}

/// Expectation values of the three Pauli operators.
pub fn to_bloch(s: &StateVector) -> Result<BlochVector> {
    s.check_normalized(INPUT_NORM_TOL)?;
    let cross = s.c0.conj() * s.c1;
    Ok(BlochVector {
        x: 2.0 * cross.re,
        y: 2.0 * cross.im,
        z: s.c0.norm_sqr() - s.c1.norm_sqr(),
    })
}

/// `H |psi>` for `H = gamma sz + omega sx + transverse sy`.
pub fn apply_hamiltonian(field: [f64; 3], psi: &StateVector) -> StateVector {
    let [hx, hy, hz] = field;
    let off_up = C64::new(hx, -hy);
    let off_dn = C64::new(hx, hy);
    StateVector::new(psi.c0 * hz + psi.c1 * off_up, psi.c0 * off_dn - psi.c1 * hz)
}
