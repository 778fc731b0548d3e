//! Mapping between the dimensionless two-level model and its optical-lattice
//! realization. Energies are in recoil units `hbar omega_rec`, times in
//! `1 / omega_rec`, quasimomenta in units of `hbar k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{QdError, Result};
use crate::hamiltonian::GAMMA0;

/// Recoil angular frequency of 87Rb at 842 nm, `2 pi x 3.125 kHz`.
pub const RB87_OMEGA_REC: f64 = 2.0 * PI * 3125.0;

/// Depth above which the two-band truncation is flagged (recoil units).
pub const DEFAULT_DEPTH_BOUND: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    /// Lattice depth in recoil energies.
    pub v0: f64,
    /// Quasimomentum in units of `hbar k`, `0 <= q <= 1` over one sweep.
    pub q: f64,
    pub gamma0: f64,
    /// Lattice constant in metres (informational).
    pub d_l: f64,
    /// Recoil angular frequency in rad/s.
    pub omega_rec: f64,
}

impl Default for LatticeParams {
    fn default() -> Self {
        Self {
            v0: 2.0,
            q: 0.0,
            gamma0: GAMMA0,
            d_l: 421e-9,
            omega_rec: RB87_OMEGA_REC,
        }
    }
}

impl LatticeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v0 >= 0.0) {
            return Err(QdError::param("v0", self.v0, "must be >= 0"));
        }
        if !self.q.is_finite() {
            return Err(QdError::param("q", self.q, "must be finite"));
        }
        if !(self.omega_rec > 0.0) {
            return Err(QdError::param("omega_rec", self.omega_rec, "must be > 0"));
        }
        Ok(())
    }

    pub fn coupling(&self) -> Result<Coupling> {
        depth_to_coupling(self.v0, DEFAULT_DEPTH_BOUND)
    }

    pub fn gamma(&self) -> f64 {
        quasimomentum_to_gamma(self.q, self.gamma0)
    }

    /// Natural time units to seconds.
    pub fn to_seconds(&self, t: f64) -> f64 {
        t / self.omega_rec
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub omega: f64,
    /// Set when the depth reaches the configured bound, where the two-level
    /// truncation degrades.
    pub beyond_two_level: bool,
}

/// `omega = V0 / 4`.
pub fn depth_to_coupling(v0: f64, validity_bound: f64) -> Result<Coupling> {
    if !(v0 >= 0.0) || !v0.is_finite() {
        return Err(QdError::param("v0", v0, "must be finite and >= 0"));
    }
    Ok(Coupling {
        omega: 0.25 * v0,
        beyond_two_level: v0 >= validity_bound,
    })
}

/// `Gamma = 2 Gamma0 (q - 1/2)`.
pub fn quasimomentum_to_gamma(q: f64, gamma0: f64) -> f64 {
    2.0 * gamma0 * (q - 0.5)
}

pub fn gamma_to_quasimomentum(gamma: f64, gamma0: f64) -> f64 {
    gamma / (2.0 * gamma0) + 0.5
}

/// `T_Bloch = 2 pi / (F d_L)` with `hbar = 1`.
pub fn bloch_period(force: f64, d_l: f64) -> Result<f64> {
    if !(force > 0.0) || !force.is_finite() {
        return Err(QdError::param("force", force, "must be > 0"));
    }
    if !(d_l > 0.0) {
        return Err(QdError::param("d_L", d_l, "must be > 0"));
    }
    Ok(2.0 * PI / (force * d_l))
}

/// Constant force that carries `q` from 0 to `hbar k = pi / d_L` in `duration`.
pub fn force_for_sweep(duration: f64, d_l: f64) -> f64 {
    PI / (d_l * duration)
}

/// Natural time units to seconds for a given recoil frequency.
pub fn natural_to_seconds(t: f64, omega_rec: f64) -> f64 {
    t / omega_rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::linear_lz;

    #[test]
    fn coupling_from_depth() {
        let c = depth_to_coupling(2.0, DEFAULT_DEPTH_BOUND).unwrap();
        assert_eq!(c.omega, 0.5);
        assert!(!c.beyond_two_level);
        assert_eq!(depth_to_coupling(0.0, DEFAULT_DEPTH_BOUND).unwrap().omega, 0.0);
        let c = depth_to_coupling(5.0, DEFAULT_DEPTH_BOUND).unwrap();
        assert_eq!(c.omega, 1.25);
        assert!(c.beyond_two_level);
        assert!(depth_to_coupling(-1.0, 5.0).is_err());
    }

    #[test]
    fn quasimomentum_map() {
        assert_eq!(quasimomentum_to_gamma(0.5, 2.0), 0.0);
        assert_eq!(quasimomentum_to_gamma(0.0, 2.0), -2.0);
        assert_eq!(quasimomentum_to_gamma(1.0, 2.0), 2.0);
        for i in 0..1000 {
            let q = -1.0 + 0.003 * i as f64;
            let back = gamma_to_quasimomentum(quasimomentum_to_gamma(q, 2.0), 2.0);
            assert!((back - q).abs() < 1e-14);
        }
    }

    #[test]
    fn bloch_period_scaling() {
        let t1 = bloch_period(1.0, 1.0).unwrap();
        let t2 = bloch_period(2.0, 1.0).unwrap();
        assert!((t1 - 2.0 * t2).abs() < 1e-15);
        assert!(bloch_period(0.0, 1.0).is_err());
    }

    #[test]
    fn linear_ramp_reproduces_linear_sweep() {
        let d_l = 1.0;
        let duration = 5.9;
        let s = linear_lz(0.5, duration).unwrap();
        let f = force_for_sweep(duration, d_l);
        // half a Bloch period sweeps q over [0, hbar k]
        assert!((bloch_period(f, d_l).unwrap() - 2.0 * duration).abs() < 1e-12);
        for i in 0..=100 {
            let tau = i as f64 / 100.0;
            let q = f * d_l * (tau * duration) / PI;
            let g = quasimomentum_to_gamma(q, GAMMA0);
            assert!((g - s.gamma(tau)).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_conversion() {
        let unit = natural_to_seconds(1.0, RB87_OMEGA_REC);
        assert!((unit - 50.93e-6).abs() < 0.01e-6);
        assert!((natural_to_seconds(5.9, RB87_OMEGA_REC) - 300e-6).abs() < 1.0e-6);
        let t = natural_to_seconds(7.9, RB87_OMEGA_REC);
        assert!((t - 400e-6).abs() < 0.01 * 400e-6);
    }
}
