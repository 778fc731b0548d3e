//! Parameter scans, threshold-time searches, speed-limit references and
//! resource curves.
//!
//! Scans evaluate independent points in parallel on the current rayon pool
//! and return records in input order.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{final_fidelity, IntegratorConfig};
use crate::error::{QdError, Result};
use crate::hamiltonian::GAMMA0;
use crate::protocols::{
    composite_pulse, endpoint_overlap, linear_lz, rc_eta, superadiabatic_linear, superadiabatic_tangent,
    superadiabatic_tangent_coupling, superadiabatic_tangent_uncorrected, ControlSchedule, EdgePulse, SuperLinearForm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanParameter {
    Alpha,
    Delta,
    EtaSq,
    Duration,
    DtRel,
    OmegaAxis,
}

impl ScanParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanParameter::Alpha => "alpha",
            ScanParameter::Delta => "delta",
            ScanParameter::EtaSq => "eta_sq",
            ScanParameter::Duration => "duration",
            ScanParameter::DtRel => "dT_rel",
            ScanParameter::OmegaAxis => "omega_axis",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ScanParameter::Alpha,
            ScanParameter::Delta,
            ScanParameter::EtaSq,
            ScanParameter::Duration,
            ScanParameter::DtRel,
            ScanParameter::OmegaAxis,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for ScanParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRecord {
    pub parameter: ScanParameter,
    pub value: f64,
    pub duration: f64,
    pub final_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourcePoint {
    pub axis: CouplingAxis,
    pub coupling_axis_value: f64,
    pub min_duration: f64,
    pub protocol_label: String,
}

/// Grid-then-bisection settings for threshold-time searches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub lo: f64,
    pub hi: f64,
    /// Coarse grid spacing in T.
    pub resolution: f64,
    /// Bracket width at which bisection stops.
    pub tolerance: f64,
}

impl SearchOptions {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            resolution: 0.05,
            tolerance: 1e-3,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.hi.is_finite()) {
            return Err(QdError::param("search range", self.hi, "requires 0 < lo < hi < inf"));
        }
        if !(self.resolution > 0.0) {
            return Err(QdError::param("resolution", self.resolution, "must be > 0"));
        }
        if !(self.tolerance > 0.0) {
            return Err(QdError::param("tolerance", self.tolerance, "must be > 0"));
        }
        Ok(())
    }
}

fn fidelity_at<F>(factory: &F, duration: f64, cfg: &IntegratorConfig) -> Result<f64>
where
    F: Fn(f64) -> Result<ControlSchedule>,
{
    factory(duration)
        .and_then(|s| final_fidelity(&s, cfg))
        .map_err(|e| e.at_duration(duration))
}

/// Runs `factory(value, T)` for every `(value, T)` pair.
pub fn scan_points<F>(
    parameter: ScanParameter,
    points: &[(f64, f64)],
    factory: F,
    cfg: &IntegratorConfig,
) -> Result<Vec<ScanRecord>>
where
    F: Fn(f64, f64) -> Result<ControlSchedule> + Sync,
{
    points
        .par_iter()
        .map(|&(value, duration)| {
            let final_fidelity = fidelity_at(&|t| factory(value, t), duration, cfg)?;
            Ok(ScanRecord {
                parameter,
                value,
                duration,
                final_fidelity,
            })
        })
        .collect()
}

/// Final fidelity for each duration in `grid`.
pub fn fidelity_vs_duration<F>(factory: F, grid: &[f64], cfg: &IntegratorConfig) -> Result<Vec<ScanRecord>>
where
    F: Fn(f64) -> Result<ControlSchedule> + Sync,
{
    if grid.is_empty() {
        return Err(QdError::param("grid", 0.0, "must not be empty"));
    }
    if let Some(&t) = grid.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
        return Err(QdError::param("duration", t, "must be > 0"));
    }
    let points: Vec<(f64, f64)> = grid.iter().map(|&t| (t, t)).collect();
    scan_points(ScanParameter::Duration, &points, |_, t| factory(t), cfg)
}

/// Points evaluated concurrently per round of the coarse search.
const SEARCH_CHUNK: usize = 32;

/// Smallest `T` in the search range with `F_fin(T) >= target`, taking the
/// first crossing on the coarse grid and refining it by bisection.
pub fn min_duration_for_fidelity<F>(
    factory: F,
    target: f64,
    search: &SearchOptions,
    cfg: &IntegratorConfig,
) -> Result<f64>
where
    F: Fn(f64) -> Result<ControlSchedule> + Sync,
{
    if !(target > 0.0 && target < 1.0) {
        return Err(QdError::param("target", target, "must lie in (0, 1)"));
    }
    search.validate()?;
    let n = ((search.hi - search.lo) / search.resolution).ceil() as usize + 1;
    let grid: Vec<f64> = (0..n)
        .map(|k| (search.lo + k as f64 * search.resolution).min(search.hi))
        .collect();

    let mut best = (f64::NEG_INFINITY, search.lo);
    let mut below = None;
    for chunk in grid.chunks(SEARCH_CHUNK) {
        let values = chunk
            .par_iter()
            .map(|&t| fidelity_at(&factory, t, cfg))
            .collect::<Result<Vec<_>>>()?;
        for (&t, &f) in chunk.iter().zip(&values) {
            if f >= target {
                return match below {
                    None => Ok(t),
                    Some(lo) => bisect_threshold(&factory, target, lo, t, search.tolerance, cfg),
                };
            }
            if f > best.0 {
                best = (f, t);
            }
            below = Some(t);
        }
    }
    Err(QdError::TargetUnreached {
        target,
        lo: search.lo,
        hi: search.hi,
        best: best.0,
        best_at: best.1,
    })
}

fn bisect_threshold<F>(
    factory: &F,
    target: f64,
    mut lo: f64,
    mut hi: f64,
    tolerance: f64,
    cfg: &IntegratorConfig,
) -> Result<f64>
where
    F: Fn(f64) -> Result<ControlSchedule>,
{
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        if fidelity_at(factory, mid, cfg)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Minimum transfer time between the sweep's end-point ground states at
/// coupling `omega`: `2 t0 + arccos(|<psi_fin|psi_ini>|) / omega`, where `t0`
/// is the duration of each edge pulse.
pub fn qsl_time(omega: f64, gamma0: f64, t0: f64) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(QdError::param("omega", omega, "must be > 0"));
    }
    if !(t0 >= 0.0) {
        return Err(QdError::param("t0", t0, "must be >= 0"));
    }
    Ok(2.0 * t0 + endpoint_overlap(omega, gamma0)?.acos() / omega)
}

/// `T_pi = pi / omega`.
pub fn rabi_pi_time(omega: f64) -> Result<f64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(QdError::param("omega", omega, "must be > 0"));
    }
    Ok(PI / omega)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaScan {
    /// Fidelity surface, eta-major.
    pub records: Vec<ScanRecord>,
    /// `(eta^2, T_target)`; `None` where the target is not reached.
    pub threshold: Vec<(f64, Option<f64>)>,
}

/// Fidelity surface of the detuned Roland-Cerf family over `eta_sq_list` x
/// `grid`, with the first-crossing threshold time per `eta^2`.
pub fn eta_scan(
    eta_sq_list: &[f64],
    omega: f64,
    grid: &[f64],
    target: f64,
    search: &SearchOptions,
    cfg: &IntegratorConfig,
) -> Result<EtaScan> {
    if let Some(&e) = eta_sq_list.iter().find(|&&e| !(e > 0.0 && e < 0.25)) {
        return Err(QdError::param("eta_sq", e, "must lie in (0, 0.25)"));
    }
    let points: Vec<(f64, f64)> = eta_sq_list
        .iter()
        .flat_map(|&e| grid.iter().map(move |&t| (e, t)))
        .collect();
    let records = scan_points(ScanParameter::EtaSq, &points, |e, t| rc_eta(e.sqrt(), omega, t), cfg)?;
    let mut threshold = Vec::with_capacity(eta_sq_list.len());
    for &e in eta_sq_list {
        match min_duration_for_fidelity(|t| rc_eta(e.sqrt(), omega, t), target, search, cfg) {
            Ok(t) => threshold.push((e, Some(t))),
            Err(QdError::TargetUnreached { .. }) => threshold.push((e, None)),
            Err(err) => return Err(err),
        }
    }
    Ok(EtaScan { records, threshold })
}

/// Fraction of the sweep trimmed at each end before comparing shapes; the
/// ideal composite pulse jumps there, so any continuous sweep is a distance
/// of 1 away in the untrimmed sup norm.
pub const SHAPE_TRIM: f64 = 0.05;

/// Sup-norm distance between `Gamma / Gamma0` of the detuned Roland-Cerf
/// sweep and of the ideal composite pulse on `[SHAPE_TRIM, 1 - SHAPE_TRIM]`.
pub fn composite_shape_distance(eta_sq: f64, omega: f64) -> Result<f64> {
    let rc = rc_eta(eta_sq.sqrt(), omega, 1.0)?;
    let cp = composite_pulse(omega, EdgePulse::Ideal)?;
    let n = 10_000;
    Ok((0..=n)
        .map(|k| SHAPE_TRIM + (1.0 - 2.0 * SHAPE_TRIM) * k as f64 / n as f64)
        .map(|tau| (rc.gamma(tau) - cp.gamma(tau)).abs() / GAMMA0)
        .fold(0.0, f64::max))
}

/// Superadiabatic tangent designed for `t_design` but executed over
/// `t_design (1 + dT_rel)`.
pub fn duration_mismatch_scan(
    omega: f64,
    t_design: f64,
    dt_rel_grid: &[f64],
    with_omega_correction: bool,
    cfg: &IntegratorConfig,
) -> Result<Vec<ScanRecord>> {
    let mut points = Vec::with_capacity(dt_rel_grid.len());
    for &r in dt_rel_grid {
        let executed = t_design * (1.0 + r);
        if !(executed > 0.0) {
            return Err(QdError::param("dT_rel", r, "executed duration must be > 0"));
        }
        points.push((r, executed));
    }
    let design = if with_omega_correction {
        superadiabatic_tangent(omega, t_design)?
    } else {
        superadiabatic_tangent_uncorrected(omega, t_design)?
    };
    scan_points(ScanParameter::DtRel, &points, |_, t| design.with_duration(t), cfg)
}

const AVERAGE_REL_TOL: f64 = 1e-10;
const MAX_QUADRATURE_DEPTH: u32 = 24;

fn integrate_adaptive<F: Fn(f64) -> f64 + Copy>(f: F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let out = quadrature::integrate(f, a, b, tol);
    if out.error_estimate <= tol || depth == 0 {
        return out.integral;
    }
    let m = 0.5 * (a + b);
    integrate_adaptive(f, a, m, 0.5 * tol, depth - 1) + integrate_adaptive(f, m, b, 0.5 * tol, depth - 1)
}

/// `<omega> = int_0^1 |omega_perp(tau)| dtau`, the mean transverse coupling
/// (including any sigma_y field).
pub fn average_coupling(schedule: &ControlSchedule) -> f64 {
    let f = |tau: f64| schedule.omega(tau).hypot(schedule.transverse(tau));
    let scale = (0..=16)
        .map(|k| f(k as f64 / 16.0))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    integrate_adaptive(f, 0.0, 1.0, AVERAGE_REL_TOL * scale, MAX_QUADRATURE_DEPTH)
}

/// Largest transverse coupling over the schedule.
pub fn peak_coupling(schedule: &ControlSchedule) -> f64 {
    let f = |tau: f64| schedule.omega(tau).hypot(schedule.transverse(tau));
    let n = 2000;
    let (k, _) = (0..=n)
        .map(|k| (k, f(k as f64 / n as f64)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    let lo = (k.max(1) - 1) as f64 / n as f64;
    let hi = ((k + 1).min(n)) as f64 / n as f64;
    let tau = golden_section(|t| -f(t), lo, hi, 1e-12);
    f(tau).max(f(k as f64 / n as f64))
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizer of a unimodal `f` on `[a, b]` to bracket width `tol`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResourceFamily {
    /// Linear sweep at constant coupling, required to reach `LZ_TARGET`.
    LzReference,
    SuperadiabaticLinear,
    SuperadiabaticTangent,
}

impl ResourceFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            ResourceFamily::LzReference => "lz-reference",
            ResourceFamily::SuperadiabaticLinear => "superadiabatic-linear",
            ResourceFamily::SuperadiabaticTangent => "superadiabatic-tangent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingAxis {
    /// The design coupling `omega` of the base sweep.
    Initial,
    /// Maximum of the applied coupling over the sweep.
    Peak,
    /// Time average of the applied coupling.
    Average,
}

impl CouplingAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            CouplingAxis::Initial => "initial",
            CouplingAxis::Peak => "peak",
            CouplingAxis::Average => "average",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [CouplingAxis::Initial, CouplingAxis::Peak, CouplingAxis::Average]
            .into_iter()
            .find(|a| a.as_str() == s)
    }
}

/// Final fidelity the linear reference sweep must reach.
pub const LZ_TARGET: f64 = 0.98;
/// Golden-section tolerance on the design coupling.
pub const COUPLING_TOL: f64 = 1e-4;
/// Fidelity below which a superadiabatic point counts as failed.
const EXACT_FOLLOWING_TOL: f64 = 1e-6;
const OMEGA_BRACKET: (f64, f64) = (1e-3, 50.0);

fn axis_value(schedule: &ControlSchedule, design_omega: f64, axis: CouplingAxis) -> f64 {
    match axis {
        CouplingAxis::Initial => design_omega,
        CouplingAxis::Peak => peak_coupling(schedule),
        CouplingAxis::Average => average_coupling(schedule),
    }
}

/// Design coupling minimizing the resource for a superadiabatic family at
/// duration `t`, together with the resulting axis value.
///
/// The average coupling of the linear family has no interior minimum (it
/// decreases towards `pi / (2T)` as `omega -> 0`, where the coupling becomes
/// a single spike), so for that axis the design coupling is the one that
/// minimizes the peak, and the average is reported there.
fn optimal_design(family: ResourceFamily, axis: CouplingAxis, t: f64) -> Result<(f64, f64)> {
    let build = |w: f64| match family {
        ResourceFamily::SuperadiabaticLinear => superadiabatic_linear(w, t, SuperLinearForm::Exact),
        ResourceFamily::SuperadiabaticTangent => superadiabatic_tangent(w, t),
        ResourceFamily::LzReference => linear_lz(w, t),
    };
    let objective = match (family, axis) {
        (_, CouplingAxis::Initial) => {
            return Err(QdError::Infeasible {
                duration: t,
                reason: "superadiabatic schedules follow exactly at any duration; \
                         the design coupling does not bound T"
                    .into(),
            })
        }
        (ResourceFamily::SuperadiabaticLinear, _) => CouplingAxis::Peak,
        (_, a) => a,
    };
    let cost = |w: f64| match family {
        ResourceFamily::SuperadiabaticTangent => superadiabatic_tangent_coupling(w, t),
        _ => build(w).map_or(f64::INFINITY, |s| axis_value(&s, w, objective)),
    };
    let w = golden_section(cost, OMEGA_BRACKET.0, OMEGA_BRACKET.1, COUPLING_TOL);
    let schedule = build(w)?;
    Ok((w, axis_value(&schedule, w, axis)))
}

/// Smallest duration at which the family can meet its target with the
/// coupling resource `axis <= budget`.
fn resource_duration(family: ResourceFamily, axis: CouplingAxis, budget: f64, cfg: &IntegratorConfig) -> Result<f64> {
    if family == ResourceFamily::LzReference {
        // constant coupling: every axis equals omega
        let estimate = 4.0 * 50f64.ln() / (PI * budget * budget);
        let search = SearchOptions {
            lo: 0.02 * estimate,
            hi: 4.0 * estimate,
            resolution: 0.005 * estimate,
            tolerance: 1e-5 * estimate,
        };
        return min_duration_for_fidelity(|t| linear_lz(budget, t), LZ_TARGET, &search, cfg);
    }
    // the minimal resource decreases with T; bisect in log T
    let resource = |t: f64| optimal_design(family, axis, t).map(|(_, v)| v);
    let (mut lo, mut hi) = (1e-4f64, 1e6f64);
    if resource(hi)? > budget {
        return Err(QdError::Infeasible {
            duration: hi,
            reason: format!("coupling {budget} below the reachable minimum"),
        });
    }
    if resource(lo)? <= budget {
        return Ok(lo);
    }
    while hi / lo > 1.0 + 1e-9 {
        let mid = (lo * hi).sqrt();
        if resource(mid)? <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (w, _) = optimal_design(family, axis, hi)?;
    let schedule = match family {
        ResourceFamily::SuperadiabaticLinear => superadiabatic_linear(w, hi, SuperLinearForm::Exact)?,
        _ => superadiabatic_tangent(w, hi)?,
    };
    let f = final_fidelity(&schedule, cfg)?;
    if f < 1.0 - EXACT_FOLLOWING_TOL {
        return Err(QdError::Infeasible {
            duration: hi,
            reason: format!("optimized schedule reached only F = {f}"),
        });
    }
    Ok(hi)
}

/// Minimum duration versus coupling budget for one family and axis.
pub fn resource_curves(
    family: ResourceFamily,
    axis: CouplingAxis,
    grid: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<ResourcePoint>> {
    if let Some(&w) = grid.iter().find(|&&w| !(w > 0.0 && w.is_finite())) {
        return Err(QdError::param("coupling", w, "must be > 0"));
    }
    grid.par_iter()
        .map(|&budget| {
            Ok(ResourcePoint {
                axis,
                coupling_axis_value: budget,
                min_duration: resource_duration(family, axis, budget, cfg)?,
                protocol_label: family.as_str().to_string(),
            })
        })
        .collect()
}

/// Roots of `Gamma(tau)` on `[0, 1]`: sign changes on a uniform grid of
/// `points` samples, each refined by bisection.
pub fn crossings(schedule: &ControlSchedule, points: usize) -> Vec<f64> {
    let n = points.max(2);
    let mut roots = Vec::new();
    let mut last: Option<(f64, f64)> = None;
    for k in 0..n {
        let tau = k as f64 / (n - 1) as f64;
        let g = schedule.gamma(tau);
        if g == 0.0 {
            continue;
        }
        if let Some((t0, g0)) = last {
            if g0.signum() != g.signum() {
                let (mut a, mut b) = (t0, tau);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if schedule.gamma(m).signum() == g0.signum() {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                roots.push(0.5 * (a + b));
            }
        }
        last = Some((tau, g));
    }
    roots
}

pub const CROSSING_GRID: usize = 100_000;

/// Number of avoided crossings traversed by the sweep.
pub fn crossing_count(schedule: &ControlSchedule) -> usize {
    crossings(schedule, CROSSING_GRID).len()
}

/// Width in tau of the window `{|Gamma| <= c}` around the crossing of the
/// power-law sweep, `(c / 2)^(1 / alpha)`.
pub fn low_speed_width(alpha: f64, c: f64) -> Result<f64> {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(QdError::param("alpha", alpha, "must be >= 1"));
    }
    if !(c > 0.0 && c < 2.0) {
        return Err(QdError::param("C", c, "must lie in (0, 2)"));
    }
    Ok((0.5 * c).powf(1.0 / alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{linear_plus_sin, power_law, tangent};

    #[test]
    fn qsl_reference_values() {
        let t = qsl_time(0.5, 2.0, 0.0).unwrap();
        assert!((t - 0.242_535_625_036_333f64.acos() / 0.5).abs() < 1e-9);
        assert!((t - 2.6516).abs() < 1e-4);
        assert!((rabi_pi_time(0.5).unwrap() - std::f64::consts::TAU).abs() < 1e-8);
        let t0 = PI / (4.0 * 100.0);
        assert!((qsl_time(0.5, 2.0, t0).unwrap() - t - 2.0 * t0).abs() < 1e-15);
        assert!(qsl_time(0.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn qsl_below_rabi_time() {
        for k in 1..200 {
            let w = 0.01 * k as f64;
            assert!(qsl_time(w, 2.0, 0.0).unwrap() <= rabi_pi_time(w).unwrap());
        }
        // nearly antipodal end states: half the Rabi time
        let w = 1e-4;
        assert!((qsl_time(w, 2.0, 0.0).unwrap() / rabi_pi_time(w).unwrap() - 0.5).abs() < 1e-4);
    }

    #[test]
    fn low_speed_width_values() {
        assert!((low_speed_width(4.0, 1e-3).unwrap() - 0.1495).abs() < 1e-4);
        assert_eq!(low_speed_width(1.0, 0.3).unwrap(), 0.15);
        assert!(low_speed_width(1e6, 1e-3).unwrap() > 0.499);
        assert!(low_speed_width(0.5, 1e-3).is_err());
        assert!(low_speed_width(2.0, 2.0).is_err());
    }

    #[test]
    fn low_speed_width_matches_sweep() {
        let s = power_law(4.0, 0.5, 1.0).unwrap();
        let w = low_speed_width(4.0, 1e-3).unwrap();
        assert!((s.gamma(0.5 + 0.5 * w).abs() - 1e-3).abs() < 1e-12);
        assert!((s.gamma(0.5 - 0.5 * w).abs() - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn crossing_counts() {
        assert_eq!(crossing_count(&linear_lz(0.5, 5.0).unwrap()), 1);
        assert_eq!(crossing_count(&linear_plus_sin(0.1, 0.5, 5.0).unwrap()), 1);
        assert_eq!(crossing_count(&linear_plus_sin(0.4, 0.5, 5.0).unwrap()), 3);
        assert_eq!(crossing_count(&composite_pulse(0.5, EdgePulse::Ideal).unwrap()), 1);
        let roots = crossings(&linear_plus_sin(0.4, 0.5, 5.0).unwrap(), CROSSING_GRID);
        assert!((roots[1] - 0.5).abs() < 1e-12);
        assert!((roots[0] + roots[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_threshold_near_one_over_two_pi() {
        let c = 1.0 / (2.0 * PI);
        assert_eq!(crossing_count(&linear_plus_sin(c - 1e-3, 0.5, 5.0).unwrap()), 1);
        assert_eq!(crossing_count(&linear_plus_sin(c + 1e-3, 0.5, 5.0).unwrap()), 3);
    }

    #[test]
    fn golden_section_finds_minimum() {
        let x = golden_section(|x| (x - 1.234).powi(2), 0.0, 5.0, 1e-9);
        assert!((x - 1.234).abs() < 1e-8);
    }

    #[test]
    fn average_of_constant_coupling() {
        let s = linear_lz(0.37, 4.0).unwrap();
        assert!((average_coupling(&s) - 0.37).abs() < 1e-14);
        let s = superadiabatic_tangent(0.5, 5.9).unwrap();
        assert!((average_coupling(&s) - 0.54818).abs() < 1e-5);
        assert!((peak_coupling(&s) - average_coupling(&s)).abs() < 1e-12);
    }

    #[test]
    fn average_of_superadiabatic_linear() {
        // closed form of the integral via an independent fine trapezoid
        let s = superadiabatic_linear(0.3, 4.0, SuperLinearForm::Exact).unwrap();
        let n = 400_000;
        let h = 1.0 / n as f64;
        let trap: f64 = (0..=n)
            .map(|k| {
                let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                w * s.omega(k as f64 * h)
            })
            .sum::<f64>()
            * h;
        let avg = average_coupling(&s);
        assert!((avg - trap).abs() / avg < 1e-8, "{avg} vs {trap}");
        let long = superadiabatic_linear(0.3, 1e5, SuperLinearForm::Exact).unwrap();
        assert!((average_coupling(&long) - 0.3).abs() < 1e-3);
    }

    #[test]
    fn peak_of_superadiabatic_linear() {
        let (w, t) = (0.4, 3.0);
        let s = superadiabatic_linear(w, t, SuperLinearForm::Exact).unwrap();
        let exact = (w * w + 4.0 / (t * t * w * w)).sqrt();
        assert!((peak_coupling(&s) - exact).abs() < 1e-12);
    }

    #[test]
    fn min_duration_first_crossing() {
        let cfg = IntegratorConfig::default();
        let search = SearchOptions::new(0.5, 30.0);
        let t = min_duration_for_fidelity(|t| linear_lz(0.5, t), 0.9, &search, &cfg).unwrap();
        let f = final_fidelity(&linear_lz(0.5, t).unwrap(), &cfg).unwrap();
        let f_before = final_fidelity(&linear_lz(0.5, t - 2e-3).unwrap(), &cfg).unwrap();
        assert!(f >= 0.9 && f_before < 0.9);
        // asymptotic formula: 4 ln 10 / (pi omega^2)
        assert!((t - 11.7).abs() < 1.0, "{t}");
    }

    #[test]
    fn min_duration_unreached_reports_best() {
        let cfg = IntegratorConfig::default();
        let search = SearchOptions::new(0.5, 2.0);
        match min_duration_for_fidelity(|t| linear_lz(0.5, t), 0.99, &search, &cfg) {
            Err(QdError::TargetUnreached { best, best_at, .. }) => {
                assert!(best < 0.99 && best > 0.0);
                assert!((0.5..=2.0).contains(&best_at));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn relaxed_target_is_not_slower() {
        let cfg = IntegratorConfig::default();
        let search = SearchOptions::new(0.5, 20.0);
        for alpha in [1.0, 3.0] {
            let f = |t| power_law(alpha, 0.5, t);
            let t8 = min_duration_for_fidelity(f, 0.8, &search, &cfg).unwrap();
            let t9 = min_duration_for_fidelity(f, 0.9, &search, &cfg).unwrap();
            assert!(t8 <= t9);
        }
    }

    #[test]
    fn scan_preserves_order() {
        let cfg = IntegratorConfig::default();
        let grid: Vec<f64> = (1..40).rev().map(|k| 0.25 * k as f64).collect();
        let recs = fidelity_vs_duration(|t| tangent(0.5, t), &grid, &cfg).unwrap();
        assert!(recs.iter().zip(&grid).all(|(r, &t)| r.duration == t && r.value == t));
        assert!(fidelity_vs_duration(|t| tangent(0.5, t), &[], &cfg).is_err());
        assert!(fidelity_vs_duration(|t| tangent(0.5, t), &[1.0, -1.0], &cfg).is_err());
    }

    #[test]
    fn mismatch_scan_design_point() {
        let cfg = IntegratorConfig::default();
        let recs = duration_mismatch_scan(0.5, 5.9, &[0.0], true, &cfg).unwrap();
        assert!(recs[0].final_fidelity > 1.0 - 1e-9);
        assert!(duration_mismatch_scan(0.5, 5.9, &[-1.0], true, &cfg).is_err());
    }

    #[test]
    fn shape_distance_shrinks_towards_quarter() {
        let d1 = composite_shape_distance(0.1, 0.5).unwrap();
        let d2 = composite_shape_distance(0.249, 0.5).unwrap();
        assert!(d2 < d1);
    }
}
