use qdrive::analysis::*;
use qdrive::engine::{final_fidelity, IntegratorConfig};
use qdrive::protocols::*;

fn cfg() -> IntegratorConfig {
    IntegratorConfig::default()
}

fn fidelities(recs: &[ScanRecord]) -> Vec<f64> {
    recs.iter().map(|r| r.final_fidelity).collect()
}

fn power_law_fidelities(alpha: f64, grid: &[f64]) -> Vec<f64> {
    fidelities(&fidelity_vs_duration(|t| power_law(alpha, 0.5, t), grid, &cfg()).unwrap())
}

#[test]
fn steeper_power_laws_reach_targets_sooner() {
    let search = SearchOptions::new(0.25, 40.0);
    for target in [0.6, 0.8, 0.9, 0.99] {
        let t1 = min_duration_for_fidelity(|t| power_law(1.0, 0.5, t), target, &search, &cfg()).unwrap();
        let t4 = min_duration_for_fidelity(|t| power_law(4.0, 0.5, t), target, &search, &cfg()).unwrap();
        assert!(t4 < t1, "target {target}: {t4} vs {t1}");
    }
    // pointwise dominance holds up to the first fidelity maximum and beyond it for a while
    let grid: Vec<f64> = (0..=30).map(|k| 3.0 + 0.1 * k as f64).collect();
    let (f1, f4) = (power_law_fidelities(1.0, &grid), power_law_fidelities(4.0, &grid));
    assert!(f1.iter().zip(&f4).all(|(a, b)| b >= a));
}

#[test]
#[ignore = "does not hold: the alpha=4 fidelity oscillates and falls below alpha=1 for T above about 6.25"]
fn steeper_power_laws_dominate_on_whole_window() {
    let grid: Vec<f64> = (0..=10).map(|k| 3.0 + 0.5 * k as f64).collect();
    let (f1, f4) = (power_law_fidelities(1.0, &grid), power_law_fidelities(4.0, &grid));
    for (a, b) in f1.iter().zip(&f4) {
        assert!(b >= a, "{b} < {a}");
    }
}

#[test]
fn linear_plus_sin_is_not_monotonic() {
    let grid: Vec<f64> = (1..=120).map(|k| 0.1 * k as f64).collect();
    let f = fidelities(&fidelity_vs_duration(|t| linear_plus_sin(0.4, 0.5, t), &grid, &cfg()).unwrap());
    assert!(f.windows(2).any(|w| w[1] < w[0] - 1e-4));
}

#[test]
fn long_sweeps_are_adiabatic() {
    for s in [power_law(2.0, 0.5, 400.0), tangent(0.5, 400.0), rc_eta(0.4, 0.5, 400.0)] {
        assert!(final_fidelity(&s.unwrap(), &cfg()).unwrap() > 0.999);
    }
}

#[test]
fn threshold_time_fixtures() {
    let search = SearchOptions::new(0.25, 40.0);
    let t1 = min_duration_for_fidelity(|t| linear_lz(0.5, t), 0.9, &search, &cfg()).unwrap();
    let t4 = min_duration_for_fidelity(|t| power_law(4.0, 0.5, t), 0.9, &search, &cfg()).unwrap();
    let t16 = min_duration_for_fidelity(|t| power_law(16.0, 0.5, t), 0.9, &search, &cfg()).unwrap();
    // frozen from the first computation; bisection resolution is 1e-3
    assert!((t1 - 12.018).abs() < 2e-3, "{t1}");
    assert!((t4 - 3.125).abs() < 2e-3, "{t4}");
    assert!((t16 - 2.632).abs() < 2e-3, "{t16}");
    // asymptotic LZ estimate 4 ln 10 / (pi omega^2)
    assert!((t1 - 11.73).abs() < 0.5);
    assert!(t16 > qsl_time(0.5, 2.0, 0.0).unwrap() - 0.05);
}

#[test]
fn oscillations_above_optimal_eta() {
    let grid: Vec<f64> = (1..=100).map(|k| 0.1 * k as f64).collect();
    let scan = eta_scan(&[0.1, 0.249], 0.5, &grid, 0.9, &SearchOptions::new(0.25, 20.0), &cfg()).unwrap();
    assert_eq!(scan.records.len(), 200);
    let f = fidelities(&scan.records[100..]);
    let turns = f.windows(3).filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0).count();
    assert!(turns >= 2);
    let t = &scan.threshold;
    assert!(t[1].1.unwrap() < t[0].1.unwrap());
}

#[test]
fn eta_scan_sweeps_hit_the_end_points() {
    for k in 1..50 {
        let e = 0.005 * k as f64;
        let s = rc_eta(e.sqrt(), 0.5, 3.0).unwrap();
        assert!((s.gamma(0.0) + 2.0).abs() < 1e-12 && (s.gamma(1.0) - 2.0).abs() < 1e-12);
    }
}

#[test]
fn near_quarter_sweep_resembles_composite_pulse() {
    let d = composite_shape_distance(0.249, 0.5).unwrap();
    // frozen value
    assert!((d - 0.129486).abs() < 1e-5, "{d}");
    assert!(composite_shape_distance(0.235294, 0.5).unwrap() > d);
}

#[test]
fn mismatch_plateau_and_drop() {
    let rel = [-0.8, -0.5, 0.0, 0.5, 1.0];
    let f = fidelities(&duration_mismatch_scan(0.5, 5.9, &rel, true, &cfg()).unwrap());
    assert!(f[2] > 1.0 - 1e-9);
    assert!(f[3] > 0.99 && f[4] > 0.99);
    assert!(f[0] < 0.5 && f[0] < f[1] && f[1] < f[2]);
}

#[test]
fn qsl_bounds_achieved_transfer_times() {
    let grid: Vec<f64> = (1..=60).map(|k| 0.25 * k as f64).collect();
    let families: Vec<Box<dyn Fn(f64) -> qdrive::Result<ControlSchedule> + Sync>> = vec![
        Box::new(|t| linear_lz(0.5, t)),
        Box::new(|t| power_law(16.0, 0.5, t)),
        Box::new(|t| tangent(0.5, t)),
        Box::new(|t| superadiabatic_tangent(0.5, t)),
        Box::new(|t| superadiabatic_linear(0.5, t, SuperLinearForm::Exact)),
        Box::new(|t| counterdiabatic_construct(&linear_lz(0.5, t)?)),
    ];
    for f in &families {
        for r in fidelity_vs_duration(f, &grid, &cfg()).unwrap() {
            if r.final_fidelity >= 0.999 {
                let avg = average_coupling(&f(r.duration).unwrap());
                let q = qsl_time(avg, 2.0, 0.0).unwrap();
                assert!(r.duration >= 0.99 * q, "T = {} below qsl {q}", r.duration);
            }
        }
    }
    let cp = composite_pulse(0.5, EdgePulse::Ideal).unwrap();
    assert!((cp.duration() - qsl_time(0.5, 2.0, 0.0).unwrap()).abs() < 1e-12);
}

#[test]
fn resource_curves_decrease_with_coupling() {
    let grid = [0.2, 0.5, 1.0, 2.0];
    for (fam, axis) in [
        (ResourceFamily::LzReference, CouplingAxis::Peak),
        (ResourceFamily::SuperadiabaticLinear, CouplingAxis::Peak),
        (ResourceFamily::SuperadiabaticLinear, CouplingAxis::Average),
        (ResourceFamily::SuperadiabaticTangent, CouplingAxis::Peak),
    ] {
        let pts = resource_curves(fam, axis, &grid, &cfg()).unwrap();
        assert!(
            pts.windows(2).all(|w| w[1].min_duration <= w[0].min_duration),
            "{fam:?}"
        );
        assert!(pts.iter().all(|p| p.min_duration > 0.0));
    }
}

#[test]
fn superadiabatic_linear_peak_curve_is_analytic() {
    // min over omega of sqrt(omega^2 + 4 / (T omega)^2) is 2 / sqrt(T)
    let pts = resource_curves(
        ResourceFamily::SuperadiabaticLinear,
        CouplingAxis::Peak,
        &[0.3, 1.5],
        &cfg(),
    )
    .unwrap();
    for p in pts {
        let expect = 4.0 / (p.coupling_axis_value * p.coupling_axis_value);
        assert!(
            (p.min_duration / expect - 1.0).abs() < 1e-3,
            "{} vs {expect}",
            p.min_duration
        );
    }
}

#[test]
fn tangent_resource_approaches_speed_limit() {
    let pts = resource_curves(
        ResourceFamily::SuperadiabaticTangent,
        CouplingAxis::Average,
        &[0.05, 0.1],
        &cfg(),
    )
    .unwrap();
    for p in pts {
        let r = p.min_duration / qsl_time(p.coupling_axis_value, 2.0, 0.0).unwrap();
        assert!((1.0..1.05).contains(&r), "{r}");
    }
}

#[test]
fn initial_axis_is_unbounded_for_exact_protocols() {
    let r = resource_curves(
        ResourceFamily::SuperadiabaticLinear,
        CouplingAxis::Initial,
        &[0.5],
        &cfg(),
    );
    assert!(matches!(r, Err(qdrive::QdError::Infeasible { .. })));
}
