use addrtrap::geometry::{make_addressable_array, make_point_trap, ArrayParams};
use addrtrap::{DriveConfig, FieldSolver, V3};
use proptest::prelude::*;
use std::f64::consts::TAU;
use std::sync::OnceLock;

fn point() -> &'static FieldSolver {
    static S: OnceLock<FieldSolver> = OnceLock::new();
    S.get_or_init(|| FieldSolver::new(&make_point_trap(0.5e-3, 1.0e-3, 50e-6).unwrap()).unwrap())
}

fn array() -> &'static FieldSolver {
    static S: OnceLock<FieldSolver> = OnceLock::new();
    S.get_or_init(|| FieldSolver::new(&make_addressable_array(&ArrayParams::reference_2x2()).unwrap()).unwrap())
}

fn drive() -> DriveConfig {
    DriveConfig::new(100.0, TAU * 10e6)
}

fn laplacian(s: &FieldSolver, w: &[f64], p: V3, h: f64) -> f64 {
    let phi = |q: V3| s.weighted(w, &q, true).unwrap().0;
    let c = phi(p);
    (0..3)
        .map(|a| {
            let mut e = V3::zeros();
            e[a] = h;
            phi(p + e) + phi(p - e) - 2.0 * c
        })
        .sum::<f64>()
        / (h * h)
}

/// Fourth-order central difference of the potential.
fn fd_gradient(s: &FieldSolver, w: &[f64], p: V3, h: f64) -> V3 {
    let phi = |q: V3| s.weighted(w, &q, true).unwrap().0;
    let mut g = V3::zeros();
    for a in 0..3 {
        let mut e = V3::zeros();
        e[a] = h;
        g[a] = (8.0 * (phi(p + e) - phi(p - e)) - (phi(p + 2.0 * e) - phi(p - 2.0 * e))) / (12.0 * h);
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn potential_is_harmonic(x in -1.2e-3..1.2e-3f64, y in -1.2e-3..1.2e-3f64, z in 0.2e-3..2.0e-3f64) {
        let s = point();
        let w = s.rf_weights(&drive());
        let p = V3::new(x, y, z);
        let h = 20e-6;
        // Richardson combination cancels the h² truncation term.
        let l = (4.0 * laplacian(s, &w, p, 0.5 * h) - laplacian(s, &w, p, h)) / 3.0;
        let phi = s.weighted(&w, &p, true).unwrap().0;
        prop_assert!(l.abs() < 1e-4 * phi.abs() / (h * h), "laplacian {l} phi {phi}");
    }

    #[test]
    fn potential_is_harmonic_under_ground_plane(x in 0.5e-3..5.5e-3f64, y in 0.5e-3..5.5e-3f64, z in 0.3e-3..2.6e-3f64) {
        let s = array();
        let w = s.rf_weights(&drive());
        let p = V3::new(x, y, z);
        let h = 40e-6;
        let l = (4.0 * laplacian(s, &w, p, 0.5 * h) - laplacian(s, &w, p, h)) / 3.0;
        let phi = s.weighted(&w, &p, true).unwrap().0;
        prop_assert!(l.abs() < 1e-4 * phi.abs() / (h * h), "laplacian {l} phi {phi}");
    }

    #[test]
    fn superposition(a in -300.0..300.0f64, b in -300.0..300.0f64, x in -2e-3..2e-3f64, z in 0.1e-3..2e-3f64) {
        let s = array();
        let n = s.len();
        let w1: Vec<f64> = (0..n).map(|i| a * ((i % 3) as f64 - 1.0)).collect();
        let w2: Vec<f64> = (0..n).map(|i| b * (i as f64).sin()).collect();
        let sum: Vec<f64> = w1.iter().zip(&w2).map(|(p, q)| p + q).collect();
        let p = V3::new(x, 0.7 * x + 1e-3, z);
        let (f1, g1) = s.weighted(&w1, &p, true).unwrap();
        let (f2, g2) = s.weighted(&w2, &p, true).unwrap();
        let (f, g) = s.weighted(&sum, &p, true).unwrap();
        let scale = f1.abs() + f2.abs() + 1e-300;
        prop_assert!((f - f1 - f2).abs() <= 1e-12 * scale);
        prop_assert!((g - g1 - g2).norm() <= 1e-12 * (g1.norm() + g2.norm() + 1e-300));
    }

    #[test]
    fn gradient_matches_finite_difference(x in -1.2e-3..1.2e-3f64, y in -1.2e-3..1.2e-3f64, z in 0.2e-3..2.0e-3f64) {
        let s = point();
        let w = s.rf_weights(&drive());
        let p = V3::new(x, y, z);
        let g = s.weighted(&w, &p, false).unwrap().1;
        let fd = fd_gradient(s, &w, p, 2e-6);
        // Normalised by the field a volt-scale drive makes over the trap size.
        let scale = g.norm().max(100.0 / 1e-3);
        prop_assert!((g - fd).norm() < 1e-6 * scale, "analytic {g:?} fd {fd:?}");
    }

    #[test]
    fn field_magnitude_has_mirror_symmetry(x in 0.2e-3..8e-3f64, y in 0.2e-3..8e-3f64, z in 0.2e-3..2.8e-3f64) {
        let s = array();
        let d = drive();
        let e = s.rf_field_at(&d, &V3::new(x, y, z)).unwrap().norm();
        for (sx, sy) in [(-1.0, 1.0), (1.0, -1.0), (-1.0, -1.0)] {
            let m = s.rf_field_at(&d, &V3::new(sx * x, sy * y, z)).unwrap().norm();
            prop_assert!((m - e).abs() <= 1e-9 * e, "{e} vs {m}");
        }
    }
}

#[test]
fn ground_plane_holds_zero_potential() {
    let s = array();
    let h = s.ground_plane().unwrap();
    let d = DriveConfig::new(215.0, TAU * 10e6);
    for (x, y) in [(0.0, 0.0), (3e-3, 3e-3), (-4e-3, 1e-3), (9e-3, -2e-3)] {
        let v = s.potential_at(&d, &V3::new(x, y, h * (1.0 - 1e-9)), 0.0).unwrap();
        assert!(v.abs() < 1e-3 * d.v_nom, "({x}, {y}): {v}");
    }
}
