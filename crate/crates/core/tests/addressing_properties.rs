use addrtrap::addressing::{gate_time, gate_time_table, sweep_addressing, OmegaUnit};
use addrtrap::geometry::{make_addressable_array, ArrayParams};
use addrtrap::metrics::{find_minima, SampledGrid};
use addrtrap::{DriveConfig, FieldSolver, Grid3, Pseudopotential, Species, SweepOptions};
use proptest::prelude::*;
use std::f64::consts::TAU;

proptest! {
    #[test]
    fn gate_time_is_cubic_in_distance(a in 1e-6..1e-3f64, w in 1e5..1e8f64, k in 0.1..10.0f64) {
        let s = Species::ca40();
        let t = gate_time(a, w, &s).unwrap();
        let t2 = gate_time(k * a, w, &s).unwrap();
        prop_assert!((t2 / t - k.powi(3)).abs() <= 1e-12 * k.powi(3));
    }

    #[test]
    fn gate_time_is_linear_in_frequency(a in 1e-6..1e-3f64, w in 1e5..1e8f64, k in 0.1..10.0f64) {
        let s = Species::ca40();
        let t = gate_time(a, w, &s).unwrap();
        let t2 = gate_time(a, k * w, &s).unwrap();
        prop_assert!((t2 / t - k).abs() <= 1e-12 * k);
    }
}

#[test]
fn table_reads_either_unit() {
    let s = Species::ca40();
    let rad = gate_time_table(&s, OmegaUnit::MegaRadPerSecond).unwrap();
    let hz = gate_time_table(&s, OmegaUnit::MegaHertz).unwrap();
    for (r, h) in rad.iter().zip(&hz) {
        assert!((h.gate_time_s / r.gate_time_s - TAU).abs() < 1e-12);
    }
}

#[test]
fn coarse_sweep_pulls_sites_together() {
    let p = ArrayParams { circle_vertices: 32, ..ArrayParams::reference_2x2() };
    let layout = make_addressable_array(&p).unwrap();
    let solver = FieldSolver::new(&layout).unwrap();
    let drive = DriveConfig::new(215.0, TAU * 10e6);
    let species = Species::ca40();
    let group = solver.groups().into_iter().find(|g| g.starts_with("addr")).unwrap();
    let opts = SweepOptions { spacing: Some(0.4e-3), ..SweepOptions::default() };
    let report = sweep_addressing(&solver, &layout, &drive, &species, &group, &[1.0, 0.8, 0.6], opts).unwrap();
    let d: Vec<f64> = report.records.iter().map(|r| r.inter_site_distance).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");

    // At full drive the tracked sites are the array's own minima.
    let pot = Pseudopotential::new(&solver, &drive, &species).unwrap();
    let grid = Grid3::spanning([-4.8e-3, -4.8e-3, 0.2e-3], [4.8e-3, 4.8e-3, 2.9e-3], [25, 25, 28]).unwrap();
    let minima = find_minima(&pot, &SampledGrid::sample(&pot, grid).unwrap()).unwrap();
    for s in report.records[0].site_positions {
        let near = minima.iter().map(|m| {
            let q = m.position;
            ((q[0] - s[0]).powi(2) + (q[1] - s[1]).powi(2) + (q[2] - s[2]).powi(2)).sqrt()
        });
        assert!(near.fold(f64::INFINITY, f64::min) < 1e-6, "{s:?} not among {minima:?}");
    }
}
