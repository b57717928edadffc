//! Addressing-electrode sweeps and interaction figures of merit.

use std::f64::consts::TAU;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{ELEMENTARY_CHARGE, EPSILON_0};
use crate::error::{invalid, Result, TrapError};
use crate::field::{DriveConfig, FieldSolver, Grid3, V3};
use crate::geometry::{ElectrodeLayout, Role};
use crate::metrics::{
    connection_level, default_box, find_minima, secular_frequencies, Minimum, Pseudopotential,
    SampledGrid, Species,
};

/// Controlled-phase gate time 4π²·ε₀·m·a³·ω/q² for ions `a` apart with
/// secular frequency `omega` (rad/s).
pub fn gate_time(a: f64, omega: f64, species: &Species) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(omega >= 0.0 && omega.is_finite()) {
        return invalid("gate time needs a > 0 and ω ≥ 0");
    }
    species.validate()?;
    let q = species.charge;
    Ok(4.0 * std::f64::consts::PI.powi(2) * EPSILON_0 * species.mass * a.powi(3) * omega / (q * q))
}

/// Ten periods of the slowest secular frequency of interest.
pub fn adiabatic_ramp_time(min_omega: f64) -> Result<f64> {
    if !(min_omega > 0.0 && min_omega.is_finite()) {
        return invalid("ramp time needs a positive secular frequency");
    }
    Ok(10.0 * TAU / min_omega)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub d: f64,
    /// Gate time relative to the reference, at fixed depth and trap shape.
    pub gate_time: f64,
    /// Heating rate relative to the reference.
    pub heating: f64,
    /// Heating accumulated per gate, relative to the reference.
    pub heating_per_gate: f64,
}

/// Miniaturisation at fixed depth and shape: ω ∝ 1/d makes the gate time
/// scale as d², while heating is taken to scale as d⁻⁴.
pub fn scaling_report(d_values: &[f64], reference: f64) -> Result<Vec<ScalingRow>> {
    if !(reference > 0.0) || d_values.iter().any(|&d| !(d > 0.0)) {
        return invalid("scaling report needs positive distances");
    }
    Ok(d_values
        .iter()
        .map(|&d| {
            let s = d / reference;
            let gate_time = s * s;
            let heating = s.powi(-4);
            ScalingRow { d, gate_time, heating, heating_per_gate: gate_time * heating }
        })
        .collect())
}

/// One printed row of the reference gate-time table: spacing (µm), secular
/// frequency column, gate time at ~1 eV depth and at ω/10 (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceGateRow {
    pub a_um: f64,
    pub omega_column: f64,
    pub printed_ms: f64,
    pub printed_reduced_ms: f64,
}

pub const REFERENCE_GATE_ROWS: [ReferenceGateRow; 5] = [
    ReferenceGateRow { a_um: 1500.0, omega_column: 0.5, printed_ms: 2200.0, printed_reduced_ms: 220.0 },
    ReferenceGateRow { a_um: 375.0, omega_column: 2.0, printed_ms: 140.0, printed_reduced_ms: 14.0 },
    ReferenceGateRow { a_um: 100.0, omega_column: 7.5, printed_ms: 9.6, printed_reduced_ms: 0.96 },
    ReferenceGateRow { a_um: 50.0, omega_column: 15.0, printed_ms: 2.1, printed_reduced_ms: 0.21 },
    ReferenceGateRow { a_um: 25.0, omega_column: 30.0, printed_ms: 1.3, printed_reduced_ms: 0.13 },
];

/// How the frequency column is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaUnit {
    /// 10⁶ rad/s.
    #[default]
    MegaRadPerSecond,
    /// MHz, converted with 2π.
    MegaHertz,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateTableRow {
    pub a_m: f64,
    pub omega: f64,
    pub gate_time_s: f64,
    pub reduced_gate_time_s: f64,
    pub printed_ms: f64,
    pub printed_reduced_ms: f64,
    /// Printed spacing/time pairs known to disagree with a³ scaling.
    pub excluded_from_scaling: bool,
}

/// Gate times for the reference rows; ω′ = ω/10 for the relaxed column.
pub fn gate_time_table(species: &Species, unit: OmegaUnit) -> Result<Vec<GateTableRow>> {
    let scale = match unit {
        OmegaUnit::MegaRadPerSecond => 1e6,
        OmegaUnit::MegaHertz => TAU * 1e6,
    };
    REFERENCE_GATE_ROWS
        .iter()
        .map(|r| {
            let a = r.a_um * 1e-6;
            let w = r.omega_column * scale;
            Ok(GateTableRow {
                a_m: a,
                omega: w,
                gate_time_s: gate_time(a, w, species)?,
                reduced_gate_time_s: gate_time(a, 0.1 * w, species)?,
                printed_ms: r.printed_ms,
                printed_reduced_ms: r.printed_reduced_ms,
                excluded_from_scaling: r.a_um == 25.0,
            })
        })
        .collect()
}

pub fn write_gate_table_csv<W: Write>(out: W, rows: &[GateTableRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["a_um", "omega_rad_s", "t_gate_ms", "t_gate_reduced_ms", "printed_ms", "printed_reduced_ms"])?;
    for r in rows {
        w.write_record([
            (r.a_m * 1e6).to_string(),
            r.omega.to_string(),
            (r.gate_time_s * 1e3).to_string(),
            (r.reduced_gate_time_s * 1e3).to_string(),
            r.printed_ms.to_string(),
            r.printed_reduced_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// 1.0 → 0.0 in steps of 0.05, with steps of 0.01 between 0.50 and 0.35.
pub fn default_fractions() -> Vec<f64> {
    let mut f: Vec<i32> = (0..=20).map(|k| 100 - 5 * k).collect();
    f.extend(36..50);
    f.sort_unstable_by(|a, b| b.cmp(a));
    f.dedup();
    f.into_iter().map(|k| k as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Grid spacing; defaults to 1/30 of the site spacing.
    pub spacing: Option<f64>,
    /// Top of the sampling box without a ground plane; defaults to 1.5 site
    /// spacings.
    pub top: Option<f64>,
    /// Barrier below which the two sites count as one trap, eV.
    pub merge_tol_ev: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { spacing: None, top: None, merge_tol_ev: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphRecord {
    pub fraction: f64,
    pub site_positions: [[f64; 3]; 2],
    pub inter_site_distance: f64,
    /// Lowest connection between the two sites above the higher site, eV.
    pub barrier_height: f64,
    pub third_trap_present: bool,
    pub third_trap_position: Option<[f64; 3]>,
    /// Barriers between each site and the third trap, eV.
    pub saddle_heights: Vec<f64>,
    pub merged: bool,
    /// Lowest secular frequency of the two sites, rad/s.
    pub min_secular_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphReport {
    pub group: String,
    pub home_sites: [[f64; 2]; 2],
    pub grid_spacing: f64,
    pub records: Vec<MorphRecord>,
}

impl MorphReport {
    /// Separation at the first (largest) fraction.
    pub fn reference_distance(&self) -> Option<f64> {
        self.records.first().map(|r| r.inter_site_distance)
    }

    /// Largest fraction at which a third trap is present.
    pub fn third_trap_onset(&self) -> Option<f64> {
        self.records.iter().find(|r| r.third_trap_present).map(|r| r.fraction)
    }

    /// Relative separation loss when the third trap opens, i.e. the closest
    /// approach of the two point traps before they start draining into the
    /// third one. Without a third trap, the last record before the merge.
    pub fn pre_merge_reduction(&self) -> Option<f64> {
        let d0 = self.reference_distance()?;
        let rec = match self.records.iter().find(|r| r.third_trap_present && !r.merged) {
            Some(r) => r,
            None => self.records.iter().take_while(|r| !r.merged).last()?,
        };
        Some(1.0 - rec.inter_site_distance / d0)
    }

    /// Relative separation loss at the record closest to `fraction`.
    pub fn reduction_at(&self, fraction: f64) -> Option<f64> {
        let d0 = self.reference_distance()?;
        let r = self
            .records
            .iter()
            .min_by(|a, b| (a.fraction - fraction).abs().total_cmp(&(b.fraction - fraction).abs()))?;
        Some(1.0 - r.inter_site_distance / d0)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["fraction", "a_m", "barrier_eV", "saddle_eV", "third_trap", "merged", "omega_min"])?;
        for r in &self.records {
            let saddle = r.saddle_heights.iter().copied().reduce(f64::min).map_or(String::new(), |s| s.to_string());
            w.write_record([
                r.fraction.to_string(),
                r.inter_site_distance.to_string(),
                r.barrier_height.to_string(),
                saddle,
                r.third_trap_present.to_string(),
                r.merged.to_string(),
                r.min_secular_frequency.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minima of one sweep point with their pairwise connection levels.
struct PointResult {
    minima: Vec<Minimum>,
    /// Connection level (J) between minima i and j, row-major.
    levels: Vec<Option<f64>>,
    omega_min: Vec<f64>,
}

fn xy_dist(a: &[f64; 3], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// The two sites an addressable electrode sits between.
pub fn bordering_sites(layout: &ElectrodeLayout, group: &str) -> Result<[[f64; 2]; 2]> {
    let members: Vec<_> = layout.electrodes.iter().filter(|e| e.drive_group == group).collect();
    if members.is_empty() {
        return invalid(format!("unknown drive group {group:?}"));
    }
    if members.iter().any(|e| e.role != Role::RfAddressable) {
        return invalid(format!("drive group {group:?} is not an addressable RF electrode"));
    }
    let area: f64 = members.iter().map(|e| e.polygon.area()).sum();
    let mut c = [0.0; 2];
    for e in &members {
        let (a, p) = (e.polygon.area(), e.polygon.centroid());
        c[0] += a * p[0] / area;
        c[1] += a * p[1] / area;
    }
    let mut sites = layout.site_centers();
    if sites.len() < 2 {
        return invalid("layout has fewer than two sites");
    }
    sites.sort_by(|p, q| {
        let dp = (p[0] - c[0]).hypot(p[1] - c[1]);
        let dq = (q[0] - c[0]).hypot(q[1] - c[1]);
        dp.total_cmp(&dq)
    });
    Ok([sites[0], sites[1]])
}

/// Ramp one addressable electrode through `fractions` (descending, in
/// [0, 1]) and follow the two sites it borders.
///
/// The RF field is linear in the fraction, so the grid field is solved once
/// for the rest of the array and once for the addressed electrode and then
/// recombined per sweep point.
pub fn sweep_addressing(
    solver: &FieldSolver,
    layout: &ElectrodeLayout,
    drive: &DriveConfig,
    species: &Species,
    group: &str,
    fractions: &[f64],
    opts: SweepOptions,
) -> Result<MorphReport> {
    if fractions.is_empty() {
        return invalid("no sweep fractions");
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return invalid("fractions must lie in [0, 1]");
    }
    if fractions.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("fractions must be strictly decreasing");
    }
    if !solver.has_group(group) {
        return invalid(format!("unknown drive group {group:?}"));
    }
    if !(opts.merge_tol_ev >= 0.0) {
        return invalid("merge tolerance must be non-negative");
    }
    let home = bordering_sites(layout, group)?;
    let pitch = (home[0][0] - home[1][0]).hypot(home[0][1] - home[1][1]);
    let spacing = opts.spacing.unwrap_or(pitch / 30.0);
    let top = opts.top.unwrap_or(1.5 * pitch);
    let grid = default_box(solver, &layout.bounding_region, top, spacing)?;

    let base_drive = drive.clone().with_fraction(group, 0.0);
    let base_w = solver.rf_weights(&base_drive);
    let grp_w: Vec<f64> = solver.group_weights(group).iter().map(|w| w * drive.v_nom).collect();
    let fields = solver.gradient_grid(&grid, &[base_w.clone(), grp_w.clone()])?;

    let points: Result<Vec<PointResult>> = fractions
        .par_iter()
        .map(|&f| sweep_point(solver, drive, species, group, f, &grid, &fields, &home, pitch))
        .collect();
    let points = points?;

    let mid = [0.5 * (home[0][0] + home[1][0]), 0.5 * (home[0][1] + home[1][1])];
    let mut prev = [[home[0][0], home[0][1], 0.0], [home[1][0], home[1][1], 0.0]];
    let mut records = Vec::with_capacity(points.len());
    let mut merged_latch = false;
    for (k, (pr, &f)) in points.iter().zip(fractions).enumerate() {
        let n = pr.minima.len();
        if n == 0 {
            return Err(TrapError::NoSolution(format!("no minimum near the addressed pair at fraction {f}")));
        }
        let pick = |target: &[f64; 3], xy_only: bool| -> usize {
            let d = |m: &Minimum| {
                if xy_only {
                    xy_dist(&m.position, &[target[0], target[1]])
                } else {
                    (V3::from(m.position) - V3::from(*target)).norm()
                }
            };
            (0..n).min_by(|&i, &j| d(&pr.minima[i]).total_cmp(&d(&pr.minima[j]))).unwrap()
        };
        let ia = pick(&prev[0], k == 0);
        let ib = pick(&prev[1], k == 0);
        let pa = pr.minima[ia].position;
        let pb = pr.minima[ib].position;
        // A third trap sits over the electrode, nearer the midpoint than to
        // either site's home.
        let third = (0..n).filter(|&i| i != ia && i != ib).find(|&i| {
            let p = &pr.minima[i].position;
            xy_dist(p, &mid) < xy_dist(p, &home[0]).min(xy_dist(p, &home[1]))
        });
        let level = |i: usize, j: usize| pr.levels[i * n + j];
        let ua = pr.minima[ia].energy_ev;
        let ub = pr.minima[ib].energy_ev;
        let barrier = if ia == ib {
            0.0
        } else {
            level(ia, ib).map_or(f64::INFINITY, |l| (l / ELEMENTARY_CHARGE - ua.max(ub)).max(0.0))
        };
        let saddles = match third {
            Some(t) => [(ia, ua), (ib, ub)]
                .iter()
                .filter_map(|&(i, u)| level(i, t).map(|l| (l / ELEMENTARY_CHARGE - u).max(0.0)))
                .collect(),
            None => Vec::new(),
        };
        let coalesced = ia == ib || (V3::from(pa) - V3::from(pb)).norm() < grid.max_spacing();
        merged_latch |= coalesced || barrier < opts.merge_tol_ev;
        let distance = if ia == ib { 0.0 } else { xy_dist(&pa, &[pb[0], pb[1]]) };
        records.push(MorphRecord {
            fraction: f,
            site_positions: [pa, pb],
            inter_site_distance: distance,
            barrier_height: barrier,
            third_trap_present: third.is_some(),
            third_trap_position: third.map(|t| pr.minima[t].position),
            saddle_heights: saddles,
            merged: merged_latch,
            min_secular_frequency: pr.omega_min[ia].min(pr.omega_min[ib]),
        });
        prev = [pa, pb];
    }
    Ok(MorphReport { group: group.to_string(), home_sites: home, grid_spacing: grid.max_spacing(), records })
}

#[allow(clippy::too_many_arguments)]
fn sweep_point(
    solver: &FieldSolver,
    drive: &DriveConfig,
    species: &Species,
    group: &str,
    f: f64,
    grid: &Grid3,
    fields: &[Vec<V3>],
    home: &[[f64; 2]; 2],
    pitch: f64,
) -> Result<PointResult> {
    let d = drive.clone().with_fraction(group, f);
    let pot = Pseudopotential::new(solver, &d, species)?;
    let values: Result<Vec<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| pot.energy_with_field(&grid.point(i), &(fields[0][i] + f * fields[1][i])))
        .collect();
    let sampled = SampledGrid { grid: *grid, values: values? };
    // Keep minima in the corridor between and around the two sites.
    let (a, b) = (V3::new(home[0][0], home[0][1], 0.0), V3::new(home[1][0], home[1][1], 0.0));
    let axis = (b - a).normalize();
    let mid = 0.5 * (a + b);
    let minima: Vec<Minimum> = find_minima(&pot, &sampled)?
        .into_iter()
        .filter(|m| {
            let r = V3::new(m.position[0], m.position[1], 0.0) - mid;
            let along = r.dot(&axis);
            let across = (r - along * axis).norm();
            along.abs() <= 0.75 * pitch && across <= 0.4 * pitch
        })
        .collect();
    let n = minima.len();
    let seeds: Vec<usize> = minima.iter().map(|m| grid.nearest(&V3::from(m.position))).collect();
    let merge = sampled.merge_levels(&seeds)?;
    let mut levels = vec![None; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let l = connection_level(&pot, &sampled, &merge, i, j)?.map(|(e, ..)| e);
            levels[i * n + j] = l;
            levels[j * n + i] = l;
        }
    }
    let omega_min = minima
        .iter()
        .map(|m| secular_frequencies(&pot, &V3::from(m.position)).map_or(0.0, |s| s.omegas[0]))
        .collect();
    Ok(PointResult { minima, levels, omega_min })
}

/// Least-squares slope of log(y) against log(x), with the RMS residual.
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 4 {
        return Err(TrapError::InsufficientData(format!("power-law fit needs 4 positive points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(TrapError::InsufficientData("power-law fit needs distinct abscissae".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok((slope, rms))
}

/// Exponent of saddle height against fraction over the points with a third
/// trap and the sites still apart.
pub fn saddle_scaling_fit(report: &MorphReport) -> Result<(f64, f64)> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in &report.records {
        if !r.third_trap_present || r.merged || r.fraction <= 0.0 {
            continue;
        }
        if let Some(s) = r.saddle_heights.iter().copied().reduce(f64::min) {
            if s > 0.0 {
                x.push(r.fraction);
                y.push(s);
            }
        }
    }
    power_law_fit(&x, &y)
}
