//! Gapless-plane electrostatics with an optional grounded plane above the
//! electrodes.
//!
//! An electrode at potential V on the z = 0 plane contributes V·Ω/2π, where Ω
//! is the solid angle it subtends. Polygon solid angles are summed edge by
//! edge against the foot of the field point; the gradient is the analytic
//! line integral of the same decomposition. A grounded plane at z = H is
//! represented by the image series of the two planes, truncated after a fixed
//! number of images and closed with an integral estimate of the remainder.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};
use crate::geometry::{signed_area, ElectrodeLayout, Role, Vec2};

pub type V3 = Vector3<f64>;

/// RF drive and DC biases applied to a layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub v_nom: f64,
    pub omega: f64,
    /// V/V_nom per drive group; RF groups default to 1.
    #[serde(default)]
    pub amplitude_fraction: BTreeMap<String, f64>,
    /// Static bias per drive group, volts.
    #[serde(default)]
    pub dc_bias: BTreeMap<String, f64>,
    /// Common RF phase, radians.
    #[serde(default)]
    pub phase: f64,
}

impl DriveConfig {
    pub fn new(v_nom: f64, omega: f64) -> Self {
        DriveConfig { v_nom, omega, amplitude_fraction: BTreeMap::new(), dc_bias: BTreeMap::new(), phase: 0.0 }
    }

    pub fn with_fraction(mut self, group: &str, f: f64) -> Self {
        self.amplitude_fraction.insert(group.to_string(), f);
        self
    }

    pub fn with_bias(mut self, group: &str, v: f64) -> Self {
        self.dc_bias.insert(group.to_string(), v);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return invalid(format!("omega must be positive, got {}", self.omega));
        }
        if !(self.v_nom >= 0.0 && self.v_nom.is_finite()) {
            return invalid(format!("v_nom must be non-negative, got {}", self.v_nom));
        }
        for (g, f) in &self.amplitude_fraction {
            if !(0.0..=1.0).contains(f) {
                return invalid(format!("amplitude fraction of {g} is {f}, outside [0, 1]"));
            }
        }
        if self.dc_bias.values().any(|v| !v.is_finite()) || !self.phase.is_finite() {
            return invalid("non-finite bias or phase");
        }
        Ok(())
    }

    pub fn fraction(&self, group: &str, role: Role) -> f64 {
        if role.is_rf() {
            self.amplitude_fraction.get(group).copied().unwrap_or(1.0)
        } else {
            0.0
        }
    }

    pub fn bias(&self, group: &str) -> f64 {
        self.dc_bias.get(group).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldOptions {
    /// Number of image terms for a ground plane (pairs of planes ±2nH).
    pub image_count: usize,
    /// Close the truncated image series with an integral remainder estimate.
    pub tail_correction: bool,
    /// Split gaps at their midline by dilating every electrode by gap/2.
    pub split_gaps: bool,
}

impl Default for FieldOptions {
    fn default() -> Self {
        FieldOptions { image_count: 8, tail_correction: true, split_gaps: true }
    }
}

/// Per-electrode weights β_i and gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEvaluation {
    pub ids: Vec<String>,
    pub beta: Vec<f64>,
    pub grad: Vec<V3>,
}

#[derive(Debug, Clone)]
struct Ring {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Compiled {
    id: String,
    role: Role,
    group: String,
    rings: Vec<Ring>,
}

/// Three-point Gauss–Legendre nodes and weights on [-1, 1].
const GL3: [(f64, f64); 3] = [(-0.774_596_669_241_483_4, 5.0 / 9.0), (0.0, 8.0 / 9.0), (0.774_596_669_241_483_4, 5.0 / 9.0)];

/// Offset a closed ring by `d` to the right of its direction of travel
/// (outward for a counter-clockwise ring), mitering every vertex.
pub fn offset_ring(ring: &[Vec2], d: f64) -> Vec<Vec2> {
    let n = ring.len();
    let normal = |p: Vec2, q: Vec2| {
        let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
        let l = (ex * ex + ey * ey).sqrt();
        [ey / l, -ex / l]
    };
    (0..n)
        .map(|i| {
            let prev = ring[(i + n - 1) % n];
            let p = ring[i];
            let next = ring[(i + 1) % n];
            let n1 = normal(prev, p);
            let n2 = normal(p, next);
            let c = (1.0 + n1[0] * n2[0] + n1[1] * n2[1]).max(0.05);
            [p[0] + d * (n1[0] + n2[0]) / c, p[1] + d * (n1[1] + n2[1]) / c]
        })
        .collect()
}

/// Accumulated Σ w·f and Σ w·∇f for a set of rings at one height.
#[derive(Debug, Clone, Copy, Default)]
struct Plane {
    f: f64,
    g: [f64; 3],
}

#[inline]
fn ring_eval(ring: &Ring, px: f64, py: f64, z: f64, w: f64, want_f: bool, out: &mut Plane, buf: &mut Vec<[f64; 3]>) {
    let n = ring.xs.len();
    buf.clear();
    let z2 = z * z;
    for k in 0..n {
        let ax = ring.xs[k] - px;
        let ay = ring.ys[k] - py;
        buf.push([ax, ay, (ax * ax + ay * ay + z2).sqrt()]);
    }
    let mut om = 0.0;
    let (mut gx, mut gy, mut gz) = (0.0, 0.0, 0.0);
    let mut a = buf[n - 1];
    for &b in buf.iter() {
        let cross = a[0] * b[1] - a[1] * b[0];
        let dot = a[0] * b[0] + a[1] * b[1] + z2;
        let rr = a[2] * b[2];
        if want_f {
            om += cross.atan2(rr + dot + z * (a[2] + b[2]));
        }
        let den = rr * (rr + dot);
        if den > 0.0 {
            let fac = (a[2] + b[2]) / den;
            gx += fac * z * (b[1] - a[1]);
            gy += fac * z * (a[0] - b[0]);
            gz += fac * cross;
        }
        a = b;
    }
    // Ω = 2 Σ atan2(..); β = Ω/2π; ∇β = -(1/2π) Σ fac·(A×B)
    out.f += w * om / PI;
    let s = -w / (2.0 * PI);
    out.g[0] += s * gx;
    out.g[1] += s * gy;
    out.g[2] += s * gz;
}

/// Immutable solver for one layout.
#[derive(Debug, Clone)]
pub struct FieldSolver {
    electrodes: Vec<Compiled>,
    ground_plane: Option<f64>,
    opts: FieldOptions,
    length_scale: f64,
}

impl FieldSolver {
    pub fn new(layout: &ElectrodeLayout) -> Result<Self> {
        Self::with_options(layout, FieldOptions::default())
    }

    pub fn with_options(layout: &ElectrodeLayout, opts: FieldOptions) -> Result<Self> {
        if let Some(h) = layout.ground_plane_height {
            if !(h > 0.0 && h.is_finite()) {
                return invalid(format!("ground_plane_height must be positive, got {h}"));
            }
            if opts.image_count % 2 != 0 {
                return invalid("image_count must be even");
            }
        }
        let half_gap = if opts.split_gaps { 0.5 * layout.gap.unwrap_or(0.0) } else { 0.0 };
        let mut electrodes = Vec::with_capacity(layout.electrodes.len());
        for e in &layout.electrodes {
            let mut rings = Vec::new();
            let mut outer = e.polygon.outer.clone();
            if signed_area(&outer) < 0.0 {
                outer.reverse();
            }
            let mut all = vec![outer];
            for h in &e.polygon.holes {
                let mut h = h.clone();
                if signed_area(&h) > 0.0 {
                    h.reverse();
                }
                all.push(h);
            }
            for r in all {
                let r = if half_gap > 0.0 { offset_ring(&r, half_gap) } else { r };
                rings.push(Ring { xs: r.iter().map(|p| p[0]).collect(), ys: r.iter().map(|p| p[1]).collect() });
            }
            electrodes.push(Compiled { id: e.id.clone(), role: e.role, group: e.drive_group.clone(), rings });
        }
        Ok(FieldSolver {
            electrodes,
            ground_plane: layout.ground_plane_height,
            opts,
            length_scale: layout.characteristic_length(),
        })
    }

    pub fn ground_plane(&self) -> Option<f64> {
        self.ground_plane
    }

    pub fn options(&self) -> FieldOptions {
        self.opts
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.electrodes.iter().map(|e| e.id.as_str())
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.electrodes.iter().map(|e| e.group.clone()).collect();
        g.sort();
        g.dedup();
        g
    }

    pub fn has_group(&self, group: &str) -> bool {
        self.electrodes.iter().any(|e| e.group == group)
    }

    pub fn check_domain(&self, p: &V3) -> Result<()> {
        let ok = p.iter().all(|c| c.is_finite()) && p.z > 0.0 && self.ground_plane.is_none_or(|h| p.z < h);
        if ok {
            Ok(())
        } else {
            Err(TrapError::OutOfDomain { x: p.x, y: p.y, z: p.z })
        }
    }

    /// Per-electrode weights: 1 on `group`, 0 elsewhere.
    pub fn group_weights(&self, group: &str) -> Vec<f64> {
        self.electrodes.iter().map(|e| if e.group == group { 1.0 } else { 0.0 }).collect()
    }

    /// Per-electrode RF amplitudes in volts.
    pub fn rf_weights(&self, drive: &DriveConfig) -> Vec<f64> {
        self.electrodes.iter().map(|e| drive.v_nom * drive.fraction(&e.group, e.role)).collect()
    }

    /// Per-electrode static biases in volts.
    pub fn dc_weights(&self, drive: &DriveConfig) -> Vec<f64> {
        self.electrodes.iter().map(|e| drive.bias(&e.group)).collect()
    }

    fn plane_sum(&self, weights: &[f64], px: f64, py: f64, z: f64, want_f: bool, buf: &mut Vec<[f64; 3]>) -> Plane {
        let mut out = Plane::default();
        for (e, &w) in self.electrodes.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for r in &e.rings {
                ring_eval(r, px, py, z, w, want_f, &mut out, buf);
            }
        }
        out
    }

    /// Σ w_i u_i and its gradient, where u_i is the boundary-value solution
    /// for electrode i at unit potential (images included).
    pub fn weighted(&self, weights: &[f64], p: &V3, want_value: bool) -> Result<(f64, V3)> {
        self.check_domain(p)?;
        debug_assert_eq!(weights.len(), self.electrodes.len());
        let mut buf = Vec::with_capacity(128);
        let (x, y, z) = (p.x, p.y, p.z);
        let base = self.plane_sum(weights, x, y, z, want_value, &mut buf);
        let mut f = base.f;
        let mut g = base.g;
        if let Some(h) = self.ground_plane {
            let pairs = self.opts.image_count / 2;
            for n in 1..=pairs {
                let c = 2.0 * n as f64 * h;
                let up = self.plane_sum(weights, x, y, c + z, want_value, &mut buf);
                let dn = self.plane_sum(weights, x, y, c - z, want_value, &mut buf);
                f += up.f - dn.f;
                g[0] += up.g[0] - dn.g[0];
                g[1] += up.g[1] - dn.g[1];
                g[2] += up.g[2] + dn.g[2];
            }
            if self.opts.tail_correction {
                let a = (2 * pairs + 1) as f64 * h;
                let k = -1.0 / (2.0 * h);
                for (xi, w) in GL3 {
                    let t = self.plane_sum(weights, x, y, a + z * xi, true, &mut buf);
                    f += k * z * w * t.f;
                    g[0] += k * z * w * t.g[0];
                    g[1] += k * z * w * t.g[1];
                    g[2] += k * w * (t.f + z * xi * t.g[2]);
                }
            }
        }
        Ok((f, V3::new(g[0], g[1], g[2])))
    }

    pub fn basis_at(&self, p: &V3) -> Result<BasisEvaluation> {
        let n = self.electrodes.len();
        let mut beta = Vec::with_capacity(n);
        let mut grad = Vec::with_capacity(n);
        let mut w = vec![0.0; n];
        for i in 0..n {
            w[i] = 1.0;
            let (b, g) = self.weighted(&w, p, true)?;
            w[i] = 0.0;
            beta.push(b);
            grad.push(g);
        }
        Ok(BasisEvaluation { ids: self.electrodes.iter().map(|e| e.id.clone()).collect(), beta, grad })
    }

    /// Instantaneous potential with the RF at phase angle `phase_angle`.
    pub fn potential_at(&self, drive: &DriveConfig, p: &V3, phase_angle: f64) -> Result<f64> {
        let c = phase_angle.cos();
        let w: Vec<f64> = self
            .rf_weights(drive)
            .iter()
            .zip(self.dc_weights(drive))
            .map(|(rf, dc)| rf * c + dc)
            .collect();
        Ok(self.weighted(&w, p, true)?.0)
    }

    /// RF field amplitude −∇Φ_RF, V/m.
    pub fn rf_field_at(&self, drive: &DriveConfig, p: &V3) -> Result<V3> {
        Ok(-self.weighted(&self.rf_weights(drive), p, false)?.1)
    }

    /// Static field from the DC biases, V/m.
    pub fn dc_field_at(&self, drive: &DriveConfig, p: &V3) -> Result<V3> {
        Ok(-self.weighted(&self.dc_weights(drive), p, false)?.1)
    }

    /// Smallest even image count (≥ 2) whose weighted potential at `p` differs
    /// from the next order by less than `rel_tol`.
    pub fn converged_image_count(&self, weights: &[f64], p: &V3, rel_tol: f64, max_count: usize) -> Result<usize> {
        if self.ground_plane.is_none() {
            return Ok(0);
        }
        let mut probe = self.clone();
        let mut prev = None;
        let mut count = 2;
        while count <= max_count {
            probe.opts.image_count = count;
            let v = probe.weighted(weights, p, true)?.0;
            if let Some(pv) = prev {
                let pv: f64 = pv;
                if (v - pv).abs() <= rel_tol * v.abs().max(f64::MIN_POSITIVE) {
                    return Ok(count - 2);
                }
            }
            prev = Some(v);
            count += 2;
        }
        Err(TrapError::NoSolution(format!("image series not converged to {rel_tol} within {max_count} images")))
    }

    /// Evaluate gradients of several weight vectors over a grid, in parallel.
    pub fn gradient_grid(&self, grid: &Grid3, weight_sets: &[Vec<f64>]) -> Result<Vec<Vec<V3>>> {
        let n = grid.len();
        let mut out = Vec::with_capacity(weight_sets.len());
        for w in weight_sets {
            let v: Result<Vec<V3>> = (0..n).into_par_iter().map(|i| Ok(self.weighted(w, &grid.point(i), false)?.1)).collect();
            out.push(v?);
        }
        Ok(out)
    }
}

/// Regular 3D grid. Linear index is lexicographic in (x, y, z), z fastest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid3 {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub shape: [usize; 3],
}

impl Grid3 {
    /// Grid spanning [lo, hi] with `shape` nodes per axis (end points included).
    pub fn spanning(lo: [f64; 3], hi: [f64; 3], shape: [usize; 3]) -> Result<Self> {
        let mut spacing = [0.0; 3];
        for k in 0..3 {
            if shape[k] == 0 || !(hi[k] >= lo[k]) {
                return invalid("grid needs positive shape and hi ≥ lo");
            }
            spacing[k] = if shape[k] > 1 { (hi[k] - lo[k]) / (shape[k] - 1) as f64 } else { 0.0 };
        }
        Ok(Grid3 { origin: lo, spacing, shape })
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.shape[2];
        let ij = idx / self.shape[2];
        [ij / self.shape[1], ij % self.shape[1], k]
    }

    #[inline]
    pub fn point(&self, idx: usize) -> V3 {
        let [i, j, k] = self.unravel(idx);
        V3::new(
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        )
    }

    /// Nearest node to `p`, clamped into the grid.
    pub fn nearest(&self, p: &V3) -> usize {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let t = if self.spacing[a] > 0.0 { ((p[a] - self.origin[a]) / self.spacing[a]).round() } else { 0.0 };
            ijk[a] = t.clamp(0.0, (self.shape[a] - 1) as f64) as usize;
        }
        self.index(ijk[0], ijk[1], ijk[2])
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{circle, make_point_trap, Electrode, Polygon, Rect, LAYOUT_VERSION};
    use approx::assert_relative_eq;

    fn disc_layout(r: f64, n: usize, h: Option<f64>) -> ElectrodeLayout {
        ElectrodeLayout {
            version: LAYOUT_VERSION,
            electrodes: vec![Electrode {
                id: "d".into(),
                role: Role::RfFixed,
                drive_group: "rf".into(),
                polygon: Polygon::new(circle([0.0, 0.0], r, n), vec![]),
            }],
            ground_plane_height: h,
            bounding_region: Rect { min: [-r * 2.0, -r * 2.0], max: [r * 2.0, r * 2.0] },
            gap: None,
        }
    }

    #[test]
    fn disc_on_axis_matches_closed_form() {
        // A 4096-gon with matched area approximates the disc closely on axis.
        let r = 1e-3;
        let s = FieldSolver::new(&disc_layout(r, 4096, None)).unwrap();
        for z in [1e-5, 3e-4, 1e-3, 5e-3] {
            let b = s.basis_at(&V3::new(0.0, 0.0, z)).unwrap();
            let exact = 1.0 - z / (z * z + r * r).sqrt();
            assert_relative_eq!(b.beta[0], exact, max_relative = 1e-6);
            let dexact = -r * r / (z * z + r * r).powf(1.5);
            assert_relative_eq!(b.grad[0].z, dexact, max_relative = 1e-6);
        }
    }

    #[test]
    fn half_space_limits() {
        let s = FieldSolver::new(&disc_layout(1e-3, 64, None)).unwrap();
        let b = s.basis_at(&V3::new(1e-4, -2e-4, 1e-9)).unwrap();
        assert_relative_eq!(b.beta[0], 1.0, epsilon = 1e-5);
        let b = s.basis_at(&V3::new(0.5, 0.0, 1e-9)).unwrap();
        assert!(b.beta[0].abs() < 1e-6);
    }

    #[test]
    fn ground_plane_boundary_condition() {
        let l = make_point_trap(200e-6, 300e-6, 50e-6).unwrap().with_ground_plane(Some(500e-6));
        let s = FieldSolver::new(&l).unwrap();
        let d = DriveConfig::new(100.0, 1.0);
        for (x, y) in [(0.0, 0.0), (3e-4, 1e-4), (1e-3, -2e-4)] {
            let v = s.potential_at(&d, &V3::new(x, y, 500e-6 * (1.0 - 1e-12)), 0.0).unwrap();
            assert!(v.abs() < 1e-3 * 100.0, "{v}");
        }
    }

    #[test]
    fn out_of_domain() {
        let l = make_point_trap(200e-6, 300e-6, 50e-6).unwrap().with_ground_plane(Some(500e-6));
        let s = FieldSolver::new(&l).unwrap();
        assert!(matches!(s.basis_at(&V3::new(0.0, 0.0, 0.0)), Err(TrapError::OutOfDomain { .. })));
        assert!(matches!(s.basis_at(&V3::new(0.0, 0.0, 6e-4)), Err(TrapError::OutOfDomain { .. })));
    }

    #[test]
    fn offset_square_is_mitered() {
        let sq = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let o = offset_ring(&sq, 0.1);
        assert_relative_eq!(o[0][0], -0.1, epsilon = 1e-15);
        assert_relative_eq!(o[0][1], -0.1, epsilon = 1e-15);
        assert_relative_eq!(signed_area(&o), 1.44, epsilon = 1e-12);
    }

    #[test]
    fn image_count_converges() {
        let l = make_point_trap(200e-6, 300e-6, 50e-6).unwrap().with_ground_plane(Some(500e-6));
        let s = FieldSolver::new(&l).unwrap();
        let w = s.rf_weights(&DriveConfig::new(1.0, 1.0));
        let n = s.converged_image_count(&w, &V3::new(0.0, 0.0, 2e-4), 1e-4, 64).unwrap();
        assert!(n <= 8, "{n}");
    }
}
