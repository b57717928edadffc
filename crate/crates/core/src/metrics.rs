//! Pseudopotential, trap minima, secular frequencies, depth and depth efficiency.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{ca40_ion_mass, ELEMENTARY_CHARGE, NOMINAL_STABILITY_RATIO};
use crate::error::{invalid, Result, TrapError};
use crate::field::{DriveConfig, FieldSolver, Grid3, V3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub charge: f64,
    pub mass: f64,
    pub label: String,
}

impl Species {
    pub fn new(charge: f64, mass: f64, label: &str) -> Result<Self> {
        let s = Species { charge, mass, label: label.to_string() };
        s.validate()?;
        Ok(s)
    }

    pub fn ca40() -> Self {
        Species { charge: ELEMENTARY_CHARGE, mass: ca40_ion_mass(), label: "40Ca+".into() }
    }

    /// Particle with a given charge-to-mass ratio and mass.
    pub fn with_charge_to_mass(q_over_m: f64, mass: f64, label: &str) -> Result<Self> {
        Species::new(q_over_m * mass, mass, label)
    }

    pub fn charge_to_mass(&self) -> f64 {
        self.charge / self.mass
    }

    pub fn validate(&self) -> Result<()> {
        if self.charge == 0.0 || !self.charge.is_finite() {
            return invalid("species charge must be non-zero");
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return invalid("species mass must be positive");
        }
        Ok(())
    }
}

/// A scalar potential-energy landscape for a particle of known mass.
pub trait EffectivePotential: Sync {
    /// Potential energy in joules.
    fn energy(&self, p: &V3) -> Result<f64>;
    fn mass(&self) -> f64;
    /// In-plane length used to choose finite-difference steps.
    fn length_scale(&self) -> f64;
}

/// Pseudopotential q²|E|²/(4mΩ²) plus static energy from DC biases, a
/// uniform external field and, optionally, gravity along −z.
#[derive(Debug, Clone)]
pub struct Pseudopotential<'a> {
    solver: &'a FieldSolver,
    rf: Vec<f64>,
    dc: Vec<f64>,
    any_dc: bool,
    charge: f64,
    mass: f64,
    omega: f64,
    pub external_field: V3,
    pub gravity: f64,
}

impl<'a> Pseudopotential<'a> {
    pub fn new(solver: &'a FieldSolver, drive: &DriveConfig, species: &Species) -> Result<Self> {
        drive.validate()?;
        species.validate()?;
        let dc = solver.dc_weights(drive);
        Ok(Pseudopotential {
            solver,
            rf: solver.rf_weights(drive),
            any_dc: dc.iter().any(|&v| v != 0.0),
            dc,
            charge: species.charge,
            mass: species.mass,
            omega: drive.omega,
            external_field: V3::zeros(),
            gravity: 0.0,
        })
    }

    /// Replace the per-electrode RF amplitudes (volts).
    pub fn with_rf_weights(mut self, rf: Vec<f64>) -> Self {
        self.rf = rf;
        self
    }

    pub fn solver(&self) -> &FieldSolver {
        self.solver
    }

    pub fn rf_field(&self, p: &V3) -> Result<V3> {
        Ok(-self.solver.weighted(&self.rf, p, false)?.1)
    }

    /// Pseudopotential energy of an RF field amplitude, joules.
    pub fn pseudo_of_field(&self, e: &V3) -> f64 {
        self.charge * self.charge * e.norm_squared() / (4.0 * self.mass * self.omega * self.omega)
    }

    fn static_energy(&self, p: &V3) -> Result<f64> {
        let mut u = -self.charge * self.external_field.dot(p) + self.mass * self.gravity * p.z;
        if self.any_dc {
            u += self.charge * self.solver.weighted(&self.dc, p, true)?.0;
        }
        Ok(u)
    }

    /// Energy from a precomputed RF field at `p`.
    pub fn energy_with_field(&self, p: &V3, e: &V3) -> Result<f64> {
        Ok(self.pseudo_of_field(e) + self.static_energy(p)?)
    }

    pub fn energy_ev(&self, p: &V3) -> Result<f64> {
        Ok(self.energy(p)? / ELEMENTARY_CHARGE)
    }
}

impl EffectivePotential for Pseudopotential<'_> {
    fn energy(&self, p: &V3) -> Result<f64> {
        let e = self.rf_field(p)?;
        self.energy_with_field(p, &e)
    }
    fn mass(&self) -> f64 {
        self.mass
    }
    fn length_scale(&self) -> f64 {
        self.solver.length_scale()
    }
}

/// Pseudopotential in eV at one point.
pub fn pseudopotential_at(solver: &FieldSolver, drive: &DriveConfig, species: &Species, p: &V3) -> Result<f64> {
    Pseudopotential::new(solver, drive, species)?.energy_ev(p)
}

/// Finite-difference step of the Hessian: max(10⁻³ L, 1 µm).
pub fn hessian_step(length_scale: f64) -> f64 {
    (1e-3 * length_scale).max(1e-6)
}

fn hessian_at_step<P: EffectivePotential + ?Sized>(pot: &P, x: &V3, h: f64, f0: f64) -> Result<Matrix3<f64>> {
    let mut m = Matrix3::zeros();
    let e = |i: usize| {
        let mut v = V3::zeros();
        v[i] = h;
        v
    };
    for i in 0..3 {
        let fp = pot.energy(&(x + e(i)))?;
        let fm = pot.energy(&(x - e(i)))?;
        m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in i + 1..3 {
            let fpp = pot.energy(&(x + e(i) + e(j)))?;
            let fpm = pot.energy(&(x + e(i) - e(j)))?;
            let fmp = pot.energy(&(x - e(i) + e(j)))?;
            let fmm = pot.energy(&(x - e(i) - e(j)))?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Symmetric Hessian by central differences at steps h and h/2 combined by
/// one Richardson step. Units J/m².
pub fn hessian<P: EffectivePotential + ?Sized>(pot: &P, x: &V3, h: f64) -> Result<Matrix3<f64>> {
    let f0 = pot.energy(x)?;
    let a = hessian_at_step(pot, x, h, f0)?;
    let b = hessian_at_step(pot, x, 0.5 * h, f0)?;
    Ok((4.0 * b - a) / 3.0)
}

/// Fourth-order central-difference gradient, J/m.
pub fn gradient<P: EffectivePotential + ?Sized>(pot: &P, x: &V3, h: f64) -> Result<V3> {
    let mut g = V3::zeros();
    for i in 0..3 {
        let mut d = V3::zeros();
        d[i] = h;
        let f1 = pot.energy(&(x + d))?;
        let fm1 = pot.energy(&(x - d))?;
        let f2 = pot.energy(&(x + 2.0 * d))?;
        let fm2 = pot.energy(&(x - 2.0 * d))?;
        g[i] = (8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h);
    }
    Ok(g)
}

fn sorted_eigen(m: &Matrix3<f64>) -> ([f64; 3], [[f64; 3]; 3]) {
    let eig = SymmetricEigen::new(*m);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let mut vals = [0.0; 3];
    let mut axes = [[0.0; 3]; 3];
    for (k, &i) in idx.iter().enumerate() {
        vals[k] = eig.eigenvalues[i];
        let mut v = eig.eigenvectors.column(i).into_owned();
        // deterministic sign: largest component positive
        let imax = (0..3).max_by(|&a, &b| v[a].abs().partial_cmp(&v[b].abs()).unwrap()).unwrap();
        if v[imax] < 0.0 {
            v = -v;
        }
        axes[k] = [v[0], v[1], v[2]];
    }
    (vals, axes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Secular {
    /// Angular secular frequencies, ascending, rad/s.
    pub omegas: [f64; 3],
    /// Unit principal axes matching `omegas`.
    pub axes: [[f64; 3]; 3],
    /// Hessian of the potential energy, J/m².
    pub hessian: [[f64; 3]; 3],
}

/// Secular frequencies from the eigen-decomposition of the Hessian.
pub fn secular_frequencies<P: EffectivePotential + ?Sized>(pot: &P, site: &V3) -> Result<Secular> {
    let h = hessian(pot, site, hessian_step(pot.length_scale()))?;
    secular_from_hessian(&h, pot.mass())
}

pub fn secular_from_hessian(h: &Matrix3<f64>, mass: f64) -> Result<Secular> {
    let (vals, axes) = sorted_eigen(h);
    let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if vals[0] < -1e-6 * scale {
        return Err(TrapError::SaddleNotMinimum(vals));
    }
    let omegas = vals.map(|l| (l.max(0.0) / mass).sqrt());
    let mut hm = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            hm[i][j] = h[(i, j)];
        }
    }
    Ok(Secular { omegas, axes, hessian: hm })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    StableCentered,
    Marginal,
    UnstableRisk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityThresholds {
    pub centered: f64,
    pub marginal: f64,
}

impl Default for StabilityThresholds {
    fn default() -> Self {
        StabilityThresholds { centered: NOMINAL_STABILITY_RATIO + 1e-9, marginal: 0.25 }
    }
}

/// ω/Ω and its heuristic class.
pub fn stability_ratio(omega_sec: f64, omega_drive: f64) -> Result<(f64, StabilityClass)> {
    stability_ratio_with(omega_sec, omega_drive, StabilityThresholds::default())
}

pub fn stability_ratio_with(omega_sec: f64, omega_drive: f64, t: StabilityThresholds) -> Result<(f64, StabilityClass)> {
    if !(omega_drive > 0.0) || !(omega_sec >= 0.0) {
        return invalid("frequencies must be positive");
    }
    let r = omega_sec / omega_drive;
    let class = if r <= t.centered {
        StabilityClass::StableCentered
    } else if r <= t.marginal {
        StabilityClass::Marginal
    } else {
        StabilityClass::UnstableRisk
    };
    Ok((r, class))
}

/// κ_d = 4 m Ω² d² D / (q² V²) with D in eV.
pub fn depth_efficiency(depth_ev: f64, species: &Species, v: f64, omega: f64, d: f64) -> Result<f64> {
    if !(v > 0.0) || !(omega > 0.0) || !(d > 0.0) || !(depth_ev >= 0.0) {
        return invalid("depth efficiency needs positive V, Ω, d and non-negative depth");
    }
    let dj = depth_ev * ELEMENTARY_CHARGE;
    Ok(4.0 * species.mass * omega * omega * d * d * dj / (species.charge * species.charge * v * v))
}

/// Energies sampled on a grid, joules.
#[derive(Debug, Clone)]
pub struct SampledGrid {
    pub grid: Grid3,
    pub values: Vec<f64>,
}

impl SampledGrid {
    pub fn sample<P: EffectivePotential + ?Sized>(pot: &P, grid: Grid3) -> Result<Self> {
        let values: Result<Vec<f64>> = (0..grid.len()).into_par_iter().map(|i| pot.energy(&grid.point(i))).collect();
        Ok(SampledGrid { grid, values: values? })
    }

    fn neighbours(&self, idx: usize, out: &mut Vec<usize>) {
        out.clear();
        let [i, j, k] = self.grid.unravel(idx);
        let s = self.grid.shape;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    if di == 0 && dj == 0 && dk == 0 {
                        continue;
                    }
                    let (a, b, c) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                    if a < 0 || b < 0 || c < 0 || a >= s[0] as i64 || b >= s[1] as i64 || c >= s[2] as i64 {
                        continue;
                    }
                    out.push(self.grid.index(a as usize, b as usize, c as usize));
                }
            }
        }
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        let [i, j, k] = self.grid.unravel(idx);
        let s = self.grid.shape;
        i == 0 || j == 0 || k == 0 || i + 1 == s[0] || j + 1 == s[1] || k + 1 == s[2]
    }

    /// Interior nodes strictly below all 26 neighbours (ties broken by index).
    pub fn local_minima(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut nb = Vec::with_capacity(26);
        for idx in 0..self.values.len() {
            if self.on_boundary(idx) {
                continue;
            }
            let v = self.values[idx];
            self.neighbours(idx, &mut nb);
            if nb.iter().all(|&n| (self.values[n], n) > (v, idx)) {
                out.push(idx);
            }
        }
        out
    }

    /// Merge levels between seed nodes and the box boundary, by a sweep of
    /// union–find over nodes in ascending energy with 26-connectivity.
    pub fn merge_levels(&self, seeds: &[usize]) -> Result<MergeLevels> {
        let ns = seeds.len();
        if ns > 63 {
            return invalid("at most 63 seeds per merge sweep");
        }
        let n = self.values.len();
        let boundary_bit = ns;
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| self.values[a as usize].total_cmp(&self.values[b as usize]).then(a.cmp(&b)));
        let mut seed_mask = vec![0u64; n];
        for (s, &idx) in seeds.iter().enumerate() {
            seed_mask[idx] |= 1 << s;
        }
        const UNSET: u32 = u32::MAX;
        let mut parent = vec![UNSET; n];
        let mut mask = vec![0u64; n];
        let mut pair: Vec<Option<(f64, usize)>> = vec![None; (ns + 1) * (ns + 1)];
        let total_pairs = (ns + 1) * ns / 2;
        let mut done = 0usize;
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                let p = parent[x as usize];
                parent[x as usize] = parent[p as usize];
                x = p;
            }
            x
        }
        let mut nb = Vec::with_capacity(26);
        for &c in &order {
            let cu = c as usize;
            parent[cu] = c;
            mask[cu] = seed_mask[cu] | if self.on_boundary(cu) { 1 << boundary_bit } else { 0 };
            self.neighbours(cu, &mut nb);
            for &m in &nb {
                if parent[m] == UNSET {
                    continue;
                }
                let ra = find(&mut parent, c);
                let rb = find(&mut parent, m as u32);
                if ra == rb {
                    continue;
                }
                let (ma, mb) = (mask[ra as usize], mask[rb as usize]);
                if ma != 0 && mb != 0 {
                    for i in 0..=ns {
                        if ma & (1 << i) == 0 {
                            continue;
                        }
                        for j in 0..=ns {
                            if mb & (1 << j) == 0 || i == j {
                                continue;
                            }
                            let (lo, hi) = (i.min(j), i.max(j));
                            let slot = &mut pair[lo * (ns + 1) + hi];
                            if slot.is_none() {
                                *slot = Some((self.values[cu], cu));
                                done += 1;
                            }
                        }
                    }
                }
                parent[rb as usize] = ra;
                mask[ra as usize] = ma | mb;
            }
            if done == total_pairs {
                break;
            }
        }
        Ok(MergeLevels { n_seeds: ns, pair })
    }
}

/// Pairwise merge level and merge node; index `n_seeds` is the boundary.
#[derive(Debug, Clone)]
pub struct MergeLevels {
    n_seeds: usize,
    pair: Vec<Option<(f64, usize)>>,
}

impl MergeLevels {
    pub fn boundary(&self) -> usize {
        self.n_seeds
    }

    pub fn get(&self, a: usize, b: usize) -> Option<(f64, usize)> {
        let (lo, hi) = (a.min(b), a.max(b));
        self.pair[lo * (self.n_seeds + 1) + hi]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineOptions {
    pub max_iter: usize,
    /// Stop when the step falls below this fraction of the length scale.
    pub step_tol: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { max_iter: 60, step_tol: 1e-9 }
    }
}

/// Armijo-backtracked descent (Newton direction where the Hessian is positive
/// definite). Returns the point and whether it converged.
pub fn refine_minimum<P: EffectivePotential + ?Sized>(pot: &P, start: &V3, opts: RefineOptions) -> Result<(V3, bool)> {
    let l = pot.length_scale();
    let h = hessian_step(l);
    let mut x = *start;
    let mut fx = pot.energy(&x)?;
    for _ in 0..opts.max_iter {
        let g = gradient(pot, &x, h)?;
        let hm = hessian(pot, &x, h)?;
        let (vals, _) = sorted_eigen(&hm);
        let mut d = if vals[0] > 0.0 {
            hm.cholesky().map(|c| -c.solve(&g)).unwrap_or(-g / vals[2])
        } else {
            -g / vals[2].abs().max(f64::MIN_POSITIVE)
        };
        let dn = d.norm();
        if dn > 0.05 * l {
            d *= 0.05 * l / dn;
        }
        let slope = g.dot(&d);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let xn = x + t * d;
            if let Ok(fnew) = pot.energy(&xn) {
                if fnew <= fx + 1e-4 * t * slope {
                    x = xn;
                    fx = fnew;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        let step = t * d.norm();
        if !accepted || step < opts.step_tol * l {
            return Ok((x, vals[0] > 0.0));
        }
    }
    Ok((x, false))
}

/// Newton iteration on ∇U = 0 near a grid saddle. Accepts only a point within
/// `radius` of the start with exactly one negative Hessian eigenvalue.
pub fn refine_saddle<P: EffectivePotential + ?Sized>(pot: &P, start: &V3, radius: f64) -> Result<Option<V3>> {
    let l = pot.length_scale();
    let h = hessian_step(l);
    let mut x = *start;
    for _ in 0..30 {
        let g = gradient(pot, &x, h)?;
        let hm = hessian(pot, &x, h)?;
        let Some(d) = hm.lu().solve(&(-g)) else { return Ok(None) };
        x += d;
        if (x - start).norm() > radius || pot.energy(&x).is_err() {
            return Ok(None);
        }
        if d.norm() < 1e-9 * l {
            let (vals, _) = sorted_eigen(&hessian(pot, &x, h)?);
            return Ok((vals[0] < 0.0 && vals[1] > 0.0).then_some(x));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub position: [f64; 3],
    pub energy_ev: f64,
    pub converged: bool,
}

/// All interior grid minima, refined and de-duplicated (half a grid cell).
pub fn find_minima<P: EffectivePotential + ?Sized>(pot: &P, sampled: &SampledGrid) -> Result<Vec<Minimum>> {
    let starts = sampled.local_minima();
    let refined: Result<Vec<(V3, bool)>> = starts
        .par_iter()
        .map(|&i| refine_minimum(pot, &sampled.grid.point(i), RefineOptions::default()))
        .collect();
    let tol = 0.5 * sampled.grid.max_spacing();
    let mut out: Vec<Minimum> = Vec::new();
    for (x, ok) in refined? {
        if out.iter().any(|m| (V3::from(m.position) - x).norm() < tol) {
            continue;
        }
        out.push(Minimum { position: [x.x, x.y, x.z], energy_ev: pot.energy(&x)? / ELEMENTARY_CHARGE, converged: ok });
    }
    out.sort_by(|a, b| {
        (a.position[1], a.position[0], a.position[2]).partial_cmp(&(b.position[1], b.position[0], b.position[2])).unwrap()
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Depth {
    pub depth_ev: f64,
    pub escape_point: [f64; 3],
    /// Half the energy spread among the merge node's neighbours.
    pub uncertainty_ev: f64,
    /// True when the escape point was polished to a first-order saddle.
    pub saddle_refined: bool,
}

/// Energy of the lowest connection between merge-tree seeds `a` and `b`,
/// polished to a first-order saddle when the merge node is interior.
pub fn connection_level<P: EffectivePotential + ?Sized>(
    pot: &P,
    sampled: &SampledGrid,
    levels: &MergeLevels,
    a: usize,
    b: usize,
) -> Result<Option<(f64, V3, f64, bool)>> {
    let Some((lvl, node)) = levels.get(a, b) else { return Ok(None) };
    let p = sampled.grid.point(node);
    let mut nb = Vec::new();
    sampled.neighbours(node, &mut nb);
    let (lo, hi) = nb.iter().fold((lvl, lvl), |(lo, hi), &n| (lo.min(sampled.values[n]), hi.max(sampled.values[n])));
    let unc = 0.5 * (hi - lo);
    if !sampled.on_boundary(node) {
        if let Some(s) = refine_saddle(pot, &p, 2.0 * sampled.grid.max_spacing())? {
            return Ok(Some((pot.energy(&s)?, s, unc, true)));
        }
    }
    Ok(Some((lvl, p, unc, false)))
}

/// Depth of the well at `site`: lowest energy at which its basin connects to
/// the sampling-box boundary (domain faces and electrode surface), minus the
/// site energy.
pub fn trap_depth<P: EffectivePotential + ?Sized>(pot: &P, sampled: &SampledGrid, site: &V3) -> Result<Depth> {
    let seed = sampled.grid.nearest(site);
    let levels = sampled.merge_levels(&[seed])?;
    let u0 = pot.energy(site)?;
    match connection_level(pot, sampled, &levels, 0, levels.boundary())? {
        Some((lvl, p, unc, refined)) => Ok(Depth {
            depth_ev: ((lvl - u0) / ELEMENTARY_CHARGE).max(0.0),
            escape_point: [p.x, p.y, p.z],
            uncertainty_ev: unc / ELEMENTARY_CHARGE,
            saddle_refined: refined,
        }),
        None => Err(TrapError::NoSolution("site never connects to the boundary".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapSiteReport {
    pub position: [f64; 3],
    pub energy_ev: f64,
    pub secular_frequencies: [f64; 3],
    pub axes: [[f64; 3]; 3],
    pub stability_ratios: [f64; 3],
    pub stability_class: StabilityClass,
    pub depth_ev: f64,
    pub depth_uncertainty_ev: f64,
    pub escape_point: [f64; 3],
    pub kappa_d: f64,
    pub hessian: [[f64; 3]; 3],
    pub converged: bool,
}

/// Full report for each site found on the sampled grid.
pub fn analyze_sites(
    pot: &Pseudopotential<'_>,
    sampled: &SampledGrid,
    drive: &DriveConfig,
    species: &Species,
) -> Result<Vec<TrapSiteReport>> {
    let minima = find_minima(pot, sampled)?;
    let reports: Result<Vec<TrapSiteReport>> = minima
        .par_iter()
        .map(|m| {
            let x = V3::from(m.position);
            let sec = secular_frequencies(pot, &x)?;
            let depth = trap_depth(pot, sampled, &x)?;
            let ratios = sec.omegas.map(|w| w / drive.omega);
            let (_, class) = stability_ratio(sec.omegas[2], drive.omega)?;
            let kappa = if drive.v_nom > 0.0 {
                depth_efficiency(depth.depth_ev, species, drive.v_nom, drive.omega, x.z)?
            } else {
                0.0
            };
            Ok(TrapSiteReport {
                position: m.position,
                energy_ev: m.energy_ev,
                secular_frequencies: sec.omegas,
                axes: sec.axes,
                stability_ratios: ratios,
                stability_class: class,
                depth_ev: depth.depth_ev,
                depth_uncertainty_ev: depth.uncertainty_ev,
                escape_point: depth.escape_point,
                kappa_d: kappa,
                hessian: sec.hessian,
                converged: m.converged,
            })
        })
        .collect();
    reports
}

/// Sampling box over the layout's bounding region from `z_lo` up to the
/// ground plane (or `top` when there is none).
pub fn default_box(solver: &FieldSolver, bounding: &crate::geometry::Rect, top: f64, spacing: f64) -> Result<Grid3> {
    if !(spacing > 0.0) {
        return invalid("grid spacing must be positive");
    }
    let z_hi = solver.ground_plane().map(|h| h * (1.0 - 1e-3)).unwrap_or(top);
    let z_lo = (0.05 * spacing).min(0.5 * z_hi);
    let count = |lo: f64, hi: f64| ((hi - lo) / spacing).round().max(1.0) as usize + 1;
    Grid3::spanning(
        [bounding.min[0], bounding.min[1], z_lo],
        [bounding.max[0], bounding.max[1], z_hi],
        [
            count(bounding.min[0], bounding.max[0]),
            count(bounding.min[1], bounding.max[1]),
            count(z_lo, z_hi),
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// U = ½ Σ k_i x_i² around a centre.
    struct Harmonic {
        k: [f64; 3],
        c: V3,
        m: f64,
    }
    impl EffectivePotential for Harmonic {
        fn energy(&self, p: &V3) -> Result<f64> {
            let d = p - self.c;
            Ok(0.5 * (self.k[0] * d.x * d.x + self.k[1] * d.y * d.y + self.k[2] * d.z * d.z))
        }
        fn mass(&self) -> f64 {
            self.m
        }
        fn length_scale(&self) -> f64 {
            1e-3
        }
    }

    #[test]
    fn pseudopotential_uniform_field_value() {
        // |E| = 1e5 V/m, Ca-40, Ω = 2π·10 MHz; 30-digit evaluation gives 1.52895214741889 eV.
        let q = ELEMENTARY_CHARGE;
        let m = ca40_ion_mass();
        let om = 2.0 * std::f64::consts::PI * 1e7;
        let ev = q * q * 1e10 / (4.0 * m * om * om) / q;
        assert_relative_eq!(ev, 1.528_952_147_418_89, max_relative = 1e-13);
    }

    #[test]
    fn harmonic_secular_frequencies() {
        let m = 6.6e-26;
        let pot = Harmonic { k: [1e-12, 4e-12, 9e-12], c: V3::new(1e-4, 0.0, 2e-4), m };
        let s = secular_frequencies(&pot, &pot.c).unwrap();
        for (w, k) in s.omegas.iter().zip(pot.k) {
            assert_relative_eq!(*w, (k / m).sqrt(), max_relative = 1e-6);
        }
        assert!((s.axes[0][0].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn saddle_is_rejected() {
        let h = Matrix3::from_diagonal(&V3::new(-1.0, 2.0, 3.0));
        assert!(matches!(secular_from_hessian(&h, 1.0), Err(TrapError::SaddleNotMinimum(_))));
    }

    #[test]
    fn stability_classes() {
        let (r, c) = stability_ratio(1.0, 7.0).unwrap();
        assert_relative_eq!(r, 1.0 / 7.0);
        assert_eq!(c, StabilityClass::StableCentered);
        assert_eq!(stability_ratio(0.0, 7.0).unwrap().1, StabilityClass::StableCentered);
        assert_eq!(stability_ratio(0.2, 1.0).unwrap().1, StabilityClass::Marginal);
        assert_eq!(stability_ratio(0.3, 1.0).unwrap().1, StabilityClass::UnstableRisk);
        assert!(stability_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn kappa_of_hyperbolic_depth_is_one() {
        let s = Species::ca40();
        let (v, om, d) = (200.0, 2e7 * std::f64::consts::PI, 5e-4);
        let d_ev = s.charge * s.charge * v * v / (4.0 * s.mass * om * om * d * d) / ELEMENTARY_CHARGE;
        assert_relative_eq!(depth_efficiency(d_ev, &s, v, om, d).unwrap(), 1.0, max_relative = 1e-12);
        assert!(depth_efficiency(1.0, &s, 0.0, om, d).is_err());
    }

    #[test]
    fn refine_finds_harmonic_centre() {
        let pot = Harmonic { k: [1.0, 2.0, 3.0], c: V3::new(1e-4, -2e-4, 3e-4), m: 1.0 };
        let (x, ok) = refine_minimum(&pot, &V3::new(0.0, 0.0, 1e-4), RefineOptions::default()).unwrap();
        assert!(ok);
        assert!((x - pot.c).norm() < 1e-12);
    }
}
