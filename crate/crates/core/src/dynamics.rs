//! Time-domain integration of a single charged particle in the full RF field.

use std::f64::consts::TAU;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::constants::STANDARD_GRAVITY;
use crate::error::{invalid, Result, TrapError};
use crate::field::{DriveConfig, FieldSolver, V3};
use crate::geometry::ArrayParams;
use crate::metrics::{refine_minimum, secular_frequencies, Pseudopotential, RefineOptions, Secular, Species};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub time: f64,
}

impl SimState {
    pub fn at_rest(position: [f64; 3]) -> Self {
        SimState { position, velocity: [0.0; 3], time: 0.0 }
    }
}

/// Drive, particle and external forces for one trajectory. The RF drive is
/// V·cos(Ωt + phase), so t = 0 is at maximum voltage for zero phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub drive: DriveConfig,
    pub species: Species,
    /// Uniform static field, V/m (e.g. a gravity-compensation mesh).
    #[serde(default)]
    pub external_field: [f64; 3],
    #[serde(default)]
    pub gravity: bool,
    pub duration: f64,
    /// Fixed step; defaults to one hundredth of an RF period.
    #[serde(default)]
    pub timestep: Option<f64>,
    /// Linear damping rate γ in a = F/m − γv, 1/s.
    #[serde(default)]
    pub drag: f64,
    /// Keep every n-th step in the trajectory.
    #[serde(default = "one")]
    pub sample_every: usize,
    /// Box [min, max] beyond which the particle counts as lost, on top of
    /// the solver domain.
    #[serde(default)]
    pub bounds: Option<[[f64; 3]; 2]>,
}

fn one() -> usize {
    1
}

impl Scenario {
    pub fn new(drive: DriveConfig, species: Species, duration: f64) -> Self {
        Scenario {
            drive,
            species,
            external_field: [0.0; 3],
            gravity: false,
            duration,
            timestep: None,
            drag: 0.0,
            sample_every: 1,
            bounds: None,
        }
    }

    pub fn rf_period(&self) -> f64 {
        TAU / self.drive.omega
    }

    pub fn dt(&self) -> f64 {
        self.timestep.unwrap_or(self.rf_period() / 100.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.drive.validate()?;
        if !(self.species.mass > 0.0 && self.species.mass.is_finite()) || !self.species.charge.is_finite() {
            return invalid("particle needs a positive mass and finite charge");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return invalid("duration must be positive");
        }
        let dt = self.dt();
        if !(dt > 0.0) || dt > self.rf_period() / 50.0 * (1.0 + 1e-12) {
            return invalid(format!("timestep {dt:e} s does not resolve the RF period (need ≤ T/50)"));
        }
        if !(self.drag >= 0.0 && self.drag.is_finite()) {
            return invalid("drag must be non-negative");
        }
        if self.sample_every == 0 {
            return invalid("sample_every must be at least 1");
        }
        if self.external_field.iter().any(|c| !c.is_finite()) {
            return invalid("external field must be finite");
        }
        if let Some([lo, hi]) = self.bounds {
            if (0..3).any(|i| !(lo[i] < hi[i])) {
                return invalid("bounds must have min < max on every axis");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SimState>,
    /// Spacing of the stored states, s.
    pub sample_interval: f64,
    /// The particle left the solver domain and the run was truncated.
    pub escaped: bool,
}

impl Trajectory {
    pub fn duration(&self) -> f64 {
        match (self.states.first(), self.states.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    pub fn last(&self) -> Option<&SimState> {
        self.states.last()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "x", "y", "z", "vx", "vy", "vz"])?;
        for s in &self.states {
            let [x, y, z] = s.position;
            let [vx, vy, vz] = s.velocity;
            w.write_record([s.time, x, y, z, vx, vy, vz].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Force per unit mass from the electrodes and the uniform terms.
struct Accel<'a> {
    solver: &'a FieldSolver,
    rf: Vec<f64>,
    dc: Vec<f64>,
    weights: Vec<f64>,
    omega: f64,
    phase: f64,
    q_over_m: f64,
    uniform: V3,
    has_field: bool,
    bounds: Option<[[f64; 3]; 2]>,
}

impl<'a> Accel<'a> {
    fn new(solver: &'a FieldSolver, sc: &Scenario) -> Self {
        let rf = solver.rf_weights(&sc.drive);
        let dc = solver.dc_weights(&sc.drive);
        let q_over_m = sc.species.charge / sc.species.mass;
        let mut uniform = q_over_m * V3::from(sc.external_field);
        if sc.gravity {
            uniform.z -= STANDARD_GRAVITY;
        }
        let has_field = q_over_m != 0.0 && rf.iter().chain(&dc).any(|&w| w != 0.0);
        Accel {
            solver,
            weights: vec![0.0; rf.len()],
            rf,
            dc,
            omega: sc.drive.omega,
            phase: sc.drive.phase,
            q_over_m,
            uniform,
            has_field,
            bounds: sc.bounds,
        }
    }

    fn eval(&mut self, p: &V3, t: f64) -> Result<V3> {
        self.solver.check_domain(p)?;
        if let Some([lo, hi]) = self.bounds {
            if (0..3).any(|i| p[i] < lo[i] || p[i] > hi[i]) {
                return Err(TrapError::OutOfDomain { x: p.x, y: p.y, z: p.z });
            }
        }
        if !self.has_field {
            return Ok(self.uniform);
        }
        let c = (self.omega * t + self.phase).cos();
        for ((w, r), d) in self.weights.iter_mut().zip(&self.rf).zip(&self.dc) {
            *w = r * c + d;
        }
        let (_, grad) = self.solver.weighted(&self.weights, p, false)?;
        Ok(self.uniform - self.q_over_m * grad)
    }
}

/// Velocity-Verlet integration of m·r̈ = q·E(r, t) + q·E_ext + m·g − mγv.
/// Leaving the solver domain truncates the trajectory and sets `escaped`.
pub fn integrate(solver: &FieldSolver, scenario: &Scenario, initial: SimState) -> Result<Trajectory> {
    scenario.validate()?;
    let mut acc = Accel::new(solver, scenario);
    let dt = scenario.dt();
    let steps = (scenario.duration / dt).round().max(1.0) as usize;
    let g = scenario.drag;
    let mut x = V3::from(initial.position);
    let mut v = V3::from(initial.velocity);
    if !x.iter().chain(v.iter()).all(|c| c.is_finite()) {
        return invalid("initial state must be finite");
    }
    let t0 = initial.time;
    let mut a = acc.eval(&x, t0)?;
    let mut states = Vec::with_capacity(steps / scenario.sample_every + 2);
    states.push(initial);
    let mut escaped = false;
    for k in 1..=steps {
        let t = t0 + k as f64 * dt;
        let vh = v + 0.5 * dt * (a - g * v);
        let xn = x + dt * vh;
        let an = match acc.eval(&xn, t) {
            Ok(an) => an,
            Err(TrapError::OutOfDomain { .. }) => {
                escaped = true;
                break;
            }
            Err(e) => return Err(e),
        };
        // Drag taken implicitly at the end of the step.
        v = (vh + 0.5 * dt * an) / (1.0 + 0.5 * dt * g);
        x = xn;
        a = an;
        if !x.iter().chain(v.iter()).all(|c| c.is_finite()) {
            return Err(TrapError::Integration(format!("non-finite state at t = {t:e} s")));
        }
        if k % scenario.sample_every == 0 {
            states.push(SimState { position: x.into(), velocity: v.into(), time: t });
        }
    }
    Ok(Trajectory { states, sample_interval: dt * scenario.sample_every as f64, escaped })
}

/// Independent trajectories in parallel, in input order.
pub fn integrate_many(solver: &FieldSolver, scenario: &Scenario, initial: &[SimState]) -> Result<Vec<Trajectory>> {
    initial.par_iter().map(|s| integrate(solver, scenario, *s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub axis: usize,
    /// rad/s
    pub omega: f64,
    pub amplitude: f64,
}

/// Hann-windowed magnitude spectrum of one mean-subtracted coordinate.
fn spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let w = 0.5 - 0.5 * (TAU * k as f64 / n as f64).cos();
            Complex64::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm() * 4.0 / n as f64).collect()
}

/// Strongest spectral line below Ω/2 on each axis, located by a Gaussian
/// (log-parabolic) fit through the three bins around the maximum.
pub fn measured_secular_frequencies(traj: &Trajectory, omega_drive: f64) -> Result<Vec<SpectralPeak>> {
    let n = traj.states.len();
    if n < 64 || !(traj.sample_interval > 0.0) {
        return Err(TrapError::InsufficientData("trajectory too short for a spectrum".into()));
    }
    let span = n as f64 * traj.sample_interval;
    let d_omega = TAU / span;
    let max_bin = ((0.5 * omega_drive / d_omega).floor() as usize).min(n / 2 - 1);
    if max_bin < 3 {
        return Err(TrapError::InsufficientData("sampling does not reach secular frequencies".into()));
    }
    let mut peaks = Vec::new();
    for axis in 0..3 {
        let x: Vec<f64> = traj.states.iter().map(|s| s.position[axis]).collect();
        let s = spectrum(&x);
        let Some(k) = (2..max_bin).max_by(|&a, &b| s[a].total_cmp(&s[b])) else { continue };
        if s[k] <= 0.0 {
            continue;
        }
        let (l, c, r) = (s[k - 1].max(1e-300).ln(), s[k].ln(), s[k + 1].max(1e-300).ln());
        let den = l - 2.0 * c + r;
        let shift = if den < 0.0 { (0.5 * (l - r) / den).clamp(-0.5, 0.5) } else { 0.0 };
        let omega = (k as f64 + shift) * d_omega;
        if omega * span / TAU < 20.0 {
            return Err(TrapError::InsufficientData(format!(
                "axis {axis}: only {:.1} secular periods in the trajectory, need 20",
                omega * span / TAU
            )));
        }
        peaks.push(SpectralPeak { axis, omega, amplitude: s[k] });
    }
    Ok(peaks)
}

/// Peak with the largest spectral amplitude.
pub fn dominant_peak(peaks: &[SpectralPeak]) -> Option<SpectralPeak> {
    peaks.iter().copied().max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
}

/// Amplitude of the Ω component of position over the final half of the
/// trajectory, as the norm of the three per-axis amplitudes.
pub fn micromotion_amplitude(traj: &Trajectory, drive: &DriveConfig) -> Result<f64> {
    let per_period = TAU / drive.omega / traj.sample_interval;
    if per_period < 20.0 * (1.0 - 1e-9) {
        return invalid(format!("{per_period:.1} samples per RF period, need 20"));
    }
    let n = traj.states.len();
    let start = n / 2;
    // Whole RF periods only, so the slow motion averages out of the lock-in.
    let periods = ((n - start) as f64 / per_period).floor();
    if periods < 2.0 {
        return Err(TrapError::InsufficientData("fewer than two RF periods in the final half".into()));
    }
    let m = (periods * per_period).round() as usize;
    let seg = &traj.states[start..start + m];
    // Hann-weighted lock-in keeps leakage from the secular motion small.
    let w: Vec<f64> = (0..m).map(|k| 0.5 - 0.5 * (TAU * k as f64 / m as f64).cos()).collect();
    let wsum: f64 = w.iter().sum();
    let mut total = 0.0;
    for axis in 0..3 {
        let mean = seg.iter().zip(&w).map(|(s, w)| w * s.position[axis]).sum::<f64>() / wsum;
        let z: Complex64 = seg
            .iter()
            .zip(&w)
            .map(|(s, w)| Complex64::from_polar(w * (s.position[axis] - mean), -(drive.omega * s.time + drive.phase)))
            .sum();
        total += (2.0 * z.norm() / wsum).powi(2);
    }
    Ok(total.sqrt())
}

/// q/m for which a uniform field V/d from a mesh balances gravity.
pub fn calibrate_dust_qm(mesh_voltage: f64, mesh_distance: f64) -> Result<f64> {
    if !(mesh_voltage > 0.0 && mesh_distance > 0.0) || !mesh_voltage.is_finite() || !mesh_distance.is_finite() {
        return invalid("mesh voltage and distance must be positive");
    }
    Ok(STANDARD_GRAVITY * mesh_distance / mesh_voltage)
}

/// Mass assumed for a dust grain; only q/m enters the motion.
pub const DUST_MASS: f64 = 1.0e-11;

/// Dust grain with q/m from the mesh balance, plus the matching mesh field
/// (pointing down for a positive grain, so the force points up).
pub fn dust_particle(mesh_voltage: f64, mesh_distance: f64) -> Result<(Species, [f64; 3])> {
    let qm = calibrate_dust_qm(mesh_voltage, mesh_distance)?;
    let sp = Species::with_charge_to_mass(qm, DUST_MASS, "dust")?;
    Ok((sp, [0.0, 0.0, mesh_voltage / mesh_distance]))
}

/// Pseudopotential minimum near `guess` including the scenario's uniform
/// field and gravity, with its secular frequencies.
pub fn pseudo_equilibrium(solver: &FieldSolver, scenario: &Scenario, guess: [f64; 3]) -> Result<(V3, Secular)> {
    let mut pot = Pseudopotential::new(solver, &scenario.drive, &scenario.species)?;
    pot.external_field = V3::from(scenario.external_field);
    pot.gravity = if scenario.gravity { STANDARD_GRAVITY } else { 0.0 };
    let (x, converged) = refine_minimum(&pot, &V3::from(guess), RefineOptions::default())?;
    if !converged {
        return Err(TrapError::NoSolution(format!("no pseudopotential minimum near {guess:?}")));
    }
    let sec = secular_frequencies(&pot, &x)?;
    Ok((x, sec))
}

/// The dust-trap experiment: the reference 2×2 board driven at 230 V and
/// 50 Hz, a grain held against gravity by a mesh at 150 V 3 cm above it. The
/// mesh also serves as the RF ground plane. Drag is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DustSetup {
    pub params: ArrayParams,
    pub scenario: Scenario,
    pub mesh_voltage: f64,
    pub mesh_distance: f64,
    /// Starting offset from the trap minimum, m.
    pub kick: [f64; 3],
}

impl DustSetup {
    pub fn reference() -> Result<Self> {
        let (mesh_voltage, mesh_distance) = (150.0, 0.03);
        let params = ArrayParams { ground_plane_height: Some(mesh_distance), ..ArrayParams::reference_2x2() };
        let (species, field) = dust_particle(mesh_voltage, mesh_distance)?;
        let mut scenario = Scenario::new(DriveConfig::new(230.0, TAU * 50.0), species, 6.0);
        scenario.external_field = field;
        scenario.gravity = true;
        scenario.sample_every = 5;
        let h = 0.5 * params.pitch * params.cols as f64 + params.ring_width + params.ground_width;
        scenario.bounds = Some([[-h, -h, 0.0], [h, h, mesh_distance]]);
        Ok(DustSetup { params, scenario, mesh_voltage, mesh_distance, kick: [0.2e-3, 0.0, 0.1e-3] })
    }

    /// Site of the (+x, +y) trap, searched from above the disc centre.
    pub fn site_guess(&self) -> [f64; 3] {
        let c = 0.5 * self.params.pitch;
        [c, c, 0.3 * self.params.pitch]
    }
}

/// Exact harmonic motion along x sampled every `dt`; a spectral reference.
pub fn sinusoid_trajectory(omega: f64, amplitude: f64, dt: f64, n: usize) -> Trajectory {
    let states = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            SimState {
                position: [amplitude * (omega * t).cos(), 0.0, 0.0],
                velocity: [-amplitude * omega * (omega * t).sin(), 0.0, 0.0],
                time: t,
            }
        })
        .collect();
    Trajectory { states, sample_interval: dt, escaped: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_point_trap;
    use approx::assert_relative_eq;

    fn point() -> FieldSolver {
        FieldSolver::new(&make_point_trap(0.5e-3, 1.0e-3, 50e-6).unwrap()).unwrap()
    }

    #[test]
    fn dust_calibration() {
        assert_relative_eq!(calibrate_dust_qm(150.0, 0.03).unwrap(), 1.96133e-3, max_relative = 1e-6);
        let base = calibrate_dust_qm(150.0, 0.03).unwrap();
        assert_relative_eq!(calibrate_dust_qm(300.0, 0.03).unwrap(), 0.5 * base, max_relative = 1e-14);
        assert_relative_eq!(calibrate_dust_qm(150.0, 0.06).unwrap(), 2.0 * base, max_relative = 1e-14);
        assert!(calibrate_dust_qm(0.0, 0.03).is_err());
    }

    #[test]
    fn mesh_field_balances_gravity() {
        let (sp, e) = dust_particle(150.0, 0.03).unwrap();
        assert_relative_eq!(sp.charge_to_mass() * e[2], STANDARD_GRAVITY, max_relative = 1e-12);
    }

    #[test]
    fn free_flight_and_free_fall() {
        let s = point();
        let drive = DriveConfig::new(0.0, TAU * 1e6);
        let neutral = Species { charge: 0.0, mass: 1e-26, label: "n".into() };
        let mut sc = Scenario::new(drive, neutral, 1e-4);
        let init = SimState { position: [0.0, 0.0, 1e-3], velocity: [1.0, -2.0, 3.0], time: 0.0 };
        let tr = integrate(&s, &sc, init).unwrap();
        let end = tr.last().unwrap();
        for i in 0..3 {
            assert_relative_eq!(end.position[i], init.position[i] + init.velocity[i] * end.time, max_relative = 1e-10);
        }
        sc.gravity = true;
        let tr = integrate(&s, &sc, init).unwrap();
        let end = tr.last().unwrap();
        let t = end.time;
        let z = 1e-3 + 3.0 * t - 0.5 * STANDARD_GRAVITY * t * t;
        assert_relative_eq!(end.position[2], z, max_relative = 1e-10);
    }

    #[test]
    fn escape_truncates() {
        let s = point();
        let sc = Scenario::new(DriveConfig::new(0.0, TAU * 1e6), Species::ca40(), 1e-3);
        let tr = integrate(&s, &sc, SimState { position: [0.0, 0.0, 1e-4], velocity: [0.0, 0.0, -10.0], time: 0.0 })
            .unwrap();
        assert!(tr.escaped);
        assert!(tr.duration() < 1e-3);

        let mut sc = Scenario::new(DriveConfig::new(0.0, TAU * 1e6), Species::ca40(), 1e-3);
        sc.bounds = Some([[-1.0, -1.0, 0.0], [1.0, 1.0, 2e-3]]);
        let tr = integrate(&s, &sc, SimState { position: [0.0, 0.0, 1e-3], velocity: [0.0, 0.0, 10.0], time: 0.0 })
            .unwrap();
        assert!(tr.escaped);
        assert!(tr.last().unwrap().position[2] <= 2e-3);
    }

    #[test]
    fn coarse_step_rejected() {
        let mut sc = Scenario::new(DriveConfig::new(1.0, TAU * 1e6), Species::ca40(), 1e-3);
        sc.timestep = Some(1e-6 / 40.0);
        assert!(sc.validate().is_err());
        sc.timestep = Some(1e-6 / 50.0);
        assert!(sc.validate().is_ok());
    }

    #[test]
    fn sinusoid_peak_within_a_bin() {
        let w = TAU * 8.0;
        let tr = sinusoid_trajectory(w, 1e-3, 1e-3, 5000);
        let peaks = measured_secular_frequencies(&tr, TAU * 50.0).unwrap();
        let p = dominant_peak(&peaks).unwrap();
        assert_eq!(p.axis, 0);
        assert!((p.omega - w).abs() < TAU / 5.0, "{} vs {}", p.omega, w);
    }

    #[test]
    fn short_record_rejected() {
        let tr = sinusoid_trajectory(TAU * 8.0, 1e-3, 1e-3, 1000);
        assert!(matches!(measured_secular_frequencies(&tr, TAU * 50.0), Err(TrapError::InsufficientData(_))));
    }

    #[test]
    fn micromotion_of_pure_rf_line() {
        let drive = DriveConfig::new(1.0, TAU * 1e3);
        let tr = sinusoid_trajectory(drive.omega, 2e-6, 1e-5, 40000);
        assert_relative_eq!(micromotion_amplitude(&tr, &drive).unwrap(), 2e-6, max_relative = 1e-9);
        let slow = sinusoid_trajectory(TAU * 37.0, 2e-6, 1e-5, 40000);
        assert!(micromotion_amplitude(&slow, &drive).unwrap() < 2e-9);
    }
}
