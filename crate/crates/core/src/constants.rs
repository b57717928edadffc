//! Physical constants (CODATA 2018 exact or recommended values) and species data.

/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Electron mass, kg.
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Atomic mass of neutral calcium-40, u.
pub const CA40_ATOMIC_MASS_U: f64 = 39.962_590_863;

/// Mass of the singly charged calcium-40 ion (one electron removed), kg.
pub fn ca40_ion_mass() -> f64 {
    CA40_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS
}

/// Trap efficiency of a typical planar point trap in the stability relation.
/// Documented only; no computation consumes it.
pub const TYPICAL_PLANAR_KAPPA: f64 = 0.2;

/// Axis constant K of the stability relation for the axial direction of a
/// hyperbolic trap. Documented only; stability is evaluated from ω/Ω directly.
pub const HYPERBOLIC_AXIAL_K: f64 = std::f64::consts::SQRT_2;

/// Operating-point ratio ω/Ω near the centre of the first stability region.
pub const NOMINAL_STABILITY_RATIO: f64 = 1.0 / 7.0;
