//! Numerical laboratory for two-dimensional arrays of planar RF Paul traps with
//! addressable RF electrodes between neighbouring sites.

pub mod addressing;
pub mod constants;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod metrics;
pub mod resonator;

pub use error::{Result, TrapError};
pub use field::{DriveConfig, FieldOptions, FieldSolver, Grid3, V3};
pub use geometry::{ArrayParams, Electrode, ElectrodeLayout, Polygon, Rect, Role};
pub use metrics::{EffectivePotential, Pseudopotential, Species, TrapSiteReport};
pub use addressing::{MorphRecord, MorphReport, SweepOptions};
pub use dynamics::{Scenario, SimState, Trajectory};
pub use resonator::{PhaseLockLoop, TankResonator};
