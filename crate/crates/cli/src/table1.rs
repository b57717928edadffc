use crate::config::CliResult;
use crate::layered;
use crate::output::Format;
use crate::Context;
use addrtrap::addressing::{gate_time_table, write_gate_table_csv, OmegaUnit};
use addrtrap::Species;
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    /// Trap frequency column read as 10^6 rad/s.
    Mrad,
    /// Trap frequency column read as MHz.
    Mhz,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Table1Args {
    /// Particle charge, C (default 40Ca+).
    #[arg(long)]
    pub charge: Option<f64>,
    /// Particle mass, kg.
    #[arg(long)]
    pub mass: Option<f64>,
    /// Unit of the trap-frequency column.
    #[arg(long, value_enum)]
    pub omega_unit: Option<Unit>,
}

layered!(Table1Args { charge, mass, omega_unit });

pub fn run(ctx: &Context, a: Table1Args) -> CliResult<()> {
    let base = Species::ca40();
    let species = match (a.charge, a.mass) {
        (None, None) => base,
        (q, m) => Species::new(q.unwrap_or(base.charge), m.unwrap_or(base.mass), "custom")?,
    };
    let unit = match a.omega_unit.unwrap_or(Unit::Mrad) {
        Unit::Mrad => OmegaUnit::MegaRadPerSecond,
        Unit::Mhz => OmegaUnit::MegaHertz,
    };
    let rows = gate_time_table(&species, unit)?;
    let path = match ctx.out.format() {
        Format::Csv => ctx.out.with_writer("table1.csv", |w| Ok(write_gate_table_csv(w, &rows)?))?,
        Format::Json => ctx.out.json("table1.json", &rows)?,
    };
    println!("{}", path.display());
    println!("{:>8} {:>12} {:>12} {:>12} {:>10}", "a (um)", "omega (rad/s)", "T (ms)", "T' (ms)", "printed");
    for r in &rows {
        println!(
            "{:>8.0} {:>12.3e} {:>12.4} {:>12.3} {:>10}{}",
            r.a_m * 1e6,
            r.omega,
            r.gate_time_s * 1e3,
            r.reduced_gate_time_s * 1e3,
            r.printed_ms,
            if r.excluded_from_scaling { "  (excluded from scaling)" } else { "" },
        );
    }
    Ok(())
}
