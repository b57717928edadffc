use crate::config::{invalid, read_file, CliResult, ConfigFile, Failure, Layered};
use crate::layered;
use crate::output::Format;
use crate::Context;
use addrtrap::resonator::{node_shift, write_response_csv, PhaseLockLoop, TankResonator};
use clap::{Args, Subcommand};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

#[derive(Debug, Subcommand)]
pub enum ResonatorCommand {
    /// Frequency response, peak gain and loaded Q.
    Response(ResponseArgs),
    /// Matching capacitors for a target frequency.
    Design(DesignArgs),
    /// Phase-lock loop response to a load step.
    Lock(LockArgs),
    /// Detuning caused by extra load capacitance from a coupled node.
    Couple(CoupleArgs),
}

/// Tank JSON; an empty or malformed file is a parse error.
fn load_tank(path: &Path) -> CliResult<TankResonator> {
    let text = read_file(path)?;
    let tank: TankResonator =
        serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))?;
    tank.validate()?;
    Ok(tank)
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseArgs {
    /// Tank JSON (default: the as-built 10.5 MHz circuit).
    pub file: Option<PathBuf>,
    /// Sweep start, Hz (default 0.8 f_drive).
    #[arg(long)]
    pub f_lo: Option<f64>,
    /// Sweep end, Hz (default 1.2 f_drive).
    #[arg(long)]
    pub f_hi: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
}

layered!(ResponseArgs { file, f_lo, f_hi, points });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignArgs {
    /// Inductance, H (default 4.7 uH; Q and source default to the as-built circuit).
    #[arg(long)]
    pub inductance: Option<f64>,
    /// Unloaded Q of the inductor.
    #[arg(long)]
    pub q: Option<f64>,
    /// Trap capacitance, F (required).
    #[arg(long)]
    pub c_trap: Option<f64>,
    /// Source resistance, ohm.
    #[arg(long)]
    pub r_source: Option<f64>,
    /// Target frequency, Hz (required).
    #[arg(long)]
    pub frequency: Option<f64>,
}

layered!(DesignArgs { inductance, q, c_trap, r_source, frequency });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LockArgs {
    /// Tank JSON (default: the coupling reference tank at --frequency,
    /// 9.7 MHz unless given).
    pub file: Option<PathBuf>,
    /// Load capacitance step, F.
    #[arg(long)]
    pub dc: Option<f64>,
    /// Simulated time, s.
    #[arg(long)]
    pub settle: Option<f64>,
    /// Drive frequency of the default tank, Hz.
    #[arg(long)]
    pub frequency: Option<f64>,
}

layered!(LockArgs { file, dc, settle, frequency });

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleArgs {
    /// Tank JSON (default: the coupling reference tank at --frequency).
    pub file: Option<PathBuf>,
    /// Coupling capacitances, F, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub dc: Option<Vec<f64>>,
    /// Drive frequency of the default tank, Hz.
    #[arg(long)]
    pub frequency: Option<f64>,
}

layered!(CoupleArgs { file, dc, frequency });

#[derive(Serialize)]
struct ResponseRow {
    frequency: f64,
    gain_abs: f64,
    gain_phase: f64,
    z_in_real: f64,
    z_in_imag: f64,
    loop_phase: f64,
}

fn coupling_tank(file: &Option<PathBuf>, frequency: Option<f64>) -> CliResult<TankResonator> {
    match file {
        Some(p) => load_tank(p),
        None => Ok(TankResonator::coupling_reference(frequency.unwrap_or(10.5e6))?),
    }
}

pub fn run(ctx: &Context, cmd: ResonatorCommand, file: &ConfigFile) -> CliResult<()> {
    match cmd {
        ResonatorCommand::Response(a) => response(ctx, a.layer(file.section("resonator_response")?)),
        ResonatorCommand::Design(a) => design(ctx, a.layer(file.section("resonator_design")?)),
        ResonatorCommand::Lock(a) => lock(ctx, a.layer(file.section("resonator_lock")?)),
        ResonatorCommand::Couple(a) => couple(ctx, a.layer(file.section("resonator_couple")?)),
    }
}

fn response(ctx: &Context, a: ResponseArgs) -> CliResult<()> {
    let tank = match &a.file {
        Some(p) => load_tank(p)?,
        None => TankResonator::reference(),
    };
    let f0 = tank.drive_frequency;
    let rows = tank.sweep(a.f_lo.unwrap_or(0.8 * f0), a.f_hi.unwrap_or(1.2 * f0), a.points.unwrap_or(2001))?;
    let res = tank.resonance()?;
    let path = match ctx.out.format() {
        Format::Csv => ctx.out.with_writer("response.csv", |w| Ok(write_response_csv(w, &rows)?))?,
        Format::Json => {
            let out: Vec<ResponseRow> = rows
                .iter()
                .map(|r| ResponseRow {
                    frequency: r.frequency,
                    gain_abs: r.gain.norm(),
                    gain_phase: r.gain.arg(),
                    z_in_real: r.z_in.re,
                    z_in_imag: r.z_in.im,
                    loop_phase: r.loop_phase,
                })
                .collect();
            ctx.out.json("response.json", &out)?
        }
    };
    ctx.out.json("resonance.json", &res)?;
    println!("{}", path.display());
    println!("peak gain {:.2} at {:.4} MHz", res.peak_gain, res.peak_frequency / 1e6);
    println!("loaded Q {:.1} (half-power {:.4} to {:.4} MHz)", res.loaded_q, res.lower_half_power / 1e6, res.upper_half_power / 1e6);
    Ok(())
}

fn design(ctx: &Context, a: DesignArgs) -> CliResult<()> {
    let r = TankResonator::reference();
    let (Some(c_trap), Some(frequency)) = (a.c_trap, a.frequency) else {
        return invalid("design needs --c-trap and --frequency");
    };
    let tank = TankResonator::matched(
        a.inductance.unwrap_or(r.inductance),
        a.q.unwrap_or(r.unloaded_q),
        c_trap,
        a.r_source.unwrap_or(r.r_source),
        frequency,
    )?;
    let path = ctx.out.json("tank.json", &tank)?;
    let res = tank.resonance()?;
    println!("{}", path.display());
    println!("C_A {:.2} pF, C_B {:.2} pF", tank.c_a * 1e12, tank.c_b * 1e12);
    println!("peak gain {:.2}, loaded Q {:.1}", res.peak_gain, res.loaded_q);
    Ok(())
}

fn lock(ctx: &Context, a: LockArgs) -> CliResult<()> {
    let mut tank = coupling_tank(&a.file, Some(a.frequency.unwrap_or(9.7e6)))?;
    // The loop holds the quarter-turn phase, so drive where the tank sits on it.
    let f0 = tank.loop_resonance()?;
    if (f0 - tank.drive_frequency).abs() > 1e-9 * f0 {
        println!("driving at the loop resonance {:.4} MHz", f0 / 1e6);
        tank.drive_frequency = f0;
    }
    let pll = PhaseLockLoop::new(tank)?;
    let result = pll.simulate(a.dc.unwrap_or(0.2e-12), a.settle.unwrap_or(0.05))?;
    let path = ctx.out.json("lock.json", &result)?;
    println!("{}", path.display());
    println!("open-loop phase error {:.2} deg", result.open_loop_phase * 180.0 / PI);
    println!("residual phase {:.4} deg, varactor {:.3} pF", result.residual_phase * 180.0 / PI, result.varactor_capacitance * 1e12);
    if let Some(d) = &result.diagnostic {
        println!("{d}");
    }
    if !result.locked {
        return Err(Failure::Physics("loop did not lock".into()));
    }
    println!("locked");
    Ok(())
}

#[derive(Serialize)]
struct CoupleRow {
    c_coupling: f64,
    delta_f0: f64,
    delta_phase: f64,
    total_capacitance: f64,
}

fn couple(ctx: &Context, a: CoupleArgs) -> CliResult<()> {
    let tank = coupling_tank(&a.file, a.frequency)?;
    let dcs = a.dc.unwrap_or_else(|| vec![0.1e-12, 0.2e-12]);
    let mut rows = Vec::with_capacity(dcs.len());
    for dc in dcs {
        let s = node_shift(&tank, dc)?;
        rows.push(CoupleRow { c_coupling: dc, delta_f0: s.delta_f0, delta_phase: s.delta_phase, total_capacitance: s.total_capacitance });
    }
    let path = ctx.out.json("couple.json", &rows)?;
    println!("{}", path.display());
    for r in &rows {
        println!(
            "{:.3} pF: shift {:.2} kHz, phase {:.2} deg",
            r.c_coupling * 1e12,
            r.delta_f0 / 1e3,
            r.delta_phase * 180.0 / PI
        );
    }
    Ok(())
}
