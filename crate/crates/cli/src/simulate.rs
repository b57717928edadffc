use crate::config::{invalid, read_json, CliResult, Failure};
use crate::generate::{self, GenerateArgs, Kind};
use crate::layered;
use crate::output::Format;
use crate::Context;
use addrtrap::dynamics::{
    dominant_peak, integrate, measured_secular_frequencies, micromotion_amplitude, pseudo_equilibrium, DustSetup,
    Scenario, SimState,
};
use addrtrap::geometry::make_addressable_array;
use addrtrap::metrics::Secular;
use addrtrap::{DriveConfig, ElectrodeLayout, FieldSolver, Species};
use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimPreset {
    /// 40Ca+ in the single point trap at 100 V, 10 MHz.
    Point,
    /// Charged grain over the 2x2 board at 230 V, 50 Hz.
    Dust,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    /// Scenario JSON: {layout, scenario, initial | guess, kick}.
    pub scenario: Option<PathBuf>,
    /// Built-in scenario used when no file is given.
    #[arg(long, value_enum)]
    pub preset: Option<SimPreset>,
    /// RF amplitude override, V.
    #[arg(long)]
    pub voltage: Option<f64>,
    /// Simulated time, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Linear damping rate, 1/s.
    #[arg(long)]
    pub drag: Option<f64>,
    /// Integration step, s.
    #[arg(long)]
    pub timestep: Option<f64>,
    /// Keep every n-th step.
    #[arg(long)]
    pub sample_every: Option<usize>,
    /// Offset from the equilibrium, m (x,y,z).
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub kick: Option<Vec<f64>>,
    /// Uniform random offset of the start in each coordinate, m; uses --seed.
    #[arg(long)]
    pub jitter: Option<f64>,
}

layered!(SimulateArgs { scenario, preset, voltage, duration, drag, timestep, sample_every, kick, jitter });

/// Scenario file. `layout` is a preset name or a path relative to the file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    layout: String,
    scenario: Scenario,
    #[serde(default)]
    initial: Option<SimState>,
    /// Start from the pseudopotential minimum near this point.
    #[serde(default)]
    guess: Option<[f64; 3]>,
    #[serde(default)]
    kick: Option<[f64; 3]>,
}

enum Start {
    State(SimState),
    Equilibrium { guess: [f64; 3], kick: [f64; 3] },
}

struct Plan {
    layout: ElectrodeLayout,
    scenario: Scenario,
    start: Start,
    /// Duration in lowest secular periods when none was given.
    auto_periods: Option<f64>,
}

fn preset_layout(name: &str, base: &Path) -> CliResult<ElectrodeLayout> {
    let kind = match name {
        "point" => Kind::Point,
        "array2x2" => Kind::Array2x2,
        "folsom4x4" => Kind::Folsom4x4,
        path => return Ok(ElectrodeLayout::from_json(&crate::config::read_file(&base.join(path))?)?),
    };
    generate::build(&GenerateArgs::default(), kind)
}

fn plan(a: &SimulateArgs) -> CliResult<Plan> {
    if let Some(path) = &a.scenario {
        let f: SimFile = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let start = match (f.initial, f.guess) {
            (Some(s), None) => Start::State(s),
            (None, Some(g)) => Start::Equilibrium { guess: g, kick: f.kick.unwrap_or([0.0; 3]) },
            _ => return invalid("scenario needs exactly one of `initial` and `guess`"),
        };
        return Ok(Plan { layout: preset_layout(&f.layout, base)?, scenario: f.scenario, start, auto_periods: None });
    }
    match a.preset.unwrap_or(SimPreset::Point) {
        SimPreset::Point => {
            let layout = generate::build(&GenerateArgs::default(), Kind::Point)?;
            let mut scenario = Scenario::new(DriveConfig::new(100.0, TAU * 10e6), Species::ca40(), 0.0);
            scenario.sample_every = 5;
            let start = Start::Equilibrium { guess: [0.0, 0.0, 0.6e-3], kick: [2e-6, 1e-6, 1.5e-6] };
            Ok(Plan { layout, scenario, start, auto_periods: Some(40.0) })
        }
        SimPreset::Dust => {
            let d = DustSetup::reference()?;
            let layout = make_addressable_array(&d.params)?;
            let start = Start::Equilibrium { guess: d.site_guess(), kick: d.kick };
            Ok(Plan { layout, scenario: d.scenario, start, auto_periods: None })
        }
    }
}

#[derive(Serialize)]
struct Peak {
    axis: usize,
    frequency_hz: f64,
    amplitude: f64,
    /// Relative deviation from the Hessian frequency along the same axis.
    hessian_deviation: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    escaped: bool,
    samples: usize,
    duration: f64,
    start: [f64; 3],
    equilibrium: Option<[f64; 3]>,
    hessian_frequencies_hz: Option<[f64; 3]>,
    peaks: Vec<Peak>,
    dominant_hz: Option<f64>,
    micromotion_amplitude: Option<f64>,
    spectrum_note: Option<String>,
}

/// Hessian frequency whose principal axis leans most on `axis`.
fn along(sec: &Secular, axis: usize) -> f64 {
    (0..3).max_by(|&i, &j| sec.axes[i][axis].abs().total_cmp(&sec.axes[j][axis].abs())).map(|i| sec.omegas[i]).unwrap_or(0.0)
}

pub fn run(ctx: &Context, a: SimulateArgs) -> CliResult<()> {
    let Plan { layout, mut scenario, start, auto_periods } = plan(&a)?;
    if let Some(v) = a.voltage {
        scenario.drive.v_nom = v;
    }
    if let Some(d) = a.drag {
        scenario.drag = d;
    }
    if a.timestep.is_some() {
        scenario.timestep = a.timestep;
    }
    if let Some(n) = a.sample_every {
        scenario.sample_every = n;
    }
    let solver = FieldSolver::new(&layout)?;

    let (mut state, equilibrium) = match start {
        Start::State(s) => (s, None),
        Start::Equilibrium { guess, kick } => {
            let (x, sec) = pseudo_equilibrium(&solver, &scenario, guess)?;
            let kick = match &a.kick {
                Some(k) if k.len() == 3 => [k[0], k[1], k[2]],
                Some(_) => return invalid("--kick takes three components"),
                None => kick,
            };
            (SimState::at_rest([x.x + kick[0], x.y + kick[1], x.z + kick[2]]), Some((x, sec)))
        }
    };
    if let Some(j) = a.jitter.filter(|j| *j > 0.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
        for c in &mut state.position {
            *c += rng.random_range(-j..=j);
        }
    }
    scenario.duration = match (a.duration, auto_periods, &equilibrium) {
        (Some(d), _, _) => d,
        (None, Some(n), Some((_, sec))) if sec.omegas[0] > 0.0 => n * TAU / sec.omegas[0],
        _ => scenario.duration,
    };
    scenario.validate()?;

    let traj = integrate(&solver, &scenario, state)?;
    let path = match ctx.out.format() {
        Format::Csv => ctx.out.with_writer("trajectory.csv", |w| Ok(traj.write_csv(w)?))?,
        Format::Json => ctx.out.json("trajectory.json", &traj.states)?,
    };

    let sec = equilibrium.as_ref().map(|(_, s)| s);
    let (peaks, note) = if traj.escaped {
        (Vec::new(), None)
    } else {
        match measured_secular_frequencies(&traj, scenario.drive.omega) {
            Ok(p) => (p, None),
            Err(e) => (Vec::new(), Some(e.to_string())),
        }
    };
    let summary = Summary {
        escaped: traj.escaped,
        samples: traj.states.len(),
        duration: traj.duration(),
        start: state.position,
        equilibrium: equilibrium.as_ref().map(|(x, _)| [x.x, x.y, x.z]),
        hessian_frequencies_hz: sec.map(|s| s.omegas.map(|w| w / TAU)),
        peaks: peaks
            .iter()
            .map(|p| Peak {
                axis: p.axis,
                frequency_hz: p.omega / TAU,
                amplitude: p.amplitude,
                hessian_deviation: sec.map(|s| p.omega / along(s, p.axis) - 1.0),
            })
            .collect(),
        dominant_hz: dominant_peak(&peaks).map(|p| p.omega / TAU),
        micromotion_amplitude: if traj.escaped { None } else { micromotion_amplitude(&traj, &scenario.drive).ok() },
        spectrum_note: note,
    };
    ctx.out.json("summary.json", &summary)?;

    println!("{}: {} samples over {:.6} s", path.display(), summary.samples, summary.duration);
    if let Some(f) = summary.hessian_frequencies_hz {
        println!("Hessian secular frequencies {:.4e} / {:.4e} / {:.4e} Hz", f[0], f[1], f[2]);
    }
    for p in &summary.peaks {
        let dev = p.hessian_deviation.map(|d| format!(" ({:+.2}% vs Hessian)", d * 100.0)).unwrap_or_default();
        println!("axis {}: measured {:.4e} Hz{dev}", "xyz".as_bytes()[p.axis] as char, p.frequency_hz);
    }
    if let Some(f) = summary.dominant_hz {
        println!("dominant secular peak {f:.4e} Hz");
    }
    if let Some(m) = summary.micromotion_amplitude {
        println!("micromotion amplitude {m:.3e} m");
    }
    if let Some(n) = &summary.spectrum_note {
        println!("no spectrum: {n}");
    }
    if traj.escaped {
        let t = traj.last().map(|s| s.time).unwrap_or(0.0);
        return Err(Failure::Physics(format!("escaped at t = {t:.6} s; trajectory truncated")));
    }
    Ok(())
}
