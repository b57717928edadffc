use crate::config::{invalid, read_file, CliResult, Failure, Layered};
use crate::generate::{self, GenerateArgs, Kind};
use crate::layered;
use crate::Context;
use addrtrap::addressing::{default_fractions, saddle_scaling_fit, sweep_addressing, MorphReport, SweepOptions};
use addrtrap::metrics::{analyze_sites, default_box, SampledGrid};
use addrtrap::{DriveConfig, ElectrodeLayout, FieldSolver, Grid3, Pseudopotential, Role, Species, TrapSiteReport, V3};
use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use std::path::PathBuf;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct TrapArgs {
    /// Layout JSON written by `generate`.
    #[arg(long)]
    pub layout: Option<PathBuf>,
    /// Built-in layout used when no file is given (default array2x2).
    #[arg(long, value_enum)]
    pub preset: Option<Kind>,
    /// RF amplitude, V.
    #[arg(long)]
    pub voltage: Option<f64>,
    /// Drive frequency, Hz.
    #[arg(long)]
    pub frequency: Option<f64>,
    /// Particle charge, C (default 40Ca+).
    #[arg(long)]
    pub charge: Option<f64>,
    /// Particle mass, kg.
    #[arg(long)]
    pub mass: Option<f64>,
    /// Ground plane height, m; 0 removes it.
    #[arg(long)]
    pub ground_plane: Option<f64>,
    /// Grid spacing, m.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Top of the sampling box without a ground plane, m.
    #[arg(long)]
    pub top: Option<f64>,
    /// Amplitude fraction of a drive group, as GROUP=F; repeatable.
    #[arg(long = "fraction")]
    pub fraction: Option<Vec<String>>,
    /// Points per side of the pseudopotential slices.
    #[arg(long)]
    pub slice_points: Option<usize>,
}

layered!(TrapArgs {
    layout,
    preset,
    voltage,
    frequency,
    charge,
    mass,
    ground_plane,
    spacing,
    top,
    fraction,
    slice_points,
});

pub struct TrapSetup {
    pub layout: ElectrodeLayout,
    pub drive: DriveConfig,
    pub species: Species,
    pub spacing: f64,
    pub top: f64,
}

struct Defaults {
    voltage: f64,
    frequency: f64,
    spacing: f64,
    top: f64,
}

impl TrapArgs {
    pub fn setup(&self) -> CliResult<TrapSetup> {
        let (layout, d) = match (&self.layout, self.preset) {
            (Some(path), _) => {
                let layout = ElectrodeLayout::from_json(&read_file(path)?)?;
                let l = layout.characteristic_length();
                (layout, Defaults { voltage: 100.0, frequency: 10e6, spacing: l / 15.0, top: 1.5 * l })
            }
            (None, Some(Kind::Custom)) => return invalid("the custom kind needs a --layout file"),
            (None, kind) => {
                let kind = kind.unwrap_or(Kind::Array2x2);
                let layout = generate::build(&GenerateArgs::default(), kind)?;
                let d = match kind {
                    Kind::Point => Defaults { voltage: 100.0, frequency: 10e6, spacing: 0.1e-3, top: 2e-3 },
                    Kind::Folsom4x4 => Defaults { voltage: 125.0, frequency: 10e6, spacing: 0.1e-3, top: 2.25e-3 },
                    _ => Defaults { voltage: 215.0, frequency: 10e6, spacing: 0.2e-3, top: 9e-3 },
                };
                (layout, d)
            }
        };
        let gp = generate::plane(self.ground_plane, layout.ground_plane_height);
        let layout = layout.with_ground_plane(gp);
        let mut drive = DriveConfig::new(self.voltage.unwrap_or(d.voltage), TAU * self.frequency.unwrap_or(d.frequency));
        let groups = layout.drive_groups().into_iter().map(String::from).collect::<Vec<_>>();
        for item in self.fraction.iter().flatten() {
            let Some((g, f)) = item.split_once('=') else {
                return invalid(format!("fraction {item:?} is not GROUP=F"));
            };
            let f: f64 = f.trim().parse().map_err(|_| Failure::Invalid(format!("fraction {item:?} is not GROUP=F")))?;
            if !groups.iter().any(|x| x == g) {
                return invalid(format!("unknown drive group {g:?}"));
            }
            drive = drive.with_fraction(g, f);
        }
        drive.validate()?;
        let species = match (self.charge, self.mass) {
            (None, None) => Species::ca40(),
            (q, m) => {
                let base = Species::ca40();
                Species::new(q.unwrap_or(base.charge), m.unwrap_or(base.mass), "custom")?
            }
        };
        Ok(TrapSetup {
            layout,
            drive,
            species,
            spacing: self.spacing.unwrap_or(d.spacing),
            top: self.top.unwrap_or(d.top),
        })
    }
}

#[derive(Serialize)]
struct SitesFile<'a> {
    drive: &'a DriveConfig,
    species: &'a Species,
    grid: &'a Grid3,
    sites: &'a [TrapSiteReport],
}

fn energies(pot: &Pseudopotential<'_>, points: &[V3]) -> CliResult<Vec<f64>> {
    let v: addrtrap::Result<Vec<f64>> = points.par_iter().map(|p| pot.energy_ev(p)).collect();
    Ok(v?)
}

pub fn run_analyze(ctx: &Context, a: TrapArgs) -> CliResult<()> {
    let s = a.setup()?;
    let solver = FieldSolver::new(&s.layout)?;
    let pot = Pseudopotential::new(&solver, &s.drive, &s.species)?;
    let grid = default_box(&solver, &s.layout.bounding_region, s.top, s.spacing)?;
    let sampled = SampledGrid::sample(&pot, grid)?;
    let sites = analyze_sites(&pot, &sampled, &s.drive, &s.species)?;
    if sites.is_empty() {
        return Err(Failure::Physics("no minima in region".into()));
    }
    let path = ctx.out.json("sites.json", &SitesFile { drive: &s.drive, species: &s.species, grid: &grid, sites: &sites })?;

    let n = a.slice_points.unwrap_or(101).max(2);
    let b = s.layout.bounding_region;
    let site = V3::from(sites[0].position);
    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    let horizontal: Vec<V3> = (0..n * n)
        .map(|k| V3::new(lin(b.min[0], b.max[0], k % n), lin(b.min[1], b.max[1], k / n), site.z))
        .collect();
    let u = energies(&pot, &horizontal)?;
    let rows: Vec<Vec<f64>> = horizontal.iter().zip(&u).map(|(p, e)| vec![p.x, p.y, p.z, *e]).collect();
    ctx.out.table("slice_horizontal", &["x", "y", "z", "u_ev"], &rows)?;

    // Vertical plane through the first site and its nearest neighbour.
    let dir = sites[1..]
        .iter()
        .map(|r| V3::new(r.position[0] - site.x, r.position[1] - site.y, 0.0))
        .filter(|d| d.norm() > 0.0)
        .min_by(|p, q| p.norm().total_cmp(&q.norm()))
        .map(|d| d.normalize())
        .unwrap_or_else(V3::x);
    let corners = [b.min, [b.max[0], b.min[1]], b.max, [b.min[0], b.max[1]]];
    let proj: Vec<f64> = corners.iter().map(|c| (c[0] - site.x) * dir.x + (c[1] - site.y) * dir.y).collect();
    let (s_lo, s_hi) = proj.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let (z_lo, z_hi) = (grid.origin[2], grid.origin[2] + grid.spacing[2] * (grid.shape[2] - 1) as f64);
    let mut params = Vec::with_capacity(n * n);
    let vertical: Vec<V3> = (0..n * n)
        .map(|k| {
            let t = lin(s_lo, s_hi, k % n);
            params.push(t);
            V3::new(site.x + t * dir.x, site.y + t * dir.y, lin(z_lo, z_hi, k / n))
        })
        .collect();
    let u = energies(&pot, &vertical)?;
    let rows: Vec<Vec<f64>> =
        vertical.iter().zip(&u).zip(&params).map(|((p, e), t)| vec![*t, p.x, p.y, p.z, *e]).collect();
    ctx.out.table("slice_vertical", &["s", "x", "y", "z", "u_ev"], &rows)?;

    println!("{}: {} sites", path.display(), sites.len());
    for r in &sites {
        let f = r.secular_frequencies.map(|w| w / TAU / 1e6);
        println!(
            "  ({:.3}, {:.3}, {:.3}) mm  depth {:.4} eV  kappa_d {:.2}%  f = {:.3} / {:.3} / {:.3} MHz",
            r.position[0] * 1e3,
            r.position[1] * 1e3,
            r.position[2] * 1e3,
            r.depth_ev,
            r.kappa_d * 100.0,
            f[0],
            f[1],
            f[2],
        );
    }
    let min_depth = sites.iter().map(|r| r.depth_ev).fold(f64::INFINITY, f64::min);
    println!("minimum depth {min_depth:.4} eV");
    Ok(())
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub trap: TrapArgs,
    /// Addressable drive group to ramp (default: first addressable group).
    #[arg(long)]
    pub group: Option<String>,
    /// Amplitude fractions, descending, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Barrier below which the sites count as merged, eV.
    #[arg(long)]
    pub merge_tol: Option<f64>,
}

impl Layered for SweepArgs {
    fn layer(self, config: Self) -> Self {
        SweepArgs {
            trap: self.trap.layer(config.trap),
            group: self.group.or(config.group),
            fractions: self.fractions.or(config.fractions),
            merge_tol: self.merge_tol.or(config.merge_tol),
        }
    }
}

#[derive(Serialize)]
struct SweepFile<'a> {
    third_trap_onset: Option<f64>,
    pre_merge_reduction: Option<f64>,
    merged_at_zero: bool,
    saddle_exponent: Option<f64>,
    report: &'a MorphReport,
}

pub fn run_sweep(ctx: &Context, a: SweepArgs) -> CliResult<()> {
    let s = a.trap.setup()?;
    let group = match &a.group {
        Some(g) => g.clone(),
        None => match s.layout.electrodes.iter().filter(|e| e.role == Role::RfAddressable).map(|e| &e.drive_group).min() {
            Some(g) => g.clone(),
            None => return invalid("layout has no addressable electrodes"),
        },
    };
    let fractions = a.fractions.clone().unwrap_or_else(default_fractions);
    let opts = SweepOptions {
        spacing: Some(s.spacing),
        top: Some(s.top),
        merge_tol_ev: a.merge_tol.unwrap_or(SweepOptions::default().merge_tol_ev),
    };
    let solver = FieldSolver::new(&s.layout)?;
    let report = sweep_addressing(&solver, &s.layout, &s.drive, &s.species, &group, &fractions, opts)?;
    let fit = saddle_scaling_fit(&report).ok();
    let merged_at_zero = report.records.iter().any(|r| r.fraction == 0.0 && r.merged);
    let summary = SweepFile {
        third_trap_onset: report.third_trap_onset(),
        pre_merge_reduction: report.pre_merge_reduction(),
        merged_at_zero,
        saddle_exponent: fit.map(|f| f.0),
        report: &report,
    };
    let path = ctx.out.json("morph.json", &summary)?;
    ctx.out.with_writer("morph.csv", |w| Ok(report.write_csv(w)?))?;

    println!("{}: {} sweep points on {group}", path.display(), report.records.len());
    match summary.third_trap_onset {
        Some(f) => println!("third trap from V_a/V_nom = {f:.2}"),
        None => println!("no third trap"),
    }
    if let Some(r) = summary.pre_merge_reduction {
        println!("pre-merge inter-site distance reduction {:.1}%", r * 100.0);
    }
    if let Some(f) = report.records.iter().find(|r| r.merged) {
        println!("merged from V_a/V_nom = {:.2}", f.fraction);
    }
    match fit {
        Some((k, rms)) => println!("saddle height exponent {k:.2} (log rms {rms:.3})"),
        None => println!("saddle height fit: not enough points"),
    }
    Ok(())
}
