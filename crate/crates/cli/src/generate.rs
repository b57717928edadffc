use crate::config::{invalid, CliResult};
use crate::layered;
use crate::Context;
use addrtrap::geometry::{make_addressable_array, make_point_trap_with, ArrayParams, PointTrapParams, Role};
use addrtrap::ElectrodeLayout;
use clap::{Args, ValueEnum};
use serde::Deserialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Point,
    Array2x2,
    Folsom4x4,
    Custom,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: Option<Kind>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Site pitch, m.
    #[arg(long)]
    pub pitch: Option<f64>,
    /// Inter-electrode gap, m.
    #[arg(long)]
    pub gap: Option<f64>,
    /// Radius of the ground disc at each site, m.
    #[arg(long)]
    pub inner_radius: Option<f64>,
    /// RF ring width, m.
    #[arg(long)]
    pub ring_width: Option<f64>,
    /// Outer ground border width, m.
    #[arg(long)]
    pub ground_width: Option<f64>,
    /// Addressable electrode width across the site axis, m.
    #[arg(long)]
    pub addr_width: Option<f64>,
    /// Addressable electrode length along the site axis, m.
    #[arg(long)]
    pub addr_length: Option<f64>,
    /// Ground plane height above the electrodes, m; 0 removes it.
    #[arg(long)]
    pub ground_plane: Option<f64>,
    /// Vertices per circle.
    #[arg(long)]
    pub vertices: Option<usize>,
    /// Output file name.
    #[arg(long)]
    pub name: Option<String>,
}

layered!(GenerateArgs {
    kind,
    rows,
    cols,
    pitch,
    gap,
    inner_radius,
    ring_width,
    ground_width,
    addr_width,
    addr_length,
    ground_plane,
    vertices,
    name,
});

pub fn plane(h: Option<f64>, preset: Option<f64>) -> Option<f64> {
    match h {
        Some(h) if h <= 0.0 => None,
        Some(h) => Some(h),
        None => preset,
    }
}

pub fn build(a: &GenerateArgs, kind: Kind) -> CliResult<ElectrodeLayout> {
    if kind == Kind::Point {
        let mut p = PointTrapParams::new(0.5e-3, 1.0e-3, 50e-6);
        p.inner_ground_radius = a.inner_radius.unwrap_or(p.inner_ground_radius);
        p.ring_width = a.ring_width.unwrap_or(p.ring_width);
        p.gap = a.gap.unwrap_or(p.gap);
        p.circle_vertices = a.vertices.unwrap_or(p.circle_vertices);
        p.ground_plane_height = plane(a.ground_plane, None);
        return Ok(make_point_trap_with(&p)?);
    }
    let mut p = match kind {
        Kind::Array2x2 => ArrayParams::reference_2x2(),
        Kind::Folsom4x4 => ArrayParams::folsom(),
        _ => ArrayParams::square(a.rows.unwrap_or(2), a.pitch.unwrap_or(6e-3), a.gap.unwrap_or(100e-6)),
    };
    p.rows = a.rows.unwrap_or(p.rows);
    p.cols = a.cols.unwrap_or(p.cols);
    p.pitch = a.pitch.unwrap_or(p.pitch);
    p.gap = a.gap.unwrap_or(p.gap);
    p.inner_ground_radius = a.inner_radius.unwrap_or(p.inner_ground_radius);
    p.ring_width = a.ring_width.unwrap_or(p.ring_width);
    p.ground_width = a.ground_width.unwrap_or(p.ground_width);
    p.addressing_electrode_width = a.addr_width.unwrap_or(p.addressing_electrode_width);
    p.addressing_electrode_length = a.addr_length.or(p.addressing_electrode_length);
    p.circle_vertices = a.vertices.unwrap_or(p.circle_vertices);
    p.ground_plane_height = plane(a.ground_plane, p.ground_plane_height);
    Ok(make_addressable_array(&p)?)
}

pub fn run(ctx: &Context, a: GenerateArgs) -> CliResult<()> {
    let Some(kind) = a.kind else {
        return invalid("layout kind required (point, array2x2, folsom4x4, custom)");
    };
    let layout = build(&a, kind)?;
    let name = a.name.clone().unwrap_or_else(|| "layout.json".into());
    let path = ctx.out.json(&name, &layout)?;
    let sites = layout.site_centers().len();
    println!(
        "{}: {} electrodes, {} addressable, {} sites, spacing {:.3} mm",
        path.display(),
        layout.electrodes.len(),
        layout.count_role(Role::RfAddressable),
        sites,
        layout.characteristic_length() * 1e3,
    );
    Ok(())
}
