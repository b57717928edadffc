//! Planar electrode layouts: construction, validation and serialization.
//!
//! Lengths are in metres. Polygons are stored as open rings (the closing
//! vertex is implied), outer ring counter-clockwise, holes clockwise.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use geo::algorithm::buffer::{Buffer, BufferStyle, LineJoin};
use geo::{Area, BooleanOps, Coord, LineString, MultiPolygon};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, TrapError};

pub type Vec2 = [f64; 2];

pub const LAYOUT_VERSION: u32 = 1;
pub const DEFAULT_CIRCLE_VERTICES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    RfFixed,
    RfAddressable,
    Dc,
    Ground,
}

impl Role {
    pub fn is_rf(self) -> bool {
        matches!(self, Role::RfFixed | Role::RfAddressable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub outer: Vec<Vec2>,
    #[serde(default)]
    pub holes: Vec<Vec<Vec2>>,
}

impl Polygon {
    pub fn new(outer: Vec<Vec2>, holes: Vec<Vec<Vec2>>) -> Self {
        let mut p = Polygon { outer, holes };
        p.normalize_orientation();
        p
    }

    /// Outer ring counter-clockwise, holes clockwise.
    pub fn normalize_orientation(&mut self) {
        if signed_area(&self.outer) < 0.0 {
            self.outer.reverse();
        }
        for h in &mut self.holes {
            if signed_area(h) > 0.0 {
                h.reverse();
            }
        }
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.outer).abs() - self.holes.iter().map(|h| signed_area(h).abs()).sum::<f64>()
    }

    pub fn centroid(&self) -> Vec2 {
        let mut a = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for ring in std::iter::once(&self.outer).chain(self.holes.iter()) {
            let n = ring.len();
            for i in 0..n {
                let p = ring[i];
                let q = ring[(i + 1) % n];
                let c = p[0] * q[1] - q[0] * p[1];
                a += c;
                cx += (p[0] + q[0]) * c;
                cy += (p[1] + q[1]) * c;
            }
        }
        [cx / (3.0 * a), cy / (3.0 * a)]
    }

    pub fn rings(&self) -> impl Iterator<Item = &Vec<Vec2>> {
        std::iter::once(&self.outer).chain(self.holes.iter())
    }

    pub fn map(&self, f: impl Fn(Vec2) -> Vec2) -> Polygon {
        Polygon::new(
            self.outer.iter().map(|&p| f(p)).collect(),
            self.holes.iter().map(|h| h.iter().map(|&p| f(p)).collect()).collect(),
        )
    }

    /// Point-in-polygon test honouring holes (boundary points are unspecified).
    pub fn contains(&self, p: Vec2) -> bool {
        ring_contains(&self.outer, p) && !self.holes.iter().any(|h| ring_contains(h, p))
    }

    fn to_geo(&self) -> geo::Polygon<f64> {
        let ring = |r: &Vec<Vec2>| LineString::from(r.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>());
        geo::Polygon::new(ring(&self.outer), self.holes.iter().map(ring).collect())
    }

    fn from_geo(p: &geo::Polygon<f64>) -> Polygon {
        let ring = |ls: &LineString<f64>| {
            let mut v: Vec<Vec2> = ls.0.iter().map(|c| [c.x, c.y]).collect();
            if v.len() > 1 && v.first() == v.last() {
                v.pop();
            }
            v
        };
        Polygon::new(ring(p.exterior()), p.interiors().iter().map(ring).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Electrode {
    pub id: String,
    pub role: Role,
    pub drive_group: String,
    #[serde(flatten)]
    pub polygon: Polygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }
    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
    pub fn contains(&self, p: Vec2) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }
    fn ring(&self) -> Vec<Vec2> {
        vec![self.min, [self.max[0], self.min[1]], self.max, [self.min[0], self.max[1]]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub version: u32,
    pub electrodes: Vec<Electrode>,
    pub ground_plane_height: Option<f64>,
    pub bounding_region: Rect,
    /// Inter-electrode gap width used by the field solver's midline split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

impl ElectrodeLayout {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let l: ElectrodeLayout = serde_json::from_str(s)?;
        if l.version != LAYOUT_VERSION {
            return Err(TrapError::Parse(format!("unsupported layout version {}", l.version)));
        }
        Ok(l)
    }

    pub fn electrode(&self, id: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.id == id)
    }

    pub fn drive_groups(&self) -> BTreeSet<&str> {
        self.electrodes.iter().map(|e| e.drive_group.as_str()).collect()
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.electrodes.iter().filter(|e| e.role == role).count()
    }

    pub fn with_ground_plane(mut self, h: Option<f64>) -> Self {
        self.ground_plane_height = h;
        self
    }

    /// Centres of trapping sites: ground electrodes without holes.
    pub fn site_centers(&self) -> Vec<Vec2> {
        self.electrodes
            .iter()
            .filter(|e| e.role == Role::Ground && e.polygon.holes.is_empty())
            .map(|e| e.polygon.centroid())
            .collect()
    }

    /// Typical in-plane length: the nearest-neighbour site spacing for arrays,
    /// a quarter of the bounding width otherwise.
    pub fn characteristic_length(&self) -> f64 {
        let sites = self.site_centers();
        let mut best = f64::INFINITY;
        for (i, p) in sites.iter().enumerate() {
            for q in &sites[i + 1..] {
                best = best.min(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        if best.is_finite() {
            best
        } else {
            0.25 * self.bounding_region.width().min(self.bounding_region.height())
        }
    }

    /// Uniform scaling of every length.
    pub fn scaled(&self, k: f64) -> ElectrodeLayout {
        let mut out = self.clone();
        for e in &mut out.electrodes {
            e.polygon = e.polygon.map(|p| [k * p[0], k * p[1]]);
        }
        out.bounding_region = Rect {
            min: [k * self.bounding_region.min[0], k * self.bounding_region.min[1]],
            max: [k * self.bounding_region.max[0], k * self.bounding_region.max[1]],
        };
        out.ground_plane_height = self.ground_plane_height.map(|h| k * h);
        out.gap = self.gap.map(|g| k * g);
        out
    }
}

/// Shoelace signed area (positive for counter-clockwise).
pub fn signed_area(ring: &[Vec2]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s
}

fn ring_contains(ring: &[Vec2], p: Vec2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Regular n-gon with the same area as the circle of radius `r`.
pub fn circle(center: Vec2, r: f64, n: usize) -> Vec<Vec2> {
    let nf = n as f64;
    let rv = r * (2.0 * PI / (nf * (2.0 * PI / nf).sin())).sqrt();
    (0..n)
        .map(|k| {
            let t = 2.0 * PI * (k as f64) / nf;
            [center[0] + rv * t.cos(), center[1] + rv * t.sin()]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTrapParams {
    pub inner_ground_radius: f64,
    pub ring_width: f64,
    pub gap: f64,
    pub circle_vertices: usize,
    /// Half-width of the square outer ground electrode.
    pub ground_half_width: Option<f64>,
    pub ground_plane_height: Option<f64>,
}

impl PointTrapParams {
    pub fn new(inner_ground_radius: f64, ring_width: f64, gap: f64) -> Self {
        PointTrapParams {
            inner_ground_radius,
            ring_width,
            gap,
            circle_vertices: DEFAULT_CIRCLE_VERTICES,
            ground_half_width: None,
            ground_plane_height: None,
        }
    }
}

/// Central ground disc, RF annulus and outer ground.
pub fn make_point_trap(inner_ground_radius: f64, ring_width: f64, gap: f64) -> Result<ElectrodeLayout> {
    make_point_trap_with(&PointTrapParams::new(inner_ground_radius, ring_width, gap))
}

pub fn make_point_trap_with(p: &PointTrapParams) -> Result<ElectrodeLayout> {
    for (name, v) in [("inner_ground_radius", p.inner_ground_radius), ("ring_width", p.ring_width), ("gap", p.gap)] {
        if !(v > 0.0 && v.is_finite()) {
            return invalid(format!("{name} must be positive, got {v}"));
        }
    }
    if p.circle_vertices < 8 {
        return invalid("circle_vertices must be at least 8");
    }
    check_ground_plane(p.ground_plane_height)?;
    let n = p.circle_vertices;
    let r0 = p.inner_ground_radius;
    let r1 = r0 + p.gap;
    let r2 = r1 + p.ring_width;
    let r3 = r2 + p.gap;
    let half = p.ground_half_width.unwrap_or(2.0 * r3);
    if half <= r3 * 1.01 {
        return invalid("ground_half_width must exceed the ring's outer radius");
    }
    let c = [0.0, 0.0];
    let bounding = Rect { min: [-half, -half], max: [half, half] };
    let electrodes = vec![
        Electrode {
            id: "gnd_center".into(),
            role: Role::Ground,
            drive_group: "ground".into(),
            polygon: Polygon::new(circle(c, r0, n), vec![]),
        },
        Electrode {
            id: "rf_ring".into(),
            role: Role::RfFixed,
            drive_group: "rf".into(),
            polygon: Polygon::new(circle(c, r2, n), vec![circle(c, r1, n)]),
        },
        Electrode {
            id: "gnd_outer".into(),
            role: Role::Ground,
            drive_group: "ground".into(),
            polygon: Polygon::new(bounding.ring(), vec![circle(c, r3, n)]),
        },
    ];
    Ok(ElectrodeLayout {
        version: LAYOUT_VERSION,
        electrodes,
        ground_plane_height: p.ground_plane_height,
        bounding_region: bounding,
        gap: Some(p.gap),
    })
}

fn check_ground_plane(h: Option<f64>) -> Result<()> {
    match h {
        Some(h) if !(h > 0.0 && h.is_finite()) => invalid(format!("ground_plane_height must be positive, got {h}")),
        _ => Ok(()),
    }
}

/// Parameters of a square-grid addressable array.
///
/// Each site is a grounded disc. Between horizontally or vertically adjacent
/// sites sits one addressable RF electrode: a strip of width
/// `addressing_electrode_width` along the site axis whose ends taper at 45°
/// onto the two discs, so that the rings around neighbouring sites are cut into
/// quadrants and merged. The remaining area out to `ring_width` beyond the
/// array cells is fixed RF, and an outer ground of width `ground_width`
/// surrounds everything.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayParams {
    pub rows: usize,
    pub cols: usize,
    pub pitch: f64,
    pub inner_ground_radius: f64,
    /// Length of the addressable electrode along the site axis. `None` lets it
    /// run from disc gap to disc gap, i.e. `pitch - 2 (inner_ground_radius + gap)`.
    pub addressing_electrode_length: Option<f64>,
    pub addressing_electrode_width: f64,
    pub gap: f64,
    pub ring_width: f64,
    pub ground_width: f64,
    pub circle_vertices: usize,
    pub ground_plane_height: Option<f64>,
}

impl ArrayParams {
    /// Square array with the addressable length plus gap at 90% of the pitch.
    pub fn square(n: usize, pitch: f64, gap: f64) -> Self {
        ArrayParams {
            rows: n,
            cols: n,
            pitch,
            inner_ground_radius: 0.05 * pitch - 0.5 * gap,
            addressing_electrode_length: None,
            addressing_electrode_width: 0.25 * pitch,
            gap,
            ring_width: 0.5 * pitch,
            ground_width: 0.5 * pitch,
            circle_vertices: DEFAULT_CIRCLE_VERTICES,
            ground_plane_height: None,
        }
    }

    /// The 6 mm 2×2 array of the ion simulations and the dust trap, with a
    /// ground plane at half the pitch. Ring dimensions are free; the disc
    /// radius and addressing width are set so the full-drive depth efficiency
    /// and the attenuation sweep land on their target values.
    pub fn reference_2x2() -> Self {
        ArrayParams {
            inner_ground_radius: 1.2e-3,
            addressing_electrode_width: 2.0e-3,
            ground_plane_height: Some(3e-3),
            ..ArrayParams::square(2, 6e-3, 100e-6)
        }
    }

    /// 4×4 array at 1.5 mm pitch with ⌀400 µm sites, 50 µm gaps and a ground
    /// plane 1.5 mm above the surface.
    pub fn folsom() -> Self {
        ArrayParams {
            inner_ground_radius: 200e-6,
            ground_plane_height: Some(1.5e-3),
            ..ArrayParams::square(4, 1.5e-3, 50e-6)
        }
    }

    pub fn effective_addressing_length(&self) -> f64 {
        self.addressing_electrode_length
            .unwrap_or(self.pitch - 2.0 * (self.inner_ground_radius + self.gap))
    }

    pub fn addressable_count(&self) -> usize {
        2 * self.rows * self.cols - self.rows - self.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return invalid("rows and cols must be at least 1");
        }
        if self.rows * self.cols > 63 {
            return invalid("at most 63 sites are supported");
        }
        let lens = [
            ("pitch", self.pitch),
            ("inner_ground_radius", self.inner_ground_radius),
            ("addressing_electrode_length", self.effective_addressing_length()),
            ("addressing_electrode_width", self.addressing_electrode_width),
            ("gap", self.gap),
            ("ring_width", self.ring_width),
            ("ground_width", self.ground_width),
        ];
        for (name, v) in lens {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        if self.circle_vertices < 8 {
            return invalid("circle_vertices must be at least 8");
        }
        let la = self.effective_addressing_length();
        if la + self.gap >= self.pitch {
            return invalid("addressing_electrode_length + gap must be below the pitch");
        }
        if la > self.pitch - 2.0 * (self.inner_ground_radius + self.gap) * (1.0 - 1e-12) {
            return invalid("addressing electrode overlaps the ground discs");
        }
        if self.addressing_electrode_width + self.gap >= self.pitch {
            return invalid("addressing_electrode_width + gap must be below the pitch");
        }
        check_ground_plane(self.ground_plane_height)
    }
}

fn geo_poly(ring: &[Vec2]) -> geo::Polygon<f64> {
    geo::Polygon::new(LineString::from(ring.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>()), vec![])
}

fn union_all(polys: &[geo::Polygon<f64>]) -> MultiPolygon<f64> {
    let mut acc = MultiPolygon::new(vec![]);
    for p in polys {
        acc = acc.union(&MultiPolygon::new(vec![p.clone()]));
    }
    acc
}

/// Erode a gapless cell by half the gap, returning exactly one polygon.
fn erode(cell: &MultiPolygon<f64>, half_gap: f64, id: &str) -> Result<Vec<Polygon>> {
    let style = BufferStyle::new(-half_gap).line_join(LineJoin::Miter(1e-3));
    let out = cell.buffer_with_style(style);
    let parts: Vec<Polygon> = out
        .0
        .iter()
        .filter(|p| p.unsigned_area() > 0.0)
        .map(Polygon::from_geo)
        .collect();
    if parts.is_empty() {
        return Err(TrapError::Geometry(format!("electrode {id} vanished after gap erosion")));
    }
    Ok(parts)
}

/// Gapless cell of the addressable electrode between `p` and `p + pitch·u`.
fn addressable_cell(p: Vec2, u: Vec2, params: &ArrayParams) -> Vec<Vec2> {
    let a = params.pitch;
    let g = params.gap;
    let h = 0.5 * (params.addressing_electrode_width + g);
    let disc_cell = params.inner_ground_radius + 0.5 * g;
    let s0_raw = 0.5 * (a - params.effective_addressing_length()) - 0.5 * g;
    // Touching the disc cell: run the 45° taper to the disc centre so the
    // subtraction of the disc leaves a quarter-arc contact.
    let s0 = if s0_raw <= disc_cell * (1.0 + 1e-9) { 0.0 } else { s0_raw };
    let mut st: Vec<Vec2> = Vec::new();
    let bottom = |s: f64| -> f64 { h.min(s).min(a - s) };
    let mut ss = vec![s0];
    if h > s0 && h < 0.5 * a {
        ss.push(h);
        ss.push(a - h);
    } else if h >= 0.5 * a {
        ss.push(0.5 * a);
    }
    ss.push(a - s0);
    for &s in &ss {
        st.push([s, -bottom(s)]);
    }
    for &s in ss.iter().rev() {
        st.push([s, bottom(s)]);
    }
    st.dedup_by(|x, y| (x[0] - y[0]).abs() < 1e-15 * a && (x[1] - y[1]).abs() < 1e-15 * a);
    if st.len() > 1 && st.first() == st.last() {
        st.pop();
    }
    let n = [-u[1], u[0]];
    st.iter()
        .map(|q| [p[0] + q[0] * u[0] + q[1] * n[0], p[1] + q[0] * u[1] + q[1] * n[1]])
        .collect()
}

/// Rows×cols array of grounded sites with addressable RF electrodes between
/// nearest neighbours, fixed RF filler and ring, and outer ground.
pub fn make_addressable_array(params: &ArrayParams) -> Result<ElectrodeLayout> {
    params.validate()?;
    if params.rows == 1 && params.cols == 1 {
        let mut p = PointTrapParams::new(params.inner_ground_radius, params.ring_width, params.gap);
        p.circle_vertices = params.circle_vertices;
        p.ground_plane_height = params.ground_plane_height;
        p.ground_half_width = Some(params.inner_ground_radius + 2.0 * params.gap + params.ring_width + params.ground_width);
        return make_point_trap_with(&p);
    }
    let a = params.pitch;
    let g = params.gap;
    let n = params.circle_vertices;
    let (rows, cols) = (params.rows, params.cols);
    let center = |i: usize, j: usize| -> Vec2 {
        [(j as f64 - 0.5 * (cols as f64 - 1.0)) * a, (i as f64 - 0.5 * (rows as f64 - 1.0)) * a]
    };
    let half_x = 0.5 * (cols as f64 - 1.0) * a + 0.5 * a;
    let half_y = 0.5 * (rows as f64 - 1.0) * a + 0.5 * a;
    let rf_x = half_x + params.ring_width;
    let rf_y = half_y + params.ring_width;
    let bx = rf_x + params.ground_width;
    let by = rf_y + params.ground_width;
    let bounding = Rect { min: [-bx, -by], max: [bx, by] };

    let mut electrodes = Vec::new();
    let mut disc_cells = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let c = center(i, j);
            electrodes.push(Electrode {
                id: format!("gnd_r{i}c{j}"),
                role: Role::Ground,
                drive_group: "ground".into(),
                polygon: Polygon::new(circle(c, params.inner_ground_radius, n), vec![]),
            });
            disc_cells.push(geo_poly(&circle(c, params.inner_ground_radius + 0.5 * g, n)));
        }
    }
    let discs = union_all(&disc_cells);

    let mut addr_cells = Vec::new();
    let mut addr_ids = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if j + 1 < cols {
                addr_cells.push(addressable_cell(center(i, j), [1.0, 0.0], params));
                addr_ids.push(format!("addr_r{i}c{j}_r{i}c{}", j + 1));
            }
            if i + 1 < rows {
                addr_cells.push(addressable_cell(center(i, j), [0.0, 1.0], params));
                addr_ids.push(format!("addr_r{i}c{j}_r{}c{j}", i + 1));
            }
        }
    }
    let mut addr_geo = Vec::new();
    for (cell, id) in addr_cells.iter().zip(&addr_ids) {
        let c = MultiPolygon::new(vec![geo_poly(cell)]).difference(&discs);
        let parts = erode(&c, 0.5 * g, id)?;
        if parts.len() != 1 {
            return Err(TrapError::Geometry(format!("addressable electrode {id} split into {} parts", parts.len())));
        }
        addr_geo.push(c);
        electrodes.push(Electrode {
            id: id.clone(),
            role: Role::RfAddressable,
            drive_group: id.clone(),
            polygon: parts.into_iter().next().unwrap(),
        });
    }
    let mut occupied = discs.clone();
    for c in &addr_geo {
        occupied = occupied.union(c);
    }
    let rf_outer = geo_poly(&Rect { min: [-rf_x, -rf_y], max: [rf_x, rf_y] }.ring());
    let fixed = MultiPolygon::new(vec![rf_outer]).difference(&occupied);
    let mut ring_parts = Vec::new();
    let mut fill_parts = Vec::new();
    for comp in &fixed.0 {
        let cell = MultiPolygon::new(vec![comp.clone()]);
        let is_ring = comp.exterior().0.iter().any(|c: &Coord<f64>| c.x.abs() > half_x * (1.0 + 1e-9));
        if !is_ring && comp.unsigned_area() < 1e-6 * a * a {
            continue;
        }
        let parts = match erode(&cell, 0.5 * g, "rf_fixed") {
            Ok(p) => p,
            // Slivers of fill narrower than the gap disappear entirely.
            Err(_) if !is_ring => continue,
            Err(e) => return Err(e),
        };
        if is_ring {
            ring_parts.extend(parts);
        } else {
            fill_parts.extend(parts);
        }
    }
    if ring_parts.len() != 1 {
        return Err(TrapError::Geometry(format!("fixed RF ring split into {} parts", ring_parts.len())));
    }
    electrodes.push(Electrode {
        id: "rf_ring".into(),
        role: Role::RfFixed,
        drive_group: "rf".into(),
        polygon: ring_parts.pop().unwrap(),
    });
    fill_parts.sort_by(|p, q| {
        let (cp, cq) = (p.centroid(), q.centroid());
        (cp[1], cp[0]).partial_cmp(&(cq[1], cq[0])).unwrap()
    });
    for (k, p) in fill_parts.into_iter().enumerate() {
        electrodes.push(Electrode { id: format!("rf_fill{k}"), role: Role::RfFixed, drive_group: "rf".into(), polygon: p });
    }
    let hole = Rect { min: [-rf_x - 0.5 * g, -rf_y - 0.5 * g], max: [rf_x + 0.5 * g, rf_y + 0.5 * g] };
    electrodes.push(Electrode {
        id: "gnd_outer".into(),
        role: Role::Ground,
        drive_group: "ground".into(),
        polygon: Polygon::new(bounding.ring(), vec![hole.ring()]),
    });
    symmetrize(&mut electrodes, 1e-6 * a);
    Ok(ElectrodeLayout {
        version: LAYOUT_VERSION,
        electrodes,
        ground_plane_height: params.ground_plane_height,
        bounding_region: bounding,
        gap: Some(g),
    })
}

/// Snap vertices that mirror each other across x = 0 or y = 0 (within `tol`)
/// onto exact mirror images. The boolean operations leave noise of order
/// 1e-11 m that would otherwise break the array's reflection symmetry.
fn symmetrize(electrodes: &mut [Electrode], tol: f64) {
    for axis in 0..2 {
        let pts: Vec<Vec2> =
            electrodes.iter().flat_map(|e| e.polygon.rings().flat_map(|r| r.iter().copied()).collect::<Vec<_>>()).collect();
        let mirror = |p: Vec2| if axis == 0 { [-p[0], p[1]] } else { [p[0], -p[1]] };
        let nearest = |q: Vec2| {
            pts.iter()
                .enumerate()
                .map(|(j, p)| (j, (p[0] - q[0]).hypot(p[1] - q[1])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|(_, d)| *d < tol)
                .map(|(j, _)| j)
        };
        let partner: Vec<Option<usize>> = pts.iter().map(|&p| nearest(mirror(p))).collect();
        let snapped: Vec<Vec2> = pts
            .iter()
            .enumerate()
            .map(|(i, &p)| match partner[i] {
                Some(j) if partner[j] == Some(i) => {
                    let m = mirror(pts[j]);
                    [0.5 * (p[0] + m[0]), 0.5 * (p[1] + m[1])]
                }
                _ => p,
            })
            .collect();
        let mut it = snapped.into_iter();
        for e in electrodes.iter_mut() {
            for v in e.polygon.outer.iter_mut().chain(e.polygon.holes.iter_mut().flatten()) {
                *v = it.next().unwrap();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateId,
    Degenerate,
    NonSimple,
    HoleOutside,
    Overlap,
    OutOfBounds,
    GroundPlane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub electrodes: Vec<String>,
    pub message: String,
}

fn segments_cross(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let orient = |a: Vec2, b: Vec2, c: Vec2| (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    let on = |a: Vec2, b: Vec2, c: Vec2, d: f64| {
        d == 0.0
            && c[0] >= a[0].min(b[0])
            && c[0] <= a[0].max(b[0])
            && c[1] >= a[1].min(b[1])
            && c[1] <= a[1].max(b[1])
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

fn is_simple(polygon: &Polygon) -> bool {
    let mut segs = Vec::new();
    for (r, ring) in polygon.rings().enumerate() {
        let n = ring.len();
        for i in 0..n {
            segs.push((r, i, n, ring[i], ring[(i + 1) % n]));
        }
    }
    for (k, &(r1, i1, n1, a1, b1)) in segs.iter().enumerate() {
        for &(r2, i2, _, a2, b2) in &segs[k + 1..] {
            if r1 == r2 && (i2 == i1 + 1 || (i1 == 0 && i2 == n1 - 1)) {
                continue;
            }
            if segments_cross(a1, b1, a2, b2) {
                return false;
            }
        }
    }
    true
}

fn bbox(ring: &[Vec2]) -> Rect {
    let mut r = Rect { min: [f64::INFINITY; 2], max: [f64::NEG_INFINITY; 2] };
    for p in ring {
        for k in 0..2 {
            r.min[k] = r.min[k].min(p[k]);
            r.max[k] = r.max[k].max(p[k]);
        }
    }
    r
}

/// Check every layout and electrode invariant; never fails.
pub fn validate_layout(layout: &ElectrodeLayout) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, ids: Vec<&str>, message: String| {
        out.push(Violation { kind, electrodes: ids.into_iter().map(String::from).collect(), message })
    };
    if let Some(h) = layout.ground_plane_height {
        if !(h > 0.0 && h.is_finite()) {
            push(ViolationKind::GroundPlane, vec![], format!("ground plane height {h} is not positive"));
        }
    }
    let mut seen = BTreeSet::new();
    let mut usable = Vec::new();
    for e in &layout.electrodes {
        if !seen.insert(e.id.as_str()) {
            push(ViolationKind::DuplicateId, vec![&e.id], format!("id {} appears more than once", e.id));
        }
        let finite = e.polygon.rings().all(|r| r.iter().all(|p| p[0].is_finite() && p[1].is_finite()));
        if !finite || e.polygon.rings().any(|r| r.len() < 3 || signed_area(r).abs() == 0.0) {
            push(ViolationKind::Degenerate, vec![&e.id], "ring with fewer than 3 vertices, zero area or non-finite vertex".into());
            continue;
        }
        if !is_simple(&e.polygon) {
            push(ViolationKind::NonSimple, vec![&e.id], "polygon edges intersect".into());
            continue;
        }
        for h in &e.polygon.holes {
            if !h.iter().all(|&p| ring_contains(&e.polygon.outer, p)) {
                push(ViolationKind::HoleOutside, vec![&e.id], "hole not strictly inside the outer ring".into());
            }
        }
        if !e.polygon.outer.iter().all(|&p| layout.bounding_region.contains(p)) {
            push(ViolationKind::OutOfBounds, vec![&e.id], "vertex outside bounding_region".into());
        }
        usable.push(e);
    }
    let geos: Vec<(Rect, geo::Polygon<f64>, f64)> =
        usable.iter().map(|e| (bbox(&e.polygon.outer), e.polygon.to_geo(), e.polygon.area())).collect();
    for i in 0..usable.len() {
        for j in i + 1..usable.len() {
            let (ri, pi, ai) = &geos[i];
            let (rj, pj, aj) = &geos[j];
            if ri.max[0] <= rj.min[0] || rj.max[0] <= ri.min[0] || ri.max[1] <= rj.min[1] || rj.max[1] <= ri.min[1] {
                continue;
            }
            let overlap = pi.intersection(pj).unsigned_area();
            if overlap > 1e-9 * ai.min(*aj) {
                push(
                    ViolationKind::Overlap,
                    vec![&usable[i].id, &usable[j].id],
                    format!("interiors overlap by {overlap:.3e} m²"),
                );
            }
        }
    }
    out
}
