//! Contour plots of grid functions, written as SVG.
//!
//! The region covered by grid triangles is drawn from the piecewise-linear
//! interpolant: black where `u < 0`, contour segments where a triangle's
//! vertex values span a contour value. The thin fringe between the
//! triangulation and the polygon boundary has no triangles; each point of it
//! takes the sign of the nearest boundary-adjacent grid point (its cell in
//! the Voronoi diagram of grid points, clipped to the fringe).

use std::fmt::Write as _;
use std::sync::OnceLock;

use nalgebra::{DMatrix, SMatrix};

use crate::error::{Error, Result};
use crate::lattice::{snowflake_polygon, Grid, LatticeCoord, SnowflakePolygon, GHOST};

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Neighbor hex-distance searched when building fringe cells.
const CELL_SEARCH: i64 = 6;
/// Circumradius, in units of `h`, of the hexagon each fringe cell starts from.
const CELL_START_RADIUS: f64 = 3.0;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtremumKind {
    Max,
    Min,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extremum {
    pub index: usize,
    pub kind: ExtremumKind,
    pub point: Point,
    /// Whether `point` came from the quadratic fit rather than the grid point.
    pub refined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourSegment {
    pub level: f64,
    pub ends: [Point; 2],
}

/// Part of the fringe nearest to one boundary-adjacent grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct FringeCell {
    pub index: usize,
    pub negative: bool,
    pub polygon: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourPlot {
    pub h: f64,
    pub triangles: Vec<[usize; 3]>,
    /// Parts of triangles where the interpolant is negative.
    pub filled_regions: Vec<Vec<Point>>,
    pub levels: Vec<f64>,
    pub contour_segments: Vec<ContourSegment>,
    pub extrema: Vec<Extremum>,
    pub fringe_cells: Vec<FringeCell>,
    /// Closed loops bounding the union of the triangles.
    pub outline: Vec<Vec<Point>>,
    pub boundary: SnowflakePolygon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub negative: String,
    pub positive: String,
    pub contour: String,
    pub boundary: String,
    pub dot: String,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            negative: "black".into(),
            positive: "white".into(),
            contour: "#808080".into(),
            boundary: "black".into(),
            dot: "#808080".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Number of contour levels; `None` picks it from the extremum count.
    pub levels: Option<usize>,
    /// Dot radius, in units of `h`.
    pub dot_radius: f64,
    /// Line width, in units of `h`.
    pub stroke_width: f64,
    pub palette: Palette,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { levels: None, dot_radius: 0.6, stroke_width: 0.12, palette: Palette::default() }
    }
}

impl RenderOptions {
    fn validate(&self) -> Result<()> {
        if self.levels == Some(0) {
            return Err(Error::InvalidArgument("contour level count must be positive".into()));
        }
        for (name, v) in [("dot radius", self.dot_radius), ("stroke width", self.stroke_width)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        let p = &self.palette;
        for c in [&p.negative, &p.positive, &p.contour, &p.boundary, &p.dot] {
            let ok = !c.is_empty() && c.chars().all(|ch| ch.is_ascii_alphanumeric() || "#(),.% ".contains(ch));
            if !ok {
                return Err(Error::InvalidArgument(format!("invalid color {c:?}")));
            }
        }
        Ok(())
    }
}

/// Unit lattice triangles with three interior vertices, counterclockwise.
/// Up triangles are keyed by their lower-left vertex, down triangles by
/// their left vertex, so each appears once.
pub fn triangulate(grid: &Grid) -> Vec<[usize; 3]> {
    let nb = grid.neighbor_table();
    let mut out = Vec::new();
    for (i, row) in nb.iter().enumerate() {
        if row[0] == GHOST {
            continue;
        }
        if row[1] != GHOST {
            out.push([i, row[0] as usize, row[1] as usize]);
        }
        if row[5] != GHOST {
            out.push([i, row[5] as usize, row[0] as usize]);
        }
    }
    out
}

/// Pseudo-inverse of the 7×6 design matrix of `1, x, y, x², xy, y²` at the
/// hexagon center and its six neighbors (unit spacing).
fn quadratic_fit() -> &'static SMatrix<f64, 6, 7> {
    static FIT: OnceLock<SMatrix<f64, 6, 7>> = OnceLock::new();
    FIT.get_or_init(|| {
        let mut a = DMatrix::zeros(7, 6);
        let mut pts = vec![[0.0, 0.0]];
        pts.extend(hex_directions());
        for (r, [x, y]) in pts.into_iter().enumerate() {
            for (c, v) in [1.0, x, y, x * x, x * y, y * y].into_iter().enumerate() {
                a[(r, c)] = v;
            }
        }
        let pinv = a.pseudo_inverse(1e-12).expect("design matrix has full rank");
        SMatrix::from_fn(|r, c| pinv[(r, c)])
    })
}

/// Unit vectors to the six neighbor slots.
fn hex_directions() -> [Point; 6] {
    [[1.0, 0.0], [0.5, SQRT3_2], [-0.5, SQRT3_2], [-1.0, 0.0], [-0.5, -SQRT3_2], [0.5, -SQRT3_2]]
}

/// Inside the hexagon spanned by the six unit neighbors.
fn in_unit_hexagon([x, y]: Point) -> bool {
    (0..6).all(|k| {
        let t = std::f64::consts::FRAC_PI_6 + k as f64 * std::f64::consts::FRAC_PI_3;
        x * t.cos() + y * t.sin() <= SQRT3_2 + 1e-12
    })
}

/// Stationary point of the quadratic through the 7-point stencil, in units
/// of `h` relative to the center; `None` when it is not an extremum of the
/// requested kind or lies outside the stencil.
fn fit_stationary(values: &[f64; 7], kind: ExtremumKind) -> Option<Point> {
    let c = quadratic_fit() * SMatrix::<f64, 7, 1>::from_column_slice(values);
    let (hxx, hxy, hyy) = (2.0 * c[3], c[4], 2.0 * c[5]);
    let det = hxx * hyy - hxy * hxy;
    let scale = hxx.abs() + hxy.abs() + hyy.abs();
    let sign = if kind == ExtremumKind::Max { -1.0 } else { 1.0 };
    if !(det > 1e-12 * scale * scale) || sign * hxx <= 0.0 {
        return None;
    }
    let x = (-c[1] * hyy + c[2] * hxy) / det;
    let y = (-c[2] * hxx + c[1] * hxy) / det;
    (x.is_finite() && y.is_finite() && in_unit_hexagon([x, y])).then_some([x, y])
}

/// Strict local extrema of the grid data among points with six interior
/// neighbors, refined by a quadratic fit when it has a stationary point of
/// the right kind inside the stencil. Boundary-adjacent points are skipped:
/// with Dirichlet data every concave stretch of the boundary would register
/// as a minimum.
pub fn refine_extrema(grid: &Grid, u: &[f64]) -> Result<Vec<Extremum>> {
    check_len(grid, u)?;
    let h = grid.h();
    let mut out = Vec::new();
    for (i, row) in grid.neighbor_table().iter().enumerate() {
        if row.contains(&GHOST) {
            continue;
        }
        let vals: Vec<f64> = row.iter().map(|&j| u[j as usize]).collect();
        let kind = if vals.iter().all(|&v| u[i] > v) {
            ExtremumKind::Max
        } else if vals.iter().all(|&v| u[i] < v) {
            ExtremumKind::Min
        } else {
            continue;
        };
        let [x0, y0] = grid.cartesian()[i];
        let mut stencil = [u[i]; 7];
        stencil[1..].copy_from_slice(&vals);
        let fitted = fit_stationary(&stencil, kind);
        let (point, refined) = match fitted {
            Some([dx, dy]) => ([x0 + h * dx, y0 + h * dy], true),
            None => ([x0, y0], false),
        };
        out.push(Extremum { index: i, kind, point, refined });
    }
    Ok(out)
}

/// `count` equally spaced values strictly between `min` and `max`.
pub fn equally_spaced(count: usize, (min, max): (f64, f64)) -> Result<Vec<f64>> {
    if !(min.is_finite() && max.is_finite() && min < max) {
        return Err(Error::InvalidArgument(format!("contour range needs min < max, got ({min}, {max})")));
    }
    let step = (max - min) / (count + 1) as f64;
    Ok((1..=count).map(|j| min + step * j as f64).collect())
}

/// Fewer levels for functions with more extrema:
/// `clamp(16 − 2⌊log₂ max(n, 1)⌋, 4, 16)` values spread over `u_range`.
pub fn contour_levels(extrema_count: usize, u_range: (f64, f64)) -> Result<Vec<f64>> {
    equally_spaced(level_count(extrema_count), u_range)
}

pub fn level_count(extrema_count: usize) -> usize {
    let log2 = extrema_count.max(1).ilog2() as i64;
    (16 - 2 * log2).clamp(4, 16) as usize
}

/// `u` or `−u`, whichever has its value of largest magnitude positive
/// (the first such point on ties). Eigenvectors carry no sign, so plots use
/// this convention.
pub fn peak_positive(u: &[f64]) -> Vec<f64> {
    let peak = u.iter().fold(0.0f64, |m, &v| if v.abs() > m.abs() { v } else { m });
    let s = if peak < 0.0 { -1.0 } else { 1.0 };
    u.iter().map(|v| s * v).collect()
}

fn check_len(grid: &Grid, u: &[f64]) -> Result<()> {
    if u.len() != grid.len() {
        return Err(Error::InvalidArgument(format!("function has {} values, grid has {} points", u.len(), grid.len())));
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("function value {i} is not finite")));
    }
    Ok(())
}

fn lerp(p: Point, q: Point, t: f64) -> Point {
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Part of a triangle where the linear interpolant is negative, or `None`.
fn negative_part(xs: [Point; 3], vs: [f64; 3]) -> Option<Vec<Point>> {
    if vs.iter().all(|&v| v < 0.0) {
        return Some(xs.to_vec());
    }
    if vs.iter().all(|&v| v >= 0.0) {
        return None;
    }
    let mut poly = Vec::with_capacity(4);
    for k in 0..3 {
        let (a, b) = (k, (k + 1) % 3);
        if vs[a] < 0.0 {
            poly.push(xs[a]);
        }
        if (vs[a] < 0.0) != (vs[b] < 0.0) {
            poly.push(lerp(xs[a], xs[b], vs[a] / (vs[a] - vs[b])));
        }
    }
    Some(poly)
}

/// Segment where the interpolant equals `c`; values equal to `c` count as
/// above, so each triangle yields zero or one segment.
fn level_segment(xs: [Point; 3], vs: [f64; 3], c: f64) -> Option<[Point; 2]> {
    let mut ends = Vec::with_capacity(2);
    for k in 0..3 {
        let (a, b) = (k, (k + 1) % 3);
        if (vs[a] >= c) != (vs[b] >= c) {
            ends.push(lerp(xs[a], xs[b], (c - vs[a]) / (vs[b] - vs[a])));
        }
    }
    (ends.len() == 2).then(|| [ends[0], ends[1]])
}

/// Loops of triangle edges that belong to a single triangle, each traversed
/// with the triangulated region on its left.
fn outline_loops(grid: &Grid, triangles: &[[usize; 3]]) -> Vec<Vec<Point>> {
    use std::collections::{BTreeMap, BTreeSet};
    let mut edges = BTreeSet::new();
    for t in triangles {
        for k in 0..3 {
            edges.insert((t[k], t[(k + 1) % 3]));
        }
    }
    let mut next: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(a, b) in &edges {
        if !edges.contains(&(b, a)) {
            next.entry(a).or_default().push(b);
        }
    }
    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().find(|(_, v)| !v.is_empty()) {
        let mut path = vec![start];
        let mut at = start;
        loop {
            let Some(succ) = next.get_mut(&at).and_then(Vec::pop) else { break };
            at = succ;
            if at == start {
                break;
            }
            path.push(at);
        }
        loops.push(path.iter().map(|&i| grid.cartesian()[i]).collect());
    }
    loops
}

/// Keeps the part of `poly` where `n·p ≤ d`.
fn clip_half_plane(poly: &[Point], n: Point, d: f64) -> Vec<Point> {
    let f = |p: Point| n[0] * p[0] + n[1] * p[1] - d;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let (fp, fq) = (f(p), f(q));
        if fp <= 0.0 {
            out.push(p);
        }
        if (fp <= 0.0) != (fq <= 0.0) {
            out.push(lerp(p, q, fp / (fp - fq)));
        }
    }
    out
}

/// Nearest-grid-point cells of the points with fewer than six interior
/// neighbors. Points with six interior neighbors have cells inside their
/// surrounding triangles, so these cells cover the fringe.
fn fringe_cells(grid: &Grid, u: &[f64]) -> Vec<FringeCell> {
    let h = grid.h();
    let r = CELL_START_RADIUS * h;
    let mut offsets = Vec::new();
    for da in -CELL_SEARCH..=CELL_SEARCH {
        for db in -CELL_SEARCH..=CELL_SEARCH {
            let hex = da.abs().max(db.abs()).max((da + db).abs());
            if hex > 0 && hex <= CELL_SEARCH {
                offsets.push((da, db));
            }
        }
    }
    let mut cells = Vec::new();
    for (i, row) in grid.neighbor_table().iter().enumerate() {
        if !row.contains(&GHOST) {
            continue;
        }
        let xi = grid.cartesian()[i];
        let p: LatticeCoord = grid.points()[i];
        let mut poly: Vec<Point> =
            hex_directions().iter().map(|d| [xi[0] + r * d[0], xi[1] + r * d[1]]).collect();
        for &off in &offsets {
            if let Some(j) = grid.index_of(p.offset(off)) {
                let xj = grid.cartesian()[j];
                let n = [xj[0] - xi[0], xj[1] - xi[1]];
                let d = 0.5 * (xj[0] * xj[0] + xj[1] * xj[1] - xi[0] * xi[0] - xi[1] * xi[1]);
                poly = clip_half_plane(&poly, n, d);
            }
        }
        cells.push(FringeCell { index: i, negative: u[i] < 0.0, polygon: poly });
    }
    cells
}

/// Geometry of the contour plot of `u`.
pub fn contour_plot(grid: &Grid, u: &[f64], options: &RenderOptions) -> Result<ContourPlot> {
    options.validate()?;
    check_len(grid, u)?;
    let triangles = triangulate(grid);
    let extrema = refine_extrema(grid, u)?;
    let (min, max) = u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let levels = if min < max {
        equally_spaced(options.levels.unwrap_or_else(|| level_count(extrema.len())), (min, max))?
    } else {
        Vec::new()
    };
    let xy = grid.cartesian();
    let mut filled_regions = Vec::new();
    let mut contour_segments = Vec::new();
    for t in &triangles {
        let xs = t.map(|i| xy[i]);
        let vs = t.map(|i| u[i]);
        if let Some(poly) = negative_part(xs, vs) {
            filled_regions.push(poly);
        }
        for &c in &levels {
            if let Some(ends) = level_segment(xs, vs, c) {
                contour_segments.push(ContourSegment { level: c, ends });
            }
        }
    }
    Ok(ContourPlot {
        h: grid.h(),
        outline: outline_loops(grid, &triangles),
        fringe_cells: fringe_cells(grid, u),
        boundary: snowflake_polygon(grid.level())?,
        triangles,
        filled_regions,
        levels,
        contour_segments,
        extrema,
    })
}

/// Fixed-precision coordinate without a negative zero.
fn num(x: f64) -> String {
    let s = format!("{x:.4}");
    if s.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn path_data(out: &mut String, poly: &[Point], h: f64) {
    for (k, p) in poly.iter().enumerate() {
        let _ = write!(out, "{}{} {}", if k == 0 { "M" } else { "L" }, num(p[0] / h), num(-p[1] / h));
    }
    out.push('Z');
}

/// SVG 1.1 document; one drawing unit is one grid spacing, y pointing up in
/// the plane. Output is a pure function of the inputs.
pub fn render_svg(grid: &Grid, u: &[f64], options: &RenderOptions) -> Result<String> {
    let plot = contour_plot(grid, u, options)?;
    Ok(plot_to_svg(&plot, options))
}

pub fn plot_to_svg(plot: &ContourPlot, options: &RenderOptions) -> String {
    let h = plot.h;
    let pal = &options.palette;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &plot.boundary.vertices {
        let (x, y) = (p[0] / h, -p[1] / h);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let pad = 0.05 * (x1 - x0).max(y1 - y0);
    let (vx, vy, vw, vh) = (x0 - pad, y0 - pad, x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad);

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"{} {} {} {}\" width=\"{}\" height=\"{}\">",
        num(vx),
        num(vy),
        num(vw),
        num(vh),
        num(vw),
        num(vh)
    );
    let mut boundary = String::new();
    path_data(&mut boundary, &plot.boundary.vertices, h);
    let mut fringe = boundary.clone();
    for lp in &plot.outline {
        path_data(&mut fringe, lp, h);
    }
    let _ = writeln!(s, "<defs><clipPath id=\"fringe\"><path clip-rule=\"evenodd\" d=\"{fringe}\"/></clipPath></defs>");
    let _ = writeln!(s, "<path fill=\"{}\" stroke=\"none\" d=\"{boundary}\"/>", pal.positive);

    let mut cells = String::new();
    for c in plot.fringe_cells.iter().filter(|c| c.negative && c.polygon.len() >= 3) {
        path_data(&mut cells, &c.polygon, h);
    }
    if !cells.is_empty() {
        let _ = writeln!(s, "<path clip-path=\"url(#fringe)\" fill=\"{}\" stroke=\"none\" d=\"{cells}\"/>", pal.negative);
    }
    let mut fills = String::new();
    for poly in &plot.filled_regions {
        path_data(&mut fills, poly, h);
    }
    if !fills.is_empty() {
        let _ = writeln!(s, "<path fill=\"{}\" stroke=\"none\" d=\"{fills}\"/>", pal.negative);
    }
    let sw = num(options.stroke_width);
    for &c in &plot.levels {
        let mut d = String::new();
        for seg in plot.contour_segments.iter().filter(|seg| seg.level == c) {
            let [p, q] = seg.ends;
            let _ = write!(d, "M{} {}L{} {}", num(p[0] / h), num(-p[1] / h), num(q[0] / h), num(-q[1] / h));
        }
        if !d.is_empty() {
            let _ = writeln!(
                s,
                "<path fill=\"none\" stroke=\"{}\" stroke-width=\"{sw}\" data-level=\"{c:.6e}\" d=\"{d}\"/>",
                pal.contour
            );
        }
    }
    let _ = writeln!(s, "<path fill=\"none\" stroke=\"{}\" stroke-width=\"{sw}\" d=\"{boundary}\"/>", pal.boundary);
    for e in &plot.extrema {
        let kind = match e.kind {
            ExtremumKind::Max => "max",
            ExtremumKind::Min => "min",
        };
        let _ = writeln!(
            s,
            "<circle class=\"{kind}\" cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\"/>",
            num(e.point[0] / h),
            num(-e.point[1] / h),
            num(options.dot_radius),
            pal.dot
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::generate_grid;
    use crate::symmetry::{build_permutations, GroupElement};

    fn area(p: &[Point]) -> f64 {
        0.5 * (0..p.len())
            .map(|k| {
                let (a, b) = (p[k], p[(k + 1) % p.len()]);
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
    }

    #[test]
    fn triangles_match_brute_force() {
        let g = generate_grid(2).unwrap();
        let adjacent = |i: usize, j: usize| g.interior_neighbors(i).any(|k| k == j);
        let mut brute = 0;
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                for k in j + 1..g.len() {
                    if adjacent(i, j) && adjacent(j, k) && adjacent(i, k) {
                        brute += 1;
                    }
                }
            }
        }
        let tris = triangulate(&g);
        assert_eq!(tris.len(), brute);
        let mut keys: Vec<[usize; 3]> = tris
            .iter()
            .map(|t| {
                let mut k = *t;
                k.sort();
                k
            })
            .collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), tris.len());
        assert!(triangulate(&generate_grid(1).unwrap()).is_empty());
    }

    #[test]
    fn triangles_are_unit_and_counterclockwise() {
        let g = generate_grid(3).unwrap();
        let target = 3f64.sqrt() / 4.0 * g.h() * g.h();
        for t in triangulate(&g) {
            let a = area(&t.map(|i| g.cartesian()[i]));
            assert!((a - target).abs() <= 1e-12 * target, "{a} vs {target}");
        }
    }

    #[test]
    fn quadratic_peak_is_exact() {
        let g = generate_grid(3).unwrap();
        let [cx, cy] = [0.3 * g.h(), -0.2 * g.h()];
        let u: Vec<f64> =
            g.cartesian().iter().map(|&[x, y]| -((x - cx).powi(2) + 2.0 * (y - cy).powi(2))).collect();
        let ex = refine_extrema(&g, &u).unwrap();
        let max: Vec<&Extremum> = ex.iter().filter(|e| e.kind == ExtremumKind::Max).collect();
        assert_eq!(max.len(), 1);
        assert!(max[0].refined);
        assert!((max[0].point[0] - cx).abs() < 1e-10 && (max[0].point[1] - cy).abs() < 1e-10, "{:?}", max[0]);

        let u: Vec<f64> = g.cartesian().iter().map(|&[x, y]| -(x * x + y * y)).collect();
        let ex = refine_extrema(&g, &u).unwrap();
        let top = ex.iter().find(|e| e.kind == ExtremumKind::Max).unwrap();
        assert!(top.point[0].abs() < 1e-10 && top.point[1].abs() < 1e-10);
    }

    #[test]
    fn level_counts() {
        assert_eq!(level_count(0), 16);
        assert_eq!(level_count(1), 16);
        assert_eq!(level_count(2), 14);
        assert_eq!(level_count(7), 12);
        assert_eq!(level_count(256), 4);
        let v = contour_levels(1, (-1.0, 3.0)).unwrap();
        assert_eq!(v.len(), 16);
        assert!(v[0] > -1.0 && v[15] < 3.0);
        let d0 = v[1] - v[0];
        for w in v.windows(2) {
            assert!(((w[1] - w[0]) - d0).abs() <= 1e-12 * d0);
        }
        assert!(contour_levels(3, (1.0, 1.0)).is_err());
    }

    #[test]
    fn constant_function() {
        let g = generate_grid(3).unwrap();
        let u = vec![2.5; g.len()];
        let plot = contour_plot(&g, &u, &RenderOptions::default()).unwrap();
        assert!(plot.filled_regions.is_empty());
        assert!(plot.contour_segments.is_empty());
        assert!(plot.extrema.is_empty());
        assert!(plot.fringe_cells.iter().all(|c| !c.negative));
        let svg = render_svg(&g, &u, &RenderOptions::default()).unwrap();
        assert!(!svg.contains("clip-path=\"url(#fringe)\""));
    }

    fn bumpy(g: &Grid) -> Vec<f64> {
        g.cartesian().iter().map(|&[x, y]| (7.0 * x).sin() * (5.0 * y + 0.3).cos() + 0.1 * x).collect()
    }

    #[test]
    fn segments_interpolate_levels() {
        let g = generate_grid(3).unwrap();
        let u = bumpy(&g);
        let plot = contour_plot(&g, &u, &RenderOptions::default()).unwrap();
        assert!(!plot.contour_segments.is_empty());
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // Locate each endpoint on a triangle edge and evaluate the linear model there.
        let xy = g.cartesian();
        for seg in &plot.contour_segments {
            for p in seg.ends {
                let mut best = f64::INFINITY;
                for t in &plot.triangles {
                    for k in 0..3 {
                        let (a, b) = (t[k], t[(k + 1) % 3]);
                        let (pa, pb) = (xy[a], xy[b]);
                        let len2 = (pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2);
                        let s = ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1])) / len2;
                        let q = lerp(pa, pb, s);
                        let off = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
                        if (-1e-12..=1.0 + 1e-12).contains(&s) && off < 1e-12 * g.h() {
                            best = best.min((u[a] + s * (u[b] - u[a]) - seg.level).abs());
                        }
                    }
                }
                assert!(best <= 1e-12 * scale, "endpoint misses level by {best}");
            }
        }
    }

    #[test]
    fn negation_inverts_fill() {
        let g = generate_grid(3).unwrap();
        let u = bumpy(&g);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let opts = RenderOptions { levels: Some(6), ..RenderOptions::default() };
        let a = contour_plot(&g, &u, &opts).unwrap();
        let b = contour_plot(&g, &neg, &opts).unwrap();
        let total: f64 = a.triangles.iter().map(|t| area(&t.map(|i| g.cartesian()[i]))).sum();
        let fa: f64 = a.filled_regions.iter().map(|p| area(p)).sum();
        let fb: f64 = b.filled_regions.iter().map(|p| area(p)).sum();
        assert!((fa + fb - total).abs() < 1e-12 * total, "{fa} + {fb} vs {total}");
        let key = |s: &ContourSegment| {
            let mut e = s.ends.map(|p| [(p[0] * 1e9).round() as i64, (p[1] * 1e9).round() as i64]);
            e.sort();
            e
        };
        let mut sa: Vec<_> = a.contour_segments.iter().map(key).collect();
        let mut sb: Vec<_> = b.contour_segments.iter().map(key).collect();
        sa.sort();
        sb.sort();
        assert_eq!(sa.len(), sb.len());
        for (x, y) in sa.iter().zip(&sb) {
            for k in 0..2 {
                assert!((x[k][0] - y[k][0]).abs() <= 1 && (x[k][1] - y[k][1]).abs() <= 1);
            }
        }
        for (ca, cb) in a.fringe_cells.iter().zip(&b.fringe_cells) {
            assert!(ca.negative != cb.negative || u[ca.index] == 0.0);
        }
    }

    #[test]
    fn rendering_is_equivariant() {
        let g = generate_grid(3).unwrap();
        let perms = build_permutations(&g).unwrap();
        let u = bumpy(&g);
        let opts = RenderOptions { levels: Some(5), ..RenderOptions::default() };
        let base = contour_plot(&g, &u, &opts).unwrap();
        let round = |p: Point| [(p[0] * 1e8).round() as i64, (p[1] * 1e8).round() as i64];
        for g_el in [GroupElement::RHO, GroupElement::SIGMA, GroupElement::TAU] {
            let moved = perms.act(g_el, &u).unwrap();
            let plot = contour_plot(&g, &moved, &opts).unwrap();
            let image = |p: Point| {
                let mut q = p;
                if g_el.reflected() {
                    q = [-q[0], q[1]];
                }
                for _ in 0..g_el.rotation() {
                    q = [0.5 * q[0] + SQRT3_2 * q[1], -SQRT3_2 * q[0] + 0.5 * q[1]];
                }
                q
            };
            let key = |ends: [Point; 2]| {
                let mut e = ends.map(round);
                e.sort();
                e
            };
            let mut want: Vec<_> = base.contour_segments.iter().map(|s| key(s.ends.map(image))).collect();
            let mut got: Vec<_> = plot.contour_segments.iter().map(|s| key(s.ends)).collect();
            want.sort();
            got.sort();
            assert_eq!(want.len(), got.len());
            let close = want.iter().zip(&got).all(|(w, g)| {
                (0..2).all(|k| (w[k][0] - g[k][0]).abs() <= 2 && (w[k][1] - g[k][1]).abs() <= 2)
            });
            assert!(close, "segments differ under {g_el}");
            let fa: f64 = base.filled_regions.iter().map(|p| area(p)).sum();
            let fb: f64 = plot.filled_regions.iter().map(|p| area(p)).sum();
            assert!((fa - fb).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_deterministic_and_rejects_bad_options() {
        let g = generate_grid(3).unwrap();
        let u = bumpy(&g);
        let opts = RenderOptions::default();
        let a = render_svg(&g, &u, &opts).unwrap();
        assert_eq!(a, render_svg(&g, &u, &opts).unwrap());
        assert!(a.starts_with("<?xml") && a.ends_with("</svg>\n"));
        assert!(!a.contains("-0.0000 ") && !a.contains("NaN"));
        let bad = RenderOptions { dot_radius: -1.0, ..RenderOptions::default() };
        assert!(render_svg(&g, &u, &bad).is_err());
        let bad = RenderOptions { levels: Some(0), ..RenderOptions::default() };
        assert!(render_svg(&g, &u, &bad).is_err());
        let mut bad = RenderOptions::default();
        bad.palette.dot = "\"/><script>".into();
        assert!(render_svg(&g, &u, &bad).is_err());
        assert!(render_svg(&g, &u[1..], &opts).is_err());
    }

    #[test]
    fn fringe_cells_cover_fringe() {
        let g = generate_grid(3).unwrap();
        let u = bumpy(&g);
        let plot = contour_plot(&g, &u, &RenderOptions::default()).unwrap();
        let poly_area = area(&plot.boundary.vertices);
        let tri_area: f64 = plot.triangles.iter().map(|t| area(&t.map(|i| g.cartesian()[i]))).sum();
        // Sample fringe points on a fine mesh and check each lies in some cell.
        let inside = |poly: &[Point], p: Point| {
            (0..poly.len()).all(|k| {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
            })
        };
        let in_triangle = |p: Point| plot.triangles.iter().any(|t| inside(&t.map(|i| g.cartesian()[i]), p));
        let mut fringe_samples = 0;
        let step = g.h() / 7.3;
        let r = 0.6;
        let mut y = -r;
        while y < r {
            let mut x = -r;
            while x < r {
                let p = [x, y];
                if plot.boundary.contains(p) && !in_triangle(p) {
                    fringe_samples += 1;
                    assert!(plot.fringe_cells.iter().any(|c| inside(&c.polygon, p)), "{p:?} uncovered");
                }
                x += step;
            }
            y += step;
        }
        assert!(fringe_samples > 100 && poly_area > tri_area);
    }
}
