//! Triangular grid inside the Koch snowflake region.
//!
//! Grid points live on the lattice spanned by `h·(1, 0)` and `h·(1/2, √3/2)`
//! with `h = 2/3^ℓ`. The snowflake is inscribed in the circle of radius
//! `√3/3`, with one vertex on the positive y-axis. With this spacing the
//! polygon boundary always falls strictly between lattice points, so every
//! point is either interior or a ghost.
//!
//! All geometry used for membership is exact: the polygon and the lattice
//! are expressed in an integer frame (`unit = h/12`) where every Koch vertex
//! has integer coordinates in the oblique basis.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Largest level accepted by [`generate_grid`] (about 8.6 million points).
pub const MAX_LEVEL: u32 = 8;

/// Marker for a neighbor slot that points outside the region.
pub const GHOST: u32 = u32::MAX;

/// Lattice offsets of the six neighbor slots, counterclockwise from +x.
pub const NEIGHBOR_OFFSETS: [(i64, i64); 6] = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)];

/// Integer frame units per grid spacing.
const FRAME_PER_H: i64 = 12;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

/// Coefficients of a lattice point in the oblique basis, scaled by `h`.
///
/// Ordering is by `(b, a)`, i.e. row by row from bottom to top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatticeCoord {
    pub a: i64,
    pub b: i64,
}

impl LatticeCoord {
    pub const fn new(a: i64, b: i64) -> Self {
        Self { a, b }
    }

    pub fn offset(self, (da, db): (i64, i64)) -> Self {
        Self::new(self.a + da, self.b + db)
    }

    /// Cartesian image for spacing `h`.
    pub fn to_cartesian(self, h: f64) -> [f64; 2] {
        let (a, b) = (self.a as f64, self.b as f64);
        [h * (a + 0.5 * b), h * b * SQRT3_2]
    }

    /// Rotation by 60° clockwise.
    pub fn rotate_cw(self) -> Self {
        Self::new(self.a + self.b, -self.a)
    }

    /// Reflection across the y-axis.
    pub fn reflect_y_axis(self) -> Self {
        Self::new(-self.a - self.b, self.b)
    }
}

impl Ord for LatticeCoord {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.b, self.a).cmp(&(other.b, other.a))
    }
}

impl PartialOrd for LatticeCoord {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Point in the integer frame, oblique basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FramePoint {
    p: i64,
    q: i64,
}

impl FramePoint {
    fn sub(self, o: Self) -> Self {
        Self { p: self.p - o.p, q: self.q - o.q }
    }
    fn add(self, o: Self) -> Self {
        Self { p: self.p + o.p, q: self.q + o.q }
    }
    fn div(self, k: i64) -> Self {
        debug_assert!(self.p % k == 0 && self.q % k == 0);
        Self { p: self.p / k, q: self.q / k }
    }
    fn rotate_cw(self) -> Self {
        Self { p: self.p + self.q, q: -self.p }
    }
}

/// Orientation of `c` relative to the directed line `a → b`. The oblique
/// basis has positive determinant, so the sign matches the Cartesian one.
fn orient(a: FramePoint, b: FramePoint, c: FramePoint) -> i64 {
    let u = b.sub(a);
    let v = c.sub(a);
    u.p * v.q - u.q * v.p
}

/// Koch polygon in frame coordinates for `level`, counterclockwise, plus the
/// triangles (central and bumps) whose union is the polygon region.
struct KochConstruction {
    vertices: Vec<FramePoint>,
    triangles: Vec<[FramePoint; 3]>,
    unit: f64,
}

fn koch_construction(level: u32, keep_triangles: bool) -> KochConstruction {
    // unit = 1/(6·3^ℓ): base triangle side is 6·3^ℓ units, level-ℓ edges 6 units.
    let s = 3i64.pow(level);
    let top = FramePoint { p: -2 * s, q: 4 * s };
    let base = [top, top.rotate_cw().rotate_cw(), top.rotate_cw().rotate_cw().rotate_cw().rotate_cw()];
    // Counterclockwise order: top, lower-left, lower-right.
    let mut vertices = vec![base[0], base[2], base[1]];
    debug_assert!(orient(vertices[0], vertices[1], vertices[2]) > 0);
    let mut triangles = Vec::new();
    if keep_triangles {
        triangles.push([vertices[0], vertices[1], vertices[2]]);
    }
    for _ in 0..level {
        let mut next = Vec::with_capacity(vertices.len() * 4);
        for (i, &p) in vertices.iter().enumerate() {
            let q = vertices[(i + 1) % vertices.len()];
            let third = q.sub(p).div(3);
            let a = p.add(third);
            let b = a.add(third);
            // Outward is to the right of a counterclockwise edge.
            let apex = a.add(third.rotate_cw());
            next.extend_from_slice(&[p, a, apex, b]);
            if keep_triangles {
                triangles.push([a, b, apex]);
            }
        }
        vertices = next;
    }
    KochConstruction { vertices, triangles, unit: 1.0 / (6.0 * s as f64) }
}

/// Level-ℓ polygonal approximation of the snowflake boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SnowflakePolygon {
    pub level: u32,
    /// Counterclockwise Cartesian vertices.
    pub vertices: Vec<[f64; 2]>,
}

impl SnowflakePolygon {
    /// Even-odd point-in-polygon test in floating point.
    pub fn contains(&self, [x, y]: [f64; 2]) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let [xi, yi] = self.vertices[i];
            let [xj, yj] = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    /// Euclidean distance from a point to the polygon boundary.
    pub fn distance_to_boundary(&self, [x, y]: [f64; 2]) -> f64 {
        let n = self.vertices.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            let [ax, ay] = self.vertices[i];
            let [bx, by] = self.vertices[(i + 1) % n];
            let (dx, dy) = (bx - ax, by - ay);
            let t = (((x - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let (px, py) = (ax + t * dx - x, ay + t * dy - y);
            best = best.min((px * px + py * py).sqrt());
        }
        best
    }
}

/// Koch polygon after `level` refinements of the base triangle.
pub fn snowflake_polygon(level: u32) -> Result<SnowflakePolygon> {
    if level > MAX_LEVEL + 2 {
        return Err(Error::InvalidArgument(format!("polygon level {level} exceeds {}", MAX_LEVEL + 2)));
    }
    let k = koch_construction(level, false);
    let vertices = k
        .vertices
        .iter()
        .map(|v| {
            let (p, q) = (v.p as f64, v.q as f64);
            [k.unit * (p + 0.5 * q), k.unit * q * SQRT3_2]
        })
        .collect();
    Ok(SnowflakePolygon { level, vertices })
}

/// Discretized snowflake region at a given level.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    level: u32,
    h: f64,
    points: Vec<LatticeCoord>,
    cartesian: Vec<[f64; 2]>,
    neighbors: Vec<[u32; 6]>,
}

impl Grid {
    /// Builds a grid from sorted, de-duplicated lattice points.
    fn from_points(level: u32, points: Vec<LatticeCoord>) -> Result<Self> {
        let h = spacing(level);
        if points.len() >= GHOST as usize {
            return Err(Error::InvalidArgument("too many grid points".into()));
        }
        let neighbors = points
            .iter()
            .map(|&p| {
                let mut row = [GHOST; 6];
                for (slot, &off) in NEIGHBOR_OFFSETS.iter().enumerate() {
                    if let Ok(j) = points.binary_search(&p.offset(off)) {
                        row[slot] = j as u32;
                    }
                }
                row
            })
            .collect();
        let cartesian = points.iter().map(|p| p.to_cartesian(h)).collect();
        Ok(Self { level, h, points, cartesian, neighbors })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Grid spacing `2/3^ℓ`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LatticeCoord] {
        &self.points
    }

    pub fn cartesian(&self) -> &[[f64; 2]] {
        &self.cartesian
    }

    /// Neighbor table, 0-based, [`GHOST`] for exterior slots.
    pub fn neighbor_table(&self) -> &[[u32; 6]] {
        &self.neighbors
    }

    pub fn neighbor(&self, i: usize, slot: usize) -> Option<usize> {
        match self.neighbors[i][slot] {
            GHOST => None,
            j => Some(j as usize),
        }
    }

    /// Interior neighbors of point `i`, in slot order.
    pub fn interior_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.neighbors[i].iter().filter(|&&j| j != GHOST).map(|&j| j as usize)
    }

    /// Number of interior neighbors `k_i`.
    pub fn interior_count(&self, i: usize) -> usize {
        self.neighbors[i].iter().filter(|&&j| j != GHOST).count()
    }

    /// Index of a lattice point, if it is a grid point.
    pub fn index_of(&self, p: LatticeCoord) -> Option<usize> {
        self.points.binary_search(&p).ok()
    }
}

/// Grid spacing `h = 2/3^ℓ`.
pub fn spacing(level: u32) -> f64 {
    2.0 / 3f64.powi(level as i32)
}

/// Closed-form interior point count `(9^ℓ − 4^ℓ)/5`.
pub fn expected_point_count(level: u32) -> u64 {
    (9u64.pow(level) - 4u64.pow(level)) / 5
}

/// Enumerates the lattice points inside the level-ℓ snowflake polygon.
pub fn generate_grid(level: u32) -> Result<Grid> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(Error::InvalidArgument(format!("level must be in 1..={MAX_LEVEL}, got {level}")));
    }
    let construction = koch_construction(level, true);
    let mut points = Vec::with_capacity(expected_point_count(level) as usize + 16);
    for tri in &construction.triangles {
        collect_triangle_points(tri, &mut points)?;
    }
    points.sort_unstable();
    points.dedup();
    Grid::from_points(level, points)
}

/// Pushes every lattice point strictly inside `tri`; fails if a lattice point
/// touches an edge.
fn collect_triangle_points(tri: &[FramePoint; 3], out: &mut Vec<LatticeCoord>) -> Result<()> {
    let [mut v0, v1, mut v2] = *tri;
    if orient(v0, v1, v2) < 0 {
        std::mem::swap(&mut v0, &mut v2);
    }
    let pmin = tri.iter().map(|v| v.p).min().unwrap_or(0);
    let pmax = tri.iter().map(|v| v.p).max().unwrap_or(0);
    let qmin = tri.iter().map(|v| v.q).min().unwrap_or(0);
    let qmax = tri.iter().map(|v| v.q).max().unwrap_or(0);
    for b in qmin.div_euclid(FRAME_PER_H)..=qmax.div_euclid(FRAME_PER_H) + 1 {
        for a in pmin.div_euclid(FRAME_PER_H) - 1..=pmax.div_euclid(FRAME_PER_H) + 1 {
            let c = FramePoint { p: a * FRAME_PER_H, q: b * FRAME_PER_H };
            let o = [orient(v0, v1, c), orient(v1, v2, c), orient(v2, v0, c)];
            if o.iter().all(|&s| s > 0) {
                out.push(LatticeCoord::new(a, b));
            } else if o.iter().all(|&s| s >= 0) {
                return Err(Error::Internal(format!("lattice point ({a}, {b}) lies on a Koch triangle edge")));
            }
        }
    }
    Ok(())
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes the ASCII grid file: a `level N h` header followed by one line
/// `i a b x y n1..n6` per point, 1-based, 0 marking ghost slots.
pub fn write_grid<W: Write>(grid: &Grid, mut dst: W) -> Result<()> {
    writeln!(dst, "{} {} {}", grid.level, grid.len(), fmt_f64(grid.h))?;
    for (i, (p, xy)) in grid.points.iter().zip(&grid.cartesian).enumerate() {
        write!(dst, "{} {} {} {} {}", i + 1, p.a, p.b, fmt_f64(xy[0]), fmt_f64(xy[1]))?;
        for &n in &grid.neighbors[i] {
            let n = if n == GHOST { 0 } else { n as u64 + 1 };
            write!(dst, " {n}")?;
        }
        writeln!(dst)?;
    }
    dst.flush()?;
    Ok(())
}

/// Reads a grid file written by [`write_grid`], validating every field.
pub fn read_grid<R: BufRead>(src: R) -> Result<Grid> {
    let mut lines = src.lines().enumerate();
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };

    let (ln, header) = lines.next().ok_or_else(|| parse_err(0, "missing header".into()))?;
    let header = header?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(parse_err(ln, format!("expected 'level N h', got {header:?}")));
    }
    let level: u32 = fields[0].parse().map_err(|e| parse_err(ln, format!("bad level: {e}")))?;
    let n: usize = fields[1].parse().map_err(|e| parse_err(ln, format!("bad point count: {e}")))?;
    let h: f64 = fields[2].parse().map_err(|e| parse_err(ln, format!("bad spacing: {e}")))?;
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(parse_err(ln, format!("level {level} out of range")));
    }
    if ((h - spacing(level)) / spacing(level)).abs() > 1e-12 {
        return Err(parse_err(ln, format!("spacing {h} inconsistent with level {level}")));
    }

    let mut points = Vec::with_capacity(n);
    let mut neighbors = Vec::with_capacity(n);
    for (ln, line) in lines.by_ref() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if points.len() == n {
            return Err(parse_err(ln, format!("more than {n} point lines")));
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 11 {
            return Err(parse_err(ln, format!("expected 11 fields, got {}", f.len())));
        }
        let idx: usize = f[0].parse().map_err(|e| parse_err(ln, format!("bad index: {e}")))?;
        if idx != points.len() + 1 {
            return Err(parse_err(ln, format!("expected index {}, got {idx}", points.len() + 1)));
        }
        let a: i64 = f[1].parse().map_err(|e| parse_err(ln, format!("bad a: {e}")))?;
        let b: i64 = f[2].parse().map_err(|e| parse_err(ln, format!("bad b: {e}")))?;
        for s in &f[3..5] {
            s.parse::<f64>().map_err(|e| parse_err(ln, format!("bad coordinate: {e}")))?;
        }
        let mut row = [GHOST; 6];
        for (slot, s) in f[5..].iter().enumerate() {
            let j: usize = s.parse().map_err(|e| parse_err(ln, format!("bad neighbor: {e}")))?;
            if j > n {
                return Err(parse_err(ln, format!("neighbor index {j} exceeds N = {n}")));
            }
            if j > 0 {
                row[slot] = (j - 1) as u32;
            }
        }
        points.push(LatticeCoord::new(a, b));
        neighbors.push(row);
    }
    if points.len() != n {
        return Err(Error::Parse { line: 1, msg: format!("header declares {n} points, file has {}", points.len()) });
    }
    if points.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parse { line: 1, msg: "points are not in (b, a) order".into() });
    }
    let grid = Grid::from_points(level, points)?;
    if let Some(i) = (0..n).find(|&i| grid.neighbors[i] != neighbors[i]) {
        return Err(Error::Parse { line: i + 2, msg: "neighbor row inconsistent with lattice coordinates".into() });
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_counts_match_closed_form() {
        for level in 1..=5 {
            let g = generate_grid(level).unwrap();
            assert_eq!(g.len() as u64, expected_point_count(level), "level {level}");
        }
    }

    #[test]
    fn level_one_is_the_center() {
        let g = generate_grid(1).unwrap();
        assert_eq!(g.points(), &[LatticeCoord::new(0, 0)]);
        assert_eq!(g.neighbor_table()[0], [GHOST; 6]);
    }

    #[test]
    fn level_two_neighbor_counts() {
        let g = generate_grid(2).unwrap();
        assert_eq!(g.len(), 13);
        let center = g.index_of(LatticeCoord::new(0, 0)).unwrap();
        assert_eq!(g.interior_count(center), 6);
        let tips = (0..g.len()).filter(|&i| g.interior_count(i) == 2).count();
        assert_eq!(tips, 6);
        // The remaining six form the first hexagonal shell: center, two
        // shell neighbors, two tips.
        let shell = (0..g.len()).filter(|&i| g.interior_count(i) == 5).count();
        assert_eq!(shell, 6);
    }

    #[test]
    fn rejects_out_of_range_levels() {
        assert!(matches!(generate_grid(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(generate_grid(MAX_LEVEL + 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn polygon_vertex_counts_and_radius() {
        let p0 = snowflake_polygon(0).unwrap();
        assert_eq!(p0.vertices.len(), 3);
        let r = 3f64.sqrt() / 3.0;
        for v in &p0.vertices {
            assert!(((v[0] * v[0] + v[1] * v[1]).sqrt() - r).abs() < 1e-14);
        }
        assert!(p0.vertices[0][0].abs() < 1e-15 && p0.vertices[0][1] > 0.0);
        assert_eq!(snowflake_polygon(1).unwrap().vertices.len(), 12);
        let p3 = snowflake_polygon(3).unwrap();
        assert_eq!(p3.vertices.len(), 192);
        let rmax = p3.vertices.iter().map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt()).fold(0.0, f64::max);
        assert!(rmax <= r + 1e-12);
    }

    #[test]
    fn polygon_is_simple() {
        // No two non-adjacent edges intersect (brute force).
        let p = snowflake_polygon(2).unwrap();
        let v = &p.vertices;
        let n = v.len();
        let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
        for i in 0..n {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b, c, d) = (v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]);
                let d1 = cross(a, b, c);
                let d2 = cross(a, b, d);
                let d3 = cross(c, d, a);
                let d4 = cross(c, d, b);
                assert!(!(d1 * d2 < 0.0 && d3 * d4 < 0.0), "edges {i} and {j} cross");
            }
        }
    }

    #[test]
    fn header_of_level_three_file() {
        let mut buf = Vec::new();
        write_grid(&generate_grid(3).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert!(header.starts_with("3 133 7.40740740740740"), "{header}");
    }

    #[test]
    fn round_trip_level_two() {
        let g = generate_grid(2).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let back = read_grid(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_neighbor_index_past_n() {
        let g = generate_grid(2).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let mut f: Vec<String> = lines[3].split_whitespace().map(str::to_owned).collect();
        f[10] = "14".into();
        lines[3] = f.join(" ");
        let err = read_grid(lines.join("\n").as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_truncated_file() {
        let g = generate_grid(2).unwrap();
        let mut buf = Vec::new();
        write_grid(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().take(5).collect();
        assert!(matches!(read_grid(cut.join("\n").as_bytes()), Err(Error::Parse { .. })));
    }
}
