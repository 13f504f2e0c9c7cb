//! Triangulated cross sections of the duct.
//!
//! A [`Mesh2D`] is a conforming P1 triangulation of the section Ω carrying
//! a subdomain label per triangle (0 = solid, k > 0 = fluid tube k) and a
//! tag per boundary edge. Boundary tags are mapped to conditions by a
//! [`BoundarySpec`]; periodic tags are resolved into explicit vertex pairs
//! by [`pair_periodic`].
//!
//! Meshes come from two sources: the line-oriented ASCII format read by
//! [`load_mesh`] (see the format notes on [`Mesh2D::save`]), or the
//! built-in generators. [`generate_square_with_tubes`] produces the
//! square-with-circular-tubes geometries used by the test cases; circles
//! are approximated by inscribed polygons since P1 elements cannot
//! represent curved interfaces.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Subdomain label of solid (non-fluid) triangles.
pub const SOLID: i32 = 0;

/// Boundary tags assigned by the generators to the four sides of the
/// outer square: left (x = −w), right (x = +w), bottom (y = −w),
/// top (y = +w).
pub const TAG_LEFT: u32 = 1;
pub const TAG_RIGHT: u32 = 2;
pub const TAG_BOTTOM: u32 = 3;
pub const TAG_TOP: u32 = 4;

/// Triangle of a [`Mesh2D`]: three vertex indices in counterclockwise
/// order plus a subdomain label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triangle {
    pub v: [usize; 3],
    pub label: i32,
}

/// Tagged boundary edge (pair of vertex indices).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub v: [usize; 2],
    pub tag: u32,
}

/// Immutable 2D triangular mesh with subdomain labels and tagged
/// boundary edges. Indices are 0-based in memory (1-based in files).
#[derive(Debug, Clone)]
pub struct Mesh2D {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Optional precomputed periodic pairs `(master, slave, group)`,
    /// as stored in mesh files.
    pub periodic_pairs: Vec<(usize, usize, u32)>,
}

/// Kind of lateral boundary condition attached to a boundary tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
    /// Robin condition σ∇T·n + aT = 0 with coefficient a > 0.
    Robin(f64),
    /// Periodic identification; tags sharing a group id are paired.
    Periodic(u32),
}

/// Map from boundary tag to condition kind.
#[derive(Debug, Clone, Default)]
pub struct BoundarySpec {
    kinds: HashMap<u32, BcKind>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(mut self, tag: u32, kind: BcKind) -> Self {
        self.kinds.insert(tag, kind);
        self
    }

    /// Same condition on every tag present in the mesh.
    pub fn uniform(mesh: &Mesh2D, kind: BcKind) -> Self {
        let mut spec = Self::new();
        for e in &mesh.boundary_edges {
            spec.kinds.insert(e.tag, kind);
        }
        spec
    }

    pub fn kind(&self, tag: u32) -> Option<BcKind> {
        self.kinds.get(&tag).copied()
    }

    pub fn tags(&self) -> impl Iterator<Item = (u32, BcKind)> + '_ {
        self.kinds.iter().map(|(&t, &k)| (t, k))
    }

    /// True when some tag carries a Dirichlet or Robin condition, i.e.
    /// the constants are controlled.
    pub fn controls_constants(&self) -> bool {
        self.kinds
            .values()
            .any(|k| matches!(k, BcKind::Dirichlet | BcKind::Robin(_)))
    }

    /// Checks that every tag used by the mesh is assigned, Robin
    /// coefficients are positive and periodic groups pair exactly two tags.
    pub fn validate(&self, mesh: &Mesh2D) -> Result<()> {
        for e in &mesh.boundary_edges {
            match self.kind(e.tag) {
                None => {
                    return Err(Error::BoundarySpec(format!(
                        "boundary tag {} is not assigned a condition",
                        e.tag
                    )))
                }
                Some(BcKind::Robin(a)) if a <= 0.0 => {
                    return Err(Error::BoundarySpec(format!(
                        "Robin coefficient must be positive, got {a} on tag {}",
                        e.tag
                    )))
                }
                _ => {}
            }
        }
        let mut group_count: HashMap<u32, usize> = HashMap::new();
        for (_, k) in self.tags() {
            if let BcKind::Periodic(g) = k {
                *group_count.entry(g).or_insert(0) += 1;
            }
        }
        for (g, n) in group_count {
            if n != 2 {
                return Err(Error::BoundarySpec(format!(
                    "periodic group {g} must pair exactly 2 tags, got {n}"
                )));
            }
        }
        Ok(())
    }
}

/// Periodic vertex identification: for each group, a bijection between
/// the two sides plus the translation mapping masters onto slaves.
#[derive(Debug, Clone)]
pub struct PeriodicPairing {
    pub groups: Vec<PeriodicGroup>,
}

#[derive(Debug, Clone)]
pub struct PeriodicGroup {
    pub group: u32,
    /// `(master, slave)` vertex index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub translation: [f64; 2],
}

impl PeriodicPairing {
    pub fn empty() -> Self {
        Self { groups: Vec::new() }
    }

    pub fn all_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.groups.iter().flat_map(|g| g.pairs.iter().copied())
    }
}

impl Mesh2D {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Twice the signed area of triangle `t` (positive for CCW ordering).
    pub fn double_area(&self, t: &Triangle) -> f64 {
        let [a, b, c] = t.v;
        let p = self.vertices[a];
        let q = self.vertices[b];
        let r = self.vertices[c];
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    }

    pub fn area(&self, t: &Triangle) -> f64 {
        0.5 * self.double_area(t)
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.area(t)).sum()
    }

    /// Area of the subdomain with the given label.
    pub fn label_area(&self, label: i32) -> f64 {
        self.triangles
            .iter()
            .filter(|t| t.label == label)
            .map(|t| self.area(t))
            .sum()
    }

    /// Sorted list of distinct subdomain labels.
    pub fn labels(&self) -> Vec<i32> {
        let mut l: Vec<i32> = self.triangles.iter().map(|t| t.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.vertices {
            for d in 0..2 {
                lo[d] = lo[d].min(v[d]);
                hi[d] = hi[d].max(v[d]);
            }
        }
        (lo, hi)
    }

    fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt()
    }

    /// Edges of the triangulation that belong to exactly one triangle,
    /// as unordered vertex pairs.
    pub fn topological_boundary(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let a = t.v[k];
                let b = t.v[(k + 1) % 3];
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        count
            .into_iter()
            .filter_map(|((a, b), n)| (n == 1).then_some([a, b]))
            .collect()
    }

    /// Structural validation: index ranges, positive areas, no duplicate
    /// triangles, and boundary edges covering the topological boundary
    /// exactly once.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vertices();
        let mut seen = HashMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            if t.v.iter().any(|&v| v >= n) {
                return Err(Error::MeshInvalid(format!(
                    "triangle {i} references a vertex out of range"
                )));
            }
            if t.v[0] == t.v[1] || t.v[1] == t.v[2] || t.v[0] == t.v[2] {
                return Err(Error::MeshInvalid(format!(
                    "triangle {i} has repeated vertices"
                )));
            }
            if self.double_area(t) <= 0.0 {
                return Err(Error::MeshInvalid(format!(
                    "triangle {i} has non-positive area {}",
                    0.5 * self.double_area(t)
                )));
            }
            let mut key = t.v;
            key.sort_unstable();
            if let Some(j) = seen.insert(key, i) {
                return Err(Error::MeshInvalid(format!(
                    "triangle {i} duplicates triangle {j}"
                )));
            }
        }
        for (i, e) in self.boundary_edges.iter().enumerate() {
            if e.v.iter().any(|&v| v >= n) {
                return Err(Error::MeshInvalid(format!(
                    "boundary edge {i} references a vertex out of range"
                )));
            }
        }
        // boundary edge list must equal the topological boundary, each listed once
        let mut topo: Vec<(usize, usize)> = self
            .topological_boundary()
            .into_iter()
            .map(|[a, b]| (a.min(b), a.max(b)))
            .collect();
        topo.sort_unstable();
        let mut listed: Vec<(usize, usize)> = self
            .boundary_edges
            .iter()
            .map(|e| (e.v[0].min(e.v[1]), e.v[0].max(e.v[1])))
            .collect();
        listed.sort_unstable();
        for w in listed.windows(2) {
            if w[0] == w[1] {
                return Err(Error::MeshInvalid(format!(
                    "boundary edge {:?} listed twice",
                    w[0]
                )));
            }
        }
        if topo != listed {
            return Err(Error::MeshInvalid(format!(
                "boundary edges do not cover the topological boundary \
                 ({} listed vs {} topological, or dangling edges present)",
                listed.len(),
                topo.len()
            )));
        }
        for (i, &(m, s, _)) in self.periodic_pairs.iter().enumerate() {
            if m >= n || s >= n {
                return Err(Error::MeshInvalid(format!(
                    "periodic pair {i} references a vertex out of range"
                )));
            }
        }
        Ok(())
    }

    /// Serializes to the ASCII mesh format:
    ///
    /// ```text
    /// GRAETZ-MESH 1
    /// VERTICES n
    /// x y                (n lines)
    /// TRIANGLES m
    /// i j k label        (m lines, 1-based indices)
    /// EDGES p
    /// i j tag            (p lines, 1-based indices)
    /// PERIODIC q         (optional)
    /// master slave group (q lines, 1-based indices)
    /// ```
    ///
    /// Coordinates are written in shortest round-trip form, so
    /// `load(save(mesh))` reproduces them bit-exactly.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        writeln!(out, "GRAETZ-MESH 1").unwrap();
        writeln!(out, "VERTICES {}", self.n_vertices()).unwrap();
        for v in &self.vertices {
            writeln!(out, "{} {}", v[0], v[1]).unwrap();
        }
        writeln!(out, "TRIANGLES {}", self.n_triangles()).unwrap();
        for t in &self.triangles {
            writeln!(
                out,
                "{} {} {} {}",
                t.v[0] + 1,
                t.v[1] + 1,
                t.v[2] + 1,
                t.label
            )
            .unwrap();
        }
        writeln!(out, "EDGES {}", self.boundary_edges.len()).unwrap();
        for e in &self.boundary_edges {
            writeln!(out, "{} {} {}", e.v[0] + 1, e.v[1] + 1, e.tag).unwrap();
        }
        if !self.periodic_pairs.is_empty() {
            writeln!(out, "PERIODIC {}", self.periodic_pairs.len()).unwrap();
            for &(m, s, g) in &self.periodic_pairs {
                writeln!(out, "{} {} {}", m + 1, s + 1, g).unwrap();
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Loads and validates a mesh from the ASCII format of [`Mesh2D::save`].
/// Indices are converted to 0-based.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh2D> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text).and_then(|m| {
        m.validate()?;
        Ok(m)
    })
}

fn parse_mesh(text: &str) -> Result<Mesh2D> {
    let err = |line: usize, msg: &str| Error::MeshParse {
        line: line + 1,
        msg: msg.to_string(),
    };
    // keep line numbers for diagnostics, skip blanks and # comments
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut it = lines.into_iter();

    let (i0, header) = it.next().ok_or_else(|| err(0, "empty file"))?;
    if header != "GRAETZ-MESH 1" {
        return Err(err(i0, "expected header `GRAETZ-MESH 1`"));
    }

    fn section_count(line: &str, name: &str) -> Option<usize> {
        let rest = line.strip_prefix(name)?;
        rest.trim().parse().ok()
    }

    let (iv, vh) = it.next().ok_or_else(|| err(i0, "missing VERTICES section"))?;
    let nv = section_count(vh, "VERTICES").ok_or_else(|| err(iv, "expected `VERTICES n`"))?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (i, l) = it.next().ok_or_else(|| err(iv, "truncated VERTICES section"))?;
        let mut f = l.split_whitespace();
        let x: f64 = f
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(i, "expected `x y`"))?;
        let y: f64 = f
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(i, "expected `x y`"))?;
        vertices.push([x, y]);
    }

    let (it0, th) = it.next().ok_or_else(|| err(iv, "missing TRIANGLES section"))?;
    let nt = section_count(th, "TRIANGLES").ok_or_else(|| err(it0, "expected `TRIANGLES m`"))?;
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (i, l) = it.next().ok_or_else(|| err(it0, "truncated TRIANGLES section"))?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(i, "expected `i j k label`"));
        }
        let v: Vec<usize> = f[..3]
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| err(i, "bad vertex index"))?;
        if v.iter().any(|&x| x == 0) {
            return Err(err(i, "vertex indices are 1-based in files"));
        }
        let label: i32 = f[3].parse().map_err(|_| err(i, "bad subdomain label"))?;
        triangles.push(Triangle {
            v: [v[0] - 1, v[1] - 1, v[2] - 1],
            label,
        });
    }

    let (ie, eh) = it.next().ok_or_else(|| err(it0, "missing EDGES section"))?;
    let ne = section_count(eh, "EDGES").ok_or_else(|| err(ie, "expected `EDGES p`"))?;
    let mut boundary_edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (i, l) = it.next().ok_or_else(|| err(ie, "truncated EDGES section"))?;
        let f: Vec<&str> = l.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(i, "expected `i j tag`"));
        }
        let a: usize = f[0].parse().map_err(|_| err(i, "bad vertex index"))?;
        let b: usize = f[1].parse().map_err(|_| err(i, "bad vertex index"))?;
        if a == 0 || b == 0 {
            return Err(err(i, "vertex indices are 1-based in files"));
        }
        let tag: u32 = f[2].parse().map_err(|_| err(i, "bad edge tag"))?;
        boundary_edges.push(BoundaryEdge { v: [a - 1, b - 1], tag });
    }

    let mut periodic_pairs = Vec::new();
    if let Some((ip, ph)) = it.next() {
        let np = section_count(ph, "PERIODIC").ok_or_else(|| err(ip, "expected `PERIODIC q`"))?;
        for _ in 0..np {
            let (i, l) = it.next().ok_or_else(|| err(ip, "truncated PERIODIC section"))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err(i, "expected `master slave group`"));
            }
            let m: usize = f[0].parse().map_err(|_| err(i, "bad vertex index"))?;
            let s: usize = f[1].parse().map_err(|_| err(i, "bad vertex index"))?;
            if m == 0 || s == 0 {
                return Err(err(i, "vertex indices are 1-based in files"));
            }
            let g: u32 = f[2].parse().map_err(|_| err(i, "bad group id"))?;
            periodic_pairs.push((m - 1, s - 1, g));
        }
    }

    Ok(Mesh2D {
        vertices,
        triangles,
        boundary_edges,
        periodic_pairs,
    })
}

/// Structured triangulation of the rectangle `[x0,x1] × [y0,y1]` with
/// `nx × ny` cells, two triangles per cell, all carrying `label`.
/// Sides are tagged `TAG_LEFT/RIGHT/BOTTOM/TOP`.
pub fn generate_structured_rect(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    nx: usize,
    ny: usize,
    label: i32,
) -> Mesh2D {
    assert!(nx > 0 && ny > 0 && x1 > x0 && y1 > y0);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            let x = x0 + (x1 - x0) * i as f64 / nx as f64;
            let y = y0 + (y1 - y0) * j as f64 / ny as f64;
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push(Triangle { v: [a, b, c], label });
            triangles.push(Triangle { v: [a, c, d], label });
        }
    }
    let mut boundary_edges = Vec::new();
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            v: [id(i, 0), id(i + 1, 0)],
            tag: TAG_BOTTOM,
        });
        boundary_edges.push(BoundaryEdge {
            v: [id(i, ny), id(i + 1, ny)],
            tag: TAG_TOP,
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            v: [id(0, j), id(0, j + 1)],
            tag: TAG_LEFT,
        });
        boundary_edges.push(BoundaryEdge {
            v: [id(nx, j), id(nx, j + 1)],
            tag: TAG_RIGHT,
        });
    }
    Mesh2D {
        vertices,
        triangles,
        boundary_edges,
        periodic_pairs: Vec::new(),
    }
}

/// Unit square `[0,1]²` with `n × n` cells, label 0.
pub fn generate_unit_square(n: usize) -> Mesh2D {
    generate_structured_rect(0.0, 1.0, 0.0, 1.0, n, n, SOLID)
}

/// Circular fluid tube specification for the square generator.
#[derive(Debug, Clone, Copy)]
pub struct TubeSpec {
    pub id: i32,
    pub center: [f64; 2],
    pub radius: f64,
}

/// Boundary-conforming triangulation of the square `[−w, w]²` containing
/// circular fluid subdomains.
///
/// Each circle is approximated by an inscribed polygon with
/// `circle_segments` sides (plus the cell-corner rays when those do not
/// coincide with polygon vertices) and meshed with a radial grid that
/// morphs from the circle to the enclosing rectangular cell, so the
/// polygon is an exact interior interface of the triangulation. Triangles
/// inside tube `k` carry label `k`; the rest carry 0.
///
/// Supported layouts: zero tubes (structured all-solid square), a single
/// tube anywhere strictly inside, or two/four equal-radius tubes at the
/// centers of the square's halves/quadrants (mirror-symmetric layouts).
/// `resolution` is the target edge length.
pub fn generate_square_with_tubes(
    half_width: f64,
    tubes: &[TubeSpec],
    resolution: f64,
    circle_segments: usize,
) -> Result<Mesh2D> {
    let w = half_width;
    if !(w > 0.0) || !(resolution > 0.0) {
        return Err(Error::MeshGeneration(
            "half_width and resolution must be positive".into(),
        ));
    }
    if circle_segments < 8 {
        return Err(Error::MeshGeneration(
            "circle_segments must be at least 8".into(),
        ));
    }
    for t in tubes {
        if t.id <= 0 {
            return Err(Error::MeshGeneration(format!(
                "tube id must be positive, got {}",
                t.id
            )));
        }
        if t.radius <= 0.0 {
            return Err(Error::MeshGeneration("tube radius must be positive".into()));
        }
        if t.radius < 1.5 * resolution {
            return Err(Error::MeshGeneration(format!(
                "resolution {} too coarse to resolve tube {} of radius {}",
                resolution, t.id, t.radius
            )));
        }
        let m = t.center[0].abs().max(t.center[1].abs()) + t.radius;
        if m >= w {
            return Err(Error::MeshGeneration(format!(
                "tube {} does not lie strictly inside the square",
                t.id
            )));
        }
    }
    for (i, a) in tubes.iter().enumerate() {
        for b in &tubes[i + 1..] {
            let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2))
                .sqrt();
            if d <= a.radius + b.radius {
                return Err(Error::MeshGeneration(format!(
                    "tubes {} and {} overlap",
                    a.id, b.id
                )));
            }
        }
    }

    match tubes.len() {
        0 => {
            let n = ((2.0 * w / resolution).ceil() as usize).max(2);
            Ok(generate_structured_rect(-w, w, -w, w, n, n, SOLID))
        }
        1 => {
            let cell = ogrid_cell(
                [-w, -w],
                [w, w],
                tubes[0].center,
                tubes[0].radius,
                tubes[0].id,
                resolution,
                circle_segments,
            )?;
            finalize_square_mesh(cell, w)
        }
        _ => generate_mirrored_cells(w, tubes, resolution, circle_segments),
    }
}

/// Mirror-symmetric multi-tube layouts: one canonical cell is meshed and
/// reflected about the split axes so that interface vertices match
/// bit-exactly.
fn generate_mirrored_cells(
    w: f64,
    tubes: &[TubeSpec],
    resolution: f64,
    circle_segments: usize,
) -> Result<Mesh2D> {
    let r0 = tubes[0].radius;
    if tubes.iter().any(|t| (t.radius - r0).abs() > 1e-12 * r0) {
        return Err(Error::MeshGeneration(
            "multi-tube layouts require equal radii".into(),
        ));
    }
    let eps = 1e-9 * w;
    // classify layout by the signs of tube centers
    let (kx, ky) = match tubes.len() {
        2 => {
            let a = tubes[0].center;
            let b = tubes[1].center;
            if (a[0] + b[0]).abs() < eps && (a[1] - b[1]).abs() < eps && a[0].abs() > eps {
                (2, 1)
            } else if (a[1] + b[1]).abs() < eps && (a[0] - b[0]).abs() < eps && a[1].abs() > eps {
                (1, 2)
            } else {
                return Err(Error::MeshGeneration(
                    "two-tube layouts must be mirror images across x = 0 or y = 0".into(),
                ));
            }
        }
        4 => (2, 2),
        n => {
            return Err(Error::MeshGeneration(format!(
                "unsupported tube count {n} (supported: 0, 1, 2 mirrored, 4 in quadrants)"
            )))
        }
    };
    // canonical cell: positive quadrant/half
    let lo = [if kx == 2 { 0.0 } else { -w }, if ky == 2 { 0.0 } else { -w }];
    let hi = [w, w];
    let canon = tubes
        .iter()
        .find(|t| t.center[0] > lo[0] - eps && t.center[1] > lo[1] - eps)
        .ok_or_else(|| Error::MeshGeneration("no tube in the canonical cell".into()))?;
    // every tube must be a mirror image of the canonical one
    for t in tubes {
        let ex = t.center[0].abs() - canon.center[0].abs();
        let ey = t.center[1].abs() - canon.center[1].abs();
        if ex.abs() > eps || ey.abs() > eps {
            return Err(Error::MeshGeneration(
                "tube centers must be mirror-symmetric across the split axes".into(),
            ));
        }
    }
    let cell = ogrid_cell(
        lo,
        hi,
        canon.center,
        canon.radius,
        canon.id,
        resolution,
        circle_segments,
    )?;

    let mut all = CellMesh::default();
    for t in tubes {
        let sx = if kx == 2 && t.center[0] < 0.0 { -1.0 } else { 1.0 };
        let sy = if ky == 2 && t.center[1] < 0.0 { -1.0 } else { 1.0 };
        all.append(cell.mirrored(sx, sy, t.id));
    }
    finalize_square_mesh(all, w)
}

/// Raw cell triangulation before vertex merging.
#[derive(Default, Clone)]
struct CellMesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<Triangle>,
}

impl CellMesh {
    /// Mirror copy (sx, sy ∈ {±1}); flips triangle orientation back when
    /// reflected an odd number of times and relabels the fluid triangles.
    fn mirrored(&self, sx: f64, sy: f64, fluid_label: i32) -> CellMesh {
        let vertices = self
            .vertices
            .iter()
            .map(|v| [sx * v[0], sy * v[1]])
            .collect();
        let flip = (sx < 0.0) ^ (sy < 0.0);
        let triangles = self
            .triangles
            .iter()
            .map(|t| {
                let v = if flip { [t.v[0], t.v[2], t.v[1]] } else { t.v };
                let label = if t.label != SOLID { fluid_label } else { SOLID };
                Triangle { v, label }
            })
            .collect();
        CellMesh { vertices, triangles }
    }

    fn append(&mut self, other: CellMesh) {
        let off = self.vertices.len();
        self.vertices.extend(other.vertices);
        self.triangles.extend(other.triangles.into_iter().map(|t| Triangle {
            v: [t.v[0] + off, t.v[1] + off, t.v[2] + off],
            label: t.label,
        }));
    }
}

/// Radial O-grid of a rectangular cell around an interior circle: a fan
/// at the circle center, uniform rings up to the circle polygon, then
/// layers interpolating from the polygon to the cell boundary.
fn ogrid_cell(
    lo: [f64; 2],
    hi: [f64; 2],
    center: [f64; 2],
    radius: f64,
    fluid_label: i32,
    resolution: f64,
    circle_segments: usize,
) -> Result<CellMesh> {
    let margin = (center[0] - lo[0])
        .min(hi[0] - center[0])
        .min(center[1] - lo[1])
        .min(hi[1] - center[1]);
    if margin <= radius + 0.5 * resolution {
        return Err(Error::MeshGeneration(
            "tube too close to its cell boundary for the requested resolution".into(),
        ));
    }

    // angle set: circle polygon vertices plus the cell corner directions
    let mut angles: Vec<f64> = (0..circle_segments)
        .map(|j| 2.0 * std::f64::consts::PI * j as f64 / circle_segments as f64)
        .collect();
    for corner in [
        [lo[0], lo[1]],
        [hi[0], lo[1]],
        [hi[0], hi[1]],
        [lo[0], hi[1]],
    ] {
        let mut a = (corner[1] - center[1]).atan2(corner[0] - center[0]);
        if a < 0.0 {
            a += 2.0 * std::f64::consts::PI;
        }
        if !angles.iter().any(|&b| {
            let d = (a - b).abs();
            d < 1e-9 || (2.0 * std::f64::consts::PI - d) < 1e-9
        }) {
            angles.push(a);
        }
    }
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = angles.len();

    // boundary intersection of the ray at angle `a` with the rectangle,
    // snapped to exact corner coordinates when applicable
    let ray_to_boundary = |a: f64| -> [f64; 2] {
        let (dx, dy) = (a.cos(), a.sin());
        let mut t = f64::INFINITY;
        if dx > 1e-15 {
            t = t.min((hi[0] - center[0]) / dx);
        }
        if dx < -1e-15 {
            t = t.min((lo[0] - center[0]) / dx);
        }
        if dy > 1e-15 {
            t = t.min((hi[1] - center[1]) / dy);
        }
        if dy < -1e-15 {
            t = t.min((lo[1] - center[1]) / dy);
        }
        let mut p = [center[0] + t * dx, center[1] + t * dy];
        for d in 0..2 {
            if (p[d] - lo[d]).abs() < 1e-9 * (hi[d] - lo[d]) {
                p[d] = lo[d];
            }
            if (p[d] - hi[d]).abs() < 1e-9 * (hi[d] - lo[d]) {
                p[d] = hi[d];
            }
        }
        p
    };

    let arc = 2.0 * std::f64::consts::PI * radius / circle_segments as f64;
    let delta_in = resolution.min(arc);
    let n_in = ((radius / delta_in).round() as usize).max(2);

    let circle_pts: Vec<[f64; 2]> = angles
        .iter()
        .map(|&a| [center[0] + radius * a.cos(), center[1] + radius * a.sin()])
        .collect();
    let boundary_pts: Vec<[f64; 2]> = angles.iter().map(|&a| ray_to_boundary(a)).collect();
    let max_out = circle_pts
        .iter()
        .zip(&boundary_pts)
        .map(|(c, b)| ((b[0] - c[0]).powi(2) + (b[1] - c[1]).powi(2)).sqrt())
        .fold(0.0f64, f64::max);
    let n_out = ((max_out / resolution).ceil() as usize).max(2);

    let mut cell = CellMesh::default();
    cell.vertices.push(center);
    // inner rings (k = 1..=n_in, ring n_in is the circle polygon itself)
    for k in 1..=n_in {
        let f = k as f64 / n_in as f64;
        for c in &circle_pts {
            cell.vertices.push([
                center[0] + f * (c[0] - center[0]),
                center[1] + f * (c[1] - center[1]),
            ]);
        }
    }
    // outer layers morphing to the rectangle (layer n_out is the boundary)
    for l in 1..=n_out {
        let s = l as f64 / n_out as f64;
        for (c, b) in circle_pts.iter().zip(&boundary_pts) {
            if l == n_out {
                cell.vertices.push(*b);
            } else {
                cell.vertices
                    .push([(1.0 - s) * c[0] + s * b[0], (1.0 - s) * c[1] + s * b[1]]);
            }
        }
    }

    let ring_start = |ring: usize| 1 + (ring - 1) * m; // ring index 1..=n_in+n_out
    // center fan
    for j in 0..m {
        cell.triangles.push(Triangle {
            v: [0, ring_start(1) + j, ring_start(1) + (j + 1) % m],
            label: fluid_label,
        });
    }
    // ring strips
    let n_rings = n_in + n_out;
    for ring in 1..n_rings {
        let label = if ring < n_in { fluid_label } else { SOLID };
        let a0 = ring_start(ring);
        let b0 = ring_start(ring + 1);
        for j in 0..m {
            let jn = (j + 1) % m;
            cell.triangles.push(Triangle {
                v: [a0 + j, b0 + j, b0 + jn],
                label,
            });
            cell.triangles.push(Triangle {
                v: [a0 + j, b0 + jn, a0 + jn],
                label,
            });
        }
    }
    Ok(cell)
}

/// Merges duplicated vertices, rebuilds the boundary edge list from the
/// topological boundary of the merged triangulation and tags the four
/// square sides.
fn finalize_square_mesh(cell: CellMesh, w: f64) -> Result<Mesh2D> {
    let snap = 1e-9 * w;
    let key = |p: [f64; 2]| -> (i64, i64) {
        (
            (p[0] / snap).round() as i64,
            (p[1] / snap).round() as i64,
        )
    };
    let mut lookup: HashMap<(i64, i64), usize> = HashMap::new();
    let mut remap = vec![0usize; cell.vertices.len()];
    let mut vertices = Vec::new();
    for (i, &p) in cell.vertices.iter().enumerate() {
        match lookup.entry(key(p)) {
            std::collections::hash_map::Entry::Occupied(e) => remap[i] = *e.get(),
            std::collections::hash_map::Entry::Vacant(e) => {
                remap[i] = vertices.len();
                e.insert(vertices.len());
                vertices.push(p);
            }
        }
    }
    let triangles: Vec<Triangle> = cell
        .triangles
        .iter()
        .map(|t| Triangle {
            v: [remap[t.v[0]], remap[t.v[1]], remap[t.v[2]]],
            label: t.label,
        })
        .collect();
    let mut mesh = Mesh2D {
        vertices,
        triangles,
        boundary_edges: Vec::new(),
        periodic_pairs: Vec::new(),
    };
    let tol = 1e-9 * w;
    let side = |p: [f64; 2]| -> Option<u32> {
        if (p[0] + w).abs() < tol {
            Some(TAG_LEFT)
        } else if (p[0] - w).abs() < tol {
            Some(TAG_RIGHT)
        } else if (p[1] + w).abs() < tol {
            Some(TAG_BOTTOM)
        } else if (p[1] - w).abs() < tol {
            Some(TAG_TOP)
        } else {
            None
        }
    };
    for [a, b] in mesh.topological_boundary() {
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let mid = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        let tag = side(mid).ok_or_else(|| {
            Error::MeshGeneration(format!(
                "internal boundary edge at ({:.4}, {:.4}): cell interfaces did not merge",
                mid[0], mid[1]
            ))
        })?;
        mesh.boundary_edges.push(BoundaryEdge { v: [a, b], tag });
    }
    mesh.boundary_edges.sort_by_key(|e| (e.tag, e.v));
    mesh.validate()?;
    Ok(mesh)
}

/// Resolves periodic boundary tags into explicit vertex pairs.
///
/// For each periodic group the two tagged sides must be translates of
/// each other; vertices are matched under that translation within a
/// tolerance of `1e-8 ×` the mesh bounding-box diagonal. The side with
/// the lexicographically smaller tag provides the masters.
pub fn pair_periodic(mesh: &Mesh2D, spec: &BoundarySpec) -> Result<PeriodicPairing> {
    spec.validate(mesh)?;
    let tol = 1e-8 * mesh.bbox_diagonal();

    let mut groups_tags: HashMap<u32, Vec<u32>> = HashMap::new();
    for (tag, kind) in spec.tags() {
        if let BcKind::Periodic(g) = kind {
            groups_tags.entry(g).or_default().push(tag);
        }
    }

    let mut groups = Vec::new();
    let mut group_ids: Vec<u32> = groups_tags.keys().copied().collect();
    group_ids.sort_unstable();
    for g in group_ids {
        let mut tags = groups_tags[&g].clone();
        tags.sort_unstable();
        let side_vertices = |tag: u32| -> Vec<usize> {
            let mut v: Vec<usize> = mesh
                .boundary_edges
                .iter()
                .filter(|e| e.tag == tag)
                .flat_map(|e| e.v)
                .collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let a = side_vertices(tags[0]);
        let b = side_vertices(tags[1]);
        if a.is_empty() {
            return Err(Error::PeriodicPairing(format!(
                "periodic group {g}: no edges carry tag {}",
                tags[0]
            )));
        }
        if a.len() != b.len() {
            return Err(Error::PeriodicPairing(format!(
                "periodic group {g}: side vertex counts differ ({} vs {})",
                a.len(),
                b.len()
            )));
        }
        let centroid = |vs: &[usize]| -> [f64; 2] {
            let mut c = [0.0; 2];
            for &v in vs {
                c[0] += mesh.vertices[v][0];
                c[1] += mesh.vertices[v][1];
            }
            [c[0] / vs.len() as f64, c[1] / vs.len() as f64]
        };
        let ca = centroid(&a);
        let cb = centroid(&b);
        let translation = [cb[0] - ca[0], cb[1] - ca[1]];

        let mut pairs = Vec::with_capacity(a.len());
        let mut used = vec![false; b.len()];
        for &va in &a {
            let target = [
                mesh.vertices[va][0] + translation[0],
                mesh.vertices[va][1] + translation[1],
            ];
            let found = b.iter().enumerate().find(|(k, &vb)| {
                !used[*k]
                    && (mesh.vertices[vb][0] - target[0]).abs() <= tol
                    && (mesh.vertices[vb][1] - target[1]).abs() <= tol
            });
            match found {
                Some((k, &vb)) => {
                    used[k] = true;
                    pairs.push((va, vb));
                }
                None => {
                    return Err(Error::PeriodicPairing(format!(
                        "periodic group {g}: vertex {va} has no match within tolerance {tol:.3e}"
                    )))
                }
            }
        }
        groups.push(PeriodicGroup {
            group: g,
            pairs,
            translation,
        });
    }
    Ok(PeriodicPairing { groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("graetz-mesh-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn minimal_simplex_roundtrip() {
        let text = "GRAETZ-MESH 1\nVERTICES 3\n0 0\n1 0\n0 1\nTRIANGLES 1\n1 2 3 0\nEDGES 3\n1 2 1\n2 3 1\n3 1 1\n";
        let path = tmpfile("simplex.msh");
        std::fs::write(&path, text).unwrap();
        let mesh = load_mesh(&path).unwrap();
        assert_eq!(mesh.n_vertices(), 3);
        assert_eq!(mesh.n_triangles(), 1);
        assert_eq!(mesh.boundary_edges.len(), 3);

        // save → load reproduces coordinates bit-exactly
        let path2 = tmpfile("simplex2.msh");
        mesh.save(&path2).unwrap();
        let mesh2 = load_mesh(&path2).unwrap();
        assert_eq!(mesh.vertices, mesh2.vertices);
        assert_eq!(mesh.triangles, mesh2.triangles);
        std::fs::remove_file(path).ok();
        std::fs::remove_file(path2).ok();
    }

    #[test]
    fn repeated_triangle_rejected() {
        let text = "GRAETZ-MESH 1\nVERTICES 4\n0 0\n1 0\n0 1\n1 1\nTRIANGLES 2\n1 2 3 0\n3 1 2 0\nEDGES 0\n";
        let path = tmpfile("dup.msh");
        std::fs::write(&path, text).unwrap();
        let err = load_mesh(&path).unwrap_err();
        assert!(matches!(err, Error::MeshInvalid(_)), "got {err}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "GRAETZ-MESH 1\nVERTICES 2\n0 0\nnot-a-number 1\n";
        let path = tmpfile("badline.msh");
        std::fs::write(&path, text).unwrap();
        match load_mesh(&path).unwrap_err() {
            Error::MeshParse { line, .. } => assert_eq!(line, 4),
            e => panic!("expected parse error, got {e}"),
        }
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn structured_mesh_is_valid() {
        let mesh = generate_unit_square(7);
        mesh.validate().unwrap();
        assert_eq!(mesh.n_vertices(), 64);
        assert_eq!(mesh.n_triangles(), 2 * 49);
        assert!((mesh.total_area() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dangling_boundary_edge_rejected() {
        let mut mesh = generate_unit_square(2);
        // an interior edge listed as boundary
        mesh.boundary_edges.push(BoundaryEdge { v: [4, 1], tag: 9 });
        assert!(mesh.validate().is_err());
    }

    #[test]
    fn single_tube_mesh_geometry() {
        let mesh = generate_square_with_tubes(
            5.0,
            &[TubeSpec {
                id: 1,
                center: [0.0, 0.0],
                radius: 2.0,
            }],
            0.6,
            32,
        )
        .unwrap();
        assert!((mesh.total_area() - 100.0).abs() < 1e-9 * 100.0);
        // fluid area = inscribed 32-gon area
        let poly = 0.5 * 32.0 * 4.0 * (2.0 * std::f64::consts::PI / 32.0).sin();
        assert!(
            (mesh.label_area(1) - poly).abs() < 1e-9 * poly,
            "fluid area {} vs polygon {}",
            mesh.label_area(1),
            poly
        );
        assert_eq!(mesh.labels(), vec![0, 1]);
    }

    #[test]
    fn four_tube_exchanger_mesh() {
        let tubes: Vec<TubeSpec> = [(1, [2.0, 2.0]), (2, [-2.0, 2.0]), (3, [-2.0, -2.0]), (4, [2.0, -2.0])]
            .iter()
            .map(|&(id, center)| TubeSpec {
                id,
                center,
                radius: 1.0,
            })
            .collect();
        let mesh = generate_square_with_tubes(4.0, &tubes, 0.5, 24).unwrap();
        assert!((mesh.total_area() - 64.0).abs() < 1e-9 * 64.0);
        assert_eq!(mesh.labels(), vec![0, 1, 2, 3, 4]);
        let a1 = mesh.label_area(1);
        for id in 2..=4 {
            assert!((mesh.label_area(id) - a1).abs() < 1e-9, "tube areas differ");
        }
    }

    #[test]
    fn overlapping_tubes_rejected() {
        let tubes = [
            TubeSpec { id: 1, center: [-1.0, 0.0], radius: 1.2 },
            TubeSpec { id: 2, center: [1.0, 0.0], radius: 1.2 },
        ];
        assert!(generate_square_with_tubes(5.0, &tubes, 0.3, 16).is_err());
    }

    #[test]
    fn coarse_resolution_rejected() {
        let tubes = [TubeSpec { id: 1, center: [0.0, 0.0], radius: 0.5 }];
        assert!(generate_square_with_tubes(5.0, &tubes, 1.0, 16).is_err());
    }

    #[test]
    fn structured_periodic_pairing_counts() {
        let n = 6;
        let mesh = generate_unit_square(n);
        let spec = BoundarySpec::new()
            .set(TAG_LEFT, BcKind::Periodic(1))
            .set(TAG_RIGHT, BcKind::Periodic(1))
            .set(TAG_BOTTOM, BcKind::Neumann)
            .set(TAG_TOP, BcKind::Neumann);
        let pairing = pair_periodic(&mesh, &spec).unwrap();
        assert_eq!(pairing.groups.len(), 1);
        let g = &pairing.groups[0];
        assert_eq!(g.pairs.len(), n + 1);
        // translation constant across pairs
        for &(m, s) in &g.pairs {
            let dx = mesh.vertices[s][0] - mesh.vertices[m][0];
            let dy = mesh.vertices[s][1] - mesh.vertices[m][1];
            assert!((dx - g.translation[0]).abs() < 1e-12);
            assert!((dy - g.translation[1]).abs() < 1e-12);
        }
        assert!((g.translation[0] - 1.0).abs() < 1e-12);
        assert!(g.translation[1].abs() < 1e-12);
    }

    #[test]
    fn perturbed_periodic_side_rejected() {
        let n = 4;
        let mut mesh = generate_unit_square(n);
        // shift one right-side vertex off the matching position
        let idx = mesh
            .vertices
            .iter()
            .position(|v| (v[0] - 1.0).abs() < 1e-14 && (v[1] - 0.5).abs() < 1e-14)
            .unwrap();
        mesh.vertices[idx][1] += 0.05;
        let spec = BoundarySpec::new()
            .set(TAG_LEFT, BcKind::Periodic(1))
            .set(TAG_RIGHT, BcKind::Periodic(1))
            .set(TAG_BOTTOM, BcKind::Neumann)
            .set(TAG_TOP, BcKind::Neumann);
        assert!(pair_periodic(&mesh, &spec).is_err());
    }

    #[test]
    fn double_periodic_pairing() {
        let mesh = generate_unit_square(5);
        let spec = BoundarySpec::new()
            .set(TAG_LEFT, BcKind::Periodic(1))
            .set(TAG_RIGHT, BcKind::Periodic(1))
            .set(TAG_BOTTOM, BcKind::Periodic(2))
            .set(TAG_TOP, BcKind::Periodic(2));
        let pairing = pair_periodic(&mesh, &spec).unwrap();
        assert_eq!(pairing.groups.len(), 2);
        for g in &pairing.groups {
            assert_eq!(g.pairs.len(), 6);
        }
    }
}
