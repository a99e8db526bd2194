//! Cross-section meshes of the rod profile S.
//!
//! All downstream solves assume a normalized section: unit area, centered
//! first moments and a diagonal second-moment matrix. `normalize_section`
//! produces that form and records the applied transform.
//!
//! Rectangles are admitted for tensor-grid tests even though corners can
//! degrade corrector regularity near the boundary; the disk is the smooth
//! reference case.

use crate::error::{Error, Result};
use std::path::Path;

/// Degree-4 symmetric triangle rule (6 points, barycentric, weights sum to 1).
pub const TRI_QUAD_POINTS: [([f64; 3], f64); 6] = [
    (
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
        0.109951743655322,
    ),
    (
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        0.223381589678011,
    ),
];

/// 3-point Gauss rule on [0,1] (degree 5), for boundary edge integrals.
pub const EDGE_QUAD_POINTS: [(f64, f64); 3] = [
    (0.112701665379258, 0.277777777777778),
    (0.5, 0.444444444444444),
    (0.887298334620742, 0.277777777777778),
];

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeSpec {
    /// Square with the given side length, centered at the origin.
    Square { side: f64 },
    Rectangle { width: f64, height: f64 },
    Disk { radius: f64 },
    Ellipse { rx: f64, ry: f64 },
    /// Plain-text file, one "x y" vertex per line, counter-clockwise.
    PolygonFile { path: std::path::PathBuf },
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShapeTag {
    Disk,
    Rectangle,
    Ellipse,
    Polygon,
}

#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    /// Outward unit normal of the section boundary along this edge.
    pub normal: [f64; 2],
    pub length: f64,
}

/// Per-triangle geometry cache: area and the constant P1 shape gradients.
#[derive(Debug, Clone)]
pub struct TriGeometry {
    pub area: f64,
    /// grad[i] is the gradient of the barycentric (hat) function of vertex i.
    pub grad: [[f64; 2]; 3],
}

#[derive(Debug, Clone)]
pub struct CrossSectionMesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub shape_tag: ShapeTag,
    pub tri_geom: Vec<TriGeometry>,
    /// true for nodes lying on the section boundary.
    pub is_boundary_node: Vec<bool>,
}

/// Transform recorded by `normalize_section`, applied in the fixed order
/// translate -> rotate -> scale.
#[derive(Debug, Clone, Copy)]
pub struct SectionTransform {
    pub translation: [f64; 2],
    pub rotation: f64,
    pub scale: f64,
}

impl SectionTransform {
    pub fn identity() -> Self {
        SectionTransform {
            translation: [0.0, 0.0],
            rotation: 0.0,
            scale: 1.0,
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.translation[0].abs() <= tol
            && self.translation[1].abs() <= tol
            && self.rotation.abs() <= tol
            && (self.scale - 1.0).abs() <= tol
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = [p[0] - self.translation[0], p[1] - self.translation[1]];
        let (s, c) = self.rotation.sin_cos();
        let r = [c * q[0] + s * q[1], -s * q[0] + c * q[1]];
        [self.scale * r[0], self.scale * r[1]]
    }
}

/// First and second moments of the section, by the mesh quadrature.
#[derive(Debug, Clone, Copy)]
pub struct SectionMoments {
    pub area: f64,
    pub first: [f64; 2],
    /// I2 = int x2^2 dx'
    pub i2: f64,
    /// I3 = int x3^2 dx'
    pub i3: f64,
    pub mixed: f64,
}

impl CrossSectionMesh {
    fn from_raw(
        nodes: Vec<[f64; 2]>,
        mut triangles: Vec<[usize; 3]>,
        shape_tag: ShapeTag,
    ) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::DegenerateShape("no triangles".into()));
        }
        for t in triangles.iter_mut() {
            let a = nodes[t[0]];
            let b = nodes[t[1]];
            let c = nodes[t[2]];
            let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
            if det.abs() < 1e-30 {
                return Err(Error::DegenerateShape("zero-area triangle".into()));
            }
            if det < 0.0 {
                t.swap(1, 2);
            }
        }
        let mut mesh = CrossSectionMesh {
            nodes,
            triangles,
            boundary_edges: Vec::new(),
            shape_tag,
            tri_geom: Vec::new(),
            is_boundary_node: Vec::new(),
        };
        mesh.rebuild_derived();
        Ok(mesh)
    }

    /// Recompute triangle geometry, boundary edges and node flags after the
    /// node coordinates changed.
    fn rebuild_derived(&mut self) {
        self.tri_geom = self
            .triangles
            .iter()
            .map(|t| {
                let p = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
                let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                    - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
                let area = 0.5 * det;
                let inv = 1.0 / det;
                // grad lambda_i from the edge opposite node i
                let grad = [
                    [(p[1][1] - p[2][1]) * inv, (p[2][0] - p[1][0]) * inv],
                    [(p[2][1] - p[0][1]) * inv, (p[0][0] - p[2][0]) * inv],
                    [(p[0][1] - p[1][1]) * inv, (p[1][0] - p[0][0]) * inv],
                ];
                TriGeometry { area, grad }
            })
            .collect();

        // boundary edges: appear in exactly one triangle
        use std::collections::HashMap;
        let mut count: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for (ti, t) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let a = t[e];
                let b = t[(e + 1) % 3];
                let key = (a.min(b), a.max(b));
                count
                    .entry(key)
                    .and_modify(|c| c.1 += 1)
                    .or_insert((ti, 1));
            }
        }
        let mut edges = Vec::new();
        for (&(a, b), &(ti, n)) in count.iter() {
            if n == 1 {
                let pa = self.nodes[a];
                let pb = self.nodes[b];
                let d = [pb[0] - pa[0], pb[1] - pa[1]];
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                // candidate normal; orient away from the triangle's centroid
                let mut nrm = [d[1] / len, -d[0] / len];
                let t = self.triangles[ti];
                let cx = (self.nodes[t[0]][0] + self.nodes[t[1]][0] + self.nodes[t[2]][0]) / 3.0;
                let cy = (self.nodes[t[0]][1] + self.nodes[t[1]][1] + self.nodes[t[2]][1]) / 3.0;
                let mid = [(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0];
                if nrm[0] * (mid[0] - cx) + nrm[1] * (mid[1] - cy) < 0.0 {
                    nrm = [-nrm[0], -nrm[1]];
                }
                edges.push(BoundaryEdge {
                    nodes: [a, b],
                    normal: nrm,
                    length: len,
                });
            }
        }
        edges.sort_by_key(|e| (e.nodes[0], e.nodes[1]));
        let mut flags = vec![false; self.nodes.len()];
        for e in &edges {
            flags[e.nodes[0]] = true;
            flags[e.nodes[1]] = true;
        }
        self.boundary_edges = edges;
        self.is_boundary_node = flags;
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| !self.is_boundary_node[i])
            .collect()
    }

    /// Iterate quadrature points of one triangle as (position, weight, barycentric).
    pub fn quad_points(&self, tri: usize) -> impl Iterator<Item = ([f64; 2], f64, [f64; 3])> + '_ {
        let t = self.triangles[tri];
        let p = [self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]];
        let area = self.tri_geom[tri].area;
        TRI_QUAD_POINTS.iter().map(move |&(lam, w)| {
            let x = [
                lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
            ];
            (x, w * area, lam)
        })
    }

    /// Quadrature of a pointwise function over the section.
    pub fn integrate(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        let mut acc = 0.0;
        for tri in 0..self.triangles.len() {
            for (x, w, _) in self.quad_points(tri) {
                acc += w * f(x);
            }
        }
        acc
    }

    pub fn area(&self) -> f64 {
        self.tri_geom.iter().map(|g| g.area).sum()
    }

    /// Plain-text export with node / triangle / edge sections.
    pub fn export_text(&self) -> String {
        let mut s = String::new();
        s.push_str("nodes\n");
        for n in &self.nodes {
            s.push_str(&format!("{:.17e} {:.17e}\n", n[0], n[1]));
        }
        s.push_str("triangles\n");
        for t in &self.triangles {
            s.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        s.push_str("edges\n");
        for e in &self.boundary_edges {
            s.push_str(&format!(
                "{} {} {:.17e} {:.17e}\n",
                e.nodes[0], e.nodes[1], e.normal[0], e.normal[1]
            ));
        }
        s
    }
}

/// Build a conforming triangulation of the requested shape. The result is not
/// yet normalized; run `normalize_section` before any solve that assumes the
/// moment conditions.
pub fn build_cross_section(shape: &ShapeSpec, resolution: f64) -> Result<CrossSectionMesh> {
    if !(resolution > 0.0) {
        return Err(Error::invalid("resolution must be positive"));
    }
    match shape {
        ShapeSpec::Square { side } => {
            build_rectangle(*side, *side, resolution, [0.0, 0.0])
        }
        ShapeSpec::Rectangle { width, height } => {
            build_rectangle(*width, *height, resolution, [0.0, 0.0])
        }
        ShapeSpec::Disk { radius } => build_ellipse(*radius, *radius, resolution),
        ShapeSpec::Ellipse { rx, ry } => build_ellipse(*rx, *ry, resolution),
        ShapeSpec::PolygonFile { path } => {
            let verts = read_polygon_file(path)?;
            build_polygon(&verts, resolution)
        }
        ShapeSpec::Polygon { vertices } => build_polygon(vertices, resolution),
    }
}

/// Rectangle centered at `center`. Cell counts are rounded to even so the
/// mesh is exactly symmetric under both axis reflections (the alternating
/// diagonal pattern maps onto itself).
pub fn build_rectangle(
    width: f64,
    height: f64,
    resolution: f64,
    center: [f64; 2],
) -> Result<CrossSectionMesh> {
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::DegenerateShape("rectangle with zero side".into()));
    }
    let even = |n: f64| -> usize {
        let k = (n / 2.0).round() as usize;
        (2 * k).max(2)
    };
    let nx = even(width / resolution);
    let ny = even(height / resolution);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push([
                center[0] - width / 2.0 + width * i as f64 / nx as f64,
                center[1] - height / 2.0 + height * j as f64 / ny as f64,
            ]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut tris = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                tris.push([a, b, c]);
                tris.push([a, c, d]);
            } else {
                tris.push([a, b, d]);
                tris.push([b, c, d]);
            }
        }
    }
    CrossSectionMesh::from_raw(nodes, tris, ShapeTag::Rectangle)
}

/// Concentric-ring mesh of the ellipse with 8j nodes on ring j, so the mesh
/// carries the full dihedral symmetry of the shape (reflections and the
/// quarter-turn used by the corrector symmetry checks). Boundary nodes lie
/// exactly on the curve.
fn build_ellipse(rx: f64, ry: f64, resolution: f64) -> Result<CrossSectionMesh> {
    if rx <= 0.0 || ry <= 0.0 {
        return Err(Error::DegenerateShape("ellipse with zero axis".into()));
    }
    let tag = if (rx - ry).abs() < 1e-15 {
        ShapeTag::Disk
    } else {
        ShapeTag::Ellipse
    };
    let r_ref = rx.max(ry);
    let m = ((r_ref / resolution).ceil() as usize).max(2);
    let mut nodes = vec![[0.0, 0.0]];
    let mut rings: Vec<Vec<usize>> = vec![vec![0]];
    for j in 1..=m {
        let fr = j as f64 / m as f64;
        let n_j = 8 * j;
        let mut ring = Vec::with_capacity(n_j);
        for t in 0..n_j {
            let th = 2.0 * std::f64::consts::PI * t as f64 / n_j as f64;
            ring.push(nodes.len());
            nodes.push([fr * rx * th.cos(), fr * ry * th.sin()]);
        }
        rings.push(ring);
    }
    let mut tris = Vec::new();
    // center fan
    let r1 = &rings[1];
    for t in 0..r1.len() {
        tris.push([0, r1[t], r1[(t + 1) % r1.len()]]);
    }
    for j in 1..m {
        stitch_rings(&rings[j], &rings[j + 1], &mut tris);
    }
    CrossSectionMesh::from_raw(nodes, tris, tag)
}

/// Triangulate the annulus between two rings whose nodes are uniformly spaced
/// in angle and share the starting angle.
fn stitch_rings(inner: &[usize], outer: &[usize], tris: &mut Vec<[usize; 3]>) {
    let ni = inner.len();
    let no = outer.len();
    let tau = 2.0 * std::f64::consts::PI;
    let mut i = 0usize;
    let mut o = 0usize;
    while i < ni || o < no {
        let ai_next = (i + 1) as f64 / ni as f64 * tau;
        let ao_next = (o + 1) as f64 / no as f64 * tau;
        let advance_inner = o == no || (i < ni && ai_next <= ao_next);
        if advance_inner {
            tris.push([inner[i % ni], outer[o % no], inner[(i + 1) % ni]]);
            i += 1;
        } else {
            tris.push([inner[i % ni], outer[o % no], outer[(o + 1) % no]]);
            o += 1;
        }
    }
}

fn read_polygon_file(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = std::fs::read_to_string(path)?;
    let mut verts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .ok_or_else(|| Error::invalid(format!("polygon line {}: missing x", ln + 1)))?
            .parse()
            .map_err(|_| Error::invalid(format!("polygon line {}: bad number", ln + 1)))?;
        let y: f64 = it
            .next()
            .ok_or_else(|| Error::invalid(format!("polygon line {}: missing y", ln + 1)))?
            .parse()
            .map_err(|_| Error::invalid(format!("polygon line {}: bad number", ln + 1)))?;
        verts.push([x, y]);
    }
    Ok(verts)
}

/// Ear-clip the polygon, then refine uniformly (4-way splits stay conforming)
/// until the longest edge is below the target resolution.
pub fn build_polygon(vertices: &[[f64; 2]], resolution: f64) -> Result<CrossSectionMesh> {
    if vertices.len() < 3 {
        return Err(Error::DegenerateShape(format!(
            "polygon needs at least 3 vertices, got {}",
            vertices.len()
        )));
    }
    let signed_area = {
        let mut a = 0.0;
        for i in 0..vertices.len() {
            let p = vertices[i];
            let q = vertices[(i + 1) % vertices.len()];
            a += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * a
    };
    if signed_area.abs() < 1e-14 {
        return Err(Error::DegenerateShape("polygon with zero area".into()));
    }
    let mut verts = vertices.to_vec();
    if signed_area < 0.0 {
        verts.reverse();
    }

    // ear clipping on index list
    let mut idx: Vec<usize> = (0..verts.len()).collect();
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    };
    let inside = |a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]| {
        cross(a, b, p) >= -1e-14 && cross(b, c, p) >= -1e-14 && cross(c, a, p) >= -1e-14
    };
    let mut guard = 0usize;
    while idx.len() > 3 {
        guard += 1;
        if guard > 10 * verts.len() * verts.len() {
            return Err(Error::DegenerateShape(
                "ear clipping failed (self-intersecting polygon?)".into(),
            ));
        }
        let n = idx.len();
        let mut clipped = false;
        for k in 0..n {
            let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            let (a, b, c) = (verts[ia], verts[ib], verts[ic]);
            if cross(a, b, c) <= 1e-14 {
                continue;
            }
            let mut ear = true;
            for &j in &idx {
                if j == ia || j == ib || j == ic {
                    continue;
                }
                if inside(a, b, c, verts[j]) {
                    ear = false;
                    break;
                }
            }
            if ear {
                tris.push([ia, ib, ic]);
                idx.remove(k);
                clipped = true;
                break;
            }
        }
        if !clipped {
            return Err(Error::DegenerateShape("no ear found in polygon".into()));
        }
    }
    tris.push([idx[0], idx[1], idx[2]]);

    // uniform refinement until resolution is met
    let mut nodes = verts;
    loop {
        let max_edge = tris.iter().fold(0.0f64, |m, t| {
            let mut me = m;
            for e in 0..3 {
                let p = nodes[t[e]];
                let q = nodes[t[(e + 1) % 3]];
                me = me.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
            me
        });
        if max_edge <= resolution {
            break;
        }
        let mut midpoint: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        let mut new_tris = Vec::with_capacity(4 * tris.len());
        for t in &tris {
            let mut mid = [0usize; 3];
            for e in 0..3 {
                let a = t[e];
                let b = t[(e + 1) % 3];
                let key = (a.min(b), a.max(b));
                mid[e] = *midpoint.entry(key).or_insert_with(|| {
                    let p = nodes[a];
                    let q = nodes[b];
                    nodes.push([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0]);
                    nodes.len() - 1
                });
            }
            new_tris.push([t[0], mid[0], mid[2]]);
            new_tris.push([mid[0], t[1], mid[1]]);
            new_tris.push([mid[2], mid[1], t[2]]);
            new_tris.push([mid[0], mid[1], mid[2]]);
        }
        tris = new_tris;
    }
    CrossSectionMesh::from_raw(nodes, tris, ShapeTag::Polygon)
}

/// Quadrature moments of the (possibly unnormalized) mesh.
pub fn section_moments(mesh: &CrossSectionMesh) -> SectionMoments {
    let mut area = 0.0;
    let mut first = [0.0, 0.0];
    let (mut i2, mut i3, mut mixed) = (0.0, 0.0, 0.0);
    for tri in 0..mesh.triangles.len() {
        for (x, w, _) in mesh.quad_points(tri) {
            area += w;
            first[0] += w * x[0];
            first[1] += w * x[1];
            i2 += w * x[0] * x[0];
            i3 += w * x[1] * x[1];
            mixed += w * x[0] * x[1];
        }
    }
    SectionMoments {
        area,
        first,
        i2,
        i3,
        mixed,
    }
}

/// Translate to the barycenter, rotate onto the principal axes of the second
/// moment matrix and scale to unit area, in that fixed order. Returns the
/// normalized mesh and the recorded transform. Near-normalized inputs map to
/// the identity transform.
pub fn normalize_section(mesh: &CrossSectionMesh) -> Result<(CrossSectionMesh, SectionTransform)> {
    let m = section_moments(mesh);
    if m.area <= 0.0 {
        return Err(Error::DegenerateShape("section with non-positive area".into()));
    }
    let mut tf = SectionTransform::identity();
    let tol = 1e-12;

    let c = [m.first[0] / m.area, m.first[1] / m.area];
    if c[0].abs() > tol || c[1].abs() > tol {
        tf.translation = c;
    }

    // moments about the barycenter
    let i2c = m.i2 - m.area * c[0] * c[0];
    let i3c = m.i3 - m.area * c[1] * c[1];
    let mixc = m.mixed - m.area * c[0] * c[1];
    if mixc.abs() > tol * (i2c + i3c) {
        tf.rotation = 0.5 * (2.0 * mixc).atan2(i2c - i3c);
    }

    if (m.area - 1.0).abs() > tol {
        tf.scale = 1.0 / m.area.sqrt();
    }

    let mut out = mesh.clone();
    for n in out.nodes.iter_mut() {
        *n = tf.apply(*n);
    }
    out.rebuild_derived();

    // the rotation angle from atan2 can zero the mixed moment with either
    // sign; flip if the first candidate failed
    let check = section_moments(&out);
    if check.mixed.abs() > 1e-10 {
        tf.rotation = -tf.rotation;
        out = mesh.clone();
        for n in out.nodes.iter_mut() {
            *n = tf.apply(*n);
        }
        out.rebuild_derived();
    }
    Ok((out, tf))
}

/// Build and normalize in one step; verifies the section invariants.
pub fn normalized_cross_section(shape: &ShapeSpec, resolution: f64) -> Result<CrossSectionMesh> {
    let raw = build_cross_section(shape, resolution)?;
    let (mesh, _) = normalize_section(&raw)?;
    let m = section_moments(&mesh);
    if (m.area - 1.0).abs() > 1e-10
        || m.first[0].abs() > 1e-10
        || m.first[1].abs() > 1e-10
        || m.mixed.abs() > 1e-10
    {
        return Err(Error::invalid(format!(
            "normalization failed: area={} first=({},{}) mixed={}",
            m.area, m.first[0], m.first[1], m.mixed
        )));
    }
    Ok(mesh)
}
