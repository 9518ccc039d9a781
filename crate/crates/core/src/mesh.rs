//! Tensor-product meshes (quads in 2D, hexes in 3D) with multilinear element
//! maps, periodic vertex identification, quadrature-point geometric factors,
//! continuous lattice numbering and Gauss-Lobatto refined submeshes.
//!
//! Local vertices and lattice nodes are always in lexicographic order with
//! the x index fastest: local vertex `v = i + 2 j + 4 k`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::basis::{gauss_lobatto_nodes, QuadratureRule1D};
use crate::error::{invalid, Error, Result};

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryFace {
    pub element: usize,
    /// `2 * axis + side`, side 0 at `xi_axis = -1`, side 1 at `xi_axis = +1`.
    pub local_face: usize,
    pub attribute: usize,
}

/// Sorted face vertex classes -> `(element, local face)` pairs.
type FaceIncidence = HashMap<Vec<usize>, Vec<(usize, usize)>>;

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<Point>,
    elements: Vec<usize>,
    vertex_class: Vec<usize>,
    num_vertex_classes: usize,
    boundary_faces: Vec<BoundaryFace>,
    periodic: bool,
}

#[inline]
pub(crate) fn ipow(base: usize, exp: usize) -> usize {
    base.pow(exp as u32)
}

/// Lexicographic multi-index of `idx` in a box with `n` points per axis.
#[inline]
pub(crate) fn unravel(idx: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut out = [0; 3];
    let mut r = idx;
    for a in out.iter_mut().take(dim) {
        *a = r % n;
        r /= n;
    }
    out
}

#[inline]
pub(crate) fn ravel(ijk: [usize; 3], n: usize, dim: usize) -> usize {
    let mut idx = 0;
    for a in (0..dim).rev() {
        idx = idx * n + ijk[a];
    }
    idx
}

impl Mesh {
    /// Builds a mesh from raw connectivity. Boundary faces are the faces
    /// referenced by exactly one element; they receive attribute 1.
    pub fn from_raw(dim: usize, nodes: Vec<Point>, elements: Vec<usize>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return invalid(format!("mesh dimension must be 2 or 3, got {dim}"));
        }
        let nv = 1 << dim;
        if !elements.len().is_multiple_of(nv) {
            return invalid("element connectivity length is not a multiple of 2^d");
        }
        if let Some(&bad) = elements.iter().find(|&&v| v >= nodes.len()) {
            return invalid(format!("element references missing vertex {bad}"));
        }
        let vertex_class: Vec<usize> = (0..nodes.len()).collect();
        let mut mesh = Self {
            dim,
            num_vertex_classes: nodes.len(),
            nodes,
            elements,
            vertex_class,
            boundary_faces: Vec::new(),
            periodic: false,
        };
        let faces = mesh.face_incidence()?;
        let mut bdr: Vec<BoundaryFace> = faces
            .into_values()
            .filter(|inc| inc.len() == 1)
            .map(|inc| BoundaryFace {
                element: inc[0].0,
                local_face: inc[0].1,
                attribute: 1,
            })
            .collect();
        bdr.sort_by_key(|f| (f.element, f.local_face));
        mesh.boundary_faces = bdr;
        mesh.check_orientation()?;
        Ok(mesh)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_elements(&self) -> usize {
        self.elements.len() >> self.dim
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Number of distinct vertices after periodic identification.
    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.num_vertex_classes
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn element_nodes(&self, e: usize) -> &[usize] {
        let nv = 1 << self.dim;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn vertex_class(&self, node: usize) -> usize {
        self.vertex_class[node]
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    pub fn boundary_attributes(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.boundary_faces.iter().map(|f| f.attribute).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// Local vertices of local face `f`, in lexicographic order of the
    /// remaining axes.
    pub fn face_local_vertices(dim: usize, f: usize) -> Vec<usize> {
        let (axis, side) = (f / 2, f % 2);
        (0..1usize << dim)
            .filter(|v| (v >> axis) & 1 == side)
            .collect()
    }

    fn face_incidence(&self) -> Result<FaceIncidence> {
        let mut faces: FaceIncidence = HashMap::new();
        for e in 0..self.num_elements() {
            let en = self.element_nodes(e);
            for f in 0..2 * self.dim {
                let mut key: Vec<usize> = Self::face_local_vertices(self.dim, f)
                    .into_iter()
                    .map(|v| self.vertex_class[en[v]])
                    .collect();
                key.sort_unstable();
                faces.entry(key).or_default().push((e, f));
            }
        }
        if let Some((_, inc)) = faces.iter().find(|(_, inc)| inc.len() > 2) {
            return invalid(format!(
                "non-manifold face shared by {} elements (first: element {})",
                inc.len(),
                inc[0].0
            ));
        }
        Ok(faces)
    }

    /// Number of faces shared by two elements.
    pub fn num_interior_faces(&self) -> usize {
        self.face_incidence()
            .map(|f| f.values().filter(|inc| inc.len() == 2).count())
            .unwrap_or(0)
    }

    fn check_orientation(&self) -> Result<()> {
        // corners and center cover the extreme values of det J for
        // the multilinear maps emitted here
        let probes: Vec<[f64; 3]> = (0..1usize << self.dim)
            .map(|v| {
                let mut xi = [0.0; 3];
                for (a, x) in xi.iter_mut().enumerate().take(self.dim) {
                    *x = if (v >> a) & 1 == 1 { 1.0 } else { -1.0 };
                }
                xi
            })
            .chain(std::iter::once([0.0; 3]))
            .collect();
        for e in 0..self.num_elements() {
            for (q, xi) in probes.iter().enumerate() {
                let j = self.jacobian(e, xi);
                let det = det(self.dim, &j);
                if det <= 0.0 {
                    return Err(Error::MeshInversion {
                        element: e,
                        point: q,
                        det,
                    });
                }
            }
        }
        Ok(())
    }

    /// Physical coordinates of reference point `xi` in element `e`.
    pub fn map_point(&self, e: usize, xi: &[f64; 3]) -> Point {
        let d = self.dim;
        let en = self.element_nodes(e);
        let mut x = [0.0; 3];
        for (v, &node) in en.iter().enumerate() {
            let mut n = 1.0;
            for (a, &xa) in xi.iter().enumerate().take(d) {
                n *= if (v >> a) & 1 == 1 {
                    0.5 * (1.0 + xa)
                } else {
                    0.5 * (1.0 - xa)
                };
            }
            let c = &self.nodes[node];
            for k in 0..d {
                x[k] += n * c[k];
            }
        }
        x
    }

    /// `J[i][j] = d x_i / d xi_j` at reference point `xi` of element `e`.
    pub fn jacobian(&self, e: usize, xi: &[f64; 3]) -> [[f64; 3]; 3] {
        let en = self.element_nodes(e);
        let mut pts = [[0.0; 3]; 8];
        for (p, &node) in pts.iter_mut().zip(en) {
            *p = self.nodes[node];
        }
        multilinear_jacobian(self.dim, &pts[..en.len()], xi)
    }

    /// Coordinates of the tensor lattice `nodes1d^d` mapped into element `e`.
    /// This is the single evaluation path for nodal coordinates: the H1
    /// spaces and the refined meshes both call it.
    pub fn lattice_coords(&self, e: usize, nodes1d: &[f64], out: &mut Vec<Point>) {
        let n = nodes1d.len();
        let npts = ipow(n, self.dim);
        out.clear();
        for idx in 0..npts {
            let ijk = unravel(idx, n, self.dim);
            let mut xi = [0.0; 3];
            for a in 0..self.dim {
                xi[a] = nodes1d[ijk[a]];
            }
            out.push(self.map_point(e, &xi));
        }
    }

    /// Moves every vertex that does not lie on the domain boundary by a
    /// random offset of at most `amplitude` times the local edge length.
    pub fn perturb_interior(&mut self, amplitude: f64, seed: u64) -> Result<()> {
        let mut on_boundary = vec![false; self.nodes.len()];
        for bf in &self.boundary_faces {
            let en = self.element_nodes(bf.element).to_vec();
            for v in Self::face_local_vertices(self.dim, bf.local_face) {
                on_boundary[en[v]] = true;
            }
        }
        if self.periodic {
            // nodes identified with another node sit on a periodic boundary
            let mut count = vec![0usize; self.num_vertex_classes];
            for &c in &self.vertex_class {
                count[c] += 1;
            }
            for (n, &c) in self.vertex_class.iter().enumerate() {
                if count[c] > 1 {
                    on_boundary[n] = true;
                }
            }
        }
        let mut hmin = vec![f64::INFINITY; self.nodes.len()];
        for e in 0..self.num_elements() {
            let en = self.element_nodes(e);
            for v in 0..en.len() {
                for a in 0..self.dim {
                    let w = v ^ (1 << a);
                    let (p, q) = (self.nodes[en[v]], self.nodes[en[w]]);
                    let l = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
                        .sqrt();
                    hmin[en[v]] = hmin[en[v]].min(l);
                }
            }
        }
        let mut rng = SplitMix64::seed_from_u64(seed);
        for (n, node) in self.nodes.iter_mut().enumerate() {
            if on_boundary[n] || !hmin[n].is_finite() {
                continue;
            }
            for k in 0..self.dim {
                node[k] += amplitude * hmin[n] * rng.random_range(-1.0..1.0);
            }
        }
        self.check_orientation()
    }

    /// Continuous degree-`p` lattice numbering: vertices, then edges, then
    /// faces, then element interiors, each in mesh order.
    pub fn lattice_numbering(&self, p: usize) -> Result<LatticeNumbering> {
        if p < 1 {
            return invalid("lattice degree must be >= 1");
        }
        LatticeNumbering::build(self, p)
    }

    /// Measure of the domain, computed from corner-probe-exact quadrature of
    /// the multilinear maps.
    pub fn volume(&self) -> f64 {
        let rule = QuadratureRule1D::new(crate::basis::QuadratureKind::GaussLegendre, 2)
            .expect("2-point rule");
        let gf = GeometricFactors::compute(self, &rule).expect("valid mesh");
        gf.volume()
    }

    pub fn write_vtk<W: Write>(&self, mut w: W) -> Result<()> {
        let nv = 1usize << self.dim;
        let ne = self.num_elements();
        let mut s = String::new();
        writeln!(s, "# vtk DataFile Version 3.0").unwrap();
        writeln!(s, "flowbench mesh").unwrap();
        writeln!(s, "ASCII").unwrap();
        writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
        writeln!(s, "POINTS {} double", self.nodes.len()).unwrap();
        for p in &self.nodes {
            writeln!(s, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]).unwrap();
        }
        writeln!(s, "CELLS {} {}", ne, ne * (nv + 1)).unwrap();
        for e in 0..ne {
            let en = self.element_nodes(e);
            write!(s, "{nv}").unwrap();
            for &v in vtk_order(self.dim) {
                write!(s, " {}", en[v]).unwrap();
            }
            writeln!(s).unwrap();
        }
        writeln!(s, "CELL_TYPES {ne}").unwrap();
        let ty = if self.dim == 2 { 9 } else { 12 };
        for _ in 0..ne {
            writeln!(s, "{ty}").unwrap();
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }

    /// Reads a legacy-VTK ASCII unstructured grid of quads or hexahedra.
    pub fn read_vtk<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.iter().peekable();
        let mut nodes: Vec<Point> = Vec::new();
        let mut cells: Vec<Vec<usize>> = Vec::new();
        let mut types: Vec<usize> = Vec::new();
        let parse_err = |what: &str| Error::InvalidArgument(format!("malformed VTK: {what}"));
        while let Some(tok) = it.next() {
            match tok.as_str() {
                "POINTS" => {
                    let n: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err("POINTS"))?;
                    it.next();
                    for _ in 0..n {
                        let mut p = [0.0; 3];
                        for c in p.iter_mut() {
                            *c = it
                                .next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err("coordinate"))?;
                        }
                        nodes.push(p);
                    }
                }
                "CELLS" => {
                    let n: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err("CELLS"))?;
                    it.next();
                    for _ in 0..n {
                        let k: usize = it
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| parse_err("cell size"))?;
                        let mut c = Vec::with_capacity(k);
                        for _ in 0..k {
                            c.push(
                                it.next()
                                    .and_then(|t| t.parse().ok())
                                    .ok_or_else(|| parse_err("cell index"))?,
                            );
                        }
                        cells.push(c);
                    }
                }
                "CELL_TYPES" => {
                    let n: usize = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err("CELL_TYPES"))?;
                    for _ in 0..n {
                        types.push(
                            it.next()
                                .and_then(|t| t.parse().ok())
                                .ok_or_else(|| parse_err("cell type"))?,
                        );
                    }
                }
                _ => {}
            }
        }
        if cells.is_empty() || types.len() != cells.len() {
            return invalid("VTK file has no cells or inconsistent CELL_TYPES");
        }
        let dim = match types[0] {
            9 => 2,
            12 => 3,
            t => return invalid(format!("unsupported VTK cell type {t}")),
        };
        if types.iter().any(|&t| t != types[0]) {
            return invalid("mixed cell types are not supported");
        }
        let order = vtk_order(dim);
        let mut elements = Vec::with_capacity(cells.len() << dim);
        for c in &cells {
            if c.len() != 1 << dim {
                return invalid("cell has the wrong number of vertices");
            }
            let mut lex = vec![0; c.len()];
            for (k, &v) in order.iter().enumerate() {
                lex[v] = c[k];
            }
            elements.extend(lex);
        }
        Self::from_raw(dim, nodes, elements)
    }
}

/// Lexicographic local vertex at each VTK vertex slot.
pub(crate) fn vtk_order(dim: usize) -> &'static [usize] {
    if dim == 2 {
        &[0, 1, 3, 2]
    } else {
        &[0, 1, 3, 2, 4, 5, 7, 6]
    }
}

/// Axis-aligned Cartesian mesh of `extents[a].0 ..= extents[a].1` with
/// `counts[a]` elements per axis. Periodic axes identify opposite-face
/// vertices and carry no boundary faces. Boundary attribute of the face at
/// the low/high end of axis `a` is `2 a + 1` / `2 a + 2`.
pub fn cartesian_mesh(
    dim: usize,
    extents: &[(f64, f64)],
    counts: &[usize],
    periodic: &[bool],
) -> Result<Mesh> {
    if !(dim == 2 || dim == 3) {
        return invalid(format!("mesh dimension must be 2 or 3, got {dim}"));
    }
    if extents.len() != dim || counts.len() != dim || periodic.len() != dim {
        return invalid("extents, counts and periodic flags must have one entry per axis");
    }
    for a in 0..dim {
        if counts[a] == 0 {
            return invalid(format!("element count along axis {a} must be >= 1"));
        }
        let (lo, hi) = extents[a];
        if !(hi - lo).is_finite() || hi <= lo {
            return invalid(format!("axis {a} has zero or negative length [{lo}, {hi}]"));
        }
        if periodic[a] && counts[a] < 3 {
            return invalid(format!(
                "periodic axis {a} needs at least 3 elements, got {}",
                counts[a]
            ));
        }
    }
    let np: Vec<usize> = (0..3)
        .map(|a| if a < dim { counts[a] + 1 } else { 1 })
        .collect();
    let mut nodes = Vec::with_capacity(np[0] * np[1] * np[2]);
    let mut vertex_class = Vec::with_capacity(nodes.capacity());
    let ncls: Vec<usize> = (0..3)
        .map(|a| {
            if a < dim && periodic[a] {
                counts[a]
            } else {
                np[a]
            }
        })
        .collect();
    for k in 0..np[2] {
        for j in 0..np[1] {
            for i in 0..np[0] {
                let ijk = [i, j, k];
                let mut p = [0.0; 3];
                for a in 0..dim {
                    let (lo, hi) = extents[a];
                    p[a] = if ijk[a] == counts[a] {
                        hi
                    } else {
                        lo + (hi - lo) * ijk[a] as f64 / counts[a] as f64
                    };
                }
                nodes.push(p);
                let c: Vec<usize> = (0..3).map(|a| ijk[a] % ncls[a]).collect();
                vertex_class.push(c[0] + ncls[0] * (c[1] + ncls[1] * c[2]));
            }
        }
    }
    // renumber classes in order of first appearance
    let mut remap = vec![usize::MAX; ncls[0] * ncls[1] * ncls[2]];
    let mut next = 0;
    for c in vertex_class.iter_mut() {
        if remap[*c] == usize::MAX {
            remap[*c] = next;
            next += 1;
        }
        *c = remap[*c];
    }
    let nel: usize = counts.iter().product();
    let mut elements = Vec::with_capacity(nel << dim);
    let mut boundary_faces = Vec::new();
    let cz = if dim == 3 { counts[2] } else { 1 };
    let mut e = 0;
    for k in 0..cz {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                for v in 0..1usize << dim {
                    let (di, dj, dk) = (v & 1, (v >> 1) & 1, (v >> 2) & 1);
                    elements.push((i + di) + np[0] * ((j + dj) + np[1] * (k + dk)));
                }
                let ijk = [i, j, k];
                for a in 0..dim {
                    if periodic[a] {
                        continue;
                    }
                    if ijk[a] == 0 {
                        boundary_faces.push(BoundaryFace {
                            element: e,
                            local_face: 2 * a,
                            attribute: 2 * a + 1,
                        });
                    }
                    if ijk[a] + 1 == counts[a] {
                        boundary_faces.push(BoundaryFace {
                            element: e,
                            local_face: 2 * a + 1,
                            attribute: 2 * a + 2,
                        });
                    }
                }
                e += 1;
            }
        }
    }
    Ok(Mesh {
        dim,
        nodes,
        elements,
        vertex_class,
        num_vertex_classes: next,
        boundary_faces,
        periodic: periodic.iter().any(|&p| p),
    })
}

/// Jacobian of the multilinear map through `pts` (lexicographic corners).
pub fn multilinear_jacobian(dim: usize, pts: &[Point], xi: &[f64; 3]) -> [[f64; 3]; 3] {
    let mut jac = [[0.0; 3]; 3];
    for (v, c) in pts.iter().enumerate() {
        for j in 0..dim {
            let mut dn = 1.0;
            for (a, &xa) in xi.iter().enumerate().take(dim) {
                let hi = (v >> a) & 1 == 1;
                dn *= match (a == j, hi) {
                    (true, true) => 0.5,
                    (true, false) => -0.5,
                    (false, true) => 0.5 * (1.0 + xa),
                    (false, false) => 0.5 * (1.0 - xa),
                };
            }
            for i in 0..dim {
                jac[i][j] += dn * c[i];
            }
        }
    }
    jac
}

/// Determinant of the leading `dim x dim` block.
#[inline]
pub fn det(dim: usize, j: &[[f64; 3]; 3]) -> f64 {
    if dim == 2 {
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    } else {
        j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
    }
}

/// Inverse of the leading `dim x dim` block given its determinant.
#[inline]
pub fn inverse(dim: usize, j: &[[f64; 3]; 3], det: f64) -> [[f64; 3]; 3] {
    let mut inv = [[0.0; 3]; 3];
    let r = 1.0 / det;
    if dim == 2 {
        inv[0][0] = j[1][1] * r;
        inv[0][1] = -j[0][1] * r;
        inv[1][0] = -j[1][0] * r;
        inv[1][1] = j[0][0] * r;
    } else {
        inv[0][0] = (j[1][1] * j[2][2] - j[1][2] * j[2][1]) * r;
        inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) * r;
        inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) * r;
        inv[1][0] = (j[1][2] * j[2][0] - j[1][0] * j[2][2]) * r;
        inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) * r;
        inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) * r;
        inv[2][0] = (j[1][0] * j[2][1] - j[1][1] * j[2][0]) * r;
        inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) * r;
        inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) * r;
    }
    inv
}

/// Jacobians, determinants, inverses and physical coordinates at every
/// tensor quadrature point of every element. Arrays are element-major,
/// quadrature-point fastest; matrices are row-major `d x d`.
#[derive(Debug, Clone)]
pub struct GeometricFactors {
    dim: usize,
    num_elements: usize,
    qpts_per_elem: usize,
    weights: Vec<f64>,
    jac: Vec<f64>,
    det: Vec<f64>,
    inv: Vec<f64>,
    coords: Vec<f64>,
}

impl GeometricFactors {
    pub fn compute(mesh: &Mesh, rule: &QuadratureRule1D) -> Result<Self> {
        let d = mesh.dim();
        let nq = rule.len();
        let nqp = ipow(nq, d);
        let ne = mesh.num_elements();
        let mut weights = vec![1.0; nqp];
        let mut refpts = vec![[0.0; 3]; nqp];
        for (q, (w, xi)) in weights.iter_mut().zip(refpts.iter_mut()).enumerate() {
            let ijk = unravel(q, nq, d);
            for a in 0..d {
                *w *= rule.weights[ijk[a]];
                xi[a] = rule.points[ijk[a]];
            }
        }
        let dd = d * d;
        let mut jac = vec![0.0; ne * nqp * dd];
        let mut dets = vec![0.0; ne * nqp];
        let mut inv = vec![0.0; ne * nqp * dd];
        let mut coords = vec![0.0; ne * nqp * d];
        for e in 0..ne {
            for (q, xi) in refpts.iter().enumerate() {
                let j = mesh.jacobian(e, xi);
                let dt = det(d, &j);
                if dt <= 0.0 {
                    return Err(Error::MeshInversion {
                        element: e,
                        point: q,
                        det: dt,
                    });
                }
                let ji = inverse(d, &j, dt);
                let base = (e * nqp + q) * dd;
                for r in 0..d {
                    for c in 0..d {
                        jac[base + r * d + c] = j[r][c];
                        inv[base + r * d + c] = ji[r][c];
                    }
                }
                dets[e * nqp + q] = dt;
                let x = mesh.map_point(e, xi);
                coords[(e * nqp + q) * d..(e * nqp + q + 1) * d].copy_from_slice(&x[..d]);
            }
        }
        Ok(Self {
            dim: d,
            num_elements: ne,
            qpts_per_elem: nqp,
            weights,
            jac,
            det: dets,
            inv,
            coords,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    #[inline]
    pub fn qpts_per_element(&self) -> usize {
        self.qpts_per_elem
    }

    /// Tensor-product reference weights (shared by all elements).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn det(&self, e: usize, q: usize) -> f64 {
        self.det[e * self.qpts_per_elem + q]
    }

    #[inline]
    pub fn jacobian(&self, e: usize, q: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let b = (e * self.qpts_per_elem + q) * dd;
        &self.jac[b..b + dd]
    }

    #[inline]
    pub fn inverse(&self, e: usize, q: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        let b = (e * self.qpts_per_elem + q) * dd;
        &self.inv[b..b + dd]
    }

    #[inline]
    pub fn coords(&self, e: usize, q: usize) -> &[f64] {
        let b = (e * self.qpts_per_elem + q) * self.dim;
        &self.coords[b..b + self.dim]
    }

    /// `sum_e sum_q w_q |J|`
    pub fn volume(&self) -> f64 {
        (0..self.num_elements)
            .map(|e| {
                (0..self.qpts_per_elem)
                    .map(|q| self.weights[q] * self.det(e, q))
                    .sum::<f64>()
            })
            .sum()
    }
}

/// Continuous global numbering of the degree-`p` tensor lattice of every
/// element (the nodes of a scalar H1 space).
#[derive(Debug, Clone)]
pub struct LatticeNumbering {
    dim: usize,
    degree: usize,
    count: usize,
    element_map: Vec<usize>,
}

#[derive(Clone, Copy)]
enum Entity {
    Vertex(usize),
    Edge { id: usize, forward: bool },
    Face { id: usize },
    Interior,
}

impl LatticeNumbering {
    fn build(mesh: &Mesh, p: usize) -> Result<Self> {
        let d = mesh.dim();
        let n1 = p + 1;
        let nloc = ipow(n1, d);
        let ne = mesh.num_elements();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut face_ids: HashMap<[usize; 4], usize> = HashMap::new();
        // first pass: discover entities in mesh order
        let mut local: Vec<(Entity, usize)> = Vec::with_capacity(ne * nloc);
        for e in 0..ne {
            let en = mesh.element_nodes(e);
            let cls = |v: usize| mesh.vertex_class(en[v]);
            for idx in 0..nloc {
                let ijk = unravel(idx, n1, d);
                let free: Vec<usize> = (0..d).filter(|&a| ijk[a] != 0 && ijk[a] != p).collect();
                let corner = |sel: &[(usize, usize)]| {
                    let mut v = 0;
                    for a in 0..d {
                        let hi = match sel.iter().find(|s| s.0 == a) {
                            Some(s) => s.1 == 1,
                            None => ijk[a] == p,
                        };
                        if hi {
                            v |= 1 << a;
                        }
                    }
                    v
                };
                let ent = match free.len() {
                    0 => (Entity::Vertex(cls(corner(&[]))), 0),
                    1 => {
                        let a = free[0];
                        let c0 = cls(corner(&[(a, 0)]));
                        let c1 = cls(corner(&[(a, 1)]));
                        if c0 == c1 {
                            return invalid(
                                "edge with identical endpoints after periodic identification",
                            );
                        }
                        let key = (c0.min(c1), c0.max(c1));
                        let next = edge_ids.len();
                        let id = *edge_ids.entry(key).or_insert(next);
                        let t = ijk[a] - 1;
                        (
                            Entity::Edge {
                                id,
                                forward: c0 < c1,
                            },
                            t,
                        )
                    }
                    2 if d == 3 => {
                        let (a, b) = (free[0], free[1]);
                        let cc = [
                            cls(corner(&[(a, 0), (b, 0)])),
                            cls(corner(&[(a, 1), (b, 0)])),
                            cls(corner(&[(a, 0), (b, 1)])),
                            cls(corner(&[(a, 1), (b, 1)])),
                        ];
                        let mut key = cc;
                        key.sort_unstable();
                        let next = face_ids.len();
                        let id = *face_ids.entry(key).or_insert(next);
                        // canonical frame: origin at min class, first axis
                        // toward the smaller-class neighbour
                        let o = (0..4).min_by_key(|&k| cc[k]).unwrap();
                        let (oa, ob) = (o & 1, o >> 1);
                        let na = cc[(1 - oa) | (ob << 1)];
                        let nb = cc[oa | ((1 - ob) << 1)];
                        let swap = nb < na;
                        let (s, t) = (ijk[a] - 1, ijk[b] - 1);
                        let s = if oa == 1 { p - 2 - s } else { s };
                        let t = if ob == 1 { p - 2 - t } else { t };
                        let (f0, f1) = if swap { (t, s) } else { (s, t) };
                        (Entity::Face { id }, f0 + (p - 1) * f1)
                    }
                    _ => (Entity::Interior, 0),
                };
                local.push(ent);
            }
        }
        let nv = mesh.num_vertices();
        let nedge = edge_ids.len();
        let nface = face_ids.len();
        let per_edge = p - 1;
        let per_face = if d == 3 { (p - 1) * (p - 1) } else { 0 };
        let per_interior = ipow(p - 1, d);
        let edge_off = nv;
        let face_off = edge_off + nedge * per_edge;
        let int_off = face_off + nface * per_face;
        let count = int_off + ne * per_interior;
        let mut element_map = vec![0usize; ne * nloc];
        for e in 0..ne {
            let mut interior_k = 0;
            for idx in 0..nloc {
                let (ent, off) = local[e * nloc + idx];
                element_map[e * nloc + idx] = match ent {
                    Entity::Vertex(c) => c,
                    Entity::Edge { id, forward } => {
                        let t = if forward { off } else { per_edge - 1 - off };
                        edge_off + id * per_edge + t
                    }
                    Entity::Face { id } => face_off + id * per_face + off,
                    Entity::Interior => {
                        let g = int_off + e * per_interior + interior_k;
                        interior_k += 1;
                        g
                    }
                };
            }
        }
        Ok(Self {
            dim: d,
            degree: p,
            count,
            element_map,
        })
    }

    #[inline]
    pub fn count(&self) -> usize {
        self.count
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn nodes_per_element(&self) -> usize {
        ipow(self.degree + 1, self.dim)
    }

    #[inline]
    pub fn element(&self, e: usize) -> &[usize] {
        let n = self.nodes_per_element();
        &self.element_map[e * n..(e + 1) * n]
    }

    pub fn element_map(&self) -> &[usize] {
        &self.element_map
    }
}

/// Gauss-Lobatto refined submesh: each macro element is split into `p^d`
/// sub-elements whose vertices are the images of the degree-`p`
/// Gauss-Lobatto lattice.
#[derive(Debug, Clone)]
pub struct LorMesh {
    dim: usize,
    degree: usize,
    numbering: LatticeNumbering,
    /// Per macro element, lattice coordinates in lexicographic order.
    coords: Vec<Point>,
    nodes1d: Vec<f64>,
    parent_vertices: usize,
    parent: Arc<Mesh>,
}

impl LorMesh {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn num_vertices(&self) -> usize {
        self.numbering.count()
    }

    #[inline]
    pub fn num_macro_elements(&self) -> usize {
        self.coords.len() / self.numbering.nodes_per_element()
    }

    #[inline]
    pub fn subs_per_macro(&self) -> usize {
        ipow(self.degree, self.dim)
    }

    pub fn num_sub_elements(&self) -> usize {
        self.num_macro_elements() * self.subs_per_macro()
    }

    pub fn numbering(&self) -> &LatticeNumbering {
        &self.numbering
    }

    /// Gauss-Lobatto nodes defining the refinement.
    pub fn nodes1d(&self) -> &[f64] {
        &self.nodes1d
    }

    /// Vertex count of the parent mesh; these are the first indices of the
    /// refined numbering.
    pub fn num_parent_vertices(&self) -> usize {
        self.parent_vertices
    }

    pub fn parent(&self) -> &Arc<Mesh> {
        &self.parent
    }

    /// The refinement of the same parent mesh at degree `q`.
    pub fn coarsened(&self, q: usize) -> Result<LorMesh> {
        build_lor_mesh(&self.parent, q)
    }

    /// Vertices in first-visit order: macro elements in mesh order,
    /// lexicographic within each element.
    pub fn element_lexicographic_order(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_vertices()];
        let mut order = Vec::with_capacity(self.num_vertices());
        for &g in self.numbering.element_map() {
            if !seen[g] {
                seen[g] = true;
                order.push(g);
            }
        }
        order
    }

    pub fn macro_coords(&self, e: usize) -> &[Point] {
        let n = self.numbering.nodes_per_element();
        &self.coords[e * n..(e + 1) * n]
    }

    /// Global vertex indices and coordinates of sub-element `s` of macro
    /// element `e`, lexicographic local vertex order. Sub-element `e * p^d + s`
    /// in the flat numbering.
    pub fn sub_element(&self, e: usize, s: usize, verts: &mut [usize], pts: &mut [Point]) {
        let p = self.degree;
        let d = self.dim;
        let base = unravel(s, p, d);
        let gl = self.numbering.element(e);
        let cs = self.macro_coords(e);
        for v in 0..1usize << d {
            let mut ijk = base;
            for (a, c) in ijk.iter_mut().enumerate().take(d) {
                *c += (v >> a) & 1;
            }
            let li = ravel(ijk, p + 1, d);
            verts[v] = gl[li];
            pts[v] = cs[li];
        }
    }
}

/// Refines `mesh` along the degree-`p` Gauss-Lobatto lattice.
pub fn build_lor_mesh(mesh: &Mesh, p: usize) -> Result<LorMesh> {
    if p < 1 {
        return invalid("refinement degree must be >= 1");
    }
    let numbering = mesh.lattice_numbering(p)?;
    let (nodes1d, _) = gauss_lobatto_nodes(p + 1)?;
    let mut coords = Vec::with_capacity(mesh.num_elements() * numbering.nodes_per_element());
    let mut buf = Vec::new();
    for e in 0..mesh.num_elements() {
        mesh.lattice_coords(e, &nodes1d, &mut buf);
        coords.extend_from_slice(&buf);
    }
    Ok(LorMesh {
        dim: mesh.dim(),
        degree: p,
        numbering,
        coords,
        nodes1d,
        parent_vertices: mesh.num_vertices(),
        parent: Arc::new(mesh.clone()),
    })
}
