//! Continuous H1 spaces on tensor-product meshes: global numbering, element
//! restriction and its transpose, boundary DoF sets, nodal interpolation,
//! grid functions and L2 error evaluation.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use crate::basis::{gauss_lobatto_nodes, Basis1D, QuadratureKind, QuadratureRule1D};
use crate::error::{check_len, invalid, Result};
use crate::kernels::TensorScratch;
use crate::mesh::{ipow, unravel, vtk_order, GeometricFactors, LatticeNumbering, Mesh, Point};

/// Scalar (`vdim = 1`) or vector (`vdim = d`) continuous space of degree `p`.
/// Vector coefficients use struct-of-arrays layout: component `c` of scalar
/// DoF `i` lives at `c * nscalar + i`.
#[derive(Debug, Clone)]
pub struct FESpace {
    mesh: Arc<Mesh>,
    degree: usize,
    vdim: usize,
    numbering: LatticeNumbering,
    nodes1d: Vec<f64>,
}

impl FESpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize, vdim: usize) -> Result<Self> {
        if degree < 1 {
            return invalid("space degree must be >= 1");
        }
        if vdim != 1 && vdim != mesh.dim() {
            return invalid(format!(
                "vector dimension must be 1 or {}, got {vdim}",
                mesh.dim()
            ));
        }
        let numbering = mesh.lattice_numbering(degree)?;
        let (nodes1d, _) = gauss_lobatto_nodes(degree + 1)?;
        Ok(Self {
            mesh,
            degree,
            vdim,
            numbering,
            nodes1d,
        })
    }

    pub fn scalar(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        Self::new(mesh, degree, 1)
    }

    pub fn vector(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        let d = mesh.dim();
        Self::new(mesh, degree, d)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn vdim(&self) -> usize {
        self.vdim
    }

    /// Number of scalar DoFs (per component).
    #[inline]
    pub fn nscalar(&self) -> usize {
        self.numbering.count()
    }

    #[inline]
    pub fn ndofs(&self) -> usize {
        self.vdim * self.numbering.count()
    }

    #[inline]
    pub fn nodes_per_element(&self) -> usize {
        self.numbering.nodes_per_element()
    }

    pub fn num_elements(&self) -> usize {
        self.mesh.num_elements()
    }

    /// Scalar global indices of element `e` in lexicographic local order.
    #[inline]
    pub fn element_dofs(&self, e: usize) -> &[usize] {
        self.numbering.element(e)
    }

    pub fn numbering(&self) -> &LatticeNumbering {
        &self.numbering
    }

    /// Gauss-Lobatto nodes on the reference interval.
    pub fn nodes1d(&self) -> &[f64] {
        &self.nodes1d
    }

    /// Basis of this space's degree evaluated on `rule`.
    pub fn basis(&self, rule: &QuadratureRule1D) -> Result<Basis1D> {
        Basis1D::new(self.degree, rule.clone())
    }

    /// Copies component `comp` of element `e` into lexicographic local order.
    #[inline]
    pub fn gather(&self, global: &[f64], comp: usize, e: usize, local: &mut [f64]) {
        let off = comp * self.nscalar();
        for (l, &g) in local.iter_mut().zip(self.element_dofs(e)) {
            *l = global[off + g];
        }
    }

    /// Transpose of [`FESpace::gather`]: adds local values into `global`.
    #[inline]
    pub fn scatter_add(&self, local: &[f64], comp: usize, e: usize, global: &mut [f64]) {
        let off = comp * self.nscalar();
        for (l, &g) in local.iter().zip(self.element_dofs(e)) {
            global[off + g] += l;
        }
    }

    /// Number of elements sharing each scalar DoF.
    pub fn multiplicity(&self) -> Vec<usize> {
        let mut m = vec![0; self.nscalar()];
        for e in 0..self.num_elements() {
            for &g in self.element_dofs(e) {
                m[g] += 1;
            }
        }
        m
    }

    /// Physical coordinates of every scalar DoF.
    pub fn node_coords(&self) -> Vec<Point> {
        let mut out = vec![[0.0; 3]; self.nscalar()];
        let mut buf = Vec::new();
        for e in 0..self.num_elements() {
            self.mesh.lattice_coords(e, &self.nodes1d, &mut buf);
            for (x, &g) in buf.iter().zip(self.element_dofs(e)) {
                out[g] = *x;
            }
        }
        out
    }

    /// Nodal interpolation of `f(x, out)`, where `out` has `vdim` entries.
    pub fn project_function<F: Fn(&[f64], &mut [f64])>(self: &Arc<Self>, f: F) -> GridFunction {
        let n = self.nscalar();
        let mut data = vec![0.0; self.ndofs()];
        let mut val = vec![0.0; self.vdim];
        for (i, x) in self.node_coords().iter().enumerate() {
            f(&x[..self.dim()], &mut val);
            for c in 0..self.vdim {
                data[c * n + i] = val[c];
            }
        }
        GridFunction {
            space: Arc::clone(self),
            data,
        }
    }

    pub fn project_scalar<F: Fn(&[f64]) -> f64>(self: &Arc<Self>, f: F) -> GridFunction {
        self.project_function(|x, out| {
            let v = f(x);
            out.iter_mut().for_each(|o| *o = v);
        })
    }

    /// Sorted global indices of DoFs on boundary faces with the given
    /// attributes. Vector spaces return every component.
    pub fn boundary_dof_set(&self, attributes: &[usize]) -> Result<Vec<usize>> {
        let known = self.mesh.boundary_attributes();
        if let Some(a) = attributes.iter().find(|a| !known.contains(a)) {
            return invalid(format!("unknown boundary attribute {a}"));
        }
        let d = self.dim();
        let n1 = self.degree + 1;
        let mut mark = vec![false; self.nscalar()];
        for bf in self.mesh.boundary_faces() {
            if !attributes.contains(&bf.attribute) {
                continue;
            }
            let (axis, side) = (bf.local_face / 2, bf.local_face % 2);
            let want = side * self.degree;
            let dofs = self.element_dofs(bf.element);
            for (li, &g) in dofs.iter().enumerate() {
                if unravel(li, n1, d)[axis] == want {
                    mark[g] = true;
                }
            }
        }
        let scalar: Vec<usize> = (0..self.nscalar()).filter(|&i| mark[i]).collect();
        let n = self.nscalar();
        Ok((0..self.vdim)
            .flat_map(|c| scalar.iter().map(move |&i| c * n + i))
            .collect())
    }

    /// DoFs on every boundary face.
    pub fn all_boundary_dofs(&self) -> Vec<usize> {
        self.boundary_dof_set(&self.mesh.boundary_attributes())
            .expect("attributes come from the mesh")
    }
}

/// Coefficient vector attached to a space.
#[derive(Debug, Clone)]
pub struct GridFunction {
    space: Arc<FESpace>,
    pub data: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(space: Arc<FESpace>) -> Self {
        let data = vec![0.0; space.ndofs()];
        Self { space, data }
    }

    pub fn from_vec(space: Arc<FESpace>, data: Vec<f64>) -> Result<Self> {
        check_len(space.ndofs(), data.len())?;
        Ok(Self { space, data })
    }

    pub fn space(&self) -> &Arc<FESpace> {
        &self.space
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.space.nscalar();
        &self.data[c * n..(c + 1) * n]
    }

    /// L2 norm of `u_h - exact` with `nq` Gauss-Legendre points per
    /// direction. `exact(x, out)` fills `vdim` values.
    pub fn l2_error<F: Fn(&[f64], &mut [f64])>(&self, exact: F, nq: usize) -> Result<f64> {
        l2_error(&self.space, &self.data, exact, nq)
    }

    /// Legacy-VTK dump; high-order elements are written as their
    /// Gauss-Lobatto sub-elements.
    pub fn write_vtk<W: Write>(&self, name: &str, mut w: W) -> Result<()> {
        let sp = &self.space;
        let d = sp.dim();
        let p = sp.degree();
        let nv = 1usize << d;
        let coords = sp.node_coords();
        let mut s = String::new();
        writeln!(s, "# vtk DataFile Version 3.0").unwrap();
        writeln!(s, "{name}").unwrap();
        writeln!(s, "ASCII").unwrap();
        writeln!(s, "DATASET UNSTRUCTURED_GRID").unwrap();
        writeln!(s, "POINTS {} double", coords.len()).unwrap();
        for x in &coords {
            writeln!(s, "{:.17e} {:.17e} {:.17e}", x[0], x[1], x[2]).unwrap();
        }
        let nsub = sp.num_elements() * ipow(p, d);
        writeln!(s, "CELLS {} {}", nsub, nsub * (nv + 1)).unwrap();
        for e in 0..sp.num_elements() {
            let dofs = sp.element_dofs(e);
            for sub in 0..ipow(p, d) {
                let base = unravel(sub, p, d);
                write!(s, "{nv}").unwrap();
                for &v in vtk_order(d) {
                    let mut ijk = base;
                    for (a, c) in ijk.iter_mut().enumerate().take(d) {
                        *c += (v >> a) & 1;
                    }
                    let li = crate::mesh::ravel(ijk, p + 1, d);
                    write!(s, " {}", dofs[li]).unwrap();
                }
                writeln!(s).unwrap();
            }
        }
        writeln!(s, "CELL_TYPES {nsub}").unwrap();
        let ty = if d == 2 { 9 } else { 12 };
        for _ in 0..nsub {
            writeln!(s, "{ty}").unwrap();
        }
        writeln!(s, "POINT_DATA {}", coords.len()).unwrap();
        let n = sp.nscalar();
        if sp.vdim() == 1 {
            writeln!(s, "SCALARS {name} double 1").unwrap();
            writeln!(s, "LOOKUP_TABLE default").unwrap();
            for v in &self.data {
                writeln!(s, "{v:.17e}").unwrap();
            }
        } else {
            writeln!(s, "VECTORS {name} double").unwrap();
            for i in 0..n {
                let z = if d == 3 { self.data[2 * n + i] } else { 0.0 };
                writeln!(
                    s,
                    "{:.17e} {:.17e} {:.17e}",
                    self.data[i],
                    self.data[n + i],
                    z
                )
                .unwrap();
            }
        }
        w.write_all(s.as_bytes())?;
        Ok(())
    }
}

/// Values of every component of `coeffs` at the tensor quadrature points of
/// `rule`, element-major, component-major within the element.
pub fn eval_at_qpts(
    space: &FESpace,
    coeffs: &[f64],
    basis: &Basis1D,
    e: usize,
    local: &mut [f64],
    out: &mut [f64],
    scratch: &mut TensorScratch,
) {
    let d = space.dim();
    let nqp = ipow(basis.num_qpts(), d);
    let t = basis.tables();
    for c in 0..space.vdim() {
        space.gather(coeffs, c, e, local);
        t.interp(d, local, &mut out[c * nqp..(c + 1) * nqp], scratch);
    }
}

pub fn l2_error<F: Fn(&[f64], &mut [f64])>(
    space: &FESpace,
    coeffs: &[f64],
    exact: F,
    nq: usize,
) -> Result<f64> {
    check_len(space.ndofs(), coeffs.len())?;
    let rule = QuadratureRule1D::new(QuadratureKind::GaussLegendre, nq)?;
    let basis = space.basis(&rule)?;
    let gf = GeometricFactors::compute(space.mesh(), &rule)?;
    let d = space.dim();
    let vd = space.vdim();
    let nqp = gf.qpts_per_element();
    let mut local = vec![0.0; space.nodes_per_element()];
    let mut vals = vec![0.0; vd * nqp];
    let mut ex = vec![0.0; vd];
    let mut scratch = TensorScratch::new(d, nq.max(space.degree() + 1));
    let mut sum = 0.0;
    for e in 0..space.num_elements() {
        eval_at_qpts(
            space,
            coeffs,
            &basis,
            e,
            &mut local,
            &mut vals,
            &mut scratch,
        );
        for q in 0..nqp {
            exact(gf.coords(e, q), &mut ex);
            let w = gf.weights()[q] * gf.det(e, q);
            for c in 0..vd {
                let diff = vals[c * nqp + q] - ex[c];
                sum += w * diff * diff;
            }
        }
    }
    Ok(sum.sqrt())
}

/// `(f, v_i)` for every basis function, by Gauss-Legendre quadrature with
/// `nq` points per direction.
pub fn load_vector<F: Fn(&[f64], &mut [f64])>(
    space: &FESpace,
    f: F,
    nq: usize,
) -> Result<Vec<f64>> {
    let rule = QuadratureRule1D::new(QuadratureKind::GaussLegendre, nq)?;
    let basis = space.basis(&rule)?;
    let gf = GeometricFactors::compute(space.mesh(), &rule)?;
    let d = space.dim();
    let vd = space.vdim();
    let nqp = gf.qpts_per_element();
    let t = basis.tables();
    let mut vals = vec![0.0; vd * nqp];
    let mut fx = vec![0.0; vd];
    let mut local = vec![0.0; space.nodes_per_element()];
    let mut scratch = TensorScratch::new(d, nq.max(space.degree() + 1));
    let mut out = vec![0.0; space.ndofs()];
    for e in 0..space.num_elements() {
        for q in 0..nqp {
            f(gf.coords(e, q), &mut fx);
            let w = gf.weights()[q] * gf.det(e, q);
            for c in 0..vd {
                vals[c * nqp + q] = w * fx[c];
            }
        }
        for c in 0..vd {
            local.fill(0.0);
            t.interp_t(d, &vals[c * nqp..(c + 1) * nqp], &mut local, &mut scratch);
            space.scatter_add(&local, c, e, &mut out);
        }
    }
    Ok(out)
}

/// `oint q_i (g . n) ds` over every boundary face for a scalar space, by
/// Gauss-Legendre face quadrature with `nq` points per direction.
pub fn boundary_normal_flux<F: Fn(&[f64], &mut [f64])>(
    space: &FESpace,
    g: F,
    nq: usize,
) -> Result<Vec<f64>> {
    if space.vdim() != 1 {
        return invalid("normal flux loads need a scalar space");
    }
    let d = space.dim();
    let mesh = space.mesh();
    let p = space.degree();
    let (qx, qw) = crate::basis::gauss_legendre_rule(nq)?;
    let (b, _) = crate::basis::build_eval_matrices(space.nodes1d(), &qx)?;
    let nfq = ipow(nq, d - 1);
    let mut out = vec![0.0; space.ndofs()];
    let mut gv = [0.0; 3];
    for bf in mesh.boundary_faces() {
        let (axis, side) = (bf.local_face / 2, bf.local_face % 2);
        let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
        let dofs = space.element_dofs(bf.element);
        for fq in 0..nfq {
            let qi = unravel(fq, nq, d - 1);
            let mut xi = [0.0; 3];
            let mut w = 1.0;
            xi[axis] = if side == 1 { 1.0 } else { -1.0 };
            for (k, &a) in others.iter().enumerate() {
                xi[a] = qx[qi[k]];
                w *= qw[qi[k]];
            }
            let jac = mesh.jacobian(bf.element, &xi);
            let dj = crate::mesh::det(d, &jac);
            let inv = crate::mesh::inverse(d, &jac, dj);
            let x = mesh.map_point(bf.element, &xi);
            g(&x[..d], &mut gv[..d]);
            let sign = if side == 1 { 1.0 } else { -1.0 };
            // area-weighted outward normal: det(J) J^{-T} e_axis
            let mut flux = 0.0;
            for i in 0..d {
                flux += gv[i] * sign * dj * inv[axis][i];
            }
            flux *= w;
            for (li, &gi) in dofs.iter().enumerate() {
                let ijk = unravel(li, p + 1, d);
                let end = if side == 1 { p } else { 0 };
                if ijk[axis] != end {
                    continue;
                }
                let mut phi = 1.0;
                for (k, &a) in others.iter().enumerate() {
                    phi *= b[(qi[k], ijk[a])];
                }
                out[gi] += flux * phi;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::cartesian_mesh;

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(cartesian_mesh(2, &[(0.0, 1.0); 2], &[n, n], &[false; 2]).unwrap())
    }

    #[test]
    fn single_element_gather_is_identity() {
        let sp = FESpace::scalar(square(1), 3).unwrap();
        let g: Vec<f64> = (0..sp.ndofs()).map(|i| i as f64).collect();
        let mut l = vec![0.0; 16];
        sp.gather(&g, 0, 0, &mut l);
        let mut sorted = l.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, g);
        // corners come first in the global order
        assert_eq!(sp.element_dofs(0)[0], 0);
    }

    #[test]
    fn strip_shares_vertices() {
        let m =
            Arc::new(cartesian_mesh(2, &[(0.0, 2.0), (0.0, 1.0)], &[2, 1], &[false; 2]).unwrap());
        let sp = FESpace::scalar(m, 1).unwrap();
        assert_eq!(sp.ndofs(), 6);
        let (a, b) = (sp.element_dofs(0), sp.element_dofs(1));
        assert_eq!(a[1], b[0]);
        assert_eq!(a[3], b[2]);
    }

    #[test]
    fn boundary_counts() {
        let sp = FESpace::scalar(square(1), 2).unwrap();
        assert_eq!(sp.all_boundary_dofs().len(), 8);
        let sp = FESpace::scalar(square(4), 7).unwrap();
        assert_eq!(sp.ndofs(), 841);
        assert_eq!(sp.all_boundary_dofs().len(), 112);
        let v = FESpace::vector(square(4), 7).unwrap();
        assert_eq!(v.all_boundary_dofs().len(), 224);
        assert!(sp.boundary_dof_set(&[9]).is_err());
        let pi = std::f64::consts::PI;
        let cube = Arc::new(cartesian_mesh(3, &[(-pi, pi); 3], &[3; 3], &[true; 3]).unwrap());
        let sp = FESpace::scalar(cube, 2).unwrap();
        assert!(sp.all_boundary_dofs().is_empty());
    }

    #[test]
    fn projection_is_nodal() {
        let sp = Arc::new(FESpace::scalar(square(3), 4).unwrap());
        let one = sp.project_scalar(|_| 1.0);
        assert!(one.data.iter().all(|&v| v == 1.0));
        let x = sp.project_scalar(|x| x[0]);
        for (v, c) in x.data.iter().zip(sp.node_coords()) {
            assert_eq!(*v, c[0]);
        }
    }

    #[test]
    fn kovasznay_projection_matches_formula() {
        let m =
            Arc::new(cartesian_mesh(2, &[(-0.5, 1.0), (-0.5, 1.5)], &[2, 2], &[false; 2]).unwrap());
        let sp = Arc::new(FESpace::scalar(m, 3).unwrap());
        let re: f64 = 40.0;
        let two_pi = 2.0 * std::f64::consts::PI;
        let lam = re / 2.0 - (re * re / 4.0 + two_pi * two_pi).sqrt();
        let u1 = |x: &[f64]| 1.0 - (lam * x[0]).exp() * (two_pi * x[1]).cos();
        let g = sp.project_scalar(u1);
        for (v, c) in g.data.iter().zip(sp.node_coords()) {
            assert!((v - u1(&c[..2])).abs() <= 1e-15);
        }
    }

    #[test]
    fn l2_error_of_interpolant_is_exact_for_polynomials() {
        let sp = Arc::new(FESpace::vector(square(2), 3).unwrap());
        let g = sp.project_function(|x, o| {
            o[0] = x[0].powi(3) * x[1];
            o[1] = 1.0 - x[1] * x[1];
        });
        let e = g
            .l2_error(
                |x, o| {
                    o[0] = x[0].powi(3) * x[1];
                    o[1] = 1.0 - x[1] * x[1];
                },
                6,
            )
            .unwrap();
        assert!(e < 1e-14, "{e}");
        let e1 = g.l2_error(|_, o| o.fill(0.0), 6).unwrap();
        assert!(e1 > 0.1);
    }

    #[test]
    fn vtk_dump_has_sub_elements() {
        let sp = Arc::new(FESpace::scalar(square(2), 3).unwrap());
        let g = sp.project_scalar(|x| x[0] + x[1]);
        let mut out = Vec::new();
        g.write_vtk("u", &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("CELLS 36 180"));
        assert!(text.contains("POINT_DATA 49"));
    }

    #[test]
    fn boundary_flux_matches_divergence_theorem() {
        let mut m = cartesian_mesh(2, &[(0.0, 1.0), (0.0, 2.0)], &[3, 2], &[false; 2]).unwrap();
        m.perturb_interior(0.2, 4).unwrap();
        let sp = FESpace::scalar(Arc::new(m), 3).unwrap();
        let f = boundary_normal_flux(
            &sp,
            |x, o| {
                o[0] = x[0] * x[0];
                o[1] = x[1];
            },
            5,
        )
        .unwrap();
        // sum_i q_i with q = 1: int div g = int (2x + 1) = 2 + 2
        assert!((f.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }
}
