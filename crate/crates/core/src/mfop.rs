//! Sum-factorized matrix-free operators (mass, stiffness, Helmholtz,
//! gradient, divergence, convection, curl-curl) and the naive assembled
//! matrices used as their oracle and timing baseline.

use std::sync::{Arc, Mutex};

use crate::basis::{Basis1D, QuadratureKind, QuadratureRule1D};
use crate::error::{check_len, invalid, Error, Result};
use crate::fespace::FESpace;
use crate::kernels::TensorScratch;
use crate::linop::LinearOperator;
use crate::mesh::{ipow, unravel, GeometricFactors};
use crate::sparse::{CsrMatrix, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    Mass,
    Stiffness,
    /// `c M + L`
    Helmholtz(f64),
    /// `G_ij = (phi_i, grad psi_j)`, pressure to velocity.
    Gradient,
    /// `D_ij = (psi_i, div phi_j)`, velocity to pressure.
    Divergence,
    /// `N(u)_i = ((u . grad) u, phi_i)`; nonlinear.
    Convection,
    /// `(nu curl u, curl v)`
    CurlCurl,
}

impl OperatorKind {
    fn needs_vals(self) -> bool {
        matches!(self, Self::Mass | Self::Helmholtz(_) | Self::Convection)
    }
    fn needs_grads(self) -> bool {
        !matches!(self, Self::Mass)
    }
    fn is_symmetric(self) -> bool {
        matches!(
            self,
            Self::Mass | Self::Stiffness | Self::Helmholtz(_) | Self::CurlCurl
        )
    }
}

/// Number of stored entries of a symmetric `d x d` factor.
#[inline]
fn nsym(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of `(a, b)` in the packed symmetric layout
/// `00, 11, 22, 01, 02, 12`.
#[inline]
fn sym_index(d: usize, a: usize, b: usize) -> usize {
    if a == b {
        return a;
    }
    let (i, j) = if a < b { (a, b) } else { (b, a) };
    if d == 2 {
        2
    } else {
        3 + i + j - 1
    }
}

struct Scratch {
    lin: Vec<f64>,
    vin: Vec<f64>,
    gin: Vec<f64>,
    vout: Vec<f64>,
    fout: Vec<f64>,
    lout: Vec<f64>,
    t: TensorScratch,
}

/// Apply-only operator built from quadrature-point factors and 1D tables.
pub struct MatrixFreeOperator {
    kind: OperatorKind,
    nu: f64,
    dim: usize,
    in_space: Arc<FESpace>,
    out_space: Arc<FESpace>,
    in_basis: Basis1D,
    out_basis: Basis1D,
    nqp: usize,
    /// `w |J|`, `[e][q]`
    mass_f: Vec<f64>,
    /// `nu w |J| J^{-1} J^{-T}`, packed symmetric, `[e][k][q]`
    stiff_f: Vec<f64>,
    /// `w |J| J^{-1}`, `[e][a*d+b][q]`
    grad_f: Vec<f64>,
    zero_in: Vec<bool>,
    zero_out: Vec<bool>,
    constrained: Vec<usize>,
    identity_rows: bool,
    scratch: Mutex<Scratch>,
}

impl std::fmt::Debug for MatrixFreeOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MatrixFreeOperator")
            .field("kind", &self.kind)
            .field("nu", &self.nu)
            .field("rows", &self.out_space.ndofs())
            .field("cols", &self.in_space.ndofs())
            .finish()
    }
}

/// Default rule: Gauss-Legendre with `max(p_in, p_out) + 2` points.
pub fn default_rule(in_space: &FESpace, out_space: &FESpace) -> Result<QuadratureRule1D> {
    QuadratureRule1D::new(
        QuadratureKind::GaussLegendre,
        in_space.degree().max(out_space.degree()) + 2,
    )
}

fn check_spaces(kind: OperatorKind, a: &FESpace, b: &FESpace) -> Result<()> {
    if !Arc::ptr_eq(a.mesh(), b.mesh()) {
        return invalid("operator spaces live on different meshes");
    }
    let d = a.dim();
    let ok = match kind {
        OperatorKind::Mass | OperatorKind::Stiffness | OperatorKind::Helmholtz(_) => {
            a.degree() == b.degree() && a.vdim() == b.vdim()
        }
        OperatorKind::Convection | OperatorKind::CurlCurl => {
            a.degree() == b.degree() && a.vdim() == d && b.vdim() == d
        }
        OperatorKind::Gradient => a.vdim() == 1 && b.vdim() == d,
        OperatorKind::Divergence => a.vdim() == d && b.vdim() == 1,
    };
    if !ok {
        return invalid(format!(
            "{kind:?} cannot map a degree-{} vdim-{} space to a degree-{} vdim-{} space",
            a.degree(),
            a.vdim(),
            b.degree(),
            b.vdim()
        ));
    }
    Ok(())
}

impl MatrixFreeOperator {
    /// Builds the operator with the default quadrature.
    pub fn new(
        kind: OperatorKind,
        in_space: Arc<FESpace>,
        out_space: Arc<FESpace>,
        nu: f64,
    ) -> Result<Self> {
        let rule = default_rule(&in_space, &out_space)?;
        let gf = GeometricFactors::compute(in_space.mesh(), &rule)?;
        Self::setup(kind, in_space, out_space, nu, &gf, &rule)
    }

    /// Square operator on a single space.
    pub fn on(kind: OperatorKind, space: Arc<FESpace>, nu: f64) -> Result<Self> {
        Self::new(kind, Arc::clone(&space), space, nu)
    }

    pub fn setup(
        kind: OperatorKind,
        in_space: Arc<FESpace>,
        out_space: Arc<FESpace>,
        nu: f64,
        gf: &GeometricFactors,
        rule: &QuadratureRule1D,
    ) -> Result<Self> {
        check_spaces(kind, &in_space, &out_space)?;
        if !nu.is_finite() {
            return invalid("viscosity must be finite");
        }
        let d = in_space.dim();
        let ne = in_space.num_elements();
        let nqp = ipow(rule.len(), d);
        if gf.qpts_per_element() != nqp || gf.num_elements() != ne {
            return invalid("geometric factors do not match the quadrature rule");
        }
        let in_basis = in_space.basis(rule)?;
        let out_basis = out_space.basis(rule)?;
        let dd = d * d;
        let ns = nsym(d);
        let need_mass = matches!(
            kind,
            OperatorKind::Mass | OperatorKind::Helmholtz(_) | OperatorKind::CurlCurl
        );
        let need_stiff = matches!(kind, OperatorKind::Stiffness | OperatorKind::Helmholtz(_));
        let need_grad = matches!(
            kind,
            OperatorKind::Gradient
                | OperatorKind::Divergence
                | OperatorKind::Convection
                | OperatorKind::CurlCurl
        );
        let scale_mass = match kind {
            OperatorKind::Helmholtz(c) => c,
            _ => 1.0,
        };
        let mut mass_f = if need_mass {
            vec![0.0; ne * nqp]
        } else {
            Vec::new()
        };
        let mut stiff_f = if need_stiff {
            vec![0.0; ne * ns * nqp]
        } else {
            Vec::new()
        };
        let mut grad_f = if need_grad {
            vec![0.0; ne * dd * nqp]
        } else {
            Vec::new()
        };
        let w = gf.weights();
        for e in 0..ne {
            for q in 0..nqp {
                let wj = w[q] * gf.det(e, q);
                if need_mass {
                    mass_f[e * nqp + q] = scale_mass * wj;
                }
                let inv = gf.inverse(e, q);
                if need_stiff {
                    for a in 0..d {
                        for b in a..d {
                            let mut s = 0.0;
                            for k in 0..d {
                                s += inv[a * d + k] * inv[b * d + k];
                            }
                            stiff_f[(e * ns + sym_index(d, a, b)) * nqp + q] = nu * wj * s;
                        }
                    }
                }
                if need_grad {
                    for k in 0..dd {
                        grad_f[(e * dd + k) * nqp + q] = wj * inv[k];
                    }
                }
            }
        }
        let n_in = in_space.degree() + 1;
        let n_out = out_space.degree() + 1;
        let nmax = rule.len().max(n_in).max(n_out);
        let vin = in_space.vdim();
        let vout = out_space.vdim();
        let vmax = vin.max(vout);
        let scratch = Scratch {
            lin: vec![0.0; ipow(nmax, d)],
            vin: vec![0.0; vmax * nqp],
            gin: vec![0.0; vmax * d * nqp],
            vout: vec![0.0; vmax * nqp],
            fout: vec![0.0; vmax * d * nqp],
            lout: vec![0.0; ipow(nmax, d)],
            t: TensorScratch::new(d, nmax),
        };
        Ok(Self {
            kind,
            nu,
            dim: d,
            zero_in: Vec::new(),
            zero_out: Vec::new(),
            constrained: Vec::new(),
            identity_rows: false,
            in_space,
            out_space,
            in_basis,
            out_basis,
            nqp,
            mass_f,
            stiff_f,
            grad_f,
            scratch: Mutex::new(scratch),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn in_space(&self) -> &Arc<FESpace> {
        &self.in_space
    }

    pub fn out_space(&self) -> &Arc<FESpace> {
        &self.out_space
    }

    pub fn constrained(&self) -> &[usize] {
        &self.constrained
    }

    /// Packed quadrature-point factors: mass (`w|J|`), stiffness, gradient.
    pub fn factors(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.mass_f, &self.stiff_f, &self.grad_f)
    }

    /// Square operators: constrained inputs are ignored and constrained
    /// output rows act as the identity.
    pub fn set_constrained(&mut self, dofs: &[usize]) -> Result<()> {
        if self.in_space.ndofs() != self.out_space.ndofs() {
            return invalid("identity constraints need a square operator");
        }
        self.set_zero_inputs(dofs)?;
        self.set_zero_outputs(dofs)?;
        self.constrained = dofs.to_vec();
        self.identity_rows = true;
        Ok(())
    }

    /// Treats the listed input entries as zero.
    pub fn set_zero_inputs(&mut self, dofs: &[usize]) -> Result<()> {
        let n = self.in_space.ndofs();
        if let Some(&bad) = dofs.iter().find(|&&i| i >= n) {
            return invalid(format!("constrained index {bad} out of range"));
        }
        self.zero_in = vec![false; n];
        for &i in dofs {
            self.zero_in[i] = true;
        }
        if dofs.is_empty() {
            self.zero_in.clear();
        }
        Ok(())
    }

    /// Writes zero into the listed output rows.
    pub fn set_zero_outputs(&mut self, dofs: &[usize]) -> Result<()> {
        let n = self.out_space.ndofs();
        if let Some(&bad) = dofs.iter().find(|&&i| i >= n) {
            return invalid(format!("constrained index {bad} out of range"));
        }
        self.zero_out = vec![false; n];
        for &i in dofs {
            self.zero_out[i] = true;
        }
        if dofs.is_empty() {
            self.zero_out.clear();
        }
        Ok(())
    }

    pub fn try_apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        check_len(self.in_space.ndofs(), x.len())?;
        check_len(self.out_space.ndofs(), y.len())?;
        self.apply_impl(x, y, false, true);
        Ok(())
    }

    /// `y = A x` ignoring every constraint.
    pub fn apply_unconstrained(&self, x: &[f64], y: &mut [f64]) {
        self.apply_impl(x, y, false, false);
    }

    /// `y = A^T x`. For symmetric kinds this equals `apply`.
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        if self.kind.is_symmetric() {
            self.apply_impl(x, y, false, true);
        } else {
            self.apply_impl(x, y, true, true);
        }
    }

    /// Nonlinear convection `N(u)`; `u` must be in the velocity space.
    pub fn apply_convection(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        if self.kind != OperatorKind::Convection {
            return Err(Error::Unsupported(
                "operator is not a convection operator".into(),
            ));
        }
        self.try_apply(u, y)
    }

    /// Tested curl-curl term `(nu curl u, curl v)`.
    pub fn apply_rotational_viscous(&self, u: &[f64], y: &mut [f64]) -> Result<()> {
        if self.kind != OperatorKind::CurlCurl {
            return Err(Error::Unsupported(
                "operator is not a curl-curl operator".into(),
            ));
        }
        self.try_apply(u, y)
    }

    fn apply_impl(&self, x: &[f64], y: &mut [f64], transpose: bool, constrain: bool) {
        let d = self.dim;
        let nqp = self.nqp;
        let ne = self.in_space.num_elements();
        let (sp_in, sp_out, b_in, b_out) = if transpose {
            (
                &self.out_space,
                &self.in_space,
                &self.out_basis,
                &self.in_basis,
            )
        } else {
            (
                &self.in_space,
                &self.out_space,
                &self.in_basis,
                &self.out_basis,
            )
        };
        let (zin, zout) = if !constrain {
            (&[][..], &[][..])
        } else if transpose {
            (&self.zero_out[..], &self.zero_in[..])
        } else {
            (&self.zero_in[..], &self.zero_out[..])
        };
        let vin = sp_in.vdim();
        let vout = sp_out.vdim();
        let ns_in = sp_in.nscalar();
        let t_in = b_in.tables();
        let t_out = b_out.tables();
        let nl_in = sp_in.nodes_per_element();
        let nl_out = sp_out.nodes_per_element();
        let kind = self.kind;
        let (need_vals, need_grads, vals_out, flux_out) = if transpose {
            match kind {
                OperatorKind::Gradient => (true, false, false, true),
                OperatorKind::Divergence => (true, false, false, true),
                _ => unreachable!("only rectangular kinds are transposed explicitly"),
            }
        } else {
            (
                kind.needs_vals(),
                kind.needs_grads(),
                matches!(
                    kind,
                    OperatorKind::Mass
                        | OperatorKind::Helmholtz(_)
                        | OperatorKind::Gradient
                        | OperatorKind::Divergence
                        | OperatorKind::Convection
                ),
                matches!(
                    kind,
                    OperatorKind::Stiffness | OperatorKind::Helmholtz(_) | OperatorKind::CurlCurl
                ),
            )
        };
        y.fill(0.0);
        let mut guard = self.scratch.lock().unwrap_or_else(|p| p.into_inner());
        let Scratch {
            lin,
            vin: vbuf,
            gin,
            vout: vobuf,
            fout,
            lout,
            t,
        } = &mut *guard;
        let dd = d * d;
        let ns = nsym(d);
        for e in 0..ne {
            let dofs = sp_in.element_dofs(e);
            for c in 0..vin {
                let off = c * ns_in;
                let l = &mut lin[..nl_in];
                if zin.is_empty() {
                    for (li, &g) in l.iter_mut().zip(dofs) {
                        *li = x[off + g];
                    }
                } else {
                    for (li, &g) in l.iter_mut().zip(dofs) {
                        *li = if zin[off + g] { 0.0 } else { x[off + g] };
                    }
                }
                if need_vals {
                    t_in.interp(d, l, &mut vbuf[c * nqp..(c + 1) * nqp], t);
                }
                if need_grads {
                    t_in.grad(d, l, &mut gin[c * d * nqp..(c + 1) * d * nqp], t);
                }
            }
            let mf = if self.mass_f.is_empty() {
                &[][..]
            } else {
                &self.mass_f[e * nqp..(e + 1) * nqp]
            };
            let sf = if self.stiff_f.is_empty() {
                &[][..]
            } else {
                &self.stiff_f[e * ns * nqp..(e + 1) * ns * nqp]
            };
            let gfac = if self.grad_f.is_empty() {
                &[][..]
            } else {
                &self.grad_f[e * dd * nqp..(e + 1) * dd * nqp]
            };
            // F[a][b] at point q
            let fab = |a: usize, b: usize, q: usize| gfac[(a * d + b) * nqp + q];
            match (kind, transpose) {
                (OperatorKind::Mass, _) => {
                    for c in 0..vin {
                        for q in 0..nqp {
                            vobuf[c * nqp + q] = mf[q] * vbuf[c * nqp + q];
                        }
                    }
                }
                (OperatorKind::Stiffness | OperatorKind::Helmholtz(_), _) => {
                    for c in 0..vin {
                        let g = &gin[c * d * nqp..(c + 1) * d * nqp];
                        let f = &mut fout[c * d * nqp..(c + 1) * d * nqp];
                        if d == 2 {
                            for q in 0..nqp {
                                let (w00, w11, w01) = (sf[q], sf[nqp + q], sf[2 * nqp + q]);
                                let (g0, g1) = (g[q], g[nqp + q]);
                                f[q] = w00 * g0 + w01 * g1;
                                f[nqp + q] = w01 * g0 + w11 * g1;
                            }
                        } else {
                            for q in 0..nqp {
                                let w00 = sf[q];
                                let w11 = sf[nqp + q];
                                let w22 = sf[2 * nqp + q];
                                let w01 = sf[3 * nqp + q];
                                let w02 = sf[4 * nqp + q];
                                let w12 = sf[5 * nqp + q];
                                let (g0, g1, g2) = (g[q], g[nqp + q], g[2 * nqp + q]);
                                f[q] = w00 * g0 + w01 * g1 + w02 * g2;
                                f[nqp + q] = w01 * g0 + w11 * g1 + w12 * g2;
                                f[2 * nqp + q] = w02 * g0 + w12 * g1 + w22 * g2;
                            }
                        }
                        if let OperatorKind::Helmholtz(_) = kind {
                            for q in 0..nqp {
                                vobuf[c * nqp + q] = mf[q] * vbuf[c * nqp + q];
                            }
                        }
                    }
                }
                (OperatorKind::Gradient, false) => {
                    for c in 0..vout {
                        for q in 0..nqp {
                            let mut s = 0.0;
                            for a in 0..d {
                                s += fab(a, c, q) * gin[a * nqp + q];
                            }
                            vobuf[c * nqp + q] = s;
                        }
                    }
                }
                (OperatorKind::Gradient, true) => {
                    // input velocity values, output pressure flux
                    for a in 0..d {
                        for q in 0..nqp {
                            let mut s = 0.0;
                            for c in 0..d {
                                s += fab(a, c, q) * vbuf[c * nqp + q];
                            }
                            fout[a * nqp + q] = s;
                        }
                    }
                }
                (OperatorKind::Divergence, false) => {
                    for q in 0..nqp {
                        let mut s = 0.0;
                        for c in 0..d {
                            for a in 0..d {
                                s += fab(a, c, q) * gin[(c * d + a) * nqp + q];
                            }
                        }
                        vobuf[q] = s;
                    }
                }
                (OperatorKind::Divergence, true) => {
                    // input pressure values, output velocity flux
                    for c in 0..d {
                        for a in 0..d {
                            for q in 0..nqp {
                                fout[(c * d + a) * nqp + q] = fab(a, c, q) * vbuf[q];
                            }
                        }
                    }
                }
                (OperatorKind::Convection, _) => {
                    for c in 0..d {
                        for q in 0..nqp {
                            let mut s = 0.0;
                            for b in 0..d {
                                let ub = vbuf[b * nqp + q];
                                let mut gcb = 0.0;
                                for a in 0..d {
                                    gcb += fab(a, b, q) * gin[(c * d + a) * nqp + q];
                                }
                                s += ub * gcb;
                            }
                            vobuf[c * nqp + q] = s;
                        }
                    }
                }
                (OperatorKind::CurlCurl, _) => {
                    for q in 0..nqp {
                        // physical gradient P[c][b] = du_c/dx_b
                        let wj = mf[q];
                        let mut pg = [[0.0; 3]; 3];
                        for (c, row) in pg.iter_mut().enumerate().take(d) {
                            for (b, v) in row.iter_mut().enumerate().take(d) {
                                let mut s = 0.0;
                                for a in 0..d {
                                    s += fab(a, b, q) * gin[(c * d + a) * nqp + q];
                                }
                                *v = s / wj;
                            }
                        }
                        let mut tf = [[0.0; 3]; 3];
                        if d == 2 {
                            let w = pg[1][0] - pg[0][1];
                            tf[1][0] = w;
                            tf[0][1] = -w;
                        } else {
                            let w0 = pg[2][1] - pg[1][2];
                            let w1 = pg[0][2] - pg[2][0];
                            let w2 = pg[1][0] - pg[0][1];
                            tf[2][1] = w0;
                            tf[1][2] = -w0;
                            tf[0][2] = w1;
                            tf[2][0] = -w1;
                            tf[1][0] = w2;
                            tf[0][1] = -w2;
                        }
                        for c in 0..d {
                            for a in 0..d {
                                let mut s = 0.0;
                                for b in 0..d {
                                    s += fab(a, b, q) * tf[c][b];
                                }
                                fout[(c * d + a) * nqp + q] = self.nu * s;
                            }
                        }
                    }
                }
            }
            let odofs = sp_out.element_dofs(e);
            let ns_out = sp_out.nscalar();
            for c in 0..vout {
                let l = &mut lout[..nl_out];
                l.fill(0.0);
                if vals_out {
                    t_out.interp_t(d, &vobuf[c * nqp..(c + 1) * nqp], l, t);
                }
                if flux_out {
                    t_out.grad_t(d, &fout[c * d * nqp..(c + 1) * d * nqp], l, t);
                }
                let off = c * ns_out;
                for (li, &g) in l.iter().zip(odofs) {
                    y[off + g] += li;
                }
            }
        }
        drop(guard);
        if !zout.is_empty() {
            for (i, yi) in y.iter_mut().enumerate() {
                if zout[i] {
                    *yi = 0.0;
                }
            }
        }
        if constrain && self.identity_rows {
            for &i in &self.constrained {
                y[i] = x[i];
            }
        }
    }
}

impl LinearOperator for MatrixFreeOperator {
    fn nrows(&self) -> usize {
        self.out_space.ndofs()
    }
    fn ncols(&self) -> usize {
        self.in_space.ndofs()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols());
        debug_assert_eq!(y.len(), self.nrows());
        self.apply_impl(x, y, false, true)
    }
}

/// Full element-basis tables at tensor quadrature points: values and
/// reference gradients of every local basis function, `[i][q]`.
fn full_tables(basis: &Basis1D, d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = basis.num_nodes();
    let nq = basis.num_qpts();
    let nloc = ipow(n, d);
    let nqp = ipow(nq, d);
    let (b, dm) = (basis.b(), basis.d());
    let mut val = vec![0.0; nloc * nqp];
    let mut grad = vec![0.0; d * nloc * nqp];
    for i in 0..nloc {
        let ii = unravel(i, n, d);
        for q in 0..nqp {
            let qq = unravel(q, nq, d);
            let mut v = 1.0;
            for a in 0..d {
                v *= b[(qq[a], ii[a])];
            }
            val[i * nqp + q] = v;
            for g in 0..d {
                let mut s = 1.0;
                for a in 0..d {
                    s *= if a == g {
                        dm[(qq[a], ii[a])]
                    } else {
                        b[(qq[a], ii[a])]
                    };
                }
                grad[(g * nloc + i) * nqp + q] = s;
            }
        }
    }
    (val, grad)
}

/// Bytes needed to hold the triplets and the CSR result of a naive assembly.
pub fn assembly_memory_estimate(
    kind: OperatorKind,
    in_space: &FESpace,
    out_space: &FESpace,
) -> usize {
    let blocks = match kind {
        OperatorKind::Gradient | OperatorKind::Divergence => out_space.vdim().max(in_space.vdim()),
        _ => out_space.vdim(),
    };
    let entries = in_space.num_elements()
        * in_space.nodes_per_element()
        * out_space.nodes_per_element()
        * blocks;
    // triplet (2 indices + value) plus CSR (index + value)
    entries * (3 * 8 + 2 * 8)
}

/// Triple-loop element assembly on the default quadrature, scattered into
/// CSR without constraints. Refuses when the memory estimate exceeds
/// `cap_bytes`.
pub fn assemble_full(
    kind: OperatorKind,
    in_space: &Arc<FESpace>,
    out_space: &Arc<FESpace>,
    nu: f64,
    cap_bytes: usize,
) -> Result<CsrMatrix> {
    check_spaces(kind, in_space, out_space)?;
    if matches!(kind, OperatorKind::Convection | OperatorKind::CurlCurl) {
        return Err(Error::Unsupported(format!(
            "{kind:?} has no assembled form"
        )));
    }
    let est = assembly_memory_estimate(kind, in_space, out_space);
    if est > cap_bytes {
        return Err(Error::MemoryCap {
            estimated_bytes: est,
            cap_bytes,
        });
    }
    let rule = default_rule(in_space, out_space)?;
    let gf = GeometricFactors::compute(in_space.mesh(), &rule)?;
    let d = in_space.dim();
    let nqp = gf.qpts_per_element();
    let bi = in_space.basis(&rule)?;
    let bo = out_space.basis(&rule)?;
    let (vi, gi) = full_tables(&bi, d);
    let (vo, go) = full_tables(&bo, d);
    let nli = in_space.nodes_per_element();
    let nlo = out_space.nodes_per_element();
    let nsi = in_space.nscalar();
    let nso = out_space.nscalar();
    let mut tb = TripletBuilder::with_capacity(out_space.ndofs(), in_space.ndofs(), est / 40);
    let mut mq = vec![0.0; nqp];
    let mut kq = vec![0.0; d * d * nqp];
    let mut fq = vec![0.0; d * d * nqp];
    let mut elem = vec![0.0; nli * nlo];
    for e in 0..in_space.num_elements() {
        for q in 0..nqp {
            let wj = gf.weights()[q] * gf.det(e, q);
            mq[q] = wj;
            let inv = gf.inverse(e, q);
            for a in 0..d {
                for b in 0..d {
                    let mut s = 0.0;
                    for k in 0..d {
                        s += inv[a * d + k] * inv[b * d + k];
                    }
                    kq[(a * d + b) * nqp + q] = nu * wj * s;
                    fq[(a * d + b) * nqp + q] = wj * inv[a * d + b];
                }
            }
        }
        let (di, dout) = (in_space.element_dofs(e), out_space.element_dofs(e));
        match kind {
            OperatorKind::Mass | OperatorKind::Stiffness | OperatorKind::Helmholtz(_) => {
                let cm = match kind {
                    OperatorKind::Mass => 1.0,
                    OperatorKind::Helmholtz(c) => c,
                    _ => 0.0,
                };
                let with_k = !matches!(kind, OperatorKind::Mass);
                for i in 0..nlo {
                    for j in 0..nli {
                        let mut s = 0.0;
                        for q in 0..nqp {
                            let mut v = cm * mq[q] * vo[i * nqp + q] * vi[j * nqp + q];
                            if with_k {
                                for a in 0..d {
                                    for b in 0..d {
                                        v += kq[(a * d + b) * nqp + q]
                                            * go[(a * nlo + i) * nqp + q]
                                            * gi[(b * nli + j) * nqp + q];
                                    }
                                }
                            }
                            s += v;
                        }
                        elem[i * nli + j] = s;
                    }
                }
                for c in 0..out_space.vdim() {
                    for i in 0..nlo {
                        for j in 0..nli {
                            tb.push(c * nso + dout[i], c * nsi + di[j], elem[i * nli + j]);
                        }
                    }
                }
            }
            OperatorKind::Gradient => {
                for c in 0..d {
                    for i in 0..nlo {
                        for j in 0..nli {
                            let mut s = 0.0;
                            for q in 0..nqp {
                                let mut g = 0.0;
                                for a in 0..d {
                                    g += fq[(a * d + c) * nqp + q] * gi[(a * nli + j) * nqp + q];
                                }
                                s += vo[i * nqp + q] * g;
                            }
                            tb.push(c * nso + dout[i], di[j], s);
                        }
                    }
                }
            }
            OperatorKind::Divergence => {
                for c in 0..d {
                    for i in 0..nlo {
                        for j in 0..nli {
                            let mut s = 0.0;
                            for q in 0..nqp {
                                let mut g = 0.0;
                                for a in 0..d {
                                    g += fq[(a * d + c) * nqp + q] * gi[(a * nli + j) * nqp + q];
                                }
                                s += vo[i * nqp + q] * g;
                            }
                            tb.push(dout[i], c * nsi + di[j], s);
                        }
                    }
                }
            }
            OperatorKind::Convection | OperatorKind::CurlCurl => unreachable!(),
        }
    }
    Ok(tb.build())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cartesian_mesh, Mesh};
    use crate::vector::{dot, norm};

    fn square(n: usize) -> Arc<Mesh> {
        Arc::new(cartesian_mesh(2, &[(0.0, 1.0); 2], &[n, n], &[false; 2]).unwrap())
    }

    #[test]
    fn affine_factors() {
        let sp = Arc::new(FESpace::scalar(square(1), 3).unwrap());
        let m = MatrixFreeOperator::on(OperatorKind::Mass, Arc::clone(&sp), 1.0).unwrap();
        let rule = default_rule(&sp, &sp).unwrap();
        let (mf, _, _) = m.factors();
        for (q, v) in mf.iter().enumerate() {
            let (i, j) = (q % 5, q / 5);
            assert!((v - 0.25 * rule.weights[i] * rule.weights[j]).abs() < 1e-15);
        }
        // reference-sized element: J = I
        let m2 = Arc::new(cartesian_mesh(2, &[(-1.0, 1.0); 2], &[1, 1], &[false; 2]).unwrap());
        let sp2 = Arc::new(FESpace::scalar(m2, 2).unwrap());
        let k1 = MatrixFreeOperator::on(OperatorKind::Stiffness, Arc::clone(&sp2), 1.0).unwrap();
        let k2 = MatrixFreeOperator::on(OperatorKind::Stiffness, sp2, 2.0).unwrap();
        let (_, s1, _) = k1.factors();
        let (_, s2, _) = k2.factors();
        let nqp = 16;
        for q in 0..nqp {
            let (i, j) = (q % 4, q / 4);
            let r = QuadratureRule1D::new(QuadratureKind::GaussLegendre, 4).unwrap();
            let w = r.weights[i] * r.weights[j];
            assert!((s1[q] - w).abs() < 1e-15);
            assert!((s1[nqp + q] - w).abs() < 1e-15);
            assert!(s1[2 * nqp + q].abs() < 1e-15);
        }
        for (a, b) in s1.iter().zip(s2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn stiffness_energy_of_linear_field() {
        let sp = Arc::new(FESpace::scalar(square(3), 4).unwrap());
        let x = sp.project_scalar(|x| x[0]);
        let k = MatrixFreeOperator::on(OperatorKind::Stiffness, Arc::clone(&sp), 1.0).unwrap();
        let mut y = vec![0.0; sp.ndofs()];
        k.apply(&x.data, &mut y);
        assert!((dot(&x.data, &y) - 1.0).abs() < 1e-12);
        let one = vec![1.0; sp.ndofs()];
        k.apply(&one, &mut y);
        assert!(norm(&y) < 1e-12);
        let m = MatrixFreeOperator::on(OperatorKind::Mass, sp, 1.0).unwrap();
        m.apply(&one, &mut y);
        assert!((dot(&one, &y) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn convection_of_shear_vanishes() {
        let v = Arc::new(FESpace::vector(square(2), 3).unwrap());
        let n = MatrixFreeOperator::on(OperatorKind::Convection, Arc::clone(&v), 1.0).unwrap();
        let u = v.project_function(|x, o| {
            o[0] = x[1];
            o[1] = 0.0;
        });
        let mut y = vec![0.0; v.ndofs()];
        n.apply_convection(&u.data, &mut y).unwrap();
        assert!(norm(&y) < 1e-12);
        let c = v.project_function(|_, o| {
            o[0] = 2.0;
            o[1] = -1.0;
        });
        n.apply_convection(&c.data, &mut y).unwrap();
        assert!(norm(&y) < 1e-12);
    }

    #[test]
    fn memory_cap_refuses() {
        let sp = Arc::new(FESpace::scalar(square(2), 4).unwrap());
        let err = assemble_full(OperatorKind::Mass, &sp, &sp, 1.0, 1000).unwrap_err();
        assert!(matches!(err, Error::MemoryCap { .. }));
    }

    #[test]
    fn p1_mass_sums_to_area() {
        let sp = Arc::new(FESpace::scalar(square(1), 1).unwrap());
        let m = assemble_full(OperatorKind::Mass, &sp, &sp, 1.0, usize::MAX).unwrap();
        assert_eq!(m.nrows(), 4);
        let total: f64 = m.values().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((m.get(0, 0) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_spaces_rejected() {
        let m = square(2);
        let s2 = Arc::new(FESpace::scalar(Arc::clone(&m), 2).unwrap());
        let s3 = Arc::new(FESpace::scalar(Arc::clone(&m), 3).unwrap());
        assert!(MatrixFreeOperator::new(OperatorKind::Mass, s2.clone(), s3, 1.0).is_err());
        assert!(MatrixFreeOperator::new(OperatorKind::Gradient, s2.clone(), s2, 1.0).is_err());
    }
}
