//! Krylov solvers (CG, GMRES, flexible GMRES), the collocated diagonal mass
//! preconditioner, the two-level LOR V-cycle with ordered ILU(0) smoothing,
//! and mean deflation for pure-Neumann problems.

use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::basis::{QuadratureKind, QuadratureRule1D};
use crate::error::{check_len, invalid, Error, Result};
use crate::fespace::FESpace;
use crate::linop::{DiagonalOperator, LinearOperator};
use crate::lor::{assemble_lor, LorKind};
use crate::mesh::{ipow, ravel, unravel, GeometricFactors, LorMesh};
use crate::sparse::{CsrMatrix, EnvelopeCholesky, Ilu0, TripletBuilder};
use crate::vector::{axpy, dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cg,
    Gmres,
    Fgmres,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
}

impl SolverConfig {
    pub fn cg(rel_tol: f64, max_iters: usize) -> Self {
        Self {
            method: Method::Cg,
            rel_tol,
            abs_tol: 0.0,
            max_iters,
            restart: 50,
        }
    }

    pub fn fgmres(rel_tol: f64, max_iters: usize) -> Self {
        Self {
            method: Method::Fgmres,
            rel_tol,
            abs_tol: 0.0,
            max_iters,
            restart: 50,
        }
    }

    pub fn gmres(rel_tol: f64, max_iters: usize) -> Self {
        Self {
            method: Method::Gmres,
            ..Self::fgmres(rel_tol, max_iters)
        }
    }

    /// Exactly `k` CG iterations (used for inner solves).
    pub fn fixed_cg(k: usize) -> Self {
        Self::cg(0.0, k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol >= 0.0 && self.abs_tol >= 0.0) {
            return invalid("solver tolerances must be non-negative");
        }
        if self.restart == 0 {
            return invalid("restart length must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    pub seconds: f64,
}

/// Preconditioned conjugate gradients. `x` holds the initial guess on entry.
/// Convergence is measured on the preconditioned residual `sqrt(r^T z)`
/// relative to its initial value; the recursive residual is replaced by the
/// true residual every 50 iterations.
pub fn cg(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let n = b.len();
    check_len(a.nrows(), n)?;
    check_len(n, x.len())?;
    let t0 = Instant::now();
    let mut r = vec![0.0; n];
    let mut q = vec![0.0; n];
    a.apply(x, &mut q);
    for i in 0..n {
        r[i] = b[i] - q[i];
    }
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut rz = dot(&r, &z);
    let rz0 = rz.abs();
    let done = |rz: f64| {
        let s = rz.abs().sqrt();
        s == 0.0 || s <= cfg.abs_tol || s <= cfg.rel_tol * rz0.sqrt()
    };
    if rz0 == 0.0 || done(rz) {
        return Ok(SolveReport {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let mut p = z.clone();
    let mut it = 0;
    let mut converged = false;
    while it < cfg.max_iters {
        it += 1;
        a.apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            log::warn!("CG breakdown: p^T A p = {pq:e} at iteration {it}");
            break;
        }
        let alpha = rz / pq;
        axpy(alpha, &p, x);
        if it % 50 == 0 {
            a.apply(x, &mut q);
            for i in 0..n {
                r[i] = b[i] - q[i];
            }
        } else {
            axpy(-alpha, &q, &mut r);
        }
        m.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        if done(rz_new) {
            rz = rz_new;
            converged = true;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(SolveReport {
        iterations: it,
        rel_residual: (rz.abs() / rz0).sqrt(),
        converged,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Right-preconditioned restarted GMRES. With `cfg.method == Fgmres` the
/// preconditioned directions are stored, so `m` may change between
/// applications. The reported residual is the true residual relative to the
/// initial one.
pub fn fgmres(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    cfg.validate()?;
    let n = b.len();
    check_len(a.nrows(), n)?;
    check_len(n, x.len())?;
    let flexible = cfg.method != Method::Gmres;
    let t0 = Instant::now();
    let mr = cfg.restart.min(cfg.max_iters.max(1));
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let true_residual = |x: &[f64], r: &mut [f64], w: &mut [f64]| {
        a.apply(x, w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        norm(r)
    };
    let r0 = true_residual(x, &mut r, &mut w);
    let target = (cfg.rel_tol * r0).max(cfg.abs_tol);
    if r0 == 0.0 {
        return Ok(SolveReport {
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let mut v: Vec<Vec<f64>> = Vec::with_capacity(mr + 1);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(mr);
    let mut h = vec![vec![0.0; mr]; mr + 1];
    let mut cs = vec![0.0; mr];
    let mut sn = vec![0.0; mr];
    let mut g = vec![0.0; mr + 1];
    let mut total = 0;
    let mut beta = r0;
    let mut converged = false;
    let mut z = vec![0.0; n];
    while total < cfg.max_iters {
        v.clear();
        zs.clear();
        v.push(r.iter().map(|ri| ri / beta).collect());
        g.fill(0.0);
        g[0] = beta;
        let mut k = 0;
        while k < mr && total < cfg.max_iters {
            m.apply(&v[k], &mut z);
            a.apply(&z, &mut w);
            if flexible {
                zs.push(z.clone());
            }
            total += 1;
            let w0 = norm(&w);
            for (j, vj) in v.iter().enumerate() {
                let hj = dot(&w, vj);
                h[j][k] = hj;
                axpy(-hj, vj, &mut w);
            }
            let mut hn = norm(&w);
            if hn < 0.7 * w0 {
                for (j, vj) in v.iter().enumerate() {
                    let c = dot(&w, vj);
                    h[j][k] += c;
                    axpy(-c, vj, &mut w);
                }
                hn = norm(&w);
            }
            h[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let den = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if den == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = h[k][k] / den;
                sn[k] = h[k + 1][k] / den;
            }
            h[k][k] = den;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k += 1;
            let est = g[k].abs();
            if est <= target || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // back substitution for the cycle's coefficients
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= h[i][j] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { s / h[i][i] } else { 0.0 };
        }
        if flexible {
            for (yj, zj) in y.iter().zip(&zs) {
                axpy(*yj, zj, x);
            }
        } else {
            let mut comb = vec![0.0; n];
            for (yj, vj) in y.iter().zip(&v) {
                axpy(*yj, vj, &mut comb);
            }
            m.apply(&comb, &mut z);
            axpy(1.0, &z, x);
        }
        beta = true_residual(x, &mut r, &mut w);
        if beta <= target {
            converged = true;
            break;
        }
        if beta == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(SolveReport {
        iterations: total,
        rel_residual: beta / r0,
        converged,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Dispatches on `cfg.method`.
pub fn solve(
    a: &dyn LinearOperator,
    m: &dyn LinearOperator,
    b: &[f64],
    x: &mut [f64],
    cfg: &SolverConfig,
) -> Result<SolveReport> {
    match cfg.method {
        Method::Cg => cg(a, m, b, x, cfg),
        Method::Gmres | Method::Fgmres => fgmres(a, m, b, x, cfg),
    }
}

/// Inverse of the mass matrix diagonal integrated with the collocated
/// Gauss-Lobatto rule (`B = I`, so the matrix is diagonal). Constrained
/// entries get the identity.
pub fn collocated_mass_diagonal(space: &FESpace, constrained: &[usize]) -> Result<Vec<f64>> {
    let d = space.dim();
    let rule = QuadratureRule1D::new(QuadratureKind::GaussLobatto, space.degree() + 1)?;
    let gf = GeometricFactors::compute(space.mesh(), &rule)?;
    let ns = space.nscalar();
    let mut diag = vec![0.0; ns];
    for e in 0..space.num_elements() {
        for (q, &g) in space.element_dofs(e).iter().enumerate() {
            diag[g] += gf.weights()[q] * gf.det(e, q);
        }
    }
    let _ = d;
    if let Some(i) = diag.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::ZeroPivot {
            row: i,
            value: diag[i],
        });
    }
    let mut full: Vec<f64> = (0..space.vdim())
        .flat_map(|_| diag.iter().copied())
        .collect();
    for &c in constrained {
        full[c] = 1.0;
    }
    Ok(full)
}

/// Diagonal preconditioner `M_colloc^{-1}`.
pub fn collocated_mass_preconditioner(
    space: &FESpace,
    constrained: &[usize],
) -> Result<DiagonalOperator> {
    let diag = collocated_mass_diagonal(space, constrained)?;
    Ok(DiagonalOperator(diag.iter().map(|v| 1.0 / v).collect()))
}

enum Smoother {
    Ilu(Ilu0),
    /// Damped inverse diagonal.
    Jacobi(Vec<f64>),
}

impl Smoother {
    fn build(a: &CsrMatrix, order: &[usize]) -> Result<Self> {
        match Ilu0::new(a, order) {
            Ok(ilu) => Ok(Smoother::Ilu(ilu)),
            Err(e) => {
                log::warn!("ILU(0) failed ({e}); falling back to damped Jacobi smoothing");
                let diag = a.diagonal();
                if diag.contains(&0.0) {
                    return Err(e);
                }
                Ok(Smoother::Jacobi(
                    diag.iter().map(|v| (2.0 / 3.0) / v).collect(),
                ))
            }
        }
    }

    fn apply(&self, r: &[f64], out: &mut [f64], work: &mut [f64], transpose: bool) {
        match self {
            Smoother::Ilu(ilu) if transpose => ilu.solve_transpose(r, out, work),
            Smoother::Ilu(ilu) => ilu.solve(r, out, work),
            Smoother::Jacobi(dinv) => {
                for ((o, ri), di) in out.iter_mut().zip(r).zip(dinv) {
                    *o = ri * di;
                }
            }
        }
    }
}

struct Level {
    a: CsrMatrix,
    smoother: Smoother,
    /// Interpolation from the next coarser level and its transpose.
    p: CsrMatrix,
    pt: CsrMatrix,
}

#[derive(Default)]
struct LevelScratch {
    rhs: Vec<f64>,
    sol: Vec<f64>,
    res: Vec<f64>,
    tmp: Vec<f64>,
    work: Vec<f64>,
}

impl LevelScratch {
    fn new(n: usize) -> Self {
        Self {
            rhs: vec![0.0; n],
            sol: vec![0.0; n],
            res: vec![0.0; n],
            tmp: vec![0.0; n],
            work: vec![0.0; n],
        }
    }
}

/// V(1,1) cycle on LOR matrices: ILU(0) pre-smoothing in
/// element-lexicographic order, transposed ILU(0) post-smoothing, and a
/// sparse Cholesky solve on the Q1 space of the parent mesh at the bottom.
/// Built either as a two-level cycle (Galerkin Q1 coarse matrix) or as a
/// hierarchy of LOR discretizations with roughly halved degree per level.
/// Each application is the same symmetric linear operator.
pub struct LorVCycle {
    levels: Vec<Level>,
    coarse: EnvelopeCholesky,
    scratch: Mutex<Vec<LevelScratch>>,
}

/// Interpolation of the continuous degree-`coarse.degree()` space into the
/// lattice of `fine` (both on the same parent mesh). Rows of constrained
/// fine DoFs and columns of constrained coarse DoFs are empty.
pub fn lor_prolongation(
    fine: &LorMesh,
    coarse: &LorMesh,
    fine_fixed: &[bool],
    coarse_fixed: &[bool],
) -> Result<CsrMatrix> {
    let d = fine.dim();
    let (pf, pc) = (fine.degree(), coarse.degree());
    if coarse.num_macro_elements() != fine.num_macro_elements() || pc > pf {
        return invalid("coarse LOR mesh must share the parent mesh and have lower degree");
    }
    let (b1, _) = crate::basis::build_eval_matrices(coarse.nodes1d(), fine.nodes1d())?;
    let nf = fine.num_vertices();
    let mut done = vec![false; nf];
    let ncl = ipow(pc + 1, d);
    let mut tb = TripletBuilder::with_capacity(nf, coarse.num_vertices(), nf * ncl);
    for e in 0..fine.num_macro_elements() {
        let fd = fine.numbering().element(e);
        let cd = coarse.numbering().element(e);
        for (li, &g) in fd.iter().enumerate() {
            if done[g] || fine_fixed[g] {
                continue;
            }
            done[g] = true;
            let ijk = unravel(li, pf + 1, d);
            for (lc, &c) in cd.iter().enumerate() {
                if coarse_fixed[c] {
                    continue;
                }
                let cijk = unravel(lc, pc + 1, d);
                let mut w = 1.0;
                for a in 0..d {
                    w *= b1[(ijk[a], cijk[a])];
                }
                if w.abs() > 1e-15 {
                    tb.push(g, c, w);
                }
            }
        }
    }
    Ok(tb.build())
}

/// Constrained flags of a coarser lattice: a coarse node inherits the flag of
/// a fine node on the same mesh entity (vertex, edge, face or interior).
fn coarse_constraints(fine: &LorMesh, coarse: &LorMesh, fine_fixed: &[bool]) -> Vec<bool> {
    let d = fine.dim();
    let (pf, pc) = (fine.degree(), coarse.degree());
    let mut fixed = vec![false; coarse.num_vertices()];
    for e in 0..fine.num_macro_elements() {
        let fd = fine.numbering().element(e);
        for (lc, &c) in coarse.numbering().element(e).iter().enumerate() {
            let cijk = unravel(lc, pc + 1, d);
            let mut fijk = [0; 3];
            for a in 0..d {
                fijk[a] = if cijk[a] == 0 {
                    0
                } else if cijk[a] == pc {
                    pf
                } else {
                    1
                };
            }
            if fine_fixed[fd[ravel(fijk, pf + 1, d)]] {
                fixed[c] = true;
            }
        }
    }
    fixed
}

fn mask(n: usize, dofs: &[usize]) -> Result<Vec<bool>> {
    let mut m = vec![false; n];
    for &c in dofs {
        if c >= n {
            return invalid(format!("constrained index {c} out of range"));
        }
        m[c] = true;
    }
    Ok(m)
}

impl LorVCycle {
    /// Two-level cycle with the Galerkin coarse matrix `P^T A P` on the Q1
    /// space of the parent mesh.
    pub fn new(a_lor: CsrMatrix, lor: &LorMesh, constrained: &[usize]) -> Result<Self> {
        let n = a_lor.nrows();
        check_len(lor.num_vertices(), n)?;
        let fixed = mask(n, constrained)?;
        let q1 = lor.coarsened(1)?;
        let cfixed = coarse_constraints(lor, &q1, &fixed);
        let p = lor_prolongation(lor, &q1, &fixed, &cfixed)?;
        let pt = p.transpose();
        let ac = pt.matmul(&a_lor)?.matmul(&p)?;
        let ac = identity_on_empty_rows(ac);
        let smoother = Smoother::build(&a_lor, &lor.element_lexicographic_order())?;
        let coarse = EnvelopeCholesky::new(&ac)?;
        Ok(Self::from_parts(
            vec![Level {
                a: a_lor,
                smoother,
                p,
                pt,
            }],
            coarse,
        ))
    }

    /// Hierarchy of LOR discretizations of degrees `p, p/2, ..., 1` on the
    /// same parent mesh, linked by polynomial interpolation.
    pub fn multilevel(
        kind: LorKind,
        nu: f64,
        lor: &LorMesh,
        constrained: &[usize],
    ) -> Result<Self> {
        let mut fixed = mask(lor.num_vertices(), constrained)?;
        let mut current = lor.clone();
        let mut a = assemble_lor(kind, &current, nu, constrained)?;
        let mut levels = Vec::new();
        while current.degree() > 1 {
            let coarse = current.coarsened(current.degree() / 2)?;
            let cfixed = coarse_constraints(&current, &coarse, &fixed);
            let p = lor_prolongation(&current, &coarse, &fixed, &cfixed)?;
            let pt = p.transpose();
            let cdofs: Vec<usize> = (0..cfixed.len()).filter(|&i| cfixed[i]).collect();
            let ac = assemble_lor(kind, &coarse, nu, &cdofs)?;
            let smoother = Smoother::build(&a, &current.element_lexicographic_order())?;
            levels.push(Level { a, smoother, p, pt });
            a = ac;
            fixed = cfixed;
            current = coarse;
        }
        if levels.is_empty() {
            // p = 1: the LOR matrix is the parent Q1 matrix; solve it directly
            let smoother = Smoother::build(&a, &current.element_lexicographic_order())?;
            let id = CsrMatrix::identity(a.nrows());
            let coarse = EnvelopeCholesky::new(&a)?;
            return Ok(Self::from_parts(
                vec![Level {
                    a,
                    smoother,
                    p: id.clone(),
                    pt: id,
                }],
                coarse,
            ));
        }
        let coarse = EnvelopeCholesky::new(&a)?;
        Ok(Self::from_parts(levels, coarse))
    }

    fn from_parts(levels: Vec<Level>, coarse: EnvelopeCholesky) -> Self {
        let mut scratch: Vec<LevelScratch> = levels
            .iter()
            .map(|l| LevelScratch::new(l.a.nrows()))
            .collect();
        scratch.push(LevelScratch::new(coarse.dim()));
        Self {
            levels,
            coarse,
            scratch: Mutex::new(scratch),
        }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + 1
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.levels[0].a
    }

    pub fn coarse_size(&self) -> usize {
        self.coarse.dim()
    }

    pub fn uses_ilu(&self) -> bool {
        self.levels
            .iter()
            .all(|l| matches!(l.smoother, Smoother::Ilu(_)))
    }

    fn cycle(&self, l: usize, r: &[f64], z: &mut [f64], scratch: &mut [LevelScratch]) {
        if l == self.levels.len() {
            self.coarse.solve(r, z);
            return;
        }
        let lev = &self.levels[l];
        let n = r.len();
        let mut rc = std::mem::take(&mut scratch[1].rhs);
        let mut ec = std::mem::take(&mut scratch[1].sol);
        {
            let LevelScratch { res, tmp, work, .. } = &mut scratch[0];
            lev.smoother.apply(r, z, work, false);
            lev.a.apply(z, tmp);
            for i in 0..n {
                res[i] = r[i] - tmp[i];
            }
            lev.pt.apply(res, &mut rc);
        }
        self.cycle(l + 1, &rc, &mut ec, &mut scratch[1..]);
        lev.p.apply(&ec, &mut scratch[0].tmp);
        scratch[1].rhs = rc;
        scratch[1].sol = ec;
        let LevelScratch { res, tmp, work, .. } = &mut scratch[0];
        axpy(1.0, tmp, z);
        lev.a.apply(z, tmp);
        for i in 0..n {
            res[i] = r[i] - tmp[i];
        }
        lev.smoother.apply(res, tmp, work, true);
        axpy(1.0, tmp, z);
    }
}

fn identity_on_empty_rows(a: CsrMatrix) -> CsrMatrix {
    let n = a.nrows();
    let mut tb = TripletBuilder::with_capacity(n, n, a.nnz() + n);
    for i in 0..n {
        let (c, v) = a.row(i);
        let mut any = false;
        for (&j, &x) in c.iter().zip(v) {
            if x != 0.0 {
                tb.push(i, j, x);
                any = true;
            }
        }
        if !any {
            tb.push(i, i, 1.0);
        }
    }
    tb.build()
}

impl LinearOperator for LorVCycle {
    fn nrows(&self) -> usize {
        self.levels[0].a.nrows()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut guard = self.scratch.lock().unwrap_or_else(|p| p.into_inner());
        self.cycle(0, r, z, &mut guard);
    }
}

/// Applies a scalar preconditioner to each component of a vector field in
/// struct-of-arrays layout.
pub struct Componentwise<P> {
    pub inner: P,
    pub vdim: usize,
}

impl<P: LinearOperator> LinearOperator for Componentwise<P> {
    fn nrows(&self) -> usize {
        self.inner.nrows() * self.vdim
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.inner.nrows();
        for c in 0..self.vdim {
            self.inner
                .apply(&x[c * n..(c + 1) * n], &mut y[c * n..(c + 1) * n]);
        }
    }
}

/// Removal of the discrete mean with weights `m` (the lumped mass):
/// `Q v = v - (m^T v / sum m) 1`.
#[derive(Debug, Clone)]
pub struct MeanDeflation {
    m: Vec<f64>,
    msum: f64,
}

impl MeanDeflation {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        let msum: f64 = m.iter().sum();
        if !(msum > 0.0) {
            return invalid("deflation weights must have a positive sum");
        }
        Ok(Self { m, msum })
    }

    /// Weights from the lumped mass `M 1`.
    pub fn from_mass(mass: &dyn LinearOperator) -> Result<Self> {
        let n = mass.nrows();
        let mut m = vec![0.0; n];
        mass.apply(&vec![1.0; n], &mut m);
        Self::new(m)
    }

    pub fn weights(&self) -> &[f64] {
        &self.m
    }

    /// Weighted mean `m^T v / sum m`.
    pub fn mean(&self, v: &[f64]) -> f64 {
        dot(&self.m, v) / self.msum
    }

    /// `v <- Q v`
    pub fn apply(&self, v: &mut [f64]) {
        let mu = self.mean(v);
        v.iter_mut().for_each(|x| *x -= mu);
    }

    /// `v <- Q^T v = v - m (1^T v) / sum m`; makes `1^T v = 0`.
    pub fn apply_transpose(&self, v: &mut [f64]) {
        let s: f64 = v.iter().sum::<f64>() / self.msum;
        for (x, m) in v.iter_mut().zip(&self.m) {
            *x -= s * m;
        }
    }
}

/// `v - (sum v_i m_i / sum m_i) 1`
pub fn deflate_mean(v: &[f64], m: &[f64]) -> Vec<f64> {
    let mu = dot(v, m) / m.iter().sum::<f64>();
    v.iter().map(|x| x - mu).collect()
}

/// Preconditioner for a pure-Neumann problem: `Q E P E Q^T`, where `P`
/// acts on the matrix with DoF `pin` constrained and `E` zeroes that entry.
pub struct PinnedDeflated<P> {
    pub inner: P,
    pub deflation: Arc<MeanDeflation>,
    pub pin: usize,
}

impl<P: LinearOperator> LinearOperator for PinnedDeflated<P> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.nrows()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let mut t = r.to_vec();
        self.deflation.apply_transpose(&mut t);
        t[self.pin] = 0.0;
        self.inner.apply(&t, z);
        z[self.pin] = 0.0;
        self.deflation.apply(z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::linop::Identity;
    use crate::rng::random_vector;

    fn tridiag(n: usize) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 2.0 + i as f64 * 0.1;
            if i > 0 {
                a[(i, i - 1)] = -1.0;
                a[(i - 1, i)] = -1.0;
            }
        }
        a
    }

    #[test]
    fn identity_converges_in_one_iteration() {
        let b = random_vector(7, 1);
        let mut x = vec![0.0; 7];
        let r = cg(
            &Identity(7),
            &Identity(7),
            &b,
            &mut x,
            &SolverConfig::cg(1e-12, 10),
        )
        .unwrap();
        assert_eq!(r.iterations, 1);
        assert!(r.converged);
        let mut x = vec![0.0; 7];
        let r = fgmres(
            &Identity(7),
            &Identity(7),
            &b,
            &mut x,
            &SolverConfig::fgmres(1e-12, 10),
        )
        .unwrap();
        assert_eq!(r.iterations, 1);
        assert!(x.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-15));
    }

    #[test]
    fn cg_with_jacobi_matches_direct_solve() {
        let a = tridiag(10);
        let b = random_vector(10, 2);
        let jac = DiagonalOperator((0..10).map(|i| 1.0 / a[(i, i)]).collect());
        let mut x = vec![0.0; 10];
        let r = cg(&a, &jac, &b, &mut x, &SolverConfig::cg(1e-14, 100)).unwrap();
        assert!(r.converged);
        let mut xd = vec![0.0; 10];
        a.lu().unwrap().solve(&b, &mut xd);
        for (u, v) in x.iter().zip(&xd) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn gmres_matches_dense_solve() {
        let n = 20;
        let vals = random_vector(n * n, 3);
        let mut a =
            DenseMatrix::from_row_major(n, n, vals.iter().map(|v| 0.2 * v).collect()).unwrap();
        for i in 0..n {
            a[(i, i)] += 3.0;
        }
        let b = random_vector(n, 4);
        let mut xd = vec![0.0; n];
        a.lu().unwrap().solve(&b, &mut xd);
        for cfg in [
            SolverConfig::fgmres(1e-13, 100),
            SolverConfig::gmres(1e-13, 100),
        ] {
            let mut x = vec![0.0; n];
            let r = fgmres(&a, &Identity(n), &b, &mut x, &cfg).unwrap();
            assert!(r.converged);
            for (u, v) in x.iter().zip(&xd) {
                assert!((u - v).abs() < 1e-9);
            }
        }
        // restarts still converge
        let mut cfg = SolverConfig::fgmres(1e-12, 400);
        cfg.restart = 5;
        let mut x = vec![0.0; n];
        let r = fgmres(&a, &Identity(n), &b, &mut x, &cfg).unwrap();
        assert!(r.converged && r.iterations > 5);
    }

    #[test]
    fn fixed_iteration_cg_runs_exactly_k() {
        let a = tridiag(30);
        let b = random_vector(30, 5);
        let mut x = vec![0.0; 30];
        let r = cg(&a, &Identity(30), &b, &mut x, &SolverConfig::fixed_cg(3)).unwrap();
        assert_eq!(r.iterations, 3);
        assert!(!r.converged);
    }

    #[test]
    fn deflation_properties() {
        let m = vec![0.5, 1.0, 2.0, 0.25];
        let c = deflate_mean(&[3.0; 4], &m);
        assert!(c.iter().all(|v| v.abs() < 1e-15));
        let v = random_vector(4, 9);
        let d1 = deflate_mean(&v, &m);
        assert!(dot(&d1, &m).abs() < 1e-13);
        let d2 = deflate_mean(&d1, &m);
        for (a, b) in d1.iter().zip(&d2) {
            assert!((a - b).abs() < 1e-15);
        }
        let q = MeanDeflation::new(m).unwrap();
        let mut t = v.clone();
        q.apply_transpose(&mut t);
        assert!(t.iter().sum::<f64>().abs() < 1e-14);
    }

    fn poisson_setup(p: usize, n: usize) -> (crate::mesh::LorMesh, Vec<usize>) {
        let mut m = crate::mesh::cartesian_mesh(2, &[(0.0, 1.0); 2], &[n, n], &[false; 2]).unwrap();
        m.perturb_interior(0.15, 3).unwrap();
        let m = Arc::new(m);
        let sp = FESpace::scalar(m.clone(), p).unwrap();
        let bd = sp.all_boundary_dofs();
        (crate::mesh::build_lor_mesh(&m, p).unwrap(), bd)
    }

    #[test]
    fn vcycle_is_linear_and_symmetric() {
        let (lor, bd) = poisson_setup(6, 3);
        for v in [
            LorVCycle::multilevel(LorKind::Stiffness, 1.0, &lor, &bd).unwrap(),
            LorVCycle::new(
                assemble_lor(LorKind::Stiffness, &lor, 1.0, &bd).unwrap(),
                &lor,
                &bd,
            )
            .unwrap(),
        ] {
            assert!(v.uses_ilu());
            let n = v.nrows();
            let x = random_vector(n, 1);
            let y = random_vector(n, 2);
            let (mut vx, mut vy, mut vxy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            v.apply(&x, &mut vx);
            v.apply(&y, &mut vy);
            let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
            v.apply(&comb, &mut vxy);
            let scale = norm(&vxy);
            for i in 0..n {
                assert!((vxy[i] - (2.0 * vx[i] - 0.5 * vy[i])).abs() <= 1e-12 * scale);
            }
            let (a, b) = (dot(&y, &vx), dot(&x, &vy));
            assert!((a - b).abs() <= 1e-11 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn degree_one_is_a_direct_solve() {
        let (lor, bd) = poisson_setup(1, 4);
        let a = assemble_lor(LorKind::Stiffness, &lor, 1.0, &bd).unwrap();
        let v = LorVCycle::multilevel(LorKind::Stiffness, 1.0, &lor, &bd).unwrap();
        let b = random_vector(a.nrows(), 5);
        let mut x = vec![0.0; b.len()];
        let r = cg(&a, &v, &b, &mut x, &SolverConfig::cg(1e-10, 20)).unwrap();
        assert!(r.converged && r.iterations <= 2, "{r:?}");
    }

    #[test]
    fn collocated_diagonal_is_lumped_mass_for_q1() {
        let m = Arc::new(
            crate::mesh::cartesian_mesh(2, &[(0.0, 2.0), (0.0, 1.0)], &[3, 2], &[false; 2])
                .unwrap(),
        );
        let sp = Arc::new(FESpace::scalar(m, 1).unwrap());
        let diag = collocated_mass_diagonal(&sp, &[]).unwrap();
        let mass =
            crate::mfop::MatrixFreeOperator::on(crate::mfop::OperatorKind::Mass, sp.clone(), 1.0)
                .unwrap();
        let mut lumped = vec![0.0; sp.ndofs()];
        mass.apply(&vec![1.0; sp.ndofs()], &mut lumped);
        for (a, b) in diag.iter().zip(&lumped) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
