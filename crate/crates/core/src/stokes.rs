//! Saddle-point systems for steady and unsteady Stokes on Taylor-Hood
//! spaces, with the block lower-triangular preconditioner.
//!
//! Layout is `K = [[A, G], [-D, 0]]` with `A = c M + nu L` (`c = 0` for
//! steady flow). With `S = D A^{-1} G` the exact lower factor is
//! `[[A, 0], [-D, S]]`; `S` is negative semidefinite here (`G ~ -D^T`), so
//! the Schur approximations below return `-S^{-1}` and the preconditioner
//! applies the sign.

use std::sync::Arc;

use crate::error::{check_len, invalid, Error, Result};
use crate::fespace::FESpace;
use crate::linop::LinearOperator;
use crate::lor::LorKind;
use crate::mesh::{build_lor_mesh, Mesh};
use crate::mfop::{MatrixFreeOperator, OperatorKind};
use crate::solvers::{
    cg, collocated_mass_diagonal, fgmres, Componentwise, LorVCycle, MeanDeflation, PinnedDeflated,
    SolveReport, SolverConfig,
};

/// Velocity (degree `p`, vector) and pressure (degree `p - 1`, scalar)
/// spaces on a shared mesh.
pub fn taylor_hood(mesh: Arc<Mesh>, p: usize) -> Result<(Arc<FESpace>, Arc<FESpace>)> {
    if p < 2 {
        return invalid("Taylor-Hood pairs need velocity degree >= 2");
    }
    let vel = Arc::new(FESpace::vector(Arc::clone(&mesh), p)?);
    let pres = Arc::new(FESpace::scalar(mesh, p - 1)?);
    Ok((vel, pres))
}

pub struct BlockSaddleOperator {
    a: MatrixFreeOperator,
    g: MatrixFreeOperator,
    d: MatrixFreeOperator,
    essential: Vec<usize>,
    mass_coeff: f64,
}

impl BlockSaddleOperator {
    /// `mass_coeff = 1 / (alpha dt)` for a DIRK stage, 0 for steady flow.
    /// `essential` lists constrained velocity DoFs.
    pub fn new(
        vel: Arc<FESpace>,
        pres: Arc<FESpace>,
        nu: f64,
        mass_coeff: f64,
        essential: &[usize],
    ) -> Result<Self> {
        if !(nu > 0.0) || !(mass_coeff >= 0.0) {
            return invalid("viscosity must be positive and the mass coefficient non-negative");
        }
        if vel.vdim() != vel.dim() || pres.vdim() != 1 || pres.degree() + 1 != vel.degree() {
            return invalid("expected a Taylor-Hood velocity/pressure pair");
        }
        let kind = if mass_coeff == 0.0 {
            OperatorKind::Stiffness
        } else {
            OperatorKind::Helmholtz(mass_coeff)
        };
        let mut a = MatrixFreeOperator::on(kind, Arc::clone(&vel), nu)?;
        a.set_constrained(essential)?;
        let mut g = MatrixFreeOperator::new(
            OperatorKind::Gradient,
            Arc::clone(&pres),
            Arc::clone(&vel),
            1.0,
        )?;
        g.set_zero_outputs(essential)?;
        let mut d = MatrixFreeOperator::new(OperatorKind::Divergence, vel, pres, 1.0)?;
        d.set_zero_inputs(essential)?;
        Ok(Self {
            a,
            g,
            d,
            essential: essential.to_vec(),
            mass_coeff,
        })
    }

    pub fn velocity_block(&self) -> &MatrixFreeOperator {
        &self.a
    }

    pub fn gradient(&self) -> &MatrixFreeOperator {
        &self.g
    }

    pub fn divergence(&self) -> &MatrixFreeOperator {
        &self.d
    }

    pub fn essential(&self) -> &[usize] {
        &self.essential
    }

    pub fn mass_coeff(&self) -> f64 {
        self.mass_coeff
    }

    pub fn nu(&self) -> f64 {
        self.a.nu()
    }

    pub fn velocity_space(&self) -> &Arc<FESpace> {
        self.a.in_space()
    }

    pub fn pressure_space(&self) -> &Arc<FESpace> {
        self.g.in_space()
    }

    pub fn velocity_dofs(&self) -> usize {
        self.a.in_space().ndofs()
    }

    pub fn pressure_dofs(&self) -> usize {
        self.g.in_space().ndofs()
    }

    pub fn try_apply(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        let n = self.velocity_dofs() + self.pressure_dofs();
        check_len(n, x.len())?;
        check_len(n, y.len())?;
        self.apply(x, y);
        Ok(())
    }
}

impl LinearOperator for BlockSaddleOperator {
    fn nrows(&self) -> usize {
        self.velocity_dofs() + self.pressure_dofs()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nu = self.velocity_dofs();
        let (xu, xp) = x.split_at(nu);
        let (yu, yp) = y.split_at_mut(nu);
        self.a.apply(xu, yu);
        let mut t = vec![0.0; nu];
        self.g.apply(xp, &mut t);
        for (a, b) in yu.iter_mut().zip(&t) {
            *a += b;
        }
        self.d.apply(xu, yp);
        yp.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Approximate inverse of the velocity block: exactly `k` CG iterations
/// from a zero guess.
pub struct InnerCg<A, P> {
    pub a: A,
    pub precond: P,
    pub iterations: usize,
}

impl<A: LinearOperator, P: LinearOperator> LinearOperator for InnerCg<A, P> {
    fn nrows(&self) -> usize {
        self.a.nrows()
    }
    fn ncols(&self) -> usize {
        self.a.nrows()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        if let Err(e) = cg(
            &self.a,
            &self.precond,
            r,
            z,
            &SolverConfig::fixed_cg(self.iterations),
        ) {
            log::error!("inner velocity solve failed: {e}");
        }
    }
}

/// `-S^{-1}` approximations. Steady: `nu M~^{-1}`; unsteady:
/// `c L~^{-1} + nu M~^{-1}` with `c = 1 / (alpha dt)`, `M~` the collocated
/// pressure mass diagonal and `L~^{-1}` one V-cycle on the pure-Neumann
/// pressure Laplacian.
pub struct SchurApprox {
    mass_inv: Vec<f64>,
    nu: f64,
    laplace: Option<(f64, PinnedDeflated<LorVCycle>)>,
    deflation: Option<Arc<MeanDeflation>>,
}

impl SchurApprox {
    pub fn steady(pres: &FESpace, nu: f64, deflation: Option<Arc<MeanDeflation>>) -> Result<Self> {
        if !(nu > 0.0) {
            return invalid("viscosity must be positive");
        }
        let diag = collocated_mass_diagonal(pres, &[])?;
        Ok(Self {
            mass_inv: diag.iter().map(|v| 1.0 / v).collect(),
            nu,
            laplace: None,
            deflation,
        })
    }

    pub fn unsteady(
        pres: &FESpace,
        nu: f64,
        alpha: f64,
        dt: f64,
        deflation: Option<Arc<MeanDeflation>>,
    ) -> Result<Self> {
        if !(alpha > 0.0 && dt > 0.0 && nu > 0.0) {
            return invalid("alpha, dt and nu must be positive");
        }
        let mut s = Self::steady(pres, nu, deflation)?;
        let defl = match &s.deflation {
            Some(d) => Arc::clone(d),
            None => Arc::new(MeanDeflation::from_mass(&MatrixFreeOperator::on(
                OperatorKind::Mass,
                Arc::new(pres.clone()),
                1.0,
            )?)?),
        };
        let lor = build_lor_mesh(pres.mesh(), pres.degree())?;
        let pin = 0;
        let vc = LorVCycle::multilevel(LorKind::Stiffness, 1.0, &lor, &[pin])?;
        s.laplace = Some((
            1.0 / (alpha * dt),
            PinnedDeflated {
                inner: vc,
                deflation: defl,
                pin,
            },
        ));
        Ok(s)
    }

    pub fn apply_into(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), mi) in z.iter_mut().zip(r).zip(&self.mass_inv) {
            *zi = self.nu * mi * ri;
        }
        if let Some((c, lap)) = &self.laplace {
            let mut t = vec![0.0; r.len()];
            lap.apply(r, &mut t);
            for (zi, ti) in z.iter_mut().zip(&t) {
                *zi += c * ti;
            }
        }
        if let Some(d) = &self.deflation {
            d.apply(z);
        }
    }
}

impl LinearOperator for SchurApprox {
    fn nrows(&self) -> usize {
        self.mass_inv.len()
    }
    fn ncols(&self) -> usize {
        self.mass_inv.len()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.apply_into(r, z)
    }
}

/// `z_p = nu M~^{-1} r_p`
pub fn schur_apply_steady(pres: &FESpace, nu: f64, r: &[f64]) -> Result<Vec<f64>> {
    check_len(pres.ndofs(), r.len())?;
    let s = SchurApprox::steady(pres, nu, None)?;
    let mut z = vec![0.0; r.len()];
    s.apply_into(r, &mut z);
    Ok(z)
}

/// `z_p = c L~^{-1} r_p + nu M~^{-1} r_p`, mean-free.
pub fn schur_apply_unsteady(
    pres: &FESpace,
    nu: f64,
    alpha: f64,
    dt: f64,
    r: &[f64],
) -> Result<Vec<f64>> {
    check_len(pres.ndofs(), r.len())?;
    let s = SchurApprox::unsteady(pres, nu, alpha, dt, None)?;
    let mut z = vec![0.0; r.len()];
    s.apply_into(r, &mut z);
    Ok(z)
}

/// `[[A, 0], [-D, S]]^{-1}` with `A^{-1}` and `-S^{-1}` replaced by the
/// given approximations:
/// `z_u = A~^{-1} r_u`, `z_p = -(-S)~^{-1} (r_p + D z_u)`.
pub struct BlockTriangularPreconditioner<'a> {
    a_inv: Box<dyn LinearOperator + 'a>,
    d: Box<dyn LinearOperator + 'a>,
    neg_schur_inv: Box<dyn LinearOperator + 'a>,
    deflation: Option<Arc<MeanDeflation>>,
}

impl<'a> BlockTriangularPreconditioner<'a> {
    pub fn new(
        a_inv: Box<dyn LinearOperator + 'a>,
        d: Box<dyn LinearOperator + 'a>,
        neg_schur_inv: Box<dyn LinearOperator + 'a>,
        deflation: Option<Arc<MeanDeflation>>,
    ) -> Result<Self> {
        let (nu, np) = (a_inv.nrows(), neg_schur_inv.nrows());
        if d.nrows() != np || d.ncols() != nu {
            return Err(Error::DimensionMismatch {
                expected: np * nu,
                got: d.nrows() * d.ncols(),
            });
        }
        Ok(Self {
            a_inv,
            d,
            neg_schur_inv,
            deflation,
        })
    }
}

impl LinearOperator for BlockTriangularPreconditioner<'_> {
    fn nrows(&self) -> usize {
        self.a_inv.nrows() + self.neg_schur_inv.nrows()
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let nu = self.a_inv.nrows();
        let (ru, rp) = r.split_at(nu);
        let (zu, zp) = z.split_at_mut(nu);
        self.a_inv.apply(ru, zu);
        let mut t = vec![0.0; rp.len()];
        self.d.apply(zu, &mut t);
        for (ti, ri) in t.iter_mut().zip(rp) {
            *ti += ri;
        }
        self.neg_schur_inv.apply(&t, zp);
        zp.iter_mut().for_each(|v| *v = -*v);
        if let Some(d) = &self.deflation {
            d.apply(zp);
        }
    }
}

/// Velocity preconditioner: one LOR V-cycle per component.
pub fn velocity_preconditioner(op: &BlockSaddleOperator) -> Result<Componentwise<LorVCycle>> {
    let vel = op.velocity_space();
    let ns = vel.nscalar();
    let vd = vel.vdim();
    let mut comps: Vec<Vec<usize>> = vec![Vec::new(); vd];
    for &i in op.essential() {
        comps[i / ns].push(i % ns);
    }
    for c in &mut comps {
        c.sort_unstable();
    }
    if comps.iter().any(|c| *c != comps[0]) {
        return Err(Error::Unsupported(
            "velocity components with different Dirichlet sets".into(),
        ));
    }
    let lor = build_lor_mesh(vel.mesh(), vel.degree())?;
    let kind = if op.mass_coeff() == 0.0 {
        LorKind::Stiffness
    } else {
        LorKind::Helmholtz(op.mass_coeff())
    };
    let vc = LorVCycle::multilevel(kind, op.nu(), &lor, &comps[0])?;
    Ok(Componentwise {
        inner: vc,
        vdim: vd,
    })
}

/// A saddle system with its preconditioner pieces, solved by FGMRES.
pub struct StokesSolver {
    op: BlockSaddleOperator,
    vel_precond: Componentwise<LorVCycle>,
    schur: SchurApprox,
    deflation: Option<Arc<MeanDeflation>>,
    pub inner_iterations: usize,
    pub config: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct StokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub report: SolveReport,
}

impl StokesSolver {
    /// Steady system when `alpha_dt` is `None`, otherwise the DIRK stage
    /// system with `c = 1 / (alpha dt)`.
    pub fn new(
        vel: Arc<FESpace>,
        pres: Arc<FESpace>,
        nu: f64,
        alpha_dt: Option<f64>,
        essential: &[usize],
        config: SolverConfig,
    ) -> Result<Self> {
        let c = match alpha_dt {
            Some(adt) if adt > 0.0 => 1.0 / adt,
            Some(_) => return invalid("alpha * dt must be positive"),
            None => 0.0,
        };
        let op = BlockSaddleOperator::new(Arc::clone(&vel), Arc::clone(&pres), nu, c, essential)?;
        // the pressure is determined up to a constant when no velocity
        // boundary DoF is free
        let bdofs = vel.all_boundary_dofs();
        let mut ess = vec![false; vel.ndofs()];
        for &i in essential {
            ess[i] = true;
        }
        let closed = bdofs.iter().all(|&i| ess[i]);
        let deflation = if closed {
            let m = MatrixFreeOperator::on(OperatorKind::Mass, Arc::clone(&pres), 1.0)?;
            Some(Arc::new(MeanDeflation::from_mass(&m)?))
        } else {
            None
        };
        let schur = match alpha_dt {
            None => SchurApprox::steady(&pres, nu, deflation.clone())?,
            Some(adt) => SchurApprox::unsteady(&pres, nu, 1.0, adt, deflation.clone())?,
        };
        let vel_precond = velocity_preconditioner(&op)?;
        Ok(Self {
            op,
            vel_precond,
            schur,
            deflation,
            inner_iterations: 3,
            config,
        })
    }

    pub fn operator(&self) -> &BlockSaddleOperator {
        &self.op
    }

    pub fn deflation(&self) -> Option<&Arc<MeanDeflation>> {
        self.deflation.as_ref()
    }

    pub fn velocity_preconditioner(&self) -> &Componentwise<LorVCycle> {
        &self.vel_precond
    }

    pub fn preconditioner(&self) -> Result<BlockTriangularPreconditioner<'_>> {
        BlockTriangularPreconditioner::new(
            Box::new(InnerCg {
                a: self.op.velocity_block(),
                precond: &self.vel_precond,
                iterations: self.inner_iterations,
            }),
            Box::new(self.op.divergence()),
            Box::new(&self.schur),
            self.deflation.clone(),
        )
    }

    /// Solves `A u + G p = f_u`, `-D u = f_p` with `u = g` on the essential
    /// DoFs. `f_u` is the momentum load vector and `g` any velocity vector
    /// carrying the boundary values; `guess` optionally seeds `(u, p)`.
    pub fn solve(
        &self,
        f_u: &[f64],
        f_p: &[f64],
        g: &[f64],
        guess: Option<(&[f64], &[f64])>,
    ) -> Result<StokesSolution> {
        let nu = self.op.velocity_dofs();
        let np = self.op.pressure_dofs();
        check_len(nu, f_u.len())?;
        check_len(np, f_p.len())?;
        check_len(nu, g.len())?;
        let mut ug = vec![0.0; nu];
        for &i in self.op.essential() {
            ug[i] = g[i];
        }
        let mut b = vec![0.0; nu + np];
        let mut t = vec![0.0; nu];
        self.op.velocity_block().apply_unconstrained(&ug, &mut t);
        for i in 0..nu {
            b[i] = f_u[i] - t[i];
        }
        for &i in self.op.essential() {
            b[i] = g[i];
        }
        let mut tp = vec![0.0; np];
        self.op.divergence().apply_unconstrained(&ug, &mut tp);
        for i in 0..np {
            b[nu + i] = f_p[i] + tp[i];
        }
        if let Some(d) = &self.deflation {
            d.apply_transpose(&mut b[nu..]);
        }
        let mut x = vec![0.0; nu + np];
        if let Some((u0, p0)) = guess {
            check_len(nu, u0.len())?;
            check_len(np, p0.len())?;
            x[..nu].copy_from_slice(u0);
            x[nu..].copy_from_slice(p0);
        }
        for &i in self.op.essential() {
            x[i] = g[i];
        }
        let pc = self.preconditioner()?;
        let report = fgmres(&self.op, &pc, &b, &mut x, &self.config)?;
        let mut p = x.split_off(nu);
        if let Some(d) = &self.deflation {
            d.apply(&mut p);
        }
        Ok(StokesSolution { u: x, p, report })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::DenseMatrix;
    use crate::mesh::cartesian_mesh;
    use crate::rng::random_vector;
    use crate::solvers::SolverConfig;

    /// Dense `30 + 15` saddle system with exact blocks: the lower-triangular
    /// preconditioner leaves a degree-two minimal polynomial.
    #[test]
    fn exact_blocks_converge_in_two_iterations() {
        let (n, m) = (30, 15);
        let r = random_vector(n * n, 11);
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = r[i * n + j] * 0.1;
            }
        }
        let mut spd = a.transpose().matmul(&a).unwrap();
        for i in 0..n {
            spd[(i, i)] += 2.0;
        }
        let gv = random_vector(n * m, 12);
        let g = DenseMatrix::from_row_major(n, m, gv).unwrap();
        let d = g.transpose();
        let mut k = DenseMatrix::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = spd[(i, j)];
            }
            for j in 0..m {
                k[(i, n + j)] = g[(i, j)];
                k[(n + j, i)] = -d[(j, i)];
            }
        }
        let ainv = spd.lu().unwrap();
        // -S = -D A^{-1} G
        let mut neg_s = DenseMatrix::zeros(m, m);
        let mut col = vec![0.0; n];
        let mut sol = vec![0.0; n];
        let mut ds = vec![0.0; m];
        for j in 0..m {
            for i in 0..n {
                col[i] = g[(i, j)];
            }
            ainv.solve(&col, &mut sol);
            d.matvec(&sol, &mut ds);
            for i in 0..m {
                neg_s[(i, j)] = -ds[i];
            }
        }
        let pc = BlockTriangularPreconditioner::new(
            Box::new(ainv),
            Box::new(d.clone()),
            Box::new(neg_s.lu().unwrap()),
            None,
        )
        .unwrap();
        let b = random_vector(n + m, 13);
        let mut x = vec![0.0; n + m];
        let rep = fgmres(&k, &pc, &b, &mut x, &SolverConfig::fgmres(1e-12, 10)).unwrap();
        assert!(rep.converged && rep.iterations <= 2, "{rep:?}");
    }

    #[test]
    fn constant_pressure_is_in_the_kernel_on_periodic_meshes() {
        let mesh = Arc::new(cartesian_mesh(2, &[(0.0, 1.0); 2], &[3, 3], &[true; 2]).unwrap());
        let (vel, pres) = taylor_hood(mesh, 3).unwrap();
        let op = BlockSaddleOperator::new(vel, pres, 1.0, 0.0, &[]).unwrap();
        let mut x = vec![0.0; op.nrows()];
        for v in &mut x[op.velocity_dofs()..] {
            *v = 2.5;
        }
        let mut y = vec![0.0; op.nrows()];
        op.apply(&x, &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn schur_scaling_and_limits() {
        let mesh = Arc::new(cartesian_mesh(2, &[(0.0, 1.0); 2], &[2, 2], &[false; 2]).unwrap());
        let (_, pres) = taylor_hood(mesh, 3).unwrap();
        let r = random_vector(pres.ndofs(), 4);
        let z1 = schur_apply_steady(&pres, 1.0, &r).unwrap();
        let z2 = schur_apply_steady(&pres, 2.0, &r).unwrap();
        for (a, b) in z1.iter().zip(&z2) {
            assert_eq!(2.0 * a, *b);
        }
        assert!(schur_apply_steady(&pres, 1.0, &vec![0.0; r.len()])
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let defl = Arc::new(
            MeanDeflation::from_mass(
                &MatrixFreeOperator::on(OperatorKind::Mass, pres.clone(), 1.0).unwrap(),
            )
            .unwrap(),
        );
        let steady = SchurApprox::steady(&pres, 0.7, Some(defl.clone())).unwrap();
        let unsteady = SchurApprox::unsteady(&pres, 0.7, 1.0, 1e30, Some(defl)).unwrap();
        let (mut a, mut b) = (vec![0.0; r.len()], vec![0.0; r.len()]);
        steady.apply(&r, &mut a);
        unsteady.apply(&r, &mut b);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(schur_apply_unsteady(&pres, 1.0, 0.0, 1.0, &r).is_err());
    }
}
