//! Time integration: stiffly accurate SDIRK for the unsteady Stokes DAE and
//! the BDF/extrapolation velocity-correction scheme (rotational form) for
//! Navier-Stokes.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{check_len, invalid, Error, Result};
use crate::fespace::{boundary_normal_flux, load_vector, FESpace};
use crate::linop::{DiagonalOperator, LinearOperator};
use crate::lor::LorKind;
use crate::mesh::build_lor_mesh;
use crate::mfop::{MatrixFreeOperator, OperatorKind};
use crate::solvers::{
    cg, collocated_mass_preconditioner, Componentwise, LorVCycle, MeanDeflation, PinnedDeflated,
    SolveReport, SolverConfig,
};
use crate::stokes::StokesSolver;
use crate::vector::{axpy, dot};

/// Space-time callable `f(t, x, out)`.
pub type TimeFunction<'a> = &'a dyn Fn(f64, &[f64], &mut [f64]);

#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub name: &'static str,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn backward_euler() -> Self {
        Self {
            name: "backward-euler",
            a: vec![vec![1.0]],
            b: vec![1.0],
            c: vec![1.0],
        }
    }

    /// Two stages, order 2, `alpha = 1 - sqrt(2)/2`.
    pub fn sdirk2() -> Self {
        let al = 1.0 - std::f64::consts::SQRT_2 / 2.0;
        Self {
            name: "sdirk2",
            a: vec![vec![al, 0.0], vec![1.0 - al, al]],
            b: vec![1.0 - al, al],
            c: vec![al, 1.0],
        }
    }

    /// Alexander's three-stage, order-3, L-stable scheme.
    pub fn sdirk3() -> Self {
        // alpha is the root of 6x^3 - 18x^2 + 9x - 1 in (1/6, 1/2)
        let mut al: f64 = 0.4358665215;
        for _ in 0..50 {
            let f = ((6.0 * al - 18.0) * al + 9.0) * al - 1.0;
            let df = (18.0 * al - 36.0) * al + 9.0;
            al -= f / df;
        }
        let tau = 0.5 * (1.0 + al);
        let b1 = -(6.0 * al * al - 16.0 * al + 1.0) / 4.0;
        let b2 = (6.0 * al * al - 20.0 * al + 5.0) / 4.0;
        Self {
            name: "sdirk3",
            a: vec![
                vec![al, 0.0, 0.0],
                vec![tau - al, al, 0.0],
                vec![b1, b2, al],
            ],
            b: vec![b1, b2, al],
            c: vec![al, tau, 1.0],
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "backward-euler" | "be" => Ok(Self::backward_euler()),
            "sdirk2" => Ok(Self::sdirk2()),
            "sdirk3" => Ok(Self::sdirk3()),
            _ => Err(Error::Config(format!("unknown tableau '{name}'"))),
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// The common diagonal entry.
    pub fn alpha(&self) -> f64 {
        self.a[0][0]
    }

    pub fn is_stiffly_accurate(&self) -> bool {
        let s = self.stages();
        self.c[s - 1] == 1.0 && (0..s).all(|i| self.a[s - 1][i] == self.b[i])
    }

    pub fn is_singly_diagonal(&self) -> bool {
        let s = self.stages();
        (0..s).all(|i| self.a[i][i] == self.a[0][0] && (i + 1..s).all(|j| self.a[i][j] == 0.0))
    }

    /// Largest `q <= 3` whose order conditions hold to `tol`, with
    /// `c_i = sum_j a_ij` checked as well.
    pub fn order(&self, tol: f64) -> usize {
        let s = self.stages();
        let rows_ok = (0..s).all(|i| (self.a[i].iter().sum::<f64>() - self.c[i]).abs() <= tol);
        if !rows_ok {
            return 0;
        }
        let bc = |k: i32| (0..s).map(|i| self.b[i] * self.c[i].powi(k)).sum::<f64>();
        let mut q = 0;
        if (bc(0) - 1.0).abs() <= tol {
            q = 1;
        } else {
            return q;
        }
        if (bc(1) - 0.5).abs() <= tol {
            q = 2;
        } else {
            return q;
        }
        let bac: f64 = (0..s)
            .map(|i| self.b[i] * (0..s).map(|j| self.a[i][j] * self.c[j]).sum::<f64>())
            .sum();
        if (bc(2) - 1.0 / 3.0).abs() <= tol && (bac - 1.0 / 6.0).abs() <= tol {
            q = 3;
        }
        q
    }

    pub fn validate(&self, expected_order: usize) -> Result<()> {
        if !self.is_stiffly_accurate() || !self.is_singly_diagonal() {
            return invalid(format!(
                "{} is not a stiffly accurate SDIRK tableau",
                self.name
            ));
        }
        let q = self.order(1e-12);
        if q < expected_order {
            return invalid(format!(
                "{} satisfies order conditions only to order {q}",
                self.name
            ));
        }
        Ok(())
    }
}

/// `sum_j b_j u^{n+1-j} / dt` approximates `u_t` at `t^{n+1}`; the explicit
/// terms are extrapolated as `sum_{j>=1} a_j N(u^{n+1-j})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BdfScheme {
    pub order: usize,
    /// `b_0, ..., b_k`
    pub b: Vec<f64>,
    /// `a_1, ..., a_k`
    pub a: Vec<f64>,
}

pub fn bdf_coefficients(k: usize) -> Result<BdfScheme> {
    let (b, a) = match k {
        1 => (vec![1.0, -1.0], vec![1.0]),
        2 => (vec![1.5, -2.0, 0.5], vec![2.0, -1.0]),
        3 => (
            vec![11.0 / 6.0, -3.0, 1.5, -1.0 / 3.0],
            vec![3.0, -3.0, 1.0],
        ),
        0 => return invalid("BDF order must be >= 1"),
        _ => return Err(Error::Unsupported(format!("BDF order {k} (at most 3)"))),
    };
    Ok(BdfScheme { order: k, b, a })
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

/// SDIRK integrator for `M u' + L u + G p = f`, `-D u = 0`, `u = g_D` on
/// the essential DoFs.
pub struct UnsteadyStokes {
    solver: StokesSolver,
    mass: MatrixFreeOperator,
    lap: MatrixFreeOperator,
    tableau: ButcherTableau,
    dt: f64,
    quad_points: usize,
}

impl UnsteadyStokes {
    pub fn new(
        vel: Arc<FESpace>,
        pres: Arc<FESpace>,
        nu: f64,
        tableau: ButcherTableau,
        dt: f64,
        essential: &[usize],
        config: SolverConfig,
    ) -> Result<Self> {
        if !(dt > 0.0) {
            return invalid("time step must be positive");
        }
        if !tableau.is_stiffly_accurate() || !tableau.is_singly_diagonal() {
            return invalid("the DAE formulation needs a stiffly accurate SDIRK tableau");
        }
        let solver = StokesSolver::new(
            Arc::clone(&vel),
            pres,
            nu,
            Some(tableau.alpha() * dt),
            essential,
            config,
        )?;
        let mass = MatrixFreeOperator::on(OperatorKind::Mass, Arc::clone(&vel), 1.0)?;
        let lap = MatrixFreeOperator::on(OperatorKind::Stiffness, Arc::clone(&vel), nu)?;
        let quad_points = vel.degree() + 2;
        Ok(Self {
            solver,
            mass,
            lap,
            tableau,
            dt,
            quad_points,
        })
    }

    pub fn solver(&self) -> &StokesSolver {
        &self.solver
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(
        &self,
        state: &FlowState,
        forcing: TimeFunction,
        dirichlet: TimeFunction,
    ) -> Result<(FlowState, Vec<SolveReport>)> {
        sdirk_step_stokes(self, state, forcing, dirichlet)
    }
}

/// One step: stage `i` solves `-D U_i = 0` and
///
/// ```text
/// (M/(alpha dt) + L) U_i + G P_i = M u^n/(alpha dt) + f_i
///     + (1/alpha) sum_{j<i} a_ij (f_j - L U_j - G P_j)
/// ```
///
/// The last stage is the new state.
pub fn sdirk_step_stokes(
    ctx: &UnsteadyStokes,
    state: &FlowState,
    forcing: TimeFunction,
    dirichlet: TimeFunction,
) -> Result<(FlowState, Vec<SolveReport>)> {
    let op = ctx.solver.operator();
    let vel = op.velocity_space();
    let nu = vel.ndofs();
    let np = op.pressure_dofs();
    check_len(nu, state.u.len())?;
    check_len(np, state.p.len())?;
    let tab = &ctx.tableau;
    let al = tab.alpha();
    let dt = ctx.dt;
    let mut mu = vec![0.0; nu];
    ctx.mass.apply_unconstrained(&state.u, &mut mu);
    let mut residuals: Vec<Vec<f64>> = Vec::with_capacity(tab.stages());
    let mut reports = Vec::with_capacity(tab.stages());
    let (mut u, mut p) = (state.u.clone(), state.p.clone());
    let mut t1 = vec![0.0; nu];
    let mut t2 = vec![0.0; nu];
    for i in 0..tab.stages() {
        let ti = state.t + tab.c[i] * dt;
        let fi = load_vector(vel, |x, o| forcing(ti, x, o), ctx.quad_points)?;
        let mut rhs: Vec<f64> = mu.iter().zip(&fi).map(|(m, f)| m / (al * dt) + f).collect();
        for (j, rj) in residuals.iter().enumerate() {
            axpy(tab.a[i][j] / al, rj, &mut rhs);
        }
        let g = vel.project_function(|x, o| dirichlet(ti, x, o));
        let sol = ctx
            .solver
            .solve(&rhs, &vec![0.0; np], &g.data, Some((&u, &p)))?;
        if !sol.report.converged {
            return Err(Error::NotConverged(format!(
                "stage {i} saddle solve stopped at relative residual {:.2e} after {} iterations",
                sol.report.rel_residual, sol.report.iterations
            )));
        }
        reports.push(sol.report);
        u = sol.u;
        p = sol.p;
        if i + 1 < tab.stages() {
            ctx.lap.apply_unconstrained(&u, &mut t1);
            op.gradient().apply_unconstrained(&p, &mut t2);
            residuals.push((0..nu).map(|k| fi[k] - t1[k] - t2[k]).collect());
        }
    }
    Ok((
        FlowState {
            t: state.t + dt,
            u,
            p,
        },
        reports,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionConfig {
    pub order: usize,
    pub dt: f64,
    pub nu: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
}

/// Velocity history (newest first) with the matching convection loads.
#[derive(Debug, Clone)]
pub struct ProjectionState {
    pub t: f64,
    pub u: VecDeque<Vec<f64>>,
    /// `-((u . grad) u, v)` for each entry of `u`.
    pub n: VecDeque<Vec<f64>>,
    pub p: Vec<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ProjectionReport {
    pub order_used: usize,
    pub mass_iterations: usize,
    pub pressure_iterations: usize,
    pub helmholtz_iterations: usize,
}

struct Helmholtz {
    op: MatrixFreeOperator,
    precond: Componentwise<LorVCycle>,
}

/// Rotational velocity-correction scheme on equal-order spaces (2D).
///
/// Step 1 forms `F* = f - sum a_j (u.grad u)_j - sum_{j>=1} b_j/dt u_j`
/// through a mass solve, together with `nu curl(omega*)` for the projected
/// vorticity `omega* = curl(sum a_j u_j)`. Step 2 solves the pure-Neumann
/// problem `(grad p, grad q) = (F* - nu curl omega*, grad q)
/// - b_0/dt oint q g.n`. Step 3 solves
/// `(b_0/dt M + nu K) u = (F*, v) - G p` with `u = g` on the boundary.
pub struct ProjectionSolver {
    vel: Arc<FESpace>,
    cfg: ProjectionConfig,
    scheme: Vec<BdfScheme>,
    mass_v: MatrixFreeOperator,
    mass_v_pc: DiagonalOperator,
    mass_s: MatrixFreeOperator,
    mass_s_pc: DiagonalOperator,
    conv: MatrixFreeOperator,
    div: MatrixFreeOperator,
    grad: MatrixFreeOperator,
    lap_p: MatrixFreeOperator,
    lap_p_pc: PinnedDeflated<LorVCycle>,
    deflation: Arc<MeanDeflation>,
    helm: Vec<Option<Helmholtz>>,
    essential: Vec<usize>,
    essential_scalar: Vec<usize>,
    quad_points: usize,
}

impl ProjectionSolver {
    /// `vel` is a 2D vector space; the pressure uses the same degree. Every
    /// boundary DoF of `vel` carries Dirichlet data.
    pub fn new(vel: Arc<FESpace>, cfg: ProjectionConfig) -> Result<Self> {
        if vel.dim() != 2 || vel.vdim() != 2 {
            return Err(Error::Unsupported(
                "the projection scheme is implemented in 2D".into(),
            ));
        }
        if !(cfg.dt > 0.0 && cfg.nu > 0.0) {
            return invalid("dt and nu must be positive");
        }
        let scheme = (1..=cfg.order)
            .map(bdf_coefficients)
            .collect::<Result<Vec<_>>>()?;
        let pres = Arc::new(FESpace::scalar(Arc::clone(vel.mesh()), vel.degree())?);
        let mass_v = MatrixFreeOperator::on(OperatorKind::Mass, Arc::clone(&vel), 1.0)?;
        let mass_v_pc = collocated_mass_preconditioner(&vel, &[])?;
        let mass_s = MatrixFreeOperator::on(OperatorKind::Mass, Arc::clone(&pres), 1.0)?;
        let mass_s_pc = collocated_mass_preconditioner(&pres, &[])?;
        let conv = MatrixFreeOperator::on(OperatorKind::Convection, Arc::clone(&vel), 1.0)?;
        let div = MatrixFreeOperator::new(
            OperatorKind::Divergence,
            Arc::clone(&vel),
            Arc::clone(&pres),
            1.0,
        )?;
        let grad = MatrixFreeOperator::new(
            OperatorKind::Gradient,
            Arc::clone(&pres),
            Arc::clone(&vel),
            1.0,
        )?;
        let lap_p = MatrixFreeOperator::on(OperatorKind::Stiffness, Arc::clone(&pres), 1.0)?;
        let deflation = Arc::new(MeanDeflation::from_mass(&mass_s)?);
        let lor = build_lor_mesh(vel.mesh(), vel.degree())?;
        let lap_p_pc = PinnedDeflated {
            inner: LorVCycle::multilevel(LorKind::Stiffness, 1.0, &lor, &[0])?,
            deflation: Arc::clone(&deflation),
            pin: 0,
        };
        let essential = vel.all_boundary_dofs();
        let essential_scalar = pres.all_boundary_dofs();
        let quad_points = vel.degree() + 2;
        Ok(Self {
            helm: (0..cfg.order).map(|_| None).collect(),
            vel,
            cfg,
            scheme,
            mass_v,
            mass_v_pc,
            mass_s,
            mass_s_pc,
            conv,
            div,
            grad,
            lap_p,
            lap_p_pc,
            deflation,
            essential,
            essential_scalar,
            quad_points,
        })
    }

    pub fn velocity_space(&self) -> &Arc<FESpace> {
        &self.vel
    }

    pub fn pressure_space(&self) -> &Arc<FESpace> {
        self.lap_p.in_space()
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.cfg
    }

    pub fn mass(&self) -> &MatrixFreeOperator {
        &self.mass_v
    }

    fn sub_config(&self) -> SolverConfig {
        SolverConfig::cg(self.cfg.rel_tol, self.cfg.max_iters)
    }

    /// Tolerance relative to the preconditioned norm of `b`, so that a good
    /// warm start from the previous step ends the solve early.
    fn rhs_config(&self, precond: &dyn LinearOperator, b: &[f64]) -> SolverConfig {
        let mut z = vec![0.0; b.len()];
        precond.apply(b, &mut z);
        let mut cfg = self.sub_config();
        cfg.abs_tol = self.cfg.rel_tol * dot(b, &z).abs().sqrt();
        cfg
    }

    fn check(report: SolveReport, what: &str) -> Result<usize> {
        if !report.converged {
            return Err(Error::NotConverged(format!(
                "{what} solve stopped at relative residual {:.2e} after {} iterations",
                report.rel_residual, report.iterations
            )));
        }
        Ok(report.iterations)
    }

    /// `-((u . grad) u, v)`
    pub fn convection_load(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; u.len()];
        self.conv.apply_convection(u, &mut y)?;
        y.iter_mut().for_each(|v| *v = -*v);
        Ok(y)
    }

    /// History from velocities given newest first (one entry starts the
    /// order ramp; `order` entries start at full order).
    pub fn initial_state(
        &self,
        t: f64,
        history: Vec<Vec<f64>>,
        p: Vec<f64>,
    ) -> Result<ProjectionState> {
        if history.is_empty() || history.len() > self.cfg.order {
            return invalid("history must hold between 1 and `order` velocities");
        }
        check_len(self.pressure_space().ndofs(), p.len())?;
        let mut n = VecDeque::new();
        for u in &history {
            check_len(self.vel.ndofs(), u.len())?;
            n.push_back(self.convection_load(u)?);
        }
        Ok(ProjectionState {
            t,
            u: history.into(),
            n,
            p,
            steps: 0,
        })
    }

    fn helmholtz(&mut self, order: usize) -> Result<&Helmholtz> {
        if self.helm[order - 1].is_none() {
            let c = self.scheme[order - 1].b[0] / self.cfg.dt;
            let mut op = MatrixFreeOperator::on(
                OperatorKind::Helmholtz(c),
                Arc::clone(&self.vel),
                self.cfg.nu,
            )?;
            op.set_constrained(&self.essential)?;
            let lor = build_lor_mesh(self.vel.mesh(), self.vel.degree())?;
            let vc = LorVCycle::multilevel(
                LorKind::Helmholtz(c),
                self.cfg.nu,
                &lor,
                &self.essential_scalar,
            )?;
            self.helm[order - 1] = Some(Helmholtz {
                op,
                precond: Componentwise { inner: vc, vdim: 2 },
            });
        }
        Ok(self.helm[order - 1].as_ref().unwrap())
    }

    /// Advances `state` by one step of size `dt`.
    pub fn step(
        &mut self,
        state: &mut ProjectionState,
        forcing: TimeFunction,
        dirichlet: TimeFunction,
    ) -> Result<ProjectionReport> {
        let order = state.u.len().min(self.cfg.order);
        let sch = self.scheme[order - 1].clone();
        let dt = self.cfg.dt;
        let nu = self.cfg.nu;
        let t1 = state.t + dt;
        let nv = self.vel.ndofs();
        let ns = self.pressure_space().ndofs();
        let mut rep = ProjectionReport {
            order_used: order,
            ..Default::default()
        };

        // step 1: explicit terms
        let mut nstar = vec![0.0; nv];
        let mut ustar = vec![0.0; nv];
        for j in 0..order {
            axpy(sch.a[j], &state.n[j], &mut nstar);
            axpy(sch.a[j], &state.u[j], &mut ustar);
        }
        let f_load = load_vector(&self.vel, |x, o| forcing(t1, x, o), self.quad_points)?;
        // omega* = M^{-1} (curl u*, psi) with curl u = div(u_y, -u_x)
        let mut rot = vec![0.0; nv];
        rot[..nv / 2].copy_from_slice(&ustar[nv / 2..]);
        for (r, v) in rot[nv / 2..].iter_mut().zip(&ustar[..nv / 2]) {
            *r = -v;
        }
        let mut wload = vec![0.0; ns];
        self.div.apply_unconstrained(&rot, &mut wload);
        let mut omega = vec![0.0; ns];
        let r = cg(
            &self.mass_s,
            &self.mass_s_pc,
            &wload,
            &mut omega,
            &self.sub_config(),
        )?;
        rep.mass_iterations += Self::check(r, "vorticity mass")?;
        // (curl omega, v) = ((d_y omega, -d_x omega), v)
        let mut gw = vec![0.0; nv];
        self.grad.apply_unconstrained(&omega, &mut gw);
        let mut w = f_load.clone();
        axpy(1.0, &nstar, &mut w);
        for i in 0..nv / 2 {
            w[i] -= nu * gw[nv / 2 + i];
            w[nv / 2 + i] += nu * gw[i];
        }
        let mut ftilde = vec![0.0; nv];
        let r = cg(
            &self.mass_v,
            &self.mass_v_pc,
            &w,
            &mut ftilde,
            &self.sub_config(),
        )?;
        rep.mass_iterations += Self::check(r, "explicit-term mass")?;
        for j in 1..=order {
            axpy(-sch.b[j] / dt, &state.u[j - 1], &mut ftilde);
        }

        // step 2: pressure Poisson with Neumann data from g . n
        let mut rhs_p = vec![0.0; ns];
        self.grad.apply_transpose(&ftilde, &mut rhs_p);
        let flux = boundary_normal_flux(
            self.pressure_space(),
            |x, o| dirichlet(t1, x, o),
            self.quad_points,
        )?;
        axpy(-sch.b[0] / dt, &flux, &mut rhs_p);
        self.deflation.apply_transpose(&mut rhs_p);
        let mut p = state.p.clone();
        let cfg = self.rhs_config(&self.lap_p_pc, &rhs_p);
        let r = cg(&self.lap_p, &self.lap_p_pc, &rhs_p, &mut p, &cfg)?;
        rep.pressure_iterations = Self::check(r, "pressure")?;
        self.deflation.apply(&mut p);

        // step 3: Helmholtz with Dirichlet lifting
        let mut rhs = f_load;
        axpy(1.0, &nstar, &mut rhs);
        let mut hist = vec![0.0; nv];
        for j in 1..=order {
            axpy(sch.b[j] / dt, &state.u[j - 1], &mut hist);
        }
        let mut t = vec![0.0; nv];
        self.mass_v.apply_unconstrained(&hist, &mut t);
        axpy(-1.0, &t, &mut rhs);
        self.grad.apply_unconstrained(&p, &mut t);
        axpy(-1.0, &t, &mut rhs);
        let g = self.vel.project_function(|x, o| dirichlet(t1, x, o));
        let mut ug = vec![0.0; nv];
        for &i in &self.essential {
            ug[i] = g.data[i];
        }
        let (rel_tol, max_iters) = (self.cfg.rel_tol, self.cfg.max_iters);
        let h = self.helmholtz(order)?;
        h.op.apply_unconstrained(&ug, &mut t);
        axpy(-1.0, &t, &mut rhs);
        let mut u = state.u[0].clone();
        for &i in h.op.constrained() {
            rhs[i] = ug[i];
            u[i] = ug[i];
        }
        let mut z = vec![0.0; nv];
        h.precond.apply(&rhs, &mut z);
        let mut cfg = SolverConfig::cg(rel_tol, max_iters);
        cfg.abs_tol = rel_tol * dot(&rhs, &z).abs().sqrt();
        let r = cg(&h.op, &h.precond, &rhs, &mut u, &cfg)?;
        rep.helmholtz_iterations = Self::check(r, "Helmholtz")?;

        let nl = self.convection_load(&u)?;
        state.u.push_front(u);
        state.n.push_front(nl);
        state.u.truncate(self.cfg.order);
        state.n.truncate(self.cfg.order);
        state.p = p;
        state.t = t1;
        state.steps += 1;
        Ok(rep)
    }
}

/// Performs one step of the projection scheme.
pub fn projection_step(
    solver: &mut ProjectionSolver,
    state: &mut ProjectionState,
    forcing: TimeFunction,
    dirichlet: TimeFunction,
) -> Result<ProjectionReport> {
    solver.step(state, forcing, dirichlet)
}

/// `E_k = u^T M u / (2 |Omega|)`
pub fn kinetic_energy(mass: &dyn LinearOperator, u: &[f64], volume: f64) -> f64 {
    let mut mu = vec![0.0; u.len()];
    mass.apply(u, &mut mu);
    dot(u, &mu) / (2.0 * volume)
}

/// `eps = -dE_k/dt` from a uniformly sampled series: central differences
/// inside, one-sided at the ends.
pub fn dissipation_rate(energy: &[f64], dt: f64) -> Vec<f64> {
    let n = energy.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            if i == 0 {
                -(energy[1] - energy[0]) / dt
            } else if i == n - 1 {
                -(energy[n - 1] - energy[n - 2]) / dt
            } else {
                -(energy[i + 1] - energy[i - 1]) / (2.0 * dt)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registered_tableaux_are_valid() {
        for (t, q) in [
            (ButcherTableau::backward_euler(), 1),
            (ButcherTableau::sdirk2(), 2),
            (ButcherTableau::sdirk3(), 3),
        ] {
            assert!(t.is_stiffly_accurate(), "{}", t.name);
            assert_eq!(t.order(1e-12), q, "{}", t.name);
            t.validate(q).unwrap();
        }
        let mut bad = ButcherTableau::sdirk2();
        bad.b[0] += 1e-3;
        assert!(!bad.is_stiffly_accurate());
    }

    #[test]
    fn bdf_low_orders() {
        let s = bdf_coefficients(1).unwrap();
        assert_eq!((s.b, s.a), (vec![1.0, -1.0], vec![1.0]));
        let s = bdf_coefficients(2).unwrap();
        assert_eq!((s.b, s.a), (vec![1.5, -2.0, 0.5], vec![2.0, -1.0]));
        assert!(matches!(bdf_coefficients(4), Err(Error::Unsupported(_))));
    }

    #[test]
    fn dissipation_of_linear_decay() {
        let e: Vec<f64> = (0..5).map(|i| 1.0 - 0.1 * i as f64).collect();
        for v in dissipation_rate(&e, 0.5) {
            assert!((v - 0.2).abs() < 1e-14);
        }
    }
}
