use std::sync::Arc;

use flowbench_core::basis::nodal_differentiation_matrix;
use flowbench_core::lor::{assemble_lor, LorKind};
use flowbench_core::mfop::assemble_full;
use flowbench_core::rng::random_vector;
use flowbench_core::solvers::{LorVCycle, MeanDeflation};
use flowbench_core::stokes::{taylor_hood, BlockSaddleOperator};
use flowbench_core::timeint::{bdf_coefficients, ButcherTableau};
use flowbench_core::vector::dot;
use flowbench_core::*;
use proptest::prelude::*;

fn mesh(d: usize, n: usize, periodic: bool, perturb: Option<u64>) -> Arc<Mesh> {
    let mut m = cartesian_mesh(d, &vec![(0.0, 1.0); d], &vec![n; d], &vec![periodic; d]).unwrap();
    if let Some(seed) = perturb {
        m.perturb_interior(0.15, seed).unwrap();
    }
    Arc::new(m)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interpolation_reproduces_polynomials(p in 1usize..12, extra in 0usize..4, lobatto in any::<bool>()) {
        let kind = if lobatto { QuadratureKind::GaussLobatto } else { QuadratureKind::GaussLegendre };
        let rule = QuadratureRule1D::new(kind, p + 1 + extra).unwrap();
        let basis = Basis1D::new(p, rule.clone()).unwrap();
        let b = basis.b();
        for m in 0..=p {
            for (q, &x) in rule.points.iter().enumerate() {
                let v: f64 = basis.nodes().iter().enumerate().map(|(i, &xi)| b[(q, i)] * xi.powi(m as i32)).sum();
                prop_assert!((v - x.powi(m as i32)).abs() < 1e-12);
            }
        }
        // partition of unity
        for q in 0..rule.len() {
            let s: f64 = b.row(q).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        // D = B D_nodal
        let dn = nodal_differentiation_matrix(basis.nodes()).unwrap();
        let bd = b.matmul(&dn).unwrap();
        prop_assert!(max_abs_diff(bd.as_slice(), basis.d().as_slice()) < 1e-11 * (p * p) as f64);
    }

    #[test]
    fn measure_is_consistent(seed in 0u64..1000, d in 2usize..4, nq in 2usize..6) {
        let m = mesh(d, 3, false, Some(seed));
        let rule = QuadratureRule1D::new(QuadratureKind::GaussLegendre, nq).unwrap();
        let gf = GeometricFactors::compute(&m, &rule).unwrap();
        let mut vol = 0.0;
        for e in 0..gf.num_elements() {
            for q in 0..gf.qpts_per_element() {
                vol += gf.weights()[q] * gf.det(e, q);
            }
        }
        prop_assert!((vol - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gather_scatter_adjoint(seed in 0u64..1000, p in 1usize..6, periodic in any::<bool>(), d in 2usize..4) {
        let m = mesh(d, 3, periodic, None);
        let sp = FESpace::vector(m, p).unwrap();
        let v = random_vector(sp.ndofs(), seed);
        let mut acc = vec![0.0; sp.ndofs()];
        let mut local = vec![0.0; sp.nodes_per_element()];
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut w = vec![0.0; sp.ndofs()];
        for c in 0..sp.vdim() {
            for e in 0..sp.num_elements() {
                sp.gather(&v, c, e, &mut local);
                sp.scatter_add(&local, c, e, &mut acc);
                // <scatter(l), v> = <l, gather(v)> for a random local vector
                let l = random_vector(local.len(), seed ^ (e as u64 * 31 + c as u64));
                w.fill(0.0);
                sp.scatter_add(&l, c, e, &mut w);
                lhs += dot(&w, &v);
                rhs += dot(&l, &local);
            }
        }
        let mult = sp.multiplicity();
        let ns = sp.nscalar();
        for i in 0..sp.ndofs() {
            prop_assert!((acc[i] - mult[i % ns] as f64 * v[i]).abs() < 1e-13);
        }
        prop_assert!((lhs - rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn mean_deflation_is_idempotent(seed in 0u64..1000, p in 1usize..5) {
        let sp = Arc::new(FESpace::scalar(mesh(2, 3, true, None), p).unwrap());
        let mass = MatrixFreeOperator::on(OperatorKind::Mass, sp.clone(), 1.0).unwrap();
        let q = MeanDeflation::from_mass(&mass).unwrap();
        let mut v = random_vector(sp.ndofs(), seed);
        q.apply(&mut v);
        prop_assert!(q.mean(&v).abs() < 1e-13);
        let once = v.clone();
        q.apply(&mut v);
        prop_assert!(max_abs_diff(&once, &v) < 1e-14);
        let mut r = random_vector(sp.ndofs(), seed + 1);
        q.apply_transpose(&mut r);
        let once = r.clone();
        q.apply_transpose(&mut r);
        prop_assert!(max_abs_diff(&once, &r) < 1e-14);
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn vcycle_is_linear(seed in 0u64..1000, p in 1usize..7, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = mesh(2, 3, false, Some(seed));
        let sp = FESpace::scalar(m.clone(), p).unwrap();
        let bd = sp.all_boundary_dofs();
        let lor = build_lor_mesh(&m, p).unwrap();
        let v = LorVCycle::multilevel(LorKind::Helmholtz(5.0), 1.0, &lor, &bd).unwrap();
        let n = sp.ndofs();
        let x = random_vector(n, seed);
        let y = random_vector(n, seed + 7);
        let xy: Vec<f64> = x.iter().zip(&y).map(|(x, y)| a * x + b * y).collect();
        let (mut zx, mut zy, mut zxy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        v.apply(&x, &mut zx);
        v.apply(&y, &mut zy);
        v.apply(&xy, &mut zxy);
        let comb: Vec<f64> = zx.iter().zip(&zy).map(|(x, y)| a * x + b * y).collect();
        let scale = comb.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(max_abs_diff(&comb, &zxy) <= 1e-12 * scale);
    }

    #[test]
    fn helmholtz_is_mass_plus_stiffness(seed in 0u64..1000, c in 0.0f64..100.0, p in 1usize..6) {
        let sp = Arc::new(FESpace::scalar(mesh(2, 2, false, Some(seed)), p).unwrap());
        let h = MatrixFreeOperator::on(OperatorKind::Helmholtz(c), sp.clone(), 0.7).unwrap();
        let m = MatrixFreeOperator::on(OperatorKind::Mass, sp.clone(), 1.0).unwrap();
        let k = MatrixFreeOperator::on(OperatorKind::Stiffness, sp.clone(), 0.7).unwrap();
        let x = random_vector(sp.ndofs(), seed);
        let n = x.len();
        let (mut yh, mut ym, mut yk) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        h.apply(&x, &mut yh);
        m.apply(&x, &mut ym);
        k.apply(&x, &mut yk);
        let comb: Vec<f64> = ym.iter().zip(&yk).map(|(m, k)| c * m + k).collect();
        let scale = comb.iter().map(|v| v.abs()).fold(1.0, f64::max);
        prop_assert!(max_abs_diff(&comb, &yh) <= 1e-13 * scale);
    }
}

#[test]
fn lor_vertices_are_the_nodal_coordinates() {
    for (d, p) in [(2, 4), (3, 3)] {
        let m = mesh(d, 2, false, Some(3));
        let sp = FESpace::scalar(m.clone(), p).unwrap();
        let nodes = sp.node_coords();
        let lor = build_lor_mesh(&m, p).unwrap();
        let nv = 1 << d;
        let mut verts = vec![0; nv];
        let mut pts = vec![[0.0; 3]; nv];
        for e in 0..lor.num_macro_elements() {
            for s in 0..lor.subs_per_macro() {
                lor.sub_element(e, s, &mut verts, &mut pts);
                for i in 0..nv {
                    assert_eq!(pts[i], nodes[verts[i]], "d={d} e={e} s={s}");
                }
            }
        }
    }
}

#[test]
fn lor_storage_is_linear_in_dofs() {
    let m = mesh(2, 4, false, None);
    let mut dofs = Vec::new();
    let mut nnz = Vec::new();
    for p in [3, 6, 12] {
        let lor = build_lor_mesh(&m, p).unwrap();
        let a = assemble_lor(LorKind::Stiffness, &lor, 1.0, &[]).unwrap();
        assert!(a.max_row_nnz() <= 9);
        dofs.push(lor.num_vertices() as f64);
        nnz.push(a.nnz() as f64);
    }
    let slope = flowbench_core::app::loglog_slope(&dofs, &nnz);
    assert!((0.8..=1.2).contains(&slope), "slope {slope}");
}

#[test]
fn equal_order_and_taylor_hood_pairs() {
    let m = mesh(2, 3, false, None);
    for p in 2..6 {
        let (v, q) = taylor_hood(m.clone(), p).unwrap();
        assert_eq!(
            (v.degree(), q.degree(), v.vdim(), q.vdim()),
            (p, p - 1, 2, 1)
        );
        let eq = FESpace::scalar(m.clone(), p).unwrap();
        assert_eq!(eq.nscalar(), v.nscalar());
    }
    assert!(taylor_hood(m, 1).is_err());
}

#[test]
fn bdf_and_extrapolation_are_exact_on_monomials() {
    let dt = 0.37;
    let t1 = 1.3;
    for k in 1..=3 {
        let s = bdf_coefficients(k).unwrap();
        let times: Vec<f64> = (0..=k).map(|j| t1 - j as f64 * dt).collect();
        for m in 0..=k as i32 {
            // sum_j b_j q(t^{n+1-j}) / dt = q'(t^{n+1}) for deg q <= k
            let lhs: f64 = (0..=k).map(|j| s.b[j] * times[j].powi(m)).sum::<f64>() / dt;
            let rhs = if m == 0 {
                0.0
            } else {
                m as f64 * t1.powi(m - 1)
            };
            assert!((lhs - rhs).abs() < 1e-11, "k={k} m={m}: {lhs} vs {rhs}");
        }
        for m in 0..k as i32 {
            // sum_{j>=1} a_j q(t^{n+1-j}) = q(t^{n+1}) for deg q <= k-1
            let lhs: f64 = (1..=k).map(|j| s.a[j - 1] * times[j].powi(m)).sum();
            assert!((lhs - t1.powi(m)).abs() < 1e-12, "k={k} m={m}");
        }
    }
}

#[test]
fn registered_tableaux_are_stiffly_accurate() {
    for t in [
        ButcherTableau::backward_euler(),
        ButcherTableau::sdirk2(),
        ButcherTableau::sdirk3(),
    ] {
        let s = t.stages();
        let worst = (0..s)
            .map(|i| (t.a[s - 1][i] - t.b[i]).abs())
            .fold(0.0, f64::max);
        assert_eq!(worst, 0.0, "{}", t.name);
        assert_eq!(t.c[s - 1], 1.0, "{}", t.name);
    }
}

#[test]
fn block_operator_matches_assembled_blocks() {
    // periodic p=2 Taylor-Hood; the block form uses -D in the second row
    let m = mesh(2, 3, true, None);
    let (vel, pres) = taylor_hood(m, 2).unwrap();
    let op = BlockSaddleOperator::new(vel.clone(), pres.clone(), 0.3, 2.0, &[]).unwrap();
    let cap = 1 << 30;
    let a = assemble_full(OperatorKind::Helmholtz(2.0), &vel, &vel, 0.3, cap).unwrap();
    let g = assemble_full(OperatorKind::Gradient, &pres, &vel, 1.0, cap).unwrap();
    let dm = assemble_full(OperatorKind::Divergence, &vel, &pres, 1.0, cap).unwrap();
    let (nu, np) = (vel.ndofs(), pres.ndofs());
    let x = random_vector(nu + np, 4);
    let mut y = vec![0.0; nu + np];
    op.apply(&x, &mut y);
    let mut au = vec![0.0; nu];
    let mut gp = vec![0.0; nu];
    let mut du = vec![0.0; np];
    a.apply(&x[..nu], &mut au);
    g.apply(&x[nu..], &mut gp);
    dm.apply(&x[..nu], &mut du);
    let mut want: Vec<f64> = au.iter().zip(&gp).map(|(a, b)| a + b).collect();
    want.extend(du.iter().map(|v| -v));
    let scale = want.iter().map(|v| v.abs()).fold(1.0, f64::max);
    assert!(max_abs_diff(&want, &y) < 1e-12 * scale);
    // G^T = -D on a periodic mesh
    let gt = g.transpose().to_dense();
    let dd = dm.to_dense();
    let worst = gt
        .as_slice()
        .iter()
        .zip(dd.as_slice())
        .map(|(a, b)| (a + b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12);
}
