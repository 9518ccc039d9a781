use std::sync::Arc;

use flowbench_core::fespace::FESpace;
use flowbench_core::linop::LinearOperator;
use flowbench_core::mesh::{cartesian_mesh, Mesh};
use flowbench_core::mfop::{assemble_full, MatrixFreeOperator, OperatorKind};
use flowbench_core::rng::random_vector;
use flowbench_core::vector::{dot, norm};
use proptest::prelude::*;

fn mesh(d: usize, n: usize, perturb: bool) -> Arc<Mesh> {
    let mut m = cartesian_mesh(d, &vec![(0.0, 1.0); d], &vec![n; d], &vec![false; d]).unwrap();
    if perturb {
        m.perturb_interior(0.15, 11).unwrap();
    }
    Arc::new(m)
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(b).max(1e-300)
}

fn check(kind: OperatorKind, vin: &Arc<FESpace>, vout: &Arc<FESpace>, seed: u64) -> f64 {
    let op = MatrixFreeOperator::new(kind, vin.clone(), vout.clone(), 0.7).unwrap();
    let asm = assemble_full(kind, vin, vout, 0.7, usize::MAX).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let x = random_vector(vin.ndofs(), seed + k);
        let mut y1 = vec![0.0; vout.ndofs()];
        let mut y2 = vec![0.0; vout.ndofs()];
        op.apply(&x, &mut y1);
        asm.apply(&x, &mut y2);
        worst = worst.max(rel_diff(&y1, &y2));
    }
    worst
}

#[test]
fn matrix_free_matches_assembled_2d() {
    for perturb in [false, true] {
        let m = mesh(2, 3, perturb);
        for p in [2, 3, 5] {
            let s = Arc::new(FESpace::scalar(m.clone(), p).unwrap());
            let v = Arc::new(FESpace::vector(m.clone(), p).unwrap());
            let q = Arc::new(FESpace::scalar(m.clone(), p - 1).unwrap());
            for kind in [
                OperatorKind::Mass,
                OperatorKind::Stiffness,
                OperatorKind::Helmholtz(3.0),
            ] {
                assert!(check(kind, &s, &s, 1) < 1e-12, "{kind:?} p={p}");
                assert!(check(kind, &v, &v, 2) < 1e-12, "vector {kind:?} p={p}");
            }
            assert!(check(OperatorKind::Gradient, &q, &v, 3) < 1e-12);
            assert!(check(OperatorKind::Divergence, &v, &q, 4) < 1e-12);
        }
    }
}

#[test]
fn matrix_free_matches_assembled_3d() {
    let m = mesh(3, 2, true);
    for p in [2, 3] {
        let s = Arc::new(FESpace::scalar(m.clone(), p).unwrap());
        let v = Arc::new(FESpace::vector(m.clone(), p).unwrap());
        let q = Arc::new(FESpace::scalar(m.clone(), p - 1).unwrap());
        for kind in [
            OperatorKind::Mass,
            OperatorKind::Stiffness,
            OperatorKind::Helmholtz(0.5),
        ] {
            assert!(check(kind, &s, &s, 5) < 1e-12, "{kind:?} p={p}");
        }
        assert!(check(OperatorKind::Gradient, &q, &v, 6) < 1e-12);
        assert!(check(OperatorKind::Divergence, &v, &q, 7) < 1e-12);
    }
}

#[test]
fn transpose_applies_match_assembled_transpose() {
    let m = mesh(2, 2, true);
    let v = Arc::new(FESpace::vector(m.clone(), 3).unwrap());
    let q = Arc::new(FESpace::scalar(m, 2).unwrap());
    for (kind, a, b) in [
        (OperatorKind::Gradient, &q, &v),
        (OperatorKind::Divergence, &v, &q),
    ] {
        let op = MatrixFreeOperator::new(kind, a.clone(), b.clone(), 1.0).unwrap();
        let at = assemble_full(kind, a, b, 1.0, usize::MAX)
            .unwrap()
            .transpose();
        let x = random_vector(b.ndofs(), 9);
        let mut y1 = vec![0.0; a.ndofs()];
        let mut y2 = vec![0.0; a.ndofs()];
        op.apply_transpose(&x, &mut y1);
        at.apply(&x, &mut y2);
        assert!(rel_diff(&y1, &y2) < 1e-12);
    }
}

#[test]
fn periodic_gradient_divergence_adjointness() {
    let pi = std::f64::consts::PI;
    for d in [2, 3] {
        let mut m =
            cartesian_mesh(d, &vec![(0.0, 2.0 * pi); d], &vec![3; d], &vec![true; d]).unwrap();
        m.perturb_interior(0.1, 5).unwrap();
        let m = Arc::new(m);
        let v = Arc::new(FESpace::vector(m.clone(), 3).unwrap());
        let q = Arc::new(FESpace::scalar(m, 2).unwrap());
        let g = MatrixFreeOperator::new(OperatorKind::Gradient, q.clone(), v.clone(), 1.0).unwrap();
        let dv =
            MatrixFreeOperator::new(OperatorKind::Divergence, v.clone(), q.clone(), 1.0).unwrap();
        let qq = random_vector(q.ndofs(), 1);
        let vv = random_vector(v.ndofs(), 2);
        let mut gq = vec![0.0; v.ndofs()];
        let mut dvv = vec![0.0; q.ndofs()];
        g.apply(&qq, &mut gq);
        dv.apply(&vv, &mut dvv);
        let lhs = dot(&gq, &vv);
        let rhs = -dot(&qq, &dvv);
        assert!(
            (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
            "d={d}: {lhs} vs {rhs}"
        );
        // gradient of a constant vanishes
        let one = vec![1.0; q.ndofs()];
        g.apply(&one, &mut gq);
        assert!(norm(&gq) < 1e-12);
    }
}

#[test]
fn curl_curl_null_space_and_rigid_rotation() {
    let m = mesh(2, 3, true);
    let v = Arc::new(FESpace::vector(m.clone(), 4).unwrap());
    let nu = 0.3;
    let op = MatrixFreeOperator::on(OperatorKind::CurlCurl, v.clone(), nu).unwrap();
    let mut y = vec![0.0; v.ndofs()];
    // gradient of phi = x^2 y + y^3 / 3 is exactly representable at p = 4
    let grad = v.project_function(|x, o| {
        o[0] = 2.0 * x[0] * x[1];
        o[1] = x[0] * x[0] + x[1] * x[1];
    });
    op.apply_rotational_viscous(&grad.data, &mut y).unwrap();
    assert!(norm(&y) < 1e-11, "{}", norm(&y));
    let c = v.project_function(|_, o| o.copy_from_slice(&[1.0, -2.0]));
    op.apply_rotational_viscous(&c.data, &mut y).unwrap();
    assert!(norm(&y) < 1e-11);
    // u = (-y, x) has curl 2, so the output is (2 nu, curl v), tested against
    // the components of v through the transposed curl: -(2nu) dv1/dy + (2nu) dv2/dx
    let rot = v.project_function(|x, o| {
        o[0] = -x[1];
        o[1] = x[0];
    });
    op.apply_rotational_viscous(&rot.data, &mut y).unwrap();
    let test = v.project_function(|x, o| {
        o[0] = x[0] * x[1] * x[1];
        o[1] = x[0].sin() + x[1];
    });
    // (2 nu, curl v) = 2 nu int (dv2/dx - dv1/dy) = 2 nu int (cos x - 2 x y)
    // on the perturbed unit square: compare with the quadrature oracle below
    let oracle = curl_oracle(&v, &test.data, 2.0 * nu);
    assert!((dot(&y, &test.data) - oracle).abs() < 1e-11);
}

/// `c * int (dv2/dx - dv1/dy)` by a direct quadrature loop over elements.
fn curl_oracle(v: &Arc<FESpace>, coeffs: &[f64], c: f64) -> f64 {
    use flowbench_core::basis::{QuadratureKind, QuadratureRule1D};
    use flowbench_core::mesh::GeometricFactors;
    let rule = QuadratureRule1D::new(QuadratureKind::GaussLegendre, 8).unwrap();
    let gf = GeometricFactors::compute(v.mesh(), &rule).unwrap();
    let basis = v.basis(&rule).unwrap();
    let n = basis.num_nodes();
    let nq = rule.len();
    let ns = v.nscalar();
    let mut total = 0.0;
    for e in 0..v.num_elements() {
        let dofs = v.element_dofs(e);
        for q in 0..nq * nq {
            let (qa, qb) = (q % nq, q / nq);
            let inv = gf.inverse(e, q);
            // reference gradients of both components
            let mut g = [[0.0; 2]; 2];
            for (li, &gi) in dofs.iter().enumerate() {
                let (ia, ib) = (li % n, li / n);
                let d0 = basis.d()[(qa, ia)] * basis.b()[(qb, ib)];
                let d1 = basis.b()[(qa, ia)] * basis.d()[(qb, ib)];
                for (comp, gc) in g.iter_mut().enumerate() {
                    let val = coeffs[comp * ns + gi];
                    gc[0] += val * d0;
                    gc[1] += val * d1;
                }
            }
            // physical derivative d/dx_b = sum_a inv[a][b] d/dxi_a
            let phys = |comp: usize, b: usize| g[comp][0] * inv[b] + g[comp][1] * inv[2 + b];
            let curl = phys(1, 0) - phys(0, 1);
            total += gf.weights()[q] * gf.det(e, q) * c * curl;
        }
    }
    total
}

#[test]
fn convection_of_linear_field_matches_quadrature() {
    let m = mesh(2, 2, false);
    let v = Arc::new(FESpace::vector(m.clone(), 3).unwrap());
    let s = Arc::new(FESpace::scalar(m, 3).unwrap());
    let n = MatrixFreeOperator::on(OperatorKind::Convection, v.clone(), 1.0).unwrap();
    let u = v.project_function(|x, o| {
        o[0] = x[0];
        o[1] = 0.0;
    });
    let mut y = vec![0.0; v.ndofs()];
    n.apply_convection(&u.data, &mut y).unwrap();
    // (u . grad) u = (x, 0): first component equals the mass matrix times x
    let mass = MatrixFreeOperator::on(OperatorKind::Mass, s.clone(), 1.0).unwrap();
    let x = s.project_scalar(|x| x[0]);
    let mut mx = vec![0.0; s.ndofs()];
    mass.apply(&x.data, &mut mx);
    let ns = s.ndofs();
    assert!(rel_diff(&y[..ns], &mx) < 1e-12);
    assert!(norm(&y[ns..]) < 1e-12);
}

#[test]
fn constrained_rows_are_identity() {
    let m = mesh(2, 2, false);
    let s = Arc::new(FESpace::scalar(m, 3).unwrap());
    let bdr = s.all_boundary_dofs();
    let mut k = MatrixFreeOperator::on(OperatorKind::Stiffness, s.clone(), 1.0).unwrap();
    k.set_constrained(&bdr).unwrap();
    let mut asm = assemble_full(OperatorKind::Stiffness, &s, &s, 1.0, usize::MAX).unwrap();
    asm.constrain_symmetric(&bdr);
    let x = random_vector(s.ndofs(), 4);
    let (mut y1, mut y2) = (vec![0.0; s.ndofs()], vec![0.0; s.ndofs()]);
    k.apply(&x, &mut y1);
    asm.apply(&x, &mut y2);
    assert!(rel_diff(&y1, &y2) < 1e-13);
    for &b in &bdr {
        assert_eq!(y1[b], x[b]);
    }
}

#[test]
fn smallest_dirichlet_eigenvalue_approximates_two_pi_squared() {
    // generalized problem K x = lambda M x on the unconstrained subspace,
    // solved densely as an independent oracle
    let m = mesh(2, 8, false);
    let s = Arc::new(FESpace::scalar(m, 3).unwrap());
    let k = assemble_full(OperatorKind::Stiffness, &s, &s, 1.0, usize::MAX).unwrap();
    let mm = assemble_full(OperatorKind::Mass, &s, &s, 1.0, usize::MAX).unwrap();
    let bdr = s.all_boundary_dofs();
    let free: Vec<usize> = (0..s.ndofs())
        .filter(|i| bdr.binary_search(i).is_err())
        .collect();
    let nf = free.len();
    let kd = nalgebra::DMatrix::from_fn(nf, nf, |i, j| k.get(free[i], free[j]));
    let md = nalgebra::DMatrix::from_fn(nf, nf, |i, j| mm.get(free[i], free[j]));
    let l = md.cholesky().unwrap().l();
    let linv = l.clone().try_inverse().unwrap();
    let a = &linv * kd * linv.transpose();
    let eig = nalgebra::SymmetricEigen::new(a);
    let lam = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let exact = 2.0 * std::f64::consts::PI.powi(2);
    assert!((lam - exact).abs() / exact < 0.01, "{lam}");
}

#[test]
fn helmholtz_is_linear_combination() {
    let m = mesh(3, 2, true);
    let s = Arc::new(FESpace::scalar(m, 2).unwrap());
    let c = 4.5;
    let h = MatrixFreeOperator::on(OperatorKind::Helmholtz(c), s.clone(), 0.9).unwrap();
    let ma = MatrixFreeOperator::on(OperatorKind::Mass, s.clone(), 0.9).unwrap();
    let k = MatrixFreeOperator::on(OperatorKind::Stiffness, s.clone(), 0.9).unwrap();
    let x = random_vector(s.ndofs(), 12);
    let n = s.ndofs();
    let (mut yh, mut ym, mut yk) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    h.apply(&x, &mut yh);
    ma.apply(&x, &mut ym);
    k.apply(&x, &mut yk);
    let comb: Vec<f64> = ym.iter().zip(&yk).map(|(a, b)| c * a + b).collect();
    assert!(rel_diff(&yh, &comb) < 1e-13);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mass_total_is_domain_measure(seed in 0u64..1000, p in 1usize..6) {
        let mut m = cartesian_mesh(2, &[(0.0, 2.0), (-1.0, 0.5)], &[3, 2], &[false; 2]).unwrap();
        m.perturb_interior(0.2, seed).unwrap();
        let s = Arc::new(FESpace::scalar(Arc::new(m), p).unwrap());
        let op = MatrixFreeOperator::on(OperatorKind::Mass, s.clone(), 1.0).unwrap();
        let one = vec![1.0; s.ndofs()];
        let mut y = vec![0.0; s.ndofs()];
        op.apply(&one, &mut y);
        prop_assert!((dot(&one, &y) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_is_symmetric_and_annihilates_constants(seed in 0u64..1000, p in 1usize..5) {
        let mut m = cartesian_mesh(2, &[(0.0, 1.0); 2], &[2, 3], &[false; 2]).unwrap();
        m.perturb_interior(0.2, seed).unwrap();
        let s = Arc::new(FESpace::scalar(Arc::new(m), p).unwrap());
        let op = MatrixFreeOperator::on(OperatorKind::Stiffness, s.clone(), 1.3).unwrap();
        let x = random_vector(s.ndofs(), seed);
        let z = random_vector(s.ndofs(), seed + 1);
        let (mut ax, mut az) = (vec![0.0; s.ndofs()], vec![0.0; s.ndofs()]);
        op.apply(&x, &mut ax);
        op.apply(&z, &mut az);
        prop_assert!((dot(&ax, &z) - dot(&x, &az)).abs() < 1e-11 * norm(&ax) * norm(&z));
        op.apply(&vec![1.0; s.ndofs()], &mut ax);
        prop_assert!(norm(&ax) < 1e-11);
    }
}
