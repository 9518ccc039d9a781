//! Low-order refined (Q1 on the Gauss-Lobatto submesh) sparse systems and
//! a Lanczos estimate of their spectral equivalence with the high-order
//! operators.

use crate::dense::tridiagonal_eigenvalues;
use crate::error::{check_len, invalid, Result};
use crate::linop::LinearOperator;
use crate::mesh::{det, inverse, multilinear_jacobian, LorMesh, Point};
use crate::rng::random_vector;
use crate::sparse::{CsrMatrix, EnvelopeCholesky, TripletBuilder};
use crate::vector::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LorKind {
    Mass,
    Stiffness,
    /// `c M + nu K`
    Helmholtz(f64),
}

/// Assembles the Q1 matrix on the refined mesh with 2-point Gauss
/// quadrature per direction. Rows and columns of `constrained` are replaced
/// by the identity.
pub fn assemble_lor(
    kind: LorKind,
    lor: &LorMesh,
    nu: f64,
    constrained: &[usize],
) -> Result<CsrMatrix> {
    let d = lor.dim();
    let n = lor.num_vertices();
    if let Some(&bad) = constrained.iter().find(|&&c| c >= n) {
        return invalid(format!("constrained index {bad} out of range"));
    }
    let nv = 1usize << d;
    let g = 1.0 / 3f64.sqrt();
    let nqp = 1usize << d;
    // Q1 basis values and reference gradients at the 2^d Gauss points
    let mut phi = vec![0.0; nqp * nv];
    let mut dphi = vec![0.0; nqp * nv * d];
    let mut xis = vec![[0.0; 3]; nqp];
    for q in 0..nqp {
        for a in 0..d {
            xis[q][a] = if (q >> a) & 1 == 1 { g } else { -g };
        }
        for v in 0..nv {
            let mut val = 1.0;
            for a in 0..d {
                let s = if (v >> a) & 1 == 1 { 1.0 } else { -1.0 };
                val *= 0.5 * (1.0 + s * xis[q][a]);
            }
            phi[q * nv + v] = val;
            for b in 0..d {
                let mut dv = 1.0;
                for a in 0..d {
                    let s = if (v >> a) & 1 == 1 { 1.0 } else { -1.0 };
                    dv *= if a == b {
                        0.5 * s
                    } else {
                        0.5 * (1.0 + s * xis[q][a])
                    };
                }
                dphi[(q * nv + v) * d + b] = dv;
            }
        }
    }
    let (cm, ck) = match kind {
        LorKind::Mass => (1.0, 0.0),
        LorKind::Stiffness => (0.0, nu),
        LorKind::Helmholtz(c) => (c, nu),
    };
    let mut tb = TripletBuilder::with_capacity(n, n, lor.num_sub_elements() * nv * nv);
    let mut verts = [0usize; 8];
    let mut pts: [Point; 8] = [[0.0; 3]; 8];
    let mut elem = [[0.0; 8]; 8];
    let mut pg = [[0.0; 3]; 8];
    for e in 0..lor.num_macro_elements() {
        for s in 0..lor.subs_per_macro() {
            lor.sub_element(e, s, &mut verts[..nv], &mut pts[..nv]);
            for row in elem.iter_mut() {
                row.fill(0.0);
            }
            for q in 0..nqp {
                let jac = multilinear_jacobian(d, &pts[..nv], &xis[q]);
                let dj = det(d, &jac);
                if dj <= 0.0 {
                    return Err(crate::error::Error::MeshInversion {
                        element: e * lor.subs_per_macro() + s,
                        point: q,
                        det: dj,
                    });
                }
                let inv = inverse(d, &jac, dj);
                // physical gradients: grad phi = J^{-T} grad_ref phi
                for v in 0..nv {
                    for b in 0..d {
                        let mut s = 0.0;
                        for a in 0..d {
                            s += inv[a][b] * dphi[(q * nv + v) * d + a];
                        }
                        pg[v][b] = s;
                    }
                }
                for i in 0..nv {
                    for j in 0..nv {
                        let mut v = cm * phi[q * nv + i] * phi[q * nv + j];
                        if ck != 0.0 {
                            let mut k = 0.0;
                            for b in 0..d {
                                k += pg[i][b] * pg[j][b];
                            }
                            v += ck * k;
                        }
                        elem[i][j] += dj * v;
                    }
                }
            }
            for i in 0..nv {
                for j in 0..nv {
                    tb.push(verts[i], verts[j], elem[i][j]);
                }
            }
        }
    }
    let mut a = tb.build();
    if !constrained.is_empty() {
        a.constrain_symmetric(constrained);
    }
    Ok(a)
}

/// Extreme generalized eigenvalue estimates of `A x = lambda A_LOR x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub steps: usize,
    /// The Krylov space became invariant before `n_probe` steps.
    pub breakdown: bool,
}

impl SpectralReport {
    pub fn condition(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }
}

/// Lanczos in the `A_LOR` inner product on `A_LOR^{-1} A`, with `A_LOR^{-1}`
/// applied through a sparse Cholesky factorization. Entries in
/// `constrained` are removed from the start vector.
pub fn spectral_equivalence_report(
    a_high: &dyn LinearOperator,
    a_lor: &CsrMatrix,
    constrained: &[usize],
    n_probe: usize,
    seed: u64,
) -> Result<SpectralReport> {
    let n = a_lor.nrows();
    check_len(n, a_high.nrows())?;
    if n_probe == 0 {
        return invalid("n_probe must be >= 1");
    }
    let chol = EnvelopeCholesky::new(a_lor)?;
    let mut v = random_vector(n, seed);
    for &c in constrained {
        v[c] = 0.0;
    }
    let mut bv = vec![0.0; n];
    a_lor.apply(&v, &mut bv);
    let nrm = dot(&v, &bv).sqrt();
    v.iter_mut().for_each(|x| *x /= nrm);
    bv.iter_mut().for_each(|x| *x /= nrm);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut bbasis: Vec<Vec<f64>> = Vec::new();
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut av = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut breakdown = false;
    let steps = n_probe.min(n);
    for j in 0..steps {
        a_high.apply(&v, &mut av);
        let a = dot(&v, &av);
        alpha.push(a);
        chol.solve(&av, &mut w);
        basis.push(v.clone());
        bbasis.push(bv.clone());
        // full reorthogonalization in the A_LOR inner product
        for _ in 0..2 {
            for (u, bu) in basis.iter().zip(&bbasis) {
                let c = dot(&w, bu);
                for (wi, ui) in w.iter_mut().zip(u) {
                    *wi -= c * ui;
                }
            }
        }
        let mut bw = vec![0.0; n];
        a_lor.apply(&w, &mut bw);
        let b = dot(&w, &bw).max(0.0).sqrt();
        if j + 1 == steps {
            break;
        }
        if b <= 1e-12 * a.abs().max(1e-300) {
            breakdown = true;
            break;
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
        bv = bw.iter().map(|x| x / b).collect();
    }
    let ev = tridiagonal_eigenvalues(&alpha, &beta);
    Ok(SpectralReport {
        lambda_min: ev[0],
        lambda_max: *ev.last().unwrap(),
        steps: alpha.len(),
        breakdown,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_lor_mesh, cartesian_mesh};

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let mut m = cartesian_mesh(2, &[(0.0, 1.0); 2], &[3, 2], &[false; 2]).unwrap();
        m.perturb_interior(0.2, 1).unwrap();
        let lor = build_lor_mesh(&m, 5).unwrap();
        let k = assemble_lor(LorKind::Stiffness, &lor, 1.0, &[]).unwrap();
        let mut y = vec![0.0; k.nrows()];
        k.apply(&vec![1.0; k.ncols()], &mut y);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        let ms = assemble_lor(LorKind::Mass, &lor, 1.0, &[]).unwrap();
        assert!((ms.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(k.max_row_nnz() <= 9);
    }

    #[test]
    fn sparsity_bound_3d() {
        let m = cartesian_mesh(3, &[(0.0, 1.0); 3], &[2, 2, 2], &[false; 3]).unwrap();
        let lor = build_lor_mesh(&m, 3).unwrap();
        let k = assemble_lor(LorKind::Helmholtz(2.0), &lor, 1.0, &[]).unwrap();
        assert_eq!(k.max_row_nnz(), 27);
        assert_eq!(k.nrows(), 7usize.pow(3));
    }

    #[test]
    fn constrained_rows_become_identity() {
        let m = cartesian_mesh(2, &[(0.0, 1.0); 2], &[2, 2], &[false; 2]).unwrap();
        let lor = build_lor_mesh(&m, 2).unwrap();
        let k = assemble_lor(LorKind::Stiffness, &lor, 1.0, &[0, 3]).unwrap();
        assert_eq!(k.get(0, 0), 1.0);
        let (c, v) = k.row(3);
        for (&j, &a) in c.iter().zip(v) {
            assert_eq!(a, if j == 3 { 1.0 } else { 0.0 });
        }
        assert_eq!(k.get(4, 3), 0.0);
    }
}
