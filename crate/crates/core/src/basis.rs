//! One-dimensional reference machinery: Gauss-Lobatto and Gauss-Legendre
//! rules, and the quadrature-point evaluation (`B`) and differentiation (`D`)
//! matrices consumed by every tensor-product kernel.

use crate::dense::DenseMatrix;
use crate::error::{invalid, Result};
use crate::kernels::Tables;

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureKind {
    GaussLegendre,
    GaussLobatto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule1D {
    pub kind: QuadratureKind,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule1D {
    pub fn new(kind: QuadratureKind, n: usize) -> Result<Self> {
        let (points, weights) = match kind {
            QuadratureKind::GaussLegendre => gauss_legendre_rule(n)?,
            QuadratureKind::GaussLobatto => gauss_lobatto_nodes(n)?,
        };
        Ok(Self {
            kind,
            points,
            weights,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Legendre polynomial `P_n(x)` together with `P_{n-1}(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64, f64) {
    if n == 0 {
        return (1.0, 0.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // P_n'(±1) = (±1)^{n-1} n(n+1)/2
        let s = if x > 0.0 || n % 2 == 1 { 1.0 } else { -1.0 };
        s * nf * (nf + 1.0) / 2.0
    } else {
        nf * (p0 - x * p1) / (1.0 - x * x)
    };
    (p1, p0, dp)
}

/// The `n` Gauss-Lobatto points and weights on `[-1, 1]`.
///
/// Interior points are the roots of `(1 - x^2) P'_{n-1}(x)`, found by Newton
/// iteration from Chebyshev-Gauss-Lobatto initial guesses.
pub fn gauss_lobatto_nodes(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 2 {
        return invalid(format!("Gauss-Lobatto rule needs n >= 2, got {n}"));
    }
    let deg = n - 1;
    let degf = deg as f64;
    let mut x = vec![0.0; n];
    x[0] = -1.0;
    x[n - 1] = 1.0;
    // roots are symmetric: solve for the left half and mirror
    for i in 1..n - 1 {
        if i > (n - 1) / 2 {
            break;
        }
        let mut xi = -(std::f64::consts::PI * i as f64 / degf).cos();
        for _ in 0..NEWTON_MAX_ITERS {
            // q(x) = P'_deg(x); Newton on q with q'(x) from the Legendre ODE
            let (p, _, dp) = legendre(deg, xi);
            let ddp = (2.0 * xi * dp - degf * (degf + 1.0) * p) / (1.0 - xi * xi);
            let step = dp / ddp;
            xi -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        x[i] = xi;
        x[n - 1 - i] = -xi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    let w = x
        .iter()
        .map(|&xi| {
            let (p, _, _) = legendre(deg, xi);
            2.0 / (degf * (degf + 1.0) * p * p)
        })
        .collect();
    Ok((x, w))
}

/// The `n`-point Gauss-Legendre rule on `[-1, 1]`, exact through degree `2n - 1`.
pub fn gauss_legendre_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 1 {
        return invalid("Gauss-Legendre rule needs n >= 1");
    }
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut xi = -(std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..NEWTON_MAX_ITERS {
            let (p, _, dp) = legendre(n, xi);
            let step = p / dp;
            xi -= step;
            if step.abs() < NEWTON_TOL {
                break;
            }
        }
        let (_, _, dp) = legendre(n, xi);
        let wi = 2.0 / ((1.0 - xi * xi) * dp * dp);
        x[i] = xi;
        x[n - 1 - i] = -xi;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
        let (_, _, dp) = legendre(n, 0.0);
        w[n / 2] = 2.0 / (dp * dp);
    }
    Ok((x, w))
}

fn barycentric_weights(nodes: &[f64]) -> Result<Vec<f64>> {
    let n = nodes.len();
    let mut lam = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                let diff = nodes[j] - nodes[k];
                if diff == 0.0 {
                    return invalid(format!("duplicate interpolation node {}", nodes[j]));
                }
                lam[j] /= diff;
            }
        }
    }
    Ok(lam)
}

/// Nodal differentiation matrix `D_nodal[i][j] = phi_j'(x_i)`.
pub fn nodal_differentiation_matrix(nodes: &[f64]) -> Result<DenseMatrix> {
    let n = nodes.len();
    let lam = barycentric_weights(nodes)?;
    let mut d = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (lam[j] / lam[i]) / (nodes[i] - nodes[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    Ok(d)
}

/// Lagrange basis values `phi_j(x)` at a single point (barycentric form).
pub fn lagrange_values(nodes: &[f64], lam: &[f64], x: f64, out: &mut [f64]) {
    if let Some(k) = nodes.iter().position(|&xn| xn == x) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[k] = 1.0;
        return;
    }
    let mut s = 0.0;
    for j in 0..nodes.len() {
        let t = lam[j] / (x - nodes[j]);
        out[j] = t;
        s += t;
    }
    for v in out.iter_mut() {
        *v /= s;
    }
}

/// Evaluation (`B[i][j] = phi_j(xi_i)`) and differentiation
/// (`D[i][j] = phi_j'(xi_i)`) matrices of the Lagrange basis on `nodes`
/// at `points`.
pub fn build_eval_matrices(nodes: &[f64], points: &[f64]) -> Result<(DenseMatrix, DenseMatrix)> {
    let lam = barycentric_weights(nodes)?;
    let n = nodes.len();
    let mut b = DenseMatrix::zeros(points.len(), n);
    let mut row = vec![0.0; n];
    for (i, &x) in points.iter().enumerate() {
        lagrange_values(nodes, &lam, x, &mut row);
        for j in 0..n {
            b[(i, j)] = row[j];
        }
    }
    let dn = nodal_differentiation_matrix(nodes)?;
    let d = b.matmul(&dn)?;
    Ok((b, d))
}

/// Gauss-Lobatto nodal basis of degree `p` together with its quadrature
/// tables.
#[derive(Debug, Clone)]
pub struct Basis1D {
    degree: usize,
    nodes: Vec<f64>,
    quad: QuadratureRule1D,
    b: DenseMatrix,
    d: DenseMatrix,
    bt: DenseMatrix,
    dt: DenseMatrix,
}

impl Basis1D {
    pub fn new(degree: usize, quad: QuadratureRule1D) -> Result<Self> {
        if degree < 1 {
            return invalid("basis degree must be >= 1");
        }
        let (nodes, _) = gauss_lobatto_nodes(degree + 1)?;
        let (b, d) = build_eval_matrices(&nodes, &quad.points)?;
        Ok(Self {
            degree,
            nodes,
            bt: b.transpose(),
            dt: d.transpose(),
            quad,
            b,
            d,
        })
    }

    /// Degree-`p` basis with the default Gauss-Legendre rule of `p + 2` points.
    pub fn with_default_quadrature(degree: usize) -> Result<Self> {
        let quad = QuadratureRule1D::new(QuadratureKind::GaussLegendre, degree + 2)?;
        Self::new(degree, quad)
    }

    /// Degree-`p` basis collocated with its own Gauss-Lobatto nodes (`B = I`).
    pub fn collocated(degree: usize) -> Result<Self> {
        let quad = QuadratureRule1D::new(QuadratureKind::GaussLobatto, degree + 1)?;
        Self::new(degree, quad)
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.degree + 1
    }

    #[inline]
    pub fn num_qpts(&self) -> usize {
        self.quad.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn quadrature(&self) -> &QuadratureRule1D {
        &self.quad
    }

    pub fn b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn d(&self) -> &DenseMatrix {
        &self.d
    }

    pub fn bt(&self) -> &DenseMatrix {
        &self.bt
    }

    pub fn dt(&self) -> &DenseMatrix {
        &self.dt
    }

    pub fn tables(&self) -> Tables<'_> {
        Tables {
            n: self.num_nodes(),
            nq: self.num_qpts(),
            b: self.b.as_slice(),
            d: self.d.as_slice(),
            bt: self.bt.as_slice(),
            dt: self.dt.as_slice(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_integral(k: usize) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            2.0 / (k as f64 + 1.0)
        }
    }

    fn check_exactness(points: &[f64], weights: &[f64], max_deg: usize, tol: f64) {
        for k in 0..=max_deg {
            let q: f64 = points
                .iter()
                .zip(weights)
                .map(|(x, w)| w * x.powi(k as i32))
                .sum();
            assert!(
                (q - monomial_integral(k)).abs() < tol,
                "degree {k}: {q} vs {}",
                monomial_integral(k)
            );
        }
    }

    #[test]
    fn lobatto_small_rules() {
        let (x, w) = gauss_lobatto_nodes(2).unwrap();
        assert_eq!(x, vec![-1.0, 1.0]);
        assert!((w[0] - 1.0).abs() < 1e-15 && (w[1] - 1.0).abs() < 1e-15);

        let (x, w) = gauss_lobatto_nodes(3).unwrap();
        assert_eq!(x, vec![-1.0, 0.0, 1.0]);
        for (wi, e) in w.iter().zip([1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0]) {
            assert!((wi - e).abs() < 1e-15);
        }

        let (x, w) = gauss_lobatto_nodes(4).unwrap();
        check_exactness(&x, &w, 5, 1e-14);
        // interior nodes of GL(4) are +-1/sqrt(5)
        assert!((x[2] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn lobatto_invalid() {
        assert!(gauss_lobatto_nodes(1).is_err());
        assert!(gauss_legendre_rule(0).is_err());
    }

    #[test]
    fn legendre_small_rules() {
        let (x, w) = gauss_legendre_rule(1).unwrap();
        assert_eq!(x, vec![0.0]);
        assert!((w[0] - 2.0).abs() < 1e-15);
        let (x, w) = gauss_legendre_rule(2).unwrap();
        assert!((x[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-15);
        let (x, w) = gauss_legendre_rule(3).unwrap();
        check_exactness(&x, &w, 5, 1e-14);
    }

    #[test]
    fn rules_exact_to_their_degree() {
        for n in 1..=24 {
            let (x, w) = gauss_legendre_rule(n).unwrap();
            check_exactness(&x, &w, 2 * n - 1, 1e-13);
        }
        for n in 2..=24 {
            let (x, w) = gauss_lobatto_nodes(n).unwrap();
            check_exactness(&x, &w, 2 * n - 3, 1e-13);
            assert!(x.windows(2).all(|p| p[0] < p[1]));
            for i in 0..n {
                assert_eq!(x[i], -x[n - 1 - i]);
            }
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn collocated_b_is_identity() {
        for p in 1..=12 {
            let basis = Basis1D::collocated(p).unwrap();
            assert_eq!(basis.b(), &DenseMatrix::identity(p + 1));
        }
    }

    #[test]
    fn duplicate_nodes_rejected() {
        assert!(build_eval_matrices(&[0.0, 0.5, 0.5], &[0.1]).is_err());
    }

    #[test]
    fn eval_matrices_reproduce_polynomials() {
        let quad = QuadratureRule1D::new(QuadratureKind::GaussLegendre, 5).unwrap();
        let basis = Basis1D::new(3, quad).unwrap();
        let nq = basis.num_qpts();
        for i in 0..nq {
            let rb: f64 = basis.b().row(i).iter().sum();
            let rd: f64 = basis.d().row(i).iter().sum();
            assert!((rb - 1.0).abs() < 1e-14);
            assert!(rd.abs() < 1e-12);
        }
        let samples: Vec<f64> = basis.nodes().iter().map(|x| x * x).collect();
        let mut vals = vec![0.0; nq];
        basis.b().matvec(&samples, &mut vals);
        let mut ders = vec![0.0; nq];
        basis.d().matvec(&samples, &mut ders);
        for (i, &xq) in basis.quadrature().points.iter().enumerate() {
            assert!((vals[i] - xq * xq).abs() < 1e-13);
            assert!((ders[i] - 2.0 * xq).abs() < 1e-12);
        }
    }
}
