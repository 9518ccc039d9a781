//! Sum-factorized tensor contractions. Tensors are stored lexicographically
//! with axis 0 fastest; a 1D matrix `rows x cols` (row-major) maps `cols`
//! points to `rows` points along one axis.

/// Contracts axis `axis` of `x` (with `shape[axis] == cols`) against `m`.
pub fn contract(
    m: &[f64],
    rows: usize,
    cols: usize,
    axis: usize,
    shape: [usize; 3],
    x: &[f64],
    y: &mut [f64],
) {
    debug_assert_eq!(shape[axis], cols);
    let stride: usize = shape[..axis].iter().product();
    let outer: usize = shape[axis + 1..].iter().product();
    if stride == 1 {
        for o in 0..outer {
            let xin = &x[o * cols..(o + 1) * cols];
            let yout = &mut y[o * rows..(o + 1) * rows];
            for (r, yr) in yout.iter_mut().enumerate() {
                let mrow = &m[r * cols..(r + 1) * cols];
                let mut s = 0.0;
                for (a, b) in mrow.iter().zip(xin) {
                    s += a * b;
                }
                *yr = s;
            }
        }
    } else {
        for o in 0..outer {
            let xb = &x[o * cols * stride..(o + 1) * cols * stride];
            let yb = &mut y[o * rows * stride..(o + 1) * rows * stride];
            for r in 0..rows {
                let yr = &mut yb[r * stride..(r + 1) * stride];
                yr.fill(0.0);
                for c in 0..cols {
                    let mv = m[r * cols + c];
                    let xc = &xb[c * stride..(c + 1) * stride];
                    for (yy, xx) in yr.iter_mut().zip(xc) {
                        *yy += mv * xx;
                    }
                }
            }
        }
    }
}

/// Scratch for [`tensor_apply`], sized for the largest tensor touched.
#[derive(Debug, Clone)]
pub struct TensorScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl TensorScratch {
    pub fn new(dim: usize, n_max: usize) -> Self {
        let len = n_max.pow(dim as u32);
        Self {
            a: vec![0.0; len],
            b: vec![0.0; len],
            c: vec![0.0; len],
        }
    }
}

/// `y (+)= (M_{d-1} ⊗ ... ⊗ M_0) x` where `mats[a]` acts on axis `a`.
/// All matrices share the shape `rows x cols`.
#[allow(clippy::too_many_arguments)]
pub fn tensor_apply(
    dim: usize,
    rows: usize,
    cols: usize,
    mats: [&[f64]; 3],
    x: &[f64],
    y: &mut [f64],
    s: &mut TensorScratch,
    accumulate: bool,
) {
    let nout = rows.pow(dim as u32);
    let TensorScratch { a, b, c } = s;
    match dim {
        2 => {
            contract(mats[0], rows, cols, 0, [cols, cols, 1], x, a);
            if accumulate {
                contract(mats[1], rows, cols, 1, [rows, cols, 1], a, c);
                for (yy, cc) in y[..nout].iter_mut().zip(c.iter()) {
                    *yy += cc;
                }
            } else {
                contract(mats[1], rows, cols, 1, [rows, cols, 1], a, y);
            }
        }
        3 => {
            contract(mats[0], rows, cols, 0, [cols, cols, cols], x, a);
            contract(mats[1], rows, cols, 1, [rows, cols, cols], a, b);
            if accumulate {
                contract(mats[2], rows, cols, 2, [rows, rows, cols], b, c);
                for (yy, cc) in y[..nout].iter_mut().zip(c.iter()) {
                    *yy += cc;
                }
            } else {
                contract(mats[2], rows, cols, 2, [rows, rows, cols], b, y);
            }
        }
        _ => unreachable!("dimension must be 2 or 3"),
    }
}

/// The set of 1D tables needed to move between nodal values and
/// quadrature points: `b`, `d` are `nq x n`, `bt`, `dt` their transposes.
#[derive(Debug, Clone, Copy)]
pub struct Tables<'a> {
    pub n: usize,
    pub nq: usize,
    pub b: &'a [f64],
    pub d: &'a [f64],
    pub bt: &'a [f64],
    pub dt: &'a [f64],
}

impl Tables<'_> {
    /// Values at quadrature points.
    pub fn interp(&self, dim: usize, x: &[f64], y: &mut [f64], s: &mut TensorScratch) {
        tensor_apply(dim, self.nq, self.n, [self.b; 3], x, y, s, false);
    }

    /// Reference gradient at quadrature points; component `a` is written to
    /// `g[a * nq^d ..]`.
    pub fn grad(&self, dim: usize, x: &[f64], g: &mut [f64], s: &mut TensorScratch) {
        let nqp = self.nq.pow(dim as u32);
        for a in 0..dim {
            let mut mats = [self.b; 3];
            mats[a] = self.d;
            tensor_apply(
                dim,
                self.nq,
                self.n,
                mats,
                x,
                &mut g[a * nqp..(a + 1) * nqp],
                s,
                false,
            );
        }
    }

    /// `y += B^T v`
    pub fn interp_t(&self, dim: usize, v: &[f64], y: &mut [f64], s: &mut TensorScratch) {
        tensor_apply(dim, self.n, self.nq, [self.bt; 3], v, y, s, true);
    }

    /// `y += sum_a G_a^T f_a`
    pub fn grad_t(&self, dim: usize, f: &[f64], y: &mut [f64], s: &mut TensorScratch) {
        let nqp = self.nq.pow(dim as u32);
        for a in 0..dim {
            let mut mats = [self.bt; 3];
            mats[a] = self.dt;
            tensor_apply(
                dim,
                self.n,
                self.nq,
                mats,
                &f[a * nqp..(a + 1) * nqp],
                y,
                s,
                true,
            );
        }
    }
}
