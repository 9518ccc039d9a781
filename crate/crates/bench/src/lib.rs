//! Fixtures shared by the operator benchmarks.

use std::sync::Arc;

use flowbench_core::rng::random_vector;
use flowbench_core::{cartesian_mesh, FESpace, Mesh, Result};

/// Unit box with `n` elements per axis.
pub fn unit_box(dim: usize, n: usize) -> Result<Arc<Mesh>> {
    Ok(Arc::new(cartesian_mesh(
        dim,
        &vec![(0.0, 1.0); dim],
        &vec![n; dim],
        &vec![false; dim],
    )?))
}

/// Scalar space of degree `p` on `unit_box(dim, n)` and a seeded input vector.
pub fn scalar_fixture(dim: usize, n: usize, p: usize) -> Result<(Arc<FESpace>, Vec<f64>)> {
    let space = Arc::new(FESpace::scalar(unit_box(dim, n)?, p)?);
    let x = random_vector(space.ndofs(), 7);
    Ok((space, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_sizes() {
        let (s, x) = scalar_fixture(2, 2, 3).unwrap();
        assert_eq!(s.ndofs(), 49);
        assert_eq!(x.len(), 49);
    }
}
