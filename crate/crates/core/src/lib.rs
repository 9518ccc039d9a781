//! Matrix-free high-order finite elements on quadrilateral and hexahedral
//! meshes, with low-order-refined preconditioning and Stokes /
//! Navier-Stokes time integrators.

// index loops mirror the tensor notation; `!(x > 0.0)` also rejects NaN
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod basis;
pub mod dense;
pub mod error;
pub mod fespace;
pub mod kernels;
pub mod linop;
pub mod lor;
pub mod mesh;
pub mod mfop;
pub mod rng;
pub mod solvers;
pub mod sparse;
pub mod stokes;
pub mod timeint;
pub mod vector;

pub use app::{ConvergenceTable, RunConfig};
pub use basis::{Basis1D, QuadratureKind, QuadratureRule1D};
pub use dense::DenseMatrix;
pub use error::{Error, Result};
pub use fespace::{FESpace, GridFunction};
pub use linop::LinearOperator;
pub use mesh::{build_lor_mesh, cartesian_mesh, GeometricFactors, LorMesh, Mesh};
pub use mfop::{MatrixFreeOperator, OperatorKind};
pub use solvers::{LorVCycle, SolveReport, SolverConfig};
pub use sparse::CsrMatrix;
pub use stokes::{BlockSaddleOperator, StokesSolver};
pub use timeint::{bdf_coefficients, ButcherTableau, ProjectionSolver, UnsteadyStokes};
