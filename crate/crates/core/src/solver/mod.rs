//! Damped Gauss-Newton on poses, inverse depths and intrinsics.

mod gauss_newton;
mod normal;
mod sparse;

pub use gauss_newton::{gauss_newton, solve_scoped, IterationRecord, SolveReport, SolverConfig};
pub use normal::{
    back_substitute, schur_eliminate_depth, DepthVar, Layout, NormalEquations, ReducedSystem,
    SolveScope, SolveState, ALPHA_MAX, INV_DEPTH_RANGE, SINGULAR_DEPTH,
};
pub use sparse::{
    cholesky, is_permutation, minimum_degree_ordering, sparse_factor_solve, CholeskyFactor,
    SparseSolution, SymmetricCsc,
};
