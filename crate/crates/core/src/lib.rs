//! DC microgrid power flow with a priori convergence certificates.
//!
//! The crate solves the nonlinear power flow of dc microgrids with
//! constant-power terminals, in master-slave operation and in island
//! operation with droop controls, using either the full Newton method or an
//! approximated Newton method with a constant Jacobian. Before iterating it
//! can certify convergence from the flat start: Kantorovich-type conditions
//! for Newton, contraction-mapping conditions for the approximated method, a
//! radius for the ball holding the unique solution and the maximum load for
//! which quadratic convergence is guaranteed.

pub mod certifier;
pub mod cli;
pub mod netmodel;
pub mod numerics;
pub mod powerflow;

pub use certifier::{Certificate, ConstantSet, Method, Verdict};
pub use netmodel::{parse_case, GridCase, Mode, ReducedNetwork};
pub use numerics::{DenseMatrix, DenseVector};
pub use powerflow::{ResidualModel, SolveResult, SolveTrace, SolverConfig, Variant};
