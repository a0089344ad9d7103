//! Finite-difference heterogeneous multiscale method for the wave equation
//! `u_tt = div(A^ε ∇u)` in locally periodic media.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod error;
pub mod expansion;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod homog;
pub mod kernels;
pub mod macro_solver;
pub mod media;
pub mod micro;
pub mod sum;
pub mod upscale;

pub use error::{Error, Result};
pub use homog::{homogenized_tensor, solve_cell, CellSolution, HomogenizedTensor};
pub use kernels::{periodic_average_test, Kernel};
pub use media::{CoefficientField, Mat};
pub use micro::{solve_micro, MicroOptions, MicroProblem, MicroSolution};
pub use upscale::{hmm_flux, upscaling_error, FluxSource, FluxVector};
