//! Rank-structured tensor representations of radial interaction kernels and
//! collective electrostatic potentials on 3D (and d-dimensional) Cartesian grids.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] and [`kernels`]: sinc-quadrature Gaussian sums for the Newton,
//!   Yukawa and Slater kernels, projected onto piecewise-constant cell bases.
//! * [`tensor`]: canonical and Tucker containers, RHOSVD and rank reduction.
//! * [`lattice`]: assembled summation over rectangular lattices and the
//!   linear-cost lattice energy.
//! * [`rs`]: range-separated (RS) potentials of general particle systems,
//!   energies, gradients and forces.
//! * [`dirac`]: Kronecker-form Laplacian, discretized Dirac delta and the
//!   regularized right-hand side for Poisson-type problems.
//! * [`io`]: the `RSTF1` binary container, CSV emitters and particle files.
//!
//! Grid convention: an `n`-point axis covers `[-b, b]` with `n` cells of width
//! `h = 2b/n`; values live at cell centres and the origin is a cell vertex.
//! Particles and lattice nodes sit on vertices. Tensor entries are Galerkin
//! integrals (so they carry a factor `h³`); point values at a vertex are the
//! average of the adjacent cells divided by `h` per mode.

pub mod dirac;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod lattice;
pub mod rs;
pub mod tensor;

pub use error::{Error, ErrorKind, Result};
pub use grid::GridSpec;
pub use kernels::{KernelSpec, QuadratureRule, ReferenceKernel};
pub use tensor::{CanonicalTensor, DenseTensor, TuckerTensor};
