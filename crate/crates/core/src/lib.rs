//! Collisionless kinetic transport in convex domains with diffuse walls.
//!
//! Modules, bottom-up:
//! - [`geometry`]: conic domains, normals, exit times, boundary charts.
//! - [`phase_grid`]: velocity quadrature, Γ± grids, chord grid, weighted norms.
//! - [`wall_kernels`]: diffuse kernels, renormalization, sampling, N_H.
//! - [`transfer_operator`]: M_λH, spectra, projections, ν′(0).
//! - [`resolvent_steady`]: Ξ_λ, G_λ, R_λ, R(λ, T_H), Ψ_H, boundary functions.
//! - [`evolution`]: renewal marcher, Monte Carlo, decay fits, Cesàro means.
//! - [`chv`]: boundary Jacobian and the sphere/boundary change of variables.
//! - [`cli_io`]: configuration, subcommands, CSV output.

pub mod chv;
pub mod cli_io;
pub mod error;
pub mod evolution;
pub mod geometry;
pub mod linalg;
pub mod phase_grid;
pub mod quadrature;
pub mod resolvent_steady;
pub mod rng;
pub mod transfer_operator;
pub mod wall_kernels;

pub use error::{Error, Result};
