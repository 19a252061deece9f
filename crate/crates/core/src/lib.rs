//! Nonlocal operators built from the Laplacian and the numerical machinery
//! needed to cross-check them.
//!
//! * [`specfun`]: Bessel, modified Bessel and Gamma functions, spherical
//!   harmonics, and the bounded solutions of `-Δu = u`.
//! * [`spectral`]: Fourier-multiplier realization of `(-Δ)^s`, `(-Δ)^m` and
//!   `ψ(-Δ)` on periodic grids.
//! * [`quadrature`]: singular-integral realizations, pointwise.
//! * [`extension`]: the weighted half-space extension and its energies.
//! * [`bernstein`]: complete Bernstein multipliers, weights and A2 checks.
//! * [`diffusion`]: Monte Carlo hitting probabilities for the weighted
//!   diffusion.

pub mod error;
pub mod quad;
pub mod specfun;
pub mod quadrature;
pub mod spectral;
pub mod extension;
pub mod bernstein;
pub mod diffusion;

pub use error::{Error, Result};
