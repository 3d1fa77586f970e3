//! Spectral Galerkin laboratory for semilinear stochastic heat equations
//!
//! The equation under study is
//!
//! ```text
//!     dX_t = [kappa * Laplace(X_t) + f(x, X_t)] dt + b(x, X_t) dW_t
//! ```
//!
//! on the unit cube `(0,1)^d` with Dirichlet boundary conditions, driven by a
//! trace-class Q-Wiener process. Everything is expanded in the eigenbasis of
//! the Dirichlet Laplacian; the crate provides the spectral space and its
//! fractional-power norms ([`spectral`]), covariance models for the noise
//! ([`noise`]), Nemytskii coefficient pairs and their Hilbert-Schmidt
//! diagnostics ([`coefficients`]), grid-based Sobolev-Slobodeckij and Hoelder
//! norms ([`sobolev`]), an exponential Euler simulator with exact
//! Ornstein-Uhlenbeck oracles ([`simulator`]), regularity-exponent estimation
//! ([`regularity`]), and the experiment configuration layer used by the
//! `spde-lab` binary ([`config`]).

pub mod coefficients;
pub mod config;
pub mod error;
pub mod expr;
pub mod noise;
pub mod regularity;
pub mod rng;
pub mod simulator;
pub mod sobolev;
pub mod spectral;
pub mod transform;

pub use error::{Error, Result};
