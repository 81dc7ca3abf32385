//! Rare-event path sampling for classical Langevin dynamics and the
//! stochastic Schrodinger equation of a particle in a quartic double well
//! coupled to an ohmic bath.
//!
//! The crate is organised bottom-up:
//!
//! * [`fock`]: truncated Fock-basis operators and states.
//! * [`dynamics`]: Euler-Maruyama integrators (Langevin, SSE, QSD), coherent
//!   evolution and the Gaussian centroid model.
//! * [`pathprob`]: step and path log-densities, the Lindblad generator, its
//!   stationary state, Gibbs states and fidelity.
//! * [`tps`]: shooting and mirror moves, path-ensemble chains, correlation
//!   functions.
//! * [`tis`]: first-interface flux, interface ensembles, interface placement
//!   and the rate.
//! * [`analysis`]: Wigner functions, histograms, MFPT rates, Arrhenius fits.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod fock;
pub mod pathprob;
pub mod rng;
pub mod stats;
pub mod system;
pub mod tis;
pub mod tps;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
