//! Numerical engine for first-order conormal-gradient systems in the
//! upper half-space.
//!
//! A divergence-form elliptic system div A grad u = 0 is rewritten as the
//! first-order system d/dt f + D B f = 0 for the conormal gradient f,
//! where D is the self-adjoint tangential first-order operator and B the
//! pointwise-transformed coefficient matrix. After discretizing the
//! boundary as a periodic torus and the transverse half-line as a
//! geometric grid, the engine
//!
//! * builds the bisectorial operator D B0 on the subspace
//!   H = closure(range D) and realizes its holomorphic functional
//!   calculus spectrally ([`funcalc`]),
//! * runs the decay semigroup, Hardy projections and weighted
//!   square-function machinery ([`flow`]),
//! * applies the associated singular integral, its truncations and the
//!   weakly singular variant with cell-exact quadrature ([`sio`]),
//! * measures weighted, non-tangential, Carleson and Sobolev norms
//!   ([`funcnorms`]),
//! * solves the perturbed representation formula by Neumann series and
//!   verifies traces ([`solver`]),
//! * and evaluates Neumann/Dirichlet restriction conditioning with
//!   perturbation sweeps ([`bvp`]).
//!
//! Independent brute-force references live in [`oracle`]; they share no
//! code with the fast paths they check.

pub mod bvp;
pub(crate) mod cmat;
pub mod coeff;
pub mod error;
pub mod expr;
pub mod field_io;
pub mod flow;
pub mod funcalc;
pub mod funcnorms;
pub mod grid;
pub mod oracle;
pub mod report;
pub mod sio;
pub mod solver;

pub use error::{Error, Result};

pub(crate) mod util {
    /// FNV-1a 64-bit hash over a byte stream, for content keys.
    pub fn fnv1a(bytes: &[u8]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}
