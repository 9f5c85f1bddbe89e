//! Restricted-isometry sign matrices sampled from short seeds.
//!
//! Entries of a `Q x N` matrix are `±1/√Q`, with the sign pattern drawn from
//! an ε-biased ℓ-wise independent distribution over `{-1, +1}^{QN}`. The
//! distribution is the powering small-bias space over GF(2^r), optionally
//! composed with a BCH-style parity embedding so the seed length depends on
//! `log log (QN)` rather than `log (QN)`.
//!
//! Besides sampling, the crate carries exact verification tools that work at
//! desk scale: exhaustive bias audits, exact Hanson-Wright moments, exact
//! RIP constants by subset enumeration, JL tail estimates and randomness
//! accounting.

pub mod error;
pub mod gf2;
pub mod kwise;
pub mod linalg;
pub mod moments;
pub mod ripmatrix;
pub mod rng;
pub mod smallbias;
pub mod verify;

pub use error::{Error, Result};
pub use gf2::{FieldElement, ReductionPolynomial};
pub use kwise::{GeneratorSpec, Mode, SignVector};
pub use linalg::{DenseMatrix, MatrixNorms, SymmetricMatrix};
pub use ripmatrix::{RipMatrix, RipParams, SparseVector};
pub use smallbias::{BitGenerator, BitVector, Dyadic, PoweringSpec};

/// Library version embedded in every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
