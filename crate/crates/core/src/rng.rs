//! Deterministic randomness for experiments.
//!
//! Every random draw in the harness comes from a ChaCha8 stream keyed by
//! `(master_seed, domain)` and selected by a per-trial counter, so trial `i`
//! sees the same bits regardless of how trials are split across workers.
//! None of this counts toward a construction's randomness budget.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::kwise::SignVector;
use crate::smallbias::BitVector;

/// Domain tags keep streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    ConstructionSeed = 1,
    IndependentBaseline = 2,
    TestVector = 3,
    MomentSeed = 4,
}

pub fn stream(master_seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// `n_bits` uniformly random bits with zeroed padding.
pub fn random_bits(rng: &mut impl RngCore, n_bits: usize) -> BitVector {
    let mut bytes = vec![0u8; n_bits.div_ceil(8)];
    rng.fill_bytes(&mut bytes);
    if !n_bits.is_multiple_of(8) {
        let last = bytes.len() - 1;
        bytes[last] &= (1u8 << (n_bits % 8)) - 1;
    }
    BitVector::from_bytes(bytes, n_bits).expect("padding cleared")
}

/// Construction seed for trial `index`.
pub fn derive_seed(master_seed: u64, index: u64, n_bits: usize) -> BitVector {
    random_bits(&mut stream(master_seed, Domain::ConstructionSeed, index), n_bits)
}

/// Fully independent signs for the baseline comparison (harness only).
pub fn independent_signs(master_seed: u64, index: u64, n: usize) -> SignVector {
    SignVector::from_bits(random_bits(&mut stream(master_seed, Domain::IndependentBaseline, index), n))
}
