//! ε-biased ℓ-wise independent sign vectors.
//!
//! Two modes:
//!
//! * `direct`: the powering space on all `n` output bits. Every parity of any
//!   size has bias at most `n/2^r`.
//! * `composed`: the powering space produces `m = 1 + (ℓ/2)·t` inner bits,
//!   which are expanded to `n` outputs by a BCH-style parity embedding. Any
//!   XOR of at most `ℓ` output rows is a nonzero combination of inner bits,
//!   so each such output parity inherits the inner bias bound `m/2^r`.
//!   The seed then grows with `log m = O(log ℓ + log log n)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, invalid, Error, Result};
use crate::gf2::{find_irreducible, MAX_DEGREE, MIN_DEGREE};
use crate::smallbias::{
    ceil_log2, check_seed_len, powering_degree_uncapped, BitGenerator, BitVector, Dyadic,
    PoweringSpec,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    #[default]
    Composed,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Direct => "direct",
            Mode::Composed => "composed",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Mode::Direct),
            "composed" => Ok(Mode::Composed),
            other => Err(invalid(format!("unknown generator mode {other:?}"))),
        }
    }
}

/// Sign vector `z ∈ {-1, +1}^n`; bit `b` encodes the sign `(-1)^b`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SignVector(BitVector);

impl SignVector {
    pub fn from_bits(bits: BitVector) -> Self {
        Self(bits)
    }

    pub fn from_signs(signs: &[i8]) -> Self {
        let bits: Vec<bool> = signs
            .iter()
            .map(|&s| {
                assert!(s == 1 || s == -1, "sign must be ±1, got {s}");
                s == -1
            })
            .collect();
        Self(BitVector::from_bits(&bits))
    }

    pub fn all_plus(n: usize) -> Self {
        Self(BitVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn sign(&self, i: usize) -> f64 {
        if self.0.get(i) {
            -1.0
        } else {
            1.0
        }
    }

    pub fn signs(&self) -> Vec<i8> {
        self.0.iter().map(|b| if b { -1 } else { 1 }).collect()
    }

    pub fn bits(&self) -> &BitVector {
        &self.0
    }

    pub fn into_bits(self) -> BitVector {
        self.0
    }
}

/// Arithmetic description of a generator. Serializes to the JSON object
/// embedded in matrix files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub mode: Mode,
    pub n_bits: u64,
    pub parity_limit: u64,
    pub log2_inv_eps: u64,
    /// Embedding field degree (composed mode only).
    pub t: Option<u32>,
    /// Inner seed-bit count fed to the embedding (composed mode only).
    pub m: Option<u64>,
    /// Degree of the powering field.
    pub r: u64,
    pub seed_bits: u64,
}

/// `max(2, ceil(log2(n + 1)))`: smallest field with `n` distinct nonzero elements.
fn embedding_degree(n_bits: u64) -> u64 {
    ceil_log2(n_bits + 1).max(u64::from(MIN_DEGREE))
}

impl GeneratorSpec {
    /// Pure arithmetic; never allocates fields. Fails only on invalid
    /// arguments, so it works at parameter sizes beyond what `build` supports.
    pub fn new(mode: Mode, n_bits: u64, parity_limit: u64, log2_inv_eps: u64) -> Result<Self> {
        if n_bits == 0 {
            return Err(invalid("generator needs at least one output bit"));
        }
        match mode {
            Mode::Direct => {
                let r = powering_degree_uncapped(n_bits, log2_inv_eps as f64)?;
                Ok(Self { mode, n_bits, parity_limit, log2_inv_eps, t: None, m: None, r, seed_bits: 2 * r })
            }
            Mode::Composed => {
                if parity_limit < 2 || !parity_limit.is_multiple_of(2) {
                    return Err(invalid(format!(
                        "composed mode needs an even parity limit >= 2, got {parity_limit}"
                    )));
                }
                let t = embedding_degree(n_bits);
                if t > u64::from(MAX_DEGREE) {
                    return Err(invalid(format!("{n_bits} outputs exceed the embedding field")));
                }
                let m = 1 + (parity_limit / 2) * t;
                let r = powering_degree_uncapped(m, log2_inv_eps as f64)?;
                Ok(Self {
                    mode,
                    n_bits,
                    parity_limit,
                    log2_inv_eps,
                    t: Some(t as u32),
                    m: Some(m),
                    r,
                    seed_bits: 2 * r,
                })
            }
        }
    }

    /// Bits fed to the powering space.
    pub fn inner_bits(&self) -> u64 {
        self.m.unwrap_or(self.n_bits)
    }

    /// Materializes the field and (in composed mode) the embedding.
    pub fn build(&self) -> Result<KwiseGenerator> {
        if self.r > u64::from(MAX_DEGREE) {
            return Err(capacity(format!(
                "sampling needs GF(2^{}) but fields are limited to degree {MAX_DEGREE}; \
                 reduce the bias exponent or the problem size",
                self.r
            )));
        }
        let n_bits = usize::try_from(self.n_bits)
            .map_err(|_| capacity("output length exceeds addressable memory"))?;
        let inner = PoweringSpec::new(self.inner_bits() as usize, self.r as u32)?;
        let embedding = match self.mode {
            Mode::Direct => None,
            Mode::Composed => Some(build_embedding(n_bits, self.parity_limit as usize)?),
        };
        Ok(KwiseGenerator { spec: *self, inner, embedding })
    }
}

/// Seed length of a generator without building it.
pub fn seed_length_bits(n_bits: u64, parity_limit: u64, log2_inv_eps: u64, mode: Mode) -> Result<u64> {
    Ok(GeneratorSpec::new(mode, n_bits, parity_limit, log2_inv_eps)?.seed_bits)
}

/// Parity rows of the BCH-style embedding, one per output bit, each `m` bits
/// wide and packed into `u64` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Embedding {
    n_bits: usize,
    parity_limit: usize,
    m: usize,
    words_per_row: usize,
    rows: Vec<u64>,
}

impl Embedding {
    /// Wraps explicit rows (all of equal length).
    pub fn from_rows(rows: &[BitVector], parity_limit: usize) -> Result<Self> {
        let m = rows.first().map(BitVector::len).ok_or_else(|| invalid("no rows"))?;
        if rows.iter().any(|r| r.len() != m) {
            return Err(invalid("embedding rows differ in length"));
        }
        let words_per_row = m.div_ceil(64);
        let mut packed = vec![0u64; rows.len() * words_per_row];
        for (i, row) in rows.iter().enumerate() {
            for j in 0..m {
                if row.get(j) {
                    packed[i * words_per_row + j / 64] |= 1 << (j % 64);
                }
            }
        }
        Ok(Self { n_bits: rows.len(), parity_limit, m, words_per_row, rows: packed })
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn parity_limit(&self) -> usize {
        self.parity_limit
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u64] {
        &self.rows[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn row_bits(&self, i: usize) -> BitVector {
        let row = self.row(i);
        let bits: Vec<bool> = (0..self.m).map(|j| row[j / 64] >> (j % 64) & 1 == 1).collect();
        BitVector::from_bits(&bits)
    }

    fn pack_inner(&self, inner: &BitVector) -> Vec<u64> {
        let mut words = vec![0u64; self.words_per_row];
        for j in 0..self.m {
            if inner.get(j) {
                words[j / 64] |= 1 << (j % 64);
            }
        }
        words
    }

    /// Output bits for the given `m` inner bits.
    pub fn expand(&self, inner: &BitVector) -> Result<BitVector> {
        check_seed_len(inner, self.m)?;
        let words = self.pack_inner(inner);
        let mut out = BitVector::zeros(self.n_bits);
        out.bytes_mut().par_chunks_mut(1024).enumerate().for_each(|(c, chunk)| {
            let start = c * 1024 * 8;
            let end = (start + 1024 * 8).min(self.n_bits);
            for i in start..end {
                let parity = self
                    .row(i)
                    .iter()
                    .zip(&words)
                    .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones());
                if parity & 1 == 1 {
                    let local = i - start;
                    chunk[local / 8] |= 1 << (local % 8);
                }
            }
        });
        Ok(out)
    }
}

/// Row `i` (1-based) is `(1, α_i, α_i^3, …, α_i^{ℓ-1})` with `α_i` the
/// field inverse of the integer `i` in GF(2^t). Encoding `i` itself would make
/// each sign a low-degree polynomial in the bits of (row, column), which
/// repeats whole columns of the matrix with constant probability.
pub fn build_embedding(n_bits: usize, parity_limit: usize) -> Result<Embedding> {
    if n_bits == 0 {
        return Err(invalid("embedding needs at least one output bit"));
    }
    if parity_limit < 2 || !parity_limit.is_multiple_of(2) {
        return Err(invalid(format!("parity limit must be even and >= 2, got {parity_limit}")));
    }
    let t = embedding_degree(n_bits as u64);
    if t > u64::from(MAX_DEGREE) {
        return Err(invalid(format!("{n_bits} outputs exceed the embedding field")));
    }
    let field = find_irreducible(t as u32)?;
    let t = t as usize;
    let half = parity_limit / 2;
    let m = 1 + half * t;
    let words_per_row = m.div_ceil(64);
    let mut rows = vec![0u64; n_bits * words_per_row];
    rows.par_chunks_mut(words_per_row).enumerate().for_each(|(i, row)| {
        let alpha = field.pow_raw(i as u64 + 1, (1u64 << t) - 2);
        let alpha_sq = field.mul_raw(alpha, alpha);
        row[0] |= 1;
        let mut pw = alpha;
        for j in 0..half {
            let offset = 1 + j * t;
            for b in 0..t {
                if pw >> b & 1 == 1 {
                    let pos = offset + b;
                    row[pos / 64] |= 1 << (pos % 64);
                }
            }
            pw = field.mul_raw(pw, alpha_sq);
        }
    });
    Ok(Embedding { n_bits, parity_limit, m, words_per_row, rows })
}

pub const MAX_RANK_SUBSETS: u128 = 10_000_000;

/// Outcome of checking that every ≤ℓ subset of embedding rows has nonzero XOR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCheck {
    pub passed: bool,
    /// 1-based row indices whose XOR vanishes.
    pub witness: Option<Vec<usize>>,
    pub subsets_checked: u64,
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

pub fn subset_count(n: usize, max_size: usize) -> u128 {
    (1..=max_size.min(n)).map(|j| binomial(n as u128, j as u128)).sum()
}

fn search_zero_xor(
    emb: &Embedding,
    next: usize,
    remaining: usize,
    acc: &mut Vec<u64>,
    chosen: &mut Vec<usize>,
    visited: &mut u64,
) -> bool {
    for i in next..emb.n_bits {
        for (a, r) in acc.iter_mut().zip(emb.row(i)) {
            *a ^= r;
        }
        chosen.push(i);
        *visited += 1;
        if acc.iter().all(|&w| w == 0)
            || (remaining > 1 && search_zero_xor(emb, i + 1, remaining - 1, acc, chosen, visited))
        {
            return true;
        }
        chosen.pop();
        for (a, r) in acc.iter_mut().zip(emb.row(i)) {
            *a ^= r;
        }
    }
    false
}

/// Exhaustively checks that every nonempty subset of at most `parity_limit`
/// rows XORs to a nonzero vector. Returns the first offending subset found
/// in lexicographic order.
pub fn verify_embedding_rank(emb: &Embedding, parity_limit: usize) -> Result<RankCheck> {
    let total = subset_count(emb.n_bits, parity_limit);
    if total > MAX_RANK_SUBSETS {
        return Err(capacity(format!(
            "rank check would visit {total} subsets (limit {MAX_RANK_SUBSETS})"
        )));
    }
    let per_first: Vec<(u64, Option<Vec<usize>>)> = (0..emb.n_bits)
        .into_par_iter()
        .map(|first| {
            let mut acc = emb.row(first).to_vec();
            let mut chosen = vec![first];
            let mut visited = 1u64;
            let found = acc.iter().all(|&w| w == 0)
                || (parity_limit > 1
                    && search_zero_xor(emb, first + 1, parity_limit - 1, &mut acc, &mut chosen, &mut visited));
            (visited, found.then(|| chosen.iter().map(|i| i + 1).collect()))
        })
        .collect();
    let witness = per_first.iter().find_map(|(_, w)| w.clone());
    // Early exit makes the visited count partial once a witness exists.
    let subsets_checked = per_first.iter().map(|(v, _)| v).sum();
    Ok(RankCheck { passed: witness.is_none(), witness, subsets_checked })
}

/// A built generator: the powering field and, in composed mode, the embedding.
#[derive(Debug, Clone)]
pub struct KwiseGenerator {
    spec: GeneratorSpec,
    inner: PoweringSpec,
    embedding: Option<Embedding>,
}

impl KwiseGenerator {
    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn inner(&self) -> &PoweringSpec {
        &self.inner
    }

    pub fn embedding(&self) -> Option<&Embedding> {
        self.embedding.as_ref()
    }

    pub fn generate(&self, seed: &BitVector) -> Result<SignVector> {
        Ok(SignVector::from_bits(self.generate_bits(seed)?))
    }
}

impl BitGenerator for KwiseGenerator {
    fn output_bits(&self) -> usize {
        self.spec.n_bits as usize
    }

    fn seed_bits(&self) -> usize {
        self.spec.seed_bits as usize
    }

    fn generate_bits(&self, seed: &BitVector) -> Result<BitVector> {
        check_seed_len(seed, self.seed_bits())?;
        let inner = self.inner.generate_bits(seed)?;
        match &self.embedding {
            None => Ok(inner),
            Some(e) => e.expand(&inner),
        }
    }

    /// Inner powering bound `inner_bits / 2^r`; in composed mode it covers
    /// parities of at most `parity_limit` outputs, in direct mode all of them.
    fn bias_bound(&self) -> Dyadic {
        self.inner.bias_bound()
    }
}

/// Builds the generator and draws one sign vector.
pub fn generate(spec: &GeneratorSpec, seed: &BitVector) -> Result<SignVector> {
    spec.build()?.generate(seed)
}
