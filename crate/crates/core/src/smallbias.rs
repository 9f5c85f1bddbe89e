//! The powering small-bias sample space and exact bias measurement.
//!
//! A seed is a pair `(x, y)` of GF(2^r) elements. Output bit `i` (for
//! `i = 1..=n`) is the inner product over GF(2) of the bit patterns of `x^i`
//! and `y`. For a nonempty parity set `T` the bias equals the fraction of
//! field elements that are roots of `Σ_{i∈T} X^i`, which is at most `n/2^r`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, invalid, Result};
use crate::gf2::{find_irreducible, FieldElement, ReductionPolynomial, MAX_DEGREE, MIN_DEGREE};

/// Packed bits, little-endian within bytes. Pad bits of the last byte are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    bytes: Vec<u8>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self { len, bytes: vec![0; len.div_ceil(8)] }
    }

    /// Wraps packed bytes. Rejects a wrong byte count or nonzero pad bits.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(invalid(format!(
                "{} bits need {} bytes, got {}",
                len,
                len.div_ceil(8),
                bytes.len()
            )));
        }
        if !len.is_multiple_of(8) {
            let pad = bytes[bytes.len() - 1] >> (len % 8);
            if pad != 0 {
                return Err(invalid(format!("nonzero padding bits beyond bit {len}")));
            }
        }
        Ok(Self { len, bytes })
    }

    pub fn from_hex(hex_str: &str, len: usize) -> Result<Self> {
        let bytes = hex::decode(hex_str.trim())
            .map_err(|e| invalid(format!("bad hex seed: {e}")))?;
        Self::from_bytes(bytes, len)
    }

    /// Low `len` bits of `value`, `len <= 64`.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        let mut v = Self::zeros(len);
        let masked = if len == 64 { value } else { value & ((1u64 << len) - 1) };
        for (i, b) in v.bytes.iter_mut().enumerate() {
            *b = (masked >> (8 * i)) as u8;
        }
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.bytes[i / 8] >> (i % 8)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        let m = 1u8 << (i % 8);
        if bit {
            self.bytes[i / 8] |= m;
        } else {
            self.bytes[i / 8] &= !m;
        }
    }

    /// Reads `width <= 64` bits starting at `start` as a little-endian word.
    pub fn read_word(&self, start: usize, width: usize) -> u64 {
        assert!(width <= 64 && start + width <= self.len);
        (0..width).fold(0u64, |acc, j| acc | (u64::from(self.get(start + j)) << j))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub(crate) fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.bytes
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }
}

/// Exact nonnegative dyadic rational `num / 2^log2_den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    pub num: u64,
    pub log2_den: u32,
}

impl Dyadic {
    pub fn new(num: u64, log2_den: u32) -> Self {
        assert!(log2_den <= 63, "dyadic denominator 2^{log2_den} does not fit u64");
        Self { num, log2_den }
    }

    pub fn den(&self) -> u64 {
        1u64 << self.log2_den
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den() as f64
    }

    /// `-log2` of the value; infinite for zero.
    pub fn log2_inv(&self) -> f64 {
        if self.num == 0 {
            f64::INFINITY
        } else {
            f64::from(self.log2_den) - (self.num as f64).log2()
        }
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let lhs = u128::from(self.num) << other.log2_den;
        let rhs = u128::from(other.num) << self.log2_den;
        lhs.cmp(&rhs)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Anything that maps a fixed-length seed to a fixed-length bit string.
/// Bit `b` of the output stands for the sign `(-1)^b`.
pub trait BitGenerator: Sync {
    fn output_bits(&self) -> usize;
    fn seed_bits(&self) -> usize;
    fn generate_bits(&self, seed: &BitVector) -> Result<BitVector>;
    /// Bias guaranteed for every nonempty parity up to the generator's
    /// parity limit.
    fn bias_bound(&self) -> Dyadic;
}

pub(crate) fn check_seed_len(seed: &BitVector, expected: usize) -> Result<()> {
    if seed.len() != expected {
        return Err(invalid(format!(
            "seed has {} bits, generator requires exactly {expected}",
            seed.len()
        )));
    }
    Ok(())
}

/// Identity map from `n` seed bits to `n` output bits: the uniform
/// distribution on the cube, used as a reference in audits and moments.
#[derive(Debug, Clone, Copy)]
pub struct UniformGenerator {
    pub n_bits: usize,
}

impl BitGenerator for UniformGenerator {
    fn output_bits(&self) -> usize {
        self.n_bits
    }
    fn seed_bits(&self) -> usize {
        self.n_bits
    }
    fn generate_bits(&self, seed: &BitVector) -> Result<BitVector> {
        check_seed_len(seed, self.n_bits)?;
        Ok(seed.clone())
    }
    fn bias_bound(&self) -> Dyadic {
        Dyadic::new(0, 0)
    }
}

/// Smallest `r >= 2` with `n_bits / 2^r <= 2^-log2_inv_eps`, without the
/// `r <= 63` cap. Used for pure seed-length arithmetic.
pub(crate) fn powering_degree_uncapped(n_bits: u64, log2_inv_eps: f64) -> Result<u64> {
    if n_bits == 0 {
        return Err(invalid("n_bits must be at least 1"));
    }
    if !log2_inv_eps.is_finite() || log2_inv_eps < 0.0 {
        return Err(invalid(format!("log2(1/eps) must be finite and >= 0, got {log2_inv_eps}")));
    }
    let r = if log2_inv_eps.fract() == 0.0 {
        ceil_log2(n_bits) + log2_inv_eps as u64
    } else {
        ((n_bits as f64).log2() + log2_inv_eps).ceil() as u64
    };
    Ok(r.max(u64::from(MIN_DEGREE)))
}

/// `ceil(log2 n)` for `n >= 1`.
pub fn ceil_log2(n: u64) -> u64 {
    assert!(n >= 1);
    u64::from(64 - (n - 1).leading_zeros())
}

/// Field degree for the powering space so that its bias is at most
/// `2^-log2_inv_eps` on `n_bits` outputs.
pub fn sb_choose_degree(n_bits: usize, log2_inv_eps: f64) -> Result<u32> {
    let r = powering_degree_uncapped(n_bits as u64, log2_inv_eps)?;
    if r > u64::from(MAX_DEGREE) {
        return Err(capacity(format!(
            "powering space needs GF(2^{r}) but fields are limited to degree {MAX_DEGREE}; \
             use the composed generator or a smaller bias exponent"
        )));
    }
    Ok(r as u32)
}

/// Parameters of the powering construction over GF(2^r).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoweringSpec {
    n_bits: usize,
    poly: ReductionPolynomial,
}

impl PoweringSpec {
    pub fn new(n_bits: usize, r: u32) -> Result<Self> {
        let poly = find_irreducible(r)?;
        Self::with_polynomial(n_bits, poly)
    }

    pub fn with_polynomial(n_bits: usize, poly: ReductionPolynomial) -> Result<Self> {
        if n_bits == 0 {
            return Err(invalid("powering space needs at least one output bit"));
        }
        if (n_bits as u128) >= (1u128 << poly.degree()) {
            return Err(invalid(format!(
                "bias bound n/2^r = {n_bits}/2^{} is not below 1",
                poly.degree()
            )));
        }
        Ok(Self { n_bits, poly })
    }

    /// Spec meeting bias `2^-log2_inv_eps` on `n_bits` outputs.
    pub fn for_bias(n_bits: usize, log2_inv_eps: u32) -> Result<Self> {
        Self::new(n_bits, sb_choose_degree(n_bits, f64::from(log2_inv_eps))?)
    }

    pub fn n_bits(&self) -> usize {
        self.n_bits
    }

    pub fn r(&self) -> u32 {
        self.poly.degree()
    }

    pub fn polynomial(&self) -> &ReductionPolynomial {
        &self.poly
    }

    /// Splits a `2r`-bit seed: bits `[0, r)` hold `x`, bits `[r, 2r)` hold `y`.
    pub fn split_seed(&self, seed: &BitVector) -> Result<(FieldElement, FieldElement)> {
        let r = self.r() as usize;
        check_seed_len(seed, 2 * r)?;
        let x = FieldElement::new(seed.read_word(0, r), self.r())?;
        let y = FieldElement::new(seed.read_word(r, r), self.r())?;
        Ok((x, y))
    }

    pub fn join_seed(&self, x: u64, y: u64) -> BitVector {
        let r = self.r() as usize;
        let mut s = BitVector::zeros(2 * r);
        for j in 0..r {
            s.set(j, (x >> j) & 1 == 1);
            s.set(r + j, (y >> j) & 1 == 1);
        }
        s
    }
}

// Bits per parallel work unit; a multiple of 8 so chunks own whole bytes.
const GEN_CHUNK_BITS: usize = 1 << 13;

/// Output bits of the powering space for seed `(x, y)`; bit `i - 1` holds
/// `<x^i, y>` for `i = 1..=n_bits`.
pub fn sb_generate(spec: &PoweringSpec, x: FieldElement, y: FieldElement) -> Result<BitVector> {
    if x.degree() != spec.r() || y.degree() != spec.r() {
        return Err(invalid("seed elements do not belong to the spec's field"));
    }
    let mut out = BitVector::zeros(spec.n_bits);
    let (xv, yv) = (x.value(), y.value());
    if yv == 0 {
        return Ok(out);
    }
    let p = spec.poly;
    let n = spec.n_bits;
    out.bytes_mut()
        .par_chunks_mut(GEN_CHUNK_BITS / 8)
        .enumerate()
        .for_each(|(c, chunk)| {
            let start = c * GEN_CHUNK_BITS;
            let end = (start + GEN_CHUNK_BITS).min(n);
            let mut pw = p.pow_raw(xv, start as u64 + 1);
            for i in start..end {
                if (pw & yv).count_ones() & 1 == 1 {
                    let local = i - start;
                    chunk[local / 8] |= 1 << (local % 8);
                }
                pw = p.mul_raw(pw, xv);
            }
        });
    Ok(out)
}

impl BitGenerator for PoweringSpec {
    fn output_bits(&self) -> usize {
        self.n_bits
    }
    fn seed_bits(&self) -> usize {
        2 * self.r() as usize
    }
    fn generate_bits(&self, seed: &BitVector) -> Result<BitVector> {
        let (x, y) = self.split_seed(seed)?;
        sb_generate(self, x, y)
    }
    fn bias_bound(&self) -> Dyadic {
        Dyadic::new(self.n_bits as u64, self.r())
    }
}

pub const MAX_ROOTCOUNT_DEGREE: u32 = 26;

/// Exact bias of parity set `parity_set` (1-based indices) for the powering
/// space, by counting roots of `Σ_{i∈T} X^i` over the whole field.
pub fn sb_bias_rootcount(spec: &PoweringSpec, parity_set: &[usize]) -> Result<Dyadic> {
    if parity_set.is_empty() {
        return Err(invalid("parity set must be nonempty"));
    }
    if spec.r() > MAX_ROOTCOUNT_DEGREE {
        return Err(capacity(format!(
            "root counting enumerates 2^{} field elements (limit 2^{MAX_ROOTCOUNT_DEGREE})",
            spec.r()
        )));
    }
    let mut set = parity_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set[0] == 0 || *set.last().unwrap() > spec.n_bits {
        return Err(invalid(format!("parity indices must lie in 1..={}", spec.n_bits)));
    }
    let p = spec.poly;
    let top = *set.last().unwrap();
    let roots: u64 = (0..1u64 << spec.r())
        .into_par_iter()
        .filter(|&x| {
            let mut pw = 1u64;
            let mut sum = 0u64;
            let mut next = 0;
            for i in 1..=top {
                pw = p.mul_raw(pw, x);
                if set[next] == i {
                    sum ^= pw;
                    next += 1;
                }
            }
            sum == 0
        })
        .count() as u64;
    Ok(Dyadic::new(roots, spec.r()))
}

pub const MAX_AUDIT_SEED_BITS: usize = 26;
pub const MAX_AUDIT_OUTPUT_BITS: usize = 24;

/// Result of an exhaustive bias audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasAuditReport {
    pub n_bits: usize,
    pub seed_bits: usize,
    pub max_parity_size: usize,
    pub max_bias_num: u64,
    pub max_bias_den: u64,
    /// 1-based output indices of the first parity set attaining the maximum.
    pub argmax_set: Vec<usize>,
    pub bound_num: u64,
    pub bound_den: u64,
    /// `|Σ_seeds (-1)^parity|` value -> number of audited sets with that value.
    #[serde(skip)]
    pub histogram: BTreeMap<u64, u64>,
    /// Signed parity sums indexed by subset mask (bit `j` = output `j + 1`).
    #[serde(skip)]
    pub parity_sums: Vec<i32>,
}

impl BiasAuditReport {
    pub fn max_bias(&self) -> Dyadic {
        Dyadic::new(self.max_bias_num, self.seed_bits as u32)
    }

    pub fn bound(&self) -> Dyadic {
        Dyadic::new(self.bound_num, self.bound_den.trailing_zeros())
    }

    pub fn within_bound(&self) -> bool {
        self.max_bias() <= self.bound()
    }

    /// Exact absolute bias of one parity set (1-based indices).
    pub fn bias_of(&self, parity_set: &[usize]) -> Dyadic {
        let mask = parity_set.iter().fold(0usize, |m, &i| m | (1 << (i - 1)));
        Dyadic::new(u64::from(self.parity_sums[mask].unsigned_abs()), self.seed_bits as u32)
    }
}

/// In-place Walsh-Hadamard transform; entry `T` becomes `Σ_w a[w] (-1)^{|w∧T|}`.
fn walsh_hadamard(a: &mut [i32]) {
    let mut h = 1;
    while h < a.len() {
        for block in a.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (u, v) in lo.iter_mut().zip(hi.iter_mut()) {
                let (s, d) = (*u + *v, *u - *v);
                *u = s;
                *v = d;
            }
        }
        h *= 2;
    }
}

/// Enumerates every seed of `generator`, then computes the exact bias of
/// every nonempty parity set of at most `max_parity_size` output bits.
pub fn audit_bias_exhaustive(
    generator: &dyn BitGenerator,
    max_parity_size: usize,
) -> Result<BiasAuditReport> {
    let n = generator.output_bits();
    let sb = generator.seed_bits();
    if n == 0 || n > MAX_AUDIT_OUTPUT_BITS {
        return Err(capacity(format!(
            "audit supports 1..={MAX_AUDIT_OUTPUT_BITS} output bits, generator has {n}"
        )));
    }
    if sb > MAX_AUDIT_SEED_BITS {
        return Err(capacity(format!(
            "audit enumerates 2^{sb} seeds (limit 2^{MAX_AUDIT_SEED_BITS})"
        )));
    }
    if max_parity_size == 0 || max_parity_size > n {
        return Err(invalid(format!("max parity size must be in 1..={n}")));
    }

    let mut counts = vec![0i32; 1 << n];
    let total = 1u64 << sb;
    const BLOCK: u64 = 1 << 18;
    let mut start = 0u64;
    while start < total {
        let end = (start + BLOCK).min(total);
        let words: Vec<u32> = (start..end)
            .into_par_iter()
            .map(|s| {
                let bits = generator.generate_bits(&BitVector::from_u64(s, sb))?;
                Ok(bits.read_word(0, n) as u32)
            })
            .collect::<Result<_>>()?;
        for w in words {
            counts[w as usize] += 1;
        }
        start = end;
    }
    walsh_hadamard(&mut counts);

    let mut histogram = BTreeMap::new();
    let mut best: Option<(u64, usize)> = None;
    for (mask, &s) in counts.iter().enumerate().skip(1) {
        if (mask.count_ones() as usize) > max_parity_size {
            continue;
        }
        let a = u64::from(s.unsigned_abs());
        *histogram.entry(a).or_insert(0) += 1;
        if best.is_none_or(|(b, _)| a > b) {
            best = Some((a, mask));
        }
    }
    let (max_num, argmax) = best.expect("at least one parity set is audited");
    let bound = generator.bias_bound();
    Ok(BiasAuditReport {
        n_bits: n,
        seed_bits: sb,
        max_parity_size,
        max_bias_num: max_num,
        max_bias_den: total,
        argmax_set: (0..n).filter(|j| argmax >> j & 1 == 1).map(|j| j + 1).collect(),
        bound_num: bound.num,
        bound_den: bound.den(),
        histogram,
        parity_sums: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn choose_degree_examples() {
        assert_eq!(sb_choose_degree(8, 3.0).unwrap(), 6);
        assert_eq!(sb_choose_degree(1, 0.0).unwrap(), 2);
        assert_eq!(powering_degree_uncapped(1345, 658.0).unwrap(), 669);
        assert!(matches!(sb_choose_degree(1345, 658.0), Err(crate::Error::Capacity(_))));
        assert_eq!(sb_choose_degree(1000, 2.5).unwrap(), 13); // ceil(9.97 + 2.5)
    }

    #[test]
    fn generate_examples() {
        let spec = PoweringSpec::new(4, 3).unwrap();
        let f = |v| FieldElement::new(v, 3).unwrap();
        let bits = sb_generate(&spec, f(0b010), f(0b001)).unwrap();
        assert_eq!(bits.iter().collect::<Vec<_>>(), vec![false, false, true, false]);

        let zero_y = sb_generate(&spec, f(0b110), f(0)).unwrap();
        assert_eq!(zero_y.count_ones(), 0);

        for y in 0..8 {
            let bits = sb_generate(&spec, f(1), f(y)).unwrap();
            assert!(bits.iter().all(|b| b == (y & 1 == 1)));
        }
    }

    #[test]
    fn chunked_generation_matches_sequential() {
        let spec = PoweringSpec::new(3 * GEN_CHUNK_BITS + 77, 20).unwrap();
        let p = *spec.polynomial();
        let (x, y) = (0x5a5a5, 0xc3c3c);
        let bits = sb_generate(&spec, p.element(x).unwrap(), p.element(y).unwrap()).unwrap();
        let mut pw = 1u64;
        for i in 0..spec.n_bits() {
            pw = p.mul_raw(pw, x);
            assert_eq!(bits.get(i), (pw & y).count_ones() % 2 == 1, "bit {i}");
        }
    }

    #[test]
    fn rootcount_examples() {
        let spec = PoweringSpec::new(8, 6).unwrap();
        for i in 1..=8 {
            assert_eq!(sb_bias_rootcount(&spec, &[i]).unwrap(), Dyadic::new(1, 6));
        }
        assert_eq!(sb_bias_rootcount(&spec, &[1, 2]).unwrap(), Dyadic::new(2, 6));
        assert!(sb_bias_rootcount(&spec, &[]).is_err());
        assert!(sb_bias_rootcount(&spec, &[9]).is_err());
        let big = PoweringSpec::new(8, 27).unwrap();
        assert!(matches!(sb_bias_rootcount(&big, &[1]), Err(crate::Error::Capacity(_))));
    }

    #[test]
    fn audit_matches_rootcount_on_every_set() {
        let spec = PoweringSpec::new(6, 5).unwrap();
        let report = audit_bias_exhaustive(&spec, 6).unwrap();
        for mask in 1usize..64 {
            let set: Vec<usize> = (0..6).filter(|j| mask >> j & 1 == 1).map(|j| j + 1).collect();
            let from_roots = sb_bias_rootcount(&spec, &set).unwrap();
            assert_eq!(report.bias_of(&set).cmp(&from_roots), Ordering::Equal, "{set:?}");
            // bias of the powering space is never negative
            assert!(report.parity_sums[mask] >= 0);
        }
        assert!(report.within_bound());
        assert_eq!(report.histogram.values().sum::<u64>(), 63);
    }

    #[test]
    fn uniform_audit_is_zero() {
        let report = audit_bias_exhaustive(&UniformGenerator { n_bits: 4 }, 4).unwrap();
        assert_eq!(report.max_bias_num, 0);
        assert_eq!(report.argmax_set, vec![1]);
        assert!(report.within_bound());
    }

    #[test]
    fn audit_capacity_guards() {
        assert!(matches!(
            audit_bias_exhaustive(&UniformGenerator { n_bits: 25 }, 2),
            Err(crate::Error::Capacity(_))
        ));
        let wide_seed = PoweringSpec::new(8, 14).unwrap();
        assert!(matches!(audit_bias_exhaustive(&wide_seed, 2), Err(crate::Error::Capacity(_))));
        assert!(audit_bias_exhaustive(&UniformGenerator { n_bits: 4 }, 5).is_err());
    }

    #[test]
    fn spec_rejects_bound_not_below_one() {
        assert!(PoweringSpec::new(4, 2).is_err());
        assert!(PoweringSpec::new(3, 2).is_ok());
        assert!(PoweringSpec::new(0, 4).is_err());
    }

    #[test]
    fn bitvector_padding_checked() {
        assert!(BitVector::from_bytes(vec![0xff], 4).is_err());
        assert!(BitVector::from_bytes(vec![0x0f], 4).is_ok());
        assert!(BitVector::from_bytes(vec![0x0f, 0], 4).is_err());
        assert!(BitVector::from_hex("zz", 8).is_err());
    }

    #[test]
    fn dyadic_ordering() {
        assert_eq!(Dyadic::new(1, 6).cmp(&Dyadic::new(2, 7)), Ordering::Equal);
        assert_eq!(Dyadic::new(8, 6).cmp(&Dyadic::new(1, 3)), Ordering::Equal);
        assert!(Dyadic::new(9, 6) > Dyadic::new(1, 3));
    }

    proptest! {
        #[test]
        fn bitvector_bytes_roundtrip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let v = BitVector::from_bits(&bits);
            let back = BitVector::from_hex(&v.to_hex(), bits.len()).unwrap();
            prop_assert_eq!(back.iter().collect::<Vec<_>>(), bits);
        }

        #[test]
        fn seed_split_roundtrip(r in 3u32..=30, x: u64, y: u64) {
            let spec = PoweringSpec::new(4, r).unwrap();
            let m = spec.polynomial().mask();
            let (a, b) = spec.split_seed(&spec.join_seed(x & m, y & m)).unwrap();
            prop_assert_eq!((a.value(), b.value()), (x & m, y & m));
        }
    }
}
