//! Arithmetic in GF(2)[x] and GF(2^r) for `2 <= r <= 63`.
//!
//! A polynomial over GF(2) is packed into a `u64`: bit `i` is the coefficient
//! of `x^i`. Addition is XOR. Field elements are reduced modulo a monic
//! irreducible polynomial of degree `r`, so every element fits one word.

use std::sync::OnceLock;

use crate::error::{invalid, Result};

pub const MIN_DEGREE: u32 = 2;
pub const MAX_DEGREE: u32 = 63;

/// Degree of a nonzero polynomial. Undefined for zero (returns 0).
#[inline]
fn poly_degree(p: u64) -> u32 {
    63u32.saturating_sub(p.leading_zeros())
}

/// Remainder of `a` divided by `b` in GF(2)[x]. `b` must be nonzero.
fn poly_rem(mut a: u64, b: u64) -> u64 {
    debug_assert!(b != 0);
    let db = poly_degree(b);
    while a != 0 && poly_degree(a) >= db {
        a ^= b << (poly_degree(a) - db);
    }
    a
}

fn poly_gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let r = poly_rem(a, b);
        a = b;
        b = r;
    }
    a
}

/// `a * b mod f` where `f` has degree `r` and `a, b` have degree `< r`.
/// `f` need not be irreducible.
#[inline]
fn mul_mod(a: u64, b: u64, f: u64, r: u32) -> u64 {
    let mask = (1u64 << r) - 1;
    let tail = f & mask;
    let top = r - 1;
    let mut acc = 0u64;
    let mut i = poly_degree(b) + 1;
    if b == 0 {
        return 0;
    }
    while i > 0 {
        i -= 1;
        let carry = (acc >> top) & 1;
        acc = (acc << 1) & mask;
        if carry != 0 {
            acc ^= tail;
        }
        if (b >> i) & 1 != 0 {
            acc ^= a;
        }
    }
    acc
}

/// Ben-Or irreducibility test: `f` of degree `d` is irreducible iff
/// `gcd(x^(2^i) - x mod f, f) = 1` for every `1 <= i <= d/2`.
pub fn is_irreducible(f: u64) -> bool {
    if f < 2 {
        return false;
    }
    let d = poly_degree(f);
    if d == 1 {
        return true;
    }
    if f & 1 == 0 {
        return false;
    }
    let mut h = 0b10u64; // x
    for _ in 0..d / 2 {
        h = mul_mod(h, h, f, d);
        if poly_gcd(f, h ^ 0b10) != 1 {
            return false;
        }
    }
    true
}

/// A monic irreducible polynomial of degree `r` defining GF(2^r).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReductionPolynomial {
    degree: u32,
    bits: u64,
}

impl ReductionPolynomial {
    /// Wraps an explicit polynomial after checking it is monic of the stated
    /// degree, has a nonzero constant term, and is irreducible.
    pub fn new(bits: u64) -> Result<Self> {
        let degree = poly_degree(bits);
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
            return Err(invalid(format!(
                "reduction polynomial degree {degree} outside {MIN_DEGREE}..={MAX_DEGREE}"
            )));
        }
        if bits & 1 == 0 || !is_irreducible(bits) {
            return Err(invalid(format!("polynomial {bits:#b} is not irreducible")));
        }
        Ok(Self { degree, bits })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Mask selecting the low `r` bits.
    #[inline]
    pub fn mask(&self) -> u64 {
        (1u64 << self.degree) - 1
    }

    /// Field product on raw words. Inputs must already be reduced.
    #[inline]
    pub fn mul_raw(&self, a: u64, b: u64) -> u64 {
        mul_mod(a, b, self.bits, self.degree)
    }

    /// Square-and-multiply on raw words; `pow_raw(a, 0) == 1`.
    pub fn pow_raw(&self, mut base: u64, mut e: u64) -> u64 {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = self.mul_raw(acc, base);
            }
            base = self.mul_raw(base, base);
            e >>= 1;
        }
        acc
    }

    pub fn element(&self, value: u64) -> Result<FieldElement> {
        FieldElement::new(value, self.degree)
    }
}

/// An element of GF(2^r) stored as an `r`-bit word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u64,
    degree: u32,
}

impl FieldElement {
    pub fn new(value: u64, degree: u32) -> Result<Self> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
            return Err(invalid(format!("field degree {degree} outside {MIN_DEGREE}..={MAX_DEGREE}")));
        }
        if value >> degree != 0 {
            return Err(invalid(format!("value {value:#x} does not fit in {degree} bits")));
        }
        Ok(Self { value, degree })
    }

    pub fn zero(degree: u32) -> Result<Self> {
        Self::new(0, degree)
    }

    pub fn one(degree: u32) -> Result<Self> {
        Self::new(1, degree)
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    /// Field addition (XOR). Degrees must match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.degree != other.degree {
            return Err(invalid("cannot add elements of different fields"));
        }
        Ok(Self { value: self.value ^ other.value, degree: self.degree })
    }
}

fn check_degree(a: &FieldElement, p: &ReductionPolynomial) -> Result<()> {
    if a.degree != p.degree {
        return Err(invalid(format!(
            "element of degree {} used with reduction polynomial of degree {}",
            a.degree, p.degree
        )));
    }
    Ok(())
}

/// Product in GF(2^r) = GF(2)[x]/(p).
pub fn gf_mul(a: FieldElement, b: FieldElement, p: &ReductionPolynomial) -> Result<FieldElement> {
    check_degree(&a, p)?;
    check_degree(&b, p)?;
    Ok(FieldElement { value: p.mul_raw(a.value, b.value), degree: p.degree })
}

/// `a^e` by square-and-multiply. `a^0 = 1` for every `a`, including zero.
pub fn gf_pow(a: FieldElement, e: u64, p: &ReductionPolynomial) -> Result<FieldElement> {
    check_degree(&a, p)?;
    Ok(FieldElement { value: p.pow_raw(a.value, e), degree: p.degree })
}

static IRREDUCIBLE_CACHE: [OnceLock<u64>; 64] = [const { OnceLock::new() }; 64];

/// Smallest (as an integer) monic irreducible polynomial of degree `r`.
/// Computed once per degree and cached.
pub fn find_irreducible(r: u32) -> Result<ReductionPolynomial> {
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&r) {
        return Err(invalid(format!("field degree {r} outside {MIN_DEGREE}..={MAX_DEGREE}")));
    }
    let bits = *IRREDUCIBLE_CACHE[r as usize].get_or_init(|| {
        let lead = 1u64 << r;
        (1u64..lead)
            .step_by(2)
            .map(|low| lead | low)
            .find(|&f| is_irreducible(f))
            .expect("irreducible polynomials exist in every degree")
    });
    Ok(ReductionPolynomial { degree: r, bits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Trial division by every polynomial of degree 1..=d/2.
    fn irreducible_by_trial_division(f: u64) -> bool {
        let d = poly_degree(f);
        (2u64..(1u64 << (d / 2 + 1))).all(|g| poly_rem(f, g) != 0)
    }

    fn el(v: u64, r: u32) -> FieldElement {
        FieldElement::new(v, r).unwrap()
    }

    #[test]
    fn small_products() {
        let p = ReductionPolynomial::new(0b1011).unwrap();
        assert_eq!(gf_mul(el(0b010, 3), el(0b010, 3), &p).unwrap().value(), 0b100);
        assert_eq!(gf_mul(el(0b100, 3), el(0b010, 3), &p).unwrap().value(), 0b011);
        for a in 0..8 {
            assert_eq!(gf_mul(el(a, 3), el(1, 3), &p).unwrap().value(), a);
        }
    }

    #[test]
    fn mismatched_degree_rejected() {
        let p = find_irreducible(3).unwrap();
        assert!(matches!(gf_mul(el(1, 4), el(1, 3), &p), Err(crate::Error::InvalidArgument(_))));
        assert!(gf_pow(el(1, 5), 2, &p).is_err());
    }

    #[test]
    fn powers() {
        let p = ReductionPolynomial::new(0b1011).unwrap();
        assert_eq!(gf_pow(el(0b010, 3), 7, &p).unwrap().value(), 1);
        assert_eq!(gf_pow(el(0b110, 3), 1, &p).unwrap().value(), 0b110);
        assert_eq!(gf_pow(el(0, 3), 0, &p).unwrap().value(), 1);
        for e in 1..20 {
            assert_eq!(gf_pow(el(0, 3), e, &p).unwrap().value(), 0);
        }
    }

    #[test]
    fn smallest_irreducibles() {
        assert_eq!(find_irreducible(2).unwrap().bits(), 0b111);
        assert_eq!(find_irreducible(3).unwrap().bits(), 0b1011);
        // x^4 + x + 1, x^8 + x^4 + x^3 + x + 1 are the well-known minima
        assert_eq!(find_irreducible(4).unwrap().bits(), 0b10011);
        assert_eq!(find_irreducible(8).unwrap().bits(), 0x11b);
        assert!(find_irreducible(1).is_err());
        assert!(find_irreducible(64).is_err());
    }

    #[test]
    fn degree_three_minimum_by_enumeration() {
        let monic_odd: Vec<u64> = (0b1001..=0b1111).step_by(2).collect();
        assert_eq!(monic_odd.len(), 4);
        let first = monic_odd.into_iter().find(|&f| irreducible_by_trial_division(f)).unwrap();
        assert_eq!(first, find_irreducible(3).unwrap().bits());
    }

    #[test]
    fn ben_or_matches_trial_division() {
        for f in 2u64..(1 << 13) {
            assert_eq!(is_irreducible(f), irreducible_by_trial_division(f), "f = {f:#b}");
        }
    }

    #[test]
    fn every_degree_certified() {
        for r in MIN_DEGREE..=MAX_DEGREE {
            let p = find_irreducible(r).unwrap();
            assert_eq!(p.degree(), r);
            assert!(is_irreducible(p.bits()));
            if r <= 24 {
                assert!(irreducible_by_trial_division(p.bits()), "r = {r}");
            }
        }
    }

    #[test]
    fn multiplicative_group_order() {
        for r in 2..=8 {
            let p = find_irreducible(r).unwrap();
            let order = (1u64 << r) - 1;
            for a in 1..=order {
                assert_eq!(p.pow_raw(a, order), 1, "r={r} a={a}");
            }
        }
    }

    #[test]
    fn concurrent_first_use() {
        let results: Vec<u64> = std::thread::scope(|s| {
            let handles: Vec<_> =
                (0..8).map(|_| s.spawn(|| find_irreducible(37).unwrap().bits())).collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert!(results.windows(2).all(|w| w[0] == w[1]));
    }

    proptest! {
        #[test]
        fn field_axioms(r in 2u32..=63, a: u64, b: u64, c: u64) {
            let p = find_irreducible(r).unwrap();
            let (a, b, c) = (a & p.mask(), b & p.mask(), c & p.mask());
            prop_assert_eq!(p.mul_raw(a, p.mul_raw(b, c)), p.mul_raw(p.mul_raw(a, b), c));
            prop_assert_eq!(p.mul_raw(a, b ^ c), p.mul_raw(a, b) ^ p.mul_raw(a, c));
            prop_assert_eq!(p.mul_raw(a, b), p.mul_raw(b, a));
            prop_assert_eq!(p.mul_raw(a, 1), a);
        }

        #[test]
        fn pow_matches_iterated_mul(r in 2u32..=63, a: u64) {
            let p = find_irreducible(r).unwrap();
            let a = a & p.mask();
            let mut acc = 1u64;
            for e in 0..=64u64 {
                prop_assert_eq!(p.pow_raw(a, e), acc);
                acc = p.mul_raw(acc, a);
            }
        }
    }
}
