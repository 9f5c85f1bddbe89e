//! Moments of the centered quadratic form `zᵀBz - tr(B)` and Hanson-Wright
//! bounds, for uniform sign vectors and for small-bias sample spaces.
//!
//! Exact moments enumerate either the whole cube or every seed of a
//! generator. Work is split into fixed-size chunks summed with compensated
//! arithmetic and combined in chunk order, so results are bitwise identical
//! for any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, invalid, Result};
use crate::linalg::{jacobi_eigen, CompensatedSum, MatrixNorms};
use crate::rng::{random_bits, stream, Domain};
use crate::smallbias::{BitGenerator, BitVector};

pub use crate::linalg::SymmetricMatrix;

pub const MAX_CUBE_DIM: usize = 22;
pub const MAX_SPACE_SEED_BITS: usize = 26;
const CHUNK: u64 = 1 << 12;

pub fn matrix_norms(b: &SymmetricMatrix) -> MatrixNorms {
    let vals = b.as_slice();
    let op = jacobi_eigen(b)
        .map(|e| e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .unwrap_or(f64::NAN);
    MatrixNorms {
        l1: vals.iter().map(|v| v.abs()).sum(),
        s2: vals.iter().map(|v| v * v).sum::<f64>().sqrt(),
        op,
        trace: b.trace(),
    }
}

/// Strict upper triangle as `(i, j, 2·B_ij)`, zeros dropped.
fn doubled_upper(b: &SymmetricMatrix) -> Vec<(usize, usize, f64)> {
    let n = b.n();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = b.get(i, j);
            if v != 0.0 {
                terms.push((i, j, 2.0 * v));
            }
        }
    }
    terms
}

/// `zᵀBz - tr(B) = 2 Σ_{i<j} B_ij z_i z_j`, with `z_i = (-1)^{bit i}`.
#[inline]
fn centered_form_word(terms: &[(usize, usize, f64)], bits: u64) -> f64 {
    terms
        .iter()
        .map(|&(i, j, w)| if (bits >> i ^ bits >> j) & 1 == 1 { -w } else { w })
        .sum()
}

fn centered_form_bits(terms: &[(usize, usize, f64)], bits: &BitVector) -> f64 {
    terms
        .iter()
        .map(|&(i, j, w)| if bits.get(i) != bits.get(j) { -w } else { w })
        .sum()
}

fn check_order(ell: u32) -> Result<()> {
    if ell < 2 || !ell.is_power_of_two() {
        return Err(invalid(format!("moment order must be a power of two >= 2, got {ell}")));
    }
    Ok(())
}

/// Mean of `f(i)` over `i in 0..count`, chunked and order-stable.
fn stable_mean(count: u64, f: impl Fn(u64) -> Result<f64> + Sync) -> Result<f64> {
    let chunks = count.div_ceil(CHUNK);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut s = CompensatedSum::new();
            for i in c * CHUNK..((c + 1) * CHUNK).min(count) {
                s.add(f(i)?);
            }
            Ok(s.total())
        })
        .collect::<Result<_>>()?;
    Ok(partials.into_iter().collect::<CompensatedSum>().total() / count as f64)
}

/// `E[(zᵀBz - tr B)^ℓ]` over all `2^n` sign vectors.
pub fn exact_moment_uniform(b: &SymmetricMatrix, ell: u32) -> Result<f64> {
    check_order(ell)?;
    if ell > 16 {
        return Err(invalid(format!("exact moments support orders up to 16, got {ell}")));
    }
    if b.n() > MAX_CUBE_DIM {
        return Err(capacity(format!(
            "cube enumeration needs 2^{} points (limit 2^{MAX_CUBE_DIM})",
            b.n()
        )));
    }
    let terms = doubled_upper(b);
    // z and -z give the same form, so half the cube suffices (fix the top sign).
    let half = if b.n() == 0 { 1 } else { 1u64 << (b.n() - 1) };
    stable_mean(half, |w| Ok(centered_form_word(&terms, w).powi(ell as i32)))
}

/// `E[(zᵀBz - tr B)^ℓ]` with every seed of `generator` equally likely.
pub fn exact_moment_space(b: &SymmetricMatrix, ell: u32, generator: &dyn BitGenerator) -> Result<f64> {
    check_order(ell)?;
    if generator.output_bits() != b.n() {
        return Err(invalid(format!(
            "generator emits {} bits, matrix has dimension {}",
            generator.output_bits(),
            b.n()
        )));
    }
    let sb = generator.seed_bits();
    if sb > MAX_SPACE_SEED_BITS {
        return Err(capacity(format!(
            "sample-space enumeration needs 2^{sb} seeds (limit 2^{MAX_SPACE_SEED_BITS})"
        )));
    }
    let terms = doubled_upper(b);
    stable_mean(1u64 << sb, |s| {
        let z = generator.generate_bits(&BitVector::from_u64(s, sb))?;
        Ok(centered_form_bits(&terms, &z).powi(ell as i32))
    })
}

/// Monte Carlo estimate with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub trials: u64,
}

/// Averages over `trials` seeds; seed `i` is drawn from the counter-indexed
/// stream `i` of `master_seed`.
pub fn mc_moment(
    b: &SymmetricMatrix,
    ell: u32,
    generator: &dyn BitGenerator,
    trials: u64,
    master_seed: u64,
) -> Result<McEstimate> {
    check_order(ell)?;
    if trials < 100 {
        return Err(invalid(format!("Monte Carlo needs at least 100 trials, got {trials}")));
    }
    if generator.output_bits() != b.n() {
        return Err(invalid("generator output length differs from matrix dimension"));
    }
    let terms = doubled_upper(b);
    let sb = generator.seed_bits();
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let seed = random_bits(&mut stream(master_seed, Domain::MomentSeed, t), sb);
            let z = generator.generate_bits(&seed)?;
            Ok(centered_form_bits(&terms, &z).powi(ell as i32))
        })
        .collect::<Result<_>>()?;
    let nf = trials as f64;
    let mean = values.iter().copied().collect::<CompensatedSum>().total() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).collect::<CompensatedSum>().total() / (nf - 1.0);
    Ok(McEstimate { mean, half_width: 1.96 * (var / nf).sqrt(), trials })
}

/// `max{√ℓ ‖B‖_{S2}, ℓ ‖B‖_2}`.
fn hw_scale(norms: &MatrixNorms, ell: u32) -> f64 {
    let l = f64::from(ell);
    (l.sqrt() * norms.s2).max(l * norms.op)
}

pub fn hw_bound_from_norms(norms: &MatrixNorms, ell: u32, c: f64) -> f64 {
    (c * hw_scale(norms, ell)).powi(ell as i32)
}

/// `C^ℓ max{√ℓ ‖B‖_{S2}, ℓ ‖B‖_2}^ℓ`.
pub fn hw_bound(b: &SymmetricMatrix, ell: u32, c: f64) -> f64 {
    hw_bound_from_norms(&matrix_norms(b), ell, c)
}

/// `ε ‖B‖_{L1}^ℓ` with `ε = 2^-log2_inv_eps`, evaluated in log space.
pub fn bias_term(l1: f64, ell: u32, log2_inv_eps: f64) -> f64 {
    if l1 == 0.0 || log2_inv_eps == f64::INFINITY {
        return 0.0;
    }
    let exponent = f64::from(ell) * l1.log2() - log2_inv_eps;
    if exponent < -1074.0 {
        0.0
    } else {
        exponent.exp2()
    }
}

pub fn hwb_bound_from_norms(norms: &MatrixNorms, ell: u32, c: f64, log2_inv_eps: f64) -> f64 {
    bias_term(norms.l1, ell, log2_inv_eps) + hw_bound_from_norms(norms, ell, c)
}

/// `ε ‖B‖_{L1}^ℓ + C^ℓ max{√ℓ ‖B‖_{S2}, ℓ ‖B‖_2}^ℓ`.
pub fn hwb_bound(b: &SymmetricMatrix, ell: u32, c: f64, log2_inv_eps: f64) -> f64 {
    hwb_bound_from_norms(&matrix_norms(b), ell, c, log2_inv_eps)
}

/// Smallest `C` with `moment <= hw_bound(B, ℓ, C)`; zero when the bound's
/// scale vanishes.
pub fn min_constant(b: &SymmetricMatrix, ell: u32, moment: f64) -> f64 {
    min_constant_from_norms(&matrix_norms(b), ell, moment)
}

pub fn min_constant_from_norms(norms: &MatrixNorms, ell: u32, moment: f64) -> f64 {
    let scale = hw_scale(norms, ell);
    if scale == 0.0 || moment <= 0.0 {
        0.0
    } else {
        moment.powf(1.0 / f64::from(ell)) / scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentMode {
    ExactCube,
    ExactSpace,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub ell: u32,
    pub moment: f64,
    pub hw_bound: f64,
    pub hwb_bound: f64,
    pub c_hw: f64,
    /// `log2(1/ε)` substituted in the biased bound; `null` for the uniform cube.
    pub log2_inv_eps: Option<f64>,
    pub c_min: f64,
    pub norms: MatrixNorms,
    pub enumeration_count: u64,
    pub mode: MomentMode,
    pub half_width: Option<f64>,
}

impl MomentReport {
    /// Whether the measured moment respects the applicable bound.
    pub fn within_bound(&self) -> bool {
        let bound = if self.log2_inv_eps.is_some() { self.hwb_bound } else { self.hw_bound };
        self.moment <= bound
    }
}

/// Exact moment over the cube or a sample space, packaged with both bounds.
pub fn moment_report(
    b: &SymmetricMatrix,
    ell: u32,
    c_hw: f64,
    generator: Option<&dyn BitGenerator>,
    log2_inv_eps: Option<f64>,
) -> Result<MomentReport> {
    let (moment, mode, count) = match generator {
        None => (exact_moment_uniform(b, ell)?, MomentMode::ExactCube, 1u64 << b.n()),
        Some(g) => (exact_moment_space(b, ell, g)?, MomentMode::ExactSpace, 1u64 << g.seed_bits()),
    };
    Ok(package(b, ell, c_hw, log2_inv_eps, moment, mode, count, None))
}

/// Monte Carlo moment over `generator`, packaged with both bounds.
pub fn moment_report_mc(
    b: &SymmetricMatrix,
    ell: u32,
    c_hw: f64,
    generator: &dyn BitGenerator,
    log2_inv_eps: Option<f64>,
    trials: u64,
    master_seed: u64,
) -> Result<MomentReport> {
    let est = mc_moment(b, ell, generator, trials, master_seed)?;
    Ok(package(b, ell, c_hw, log2_inv_eps, est.mean, MomentMode::MonteCarlo, trials, Some(est.half_width)))
}

#[allow(clippy::too_many_arguments)]
fn package(
    b: &SymmetricMatrix,
    ell: u32,
    c_hw: f64,
    log2_inv_eps: Option<f64>,
    moment: f64,
    mode: MomentMode,
    enumeration_count: u64,
    half_width: Option<f64>,
) -> MomentReport {
    let norms = matrix_norms(b);
    MomentReport {
        n: b.n(),
        ell,
        moment,
        hw_bound: hw_bound_from_norms(&norms, ell, c_hw),
        hwb_bound: hwb_bound_from_norms(&norms, ell, c_hw, log2_inv_eps.unwrap_or(f64::INFINITY)),
        c_hw,
        log2_inv_eps,
        c_min: min_constant_from_norms(&norms, ell, moment.max(0.0)),
        norms,
        enumeration_count,
        mode,
        half_width,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallbias::{PoweringSpec, UniformGenerator};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn swap() -> SymmetricMatrix {
        SymmetricMatrix::from_rows(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap()
    }

    fn gaussian(n: usize, seed: u64) -> SymmetricMatrix {
        let mut rng = stream(seed, Domain::TestVector, 0);
        SymmetricMatrix::from_upper(n, |_, _| rng.sample(StandardNormal))
    }

    // Literal z over the cube, no shortcuts.
    fn brute_moment(b: &SymmetricMatrix, ell: i32) -> f64 {
        let n = b.n();
        let mut total = 0.0;
        for w in 0u64..1 << n {
            let z: Vec<f64> = (0..n).map(|i| if w >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            let mut q = 0.0;
            for i in 0..n {
                for j in 0..n {
                    q += z[i] * b.get(i, j) * z[j];
                }
            }
            total += (q - b.trace()).powi(ell);
        }
        total / (1u64 << n) as f64
    }

    #[test]
    fn uniform_examples() {
        for ell in [2, 4, 8, 16] {
            assert_eq!(exact_moment_uniform(&SymmetricMatrix::identity(5), ell).unwrap(), 0.0);
            let d = SymmetricMatrix::from_upper(4, |i, j| if i == j { i as f64 - 1.5 } else { 0.0 });
            assert_eq!(exact_moment_uniform(&d, ell).unwrap(), 0.0);
        }
        assert_eq!(exact_moment_uniform(&swap(), 2).unwrap(), 4.0);
        assert_eq!(exact_moment_uniform(&swap(), 4).unwrap(), 16.0);
        assert!(exact_moment_uniform(&swap(), 3).is_err());
        assert!(exact_moment_uniform(&swap(), 32).is_err());
        assert!(matches!(
            exact_moment_uniform(&SymmetricMatrix::zeros(23), 2),
            Err(crate::Error::Capacity(_))
        ));
    }

    #[test]
    fn half_cube_matches_brute_force() {
        for s in 0..5 {
            let b = gaussian(7, s);
            for ell in [2u32, 4, 8] {
                let fast = exact_moment_uniform(&b, ell).unwrap();
                let slow = brute_moment(&b, ell as i32);
                assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0), "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn second_moment_closed_form() {
        for s in 0..10 {
            let b = gaussian(9, 50 + s);
            let closed: f64 = 4.0 * (0..9).flat_map(|i| (i + 1..9).map(move |j| (i, j))).map(|(i, j)| b.get(i, j).powi(2)).sum::<f64>();
            let exact = exact_moment_uniform(&b, 2).unwrap();
            assert!((exact - closed).abs() <= 1e-9 * closed);
        }
    }

    #[test]
    fn uniform_stub_space_matches_cube() {
        let b = gaussian(8, 3);
        for ell in [2, 4, 8] {
            let cube = exact_moment_uniform(&b, ell).unwrap();
            let space = exact_moment_space(&b, ell, &UniformGenerator { n_bits: 8 }).unwrap();
            assert!((cube - space).abs() <= 1e-9 * cube);
        }
    }

    #[test]
    fn space_moment_diagonal_and_bounds() {
        let gen = PoweringSpec::new(8, 6).unwrap();
        let d = SymmetricMatrix::from_upper(8, |i, j| if i == j { 2.0 } else { 0.0 });
        assert_eq!(exact_moment_space(&d, 4, &gen).unwrap(), 0.0);
        let b = gaussian(8, 77);
        let m = exact_moment_space(&b, 4, &gen).unwrap();
        let eps = gen.bias_bound().log2_inv();
        assert!(m <= hwb_bound(&b, 4, 8.0, eps));
        assert!(exact_moment_space(&gaussian(7, 1), 2, &gen).is_err());
    }

    #[test]
    fn global_sign_flip_invariance() {
        // The flipped space: every output bit complemented.
        struct Flipped<'a>(&'a PoweringSpec);
        impl BitGenerator for Flipped<'_> {
            fn output_bits(&self) -> usize {
                self.0.output_bits()
            }
            fn seed_bits(&self) -> usize {
                self.0.seed_bits()
            }
            fn generate_bits(&self, seed: &BitVector) -> Result<BitVector> {
                let b = self.0.generate_bits(seed)?;
                Ok(BitVector::from_bits(&b.iter().map(|x| !x).collect::<Vec<_>>()))
            }
            fn bias_bound(&self) -> crate::smallbias::Dyadic {
                self.0.bias_bound()
            }
        }
        let gen = PoweringSpec::new(6, 5).unwrap();
        let b = gaussian(6, 8);
        for ell in [2, 4] {
            assert_eq!(
                exact_moment_space(&b, ell, &gen).unwrap(),
                exact_moment_space(&b, ell, &Flipped(&gen)).unwrap()
            );
        }
    }

    #[test]
    fn mc_examples() {
        let d = SymmetricMatrix::identity(6);
        let est = mc_moment(&d, 2, &UniformGenerator { n_bits: 6 }, 200, 1).unwrap();
        assert_eq!((est.mean, est.half_width), (0.0, 0.0));
        assert!(mc_moment(&d, 2, &UniformGenerator { n_bits: 6 }, 99, 1).is_err());

        let gen = PoweringSpec::new(8, 6).unwrap();
        let b = gaussian(8, 4);
        let exact = exact_moment_space(&b, 2, &gen).unwrap();
        let est = mc_moment(&b, 2, &gen, 4000, 9).unwrap();
        assert!((est.mean - exact).abs() <= 3.0 * est.half_width, "{est:?} vs {exact}");
        let wider = mc_moment(&b, 2, &gen, 8000, 9).unwrap();
        let ratio = wider.half_width / est.half_width;
        assert!((ratio - 0.5f64.sqrt()).abs() <= 0.2 * 0.5f64.sqrt(), "ratio {ratio}");
    }

    #[test]
    fn bound_examples() {
        assert!((hw_bound(&swap(), 2, 1.0) - 4.0).abs() < 1e-12);
        assert_eq!(hw_bound(&SymmetricMatrix::zeros(3), 4, 8.0), 0.0);
        assert_eq!(hwb_bound(&SymmetricMatrix::zeros(3), 4, 8.0, 2.0), 0.0);
        let b = gaussian(5, 2);
        let t = 1.7;
        let ratio = hw_bound(&b.scaled(t), 4, 3.0) / hw_bound(&b, 4, 3.0);
        assert!((ratio - t.powi(4)).abs() < 1e-9 * t.powi(4));
        assert!((hwb_bound(&swap(), 2, 1.0, 2.0) - 5.0).abs() < 1e-12);
        assert_eq!(hwb_bound(&swap(), 2, 1.0, f64::INFINITY), hw_bound(&swap(), 2, 1.0));
        // ε term underflows rather than poisoning the sum
        assert_eq!(bias_term(4.0, 128, 5000.0), 0.0);
        assert!(bias_term(4.0, 128, 200.0) > 0.0);
    }

    #[test]
    fn min_constant_examples() {
        assert!((min_constant(&swap(), 2, 4.0) - 1.0).abs() < 1e-12);
        assert_eq!(min_constant(&swap(), 2, 0.0), 0.0);
        assert_eq!(min_constant(&SymmetricMatrix::zeros(2), 2, 1.0), 0.0);
        for s in 0..6 {
            let b = gaussian(10, 300 + s);
            for ell in [2, 4, 8] {
                let m = exact_moment_uniform(&b, ell).unwrap();
                assert!(min_constant(&b, ell, m) <= 8.0);
            }
        }
    }

    #[test]
    fn norm_examples() {
        let id = matrix_norms(&SymmetricMatrix::identity(3));
        assert_eq!((id.l1, id.op, id.trace), (3.0, 1.0, 3.0));
        assert!((id.s2 - 3f64.sqrt()).abs() < 1e-15);
        let sw = matrix_norms(&swap());
        assert!((sw.op - 1.0).abs() < 1e-14 && sw.trace == 0.0 && sw.l1 == 2.0);
        let x = [0.6, 0.0, 0.8];
        let r1 = matrix_norms(&SymmetricMatrix::from_upper(3, |i, j| x[i] * x[j]));
        assert!((r1.op - 1.0).abs() < 1e-12 && (r1.s2 - 1.0).abs() < 1e-12 && (r1.trace - 1.0).abs() < 1e-12);
    }

    // Expands (zᵀBz - tr B)^ℓ over index sequences of off-diagonal pairs and
    // splits them by whether every coordinate appears an even number of times.
    #[test]
    fn even_pair_sequences_carry_the_uniform_moment() {
        let n = 3;
        let b = gaussian(n, 21);
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
        for ell in [2u32, 4] {
            let mut even_sum = 0.0;
            let mut odd_sum_uniform = 0.0;
            let total = pairs.len().pow(ell);
            for code in 0..total {
                let mut c = code;
                let mut counts = vec![0usize; n];
                let mut weight = 1.0;
                let mut seq = Vec::new();
                for _ in 0..ell {
                    let (i, j) = pairs[c % pairs.len()];
                    c /= pairs.len();
                    counts[i] += 1;
                    counts[j] += 1;
                    weight *= b.get(i, j);
                    seq.push((i, j));
                }
                if counts.iter().all(|k| k % 2 == 0) {
                    even_sum += weight;
                } else {
                    // uniform expectation of the sign product is zero
                    let mut avg = 0.0;
                    for w in 0u64..1 << n {
                        let sgn: f64 = seq
                            .iter()
                            .map(|&(i, j)| if (w >> i ^ w >> j) & 1 == 1 { -1.0 } else { 1.0 })
                            .product();
                        avg += sgn;
                    }
                    odd_sum_uniform += weight * avg;
                }
            }
            let exact = exact_moment_uniform(&b, ell).unwrap();
            assert!((even_sum - exact).abs() < 1e-9 * exact.max(1.0));
            assert_eq!(odd_sum_uniform, 0.0);
        }
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let b = gaussian(14, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| exact_moment_uniform(&b, 8).unwrap())
        };
        assert_eq!(run(1).to_bits(), run(4).to_bits());
    }
}
