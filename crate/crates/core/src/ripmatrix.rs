//! Parameter selection, matrix sampling, and the block quadratic form.
//!
//! A matrix `Φ ∈ {±1/√Q}^{Q×N}` is read row-major out of a sign vector
//! `z ∈ {±1}^{QN}`. For a unit `x`, `‖Φx‖² = zᵀ B_x z` where `B_x` is
//! block-diagonal with `Q` copies of `x xᵀ / Q`; `B_x` is never materialized.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kwise::{GeneratorSpec, KwiseGenerator, Mode, SignVector};
use crate::linalg::{DenseMatrix, MatrixNorms};
use crate::smallbias::BitVector;

pub const DEFAULT_C_Q: f64 = 16.0;
pub const DEFAULT_C_ELL: f64 = 0.125;
pub const DEFAULT_C_HW: f64 = 8.0;

/// Problem and construction parameters.
///
/// `Q = ceil(C_Q · η⁻² · k · ln(N/k))`, `ℓ` is the smallest power of two at
/// least `max(2, C_ℓ · Q · η²)`, and the generator bias is
/// `ε = (k²Q/ℓ)^{-ℓ/2}`, stored as `ceil((ℓ/2) · log2(k²Q/ℓ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RipParams {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub eta: f64,
    #[serde(rename = "Q")]
    pub q: usize,
    pub ell: usize,
    pub log2_inv_eps: u64,
    #[serde(rename = "C_Q")]
    pub c_q: f64,
    #[serde(rename = "C_ell")]
    pub c_ell: f64,
    #[serde(rename = "C_hw")]
    pub c_hw: f64,
    /// Fitted tail exponent, filled in after experiments; never used for sizing.
    pub c_jl: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamOverrides {
    pub q: Option<usize>,
    pub ell: Option<usize>,
    pub c_q: Option<f64>,
    pub c_ell: Option<f64>,
    pub c_hw: Option<f64>,
}

impl RipParams {
    /// Sign-vector length `QN`.
    pub fn n_bits(&self) -> u64 {
        self.q as u64 * self.n as u64
    }

    /// Parity limit provisioned for the generator: `2ℓ`, since the ℓ-th
    /// moment of the quadratic form touches products of up to `2ℓ` signs.
    pub fn parity_limit(&self) -> u64 {
        2 * self.ell as u64
    }

    pub fn generator_spec(&self, mode: Mode) -> Result<GeneratorSpec> {
        GeneratorSpec::new(mode, self.n_bits(), self.parity_limit(), self.log2_inv_eps)
    }

    pub fn seed_bits(&self, mode: Mode) -> Result<u64> {
        Ok(self.generator_spec(mode)?.seed_bits)
    }
}

pub fn choose_params(n: usize, k: usize, eta: f64, overrides: ParamOverrides) -> Result<RipParams> {
    if k == 0 || k >= n {
        return Err(invalid(format!("need 1 <= k < N, got k={k}, N={n}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    let c_q = overrides.c_q.unwrap_or(DEFAULT_C_Q);
    let c_ell = overrides.c_ell.unwrap_or(DEFAULT_C_ELL);
    let c_hw = overrides.c_hw.unwrap_or(DEFAULT_C_HW);
    for (name, c) in [("C_Q", c_q), ("C_ell", c_ell), ("C_hw", c_hw)] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid(format!("{name} must be positive, got {c}")));
        }
    }

    let q = match overrides.q {
        Some(q) => q,
        None => (c_q * k as f64 * (n as f64 / k as f64).ln() / (eta * eta)).ceil() as usize,
    };
    if q == 0 {
        return Err(invalid("Q must be at least 1"));
    }
    let ell = match overrides.ell {
        Some(l) => {
            if l < 2 || !l.is_power_of_two() {
                return Err(invalid(format!("ell must be a power of two >= 2, got {l}")));
            }
            l
        }
        None => {
            let target = (c_ell * q as f64 * eta * eta).max(2.0);
            let mut l = 2usize;
            while (l as f64) < target {
                l *= 2;
            }
            l
        }
    };
    if q < ell {
        return Err(invalid(format!("Q = {q} must be at least ell = {ell}")));
    }
    let ratio = (k * k) as f64 * q as f64 / ell as f64;
    if ratio <= 1.0 {
        return Err(invalid(format!("k^2 Q / ell = {ratio} must exceed 1")));
    }
    let log2_inv_eps = ((ell as f64 / 2.0) * ratio.log2()).ceil() as u64;
    Ok(RipParams { n, k, eta, q, ell, log2_inv_eps, c_q, c_ell, c_hw, c_jl: None })
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    #[serde(rename = "N")]
    n: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(n: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(invalid("sparse indices must be strictly increasing"));
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= n {
                return Err(invalid(format!("index {i} out of range for length {n}")));
            }
        }
        if entries.iter().any(|(_, v)| !v.is_finite()) {
            return Err(invalid("sparse entries must be finite"));
        }
        Ok(Self { n, entries })
    }

    pub fn zero(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    pub fn basis(n: usize, i: usize) -> Result<Self> {
        Self::new(n, vec![(i, 1.0)])
    }

    /// Nonzero entries of a dense vector.
    pub fn from_dense(values: &[f64]) -> Self {
        let entries = values.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
        Self { n: values.len(), entries }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn support(&self) -> Vec<usize> {
        self.entries.iter().map(|&(i, _)| i).collect()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn norm2(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn norm1(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v.abs()).sum()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm2() - 1.0).abs() <= 1e-12
    }

    pub fn normalized(&self) -> Result<Self> {
        let nrm = self.norm2();
        if nrm == 0.0 {
            return Err(invalid("cannot normalize the zero vector"));
        }
        Ok(Self { n: self.n, entries: self.entries.iter().map(|&(i, v)| (i, v / nrm)).collect() })
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for &(i, v) in &self.entries {
            d[i] = v;
        }
        d
    }
}

/// `Q × N` sign matrix with entries `±1/√Q`, plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RipMatrix {
    q: usize,
    n: usize,
    signs: SignVector,
    generator: Option<GeneratorSpec>,
    seed: Option<BitVector>,
}

impl RipMatrix {
    /// Row-major sign vector of length `QN`, no provenance.
    pub fn from_signs(q: usize, n: usize, signs: SignVector) -> Result<Self> {
        if q == 0 || n == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if signs.len() != q * n {
            return Err(invalid(format!("sign vector has {} entries, need {}", signs.len(), q * n)));
        }
        Ok(Self { q, n, signs, generator: None, seed: None })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.q as f64).sqrt()
    }

    pub fn signs(&self) -> &SignVector {
        &self.signs
    }

    pub fn generator(&self) -> Option<&GeneratorSpec> {
        self.generator.as_ref()
    }

    pub fn seed(&self) -> Option<&BitVector> {
        self.seed.as_ref()
    }

    #[inline]
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.signs.sign(row * self.n + col) * self.scale()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.q).map(|r| self.entry(r, col)).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.q, self.n, |r, c| self.entry(r, c))
    }

    /// Serialized matrix file (compact JSON, trailing newline).
    pub fn to_json(&self) -> String {
        let file = MatrixFile {
            magic: MAGIC.to_string(),
            n: self.n,
            q: self.q,
            scale_denominator_sqrt: self.q,
            generator: self.generator,
            seed_hex: self.seed.as_ref().map(BitVector::to_hex),
            signs_base64: BASE64.encode(self.signs.bits().as_bytes()),
        };
        let mut s = serde_json::to_string(&file).expect("matrix file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MatrixFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if file.magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", file.magic)));
        }
        if file.scale_denominator_sqrt != file.q {
            return Err(Error::Format("scale_denominator_sqrt must equal Q".into()));
        }
        let bytes = BASE64
            .decode(file.signs_base64.as_bytes())
            .map_err(|e| Error::Format(format!("signs_base64: {e}")))?;
        let bits = BitVector::from_bytes(bytes, file.q * file.n)
            .map_err(|e| Error::Format(e.to_string()))?;
        let seed = match (&file.generator, &file.seed_hex) {
            (Some(g), Some(h)) => {
                if g.n_bits != (file.q * file.n) as u64 {
                    return Err(Error::Format("generator output length differs from QN".into()));
                }
                Some(BitVector::from_hex(h, g.seed_bits as usize).map_err(|e| Error::Format(e.to_string()))?)
            }
            (None, None) => None,
            _ => return Err(Error::Format("generator and seed_hex must appear together".into())),
        };
        let mut m = Self::from_signs(file.q, file.n, SignVector::from_bits(bits))?;
        m.generator = file.generator;
        m.seed = seed;
        Ok(m)
    }

    /// Regenerates the signs from the recorded generator and seed.
    pub fn provenance_matches(&self) -> Result<bool> {
        match (&self.generator, &self.seed) {
            (Some(g), Some(s)) => Ok(g.build()?.generate(s)? == self.signs),
            _ => Ok(false),
        }
    }
}

const MAGIC: &str = "BRIP1";

#[derive(Serialize, Deserialize)]
struct MatrixFile {
    magic: String,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "Q")]
    q: usize,
    scale_denominator_sqrt: usize,
    generator: Option<GeneratorSpec>,
    seed_hex: Option<String>,
    signs_base64: String,
}

/// Builds the generator for a parameter set.
pub fn matrix_generator(params: &RipParams, mode: Mode) -> Result<KwiseGenerator> {
    params.generator_spec(mode)?.build()
}

/// Draws `Φ` from an already-built generator.
pub fn sample_from(gen: &KwiseGenerator, params: &RipParams, seed: &BitVector) -> Result<RipMatrix> {
    let signs = gen.generate(seed)?;
    let mut m = RipMatrix::from_signs(params.q, params.n, signs)?;
    m.generator = Some(*gen.spec());
    m.seed = Some(seed.clone());
    Ok(m)
}

pub fn sample_matrix(params: &RipParams, mode: Mode, seed: &BitVector) -> Result<RipMatrix> {
    let spec = params.generator_spec(mode)?;
    if seed.len() as u64 != spec.seed_bits {
        return Err(invalid(format!(
            "seed has {} bits, this construction requires exactly {}",
            seed.len(),
            spec.seed_bits
        )));
    }
    sample_from(&spec.build()?, params, seed)
}

fn check_dims(n: usize, x: &SparseVector) -> Result<()> {
    if x.len() != n {
        return Err(invalid(format!("vector length {} does not match N = {n}", x.len())));
    }
    Ok(())
}

/// `Φx` in `O(Q · nnz(x))`.
pub fn apply(phi: &RipMatrix, x: &SparseVector) -> Result<Vec<f64>> {
    check_dims(phi.n, x)?;
    let scale = phi.scale();
    Ok((0..phi.q)
        .map(|r| {
            let base = r * phi.n;
            x.entries().iter().map(|&(i, v)| phi.signs.sign(base + i) * v).sum::<f64>() * scale
        })
        .collect())
}

/// `zᵀ B_x z = Σ_b (z_b · x)² / Q` over the `Q` blocks of `z`.
pub fn quadratic_form(z: &SignVector, x: &SparseVector, q: usize) -> Result<f64> {
    let n = x.len();
    if q == 0 || z.len() != q * n {
        return Err(invalid(format!("sign vector length {} is not Q·N = {}·{n}", z.len(), q)));
    }
    let total: f64 = (0..q)
        .map(|b| {
            let d: f64 = x.entries().iter().map(|&(i, v)| z.sign(b * n + i) * v).sum();
            d * d
        })
        .sum();
    Ok(total / q as f64)
}

/// Closed-form norms of `B_x` and the sparsity bound
/// `‖B_x‖_{L1} ≤ k √Q ‖B_x‖_{S2}` with `k = nnz(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockNorms {
    pub norms: MatrixNorms,
    pub support: usize,
    pub l1_bound: f64,
    pub l1_within_bound: bool,
}

pub fn block_norms(x: &SparseVector, q: usize) -> Result<BlockNorms> {
    if !x.is_unit() {
        return Err(invalid(format!("x must be a unit vector, ‖x‖ = {}", x.norm2())));
    }
    if q == 0 {
        return Err(invalid("Q must be positive"));
    }
    let sq = x.norm2().powi(2);
    let qf = q as f64;
    let norms = MatrixNorms { l1: x.norm1().powi(2), s2: sq / qf.sqrt(), op: sq / qf, trace: sq };
    let support = x.nnz();
    let l1_bound = support as f64 * qf.sqrt() * norms.s2;
    Ok(BlockNorms {
        norms,
        support,
        l1_bound,
        l1_within_bound: norms.l1 <= l1_bound * (1.0 + 1e-12),
    })
}
