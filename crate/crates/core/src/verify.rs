//! End-to-end checks: exact RIP constants by subset enumeration, JL tail
//! rates, orthogonal matching pursuit, and randomness accounting.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{capacity, invalid, Error, Result};
use crate::kwise::{Mode, SignVector};
use crate::linalg::{dot, jacobi_eigen, DenseMatrix, SymmetricMatrix};
use crate::ripmatrix::{
    choose_params, matrix_generator, quadratic_form, sample_from, ParamOverrides, RipMatrix,
    RipParams, SparseVector,
};
use crate::rng::{derive_seed, independent_signs, stream, Domain};

pub const MAX_EIG_DIM: usize = 64;
pub const MAX_RIP_SUBSETS: u128 = 10_000_000;

/// `(λ_min, λ_max)` of a small symmetric matrix.
pub fn extreme_eigs(g: &SymmetricMatrix) -> Result<(f64, f64)> {
    if g.n() == 0 || g.n() > MAX_EIG_DIM {
        return Err(invalid(format!("eigen solver supports 1..={MAX_EIG_DIM} rows, got {}", g.n())));
    }
    let e = jacobi_eigen(g)?;
    Ok((e.min(), e.max()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub delta_k: f64,
    pub argmax_subset: Vec<usize>,
    pub subsets_examined: u64,
    pub wall_time_ms: f64,
    /// Per-subset `δ` in lexicographic order, when requested.
    #[serde(skip)]
    pub per_subset: Option<Vec<(Vec<usize>, f64)>>,
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Distance of the Gram submatrix on `subset` from the identity.
fn subset_delta(gram: &SymmetricMatrix, subset: &[usize]) -> Result<f64> {
    if let [i] = subset {
        return Ok((gram.get(*i, *i) - 1.0).abs());
    }
    let sub = SymmetricMatrix::from_upper(subset.len(), |a, b| gram.get(subset[a], subset[b]));
    let (lo, hi) = extreme_eigs(&sub)?;
    Ok((1.0 - lo).max(hi - 1.0))
}

/// Calls `f` on every increasing `k`-subset of `lo..n` extending `prefix`.
fn for_each_extension(
    prefix: &mut Vec<usize>,
    lo: usize,
    n: usize,
    k: usize,
    f: &mut impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    if prefix.len() == k {
        return f(prefix);
    }
    let need = k - prefix.len();
    for i in lo..=n - need {
        prefix.push(i);
        for_each_extension(prefix, i + 1, n, k, f)?;
        prefix.pop();
    }
    Ok(())
}

/// `δ_k = max_T max(1 - λ_min, λ_max - 1)` of `Φ_Tᵀ Φ_T` over all `k`-subsets.
/// Subset indices in the report are 0-based column indices.
pub fn rip_constant_exact(phi: &DenseMatrix, k: usize, keep_per_subset: bool) -> Result<RipReport> {
    let n = phi.cols();
    if k == 0 || k > n || k > MAX_EIG_DIM {
        return Err(invalid(format!("sparsity k = {k} must lie in 1..={}", n.min(MAX_EIG_DIM))));
    }
    let total = binomial(n as u128, k as u128);
    if total > MAX_RIP_SUBSETS {
        return Err(capacity(format!(
            "C({n}, {k}) = {total} subsets exceeds {MAX_RIP_SUBSETS}; subsample subsets instead"
        )));
    }
    let start = Instant::now();
    let gram = phi.gram();

    type Partial = (f64, Vec<usize>, u64, Vec<(Vec<usize>, f64)>);
    let partials: Vec<Partial> = (0..=n - k)
        .into_par_iter()
        .map(|first| {
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let mut count = 0u64;
            let mut listing = Vec::new();
            let mut prefix = vec![first];
            for_each_extension(&mut prefix, first + 1, n, k, &mut |s| {
                let d = subset_delta(&gram, s)?;
                count += 1;
                if d > best.0 {
                    best = (d, s.to_vec());
                }
                if keep_per_subset {
                    listing.push((s.to_vec(), d));
                }
                Ok(())
            })?;
            Ok((best.0, best.1, count, listing))
        })
        .collect::<Result<_>>()?;

    let mut delta = f64::NEG_INFINITY;
    let mut arg = Vec::new();
    let mut examined = 0;
    let mut per_subset = keep_per_subset.then(Vec::new);
    for (d, s, c, listing) in partials {
        examined += c;
        if d > delta {
            delta = d;
            arg = s;
        }
        if let Some(all) = per_subset.as_mut() {
            all.extend(listing);
        }
    }
    Ok(RipReport {
        n,
        k,
        q: phi.rows(),
        delta_k: delta,
        argmax_subset: arg,
        subsets_examined: examined,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        per_subset,
    })
}

/// Where the signs of each sampled matrix come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignSource {
    /// The seeded construction in the given mode.
    Biased(Mode),
    /// Fully independent signs from the harness RNG; outside the randomness budget.
    Independent,
}

/// Draws trial `index` of an experiment.
pub struct MatrixSampler {
    params: RipParams,
    source: SignSource,
    generator: Option<crate::kwise::KwiseGenerator>,
}

impl MatrixSampler {
    pub fn new(params: &RipParams, source: SignSource) -> Result<Self> {
        let generator = match source {
            SignSource::Biased(mode) => Some(matrix_generator(params, mode)?),
            SignSource::Independent => None,
        };
        Ok(Self { params: *params, source, generator })
    }

    pub fn signs(&self, master_seed: u64, index: u64) -> Result<SignVector> {
        match &self.generator {
            Some(g) => {
                let seed = derive_seed(master_seed, index, g.spec().seed_bits as usize);
                g.generate(&seed)
            }
            None => Ok(independent_signs(master_seed, index, self.params.q * self.params.n)),
        }
    }

    pub fn matrix(&self, master_seed: u64, index: u64) -> Result<RipMatrix> {
        match &self.generator {
            Some(g) => {
                let seed = derive_seed(master_seed, index, g.spec().seed_bits as usize);
                sample_from(g, &self.params, &seed)
            }
            None => RipMatrix::from_signs(self.params.q, self.params.n, self.signs(master_seed, index)?),
        }
    }

    pub fn source(&self) -> SignSource {
        self.source
    }
}

/// Wilson score interval at 95%.
pub fn binomial_band(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Two-proportion test at 95%: can `a/na` and `b/nb` come from one rate?
pub fn rates_consistent(a: u64, na: u64, b: u64, nb: u64) -> bool {
    let (pa, pb) = (a as f64 / na as f64, b as f64 / nb as f64);
    let pooled = (a + b) as f64 / (na + nb) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
    if se == 0.0 {
        return pa == pb;
    }
    ((pa - pb) / se).abs() <= 1.96
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlReport {
    pub params: RipParams,
    pub source: SignSource,
    pub x: SparseVector,
    pub eta: f64,
    pub trials: u64,
    pub failures: u64,
    pub failure_rate: f64,
    pub band_low: f64,
    pub band_high: f64,
}

/// Fraction of sampled matrices with `|‖Φx‖² - 1| >= η`.
pub fn jl_tail(
    params: &RipParams,
    source: SignSource,
    x: &SparseVector,
    eta: f64,
    trials: u64,
    master_seed: u64,
) -> Result<JlReport> {
    if trials < 100 {
        return Err(invalid(format!("tail estimates need at least 100 trials, got {trials}")));
    }
    if x.len() != params.n {
        return Err(invalid("test vector length differs from N"));
    }
    if !x.is_unit() {
        return Err(invalid("test vector must be a unit vector"));
    }
    let sampler = MatrixSampler::new(params, source)?;
    let failures: u64 = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<u64> {
            let z = sampler.signs(master_seed, t)?;
            let v = quadratic_form(&z, x, params.q)?;
            Ok(u64::from((v - 1.0).abs() >= eta))
        })
        .sum::<Result<u64>>()?;
    let (band_low, band_high) = binomial_band(failures, trials);
    Ok(JlReport {
        params: *params,
        source,
        x: x.clone(),
        eta,
        trials,
        failures,
        failure_rate: failures as f64 / trials as f64,
        band_low,
        band_high,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlSweepReport {
    pub points: Vec<JlReport>,
    /// `ĉ` in `rate ≈ exp(-ĉ Q η²)`, least squares through the origin on
    /// `ln(rate)` over points with at least five failures.
    pub c_hat: Option<f64>,
    pub fitted_points: usize,
}

pub const MIN_FAILURES_FOR_FIT: u64 = 5;

pub fn fit_tail_exponent(points: &[JlReport]) -> (Option<f64>, usize) {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.failures >= MIN_FAILURES_FOR_FIT)
        .map(|p| (p.params.q as f64 * p.eta * p.eta, p.failure_rate.ln()))
        .collect();
    if usable.is_empty() {
        return (None, 0);
    }
    let sxy: f64 = usable.iter().map(|(a, b)| a * b).sum();
    let sxx: f64 = usable.iter().map(|(a, _)| a * a).sum();
    (Some(-sxy / sxx), usable.len())
}

/// `jl_tail` at each `Q` in `qs`, with `ℓ` and ε re-derived per `Q`.
#[allow(clippy::too_many_arguments)]
pub fn jl_sweep(
    n: usize,
    k: usize,
    qs: &[usize],
    overrides: ParamOverrides,
    source: SignSource,
    x: &SparseVector,
    eta: f64,
    trials: u64,
    master_seed: u64,
) -> Result<JlSweepReport> {
    let points = qs
        .iter()
        .map(|&q| {
            let params = choose_params(n, k, eta, ParamOverrides { q: Some(q), ..overrides })?;
            jl_tail(&params, source, x, eta, trials, master_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let (c_hat, fitted_points) = fit_tail_exponent(&points);
    Ok(JlSweepReport { points, c_hat, fitted_points })
}

/// Greedy sparse recovery: pick the column most correlated with the
/// residual, refit by least squares on the chosen support, repeat `k` times.
pub fn omp_recover(phi: &DenseMatrix, y: &[f64], k: usize) -> Result<SparseVector> {
    if y.len() != phi.rows() {
        return Err(invalid(format!("measurement has length {}, expected {}", y.len(), phi.rows())));
    }
    if k == 0 || k > phi.cols() || k > MAX_EIG_DIM {
        return Err(invalid(format!("sparsity k = {k} out of range")));
    }
    let y_norm = dot(y, y).sqrt();
    let mut support: Vec<usize> = Vec::with_capacity(k);
    let mut coef: Vec<f64> = Vec::new();
    let mut residual = y.to_vec();
    for _ in 0..k {
        if dot(&residual, &residual).sqrt() <= 1e-14 * y_norm.max(f64::MIN_POSITIVE) {
            break;
        }
        let corr = phi.tmatvec(&residual);
        let next = (0..phi.cols())
            .filter(|j| !support.contains(j))
            .fold(None, |best: Option<(usize, f64)>, j| {
                let c = corr[j].abs();
                match best {
                    Some((_, b)) if b >= c => best,
                    _ => Some((j, c)),
                }
            })
            .map(|(j, _)| j)
            .expect("k <= N leaves an unselected column");
        support.push(next);
        coef = least_squares(phi, &support, y)?;
        residual = y.to_vec();
        for (&j, &c) in support.iter().zip(&coef) {
            for (r, a) in residual.iter_mut().zip(phi.col(j)) {
                *r -= c * a;
            }
        }
    }
    let mut entries: Vec<(usize, f64)> = support.into_iter().zip(coef).collect();
    entries.sort_by_key(|&(i, _)| i);
    SparseVector::new(phi.cols(), entries)
}

/// Relative eigenvalue floor below which a support's Gram matrix is singular.
pub const GRAM_TOLERANCE: f64 = 1e-10;

/// Normal equations solved through the Jacobi eigendecomposition.
fn least_squares(phi: &DenseMatrix, support: &[usize], y: &[f64]) -> Result<Vec<f64>> {
    let s = support.len();
    let g = SymmetricMatrix::from_upper(s, |a, b| dot(phi.col(support[a]), phi.col(support[b])));
    let rhs: Vec<f64> = support.iter().map(|&j| dot(phi.col(j), y)).collect();
    let e = jacobi_eigen(&g)?;
    let (lo, hi) = (e.min(), e.max());
    if hi <= 0.0 || lo <= GRAM_TOLERANCE * hi {
        return Err(Error::DegenerateSupport(format!(
            "Gram matrix of support {support:?} has eigenvalues in [{lo:e}, {hi:e}]"
        )));
    }
    let mut c = vec![0.0; s];
    for (m, &lambda) in e.values.iter().enumerate() {
        let proj: f64 = (0..s).map(|i| e.vectors.get(i, m) * rhs[i]).sum::<f64>() / lambda;
        for (i, ci) in c.iter_mut().enumerate() {
            *ci += e.vectors.get(i, m) * proj;
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub params: RipParams,
    pub source: SignSource,
    pub trials: u64,
    pub exact_support: u64,
    pub success_rate: f64,
    pub max_coefficient_error: f64,
}

/// Random `k`-sparse signal with standard normal entries on a uniform support.
pub fn random_sparse(n: usize, k: usize, master_seed: u64, index: u64) -> SparseVector {
    let mut rng = stream(master_seed, Domain::TestVector, index);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    let entries = idx.into_iter().map(|i| (i, rng.sample(StandardNormal))).collect();
    SparseVector::new(n, entries).expect("sorted distinct indices")
}

/// Noiseless OMP recovery over `trials` independent (matrix, signal) draws.
pub fn recovery_experiment(
    params: &RipParams,
    source: SignSource,
    trials: u64,
    master_seed: u64,
) -> Result<RecoveryReport> {
    let sampler = MatrixSampler::new(params, source)?;
    let outcomes: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let phi = sampler.matrix(master_seed, t)?.to_dense();
            let x = random_sparse(params.n, params.k, master_seed, t);
            let y = phi.matvec(&x.to_dense());
            let est = match omp_recover(&phi, &y, params.k) {
                Ok(e) => e,
                Err(Error::DegenerateSupport(_)) => return Ok((false, f64::INFINITY)),
                Err(e) => return Err(e),
            };
            let err = x
                .to_dense()
                .iter()
                .zip(est.to_dense())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            Ok((est.support() == x.support(), err))
        })
        .collect::<Result<_>>()?;
    let exact = outcomes.iter().filter(|(ok, _)| *ok).count() as u64;
    Ok(RecoveryReport {
        params: *params,
        source,
        trials,
        exact_support: exact,
        success_rate: exact as f64 / trials.max(1) as f64,
        max_coefficient_error: outcomes
            .iter()
            .filter(|(ok, _)| *ok)
            .map(|(_, e)| *e)
            .fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub params: RipParams,
    pub mode: Mode,
    pub seed_bits: u64,
    /// `N·Q` bits for fully independent signs.
    pub naive_bits: u64,
    /// `seed_bits / (k · log2(N/k) · log2 k)`; `null` when `k = 1`.
    pub ratio: Option<f64>,
    pub fraction_of_naive: f64,
}

pub fn randomness_budget(params: &RipParams, mode: Mode) -> Result<BudgetReport> {
    let seed_bits = params.seed_bits(mode)?;
    let naive_bits = params.n_bits();
    let (n, k) = (params.n as f64, params.k as f64);
    let norm = k * (n / k).log2() * k.log2();
    Ok(BudgetReport {
        params: *params,
        mode,
        seed_bits,
        naive_bits,
        ratio: (norm > 0.0).then(|| seed_bits as f64 / norm),
        fraction_of_naive: seed_bits as f64 / naive_bits as f64,
    })
}
