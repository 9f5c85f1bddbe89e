use std::cmp::Ordering;

use biased_rip::kwise::verify_embedding_rank;
use biased_rip::moments::{exact_moment_space, hwb_bound, moment_report};
use biased_rip::ripmatrix::{apply, choose_params, quadratic_form, sample_matrix, ParamOverrides};
use biased_rip::rng::{derive_seed, stream, Domain};
use biased_rip::smallbias::{audit_bias_exhaustive, sb_bias_rootcount, UniformGenerator};
use biased_rip::verify::{jl_tail, omp_recover, randomness_budget, rip_constant_exact, MatrixSampler, SignSource};
use biased_rip::{
    BitGenerator, BitVector, Error, GeneratorSpec, Mode, PoweringSpec, RipMatrix, SparseVector, SymmetricMatrix,
};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn small_params() -> biased_rip::RipParams {
    choose_params(32, 3, 0.5, ParamOverrides { q: Some(24), ..Default::default() }).unwrap()
}

#[test]
fn sampled_matrix_survives_file_roundtrip() {
    let params = small_params();
    let bits = params.seed_bits(Mode::Composed).unwrap() as usize;
    let seed = derive_seed(11, 0, bits);
    let phi = sample_matrix(&params, Mode::Composed, &seed).unwrap();
    let text = phi.to_json();
    let back = RipMatrix::from_json(&text).unwrap();
    assert_eq!(back.to_json(), text);
    assert!(back.provenance_matches().unwrap());
    for r in 0..phi.q() {
        for c in 0..phi.n() {
            assert_eq!(back.entry(r, c), phi.entry(r, c));
        }
    }
}

#[test]
fn tampered_signs_break_provenance() {
    let params = small_params();
    let bits = params.seed_bits(Mode::Direct).unwrap() as usize;
    let phi = sample_matrix(&params, Mode::Direct, &derive_seed(5, 0, bits)).unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&phi.to_json()).unwrap();
    let other = sample_matrix(&params, Mode::Direct, &derive_seed(5, 1, bits)).unwrap();
    let other_value: serde_json::Value = serde_json::from_str(&other.to_json()).unwrap();
    value["signs_base64"] = other_value["signs_base64"].clone();
    let tampered = RipMatrix::from_json(&value.to_string()).unwrap();
    assert!(!tampered.provenance_matches().unwrap());
}

#[test]
fn seed_length_is_enforced() {
    let params = small_params();
    let bits = params.seed_bits(Mode::Composed).unwrap() as usize;
    let err = sample_matrix(&params, Mode::Composed, &BitVector::zeros(bits + 1)).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn large_parameters_report_capacity() {
    let params = choose_params(1024, 8, 0.5, ParamOverrides::default()).unwrap();
    assert_eq!(randomness_budget(&params, Mode::Composed).unwrap().seed_bits, 1340);
    let err = sample_matrix(&params, Mode::Composed, &BitVector::zeros(1340)).unwrap_err();
    assert!(matches!(err, Error::Capacity(_)));
}

#[test]
fn composed_generator_passes_rank_and_audit() {
    let spec = GeneratorSpec::new(Mode::Composed, 10, 4, 3).unwrap();
    let gen = spec.build().unwrap();
    let check = verify_embedding_rank(gen.embedding().unwrap(), 4).unwrap();
    assert!(check.passed);
    let audit = audit_bias_exhaustive(&gen, 4).unwrap();
    assert!(audit.within_bound());
    assert_eq!(audit.bound().cmp(&gen.bias_bound()), Ordering::Equal);
}

#[test]
fn audit_and_rootcount_agree_on_pairs() {
    let spec = PoweringSpec::new(10, 5).unwrap();
    let audit = audit_bias_exhaustive(&spec, 2).unwrap();
    for i in 1..=10 {
        for j in i + 1..=10 {
            let exact = sb_bias_rootcount(&spec, &[i, j]).unwrap();
            assert_eq!(audit.bias_of(&[i, j]).cmp(&exact), Ordering::Equal, "{{{i},{j}}}");
        }
    }
}

#[test]
fn uniform_space_matches_cube_moment() {
    let mut rng = stream(3, Domain::TestVector, 0);
    let b = SymmetricMatrix::from_upper(6, |_, _| rng.sample(StandardNormal));
    let cube = moment_report(&b, 4, 8.0, None, None).unwrap();
    let space = exact_moment_space(&b, 4, &UniformGenerator { n_bits: 6 }).unwrap();
    assert!((cube.moment - space).abs() <= 1e-9 * cube.moment.abs().max(1.0));
    assert!(cube.within_bound());
}

#[test]
fn powering_space_moment_within_biased_bound() {
    let mut rng = stream(4, Domain::TestVector, 0);
    let b = SymmetricMatrix::from_upper(8, |_, _| rng.sample(StandardNormal));
    let gen = PoweringSpec::new(8, 6).unwrap();
    let eps = audit_bias_exhaustive(&gen, 8).unwrap().max_bias().log2_inv();
    let moment = exact_moment_space(&b, 4, &gen).unwrap();
    assert!(moment <= hwb_bound(&b, 4, 8.0, eps));
}

#[test]
fn rip_constant_of_orthonormal_columns_is_zero() {
    // Columns of a 4x4 Hadamard matrix scaled by 1/2.
    let h = [[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]];
    let signs: Vec<i8> = h.iter().flatten().map(|&s| s as i8).collect();
    let phi = RipMatrix::from_signs(4, 4, biased_rip::SignVector::from_signs(&signs)).unwrap();
    let report = rip_constant_exact(&phi.to_dense(), 2, false).unwrap();
    assert!(report.delta_k.abs() < 1e-12);
    assert_eq!(report.subsets_examined, 6);
}

#[test]
fn sampled_matrices_depend_only_on_seed_and_index() {
    let params = small_params();
    let sampler = MatrixSampler::new(&params, SignSource::Biased(Mode::Composed)).unwrap();
    let a = sampler.matrix(9, 3).unwrap();
    let b = sampler.matrix(9, 3).unwrap();
    let c = sampler.matrix(9, 4).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_ne!(a.to_json(), c.to_json());
}

#[test]
fn omp_recovers_with_identity() {
    let phi = biased_rip::DenseMatrix::identity(6);
    let x = SparseVector::new(6, vec![(1, 2.0), (4, -0.5)]).unwrap();
    let y = phi.matvec(&x.to_dense());
    let est = omp_recover(&phi, &y, 2).unwrap();
    assert_eq!(est.support(), vec![1, 4]);
}

#[test]
fn jl_tail_is_reproducible() {
    let params = choose_params(64, 4, 0.5, ParamOverrides { q: Some(16), ..Default::default() }).unwrap();
    let x = SparseVector::new(64, (0..4).map(|i| (i, 0.5)).collect()).unwrap();
    let a = jl_tail(&params, SignSource::Biased(Mode::Composed), &x, 0.5, 200, 1).unwrap();
    let b = jl_tail(&params, SignSource::Biased(Mode::Composed), &x, 0.5, 200, 1).unwrap();
    assert_eq!(a, b);
    assert!(a.band_low <= a.failure_rate && a.failure_rate <= a.band_high);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_form_equals_squared_image(seed in any::<u64>(), k in 1usize..5) {
        let params = small_params();
        let sampler = MatrixSampler::new(&params, SignSource::Independent).unwrap();
        let phi = sampler.matrix(seed, 0).unwrap();
        let mut rng = stream(seed, Domain::TestVector, 1);
        let idx = rand::seq::index::sample(&mut rng, params.n, k).into_vec();
        let mut entries: Vec<(usize, f64)> = idx.into_iter().map(|i| (i, rng.sample(StandardNormal))).collect();
        entries.sort_by_key(|e| e.0);
        let x = SparseVector::new(params.n, entries).unwrap().normalized().unwrap();
        let y = apply(&phi, &x).unwrap();
        let sq: f64 = y.iter().map(|v| v * v).sum();
        let qf = quadratic_form(phi.signs(), &x, params.q).unwrap();
        prop_assert!((sq - qf).abs() <= 1e-12 * sq.max(1.0));
    }

    #[test]
    fn generator_output_length_matches_spec(n_bits in 1u64..200, half in 1u64..4, e in 1u64..8) {
        for mode in [Mode::Direct, Mode::Composed] {
            let spec = GeneratorSpec::new(mode, n_bits, 2 * half, e).unwrap();
            let gen = spec.build().unwrap();
            let seed = derive_seed(n_bits, e, gen.seed_bits());
            prop_assert_eq!(gen.generate_bits(&seed).unwrap().len() as u64, n_bits);
        }
    }
}
