//! Per-operation examples and invariants of the forward model.
//!
//! Frozen values in the `derived_*` tests come from an independent NumPy
//! re-implementation of the forward pass with the same deterministic
//! parameter fill.

use approx::assert_abs_diff_eq;
use cemtm::linalg::{softmax, Matrix};
use cemtm::model::{
    checkpoint, decode, document_topic, encode_token_topics, forward_document, importance_forward, infer_theta,
    loss_ent, loss_kl, loss_rec, normalize_importance, sample_importance, total_loss, LossParts, ModelConfig,
    ModelError, ModelParams, Sampling,
};
use cemtm::{DocumentRecord, TokenEntry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn filled(config: &ModelConfig) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::zeros(config).unwrap();
    for (ti, t) in p.tensors_mut().into_iter().enumerate() {
        for (j, x) in t.iter_mut().enumerate() {
            *x = 0.5 * (1.3 * j as f64 + 0.7 * ti as f64).sin();
        }
    }
    p
}

fn oracle_config() -> ModelConfig {
    ModelConfig {
        encoder_hidden: 3,
        imp_model_dim: 4,
        imp_heads: 2,
        imp_layers: 1,
        imp_ffn_dim: 3,
        ..ModelConfig::new(2, 2)
    }
}

fn oracle_input() -> Matrix<f64> {
    Matrix::from_rows(&[vec![1.0, -0.5], vec![0.3, 0.8]]).unwrap()
}

fn small_config(d: usize, k: usize) -> ModelConfig {
    ModelConfig { encoder_hidden: 7, imp_model_dim: 8, imp_heads: 4, imp_ffn_dim: 6, ..ModelConfig::new(d, k) }
}

fn random_params(config: &ModelConfig, seed: u64) -> ModelParams<f32> {
    ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f32> {
    let data = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal) * 2.0).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

#[test]
fn zero_encoder_gives_uniform_token_topics() {
    let cfg = small_config(3, 4);
    let params = ModelParams::<f32>::zeros(&cfg).unwrap();
    let h = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.0, 5.0]).unwrap();
    let t = encode_token_topics(&h, &params).unwrap();
    for row in t.row_iter() {
        assert_eq!(row, &[0.25, 0.25, 0.25, 0.25]);
    }
}

#[test]
fn derived_token_topics_match_scalar_oracle() {
    let params = filled(&oracle_config());
    let t = encode_token_topics(&oracle_input(), &params).unwrap();
    let expected = [[0.6612858983540756, 0.33871410164592447], [0.6355768092084144, 0.3644231907915856]];
    for (row, exp) in t.row_iter().zip(expected) {
        assert_abs_diff_eq!(row[0], exp[0], epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], exp[1], epsilon = 1e-12);
    }
}

#[test]
fn derived_importance_matches_transformer_oracle() {
    let params = filled(&oracle_config());
    let (mu, sigma) = importance_forward(&oracle_input(), &params).unwrap();
    assert_abs_diff_eq!(mu[0], -0.6389408953242784, epsilon = 1e-12);
    assert_abs_diff_eq!(mu[1], -0.6941741349394852, epsilon = 1e-12);
    assert_abs_diff_eq!(sigma[0], 1.0751020582232629, epsilon = 1e-12);
    assert_abs_diff_eq!(sigma[1], 0.949298125553735, epsilon = 1e-12);

    let trace = forward_document(&params, &oracle_input(), Sampling::Deterministic).unwrap();
    assert_abs_diff_eq!(trace.beta[0], 0.513804800544437, epsilon = 1e-12);
    assert_abs_diff_eq!(trace.theta[0], 0.5738489934720306, epsilon = 1e-12);
    assert_abs_diff_eq!(trace.e_recon[0], 0.024362158751851756, epsilon = 1e-12);
    assert_abs_diff_eq!(trace.e_recon[1], 0.1505964251300171, epsilon = 1e-12);
}

#[test]
fn constant_gaussian_head_gives_constant_importance() {
    let cfg = small_config(3, 2);
    let mut params = random_params(&cfg, 4);
    params.importance.head.weight = Matrix::zeros(8, 2);
    params.importance.head.bias = vec![0.7, -0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let h = random_matrix(5, 3, &mut rng);
    let (mu, sigma) = importance_forward(&h, &params).unwrap();
    let expected_sigma = (0.5f32 * -0.4).exp();
    assert!(mu.iter().all(|&m| m == 0.7));
    assert!(sigma.iter().all(|&s| s == expected_sigma));

    let doc =
        DocumentRecord::new("d", (0..5).map(|i| TokenEntry::text(format!("w{i}"))).collect(), h, vec![0.0; 3]).unwrap();
    let trace = infer_theta(&doc, &params, Sampling::Deterministic).unwrap();
    assert!(trace.beta.iter().all(|&b| (b - 0.2).abs() < 1e-7));
}

#[test]
fn wrong_embedding_width_is_a_shape_mismatch() {
    let params = random_params(&small_config(3, 2), 1);
    let h = Matrix::zeros(2, 4);
    assert!(matches!(encode_token_topics(&h, &params), Err(ModelError::ShapeMismatch { .. })));
    assert!(matches!(importance_forward(&h, &params), Err(ModelError::ShapeMismatch { .. })));
}

#[test]
fn sampling_examples() {
    assert_eq!(sample_importance(&[1.0, -2.0], &[0.5, 3.0], &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
    assert_eq!(sample_importance(&[1.0], &[0.5], &[2.0]).unwrap(), vec![2.0]);
    assert_eq!(
        sample_importance(&[1.0, 1.0], &[0.5, 0.0], &[0.0, 0.0]),
        Err(ModelError::NonPositiveSigma { index: 1 })
    );
}

#[test]
fn sampled_moments_match_gaussian_parameters() {
    let (mu, sigma) = (0.8f64, 1.7f64);
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let alpha = sample_importance(&vec![mu; n], &vec![sigma; n], &noise).unwrap();
    let mean = alpha.iter().sum::<f64>() / n as f64;
    let var = alpha.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = 3.0 * sigma / (n as f64).sqrt();
    assert!((mean - mu).abs() < se, "mean {mean}");
    // Standard error of the sample std is about σ/√(2n).
    assert!((var.sqrt() - sigma).abs() < se, "std {}", var.sqrt());
}

#[test]
fn importance_normalization_examples() {
    assert_eq!(normalize_importance(&[0.0f64, 0.0]).unwrap(), vec![0.5, 0.5]);
    let b = normalize_importance(&[3.0f64.ln(), 0.0]).unwrap();
    assert_abs_diff_eq!(b[0], 0.75, epsilon = 1e-15);
    assert_abs_diff_eq!(b[1], 0.25, epsilon = 1e-15);
    assert!(normalize_importance(&[f64::NAN]).is_err());
}

#[test]
fn document_topic_examples() {
    let t = Matrix::from_rows(&[vec![0.2f64, 0.8], vec![0.6, 0.4]]).unwrap();
    let one_hot = document_topic(&t, &[0.0, 1.0]).unwrap();
    assert_eq!(one_hot, softmax(&[0.6, 0.4]));

    let uniform = Matrix::from_rows(&[vec![0.5f64, 0.5], vec![0.5, 0.5]]).unwrap();
    assert_eq!(document_topic(&uniform, &[0.3, 0.7]).unwrap(), vec![0.5, 0.5]);

    let theta = document_topic(&t, &[0.5, 0.5]).unwrap();
    assert_abs_diff_eq!(theta[0], 0.4501660026875221, epsilon = 1e-12);
    assert_abs_diff_eq!(theta[1], 0.5498339973124778, epsilon = 1e-12);
    assert!(document_topic(&t, &[1.0]).is_err());
}

#[test]
fn decode_examples() {
    let w = Matrix::from_rows(&[vec![1.5f64, -2.0], vec![0.25, 4.0]]).unwrap();
    assert_eq!(decode(&[0.0, 1.0], &w).unwrap(), vec![0.25, 4.0]);
    assert_eq!(decode(&[0.3, 0.7], &Matrix::zeros(2, 2)).unwrap(), vec![0.0, 0.0]);
    let e = decode(&[0.3, 0.7], &w).unwrap();
    assert_abs_diff_eq!(e[0], 0.625, epsilon = 1e-12);
    assert_abs_diff_eq!(e[1], 2.2, epsilon = 1e-12);
}

#[test]
fn reconstruction_loss_examples() {
    assert_eq!(loss_rec(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_eq!(loss_rec(&[1.0f64, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    assert_abs_diff_eq!(loss_rec(&[0.3f64, -1.2, 2.5], &[1.1, 0.4, -0.7]).unwrap(), 4.48, epsilon = 1e-12);
    assert!(loss_rec(&[1.0f64], &[1.0, 2.0]).is_err());
}

#[test]
fn entropy_loss_examples() {
    assert_abs_diff_eq!(loss_ent(&[0.25f64; 4], true), 4.0f64.ln(), epsilon = 1e-12);
    assert_eq!(loss_ent(&[0.0f64, 1.0, 0.0], true), 0.0);
    assert_eq!(loss_ent(&[0.0f64, 1.0, 0.0], false), 0.0);
    assert_abs_diff_eq!(loss_ent(&[0.75f64, 0.25], true), 0.5623351446188083, epsilon = 1e-12);
    assert_abs_diff_eq!(loss_ent(&[0.75f64, 0.25], false), -0.5623351446188083, epsilon = 1e-12);
}

#[test]
fn kl_loss_examples() {
    assert_eq!(loss_kl(&[0.0f64; 3], &[1.0; 3]).unwrap(), 0.0);
    assert_eq!(loss_kl(&[1.0f64], &[1.0]).unwrap(), 0.5);
    let e = std::f64::consts::E;
    assert_abs_diff_eq!(loss_kl(&[0.0], &[e]).unwrap(), 2.1945280494653248, epsilon = 1e-12);
    assert!(matches!(loss_kl(&[0.0f64], &[0.0]), Err(ModelError::NonPositiveSigma { index: 0 })));
}

#[test]
fn total_loss_examples() {
    let cfg = ModelConfig::new(2, 2);
    let parts = LossParts { rec: 1.0, ent: 2.0, kl: 3.0 };
    assert_abs_diff_eq!(total_loss(&parts, &cfg), 1.4, epsilon = 1e-12);
    let unregularized = ModelConfig { lambda_ent: 0.0, lambda_kl: 0.0, ..cfg };
    assert_eq!(total_loss(&parts, &unregularized), 1.0);
}

#[test]
fn deterministic_inference_is_bitwise_repeatable() {
    let cfg = small_config(4, 3);
    let params = random_params(&cfg, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let doc = DocumentRecord::new(
        "d",
        (0..6).map(|i| TokenEntry::text(format!("w{i}"))).collect(),
        random_matrix(6, 4, &mut rng),
        vec![0.1; 4],
    )
    .unwrap();
    let a = infer_theta(&doc, &params, Sampling::Deterministic).unwrap();
    let b = infer_theta(&doc, &params, Sampling::Deterministic).unwrap();
    assert_eq!(a.theta, b.theta);
    assert_eq!(a.alpha, a.mu);
}

#[test]
fn checkpoint_round_trip_reproduces_forward_bitwise() {
    let cfg = small_config(4, 3);
    let params = random_params(&cfg, 77);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&params, &path).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded, params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = random_matrix(5, 4, &mut rng);
    let a = forward_document(&params, &h, Sampling::Deterministic).unwrap();
    let b = forward_document(&loaded, &h, Sampling::Deterministic).unwrap();
    assert_eq!(a, b);

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    assert!(checkpoint::decode(&bytes).is_err());
}

fn simplex_ok(xs: &[f32]) -> bool {
    xs.iter().all(|&x| x >= 0.0) && (xs.iter().sum::<f32>() - 1.0).abs() <= 1e-5
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_outputs_stay_on_the_simplex(seed in any::<u64>(), n in 1usize..10, k in 2usize..6) {
        let cfg = small_config(5, k);
        let params = random_params(&cfg, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let h = random_matrix(n, 5, &mut rng);
        let noise: Vec<f32> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let trace = forward_document(&params, &h, Sampling::Noise(&noise)).unwrap();
        for row in trace.t.row_iter() {
            prop_assert!(simplex_ok(row));
        }
        prop_assert!(simplex_ok(&trace.beta));
        prop_assert!(simplex_ok(&trace.theta));
        prop_assert!(trace.sigma.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn importance_softmax_is_shift_invariant(alpha in prop::collection::vec(-20.0f64..20.0, 1..12), c in -50.0f64..50.0) {
        let a = normalize_importance(&alpha).unwrap();
        let shifted: Vec<f64> = alpha.iter().map(|x| x + c).collect();
        let b = normalize_importance(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn permuting_tokens_permutes_outputs(seed in any::<u64>(), n in 2usize..7) {
        let cfg = small_config(4, 3);
        let params = random_params(&cfg, seed).cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let h = random_matrix(n, 4, &mut rng).cast::<f64>();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(1);
        perm.swap(0, n - 1);
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| h.row(i).to_vec()).collect();
        let hp = Matrix::from_rows(&rows).unwrap();
        let a = forward_document(&params, &h, Sampling::Deterministic).unwrap();
        let b = forward_document(&params, &hp, Sampling::Deterministic).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert!((a.mu[old] - b.mu[new]).abs() < 1e-10);
            prop_assert!((a.sigma[old] - b.sigma[new]).abs() < 1e-10);
            prop_assert!((a.beta[old] - b.beta[new]).abs() < 1e-10);
            for c in 0..3 {
                prop_assert!((a.t.get(old, c) - b.t.get(new, c)).abs() < 1e-12);
            }
        }
        for (x, y) in a.theta.iter().zip(&b.theta) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-5.0f64..5.0, 1..8), log_sigma in prop::collection::vec(-3.0f64..3.0, 8)) {
        let sigma: Vec<f64> = log_sigma[..mu.len()].iter().map(|l| l.exp()).collect();
        prop_assert!(loss_kl(&mu, &sigma).unwrap() >= 0.0);
    }

    #[test]
    fn entropy_lies_between_zero_and_log_n(alpha in prop::collection::vec(-10.0f64..10.0, 1..16)) {
        let beta = normalize_importance(&alpha).unwrap();
        let h = loss_ent(&beta, true);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (beta.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn total_is_monotone_in_each_part(rec in 0.0f64..10.0, ent in 0.0f64..10.0, kl in 0.0f64..10.0, bump in 0.0f64..5.0) {
        let cfg = ModelConfig::new(2, 2);
        let base = total_loss(&LossParts { rec, ent, kl }, &cfg);
        let bumped = [
            LossParts { rec: rec + bump, ent, kl },
            LossParts { rec, ent: ent + bump, kl },
            LossParts { rec, ent, kl: kl + bump },
        ];
        for parts in &bumped {
            prop_assert!(total_loss(parts, &cfg) >= base);
        }
    }
}
