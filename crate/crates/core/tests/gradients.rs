mod common;

use common::*;
use mmhash::config::{TrainConfig, Variant};
use mmhash::dataio::{generate_synthetic, LabelMatrix, SynthParams};
use mmhash::loss::{phi_matrix, total_loss, LossWeights, Windows};
use mmhash::matrix::Matrix;
use mmhash::model::{forward_batch, init_params};
use mmhash::trainer::{backward_batch, load_checkpoint, save_checkpoint, train};
use proptest::prelude::*;
use rand::Rng as _;

/// Batch sizes paired with a window fraction that divides them.
fn batch_and_lambda() -> impl Strategy<Value = (usize, f64)> {
    prop_oneof![
        Just((2, 0.5)),
        Just((2, 1.0)),
        Just((4, 0.25)),
        Just((4, 0.75)),
        Just((6, 0.5)),
        Just((8, 0.125)),
        Just((10, 0.6)),
    ]
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![
        Just(Variant::Full),
        Just(Variant::ConcatOnly),
        Just(Variant::VisionOnly),
        Just(Variant::TextOnly)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grad_h_matches_finite_differences(
        (b, lambda) in batch_and_lambda(),
        k in 1usize..12,
        delta in 0.0f64..3.0,
        mu in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let m = Windows::new(lambda, b).unwrap().size;
        let h = random_codes(&mut r, b, k);
        let phi = random_phi(&mut r, m);
        let w = LossWeights { lambda, delta, mu };
        let analytic = total_loss(&h, &phi, &w).unwrap().grad_h;
        let numeric = central_diff(
            |p| total_loss(&Matrix::from_vec(b, k, p.to_vec()), &phi, &w).unwrap().total,
            h.as_slice(),
            1e-5,
        );
        let (err, _) = max_rel_err(analytic.as_slice(), &numeric, 1e-8);
        prop_assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn parameter_grads_match_finite_differences(
        (b, lambda) in batch_and_lambda(),
        vision_dim in 1usize..5,
        text_dim in 1usize..5,
        k in 1usize..6,
        variant in variant(),
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let vision = random_embeddings(&mut r, b, vision_dim);
        let text = random_embeddings(&mut r, b, text_dim);
        let labels = LabelMatrix::from_lists(4, &random_label_lists(&mut r, b, 4)).unwrap();
        let mut params = init_params(vision_dim + text_dim, k, seed);
        for v in params.b_f.iter_mut().chain(params.b_h.iter_mut()) {
            *v = r.random_range(-0.5..0.5);
        }
        let w = LossWeights { lambda, delta: r.random_range(0.5..2.0), mu: r.random_range(0.0..1.0) };

        let ids: Vec<usize> = (0..b).collect();
        let phi = phi_matrix(&labels, &ids, Windows::new(lambda, b).unwrap());
        let acts = forward_batch(&vision, &text, &params, variant).unwrap();
        let grad_h = total_loss(&acts.h, &phi, &w).unwrap().grad_h;
        let grads = backward_batch(&acts, &grad_h, &params, variant).unwrap();
        let numeric = central_diff(
            |p| pipeline_loss(&unflatten(&params, p), &vision, &text, &labels, &w, variant),
            &flatten(&params),
            1e-5,
        );
        let (err, _) = max_rel_err(&flatten(&grads), &numeric, 1e-8);
        prop_assert!(err < 1e-4, "relative error {err}");
        if !variant.uses_gate() {
            prop_assert!(grads.w_f.iter().chain(&grads.b_f).all(|&g| g == 0.0));
        }
    }
}

#[test]
fn checkpoint_resumes_identically() {
    let data = generate_synthetic(&SynthParams {
        per_cluster: 20,
        dim: 8,
        ..SynthParams::default()
    })
    .unwrap();
    let config = TrainConfig {
        code_bits: 16,
        batch_size: 16,
        epochs: 3,
        vision_dim: 8,
        text_dim: 8,
        ..TrainConfig::default()
    };
    let outcome = train(&data, &config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = outcome.checkpoint(&config);
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.params, outcome.params);
    assert_eq!(loaded.optimizer, ckpt.optimizer);
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
}
