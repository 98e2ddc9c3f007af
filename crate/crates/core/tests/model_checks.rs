//! Model-level verification: analytic parameter counts, causality of the
//! TCN stack, and finite-difference sanity of full-model gradients.
//! (The full 10-instance gradient suite runs in the acceptance tests.)

use epd_core::nn::{build_model, check_model_gradients, Arch, Mode, Model, ModelConfig, SEQ_LEN};
use epd_core::tensor::{GradCheckConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Parameters of one weight-standardized conv with scale/shift.
fn norm_conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k + 2 * cout
}

fn dense(n_in: usize, n_out: usize) -> usize {
    n_out * n_in + n_out
}

/// Layer-by-layer sum for the residual encoder configuration.
fn resnet_expected(in_channels: usize, dense_size: usize) -> usize {
    let mut total = norm_conv(in_channels, 16, 7); // stem
    let mut prev = 16;
    for ch in [16usize, 32, 64, 128] {
        // Stage entry block downsamples, so its shortcut projects.
        total += norm_conv(prev, ch, 3) + norm_conv(ch, ch, 3) + norm_conv(prev, ch, 1);
        total += norm_conv(ch, ch, 3) + norm_conv(ch, ch, 3);
        prev = ch;
    }
    total + dense(128, dense_size) + dense(dense_size, dense_size / 2) + dense(dense_size / 2, 1)
}

fn tcn_expected(in_channels: usize, dense_size: usize) -> usize {
    let mut total = 0;
    let mut prev = in_channels;
    for level in 0..11 {
        total += norm_conv(prev, 32, 3) + norm_conv(32, 32, 3);
        if level == 0 {
            total += norm_conv(prev, 32, 1);
        }
        prev = 32;
    }
    total + dense(32, dense_size) + dense(dense_size, dense_size / 2) + dense(dense_size / 2, 1)
}

#[test]
fn resnet_param_count_matches_analytic_sum() {
    for (d, ch) in [(64, 3), (128, 4), (256, 3)] {
        let cfg = ModelConfig {
            arch: Arch::ResNet1D,
            dense_size: d,
            in_channels: ch,
            seed: 0,
            allow_nonstandard: false,
        };
        let m: Model<f32> = build_model(&cfg).unwrap();
        assert_eq!(m.param_count(), resnet_expected(ch, d), "d={d} ch={ch}");
    }
}

#[test]
fn tcn_param_count_matches_analytic_sum() {
    for (d, ch) in [(64, 3), (256, 4)] {
        let cfg = ModelConfig {
            arch: Arch::Tcn,
            dense_size: d,
            in_channels: ch,
            seed: 0,
            allow_nonstandard: false,
        };
        let m: Model<f32> = build_model(&cfg).unwrap();
        assert_eq!(m.param_count(), tcn_expected(ch, d), "d={d} ch={ch}");
    }
}

/// Perturbing the input strictly after t must not change causal-stack
/// activations at or before t. Checked in evaluation mode, where the
/// normalization statistics are input-independent constants.
#[test]
fn tcn_stack_is_causal_before_pooling() {
    let cfg = ModelConfig {
        arch: Arch::Tcn,
        dense_size: 64,
        in_channels: 4,
        seed: 5,
        allow_nonstandard: false,
    };
    let mut model: Model<f32> = build_model(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base: Vec<f32> = (0..4 * SEQ_LEN).map(|_| rng.random_range(-1.0..1.0)).collect();

    let t0 = 2500usize;
    let mut perturbed = base.clone();
    for ch in 0..4 {
        for t in (t0 + 1)..SEQ_LEN {
            perturbed[ch * SEQ_LEN + t] += rng.random_range(0.5..2.0);
        }
    }

    let mut tape = Tape::new();
    let a = model
        .encode(
            &mut tape,
            &Tensor::from_vec(vec![1, 4, SEQ_LEN], base).unwrap(),
            Mode::Eval,
        )
        .unwrap();
    let b = model
        .encode(
            &mut tape,
            &Tensor::from_vec(vec![1, 4, SEQ_LEN], perturbed).unwrap(),
            Mode::Eval,
        )
        .unwrap();

    assert_eq!(a.shape(), &[1, 32, SEQ_LEN]);
    let (da, db) = (a.data(), b.data());
    let mut changed_after = false;
    for c in 0..32 {
        for t in 0..SEQ_LEN {
            let (va, vb) = (da[c * SEQ_LEN + t], db[c * SEQ_LEN + t]);
            if t <= t0 {
                assert_eq!(va, vb, "activation changed at channel {c}, t={t} <= {t0}");
            } else if va != vb {
                changed_after = true;
            }
        }
    }
    // The perturbation must actually reach the activations after t0.
    assert!(changed_after);
}

#[test]
fn model_gradients_sane_on_two_instances_each() {
    let cfg = GradCheckConfig::default();
    for arch in [Arch::ResNet1D, Arch::Tcn] {
        let model_cfg = ModelConfig {
            arch,
            dense_size: 64,
            in_channels: 4,
            seed: 21,
            allow_nonstandard: false,
        };
        let report = check_model_gradients(&model_cfg, 2, 6, 2, &cfg).unwrap();
        assert!(
            report.passes(cfg.tolerance),
            "{arch:?}: max rel err {:.3e}",
            report.max_rel_err()
        );
    }
}
