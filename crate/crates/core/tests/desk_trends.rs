//! Desk-scale trend checks that need trained models: deep-ensemble
//! member quality, and the link between margin-variance reduction and
//! the probability of ranking the top class first.

use tscert_core::evalkit;
use tscert_core::nnkit::{ConvBlock, ModelConfig, Optimizer, TrainConfig};
use tscert_core::smoothing::{self, MaskParams, SmoothedModel, SmoothingConfig, SmoothingMode};
use tscert_core::tsdata::{self, Split};

fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 10,
        learning_rate: 3e-3,
        optimizer: Optimizer::default(),
        seed,
    }
}

#[test]
fn deep_ensemble_members_match_single_model_accuracy() {
    let train = tsdata::generate_cbf(10, 64, 21, Split::Train).unwrap();
    let test = tsdata::generate_cbf(60, 64, 22, Split::Test).unwrap();
    let model_cfg = ModelConfig {
        input_length: 64,
        num_labels: 3,
        blocks: vec![ConvBlock { channels: 8, kernel: 9 }, ConvBlock { channels: 8, kernel: 9 }],
        seed: 23,
    };
    let train_cfg = train_config(200, 24);
    let smoothing_cfg = SmoothingConfig {
        sigma: 0.4,
        mode: SmoothingMode::Single,
        m: 1,
        mask: None,
        num_draws: 1,
        beta: 0.5,
        base_seed: 25,
    };
    let single =
        smoothing::train_smoothed(&train, &model_cfg, &train_cfg, &smoothing_cfg).unwrap();
    let single_acc =
        evalkit::clean_accuracy(&SmoothedModel::Single(single.params), &test).unwrap();

    let members =
        smoothing::train_deep_ensemble(&train, &model_cfg, &train_cfg, 0.4, 3, 25).unwrap();
    for (i, member) in members.iter().enumerate() {
        let acc = evalkit::clean_accuracy(
            &SmoothedModel::Single(member.params.clone()),
            &test,
        )
        .unwrap();
        assert!(
            acc >= single_acc - 0.05,
            "member {i} accuracy {acc:.3} more than 0.05 below single {single_acc:.3}"
        );
    }
}

#[test]
fn lower_margin_variance_raises_top_class_probability() {
    // Matched pairs: the same masked-trained model evaluated as an m = 5
    // self-ensemble versus plain single evaluation, same noise streams.
    // Where the ensemble reduces variance at an (approximately) fixed
    // positive mean margin, the empirical P(min margin > 0) must not
    // drop.
    let train = tsdata::generate_overlap(40, 24, 3, 5.0, 31, Split::Train).unwrap();
    let test = tsdata::generate_overlap(20, 24, 3, 5.0, 32, Split::Test).unwrap();
    let model_cfg = ModelConfig {
        input_length: 24,
        num_labels: 3,
        blocks: vec![ConvBlock { channels: 8, kernel: 15 }],
        seed: 33,
    };
    let cfg = SmoothingConfig {
        sigma: 0.4,
        mode: SmoothingMode::SelfEnsemble,
        m: 5,
        mask: Some(MaskParams {
            kind: tscert_core::masks::MaskKind::Binomial,
            keep_ratio: 0.9,
        }),
        num_draws: 1,
        beta: 0.5,
        base_seed: 35,
    };
    let outcome =
        smoothing::train_smoothed(&train, &model_cfg, &train_config(250, 34), &cfg).unwrap();
    let set = cfg.build_mask_set(24).unwrap().unwrap();
    let ensemble = SmoothedModel::SelfEnsemble(outcome.params.clone(), set);
    let single = SmoothedModel::Single(outcome.params);

    let mut pairs = 0usize;
    let mut ok = 0usize;
    for (i, series) in test.series.iter().enumerate() {
        let seed = 9000 + i as u64;
        let ens = evalkit::margin_stats(&ensemble, &series.values, 0.4, 600, seed).unwrap();
        let sin = evalkit::margin_stats(&single, &series.values, 0.4, 600, seed).unwrap();
        let mean_fixed = (ens.mean - sin.mean).abs() <= 0.25 * sin.mean.abs().max(0.2);
        if ens.variance < sin.variance && sin.mean > 0.05 && mean_fixed {
            pairs += 1;
            // 600-draw estimates carry ~±0.02 of noise.
            if ens.prob_all_positive >= sin.prob_all_positive - 0.02 {
                ok += 1;
            }
        }
    }
    assert!(pairs >= 5, "too few variance-reduced matched pairs ({pairs}) to check the trend");
    assert!(
        ok * 10 >= pairs * 9,
        "P(min margin > 0) dropped on {} of {pairs} variance-reduced pairs",
        pairs - ok
    );
}
