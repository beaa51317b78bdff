mod common;

use std::time::Instant;

use lart::tokenizer::TokenConfig;
use lart::transformer::{Mode, Model, ModelConfig, NormPosition};

fn small(tokens: fn(usize) -> TokenConfig, norm: NormPosition) -> ModelConfig {
    let mut cfg = ModelConfig::tiny(12).with_tokens(tokens(32));
    cfg.d_model = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.norm_position = norm;
    cfg
}

#[test]
fn tiny_profile_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let mut model = Model::new(&ModelConfig::tiny(12), 1).unwrap();
    let c = common::clip(3, 3, 16, 0.2, false);
    let mut g = common::training_grid(&model, &c, 16, 0.4, 5);
    let report = common::grad_check(&mut model, &mut g, Mode::deterministic_train(), 6, 9);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
    eprintln!("{} probes in {:?}, worst {:.3}", report.probes, t0.elapsed(), report.worst);
}

#[test]
fn fused_post_norm_gradients_match_finite_differences() {
    let mut model = Model::new(&small(TokenConfig::fused, NormPosition::Post), 2).unwrap();
    let c = common::clip(4, 2, 16, 0.2, true);
    let mut g = common::training_grid(&model, &c, 16, 0.4, 6);
    let report = common::grad_check(&mut model, &mut g, Mode::deterministic_train(), 6, 10);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
}

#[test]
fn stochastic_train_mode_gradients_match_finite_differences() {
    let mut model = Model::new(&small(TokenConfig::appearance_only, NormPosition::Pre), 3).unwrap();
    let c = common::clip(5, 2, 16, 0.0, true);
    let mut g = common::training_grid(&model, &c, 16, 0.2, 7);
    let mode = Mode::Train {
        dropout: 0.1,
        drop_path: 0.3,
        seed: 11,
    };
    let report = common::grad_check(&mut model, &mut g, mode, 4, 12);
    assert!(report.failures.is_empty(), "{:#?}", report.failures);
}
