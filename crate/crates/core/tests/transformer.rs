mod common;

use lart::tokenizer::{assemble_layout, GridConfig, SlotState};
use lart::tracklet::MultiHot;
use lart::transformer::{bce_loss, bce_loss_grad, Mode, Model, ModelConfig, NormPosition};
use ndarray::Array2;
use proptest::prelude::*;

fn small(norm: NormPosition) -> ModelConfig {
    let mut c = ModelConfig::tiny(12);
    c.layers = 2;
    c.norm_position = norm;
    c
}

#[test]
fn zero_weights_give_the_head_bias() {
    for norm in [NormPosition::Pre, NormPosition::Post] {
        let mut model = Model::new(&small(norm), 1).unwrap();
        for t in &mut model.params.tensors {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        let b = model.head_bias();
        for (k, v) in model.params.tensors[b].data.iter_mut().enumerate() {
            *v = k as f64 * 0.25 - 1.0;
        }
        let c = common::clip(5, 2, 16, 0.2, false);
        let mut g = common::training_grid(&model, &c, 16, 0.0, 0);
        let (z, _) = model.forward(&mut g, Mode::Eval).unwrap();
        for row in z.rows() {
            for (k, v) in row.iter().enumerate() {
                assert!((v - (k as f64 * 0.25 - 1.0)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn eval_is_deterministic_and_training_noise_follows_the_seed() {
    let model = Model::new(&small(NormPosition::Pre), 2).unwrap();
    let c = common::clip(6, 3, 24, 0.2, false);
    let mut g = common::training_grid(&model, &c, 24, 0.2, 1);
    let a = model.forward(&mut g, Mode::Eval).unwrap().0;
    assert_eq!(a, model.forward(&mut g, Mode::Eval).unwrap().0);
    assert_eq!(a, model.forward(&mut g, Mode::deterministic_train()).unwrap().0);
    let noisy = |seed| Mode::Train {
        dropout: 0.2,
        drop_path: 0.1,
        seed,
    };
    let x = model.forward(&mut g, noisy(7)).unwrap().0;
    assert_eq!(x, model.forward(&mut g, noisy(7)).unwrap().0);
    assert_ne!(x, model.forward(&mut g, noisy(8)).unwrap().0);
}

#[test]
fn attention_rows_are_distributions_over_allowed_keys() {
    let model = Model::new(&small(NormPosition::Pre), 3).unwrap();
    let c = common::clip(7, 3, 16, 0.4, false);
    let mut g = common::training_grid(&model, &c, 16, 0.3, 2);
    let (_, cache) = model.forward(&mut g, Mode::Eval).unwrap();
    let allowed = g.attention_mask();
    let maps = model.attention_maps(&cache);
    assert_eq!(maps.len(), 2);
    for heads in maps {
        assert_eq!(heads.len(), model.cfg.heads);
        for p in heads {
            for (i, row) in p.rows().into_iter().enumerate() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                for (j, &v) in row.iter().enumerate() {
                    if !allowed[[i, j]] {
                        assert_eq!(v, 0.0, "({i}, {j})");
                    }
                }
            }
        }
    }
}

#[test]
fn padding_rows_do_not_change_real_logits() {
    let model = Model::new(&small(NormPosition::Pre), 4).unwrap();
    let c = common::clip(8, 2, 16, 0.3, false);
    let ids = c.track_ids();
    let run = |n_tracks| {
        let grid = GridConfig { n_tracks, window: 16 };
        let mut g = assemble_layout(&c, ids[0], &ids[1..], grid, 0, None, &model.cfg.tokens).unwrap();
        model.forward(&mut g, Mode::Eval).unwrap().0
    };
    let (a, b) = (run(2), run(5));
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            assert!((a[[i, k]] - b[[i, k]]).abs() < 1e-9);
        }
    }
}

#[test]
fn unsupervised_positions_get_no_gradient() {
    let model = Model::new(&small(NormPosition::Pre), 5).unwrap();
    let c = common::clip(9, 2, 16, 0.5, false);
    let mut g = common::training_grid(&model, &c, 16, 0.3, 3);
    let (z, _) = model.forward(&mut g, Mode::Eval).unwrap();
    let mask = g.loss_mask();
    assert!(mask.iter().any(|&m| !m));
    let (_, dz) = bce_loss_grad(z.view(), &g.labels, &mask).unwrap();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            assert!(dz.row(i).iter().all(|&v| v == 0.0));
        }
    }
    for (i, s) in g.states.iter().enumerate() {
        if *s == SlotState::Gap {
            assert!(!mask[i]);
        }
    }
}

fn permute(l: MultiHot, perm: &[usize]) -> MultiHot {
    MultiHot::from_indices(l.iter().map(|k| perm[k]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_is_invariant_to_class_order(
        rows in proptest::collection::vec((proptest::collection::vec(-8.0f64..8.0, 6), 0u64..64, any::<bool>()), 1..10),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        prop_assume!(rows.iter().any(|r| r.2));
        let n = rows.len();
        let z = Array2::from_shape_fn((n, 6), |(i, k)| rows[i].0[k]);
        let mut zp = Array2::zeros((n, 6));
        for i in 0..n {
            for k in 0..6 {
                zp[[i, perm[k]]] = z[[i, k]];
            }
        }
        let labels: Vec<Option<MultiHot>> = rows.iter().map(|r| Some(MultiHot(r.1))).collect();
        let permuted: Vec<Option<MultiHot>> = labels.iter().map(|l| l.map(|l| permute(l, &perm))).collect();
        let mask: Vec<bool> = rows.iter().map(|r| r.2).collect();
        let a = bce_loss(z.view(), &labels, &mask).unwrap();
        let b = bce_loss(zp.view(), &permuted, &mask).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences(
        z0 in proptest::collection::vec(-6.0f64..6.0, 8),
        bits in 0u64..16,
    ) {
        let z = Array2::from_shape_vec((2, 4), z0).unwrap();
        let labels = vec![Some(MultiHot(bits)), Some(MultiHot(bits ^ 5))];
        let mask = vec![true, true];
        let (l, dz) = bce_loss_grad(z.view(), &labels, &mask).unwrap();
        prop_assert!((l - bce_loss(z.view(), &labels, &mask).unwrap()).abs() < 1e-15);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..4 {
                let mut p = z.clone();
                p[[i, k]] += h;
                let mut m = z.clone();
                m[[i, k]] -= h;
                let num = (bce_loss(p.view(), &labels, &mask).unwrap() - bce_loss(m.view(), &labels, &mask).unwrap()) / (2.0 * h);
                prop_assert!((num - dz[[i, k]]).abs() < 1e-7);
            }
        }
    }
}
