mod common;

use std::collections::HashSet;

use lart::rng;
use lart::scene::broadcast_ground_truth;
use lart::tokenizer::{apply_mask_tokens, assemble_layout, infill_gaps, positional_encoding, GridConfig, SlotState};
use lart::transformer::{Model, ModelConfig};
use proptest::prelude::*;

fn tiny() -> Model {
    Model::new(&ModelConfig::tiny(12), 3).unwrap()
}

#[test]
fn positional_encodings_are_distinct_over_a_large_grid() {
    let mut seen = HashSet::new();
    for t in 0..512 {
        for i in 0..8 {
            let pe = positional_encoding(t, i, 64).unwrap();
            assert!(pe.iter().all(|v| v.abs() <= 1.0));
            let key: Vec<u64> = pe.iter().map(|v| (v * 1e9).round() as i64 as u64).collect();
            assert!(seen.insert(key), "collision at t={t} i={i}");
        }
    }
}

#[test]
fn short_scenes_are_padded_with_gapped_rows() {
    let model = tiny();
    let c = common::clip(11, 2, 32, 0.0, false);
    let ids = c.track_ids();
    let grid = GridConfig { n_tracks: 5, window: 32 };
    let g = assemble_layout(&c, ids[0], &ids[1..], grid, 0, None, &model.cfg.tokens).unwrap();
    assert_eq!(g.len(), 5 * 32);
    assert_eq!(g.track_ids.iter().filter(|t| t.is_none()).count(), 3);
    for slot in 2..5 {
        assert!((0..32).all(|t| g.states[g.index(slot, t)] == SlotState::Gap));
    }
    assert_eq!(g.track_ids[g.poi_track_slot()], Some(ids[0]));
}

#[test]
fn supporting_overflow_and_unknown_tracks_are_rejected() {
    let model = tiny();
    let c = common::clip(12, 3, 16, 0.0, false);
    let ids = c.track_ids();
    let grid = GridConfig { n_tracks: 2, window: 16 };
    assert!(assemble_layout(&c, ids[0], &ids[1..], grid, 0, None, &model.cfg.tokens).is_err());
    assert!(assemble_layout(&c, 999, &[], grid, 0, None, &model.cfg.tokens).is_err());
    assert!(assemble_layout(&c, ids[0], &[ids[0]], grid, 0, None, &model.cfg.tokens).is_err());
}

#[test]
fn forty_percent_of_a_hundred_present_tokens_are_masked() {
    let model = tiny();
    let c = common::clip(13, 4, 25, 0.0, false);
    let ids = c.track_ids();
    let grid = GridConfig { n_tracks: 4, window: 25 };
    let mut g = assemble_layout(&c, ids[0], &ids[1..], grid, 0, None, &model.cfg.tokens).unwrap();
    assert_eq!(g.count(SlotState::Present), 100);
    apply_mask_tokens(&mut g, 0.4, model.mask_token(), &mut rng::substream(1, "mask")).unwrap();
    assert_eq!(g.count(SlotState::Masked), 40);
    assert_eq!(g.count(SlotState::Present), 60);
}

#[test]
fn infill_covers_real_tracks_only_and_keeps_the_loss_mask() {
    let model = tiny();
    let c = common::clip(14, 2, 48, 0.5, false);
    let ids = c.track_ids();
    let sup = broadcast_ground_truth(&c);
    let grid = GridConfig { n_tracks: 3, window: 48 };
    let mut g = assemble_layout(&c, ids[0], &ids[1..], grid, 0, Some(&sup), &model.cfg.tokens).unwrap();
    let gaps_before = g.count(SlotState::Gap);
    let loss_before = g.loss_mask();
    infill_gaps(&mut g, model.mask_token());
    assert_eq!(g.count(SlotState::Gap), 48, "only the padding row stays gapped");
    assert!(gaps_before > 48);
    assert_eq!(g.loss_mask(), loss_before);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn mask_count_is_the_floor_of_ratio_times_present(seed in 0u64..1000, ratio in 0.0f64..=1.0, people in 1usize..4) {
        let model = tiny();
        let c = common::clip(seed, people, 20, 0.3, false);
        let ids = c.track_ids();
        let grid = GridConfig { n_tracks: 4, window: 20 };
        let mut g = assemble_layout(&c, ids[0], &ids[1..], grid, 0, None, &model.cfg.tokens).unwrap();
        let present = g.count(SlotState::Present);
        let gaps = g.count(SlotState::Gap);
        apply_mask_tokens(&mut g, ratio, model.mask_token(), &mut rng::substream(seed, "mask")).unwrap();
        prop_assert_eq!(g.count(SlotState::Masked), (ratio * present as f64).floor() as usize);
        prop_assert_eq!(g.count(SlotState::Gap), gaps);
    }

    #[test]
    fn gaps_attend_only_to_themselves_and_masks_are_never_keys(seed in 0u64..1000) {
        let model = tiny();
        let c = common::clip(seed, 2, 12, 0.5, false);
        let mut g = common::training_grid(&model, &c, 12, 0.3, seed);
        let m = g.attention_mask();
        for i in 0..g.len() {
            for j in 0..g.len() {
                let expect = i == j || (g.states[j] == SlotState::Present && g.states[i] != SlotState::Gap);
                prop_assert_eq!(m[[i, j]], expect);
            }
        }
        infill_gaps(&mut g, model.mask_token());
        prop_assert!(g.states.iter().all(|&s| s != SlotState::Gap));
    }

    #[test]
    fn pe_is_bounded_and_deterministic(t in 0usize..4096, i in 0usize..16, half in 1usize..64) {
        let d = 4 * half;
        let a = positional_encoding(t, i, d).unwrap();
        prop_assert_eq!(a.len(), d);
        prop_assert!(a.iter().all(|v| v.abs() <= 1.0));
        prop_assert_eq!(a, positional_encoding(t, i, d).unwrap());
    }
}
