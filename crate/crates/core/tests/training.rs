mod common;

use lart::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use lart::eval::{evaluate, InferenceConfig};
use lart::scene::{broadcast_ground_truth, teacher_pseudo_label};
use lart::train::{finetune, lr_at, pretrain, TrainConfig, TrainSample};
use lart::transformer::{Model, ModelConfig};

fn data(n: u64, teacher: bool) -> Vec<TrainSample> {
    (0..n)
        .map(|s| {
            let clip = common::clip(50 + s, 3, 32, 0.2, false);
            let supervision = if teacher {
                teacher_pseudo_label(&clip, 0.1, s)
            } else {
                broadcast_ground_truth(&clip)
            };
            TrainSample { clip, supervision }
        })
        .collect()
}

fn quick(mut cfg: TrainConfig) -> TrainConfig {
    cfg.total_epochs = 6;
    cfg.warmup_epochs = 1;
    cfg.batch_size = 2;
    cfg.window = 32;
    cfg.n_tracks = 3;
    cfg.seed = 3;
    cfg
}

fn model_cfg() -> ModelConfig {
    let mut m = ModelConfig::tiny(12);
    m.layers = 1;
    m
}

#[test]
fn training_is_reproducible_and_reduces_the_loss() {
    let d = data(4, true);
    let cfg = quick(TrainConfig::pretrain());
    let a = pretrain(&model_cfg(), &d, &cfg, None).unwrap();
    let b = pretrain(&model_cfg(), &d, &cfg, None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.report.to_csv(), b.report.to_csv());
    assert_eq!(a.report.epochs.len(), 6);
    assert_eq!(a.report.steps, 12);
    let first = a.report.epochs[0].loss;
    let last = a.report.final_loss().unwrap();
    assert!(last < first, "loss {first} -> {last}");
    let c = pretrain(&model_cfg(), &d, &TrainConfig { seed: 4, ..cfg }, None).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn epochs_record_the_scheduled_rate() {
    let d = data(4, false);
    let cfg = quick(TrainConfig::finetune());
    let out = pretrain(&model_cfg(), &d, &cfg, None).unwrap();
    for e in &out.report.epochs {
        let last_step = (e.epoch as u64) * 2 - 1;
        assert_eq!(e.lr, lr_at(last_step, 2, &cfg));
    }
}

#[test]
fn finetuning_resumes_from_a_saved_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick(TrainConfig::pretrain());
    let pre = pretrain(&model_cfg(), &data(3, true), &cfg, None).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint::from_model(&pre.model, pre.report.steps, Some(&pre.optimizer)), &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.optimizer.as_ref(), Some(&pre.optimizer));
    let model = loaded.to_model(Some(&model_cfg())).unwrap();
    assert_eq!(model, pre.model);
    let gt = data(3, false);
    let icfg = InferenceConfig {
        n_tracks: 3,
        window: 32,
        ..InferenceConfig::default()
    };
    let clips: Vec<_> = gt.iter().map(|s| s.clip.clone()).collect();
    let ft = finetune(model, &gt, &quick(TrainConfig::finetune()), Some((&clips, &icfg))).unwrap();
    assert_eq!(ft.report.final_map(), evaluate(&ft.model, &clips, &icfg).unwrap().map);
    assert_ne!(ft.model, pre.model);
    assert!(Model::new(&model_cfg(), 0).unwrap().params.count() == ft.model.params.count());
}

#[test]
fn invalid_settings_are_rejected_before_training() {
    let d = data(1, false);
    let bad = [
        TrainConfig { batch_size: 0, ..TrainConfig::pretrain() },
        TrainConfig { mask_ratio: 1.5, ..TrainConfig::pretrain() },
        TrainConfig { warmup_epochs: 40, ..TrainConfig::pretrain() },
        TrainConfig { beta2: 1.0, ..TrainConfig::pretrain() },
    ];
    for cfg in bad {
        assert!(pretrain(&model_cfg(), &d, &cfg, None).is_err(), "{cfg:?}");
    }
    assert!(pretrain(&model_cfg(), &[], &TrainConfig::pretrain(), None).is_err());
}
