//! Two-stage training: pseudo-label pretraining, then ground-truth finetuning.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{evaluate, fmt_opt, InferenceConfig};
use crate::optim::{clip_grad_norm, lr_multipliers, optimizer_step, warmup_cosine, AdamState, AdamW, StepOutcome};
use crate::params::{Grads, Group};
use crate::rng;
use crate::scene::Supervision;
use crate::tokenizer::{apply_mask_tokens, assemble_layout, sample_supporting, GridConfig};
use crate::tracklet::{trim_offset, Clip};
use crate::transformer::{bce_loss_grad, Mode, Model, ModelConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub mask_ratio: f64,
    /// `None` disables layer-wise learning-rate decay.
    pub layer_wise_decay: Option<f64>,
    pub dropout: f64,
    pub drop_path: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub n_tracks: usize,
    pub window: usize,
    pub seed: u64,
    /// Evaluate every this many epochs when an evaluation set is given (0: final epoch only).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        TrainConfig {
            stage: Stage::Pretrain,
            base_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            warmup_epochs: 5,
            total_epochs: 30,
            batch_size: 64,
            mask_ratio: 0.4,
            layer_wise_decay: None,
            dropout: 0.1,
            drop_path: 0.0,
            grad_clip: Some(1.0),
            n_tracks: 5,
            window: 128,
            seed: 0,
            eval_every: 0,
        }
    }

    pub fn finetune() -> Self {
        TrainConfig {
            stage: Stage::Finetune,
            mask_ratio: 0.0,
            layer_wise_decay: Some(0.9),
            drop_path: 0.1,
            ..Self::pretrain()
        }
    }

    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::Pretrain => Self::pretrain(),
            Stage::Finetune => Self::finetune(),
        }
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.warmup_epochs > self.total_epochs {
            return bad(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.total_epochs == 0 || self.batch_size == 0 || self.n_tracks == 0 || self.window == 0 {
            return bad("total_epochs, batch_size, n_tracks and window must be positive".into());
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return bad(format!("base_lr {} must be finite and non-negative", self.base_lr));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("dropout", self.dropout), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1)"));
            }
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1]", self.mask_ratio));
        }
        if let Some(d) = self.layer_wise_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("layer_wise_decay {d} outside (0, 1]"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative".into());
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        vec![
            ("stage", self.stage.as_str().to_string()),
            ("base_lr", self.base_lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("total_epochs", self.total_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("schedule", "cosine".to_string()),
            ("mask_ratio", self.mask_ratio.to_string()),
            ("layer_wise_decay", opt(self.layer_wise_decay)),
            ("dropout", self.dropout.to_string()),
            ("drop_path", self.drop_path.to_string()),
            ("grad_clip", opt(self.grad_clip)),
            ("n_tracks", self.n_tracks.to_string()),
            ("window", self.window.to_string()),
            ("seed", self.seed.to_string()),
            ("eval_every", self.eval_every.to_string()),
        ]
    }

    pub fn hash(&self) -> String {
        let text: String = self.pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        hex16(&Sha256::digest(text.as_bytes()))
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    bytes[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Learning rate at optimizer step `step` under warmup + cosine decay.
pub fn lr_at(step: u64, steps_per_epoch: u64, cfg: &TrainConfig) -> f64 {
    let warm = cfg.warmup_epochs as u64 * steps_per_epoch;
    let total = cfg.total_epochs as u64 * steps_per_epoch;
    warmup_cosine(step, warm, total, cfg.base_lr)
}

/// A clip with its dense training targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub clip: Clip,
    pub supervision: Supervision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    pub eval_map: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub stage: Stage,
    pub seed: u64,
    pub config_hash: String,
    pub config: Vec<(&'static str, String)>,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub steps: u64,
    pub skipped_steps: u64,
    /// Samples without any supervised token.
    pub skipped_samples: u64,
    pub layer_multipliers: Vec<(String, f64)>,
    /// Excluded from the text and CSV renderings, which stay reproducible.
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn final_map(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.eval_map)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stage {}", self.stage.as_str());
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "config_hash {}", self.config_hash);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config {k} {v}");
        }
        let _ = writeln!(s, "steps {}", self.steps);
        let _ = writeln!(s, "skipped_steps {}", self.skipped_steps);
        let _ = writeln!(s, "skipped_samples {}", self.skipped_samples);
        for (g, m) in &self.layer_multipliers {
            let _ = writeln!(s, "lr_multiplier {g} {m:.10}");
        }
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "epoch {} loss {:.10} lr {:.10e} map {}",
                e.epoch,
                e.loss,
                e.lr,
                fmt_opt(e.eval_map)
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,lr,eval_map\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{:.10},{:.10e},{}", e.epoch, e.loss, e.lr, fmt_opt(e.eval_map));
        }
        s
    }
}

/// Trained weights, optimizer state and report.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub optimizer: AdamState,
    pub report: TrainReport,
}

/// Worker pool honoring `LART_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("LART_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("LART_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n.max(1));
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn group_multipliers(model: &Model, decay: f64) -> Vec<(String, f64)> {
    let mults = lr_multipliers(&model.params, model.cfg.layers, decay);
    let mut out: Vec<(String, f64)> = Vec::new();
    for (t, m) in model.params.tensors.iter().zip(mults) {
        let name = match t.group {
            Group::Embedding => "embedding".to_string(),
            Group::Layer(l) => format!("layer{l}"),
            Group::Head => "head".to_string(),
        };
        if out.last().map(|(n, _)| n != &name).unwrap_or(true) {
            out.push((name, m));
        }
    }
    out
}

/// Loss and gradients of one randomly drawn grid from `sample`.
fn sample_step(model: &Model, sample: &TrainSample, cfg: &TrainConfig, draw: u64) -> Result<Option<(f64, Grads)>> {
    let label = format!("train/{}/sample", cfg.stage.as_str());
    let mut r = rng::indexed(cfg.seed, &label, draw);
    let clip = &sample.clip;
    let ids = clip.track_ids();
    if ids.is_empty() {
        return Ok(None);
    }
    let poi = ids[r.gen_range(0..ids.len())];
    let supporting = sample_supporting(clip, poi, cfg.n_tracks - 1, &mut r);
    let track = clip.track(poi).expect("poi drawn from clip");
    let start = track.start_frame + trim_offset(track, cfg.window, &mut r) as u32;
    let grid = GridConfig {
        n_tracks: cfg.n_tracks,
        window: cfg.window,
    };
    let mut g = assemble_layout(clip, poi, &supporting, grid, start, Some(&sample.supervision), &model.cfg.tokens)?;
    apply_mask_tokens(&mut g, cfg.mask_ratio, model.mask_token(), &mut r)?;
    let mode = Mode::Train {
        dropout: cfg.dropout,
        drop_path: cfg.drop_path,
        seed: r.gen(),
    };
    let (logits, cache) = model.forward(&mut g, mode)?;
    let (loss, dlogits) = match bce_loss_grad(logits.view(), &g.labels, &g.loss_mask()) {
        Ok(v) => v,
        Err(Error::Empty(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let grads = model.backward(&cache, dlogits.view())?;
    Ok(Some((loss, grads)))
}

/// Optimize `model` on `data` for `cfg.total_epochs` epochs.
///
/// Each epoch visits every clip once in a seeded random order and draws one
/// (person of interest, supporting set, trim) sample from it. Batch gradients
/// are averaged in a fixed order, so results do not depend on thread count.
pub fn train(
    model: &mut Model,
    optimizer: &mut AdamState,
    data: &[TrainSample],
    cfg: &TrainConfig,
    eval: Option<(&[Clip], &InferenceConfig)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset"));
    }
    if !optimizer.matches(&model.params) {
        return Err(Error::CheckpointMismatch("optimizer state does not fit the model".into()));
    }
    let started = Instant::now();
    let pool = thread_pool()?;
    let spe = data.len().div_ceil(cfg.batch_size) as u64;
    let decay = cfg.layer_wise_decay.unwrap_or(1.0);
    let mults = lr_multipliers(&model.params, model.cfg.layers, decay);
    let hp = cfg.adamw();
    let chunk = 2 * pool.current_num_threads().max(1);
    let mut report = TrainReport {
        stage: cfg.stage,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.pairs(),
        epochs: Vec::with_capacity(cfg.total_epochs),
        step_losses: Vec::new(),
        steps: 0,
        skipped_steps: 0,
        skipped_samples: 0,
        layer_multipliers: group_multipliers(model, decay),
        wall_clock_secs: 0.0,
    };
    let mut step: u64 = 0;
    for epoch in 0..cfg.total_epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut r = rng::indexed(cfg.seed, &format!("train/{}/shuffle", cfg.stage.as_str()), epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, r.gen_range(0..=i));
        }
        let (mut epoch_loss, mut epoch_n) = (0.0, 0usize);
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut sum = model.params.zero_grads();
            let (mut batch_loss, mut n) = (0.0, 0usize);
            for part in batch.chunks(chunk) {
                let model_ref = &*model;
                let results: Vec<Result<Option<(f64, Grads)>>> = pool.install(|| {
                    part.par_iter()
                        .map(|&i| sample_step(model_ref, &data[i], cfg, (epoch * data.len() + i) as u64))
                        .collect()
                });
                for res in results {
                    match res? {
                        Some((l, g)) => {
                            sum.add_assign(&g);
                            batch_loss += l;
                            n += 1;
                        }
                        None => report.skipped_samples += 1,
                    }
                }
            }
            lr = lr_at(step, spe, cfg);
            if n > 0 {
                sum.scale(1.0 / n as f64);
                if let Some(c) = cfg.grad_clip {
                    clip_grad_norm(&mut sum, c);
                }
                if optimizer_step(&mut model.params, &sum, optimizer, lr, &hp, &mults) == StepOutcome::Skipped {
                    report.skipped_steps += 1;
                }
                report.step_losses.push(batch_loss / n as f64);
                epoch_loss += batch_loss;
                epoch_n += n;
            }
            step += 1;
        }
        let last = epoch + 1 == cfg.total_epochs;
        let due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        let eval_map = match eval {
            Some((clips, icfg)) if last || due => pool.install(|| evaluate(model, clips, icfg))?.map,
            _ => None,
        };
        report.epochs.push(EpochRecord {
            epoch: epoch + 1,
            loss: if epoch_n > 0 { epoch_loss / epoch_n as f64 } else { f64::NAN },
            lr,
            eval_map,
        });
    }
    report.steps = step;
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Train a freshly initialized model on teacher pseudo-labels.
pub fn pretrain(
    model_cfg: &ModelConfig,
    data: &[TrainSample],
    cfg: &TrainConfig,
    eval: Option<(&[Clip], &InferenceConfig)>,
) -> Result<TrainOutcome> {
    let mut model = Model::new(model_cfg, rng::derive_seed(cfg.seed, "model"))?;
    let mut optimizer = AdamState::new(&model.params);
    let report = train(&mut model, &mut optimizer, data, cfg, eval)?;
    Ok(TrainOutcome {
        model,
        optimizer,
        report,
    })
}

/// Continue from pretrained weights on ground-truth labels with a fresh optimizer.
pub fn finetune(
    mut model: Model,
    data: &[TrainSample],
    cfg: &TrainConfig,
    eval: Option<(&[Clip], &InferenceConfig)>,
) -> Result<TrainOutcome> {
    let mut optimizer = AdamState::new(&model.params);
    let report = train(&mut model, &mut optimizer, data, cfg, eval)?;
    Ok(TrainOutcome {
        model,
        optimizer,
        report,
    })
}
