//! Typed views of the flat key space.

use lart::ablation::{AblationConfig, Arm};
use lart::eval::InferenceConfig;
use lart::scene::{AppearanceProviderSpec, GeneratorConfig};
use lart::tokenizer::{TokenConfig, TokenMode};
use lart::train::{Stage, TrainConfig};
use lart::transformer::{ModelConfig, NormPosition};

use crate::config::Settings;
use crate::error::{CliError, Result};

/// Every key understood by some command.
pub const ALL: &[&str] = &[
    "seed",
    // dataset generation
    "num_clips",
    "n_people",
    "num_frames",
    "fps",
    "occlusion_rate",
    "mean_gap",
    "interaction_radius",
    "teacher_flip_p",
    "appearance",
    "appearance_hz",
    "appearance_sigma",
    "appearance_half_window",
    "appearance_rank",
    "pair_prob",
    "solo_program_prob",
    "carry_prob",
    "phone_prob",
    // model
    "profile",
    "layers",
    "heads",
    "d_model",
    "mlp_ratio",
    "norm_position",
    "token_mode",
    "pose_embed",
    "appearance_embed",
    "proj_hidden",
    // training
    "base_lr",
    "beta1",
    "beta2",
    "eps",
    "weight_decay",
    "warmup_epochs",
    "total_epochs",
    "batch_size",
    "mask_ratio",
    "layer_wise_decay",
    "dropout",
    "drop_path",
    "grad_clip",
    "n_tracks",
    "window",
    "eval_every",
    // evaluation
    "eval_n_tracks",
    "pooling_width",
    "eval_window",
    "iou_threshold",
    // ablation
    "seeds",
    "arms",
    "baseline",
];

/// Dataset recipe: how many clips, the per-clip generator settings and the
/// optional appearance provider.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub num_clips: usize,
    pub generator: GeneratorConfig,
    /// `(half_window, rank)` of the appearance provider, if enabled.
    pub appearance: Option<(u32, usize)>,
}

impl DatasetSpec {
    pub fn provider(&self) -> Result<Option<AppearanceProviderSpec>> {
        match self.appearance {
            Some((hw, rank)) => Ok(Some(AppearanceProviderSpec::new(
                lart::rng::derive_seed(self.seed, "gen/appearance"),
                hw,
                rank,
            )?)),
            None => Ok(None),
        }
    }

    pub fn clip_seed(&self, index: usize) -> u64 {
        lart::rng::derive_seed(self.seed, &format!("gen/clip/{index}"))
    }
}

pub fn dataset(s: &Settings) -> Result<DatasetSpec> {
    let d = GeneratorConfig::default();
    let generator = GeneratorConfig {
        n_people: s.usize("n_people", d.n_people)?,
        num_frames: s.u32("num_frames", d.num_frames)?,
        fps: s.u32("fps", d.fps)?,
        occlusion_rate: s.f64("occlusion_rate", d.occlusion_rate)?,
        mean_gap: s.f64("mean_gap", d.mean_gap)?,
        interaction_radius: s.f64("interaction_radius", d.interaction_radius)?,
        teacher_flip_p: s.f64("teacher_flip_p", d.teacher_flip_p)?,
        appearance_hz: s.f64("appearance_hz", d.appearance_hz)?,
        appearance_sigma: s.f64("appearance_sigma", d.appearance_sigma)?,
        pair_prob: s.f64("pair_prob", d.pair_prob)?,
        solo_program_prob: s.f64("solo_program_prob", d.solo_program_prob)?,
        carry_prob: s.f64("carry_prob", d.carry_prob)?,
        phone_prob: s.f64("phone_prob", d.phone_prob)?,
        seed: 0,
    };
    generator.validate()?;
    let appearance = if s.bool("appearance", true)? {
        Some((s.u32("appearance_half_window", 4)?, s.usize("appearance_rank", 16)?))
    } else {
        None
    };
    let spec = DatasetSpec {
        seed: s.u64("seed", 0)?,
        num_clips: s.usize("num_clips", 100)?,
        generator,
        appearance,
    };
    if spec.num_clips == 0 {
        return Err(CliError::Config("num_clips must be at least 1".into()));
    }
    spec.provider()?;
    Ok(spec)
}

/// Model architecture; `base` supplies defaults when `profile` is not given.
pub fn model(s: &Settings, num_classes: usize, base: Option<&ModelConfig>) -> Result<ModelConfig> {
    let profile_default = if base.is_some() { "checkpoint" } else { "standard" };
    let profile = s.string("profile", profile_default)?;
    let mut m = match (profile.as_str(), base) {
        ("standard", _) => ModelConfig::standard(num_classes),
        ("tiny", _) => ModelConfig::tiny(num_classes),
        ("checkpoint", Some(b)) => b.clone(),
        (p, _) => return Err(CliError::Config(format!("unknown profile {p:?} (expected tiny or standard)"))),
    };
    m.layers = s.usize("layers", m.layers)?;
    m.heads = s.usize("heads", m.heads)?;
    m.d_model = s.usize("d_model", m.d_model)?;
    m.mlp_ratio = s.usize("mlp_ratio", m.mlp_ratio)?;
    let norm = s.string("norm_position", m.norm_position.as_str())?;
    m.norm_position = NormPosition::parse(&norm)
        .ok_or_else(|| CliError::Config(format!("norm_position {norm:?} must be pre or post")))?;
    let mode_s = s.string("token_mode", m.tokens.mode.as_str())?;
    let mode = TokenMode::parse(&mode_s)
        .ok_or_else(|| CliError::Config(format!("token_mode {mode_s:?} must be pose, fused or appearance")))?;
    let widths = if mode == m.tokens.mode && m.tokens.pose_embed + m.tokens.appearance_embed == m.d_model {
        m.tokens.clone()
    } else {
        TokenConfig::for_mode(mode, m.d_model)
    };
    m.tokens = TokenConfig {
        mode,
        pose_embed: s.usize("pose_embed", widths.pose_embed)?,
        appearance_embed: s.usize("appearance_embed", widths.appearance_embed)?,
        proj_hidden: s.usize("proj_hidden", widths.proj_hidden)?,
    };
    m.num_classes = num_classes;
    m.validate()?;
    Ok(m)
}

pub fn train(s: &Settings, stage: Stage) -> Result<TrainConfig> {
    let d = TrainConfig::for_stage(stage);
    let c = TrainConfig {
        stage,
        base_lr: s.f64("base_lr", d.base_lr)?,
        beta1: s.f64("beta1", d.beta1)?,
        beta2: s.f64("beta2", d.beta2)?,
        eps: s.f64("eps", d.eps)?,
        weight_decay: s.f64("weight_decay", d.weight_decay)?,
        warmup_epochs: s.usize("warmup_epochs", d.warmup_epochs)?,
        total_epochs: s.usize("total_epochs", d.total_epochs)?,
        batch_size: s.usize("batch_size", d.batch_size)?,
        mask_ratio: s.f64("mask_ratio", d.mask_ratio)?,
        layer_wise_decay: s.opt_f64("layer_wise_decay", d.layer_wise_decay)?,
        dropout: s.f64("dropout", d.dropout)?,
        drop_path: s.f64("drop_path", d.drop_path)?,
        grad_clip: s.opt_f64("grad_clip", d.grad_clip)?,
        n_tracks: s.usize("n_tracks", d.n_tracks)?,
        window: s.usize("window", d.window)?,
        seed: s.u64("seed", d.seed)?,
        eval_every: s.usize("eval_every", d.eval_every)?,
    };
    c.validate()?;
    Ok(c)
}

pub fn inference(s: &Settings, window_default: usize) -> Result<InferenceConfig> {
    let d = InferenceConfig::default();
    let c = InferenceConfig {
        n_tracks: s.usize("eval_n_tracks", d.n_tracks)?,
        pooling_width: s.usize("pooling_width", d.pooling_width)?,
        window: s.usize("eval_window", window_default)?,
        seed: s.u64("seed", d.seed)?,
        iou_threshold: s.f64("iou_threshold", d.iou_threshold)?,
    };
    c.validate()?;
    Ok(c)
}

pub fn parse_arm(name: &str) -> Result<Arm> {
    let bad = || CliError::Config(format!("arm {name:?} must look like pose-n3, fused-n1 or appearance-n1"));
    let (mode, n) = name.rsplit_once("-n").ok_or_else(bad)?;
    let mode = TokenMode::parse(mode).ok_or_else(bad)?;
    let n: usize = n.parse().map_err(|_| bad())?;
    Ok(Arm::new(mode, n))
}

/// Ablations train one supervised stage, so they start from the fine-tuning recipe.
pub fn ablation(s: &Settings, num_classes: usize) -> Result<AblationConfig> {
    let model = model(s, num_classes, None)?;
    let train = train(s, Stage::Finetune)?;
    let inference = inference(s, train.window)?;
    let default_arms: Vec<String> = Arm::standard_set().into_iter().map(|a| a.name).collect();
    let arms = s
        .string_list("arms", &default_arms)?
        .iter()
        .map(|n| parse_arm(n))
        .collect::<Result<Vec<_>>>()?;
    let baseline = s.string("baseline", "pose-n1")?;
    let cfg = AblationConfig {
        model,
        train,
        inference,
        seeds: s.u64_list("seeds", &[0, 1, 2])?,
        arms,
        baseline,
    };
    cfg.validate()?;
    Ok(cfg)
}
