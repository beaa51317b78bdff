//! Synthetic stand-in for a video backbone's contextualized appearance features.
//!
//! At every sample time the provider builds a 48-wide description of the
//! person (32 pooled body features over the context window), the scene
//! (8 values, including the carried-object bit and neighbor count) and 8
//! noise draws, then pushes it through a fixed low-rank random map into 1152
//! dimensions. The low rank mixes noise into the signal, so the feature is
//! informative but lossy.

use std::sync::Arc;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::rotation::log_map;
use crate::scene::{class, GeneratorConfig};
use crate::tracklet::{mat3_to_f64, AppearanceFeature, Clip, Tracklet, APPEARANCE_DIM};

pub const SUMMARY_DIM: usize = 32;
pub const CONTEXT_DIM: usize = 8;
pub const NOISE_DIM: usize = 8;
const INPUT_DIM: usize = SUMMARY_DIM + CONTEXT_DIM + NOISE_DIM;

/// Joints whose rotation vectors enter the pooled body summary.
const SUMMARY_JOINTS: [usize; 9] = [0, 1, 3, 4, 15, 16, 17, 18, 14];

/// Fixed random map from the 48-wide description to the appearance feature.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceProviderSpec {
    /// Context half-window M in frames; the body summary pools over `[t - M, t + M]`.
    pub half_window: u32,
    pub rank: usize,
    pub seed: u64,
    compress: Vec<f64>,
    expand: Vec<f64>,
}

impl AppearanceProviderSpec {
    pub fn new(seed: u64, half_window: u32, rank: usize) -> Result<Self> {
        if half_window < 1 {
            return Err(Error::Config("appearance half_window must be at least 1".into()));
        }
        if !(1..=INPUT_DIM).contains(&rank) {
            return Err(Error::Config(format!("appearance rank must lie in 1..={INPUT_DIM}")));
        }
        let mut r = rng::substream(seed, "appearance-map");
        let c = Normal::new(0.0, (1.0 / INPUT_DIM as f64).sqrt()).expect("valid normal");
        let e = Normal::new(0.0, (1.0 / rank as f64).sqrt()).expect("valid normal");
        let compress = (0..rank * INPUT_DIM).map(|_| c.sample(&mut r)).collect();
        let expand = (0..APPEARANCE_DIM * rank).map(|_| e.sample(&mut r)).collect();
        Ok(AppearanceProviderSpec {
            half_window,
            rank,
            seed,
            compress,
            expand,
        })
    }

    pub fn map(&self, input: &[f64; INPUT_DIM]) -> Vec<f32> {
        let z: Vec<f64> = self
            .compress
            .chunks_exact(INPUT_DIM)
            .map(|row| row.iter().zip(input).map(|(a, b)| a * b).sum())
            .collect();
        self.expand
            .chunks_exact(self.rank)
            .map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceConfig {
    /// Backbone sampling frequency f_s in Hz.
    pub sample_hz: f64,
    /// Standard deviation of the noise inputs.
    pub sigma: f64,
    pub interaction_radius: f64,
    pub seed: u64,
}

impl AppearanceConfig {
    pub fn from_generator(cfg: &GeneratorConfig) -> Self {
        AppearanceConfig {
            sample_hz: cfg.appearance_hz,
            sigma: cfg.appearance_sigma,
            interaction_radius: cfg.interaction_radius,
            seed: rng::derive_seed(cfg.seed, "appearance"),
        }
    }
}

/// Per-frame body features pooled into the summary.
fn frame_features(t: &Tracklet, frame: u32, fps: u32) -> Option<[f64; SUMMARY_DIM]> {
    let d = t.get(frame)?;
    let pose = &d.person.pose;
    let mut f = [0.0; SUMMARY_DIM];
    for (slot, &j) in SUMMARY_JOINTS.iter().enumerate() {
        let v = log_map(&mat3_to_f64(&pose.theta.0[j]));
        f[3 * slot..3 * slot + 3].copy_from_slice(&v);
    }
    f[27] = log_map(&mat3_to_f64(&pose.theta.0[2]))[0];
    let prev = (t.start_frame..frame).rev().find_map(|p| t.get(p).map(|d| (p, d)));
    f[28] = match prev {
        Some((p, pd)) => {
            let a = pd.person.pose.location;
            let b = pose.location;
            let dist = (f64::from(b[0] - a[0]).powi(2) + f64::from(b[2] - a[2]).powi(2)).sqrt();
            dist * f64::from(fps) / f64::from(frame - p)
        }
        None => 0.0,
    };
    f[29] = f64::from(pose.location[1]);
    let psi = mat3_to_f64(&pose.psi);
    f[30] = psi[0][2];
    f[31] = psi[0][0];
    Some(f)
}

fn planar_distance(a: [f32; 3], b: [f32; 3]) -> f64 {
    (f64::from(a[0] - b[0]).powi(2) + f64::from(a[2] - b[2]).powi(2)).sqrt()
}

/// Sample times of a tracklet: its first frame, then every `fps / f_s` frames.
pub(crate) fn sample_times(t: &Tracklet, fps: u32, sample_hz: f64) -> Vec<u32> {
    let step = f64::from(fps) / sample_hz;
    (0..)
        .map(|k| t.start_frame + (k as f64 * step).round() as u32)
        .take_while(|&f| f < t.end_frame())
        .collect()
}

/// Attach appearance features to every detection of `clip`.
///
/// Frames nearer to a sample time than to any other (ties go to the earlier
/// sample) share that sample's vector.
pub fn synth_appearance(clip: &Clip, spec: &AppearanceProviderSpec, cfg: &AppearanceConfig) -> Result<Clip> {
    if !(cfg.sample_hz > 0.0) || cfg.sample_hz > f64::from(clip.fps) {
        return Err(Error::Config(format!(
            "appearance sampling frequency must satisfy 0 < f_s <= fps (f_s = {}, fps = {})",
            cfg.sample_hz, clip.fps
        )));
    }
    let noise = Normal::new(0.0, cfg.sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let clip_seed = rng::derive_seed(cfg.seed, &clip.clip_id);
    let mut scene_rng = rng::substream(clip_seed, "scene-context");
    let scene_const: Vec<f64> = (0..5)
        .map(|_| Normal::new(0.0, 1.0).expect("valid").sample(&mut scene_rng))
        .collect();
    let carry_class = clip.class_catalog.index_of("carry_object").unwrap_or(class::CARRY_OBJECT);

    let mut out = clip.clone();
    for (ti, t) in clip.tracklets.iter().enumerate() {
        let times = sample_times(t, clip.fps, cfg.sample_hz);
        let mut noise_rng = rng::indexed(clip_seed, "appearance-noise", u64::from(t.track_id));
        let noise_draws: Vec<[f64; NOISE_DIM]> = times
            .iter()
            .map(|_| std::array::from_fn(|_| noise.sample(&mut noise_rng)))
            .collect();

        let mut vectors: Vec<Option<Arc<[f32]>>> = vec![None; times.len()];
        for (i, e) in t.entries.iter().enumerate() {
            if e.is_none() {
                continue;
            }
            let frame = t.start_frame + i as u32;
            let k = nearest_sample(&times, frame);
            let tau = times[k];
            let u = vectors[k].get_or_insert_with(|| {
                let mut input = [0.0; INPUT_DIM];
                let lo = tau.saturating_sub(spec.half_window).max(t.start_frame);
                let hi = (tau + spec.half_window).min(t.end_frame() - 1);
                let feats: Vec<[f64; SUMMARY_DIM]> =
                    (lo..=hi).filter_map(|f| frame_features(t, f, clip.fps)).collect();
                if !feats.is_empty() {
                    for f in &feats {
                        for (acc, v) in input[..SUMMARY_DIM].iter_mut().zip(f) {
                            *acc += v / feats.len() as f64;
                        }
                    }
                }
                let ctx = &mut input[SUMMARY_DIM..SUMMARY_DIM + CONTEXT_DIM];
                let carry = clip
                    .labels_for(t.track_id)
                    .min_by_key(|l| (i64::from(l.frame) - i64::from(tau)).abs())
                    .map(|l| l.classes.get(carry_class));
                ctx[0] = match carry {
                    Some(true) => 1.5,
                    Some(false) => -1.5,
                    None => 0.0,
                };
                let me = t.get(tau).or_else(|| t.get(frame)).map(|d| d.person.pose.location);
                let (mut neighbors, mut nearest) = (0.0, 5.0f64);
                if let Some(me) = me {
                    for (oi, o) in clip.tracklets.iter().enumerate() {
                        if oi == ti {
                            continue;
                        }
                        if let Some(od) = o.get(tau) {
                            let d = planar_distance(me, od.person.pose.location);
                            if d < cfg.interaction_radius {
                                neighbors += 1.0;
                            }
                            nearest = nearest.min(d);
                        }
                    }
                }
                ctx[1] = neighbors;
                ctx[2] = nearest / 5.0;
                ctx[3..].copy_from_slice(&scene_const);
                input[SUMMARY_DIM + CONTEXT_DIM..].copy_from_slice(&noise_draws[k]);
                Arc::from(spec.map(&input))
            });
            let u = u.clone();
            if let Some(Some(d)) = out.tracklets[ti].entries.get_mut(i) {
                d.person.appearance = Some(AppearanceFeature { u, source_frame: tau });
            }
        }
    }
    Ok(out)
}

fn nearest_sample(times: &[u32], frame: u32) -> usize {
    let mut best = 0;
    for (k, &s) in times.iter().enumerate() {
        if frame.abs_diff(s) < frame.abs_diff(times[best]) {
            best = k;
        }
    }
    best
}
