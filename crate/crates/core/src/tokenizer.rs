//! Turning a clip window into a track × time token grid.
//!
//! Slot 0 always holds the person of interest; slots `1..N` hold supporting
//! tracks or padding. Token `(slot, t)` lives at index `slot · T_w + t`.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;

use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpCache};
use crate::params::{Grads, Group, Init, ParamStore};
use crate::rng::Rng;
use crate::scene::Supervision;
use crate::tracklet::{Clip, MultiHot, PersonPose, APPEARANCE_DIM, POSE_DIM};

/// Which person-vector channels make up a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TokenMode {
    PoseOnly,
    Fused,
    AppearanceOnly,
}

impl TokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenMode::PoseOnly => "pose",
            TokenMode::Fused => "fused",
            TokenMode::AppearanceOnly => "appearance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pose" => Some(TokenMode::PoseOnly),
            "fused" => Some(TokenMode::Fused),
            "appearance" => Some(TokenMode::AppearanceOnly),
            _ => None,
        }
    }

    pub fn uses_pose(self) -> bool {
        self != TokenMode::AppearanceOnly
    }

    pub fn uses_appearance(self) -> bool {
        self != TokenMode::PoseOnly
    }
}

/// Projection widths for the token embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenConfig {
    pub mode: TokenMode,
    pub pose_embed: usize,
    pub appearance_embed: usize,
    /// Width of both hidden layers of each projection MLP.
    pub proj_hidden: usize,
}

impl TokenConfig {
    pub fn pose_only(d_model: usize) -> Self {
        TokenConfig {
            mode: TokenMode::PoseOnly,
            pose_embed: d_model,
            appearance_embed: 0,
            proj_hidden: d_model,
        }
    }

    pub fn fused(d_model: usize) -> Self {
        TokenConfig {
            mode: TokenMode::Fused,
            pose_embed: d_model / 2,
            appearance_embed: d_model - d_model / 2,
            proj_hidden: d_model,
        }
    }

    pub fn appearance_only(d_model: usize) -> Self {
        TokenConfig {
            mode: TokenMode::AppearanceOnly,
            pose_embed: 0,
            appearance_embed: d_model,
            proj_hidden: d_model,
        }
    }

    pub fn for_mode(mode: TokenMode, d_model: usize) -> Self {
        match mode {
            TokenMode::PoseOnly => Self::pose_only(d_model),
            TokenMode::Fused => Self::fused(d_model),
            TokenMode::AppearanceOnly => Self::appearance_only(d_model),
        }
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        if d_model == 0 || !d_model.is_multiple_of(4) {
            return Err(Error::Config(format!("d_model {d_model} must be a positive multiple of 4")));
        }
        if self.proj_hidden == 0 {
            return Err(Error::Config("proj_hidden must be positive".into()));
        }
        let (p, a) = (self.pose_embed, self.appearance_embed);
        let ok = match self.mode {
            TokenMode::PoseOnly => p == d_model && a == 0,
            TokenMode::Fused => p > 0 && a > 0 && p + a == d_model,
            TokenMode::AppearanceOnly => p == 0 && a == d_model,
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} tokens with pose_embed {p} and appearance_embed {a} do not fill d_model {d_model}",
                self.mode.as_str()
            )));
        }
        Ok(())
    }
}

/// Grid geometry: `n_tracks` slots by `window` frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridConfig {
    pub n_tracks: usize,
    pub window: usize,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tracks == 0 || self.window == 0 {
            return Err(Error::Config("grid needs at least one track slot and one frame".into()));
        }
        Ok(())
    }
}

/// Two-dimensional sinusoidal encoding of time `t` and track slot `i`.
///
/// The first half encodes `t` as `sin, cos` pairs with frequencies
/// `10000^(4r/D)` for `r < D/4`; the second half encodes `i` the same way.
pub fn positional_encoding(t: usize, i: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(Error::Config(format!("positional encoding width {d} is not divisible by 4")));
    }
    let mut out = vec![0.0; d];
    fill_pe(&mut out, t, i);
    Ok(out)
}

fn fill_pe(out: &mut [f64], t: usize, i: usize) {
    let d = out.len();
    for r in 0..d / 4 {
        let freq = 10000f64.powf(4.0 * r as f64 / d as f64);
        let (a, b) = (t as f64 / freq, i as f64 / freq);
        out[2 * r] = a.sin();
        out[2 * r + 1] = a.cos();
        out[d / 2 + 2 * r] = b.sin();
        out[d / 2 + 2 * r + 1] = b.cos();
    }
}

fn pe_matrix(n_tracks: usize, window: usize, d: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((n_tracks * window, d));
    for (idx, mut row) in pe.rows_mut().into_iter().enumerate() {
        fill_pe(row.as_slice_mut().expect("row-major"), idx % window, idx / window);
    }
    pe
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotState {
    /// No detection; the token is isolated from every other token.
    Gap,
    /// Projected person-vector.
    Present,
    /// Mask token: attends to present tokens but is never attended.
    Masked,
}

/// Raw person-vector at one grid position.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotInput {
    pub pose: Vec<f64>,
    /// Index into [`TokenGrid::appearance_bank`].
    pub appearance: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TokenGrid {
    pub n_tracks: usize,
    pub window: usize,
    pub d_model: usize,
    /// First clip frame covered by the grid.
    pub start_frame: u32,
    /// Track id per slot; `None` for padding rows.
    pub track_ids: Vec<Option<u32>>,
    pub states: Vec<SlotState>,
    pub inputs: Vec<Option<SlotInput>>,
    /// Distinct appearance vectors referenced by `inputs`.
    pub appearance_bank: Vec<Arc<[f32]>>,
    pub pe: Array2<f64>,
    /// Token contents; empty until [`embed_tokens`] or [`assemble_grid`] fills them.
    pub tokens: Array2<f64>,
    pub labels: Vec<Option<MultiHot>>,
}

impl TokenGrid {
    pub fn len(&self) -> usize {
        self.n_tracks * self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, slot: usize, t: usize) -> usize {
        slot * self.window + t
    }

    /// Slot id of the person of interest.
    pub fn poi_track_slot(&self) -> usize {
        0
    }

    pub fn may_attend(&self, i: usize, j: usize) -> bool {
        attends(&self.states, i, j)
    }

    /// Dense attention pattern; `true` means query `i` may attend key `j`.
    pub fn attention_mask(&self) -> Array2<bool> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.may_attend(i, j))
    }

    pub fn loss_mask(&self) -> Vec<bool> {
        self.states
            .iter()
            .zip(&self.labels)
            .map(|(s, l)| *s != SlotState::Gap && l.is_some())
            .collect()
    }

    pub fn count(&self, state: SlotState) -> usize {
        self.states.iter().filter(|&&s| s == state).count()
    }
}

pub(crate) fn attends(states: &[SlotState], i: usize, j: usize) -> bool {
    i == j || (states[j] == SlotState::Present && states[i] != SlotState::Gap)
}

/// Up to `count` other tracks of `clip`, drawn uniformly without replacement.
pub fn sample_supporting(clip: &Clip, poi: u32, count: usize, r: &mut Rng) -> Vec<u32> {
    let others: Vec<u32> = clip.track_ids().into_iter().filter(|&t| t != poi).collect();
    let k = count.min(others.len());
    index::sample(r, others.len(), k).into_iter().map(|i| others[i]).collect()
}

/// Lay out the grid for `poi` and its supporting tracks without computing
/// token contents.
///
/// Missing supporting slots are padded with fully gapped rows. Labels are
/// read from `supervision` where given.
pub fn assemble_layout(
    clip: &Clip,
    poi: u32,
    supporting: &[u32],
    grid: GridConfig,
    window_start: u32,
    supervision: Option<&Supervision>,
    tokens: &TokenConfig,
) -> Result<TokenGrid> {
    grid.validate()?;
    if clip.track(poi).is_none() {
        return Err(Error::NotFound(format!("track {poi} in clip {}", clip.clip_id)));
    }
    if supporting.len() + 1 > grid.n_tracks {
        return Err(Error::Config(format!(
            "{} supporting tracks do not fit {} slots",
            supporting.len(),
            grid.n_tracks
        )));
    }
    let mut ids = vec![poi];
    for &s in supporting {
        if ids.contains(&s) {
            return Err(Error::validation(format!("duplicate track id {s} in grid")));
        }
        if clip.track(s).is_none() {
            return Err(Error::NotFound(format!("track {s} in clip {}", clip.clip_id)));
        }
        ids.push(s);
    }
    let n = grid.n_tracks * grid.window;
    let mut track_ids = vec![None; grid.n_tracks];
    let mut states = vec![SlotState::Gap; n];
    let mut inputs = vec![None; n];
    let mut labels = vec![None; n];
    let mut bank: Vec<Arc<[f32]>> = Vec::new();
    let mut bank_index: HashMap<*const f32, usize> = HashMap::new();
    for (slot, &id) in ids.iter().enumerate() {
        track_ids[slot] = Some(id);
        let track = clip.track(id).expect("checked above");
        for t in 0..grid.window {
            let frame = window_start + t as u32;
            if frame >= clip.num_frames {
                break;
            }
            let Some(det) = track.get(frame) else { continue };
            let idx = slot * grid.window + t;
            let appearance = if tokens.mode.uses_appearance() {
                let a = det.person.appearance.as_ref().ok_or_else(|| {
                    Error::Config(format!(
                        "{} tokens need appearance features, clip {} has none",
                        tokens.mode.as_str(),
                        clip.clip_id
                    ))
                })?;
                let key = a.u.as_ptr();
                let k = *bank_index.entry(key).or_insert_with(|| {
                    bank.push(a.u.clone());
                    bank.len() - 1
                });
                Some(k)
            } else {
                None
            };
            let pose = det.person.pose.flatten().iter().map(|&v| v as f64).collect();
            states[idx] = SlotState::Present;
            inputs[idx] = Some(SlotInput { pose, appearance });
            labels[idx] = supervision.and_then(|s| s.get(id, frame));
        }
    }
    Ok(TokenGrid {
        n_tracks: grid.n_tracks,
        window: grid.window,
        d_model: 0,
        start_frame: window_start,
        track_ids,
        states,
        inputs,
        appearance_bank: bank,
        pe: Array2::zeros((0, 0)),
        tokens: Array2::zeros((0, 0)),
        labels,
    })
}

/// Lay out the grid and compute its token contents with `embedder`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_grid(
    clip: &Clip,
    poi: u32,
    supporting: &[u32],
    grid: GridConfig,
    window_start: u32,
    supervision: Option<&Supervision>,
    embedder: &TokenEmbedder,
    params: &ParamStore,
) -> Result<TokenGrid> {
    let mut g = assemble_layout(clip, poi, supporting, grid, window_start, supervision, &embedder.cfg)?;
    embed_tokens(&mut g, embedder, params)?;
    Ok(g)
}

/// Fill `g.tokens` (and the positional table) from the grid inputs.
pub fn embed_tokens(g: &mut TokenGrid, embedder: &TokenEmbedder, params: &ParamStore) -> Result<()> {
    prepare_pe(g, embedder.d_model);
    let (tokens, _) = embedder.embed(params, g)?;
    g.tokens = tokens;
    Ok(())
}

pub(crate) fn prepare_pe(g: &mut TokenGrid, d_model: usize) {
    if g.d_model != d_model || g.pe.nrows() != g.len() {
        g.d_model = d_model;
        g.pe = pe_matrix(g.n_tracks, g.window, d_model);
    }
}

fn write_mask_token(g: &mut TokenGrid, idx: usize, mask_token: ArrayView1<'_, f64>) {
    if g.tokens.nrows() == g.len() {
        let row = &mask_token + &g.pe.row(idx);
        g.tokens.row_mut(idx).assign(&row);
    }
}

/// Replace `⌊ratio · #present⌋` present tokens, chosen uniformly without
/// replacement, by `mask_token + PE`. Labels are kept so the masked tokens
/// stay supervised.
pub fn apply_mask_tokens(g: &mut TokenGrid, ratio: f64, mask_token: ArrayView1<'_, f64>, r: &mut Rng) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let present: Vec<usize> = (0..g.len()).filter(|&i| g.states[i] == SlotState::Present).collect();
    let k = (ratio * present.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(());
    }
    for pick in index::sample(r, present.len(), k) {
        let idx = present[pick];
        g.states[idx] = SlotState::Masked;
        write_mask_token(g, idx, mask_token);
    }
    Ok(())
}

/// Turn every gap of a real track into a mask token so the model predicts at
/// every frame. Padding rows stay gapped; the loss mask is unaffected.
pub fn infill_gaps(g: &mut TokenGrid, mask_token: ArrayView1<'_, f64>) {
    for slot in 0..g.n_tracks {
        if g.track_ids[slot].is_none() {
            continue;
        }
        for t in 0..g.window {
            let idx = g.index(slot, t);
            if g.states[idx] == SlotState::Gap {
                g.states[idx] = SlotState::Masked;
                write_mask_token(g, idx, mask_token);
            }
        }
    }
}

/// Learned projections from person-vectors to tokens, plus the mask token.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenEmbedder {
    pub cfg: TokenConfig,
    pub d_model: usize,
    pub pose: Option<Mlp>,
    pub appearance: Option<Mlp>,
    pub mask_token: usize,
}

#[derive(Clone, Debug)]
pub struct EmbedCache {
    present: Vec<usize>,
    masked: Vec<usize>,
    pose: Option<MlpCache>,
    appearance: Option<(MlpCache, Vec<usize>, usize)>,
}

impl TokenEmbedder {
    pub fn new(store: &mut ParamStore, cfg: &TokenConfig, d_model: usize, r: &mut Rng) -> Result<Self> {
        cfg.validate(d_model)?;
        let h = cfg.proj_hidden;
        let pose = cfg
            .mode
            .uses_pose()
            .then(|| Mlp::new(store, "embed.pose", [POSE_DIM, h, h, cfg.pose_embed], Group::Embedding, r));
        let appearance = cfg.mode.uses_appearance().then(|| {
            Mlp::new(
                store,
                "embed.appearance",
                [APPEARANCE_DIM, h, h, cfg.appearance_embed],
                Group::Embedding,
                r,
            )
        });
        let mask_token = store.add("embed.mask_token", &[d_model], Init::Normal(0.02), false, Group::Embedding, r);
        Ok(TokenEmbedder {
            cfg: cfg.clone(),
            d_model,
            pose,
            appearance,
            mask_token,
        })
    }

    pub fn mask_token<'a>(&self, p: &'a ParamStore) -> ArrayView1<'a, f64> {
        p.vec(self.mask_token)
    }

    /// Pose projection of a single person.
    pub fn project_pose(&self, p: &ParamStore, pose: &PersonPose) -> Result<Vec<f64>> {
        let mlp = self
            .pose
            .ok_or_else(|| Error::Config("embedder has no pose projection".into()))?;
        let x = Array2::from_shape_vec((1, POSE_DIM), pose.flatten().iter().map(|&v| v as f64).collect())
            .expect("pose width");
        Ok(mlp.forward(p, x.view()).0.into_raw_vec())
    }

    /// Appearance projection of a single feature vector.
    pub fn project_appearance(&self, p: &ParamStore, u: &[f32]) -> Result<Vec<f64>> {
        let mlp = self
            .appearance
            .ok_or_else(|| Error::Config("embedder has no appearance projection".into()))?;
        if u.len() != APPEARANCE_DIM {
            return Err(Error::Shape(format!("appearance width {} != {APPEARANCE_DIM}", u.len())));
        }
        let x = Array2::from_shape_vec((1, APPEARANCE_DIM), u.iter().map(|&v| v as f64).collect())
            .expect("appearance width");
        Ok(mlp.forward(p, x.view()).0.into_raw_vec())
    }

    /// Token matrix `(N·T_w) × D` for `g`, computed from its inputs and states.
    pub fn embed(&self, p: &ParamStore, g: &TokenGrid) -> Result<(Array2<f64>, EmbedCache)> {
        let d = self.d_model;
        if g.pe.dim() != (g.len(), d) {
            return Err(Error::Shape(format!("grid positional table is not {} × {d}", g.len())));
        }
        let mut tokens = Array2::zeros((g.len(), d));
        let present: Vec<usize> = (0..g.len()).filter(|&i| g.states[i] == SlotState::Present).collect();
        let masked: Vec<usize> = (0..g.len()).filter(|&i| g.states[i] == SlotState::Masked).collect();
        let input = |i: usize| g.inputs[i].as_ref().expect("present slot has input");

        let pose = match self.pose {
            Some(mlp) if !present.is_empty() => {
                let mut x = Array2::zeros((present.len(), POSE_DIM));
                for (mut row, &i) in x.rows_mut().into_iter().zip(&present) {
                    let v = &input(i).pose;
                    if v.len() != POSE_DIM {
                        return Err(Error::Shape(format!("pose width {} != {POSE_DIM}", v.len())));
                    }
                    row.assign(&ArrayView1::from(&v[..]));
                }
                let (y, cache) = mlp.forward(p, x.view());
                for (yr, &i) in y.rows().into_iter().zip(&present) {
                    tokens.slice_mut(s![i, ..self.cfg.pose_embed]).assign(&yr);
                }
                Some(cache)
            }
            _ => None,
        };

        let appearance = match self.appearance {
            Some(mlp) if !present.is_empty() => {
                let mut bank = Array2::zeros((g.appearance_bank.len(), APPEARANCE_DIM));
                for (mut row, u) in bank.rows_mut().into_iter().zip(&g.appearance_bank) {
                    if u.len() != APPEARANCE_DIM {
                        return Err(Error::Shape(format!("appearance width {} != {APPEARANCE_DIM}", u.len())));
                    }
                    row.iter_mut().zip(u.iter()).for_each(|(d, &s)| *d = s as f64);
                }
                let (y, cache) = mlp.forward(p, bank.view());
                let mut which = Vec::with_capacity(present.len());
                for &i in &present {
                    let k = input(i)
                        .appearance
                        .ok_or_else(|| Error::Config("token is missing its appearance feature".into()))?;
                    tokens.slice_mut(s![i, self.cfg.pose_embed..]).assign(&y.row(k));
                    which.push(k);
                }
                Some((cache, which, g.appearance_bank.len()))
            }
            _ => None,
        };

        for &i in &present {
            let mut row = tokens.row_mut(i);
            row += &g.pe.row(i);
        }
        let mt = p.vec(self.mask_token);
        for &i in &masked {
            let row = &mt + &g.pe.row(i);
            tokens.row_mut(i).assign(&row);
        }
        Ok((
            tokens,
            EmbedCache {
                present,
                masked,
                pose,
                appearance,
            },
        ))
    }

    /// Accumulate parameter gradients given `dL/dtokens`.
    pub fn backward(&self, p: &ParamStore, c: &EmbedCache, dtokens: ArrayView2<'_, f64>, g: &mut Grads) {
        let pe_w = self.cfg.pose_embed;
        if let (Some(mlp), Some(cache)) = (self.pose, &c.pose) {
            let dy = dtokens.select(Axis(0), &c.present);
            mlp.backward(p, cache, dy.slice(s![.., ..pe_w]), g, false);
        }
        if let (Some(mlp), Some((cache, which, nb))) = (self.appearance, &c.appearance) {
            let mut dy = Array2::zeros((*nb, self.cfg.appearance_embed));
            for (&i, &k) in c.present.iter().zip(which) {
                let mut row = dy.row_mut(k);
                row += &dtokens.slice(s![i, pe_w..]);
            }
            mlp.backward(p, cache, dy.view(), g, false);
        }
        if !c.masked.is_empty() {
            let mut acc = Array1::zeros(self.d_model);
            for &i in &c.masked {
                acc += &dtokens.row(i);
            }
            g.acc_vec(self.mask_token, acc);
        }
    }
}
