//! Person-of-interest inference and frame-level mAP evaluation.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::tokenizer::{assemble_layout, infill_gaps, sample_supporting, GridConfig};
use crate::tracklet::{BBox, Category, Clip, PredictionTrack};
use crate::transformer::{sigmoid, Mode, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    /// Track slots per forward pass (person of interest included).
    pub n_tracks: usize,
    /// Frames averaged around each evaluated frame.
    pub pooling_width: usize,
    /// Frames per forward pass; longer tracks are split into consecutive windows.
    pub window: usize,
    pub seed: u64,
    pub iou_threshold: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            n_tracks: 5,
            pooling_width: 12,
            window: 128,
            seed: 0,
            iou_threshold: 0.5,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tracks == 0 || self.pooling_width == 0 || self.window == 0 {
            return Err(Error::Config("n_tracks, pooling_width and window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(Error::Config(format!("iou_threshold {} outside [0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// Per-frame class probabilities over the span of `track_id`, before pooling.
pub fn infer_frames(clip: &Clip, track_id: u32, model: &Model, cfg: &InferenceConfig) -> Result<PredictionTrack> {
    cfg.validate()?;
    let track = clip
        .track(track_id)
        .ok_or_else(|| Error::NotFound(format!("track {track_id} in clip {}", clip.clip_id)))?;
    let mut r = rng::substream(cfg.seed, &format!("eval/support/{}/{track_id}", clip.clip_id));
    let supporting = sample_supporting(clip, track_id, cfg.n_tracks - 1, &mut r);
    let grid = GridConfig {
        n_tracks: cfg.n_tracks,
        window: cfg.window,
    };
    let (start, end) = (track.start_frame, track.end_frame());
    let mut probs = Vec::with_capacity(track.len());
    let mut w0 = start;
    while w0 < end {
        let mut g = assemble_layout(clip, track_id, &supporting, grid, w0, None, &model.cfg.tokens)?;
        infill_gaps(&mut g, model.mask_token());
        let (logits, _) = model.forward(&mut g, Mode::Eval)?;
        let n = (end - w0).min(cfg.window as u32) as usize;
        for t in 0..n {
            probs.push(logits.row(t).iter().map(|&z| sigmoid(z)).collect());
        }
        w0 += cfg.window as u32;
    }
    Ok(PredictionTrack {
        track_id,
        start_frame: start,
        probs,
    })
}

/// Arithmetic mean of `probs[c - w/2 ..= c + w - w/2 - 1]`, clamped to the slice.
pub fn pool(probs: &[Vec<f64>], center: usize, width: usize) -> Vec<f64> {
    let lo = center.saturating_sub(width / 2);
    let hi = (center + (width - width / 2)).min(probs.len());
    let k = probs.first().map_or(0, Vec::len);
    let mut out = vec![0.0; k];
    for p in &probs[lo..hi] {
        for (o, v) in out.iter_mut().zip(p) {
            *o += v;
        }
    }
    let n = (hi - lo) as f64;
    out.iter_mut().for_each(|v| *v /= n);
    out
}

/// Pooled predictions for every frame of the person of interest's track.
pub fn infer_poi(clip: &Clip, track_id: u32, model: &Model, cfg: &InferenceConfig) -> Result<PredictionTrack> {
    let raw = infer_frames(clip, track_id, model, cfg)?;
    let probs = (0..raw.probs.len()).map(|c| pool(&raw.probs, c, cfg.pooling_width)).collect();
    Ok(PredictionTrack { probs, ..raw })
}

/// Mark each prediction true or false positive.
///
/// Predictions are visited in descending score order (ties by index). A
/// prediction becomes a true positive when it can be matched to a ground
/// truth with IoU ≥ `threshold` without unmatching an earlier true positive;
/// earlier matches may be reassigned to make room. Every ground truth is
/// matched at most once.
pub fn match_detections(preds: &[(BBox, f64)], gts: &[BBox], threshold: f64) -> Vec<bool> {
    let adj: Vec<Vec<usize>> = preds
        .iter()
        .map(|(b, _)| (0..gts.len()).filter(|&j| b.iou(&gts[j]) >= threshold).collect())
        .collect();
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.total_cmp(&preds[a].1).then(a.cmp(&b)));
    let mut owner: Vec<Option<usize>> = vec![None; gts.len()];
    let mut tp = vec![false; preds.len()];
    fn augment(p: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, owner, seen)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    for p in order {
        let mut seen = vec![false; gts.len()];
        tp[p] = augment(p, &adj, &mut owner, &mut seen);
    }
    tp
}

/// Precision/recall after each distinct score threshold, highest first.
pub fn pr_curve(scores: &[f64], tp: &[bool], n_pos: usize) -> Vec<(f64, f64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut ntp, mut nfp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if tp[order[i]] {
                ntp += 1;
            } else {
                nfp += 1;
            }
            i += 1;
        }
        out.push((ntp as f64 / n_pos as f64, ntp as f64 / (ntp + nfp) as f64));
    }
    out
}

/// All-point interpolated average precision; `None` without positives.
///
/// Equal scores form a single threshold.
pub fn average_precision(scores: &[f64], tp: &[bool], n_pos: usize) -> Option<f64> {
    if n_pos == 0 {
        return None;
    }
    let mut curve = pr_curve(scores, tp, n_pos);
    for i in (0..curve.len().saturating_sub(1)).rev() {
        curve[i].1 = curve[i].1.max(curve[i + 1].1);
    }
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (r, p) in curve {
        ap += (r - prev) * p;
        prev = r;
    }
    Some(ap)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassResult {
    pub name: String,
    pub category: Category,
    pub ap: Option<f64>,
    /// Ground-truth positives.
    pub support: usize,
    pub detections: usize,
    pub curve: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub classes: Vec<ClassResult>,
    pub map: Option<f64>,
    pub pm: Option<f64>,
    pub om: Option<f64>,
    pub pi: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalResult {
    pub fn from_classes(classes: Vec<ClassResult>) -> Self {
        let cat = |c: Category| mean(classes.iter().filter(|r| r.category == c).filter_map(|r| r.ap));
        EvalResult {
            map: mean(classes.iter().filter_map(|r| r.ap)),
            pm: cat(Category::PM),
            om: cat(Category::OM),
            pi: cat(Category::PI),
            classes,
        }
    }

    pub fn category_mean(&self, c: Category) -> Option<f64> {
        match c {
            Category::PM => self.pm,
            Category::OM => self.om,
            Category::PI => self.pi,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,category,ap,support,detections\n");
        for c in &self.classes {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.name,
                c.category,
                fmt_opt(c.ap),
                c.support,
                c.detections
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "mAP {}", fmt_opt(self.map));
        let _ = writeln!(s, "PM {}", fmt_opt(self.pm));
        let _ = writeln!(s, "OM {}", fmt_opt(self.om));
        let _ = writeln!(s, "PI {}", fmt_opt(self.pi));
        for c in &self.classes {
            let _ = writeln!(s, "class {} {} {} support {}", c.name, c.category, fmt_opt(c.ap), c.support);
        }
        s
    }

    /// `recall,precision` points of every class with defined AP.
    pub fn curves_csv(&self) -> String {
        let mut s = String::from("class,recall,precision\n");
        for c in self.classes.iter().filter(|c| c.ap.is_some()) {
            for (r, p) in &c.curve {
                let _ = writeln!(s, "{},{r:.6},{p:.6}", c.name);
            }
        }
        s
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.6}"))
}

/// Scored decisions and positive count for one class.
#[derive(Clone, Debug, Default, PartialEq)]
struct Tally {
    scores: Vec<f64>,
    tp: Vec<bool>,
    positives: usize,
}

/// Score `predictions[i]` (one per track of `clips[i]`) at every annotated frame.
pub fn evaluate_predictions(clips: &[Clip], predictions: &[Vec<PredictionTrack>], iou: f64) -> Result<EvalResult> {
    let first = clips.first().ok_or(Error::Empty("evaluation dataset"))?;
    let catalog = &first.class_catalog;
    let k = catalog.len();
    let mut tallies = vec![Tally::default(); k];
    for (clip, preds) in clips.iter().zip(predictions) {
        if clip.class_catalog != *catalog {
            return Err(Error::validation(format!("clip {} uses a different class catalog", clip.clip_id)));
        }
        let frames: BTreeSet<u32> = clip.labels.iter().filter(|l| l.evaluable).map(|l| l.frame).collect();
        for f in frames {
            let dets: Vec<(BBox, &[f64])> = preds
                .iter()
                .filter_map(|p| {
                    let det = clip.track(p.track_id)?.get(f)?;
                    let probs = p.probs.get(f.checked_sub(p.start_frame)? as usize)?;
                    Some((det.bbox, &probs[..]))
                })
                .collect();
            for (c, tally) in tallies.iter_mut().enumerate() {
                let gts: Vec<BBox> = clip
                    .labels
                    .iter()
                    .filter(|l| l.frame == f && l.evaluable && l.classes.get(c))
                    .filter_map(|l| clip.track(l.track_id)?.get(f).map(|d| d.bbox))
                    .collect();
                let scored: Vec<(BBox, f64)> = dets.iter().map(|(b, p)| (*b, p[c])).collect();
                let tp = match_detections(&scored, &gts, iou);
                tally.scores.extend(scored.iter().map(|x| x.1));
                tally.tp.extend(tp);
                tally.positives += gts.len();
            }
        }
    }
    let classes = tallies
        .into_iter()
        .zip(&catalog.classes)
        .map(|(t, cls)| ClassResult {
            name: cls.name.clone(),
            category: cls.category,
            ap: average_precision(&t.scores, &t.tp, t.positives),
            support: t.positives,
            detections: t.scores.len(),
            curve: if t.positives > 0 {
                pr_curve(&t.scores, &t.tp, t.positives)
            } else {
                Vec::new()
            },
        })
        .collect();
    Ok(EvalResult::from_classes(classes))
}

/// Pooled predictions for every track of every clip.
pub fn predict_dataset(model: &Model, clips: &[Clip], cfg: &InferenceConfig) -> Result<Vec<Vec<PredictionTrack>>> {
    clips
        .par_iter()
        .map(|c| c.track_ids().into_iter().map(|t| infer_poi(c, t, model, cfg)).collect())
        .collect()
}

/// Run inference on every track and compute AVA-style frame mAP.
pub fn evaluate(model: &Model, clips: &[Clip], cfg: &InferenceConfig) -> Result<EvalResult> {
    if clips.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let preds = predict_dataset(model, clips, cfg)?;
    evaluate_predictions(clips, &preds, cfg.iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(x: f64) -> BBox {
        BBox {
            x0: x as f32,
            y0: 0.0,
            x1: x as f32 + 1.0,
            y1: 1.0,
        }
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1], &[true, false], 1), Some(1.0));
        assert_eq!(average_precision(&[0.1, 0.9], &[true, false], 1), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5, 0.5, 0.5], &[true, false, false, true], 2), Some(0.5));
        assert_eq!(average_precision(&[0.3], &[false], 0), None);
    }

    #[test]
    fn matching_examples() {
        assert_eq!(match_detections(&[(unit(0.0), 0.5)], &[unit(0.0)], 0.5), vec![true]);
        assert!((unit(0.0).iou(&unit(0.5)) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(match_detections(&[(unit(0.5), 0.5)], &[unit(0.0)], 0.5), vec![false]);
        assert_eq!(
            match_detections(&[(unit(0.0), 0.2), (unit(0.0), 0.8)], &[unit(0.0)], 0.5),
            vec![false, true]
        );
    }

    #[test]
    fn pooling_window() {
        let probs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        assert_eq!(pool(&probs, 10, 1), vec![10.0]);
        assert_eq!(pool(&probs, 10, 12), vec![(4..=15).sum::<i32>() as f64 / 12.0]);
        assert_eq!(pool(&probs, 0, 12), vec![(0..=5).sum::<i32>() as f64 / 6.0]);
        assert_eq!(pool(&probs, 19, 12), vec![(13..=19).sum::<i32>() as f64 / 7.0]);
    }
}
