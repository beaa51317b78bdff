use rand::Rng as _;

use crate::rng;
use crate::tracklet::Clip;

/// Remove detections in contiguous gap episodes.
///
/// Each track follows a two-state visible/occluded chain whose stationary
/// occluded fraction is `rate` and whose episodes last `mean_gap` frames on
/// average. Every track keeps at least one detection. Labels on removed
/// frames stay in the clip but are marked non-evaluable.
pub fn apply_occlusions(clip: &Clip, rate: f64, mean_gap: f64, seed: u64) -> Clip {
    let mut out = clip.clone();
    if rate <= 0.0 {
        return out;
    }
    let mean_gap = mean_gap.max(1.0);
    let leave = 1.0 / mean_gap;
    let enter = if rate >= 1.0 {
        1.0
    } else {
        (rate / (mean_gap * (1.0 - rate))).min(1.0)
    };
    for t in &mut out.tracklets {
        let mut r = rng::indexed(seed, "occlusion", u64::from(t.track_id));
        let full = rate >= 1.0;
        let mut occluded = full || r.gen_bool(rate);
        let mut kept = Vec::with_capacity(t.entries.len());
        for _ in 0..t.entries.len() {
            kept.push(!occluded);
            if !full {
                occluded = if occluded { !r.gen_bool(leave) } else { r.gen_bool(enter) };
            }
        }
        let present: Vec<usize> = (0..t.entries.len()).filter(|&i| t.entries[i].is_some()).collect();
        if !present.iter().any(|&i| kept[i]) && !present.is_empty() {
            kept[present[r.gen_range(0..present.len())]] = true;
        }
        for (e, keep) in t.entries.iter_mut().zip(kept) {
            if !keep {
                *e = None;
            }
        }
    }
    for l in &mut out.labels {
        if let Some(t) = out.tracklets.iter().find(|t| t.track_id == l.track_id) {
            if t.get(l.frame).is_none() {
                l.evaluable = false;
            }
        }
    }
    out
}
