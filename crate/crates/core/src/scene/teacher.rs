use std::collections::BTreeMap;

use rand::Rng as _;

use crate::rng;
use crate::tracklet::{Clip, MultiHot};

/// Dense per-frame training targets: for every track, one optional
/// multi-hot vector per clip frame. Only present detections carry targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Supervision {
    pub num_frames: u32,
    pub tracks: BTreeMap<u32, Vec<Option<MultiHot>>>,
}

impl Supervision {
    pub fn get(&self, track_id: u32, frame: u32) -> Option<MultiHot> {
        self.tracks
            .get(&track_id)
            .and_then(|v| v.get(frame as usize))
            .copied()
            .flatten()
    }

    pub fn labelled_count(&self) -> usize {
        self.tracks.values().flatten().filter(|v| v.is_some()).count()
    }
}

fn broadcast(clip: &Clip, anchor_labels: impl Iterator<Item = (u32, u32, MultiHot)>) -> Supervision {
    let mut tracks: BTreeMap<u32, Vec<Option<MultiHot>>> = clip
        .tracklets
        .iter()
        .map(|t| (t.track_id, vec![None; clip.num_frames as usize]))
        .collect();
    let fps = clip.fps;
    for (track_id, anchor, label) in anchor_labels {
        let (Some(t), Some(row)) = (clip.track(track_id), tracks.get_mut(&track_id)) else {
            continue;
        };
        let second = anchor / fps;
        let lo = second * fps;
        let hi = ((second + 1) * fps).min(clip.num_frames);
        for f in lo..hi {
            if t.get(f).is_some() {
                row[f as usize] = Some(label);
            }
        }
    }
    Supervision {
        num_frames: clip.num_frames,
        tracks,
    }
}

/// Ground truth at the 1 Hz anchors, held constant over each anchor's second.
pub fn broadcast_ground_truth(clip: &Clip) -> Supervision {
    broadcast(clip, clip.labels.iter().map(|l| (l.track_id, l.frame, l.classes)))
}

/// Noisy teacher standing in for a pretrained recognizer.
///
/// Every class bit of every anchor label is flipped independently with
/// probability `flip_p`; the resulting annotation is then shared by every
/// frame of that anchor's second.
pub fn teacher_pseudo_label(clip: &Clip, flip_p: f64, seed: u64) -> Supervision {
    let k = clip.num_classes();
    let p = flip_p.clamp(0.0, 1.0);
    let mut streams: BTreeMap<u32, rng::Rng> = BTreeMap::new();
    let noisy: Vec<(u32, u32, MultiHot)> = clip
        .labels
        .iter()
        .map(|l| {
            let r = streams
                .entry(l.track_id)
                .or_insert_with(|| rng::indexed(seed, "teacher", u64::from(l.track_id)));
            let mut m = l.classes;
            for c in 0..k {
                if r.gen_bool(p) {
                    m.set(c, !m.get(c));
                }
            }
            (l.track_id, l.frame, m)
        })
        .collect();
    broadcast(clip, noisy.into_iter())
}
