//! People, tracklets, clips and labels.
//!
//! Stored quantities are `f32`: the clip text format writes nine significant
//! digits, which round-trips every `f32` exactly. Computation downstream is
//! done in `f64`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::rotation::{self, Mat3};

pub const NUM_JOINTS: usize = 23;
pub const SHAPE_DIM: usize = 10;
/// Width of a flattened pose: 23·9 joint rotations, 9 orientation, 10 shape, 3 location.
pub const POSE_DIM: usize = NUM_JOINTS * 9 + 9 + SHAPE_DIM + 3;
pub const APPEARANCE_DIM: usize = 1152;
/// Largest class catalog a [`MultiHot`] can index.
pub const MAX_CLASSES: usize = 64;

pub type Mat3f = [[f32; 3]; 3];

pub fn mat3_to_f64(m: &Mat3f) -> Mat3 {
    m.map(|r| r.map(f64::from))
}

pub fn mat3_to_f32(m: &Mat3) -> Mat3f {
    m.map(|r| r.map(|v| v as f32))
}

/// The 23 per-joint rotations of the body model.
#[derive(Clone, Debug, PartialEq)]
pub struct JointRotations(pub [Mat3f; NUM_JOINTS]);

impl JointRotations {
    pub fn identity() -> Self {
        JointRotations([mat3_to_f32(&rotation::IDENTITY); NUM_JOINTS])
    }
}

/// Amodal 3D body state of one person in one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonPose {
    pub theta: JointRotations,
    /// Global body orientation.
    pub psi: Mat3f,
    pub beta: [f32; SHAPE_DIM],
    /// Camera-frame position in meters.
    pub location: [f32; 3],
}

impl PersonPose {
    pub fn rest() -> Self {
        PersonPose {
            theta: JointRotations::identity(),
            psi: mat3_to_f32(&rotation::IDENTITY),
            beta: [0.0; SHAPE_DIM],
            location: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (j, m) in self.theta.0.iter().enumerate() {
            if !rotation::validate_rotation(&mat3_to_f64(m))? {
                return Err(Error::validation(format!("joint {j} is not a rotation")));
            }
        }
        if !rotation::validate_rotation(&mat3_to_f64(&self.psi))? {
            return Err(Error::validation("global orientation is not a rotation"));
        }
        if self.beta.iter().chain(&self.location).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose shape/location".into()));
        }
        Ok(())
    }

    /// Flattened person-vector: θ row-major (207), ψ row-major (9), β (10), L (3).
    pub fn flatten(&self) -> [f32; POSE_DIM] {
        let mut out = [0.0f32; POSE_DIM];
        let mut k = 0;
        for m in self.theta.0.iter().chain(std::iter::once(&self.psi)) {
            for v in m.iter().flatten() {
                out[k] = *v;
                k += 1;
            }
        }
        for v in self.beta.iter().chain(&self.location) {
            out[k] = *v;
            k += 1;
        }
        debug_assert_eq!(k, POSE_DIM);
        out
    }

    /// Inverse of [`PersonPose::flatten`]; validates the rotation blocks.
    pub fn unflatten(v: &[f32]) -> Result<Self> {
        if v.len() != POSE_DIM {
            return Err(Error::Shape(format!("pose vector has {} values, expected {POSE_DIM}", v.len())));
        }
        let mat = |off: usize| -> Mat3f {
            [
                [v[off], v[off + 1], v[off + 2]],
                [v[off + 3], v[off + 4], v[off + 5]],
                [v[off + 6], v[off + 7], v[off + 8]],
            ]
        };
        let mut theta = [[[0.0f32; 3]; 3]; NUM_JOINTS];
        for (j, m) in theta.iter_mut().enumerate() {
            *m = mat(9 * j);
        }
        let base = 9 * NUM_JOINTS;
        let psi = mat(base);
        let mut beta = [0.0; SHAPE_DIM];
        beta.copy_from_slice(&v[base + 9..base + 9 + SHAPE_DIM]);
        let mut location = [0.0; 3];
        location.copy_from_slice(&v[base + 9 + SHAPE_DIM..]);
        let pose = PersonPose {
            theta: JointRotations(theta),
            psi,
            beta,
            location,
        };
        pose.validate()?;
        Ok(pose)
    }
}

/// Contextualized appearance vector, shared by every frame nearest to the
/// same backbone sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceFeature {
    pub u: Arc<[f32]>,
    /// Frame the backbone window was centered on.
    pub source_frame: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersonVector {
    pub pose: PersonPose,
    pub appearance: Option<AppearanceFeature>,
}

/// Axis-aligned image box in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x0: f32,
    pub y0: f32,
    pub x1: f32,
    pub y1: f32,
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        [self.x0, self.y0, self.x1, self.y1].iter().all(|v| v.is_finite()) && self.x0 < self.x1 && self.y0 < self.y1
    }

    pub fn area(&self) -> f64 {
        (f64::from(self.x1) - f64::from(self.x0)) * (f64::from(self.y1) - f64::from(self.y0))
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let iw = f64::from(self.x1.min(other.x1)) - f64::from(self.x0.max(other.x0));
        let ih = f64::from(self.y1.min(other.y1)) - f64::from(self.y0.max(other.y0));
        if iw <= 0.0 || ih <= 0.0 {
            return 0.0;
        }
        let inter = iw * ih;
        inter / (self.area() + other.area() - inter)
    }
}

/// One present frame of a tracklet.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub person: PersonVector,
    pub bbox: BBox,
}

/// A person's time-indexed sequence of detections; `None` marks an
/// occluded or missed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Tracklet {
    pub track_id: u32,
    pub start_frame: u32,
    pub entries: Vec<Option<Detection>>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One past the last frame covered by the tracklet.
    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.entries.len() as u32
    }

    pub fn get(&self, frame: u32) -> Option<&Detection> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.entries.get(i as usize))
            .and_then(Option::as_ref)
    }

    pub fn present_count(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }

    pub fn present_frames(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_some())
            .map(move |(i, _)| self.start_frame + i as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.present_count() == 0 {
            return Err(Error::validation(format!("tracklet {} has no present entries", self.track_id)));
        }
        let mut shared: HashMap<u32, &Arc<[f32]>> = HashMap::new();
        for det in self.entries.iter().flatten() {
            if !det.bbox.is_valid() {
                return Err(Error::validation(format!("tracklet {} has an invalid box", self.track_id)));
            }
            det.person.pose.validate()?;
            if let Some(app) = &det.person.appearance {
                if app.u.len() != APPEARANCE_DIM {
                    return Err(Error::validation(format!(
                        "appearance has {} values, expected {APPEARANCE_DIM}",
                        app.u.len()
                    )));
                }
                if app.u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("appearance feature".into()));
                }
                if let Some(prev) = shared.insert(app.source_frame, &app.u) {
                    if prev[..] != app.u[..] {
                        return Err(Error::validation(format!(
                            "tracklet {}: frames sampled at {} carry different appearance",
                            self.track_id, app.source_frame
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Randomly trim `t` to at most `window` consecutive frames.
///
/// The start offset is uniform over the offsets whose window still holds a
/// present entry; shorter tracklets pass through unchanged.
pub fn trim_tracklet(t: &Tracklet, window: usize, seed: u64) -> Tracklet {
    let mut r = rng::substream(seed, "trim");
    let offset = trim_offset(t, window, &mut r);
    let end = (offset + window).min(t.len());
    Tracklet {
        track_id: t.track_id,
        start_frame: t.start_frame + offset as u32,
        entries: t.entries[offset..end].to_vec(),
    }
}

/// Offset into `t.entries` of a uniformly chosen valid trimming window.
pub fn trim_offset(t: &Tracklet, window: usize, r: &mut rng::Rng) -> usize {
    let window = window.max(1);
    if t.len() <= window {
        return 0;
    }
    let starts: Vec<usize> = (0..=t.len() - window)
        .filter(|&s| t.entries[s..s + window].iter().any(Option::is_some))
        .collect();
    if starts.is_empty() {
        return 0;
    }
    starts[r.gen_range(0..starts.len())]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    /// Person movement.
    PM,
    /// Object manipulation.
    OM,
    /// Person interaction.
    PI,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::PM => "PM",
            Category::OM => "OM",
            Category::PI => "PI",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PM" => Some(Category::PM),
            "OM" => Some(Category::OM),
            "PI" => Some(Category::PI),
            _ => None,
        }
    }

    pub const ALL: [Category; 3] = [Category::PM, Category::OM, Category::PI];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActionClass {
    pub name: String,
    pub category: Category,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassCatalog {
    pub classes: Vec<ActionClass>,
}

impl ClassCatalog {
    pub fn new(classes: Vec<ActionClass>) -> Result<Self> {
        if classes.is_empty() || classes.len() > MAX_CLASSES {
            return Err(Error::validation(format!("catalog must hold 1..={MAX_CLASSES} classes")));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if c.name.is_empty() || c.name.contains(|ch: char| ch.is_whitespace() || ch == ',') {
                return Err(Error::validation(format!("invalid class name {:?}", c.name)));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::validation(format!("duplicate class name {:?}", c.name)));
            }
        }
        Ok(ClassCatalog { classes })
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn category(&self, k: usize) -> Category {
        self.classes[k].category
    }

    /// Check the per-person label structure: one PM class, at most three OM
    /// and at most three PI classes.
    pub fn check_label(&self, label: MultiHot) -> Result<()> {
        if label.0.checked_shr(self.len() as u32).unwrap_or(0) != 0 {
            return Err(Error::validation("label sets a class outside the catalog"));
        }
        let mut counts = [0usize; 3];
        for k in label.iter() {
            let slot = match self.category(k) {
                Category::PM => 0,
                Category::OM => 1,
                Category::PI => 2,
            };
            counts[slot] += 1;
        }
        if counts[0] != 1 || counts[1] > 3 || counts[2] > 3 {
            return Err(Error::validation(format!(
                "label has {} PM, {} OM, {} PI classes (need 1, <=3, <=3)",
                counts[0], counts[1], counts[2]
            )));
        }
        Ok(())
    }
}

/// Multi-hot class indicator over at most [`MAX_CLASSES`] classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct MultiHot(pub u64);

impl MultiHot {
    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Self {
        MultiHot(idx.into_iter().fold(0u64, |acc, k| acc | (1u64 << k)))
    }

    pub fn get(self, k: usize) -> bool {
        self.0 >> k & 1 == 1
    }

    pub fn set(&mut self, k: usize, on: bool) {
        if on {
            self.0 |= 1 << k;
        } else {
            self.0 &= !(1 << k);
        }
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_CLASSES).filter(move |&k| self.get(k))
    }

    pub fn count(self) -> u32 {
        self.0.count_ones()
    }
}

/// Ground-truth label of one person at one annotated frame.
///
/// Labels whose detection was later removed (occlusion) stay in the clip with
/// `evaluable = false`; only evaluable labels require a present detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelEntry {
    pub track_id: u32,
    pub frame: u32,
    pub classes: MultiHot,
    pub evaluable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub clip_id: String,
    pub fps: u32,
    pub num_frames: u32,
    pub tracklets: Vec<Tracklet>,
    /// Sorted by `(track_id, frame)`.
    pub labels: Vec<LabelEntry>,
    pub class_catalog: ClassCatalog,
}

impl Clip {
    pub fn num_classes(&self) -> usize {
        self.class_catalog.len()
    }

    pub fn track(&self, id: u32) -> Option<&Tracklet> {
        self.tracklets.iter().find(|t| t.track_id == id)
    }

    pub fn track_ids(&self) -> Vec<u32> {
        self.tracklets.iter().map(|t| t.track_id).collect()
    }

    pub fn has_appearance(&self) -> bool {
        self.tracklets
            .iter()
            .flat_map(|t| t.entries.iter().flatten())
            .any(|d| d.person.appearance.is_some())
    }

    pub fn labels_for(&self, track_id: u32) -> impl Iterator<Item = &LabelEntry> {
        self.labels.iter().filter(move |l| l.track_id == track_id)
    }

    pub fn label_at(&self, track_id: u32, frame: u32) -> Option<&LabelEntry> {
        self.labels.iter().find(|l| l.track_id == track_id && l.frame == frame)
    }

    pub fn sort_labels(&mut self) {
        self.labels.sort_by_key(|l| (l.track_id, l.frame));
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_id.is_empty() || self.clip_id.contains(char::is_whitespace) {
            return Err(Error::validation(format!("invalid clip id {:?}", self.clip_id)));
        }
        if self.fps == 0 || self.num_frames == 0 {
            return Err(Error::validation("fps and num_frames must be positive"));
        }
        let mut ids = HashSet::new();
        for t in &self.tracklets {
            if !ids.insert(t.track_id) {
                return Err(Error::validation(format!("duplicate track id {}", t.track_id)));
            }
            if t.end_frame() > self.num_frames {
                return Err(Error::validation(format!("tracklet {} extends past the clip", t.track_id)));
            }
            t.validate()?;
        }
        let with_app = self
            .tracklets
            .iter()
            .flat_map(|t| t.entries.iter().flatten())
            .filter(|d| d.person.appearance.is_some())
            .count();
        let present: usize = self.tracklets.iter().map(Tracklet::present_count).sum();
        if with_app != 0 && with_app != present {
            return Err(Error::validation("appearance must be present on every detection or on none"));
        }
        let mut seen = HashSet::new();
        for pair in self.labels.windows(2) {
            if (pair[0].track_id, pair[0].frame) > (pair[1].track_id, pair[1].frame) {
                return Err(Error::validation("labels are not sorted by (track, frame)"));
            }
        }
        for l in &self.labels {
            if !seen.insert((l.track_id, l.frame)) {
                return Err(Error::validation(format!("duplicate label for track {} frame {}", l.track_id, l.frame)));
            }
            let t = self
                .track(l.track_id)
                .ok_or_else(|| Error::validation(format!("label references unknown track {}", l.track_id)))?;
            if l.frame >= self.num_frames {
                return Err(Error::validation(format!("label frame {} outside clip", l.frame)));
            }
            if l.evaluable && t.get(l.frame).is_none() {
                return Err(Error::validation(format!(
                    "label on absent frame {} of track {}",
                    l.frame, l.track_id
                )));
            }
            self.class_catalog.check_label(l.classes)?;
        }
        Ok(())
    }
}

/// Probabilities over the catalog for one tracklet, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTrack {
    pub track_id: u32,
    pub start_frame: u32,
    pub probs: Vec<Vec<f64>>,
}

impl PredictionTrack {
    pub fn validate(&self) -> Result<()> {
        if self.probs.iter().flatten().any(|p| !p.is_finite() || !(0.0..=1.0).contains(p)) {
            return Err(Error::validation("prediction outside [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose_from(seed: [f64; 4], beta: [f32; SHAPE_DIM], loc: [f32; 3]) -> PersonPose {
        let mut theta = JointRotations::identity();
        for (j, m) in theta.0.iter_mut().enumerate() {
            let q = [seed[0] + j as f64, seed[1], seed[2] - j as f64 * 0.1, seed[3]];
            *m = mat3_to_f32(&rotation::from_quaternion(q));
        }
        PersonPose {
            theta,
            psi: mat3_to_f32(&rotation::from_quaternion([seed[3], seed[2], seed[1], seed[0]])),
            beta,
            location: loc,
        }
    }

    #[test]
    fn rest_pose_flattens_to_identity_pattern() {
        let v = PersonPose::rest().flatten();
        assert_eq!(v.len(), 229);
        for (k, x) in v.iter().enumerate() {
            let want = if k < 216 && matches!(k % 9, 0 | 4 | 8) { 1.0 } else { 0.0 };
            assert_eq!(*x, want, "slot {k}");
        }
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 3 * 24);
    }

    #[test]
    fn unflatten_rejects_wrong_length_and_reflections() {
        assert!(PersonPose::unflatten(&[0.0; 228]).is_err());
        let mut v = PersonPose::rest().flatten();
        v[8] = -1.0;
        assert!(matches!(PersonPose::unflatten(&v), Err(Error::Validation(_))));
    }

    #[test]
    fn trim_keeps_short_tracklets() {
        let t = Tracklet {
            track_id: 1,
            start_frame: 0,
            entries: vec![Some(det()); 128],
        };
        assert_eq!(trim_tracklet(&t, 128, 5), t);
    }

    #[test]
    fn trim_long_tracklet_to_window() {
        let t = Tracklet {
            track_id: 1,
            start_frame: 3,
            entries: vec![Some(det()); 200],
        };
        let a = trim_tracklet(&t, 128, 9);
        assert_eq!(a.len(), 128);
        assert!(a.start_frame >= 3 && a.end_frame() <= 203);
        assert_eq!(trim_tracklet(&t, 128, 9).start_frame, a.start_frame);
        let starts: HashSet<u32> = (0..40).map(|s| trim_tracklet(&t, 128, s).start_frame).collect();
        assert!(starts.len() > 5);
    }

    #[test]
    fn trim_never_yields_an_empty_window() {
        let mut entries = vec![None; 50];
        entries[45] = Some(det());
        let t = Tracklet { track_id: 0, start_frame: 0, entries };
        for s in 0..20 {
            assert_eq!(trim_tracklet(&t, 10, s).present_count(), 1);
        }
    }

    fn det() -> Detection {
        Detection {
            person: PersonVector {
                pose: PersonPose::rest(),
                appearance: None,
            },
            bbox: BBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 2.0 },
        }
    }

    #[test]
    fn label_structure_rule() {
        let cat = crate::scene::catalog();
        let pm = cat.index_of("stand").unwrap();
        let hug = cat.index_of("hug").unwrap();
        assert!(cat.check_label(MultiHot::from_indices([pm, hug])).is_ok());
        assert!(cat.check_label(MultiHot::from_indices([hug])).is_err());
        let walk = cat.index_of("walk").unwrap();
        assert!(cat.check_label(MultiHot::from_indices([pm, walk])).is_err());
        let four_pi = ["hug", "fight", "dance", "talk"].map(|n| cat.index_of(n).unwrap());
        assert!(cat.check_label(MultiHot::from_indices(four_pi.into_iter().chain([pm]))).is_err());
    }

    #[test]
    fn iou_of_half_offset_unit_squares() {
        let a = BBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };
        let b = BBox { x0: 0.5, y0: 0.0, x1: 1.5, y1: 1.0 };
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a.iou(&a), 1.0);
    }

    proptest! {
        #[test]
        fn flatten_unflatten_is_bijective(
            q in prop::array::uniform4(-1.0f64..1.0),
            beta in prop::array::uniform10(-3.0f32..3.0),
            loc in prop::array::uniform3(-20.0f32..20.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let p = pose_from(q, beta, loc);
            prop_assume!(p.validate().is_ok());
            let back = PersonPose::unflatten(&p.flatten()).unwrap();
            prop_assert_eq!(back, p);
        }
    }
}
