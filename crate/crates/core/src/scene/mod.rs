//! Deterministic synthetic multi-person scenes.
//!
//! Actors follow scripted body programs (sinusoidal joint oscillators keyed by
//! the action) and labels are derived from the realized scene:
//!
//! * movement classes (stand/sit/walk/run) follow from one actor's own legs and velocity;
//! * paired interactions (hug, handshake, fight, dance) are set when two actors
//!   within the interaction radius both run the same program;
//! * `talk`/`listen` pair a talker with an idle, stationary listener. The
//!   listener's body is indistinguishable from any other idle person, so
//!   `listen` can only be decided by looking at the talker;
//! * `carry_object` leaves the body untouched and is visible only through the
//!   appearance channel.

mod appearance;
mod occlusion;
mod teacher;

pub use appearance::{synth_appearance, AppearanceConfig, AppearanceProviderSpec, CONTEXT_DIM, NOISE_DIM, SUMMARY_DIM};
pub use occlusion::apply_occlusions;
pub use teacher::{broadcast_ground_truth, teacher_pseudo_label, Supervision};

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::rotation::{self, Mat3};
use crate::tracklet::{
    mat3_to_f32, ActionClass, BBox, Category, ClassCatalog, Clip, Detection, JointRotations, LabelEntry, MultiHot,
    PersonPose, PersonVector, Tracklet, NUM_JOINTS, SHAPE_DIM,
};

/// The 12-class synthetic catalog in canonical order.
pub const CLASS_NAMES: [(&str, Category); 12] = [
    ("stand", Category::PM),
    ("sit", Category::PM),
    ("walk", Category::PM),
    ("run", Category::PM),
    ("carry_object", Category::OM),
    ("answer_phone", Category::OM),
    ("hug", Category::PI),
    ("handshake", Category::PI),
    ("fight", Category::PI),
    ("dance", Category::PI),
    ("listen", Category::PI),
    ("talk", Category::PI),
];

pub fn catalog() -> ClassCatalog {
    ClassCatalog::new(
        CLASS_NAMES
            .iter()
            .map(|(n, c)| ActionClass {
                name: n.to_string(),
                category: *c,
            })
            .collect(),
    )
    .expect("builtin catalog is valid")
}

/// Class index in [`catalog`] order.
pub mod class {
    pub const STAND: usize = 0;
    pub const SIT: usize = 1;
    pub const WALK: usize = 2;
    pub const RUN: usize = 3;
    pub const CARRY_OBJECT: usize = 4;
    pub const ANSWER_PHONE: usize = 5;
    pub const HUG: usize = 6;
    pub const HANDSHAKE: usize = 7;
    pub const FIGHT: usize = 8;
    pub const DANCE: usize = 9;
    pub const LISTEN: usize = 10;
    pub const TALK: usize = 11;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Movement {
    Stand,
    Sit,
    Walk,
    Run,
}

impl Movement {
    fn class(self) -> usize {
        match self {
            Movement::Stand => class::STAND,
            Movement::Sit => class::SIT,
            Movement::Walk => class::WALK,
            Movement::Run => class::RUN,
        }
    }

    /// Ground speed in m/s.
    pub fn speed(self) -> f64 {
        match self {
            Movement::Walk => 1.2,
            Movement::Run => 3.0,
            _ => 0.0,
        }
    }

    fn is_stationary(self) -> bool {
        matches!(self, Movement::Stand | Movement::Sit)
    }
}

/// Upper-body program.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpperBody {
    Idle,
    Phone,
    Talk,
    Hug,
    Handshake,
    Fight,
    Dance,
}

impl UpperBody {
    /// Programs that produce a symmetric interaction label with a partner running the same program.
    fn symmetric_class(self) -> Option<usize> {
        match self {
            UpperBody::Hug => Some(class::HUG),
            UpperBody::Handshake => Some(class::HANDSHAKE),
            UpperBody::Fight => Some(class::FIGHT),
            UpperBody::Dance => Some(class::DANCE),
            _ => None,
        }
    }

    const PAIRED: [UpperBody; 5] = [
        UpperBody::Talk,
        UpperBody::Hug,
        UpperBody::Handshake,
        UpperBody::Fight,
        UpperBody::Dance,
    ];
}

/// One sinusoidal joint oscillator: `angle(t) = base + amp·sin(2π·freq·t + phase)`.
#[derive(Clone, Copy, Debug)]
pub struct JointOscillator {
    pub joint: usize,
    pub axis: [f64; 3],
    pub base: f64,
    pub amp: f64,
    pub freq_hz: f64,
    pub phase: f64,
}

const X: [f64; 3] = [1.0, 0.0, 0.0];
const Y: [f64; 3] = [0.0, 1.0, 0.0];
const Z: [f64; 3] = [0.0, 0.0, 1.0];

// Body-model joint indices used by the programs.
const L_HIP: usize = 0;
const R_HIP: usize = 1;
const SPINE1: usize = 2;
const L_KNEE: usize = 3;
const R_KNEE: usize = 4;
const SPINE2: usize = 5;
const HEAD: usize = 14;
const L_SHOULDER: usize = 15;
const R_SHOULDER: usize = 16;
const L_ELBOW: usize = 17;
const R_ELBOW: usize = 18;

fn osc(joint: usize, axis: [f64; 3], base: f64, amp: f64, freq_hz: f64, phase: f64) -> JointOscillator {
    JointOscillator {
        joint,
        axis,
        base,
        amp,
        freq_hz,
        phase,
    }
}

/// Class-conditioned joint program for a movement/upper-body combination.
pub fn body_program(movement: Movement, upper: UpperBody) -> Vec<JointOscillator> {
    let mut p = match movement {
        Movement::Stand => vec![],
        Movement::Sit => vec![
            osc(L_HIP, X, -1.4, 0.0, 0.0, 0.0),
            osc(R_HIP, X, -1.4, 0.0, 0.0, 0.0),
            osc(L_KNEE, X, 1.4, 0.0, 0.0, 0.0),
            osc(R_KNEE, X, 1.4, 0.0, 0.0, 0.0),
        ],
        Movement::Walk => vec![
            osc(L_HIP, X, 0.0, 0.35, 0.9, 0.0),
            osc(R_HIP, X, 0.0, 0.35, 0.9, PI),
            osc(L_KNEE, X, 0.2, 0.25, 0.9, PI / 2.0),
            osc(R_KNEE, X, 0.2, 0.25, 0.9, 3.0 * PI / 2.0),
        ],
        Movement::Run => vec![
            osc(L_HIP, X, 0.0, 0.7, 1.6, 0.0),
            osc(R_HIP, X, 0.0, 0.7, 1.6, PI),
            osc(L_KNEE, X, 0.6, 0.5, 1.6, PI / 2.0),
            osc(R_KNEE, X, 0.6, 0.5, 1.6, 3.0 * PI / 2.0),
            osc(SPINE1, X, 0.25, 0.0, 0.0, 0.0),
        ],
    };
    p.extend(match upper {
        UpperBody::Idle => vec![],
        UpperBody::Phone => vec![osc(R_SHOULDER, Z, -1.2, 0.0, 0.0, 0.0), osc(R_ELBOW, Y, 2.2, 0.0, 0.0, 0.0)],
        UpperBody::Talk => vec![
            osc(R_ELBOW, Y, 0.8, 0.5, 1.3, 0.0),
            osc(L_ELBOW, Y, -0.4, 0.3, 1.1, 1.0),
            osc(HEAD, X, 0.0, 0.15, 0.7, 0.0),
        ],
        UpperBody::Hug => vec![
            osc(L_SHOULDER, Y, 1.2, 0.05, 0.3, 0.0),
            osc(R_SHOULDER, Y, -1.2, 0.05, 0.3, 0.0),
            osc(L_ELBOW, Y, 1.0, 0.0, 0.0, 0.0),
            osc(R_ELBOW, Y, -1.0, 0.0, 0.0, 0.0),
        ],
        UpperBody::Handshake => vec![osc(R_SHOULDER, X, -0.6, 0.0, 0.0, 0.0), osc(R_ELBOW, X, -0.3, 0.25, 2.0, 0.0)],
        UpperBody::Fight => vec![
            osc(L_SHOULDER, X, -0.3, 0.9, 2.5, 0.0),
            osc(R_SHOULDER, X, -0.3, 0.9, 2.5, PI),
            osc(L_ELBOW, Y, 0.0, 1.0, 2.5, 0.0),
            osc(R_ELBOW, Y, 0.0, 1.0, 2.5, PI),
        ],
        UpperBody::Dance => vec![
            osc(L_SHOULDER, Z, 1.4, 0.5, 1.0, 0.0),
            osc(R_SHOULDER, Z, -1.4, 0.5, 1.0, 0.0),
            osc(SPINE2, Z, 0.0, 0.3, 1.0, PI / 2.0),
        ],
    });
    p
}

/// Script for one synthetic person.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorScript {
    pub movement: Movement,
    pub upper: UpperBody,
    pub carry: bool,
    /// Ground-plane position `(x, z)` in meters at frame 0.
    pub position: [f64; 2],
    /// Heading in radians; moving actors travel along it.
    pub yaw: f64,
    /// Oscillator phase offset in radians.
    pub phase: f64,
    pub beta: [f32; SHAPE_DIM],
}

impl ActorScript {
    pub fn new(movement: Movement, upper: UpperBody, position: [f64; 2]) -> Self {
        ActorScript {
            movement,
            upper,
            carry: false,
            position,
            yaw: 0.0,
            phase: 0.0,
            beta: [0.0; SHAPE_DIM],
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        let s = self.movement.speed();
        [s * self.yaw.cos(), s * self.yaw.sin()]
    }

    /// Ground position `(x, z)` at `frame`.
    pub fn position_at(&self, frame: u32, fps: u32) -> [f64; 2] {
        let t = f64::from(frame) / f64::from(fps);
        let v = self.velocity();
        [self.position[0] + v[0] * t, self.position[1] + v[1] * t]
    }

    fn height(&self) -> f64 {
        if self.movement == Movement::Sit {
            1.2
        } else {
            1.7
        }
    }

    /// Body pose at `frame`.
    pub fn pose_at(&self, frame: u32, fps: u32) -> PersonPose {
        let t = f64::from(frame) / f64::from(fps);
        let mut theta: [Mat3; NUM_JOINTS] = [rotation::IDENTITY; NUM_JOINTS];
        for o in body_program(self.movement, self.upper) {
            let angle = o.base + o.amp * (2.0 * PI * o.freq_hz * t + o.phase + self.phase).sin();
            theta[o.joint] = rotation::mul(&theta[o.joint], &rotation::axis_angle(o.axis, angle));
        }
        let [x, z] = self.position_at(frame, fps);
        PersonPose {
            theta: JointRotations(theta.map(|m| mat3_to_f32(&m))),
            psi: mat3_to_f32(&rotation::axis_angle(Y, self.yaw)),
            beta: self.beta,
            location: [x as f32, (CAMERA_HEIGHT - self.height() / 2.0) as f32, z as f32],
        }
    }

    /// Projected image box at `frame`.
    pub fn bbox_at(&self, frame: u32, fps: u32) -> BBox {
        let [x, z] = self.position_at(frame, fps);
        let z = z.max(MIN_DEPTH);
        let half_w = 0.3;
        let proj_x = |v: f64| FOCAL * v / z + 320.0;
        let proj_y = |v: f64| FOCAL * v / z + 240.0;
        BBox {
            x0: proj_x(x - half_w) as f32,
            y0: proj_y(CAMERA_HEIGHT - self.height()) as f32,
            x1: proj_x(x + half_w) as f32,
            y1: proj_y(CAMERA_HEIGHT) as f32,
        }
    }
}

const CAMERA_HEIGHT: f64 = 1.5;
const FOCAL: f64 = 500.0;
const MIN_DEPTH: f64 = 1.0;

/// A fully scripted scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneScript {
    pub actors: Vec<ActorScript>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub n_people: usize,
    pub num_frames: u32,
    pub fps: u32,
    /// Target fraction of frames removed by occlusion.
    pub occlusion_rate: f64,
    /// Mean length of an occlusion episode, in frames.
    pub mean_gap: f64,
    /// Planar distance (m) under which two actors can interact.
    pub interaction_radius: f64,
    pub teacher_flip_p: f64,
    /// Appearance sampling frequency in Hz.
    pub appearance_hz: f64,
    pub appearance_sigma: f64,
    /// Probability that an unassigned actor starts an interacting pair.
    pub pair_prob: f64,
    /// Probability that a solo actor runs an interaction program with no partner.
    pub solo_program_prob: f64,
    pub carry_prob: f64,
    pub phone_prob: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_people: 3,
            num_frames: 32,
            fps: 8,
            occlusion_rate: 0.1,
            mean_gap: 4.0,
            interaction_radius: 1.0,
            teacher_flip_p: 0.05,
            appearance_hz: 1.0,
            appearance_sigma: 0.5,
            pair_prob: 0.6,
            solo_program_prob: 0.2,
            carry_prob: 0.3,
            phone_prob: 0.2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_people < 1 {
            return Err(Error::Config("n_people must be at least 1".into()));
        }
        if self.num_frames < 2 {
            return Err(Error::Config("num_frames must be at least 2".into()));
        }
        if self.fps == 0 {
            return Err(Error::Config("fps must be positive".into()));
        }
        for (name, v) in [
            ("occlusion_rate", self.occlusion_rate),
            ("teacher_flip_p", self.teacher_flip_p),
            ("pair_prob", self.pair_prob),
            ("solo_program_prob", self.solo_program_prob),
            ("carry_prob", self.carry_prob),
            ("phone_prob", self.phone_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.appearance_hz > 0.0 && self.appearance_hz <= f64::from(self.fps)) {
            return Err(Error::Config(format!(
                "appearance_hz must satisfy 0 < f_s <= fps ({} > {})",
                self.appearance_hz, self.fps
            )));
        }
        if !(self.mean_gap >= 1.0) || !(self.interaction_radius > 0.0) || !(self.appearance_sigma >= 0.0) {
            return Err(Error::Config("mean_gap >= 1, interaction_radius > 0, appearance_sigma >= 0".into()));
        }
        Ok(())
    }
}

/// Annotated (1 Hz) frames of a clip: the middle frame of every full or partial second.
pub fn anchor_frames(num_frames: u32, fps: u32) -> Vec<u32> {
    (0..)
        .map(|k| k * fps + fps / 2)
        .take_while(|&f| f < num_frames)
        .collect()
}

/// Sample a random scene script.
pub fn sample_script(cfg: &GeneratorConfig, r: &mut Rng) -> SceneScript {
    let radius = cfg.interaction_radius;
    let mut actors: Vec<ActorScript> = Vec::with_capacity(cfg.n_people);
    let mut anchors: Vec<[f64; 2]> = Vec::new();
    let shape = Normal::new(0.0, 0.5).expect("valid normal");

    let place = |r: &mut Rng, anchors: &mut Vec<[f64; 2]>| -> [f64; 2] {
        let mut best = [0.0, 8.0];
        let mut best_gap = f64::NEG_INFINITY;
        for _ in 0..64 {
            let p = [r.gen_range(-5.0..5.0), r.gen_range(5.0..13.0)];
            let gap = anchors
                .iter()
                .map(|a| ((a[0] - p[0]).powi(2) + (a[1] - p[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min);
            if gap > 3.0 * radius {
                best = p;
                break;
            }
            if gap > best_gap {
                best_gap = gap;
                best = p;
            }
        }
        anchors.push(best);
        best
    };

    while actors.len() < cfg.n_people {
        let left = cfg.n_people - actors.len();
        if left >= 2 && r.gen_bool(cfg.pair_prob) {
            let program = *UpperBody::PAIRED.choose(r).expect("non-empty");
            let center = place(r, &mut anchors);
            let sep = radius * r.gen_range(0.3..0.7);
            let dir: f64 = r.gen_range(0.0..2.0 * PI);
            let off = [0.5 * sep * dir.cos(), 0.5 * sep * dir.sin()];
            let mut a = ActorScript::new(Movement::Stand, program, [center[0] - off[0], center[1] - off[1]]);
            let mut b = ActorScript::new(Movement::Stand, program, [center[0] + off[0], center[1] + off[1]]);
            a.yaw = dir;
            b.yaw = dir + PI;
            if program == UpperBody::Talk {
                b.upper = UpperBody::Idle;
                if r.gen_bool(0.5) {
                    b.movement = Movement::Sit;
                }
            }
            actors.push(a);
            actors.push(b);
        } else {
            let roll: f64 = r.gen();
            let mut a = if roll < cfg.solo_program_prob {
                let program = *UpperBody::PAIRED.choose(r).expect("non-empty");
                ActorScript::new(Movement::Stand, program, place(r, &mut anchors))
            } else {
                let movement = *[Movement::Walk, Movement::Run, Movement::Stand, Movement::Sit]
                    .choose(r)
                    .expect("non-empty");
                let upper = if movement != Movement::Run && r.gen_bool(cfg.phone_prob) {
                    UpperBody::Phone
                } else {
                    UpperBody::Idle
                };
                let pos = if movement.is_stationary() {
                    place(r, &mut anchors)
                } else {
                    [r.gen_range(-6.0..6.0), r.gen_range(4.0..14.0)]
                };
                ActorScript::new(movement, upper, pos)
            };
            a.yaw = if a.movement.is_stationary() {
                r.gen_range(0.0..2.0 * PI)
            } else {
                // mostly lateral motion keeps moving actors in front of the camera
                let side = if r.gen_bool(0.5) { 0.0 } else { PI };
                side + r.gen_range(-0.4..0.4)
            };
            actors.push(a);
        }
    }
    for a in &mut actors {
        a.carry = r.gen_bool(cfg.carry_prob);
        a.phase = r.gen_range(0.0..2.0 * PI);
        for b in &mut a.beta {
            *b = shape.sample(r) as f32;
        }
    }
    SceneScript { actors }
}

/// Per-frame active classes of every actor.
pub fn scene_labels(script: &SceneScript, frame: u32, fps: u32, radius: f64) -> Vec<MultiHot> {
    let pos: Vec<[f64; 2]> = script.actors.iter().map(|a| a.position_at(frame, fps)).collect();
    let near = |i: usize, j: usize| {
        i != j && ((pos[i][0] - pos[j][0]).powi(2) + (pos[i][1] - pos[j][1]).powi(2)).sqrt() < radius
    };
    let listener = |a: &ActorScript| a.upper == UpperBody::Idle && a.movement.is_stationary();
    let talker = |a: &ActorScript| a.upper == UpperBody::Talk && a.movement.is_stationary();
    let n = script.actors.len();
    (0..n)
        .map(|i| {
            let a = &script.actors[i];
            let mut m = MultiHot::default();
            m.set(a.movement.class(), true);
            m.set(class::CARRY_OBJECT, a.carry);
            m.set(class::ANSWER_PHONE, a.upper == UpperBody::Phone);
            if let Some(k) = a.upper.symmetric_class() {
                let paired = (0..n).any(|j| near(i, j) && script.actors[j].upper == a.upper);
                m.set(k, paired);
            }
            if talker(a) {
                m.set(class::TALK, (0..n).any(|j| near(i, j) && listener(&script.actors[j])));
            }
            if listener(a) {
                m.set(class::LISTEN, (0..n).any(|j| near(i, j) && talker(&script.actors[j])));
            }
            m
        })
        .collect()
}

/// Render a script into a noiseless, fully visible clip with ground truth at the 1 Hz anchors.
pub fn render_script(script: &SceneScript, cfg: &GeneratorConfig, clip_id: &str) -> Result<Clip> {
    if script.actors.is_empty() {
        return Err(Error::Config("scene has no actors".into()));
    }
    if cfg.num_frames < 2 || cfg.fps == 0 {
        return Err(Error::Config("num_frames must be at least 2 and fps positive".into()));
    }
    let tracklets = script
        .actors
        .iter()
        .enumerate()
        .map(|(i, a)| Tracklet {
            track_id: i as u32,
            start_frame: 0,
            entries: (0..cfg.num_frames)
                .map(|f| {
                    Some(Detection {
                        person: PersonVector {
                            pose: a.pose_at(f, cfg.fps),
                            appearance: None,
                        },
                        bbox: a.bbox_at(f, cfg.fps),
                    })
                })
                .collect(),
        })
        .collect();
    let mut labels = Vec::new();
    for f in anchor_frames(cfg.num_frames, cfg.fps) {
        for (i, m) in scene_labels(script, f, cfg.fps, cfg.interaction_radius).into_iter().enumerate() {
            labels.push(LabelEntry {
                track_id: i as u32,
                frame: f,
                classes: m,
                evaluable: true,
            });
        }
    }
    let mut clip = Clip {
        clip_id: clip_id.to_string(),
        fps: cfg.fps,
        num_frames: cfg.num_frames,
        tracklets,
        labels,
        class_catalog: catalog(),
    };
    clip.sort_labels();
    Ok(clip)
}

pub fn clip_id_for(seed: u64) -> String {
    format!("clip-{seed:016x}")
}

/// Generate a noiseless, fully visible clip from `cfg` (pure in `cfg.seed`).
pub fn generate_clip(cfg: &GeneratorConfig) -> Result<Clip> {
    cfg.validate()?;
    let mut r = rng::substream(cfg.seed, "scene");
    let script = sample_script(cfg, &mut r);
    render_script(&script, cfg, &clip_id_for(cfg.seed))
}

/// Full synthetic sample: scene, occlusions and (optionally) appearance features.
pub fn generate_sample(cfg: &GeneratorConfig, provider: Option<&AppearanceProviderSpec>) -> Result<Clip> {
    let clip = generate_clip(cfg)?;
    let clip = apply_occlusions(&clip, cfg.occlusion_rate, cfg.mean_gap, rng::derive_seed(cfg.seed, "occlusion"));
    match provider {
        Some(spec) => synth_appearance(&clip, spec, &AppearanceConfig::from_generator(cfg)),
        None => Ok(clip),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_person(program: UpperBody, distance: f64) -> SceneScript {
        let mut a = ActorScript::new(Movement::Stand, program, [0.0, 6.0]);
        let mut b = ActorScript::new(Movement::Stand, program, [distance, 6.0]);
        a.yaw = 0.0;
        b.yaw = PI;
        SceneScript { actors: vec![a, b] }
    }

    fn names(m: MultiHot) -> Vec<&'static str> {
        m.iter().map(|k| CLASS_NAMES[k].0).collect()
    }

    #[test]
    fn catalog_has_expected_split() {
        let c = catalog();
        let count = |cat| c.classes.iter().filter(|x| x.category == cat).count();
        assert_eq!((count(Category::PM), count(Category::OM), count(Category::PI)), (4, 2, 6));
        for (i, (n, _)) in CLASS_NAMES.iter().enumerate() {
            assert_eq!(c.index_of(n), Some(i));
        }
    }

    #[test]
    fn close_huggers_are_both_labelled() {
        let cfg = GeneratorConfig {
            n_people: 2,
            ..GeneratorConfig::default()
        };
        let clip = render_script(&two_person(UpperBody::Hug, 0.3), &cfg, "hug").unwrap();
        clip.validate().unwrap();
        for l in &clip.labels {
            assert_eq!(names(l.classes), ["stand", "hug"]);
        }
    }

    #[test]
    fn distant_huggers_get_no_interaction() {
        let cfg = GeneratorConfig::default();
        let clip = render_script(&two_person(UpperBody::Hug, 5.0), &cfg, "far").unwrap();
        for l in &clip.labels {
            assert_eq!(names(l.classes), ["stand"]);
        }
    }

    #[test]
    fn listen_requires_a_nearby_talker() {
        let mut s = two_person(UpperBody::Talk, 0.5);
        s.actors[1].upper = UpperBody::Idle;
        let near = scene_labels(&s, 0, 8, 1.0);
        assert_eq!(names(near[0]), ["stand", "talk"]);
        assert_eq!(names(near[1]), ["stand", "listen"]);
        // the listener's body is unchanged by the talker's presence
        let alone = SceneScript {
            actors: vec![s.actors[1].clone()],
        };
        assert_eq!(alone.actors[0].pose_at(5, 8), s.actors[1].pose_at(5, 8));
        assert_eq!(names(scene_labels(&alone, 0, 8, 1.0)[0]), ["stand"]);
    }

    #[test]
    fn carry_does_not_touch_the_body() {
        let cfg = GeneratorConfig {
            n_people: 4,
            carry_prob: 0.0,
            ..GeneratorConfig::default()
        };
        let mut r = rng::substream(3, "s");
        let script = sample_script(&cfg, &mut r);
        let mut carried = script.clone();
        for a in &mut carried.actors {
            a.carry = true;
        }
        let a = render_script(&script, &cfg, "a").unwrap();
        let b = render_script(&carried, &cfg, "a").unwrap();
        assert_eq!(a.tracklets, b.tracklets);
        assert_ne!(a.labels, b.labels);
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        for seed in 0..20 {
            let cfg = GeneratorConfig {
                n_people: 5,
                seed,
                ..GeneratorConfig::default()
            };
            let a = generate_clip(&cfg).unwrap();
            a.validate().unwrap();
            assert_eq!(a, generate_clip(&cfg).unwrap());
            assert_eq!(a.tracklets.len(), 5);
        }
    }

    #[test]
    fn interaction_labels_are_symmetric_and_talk_listen_reciprocal() {
        for seed in 0..200 {
            let cfg = GeneratorConfig {
                n_people: 4,
                pair_prob: 0.9,
                seed,
                ..GeneratorConfig::default()
            };
            let script = sample_script(&cfg, &mut rng::substream(seed, "scene"));
            let labels = scene_labels(&script, 4, cfg.fps, cfg.interaction_radius);
            for k in [class::HUG, class::HANDSHAKE, class::FIGHT, class::DANCE] {
                let n = labels.iter().filter(|m| m.get(k)).count();
                assert_ne!(n, 1, "symmetric class {k} set on a single actor");
            }
            let talkers = labels.iter().filter(|m| m.get(class::TALK)).count();
            let listeners = labels.iter().filter(|m| m.get(class::LISTEN)).count();
            assert_eq!(talkers > 0, listeners > 0);
            for (m, a) in labels.iter().zip(&script.actors) {
                assert!(!(m.get(class::TALK) && m.get(class::LISTEN)));
                if m.get(class::LISTEN) {
                    assert_eq!(a.upper, UpperBody::Idle);
                }
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = GeneratorConfig {
            appearance_hz: 30.0,
            ..GeneratorConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(msg)) if msg.contains("f_s")));
        let bad = GeneratorConfig {
            n_people: 0,
            ..GeneratorConfig::default()
        };
        assert!(generate_clip(&bad).is_err());
        let bad = GeneratorConfig {
            num_frames: 1,
            ..GeneratorConfig::default()
        };
        assert!(generate_clip(&bad).is_err());
    }

    #[test]
    fn anchors_are_mid_second() {
        assert_eq!(anchor_frames(32, 8), vec![4, 12, 20, 28]);
        assert_eq!(anchor_frames(30, 30), vec![15]);
        assert_eq!(anchor_frames(10, 30), Vec::<u32>::new());
    }
}
