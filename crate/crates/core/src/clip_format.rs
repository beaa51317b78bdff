//! Line-oriented text format for clips (`lart-clip/1`).
//!
//! ```text
//! lart-clip/1
//! clip_id <id>
//! fps <int>
//! num_frames <int>
//! classes <K>
//! class <name> <PM|OM|PI>                 (K lines)
//! tracklets <n>
//! track <track_id> <start_frame> <len>    (per tracklet, followed by)
//! appearance <source_frame> <1152 floats> (one per distinct feature)
//! frame <t> absent
//! frame <t> box <4> theta <207> psi <9> beta <10> location <3> [appearance <source_frame>]
//! labels <m>
//! label <track_id> <frame> <evaluable 0|1> <name,name,...>
//! end
//! ```
//!
//! Floats are written with nine significant digits, which round-trips `f32`
//! exactly, so `parse_clip(write_clip(c)) == c`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tracklet::{
    ActionClass, AppearanceFeature, BBox, Category, ClassCatalog, Clip, Detection, LabelEntry, MultiHot, PersonPose,
    PersonVector, Tracklet, APPEARANCE_DIM, NUM_JOINTS, POSE_DIM, SHAPE_DIM,
};

pub const CLIP_SCHEMA: &str = "lart-clip/1";

fn push_floats(out: &mut String, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        let _ = write!(out, " {v:.8e}");
    }
}

/// Serialize `clip` to its text form.
pub fn write_clip(clip: &Clip) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CLIP_SCHEMA}");
    let _ = writeln!(s, "clip_id {}", clip.clip_id);
    let _ = writeln!(s, "fps {}", clip.fps);
    let _ = writeln!(s, "num_frames {}", clip.num_frames);
    let _ = writeln!(s, "classes {}", clip.class_catalog.len());
    for c in &clip.class_catalog.classes {
        let _ = writeln!(s, "class {} {}", c.name, c.category);
    }
    let _ = writeln!(s, "tracklets {}", clip.tracklets.len());
    for t in &clip.tracklets {
        let _ = writeln!(s, "track {} {} {}", t.track_id, t.start_frame, t.entries.len());
        let mut shared: BTreeMap<u32, &Arc<[f32]>> = BTreeMap::new();
        for d in t.entries.iter().flatten() {
            if let Some(a) = &d.person.appearance {
                shared.entry(a.source_frame).or_insert(&a.u);
            }
        }
        for (src, u) in shared {
            let _ = write!(s, "appearance {src}");
            push_floats(&mut s, u.iter().copied());
            s.push('\n');
        }
        for (i, e) in t.entries.iter().enumerate() {
            let frame = t.start_frame + i as u32;
            match e {
                None => {
                    let _ = writeln!(s, "frame {frame} absent");
                }
                Some(d) => {
                    let _ = write!(s, "frame {frame} box");
                    push_floats(&mut s, [d.bbox.x0, d.bbox.y0, d.bbox.x1, d.bbox.y1]);
                    let flat = d.person.pose.flatten();
                    let (theta, rest) = flat.split_at(NUM_JOINTS * 9);
                    let (psi, rest) = rest.split_at(9);
                    let (beta, loc) = rest.split_at(SHAPE_DIM);
                    for (name, vals) in [("theta", theta), ("psi", psi), ("beta", beta), ("location", loc)] {
                        s.push(' ');
                        s.push_str(name);
                        push_floats(&mut s, vals.iter().copied());
                    }
                    if let Some(a) = &d.person.appearance {
                        let _ = write!(s, " appearance {}", a.source_frame);
                    }
                    s.push('\n');
                }
            }
        }
    }
    let _ = writeln!(s, "labels {}", clip.labels.len());
    for l in &clip.labels {
        let names: Vec<&str> = l
            .classes
            .iter()
            .filter_map(|k| clip.class_catalog.classes.get(k).map(|c| c.name.as_str()))
            .collect();
        let _ = writeln!(
            s,
            "label {} {} {} {}",
            l.track_id,
            l.frame,
            u8::from(l.evaluable),
            if names.is_empty() { "-".to_string() } else { names.join(",") }
        );
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<(&'a str, Vec<&'a str>)> {
        let (i, l) = self
            .inner
            .next()
            .ok_or_else(|| Error::parse(self.line + 1, "unexpected end of file"))?;
        self.line = i + 1;
        let mut toks = l.split_ascii_whitespace();
        let key = toks.next().ok_or_else(|| Error::parse(self.line, "blank line"))?;
        Ok((key, toks.collect()))
    }

    fn expect(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let (k, rest) = self.next_line()?;
        if k != key {
            return Err(Error::parse(self.line, format!("expected `{key}`, found `{k}`")));
        }
        Ok(rest)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.line, msg)
    }

    fn single<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let rest = self.expect(key)?;
        match rest.as_slice() {
            [v] => v.parse().map_err(|_| self.err(format!("bad value for `{key}`"))),
            _ => Err(self.err(format!("`{key}` takes exactly one value"))),
        }
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse().map_err(|_| Error::parse(line, format!("bad {what}: {tok:?}")))
}

fn parse_floats(toks: &[&str], line: usize) -> Result<Vec<f32>> {
    toks.iter()
        .map(|t| {
            let v: f32 = parse_num(t, line, "float")?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(line, "non-finite float"))
            }
        })
        .collect()
}

/// Take `n` values following the field name `name` out of `toks`.
fn field<'a>(toks: &'a [&'a str], pos: &mut usize, name: &str, n: usize, line: usize) -> Result<&'a [&'a str]> {
    if toks.get(*pos) != Some(&name) {
        return Err(Error::parse(line, format!("expected field `{name}`")));
    }
    let start = *pos + 1;
    let end = start + n;
    if end > toks.len() {
        return Err(Error::parse(line, format!("field `{name}` needs {n} values")));
    }
    *pos = end;
    Ok(&toks[start..end])
}

// Upper bound on counts read from the header before allocating.
const MAX_PREALLOC: usize = 4096;

/// Parse and validate a clip from its text form.
pub fn parse_clip(text: &str) -> Result<Clip> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let (header, rest) = lines.next_line()?;
    if header != CLIP_SCHEMA || !rest.is_empty() {
        if header.starts_with("lart-clip/") {
            return Err(Error::Version {
                found: header.to_string(),
                expected: CLIP_SCHEMA.to_string(),
            });
        }
        return Err(lines.err(format!("missing `{CLIP_SCHEMA}` header")));
    }
    let clip_id: String = lines.single("clip_id")?;
    let fps: u32 = lines.single("fps")?;
    let num_frames: u32 = lines.single("num_frames")?;
    let n_classes: usize = lines.single("classes")?;
    let mut classes = Vec::with_capacity(n_classes.min(MAX_PREALLOC));
    for _ in 0..n_classes {
        let rest = lines.expect("class")?;
        let [name, cat] = rest.as_slice() else {
            return Err(lines.err("`class` takes a name and a category"));
        };
        let category = Category::parse(cat).ok_or_else(|| lines.err(format!("unknown category {cat:?}")))?;
        classes.push(ActionClass {
            name: name.to_string(),
            category,
        });
    }
    let class_catalog = ClassCatalog::new(classes)?;

    let n_tracks: usize = lines.single("tracklets")?;
    let mut tracklets = Vec::with_capacity(n_tracks.min(MAX_PREALLOC));
    for _ in 0..n_tracks {
        let rest = lines.expect("track")?;
        let [id, start, len] = rest.as_slice() else {
            return Err(lines.err("`track` takes id, start frame and length"));
        };
        let line = lines.line;
        let track_id: u32 = parse_num(id, line, "track id")?;
        let start_frame: u32 = parse_num(start, line, "start frame")?;
        let len: u32 = parse_num(len, line, "length")?;
        if u64::from(start_frame) + u64::from(len) > u64::from(num_frames) {
            return Err(lines.err("tracklet extends past the clip"));
        }
        let mut shared: BTreeMap<u32, Arc<[f32]>> = BTreeMap::new();
        let mut entries = Vec::with_capacity((len as usize).min(MAX_PREALLOC));
        let mut i = 0u32;
        while i < len {
            let (key, toks) = lines.next_line()?;
            let line = lines.line;
            match key {
                "appearance" => {
                    if i > 0 {
                        return Err(lines.err("appearance lines must precede frames"));
                    }
                    let Some((src, vals)) = toks.split_first() else {
                        return Err(lines.err("`appearance` needs a source frame"));
                    };
                    let src: u32 = parse_num(src, line, "source frame")?;
                    if vals.len() != APPEARANCE_DIM {
                        return Err(lines.err(format!("appearance needs {APPEARANCE_DIM} values")));
                    }
                    let u = parse_floats(vals, line)?;
                    if shared.insert(src, Arc::from(u)).is_some() {
                        return Err(lines.err(format!("duplicate appearance for source frame {src}")));
                    }
                }
                "frame" => {
                    let frame: u32 = parse_num(toks.first().copied().unwrap_or(""), line, "frame")?;
                    if frame != start_frame + i {
                        return Err(lines.err(format!("expected frame {}, found {frame}", start_frame + i)));
                    }
                    if toks.get(1) == Some(&"absent") && toks.len() == 2 {
                        entries.push(None);
                    } else {
                        entries.push(Some(parse_detection(&toks, &shared, line)?));
                    }
                    i += 1;
                }
                other => return Err(lines.err(format!("unexpected `{other}` inside track"))),
            }
        }
        tracklets.push(Tracklet {
            track_id,
            start_frame,
            entries,
        });
    }

    let n_labels: usize = lines.single("labels")?;
    let mut labels = Vec::with_capacity(n_labels.min(MAX_PREALLOC));
    for _ in 0..n_labels {
        let rest = lines.expect("label")?;
        let line = lines.line;
        let [track, frame, eval, names] = rest.as_slice() else {
            return Err(lines.err("`label` takes track, frame, evaluable flag and classes"));
        };
        let evaluable = match *eval {
            "0" => false,
            "1" => true,
            _ => return Err(lines.err("evaluable flag must be 0 or 1")),
        };
        let mut classes = MultiHot::default();
        if *names != "-" {
            for n in names.split(',') {
                let k = class_catalog
                    .index_of(n)
                    .ok_or_else(|| lines.err(format!("unknown class {n:?}")))?;
                classes.set(k, true);
            }
        }
        labels.push(LabelEntry {
            track_id: parse_num(track, line, "track id")?,
            frame: parse_num(frame, line, "frame")?,
            classes,
            evaluable,
        });
    }
    let rest = lines.expect("end")?;
    if !rest.is_empty() {
        return Err(lines.err("trailing tokens after `end`"));
    }
    if let Some((i, l)) = lines.inner.find(|(_, l)| !l.trim().is_empty()) {
        return Err(Error::parse(i + 1, format!("content after `end`: {l:?}")));
    }
    let clip = Clip {
        clip_id,
        fps,
        num_frames,
        tracklets,
        labels,
        class_catalog,
    };
    clip.validate()?;
    Ok(clip)
}

fn parse_detection(toks: &[&str], shared: &BTreeMap<u32, Arc<[f32]>>, line: usize) -> Result<Detection> {
    let mut pos = 1;
    let b = parse_floats(field(toks, &mut pos, "box", 4, line)?, line)?;
    let mut flat = Vec::with_capacity(POSE_DIM);
    for (name, n) in [("theta", NUM_JOINTS * 9), ("psi", 9), ("beta", SHAPE_DIM), ("location", 3)] {
        flat.extend(parse_floats(field(toks, &mut pos, name, n, line)?, line)?);
    }
    let pose = PersonPose::unflatten(&flat).map_err(|e| Error::parse(line, e.to_string()))?;
    let appearance = if pos < toks.len() {
        let src: u32 = parse_num(field(toks, &mut pos, "appearance", 1, line)?[0], line, "source frame")?;
        let u = shared
            .get(&src)
            .ok_or_else(|| Error::parse(line, format!("no appearance recorded for source frame {src}")))?;
        Some(AppearanceFeature {
            u: Arc::clone(u),
            source_frame: src,
        })
    } else {
        None
    };
    if pos != toks.len() {
        return Err(Error::parse(line, "trailing tokens in frame"));
    }
    Ok(Detection {
        person: PersonVector { pose, appearance },
        bbox: BBox {
            x0: b[0],
            y0: b[1],
            x1: b[2],
            y1: b[3],
        },
    })
}

/// Validate and write `clip` to `path`.
pub fn save_clip(clip: &Clip, path: impl AsRef<Path>) -> Result<()> {
    clip.validate()?;
    std::fs::write(path, write_clip(clip))?;
    Ok(())
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<Clip> {
    parse_clip(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{
        apply_occlusions, generate_clip, synth_appearance, AppearanceConfig, AppearanceProviderSpec, GeneratorConfig,
    };
    use proptest::prelude::*;

    fn sample(seed: u64, appearance: bool) -> Clip {
        let g = GeneratorConfig {
            n_people: 2,
            num_frames: 64,
            seed,
            ..GeneratorConfig::default()
        };
        let c = apply_occlusions(&generate_clip(&g).unwrap(), 0.2, 3.0, seed);
        if appearance {
            let spec = AppearanceProviderSpec::new(1, 3, 16).unwrap();
            synth_appearance(&c, &spec, &AppearanceConfig::from_generator(&g)).unwrap()
        } else {
            c
        }
    }

    #[test]
    fn two_track_clip_round_trips() {
        let c = sample(4, false);
        assert_eq!(c.tracklets.len(), 2);
        assert_eq!(c.num_frames, 64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.clip");
        save_clip(&c, &path).unwrap();
        assert_eq!(load_clip(&path).unwrap(), c);
    }

    #[test]
    fn appearance_is_stored_once_per_sample() {
        let c = sample(6, true);
        let text = write_clip(&c);
        assert_eq!(parse_clip(&text).unwrap(), c);
        let n = text.lines().filter(|l| l.starts_with("appearance")).count();
        assert!(n <= 2 * 8, "{n} appearance lines");
    }

    #[test]
    fn evaluable_label_on_absent_frame_is_rejected() {
        let mut c = sample(2, false);
        let l = *c.labels.iter().find(|l| l.evaluable).unwrap();
        let t = c.tracklets.iter_mut().find(|t| t.track_id == l.track_id).unwrap();
        t.entries[(l.frame - t.start_frame) as usize] = None;
        let err = parse_clip(&write_clip(&c)).unwrap_err();
        assert!(err.to_string().contains("absent frame"), "{err}");
    }

    #[test]
    fn empty_tracklet_is_rejected() {
        let text = "lart-clip/1\nclip_id x\nfps 8\nnum_frames 4\nclasses 1\nclass stand PM\ntracklets 1\n\
                    track 0 0 2\nframe 0 absent\nframe 1 absent\nlabels 0\nend\n";
        let err = parse_clip(text).unwrap_err();
        assert!(err.to_string().contains("tracklet 0 has no present entries"), "{err}");
    }

    #[test]
    fn version_and_malformed_errors() {
        let c = sample(1, false);
        let text = write_clip(&c).replacen("lart-clip/1", "lart-clip/2", 1);
        assert!(matches!(parse_clip(&text), Err(Error::Version { .. })));
        assert!(matches!(parse_clip("hello"), Err(Error::Parse { .. })));
        let truncated: String = write_clip(&c).lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_clip(&truncated), Err(Error::Parse { .. })));
    }

    #[test]
    fn floats_use_nine_significant_digits() {
        let c = sample(3, false);
        let text = write_clip(&c);
        let line = text.lines().find(|l| l.starts_with("frame 0 box")).unwrap();
        let tok = line.split_whitespace().nth(3).unwrap();
        let mantissa = tok.split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 9, "{tok}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn serialization_is_a_bijection(seed in 0u64..10_000, app in any::<bool>()) {
            let c = sample(seed, app);
            let text = write_clip(&c);
            let back = parse_clip(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(write_clip(&back), text);
        }
    }
}
