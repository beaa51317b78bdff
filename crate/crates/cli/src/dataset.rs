//! Dataset directories: one `.clip` file per clip plus `manifest.txt`.
//!
//! ```text
//! lart-dataset/1
//! seed <root seed>
//! config_hash <hex>
//! config <key> <value>          one line per generator setting
//! class <index> <name> <category>
//! clip <index> <clip seed> <file> <sha256>
//! dataset_hash <sha256 over the clip lines>
//! ```
//!
//! The manifest carries no timestamps, so regenerating with the same
//! settings reproduces the directory byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lart::clip_format::{parse_clip, write_clip};
use lart::scene::{self, generate_sample, GeneratorConfig};
use lart::tracklet::Clip;
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::keys::DatasetSpec;
use crate::manifest::{hex, sha256};

pub const DATASET_MAGIC: &str = "lart-dataset/1";
pub const DATASET_MANIFEST: &str = "manifest.txt";

/// `(key, value)` pairs of the generator settings, in a fixed order.
pub fn spec_pairs(spec: &DatasetSpec) -> Vec<(&'static str, String)> {
    let g = &spec.generator;
    let mut v = vec![
        ("num_clips", spec.num_clips.to_string()),
        ("n_people", g.n_people.to_string()),
        ("num_frames", g.num_frames.to_string()),
        ("fps", g.fps.to_string()),
        ("occlusion_rate", g.occlusion_rate.to_string()),
        ("mean_gap", g.mean_gap.to_string()),
        ("interaction_radius", g.interaction_radius.to_string()),
        ("teacher_flip_p", g.teacher_flip_p.to_string()),
        ("appearance_hz", g.appearance_hz.to_string()),
        ("appearance_sigma", g.appearance_sigma.to_string()),
        ("pair_prob", g.pair_prob.to_string()),
        ("solo_program_prob", g.solo_program_prob.to_string()),
        ("carry_prob", g.carry_prob.to_string()),
        ("phone_prob", g.phone_prob.to_string()),
        ("appearance", spec.appearance.is_some().to_string()),
    ];
    if let Some((hw, rank)) = spec.appearance {
        v.push(("appearance_half_window", hw.to_string()));
        v.push(("appearance_rank", rank.to_string()));
    }
    v
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Generate every clip of `spec` into `out`; returns the dataset hash.
pub fn generate(spec: &DatasetSpec, out: &Path) -> Result<String> {
    create_dir(out)?;
    let provider = spec.provider()?;
    let clips: Vec<(u64, String, Vec<u8>)> = (0..spec.num_clips)
        .into_par_iter()
        .map(|i| {
            let seed = spec.clip_seed(i);
            let cfg = GeneratorConfig {
                seed,
                ..spec.generator.clone()
            };
            let clip = generate_sample(&cfg, provider.as_ref())?;
            Ok((seed, format!("{}.clip", clip.clip_id), write_clip(&clip).into_bytes()))
        })
        .collect::<Result<_>>()?;

    let mut m = String::new();
    let _ = writeln!(m, "{DATASET_MAGIC}");
    let _ = writeln!(m, "seed {}", spec.seed);
    let pairs = spec_pairs(spec);
    let cfg_text: String = pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    let _ = writeln!(m, "config_hash {}", &hex(&sha256(cfg_text.as_bytes()))[..16]);
    for (k, v) in &pairs {
        let _ = writeln!(m, "config {k} {v}");
    }
    for (i, c) in scene::catalog().classes.iter().enumerate() {
        let _ = writeln!(m, "class {i} {} {}", c.name, c.category);
    }
    let mut listing = String::new();
    for (i, (seed, file, bytes)) in clips.iter().enumerate() {
        write_file(&out.join(file), bytes)?;
        let _ = writeln!(listing, "clip {i} {seed} {file} {}", hex(&sha256(bytes)));
    }
    let hash = hex(&sha256(listing.as_bytes()));
    m.push_str(&listing);
    let _ = writeln!(m, "dataset_hash {hash}");
    write_file(&out.join(DATASET_MANIFEST), m.as_bytes())?;
    Ok(hash)
}

/// A loaded dataset directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub clips: Vec<Clip>,
    pub hash: String,
    /// Generator settings recorded in the manifest.
    pub config: BTreeMap<String, String>,
}

impl Dataset {
    pub fn teacher_flip_p(&self) -> Result<f64> {
        let v = self.config.get("teacher_flip_p").map_or("0.05", String::as_str);
        v.parse()
            .map_err(|_| CliError::Core(lart::Error::Validation(format!("dataset manifest: bad teacher_flip_p {v:?}"))))
    }

    pub fn num_classes(&self) -> usize {
        self.clips.first().map_or(0, |c| c.class_catalog.len())
    }
}

fn data_error(dir: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Core(lart::Error::Validation(format!("{}: {msg}", dir.join(DATASET_MANIFEST).display())))
}

/// Load a dataset, verifying every clip against its recorded checksum.
pub fn load(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(DATASET_MANIFEST);
    if !mpath.exists() {
        return Err(CliError::MissingInputs(vec![mpath]));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| CliError::io(&mpath, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(DATASET_MAGIC) {
        return Err(data_error(dir, format!("expected {DATASET_MAGIC} header")));
    }
    let mut config = BTreeMap::new();
    let mut entries = Vec::new();
    let mut listing = String::new();
    let mut recorded_hash = None;
    for line in lines {
        let f: Vec<&str> = line.split(' ').collect();
        match f.as_slice() {
            ["config", k, v] => {
                config.insert(k.to_string(), v.to_string());
            }
            ["clip", _, _, file, sum] => {
                entries.push((file.to_string(), sum.to_string()));
                listing.push_str(line);
                listing.push('\n');
            }
            ["dataset_hash", h] => recorded_hash = Some(h.to_string()),
            ["seed", _] | ["config_hash", _] | ["class", _, _, _] => {}
            _ => return Err(data_error(dir, format!("unrecognised line {line:?}"))),
        }
    }
    let hash = hex(&sha256(listing.as_bytes()));
    if recorded_hash.as_deref() != Some(hash.as_str()) {
        return Err(data_error(dir, "dataset_hash does not match the clip listing"));
    }
    let missing: Vec<PathBuf> = entries.iter().map(|(f, _)| dir.join(f)).filter(|p| !p.exists()).collect();
    if !missing.is_empty() {
        return Err(CliError::MissingInputs(missing));
    }
    let clips = entries
        .par_iter()
        .map(|(file, sum)| {
            let path = dir.join(file);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if hex(&sha256(&bytes)) != *sum {
                return Err(data_error(dir, format!("{file} does not match its checksum")));
            }
            let text = String::from_utf8(bytes).map_err(|_| data_error(dir, format!("{file} is not UTF-8")))?;
            Ok(parse_clip(&text)?)
        })
        .collect::<Result<Vec<Clip>>>()?;
    if clips.is_empty() {
        return Err(CliError::Core(lart::Error::Empty("dataset")));
    }
    Ok(Dataset {
        dir: dir.to_path_buf(),
        clips,
        hash,
        config,
    })
}
