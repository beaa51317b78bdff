//! Person-centric action recognition over 3D tracklets.
//!
//! Tracklets of people (3D pose plus optional appearance features) are
//! tokenized into a track × time grid, encoded by a masked transformer and
//! supervised densely with multi-label binary cross-entropy. A deterministic
//! scene generator provides data with known decodability properties.

pub mod ablation;
pub mod checkpoint;
pub mod clip_format;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod rotation;
pub mod scene;
pub mod tokenizer;
pub mod tracklet;
pub mod train;
pub mod transformer;

pub use error::{Error, ErrorKind, Result};
