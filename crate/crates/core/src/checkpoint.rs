//! Binary checkpoint format (`lart-ckpt/1`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "lart-ckpt/1\n"
//! u32 len, model config as `key=value` lines
//! u32 len, metadata as `key=value` lines
//! u64 step
//! u32 tensor count, then per tensor:
//!     u16 name len, name, u8 rank, u64 dims[rank], f64 data[prod(dims)]
//! u8 optimizer flag; if 1: u64 t, u64 skipped, then m and v per tensor
//! 32-byte SHA-256 of everything above
//! ```

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::AdamState;
use crate::tokenizer::{TokenConfig, TokenMode};
use crate::transformer::{Model, ModelConfig, NormPosition};

pub const CKPT_MAGIC: &str = "lart-ckpt/1";

#[derive(Clone, Debug, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub meta: BTreeMap<String, String>,
    pub step: u64,
    pub tensors: Vec<TensorRecord>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, step: u64, optimizer: Option<&AdamState>) -> Self {
        Checkpoint {
            config: model.cfg.clone(),
            meta: BTreeMap::new(),
            step,
            tensors: model
                .params
                .tensors
                .iter()
                .map(|t| TensorRecord {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.clone(),
                })
                .collect(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuild the model, rejecting a checkpoint whose config differs from `expected`.
    pub fn to_model(&self, expected: Option<&ModelConfig>) -> Result<Model> {
        if let Some(e) = expected {
            if e != &self.config {
                return Err(Error::CheckpointMismatch(format!(
                    "checkpoint config {} differs from requested {}",
                    config_to_text(&self.config).trim_end().replace('\n', " "),
                    config_to_text(e).trim_end().replace('\n', " ")
                )));
            }
        }
        let mut model = Model::new(&self.config, 0)?;
        if model.params.len() != self.tensors.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                model.params.len()
            )));
        }
        for (t, rec) in model.params.tensors.iter_mut().zip(&self.tensors) {
            if t.name != rec.name || t.shape != rec.shape {
                return Err(Error::CheckpointMismatch(format!(
                    "tensor {} {:?} stored as {} {:?}",
                    t.name, t.shape, rec.name, rec.shape
                )));
            }
            t.data.clone_from(&rec.data);
        }
        if let Some(opt) = &self.optimizer {
            if !opt.matches(&model.params) {
                return Err(Error::CheckpointMismatch("optimizer state shape differs from parameters".into()));
            }
        }
        Ok(model)
    }
}

/// `key=value` rendering of a model config, one key per line, sorted.
pub fn config_to_text(c: &ModelConfig) -> String {
    let mut m = BTreeMap::new();
    m.insert("layers", c.layers.to_string());
    m.insert("heads", c.heads.to_string());
    m.insert("d_model", c.d_model.to_string());
    m.insert("mlp_ratio", c.mlp_ratio.to_string());
    m.insert("dropout", c.dropout.to_string());
    m.insert("drop_path", c.drop_path.to_string());
    m.insert("num_classes", c.num_classes.to_string());
    m.insert("norm_position", c.norm_position.as_str().to_string());
    m.insert("token_mode", c.tokens.mode.as_str().to_string());
    m.insert("pose_embed", c.tokens.pose_embed.to_string());
    m.insert("appearance_embed", c.tokens.appearance_embed.to_string());
    m.insert("proj_hidden", c.tokens.proj_hidden.to_string());
    m.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(i + 1, "expected key=value"))?;
        if m.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::parse(i + 1, format!("duplicate key {k}")));
        }
    }
    Ok(m)
}

pub fn config_from_text(text: &str) -> Result<ModelConfig> {
    let mut m = parse_kv(text)?;
    let mut take = |k: &str| m.remove(k).ok_or_else(|| Error::parse(0, format!("missing config key {k}")));
    fn num<T: std::str::FromStr>(k: &str, v: String) -> Result<T> {
        v.parse().map_err(|_| Error::parse(0, format!("bad value for {k}: {v:?}")))
    }
    let cfg = ModelConfig {
        layers: num("layers", take("layers")?)?,
        heads: num("heads", take("heads")?)?,
        d_model: num("d_model", take("d_model")?)?,
        mlp_ratio: num("mlp_ratio", take("mlp_ratio")?)?,
        dropout: num("dropout", take("dropout")?)?,
        drop_path: num("drop_path", take("drop_path")?)?,
        num_classes: num("num_classes", take("num_classes")?)?,
        norm_position: {
            let v = take("norm_position")?;
            NormPosition::parse(&v).ok_or_else(|| Error::parse(0, format!("bad norm_position {v:?}")))?
        },
        tokens: TokenConfig {
            mode: {
                let v = take("token_mode")?;
                TokenMode::parse(&v).ok_or_else(|| Error::parse(0, format!("bad token_mode {v:?}")))?
            },
            pose_embed: num("pose_embed", take("pose_embed")?)?,
            appearance_embed: num("appearance_embed", take("appearance_embed")?)?,
            proj_hidden: num("proj_hidden", take("proj_hidden")?)?,
        },
    };
    if let Some(k) = m.keys().next() {
        return Err(Error::parse(0, format!("unknown config key {k}")));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_block(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).expect("vec write");
    out.extend_from_slice(s.as_bytes());
}

fn write_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        out.write_f64::<LE>(x).expect("vec write");
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC.as_bytes());
    out.push(b'\n');
    write_block(&mut out, &config_to_text(&c.config));
    let meta: String = c.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write_block(&mut out, &meta);
    out.write_u64::<LE>(c.step).expect("vec write");
    out.write_u32::<LE>(c.tensors.len() as u32).expect("vec write");
    for t in &c.tensors {
        out.write_u16::<LE>(t.name.len() as u16).expect("vec write");
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.write_u64::<LE>(d as u64).expect("vec write");
        }
        write_f64s(&mut out, &t.data);
    }
    match &c.optimizer {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            out.write_u64::<LE>(o.t).expect("vec write");
            out.write_u64::<LE>(o.skipped).expect("vec write");
            for (m, v) in o.m.iter().zip(&o.v) {
                write_f64s(&mut out, m);
                write_f64s(&mut out, v);
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn truncated<T>(_: std::io::Error) -> Result<T> {
        Err(Error::parse(0, "checkpoint is truncated"))
    }

    fn u8(&mut self) -> Result<u8> {
        self.cur.read_u8().or_else(Self::truncated)
    }

    fn u16(&mut self) -> Result<u16> {
        self.cur.read_u16::<LE>().or_else(Self::truncated)
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LE>().or_else(Self::truncated)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cur.read_u64::<LE>().or_else(Self::truncated)
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        if n > self.remaining() {
            return Err(Error::parse(0, "checkpoint is truncated"));
        }
        let mut buf = vec![0; n];
        self.cur.read_exact(&mut buf).or_else(Self::truncated)?;
        Ok(buf)
    }

    fn text(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::parse(0, "checkpoint text is not UTF-8"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(Error::parse(0, "checkpoint is truncated"));
        }
        (0..n)
            .map(|_| self.cur.read_f64::<LE>().or_else(Self::truncated))
            .collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let magic_len = CKPT_MAGIC.len() + 1;
    if bytes.len() < magic_len || &bytes[..CKPT_MAGIC.len()] != CKPT_MAGIC.as_bytes() || bytes[CKPT_MAGIC.len()] != b'\n'
    {
        let found = bytes
            .split(|&b| b == b'\n')
            .next()
            .map(|l| String::from_utf8_lossy(&l[..l.len().min(32)]).into_owned())
            .unwrap_or_default();
        return Err(Error::Version {
            found,
            expected: CKPT_MAGIC.into(),
        });
    }
    if bytes.len() < magic_len + 32 {
        return Err(Error::parse(0, "checkpoint is truncated"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::validation("checkpoint checksum mismatch"));
    }
    let mut r = Reader {
        cur: Cursor::new(&body[magic_len..]),
    };
    let n = r.u32()? as usize;
    let config = config_from_text(&r.text(n)?)?;
    let n = r.u32()? as usize;
    let meta = parse_kv(&r.text(n)?)?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = r.text(n)?;
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| Error::parse(0, "dimension overflows"))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::parse(0, "tensor size overflows"))?;
        let data = r.f64s(len)?;
        tensors.push(TensorRecord { name, shape, data });
    }
    let optimizer = match r.u8()? {
        0 => None,
        1 => {
            let t = r.u64()?;
            let skipped = r.u64()?;
            let mut m = Vec::with_capacity(tensors.len());
            let mut v = Vec::with_capacity(tensors.len());
            for rec in &tensors {
                m.push(r.f64s(rec.data.len())?);
                v.push(r.f64s(rec.data.len())?);
            }
            Some(AdamState { m, v, t, skipped })
        }
        f => return Err(Error::parse(0, format!("bad optimizer flag {f}"))),
    };
    if r.remaining() != 0 {
        return Err(Error::parse(0, "trailing bytes after checkpoint body"));
    }
    Ok(Checkpoint {
        config,
        meta,
        step,
        tensors,
        optimizer,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(c))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
