//! Masked transformer encoder with a per-token multi-label head.

use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear};
use crate::params::{Grads, Group, ParamStore};
use crate::rng;
use crate::tokenizer::{attends, prepare_pe, EmbedCache, SlotState, TokenConfig, TokenEmbedder, TokenGrid};
use crate::tracklet::{MultiHot, MAX_CLASSES};

/// Additive attention bias for blocked pairs.
pub const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormPosition {
    Pre,
    Post,
}

impl NormPosition {
    pub fn as_str(self) -> &'static str {
        match self {
            NormPosition::Pre => "pre",
            NormPosition::Post => "post",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pre" => Some(NormPosition::Pre),
            "post" => Some(NormPosition::Post),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    /// Hidden width of the encoder MLP as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub dropout: f64,
    pub drop_path: f64,
    pub num_classes: usize,
    pub norm_position: NormPosition,
    pub tokens: TokenConfig,
}

impl ModelConfig {
    /// 16 layers, 16 heads, width 512.
    pub fn standard(num_classes: usize) -> Self {
        ModelConfig {
            layers: 16,
            heads: 16,
            d_model: 512,
            mlp_ratio: 4,
            dropout: 0.1,
            drop_path: 0.1,
            num_classes,
            norm_position: NormPosition::Pre,
            tokens: TokenConfig::pose_only(512),
        }
    }

    /// 4 layers, 4 heads, width 64.
    pub fn tiny(num_classes: usize) -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            d_model: 64,
            tokens: TokenConfig::pose_only(64),
            ..Self::standard(num_classes)
        }
    }

    pub fn with_tokens(mut self, tokens: TokenConfig) -> Self {
        self.tokens = tokens;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("layers, heads and mlp_ratio must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if self.num_classes == 0 || self.num_classes > MAX_CLASSES {
            return Err(Error::Config(format!("num_classes {} outside 1..={MAX_CLASSES}", self.num_classes)));
        }
        for (name, p) in [("dropout", self.dropout), ("drop_path", self.drop_path)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1)")));
            }
        }
        self.tokens.validate(self.d_model)
    }
}

/// Forward-pass regime.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// No stochastic regularization; no gradients.
    Eval,
    /// Dropout and drop-path active, drawn from `seed`.
    Train { dropout: f64, drop_path: f64, seed: u64 },
}

impl Mode {
    /// Train mode without stochastic regularization.
    pub fn deterministic_train() -> Self {
        Mode::Train {
            dropout: 0.0,
            drop_path: 0.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    wo: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
struct AttnCache {
    input: Array2<f64>,
    qkv: Array2<f64>,
    probs: Vec<Array2<f64>>,
    merged: Array2<f64>,
}

#[derive(Clone, Debug)]
struct MlpBranchCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    attn: AttnCache,
    attn_mask: Option<Array2<f64>>,
    ln2: LayerNormCache,
    mlp: MlpBranchCache,
    mlp_mask: Option<Array2<f64>>,
}

/// Activations retained by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    train: bool,
    embed: Option<EmbedCache>,
    blocks: Vec<BlockCache>,
    final_ln: Option<LayerNormCache>,
    head_in: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub embedder: TokenEmbedder,
    blocks: Vec<Block>,
    final_ln: Option<LayerNorm>,
    head: Linear,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::substream(seed, "model/init");
        let mut store = ParamStore::default();
        let d = cfg.d_model;
        let embedder = TokenEmbedder::new(&mut store, &cfg.tokens, d, &mut r)?;
        let resid = 1.0 / (2.0 * cfg.layers as f64).sqrt();
        let hidden = cfg.mlp_ratio * d;
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 1..=cfg.layers {
            let g = Group::Layer(l);
            let name = |s: &str| format!("blocks.{l}.{s}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut store, &name("ln1"), d, g, &mut r),
                qkv: Linear::new(&mut store, &name("attn.qkv"), d, 3 * d, 1.0, g, &mut r),
                wo: Linear::new(&mut store, &name("attn.out"), d, d, resid, g, &mut r),
                ln2: LayerNorm::new(&mut store, &name("ln2"), d, g, &mut r),
                fc1: Linear::new(&mut store, &name("mlp.fc1"), d, hidden, 1.0, g, &mut r),
                fc2: Linear::new(&mut store, &name("mlp.fc2"), hidden, d, resid, g, &mut r),
            });
        }
        let final_ln = (cfg.norm_position == NormPosition::Pre)
            .then(|| LayerNorm::new(&mut store, "final_ln", d, Group::Head, &mut r));
        let head = Linear::new(&mut store, "head", d, cfg.num_classes, 1.0, Group::Head, &mut r);
        Ok(Model {
            cfg: cfg.clone(),
            params: store,
            embedder,
            blocks,
            final_ln,
            head,
        })
    }

    /// Number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn mask_token(&self) -> ndarray::ArrayView1<'_, f64> {
        self.embedder.mask_token(&self.params)
    }

    /// Index of the classifier bias tensor.
    pub fn head_bias(&self) -> usize {
        self.head.b
    }

    /// Logits `(N·T_w) × K` for `grid`, embedding tokens from its inputs.
    pub fn forward(&self, grid: &mut TokenGrid, mode: Mode) -> Result<(Array2<f64>, ForwardCache)> {
        prepare_pe(grid, self.cfg.d_model);
        let (tokens, ecache) = self.embedder.embed(&self.params, grid)?;
        let (logits, mut cache) = self.encode_tokens(tokens.view(), &grid.states, mode)?;
        cache.embed = Some(ecache);
        Ok((logits, cache))
    }

    /// Logits for explicit token contents under the attention pattern of `states`.
    pub fn encode_tokens(
        &self,
        tokens: ArrayView2<'_, f64>,
        states: &[SlotState],
        mode: Mode,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let n = tokens.nrows();
        if tokens.ncols() != self.cfg.d_model || states.len() != n {
            return Err(Error::Shape(format!(
                "tokens {:?} with {} states for width {}",
                tokens.dim(),
                states.len(),
                self.cfg.d_model
            )));
        }
        if !tokens.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure {
                layer: 0,
                site: "tokens",
            });
        }
        let bias = Array2::from_shape_fn((n, n), |(i, j)| if attends(states, i, j) { 0.0 } else { MASK_BIAS });
        let (train, mut stoch) = match mode {
            Mode::Eval => (false, None),
            Mode::Train {
                dropout,
                drop_path,
                seed,
            } => (true, Some((dropout, drop_path, rng::substream(seed, "model/forward")))),
        };
        let mut x = tokens.to_owned();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (l, b) in self.blocks.iter().enumerate() {
            let mut branch_mask = || match stoch.as_mut() {
                Some((p, dp, r)) => branch_multiplier(n, self.cfg.d_model, *p, *dp, r),
                None => None,
            };
            let attn_mask = branch_mask();
            let mlp_mask = branch_mask();
            let (y, c) = self.block_forward(b, x.view(), &bias, attn_mask, mlp_mask);
            if !y.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericFailure {
                    layer: l + 1,
                    site: "block output",
                });
            }
            x = y;
            caches.push(c);
        }
        let (head_in, final_ln) = match self.final_ln {
            Some(ln) => {
                let (y, c) = ln.forward(&self.params, x.view());
                (y, Some(c))
            }
            None => (x, None),
        };
        let logits = self.head.forward(&self.params, head_in.view());
        if !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFailure {
                layer: self.blocks.len() + 1,
                site: "head",
            });
        }
        Ok((
            logits,
            ForwardCache {
                train,
                embed: None,
                blocks: caches,
                final_ln,
                head_in,
            },
        ))
    }

    fn block_forward(
        &self,
        b: &Block,
        x: ArrayView2<'_, f64>,
        bias: &Array2<f64>,
        attn_mask: Option<Array2<f64>>,
        mlp_mask: Option<Array2<f64>>,
    ) -> (Array2<f64>, BlockCache) {
        let p = &self.params;
        let apply = |mut a: Array2<f64>, m: &Option<Array2<f64>>| {
            if let Some(m) = m {
                a *= m;
            }
            a
        };
        match self.cfg.norm_position {
            NormPosition::Pre => {
                let (h1, ln1) = b.ln1.forward(p, x);
                let (a, attn) = self.attention(b, h1, bias);
                let x1 = &x + &apply(a, &attn_mask);
                let (h2, ln2) = b.ln2.forward(p, x1.view());
                let (f, mlp) = self.mlp(b, h2);
                let x2 = x1 + apply(f, &mlp_mask);
                (
                    x2,
                    BlockCache {
                        ln1,
                        attn,
                        attn_mask,
                        ln2,
                        mlp,
                        mlp_mask,
                    },
                )
            }
            NormPosition::Post => {
                let (a, attn) = self.attention(b, x.to_owned(), bias);
                let s1 = &x + &apply(a, &attn_mask);
                let (x1, ln1) = b.ln1.forward(p, s1.view());
                let (f, mlp) = self.mlp(b, x1.clone());
                let s2 = x1 + apply(f, &mlp_mask);
                let (x2, ln2) = b.ln2.forward(p, s2.view());
                (
                    x2,
                    BlockCache {
                        ln1,
                        attn,
                        attn_mask,
                        ln2,
                        mlp,
                        mlp_mask,
                    },
                )
            }
        }
    }

    fn attention(&self, b: &Block, input: Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, AttnCache) {
        let p = &self.params;
        let d = self.cfg.d_model;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let qkv = b.qkv.forward(p, input.view());
        let mut merged = Array2::zeros((input.nrows(), d));
        let mut probs = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let mut sc = q.dot(&k.t());
            Zip::from(&mut sc).and(bias).for_each(|s, &b| *s = *s * scale + b);
            softmax_rows(&mut sc);
            merged.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&sc.dot(&v));
            probs.push(sc);
        }
        let out = b.wo.forward(p, merged.view());
        (
            out,
            AttnCache {
                input,
                qkv,
                probs,
                merged,
            },
        )
    }

    fn attention_backward(&self, b: &Block, c: &AttnCache, dout: ArrayView2<'_, f64>, g: &mut Grads) -> Array2<f64> {
        let p = &self.params;
        let d = self.cfg.d_model;
        let dh = self.cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let dmerged = b.wo.backward(p, c.merged.view(), dout, g);
        let mut dqkv = Array2::zeros(c.qkv.raw_dim());
        for (h, pr) in c.probs.iter().enumerate() {
            let q = c.qkv.slice(s![.., h * dh..(h + 1) * dh]);
            let k = c.qkv.slice(s![.., d + h * dh..d + (h + 1) * dh]);
            let v = c.qkv.slice(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]);
            let dm = dmerged.slice(s![.., h * dh..(h + 1) * dh]);
            let mut dp = dm.dot(&v.t());
            let dv = pr.t().dot(&dm);
            for (mut row, prow) in dp.rows_mut().into_iter().zip(pr.rows()) {
                let dot: f64 = row.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                Zip::from(&mut row).and(&prow).for_each(|x, &pv| *x = pv * (*x - dot) * scale);
            }
            dqkv.slice_mut(s![.., h * dh..(h + 1) * dh]).assign(&dp.dot(&k));
            dqkv.slice_mut(s![.., d + h * dh..d + (h + 1) * dh]).assign(&dp.t().dot(&q));
            dqkv.slice_mut(s![.., 2 * d + h * dh..2 * d + (h + 1) * dh]).assign(&dv);
        }
        b.qkv.backward(p, c.input.view(), dqkv.view(), g)
    }

    fn mlp(&self, b: &Block, input: Array2<f64>) -> (Array2<f64>, MlpBranchCache) {
        let pre = b.fc1.forward(&self.params, input.view());
        let act = pre.mapv(gelu);
        let out = b.fc2.forward(&self.params, act.view());
        (out, MlpBranchCache { input, pre, act })
    }

    fn mlp_backward(&self, b: &Block, c: &MlpBranchCache, dout: ArrayView2<'_, f64>, g: &mut Grads) -> Array2<f64> {
        let dact = b.fc2.backward(&self.params, c.act.view(), dout, g);
        let dpre = dact * c.pre.mapv(gelu_grad);
        b.fc1.backward(&self.params, c.input.view(), dpre.view(), g)
    }

    fn block_backward(&self, b: &Block, c: &BlockCache, dy: Array2<f64>, g: &mut Grads) -> Array2<f64> {
        let p = &self.params;
        let masked = |d: &Array2<f64>, m: &Option<Array2<f64>>| match m {
            Some(m) => d * m,
            None => d.clone(),
        };
        match self.cfg.norm_position {
            NormPosition::Pre => {
                let df = masked(&dy, &c.mlp_mask);
                let dh2 = self.mlp_backward(b, &c.mlp, df.view(), g);
                let dx1 = dy + b.ln2.backward(p, &c.ln2, dh2.view(), g);
                let da = masked(&dx1, &c.attn_mask);
                let dh1 = self.attention_backward(b, &c.attn, da.view(), g);
                dx1 + b.ln1.backward(p, &c.ln1, dh1.view(), g)
            }
            NormPosition::Post => {
                let ds2 = b.ln2.backward(p, &c.ln2, dy.view(), g);
                let df = masked(&ds2, &c.mlp_mask);
                let dx1 = &ds2 + &self.mlp_backward(b, &c.mlp, df.view(), g);
                let ds1 = b.ln1.backward(p, &c.ln1, dx1.view(), g);
                let da = masked(&ds1, &c.attn_mask);
                &ds1 + &self.attention_backward(b, &c.attn, da.view(), g)
            }
        }
    }

    /// Parameter gradients given `dL/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: ArrayView2<'_, f64>) -> Result<Grads> {
        Ok(self.backward_with_tokens(cache, dlogits)?.0)
    }

    /// Parameter gradients and `dL/dtokens`.
    pub fn backward_with_tokens(&self, cache: &ForwardCache, dlogits: ArrayView2<'_, f64>) -> Result<(Grads, Array2<f64>)> {
        if !cache.train {
            return Err(Error::validation("backward requires a train-mode forward pass"));
        }
        if dlogits.dim() != (cache.head_in.nrows(), self.cfg.num_classes) {
            return Err(Error::Shape(format!("dlogits {:?}", dlogits.dim())));
        }
        let p = &self.params;
        let mut g = p.zero_grads();
        let mut dx = self.head.backward(p, cache.head_in.view(), dlogits, &mut g);
        if let (Some(ln), Some(c)) = (self.final_ln, &cache.final_ln) {
            dx = ln.backward(p, c, dx.view(), &mut g);
        }
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            dx = self.block_backward(b, c, dx, &mut g);
        }
        if let Some(ec) = &cache.embed {
            self.embedder.backward(p, ec, dx.view(), &mut g);
        }
        Ok((g, dx))
    }

    /// Attention probabilities of every layer and head from a cached pass.
    pub fn attention_maps<'a>(&self, cache: &'a ForwardCache) -> Vec<&'a [Array2<f64>]> {
        cache.blocks.iter().map(|b| &b.attn.probs[..]).collect()
    }
}

fn branch_multiplier(n: usize, d: usize, dropout: f64, drop_path: f64, r: &mut rng::Rng) -> Option<Array2<f64>> {
    let mut scale = 1.0;
    if drop_path > 0.0 {
        if r.gen::<f64>() < drop_path {
            return Some(Array2::zeros((n, d)));
        }
        scale = 1.0 / (1.0 - drop_path);
    }
    if dropout > 0.0 {
        let keep = 1.0 / (1.0 - dropout);
        return Some(Array2::from_shape_simple_fn((n, d), || {
            if r.gen::<f64>() < dropout {
                0.0
            } else {
                keep * scale
            }
        }));
    }
    (scale != 1.0).then(|| Array2::from_elem((n, d), scale))
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce_term(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn supervised(labels: &[Option<MultiHot>], loss_mask: &[bool], rows: usize) -> Result<Vec<(usize, MultiHot)>> {
    if labels.len() != rows || loss_mask.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} logit rows with {} labels and {} mask entries",
            labels.len(),
            loss_mask.len()
        )));
    }
    let mut out = Vec::new();
    for (i, (&m, l)) in loss_mask.iter().zip(labels).enumerate() {
        if m {
            let l = l.ok_or_else(|| Error::Shape(format!("loss mask set at unlabelled position {i}")))?;
            out.push((i, l));
        }
    }
    if out.is_empty() {
        return Err(Error::Empty("loss mask"));
    }
    Ok(out)
}

/// Mean binary cross-entropy over supervised positions and classes.
pub fn bce_loss(logits: ArrayView2<'_, f64>, labels: &[Option<MultiHot>], loss_mask: &[bool]) -> Result<f64> {
    let rows = supervised(labels, loss_mask, logits.nrows())?;
    let k = logits.ncols();
    let total: f64 = rows
        .iter()
        .map(|&(i, l)| (0..k).map(|c| bce_term(logits[[i, c]], f64::from(u8::from(l.get(c))))).sum::<f64>())
        .sum();
    Ok(total / (rows.len() * k) as f64)
}

/// Loss and `dL/dlogits`.
pub fn bce_loss_grad(
    logits: ArrayView2<'_, f64>,
    labels: &[Option<MultiHot>],
    loss_mask: &[bool],
) -> Result<(f64, Array2<f64>)> {
    let rows = supervised(labels, loss_mask, logits.nrows())?;
    let k = logits.ncols();
    let denom = (rows.len() * k) as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for &(i, l) in &rows {
        for c in 0..k {
            let z = logits[[i, c]];
            let y = f64::from(u8::from(l.get(c)));
            total += bce_term(z, y);
            grad[[i, c]] = (sigmoid(z) - y) / denom;
        }
    }
    Ok((total / denom, grad))
}

/// Per-row sigmoid probabilities.
pub fn probabilities(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    logits.mapv(sigmoid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_closed_forms() {
        let y = [Some(MultiHot(1))];
        let l = bce_loss(ndarray::array![[0.0]].view(), &y, &[true]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let l = bce_loss(ndarray::array![[20.0]].view(), &y, &[true]).unwrap();
        assert!((l - 2.061_153_6e-9).abs() < 1e-15 && l.is_finite());
        assert!(matches!(
            bce_loss(ndarray::array![[0.0]].view(), &y, &[false]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let mut c = ModelConfig::tiny(12);
        c.heads = 5;
        assert!(c.validate().is_err());
        assert!(ModelConfig::standard(60).validate().is_ok());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut m = ndarray::array![[1.0, 2.0, MASK_BIAS], [0.0, 0.0, 0.0]];
        softmax_rows(&mut m);
        assert_eq!(m[[0, 2]], 0.0);
        for r in m.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-15);
        }
    }
}
