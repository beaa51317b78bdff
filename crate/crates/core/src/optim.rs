//! AdamW with decoupled weight decay, learning-rate schedule and layer-wise decay.

use std::f64::consts::PI;

use crate::params::{Grads, Group, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

/// First and second moment estimates plus step counters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of applied updates (drives bias correction).
    pub t: u64,
    /// Updates skipped because of non-finite gradients.
    pub skipped: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let z: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            m: z.clone(),
            v: z,
            t: 0,
            skipped: 0,
        }
    }

    pub fn matches(&self, params: &ParamStore) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .tensors
                .iter()
                .zip(self.m.iter().zip(&self.v))
                .all(|(t, (m, v))| m.len() == t.data.len() && v.len() == t.data.len())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients were not finite; parameters and moments are untouched.
    Skipped,
}

/// One AdamW update: `θ ← θ − lr·mult·(m̂/(√v̂ + ε) + wd·θ)`, decay only on
/// tensors flagged for it.
pub fn optimizer_step(
    params: &mut ParamStore,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    hp: &AdamW,
    multipliers: &[f64],
) -> StepOutcome {
    if !grads.all_finite() {
        state.skipped += 1;
        return StepOutcome::Skipped;
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (i, tensor) in params.tensors.iter_mut().enumerate() {
        let step = lr * multipliers.get(i).copied().unwrap_or(1.0);
        let wd = if tensor.decay { hp.weight_decay } else { 0.0 };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((p, &g), m), v) in tensor.data.iter_mut().zip(&grads.0[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
            *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= step * (mh / (vh.sqrt() + hp.eps) + wd * *p);
        }
    }
    StepOutcome::Applied
}

/// Learning-rate multiplier of encoder layer `layer` (1-based) out of `total`.
pub fn layerwise_lr(layer: usize, total: usize, decay: f64) -> f64 {
    decay.powi(total.saturating_sub(layer) as i32)
}

/// Per-tensor multipliers: embeddings get the deepest decay, the head none.
pub fn lr_multipliers(params: &ParamStore, total_layers: usize, decay: f64) -> Vec<f64> {
    params
        .tensors
        .iter()
        .map(|t| match t.group {
            Group::Embedding => layerwise_lr(0, total_layers, decay),
            Group::Layer(l) => layerwise_lr(l, total_layers, decay),
            Group::Head => 1.0,
        })
        .collect()
}

/// Linear warmup over `warmup` steps, then half-cosine down to zero at `total`.
pub fn warmup_cosine(step: u64, warmup: u64, total: u64, base: f64) -> f64 {
    if step < warmup {
        return base * step as f64 / warmup as f64;
    }
    if step >= total {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    base * 0.5 * (1.0 + (PI * progress).cos())
}

/// Rescale `grads` so their global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng;

    fn scalar(v: f64, decay: bool) -> ParamStore {
        let mut s = ParamStore::default();
        let mut r = rng::substream(0, "t");
        s.add("w", &[1], Init::Zeros, decay, Group::Head, &mut r);
        s.tensors[0].data[0] = v;
        s
    }

    #[test]
    fn first_adam_step_is_lr() {
        let mut p = scalar(0.0, false);
        let mut st = AdamState::new(&p);
        let g = Grads(vec![vec![1.0]]);
        optimizer_step(&mut p, &g, &mut st, 1e-3, &AdamW::default(), &[1.0]);
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.tensors[0].data[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn pure_decay_step() {
        let mut p = scalar(2.0, true);
        let mut st = AdamState::new(&p);
        optimizer_step(&mut p, &Grads(vec![vec![0.0]]), &mut st, 0.1, &AdamW::default(), &[1.0]);
        assert_eq!(p.tensors[0].data[0], 2.0 * (1.0 - 0.1 * 0.05));
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = scalar(1.0, true);
        let mut st = AdamState::new(&p);
        let out = optimizer_step(&mut p, &Grads(vec![vec![f64::NAN]]), &mut st, 0.1, &AdamW::default(), &[1.0]);
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!((st.t, st.skipped, p.tensors[0].data[0]), (0, 1, 1.0));
    }

    #[test]
    fn schedule_landmarks() {
        assert_eq!(warmup_cosine(5, 10, 100, 1e-3), 0.5e-3);
        assert_eq!(warmup_cosine(10, 10, 100, 1e-3), 1e-3);
        assert_eq!(warmup_cosine(100, 10, 100, 1e-3), 0.0);
        assert_eq!(layerwise_lr(14, 16, 0.9), 0.9 * 0.9);
        assert_eq!(layerwise_lr(16, 16, 0.9), 1.0);
    }
}
