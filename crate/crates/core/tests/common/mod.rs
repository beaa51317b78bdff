#![allow(dead_code)]

use lart::scene::{generate_sample, AppearanceProviderSpec, GeneratorConfig};
use lart::tokenizer::{apply_mask_tokens, assemble_layout, GridConfig, TokenGrid};
use lart::tracklet::Clip;
use lart::transformer::{bce_loss, bce_loss_grad, Mode, Model};
use lart::{rng, scene};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn clip(seed: u64, n_people: usize, num_frames: u32, occlusion: f64, appearance: bool) -> Clip {
    let cfg = GeneratorConfig {
        n_people,
        num_frames,
        occlusion_rate: occlusion,
        seed,
        ..GeneratorConfig::default()
    };
    let spec = AppearanceProviderSpec::new(seed, 4, 16).unwrap();
    generate_sample(&cfg, appearance.then_some(&spec)).unwrap()
}

/// Grid over every track of `c` with labels and mask tokens applied.
pub fn training_grid(model: &Model, c: &Clip, window: usize, mask_ratio: f64, seed: u64) -> TokenGrid {
    let ids = c.track_ids();
    let sup = scene::broadcast_ground_truth(c);
    let grid = GridConfig {
        n_tracks: ids.len(),
        window,
    };
    let mut g = assemble_layout(c, ids[0], &ids[1..], grid, 0, Some(&sup), &model.cfg.tokens).unwrap();
    let mut r = rng::substream(seed, "mask");
    apply_mask_tokens(&mut g, mask_ratio, model.mask_token(), &mut r).unwrap();
    g
}

pub fn loss(model: &Model, g: &mut TokenGrid, mode: Mode) -> f64 {
    let (z, _) = model.forward(g, mode).unwrap();
    bce_loss(z.view(), &g.labels, &g.loss_mask()).unwrap()
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub tensors: usize,
    pub probes: usize,
    pub failures: Vec<String>,
    pub worst: f64,
}

fn within(a: f64, n: f64) -> (bool, f64) {
    let tol = (1e-4 * a.abs().max(n.abs())).max(1e-6);
    let err = (a - n).abs();
    (err <= tol, err / tol)
}

/// Compare analytic gradients with central differences.
///
/// Every tensor gets `per_tensor` random entries, its largest-gradient entry
/// and one random direction covering all of its entries.
pub fn grad_check(model: &mut Model, g: &mut TokenGrid, mode: Mode, per_tensor: usize, seed: u64) -> GradCheck {
    let h = 1e-5;
    let (z, cache) = model.forward(g, mode).unwrap();
    let (_, dz) = bce_loss_grad(z.view(), &g.labels, &g.loss_mask()).unwrap();
    let grads = model.backward(&cache, dz.view()).unwrap();
    let mut r = rng::substream(seed, "gradcheck");
    let mut out = GradCheck::default();
    for ti in 0..model.params.tensors.len() {
        out.tensors += 1;
        let n = model.params.tensors[ti].data.len();
        let gt = &grads.0[ti];
        let argmax = (0..n).max_by(|&a, &b| gt[a].abs().total_cmp(&gt[b].abs())).unwrap();
        let mut picks: Vec<usize> = (0..per_tensor.min(n)).map(|_| r.gen_range(0..n)).collect();
        picks.push(argmax);
        for j in picks {
            let orig = model.params.tensors[ti].data[j];
            model.params.tensors[ti].data[j] = orig + h;
            let lp = loss(model, g, mode);
            model.params.tensors[ti].data[j] = orig - h;
            let lm = loss(model, g, mode);
            model.params.tensors[ti].data[j] = orig;
            let num = (lp - lm) / (2.0 * h);
            let (ok, ratio) = within(gt[j], num);
            out.probes += 1;
            out.worst = out.worst.max(ratio);
            if !ok {
                let name = &model.params.tensors[ti].name;
                out.failures.push(format!("{name}[{j}]: analytic {:.6e} numeric {num:.6e}", gt[j]));
            }
        }
        let dir: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let orig = model.params.tensors[ti].data.clone();
        let shifted = |s: f64| orig.iter().zip(&dir).map(|(o, d)| o + s * d / norm).collect::<Vec<_>>();
        model.params.tensors[ti].data = shifted(h);
        let lp = loss(model, g, mode);
        model.params.tensors[ti].data = shifted(-h);
        let lm = loss(model, g, mode);
        model.params.tensors[ti].data = orig;
        let num = (lp - lm) / (2.0 * h);
        let ana: f64 = gt.iter().zip(&dir).map(|(a, d)| a * d / norm).sum();
        let (ok, ratio) = within(ana, num);
        out.probes += 1;
        out.worst = out.worst.max(ratio);
        if !ok {
            let name = &model.params.tensors[ti].name;
            out.failures.push(format!("{name} direction: analytic {ana:.6e} numeric {num:.6e}"));
        }
    }
    out
}
