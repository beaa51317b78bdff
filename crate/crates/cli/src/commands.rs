//! Subcommand implementations. Each takes resolved settings and paths and
//! returns the manifest it wrote.

use std::path::{Path, PathBuf};

use lart::ablation::ablation_suite;
use lart::checkpoint::{decode_checkpoint, encode_checkpoint, Checkpoint};
use lart::eval::{evaluate, InferenceConfig};
use lart::rng::derive_seed;
use lart::scene::{broadcast_ground_truth, teacher_pseudo_label};
use lart::train::{self, lr_at, Stage, TrainConfig, TrainOutcome, TrainSample};
use rayon::prelude::*;

use crate::config::Settings;
use crate::dataset::{self, Dataset};
use crate::error::{CliError, Result};
use crate::keys;
use crate::manifest::{hex, sha256, RunManifest, MANIFEST_FILE};
use crate::plots;

pub fn gen(s: &Settings, out: &Path) -> Result<String> {
    let s = &s.fresh();
    let spec = keys::dataset(s)?;
    s.finish()?;
    dataset::generate(&spec, out)
}

fn pseudo_labelled(data: &Dataset, seed: u64) -> Result<Vec<TrainSample>> {
    let flip = data.teacher_flip_p()?;
    Ok(data
        .clips
        .par_iter()
        .map(|c| TrainSample {
            clip: c.clone(),
            supervision: teacher_pseudo_label(c, flip, derive_seed(seed, &format!("teacher/{}", c.clip_id))),
        })
        .collect())
}

fn ground_truth(data: &Dataset) -> Vec<TrainSample> {
    data.clips
        .par_iter()
        .map(|c| TrainSample {
            clip: c.clone(),
            supervision: broadcast_ground_truth(c),
        })
        .collect()
}

fn read_checkpoint(path: Option<&Path>, command: &str) -> Result<(Checkpoint, String)> {
    let path = path.ok_or_else(|| {
        CliError::Config(format!(
            "{command} needs a trained model: pass --checkpoint <run dir>/checkpoint.ckpt (written by `lart pretrain` or `lart finetune`)"
        ))
    })?;
    if !path.exists() {
        return Err(CliError::MissingInputs(vec![path.to_path_buf()]));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok((decode_checkpoint(&bytes)?, hex(&sha256(&bytes))))
}

fn load_eval(m: &mut RunManifest, eval_data: Option<&Path>) -> Result<Option<Dataset>> {
    eval_data
        .map(|p| {
            let d = dataset::load(p)?;
            m.input("eval_data", p, d.hash.clone());
            Ok(d)
        })
        .transpose()
}

fn write_training(mut m: RunManifest, out: TrainOutcome, data: &Dataset, dir: &Path) -> Result<RunManifest> {
    dataset::create_dir(dir)?;
    let run_id = m.run_id();
    let mut ck = Checkpoint::from_model(&out.model, out.report.steps, Some(&out.optimizer));
    ck.meta.insert("run_id".into(), run_id.clone());
    ck.meta.insert("stage".into(), out.report.stage.as_str().into());
    ck.meta.insert("train_config_hash".into(), out.report.config_hash.clone());
    ck.meta.insert("dataset_hash".into(), data.hash.clone());
    m.artifact(dir, "checkpoint.ckpt", &encode_checkpoint(&ck))?;
    let text = format!("run_id {run_id}\n{}", out.report.to_text());
    m.artifact(dir, "report.txt", text.as_bytes())?;
    m.artifact(dir, "report.csv", out.report.to_csv().as_bytes())?;
    m.finish(dir)
}

pub fn pretrain(s: &Settings, data: &Path, eval_data: Option<&Path>, out: &Path) -> Result<RunManifest> {
    let s = &s.fresh();
    let ds = dataset::load(data)?;
    let model = keys::model(s, ds.num_classes(), None)?;
    let tcfg = keys::train(s, Stage::Pretrain)?;
    let icfg = keys::inference(s, tcfg.window)?;
    s.finish()?;
    let mut m = RunManifest::start("pretrain", tcfg.seed, s.resolved());
    m.input("data", data, ds.hash.clone());
    let ev = load_eval(&mut m, eval_data)?;
    let samples = pseudo_labelled(&ds, tcfg.seed)?;
    let eval = ev.as_ref().map(|d| (&d.clips[..], &icfg));
    let outcome = train::pretrain(&model, &samples, &tcfg, eval)?;
    write_training(m, outcome, &ds, out)
}

pub fn finetune(
    s: &Settings,
    data: &Path,
    checkpoint: Option<&Path>,
    eval_data: Option<&Path>,
    out: &Path,
) -> Result<RunManifest> {
    let s = &s.fresh();
    let (ck, ck_hash) = read_checkpoint(checkpoint, "finetune")?;
    let ds = dataset::load(data)?;
    let model_cfg = keys::model(s, ds.num_classes(), Some(&ck.config))?;
    let tcfg = keys::train(s, Stage::Finetune)?;
    let icfg = keys::inference(s, tcfg.window)?;
    s.finish()?;
    let model = ck.to_model(Some(&model_cfg))?;
    let mut m = RunManifest::start("finetune", tcfg.seed, s.resolved());
    m.input("data", data, ds.hash.clone());
    m.input("checkpoint", checkpoint.expect("checked above"), ck_hash);
    let ev = load_eval(&mut m, eval_data)?;
    let samples = ground_truth(&ds);
    let eval = ev.as_ref().map(|d| (&d.clips[..], &icfg));
    let outcome = train::finetune(model, &samples, &tcfg, eval)?;
    write_training(m, outcome, &ds, out)
}

pub fn eval(s: &Settings, data: &Path, checkpoint: Option<&Path>, out: &Path) -> Result<RunManifest> {
    let s = &s.fresh();
    let (ck, ck_hash) = read_checkpoint(checkpoint, "eval")?;
    let ds = dataset::load(data)?;
    let model_cfg = keys::model(s, ds.num_classes(), Some(&ck.config))?;
    let window = s.usize("window", TrainConfig::pretrain().window)?;
    let icfg: InferenceConfig = keys::inference(s, window)?;
    s.finish()?;
    let model = ck.to_model(Some(&model_cfg))?;
    let mut m = RunManifest::start("eval", icfg.seed, s.resolved());
    m.input("data", data, ds.hash.clone());
    m.input("checkpoint", checkpoint.expect("checked above"), ck_hash);
    let result = evaluate(&model, &ds.clips, &icfg)?;
    dataset::create_dir(out)?;
    let text = format!("run_id {}\n{}", m.run_id(), result.summary());
    m.artifact(out, "eval.txt", text.as_bytes())?;
    m.artifact(out, "eval.csv", result.to_csv().as_bytes())?;
    m.artifact(out, "curves.csv", result.curves_csv().as_bytes())?;
    m.finish(out)
}

pub fn ablate(s: &Settings, data: &Path, eval_data: &Path, out: &Path) -> Result<RunManifest> {
    let s = &s.fresh();
    let train_ds = dataset::load(data)?;
    let eval_ds = dataset::load(eval_data)?;
    let cfg = keys::ablation(s, train_ds.num_classes())?;
    s.finish()?;
    let seed = cfg.seeds[0];
    let mut m = RunManifest::start("ablate", seed, s.resolved());
    m.input("data", data, train_ds.hash.clone());
    m.input("eval_data", eval_data, eval_ds.hash.clone());
    let report = ablation_suite(&ground_truth(&train_ds), &eval_ds.clips, &cfg)?;
    dataset::create_dir(out)?;
    let text = format!("run_id {}\n{}", m.run_id(), report.to_text());
    m.artifact(out, "ablation.txt", text.as_bytes())?;
    m.artifact(out, "ablation.csv", report.to_csv().as_bytes())?;
    m.artifact(out, "gains.csv", report.gains_csv().as_bytes())?;
    m.finish(out)
}

/// `(epoch, learning rate)` at every step of the schedule, sampled `per_epoch` times per epoch.
pub fn schedule_points(cfg: &TrainConfig, per_epoch: u64) -> Vec<(f64, f64)> {
    let total = cfg.total_epochs as u64 * per_epoch;
    (0..=total)
        .map(|step| (step as f64 / per_epoch as f64, lr_at(step, per_epoch, cfg)))
        .collect()
}

/// Files `report` knows how to plot, by name.
pub const PLOTTABLE: [&str; 4] = ["report.csv", "curves.csv", "gains.csv", MANIFEST_FILE];

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn csv_rows(text: &str) -> impl Iterator<Item = Vec<&str>> {
    text.lines().skip(1).filter(|l| !l.is_empty()).map(|l| l.split(',').collect())
}

fn num(v: &str, path: &Path) -> Result<Option<f64>> {
    if v == "undefined" {
        return Ok(None);
    }
    v.parse()
        .map(Some)
        .map_err(|_| CliError::Core(lart::Error::Validation(format!("{}: bad number {v:?}", path.display()))))
}

fn loss_plot(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let mut pts = Vec::new();
    for r in csv_rows(&text) {
        if let (Some(e), Some(l)) = (num(r[0], path)?, num(r.get(1).copied().unwrap_or("undefined"), path)?) {
            pts.push((e, l));
        }
    }
    plots::line_chart("training loss per epoch", &[("loss".to_string(), pts)])
}

fn pr_plot(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in csv_rows(&text) {
        let (Some(rec), Some(prec)) = (num(r[1], path)?, num(r[2], path)?) else { continue };
        match series.last_mut() {
            Some((name, pts)) if name == r[0] => pts.push((rec, prec)),
            _ => series.push((r[0].to_string(), vec![(0.0, prec), (rec, prec)])),
        }
    }
    plots::line_chart("precision / recall per class", &series)
}

fn gains_plot(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
    let arms: Vec<String> = header.iter().skip(3).map(|h| h.to_string()).collect();
    let mut classes = Vec::new();
    let mut values = vec![Vec::new(); arms.len()];
    for r in csv_rows(&text) {
        classes.push(r[0].to_string());
        for (j, v) in values.iter_mut().enumerate() {
            v.push(num(r.get(3 + j).copied().unwrap_or("undefined"), path)?);
        }
    }
    let series: Vec<(String, Vec<Option<f64>>)> = arms.into_iter().zip(values).collect();
    plots::bar_chart("per-class AP gain over baseline", &classes, &series)
}

fn schedule_plot(cfg: &TrainConfig) -> Result<String> {
    plots::line_chart(
        &format!("learning rate ({} stage)", cfg.stage.as_str()),
        &[("lr".to_string(), schedule_points(cfg, 20))],
    )
}

/// Render every recognised input file to SVG. Directories contribute the
/// plottable files they contain.
pub fn report(s: &Settings, inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    let s = &s.fresh();
    let missing: Vec<PathBuf> = inputs.iter().filter(|p| !p.exists()).cloned().collect();
    if !missing.is_empty() {
        return Err(CliError::MissingInputs(missing));
    }
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let found: Vec<PathBuf> = PLOTTABLE.iter().map(|f| p.join(f)).filter(|f| f.exists()).collect();
            if found.is_empty() {
                return Err(CliError::MissingInputs(PLOTTABLE.iter().map(|f| p.join(f)).collect()));
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let fallback_schedule = keys::train(s, Stage::Pretrain)?;
    s.finish()?;
    dataset::create_dir(out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let mut emit = |kind: &str, svg: String| -> Result<()> {
        let mut name = format!("{kind}.svg");
        let mut n = 1;
        while written.iter().any(|w| w.file_name().is_some_and(|f| f == name.as_str())) {
            n += 1;
            name = format!("{kind}-{n}.svg");
        }
        let path = out.join(&name);
        std::fs::write(&path, svg).map_err(|e| CliError::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    let mut scheduled = false;
    for f in &files {
        match f.file_name().and_then(|n| n.to_str()).unwrap_or_default() {
            "report.csv" => emit("loss", loss_plot(f)?)?,
            "curves.csv" => emit("pr", pr_plot(f)?)?,
            "gains.csv" => emit("gains", gains_plot(f)?)?,
            MANIFEST_FILE => {
                let m = RunManifest::parse(&read_text(f)?)?;
                let stage = match m.command.as_str() {
                    "pretrain" => Stage::Pretrain,
                    "finetune" => Stage::Finetune,
                    _ => continue,
                };
                let ms = Settings::parse(&read_text(f)?)?;
                emit("lr", schedule_plot(&keys::train(&ms, stage)?)?)?;
                scheduled = true;
            }
            other => {
                return Err(CliError::Config(format!(
                    "cannot plot {other:?}; expected one of {}",
                    PLOTTABLE.join(", ")
                )))
            }
        }
    }
    if !scheduled {
        emit("lr", schedule_plot(&fallback_schedule)?)?;
    }
    Ok(written)
}

/// Re-run the command recorded in a run manifest, writing into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<RunManifest> {
    let text = read_text(manifest)?;
    let m = RunManifest::parse(&text)?;
    let s = Settings::parse(&text)?;
    let input = |role: &str| m.inputs.get(role).map(PathBuf::as_path);
    let need = |role: &str| {
        input(role).ok_or_else(|| CliError::Config(format!("manifest has no `{role}` input")))
    };
    match m.command.as_str() {
        "pretrain" => pretrain(&s, need("data")?, input("eval_data"), out),
        "finetune" => finetune(&s, need("data")?, input("checkpoint"), input("eval_data"), out),
        "eval" => eval(&s, need("data")?, input("checkpoint"), out),
        "ablate" => ablate(&s, need("data")?, need("eval_data")?, out),
        other => Err(CliError::Config(format!("cannot replay command {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_end_of_warmup() {
        let cfg = TrainConfig::pretrain();
        let pts = schedule_points(&cfg, 20);
        let (epoch, lr) = pts.iter().copied().fold((0.0, f64::MIN), |a, p| if p.1 > a.1 { p } else { a });
        assert_eq!((epoch, lr), (5.0, 1e-3));
        assert_eq!(pts.last().unwrap(), &(30.0, 0.0));
        assert_eq!(pts[50], (2.5, 0.5e-3));
    }
}
