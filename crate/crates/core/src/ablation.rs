//! Controlled comparisons of token channels and people context.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::{evaluate, fmt_opt, EvalResult, InferenceConfig};
use crate::rng;
use crate::tokenizer::{TokenConfig, TokenMode};
use crate::tracklet::{Category, Clip};
use crate::train::{pretrain, TrainConfig, TrainSample};
use crate::transformer::ModelConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    pub name: String,
    pub mode: TokenMode,
    pub n_tracks: usize,
}

impl Arm {
    pub fn new(mode: TokenMode, n_tracks: usize) -> Self {
        let name = match mode {
            TokenMode::PoseOnly => format!("pose-n{n_tracks}"),
            m => format!("{}-n{n_tracks}", m.as_str()),
        };
        Arm { name, mode, n_tracks }
    }

    /// Appearance only and appearance + pose over single tracks, then pose
    /// only with one to five people.
    pub fn standard_set() -> Vec<Arm> {
        let mut v = vec![Arm::new(TokenMode::AppearanceOnly, 1), Arm::new(TokenMode::Fused, 1)];
        v.extend((1..=5).map(|n| Arm::new(TokenMode::PoseOnly, n)));
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    /// Template; token widths are set per arm.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Arm whose per-class AP is subtracted in the gain table.
    pub baseline: String,
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.arms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("ablation needs at least one arm and one seed".into()));
        }
        for (i, a) in self.arms.iter().enumerate() {
            if a.n_tracks == 0 {
                return Err(Error::Config(format!("arm {} has no track slots", a.name)));
            }
            if self.arms[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("duplicate arm {}", a.name)));
            }
            self.arm_model(a).validate()?;
        }
        if !self.arms.iter().any(|a| a.name == self.baseline) {
            return Err(Error::Config(format!("baseline arm {} is not among the arms", self.baseline)));
        }
        self.train.validate()?;
        self.inference.validate()
    }

    pub fn arm_model(&self, arm: &Arm) -> ModelConfig {
        let mut tokens = TokenConfig::for_mode(arm.mode, self.model.d_model);
        tokens.proj_hidden = self.model.tokens.proj_hidden;
        self.model.clone().with_tokens(tokens)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmRun {
    pub arm: String,
    pub seed: u64,
    pub final_loss: f64,
    pub eval: EvalResult,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
}

pub fn stat(v: &[f64]) -> Option<Stat> {
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some(Stat { mean, std: var.sqrt() })
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { 0.5 * (s[m - 1] + s[m]) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub baseline: String,
    pub runs: Vec<ArmRun>,
}

impl AblationReport {
    pub fn runs_for<'a>(&'a self, arm: &'a str) -> impl Iterator<Item = &'a ArmRun> + 'a {
        self.runs.iter().filter(move |r| r.arm == arm)
    }

    pub fn run(&self, arm: &str, seed: u64) -> Option<&ArmRun> {
        self.runs.iter().find(|r| r.arm == arm && r.seed == seed)
    }

    /// Overall mAP of `arm` per seed, in seed order.
    pub fn maps(&self, arm: &str) -> Vec<f64> {
        self.runs_for(arm).filter_map(|r| r.eval.map).collect()
    }

    pub fn category(&self, arm: &str, c: Category) -> Vec<f64> {
        self.runs_for(arm).filter_map(|r| r.eval.category_mean(c)).collect()
    }

    /// Mean AP of class `k` over seeds where it is defined.
    pub fn class_mean(&self, arm: &str, k: usize) -> Option<f64> {
        let v: Vec<f64> = self.runs_for(arm).filter_map(|r| r.eval.classes.get(k)?.ap).collect();
        stat(&v).map(|s| s.mean)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seeds {}", join(self.seeds.iter().map(u64::to_string)));
        let _ = writeln!(s, "baseline {}", self.baseline);
        let _ = writeln!(s, "arm mAP PM OM PI (mean ± std over seeds)");
        let cell = |v: Vec<f64>| stat(&v).map_or("undefined".to_string(), |st| format!("{:.4} ± {:.4}", st.mean, st.std));
        for a in &self.arms {
            let _ = writeln!(
                s,
                "{} {} | {} | {} | {}",
                a.name,
                cell(self.maps(&a.name)),
                cell(self.category(&a.name, Category::PM)),
                cell(self.category(&a.name, Category::OM)),
                cell(self.category(&a.name, Category::PI)),
            );
        }
        for r in &self.runs {
            let _ = writeln!(
                s,
                "run {} seed {} loss {:.6} mAP {} PM {} OM {} PI {}",
                r.arm,
                r.seed,
                r.final_loss,
                fmt_opt(r.eval.map),
                fmt_opt(r.eval.pm),
                fmt_opt(r.eval.om),
                fmt_opt(r.eval.pi)
            );
        }
        s
    }

    /// One row per (arm, seed).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("arm,seed,final_loss,map,pm,om,pi\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{:.6},{},{},{},{}",
                r.arm,
                r.seed,
                r.final_loss,
                fmt_opt(r.eval.map),
                fmt_opt(r.eval.pm),
                fmt_opt(r.eval.om),
                fmt_opt(r.eval.pi)
            );
        }
        s
    }

    /// Per-class seed-mean AP of the baseline and `arm − baseline` for every other arm.
    pub fn gains_csv(&self) -> String {
        let others: Vec<&Arm> = self.arms.iter().filter(|a| a.name != self.baseline).collect();
        let mut s = format!("class,category,{}", self.baseline);
        for a in &others {
            let _ = write!(s, ",{}_gain", a.name);
        }
        s.push('\n');
        let Some(first) = self.runs.first() else { return s };
        for (k, c) in first.eval.classes.iter().enumerate() {
            let base = self.class_mean(&self.baseline, k);
            let _ = write!(s, "{},{},{}", c.name, c.category, fmt_opt(base));
            for a in &others {
                let g = match (self.class_mean(&a.name, k), base) {
                    (Some(x), Some(b)) => Some(x - b),
                    _ => None,
                };
                let _ = write!(s, ",{}", fmt_opt(g));
            }
            s.push('\n');
        }
        s
    }
}

fn join(it: impl Iterator<Item = String>) -> String {
    it.collect::<Vec<_>>().join(" ")
}

/// Train and evaluate every arm under every seed on the same data.
///
/// Each run starts from a fresh initialization. Within a seed every arm
/// shares the same random streams (initialization, sample order, supporting
/// tracks), so arms differ only in what they are configured to see.
pub fn ablation_suite(train: &[TrainSample], eval: &[Clip], cfg: &AblationConfig) -> Result<AblationReport> {
    cfg.validate()?;
    if eval.is_empty() {
        return Err(Error::Empty("evaluation dataset"));
    }
    let mut runs = Vec::with_capacity(cfg.arms.len() * cfg.seeds.len());
    for &seed in &cfg.seeds {
        for arm in &cfg.arms {
            let mut tcfg = cfg.train.clone();
            tcfg.seed = rng::derive_seed(seed, "ablation");
            tcfg.n_tracks = arm.n_tracks;
            tcfg.eval_every = 0;
            let icfg = InferenceConfig {
                n_tracks: arm.n_tracks,
                seed: tcfg.seed,
                ..cfg.inference.clone()
            };
            let out = pretrain(&cfg.arm_model(arm), train, &tcfg, None)?;
            let result = evaluate(&out.model, eval, &icfg)?;
            runs.push(ArmRun {
                arm: arm.name.clone(),
                seed,
                final_loss: out.report.final_loss().unwrap_or(f64::NAN),
                eval: result,
            });
        }
    }
    Ok(AblationReport {
        arms: cfg.arms.clone(),
        seeds: cfg.seeds.clone(),
        baseline: cfg.baseline.clone(),
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        let s = stat(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn standard_arms() {
        let names: Vec<String> = Arm::standard_set().into_iter().map(|a| a.name).collect();
        assert_eq!(names[..3], ["appearance-n1", "fused-n1", "pose-n1"]);
        assert_eq!(names.last().unwrap(), "pose-n5");
    }
}
