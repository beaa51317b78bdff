use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lart_cli::commands;
use lart_cli::config::Settings;
use lart_cli::manifest::RunManifest;

const TINY: &str = "num_clips = 4\nnum_frames = 16\nprofile = \"tiny\"\nd_model = 16\nlayers = 1\nheads = 2\n\
                    total_epochs = 1\nwarmup_epochs = 0\nbatch_size = 4\nwindow = 16\n";

fn lart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lart")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::parse(&fs::read_to_string(dir.join("manifest.toml")).unwrap()).unwrap()
}

#[test]
fn gen_is_byte_identical_across_runs() {
    let t = tempfile::tempdir().unwrap();
    let (a, b) = (t.path().join("a"), t.path().join("b"));
    for d in [&a, &b] {
        let o = lart(&["gen", "--set", "num_clips=5", "--set", "seed=9", "--out", p(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(files(&a), files(&b));
}

#[test]
fn hundred_clip_config_writes_hundred_files_and_one_manifest() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("gen.toml");
    fs::write(&cfg, "num_clips = 100\nnum_frames = 16\n").unwrap();
    let out = t.path().join("data");
    let o = lart(&["gen", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let names: Vec<String> = files(&out).into_iter().map(|f| f.0).collect();
    assert_eq!(names.iter().filter(|n| n.ends_with(".clip")).count(), 100);
    assert_eq!(names.iter().filter(|n| n.starts_with("manifest")).count(), 1);
    assert_eq!(names.len(), 101);
}

#[test]
fn appearance_rate_above_fps_is_rejected_by_name() {
    let t = tempfile::tempdir().unwrap();
    let o = lart(&["gen", "--set", "fps=8", "--set", "appearance_hz=9", "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("appearance_hz"), "{}", stderr(&o));
    assert!(stderr(&o).contains("fps"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_named() {
    let t = tempfile::tempdir().unwrap();
    let o = lart(&["gen", "--set", "n_peple=3", "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`n_peple`"), "{}", stderr(&o));
}

#[test]
fn finetune_without_checkpoint_explains_what_is_missing() {
    let t = tempfile::tempdir().unwrap();
    let data = t.path().join("data");
    assert!(lart(&["gen", "--set", "num_clips=1", "--out", p(&data)]).status.success());
    let o = lart(&["finetune", "--data", p(&data), "--out", p(&t.path().join("ft"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--checkpoint"), "{}", stderr(&o));
    let o = lart(&[
        "finetune",
        "--data",
        p(&data),
        "--checkpoint",
        p(&t.path().join("nope.ckpt")),
        "--out",
        p(&t.path().join("ft")),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let t = tempfile::tempdir().unwrap();
    let o = lart(&["pretrain", "--data", p(&t.path().join("none")), "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("manifest.txt"), "{}", stderr(&o));
}

#[test]
fn stage_defaults_follow_the_recipe() {
    let t = tempfile::tempdir().unwrap();
    let s = Settings::parse("num_clips = 1\nnum_frames = 16\nprofile = \"tiny\"\nd_model = 16\nlayers = 1\nheads = 1\n").unwrap();
    let data = t.path().join("data");
    commands::gen(&s, &data).unwrap();
    commands::pretrain(&s, &data, None, &t.path().join("pre")).unwrap();
    let ck = t.path().join("pre/checkpoint.ckpt");
    commands::finetune(&s, &data, Some(&ck), None, &t.path().join("ft")).unwrap();
    let (pre, ft) = (manifest(&t.path().join("pre")), manifest(&t.path().join("ft")));
    let get = |m: &RunManifest, k: &str| m.config[k].to_string();
    assert_eq!(get(&pre, "mask_ratio"), "0.4");
    assert_eq!(get(&pre, "layer_wise_decay"), "\"none\"");
    assert_eq!(get(&ft, "mask_ratio"), "0.0");
    assert_eq!(get(&ft, "layer_wise_decay"), "0.9");
    assert_eq!(get(&ft, "drop_path"), "0.1");
    for m in [&pre, &ft] {
        assert_eq!(get(m, "base_lr"), "0.001");
        assert_eq!(get(m, "beta1"), "0.9");
        assert_eq!(get(m, "beta2"), "0.95");
        assert_eq!(get(m, "weight_decay"), "0.05");
        assert_eq!(get(m, "warmup_epochs"), "5");
        assert_eq!(get(m, "total_epochs"), "30");
        assert_eq!(get(m, "batch_size"), "64");
    }
    let report = fs::read_to_string(t.path().join("ft/report.txt")).unwrap();
    assert!(report.starts_with(&format!("run_id {}\n", ft.run_id())));
    assert_eq!(ft.input_hashes["checkpoint"], pre.artifacts["checkpoint.ckpt"]);
}

fn trained(root: &Path) -> (Settings, std::path::PathBuf) {
    let s = Settings::parse(TINY).unwrap();
    let data = root.join("data");
    commands::gen(&s, &data).unwrap();
    commands::pretrain(&s, &data, None, &root.join("pre")).unwrap();
    (s, data)
}

#[test]
fn eval_defaults_and_center_frame_pooling() {
    let t = tempfile::tempdir().unwrap();
    let (_, data) = trained(t.path());
    let ck = t.path().join("pre/checkpoint.ckpt");
    let run = |name: &str, extra: &[&str]| {
        let out = t.path().join(name);
        let mut args = vec!["eval", "--data", p(&data), "--checkpoint", p(&ck), "--out", p(&out)];
        args.extend_from_slice(extra);
        let o = lart(&args);
        assert!(o.status.success(), "{}", stderr(&o));
        out
    };
    let d = run("default", &[]);
    let m = manifest(&d);
    assert_eq!(m.config["eval_n_tracks"].as_integer(), Some(5));
    assert_eq!(m.config["pooling_width"].as_integer(), Some(12));
    for name in ["eval.txt", "eval.csv", "curves.csv"] {
        assert!(m.artifacts.contains_key(name));
    }
    let (a, b) = (run("p1a", &["--pooling", "1"]), run("p1b", &["--pooling", "1", "--n", "5"]));
    assert_eq!(manifest(&a).config["pooling_width"].as_integer(), Some(1));
    for f in ["eval.txt", "eval.csv", "curves.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_ne!(fs::read(a.join("eval.csv")).unwrap(), fs::read(d.join("eval.csv")).unwrap());
}

#[test]
fn checkpoint_config_mismatch_is_rejected() {
    let t = tempfile::tempdir().unwrap();
    let (_, data) = trained(t.path());
    let ck = t.path().join("pre/checkpoint.ckpt");
    let o = lart(&["eval", "--data", p(&data), "--checkpoint", p(&ck), "--set", "layers=2", "--out", p(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checkpoint mismatch"), "{}", stderr(&o));
}

#[test]
fn replay_reproduces_a_run() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    let pre = t.path().join("pre");
    let again = t.path().join("again");
    commands::replay(&pre.join("manifest.toml"), &again).unwrap();
    for f in ["checkpoint.ckpt", "report.txt", "report.csv"] {
        assert_eq!(fs::read(pre.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let data2 = t.path().join("data2");
    let o = lart(&["gen", "--config", p(&t.path().join("data/manifest.txt")), "--out", p(&data2)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(files(&t.path().join("data")), files(&data2));
}

#[test]
fn ablation_outputs_arms_and_per_class_gains() {
    let t = tempfile::tempdir().unwrap();
    let mut s = Settings::parse(TINY).unwrap();
    s.set("seeds", toml::Value::Array(vec![toml::Value::Integer(0)]));
    s.set("arms", "pose-n1,pose-n5");
    s.set("eval_window", 16);
    let data = t.path().join("data");
    commands::gen(&s, &data).unwrap();
    let out = t.path().join("abl");
    commands::ablate(&s, &data, &data, &out).unwrap();
    let text = fs::read_to_string(out.join("ablation.txt")).unwrap();
    assert!(text.contains("\npose-n1 ") && text.contains("\npose-n5 "), "{text}");
    let gains = fs::read_to_string(out.join("gains.csv")).unwrap();
    let rows: Vec<Vec<&str>> = gains.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["class", "category", "pose-n1", "pose-n5_gain"]);
    assert_eq!(rows.len() - 1, 12);
    let runs = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    for r in &rows[1..] {
        if let (Ok(base), Ok(gain)) = (r[2].parse::<f64>(), r[3].parse::<f64>()) {
            assert!((-1.0..=1.0).contains(&(base + gain)), "{r:?}");
        }
    }
}

#[test]
fn report_plots_are_deterministic_and_missing_inputs_are_listed() {
    let t = tempfile::tempdir().unwrap();
    trained(t.path());
    let pre = t.path().join("pre");
    let (a, b) = (t.path().join("ra"), t.path().join("rb"));
    for out in [&a, &b] {
        let o = lart(&["report", p(&pre), "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let fa = files(&a);
    assert_eq!(fa, files(&b));
    let names: Vec<&str> = fa.iter().map(|f| f.0.as_str()).collect();
    assert_eq!(names, ["loss.svg", "lr.svg"]);
    let o = lart(&["report", p(&t.path().join("x.csv")), p(&t.path().join("y")), "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("x.csv") && stderr(&o).contains(&format!("{}", t.path().join("y").display())));
}

#[test]
fn schedule_plot_peaks_at_the_end_of_warmup() {
    let s = Settings::default();
    let cfg = lart_cli::keys::train(&s, lart::train::Stage::Pretrain).unwrap();
    let pts = commands::schedule_points(&cfg, 4);
    let peak = pts.iter().copied().fold((0.0, f64::MIN), |a, q| if q.1 > a.1 { q } else { a });
    assert_eq!(peak, (5.0, 1e-3));
}
