use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use svseg::volume::{write_volume, Dims, LabelVolume, Spacing};
use tempfile::TempDir;

fn svseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = svseg(args);
    assert!(
        out.status.success(),
        "svseg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 64³ phantom with 30 cells, seed 7, written to `<dir>/ph`.
fn phantom(dir: &Path) -> PathBuf {
    let ph = dir.join("ph");
    ok(&[
        "synth",
        "--output-dir",
        s(&ph),
        "--seed",
        "7",
        "--dims",
        "64",
        "--cells",
        "30",
    ]);
    ph
}

fn segment(ph: &Path, out: &Path, classifier: &str, extra: &[&str]) {
    let mut args = vec![
        "segment",
        "--input",
        s(&ph.join("image.mvol.json")).to_owned().leak(),
        "--output-dir",
        s(out).to_owned().leak(),
        "--v-min-um3",
        "2500",
        "--v-max-um3",
        "30000",
        "--classifier",
        classifier,
        "--truth",
        s(&ph.join("truth.mvol.json")).to_owned().leak(),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

/// `(algorithm, f_score)` per line of an `eval.json`.
fn scores(dir: &Path) -> Vec<(String, f64)> {
    fs::read_to_string(dir.join("eval.json"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (
                v["algorithm"].as_str().unwrap().to_string(),
                v["f_score"].as_f64().unwrap(),
            )
        })
        .collect()
}

fn label_count(path: &Path) -> usize {
    svseg::volume::read_volume(path)
        .unwrap()
        .into_labels()
        .unwrap()
        .count_labels()
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = svseg(&[
        "segment",
        "--input",
        s(&dir.path().join("absent.mvol.json")),
        "--output-dir",
        s(&dir.path().join("out")),
        "--v-min-um3",
        "10",
        "--v-max-um3",
        "100",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage io"));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no-such-key = 1\n").unwrap();
    let out = svseg(&["eval", "--config", s(&cfg), "--pred", "a", "--truth", "b"]);
    assert_eq!(out.status.code(), Some(2));
    let out = svseg(&["segment", "--input", "x", "--output-dir", "y", "--v-max-um3", "100"]);
    assert_eq!(out.status.code(), Some(2));
    let out = svseg(&[
        "segment",
        "--input",
        "x",
        "--output-dir",
        "y",
        "--v-min-um3",
        "10",
        "--v-max-um3",
        "100",
        "--classifier",
        "cnn",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn phantom_segmentation_with_and_without_classifier() {
    let dir = TempDir::new().unwrap();
    let ph = phantom(dir.path());
    let none = dir.path().join("none");
    let heur = dir.path().join("heur");
    segment(&ph, &none, "none", &[]);
    segment(&ph, &heur, "heuristic", &[]);

    let n = label_count(&none.join("labels.mvol.json"));
    assert!((24..=36).contains(&n), "{n} segments");
    let f_none = scores(&none);
    assert_eq!(f_none.len(), 2);
    assert_eq!(f_none[1].0, "Fusion");
    assert!(f_none[1].1 >= 0.85, "fusion F = {}", f_none[1].1);

    let f_heur = scores(&heur);
    assert_eq!(f_heur[2].0, "Fusion+Heuristic");
    assert!(f_heur[2].1 >= f_none[1].1);
    for f in ["forest.txt", "report.txt", "eval.txt"] {
        assert!(heur.join(f).exists(), "{f}");
    }
}

#[test]
fn runs_are_bit_identical_and_resumable() {
    let dir = TempDir::new().unwrap();
    let ph = phantom(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    segment(&ph, &a, "heuristic", &["--dump-stages"]);
    segment(&ph, &b, "heuristic", &["--dump-stages", "--threads", "1"]);
    for f in fs::read_dir(&a).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }

    let r = dir.path().join("resumed");
    segment(
        &ph,
        &r,
        "heuristic",
        &[
            "--resume-preprocessed",
            s(&a.join("preprocessed.mvol.json")).to_owned().leak(),
            "--resume-supervoxels",
            s(&a.join("supervoxels.mvol.json")).to_owned().leak(),
            "--resume-forest",
            s(&a.join("forest.txt")).to_owned().leak(),
        ],
    );
    for f in ["labels.raw", "report.txt", "forest.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(r.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = TempDir::new().unwrap();
    let ph = phantom(dir.path());
    let out = dir.path().join("cfg");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        format!(
            "input = {}\noutput-dir = {}\nv_min_um3 = 1\nv-max-um3 = 30000\nclassifier = none\n",
            s(&ph.join("image.mvol.json")),
            s(&out)
        ),
    )
    .unwrap();
    ok(&["segment", "--config", s(&cfg), "--v-min-um3", "2500"]);
    let direct = dir.path().join("direct");
    segment(&ph, &direct, "none", &[]);
    assert_eq!(
        fs::read(out.join("labels.raw")).unwrap(),
        fs::read(direct.join("labels.raw")).unwrap()
    );
}

#[test]
fn training_writes_a_model_and_a_reproducible_trace() {
    let dir = TempDir::new().unwrap();
    let ph = dir.path().join("ph");
    ok(&["synth", "--output-dir", s(&ph), "--seed", "1", "--patches", "20,20,20"]);
    let data = ph.join("patches");
    let train = |model: &Path| {
        ok(&[
            "train",
            "--dataset",
            s(&data),
            "--output",
            s(model),
            "--conv1",
            "2",
            "--conv2",
            "2",
            "--fc",
            "8",
            "--epochs",
            "2",
            "--seed",
            "1",
        ]);
        fs::read_to_string(format!("{}.loss.txt", s(model))).unwrap()
    };
    let m1 = dir.path().join("m1.cnn");
    let m2 = dir.path().join("m2.cnn");
    let t1 = train(&m1);
    let t2 = train(&m2);
    assert_eq!(t1, t2);
    assert_eq!(fs::read(&m1).unwrap(), fs::read(&m2).unwrap());
    assert_eq!(t1.lines().count(), 4);
    for line in t1.lines() {
        let v: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(v.is_finite(), "{line}");
    }

    let seg = dir.path().join("seg");
    ok(&[
        "segment",
        "--input",
        s(&ph.join("image.mvol.json")),
        "--output-dir",
        s(&seg),
        "--v-min-um3",
        "2500",
        "--v-max-um3",
        "30000",
        "--classifier",
        "cnn",
        "--model",
        s(&m1),
    ]);
    assert!(seg.join("labels.mvol.json").exists());

    let index = data.join("labels.txt");
    let text = fs::read_to_string(&index).unwrap();
    let kept: String = text
        .lines()
        .filter(|l| !l.ends_with("over"))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&index, kept).unwrap();
    let out = svseg(&[
        "train",
        "--dataset",
        s(&data),
        "--output",
        s(&dir.path().join("m3.cnn")),
        "--epochs",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data error"));
}

fn write_labels(path: &Path, labels: Vec<u32>) {
    let dims = Dims::new(labels.len(), 1, 1);
    let v = LabelVolume::new(dims, Spacing::ISOTROPIC, labels).unwrap();
    write_volume(&v.into(), path).unwrap();
}

#[test]
fn eval_from_files() {
    let dir = TempDir::new().unwrap();
    let p = |n: &str| dir.path().join(n);
    let run = |pred: &Path, truth: &Path| -> serde_json::Value {
        let out = ok(&["eval", "--pred", s(pred), "--truth", s(truth), "--json"]);
        serde_json::from_str(out.lines().next().unwrap()).unwrap()
    };

    let two: Vec<u32> = (0..200).map(|i| 1 + (i >= 100) as u32).collect();
    write_labels(&p("two.mvol.json"), two.clone());
    let same = run(&p("two.mvol.json"), &p("two.mvol.json"));
    assert_eq!(same["f_score"], 1.0);

    let one = vec![1u32; 100];
    let halves: Vec<u32> = (0..100).map(|i| 1 + (i >= 50) as u32).collect();
    write_labels(&p("one.mvol.json"), one);
    write_labels(&p("halves.mvol.json"), halves);
    let split = run(&p("halves.mvol.json"), &p("one.mvol.json"));
    assert_eq!(
        (split["tp"].as_u64(), split["fp"].as_u64(), split["fn"].as_u64()),
        (Some(0), Some(2), Some(1))
    );
    assert_eq!(split["f_score"], 0.0);

    write_labels(&p("merged.mvol.json"), vec![1u32; 200]);
    let merged = run(&p("merged.mvol.json"), &p("two.mvol.json"));
    assert_eq!(
        (merged["tp"].as_u64(), merged["fp"].as_u64(), merged["fn"].as_u64()),
        (Some(0), Some(1), Some(2))
    );

    let table = ok(&[
        "eval",
        "--pred",
        s(&p("two.mvol.json")),
        "--truth",
        s(&p("two.mvol.json")),
        "--layers",
        s(&p("two.mvol.json")),
        "--name",
        "Self",
    ]);
    assert!(table.starts_with("Algorithm"));
    assert!(table.contains("Self L1"));
    assert!(table.contains("Self L2"));
}
