use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use svseg::classifier::{
    read_patch_dataset, CnnArch, CnnModel, HeuristicClassifier, HypothesisClassifier, TrainConfig,
};
use svseg::eval::{format_json, format_table, layer_report, match_segments, MatchReport};
use svseg::merge_forest::{MergeForest, MergeParams};
use svseg::pipeline::{run_segment, Resume, SegmentParams};
use svseg::preprocess::PreprocessParams;
use svseg::synthgen::{generate_patch_dataset, generate_phantom, write_patch_dataset, ClassCounts, PhantomParams};
use svseg::volume::{read_volume, write_volume, Dims, LabelVolume, ScalarVolume, Spacing, Volume};

use crate::config::{ConfigFile, LabelList, Triple};
use crate::{ClassifierKind, EvalArgs, Failure, SegmentArgs, SynthArgs, TrainArgs};

const SEGMENT_KEYS: &[&str] = &[
    "input",
    "output-dir",
    "v-min-um3",
    "v-max-um3",
    "r-min-um",
    "sigma",
    "r-cl-max",
    "classifier",
    "model",
    "seed",
    "dump-stages",
    "resume-preprocessed",
    "resume-supervoxels",
    "resume-forest",
    "truth",
    "background",
];
const SYNTH_KEYS: &[&str] = &[
    "output-dir",
    "dims",
    "spacing",
    "cells",
    "membrane-width",
    "membrane-intensity",
    "interior-intensity",
    "attenuation",
    "noise-sigma",
    "blur-sigma",
    "seed",
    "patches",
];
const TRAIN_KEYS: &[&str] = &[
    "dataset",
    "output",
    "epochs",
    "batch-size",
    "learning-rate",
    "keep-prob",
    "seed",
    "conv1",
    "conv2",
    "fc",
    "masked-input",
];
const EVAL_KEYS: &[&str] = &["pred", "truth", "background", "layers", "name", "json"];

fn check_keys(cfg: &ConfigFile, allowed: &[&str]) -> Result<(), Failure> {
    match cfg.keys().find(|k| *k != "threads" && !allowed.contains(k)) {
        Some(k) => Err(Failure::config(format!("unknown config key {k}"))),
        None => Ok(()),
    }
}

fn required<T>(key: &str, v: Option<T>) -> Result<T, Failure> {
    v.ok_or_else(|| Failure::config(format!("missing --{key}")))
}

fn read_scalar(path: &Path) -> Result<ScalarVolume, Failure> {
    read_volume(path)
        .and_then(Volume::into_scalar)
        .map_err(|e| Failure::from_core("io", e))
}

fn read_labels(path: &Path) -> Result<LabelVolume, Failure> {
    read_volume(path)
        .and_then(Volume::into_labels)
        .map_err(|e| Failure::from_core("io", e))
}

fn write(v: impl Into<Volume>, path: &Path) -> Result<(), Failure> {
    write_volume(&v.into(), path).map_err(|e| Failure::from_core("io", e))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))
}

fn score(pred: &LabelVolume, truth: &LabelVolume, bg: &BTreeSet<u32>) -> Result<MatchReport, Failure> {
    match_segments(pred, truth, bg).map_err(|e| Failure::from_core("eval", e))
}

pub fn segment(a: SegmentArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    check_keys(cfg, SEGMENT_KEYS)?;
    let input: PathBuf = required("input", cfg.pick("input", a.input)?)?;
    let out_dir: PathBuf = required("output-dir", cfg.pick("output-dir", a.output_dir)?)?;
    let v_max = required("v-max-um3", cfg.pick("v-max-um3", a.v_max_um3)?)?;
    let merge = match (cfg.pick("v-min-um3", a.v_min_um3)?, cfg.pick("r-min-um", a.r_min_um)?) {
        (Some(v_min), _) => MergeParams::new(v_min, v_max),
        (None, Some(r)) => MergeParams::from_radius(r, v_max),
        (None, None) => return Err(Failure::config("one of --v-min-um3 or --r-min-um is required")),
    }
    .map_err(|e| Failure::from_core("config", e))?;
    let defaults = PreprocessParams::default();
    let params = SegmentParams {
        preprocess: PreprocessParams {
            sigma: cfg
                .pick::<Triple<f64>>("sigma", a.sigma)?
                .map_or(defaults.sigma, |t| t.0),
            r_cl_max: cfg.pick("r-cl-max", a.r_cl_max)?.unwrap_or(defaults.r_cl_max),
        },
        merge,
    };
    params
        .preprocess
        .validate()
        .map_err(|e| Failure::from_core("config", e))?;
    let kind = cfg
        .pick("classifier", a.classifier)?
        .unwrap_or(ClassifierKind::Heuristic);
    let model_path: Option<PathBuf> = cfg.pick("model", a.model)?;
    if let Some(seed) = cfg.pick::<u64>("seed", a.seed)? {
        info!("seed {seed} has no effect on segmentation");
    }
    let dump = cfg.flag("dump-stages", a.dump_stages)?;
    let truth_path: Option<PathBuf> = cfg.pick("truth", a.truth)?;
    let background = cfg.pick::<LabelList>("background", a.background)?.unwrap_or_default().0;

    let heuristic;
    let cnn;
    let classifier: Option<&dyn HypothesisClassifier> = match (kind, &model_path) {
        (ClassifierKind::Cnn, Some(p)) => {
            cnn = CnnModel::read(p).map_err(|e| Failure::from_core("io", e))?;
            Some(&cnn)
        }
        (ClassifierKind::Cnn, None) => return Err(Failure::config("--classifier cnn needs --model")),
        (_, Some(_)) => return Err(Failure::config("--model is only used with --classifier cnn")),
        (ClassifierKind::Heuristic, None) => {
            heuristic =
                HeuristicClassifier::new(merge.v_min, merge.v_max).map_err(|e| Failure::from_core("config", e))?;
            Some(&heuristic)
        }
        (ClassifierKind::None, None) => None,
    };

    let image = read_scalar(&input)?;
    let resume = Resume {
        preprocessed: cfg
            .pick::<PathBuf>("resume-preprocessed", a.resume_preprocessed)?
            .map(|p| read_scalar(&p))
            .transpose()?,
        supervoxels: cfg
            .pick::<PathBuf>("resume-supervoxels", a.resume_supervoxels)?
            .map(|p| read_labels(&p))
            .transpose()?,
        forest: cfg
            .pick::<PathBuf>("resume-forest", a.resume_forest)?
            .map(|p| MergeForest::read(&p).map_err(|e| Failure::from_core("io", e)))
            .transpose()?,
    };
    let truth = truth_path.as_deref().map(read_labels).transpose()?;

    info!("segmenting {} ({:?})", input.display(), image.dims());
    let out = run_segment(&image, &params, classifier, resume).map_err(|e| {
        let mut f = Failure::from_core(e.stage, e.source);
        if f.code == 3 {
            f.stage = "io".into();
        }
        f
    })?;
    info!(
        "{} supervoxels, {} roots, {} final segments",
        out.supervoxels.max_label(),
        out.forest.roots().len(),
        out.resolution.selected.len()
    );

    create_dir(&out_dir)?;
    write(out.labels.clone(), &out_dir.join("labels.mvol.json"))?;
    out.forest
        .write(out_dir.join("forest.txt"))
        .map_err(|e| Failure::from_core("io", e))?;
    write_text(&out_dir.join("report.txt"), &out.report)?;
    if dump {
        write(out.preprocessed.clone(), &out_dir.join("preprocessed.mvol.json"))?;
        write(out.supervoxels.clone(), &out_dir.join("supervoxels.mvol.json"))?;
        write(out.fused.clone(), &out_dir.join("fused.mvol.json"))?;
    }
    if let Some(truth) = truth {
        let mut rows = vec![
            ("Watershed".to_string(), score(&out.supervoxels, &truth, &background)?),
            ("Fusion".to_string(), score(&out.fused, &truth, &background)?),
        ];
        match kind {
            ClassifierKind::None => {}
            ClassifierKind::Heuristic => {
                rows.push(("Fusion+Heuristic".into(), score(&out.labels, &truth, &background)?))
            }
            ClassifierKind::Cnn => rows.push(("Fusion+CNN".into(), score(&out.labels, &truth, &background)?)),
        }
        let table = format_table(&rows);
        let json: String = rows.iter().map(|(n, r)| format_json(n, r)).collect();
        write_text(&out_dir.join("eval.txt"), &table)?;
        write_text(&out_dir.join("eval.json"), &json)?;
        print!("{table}");
    }
    println!(
        "{} segments written to {}",
        out.resolution.selected.len(),
        out_dir.display()
    );
    Ok(())
}

pub fn synth(a: SynthArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    check_keys(cfg, SYNTH_KEYS)?;
    let out_dir: PathBuf = required("output-dir", cfg.pick("output-dir", a.output_dir)?)?;
    let d = PhantomParams::default();
    let dims = cfg
        .pick::<Triple<usize>>("dims", a.dims)?
        .map_or(d.dims, |t| Dims::new(t.0[0], t.0[1], t.0[2]));
    let params = PhantomParams {
        dims,
        spacing: cfg
            .pick::<Triple<f64>>("spacing", a.spacing)?
            .map_or(d.spacing, |t| Spacing(t.0)),
        n_cells: cfg.pick("cells", a.cells)?.unwrap_or(d.n_cells),
        membrane_width: cfg
            .pick("membrane-width", a.membrane_width)?
            .unwrap_or(d.membrane_width),
        membrane_intensity: cfg
            .pick("membrane-intensity", a.membrane_intensity)?
            .unwrap_or(d.membrane_intensity),
        interior_intensity: cfg
            .pick("interior-intensity", a.interior_intensity)?
            .unwrap_or(d.interior_intensity),
        attenuation: cfg.pick("attenuation", a.attenuation)?.unwrap_or(d.attenuation),
        noise_sigma: cfg.pick("noise-sigma", a.noise_sigma)?.unwrap_or(d.noise_sigma),
        blur_sigma: cfg.pick("blur-sigma", a.blur_sigma)?.unwrap_or(d.blur_sigma),
        seed: cfg.pick("seed", a.seed)?.unwrap_or(d.seed),
    };
    params.validate().map_err(|e| Failure::from_core("config", e))?;
    let patches = cfg.pick::<Triple<usize>>("patches", a.patches)?;

    let phantom = generate_phantom(&params).map_err(|e| Failure::from_core("synth", e))?;
    create_dir(&out_dir)?;
    write(phantom.image, &out_dir.join("image.mvol.json"))?;
    write(phantom.truth, &out_dir.join("truth.mvol.json"))?;
    if let Some(Triple([under, correct, over])) = patches {
        let counts = ClassCounts { under, correct, over };
        let set = generate_patch_dataset(&params, counts).map_err(|e| Failure::from_core("synth", e))?;
        let dir = out_dir.join("patches");
        write_patch_dataset(&set, &dir).map_err(|e| Failure::from_core("io", e))?;
        println!("{} patches written to {}", set.len(), dir.display());
    }
    println!("phantom with {} cells written to {}", params.n_cells, out_dir.display());
    Ok(())
}

fn trace_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".loss.txt");
    PathBuf::from(s)
}

pub fn train(a: TrainArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    check_keys(cfg, TRAIN_KEYS)?;
    let dataset: PathBuf = required("dataset", cfg.pick("dataset", a.dataset)?)?;
    let output: PathBuf = required("output", cfg.pick("output", a.output)?)?;
    let d = TrainConfig::default();
    let tc = TrainConfig {
        learning_rate: cfg.pick("learning-rate", a.learning_rate)?.unwrap_or(d.learning_rate),
        batch_size: cfg.pick("batch-size", a.batch_size)?.unwrap_or(d.batch_size),
        epochs: cfg.pick("epochs", a.epochs)?.unwrap_or(d.epochs),
        keep_prob: cfg.pick("keep-prob", a.keep_prob)?.unwrap_or(d.keep_prob),
        seed: cfg.pick("seed", a.seed)?.unwrap_or(d.seed),
        masked_input: cfg.flag("masked-input", a.masked_input)?,
        ..d
    };
    tc.validate().map_err(|e| Failure::from_core("config", e))?;

    let data = read_patch_dataset(&dataset).map_err(|e| Failure::from_core("io", e))?;
    let side = data
        .first()
        .map(|(p, _)| p.side())
        .ok_or_else(|| Failure::from_core("train", svseg::Error::Data("dataset is empty".into())))?;
    let p = CnnArch::STANDARD;
    let arch = CnnArch {
        side,
        conv1: cfg.pick("conv1", a.conv1)?.unwrap_or(p.conv1),
        conv2: cfg.pick("conv2", a.conv2)?.unwrap_or(p.conv2),
        fc: cfg.pick("fc", a.fc)?.unwrap_or(p.fc),
        ..p
    };
    arch.validate().map_err(|e| Failure::from_core("config", e))?;
    info!("training on {} patches, {} parameters", data.len(), arch.param_count());

    let outcome = svseg::classifier::train(&data, arch, &tc).map_err(|e| Failure::from_core("train", e))?;
    outcome.model.write(&output).map_err(|e| Failure::from_core("io", e))?;
    write_text(&trace_path(&output), &outcome.trace_text())?;
    println!(
        "loss {:.6} -> {:.6}; model written to {}",
        outcome.initial_loss,
        outcome.final_loss,
        output.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs, cfg: &ConfigFile) -> Result<(), Failure> {
    check_keys(cfg, EVAL_KEYS)?;
    let pred = read_labels(&required::<PathBuf>("pred", cfg.pick("pred", a.pred)?)?)?;
    let truth = read_labels(&required::<PathBuf>("truth", cfg.pick("truth", a.truth)?)?)?;
    let background = cfg.pick::<LabelList>("background", a.background)?.unwrap_or_default().0;
    let name: String = cfg.pick("name", a.name)?.unwrap_or_else(|| "Prediction".into());
    let json = cfg.flag("json", a.json)?;
    let layers = cfg.pick::<PathBuf>("layers", a.layers)?;

    let mut rows = vec![(name.clone(), score(&pred, &truth, &background)?)];
    if let Some(path) = layers {
        let mask = read_labels(&path)?;
        let per_layer = layer_report(&pred, &truth, &mask, &background).map_err(|e| Failure::from_core("eval", e))?;
        rows.extend(per_layer.into_iter().map(|(l, r)| (format!("{name} L{l}"), r)));
    }
    if json {
        rows.iter().for_each(|(n, r)| print!("{}", format_json(n, r)));
    } else {
        print!("{}", format_table(&rows));
    }
    Ok(())
}
