use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sparsemono::evalkit::{evaluate_all, format_eval_csv, EvalScene};
use sparsemono::geometry::{CameraRig, Label3D};
use sparsemono::kitti_io::{
    format_label_file, format_rejected, format_selected, load_gt_bank, parse_predictions,
    patch_file_name, read_calib_file, read_image_file, read_label_file, read_mask_file,
    read_patch_file, save_gt_bank, write_atomic, write_image, write_patch, EntrySource, GtBank,
};
use sparsemono::pbf::{
    depth_score, gt_bank_insert, select_pseudo_labels, ClassBanks, FeatureVec, RejectReason,
    Rejected, Selection, DEFAULT_CLASS,
};
use sparsemono::rapa::{augment_scene, cut_patch, patch_candidate_indices, ObjectPatch, SceneRef};
use sparsemono::seed;
use sparsemono::simharness::{run_experiment, ExperimentConfig};

use crate::error::CliError;
use crate::settings::{ensure_dir, Settings};

pub const PROTOTYPES_FILE: &str = "prototypes.json";
pub const SELECTED_FILE: &str = "selected.jsonl";
pub const REJECTED_FILE: &str = "rejected.jsonl";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "config.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const GROWTH_CSV: &str = "growth.csv";
pub const AUGMENT_CSV: &str = "augment.csv";

/// IoU thresholds reported by `eval`.
pub const EVAL_IOUS: [f64; 2] = [0.7, 0.5];

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Stems of files with extension `ext`, sorted.
fn stems(dir: &Path, ext: &str) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == ext) {
            if let Some(s) = path.file_stem().and_then(|s| s.to_str()) {
                out.push(s.to_string());
            }
        }
    }
    out.sort();
    Ok(out)
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))
}

fn load_rig(calib_dir: &Path, id: &str) -> Result<CameraRig, CliError> {
    Ok(read_calib_file(&calib_dir.join(format!("{id}.txt")))?.to_rig()?)
}

pub fn extract_patches(s: &Settings) -> Result<(), CliError> {
    let labels_dir = s.existing("labels")?;
    let calib_dir = s.existing("calib")?;
    let images_dir = s.existing("images")?;
    let masks_dir = s.existing("masks")?;
    let out = s.required("out")?;
    let jobs = s.jobs()?;
    ensure_dir(&out)?;

    let ids = stems(&labels_dir, "txt")?;
    let per_image: Vec<(usize, usize)> = pool(jobs)?.install(|| {
        ids.par_iter()
            .map(|id| -> Result<(usize, usize), CliError> {
                let labels = read_label_file(&labels_dir.join(format!("{id}.txt")))?;
                let candidates = patch_candidate_indices(&labels);
                if candidates.is_empty() {
                    return Ok((0, 0));
                }
                let rig = load_rig(&calib_dir, id)?;
                let image = read_image_file(&images_dir.join(format!("{id}.img")))?;
                let (mut written, mut unmasked) = (0, 0);
                for idx in candidates {
                    let mask_path = masks_dir.join(format!("{id}_{idx}.pgm"));
                    if !mask_path.exists() {
                        unmasked += 1;
                        continue;
                    }
                    let mask = read_mask_file(&mask_path)?;
                    let patch = cut_patch(&image, &mask, &labels[idx], &rig, id)
                        .map_err(|e| CliError::Validation(format!("{}: {e}", mask_path.display())))?;
                    write(&out.join(patch_file_name(id, idx)), write_patch(&patch))?;
                    written += 1;
                }
                Ok((written, unmasked))
            })
            .collect::<Result<_, _>>()
    })?;
    let written: usize = per_image.iter().map(|p| p.0).sum();
    let unmasked: usize = per_image.iter().map(|p| p.1).sum();
    eprintln!("extracted {written} patches from {} images ({unmasked} candidates without a mask)", ids.len());
    Ok(())
}

fn load_library(dir: &Path) -> Result<Vec<ObjectPatch>, CliError> {
    stems(dir, "patch")?
        .iter()
        .map(|stem| Ok(read_patch_file(&dir.join(format!("{stem}.patch")))?))
        .collect()
}

pub fn augment(s: &Settings) -> Result<(), CliError> {
    let calib_dir = s.existing("calib")?;
    let images_dir = s.existing("images")?;
    let masks_dir = s.existing("masks")?;
    let patches_dir = s.existing("patches")?;
    let out = s.required("out")?;
    let cfg = s.rapa()?;
    let global_seed = s.seed()?;
    let epoch = s.epoch(0)?;
    let jobs = s.jobs()?;

    // known labels come from the GT Bank when one is given
    let (ids, bank) = match s.path("gt_bank")? {
        Some(p) => {
            let bank = load_gt_bank(&p)?;
            (bank.records().map(|r| r.image_id.clone()).collect::<Vec<_>>(), Some(bank))
        }
        None => (stems(&s.existing("labels")?, "txt")?, None),
    };
    let labels_dir = s.path("labels")?;
    let library = load_library(&patches_dir)?;
    ensure_dir(&out)?;

    let rows: Vec<String> = pool(jobs)?.install(|| {
        ids.par_iter()
            .map(|id| -> Result<String, CliError> {
                let labels = match (&bank, &labels_dir) {
                    (Some(b), _) => b.labels(id),
                    (None, Some(dir)) => read_label_file(&dir.join(format!("{id}.txt")))?,
                    (None, None) => unreachable!("labels directory resolved above"),
                };
                let rig = load_rig(&calib_dir, id)?;
                let image = read_image_file(&images_dir.join(format!("{id}.img")))?;
                let road = read_mask_file(&masks_dir.join(format!("{id}.pgm")))?;
                let scene = SceneRef { image_id: id, image: &image, labels: &labels, rig: &rig, road_mask: &road };
                let result = augment_scene(scene, &library, &cfg, seed::scene_seed(global_seed, id, epoch));
                write(&out.join(format!("{id}.img")), write_image(&result.image))?;
                write(&out.join(format!("{id}.txt")), format_label_file(&result.labels))?;
                Ok(format!("{id},{},{},{}", result.attempted, result.placements.len(), result.trials))
            })
            .collect::<Result<_, _>>()
    })?;
    let mut csv = String::from("image_id,attempted,accepted,trials\n");
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    write(&out.join(AUGMENT_CSV), csv)
}

/// One feature per line: a bare JSON array, or `{"class": ..., "feature": [...]}`.
fn parse_feature_line(line: &str, line_no: usize) -> Result<(String, FeatureVec), CliError> {
    let bad = |m: String| CliError::Validation(format!("features line {line_no}: {m}"));
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
    let (class, values) = match &value {
        serde_json::Value::Array(_) => (DEFAULT_CLASS.to_string(), value.clone()),
        serde_json::Value::Object(map) => {
            let class = match map.get("class") {
                None => DEFAULT_CLASS.to_string(),
                Some(serde_json::Value::String(c)) => c.clone(),
                Some(_) => return Err(bad("`class` must be a string".into())),
            };
            (class, map.get("feature").cloned().ok_or_else(|| bad("missing `feature`".into()))?)
        }
        _ => return Err(bad("expected an array or an object".into())),
    };
    let v: Vec<f64> = serde_json::from_value(values).map_err(|e| bad(e.to_string()))?;
    if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
        return Err(bad("feature must be a nonempty list of finite numbers".into()));
    }
    Ok((class, FeatureVec::new(v)))
}

fn write_banks(path: &Path, banks: &ClassBanks) -> Result<(), CliError> {
    let mut text = serde_json::to_string(banks).expect("banks serialize");
    text.push('\n');
    Ok(write_atomic(path, text.as_bytes())?)
}

pub fn proto_init(s: &Settings) -> Result<(), CliError> {
    let features_path = s.existing("features")?;
    let out = s.required("out")?;
    let cfg = s.bank()?;
    let text = read_text(&features_path)?;
    let features: Vec<(String, FeatureVec)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_feature_line(l, i + 1))
        .collect::<Result<_, _>>()?;
    let banks = ClassBanks::initialize(features, cfg)?;
    ensure_dir(&out)?;
    write_banks(&out.join(PROTOTYPES_FILE), &banks)?;
    for class in banks.classes() {
        let bank = banks.get(class).unwrap();
        eprintln!("{class}: {} prototypes ({} zero features skipped)", bank.len(), bank.skipped());
    }
    Ok(())
}

fn load_banks(path: &Path) -> Result<ClassBanks, CliError> {
    let text = read_text(path)?;
    let banks: ClassBanks = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    for class in banks.classes() {
        banks.get(class).unwrap().validate()?;
    }
    Ok(banks)
}

pub fn filter(s: &Settings) -> Result<(), CliError> {
    let preds_path = s.existing("predictions")?;
    let protos_path = s.existing("prototypes")?;
    let out = s.required("out")?;
    let cfg = s.pbf()?;
    let epoch = s.epoch(1)?;
    let mut gt_bank = match s.path("gt_bank")? {
        Some(p) => load_gt_bank(&p)?,
        None => GtBank::new(),
    };
    let preds = parse_predictions(&read_text(&preds_path)?).map_err(|e| e.in_file(&preds_path))?;
    let mut banks = load_banks(&protos_path)?;
    if let Some(beta) = s.beta_override()? {
        let classes: Vec<String> = banks.classes().map(str::to_string).collect();
        for c in classes {
            banks.get_mut(&c).unwrap().set_beta_train(beta)?;
        }
    }

    // every prediction is judged against the banks as loaded
    let mut selection = Selection::default();
    for p in &preds {
        match banks.get(&p.label.class_name).filter(|b| !b.is_empty()) {
            Some(bank) => {
                let one = select_pseudo_labels(std::slice::from_ref(p), bank, &cfg)?;
                selection.selected.extend(one.selected);
                selection.rejected.extend(one.rejected);
            }
            None => {
                let s_depth = depth_score(p.sigma);
                let reason = if s_depth > cfg.tau_depth { RejectReason::Proto } else { RejectReason::Depth };
                selection.rejected.push(Rejected { prediction: p.clone(), s_depth, s_proto: None, reason });
            }
        }
    }

    let classes: Vec<String> = banks.classes().map(str::to_string).collect();
    for c in classes {
        let feats: Vec<FeatureVec> = selection
            .selected
            .iter()
            .filter(|x| x.prediction.label.class_name == c)
            .map(|x| x.prediction.feature.clone())
            .collect();
        let bank = banks.get_mut(&c).unwrap();
        if !feats.is_empty() {
            bank.refine(&feats)?;
        }
    }
    let mut images: Vec<&str> = Vec::new();
    for x in &selection.selected {
        if !images.contains(&x.prediction.image_id.as_str()) {
            images.push(&x.prediction.image_id);
        }
    }
    let mut inserted = 0;
    for id in images {
        let batch: Vec<_> =
            selection.selected.iter().filter(|x| x.prediction.image_id == id).cloned().collect();
        inserted += gt_bank_insert(&mut gt_bank, id, &batch, epoch);
    }

    ensure_dir(&out)?;
    write(&out.join(SELECTED_FILE), format_selected(&selection.selected))?;
    write(&out.join(REJECTED_FILE), format_rejected(&selection.rejected))?;
    save_gt_bank(&out.join(sparsemono::kitti_io::GT_BANK_FILE), &gt_bank)?;
    write_banks(&out.join(PROTOTYPES_FILE), &banks)?;
    eprintln!(
        "selected {} of {} predictions, {inserted} new GT Bank entries",
        selection.selected.len(),
        preds.len()
    );
    Ok(())
}

fn label_files(dir: &Path) -> Result<Vec<String>, CliError> {
    stems(dir, "txt")
}

pub fn eval(s: &Settings) -> Result<(), CliError> {
    let preds_dir = s.existing("predictions")?;
    let gt_dir = s.existing("labels")?;
    let out = s.required("out")?;
    let ids: BTreeSet<String> =
        label_files(&gt_dir)?.into_iter().chain(label_files(&preds_dir)?).collect();
    let read_opt = |dir: &Path, id: &str| -> Result<Vec<Label3D>, CliError> {
        let p: PathBuf = dir.join(format!("{id}.txt"));
        if p.exists() {
            Ok(read_label_file(&p)?)
        } else {
            Ok(Vec::new())
        }
    };
    let mut scenes = Vec::with_capacity(ids.len());
    for id in &ids {
        let predictions = read_opt(&preds_dir, id)?
            .into_iter()
            .map(|l| match l.score {
                Some(sc) => Ok((l, sc)),
                None => Err(CliError::Validation(format!("{id}.txt: prediction without a score"))),
            })
            .collect::<Result<_, _>>()?;
        scenes.push(EvalScene { predictions, ground_truth: read_opt(&gt_dir, id)? });
    }
    let rows: Vec<_> = EVAL_IOUS.iter().flat_map(|&t| evaluate_all(&scenes, DEFAULT_CLASS, t)).collect();
    ensure_dir(&out)?;
    write(&out.join(EVAL_CSV), format_eval_csv(&rows))
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    let out = s.required("out")?;
    let d = ExperimentConfig::default();
    let cfg = ExperimentConfig {
        rapa: s.rapa()?,
        pbf: s.pbf()?,
        bank: s.bank()?,
        num_scenes: s.num_scenes(d.num_scenes)?,
        epochs: s.epochs(d.epochs)?,
        seed: s.seed()?,
        ..d
    };
    let report = run_experiment(&cfg, s.jobs()?)?;
    ensure_dir(&out)?;
    write(&out.join(REPORT_CSV), report.to_csv())?;
    write(&out.join(REPORT_JSON), report.config_json())
}

/// Cumulative GT Bank size per epoch from the `epoch_added` stamps.
pub fn growth_csv(bank: &GtBank) -> String {
    let entries: Vec<_> = bank.records().flat_map(|r| r.entries.iter()).collect();
    let last = entries.iter().map(|e| e.epoch_added).max().unwrap_or(0);
    let mut csv = String::from("epoch,bank_size,sparse,pseudo,added\n");
    let (mut sparse, mut pseudo) = (0usize, 0usize);
    for epoch in 0..=last {
        let mut added = 0;
        for e in entries.iter().filter(|e| e.epoch_added == epoch) {
            added += 1;
            match e.source {
                EntrySource::SparseGt => sparse += 1,
                EntrySource::Pseudo => pseudo += 1,
            }
        }
        writeln!(csv, "{epoch},{},{sparse},{pseudo},{added}", sparse + pseudo).unwrap();
    }
    csv
}

pub fn report(s: &Settings) -> Result<(), CliError> {
    let bank = load_gt_bank(&s.existing("gt_bank")?)?;
    let out = s.required("out")?;
    ensure_dir(&out)?;
    write(&out.join(GROWTH_CSV), growth_csv(&bank))
}
