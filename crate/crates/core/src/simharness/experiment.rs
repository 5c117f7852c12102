use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detector::{simulate_predictions, DetectorNoise};
use super::morphology::MaskPerturbation;
use super::scene::{generate_scene, render_background, SceneSpec, SyntheticScene};
use super::SimError;
use crate::evalkit::{selection_metrics, SelectionMetrics};
use crate::geometry::{BBox2D, CameraRig, Label3D};
use crate::kitti_io::{image_id, GtBank, MaskRaster, RgbaRaster};
use crate::pbf::{
    gt_bank_insert, initialize_prototypes, refine_prototypes, select_pseudo_labels, BankConfig,
    FeatureVec, PbfConfig, PrototypeBank, Selection,
};
use crate::rapa::{augment_scene, cut_patch, patch_candidate_indices, ObjectPatch, RapaConfig, SceneRef};
use crate::seed;

/// Prediction ids of one scene in one epoch live in `[base, base + ID_STRIDE)`.
pub const ID_STRIDE: u64 = 1 << 16;

pub const CSV_HEADER: &str =
    "epoch,bank_size,pbf_precision,pbf_recall,conf_precision,conf_recall,rapa_accept_rate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub noise: DetectorNoise,
    pub rapa: RapaConfig,
    pub pbf: PbfConfig,
    pub bank: BankConfig,
    pub num_scenes: usize,
    pub epochs: u32,
    pub seed: u64,
    /// Applied to every road mask before RAPA sees it.
    pub mask_perturbation: Option<MaskPerturbation>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            noise: DetectorNoise::default(),
            rapa: RapaConfig::default(),
            pbf: PbfConfig::default(),
            bank: BankConfig::default(),
            num_scenes: 200,
            epochs: 10,
            seed: 0,
            mask_perturbation: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.rapa.validate()?;
        self.pbf.validate()?;
        self.bank.validate()?;
        Ok(())
    }

    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        SceneSpec { seed: seed::mix(&[self.seed, seed::hash_str("scene"), index as u64]), ..self.scene.clone() }
    }

    pub fn scene(&self, index: usize) -> Result<SyntheticScene, SimError> {
        generate_scene(&self.scene_spec(index), &image_id(index))
    }

    /// The road mask RAPA works with, after the configured perturbation.
    pub fn rapa_mask(&self, scene: &SyntheticScene) -> MaskRaster {
        match &self.mask_perturbation {
            Some(p) => p.apply(&scene.road_mask),
            None => scene.road_mask.clone(),
        }
    }
}

fn car_color(seed: u64) -> [u8; 4] {
    let mut rng = seed::rng(seed);
    [rng.random_range(20..240), rng.random_range(20..240), rng.random_range(20..240), 255]
}

fn fill_box(img: &mut RgbaRaster, bbox: &BBox2D, rgba: [u8; 4]) {
    let (x0, x1, y0, y1) = bbox.pixel_span(img.width(), img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            img.set_pixel(x, y, rgba);
        }
    }
}

/// Background plus every car as a flat box, far to near.
pub fn render_scene_image(scene: &SyntheticScene) -> RgbaRaster {
    let mut img = render_background(&scene.road_mask);
    let mut order: Vec<usize> = (0..scene.full_gt.len()).collect();
    order.sort_by(|&a, &b| scene.full_gt[b].location.z.total_cmp(&scene.full_gt[a].location.z));
    for i in order {
        let color = car_color(seed::mix(&[seed::hash_str(&scene.image_id), i as u64]));
        fill_box(&mut img, &scene.full_gt[i].bbox2d, color);
    }
    img
}

pub fn box_mask(bbox: &BBox2D, width: usize, height: usize) -> MaskRaster {
    let (x0, x1, y0, y1) = bbox.pixel_span(width, height);
    MaskRaster::from_fn(width, height, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
}

/// Patches cut from every sparse annotation that passes the extraction filter.
pub fn build_patch_library(scenes: &[SyntheticScene]) -> Result<Vec<ObjectPatch>, SimError> {
    let mut library = Vec::new();
    for scene in scenes {
        let candidates = patch_candidate_indices(&scene.sparse_gt);
        if candidates.is_empty() {
            continue;
        }
        let image = render_scene_image(scene);
        for i in candidates {
            let label = &scene.sparse_gt[i];
            let mask = box_mask(&label.bbox2d, image.width(), image.height());
            library.push(cut_patch(&image, &mask, label, &scene.rig, &scene.image_id)?);
        }
    }
    Ok(library)
}

fn init_features(cfg: &ExperimentConfig, index: usize, count: usize) -> Vec<FeatureVec> {
    let mut rng = seed::rng(seed::mix(&[cfg.seed, seed::hash_str("init"), index as u64]));
    (0..count).map(|_| cfg.noise.true_feature(&mut rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionOutcome {
    pub id: u64,
    pub confidence: f64,
    pub is_true: bool,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub label: Label3D,
    pub source_label: Label3D,
    pub source_rig: CameraRig,
    pub road_ratio: f64,
}

/// What happened to one scene in one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub index: usize,
    pub image_id: String,
    pub predictions: Vec<PredictionOutcome>,
    /// Boxes known for the scene before augmentation.
    pub existing: Vec<BBox2D>,
    /// Accepted placements in paste order.
    pub placed: Vec<PlacedObject>,
    pub attempted: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub bank_size: usize,
    pub pbf: Option<SelectionMetrics>,
    pub confidence: Option<SelectionMetrics>,
    pub rapa_accept_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    /// Row 0 is the initialization state.
    pub rows: Vec<EpochRow>,
    /// Per-epoch scene outcomes, `details[e - 1]` for epoch `e`.
    pub details: Vec<Vec<SceneOutcome>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ExperimentReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.bank_size,
                opt(r.pbf.map(|m| m.precision)),
                opt(r.pbf.map(|m| m.recall)),
                opt(r.confidence.map(|m| m.precision)),
                opt(r.confidence.map(|m| m.recall)),
                opt(r.rapa_accept_rate),
            )
            .unwrap();
        }
        s
    }

    /// Full configuration echo including the seed.
    pub fn config_json(&self) -> String {
        let echo = serde_json::json!({ "seed": self.config.seed, "config": self.config });
        let mut s = serde_json::to_string_pretty(&echo).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn bank_sizes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.bank_size).collect()
    }
}

struct ScenePass {
    outcome: SceneOutcome,
    selection: Selection,
    oracle: HashMap<u64, bool>,
}

fn run_scene(
    cfg: &ExperimentConfig,
    index: usize,
    epoch: u32,
    known: Vec<Label3D>,
    library: &[ObjectPatch],
    prototypes: &PrototypeBank,
) -> Result<ScenePass, SimError> {
    let scene = cfg.scene(index)?;
    let mask = cfg.rapa_mask(&scene);
    let image = render_scene_image(&scene);
    let augmented = augment_scene(
        SceneRef { image_id: &scene.image_id, image: &image, labels: &known, rig: &scene.rig, road_mask: &mask },
        library,
        &cfg.rapa,
        seed::scene_seed(cfg.seed, &scene.image_id, epoch),
    );

    let mut rng = seed::rng(seed::mix(&[cfg.seed, seed::hash_str("detect"), index as u64, epoch as u64]));
    let id_base = (epoch as u64 * cfg.num_scenes as u64 + index as u64) * ID_STRIDE;
    let det = simulate_predictions(&scene.full_gt, &scene.image_id, &scene.rig, &cfg.noise, &mut rng, id_base)?;
    let selection = if det.predictions.is_empty() || prototypes.is_empty() {
        Selection::default()
    } else {
        select_pseudo_labels(&det.predictions, prototypes, &cfg.pbf)?
    };
    let chosen: std::collections::HashSet<u64> = selection.selected.iter().map(|s| s.prediction.id).collect();
    let predictions = det
        .predictions
        .iter()
        .map(|p| PredictionOutcome {
            id: p.id,
            confidence: p.confidence(),
            is_true: det.oracle[&p.id],
            selected: chosen.contains(&p.id),
        })
        .collect();
    let placed = augmented
        .placements
        .iter()
        .map(|(idx, p)| PlacedObject {
            label: p.label.clone(),
            source_label: library[*idx].source_label.clone(),
            source_rig: library[*idx].source_rig.clone(),
            road_ratio: p.road_ratio,
        })
        .collect();
    Ok(ScenePass {
        outcome: SceneOutcome {
            index,
            image_id: scene.image_id.clone(),
            predictions,
            existing: known.iter().map(|l| l.bbox2d).collect(),
            placed,
            attempted: augmented.attempted,
        },
        selection,
        oracle: det.oracle,
    })
}

/// Top-`k` predictions by confidence (ties by id) as a selection.
pub fn confidence_baseline(outcomes: &[PredictionOutcome], k: usize) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<&PredictionOutcome> = outcomes.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));
    let k = k.min(order.len());
    (order[..k].iter().map(|p| p.id).collect(), order[k..].iter().map(|p| p.id).collect())
}

/// Runs the teacher-student loop on `cfg.num_scenes` synthetic scenes using
/// `jobs` worker threads. Results do not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport, SimError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::InvalidSpec(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &ExperimentConfig) -> Result<ExperimentReport, SimError> {
    let scenes: Vec<SyntheticScene> =
        (0..cfg.num_scenes).into_par_iter().map(|i| cfg.scene(i)).collect::<Result<_, _>>()?;
    let mut gt_bank = GtBank::new();
    let mut init = Vec::new();
    for (i, s) in scenes.iter().enumerate() {
        gt_bank.add_sparse(&s.image_id, s.sparse_gt.iter().cloned());
        init.extend(init_features(cfg, i, s.sparse_gt.len()));
    }
    let mut prototypes = if init.is_empty() {
        PrototypeBank::new(cfg.bank)?
    } else {
        initialize_prototypes(init, cfg.bank)?
    };
    let library = build_patch_library(&scenes)?;
    let image_ids: Vec<String> = scenes.iter().map(|s| s.image_id.clone()).collect();
    drop(scenes);

    let mut report = ExperimentReport {
        config: cfg.clone(),
        rows: vec![EpochRow {
            epoch: 0,
            bank_size: gt_bank.total_entries(),
            pbf: None,
            confidence: None,
            rapa_accept_rate: None,
        }],
        details: Vec::new(),
    };

    for epoch in 1..=cfg.epochs {
        let known: Vec<Vec<Label3D>> = image_ids.iter().map(|id| gt_bank.labels(id)).collect();
        let passes: Vec<ScenePass> = known
            .into_par_iter()
            .enumerate()
            .map(|(i, labels)| run_scene(cfg, i, epoch, labels, &library, &prototypes))
            .collect::<Result<_, _>>()?;

        // serial reduction in scene order
        let mut oracle = HashMap::new();
        let (mut selected, mut rejected, mut features) = (Vec::new(), Vec::new(), Vec::new());
        let (mut attempted, mut accepted) = (0usize, 0usize);
        for p in &passes {
            gt_bank_insert(&mut gt_bank, &p.outcome.image_id, &p.selection.selected, epoch);
            selected.extend(p.selection.selected.iter().map(|s| s.prediction.id));
            rejected.extend(p.selection.rejected.iter().map(|r| r.prediction.id));
            features.extend(p.selection.selected.iter().map(|s| s.prediction.feature.clone()));
            oracle.extend(p.oracle.iter().map(|(k, v)| (*k, *v)));
            attempted += p.outcome.attempted;
            accepted += p.outcome.placed.len();
        }
        if !prototypes.is_empty() {
            refine_prototypes(&mut prototypes, &features)?;
        }
        let outcomes: Vec<PredictionOutcome> =
            passes.iter().flat_map(|p| p.outcome.predictions.iter().cloned()).collect();
        let (base_sel, base_rej) = confidence_baseline(&outcomes, selected.len());
        report.rows.push(EpochRow {
            epoch,
            bank_size: gt_bank.total_entries(),
            pbf: Some(selection_metrics(&selected, &rejected, &oracle)?),
            confidence: Some(selection_metrics(&base_sel, &base_rej, &oracle)?),
            rapa_accept_rate: (attempted > 0).then(|| accepted as f64 / attempted as f64),
        });
        report.details.push(passes.into_iter().map(|p| p.outcome).collect());
    }
    Ok(report)
}

/// Fraction of scene-level bootstrap resamples in which PBF precision
/// strictly exceeds confidence-ranking precision at the same selection count.
pub fn bootstrap_pbf_advantage(scenes: &[SceneOutcome], resamples: usize, seed: u64) -> f64 {
    if scenes.is_empty() || resamples == 0 {
        return 0.0;
    }
    // (confidence, id, scene position, truth) sorted once by confidence
    let mut pooled: Vec<(f64, u64, usize, bool)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, o)| o.predictions.iter().map(move |p| (p.confidence, p.id, s, p.is_true)))
        .collect();
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let per_scene: Vec<(usize, usize)> = scenes
        .iter()
        .map(|o| {
            let sel = o.predictions.iter().filter(|p| p.selected).count();
            let tp = o.predictions.iter().filter(|p| p.selected && p.is_true).count();
            (sel, tp)
        })
        .collect();

    let mut rng = seed::rng(seed);
    let mut mult = vec![0usize; scenes.len()];
    let mut wins = 0usize;
    for _ in 0..resamples {
        mult.iter_mut().for_each(|m| *m = 0);
        for _ in 0..scenes.len() {
            mult[rng.random_range(0..scenes.len())] += 1;
        }
        let (mut k, mut tp) = (0usize, 0usize);
        for (s, &m) in mult.iter().enumerate() {
            k += m * per_scene[s].0;
            tp += m * per_scene[s].1;
        }
        if k == 0 {
            continue;
        }
        let (mut taken, mut base_tp) = (0usize, 0usize);
        for &(_, _, s, truth) in &pooled {
            if taken >= k {
                break;
            }
            let take = mult[s].min(k - taken);
            taken += take;
            if truth {
                base_tp += take;
            }
        }
        if tp as f64 / k as f64 > base_tp as f64 / k as f64 {
            wins += 1;
        }
    }
    wins as f64 / resamples as f64
}
