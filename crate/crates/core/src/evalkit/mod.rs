//! Rotated-box overlap, AP_R40 evaluation and pseudo-label selection metrics.

mod ap;
mod metrics;
mod rotated;

pub use ap::{
    ap_from_outcomes, ap_r40, match_predictions, Difficulty, DifficultyRule, MatchOutcome,
    RECALL_POINTS,
};
pub use metrics::{selection_metrics, SelectionMetrics};
pub use rotated::{
    bev_intersection_area, bev_iou_labels, iou3d, polygon_area, rotated_bev_iou, BevBox,
    DEGENERATE_AREA,
};

use thiserror::Error;

use crate::geometry::Label3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("truth oracle has no entry for prediction ids {0:?}")]
    OracleGap(Vec<u64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ap3d,
    ApBev,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Ap3d => "AP3D",
            Metric::ApBev => "APBEV",
        }
    }

    pub fn iou(self, a: &Label3D, b: &Label3D) -> f64 {
        match self {
            Metric::Ap3d => iou3d(a, b),
            Metric::ApBev => bev_iou_labels(a, b),
        }
    }
}

/// One row of the `eval` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub difficulty: Difficulty,
    pub metric: Metric,
    pub iou_threshold: f64,
    pub value: f64,
}

/// A scene's predictions (with scores) and ground truth.
pub struct EvalScene {
    pub predictions: Vec<(Label3D, f64)>,
    pub ground_truth: Vec<Label3D>,
}

/// AP_R40 pooled over many scenes for one class.
///
/// Each scene is matched independently; the ranked outcomes are then merged
/// by score before the precision/recall curve is built.
pub fn evaluate_scenes(
    scenes: &[EvalScene],
    class_name: &str,
    metric: Metric,
    iou_threshold: f64,
    rule: &DifficultyRule,
) -> f64 {
    let mut ranked: Vec<(f64, usize, MatchOutcome)> = Vec::new();
    let mut num_gt = 0;
    let mut seq = 0;
    for scene in scenes {
        let preds: Vec<(Label3D, f64)> = scene
            .predictions
            .iter()
            .filter(|(l, _)| l.class_name == class_name)
            .cloned()
            .collect();
        let gts: Vec<Label3D> =
            scene.ground_truth.iter().filter(|l| l.class_name == class_name).cloned().collect();
        let (outcomes, n) =
            match_predictions(&preds, &gts, |a, b| metric.iou(a, b), iou_threshold, rule);
        num_gt += n;
        let mut scores: Vec<f64> = preds.iter().map(|p| p.1).collect();
        scores.sort_by(|a, b| b.total_cmp(a));
        for (score, outcome) in scores.into_iter().zip(outcomes) {
            ranked.push((score, seq, outcome));
            seq += 1;
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let outcomes: Vec<MatchOutcome> = ranked.into_iter().map(|r| r.2).collect();
    ap_from_outcomes(&outcomes, num_gt)
}

/// All difficulty x metric rows at one IoU threshold.
pub fn evaluate_all(scenes: &[EvalScene], class_name: &str, iou_threshold: f64) -> Vec<EvalRow> {
    let mut rows = Vec::new();
    for difficulty in Difficulty::ALL {
        for metric in [Metric::Ap3d, Metric::ApBev] {
            rows.push(EvalRow {
                difficulty,
                metric,
                iou_threshold,
                value: evaluate_scenes(scenes, class_name, metric, iou_threshold, &difficulty.rule()),
            });
        }
    }
    rows
}

pub fn format_eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("difficulty,metric,iou_threshold,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6}\n",
            r.difficulty.name(),
            r.metric.name(),
            r.iou_threshold,
            r.value
        ));
    }
    out
}
