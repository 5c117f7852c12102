//! KITTI-style AP with 40 interpolated recall points.

use serde::{Deserialize, Serialize};

use crate::geometry::Label3D;

pub const RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn rule(self) -> DifficultyRule {
        match self {
            Difficulty::Easy => DifficultyRule::EASY,
            Difficulty::Moderate => DifficultyRule::MODERATE,
            Difficulty::Hard => DifficultyRule::HARD,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }
}

/// Eligibility thresholds of one difficulty bucket (KITTI devkit values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyRule {
    pub difficulty: Difficulty,
    pub min_box_height_px: f64,
    pub max_occlusion: u8,
    pub max_truncation: f64,
}

impl DifficultyRule {
    pub const EASY: Self = Self {
        difficulty: Difficulty::Easy,
        min_box_height_px: 40.0,
        max_occlusion: 0,
        max_truncation: 0.15,
    };
    pub const MODERATE: Self = Self {
        difficulty: Difficulty::Moderate,
        min_box_height_px: 25.0,
        max_occlusion: 1,
        max_truncation: 0.30,
    };
    pub const HARD: Self = Self {
        difficulty: Difficulty::Hard,
        min_box_height_px: 25.0,
        max_occlusion: 2,
        max_truncation: 0.50,
    };

    pub fn is_eligible(&self, gt: &Label3D) -> bool {
        gt.bbox2d.height() >= self.min_box_height_px
            && gt.occlusion <= self.max_occlusion
            && gt.truncation <= self.max_truncation
    }
}

/// Outcome of one ranked prediction after greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    DontCare,
}

/// Greedy matching in descending score order (ties keep input order).
///
/// Returns the outcomes in ranked order and the number of eligible GTs.
pub fn match_predictions<F>(
    predictions: &[(Label3D, f64)],
    ground_truth: &[Label3D],
    iou_fn: F,
    iou_threshold: f64,
    rule: &DifficultyRule,
) -> (Vec<MatchOutcome>, usize)
where
    F: Fn(&Label3D, &Label3D) -> f64,
{
    let eligible: Vec<bool> = ground_truth.iter().map(|g| rule.is_eligible(g)).collect();
    let num_eligible = eligible.iter().filter(|&&e| e).count();

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].1.total_cmp(&predictions[a].1).then(a.cmp(&b)));

    let mut taken = vec![false; ground_truth.len()];
    let mut outcomes = Vec::with_capacity(order.len());
    for idx in order {
        let pred = &predictions[idx].0;
        let mut best: Option<(usize, f64)> = None;
        let mut best_ignored: Option<(usize, f64)> = None;
        for (g, gt) in ground_truth.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = iou_fn(pred, gt);
            if iou < iou_threshold {
                continue;
            }
            let slot = if eligible[g] { &mut best } else { &mut best_ignored };
            // strict comparison keeps the lowest GT index on ties
            if slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            outcomes.push(MatchOutcome::TruePositive);
        } else if let Some((g, _)) = best_ignored {
            taken[g] = true;
            outcomes.push(MatchOutcome::DontCare);
        } else {
            outcomes.push(MatchOutcome::FalsePositive);
        }
    }
    (outcomes, num_eligible)
}

/// Interpolated AP over recall points `1/40 .. 40/40` from ranked outcomes.
pub fn ap_from_outcomes(outcomes: &[MatchOutcome], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(outcomes.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in outcomes {
        match o {
            MatchOutcome::TruePositive => tp += 1,
            MatchOutcome::FalsePositive => fp += 1,
            MatchOutcome::DontCare => continue,
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (tp + fp) as f64));
    }
    // running max from the high-recall end gives max{P(r') : r' >= r}
    let mut envelope = vec![0.0; curve.len()];
    let mut running = 0.0f64;
    for i in (0..curve.len()).rev() {
        running = running.max(curve[i].1);
        envelope[i] = running;
    }
    let mut total = 0.0;
    let mut cursor = 0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        while cursor < curve.len() && curve[cursor].0 < r - 1e-12 {
            cursor += 1;
        }
        if cursor < curve.len() {
            total += envelope[cursor];
        }
    }
    total / RECALL_POINTS as f64
}

pub fn ap_r40<F>(
    predictions: &[(Label3D, f64)],
    ground_truth: &[Label3D],
    iou_fn: F,
    iou_threshold: f64,
    rule: &DifficultyRule,
) -> f64
where
    F: Fn(&Label3D, &Label3D) -> f64,
{
    let (outcomes, num_gt) =
        match_predictions(predictions, ground_truth, iou_fn, iou_threshold, rule);
    ap_from_outcomes(&outcomes, num_gt)
}
