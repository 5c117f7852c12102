//! Prototype-based filtering of teacher predictions.
//!
//! A prediction becomes a pseudo-label only if its depth reliability
//! `exp(-sigma)` and its best prototype cosine similarity both exceed their
//! thresholds. Accepted features refine the prototype bank and the labels
//! enter the GT Bank.

mod bank;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::bev_iou_labels;
use crate::geometry::Label3D;
use crate::kitti_io::{EntrySource, GtBank, GtBankEntry, DEDUP_IOU};

pub use bank::{
    initialize_prototypes, refine_prototypes, BankConfig, ClassBanks, PrototypeBank,
    PrototypeSlot, DEFAULT_CLASS,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PbfError {
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("feature dimension {found} does not match {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("prototype bank is empty")]
    EmptyBank,
    #[error("uncertainty scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// RoI feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVec(Vec<f64>);

impl FeatureVec {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn dot(&self, other: &FeatureVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(self.0.iter().map(|v| v * c).collect())
    }
}

pub fn cosine_similarity(a: &FeatureVec, b: &FeatureVec) -> Result<f64, PbfError> {
    if a.dim() != b.dim() {
        return Err(PbfError::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(PbfError::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Highest cosine similarity between `f` and any prototype.
pub fn proto_score(f: &FeatureVec, bank: &PrototypeBank) -> Result<f64, PbfError> {
    bank.nearest(f).map(|(_, s)| s)
}

/// Cumulative update `(1 - beta) p + beta f`.
pub fn update_prototype(p: &FeatureVec, f: &FeatureVec, beta: f64) -> Result<FeatureVec, PbfError> {
    if p.dim() != f.dim() {
        return Err(PbfError::DimensionMismatch { expected: p.dim(), found: f.dim() });
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(PbfError::InvalidConfig(format!("beta = {beta} outside [0, 1]")));
    }
    let keep = 1.0 - beta;
    Ok(FeatureVec(p.0.iter().zip(&f.0).map(|(p, f)| keep * p + beta * f).collect()))
}

/// Laplacian aleatoric depth loss for a positive uncertainty scale.
pub fn depth_nll(d_gt: f64, d_pred: f64, sigma: f64) -> Result<f64, PbfError> {
    if !(sigma > 0.0) {
        return Err(PbfError::NonPositiveScale(sigma));
    }
    Ok(std::f64::consts::SQRT_2 / sigma * (d_gt - d_pred).abs() + sigma.ln())
}

/// Geometric reliability `exp(-sigma)` of a raw (log-scale) uncertainty.
pub fn depth_score(sigma: f64) -> f64 {
    (-sigma).exp()
}

/// A teacher prediction at the detector boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: u64,
    pub image_id: String,
    pub label: Label3D,
    pub feature: FeatureVec,
    /// Raw uncertainty head output; may be negative.
    pub sigma: f64,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.label.score.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PbfConfig {
    pub tau_depth: f64,
    pub tau_proto: f64,
}

impl Default for PbfConfig {
    fn default() -> Self {
        Self { tau_depth: 1.0, tau_proto: 0.85 }
    }
}

impl PbfConfig {
    pub fn validate(&self) -> Result<(), PbfError> {
        if !(self.tau_proto > -1.0 && self.tau_proto <= 1.0) {
            return Err(PbfError::InvalidConfig(format!(
                "tau_proto = {} outside (-1, 1]",
                self.tau_proto
            )));
        }
        if !self.tau_depth.is_finite() {
            return Err(PbfError::InvalidConfig("tau_depth must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Depth,
    Proto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub prediction: Prediction,
    pub s_depth: f64,
    pub s_proto: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub prediction: Prediction,
    pub s_depth: f64,
    /// Absent when the depth stage already rejected the prediction, or the
    /// feature was a zero vector.
    pub s_proto: Option<f64>,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Selection {
    pub selected: Vec<Scored>,
    pub rejected: Vec<Rejected>,
}

/// Two-stage filter: `S_depth > tau_depth`, then `S_proto > tau_proto`.
pub fn select_pseudo_labels(
    preds: &[Prediction],
    bank: &PrototypeBank,
    cfg: &PbfConfig,
) -> Result<Selection, PbfError> {
    if bank.is_empty() {
        return Err(PbfError::EmptyBank);
    }
    let mut out = Selection::default();
    for p in preds {
        let s_depth = depth_score(p.sigma);
        if !(s_depth > cfg.tau_depth) {
            out.rejected.push(Rejected {
                prediction: p.clone(),
                s_depth,
                s_proto: None,
                reason: RejectReason::Depth,
            });
            continue;
        }
        let s_proto = match proto_score(&p.feature, bank) {
            Ok(s) => Some(s),
            Err(PbfError::ZeroVector) => None,
            Err(e) => return Err(e),
        };
        match s_proto {
            Some(s) if s > cfg.tau_proto => {
                out.selected.push(Scored { prediction: p.clone(), s_depth, s_proto: s })
            }
            _ => out.rejected.push(Rejected {
                prediction: p.clone(),
                s_depth,
                s_proto,
                reason: RejectReason::Proto,
            }),
        }
    }
    Ok(out)
}

/// Appends selected labels of one image as pseudo entries, skipping any that
/// overlap an existing entry of that image above the dedup IoU.
///
/// Returns the number of entries inserted.
pub fn gt_bank_insert(bank: &mut GtBank, image_id: &str, selected: &[Scored], epoch: u32) -> usize {
    let record = bank.record_mut(image_id);
    let mut inserted = 0;
    for s in selected {
        let duplicate =
            record.entries.iter().any(|e| bev_iou_labels(&e.label, &s.prediction.label) > DEDUP_IOU);
        if duplicate {
            continue;
        }
        record.entries.push(GtBankEntry {
            label: s.prediction.label.clone(),
            source: EntrySource::Pseudo,
            epoch_added: epoch,
            s_depth: Some(s.s_depth),
            s_proto: Some(s.s_proto),
        });
        inserted += 1;
    }
    inserted
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox2D, Dims, Vec3};
    use std::f64::consts::{FRAC_1_SQRT_2, LN_2, SQRT_2};

    fn fv(v: &[f64]) -> FeatureVec {
        FeatureVec::new(v.to_vec())
    }

    fn car(x: f64, z: f64) -> Label3D {
        Label3D {
            class_name: "Car".into(),
            truncation: 0.0,
            occlusion: 0,
            alpha: 0.0,
            bbox2d: BBox2D::new(0.0, 0.0, 10.0, 10.0),
            dims: Dims { h: 1.5, w: 1.6, l: 4.0 },
            location: Vec3::new(x, 1.65, z),
            rotation_y: 0.0,
            score: Some(0.9),
        }
    }

    fn pred(id: u64, sigma: f64, feature: &[f64]) -> Prediction {
        Prediction { id, image_id: "000001".into(), label: car(0.0, 10.0 + id as f64 * 20.0), feature: fv(feature), sigma }
    }

    fn two_slot_bank() -> PrototypeBank {
        initialize_prototypes([fv(&[1.0, 0.0]), fv(&[0.0, 1.0])], BankConfig::default()).unwrap()
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&fv(&[3.0, 4.0]), &fv(&[3.0, 4.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&fv(&[1.0, 0.0]), &fv(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&fv(&[1.0, 0.0]), &fv(&[1.0, 1.0])).unwrap();
        assert!((c - FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(cosine_similarity(&fv(&[0.0, 0.0]), &fv(&[1.0, 1.0])), Err(PbfError::ZeroVector));
    }

    #[test]
    fn proto_score_cases() {
        let bank = two_slot_bank();
        assert_eq!(proto_score(&fv(&[0.0, 2.0]), &bank).unwrap(), 1.0);
        assert!((proto_score(&fv(&[1.0, 1.0]), &bank).unwrap() - FRAC_1_SQRT_2).abs() < 1e-12);
        let single = initialize_prototypes([fv(&[1.0, 0.0])], BankConfig::default()).unwrap();
        assert_eq!(proto_score(&fv(&[0.0, 1.0]), &single).unwrap(), 0.0);
        let empty = PrototypeBank::new(BankConfig::default()).unwrap();
        assert_eq!(proto_score(&fv(&[1.0]), &empty), Err(PbfError::EmptyBank));
    }

    #[test]
    fn update_cases() {
        let p = fv(&[1.0, 0.0]);
        let f = fv(&[0.0, 1.0]);
        assert_eq!(update_prototype(&p, &f, 0.0).unwrap(), p);
        assert_eq!(update_prototype(&p, &f, 1.0).unwrap(), f);
        assert_eq!(update_prototype(&p, &f, 0.5).unwrap().values(), &[0.5, 0.5]);
        assert!(update_prototype(&p, &fv(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn depth_loss_and_score() {
        assert_eq!(depth_nll(5.0, 5.0, 1.0).unwrap(), 0.0);
        assert!((depth_nll(5.0, 4.0, 1.0).unwrap() - SQRT_2).abs() < 1e-12);
        assert!((depth_nll(5.0, 5.0, 2.0).unwrap() - LN_2).abs() < 1e-12);
        assert!(matches!(depth_nll(1.0, 1.0, 0.0), Err(PbfError::NonPositiveScale(_))));
        assert_eq!(depth_score(0.0), 1.0);
        assert!((depth_score(1.0) - 0.36788).abs() < 1e-5);
        assert!((depth_score(-0.5) - 1.64872).abs() < 1e-5);
    }

    #[test]
    fn selection_stages() {
        let bank = two_slot_bank();
        let preds = vec![
            pred(0, -0.1, &[1.0, 0.0]),
            pred(1, 0.5, &[1.0, 0.0]),
            pred(2, -0.1, &[1.0, -1.0]),
        ];
        let mut cfg = PbfConfig::default();
        let sel = select_pseudo_labels(&preds, &bank, &cfg).unwrap();
        assert_eq!(sel.selected.len(), 1);
        assert_eq!(sel.selected[0].prediction.id, 0);
        assert!((sel.selected[0].s_depth - 0.1f64.exp()).abs() < 1e-12);
        assert_eq!(sel.selected[0].s_proto, 1.0);
        assert_eq!(sel.rejected[0].reason, RejectReason::Depth);
        assert_eq!(sel.rejected[0].s_proto, None);
        assert_eq!(sel.rejected[1].reason, RejectReason::Proto);
        assert!(sel.rejected[1].s_proto.unwrap() <= 0.85);

        // orthogonal to every slot
        let single = initialize_prototypes([fv(&[1.0, 0.0])], BankConfig::default()).unwrap();
        let sel = select_pseudo_labels(&[pred(3, -0.1, &[0.0, 1.0])], &single, &cfg).unwrap();
        assert_eq!(sel.rejected[0].s_proto, Some(0.0));

        // thresholds are strict
        cfg.tau_proto = 1.0;
        let sel = select_pseudo_labels(&preds[..1], &bank, &cfg).unwrap();
        assert!(sel.selected.is_empty());
        let sel = select_pseudo_labels(&[pred(4, 0.0, &[1.0, 0.0])], &bank, &PbfConfig::default()).unwrap();
        assert_eq!(sel.rejected[0].reason, RejectReason::Depth);
    }

    #[test]
    fn zero_feature_is_a_proto_rejection() {
        let sel = select_pseudo_labels(&[pred(0, -1.0, &[0.0, 0.0])], &two_slot_bank(), &PbfConfig::default())
            .unwrap();
        assert_eq!(sel.rejected[0].reason, RejectReason::Proto);
        assert_eq!(sel.rejected[0].s_proto, None);
    }

    #[test]
    fn gt_bank_dedup() {
        let mut bank = GtBank::new();
        let scored = |x: f64, z: f64| Scored {
            prediction: Prediction {
                id: 0,
                image_id: "000001".into(),
                label: car(x, z),
                feature: fv(&[1.0]),
                sigma: -0.2,
            },
            s_depth: 1.22,
            s_proto: 0.93,
        };
        assert_eq!(gt_bank_insert(&mut bank, "000001", &[scored(0.0, 10.0)], 1), 1);
        assert_eq!(gt_bank_insert(&mut bank, "000001", &[scored(0.0, 10.0)], 2), 0);
        assert_eq!(bank.total_entries(), 1);
        assert_eq!(gt_bank_insert(&mut bank, "000001", &[scored(0.0, 30.0), scored(0.0, 50.0)], 2), 2);
        let rec = bank.record("000001").unwrap();
        assert_eq!(rec.entries[1].epoch_added, 2);
        assert!(rec.validate().is_ok());
    }
}
