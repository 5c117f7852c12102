//! JSON-lines exchange format at the detector boundary.
//!
//! One object per line: `{"image_id", "label", "sigma", "feature"}` where
//! `label` is a 16-field devkit line (score last). An optional integer `id`
//! names the prediction; lines without one get their 0-based line index.

use serde::{Deserialize, Serialize};

use super::{format_label_line, parse_label_line, IoError};
use crate::pbf::{FeatureVec, Prediction, RejectReason, Rejected, Scored};

#[derive(Debug, Serialize, Deserialize)]
struct PredictionWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    image_id: String,
    label: String,
    sigma: f64,
    feature: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    s_proto: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<RejectReason>,
}

impl PredictionWire {
    fn from_prediction(p: &Prediction) -> Self {
        Self {
            id: Some(p.id),
            image_id: p.image_id.clone(),
            label: format_label_line(&p.label),
            sigma: p.sigma,
            feature: p.feature.values().to_vec(),
            s_depth: None,
            s_proto: None,
            reason: None,
        }
    }
}

pub fn parse_prediction_line(line: &str, line_no: usize) -> Result<Prediction, IoError> {
    let wire: PredictionWire = serde_json::from_str(line)
        .map_err(|e| IoError::Parse { line: line_no, msg: e.to_string() })?;
    let label = parse_label_line(&wire.label, line_no)?;
    if label.score.is_none() {
        return Err(IoError::Parse {
            line: line_no,
            msg: "prediction label needs a 16th score field".into(),
        });
    }
    if !wire.sigma.is_finite() || wire.feature.iter().any(|v| !v.is_finite()) {
        return Err(IoError::Parse { line: line_no, msg: "non-finite sigma or feature".into() });
    }
    Ok(Prediction {
        id: wire.id.unwrap_or(line_no.saturating_sub(1) as u64),
        image_id: wire.image_id,
        label,
        feature: FeatureVec::new(wire.feature),
        sigma: wire.sigma,
    })
}

/// Parses a predictions file; blank lines are skipped but still counted.
pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_prediction_line(l, i + 1))
        .collect()
}

pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(&PredictionWire::from_prediction(p)).unwrap());
        out.push('\n');
    }
    out
}

pub fn format_selected(selected: &[Scored]) -> String {
    let mut out = String::new();
    for s in selected {
        let mut w = PredictionWire::from_prediction(&s.prediction);
        w.s_depth = Some(s.s_depth);
        w.s_proto = Some(s.s_proto);
        out.push_str(&serde_json::to_string(&w).unwrap());
        out.push('\n');
    }
    out
}

pub fn format_rejected(rejected: &[Rejected]) -> String {
    let mut out = String::new();
    for r in rejected {
        let mut w = PredictionWire::from_prediction(&r.prediction);
        w.s_depth = Some(r.s_depth);
        w.s_proto = r.s_proto;
        w.reason = Some(r.reason);
        out.push_str(&serde_json::to_string(&w).unwrap());
        out.push('\n');
    }
    out
}
