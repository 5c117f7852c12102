//! Per-image store of sparse ground truth and accepted pseudo-labels,
//! persisted as JSON lines sorted by image id.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::evalkit::bev_iou_labels;
use crate::geometry::Label3D;

/// Pseudo-label pairs overlapping above this BEV IoU are duplicates.
pub const DEDUP_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    SparseGt,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBankEntry {
    pub label: Label3D,
    pub source: EntrySource,
    pub epoch_added: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_proto: Option<f64>,
}

impl GtBankEntry {
    pub fn sparse(label: Label3D) -> Self {
        Self { label, source: EntrySource::SparseGt, epoch_added: 0, s_depth: None, s_proto: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtBankRecord {
    pub image_id: String,
    pub entries: Vec<GtBankEntry>,
}

impl GtBankRecord {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self { image_id: image_id.into(), entries: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        for e in &self.entries {
            if e.source == EntrySource::SparseGt && e.epoch_added != 0 {
                return Err(IoError::Validation(format!(
                    "image {}: sparse_gt entry with epoch_added {}",
                    self.image_id, e.epoch_added
                )));
            }
        }
        let pseudo: Vec<&Label3D> = self
            .entries
            .iter()
            .filter(|e| e.source == EntrySource::Pseudo)
            .map(|e| &e.label)
            .collect();
        for (i, a) in pseudo.iter().enumerate() {
            for b in &pseudo[i + 1..] {
                let iou = bev_iou_labels(a, b);
                if iou > DEDUP_IOU {
                    return Err(IoError::Validation(format!(
                        "image {}: pseudo-labels overlap with BEV IoU {iou:.3}",
                        self.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, source: EntrySource) -> usize {
        self.entries.iter().filter(|e| e.source == source).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GtBank {
    records: BTreeMap<String, GtBankRecord>,
}

impl GtBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, image_id: &str) -> Option<&GtBankRecord> {
        self.records.get(image_id)
    }

    pub fn record_mut(&mut self, image_id: &str) -> &mut GtBankRecord {
        self.records
            .entry(image_id.to_string())
            .or_insert_with(|| GtBankRecord::new(image_id))
    }

    pub fn records(&self) -> impl Iterator<Item = &GtBankRecord> {
        self.records.values()
    }

    pub fn len_images(&self) -> usize {
        self.records.len()
    }

    /// Total number of entries across all images.
    pub fn total_entries(&self) -> usize {
        self.records.values().map(|r| r.entries.len()).sum()
    }

    pub fn add_sparse(&mut self, image_id: &str, labels: impl IntoIterator<Item = Label3D>) {
        let rec = self.record_mut(image_id);
        rec.entries.extend(labels.into_iter().map(GtBankEntry::sparse));
    }

    pub fn insert_record(&mut self, record: GtBankRecord) -> Result<(), IoError> {
        if self.records.contains_key(&record.image_id) {
            return Err(IoError::Validation(format!("duplicate image_id {}", record.image_id)));
        }
        self.records.insert(record.image_id.clone(), record);
        Ok(())
    }

    /// Labels of one image, empty when the image has no record.
    pub fn labels(&self, image_id: &str) -> Vec<Label3D> {
        self.records
            .get(image_id)
            .map(|r| r.entries.iter().map(|e| e.label.clone()).collect())
            .unwrap_or_default()
    }
}

pub fn format_gt_bank(bank: &GtBank) -> String {
    let mut out = String::new();
    for rec in bank.records.values() {
        out.push_str(&serde_json::to_string(rec).expect("bank records always serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_gt_bank(text: &str) -> Result<GtBank, IoError> {
    let mut bank = GtBank::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: GtBankRecord = serde_json::from_str(line)
            .map_err(|e| IoError::Parse { line: i + 1, msg: e.to_string() })?;
        rec.validate()?;
        bank.insert_record(rec)?;
    }
    Ok(bank)
}

pub fn load_gt_bank(path: &Path) -> Result<GtBank, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_gt_bank(&text).map_err(|e| e.in_file(path))
}

/// Writes to a temporary sibling file and renames it over `path`.
pub fn save_gt_bank(path: &Path, bank: &GtBank) -> Result<(), IoError> {
    write_atomic(path, format_gt_bank(bank).as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| IoError::Validation(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| IoError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| IoError::io(&tmp, e))?;
        f.sync_all().map_err(|e| IoError::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| IoError::io(path, e))
}
