//! Readers and writers for label, calibration, mask, raster, GT Bank and
//! prediction files.
//!
//! File naming: labels and calibrations are `<id>.txt` (in sibling
//! directories), masks `<id>.pgm`, patches `<source_id>_<object_index>.patch`,
//! composited images `<id>.img`, and the GT Bank `gt_bank.jsonl`.

mod calib;
mod gt_bank;
mod label;
mod mask;
mod predictions;
mod raster;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use calib::{
    format_calib_file, parse_calib_file, read_calib_file, CalibFile, DEFAULT_IMAGE_SIZE,
};
pub use gt_bank::{
    format_gt_bank, load_gt_bank, parse_gt_bank, save_gt_bank, write_atomic, EntrySource, GtBank,
    GtBankEntry, GtBankRecord, DEDUP_IOU,
};
pub use label::{
    format_label_file, format_label_line, parse_label_file, parse_label_line, read_label_file,
};
pub use mask::{read_mask, read_mask_file, write_mask, MaskRaster};
pub use predictions::{
    format_predictions, format_rejected, format_selected, parse_prediction_line,
    parse_predictions,
};
pub use raster::{
    read_image, read_image_file, read_patch, read_patch_file, write_image, write_patch,
    RgbaRaster, IMAGE_MAGIC, PATCH_MAGIC,
};

pub const GT_BANK_FILE: &str = "gt_bank.jsonl";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<IoError>,
    },
}

impl IoError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (IoError::Io { .. } | IoError::InFile { .. }) => e,
            e => IoError::InFile { path: path.to_path_buf(), source: Box::new(e) },
        }
    }

    /// True when the failure came from the filesystem rather than content.
    pub fn is_io(&self) -> bool {
        match self {
            IoError::Io { .. } => true,
            IoError::InFile { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

/// Zero-padded six-digit image id for an index.
pub fn image_id(index: usize) -> String {
    format!("{index:06}")
}

pub fn patch_file_name(source_id: &str, object_index: usize) -> String {
    format!("{source_id}_{object_index}.patch")
}
