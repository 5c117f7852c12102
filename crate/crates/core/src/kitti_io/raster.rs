//! Raw RGBA rasters and the `IMG1` / `PATCH1` containers.
//!
//! Both containers start with their magic, then width and height as
//! little-endian `u32`, then row-major RGBA bytes. A patch container
//! continues with UTF-8 text: a `source_image_id:` line, a `label:` line
//! holding the devkit label, and the source calibration in calib-file
//! syntax.

use std::path::Path;

use super::{format_calib_file, format_label_line, parse_calib_file, parse_label_line, IoError};
use crate::rapa::ObjectPatch;

pub const IMAGE_MAGIC: &[u8] = b"IMG1";
pub const PATCH_MAGIC: &[u8] = b"PATCH1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbaRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbaRaster {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, IoError> {
        if data.len() != width * height * 4 {
            return Err(IoError::Format(format!(
                "RGBA data has {} bytes, expected {}",
                data.len(),
                width * height * 4
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgba: [u8; 4]) -> Self {
        let mut data = Vec::with_capacity(width * height * 4);
        for _ in 0..width * height {
            data.extend_from_slice(&rgba);
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgba: [u8; 4]) {
        let i = (y * self.width + x) * 4;
        self.data[i..i + 4].copy_from_slice(&rgba);
    }

    /// Copy of the `[x0, x1) x [y0, y1)` window.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let (w, h) = (x1.saturating_sub(x0), y1.saturating_sub(y0));
        let mut data = Vec::with_capacity(w * h * 4);
        for y in y0..y1 {
            let row = (y * self.width + x0) * 4;
            data.extend_from_slice(&self.data[row..row + w * 4]);
        }
        Self { width: w, height: h, data }
    }
}

fn write_header(out: &mut Vec<u8>, magic: &[u8], raster: &RgbaRaster) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&(raster.width as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height as u32).to_le_bytes());
    out.extend_from_slice(&raster.data);
}

/// Parses magic + size + pixels, returning the raster and the trailing bytes.
fn read_header<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(RgbaRaster, &'a [u8]), IoError> {
    let name = String::from_utf8_lossy(magic);
    if !bytes.starts_with(magic) {
        return Err(IoError::Format(format!("missing {name} magic")));
    }
    let rest = &bytes[magic.len()..];
    if rest.len() < 8 {
        return Err(IoError::Format(format!("truncated {name} header")));
    }
    let width = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(rest[4..8].try_into().unwrap()) as usize;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| IoError::Format(format!("{name} dimensions overflow")))?;
    let rest = &rest[8..];
    if rest.len() < n {
        return Err(IoError::Format(format!(
            "truncated {name} payload: {} of {} bytes",
            rest.len(),
            n
        )));
    }
    Ok((RgbaRaster { width, height, data: rest[..n].to_vec() }, &rest[n..]))
}

pub fn write_image(raster: &RgbaRaster) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + raster.data.len());
    write_header(&mut out, IMAGE_MAGIC, raster);
    out
}

pub fn read_image(bytes: &[u8]) -> Result<RgbaRaster, IoError> {
    let (raster, rest) = read_header(bytes, IMAGE_MAGIC)?;
    if !rest.is_empty() {
        return Err(IoError::Format(format!("{} trailing bytes after IMG1 payload", rest.len())));
    }
    Ok(raster)
}

pub fn read_image_file(path: &Path) -> Result<RgbaRaster, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    read_image(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_patch(patch: &ObjectPatch) -> Vec<u8> {
    let mut out = Vec::new();
    write_header(&mut out, PATCH_MAGIC, &patch.raster);
    let mut text = format!(
        "source_image_id: {}\nlabel: {}\n",
        patch.source_image_id,
        format_label_line(&patch.source_label)
    );
    text.push_str(&format_calib_file(&super::CalibFile::from_rig(&patch.source_rig)));
    out.extend_from_slice(text.as_bytes());
    out
}

pub fn read_patch(bytes: &[u8]) -> Result<ObjectPatch, IoError> {
    let (raster, rest) = read_header(bytes, PATCH_MAGIC)?;
    let text = std::str::from_utf8(rest)
        .map_err(|_| IoError::Format("patch text section is not UTF-8".into()))?;
    let mut source_image_id = None;
    let mut label = None;
    let mut calib_text = String::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(v) = line.strip_prefix("source_image_id:") {
            source_image_id = Some(v.trim().to_string());
        } else if let Some(v) = line.strip_prefix("label:") {
            label = Some(parse_label_line(v, i + 1)?);
        } else {
            calib_text.push_str(line);
            calib_text.push('\n');
        }
    }
    let source_image_id =
        source_image_id.ok_or_else(|| IoError::Format("patch lacks source_image_id".into()))?;
    let source_label = label.ok_or_else(|| IoError::Format("patch lacks a label line".into()))?;
    let source_rig = parse_calib_file(&calib_text)?.to_rig()?;
    ObjectPatch::new(raster, source_label, source_rig, source_image_id)
        .map_err(|e| IoError::Validation(e.to_string()))
}

pub fn read_patch_file(path: &Path) -> Result<ObjectPatch, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    read_patch(&bytes).map_err(|e| e.in_file(path))
}
