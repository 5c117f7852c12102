use std::path::Path;

use super::IoError;

/// Binary raster, row-major, 0 = background and 255 = foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskRaster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MaskRaster {
    /// Builds a mask, normalizing every nonzero byte to 255.
    pub fn new(width: usize, height: usize, mut data: Vec<u8>) -> Result<Self, IoError> {
        if data.len() != width * height {
            return Err(IoError::Format(format!(
                "mask data has {} bytes, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        for v in &mut data {
            if *v != 0 {
                *v = 255;
            }
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self { width, height, data: vec![if value { 255 } else { 0 }; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 255 } else { 0 });
            }
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

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = if value { 255 } else { 0 };
    }

    pub fn is_empty_area(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

fn pgm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], IoError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(IoError::Format("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, IoError> {
    let tok = pgm_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| IoError::Format(format!("PGM {what} is not a number")))
}

/// Reads a binary (P5) PGM with maxval 255.
pub fn read_mask(bytes: &[u8]) -> Result<MaskRaster, IoError> {
    let mut pos = 0;
    if pgm_token(bytes, &mut pos)? != b"P5" {
        return Err(IoError::Format("mask is not a binary PGM (magic P5)".into()));
    }
    let width = pgm_number(bytes, &mut pos, "width")?;
    let height = pgm_number(bytes, &mut pos, "height")?;
    let maxval = pgm_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(IoError::Format(format!("PGM maxval {maxval} != 255")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(IoError::Format("truncated PGM header".into()));
    }
    pos += 1;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| IoError::Format("PGM dimensions overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() < n {
        return Err(IoError::Format(format!(
            "truncated PGM payload: {} of {} bytes",
            payload.len(),
            n
        )));
    }
    MaskRaster::new(width, height, payload[..n].to_vec())
}

pub fn write_mask(mask: &MaskRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

pub fn read_mask_file(path: &Path) -> Result<MaskRaster, IoError> {
    let bytes = std::fs::read(path).map_err(|e| IoError::io(path, e))?;
    read_mask(&bytes).map_err(|e| e.in_file(path))
}
