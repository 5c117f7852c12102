use std::fmt::Write as _;
use std::path::Path;

use super::IoError;
use crate::geometry::{BBox2D, Dims, Label3D, Vec3};

/// Parses one devkit label line (15 fields, or 16 with a trailing score).
///
/// `line_no` is 1-based and only used for error reporting.
pub fn parse_label_line(line: &str, line_no: usize) -> Result<Label3D, IoError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(IoError::Parse {
            line: line_no,
            msg: format!("expected 15 or 16 fields, found {}", fields.len()),
        });
    }
    let num = |i: usize| -> Result<f64, IoError> {
        let v: f64 = fields[i].parse().map_err(|_| IoError::Parse {
            line: line_no,
            msg: format!("field {} ({:?}) is not a number", i + 1, fields[i]),
        })?;
        if !v.is_finite() {
            return Err(IoError::Parse {
                line: line_no,
                msg: format!("field {} is not finite", i + 1),
            });
        }
        Ok(v)
    };
    let occlusion: u8 = fields[2].parse().map_err(|_| IoError::Parse {
        line: line_no,
        msg: format!("occlusion {:?} is not an integer", fields[2]),
    })?;
    Ok(Label3D {
        class_name: fields[0].to_string(),
        truncation: num(1)?,
        occlusion,
        alpha: num(3)?,
        bbox2d: BBox2D::new(num(4)?, num(5)?, num(6)?, num(7)?),
        dims: Dims { h: num(8)?, w: num(9)?, l: num(10)? },
        location: Vec3::new(num(11)?, num(12)?, num(13)?),
        rotation_y: num(14)?,
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    })
}

/// Devkit field order with two decimals per float.
pub fn format_label_line(label: &Label3D) -> String {
    let mut s = String::with_capacity(96);
    let _ = write!(s, "{} {:.2} {} {:.2}", label.class_name, label.truncation, label.occlusion, label.alpha);
    let b = &label.bbox2d;
    let d = &label.dims;
    let p = &label.location;
    for v in [b.left, b.top, b.right, b.bottom, d.h, d.w, d.l, p.x, p.y, p.z, label.rotation_y] {
        let _ = write!(s, " {v:.2}");
    }
    if let Some(score) = label.score {
        let _ = write!(s, " {score:.2}");
    }
    s
}

/// Parses a whole label file; blank lines are skipped.
pub fn parse_label_file(text: &str) -> Result<Vec<Label3D>, IoError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, i + 1))
        .collect()
}

pub fn format_label_file(labels: &[Label3D]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&format_label_line(l));
        out.push('\n');
    }
    out
}

pub fn read_label_file(path: &Path) -> Result<Vec<Label3D>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_label_file(&text).map_err(|e| e.in_file(path))
}
