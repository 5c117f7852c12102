use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4};

use super::IoError;
use crate::geometry::{CameraRig, RigidTransform};

/// Image size assumed when a calibration file carries no `image_size` line.
pub const DEFAULT_IMAGE_SIZE: (u32, u32) = (1242, 375);

/// Matrices of one KITTI calibration file.
///
/// Besides the devkit keys, two optional keys are understood:
/// `Tr_extrinsic` (a 3x4 `[R|T]` camera pose used when moving objects
/// between scenes) and `image_size` (`width height`).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibFile {
    pub p: [Option<Matrix3x4<f64>>; 4],
    pub r0_rect: Option<Matrix3<f64>>,
    pub tr_velo_to_cam: Option<Matrix3x4<f64>>,
    pub extrinsic: Option<Matrix3x4<f64>>,
    pub image_size: Option<(u32, u32)>,
}

impl CalibFile {
    pub fn p2(&self) -> &Matrix3x4<f64> {
        self.p[2].as_ref().expect("P2 presence is checked on construction")
    }

    pub fn from_rig(rig: &CameraRig) -> Self {
        let mut p = [None; 4];
        p[2] = Some(rig.projection);
        Self {
            p,
            r0_rect: None,
            tr_velo_to_cam: None,
            extrinsic: Some(rig.extrinsic.to_matrix3x4()),
            image_size: Some((rig.width, rig.height)),
        }
    }

    pub fn to_rig(&self) -> Result<CameraRig, IoError> {
        let extrinsic = match &self.extrinsic {
            Some(m) => RigidTransform::from_matrix3x4(m)
                .map_err(|e| IoError::Validation(e.to_string()))?,
            None => RigidTransform::identity(),
        };
        let (w, h) = self.image_size.unwrap_or(DEFAULT_IMAGE_SIZE);
        CameraRig::new(*self.p2(), extrinsic, w, h).map_err(|e| IoError::Validation(e.to_string()))
    }
}

fn parse_values(key: &str, rest: &str, expected: usize, line_no: usize) -> Result<Vec<f64>, IoError> {
    let values: Vec<f64> = rest
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| IoError::Parse {
                line: line_no,
                msg: format!("{key}: {t:?} is not a finite number"),
            })
        })
        .collect::<Result<_, _>>()?;
    if values.len() != expected {
        return Err(IoError::Parse {
            line: line_no,
            msg: format!("{key}: expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

pub fn parse_calib_file(text: &str) -> Result<CalibFile, IoError> {
    let mut calib = CalibFile {
        p: [None; 4],
        r0_rect: None,
        tr_velo_to_cam: None,
        extrinsic: None,
        image_size: None,
    };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        let m34 = |v: Vec<f64>| Matrix3x4::from_row_slice(&v);
        match key {
            "P0" | "P1" | "P2" | "P3" => {
                let idx = (key.as_bytes()[1] - b'0') as usize;
                calib.p[idx] = Some(m34(parse_values(key, rest, 12, line_no)?));
            }
            "R0_rect" => {
                calib.r0_rect =
                    Some(Matrix3::from_row_slice(&parse_values(key, rest, 9, line_no)?));
            }
            "Tr_velo_to_cam" => {
                calib.tr_velo_to_cam = Some(m34(parse_values(key, rest, 12, line_no)?));
            }
            "Tr_extrinsic" => {
                calib.extrinsic = Some(m34(parse_values(key, rest, 12, line_no)?));
            }
            "image_size" => {
                let v = parse_values(key, rest, 2, line_no)?;
                if v.iter().any(|x| *x < 1.0 || x.fract() != 0.0 || *x > u32::MAX as f64) {
                    return Err(IoError::Parse {
                        line: line_no,
                        msg: "image_size must be two positive integers".into(),
                    });
                }
                calib.image_size = Some((v[0] as u32, v[1] as u32));
            }
            _ => {}
        }
    }
    if calib.p[2].is_none() {
        return Err(IoError::Validation("calibration is missing P2".into()));
    }
    Ok(calib)
}

fn push_row(out: &mut String, key: &str, values: impl Iterator<Item = f64>) {
    out.push_str(key);
    out.push(':');
    for v in values {
        out.push_str(&format!(" {v:e}"));
    }
    out.push('\n');
}

fn row_major<const R: usize, const C: usize>(
    m: &nalgebra::SMatrix<f64, R, C>,
) -> impl Iterator<Item = f64> + '_ {
    (0..R).flat_map(move |r| (0..C).map(move |c| m[(r, c)]))
}

/// Writes every present matrix with shortest round-trip float formatting.
pub fn format_calib_file(calib: &CalibFile) -> String {
    let mut out = String::new();
    for (i, p) in calib.p.iter().enumerate() {
        if let Some(p) = p {
            push_row(&mut out, &format!("P{i}"), row_major(p));
        }
    }
    if let Some(r) = &calib.r0_rect {
        push_row(&mut out, "R0_rect", row_major(r));
    }
    if let Some(t) = &calib.tr_velo_to_cam {
        push_row(&mut out, "Tr_velo_to_cam", row_major(t));
    }
    if let Some(t) = &calib.extrinsic {
        push_row(&mut out, "Tr_extrinsic", row_major(t));
    }
    if let Some((w, h)) = calib.image_size {
        out.push_str(&format!("image_size: {w} {h}\n"));
    }
    out
}

pub fn read_calib_file(path: &Path) -> Result<CalibFile, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_calib_file(&text).map_err(|e| e.in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;

    #[test]
    fn p2_positional_fill() {
        let text = "P0: 1 0 0 0 0 1 0 0 0 0 1 0\n\
                    P2: 7.21e+02 0 6.09e+02 4.48e+01 0 7.21e+02 1.72e+02 2.16e-01 0 0 1 2.74e-03\n\
                    Tr_imu_to_velo: 1 2 3\n";
        let c = parse_calib_file(text).unwrap();
        let p2 = c.p2();
        assert_eq!(p2[(0, 0)], 721.0);
        assert_eq!(p2[(0, 2)], 609.0);
        assert_eq!(p2[(0, 3)], 44.8);
        assert_eq!(p2[(1, 3)], 0.216);
        assert_eq!(p2[(2, 3)], 2.74e-3);
        assert!(c.p[1].is_none());
    }

    #[test]
    fn identity_p2_is_perspective_divide() {
        let c = parse_calib_file("P2: 1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
        let rig = c.to_rig().unwrap();
        let (u, v) = rig.project_point(&Vec3::new(2.0, 3.0, 4.0));
        assert_eq!((u, v), (0.5, 0.75));
    }

    #[test]
    fn missing_p2() {
        assert!(matches!(
            parse_calib_file("P0: 1 0 0 0 0 1 0 0 0 0 1 0\n"),
            Err(IoError::Validation(_))
        ));
    }

    #[test]
    fn wrong_value_count() {
        assert!(matches!(
            parse_calib_file("P2: 1 0 0 0 0 1 0 0 0 0 1\n"),
            Err(IoError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn rig_round_trip_through_text() {
        let rig = CameraRig::pinhole(721.5377, 609.5593, 172.854, 1242, 375).with_extrinsic(
            RigidTransform::from_yaw_translation(0.01, Vec3::new(0.25, 0.0, -0.1)),
        );
        let text = format_calib_file(&CalibFile::from_rig(&rig));
        let back = parse_calib_file(&text).unwrap().to_rig().unwrap();
        assert_eq!(back, rig);
    }
}
