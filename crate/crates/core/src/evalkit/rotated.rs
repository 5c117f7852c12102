//! Rotated rectangle overlap in the bird's-eye-view plane and 3D box IoU.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::geometry::Label3D;

/// Intersections smaller than this are treated as empty.
pub const DEGENERATE_AREA: f64 = 1e-12;

type P2 = Vector2<f64>;

/// Ground-plane footprint: center `(x, z)`, size `(w, l)`, yaw about y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevBox {
    pub center: (f64, f64),
    pub size: (f64, f64),
    pub yaw: f64,
}

impl BevBox {
    pub fn new(x: f64, z: f64, w: f64, l: f64, yaw: f64) -> Self {
        Self { center: (x, z), size: (w, l), yaw }
    }

    pub fn from_label(label: &Label3D) -> Self {
        Self::new(label.location.x, label.location.z, label.dims.w, label.dims.l, label.rotation_y)
    }

    pub fn area(&self) -> f64 {
        self.size.0 * self.size.1
    }

    /// Corners in counter-clockwise order of the (x, z) plane.
    ///
    /// Width runs along local x, length along local z, matching
    /// [`crate::geometry::box3d_corners`].
    pub fn corners(&self) -> [P2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hw, hl) = (self.size.0 / 2.0, self.size.1 / 2.0);
        let local = [(hw, -hl), (hw, hl), (-hw, hl), (-hw, -hl)];
        local.map(|(x, z)| {
            // rotation about the camera y-axis restricted to (x, z)
            P2::new(c * x + s * z + self.center.0, -s * x + c * z + self.center.1)
        })
    }
}

fn cross(o: &P2, a: &P2, b: &P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

pub fn polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a.x * b.y - b.x * a.y;
    }
    twice / 2.0
}

fn ensure_ccw(mut poly: Vec<P2>) -> Vec<P2> {
    if polygon_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland–Hodgman clipping of `subject` by the convex `clip` polygon.
/// Both inputs counter-clockwise.
pub fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(&a, &b, &cur) >= 0.0;
            let prev_in = cross(&a, &b, &prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_intersection(&prev, &cur, &a, &b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_intersection(&prev, &cur, &a, &b));
            }
        }
    }
    output
}

fn segment_intersection(p: &P2, q: &P2, a: &P2, b: &P2) -> P2 {
    let dp = q - p;
    let da = b - a;
    let denom = dp.x * da.y - dp.y * da.x;
    if denom.abs() < f64::EPSILON {
        return *p;
    }
    let t = ((a.x - p.x) * da.y - (a.y - p.y) * da.x) / denom;
    p + dp * t
}

pub fn bev_intersection_area(a: &BevBox, b: &BevBox) -> f64 {
    let pa = ensure_ccw(a.corners().to_vec());
    let pb = ensure_ccw(b.corners().to_vec());
    let area = polygon_area(&clip_convex(&pa, &pb)).abs();
    if area < DEGENERATE_AREA {
        0.0
    } else {
        area
    }
}

pub fn rotated_bev_iou(a: &BevBox, b: &BevBox) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Volumetric IoU of two bottom-center boxes; each spans `[y - h, y]`.
pub fn iou3d(a: &Label3D, b: &Label3D) -> f64 {
    let inter_bev = bev_intersection_area(&BevBox::from_label(a), &BevBox::from_label(b));
    if inter_bev == 0.0 {
        return 0.0;
    }
    let (a_top, a_bot) = (a.location.y - a.dims.h, a.location.y);
    let (b_top, b_bot) = (b.location.y - b.dims.h, b.location.y);
    let overlap_h = (a_bot.min(b_bot) - a_top.max(b_top)).max(0.0);
    let inter = inter_bev * overlap_h;
    if inter <= 0.0 {
        return 0.0;
    }
    let vol = |l: &Label3D| l.dims.h * l.dims.w * l.dims.l;
    let union = vol(a) + vol(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn bev_iou_labels(a: &Label3D, b: &Label3D) -> f64 {
    rotated_bev_iou(&BevBox::from_label(a), &BevBox::from_label(b))
}
