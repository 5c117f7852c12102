//! Mask perturbations: square dilation/erosion and polygonal re-drawing.
//!
//! Structuring elements are `(2r+1) x (2r+1)` squares clipped to the image,
//! so pixels outside the raster never influence the result.

use serde::{Deserialize, Serialize};

use crate::kitti_io::MaskRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "amount")]
pub enum MaskPerturbation {
    Dilate(usize),
    Erode(usize),
    /// Boundary simplification tolerance in pixels.
    Polygon(f64),
}

impl MaskPerturbation {
    pub fn apply(&self, mask: &MaskRaster) -> MaskRaster {
        match *self {
            MaskPerturbation::Dilate(r) => dilate(mask, r),
            MaskPerturbation::Erode(r) => erode(mask, r),
            MaskPerturbation::Polygon(eps) => approximate_polygon(mask, eps),
        }
    }
}

/// Sliding-window pass along one axis. `keep(count, window)` decides the
/// output from the number of set pixels inside the clipped window.
fn pass(
    src: &[bool],
    len: usize,
    lanes: usize,
    index: impl Fn(usize, usize) -> usize,
    r: usize,
    keep: impl Fn(usize, usize) -> bool,
) -> Vec<bool> {
    let mut out = vec![false; src.len()];
    let mut prefix = vec![0usize; len + 1];
    for lane in 0..lanes {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[index(lane, i)] as usize;
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(len);
            out[index(lane, i)] = keep(prefix[hi] - prefix[lo], hi - lo);
        }
    }
    out
}

fn separable(mask: &MaskRaster, r: usize, keep: impl Fn(usize, usize) -> bool + Copy) -> MaskRaster {
    let (w, h) = (mask.width(), mask.height());
    let bits: Vec<bool> = mask.data().iter().map(|&v| v != 0).collect();
    let rows = pass(&bits, w, h, |y, x| y * w + x, r, keep);
    let cols = pass(&rows, h, w, |x, y| y * w + x, r, keep);
    MaskRaster::from_fn(w, h, |x, y| cols[y * w + x])
}

pub fn dilate(mask: &MaskRaster, r: usize) -> MaskRaster {
    separable(mask, r, |count, _| count > 0)
}

pub fn erode(mask: &MaskRaster, r: usize) -> MaskRaster {
    separable(mask, r, |count, window| count == window)
}

// clockwise in image coordinates, starting west
const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn set_at(mask: &MaskRaster, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() && mask.get(x as usize, y as usize)
}

/// 8-connected components, each represented by its first pixel in raster order.
fn component_starts(mask: &MaskRaster) -> Vec<(i64, i64)> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut starts = Vec::new();
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if seen[y * w + x] || !mask.get(x, y) {
                continue;
            }
            starts.push((x as i64, y as i64));
            seen[y * w + x] = true;
            stack.push((x as i64, y as i64));
            while let Some((cx, cy)) = stack.pop() {
                for (dx, dy) in DIRS {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if set_at(mask, nx, ny) && !seen[ny as usize * w + nx as usize] {
                        seen[ny as usize * w + nx as usize] = true;
                        stack.push((nx, ny));
                    }
                }
            }
        }
    }
    starts
}

/// Moore-neighbour trace of the outer boundary starting at a component's
/// first raster-order pixel.
fn trace_boundary(mask: &MaskRaster, start: (i64, i64)) -> Vec<(i64, i64)> {
    let step = |p: (i64, i64), back: usize| -> Option<((i64, i64), usize)> {
        for k in 1..=8 {
            let d = (back + k) % 8;
            let q = (p.0 + DIRS[d].0, p.1 + DIRS[d].1);
            if set_at(mask, q.0, q.1) {
                let prev = (d + 7) % 8;
                let b = (p.0 + DIRS[prev].0 - q.0, p.1 + DIRS[prev].1 - q.1);
                let nb = DIRS.iter().position(|&o| o == b).expect("adjacent probe");
                return Some((q, nb));
            }
        }
        None
    };
    let Some((first, back0)) = step(start, 0) else {
        return vec![start];
    };
    let mut contour = vec![start];
    let (mut p, mut back) = (first, back0);
    let limit = 4 * mask.width() * mask.height() + 8;
    for _ in 0..limit {
        let (q, nb) = step(p, back).expect("traced pixel has a neighbour");
        if p == start && q == first {
            break;
        }
        contour.push(p);
        p = q;
        back = nb;
    }
    contour
}

fn point_line_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p.0 - a.0).hypot(p.1 - a.1);
    }
    ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / len
}

/// Ramer-Douglas-Peucker on an open polyline; endpoints are kept.
pub fn simplify_polyline(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    let (idx, dist) = points[1..points.len() - 1]
        .iter()
        .enumerate()
        .map(|(i, &p)| (i + 1, point_line_distance(p, a, b)))
        .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if dist <= epsilon {
        return vec![a, b];
    }
    let mut left = simplify_polyline(&points[..=idx], epsilon);
    let right = simplify_polyline(&points[idx..], epsilon);
    left.pop();
    left.extend(right);
    left
}

fn simplify_closed(points: &[(f64, f64)], epsilon: f64) -> Vec<(f64, f64)> {
    if points.len() < 4 {
        return points.to_vec();
    }
    let far = (1..points.len())
        .max_by(|&i, &j| {
            let di = (points[i].0 - points[0].0).hypot(points[i].1 - points[0].1);
            let dj = (points[j].0 - points[0].0).hypot(points[j].1 - points[0].1);
            di.total_cmp(&dj).then(j.cmp(&i))
        })
        .unwrap();
    let mut ring: Vec<(f64, f64)> = points.to_vec();
    ring.push(points[0]);
    let mut out = simplify_polyline(&ring[..=far], epsilon);
    out.pop();
    let mut back = simplify_polyline(&ring[far..], epsilon);
    back.pop();
    out.extend(back);
    out
}

fn fill_polygon(out: &mut MaskRaster, poly: &[(f64, f64)]) {
    let (w, h) = (out.width(), out.height());
    let n = poly.len();
    let mut xs = Vec::new();
    for y in 0..h {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            if (a.1 <= cy && cy < b.1) || (b.1 <= cy && cy < a.1) {
                xs.push(a.0 + (cy - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            for x in 0..w {
                let cx = x as f64 + 0.5;
                if pair[0] <= cx && cx <= pair[1] {
                    out.set(x, y, true);
                }
            }
        }
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
            let (px, py) = (x.floor(), y.floor());
            if px >= 0.0 && py >= 0.0 && (px as usize) < w && (py as usize) < h {
                out.set(px as usize, py as usize, true);
            }
        }
    }
}

/// Redraws every connected component from a simplified outline of its outer
/// boundary. Holes are filled. With `epsilon = 0` a hole-free mask is
/// reproduced exactly.
pub fn approximate_polygon(mask: &MaskRaster, epsilon: f64) -> MaskRaster {
    let mut out = MaskRaster::filled(mask.width(), mask.height(), false);
    for start in component_starts(mask) {
        let contour: Vec<(f64, f64)> = trace_boundary(mask, start)
            .into_iter()
            .map(|(x, y)| (x as f64 + 0.5, y as f64 + 0.5))
            .collect();
        let poly = simplify_closed(&contour, epsilon.max(0.0));
        fill_polygon(&mut out, &poly);
    }
    out
}
