//! Road-aware patch augmentation.
//!
//! A segmented car from another scene is moved into the target camera frame,
//! slid laterally over a grid of offsets, re-oriented so that its observation
//! angle is unchanged, and accepted at the first offset whose projected box
//! lies mostly on road and barely overlaps the boxes already in the scene.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    apply_horizontal_offset, box3d_corners, iou2d, project_box,
    project_box_unclamped, rotation_from_alpha, transform_center, viewing_angle, BBox2D,
    CameraRig, GeometryError, Label3D,
};
use crate::kitti_io::{MaskRaster, RgbaRaster};
use crate::seed;

/// The only class patches are cut from.
pub const PATCH_CLASS: &str = "Car";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RapaError {
    #[error("invalid patch: {0}")]
    InvalidPatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RapaConfig {
    /// Half-width of the lateral search range, meters.
    pub delta: f64,
    /// Number of grid offsets over `[-delta, delta]`.
    pub num_offsets: usize,
    pub tau_road: f64,
    pub tau_overlap: f64,
    pub n_max: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    pub patches_per_image: usize,
}

impl Default for RapaConfig {
    fn default() -> Self {
        Self {
            delta: 5.0,
            num_offsets: 10,
            tau_road: 0.7,
            tau_overlap: 0.1,
            n_max: 40,
            depth_min: 2.0,
            depth_max: 65.0,
            patches_per_image: 2,
        }
    }
}

impl RapaConfig {
    pub fn validate(&self) -> Result<(), RapaError> {
        let bad = |m: &str| Err(RapaError::InvalidConfig(m.to_string()));
        if !(self.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.num_offsets == 0 {
            return bad("num_offsets must be at least 1");
        }
        if !(self.tau_road > 0.0 && self.tau_road <= 1.0) {
            return bad("tau_road must lie in (0, 1]");
        }
        if !(self.tau_overlap >= 0.0 && self.tau_overlap < 1.0) {
            return bad("tau_overlap must lie in [0, 1)");
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        if !(self.depth_min < self.depth_max) {
            return bad("depth_min must be below depth_max");
        }
        Ok(())
    }

    pub fn depth_in_range(&self, z: f64) -> bool {
        self.depth_min <= z && z < self.depth_max
    }
}

/// Segmented car cut from a source scene.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPatch {
    pub raster: RgbaRaster,
    pub source_label: Label3D,
    pub source_rig: CameraRig,
    pub source_image_id: String,
}

impl ObjectPatch {
    pub fn new(
        raster: RgbaRaster,
        source_label: Label3D,
        source_rig: CameraRig,
        source_image_id: String,
    ) -> Result<Self, RapaError> {
        if raster.width() == 0 || raster.height() == 0 {
            return Err(RapaError::InvalidPatch("empty raster".into()));
        }
        if !raster.data().chunks_exact(4).any(|px| px[3] != 0) {
            return Err(RapaError::InvalidPatch("alpha channel is fully transparent".into()));
        }
        if !is_patch_candidate(&source_label, &RapaConfig::default()) {
            return Err(RapaError::InvalidPatch(
                "source label fails the extraction filter".into(),
            ));
        }
        Ok(Self { raster, source_label, source_rig, source_image_id })
    }
}

fn is_patch_candidate(label: &Label3D, cfg: &RapaConfig) -> bool {
    label.class_name == PATCH_CLASS
        && label.truncation == 0.0
        && label.occlusion == 0
        && cfg.depth_in_range(label.location.z)
        && label.has_valid_dims()
}

/// Fully visible cars inside the working depth range.
pub fn extract_patch_candidates(labels: &[Label3D]) -> Vec<Label3D> {
    patch_candidate_indices(labels).into_iter().map(|i| labels[i].clone()).collect()
}

pub fn patch_candidate_indices(labels: &[Label3D]) -> Vec<usize> {
    let cfg = RapaConfig::default();
    (0..labels.len()).filter(|&i| is_patch_candidate(&labels[i], &cfg)).collect()
}

/// Crops a label's 2D box out of a scene, taking alpha from an object mask
/// of the full image size.
pub fn cut_patch(
    image: &RgbaRaster,
    object_mask: &MaskRaster,
    label: &Label3D,
    rig: &CameraRig,
    image_id: &str,
) -> Result<ObjectPatch, RapaError> {
    if object_mask.width() != image.width() || object_mask.height() != image.height() {
        return Err(RapaError::InvalidPatch("object mask size differs from the image".into()));
    }
    let (x0, x1, y0, y1) = label.bbox2d.pixel_span(image.width(), image.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(RapaError::InvalidPatch("label box covers no pixels".into()));
    }
    let mut raster = image.crop(x0, y0, x1, y1);
    for y in y0..y1 {
        for x in x0..x1 {
            if !object_mask.get(x, y) {
                let mut px = raster.pixel(x - x0, y - y0);
                px[3] = 0;
                raster.set_pixel(x - x0, y - y0, px);
            }
        }
    }
    ObjectPatch::new(raster, label.clone(), rig.clone(), image_id.to_string())
}

/// Fraction of the box's pixels that are road. Empty boxes score 0.
pub fn road_overlap_ratio(bbox: &BBox2D, mask: &MaskRaster) -> f64 {
    let (x0, x1, y0, y1) = bbox.pixel_span(mask.width(), mask.height());
    let total = (x1 - x0) * (y1 - y0);
    if total == 0 {
        return 0.0;
    }
    let mut road = 0usize;
    for y in y0..y1 {
        let row = &mask.data()[y * mask.width() + x0..y * mask.width() + x1];
        road += row.iter().filter(|&&v| v != 0).count();
    }
    road as f64 / total as f64
}

pub fn max_overlap_with_existing(bbox: &BBox2D, existing: &[BBox2D]) -> f64 {
    existing.iter().map(|e| iou2d(bbox, e)).fold(0.0, f64::max)
}

/// `m` evenly spaced offsets covering `[-delta, delta]` (just `0` when m = 1).
pub fn offset_grid(delta: f64, m: usize) -> Vec<f64> {
    if m <= 1 {
        return vec![0.0; m];
    }
    (0..m).map(|i| -delta + 2.0 * delta * i as f64 / (m - 1) as f64).collect()
}

/// An accepted pose for a patch in the target scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub label: Label3D,
    pub x_offset: f64,
    pub road_ratio: f64,
    pub max_existing_iou: f64,
    /// Viewing angle at the new position.
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementSearch {
    pub placement: Option<Placement>,
    /// Number of candidate offsets evaluated.
    pub trials: usize,
}

/// Searches up to `n_max` candidate offsets for a valid placement.
///
/// Grid offsets are visited in a seeded shuffle; when `n_max` exceeds the
/// grid size a fresh shuffle starts each new cycle.
pub fn find_placement(
    patch: &ObjectPatch,
    tgt_rig: &CameraRig,
    road_mask: &MaskRaster,
    existing: &[BBox2D],
    cfg: &RapaConfig,
    rng_seed: u64,
) -> PlacementSearch {
    let none = |trials| PlacementSearch { placement: None, trials };
    if road_mask.is_empty_area() || cfg.validate().is_err() {
        return none(0);
    }
    let src = &patch.source_label;
    let alpha = src.observation_angle();
    let Ok(center) =
        transform_center(&src.location, &patch.source_rig.extrinsic, &tgt_rig.extrinsic)
    else {
        return none(0);
    };

    let grid = offset_grid(cfg.delta, cfg.num_offsets);
    let mut rng = seed::rng(rng_seed);
    let mut order = grid.clone();
    for trial in 0..cfg.n_max {
        let k = trial % grid.len();
        if k == 0 {
            order.copy_from_slice(&grid);
            order.shuffle(&mut rng);
        }
        let x_offset = order[k];
        let location = apply_horizontal_offset(&center, x_offset);
        if !cfg.depth_in_range(location.z) {
            continue;
        }
        let Ok(theta) = viewing_angle(location.x, location.z) else {
            continue;
        };
        let mut label = Label3D {
            class_name: src.class_name.clone(),
            truncation: 0.0,
            occlusion: 0,
            alpha,
            bbox2d: BBox2D::new(0.0, 0.0, 0.0, 0.0),
            dims: src.dims,
            location,
            rotation_y: rotation_from_alpha(alpha, theta),
            score: None,
        };
        let corners = box3d_corners(&label);
        let (Ok(bbox), Ok(raw)) = (project_box(&corners, tgt_rig), project_box_unclamped(&corners, tgt_rig))
        else {
            continue;
        };
        if bbox.area() <= 0.0 {
            continue;
        }
        let road_ratio = road_overlap_ratio(&bbox, road_mask);
        if road_ratio < cfg.tau_road {
            continue;
        }
        let max_existing_iou = max_overlap_with_existing(&bbox, existing);
        if max_existing_iou >= cfg.tau_overlap {
            continue;
        }
        label.bbox2d = bbox;
        label.truncation = if raw.area() > 0.0 { (1.0 - bbox.area() / raw.area()).clamp(0.0, 1.0) } else { 0.0 };
        return PlacementSearch {
            placement: Some(Placement { label, x_offset, road_ratio, max_existing_iou, theta }),
            trials: trial + 1,
        };
    }
    none(cfg.n_max)
}

/// Bilinear resize with half-pixel centers on premultiplied RGBA.
/// Output is straight (non-premultiplied) alpha.
pub fn resize_bilinear(src: &RgbaRaster, width: usize, height: usize) -> RgbaRaster {
    let premul = resize_premultiplied(src, width, height);
    let mut out = RgbaRaster::filled(width, height, [0; 4]);
    for y in 0..height {
        for x in 0..width {
            let p = premul[y * width + x];
            let a = p[3];
            let px = if a <= 0.0 {
                [0, 0, 0, 0]
            } else {
                [
                    to_u8(p[0] / a),
                    to_u8(p[1] / a),
                    to_u8(p[2] / a),
                    to_u8(a * 255.0),
                ]
            };
            out.set_pixel(x, y, px);
        }
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Premultiplied samples `[r*a, g*a, b*a, a]` with `a` in `[0, 1]`.
fn resize_premultiplied(src: &RgbaRaster, width: usize, height: usize) -> Vec<[f64; 4]> {
    let (sw, sh) = (src.width(), src.height());
    let sample = |x: usize, y: usize| -> [f64; 4] {
        let p = src.pixel(x, y);
        let a = p[3] as f64 / 255.0;
        [p[0] as f64 * a, p[1] as f64 * a, p[2] as f64 * a, a]
    };
    let axis = |i: usize, n_dst: usize, n_src: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(n_src - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, height, sh);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, width, sw);
            let (a, b, c, d) = (sample(x0, y0), sample(x1, y0), sample(x0, y1), sample(x1, y1));
            let mut px = [0.0; 4];
            for ch in 0..4 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                px[ch] = top + (bottom - top) * fy;
            }
            out.push(px);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub image: RgbaRaster,
    /// False when the destination box covered no pixels.
    pub pasted: bool,
}

/// Resizes the patch onto the placement box and alpha-blends it over the
/// target. Pixels outside the box are left untouched.
pub fn composite_patch(target: &RgbaRaster, patch: &ObjectPatch, placement: &Placement) -> Composite {
    let mut image = target.clone();
    let (x0, x1, y0, y1) = placement.label.bbox2d.pixel_span(target.width(), target.height());
    let (dw, dh) = (x1 - x0, y1 - y0);
    if dw == 0 || dh == 0 {
        return Composite { image, pasted: false };
    }
    let resized = resize_premultiplied(&patch.raster, dw, dh);
    for y in 0..dh {
        for x in 0..dw {
            let p = resized[y * dw + x];
            let a = p[3];
            if a <= 0.0 {
                continue;
            }
            let t = target.pixel(x0 + x, y0 + y);
            let keep = 1.0 - a;
            let out = [
                to_u8(p[0] + keep * t[0] as f64),
                to_u8(p[1] + keep * t[1] as f64),
                to_u8(p[2] + keep * t[2] as f64),
                to_u8(255.0 * a + keep * t[3] as f64),
            ];
            image.set_pixel(x0 + x, y0 + y, out);
        }
    }
    Composite { image, pasted: true }
}

/// Inputs describing one target scene.
#[derive(Debug, Clone, Copy)]
pub struct SceneRef<'a> {
    pub image_id: &'a str,
    pub image: &'a RgbaRaster,
    pub labels: &'a [Label3D],
    pub rig: &'a CameraRig,
    pub road_mask: &'a MaskRaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedScene {
    pub image: RgbaRaster,
    /// Original labels followed by placed labels in paste order.
    pub labels: Vec<Label3D>,
    /// Accepted placements in paste order (far to near) with their library index.
    pub placements: Vec<(usize, Placement)>,
    /// Patches for which a placement search was run.
    pub attempted: usize,
    /// Candidate offsets evaluated across all searches.
    pub trials: usize,
}

/// Pastes up to `patches_per_image` library patches from other scenes into
/// one scene. Later placements must also avoid boxes placed earlier.
pub fn augment_scene(
    scene: SceneRef<'_>,
    library: &[ObjectPatch],
    cfg: &RapaConfig,
    scene_seed: u64,
) -> AugmentedScene {
    let mut result = AugmentedScene {
        image: scene.image.clone(),
        labels: scene.labels.to_vec(),
        placements: Vec::new(),
        attempted: 0,
        trials: 0,
    };
    let eligible: Vec<usize> = (0..library.len())
        .filter(|&i| library[i].source_image_id != scene.image_id)
        .collect();
    let count = cfg.patches_per_image.min(eligible.len());
    if count == 0 {
        return result;
    }
    let mut rng = seed::rng(scene_seed);
    let chosen: Vec<usize> = eligible.choose_multiple(&mut rng, count).copied().collect();

    let mut existing: Vec<BBox2D> = scene.labels.iter().map(|l| l.bbox2d).collect();
    let mut accepted: Vec<(usize, Placement)> = Vec::new();
    for (k, &idx) in chosen.iter().enumerate() {
        let search = find_placement(
            &library[idx],
            scene.rig,
            scene.road_mask,
            &existing,
            cfg,
            seed::mix(&[scene_seed, k as u64, idx as u64]),
        );
        result.attempted += 1;
        result.trials += search.trials;
        if let Some(p) = search.placement {
            existing.push(p.label.bbox2d);
            accepted.push((idx, p));
        }
    }
    // painter's order: far first, stable on ties
    accepted.sort_by(|a, b| b.1.label.location.z.total_cmp(&a.1.label.location.z));
    for (idx, p) in &accepted {
        result.image = composite_patch(&result.image, &library[*idx], p).image;
        result.labels.push(p.label.clone());
    }
    result.placements = accepted;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Dims, Vec3};

    fn car(z: f64, trunc: f64, occ: u8) -> Label3D {
        Label3D {
            class_name: "Car".into(),
            truncation: trunc,
            occlusion: occ,
            alpha: 0.2,
            bbox2d: BBox2D::new(10.0, 10.0, 20.0, 20.0),
            dims: Dims { h: 1.5, w: 1.6, l: 3.9 },
            location: Vec3::new(0.5, 1.65, z),
            rotation_y: 0.25,
            score: None,
        }
    }

    fn rig() -> CameraRig {
        CameraRig::pinhole(300.0, 200.0, 60.0, 400, 120)
    }

    fn patch(z: f64, source: &str, rgba: [u8; 4]) -> ObjectPatch {
        ObjectPatch::new(RgbaRaster::filled(4, 3, rgba), car(z, 0.0, 0), rig(), source.into()).unwrap()
    }

    #[test]
    fn candidate_filter() {
        let labels = vec![
            car(10.0, 0.0, 1),
            car(1.5, 0.0, 0),
            car(2.0, 0.0, 0),
            car(65.0, 0.0, 0),
            car(30.0, 0.1, 0),
            Label3D { class_name: "Van".into(), ..car(20.0, 0.0, 0) },
        ];
        assert_eq!(patch_candidate_indices(&labels), vec![2]);
        assert!(extract_patch_candidates(&[]).is_empty());
    }

    #[test]
    fn road_ratio_cases() {
        let b = BBox2D::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(road_overlap_ratio(&b, &MaskRaster::filled(10, 10, true)), 1.0);
        assert_eq!(road_overlap_ratio(&b, &MaskRaster::filled(10, 10, false)), 0.0);
        let half = MaskRaster::from_fn(10, 10, |_, y| y >= 5);
        assert_eq!(road_overlap_ratio(&b, &half), 0.5);
        assert_eq!(road_overlap_ratio(&BBox2D::new(3.0, 3.0, 3.0, 8.0), &half), 0.0);
    }

    #[test]
    fn existing_overlap_cases() {
        let a = BBox2D::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(max_overlap_with_existing(&a, &[]), 0.0);
        assert_eq!(max_overlap_with_existing(&a, &[a]), 1.0);
        let b = BBox2D::new(5.0, 0.0, 15.0, 10.0);
        assert!((max_overlap_with_existing(&a, &[b]) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn grid_spans_range() {
        let g = offset_grid(5.0, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], -5.0);
        assert_eq!(g[9], 5.0);
        assert_eq!(offset_grid(5.0, 1), vec![0.0]);
    }

    #[test]
    fn full_road_accepts() {
        let p = patch(20.0, "000001", [200, 0, 0, 255]);
        let mask = MaskRaster::filled(400, 120, true);
        let s = find_placement(&p, &rig(), &mask, &[], &RapaConfig::default(), 3);
        let pl = s.placement.as_ref().expect("placement on an all-road mask");
        assert_eq!(pl.road_ratio, 1.0);
        assert_eq!(pl.max_existing_iou, 0.0);
        assert!(pl.x_offset.abs() <= 5.0);
        assert_eq!(pl.label.dims, p.source_label.dims);
        assert_eq!(s, find_placement(&p, &rig(), &mask, &[], &RapaConfig::default(), 3));
    }

    #[test]
    fn hopeless_masks_exhaust_trials() {
        let p = patch(20.0, "000001", [200, 0, 0, 255]);
        let cfg = RapaConfig::default();
        let s = find_placement(&p, &rig(), &MaskRaster::filled(400, 120, false), &[], &cfg, 1);
        assert_eq!((s.placement.is_none(), s.trials), (true, 40));
        // occupy every reachable offset
        let road = MaskRaster::filled(400, 120, true);
        let mut full = Vec::new();
        while let Some(pl) = find_placement(&p, &rig(), &road, &full, &cfg, 7).placement {
            full.push(pl.label.bbox2d);
            assert!(full.len() <= cfg.num_offsets);
        }
        let s = find_placement(&p, &rig(), &road, &full, &cfg, 1);
        assert_eq!((s.placement.is_none(), s.trials), (true, 40));
        let s = find_placement(&p, &rig(), &MaskRaster::filled(0, 0, true), &[], &cfg, 1);
        assert_eq!((s.placement.is_none(), s.trials), (true, 0));
    }

    #[test]
    fn transparent_patch_is_identity() {
        let mut p = patch(20.0, "000001", [10, 20, 30, 255]);
        p.raster = RgbaRaster::filled(4, 3, [10, 20, 30, 0]);
        let target = RgbaRaster::filled(400, 120, [1, 2, 3, 255]);
        let pl = find_placement(&p, &rig(), &MaskRaster::filled(400, 120, true), &[], &RapaConfig::default(), 0)
            .placement
            .unwrap();
        assert_eq!(composite_patch(&target, &p, &pl).image, target);
    }

    #[test]
    fn opaque_constant_patch_fills_box() {
        let mut p = patch(20.0, "000001", [255, 0, 0, 255]);
        p.raster = RgbaRaster::filled(2, 2, [255, 0, 0, 255]);
        let target = RgbaRaster::filled(8, 8, [0, 0, 255, 255]);
        let mut pl = find_placement(&p, &rig(), &MaskRaster::filled(400, 120, true), &[], &RapaConfig::default(), 0)
            .placement
            .unwrap();
        pl.label.bbox2d = BBox2D::new(2.0, 2.0, 6.0, 6.0);
        let out = composite_patch(&target, &p, &pl);
        assert!(out.pasted);
        for y in 0..8 {
            for x in 0..8 {
                let inside = (2..6).contains(&x) && (2..6).contains(&y);
                let expected = if inside { [255, 0, 0, 255] } else { [0, 0, 255, 255] };
                assert_eq!(out.image.pixel(x, y), expected, "pixel ({x}, {y})");
            }
        }
        pl.label.bbox2d = BBox2D::new(3.0, 3.0, 3.0, 5.0);
        let out = composite_patch(&target, &p, &pl);
        assert!(!out.pasted);
        assert_eq!(out.image, target);
    }

    #[test]
    fn opaque_patch_equals_resized_patch() {
        let mut raster = RgbaRaster::filled(3, 2, [0, 0, 0, 255]);
        raster.set_pixel(1, 0, [250, 100, 7, 255]);
        raster.set_pixel(2, 1, [30, 60, 90, 255]);
        let mut p = patch(20.0, "000001", [1, 1, 1, 255]);
        p.raster = raster;
        let mut pl = find_placement(&p, &rig(), &MaskRaster::filled(400, 120, true), &[], &RapaConfig::default(), 0)
            .placement
            .unwrap();
        pl.label.bbox2d = BBox2D::new(1.0, 2.0, 8.0, 7.0);
        let target = RgbaRaster::filled(10, 10, [9, 9, 9, 255]);
        let out = composite_patch(&target, &p, &pl).image;
        assert_eq!(out.crop(1, 2, 8, 7), resize_bilinear(&p.raster, 7, 5));
    }

    #[test]
    fn augment_skips_same_scene_patches() {
        let target = RgbaRaster::filled(400, 120, [0; 4]);
        let mask = MaskRaster::filled(400, 120, true);
        let labels = vec![car(40.0, 0.0, 0)];
        let scene = SceneRef { image_id: "000005", image: &target, labels: &labels, rig: &rig(), road_mask: &mask };
        let own = vec![patch(20.0, "000005", [9, 9, 9, 255])];
        let out = augment_scene(scene, &own, &RapaConfig::default(), 11);
        assert_eq!((out.labels, out.image, out.attempted), (labels.clone(), target.clone(), 0));
        let out = augment_scene(scene, &[], &RapaConfig::default(), 11);
        assert_eq!(out.labels, labels);

        let other = vec![patch(20.0, "000006", [9, 9, 9, 255])];
        let out = augment_scene(scene, &other, &RapaConfig::default(), 11);
        assert_eq!(out.labels.len(), 2);
        assert_eq!(out.labels[0], labels[0]);
    }
}
