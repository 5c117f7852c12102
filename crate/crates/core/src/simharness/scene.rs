use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::evalkit::bev_iou_labels;
use crate::geometry::{
    alpha_from_rotation, box3d_corners, project_box, project_box_unclamped, viewing_angle,
    BBox2D, CameraRig, Dims, Label3D, RigidTransform, Vec3,
};
use crate::kitti_io::{MaskRaster, RgbaRaster};
use crate::seed;

/// Attempts allowed to place the minimum number of cars.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Road pixels further away than this are not drawn.
pub const ROAD_FAR_LIMIT: f64 = 400.0;

/// Flat-road scene template.
///
/// Cars stand on the plane `y = camera_height` (camera frame, y down) within
/// `|x_world| <= lane_half_width - 1`. The camera sits at lateral world
/// position `-tx` where `tx` is drawn from `[-camera_jitter, camera_jitter]`
/// and stored as the rig's extrinsic translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub lane_half_width: f64,
    pub car_count: (usize, usize),
    pub z_range: (f64, f64),
    pub rig: CameraRig,
    pub camera_height: f64,
    pub camera_jitter: f64,
    pub sparsity: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            lane_half_width: 8.0,
            car_count: (3, 10),
            z_range: (5.0, 60.0),
            // KITTI P2 at half resolution
            rig: CameraRig::pinhole(360.77, 304.78, 86.43, 621, 188),
            camera_height: 1.65,
            camera_jitter: 1.0,
            sparsity: 0.3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if self.z_range.0 < 2.0 || self.z_range.1 > 65.0 || self.z_range.0 >= self.z_range.1 {
            return bad(format!("depth range {:?} must lie inside [2, 65]", self.z_range));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return bad(format!("sparsity {} outside (0, 1]", self.sparsity));
        }
        if self.car_count.0 > self.car_count.1 {
            return bad("car count range is inverted".into());
        }
        if !(self.lane_half_width > 1.0) || !(self.camera_height > 0.0) {
            return bad("lane half-width must exceed 1 m and camera height be positive".into());
        }
        let p = &self.rig.projection;
        if p[(0, 3)] != 0.0 || p[(1, 3)] != 0.0 || p[(2, 3)] != 0.0 {
            return bad("rig template must have a zero fourth projection column".into());
        }
        if !(self.camera_jitter >= 0.0) {
            return bad("camera jitter must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image_id: String,
    pub full_gt: Vec<Label3D>,
    pub sparse_gt: Vec<Label3D>,
    pub rig: CameraRig,
    pub road_mask: MaskRaster,
}

/// Pixels whose viewing ray meets the ground inside the road band.
pub fn render_road_mask(spec: &SceneSpec, rig: &CameraRig) -> MaskRaster {
    let p = &rig.projection;
    let k = p.fixed_view::<3, 3>(0, 0).into_owned();
    let k_inv = k.try_inverse().expect("projection has an invertible 3x3 block");
    let tx = rig.extrinsic.translation().x;
    MaskRaster::from_fn(rig.width as usize, rig.height as usize, |u, v| {
        let ray = k_inv * Vec3::new(u as f64 + 0.5, v as f64 + 0.5, 1.0);
        if ray.y <= 0.0 || ray.z <= 0.0 {
            return false;
        }
        let t = spec.camera_height / ray.y;
        let (x, z) = (ray.x * t, ray.z * t);
        z <= ROAD_FAR_LIMIT && (x - tx).abs() <= spec.lane_half_width
    })
}

/// Flat background: gray road, green elsewhere.
pub fn render_background(mask: &MaskRaster) -> RgbaRaster {
    let mut img = RgbaRaster::filled(mask.width(), mask.height(), [70, 120, 60, 255]);
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                img.set_pixel(x, y, [110, 110, 115, 255]);
            }
        }
    }
    img
}

fn occlusion_level(fraction: f64) -> u8 {
    match fraction {
        f if f <= 0.1 => 0,
        f if f <= 0.4 => 1,
        f if f <= 0.7 => 2,
        _ => 3,
    }
}

/// Fraction of `target` covered by the union of `occluders`, by pixel count.
fn covered_fraction(target: &BBox2D, occluders: &[BBox2D], width: usize, height: usize) -> f64 {
    let (x0, x1, y0, y1) = target.pixel_span(width, height);
    let total = (x1 - x0) * (y1 - y0);
    if total == 0 || occluders.is_empty() {
        return 0.0;
    }
    let mut covered = 0usize;
    for y in y0..y1 {
        let cy = y as f64 + 0.5;
        for x in x0..x1 {
            let cx = x as f64 + 0.5;
            if occluders.iter().any(|b| b.left <= cx && cx < b.right && b.top <= cy && cy < b.bottom) {
                covered += 1;
            }
        }
    }
    covered as f64 / total as f64
}

/// Labels a car standing at `location` with full geometry derived from the rig.
pub fn make_label(location: Vec3, dims: Dims, rotation_y: f64, rig: &CameraRig) -> Option<Label3D> {
    let theta = viewing_angle(location.x, location.z).ok()?;
    let mut label = Label3D {
        class_name: "Car".into(),
        truncation: 0.0,
        occlusion: 0,
        alpha: alpha_from_rotation(rotation_y, theta),
        bbox2d: BBox2D::new(0.0, 0.0, 0.0, 0.0),
        dims,
        location,
        rotation_y,
        score: None,
    };
    let corners = box3d_corners(&label);
    let clamped = project_box(&corners, rig).ok()?;
    let raw = project_box_unclamped(&corners, rig).ok()?;
    if clamped.area() <= 0.0 || raw.area() <= 0.0 {
        return None;
    }
    label.bbox2d = clamped;
    label.truncation = (1.0 - clamped.area() / raw.area()).clamp(0.0, 1.0);
    Some(label)
}

pub fn random_car_dims(rng: &mut impl Rng) -> Dims {
    Dims {
        h: rng.random_range(1.40..1.70),
        w: rng.random_range(1.55..1.85),
        l: rng.random_range(3.50..4.50),
    }
}

/// Yaw of a car mostly aligned with the road, sometimes arbitrary.
pub fn random_road_yaw(rng: &mut impl Rng) -> f64 {
    if rng.random_bool(0.1) {
        return rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    let base = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
    crate::geometry::wrap_angle(base + Normal::new(0.0, 0.15).unwrap().sample(rng))
}

/// Generates one flat-road scene deterministically from `spec.seed`.
pub fn generate_scene(spec: &SceneSpec, image_id: &str) -> Result<SyntheticScene, SimError> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let tx = if spec.camera_jitter > 0.0 {
        rng.random_range(-spec.camera_jitter..=spec.camera_jitter)
    } else {
        0.0
    };
    let rig = spec.rig.clone().with_extrinsic(RigidTransform::from_translation(Vec3::new(tx, 0.0, 0.0)));
    let target = rng.random_range(spec.car_count.0..=spec.car_count.1);
    let (w, h) = (rig.width as usize, rig.height as usize);

    let mut cars: Vec<Label3D> = Vec::with_capacity(target);
    let mut attempts = 0;
    let x_lim = spec.lane_half_width - 1.0;
    while cars.len() < target && attempts < MAX_PLACEMENT_ATTEMPTS {
        attempts += 1;
        let x_world = rng.random_range(-x_lim..=x_lim);
        let z = rng.random_range(spec.z_range.0..spec.z_range.1);
        let dims = random_car_dims(&mut rng);
        let yaw = random_road_yaw(&mut rng);
        let loc = Vec3::new(x_world + tx, spec.camera_height, z);
        let Some(label) = make_label(loc, dims, yaw, &rig) else {
            continue;
        };
        if label.truncation > 0.5 {
            continue;
        }
        if cars.iter().any(|c| bev_iou_labels(c, &label) > 0.0) {
            continue;
        }
        cars.push(label);
    }
    if cars.len() < spec.car_count.0 {
        return Err(SimError::Infeasible {
            placed: cars.len(),
            required: spec.car_count.0,
        });
    }

    // occlusion from nearer cars' 2D boxes
    let boxes: Vec<(f64, BBox2D)> = cars.iter().map(|c| (c.location.z, c.bbox2d)).collect();
    for car in &mut cars {
        let nearer: Vec<BBox2D> =
            boxes.iter().filter(|(z, _)| *z < car.location.z).map(|(_, b)| *b).collect();
        car.occlusion = occlusion_level(covered_fraction(&car.bbox2d, &nearer, w, h));
    }

    let sparse_gt = if cars.is_empty() {
        Vec::new()
    } else {
        let k = ((spec.sparsity * cars.len() as f64).round() as usize).clamp(1, cars.len());
        let mut picked = rand::seq::index::sample(&mut rng, cars.len(), k).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| cars[i].clone()).collect()
    };
    let road_mask = render_road_mask(spec, &rig);
    Ok(SyntheticScene { image_id: image_id.to_string(), full_gt: cars, sparse_gt, rig, road_mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(seed: u64) -> SceneSpec {
        SceneSpec { seed, ..SceneSpec::default() }
    }

    #[test]
    fn full_sparsity_keeps_everything() {
        let s = generate_scene(&SceneSpec { sparsity: 1.0, ..spec(3) }, "000003").unwrap();
        assert_eq!(s.sparse_gt, s.full_gt);
    }

    #[test]
    fn zero_cars() {
        let s = generate_scene(&SceneSpec { car_count: (0, 0), ..spec(1) }, "000001").unwrap();
        assert!(s.full_gt.is_empty() && s.sparse_gt.is_empty());
        assert!(s.road_mask.count() > 0);
        assert_eq!(s.road_mask.width(), 621);
    }

    #[test]
    fn thirty_percent_of_ten() {
        let s = generate_scene(&SceneSpec { car_count: (10, 10), ..spec(42) }, "000042").unwrap();
        assert_eq!(s.full_gt.len(), 10);
        assert_eq!(s.sparse_gt.len(), 3);
        assert!(s.sparse_gt.iter().all(|l| s.full_gt.contains(l)));
    }

    #[test]
    fn cars_do_not_overlap_and_lie_on_the_ground() {
        for seed in 0..20 {
            let s = generate_scene(&spec(seed), "x").unwrap();
            for (i, a) in s.full_gt.iter().enumerate() {
                assert_eq!(a.location.y, 1.65);
                for b in &s.full_gt[i + 1..] {
                    assert_eq!(bev_iou_labels(a, b), 0.0);
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate_scene(&spec(9), "a").unwrap(), generate_scene(&spec(9), "a").unwrap());
        assert_ne!(generate_scene(&spec(9), "a").unwrap().full_gt, generate_scene(&spec(10), "a").unwrap().full_gt);
    }

    #[test]
    fn infeasible_spec() {
        let crowded = SceneSpec { car_count: (400, 400), lane_half_width: 2.0, ..spec(0) };
        assert!(matches!(generate_scene(&crowded, "x"), Err(SimError::Infeasible { .. })));
    }

    #[test]
    fn invalid_depth_range() {
        let bad = SceneSpec { z_range: (1.0, 30.0), ..spec(0) };
        assert!(matches!(generate_scene(&bad, "x"), Err(SimError::InvalidSpec(_))));
    }
}
