use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{make_label, random_car_dims, random_road_yaw};
use super::SimError;
use crate::geometry::{CameraRig, Label3D, Vec3};
use crate::pbf::{FeatureVec, Prediction};
use crate::seed;

/// Stand-in for a teacher network's outputs.
///
/// True objects get features near `class_direction`; false positives get
/// isotropic unit features. Confidence is drawn from one distribution for
/// both, so it carries no information about correctness. The raw
/// uncertainty is `sigma_a * |depth error| + sigma_b + N(0, sigma_noise)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorNoise {
    pub feature_dim: usize,
    pub class_direction: Vec<f64>,
    /// Norm of the isotropic Gaussian perturbation added to true features.
    pub angular_noise: f64,
    /// Probability, per true object, of one extra false positive.
    pub fp_rate: f64,
    /// Standard deviation of the depth error in meters.
    pub depth_error_scale: f64,
    pub sigma_a: f64,
    pub sigma_b: f64,
    pub sigma_noise: f64,
    pub confidence_range: (f64, f64),
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self::with_dim(256, 0x00c1_a55d)
    }
}

impl DetectorNoise {
    /// Default noise model with a class direction drawn from `direction_seed`.
    pub fn with_dim(feature_dim: usize, direction_seed: u64) -> Self {
        Self {
            feature_dim,
            class_direction: random_unit(feature_dim, &mut seed::rng(direction_seed)),
            angular_noise: 0.3,
            fp_rate: 0.4,
            depth_error_scale: 0.7,
            sigma_a: 1.0,
            sigma_b: -0.5,
            sigma_noise: 0.1,
            confidence_range: (0.3, 1.0),
        }
    }

    /// No perturbation at all and no false positives.
    pub fn noiseless(feature_dim: usize) -> Self {
        Self {
            angular_noise: 0.0,
            fp_rate: 0.0,
            depth_error_scale: 0.0,
            sigma_noise: 0.0,
            ..Self::with_dim(feature_dim, 0x00c1_a55d)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.feature_dim == 0 || self.class_direction.len() != self.feature_dim {
            return bad("class direction must have feature_dim entries");
        }
        if !(0.0..=1.0).contains(&self.fp_rate) {
            return bad("fp_rate must lie in [0, 1]");
        }
        let (lo, hi) = self.confidence_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("confidence range must lie in [0, 1]");
        }
        if self.angular_noise < 0.0 || self.depth_error_scale < 0.0 || self.sigma_noise < 0.0 {
            return bad("noise scales must be non-negative");
        }
        Ok(())
    }

    fn confidence(&self, rng: &mut impl Rng) -> f64 {
        let (lo, hi) = self.confidence_range;
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    }

    fn sigma(&self, depth_error: f64, rng: &mut impl Rng) -> f64 {
        let jitter = if self.sigma_noise > 0.0 {
            Normal::new(0.0, self.sigma_noise).unwrap().sample(rng)
        } else {
            0.0
        };
        self.sigma_a * depth_error.abs() + self.sigma_b + jitter
    }

    fn depth_error(&self, rng: &mut impl Rng) -> f64 {
        if self.depth_error_scale > 0.0 {
            Normal::new(0.0, self.depth_error_scale).unwrap().sample(rng)
        } else {
            0.0
        }
    }

    /// Feature of a true object.
    pub fn true_feature(&self, rng: &mut impl Rng) -> FeatureVec {
        let scale = self.angular_noise / (self.feature_dim as f64).sqrt();
        FeatureVec::new(
            self.class_direction
                .iter()
                .map(|d| {
                    let g: f64 = StandardNormal.sample(rng);
                    d + scale * g
                })
                .collect(),
        )
    }
}

pub fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDetections {
    pub predictions: Vec<Prediction>,
    /// Prediction id -> whether it corresponds to a real object.
    pub oracle: HashMap<u64, bool>,
    /// Depth error of each true prediction, by id.
    pub depth_errors: HashMap<u64, f64>,
}

/// One prediction per ground-truth object, plus false positives.
///
/// Prediction ids run from `id_base` upward in emission order.
pub fn simulate_predictions(
    full_gt: &[Label3D],
    image_id: &str,
    rig: &CameraRig,
    noise: &DetectorNoise,
    rng: &mut impl Rng,
    id_base: u64,
) -> Result<SimulatedDetections, SimError> {
    noise.validate()?;
    let mut out = SimulatedDetections {
        predictions: Vec::with_capacity(full_gt.len() * 2),
        oracle: HashMap::new(),
        depth_errors: HashMap::new(),
    };
    let mut next_id = id_base;
    let ground = full_gt.first().map_or(1.65, |l| l.location.y);
    for gt in full_gt {
        let dd = noise.depth_error(rng);
        let mut label = gt.clone();
        // depth error slides the box along its viewing ray
        let z_new = (gt.location.z + dd).max(0.5);
        let factor = z_new / gt.location.z;
        label.location = Vec3::new(gt.location.x * factor, gt.location.y * factor, z_new);
        label.score = Some(noise.confidence(rng));
        let sigma = noise.sigma(dd, rng);
        let feature = noise.true_feature(rng);
        out.oracle.insert(next_id, true);
        out.depth_errors.insert(next_id, dd);
        out.predictions.push(Prediction { id: next_id, image_id: image_id.to_string(), label, feature, sigma });
        next_id += 1;
    }
    for _ in 0..full_gt.len() {
        if !rng.random_bool(noise.fp_rate) {
            continue;
        }
        // random box on or off the road
        let label = loop {
            let loc = Vec3::new(rng.random_range(-20.0..20.0), ground, rng.random_range(5.0..60.0));
            if let Some(l) = make_label(loc, random_car_dims(rng), random_road_yaw(rng), rig) {
                break l;
            }
        };
        let label = Label3D { score: Some(noise.confidence(rng)), ..label };
        let sigma = noise.sigma(noise.depth_error(rng), rng);
        let feature = FeatureVec::new(random_unit(noise.feature_dim, rng));
        out.oracle.insert(next_id, false);
        out.predictions.push(Prediction { id: next_id, image_id: image_id.to_string(), label, feature, sigma });
        next_id += 1;
    }
    Ok(out)
}
