//! Synthetic flat-road scenes and a simulated detector with known
//! correctness, for end-to-end checks of augmentation and filtering.

pub mod detector;
pub mod experiment;
pub mod morphology;
pub mod scene;

use thiserror::Error;

use crate::evalkit::EvalError;
use crate::kitti_io::IoError;
use crate::pbf::PbfError;
use crate::rapa::RapaError;

pub use detector::{random_unit, simulate_predictions, DetectorNoise, SimulatedDetections};
pub use experiment::{
    bootstrap_pbf_advantage, build_patch_library, confidence_baseline, render_scene_image,
    run_experiment, EpochRow, ExperimentConfig, ExperimentReport, PlacedObject,
    PredictionOutcome, SceneOutcome, CSV_HEADER,
};
pub use morphology::{approximate_polygon, dilate, erode, simplify_polyline, MaskPerturbation};
pub use scene::{generate_scene, make_label, render_road_mask, SceneSpec, SyntheticScene};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("placed only {placed} of the required {required} cars")]
    Infeasible { placed: usize, required: usize },
    #[error(transparent)]
    Pbf(#[from] PbfError),
    #[error(transparent)]
    Rapa(#[from] RapaError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}
