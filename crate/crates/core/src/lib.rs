//! Sparse-annotation monocular 3D detection toolkit: camera geometry, KITTI
//! file formats, road-aware patch augmentation, prototype-based pseudo-label
//! filtering, KITTI-style evaluation and a synthetic test harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evalkit;
pub mod geometry;
pub mod kitti_io;
pub mod pbf;
pub mod rapa;
pub mod seed;
pub mod simharness;
