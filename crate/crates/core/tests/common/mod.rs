#![allow(dead_code, unused_imports)]

use mvcov_core::estimator::{BAProblem, BAState};
use mvcov_core::geometry::CameraIntrinsics;
use mvcov_core::surface::PatchSpec;
use mvcov_core::synth::{fixtures, BADataset};

pub use fixtures::{pose_error, redraw_feature_noise};

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::tum_default()
}

pub fn flat_photometric(seed: u64, num_points: usize, patch: PatchSpec) -> (BAProblem, BAState) {
    fixtures::flat_photometric(&camera(), seed, num_points, patch)
}

pub fn exact_feature(seed: u64, num_points: usize) -> BADataset {
    fixtures::exact_feature(&camera(), seed, num_points)
}

pub fn perturb(state: &BAState, pose_std: f64, depth_rel: f64, seed: u64) -> BAState {
    fixtures::perturb_state(state, pose_std, depth_rel, seed)
}
