use std::sync::Arc;

use nalgebra::Vector3;

use crate::covariance::{ModelOptions, NoiseParams};
use crate::error::{invalid, Result};
use crate::geometry::{CameraIntrinsics, PixelPoint, PoseSE3};
use crate::image::ImageSampler;
use crate::surface::PatchSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Photometric,
    Feature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Weighting {
    Uniform,
    #[default]
    Model,
}

impl Weighting {
    pub fn name(&self) -> &'static str {
        match self {
            Weighting::Uniform => "uniform",
            Weighting::Model => "model",
        }
    }
}

/// A patch anchored at a host pixel; its inverse depth is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricPoint {
    pub host_view: usize,
    pub host_pixel: PixelPoint,
    /// Surface normal in the host camera frame.
    pub normal: Vector3<f64>,
    pub patch: PatchSpec,
}

/// Patch of `point` compared against target `view`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhotometricObservation {
    pub point: usize,
    pub view: usize,
}

/// A keypoint track; its world position is estimated.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    /// View the descriptor was extracted in.
    pub host_view: usize,
    /// Surface normal in the world (first camera) frame.
    pub normal: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureObservation {
    pub point: usize,
    pub view: usize,
    pub measured: PixelPoint,
    pub octave_scale: f64,
}

#[derive(Clone)]
pub enum ProblemData {
    Photometric {
        images: Vec<Arc<dyn ImageSampler>>,
        points: Vec<PhotometricPoint>,
        observations: Vec<PhotometricObservation>,
    },
    Feature {
        points: Vec<FeaturePoint>,
        observations: Vec<FeatureObservation>,
    },
}

/// Bundle-adjustment problem. Poses are world-to-camera; the world frame is
/// the first camera, whose pose is fixed to the identity. In photometric
/// mode the inverse depth of point 0 is also fixed (scale gauge); in feature
/// mode the world z coordinate of point 0 is.
#[derive(Clone)]
pub struct BAProblem {
    pub camera: CameraIntrinsics,
    pub num_views: usize,
    pub data: ProblemData,
    pub noise: NoiseParams,
    pub model: ModelOptions,
}

impl BAProblem {
    pub fn mode(&self) -> Mode {
        match self.data {
            ProblemData::Photometric { .. } => Mode::Photometric,
            ProblemData::Feature { .. } => Mode::Feature,
        }
    }

    pub fn num_points(&self) -> usize {
        match &self.data {
            ProblemData::Photometric { points, .. } => points.len(),
            ProblemData::Feature { points, .. } => points.len(),
        }
    }

    pub fn num_observations(&self) -> usize {
        match &self.data {
            ProblemData::Photometric { observations, .. } => observations.len(),
            ProblemData::Feature { observations, .. } => observations.len(),
        }
    }

    /// Point id of every observation, in observation order.
    pub fn observation_points(&self) -> Vec<usize> {
        match &self.data {
            ProblemData::Photometric { observations, .. } => observations.iter().map(|o| o.point).collect(),
            ProblemData::Feature { observations, .. } => observations.iter().map(|o| o.point).collect(),
        }
    }

    /// Checks ids, the two-view requirement and the noise parameters.
    pub fn validate(&self) -> Result<()> {
        if self.num_views < 2 {
            return invalid(format!("need at least 2 views, got {}", self.num_views));
        }
        if self.num_points() == 0 {
            return invalid("problem has no points");
        }
        self.noise.validate()?;
        let mut views_per_point = vec![Vec::<usize>::new(); self.num_points()];
        match &self.data {
            ProblemData::Photometric { images, points, observations } => {
                if images.len() != self.num_views {
                    return invalid(format!("{} images for {} views", images.len(), self.num_views));
                }
                for (i, p) in points.iter().enumerate() {
                    if p.host_view >= self.num_views {
                        return invalid(format!("point {i} hosted in unknown view {}", p.host_view));
                    }
                    views_per_point[i].push(p.host_view);
                }
                for (i, o) in observations.iter().enumerate() {
                    if o.point >= points.len() || o.view >= self.num_views {
                        return invalid(format!("observation {i} references unknown ids"));
                    }
                    if o.view == points[o.point].host_view {
                        return invalid(format!("observation {i} targets the host view of its point"));
                    }
                    views_per_point[o.point].push(o.view);
                }
            }
            ProblemData::Feature { points, observations } => {
                for (i, p) in points.iter().enumerate() {
                    if p.host_view >= self.num_views {
                        return invalid(format!("point {i} hosted in unknown view {}", p.host_view));
                    }
                }
                for (i, o) in observations.iter().enumerate() {
                    if o.point >= points.len() || o.view >= self.num_views {
                        return invalid(format!("observation {i} references unknown ids"));
                    }
                    if !(o.octave_scale > 0.0) {
                        return invalid(format!("observation {i} has non-positive octave scale"));
                    }
                    views_per_point[o.point].push(o.view);
                }
            }
        }
        for (i, views) in views_per_point.iter_mut().enumerate() {
            views.sort_unstable();
            views.dedup();
            if views.len() < 2 {
                return invalid(format!("point {i} is seen in fewer than 2 views"));
            }
        }
        Ok(())
    }

    pub fn check_state(&self, state: &BAState) -> Result<()> {
        if state.poses.len() != self.num_views {
            return invalid(format!("state has {} poses for {} views", state.poses.len(), self.num_views));
        }
        let n = self.num_points();
        let ok = match self.mode() {
            Mode::Photometric => state.inverse_depths.len() == n,
            Mode::Feature => state.positions.len() == n,
        };
        if !ok {
            return invalid("state point count does not match the problem");
        }
        Ok(())
    }
}

/// Estimated quantities. Only the vector matching the problem mode is used.
#[derive(Debug, Clone, PartialEq)]
pub struct BAState {
    pub poses: Vec<PoseSE3>,
    pub inverse_depths: Vec<f64>,
    pub positions: Vec<Vector3<f64>>,
}

impl BAState {
    pub fn photometric(poses: Vec<PoseSE3>, inverse_depths: Vec<f64>) -> Self {
        Self { poses, inverse_depths, positions: Vec::new() }
    }

    pub fn feature(poses: Vec<PoseSE3>, positions: Vec<Vector3<f64>>) -> Self {
        Self { poses, inverse_depths: Vec::new(), positions }
    }

    /// Relative pose from view `from` to view `to`.
    pub fn relative_pose(&self, from: usize, to: usize) -> PoseSE3 {
        self.poses[to].compose(&self.poses[from].inverse())
    }
}
