//! Synthetic scenes, rendering and Monte Carlo oracles for the covariance
//! models.

mod dataset;
pub mod fixtures;
mod montecarlo;
mod scene;
mod texture;
mod validation;

pub use dataset::{look_at, make_ba_dataset, make_scene, BADataset, DatasetSpec};
pub use montecarlo::{
    detect_corner, empirical_feature_cov, empirical_geometric_cov, empirical_photometric_cov, CornerOracleSpec, EmpiricalCov,
    GeometricNoise, MAX_EXCLUDED_FRACTION,
};
pub use scene::{add_noise, render, HomographySampler, RayHit, SyntheticScene, TexturedPlane, ViewSampler};
pub use texture::{random_sinusoids, Corner, Sinusoid, Texture};
pub use validation::{
    ba_benchmark, deformation_gain_study, mixed_visibility_study, feature_ordering, feature_suite, geometric_suite, photometric_suite, slanted_normal,
    trivial_deformation, BenchmarkRun, BenchmarkSpec, FeatureCase, FeatureSuiteSpec, GeometricCase, GeometricSuiteSpec,
    InformationStudySpec, MixedSelection, OffsetComparison, PairedGain, PhotometricCase, PhotometricSuiteSpec,
};
