//! Experiment configuration: a sectioned TOML file merged over per-kind
//! defaults, with unknown keys rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mvcov_core::covariance::{InverseDepthStd, ModelOptions, NoiseParams};
use mvcov_core::deformation::DeformationReference;
use mvcov_core::estimator::{LmSettings, Mode, SolverConfig, Weighting};
use mvcov_core::geometry::CameraIntrinsics;
use mvcov_core::surface::PatchSpec;
use mvcov_core::synth::{
    BenchmarkSpec, CornerOracleSpec, DatasetSpec, FeatureSuiteSpec, GeometricSuiteSpec, InformationStudySpec, PhotometricSuiteSpec,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path} is not valid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("config {path}: referenced path {missing} does not exist")]
    MissingPath { path: PathBuf, missing: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ValidateGeometric,
    ValidatePhotometric,
    ValidateFeature,
    BaBenchmark,
    InformationStudy,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ValidateGeometric => "validate-geometric",
            ExperimentKind::ValidatePhotometric => "validate-photometric",
            ExperimentKind::ValidateFeature => "validate-feature",
            ExperimentKind::BaBenchmark => "ba-benchmark",
            ExperimentKind::InformationStudy => "information-study",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Photometric,
    Feature,
}

impl ModeName {
    pub fn name(self) -> &'static str {
        match self {
            ModeName::Photometric => "photometric",
            ModeName::Feature => "feature",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WeightingName {
    Uniform,
    Model,
}

impl From<WeightingName> for Weighting {
    fn from(w: WeightingName) -> Self {
        match w {
            WeightingName::Uniform => Weighting::Uniform,
            WeightingName::Model => Weighting::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceName {
    Translation,
    Similarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Top-level seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Number of consecutive seeds, starting at `seed`.
    pub seeds: usize,
    pub output: PathBuf,
    /// Worker threads; 0 uses every available core.
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    /// fx, fy, cx, cy in pixels.
    pub intrinsics: [f64; 4],
    /// width, height in pixels.
    pub image_size: [usize; 2],
    /// Random configurations of the geometric suite.
    pub configurations: usize,
    pub slants_deg: Vec<f64>,
    /// Photometric grid baselines as fractions of the depth.
    pub baselines: Vec<f64>,
    pub azimuths_deg: Vec<f64>,
    pub depth: f64,
    pub tilt_azimuth_deg: f64,
    /// Feature suite baseline as a fraction of the depth.
    pub feature_baseline: f64,
    pub texture_wavelengths: [f64; 2],
    pub patch: String,
    pub max_offset: f64,
    pub grazing_slant_deg: f64,
    /// Std of the corner oracle's structure-tensor window, pixels.
    pub window_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataset {
    pub views: usize,
    pub points: usize,
    pub depth: f64,
    pub view_step: f64,
    pub panel_slants_deg: Vec<f64>,
    pub texture_wavelengths: [f64; 2],
    pub octave_levels: usize,
    pub octave_factor: f64,
    pub patch: String,
    pub min_gradient: f64,
    pub init_translation_std: f64,
    pub init_rotation_std: f64,
    pub init_inverse_depth_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub modes: Vec<ModeName>,
    /// Directory of an RGB-D sequence in the TUM layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<PathBuf>,
    /// Association file, relative to `sequence`.
    pub association: PathBuf,
    /// Ground-truth trajectory, relative to `sequence`; empty for none.
    pub groundtruth: PathBuf,
    /// Raw depth units per meter.
    pub depth_scale: f64,
    /// Largest tolerated timestamp gap, seconds.
    pub max_time_gap: f64,
    pub photometric: SyntheticDataset,
    pub feature: SyntheticDataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_intensity: f64,
    pub sigma_keypoint: f64,
    pub inverse_depth_std: f64,
    /// `inverse_depth_std` is a fraction of the inverse depth.
    pub inverse_depth_relative: bool,
    pub pose_translation_std: f64,
    pub pose_rotation_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub weighting: WeightingName,
    pub refresh_every: usize,
    /// Huber threshold in whitened units; 0 disables the kernel.
    pub huber: f64,
    pub max_iterations: usize,
    pub reference: ReferenceName,
    pub kappa: f64,
    pub feature_radius: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationSection {
    pub draws: usize,
    /// Largest accepted relative error.
    pub tolerance: f64,
    /// Largest accepted sign-test p-value.
    pub significance: f64,
}

/// A fully resolved configuration; every field carries a value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scene: SceneSection,
    pub dataset: DatasetSection,
    pub noise: NoiseSection,
    pub estimator: EstimatorSection,
    pub validation: ValidationSection,
}

fn synthetic(spec: &DatasetSpec) -> SyntheticDataset {
    SyntheticDataset {
        views: spec.num_views,
        points: spec.num_points,
        depth: spec.scene_depth,
        view_step: spec.view_step,
        panel_slants_deg: spec.panel_slants_deg.clone(),
        texture_wavelengths: [spec.texture_wavelengths.0, spec.texture_wavelengths.1],
        octave_levels: spec.octave_levels,
        octave_factor: spec.octave_factor,
        patch: spec.patch.name().to_string(),
        min_gradient: spec.min_gradient,
        init_translation_std: spec.init_translation_std,
        init_rotation_std: spec.init_rotation_std,
        init_inverse_depth_std: spec.init_inverse_depth_std,
    }
}

impl ExperimentConfig {
    /// Defaults of an experiment kind: the calibrated acceptance settings.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let k = CameraIntrinsics::tum_default();
        let geometric = GeometricSuiteSpec::default();
        let photometric = PhotometricSuiteSpec::default();
        let feature = FeatureSuiteSpec::default();
        let study = InformationStudySpec::default();
        let lm = LmSettings::default();
        let mut config = ExperimentConfig {
            experiment: ExperimentSection {
                kind,
                seed: 1,
                seeds: 1,
                output: PathBuf::from("results").join(kind.name()),
                threads: 0,
            },
            scene: SceneSection {
                intrinsics: [k.fx, k.fy, k.cx, k.cy],
                image_size: [k.width, k.height],
                configurations: geometric.configurations,
                slants_deg: photometric.slants_deg.clone(),
                baselines: photometric.baselines.clone(),
                azimuths_deg: feature.azimuths_deg.clone(),
                depth: photometric.depth,
                tilt_azimuth_deg: photometric.tilt_azimuth_deg,
                feature_baseline: feature.baseline / feature.depth,
                texture_wavelengths: [photometric.texture_wavelengths.0, photometric.texture_wavelengths.1],
                patch: photometric.patch.name().to_string(),
                max_offset: photometric.max_offset,
                grazing_slant_deg: study.grazing_slant_deg,
                window_sigma: feature.oracle.window_sigma,
            },
            dataset: DatasetSection {
                modes: vec![ModeName::Photometric, ModeName::Feature],
                sequence: None,
                association: PathBuf::from("associations.txt"),
                groundtruth: PathBuf::from("groundtruth.txt"),
                depth_scale: 5000.0,
                max_time_gap: 0.5,
                photometric: synthetic(&DatasetSpec::photometric()),
                feature: synthetic(&DatasetSpec::feature()),
            },
            noise: NoiseSection {
                sigma_intensity: 2.0,
                sigma_keypoint: 1.0,
                inverse_depth_std: 0.0,
                inverse_depth_relative: false,
                pose_translation_std: 0.0,
                pose_rotation_std: 0.0,
            },
            estimator: EstimatorSection {
                weighting: WeightingName::Model,
                refresh_every: 0,
                huber: 0.0,
                max_iterations: lm.max_iterations,
                reference: ReferenceName::Translation,
                kappa: 1.0,
                feature_radius: ModelOptions::default().feature_radius,
                margin: ModelOptions::default().margin,
            },
            validation: ValidationSection { draws: 100_000, tolerance: 0.05, significance: 0.05 },
        };
        match kind {
            ExperimentKind::ValidateGeometric => {
                config.noise.inverse_depth_std = geometric.inverse_depth_rel;
                config.noise.inverse_depth_relative = true;
                config.noise.pose_translation_std = geometric.pose_translation_std;
                config.noise.pose_rotation_std = geometric.pose_rotation_std;
                config.validation.draws = geometric.draws;
            }
            ExperimentKind::ValidatePhotometric => {
                config.noise.inverse_depth_std = 0.005;
                config.noise.inverse_depth_relative = true;
                config.noise.pose_translation_std = 5e-4;
                config.noise.pose_rotation_std = 5e-4;
                config.validation.draws = photometric.draws;
                config.validation.tolerance = 0.15;
            }
            ExperimentKind::ValidateFeature => {
                config.scene.slants_deg = feature.slants_deg.clone();
                config.scene.depth = feature.depth;
                config.noise.sigma_keypoint = 0.14;
                config.estimator.kappa = 0.27;
                config.validation.draws = feature.draws;
                config.validation.tolerance = 0.30;
            }
            ExperimentKind::BaBenchmark => {
                config.experiment.seed = BenchmarkSpec::photometric().seed_base;
                config.experiment.seeds = BenchmarkSpec::photometric().seeds;
            }
            ExperimentKind::InformationStudy => {
                config.dataset.modes = vec![ModeName::Feature];
                config.dataset.feature = synthetic(&study.dataset);
                config.noise.sigma_keypoint = study.noise.sigma_keypoint;
                config.estimator.kappa = study.model.kappa;
            }
        }
        config
    }

    /// Parses `text`, merging it over the defaults of its experiment kind.
    /// Relative dataset paths resolve against `base_dir`.
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse { path: path.to_path_buf(), message };
        let user: toml::Table = toml::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        let kind_value = user
            .get("experiment")
            .and_then(|e| e.get("kind"))
            .cloned()
            .ok_or_else(|| parse_err("missing key experiment.kind".into()))?;
        let kind: ExperimentKind = kind_value.try_into().map_err(|e: toml::de::Error| parse_err(format!("experiment.kind: {e}")))?;
        let mut merged = toml::Table::try_from(Self::defaults(kind)).map_err(|e| parse_err(e.to_string()))?;
        merge(&mut merged, user);
        let mut config: ExperimentConfig = merged.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        if let Some(seq) = &config.dataset.sequence {
            let base = path.parent().unwrap_or(Path::new("."));
            let joined = base.join(seq);
            config.dataset.sequence = Some(fs::canonicalize(&joined).unwrap_or(joined));
        }
        config.validate().map_err(|message| ConfigError::Invalid { path: path.to_path_buf(), message })?;
        config.check_paths(path)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text, path)
    }

    /// The resolved configuration as TOML; loading it reproduces `self`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    fn check_paths(&self, path: &Path) -> Result<(), ConfigError> {
        let Some(seq) = &self.dataset.sequence else { return Ok(()) };
        let mut required = vec![seq.clone(), seq.join(&self.dataset.association)];
        if !self.dataset.groundtruth.as_os_str().is_empty() {
            required.push(seq.join(&self.dataset.groundtruth));
        }
        match required.into_iter().find(|p| !p.exists()) {
            Some(missing) => Err(ConfigError::MissingPath { path: path.to_path_buf(), missing }),
            None => Ok(()),
        }
    }

    fn validate(&self) -> Result<(), String> {
        self.camera().map_err(|e| e.to_string())?;
        self.noise_params().validate().map_err(|e| e.to_string())?;
        PatchSpec::by_name(&self.scene.patch).map_err(|e| e.to_string())?;
        for mode in [ModeName::Photometric, ModeName::Feature] {
            self.dataset_spec(mode)?.validate().map_err(|e| format!("dataset.{}: {e}", mode.name()))?;
        }
        if self.experiment.seeds == 0 {
            return Err("experiment.seeds must be at least 1".into());
        }
        if self.dataset.modes.is_empty() {
            return Err("dataset.modes must not be empty".into());
        }
        if !(self.dataset.depth_scale > 0.0) || !(self.dataset.max_time_gap >= 0.0) {
            return Err("dataset.depth_scale must be positive and dataset.max_time_gap non-negative".into());
        }
        if !(self.validation.tolerance >= 0.0) || !(0.0..=1.0).contains(&self.validation.significance) {
            return Err("validation.tolerance must be non-negative and validation.significance in [0, 1]".into());
        }
        if self.validation.draws < 2 {
            return Err("validation.draws must be at least 2".into());
        }
        let [lo, hi] = self.scene.texture_wavelengths;
        if !(lo > 0.0 && hi >= lo) || !(self.scene.depth > 0.0) || !(self.scene.window_sigma > 0.0) {
            return Err("scene geometry parameters are invalid".into());
        }
        if !(self.estimator.huber >= 0.0) || !(self.estimator.kappa >= 0.0) || !(self.estimator.feature_radius > 0.0) {
            return Err("estimator.huber and estimator.kappa must be non-negative, estimator.feature_radius positive".into());
        }
        Ok(())
    }

    pub fn camera(&self) -> mvcov_core::Result<CameraIntrinsics> {
        let [fx, fy, cx, cy] = self.scene.intrinsics;
        let [w, h] = self.scene.image_size;
        CameraIntrinsics::new(fx, fy, cx, cy, w, h)
    }

    pub fn noise_params(&self) -> NoiseParams {
        let n = &self.noise;
        NoiseParams {
            sigma_intensity: n.sigma_intensity,
            sigma_keypoint: n.sigma_keypoint,
            inverse_depth: if n.inverse_depth_relative {
                InverseDepthStd::Relative(n.inverse_depth_std)
            } else {
                InverseDepthStd::Absolute(n.inverse_depth_std)
            },
            pose_cov: NoiseParams::isotropic_pose_cov(n.pose_translation_std, n.pose_rotation_std),
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            reference: match self.estimator.reference {
                ReferenceName::Translation => DeformationReference::Translation,
                ReferenceName::Similarity => DeformationReference::Similarity,
            },
            kappa: self.estimator.kappa,
            feature_radius: self.estimator.feature_radius,
            margin: self.estimator.margin,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let e = &self.estimator;
        SolverConfig {
            weighting: e.weighting.into(),
            refresh_every: e.refresh_every,
            huber: (e.huber > 0.0).then_some(e.huber),
            lm: LmSettings { max_iterations: e.max_iterations, ..LmSettings::default() },
        }
    }

    pub fn dataset_spec(&self, mode: ModeName) -> Result<DatasetSpec, String> {
        let (d, mode) = match mode {
            ModeName::Photometric => (&self.dataset.photometric, Mode::Photometric),
            ModeName::Feature => (&self.dataset.feature, Mode::Feature),
        };
        Ok(DatasetSpec {
            mode,
            num_views: d.views,
            num_points: d.points,
            scene_depth: d.depth,
            view_step: d.view_step,
            panel_slants_deg: d.panel_slants_deg.clone(),
            texture_wavelengths: (d.texture_wavelengths[0], d.texture_wavelengths[1]),
            octave_levels: d.octave_levels,
            octave_factor: d.octave_factor,
            patch: PatchSpec::by_name(&d.patch).map_err(|e| e.to_string())?,
            min_gradient: d.min_gradient,
            init_translation_std: d.init_translation_std,
            init_rotation_std: d.init_rotation_std,
            init_inverse_depth_std: d.init_inverse_depth_std,
        })
    }

    pub fn geometric_spec(&self) -> GeometricSuiteSpec {
        GeometricSuiteSpec {
            configurations: self.scene.configurations,
            draws: self.validation.draws,
            inverse_depth_rel: self.noise.inverse_depth_std,
            pose_translation_std: self.noise.pose_translation_std,
            pose_rotation_std: self.noise.pose_rotation_std,
        }
    }

    pub fn photometric_spec(&self) -> PhotometricSuiteSpec {
        let s = &self.scene;
        PhotometricSuiteSpec {
            slants_deg: s.slants_deg.clone(),
            baselines: s.baselines.clone(),
            depth: s.depth,
            tilt_azimuth_deg: s.tilt_azimuth_deg,
            draws: self.validation.draws,
            texture_wavelengths: (s.texture_wavelengths[0], s.texture_wavelengths[1]),
            patch: PatchSpec::by_name(&s.patch).expect("patch validated at load"),
            max_offset: s.max_offset,
        }
    }

    pub fn feature_spec(&self) -> FeatureSuiteSpec {
        let s = &self.scene;
        FeatureSuiteSpec {
            slants_deg: s.slants_deg.clone(),
            azimuths_deg: s.azimuths_deg.clone(),
            baseline: s.feature_baseline * s.depth,
            depth: s.depth,
            draws: self.validation.draws,
            oracle: CornerOracleSpec { window_sigma: s.window_sigma, ..CornerOracleSpec::default() },
        }
    }

    pub fn benchmark_spec(&self, mode: ModeName) -> Result<BenchmarkSpec, String> {
        Ok(BenchmarkSpec {
            dataset: self.dataset_spec(mode)?,
            noise: self.noise_params(),
            model: self.model_options(),
            solver: self.solver_config(),
            seeds: self.experiment.seeds,
            seed_base: self.experiment.seed,
        })
    }

    pub fn study_spec(&self) -> Result<InformationStudySpec, String> {
        Ok(InformationStudySpec {
            dataset: self.dataset_spec(ModeName::Feature)?,
            noise: self.noise_params(),
            model: self.model_options(),
            grazing_slant_deg: self.scene.grazing_slant_deg,
        })
    }

    /// Seeds of the run, in order.
    pub fn seeds(&self) -> impl Iterator<Item = u64> {
        let e = &self.experiment;
        e.seed..e.seed + e.seeds as u64
    }
}

/// Recursively overlays `user` onto `base`; keys absent from `base` are
/// kept so that deserialization rejects them.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (key, value) in user {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}
