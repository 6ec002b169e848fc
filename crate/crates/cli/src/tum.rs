//! RGB-D sequences in the TUM layout: an association file pairing color and
//! depth images, 16-bit depth PNGs, and an optional ground-truth trajectory.

use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use log::warn;
use mvcov_core::geometry::{CameraIntrinsics, PoseSE3};
use mvcov_core::image::{DepthImage, GrayImage};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}:{line}: malformed line: {reason}")]
    MalformedLine { path: PathBuf, line: usize, reason: String },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode image {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {reason}")]
    BadImage { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// One line of an association file.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    pub rgb_timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_timestamp: f64,
    pub depth_path: PathBuf,
}

/// A ground-truth sample: camera-to-world translation and rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub timestamp: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub timestamp: f64,
    pub intensity: GrayImage,
    /// Meters; 0 marks invalid pixels.
    pub depth: DepthImage,
    /// World-to-camera pose from the ground truth, if available.
    pub pose: Option<PoseSE3>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadOptions {
    /// Raw depth units per meter.
    pub depth_scale: f64,
    /// Frames whose color/depth or ground-truth timestamps are further apart
    /// than this (seconds) are dropped.
    pub max_time_gap: f64,
    /// Ground-truth file, relative to the sequence directory.
    pub groundtruth: Option<PathBuf>,
    /// When set, every image must match its dimensions.
    pub camera: Option<CameraIntrinsics>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { depth_scale: 5000.0, max_time_gap: 0.5, groundtruth: None, camera: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedFrame {
    pub timestamp: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSequence {
    /// Sorted by timestamp.
    pub frames: Vec<RgbdFrame>,
    pub dropped: Vec<DroppedFrame>,
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i, l.split_whitespace().collect()))
}

fn number(path: &Path, line: usize, token: &str) -> Result<f64> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::MalformedLine { path: path.to_path_buf(), line, reason: format!("'{token}' is not a number") })
}

/// Parses "rgb_ts rgb_path depth_ts depth_path" lines.
pub fn parse_associations(text: &str, path: &Path) -> Result<Vec<Association>> {
    data_lines(text)
        .map(|(line, tokens)| {
            if tokens.len() != 4 {
                return Err(IngestError::MalformedLine {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("expected 4 fields, found {}", tokens.len()),
                });
            }
            Ok(Association {
                rgb_timestamp: number(path, line, tokens[0])?,
                rgb_path: PathBuf::from(tokens[1]),
                depth_timestamp: number(path, line, tokens[2])?,
                depth_path: PathBuf::from(tokens[3]),
            })
        })
        .collect()
}

/// Parses "ts tx ty tz qx qy qz qw" lines into a time-sorted trajectory.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<TrajectorySample>> {
    let mut samples = data_lines(text)
        .map(|(line, tokens)| {
            if tokens.len() != 8 {
                return Err(IngestError::MalformedLine {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("expected 8 fields, found {}", tokens.len()),
                });
            }
            let v = tokens.iter().map(|t| number(path, line, t)).collect::<Result<Vec<f64>>>()?;
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if q.norm() < 1e-9 {
                return Err(IngestError::MalformedLine { path: path.to_path_buf(), line, reason: "zero quaternion".into() });
            }
            Ok(TrajectorySample {
                timestamp: v[0],
                position: Vector3::new(v[1], v[2], v[3]),
                orientation: UnitQuaternion::from_quaternion(q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    samples.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Ok(samples)
}

/// World-to-camera pose at `t`: linear in position, spherical-linear in
/// rotation between the bracketing samples. `None` when `t` is outside the
/// trajectory or the bracketing samples are more than `max_gap` apart.
pub fn interpolate_pose(trajectory: &[TrajectorySample], t: f64, max_gap: f64) -> Option<PoseSE3> {
    let i = trajectory.partition_point(|s| s.timestamp < t);
    let (a, b) = if trajectory.get(i).is_some_and(|s| s.timestamp == t) {
        (&trajectory[i], &trajectory[i])
    } else if i == 0 || i == trajectory.len() {
        return None;
    } else {
        (&trajectory[i - 1], &trajectory[i])
    };
    if b.timestamp - a.timestamp > max_gap {
        return None;
    }
    let s = if b.timestamp > a.timestamp { (t - a.timestamp) / (b.timestamp - a.timestamp) } else { 0.0 };
    let position = a.position.lerp(&b.position, s);
    let orientation = a.orientation.slerp(&b.orientation, s);
    Some(PoseSE3::from_quaternion(&orientation, position).inverse())
}

/// ITU-R BT.601 luma, rounded to the nearest gray level.
pub fn luma601(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64).round() as u8
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(IngestError::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| IngestError::Image { path: path.to_path_buf(), source })
}

fn check_size(path: &Path, width: u32, height: u32, camera: Option<&CameraIntrinsics>) -> Result<()> {
    match camera {
        Some(k) if (k.width, k.height) != (width as usize, height as usize) => Err(IngestError::BadImage {
            path: path.to_path_buf(),
            reason: format!("image is {width}x{height}, camera expects {}x{}", k.width, k.height),
        }),
        _ => Ok(()),
    }
}

/// Loads an 8-bit grayscale or color image as BT.601 gray levels.
pub fn load_intensity(path: &Path, camera: Option<&CameraIntrinsics>) -> Result<GrayImage> {
    let img = open_image(path)?;
    check_size(path, img.width(), img.height(), camera)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) | DynamicImage::ImageLumaA8(_) => {
            img.to_rgb8().pixels().map(|p| f64::from(luma601(p[0], p[1], p[2]))).collect()
        }
        other => {
            return Err(IngestError::BadImage { path: path.to_path_buf(), reason: format!("unsupported color type {:?}", other.color()) })
        }
    };
    Ok(GrayImage::new(w, h, data).expect("buffer matches dimensions"))
}

/// Loads a 16-bit depth image, dividing raw values by `scale`.
pub fn load_depth(path: &Path, scale: f64, camera: Option<&CameraIntrinsics>) -> Result<DepthImage> {
    let img = open_image(path)?;
    check_size(path, img.width(), img.height(), camera)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let DynamicImage::ImageLuma16(raw) = img else {
        return Err(IngestError::BadImage { path: path.to_path_buf(), reason: "depth must be a 16-bit single-channel image".into() });
    };
    let data = raw.into_raw().into_iter().map(|v| f64::from(v) / scale).collect();
    Ok(DepthImage::new(w, h, data).expect("buffer matches dimensions"))
}

/// Loads every associated frame of the sequence in `dir`.
pub fn load_rgbd_sequence(dir: &Path, association_file: &Path, options: &LoadOptions) -> Result<RgbdSequence> {
    let assoc_path = dir.join(association_file);
    let mut associations = parse_associations(&read_text(&assoc_path)?, &assoc_path)?;
    associations.sort_by(|a, b| a.rgb_timestamp.total_cmp(&b.rgb_timestamp));
    let trajectory = match &options.groundtruth {
        Some(gt) => {
            let p = dir.join(gt);
            Some(parse_groundtruth(&read_text(&p)?, &p)?)
        }
        None => None,
    };
    let mut frames = Vec::with_capacity(associations.len());
    let mut dropped = Vec::new();
    for a in associations {
        let mut drop = |reason: String| {
            warn!("dropping frame {}: {reason}", a.rgb_timestamp);
            dropped.push(DroppedFrame { timestamp: a.rgb_timestamp, reason });
        };
        let gap = (a.rgb_timestamp - a.depth_timestamp).abs();
        if gap > options.max_time_gap {
            drop(format!("color and depth timestamps differ by {gap:.3} s"));
            continue;
        }
        let pose = match &trajectory {
            Some(traj) => match interpolate_pose(traj, a.rgb_timestamp, options.max_time_gap) {
                Some(p) => Some(p),
                None => {
                    drop("no ground truth within the time gap".into());
                    continue;
                }
            },
            None => None,
        };
        frames.push(RgbdFrame {
            timestamp: a.rgb_timestamp,
            intensity: load_intensity(&dir.join(&a.rgb_path), options.camera.as_ref())?,
            depth: load_depth(&dir.join(&a.depth_path), options.depth_scale, options.camera.as_ref())?,
            pose,
        });
    }
    Ok(RgbdSequence { frames, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights_round_to_nearest() {
        assert_eq!(luma601(255, 255, 255), 255);
        assert_eq!(luma601(0, 0, 0), 0);
        // 0.299 * 255 = 76.245
        assert_eq!(luma601(255, 0, 0), 76);
        // 0.587 * 255 = 149.685
        assert_eq!(luma601(0, 255, 0), 150);
        // 2.99 + 11.74 + 3.42 = 18.15
        assert_eq!(luma601(10, 20, 30), 18);
    }

    #[test]
    fn association_lines_parse_with_comments() {
        let text = "# color depth\n\n1.0 rgb/1.png 1.01 depth/1.png\n  2.5 rgb/2.png 2.49 depth/2.png  \n";
        let a = parse_associations(text, Path::new("a.txt")).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[1].rgb_timestamp, 2.5);
        assert_eq!(a[1].depth_path, PathBuf::from("depth/2.png"));
    }

    #[test]
    fn malformed_lines_report_their_number() {
        let text = "# header\n1.0 a.png 1.0 b.png\n2.0 a.png 2.0\n";
        match parse_associations(text, Path::new("a.txt")) {
            Err(IngestError::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "1.0 0 0 0 0 0 0 1\n2.0 0 0 x 0 0 0 1\n";
        match parse_groundtruth(text, Path::new("g.txt")) {
            Err(IngestError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pose_interpolation_midpoint() {
        let traj = parse_groundtruth("0.0 0 0 0 0 0 0 1\n1.0 1 0 0 0 0 0 1\n", Path::new("g")).unwrap();
        let pose = interpolate_pose(&traj, 0.5, 1.0).unwrap();
        let center = pose.inverse().translation().clone_owned();
        assert!((center - Vector3::new(0.5, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotation_interpolation_is_spherical() {
        let half = std::f64::consts::FRAC_PI_4.sin();
        let text = format!("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 {half} {}\n", std::f64::consts::FRAC_PI_4.cos());
        let traj = parse_groundtruth(&text, Path::new("g")).unwrap();
        let pose = interpolate_pose(&traj, 0.5, 1.0).unwrap();
        // A quarter turn about z, halfway.
        let angle = pose.inverse().quaternion().angle();
        assert!((angle - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn interpolation_refuses_gaps_and_extrapolation() {
        let traj = parse_groundtruth("0.0 0 0 0 0 0 0 1\n1.0 1 0 0 0 0 0 1\n", Path::new("g")).unwrap();
        assert!(interpolate_pose(&traj, 0.5, 0.5).is_none());
        assert!(interpolate_pose(&traj, -0.1, 2.0).is_none());
        assert!(interpolate_pose(&traj, 1.1, 2.0).is_none());
        assert!(interpolate_pose(&traj, 1.0, 0.5).is_some());
    }
}
