//! Trajectory error after closed-form alignment.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::PoseSE3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alignment {
    /// Rotation and translation.
    Rigid,
    /// Rotation, translation and uniform scale (monocular scale gauge).
    Similarity,
}

/// `dst ~ scale * rotation * src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl AlignmentTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares alignment of corresponding point sets (Umeyama).
pub fn umeyama(src: &[Vector3<f64>], dst: &[Vector3<f64>], alignment: Alignment) -> Result<AlignmentTransform> {
    if src.len() != dst.len() {
        return Err(Error::InvalidInput(format!("{} estimated vs {} reference positions", src.len(), dst.len())));
    }
    let n = src.len();
    if n < 2 {
        return Err(Error::TooFewPoses(n));
    }
    let mu_s = src.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_d = dst.iter().sum::<Vector3<f64>>() / n as f64;
    let mut sigma = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        sigma += (d - mu_d) * (s - mu_s).transpose();
        var_s += (s - mu_s).norm_squared();
    }
    sigma /= n as f64;
    var_s /= n as f64;
    let svd = sigma.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut signs = Matrix3::identity();
    if (u.determinant() * vt.determinant()) < 0.0 {
        signs[(2, 2)] = -1.0;
    }
    let rotation = u * signs * vt;
    let scale = match alignment {
        Alignment::Rigid => 1.0,
        Alignment::Similarity => {
            if var_s <= 0.0 {
                return Err(Error::InvalidInput("estimated positions are all identical".into()));
            }
            (svd.singular_values.component_mul(&signs.diagonal())).sum() / var_s
        }
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(AlignmentTransform { rotation, translation, scale })
}

/// Camera centers of world-to-camera poses.
pub fn camera_centers(poses: &[PoseSE3]) -> Vec<Vector3<f64>> {
    poses.iter().map(|p| p.center()).collect()
}

/// Root-mean-square position error of `estimated` against `reference`
/// after aligning the estimate onto the reference.
pub fn ate_rmse(estimated: &[Vector3<f64>], reference: &[Vector3<f64>], alignment: Alignment) -> Result<f64> {
    let t = umeyama(estimated, reference, alignment)?;
    let sum: f64 = estimated.iter().zip(reference).map(|(e, r)| (t.apply(e) - r).norm_squared()).sum();
    Ok((sum / estimated.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use proptest::prelude::*;

    fn traj() -> Vec<Vector3<f64>> {
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.3, 0.1, 0.0),
            Vector3::new(0.5, -0.2, 0.1),
            Vector3::new(0.9, 0.0, 0.3),
        ]
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        assert!(ate_rmse(&traj(), &traj(), Alignment::Rigid).unwrap() < 1e-12);
    }

    #[test]
    fn too_few_poses() {
        assert_eq!(ate_rmse(&traj()[..1], &traj()[..1], Alignment::Rigid).unwrap_err(), Error::TooFewPoses(1));
    }

    #[test]
    fn two_pose_fixture_matches_brute_force_alignment() {
        // Reference poses 1 m apart, estimate has 1 m error on the second.
        let reference = [Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let estimated = [Vector3::zeros(), Vector3::new(2.0, 0.0, 0.0)];
        let ate = ate_rmse(&estimated, &reference, Alignment::Rigid).unwrap();
        // Brute force over rotations about z and translations along x (the
        // optimum keeps the segment on the x axis): residuals are
        // (t, 2c + t - 1) for a rotation with cosine c, minimized at c = 1,
        // t = -0.5, giving 0.5 m on each pose.
        let mut best = f64::INFINITY;
        for i in 0..=360 {
            let c = (i as f64).to_radians().cos();
            for j in -200..=200 {
                let t = j as f64 * 0.005;
                let s = (i as f64).to_radians().sin();
                let e1 = t * t;
                let e2 = (2.0 * c + t - 1.0).powi(2) + (2.0 * s).powi(2);
                best = best.min(((e1 + e2) / 2.0).sqrt());
            }
        }
        assert_relative_eq!(best, 0.5, epsilon = 1e-12);
        assert_relative_eq!(ate, 0.5, epsilon = 1e-12);
        // Without alignment the error would be 1/sqrt(2).
        let raw = ((0.0 + 1.0) / 2.0f64).sqrt();
        assert!(ate < raw);
    }

    #[test]
    fn similarity_alignment_removes_scale() {
        let r = traj();
        let est: Vec<_> = r.iter().map(|p| p * 0.37).collect();
        assert!(ate_rmse(&est, &r, Alignment::Similarity).unwrap() < 1e-12);
        assert!(ate_rmse(&est, &r, Alignment::Rigid).unwrap() > 0.1);
    }

    proptest! {
        #[test]
        fn rigid_transform_is_removed(xi in prop::array::uniform6(-1.0..1.0f64)) {
            let t = PoseSE3::exp(&Vector6::from_row_slice(&xi));
            let moved: Vec<_> = traj().iter().map(|p| t.transform_point(p)).collect();
            prop_assert!(ate_rmse(&moved, &traj(), Alignment::Rigid).unwrap() < 1e-9);
        }
    }
}
