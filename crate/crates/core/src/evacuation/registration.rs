use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CtrError, Result};
use crate::execution::Execution;
use crate::kinematics::Transform;

/// Relative singular-value floor below which fiducials count as collinear.
const COLLINEAR_RATIO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Image frame to robot frame.
    pub transform: Transform,
    pub rms_fiducial_error: f64,
}

/// Least-squares rigid fit taking `image` points onto matched `robot` points
/// (SVD of the cross-covariance, with reflection correction).
pub fn register(image: &[Point3<f64>], robot: &[Point3<f64>]) -> Result<RegistrationResult> {
    if image.len() != robot.len() {
        return Err(CtrError::DegenerateRegistration(format!(
            "{} image fiducials but {} robot fiducials",
            image.len(),
            robot.len()
        )));
    }
    if image.len() < 3 {
        return Err(CtrError::DegenerateRegistration(format!(
            "need at least 3 fiducial pairs, got {}",
            image.len()
        )));
    }
    let n = image.len() as f64;
    let ci = image.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let cr = robot.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut spread = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for (p, q) in image.iter().zip(robot) {
        let a = p.coords - ci;
        let b = q.coords - cr;
        spread += a * a.transpose();
        h += a * b.transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= COLLINEAR_RATIO * sv[0] {
        return Err(CtrError::DegenerateRegistration("fiducials are coincident or collinear".into()));
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(CtrError::DegenerateRegistration("SVD did not converge".into())),
    };
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = v * fix * u.transpose();
    let t = cr - r * ci;
    let transform = Transform::from_parts(r, t);
    let sq: f64 = image
        .iter()
        .zip(robot)
        .map(|(p, q)| (transform.transform_point(p) - q).norm_squared())
        .sum();
    Ok(RegistrationResult {
        transform,
        rms_fiducial_error: (sq / n).sqrt(),
    })
}

/// Uniformly random rotation with a translation in [-100, 100] mm per axis.
pub fn random_rigid<R: Rng + ?Sized>(rng: &mut R) -> Transform {
    let q: Vector4<f64> = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
    let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(q));
    let t = Vector3::from_fn(|_, _| rng.random_range(-100.0..100.0));
    Transform::from_parts(*rot.to_rotation_matrix().matrix(), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegistrationTrials {
    pub trials: usize,
    pub fiducials: usize,
    pub noise_sd: f64,
    /// Largest matrix-entry error of the noise-free fits.
    pub max_exact_error: f64,
    pub rms_min: f64,
    pub rms_max: f64,
    /// Root mean square of the per-trial fiducial rms errors.
    pub rms_pooled: f64,
}

/// Monte Carlo over random rigid transforms and random fiducial layouts in a
/// 160 mm cube. Each trial is fitted once noise-free and once with Gaussian
/// noise of `noise_sd` mm on the robot-side points. Trial `i` uses seed `seed + i`,
/// so results do not depend on the execution mode.
pub fn registration_trials(
    trials: usize,
    fiducials: usize,
    noise_sd: f64,
    seed: u64,
    exec: Execution,
) -> Result<RegistrationTrials> {
    if trials == 0 {
        return Err(CtrError::InvalidInput("need at least one trial".into()));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| CtrError::InvalidInput(format!("fiducial noise: {e}")))?;
    let ids: Vec<u64> = (0..trials as u64).collect();
    let results = exec.map(&ids, |&i| -> Result<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
        let truth = random_rigid(&mut rng);
        let image: Vec<Point3<f64>> = (0..fiducials)
            .map(|_| Point3::from(Vector3::from_fn(|_, _| rng.random_range(-80.0..80.0))))
            .collect();
        let exact: Vec<Point3<f64>> = image.iter().map(|p| truth.transform_point(p)).collect();
        let fit = register(&image, &exact)?;
        let err = (fit.transform.matrix() - truth.matrix()).abs().max();
        let noisy: Vec<Point3<f64>> = exact
            .iter()
            .map(|p| p + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
            .collect();
        Ok((err, register(&image, &noisy)?.rms_fiducial_error))
    });
    let results: Vec<(f64, f64)> = results.into_iter().collect::<Result<_>>()?;
    let rms: Vec<f64> = results.iter().map(|r| r.1).collect();
    Ok(RegistrationTrials {
        trials,
        fiducials,
        noise_sd,
        max_exact_error: results.iter().map(|r| r.0).fold(0.0, f64::max),
        rms_min: rms.iter().copied().fold(f64::INFINITY, f64::min),
        rms_max: rms.iter().copied().fold(0.0, f64::max),
        rms_pooled: (rms.iter().map(|r| r * r).sum::<f64>() / trials as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn fiducials() -> Vec<Point3<f64>> {
        vec![
            Point3::new(60.0, 0.0, 0.0),
            Point3::new(0.0, 60.0, 10.0),
            Point3::new(-60.0, 0.0, 20.0),
            Point3::new(0.0, -60.0, 30.0),
        ]
    }

    #[test]
    fn identity_for_identical_sets() {
        let p = fiducials();
        let r = register(&p, &p).unwrap();
        assert!(r.rms_fiducial_error < 1e-12);
        assert!((r.transform.matrix() - nalgebra::Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn recovers_rotation_about_z_and_translation() {
        let truth = Transform::from_parts(
            *Rotation3::from_axis_angle(&Vector3::z_axis(), 30f64.to_radians()).matrix(),
            Vector3::new(5.0, 5.0, 5.0),
        );
        let img = fiducials();
        let rob: Vec<_> = img.iter().map(|p| truth.transform_point(p)).collect();
        let r = register(&img, &rob).unwrap();
        assert!((r.transform.matrix() - truth.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn random_transforms_are_recovered() {
        let t = registration_trials(200, 5, 0.0, 1, Execution::Sequential).unwrap();
        assert!(t.max_exact_error < 1e-8, "{}", t.max_exact_error);
    }

    #[test]
    fn trials_do_not_depend_on_execution_mode() {
        let a = registration_trials(20, 4, 0.5, 9, Execution::Sequential).unwrap();
        let b = registration_trials(20, 4, 0.5, 9, Execution::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let line: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(register(&line, &line), Err(CtrError::DegenerateRegistration(_))));
        let p = fiducials();
        assert!(register(&p[..2], &p[..2]).is_err());
        assert!(register(&p, &p[..3]).is_err());
    }
}
