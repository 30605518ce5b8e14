//! Forward kinematics of the two-tube robot.
//!
//! The exposed part of the inner tube is the distal arc `[x_min, x_max_total]`
//! of the characterized centerline. It is chained as `n` constant-curvature
//! segments, each bending about the local x-axis, and placed on the outer
//! tube's tip by a rotation about z and a translation along z.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_domain, CtrError, Result};
use crate::tube_shape::PlanarShape;

pub const DEFAULT_SEGMENTS: usize = 100;
/// Default outer-tube travel, mm.
pub const DEFAULT_TRAVEL: f64 = 85.0;

const SMALL_ANGLE: f64 = 1e-7;

/// Rigid homogeneous transform (rotation block plus translation in mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 4]; 4]", into = "[[f64; 4]; 4]")]
pub struct Transform(Matrix4<f64>);

impl From<Transform> for [[f64; 4]; 4] {
    fn from(t: Transform) -> Self {
        let mut rows = [[0.0; 4]; 4];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = t.0[(i, j)];
            }
        }
        rows
    }
}

impl TryFrom<[[f64; 4]; 4]> for Transform {
    type Error = CtrError;

    fn try_from(rows: [[f64; 4]; 4]) -> Result<Self> {
        let t = Transform(Matrix4::from_fn(|i, j| rows[i][j]));
        if !t.is_rigid(1e-6) {
            return Err(CtrError::InvalidInput("matrix is not a rigid transform".into()));
        }
        Ok(t)
    }
}

impl Transform {
    pub fn identity() -> Self {
        Transform(Matrix4::identity())
    }

    pub fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Transform(m)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::from_parts(Matrix3::identity(), t)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.translation())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation().transpose();
        Self::from_parts(rt, -(rt * self.translation()))
    }

    /// Orthonormal rotation with unit determinant and a `(0, 0, 0, 1)` bottom row.
    pub fn is_rigid(&self, tol: f64) -> bool {
        let r = self.rotation();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        let bottom = self.0.fixed_view::<1, 4>(3, 0);
        ortho < tol
            && (r.determinant() - 1.0).abs() < tol
            && bottom[0] == 0.0
            && bottom[1] == 0.0
            && bottom[2] == 0.0
            && bottom[3] == 1.0
    }
}

impl Mul for Transform {
    type Output = Transform;

    fn mul(self, rhs: Transform) -> Transform {
        Transform(self.0 * rhs.0)
    }
}

/// Joint-space configuration: outer-tube translation `d`, inner-tube
/// insertion `s` beyond the outer tube, inner-tube rotation `theta` (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointConfig {
    pub d: f64,
    pub s: f64,
    pub theta: f64,
}

impl JointConfig {
    pub fn new(d: f64, s: f64, theta: f64) -> Self {
        JointConfig { d, s, theta }
    }

    pub fn home() -> Self {
        JointConfig::new(0.0, 0.0, 0.0)
    }
}

/// Travel limits for the translational joints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub d_min: f64,
    pub d_max: f64,
    pub s_max: f64,
}

impl JointLimits {
    pub fn for_shape(shape: &PlanarShape) -> Self {
        JointLimits {
            d_min: 0.0,
            d_max: DEFAULT_TRAVEL,
            s_max: shape.arc_total(),
        }
    }

    pub fn check(&self, q: &JointConfig) -> Result<JointConfig> {
        let d = check_domain("d", q.d, self.d_min, self.d_max)?;
        let s = check_domain("s", q.s, 0.0, self.s_max)?;
        if !q.theta.is_finite() {
            return Err(CtrError::InvalidInput("theta must be finite".into()));
        }
        Ok(JointConfig::new(d, s, q.theta))
    }
}

/// Where along each segment the curvature is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurvatureSampling {
    /// `kappa(x_{j-1})`, the left grid node.
    #[default]
    LeftEndpoint,
    /// `kappa((x_{j-1} + x_j) / 2)`.
    Midpoint,
}

/// Constant-curvature element of arc length `ds`, bending about local x.
pub fn segment_transform(kappa: f64, ds: f64) -> Transform {
    constant_curvature_transform(kappa, ds)
}

/// Closed-form constant-curvature arc of length `s`.
pub fn constant_curvature_transform(kappa: f64, s: f64) -> Transform {
    let angle = kappa * s;
    let (sin, cos) = angle.sin_cos();
    let (ty, tz) = if angle.abs() < SMALL_ANGLE {
        (-0.5 * kappa * s * s, s - kappa * kappa * s * s * s / 6.0)
    } else {
        let half = (0.5 * angle).sin();
        (-2.0 * half * half / kappa, sin / kappa)
    };
    Transform(Matrix4::new(
        1.0, 0.0, 0.0, 0.0, //
        0.0, cos, -sin, ty, //
        0.0, sin, cos, tz, //
        0.0, 0.0, 0.0, 1.0,
    ))
}

/// Rotation `theta` about z followed by translation `d` along z.
pub fn base_transform(d: f64, theta: f64) -> Transform {
    let (sin, cos) = theta.sin_cos();
    Transform(Matrix4::new(
        cos, -sin, 0.0, 0.0, //
        sin, cos, 0.0, 0.0, //
        0.0, 0.0, 1.0, d, //
        0.0, 0.0, 0.0, 1.0,
    ))
}

fn exposed_segments(
    shape: &PlanarShape,
    s: f64,
    n: usize,
    sampling: CurvatureSampling,
) -> Result<Vec<Transform>> {
    if n == 0 {
        return Err(CtrError::InvalidInput("segment count must be at least 1".into()));
    }
    let x_min = shape.solve_x_min(s)?;
    let x_max = shape.x_max_total();
    let node = |j: usize| x_min + (j as f64 / n as f64) * (x_max - x_min);
    Ok((1..=n)
        .map(|j| {
            let (x0, x1) = (node(j - 1), node(j));
            let kappa = match sampling {
                CurvatureSampling::LeftEndpoint => shape.curvature_at(x0),
                CurvatureSampling::Midpoint => shape.curvature_at(0.5 * (x0 + x1)),
            };
            segment_transform(kappa, shape.arc_between(x0, x1))
        })
        .collect())
}

/// Pose of the inner-tube tip relative to the outer-tube tip at insertion `s`.
pub fn shape_transform(shape: &PlanarShape, s: f64, n: usize) -> Result<Transform> {
    shape_transform_with(shape, s, n, CurvatureSampling::LeftEndpoint)
}

pub fn shape_transform_with(
    shape: &PlanarShape,
    s: f64,
    n: usize,
    sampling: CurvatureSampling,
) -> Result<Transform> {
    Ok(exposed_segments(shape, s, n, sampling)?
        .into_iter()
        .fold(Transform::identity(), |acc, seg| acc * seg))
}

/// Tip pose plus the backbone sampled at every grid node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSolution {
    pub tip: Transform,
    /// `n + 1` points from the outer-tube tip to the inner-tube tip, mm.
    pub backbone: Vec<[f64; 3]>,
}

impl ForwardSolution {
    pub fn tip_position(&self) -> Point3<f64> {
        Point3::from(self.tip.translation())
    }
}

pub fn forward_kinematics(shape: &PlanarShape, q: &JointConfig, n: usize) -> Result<ForwardSolution> {
    forward_kinematics_with(shape, q, n, CurvatureSampling::LeftEndpoint)
}

pub fn forward_kinematics_with(
    shape: &PlanarShape,
    q: &JointConfig,
    n: usize,
    sampling: CurvatureSampling,
) -> Result<ForwardSolution> {
    let segments = exposed_segments(shape, q.s, n, sampling)?;
    let mut acc = base_transform(q.d, q.theta);
    let mut backbone = Vec::with_capacity(n + 1);
    let push = |t: &Transform, out: &mut Vec<[f64; 3]>| {
        let p = t.translation();
        out.push([p.x, p.y, p.z]);
    };
    push(&acc, &mut backbone);
    for seg in segments {
        acc = acc * seg;
        push(&acc, &mut backbone);
    }
    Ok(ForwardSolution { tip: acc, backbone })
}

/// Tip position only.
pub fn tip_position(shape: &PlanarShape, q: &JointConfig, n: usize) -> Result<Point3<f64>> {
    let local = shape_transform(shape, q.s, n)?;
    Ok(Point3::from((base_transform(q.d, q.theta) * local).translation()))
}

/// Point-to-polyline deviation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationStats {
    pub mean: f64,
    pub std_dev: f64,
    pub max: f64,
    pub stations: usize,
}

fn point_segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Resamples `reference` at `step`-mm arc-length stations (both ends included)
/// and averages each station's minimum distance to the `model` polyline.
pub fn shape_deviation(reference: &[[f64; 3]], model: &[[f64; 3]], step: f64) -> Result<DeviationStats> {
    if reference.len() < 2 || model.len() < 2 {
        return Err(CtrError::InvalidInput("polylines need at least two points".into()));
    }
    if !(step > 0.0) {
        return Err(CtrError::InvalidInput("station step must be positive".into()));
    }
    let refv: Vec<Vector3<f64>> = reference.iter().map(|p| Vector3::from(*p)).collect();
    let modv: Vec<Vector3<f64>> = model.iter().map(|p| Vector3::from(*p)).collect();
    let mut stations = vec![refv[0]];
    let mut carried = 0.0;
    for w in refv.windows(2) {
        let seg_len = (w[1] - w[0]).norm();
        let mut t = step - carried;
        while t <= seg_len {
            stations.push(w[0] + (w[1] - w[0]) * (t / seg_len));
            t += step;
        }
        carried = seg_len - (t - step);
    }
    if carried > 1e-9 {
        stations.push(*refv.last().unwrap());
    }
    let dists: Vec<f64> = stations
        .iter()
        .map(|p| {
            modv.windows(2)
                .map(|w| point_segment_distance(p, &w[0], &w[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let count = dists.len() as f64;
    let mean = dists.iter().sum::<f64>() / count;
    let var = dists.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / count;
    Ok(DeviationStats {
        mean,
        std_dev: var.sqrt(),
        max: dists.iter().copied().fold(0.0, f64::max),
        stations: dists.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn quartic() -> PlanarShape {
        crate::presets::nylon_tube_shape()
    }

    #[test]
    fn segment_examples() {
        let t = segment_transform(0.0, 5.0);
        assert_eq!(t.rotation(), Matrix3::identity());
        assert_relative_eq!(t.translation(), Vector3::new(0.0, 0.0, 5.0), epsilon = 1e-15);

        let t = segment_transform(1.0 / 20.0, 10.0 * PI);
        assert_relative_eq!(t.translation(), Vector3::new(0.0, -20.0, 20.0), epsilon = 1e-12);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_relative_eq!(t.rotation(), rx, epsilon = 1e-15);

        // direct evaluation of the element matrix
        let (k, ds) = (0.05_f64, 1.0_f64);
        let a = k * ds;
        let direct = Matrix4::new(
            1.0, 0.0, 0.0, 0.0,
            0.0, a.cos(), -a.sin(), (a.cos() - 1.0) / k,
            0.0, a.sin(), a.cos(), a.sin() / k,
            0.0, 0.0, 0.0, 1.0,
        );
        assert!((segment_transform(k, ds).matrix() - direct).abs().max() < 1e-12);
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let below = segment_transform(1e-9, 10.0);
        let exact_y = -0.5 * 1e-9 * 100.0;
        assert_relative_eq!(below.translation().y, exact_y, epsilon = 1e-20);
        let above = segment_transform(2e-8, 10.0);
        let series = -0.5 * 2e-8 * 100.0;
        assert!((above.translation().y - series).abs() < 1e-12);
    }

    #[test]
    fn constant_curvature_examples() {
        let t = constant_curvature_transform(0.0, 29.0);
        assert_relative_eq!(t.translation(), Vector3::new(0.0, 0.0, 29.0));
        let t = constant_curvature_transform(0.05, 10.0 * PI);
        assert_relative_eq!(t.translation(), Vector3::new(0.0, -20.0, 20.0), epsilon = 1e-12);
    }

    #[test]
    fn base_examples() {
        assert_eq!(base_transform(0.0, 0.0), Transform::identity());
        let t = base_transform(5.0, FRAC_PI_2);
        let dir = t.rotation() * Vector3::new(0.0, -1.0, 0.0);
        assert_relative_eq!(dir, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(t.transform_point(&Point3::origin()), Point3::new(0.0, 0.0, 5.0));
        let (d, th) = (10.0, PI);
        let direct = Matrix4::new(
            th.cos(), -th.sin(), 0.0, 0.0,
            th.sin(), th.cos(), 0.0, 0.0,
            0.0, 0.0, 1.0, d,
            0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(*base_transform(d, th).matrix(), direct);
    }

    #[test]
    fn zero_insertion_is_identity() {
        let shape = quartic();
        assert_eq!(shape_transform(&shape, 0.0, 100).unwrap(), Transform::identity());
        let sol = forward_kinematics(&shape, &JointConfig::home(), 100).unwrap();
        assert_eq!(sol.tip, Transform::identity());
        for theta in [-2.0, 0.3, 1.9] {
            let p = tip_position(&shape, &JointConfig::new(12.0, 0.0, theta), 100).unwrap();
            assert_relative_eq!(p, Point3::new(0.0, 0.0, 12.0));
        }
    }

    #[test]
    fn arc_shape_matches_closed_form() {
        let kappa = 1.0 / 33.4;
        let shape = PlanarShape::circular_arc(33.4, 29.0).unwrap();
        let chained = shape_transform(&shape, 29.0, 100).unwrap();
        let closed = constant_curvature_transform(kappa, 29.0);
        assert!((chained.translation() - closed.translation()).norm() < 1e-6);
    }

    #[test]
    fn backbone_has_grid_nodes_and_ends_at_tip() {
        let shape = quartic();
        let sol = forward_kinematics(&shape, &JointConfig::new(10.0, 20.0, 1.57), 100).unwrap();
        assert_eq!(sol.backbone.len(), 101);
        assert_relative_eq!(Vector3::from(sol.backbone[0]), Vector3::new(0.0, 0.0, 10.0));
        assert_relative_eq!(Vector3::from(*sol.backbone.last().unwrap()), sol.tip.translation());
        assert!(sol.tip.is_rigid(1e-9));
    }

    #[test]
    fn out_of_range_insertion_is_rejected() {
        let shape = quartic();
        assert!(shape_transform(&shape, shape.arc_total() + 0.5, 100).is_err());
        assert!(shape_transform(&shape, 5.0, 0).is_err());
    }

    #[test]
    fn deviation_of_identical_polylines_is_zero() {
        let line: Vec<[f64; 3]> = (0..11).map(|i| [0.0, 0.0, i as f64 * 2.0]).collect();
        let stats = shape_deviation(&line, &line, 1.0).unwrap();
        assert_eq!(stats.stations, 21);
        assert!(stats.mean < 1e-12);
        let shifted: Vec<[f64; 3]> = line.iter().map(|p| [0.5, 0.0, p[2]]).collect();
        let stats = shape_deviation(&shifted, &line, 1.0).unwrap();
        assert_relative_eq!(stats.mean, 0.5, epsilon = 1e-12);
        assert_relative_eq!(stats.max, 0.5, epsilon = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn transforms_are_rigid(s in 0.0f64..29.0, d in 0.0f64..85.0, theta in -7.0f64..7.0) {
            let shape = quartic();
            let s = s.min(shape.arc_total());
            let sol = forward_kinematics(&shape, &JointConfig::new(d, s, theta), 50).unwrap();
            prop_assert!(sol.tip.is_rigid(1e-9));
        }

        #[test]
        fn rotation_sweeps_a_circle(s in 1.0f64..29.0, d in 0.0f64..85.0, t1 in -4.0f64..4.0, t2 in -4.0f64..4.0) {
            let shape = quartic();
            let s = s.min(shape.arc_total());
            let p1 = tip_position(&shape, &JointConfig::new(d, s, t1), 100).unwrap();
            let p2 = tip_position(&shape, &JointConfig::new(d, s, t2), 100).unwrap();
            prop_assert!((p1.x.hypot(p1.y) - p2.x.hypot(p2.y)).abs() < 1e-9);
            prop_assert!((p1.z - p2.z).abs() < 1e-9);
        }
    }
}
