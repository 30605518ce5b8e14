//! Cartesian target to joint configuration, torsion compensation and the
//! rotate-then-translate move plan.
//!
//! The exposed tube is a planar curve swept about z, so the solve decomposes:
//! the azimuth fixes `theta`, the radial distance fixes `s` through the planar
//! reach `rho(s)`, and the axial residue fixes `d`.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{check_domain, CtrError, Result};
use crate::execution::Execution;
use crate::kinematics::{base_transform, shape_transform, JointConfig, JointLimits};
use crate::numeric;
use crate::torsion::{wind_up, TorsionModel};
use crate::tube_shape::PlanarShape;

const REACH_SAMPLES: usize = 200;
const S_TOL: f64 = 1e-12;
/// Radial distance treated as on-axis.
const AXIS_EPS: f64 = 1e-12;

/// One actuation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Rotate { theta: f64 },
    Translate { d: f64, s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovePlan {
    /// Uncompensated IK solution.
    pub nominal: JointConfig,
    pub theta_command: f64,
    pub s_command: f64,
    pub d_command: f64,
    /// Rotation at the current insertion, then translation.
    pub sequence: [Action; 2],
}

impl MovePlan {
    pub fn command(&self) -> JointConfig {
        JointConfig::new(self.d_command, self.s_command, self.theta_command)
    }
}

/// Torsion compensation: the twist the rotation will lose is added in the
/// direction of rotation, evaluated where the tube will carry the load.
pub fn compensate(
    theta_nom: f64,
    s_nom: f64,
    theta_curr: f64,
    s_curr: f64,
    torsion: &TorsionModel,
) -> Result<f64> {
    let direction = sign(theta_nom - theta_curr);
    if direction == 0.0 {
        return Ok(theta_nom);
    }
    let s_load = if s_curr < s_nom { s_nom } else { s_curr };
    Ok(theta_nom + direction * torsion.deflection(s_load)?)
}

/// Signum with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Read-only solver state for one tube shape.
#[derive(Debug, Clone)]
pub struct Planner {
    shape: PlanarShape,
    segments: usize,
    limits: JointLimits,
    torsion: Option<TorsionModel>,
    monotone: bool,
    reach_grid: Vec<(f64, f64)>,
}

impl Planner {
    pub fn new(shape: PlanarShape, segments: usize, limits: JointLimits) -> Result<Self> {
        if segments == 0 {
            return Err(CtrError::InvalidInput("segment count must be at least 1".into()));
        }
        let s_max = limits.s_max.min(shape.arc_total());
        let mut planner = Planner {
            shape,
            segments,
            limits: JointLimits { s_max, ..limits },
            torsion: None,
            monotone: true,
            reach_grid: Vec::new(),
        };
        let mut grid = Vec::with_capacity(REACH_SAMPLES + 1);
        for i in 0..=REACH_SAMPLES {
            let s = s_max * i as f64 / REACH_SAMPLES as f64;
            grid.push((s, planner.planar_tip(s)?.0));
        }
        planner.monotone = grid.windows(2).all(|w| w[1].1 > w[0].1);
        if !planner.monotone {
            log::info!("radial reach is not monotone in s; using grid scan");
        }
        planner.reach_grid = grid;
        Ok(planner)
    }

    pub fn with_torsion(mut self, torsion: TorsionModel) -> Self {
        self.torsion = Some(torsion);
        self
    }

    pub fn shape(&self) -> &PlanarShape {
        &self.shape
    }

    pub fn limits(&self) -> &JointLimits {
        &self.limits
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn torsion(&self) -> Option<&TorsionModel> {
        self.torsion.as_ref()
    }

    pub fn reach_is_monotone(&self) -> bool {
        self.monotone
    }

    /// Largest radial distance the tip can reach.
    pub fn max_reach(&self) -> f64 {
        self.reach_grid.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    /// Radial distance and axial height of the tip at insertion `s`, relative
    /// to the outer-tube tip.
    pub fn planar_tip(&self, s: f64) -> Result<(f64, f64)> {
        let t = shape_transform(&self.shape, s, self.segments)?.translation();
        Ok((-t.y, t.z))
    }

    fn solve_s(&self, radius: f64) -> Result<f64> {
        let rho = |s: f64| self.planar_tip(s).map(|p| p.0).unwrap_or(f64::NAN) - radius;
        if self.monotone {
            let s_max = self.limits.s_max;
            return numeric::brent(rho, 0.0, s_max, S_TOL).map_err(|_| self.unreachable(radius));
        }
        // smallest insertion that reaches the radius
        for w in self.reach_grid.windows(2) {
            let (a, b) = (w[0].1 - radius, w[1].1 - radius);
            if a == 0.0 {
                return Ok(w[0].0);
            }
            if a.signum() != b.signum() {
                return numeric::brent(rho, w[0].0, w[1].0, S_TOL);
            }
        }
        Err(self.unreachable(radius))
    }

    fn unreachable(&self, radius: f64) -> CtrError {
        let nearest = self
            .reach_grid
            .iter()
            .map(|p| p.1)
            .min_by(|a, b| (a - radius).abs().total_cmp(&(b - radius).abs()))
            .unwrap_or(0.0);
        CtrError::Unreachable {
            reason: format!("radial distance {radius:.4} mm is outside the planar sweep"),
            nearest_radius: nearest,
        }
    }

    /// Nominal (uncompensated) joint configuration reaching `target`.
    pub fn solve(&self, target: &Point3<f64>) -> Result<JointConfig> {
        if !(target.x.is_finite() && target.y.is_finite() && target.z.is_finite()) {
            return Err(CtrError::InvalidInput("target must be finite".into()));
        }
        let radius = target.x.hypot(target.y);
        let (theta, s) = if radius <= AXIS_EPS {
            (0.0, 0.0)
        } else {
            (target.x.atan2(-target.y), self.solve_s(radius)?)
        };
        let (_, z_local) = self.planar_tip(s)?;
        let d = target.z - z_local;
        let d = check_domain("d", d, self.limits.d_min, self.limits.d_max).map_err(|_| {
            CtrError::Unreachable {
                reason: format!(
                    "outer-tube travel {d:.4} mm needed, limits [{}, {}]",
                    self.limits.d_min, self.limits.d_max
                ),
                nearest_radius: radius,
            }
        })?;
        Ok(JointConfig::new(d, s, theta))
    }

    /// Solves every target independently.
    pub fn solve_batch(&self, targets: &[Point3<f64>], exec: Execution) -> Vec<Result<JointConfig>> {
        exec.map(targets, |p| self.solve(p))
    }

    pub fn tip(&self, q: &JointConfig) -> Result<Point3<f64>> {
        let local = shape_transform(&self.shape, q.s, self.segments)?;
        Ok(Point3::from((base_transform(q.d, q.theta) * local).translation()))
    }

    /// IK plus compensation. Without a torsion model the command is nominal.
    pub fn plan_move(&self, current: &JointConfig, target: &Point3<f64>) -> Result<MovePlan> {
        let current = self.limits.check(current)?;
        let nominal = self.solve(target)?;
        let theta_command = match &self.torsion {
            Some(t) => compensate(nominal.theta, nominal.s, current.theta, current.s, t)?,
            None => nominal.theta,
        };
        Ok(MovePlan {
            nominal,
            theta_command,
            s_command: nominal.s,
            d_command: nominal.d,
            sequence: [
                Action::Rotate {
                    theta: theta_command,
                },
                Action::Translate {
                    d: nominal.d,
                    s: nominal.s,
                },
            ],
        })
    }
}

/// Convenience one-shot solve with default limits.
pub fn solve_ik(target: &Point3<f64>, shape: &PlanarShape, limits: &JointLimits) -> Result<JointConfig> {
    Planner::new(shape.clone(), crate::kinematics::DEFAULT_SEGMENTS, *limits)?.solve(target)
}

/// Plant in which the inner tube loses `phi` of every base rotation to
/// friction wind-up, `phi` being evaluated where the tube ends up loaded.
#[derive(Debug, Clone)]
pub struct TorsionPlant {
    pub model: TorsionModel,
}

impl TorsionPlant {
    pub fn new(model: TorsionModel) -> Self {
        TorsionPlant { model }
    }

    /// Joint state actually reached when `command` is executed from `current`.
    pub fn execute(&self, current: &JointConfig, command: &JointConfig) -> Result<JointConfig> {
        let rotation = command.theta - current.theta;
        let phi = self.model.deflection(current.s.max(command.s))?;
        let theta = command.theta - wind_up(phi, rotation);
        Ok(JointConfig::new(command.d, command.s, theta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::DEFAULT_SEGMENTS;
    use crate::presets;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn planner() -> Planner {
        static PLANNER: std::sync::OnceLock<Planner> = std::sync::OnceLock::new();
        PLANNER
            .get_or_init(|| {
                let shape = presets::nylon_tube_shape();
                let limits = JointLimits::for_shape(&shape);
                Planner::new(shape, DEFAULT_SEGMENTS, limits).unwrap()
            })
            .clone()
    }

    fn torsion() -> TorsionModel {
        TorsionModel::new(
            presets::nylon_tube_shape(),
            presets::inner_tube(),
            presets::nylon(),
            DEFAULT_SEGMENTS,
        )
    }

    #[test]
    fn default_shape_has_monotone_reach_covering_the_target_square() {
        let p = planner();
        assert!(p.reach_is_monotone());
        assert!(p.max_reach() > 8.0 * std::f64::consts::SQRT_2);
    }

    #[test]
    fn recovers_known_joints_in_plane() {
        let p = planner();
        let q = JointConfig::new(30.0, 17.0, 0.0);
        let target = p.tip(&q).unwrap();
        let back = p.solve(&target).unwrap();
        assert_relative_eq!(back.d, 30.0, epsilon = 1e-8);
        assert_relative_eq!(back.s, 17.0, epsilon = 1e-8);
        assert_relative_eq!(back.theta, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn axis_target_breaks_the_tie_at_zero() {
        let p = planner();
        let q = p.solve(&Point3::new(0.0, 0.0, 42.0)).unwrap();
        assert_eq!(q, JointConfig::new(42.0, 0.0, 0.0));
    }

    #[test]
    fn unreachable_targets_report_the_nearest_radius() {
        let p = planner();
        match p.solve(&Point3::new(30.0, 0.0, 50.0)) {
            Err(CtrError::Unreachable { nearest_radius, .. }) => {
                assert_relative_eq!(nearest_radius, p.max_reach(), epsilon = 1e-12)
            }
            other => panic!("expected unreachable, got {other:?}"),
        }
        assert!(matches!(
            p.solve(&Point3::new(0.0, 0.0, 200.0)),
            Err(CtrError::Unreachable { .. })
        ));
    }

    #[test]
    fn compensation_follows_the_branch_structure() {
        let t = torsion();
        assert_eq!(compensate(0.3, 20.0, 0.3, 10.0, &t).unwrap(), 0.3);
        let phi20 = t.deflection(20.0).unwrap();
        assert_relative_eq!(compensate(0.5, 20.0, 0.1, 10.0, &t).unwrap(), 0.5 + phi20);
        assert_relative_eq!(compensate(0.1, 10.0, 0.5, 20.0, &t).unwrap(), 0.1 - phi20);
    }

    #[test]
    fn axis_plan_is_a_pure_translation() {
        let p = planner().with_torsion(torsion());
        let plan = p.plan_move(&JointConfig::home(), &Point3::new(0.0, 0.0, 12.0)).unwrap();
        assert_eq!(plan.theta_command, 0.0);
        assert_eq!(plan.sequence[0], Action::Rotate { theta: 0.0 });
        assert_eq!(plan.sequence[1], Action::Translate { d: 12.0, s: 0.0 });
    }

    #[test]
    fn plans_are_deterministic_and_compensation_cancels_wind_up() {
        let p = planner().with_torsion(torsion());
        let plant = TorsionPlant::new(torsion());
        let current = JointConfig::new(10.0, 5.0, -0.4);
        let target = Point3::new(5.0, 4.0, 40.0);
        let plan = p.plan_move(&current, &target).unwrap();
        assert_eq!(plan, p.plan_move(&current, &target).unwrap());
        let reached = plant.execute(&current, &plan.command()).unwrap();
        assert!((p.tip(&reached).unwrap() - target).norm() < 0.01);
        // nominal command through the same plant misses by about phi * radius
        let raw = plant.execute(&current, &plan.nominal).unwrap();
        let miss = (p.tip(&raw).unwrap() - target).norm();
        let phi = torsion().deflection(current.s.max(plan.s_command)).unwrap();
        assert!(miss > 0.0 && miss <= phi * target.coords.xy().norm() + 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fk_ik_round_trip(x in -8.0f64..8.0, y in -8.0f64..8.0, z in 30.0f64..70.0) {
            let p = planner();
            let target = Point3::new(x, y, z);
            let q = p.solve(&target).unwrap();
            prop_assert!((p.tip(&q).unwrap() - target).norm() < 0.01);
        }

        #[test]
        fn compensation_has_the_sign_of_rotation(th_n in -3.0f64..3.0, th_c in -3.0f64..3.0, s_n in 0.0f64..29.0, s_c in 0.0f64..29.0) {
            let t = torsion();
            let s_n = s_n.min(t.s_max());
            let s_c = s_c.min(t.s_max());
            let added = compensate(th_n, s_n, th_c, s_c, &t).unwrap() - th_n;
            prop_assert!(added * (th_n - th_c) >= 0.0);
        }
    }
}
