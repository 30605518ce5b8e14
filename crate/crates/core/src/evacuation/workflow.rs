use std::io::Write;

use nalgebra::{Matrix3, Point3, Rotation3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::phantom::ClotPhantom;
use super::registration::{register, RegistrationResult};
use crate::error::{CtrError, Result};
use crate::inverse_kinematics::{Planner, TorsionPlant};
use crate::kinematics::{JointConfig, Transform};
use crate::motor_control::{simulate_move, ControllerParams, MotorPlant};

/// The aspiration sphere cannot be smaller than the inner tube's lumen radius, mm.
pub const MIN_ASPIRATION_RADIUS: f64 = 2.0;

/// Above this eigenvalue ratio the clot has a usable long axis.
const ELONGATION_RATIO: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvacuationPolicy {
    /// Radius around the tip inside which clot is removed, mm.
    pub aspiration_radius: f64,
    /// Longest time spent aspirating at one target, s.
    pub dwell: f64,
    pub rate_ml_per_min: f64,
    /// Stop once the residual drops below this; 0 runs until nothing reachable is left.
    pub stop_ml: f64,
    pub max_targets: usize,
    /// Consecutive targets without any removal before giving up.
    pub stall_targets: usize,
    /// Targets are only aimed at voxels this far inside the aspiration radius
    /// of the reachable workspace, mm.
    pub target_margin: f64,
}

impl Default for EvacuationPolicy {
    fn default() -> Self {
        EvacuationPolicy {
            aspiration_radius: 6.0,
            dwell: 9.0,
            rate_ml_per_min: 6.0,
            stop_ml: 15.0,
            max_targets: 500,
            stall_targets: 3,
            target_margin: 1.0,
        }
    }
}

impl EvacuationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.aspiration_radius >= MIN_ASPIRATION_RADIUS) {
            return Err(CtrError::InvalidInput(format!(
                "aspiration radius {} below the {MIN_ASPIRATION_RADIUS} mm lumen radius",
                self.aspiration_radius
            )));
        }
        if !(self.dwell > 0.0 && self.rate_ml_per_min > 0.0) {
            return Err(CtrError::InvalidInput("dwell and aspiration rate must be positive".into()));
        }
        if !(self.stop_ml >= 0.0) {
            return Err(CtrError::InvalidInput("stop volume must be non-negative".into()));
        }
        if self.stall_targets == 0 || self.max_targets == 0 {
            return Err(CtrError::InvalidInput("stall and target limits must be at least 1".into()));
        }
        if !(self.target_margin >= 0.0 && self.target_margin < self.aspiration_radius) {
            return Err(CtrError::InvalidInput("target margin must lie in [0, aspiration radius)".into()));
        }
        Ok(())
    }

    pub fn rate_ml_per_s(&self) -> f64 {
        self.rate_ml_per_min / 60.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aspiration {
    /// Voxel indices removed, nearest first.
    pub removed: Vec<usize>,
    pub removed_ml: f64,
    /// Time the removal took at the aspiration rate, s.
    pub duration: f64,
}

/// Voxel budget for one dwell.
pub fn aspiration_cap(voxel_volume_mm3: f64, dwell: f64, rate_ml_per_s: f64) -> usize {
    (rate_ml_per_s * dwell * 1000.0 / voxel_volume_mm3 + 1e-9).floor() as usize
}

/// Removes occupied voxels whose centers lie within `radius` of `tip`
/// (phantom frame), nearest first, up to what `rate` removes in `dwell`.
pub fn aspirate(
    phantom: &mut ClotPhantom,
    tip: &Point3<f64>,
    radius: f64,
    dwell: f64,
    rate_ml_per_s: f64,
) -> Result<Aspiration> {
    if !(radius >= MIN_ASPIRATION_RADIUS) {
        return Err(CtrError::InvalidInput(format!(
            "aspiration radius {radius} below the {MIN_ASPIRATION_RADIUS} mm lumen radius"
        )));
    }
    if !(dwell >= 0.0 && rate_ml_per_s >= 0.0) {
        return Err(CtrError::InvalidInput("dwell and rate must be non-negative".into()));
    }
    let cap = aspiration_cap(phantom.voxel_volume_mm3(), dwell, rate_ml_per_s);
    let mut hits: Vec<(f64, usize)> = Vec::new();
    let ranges = [
        phantom.axis_range(0, tip.x, radius),
        phantom.axis_range(1, tip.y, radius),
        phantom.axis_range(2, tip.z, radius),
    ];
    if let [Some((i0, i1)), Some((j0, j1)), Some((k0, k1))] = ranges {
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let idx = phantom.index(i, j, k);
                    if !phantom.is_occupied(idx) {
                        continue;
                    }
                    let d2 = (phantom.center_of(idx) - tip).norm_squared();
                    if d2 <= radius * radius {
                        hits.push((d2, idx));
                    }
                }
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(cap);
    let removed: Vec<usize> = hits.into_iter().map(|h| h.1).collect();
    for &idx in &removed {
        phantom.set(idx, false);
    }
    let removed_ml = removed.len() as f64 * phantom.voxel_volume_mm3() / 1000.0;
    let duration = if rate_ml_per_s > 0.0 { removed_ml / rate_ml_per_s } else { 0.0 };
    Ok(Aspiration {
        removed,
        removed_ml,
        duration,
    })
}

/// Radial/axial profile of the reachable set, swept about the robot axis.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// (radial distance, lowest tip height, highest tip height) per insertion sample.
    columns: Vec<(f64, f64, f64)>,
}

impl Workspace {
    pub fn new(planner: &Planner, samples: usize) -> Result<Self> {
        let samples = samples.max(2);
        let lim = planner.limits();
        // keep projected targets strictly inside the joint limits
        let slack = 1e-7;
        let mut columns = Vec::with_capacity(samples + 1);
        for i in 0..=samples {
            let s = lim.s_max * i as f64 / samples as f64;
            let (rho, z) = planner.planar_tip(s)?;
            let rho = if i == samples { rho * (1.0 - 1e-9) } else { rho };
            columns.push((rho, z + lim.d_min + slack, z + lim.d_max - slack));
        }
        Ok(Workspace { columns })
    }

    /// Nearest sampled reachable point to `p` (robot frame).
    pub fn project(&self, p: &Point3<f64>) -> Point3<f64> {
        let r = p.x.hypot(p.y);
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for &(rho, lo, hi) in &self.columns {
            let z = p.z.clamp(lo, hi);
            let d2 = (r - rho).powi(2) + (p.z - z).powi(2);
            if d2 < best.0 {
                best = (d2, rho, z);
            }
        }
        let (sin, cos) = if r > 1e-12 { (p.x / r, -p.y / r) } else { (0.0, 1.0) };
        Point3::new(best.1 * sin, -best.1 * cos, best.2)
    }
}

/// Where each initially occupied voxel would be aimed at, if it can be.
#[derive(Debug, Clone)]
pub struct TargetMap {
    aim: Vec<Option<Point3<f64>>>,
}

impl TargetMap {
    pub fn new(
        phantom: &ClotPhantom,
        image_to_robot: &Transform,
        workspace: &Workspace,
        policy: &EvacuationPolicy,
    ) -> Self {
        let limit = policy.aspiration_radius - policy.target_margin;
        let mut aim = vec![None; phantom.len()];
        for idx in phantom.occupied_indices() {
            let p = image_to_robot.transform_point(&phantom.center_of(idx));
            let q = workspace.project(&p);
            if (q - p).norm() <= limit {
                aim[idx] = Some(q);
            }
        }
        TargetMap { aim }
    }

    pub fn aim(&self, idx: usize) -> Option<Point3<f64>> {
        self.aim.get(idx).copied().flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Far end of the clot's long axis.
    FarEnd,
    /// Largest remaining connected piece.
    LargestComponent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedTarget {
    pub kind: TargetKind,
    /// Robot frame, mm.
    pub point: [f64; 3],
    pub component_voxels: usize,
}

fn centroid(points: impl Iterator<Item = Point3<f64>>) -> Option<Point3<f64>> {
    let (mut sum, mut n) = (Vector3::zeros(), 0usize);
    for p in points {
        sum += p.coords;
        n += 1;
    }
    (n > 0).then(|| Point3::from(sum / n as f64))
}

/// First target: the centroid of the clot's far cap along its long axis, moved
/// to the nearest aimable voxel. A clot without a distinct long axis uses the
/// direction from the robot origin through its centroid.
pub fn far_end_target(
    phantom: &ClotPhantom,
    image_to_robot: &Transform,
    map: &TargetMap,
    cap_depth: f64,
) -> Option<PlannedTarget> {
    let pts: Vec<(usize, Point3<f64>)> = phantom
        .occupied_indices()
        .map(|i| (i, image_to_robot.transform_point(&phantom.center_of(i))))
        .collect();
    let c = centroid(pts.iter().map(|p| p.1))?;
    let mut cov = Matrix3::zeros();
    for (_, p) in &pts {
        let v = p - c;
        cov += v * v.transpose();
    }
    let eig = SymmetricEigen::new(cov / pts.len() as f64);
    let mut order = [0, 1, 2];
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let mut axis: Vector3<f64> = if l2 > 0.0 && l1 / l2 >= ELONGATION_RATIO {
        eig.eigenvectors.column(order[0]).into_owned()
    } else if c.coords.norm() > 1e-12 {
        c.coords.normalize()
    } else {
        Vector3::z()
    };
    if axis.dot(&c.coords) < 0.0 {
        axis = -axis;
    }
    let t_max = pts.iter().map(|(_, p)| (p - c).dot(&axis)).fold(f64::NEG_INFINITY, f64::max);
    let cap: Vec<&(usize, Point3<f64>)> = pts
        .iter()
        .filter(|(_, p)| (p - c).dot(&axis) >= t_max - cap_depth)
        .collect();
    let cap_center = centroid(cap.iter().map(|p| p.1))?;
    let (_, aim) = pts
        .iter()
        .filter_map(|(i, p)| map.aim(*i).map(|a| ((p - cap_center).norm_squared(), a)))
        .min_by(|a, b| a.0.total_cmp(&b.0))?;
    Some(PlannedTarget {
        kind: TargetKind::FarEnd,
        point: aim.into(),
        component_voxels: pts.len(),
    })
}

/// Greedy targets, one per connected piece of remaining clot, largest first.
/// Each aims at the piece's aimable voxel closest to its centroid; pieces with
/// nothing aimable are skipped.
pub fn component_targets(
    phantom: &ClotPhantom,
    image_to_robot: &Transform,
    map: &TargetMap,
) -> Vec<PlannedTarget> {
    let mut out = Vec::new();
    for comp in phantom.components() {
        let c = match centroid(comp.iter().map(|&i| image_to_robot.transform_point(&phantom.center_of(i)))) {
            Some(c) => c,
            None => continue,
        };
        let best = comp
            .iter()
            .filter_map(|&i| {
                map.aim(i).map(|a| {
                    let p = image_to_robot.transform_point(&phantom.center_of(i));
                    ((p - c).norm_squared(), a)
                })
            })
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, aim)) = best {
            out.push(PlannedTarget {
                kind: TargetKind::LargestComponent,
                point: aim.into(),
                component_voxels: comp.len(),
            });
        }
    }
    out
}

/// Target list for the current clot: the far end first, then one per piece.
/// Empty when nothing is left or nothing can be reached.
pub fn plan_targets(
    phantom: &ClotPhantom,
    image_to_robot: &Transform,
    planner: &Planner,
    policy: &EvacuationPolicy,
) -> Result<Vec<PlannedTarget>> {
    policy.validate()?;
    let workspace = Workspace::new(planner, WORKSPACE_SAMPLES)?;
    let map = TargetMap::new(phantom, image_to_robot, &workspace, policy);
    let mut out: Vec<PlannedTarget> = far_end_target(phantom, image_to_robot, &map, policy.aspiration_radius)
        .into_iter()
        .collect();
    out.extend(component_targets(phantom, image_to_robot, &map));
    Ok(out)
}

const WORKSPACE_SAMPLES: usize = 400;

/// Pneumatic stepper stage: one rotary motor for θ, two linear ones for d and s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotorStage {
    pub rotation_params: ControllerParams,
    pub rotation_plant: MotorPlant,
    pub translation_params: ControllerParams,
    pub translation_plant: MotorPlant,
    /// Lead-screw advance per output revolution, mm.
    pub screw_lead: f64,
    pub dt: f64,
    pub t_max: f64,
}

impl Default for MotorStage {
    fn default() -> Self {
        MotorStage {
            rotation_params: ControllerParams::rotational(),
            rotation_plant: MotorPlant::rotational(),
            translation_params: ControllerParams::translational(),
            translation_plant: MotorPlant::translational(),
            // 10-32 threaded rod
            screw_lead: 25.4 / 32.0,
            dt: 1e-3,
            t_max: 300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct AxisMove {
    reached: f64,
    time: f64,
}

impl MotorStage {
    fn axis(&self, from: f64, to: f64, per_unit: f64, plant: &MotorPlant, params: &ControllerParams) -> Result<AxisMove> {
        let start = (from * per_unit).round() as i64;
        let goal = (to * per_unit).round() as i64;
        if goal == start {
            return Ok(AxisMove { reached: from, time: 0.0 });
        }
        let r = simulate_move(goal - start, plant, params, self.dt, self.t_max)?;
        Ok(AxisMove {
            reached: (start + r.final_position) as f64 / per_unit,
            time: r.first_settle.unwrap_or(r.elapsed),
        })
    }

    /// Joint state the motors reach for `command`, and the time taken
    /// (rotation first, then both translations together).
    pub fn execute(&self, current: &JointConfig, command: &JointConfig) -> Result<(JointConfig, f64)> {
        let rot_per_rad = self.rotation_plant.counts_per_rev / std::f64::consts::TAU;
        let lin_per_mm = self.translation_plant.counts_per_rev / self.screw_lead;
        let th = self.axis(current.theta, command.theta, rot_per_rad, &self.rotation_plant, &self.rotation_params)?;
        let d = self.axis(current.d, command.d, lin_per_mm, &self.translation_plant, &self.translation_params)?;
        let s = self.axis(current.s, command.s, lin_per_mm, &self.translation_plant, &self.translation_params)?;
        Ok((JointConfig::new(d.reached, s.reached, th.reached), th.time + d.time.max(s.time)))
    }
}

pub struct EvacuationSetup {
    pub planner: Planner,
    /// Friction wind-up acting on rotations; `None` is an ideal transmission.
    pub plant: Option<TorsionPlant>,
    pub motors: Option<MotorStage>,
    /// Actual image-to-robot transform, used to place the tip in the phantom.
    pub true_frame: Transform,
    /// Registration estimate, used for planning.
    pub registration: RegistrationResult,
    pub policy: EvacuationPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Residual fell below the stop volume.
    BelowThreshold,
    /// No remaining clot can be reached.
    Unreachable,
    /// Several consecutive targets removed nothing.
    Stalled,
    TargetLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub index: usize,
    pub kind: TargetKind,
    pub target: [f64; 3],
    pub command: JointConfig,
    pub reached: JointConfig,
    pub tip: [f64; 3],
    pub removed_voxels: usize,
    pub removed_ml: f64,
    pub residual_ml: f64,
    pub move_time: f64,
    pub aspiration_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvacuationReport {
    pub initial_ml: f64,
    pub final_ml: f64,
    pub removed_ml: f64,
    pub targets: usize,
    /// Simulated procedure time, s.
    pub elapsed: f64,
    pub termination: Termination,
    /// Residual below the stop volume (always false when the stop volume is 0).
    pub success: bool,
    pub registration_rms: f64,
    pub log: Vec<TargetRecord>,
}

impl EvacuationReport {
    pub fn stalled(&self) -> bool {
        matches!(self.termination, Termination::Stalled | Termination::Unreachable)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "index", "kind", "target_x", "target_y", "target_z", "d", "s", "theta_deg", "tip_x", "tip_y",
            "tip_z", "removed_ml", "residual_ml", "move_time", "aspiration_time",
        ])
        .map_err(csv_err)?;
        for r in &self.log {
            let kind = match r.kind {
                TargetKind::FarEnd => "far_end",
                TargetKind::LargestComponent => "largest_component",
            };
            w.write_record([
                r.index.to_string(),
                kind.to_string(),
                format!("{:.4}", r.target[0]),
                format!("{:.4}", r.target[1]),
                format!("{:.4}", r.target[2]),
                format!("{:.4}", r.reached.d),
                format!("{:.4}", r.reached.s),
                format!("{:.4}", r.reached.theta.to_degrees()),
                format!("{:.4}", r.tip[0]),
                format!("{:.4}", r.tip[1]),
                format!("{:.4}", r.tip[2]),
                format!("{:.4}", r.removed_ml),
                format!("{:.4}", r.residual_ml),
                format!("{:.3}", r.move_time),
                format!("{:.3}", r.aspiration_time),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CtrError::io("<report csv>", e))
    }
}

fn csv_err(e: csv::Error) -> CtrError {
    CtrError::parse("<report csv>", e)
}

/// Runs target selection, IK with compensation, execution and aspiration
/// until the residual drops below the stop volume or progress ends.
/// The phantom is consumed in place.
pub fn run_evacuation(phantom: &mut ClotPhantom, setup: &EvacuationSetup) -> Result<EvacuationReport> {
    let policy = &setup.policy;
    policy.validate()?;
    let estimate = &setup.registration.transform;
    let robot_to_image = setup.true_frame.inverse();
    let workspace = Workspace::new(&setup.planner, WORKSPACE_SAMPLES)?;
    let map = TargetMap::new(phantom, estimate, &workspace, policy);
    let initial_ml = phantom.volume_ml();
    let mut current = JointConfig::home();
    let mut log = Vec::new();
    let mut elapsed = 0.0;
    let mut idle = 0usize;
    let below = |v: f64| policy.stop_ml > 0.0 && v < policy.stop_ml;

    let termination = loop {
        let residual = phantom.volume_ml();
        if below(residual) {
            break Termination::BelowThreshold;
        }
        if log.len() >= policy.max_targets {
            break Termination::TargetLimit;
        }
        let planned = if log.is_empty() {
            far_end_target(phantom, estimate, &map, policy.aspiration_radius)
        } else {
            component_targets(phantom, estimate, &map).into_iter().next()
        };
        let Some(planned) = planned else {
            break Termination::Unreachable;
        };
        let target = Point3::from(planned.point);
        let plan = setup.planner.plan_move(&current, &target)?;
        let command = plan.command();
        let (moved, move_time) = match &setup.motors {
            Some(m) => m.execute(&current, &command)?,
            None => (command, 0.0),
        };
        let reached = match &setup.plant {
            Some(p) => p.execute(&current, &moved)?,
            None => moved,
        };
        let tip = setup.planner.tip(&reached)?;
        let a = aspirate(
            phantom,
            &robot_to_image.transform_point(&tip),
            policy.aspiration_radius,
            policy.dwell,
            policy.rate_ml_per_s(),
        )?;
        elapsed += move_time + a.duration;
        log::debug!(
            "target {} at {:?}: removed {:.3} mL, residual {:.3} mL",
            log.len(),
            planned.point,
            a.removed_ml,
            phantom.volume_ml()
        );
        log.push(TargetRecord {
            index: log.len(),
            kind: planned.kind,
            target: planned.point,
            command,
            reached,
            tip: tip.into(),
            removed_voxels: a.removed.len(),
            removed_ml: a.removed_ml,
            residual_ml: phantom.volume_ml(),
            move_time,
            aspiration_time: a.duration,
        });
        current = reached;
        idle = if a.removed.is_empty() { idle + 1 } else { 0 };
        if idle >= policy.stall_targets {
            break Termination::Stalled;
        }
    };
    let final_ml = phantom.volume_ml();
    Ok(EvacuationReport {
        initial_ml,
        final_ml,
        removed_ml: initial_ml - final_ml,
        targets: log.len(),
        elapsed,
        termination,
        success: below(final_ml),
        registration_rms: setup.registration.rms_fiducial_error,
        log,
    })
}

/// Registers noisy fiducial measurements: `image` points are mapped through
/// the true frame and perturbed by isotropic Gaussian noise of `noise_sd` mm.
pub fn simulate_registration<R: Rng + ?Sized>(
    image: &[Point3<f64>],
    true_frame: &Transform,
    noise_sd: f64,
    rng: &mut R,
) -> Result<RegistrationResult> {
    let noise = Normal::new(0.0, noise_sd.max(0.0))
        .map_err(|e| CtrError::InvalidInput(format!("fiducial noise: {e}")))?;
    let robot: Vec<Point3<f64>> = image
        .iter()
        .map(|p| {
            let q = true_frame.transform_point(p);
            Point3::new(q.x + noise.sample(rng), q.y + noise.sample(rng), q.z + noise.sample(rng))
        })
        .collect();
    register(image, &robot)
}

/// Default bench-top scenario: a 38.36 mL ellipsoidal clot on the robot axis,
/// long axis along the insertion direction, imaged in a frame rotated 90°
/// about z and offset from the robot base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomScenario {
    pub volume_ml: f64,
    /// Axis proportions of the ellipsoid (x, y, z in the robot frame).
    pub proportions: [f64; 3],
    /// Clot center in the robot frame, mm.
    pub center: [f64; 3],
    pub voxel_mm: f64,
    pub frame_rotation_deg: f64,
    pub frame_translation: [f64; 3],
    pub fiducial_noise_mm: f64,
}

impl Default for PhantomScenario {
    fn default() -> Self {
        PhantomScenario {
            volume_ml: 38.36,
            proportions: [1.0, 1.0, 2.2],
            center: [0.0, 0.0, 58.0],
            voxel_mm: 1.0,
            frame_rotation_deg: 90.0,
            frame_translation: [120.0, -100.0, 18.0],
            fiducial_noise_mm: 0.25,
        }
    }
}

impl PhantomScenario {
    pub fn true_frame(&self) -> Transform {
        let r = Rotation3::from_axis_angle(&Vector3::z_axis(), self.frame_rotation_deg.to_radians());
        Transform::from_parts(*r.matrix(), Vector3::from(self.frame_translation))
    }

    /// Phantom voxelized in the image frame. The frame rotation must be a
    /// multiple of 90° so the grid stays axis-aligned.
    pub fn phantom(&self) -> Result<ClotPhantom> {
        let quarter = self.frame_rotation_deg / 90.0;
        if (quarter - quarter.round()).abs() > 1e-9 {
            return Err(CtrError::InvalidInput("frame rotation must be a multiple of 90 degrees".into()));
        }
        let inv = self.true_frame().inverse();
        let center = inv.transform_point(&Point3::from(self.center));
        let r = inv.rotation();
        let mut props = [0.0; 3];
        for (a, p) in props.iter_mut().enumerate() {
            *p = (0..3).map(|b| r[(a, b)].abs() * self.proportions[b]).sum();
        }
        ClotPhantom::ellipsoid_with_volume(center.into(), props, [self.voxel_mm; 3], self.volume_ml)
    }

    /// Four non-coplanar fiducials around the clot, image frame.
    pub fn fiducials(&self) -> Vec<Point3<f64>> {
        let c = self.true_frame().inverse().transform_point(&Point3::from(self.center));
        [[70.0, 0.0, -30.0], [0.0, 70.0, -10.0], [-70.0, 0.0, 10.0], [0.0, -70.0, 30.0]]
            .iter()
            .map(|o| c + Vector3::from(*o))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::JointLimits;
    use crate::presets;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn planner() -> &'static Planner {
        static PLANNER: std::sync::OnceLock<Planner> = std::sync::OnceLock::new();
        PLANNER.get_or_init(|| {
            let shape = presets::nylon_tube_shape();
            let limits = JointLimits::for_shape(&shape);
            Planner::new(shape, crate::kinematics::DEFAULT_SEGMENTS, limits).unwrap()
        })
    }

    fn setup(policy: EvacuationPolicy) -> EvacuationSetup {
        EvacuationSetup {
            planner: planner().clone(),
            plant: None,
            motors: None,
            true_frame: Transform::identity(),
            registration: RegistrationResult {
                transform: Transform::identity(),
                rms_fiducial_error: 0.0,
            },
            policy,
        }
    }

    fn block(dims: [usize; 3], origin: [f64; 3]) -> ClotPhantom {
        let n = dims.iter().product();
        ClotPhantom::from_occupancy(dims, [1.0; 3], origin, vec![true; n]).unwrap()
    }

    #[test]
    fn aspiration_is_capped_by_rate_and_dwell() {
        let mut p = block([21, 21, 21], [-10.0, -10.0, -10.0]);
        // 0.1 mL/s for 5 s is 0.5 mL
        let a = aspirate(&mut p, &Point3::origin(), 10.0, 5.0, 0.1).unwrap();
        assert_eq!(a.removed.len(), 500);
        let mut coarse = ClotPhantom::from_occupancy([21, 21, 21], [2.0; 3], [-20.0; 3], vec![true; 9261]).unwrap();
        let a = aspirate(&mut coarse, &Point3::origin(), 10.0, 5.0, 0.1).unwrap();
        assert_eq!(a.removed.len(), 62);
        assert!(aspirate(&mut p, &Point3::origin(), 1.5, 5.0, 0.1).is_err());
    }

    #[test]
    fn aspiration_removes_nearest_first() {
        let mut p = block([21, 21, 21], [-10.0, -10.0, -10.0]);
        let a = aspirate(&mut p, &Point3::origin(), 8.0, 1.0, 0.1).unwrap();
        let dist: Vec<f64> = a.removed.iter().map(|&i| p.center_of(i).coords.norm()).collect();
        assert!(dist.windows(2).all(|w| w[0] <= w[1]));
        let max_removed = dist.last().copied().unwrap();
        let nearest_left = p
            .occupied_indices()
            .map(|i| p.center_of(i).coords.norm())
            .fold(f64::INFINITY, f64::min);
        assert!(max_removed <= nearest_left);
    }

    #[test]
    fn empty_phantom_plans_nothing() {
        let p = ClotPhantom::empty([10, 10, 10], [1.0; 3], [0.0, 0.0, 40.0]).unwrap();
        let t = plan_targets(&p, &Transform::identity(), planner(), &EvacuationPolicy::default()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn sphere_on_axis_targets_far_pole_first() {
        let p = ClotPhantom::ellipsoid([0.0, 0.0, 50.0], [8.0; 3], [1.0; 3]).unwrap();
        let t = plan_targets(&p, &Transform::identity(), planner(), &EvacuationPolicy::default()).unwrap();
        assert_eq!(t[0].kind, TargetKind::FarEnd);
        let [x, y, z] = t[0].point;
        assert!(x.hypot(y) < 1.5, "{:?}", t[0].point);
        assert!(z >= 53.0, "{:?}", t[0].point);
    }

    #[test]
    fn small_clot_exits_immediately() {
        let mut p = ClotPhantom::ellipsoid_with_volume([0.0, 0.0, 50.0], [1.0; 3], [1.0; 3], 10.0).unwrap();
        let before = p.clone();
        let r = run_evacuation(&mut p, &setup(EvacuationPolicy::default())).unwrap();
        assert_eq!(r.targets, 0);
        assert_eq!(r.termination, Termination::BelowThreshold);
        assert_eq!(p, before);
    }

    #[test]
    fn clot_outside_reach_is_reported_unchanged() {
        let mut p = ClotPhantom::ellipsoid([60.0, 0.0, 50.0], [5.0; 3], [1.0; 3]).unwrap();
        let v = p.volume_ml();
        let policy = EvacuationPolicy {
            stop_ml: 0.0,
            ..Default::default()
        };
        let r = run_evacuation(&mut p, &setup(policy)).unwrap();
        assert!(r.stalled());
        assert_eq!(r.final_ml, v);
    }

    #[test]
    fn disjoint_blobs_both_get_targets() {
        let mut occ = vec![false; 31 * 31 * 71];
        let grid = ClotPhantom::empty([31, 31, 71], [1.0; 3], [-15.0, -15.0, 10.0]).unwrap();
        for centre in [[0.0, -8.0, 30.0], [0.0, 8.0, 70.0]] {
            for (idx, cell) in occ.iter_mut().enumerate() {
                if (grid.center_of(idx) - Point3::from(centre)).norm() <= 4.0 {
                    *cell = true;
                }
            }
        }
        let mut p = ClotPhantom::from_occupancy(grid.dims(), grid.spacing(), grid.origin(), occ).unwrap();
        assert_eq!(p.components().len(), 2);
        let policy = EvacuationPolicy {
            stop_ml: 0.0,
            ..Default::default()
        };
        let r = run_evacuation(&mut p, &setup(policy)).unwrap();
        assert!(r.final_ml < 1e-9, "{}", r.final_ml);
        let zs: Vec<f64> = r.log.iter().map(|l| l.target[2]).collect();
        assert!(zs.iter().any(|z| *z < 45.0) && zs.iter().any(|z| *z > 55.0));
    }

    #[test]
    fn aspirated_voxels_lie_near_visited_tips() {
        let scenario = PhantomScenario::default();
        let mut p = scenario.phantom().unwrap();
        let before = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reg = simulate_registration(&scenario.fiducials(), &scenario.true_frame(), 0.25, &mut rng).unwrap();
        let s = EvacuationSetup {
            true_frame: scenario.true_frame(),
            registration: reg,
            ..setup(EvacuationPolicy::default())
        };
        let r = run_evacuation(&mut p, &s).unwrap();
        let inv = scenario.true_frame().inverse();
        let tips: Vec<Point3<f64>> = r.log.iter().map(|l| inv.transform_point(&Point3::from(l.tip))).collect();
        for idx in before.occupied_indices().filter(|&i| !p.is_occupied(i)) {
            let c = p.center_of(idx);
            assert!(tips.iter().any(|t| (t - c).norm() <= 6.0 + 1e-9));
        }
        assert!(p.occupied_indices().all(|i| before.is_occupied(i)));
        let vols: Vec<f64> = r.log.iter().map(|l| l.residual_ml).collect();
        assert!(vols.windows(2).all(|w| w[1] <= w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn aspiration_never_increases_volume(x in -8.0..8.0f64, y in -8.0..8.0f64, z in -8.0..8.0f64,
                                             radius in 2.0..8.0f64, dwell in 0.0..20.0f64) {
            let mut p = block([17, 17, 17], [-8.0; 3]);
            let before = p.volume_ml();
            let tip = Point3::new(x, y, z);
            let a = aspirate(&mut p, &tip, radius, dwell, 0.1).unwrap();
            prop_assert!(p.volume_ml() <= before);
            prop_assert!((before - p.volume_ml() - a.removed_ml).abs() < 1e-9);
            for i in a.removed {
                prop_assert!((p.center_of(i) - tip).norm() <= radius + 1e-12);
            }
        }
    }
}
