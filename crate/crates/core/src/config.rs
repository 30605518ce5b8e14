//! Robot configuration file: tubes, precurve, actuators, travel and the
//! evacuation scenario. Every section is optional and falls back to the
//! bench-top hardware. Angles are degrees in the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{ConfigIssue, CtrError, Result};
use crate::evacuation::{EvacuationPolicy, MotorStage, PhantomScenario};
use crate::inverse_kinematics::{Planner, TorsionPlant};
use crate::kinematics::{JointLimits, DEFAULT_SEGMENTS, DEFAULT_TRAVEL};
use crate::motor_control::{ControllerParams, MotorPlant};
use crate::presets;
use crate::torsion::{MaterialModel, TorsionModel, TubeSpec};
use crate::tube_design::{self, TubePair};
use crate::tube_shape::{fit_centerline, CenterlineSamples, PlanarShape, DEFAULT_FIT_DEGREE};

/// Where the precurve comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ShapeSource {
    Inline {
        shape: PlanarShape,
    },
    /// Centerline samples (`x,y` CSV), fitted on load. Relative paths resolve
    /// against the config file's directory.
    Centerline {
        path: PathBuf,
        #[serde(default = "default_degree")]
        degree: usize,
    },
}

fn default_degree() -> usize {
    DEFAULT_FIT_DEGREE
}

impl Default for ShapeSource {
    fn default() -> Self {
        ShapeSource::Inline {
            shape: presets::nylon_tube_shape(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Travel {
    pub d_min: f64,
    pub d_max: f64,
    /// Inner-tube insertion limit; defaults to the shape's arc length.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
}

impl Default for Travel {
    fn default() -> Self {
        Travel {
            d_min: 0.0,
            d_max: DEFAULT_TRAVEL,
            s_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub controller: ControllerParams,
    pub motor: MotorPlant,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvacuationConfig {
    pub policy: EvacuationPolicy,
    pub scenario: PhantomScenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    pub inner_tube: TubeSpec,
    pub inner_material: MaterialModel,
    pub outer_tube: TubeSpec,
    pub outer_material: MaterialModel,
    pub shape: ShapeSource,
    pub segments: usize,
    pub travel: Travel,
    pub rotation: AxisConfig,
    pub translation: AxisConfig,
    /// Lead-screw advance per output revolution of a translation motor, mm.
    pub screw_lead: f64,
    pub evacuation: EvacuationConfig,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl Default for RobotConfig {
    fn default() -> Self {
        let stage = MotorStage::default();
        RobotConfig {
            inner_tube: presets::inner_tube(),
            inner_material: presets::nylon(),
            outer_tube: presets::outer_tube(),
            outer_material: presets::fiberglass(),
            shape: ShapeSource::default(),
            segments: DEFAULT_SEGMENTS,
            travel: Travel::default(),
            rotation: AxisConfig {
                controller: stage.rotation_params,
                motor: stage.rotation_plant,
            },
            translation: AxisConfig {
                controller: stage.translation_params,
                motor: stage.translation_plant,
            },
            screw_lead: stage.screw_lead,
            evacuation: EvacuationConfig::default(),
            base_dir: None,
        }
    }
}

/// Result of validating a configuration document.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Validation {
    pub issues: Vec<ConfigIssue>,
    pub warnings: Vec<ConfigIssue>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn issue(&mut self, code: &'static str, field: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            code,
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn check(&mut self, code: &'static str, field: &str, r: Result<()>) {
        if let Err(e) = r {
            self.issue(code, field, e.to_string());
        }
    }
}

const SECTIONS: [&str; 11] = [
    "inner_tube",
    "inner_material",
    "outer_tube",
    "outer_material",
    "shape",
    "segments",
    "travel",
    "rotation",
    "translation",
    "screw_lead",
    "evacuation",
];

fn section<T: DeserializeOwned + Default>(doc: &serde_json::Map<String, Value>, key: &str, v: &mut Validation) -> T {
    match doc.get(key) {
        None => T::default(),
        Some(value) => match serde_json::from_value(value.clone()) {
            Ok(t) => t,
            Err(e) => {
                v.issue("E_SCHEMA", key, e.to_string());
                T::default()
            }
        },
    }
}

impl RobotConfig {
    /// Parses and cross-validates a config document. Schema problems in
    /// different sections are all reported, followed by invariant violations.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> (Option<RobotConfig>, Validation) {
        let mut v = Validation::default();
        let doc = match serde_json::from_str::<Value>(text) {
            Ok(Value::Object(map)) => map,
            Ok(_) => {
                v.issue("E_SCHEMA", "", "config must be a JSON object");
                return (None, v);
            }
            Err(e) => {
                v.issue("E_SCHEMA", "", e.to_string());
                return (None, v);
            }
        };
        for key in doc.keys() {
            if !SECTIONS.contains(&key.as_str()) {
                v.issue("E_UNKNOWN_FIELD", key, format!("unknown section `{key}`"));
            }
        }
        let cfg = RobotConfig {
            inner_tube: section_or(&doc, "inner_tube", &mut v, presets::inner_tube()),
            inner_material: section_or(&doc, "inner_material", &mut v, presets::nylon()),
            outer_tube: section_or(&doc, "outer_tube", &mut v, presets::outer_tube()),
            outer_material: section_or(&doc, "outer_material", &mut v, presets::fiberglass()),
            shape: section(&doc, "shape", &mut v),
            segments: section_or(&doc, "segments", &mut v, DEFAULT_SEGMENTS),
            travel: section(&doc, "travel", &mut v),
            rotation: section_or(&doc, "rotation", &mut v, RobotConfig::default().rotation),
            translation: section_or(&doc, "translation", &mut v, RobotConfig::default().translation),
            screw_lead: section_or(&doc, "screw_lead", &mut v, MotorStage::default().screw_lead),
            evacuation: section(&doc, "evacuation", &mut v),
            base_dir: base_dir.map(Path::to_path_buf),
        };
        if !v.is_valid() {
            return (None, v);
        }
        cfg.cross_validate(&mut v);
        (Some(cfg), v)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RobotConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CtrError::io(path, e))?;
        let (cfg, v) = Self::from_json_str(&text, path.parent());
        for w in &v.warnings {
            log::warn!("{}: {} ({})", w.field, w.message, w.code);
        }
        match cfg {
            Some(cfg) if v.is_valid() => Ok(cfg),
            _ => Err(CtrError::Config(v.issues)),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    fn cross_validate(&self, v: &mut Validation) {
        v.check("E_TUBE", "inner_tube", self.inner_tube.validate());
        v.check("E_TUBE", "outer_tube", self.outer_tube.validate());
        v.check("E_MATERIAL", "inner_material", self.inner_material.validate());
        v.check("E_MATERIAL", "outer_material", self.outer_material.validate());
        if self.pair().clearance() < 0.0 {
            v.issue(
                "E_CLEARANCE",
                "outer_tube.r_id",
                format!("diametral clearance {:.4} mm is negative", self.pair().clearance()),
            );
        }
        if self.segments == 0 {
            v.issue("E_SEGMENTS", "segments", "segment count must be at least 1");
        }
        let t = &self.travel;
        if !(t.d_min >= 0.0 && t.d_max > t.d_min && t.d_max.is_finite()) {
            v.issue("E_TRAVEL", "travel", format!("need 0 <= d_min < d_max, got [{}, {}]", t.d_min, t.d_max));
        }
        v.check("E_CONTROLLER", "rotation.controller", self.rotation.controller.validate());
        v.check("E_CONTROLLER", "translation.controller", self.translation.controller.validate());
        v.check("E_MOTOR", "rotation.motor", self.rotation.motor.validate());
        v.check("E_MOTOR", "translation.motor", self.translation.motor.validate());
        if !(self.screw_lead > 0.0 && self.screw_lead.is_finite()) {
            v.issue("E_MOTOR", "screw_lead", "screw lead must be positive");
        }
        v.check("E_POLICY", "evacuation.policy", self.evacuation.policy.validate());
        v.check("E_SCENARIO", "evacuation.scenario", self.evacuation.scenario.phantom().map(|_| ()));

        let shape = match self.shape() {
            Ok(s) => s,
            Err(e) => {
                v.issue("E_SHAPE", "shape", e.to_string());
                return;
            }
        };
        let arc = shape.arc_total();
        if let Some(s_max) = t.s_max {
            if !(s_max > 0.0 && s_max <= arc * (1.0 + 1e-9)) {
                v.issue("E_SMAX", "travel.s_max", format!("s_max {s_max} must lie in (0, {arc:.6}]"));
            }
        }
        if (self.inner_tube.deflectable_arc - arc).abs() > 1e-3 * arc.max(1.0) {
            v.issue(
                "E_SMAX",
                "inner_tube.deflectable_arc",
                format!(
                    "deflectable arc {} does not match the shape's arc length {arc:.6}",
                    self.inner_tube.deflectable_arc
                ),
            );
        }
        if !v.is_valid() {
            return;
        }
        // heat-set strain: the precurve must survive straightening to kappa_limit
        let s_max = t.s_max.unwrap_or(arc);
        let check = tube_design::kappa_limit(&self.pair(), s_max).and_then(|kl| {
            let k_allowed = tube_design::max_precurvature(&self.inner_material, self.inner_tube.r_od, kl)?;
            Ok((kl, k_allowed, peak_curvature(&shape)?))
        });
        match check {
            Ok((_, allowed, peak)) if peak > allowed * (1.0 + 1e-12) => v.warnings.push(ConfigIssue {
                code: "W_STRAIN",
                field: "shape".into(),
                message: format!(
                    "peak precurvature {peak:.5} 1/mm (RoC {:.2} mm) exceeds the strain-limited {allowed:.5} 1/mm (RoC {:.2} mm)",
                    1.0 / peak,
                    1.0 / allowed
                ),
            }),
            Ok(_) => {}
            Err(e) => v.issue("E_STRAIN", "shape", e.to_string()),
        }
    }

    pub fn pair(&self) -> TubePair {
        TubePair {
            inner: self.inner_tube,
            inner_material: self.inner_material,
            outer: self.outer_tube,
            outer_material: self.outer_material,
        }
    }

    pub fn shape(&self) -> Result<PlanarShape> {
        match &self.shape {
            ShapeSource::Inline { shape } => Ok(shape.clone()),
            ShapeSource::Centerline { path, degree } => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                fit_centerline(&CenterlineSamples::from_csv_path(&full)?, *degree)
            }
        }
    }

    pub fn limits(&self, shape: &PlanarShape) -> JointLimits {
        JointLimits {
            d_min: self.travel.d_min,
            d_max: self.travel.d_max,
            s_max: self.travel.s_max.unwrap_or(shape.arc_total()).min(shape.arc_total()),
        }
    }

    pub fn torsion_model(&self, shape: &PlanarShape) -> TorsionModel {
        TorsionModel::new(shape.clone(), self.inner_tube, self.inner_material, self.segments)
    }

    /// Planner with torsion compensation enabled.
    pub fn planner(&self) -> Result<Planner> {
        let shape = self.shape()?;
        let torsion = self.torsion_model(&shape);
        Ok(Planner::new(shape.clone(), self.segments, self.limits(&shape))?.with_torsion(torsion))
    }

    pub fn torsion_plant(&self) -> Result<TorsionPlant> {
        Ok(TorsionPlant::new(self.torsion_model(&self.shape()?)))
    }

    pub fn motor_stage(&self) -> MotorStage {
        MotorStage {
            rotation_params: self.rotation.controller,
            rotation_plant: self.rotation.motor,
            translation_params: self.translation.controller,
            translation_plant: self.translation.motor,
            screw_lead: self.screw_lead,
            ..MotorStage::default()
        }
    }
}

fn section_or<T: DeserializeOwned>(
    doc: &serde_json::Map<String, Value>,
    key: &str,
    v: &mut Validation,
    fallback: T,
) -> T {
    match doc.get(key) {
        None => fallback,
        Some(value) => match serde_json::from_value(value.clone()) {
            Ok(t) => t,
            Err(e) => {
                v.issue("E_SCHEMA", key, e.to_string());
                fallback
            }
        },
    }
}

/// Largest |curvature| over the precurve, sampled densely in x.
fn peak_curvature(shape: &PlanarShape) -> Result<f64> {
    const SAMPLES: usize = 400;
    let mut peak: f64 = 0.0;
    for i in 0..=SAMPLES {
        let x = shape.x_max_total() * i as f64 / SAMPLES as f64;
        peak = peak.max(shape.curvature(x)?.abs());
    }
    Ok(peak)
}
