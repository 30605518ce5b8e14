//! Elastic feasibility of precurved tubes: strain-limited precurvature,
//! residual curvature allowed by clearance, and bending stiffness reports.

use serde::{Deserialize, Serialize};

use crate::error::{CtrError, Result};
use crate::numeric;
use crate::presets;
use crate::torsion::{MaterialModel, TorsionModel, TubeSpec};
use crate::tube_shape::PlanarShape;

const KAPPA_XTOL: f64 = 1e-15;
const REPORT_SEGMENTS: usize = 1000;

/// Default relative RoC change tolerated after insertion cycling.
pub const DEFAULT_RETENTION_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubePair {
    pub inner: TubeSpec,
    pub inner_material: MaterialModel,
    pub outer: TubeSpec,
    pub outer_material: MaterialModel,
}

impl TubePair {
    pub fn new(
        inner: TubeSpec,
        inner_material: MaterialModel,
        outer: TubeSpec,
        outer_material: MaterialModel,
    ) -> Result<Self> {
        let pair = TubePair {
            inner,
            inner_material,
            outer,
            outer_material,
        };
        pair.validate()?;
        Ok(pair)
    }

    pub fn nylon_in_fiberglass() -> Self {
        TubePair {
            inner: presets::inner_tube(),
            inner_material: presets::nylon(),
            outer: presets::outer_tube(),
            outer_material: presets::fiberglass(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clearance() < 0.0 {
            return Err(CtrError::InvalidInput(format!(
                "inner tube OD {} exceeds outer tube ID {}",
                2.0 * self.inner.r_od,
                2.0 * self.outer.r_id
            )));
        }
        Ok(())
    }

    /// Diametral clearance `D_ID,o - 2 r_OD,i`, mm.
    pub fn clearance(&self) -> f64 {
        2.0 * self.outer.r_id - 2.0 * self.inner.r_od
    }
}

/// Largest heat-set curvature that stays elastic when straightened down to `kappa_limit`.
pub fn max_precurvature(material: &MaterialModel, r_od: f64, kappa_limit: f64) -> Result<f64> {
    if r_od <= 0.0 {
        return Err(CtrError::InvalidInput(format!("outer radius must be positive, got {r_od}")));
    }
    Ok(material.strain_limit / r_od + kappa_limit)
}

/// Residual of the tip-contact condition for a constant-curvature tube of
/// arc `s` lying diagonally across an outer tube of clearance `d_y - r_od`.
fn contact_residual(kappa: f64, s: f64, r_od: f64, d_y: f64) -> f64 {
    let a = kappa * s;
    let sag = if kappa == 0.0 {
        0.0
    } else {
        let h = (0.5 * a).sin();
        -2.0 * h * h / kappa
    };
    sag - r_od * a.cos() + d_y
}

/// Curvature the inner tube can retain while fully retracted into the outer tube.
pub fn kappa_limit(pair: &TubePair, s_max: f64) -> Result<f64> {
    if s_max <= 0.0 {
        return Err(CtrError::InvalidInput(format!("s_max must be positive, got {s_max}")));
    }
    pair.validate()?;
    if pair.clearance() == 0.0 {
        return Ok(0.0);
    }
    let r = pair.inner.r_od;
    let d_y = 2.0 * pair.outer.r_id - r;
    let hi = std::f64::consts::FRAC_PI_2 / s_max;
    numeric::brent(|k| contact_residual(k, s_max, r, d_y), 0.0, hi, KAPPA_XTOL)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BendGeometry {
    Arc { roc: f64, loc: f64 },
    Shape { shape: PlanarShape },
}

impl BendGeometry {
    pub fn to_shape(&self) -> Result<PlanarShape> {
        match self {
            BendGeometry::Arc { roc, loc } => {
                if roc.is_infinite() {
                    PlanarShape::straight(*loc)
                } else {
                    PlanarShape::circular_arc(*roc, *loc)
                }
            }
            BendGeometry::Shape { shape } => Ok(shape.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendingReport {
    /// N/rad.
    pub stiffness: f64,
    /// Tip force that straightens the curved region, N.
    pub f_bend: f64,
    /// Total bend angle of the curved region, rad.
    pub bend_angle: f64,
}

/// Straightening force and stiffness (force per radian of bend).
pub fn bending_report(
    r_od: f64,
    r_id: f64,
    material: &MaterialModel,
    geometry: &BendGeometry,
) -> Result<BendingReport> {
    let shape = geometry.to_shape()?;
    let tube = TubeSpec {
        r_od,
        r_id,
        length_total: shape.arc_total(),
        deflectable_arc: shape.arc_total(),
    };
    tube.validate()?;
    let model = TorsionModel::new(shape, tube, *material, REPORT_SEGMENTS);
    let f_bend = model.straightening_force(0.0)?.force;
    let bend_angle = model.shape.bend_angle();
    let stiffness = if bend_angle == 0.0 { 0.0 } else { f_bend / bend_angle };
    Ok(BendingReport {
        stiffness,
        f_bend,
        bend_angle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub material_name: String,
    pub material: MaterialModel,
    pub od: f64,
    pub id: f64,
    pub geometry: BendGeometry,
}

/// The nitinol-versus-nylon comparison: a small nitinol tube, nitinol and
/// nylon at the aspiration diameter with the same bend, and the characterized
/// nylon tube.
pub fn comparison_rows() -> Vec<TableRow> {
    let arc = BendGeometry::Arc {
        roc: 20.0,
        loc: 27.0,
    };
    vec![
        TableRow {
            label: "nitinol, small diameter".into(),
            material_name: "nitinol".into(),
            material: presets::nitinol(),
            od: 2.2,
            id: 1.5,
            geometry: arc.clone(),
        },
        TableRow {
            label: "nitinol, aspiration diameter".into(),
            material_name: "nitinol".into(),
            material: presets::nitinol(),
            od: 6.0,
            id: 4.0,
            geometry: arc.clone(),
        },
        TableRow {
            label: "nylon, aspiration diameter".into(),
            material_name: "nylon".into(),
            material: presets::nylon(),
            od: 6.0,
            id: 4.0,
            geometry: arc,
        },
        TableRow {
            label: "nylon, characterized shape".into(),
            material_name: "nylon".into(),
            material: presets::nylon(),
            od: 6.0,
            id: 4.0,
            geometry: BendGeometry::Shape {
                shape: presets::nylon_tube_shape(),
            },
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLine {
    pub label: String,
    pub material: String,
    pub elastic_modulus_gpa: f64,
    pub od: f64,
    pub id: f64,
    /// `None` for variable curvature.
    pub roc: Option<f64>,
    pub loc: f64,
    pub stiffness: f64,
    pub f_bend: f64,
    pub f_over_k: f64,
}

pub fn comparison_table(rows: &[TableRow]) -> Result<Vec<TableLine>> {
    rows.iter()
        .map(|row| {
            let report = bending_report(row.od / 2.0, row.id / 2.0, &row.material, &row.geometry)?;
            let (roc, loc) = match &row.geometry {
                BendGeometry::Arc { roc, loc } => (Some(*roc), *loc),
                BendGeometry::Shape { shape } => (None, shape.arc_total()),
            };
            Ok(TableLine {
                label: row.label.clone(),
                material: row.material_name.clone(),
                elastic_modulus_gpa: row.material.elastic_modulus_gpa,
                od: row.od,
                id: row.id,
                roc,
                loc,
                stiffness: report.stiffness,
                f_bend: report.f_bend,
                f_over_k: report.bend_angle,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetentionCheck {
    pub relative_change: f64,
    pub pass: bool,
}

/// Whether the precurve survived insertion cycling within `tolerance` (fraction).
pub fn cycling_retention_check(initial_roc: f64, measured_roc_after: f64, tolerance: f64) -> Result<RetentionCheck> {
    if !(initial_roc > 0.0 && measured_roc_after > 0.0) {
        return Err(CtrError::InvalidInput("radii of curvature must be positive".into()));
    }
    let relative_change = (measured_roc_after - initial_roc).abs() / initial_roc;
    Ok(RetentionCheck {
        relative_change,
        pass: relative_change <= tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocCheck {
    pub roc: f64,
    pub min_roc: f64,
    /// Peak strain when straightened to `kappa_limit`.
    pub strain: f64,
    pub pass: bool,
}

/// Checks a proposed heat-set radius against the strain limit.
pub fn check_roc(material: &MaterialModel, r_od: f64, roc: f64, kappa_limit: f64) -> Result<RocCheck> {
    if roc <= 0.0 {
        return Err(CtrError::InvalidInput(format!("radius of curvature must be positive, got {roc}")));
    }
    let kappa_max = max_precurvature(material, r_od, kappa_limit)?;
    let strain = crate::torsion::fiber_strain(r_od, 1.0 / roc - kappa_limit, 0.0);
    Ok(RocCheck {
        roc,
        min_roc: 1.0 / kappa_max,
        strain,
        pass: 1.0 / roc <= kappa_max * (1.0 + 1e-12),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torsion::fiber_strain;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pair(outer_id: f64, inner_od: f64) -> TubePair {
        let mut p = TubePair::nylon_in_fiberglass();
        p.outer.r_id = outer_id / 2.0;
        p.inner.r_od = inner_od / 2.0;
        p.inner.r_id = p.inner.r_od * 0.6;
        p
    }

    #[test]
    fn precurvature_examples() {
        let nylon = presets::nylon();
        let k = max_precurvature(&nylon, 3.0, 0.0).unwrap();
        assert_relative_eq!(1.0 / k, 30.0, epsilon = 1e-12);
        let stiff = MaterialModel {
            strain_limit: 0.0,
            ..nylon
        };
        assert_eq!(max_precurvature(&stiff, 3.0, 0.01).unwrap(), 0.01);
        let k = max_precurvature(&nylon, 1.1, 0.0).unwrap();
        assert_relative_eq!(k, 0.0909, epsilon = 1e-4);
    }

    #[test]
    fn zero_clearance_gives_zero_limit() {
        assert_eq!(kappa_limit(&pair(6.0, 6.0), 29.0).unwrap(), 0.0);
        let tiny = kappa_limit(&pair(6.0 + 1e-9, 6.0), 29.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-9);
    }

    #[test]
    fn loose_pair_matches_a_dense_scan() {
        let p = pair(8.0, 6.0);
        let k = kappa_limit(&p, 29.0).unwrap();
        // oracle: first sign change of the contact residual on a fine grid, then bisection
        let g = |k: f64| {
            let a = k * 29.0;
            (a.cos() - 1.0) / k - 3.0 * a.cos() + (8.0 - 3.0)
        };
        let n = 200_000;
        let hi = std::f64::consts::FRAC_PI_2 / 29.0;
        let mut lo = hi / n as f64;
        let mut step = lo;
        while g(lo + step) > 0.0 {
            lo += step;
        }
        let mut up = lo + step;
        for _ in 0..200 {
            step = 0.5 * (up - lo);
            if g(lo + step) > 0.0 {
                lo += step;
            } else {
                up = lo + step;
            }
        }
        assert!((k - lo).abs() < 1e-8, "{k} vs {lo}");
    }

    #[test]
    fn default_pair_limit_is_nearly_zero() {
        let k = kappa_limit(&TubePair::nylon_in_fiberglass(), 29.0).unwrap();
        assert!(k > 0.0 && k < 1e-3);
    }

    #[test]
    fn interference_is_rejected() {
        assert!(kappa_limit(&pair(5.0, 6.0), 29.0).is_err());
    }

    #[test]
    fn report_ratio_equals_bend_angle() {
        for line in comparison_table(&comparison_rows()).unwrap() {
            let expected = match line.roc {
                Some(roc) => line.loc / roc,
                None => presets::nylon_tube_shape().bend_angle(),
            };
            assert_relative_eq!(line.f_bend / line.stiffness, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn nitinol_is_much_stiffer_at_equal_geometry() {
        let table = comparison_table(&comparison_rows()).unwrap();
        assert!(table[1].stiffness > 10.0 * table[2].stiffness);
        assert!(table[1].stiffness > table[0].stiffness);
    }

    #[test]
    fn straight_tube_needs_no_force() {
        let r = bending_report(
            3.0,
            2.0,
            &presets::nylon(),
            &BendGeometry::Arc {
                roc: f64::INFINITY,
                loc: 27.0,
            },
        )
        .unwrap();
        assert_eq!(r.f_bend, 0.0);
    }

    #[test]
    fn nylon_report_matches_beam_theory() {
        let m = presets::nylon();
        let r = bending_report(3.0, 2.0, &m, &BendGeometry::Arc { roc: 20.0, loc: 27.0 }).unwrap();
        let i = std::f64::consts::PI * (6f64.powi(4) - 4f64.powi(4)) / 64.0;
        let beam = 4000.0 * i * (1.0 / 20.0) / 27.0;
        assert_relative_eq!(r.f_bend, beam, max_relative = 1e-9);
    }

    #[test]
    fn retention_examples() {
        let c = cycling_retention_check(32.4, 33.4, DEFAULT_RETENTION_TOLERANCE).unwrap();
        assert!(c.pass);
        assert_relative_eq!(c.relative_change, 1.0 / 32.4, epsilon = 1e-12);
        assert!(cycling_retention_check(30.0, 30.0, 0.05).unwrap().pass);
        assert!(!cycling_retention_check(30.0, 40.0, 0.05).unwrap().pass);
        assert!(cycling_retention_check(0.0, 30.0, 0.05).is_err());
    }

    #[test]
    fn roc_check() {
        let m = presets::nylon();
        assert!(check_roc(&m, 3.0, 33.4, 0.0).unwrap().pass);
        assert!(check_roc(&m, 3.0, 30.0, 0.0).unwrap().pass);
        assert!(!check_roc(&m, 3.0, 20.0, 0.0).unwrap().pass);
    }

    proptest! {
        #[test]
        fn precurvature_closes_on_the_strain_limit(eps in 0.001f64..0.15, r in 0.2f64..5.0, kl in 0.0f64..0.05) {
            let m = MaterialModel { strain_limit: eps, ..presets::nylon() };
            let k0 = max_precurvature(&m, r, kl).unwrap();
            prop_assert!((fiber_strain(r, k0 - kl, 0.0) - eps).abs() < 1e-12);
        }

        #[test]
        fn limit_grows_with_clearance(c1 in 0.0f64..3.0, c2 in 0.0f64..3.0) {
            let (a, b) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
            let ka = kappa_limit(&pair(6.0 + a, 6.0), 29.0).unwrap();
            let kb = kappa_limit(&pair(6.0 + b, 6.0), 29.0).unwrap();
            prop_assert!(ka <= kb + 1e-14);
        }
    }
}
