//! Default hardware: the nylon aspiration tube, the fiberglass delivery tube
//! and the characterized precurve.

use crate::torsion::{MaterialModel, TubeSpec};
use crate::tube_shape::PlanarShape;

/// Quartic centerline of the heat-set nylon tube, deflectable arc ≈ 29 mm.
pub const NYLON_SHAPE_COEFFICIENTS: [f64; 5] = [
    3.21897873e-03,
    -4.90509005e-03,
    -2.10605524e-02,
    2.23552494e-05,
    -3.24191217e-06,
];
pub const NYLON_SHAPE_X_MAX: f64 = 24.54240996736879;

/// Inner tube length from the rotation spline to the tip, mm.
pub const INNER_TUBE_LENGTH: f64 = 250.0;

pub fn nylon_tube_shape() -> PlanarShape {
    PlanarShape::polynomial(NYLON_SHAPE_COEFFICIENTS.to_vec(), NYLON_SHAPE_X_MAX)
        .expect("built-in shape is valid")
}

pub fn nylon() -> MaterialModel {
    MaterialModel {
        elastic_modulus_gpa: 4.0,
        shear_modulus_gpa: 2.7,
        strain_limit: 0.10,
        friction_mu: 0.17,
    }
}

pub fn fiberglass() -> MaterialModel {
    MaterialModel {
        elastic_modulus_gpa: 74.0,
        shear_modulus_gpa: 30.0,
        strain_limit: 0.02,
        friction_mu: 0.17,
    }
}

/// Superelastic nitinol; the shear modulus is a typical austenite value.
pub fn nitinol() -> MaterialModel {
    MaterialModel {
        elastic_modulus_gpa: 74.0,
        shear_modulus_gpa: 28.0,
        strain_limit: 0.08,
        friction_mu: 0.17,
    }
}

/// Nylon tube, OD 6 mm / ID 4 mm.
pub fn inner_tube() -> TubeSpec {
    TubeSpec {
        r_od: 3.0,
        r_id: 2.0,
        length_total: INNER_TUBE_LENGTH,
        deflectable_arc: nylon_tube_shape().arc_total(),
    }
}

/// Fiberglass tube, OD 7.93 mm / ID 6.2 mm. Straight, so nothing deflects.
pub fn outer_tube() -> TubeSpec {
    TubeSpec {
        r_od: 7.93 / 2.0,
        r_id: 6.2 / 2.0,
        length_total: 200.0,
        deflectable_arc: 0.0,
    }
}
