//! Straightening load from the outer tube and the resulting torsional wind-up
//! of the inner tube.
//!
//! The precurved arc still inside the outer tube at insertion `s` is the
//! proximal part of the centerline with length `s_max - s`. Each grid segment
//! of that arc stores linear-elastic bending energy
//! `dU = ds * integral(W(eps) dA)`. Its generalized force
//! `dU/dkappa = E * I * kappa * ds` divided by `s_max^2` is the segment's
//! tip-equivalent straightening force, so a uniform arc of curvature `kappa`
//! and length `L` needs `E * I * kappa / L` in total. Friction turns the
//! resultant into a resistive torque that twists the tube between its base and
//! the resultant's location.

use serde::{Deserialize, Serialize};

use crate::error::{check_domain, CtrError, Result};
use crate::numeric;
use crate::tube_shape::PlanarShape;

/// GPa to N/mm^2.
const GPA: f64 = 1000.0;

/// Tube geometry, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeSpec {
    pub r_od: f64,
    pub r_id: f64,
    /// Total tube length `L_i`.
    pub length_total: f64,
    /// Length of the precurved, deflectable region (`s_max`).
    pub deflectable_arc: f64,
}

impl TubeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_id > 0.0 && self.r_id < self.r_od) {
            return Err(CtrError::InvalidInput(format!(
                "tube radii must satisfy 0 < r_id < r_od (got {} / {})",
                self.r_id, self.r_od
            )));
        }
        if !(self.deflectable_arc >= 0.0 && self.deflectable_arc <= self.length_total) {
            return Err(CtrError::InvalidInput(format!(
                "deflectable arc {} must lie within the tube length {}",
                self.deflectable_arc, self.length_total
            )));
        }
        Ok(())
    }

    /// Second moment of area of the annulus about a diameter, mm^4.
    pub fn second_moment(&self) -> f64 {
        std::f64::consts::FRAC_PI_4 * (self.r_od.powi(4) - self.r_id.powi(4))
    }

    /// Polar second moment `J = pi (d_o^4 - d_i^4) / 32`, mm^4.
    pub fn polar_moment(&self) -> f64 {
        std::f64::consts::PI * ((2.0 * self.r_od).powi(4) - (2.0 * self.r_id).powi(4)) / 32.0
    }
}

/// Linear-elastic material constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub elastic_modulus_gpa: f64,
    pub shear_modulus_gpa: f64,
    pub strain_limit: f64,
    pub friction_mu: f64,
}

impl MaterialModel {
    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.elastic_modulus_gpa,
            self.shear_modulus_gpa,
            self.strain_limit,
            self.friction_mu,
        ]
        .iter()
        .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(CtrError::InvalidInput("material constants must be positive".into()));
        }
        if self.strain_limit > 0.15 {
            return Err(CtrError::InvalidInput(format!(
                "strain limit {} exceeds the 0.15 sanity bound",
                self.strain_limit
            )));
        }
        Ok(())
    }

    /// Young's modulus in N/mm^2.
    pub fn e(&self) -> f64 {
        self.elastic_modulus_gpa * GPA
    }

    /// Shear modulus in N/mm^2.
    pub fn g(&self) -> f64 {
        self.shear_modulus_gpa * GPA
    }
}

/// How the cross-section integral is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionIntegrand {
    /// Area element `r dr dphi`.
    #[default]
    Physical,
    /// `dphi dr` without the polar Jacobian, as the energy integral is
    /// sometimes written; kept for comparison only.
    Literal,
}

impl SectionIntegrand {
    /// Effective second moment `integral(y^2 dA)` under this weighting, mm^4 (or mm^3 for literal).
    pub fn effective_moment(&self, tube: &TubeSpec) -> f64 {
        match self {
            SectionIntegrand::Physical => tube.second_moment(),
            SectionIntegrand::Literal => {
                std::f64::consts::PI * (tube.r_od.powi(3) - tube.r_id.powi(3)) / 3.0
            }
        }
    }
}

/// Axial fiber strain at height `y` for curvature `kappa` about a neutral plane at `y_bar`.
pub fn fiber_strain(y: f64, kappa: f64, y_bar: f64) -> f64 {
    kappa * (y - y_bar) / (1.0 + y_bar * kappa)
}

/// Linear-elastic strain energy density `E eps^2 / 2`, N/mm^2 (= mJ/mm^3).
pub fn strain_energy_density(strain: f64, material: &MaterialModel) -> f64 {
    if strain.abs() > material.strain_limit {
        log::warn!(
            "strain {strain:.4} exceeds the elastic limit {}",
            material.strain_limit
        );
    }
    0.5 * material.e() * strain * strain
}

const RADIAL_NODES: usize = 12;
const ANGULAR_NODES: usize = 64;

/// Numerical `integral(W(eps(y, kappa)) dA)` over the annulus, with `y = r sin(phi)`.
///
/// Gauss–Legendre in `r` and the periodic trapezoid rule in `phi`, both exact
/// for the polynomial-trigonometric integrand of the linear model.
pub fn section_energy(
    kappa: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    integrand: SectionIntegrand,
) -> f64 {
    let rule = numeric::gauss_legendre(RADIAL_NODES);
    let (lo, hi) = (tube.r_id, tube.r_od);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let dphi = std::f64::consts::TAU / ANGULAR_NODES as f64;
    let e = material.e();
    let mut total = 0.0;
    for (node, weight) in rule {
        let r = mid + half * node;
        let ring: f64 = (0..ANGULAR_NODES)
            .map(|k| {
                let y = r * (k as f64 * dphi).sin();
                let eps = fiber_strain(y, kappa, 0.0);
                0.5 * e * eps * eps
            })
            .sum::<f64>()
            * dphi;
        let jac = match integrand {
            SectionIntegrand::Physical => r,
            SectionIntegrand::Literal => 1.0,
        };
        total += weight * half * ring * jac;
    }
    total
}

/// Closed form of [`section_energy`] under the linear model: `E kappa^2 I / 2`.
pub fn section_energy_closed_form(
    kappa: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    integrand: SectionIntegrand,
) -> f64 {
    0.5 * material.e() * kappa * kappa * integrand.effective_moment(tube)
}

/// Bending energy stored by straightening the segment `[x1, x2]`, N mm.
pub fn segment_energy(
    shape: &PlanarShape,
    x1: f64,
    x2: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
) -> Result<f64> {
    segment_energy_with(shape, x1, x2, tube, material, SectionIntegrand::Physical)
}

pub fn segment_energy_with(
    shape: &PlanarShape,
    x1: f64,
    x2: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    integrand: SectionIntegrand,
) -> Result<f64> {
    let ds = shape.arc_length(x1, x2)?;
    let kappa = shape.curvature(x1)?;
    Ok(ds * section_energy(kappa, tube, material, integrand))
}

/// Segment energy as a function of an explicit curvature, for gradient checks.
pub fn energy_at_curvature(
    kappa: f64,
    ds: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    integrand: SectionIntegrand,
) -> f64 {
    ds * section_energy(kappa, tube, material, integrand)
}

/// Analytic `d(dU)/d(kappa) = E I kappa ds`.
pub fn energy_gradient(
    kappa: f64,
    ds: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    integrand: SectionIntegrand,
) -> f64 {
    material.e() * integrand.effective_moment(tube) * kappa * ds
}

/// Resultant of the straightening load on the constrained arc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StraighteningForce {
    /// N.
    pub force: f64,
    /// Arc distance of the resultant from the proximal end of the deflectable region, mm.
    pub resultant_location: f64,
}

/// Everything needed to evaluate the torsion chain for one tube.
#[derive(Debug, Clone, PartialEq)]
pub struct TorsionModel {
    pub shape: PlanarShape,
    pub tube: TubeSpec,
    pub material: MaterialModel,
    pub segments: usize,
    pub integrand: SectionIntegrand,
}

impl TorsionModel {
    pub fn new(shape: PlanarShape, tube: TubeSpec, material: MaterialModel, segments: usize) -> Self {
        TorsionModel {
            shape,
            tube,
            material,
            segments,
            integrand: SectionIntegrand::Physical,
        }
    }

    pub fn s_max(&self) -> f64 {
        self.shape.arc_total()
    }

    pub fn straightening_force(&self, s: f64) -> Result<StraighteningForce> {
        if self.segments == 0 {
            return Err(CtrError::InvalidInput("segment count must be at least 1".into()));
        }
        let s_max = self.s_max();
        let s = check_domain("s", s, 0.0, s_max)?;
        let constrained = s_max - s;
        if constrained <= 0.0 {
            return Ok(StraighteningForce {
                force: 0.0,
                resultant_location: 0.0,
            });
        }
        let x_end = self.shape.solve_x_for_proximal_arc(constrained)?;
        let n = self.segments;
        let node = |j: usize| (j as f64 / n as f64) * x_end;
        let scale = 1.0 / (s_max * s_max);
        let mut force = 0.0;
        let mut moment = 0.0;
        let mut arc_to_node = 0.0;
        for j in 0..n {
            let (x0, x1) = (node(j), node(j + 1));
            let ds = self.shape.arc_between(x0, x1);
            let kappa = self.shape.curvature_at(x0);
            let df = energy_gradient(kappa.abs(), ds, &self.tube, &self.material, self.integrand)
                * scale;
            force += df;
            moment += df * arc_to_node;
            arc_to_node += ds;
        }
        let resultant_location = if force > 0.0 { moment / force } else { 0.0 };
        Ok(StraighteningForce {
            force,
            resultant_location,
        })
    }

    pub fn resistive_torque(&self, s: f64) -> Result<f64> {
        let f = self.straightening_force(s)?;
        Ok(resistive_torque(f.force, &self.tube, &self.material))
    }

    /// Twist between the tube base and the resultant location at insertion `s`, rad.
    pub fn deflection(&self, s: f64) -> Result<f64> {
        let f = self.straightening_force(s)?;
        if f.force == 0.0 {
            return Ok(0.0);
        }
        let s = check_domain("s", s, 0.0, self.s_max())?;
        let torque = resistive_torque(f.force, &self.tube, &self.material);
        let lever = self.tube.length_total - f.resultant_location - s;
        Ok(torque * lever / (self.tube.polar_moment() * self.material.g()))
    }
}

/// Straightening force at insertion `s` on an `n`-segment grid.
pub fn straightening_force(
    shape: &PlanarShape,
    s: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    n: usize,
) -> Result<StraighteningForce> {
    TorsionModel::new(shape.clone(), *tube, *material, n).straightening_force(s)
}

/// Friction torque `mu F r_od`, N mm.
pub fn resistive_torque(force: f64, tube: &TubeSpec, material: &MaterialModel) -> f64 {
    material.friction_mu * force * tube.r_od
}

pub fn torsional_deflection(
    shape: &PlanarShape,
    s: f64,
    tube: &TubeSpec,
    material: &MaterialModel,
    n: usize,
) -> Result<f64> {
    TorsionModel::new(shape.clone(), *tube, *material, n).deflection(s)
}

/// Tip wind-up seen after rotating the base by `rotation`: the lag opposes the
/// rotation and never exceeds the rotation itself.
pub fn wind_up(phi: f64, rotation: f64) -> f64 {
    rotation.signum() * phi.min(rotation.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn nylon() -> (TubeSpec, MaterialModel) {
        (presets::inner_tube(), presets::nylon())
    }

    #[test]
    fn strain_examples() {
        assert_eq!(fiber_strain(0.0, 0.05, 0.0), 0.0);
        assert_relative_eq!(fiber_strain(3.0, 0.05, 0.0), 0.15, epsilon = 1e-15);
        assert_relative_eq!(fiber_strain(3.0, 1.0 / 30.0, 0.0), 0.10, epsilon = 1e-15);
    }

    #[test]
    fn energy_density_examples() {
        let (_, m) = nylon();
        assert_eq!(strain_energy_density(0.0, &m), 0.0);
        let w = strain_energy_density(0.1, &m);
        assert_relative_eq!(w, 20.0, epsilon = 1e-12);
        assert_relative_eq!(strain_energy_density(0.2, &m), 4.0 * w, epsilon = 1e-12);
    }

    #[test]
    fn annulus_moments() {
        let (t, _) = nylon();
        assert_relative_eq!(t.second_moment(), 51.05, epsilon = 0.01);
        assert_relative_eq!(t.polar_moment(), 102.1, epsilon = 0.01);
    }

    #[test]
    fn segment_energy_closed_form_example() {
        let (t, m) = nylon();
        let numeric = energy_at_curvature(0.05, 1.0, &t, &m, SectionIntegrand::Physical);
        let closed = 4000.0 * 0.0025 * t.second_moment() / 2.0;
        assert!((numeric - closed).abs() / closed < 1e-3);
        assert_relative_eq!(closed, 255.3, epsilon = 0.05);
        let straight = PlanarShape::straight(29.0).unwrap();
        assert_eq!(segment_energy(&straight, 0.0, 5.0, &t, &m).unwrap(), 0.0);
    }

    #[test]
    fn force_vanishes_at_full_extension_and_for_straight_tubes() {
        let (t, m) = nylon();
        let shape = presets::nylon_tube_shape();
        let f = straightening_force(&shape, shape.arc_total(), &t, &m, 100).unwrap();
        assert_eq!(f.force, 0.0);
        assert_eq!(torsional_deflection(&shape, shape.arc_total(), &t, &m, 100).unwrap(), 0.0);
        let straight = PlanarShape::straight(29.0).unwrap();
        for s in [0.0, 10.0, 29.0] {
            assert_eq!(straightening_force(&straight, s, &t, &m, 100).unwrap().force, 0.0);
        }
    }

    #[test]
    fn uniform_arc_force_is_the_cantilever_tip_load() {
        let (t, m) = nylon();
        let arc = PlanarShape::circular_arc(20.0, 27.0).unwrap();
        let f = straightening_force(&arc, 0.0, &t, &m, 100).unwrap();
        let beam = m.e() * t.second_moment() * (1.0 / 20.0) / 27.0;
        assert_relative_eq!(f.force, beam, max_relative = 1e-9);
        // uniform load, so the resultant tends to the middle of the arc
        let fine = straightening_force(&arc, 0.0, &t, &m, 4000).unwrap();
        assert_relative_eq!(fine.resultant_location, 13.5, max_relative = 1e-3);
    }

    #[test]
    fn torque_examples() {
        let (t, m) = nylon();
        assert_eq!(resistive_torque(0.0, &t, &m), 0.0);
        assert_relative_eq!(resistive_torque(10.0, &t, &m), 5.1, epsilon = 1e-12);
        assert_relative_eq!(
            resistive_torque(20.0, &t, &m),
            2.0 * resistive_torque(10.0, &t, &m)
        );
    }

    #[test]
    fn wind_up_is_capped_by_the_rotation() {
        assert_eq!(wind_up(0.1, 0.5), 0.1);
        assert_eq!(wind_up(0.1, -0.5), -0.1);
        assert_eq!(wind_up(0.1, 0.02), 0.02);
        assert_eq!(wind_up(0.1, 0.0), 0.0);
    }

    #[test]
    fn deflection_is_small_near_the_ends_of_travel() {
        let (t, m) = nylon();
        let shape = presets::nylon_tube_shape();
        let model = TorsionModel::new(shape.clone(), t, m, 100);
        let phi_end = model.deflection(shape.arc_total() - 0.5).unwrap();
        let phi_start = model.deflection(0.0).unwrap();
        assert!(phi_end < 0.05 * phi_start, "{phi_end} vs {phi_start}");
        assert!(phi_start > 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn force_is_nonnegative(s in 0.0f64..=1.0) {
            let (t, m) = nylon();
            let shape = presets::nylon_tube_shape();
            let f = straightening_force(&shape, s * shape.arc_total(), &t, &m, 100).unwrap();
            prop_assert!(f.force >= 0.0);
        }

        #[test]
        fn literal_integrand_matches_its_closed_form(kappa in -0.1f64..0.1, r_id in 0.5f64..3.0, wall in 0.2f64..2.0) {
            let m = presets::nylon();
            let t = TubeSpec { r_od: r_id + wall, r_id, length_total: 250.0, deflectable_arc: 29.0 };
            let num = section_energy(kappa, &t, &m, SectionIntegrand::Literal);
            let closed = section_energy_closed_form(kappa, &t, &m, SectionIntegrand::Literal);
            prop_assert!((num - closed).abs() <= 1e-9 * closed.abs().max(1e-12));
        }
    }
}
