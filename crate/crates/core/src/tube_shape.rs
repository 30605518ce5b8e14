//! Planar precurved centerline of the inner tube.
//!
//! The centerline is a graph `y = f(x)` with `x` measured from the distal end
//! of the outer tube (`x = 0`) to the distal tip of the inner tube at full
//! extension (`x = x_max_total`). Positive curvature bends the tube toward
//! `-y`, so a tube that curls toward `-y` has `f'' < 0`.

use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_domain, CtrError, Result};
use crate::numeric;

/// Absolute tolerance of every arc-length quadrature, mm.
pub const ARC_TOL: f64 = 1e-10;
/// Bracket width at which the `x_min` root find stops, mm.
const ROOT_XTOL: f64 = 1e-13;

pub const DEFAULT_FIT_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    /// `f(x) = a0 + a1 x + ... + ak x^k`, coefficients in mm-based units.
    Polynomial(Vec<f64>),
    /// Circular arc `f(x) = sqrt(R^2 - x^2) - R`, tangent to `x` at the origin.
    Arc { radius: f64 },
}

/// Characterized centerline of the inner tube's deflectable region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeRecord", into = "ShapeRecord")]
pub struct PlanarShape {
    profile: Profile,
    x_max_total: f64,
    arc_total: f64,
}

/// Wire form of [`PlanarShape`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ShapeRecord {
    #[serde(default)]
    coefficients: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    arc_radius: Option<f64>,
    x_max_total: f64,
    #[serde(default)]
    arc_total: Option<f64>,
}

impl From<PlanarShape> for ShapeRecord {
    fn from(shape: PlanarShape) -> Self {
        let (coefficients, arc_radius) = match shape.profile {
            Profile::Polynomial(c) => (c, None),
            Profile::Arc { radius } => (Vec::new(), Some(radius)),
        };
        ShapeRecord {
            coefficients,
            arc_radius,
            x_max_total: shape.x_max_total,
            arc_total: Some(shape.arc_total),
        }
    }
}

impl TryFrom<ShapeRecord> for PlanarShape {
    type Error = CtrError;

    fn try_from(rec: ShapeRecord) -> Result<Self> {
        let shape = match rec.arc_radius {
            Some(radius) => PlanarShape::from_arc_x(radius, rec.x_max_total)?,
            None => PlanarShape::polynomial(rec.coefficients, rec.x_max_total)?,
        };
        if let Some(stored) = rec.arc_total {
            if (stored - shape.arc_total).abs() > 1e-6 * (1.0 + stored.abs()) {
                return Err(CtrError::InvalidInput(format!(
                    "arc_total {stored} does not match the recomputed {}",
                    shape.arc_total
                )));
            }
        }
        Ok(shape)
    }
}

impl PlanarShape {
    /// Polynomial centerline with coefficients `a0..ak` (at least three).
    pub fn polynomial(coefficients: Vec<f64>, x_max_total: f64) -> Result<Self> {
        if coefficients.len() < 3 {
            return Err(CtrError::InvalidInput(format!(
                "polynomial needs degree >= 2, got {} coefficient(s)",
                coefficients.len()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(CtrError::InvalidInput("non-finite coefficient".into()));
        }
        Self::build(Profile::Polynomial(coefficients), x_max_total)
    }

    /// A straight tube of the given length.
    pub fn straight(length: f64) -> Result<Self> {
        Self::polynomial(vec![0.0; DEFAULT_FIT_DEGREE + 1], length)
    }

    /// Constant-curvature arc of radius `radius` and arc length `arc_length`.
    /// The swept angle must stay below a quarter turn so the arc is a graph over `x`.
    pub fn circular_arc(radius: f64, arc_length: f64) -> Result<Self> {
        if !(radius > 0.0) || !(arc_length > 0.0) {
            return Err(CtrError::InvalidInput(
                "arc radius and length must be positive".into(),
            ));
        }
        let angle = arc_length / radius;
        if angle >= std::f64::consts::FRAC_PI_2 {
            return Err(CtrError::InvalidInput(format!(
                "arc sweeps {angle:.4} rad; a graph over x needs less than pi/2"
            )));
        }
        let mut shape = Self::from_arc_x(radius, radius * angle.sin())?;
        // exact value for the arc; the quadrature agrees to ~1e-10
        shape.arc_total = arc_length;
        Ok(shape)
    }

    fn from_arc_x(radius: f64, x_max_total: f64) -> Result<Self> {
        if !(radius > 0.0) || x_max_total >= radius {
            return Err(CtrError::InvalidInput(format!(
                "arc radius {radius} must exceed x_max_total {x_max_total}"
            )));
        }
        Self::build(Profile::Arc { radius }, x_max_total)
    }

    fn build(profile: Profile, x_max_total: f64) -> Result<Self> {
        if !(x_max_total > 0.0) || !x_max_total.is_finite() {
            return Err(CtrError::InvalidInput(format!(
                "x_max_total must be positive, got {x_max_total}"
            )));
        }
        let mut shape = PlanarShape {
            profile,
            x_max_total,
            arc_total: 0.0,
        };
        shape.arc_total = shape.arc_between(0.0, x_max_total);
        Ok(shape)
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    /// Polynomial coefficients, empty for an exact arc.
    pub fn coefficients(&self) -> &[f64] {
        match &self.profile {
            Profile::Polynomial(c) => c,
            Profile::Arc { .. } => &[],
        }
    }

    pub fn x_max_total(&self) -> f64 {
        self.x_max_total
    }

    /// Arc length of the whole deflectable region (`s_max`).
    pub fn arc_total(&self) -> f64 {
        self.arc_total
    }

    pub fn f(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, a| acc * x + a),
            Profile::Arc { radius } => (radius * radius - x * x).sqrt() - radius,
        }
    }

    pub fn df(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, a)| acc * x + k as f64 * a),
            Profile::Arc { radius } => -x / (radius * radius - x * x).sqrt(),
        }
    }

    pub fn d2f(&self, x: f64) -> f64 {
        match &self.profile {
            Profile::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, a)| acc * x + (k * (k - 1)) as f64 * a),
            Profile::Arc { radius } => {
                let r2 = radius * radius;
                -r2 / (r2 - x * x).powf(1.5)
            }
        }
    }

    /// Signed curvature at `x`, positive when bending toward `-y`.
    pub fn curvature(&self, x: f64) -> Result<f64> {
        let x = check_domain("x", x, 0.0, self.x_max_total)?;
        Ok(self.curvature_at(x))
    }

    pub(crate) fn curvature_at(&self, x: f64) -> f64 {
        if let Profile::Arc { radius } = self.profile {
            return 1.0 / radius;
        }
        let d1 = self.df(x);
        -self.d2f(x) / (1.0 + d1 * d1).powf(1.5)
    }

    /// Total turning of the tangent over the domain, `integral(kappa ds)`, rad.
    pub fn bend_angle(&self) -> f64 {
        if let Profile::Arc { radius } = self.profile {
            return self.arc_total / radius;
        }
        self.df(0.0).atan() - self.df(self.x_max_total).atan()
    }

    /// Arc-length-weighted mean curvature.
    pub fn mean_curvature(&self) -> f64 {
        if self.arc_total == 0.0 {
            0.0
        } else {
            self.bend_angle() / self.arc_total
        }
    }

    /// Arc length of the centerline between `x1 <= x2`.
    pub fn arc_length(&self, x1: f64, x2: f64) -> Result<f64> {
        if x2 < x1 {
            return Err(CtrError::InvalidInput(format!(
                "reversed arc-length bounds ({x1}, {x2})"
            )));
        }
        let x1 = check_domain("x1", x1, 0.0, self.x_max_total)?;
        let x2 = check_domain("x2", x2, 0.0, self.x_max_total)?;
        Ok(self.arc_between(x1, x2))
    }

    pub(crate) fn arc_between(&self, x1: f64, x2: f64) -> f64 {
        if let Profile::Arc { radius } = self.profile {
            return radius * ((x2 / radius).asin() - (x1 / radius).asin());
        }
        numeric::integrate(
            |x| {
                let d = self.df(x);
                (1.0 + d * d).sqrt()
            },
            x1,
            x2,
            ARC_TOL,
        )
    }

    /// The `x_min` for which the exposed arc `[x_min, x_max_total]` has length `s`.
    pub fn solve_x_min(&self, s: f64) -> Result<f64> {
        let s = check_domain("s", s, 0.0, self.arc_total)?;
        self.x_where_distal_arc_is(s)
    }

    /// The `x` for which the proximal arc `[0, x]` has length `s`.
    pub fn solve_x_for_proximal_arc(&self, s: f64) -> Result<f64> {
        let s = check_domain("s", s, 0.0, self.arc_total)?;
        if s == 0.0 {
            return Ok(0.0);
        }
        if s == self.arc_total {
            return Ok(self.x_max_total);
        }
        numeric::brent(
            |x| self.arc_between(0.0, x) - s,
            0.0,
            self.x_max_total,
            ROOT_XTOL,
        )
    }

    fn x_where_distal_arc_is(&self, s: f64) -> Result<f64> {
        if s == 0.0 {
            return Ok(self.x_max_total);
        }
        if s == self.arc_total {
            return Ok(0.0);
        }
        if let Profile::Arc { radius } = self.profile {
            let theta = (self.x_max_total / radius).asin() - s / radius;
            return Ok(radius * theta.sin());
        }
        numeric::brent(
            |x| self.arc_between(x, self.x_max_total) - s,
            0.0,
            self.x_max_total,
            ROOT_XTOL,
        )
    }
}

/// Digitized centerline points `(x, y)` in mm, `x` strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterlineSamples {
    points: Vec<(f64, f64)>,
}

#[derive(Debug, Deserialize)]
struct SampleRow {
    x_mm: f64,
    y_mm: f64,
}

impl CenterlineSamples {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(CtrError::InvalidInput("non-finite centerline sample".into()));
        }
        if let Some(w) = points.windows(2).find(|w| w[1].0 <= w[0].0) {
            return Err(CtrError::InvalidInput(format!(
                "centerline x must be strictly increasing ({} then {})",
                w[0].0, w[1].0
            )));
        }
        Ok(CenterlineSamples { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Two-column CSV with header `x_mm,y_mm`.
    pub fn from_csv_reader<R: Read>(reader: R, origin: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CtrError::parse(origin, e))?.clone();
        if headers.len() != 2 || &headers[0] != "x_mm" || &headers[1] != "y_mm" {
            return Err(CtrError::parse(
                origin,
                format!("expected header x_mm,y_mm, found {:?}", headers.iter().collect::<Vec<_>>()),
            ));
        }
        let mut points = Vec::new();
        for row in rdr.deserialize::<SampleRow>() {
            let row = row.map_err(|e| CtrError::parse(origin, e))?;
            points.push((row.x_mm, row.y_mm));
        }
        Self::new(points)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CtrError::io(path, e))?;
        Self::from_csv_reader(file, &path.display().to_string())
    }
}

/// Least-squares polynomial fit of the centerline samples.
///
/// The Vandermonde system is built on `x / x_last` and solved by SVD; the
/// coefficients are rescaled back to mm units. `x_max_total` is the last
/// sample's `x`.
pub fn fit_centerline(samples: &CenterlineSamples, degree: usize) -> Result<PlanarShape> {
    if degree < 2 {
        return Err(CtrError::InvalidInput(format!(
            "fit degree must be at least 2, got {degree}"
        )));
    }
    let pts = samples.points();
    if pts.len() < degree + 1 {
        return Err(CtrError::FitFailure(format!(
            "{} sample(s) cannot determine a degree-{degree} polynomial",
            pts.len()
        )));
    }
    let x_last = pts[pts.len() - 1].0;
    if !(x_last > 0.0) {
        return Err(CtrError::FitFailure(format!(
            "last sample x must be positive, got {x_last}"
        )));
    }
    let cols = degree + 1;
    let vander = DMatrix::from_fn(pts.len(), cols, |i, j| (pts[i].0 / x_last).powi(j as i32));
    let rhs = DVector::from_iterator(pts.len(), pts.iter().map(|p| p.1));
    let svd = vander.svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(CtrError::FitFailure(format!(
            "rank-deficient Vandermonde system (condition {:.3e})",
            smax / smin
        )));
    }
    let scaled = svd
        .solve(&rhs, 0.0)
        .map_err(|e| CtrError::FitFailure(e.to_string()))?;
    let coefficients = scaled
        .iter()
        .enumerate()
        .map(|(k, b)| b / x_last.powi(k as i32))
        .collect();
    PlanarShape::polynomial(coefficients, x_last)
}
