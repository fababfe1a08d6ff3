use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Analytic boundary family of a planar domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned rectangle `[0, width] x [0, height]`.
    Rectangle { width: f64, height: f64 },
    /// Star-shaped domain with boundary `r(θ) = r0 + a cos(kθ)` around the origin.
    PolarStar { r0: f64, a: f64, k: u32 },
}

/// A domain together with the target mesh edge length.
///
/// Serialized as the flat document `{kind, r0, a, k, width, height, h}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub shape: Shape,
    pub h: f64,
}

impl DomainSpec {
    pub fn rectangle(width: f64, height: f64, h: f64) -> Self {
        DomainSpec { shape: Shape::Rectangle { width, height }, h }
    }

    pub fn unit_square(h: f64) -> Self {
        Self::rectangle(1.0, 1.0, h)
    }

    pub fn polar_star(r0: f64, a: f64, k: u32, h: f64) -> Self {
        DomainSpec { shape: Shape::PolarStar { r0, a, k }, h }
    }

    /// Same shape, different target edge length.
    pub fn with_h(&self, h: f64) -> Self {
        DomainSpec { shape: self.shape.clone(), h }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: DomainSpec = serde_json::from_str(text)
            .map_err(|e| Error::validation(format!("malformed domain spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::validation(format!("edge length h must be positive, got {}", self.h)));
        }
        match self.shape {
            Shape::Rectangle { width, height } => {
                if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
                    return Err(Error::validation("rectangle sides must be positive"));
                }
                let feature = 0.5 * width.min(height);
                if self.h >= feature {
                    return Err(Error::validation(format!(
                        "h = {} exceeds the feature size {feature} of the rectangle",
                        self.h
                    )));
                }
            }
            Shape::PolarStar { r0, a, k } => {
                if !(r0.is_finite() && r0 > 0.0) {
                    return Err(Error::validation("polar star base radius r0 must be positive"));
                }
                if !(a.is_finite() && a >= 0.0) {
                    return Err(Error::validation("polar star amplitude a must be nonnegative"));
                }
                if a >= r0 {
                    return Err(Error::validation(format!(
                        "polar star boundary degenerates: a = {a} >= r0 = {r0}"
                    )));
                }
                if k < 2 {
                    return Err(Error::validation(format!("polar star frequency k = {k} must be >= 2")));
                }
                let feature = 0.5 * (r0 - a);
                if self.h >= feature {
                    return Err(Error::validation(format!(
                        "h = {} exceeds the feature size (r0 - a)/2 = {feature}",
                        self.h
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact enclosed area.
    pub fn exact_area(&self) -> f64 {
        match self.shape {
            Shape::Rectangle { width, height } => width * height,
            // ½∫(r0 + a cos kθ)² dθ over a full turn
            Shape::PolarStar { r0, a, .. } => PI * (r0 * r0 + 0.5 * a * a),
        }
    }

    /// Whether `p` lies in the closed analytic domain.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self.shape {
            Shape::Rectangle { width, height } => {
                p[0] >= 0.0 && p[0] <= width && p[1] >= 0.0 && p[1] <= height
            }
            Shape::PolarStar { .. } => {
                let rho = p[0].hypot(p[1]);
                rho <= self.radius(p[1].atan2(p[0]))[0]
            }
        }
    }

    /// `[r, r', r'']` of the polar boundary at angle `theta`. Panics for rectangles.
    pub(crate) fn radius(&self, theta: f64) -> [f64; 3] {
        match self.shape {
            Shape::PolarStar { r0, a, k } => {
                let k = k as f64;
                let (s, c) = (k * theta).sin_cos();
                [r0 + a * c, -a * k * s, -a * k * k * c]
            }
            Shape::Rectangle { .. } => unreachable!("rectangles have no polar parametrization"),
        }
    }

    /// Bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        match self.shape {
            Shape::Rectangle { width, height } => [0.0, 0.0, width, height],
            Shape::PolarStar { r0, a, .. } => {
                let r = r0 + a;
                [-r, -r, r, r]
            }
        }
    }

    pub fn is_rectangle(&self) -> bool {
        matches!(self.shape, Shape::Rectangle { .. })
    }
}
