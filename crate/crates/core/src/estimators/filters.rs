use super::{EstimatorError, PositionEstimate};
use crate::geometry::{point_in_polygon_2d, Position3D};
use serde::{Deserialize, Serialize};

/// Inter-mode valley of the azimuth residual histogram, 8.6 degrees.
pub const DEFAULT_RESIDUAL_THRESHOLD_RAD: f64 = 8.6 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualDecision {
    pub accept: bool,
    pub mean_abs_residual: f64,
    pub rows: usize,
}

/// Accepts a fix when its mean absolute residual is at most `threshold`.
///
/// Angle residuals (radians) are used when the fix has any; otherwise every
/// residual is used in its solver unit.
pub fn residual_nlos_filter(estimate: &PositionEstimate, threshold: f64) -> ResidualDecision {
    let has_angles = estimate.residual_kinds.iter().any(|k| k.is_angle());
    let mut abs: Vec<f64> = estimate
        .residuals
        .iter()
        .zip(&estimate.residual_kinds)
        .filter(|(_, k)| !has_angles || k.is_angle())
        .map(|(r, _)| r.abs())
        .collect();
    // Summing in sorted order keeps the decision independent of row order.
    abs.sort_by(f64::total_cmp);
    let mean = if abs.is_empty() { 0.0 } else { abs.iter().sum::<f64>() / abs.len() as f64 };
    ResidualDecision {
        accept: mean <= threshold,
        mean_abs_residual: mean,
        rows: abs.len(),
    }
}

/// Admissible horizontal region made of one or more polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MapConstraintSpec", into = "MapConstraintSpec")]
pub struct MapConstraint {
    polygons: Vec<Vec<(f64, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct MapConstraintSpec {
    polygons: Vec<Vec<[f64; 2]>>,
}

impl TryFrom<MapConstraintSpec> for MapConstraint {
    type Error = EstimatorError;
    fn try_from(s: MapConstraintSpec) -> Result<Self, Self::Error> {
        MapConstraint::new(s.polygons.into_iter().map(|p| p.into_iter().map(|[x, y]| (x, y)).collect()).collect())
    }
}

impl From<MapConstraint> for MapConstraintSpec {
    fn from(c: MapConstraint) -> Self {
        MapConstraintSpec {
            polygons: c.polygons.into_iter().map(|p| p.into_iter().map(|(x, y)| [x, y]).collect()).collect(),
        }
    }
}

fn signed_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].0 * p[(i + 1) % n].1 - p[(i + 1) % n].0 * p[i].1).sum::<f64>() / 2.0
}

impl MapConstraint {
    pub fn new(polygons: Vec<Vec<(f64, f64)>>) -> Result<Self, EstimatorError> {
        if polygons.is_empty() {
            return Err(EstimatorError::InvalidPolygon);
        }
        for p in &polygons {
            if p.len() < 3 || p.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) || signed_area(p).abs() < 1e-12 {
                return Err(EstimatorError::InvalidPolygon);
            }
        }
        Ok(Self { polygons })
    }

    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, EstimatorError> {
        Self::new(vec![vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]])
    }

    pub fn polygons(&self) -> &[Vec<(f64, f64)>] {
        &self.polygons
    }

    pub fn contains(&self, p: &Position3D) -> bool {
        self.polygons.iter().any(|poly| point_in_polygon_2d((p.x, p.y), poly))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFilterResult {
    pub kept: Vec<PositionEstimate>,
    pub rejected_fraction: f64,
}

/// Keeps the fixes that fall inside the admissible region.
pub fn map_constraint_filter(estimates: &[PositionEstimate], constraint: &MapConstraint) -> MapFilterResult {
    let kept: Vec<PositionEstimate> = estimates.iter().filter(|e| constraint.contains(&e.position)).cloned().collect();
    let rejected_fraction = if estimates.is_empty() {
        0.0
    } else {
        (estimates.len() - kept.len()) as f64 / estimates.len() as f64
    };
    MapFilterResult { kept, rejected_fraction }
}
