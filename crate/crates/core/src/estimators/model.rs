use super::EstimatorError;
use crate::geometry::{wrap_angle, BasePose, SPEED_OF_LIGHT};
use crate::measurements::{Measurement, MeasurementKind, PathLoss};
use nalgebra::Vector3;
use std::f64::consts::LN_10;

/// Measurement model `h(s, u)` in solver units: meters for timing kinds,
/// radians in the array frame for angles, dBm for RSS.
pub fn model_value(
    kind: MeasurementKind,
    u: &Vector3<f64>,
    pose: &BasePose,
    reference: Option<&BasePose>,
    path_loss: &PathLoss,
) -> Result<f64, EstimatorError> {
    let s = pose.position.to_vector();
    let d = u - s;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(EstimatorError::DegenerateGeometry(pose.id));
    }
    let dxy = d.x.hypot(d.y);
    Ok(match kind {
        MeasurementKind::Tof | MeasurementKind::Rtt => dist,
        MeasurementKind::Tdoa => {
            let r = reference.ok_or(EstimatorError::MissingReference(pose.id))?;
            let dr = (u - r.position.to_vector()).norm();
            if dr == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(r.id));
            }
            dist - dr
        }
        MeasurementKind::AoaAz | MeasurementKind::AodAz => {
            if dxy == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(pose.id));
            }
            wrap_angle(d.y.atan2(d.x) - pose.orientation.yaw)
        }
        MeasurementKind::AoaEl | MeasurementKind::AodEl => {
            if dxy == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(pose.id));
            }
            wrap_angle((-d.z).atan2(dxy) - pose.orientation.roll)
        }
        MeasurementKind::Rss => path_loss.received_power(dist),
    })
}

/// Gradient of [`model_value`] with respect to the UE position.
pub fn jacobian_row(
    kind: MeasurementKind,
    u: &Vector3<f64>,
    pose: &BasePose,
    reference: Option<&BasePose>,
    path_loss: &PathLoss,
) -> Result<Vector3<f64>, EstimatorError> {
    let s = pose.position.to_vector();
    let d = u - s;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(EstimatorError::DegenerateGeometry(pose.id));
    }
    let dxy2 = d.x * d.x + d.y * d.y;
    let dxy = dxy2.sqrt();
    Ok(match kind {
        MeasurementKind::Tof | MeasurementKind::Rtt => d / dist,
        MeasurementKind::Tdoa => {
            let r = reference.ok_or(EstimatorError::MissingReference(pose.id))?;
            let dr = u - r.position.to_vector();
            let nr = dr.norm();
            if nr == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(r.id));
            }
            d / dist - dr / nr
        }
        MeasurementKind::AoaAz | MeasurementKind::AodAz => {
            if dxy == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(pose.id));
            }
            Vector3::new(-d.y / dxy2, d.x / dxy2, 0.0)
        }
        MeasurementKind::AoaEl | MeasurementKind::AodEl => {
            if dxy == 0.0 {
                return Err(EstimatorError::DegenerateGeometry(pose.id));
            }
            let d2 = dist * dist;
            Vector3::new(d.z * d.x / (d2 * dxy), d.z * d.y / (d2 * dxy), -dxy / d2)
        }
        MeasurementKind::Rss => -10.0 * path_loss.alpha / LN_10 * d / (dist * dist),
    })
}

/// Observed value and standard deviation of a measurement in solver units.
pub fn observation(m: &Measurement) -> (f64, f64) {
    match m.kind {
        MeasurementKind::Tof | MeasurementKind::Tdoa => (m.value * SPEED_OF_LIGHT, m.sigma * SPEED_OF_LIGHT),
        MeasurementKind::Rtt => (
            (m.value - m.reply_time.unwrap_or(0.0)) * SPEED_OF_LIGHT / 2.0,
            m.sigma * SPEED_OF_LIGHT / 2.0,
        ),
        _ => (m.value, m.sigma),
    }
}

/// Observed-minus-modelled value; angle differences are wrapped.
pub fn residual(kind: MeasurementKind, observed: f64, modelled: f64) -> f64 {
    if kind.is_angle() {
        wrap_angle(observed - modelled)
    } else {
        observed - modelled
    }
}

/// One linearised measurement row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Row {
    pub kind: MeasurementKind,
    pub residual: f64,
    pub grad: Vector3<f64>,
    pub sigma: f64,
}

pub(crate) fn find_pose<'a>(poses: &'a [BasePose], id: u32) -> Result<&'a BasePose, EstimatorError> {
    poses.iter().find(|p| p.id == id).ok_or(EstimatorError::UnknownBaseStation(id))
}

pub(crate) fn linearise(
    measurements: &[Measurement],
    u: &Vector3<f64>,
    poses: &[BasePose],
    path_loss: &PathLoss,
) -> Result<Vec<Row>, EstimatorError> {
    measurements
        .iter()
        .map(|m| {
            let pose = find_pose(poses, m.bs_id)?;
            let reference = match m.ref_bs_id {
                Some(id) => Some(find_pose(poses, id)?),
                None => None,
            };
            let (rho, sigma) = observation(m);
            let h = model_value(m.kind, u, pose, reference, path_loss)?;
            Ok(Row {
                kind: m.kind,
                residual: residual(m.kind, rho, h),
                grad: jacobian_row(m.kind, u, pose, reference, path_loss)?,
                sigma,
            })
        })
        .collect()
}
