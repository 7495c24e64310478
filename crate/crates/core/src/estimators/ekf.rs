use super::model::{linearise, Row};
use super::EstimatorError;
use crate::geometry::{BasePose, Position3D};
use crate::measurements::{Measurement, MeasurementSet, PathLoss};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionModel {
    /// Position-only state, F = I.
    RandomWalk,
    /// Position and velocity with white-noise acceleration.
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum NlosPolicy {
    None,
    /// Drop measurements flagged as NLOS by the generator.
    Oracle,
    /// Drop rows whose normalised innovation exceeds `threshold`.
    InnovationGate { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub model: MotionModel,
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
    /// Per-axis process noise. Variance per epoch for a random walk,
    /// acceleration spectral density for constant velocity.
    pub q: Vector3<f64>,
    pub dt: f64,
}

impl TrackState {
    pub fn random_walk(position: Position3D, sigma0: f64, q: Vector3<f64>, dt: f64) -> Result<Self, EstimatorError> {
        let s = Self {
            model: MotionModel::RandomWalk,
            x: DVector::from_column_slice(position.to_vector().as_slice()),
            p: DMatrix::identity(3, 3) * (sigma0 * sigma0),
            q,
            dt,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant_velocity(
        position: Position3D,
        sigma0: f64,
        sigma_v0: f64,
        q: Vector3<f64>,
        dt: f64,
    ) -> Result<Self, EstimatorError> {
        let mut x = DVector::zeros(6);
        x.rows_mut(0, 3).copy_from(&position.to_vector());
        let mut p = DMatrix::zeros(6, 6);
        for i in 0..3 {
            p[(i, i)] = sigma0 * sigma0;
            p[(i + 3, i + 3)] = sigma_v0 * sigma_v0;
        }
        let s = Self {
            model: MotionModel::ConstantVelocity,
            x,
            p,
            q,
            dt,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        match self.model {
            MotionModel::RandomWalk => 3,
            MotionModel::ConstantVelocity => 6,
        }
    }

    pub fn position(&self) -> Position3D {
        Position3D::new(self.x[0], self.x[1], self.x[2])
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let n = self.dim();
        if self.x.len() != n || self.p.shape() != (n, n) {
            return Err(EstimatorError::InvalidConfig("state and covariance dimensions disagree".into()));
        }
        if !(self.dt > 0.0) {
            return Err(EstimatorError::InvalidConfig(format!("sampling interval must be positive, got {}", self.dt)));
        }
        if self.q.iter().any(|v| !(*v >= 0.0)) {
            return Err(EstimatorError::NotPsd);
        }
        if !self.x.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        check_psd(&self.p)
    }

    fn predict(&mut self) {
        match self.model {
            MotionModel::RandomWalk => {
                for i in 0..3 {
                    self.p[(i, i)] += self.q[i];
                }
            }
            MotionModel::ConstantVelocity => {
                let dt = self.dt;
                let mut f = DMatrix::identity(6, 6);
                let mut qm = DMatrix::zeros(6, 6);
                for i in 0..3 {
                    f[(i, i + 3)] = dt;
                    qm[(i, i)] = self.q[i] * dt.powi(3) / 3.0;
                    qm[(i, i + 3)] = self.q[i] * dt.powi(2) / 2.0;
                    qm[(i + 3, i)] = qm[(i, i + 3)];
                    qm[(i + 3, i + 3)] = self.q[i] * dt;
                }
                self.x = &f * &self.x;
                self.p = &f * &self.p * f.transpose() + qm;
            }
        }
    }
}

fn check_psd(p: &DMatrix<f64>) -> Result<(), EstimatorError> {
    let n = p.nrows();
    for i in 0..n {
        for j in 0..i {
            let tol = 1e-9 * (p[(i, i)].abs() + p[(j, j)].abs()).max(1e-300);
            if (p[(i, j)] - p[(j, i)]).abs() > tol {
                return Err(EstimatorError::NotPsd);
            }
        }
    }
    let eig = p.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    if eig.eigenvalues.iter().any(|v| !v.is_finite() || *v < -1e-9 * scale) {
        return Err(EstimatorError::NotPsd);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EkfOutcome {
    pub state: TrackState,
    /// Indices into the epoch's measurements that entered the update.
    pub used: Vec<usize>,
    pub rejected: Vec<usize>,
}

/// Predict-update step with no NLOS handling.
pub fn ekf_step(track: &TrackState, set: &MeasurementSet, poses: &[BasePose]) -> Result<TrackState, EstimatorError> {
    Ok(ekf_step_with(track, set, poses, &PathLoss::default(), NlosPolicy::None)?.state)
}

pub fn ekf_step_with(
    track: &TrackState,
    set: &MeasurementSet,
    poses: &[BasePose],
    path_loss: &PathLoss,
    policy: NlosPolicy,
) -> Result<EkfOutcome, EstimatorError> {
    track.validate()?;
    let mut state = track.clone();
    state.predict();

    let candidates: Vec<(usize, &Measurement)> = set
        .measurements
        .iter()
        .enumerate()
        .filter(|(_, m)| !(policy == NlosPolicy::Oracle && !m.los))
        .collect();
    let mut rejected: Vec<usize> = (0..set.len()).filter(|i| !candidates.iter().any(|(j, _)| j == i)).collect();
    if candidates.is_empty() {
        return Ok(EkfOutcome {
            state,
            used: Vec::new(),
            rejected,
        });
    }

    let ms: Vec<Measurement> = candidates.iter().map(|(_, m)| (*m).clone()).collect();
    let rows = linearise(&ms, &state.position().to_vector(), poses, path_loss)?;
    let keep: Vec<usize> = match policy {
        NlosPolicy::InnovationGate { threshold } => (0..rows.len())
            .filter(|&i| rows[i].residual.abs() <= threshold * innovation_variance(&state, &rows[i]).sqrt())
            .collect(),
        _ => (0..rows.len()).collect(),
    };
    rejected.extend((0..rows.len()).filter(|i| !keep.contains(i)).map(|i| candidates[i].0));
    rejected.sort_unstable();
    let used: Vec<usize> = keep.iter().map(|&i| candidates[i].0).collect();
    if !keep.is_empty() {
        let kept: Vec<Row> = keep.iter().map(|&i| rows[i]).collect();
        update(&mut state, &kept)?;
    }
    Ok(EkfOutcome { state, used, rejected })
}

fn h_row(state: &TrackState, r: &Row) -> DMatrix<f64> {
    DMatrix::from_fn(1, state.dim(), |_, j| if j < 3 { r.grad[j] } else { 0.0 })
}

fn innovation_variance(state: &TrackState, r: &Row) -> f64 {
    let h = h_row(state, r);
    (&h * &state.p * h.transpose())[(0, 0)] + r.sigma * r.sigma
}

/// Joseph-form batch update with the given linearised rows.
fn update(state: &mut TrackState, rows: &[Row]) -> Result<(), EstimatorError> {
    let (m, n) = (rows.len(), state.dim());
    let h = DMatrix::from_fn(m, n, |i, j| if j < 3 { rows[i].grad[j] } else { 0.0 });
    let y = DVector::from_fn(m, |i, _| rows[i].residual);
    let r = DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| rows[i].sigma.powi(2)));
    let s = &h * &state.p * h.transpose() + &r;
    let s_inv = s.try_inverse().ok_or(EstimatorError::NotPsd)?;
    let k = &state.p * h.transpose() * s_inv;
    state.x += &k * y;
    let ikh = DMatrix::identity(n, n) - &k * &h;
    let p = &ikh * &state.p * ikh.transpose() + &k * r * k.transpose();
    state.p = (&p + p.transpose()) * 0.5;
    if !state.x.iter().all(|v| v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    Ok(())
}
