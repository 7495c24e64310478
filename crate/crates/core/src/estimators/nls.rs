use super::model::{find_pose, linearise, Row};
use super::EstimatorError;
use crate::geometry::{direction_from_angles, BasePose, Position3D};
use crate::measurements::{Measurement, MeasurementKind, MeasurementSet, PathLoss};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Centroid of the base stations referenced by the measurements.
    Centroid,
    Fixed(Position3D),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GaussNewton,
    LevenbergMarquardt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveDim {
    ThreeD,
    /// Horizontal fix with the UE height held at `z`.
    TwoD { z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub eta: f64,
    pub max_iter: usize,
    /// Stop when the step norm drops below this, meters.
    pub tol: f64,
    pub init: InitPolicy,
    pub weighted: bool,
    pub algorithm: Algorithm,
    pub dim: SolveDim,
    pub path_loss: PathLoss,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            max_iter: 1000,
            tol: 1e-4,
            init: InitPolicy::Centroid,
            weighted: true,
            algorithm: Algorithm::GaussNewton,
            dim: SolveDim::ThreeD,
            path_loss: PathLoss::default(),
        }
    }
}

impl SolverConfig {
    /// Damped step, iteration cap and tolerance used in the published runs.
    pub fn damped() -> Self {
        Self {
            eta: 0.01,
            ..Self::default()
        }
    }

    pub fn two_d(z: f64) -> Self {
        Self {
            dim: SolveDim::TwoD { z },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(EstimatorError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_iter == 0 {
            return Err(EstimatorError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(EstimatorError::InvalidConfig(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    fn unknowns(&self) -> usize {
        match self.dim {
            SolveDim::ThreeD => 3,
            SolveDim::TwoD { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub position: Position3D,
    /// (H^T R^-1 H)^-1 at the fix. Rows and columns of a held coordinate are zero.
    pub covariance: Matrix3<f64>,
    pub residuals: Vec<f64>,
    pub residual_kinds: Vec<MeasurementKind>,
    pub iterations: usize,
    pub converged: bool,
    /// The normal matrix was near singular and Tikhonov damping was applied.
    pub rank_deficient: bool,
}

const RCOND_MIN: f64 = 1e-12;
const TIKHONOV: f64 = 1e-9;

fn initial_guess(ms: &[Measurement], poses: &[BasePose], cfg: &SolverConfig) -> Result<Vector3<f64>, EstimatorError> {
    let mut ids: Vec<u32> = ms.iter().flat_map(|m| std::iter::once(m.bs_id).chain(m.ref_bs_id)).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut u = match cfg.init {
        InitPolicy::Fixed(p) => p.to_vector(),
        InitPolicy::Centroid if ids.len() == 1 => single_bs_guess(ms, find_pose(poses, ids[0])?),
        InitPolicy::Centroid => {
            let anchors = ids.iter().map(|id| find_pose(poses, *id)).collect::<Result<Vec<_>, _>>()?;
            let mut c = Vector3::zeros();
            for a in &anchors {
                c += a.position.to_vector();
            }
            c /= anchors.len() as f64;
            let zmin = anchors.iter().map(|a| a.position.z).fold(f64::INFINITY, f64::min);
            let zmax = anchors.iter().map(|a| a.position.z).fold(f64::NEG_INFINITY, f64::max);
            // Coplanar anchors leave a mirror ambiguity; start below them.
            if zmax - zmin < 1.0 {
                c.z -= 1.5;
            }
            c
        }
    };
    if let SolveDim::TwoD { z } = cfg.dim {
        u.z = z;
    }
    Ok(u)
}

/// Range plus array angles from one station pin the UE in spherical coordinates.
fn single_bs_guess(ms: &[Measurement], pose: &BasePose) -> Vector3<f64> {
    let find = |kinds: &[MeasurementKind]| ms.iter().find(|m| kinds.contains(&m.kind));
    let range = find(&[MeasurementKind::Rtt, MeasurementKind::Tof]).map(|m| super::observation(m).0);
    let az = find(&[MeasurementKind::AoaAz, MeasurementKind::AodAz]).map(|m| m.value + pose.orientation.yaw);
    let el = find(&[MeasurementKind::AoaEl, MeasurementKind::AodEl]).map(|m| m.value + pose.orientation.roll);
    let az = az.unwrap_or(pose.orientation.yaw);
    let el = el.unwrap_or(pose.orientation.roll);
    let r = range.filter(|r| *r > 0.0).unwrap_or(1.0);
    pose.position.to_vector() + r * direction_from_angles(az, el)
}

struct Normal {
    h: DMatrix<f64>,
    w: DVector<f64>,
    r: DVector<f64>,
}

fn stack(rows: &[Row], n: usize, weighted: bool) -> Normal {
    let m = rows.len();
    let mut h = DMatrix::zeros(m, n);
    let mut w = DVector::zeros(m);
    let mut r = DVector::zeros(m);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n {
            h[(i, j)] = row.grad[j];
        }
        w[i] = if weighted { 1.0 / (row.sigma * row.sigma) } else { 1.0 };
        r[i] = row.residual;
    }
    Normal { h, w, r }
}

impl Normal {
    fn info(&self) -> DMatrix<f64> {
        let wh = DMatrix::from_fn(self.h.nrows(), self.h.ncols(), |i, j| self.w[i] * self.h[(i, j)]);
        self.h.transpose() * wh
    }

    fn gradient(&self) -> DVector<f64> {
        self.h.transpose() * self.r.component_mul(&self.w)
    }

    fn cost(&self) -> f64 {
        self.r.iter().zip(self.w.iter()).map(|(r, w)| w * r * r).sum()
    }
}

/// Solves `a x = b` for symmetric `a`, damping it when nearly singular.
fn solve_sym(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool), EstimatorError> {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max > 0.0) || !max.is_finite() {
        return Err(EstimatorError::RankDeficient {
            rows: 0,
            unknowns: a.nrows(),
        });
    }
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let deficient = min < RCOND_MIN * max;
    let mut a = a.clone();
    if deficient {
        for i in 0..a.nrows() {
            a[(i, i)] += TIKHONOV * max.max(1.0);
        }
    }
    let x = a
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or(EstimatorError::RankDeficient {
            rows: 0,
            unknowns: b.len(),
        })?;
    Ok((x, deficient))
}

fn to_step(dx: &DVector<f64>) -> Vector3<f64> {
    let mut s = Vector3::zeros();
    for (i, v) in dx.iter().enumerate() {
        s[i] = *v;
    }
    s
}

/// Iterative (weighted) nonlinear least squares fix.
pub fn solve_nls(set: &MeasurementSet, poses: &[BasePose], cfg: &SolverConfig) -> Result<PositionEstimate, EstimatorError> {
    cfg.validate()?;
    let ms = &set.measurements;
    let n = cfg.unknowns();
    if ms.len() < n {
        return Err(EstimatorError::RankDeficient {
            rows: ms.len(),
            unknowns: n,
        });
    }
    let mut u = initial_guess(ms, poses, cfg)?;
    let mut rank_deficient = false;
    let mut converged = false;
    let mut iterations = 0;
    let mut lambda = 1e-3;
    let mut normal = stack(&linearise(ms, &u, poses, &cfg.path_loss)?, n, cfg.weighted);
    while iterations < cfg.max_iter {
        iterations += 1;
        let info = normal.info();
        let g = normal.gradient();
        let step = match cfg.algorithm {
            Algorithm::GaussNewton => {
                let (dx, def) = solve_sym(&info, &g)?;
                rank_deficient |= def;
                let cost = normal.cost();
                let mut step = cfg.eta * to_step(&dx);
                let mut trial = stack(&linearise(ms, &(u + step), poses, &cfg.path_loss)?, n, cfg.weighted);
                // Halve steps that increase the cost.
                let mut halvings = 0;
                while trial.cost() > cost * (1.0 + 1e-9) && halvings < 40 {
                    step *= 0.5;
                    halvings += 1;
                    trial = stack(&linearise(ms, &(u + step), poses, &cfg.path_loss)?, n, cfg.weighted);
                }
                u += step;
                normal = trial;
                step
            }
            Algorithm::LevenbergMarquardt => {
                let cost = normal.cost();
                let mut accepted = None;
                for _ in 0..30 {
                    let mut damped = info.clone();
                    for i in 0..n {
                        damped[(i, i)] += lambda * info[(i, i)].max(f64::MIN_POSITIVE);
                    }
                    let (dx, def) = solve_sym(&damped, &g)?;
                    rank_deficient |= def;
                    let step = cfg.eta * to_step(&dx);
                    let trial = stack(&linearise(ms, &(u + step), poses, &cfg.path_loss)?, n, cfg.weighted);
                    if trial.cost() <= cost {
                        lambda = (lambda / 10.0).max(1e-12);
                        accepted = Some((step, trial));
                        break;
                    }
                    lambda *= 10.0;
                }
                match accepted {
                    Some((step, trial)) => {
                        u += step;
                        normal = trial;
                        step
                    }
                    None => Vector3::zeros(),
                }
            }
        };
        if !u.iter().all(|v| v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        if step.norm() < cfg.tol {
            converged = true;
            break;
        }
    }

    let rows = linearise(ms, &u, poses, &cfg.path_loss)?;
    let fisher = stack(&rows, n, true).info();
    let eig = fisher.symmetric_eigen();
    let max = eig.eigenvalues.amax();
    if !(max > 0.0) || !max.is_finite() {
        return Err(EstimatorError::RankDeficient { rows: ms.len(), unknowns: n });
    }
    let floor = RCOND_MIN * max;
    if eig.eigenvalues.iter().any(|l| *l < floor) {
        rank_deficient = true;
    }
    let inv = DVector::from_fn(n, |i, _| 1.0 / eig.eigenvalues[i].max(floor));
    let cov_n = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    let mut covariance = Matrix3::zeros();
    for i in 0..n {
        for j in 0..n {
            covariance[(i, j)] = 0.5 * (cov_n[(i, j)] + cov_n[(j, i)]);
        }
    }
    Ok(PositionEstimate {
        position: Position3D::from_vector(&u),
        covariance,
        residuals: rows.iter().map(|r| r.residual).collect(),
        residual_kinds: rows.iter().map(|r| r.kind).collect(),
        iterations,
        converged,
        rank_deficient,
    })
}
