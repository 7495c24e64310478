//! Scenario ingestion, Monte-Carlo orchestration and metrics.

mod metrics;
mod pipeline;
mod scenario;
mod trajectory;

pub use metrics::{compute_metrics, CdfKnot, ErrorStats};
pub use scenario::{
    BsSpec, FilterSpec, FusedSpec, Level, Method, NoiseSpec, RfSpec, Scenario, TrackingSpec, TrajectorySpec, UeSpec,
    VisibilitySpec,
};
pub use trajectory::{gen_random_walk, gen_random_walk_with, sample_waypoints};

use crate::beam::BeamError;
use crate::estimators::{
    ekf_step_with, error_ellipse_from_samples, model_value, observation, residual,
    residual_nlos_filter, solve_nls, EstimatorError, ErrorEllipse, InitPolicy, MotionModel, NlosPolicy, SolveDim,
    TrackState,
};
use crate::geometry::{GeometryError, Position3D};
use crate::grid5g::GridError;
use crate::linklevel::LinkError;
use crate::measurements::{MeasurementError, MeasurementKind, MeasurementSet};
use nalgebra::Vector3;
use pipeline::{epoch_measurements, measurement_set, visibility, Env};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("no errors to summarise")]
    EmptyMetrics,
    #[error("every run failed: {0}")]
    AllRunsFailed(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Process exit code: 2 for invalid input, 3 for detection or solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_)
            | SimError::Validation(_)
            | SimError::Grid(_)
            | SimError::Geometry(_)
            | SimError::Measurement(MeasurementError::InvalidNoise(_))
            | SimError::Estimator(EstimatorError::InvalidConfig(_) | EstimatorError::InvalidPolygon)
            | SimError::Beam(BeamError::InvalidBook(_))
            | SimError::Link(LinkError::InvalidParameter(_) | LinkError::GridTooWide { .. })
            | SimError::Io(_) => 2,
            _ => 3,
        }
    }
}

/// Default epoch spacing, the PRS repetition interval of the outdoor replica.
pub const DEFAULT_EPOCH_INTERVAL_S: f64 = 0.7134;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub scenario: PathBuf,
    pub method: Method,
    pub level: Level,
    pub mu: u8,
    pub runs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads; falls back to `NRLOC_THREADS`, then to rayon's default.
    pub threads: Option<usize>,
    /// Overrides the scenario's tracking NLOS policy.
    pub nlos: Option<NlosPolicy>,
    /// Overrides the scenario's epoch interval.
    pub interval_s: Option<f64>,
}

impl RunSpec {
    pub fn new(scenario: impl Into<PathBuf>, method: Method) -> Self {
        Self {
            scenario: scenario.into(),
            method,
            level: Level::Geometric,
            mu: 1,
            runs: 1,
            seed: 0,
            out: None,
            threads: None,
            nlos: None,
            interval_s: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.runs == 0 {
            return Err(SimError::Validation("run count must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(SimError::Validation("thread count must be at least 1".into()));
        }
        if let Some(dt) = self.interval_s {
            if !(dt > 0.0) {
                return Err(SimError::Validation(format!("epoch interval must be positive, got {dt}")));
            }
        }
        Ok(())
    }
}

/// One fix (static) or one epoch (tracking) of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub run: usize,
    pub epoch: usize,
    pub time_s: f64,
    pub truth: Position3D,
    pub estimate: Option<Position3D>,
    /// Estimate minus truth over the reported dimensions.
    pub error: Option<Vec<f64>>,
    pub accepted: bool,
    pub measurements: usize,
    pub nlos_links: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SigmaSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub mode: String,
    pub method: Method,
    pub level: Level,
    pub mu: u8,
    pub runs: usize,
    pub seed: u64,
    pub dims: usize,
    pub epochs_total: usize,
    /// Epochs without a fix (solver or detection failure).
    pub failures: usize,
    /// Fixes removed by the residual or map filter.
    pub rejected: usize,
    pub rejected_fraction: f64,
    pub nlos_link_fraction: f64,
    #[serde(flatten)]
    pub stats: ErrorStats,
    /// 95% ellipse of the accepted position errors.
    pub ellipse: Option<ErrorEllipse>,
    /// Measurement minus true model value, in solver units (m, rad, dB).
    pub measurement_errors: BTreeMap<MeasurementKind, SigmaSummary>,
    #[serde(skip)]
    pub epochs: Vec<EpochRecord>,
}

fn thread_count(spec: &RunSpec) -> Result<Option<usize>, SimError> {
    if let Some(n) = spec.threads {
        return Ok(Some(n));
    }
    match std::env::var("NRLOC_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(SimError::Validation(format!("NRLOC_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

/// Runs `f(run)` for every run index on a dedicated pool and returns the
/// results in run order.
fn parallel_runs<T: Send>(spec: &RunSpec, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>, SimError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(spec)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| SimError::Config(e.to_string()))?;
    Ok(pool.install(|| (0..spec.runs).into_par_iter().map(f).collect()))
}

/// Independent stream per run derived from the master seed.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn dims(scenario: &Scenario) -> usize {
    match scenario.solver.dim {
        SolveDim::ThreeD => 3,
        SolveDim::TwoD { .. } => 2,
    }
}

fn error_vec(est: &Position3D, truth: &Position3D, d: usize) -> Vec<f64> {
    let e = [est.x - truth.x, est.y - truth.y, est.z - truth.z];
    e[..d].to_vec()
}

#[derive(Default)]
struct RunOutput {
    records: Vec<EpochRecord>,
    sets: Vec<MeasurementSet>,
    links: usize,
    nlos_links: usize,
}

pub fn run_static(spec: &RunSpec) -> Result<MetricsReport, SimError> {
    let scenario = Scenario::load(&spec.scenario)?;
    run_static_scenario(&scenario, spec)
}

pub fn run_track(spec: &RunSpec) -> Result<MetricsReport, SimError> {
    let scenario = Scenario::load(&spec.scenario)?;
    run_track_scenario(&scenario, spec)
}

/// Static positioning: every UE point is fixed independently in every run.
pub fn run_static_scenario(scenario: &Scenario, spec: &RunSpec) -> Result<MetricsReport, SimError> {
    spec.validate()?;
    scenario.check_run(spec.method, spec.level, spec.mu)?;
    if scenario.ue.points.is_empty() {
        return Err(SimError::Validation("static runs need at least one [ue] point".into()));
    }
    let env = Env::new(scenario, spec.level, spec.mu)?;
    let d = dims(scenario);
    let outputs = parallel_runs(spec, |run| -> Result<RunOutput, SimError> {
        let mut rng = run_rng(spec.seed, run);
        let mut out = RunOutput::default();
        for (i, p) in scenario.ue.points.iter().enumerate() {
            let truth = Position3D::from(*p);
            let vis = visibility(&env, &truth, &mut rng);
            let ms = epoch_measurements(&env, spec.method, &truth, &vis, &mut rng)?;
            let set = measurement_set(i as u64, 0.0, truth, ms);
            let fix = solve_nls(&set, &env.poses, &scenario.solver).ok();
            let accepted = fix.as_ref().is_some_and(|f| {
                scenario.residual_threshold_rad().is_none_or(|t| residual_nlos_filter(f, t).accept)
                    && scenario.filters.map.as_ref().is_none_or(|m| m.contains(&f.position))
            });
            let nlos = vis.los.iter().filter(|l| !**l).count();
            out.links += vis.los.len();
            out.nlos_links += nlos;
            out.records.push(EpochRecord {
                run,
                epoch: i,
                time_s: 0.0,
                truth,
                estimate: fix.as_ref().map(|f| f.position),
                error: fix.as_ref().map(|f| error_vec(&f.position, &truth, d)),
                accepted,
                measurements: set.len(),
                nlos_links: nlos,
            });
            out.sets.push(set);
        }
        Ok(out)
    })?;
    summarise(scenario, spec, "static", outputs)
}

fn trajectory(scenario: &Scenario, interval: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Position3D>, SimError> {
    match &scenario.ue.trajectory {
        Some(TrajectorySpec::Waypoints { waypoints, speed_mps }) => {
            let wp: Vec<Position3D> = waypoints.iter().map(|p| Position3D::from(*p)).collect();
            sample_waypoints(&wp, *speed_mps, interval)
        }
        Some(TrajectorySpec::RandomWalk { start, sigma, steps }) => {
            gen_random_walk_with(Position3D::from(*start), *sigma, *steps, rng)
        }
        None => Err(SimError::Validation("tracking runs need a [ue.trajectory]".into())),
    }
}

/// Snapshot fix used to (re)start a track. Only measurements the NLOS
/// policy would admit enter it, and a fix outside the deployment is refused.
fn track_fix(scenario: &Scenario, env: &Env, set: &MeasurementSet, policy: NlosPolicy, guess: Option<Position3D>) -> Option<Position3D> {
    let mut set = set.clone();
    if policy == NlosPolicy::Oracle {
        set.measurements.retain(|m| m.los);
    }
    let mut cfg = scenario.solver.clone();
    if let Some(g) = guess {
        cfg.init = InitPolicy::Fixed(g);
    }
    let fix = solve_nls(&set, &env.poses, &cfg).ok()?;
    let p = fix.position;
    (fix.converged && in_deployment(&env.poses, &p)).then_some(p)
}

/// True when `p` lies within the base-station bounding box grown by its own
/// diagonal (at least 50 m).
fn in_deployment(poses: &[crate::geometry::BasePose], p: &Position3D) -> bool {
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for b in poses {
        let v = b.position.to_vector();
        lo = lo.inf(&v);
        hi = hi.sup(&v);
    }
    let margin = (hi - lo).norm().max(50.0);
    let v = p.to_vector();
    v.iter().all(|x| x.is_finite()) && (0..2).all(|i| v[i] >= lo[i] - margin && v[i] <= hi[i] + margin)
}

fn new_track(scenario: &Scenario, env: &Env, start: Option<Position3D>, dt: f64) -> Result<TrackState, SimError> {
    let t = &scenario.tracking;
    let start = start.unwrap_or_else(|| {
        let n = env.poses.len() as f64;
        let c = env.poses.iter().fold(Vector3::zeros(), |a, p| a + p.position.to_vector()) / n;
        let z = match scenario.solver.dim {
            SolveDim::TwoD { z } => z,
            SolveDim::ThreeD => c.z,
        };
        Position3D::new(c.x, c.y, z)
    });
    let q = Vector3::from(t.q);
    Ok(match t.motion {
        MotionModel::RandomWalk => TrackState::random_walk(start, t.sigma0_m, q, dt)?,
        MotionModel::ConstantVelocity => TrackState::constant_velocity(start, t.sigma0_m, 2.0, q, dt)?,
    })
}

/// Holds the UE height fixed in 2D mode by zeroing its uncertainty.
fn pin_height(state: &mut TrackState, dim: SolveDim) {
    if let SolveDim::TwoD { z } = dim {
        state.x[2] = z;
        let n = state.dim();
        for j in 0..n {
            state.p[(2, j)] = 0.0;
            state.p[(j, 2)] = 0.0;
        }
        if state.dim() == 6 {
            state.x[5] = 0.0;
            for j in 0..n {
                state.p[(5, j)] = 0.0;
                state.p[(j, 5)] = 0.0;
            }
        }
    }
}

/// Tracking: the EKF runs sequentially along the trajectory of every run.
pub fn run_track_scenario(scenario: &Scenario, spec: &RunSpec) -> Result<MetricsReport, SimError> {
    spec.validate()?;
    scenario.check_run(spec.method, spec.level, spec.mu)?;
    let env = Env::new(scenario, spec.level, spec.mu)?;
    let dt = spec.interval_s.unwrap_or(scenario.tracking.interval_s);
    let policy = spec.nlos.unwrap_or(scenario.tracking.nlos);
    let d = dims(scenario);
    let outputs = parallel_runs(spec, |run| -> Result<RunOutput, SimError> {
        let mut rng = run_rng(spec.seed, run);
        let path = trajectory(scenario, dt, &mut rng)?;
        let mut out = RunOutput::default();
        let mut state: Option<TrackState> = None;
        let mut lost = 0usize;
        for (k, truth) in path.iter().enumerate() {
            let time = k as f64 * dt;
            let vis = visibility(&env, truth, &mut rng);
            let ms = epoch_measurements(&env, spec.method, truth, &vis, &mut rng)?;
            let set = measurement_set(k as u64, time, *truth, ms);
            let mut current = match state.take() {
                None => new_track(scenario, &env, track_fix(scenario, &env, &set, policy, None), dt)?,
                Some(s) if lost >= scenario.tracking.reinit_after.max(1) => {
                    match track_fix(scenario, &env, &set, policy, Some(s.position())) {
                        Some(p) => {
                            lost = 0;
                            new_track(scenario, &env, Some(p), dt)?
                        }
                        None => s,
                    }
                }
                Some(s) => s,
            };
            pin_height(&mut current, scenario.solver.dim);
            let position = match ekf_step_with(&current, &set, &env.poses, &scenario.solver.path_loss, policy) {
                Ok(o) => {
                    // Lock is considered lost while most of an epoch's
                    // measurements are turned away.
                    if !set.is_empty() && 2 * o.used.len() < set.len() {
                        lost += 1;
                    } else {
                        lost = 0;
                    }
                    let mut s = o.state;
                    pin_height(&mut s, scenario.solver.dim);
                    let p = s.position();
                    state = Some(s);
                    Some(p)
                }
                Err(_) => {
                    state = Some(current);
                    None
                }
            };
            let nlos = vis.los.iter().filter(|l| !**l).count();
            out.links += vis.los.len();
            out.nlos_links += nlos;
            out.records.push(EpochRecord {
                run,
                epoch: k,
                time_s: time,
                truth: *truth,
                estimate: position,
                error: position.map(|p| error_vec(&p, truth, d)),
                accepted: position.is_some(),
                measurements: set.len(),
                nlos_links: nlos,
            });
            out.sets.push(set);
        }
        Ok(out)
    })?;
    summarise(scenario, spec, "track", outputs)
}

fn summarise(
    scenario: &Scenario,
    spec: &RunSpec,
    mode: &str,
    outputs: Vec<Result<RunOutput, SimError>>,
) -> Result<MetricsReport, SimError> {
    let mut records = Vec::new();
    let mut sets = Vec::new();
    let (mut links, mut nlos_links) = (0usize, 0usize);
    let mut first_err = None;
    for o in outputs {
        match o {
            Ok(o) => {
                records.extend(o.records);
                sets.extend(o.sets);
                links += o.links;
                nlos_links += o.nlos_links;
            }
            Err(e) => {
                if matches!(e.exit_code(), 2) {
                    return Err(e);
                }
                first_err.get_or_insert(e);
            }
        }
    }
    let errors: Vec<Vec<f64>> = records.iter().filter(|r| r.accepted).filter_map(|r| r.error.clone()).collect();
    if errors.is_empty() {
        let why = first_err.map_or("no epoch produced a fix".to_string(), |e| e.to_string());
        return Err(SimError::AllRunsFailed(why));
    }
    let stats = compute_metrics(&errors)?;
    let failures = records.iter().filter(|r| r.estimate.is_none()).count();
    let with_fix = records.len() - failures;
    let rejected = records.iter().filter(|r| r.estimate.is_some() && !r.accepted).count();
    let samples: Vec<(f64, f64)> = errors.iter().map(|e| (e[0], e[1])).collect();
    let poses = scenario.poses();
    Ok(MetricsReport {
        scenario: scenario.name.clone(),
        mode: mode.to_string(),
        method: spec.method,
        level: spec.level,
        mu: spec.mu,
        runs: spec.runs,
        seed: spec.seed,
        dims: dims(scenario),
        epochs_total: records.len(),
        failures,
        rejected,
        rejected_fraction: if with_fix == 0 { 0.0 } else { rejected as f64 / with_fix as f64 },
        nlos_link_fraction: if links == 0 { 0.0 } else { nlos_links as f64 / links as f64 },
        stats,
        ellipse: error_ellipse_from_samples(&samples, 0.95).ok(),
        measurement_errors: measurement_errors(&sets, &poses, scenario),
        epochs: records,
    })
}

fn measurement_errors(
    sets: &[MeasurementSet],
    poses: &[crate::geometry::BasePose],
    scenario: &Scenario,
) -> BTreeMap<MeasurementKind, SigmaSummary> {
    let mut acc: BTreeMap<MeasurementKind, Vec<f64>> = BTreeMap::new();
    for set in sets {
        let Some(truth) = set.truth else { continue };
        let u = truth.to_vector();
        for m in &set.measurements {
            let Some(pose) = poses.iter().find(|p| p.id == m.bs_id) else { continue };
            let reference = m.ref_bs_id.and_then(|id| poses.iter().find(|p| p.id == id));
            let Ok(h) = model_value(m.kind, &u, pose, reference, &scenario.solver.path_loss) else { continue };
            acc.entry(m.kind).or_default().push(residual(m.kind, observation(m).0, h));
        }
    }
    acc.into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = if v.len() > 1 {
                v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (
                k,
                SigmaSummary {
                    count: v.len(),
                    mean,
                    std: var.sqrt(),
                },
            )
        })
        .collect()
}

/// Writes `report.json`, `errors.csv` (per-epoch series) and `cdf.csv`.
pub fn write_outputs(report: &MetricsReport, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(|e| SimError::Config(e.to_string()))?;
    json.push('\n');
    std::fs::write(dir.join("report.json"), json)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("errors.csv"))?);
    writeln!(
        f,
        "run,epoch,time_s,true_x,true_y,true_z,est_x,est_y,est_z,error_m,accepted,measurements,nlos_links"
    )?;
    for r in &report.epochs {
        let (ex, ey, ez) = r.estimate.map_or((String::new(), String::new(), String::new()), |p| {
            (p.x.to_string(), p.y.to_string(), p.z.to_string())
        });
        let err = r
            .error
            .as_ref()
            .map_or(String::new(), |e| e.iter().map(|v| v * v).sum::<f64>().sqrt().to_string());
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.run, r.epoch, r.time_s, r.truth.x, r.truth.y, r.truth.z, ex, ey, ez, err, r.accepted, r.measurements, r.nlos_links
        )?;
    }
    f.flush()?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("cdf.csv"))?);
    writeln!(f, "error_m,probability")?;
    for k in &report.stats.cdf {
        writeln!(f, "{},{}", k.error, k.prob)?;
    }
    f.flush()?;
    Ok(())
}
