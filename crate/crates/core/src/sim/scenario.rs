use super::SimError;
use crate::beam::BeamSpec;
use crate::estimators::{MapConstraint, MotionModel, NlosPolicy, SolverConfig};
use crate::geometry::{AntennaTuple, ArrayOrientation, BasePose, ObstacleSet, Polygon, Position3D};
use crate::grid5g::numerology_params;
use crate::measurements::{NlosExcess, NoiseModel, PathLoss};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DlTdoa,
    MultiRtt,
    UlAoa,
    DlAod,
    Fused,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::DlTdoa, Method::MultiRtt, Method::UlAoa, Method::DlAod, Method::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Method::DlTdoa => "dl_tdoa",
            Method::MultiRtt => "multi_rtt",
            Method::UlAoa => "ul_aoa",
            Method::DlAod => "dl_aod",
            Method::Fused => "fused",
        }
    }
}

impl FromStr for Method {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SimError::Validation(format!("unknown method `{s}`")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Geometric,
    Linklevel,
}

impl FromStr for Level {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(Level::Geometric),
            "linklevel" => Ok(Level::Linklevel),
            _ => Err(SimError::Validation(format!("unknown level `{s}`"))),
        }
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Geometric => "geometric",
            Level::Linklevel => "linklevel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsSpec {
    pub id: u32,
    pub position: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default)]
    pub antenna: Option<AntennaTuple>,
}

fn default_tx_power() -> f64 {
    33.0
}

impl BsSpec {
    pub fn pose(&self) -> BasePose {
        let mut p = BasePose::at(self.id, Position3D::from(self.position))
            .with_orientation(ArrayOrientation::from_degrees(self.yaw_deg, 0.0, self.roll_deg));
        p.tx_power_dbm = self.tx_power_dbm;
        if let Some(a) = self.antenna {
            p = p.with_antenna(a);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfSpec {
    pub carrier_ghz: f64,
    /// Resource blocks of the positioning signals; defaults to the widest
    /// carrier allowed at the run numerology.
    pub n_rb: Option<u32>,
    pub n_fft: Option<usize>,
    pub oversampling: usize,
    pub noise_figure_db: f64,
    pub antenna_temp_k: f64,
    pub ue_tx_power_dbm: f64,
    /// Known UE processing delay of an RTT, seconds.
    pub reply_time_s: f64,
    /// Base stations farther than this are not heard.
    pub max_range_m: Option<f64>,
    pub max_bounces: u8,
    pub music_step_deg: f64,
}

impl Default for RfSpec {
    fn default() -> Self {
        Self {
            carrier_ghz: 3.5,
            n_rb: None,
            n_fft: None,
            oversampling: 1,
            noise_figure_db: 7.0,
            antenna_temp_k: 290.0,
            ue_tx_power_dbm: 23.0,
            reply_time_s: 1e-4,
            max_range_m: None,
            max_bounces: 1,
            music_step_deg: 1.0,
        }
    }
}

/// Widest PRS allocation per numerology (RBs).
const DEFAULT_N_RB: [u32; 7] = [270, 273, 264, 264, 264, 264, 264];

impl RfSpec {
    pub fn n_rb(&self, mu: u8) -> u32 {
        self.n_rb.unwrap_or(DEFAULT_N_RB[(mu as usize).min(6)])
    }

    pub fn n_fft(&self, mu: u8) -> usize {
        self.n_fft.unwrap_or_else(|| (12 * self.n_rb(mu) as usize).next_power_of_two().max(64))
    }
}

/// Noise overrides on top of the per-numerology calibrated model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Start from the calibrated model of the run numerology; otherwise
    /// from a noiseless model.
    pub calibrated: bool,
    pub sigma_range_m: Option<f64>,
    pub sigma_aoa_az_deg: Option<f64>,
    pub sigma_aoa_el_deg: Option<f64>,
    pub sigma_aod_az_deg: Option<f64>,
    pub sigma_aod_el_deg: Option<f64>,
    pub sigma_rss_db: Option<f64>,
    pub nlos_excess: Option<NlosExcess>,
    pub nlos_el_bias_deg: Option<f64>,
    pub nlos_az_deg: Option<f64>,
    pub path_loss: Option<PathLoss>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            calibrated: true,
            sigma_range_m: None,
            sigma_aoa_az_deg: None,
            sigma_aoa_el_deg: None,
            sigma_aod_az_deg: None,
            sigma_aod_el_deg: None,
            sigma_rss_db: None,
            nlos_excess: None,
            nlos_el_bias_deg: None,
            nlos_az_deg: None,
            path_loss: None,
        }
    }
}

impl NoiseSpec {
    pub fn model(&self, mu: u8) -> Result<NoiseModel, SimError> {
        let mut m = if self.calibrated {
            NoiseModel::calibrated(mu)
        } else {
            NoiseModel::noiseless()
        };
        if let Some(v) = self.sigma_range_m {
            m.sigma_tof = v / crate::geometry::SPEED_OF_LIGHT;
        }
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v.to_radians();
            }
        };
        set(&mut m.sigma_aoa_az, self.sigma_aoa_az_deg);
        set(&mut m.sigma_aoa_el, self.sigma_aoa_el_deg);
        set(&mut m.sigma_aod_az, self.sigma_aod_az_deg);
        set(&mut m.sigma_aod_el, self.sigma_aod_el_deg);
        set(&mut m.nlos_el_bias_sigma, self.nlos_el_bias_deg);
        set(&mut m.nlos_az_sigma, self.nlos_az_deg);
        if let Some(v) = self.sigma_rss_db {
            m.sigma_rss = v;
        }
        if let Some(e) = self.nlos_excess {
            m.nlos_excess = e;
        }
        if let Some(p) = self.path_loss {
            m.path_loss = p;
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    Waypoints { waypoints: Vec<[f64; 3]>, speed_mps: f64 },
    /// Regenerated for every Monte-Carlo run from the run seed.
    RandomWalk { start: [f64; 3], sigma: [f64; 3], steps: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UeSpec {
    pub points: Vec<[f64; 3]>,
    pub trajectory: Option<TrajectorySpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingSpec {
    pub interval_s: f64,
    pub sigma0_m: f64,
    /// Random-walk variance per epoch, or acceleration density for the
    /// constant-velocity model.
    pub q: [f64; 3],
    pub motion: MotionModel,
    pub nlos: NlosPolicy,
    /// Re-initialise from a snapshot fix after this many consecutive
    /// epochs in which most measurements were rejected.
    pub reinit_after: usize,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        Self {
            interval_s: 0.7134,
            sigma0_m: 5.0,
            q: [0.25, 0.25, 0.01],
            motion: MotionModel::RandomWalk,
            nlos: NlosPolicy::None,
            reinit_after: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSpec {
    pub residual_threshold_deg: Option<f64>,
    pub map: Option<MapConstraint>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilitySpec {
    /// Probability that an unobstructed link is nonetheless NLOS in an epoch.
    pub extra_nlos_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusedSpec {
    pub components: Vec<Method>,
}

impl Default for FusedSpec {
    fn default() -> Self {
        Self {
            components: vec![Method::DlTdoa, Method::UlAoa],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub rf: RfSpec,
    pub bs: Vec<BsSpec>,
    #[serde(default)]
    pub obstacle: Vec<Polygon>,
    #[serde(default)]
    pub ue: UeSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub tracking: TrackingSpec,
    #[serde(default)]
    pub filters: FilterSpec,
    #[serde(default)]
    pub visibility: VisibilitySpec,
    #[serde(default)]
    pub fused: FusedSpec,
    #[serde(default)]
    pub beam: Option<BeamSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.bs.is_empty() {
            return Err(SimError::Validation("scenario has no base stations".into()));
        }
        let mut ids: Vec<u32> = self.bs.iter().map(|b| b.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SimError::Validation("duplicate base station id".into()));
        }
        for b in &self.bs {
            if !Position3D::from(b.position).is_finite() {
                return Err(SimError::Validation(format!("base station {} has a non-finite position", b.id)));
            }
            if let Some(a) = b.antenna {
                a.validate().map_err(|e| SimError::Validation(e.to_string()))?;
            }
        }
        if !(self.rf.carrier_ghz > 0.0) || self.rf.oversampling == 0 || !(self.rf.music_step_deg > 0.0) {
            return Err(SimError::Validation("rf carrier, oversampling and MUSIC step must be positive".into()));
        }
        if !(self.tracking.interval_s > 0.0) || !(self.tracking.sigma0_m > 0.0) || self.tracking.q.iter().any(|q| !(*q >= 0.0)) {
            return Err(SimError::Validation("tracking interval and sigma0 must be positive and q non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.visibility.extra_nlos_prob) {
            return Err(SimError::Validation("extra_nlos_prob must lie in [0, 1]".into()));
        }
        if self.fused.components.is_empty() || self.fused.components.contains(&Method::Fused) {
            return Err(SimError::Validation("fused components must be a non-empty list of base methods".into()));
        }
        self.solver.validate()?;
        if let Some(b) = &self.beam {
            b.book()?;
        }
        Ok(())
    }

    pub fn poses(&self) -> Vec<BasePose> {
        self.bs.iter().map(BsSpec::pose).collect()
    }

    pub fn obstacles(&self) -> ObstacleSet {
        ObstacleSet::new(self.obstacle.clone())
    }

    /// Checks that `method` at `level` and numerology `mu` can run here.
    pub fn check_run(&self, method: Method, level: Level, mu: u8) -> Result<(), SimError> {
        numerology_params(mu)?;
        self.noise.model(mu)?;
        let methods: Vec<Method> = match method {
            Method::Fused => self.fused.components.clone(),
            m => vec![m],
        };
        for m in methods {
            match m {
                Method::DlTdoa if self.bs.len() < 2 => {
                    return Err(SimError::Validation("dl_tdoa needs at least two base stations".into()));
                }
                Method::DlAod if level == Level::Linklevel && self.beam.is_none() => {
                    return Err(SimError::Validation("link-level dl_aod needs a [beam] section".into()));
                }
                _ => {}
            }
        }
        if level == Level::Linklevel {
            let bw = crate::grid5g::bandwidth(self.rf.n_rb(mu), mu)?;
            let fs = numerology_params(mu)?.scs_hz() * self.rf.n_fft(mu) as f64;
            if bw > fs {
                return Err(SimError::Validation(format!(
                    "{} RBs do not fit an FFT of {} at mu={mu}",
                    self.rf.n_rb(mu),
                    self.rf.n_fft(mu)
                )));
            }
        }
        Ok(())
    }

    pub fn residual_threshold_rad(&self) -> Option<f64> {
        self.filters.residual_threshold_deg.map(f64::to_radians)
    }
}
