//! Geometric-level measurement synthesis.
//!
//! Every generator evaluates the exact measurement model from the true
//! geometry and adds Gaussian noise drawn from a caller-owned RNG, plus an
//! NLOS perturbation when the link is flagged as blocked.

use crate::geometry::{true_geometry, wrap_angle, BasePose, GeometryError, Position3D, SPEED_OF_LIGHT};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Smallest standard deviation stored on a measurement. Noiseless
/// configurations still produce finite weights.
pub const SIGMA_FLOOR_S: f64 = 1e-12;
pub const SIGMA_FLOOR_RAD: f64 = 1e-6;
pub const SIGMA_FLOOR_DB: f64 = 1e-6;

/// Measured sigma_TDOA (m) for numerologies 0..=3 in the static outdoor test.
pub const CALIBRATED_SIGMA_TDOA_M: [f64; 4] = [5.99, 0.98, 0.58, 0.30];

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("at least 2 base stations are required, got {0}")]
    TooFewBaseStations(usize),
    #[error("reference base station {0} is not among the poses")]
    UnknownReference(u32),
    #[error("reply time must be non-negative, got {0}")]
    NegativeReplyTime(f64),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Tof,
    Tdoa,
    Rtt,
    AoaAz,
    AoaEl,
    Rss,
    AodAz,
    AodEl,
}

impl MeasurementKind {
    pub fn is_angle(self) -> bool {
        matches!(
            self,
            MeasurementKind::AoaAz | MeasurementKind::AoaEl | MeasurementKind::AodAz | MeasurementKind::AodEl
        )
    }

    pub fn is_timing(self) -> bool {
        matches!(self, MeasurementKind::Tof | MeasurementKind::Tdoa | MeasurementKind::Rtt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    /// Seconds, radians or dBm depending on `kind`.
    pub value: f64,
    pub sigma: f64,
    pub bs_id: u32,
    /// Reference base station of a TDOA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_bs_id: Option<u32>,
    /// Known reply time of an RTT, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_time: Option<f64>,
    pub los: bool,
}

impl Measurement {
    fn new(kind: MeasurementKind, value: f64, sigma: f64, bs_id: u32, los: bool) -> Self {
        Self {
            kind,
            value,
            sigma,
            bs_id,
            ref_bs_id: None,
            reply_time: None,
            los,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub epoch: u64,
    pub time_s: f64,
    pub measurements: Vec<Measurement>,
    /// True UE position, carried for evaluation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<Position3D>,
}

impl MeasurementSet {
    pub fn new(epoch: u64, time_s: f64) -> Self {
        Self {
            epoch,
            time_s,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn push(&mut self, m: Measurement) {
        self.measurements.push(m);
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("measurement sets always serialize")
    }
}

pub fn write_json_lines<W: Write>(mut w: W, sets: &[MeasurementSet]) -> Result<(), MeasurementError> {
    for s in sets {
        writeln!(w, "{}", s.to_json_line())?;
    }
    Ok(())
}

/// Reads one measurement set per non-empty line.
pub fn read_json_lines<R: BufRead>(r: R) -> Result<Vec<MeasurementSet>, MeasurementError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set = serde_json::from_str(&line).map_err(|e| MeasurementError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(set);
    }
    Ok(out)
}

/// Log-distance path loss `P0 - 10 alpha log10(d / d0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    pub p0_dbm: f64,
    pub d0_m: f64,
    pub alpha: f64,
}

impl Default for PathLoss {
    fn default() -> Self {
        Self {
            p0_dbm: -30.0,
            d0_m: 1.0,
            alpha: 2.0,
        }
    }
}

impl PathLoss {
    pub fn received_power(&self, d: f64) -> f64 {
        self.p0_dbm - 10.0 * self.alpha * (d / self.d0_m).log10()
    }
}

/// Distribution of the positive range excess on an NLOS link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NlosExcess {
    Exponential { mean_m: f64 },
    Fixed { meters: f64 },
}

impl NlosExcess {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NlosExcess::Exponential { mean_m } => {
                let e: f64 = Exp1.sample(rng);
                mean_m * e
            }
            NlosExcess::Fixed { meters } => meters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Time-of-flight standard deviation, seconds.
    pub sigma_tof: f64,
    pub sigma_aoa_az: f64,
    pub sigma_aoa_el: f64,
    pub sigma_aod_az: f64,
    pub sigma_aod_el: f64,
    pub sigma_rss: f64,
    pub nlos_excess: NlosExcess,
    /// Scale of the negative elevation bias on NLOS angle measurements.
    pub nlos_el_bias_sigma: f64,
    /// Extra azimuth spread on NLOS angle measurements (0 disables it).
    pub nlos_az_sigma: f64,
    pub path_loss: PathLoss,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::calibrated(1)
    }
}

impl NoiseModel {
    /// All standard deviations zero and no NLOS excess.
    pub fn noiseless() -> Self {
        Self {
            sigma_tof: 0.0,
            sigma_aoa_az: 0.0,
            sigma_aoa_el: 0.0,
            sigma_aod_az: 0.0,
            sigma_aod_el: 0.0,
            sigma_rss: 0.0,
            nlos_excess: NlosExcess::Fixed { meters: 0.0 },
            nlos_el_bias_sigma: 0.0,
            nlos_az_sigma: 0.0,
            path_loss: PathLoss::default(),
        }
    }

    /// Statistics matching the link-level results for numerology `mu`.
    ///
    /// Ranging uses `sigma_TOF * c = sigma_TDOA / sqrt(2)`. Numerologies
    /// above 3 have no measured value and scale the mu=3 figure by bandwidth.
    pub fn calibrated(mu: u8) -> Self {
        let sigma_tdoa = match mu {
            0..=3 => CALIBRATED_SIGMA_TDOA_M[mu as usize],
            _ => {
                let bw3 = 400.0;
                let bw = crate::grid5g::numerology_params(mu.min(6))
                    .map(|n| n.max_bandwidth_mhz)
                    .unwrap_or(bw3);
                CALIBRATED_SIGMA_TDOA_M[3] * bw3 / bw
            }
        };
        Self {
            sigma_tof: sigma_tdoa / std::f64::consts::SQRT_2 / SPEED_OF_LIGHT,
            sigma_aoa_az: 2.64f64.to_radians(),
            sigma_aoa_el: 1.55f64.to_radians(),
            sigma_aod_az: 4.01f64.to_radians(),
            sigma_aod_el: 0.57f64.to_radians(),
            sigma_rss: 4.0,
            nlos_excess: NlosExcess::Exponential { mean_m: 5.0 },
            nlos_el_bias_sigma: 3f64.to_radians(),
            nlos_az_sigma: 0.0,
            path_loss: PathLoss::default(),
        }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        let sigmas = [
            self.sigma_tof,
            self.sigma_aoa_az,
            self.sigma_aoa_el,
            self.sigma_aod_az,
            self.sigma_aod_el,
            self.sigma_rss,
            self.nlos_el_bias_sigma,
            self.nlos_az_sigma,
        ];
        if sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(MeasurementError::InvalidNoise("standard deviations must be finite and >= 0".into()));
        }
        let excess_ok = match self.nlos_excess {
            NlosExcess::Exponential { mean_m } => mean_m.is_finite() && mean_m >= 0.0,
            NlosExcess::Fixed { meters } => meters.is_finite() && meters >= 0.0,
        };
        if !excess_ok {
            return Err(MeasurementError::InvalidNoise("NLOS excess must be >= 0".into()));
        }
        let pl = &self.path_loss;
        if !(pl.alpha > 0.0 && pl.d0_m > 0.0 && pl.p0_dbm.is_finite()) {
            return Err(MeasurementError::InvalidNoise("path loss needs alpha > 0 and d0 > 0".into()));
        }
        Ok(())
    }

    /// Time-of-flight sigma expressed in meters.
    pub fn sigma_range_m(&self) -> f64 {
        self.sigma_tof * SPEED_OF_LIGHT
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// One-way time of flight with optional NLOS excess.
pub fn gen_tof<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    los: bool,
    rng: &mut R,
) -> Result<Measurement, MeasurementError> {
    let g = true_geometry(u, pose)?;
    let n = gauss(rng, noise.sigma_tof);
    let excess = if los { 0.0 } else { noise.nlos_excess.sample(rng) };
    let value = (g.distance + excess) / SPEED_OF_LIGHT + n;
    Ok(Measurement::new(
        MeasurementKind::Tof,
        value,
        noise.sigma_tof.max(SIGMA_FLOOR_S),
        pose.id,
        los,
    ))
}

/// Reference base station: highest quality, ties to the lowest id.
pub fn select_reference_bs(quality: &[(u32, f64)]) -> Result<u32, MeasurementError> {
    if quality.len() < 2 {
        return Err(MeasurementError::TooFewBaseStations(quality.len()));
    }
    let mut best = quality[0];
    for &(id, q) in &quality[1..] {
        if q > best.1 || (q == best.1 && id < best.0) {
            best = (id, q);
        }
    }
    Ok(best.0)
}

/// TDOAs of every base station against `reference`. All entries share the
/// reference TOF draw, so each has variance `2 sigma_TOF^2`.
pub fn gen_tdoa_set<R: Rng + ?Sized>(
    u: &Position3D,
    poses: &[BasePose],
    los: &[bool],
    noise: &NoiseModel,
    reference: u32,
    rng: &mut R,
) -> Result<Vec<Measurement>, MeasurementError> {
    if poses.len() < 2 {
        return Err(MeasurementError::TooFewBaseStations(poses.len()));
    }
    let ref_idx = poses
        .iter()
        .position(|p| p.id == reference)
        .ok_or(MeasurementError::UnknownReference(reference))?;
    let tofs = poses
        .iter()
        .zip(los)
        .map(|(p, l)| gen_tof(u, p, noise, *l, rng))
        .collect::<Result<Vec<_>, _>>()?;
    let reference_tof = &tofs[ref_idx];
    let sigma = (2.0f64).sqrt() * noise.sigma_tof;
    Ok(tofs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != ref_idx)
        .map(|(_, t)| Measurement {
            ref_bs_id: Some(reference),
            ..Measurement::new(
                MeasurementKind::Tdoa,
                t.value - reference_tof.value,
                sigma.max(SIGMA_FLOOR_S),
                t.bs_id,
                t.los && reference_tof.los,
            )
        })
        .collect())
}

/// Geometric time difference from an observed RSTD and the transmit-time
/// offset between the two base stations.
pub fn geometric_time_difference(rstd: f64, rtd: f64) -> f64 {
    rstd - rtd
}

/// Round-trip time. Each leg carries its own TOF noise (and NLOS excess).
pub fn gen_rtt<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    los: bool,
    reply_time: f64,
    rng: &mut R,
) -> Result<Measurement, MeasurementError> {
    if !(reply_time >= 0.0) {
        return Err(MeasurementError::NegativeReplyTime(reply_time));
    }
    let g = true_geometry(u, pose)?;
    let n_dl = gauss(rng, noise.sigma_tof);
    let n_ul = gauss(rng, noise.sigma_tof);
    let excess = if los {
        0.0
    } else {
        2.0 * noise.nlos_excess.sample(rng)
    };
    let value = (2.0 * g.distance + excess) / SPEED_OF_LIGHT + reply_time + n_dl + n_ul;
    Ok(Measurement {
        reply_time: Some(reply_time),
        ..Measurement::new(
            MeasurementKind::Rtt,
            value,
            (2.0f64.sqrt() * noise.sigma_tof).max(SIGMA_FLOOR_S),
            pose.id,
            los,
        )
    })
}

/// One-way delay recovered from an RTT with perfectly known reply time.
pub fn rtt_to_tof(m: &Measurement) -> f64 {
    (m.value - m.reply_time.unwrap_or(0.0)) / 2.0
}

fn angle_pair<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    los: bool,
    sigmas: (f64, f64),
    kinds: (MeasurementKind, MeasurementKind),
    rng: &mut R,
) -> Result<(Measurement, Measurement), MeasurementError> {
    let g = true_geometry(u, pose)?;
    let mut az = g.local_azimuth + gauss(rng, sigmas.0);
    let mut el = g.local_elevation + gauss(rng, sigmas.1);
    if !los {
        az += gauss(rng, noise.nlos_az_sigma);
        el -= gauss(rng, noise.nlos_el_bias_sigma).abs();
    }
    Ok((
        Measurement::new(kinds.0, wrap_angle(az), sigmas.0.max(SIGMA_FLOOR_RAD), pose.id, los),
        Measurement::new(kinds.1, wrap_angle(el), sigmas.1.max(SIGMA_FLOOR_RAD), pose.id, los),
    ))
}

/// Uplink angle of arrival in the array frame of `pose`.
pub fn gen_aoa<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    los: bool,
    rng: &mut R,
) -> Result<(Measurement, Measurement), MeasurementError> {
    angle_pair(
        u,
        pose,
        noise,
        los,
        (noise.sigma_aoa_az, noise.sigma_aoa_el),
        (MeasurementKind::AoaAz, MeasurementKind::AoaEl),
        rng,
    )
}

/// Downlink angle of departure drawn directly from the geometry. Beam-swept
/// AOD comes from the `beam` module instead.
pub fn gen_aod<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    los: bool,
    rng: &mut R,
) -> Result<(Measurement, Measurement), MeasurementError> {
    angle_pair(
        u,
        pose,
        noise,
        los,
        (noise.sigma_aod_az, noise.sigma_aod_el),
        (MeasurementKind::AodAz, MeasurementKind::AodEl),
        rng,
    )
}

pub fn gen_rss<R: Rng + ?Sized>(
    u: &Position3D,
    pose: &BasePose,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<Measurement, MeasurementError> {
    let g = true_geometry(u, pose)?;
    let value = noise.path_loss.received_power(g.distance) + gauss(rng, noise.sigma_rss);
    Ok(Measurement::new(
        MeasurementKind::Rss,
        value,
        noise.sigma_rss.max(SIGMA_FLOOR_DB),
        pose.id,
        true,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    fn pose(id: u32, x: f64, y: f64, z: f64) -> BasePose {
        BasePose::at(id, Position3D::new(x, y, z))
    }

    fn sample_var(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    }

    #[test]
    fn tof_noiseless_identity() {
        let m = gen_tof(
            &Position3D::new(299.792458, 0.0, 0.0),
            &pose(1, 0.0, 0.0, 0.0),
            &NoiseModel::noiseless(),
            true,
            &mut rng(),
        )
        .unwrap();
        assert_abs_diff_eq!(m.value, 1e-6, epsilon = 1e-18);
    }

    #[test]
    fn tof_fixed_nlos_excess() {
        let noise = NoiseModel {
            nlos_excess: NlosExcess::Fixed { meters: 3.0 },
            ..NoiseModel::noiseless()
        };
        let m = gen_tof(&Position3D::new(100.0, 0.0, 0.0), &pose(1, 0.0, 0.0, 0.0), &noise, false, &mut rng()).unwrap();
        assert_abs_diff_eq!(m.value, 103.0 / SPEED_OF_LIGHT, epsilon = 1e-18);
        assert!(!m.los);
    }

    #[test]
    fn calibration_targets() {
        assert_abs_diff_eq!(NoiseModel::calibrated(3).sigma_range_m() * 2f64.sqrt(), 0.30, epsilon = 1e-12);
        assert_abs_diff_eq!(NoiseModel::calibrated(1).sigma_range_m(), 0.98 / 2f64.sqrt(), epsilon = 1e-12);
        assert!(NoiseModel::calibrated(5).sigma_range_m() < NoiseModel::calibrated(3).sigma_range_m());
    }

    #[test]
    fn reference_selection() {
        assert_eq!(select_reference_bs(&[(1, 10.0), (2, 20.0), (3, 15.0)]).unwrap(), 2);
        assert_eq!(select_reference_bs(&[(1, 20.0), (2, 20.0)]).unwrap(), 1);
        assert_eq!(select_reference_bs(&[(4, 20.0), (2, 20.0), (3, 1.0)]).unwrap(), 2);
        assert!(select_reference_bs(&[(1, 0.0)]).is_err());
    }

    #[test]
    fn reference_selection_equal_distance_five_bs() {
        let u = Position3D::new(0.0, 0.0, 0.0);
        let noise = NoiseModel::noiseless();
        let poses: Vec<_> = (0..5)
            .map(|i| {
                let a = i as f64 * 2.0 * std::f64::consts::PI / 5.0;
                pose(10 - i, 50.0 * a.cos(), 50.0 * a.sin(), 0.0)
            })
            .collect();
        let q: Vec<_> = poses
            .iter()
            .map(|p| (p.id, gen_rss(&u, p, &noise, &mut rng()).unwrap().value))
            .collect();
        let min_id = poses.iter().map(|p| p.id).min().unwrap();
        // equal distances leave only floating-point differences in the quality
        let q: Vec<_> = q.iter().map(|(id, v)| (*id, (v * 1e9).round())).collect();
        assert_eq!(select_reference_bs(&q).unwrap(), min_id);
    }

    #[test]
    fn tdoa_examples() {
        let noise = NoiseModel::noiseless();
        let poses = [pose(1, -10.0, 0.0, 0.0), pose(2, 10.0, 0.0, 0.0)];
        let u = Position3D::new(0.0, 5.0, 0.0);
        let t = gen_tdoa_set(&u, &poses, &[true, true], &noise, 1, &mut rng()).unwrap();
        assert_eq!(t.len(), 1);
        assert_abs_diff_eq!(t[0].value, 0.0, epsilon = 1e-20);
        assert_eq!((t[0].bs_id, t[0].ref_bs_id), (2, Some(1)));

        let poses = [pose(1, 0.0, 0.0, 0.0), pose(2, 250.0, 0.0, 0.0)];
        let u = Position3D::new(50.0, 0.0, 0.0);
        let t = gen_tdoa_set(&u, &poses, &[true, true], &noise, 1, &mut rng()).unwrap();
        assert_abs_diff_eq!(t[0].value, 150.0 / SPEED_OF_LIGHT, epsilon = 1e-18);
        assert!((t[0].value * 1e6 - 0.5003).abs() < 5e-5);
        assert!(matches!(
            gen_tdoa_set(&u, &poses, &[true, true], &noise, 9, &mut rng()),
            Err(MeasurementError::UnknownReference(9))
        ));
    }

    #[test]
    fn tdoa_variance_is_twice_tof_variance() {
        let noise = NoiseModel {
            sigma_tof: 1e-9,
            ..NoiseModel::noiseless()
        };
        let poses = [pose(1, 0.0, 0.0, 0.0), pose(2, 100.0, 0.0, 0.0)];
        let u = Position3D::new(30.0, 40.0, 0.0);
        let mut r = rng();
        let vals: Vec<f64> = (0..100_000)
            .map(|_| gen_tdoa_set(&u, &poses, &[true, true], &noise, 1, &mut r).unwrap()[0].value)
            .collect();
        let ratio = sample_var(&vals) / 1e-18;
        assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn tdoa_set_shares_reference() {
        let poses: Vec<_> = (1..=5).map(|i| pose(i, i as f64 * 30.0, 10.0, 0.0)).collect();
        let t = gen_tdoa_set(
            &Position3D::new(0.0, 0.0, 0.0),
            &poses,
            &[true; 5],
            &NoiseModel::calibrated(1),
            3,
            &mut rng(),
        )
        .unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|m| m.ref_bs_id == Some(3) && m.bs_id != 3));
    }

    #[test]
    fn rtt_examples() {
        let noise = NoiseModel::noiseless();
        let u = Position3D::new(150.0, 0.0, 0.0);
        let p = pose(1, 0.0, 0.0, 0.0);
        let m = gen_rtt(&u, &p, &noise, true, 100e-6, &mut rng()).unwrap();
        assert_abs_diff_eq!(m.value, 100e-6 + 300.0 / SPEED_OF_LIGHT, epsilon = 1e-18);
        assert!((m.value * 1e6 - 101.0007).abs() < 5e-5);
        let m = gen_rtt(&u, &p, &noise, true, 0.0, &mut rng()).unwrap();
        assert_abs_diff_eq!(m.value, 300.0 / SPEED_OF_LIGHT, epsilon = 1e-18);
        assert!(gen_rtt(&u, &p, &noise, true, -1e-6, &mut rng()).is_err());
    }

    #[test]
    fn rtt_extracted_delay_variance() {
        let sigma = 1e-9;
        let noise = NoiseModel {
            sigma_tof: sigma,
            ..NoiseModel::noiseless()
        };
        let u = Position3D::new(150.0, 0.0, 0.0);
        let p = pose(1, 0.0, 0.0, 0.0);
        let mut r = rng();
        let vals: Vec<f64> = (0..100_000)
            .map(|_| rtt_to_tof(&gen_rtt(&u, &p, &noise, true, 50e-6, &mut r).unwrap()))
            .collect();
        let ratio = sample_var(&vals) / (sigma * sigma / 2.0);
        assert!((0.95..=1.05).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn aoa_examples() {
        let noise = NoiseModel::noiseless();
        let u = Position3D::new(10.0, 0.0, 0.0);
        let (az, el) = gen_aoa(&u, &pose(1, 0.0, 0.0, 0.0), &noise, true, &mut rng()).unwrap();
        assert_abs_diff_eq!(az.value, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(el.value, 0.0, epsilon = 1e-15);
        let yawed = pose(1, 0.0, 0.0, 0.0).with_orientation(crate::geometry::ArrayOrientation::from_degrees(30.0, 0.0, 0.0));
        let (az, _) = gen_aoa(&u, &yawed, &noise, true, &mut rng()).unwrap();
        assert_abs_diff_eq!(az.value, (-30f64).to_radians(), epsilon = 1e-12);
    }

    #[test]
    fn nlos_elevation_is_negatively_biased() {
        let noise = NoiseModel::calibrated(1);
        let u = Position3D::new(40.0, 30.0, 1.5);
        let p = pose(1, 0.0, 0.0, 25.0);
        let mut r = rng();
        let mean = |los: bool, r: &mut ChaCha8Rng| {
            (0..10_000)
                .map(|_| gen_aoa(&u, &p, &noise, los, r).unwrap().1.value)
                .sum::<f64>()
                / 10_000.0
        };
        let los = mean(true, &mut r);
        let nlos = mean(false, &mut r);
        assert!(nlos < los, "{nlos} !< {los}");
    }

    #[test]
    fn nlos_excess_is_nonnegative() {
        let excess = NlosExcess::Exponential { mean_m: 5.0 };
        let mut r = rng();
        let min = (0..100_000).map(|_| excess.sample(&mut r)).fold(f64::INFINITY, f64::min);
        assert!(min >= 0.0);
    }

    #[test]
    fn rss_examples() {
        let noise = NoiseModel::noiseless();
        let p = pose(1, 0.0, 0.0, 0.0);
        let pl = noise.path_loss;
        let at = |d: f64| gen_rss(&Position3D::new(d, 0.0, 0.0), &p, &noise, &mut rng()).unwrap().value;
        assert_abs_diff_eq!(at(pl.d0_m), pl.p0_dbm, epsilon = 1e-12);
        assert_abs_diff_eq!(at(10.0 * pl.d0_m), pl.p0_dbm - 20.0, epsilon = 1e-12);
        let sweep: Vec<f64> = (1..50).map(|d| at(d as f64)).collect();
        assert!(sweep.windows(2).all(|w| w[1] < w[0]));
        assert!(gen_rss(&Position3D::new(0.0, 0.0, 0.0), &p, &noise, &mut rng()).is_err());
    }

    #[test]
    fn gtd_identity() {
        assert_abs_diff_eq!(geometric_time_difference(5e-7, 2e-7), 3e-7, epsilon = 1e-20);
    }

    #[test]
    fn generation_is_reproducible_and_roundtrips() {
        let poses: Vec<_> = (1..=4).map(|i| pose(i, i as f64 * 40.0, (i * i) as f64, 20.0)).collect();
        let u = Position3D::new(12.0, -7.0, 1.5);
        let gen = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let mut set = MeasurementSet::new(0, 0.0);
            set.truth = Some(u);
            let noise = NoiseModel::calibrated(1);
            set.measurements = gen_tdoa_set(&u, &poses, &[true, false, true, true], &noise, 1, &mut r).unwrap();
            set.push(gen_rtt(&u, &poses[1], &noise, true, 1e-5, &mut r).unwrap());
            set
        };
        let a = gen(3);
        assert_eq!(a, gen(3));
        assert_ne!(a, gen(4));
        let mut buf = Vec::new();
        write_json_lines(&mut buf, &[a.clone(), gen(4)]).unwrap();
        let back = read_json_lines(buf.as_slice()).unwrap();
        assert_eq!(back[0], a);
        assert_eq!(back.len(), 2);
    }
}
