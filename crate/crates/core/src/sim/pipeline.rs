//! Per-epoch measurement synthesis for every method and level.

use super::scenario::{Level, Method, Scenario};
use super::SimError;
use crate::beam::{p1_acquire, p2_refine, BeamBook, BeamError, BeamNoise};
use crate::geometry::{los_check, wrap_angle, BasePose, ObstacleSet, Position3D, SPEED_OF_LIGHT};
use crate::grid5g::{bandwidth, map_to_grid, numerology_params, PrsConfig, SignalConfig, SlotSpan, SrsConfig};
use crate::linklevel::{
    add_awgn, apply_channel, music_aoa, noise_power, ofdm_modulate, srs_snapshots, ChannelConfig, LinkError, MusicGrid,
    OfdmWaveform, Path, TapChannel, ToaConfig, ToaEstimator, UniformRectArray,
};
use crate::measurements::{
    gen_aoa, gen_aod, gen_rtt, gen_tdoa_set, gen_tof, select_reference_bs, Measurement, MeasurementKind, MeasurementSet,
    NoiseModel, SIGMA_FLOOR_RAD, SIGMA_FLOOR_S,
};
use num_complex::Complex64;
use rand::Rng;

/// NLOS links are ranked this much lower when picking the TDOA reference.
const NLOS_PENALTY_DB: f64 = 20.0;

struct CellWave {
    id: u32,
    tx: OfdmWaveform,
    estimator: ToaEstimator,
}

/// Waveforms and constants shared by every link-level epoch of a run set.
pub(crate) struct LinkCache {
    cells: Vec<CellWave>,
    bandwidth_hz: f64,
    srs_freqs: Vec<f64>,
    srs_symbols: Vec<Complex64>,
    scs_hz: f64,
}

impl LinkCache {
    fn build(scenario: &Scenario, poses: &[BasePose], mu: u8) -> Result<Self, SimError> {
        let n_rb = scenario.rf.n_rb(mu);
        let n_fft = scenario.rf.n_fft(mu);
        let os = scenario.rf.oversampling;
        let mut cells = Vec::with_capacity(poses.len());
        for p in poses {
            let prs = PrsConfig {
                re_offset: p.id % 12,
                ..PrsConfig::positioning_default(p.id, mu, n_rb)
            };
            let grid = map_to_grid(&[SignalConfig::Prs(prs)], SlotSpan::new(0, 1), mu)?;
            let reference = ofdm_modulate(&grid, mu, n_fft, os)?;
            let estimator = ToaEstimator::new(&reference)?;
            let scale = (dbm_to_w(p.tx_power_dbm) / reference.mean_power()).sqrt();
            let mut tx = reference;
            tx.samples.iter_mut().for_each(|s| *s *= scale);
            cells.push(CellWave { id: p.id, tx, estimator });
        }
        let srs = SrsConfig {
            m_srs: (n_rb / 4 * 4).max(4),
            ..SrsConfig::positioning_default(0)
        };
        let grid = map_to_grid(&[SignalConfig::Srs(srs.clone())], SlotSpan::new(0, 1), mu)?;
        let scs_hz = numerology_params(mu)?.scs_hz();
        let (srs_freqs, srs_symbols) = grid
            .iter()
            .filter(|(k, _)| k.symbol == srs.start_symbol)
            .map(|(k, re)| (k.subcarrier as f64 * scs_hz, re.value))
            .unzip();
        Ok(Self {
            cells,
            bandwidth_hz: bandwidth(n_rb, mu)?,
            srs_freqs,
            srs_symbols,
            scs_hz,
        })
    }
}

fn dbm_to_w(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Everything an epoch needs that does not change between epochs.
pub(crate) struct Env<'a> {
    pub scenario: &'a Scenario,
    pub poses: Vec<BasePose>,
    pub obstacles: ObstacleSet,
    pub noise: NoiseModel,
    pub level: Level,
    pub book: Option<BeamBook>,
    pub beam_noise: BeamNoise,
    link: Option<LinkCache>,
    channel: ChannelConfig,
}

impl<'a> Env<'a> {
    pub fn new(scenario: &'a Scenario, level: Level, mu: u8) -> Result<Self, SimError> {
        let poses = scenario.poses();
        let link = match level {
            Level::Linklevel => Some(LinkCache::build(scenario, &poses, mu)?),
            Level::Geometric => None,
        };
        let book = scenario.beam.as_ref().map(|b| b.book()).transpose()?;
        Ok(Self {
            poses,
            obstacles: scenario.obstacles(),
            noise: scenario.noise.model(mu)?,
            level,
            beam_noise: scenario.beam.as_ref().map(|b| b.noise()).unwrap_or_default(),
            book,
            link,
            channel: ChannelConfig {
                carrier_hz: scenario.rf.carrier_ghz * 1e9,
                max_bounces: scenario.rf.max_bounces,
                ..ChannelConfig::default()
            },
            scenario,
        })
    }

    fn heard(&self, ue: &Position3D) -> Vec<usize> {
        (0..self.poses.len())
            .filter(|&i| {
                let d = self.poses[i].position.distance(ue);
                d > 0.0 && self.scenario.rf.max_range_m.is_none_or(|r| d <= r)
            })
            .collect()
    }

    fn channel(&self, tx: &Position3D, rx: &Position3D) -> Result<TapChannel, SimError> {
        Ok(TapChannel::from_geometry(tx, rx, &self.obstacles, &self.channel)?)
    }
}

/// Link visibility of one epoch: indices of the heard base stations and
/// their LOS flags.
pub(crate) struct Visibility {
    pub heard: Vec<usize>,
    pub los: Vec<bool>,
}

pub(crate) fn visibility<R: Rng + ?Sized>(env: &Env, ue: &Position3D, rng: &mut R) -> Visibility {
    let heard = env.heard(ue);
    let p = env.scenario.visibility.extra_nlos_prob;
    let los = heard
        .iter()
        .map(|&i| {
            let clear = los_check(ue, &env.poses[i].position, &env.obstacles);
            let extra = p > 0.0 && rng.random_bool(p);
            clear && !extra
        })
        .collect();
    Visibility { heard, los }
}

pub(crate) fn epoch_measurements<R: Rng + ?Sized>(
    env: &Env,
    method: Method,
    ue: &Position3D,
    vis: &Visibility,
    rng: &mut R,
) -> Result<Vec<Measurement>, SimError> {
    let methods = match method {
        Method::Fused => env.scenario.fused.components.clone(),
        m => vec![m],
    };
    let mut out = Vec::new();
    for m in methods {
        out.extend(match m {
            Method::DlTdoa => tdoa(env, ue, vis, rng)?,
            Method::MultiRtt => rtt(env, ue, vis, rng)?,
            Method::UlAoa => aoa(env, ue, vis, rng)?,
            Method::DlAod => aod(env, ue, vis, rng)?,
            Method::Fused => unreachable!("fused components are validated"),
        });
    }
    Ok(out)
}

/// One-way delay of every heard link, paired with the pose index.
fn tofs<R: Rng + ?Sized>(env: &Env, ue: &Position3D, vis: &Visibility, rng: &mut R) -> Result<Vec<(usize, Measurement)>, SimError> {
    let mut out = Vec::new();
    for (&i, &los) in vis.heard.iter().zip(&vis.los) {
        let pose = &env.poses[i];
        match env.level {
            Level::Geometric => out.push((i, gen_tof(ue, pose, &env.noise, los, rng)?)),
            Level::Linklevel => {
                if let Some((t, los)) = link_tof(env, pose, ue, rng)? {
                    out.push((
                        i,
                        Measurement {
                            kind: MeasurementKind::Tof,
                            value: t,
                            sigma: env.noise.sigma_tof.max(SIGMA_FLOOR_S),
                            bs_id: pose.id,
                            ref_bs_id: None,
                            reply_time: None,
                            los,
                        },
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// PRS through the geometric multipath channel, thermal noise at the UE and
/// first-peak correlation. `None` when nothing reaches the UE.
fn link_tof<R: Rng + ?Sized>(env: &Env, pose: &BasePose, ue: &Position3D, rng: &mut R) -> Result<Option<(f64, bool)>, SimError> {
    let cache = env.link.as_ref().expect("link cache exists at link level");
    let cell = cache.cells.iter().find(|c| c.id == pose.id).expect("one cell per pose");
    let ch = env.channel(&pose.position, ue)?;
    if ch.paths.is_empty() {
        return Ok(None);
    }
    let rx = apply_channel(&cell.tx, &ch)?;
    let rx = add_awgn(
        &rx,
        cache.bandwidth_hz,
        env.scenario.rf.noise_figure_db,
        env.scenario.rf.antenna_temp_k,
        rng,
    )?;
    let max_range = env.scenario.rf.max_range_m.unwrap_or(3000.0) + 500.0;
    let cfg = ToaConfig {
        max_delay: Some(max_range / SPEED_OF_LIGHT),
        ..ToaConfig::default()
    };
    match cell.estimator.estimate(&rx, &cfg) {
        Ok(t) => Ok(Some((t, ch.has_los()))),
        Err(LinkError::DetectionFailure) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn tdoa<R: Rng + ?Sized>(env: &Env, ue: &Position3D, vis: &Visibility, rng: &mut R) -> Result<Vec<Measurement>, SimError> {
    if vis.heard.len() < 2 {
        return Ok(Vec::new());
    }
    let quality: Vec<(u32, f64)> = vis
        .heard
        .iter()
        .zip(&vis.los)
        .map(|(&i, &los)| {
            let p = &env.poses[i];
            let q = env.noise.path_loss.received_power(p.position.distance(ue)) + p.tx_power_dbm;
            (p.id, if los { q } else { q - NLOS_PENALTY_DB })
        })
        .collect();
    let reference = select_reference_bs(&quality)?;
    match env.level {
        Level::Geometric => {
            let poses: Vec<BasePose> = vis.heard.iter().map(|&i| env.poses[i].clone()).collect();
            Ok(gen_tdoa_set(ue, &poses, &vis.los, &env.noise, reference, rng)?)
        }
        Level::Linklevel => {
            let t = tofs(env, ue, vis, rng)?;
            let Some((_, r)) = t.iter().find(|(i, _)| env.poses[*i].id == reference).cloned() else {
                return Ok(Vec::new());
            };
            Ok(t.iter()
                .filter(|(_, m)| m.bs_id != reference)
                .map(|(_, m)| Measurement {
                    kind: MeasurementKind::Tdoa,
                    value: m.value - r.value,
                    sigma: (2f64.sqrt() * env.noise.sigma_tof).max(SIGMA_FLOOR_S),
                    ref_bs_id: Some(reference),
                    los: m.los && r.los,
                    ..m.clone()
                })
                .collect())
        }
    }
}

fn rtt<R: Rng + ?Sized>(env: &Env, ue: &Position3D, vis: &Visibility, rng: &mut R) -> Result<Vec<Measurement>, SimError> {
    let reply = env.scenario.rf.reply_time_s;
    match env.level {
        Level::Geometric => vis
            .heard
            .iter()
            .zip(&vis.los)
            .map(|(&i, &los)| Ok(gen_rtt(ue, &env.poses[i], &env.noise, los, reply, rng)?))
            .collect(),
        Level::Linklevel => {
            let dl = tofs(env, ue, vis, rng)?;
            let ul = tofs(env, ue, vis, rng)?;
            Ok(dl
                .iter()
                .filter_map(|(i, d)| ul.iter().find(|(j, _)| j == i).map(|(_, u)| (d, u)))
                .map(|(d, u)| Measurement {
                    kind: MeasurementKind::Rtt,
                    value: d.value + u.value + reply,
                    sigma: (2f64.sqrt() * env.noise.sigma_tof).max(SIGMA_FLOOR_S),
                    reply_time: Some(reply),
                    ..d.clone()
                })
                .collect())
        }
    }
}

fn aoa<R: Rng + ?Sized>(env: &Env, ue: &Position3D, vis: &Visibility, rng: &mut R) -> Result<Vec<Measurement>, SimError> {
    let mut out = Vec::new();
    for (&i, &los) in vis.heard.iter().zip(&vis.los) {
        let pose = &env.poses[i];
        match env.level {
            Level::Geometric => {
                let (az, el) = gen_aoa(ue, pose, &env.noise, los, rng)?;
                out.extend([az, el]);
            }
            Level::Linklevel => out.extend(link_aoa(env, pose, ue, rng)?),
        }
    }
    Ok(out)
}

/// MUSIC on one SRS symbol received by the base-station array.
fn link_aoa<R: Rng + ?Sized>(env: &Env, pose: &BasePose, ue: &Position3D, rng: &mut R) -> Result<Vec<Measurement>, SimError> {
    let cache = env.link.as_ref().expect("link cache exists at link level");
    let ch = env.channel(ue, &pose.position)?;
    if ch.paths.is_empty() {
        return Ok(Vec::new());
    }
    let n_re = cache.srs_freqs.len().max(1) as f64;
    let amp = (dbm_to_w(env.scenario.rf.ue_tx_power_dbm) / n_re).sqrt();
    let local: Vec<Path> = ch
        .paths
        .iter()
        .map(|p| Path {
            gain: p.gain * amp,
            arrival: (
                wrap_angle(p.arrival.0 - pose.orientation.yaw),
                wrap_angle(p.arrival.1 - pose.orientation.roll),
            ),
            ..*p
        })
        .collect();
    let array = UniformRectArray::from_tuple(&pose.antenna);
    let noise_var = noise_power(cache.scs_hz, env.scenario.rf.noise_figure_db, env.scenario.rf.antenna_temp_k);
    let snap = srs_snapshots(&array, &local, &cache.srs_freqs, &cache.srs_symbols, noise_var, rng);
    let grid = MusicGrid::degrees((-85.0, 85.0), (-30.0, 85.0), env.scenario.rf.music_step_deg);
    let res = music_aoa(&snap, 1, &grid)?;
    let los = ch.has_los();
    let m = |kind, value: f64, sigma: f64| Measurement {
        kind,
        value,
        sigma: sigma.max(SIGMA_FLOOR_RAD),
        bs_id: pose.id,
        ref_bs_id: None,
        reply_time: None,
        los,
    };
    Ok(vec![
        m(MeasurementKind::AoaAz, res.az, env.noise.sigma_aoa_az),
        m(MeasurementKind::AoaEl, res.el, env.noise.sigma_aoa_el),
    ])
}

fn aod<R: Rng + ?Sized>(env: &Env, ue: &Position3D, vis: &Visibility, rng: &mut R) -> Result<Vec<Measurement>, SimError> {
    let mut out = Vec::new();
    for (&i, &los) in vis.heard.iter().zip(&vis.los) {
        let pose = &env.poses[i];
        match env.book.as_ref().filter(|_| env.level == Level::Linklevel) {
            None => {
                let (az, el) = gen_aod(ue, pose, &env.noise, los, rng)?;
                out.extend([az, el]);
            }
            Some(book) => {
                let ch = env.channel(&pose.position, ue)?;
                if ch.paths.is_empty() {
                    continue;
                }
                let p1 = match p1_acquire(book, &ch, pose, &env.beam_noise, rng) {
                    Ok(p1) => p1,
                    Err(BeamError::AcquisitionFailure { .. }) => continue,
                    Err(e) => return Err(e.into()),
                };
                match p2_refine(&p1, book, &ch, pose, &env.beam_noise, rng) {
                    Ok(fix) => out.extend([fix.az, fix.el]),
                    Err(BeamError::AcquisitionFailure { .. }) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn measurement_set(epoch: u64, time_s: f64, truth: Position3D, measurements: Vec<Measurement>) -> MeasurementSet {
    MeasurementSet {
        epoch,
        time_s,
        measurements,
        truth: Some(truth),
    }
}
