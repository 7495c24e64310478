use super::{LinkError, OfdmWaveform};
use crate::geometry::{angles_of, ObstacleSet, Position3D, SPEED_OF_LIGHT};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const BOLTZMANN: f64 = 1.380_649e-23;

const INTERP_HALF: i64 = 16;

/// One propagation path. Angles are global; `departure` points from the
/// transmitter towards the first interaction, `arrival` from the receiver
/// back towards the last one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub delay: f64,
    pub gain: Complex64,
    pub departure: (f64, f64),
    pub arrival: (f64, f64),
    pub los: bool,
    /// Index of the reflecting polygon, if any.
    pub reflector: Option<usize>,
}

impl Path {
    pub fn length(&self) -> f64 {
        self.delay * SPEED_OF_LIGHT
    }

    pub fn power(&self) -> f64 {
        self.gain.norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    /// 0 (direct path only) or 1 (single-bounce specular reflections).
    pub max_bounces: u8,
    /// Include the carrier phase `exp(-j 2 pi f_c tau)` in path gains.
    pub carrier_phase: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 3.5e9,
            max_bounces: 1,
            carrier_phase: true,
        }
    }
}

/// Free-space amplitude `lambda / (4 pi d)` with optional carrier phase.
fn free_space(length: f64, cfg: &ChannelConfig) -> Complex64 {
    let lambda = SPEED_OF_LIGHT / cfg.carrier_hz;
    let amp = lambda / (4.0 * PI * length.max(1e-3));
    if cfg.carrier_phase {
        Complex64::from_polar(amp, -2.0 * PI * length / lambda)
    } else {
        Complex64::new(amp, 0.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TapChannel {
    pub paths: Vec<Path>,
}

impl TapChannel {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    /// Single ideal path with the given delay and gain.
    pub fn single(delay: f64, gain: Complex64) -> Self {
        Self::new(vec![Path {
            delay,
            gain,
            departure: (0.0, 0.0),
            arrival: (0.0, 0.0),
            los: true,
            reflector: None,
        }])
    }

    /// Direct path (when unobstructed) plus first-order specular
    /// reflections off every polygon, using the image method. Paths are
    /// sorted by delay.
    pub fn from_geometry(
        tx: &Position3D,
        rx: &Position3D,
        obstacles: &ObstacleSet,
        cfg: &ChannelConfig,
    ) -> Result<Self, LinkError> {
        if !(cfg.carrier_hz > 0.0) {
            return Err(LinkError::InvalidParameter("carrier frequency must be > 0".into()));
        }
        if cfg.max_bounces > 1 {
            return Err(LinkError::InvalidParameter(format!(
                "{} bounces requested, only 0 or 1 are modelled",
                cfg.max_bounces
            )));
        }
        let mut paths = Vec::new();
        let d = tx.distance(rx);
        if d == 0.0 {
            return Err(LinkError::Geometry(crate::geometry::GeometryError::Degenerate(
                "transmitter and receiver coincide",
            )));
        }
        if obstacles.segment_clear(tx, rx, None) {
            let v = rx.to_vector() - tx.to_vector();
            paths.push(Path {
                delay: d / SPEED_OF_LIGHT,
                gain: free_space(d, cfg),
                departure: angles_of(&v),
                arrival: angles_of(&-v),
                los: true,
                reflector: None,
            });
        }
        if cfg.max_bounces == 1 {
            for (i, poly) in obstacles.iter().enumerate() {
                let image = poly.mirror(tx);
                let Some((_, hit)) = poly.intersect_segment(&image, rx) else {
                    continue;
                };
                // tx and rx must lie on the same side of the reflecting plane
                let n = poly.normal();
                let p0 = poly.vertices()[0].to_vector();
                let side_tx = n.dot(&(tx.to_vector() - p0));
                let side_rx = n.dot(&(rx.to_vector() - p0));
                if side_tx * side_rx <= 0.0 {
                    continue;
                }
                if !obstacles.segment_clear(tx, &hit, Some(i)) || !obstacles.segment_clear(&hit, rx, Some(i)) {
                    continue;
                }
                let length = image.distance(rx);
                let loss = 10f64.powf(-poly.reflection_loss_db / 20.0);
                paths.push(Path {
                    delay: length / SPEED_OF_LIGHT,
                    gain: free_space(length, cfg) * loss,
                    departure: angles_of(&(hit.to_vector() - tx.to_vector())),
                    arrival: angles_of(&(hit.to_vector() - rx.to_vector())),
                    los: false,
                    reflector: Some(i),
                });
            }
        }
        paths.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        Ok(Self { paths })
    }

    pub fn has_los(&self) -> bool {
        self.paths.iter().any(|p| p.los)
    }

    pub fn first_delay(&self) -> Option<f64> {
        self.paths.first().map(|p| p.delay)
    }

    /// Copy with every gain scaled.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            paths: self
                .paths
                .iter()
                .map(|p| Path {
                    gain: p.gain * factor,
                    ..*p
                })
                .collect(),
        }
    }
}

fn blackman(t: f64, half: f64) -> f64 {
    if t.abs() >= half {
        return 0.0;
    }
    let x = PI * t / half;
    0.42 + 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// 32-tap windowed-sinc taps for fractional delay `frac` in [0, 1); tap `j`
/// multiplies `x[n - j + INTERP_HALF - 1]`.
fn fractional_taps(frac: f64) -> Vec<f64> {
    let taps: Vec<f64> = (-(INTERP_HALF - 1)..=INTERP_HALF)
        .map(|k| {
            let t = k as f64 - frac;
            sinc(t) * blackman(t, INTERP_HALF as f64)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter().map(|t| t / sum).collect()
}

/// Adds `gain * x(t - delay)` into `out`.
fn accumulate_delayed(out: &mut [Complex64], wave: &OfdmWaveform, delay: f64, gain: Complex64) {
    let n_len = wave.samples.len();
    let fs = wave.sample_rate;
    let mut d = delay * fs;
    if (d - d.round()).abs() < 1e-9 {
        d = d.round();
    }
    let d_int = d.floor();
    let frac = d - d_int;
    let d_int = d_int as i64;
    if frac < 1e-12 {
        for n in (d_int.max(0) as usize)..n_len {
            out[n] += gain * wave.samples[n - d_int as usize];
        }
        return;
    }
    // interpolate the band-centred signal, then restore carrier and phase
    let w0 = 2.0 * PI * wave.center_freq_hz / fs;
    let shifted: Vec<Complex64> = wave
        .samples
        .iter()
        .enumerate()
        .map(|(n, s)| s * Complex64::from_polar(1.0, -w0 * n as f64))
        .collect();
    let taps = fractional_taps(frac);
    let phase = Complex64::from_polar(1.0, -2.0 * PI * wave.center_freq_hz * delay);
    for (n, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (j, k) in (-(INTERP_HALF - 1)..=INTERP_HALF).enumerate() {
            let m = n as i64 - d_int - k;
            if m >= 0 && (m as usize) < n_len {
                acc += shifted[m as usize] * taps[j];
            }
        }
        if acc != Complex64::default() {
            *o += gain * phase * acc * Complex64::from_polar(1.0, w0 * n as f64);
        }
    }
}

/// Sum of gain-weighted, delayed copies of `wave`. The output keeps the
/// input length and layout; energy delayed past the end is dropped.
pub fn apply_channel(wave: &OfdmWaveform, channel: &TapChannel) -> Result<OfdmWaveform, LinkError> {
    let duration = wave.duration();
    let mut out = wave.zeros_like();
    for p in &channel.paths {
        if !(p.delay >= 0.0) || p.delay >= duration {
            return Err(LinkError::DelayOverflow {
                delay_s: p.delay,
                duration_s: duration,
            });
        }
        accumulate_delayed(&mut out.samples, wave, p.delay, p.gain);
    }
    Ok(out)
}

/// Thermal noise power `k_B * BW * (T_ant + 290 (NF - 1))`, watts.
pub fn noise_power(bandwidth_hz: f64, noise_figure_db: f64, antenna_temp_k: f64) -> f64 {
    let nf = 10f64.powf(noise_figure_db / 10.0);
    BOLTZMANN * bandwidth_hz * (antenna_temp_k + 290.0 * (nf - 1.0))
}

fn add_complex_noise<R: Rng + ?Sized>(wave: &mut OfdmWaveform, variance: f64, rng: &mut R) {
    let s = (variance / 2.0).sqrt();
    for x in wave.samples.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *x += Complex64::new(s * re, s * im);
    }
}

/// Adds circular Gaussian thermal noise. The noise density is white over
/// the sampled band, so its power inside `bandwidth_hz` equals
/// [`noise_power`]; the per-sample variance is that power times
/// `sample_rate / bandwidth_hz`.
pub fn add_awgn<R: Rng + ?Sized>(
    wave: &OfdmWaveform,
    bandwidth_hz: f64,
    noise_figure_db: f64,
    antenna_temp_k: f64,
    rng: &mut R,
) -> Result<OfdmWaveform, LinkError> {
    if !(noise_figure_db >= 0.0) || !(bandwidth_hz > 0.0) || !(antenna_temp_k >= 0.0) {
        return Err(LinkError::InvalidParameter(
            "noise figure, bandwidth and antenna temperature must be non-negative".into(),
        ));
    }
    let n0 = noise_power(bandwidth_hz, noise_figure_db, antenna_temp_k);
    let mut out = wave.clone();
    add_complex_noise(&mut out, n0 * wave.sample_rate / bandwidth_hz, rng);
    Ok(out)
}

/// Adds noise so that the mean power of the nonzero samples of `reference`
/// over the per-sample noise variance equals `snr_db`.
pub fn add_awgn_snr<R: Rng + ?Sized>(
    wave: &OfdmWaveform,
    reference: &OfdmWaveform,
    snr_db: f64,
    rng: &mut R,
) -> OfdmWaveform {
    let active: Vec<f64> = reference
        .samples
        .iter()
        .map(|s| s.norm_sqr())
        .filter(|p| *p > 0.0)
        .collect();
    let p = if active.is_empty() {
        0.0
    } else {
        active.iter().sum::<f64>() / active.len() as f64
    };
    let mut out = wave.clone();
    add_complex_noise(&mut out, p / 10f64.powf(snr_db / 10.0), rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Polygon, SPEED_OF_LIGHT};
    use crate::grid5g::{map_to_grid, PrsConfig, SignalConfig, SlotSpan};
    use crate::linklevel::ofdm_modulate;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prs_wave() -> OfdmWaveform {
        let prs = PrsConfig::positioning_default(1, 1, 24);
        let grid = map_to_grid(&[SignalConfig::Prs(prs)], SlotSpan::new(0, 1), 1).unwrap();
        ofdm_modulate(&grid, 1, 512, 2).unwrap()
    }

    #[test]
    fn unit_path_is_identity() {
        let w = prs_wave();
        let out = apply_channel(&w, &TapChannel::single(0.0, Complex64::new(1.0, 0.0))).unwrap();
        assert_eq!(out.samples, w.samples);
    }

    #[test]
    fn integer_delay_shifts() {
        let w = prs_wave();
        let k = 37;
        let out = apply_channel(&w, &TapChannel::single(k as f64 / w.sample_rate, Complex64::new(1.0, 0.0))).unwrap();
        for n in k..w.samples.len() {
            assert!((out.samples[n] - w.samples[n - k]).norm() < 1e-12);
        }
        assert!(out.samples[..k].iter().all(|s| s.norm() == 0.0));
    }

    #[test]
    fn fractional_delay_matches_frequency_domain_shift() {
        let w = prs_wave();
        let delay = 12.37 / w.sample_rate;
        let out = apply_channel(&w, &TapChannel::single(delay, Complex64::new(1.0, 0.0))).unwrap();
        // a delay inside the cyclic prefix is a per-subcarrier phase ramp
        let rx = crate::linklevel::ofdm_demodulate(&out);
        let tx = crate::linklevel::ofdm_demodulate(&w);
        let scs = 30e3;
        let mut worst: f64 = 0.0;
        for l in 0..14 {
            for k in 0..24 * 12 {
                let expect = tx[l][k] * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * scs * delay);
                worst = worst.max((rx[l][k] - expect).norm());
            }
        }
        assert!(worst < 2e-3, "worst {worst}");
    }

    #[test]
    fn two_paths_energy_bound() {
        let w = prs_wave();
        let ch = TapChannel::new(vec![
            TapChannel::single(0.0, Complex64::new(1.0, 0.0)).paths[0],
            TapChannel::single(3.5 / w.sample_rate, Complex64::new(1.0, 0.0)).paths[0],
        ]);
        let out = apply_channel(&w, &ch).unwrap();
        assert!(out.energy() <= 4.0 * w.energy());
    }

    #[test]
    fn delay_overflow() {
        let w = prs_wave();
        let ch = TapChannel::single(w.duration() * 1.01, Complex64::new(1.0, 0.0));
        assert!(matches!(apply_channel(&w, &ch), Err(LinkError::DelayOverflow { .. })));
    }

    #[test]
    fn noise_power_formula() {
        assert_relative_eq!(noise_power(1.0, 0.0, 290.0), BOLTZMANN * 290.0, max_relative = 1e-15);
        // hand evaluation: 10^0.9 = 7.943282347242815
        let expect = 1.380_649e-23 * 1e8 * (298.0 + 290.0 * 6.943_282_347_242_815);
        assert_relative_eq!(noise_power(1e8, 9.0, 298.0), expect, max_relative = 1e-12);
    }

    #[test]
    fn empirical_noise_power() {
        let mut w = prs_wave();
        w.samples = vec![Complex64::default(); 1_000_000];
        let bw = w.sample_rate;
        let noisy = add_awgn(&w, bw, 9.0, 298.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n0 = noise_power(bw, 9.0, 298.0);
        let p = noisy.mean_power();
        assert!((p / n0 - 1.0).abs() < 0.02, "{}", p / n0);
    }

    #[test]
    fn geometry_channel_los_and_reflection() {
        let wall = Polygon::wall((-50.0, 10.0), (50.0, 10.0), 0.0, 30.0, 6.0).unwrap();
        let obstacles = ObstacleSet::new(vec![wall]);
        let tx = Position3D::new(0.0, 0.0, 5.0);
        let rx = Position3D::new(40.0, 0.0, 5.0);
        let ch = TapChannel::from_geometry(&tx, &rx, &obstacles, &ChannelConfig::default()).unwrap();
        assert_eq!(ch.paths.len(), 2);
        assert!(ch.paths[0].los);
        assert_relative_eq!(ch.paths[0].delay, 40.0 / SPEED_OF_LIGHT, max_relative = 1e-12);
        // image at y = 20: path length sqrt(40^2 + 20^2)
        assert_relative_eq!(ch.paths[1].length(), (1600f64 + 400.0).sqrt(), max_relative = 1e-12);
        let ratio = ch.paths[1].gain.norm() / ch.paths[0].gain.norm();
        assert_relative_eq!(ratio, 40.0 / 2000f64.sqrt() * 10f64.powf(-6.0 / 20.0), max_relative = 1e-9);
        // departure of the reflection points at the wall
        assert!(ch.paths[1].departure.0 > 0.0);
    }

    #[test]
    fn blocked_link_keeps_only_reflections() {
        let blocker = Polygon::wall((20.0, -5.0), (20.0, 5.0), 0.0, 30.0, 6.0).unwrap();
        let tx = Position3D::new(0.0, 0.0, 5.0);
        let rx = Position3D::new(40.0, 0.0, 5.0);
        let ch = TapChannel::from_geometry(&tx, &rx, &ObstacleSet::new(vec![blocker]), &ChannelConfig::default()).unwrap();
        assert!(!ch.has_los());
    }
}
