use super::{LinkError, OfdmWaveform};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakMode {
    MaxPeak,
    FirstPeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToaConfig {
    pub mode: PeakMode,
    pub refine: bool,
    /// First-peak threshold relative to the global correlation maximum.
    pub threshold: f64,
    /// Largest lag searched, seconds. `None` searches every lag.
    pub max_delay: Option<f64>,
}

impl Default for ToaConfig {
    fn default() -> Self {
        Self {
            mode: PeakMode::FirstPeak,
            refine: true,
            threshold: 0.5,
            max_delay: None,
        }
    }
}

/// Cross-correlation delay estimator with a cached reference spectrum.
pub struct ToaEstimator {
    len: usize,
    sample_rate: f64,
    ref_spectrum: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl ToaEstimator {
    pub fn new(reference: &OfdmWaveform) -> Result<Self, LinkError> {
        if reference.energy() == 0.0 {
            return Err(LinkError::InvalidParameter("reference waveform is zero".into()));
        }
        let len = (2 * reference.samples.len()).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(len);
        let ifft = planner.plan_fft_inverse(len);
        let mut ref_spectrum = vec![Complex64::default(); len];
        ref_spectrum[..reference.samples.len()].copy_from_slice(&reference.samples);
        fft.process(&mut ref_spectrum);
        ref_spectrum.iter_mut().for_each(|v| *v = v.conj());
        Ok(Self {
            len,
            sample_rate: reference.sample_rate,
            ref_spectrum,
            fft,
            ifft,
        })
    }

    /// Magnitude of the cross-correlation for non-negative lags.
    pub fn correlation(&self, rx: &OfdmWaveform) -> Vec<f64> {
        let n = rx.samples.len().min(self.len / 2);
        let mut buf = vec![Complex64::default(); self.len];
        buf[..n].copy_from_slice(&rx.samples[..n]);
        self.fft.process(&mut buf);
        buf.iter_mut().zip(&self.ref_spectrum).for_each(|(b, r)| *b *= r);
        self.ifft.process(&mut buf);
        buf[..n].iter().map(|v| v.norm()).collect()
    }

    pub fn estimate(&self, rx: &OfdmWaveform, cfg: &ToaConfig) -> Result<f64, LinkError> {
        let mut r = self.correlation(rx);
        if let Some(max_delay) = cfg.max_delay {
            let lags = ((max_delay * self.sample_rate).ceil() as usize + 2).min(r.len());
            r.truncate(lags);
        }
        let lag = select_peak(&r, cfg)?;
        let offset = if cfg.refine { parabolic_offset(&r, lag) } else { 0.0 };
        Ok((lag as f64 + offset) / self.sample_rate)
    }
}

fn select_peak(r: &[f64], cfg: &ToaConfig) -> Result<usize, LinkError> {
    let (mut best, mut best_val) = (0usize, 0.0f64);
    for (i, v) in r.iter().enumerate() {
        if *v > best_val {
            best = i;
            best_val = *v;
        }
    }
    if !(best_val > 0.0) || !best_val.is_finite() {
        return Err(LinkError::DetectionFailure);
    }
    match cfg.mode {
        PeakMode::MaxPeak => Ok(best),
        PeakMode::FirstPeak => {
            let thr = cfg.threshold * best_val;
            for i in 0..=best {
                let left = if i > 0 { r[i - 1] } else { 0.0 };
                let right = r.get(i + 1).copied().unwrap_or(0.0);
                if r[i] >= thr && r[i] >= left && r[i] >= right {
                    return Ok(i);
                }
            }
            Ok(best)
        }
    }
}

/// Vertex offset of the parabola through the three samples around `i`.
fn parabolic_offset(r: &[f64], i: usize) -> f64 {
    if i == 0 || i + 1 >= r.len() {
        return 0.0;
    }
    let (a, b, c) = (r[i - 1], r[i], r[i + 1]);
    let den = a - 2.0 * b + c;
    if den.abs() < f64::EPSILON * b.abs() || den >= 0.0 {
        return 0.0;
    }
    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
}

/// Delay of `rx` relative to `reference`, in seconds.
pub fn estimate_toa(rx: &OfdmWaveform, reference: &OfdmWaveform, mode: PeakMode, refine: bool) -> Result<f64, LinkError> {
    estimate_toa_with(
        rx,
        reference,
        &ToaConfig {
            mode,
            refine,
            ..ToaConfig::default()
        },
    )
}

pub fn estimate_toa_with(rx: &OfdmWaveform, reference: &OfdmWaveform, cfg: &ToaConfig) -> Result<f64, LinkError> {
    ToaEstimator::new(reference)?.estimate(rx, cfg)
}
