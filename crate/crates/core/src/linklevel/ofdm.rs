use super::LinkError;
use crate::grid5g::{numerology_params, ResourceGrid, SYMBOLS_PER_SLOT};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

/// Complex baseband OFDM signal with a known symbol layout.
///
/// Symbol `l` occupies `[l * symbol_len, (l + 1) * symbol_len)`: a cyclic
/// prefix of `cp_len` samples followed by `n_fft * oversampling` useful
/// samples. Subcarrier `k` sits at frequency `k * scs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmWaveform {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub n_fft: usize,
    pub oversampling: usize,
    pub cp_len: usize,
    pub n_symbols: usize,
    pub mu: u8,
    /// Centre of the occupied band, Hz. Used to heterodyne before
    /// fractional-delay interpolation.
    pub center_freq_hz: f64,
}

impl OfdmWaveform {
    pub fn useful_len(&self) -> usize {
        self.n_fft * self.oversampling
    }

    pub fn symbol_len(&self) -> usize {
        self.cp_len + self.useful_len()
    }

    /// Start of the useful part of symbol `l`.
    pub fn symbol_start(&self, l: usize) -> usize {
        l * self.symbol_len() + self.cp_len
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// Same layout, all-zero samples.
    pub fn zeros_like(&self) -> Self {
        Self {
            samples: vec![Complex64::default(); self.samples.len()],
            ..self.clone()
        }
    }
}

/// Modulates every slot of `grid.span` with a per-symbol inverse FFT and a
/// normal cyclic prefix (144/2048 of the useful symbol).
///
/// The transform is unitary, so demodulation returns the grid values.
pub fn ofdm_modulate(grid: &ResourceGrid, mu: u8, n_fft: usize, oversampling: usize) -> Result<OfdmWaveform, LinkError> {
    let num = numerology_params(mu)?;
    if n_fft < 64 || !n_fft.is_power_of_two() {
        return Err(LinkError::InvalidParameter(format!("FFT size {n_fft} must be a power of two >= 64")));
    }
    if oversampling == 0 {
        return Err(LinkError::InvalidParameter("oversampling must be >= 1".into()));
    }
    let extent = grid.subcarrier_extent();
    if extent as usize > n_fft {
        return Err(LinkError::GridTooWide { needed: extent, n_fft });
    }
    let n = n_fft * oversampling;
    let cp_len = num.cp_samples(n_fft) * oversampling;
    let n_symbols = (grid.span.count as usize) * SYMBOLS_PER_SLOT as usize;
    let mut samples = vec![Complex64::default(); n_symbols * (cp_len + n)];

    let (mut k_min, mut k_max) = (u32::MAX, 0u32);
    let mut per_symbol: Vec<Vec<(u32, Complex64)>> = vec![Vec::new(); n_symbols];
    for (idx, re) in grid.iter() {
        if idx.slot < grid.span.start || idx.slot >= grid.span.start + grid.span.count {
            continue;
        }
        let l = (idx.slot - grid.span.start) as usize * SYMBOLS_PER_SLOT as usize + idx.symbol as usize;
        per_symbol[l].push((idx.subcarrier, re.value));
        k_min = k_min.min(idx.subcarrier);
        k_max = k_max.max(idx.subcarrier);
    }

    let ifft = FftPlanner::new().plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut buf = vec![Complex64::default(); n];
    for (l, res) in per_symbol.iter().enumerate() {
        if res.is_empty() {
            continue;
        }
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        for &(k, v) in res {
            buf[k as usize] = v;
        }
        ifft.process(&mut buf);
        let start = l * (cp_len + n);
        let out = &mut samples[start..start + cp_len + n];
        for (i, o) in out.iter_mut().enumerate() {
            *o = buf[(i + n - cp_len) % n] * scale;
        }
    }
    let center_freq_hz = if k_min <= k_max {
        0.5 * (k_min + k_max) as f64 * num.scs_hz()
    } else {
        0.0
    };
    Ok(OfdmWaveform {
        samples,
        sample_rate: num.scs_hz() * n as f64,
        n_fft,
        oversampling,
        cp_len,
        n_symbols,
        mu,
        center_freq_hz,
    })
}

/// Forward transform of every symbol. Returns `n_symbols` rows of `n_fft`
/// subcarrier values.
pub fn ofdm_demodulate(wave: &OfdmWaveform) -> Vec<Vec<Complex64>> {
    let n = wave.useful_len();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let scale = 1.0 / (n as f64).sqrt();
    let mut out = Vec::with_capacity(wave.n_symbols);
    let mut buf = vec![Complex64::default(); n];
    for l in 0..wave.n_symbols {
        let start = wave.symbol_start(l);
        buf.copy_from_slice(&wave.samples[start..start + n]);
        fft.process(&mut buf);
        out.push(buf[..wave.n_fft].iter().map(|v| v * scale).collect());
    }
    out
}

impl ResourceGrid {
    /// Copy of this grid with every value replaced by the demodulated
    /// resource element of `wave`.
    pub fn demodulated(&self, wave: &OfdmWaveform) -> ResourceGrid {
        let symbols = ofdm_demodulate(wave);
        let mut out = self.clone();
        let keys: Vec<_> = out.iter().map(|(k, _)| *k).collect();
        for k in keys {
            let l = (k.slot - self.span.start) as usize * SYMBOLS_PER_SLOT as usize + k.symbol as usize;
            if let Some(row) = symbols.get(l) {
                let mut re = *out.get(&k).expect("key taken from the grid");
                re.value = row[k.subcarrier as usize];
                out.insert(k, re);
            }
        }
        out
    }
}

/// Mean power of resource-element values, in dB relative to unit power.
pub fn rsrp(values: &[Complex64]) -> f64 {
    if values.is_empty() {
        return f64::NEG_INFINITY;
    }
    let p = values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len() as f64;
    10.0 * p.log10()
}
