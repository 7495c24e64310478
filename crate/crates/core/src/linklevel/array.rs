use super::{LinkError, Path};
use crate::geometry::{direction_from_angles, AntennaTuple};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Planar array in the local y-z plane, facing +x, with centred element
/// coordinates. Spacing is in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformRectArray {
    pub rows: u32,
    pub cols: u32,
    pub spacing_wl: f64,
}

impl UniformRectArray {
    pub fn new(rows: u32, cols: u32) -> Self {
        Self {
            rows,
            cols,
            spacing_wl: 0.5,
        }
    }

    pub fn from_tuple(t: &AntennaTuple) -> Self {
        Self::new(t.rows, t.cols)
    }

    pub fn len(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Element responses ordered row-major (row = vertical index).
    pub fn steering(&self, az: f64, el: f64) -> DVector<Complex64> {
        let u = direction_from_angles(az, el);
        let k = 2.0 * PI * self.spacing_wl;
        let yc = (self.cols as f64 - 1.0) / 2.0;
        let zc = (self.rows as f64 - 1.0) / 2.0;
        DVector::from_iterator(
            self.len(),
            (0..self.rows).flat_map(|m| {
                (0..self.cols).map(move |n| {
                    let phase = k * ((n as f64 - yc) * u.y + (m as f64 - zc) * u.z);
                    Complex64::from_polar(1.0, phase)
                })
            }),
        )
    }
}

/// Steering vector of the `rows x cols` sub-array of `antenna` with
/// half-wavelength spacing.
pub fn steering_vector(antenna: &AntennaTuple, wavelength: f64, az: f64, el: f64) -> Result<DVector<Complex64>, LinkError> {
    if !(wavelength > 0.0) {
        return Err(LinkError::InvalidParameter("wavelength must be > 0".into()));
    }
    antenna.validate()?;
    Ok(UniformRectArray::from_tuple(antenna).steering(az, el))
}

/// Complex samples per array element (rows) and snapshot (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct ArraySnapshot {
    pub array: UniformRectArray,
    pub data: DMatrix<Complex64>,
}

impl ArraySnapshot {
    pub fn snapshots(&self) -> usize {
        self.data.ncols()
    }

    pub fn covariance(&self) -> DMatrix<Complex64> {
        let n = self.data.ncols().max(1) as f64;
        (&self.data * self.data.adjoint()).map(|v| v / n)
    }

    /// Copy with every sample multiplied by `exp(j phase)`.
    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            array: self.array,
            data: self.data.map(|v| v * r),
        }
    }
}

fn cgauss<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(s * re, s * im)
}

/// Narrow-band snapshots of sources `(az, el, amplitude)` carrying
/// independent unit-power QPSK symbols, plus white noise so that a unit
/// amplitude source has the given per-element SNR.
pub fn simulate_snapshots<R: Rng + ?Sized>(
    array: &UniformRectArray,
    sources: &[(f64, f64, f64)],
    n_snapshots: usize,
    snr_db: f64,
    rng: &mut R,
) -> ArraySnapshot {
    let m = array.len();
    let noise_var = 10f64.powf(-snr_db / 10.0);
    let steer: Vec<_> = sources.iter().map(|(az, el, _)| array.steering(*az, *el)).collect();
    let mut data = DMatrix::zeros(m, n_snapshots);
    for t in 0..n_snapshots {
        for (s, (_, _, amp)) in steer.iter().zip(sources) {
            let q = rng.random_range(0..4) as f64;
            let sym = Complex64::from_polar(*amp, PI / 4.0 + q * PI / 2.0);
            for i in 0..m {
                data[(i, t)] += s[i] * sym;
            }
        }
        for i in 0..m {
            data[(i, t)] += cgauss(rng, noise_var);
        }
    }
    ArraySnapshot { array: *array, data }
}

/// Snapshots taken on demodulated SRS subcarriers: one column per
/// subcarrier, each path contributing its array response, delay phase
/// ramp and the transmitted symbol. `arrival` angles of the paths must be in
/// the array frame.
pub fn srs_snapshots<R: Rng + ?Sized>(
    array: &UniformRectArray,
    paths: &[Path],
    subcarrier_freqs: &[f64],
    symbols: &[Complex64],
    noise_var: f64,
    rng: &mut R,
) -> ArraySnapshot {
    let m = array.len();
    let steer: Vec<_> = paths.iter().map(|p| array.steering(p.arrival.0, p.arrival.1)).collect();
    let mut data = DMatrix::zeros(m, subcarrier_freqs.len());
    for (t, (f, x)) in subcarrier_freqs.iter().zip(symbols).enumerate() {
        for (p, a) in paths.iter().zip(&steer) {
            let h = p.gain * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay) * x;
            for i in 0..m {
                data[(i, t)] += a[i] * h;
            }
        }
        for i in 0..m {
            data[(i, t)] += cgauss(rng, noise_var);
        }
    }
    ArraySnapshot { array: *array, data }
}

/// Search region and step for [`music_aoa`], radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MusicGrid {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
    pub step: f64,
    /// Local maximisation of the continuous spectrum around the grid peak
    /// by successive parabolic fits with a shrinking step.
    pub refine: bool,
}

impl MusicGrid {
    pub fn degrees(az: (f64, f64), el: (f64, f64), step: f64) -> Self {
        Self {
            az_min: az.0.to_radians(),
            az_max: az.1.to_radians(),
            el_min: el.0.to_radians(),
            el_max: el.1.to_radians(),
            step: step.to_radians(),
            refine: false,
        }
    }

    pub fn with_refine(mut self, refine: bool) -> Self {
        self.refine = refine;
        self
    }

    fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
        let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| lo + i as f64 * step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicResult {
    pub az: f64,
    pub el: f64,
    pub az_axis: Vec<f64>,
    pub el_axis: Vec<f64>,
    /// Pseudo-spectrum, row-major over (el, az).
    pub spectrum: Vec<f64>,
}

impl MusicResult {
    pub fn at(&self, i_el: usize, i_az: usize) -> f64 {
        self.spectrum[i_el * self.az_axis.len() + i_az]
    }

    /// Up to `n` strict local maxima of the spectrum, strongest first, as
    /// `(az, el, value)`.
    pub fn peaks(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let (na, ne) = (self.az_axis.len(), self.el_axis.len());
        let mut found = Vec::new();
        for ie in 0..ne {
            for ia in 0..na {
                let v = self.at(ie, ia);
                let mut is_max = true;
                for de in -1i64..=1 {
                    for da in -1i64..=1 {
                        if de == 0 && da == 0 {
                            continue;
                        }
                        let (e2, a2) = (ie as i64 + de, ia as i64 + da);
                        if e2 < 0 || a2 < 0 || e2 >= ne as i64 || a2 >= na as i64 {
                            continue;
                        }
                        if self.at(e2 as usize, a2 as usize) >= v {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    found.push((self.az_axis[ia], self.el_axis[ie], v));
                }
            }
        }
        found.sort_by(|a, b| b.2.total_cmp(&a.2));
        found.truncate(n);
        found
    }
}

/// MUSIC angle estimate: noise subspace of the sample covariance, grid
/// search of `1 / ||E_n^H a||^2`.
pub fn music_aoa(snap: &ArraySnapshot, n_sources: usize, grid: &MusicGrid) -> Result<MusicResult, LinkError> {
    let m = snap.array.len();
    if n_sources == 0 || n_sources >= m {
        return Err(LinkError::RankDeficient {
            sources: n_sources,
            elements: m,
        });
    }
    if snap.snapshots() < n_sources + 1 {
        return Err(LinkError::InvalidParameter(format!(
            "{} snapshots cannot resolve {n_sources} sources",
            snap.snapshots()
        )));
    }
    if !(grid.step > 0.0) || grid.az_max < grid.az_min || grid.el_max < grid.el_min {
        return Err(LinkError::InvalidParameter("search grid needs step > 0 and ordered bounds".into()));
    }
    let eig = snap.covariance().symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let signal: Vec<DVector<Complex64>> = order[..n_sources]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let spectrum_at = |az: f64, el: f64| -> f64 {
        let a = snap.array.steering(az, el);
        let total = m as f64;
        let proj: f64 = signal.iter().map(|e| e.dotc(&a).norm_sqr()).sum();
        1.0 / (total - proj).max(total * 1e-15)
    };
    let az_axis = MusicGrid::axis(grid.az_min, grid.az_max, grid.step);
    let el_axis = MusicGrid::axis(grid.el_min, grid.el_max, grid.step);
    let mut spectrum = Vec::with_capacity(az_axis.len() * el_axis.len());
    let (mut best, mut best_val) = ((0, 0), f64::NEG_INFINITY);
    for (ie, el) in el_axis.iter().enumerate() {
        for (ia, az) in az_axis.iter().enumerate() {
            let v = spectrum_at(*az, *el);
            if v > best_val {
                best_val = v;
                best = (ie, ia);
            }
            spectrum.push(v);
        }
    }
    let (ie, ia) = best;
    let mut az = az_axis[ia];
    let mut el = el_axis[ie];
    if grid.refine {
        let proj = |az: f64, el: f64| -> f64 {
            let a = snap.array.steering(az, el);
            signal.iter().map(|e| e.dotc(&a).norm_sqr()).sum()
        };
        let vertex = |l: f64, c: f64, r: f64| {
            let den = l - 2.0 * c + r;
            if den < 0.0 {
                (0.5 * (l - r) / den).clamp(-1.0, 1.0)
            } else {
                0.0
            }
        };
        let mut h = grid.step;
        for _ in 0..10 {
            let c = proj(az, el);
            az += vertex(proj(az - h, el), c, proj(az + h, el)) * h;
            let c = proj(az, el);
            el += vertex(proj(az, el - h), c, proj(az, el + h)) * h;
            h /= 4.0;
        }
    }
    Ok(MusicResult {
        az,
        el,
        az_axis,
        el_axis,
        spectrum,
    })
}
