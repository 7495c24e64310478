//! NR frame-structure arithmetic and PRS/SRS/SSB resource mapping.
//!
//! The printed numerology table, the comb offset tables and the SSB burst
//! patterns are reproduced as constants. Resource grids are sparse and only
//! cover the slots a simulation epoch actually touches.
//!
//! SSB cases D and E: the burst index sets follow the standard's 64-SSB
//! patterns, `n in 0..=18 \ {4, 9, 14}` and `n in 0..=8 \ {4}`. Reading the
//! index ranges literally would give 76 and 72 blocks instead of 64.

use crate::geometry::SPEED_OF_LIGHT;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use thiserror::Error;

pub const SYMBOLS_PER_SLOT: u32 = 14;
pub const SUBCARRIERS_PER_RB: u32 = 12;
pub const SSB_SUBCARRIERS: u32 = 240;
pub const SSB_SYMBOLS: u32 = 4;
/// Maximum code rate used by the peak data-rate formula.
pub const R_MAX: f64 = 948.0 / 1024.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("numerology mu={0} outside 0..=6")]
    InvalidNumerology(u8),
    #[error("bandwidth {bandwidth_hz} Hz exceeds the {max_hz} Hz maximum for mu={mu}")]
    OverBudget { mu: u8, bandwidth_hz: f64, max_hz: f64 },
    #[error("unsupported (comb size, symbols) combination ({comb}, {symbols})")]
    UnsupportedCombination { comb: u32, symbols: u32 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{} resource-element collision(s), first at slot {} symbol {} subcarrier {}", .0.len(), .0[0].slot, .0[0].symbol, .0[0].subcarrier)]
    Collisions(Vec<Collision>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FrequencyRange {
    #[serde(rename = "FR1")]
    Fr1,
    #[serde(rename = "FR1/FR2")]
    Fr1Fr2,
    #[serde(rename = "FR2")]
    Fr2,
}

/// One row of the supported-numerology table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Numerology {
    pub mu: u8,
    pub scs_khz: f64,
    pub frequency_range: FrequencyRange,
    pub max_bandwidth_mhz: f64,
    pub slots_per_subframe: u32,
    /// Average symbol duration as printed, microseconds.
    pub symbol_us: f64,
    /// Cyclic prefix length as printed, microseconds.
    pub cp_us: f64,
    /// Printed c/BW ranging accuracy; absent where the table has "-".
    pub ranging_m: Option<f64>,
    pub supports_data: bool,
    pub supports_sync: bool,
}

const NUMEROLOGY_TABLE: [Numerology; 7] = [
    row(0, FrequencyRange::Fr1, 50.0, 66.7, 4.69, Some(6.00), true, true),
    row(1, FrequencyRange::Fr1, 100.0, 33.3, 2.34, Some(3.00), true, true),
    row(2, FrequencyRange::Fr1Fr2, 200.0, 16.7, 1.17, Some(1.50), true, false),
    row(3, FrequencyRange::Fr2, 400.0, 8.33, 0.57, Some(0.75), true, true),
    row(4, FrequencyRange::Fr2, 400.0, 4.17, 0.29, None, false, true),
    row(5, FrequencyRange::Fr2, 1600.0, 2.08, 0.15, Some(0.19), true, true),
    row(6, FrequencyRange::Fr2, 2000.0, 1.04, 0.07, Some(0.15), true, true),
];

#[allow(clippy::too_many_arguments)]
const fn row(
    mu: u8,
    frequency_range: FrequencyRange,
    max_bandwidth_mhz: f64,
    symbol_us: f64,
    cp_us: f64,
    ranging_m: Option<f64>,
    supports_data: bool,
    supports_sync: bool,
) -> Numerology {
    Numerology {
        mu,
        scs_khz: (15u32 << mu) as f64,
        frequency_range,
        max_bandwidth_mhz,
        slots_per_subframe: 1 << mu,
        symbol_us,
        cp_us,
        ranging_m,
        supports_data,
        supports_sync,
    }
}

impl Numerology {
    pub fn scs_hz(&self) -> f64 {
        self.scs_khz * 1e3
    }

    /// Useful symbol duration `1 / scs`, seconds.
    pub fn symbol_duration(&self) -> f64 {
        1.0 / self.scs_hz()
    }

    pub fn max_bandwidth_hz(&self) -> f64 {
        self.max_bandwidth_mhz * 1e6
    }

    /// Slot duration, seconds.
    pub fn slot_duration(&self) -> f64 {
        1e-3 / self.slots_per_subframe as f64
    }

    /// Cyclic prefix length in samples for an `n_fft`-point symbol
    /// (normal CP, 144/2048 of the useful symbol).
    pub fn cp_samples(&self, n_fft: usize) -> usize {
        (n_fft * 144).div_ceil(2048)
    }
}

pub fn numerology_params(mu: u8) -> Result<Numerology, GridError> {
    NUMEROLOGY_TABLE
        .get(mu as usize)
        .copied()
        .ok_or(GridError::InvalidNumerology(mu))
}

/// `BW = N_RB * scs * 12`, in Hz.
pub fn bandwidth(n_rb: u32, mu: u8) -> Result<f64, GridError> {
    let num = numerology_params(mu)?;
    if n_rb == 0 {
        return Err(GridError::InvalidConfig("N_RB must be >= 1".into()));
    }
    let bw = n_rb as f64 * num.scs_hz() * SUBCARRIERS_PER_RB as f64;
    let max = num.max_bandwidth_hz();
    if bw > max * (1.0 + 1e-12) {
        return Err(GridError::OverBudget {
            mu,
            bandwidth_hz: bw,
            max_hz: max,
        });
    }
    Ok(bw)
}

/// Overhead class of a component carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overhead {
    None,
    Fr1Downlink,
    Fr2Downlink,
    Fr1Uplink,
    Fr2Uplink,
}

impl Overhead {
    pub fn fraction(self) -> f64 {
        match self {
            Overhead::None => 0.0,
            Overhead::Fr1Downlink => 0.14,
            Overhead::Fr2Downlink => 0.18,
            Overhead::Fr1Uplink => 0.08,
            Overhead::Fr2Uplink => 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierParams {
    pub layers: u32,
    pub modulation_order: u32,
    pub scaling: f64,
    pub n_rb: u32,
    pub mu: u8,
    pub overhead: Overhead,
}

const SCALING_FACTORS: [f64; 4] = [1.0, 0.8, 0.75, 0.4];

/// Peak data rate in Mbps summed over component carriers.
pub fn data_rate(carriers: &[CarrierParams]) -> Result<f64, GridError> {
    let mut total = 0.0;
    for c in carriers {
        if !SCALING_FACTORS.contains(&c.scaling) {
            return Err(GridError::InvalidConfig(format!(
                "scaling factor {} not in {{1, 0.8, 0.75, 0.4}}",
                c.scaling
            )));
        }
        if c.layers == 0 || c.modulation_order == 0 || c.n_rb == 0 {
            return Err(GridError::InvalidConfig(
                "layers, modulation order and N_RB must be >= 1".into(),
            ));
        }
        let num = numerology_params(c.mu)?;
        total += c.layers as f64
            * c.modulation_order as f64
            * c.scaling
            * R_MAX
            * (12.0 * c.n_rb as f64)
            / num.symbol_duration()
            * (1.0 - c.overhead.fraction());
    }
    Ok(total * 1e-6)
}

/// Minimum sampling time `1 / (scs * N_f)` and its ranging granularity.
pub fn sampling_resolution(mu: u8, n_fft: usize) -> Result<(f64, f64), GridError> {
    let num = numerology_params(mu)?;
    if n_fft < 64 || !n_fft.is_power_of_two() {
        return Err(GridError::InvalidConfig(format!(
            "FFT size must be a power of two >= 64, got {n_fft}"
        )));
    }
    let ts = 1.0 / (num.scs_hz() * n_fft as f64);
    Ok((ts, ts * SPEED_OF_LIGHT))
}

pub fn prs_re_offsets(comb: u32, symbols: u32) -> Result<&'static [u32], GridError> {
    let row: &'static [u32] = match (comb, symbols) {
        (2, 2) => &[0, 1],
        (2, 4) => &[0, 1, 0, 1],
        (2, 6) => &[0, 1, 0, 1, 0, 1],
        (2, 12) => &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1],
        (4, 4) => &[0, 2, 1, 3],
        (4, 12) => &[0, 2, 1, 3, 0, 2, 1, 3, 0, 2, 1, 3],
        (6, 6) => &[0, 3, 1, 4, 2, 5],
        (6, 12) => &[0, 3, 1, 4, 2, 5, 0, 3, 1, 4, 2, 5],
        (12, 12) => &[0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11],
        _ => return Err(GridError::UnsupportedCombination { comb, symbols }),
    };
    Ok(row)
}

pub fn srs_re_offsets(comb: u32, symbols: u32) -> Result<&'static [u32], GridError> {
    let row: &'static [u32] = match (comb, symbols) {
        (2, 1) => &[0],
        (2, 2) => &[0, 1],
        (2, 4) => &[0, 1, 0, 1],
        (4, 2) => &[0, 2],
        (4, 4) => &[0, 2, 1, 3],
        (4, 8) => &[0, 2, 1, 3, 0, 2, 1, 3],
        (4, 12) => &[0, 2, 1, 3, 0, 2, 1, 3, 0, 2, 1, 3],
        (8, 4) => &[0, 4, 2, 6],
        (8, 8) => &[0, 4, 2, 6, 1, 5, 3, 7],
        (8, 12) => &[0, 4, 2, 6, 1, 5, 3, 7, 0, 4, 2, 6],
        _ => return Err(GridError::UnsupportedCombination { comb, symbols }),
    };
    Ok(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SsbCase {
    A,
    B,
    C,
    D,
    E,
}

impl SsbCase {
    pub fn scs_khz(self) -> u32 {
        match self {
            SsbCase::A => 15,
            SsbCase::B | SsbCase::C => 30,
            SsbCase::D => 120,
            SsbCase::E => 240,
        }
    }

    pub fn mu(self) -> u8 {
        match self {
            SsbCase::A => 0,
            SsbCase::B | SsbCase::C => 1,
            SsbCase::D => 3,
            SsbCase::E => 4,
        }
    }

    fn base_and_stride(self) -> (&'static [u32], u32) {
        match self {
            SsbCase::A | SsbCase::C => (&[2, 8], 14),
            SsbCase::B | SsbCase::D => (&[4, 8, 16, 20], 28),
            SsbCase::E => (&[8, 12, 16, 20, 32, 36, 40, 44], 56),
        }
    }

    /// Burst indices `n` for the carrier band, `None` for "NA" cells.
    fn burst_indices(self, carrier_ghz: f64) -> Option<Vec<u32>> {
        let band = if carrier_ghz <= 3.0 {
            0
        } else if carrier_ghz <= 6.0 {
            1
        } else {
            2
        };
        match (self, band) {
            (SsbCase::A | SsbCase::C, 0) => Some(vec![0, 1]),
            (SsbCase::A | SsbCase::C, 1) => Some(vec![0, 1, 2, 3]),
            (SsbCase::B, 0) => Some(vec![0]),
            (SsbCase::B, 1) => Some(vec![0, 1]),
            (SsbCase::D, 2) => Some((0..=18).filter(|n| ![4, 9, 14].contains(n)).collect()),
            (SsbCase::E, 2) => Some((0..=8).filter(|&n| n != 4).collect()),
            _ => None,
        }
    }
}

/// Number of SSBs in a burst set for the carrier frequency.
pub fn ssb_count(carrier_ghz: f64) -> u32 {
    if carrier_ghz <= 3.0 {
        4
    } else if carrier_ghz <= 6.0 {
        8
    } else {
        64
    }
}

/// First OFDM symbol (within the half frame) of every SSB in the burst.
pub fn ssb_start_symbols(case: SsbCase, carrier_ghz: f64) -> Result<Vec<u32>, GridError> {
    let indices = case.burst_indices(carrier_ghz).ok_or_else(|| {
        GridError::Unsupported(format!("SSB case {case:?} is not defined at {carrier_ghz} GHz"))
    })?;
    let (base, stride) = case.base_and_stride();
    Ok(indices
        .iter()
        .flat_map(|n| base.iter().map(move |b| b + stride * n))
        .collect())
}

/// Signal carried by a resource element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Prs,
    Srs,
    Ssb,
}

impl SignalKind {
    fn seed_tag(self) -> u64 {
        match self {
            SignalKind::Prs => 1,
            SignalKind::Srs => 2,
            SignalKind::Ssb => 3,
        }
    }
}

const PRS_PERIODS: [u32; 17] = [
    4, 5, 8, 10, 16, 20, 32, 40, 64, 80, 160, 320, 640, 1280, 2560, 5120, 10240,
];
const SRS_PERIODS: [u32; 22] = [
    1, 2, 4, 5, 8, 10, 16, 20, 32, 40, 64, 80, 160, 320, 640, 1280, 2560, 5120, 10240, 20480, 40960, 81920,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrsConfig {
    pub cell_id: u32,
    #[serde(default)]
    pub resource_id: u32,
    pub comb_size: u32,
    pub n_symbols: u32,
    #[serde(default)]
    pub re_offset: u32,
    #[serde(default)]
    pub rb_offset: u32,
    #[serde(default)]
    pub start_symbol: u32,
    #[serde(default)]
    pub slot_offset: u32,
    pub periodicity: u32,
    #[serde(default = "one")]
    pub repetition: u32,
    pub n_rb: u32,
}

fn one() -> u32 {
    1
}

impl PrsConfig {
    /// Comb-12, 12 symbols, one slot per 10240*2^mu period, no muting.
    pub fn positioning_default(cell_id: u32, mu: u8, n_rb: u32) -> Self {
        Self {
            cell_id,
            resource_id: 0,
            comb_size: 12,
            n_symbols: 12,
            re_offset: 0,
            rb_offset: 0,
            start_symbol: 0,
            slot_offset: 0,
            periodicity: 10240 << mu,
            repetition: 1,
            n_rb,
        }
    }

    pub fn validate(&self, mu: u8) -> Result<(), GridError> {
        numerology_params(mu)?;
        prs_re_offsets(self.comb_size, self.n_symbols)?;
        if self.re_offset >= self.comb_size {
            return Err(invalid(format!(
                "PRS RE offset {} must be below the comb size {}",
                self.re_offset, self.comb_size
            )));
        }
        if self.start_symbol + self.n_symbols > SYMBOLS_PER_SLOT {
            return Err(invalid(format!(
                "PRS symbols {}..{} do not fit in a slot",
                self.start_symbol,
                self.start_symbol + self.n_symbols
            )));
        }
        let scale = 1u32 << mu;
        if !PRS_PERIODS.iter().any(|p| p * scale == self.periodicity) {
            return Err(invalid(format!(
                "PRS periodicity {} is not 2^{mu} times an allowed value",
                self.periodicity
            )));
        }
        if self.slot_offset >= self.periodicity {
            return Err(invalid(format!(
                "PRS slot offset {} must be below the periodicity {}",
                self.slot_offset, self.periodicity
            )));
        }
        if self.repetition == 0 || self.repetition > self.periodicity {
            return Err(invalid("PRS repetition must be in 1..=periodicity".into()));
        }
        if self.n_rb == 0 {
            return Err(invalid("PRS N_RB must be >= 1".into()));
        }
        Ok(())
    }

    pub fn active_in_slot(&self, slot: u64) -> bool {
        occasion_active(slot, self.slot_offset, self.periodicity, self.repetition)
    }

    /// Occupied `(symbol, subcarrier)` cells in an active slot.
    pub fn resource_elements(&self) -> Result<Vec<(u32, u32)>, GridError> {
        let offsets = prs_re_offsets(self.comb_size, self.n_symbols)?;
        let first = self.rb_offset * SUBCARRIERS_PER_RB;
        let per_symbol = self.n_rb * SUBCARRIERS_PER_RB / self.comb_size;
        Ok(comb_cells(offsets, self.start_symbol, first, self.comb_size, self.re_offset, per_symbol))
    }
}

fn comb_cells(offsets: &[u32], start_symbol: u32, first_subcarrier: u32, comb: u32, comb_offset: u32, per_symbol: u32) -> Vec<(u32, u32)> {
    let mut cells = Vec::with_capacity(offsets.len() * per_symbol as usize);
    for (l, k_prime) in offsets.iter().enumerate() {
        let shift = (comb_offset + k_prime) % comb;
        for m in 0..per_symbol {
            cells.push((start_symbol + l as u32, first_subcarrier + comb * m + shift));
        }
    }
    cells
}

fn occasion_active(slot: u64, offset: u32, period: u32, repetition: u32) -> bool {
    let period = period as u64;
    let rel = (slot + period - (offset as u64 % period)) % period;
    rel < repetition as u64
}

fn invalid(msg: String) -> GridError {
    GridError::InvalidConfig(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SrsResourceType {
    Periodic,
    SemiPersistent,
    Aperiodic,
}

/// Uplink SRS resource. `m_srs` is the RB count selected by `(C_SRS, B_SRS)`
/// and is given explicitly rather than looked up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrsConfig {
    pub ue_id: u32,
    pub comb_size: u32,
    pub n_symbols: u32,
    /// Starting frequency (comb) offset `f0`.
    #[serde(default)]
    pub comb_offset: u32,
    #[serde(default)]
    pub start_symbol: u32,
    #[serde(default)]
    pub n_rrc: u32,
    #[serde(default)]
    pub b_srs: u32,
    #[serde(default = "max_c_srs")]
    pub c_srs: u32,
    #[serde(default)]
    pub b_hop: u32,
    #[serde(default = "max_m_srs")]
    pub m_srs: u32,
    pub resource_type: SrsResourceType,
    #[serde(default)]
    pub slot_offset: u32,
    pub periodicity: u32,
    #[serde(default = "one")]
    pub repetition: u32,
}

fn max_c_srs() -> u32 {
    63
}

fn max_m_srs() -> u32 {
    272
}

impl SrsConfig {
    /// Positioning SRS: comb-8, 8 symbols, full bandwidth, no hopping.
    pub fn positioning_default(ue_id: u32) -> Self {
        Self {
            ue_id,
            comb_size: 8,
            n_symbols: 8,
            comb_offset: 0,
            start_symbol: 0,
            n_rrc: 0,
            b_srs: 0,
            c_srs: 63,
            b_hop: 0,
            m_srs: 272,
            resource_type: SrsResourceType::Periodic,
            slot_offset: 0,
            periodicity: 10240,
            repetition: 2,
        }
    }

    pub fn validate(&self, mu: u8) -> Result<(), GridError> {
        let num = numerology_params(mu)?;
        srs_re_offsets(self.comb_size, self.n_symbols)?;
        if self.comb_offset >= self.comb_size {
            return Err(invalid(format!(
                "SRS comb offset {} must be below the comb size {}",
                self.comb_offset, self.comb_size
            )));
        }
        if self.start_symbol + self.n_symbols > SYMBOLS_PER_SLOT {
            return Err(invalid("SRS symbols do not fit in a slot".into()));
        }
        if self.n_rrc > 67 {
            return Err(invalid(format!("n_RRC {} outside 0..=67", self.n_rrc)));
        }
        if self.b_srs > 3 || self.b_hop > 3 {
            return Err(invalid("B_SRS and b_hop must be in 0..=3".into()));
        }
        if self.c_srs > 63 {
            return Err(invalid(format!("C_SRS {} outside 0..=63", self.c_srs)));
        }
        if self.b_hop < self.b_srs {
            return Err(GridError::Unsupported(
                "frequency hopping (b_hop < B_SRS) is not supported for positioning SRS".into(),
            ));
        }
        if self.m_srs == 0 || self.m_srs % 4 != 0 {
            return Err(invalid(format!("m_SRS {} must be a positive multiple of 4", self.m_srs)));
        }
        if self.repetition == 0 {
            return Err(invalid("SRS repetition must be >= 1".into()));
        }
        if self.resource_type != SrsResourceType::Aperiodic {
            if !SRS_PERIODS.contains(&self.periodicity) {
                return Err(invalid(format!("SRS periodicity {} not allowed", self.periodicity)));
            }
            let scs = num.scs_khz as u32;
            let allowed: &[u32] = match self.periodicity {
                20480 => &[30, 60, 120],
                40960 => &[60, 120],
                81920 => &[120],
                _ => &[],
            };
            if !allowed.is_empty() && !allowed.contains(&scs) {
                return Err(invalid(format!(
                    "SRS periodicity {} not applicable at {scs} kHz",
                    self.periodicity
                )));
            }
            if self.slot_offset >= self.periodicity {
                return Err(invalid("SRS slot offset must be below the periodicity".into()));
            }
        }
        Ok(())
    }

    pub fn active_in_slot(&self, slot: u64) -> bool {
        match self.resource_type {
            SrsResourceType::Aperiodic => {
                slot >= self.slot_offset as u64 && slot < (self.slot_offset + self.repetition) as u64
            }
            _ => occasion_active(slot, self.slot_offset, self.periodicity, self.repetition),
        }
    }

    pub fn resource_elements(&self) -> Result<Vec<(u32, u32)>, GridError> {
        let offsets = srs_re_offsets(self.comb_size, self.n_symbols)?;
        let first = self.n_rrc * 4 * SUBCARRIERS_PER_RB;
        let per_symbol = self.m_srs * SUBCARRIERS_PER_RB / self.comb_size;
        Ok(comb_cells(offsets, self.start_symbol, first, self.comb_size, self.comb_offset, per_symbol))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsbConfig {
    pub cell_id: u32,
    pub case: SsbCase,
    pub carrier_ghz: f64,
    #[serde(default)]
    pub subcarrier_offset: u32,
    /// Burst periodicity in milliseconds.
    #[serde(default = "ssb_period_ms")]
    pub periodicity_ms: u32,
}

fn ssb_period_ms() -> u32 {
    20
}

impl SsbConfig {
    pub fn validate(&self, mu: u8) -> Result<(), GridError> {
        if self.case.mu() != mu {
            return Err(invalid(format!(
                "SSB case {:?} uses {} kHz, grid numerology is mu={mu}",
                self.case,
                self.case.scs_khz()
            )));
        }
        if !numerology_params(mu)?.supports_sync {
            return Err(GridError::Unsupported(format!("mu={mu} does not carry synchronization")));
        }
        if ![5, 10, 20, 40, 80, 160].contains(&self.periodicity_ms) {
            return Err(invalid(format!("SSB periodicity {} ms not allowed", self.periodicity_ms)));
        }
        ssb_start_symbols(self.case, self.carrier_ghz).map(|_| ())
    }

    pub fn n_ssb(&self) -> Result<usize, GridError> {
        ssb_start_symbols(self.case, self.carrier_ghz).map(|s| s.len())
    }
}

/// Any resource-mapped reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "signal", rename_all = "lowercase")]
pub enum SignalConfig {
    Prs(PrsConfig),
    Srs(SrsConfig),
    Ssb(SsbConfig),
}

impl SignalConfig {
    pub fn validate(&self, mu: u8) -> Result<(), GridError> {
        match self {
            SignalConfig::Prs(c) => c.validate(mu),
            SignalConfig::Srs(c) => c.validate(mu),
            SignalConfig::Ssb(c) => c.validate(mu),
        }
    }

    fn kind(&self) -> SignalKind {
        match self {
            SignalConfig::Prs(_) => SignalKind::Prs,
            SignalConfig::Srs(_) => SignalKind::Srs,
            SignalConfig::Ssb(_) => SignalKind::Ssb,
        }
    }

    fn owner(&self) -> u32 {
        match self {
            SignalConfig::Prs(c) => c.cell_id,
            SignalConfig::Srs(c) => c.ue_id,
            SignalConfig::Ssb(c) => c.cell_id,
        }
    }
}

/// Range of absolute slot indices covered by a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub start: u64,
    pub count: u64,
}

impl SlotSpan {
    pub fn new(start: u64, count: u64) -> Self {
        Self { start, count }
    }

    pub fn slots(&self) -> std::ops::Range<u64> {
        self.start..self.start + self.count
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReIndex {
    pub slot: u64,
    pub symbol: u32,
    pub subcarrier: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceElement {
    pub kind: SignalKind,
    pub cell_id: u32,
    /// Resource (PRS/SRS) or SSB beam index.
    pub resource: u32,
    pub value: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub slot: u64,
    pub symbol: u32,
    pub subcarrier: u32,
    pub cells: [u32; 2],
}

/// Sparse time-frequency occupancy for a span of slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    pub mu: u8,
    pub span: SlotSpan,
    entries: BTreeMap<ReIndex, ResourceElement>,
}

impl ResourceGrid {
    pub fn empty(mu: u8, span: SlotSpan) -> Self {
        Self {
            mu,
            span,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: &ReIndex) -> Option<&ResourceElement> {
        self.entries.get(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ReIndex, &ResourceElement)> {
        self.entries.iter()
    }

    /// Inserts an element, returning the one it displaced.
    pub fn insert(&mut self, idx: ReIndex, re: ResourceElement) -> Option<ResourceElement> {
        self.entries.insert(idx, re)
    }

    /// Highest occupied subcarrier index plus one.
    pub fn subcarrier_extent(&self) -> u32 {
        self.entries.keys().map(|k| k.subcarrier + 1).max().unwrap_or(0)
    }

    /// Sub-grid with the elements accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&ReIndex, &ResourceElement) -> bool) -> ResourceGrid {
        ResourceGrid {
            mu: self.mu,
            span: self.span,
            entries: self
                .entries
                .iter()
                .filter(|(k, v)| keep(k, v))
                .map(|(k, v)| (*k, *v))
                .collect(),
        }
    }

    /// Elements of one cell and signal kind.
    pub fn for_cell(&self, kind: SignalKind, cell_id: u32) -> ResourceGrid {
        self.filtered(|_, re| re.kind == kind && re.cell_id == cell_id)
    }
}

/// Unit-magnitude QPSK symbol stream seeded by signal kind, owner and resource.
pub fn qpsk_sequence(kind: SignalKind, owner: u32, resource: u32) -> impl Iterator<Item = Complex64> {
    let seed = (kind.seed_tag() << 56) ^ ((owner as u64) << 24) ^ resource as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || {
        let bits: u8 = rng.random_range(0..4);
        let re = if bits & 1 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
        let im = if bits & 2 == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
        Complex64::new(re, im)
    })
}

/// Maps every configured signal into the slots of `span`.
///
/// Fails with the full collision list when two signals claim the same
/// resource element.
pub fn map_to_grid(configs: &[SignalConfig], span: SlotSpan, mu: u8) -> Result<ResourceGrid, GridError> {
    let (grid, collisions) = map_with_collisions(configs, span, mu)?;
    if collisions.is_empty() {
        Ok(grid)
    } else {
        Err(GridError::Collisions(collisions))
    }
}

/// Like [`map_to_grid`] but returns the collisions alongside the grid. The
/// first writer keeps a contested element.
pub fn map_with_collisions(configs: &[SignalConfig], span: SlotSpan, mu: u8) -> Result<(ResourceGrid, Vec<Collision>), GridError> {
    for c in configs {
        c.validate(mu)?;
    }
    let mut grid = ResourceGrid::empty(mu, span);
    let mut collisions = Vec::new();
    let slots_per_half_frame = 5u64 << mu;
    for cfg in configs {
        let kind = cfg.kind();
        let owner = cfg.owner();
        let mut place = |grid: &mut ResourceGrid, idx: ReIndex, resource: u32, value: Complex64| {
            match grid.entries.get(&idx) {
                Some(existing) => collisions.push(Collision {
                    slot: idx.slot,
                    symbol: idx.symbol,
                    subcarrier: idx.subcarrier,
                    cells: [existing.cell_id, owner],
                }),
                None => {
                    grid.entries.insert(
                        idx,
                        ResourceElement {
                            kind,
                            cell_id: owner,
                            resource,
                            value,
                        },
                    );
                }
            }
        };
        match cfg {
            SignalConfig::Prs(c) => {
                let cells = c.resource_elements()?;
                let mut seq = qpsk_sequence(kind, owner, c.resource_id);
                for slot in span.slots().filter(|s| c.active_in_slot(*s)) {
                    for &(symbol, subcarrier) in &cells {
                        let v = seq.next().unwrap_or_default();
                        place(&mut grid, ReIndex { slot, symbol, subcarrier }, c.resource_id, v);
                    }
                }
            }
            SignalConfig::Srs(c) => {
                let cells = c.resource_elements()?;
                let mut seq = qpsk_sequence(kind, owner, 0);
                for slot in span.slots().filter(|s| c.active_in_slot(*s)) {
                    for &(symbol, subcarrier) in &cells {
                        let v = seq.next().unwrap_or_default();
                        place(&mut grid, ReIndex { slot, symbol, subcarrier }, 0, v);
                    }
                }
            }
            SignalConfig::Ssb(c) => {
                let starts = ssb_start_symbols(c.case, c.carrier_ghz)?;
                let period = c.periodicity_ms as u64 * (1u64 << mu);
                for (beam, start) in starts.iter().enumerate() {
                    let mut seq = qpsk_sequence(kind, owner, beam as u32);
                    for slot in span.slots() {
                        let in_period = slot % period;
                        if in_period >= slots_per_half_frame {
                            continue;
                        }
                        for sym in *start..start + SSB_SYMBOLS {
                            let abs = sym as u64;
                            if abs / SYMBOLS_PER_SLOT as u64 != in_period {
                                continue;
                            }
                            let symbol = (abs % SYMBOLS_PER_SLOT as u64) as u32;
                            for k in 0..SSB_SUBCARRIERS {
                                let v = seq.next().unwrap_or_default();
                                let subcarrier = c.subcarrier_offset + k;
                                place(&mut grid, ReIndex { slot, symbol, subcarrier }, beam as u32, v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((grid, collisions))
}

/// Contents of a grid configuration file (`[[prs]]`, `[[srs]]`, `[[ssb]]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub mu: u8,
    #[serde(default)]
    pub slot_start: u64,
    #[serde(default = "default_slot_count")]
    pub slot_count: u64,
    #[serde(default)]
    pub prs: Vec<PrsConfig>,
    #[serde(default)]
    pub srs: Vec<SrsConfig>,
    #[serde(default)]
    pub ssb: Vec<SsbConfig>,
}

fn default_slot_count() -> u64 {
    20
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self, GridError> {
        toml::from_str(text).map_err(|e| GridError::InvalidConfig(e.to_string()))
    }

    pub fn signals(&self) -> Vec<SignalConfig> {
        self.prs
            .iter()
            .cloned()
            .map(SignalConfig::Prs)
            .chain(self.srs.iter().cloned().map(SignalConfig::Srs))
            .chain(self.ssb.iter().cloned().map(SignalConfig::Ssb))
            .collect()
    }

    pub fn span(&self) -> SlotSpan {
        SlotSpan::new(self.slot_start, self.slot_count)
    }
}

/// Machine-readable result of validating a grid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCheckReport {
    pub valid: bool,
    pub mu: u8,
    pub slot_start: u64,
    pub slot_count: u64,
    pub occupied_elements: usize,
    pub collisions: Vec<Collision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn grid_check(config: &GridConfig) -> GridCheckReport {
    let mut report = GridCheckReport {
        valid: false,
        mu: config.mu,
        slot_start: config.slot_start,
        slot_count: config.slot_count,
        occupied_elements: 0,
        collisions: Vec::new(),
        error: None,
    };
    match map_with_collisions(&config.signals(), config.span(), config.mu) {
        Ok((grid, collisions)) => {
            report.valid = collisions.is_empty();
            report.occupied_elements = grid.len();
            report.collisions = collisions;
        }
        Err(e) => report.error = Some(e.to_string()),
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    #[test]
    fn numerology_examples() {
        let n0 = numerology_params(0).unwrap();
        assert_eq!(n0.scs_khz, 15.0);
        assert_eq!(n0.max_bandwidth_mhz, 50.0);
        assert_eq!(n0.symbol_us, 66.7);
        assert_eq!(n0.ranging_m, Some(6.00));
        let n3 = numerology_params(3).unwrap();
        assert_eq!((n3.scs_khz, n3.max_bandwidth_mhz, n3.ranging_m), (120.0, 400.0, Some(0.75)));
        let n4 = numerology_params(4).unwrap();
        assert!(!n4.supports_data && n4.supports_sync);
        assert!(!numerology_params(2).unwrap().supports_sync);
        assert_eq!(numerology_params(7), Err(GridError::InvalidNumerology(7)));
    }

    #[test]
    fn bandwidth_examples() {
        assert_relative_eq!(bandwidth(1, 0).unwrap(), 180e3, max_relative = 1e-15);
        assert_relative_eq!(bandwidth(272, 1).unwrap(), 97.92e6, max_relative = 1e-15);
        assert_relative_eq!(bandwidth(272, 3).unwrap(), 391.68e6, max_relative = 1e-15);
        assert!(matches!(bandwidth(300, 1), Err(GridError::OverBudget { .. })));
        assert!(bandwidth(0, 1).is_err());
    }

    #[test]
    fn data_rate_examples() {
        assert_eq!(data_rate(&[]).unwrap(), 0.0);
        let single = CarrierParams {
            layers: 1,
            modulation_order: 2,
            scaling: 1.0,
            n_rb: 1,
            mu: 0,
            overhead: Overhead::None,
        };
        // 1e-6 * 2 * 948/1024 * 12 / (1/15 kHz)
        assert_relative_eq!(data_rate(&[single]).unwrap(), 0.333_281_25, max_relative = 1e-12);
        let big = CarrierParams {
            layers: 8,
            modulation_order: 8,
            scaling: 1.0,
            n_rb: 272,
            mu: 1,
            overhead: Overhead::Fr1Downlink,
        };
        // hand evaluation: 64 * 0.92578125 * 3264 * 30e3 * 0.86 * 1e-6
        assert_relative_eq!(data_rate(&[big]).unwrap(), 4_989.513_6, max_relative = 1e-9);
        let bad = CarrierParams { scaling: 0.5, ..single };
        assert!(data_rate(&[bad]).is_err());
    }

    #[test]
    fn sampling_resolution_examples() {
        let (ts, dr) = sampling_resolution(0, 2048).unwrap();
        assert!((ts * 1e9 - 32.55).abs() < 0.005);
        assert!((dr - 9.76).abs() < 0.005);
        let (ts, dr) = sampling_resolution(3, 4096).unwrap();
        assert!((ts * 1e9 - 2.03).abs() < 0.005);
        // printed 60.8 cm follows from the rounded 2.03 ns; propagate that rounding
        assert!(dr > 2.025e-9 * SPEED_OF_LIGHT && dr < 2.035e-9 * SPEED_OF_LIGHT);
        let (ts, dr) = sampling_resolution(6, 4096).unwrap();
        assert!((ts * 1e9 - 0.25).abs() < 0.005);
        assert!((dr * 100.0 - 7.6).abs() < 0.05);
        assert!(sampling_resolution(0, 1000).is_err());
    }

    #[test]
    fn offset_table_examples() {
        assert_eq!(prs_re_offsets(4, 4).unwrap(), &[0, 2, 1, 3]);
        assert_eq!(prs_re_offsets(2, 2).unwrap(), &[0, 1]);
        assert_eq!(prs_re_offsets(12, 12).unwrap(), &[0, 6, 3, 9, 1, 7, 4, 10, 2, 8, 5, 11]);
        assert_eq!(srs_re_offsets(8, 4).unwrap(), &[0, 4, 2, 6]);
        assert_eq!(srs_re_offsets(2, 1).unwrap(), &[0]);
        assert_eq!(srs_re_offsets(4, 12).unwrap(), &[0, 2, 1, 3, 0, 2, 1, 3, 0, 2, 1, 3]);
        assert!(matches!(prs_re_offsets(4, 2), Err(GridError::UnsupportedCombination { .. })));
        assert!(srs_re_offsets(8, 1).is_err());
    }

    #[test]
    fn offset_tables_are_consistent() {
        let prs = [2, 4, 6, 12].iter().flat_map(|k| [2, 4, 6, 12].map(|n| (*k, n, prs_re_offsets(*k, n))));
        let srs = [2, 4, 8].iter().flat_map(|k| [1, 2, 4, 8, 12].map(|n| (*k, n, srs_re_offsets(*k, n))));
        for (k, n, row) in prs.chain(srs) {
            if let Ok(row) = row {
                assert_eq!(row.len(), n as usize);
                assert!(row.iter().all(|o| *o < k));
            }
        }
    }

    #[test]
    fn prs_full_staggering() {
        for (k, n) in [(2, 2), (4, 4), (6, 6), (12, 12), (4, 12)] {
            let cfg = PrsConfig {
                comb_size: k,
                n_symbols: n,
                ..PrsConfig::positioning_default(1, 0, 4)
            };
            let residues: BTreeSet<u32> = cfg.resource_elements().unwrap().iter().map(|(_, sc)| sc % k).collect();
            assert_eq!(residues, (0..k).collect());
        }
    }

    #[test]
    fn ssb_examples() {
        assert_eq!(ssb_start_symbols(SsbCase::A, 2.0).unwrap(), vec![2, 8, 16, 22]);
        assert_eq!(ssb_start_symbols(SsbCase::B, 2.0).unwrap(), vec![4, 8, 16, 20]);
        let d = ssb_start_symbols(SsbCase::D, 28.0).unwrap();
        assert_eq!(d.len(), 64);
        assert_eq!(&d[..4], &[4, 8, 16, 20]);
        assert!(ssb_start_symbols(SsbCase::D, 3.5).is_err());
        assert!(ssb_start_symbols(SsbCase::A, 28.0).is_err());
    }

    #[test]
    fn ssb_patterns_are_increasing_with_table_counts() {
        for case in [SsbCase::A, SsbCase::B, SsbCase::C, SsbCase::D, SsbCase::E] {
            for fc in [2.0, 3.5, 28.0] {
                if let Ok(s) = ssb_start_symbols(case, fc) {
                    assert!(s.windows(2).all(|w| w[0] < w[1]), "{case:?} {fc}");
                    assert_eq!(s.len() as u32, ssb_count(fc));
                }
            }
        }
    }

    #[test]
    fn prs_validation() {
        let mut c = PrsConfig::positioning_default(1, 1, 24);
        assert!(c.validate(1).is_ok());
        c.periodicity = 5;
        assert!(c.validate(1).is_err());
        c.periodicity = 20;
        c.slot_offset = 20;
        assert!(c.validate(1).is_err());
        c.slot_offset = 0;
        c.re_offset = 12;
        assert!(c.validate(1).is_err());
    }

    #[test]
    fn srs_validation() {
        let c = SrsConfig::positioning_default(7);
        assert!(c.validate(1).is_ok());
        let long = SrsConfig { periodicity: 81920, ..c.clone() };
        assert!(long.validate(1).is_err());
        assert!(long.validate(3).is_ok());
        let hop = SrsConfig { b_srs: 2, b_hop: 1, ..c.clone() };
        assert!(matches!(hop.validate(1), Err(GridError::Unsupported(_))));
        let bad = SrsConfig { comb_size: 8, n_symbols: 1, ..c };
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn staggered_prs_slot_offsets_do_not_collide() {
        let a = PrsConfig::positioning_default(1, 1, 24);
        let b = PrsConfig {
            cell_id: 2,
            slot_offset: 2,
            ..a.clone()
        };
        let grid = map_to_grid(&[SignalConfig::Prs(a), SignalConfig::Prs(b)], SlotSpan::new(0, 4), 1).unwrap();
        assert_eq!(grid.len(), 2 * 12 * 24);
    }

    #[test]
    fn identical_prs_collide_everywhere() {
        let a = PrsConfig::positioning_default(1, 1, 24);
        let b = PrsConfig { cell_id: 2, ..a.clone() };
        let err = map_to_grid(&[SignalConfig::Prs(a), SignalConfig::Prs(b)], SlotSpan::new(0, 1), 1).unwrap_err();
        match err {
            GridError::Collisions(c) => {
                assert_eq!(c.len(), 12 * 24);
                assert!(c.iter().all(|c| c.cells == [1, 2]));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn comb2_re_offsets_share_a_slot() {
        let a = PrsConfig {
            comb_size: 2,
            n_symbols: 2,
            ..PrsConfig::positioning_default(1, 0, 4)
        };
        let b = PrsConfig {
            cell_id: 2,
            re_offset: 1,
            ..a.clone()
        };
        let grid = map_to_grid(&[SignalConfig::Prs(a.clone()), SignalConfig::Prs(b.clone())], SlotSpan::new(0, 1), 0).unwrap();
        // brute force: every (symbol, subcarrier) of both resources is distinct
        let ca: BTreeSet<_> = a.resource_elements().unwrap().into_iter().collect();
        let cb: BTreeSet<_> = b.resource_elements().unwrap().into_iter().collect();
        assert!(ca.is_disjoint(&cb));
        assert_eq!(grid.len(), ca.len() + cb.len());
    }

    #[test]
    fn ssb_grid_occupies_four_symbols_by_240() {
        let cfg = SsbConfig {
            cell_id: 3,
            case: SsbCase::A,
            carrier_ghz: 2.0,
            subcarrier_offset: 0,
            periodicity_ms: 20,
        };
        let grid = map_to_grid(&[SignalConfig::Ssb(cfg)], SlotSpan::new(0, 2), 0).unwrap();
        assert_eq!(grid.len(), 4 * 4 * 240);
        let first = grid.iter().next().unwrap().0;
        assert_eq!((first.slot, first.symbol), (0, 2));
    }

    #[test]
    fn qpsk_is_unit_magnitude_and_cell_distinct() {
        let a: Vec<_> = qpsk_sequence(SignalKind::Prs, 1, 0).take(64).collect();
        let b: Vec<_> = qpsk_sequence(SignalKind::Prs, 2, 0).take(64).collect();
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-15));
        assert_ne!(a, b);
        let again: Vec<_> = qpsk_sequence(SignalKind::Prs, 1, 0).take(64).collect();
        assert_eq!(a, again);
    }

    #[test]
    fn grid_config_parses_and_reports() {
        let text = r#"
            mu = 1
            slot_count = 4

            [[prs]]
            cell_id = 1
            comb_size = 12
            n_symbols = 12
            periodicity = 20480
            n_rb = 24

            [[prs]]
            cell_id = 2
            comb_size = 12
            n_symbols = 12
            periodicity = 20480
            n_rb = 24
        "#;
        let cfg = GridConfig::from_toml(text).unwrap();
        let report = grid_check(&cfg);
        assert!(!report.valid);
        assert_eq!(report.collisions.len(), 12 * 24);
    }
}
