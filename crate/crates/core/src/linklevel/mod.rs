//! Signal-level measurement extraction.
//!
//! OFDM modulation of a [`ResourceGrid`](crate::grid5g::ResourceGrid), a
//! tapped-delay channel built from the obstacle geometry, thermal noise,
//! correlation-based TOA estimation and MUSIC angle estimation.

mod array;
mod channel;
mod ofdm;
mod toa;

pub use array::{
    music_aoa, simulate_snapshots, srs_snapshots, steering_vector, ArraySnapshot, MusicGrid, MusicResult,
    UniformRectArray,
};
pub use channel::{add_awgn, add_awgn_snr, apply_channel, noise_power, ChannelConfig, Path, TapChannel, BOLTZMANN};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, rsrp, OfdmWaveform};
pub use toa::{estimate_toa, estimate_toa_with, PeakMode, ToaConfig, ToaEstimator};

use crate::geometry::GeometryError;
use crate::grid5g::GridError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinkError {
    #[error("grid needs {needed} subcarriers but the FFT has {n_fft}")]
    GridTooWide { needed: u32, n_fft: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("path delay {delay_s} s exceeds the waveform duration {duration_s} s")]
    DelayOverflow { delay_s: f64, duration_s: f64 },
    #[error("no correlation peak above the detection threshold")]
    DetectionFailure,
    #[error("{sources} sources cannot be resolved with {elements} array elements")]
    RankDeficient { sources: usize, elements: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
