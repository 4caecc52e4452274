//! Monte-Carlo photon streams through the modified HOM interferometer:
//! polarizing beamsplitter, 50:50 beamsplitter, fiber beamsplitter on one
//! output arm, and two detectors.

mod detector;
mod experiment;
mod optics;
mod source;

pub use detector::{apply_dead_time, detect, detect_window, measure_dark_rate};
pub use experiment::{
    simulate, simulate_autocorrelation, EventCounts, ExperimentSetup, SimulationResult,
};
pub use optics::{fiber_split, interfere, InterferenceOutput, PairingStats};
pub use source::{
    background_probability, cw_background_rate_hz, cw_effective_rate_hz, cw_pump_rate_for,
    generate_segment, generate_stream, plan_segments, second_photon_probability, Segment,
    SHARD_SPAN_PS,
};

use crate::error::{Error, Result};

/// Which input port of the interferometer a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhotonSource {
    DotA,
    DotB,
    BackgroundA,
    BackgroundB,
}

impl PhotonSource {
    pub fn signal(side: Side) -> Self {
        match side {
            Side::A => PhotonSource::DotA,
            Side::B => PhotonSource::DotB,
        }
    }

    pub fn background(side: Side) -> Self {
        match side {
            Side::A => PhotonSource::BackgroundA,
            Side::B => PhotonSource::BackgroundB,
        }
    }

    pub fn is_signal(self) -> bool {
        matches!(self, PhotonSource::DotA | PhotonSource::DotB)
    }

    pub fn side(self) -> Side {
        match self {
            PhotonSource::DotA | PhotonSource::BackgroundA => Side::A,
            PhotonSource::DotB | PhotonSource::BackgroundB => Side::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonEvent {
    pub source: PhotonSource,
    pub emit_time_ps: i64,
    pub polarization_deg: f64,
    /// `None` under CW excitation.
    pub pulse_index: Option<u64>,
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DetectionRecord {
    pub time_ps: i64,
    pub detector: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dark_rate_hz: f64,
    pub jitter_fwhm_ps: f64,
    pub dead_time_ps: i64,
}

impl DetectorSpec {
    /// Lossless, noiseless, jitter-free detector.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate_hz: 0.0,
            jitter_fwhm_ps: 0.0,
            dead_time_ps: 0,
        }
    }

    /// InGaAs APD: 20% efficiency, 200 Hz dark counts, 200 ps resolution.
    pub fn ingaas_apd() -> Self {
        Self {
            efficiency: 0.2,
            dark_rate_hz: 200.0,
            jitter_fwhm_ps: 200.0,
            dead_time_ps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid("detector efficiency outside [0, 1]"));
        }
        if !(self.dark_rate_hz >= 0.0) || !self.dark_rate_hz.is_finite() {
            return Err(Error::invalid("detector dark_rate_hz must be >= 0"));
        }
        if !(self.jitter_fwhm_ps >= 0.0) {
            return Err(Error::invalid("detector jitter_fwhm_ps must be >= 0"));
        }
        if self.dead_time_ps < 0 {
            return Err(Error::invalid("detector dead_time_ps must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExcitationMode {
    Pulsed { rep_rate_hz: f64 },
    Cw { cw_rate_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationSpec {
    pub mode: ExcitationMode,
    /// Emission-time jitter from above-band excitation (pulsed only).
    pub pulse_jitter_ps: f64,
    pub duration_s: f64,
    pub seed: u64,
}

/// Emission-time jitter used when none is configured.
pub const DEFAULT_PULSE_JITTER_PS: f64 = 30.0;

impl ExcitationSpec {
    pub fn pulsed(rep_rate_hz: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            mode: ExcitationMode::Pulsed { rep_rate_hz },
            pulse_jitter_ps: DEFAULT_PULSE_JITTER_PS,
            duration_s,
            seed,
        }
    }

    pub fn cw(cw_rate_hz: f64, duration_s: f64, seed: u64) -> Self {
        Self {
            mode: ExcitationMode::Cw { cw_rate_hz },
            pulse_jitter_ps: 0.0,
            duration_s,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // Zero duration is allowed and produces empty streams.
        if !(self.duration_s >= 0.0) || !self.duration_s.is_finite() {
            return Err(Error::invalid(
                "excitation duration_s must be finite and >= 0",
            ));
        }
        if !(self.pulse_jitter_ps >= 0.0) {
            return Err(Error::invalid("pulse_jitter_ps must be >= 0"));
        }
        match self.mode {
            ExcitationMode::Pulsed { rep_rate_hz } if !(rep_rate_hz > 0.0) => {
                Err(Error::invalid("rep_rate_hz must be > 0"))
            }
            ExcitationMode::Cw { cw_rate_hz } if !(cw_rate_hz > 0.0) => {
                Err(Error::invalid("cw_rate_hz must be > 0"))
            }
            _ => Ok(()),
        }
    }

    pub fn duration_ps(&self) -> f64 {
        self.duration_s * 1e12
    }

    pub fn rep_period_ps(&self) -> Option<f64> {
        match self.mode {
            ExcitationMode::Pulsed { rep_rate_hz } => Some(1e12 / rep_rate_hz),
            ExcitationMode::Cw { .. } => None,
        }
    }
}

/// Half-waveplate setting before one beamsplitter input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Hwp {
    Parallel,
    Orthogonal,
}

impl std::str::FromStr for Hwp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Hwp::Parallel),
            "orthogonal" => Ok(Hwp::Orthogonal),
            other => Err(Error::invalid(format!(
                "hwp must be `parallel` or `orthogonal`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Hwp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Hwp::Parallel => "parallel",
            Hwp::Orthogonal => "orthogonal",
        })
    }
}

pub(crate) fn check_sorted(stream: &[PhotonEvent], what: &str) -> Result<()> {
    if stream
        .windows(2)
        .any(|w| w[1].emit_time_ps < w[0].emit_time_ps)
    {
        return Err(Error::invalid(format!("{what} is not time-sorted")));
    }
    Ok(())
}

pub(crate) fn sort_events(events: &mut [PhotonEvent]) {
    events.sort_by_key(|e| (e.emit_time_ps, e.source));
}
