//! Multi-channel pulse sequences: a builder, a line-oriented text format and a
//! compiler to piecewise-constant rotating-frame Hamiltonians.
//!
//! Time is kept in integer picoseconds so that segment edges line up exactly.

mod builder;
mod compile;
mod dsl;
mod sequences;

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::SequenceBuilder;
pub use compile::{compile, frames_for, segments_to_json, CompiledSequence, Segment, Step};
pub use dsl::{parse_sequence, print_sequence};
pub use sequences::{build_deer, build_spin_lock, build_spin_lock_with, five_line_tones, DeerSpec, RfSpec, SpinLockSpec};

/// Picoseconds.
pub type Ps = i64;

pub const PS_PER_US: f64 = 1e6;
/// Name of the implicit channel that carries optical resets.
pub const OPTICAL_CHANNEL: &str = "optical";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SequenceError {
    #[error("line {line}, column {column}: expected {expected}, found {found}")]
    Syntax { line: usize, column: usize, expected: String, found: String },

    #[error("line {line}: pulse `{second}` overlaps pulse `{first}` on channel `{channel}`")]
    Overlap { line: usize, channel: String, first: String, second: String },

    #[error("line {line}: unknown channel `{name}`")]
    UnknownChannel { line: usize, name: String },

    #[error("line {line}: {what} has negative duration")]
    NegativeDuration { line: usize, what: String },

    #[error("no readout")]
    NoReadout,

    #[error("line {line}: {message}")]
    Semantic { line: usize, message: String },
}

/// Convert microseconds to the nearest picosecond, rejecting values that do not fit.
pub fn us_to_ps(us: f64) -> Option<Ps> {
    let ps = (us * PS_PER_US).round();
    if ps.is_finite() && ps.abs() < 9.0e18 {
        Some(ps as Ps)
    } else {
        None
    }
}

pub fn ps_to_us(ps: Ps) -> f64 {
    ps as f64 / PS_PER_US
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Nv,
    /// One P1 ESR line, 1-based in ascending frequency.
    P1Line(u8),
    AllP1,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Nv => write!(f, "nv"),
            Target::P1Line(k) => write!(f, "p1:{k}"),
            Target::AllP1 => write!(f, "p1"),
        }
    }
}

/// One frequency component of a channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// Offset from the channel carrier, MHz.
    pub offset_mhz: f64,
    /// Rabi frequency at unit pulse amplitude, MHz.
    pub amp_mhz: f64,
    pub phase_rad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub target: Target,
    pub carrier_mhz: f64,
    /// Empty for a single-frequency channel driven at the carrier; then a
    /// pulse's `amp` is its Rabi frequency in MHz. Otherwise `amp` scales the tones.
    pub tones: Vec<Tone>,
}

impl Channel {
    pub fn new(name: impl Into<String>, target: Target, carrier_mhz: f64) -> Self {
        Self { name: name.into(), target, carrier_mhz, tones: Vec::new() }
    }

    pub fn with_tone(mut self, offset_mhz: f64, amp_mhz: f64, phase_rad: f64) -> Self {
        self.tones.push(Tone { offset_mhz, amp_mhz, phase_rad });
        self
    }

    /// `(absolute frequency, Rabi frequency, phase)` for each component at pulse amplitude `amp`.
    pub fn components(&self, amp: f64, phase_rad: f64) -> Vec<(f64, f64, f64)> {
        if self.tones.is_empty() {
            vec![(self.carrier_mhz, amp, phase_rad)]
        } else {
            self.tones.iter().map(|t| (self.carrier_mhz + t.offset_mhz, t.amp_mhz * amp, t.phase_rad + phase_rad)).collect()
        }
    }

    /// Rabi frequency that sets the length of a rotation pulse.
    pub fn rotation_rate(&self, amp: f64) -> f64 {
        if self.tones.is_empty() {
            amp
        } else {
            self.tones.iter().map(|t| t.amp_mhz).fold(0.0, f64::max) * amp
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PulseKind {
    /// Nutation by this angle; the duration follows from the amplitude.
    Rotation { angle_rad: f64 },
    /// Fixed-length drive, e.g. a spin lock.
    Hold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    /// `<channel>#<k>`, counting the channel's pulses in time order from 1.
    pub id: String,
    pub channel: String,
    pub start_ps: Ps,
    pub duration_ps: Ps,
    pub amp: f64,
    pub phase_rad: f64,
    pub kind: PulseKind,
}

impl Pulse {
    pub fn end_ps(&self) -> Ps {
        self.start_ps + self.duration_ps
    }
}

/// Optical re-initialization of the NV into `|0⟩`, applied at the window's end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reset {
    pub start_ps: Ps,
    pub duration_ps: Ps,
}

impl Reset {
    pub fn end_ps(&self) -> Ps {
        self.start_ps + self.duration_ps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Observable {
    /// NV `|ms=0⟩` population.
    P0,
    Sx,
    Sy,
    Sz,
    /// Summed P1 polarization in the lower dressed state of each P1's drive.
    BathPolarization,
}

impl Observable {
    pub fn keyword(self) -> &'static str {
        match self {
            Observable::P0 => "p0",
            Observable::Sx => "sx",
            Observable::Sy => "sy",
            Observable::Sz => "sz",
            Observable::BathPolarization => "bath-polarization",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Some(match s {
            "p0" => Observable::P0,
            "sx" => Observable::Sx,
            "sy" => Observable::Sy,
            "sz" => Observable::Sz,
            "bath-polarization" => Observable::BathPolarization,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub channels: Vec<Channel>,
    /// Sorted by start time, then channel declaration order.
    pub pulses: Vec<Pulse>,
    pub resets: Vec<Reset>,
    pub observable: Observable,
    /// Readout time; also the total duration.
    pub readout_ps: Ps,
}

impl PulseSequence {
    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn total_ps(&self) -> Ps {
        self.readout_ps
    }

    pub fn total_us(&self) -> f64 {
        ps_to_us(self.readout_ps)
    }
}

pub(crate) fn phase_keyword(phase: f64) -> Option<&'static str> {
    if phase == 0.0 {
        Some("X")
    } else if phase == PI / 2.0 {
        Some("Y")
    } else if phase == PI {
        Some("-X")
    } else if phase == 3.0 * PI / 2.0 {
        Some("-Y")
    } else {
        None
    }
}
