use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{us_to_ps, Channel, Observable, PulseSequence, SequenceBuilder, SequenceError, Target, Tone};
use crate::error::{Error, Result};
use crate::spin_models::{p1_transition_frequencies, P1Params};

const Y: f64 = PI / 2.0;

/// An RF channel aimed at the P1 bath.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfSpec {
    pub carrier_mhz: f64,
    pub tones: Vec<Tone>,
}

impl RfSpec {
    pub fn single(frequency_mhz: f64, omega_mhz: f64) -> Self {
        Self { carrier_mhz: frequency_mhz, tones: vec![Tone { offset_mhz: 0.0, amp_mhz: omega_mhz, phase_rad: 0.0 }] }
    }

    fn channel(&self) -> Channel {
        Channel { name: "rf".into(), target: Target::AllP1, carrier_mhz: self.carrier_mhz, tones: self.tones.clone() }
    }
}

/// One tone per P1 line, all at Rabi frequency `omega_mhz`.
pub fn five_line_tones(p1: &P1Params, b0_gauss: f64, omega_mhz: f64) -> Result<RfSpec> {
    let lines = p1_transition_frequencies(p1, b0_gauss)?;
    Ok(RfSpec {
        carrier_mhz: p1.gamma_mhz_per_gauss * b0_gauss,
        tones: lines.iter().map(|l| Tone { offset_mhz: l.offset_mhz, amp_mhz: omega_mhz, phase_rad: 0.0 }).collect(),
    })
}

fn time(us: f64, what: &str) -> Result<i64> {
    if !(us >= 0.0) {
        return Err(Error::invalid(format!("{what} must be non-negative, got {us} µs")));
    }
    us_to_ps(us).ok_or_else(|| Error::invalid(format!("{what} out of range")))
}

fn mw(nv_carrier_mhz: f64) -> Channel {
    Channel::new("mw", Target::Nv, nv_carrier_mhz)
}

/// Parameters of the spin-lock experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinLockSpec {
    pub nv_carrier_mhz: f64,
    pub omega_nv_mhz: f64,
    pub lock_us: f64,
    pub init_us: f64,
    pub rf: Option<RfSpec>,
}

/// 2 µs optical reset, π/2 about X, lock about Y for `lock_us` with the RF
/// (if any) on for exactly the lock window, 3π/2 about X, read `|0⟩`.
pub fn build_spin_lock(nv_carrier_mhz: f64, omega_nv_mhz: f64, lock_us: f64, rf: Option<&RfSpec>) -> Result<PulseSequence> {
    build_spin_lock_with(&SpinLockSpec { nv_carrier_mhz, omega_nv_mhz, lock_us, init_us: 2.0, rf: rf.cloned() })
}

pub fn build_spin_lock_with(spec: &SpinLockSpec) -> Result<PulseSequence> {
    let lock = time(spec.lock_us, "lock duration")?;
    let init = time(spec.init_us, "initialization")?;
    let mut b = SequenceBuilder::new();
    b.channel(mw(spec.nv_carrier_mhz))?;
    if let Some(rf) = &spec.rf {
        b.channel(rf.channel())?;
    }
    if init > 0 {
        b.reset(init, None)?;
    }
    b.rotation("mw", PI / 2.0, spec.omega_nv_mhz, 0.0, None)?;
    if lock > 0 {
        let start = b.cursor("mw")?;
        b.hold("mw", lock, spec.omega_nv_mhz, Y, None)?;
        if spec.rf.is_some() {
            b.hold("rf", lock, 1.0, 0.0, Some(start))?;
        }
    }
    b.rotation("mw", 3.0 * PI / 2.0, spec.omega_nv_mhz, 0.0, None)?;
    b.readout(Observable::P0, None)?;
    Ok(b.build()?)
}

/// Hahn echo on the NV with an RF pulse on the bath centred on the NV π pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeerSpec {
    pub nv_carrier_mhz: f64,
    pub omega_nv_mhz: f64,
    /// Free precession on each side of the refocusing window, µs.
    pub tau_us: f64,
    pub rf_frequency_mhz: f64,
    pub rf_omega_mhz: f64,
    pub rf_width_us: f64,
}

impl DeerSpec {
    pub fn new(nv_carrier_mhz: f64, omega_nv_mhz: f64, tau_us: f64, rf_frequency_mhz: f64, rf_omega_mhz: f64, rf_width_us: f64) -> Self {
        Self { nv_carrier_mhz, omega_nv_mhz, tau_us, rf_frequency_mhz, rf_omega_mhz, rf_width_us }
    }
}

/// π/2 - τ - [window] - τ - π/2, all NV pulses about X. The window is as
/// long as the longer of the NV π pulse and the RF pulse; both sit at its centre.
pub fn build_deer(spec: &DeerSpec) -> Result<PulseSequence> {
    let tau = time(spec.tau_us, "free precession time")?;
    let width = time(spec.rf_width_us, "RF width")?;
    if !(spec.rf_omega_mhz >= 0.0) {
        return Err(Error::invalid("RF amplitude must be non-negative"));
    }
    let mut b = SequenceBuilder::new();
    b.channel(mw(spec.nv_carrier_mhz))?;
    b.channel(Channel::new("rf", Target::AllP1, spec.rf_frequency_mhz))?;
    b.rotation("mw", PI / 2.0, spec.omega_nv_mhz, 0.0, None)?;
    let t90 = b.cursor("mw")?;
    let window_start = t90 + tau;
    // Length of the π pulse, from a throwaway builder.
    let t180 = {
        let mut probe = SequenceBuilder::new();
        probe.channel(mw(spec.nv_carrier_mhz))?;
        probe.rotation("mw", PI, spec.omega_nv_mhz, 0.0, None)?;
        probe.cursor("mw")?
    };
    let window = t180.max(width);
    b.rotation("mw", PI, spec.omega_nv_mhz, 0.0, Some(window_start + (window - t180) / 2))?;
    if width > 0 {
        b.hold("rf", width, spec.rf_omega_mhz, 0.0, Some(window_start + (window - width) / 2))?;
    }
    b.rotation("mw", PI / 2.0, spec.omega_nv_mhz, 0.0, Some(window_start + window + tau))?;
    b.readout(Observable::P0, None)?;
    b.build().map_err(|e: SequenceError| e.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_lock_timing() {
        let s = build_spin_lock(2511.6, 8.0, 50.0, None).unwrap();
        let d: Vec<i64> = s.pulses.iter().map(|p| p.duration_ps).collect();
        assert_eq!(d, vec![31_250, 50_000_000, 93_750]);
        assert_eq!(s.resets[0].duration_ps, 2_000_000);
        assert_eq!(s.pulses[1].phase_rad, Y);
        let rf = five_line_tones(&P1Params::default(), 128.0, 8.0).unwrap();
        let s = build_spin_lock(2511.6, 8.0, 50.0, Some(&rf)).unwrap();
        let rf_pulse = s.pulses.iter().find(|p| p.channel == "rf").unwrap();
        let lock = s.pulses.iter().find(|p| p.channel == "mw" && p.duration_ps == 50_000_000).unwrap();
        assert_eq!((rf_pulse.start_ps, rf_pulse.duration_ps), (lock.start_ps, lock.duration_ps));
        assert_eq!(s.channel("rf").unwrap().tones.len(), 5);
    }

    #[test]
    fn zero_lock_has_no_lock_pulse() {
        let s = build_spin_lock(2511.6, 8.0, 0.0, None).unwrap();
        assert_eq!(s.pulses.len(), 2);
        assert_eq!(s.pulses[1].start_ps, 2_031_250);
    }

    #[test]
    fn deer_window_is_centred() {
        let s = build_deer(&DeerSpec::new(2511.6, 8.0, 0.35, 358.4, 7.7, 0.065)).unwrap();
        let pi = s.pulses.iter().find(|p| p.channel == "mw" && p.duration_ps == 62_500).unwrap();
        let rf = s.pulses.iter().find(|p| p.channel == "rf").unwrap();
        assert_eq!(pi.duration_ps, 62_500);
        assert_eq!(rf.start_ps, 31_250 + 350_000);
        assert_eq!(pi.start_ps, rf.start_ps + 1_250);
        assert_eq!(s.pulses.last().unwrap().start_ps, 31_250 + 350_000 + 65_000 + 350_000);
        let wide = build_deer(&DeerSpec::new(2511.6, 8.0, 0.35, 358.4, 7.7, 0.5)).unwrap();
        let pi = wide.pulses.iter().find(|p| p.duration_ps == 62_500).unwrap();
        assert_eq!(pi.start_ps - 381_250, (500_000 - 62_500) / 2);
        assert!(build_deer(&DeerSpec::new(2511.6, 8.0, -1.0, 358.4, 7.7, 0.5)).is_err());
    }
}
