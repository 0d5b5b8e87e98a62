//! Ensemble-averaged experiments: DEER spectra and Rabi curves on the bath,
//! NV spin locking with and without bath drive, and Hartmann-Hahn sweeps.

pub mod engine;
mod ensemble;
mod trace;

use serde::{Deserialize, Serialize};

pub use engine::{BlockSpectrum, BlockUnitary, Propagator};
pub use ensemble::{ensemble_average, Execution};
pub use trace::SignalTrace;

use crate::bath::{sample_bath_indexed, typical_coupling, BathSpec};
use crate::error::{Error, Result};
use crate::pulse::{
    build_deer, build_spin_lock_with, compile, five_line_tones, frames_for, DeerSpec, Observable, PulseSequence, RfSpec,
    SpinLockSpec,
};
use crate::quantum::{re, CMatrix, DensityState};
use crate::spin_models::{hh_mismatch, lac_field, p1_transition_frequencies, NvParams, P1Params, SpinSystem};

pub const CONFIG_SCHEMA: &str = "hhsim-experiment/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeerParams {
    pub omega_nv_mhz: f64,
    pub tau_us: f64,
    /// Defaults to the central P1 line.
    pub rf_frequency_mhz: Option<f64>,
    pub rf_omega_mhz: f64,
    pub rf_width_us: f64,
}

impl Default for DeerParams {
    fn default() -> Self {
        Self { omega_nv_mhz: 8.0, tau_us: 0.35, rf_frequency_mhz: None, rf_omega_mhz: 1.0 / (2.0 * 0.065), rf_width_us: 0.065 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RfDrive {
    Off,
    /// One tone on each of the five P1 lines.
    FiveLine { omega_mhz: f64 },
    /// One tone; defaults to the central line.
    Single {
        #[serde(default)]
        frequency_mhz: Option<f64>,
        omega_mhz: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinLockParams {
    pub omega_nv_mhz: f64,
    pub init_us: f64,
    pub lock_us: f64,
    pub rf: RfDrive,
    /// Phenomenological decay of the locked NV, applied after the coherent
    /// simulation. `None` disables it.
    pub t1rho_us: Option<f64>,
}

impl Default for SpinLockParams {
    fn default() -> Self {
        Self { omega_nv_mhz: 8.0, init_us: 2.0, lock_us: 50.0, rf: RfDrive::Off, t1rho_us: Some(290.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Protocol {
    Deer(DeerParams),
    SpinLock(SpinLockParams),
}

/// Sweep values: an explicit list, or `start..=stop` in steps of `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<SweepRange>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Sweep {
    pub fn list(parameter: impl Into<String>, values: Vec<f64>) -> Self {
        Self { parameter: parameter.into(), values: Some(values), range: None }
    }

    pub fn range(parameter: impl Into<String>, start: f64, stop: f64, step: f64) -> Self {
        Self { parameter: parameter.into(), values: None, range: Some(SweepRange { start, stop, step }) }
    }

    pub fn points(&self) -> Result<Vec<f64>> {
        let v = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if !(r.step > 0.0 && r.stop >= r.start && r.start.is_finite() && r.stop.is_finite()) {
                    return Err(Error::Config(format!("bad sweep range {}..{} step {}", r.start, r.stop, r.step)));
                }
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize + 1;
                (0..n).map(|k| r.start + k as f64 * r.step).collect()
            }
            _ => return Err(Error::Config("sweep needs exactly one of `values` or `range`".into())),
        };
        if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("sweep values must be finite and non-empty".into()));
        }
        Ok(v)
    }
}

/// Maps NV `|0⟩` population to signal: `a + b·P0`, plus optional Gaussian
/// noise of standard deviation `|b|/snr` on each averaged point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Readout {
    pub a: f64,
    pub b: f64,
    pub snr: Option<f64>,
}

impl Default for Readout {
    fn default() -> Self {
        Self { a: 0.0, b: 1.0, snr: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default)]
    pub name: String,
    pub b0_gauss: f64,
    #[serde(default)]
    pub nv: NvParams,
    #[serde(default)]
    pub p1: P1Params,
    #[serde(default)]
    pub bath: BathSpec,
    pub protocol: Protocol,
    pub sweep: Sweep,
    pub n_realizations: usize,
    #[serde(default)]
    pub readout: Readout,
    /// Spin lock only: also run the sweep with the RF switched off.
    #[serde(default)]
    pub with_rf_off_reference: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::Config(format!("unsupported schema `{}`, expected `{CONFIG_SCHEMA}`", self.schema)));
        }
        if !(self.b0_gauss >= 0.0 && self.b0_gauss.is_finite()) {
            return Err(Error::Config(format!("b0_gauss must be non-negative, got {}", self.b0_gauss)));
        }
        if self.n_realizations == 0 {
            return Err(Error::Config("n_realizations must be at least 1".into()));
        }
        if let Some(snr) = self.readout.snr {
            if !(snr > 0.0) {
                return Err(Error::Config(format!("snr must be positive, got {snr}")));
            }
        }
        if self.with_rf_off_reference && !matches!(self.protocol, Protocol::SpinLock(_)) {
            return Err(Error::Config("an RF-off reference only applies to spin locking".into()));
        }
        self.nv.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.p1.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.bath.validate().map_err(|e| Error::Config(e.to_string()))?;
        let points = self.sweep.points()?;
        // Build every sweep point once so that bad parameters fail here.
        for &v in &points {
            self.sequence_at(v).map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(format!("sweep value {v}: {other}")),
            })?;
        }
        Ok(())
    }

    fn central_line(&self) -> f64 {
        self.p1.gamma_mhz_per_gauss * self.b0_gauss
    }

    fn nv_carrier(&self) -> f64 {
        self.nv.transition_frequency(self.b0_gauss)
    }

    fn unknown_parameter(&self) -> Error {
        let kind = match self.protocol {
            Protocol::Deer(_) => "deer",
            Protocol::SpinLock(_) => "spin-lock",
        };
        Error::Config(format!("`{}` is not a sweepable {kind} parameter", self.sweep.parameter))
    }

    /// Protocol with the swept parameter set to `value`.
    pub fn protocol_at(&self, value: f64) -> Result<Protocol> {
        let mut p = self.protocol.clone();
        let name = self.sweep.parameter.as_str();
        match &mut p {
            Protocol::Deer(d) => match name {
                "omega_nv_mhz" => d.omega_nv_mhz = value,
                "tau_us" => d.tau_us = value,
                "rf_frequency_mhz" => d.rf_frequency_mhz = Some(value),
                "rf_omega_mhz" => d.rf_omega_mhz = value,
                "rf_width_us" => d.rf_width_us = value,
                _ => return Err(self.unknown_parameter()),
            },
            Protocol::SpinLock(s) => match (name, &mut s.rf) {
                ("omega_nv_mhz", _) => s.omega_nv_mhz = value,
                ("init_us", _) => s.init_us = value,
                ("lock_us", _) => s.lock_us = value,
                ("rf_omega_mhz", RfDrive::FiveLine { omega_mhz } | RfDrive::Single { omega_mhz, .. }) => *omega_mhz = value,
                ("rf_frequency_mhz", RfDrive::Single { frequency_mhz, .. }) => *frequency_mhz = Some(value),
                ("rf_omega_mhz" | "rf_frequency_mhz", _) => {
                    return Err(Error::Config(format!("`{name}` cannot be swept with this RF mode")))
                }
                _ => return Err(self.unknown_parameter()),
            },
        }
        Ok(p)
    }

    /// Pulse sequence for one sweep value.
    pub fn sequence_at(&self, value: f64) -> Result<PulseSequence> {
        self.sequence_for(&self.protocol_at(value)?, true)
    }

    fn sequence_for(&self, protocol: &Protocol, rf_on: bool) -> Result<PulseSequence> {
        match protocol {
            Protocol::Deer(d) => build_deer(&DeerSpec::new(
                self.nv_carrier(),
                d.omega_nv_mhz,
                d.tau_us,
                d.rf_frequency_mhz.unwrap_or(self.central_line()),
                d.rf_omega_mhz,
                d.rf_width_us,
            )),
            Protocol::SpinLock(s) => {
                let rf = if rf_on { self.rf_spec(&s.rf)? } else { None };
                build_spin_lock_with(&SpinLockSpec {
                    nv_carrier_mhz: self.nv_carrier(),
                    omega_nv_mhz: s.omega_nv_mhz,
                    lock_us: s.lock_us,
                    init_us: s.init_us,
                    rf,
                })
            }
        }
    }

    fn rf_spec(&self, rf: &RfDrive) -> Result<Option<RfSpec>> {
        Ok(match *rf {
            RfDrive::Off => None,
            RfDrive::FiveLine { omega_mhz } => Some(five_line_tones(&self.p1, self.b0_gauss, omega_mhz)?),
            RfDrive::Single { frequency_mhz, omega_mhz } => {
                Some(RfSpec::single(frequency_mhz.unwrap_or(self.central_line()), omega_mhz))
            }
        })
    }
}

/// NV in `|0⟩`, every P1 maximally mixed.
pub fn initial_state(system: &SpinSystem) -> Result<DensityState> {
    let mut locals = vec![system.nv_zero_projector()];
    locals.extend((0..system.p1_count()).map(|_| CMatrix::identity(2, 2) * re(0.5)));
    DensityState::product(system.space().clone(), &locals)
}

/// Noiseless signal of one realization at each sequence.
pub fn simulate_realization(cfg: &ExperimentConfig, seqs: &[(PulseSequence, f64)], index: u64) -> Result<Vec<f64>> {
    let bath = sample_bath_indexed(&cfg.bath, index)?;
    let system = SpinSystem::from_realization(cfg.b0_gauss, cfg.nv, cfg.p1, &bath)?;
    let compiled = seqs
        .iter()
        .map(|(s, _)| compile(s, &system, &frames_for(s, &system)?))
        .collect::<Result<Vec<_>>>()?;
    let p0 = Propagator::new().sweep(&initial_state(&system)?, &compiled)?;
    Ok(p0
        .into_iter()
        .zip(seqs)
        .map(|(p, &(_, decay))| cfg.readout.a + cfg.readout.b * (0.5 + (p - 0.5) * decay))
        .collect())
}

fn t1rho_factor(protocol: &Protocol) -> f64 {
    match protocol {
        Protocol::SpinLock(SpinLockParams { t1rho_us: Some(t), lock_us, .. }) => (-lock_us / t).exp(),
        _ => 1.0,
    }
}

fn run_variant(cfg: &ExperimentConfig, exec: Execution, rf_on: bool) -> Result<SignalTrace> {
    let points = cfg.sweep.points()?;
    let seqs = points
        .iter()
        .map(|&v| {
            let p = cfg.protocol_at(v)?;
            Ok((cfg.sequence_for(&p, rf_on)?, t1rho_factor(&p)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut mean, mut stderr) =
        ensemble_average(cfg.n_realizations, exec, |i| simulate_realization(cfg, &seqs, i as u64))?;
    if let Some(snr) = cfg.readout.snr {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let sigma = cfg.readout.b.abs() / snr;
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::numeric(e.to_string()))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.bath.seed ^ 0x5851_f42d_4c95_7f2d);
        rng.set_stream(u64::from(rf_on));
        for (m, s) in mean.iter_mut().zip(stderr.iter_mut()) {
            *m += normal.sample(&mut rng);
            *s = s.hypot(sigma);
        }
    }
    Ok(SignalTrace {
        parameter: cfg.sweep.parameter.clone(),
        sweep: points,
        mean,
        stderr,
        n_realizations: cfg.n_realizations,
        seed: cfg.bath.seed,
        config_hash: None,
    })
}

/// Every trace a config asks for, labelled. Spin-lock configs with an RF-off
/// reference give `rf_on` and `rf_off`; everything else gives one `signal`.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<(String, SignalTrace)>> {
    cfg.validate()?;
    let mut out = vec![(if cfg.with_rf_off_reference { "rf_on" } else { "signal" }.to_string(), run_variant(cfg, exec, true)?)];
    if cfg.with_rf_off_reference {
        out.push(("rf_off".to_string(), run_variant(cfg, exec, false)?));
    }
    Ok(out)
}

fn expect(cfg: &ExperimentConfig, deer: bool, parameters: &[&str]) -> Result<()> {
    let ok = matches!((&cfg.protocol, deer), (Protocol::Deer(_), true) | (Protocol::SpinLock(_), false));
    if !ok || !parameters.contains(&cfg.sweep.parameter.as_str()) {
        return Err(Error::Config(format!(
            "expected a {} protocol swept over {}",
            if deer { "deer" } else { "spin-lock" },
            parameters.join(" or ")
        )));
    }
    cfg.validate()
}

/// DEER signal against RF frequency.
pub fn run_deer_spectrum(cfg: &ExperimentConfig, exec: Execution) -> Result<SignalTrace> {
    expect(cfg, true, &["rf_frequency_mhz"])?;
    run_variant(cfg, exec, true)
}

/// DEER signal against RF pulse width.
pub fn run_deer_rabi(cfg: &ExperimentConfig, exec: Execution) -> Result<SignalTrace> {
    expect(cfg, true, &["rf_width_us"])?;
    run_variant(cfg, exec, true)
}

/// Spin-lock signal against lock duration, with the configured RF on or off.
pub fn run_spin_lock(cfg: &ExperimentConfig, rf_on: bool, exec: Execution) -> Result<SignalTrace> {
    expect(cfg, false, &["lock_us"])?;
    run_variant(cfg, exec, rf_on)
}

/// Spin-lock signal against the frequency of a single RF tone.
pub fn run_hh_frequency_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<SignalTrace> {
    expect(cfg, false, &["rf_frequency_mhz"])?;
    run_variant(cfg, exec, true)
}

/// Spin-lock signal against the RF Rabi frequency.
pub fn run_hh_power_sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<SignalTrace> {
    expect(cfg, false, &["rf_omega_mhz"])?;
    run_variant(cfg, exec, true)
}

/// Summed dressed-state polarization of the P1 spins after `seq`, starting
/// from [`initial_state`].
pub fn measure_bath_polarization(system: &SpinSystem, seq: &PulseSequence) -> Result<f64> {
    let mut seq = seq.clone();
    seq.observable = Observable::BathPolarization;
    let compiled = compile(&seq, system, &frames_for(&seq, system)?)?;
    let v = Propagator::new().sweep(&initial_state(system)?, std::slice::from_ref(&compiled))?;
    Ok(v[0])
}

/// Number of transfer cycles that fit in one bath `T1`.
pub fn cooling_budget(t1_us: f64, transfer_us: f64, init_us: f64) -> Result<u64> {
    let cycle = transfer_us + init_us;
    if !(t1_us >= 0.0 && transfer_us >= 0.0 && init_us >= 0.0 && cycle > 0.0 && t1_us.is_finite()) {
        return Err(Error::invalid(format!("bad cooling times: T1 {t1_us}, transfer {transfer_us}, init {init_us} µs")));
    }
    Ok((t1_us / cycle).floor() as u64)
}

/// Operating point suggested for a field and NV lock strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub b0_gauss: f64,
    pub nv_frequency_mhz: f64,
    pub p1_lines_mhz: Vec<f64>,
    /// RF Rabi frequency that meets the Hartmann-Hahn condition.
    pub matched_omega_p1_mhz: f64,
    pub typical_coupling_mhz: f64,
    /// Lock time for a complete flip-flop at the typical coupling.
    pub optimal_lock_us: f64,
    pub lac_field_gauss: f64,
}

pub fn predict(b0_gauss: f64, omega_nv_mhz: f64, nv: &NvParams, p1: &P1Params, bath: &BathSpec) -> Result<Prediction> {
    if !(omega_nv_mhz > 0.0 && omega_nv_mhz.is_finite()) {
        return Err(Error::invalid(format!("NV Rabi frequency must be positive, got {omega_nv_mhz}")));
    }
    let lines = p1_transition_frequencies(p1, b0_gauss)?;
    let d = typical_coupling(bath)?;
    let matched = omega_nv_mhz;
    debug_assert_eq!(hh_mismatch(omega_nv_mhz, matched), 0.0);
    Ok(Prediction {
        b0_gauss,
        nv_frequency_mhz: nv.transition_frequency(b0_gauss),
        p1_lines_mhz: lines.iter().map(|l| l.frequency_mhz).collect(),
        matched_omega_p1_mhz: matched,
        typical_coupling_mhz: d,
        // Flip-flop amplitude d/4 in the doubly dressed frame: full swap at 1/d.
        optimal_lock_us: 1.0 / d,
        lac_field_gauss: lac_field(nv, p1)?,
    })
}
