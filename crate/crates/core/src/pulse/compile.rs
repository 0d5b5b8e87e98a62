use serde_json::{json, Value};

use super::{ps_to_us, Channel, Observable, Ps, PulseSequence, Target};
use crate::error::{Error, Result};
use crate::quantum::{embed_product, re, CMatrix, Operator};
use crate::spin_models::{add_drives, Drive, FrameSpec, SpinSystem, NV_SITE};

/// Piecewise-constant evolution between two consecutive pulse edges.
#[derive(Clone, Debug)]
pub struct Segment {
    pub start_ps: Ps,
    pub duration_ps: Ps,
    pub hamiltonian: Operator,
    /// Ids of the pulses on during this segment.
    pub active: Vec<String>,
}

impl Segment {
    pub fn duration_us(&self) -> f64 {
        ps_to_us(self.duration_ps)
    }
}

#[derive(Clone, Debug)]
pub enum Step {
    Evolve(Segment),
    /// Replace the factor `site` by `state`, keeping the rest of the system.
    Reset { site: String, state: CMatrix },
}

#[derive(Clone, Debug)]
pub struct CompiledSequence {
    pub steps: Vec<Step>,
    pub observable: Operator,
    pub observable_kind: Observable,
    pub total_ps: Ps,
}

impl CompiledSequence {
    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.steps.iter().filter_map(|s| match s {
            Step::Evolve(seg) => Some(seg),
            Step::Reset { .. } => None,
        })
    }
}

fn target_sites(system: &SpinSystem, target: Target) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for name in system.site_names() {
        let hit = match target {
            Target::Nv => name == NV_SITE,
            Target::AllP1 => name != NV_SITE,
            Target::P1Line(k) => name != NV_SITE && system.line_of(name)? == usize::from(k),
        };
        if hit {
            out.push(name.clone());
        }
    }
    Ok(out)
}

fn same_frequency(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Rotating frames for `seq`: each site rotates at the channel component
/// closest to its nominal transition; sites no channel reaches use the
/// nominal transition itself.
pub fn frames_for(seq: &PulseSequence, system: &SpinSystem) -> Result<FrameSpec> {
    let mut frames = FrameSpec::new();
    for site in system.site_names() {
        let nominal = system.nominal_frequency(site)?;
        let mut best: Option<f64> = None;
        for ch in &seq.channels {
            if !target_sites(system, ch.target)?.contains(site) {
                continue;
            }
            for (f, _, _) in ch.components(1.0, 0.0) {
                let better = match best {
                    None => true,
                    Some(b) => {
                        let (df, db) = ((f - nominal).abs(), (b - nominal).abs());
                        df < db || (df == db && f < b)
                    }
                };
                if better {
                    best = Some(f);
                }
            }
        }
        frames.insert(site.clone(), best.unwrap_or(nominal).max(0.0), false)?;
    }
    Ok(frames)
}

fn drives_from(ch: &Channel, amp: f64, phase: f64, sites: &[String], frames: &FrameSpec) -> Result<Vec<Drive>> {
    let mut drives = Vec::new();
    for site in sites {
        let frame = frames.get(site).ok_or_else(|| Error::MissingFrame(site.clone()))?;
        for (f, omega, phi) in ch.components(amp, phase) {
            // Components off this site's frame rotate too fast to matter under RWA.
            if same_frequency(f, frame.frequency_mhz) {
                drives.push(Drive::new(site.clone(), omega, phi));
            }
        }
    }
    Ok(drives)
}

fn observable(seq: &PulseSequence, system: &SpinSystem, frames: &FrameSpec) -> Result<Operator> {
    let space = system.space();
    Ok(match seq.observable {
        Observable::P0 => system.nv_zero_observable(),
        Observable::Sx | Observable::Sy | Observable::Sz => {
            let k = match seq.observable {
                Observable::Sx => 0,
                Observable::Sy => 1,
                _ => 2,
            };
            let local = system.pseudo_spin(NV_SITE)?[k].clone();
            embed_product(space, &[(NV_SITE, &local)])?
        }
        Observable::BathPolarization => {
            // Axis of each P1: phase of the last drive that reached it.
            let mut axis = vec![0.0; system.site_names().len()];
            for p in &seq.pulses {
                let ch = seq.channel(&p.channel).expect("validated channel");
                let sites = target_sites(system, ch.target)?;
                for d in drives_from(ch, 1.0, p.phase_rad, &sites, frames)? {
                    let k = system.site_names().iter().position(|n| *n == d.site).expect("site exists");
                    axis[k] = d.phase_rad;
                }
            }
            let n = space.dim();
            let mut m = CMatrix::zeros(n, n);
            for (k, site) in system.site_names().iter().enumerate().skip(1) {
                let [sx, sy, _] = system.pseudo_spin(site)?;
                let local = sx * re(-2.0 * axis[k].cos()) + sy * re(-2.0 * axis[k].sin());
                m += embed_product(space, &[(site.as_str(), &local)])?.into_matrix();
            }
            Operator::new(space.clone(), m)?
        }
    })
}

/// Cut the timeline at every pulse edge and build one rotating-frame
/// Hamiltonian per interval. An optical reset evolves freely for its
/// duration and is followed by a reset of the NV into `|0⟩`.
pub fn compile(seq: &PulseSequence, system: &SpinSystem, frames: &FrameSpec) -> Result<CompiledSequence> {
    let mut edges: Vec<Ps> = vec![0, seq.readout_ps];
    for p in &seq.pulses {
        edges.push(p.start_ps);
        edges.push(p.end_ps());
    }
    for r in &seq.resets {
        edges.push(r.start_ps);
        edges.push(r.end_ps());
    }
    edges.sort_unstable();
    edges.dedup();

    let mut targets = Vec::with_capacity(seq.channels.len());
    for ch in &seq.channels {
        targets.push(target_sites(system, ch.target)?);
    }
    let base = system.static_rotating_hamiltonian(frames)?;
    let mut steps = Vec::new();
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut drives = Vec::new();
        let mut active = Vec::new();
        for p in seq.pulses.iter().filter(|p| p.start_ps <= a && p.end_ps() >= b) {
            let ci = seq.channels.iter().position(|c| c.name == p.channel).expect("validated channel");
            drives.extend(drives_from(&seq.channels[ci], p.amp, p.phase_rad, &targets[ci], frames)?);
            active.push(p.id.clone());
        }
        let h = add_drives(system, frames, base.clone(), &drives)?;
        steps.push(Step::Evolve(Segment { start_ps: a, duration_ps: b - a, hamiltonian: h, active }));
        if seq.resets.iter().any(|r| r.end_ps() == b) {
            steps.push(Step::Reset { site: NV_SITE.to_string(), state: system.nv_zero_projector() });
        }
    }
    Ok(CompiledSequence { steps, observable: observable(seq, system, frames)?, observable_kind: seq.observable, total_ps: seq.readout_ps })
}

/// JSON export: evolution steps carry `duration_ns` and the Hamiltonian as
/// row-major `[re, im]` pairs.
pub fn segments_to_json(compiled: &CompiledSequence) -> Value {
    let steps: Vec<Value> = compiled
        .steps
        .iter()
        .map(|s| match s {
            Step::Evolve(seg) => {
                let m = seg.hamiltonian.matrix();
                let n = m.nrows();
                let mut flat = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        flat.push(json!([m[(i, j)].re, m[(i, j)].im]));
                    }
                }
                json!({
                    "kind": "evolve",
                    "start_ns": seg.start_ps as f64 / 1000.0,
                    "duration_ns": seg.duration_ps as f64 / 1000.0,
                    "active": seg.active,
                    "dim": n,
                    "hamiltonian_mhz": flat,
                })
            }
            Step::Reset { site, .. } => json!({ "kind": "reset", "site": site }),
        })
        .collect();
    json!({ "total_ns": compiled.total_ps as f64 / 1000.0, "steps": steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::{build_deer, build_spin_lock, five_line_tones, parse_sequence, DeerSpec};
    use crate::spin_models::{NvParams, Orientation, P1Label, P1Params, P1Site};

    fn system(n: usize, d: f64) -> SpinSystem {
        let sites = (0..n)
            .map(|i| P1Site {
                label: P1Label::new(Orientation::new(1 + (i % 4) as u8).unwrap(), (i % 3) as i8 - 1).unwrap(),
                detuning_mhz: 0.0,
                d_nv_mhz: d,
            })
            .collect();
        SpinSystem::new(128.0, NvParams::default(), P1Params::default(), 0.0, sites, vec![]).unwrap()
    }

    #[test]
    fn deer_compiles_to_seven_segments() {
        let sys = system(2, 0.2);
        let seq = build_deer(&DeerSpec::new(sys.nominal_frequency("nv").unwrap(), 8.0, 0.35, 358.4, 1.0 / (2.0 * 0.065), 0.065)).unwrap();
        let c = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
        assert_eq!(c.steps.len(), 7);
        let total: Ps = c.segments().map(|s| s.duration_ps).sum();
        assert_eq!(total, seq.total_ps());
    }

    #[test]
    fn spin_lock_segments_and_marker() {
        let sys = system(5, 0.1);
        let rf = five_line_tones(&sys.p1, sys.b0_gauss, 8.0).unwrap();
        let seq = build_spin_lock(sys.nominal_frequency("nv").unwrap(), 8.0, 50.0, Some(&rf)).unwrap();
        let c = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
        let evolve = c.segments().count();
        let resets = c.steps.iter().filter(|s| matches!(s, Step::Reset { .. })).count();
        assert_eq!((evolve, resets), (4, 1));
        assert!(matches!(c.steps[1], Step::Reset { .. }));
        let total: Ps = c.segments().map(|s| s.duration_ps).sum();
        assert_eq!(total, seq.total_ps());
        // every P1 is driven during the lock
        let lock = c.segments().nth(2).unwrap();
        assert_eq!(lock.active.len(), 2);
        for h in c.segments().map(|s| &s.hamiltonian) {
            assert!(h.hermiticity_error() < 1e-12);
        }
    }

    #[test]
    fn resonant_tone_has_no_detuning() {
        let sys = system(0, 0.0);
        let text = format!("channel mw target nv carrier {}MHz\npulse mw pi amp 8 phase X\nreadout p0\n", sys.nominal_frequency("nv").unwrap());
        let seq = parse_sequence(&text).unwrap();
        let c = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
        let h = &c.segments().next().unwrap().hamiltonian;
        assert!(h.matrix()[(0, 0)].norm() < 1e-12 && h.matrix()[(1, 1)].norm() < 1e-12);
        assert!((h.matrix()[(0, 1)].re - 4.0).abs() < 1e-12);
    }

    #[test]
    fn common_shift_leaves_segments_unchanged() {
        let base = system(3, 0.3);
        let mut shifted = base.clone();
        let delta = 0.37;
        shifted.nv_detuning_mhz += delta;
        for s in &mut shifted.sites {
            s.detuning_mhz += delta;
        }
        let rf = five_line_tones(&base.p1, base.b0_gauss, 8.0).unwrap();
        let nv = base.nominal_frequency("nv").unwrap();
        let seq_a = build_spin_lock(nv, 8.0, 1.0, Some(&rf)).unwrap();
        let mut rf_b = rf.clone();
        rf_b.carrier_mhz += delta;
        let seq_b = build_spin_lock(nv + delta, 8.0, 1.0, Some(&rf_b)).unwrap();
        let a = compile(&seq_a, &base, &frames_for(&seq_a, &base).unwrap()).unwrap();
        let b = compile(&seq_b, &shifted, &frames_for(&seq_b, &shifted).unwrap()).unwrap();
        for (x, y) in a.segments().zip(b.segments()) {
            assert_eq!(x.duration_ps, y.duration_ps);
            assert!((x.hamiltonian.matrix() - y.hamiltonian.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-9);
        }
    }

    #[test]
    fn zero_amplitude_is_diagonal() {
        let sys = system(3, 0.4);
        let rf = five_line_tones(&sys.p1, sys.b0_gauss, 0.0).unwrap();
        let seq = build_spin_lock(sys.nominal_frequency("nv").unwrap(), 0.0, 1.0, Some(&rf));
        // a rotation needs a positive amplitude
        assert!(seq.is_err());
        let text = "channel mw target nv carrier 2511.6MHz\nchannel rf target p1 carrier 358.4MHz\npulse mw hold 1us amp 0 phase Y\npulse rf hold 1us amp 0 phase X at 0ns\nreadout p0\n";
        let seq = parse_sequence(text).unwrap();
        let c = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
        for seg in c.segments() {
            let m = seg.hamiltonian.matrix();
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    if i != j {
                        assert_eq!(m[(i, j)].norm(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn missing_frame_is_reported() {
        let sys = system(1, 0.1);
        let seq = parse_sequence("channel mw target nv carrier 2511.6MHz\npulse mw pi amp 8 phase X\nreadout p0\n").unwrap();
        let frames = FrameSpec::new().with_site("p1_1", 358.4, false).unwrap();
        assert!(matches!(compile(&seq, &sys, &frames), Err(Error::MissingFrame(s)) if s == "nv"));
    }

    #[test]
    fn json_export_shape() {
        let sys = system(1, 0.1);
        let seq = parse_sequence("channel mw target nv carrier 2511.6MHz\npulse mw pi/2 amp 8 phase X\nreadout p0\n").unwrap();
        let c = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
        let v = segments_to_json(&c);
        assert_eq!(v["steps"][0]["duration_ns"], 31.25);
        assert_eq!(v["steps"][0]["hamiltonian_mhz"].as_array().unwrap().len(), 16);
    }
}
