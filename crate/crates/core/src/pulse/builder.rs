use std::f64::consts::PI;

use super::{us_to_ps, Channel, Observable, Ps, Pulse, PulseKind, PulseSequence, Reset, SequenceError, Target, OPTICAL_CHANNEL};

type Res<T> = std::result::Result<T, SequenceError>;

/// Incremental construction of a [`PulseSequence`].
///
/// Every channel has its own time cursor. `wait` first aligns all cursors to
/// the latest one; `wait_on` moves a single channel. Explicit start times
/// override the cursor.
#[derive(Clone, Debug, Default)]
pub struct SequenceBuilder {
    channels: Vec<Channel>,
    cursors: Vec<Ps>,
    counts: Vec<usize>,
    optical_cursor: Ps,
    pulses: Vec<Pulse>,
    resets: Vec<Reset>,
    readout: Option<(Observable, Ps)>,
    line: usize,
}

pub(crate) fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl SequenceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Source line attached to subsequent diagnostics.
    pub(crate) fn set_line(&mut self, line: usize) {
        self.line = line;
    }

    fn semantic(&self, message: impl Into<String>) -> SequenceError {
        SequenceError::Semantic { line: self.line, message: message.into() }
    }

    fn check_open(&self) -> Res<()> {
        if self.readout.is_some() {
            return Err(self.semantic("readout must be the last statement"));
        }
        Ok(())
    }

    fn channel_index(&self, name: &str) -> Res<usize> {
        self.channels
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| SequenceError::UnknownChannel { line: self.line, name: name.to_string() })
    }

    /// Latest cursor over all channels, including the optical one.
    pub fn now(&self) -> Ps {
        self.cursors.iter().copied().fold(self.optical_cursor, Ps::max)
    }

    pub fn cursor(&self, channel: &str) -> Res<Ps> {
        Ok(self.cursors[self.channel_index(channel)?])
    }

    fn sync_all(&mut self, t: Ps) {
        for c in &mut self.cursors {
            *c = t;
        }
        self.optical_cursor = t;
    }

    fn advance(&self, start: Ps, dur: Ps) -> Res<Ps> {
        start.checked_add(dur).ok_or_else(|| self.semantic("time overflow"))
    }

    pub fn channel(&mut self, channel: Channel) -> Res<&mut Self> {
        self.check_open()?;
        if !valid_name(&channel.name) || channel.name == OPTICAL_CHANNEL {
            return Err(self.semantic(format!("invalid channel name `{}`", channel.name)));
        }
        if self.channels.iter().any(|c| c.name == channel.name) {
            return Err(self.semantic(format!("channel `{}` declared twice", channel.name)));
        }
        if !(channel.carrier_mhz >= 0.0 && channel.carrier_mhz.is_finite()) {
            return Err(self.semantic(format!("channel `{}`: carrier must be a non-negative frequency", channel.name)));
        }
        if let Target::P1Line(k) = channel.target {
            if !(1..=5).contains(&k) {
                return Err(self.semantic(format!("channel `{}`: P1 line must be 1..=5, got {k}", channel.name)));
            }
        }
        for t in &channel.tones {
            if !(t.amp_mhz >= 0.0 && t.amp_mhz.is_finite() && t.offset_mhz.is_finite() && t.phase_rad.is_finite()) {
                return Err(self.semantic(format!("channel `{}`: tone amplitudes must be non-negative and finite", channel.name)));
            }
            if channel.carrier_mhz + t.offset_mhz < 0.0 {
                return Err(self.semantic(format!("channel `{}`: tone below zero frequency", channel.name)));
            }
        }
        let start = self.now();
        self.channels.push(channel);
        self.cursors.push(start);
        self.counts.push(0);
        Ok(self)
    }

    fn push_pulse(&mut self, channel: &str, duration_ps: Ps, amp: f64, phase_rad: f64, kind: PulseKind, at: Option<Ps>) -> Res<&mut Self> {
        self.check_open()?;
        let ci = self.channel_index(channel)?;
        let id = format!("{}#{}", channel, self.counts[ci] + 1);
        if !(amp >= 0.0 && amp.is_finite()) {
            return Err(self.semantic(format!("pulse `{id}`: amplitude must be non-negative and finite")));
        }
        if !phase_rad.is_finite() {
            return Err(self.semantic(format!("pulse `{id}`: phase must be finite")));
        }
        if duration_ps < 0 {
            return Err(SequenceError::NegativeDuration { line: self.line, what: format!("pulse `{id}`") });
        }
        if duration_ps == 0 {
            return Err(self.semantic(format!("pulse `{id}` has zero duration")));
        }
        let start = match at {
            Some(t) if t < 0 => return Err(self.semantic(format!("pulse `{id}` starts at negative time"))),
            Some(t) => t,
            None => self.cursors[ci],
        };
        let end = self.advance(start, duration_ps)?;
        if let Some(other) = self.pulses.iter().find(|p| p.channel == channel && p.start_ps < end && start < p.end_ps()) {
            return Err(SequenceError::Overlap { line: self.line, channel: channel.to_string(), first: other.id.clone(), second: id });
        }
        self.pulses.push(Pulse { id, channel: channel.to_string(), start_ps: start, duration_ps, amp, phase_rad, kind });
        self.counts[ci] += 1;
        self.cursors[ci] = end;
        Ok(self)
    }

    /// Rotation by `angle_rad`; the duration is `angle / (2π Ω)`.
    pub fn rotation(&mut self, channel: &str, angle_rad: f64, amp: f64, phase_rad: f64, at: Option<Ps>) -> Res<&mut Self> {
        let ci = self.channel_index(channel)?;
        if !(angle_rad > 0.0 && angle_rad.is_finite()) {
            return Err(self.semantic("rotation angle must be positive and finite"));
        }
        let rate = self.channels[ci].rotation_rate(amp);
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(self.semantic(format!("rotation on `{channel}` needs a positive amplitude")));
        }
        let dur = us_to_ps(angle_rad / (2.0 * PI * rate)).ok_or_else(|| self.semantic("pulse duration out of range"))?;
        if dur == 0 {
            return Err(self.semantic(format!("rotation on `{channel}` is shorter than 1 ps")));
        }
        self.push_pulse(channel, dur, amp, phase_rad, PulseKind::Rotation { angle_rad }, at)
    }

    pub fn hold(&mut self, channel: &str, duration_ps: Ps, amp: f64, phase_rad: f64, at: Option<Ps>) -> Res<&mut Self> {
        self.push_pulse(channel, duration_ps, amp, phase_rad, PulseKind::Hold, at)
    }

    /// Align every cursor to the latest one, then advance all by `duration_ps`.
    pub fn wait(&mut self, duration_ps: Ps) -> Res<&mut Self> {
        self.check_open()?;
        if duration_ps < 0 {
            return Err(SequenceError::NegativeDuration { line: self.line, what: "wait".into() });
        }
        let t = self.advance(self.now(), duration_ps)?;
        self.sync_all(t);
        Ok(self)
    }

    pub fn wait_on(&mut self, channel: &str, duration_ps: Ps) -> Res<&mut Self> {
        self.check_open()?;
        let ci = self.channel_index(channel)?;
        if duration_ps < 0 {
            return Err(SequenceError::NegativeDuration { line: self.line, what: format!("wait on `{channel}`") });
        }
        self.cursors[ci] = self.advance(self.cursors[ci], duration_ps)?;
        Ok(self)
    }

    /// Optical reset of the NV; afterwards every cursor sits at its end.
    pub fn reset(&mut self, duration_ps: Ps, at: Option<Ps>) -> Res<&mut Self> {
        self.check_open()?;
        if duration_ps < 0 {
            return Err(SequenceError::NegativeDuration { line: self.line, what: "reset".into() });
        }
        if duration_ps == 0 {
            return Err(self.semantic("reset has zero duration"));
        }
        let start = match at {
            Some(t) if t < 0 => return Err(self.semantic("reset starts at negative time")),
            Some(t) => t,
            None => self.now(),
        };
        let end = self.advance(start, duration_ps)?;
        if self.resets.iter().any(|r| r.start_ps < end && start < r.end_ps()) {
            return Err(self.semantic("overlapping optical resets"));
        }
        self.resets.push(Reset { start_ps: start, duration_ps });
        let t = end.max(self.now());
        self.sync_all(t);
        Ok(self)
    }

    pub fn readout(&mut self, observable: Observable, at: Option<Ps>) -> Res<&mut Self> {
        self.check_open()?;
        let last = self
            .pulses
            .iter()
            .map(Pulse::end_ps)
            .chain(self.resets.iter().map(Reset::end_ps))
            .fold(0, Ps::max);
        let t = match at {
            Some(t) if t < last => return Err(self.semantic("readout must come after every pulse")),
            Some(t) => t,
            None => self.now(),
        };
        self.readout = Some((observable, t));
        Ok(self)
    }

    pub fn build(&self) -> Res<PulseSequence> {
        let (observable, readout_ps) = self.readout.ok_or(SequenceError::NoReadout)?;
        let order = |name: &str| self.channels.iter().position(|c| c.name == name).unwrap_or(usize::MAX);
        let mut pulses = self.pulses.clone();
        pulses.sort_by_key(|p| (p.start_ps, order(&p.channel)));
        let mut seen = vec![0usize; self.channels.len()];
        for p in &mut pulses {
            let ci = order(&p.channel);
            seen[ci] += 1;
            p.id = format!("{}#{}", p.channel, seen[ci]);
        }
        let mut resets = self.resets.clone();
        resets.sort_by_key(|r| r.start_ps);
        Ok(PulseSequence { channels: self.channels.clone(), pulses, resets, observable, readout_ps })
    }
}
