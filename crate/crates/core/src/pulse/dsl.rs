//! Line-oriented sequence language.
//!
//! ```text
//! # comment
//! channel mw target nv carrier 2511.6MHz
//! channel rf target p1 carrier 358.4MHz tone -114MHz 8MHz X tone 0MHz 8MHz X
//! reset 2us
//! pulse mw pi/2 amp 8MHz phase X
//! pulse mw hold 50us amp 8MHz phase Y
//! pulse rf hold 50us amp 1 phase X at 2.03125us
//! wait 10ns on rf
//! pulse mw 3pi/2 amp 8MHz phase X
//! readout p0
//! ```
//!
//! Targets are `nv`, `p1` (every P1 line) or `p1:K`. Durations take `ns` or
//! `us`, frequencies `MHz` or `GHz`. Angles are `pi/2`, `pi`, `3pi/2` or
//! `<float>rad`; phases are `X`, `Y`, `-X`, `-Y` or `<float>rad`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use super::builder::{valid_name, SequenceBuilder};
use super::{phase_keyword, Channel, Observable, Ps, PulseKind, PulseSequence, SequenceError, Target, Tone};

type Res<T> = std::result::Result<T, SequenceError>;

#[derive(Clone, Copy, Debug)]
struct Token<'a> {
    text: &'a str,
    column: usize,
}

struct Line<'a> {
    number: usize,
    tokens: Vec<Token<'a>>,
    pos: usize,
    end_column: usize,
}

fn tokenize(line: &str) -> (Vec<Token<'_>>, usize) {
    let code = match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    };
    let mut tokens = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    let mut column = 0;
    for (byte, ch) in code.char_indices() {
        column += 1;
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                tokens.push(Token { text: &code[b..byte], column: c });
            }
        } else if start.is_none() {
            start = Some((byte, column));
        }
    }
    if let Some((b, c)) = start {
        tokens.push(Token { text: &code[b..], column: c });
    }
    (tokens, column + 1)
}

impl<'a> Line<'a> {
    fn error(&self, expected: impl Into<String>) -> SequenceError {
        let (column, found) = match self.tokens.get(self.pos) {
            Some(t) => (t.column, format!("`{}`", t.text)),
            None => (self.end_column, "end of line".to_string()),
        };
        SequenceError::Syntax { line: self.number, column, expected: expected.into(), found }
    }

    fn peek(&self) -> Option<&'a str> {
        self.tokens.get(self.pos).map(|t| t.text)
    }

    fn next(&mut self, expected: &str) -> Res<&'a str> {
        match self.tokens.get(self.pos) {
            Some(t) => {
                self.pos += 1;
                Ok(t.text)
            }
            None => Err(self.error(expected)),
        }
    }

    fn keyword(&mut self, word: &str) -> Res<()> {
        if self.peek() == Some(word) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("`{word}`")))
        }
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn finish(&self) -> Res<()> {
        if self.pos < self.tokens.len() {
            Err(self.error("end of line"))
        } else {
            Ok(())
        }
    }

    fn name(&mut self) -> Res<&'a str> {
        match self.peek() {
            Some(t) if valid_name(t) => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error("a name")),
        }
    }

    /// A number with a unit, attached (`350ns`) or as the next token (`350 ns`).
    fn quantity(&mut self, expected: &str, units: &[(&str, f64)], optional_unit: bool) -> Res<f64> {
        let save = self.pos;
        let tok = self.next(expected)?;
        let (num, unit) = split_number(tok);
        let value: f64 = match num.parse() {
            Ok(v) => v,
            Err(_) => {
                self.pos = save;
                return Err(self.error(expected));
            }
        };
        let unit = if unit.is_empty() {
            match self.peek() {
                Some(u) if units.iter().any(|(n, _)| *n == u) => {
                    self.pos += 1;
                    u
                }
                _ if optional_unit => return finite(value).ok_or_else(|| self.back(save, expected)),
                _ => return Err(self.error(format!("a unit ({})", unit_list(units)))),
            }
        } else {
            unit
        };
        match units.iter().find(|(n, _)| *n == unit) {
            Some((_, scale)) => finite(value * scale).ok_or_else(|| self.back(save, expected)),
            None => {
                self.pos = save;
                Err(self.error(expected))
            }
        }
    }

    fn back(&mut self, pos: usize, expected: &str) -> SequenceError {
        self.pos = pos;
        self.error(expected)
    }

    fn duration_ps(&mut self) -> Res<Ps> {
        let save = self.pos;
        let ps = self.quantity("a duration (e.g. `350ns`, `2us`)", &[("ns", 1e3), ("us", 1e6)], false)?;
        if ps.abs() >= 9.0e18 {
            return Err(self.back(save, "a duration in range"));
        }
        Ok(ps.round() as Ps)
    }

    fn frequency(&mut self) -> Res<f64> {
        self.quantity("a frequency (e.g. `358.4MHz`)", &[("MHz", 1.0), ("GHz", 1e3)], false)
    }

    fn amplitude(&mut self) -> Res<f64> {
        self.quantity("an amplitude", &[("MHz", 1.0)], true)
    }

    fn radians(&mut self) -> Option<f64> {
        let tok = self.peek()?;
        let v = tok.strip_suffix("rad")?.parse::<f64>().ok().and_then(finite)?;
        self.pos += 1;
        Some(v)
    }

    fn phase(&mut self) -> Res<f64> {
        const EXPECTED: &str = "a phase (`X`, `Y`, `-X`, `-Y` or `<float>rad`)";
        let fixed = match self.peek() {
            Some("X") => Some(0.0),
            Some("Y") => Some(PI / 2.0),
            Some("-X") => Some(PI),
            Some("-Y") => Some(3.0 * PI / 2.0),
            _ => None,
        };
        if let Some(p) = fixed {
            self.pos += 1;
            return Ok(p);
        }
        self.radians().ok_or_else(|| self.error(EXPECTED))
    }

    fn angle(&mut self) -> Option<f64> {
        let fixed = match self.peek() {
            Some("pi/2") => Some(PI / 2.0),
            Some("pi") => Some(PI),
            Some("3pi/2") => Some(3.0 * PI / 2.0),
            _ => None,
        };
        if let Some(a) = fixed {
            self.pos += 1;
            return Some(a);
        }
        self.radians()
    }

    fn at(&mut self) -> Res<Option<Ps>> {
        if self.eat("at") {
            Ok(Some(self.duration_ps()?))
        } else {
            Ok(None)
        }
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn unit_list(units: &[(&str, f64)]) -> String {
    units.iter().map(|(u, _)| format!("`{u}`")).collect::<Vec<_>>().join(" or ")
}

/// Split `"-3.5e2MHz"` into `("-3.5e2", "MHz")`.
fn split_number(tok: &str) -> (&str, &str) {
    let b = tok.as_bytes();
    let mut i = 0;
    if i < b.len() && (b[i] == b'-' || b[i] == b'+') {
        i += 1;
    }
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i < b.len() && b[i] == b'.' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
        let mut j = i + 1;
        if j < b.len() && (b[j] == b'-' || b[j] == b'+') {
            j += 1;
        }
        if j < b.len() && b[j].is_ascii_digit() {
            while j < b.len() && b[j].is_ascii_digit() {
                j += 1;
            }
            i = j;
        }
    }
    tok.split_at(i)
}

fn target(line: &mut Line<'_>) -> Res<Target> {
    const EXPECTED: &str = "a target (`nv`, `p1` or `p1:K`)";
    let t = match line.peek() {
        Some("nv") => Target::Nv,
        Some("p1") => Target::AllP1,
        Some(s) => match s.strip_prefix("p1:").and_then(|k| k.parse::<u8>().ok()) {
            Some(k) => Target::P1Line(k),
            None => return Err(line.error(EXPECTED)),
        },
        None => return Err(line.error(EXPECTED)),
    };
    line.pos += 1;
    Ok(t)
}

fn statement(line: &mut Line<'_>, b: &mut SequenceBuilder) -> Res<()> {
    match line.peek() {
        Some("channel") => {
            line.pos += 1;
            let name = line.name()?;
            line.keyword("target")?;
            let target = target(line)?;
            line.keyword("carrier")?;
            let mut ch = Channel::new(name, target, line.frequency()?);
            while line.eat("tone") {
                let offset_mhz = line.frequency()?;
                let amp_mhz = line.amplitude()?;
                let phase_rad = line.phase()?;
                ch.tones.push(Tone { offset_mhz, amp_mhz, phase_rad });
            }
            line.finish()?;
            b.channel(ch)?;
        }
        Some("pulse") => {
            line.pos += 1;
            let name = line.name()?;
            let shape = if line.eat("hold") {
                Err(line.duration_ps()?)
            } else {
                Ok(line.angle().ok_or_else(|| line.error("an angle (`pi/2`, `pi`, `3pi/2`, `<float>rad`) or `hold`"))?)
            };
            line.keyword("amp")?;
            let amp = line.amplitude()?;
            line.keyword("phase")?;
            let phase = line.phase()?;
            let at = line.at()?;
            line.finish()?;
            match shape {
                Ok(angle) => b.rotation(name, angle, amp, phase, at)?,
                Err(dur) => b.hold(name, dur, amp, phase, at)?,
            };
        }
        Some("wait") => {
            line.pos += 1;
            let dur = line.duration_ps()?;
            if line.eat("on") {
                let name = line.name()?;
                line.finish()?;
                b.wait_on(name, dur)?;
            } else {
                line.finish()?;
                b.wait(dur)?;
            }
        }
        Some("reset") => {
            line.pos += 1;
            let dur = line.duration_ps()?;
            let at = line.at()?;
            line.finish()?;
            b.reset(dur, at)?;
        }
        Some("readout") => {
            line.pos += 1;
            let obs = match line.peek().and_then(Observable::from_keyword) {
                Some(o) => o,
                None => return Err(line.error("an observable (`p0`, `sx`, `sy`, `sz`, `bath-polarization`)")),
            };
            line.pos += 1;
            let at = line.at()?;
            line.finish()?;
            b.readout(obs, at)?;
        }
        _ => return Err(line.error("one of `channel`, `pulse`, `wait`, `reset`, `readout`")),
    }
    Ok(())
}

/// Parse a sequence program. Never panics; every failure is a [`SequenceError`].
pub fn parse_sequence(text: &str) -> Res<PulseSequence> {
    let mut b = SequenceBuilder::new();
    for (i, raw) in text.lines().enumerate() {
        let (tokens, end_column) = tokenize(raw);
        if tokens.is_empty() {
            continue;
        }
        let mut line = Line { number: i + 1, tokens, pos: 0, end_column };
        b.set_line(i + 1);
        statement(&mut line, &mut b)?;
    }
    b.build()
}

fn fmt_time(ps: Ps) -> String {
    let (whole, frac) = (ps / 1000, (ps % 1000).abs());
    if frac == 0 {
        format!("{whole}ns")
    } else {
        let f = format!("{frac:03}");
        format!("{whole}.{}ns", f.trim_end_matches('0'))
    }
}

fn fmt_phase(p: f64) -> String {
    match phase_keyword(p) {
        Some(k) => k.to_string(),
        None => format!("{p}rad"),
    }
}

fn fmt_angle(a: f64) -> String {
    if a == PI / 2.0 {
        "pi/2".into()
    } else if a == PI {
        "pi".into()
    } else if a == 3.0 * PI / 2.0 {
        "3pi/2".into()
    } else {
        format!("{a}rad")
    }
}

/// Canonical text with explicit start times; `parse_sequence` inverts it exactly.
pub fn print_sequence(seq: &PulseSequence) -> String {
    let mut out = String::new();
    for c in &seq.channels {
        let _ = write!(out, "channel {} target {} carrier {}MHz", c.name, c.target, c.carrier_mhz);
        for t in &c.tones {
            let _ = write!(out, " tone {}MHz {}MHz {}", t.offset_mhz, t.amp_mhz, fmt_phase(t.phase_rad));
        }
        out.push('\n');
    }
    for r in &seq.resets {
        let _ = writeln!(out, "reset {} at {}", fmt_time(r.duration_ps), fmt_time(r.start_ps));
    }
    for p in &seq.pulses {
        let shape = match p.kind {
            PulseKind::Rotation { angle_rad } => fmt_angle(angle_rad),
            PulseKind::Hold => format!("hold {}", fmt_time(p.duration_ps)),
        };
        let _ = writeln!(out, "pulse {} {} amp {} phase {} at {}", p.channel, shape, p.amp, fmt_phase(p.phase_rad), fmt_time(p.start_ps));
    }
    let _ = writeln!(out, "readout {} at {}", seq.observable.keyword(), fmt_time(seq.readout_ps));
    out
}
