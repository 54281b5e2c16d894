//! Annealing control schedules `s(t)` and the amplitude functions `A(s)`, `B(s)`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::io;

/// Anneal times (µs) accepted by the reference device.
pub const DEVICE_ANNEAL_RANGE_US: (f64, f64) = (1.0, 999.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Forward,
    Reverse,
}

/// Piecewise-linear path through `(time µs, s)` breakpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    breakpoints: Vec<(f64, f64)>,
    pub kind: ScheduleKind,
}

impl Schedule {
    /// Validates strictly increasing times and `s ∈ [0, 1]`.
    pub fn new(breakpoints: Vec<(f64, f64)>, kind: ScheduleKind) -> Result<Self> {
        if breakpoints.len() < 2 {
            return param("a schedule needs at least two breakpoints");
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return param(format!("breakpoint times must increase strictly ({} then {})", w[0].0, w[1].0));
            }
        }
        if let Some(&(t, s)) = breakpoints
            .iter()
            .find(|&&(t, s)| !t.is_finite() || !(0.0..=1.0).contains(&s))
        {
            return param(format!("invalid breakpoint ({t}, {s})"));
        }
        Ok(Self { breakpoints, kind })
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0].0
    }

    pub fn end(&self) -> f64 {
        self.breakpoints[self.breakpoints.len() - 1].0
    }

    pub fn duration(&self) -> f64 {
        self.end() - self.start()
    }

    /// `s(t)`, held constant outside the breakpoint range. Exact at breakpoints.
    pub fn s_at(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        if t <= bp[0].0 {
            return bp[0].1;
        }
        let last = bp[bp.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = bp.partition_point(|&(ti, _)| ti <= t) - 1;
        let (t0, s0) = bp[i];
        let (t1, s1) = bp[i + 1];
        if t == t0 {
            return s0;
        }
        if s0 == s1 {
            return s0;
        }
        s0 + (s1 - s0) * ((t - t0) / (t1 - t0))
    }

    /// CSV with columns `t,s` sampled at `points` evenly spaced times.
    pub fn to_csv(&self, points: usize, header: &str) -> String {
        let mut out = String::from(header);
        out.push_str("t,s\n");
        let points = points.max(2);
        for k in 0..points {
            let t = self.start() + self.duration() * k as f64 / (points - 1) as f64;
            let _ = writeln!(out, "{},{}", io::fmt_real(t), io::fmt_real(self.s_at(t)));
        }
        out
    }
}

pub fn anneal_time_in_device_range(t: f64) -> bool {
    (DEVICE_ANNEAL_RANGE_US.0..=DEVICE_ANNEAL_RANGE_US.1).contains(&t)
}

/// Linear sweep `s: 0 → 1` over `anneal_time` µs.
pub fn forward_schedule(anneal_time: f64) -> Result<Schedule> {
    if !(anneal_time > 0.0 && anneal_time.is_finite()) {
        return param(format!("anneal time must be positive, got {anneal_time}"));
    }
    if !anneal_time_in_device_range(anneal_time) {
        log::warn!(
            "anneal time {anneal_time} µs is outside the device range [{}, {}] µs",
            DEVICE_ANNEAL_RANGE_US.0,
            DEVICE_ANNEAL_RANGE_US.1
        );
    }
    Schedule::new(vec![(0.0, 0.0), (anneal_time, 1.0)], ScheduleKind::Forward)
}

/// Reverse anneal `1 → s_p`, pause for `pause`, then `s_p → 1`.
///
/// Breakpoints are `(0,1)`, `(t_r,s_p)`, `(t_r+t_p,s_p)` and
/// `(t_r+t_p+t_q,1)`; the plateau breakpoint is dropped when `t_p = 0`.
pub fn reverse_schedule(s_p: f64, ramp: f64, pause: f64, quench: f64) -> Result<Schedule> {
    if !(s_p > 0.0 && s_p < 1.0) {
        return param(format!("pause point must lie in (0, 1), got {s_p}"));
    }
    if !(ramp > 0.0 && quench > 0.0 && ramp.is_finite() && quench.is_finite()) {
        return param(format!("ramp and quench times must be positive, got {ramp} and {quench}"));
    }
    if !(pause >= 0.0 && pause.is_finite()) {
        return param(format!("pause time must be non-negative, got {pause}"));
    }
    let mut bp = vec![(0.0, 1.0), (ramp, s_p)];
    if pause > 0.0 {
        bp.push((ramp + pause, s_p));
    }
    bp.push((ramp + pause + quench, 1.0));
    Schedule::new(bp, ScheduleKind::Reverse)
}

/// Tabulated `(s, A, B)` rows, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeTable {
    rows: Vec<(f64, f64, f64)>,
    /// Monotonicity violations found while loading; the data is kept as given.
    pub warnings: Vec<String>,
}

impl AmplitudeTable {
    pub fn new(rows: Vec<(f64, f64, f64)>) -> Result<Self> {
        if rows.len() < 2 {
            return param("amplitude table needs at least two rows");
        }
        if rows[0].0 != 0.0 || rows[rows.len() - 1].0 != 1.0 {
            return param("amplitude table must span s = 0 to s = 1");
        }
        for w in rows.windows(2) {
            if !(w[1].0 > w[0].0) {
                return param(format!("s must increase strictly ({} then {})", w[0].0, w[1].0));
            }
        }
        let mut warnings = Vec::new();
        for w in rows.windows(2) {
            if w[1].1 > w[0].1 {
                warnings.push(format!("A increases between s={} and s={}", w[0].0, w[1].0));
            }
            if w[1].2 < w[0].2 {
                warnings.push(format!("B decreases between s={} and s={}", w[0].0, w[1].0));
            }
        }
        for w in &warnings {
            log::warn!("amplitude table: {w}");
        }
        Ok(Self { rows, warnings })
    }

    /// Parses CSV text with a required `s,A,B` header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = io::strip_comments(text);
        let header = lines.next().ok_or_else(|| Error::Parse("empty amplitude table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["s", "A", "B"] {
            return Err(Error::Parse(format!("expected header \"s,A,B\", got {header:?}")));
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("row {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Parse(format!("row {} has {} columns", lineno + 1, vals.len())));
            }
            rows.push((vals[0], vals[1], vals[2]));
        }
        Self::new(rows)
    }

    pub fn rows(&self) -> &[(f64, f64, f64)] {
        &self.rows
    }

    fn eval(&self, s: f64) -> (f64, f64) {
        let i = self.rows.partition_point(|r| r.0 <= s).saturating_sub(1);
        let (s0, a0, b0) = self.rows[i];
        if s == s0 || i + 1 == self.rows.len() {
            return (a0, b0);
        }
        let (s1, a1, b1) = self.rows[i + 1];
        let f = (s - s0) / (s1 - s0);
        (a0 + (a1 - a0) * f, b0 + (b1 - b0) * f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmplitudeSource {
    /// `A(s) = 1 − s`, `B(s) = s`.
    Linear,
    Table(AmplitudeTable),
}

/// Amplitude functions with a uniform energy scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplitudes {
    pub source: AmplitudeSource,
    pub scale: f64,
}

impl Default for Amplitudes {
    fn default() -> Self {
        Self::linear()
    }
}

impl Amplitudes {
    pub fn linear() -> Self {
        Self {
            source: AmplitudeSource::Linear,
            scale: 1.0,
        }
    }

    pub fn table(table: AmplitudeTable) -> Self {
        Self {
            source: AmplitudeSource::Table(table),
            scale: 1.0,
        }
    }

    /// `(A(s), B(s))`.
    pub fn at(&self, s: f64) -> Result<(f64, f64)> {
        if !(0.0..=1.0).contains(&s) {
            return param(format!("s = {s} is outside [0, 1]"));
        }
        let (a, b) = match &self.source {
            AmplitudeSource::Linear => (1.0 - s, s),
            AmplitudeSource::Table(t) => t.eval(s),
        };
        if self.scale == 1.0 {
            Ok((a, b))
        } else {
            Ok((a * self.scale, b * self.scale))
        }
    }
}

/// Convenience wrapper around [`Amplitudes::at`].
pub fn amplitudes(amps: &Amplitudes, s: f64) -> Result<(f64, f64)> {
    amps.at(s)
}
