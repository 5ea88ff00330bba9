//! Oscillator and timer models.
//!
//! A [`ClockState`] maps ground-truth time to a device's local reading:
//! `offset0 + t + t * rate_ppm * 1e-6`, plus an optional random-walk phase
//! and white reading jitter carried by the runtime [`Oscillator`].
//!
//! The MCU timer counts at a rational tick rate (76.8 MHz by default) and
//! overflows once per second. All tick arithmetic is exact in `i128`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nmea::{GprmcSentence, NmeaError};
use crate::sim::{RngStream, TrueTime, NANOS_PER_SEC};

/// Configuration sanity bound on oscillator rate error.
pub const MAX_RATE_PPM: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClockError {
    #[error("rate_ppm {0} outside +/-{MAX_RATE_PPM}")]
    RateOutOfBounds(f64),
    #[error("noise parameter `{0}` must be finite and >= 0")]
    NegativeNoise(&'static str),
    #[error("invalid timer config: {0}")]
    Timer(String),
    #[error("NGM label: {0}")]
    Label(#[from] NmeaError),
}

/// Oscillator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockState {
    pub offset0_ns: i64,
    pub rate_ppm: f64,
    pub rw_sigma_ppm_per_sqrt_s: f64,
    pub jitter_sigma_ns: f64,
}

impl Default for ClockState {
    fn default() -> Self {
        ClockState::ideal()
    }
}

impl ClockState {
    pub const fn ideal() -> Self {
        ClockState { offset0_ns: 0, rate_ppm: 0.0, rw_sigma_ppm_per_sqrt_s: 0.0, jitter_sigma_ns: 0.0 }
    }

    pub fn with_rate(rate_ppm: f64) -> Self {
        ClockState { rate_ppm, ..ClockState::ideal() }
    }

    pub fn validate(&self) -> Result<(), ClockError> {
        if !self.rate_ppm.is_finite() || self.rate_ppm.abs() > MAX_RATE_PPM {
            return Err(ClockError::RateOutOfBounds(self.rate_ppm));
        }
        if !self.jitter_sigma_ns.is_finite() || self.jitter_sigma_ns < 0.0 {
            return Err(ClockError::NegativeNoise("jitter_sigma_ns"));
        }
        if !self.rw_sigma_ppm_per_sqrt_s.is_finite() || self.rw_sigma_ppm_per_sqrt_s < 0.0 {
            return Err(ClockError::NegativeNoise("rw_sigma_ppm_per_sqrt_s"));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.jitter_sigma_ns == 0.0 && self.rw_sigma_ppm_per_sqrt_s == 0.0
    }

    /// Offset plus linear drift, rounded to the nearest nanosecond.
    /// Nondecreasing in `t` for any admissible rate.
    pub fn deterministic_reading(&self, t: TrueTime) -> i64 {
        let t = t.as_ns();
        let drift = (t as f64 * self.rate_ppm / 1e6).round() as i64;
        self.offset0_ns + t + drift
    }

    /// Smallest true instant whose deterministic reading is `>= local`.
    pub fn true_time_of(&self, local: i64) -> TrueTime {
        let scale = 1.0 + self.rate_ppm / 1e6;
        let mut t = ((local - self.offset0_ns) as f64 / scale).round() as i64;
        while self.deterministic_reading(TrueTime::from_ns(t)) < local {
            t += 1;
        }
        while self.deterministic_reading(TrueTime::from_ns(t - 1)) >= local {
            t -= 1;
        }
        TrueTime::from_ns(t)
    }
}

/// Reads a noiseless clock. Noisy clocks need an [`Oscillator`].
pub fn read_clock(clock: &ClockState, t: TrueTime) -> i64 {
    clock.deterministic_reading(t)
}

/// Runtime oscillator: parameters plus random-walk state and a noise stream.
///
/// The random-walk phase advances only when the oscillator is read, with
/// increment variance proportional to the elapsed time. Reads at an instant
/// earlier than the previous read reuse the current phase.
#[derive(Clone, Debug)]
pub struct Oscillator {
    params: ClockState,
    rw_rate_ppm: f64,
    rw_phase_ns: f64,
    last_t: Option<TrueTime>,
    rng: RngStream,
}

impl Oscillator {
    pub fn new(params: ClockState, rng: RngStream) -> Result<Self, ClockError> {
        params.validate()?;
        Ok(Oscillator { params, rw_rate_ppm: 0.0, rw_phase_ns: 0.0, last_t: None, rng })
    }

    pub fn params(&self) -> &ClockState {
        &self.params
    }

    fn advance(&mut self, t: TrueTime) {
        let last = self.last_t.unwrap_or(TrueTime::ZERO);
        if t <= last {
            self.last_t.get_or_insert(last);
            return;
        }
        let dt_ns = t.since(last) as f64;
        if self.params.rw_sigma_ppm_per_sqrt_s > 0.0 {
            self.rw_phase_ns += self.rw_rate_ppm * 1e-6 * dt_ns;
            let step = self.params.rw_sigma_ppm_per_sqrt_s * (dt_ns / 1e9).sqrt();
            self.rw_rate_ppm += step * self.rng.standard_normal();
        }
        self.last_t = Some(t);
    }

    pub fn read(&mut self, t: TrueTime) -> i64 {
        self.advance(t);
        let mut reading = self.params.deterministic_reading(t) + self.rw_phase_ns.round() as i64;
        if self.params.jitter_sigma_ns > 0.0 {
            reading += (self.params.jitter_sigma_ns * self.rng.standard_normal()).round() as i64;
        }
        reading
    }

    /// Inverse of the deterministic part only.
    pub fn true_time_of(&self, local: i64) -> TrueTime {
        self.params.true_time_of(local)
    }
}

/// The MCU general-purpose timer: real-time clock, PPS generator and NGM
/// scheduler in one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McuTimerConfig {
    pub tick_rate_num: u64,
    pub tick_rate_den: u64,
    pub overflow_ticks: u64,
    pub compare_half_ticks: u64,
}

impl Default for McuTimerConfig {
    fn default() -> Self {
        McuTimerConfig {
            tick_rate_num: 76_800_000,
            tick_rate_den: 1,
            overflow_ticks: 76_800_000,
            compare_half_ticks: 38_400_000,
        }
    }
}

/// `(cycle index, tick within cycle)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TickPair {
    pub cycle: u64,
    pub tick: u64,
}

const NS: i128 = NANOS_PER_SEC as i128;

impl McuTimerConfig {
    pub fn validate(&self) -> Result<(), ClockError> {
        if self.tick_rate_num == 0 || self.tick_rate_den == 0 {
            return Err(ClockError::Timer("tick rate must be positive".into()));
        }
        if self.compare_half_ticks == 0 || self.compare_half_ticks >= self.overflow_ticks {
            return Err(ClockError::Timer("need 0 < compare_half_ticks < overflow_ticks".into()));
        }
        if self.pps_period_ns().is_none() {
            return Err(ClockError::Timer("overflow period is not a whole number of nanoseconds".into()));
        }
        Ok(())
    }

    /// Timer ticks elapsed at local time `local_ns` (floor).
    pub fn ticks_at(&self, local_ns: i64) -> u64 {
        assert!(local_ns >= 0, "MCU timer is undefined before its epoch");
        let num = local_ns as i128 * self.tick_rate_num as i128;
        (num / (self.tick_rate_den as i128 * NS)) as u64
    }

    pub fn split(&self, total_ticks: u64) -> TickPair {
        TickPair { cycle: total_ticks / self.overflow_ticks, tick: total_ticks % self.overflow_ticks }
    }

    pub fn join(&self, pair: TickPair) -> u64 {
        pair.cycle * self.overflow_ticks + pair.tick
    }

    /// First local nanosecond at which the tick counter reaches `total_ticks`.
    pub fn local_ns_at_tick(&self, total_ticks: u64) -> i64 {
        let num = total_ticks as i128 * self.tick_rate_den as i128 * NS;
        let den = self.tick_rate_num as i128;
        ((num + den - 1) / den) as i64
    }

    /// Tick count converted to nanoseconds, rounded to nearest.
    pub fn ticks_to_ns(&self, total_ticks: u64) -> i64 {
        let num = total_ticks as i128 * self.tick_rate_den as i128 * NS;
        let den = self.tick_rate_num as i128;
        ((2 * num + den) / (2 * den)) as i64
    }

    pub fn pps_period_ns(&self) -> Option<i64> {
        let num = self.overflow_ticks as i128 * self.tick_rate_den as i128 * NS;
        let den = self.tick_rate_num as i128;
        (num % den == 0).then(|| (num / den) as i64)
    }

    /// Ticks per period of a `hz` signal; must divide exactly.
    pub fn ticks_per_period(&self, hz: u64) -> Option<u64> {
        let den = self.tick_rate_den as u128 * hz as u128;
        if hz == 0 || !(self.tick_rate_num as u128).is_multiple_of(den) {
            return None;
        }
        Some((self.tick_rate_num as u128 / den) as u64)
    }

    pub fn ns_to_ticks_nearest(&self, ns: i64) -> u64 {
        let num = ns as i128 * self.tick_rate_num as i128;
        let den = self.tick_rate_den as i128 * NS;
        ((2 * num + den) / (2 * den)) as u64
    }
}

/// Ideal-MCU mapping of a true instant onto the timer.
pub fn true_to_tick(cfg: &McuTimerConfig, t: TrueTime) -> TickPair {
    cfg.split(cfg.ticks_at(t.as_ns()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Rising,
    Falling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PpsEdge {
    pub cycle: u64,
    pub edge: Edge,
    pub at: TrueTime,
    pub local_ns: i64,
}

/// Rising edge at every timer overflow, falling edge at the half-period
/// compare, for all edges with true time in `[0, t_end]`.
pub fn pps_edges(cfg: &McuTimerConfig, mcu: &ClockState, t_end: TrueTime) -> Vec<PpsEdge> {
    let start_ticks = cfg.ticks_at(mcu.deterministic_reading(TrueTime::ZERO).max(0));
    let mut cycle = start_ticks.div_ceil(cfg.overflow_ticks);
    let mut edges = Vec::new();
    loop {
        let base = cycle * cfg.overflow_ticks;
        let rise_local = cfg.local_ns_at_tick(base);
        let rise_at = mcu.true_time_of(rise_local);
        if rise_at > t_end {
            break;
        }
        edges.push(PpsEdge { cycle, edge: Edge::Rising, at: rise_at, local_ns: rise_local });
        let fall_local = cfg.local_ns_at_tick(base + cfg.compare_half_ticks);
        let fall_at = mcu.true_time_of(fall_local);
        if fall_at <= t_end {
            edges.push(PpsEdge { cycle, edge: Edge::Falling, at: fall_at, local_ns: fall_local });
        }
        cycle += 1;
    }
    edges
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Anchor {
    pub pps_at: TrueTime,
    pub local_at_pps: i64,
    pub label_s: i64,
}

/// A slave clock reloaded by PPS + NGM pairs.
///
/// Between reloads the reading is `label_s * 1e9` plus local ticks elapsed
/// since the PPS edge; at a reload the sub-second part restarts from zero.
#[derive(Clone, Debug)]
pub struct DisciplinedClock {
    osc: Oscillator,
    latched: Option<(TrueTime, i64)>,
    anchor: Option<Anchor>,
    reloads: u64,
    missed_ngm: u64,
}

impl DisciplinedClock {
    pub fn new(osc: Oscillator) -> Self {
        DisciplinedClock { osc, latched: None, anchor: None, reloads: 0, missed_ngm: 0 }
    }

    pub fn oscillator(&mut self) -> &mut Oscillator {
        &mut self.osc
    }

    /// Hardware capture of the local counter at a PPS edge.
    pub fn latch_pps(&mut self, pps_at: TrueTime) -> i64 {
        let local = self.osc.read(pps_at);
        self.latched = Some((pps_at, local));
        local
    }

    pub fn discipline(&mut self, pps_at: TrueTime, ngm: &GprmcSentence) -> Result<(), ClockError> {
        let label_s = ngm.epoch_seconds()?;
        self.discipline_label(pps_at, label_s);
        Ok(())
    }

    pub fn discipline_label(&mut self, pps_at: TrueTime, label_s: i64) {
        let local_at_pps = match self.latched {
            Some((at, local)) if at == pps_at => local,
            _ => self.osc.read(pps_at),
        };
        self.anchor = Some(Anchor { pps_at, local_at_pps, label_s });
        self.reloads += 1;
    }

    /// A PPS edge whose NGM never arrived: no reload, the clock free-runs
    /// from the previous one.
    pub fn note_missing_ngm(&mut self) {
        self.missed_ngm += 1;
    }

    pub fn anchor(&self) -> Option<Anchor> {
        self.anchor
    }

    pub fn last_pps_true(&self) -> Option<TrueTime> {
        self.anchor.map(|a| a.pps_at)
    }

    pub fn last_ngm_seconds(&self) -> Option<i64> {
        self.anchor.map(|a| a.label_s)
    }

    pub fn reloads(&self) -> u64 {
        self.reloads
    }

    pub fn missed_ngm(&self) -> u64 {
        self.missed_ngm
    }

    /// Disciplined reading for a raw local counter value; `None` before the
    /// first reload.
    pub fn reading_from_local(&self, local: i64) -> Option<i64> {
        self.anchor.map(|a| a.label_s * NANOS_PER_SEC + (local - a.local_at_pps))
    }

    pub fn read(&mut self, t: TrueTime) -> Option<i64> {
        let local = self.osc.read(t);
        self.reading_from_local(local)
    }
}
