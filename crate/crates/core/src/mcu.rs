//! Behavioral model of the MCU firmware.
//!
//! Initialization configures one timer that doubles as real-time clock and
//! PPS generator. Interrupt handlers only capture timestamps and set flags;
//! the main loop checks `IMU_DAT_RDY` first, then `NMEA_MES_GEN`, clears the
//! flag and performs the action. The IMU interrupt has the highest priority.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clocks::{ClockError, ClockState, McuTimerConfig, Oscillator};
use crate::nmea::{generate_gprmc, Fix, GprmcSentence, NmeaError};
use crate::sim::{RngStream, TrueTime, NANOS_PER_SEC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McuError {
    #[error("unknown interrupt kind `{0}`")]
    UnknownInterrupt(String),
    #[error("interrupt at {at} arrived before previous one at {last}")]
    OutOfOrder { at: TrueTime, last: TrueTime },
    #[error("invalid firmware config: {0}")]
    Config(String),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Nmea(#[from] NmeaError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IrqKind {
    ImuReady,
    TriggerCapture,
    TimerOverflow,
    TimerHalf,
}

impl IrqKind {
    /// Larger is more urgent.
    pub fn priority(self) -> u8 {
        match self {
            IrqKind::ImuReady => 3,
            IrqKind::TriggerCapture => 2,
            IrqKind::TimerOverflow => 1,
            IrqKind::TimerHalf => 0,
        }
    }

    pub fn captures_timestamp(self) -> bool {
        matches!(self, IrqKind::ImuReady | IrqKind::TriggerCapture)
    }

    pub fn name(self) -> &'static str {
        match self {
            IrqKind::ImuReady => "imu_ready",
            IrqKind::TriggerCapture => "trigger_capture",
            IrqKind::TimerOverflow => "timer_overflow",
            IrqKind::TimerHalf => "timer_half",
        }
    }
}

impl fmt::Display for IrqKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IrqKind {
    type Err = McuError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "imu_ready" => Ok(IrqKind::ImuReady),
            "trigger_capture" => Ok(IrqKind::TriggerCapture),
            "timer_overflow" => Ok(IrqKind::TimerOverflow),
            "timer_half" => Ok(IrqKind::TimerHalf),
            other => Err(McuError::UnknownInterrupt(other.to_string())),
        }
    }
}

/// Delay between a hardware edge and the moment the handler reads the
/// timer counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub base_ns: f64,
    pub sigma_ns: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { base_ns: 3470.0, sigma_ns: 2.4 }
    }
}

impl LatencyModel {
    pub const ZERO: LatencyModel = LatencyModel { base_ns: 0.0, sigma_ns: 0.0 };

    pub fn validate(&self) -> Result<(), McuError> {
        if !(self.base_ns.is_finite() && self.base_ns >= 0.0 && self.sigma_ns.is_finite() && self.sigma_ns >= 0.0) {
            return Err(McuError::Config("latency base_ns and sigma_ns must be >= 0".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut RngStream) -> i64 {
        let v = if self.sigma_ns > 0.0 { self.base_ns + self.sigma_ns * rng.standard_normal() } else { self.base_ns };
        v.max(0.0).round() as i64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub trigger_hz: u32,
    pub camera_fps: u32,
    pub phase_offset_ns: i64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig { trigger_hz: 30, camera_fps: 5, phase_offset_ns: 0 }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<(), McuError> {
        if self.trigger_hz == 0 || self.camera_fps == 0 || !self.trigger_hz.is_multiple_of(self.camera_fps) {
            return Err(McuError::Config(format!(
                "trigger_hz ({}) must be a positive multiple of camera_fps ({})",
                self.trigger_hz, self.camera_fps
            )));
        }
        if self.phase_offset_ns < 0 || self.phase_offset_ns as i128 * self.trigger_hz as i128 >= NANOS_PER_SEC as i128 {
            return Err(McuError::Config(format!(
                "phase_offset_ns ({}) must lie in [0, 1e9/trigger_hz)",
                self.phase_offset_ns
            )));
        }
        Ok(())
    }

    /// Pulses per produced camera frame.
    pub fn stride(&self) -> u32 {
        self.trigger_hz / self.camera_fps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TriggerPulse {
    /// 1-based pulse number.
    pub index: u64,
    pub mcu_ticks: u64,
    pub local_ns: i64,
    pub at: TrueTime,
}

/// Trigger pulses at `phase + k / trigger_hz` of MCU-local time, for all
/// pulses with true time in `[0, t_end]`.
pub fn emit_triggers(
    cfg: &TriggerConfig,
    timer: &McuTimerConfig,
    mcu: &ClockState,
    t_end: TrueTime,
) -> Result<Vec<TriggerPulse>, McuError> {
    cfg.validate()?;
    let period = timer
        .ticks_per_period(cfg.trigger_hz as u64)
        .ok_or_else(|| McuError::Config(format!("{} Hz is not a whole number of timer ticks", cfg.trigger_hz)))?;
    let phase = timer.ns_to_ticks_nearest(cfg.phase_offset_ns);
    let mut out = Vec::new();
    for k in 0u64.. {
        let ticks = phase + k * period;
        let local_ns = timer.local_ns_at_tick(ticks);
        let at = mcu.true_time_of(local_ns);
        if at > t_end {
            break;
        }
        if at >= TrueTime::ZERO {
            out.push(TriggerPulse { index: out.len() as u64 + 1, mcu_ticks: ticks, local_ns, at });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FirmwareConfig {
    pub timer: McuTimerConfig,
    pub clock: ClockState,
    pub latency: LatencyModel,
    /// CPU time of every interrupt handler.
    pub service_ns: i64,
    pub trigger: TriggerConfig,
    /// UTC second (Unix) labelled on timer cycle 0.
    pub utc_epoch_s: i64,
    pub fix: Fix,
}

impl Default for FirmwareConfig {
    fn default() -> Self {
        FirmwareConfig {
            timer: McuTimerConfig::default(),
            clock: ClockState::ideal(),
            latency: LatencyModel::default(),
            service_ns: 2_000,
            trigger: TriggerConfig::default(),
            utc_epoch_s: 1_609_459_200,
            fix: Fix::default(),
        }
    }
}

impl FirmwareConfig {
    pub fn validate(&self) -> Result<(), McuError> {
        self.timer.validate()?;
        self.clock.validate()?;
        self.latency.validate()?;
        self.trigger.validate()?;
        if self.service_ns < 0 {
            return Err(McuError::Config("service_ns must be >= 0".into()));
        }
        GprmcSentence::for_second(self.utc_epoch_s, &self.fix)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Flags {
    pub imu_dat_rdy: bool,
    pub nmea_mes_gen: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capture {
    /// Total timer ticks read by the handler.
    pub ticks: u64,
    /// True instant of the counter read.
    pub at: TrueTime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InterruptOutcome {
    pub kind: IrqKind,
    pub arrived: TrueTime,
    /// Handler entry; later than `arrived` when blocked by an equal or
    /// higher priority handler.
    pub started: TrueTime,
    pub blocked_ns: i64,
    pub capture: Option<Capture>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostAction {
    ImuRecord { seq: u64, ticks: u64, event_at: TrueTime },
    Ngm { label_s: i64, sentence: String },
}

#[derive(Clone, Copy, Debug)]
struct Service {
    kind: IrqKind,
    start: TrueTime,
    end: TrueTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlagCounters {
    pub imu_sets: u64,
    pub imu_clears: u64,
    pub nmea_sets: u64,
    pub nmea_clears: u64,
}

pub struct Firmware {
    cfg: FirmwareConfig,
    clock: Oscillator,
    latency_rng: RngStream,
    flags: Flags,
    pending_imu: VecDeque<(TrueTime, u64)>,
    cycle: Option<u64>,
    ngm_label: Option<i64>,
    services: Vec<Service>,
    last_arrival: Option<TrueTime>,
    imu_seq: u64,
    counters: FlagCounters,
}

impl Firmware {
    /// Initialization: validates the configuration and starts the timer.
    pub fn new(cfg: FirmwareConfig, seed: u64) -> Result<Self, McuError> {
        cfg.validate()?;
        let clock = Oscillator::new(cfg.clock.clone(), RngStream::new(seed, "mcu.clock"))?;
        Ok(Firmware {
            cfg,
            clock,
            latency_rng: RngStream::new(seed, "mcu.latency"),
            flags: Flags::default(),
            pending_imu: VecDeque::new(),
            cycle: None,
            ngm_label: None,
            services: Vec::new(),
            last_arrival: None,
            imu_seq: 0,
            counters: FlagCounters::default(),
        })
    }

    pub fn config(&self) -> &FirmwareConfig {
        &self.cfg
    }

    pub fn flags(&self) -> Flags {
        self.flags
    }

    pub fn counters(&self) -> FlagCounters {
        self.counters
    }

    pub fn in_service(&self, t: TrueTime) -> Option<IrqKind> {
        self.services.iter().filter(|s| s.start <= t && t < s.end).max_by_key(|s| s.kind.priority()).map(|s| s.kind)
    }

    /// Earliest instant at which no handler is running or waiting.
    pub fn idle_at(&self, t: TrueTime) -> TrueTime {
        self.services.iter().map(|s| s.end).fold(t, TrueTime::max)
    }

    pub fn ticks_to_ns(&self, ticks: u64) -> i64 {
        self.cfg.timer.ticks_to_ns(ticks)
    }

    /// MCU timer reading at a true instant, in total ticks.
    pub fn timer_ticks(&mut self, t: TrueTime) -> u64 {
        let local = self.clock.read(t).max(0);
        self.cfg.timer.ticks_at(local)
    }

    pub fn on_interrupt(&mut self, kind: IrqKind, t: TrueTime) -> Result<InterruptOutcome, McuError> {
        if let Some(last) = self.last_arrival {
            if t < last {
                return Err(McuError::OutOfOrder { at: t, last });
            }
        }
        self.last_arrival = Some(t);

        self.services.retain(|s| s.end > t);
        let p = kind.priority();
        let start = self.services.iter().filter(|s| s.kind.priority() >= p).map(|s| s.end).fold(t, TrueTime::max);
        let d = self.cfg.service_ns;
        for s in self.services.iter_mut().filter(|s| s.kind.priority() < p && s.end > start) {
            if s.start >= start {
                s.start = s.start.add_ns(d);
            }
            s.end = s.end.add_ns(d);
        }
        self.services.push(Service { kind, start, end: start.add_ns(d) });

        let capture = if kind.captures_timestamp() {
            let at = start.add_ns(self.cfg.latency.draw(&mut self.latency_rng));
            Some(Capture { ticks: self.timer_ticks(at), at })
        } else {
            None
        };

        match kind {
            IrqKind::ImuReady => {
                let c = capture.expect("imu capture");
                self.pending_imu.push_back((t, c.ticks));
                self.flags.imu_dat_rdy = true;
                self.counters.imu_sets += 1;
            }
            IrqKind::TriggerCapture => {}
            IrqKind::TimerOverflow => {
                let ticks = self.timer_ticks(start);
                self.cycle = Some(self.cfg.timer.split(ticks).cycle);
            }
            IrqKind::TimerHalf => {
                let cycle = match self.cycle {
                    Some(c) => c,
                    None => {
                        let ticks = self.timer_ticks(start);
                        self.cfg.timer.split(ticks).cycle
                    }
                };
                self.ngm_label = Some(self.cfg.utc_epoch_s + cycle as i64);
                self.flags.nmea_mes_gen = true;
                self.counters.nmea_sets += 1;
            }
        }

        Ok(InterruptOutcome { kind, arrived: t, started: start, blocked_ns: start.since(t), capture })
    }

    /// One pass of the main loop.
    pub fn main_loop_step(&mut self) -> Result<Vec<HostAction>, McuError> {
        let mut out = Vec::new();
        if self.flags.imu_dat_rdy {
            self.flags.imu_dat_rdy = false;
            self.counters.imu_clears += 1;
            while let Some((event_at, ticks)) = self.pending_imu.pop_front() {
                self.imu_seq += 1;
                out.push(HostAction::ImuRecord { seq: self.imu_seq, ticks, event_at });
            }
        }
        if self.flags.nmea_mes_gen {
            self.flags.nmea_mes_gen = false;
            self.counters.nmea_clears += 1;
            let label_s = self.ngm_label.take().expect("label set with flag");
            let sentence = generate_gprmc(&GprmcSentence::for_second(label_s, &self.cfg.fix)?)?;
            out.push(HostAction::Ngm { label_s, sentence });
        }
        Ok(out)
    }
}
