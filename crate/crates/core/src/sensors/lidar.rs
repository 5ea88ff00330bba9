//! LiDAR packet source.
//!
//! Packets leave the sensor every `packet_period_ns` of true time. Each one
//! is timestamped three ways:
//!
//! * `arrival`: host clock at the moment the packet is delivered to the
//!   host, after a random network/driver delay. Delivery is FIFO with a
//!   minimum spacing, so one late packet holds back the ones behind it.
//! * `internal`: the LiDAR's free-running oscillator, floored to
//!   `internal_quantum_ns`.
//! * `pps_disciplined`: the same oscillator, reloaded by PPS + NGM pairs.
//!   Packets emitted after a PPS edge are held until the paired NGM arrives
//!   (or the pairing window closes) and then stamped against that edge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SensorError;
use crate::clocks::{ClockState, DisciplinedClock, Oscillator};
use crate::eval::TimestampRecord;
use crate::nmea::{parse_gprmc, PairingWindow};
use crate::sim::{Distribution, RngStream, TrueTime, NANOS_PER_SEC};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LidarScheme {
    Arrival,
    Internal,
    PpsDisciplined,
}

impl LidarScheme {
    pub const ALL: [LidarScheme; 3] = [LidarScheme::Arrival, LidarScheme::Internal, LidarScheme::PpsDisciplined];

    pub fn as_str(self) -> &'static str {
        match self {
            LidarScheme::Arrival => "arrival",
            LidarScheme::Internal => "internal",
            LidarScheme::PpsDisciplined => "pps_disciplined",
        }
    }
}

impl fmt::Display for LidarScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LidarScheme {
    type Err = SensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LidarScheme::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SensorError::Config(format!("unknown scheme `{s}`")))
    }
}

/// Occasional large extra delay on top of the arrival jitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpikeConfig {
    pub probability: f64,
    pub magnitude: Distribution,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        SpikeConfig { probability: 2e-4, magnitude: Distribution::Uniform { low: 3.0e6, high: 5.8e6 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    pub packet_period_ns: i64,
    /// Emission-to-delivery delay, ns.
    pub arrival_jitter: Distribution,
    pub spike: SpikeConfig,
    /// Minimum spacing between consecutive deliveries, ns.
    pub host_gap_ns: i64,
    pub host_clock: ClockState,
    pub internal_clock: ClockState,
    pub internal_quantum_ns: i64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            packet_period_ns: 1_328_000,
            arrival_jitter: Distribution::Normal { mean: 200_000.0, sigma: 28_000.0 },
            spike: SpikeConfig::default(),
            host_gap_ns: 5_720,
            host_clock: ClockState::ideal(),
            internal_clock: ClockState::with_rate(-81.3),
            internal_quantum_ns: 1_000,
        }
    }
}

impl LidarConfig {
    /// Everything ideal: every scheme reports the true emission time.
    pub fn ideal() -> Self {
        LidarConfig {
            arrival_jitter: Distribution::constant(0.0),
            spike: SpikeConfig { probability: 0.0, ..SpikeConfig::default() },
            host_gap_ns: 0,
            internal_clock: ClockState::ideal(),
            internal_quantum_ns: 1,
            ..LidarConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.packet_period_ns <= 0 {
            return Err(SensorError::Config("lidar.packet_period_ns must be > 0".into()));
        }
        if self.internal_quantum_ns <= 0 {
            return Err(SensorError::Config("lidar.internal_quantum_ns must be > 0".into()));
        }
        if self.host_gap_ns < 0 {
            return Err(SensorError::Config("lidar.host_gap_ns must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.spike.probability) {
            return Err(SensorError::Config(format!(
                "lidar.spike.probability {} outside [0, 1]",
                self.spike.probability
            )));
        }
        self.arrival_jitter.validate()?;
        self.spike.magnitude.validate()?;
        self.host_clock.validate()?;
        self.internal_clock.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LidarStamp {
    pub scheme: LidarScheme,
    /// False for disciplined stamps taken before the first reload.
    pub synced: bool,
    pub seq: u64,
    pub timestamp_ns: i64,
    pub true_ns: i64,
}

impl LidarStamp {
    pub fn scheme_label(&self) -> &'static str {
        match (self.scheme, self.synced) {
            (LidarScheme::PpsDisciplined, false) => "pps_disciplined_unsynced",
            (s, _) => s.as_str(),
        }
    }

    pub fn to_record(&self, sensor_id: &str) -> TimestampRecord {
        TimestampRecord {
            sensor_id: sensor_id.to_string(),
            seq: self.seq,
            scheme: self.scheme_label().to_string(),
            timestamp_ns: self.timestamp_ns,
            true_ns: Some(self.true_ns),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LidarCounters {
    pub packets: u64,
    pub spikes: u64,
    pub unsynced: u64,
    pub ngm_rejected: u64,
}

#[derive(Clone, Copy, Debug)]
struct PendingPps {
    at: TrueTime,
    paired: bool,
}

pub struct Lidar {
    cfg: LidarConfig,
    epoch_ns: i64,
    window: PairingWindow,
    clock: DisciplinedClock,
    host: Oscillator,
    delay_rng: RngStream,
    spike_rng: RngStream,
    last_arrival: Option<TrueTime>,
    seq: u64,
    pps: Option<PendingPps>,
    held: Vec<(u64, TrueTime, i64)>,
    counters: LidarCounters,
}

fn floor_to(v: i64, q: i64) -> i64 {
    v.div_euclid(q) * q
}

impl Lidar {
    /// `utc_epoch_s` is the NGM label of simulation second 0; disciplined
    /// stamps are reported relative to it.
    pub fn new(cfg: LidarConfig, utc_epoch_s: i64, window: PairingWindow, seed: u64) -> Result<Self, SensorError> {
        cfg.validate()?;
        let osc = Oscillator::new(cfg.internal_clock.clone(), RngStream::new(seed, "lidar.clock"))?;
        let host = Oscillator::new(cfg.host_clock.clone(), RngStream::new(seed, "host.clock"))?;
        Ok(Lidar {
            cfg,
            epoch_ns: utc_epoch_s * NANOS_PER_SEC,
            window,
            clock: DisciplinedClock::new(osc),
            host,
            delay_rng: RngStream::new(seed, "lidar.arrival"),
            spike_rng: RngStream::new(seed, "lidar.spike"),
            last_arrival: None,
            seq: 0,
            pps: None,
            held: Vec::new(),
            counters: LidarCounters::default(),
        })
    }

    pub fn config(&self) -> &LidarConfig {
        &self.cfg
    }

    pub fn counters(&self) -> LidarCounters {
        self.counters
    }

    pub fn clock(&self) -> &DisciplinedClock {
        &self.clock
    }

    /// True emission time of packet `k` (0-based).
    pub fn emission_time(&self, k: u64) -> TrueTime {
        TrueTime::from_ns(k as i64 * self.cfg.packet_period_ns)
    }

    fn disciplined_stamp(&self, seq: u64, at: TrueTime, raw: i64) -> LidarStamp {
        let q = self.cfg.internal_quantum_ns;
        let (synced, ts) = match self.clock.anchor() {
            Some(a) => (true, a.label_s * NANOS_PER_SEC - self.epoch_ns + floor_to(raw - a.local_at_pps, q)),
            None => (false, floor_to(raw, q)),
        };
        LidarStamp { scheme: LidarScheme::PpsDisciplined, synced, seq, timestamp_ns: ts, true_ns: at.as_ns() }
    }

    fn release_held(&mut self) -> Vec<LidarStamp> {
        let held = std::mem::take(&mut self.held);
        let out: Vec<LidarStamp> = held.into_iter().map(|(s, at, raw)| self.disciplined_stamp(s, at, raw)).collect();
        self.counters.unsynced += out.iter().filter(|s| !s.synced).count() as u64;
        out
    }

    /// Closes the pairing window of the pending PPS edge if `t` is past it.
    fn expire(&mut self, t: TrueTime) -> Vec<LidarStamp> {
        match self.pps {
            Some(p) if !p.paired && t.since(p.at) > self.window.max_after_pps_ns => {
                self.clock.note_missing_ngm();
                self.pps = None;
                self.release_held()
            }
            _ => Vec::new(),
        }
    }

    /// PPS rising edge on the sync input.
    pub fn on_pps(&mut self, t: TrueTime) -> Vec<LidarStamp> {
        let mut out = self.expire(t);
        if let Some(p) = self.pps {
            if !p.paired {
                self.clock.note_missing_ngm();
                out.extend(self.release_held());
            }
        }
        self.clock.latch_pps(t);
        self.pps = Some(PendingPps { at: t, paired: false });
        out
    }

    /// NGM sentence fully received on the serial input.
    pub fn on_ngm(&mut self, t: TrueTime, line: &str) -> Result<Vec<LidarStamp>, SensorError> {
        let mut out = self.expire(t);
        let sentence = parse_gprmc(line.trim_end().as_bytes())?;
        match self.pps {
            Some(p) if !p.paired && self.window.contains(t.since(p.at)) => {
                self.clock.discipline(p.at, &sentence)?;
                self.pps = Some(PendingPps { paired: true, ..p });
                out.extend(self.release_held());
            }
            _ => self.counters.ngm_rejected += 1,
        }
        Ok(out)
    }

    /// Emits the next packet at true time `t`. Returns every stamp that is
    /// final at this point, including held disciplined ones.
    pub fn on_emit(&mut self, t: TrueTime) -> Result<Vec<LidarStamp>, SensorError> {
        let mut out = self.expire(t);
        self.seq += 1;
        self.counters.packets += 1;
        let seq = self.seq;

        let mut delay = self.delay_rng.draw(&self.cfg.arrival_jitter)?;
        if self.spike_rng.bernoulli(self.cfg.spike.probability) {
            delay += self.spike_rng.draw(&self.cfg.spike.magnitude)?;
            self.counters.spikes += 1;
        }
        let mut arrival = t.add_ns(delay.max(0.0).round() as i64);
        if let Some(prev) = self.last_arrival {
            arrival = arrival.max(prev.add_ns(self.cfg.host_gap_ns));
        }
        self.last_arrival = Some(arrival);
        out.push(LidarStamp {
            scheme: LidarScheme::Arrival,
            synced: true,
            seq,
            timestamp_ns: self.host.read(arrival),
            true_ns: t.as_ns(),
        });

        let raw = self.clock.oscillator().read(t);
        out.push(LidarStamp {
            scheme: LidarScheme::Internal,
            synced: false,
            seq,
            timestamp_ns: floor_to(raw, self.cfg.internal_quantum_ns),
            true_ns: t.as_ns(),
        });

        match self.pps {
            Some(p) if !p.paired && t >= p.at => self.held.push((seq, t, raw)),
            _ => {
                let s = self.disciplined_stamp(seq, t, raw);
                self.counters.unsynced += u64::from(!s.synced);
                out.push(s);
            }
        }
        Ok(out)
    }

    /// Releases anything still held at the end of the run.
    pub fn finish(&mut self) -> Vec<LidarStamp> {
        self.release_held()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nmea::{generate_gprmc, Fix, GprmcSentence};

    const EPOCH: i64 = 1_609_459_200;

    fn ngm(label: i64) -> String {
        generate_gprmc(&GprmcSentence::for_second(label, &Fix::default()).unwrap()).unwrap()
    }

    #[test]
    fn ideal_lidar_reports_truth() {
        let mut l = Lidar::new(LidarConfig::ideal(), EPOCH, PairingWindow::default(), 3).unwrap();
        let mut stamps = l.on_pps(TrueTime::ZERO);
        for k in 0..200 {
            let t = l.emission_time(k);
            if k == 80 {
                stamps.extend(l.on_ngm(t, &ngm(EPOCH)).unwrap());
            }
            stamps.extend(l.on_emit(t).unwrap());
        }
        stamps.extend(l.finish());
        assert_eq!(stamps.len(), 600);
        for s in &stamps {
            assert!(s.synced || s.scheme == LidarScheme::Internal);
            assert_eq!(s.timestamp_ns, s.true_ns, "{s:?}");
        }
    }

    #[test]
    fn held_until_ngm() {
        let mut l = Lidar::new(LidarConfig::ideal(), EPOCH, PairingWindow::default(), 3).unwrap();
        l.on_pps(TrueTime::ZERO);
        let out = l.on_emit(TrueTime::from_millis(1)).unwrap();
        assert!(out.iter().all(|s| s.scheme != LidarScheme::PpsDisciplined));
        let released = l.on_ngm(TrueTime::from_millis(573), &ngm(EPOCH)).unwrap();
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].timestamp_ns, 1_000_000);
    }

    #[test]
    fn missing_ngm_free_runs() {
        let cfg = LidarConfig { internal_clock: ClockState::with_rate(20.0), ..LidarConfig::ideal() };
        let mut l = Lidar::new(cfg, EPOCH, PairingWindow::default(), 3).unwrap();
        l.on_pps(TrueTime::ZERO);
        l.on_ngm(TrueTime::from_millis(573), &ngm(EPOCH)).unwrap();
        l.on_pps(TrueTime::from_secs(1));
        // second NGM lost; the window closes at 1.9 s
        let out = l.on_emit(TrueTime::from_millis(1950)).unwrap();
        let d: Vec<_> = out.iter().filter(|s| s.scheme == LidarScheme::PpsDisciplined).collect();
        assert_eq!(d.len(), 1);
        assert_eq!(l.clock().missed_ngm(), 1);
        // free-running since the reload at 0: 1.95 s * 20 ppm = 39 us
        assert_eq!(d[0].timestamp_ns - d[0].true_ns, 39_000);
    }

    #[test]
    fn ngm_outside_window_rejected() {
        let mut l = Lidar::new(LidarConfig::ideal(), EPOCH, PairingWindow::default(), 3).unwrap();
        l.on_pps(TrueTime::ZERO);
        l.on_ngm(TrueTime::from_millis(10), &ngm(EPOCH)).unwrap();
        assert_eq!(l.counters().ngm_rejected, 1);
        assert_eq!(l.clock().reloads(), 0);
    }

    #[test]
    fn before_first_reload_is_unsynced() {
        let mut l = Lidar::new(LidarConfig::ideal(), EPOCH, PairingWindow::default(), 3).unwrap();
        let out = l.on_emit(TrueTime::from_millis(5)).unwrap();
        let d = out.iter().find(|s| s.scheme == LidarScheme::PpsDisciplined).unwrap();
        assert!(!d.synced);
        assert_eq!(d.scheme_label(), "pps_disciplined_unsynced");
    }

    #[test]
    fn fifo_delivery_spacing() {
        let cfg = LidarConfig {
            packet_period_ns: 1_000,
            arrival_jitter: Distribution::Uniform { low: 0.0, high: 50_000.0 },
            host_gap_ns: 700,
            ..LidarConfig::ideal()
        };
        let mut l = Lidar::new(cfg, EPOCH, PairingWindow::default(), 9).unwrap();
        let mut prev = None;
        for k in 0..2000 {
            let t = l.emission_time(k);
            let a = l.on_emit(t).unwrap()[0];
            assert!(a.timestamp_ns >= t.as_ns());
            if let Some(p) = prev {
                assert!(a.timestamp_ns - p >= 700);
            }
            prev = Some(a.timestamp_ns);
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in LidarScheme::ALL {
            assert_eq!(s.as_str().parse::<LidarScheme>().unwrap(), s);
        }
        assert!("gps".parse::<LidarScheme>().is_err());
    }
}
