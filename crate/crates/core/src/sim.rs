//! Discrete-event engine: ground-truth time, an ordered event queue and
//! seeded random streams.
//!
//! Events are dispatched in `(at, seq)` order, where `seq` is the creation
//! counter, so ties at the same instant resolve in scheduling order. The end
//! bound of [`Engine::run_until`] is inclusive.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const NANOS_PER_SEC: i64 = 1_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} ns is before current time {now} ns")]
    ScheduledInPast { at: i64, now: i64 },
    #[error("run_until({t_end}) is before current time {now} ns")]
    EndBeforeNow { t_end: i64, now: i64 },
    #[error("time arithmetic overflow")]
    Overflow,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Simulator ground-truth instant, integer nanoseconds since the simulation epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrueTime(i64);

impl TrueTime {
    pub const ZERO: TrueTime = TrueTime(0);

    pub const fn from_ns(ns: i64) -> Self {
        TrueTime(ns)
    }

    pub const fn from_micros(us: i64) -> Self {
        TrueTime(us * 1_000)
    }

    pub const fn from_millis(ms: i64) -> Self {
        TrueTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: i64) -> Self {
        TrueTime(s * NANOS_PER_SEC)
    }

    /// Rounds to the nearest nanosecond.
    pub fn from_secs_f64(s: f64) -> Self {
        TrueTime((s * NANOS_PER_SEC as f64).round() as i64)
    }

    pub const fn as_ns(self) -> i64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn checked_add_ns(self, ns: i64) -> Option<TrueTime> {
        self.0.checked_add(ns).map(TrueTime)
    }

    pub fn checked_sub(self, other: TrueTime) -> Option<i64> {
        self.0.checked_sub(other.0)
    }

    /// Panics on overflow; use [`TrueTime::checked_add_ns`] where the
    /// operands are not known to be bounded.
    pub fn add_ns(self, ns: i64) -> TrueTime {
        self.checked_add_ns(ns).expect("TrueTime overflow")
    }

    pub fn since(self, earlier: TrueTime) -> i64 {
        self.checked_sub(earlier).expect("TrueTime overflow")
    }
}

impl fmt::Display for TrueTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    TimerOverflow,
    TimerCompare,
    ImuDataReady,
    LidarPacketEmit,
    NetArrival,
    TriggerPulse,
    ExposureStart,
    Custom(u16),
}

impl EventKind {
    pub fn name(&self) -> String {
        match self {
            EventKind::TimerOverflow => "timer-overflow".into(),
            EventKind::TimerCompare => "timer-compare".into(),
            EventKind::ImuDataReady => "imu-data-ready".into(),
            EventKind::LidarPacketEmit => "lidar-packet-emit".into(),
            EventKind::NetArrival => "net-arrival".into(),
            EventKind::TriggerPulse => "trigger-pulse".into(),
            EventKind::ExposureStart => "exposure-start".into(),
            EventKind::Custom(id) => format!("custom-{id}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<P> {
    pub at: TrueTime,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.at, self.0.seq) == (other.0.at, other.0.seq)
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.at, self.0.seq).cmp(&(other.0.at, other.0.seq))
    }
}

/// Single-threaded event engine. `P` is the model-specific payload.
pub struct Engine<P> {
    now: TrueTime,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Queued<P>>>,
    scheduled: u64,
    dispatched: u64,
    trace: Option<Vec<u8>>,
}

impl<P> Default for Engine<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Engine<P> {
    pub fn new() -> Self {
        Engine { now: TrueTime::ZERO, next_seq: 0, queue: BinaryHeap::new(), scheduled: 0, dispatched: 0, trace: None }
    }

    /// Records `true_time_ns<TAB>seq<TAB>kind` for every dispatched event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> TrueTime {
        self.now
    }

    pub fn scheduled(&self) -> u64 {
        self.scheduled
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, at: TrueTime, kind: EventKind, payload: P) -> Result<u64, SimError> {
        if at < self.now {
            return Err(SimError::ScheduledInPast { at: at.as_ns(), now: self.now.as_ns() });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.scheduled += 1;
        self.queue.push(Reverse(Queued(Event { at, seq, kind, payload })));
        Ok(seq)
    }

    pub fn peek_time(&self) -> Option<TrueTime> {
        self.queue.peek().map(|q| q.0 .0.at)
    }

    /// Pops the next event if it is due at or before `t_end`.
    pub fn pop_until(&mut self, t_end: TrueTime) -> Option<Event<P>> {
        if self.peek_time()? > t_end {
            return None;
        }
        let Reverse(Queued(ev)) = self.queue.pop()?;
        self.now = ev.at;
        self.dispatched += 1;
        if let Some(trace) = self.trace.as_mut() {
            let _ = writeln!(trace, "{}\t{}\t{}", ev.at.as_ns(), ev.seq, ev.kind.name());
        }
        Some(ev)
    }

    /// Dispatches every event with `at <= t_end` to `handler`, which may
    /// schedule further events. Leaves the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: TrueTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Engine<P>, Event<P>),
    {
        if t_end < self.now {
            return Err(SimError::EndBeforeNow { t_end: t_end.as_ns(), now: self.now.as_ns() });
        }
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            handler(self, ev);
        }
        self.now = t_end;
        Ok(count)
    }

    pub fn trace(&self) -> Option<&[u8]> {
        self.trace.as_deref()
    }

    pub fn trace_sha256(&self) -> Option<String> {
        self.trace.as_ref().map(|t| hex::encode(Sha256::digest(t)))
    }
}

/// Probability law for random draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Distribution {
    Normal { mean: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
    Mixture { components: Vec<MixtureComponent> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub dist: Distribution,
}

impl Distribution {
    pub fn constant(v: f64) -> Self {
        Distribution::Normal { mean: v, sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        match self {
            Distribution::Normal { mean, sigma } => {
                if !mean.is_finite() || !sigma.is_finite() || *sigma < 0.0 {
                    return Err(SimError::InvalidDistribution(format!(
                        "normal requires finite mean and sigma >= 0 (got {mean}, {sigma})"
                    )));
                }
            }
            Distribution::Uniform { low, high } => {
                if !low.is_finite() || !high.is_finite() || low > high {
                    return Err(SimError::InvalidDistribution(format!(
                        "uniform requires low <= high (got {low}, {high})"
                    )));
                }
            }
            Distribution::Mixture { components } => {
                if components.is_empty() {
                    return Err(SimError::InvalidDistribution("empty mixture".into()));
                }
                let mut total = 0.0;
                for c in components {
                    if !c.weight.is_finite() || c.weight < 0.0 {
                        return Err(SimError::InvalidDistribution(format!("mixture weight {} must be >= 0", c.weight)));
                    }
                    total += c.weight;
                    c.dist.validate()?;
                }
                if total <= 0.0 {
                    return Err(SimError::InvalidDistribution("mixture weights sum to zero".into()));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Normal { mean, .. } => *mean,
            Distribution::Uniform { low, high } => 0.5 * (low + high),
            Distribution::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                components.iter().map(|c| c.weight * c.dist.mean()).sum::<f64>() / total
            }
        }
    }
}

/// A reproducible random stream keyed by `(seed, label)`.
///
/// ChaCha8 is used with the label hashed into the stream id, so streams with
/// different labels are independent and every draw sequence is identical on
/// every platform. Transcendentals come from `libm` for the same reason.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
    draws: u64,
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label));
        RngStream { seed, label: label.to_string(), rng, draws: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn unit(&mut self) -> f64 {
        self.draws += 1;
        self.rng.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.rng.next_u64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        // Box-Muller; u1 is kept away from zero.
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    pub fn draw(&mut self, dist: &Distribution) -> Result<f64, SimError> {
        dist.validate()?;
        Ok(self.draw_unchecked(dist))
    }

    /// Draws without re-validating; `dist` must already be valid.
    pub fn draw_unchecked(&mut self, dist: &Distribution) -> f64 {
        match dist {
            Distribution::Normal { mean, sigma } => {
                if *sigma == 0.0 {
                    *mean
                } else {
                    mean + sigma * self.standard_normal()
                }
            }
            Distribution::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    low + (high - low) * self.unit()
                }
            }
            Distribution::Mixture { components } => {
                let total: f64 = components.iter().map(|c| c.weight).sum();
                let mut pick = self.unit() * total;
                for c in components {
                    if pick < c.weight {
                        return self.draw_unchecked(&c.dist);
                    }
                    pick -= c.weight;
                }
                let last = components.iter().rev().find(|c| c.weight > 0.0).expect("validated mixture");
                self.draw_unchecked(&last.dist)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_instant_dispatches_in_creation_order() {
        let mut eng: Engine<u32> = Engine::new();
        eng.schedule(TrueTime::ZERO, EventKind::Custom(0), 1).unwrap();
        eng.schedule(TrueTime::ZERO, EventKind::Custom(0), 2).unwrap();
        let mut seen = vec![];
        eng.run_until(TrueTime::from_ns(0), |_, ev| seen.push(ev.payload)).unwrap();
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn earlier_event_dispatches_first() {
        let mut eng: Engine<u32> = Engine::new();
        eng.schedule(TrueTime::from_ns(5), EventKind::Custom(0), 5).unwrap();
        eng.schedule(TrueTime::from_ns(3), EventKind::Custom(0), 3).unwrap();
        let mut seen = vec![];
        eng.run_until(TrueTime::from_ns(10), |_, ev| seen.push(ev.payload)).unwrap();
        assert_eq!(seen, vec![3, 5]);
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut eng: Engine<()> = Engine::new();
        assert_eq!(eng.run_until(TrueTime::from_ns(10), |_, _| {}).unwrap(), 0);
        assert_eq!(eng.now(), TrueTime::from_ns(10));
    }

    #[test]
    fn end_bound_is_inclusive() {
        let mut eng: Engine<()> = Engine::new();
        eng.schedule(TrueTime::from_ns(10), EventKind::Custom(1), ()).unwrap();
        eng.schedule(TrueTime::from_ns(11), EventKind::Custom(1), ()).unwrap();
        assert_eq!(eng.run_until(TrueTime::from_ns(10), |_, _| {}).unwrap(), 1);
        assert_eq!(eng.pending(), 1);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut eng: Engine<()> = Engine::new();
        eng.run_until(TrueTime::from_ns(100), |_, _| {}).unwrap();
        let err = eng.schedule(TrueTime::from_ns(99), EventKind::Custom(0), ()).unwrap_err();
        assert_eq!(err, SimError::ScheduledInPast { at: 99, now: 100 });
        assert!(eng.run_until(TrueTime::from_ns(50), |_, _| {}).is_err());
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut eng: Engine<u32> = Engine::new().with_trace();
        eng.schedule(TrueTime::ZERO, EventKind::TimerOverflow, 0).unwrap();
        let n = eng
            .run_until(TrueTime::from_secs(3), |e, ev| {
                let next = ev.at.add_ns(NANOS_PER_SEC);
                e.schedule(next, EventKind::TimerOverflow, ev.payload + 1).unwrap();
            })
            .unwrap();
        // inclusive bound: 0, 1, 2, 3 s
        assert_eq!(n, 4);
        assert_eq!(eng.scheduled(), eng.dispatched() + eng.pending() as u64);
        let trace = String::from_utf8(eng.trace().unwrap().to_vec()).unwrap();
        assert_eq!(trace.lines().next().unwrap(), "0\t0\ttimer-overflow");
    }

    #[test]
    fn degenerate_distributions() {
        let mut r = RngStream::new(1, "x");
        assert_eq!(r.draw(&Distribution::Normal { mean: 0.0, sigma: 0.0 }).unwrap(), 0.0);
        assert_eq!(r.draw(&Distribution::Uniform { low: 3.0, high: 3.0 }).unwrap(), 3.0);
    }

    #[test]
    fn invalid_distributions_are_rejected() {
        let mut r = RngStream::new(1, "x");
        assert!(r.draw(&Distribution::Normal { mean: 0.0, sigma: -1.0 }).is_err());
        assert!(r.draw(&Distribution::Uniform { low: 4.0, high: 3.0 }).is_err());
        assert!(r.draw(&Distribution::Mixture { components: vec![] }).is_err());
    }

    #[test]
    fn normal_sample_mean_converges() {
        let mut r = RngStream::new(7, "latency");
        let d = Distribution::Normal { mean: 3.47, sigma: 0.0024 };
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.draw(&d).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 3.47).abs() < 0.001, "{mean}");
    }

    #[test]
    fn streams_are_reproducible_and_independent() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(42, "lidar");
            (0..8).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(42, "lidar");
            (0..8).map(|_| r.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut r = RngStream::new(42, "imu");
            (0..8).map(|_| r.next_u64()).collect()
        };
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn mixture_respects_weights() {
        let d = Distribution::Mixture {
            components: vec![
                MixtureComponent { weight: 0.75, dist: Distribution::constant(0.0) },
                MixtureComponent { weight: 0.25, dist: Distribution::constant(1.0) },
            ],
        };
        let mut r = RngStream::new(3, "mix");
        let n = 40_000;
        let ones: f64 = (0..n).map(|_| r.draw(&d).unwrap()).sum();
        let frac = ones / n as f64;
        // binomial sd ~ 0.0022
        assert!((frac - 0.25).abs() < 0.011, "{frac}");
        assert_eq!(d.mean(), 0.25);
    }
}
