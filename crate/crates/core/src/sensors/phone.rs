//! Smartphone camera and gyro on an independent clock.
//!
//! Both streams are sampled on the phone clock. The timestamp is the
//! phone-local sampling instant; the host arrival time is metadata only.

use serde::{Deserialize, Serialize};

use super::{grid_ns, MotionProfile, SensorError};
use crate::clocks::ClockState;
use crate::sim::{Distribution, RngStream, TrueTime, NANOS_PER_SEC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhoneConfig {
    pub clock: ClockState,
    pub cam_fps: u32,
    pub gyro_rate_hz: u32,
    /// Sample-to-host delivery delay, ns.
    pub net_jitter: Distribution,
    pub gyro_noise_sigma: f64,
    /// Phone-local instant of the first camera frame; frames follow at
    /// exactly `1 / cam_fps`.
    pub frame_phase_ns: i64,
}

impl Default for PhoneConfig {
    fn default() -> Self {
        PhoneConfig {
            clock: ClockState { offset0_ns: 12_300_000, ..ClockState::ideal() },
            cam_fps: 30,
            gyro_rate_hz: 400,
            net_jitter: Distribution::Normal { mean: 25_000_000.0, sigma: 8_000_000.0 },
            gyro_noise_sigma: 0.01,
            frame_phase_ns: 7_000_000,
        }
    }
}

impl PhoneConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.cam_fps == 0 || self.gyro_rate_hz == 0 {
            return Err(SensorError::Config("phone rates must be > 0".into()));
        }
        if !(self.gyro_noise_sigma.is_finite() && self.gyro_noise_sigma >= 0.0) {
            return Err(SensorError::Config("phone.gyro_noise_sigma must be >= 0".into()));
        }
        self.net_jitter.validate()?;
        self.clock.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhoneSample {
    /// 1-based.
    pub seq: u64,
    pub local_ns: i64,
    pub at: TrueTime,
    pub arrival_at: TrueTime,
    /// Phone-frame angular rate for gyro samples; zero for frames.
    pub gyro: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhoneStreams {
    pub frames: Vec<PhoneSample>,
    pub gyro: Vec<PhoneSample>,
}

/// Phone-local instants `phase + k / hz` whose true time lies in `[0, t_end]`.
fn local_grid(clock: &ClockState, hz: u32, phase: i64, t_end: TrueTime) -> Vec<(i64, TrueTime)> {
    let at_zero = clock.deterministic_reading(TrueTime::ZERO);
    let k0 = ((at_zero - phase) as i128 * hz as i128).div_euclid(NANOS_PER_SEC as i128) as i64 - 1;
    let mut out = Vec::new();
    for k in k0.. {
        let local = phase + grid_ns(k, hz);
        let at = clock.true_time_of(local);
        if at > t_end {
            break;
        }
        if at >= TrueTime::ZERO {
            out.push((local, at));
        }
    }
    out
}

pub fn phone_streams(
    cfg: &PhoneConfig,
    motion: &MotionProfile,
    t_end: TrueTime,
    seed: u64,
) -> Result<PhoneStreams, SensorError> {
    cfg.validate()?;
    let mut net = RngStream::new(seed, "phone.net");
    let mut noise = RngStream::new(seed, "phone.gyro");
    let mut arrive = |at: TrueTime| at.add_ns(net.draw_unchecked(&cfg.net_jitter).max(0.0).round() as i64);

    let frames = local_grid(&cfg.clock, cfg.cam_fps, cfg.frame_phase_ns, t_end)
        .into_iter()
        .enumerate()
        .map(|(i, (local_ns, at))| PhoneSample {
            seq: i as u64 + 1,
            local_ns,
            at,
            arrival_at: arrive(at),
            gyro: [0.0; 3],
        })
        .collect();

    let mut gyro = Vec::new();
    for (i, (local_ns, at)) in local_grid(&cfg.clock, cfg.gyro_rate_hz, 0, t_end).into_iter().enumerate() {
        let [x, y, z] = motion.omega(at.as_secs_f64());
        let mut g = [y, -x, z];
        if cfg.gyro_noise_sigma > 0.0 {
            for v in g.iter_mut() {
                *v += cfg.gyro_noise_sigma * noise.standard_normal();
            }
        }
        gyro.push(PhoneSample { seq: i as u64 + 1, local_ns, at, arrival_at: arrive(at), gyro: g });
    }
    Ok(PhoneStreams { frames, gyro })
}
