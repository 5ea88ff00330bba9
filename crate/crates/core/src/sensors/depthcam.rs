//! Externally triggered depth camera.
//!
//! Exposures can only start on a grid of `grid_hz` in the camera's own
//! clock. The grid is re-anchored at every accepted trigger pulse. A pulse
//! that lands within `lock_window_ns` of a grid instant starts the exposure
//! immediately; any other pulse waits for the next grid instant. Only every
//! `grid_hz / configured_fps`-th exposure is read out as a frame.

use serde::{Deserialize, Serialize};

use super::{grid_ns, SensorError};
use crate::clocks::ClockState;
use crate::sim::TrueTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthCamConfig {
    pub grid_hz: u32,
    pub configured_fps: u32,
    pub internal_clock: ClockState,
    /// The first frame carries a device timestamp one grid period early.
    pub first_frame_invalid: bool,
    pub lock_window_ns: i64,
}

impl Default for DepthCamConfig {
    fn default() -> Self {
        DepthCamConfig {
            grid_hz: 30,
            configured_fps: 5,
            internal_clock: ClockState::with_rate(12.0),
            first_frame_invalid: true,
            lock_window_ns: 100_000,
        }
    }
}

impl DepthCamConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if self.grid_hz == 0 || self.configured_fps == 0 || !self.grid_hz.is_multiple_of(self.configured_fps) {
            return Err(SensorError::Config(format!(
                "depthcam.grid_hz ({}) must be a positive multiple of configured_fps ({})",
                self.grid_hz, self.configured_fps
            )));
        }
        if self.lock_window_ns < 0 || 2 * self.lock_window_ns >= grid_ns(1, self.grid_hz) {
            return Err(SensorError::Config("depthcam.lock_window_ns must be in [0, grid period / 2)".into()));
        }
        self.internal_clock.validate()?;
        Ok(())
    }

    pub fn stride(&self) -> u32 {
        self.grid_hz / self.configured_fps
    }

    pub fn grid_period_ns(&self) -> i64 {
        grid_ns(1, self.grid_hz)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exposure {
    /// 1-based count of exposures.
    pub index: u64,
    pub at: TrueTime,
    /// Camera clock at exposure start.
    pub local_ns: i64,
    /// Started on the pulse rather than a later grid instant.
    pub locked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DepthFrame {
    /// 1-based frame number.
    pub seq: u64,
    pub device_ts_ns: i64,
    pub exposure_at: TrueTime,
    pub valid: bool,
}

pub struct DepthCamera {
    cfg: DepthCamConfig,
    anchor_local: i64,
    last_exposure_local: Option<i64>,
    exposures: u64,
    frames: u64,
    absorbed: u64,
}

impl DepthCamera {
    pub fn new(cfg: DepthCamConfig) -> Result<Self, SensorError> {
        cfg.validate()?;
        Ok(DepthCamera { cfg, anchor_local: 0, last_exposure_local: None, exposures: 0, frames: 0, absorbed: 0 })
    }

    pub fn config(&self) -> &DepthCamConfig {
        &self.cfg
    }

    pub fn absorbed(&self) -> u64 {
        self.absorbed
    }

    /// A trigger pulse reaches the camera at true time `t`.
    pub fn on_pulse(&mut self, t: TrueTime) -> (Option<Exposure>, Option<DepthFrame>) {
        let clock = &self.cfg.internal_clock;
        let local = clock.deterministic_reading(t);
        let hz = self.cfg.grid_hz;
        let period = self.cfg.grid_period_ns();
        let d = local - self.anchor_local;
        let m = (d as i128 * hz as i128).div_euclid(1_000_000_000) as i64;
        let near = [grid_ns(m, hz), grid_ns(m + 1, hz)];
        let locked = near.iter().any(|&g| (d - g).abs() <= self.cfg.lock_window_ns);
        let (exp_local, at) = if locked {
            (local, t)
        } else {
            let l = self.anchor_local + near[1];
            (l, clock.true_time_of(l))
        };

        if let Some(last) = self.last_exposure_local {
            if exp_local < last + period - self.cfg.lock_window_ns {
                self.absorbed += 1;
                return (None, None);
            }
        }
        self.anchor_local = local;
        self.last_exposure_local = Some(exp_local);
        self.exposures += 1;
        let exposure = Exposure { index: self.exposures, at, local_ns: exp_local, locked };

        let frame = self.exposures.is_multiple_of(self.cfg.stride() as u64).then(|| {
            self.frames += 1;
            let invalid = self.frames == 1 && self.cfg.first_frame_invalid;
            DepthFrame {
                seq: self.frames,
                device_ts_ns: if invalid { exp_local - period } else { exp_local },
                exposure_at: at,
                valid: !invalid,
            }
        });
        (Some(exposure), frame)
    }
}
