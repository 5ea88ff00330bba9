//! Shared angular-velocity ground truth seen by every gyro on the rig.

use serde::{Deserialize, Serialize};

use super::SensorError;
use crate::sim::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub components_per_axis: usize,
    pub min_hz: f64,
    pub max_hz: f64,
    /// Peak amplitude of each sine component, rad/s.
    pub amplitude_rad_s: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { components_per_axis: 8, min_hz: 0.3, max_hz: 5.0, amplitude_rad_s: 1.0 }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.min_hz > 0.0 && self.min_hz <= self.max_hz && self.max_hz.is_finite()) {
            return Err(SensorError::Config("motion needs 0 < min_hz <= max_hz".into()));
        }
        if !(self.amplitude_rad_s.is_finite() && self.amplitude_rad_s >= 0.0) {
            return Err(SensorError::Config("motion.amplitude_rad_s must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Sine {
    amp: f64,
    hz: f64,
    phase: f64,
}

/// Sum of sines per axis, in the rig frame.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    axes: [Vec<Sine>; 3],
}

impl MotionProfile {
    pub fn zero() -> Self {
        MotionProfile { axes: [Vec::new(), Vec::new(), Vec::new()] }
    }

    pub fn multi_sine(cfg: &MotionConfig, seed: u64) -> Result<Self, SensorError> {
        cfg.validate()?;
        let mut rng = RngStream::new(seed, "motion");
        let mut axes: [Vec<Sine>; 3] = Default::default();
        for axis in axes.iter_mut() {
            for _ in 0..cfg.components_per_axis {
                let hz = cfg.min_hz + (cfg.max_hz - cfg.min_hz) * rng.unit();
                let amp = cfg.amplitude_rad_s * (0.3 + 0.7 * rng.unit());
                let phase = std::f64::consts::TAU * rng.unit();
                axis.push(Sine { amp, hz, phase });
            }
        }
        Ok(MotionProfile { axes })
    }

    /// Angular velocity at true time `t_s` seconds, rad/s.
    pub fn omega(&self, t_s: f64) -> [f64; 3] {
        let mut w = [0.0; 3];
        for (out, axis) in w.iter_mut().zip(&self.axes) {
            *out = axis.iter().map(|s| s.amp * libm::sin(std::f64::consts::TAU * s.hz * t_s + s.phase)).sum();
        }
        w
    }

    pub fn magnitude(&self, t_s: f64) -> f64 {
        let [x, y, z] = self.omega(t_s);
        libm::sqrt(x * x + y * y + z * z)
    }
}
