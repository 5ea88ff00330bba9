//! IMU data-ready source.

use serde::{Deserialize, Serialize};

use super::{grid_ns, SensorError};
use crate::clocks::{ClockState, McuTimerConfig};
use crate::sim::TrueTime;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuConfig {
    pub sample_rate_hz: u32,
    /// Clocked by the MCU reference signal. Otherwise the IMU runs on
    /// `private_clock`.
    pub driven_by_mcu_clock: bool,
    pub private_clock: ClockState,
    /// White noise per gyro axis, rad/s.
    pub gyro_noise_sigma: f64,
}

impl Default for ImuConfig {
    fn default() -> Self {
        ImuConfig {
            sample_rate_hz: 100,
            driven_by_mcu_clock: true,
            private_clock: ClockState::ideal(),
            gyro_noise_sigma: 0.005,
        }
    }
}

impl ImuConfig {
    pub fn validate(&self, timer: &McuTimerConfig) -> Result<(), SensorError> {
        if self.sample_rate_hz == 0 {
            return Err(SensorError::Config("imu.sample_rate_hz must be > 0".into()));
        }
        if self.driven_by_mcu_clock && timer.ticks_per_period(self.sample_rate_hz as u64).is_none() {
            return Err(SensorError::Config(format!(
                "imu.sample_rate_hz {} does not divide the MCU tick rate",
                self.sample_rate_hz
            )));
        }
        if !(self.gyro_noise_sigma.is_finite() && self.gyro_noise_sigma >= 0.0) {
            return Err(SensorError::Config("imu.gyro_noise_sigma must be >= 0".into()));
        }
        self.private_clock.validate()?;
        Ok(())
    }
}

/// True instants of data-ready edges in `(0, t_end]`.
pub fn imu_stream(
    cfg: &ImuConfig,
    timer: &McuTimerConfig,
    mcu: &ClockState,
    t_end: TrueTime,
) -> Result<Vec<TrueTime>, SensorError> {
    cfg.validate(timer)?;
    let mut out = Vec::new();
    if cfg.driven_by_mcu_clock {
        let period = timer.ticks_per_period(cfg.sample_rate_hz as u64).expect("validated");
        for k in 1u64.. {
            let at = mcu.true_time_of(timer.local_ns_at_tick(k * period));
            if at > t_end {
                break;
            }
            if at > TrueTime::ZERO {
                out.push(at);
            }
        }
    } else {
        for k in 1i64.. {
            let at = cfg.private_clock.true_time_of(grid_ns(k, cfg.sample_rate_hz));
            if at > t_end {
                break;
            }
            if at > TrueTime::ZERO {
                out.push(at);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_seconds_at_100hz() {
        let timer = McuTimerConfig::default();
        let v = imu_stream(&ImuConfig::default(), &timer, &ClockState::ideal(), TrueTime::from_secs(10)).unwrap();
        assert_eq!(v.len(), 1000);
        assert!(v.windows(2).all(|w| w[1].since(w[0]) == 10_000_000));
    }

    #[test]
    fn rate_must_divide_tick_rate() {
        let timer = McuTimerConfig::default();
        let cfg = ImuConfig { sample_rate_hz: 7, ..Default::default() };
        assert!(imu_stream(&cfg, &timer, &ClockState::ideal(), TrueTime::from_secs(1)).is_err());
    }
}
