//! Simulated sensors: a LiDAR with three timestamping schemes, an IMU
//! sampled on the MCU clock, a trigger-driven depth camera and a
//! smartphone on its own clock.

use thiserror::Error;

use crate::clocks::ClockError;
use crate::nmea::NmeaError;
use crate::sim::{SimError, NANOS_PER_SEC};

pub mod depthcam;
pub mod imu;
pub mod lidar;
pub mod motion;
pub mod phone;

pub use depthcam::{DepthCamConfig, DepthCamera, DepthFrame, Exposure};
pub use imu::{imu_stream, ImuConfig};
pub use lidar::{Lidar, LidarConfig, LidarScheme, LidarStamp, SpikeConfig};
pub use motion::{MotionConfig, MotionProfile};
pub use phone::{phone_streams, PhoneConfig, PhoneSample, PhoneStreams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid sensor config: {0}")]
    Config(String),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nmea(#[from] NmeaError),
}

/// `floor(k * 1e9 / hz)`: the k-th instant of a `hz` grid, in ns.
pub(crate) fn grid_ns(k: i64, hz: u32) -> i64 {
    (k as i128 * NANOS_PER_SEC as i128).div_euclid(hz as i128) as i64
}
