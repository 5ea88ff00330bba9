//! Simulator and toolkit for an MCU-based heterogeneous time-synchronization
//! rig: a microcontroller that mimics a GPS receiver (PPS + NMEA GPRMC) to
//! discipline a LiDAR, timestamps IMU samples by interrupt, triggers a depth
//! camera and aligns an independent smartphone clock in software.

pub mod clocks;
pub mod eval;
pub mod mcu;
pub mod nmea;
pub mod scenario;
pub mod sensors;
pub mod sim;
pub mod sync;

pub mod cli;

pub use sim::{Distribution, Engine, Event, EventKind, RngStream, SimError, TrueTime};
