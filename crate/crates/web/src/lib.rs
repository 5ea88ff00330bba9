//! Browser bindings. Every exported function takes plain numbers and
//! returns a JSON string; the `*_json` functions are the native-testable
//! cores.

use gpsmimic::clocks::{ClockState, McuTimerConfig};
use gpsmimic::eval::{auto_range, histogram, periods, scheme_timestamps};
use gpsmimic::scenario::{lidar_report, simulate, ScenarioConfig};
use gpsmimic::sensors::{imu_stream, phone_streams, ImuConfig, MotionConfig, MotionProfile, PhoneConfig};
use gpsmimic::sim::Distribution;
use gpsmimic::sync::{correlation_curve, estimate_offset, resample_uniform, OffsetConfig, UniformSeries};
use gpsmimic::{RngStream, TrueTime};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_DURATION_S: f64 = 600.0;

fn duration_ok(duration_s: f64) -> Result<(), String> {
    if duration_s > 0.0 && duration_s <= MAX_DURATION_S {
        Ok(())
    } else {
        Err(format!("duration must be in (0, {MAX_DURATION_S}] s"))
    }
}

#[derive(Serialize)]
struct Hist {
    lo_us: f64,
    bin_us: f64,
    counts: Vec<u64>,
    below: u64,
    above: u64,
}

#[derive(Serialize)]
struct SchemeView {
    scheme: String,
    periods: u64,
    mean_us: f64,
    std_us: f64,
    min_us: f64,
    max_us: f64,
    hist: Hist,
}

#[derive(Serialize)]
struct Comparison {
    packets: u64,
    spikes: u64,
    schemes: Vec<SchemeView>,
}

/// LiDAR period statistics and histograms for the three schemes.
pub fn compare_lidar_schemes_json(
    duration_s: f64,
    seed: u64,
    jitter_sigma_us: f64,
    spike_probability: f64,
) -> Result<String, String> {
    duration_ok(duration_s)?;
    let mut cfg = ScenarioConfig::default();
    cfg.scenario.duration_s = duration_s;
    cfg.scenario.seed = seed;
    cfg.scenario.sensors = vec!["lidar".into()];
    cfg.lidar.arrival_jitter = Distribution::Normal { mean: 200_000.0, sigma: jitter_sigma_us * 1e3 };
    cfg.lidar.spike.probability = spike_probability;
    let out = simulate(&cfg).map_err(|e| e.to_string())?;
    let report = lidar_report(&cfg, &out);

    let mut schemes = Vec::new();
    for row in &report.rows {
        let d = periods(&scheme_timestamps(&out.lidar, &row.scheme)).map_err(|e| e.to_string())?;
        // arrival spreads over two packet periods; the others sit within a few µs
        let (bin, range) = if row.scheme == "arrival" {
            (20_000, (0, 2 * cfg.lidar.packet_period_ns))
        } else {
            (1_000, auto_range(&d, 1_000))
        };
        let h = histogram(&d, bin, range).map_err(|e| e.to_string())?;
        let s = &row.stats;
        schemes.push(SchemeView {
            scheme: row.scheme.clone(),
            periods: s.count,
            mean_us: s.mean_ns / 1e3,
            std_us: s.std_ns / 1e3,
            min_us: s.min_ns as f64 / 1e3,
            max_us: s.max_ns as f64 / 1e3,
            hist: Hist {
                lo_us: h.lo_ns as f64 / 1e3,
                bin_us: bin as f64 / 1e3,
                counts: h.counts,
                below: h.below,
                above: h.above,
            },
        });
    }
    let view = Comparison { packets: out.lidar_counters.packets, spikes: out.lidar_counters.spikes, schemes };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Drift {
    t_s: Vec<f64>,
    internal_us: Vec<f64>,
    disciplined_us: Vec<f64>,
    max_abs_disciplined_us: f64,
    final_internal_us: f64,
}

/// Absolute timestamp error of the free-running and PPS-disciplined LiDAR
/// clocks, downsampled to at most `points` samples.
pub fn drift_curves_json(slave_ppm: f64, duration_s: f64, points: usize) -> Result<String, String> {
    duration_ok(duration_s)?;
    let mut cfg = ScenarioConfig::default();
    cfg.scenario.duration_s = duration_s;
    cfg.scenario.sensors = vec!["lidar".into()];
    cfg.scenario.schemes = vec!["internal".into(), "pps_disciplined".into()];
    cfg.mcu.clock = ClockState::ideal();
    cfg.lidar.internal_clock = ClockState::with_rate(slave_ppm);
    let out = simulate(&cfg).map_err(|e| e.to_string())?;

    let errors = |scheme: &str| -> Vec<(i64, i64)> {
        out.lidar
            .iter()
            .filter(|r| r.scheme == scheme)
            .map(|r| {
                let t = r.true_ns.unwrap_or(0);
                (t, r.timestamp_ns - t)
            })
            .collect()
    };
    let internal = errors("internal");
    let disciplined = errors("pps_disciplined");
    let step = (disciplined.len() / points.max(1)).max(1);
    let by_time: std::collections::HashMap<i64, i64> = internal.iter().copied().collect();
    let mut view = Drift {
        t_s: Vec::new(),
        internal_us: Vec::new(),
        disciplined_us: Vec::new(),
        max_abs_disciplined_us: disciplined.iter().map(|e| e.1.abs()).max().unwrap_or(0) as f64 / 1e3,
        final_internal_us: internal.last().map_or(0.0, |e| e.1 as f64 / 1e3),
    };
    for &(t, e) in disciplined.iter().step_by(step) {
        view.t_s.push(t as f64 / 1e9);
        view.disciplined_us.push(e as f64 / 1e3);
        view.internal_us.push(by_time.get(&t).copied().unwrap_or(0) as f64 / 1e3);
    }
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct OffsetView {
    true_offset_ms: f64,
    estimate_ms: f64,
    error_us: f64,
    confidence: f64,
    low_confidence: bool,
    curve_offset_ms: Vec<f64>,
    curve_r: Vec<f64>,
}

fn magnitude_series(samples: impl Iterator<Item = (i64, [f64; 3])>, period_ns: i64) -> Result<UniformSeries, String> {
    let pts: Vec<(i64, f64)> = samples.map(|(t, g)| (t, (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt())).collect();
    resample_uniform(&pts, period_ns).map_err(|e| e.to_string())
}

/// Simulated 400 Hz rig and phone gyros with a known clock offset, and the
/// cross-correlation estimate of that offset.
pub fn estimate_gyro_offset_json(
    true_offset_ms: f64,
    noise_sigma: f64,
    duration_s: f64,
    seed: u64,
) -> Result<String, String> {
    duration_ok(duration_s)?;
    if !(true_offset_ms.abs() <= 1_000.0) {
        return Err("offset must be within +-1000 ms".into());
    }
    if !(noise_sigma >= 0.0) {
        return Err("noise must be >= 0".into());
    }
    let period = 2_500_000;
    let offset = (true_offset_ms * 1e6).round() as i64;
    let t_end = TrueTime::from_secs_f64(duration_s);
    let motion = MotionProfile::multi_sine(&MotionConfig::default(), seed).map_err(|e| e.to_string())?;
    let imu_cfg = ImuConfig { sample_rate_hz: 400, gyro_noise_sigma: noise_sigma, ..ImuConfig::default() };
    let times =
        imu_stream(&imu_cfg, &McuTimerConfig::default(), &ClockState::ideal(), t_end).map_err(|e| e.to_string())?;
    let mut noise = RngStream::new(seed, "web.imu");
    let rig = magnitude_series(
        times
            .iter()
            .map(|t| (t.as_ns(), motion.omega(t.as_secs_f64()).map(|v| v + noise_sigma * noise.standard_normal()))),
        period,
    )?;
    let phone_cfg = PhoneConfig {
        clock: ClockState { offset0_ns: offset, ..ClockState::ideal() },
        gyro_noise_sigma: noise_sigma,
        ..PhoneConfig::default()
    };
    let phone = phone_streams(&phone_cfg, &motion, t_end, seed).map_err(|e| e.to_string())?;
    let phone = magnitude_series(phone.gyro.iter().map(|g| (g.local_ns, g.gyro)), period)?;

    let cfg = OffsetConfig::default();
    let est = estimate_offset(&rig, &phone, &cfg).map_err(|e| e.to_string())?;
    let curve = correlation_curve(&rig, &phone, cfg.max_lag_ns).map_err(|e| e.to_string())?;
    let view = OffsetView {
        true_offset_ms,
        estimate_ms: est.offset_ns as f64 / 1e6,
        error_us: (est.offset_ns - offset) as f64 / 1e3,
        confidence: est.confidence,
        low_confidence: est.low_confidence,
        curve_offset_ms: curve.iter().map(|c| c.0 as f64 / 1e6).collect(),
        curve_r: curve.iter().map(|c| c.1).collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn compare_lidar_schemes(
    duration_s: f64,
    seed: u32,
    jitter_sigma_us: f64,
    spike_probability: f64,
) -> Result<String, JsError> {
    compare_lidar_schemes_json(duration_s, seed as u64, jitter_sigma_us, spike_probability)
        .map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn drift_curves(slave_ppm: f64, duration_s: f64) -> Result<String, JsError> {
    drift_curves_json(slave_ppm, duration_s, 600).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn estimate_gyro_offset(
    true_offset_ms: f64,
    noise_sigma: f64,
    duration_s: f64,
    seed: u32,
) -> Result<String, JsError> {
    estimate_gyro_offset_json(true_offset_ms, noise_sigma, duration_s, seed as u64).map_err(|e| JsError::new(&e))
}
