//! Synchronization algorithms: gyro cross-correlation clock offset,
//! trigger phase alignment and trigger-to-frame matching.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::sim::NANOS_PER_SEC;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("series too short: need {needed}, got {got}")]
    TooShort { needed: String, got: String },
    #[error("timestamps not strictly increasing at index {0}")]
    NotIncreasing(usize),
    #[error("sample periods differ: {0} ns vs {1} ns")]
    PeriodMismatch(i64, i64),
    #[error("period must be > 0")]
    ZeroPeriod,
    #[error("insufficient excitation: variance {variance:.3e} below {threshold:.3e}")]
    InsufficientExcitation { variance: f64, threshold: f64 },
    #[error("no trigger pulse {pulse_index} for frame {frame_seq}")]
    MatchGap { frame_seq: u64, pulse_index: u64 },
    #[error("{what} not monotone at position {index}")]
    NonMonotone { what: &'static str, index: usize },
    #[error("grid_hz ({grid_hz}) must be a positive multiple of fps ({fps})")]
    InvalidStride { grid_hz: u32, fps: u32 },
}

impl SyncError {
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::TooShort { .. } => "E_TOO_SHORT",
            SyncError::NotIncreasing(_) => "E_NOT_INCREASING",
            SyncError::PeriodMismatch(..) => "E_PERIOD_MISMATCH",
            SyncError::ZeroPeriod => "E_ZERO_PERIOD",
            SyncError::InsufficientExcitation { .. } => "E_INSUFFICIENT_EXCITATION",
            SyncError::MatchGap { .. } => "E_MATCH_GAP",
            SyncError::NonMonotone { .. } => "E_NON_MONOTONE",
            SyncError::InvalidStride { .. } => "E_INVALID_STRIDE",
        }
    }
}

/// Samples at `start_ns + i * period_ns`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniformSeries {
    pub start_ns: i64,
    pub period_ns: i64,
    pub values: Vec<f64>,
}

impl UniformSeries {
    pub fn time_of(&self, i: usize) -> i64 {
        self.start_ns + i as i64 * self.period_ns
    }

    pub fn span_ns(&self) -> i64 {
        (self.values.len().saturating_sub(1)) as i64 * self.period_ns
    }
}

/// Linear interpolation onto the multiples of `period_ns` inside the
/// sample span.
pub fn resample_uniform(samples: &[(i64, f64)], period_ns: i64) -> Result<UniformSeries, SyncError> {
    if period_ns <= 0 {
        return Err(SyncError::ZeroPeriod);
    }
    if let Some(i) = samples.windows(2).position(|w| w[1].0 <= w[0].0) {
        return Err(SyncError::NotIncreasing(i + 1));
    }
    let too_short = |got: usize| SyncError::TooShort { needed: "2 grid points".into(), got: format!("{got}") };
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(too_short(0));
    };
    let start =
        first.0.div_euclid(period_ns) * period_ns + if first.0.rem_euclid(period_ns) == 0 { 0 } else { period_ns };
    if start > last.0 {
        return Err(too_short(0));
    }
    let n = ((last.0 - start) / period_ns + 1) as usize;
    if n < 2 {
        return Err(too_short(n));
    }
    let mut values = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let t = start + i as i64 * period_ns;
        while j + 1 < samples.len() && samples[j + 1].0 < t {
            j += 1;
        }
        let (t0, v0) = samples[j];
        if t0 == t || j + 1 == samples.len() {
            values.push(v0);
            continue;
        }
        let (t1, v1) = samples[j + 1];
        let w = (t - t0) as f64 / (t1 - t0) as f64;
        values.push(v0 + w * (v1 - v0));
    }
    Ok(UniformSeries { start_ns: start, period_ns, values })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetConfig {
    pub max_lag_ns: i64,
    /// Minimum overlap of the two series at any searched lag.
    pub min_overlap_ns: i64,
    pub min_duration_ns: i64,
    pub min_variance: f64,
    pub confidence_threshold: f64,
    pub subsample: bool,
}

impl Default for OffsetConfig {
    fn default() -> Self {
        OffsetConfig {
            max_lag_ns: 2 * NANOS_PER_SEC,
            min_overlap_ns: NANOS_PER_SEC,
            min_duration_ns: 2 * NANOS_PER_SEC,
            min_variance: 1e-4,
            confidence_threshold: 3.0,
            subsample: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMethod {
    IntegerLag,
    Subsample,
}

impl OffsetMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            OffsetMethod::IntegerLag => "integer_lag",
            OffsetMethod::Subsample => "subsample",
        }
    }
}

/// `b`'s clock reads `offset_ns` more than `a`'s clock at the same instant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OffsetEstimate {
    pub offset_ns: i64,
    /// Peak correlation over the largest correlation outside the main lobe.
    pub confidence: f64,
    pub method: OffsetMethod,
    pub lag_samples: i64,
    pub peak_correlation: f64,
    pub low_confidence: bool,
}

/// Pearson correlation of `a[i]` with `b[i + lag]` for every lag in
/// `lags`, from FFT cross sums and prefix sums.
fn normalized_xcorr(a: &[f64], b: &[f64], lags: std::ops::RangeInclusive<i64>) -> Vec<f64> {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();

    let n = (a.len() + b.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex<f64>> = x.iter().map(|&r| Complex::new(r, 0.0)).collect();
        v.resize(n, Complex::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(&a), pad(&b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut c: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    inv.process(&mut c);

    let prefix = |x: &[f64], sq: bool| {
        let mut p = vec![0.0; x.len() + 1];
        for (i, v) in x.iter().enumerate() {
            p[i + 1] = p[i] + if sq { v * v } else { *v };
        }
        p
    };
    let (pa, paa, pb, pbb) = (prefix(&a, false), prefix(&a, true), prefix(&b, false), prefix(&b, true));

    lags.map(|lag| {
        // pairs a[i], b[i + lag] with both indices in range
        let i0 = (-lag).max(0) as usize;
        let i1 = (a.len() as i64).min(b.len() as i64 - lag).max(0) as usize;
        if i1 <= i0 + 1 {
            return 0.0;
        }
        let m = (i1 - i0) as f64;
        let (j0, j1) = ((i0 as i64 + lag) as usize, (i1 as i64 + lag) as usize);
        let sab = c[lag.rem_euclid(n as i64) as usize].re / n as f64;
        let (sa, saa) = (pa[i1] - pa[i0], paa[i1] - paa[i0]);
        let (sb, sbb) = (pb[j1] - pb[j0], pbb[j1] - pbb[j0]);
        let cov = sab - sa * sb / m;
        let va = saa - sa * sa / m;
        let vb = sbb - sb * sb / m;
        if va <= 0.0 || vb <= 0.0 {
            0.0
        } else {
            cov / (va * vb).sqrt()
        }
    })
    .collect()
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

/// Clock offset between two gyro-magnitude series by normalized
/// cross-correlation.
pub fn estimate_offset(a: &UniformSeries, b: &UniformSeries, cfg: &OffsetConfig) -> Result<OffsetEstimate, SyncError> {
    if a.period_ns != b.period_ns {
        return Err(SyncError::PeriodMismatch(a.period_ns, b.period_ns));
    }
    let p = a.period_ns;
    if p <= 0 {
        return Err(SyncError::ZeroPeriod);
    }
    for s in [a, b] {
        if s.span_ns() < cfg.min_duration_ns {
            return Err(SyncError::TooShort {
                needed: format!("{} ns", cfg.min_duration_ns),
                got: format!("{} ns", s.span_ns()),
            });
        }
    }
    let var = variance(&a.values).min(variance(&b.values));
    if !(var >= cfg.min_variance) {
        return Err(SyncError::InsufficientExcitation { variance: var, threshold: cfg.min_variance });
    }

    let min_overlap = (cfg.min_overlap_ns / p).max(2);
    let max_lag = cfg.max_lag_ns / p;
    let lo = (-max_lag).max(min_overlap - a.values.len() as i64);
    let hi = max_lag.min(b.values.len() as i64 - min_overlap);
    if lo > hi {
        return Err(SyncError::TooShort { needed: format!("{min_overlap} overlapping samples"), got: "0".into() });
    }
    let r = normalized_xcorr(&a.values, &b.values, lo..=hi);
    let k = r.iter().enumerate().fold(0, |best, (i, v)| if *v > r[best] { i } else { best });
    let peak = r[k];

    let mut left = k;
    while left > 0 && r[left - 1] < r[left] {
        left -= 1;
    }
    let mut right = k;
    while right + 1 < r.len() && r[right + 1] < r[right] {
        right += 1;
    }
    let sidelobe = r[..left].iter().chain(&r[right + 1..]).fold(0.0f64, |m, v| m.max(v.abs()));
    let confidence = if sidelobe > 0.0 { (peak / sidelobe).clamp(1.0, 1e9) } else { 1e9 };

    let lag = lo + k as i64;
    let mut frac = 0.0;
    let mut method = OffsetMethod::IntegerLag;
    if cfg.subsample && k > 0 && k + 1 < r.len() {
        let (y0, y1, y2) = (r[k - 1], r[k], r[k + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        if denom < 0.0 {
            frac = (0.5 * (y0 - y2) / denom).clamp(-0.5, 0.5);
            method = OffsetMethod::Subsample;
        }
    }
    let offset = (b.start_ns - a.start_ns) as f64 + (lag as f64 + frac) * p as f64;
    Ok(OffsetEstimate {
        offset_ns: offset.round() as i64,
        confidence,
        method,
        lag_samples: lag,
        peak_correlation: peak,
        low_confidence: confidence < cfg.confidence_threshold,
    })
}

/// Pearson correlation against candidate offset (same convention as
/// [`estimate_offset`]) for every lag within `max_lag_ns`.
pub fn correlation_curve(a: &UniformSeries, b: &UniformSeries, max_lag_ns: i64) -> Result<Vec<(i64, f64)>, SyncError> {
    if a.period_ns != b.period_ns {
        return Err(SyncError::PeriodMismatch(a.period_ns, b.period_ns));
    }
    let p = a.period_ns;
    if p <= 0 {
        return Err(SyncError::ZeroPeriod);
    }
    let max_lag = max_lag_ns / p;
    let lo = (-max_lag).max(2 - a.values.len() as i64);
    let hi = max_lag.min(b.values.len() as i64 - 2);
    if lo > hi {
        return Ok(Vec::new());
    }
    let r = normalized_xcorr(&a.values, &b.values, lo..=hi);
    Ok((lo..=hi).zip(r).map(|(lag, v)| (b.start_ns - a.start_ns + lag * p, v)).collect())
}

/// Trigger period `num / den` ns, kept rational so that 30 Hz is exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TriggerPeriod {
    num: i128,
    den: i128,
}

impl TriggerPeriod {
    pub fn from_hz(hz: u32) -> Result<Self, SyncError> {
        if hz == 0 {
            return Err(SyncError::ZeroPeriod);
        }
        Ok(TriggerPeriod { num: NANOS_PER_SEC as i128, den: hz as i128 })
    }

    pub fn from_ns(ns: i64) -> Result<Self, SyncError> {
        if ns <= 0 {
            return Err(SyncError::ZeroPeriod);
        }
        Ok(TriggerPeriod { num: ns as i128, den: 1 })
    }

    pub fn as_ns_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `x mod T`, rounded to the nearest ns.
    pub fn wrap(&self, x: i64) -> i64 {
        let r = (x as i128 * self.den).rem_euclid(self.num);
        let v = (2 * r + self.den) / (2 * self.den);
        if v as f64 >= self.as_ns_f64() {
            0
        } else {
            v as i64
        }
    }
}

/// Shift to add to the trigger phase so trigger pulses coincide with the
/// phone frame grid: `((frame_ts - phase) mod T)`, in `[0, T)`. Residues
/// within 1 ns of a whole period count as aligned and give 0.
pub fn trigger_phase_offset(
    frame_ts_mcu_ns: i64,
    period: TriggerPeriod,
    current_phase_ns: i64,
) -> Result<i64, SyncError> {
    let TriggerPeriod { num, den } = period;
    if num <= 0 || den <= 0 {
        return Err(SyncError::ZeroPeriod);
    }
    let x = ((frame_ts_mcu_ns as i128 - current_phase_ns as i128) * den).rem_euclid(num);
    if x <= den || num - x <= den {
        return Ok(0);
    }
    let dt = (2 * x + den) / (2 * den);
    Ok(dt as i64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FrameMatch {
    pub frame_seq: u64,
    pub pulse_index: u64,
    pub mcu_timestamp_ns: i64,
    /// Device-clock elapsed time minus MCU elapsed time, both measured from
    /// the first surviving match.
    pub residual_ns: i64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MatchResult {
    pub matches: Vec<FrameMatch>,
    pub discarded: Vec<u64>,
}

/// Frame `k` (1-based) was exposed by pulse `k * grid_hz / fps`. Frame 1
/// is discarded. `pulses` are `(index, mcu_ns)`, `frames` are
/// `(seq, device_ns)`.
pub fn match_trigger_frames(
    pulses: &[(u64, i64)],
    frames: &[(u64, i64)],
    grid_hz: u32,
    fps: u32,
) -> Result<MatchResult, SyncError> {
    if grid_hz == 0 || fps == 0 || !grid_hz.is_multiple_of(fps) {
        return Err(SyncError::InvalidStride { grid_hz, fps });
    }
    let stride = (grid_hz / fps) as u64;
    if let Some(i) = pulses.windows(2).position(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1) {
        return Err(SyncError::NonMonotone { what: "pulses", index: i + 1 });
    }
    if let Some(i) = frames.windows(2).position(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1) {
        return Err(SyncError::NonMonotone { what: "frames", index: i + 1 });
    }

    let mut out = MatchResult::default();
    let mut base: Option<(i64, i64)> = None;
    for &(seq, device_ns) in frames {
        if seq <= 1 {
            out.discarded.push(seq);
            continue;
        }
        let want = seq * stride;
        let (_, mcu) = pulses
            .binary_search_by_key(&want, |p| p.0)
            .map(|i| pulses[i])
            .map_err(|_| SyncError::MatchGap { frame_seq: seq, pulse_index: want })?;
        let (d0, m0) = *base.get_or_insert((device_ns, mcu));
        out.matches.push(FrameMatch {
            frame_seq: seq,
            pulse_index: want,
            mcu_timestamp_ns: mcu,
            residual_ns: (device_ns - d0) - (mcu - m0),
        });
    }
    Ok(out)
}
