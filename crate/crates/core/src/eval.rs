//! Precision evaluation: record CSV schema, period statistics, histograms
//! and the per-scheme comparison table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 timestamps, got {0}")]
    TooFewTimestamps(usize),
    #[error("timestamps decrease at index {index}: {prev} -> {next}")]
    NotSorted { index: usize, prev: i64, next: i64 },
    #[error("record {sensor_id}/{seq} has no true_ns")]
    MissingTruth { sensor_id: String, seq: u64 },
    #[error("bin width must be > 0, got {0}")]
    InvalidBinWidth(i64),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::TooFewTimestamps(_) => "E_TOO_FEW",
            EvalError::NotSorted { .. } => "E_NOT_SORTED",
            EvalError::MissingTruth { .. } => "E_MISSING_TRUTH",
            EvalError::InvalidBinWidth(_) => "E_BIN_WIDTH",
            EvalError::Csv(_) => "E_CSV",
            EvalError::Io(_) => "E_IO",
        }
    }
}

/// One timestamped event. `true_ns` is ground truth and exists only in
/// simulation output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimestampRecord {
    pub sensor_id: String,
    pub seq: u64,
    pub scheme: String,
    pub timestamp_ns: i64,
    pub true_ns: Option<i64>,
}

/// A gyro sample: the timestamp record columns followed by angular rate
/// in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GyroRecord {
    pub sensor_id: String,
    pub seq: u64,
    pub scheme: String,
    pub timestamp_ns: i64,
    pub true_ns: Option<i64>,
    pub gx: f64,
    pub gy: f64,
    pub gz: f64,
}

impl GyroRecord {
    pub fn magnitude(&self) -> f64 {
        (self.gx * self.gx + self.gy * self.gy + self.gz * self.gz).sqrt()
    }
}

fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(reader: R) -> Result<Vec<T>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

fn write_csv<T: Serialize, W: Write>(writer: W, rows: &[T], header: &[&str]) -> Result<(), EvalError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(header)?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub const RECORD_HEADER: [&str; 5] = ["sensor_id", "seq", "scheme", "timestamp_ns", "true_ns"];
pub const GYRO_HEADER: [&str; 8] = ["sensor_id", "seq", "scheme", "timestamp_ns", "true_ns", "gx", "gy", "gz"];

pub fn read_records<R: Read>(reader: R) -> Result<Vec<TimestampRecord>, EvalError> {
    read_csv(reader)
}

pub fn write_records<W: Write>(writer: W, records: &[TimestampRecord]) -> Result<(), EvalError> {
    write_csv(writer, records, &RECORD_HEADER)
}

pub fn read_gyro<R: Read>(reader: R) -> Result<Vec<GyroRecord>, EvalError> {
    read_csv(reader)
}

pub fn write_gyro<W: Write>(writer: W, records: &[GyroRecord]) -> Result<(), EvalError> {
    write_csv(writer, records, &GYRO_HEADER)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodStats {
    pub count: u64,
    pub mean_ns: f64,
    /// Population standard deviation (divisor N).
    pub std_ns: f64,
    pub min_ns: i64,
    pub max_ns: i64,
}

/// Differences between neighboring timestamps.
pub fn periods(timestamps: &[i64]) -> Result<Vec<i64>, EvalError> {
    if timestamps.len() < 2 {
        return Err(EvalError::TooFewTimestamps(timestamps.len()));
    }
    timestamps
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            if w[1] < w[0] {
                Err(EvalError::NotSorted { index: i + 1, prev: w[0], next: w[1] })
            } else {
                Ok(w[1] - w[0])
            }
        })
        .collect()
}

/// Statistics of the packet-to-packet periods. Sums are exact in `i128`;
/// the only rounding happens in the final division and square root.
pub fn period_stats(timestamps: &[i64]) -> Result<PeriodStats, EvalError> {
    let d = periods(timestamps)?;
    Ok(stats_of_periods(&d))
}

pub(crate) fn stats_of_periods(d: &[i64]) -> PeriodStats {
    let n = d.len() as i128;
    let (mut s, mut q) = (0i128, 0i128);
    let (mut lo, mut hi) = (i64::MAX, i64::MIN);
    for &p in d {
        s += p as i128;
        q += p as i128 * p as i128;
        lo = lo.min(p);
        hi = hi.max(p);
    }
    let var_n2 = n * q - s * s;
    PeriodStats {
        count: d.len() as u64,
        mean_ns: s as f64 / n as f64,
        std_ns: (var_n2 as f64).sqrt() / n as f64,
        min_ns: lo,
        max_ns: hi,
    }
}

/// Fixed-width bins over `[lo_ns, lo_ns + bins * bin_width_ns)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub lo_ns: i64,
    pub bin_width_ns: i64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn out_of_range(&self) -> u64 {
        self.below + self.above
    }

    pub fn bin_left(&self, i: usize) -> i64 {
        self.lo_ns + i as i64 * self.bin_width_ns
    }

    /// Left edge of the fullest bin.
    pub fn mode_left(&self) -> Option<i64> {
        let (i, &c) = self.counts.iter().enumerate().max_by_key(|&(i, c)| (*c, std::cmp::Reverse(i)))?;
        (c > 0).then(|| self.bin_left(i))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["bin_left_ns", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            wtr.write_record([self.bin_left(i).to_string(), c.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Bins periods over `[range.0, range.1)`; values outside are counted in
/// `below` / `above`.
pub fn histogram(periods: &[i64], bin_width_ns: i64, range: (i64, i64)) -> Result<Histogram, EvalError> {
    if bin_width_ns <= 0 {
        return Err(EvalError::InvalidBinWidth(bin_width_ns));
    }
    let (lo, hi) = (range.0, range.1.max(range.0));
    let bins = ((hi as i128 - lo as i128 + bin_width_ns as i128 - 1) / bin_width_ns as i128) as usize;
    let end = lo as i128 + bins as i128 * bin_width_ns as i128;
    let mut h = Histogram { lo_ns: lo, bin_width_ns, counts: vec![0; bins], below: 0, above: 0 };
    for &p in periods {
        if p < lo {
            h.below += 1;
        } else if p as i128 >= end {
            h.above += 1;
        } else {
            h.counts[((p as i128 - lo as i128) / bin_width_ns as i128) as usize] += 1;
        }
    }
    Ok(h)
}

/// Bin-aligned range covering every period.
pub fn auto_range(periods: &[i64], bin_width_ns: i64) -> (i64, i64) {
    let w = bin_width_ns.max(1);
    let lo = periods.iter().copied().min().unwrap_or(0);
    let hi = periods.iter().copied().max().unwrap_or(0);
    let lo = lo.div_euclid(w) * w;
    let hi = (hi.div_euclid(w) + 1) * w;
    (lo, hi)
}

/// Whether a scheme's timestamps live in a shared time base.
pub fn sync_available(scheme: &str) -> Option<bool> {
    match scheme {
        "arrival" | "pps_disciplined" => Some(true),
        "internal" => Some(false),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchemeRow {
    pub scheme: String,
    pub stats: PeriodStats,
    pub sync: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub rows: Vec<SchemeRow>,
    pub warnings: Vec<String>,
}

impl Comparison {
    pub fn row(&self, scheme: &str) -> Option<&SchemeRow> {
        self.rows.iter().find(|r| r.scheme == scheme)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<18} {:>10} {:>14} {:>12} {:>12} {:>12}  {}",
            "scheme", "periods", "mean_us", "std_us", "min_us", "max_us", "sync"
        );
        for r in &self.rows {
            let sync = match r.sync {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            };
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>14.3} {:>12.3} {:>12.3} {:>12.3}  {}",
                r.scheme,
                r.stats.count,
                r.stats.mean_ns / 1e3,
                r.stats.std_ns / 1e3,
                r.stats.min_ns as f64 / 1e3,
                r.stats.max_ns as f64 / 1e3,
                sync
            );
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["scheme", "count", "mean_ns", "std_ns", "min_ns", "max_ns", "sync"])?;
        for r in &self.rows {
            wtr.write_record([
                r.scheme.clone(),
                r.stats.count.to_string(),
                format!("{:.3}", r.stats.mean_ns),
                format!("{:.3}", r.stats.std_ns),
                r.stats.min_ns.to_string(),
                r.stats.max_ns.to_string(),
                match r.sync {
                    Some(true) => "yes".into(),
                    Some(false) => "no".into(),
                    None => String::new(),
                },
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Timestamps of one scheme in sequence order.
pub fn scheme_timestamps(records: &[TimestampRecord], scheme: &str) -> Vec<i64> {
    let mut rows: Vec<&TimestampRecord> = records.iter().filter(|r| r.scheme == scheme).collect();
    rows.sort_by_key(|r| (r.sensor_id.as_str(), r.seq));
    rows.iter().map(|r| r.timestamp_ns).collect()
}

/// One row per scheme. Schemes listed in `expected` come first, in that
/// order; other schemes follow alphabetically. Expected schemes without
/// data and schemes with fewer than two timestamps are omitted with a
/// warning.
pub fn compare_schemes(records: &[TimestampRecord], expected: &[&str]) -> Comparison {
    let mut groups: BTreeMap<&str, Vec<&TimestampRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.scheme.as_str()).or_default().push(r);
    }
    let mut order: Vec<&str> = expected.to_vec();
    order.extend(groups.keys().filter(|k| !expected.contains(k)));

    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for scheme in order {
        let Some(group) = groups.get_mut(scheme) else {
            warnings.push(format!("scheme `{scheme}` has no records; omitted"));
            continue;
        };
        group.sort_by_key(|r| (r.sensor_id.as_str(), r.seq));
        if group.windows(2).any(|w| w[0].sensor_id == w[1].sensor_id && w[0].seq == w[1].seq) {
            warnings.push(format!("scheme `{scheme}` has duplicate sequence numbers"));
        }
        let ts: Vec<i64> = group.iter().map(|r| r.timestamp_ns).collect();
        match period_stats(&ts) {
            Ok(stats) => rows.push(SchemeRow { scheme: scheme.to_string(), stats, sync: sync_available(scheme) }),
            Err(e) => warnings.push(format!("scheme `{scheme}` omitted: {e}")),
        }
    }
    Comparison { rows, warnings }
}

/// `timestamp_ns - true_ns` per record.
pub fn absolute_error_series(records: &[TimestampRecord]) -> Result<Vec<i64>, EvalError> {
    records
        .iter()
        .map(|r| {
            r.true_ns
                .map(|t| r.timestamp_ns - t)
                .ok_or_else(|| EvalError::MissingTruth { sensor_id: r.sensor_id.clone(), seq: r.seq })
        })
        .collect()
}
