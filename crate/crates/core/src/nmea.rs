//! NMEA 0183 GPRMC codec and the PPS-to-message pairing rule.
//!
//! Generated sentences use a fixed layout: `hhmmss` time without fractional
//! seconds, `ddmm.mmm` / `dddmm.mmm` coordinates and `ddd.d` speed, course
//! and magnetic variation, terminated by `\r\n`. The parser accepts any
//! decimal precision, an optional fractional-second time, an optional
//! trailing mode indicator and a missing line terminator.

use std::fmt;

use chrono::{DateTime, Datelike, NaiveDate, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::TrueTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NmeaError {
    #[error("forbidden byte {0:#04x} in sentence body")]
    ForbiddenByte(u8),
    #[error("framing: {0}")]
    Framing(String),
    #[error("checksum mismatch: computed {expected}, sentence carries {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("unsupported sentence `{0}`")]
    UnsupportedSentence(String),
    #[error("field `{field}`: {reason} (got `{value}`)")]
    FieldError { field: &'static str, value: String, reason: &'static str },
    #[error("pairing input: {0}")]
    Pairing(String),
}

impl NmeaError {
    /// Short machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            NmeaError::ForbiddenByte(_) => "E_NMEA_FORBIDDEN_BYTE",
            NmeaError::Framing(_) => "E_NMEA_FRAMING",
            NmeaError::ChecksumMismatch { .. } => "E_NMEA_CHECKSUM",
            NmeaError::UnsupportedSentence(_) => "E_NMEA_UNSUPPORTED",
            NmeaError::FieldError { .. } => "E_NMEA_FIELD",
            NmeaError::Pairing(_) => "E_NMEA_PAIRING",
        }
    }
}

fn field_err(field: &'static str, value: &str, reason: &'static str) -> NmeaError {
    NmeaError::FieldError { field, value: value.to_string(), reason }
}

/// XOR of all bytes, as two uppercase hex digits.
pub fn checksum(body: &[u8]) -> Result<String, NmeaError> {
    if let Some(&b) = body.iter().find(|&&b| b == b'$' || b == b'*') {
        return Err(NmeaError::ForbiddenByte(b));
    }
    let x = body.iter().fold(0u8, |acc, b| acc ^ b);
    Ok(format!("{x:02X}"))
}

/// Exact decimal number `units / 10^scale`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decimal {
    pub units: u64,
    pub scale: u8,
}

impl Decimal {
    pub const fn new(units: u64, scale: u8) -> Self {
        Decimal { units, scale }
    }

    fn pow(&self) -> u64 {
        10u64.pow(self.scale as u32)
    }

    pub fn int_part(&self) -> u64 {
        self.units / self.pow()
    }

    pub fn frac_part(&self) -> u64 {
        self.units % self.pow()
    }

    pub fn to_f64(&self) -> f64 {
        self.units as f64 / self.pow() as f64
    }

    fn parse(s: &str) -> Option<Decimal> {
        let (int, frac) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int.is_empty() || frac.len() > 9 {
            return None;
        }
        if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
            return None;
        }
        let scale = frac.len() as u8;
        let int: u64 = int.parse().ok()?;
        let frac: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        let units = int.checked_mul(10u64.pow(scale as u32))?.checked_add(frac)?;
        Some(Decimal { units, scale })
    }

    fn render(&self, int_width: usize) -> String {
        if self.scale == 0 {
            format!("{:0w$}", self.int_part(), w = int_width)
        } else {
            format!("{:0w$}.{:0s$}", self.int_part(), self.frac_part(), w = int_width, s = self.scale as usize)
        }
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hemisphere {
    N,
    S,
    E,
    W,
}

impl Hemisphere {
    fn letter(self) -> char {
        match self {
            Hemisphere::N => 'N',
            Hemisphere::S => 'S',
            Hemisphere::E => 'E',
            Hemisphere::W => 'W',
        }
    }

    fn parse(s: &str) -> Option<Hemisphere> {
        match s {
            "N" => Some(Hemisphere::N),
            "S" => Some(Hemisphere::S),
            "E" => Some(Hemisphere::E),
            "W" => Some(Hemisphere::W),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub degrees: u16,
    pub minutes: Decimal,
    pub hemisphere: Hemisphere,
}

impl Coordinate {
    pub fn to_degrees_f64(&self) -> f64 {
        let v = self.degrees as f64 + self.minutes.to_f64() / 60.0;
        match self.hemisphere {
            Hemisphere::S | Hemisphere::W => -v,
            _ => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtcTime {
    pub hour: u8,
    pub minute: u8,
    pub second: u8,
    /// Fractional seconds, `units < 10^scale`.
    pub fraction: Option<Decimal>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Date {
    pub day: u8,
    pub month: u8,
    /// Two-digit year; 80..=99 map to 19xx, the rest to 20xx.
    pub year: u8,
}

impl Date {
    pub fn full_year(&self) -> i32 {
        if self.year >= 80 {
            1900 + self.year as i32
        } else {
            2000 + self.year as i32
        }
    }

    fn naive(&self) -> Option<NaiveDate> {
        NaiveDate::from_ymd_opt(self.full_year(), self.month as u32, self.day as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixStatus {
    Active,
    Void,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagVar {
    pub degrees: Decimal,
    pub direction: Hemisphere,
}

/// Position, speed and course reported alongside the time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fix {
    pub latitude: Option<Coordinate>,
    pub longitude: Option<Coordinate>,
    pub speed_knots: Option<Decimal>,
    pub course_deg: Option<Decimal>,
    pub magvar: Option<MagVar>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GprmcSentence {
    pub time: UtcTime,
    pub status: FixStatus,
    pub latitude: Option<Coordinate>,
    pub longitude: Option<Coordinate>,
    pub speed_knots: Option<Decimal>,
    pub course_deg: Option<Decimal>,
    pub date: Date,
    pub magvar: Option<MagVar>,
    /// NMEA 2.3 mode indicator; never produced by the generator.
    pub mode: Option<char>,
}

impl GprmcSentence {
    /// Active sentence labelled with the UTC second `epoch_s` (Unix seconds).
    pub fn for_second(epoch_s: i64, fix: &Fix) -> Result<Self, NmeaError> {
        let dt = DateTime::from_timestamp(epoch_s, 0)
            .ok_or_else(|| field_err("time", &epoch_s.to_string(), "not representable"))?;
        let year = dt.year();
        if !(1980..2080).contains(&year) {
            return Err(field_err("date", &year.to_string(), "year outside 1980..2079"));
        }
        Ok(GprmcSentence {
            time: UtcTime {
                hour: dt.hour() as u8,
                minute: dt.minute() as u8,
                second: dt.second() as u8,
                fraction: None,
            },
            status: FixStatus::Active,
            latitude: fix.latitude,
            longitude: fix.longitude,
            speed_knots: fix.speed_knots,
            course_deg: fix.course_deg,
            date: Date { day: dt.day() as u8, month: dt.month() as u8, year: (year % 100) as u8 },
            magvar: fix.magvar,
            mode: None,
        })
    }

    /// Unix seconds of the whole-second label (fraction ignored).
    pub fn epoch_seconds(&self) -> Result<i64, NmeaError> {
        let date = self.date.naive().ok_or_else(|| field_err("date", &self.date_field(), "not a calendar date"))?;
        let dt = date
            .and_hms_opt(self.time.hour as u32, self.time.minute as u32, self.time.second as u32)
            .ok_or_else(|| field_err("time", &self.time_field(), "not a time of day"))?;
        Ok(dt.and_utc().timestamp())
    }

    fn time_field(&self) -> String {
        let t = &self.time;
        let mut s = format!("{:02}{:02}{:02}", t.hour, t.minute, t.second);
        if let Some(f) = t.fraction {
            s.push_str(&format!(".{:0w$}", f.units, w = f.scale as usize));
        }
        s
    }

    fn date_field(&self) -> String {
        format!("{:02}{:02}{:02}", self.date.day, self.date.month, self.date.year)
    }

    pub fn validate(&self) -> Result<(), NmeaError> {
        let t = &self.time;
        if t.hour > 23 || t.minute > 59 || t.second > 59 {
            return Err(field_err("time", &self.time_field(), "out of range"));
        }
        if let Some(f) = t.fraction {
            if f.scale == 0 || f.scale > 9 || f.units >= 10u64.pow(f.scale as u32) {
                return Err(field_err("time", &self.time_field(), "bad fractional seconds"));
            }
        }
        if let Some(c) = self.latitude {
            check_coordinate("latitude", c, 90, [Hemisphere::N, Hemisphere::S])?;
        }
        if let Some(c) = self.longitude {
            check_coordinate("longitude", c, 180, [Hemisphere::E, Hemisphere::W])?;
        }
        if let Some(c) = self.course_deg {
            if c.units >= 360 * 10u64.pow(c.scale as u32) {
                return Err(field_err("course", &c.to_string(), "must be < 360"));
            }
        }
        if let Some(m) = self.magvar {
            if m.degrees.units > 180 * 10u64.pow(m.degrees.scale as u32) {
                return Err(field_err("magvar", &m.degrees.to_string(), "must be <= 180"));
            }
            if !matches!(m.direction, Hemisphere::E | Hemisphere::W) {
                return Err(field_err("magvar", &m.direction.letter().to_string(), "direction must be E or W"));
            }
        }
        for d in [self.speed_knots, self.course_deg, self.magvar.map(|m| m.degrees)].into_iter().flatten() {
            if d.scale > 9 {
                return Err(field_err("decimal", &d.units.to_string(), "more than 9 decimals"));
            }
        }
        if self.date.naive().is_none() {
            return Err(field_err("date", &self.date_field(), "not a calendar date"));
        }
        if let Some(m) = self.mode {
            if !m.is_ascii_uppercase() {
                return Err(field_err("mode", &m.to_string(), "must be an uppercase letter"));
            }
        }
        Ok(())
    }

    /// Comma-joined body between `$` and `*`.
    pub fn body(&self) -> String {
        let coord = |c: Option<Coordinate>, deg_w: usize| match c {
            Some(c) => {
                (format!("{:0w$}{}", c.degrees, c.minutes.render(2), w = deg_w), c.hemisphere.letter().to_string())
            }
            None => (String::new(), String::new()),
        };
        let (lat, ns) = coord(self.latitude, 2);
        let (lon, ew) = coord(self.longitude, 3);
        let dec = |d: Option<Decimal>| d.map(|d| d.render(3)).unwrap_or_default();
        let (mv, mvd) = match self.magvar {
            Some(m) => (m.degrees.render(3), m.direction.letter().to_string()),
            None => (String::new(), String::new()),
        };
        let status = match self.status {
            FixStatus::Active => "A",
            FixStatus::Void => "V",
        };
        let mut body = format!(
            "GPRMC,{},{},{},{},{},{},{},{},{},{},{}",
            self.time_field(),
            status,
            lat,
            ns,
            lon,
            ew,
            dec(self.speed_knots),
            dec(self.course_deg),
            self.date_field(),
            mv,
            mvd
        );
        if let Some(m) = self.mode {
            body.push(',');
            body.push(m);
        }
        body
    }
}

fn check_coordinate(
    field: &'static str,
    c: Coordinate,
    max_deg: u16,
    allowed: [Hemisphere; 2],
) -> Result<(), NmeaError> {
    let text = format!("{}{}", c.degrees, c.minutes);
    if c.minutes.int_part() >= 60 {
        return Err(field_err(field, &text, "minutes must be < 60"));
    }
    if c.degrees > max_deg || (c.degrees == max_deg && c.minutes.units > 0) {
        return Err(field_err(field, &text, "degrees out of range"));
    }
    if !allowed.contains(&c.hemisphere) {
        return Err(field_err(field, &c.hemisphere.letter().to_string(), "wrong hemisphere letter"));
    }
    if c.minutes.scale > 9 {
        return Err(field_err(field, &text, "more than 9 decimals"));
    }
    Ok(())
}

/// Serializes a validated sentence: `$GPRMC,<11 fields>*HH\r\n`.
pub fn generate_gprmc(sentence: &GprmcSentence) -> Result<String, NmeaError> {
    sentence.validate()?;
    let body = sentence.body();
    let cs = checksum(body.as_bytes())?;
    Ok(format!("${body}*{cs}\r\n"))
}

fn parse_coordinate(
    field: &'static str,
    value: &str,
    hemi: &str,
    deg_digits: usize,
) -> Result<Option<Coordinate>, NmeaError> {
    if value.is_empty() && hemi.is_empty() {
        return Ok(None);
    }
    let int_len = value.split('.').next().unwrap_or("").len();
    if int_len != deg_digits + 2 {
        return Err(field_err(field, value, "wrong number of degree/minute digits"));
    }
    let raw = Decimal::parse(value).ok_or_else(|| field_err(field, value, "not a decimal"))?;
    let pow = 10u64.pow(raw.scale as u32);
    let degrees = (raw.int_part() / 100) as u16;
    let minutes = Decimal::new(raw.units - degrees as u64 * 100 * pow, raw.scale);
    let hemisphere = Hemisphere::parse(hemi).ok_or_else(|| field_err(field, hemi, "bad hemisphere"))?;
    Ok(Some(Coordinate { degrees, minutes, hemisphere }))
}

fn parse_opt_decimal(field: &'static str, value: &str) -> Result<Option<Decimal>, NmeaError> {
    if value.is_empty() {
        return Ok(None);
    }
    Decimal::parse(value).map(Some).ok_or_else(|| field_err(field, value, "not a decimal"))
}

fn two_digits(field: &'static str, s: &str) -> Result<u8, NmeaError> {
    if s.len() != 2 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(field_err(field, s, "expected two digits"));
    }
    Ok(s.parse().expect("two ascii digits"))
}

/// Parses one GPRMC sentence, with or without its line terminator.
pub fn parse_gprmc(bytes: &[u8]) -> Result<GprmcSentence, NmeaError> {
    let mut line = bytes;
    for suffix in [&b"\r\n"[..], b"\n", b"\r"] {
        if let Some(stripped) = line.strip_suffix(suffix) {
            line = stripped;
            break;
        }
    }
    if !line.is_ascii() {
        return Err(NmeaError::Framing("non-ASCII byte".into()));
    }
    let line = std::str::from_utf8(line).expect("ascii is utf-8");
    let rest = line.strip_prefix('$').ok_or_else(|| NmeaError::Framing("missing leading `$`".into()))?;
    let (body, cs) =
        rest.rsplit_once('*').ok_or_else(|| NmeaError::Framing("missing `*` checksum delimiter".into()))?;
    if cs.len() != 2 || !cs.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(NmeaError::Framing(format!("checksum `{cs}` is not two hex digits")));
    }
    let expected = checksum(body.as_bytes())?;
    if !expected.eq_ignore_ascii_case(cs) {
        return Err(NmeaError::ChecksumMismatch { expected, found: cs.to_string() });
    }
    let fields: Vec<&str> = body.split(',').collect();
    if fields[0] != "GPRMC" {
        return Err(NmeaError::UnsupportedSentence(fields[0].to_string()));
    }
    if fields.len() != 12 && fields.len() != 13 {
        return Err(field_err("sentence", body, "expected 11 fields (or 12 with mode)"));
    }

    let t = fields[1];
    let (hms, frac) = match t.split_once('.') {
        Some((h, f)) => (h, Some(f)),
        None => (t, None),
    };
    if hms.len() != 6 {
        return Err(field_err("time", t, "expected hhmmss"));
    }
    let fraction = match frac {
        None => None,
        Some(f) if !f.is_empty() && f.len() <= 9 && f.bytes().all(|b| b.is_ascii_digit()) => {
            Some(Decimal::new(f.parse().expect("digits"), f.len() as u8))
        }
        Some(_) => return Err(field_err("time", t, "bad fractional seconds")),
    };
    let time = UtcTime {
        hour: two_digits("time", &hms[0..2])?,
        minute: two_digits("time", &hms[2..4])?,
        second: two_digits("time", &hms[4..6])?,
        fraction,
    };
    let status = match fields[2] {
        "A" => FixStatus::Active,
        "V" => FixStatus::Void,
        other => return Err(field_err("status", other, "expected A or V")),
    };
    let latitude = parse_coordinate("latitude", fields[3], fields[4], 2)?;
    let longitude = parse_coordinate("longitude", fields[5], fields[6], 3)?;
    let speed_knots = parse_opt_decimal("speed", fields[7])?;
    let course_deg = parse_opt_decimal("course", fields[8])?;
    let d = fields[9];
    if d.len() != 6 {
        return Err(field_err("date", d, "expected ddmmyy"));
    }
    let date = Date {
        day: two_digits("date", &d[0..2])?,
        month: two_digits("date", &d[2..4])?,
        year: two_digits("date", &d[4..6])?,
    };
    let magvar = match (fields[10], fields[11]) {
        ("", "") => None,
        (v, dir) => {
            let degrees = Decimal::parse(v).ok_or_else(|| field_err("magvar", v, "not a decimal"))?;
            let direction = match Hemisphere::parse(dir) {
                Some(h @ (Hemisphere::E | Hemisphere::W)) => h,
                _ => return Err(field_err("magvar", dir, "direction must be E or W")),
            };
            Some(MagVar { degrees, direction })
        }
    };
    let mode = match fields.get(12) {
        None => None,
        Some(m) if m.len() == 1 => m.chars().next(),
        Some(m) => return Err(field_err("mode", m, "expected one letter")),
    };
    let sentence = GprmcSentence { time, status, latitude, longitude, speed_knots, course_deg, date, magvar, mode };
    sentence.validate()?;
    Ok(sentence)
}

/// Admissible NGM arrival window after a PPS rising edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingWindow {
    pub min_after_pps_ns: i64,
    pub max_after_pps_ns: i64,
}

impl Default for PairingWindow {
    fn default() -> Self {
        PairingWindow { min_after_pps_ns: 50_000_000, max_after_pps_ns: 900_000_000 }
    }
}

impl PairingWindow {
    pub fn validate(&self, pps_period_ns: i64) -> Result<(), NmeaError> {
        if !(0 < self.min_after_pps_ns
            && self.min_after_pps_ns < self.max_after_pps_ns
            && self.max_after_pps_ns < pps_period_ns)
        {
            return Err(NmeaError::Pairing(format!(
                "need 0 < min ({}) < max ({}) < PPS period ({pps_period_ns})",
                self.min_after_pps_ns, self.max_after_pps_ns
            )));
        }
        Ok(())
    }

    pub fn contains(&self, since_pps_ns: i64) -> bool {
        (self.min_after_pps_ns..=self.max_after_pps_ns).contains(&since_pps_ns)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NgmFlag {
    /// No PPS edge precedes the message within the window.
    OutsideWindow,
    /// The PPS already has a message; this later one is rejected.
    Duplicate,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pairing {
    /// `(pps index, ngm index)`.
    pub pairs: Vec<(usize, usize)>,
    pub unpaired_pps: Vec<usize>,
    pub rejected_ngm: Vec<(usize, NgmFlag)>,
}

/// Pairs each NGM arrival with the most recent PPS edge, if the arrival lies
/// inside that edge's window. Both inputs must be sorted.
pub fn pair_ngm_to_pps(pps: &[TrueTime], ngm: &[TrueTime], window: &PairingWindow) -> Result<Pairing, NmeaError> {
    if pps.windows(2).any(|w| w[0] > w[1]) || ngm.windows(2).any(|w| w[0] > w[1]) {
        return Err(NmeaError::Pairing("inputs must be sorted".into()));
    }
    let mut taken = vec![false; pps.len()];
    let mut out = Pairing::default();
    for (j, &arrival) in ngm.iter().enumerate() {
        let recent = pps.partition_point(|&p| p <= arrival);
        if recent == 0 {
            out.rejected_ngm.push((j, NgmFlag::OutsideWindow));
            continue;
        }
        let i = recent - 1;
        if !window.contains(arrival.since(pps[i])) {
            out.rejected_ngm.push((j, NgmFlag::OutsideWindow));
        } else if taken[i] {
            out.rejected_ngm.push((j, NgmFlag::Duplicate));
        } else {
            taken[i] = true;
            out.pairs.push((i, j));
        }
    }
    out.unpaired_pps = taken.iter().enumerate().filter(|(_, t)| !**t).map(|(i, _)| i).collect();
    Ok(out)
}

#[derive(Debug)]
pub struct LineCheck {
    pub line_no: usize,
    pub result: Result<GprmcSentence, NmeaError>,
}

/// Validates a sentence-per-line text; blank lines are skipped.
pub fn check_lines(text: &str) -> Vec<LineCheck> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LineCheck { line_no: i + 1, result: parse_gprmc(l.trim_end().as_bytes()) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED_BODY: &str = "GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W";

    fn worked() -> GprmcSentence {
        GprmcSentence {
            time: UtcTime { hour: 12, minute: 35, second: 19, fraction: None },
            status: FixStatus::Active,
            latitude: Some(Coordinate { degrees: 48, minutes: Decimal::new(7038, 3), hemisphere: Hemisphere::N }),
            longitude: Some(Coordinate { degrees: 11, minutes: Decimal::new(31000, 3), hemisphere: Hemisphere::E }),
            speed_knots: Some(Decimal::new(224, 1)),
            course_deg: Some(Decimal::new(844, 1)),
            date: Date { day: 23, month: 3, year: 94 },
            magvar: Some(MagVar { degrees: Decimal::new(31, 1), direction: Hemisphere::W }),
            mode: None,
        }
    }

    fn xor_oracle(s: &str) -> u8 {
        let mut x = 0u8;
        for c in s.chars() {
            x ^= c as u8;
        }
        x
    }

    #[test]
    fn checksum_examples() {
        assert_eq!(checksum(b"").unwrap(), "00");
        assert_eq!(checksum(b"A").unwrap(), "41");
        assert_eq!(format!("{:02X}", xor_oracle(WORKED_BODY)), "6A");
        assert_eq!(checksum(WORKED_BODY.as_bytes()).unwrap(), "6A");
        assert_eq!(checksum(b"GP*RMC"), Err(NmeaError::ForbiddenByte(b'*')));
        assert_eq!(checksum(b"$GP"), Err(NmeaError::ForbiddenByte(b'$')));
    }

    #[test]
    fn generates_worked_sentence() {
        let s = generate_gprmc(&worked()).unwrap();
        assert_eq!(s, format!("${WORKED_BODY}*6A\r\n"));
        assert_eq!(parse_gprmc(s.as_bytes()).unwrap(), worked());
    }

    #[test]
    fn terminator_optional_on_parse() {
        let s = format!("${WORKED_BODY}*6A");
        assert_eq!(parse_gprmc(s.as_bytes()).unwrap(), worked());
        let s = format!("${WORKED_BODY}*6a\n");
        assert_eq!(parse_gprmc(s.as_bytes()).unwrap(), worked());
    }

    #[test]
    fn checksum_mismatch_detected() {
        let s = format!("${WORKED_BODY}*6B\r\n");
        assert_eq!(
            parse_gprmc(s.as_bytes()),
            Err(NmeaError::ChecksumMismatch { expected: "6A".into(), found: "6B".into() })
        );
    }

    #[test]
    fn other_sentences_unsupported() {
        let body = "GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,";
        let s = format!("${body}*{}", checksum(body.as_bytes()).unwrap());
        assert_eq!(parse_gprmc(s.as_bytes()), Err(NmeaError::UnsupportedSentence("GPGGA".into())));
    }

    #[test]
    fn malformed_fields_are_reported() {
        let body = "GPRMC,12351,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W";
        let s = format!("${body}*{}", checksum(body.as_bytes()).unwrap());
        assert!(matches!(parse_gprmc(s.as_bytes()), Err(NmeaError::FieldError { field: "time", .. })));
        let body = "GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,320394,003.1,W";
        let s = format!("${body}*{}", checksum(body.as_bytes()).unwrap());
        assert!(matches!(parse_gprmc(s.as_bytes()), Err(NmeaError::FieldError { field: "date", .. })));
        assert!(matches!(parse_gprmc(b"GPRMC*00"), Err(NmeaError::Framing(_))));
        assert!(matches!(parse_gprmc(b"$GPRMC"), Err(NmeaError::Framing(_))));
    }

    #[test]
    fn midnight_zero_position_round_trips() {
        let zero = Coordinate { degrees: 0, minutes: Decimal::new(0, 3), hemisphere: Hemisphere::N };
        let fix = Fix {
            latitude: Some(zero),
            longitude: Some(Coordinate { hemisphere: Hemisphere::E, ..zero }),
            speed_knots: Some(Decimal::new(0, 1)),
            course_deg: Some(Decimal::new(0, 1)),
            magvar: None,
        };
        let s = GprmcSentence::for_second(1_609_459_200, &fix).unwrap();
        let text = generate_gprmc(&s).unwrap();
        assert_eq!(text, "$GPRMC,000000,A,0000.000,N,00000.000,E,000.0,000.0,010121,,*1E\r\n");
        let back = parse_gprmc(text.as_bytes()).unwrap();
        assert_eq!(back.time, UtcTime { hour: 0, minute: 0, second: 0, fraction: None });
        assert_eq!(back.latitude.unwrap().to_degrees_f64(), 0.0);
        assert_eq!(back, s);
    }

    #[test]
    fn consecutive_seconds_differ_by_one() {
        let a = GprmcSentence::for_second(1_609_545_599, &Fix::default()).unwrap();
        let b = GprmcSentence::for_second(1_609_545_600, &Fix::default()).unwrap();
        assert_eq!(b.epoch_seconds().unwrap() - a.epoch_seconds().unwrap(), 1);
        assert_eq!(a.time, UtcTime { hour: 23, minute: 59, second: 59, fraction: None });
        assert_eq!(b.time, UtcTime { hour: 0, minute: 0, second: 0, fraction: None });
        assert_eq!(b.date, Date { day: 2, month: 1, year: 21 });
    }

    #[test]
    fn out_of_range_fields_rejected_on_generate() {
        let mut s = worked();
        s.time.hour = 24;
        assert!(generate_gprmc(&s).is_err());
        let mut s = worked();
        s.latitude.as_mut().unwrap().degrees = 91;
        assert!(generate_gprmc(&s).is_err());
        let mut s = worked();
        s.course_deg = Some(Decimal::new(3600, 1));
        assert!(generate_gprmc(&s).is_err());
    }

    fn t(ms: i64) -> TrueTime {
        TrueTime::from_millis(ms)
    }

    #[test]
    fn pairs_half_second_messages() {
        let p =
            pair_ngm_to_pps(&[t(0), t(1000), t(2000)], &[t(500), t(1500), t(2500)], &PairingWindow::default()).unwrap();
        assert_eq!(p.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert!(p.unpaired_pps.is_empty() && p.rejected_ngm.is_empty());
    }

    #[test]
    fn late_message_is_unpaired() {
        let p = pair_ngm_to_pps(&[t(0), t(1000)], &[t(950)], &PairingWindow::default()).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.rejected_ngm, vec![(0, NgmFlag::OutsideWindow)]);
        assert_eq!(p.unpaired_pps, vec![0, 1]);
    }

    #[test]
    fn no_messages_leaves_all_pps_unpaired() {
        let p = pair_ngm_to_pps(&[t(0), t(1000)], &[], &PairingWindow::default()).unwrap();
        assert_eq!(p.unpaired_pps, vec![0, 1]);
    }

    #[test]
    fn duplicate_in_one_window_rejected() {
        let p = pair_ngm_to_pps(&[t(0)], &[t(400), t(600)], &PairingWindow::default()).unwrap();
        assert_eq!(p.pairs, vec![(0, 0)]);
        assert_eq!(p.rejected_ngm, vec![(1, NgmFlag::Duplicate)]);
    }

    #[test]
    fn unsorted_pairing_input_rejected() {
        assert!(pair_ngm_to_pps(&[t(1000), t(0)], &[], &PairingWindow::default()).is_err());
    }

    #[test]
    fn window_validation() {
        assert!(PairingWindow::default().validate(1_000_000_000).is_ok());
        assert!(PairingWindow::default().validate(500_000_000).is_err());
    }

    #[test]
    fn line_checker_reports_each_line() {
        let text = format!("${WORKED_BODY}*6A\r\n\n${WORKED_BODY}*00\r\n");
        let report = check_lines(&text);
        assert_eq!(report.len(), 2);
        assert!(report[0].result.is_ok());
        assert_eq!(report[1].line_no, 3);
        assert_eq!(report[1].result.as_ref().unwrap_err().code(), "E_NMEA_CHECKSUM");
    }
}
