//! Scenario configuration, the full-rig simulation and artifact output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clocks::{pps_edges, ClockState, Edge, McuTimerConfig, PpsEdge};
use crate::eval::{
    self, auto_range, compare_schemes, histogram, periods, scheme_timestamps, Comparison, EvalError, GyroRecord,
    TimestampRecord,
};
use crate::mcu::{
    emit_triggers, Firmware, FirmwareConfig, FlagCounters, HostAction, IrqKind, LatencyModel, McuError, TriggerConfig,
};
use crate::nmea::{Fix, NmeaError, PairingWindow};
use crate::sensors::lidar::LidarCounters;
use crate::sensors::{
    imu_stream, phone_streams, DepthCamConfig, DepthCamera, Exposure, ImuConfig, Lidar, LidarConfig, LidarScheme,
    MotionConfig, MotionProfile, PhoneConfig, PhoneStreams, SensorError,
};
use crate::sim::{Engine, EventKind, RngStream, SimError, TrueTime, NANOS_PER_SEC};
use crate::sync::{
    estimate_offset, resample_uniform, trigger_phase_offset, OffsetConfig, OffsetEstimate, SyncError, TriggerPeriod,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Mcu(#[from] McuError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nmea(#[from] NmeaError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::Config(_) => "E_CONFIG",
            ScenarioError::Io { .. } => "E_IO",
            ScenarioError::Sensor(_) | ScenarioError::Mcu(_) => "E_CONFIG",
            ScenarioError::Sim(_) => "E_SIM",
            ScenarioError::Nmea(e) => e.code(),
            ScenarioError::Sync(e) => e.code(),
            ScenarioError::Eval(e) => e.code(),
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, ScenarioError::Config(_) | ScenarioError::Sensor(_) | ScenarioError::Mcu(_))
    }
}

fn cfg_err(section: &str, e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Config(format!("[{section}] {e}"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub duration_s: f64,
    pub seed: u64,
    pub schemes: Vec<String>,
    /// Any of `lidar`, `imu`, `depthcam`, `phone`.
    pub sensors: Vec<String>,
    pub output_dir: String,
    pub trace: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            duration_s: 60.0,
            seed: 1,
            schemes: LidarScheme::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            sensors: ["lidar", "imu", "depthcam", "phone"].iter().map(|s| s.to_string()).collect(),
            output_dir: "out".into(),
            trace: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McuSection {
    pub clock: ClockState,
    pub timer: McuTimerConfig,
    pub latency: LatencyModel,
    pub service_ns: i64,
    pub utc_epoch_s: i64,
    pub nmea_baud: u32,
    pub trigger: TriggerConfig,
    pub fix: Fix,
}

impl Default for McuSection {
    fn default() -> Self {
        let fw = FirmwareConfig::default();
        McuSection {
            clock: ClockState::with_rate(-44.3),
            timer: fw.timer,
            latency: fw.latency,
            service_ns: fw.service_ns,
            utc_epoch_s: fw.utc_epoch_s,
            nmea_baud: 9600,
            trigger: fw.trigger,
            fix: fw.fix,
        }
    }
}

impl McuSection {
    pub fn firmware(&self) -> FirmwareConfig {
        FirmwareConfig {
            timer: self.timer.clone(),
            clock: self.clock.clone(),
            latency: self.latency.clone(),
            service_ns: self.service_ns,
            trigger: self.trigger.clone(),
            utc_epoch_s: self.utc_epoch_s,
            fix: self.fix,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmeaSection {
    pub window: PairingWindow,
    /// Chance that an NGM is lost on the wire.
    pub drop_probability: f64,
}

impl Default for NmeaSection {
    fn default() -> Self {
        NmeaSection { window: PairingWindow::default(), drop_probability: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub histogram_bin_ns: i64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { histogram_bin_ns: 1_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub enabled: bool,
    /// Simulation time at which the phone offset is estimated and the
    /// trigger phase shifted.
    pub at_s: f64,
    pub resample_period_ns: i64,
    pub max_lag_ns: i64,
}

impl Default for AlignSection {
    fn default() -> Self {
        AlignSection { enabled: false, at_s: 20.0, resample_period_ns: 2_500_000, max_lag_ns: 2 * NANOS_PER_SEC }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: RunSection,
    pub mcu: McuSection,
    pub lidar: LidarConfig,
    pub imu: ImuConfig,
    pub depthcam: DepthCamConfig,
    pub phone: PhoneConfig,
    pub motion: MotionConfig,
    pub nmea: NmeaSection,
    pub eval: EvalSection,
    pub align: AlignSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let cfg: ScenarioConfig = toml::from_str(text)
            .map_err(|e| ScenarioError::Config(e.message().to_string() + &span_hint(text, e.span())))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical config, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.scenario.output_dir.clear();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn has_sensor(&self, name: &str) -> bool {
        self.scenario.sensors.iter().any(|s| s == name)
    }

    pub fn schemes(&self) -> Result<Vec<LidarScheme>, ScenarioError> {
        self.scenario
            .schemes
            .iter()
            .map(|s| s.parse::<LidarScheme>().map_err(|e| cfg_err("scenario", format!("schemes: {e}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let s = &self.scenario;
        if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
            return Err(cfg_err("scenario", format!("duration_s must be > 0, got {}", s.duration_s)));
        }
        if s.duration_s > 86_400.0 {
            return Err(cfg_err("scenario", "duration_s must be <= 86400"));
        }
        for name in &s.sensors {
            if !["lidar", "imu", "depthcam", "phone"].contains(&name.as_str()) {
                return Err(cfg_err("scenario", format!("unknown sensor `{name}`")));
            }
        }
        self.schemes()?;
        self.mcu.firmware().validate().map_err(|e| cfg_err("mcu", e))?;
        if self.mcu.nmea_baud == 0 {
            return Err(cfg_err("mcu", "nmea_baud must be > 0"));
        }
        self.lidar.validate().map_err(|e| cfg_err("lidar", e))?;
        self.imu.validate(&self.mcu.timer).map_err(|e| cfg_err("imu", e))?;
        self.depthcam.validate().map_err(|e| cfg_err("depthcam", e))?;
        if self.depthcam.grid_hz != self.mcu.trigger.trigger_hz {
            return Err(cfg_err("depthcam", "grid_hz must equal mcu.trigger.trigger_hz"));
        }
        self.phone.validate().map_err(|e| cfg_err("phone", e))?;
        self.motion.validate().map_err(|e| cfg_err("motion", e))?;
        let pps = self.mcu.timer.pps_period_ns().ok_or_else(|| cfg_err("mcu", "PPS period is not a whole ns"))?;
        self.nmea.window.validate(pps).map_err(|e| cfg_err("nmea", e))?;
        if !(0.0..=1.0).contains(&self.nmea.drop_probability) {
            return Err(cfg_err("nmea", "drop_probability must be in [0, 1]"));
        }
        if self.eval.histogram_bin_ns <= 0 {
            return Err(cfg_err("eval", "histogram_bin_ns must be > 0"));
        }
        let a = &self.align;
        if a.enabled {
            if !(self.has_sensor("imu") && self.has_sensor("phone") && self.has_sensor("depthcam")) {
                return Err(cfg_err("align", "needs the imu, phone and depthcam sensors"));
            }
            if !(a.at_s > 0.0 && a.at_s < s.duration_s) {
                return Err(cfg_err("align", "at_s must lie inside the run"));
            }
            if a.resample_period_ns <= 0 || a.max_lag_ns <= 0 {
                return Err(cfg_err("align", "resample_period_ns and max_lag_ns must be > 0"));
            }
        }
        Ok(())
    }
}

fn span_hint(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(r) => {
            let line = text[..r.start.min(text.len())].matches('\n').count() + 1;
            format!(" (line {line})")
        }
        None => String::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgmLogEntry {
    pub label_s: i64,
    pub emitted_at: TrueTime,
    pub arrival_at: Option<TrueTime>,
    pub sentence: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentOutcome {
    pub at: TrueTime,
    pub estimate: Result<OffsetEstimate, SyncError>,
    /// Phone frame used for the phase, mapped into the MCU clock.
    pub frame_mcu_ns: Option<i64>,
    pub phase_before_ns: i64,
    pub dt_ns: i64,
    pub phase_after_ns: i64,
    /// Recomputed with the new phase; zero when the shift took.
    pub second_dt_ns: i64,
    pub first_new_pulse: Option<u64>,
}

#[derive(Clone, Debug, Default)]
pub struct SimOutput {
    pub lidar: Vec<TimestampRecord>,
    pub imu: Vec<GyroRecord>,
    pub triggers: Vec<TimestampRecord>,
    pub exposures: Vec<Exposure>,
    pub depth_frames: Vec<TimestampRecord>,
    pub phone: PhoneStreams,
    pub phone_frames: Vec<TimestampRecord>,
    pub phone_gyro: Vec<GyroRecord>,
    pub pps: Vec<PpsEdge>,
    pub ngm: Vec<NgmLogEntry>,
    pub capture_delays_ns: Vec<i64>,
    pub alignment: Option<AlignmentOutcome>,
    pub firmware: FlagCounters,
    pub lidar_counters: LidarCounters,
    pub lidar_reloads: u64,
    pub lidar_missed_ngm: u64,
    pub camera_absorbed: u64,
    pub events: u64,
    pub trace: Option<Vec<u8>>,
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    PpsRise,
    PpsFall,
    Imu,
    LidarEmit(u64),
    NgmArrive(usize),
    Trigger { generation: u32, index: u64 },
    MainLoop,
    Align,
}

struct Rig<'a> {
    cfg: &'a ScenarioConfig,
    fw: Firmware,
    lidar: Option<Lidar>,
    schemes: Vec<LidarScheme>,
    camera: Option<DepthCamera>,
    motion: MotionProfile,
    imu_noise: RngStream,
    ngm_drop: RngStream,
    generation: u32,
    trigger_phase_ns: i64,
    last_pulse_index: u64,
    out: SimOutput,
    error: Option<ScenarioError>,
    t_end: TrueTime,
}

impl Rig<'_> {
    fn irq(&mut self, eng: &mut Engine<Ev>, kind: IrqKind, t: TrueTime) -> Result<Option<u64>, ScenarioError> {
        let o = self.fw.on_interrupt(kind, t)?;
        eng.schedule(self.fw.idle_at(t), EventKind::Custom(1), Ev::MainLoop)?;
        Ok(o.capture.map(|c| {
            self.out.capture_delays_ns.push(c.at.since(o.started));
            c.ticks
        }))
    }

    fn push_lidar(&mut self, stamps: Vec<crate::sensors::LidarStamp>) {
        for s in stamps {
            if self.schemes.contains(&s.scheme) {
                self.out.lidar.push(s.to_record("lidar"));
            }
        }
    }

    fn handle(&mut self, eng: &mut Engine<Ev>, ev: Ev) -> Result<(), ScenarioError> {
        let now = eng.now();
        match ev {
            Ev::PpsRise => {
                self.irq(eng, IrqKind::TimerOverflow, now)?;
                if let Some(l) = self.lidar.as_mut() {
                    let s = l.on_pps(now);
                    self.push_lidar(s);
                }
            }
            Ev::PpsFall => {
                self.irq(eng, IrqKind::TimerHalf, now)?;
            }
            Ev::Imu => {
                self.irq(eng, IrqKind::ImuReady, now)?;
            }
            Ev::LidarEmit(k) => {
                let l = self.lidar.as_mut().expect("lidar events imply a lidar");
                let s = l.on_emit(now)?;
                let next = l.emission_time(k + 1);
                self.push_lidar(s);
                if next <= self.t_end {
                    eng.schedule(next, EventKind::LidarPacketEmit, Ev::LidarEmit(k + 1))?;
                }
            }
            Ev::NgmArrive(i) => {
                let line = self.out.ngm[i].sentence.clone();
                if let Some(l) = self.lidar.as_mut() {
                    let s = l.on_ngm(now, &line)?;
                    self.push_lidar(s);
                }
            }
            Ev::Trigger { generation, index } => {
                if generation != self.generation {
                    return Ok(());
                }
                let ticks = self.irq(eng, IrqKind::TriggerCapture, now)?.expect("trigger capture");
                self.last_pulse_index = index;
                self.out.triggers.push(TimestampRecord {
                    sensor_id: "trigger".into(),
                    seq: index,
                    scheme: "mcu".into(),
                    timestamp_ns: self.fw.ticks_to_ns(ticks),
                    true_ns: Some(now.as_ns()),
                });
                if let Some(cam) = self.camera.as_mut() {
                    let (exposure, frame) = cam.on_pulse(now);
                    if let Some(e) = exposure {
                        self.out.exposures.push(e);
                    }
                    if let Some(f) = frame {
                        self.out.depth_frames.push(TimestampRecord {
                            sensor_id: "depthcam".into(),
                            seq: f.seq,
                            scheme: if f.valid { "device" } else { "device_invalid" }.into(),
                            timestamp_ns: f.device_ts_ns,
                            true_ns: Some(f.exposure_at.as_ns()),
                        });
                    }
                }
            }
            Ev::MainLoop => {
                let idle = self.fw.idle_at(now);
                if idle > now {
                    eng.schedule(idle, EventKind::Custom(1), Ev::MainLoop)?;
                    return Ok(());
                }
                for action in self.fw.main_loop_step()? {
                    match action {
                        HostAction::ImuRecord { seq, ticks, event_at } => {
                            let [x, y, z] = self.motion.omega(event_at.as_secs_f64());
                            let s = self.cfg.imu.gyro_noise_sigma;
                            let mut n = || if s > 0.0 { s * self.imu_noise.standard_normal() } else { 0.0 };
                            let (gx, gy, gz) = (x + n(), y + n(), z + n());
                            self.out.imu.push(GyroRecord {
                                sensor_id: "imu".into(),
                                seq,
                                scheme: "mcu".into(),
                                timestamp_ns: self.fw.ticks_to_ns(ticks),
                                true_ns: Some(event_at.as_ns()),
                                gx,
                                gy,
                                gz,
                            });
                        }
                        HostAction::Ngm { label_s, sentence } => {
                            let dropped = self.ngm_drop.bernoulli(self.cfg.nmea.drop_probability);
                            let bits = sentence.len() as i64 * 10;
                            let transit =
                                (bits as i128 * NANOS_PER_SEC as i128 / self.cfg.mcu.nmea_baud as i128) as i64;
                            let arrival = (!dropped).then(|| now.add_ns(transit));
                            let i = self.out.ngm.len();
                            self.out.ngm.push(NgmLogEntry { label_s, emitted_at: now, arrival_at: arrival, sentence });
                            if let Some(a) = arrival {
                                if a <= self.t_end {
                                    eng.schedule(a, EventKind::NetArrival, Ev::NgmArrive(i))?;
                                }
                            }
                        }
                    }
                }
            }
            Ev::Align => self.align(eng)?,
        }
        Ok(())
    }

    fn align(&mut self, eng: &mut Engine<Ev>) -> Result<(), ScenarioError> {
        let now = eng.now();
        let a = &self.cfg.align;
        let rig: Vec<(i64, f64)> = self.out.imu.iter().map(|g| (g.timestamp_ns, g.magnitude())).collect();
        let phone: Vec<(i64, f64)> = self
            .out
            .phone
            .gyro
            .iter()
            .filter(|g| g.arrival_at <= now)
            .map(|g| (g.local_ns, (g.gyro[0].powi(2) + g.gyro[1].powi(2) + g.gyro[2].powi(2)).sqrt()))
            .collect();
        let ocfg = OffsetConfig { max_lag_ns: a.max_lag_ns, ..OffsetConfig::default() };
        let estimate = resample_uniform(&rig, a.resample_period_ns)
            .and_then(|ra| Ok((ra, resample_uniform(&phone, a.resample_period_ns)?)))
            .and_then(|(ra, rb)| estimate_offset(&ra, &rb, &ocfg));

        let period = TriggerPeriod::from_hz(self.cfg.mcu.trigger.trigger_hz)?;
        let phase_before = self.trigger_phase_ns;
        let mut outcome = AlignmentOutcome {
            at: now,
            estimate: estimate.clone(),
            frame_mcu_ns: None,
            phase_before_ns: phase_before,
            dt_ns: 0,
            phase_after_ns: phase_before,
            second_dt_ns: 0,
            first_new_pulse: None,
        };
        let frame = self.out.phone.frames.iter().rfind(|f| f.arrival_at <= now);
        if let (Ok(est), Some(frame)) = (&estimate, frame) {
            let f_mcu = frame.local_ns - est.offset_ns;
            let dt = trigger_phase_offset(f_mcu, period, phase_before)?;
            let phase_after = period.wrap(phase_before + dt);
            outcome.frame_mcu_ns = Some(f_mcu);
            outcome.dt_ns = dt;
            outcome.phase_after_ns = phase_after;
            outcome.second_dt_ns = trigger_phase_offset(f_mcu, period, phase_after)?;
            if dt != 0 {
                self.generation += 1;
                self.trigger_phase_ns = phase_after;
                let tcfg = TriggerConfig { phase_offset_ns: phase_after, ..self.cfg.mcu.trigger.clone() };
                let pulses = emit_triggers(&tcfg, &self.cfg.mcu.timer, &self.cfg.mcu.clock, self.t_end)?;
                let mut index = self.last_pulse_index;
                for p in pulses.into_iter().filter(|p| p.at > now) {
                    index += 1;
                    outcome.first_new_pulse.get_or_insert(index);
                    eng.schedule(p.at, EventKind::TriggerPulse, Ev::Trigger { generation: self.generation, index })?;
                }
            }
        }
        self.out.alignment = Some(outcome);
        Ok(())
    }
}

const DRAIN_NS: i64 = 10_000_000;

/// Runs the whole rig for `scenario.duration_s`.
pub fn simulate(cfg: &ScenarioConfig) -> Result<SimOutput, ScenarioError> {
    cfg.validate()?;
    let seed = cfg.scenario.seed;
    let t_end = TrueTime::from_secs_f64(cfg.scenario.duration_s);
    let fw_cfg = cfg.mcu.firmware();
    let schemes = cfg.schemes()?;

    let lidar = if cfg.has_sensor("lidar") && !schemes.is_empty() {
        Some(Lidar::new(cfg.lidar.clone(), cfg.mcu.utc_epoch_s, cfg.nmea.window, seed)?)
    } else {
        None
    };
    let motion = MotionProfile::multi_sine(&cfg.motion, seed)?;
    let phone = if cfg.has_sensor("phone") {
        phone_streams(&cfg.phone, &motion, t_end, seed)?
    } else {
        PhoneStreams::default()
    };
    let mut rig = Rig {
        cfg,
        fw: Firmware::new(fw_cfg, seed)?,
        lidar,
        schemes,
        camera: if cfg.has_sensor("depthcam") { Some(DepthCamera::new(cfg.depthcam.clone())?) } else { None },
        motion,
        imu_noise: RngStream::new(seed, "imu.gyro"),
        ngm_drop: RngStream::new(seed, "nmea.drop"),
        generation: 0,
        trigger_phase_ns: cfg.mcu.trigger.phase_offset_ns,
        last_pulse_index: 0,
        out: SimOutput { phone, ..SimOutput::default() },
        error: None,
        t_end,
    };

    let mut eng: Engine<Ev> = Engine::new();
    if cfg.scenario.trace {
        eng = eng.with_trace();
    }
    rig.out.pps = pps_edges(&cfg.mcu.timer, &cfg.mcu.clock, t_end);
    for e in &rig.out.pps {
        let (kind, ev) = match e.edge {
            Edge::Rising => (EventKind::TimerOverflow, Ev::PpsRise),
            Edge::Falling => (EventKind::TimerCompare, Ev::PpsFall),
        };
        eng.schedule(e.at, kind, ev)?;
    }
    if cfg.has_sensor("imu") {
        for t in imu_stream(&cfg.imu, &cfg.mcu.timer, &cfg.mcu.clock, t_end)? {
            eng.schedule(t, EventKind::ImuDataReady, Ev::Imu)?;
        }
    }
    if rig.lidar.is_some() {
        eng.schedule(TrueTime::ZERO, EventKind::LidarPacketEmit, Ev::LidarEmit(0))?;
    }
    if cfg.has_sensor("depthcam") {
        for p in emit_triggers(&cfg.mcu.trigger, &cfg.mcu.timer, &cfg.mcu.clock, t_end)? {
            eng.schedule(p.at, EventKind::TriggerPulse, Ev::Trigger { generation: 0, index: p.index })?;
        }
    }
    if cfg.align.enabled {
        eng.schedule(TrueTime::from_secs_f64(cfg.align.at_s), EventKind::Custom(2), Ev::Align)?;
    }

    // Sources stop at t_end; the margin lets pending handlers and main-loop
    // passes finish.
    let events = eng.run_until(t_end.add_ns(DRAIN_NS), |eng, ev| {
        if rig.error.is_none() {
            if let Err(e) = rig.handle(eng, ev.payload) {
                rig.error = Some(e);
            }
        }
    })?;
    if let Some(e) = rig.error {
        return Err(e);
    }
    if let Some(mut l) = rig.lidar.take() {
        let s = l.finish();
        rig.push_lidar(s);
        rig.out.lidar_counters = l.counters();
        rig.out.lidar_reloads = l.clock().reloads();
        rig.out.lidar_missed_ngm = l.clock().missed_ngm();
    }
    let mut out = rig.out;
    out.lidar.sort_by(|a, b| (a.scheme.as_str(), a.seq).cmp(&(b.scheme.as_str(), b.seq)));
    out.firmware = rig.fw.counters();
    out.camera_absorbed = rig.camera.as_ref().map_or(0, |c| c.absorbed());
    out.events = events;
    out.trace = eng.trace().map(|t| t.to_vec());
    out.phone_frames = out
        .phone
        .frames
        .iter()
        .map(|f| TimestampRecord {
            sensor_id: "phone_cam".into(),
            seq: f.seq,
            scheme: "phone".into(),
            timestamp_ns: f.local_ns,
            true_ns: Some(f.at.as_ns()),
        })
        .collect();
    out.phone_gyro = out
        .phone
        .gyro
        .iter()
        .map(|g| GyroRecord {
            sensor_id: "phone_gyro".into(),
            seq: g.seq,
            scheme: "phone".into(),
            timestamp_ns: g.local_ns,
            true_ns: Some(g.at.as_ns()),
            gx: g.gyro[0],
            gy: g.gyro[1],
            gz: g.gyro[2],
        })
        .collect();
    Ok(out)
}

/// The scheme comparison over the LiDAR records.
pub fn lidar_report(cfg: &ScenarioConfig, out: &SimOutput) -> Comparison {
    let expected: Vec<&str> = cfg.scenario.schemes.iter().map(String::as_str).collect();
    compare_schemes(&out.lidar, &expected)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub duration_s: String,
    pub config_sha256: String,
    pub artifacts: BTreeMap<String, String>,
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<(), EvalError>) -> Result<Vec<u8>, ScenarioError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn report_text(cfg: &ScenarioConfig, out: &SimOutput, cmp: &Comparison) -> String {
    use std::fmt::Write as _;
    let mut s = String::new();
    let _ = writeln!(s, "duration_s {}  seed {}", cfg.scenario.duration_s, cfg.scenario.seed);
    let _ = writeln!(s, "lidar packets {}  spikes {}", out.lidar_counters.packets, out.lidar_counters.spikes);
    let _ = writeln!(s);
    s.push_str(&cmp.to_text());
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "pps rising {}  ngm emitted {}  lidar reloads {}  missed ngm {}",
        out.pps.iter().filter(|e| e.edge == Edge::Rising).count(),
        out.ngm.len(),
        out.lidar_reloads,
        out.lidar_missed_ngm
    );
    let _ = writeln!(
        s,
        "imu records {}  trigger pulses {}  depth frames {}  absorbed pulses {}",
        out.imu.len(),
        out.triggers.len(),
        out.depth_frames.len(),
        out.camera_absorbed
    );
    if !out.capture_delays_ns.is_empty() {
        let mean = out.capture_delays_ns.iter().sum::<i64>() as f64 / out.capture_delays_ns.len() as f64;
        let _ = writeln!(s, "capture delay mean_us {:.4} over {}", mean / 1e3, out.capture_delays_ns.len());
    }
    if let Some(a) = &out.alignment {
        match &a.estimate {
            Ok(e) => {
                let _ = writeln!(
                    s,
                    "alignment at_s {}  offset_ns {}  confidence {:.2}{}  dt_ns {}  phase_ns {} -> {}",
                    a.at.as_secs_f64(),
                    e.offset_ns,
                    e.confidence,
                    if e.low_confidence { " (low)" } else { "" },
                    a.dt_ns,
                    a.phase_before_ns,
                    a.phase_after_ns
                );
            }
            Err(e) => {
                let _ = writeln!(s, "alignment failed: {e}");
            }
        }
    }
    s
}

/// Writes every artifact into `dir` and returns the manifest (also
/// written as `manifest.json`).
pub fn write_artifacts(cfg: &ScenarioConfig, out: &SimOutput, dir: &Path) -> Result<Manifest, ScenarioError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ScenarioError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if !out.lidar.is_empty() {
        files.push(("lidar.csv".into(), csv_bytes(|b| eval::write_records(b, &out.lidar))?));
    }
    if cfg.has_sensor("imu") {
        files.push(("imu.csv".into(), csv_bytes(|b| eval::write_gyro(b, &out.imu))?));
    }
    if cfg.has_sensor("depthcam") {
        files.push(("triggers.csv".into(), csv_bytes(|b| eval::write_records(b, &out.triggers))?));
        files.push(("depth_frames.csv".into(), csv_bytes(|b| eval::write_records(b, &out.depth_frames))?));
    }
    if cfg.has_sensor("phone") {
        files.push(("phone_frames.csv".into(), csv_bytes(|b| eval::write_records(b, &out.phone_frames))?));
        files.push(("phone_gyro.csv".into(), csv_bytes(|b| eval::write_gyro(b, &out.phone_gyro))?));
    }
    let mut nmea = String::new();
    let mut ngm_csv = csv::Writer::from_writer(Vec::new());
    ngm_csv.write_record(["label_s", "emitted_ns", "arrival_ns", "sentence"]).map_err(EvalError::from)?;
    for n in &out.ngm {
        nmea.push_str(&n.sentence);
        ngm_csv
            .write_record([
                n.label_s.to_string(),
                n.emitted_at.as_ns().to_string(),
                n.arrival_at.map(|a| a.as_ns().to_string()).unwrap_or_default(),
                n.sentence.trim_end().to_string(),
            ])
            .map_err(EvalError::from)?;
    }
    files.push(("ngm.nmea".into(), nmea.into_bytes()));
    files.push(("ngm.csv".into(), ngm_csv.into_inner().map_err(|e| EvalError::Io(e.into_error()))?));

    let cmp = lidar_report(cfg, out);
    files.push(("report.txt".into(), report_text(cfg, out, &cmp).into_bytes()));
    files.push(("report.csv".into(), csv_bytes(|b| cmp.write_csv(b))?));
    for row in &cmp.rows {
        let p = periods(&scheme_timestamps(&out.lidar, &row.scheme))?;
        let h = histogram(&p, cfg.eval.histogram_bin_ns, auto_range(&p, cfg.eval.histogram_bin_ns))?;
        files.push((format!("hist_{}.csv", row.scheme), csv_bytes(|b| h.write_csv(b))?));
    }
    if let Some(a) = &out.alignment {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "offset_ns",
            "confidence",
            "method",
            "low_confidence",
            "dt_ns",
            "phase_before_ns",
            "phase_after_ns",
        ])
        .map_err(EvalError::from)?;
        if let Ok(e) = &a.estimate {
            w.write_record([
                e.offset_ns.to_string(),
                format!("{:.4}", e.confidence),
                e.method.as_str().to_string(),
                e.low_confidence.to_string(),
                a.dt_ns.to_string(),
                a.phase_before_ns.to_string(),
                a.phase_after_ns.to_string(),
            ])
            .map_err(EvalError::from)?;
        }
        files.push(("alignment.csv".into(), w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?));
    }
    if let Some(t) = &out.trace {
        files.push(("trace.tsv".into(), t.clone()));
    }

    let mut artifacts = BTreeMap::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(io(&path))?;
        artifacts.insert(name.clone(), hex::encode(Sha256::digest(bytes)));
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.scenario.seed,
        duration_s: cfg.scenario.duration_s.to_string(),
        config_sha256: cfg.hash(),
        artifacts,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, json).map_err(io(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(duration_s: f64) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        c.scenario.duration_s = duration_s;
        c
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!(ScenarioConfig::from_toml_str(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn zero_duration_rejected() {
        let e = short(0.0).validate().unwrap_err();
        assert!(e.to_string().contains("[scenario] duration_s"), "{e}");
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let e = ScenarioConfig::from_toml_str("[scenario]\nduration_s = 1.0\n[lidar]\nperiod = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("period") && msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn small_run_counts() {
        let mut c = short(3.0);
        c.mcu.clock = ClockState::ideal();
        let out = simulate(&c).unwrap();
        assert_eq!(out.imu.len(), 300);
        assert_eq!(out.ngm.len(), 3);
        assert_eq!(out.firmware.imu_sets, out.firmware.imu_clears);
        assert_eq!(out.firmware.nmea_sets, out.firmware.nmea_clears);
        let per_scheme = out.lidar.iter().filter(|r| r.scheme == "arrival").count();
        assert_eq!(per_scheme as i64, 3_000_000_000 / 1_328_000 + 1);
    }

    #[test]
    fn config_hash_ignores_output_dir() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        b.scenario.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.scenario.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }
}
