//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 algorithm flag (for example insufficient gyro excitation). Every
//! failure prints one `error[E_...]: message` line on stderr.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::eval::{self, auto_range, compare_schemes, histogram, periods, scheme_timestamps, EvalError, GyroRecord};
use crate::nmea::check_lines;
use crate::scenario::{simulate, write_artifacts, Manifest, ScenarioConfig, ScenarioError};
use crate::sync::{estimate_offset, match_trigger_frames, resample_uniform, OffsetConfig, SyncError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_FLAG: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "gpsmimic", version, about = "MCU time-synchronization rig simulator and post-processing tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a scenario and write records, reports and a manifest.
    Run(RunArgs),
    /// Estimate the clock offset between a phone gyro CSV and a rig gyro CSV.
    Align(AlignArgs),
    /// Match trigger pulses to depth frames and replace frame timestamps.
    Retimestamp(RetimestampArgs),
    /// NMEA utilities.
    Nmea {
        #[command(subcommand)]
        command: NmeaCommand,
    },
    /// Period statistics per scheme over a record CSV.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One seed or a comma-separated list; a list runs each seed in its own
    /// subdirectory `seed-<n>`.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Output directory; `scenario.output_dir` when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `scenario.duration_s`.
    #[arg(long)]
    duration: Option<f64>,
    /// Comma-separated LiDAR schemes.
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<String>,
    /// Also write the event trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args, Debug)]
struct AlignArgs {
    /// Phone gyro CSV (`b`).
    #[arg(long)]
    phone: PathBuf,
    /// Rig gyro CSV (`a`).
    #[arg(long)]
    rig: PathBuf,
    #[arg(long, default_value_t = 2_500_000)]
    period_ns: i64,
    #[arg(long, default_value_t = 2_000_000_000)]
    max_lag_ns: i64,
    /// Report the integer-lag estimate without subsample refinement.
    #[arg(long)]
    integer_lag: bool,
    /// CSV output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetimestampArgs {
    #[arg(long)]
    pulses: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long, default_value_t = 30)]
    grid_hz: u32,
    #[arg(long, default_value_t = 5)]
    fps: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum NmeaCommand {
    /// Validate one sentence per line.
    Check { file: PathBuf },
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    /// Restrict to these schemes (comma-separated).
    #[arg(long, value_delimiter = ',')]
    schemes: Vec<String>,
    /// Write `hist_<scheme>.csv` files into this directory.
    #[arg(long)]
    hist_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000)]
    bin_ns: i64,
    /// Print the table as CSV instead of text.
    #[arg(long)]
    csv: bool,
}

/// A failure with its exit code and greppable code string.
#[derive(Debug)]
pub struct CliError {
    pub exit: i32,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    fn new(exit: i32, code: &'static str, message: impl Into<String>) -> Self {
        CliError { exit, code, message: message.into() }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        let exit = if e.is_config() { EXIT_CONFIG } else { EXIT_DATA };
        CliError::new(exit, e.code(), e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::new(EXIT_DATA, e.code(), e.to_string())
    }
}

impl From<SyncError> for CliError {
    fn from(e: SyncError) -> Self {
        let exit = match e {
            SyncError::InsufficientExcitation { .. } => EXIT_FLAG,
            _ => EXIT_DATA,
        };
        let message = match &e {
            SyncError::InsufficientExcitation { .. } => format!("InsufficientExcitation: {e}"),
            _ => e.to_string(),
        };
        CliError::new(exit, e.code(), message)
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::new(EXIT_DATA, "E_IO", format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| io_err(path, e))
}

/// Writes to `path`, or stdout when `None`.
fn with_output(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut file = File::create(p).map_err(|e| io_err(p, e))?;
            f(&mut file)?;
            file.flush().map_err(|e| io_err(p, e))
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p).map_err(|e| match e {
            ScenarioError::Io { .. } => CliError::new(EXIT_CONFIG, "E_CONFIG_IO", e.to_string()),
            e => e.into(),
        })?,
        None => ScenarioConfig::default(),
    };
    if let Some(d) = args.duration {
        cfg.scenario.duration_s = d;
    }
    if !args.schemes.is_empty() {
        cfg.scenario.schemes = args.schemes.clone();
    }
    if args.trace {
        cfg.scenario.trace = true;
    }
    let out_root = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.scenario.output_dir));
    if let Some(&s) = args.seed.first() {
        cfg.scenario.seed = s;
    }
    cfg.validate()?;

    let seeds = if args.seed.len() > 1 { args.seed.clone() } else { vec![cfg.scenario.seed] };
    let jobs: Vec<(u64, PathBuf, ScenarioConfig)> = seeds
        .iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.scenario.seed = seed;
            let dir = if seeds.len() > 1 { out_root.join(format!("seed-{seed}")) } else { out_root.clone() };
            (seed, dir, c)
        })
        .collect();

    let results: Vec<Result<(Manifest, String), ScenarioError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, dir, c)| {
                s.spawn(move || {
                    let out = simulate(c)?;
                    let manifest = write_artifacts(c, &out, dir)?;
                    let report = std::fs::read_to_string(dir.join("report.txt")).unwrap_or_default();
                    Ok((manifest, report))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    for ((seed, dir, _), r) in jobs.iter().zip(results) {
        let (manifest, report) = r?;
        println!("seed {seed} -> {}", dir.display());
        print!("{report}");
        println!("config_sha256 {}", manifest.config_sha256);
    }
    Ok(())
}

fn magnitudes(records: &[GyroRecord]) -> Vec<(i64, f64)> {
    let mut v: Vec<(i64, f64)> = records.iter().map(|r| (r.timestamp_ns, r.magnitude())).collect();
    v.sort_by_key(|p| p.0);
    v
}

fn cmd_align(args: AlignArgs) -> Result<(), CliError> {
    let phone = eval::read_gyro(open(&args.phone)?)?;
    let rig = eval::read_gyro(open(&args.rig)?)?;
    let a = resample_uniform(&magnitudes(&rig), args.period_ns)?;
    let b = resample_uniform(&magnitudes(&phone), args.period_ns)?;
    let cfg = OffsetConfig { max_lag_ns: args.max_lag_ns, subsample: !args.integer_lag, ..OffsetConfig::default() };
    let est = estimate_offset(&a, &b, &cfg)?;
    eprintln!(
        "offset_ns={} confidence={:.3} method={}{}",
        est.offset_ns,
        est.confidence,
        est.method.as_str(),
        if est.low_confidence { " flag=LowConfidence" } else { "" }
    );
    with_output(args.out.as_deref(), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let row = [
            est.offset_ns.to_string(),
            format!("{:.6}", est.confidence),
            est.method.as_str().to_string(),
            est.lag_samples.to_string(),
            est.low_confidence.to_string(),
        ];
        wtr.write_record(["offset_ns", "confidence", "method", "lag_samples", "low_confidence"])
            .and_then(|_| wtr.write_record(row))
            .and_then(|_| wtr.flush().map_err(Into::into))
            .map_err(|e| EvalError::from(e).into())
    })
}

fn cmd_retimestamp(args: RetimestampArgs) -> Result<(), CliError> {
    let pulses: Vec<(u64, i64)> =
        eval::read_records(open(&args.pulses)?)?.iter().map(|r| (r.seq, r.timestamp_ns)).collect();
    let frame_rows = eval::read_records(open(&args.frames)?)?;
    let frames: Vec<(u64, i64)> = frame_rows.iter().map(|r| (r.seq, r.timestamp_ns)).collect();
    let result = match_trigger_frames(&pulses, &frames, args.grid_hz, args.fps)?;
    for seq in &result.discarded {
        eprintln!("frame {seq} discarded (invalid device timestamp)");
    }
    eprintln!("{} frames matched", result.matches.len());
    with_output(args.out.as_deref(), |w| {
        let mut wtr = csv::Writer::from_writer(w);
        let mut go = || -> Result<(), csv::Error> {
            wtr.write_record(["frame_seq", "pulse_index", "mcu_timestamp_ns", "residual_ns"])?;
            for m in &result.matches {
                wtr.serialize((m.frame_seq, m.pulse_index, m.mcu_timestamp_ns, m.residual_ns))?;
            }
            wtr.flush()?;
            Ok(())
        };
        go().map_err(|e| EvalError::from(e).into())
    })
}

fn cmd_nmea_check(file: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(file).map_err(|e| io_err(file, e))?;
    let report = check_lines(&text);
    let mut first_bad = None;
    for line in &report {
        match &line.result {
            Ok(s) => println!("line {}: ok {:02}:{:02}:{:02}", line.line_no, s.time.hour, s.time.minute, s.time.second),
            Err(e) => {
                println!("line {}: error[{}]: {e}", line.line_no, e.code());
                first_bad.get_or_insert((line.line_no, e.code()));
            }
        }
    }
    println!("{} sentences, {} invalid", report.len(), report.iter().filter(|l| l.result.is_err()).count());
    match first_bad {
        Some((n, code)) => Err(CliError::new(EXIT_DATA, code, format!("invalid sentence at line {n}"))),
        None => Ok(()),
    }
}

fn cmd_stats(args: StatsArgs) -> Result<(), CliError> {
    let mut records = eval::read_records(open(&args.input)?)?;
    if !args.schemes.is_empty() {
        records.retain(|r| args.schemes.contains(&r.scheme));
    }
    let expected: Vec<&str> = args.schemes.iter().map(String::as_str).collect();
    let cmp = compare_schemes(&records, &expected);
    if cmp.rows.is_empty() {
        for w in &cmp.warnings {
            eprintln!("warning: {w}");
        }
        return Err(CliError::new(EXIT_DATA, "E_TOO_FEW", "no scheme has at least 2 timestamps"));
    }
    if let Some(dir) = &args.hist_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for row in &cmp.rows {
            let p = periods(&scheme_timestamps(&records, &row.scheme))?;
            let h = histogram(&p, args.bin_ns, auto_range(&p, args.bin_ns))?;
            let path = dir.join(format!("hist_{}.csv", row.scheme));
            h.write_csv(File::create(&path).map_err(|e| io_err(&path, e))?)?;
        }
    }
    if args.csv {
        cmp.write_csv(io::stdout())?;
    } else {
        print!("{}", cmp.to_text());
    }
    Ok(())
}

/// Runs the CLI and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    let msg = e.render().to_string();
                    let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
                    eprintln!("error[E_USAGE]: {first}");
                    let _ = e.print();
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Align(a) => cmd_align(a),
        Command::Retimestamp(a) => cmd_retimestamp(a),
        Command::Nmea { command: NmeaCommand::Check { file } } => cmd_nmea_check(&file),
        Command::Stats(a) => cmd_stats(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message);
            e.exit
        }
    }
}
