//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 estimation abort,
//! 3 statistical-suite failure, 4 I/O or format error.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};

use crate::detector::{raw_key, tally, Simulator};
use crate::error::Error;
use crate::extractor::{extract, BlockOrigin, RawBitBlock};
use crate::io::{self as fio, EstimateFile, EventFile, EventFormat, RunConfig};
use crate::optimizer::{flatness_report, lambda_grid, optimize_lambda};
use crate::protocol::{estimate, overlap_bound_from_calibration, ZPrimeGate};
use crate::source::Source;
use crate::stats::{reports_to_csv, run_battery, TestReport, DEFAULT_ALPHA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_ABORT: i32 = 2;
pub const EXIT_STATS: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::Domain(_) | Error::NotUnimodal { .. } => EXIT_USAGE,
            Error::Abort { .. } | Error::Calibration(_) | Error::EmptyXBasis | Error::UnreachableTarget { .. } => {
                EXIT_ABORT
            }
            Error::InsufficientBits { .. } => EXIT_STATS,
            Error::LengthMismatch { .. } | Error::Shape(_) | Error::Format(_) | Error::Io { .. } => EXIT_IO,
        };
        Self::new(code, e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "siqrng", version, about = "Source-independent QRNG simulator, estimator and extractor")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set source.lambda=11.6`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> CliResult<RunConfig> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate pulses and write an event file.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output path; `.sqeb` or `.bin` selects the binary form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Count an event file into a tally.
    Tally {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certified lengths and failure probability for a tally.
    Estimate {
        #[arg(long)]
        tally: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overlap bound from X' counts on a Z' eigenstate.
    Calibrate {
        #[arg(long)]
        d0: u64,
        #[arg(long)]
        d1: u64,
        /// Z' counts on detector 0, for the 30 dB gate.
        #[arg(long)]
        zprime_d0: u64,
        #[arg(long)]
        zprime_d1: u64,
    },
    /// Hash the raw Z bits down to the certified length.
    Extract {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        seed_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimal mean photon number and the rate curve.
    Optimize {
        #[command(flatten)]
        config: ConfigArgs,
        /// CSV of the rate curve.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the statistical battery on a bits file.
    Testsuite {
        #[arg(long)]
        bits: PathBuf,
        /// Bit count; defaults to the `.len` sidecar.
        #[arg(long)]
        len: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Failing tests tolerated before exiting with status 3.
        #[arg(long, default_value_t = 0)]
        max_failures: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, tally, estimate, extract, optimize and test in one go.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Extractor seed; overrides `paths.seed`.
        #[arg(long)]
        seed_file: Option<PathBuf>,
    },
    /// Convert an event file between text and binary form.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write an extractor seed file from an operator-chosen PRNG seed.
    GenSeed {
        #[arg(long)]
        bits: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("siqrng: {e}");
            e.code
        }
    }
}

pub fn run(cli: Cli) -> CliResult {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = config.load()?;
            let out = out
                .or_else(|| cfg.events_path.clone())
                .ok_or_else(|| CliError::new(EXIT_USAGE, "simulate needs --out or paths.events"))?;
            let file = simulate(&cfg)?;
            fio::write_events(&out, &file, EventFormat::from_path(&out))?;
            say(&mut stdout, format_args!("wrote {} events to {}", file.events.len(), out.display()))
        }
        Command::Tally { events, out } => {
            let t = tally(&fio::read_events(&events)?.events)?;
            emit(&mut stdout, out.as_deref(), &fio::format_tally(&t))
        }
        Command::Estimate { tally, config, out } => {
            let cfg = config.load()?;
            let t = fio::read_tally(&tally)?;
            let est = estimate_step(&cfg, &t)?;
            emit(&mut stdout, out.as_deref(), &fio::format_estimate(&est, cfg.measurement.prob_x))?;
            check_abort(&est)
        }
        Command::Calibrate {
            d0,
            d1,
            zprime_d0,
            zprime_d1,
        } => {
            let gate = ZPrimeGate {
                counts_d0: zprime_d0,
                counts_d1: zprime_d1,
            };
            let c = overlap_bound_from_calibration::<f64>(d0, d1, &gate)?;
            let text = format!(
                "zprime_contrast_db={}\nmax_overlap_sq={}\noverlap_c={}\ncoefficient={}\n",
                gate.contrast_db(),
                c.max_overlap_sq,
                c.overlap_c,
                c.coefficient
            );
            emit(&mut stdout, None, &text)
        }
        Command::Extract {
            events,
            estimate,
            seed_file,
            out,
        } => {
            let file = fio::read_events(&events)?;
            let est = fio::read_estimate(&estimate)?;
            let n = extract_step(&file, &est, &seed_file, &out)?;
            say(&mut stdout, format_args!("wrote {n} certified bits to {}", out.display()))
        }
        Command::Optimize { config, out } => {
            let cfg = config.load()?;
            let (summary, csv) = optimize_step(&cfg)?;
            if let Some(out) = out {
                fio::write_atomic_bytes(&out, csv.as_bytes())?;
            }
            emit(&mut stdout, None, &summary)
        }
        Command::Testsuite {
            bits,
            len,
            alpha,
            max_failures,
            out,
        } => {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(CliError::new(EXIT_USAGE, "alpha must be in (0, 1)"));
            }
            let bits = fio::read_bits(&bits, len)?;
            let reports = run_battery(&bits, alpha)?;
            emit(&mut stdout, out.as_deref(), &reports_to_csv(&reports))?;
            check_battery(&reports, max_failures)
        }
        Command::Pipeline {
            config,
            out_dir,
            seed_file,
        } => {
            let cfg = config.load()?;
            let seed_file = seed_file
                .or_else(|| cfg.seed_path.clone())
                .ok_or_else(|| CliError::new(EXIT_USAGE, "pipeline needs --seed-file or paths.seed"))?;
            pipeline(&cfg, &out_dir, &seed_file, &mut stdout)
        }
        Command::Convert { input, out } => {
            let file = fio::read_events(&input)?;
            let format = EventFormat::from_path(&out);
            if format == EventFormat::Binary && !file.metadata.is_empty() {
                eprintln!("siqrng: note: metadata lines are not kept in the binary form");
            }
            fio::write_events(&out, &file, format)?;
            say(&mut stdout, format_args!("wrote {} events to {}", file.events.len(), out.display()))
        }
        Command::GenSeed { bits, seed, out } => {
            let bytes = usize::try_from(bits.div_ceil(8))
                .map_err(|_| CliError::new(EXIT_USAGE, "seed length too large"))?;
            let mut buf = vec![0u8; bytes];
            StdRng::seed_from_u64(seed).fill_bytes(&mut buf);
            fio::write_atomic_bytes(&out, &buf)?;
            say(&mut stdout, format_args!("wrote {} seed bytes to {}", bytes, out.display()))
        }
    }
}

fn say(w: &mut dyn Write, args: fmt::Arguments<'_>) -> CliResult {
    writeln!(w, "{args}").map_err(|e| CliError::new(EXIT_IO, format!("stdout: {e}")))
}

/// Writes `text` to `path` if given, else to stdout.
fn emit(w: &mut dyn Write, path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => Ok(fio::write_atomic_bytes(p, text.as_bytes())?),
        None => w
            .write_all(text.as_bytes())
            .map_err(|e| CliError::new(EXIT_IO, format!("stdout: {e}"))),
    }
}

fn check_abort(est: &EstimateFile) -> CliResult {
    let r = est.estimate.rate.r_final;
    if r > 0.0 {
        Ok(())
    } else {
        Err(Error::Abort { r_final: r }.into())
    }
}

fn check_battery(reports: &[TestReport], max_failures: usize) -> CliResult {
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).map(|r| r.test_name).collect();
    if failed.len() > max_failures {
        Err(CliError::new(
            EXIT_STATS,
            format!("statistical tests failed: {}", failed.join(", ")),
        ))
    } else {
        Ok(())
    }
}

/// Runs the simulator for the configured pulse count and seed.
pub fn simulate(cfg: &RunConfig) -> crate::Result<EventFile> {
    let sim = Simulator::new(Source::new(cfg.source)?, cfg.detector, cfg.measurement)?;
    let events = sim.run(cfg.n_pulses, cfg.seed);
    Ok(EventFile {
        metadata: vec![
            ("seed".into(), cfg.seed.to_string()),
            ("n_pulses".into(), cfg.n_pulses.to_string()),
            ("lambda".into(), cfg.source.mean_photons.to_string()),
            ("prob_x".into(), cfg.measurement.prob_x.to_string()),
        ],
        events,
    })
}

pub fn estimate_step(cfg: &RunConfig, t: &crate::protocol::TallySummary) -> crate::Result<EstimateFile> {
    let estimate = estimate(t, cfg.theta_choice(), cfg.t_e, &cfg.imperfection()?)?;
    Ok(EstimateFile {
        n_z: t.detected_z,
        estimate,
    })
}

/// Extracts certified bits into `out` and returns how many were written.
pub fn extract_step(file: &EventFile, est: &EstimateFile, seed_file: &Path, out: &Path) -> crate::Result<usize> {
    let raw = raw_key(&file.events);
    if raw.len() as u64 != est.n_z {
        return Err(Error::LengthMismatch {
            expected: est.n_z as usize,
            actual: raw.len(),
        });
    }
    let rate = &est.estimate.rate;
    let m = rate.extractable_bits().ok_or(Error::Abort { r_final: rate.r_final })? as usize;
    let seed = fio::read_seed(seed_file, raw.len() + m - 1)?;
    let block = RawBitBlock {
        bits: raw,
        origin: BlockOrigin::Ingested,
    };
    let extraction = extract(&block, rate, &seed)?;
    fio::write_bits(out, &extraction.bits, est.estimate.security.epsilon_total_log2)?;
    Ok(extraction.bits.len())
}

/// λ* summary text and the rate-curve CSV.
pub fn optimize_step(cfg: &RunConfig) -> crate::Result<(String, String)> {
    let (lambda, rate) = optimize_lambda(&cfg.optimize, cfg.lambda_range)?;
    let (start, stop, step) = cfg.grid;
    let rows = flatness_report(&cfg.optimize, &lambda_grid(start, stop, step))?;
    let summary = format!("lambda_star={lambda}\nrate_star_bps={rate}\n");
    Ok((summary, fio::rate_table_csv(&rows)))
}

fn pipeline(cfg: &RunConfig, out_dir: &Path, seed_file: &Path, stdout: &mut dyn Write) -> CliResult {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::from(Error::io(out_dir, e)))?;
    let events_path = cfg.events_path.clone().unwrap_or_else(|| out_dir.join("events.sqeb"));
    let file = simulate(cfg)?;
    fio::write_events(&events_path, &file, EventFormat::from_path(&events_path))?;

    let t = tally(&file.events)?;
    fio::write_atomic_bytes(&out_dir.join("tally.txt"), fio::format_tally(&t).as_bytes())?;

    let est = estimate_step(cfg, &t)?;
    let est_text = fio::format_estimate(&est, cfg.measurement.prob_x);
    fio::write_atomic_bytes(&out_dir.join("estimate.txt"), est_text.as_bytes())?;
    check_abort(&est)?;

    let bits_path = cfg.output_path.clone().unwrap_or_else(|| out_dir.join("bits.bin"));
    let n_bits = extract_step(&file, &est, seed_file, &bits_path)?;

    let (summary, csv) = optimize_step(cfg)?;
    fio::write_atomic_bytes(&out_dir.join("rate.csv"), csv.as_bytes())?;
    fio::write_atomic_bytes(&out_dir.join("optimum.txt"), summary.as_bytes())?;

    let bits = fio::read_bits(&bits_path, Some(n_bits))?;
    let reports = run_battery(&bits, cfg.alpha)?;
    fio::write_atomic_bytes(&out_dir.join("stats.csv"), reports_to_csv(&reports).as_bytes())?;
    say(
        stdout,
        format_args!(
            "pulses={} e_bx={:.6} r_final={:.1} bits={} epsilon={} failed_tests={}",
            cfg.n_pulses,
            est.estimate.e_bx,
            est.estimate.rate.r_final,
            n_bits,
            fio::format_pow2_sci(est.estimate.security.epsilon_total_log2),
            reports.iter().filter(|r| !r.pass).count()
        ),
    )?;
    check_battery(&reports, cfg.max_failures)
}
