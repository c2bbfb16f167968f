//! File formats and run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::bits::BitString;
use crate::detector::{decode, encode, Basis, DetectorParams, EventStream, Indices, MeasurementConfig, Outcome};
use crate::error::{Error, Result};
use crate::optimizer::{ErrorModel, RateModelParams, TeMode};
use crate::protocol::{Estimate, MeasurementImperfection, RateBreakdown, SecurityParams, TallySummary, ThetaChoice};
use crate::source::{SourceKind, SourceParams};
use crate::stats::DEFAULT_ALPHA;

pub const EVENTS_TEXT_MAGIC: &str = "#SIQRNG-EVENTS v1";
pub const EVENTS_TEXT_HEADER: &str = "index,basis,outcome";
pub const EVENTS_BINARY_MAGIC: &[u8; 4] = b"SQEB";
pub const EVENTS_BINARY_VERSION: u8 = 1;
const BINARY_HEADER_LEN: usize = 4 + 1 + 8;

// ---------------------------------------------------------------- writing

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_atomic_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, |w| w.write_all(bytes))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))
}

// ---------------------------------------------------------------- numbers

/// `%g`-style formatting with `sig` significant digits.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Scientific notation of `2^log2`, exact even when the value underflows
/// `f64`.
pub fn format_pow2_sci(log2: f64) -> String {
    if log2 == f64::NEG_INFINITY {
        return "0.000000e0".into();
    }
    let l10 = log2 * std::f64::consts::LOG10_2;
    let mut exp = l10.floor();
    let mut mantissa = 10f64.powf(l10 - exp);
    if format!("{mantissa:.6}").starts_with("10") {
        mantissa /= 10.0;
        exp += 1.0;
    }
    format!("{mantissa:.6}e{exp}")
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|x| !x.is_nan())
}

// ---------------------------------------------------------------- events

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventFormat {
    Text,
    Binary,
}

impl EventFormat {
    /// Binary for `.sqeb` and `.bin`, text otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("sqeb") | Some("bin") => EventFormat::Binary,
            _ => EventFormat::Text,
        }
    }
}

/// Event stream plus `#key=value` metadata (text form only).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventFile {
    pub metadata: Vec<(String, String)>,
    pub events: EventStream,
}

impl EventFile {
    pub fn new(events: EventStream) -> Self {
        Self {
            metadata: Vec::new(),
            events,
        }
    }
}

fn basis_char(b: Basis) -> u8 {
    match b {
        Basis::X => b'X',
        Basis::Z => b'Z',
    }
}

fn outcome_char(o: Outcome) -> u8 {
    match o {
        Outcome::None => b'N',
        Outcome::D0 => b'A',
        Outcome::D1 => b'B',
        Outcome::Double => b'D',
    }
}

pub fn write_events_text(w: &mut dyn Write, file: &EventFile) -> io::Result<()> {
    writeln!(w, "{EVENTS_TEXT_MAGIC}")?;
    for (k, v) in &file.metadata {
        if k.contains(['=', '\n']) || v.contains('\n') || k.is_empty() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("bad metadata key {k:?}")));
        }
        writeln!(w, "#{k}={v}")?;
    }
    writeln!(w, "{EVENTS_TEXT_HEADER}")?;
    let mut line = Vec::with_capacity(32);
    for ev in file.events.iter() {
        line.clear();
        write!(line, "{}", ev.index)?;
        line.extend_from_slice(&[b',', basis_char(ev.basis), b',', outcome_char(ev.outcome), b'\n']);
        w.write_all(&line)?;
    }
    Ok(())
}

pub fn parse_events_text(bytes: &[u8]) -> Result<EventFile> {
    let err = |line: usize, msg: &str| Error::Format(format!("event file line {line}: {msg}"));
    let mut lines = bytes.split_inclusive(|&b| b == b'\n').enumerate().map(|(i, l)| (i + 1, l));
    let mut next = || -> Result<Option<(usize, &[u8])>> {
        match lines.next() {
            None => Ok(None),
            Some((n, l)) => match l.strip_suffix(b"\n") {
                Some(body) => Ok(Some((n, body))),
                None => Err(err(n, "missing trailing newline")),
            },
        }
    };
    match next()? {
        Some((_, l)) if l == EVENTS_TEXT_MAGIC.as_bytes() => {}
        _ => return Err(err(1, "missing magic line")),
    }
    let mut metadata = Vec::new();
    loop {
        let Some((n, l)) = next()? else {
            return Err(err(0, "missing header line"));
        };
        if l == EVENTS_TEXT_HEADER.as_bytes() {
            break;
        }
        let body = l.strip_prefix(b"#").ok_or_else(|| err(n, "expected metadata or header"))?;
        let body = std::str::from_utf8(body).map_err(|_| err(n, "metadata not UTF-8"))?;
        let (k, v) = body.split_once('=').ok_or_else(|| err(n, "metadata without '='"))?;
        if k.is_empty() {
            return Err(err(n, "empty metadata key"));
        }
        metadata.push((k.to_string(), v.to_string()));
    }
    let mut indices = Vec::new();
    let mut codes = Vec::new();
    while let Some((n, l)) = next()? {
        let [.., b',', basis, b',', outcome] = l else {
            return Err(err(n, "malformed record"));
        };
        let digits = &l[..l.len() - 4];
        let canonical = !digits.is_empty()
            && digits.iter().all(u8::is_ascii_digit)
            && (digits.len() == 1 || digits[0] != b'0');
        if !canonical {
            return Err(err(n, "malformed index"));
        }
        let index: u64 = std::str::from_utf8(digits)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(n, "index out of range"))?;
        let basis = match basis {
            b'X' => Basis::X,
            b'Z' => Basis::Z,
            _ => return Err(err(n, "basis must be X or Z")),
        };
        let outcome = match outcome {
            b'N' => Outcome::None,
            b'A' => Outcome::D0,
            b'B' => Outcome::D1,
            b'D' => Outcome::Double,
            _ => return Err(err(n, "outcome must be N, A, B or D")),
        };
        indices.push(index);
        codes.push(encode(basis, outcome));
    }
    Ok(EventFile {
        metadata,
        events: EventStream::from_parts(indices, codes)?,
    })
}

/// Binary form. Pulse indices are implicit (`0..count`), so only streams
/// that start at 0 and have no gaps can be written.
pub fn write_events_binary(w: &mut dyn Write, events: &EventStream) -> io::Result<()> {
    if !matches!(events.indices(), Indices::Contiguous { start: 0 }) && !events.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "binary event files require contiguous indices starting at 0",
        ));
    }
    w.write_all(EVENTS_BINARY_MAGIC)?;
    w.write_all(&[EVENTS_BINARY_VERSION])?;
    w.write_all(&(events.len() as u64).to_le_bytes())?;
    w.write_all(events.codes())
}

pub fn parse_events_binary(bytes: &[u8]) -> Result<EventFile> {
    if bytes.len() < BINARY_HEADER_LEN || &bytes[..4] != EVENTS_BINARY_MAGIC {
        return Err(Error::Format("not a binary event file".into()));
    }
    if bytes[4] != EVENTS_BINARY_VERSION {
        return Err(Error::Format(format!("unsupported binary event version {}", bytes[4])));
    }
    let count = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let body = &bytes[BINARY_HEADER_LEN..];
    if body.len() as u64 != count {
        return Err(Error::Format(format!(
            "binary event file declares {count} records but holds {}",
            body.len()
        )));
    }
    if let Some(i) = body.iter().position(|&c| decode(c).is_none()) {
        return Err(Error::Format(format!("invalid event byte {:#04x} at record {i}", body[i])));
    }
    Ok(EventFile::new(EventStream::contiguous(0, body.to_vec())?))
}

/// Parses either form, chosen by the leading magic bytes.
pub fn parse_events(bytes: &[u8]) -> Result<EventFile> {
    if bytes.starts_with(EVENTS_BINARY_MAGIC) {
        parse_events_binary(bytes)
    } else {
        parse_events_text(bytes)
    }
}

pub fn read_events(path: &Path) -> Result<EventFile> {
    parse_events(&read_file(path)?)
}

pub fn write_events(path: &Path, file: &EventFile, format: EventFormat) -> Result<()> {
    match format {
        EventFormat::Text => write_atomic(path, |w| write_events_text(w, file)),
        EventFormat::Binary => write_atomic(path, |w| write_events_binary(w, &file.events)),
    }
}

pub fn events_to_bytes(file: &EventFile, format: EventFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        EventFormat::Text => write_events_text(&mut out, file),
        EventFormat::Binary => write_events_binary(&mut out, &file.events),
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out)
}

// ---------------------------------------------------------------- key=value files

fn parse_kv(text: &str, what: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("{what} line {}: expected key=value", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Format(format!("{what} line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(map)
}

struct Fields<'a> {
    map: &'a BTreeMap<String, String>,
    what: &'a str,
}

impl Fields<'_> {
    fn check_known(&self, known: &[&str]) -> Result<()> {
        match self.map.keys().find(|k| !known.contains(&k.as_str())) {
            Some(k) => Err(Error::Format(format!("{}: unknown key {k}", self.what))),
            None => Ok(()),
        }
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.map
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("{}: missing key {key}", self.what)))
    }

    fn u64(&self, key: &str) -> Result<u64> {
        parse_u64(self.raw(key)?).ok_or_else(|| Error::Format(format!("{}: {key} is not an integer", self.what)))
    }

    fn f64(&self, key: &str) -> Result<f64> {
        parse_f64(self.raw(key)?).ok_or_else(|| Error::Format(format!("{}: {key} is not a number", self.what)))
    }
}

const TALLY_KEYS: [&str; 9] = [
    "pulses_total",
    "pulses_x",
    "pulses_z",
    "detected_x",
    "detected_z",
    "x_wrong_singles",
    "x_doubles",
    "z_doubles_discarded",
    "e_bx",
];

pub fn format_tally(t: &TallySummary) -> String {
    let e = t.error_rate::<f64>().map(|e| e.to_string()).unwrap_or_else(|_| "nan".into());
    format!(
        "pulses_total={}\npulses_x={}\npulses_z={}\ndetected_x={}\ndetected_z={}\n\
         x_wrong_singles={}\nx_doubles={}\nz_doubles_discarded={}\ne_bx={e}\n",
        t.pulses_total,
        t.pulses_x,
        t.pulses_z,
        t.detected_x,
        t.detected_z,
        t.x_wrong_singles,
        t.x_doubles,
        t.z_doubles_discarded,
    )
}

/// Parses a tally. `e_bx` is optional; when present it must agree with the
/// counts.
pub fn parse_tally(text: &str) -> Result<TallySummary> {
    let map = parse_kv(text, "tally")?;
    let f = Fields { map: &map, what: "tally" };
    f.check_known(&TALLY_KEYS)?;
    let t = TallySummary {
        pulses_total: f.u64("pulses_total")?,
        pulses_x: f.u64("pulses_x")?,
        pulses_z: f.u64("pulses_z")?,
        detected_x: f.u64("detected_x")?,
        detected_z: f.u64("detected_z")?,
        x_wrong_singles: f.u64("x_wrong_singles")?,
        x_doubles: f.u64("x_doubles")?,
        z_doubles_discarded: f.u64("z_doubles_discarded")?,
    };
    t.validate().map_err(|e| Error::Format(format!("tally: {e}")))?;
    if map.get("e_bx").is_some_and(|s| s != "nan") {
        let stated = f.f64("e_bx")?;
        let actual = t.error_rate::<f64>()?;
        if (stated - actual).abs() > 1e-12 * actual.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::Format(format!("tally: e_bx={stated} disagrees with counts ({actual})")));
        }
    }
    Ok(t)
}

pub fn read_tally(path: &Path) -> Result<TallySummary> {
    parse_tally(&read_text(path)?)
}

const ESTIMATE_KEYS: [&str; 18] = [
    "n_z",
    "e_bx",
    "e_bx_bound",
    "q_x",
    "theta",
    "t_e",
    "epsilon_theta_log2",
    "epsilon_theta",
    "epsilon_total_log2",
    "epsilon_total",
    "r0",
    "r1",
    "r_final",
    "rescale_factor",
    "entropy_cost",
    "coefficient",
    "extractable_bits",
    "basis_ratio_flag",
];

/// Estimate plus the Z-basis count it was computed for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateFile {
    pub n_z: u64,
    pub estimate: Estimate<f64>,
}

/// Key-value estimate report. Values use shortest round-trip notation so
/// the file parses back exactly.
pub fn format_estimate(file: &EstimateFile, prob_x: f64) -> String {
    let e = &file.estimate;
    let s = &e.security;
    let r = &e.rate;
    let bits = r.extractable_bits().unwrap_or(0);
    format!(
        "n_z={}\ne_bx={}\ne_bx_bound={}\nq_x={}\ntheta={}\nt_e={}\nepsilon_theta_log2={}\nepsilon_theta={}\n\
         epsilon_total_log2={}\nepsilon_total={}\nr0={}\nr1={}\nr_final={}\nrescale_factor={}\n\
         entropy_cost={}\ncoefficient={}\nextractable_bits={bits}\nbasis_ratio_flag={}\n",
        file.n_z,
        e.e_bx,
        e.e_bx_bound,
        e.q_x,
        s.theta,
        s.t_e,
        s.epsilon_theta_log2,
        format_pow2_sci(s.epsilon_theta_log2),
        s.epsilon_total_log2,
        format_pow2_sci(s.epsilon_total_log2),
        r.r0,
        r.r1,
        r.r_final,
        r.rescale_factor,
        r.entropy_cost,
        r.coefficient,
        e.basis_ratio_flag(prob_x),
    )
}

pub fn parse_estimate(text: &str) -> Result<EstimateFile> {
    let map = parse_kv(text, "estimate")?;
    let f = Fields {
        map: &map,
        what: "estimate",
    };
    f.check_known(&ESTIMATE_KEYS)?;
    let t_e = u32::try_from(f.u64("t_e")?).map_err(|_| Error::Format("estimate: t_e out of range".into()))?;
    let security = SecurityParams::new(f.f64("theta")?, t_e, f.f64("epsilon_theta_log2")?)
        .map_err(|e| Error::Format(format!("estimate: {e}")))?;
    let estimate = Estimate {
        e_bx: f.f64("e_bx")?,
        e_bx_bound: f.f64("e_bx_bound")?,
        q_x: f.f64("q_x")?,
        security,
        rate: RateBreakdown {
            r0: f.f64("r0")?,
            r1: f.f64("r1")?,
            r_final: f.f64("r_final")?,
            rescale_factor: f.f64("rescale_factor")?,
            entropy_cost: f.f64("entropy_cost")?,
            coefficient: f.f64("coefficient")?,
        },
    };
    Ok(EstimateFile {
        n_z: f.u64("n_z")?,
        estimate,
    })
}

pub fn read_estimate(path: &Path) -> Result<EstimateFile> {
    parse_estimate(&read_text(path)?)
}

// ---------------------------------------------------------------- certified bits

/// Path of the `.len` sidecar for a bits file.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".len");
    PathBuf::from(s)
}

/// Writes packed bits plus the sidecar holding the bit count and the
/// security ε.
pub fn write_bits(path: &Path, bits: &BitString, epsilon_log2: f64) -> Result<()> {
    write_atomic_bytes(path, &bits.to_bytes_msb())?;
    let side = format!("{}\n{}\n", bits.len(), format_pow2_sci(epsilon_log2));
    write_atomic_bytes(&sidecar_path(path), side.as_bytes())
}

/// Reads a bits file. The length comes from `len` if given, else from the
/// sidecar, else from the file size.
pub fn read_bits(path: &Path, len: Option<usize>) -> Result<BitString> {
    let bytes = read_file(path)?;
    let len = match len {
        Some(n) => n,
        None => {
            let side = sidecar_path(path);
            if side.exists() {
                let text = read_text(&side)?;
                text.lines()
                    .next()
                    .and_then(|l| l.trim().parse().ok())
                    .ok_or_else(|| Error::Format(format!("{}: bad bit count", side.display())))?
            } else {
                bytes.len() * 8
            }
        }
    };
    BitString::from_bytes_msb(&bytes, len).ok_or_else(|| {
        Error::Format(format!(
            "{}: {} bytes cannot hold {len} bits",
            path.display(),
            bytes.len()
        ))
    })
}

/// Reads an extractor seed of at least `needed` bits; shorter files are an
/// error.
pub fn read_seed(path: &Path, needed: usize) -> Result<BitString> {
    let bytes = read_file(path)?;
    let available = bytes.len() * 8;
    if available < needed {
        return Err(Error::Format(format!(
            "seed file {} holds {available} bits, extraction needs {needed}",
            path.display()
        )));
    }
    Ok(BitString::from_bytes_msb(&bytes, available).expect("length checked"))
}

pub fn rate_table_csv(rows: &[(f64, f64)]) -> String {
    let mut out = String::from("lambda,rate_bps\n");
    for (l, r) in rows {
        out.push_str(&format!("{},{}\n", format_sig(*l, 6), format_sig(*r, 6)));
    }
    out
}

// ---------------------------------------------------------------- run config

const CONFIG_KEYS: &[&str] = &[
    "run.n_pulses",
    "run.seed",
    "source.kind",
    "source.lambda",
    "source.pulse_rate",
    "source.hwp_deg",
    "source.qwp_deg",
    "source.fluctuation",
    "detector.eta0",
    "detector.eta1",
    "detector.dark_rate",
    "detector.dead_time",
    "detector.gate_width",
    "measurement.prob_x",
    "measurement.phase_z_c",
    "measurement.phase_z_a",
    "measurement.phase_x_c",
    "measurement.phase_x_a",
    "measurement.basis_seed",
    "security.theta",
    "security.target_log2",
    "security.t_e",
    "calibration.coefficient",
    "calibration.overlap_c",
    "optimize.eta",
    "optimize.error_model",
    "optimize.e_bx",
    "optimize.e_d",
    "optimize.te_mode",
    "optimize.run_duration",
    "optimize.lambda_min",
    "optimize.lambda_max",
    "optimize.grid_start",
    "optimize.grid_stop",
    "optimize.grid_step",
    "stats.alpha",
    "stats.max_failures",
    "paths.events",
    "paths.seed",
    "paths.output",
];

pub fn config_keys() -> &'static [&'static str] {
    CONFIG_KEYS
}

/// How the measurement imperfection is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverlapSpec {
    Coefficient(f64),
    OverlapC(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub n_pulses: u64,
    pub seed: u64,
    pub source: SourceParams,
    pub detector: DetectorParams,
    pub measurement: MeasurementConfig,
    pub theta: f64,
    /// When set, θ is solved so that `ε_θ <= 2^target_log2`.
    pub target_log2: Option<f64>,
    pub t_e: u32,
    pub overlap: OverlapSpec,
    pub optimize: RateModelParams<f64>,
    pub lambda_range: (f64, f64),
    pub grid: (f64, f64, f64),
    pub alpha: f64,
    pub max_failures: usize,
    pub events_path: Option<PathBuf>,
    pub seed_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_map(&BTreeMap::new()).expect("defaults are valid")
    }
}

impl RunConfig {
    pub fn theta_choice(&self) -> ThetaChoice<f64> {
        match self.target_log2 {
            Some(target_log2) => ThetaChoice::Solve { target_log2 },
            None => ThetaChoice::Fixed(self.theta),
        }
    }

    pub fn imperfection(&self) -> Result<MeasurementImperfection<f64>> {
        let (e0, e1) = (self.detector.eta0, self.detector.eta1);
        match self.overlap {
            OverlapSpec::Coefficient(c) => MeasurementImperfection::from_coefficient(c, e0, e1),
            OverlapSpec::OverlapC(c) => MeasurementImperfection::new(c, e0, e1),
        }
    }

    /// Parses `key = value` lines and applies `overrides` (same syntax) on
    /// top.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut map = parse_kv(text, "config").map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_map(&map)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        Self::parse(&text, overrides)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = |e: Error| Error::Config(e.to_string().trim_start_matches("format: ").to_string());
        let f = Fields { map, what: "config" };
        f.check_known(CONFIG_KEYS).map_err(cfg)?;
        let has = |k: &str| map.contains_key(k);
        let num = |k: &str, d: f64| if has(k) { f.f64(k).map_err(cfg) } else { Ok(d) };
        let int = |k: &str, d: u64| if has(k) { f.u64(k).map_err(cfg) } else { Ok(d) };
        let word = |k: &str, d: &'static str| map.get(k).map(String::as_str).unwrap_or(d);
        let path = |k: &str| map.get(k).map(PathBuf::from);

        let kind = match word("source.kind", "laser") {
            "laser" => SourceKind::Laser,
            "sunlight" => SourceKind::Sunlight,
            other => return Err(Error::Config(format!("source.kind must be laser or sunlight, got {other}"))),
        };
        let base = match kind {
            SourceKind::Laser => SourceParams::laser(),
            SourceKind::Sunlight => SourceParams::sunlight(),
        };
        let source = SourceParams {
            mean_photons: num("source.lambda", base.mean_photons)?,
            pulse_rate: num("source.pulse_rate", base.pulse_rate)?,
            hwp_deg: num("source.hwp_deg", base.hwp_deg)?,
            qwp_deg: num("source.qwp_deg", base.qwp_deg)?,
            intensity_fluctuation: num("source.fluctuation", base.intensity_fluctuation)?,
            kind,
        };
        source.validate()?;

        let d = DetectorParams::default();
        let detector = DetectorParams {
            eta0: num("detector.eta0", d.eta0)?,
            eta1: num("detector.eta1", d.eta1)?,
            dark_rate: num("detector.dark_rate", d.dark_rate)?,
            dead_time: num("detector.dead_time", d.dead_time)?,
            gate_width: num("detector.gate_width", d.gate_width)?,
        };
        detector.validate().map_err(cfg)?;

        let m = MeasurementConfig::default();
        let measurement = MeasurementConfig {
            prob_x: num("measurement.prob_x", m.prob_x)?,
            phase_z: (
                num("measurement.phase_z_c", m.phase_z.0)?,
                num("measurement.phase_z_a", m.phase_z.1)?,
            ),
            phase_x: (
                num("measurement.phase_x_c", m.phase_x.0)?,
                num("measurement.phase_x_a", m.phase_x.1)?,
            ),
            basis_seed: int("measurement.basis_seed", m.basis_seed)?,
        };
        measurement.validate().map_err(cfg)?;

        let theta = num("security.theta", 0.001)?;
        if !(0.0..1.0).contains(&theta) {
            return Err(Error::Config(format!("security.theta must be in [0, 1), got {theta}")));
        }
        let target_log2 = if has("security.target_log2") {
            let t = f.f64("security.target_log2").map_err(cfg)?;
            if t >= 0.0 {
                return Err(Error::Config("security.target_log2 must be negative".into()));
            }
            Some(t)
        } else {
            None
        };
        let t_e = u32::try_from(int("security.t_e", 100)?)
            .map_err(|_| Error::Config("security.t_e out of range".into()))?;

        let overlap = match (has("calibration.coefficient"), has("calibration.overlap_c")) {
            (true, true) => {
                return Err(Error::Config(
                    "set calibration.coefficient or calibration.overlap_c, not both".into(),
                ))
            }
            (_, true) => OverlapSpec::OverlapC(f.f64("calibration.overlap_c").map_err(cfg)?),
            _ => OverlapSpec::Coefficient(num("calibration.coefficient", 0.952)?),
        };

        let error_model = match word("optimize.error_model", "constant") {
            "constant" => ErrorModel::Constant(num("optimize.e_bx", 0.0033)?),
            "double_click" => ErrorModel::DoubleClick {
                e_d: num("optimize.e_d", 0.0033)?,
            },
            other => {
                return Err(Error::Config(format!(
                    "optimize.error_model must be constant or double_click, got {other}"
                )))
            }
        };
        let te_mode = match word("optimize.te_mode", "amortized") {
            "amortized" => TeMode::Amortized {
                run_duration: num("optimize.run_duration", 1800.0)?,
            },
            "literal" => TeMode::Literal,
            other => {
                return Err(Error::Config(format!(
                    "optimize.te_mode must be amortized or literal, got {other}"
                )))
            }
        };
        let coefficient = match overlap {
            OverlapSpec::Coefficient(c) => c,
            OverlapSpec::OverlapC(c) => crate::protocol::overlap_coefficient(c),
        };
        let optimize = RateModelParams {
            rep_rate: source.pulse_rate,
            coefficient,
            theta,
            t_e,
            eta: num("optimize.eta", 0.1)?,
            error_model,
            te_mode,
        };

        let cfg_out = Self {
            n_pulses: int("run.n_pulses", 10_000_000)?,
            seed: int("run.seed", 1)?,
            source,
            detector,
            measurement,
            theta,
            target_log2,
            t_e,
            overlap,
            optimize,
            lambda_range: (num("optimize.lambda_min", 0.5)?, num("optimize.lambda_max", 60.0)?),
            grid: (
                num("optimize.grid_start", 1.0)?,
                num("optimize.grid_stop", 40.0)?,
                num("optimize.grid_step", 0.5)?,
            ),
            alpha: num("stats.alpha", DEFAULT_ALPHA)?,
            max_failures: int("stats.max_failures", 0)? as usize,
            events_path: path("paths.events"),
            seed_path: path("paths.seed"),
            output_path: path("paths.output"),
        };
        cfg_out.imperfection().map_err(cfg)?;
        if !(cfg_out.alpha > 0.0 && cfg_out.alpha < 1.0) {
            return Err(Error::Config("stats.alpha must be in (0, 1)".into()));
        }
        Ok(cfg_out)
    }
}
