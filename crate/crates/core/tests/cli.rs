use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn siqrng(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_siqrng"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn siqrng")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn help_and_bad_usage() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&siqrng(&["--help"], dir.path())), 0);
    assert_eq!(code(&siqrng(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&siqrng(&["tally"], dir.path())), 1);
}

#[test]
fn unknown_config_key_is_usage_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("run.cfg"), "# test\nsource.lambda = 14.4\nsource.colour = blue\n").unwrap();
    let out = siqrng(&["simulate", "--config", "run.cfg", "--out", "ev.txt"], dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("ev.txt").exists());
    let out = siqrng(&["simulate", "--set", "run.bogus=1", "--out", "ev.txt"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_is_io_error() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&siqrng(&["tally", "--events", "nope.txt"], dir.path())), 4);
    fs::write(dir.path().join("junk.txt"), "not events\n").unwrap();
    assert_eq!(code(&siqrng(&["tally", "--events", "junk.txt"], dir.path())), 4);
}

#[test]
fn high_error_tally_aborts() {
    let dir = TempDir::new().unwrap();
    let tally = "pulses_total=2000000\npulses_x=1000000\npulses_z=1000000\ndetected_x=100000\n\
                 detected_z=500000\nx_wrong_singles=45000\nx_doubles=0\nz_doubles_discarded=0\n";
    fs::write(dir.path().join("tally.txt"), tally).unwrap();
    let out = siqrng(&["estimate", "--tally", "tally.txt", "--out", "est.txt"], dir.path());
    assert_eq!(code(&out), 2);
    // the report is still written so the abort can be inspected
    let report = fs::read_to_string(dir.path().join("est.txt")).unwrap();
    assert!(report.contains("e_bx=0.45\n"), "{report}");
    assert!(report.lines().any(|l| l.starts_with("r_final=-")));
}

#[test]
fn calibrate_gate_and_coefficient() {
    let dir = TempDir::new().unwrap();
    let fail = siqrng(
        &["calibrate", "--d0", "50", "--d1", "50", "--zprime-d0", "1000", "--zprime-d1", "10"],
        dir.path(),
    );
    assert_eq!(code(&fail), 2);
    let ok = siqrng(
        &["calibrate", "--d0", "50", "--d1", "50", "--zprime-d0", "100000", "--zprime-d1", "10"],
        dir.path(),
    );
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).lines().any(|l| l == "coefficient=1"), "{}", stdout(&ok));
}

#[test]
fn convert_round_trip() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let sim = siqrng(&["simulate", "--set", "run.n_pulses=20000", "--set", "run.seed=9", "--out", "a.txt"], p);
    assert_eq!(code(&sim), 0, "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(code(&siqrng(&["simulate", "--set", "run.n_pulses=20000", "--set", "run.seed=9", "--out", "a.sqeb"], p)), 0);
    assert_eq!(code(&siqrng(&["convert", "--input", "a.sqeb", "--out", "b.txt"], p)), 0);
    assert_eq!(code(&siqrng(&["convert", "--input", "b.txt", "--out", "c.sqeb"], p)), 0);
    let bin_a = fs::read(p.join("a.sqeb")).unwrap();
    assert_eq!(&bin_a[..4], b"SQEB");
    assert_eq!(bin_a[4], 1);
    assert_eq!(u64::from_le_bytes(bin_a[5..13].try_into().unwrap()), 20_000);
    assert_eq!(bin_a, fs::read(p.join("c.sqeb")).unwrap());

    let text_a = fs::read_to_string(p.join("a.txt")).unwrap();
    let text_b = fs::read_to_string(p.join("b.txt")).unwrap();
    assert!(text_a.starts_with("#SIQRNG-EVENTS v1\n"));
    // the binary form carries no metadata lines
    let strip = |t: &str| t.lines().filter(|l| !l.starts_with("#key") && !l.contains('=')).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(&text_a), strip(&text_b));
    assert_eq!(code(&siqrng(&["convert", "--input", "b.txt", "--out", "d.txt"], p)), 0);
    assert_eq!(text_b, fs::read_to_string(p.join("d.txt")).unwrap());

    let ta = siqrng(&["tally", "--events", "a.txt"], p);
    let tb = siqrng(&["tally", "--events", "c.sqeb"], p);
    assert_eq!(code(&ta), 0);
    assert_eq!(stdout(&ta), stdout(&tb));
}

#[test]
fn gen_seed_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert_eq!(code(&siqrng(&["gen-seed", "--bits", "1001", "--seed", "3", "--out", "s1"], p)), 0);
    assert_eq!(code(&siqrng(&["gen-seed", "--bits", "1001", "--seed", "3", "--out", "s2"], p)), 0);
    let s1 = fs::read(p.join("s1")).unwrap();
    assert_eq!(s1.len(), 126);
    assert_eq!(s1, fs::read(p.join("s2")).unwrap());
}

#[test]
fn testsuite_flags_constant_bits() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    fs::write(p.join("zeros.bin"), vec![0u8; 125_000]).unwrap();
    let out = siqrng(&["testsuite", "--bits", "zeros.bin", "--len", "1000000", "--out", "stats.csv"], p);
    assert_eq!(code(&out), 3);
    let csv = fs::read_to_string(p.join("stats.csv")).unwrap();
    assert!(csv.contains("monobit,0.000000,false"), "{csv}");
    let short = siqrng(&["testsuite", "--bits", "zeros.bin", "--len", "999999"], p);
    assert_eq!(code(&short), 3);
}

#[test]
fn pipeline_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert_eq!(code(&siqrng(&["gen-seed", "--bits", "6000000", "--seed", "11", "--out", "seed.bin"], p)), 0);
    let args = |out: &'static str| {
        vec!["pipeline", "--set", "run.n_pulses=3000000", "--set", "run.seed=5", "--seed-file", "seed.bin", "--out-dir", out]
    };
    let first = siqrng(&args("a"), p);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(code(&siqrng(&args("b"), p)), 0);
    for name in ["events.sqeb", "tally.txt", "estimate.txt", "bits.bin", "bits.bin.len", "rate.csv", "optimum.txt", "stats.csv"] {
        let a = fs::read(p.join("a").join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert_eq!(a, fs::read(p.join("b").join(name)).unwrap(), "{name} differs");
    }
    let len = fs::read_to_string(p.join("a/bits.bin.len")).unwrap();
    let n: usize = len.lines().next().unwrap().parse().unwrap();
    assert!(n >= 1_000_000);
    assert_eq!(fs::read(p.join("a/bits.bin")).unwrap().len(), n.div_ceil(8));
    assert!(len.lines().nth(1).unwrap().contains('e'));

    // the standalone steps reproduce the pipeline's certified bits
    assert_eq!(code(&siqrng(&["extract", "--events", "a/events.sqeb", "--estimate", "a/estimate.txt", "--seed-file", "seed.bin", "--out", "x.bin"], p)), 0);
    assert_eq!(fs::read(p.join("x.bin")).unwrap(), fs::read(p.join("a/bits.bin")).unwrap());
    let ts = siqrng(&["testsuite", "--bits", "x.bin", "--max-failures", "1"], p);
    assert_eq!(code(&ts), 0);
}

#[test]
fn short_seed_is_format_error() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    assert_eq!(code(&siqrng(&["simulate", "--set", "run.n_pulses=200000", "--out", "ev.sqeb"], p)), 0);
    assert_eq!(code(&siqrng(&["tally", "--events", "ev.sqeb", "--out", "t.txt"], p)), 0);
    assert_eq!(code(&siqrng(&["estimate", "--tally", "t.txt", "--out", "e.txt"], p)), 0);
    assert_eq!(code(&siqrng(&["gen-seed", "--bits", "64", "--seed", "1", "--out", "s.bin"], p)), 0);
    let out = siqrng(&["extract", "--events", "ev.sqeb", "--estimate", "e.txt", "--seed-file", "s.bin", "--out", "o.bin"], p);
    assert_eq!(code(&out), 4);
    assert!(!p.join("o.bin").exists());
}
