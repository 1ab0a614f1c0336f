//! One PASS/FAIL line per acceptance criterion, with its runtime limit.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use chaoslab::checks::{self, Check};
use chaoslab_core::chaos::{ChaosConfig, TerminalFamily};

const SEED: u64 = 20_240_611;

fn chaos_config() -> ChaosConfig {
    ChaosConfig { terminal: TerminalFamily::Random { seed: SEED, scale: 1.0 }, ..ChaosConfig::standard() }
}

fn run_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_chaoslab")).args(args).env_remove("CHAOSLAB_NODE_BUDGET").output().expect("binary runs")
}

/// Two runs per config with identical arguments must agree byte for byte,
/// including every file written to `--out`.
fn determinism() -> Check {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cases: [(&str, &str, &[&str]); 4] = [
        ("chaos", "chaos-standard.json", &[]),
        ("rates", "rates.json", &["--seed", "99"]),
        ("solve", "solve-zero-generator.json", &[]),
        ("validate", "validate-ok.json", &[]),
    ];
    let mut fails = Vec::new();
    for (kind, file, extra) in cases {
        let cfg = configs.join(file);
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().expect("temp dir");
            let mut args = vec![kind, "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()];
            args.extend_from_slice(extra);
            let o = run_bin(&args);
            let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
                .expect("out dir")
                .map(|e| {
                    let e = e.expect("entry");
                    (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"))
                })
                .collect();
            files.sort();
            if files.is_empty() || o.status.code() != Some(0) {
                fails.push(format!("{file}: exit {:?}, {} files", o.status.code(), files.len()));
            }
            outputs.push((o.stdout, files));
        }
        if outputs[0] != outputs[1] {
            fails.push(format!("{file}: outputs differ"));
        }
    }
    let start = Instant::now();
    let o = run_bin(&["selftest"]);
    let took = start.elapsed();
    if o.status.code() != Some(0) {
        fails.push(format!("selftest exit {:?}", o.status.code()));
    }
    if took >= Duration::from_secs(60) {
        fails.push(format!("selftest took {took:.1?}"));
    }
    let passed = fails.is_empty();
    Check {
        name: "cli-determinism",
        passed,
        detail: if passed { format!("4 configs byte-identical, selftest {took:.1?}") } else { fails.join("; ") },
    }
}

type Criterion = (u32, Option<u64>, Box<dyn Fn() -> Check>);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        (1, Some(5), Box::new(|| checks::constants(2000))),
        (2, Some(5), Box::new(|| checks::stochastic_exponential(1000, SEED))),
        (3, Some(30), Box::new(|| checks::representation(500, SEED))),
        (4, None, Box::new(|| checks::gamma_lipschitz(1000, SEED))),
        (5, Some(60), Box::new(|| checks::apriori(100, SEED))),
        (6, None, Box::new(|| checks::contraction(60, SEED))),
        (7, None, Box::new(|| checks::closed_forms(30, SEED))),
        (8, None, Box::new(|| checks::conservation(&ChaosConfig::standard(), &[2, 3, 4]))),
        (9, Some(600), Box::new(|| checks::chaos_gaps(&chaos_config(), &[2, 4, 8, 12]))),
        (10, None, Box::new(|| checks::wasserstein(500, 600, 1000, 1000, SEED))),
        (11, Some(600), Box::new(|| checks::rates(&chaos_config(), &[16, 64, 256, 1024, 4096], 6.0, SEED))),
        (12, None, Box::new(|| checks::lambda(50, SEED))),
        (13, None, Box::new(determinism)),
    ];
    let mut failed = 0;
    for (id, limit, run) in criteria {
        let start = Instant::now();
        let mut c = run();
        let took = start.elapsed();
        if let Some(secs) = limit {
            if took > Duration::from_secs(secs) {
                c.passed = false;
                c.detail = format!("{} (over the {secs} s limit)", c.detail);
            }
        }
        failed += usize::from(!c.passed);
        println!("{} criterion {id:>2} {}: {} [{took:.2?}]", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
