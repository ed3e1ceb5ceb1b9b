//! Acceptance suite for the gateway. Runs every criterion, prints one
//! PASS/FAIL line each, and exits non-zero if any failed.

mod common;

use std::fs;
use std::process::Command;

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const HAKF: &str = env!("CARGO_BIN_EXE_hakf");

fn run_binary(scenario: &str, seed: u64, out: &std::path::Path) -> Result<Vec<u8>, String> {
    let output = Command::new(HAKF)
        .args(["run", "--scenario"])
        .arg(scenario_path(scenario))
        .args(["--seed", &seed.to_string(), "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if output.status.code() != Some(0) {
        return Err(format!(
            "{scenario}: exit {:?}: {}",
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ));
    }
    fs::read(out).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = 0;
    for (scenario, seed) in [("ied", 7), ("nightclub", 42), ("nightclub", 1234)] {
        let a = run_binary(scenario, seed, &dir.path().join("a.jsonl"))?;
        let b = run_binary(scenario, seed, &dir.path().join("b.jsonl"))?;
        if a != b {
            return Err(format!("{scenario} seed {seed}: detection JSONL differs between runs"));
        }
        if a.is_empty() {
            return Err(format!("{scenario} seed {seed}: no detections to compare"));
        }
        lines += a.iter().filter(|&&b| b == b'\n').count();
    }
    Ok(format!(
        "3 scenario/seed pairs byte-identical across two runs ({lines} detection lines)"
    ))
}

fn crash_consistency() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let kills = crash_fuzz(dir.path(), 50)?;
    Ok(format!(
        "50 mutation sequences, {kills} killed mid-write, all recovered with parseable files and before/after state"
    ))
}

fn main() {
    let criteria: [Criterion; 2] = [
        ("end-to-end determinism", determinism),
        ("crash consistency", crash_consistency),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
