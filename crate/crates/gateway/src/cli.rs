//! Headless entry points behind the `run` and `compile` subcommands. Both
//! write to caller-supplied streams and return the process exit code.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use hakf_core::cep::{detections_to_jsonl, Engine};
use hakf_core::definition::{compile, ComplexEventDefinition, ConceptScope};
use hakf_core::palette::Palette;
use hakf_core::sim::{validate_scenario, ScenarioError};
use hakf_core::tellability::ConceptMapping;

use crate::project::{default_palette, drive, prepare_scenario, ProjectError, RunSummary};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;

fn report(stderr: &mut dyn Write, lines: &[String]) {
    for line in lines {
        let _ = writeln!(stderr, "{line}");
    }
}

fn project_error_lines(e: &ProjectError) -> Vec<String> {
    match e {
        ProjectError::Scenario(ScenarioError::Invalid(v)) => v.clone(),
        other => vec![other.to_string()],
    }
}

/// Runs a scenario file through a fresh engine, writing detection JSONL to
/// `out` and the run summary to `stdout`.
pub fn run_headless(
    scenario_path: &Path,
    seed: Option<u64>,
    out: &Path,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let text = match fs::read_to_string(scenario_path) {
        Ok(t) => t,
        Err(e) => {
            report(stderr, &[format!("cannot read {}: {e}", scenario_path.display())]);
            return EXIT_IO;
        }
    };
    let scenario = match validate_scenario(&text) {
        Ok(s) => s,
        Err(ScenarioError::Invalid(v)) => {
            report(stderr, &v);
            return EXIT_INVALID;
        }
        Err(e) => {
            report(stderr, &[e.to_string()]);
            return EXIT_INVALID;
        }
    };
    let result = headless_detections(&scenario, seed);
    let (summary, jsonl) = match result {
        Ok(r) => r,
        Err(e) => {
            report(stderr, &project_error_lines(&e));
            return EXIT_INVALID;
        }
    };
    if let Err(e) = fs::write(out, jsonl) {
        report(stderr, &[format!("cannot write {}: {e}", out.display())]);
        return EXIT_IO;
    }
    let summary = serde_json::to_string_pretty(&summary).expect("summary is serializable");
    if writeln!(stdout, "{summary}").is_err() {
        return EXIT_IO;
    }
    EXIT_OK
}

/// The detection JSONL a headless run of `scenario` produces.
pub fn headless_detections(
    scenario: &hakf_core::sim::Scenario,
    seed: Option<u64>,
) -> Result<(RunSummary, String), ProjectError> {
    let mut engine = Engine::new();
    prepare_scenario(&mut engine, &default_palette(), scenario)?;
    let (summary, _) = drive(&mut engine, scenario, seed)?;
    Ok((summary, detections_to_jsonl(engine.detections())))
}

fn read(path: &Path, stderr: &mut dyn Write) -> Option<String> {
    match fs::read_to_string(path) {
        Ok(t) => Some(t),
        Err(e) => {
            report(stderr, &[format!("cannot read {}: {e}", path.display())]);
            None
        }
    }
}

/// Compiles a definition file to its canonical rule text. Concept matchers
/// need `palette` and `mapping` files.
pub fn compile_cli(
    definition_path: &Path,
    palette_path: Option<&Path>,
    mapping_path: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let Some(text) = read(definition_path, stderr) else {
        return EXIT_IO;
    };
    let def = match ComplexEventDefinition::from_json(&text) {
        Ok(d) => d,
        Err(e) => {
            report(stderr, &[e.to_string()]);
            return EXIT_INVALID;
        }
    };
    let palette = match palette_path {
        Some(p) => {
            let Some(text) = read(p, stderr) else {
                return EXIT_IO;
            };
            match Palette::from_json(&text) {
                Ok(p) => p,
                Err(e) => {
                    report(stderr, &[e.to_string()]);
                    return EXIT_INVALID;
                }
            }
        }
        None => default_palette(),
    };
    let mut mapping = ConceptMapping::new();
    if let Some(p) = mapping_path {
        let Some(text) = read(p, stderr) else {
            return EXIT_IO;
        };
        let entries: BTreeMap<String, String> = match hakf_core::json::from_str(&text) {
            Ok(m) => m,
            Err(e) => {
                report(stderr, &[e.to_string()]);
                return EXIT_INVALID;
            }
        };
        if let Err(e) = mapping.replace(entries, &palette) {
            report(stderr, &[e.to_string()]);
            return EXIT_INVALID;
        }
    }
    let scope = ConceptScope {
        mapping: &mapping,
        palette: &palette,
    };
    match compile(&def, Some(scope)) {
        Ok(fragment) => {
            if writeln!(stdout, "{}", fragment.text).is_err() {
                return EXIT_IO;
            }
            EXIT_OK
        }
        Err(hakf_core::definition::DefinitionError::Invalid(v)) => {
            report(stderr, &v.iter().map(ToString::to_string).collect::<Vec<_>>());
            EXIT_INVALID
        }
        Err(e) => {
            report(stderr, &[e.to_string()]);
            EXIT_INVALID
        }
    }
}
