use std::path::Path;
use std::process::Command;

#[test]
fn python_smoke_script_passes() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let Ok(output) = Command::new("python3")
        .arg("python/smoke_test.py")
        .current_dir(&root)
        .output()
    else {
        eprintln!("python3 not available; skipping");
        return;
    };
    let stdout = String::from_utf8_lossy(&output.stdout);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(output.status.success(), "stdout:\n{stdout}\nstderr:\n{stderr}");
    assert!(stdout.contains("python smoke test: ok"));
}
