//! Spec-file golden cases under `tests/golden`: `<case>.args` holds the
//! command line (`{dir}` expands to the golden directory), `<case>.stdout`
//! the expected standard output and `<case>.code`, when present, the exit
//! code.

use std::path::PathBuf;
use std::process::Command;

pub fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden")
}

pub fn cases() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir())
        .expect("golden directory")
        .filter_map(|e| {
            let name = e.ok()?.file_name().into_string().ok()?;
            name.strip_suffix(".args").map(str::to_string)
        })
        .collect();
    names.sort();
    names
}

pub fn run_case(name: &str) -> Result<(), String> {
    let d = dir();
    let read = |ext: &str| std::fs::read_to_string(d.join(format!("{name}.{ext}")));
    let args = read("args").map_err(|e| format!("{name}: {e}"))?;
    let expected = read("stdout").map_err(|e| format!("{name}: {e}"))?;
    let code: i32 = read("code").map(|c| c.trim().parse().expect("exit code")).unwrap_or(0);
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let argv: Vec<String> = args
        .split_whitespace()
        .map(|a| a.replace("{dir}", d.to_str().unwrap()).replace("{tmp}", tmp.path().to_str().unwrap()))
        .collect();
    let out = Command::new(env!("CARGO_BIN_EXE_thick")).args(&argv).output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    if out.status.code() != Some(code) {
        return Err(format!(
            "{name}: exit {:?}, expected {code}; stderr:\n{}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    if stdout != expected {
        return Err(format!("{name}: stdout differs\n--- expected\n{expected}--- got\n{stdout}"));
    }
    Ok(())
}

pub fn run_all() -> Result<usize, String> {
    let names = cases();
    for n in &names {
        run_case(n)?;
    }
    Ok(names.len())
}
