//! Runs every acceptance criterion and prints one pass/fail line each.
//!
//! Criterion 5 carries one known failing sub-check: the printed Lipschitz constant of G
//! is exceeded on TS1 (see the decisions ledger). The target fails on anything else.

use std::process::{Command, ExitCode};

use lincert::verify::{run_criterion, CRITERIA};

/// Sub-check of criterion 5 that the printed constant does not bound.
const KNOWN_FAILURE: (u8, &str) = (5, "empirical Lipschitz of G");

fn binary_rejects(file: &str, needle: &str) -> Result<(), String> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/").to_string() + file;
    let out = Command::new(env!("CARGO_BIN_EXE_lincert"))
        .args(["run", "--scenario", &path])
        .output()
        .map_err(|e| e.to_string())?;
    let stderr = String::from_utf8_lossy(&out.stderr);
    match out.status.code() {
        Some(3) if stderr.contains(needle) => Ok(()),
        code => Err(format!("{file}: exit {code:?}, stderr {stderr}")),
    }
}

fn main() -> ExitCode {
    let mut unexpected = Vec::new();
    for &(id, _, _) in CRITERIA.iter() {
        let outcome = match run_criterion(id) {
            Ok(o) => o,
            Err(e) => {
                println!("criterion {id:>2} FAIL error: {e}");
                unexpected.push(format!("criterion {id}: {e}"));
                continue;
            }
        };
        println!("{}", outcome.line());
        if let Some(e) = &outcome.error {
            unexpected.push(format!("criterion {id}: {e}"));
        }
        for c in outcome.checks.iter().filter(|c| !c.pass) {
            if (id, c.name.as_str()) != KNOWN_FAILURE {
                unexpected.push(format!("criterion {id}: {} = {} against {}", c.name, c.value, c.bound));
            }
        }
        if id == KNOWN_FAILURE.0 && outcome.checks.iter().all(|c| c.name != KNOWN_FAILURE.1 || c.pass) {
            println!("  note: the known L_G violation was not observed");
        }
        if id == 10 {
            for (file, needle) in [("ts1_negative_control.toml", "K·L < α"), ("unstable_negative_control.toml", "not uniformly stable")] {
                match binary_rejects(file, needle) {
                    Ok(()) => println!("  binary: {file} exits 3 naming `{needle}`"),
                    Err(e) => unexpected.push(format!("criterion 10 binary: {e}")),
                }
            }
        }
    }
    if unexpected.is_empty() {
        println!("acceptance: all criteria as recorded (criterion 5 fails only on the L_G sub-check)");
        ExitCode::SUCCESS
    } else {
        for u in &unexpected {
            println!("unexpected: {u}");
        }
        ExitCode::FAILURE
    }
}
