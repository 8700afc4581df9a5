//! Regenerates the bundled synthetic fixture.
//!
//! Usage: `cargo run -p embforge-core --example make_fixture [OUT_DIR]`

use std::path::PathBuf;
use std::process::ExitCode;

use embforge_core::synth::{write_fixture, FixtureSpec};

fn main() -> ExitCode {
    let out = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/synthetic")));
    if out.exists() {
        if let Err(e) = std::fs::remove_dir_all(&out) {
            eprintln!("{}: {e}", out.display());
            return ExitCode::FAILURE;
        }
    }
    match write_fixture(&out, &FixtureSpec::default()) {
        Ok(manifests) => {
            eprintln!("wrote {} episodes to {}", manifests.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
