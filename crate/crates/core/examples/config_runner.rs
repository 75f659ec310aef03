//! Runs a TOML experiment file end to end and writes per-algorithm CSVs,
//! `plot.dat` and `summary.csv` into an output directory.
//!
//! ```bash
//! cargo run --release --example config_runner -- crates/core/configs/mnist_gaussian.toml /tmp/gaussian
//! ```

use std::path::PathBuf;

use byzadmm::cli::{format_outcomes, run_command, Overrides, RunManifest};

fn main() -> byzadmm::Result<()> {
    let mut args = std::env::args_os().skip(1);
    let config_path = args.next().map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("configs")
            .join("toy_small_value.toml")
    });
    let out_dir = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("byzadmm-config-runner"));
    let outcomes = run_command(&RunManifest {
        config_path,
        out_dir: out_dir.clone(),
        roster: None,
        sweep: None,
        single: true,
        overwrite: true,
        overrides: Overrides::default(),
    })?;
    print!("{}", format_outcomes(&outcomes));
    println!("outputs in {}", out_dir.display());
    Ok(())
}
