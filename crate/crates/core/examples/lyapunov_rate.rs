//! Tracks the Lyapunov potential of ADMM on a five-worker quadratic problem
//! with decaying 1/k stepsizes, with and without two Gaussian attackers.
//!
//! ```bash
//! cargo run --release --example lyapunov_rate
//! ```

use byzadmm::engine::verify::{lyapunov_series, quadratic_fleet};

fn main() -> byzadmm::Result<()> {
    for q in [0, 2] {
        let mut config = quadratic_fleet(q)?;
        config.rounds = 100_000;
        let series = lyapunov_series(&config)?;
        let shown: Vec<String> = series
            .iter()
            .filter(|(k, _)| [1.0, 10.0, 100.0, 1e3, 1e4, 1e5].contains(k))
            .map(|(k, v)| format!("V({k:.0})={v:.3e}"))
            .collect();
        println!("q={q}: {}", shown.join("  "));
    }
    Ok(())
}
