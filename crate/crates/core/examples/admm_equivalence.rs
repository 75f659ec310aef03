//! Runs the dual-only ADMM and the three-block ADMM it reduces from side by
//! side on a five-worker quadratic problem and reports their largest gap.
//!
//! ```bash
//! cargo run --example admm_equivalence
//! ```

use byzadmm::engine::verify::check_equivalence;

fn main() -> byzadmm::Result<()> {
    for rounds in [1, 10, 100, 1000] {
        let c = check_equivalence(rounds)?;
        println!("{:>5} rounds: {}", rounds, c.detail);
    }
    Ok(())
}
