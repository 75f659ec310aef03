//! Three scalar workers, one of them Byzantine, under the small-value and
//! large-value attacks. Prints how far ADMM and RSA end up from the optimum.
//!
//! ```bash
//! cargo run --release --example toy_scalar
//! ```

use byzadmm::attacks::AttackKind;
use byzadmm::engine::{Algorithm, ExperimentConfig, Simulation};

fn main() -> byzadmm::Result<()> {
    let attacks = [
        ("small-value", AttackKind::SmallValue { epsilon: 0.5 }),
        ("large-value", AttackKind::LargeValue),
    ];
    println!(
        "{:<12} {:<5} {:>10} {:>12} {:>12}",
        "attack", "alg", "x0", "master_err", "consensus"
    );
    for (name, kind) in attacks {
        for alg in [Algorithm::Admm, Algorithm::Rsa] {
            let config = ExperimentConfig::toy_scalar(alg, kind);
            let mut sim = Simulation::new(&config)?;
            let last = sim.run_to_end()?.pop().expect("at least one record");
            println!(
                "{:<12} {:<5} {:>10.6} {:>12.3e} {:>12.3e}",
                name,
                alg.label(),
                sim.state().x0()[0],
                last.master_error.unwrap_or(f64::NAN),
                last.consensus_gap.unwrap_or(f64::NAN),
            );
        }
    }
    println!("optimum x* = 0.5");
    Ok(())
}
