//! What each Byzantine strategy uploads in the first round of each protocol
//! on the scalar three-worker problem.
//!
//! ```bash
//! cargo run --example attack_catalog
//! ```

use byzadmm::attacks::AttackKind;
use byzadmm::engine::{Algorithm, ExperimentConfig, Simulation};

fn main() -> byzadmm::Result<()> {
    let kinds = [
        AttackKind::Gaussian { std: 1.0 },
        AttackKind::SignFlip { epsilon: -2.0 },
        AttackKind::SmallValue { epsilon: 0.5 },
        AttackKind::LargeValue,
        AttackKind::CopyRegular { target: 0 },
    ];
    let algs = [Algorithm::Admm, Algorithm::Rsa, "sgd-median".parse()?];
    for kind in kinds {
        for alg in algs {
            let config = ExperimentConfig::toy_scalar(alg, kind);
            let line = match Simulation::new(&config) {
                Ok(mut sim) => {
                    let msgs = sim.run_round()?;
                    let upload = msgs.uploads[2].as_ref().map_or(f64::NAN, |u| u[0]);
                    format!("uploads {upload:+.4}")
                }
                Err(e) => format!("rejected ({e})"),
            };
            println!("{:<13} {:<11} {}", kind.label(), alg.label(), line);
        }
    }
    Ok(())
}
