//! Sweeps the penalty relative to its consensus threshold on a quadratic
//! problem and reports the final consensus gap of exact-gradient ADMM.
//!
//! ```bash
//! cargo run --release --example penalty_threshold
//! ```

use byzadmm::algorithms::StepsizeSchedule;
use byzadmm::engine::verify::quadratic_fleet;
use byzadmm::engine::Simulation;

fn main() -> byzadmm::Result<()> {
    let base = quadratic_fleet(0)?;
    let lambda_zero = Simulation::new(&base)?
        .reference()
        .map(|r| r.lambda_zero)
        .expect("quadratic runs solve for the optimum");
    println!("threshold lambda0 = {lambda_zero:.4}");
    for ratio in [0.1, 0.5, 0.9, 1.1, 1.5, 3.0] {
        let mut config = base.clone();
        config.lambda = ratio * lambda_zero;
        config.master_schedule = StepsizeSchedule::inverse_k(0.0, 1.0 / 0.05);
        config.worker_schedule = StepsizeSchedule::inverse_k(0.0, 1.0 / 0.2);
        config.rounds = 20_000;
        config.eval_every = config.rounds;
        let last = Simulation::new(&config)?
            .run_to_end()?
            .pop()
            .expect("records");
        println!(
            "lambda/lambda0 = {ratio:>4}: consensus gap {:.3e}, master error {:.3e}",
            last.consensus_gap.unwrap_or(f64::NAN),
            last.master_error.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
