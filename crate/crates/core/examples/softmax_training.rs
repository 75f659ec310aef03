//! Attack-free mini-batch training of a softmax classifier on synthetic
//! Gaussian blobs, comparing the ADMM and gradient-averaging rosters.
//!
//! ```bash
//! cargo run --release --example softmax_training
//! ```

use byzadmm::algorithms::StepsizeSchedule;
use byzadmm::attacks::{AttackKind, AttackSpec};
use byzadmm::engine::{
    run_experiment, Algorithm, DataSource, ExperimentConfig, InitMode, PartitionMode, ProblemSpec,
    SoftmaxSpec,
};

fn main() -> byzadmm::Result<()> {
    for alg in [Algorithm::Admm, Algorithm::Rsa, Algorithm::IdealSgd] {
        let mut config = ExperimentConfig::toy_scalar(alg, AttackKind::None);
        config.attack = AttackSpec::none();
        config.workers = 10;
        config.master_schedule = StepsizeSchedule::inverse_sqrt_k(5.0, 5.0);
        config.worker_schedule = StepsizeSchedule::inverse_sqrt_k(1.0, 5.0);
        config.problem = ProblemSpec::Softmax(SoftmaxSpec {
            source: DataSource::Synthetic {
                classes: 5,
                features: 8,
                per_class: 200,
                spread: 2.0,
                test_fraction: 0.2,
            },
            partition: PartitionMode::Iid,
            batch_size: Some(32),
            regularization: 0.01,
            train_cap: None,
            test_cap: None,
        });
        config.init = InitMode::Zeros;
        config.reference = false;
        config.rounds = 300;
        config.eval_every = 100;
        let accs: Vec<String> = run_experiment(&config)?
            .iter()
            .map(|r| format!("k={}:{:.3}", r.k, r.top1_accuracy.unwrap_or(f64::NAN)))
            .collect();
        println!("{:<10} {}", alg.label(), accs.join("  "));
    }
    Ok(())
}
