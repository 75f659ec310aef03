use super::*;
use approx::assert_abs_diff_eq;

fn softmax_config(algorithm: Algorithm, attack: AttackSpec) -> ExperimentConfig {
    ExperimentConfig {
        algorithm,
        attack,
        workers: 6,
        lambda: 0.5,
        beta: 0.5,
        master_schedule: StepsizeSchedule::inverse_sqrt_k(10.0, 10.0),
        worker_schedule: StepsizeSchedule::inverse_sqrt_k(0.5, 10.0),
        problem: ProblemSpec::Softmax(SoftmaxSpec {
            source: DataSource::Synthetic {
                classes: 3,
                features: 5,
                per_class: 40,
                spread: 1.0,
                test_fraction: 0.25,
            },
            partition: PartitionMode::Iid,
            batch_size: Some(8),
            regularization: 0.01,
            train_cap: None,
            test_cap: None,
        }),
        init: InitMode::Zeros,
        rounds: 60,
        eval_every: 10,
        seed: 3,
        reference: false,
        ergodic: false,
    }
}

#[test]
fn algorithm_labels_round_trip() {
    for a in Algorithm::ROSTER {
        assert_eq!(a.label().parse::<Algorithm>().unwrap(), a);
    }
    assert!("krum".parse::<Algorithm>().is_err());
}

#[test]
fn toy_admm_first_round() {
    let config = ExperimentConfig::toy_scalar(Algorithm::Admm, AttackKind::LargeValue);
    let mut sim = Simulation::new(&config).unwrap();
    let msgs = sim.run_round().unwrap();
    let ProtocolState::Admm { master, workers } = sim.state() else {
        panic!()
    };
    assert_eq!(master.x0[0], 0.0);
    assert_eq!(workers[0].x[0], 1.0);
    assert_eq!(workers[1].x[0], 1.0);
    for u in msgs.uploads.iter().flatten() {
        assert_eq!(u[0], 0.5);
    }
    assert_eq!(sim.round(), 1);
}

#[test]
fn toy_admm_small_value_first_upload() {
    let config =
        ExperimentConfig::toy_scalar(Algorithm::Admm, AttackKind::SmallValue { epsilon: 0.5 });
    let mut sim = Simulation::new(&config).unwrap();
    let msgs = sim.run_round().unwrap();
    // u = x0 − ε/max{1·2, 1} = −0.25, so η = proj(0.5·(−0.25)).
    assert_abs_diff_eq!(msgs.uploads[2].as_ref().unwrap()[0], -0.125);
}

#[test]
fn toy_rsa_first_round() {
    let config =
        ExperimentConfig::toy_scalar(Algorithm::Rsa, AttackKind::SmallValue { epsilon: 0.5 });
    let mut sim = Simulation::new(&config).unwrap();
    let msgs = sim.run_round().unwrap();
    assert_eq!(msgs.uploads[2].as_ref().unwrap()[0], -0.5);
    assert_abs_diff_eq!(sim.state().x0()[0], 1.0 / 6.0, epsilon = 1e-15);
    assert_eq!(sim.state().worker_x(0).unwrap()[0], 0.5);
}

#[test]
fn toy_initial_metrics() {
    let config = ExperimentConfig::toy_scalar(Algorithm::Admm, AttackKind::LargeValue);
    let sim = Simulation::new(&config).unwrap();
    let r = sim.metrics().unwrap();
    assert_eq!(r.k, 0);
    assert_abs_diff_eq!(r.master_error.unwrap(), 0.25);
    assert_abs_diff_eq!(r.worker_error.unwrap(), 0.5);
    assert_abs_diff_eq!(r.consensus_gap.unwrap(), 1.0);
    assert_abs_diff_eq!(r.lyapunov.unwrap(), 1.0, epsilon = 1e-15);
    assert_eq!(r.top1_accuracy, None);
    assert_abs_diff_eq!(sim.reference().unwrap().lambda_zero, 0.25);
}

#[test]
fn record_cadence() {
    let mut config = ExperimentConfig::toy_scalar(Algorithm::Rsa, AttackKind::LargeValue);
    config.rounds = 25;
    config.eval_every = 10;
    let ks: Vec<usize> = run_experiment(&config)
        .unwrap()
        .iter()
        .map(|r| r.k)
        .collect();
    assert_eq!(ks, vec![0, 10, 20, 25]);
}

#[test]
fn none_attack_matches_the_attack_free_run() {
    for alg in Algorithm::ROSTER {
        let a = run_experiment(&softmax_config(alg, AttackSpec::none())).unwrap();
        let b =
            run_experiment(&softmax_config(alg, AttackSpec::new(AttackKind::None, []))).unwrap();
        assert_eq!(a, b, "{alg}");
    }
    let mut ideal =
        run_experiment(&softmax_config(Algorithm::IdealSgd, AttackSpec::none())).unwrap();
    let mean = run_experiment(&softmax_config(
        Algorithm::Sgd(AggregationRule::Mean),
        AttackSpec::none(),
    ))
    .unwrap();
    ideal
        .iter_mut()
        .for_each(|r| r.algorithm = "sgd-mean".into());
    assert_eq!(ideal, mean);
}

#[test]
fn runs_are_bit_identical_and_thread_count_free() {
    let attack = AttackSpec::new(AttackKind::Gaussian { std: 100.0 }, [4, 5]);
    let config = softmax_config(Algorithm::Admm, attack.clone());
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let c = pool.install(|| run_experiment(&config).unwrap());
    assert_eq!(a, c);
    let mut other = config.clone();
    other.seed = 4;
    assert_ne!(a, run_experiment(&other).unwrap());
}

#[test]
fn copy_attack_replays_the_target_upload() {
    let attack = AttackSpec::new(AttackKind::CopyRegular { target: 1 }, [4, 5]);
    for alg in [
        Algorithm::Rsa,
        Algorithm::Sgd(AggregationRule::CoordinateMedian),
    ] {
        let mut sim = Simulation::new(&softmax_config(alg, attack.clone())).unwrap();
        for _ in 0..5 {
            let msgs = sim.run_round().unwrap();
            assert_eq!(msgs.uploads[4], msgs.uploads[1]);
            assert_eq!(msgs.uploads[5], msgs.uploads[1]);
        }
    }
}

#[test]
fn sign_flip_scales_honest_sgd_gradient() {
    let attack = AttackSpec::new(AttackKind::SignFlip { epsilon: -3.0 }, [5]);
    let mut sim = Simulation::new(&softmax_config(
        Algorithm::Sgd(AggregationRule::Mean),
        attack,
    ))
    .unwrap();
    let x0 = sim.state().x0().clone();
    let msgs = sim.run_round().unwrap();
    let honest = sim.workload().gradient(3, 5, &x0, 0).unwrap();
    assert_eq!(msgs.uploads[5].as_ref().unwrap(), &honest.scaled(-3.0));
}

#[test]
fn admm_uploads_stay_in_the_box_under_every_attack() {
    for kind in [
        AttackKind::Gaussian { std: 100.0 },
        AttackKind::SignFlip { epsilon: -3.0 },
        AttackKind::CopyRegular { target: 0 },
        AttackKind::LargeValue,
    ] {
        let mut sim = Simulation::new(&softmax_config(
            Algorithm::Admm,
            AttackSpec::new(kind, [4, 5]),
        ))
        .unwrap();
        for _ in 0..20 {
            for u in sim.run_round().unwrap().uploads.iter().flatten() {
                assert!(u.norm_inf() <= 0.5, "{kind:?}");
            }
        }
    }
}

#[test]
fn softmax_runs_report_accuracy_only() {
    let recs = run_experiment(&softmax_config(Algorithm::Admm, AttackSpec::none())).unwrap();
    let first = &recs[0];
    assert!(first.master_error.is_none() && first.lyapunov.is_none());
    assert_abs_diff_eq!(first.consensus_gap.unwrap(), 0.0);
    for r in &recs {
        let acc = r.top1_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    assert!(recs.last().unwrap().top1_accuracy.unwrap() > 0.6);
}

#[test]
fn zero_weights_predict_class_zero() {
    let ds = crate::data::synthetic_blobs(4, 3, 5, 1.0, 1).unwrap();
    assert_abs_diff_eq!(top1_accuracy(&[0.0; 12], &ds), 0.25);
}

#[test]
fn separable_fixture_is_classified_perfectly() {
    let ds = Dataset::new(
        vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.1, 0.1, 3.0],
        vec![0, 1, 0, 1],
        2,
    )
    .unwrap();
    assert_eq!(top1_accuracy(&[1.0, 0.0, 0.0, 1.0], &ds), 1.0);
}

#[test]
fn ergodic_gap_shrinks_on_a_consensual_run() {
    let mut config = ExperimentConfig::toy_scalar(Algorithm::Admm, AttackKind::None);
    config.attack = AttackSpec::none();
    config.master_schedule = StepsizeSchedule::inverse_sqrt_k(3.0, 1.0);
    config.worker_schedule = StepsizeSchedule::inverse_sqrt_k(1.0, 1.0);
    config.ergodic = true;
    config.rounds = 4000;
    config.eval_every = 1000;
    let recs = run_experiment(&config).unwrap();
    assert!(recs[0].ergodic_gap.is_none());
    let gaps: Vec<f64> = recs[1..].iter().map(|r| r.ergodic_gap.unwrap()).collect();
    // The average need not be consensual, so the unpenalised gap may be negative.
    assert!(
        gaps.windows(2).all(|w| w[1].abs() <= w[0].abs()),
        "{gaps:?}"
    );
    assert!(gaps.last().unwrap().abs() < 1e-2);
}

#[test]
fn non_finite_state_aborts_with_round_and_worker() {
    // A draw beyond 1.8 standard deviations overflows, and the mean passes it on.
    let mut config = ExperimentConfig::toy_scalar(
        Algorithm::Sgd(AggregationRule::Mean),
        AttackKind::Gaussian { std: 1e308 },
    );
    config.rounds = 200;
    match run_experiment(&config) {
        Err(Error::NonFinite { round, .. }) if round < 200 => {}
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn value_attacks_are_rejected_for_gradient_aggregation() {
    let config = ExperimentConfig::toy_scalar(
        Algorithm::Sgd(AggregationRule::Mean),
        AttackKind::LargeValue,
    );
    assert!(Simulation::new(&config).is_err());
    let ideal = ExperimentConfig::toy_scalar(Algorithm::IdealSgd, AttackKind::LargeValue);
    assert!(Simulation::new(&ideal).is_ok());
}

#[test]
fn quadratic_sgd_reaches_the_minimiser() {
    let mut config = ExperimentConfig::toy_scalar(Algorithm::IdealSgd, AttackKind::LargeValue);
    config.problem = ProblemSpec::Quadratic(QuadraticSpec {
        regularizer_center: vec![0.0],
        regularizer_scale: 0.0,
        centers: vec![vec![0.0], vec![2.0], vec![9.0]],
        scales: vec![0.5; 3],
        noise_std: 0.0,
    });
    config.init = InitMode::Zeros;
    // α = 1/ΣL over the regular workers.
    config.master_schedule = StepsizeSchedule::inverse_k(0.0, 1.0);
    config.rounds = 1000;
    config.eval_every = 1000;
    let mut sim = Simulation::new(&config).unwrap();
    assert_abs_diff_eq!(sim.reference().unwrap().x_star[0], 1.0);
    let last = sim.run_to_end().unwrap().pop().unwrap();
    assert!(last.master_error.unwrap().sqrt() < 1e-6);
}
