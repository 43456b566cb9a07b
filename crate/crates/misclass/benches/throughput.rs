//! Throughput benches for the two data-parallel hot paths: the joint
//! log-likelihood row sum and the replicated study runner.
//!
//! With the default `parallel` feature the likelihood bench exercises the
//! rayon-chunked sum and the study bench compares sequential (workers = 1)
//! against parallel (workers = 0) scheduling. Build with
//! `--no-default-features` to measure the sequential fallback on the same
//! bench ids.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use misclass::estimators::EstimatorKind;
use misclass::glm::Family;
use misclass::mla::{JointLikelihood, JointModelSpec};
use misclass::montecarlo::{run_study, StudyConfig};
use misclass::simulate::{generate, Scenario, ScenarioConfig};

fn likelihood_eval(c: &mut Criterion) {
    let config = ScenarioConfig::new(Scenario::S1a, 100_000, 500, 7);
    let data = generate(&config).expect("generate");
    let spec =
        JointModelSpec::from_model(data.frame.spec.clone(), Family::GaussianIdentity).unwrap();
    let ll = JointLikelihood::new(&data.frame, &spec).unwrap();
    let mut theta = ll.theta_layout();
    for (i, v) in theta.values.iter_mut().enumerate() {
        *v = 0.05 * (i as f64 + 1.0);
    }

    let label = if cfg!(feature = "parallel") {
        "loglik_100k_rows/parallel"
    } else {
        "loglik_100k_rows/sequential"
    };
    c.bench_function(label, |b| {
        b.iter(|| ll.loglik(std::hint::black_box(&theta.values)))
    });
}

fn study_config(workers: usize) -> StudyConfig {
    StudyConfig {
        grid: vec![ScenarioConfig::new(Scenario::S1a, 2000, 100, 0)],
        estimators: vec![EstimatorKind::Naive, EstimatorKind::Mla],
        replications: 4,
        master_seed: 99,
        workers,
        mi_imputations: 20,
        mla_nondifferential: false,
    }
}

fn study_runner(c: &mut Criterion) {
    let mut group = c.benchmark_group("study_4_replications");
    group.sample_size(10);
    group.bench_function("sequential", |b| {
        b.iter_batched(
            || study_config(1),
            |config| run_study(&config, |_| {}).unwrap(),
            BatchSize::PerIteration,
        )
    });
    #[cfg(feature = "parallel")]
    group.bench_function("parallel", |b| {
        b.iter_batched(
            || study_config(0),
            |config| run_study(&config, |_| {}).unwrap(),
            BatchSize::PerIteration,
        )
    });
    group.finish();
}

criterion_group!(benches, likelihood_eval, study_runner);
criterion_main!(benches);
