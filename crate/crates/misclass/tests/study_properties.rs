//! Distribution-level properties of the study machinery at reduced scale.

use misclass::estimators::{fit_feasible, EstimatorKind};
use misclass::glm::{OptimOptions, WALD_95};
use misclass::montecarlo::{run_study, summarize, ReplicationRecord, StudyConfig};
use misclass::simulate::{generate, Scenario, ScenarioConfig};

fn study(
    grid: Vec<ScenarioConfig>,
    estimators: Vec<EstimatorKind>,
    reps: usize,
    seed: u64,
) -> StudyConfig {
    StudyConfig {
        grid,
        estimators,
        replications: reps,
        master_seed: seed,
        workers: 0,
        mi_imputations: 20,
        mla_nondifferential: false,
    }
}

#[test]
fn feasible_precision_scales_with_annotation_count() {
    // quadrupling the annotated subsample should halve the sampling sd
    let config = study(
        vec![
            ScenarioConfig::new(Scenario::S1a, 3000, 100, 0),
            ScenarioConfig::new(Scenario::S1a, 3000, 400, 0),
        ],
        vec![EstimatorKind::Feasible],
        300,
        41,
    );
    let summary = summarize(&run_study(&config, |_| {}).unwrap()).unwrap();
    let sd_100 = summary
        .row(0, EstimatorKind::Feasible, "x")
        .unwrap()
        .sd_estimate;
    let sd_400 = summary
        .row(1, EstimatorKind::Feasible, "x")
        .unwrap()
        .sd_estimate;
    let ratio = sd_100 / sd_400;
    assert!((1.6..=2.5).contains(&ratio), "sd ratio {ratio:.2}");
}

#[test]
fn joint_estimator_precision_does_not_degrade_with_more_annotations() {
    let config = study(
        vec![
            ScenarioConfig::new(Scenario::S1a, 1500, 100, 0),
            ScenarioConfig::new(Scenario::S1a, 1500, 400, 0),
        ],
        vec![EstimatorKind::Mla],
        120,
        42,
    );
    let summary = summarize(&run_study(&config, |_| {}).unwrap()).unwrap();
    let sd_100 = summary.row(0, EstimatorKind::Mla, "x").unwrap().sd_estimate;
    let sd_400 = summary.row(1, EstimatorKind::Mla, "x").unwrap().sd_estimate;
    assert!(
        sd_400 <= sd_100 * 1.02,
        "sd m=100 {sd_100:.4} vs m=400 {sd_400:.4}"
    );
}

#[test]
fn correctly_specified_wald_intervals_cover_nominally() {
    // synthetic records: estimates ~ Normal(theta, s) with exact Wald CIs
    use rand_distr::{Distribution, Normal};
    let mut rng = misclass::rng::stream(7, 0, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let theta = 0.4;
    let s = 0.08;
    let template = {
        let config = study(
            vec![ScenarioConfig::new(Scenario::S1a, 200, 50, 0)],
            vec![EstimatorKind::Naive],
            1,
            3,
        );
        run_study(&config, |_| {}).unwrap().remove(1)
    };
    let records: Vec<ReplicationRecord> = (0..1000)
        .map(|rep| {
            let estimate = theta + s * normal.sample(&mut rng);
            let mut r = template.clone();
            r.replication = rep;
            r.true_value = theta;
            r.estimate = Some(estimate);
            r.std_error = Some(s);
            r.ci_low = Some(estimate - WALD_95 * s);
            r.ci_high = Some(estimate + WALD_95 * s);
            r.covered = Some(r.ci_low.unwrap() <= theta && theta <= r.ci_high.unwrap());
            r.converged = true;
            r
        })
        .collect();
    let summary = summarize(&records).unwrap();
    let coverage = summary.rows[0].coverage;
    assert!(
        (0.93..=0.97).contains(&coverage),
        "nominal coverage came out {coverage:.3}"
    );
}

#[test]
fn s1_achieved_r_squared_averages_to_target() {
    let mut total = 0.0;
    let n_reps = 100;
    for seed in 0..n_reps {
        let cfg = ScenarioConfig::new(Scenario::S1a, 5000, 100, seed);
        total += generate(&cfg).unwrap().achieved.r_squared.unwrap();
    }
    let mean = total / n_reps as f64;
    assert!((mean - 0.10).abs() < 0.02, "mean achieved r2 {mean:.4}");
}

#[test]
fn s2_oracle_fit_recovers_the_generating_coefficients() {
    let cfg = ScenarioConfig::new(Scenario::S2a, 100_000, 100_000, 5);
    let data = generate(&cfg).unwrap();
    let fit = fit_feasible(&data.frame, cfg.family(), &OptimOptions::default()).unwrap();
    assert!((fit.estimate_for("x").unwrap() - 0.7).abs() < 0.05);
    assert!((fit.estimate_for("z").unwrap() + 0.7).abs() < 0.05);
}
