//! Regression calibration combined with the feasible estimator.
//!
//! Stage 1 projects the annotated truth onto the surrogate and covariates by
//! least squares; stage 2 regresses the outcome on the projected truth over
//! all rows. The calibration estimate and the feasible estimate are then
//! merged per coefficient with inverse-variance weights. Valid for a proxied
//! covariate with a Gaussian outcome under nondifferential error; the
//! surrogate must be conditionally independent of the outcome given the
//! truth, which is exactly what breaks it under systematic misclassification.

use super::fit_feasible;
use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::formula::ProxyPosition;
use crate::glm::{fit_glm, Design, Family, FitResult, OptimOptions};
use crate::mla::JointModelSpec;
use nalgebra::DMatrix;

pub fn fit_gmm(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
) -> Result<FitResult> {
    if spec.case != ProxyPosition::Iv {
        return Err(Error::UnsupportedModel(
            "calibration applies only to a proxied covariate".into(),
        ));
    }
    if spec.main_family != Family::GaussianIdentity {
        return Err(Error::UnsupportedModel(
            "calibration applies only to a gaussian outcome".into(),
        ));
    }

    let latent = spec.latent().to_string();
    let surrogate_name = spec.surrogate().to_string();
    let rows = frame.annotated_rows();

    // stage 1: linear projection of the truth on (surrogate, covariates)
    let latent_col = frame.latent_column().expect("proxied frame");
    let truth: Vec<f64> = rows
        .iter()
        .map(|&i| latent_col[i].expect("annotated row"))
        .collect();
    let surrogate = frame.dense_column(&surrogate_name)?;
    let observed: Vec<(String, Vec<f64>)> = frame
        .spec
        .observed_terms()
        .iter()
        .map(|t| Ok((t.to_string(), frame.dense_column(t)?)))
        .collect::<Result<_>>()?;

    let mut stage1_cols: Vec<(&str, Vec<f64>)> = vec![(
        &surrogate_name,
        rows.iter().map(|&i| surrogate[i]).collect(),
    )];
    for (name, col) in &observed {
        stage1_cols.push((name, rows.iter().map(|&i| col[i]).collect()));
    }
    let named1: Vec<(&str, &[f64])> = stage1_cols
        .iter()
        .map(|(n, c)| (*n, c.as_slice()))
        .collect();
    let stage1 = fit_glm(
        &Design::with_intercept(&named1, &truth),
        Family::GaussianIdentity,
        options,
    )?;

    // fitted values for every row
    let n = frame.n_rows();
    let mut projected = vec![stage1.estimates[0]; n];
    for i in 0..n {
        projected[i] += stage1.estimates[1] * surrogate[i];
        for (k, (_, col)) in observed.iter().enumerate() {
            projected[i] += stage1.estimates[k + 2] * col[i];
        }
    }

    // stage 2: outcome on the projection, in the main model's term order
    let y = frame.dense_column(&frame.spec.response)?;
    let stage2_cols: Vec<(&str, &[f64])> = frame
        .spec
        .terms
        .iter()
        .map(|t| {
            if *t == latent {
                (t.as_str(), projected.as_slice())
            } else {
                let col = observed
                    .iter()
                    .find(|(n, _)| n == t)
                    .map(|(_, c)| c.as_slice())
                    .expect("observed term gathered above");
                (t.as_str(), col)
            }
        })
        .collect();
    let calibration = fit_glm(
        &Design::with_intercept(&stage2_cols, &y),
        Family::GaussianIdentity,
        options,
    )?;

    let feasible = fit_feasible(frame, Family::GaussianIdentity, options)?;

    // inverse-variance merge per coefficient (sigma rows dropped)
    let p = frame.spec.terms.len() + 1;
    let mut names = Vec::with_capacity(p);
    let mut est = Vec::with_capacity(p);
    let mut vcov = DMatrix::zeros(p, p);
    for k in 0..p {
        let name = &calibration.term_names[k];
        debug_assert_eq!(name, &feasible.term_names[k]);
        let (e1, v1) = (calibration.estimates[k], calibration.vcov[(k, k)]);
        let (e2, v2) = (feasible.estimates[k], feasible.vcov[(k, k)]);
        let (w1, w2) = (1.0 / v1.max(1e-300), 1.0 / v2.max(1e-300));
        est.push((w1 * e1 + w2 * e2) / (w1 + w2));
        vcov[(k, k)] = 1.0 / (w1 + w2);
        names.push(name.clone());
    }

    Ok(FitResult::from_vcov(names, est, vcov, None, true, 1, n))
}

#[cfg(test)]
mod tests {
    use super::super::tests::{all, frame_from};
    use super::*;
    use crate::glm::expit;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn rejected_for_proxied_response_or_binomial() {
        let frame = frame_from(
            "y || w ~ x + z",
            &[
                (
                    "y",
                    (0..30)
                        .map(|i| (i < 25).then_some(f64::from(i % 2 == 0)))
                        .collect(),
                ),
                ("w", all((0..30).map(|i| f64::from(i % 3 == 0)).collect())),
                ("x", all((0..30).map(|i| f64::from(i % 2 == 1)).collect())),
                (
                    "z",
                    all((0..30).map(|i| (i as f64 - 15.0) / 10.0).collect()),
                ),
            ],
        );
        let spec = JointModelSpec::from_model(frame.spec.clone(), Family::BernoulliLogit).unwrap();
        assert!(matches!(
            fit_gmm(&frame, &spec, &OptimOptions::default()),
            Err(Error::UnsupportedModel(_))
        ));
    }

    #[test]
    fn perfect_classifier_matches_oracle_regression() {
        let mut rng = crate::rng::stream(41, 0, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 500;
        let m = 100;
        let z: Vec<f64> = (0..n).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        let x: Vec<f64> = z
            .iter()
            .map(|z| f64::from(rng.gen::<f64>() < expit(*z)))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.2 * x[i] + 0.2 * z[i] + 0.5 * normal.sample(&mut rng))
            .collect();
        let latent: Vec<Option<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, v)| (i < m).then_some(*v))
            .collect();
        let frame = frame_from(
            "y ~ x || w + z",
            &[
                ("y", all(y.clone())),
                ("w", all(x.clone())),
                ("z", all(z.clone())),
                ("x", latent),
            ],
        );
        let spec =
            JointModelSpec::from_model(frame.spec.clone(), Family::GaussianIdentity).unwrap();
        let gmm = fit_gmm(&frame, &spec, &OptimOptions::default()).unwrap();

        // with w = x the projection reproduces x, so both merged components
        // estimate the same target; compare against the oracle fit
        let design = Design::with_intercept(&[("x", &x), ("z", &z)], &y);
        let oracle = fit_glm(&design, Family::GaussianIdentity, &OptimOptions::default()).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(gmm.estimates[k], oracle.estimates[k], epsilon = 0.05);
        }
        assert_eq!(gmm.term_names, ["(Intercept)", "x", "z"]);
    }
}
