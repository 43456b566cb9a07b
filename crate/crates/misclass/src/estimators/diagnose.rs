//! Likelihood-ratio test for systematic misclassification.
//!
//! On the annotated rows, compare the full error model for the classifier
//! output against its nondifferential restriction: `P(W|X,Z) = P(W|X,Y,Z)`
//! for a proxied covariate, `P(W|Y) = P(W|Y,Z,X)` for a proxied response.
//! Rejection means the classifier's mistakes carry signal the correction
//! model must account for.

use super::{column_values, confusion_counts};
use crate::data::AnalysisFrame;
use crate::error::Result;
use crate::glm::{fit_glm, Design, Family, FitResult, OptimOptions};
use crate::mla::{nondifferential_variant, JointModelSpec};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DiagnosisResult {
    pub lr_statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub systematic: bool,
}

/// LR test of the nested error models on annotated rows at level `alpha`.
pub fn diagnose_systematic(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
    alpha: f64,
) -> Result<DiagnosisResult> {
    // trivially balanced surrogates would make both fits degenerate; surface
    // the cleaner confusion error first
    confusion_counts(frame)?;

    let restricted_terms = nondifferential_variant(spec).error_model_terms;
    let full_terms = &spec.error_model_terms;
    let df = full_terms.len() - restricted_terms.len();
    if df == 0 {
        return Ok(DiagnosisResult {
            lr_statistic: 0.0,
            df: 0,
            p_value: 1.0,
            systematic: false,
        });
    }

    let full = error_model_fit(frame, full_terms, options)?;
    let restricted = error_model_fit(frame, &restricted_terms, options)?;
    let lr = (2.0
        * (full.log_likelihood.expect("glm reports loglik")
            - restricted.log_likelihood.expect("glm reports loglik")))
    .max(0.0);

    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    let p_value = 1.0 - chi.cdf(lr);
    Ok(DiagnosisResult {
        lr_statistic: lr,
        df,
        p_value,
        systematic: p_value < alpha,
    })
}

fn error_model_fit(
    frame: &AnalysisFrame,
    terms: &[String],
    options: &OptimOptions,
) -> Result<FitResult> {
    let rows = frame.annotated_rows();
    let surrogate = column_values(
        frame,
        frame
            .spec
            .proxy
            .as_ref()
            .expect("proxied")
            .surrogate
            .as_str(),
        false,
        &rows,
    )?;
    let cols: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| column_values(frame, t, false, &rows))
        .collect::<Result<_>>()?;
    let named: Vec<(&str, &[f64])> = terms
        .iter()
        .zip(&cols)
        .map(|(t, c)| (t.as_str(), c.as_slice()))
        .collect();
    fit_glm(
        &Design::with_intercept(&named, &surrogate),
        Family::BernoulliLogit,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::super::tests::{all, frame_from};
    use super::*;
    use crate::glm::expit;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic_frame(seed: u64, differential: bool) -> crate::data::AnalysisFrame {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 400;
        let z: Vec<f64> = (0..n).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        let x: Vec<f64> = z
            .iter()
            .map(|z| f64::from(rng.gen::<f64>() < expit(*z)))
            .collect();
        let eps: Vec<f64> = (0..n).map(|_| 0.5 * normal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|i| 0.2 * x[i] + 0.2 * z[i] + eps[i]).collect();
        let w: Vec<f64> = (0..n)
            .map(|i| {
                let shift = if differential { -1.6 * eps[i] } else { 0.0 };
                let score = x[i] + 0.55 * normal.sample(&mut rng) + shift;
                f64::from(score > 0.5)
            })
            .collect();
        frame_from(
            "y ~ x || w + z",
            &[("y", all(y)), ("w", all(w)), ("z", all(z)), ("x", all(x))],
        )
    }

    #[test]
    fn detects_outcome_dependent_errors() {
        let frame = synthetic_frame(61, true);
        let spec =
            JointModelSpec::from_model(frame.spec.clone(), Family::GaussianIdentity).unwrap();
        let d = diagnose_systematic(&frame, &spec, &OptimOptions::default(), 0.05).unwrap();
        assert_eq!(d.df, 1);
        assert!(d.systematic, "p = {}", d.p_value);
    }

    #[test]
    fn clean_errors_usually_pass() {
        let frame = synthetic_frame(62, false);
        let spec =
            JointModelSpec::from_model(frame.spec.clone(), Family::GaussianIdentity).unwrap();
        let d = diagnose_systematic(&frame, &spec, &OptimOptions::default(), 0.05).unwrap();
        assert!(!d.systematic, "p = {}", d.p_value);
    }

    #[test]
    fn identical_term_sets_give_zero_statistic() {
        let frame = synthetic_frame(63, false);
        let spec =
            JointModelSpec::from_model(frame.spec.clone(), Family::GaussianIdentity).unwrap();
        let nd = nondifferential_variant(&spec);
        let d = diagnose_systematic(&frame, &nd, &OptimOptions::default(), 0.05).unwrap();
        assert_eq!(d.lr_statistic, 0.0);
        assert_eq!(d.df, 0);
        assert_eq!(d.p_value, 1.0);
        assert!(!d.systematic);
    }

    #[test]
    fn statistic_invariant_to_surrogate_relabel() {
        let frame = synthetic_frame(64, true);
        let flipped_w: Vec<Option<f64>> = frame
            .dataset
            .column("w")
            .unwrap()
            .iter()
            .map(|v| v.map(|v| 1.0 - v))
            .collect();
        let mut cols: Vec<(&str, Vec<Option<f64>>)> = Vec::new();
        for name in ["y", "z", "x"] {
            cols.push((name, frame.dataset.column(name).unwrap().clone()));
        }
        cols.push(("w", flipped_w));
        let flipped = frame_from("y ~ x || w + z", &cols);

        let spec =
            JointModelSpec::from_model(frame.spec.clone(), Family::GaussianIdentity).unwrap();
        let d1 = diagnose_systematic(&frame, &spec, &OptimOptions::default(), 0.05).unwrap();
        let d2 = diagnose_systematic(&flipped, &spec, &OptimOptions::default(), 0.05).unwrap();
        assert!((d1.lr_statistic - d2.lr_statistic).abs() < 1e-6);
    }
}
