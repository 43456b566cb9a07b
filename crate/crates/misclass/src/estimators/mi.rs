//! Multiple imputation for the latent binary variable, pooled by Rubin's
//! rules.
//!
//! The imputation model regresses the truth on the surrogate and every other
//! model variable (outcome included), fit on the annotated rows. Each
//! imputation draws the imputation-model parameters from their normal
//! approximation, fills the missing latent values, and refits the main model
//! on the completed data. Pooled variance is within + (1 + 1/m) * between,
//! intervals from normal quantiles.
//!
//! A proxied covariate is imputed from a logistic model as Bernoulli draws.
//! A proxied response is imputed the way the established normal-model MI
//! engines do it: a linear imputation draw rounded to the nearer class. That
//! rounding step is exactly what keeps MI from converging to the truth when
//! the outcome itself is the misclassified variable, and the study harness
//! is expected to reproduce that failure mode.

use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::formula::ProxyPosition;
use crate::glm::{expit, fit_glm, Design, Family, FitResult, OptimOptions};
use crate::mla::JointModelSpec;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn fit_mi(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
    m_imputations: usize,
    seed: u64,
) -> Result<FitResult> {
    assert!(m_imputations >= 1, "need at least one imputation");

    // imputing variables: surrogate, then (IV case) the outcome, then the
    // observed covariates
    let mut impute_terms: Vec<String> = vec![spec.surrogate().to_string()];
    if spec.case == ProxyPosition::Iv {
        impute_terms.push(spec.main.response.clone());
    }
    impute_terms.extend(frame.spec.observed_terms().iter().map(|s| s.to_string()));

    let impute_cols: Vec<Vec<f64>> = impute_terms
        .iter()
        .map(|t| frame.dense_column(t))
        .collect::<Result<_>>()?;
    let latent_col = frame.latent_column().expect("proxied frame");
    let rows = frame.annotated_rows();
    let truth: Vec<f64> = rows
        .iter()
        .map(|&i| latent_col[i].expect("annotated row"))
        .collect();
    let named: Vec<(&str, Vec<f64>)> = impute_terms
        .iter()
        .zip(&impute_cols)
        .map(|(t, c)| (t.as_str(), rows.iter().map(|&i| c[i]).collect()))
        .collect();
    let named_refs: Vec<(&str, &[f64])> = named.iter().map(|(t, c)| (*t, c.as_slice())).collect();
    let impute_family = match spec.case {
        ProxyPosition::Iv => Family::BernoulliLogit,
        ProxyPosition::Dv => Family::GaussianIdentity,
    };
    let imputation_model = fit_glm(
        &Design::with_intercept(&named_refs, &truth),
        impute_family,
        options,
    )
    .map_err(|e| Error::ImputationModelFailed(Box::new(e)))?;

    // coefficient block only; the gaussian fit reports sigma as an extra term
    let p_imp = impute_terms.len() + 1;
    let residual_sd = match impute_family {
        Family::GaussianIdentity => imputation_model.estimates[p_imp],
        Family::BernoulliLogit => 0.0,
    };
    let delta = DVector::from_column_slice(&imputation_model.estimates[..p_imp]);
    let coef_vcov = imputation_model
        .vcov
        .view((0, 0), (p_imp, p_imp))
        .into_owned();
    let chol = coef_vcov.cholesky().ok_or_else(|| {
        Error::ImputationModelFailed(Box::new(Error::SingularInformation {
            condition: f64::INFINITY,
        }))
    })?;
    let scale = chol.l();

    let unannotated: Vec<usize> = (0..frame.n_rows())
        .filter(|&i| !frame.annotated_mask[i])
        .collect();
    let mut rng = crate::rng::stream(seed, 0x4d49, 0);

    // completed latent column, rebuilt per imputation
    let mut completed: Vec<f64> = latent_col.iter().map(|v| v.unwrap_or(0.0)).collect();

    let mut estimates: Vec<Vec<f64>> = Vec::with_capacity(m_imputations);
    let mut within: Option<DMatrix<f64>> = None;
    let mut term_names: Vec<String> = Vec::new();
    let mut all_converged = true;

    for _ in 0..m_imputations {
        // parameter draw from the normal approximation
        let z = DVector::from_iterator(p_imp, (0..p_imp).map(|_| standard_normal(&mut rng)));
        let draw = &delta + &scale * z;

        for &i in &unannotated {
            let mut eta = draw[0];
            for (k, col) in impute_cols.iter().enumerate() {
                eta += draw[k + 1] * col[i];
            }
            completed[i] = match impute_family {
                Family::BernoulliLogit => f64::from(rng.gen::<f64>() < expit(eta)),
                Family::GaussianIdentity => {
                    let value = eta + residual_sd * standard_normal(&mut rng);
                    f64::from(value > 0.5)
                }
            };
        }

        let fit = fit_complete(frame, spec, options, &completed)?;
        all_converged &= fit.converged;
        if term_names.is_empty() {
            term_names = fit.term_names.clone();
        }
        match &mut within {
            Some(w) => *w += &fit.vcov,
            None => within = Some(fit.vcov.clone()),
        }
        estimates.push(fit.estimates);
    }

    let m = m_imputations as f64;
    let p = term_names.len();
    let mut pooled = vec![0.0; p];
    for est in &estimates {
        for k in 0..p {
            pooled[k] += est[k] / m;
        }
    }
    let within = within.expect("at least one imputation") / m;
    let mut between = DMatrix::zeros(p, p);
    if m_imputations > 1 {
        for est in &estimates {
            for a in 0..p {
                for b in 0..p {
                    between[(a, b)] += (est[a] - pooled[a]) * (est[b] - pooled[b]);
                }
            }
        }
        between /= m - 1.0;
    }
    let total = within + between * (1.0 + 1.0 / m);

    Ok(FitResult::from_vcov(
        term_names,
        pooled,
        total,
        None,
        all_converged,
        m_imputations,
        frame.n_rows(),
    ))
}

/// Fit the main model with the latent column filled in.
fn fit_complete(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
    completed: &[f64],
) -> Result<FitResult> {
    let latent_name = spec.latent();
    let y: Vec<f64> = if spec.case == ProxyPosition::Dv {
        completed.to_vec()
    } else {
        frame.dense_column(&spec.main.response)?
    };
    let cols: Vec<(String, Vec<f64>)> = frame
        .spec
        .terms
        .iter()
        .map(|t| {
            let col = if t == latent_name {
                completed.to_vec()
            } else {
                frame.dense_column(t)?
            };
            Ok((t.clone(), col))
        })
        .collect::<Result<_>>()?;
    let named: Vec<(&str, &[f64])> = cols
        .iter()
        .map(|(t, c)| (t.as_str(), c.as_slice()))
        .collect();
    fit_glm(
        &Design::with_intercept(&named, &y),
        spec.main_family,
        options,
    )
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}
