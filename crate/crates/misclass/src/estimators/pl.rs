//! Pseudo-likelihood: the joint-model shape with the error model frozen at
//! confusion-matrix rates and no exposure model.
//!
//! For a proxied covariate the frozen quantities are the predictive values
//! (`P(X|W)`); for a proxied response they are the false positive and false
//! negative rates (`P(W|Y)`). The rates enter as constants, so reported
//! standard errors deliberately ignore their sampling noise, and the missing
//! exposure factor makes the covariate case inconsistent when annotations
//! are a small fraction of the data.

use super::{confusion_counts, main_design};
use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::formula::ProxyPosition;
use crate::glm::optim::{maximize, numeric_hessian};
use crate::glm::{
    bernoulli_logit_logprob, fit_glm, gaussian_logdensity_unchecked, Family, FitResult,
    OptimOptions,
};
use crate::mla::JointModelSpec;
use nalgebra::DMatrix;

pub fn fit_pl(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
) -> Result<FitResult> {
    let counts = confusion_counts(frame)?;
    // per-row frozen log-weights for the latent value v in {0, 1}
    let (lw_w1, lw_w0): ([f64; 2], [f64; 2]) = match spec.case {
        ProxyPosition::Iv => {
            let ppv = counts.ppv()?;
            let npv = counts.npv()?;
            // observed w = 1: P(X=v|W=1); observed w = 0: P(X=v|W=0)
            ([(1.0 - ppv).ln(), ppv.ln()], [npv.ln(), (1.0 - npv).ln()])
        }
        ProxyPosition::Dv => {
            let fpr = counts.fpr()?;
            let fnr = counts.fnr()?;
            // observed w = 1: P(W=1|Y=v); observed w = 0: P(W=0|Y=v)
            ([fpr.ln(), (1.0 - fnr).ln()], [(1.0 - fpr).ln(), fnr.ln()])
        }
    };

    let gaussian = spec.main_family == Family::GaussianIdentity;
    let latent = spec.latent();
    let surrogate = frame.dense_column(spec.surrogate())?;
    let latent_col = frame.latent_column().expect("proxied frame");

    // dense main-model pieces: response (0 where it is the latent), fixed
    // covariate columns, and the slot of the latent coefficient
    let n = frame.n_rows();
    let response: Vec<f64> = match spec.case {
        ProxyPosition::Iv => frame.dense_column(&spec.main.response)?,
        ProxyPosition::Dv => latent_col.iter().map(|v| v.unwrap_or(0.0)).collect(),
    };
    let latent_vals: Vec<f64> = latent_col.iter().map(|v| v.unwrap_or(0.0)).collect();
    let fixed_cols: Vec<Vec<f64>> = spec
        .main
        .observed_terms()
        .iter()
        .map(|t| frame.dense_column(t))
        .collect::<Result<_>>()?;

    // free-parameter layout: intercept, terms in spec order, then log sigma
    let mut names: Vec<String> = vec!["(Intercept)".into()];
    names.extend(spec.main.terms.iter().cloned());
    if gaussian {
        names.push("log_sigma".into());
    }
    let latent_slot = spec
        .main
        .terms
        .iter()
        .position(|t| t == latent)
        .map(|i| i + 1);

    let eta_fixed = |theta: &[f64], i: usize| -> f64 {
        let mut eta = theta[0];
        let mut col = 0;
        for (j, term) in spec.main.terms.iter().enumerate() {
            if term == latent {
                continue;
            }
            eta += theta[j + 1] * fixed_cols[col][i];
            col += 1;
        }
        eta
    };

    let loglik = |theta: &[f64]| -> f64 {
        let (ln_sigma, inv_sigma) = if gaussian {
            let s = theta[names.len() - 1];
            (s, (-s).exp())
        } else {
            (0.0, 1.0)
        };
        let lat_coef = latent_slot.map_or(0.0, |s| theta[s]);
        let mut total = 0.0;
        for i in 0..n {
            let fixed = eta_fixed(theta, i);
            let lw = if surrogate[i] == 1.0 { lw_w1 } else { lw_w0 };
            let kernel = |v: f64| -> f64 {
                match spec.case {
                    ProxyPosition::Iv => {
                        let mu = fixed + lat_coef * v;
                        if gaussian {
                            gaussian_logdensity_unchecked(response[i], mu, ln_sigma, inv_sigma)
                        } else {
                            bernoulli_logit_logprob(mu, response[i])
                        }
                    }
                    ProxyPosition::Dv => bernoulli_logit_logprob(fixed, v),
                }
            };
            let contribution = if frame.annotated_mask[i] {
                let v = latent_vals[i];
                kernel(v) + lw[v as usize]
            } else {
                log_sum_exp2(kernel(0.0) + lw[0], kernel(1.0) + lw[1])
            };
            total += contribution;
        }
        total
    };

    // start from the feasible fit; fall back to zeros when it fails
    let mut theta0 = vec![0.0; names.len()];
    if let Ok(seed_fit) = fit_glm(
        &main_design(frame, &frame.annotated_rows(), false)?,
        spec.main_family,
        options,
    ) {
        for (name, est) in seed_fit.term_names.iter().zip(&seed_fit.estimates) {
            if name == "sigma" {
                theta0[names.len() - 1] = est.max(1e-8).ln();
            } else if let Some(k) = names.iter().position(|n| n == name) {
                theta0[k] = *est;
            }
        }
    }
    if !loglik(&theta0).is_finite() {
        theta0 = vec![0.0; names.len()];
    }

    let outcome = maximize(loglik, &theta0, options)?;
    if !outcome.converged {
        return Err(Error::NotConverged(outcome.iterations));
    }

    let info = numeric_hessian(
        |t: &[f64]| -loglik(t),
        &outcome.theta,
        options.fd_step_scale,
    )?;
    let vcov = info
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| singular(&info))?;

    let mut est = outcome.theta.clone();
    let mut out_names = names.clone();
    let mut vcov = vcov;
    if gaussian {
        let k = names.len() - 1;
        let sigma = est[k].exp();
        est[k] = sigma;
        out_names[k] = "sigma".into();
        for a in 0..names.len() {
            vcov[(k, a)] *= sigma;
            vcov[(a, k)] *= sigma;
        }
    }

    Ok(FitResult::from_vcov(
        out_names,
        est,
        vcov,
        Some(outcome.value),
        true,
        outcome.iterations,
        n,
    ))
}

fn singular(info: &DMatrix<f64>) -> Error {
    let svd = info.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    Error::SingularInformation {
        condition: if smin > 0.0 {
            smax / smin
        } else {
            f64::INFINITY
        },
    }
}

#[inline(always)]
fn log_sum_exp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
