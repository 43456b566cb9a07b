//! Probability kernels, GLM fitting, and the shared fit-result type.
//!
//! Two families are supported: Gaussian with identity link (fit by least
//! squares) and Bernoulli with logit link (fit by iteratively reweighted
//! least squares). Wald intervals come from the inverse observed information
//! at the maximum; the 95% multiplier is pinned to 1.959964.

pub mod optim;

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Normal quantile for two-sided 95% intervals.
pub const WALD_95: f64 = 1.959964;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Distribution of the response in the main model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    GaussianIdentity,
    BernoulliLogit,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::GaussianIdentity => "gaussian",
            Family::BernoulliLogit => "binomial",
        }
    }
}

/// Tolerances and step sizes shared by the fitting routines.
#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub rel_tolerance: f64,
    pub max_iterations: usize,
    pub fd_step_scale: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            rel_tolerance: 1e-8,
            max_iterations: 500,
            fd_step_scale: f64::EPSILON.cbrt(),
        }
    }
}

/// Coefficient estimates with Wald inference, uniform across estimators.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub term_names: Vec<String>,
    pub estimates: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub log_likelihood: Option<f64>,
    #[serde(skip)]
    pub vcov: DMatrix<f64>,
    pub converged: bool,
    pub n_iterations: usize,
    pub n_obs_used: usize,
}

impl FitResult {
    /// Assemble a result from estimates and their covariance, deriving
    /// standard errors and 95% intervals from the diagonal.
    pub fn from_vcov(
        term_names: Vec<String>,
        estimates: Vec<f64>,
        vcov: DMatrix<f64>,
        log_likelihood: Option<f64>,
        converged: bool,
        n_iterations: usize,
        n_obs_used: usize,
    ) -> FitResult {
        debug_assert_eq!(term_names.len(), estimates.len());
        debug_assert_eq!(vcov.nrows(), estimates.len());
        let std_errors: Vec<f64> = (0..estimates.len())
            .map(|i| vcov[(i, i)].max(0.0).sqrt())
            .collect();
        let ci_low: Vec<f64> = estimates
            .iter()
            .zip(&std_errors)
            .map(|(e, s)| e - WALD_95 * s)
            .collect();
        let ci_high: Vec<f64> = estimates
            .iter()
            .zip(&std_errors)
            .map(|(e, s)| e + WALD_95 * s)
            .collect();
        FitResult {
            term_names,
            estimates,
            std_errors,
            ci_low,
            ci_high,
            log_likelihood,
            vcov,
            converged,
            n_iterations,
            n_obs_used,
        }
    }

    pub fn estimate_for(&self, term: &str) -> Option<f64> {
        self.term_names
            .iter()
            .position(|t| t == term)
            .map(|i| self.estimates[i])
    }
}

/// Log-density of the normal distribution at `y`.
pub fn gaussian_logdensity(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    // rejects NaN as well as non-positive values
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::NonPositiveSigma(sigma));
    }
    Ok(gaussian_logdensity_unchecked(
        y,
        mu,
        sigma.ln(),
        1.0 / sigma,
    ))
}

/// Hot-path variant taking precomputed `ln(sigma)` and `1/sigma`.
#[inline(always)]
pub(crate) fn gaussian_logdensity_unchecked(y: f64, mu: f64, ln_sigma: f64, inv_sigma: f64) -> f64 {
    let u = (y - mu) * inv_sigma;
    -ln_sigma - 0.5 * LN_2PI - 0.5 * u * u
}

/// `log(1 + e^x)` without overflow.
#[inline(always)]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-probability of a Bernoulli outcome under a logit link:
/// `y*log(sigmoid(eta)) + (1-y)*log(1-sigmoid(eta))`, stable for any eta.
#[inline(always)]
pub fn bernoulli_logit_logprob(eta: f64, y: f64) -> f64 {
    debug_assert!(y == 0.0 || y == 1.0);
    if y == 1.0 {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

/// Logistic function, stable on both tails.
#[inline(always)]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A named design matrix plus response, the unit every fit consumes.
#[derive(Debug, Clone)]
pub struct Design {
    pub names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Design {
    /// Intercept column plus one column per `(name, values)` pair.
    pub fn with_intercept(terms: &[(&str, &[f64])], y: &[f64]) -> Design {
        let n = y.len();
        let p = terms.len() + 1;
        let mut x = DMatrix::zeros(n, p);
        let mut names = Vec::with_capacity(p);
        names.push("(Intercept)".to_string());
        for i in 0..n {
            x[(i, 0)] = 1.0;
        }
        for (j, (name, col)) in terms.iter().enumerate() {
            assert_eq!(col.len(), n, "column `{name}` length mismatch");
            names.push(name.to_string());
            for i in 0..n {
                x[(i, j + 1)] = col[i];
            }
        }
        Design {
            names,
            x,
            y: DVector::from_column_slice(y),
        }
    }
}

fn check_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    if x.nrows() <= p {
        return Err(Error::RankDeficient {
            rank: x.nrows().min(p),
            cols: p,
        });
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let scale = r[(0, 0)].abs().max(f64::MIN_POSITIVE);
    let rank = (0..p).filter(|&i| r[(i, i)].abs() > 1e-10 * scale).count();
    if rank < p {
        return Err(Error::RankDeficient { rank, cols: p });
    }
    Ok(())
}

/// Maximum-likelihood GLM fit.
///
/// Gaussian fits solve least squares and report the scale as an extra
/// `sigma` term (natural scale, delta-method standard error from log-sigma).
/// Logistic fits run IRLS from zero and flag separation when any coefficient
/// passes 30 in absolute value.
pub fn fit_glm(design: &Design, family: Family, options: &OptimOptions) -> Result<FitResult> {
    match family {
        Family::GaussianIdentity => fit_gaussian(design),
        Family::BernoulliLogit => fit_logit(design, options),
    }
}

fn fit_gaussian(design: &Design) -> Result<FitResult> {
    check_rank(&design.x)?;
    let n = design.x.nrows();
    let p = design.x.ncols();

    let xtx = design.x.transpose() * &design.x;
    let xty = design.x.transpose() * &design.y;
    let chol = xtx.cholesky().ok_or(Error::RankDeficient {
        rank: p - 1,
        cols: p,
    })?;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();

    let resid = &design.y - &design.x * &beta;
    let rss: f64 = resid.iter().map(|r| r * r).sum();
    // ML scale estimate; floored so exact fits stay finite
    let sigma2 = (rss / n as f64).max(1e-24);
    let sigma = sigma2.sqrt();

    let mut names = design.names.clone();
    names.push("sigma".to_string());
    let mut estimates: Vec<f64> = beta.iter().copied().collect();
    estimates.push(sigma);

    let mut vcov = DMatrix::zeros(p + 1, p + 1);
    vcov.view_mut((0, 0), (p, p))
        .copy_from(&(&xtx_inv * sigma2));
    // Var(log sigma) = 1/(2n) at the MLE; delta method to the natural scale
    vcov[(p, p)] = sigma2 / (2.0 * n as f64);

    let loglik = -0.5 * n as f64 * (LN_2PI + 1.0) - n as f64 * sigma.ln();
    Ok(FitResult::from_vcov(
        names,
        estimates,
        vcov,
        Some(loglik),
        true,
        1,
        n,
    ))
}

fn fit_logit(design: &Design, options: &OptimOptions) -> Result<FitResult> {
    check_rank(&design.x)?;
    let n = design.x.nrows();
    let p = design.x.ncols();
    for (i, y) in design.y.iter().enumerate() {
        if *y != 0.0 && *y != 1.0 {
            return Err(Error::NonBinaryLatent {
                column: "response".to_string(),
                row: i + 1,
                value: *y,
            });
        }
    }

    let mut beta = DVector::zeros(p);
    let mut loglik = logit_loglik(&design.x, &design.y, &beta);
    let mut iterations = 0;
    let mut converged = false;
    let mut info = DMatrix::zeros(p, p);

    while iterations < options.max_iterations {
        iterations += 1;
        let eta = &design.x * &beta;
        let mut score = DVector::zeros(p);
        info.fill(0.0);
        for i in 0..n {
            let mu = expit(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = design.y[i] - mu;
            for j in 0..p {
                let xij = design.x[(i, j)];
                score[j] += xij * r;
                for k in j..p {
                    info[(j, k)] += xij * design.x[(i, k)] * w;
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(j, k)] = info[(k, j)];
            }
        }
        let chol = info.clone().cholesky().ok_or(Error::RankDeficient {
            rank: p - 1,
            cols: p,
        })?;
        let delta = chol.solve(&score);

        // step-halving keeps the likelihood non-decreasing
        let mut step = 1.0;
        let mut new_beta;
        let mut new_loglik;
        loop {
            new_beta = &beta + &delta * step;
            new_loglik = logit_loglik(&design.x, &design.y, &new_beta);
            if new_loglik.is_finite() && new_loglik >= loglik - 1e-10 {
                break;
            }
            step *= 0.5;
            if step < 1e-8 {
                new_beta = beta.clone();
                new_loglik = loglik;
                break;
            }
        }

        let improved = new_loglik - loglik;
        beta = new_beta;
        loglik = new_loglik;

        if let Some((j, value)) = beta
            .iter()
            .enumerate()
            .map(|(j, b)| (j, *b))
            .find(|(_, b)| b.abs() > 30.0)
        {
            return Err(Error::Separation {
                term: design.names[j].clone(),
                value,
            });
        }

        if improved.abs() < options.rel_tolerance * (1.0 + loglik.abs()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged(options.max_iterations));
    }

    let vcov = info
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient {
            rank: p - 1,
            cols: p,
        })?
        .inverse();

    Ok(FitResult::from_vcov(
        design.names.clone(),
        beta.iter().copied().collect(),
        vcov,
        Some(loglik),
        true,
        iterations,
        n,
    ))
}

fn logit_loglik(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = x * beta;
    (0..x.nrows())
        .map(|i| bernoulli_logit_logprob(eta[i], y[i]))
        .sum()
}
