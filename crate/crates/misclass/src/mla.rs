//! Joint maximum-likelihood correction for a misclassified binary variable.
//!
//! The joint model multiplies, per row, the main model of scientific
//! interest, an error model for the classifier output given the truth, and
//! (when the truth is a covariate) an exposure model for the truth itself.
//! On rows where the truth was annotated all three factors are evaluated
//! directly; elsewhere the latent value is summed out over {0, 1} in log
//! space. Maximizing the total gives consistent estimates of every block at
//! once, and the inverse observed information at the optimum provides Wald
//! intervals that carry the uncertainty of all blocks.
//!
//! Row sums use a fixed 4096-row chunking with an in-order pairwise fold, so
//! parallel and sequential evaluation produce bitwise-identical totals.

use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::formula::{ModelSpec, ProxyPosition};
use crate::glm::optim::{maximize, numeric_gradient, numeric_hessian};
use crate::glm::{
    bernoulli_logit_logprob, fit_glm, gaussian_logdensity_unchecked, Design, Family, FitResult,
    OptimOptions,
};
use nalgebra::DMatrix;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows per summation chunk; fixed so parallel evaluation is reproducible.
const ROW_CHUNK: usize = 4096;

/// Main model plus the error and exposure models that complete the joint
/// likelihood.
#[derive(Debug, Clone)]
pub struct JointModelSpec {
    pub main: ModelSpec,
    pub error_model_terms: Vec<String>,
    pub exposure_model_terms: Vec<String>,
    pub case: ProxyPosition,
    pub main_family: Family,
}

impl JointModelSpec {
    /// Default joint model for a proxied formula: the error model conditions
    /// on the truth, the outcome, and every covariate; the exposure model
    /// (IV case only) uses the observed covariates.
    pub fn from_model(main: ModelSpec, main_family: Family) -> Result<JointModelSpec> {
        let Some(proxy) = main.proxy.clone() else {
            return Err(Error::UnsupportedModel(
                "joint estimation needs a `||` proxy binding in the formula".into(),
            ));
        };
        let case = proxy.position;
        if case == ProxyPosition::Dv && main_family != Family::BernoulliLogit {
            return Err(Error::UnsupportedModel(
                "a proxied response must use the binomial family".into(),
            ));
        }
        let (error_model_terms, exposure_model_terms) = match case {
            ProxyPosition::Iv => {
                let mut err = vec![proxy.latent.clone(), main.response.clone()];
                err.extend(main.observed_terms().iter().map(|s| s.to_string()));
                let exp = main
                    .observed_terms()
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                (err, exp)
            }
            ProxyPosition::Dv => {
                let mut err = vec![main.response.clone()];
                err.extend(main.terms.iter().cloned());
                (err, Vec::new())
            }
        };
        Ok(JointModelSpec {
            main,
            error_model_terms,
            exposure_model_terms,
            case,
            main_family,
        })
    }

    /// Replace the error-model terms; the latent variable must stay in.
    pub fn with_error_terms(mut self, terms: Vec<String>) -> Result<JointModelSpec> {
        let latent = self.latent().to_string();
        if !terms.contains(&latent) {
            return Err(Error::UnsupportedModel(format!(
                "error model must condition on the latent variable `{latent}`"
            )));
        }
        self.error_model_terms = terms;
        Ok(self)
    }

    /// Replace the exposure-model terms (IV case only; may be empty for an
    /// intercept-only exposure model).
    pub fn with_exposure_terms(mut self, terms: Vec<String>) -> Result<JointModelSpec> {
        if self.case == ProxyPosition::Dv {
            return Err(Error::UnsupportedModel(
                "a proxied response has no exposure model".into(),
            ));
        }
        if terms.iter().any(|t| t == self.latent()) {
            return Err(Error::UnsupportedModel(
                "exposure model cannot condition on the latent variable".into(),
            ));
        }
        self.exposure_model_terms = terms;
        Ok(self)
    }

    pub fn latent(&self) -> &str {
        self.main
            .latent()
            .expect("constructed from a proxied formula")
    }

    pub fn surrogate(&self) -> &str {
        &self.main.proxy.as_ref().expect("proxied").surrogate
    }
}

/// Drop the terms that model systematic (differential) misclassification:
/// the outcome leaves the IV-case error model, the covariates leave the
/// DV-case error model. Used for the misspecification robustness preset and
/// as the restricted model of the systematic-error diagnostic.
pub fn nondifferential_variant(spec: &JointModelSpec) -> JointModelSpec {
    let mut out = spec.clone();
    match spec.case {
        ProxyPosition::Iv => {
            out.error_model_terms.retain(|t| t != &spec.main.response);
        }
        ProxyPosition::Dv => {
            let latent = spec.latent().to_string();
            out.error_model_terms.retain(|t| t == &latent);
        }
    }
    out
}

/// Which sub-model a packed parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Main,
    Error,
    Exposure,
}

/// Packed parameter vector with a (block, term) -> position bijection.
///
/// Layout: main intercept and coefficients (plus `log_sigma` for a Gaussian
/// main model), then the error-model block, then the exposure block.
#[derive(Debug, Clone)]
pub struct ThetaVector {
    pub values: Vec<f64>,
    entries: Vec<(Block, String)>,
}

impl ThetaVector {
    pub fn zeros(spec: &JointModelSpec) -> ThetaVector {
        let mut entries = Vec::new();
        entries.push((Block::Main, "(Intercept)".to_string()));
        for t in &spec.main.terms {
            entries.push((Block::Main, t.clone()));
        }
        if spec.main_family == Family::GaussianIdentity {
            entries.push((Block::Main, "log_sigma".to_string()));
        }
        entries.push((Block::Error, "(Intercept)".to_string()));
        for t in &spec.error_model_terms {
            entries.push((Block::Error, t.clone()));
        }
        if spec.case == ProxyPosition::Iv {
            entries.push((Block::Exposure, "(Intercept)".to_string()));
            for t in &spec.exposure_model_terms {
                entries.push((Block::Exposure, t.clone()));
            }
        }
        ThetaVector {
            values: vec![0.0; entries.len()],
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, block: Block, term: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|(b, t)| *b == block && t == term)
    }

    pub fn set(&mut self, block: Block, term: &str, value: f64) {
        let i = self
            .position(block, term)
            .unwrap_or_else(|| panic!("no slot for {block:?}/{term}"));
        self.values[i] = value;
    }

    pub fn block_positions(&self, block: Block) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].0 == block)
            .collect()
    }

    pub fn block_names(&self, block: Block) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(b, _)| *b == block)
            .map(|(_, t)| t.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum ColSource {
    Intercept,
    Fixed(usize),
    Latent,
}

#[derive(Debug)]
struct SubModel {
    srcs: Vec<ColSource>,
    positions: Vec<usize>,
}

/// Evaluation context binding a frame to a joint model: dense columns, the
/// annotation mask, and the packed-parameter layout.
pub struct JointLikelihood<'a> {
    spec: &'a JointModelSpec,
    n: usize,
    annotated: Vec<bool>,
    latent: Vec<f64>,
    response: Vec<f64>,
    surrogate: Vec<f64>,
    cols: Vec<Vec<f64>>,
    main: SubModel,
    error: SubModel,
    exposure: Option<SubModel>,
    log_sigma_pos: Option<usize>,
    layout: ThetaVector,
}

impl<'a> JointLikelihood<'a> {
    pub fn new(frame: &AnalysisFrame, spec: &'a JointModelSpec) -> Result<JointLikelihood<'a>> {
        let latent_name = spec.latent().to_string();
        let n = frame.n_rows();

        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut col_names: Vec<String> = Vec::new();
        let mut fixed = |name: &str, frame: &AnalysisFrame| -> Result<usize> {
            if let Some(i) = col_names.iter().position(|c| c == name) {
                return Ok(i);
            }
            let col = frame.dense_column(name)?;
            col_names.push(name.to_string());
            cols.push(col);
            Ok(cols.len() - 1)
        };

        let layout = ThetaVector::zeros(spec);

        let sub = |terms: &[String],
                   block: Block,
                   frame: &AnalysisFrame,
                   fixed: &mut dyn FnMut(&str, &AnalysisFrame) -> Result<usize>|
         -> Result<SubModel> {
            let mut srcs = vec![ColSource::Intercept];
            let mut positions = vec![layout
                .position(block, "(Intercept)")
                .expect("intercept slot")];
            for t in terms {
                let src = if *t == latent_name {
                    ColSource::Latent
                } else {
                    ColSource::Fixed(fixed(t, frame)?)
                };
                srcs.push(src);
                positions.push(layout.position(block, t).expect("term slot"));
            }
            Ok(SubModel { srcs, positions })
        };

        let main = sub(&spec.main.terms, Block::Main, frame, &mut fixed)?;
        let error = sub(&spec.error_model_terms, Block::Error, frame, &mut fixed)?;
        let exposure = match spec.case {
            ProxyPosition::Iv => Some(sub(
                &spec.exposure_model_terms,
                Block::Exposure,
                frame,
                &mut fixed,
            )?),
            ProxyPosition::Dv => None,
        };

        let latent_col = frame
            .latent_column()
            .ok_or_else(|| Error::MissingColumn(latent_name.clone()))?;
        let latent: Vec<f64> = latent_col.iter().map(|v| v.unwrap_or(0.0)).collect();

        let response = match spec.case {
            ProxyPosition::Iv => frame.dense_column(&spec.main.response)?,
            // response is the latent variable itself; enumerated when missing
            ProxyPosition::Dv => latent.clone(),
        };
        let surrogate = frame.dense_column(spec.surrogate())?;

        Ok(JointLikelihood {
            spec,
            n,
            annotated: frame.annotated_mask.clone(),
            latent,
            response,
            surrogate,
            cols,
            main,
            error,
            exposure,
            log_sigma_pos: layout.position(Block::Main, "log_sigma"),
            layout,
        })
    }

    /// Packed-parameter layout for this model (all zeros).
    pub fn theta_layout(&self) -> ThetaVector {
        self.layout.clone()
    }

    fn prepare(&self, model: &SubModel, theta: &[f64]) -> PreparedModel<'_> {
        let mut base = 0.0;
        let mut lat_coef = 0.0;
        let mut fixed: Vec<(f64, &[f64])> = Vec::with_capacity(model.srcs.len());
        for (src, &pos) in model.srcs.iter().zip(&model.positions) {
            match src {
                ColSource::Intercept => base += theta[pos],
                ColSource::Latent => lat_coef += theta[pos],
                ColSource::Fixed(c) => fixed.push((theta[pos], &self.cols[*c])),
            }
        }
        PreparedModel {
            base,
            lat_coef,
            fixed,
        }
    }

    /// Total log-likelihood; `-inf` when any row contribution is not finite.
    pub fn loglik(&self, theta: &[f64]) -> f64 {
        debug_assert_eq!(theta.len(), self.layout.len());
        let main = self.prepare(&self.main, theta);
        let error = self.prepare(&self.error, theta);
        let exposure = self.exposure.as_ref().map(|m| self.prepare(m, theta));
        let (ln_sigma, inv_sigma) = match self.log_sigma_pos {
            Some(p) => {
                let s = theta[p];
                (s, (-s).exp())
            }
            None => (0.0, 1.0),
        };

        let chunk_sums = self.chunk_sums(&main, &error, exposure.as_ref(), ln_sigma, inv_sigma);
        pairwise_fold(&chunk_sums)
    }

    /// Like [`Self::loglik`] but locates the first non-finite row.
    pub fn loglik_checked(&self, theta: &[f64]) -> Result<f64> {
        let total = self.loglik(theta);
        if total.is_finite() {
            return Ok(total);
        }
        let main = self.prepare(&self.main, theta);
        let error = self.prepare(&self.error, theta);
        let exposure = self.exposure.as_ref().map(|m| self.prepare(m, theta));
        let (ln_sigma, inv_sigma) = match self.log_sigma_pos {
            Some(p) => (theta[p], (-theta[p]).exp()),
            None => (0.0, 1.0),
        };
        for i in 0..self.n {
            let c = self.row_contribution(i, &main, &error, exposure.as_ref(), ln_sigma, inv_sigma);
            if !c.is_finite() {
                return Err(Error::NonFiniteLikelihood { row: i + 1 });
            }
        }
        Err(Error::NonFiniteLikelihood { row: 0 })
    }

    #[cfg(feature = "parallel")]
    fn chunk_sums(
        &self,
        main: &PreparedModel<'_>,
        error: &PreparedModel<'_>,
        exposure: Option<&PreparedModel<'_>>,
        ln_sigma: f64,
        inv_sigma: f64,
    ) -> Vec<f64> {
        let n_chunks = self.n.div_ceil(ROW_CHUNK);
        if self.n >= 2 * ROW_CHUNK {
            (0..n_chunks)
                .into_par_iter()
                .map(|c| self.sum_chunk(c, main, error, exposure, ln_sigma, inv_sigma))
                .collect()
        } else {
            (0..n_chunks)
                .map(|c| self.sum_chunk(c, main, error, exposure, ln_sigma, inv_sigma))
                .collect()
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn chunk_sums(
        &self,
        main: &PreparedModel<'_>,
        error: &PreparedModel<'_>,
        exposure: Option<&PreparedModel<'_>>,
        ln_sigma: f64,
        inv_sigma: f64,
    ) -> Vec<f64> {
        let n_chunks = self.n.div_ceil(ROW_CHUNK);
        (0..n_chunks)
            .map(|c| self.sum_chunk(c, main, error, exposure, ln_sigma, inv_sigma))
            .collect()
    }

    fn sum_chunk(
        &self,
        chunk: usize,
        main: &PreparedModel<'_>,
        error: &PreparedModel<'_>,
        exposure: Option<&PreparedModel<'_>>,
        ln_sigma: f64,
        inv_sigma: f64,
    ) -> f64 {
        let lo = chunk * ROW_CHUNK;
        let hi = (lo + ROW_CHUNK).min(self.n);
        let mut total = 0.0;
        for i in lo..hi {
            total += self.row_contribution(i, main, error, exposure, ln_sigma, inv_sigma);
        }
        total
    }

    #[inline(always)]
    fn row_contribution(
        &self,
        i: usize,
        main: &PreparedModel<'_>,
        error: &PreparedModel<'_>,
        exposure: Option<&PreparedModel<'_>>,
        ln_sigma: f64,
        inv_sigma: f64,
    ) -> f64 {
        let main_fixed = main.eta_fixed(i);
        let error_fixed = error.eta_fixed(i);
        let exposure_eta = exposure.map(|m| m.eta_fixed(i));
        let w = self.surrogate[i];

        let branch = |v: f64| -> f64 {
            let mut ll = match self.spec.case {
                ProxyPosition::Iv => {
                    let mu = main_fixed + main.lat_coef * v;
                    match self.spec.main_family {
                        Family::GaussianIdentity => {
                            gaussian_logdensity_unchecked(self.response[i], mu, ln_sigma, inv_sigma)
                        }
                        Family::BernoulliLogit => bernoulli_logit_logprob(mu, self.response[i]),
                    }
                }
                // the response is the enumerated value itself
                ProxyPosition::Dv => bernoulli_logit_logprob(main_fixed, v),
            };
            ll += bernoulli_logit_logprob(error_fixed + error.lat_coef * v, w);
            if let Some(eta) = exposure_eta {
                ll += bernoulli_logit_logprob(eta, v);
            }
            ll
        };

        if self.annotated[i] {
            branch(self.latent[i])
        } else {
            log_sum_exp2(branch(0.0), branch(1.0))
        }
    }
}

struct PreparedModel<'a> {
    base: f64,
    lat_coef: f64,
    fixed: Vec<(f64, &'a [f64])>,
}

impl PreparedModel<'_> {
    #[inline(always)]
    fn eta_fixed(&self, i: usize) -> f64 {
        let mut eta = self.base;
        for (coef, col) in &self.fixed {
            eta += coef * col[i];
        }
        eta
    }
}

/// `log(exp(a) + exp(b))`, tolerating `-inf` branches.
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

/// In-order pairwise fold; the reduction tree depends only on the length.
fn pairwise_fold(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            pairwise_fold(&values[..mid]) + pairwise_fold(&values[mid..])
        }
    }
}

/// IV-case joint log-likelihood at `theta`.
pub fn joint_loglik_iv(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    theta: &ThetaVector,
) -> Result<f64> {
    if spec.case != ProxyPosition::Iv {
        return Err(Error::UnsupportedModel(
            "joint_loglik_iv needs a proxied covariate".into(),
        ));
    }
    JointLikelihood::new(frame, spec)?.loglik_checked(&theta.values)
}

/// DV-case joint log-likelihood at `theta`.
pub fn joint_loglik_dv(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    theta: &ThetaVector,
) -> Result<f64> {
    if spec.case != ProxyPosition::Dv {
        return Err(Error::UnsupportedModel(
            "joint_loglik_dv needs a proxied response".into(),
        ));
    }
    JointLikelihood::new(frame, spec)?.loglik_checked(&theta.values)
}

/// Joint fit: the main-model result plus the error and exposure blocks.
#[derive(Debug, Clone)]
pub struct MlaFit {
    pub main: FitResult,
    pub error_model: FitResult,
    pub exposure_model: Option<FitResult>,
    pub joint_log_likelihood: f64,
}

/// Observed-information Wald fit of the joint model.
///
/// Starts from per-block GLM fits on the annotated subset, maximizes the
/// joint log-likelihood with BFGS, polishes with Newton steps off the
/// central-difference Hessian, and inverts that Hessian for the covariance.
pub fn fit_mla(
    frame: &AnalysisFrame,
    spec: &JointModelSpec,
    options: &OptimOptions,
) -> Result<MlaFit> {
    if frame.n_annotated < 20 {
        return Err(Error::TooFewAnnotations {
            found: frame.n_annotated,
            needed: 20,
        });
    }
    check_both_classes(frame)?;

    let ll = JointLikelihood::new(frame, spec)?;
    let theta0 = initial_theta(frame, spec)?;
    ll.loglik_checked(&theta0.values)?;

    let objective = |t: &[f64]| ll.loglik(t);
    let outcome = maximize(objective, &theta0.values, options)?;
    if !outcome.converged {
        return Err(Error::NotConverged(outcome.iterations));
    }

    let mut theta_hat = outcome.theta;
    let mut value = outcome.value;

    // hessian of the negative log-likelihood = observed information
    let neg = |t: &[f64]| -ll.loglik(t);
    let info = numeric_hessian(neg, &theta_hat, options.fd_step_scale)?;
    let mut decomposition = InfoDecomposition::new(&info)?;

    // Newton polish restricted to the well-curved subspace; a separated
    // error model leaves flat directions where a full Newton step would run
    // off along the plateau
    let mut moved = 0.0f64;
    for _ in 0..5 {
        let grad = numeric_gradient(objective, &theta_hat, options.fd_step_scale)?;
        let step = decomposition.truncated_newton_step(&grad);
        if !step.amax().is_finite() {
            break;
        }
        let trial: Vec<f64> = theta_hat
            .iter()
            .zip(step.iter())
            .map(|(t, s)| t + s)
            .collect();
        let f_trial = ll.loglik(&trial);
        if f_trial.is_finite() && f_trial >= value {
            moved = moved.max(step.amax());
            theta_hat = trial;
            value = f_trial;
        } else {
            break;
        }
        if step.amax() < 1e-10 {
            break;
        }
    }
    if moved > 1e-4 {
        let info = numeric_hessian(neg, &theta_hat, options.fd_step_scale)?;
        decomposition = InfoDecomposition::new(&info)?;
    }
    let vcov = decomposition.vcov();

    let mut theta = ll.theta_layout();
    theta.values = theta_hat;
    split_fit(
        &theta,
        &vcov,
        spec,
        value,
        outcome.iterations,
        frame.n_rows(),
    )
}

fn check_both_classes(frame: &AnalysisFrame) -> Result<()> {
    let Some(latent) = frame.latent_column() else {
        return Ok(());
    };
    let mut seen0 = false;
    let mut seen1 = false;
    for v in latent.iter().flatten() {
        if *v == 0.0 {
            seen0 = true;
        } else {
            seen1 = true;
        }
    }
    if seen0 && seen1 {
        Ok(())
    } else {
        Err(Error::OneClassAnnotated)
    }
}

/// Eigendecomposition of the observed information.
///
/// Eigenvalues that are numerically zero (a flat likelihood direction, e.g.
/// a separated error model) are tolerated: the covariance clamps them to a
/// small floor — very wide intervals on those coordinates — and Newton
/// polish steps project them out entirely. Genuinely negative curvature,
/// meaning the point is not a maximum, is an error.
struct InfoDecomposition {
    eigenvalues: nalgebra::DVector<f64>,
    eigenvectors: DMatrix<f64>,
    max_eig: f64,
}

impl InfoDecomposition {
    fn new(info: &DMatrix<f64>) -> Result<InfoDecomposition> {
        let eigen = info.clone().symmetric_eigen();
        let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let min_eig = eigen
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        if !(max_eig.is_finite() && max_eig > 0.0) || min_eig < -1e-4 * max_eig {
            return Err(Error::SingularInformation {
                condition: if min_eig > 0.0 {
                    max_eig / min_eig
                } else {
                    f64::INFINITY
                },
            });
        }
        Ok(InfoDecomposition {
            eigenvalues: eigen.eigenvalues,
            eigenvectors: eigen.eigenvectors,
            max_eig,
        })
    }

    fn vcov(&self) -> DMatrix<f64> {
        let p = self.eigenvalues.len();
        let floor = 1e-10 * self.max_eig;
        let mut inv = DMatrix::zeros(p, p);
        for k in 0..p {
            let lambda = self.eigenvalues[k].max(floor);
            let v = self.eigenvectors.column(k);
            for a in 0..p {
                for b in 0..p {
                    inv[(a, b)] += v[a] * v[b] / lambda;
                }
            }
        }
        inv
    }

    /// Newton step using only directions with healthy curvature.
    fn truncated_newton_step(&self, grad: &[f64]) -> nalgebra::DVector<f64> {
        let p = self.eigenvalues.len();
        let g = nalgebra::DVector::from_column_slice(grad);
        let cutoff = 1e-8 * self.max_eig;
        let mut step = nalgebra::DVector::zeros(p);
        for k in 0..p {
            let lambda = self.eigenvalues[k];
            if lambda > cutoff {
                let v = self.eigenvectors.column(k);
                step += v * (v.dot(&g) / lambda);
            }
        }
        step
    }
}

/// Component fits on the annotated subset concatenated into a starting
/// vector; blocks that fail to fit start at zero.
fn initial_theta(frame: &AnalysisFrame, spec: &JointModelSpec) -> Result<ThetaVector> {
    let mut theta = ThetaVector::zeros(spec);
    let glm_opts = OptimOptions::default();
    let rows = frame.annotated_rows();
    let latent_name = spec.latent();

    let gather = |name: &str| -> Result<Vec<f64>> {
        if name == latent_name {
            let col = frame.latent_column().expect("latent column exists");
            Ok(rows.iter().map(|&i| col[i].unwrap_or(0.0)).collect())
        } else {
            let col = frame.dense_column(name)?;
            Ok(rows.iter().map(|&i| col[i]).collect())
        }
    };

    let seed_block = |block: Block,
                      response: Vec<f64>,
                      terms: &[String],
                      family: Family,
                      theta: &mut ThetaVector|
     -> Result<()> {
        let cols: Vec<Vec<f64>> = terms.iter().map(|t| gather(t)).collect::<Result<_>>()?;
        let named: Vec<(&str, &[f64])> = terms
            .iter()
            .zip(&cols)
            .map(|(t, c)| (t.as_str(), c.as_slice()))
            .collect();
        let design = Design::with_intercept(&named, &response);
        match fit_glm(&design, family, &glm_opts) {
            Ok(fit) => {
                for (name, est) in fit.term_names.iter().zip(&fit.estimates) {
                    if name == "sigma" {
                        theta.set(block, "log_sigma", est.max(1e-8).ln());
                    } else {
                        theta.set(block, name, *est);
                    }
                }
            }
            Err(_) => {
                // leave the block at zero; keep a sane scale for the outcome
                if block == Block::Main && family == Family::GaussianIdentity {
                    let sd = sample_sd(&response).max(1e-4);
                    theta.set(block, "log_sigma", sd.ln());
                }
            }
        }
        Ok(())
    };

    seed_block(
        Block::Main,
        gather(&spec.main.response)?,
        &spec.main.terms,
        spec.main_family,
        &mut theta,
    )?;
    seed_block(
        Block::Error,
        gather(spec.surrogate())?,
        &spec.error_model_terms,
        Family::BernoulliLogit,
        &mut theta,
    )?;
    if spec.case == ProxyPosition::Iv {
        seed_block(
            Block::Exposure,
            gather(latent_name)?,
            &spec.exposure_model_terms.clone(),
            Family::BernoulliLogit,
            &mut theta,
        )?;
    }
    Ok(theta)
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Slice the packed estimate and covariance into per-block fit results,
/// mapping `log_sigma` back to the natural scale by the delta method.
fn split_fit(
    theta: &ThetaVector,
    vcov: &DMatrix<f64>,
    spec: &JointModelSpec,
    joint_ll: f64,
    iterations: usize,
    n_obs: usize,
) -> Result<MlaFit> {
    let block_fit = |block: Block, loglik: Option<f64>| -> FitResult {
        let pos = theta.block_positions(block);
        let mut names = theta.block_names(block);
        let mut est: Vec<f64> = pos.iter().map(|&i| theta.values[i]).collect();
        let mut sub = DMatrix::zeros(pos.len(), pos.len());
        for (a, &i) in pos.iter().enumerate() {
            for (b, &j) in pos.iter().enumerate() {
                sub[(a, b)] = vcov[(i, j)];
            }
        }
        // natural-scale sigma via the delta method on the log-sigma slot
        if let Some(k) = names.iter().position(|n| n == "log_sigma") {
            let sigma = est[k].exp();
            names[k] = "sigma".to_string();
            est[k] = sigma;
            for a in 0..pos.len() {
                sub[(k, a)] *= sigma;
                sub[(a, k)] *= sigma;
            }
        }
        FitResult::from_vcov(names, est, sub, loglik, true, iterations, n_obs)
    };

    let main = block_fit(Block::Main, Some(joint_ll));
    let error_model = block_fit(Block::Error, None);
    let exposure_model = match spec.case {
        ProxyPosition::Iv => Some(block_fit(Block::Exposure, None)),
        ProxyPosition::Dv => None,
    };
    Ok(MlaFit {
        main,
        error_model,
        exposure_model,
        joint_log_likelihood: joint_ll,
    })
}
