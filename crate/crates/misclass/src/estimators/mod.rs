//! The six estimators behind one interface, plus the systematic-error
//! diagnostic.
//!
//! Every estimator consumes an [`AnalysisFrame`] and returns a [`FitResult`]
//! with identical term ordering for the same model, so study code can treat
//! them interchangeably:
//!
//! * naive — surrogate substituted for the truth, all rows;
//! * feasible — annotated rows only, truth as recorded;
//! * mla — joint maximum likelihood (see [`crate::mla`]);
//! * pl — pseudo-likelihood with confusion-matrix rates frozen as constants;
//! * gmm — regression calibration combined with the feasible fit;
//! * mi — multiple imputation pooled by Rubin's rules.

mod diagnose;
mod gmm;
mod mi;
mod pl;

pub use diagnose::{diagnose_systematic, DiagnosisResult};
pub use gmm::fit_gmm;
pub use mi::fit_mi;
pub use pl::fit_pl;

use crate::data::AnalysisFrame;
use crate::error::{Error, Result};
use crate::glm::{fit_glm, Design, Family, FitResult, OptimOptions};
use crate::mla::{fit_mla, JointModelSpec};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Naive,
    Feasible,
    Mla,
    Pl,
    Gmm,
    Mi,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Naive,
        EstimatorKind::Feasible,
        EstimatorKind::Mla,
        EstimatorKind::Pl,
        EstimatorKind::Gmm,
        EstimatorKind::Mi,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Feasible => "feasible",
            EstimatorKind::Mla => "mla",
            EstimatorKind::Pl => "pl",
            EstimatorKind::Gmm => "gmm",
            EstimatorKind::Mi => "mi",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<EstimatorKind> {
        match s {
            "naive" => Ok(EstimatorKind::Naive),
            "feasible" => Ok(EstimatorKind::Feasible),
            "mla" => Ok(EstimatorKind::Mla),
            "pl" => Ok(EstimatorKind::Pl),
            "gmm" => Ok(EstimatorKind::Gmm),
            "mi" => Ok(EstimatorKind::Mi),
            other => Err(Error::Usage(format!("unknown estimator `{other}`"))),
        }
    }
}

/// Everything an estimator may need; `seed` only feeds MI's imputation draws.
pub struct FitContext<'a> {
    pub frame: &'a AnalysisFrame,
    pub spec: &'a JointModelSpec,
    pub options: &'a OptimOptions,
    pub mi_imputations: usize,
    pub seed: u64,
}

/// Run one estimator. Failures are ordinary errors; study code records them
/// instead of aborting.
pub fn fit_estimator(kind: EstimatorKind, ctx: &FitContext<'_>) -> Result<FitResult> {
    match kind {
        EstimatorKind::Naive => fit_naive(ctx.frame, ctx.spec.main_family, ctx.options),
        EstimatorKind::Feasible => fit_feasible(ctx.frame, ctx.spec.main_family, ctx.options),
        EstimatorKind::Mla => fit_mla(ctx.frame, ctx.spec, ctx.options).map(|f| f.main),
        EstimatorKind::Pl => fit_pl(ctx.frame, ctx.spec, ctx.options),
        EstimatorKind::Gmm => fit_gmm(ctx.frame, ctx.spec, ctx.options),
        EstimatorKind::Mi => fit_mi(
            ctx.frame,
            ctx.spec,
            ctx.options,
            ctx.mi_imputations,
            ctx.seed,
        ),
    }
}

/// Cross-tabulation of classifier output against the truth on annotated rows.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConfusionSummary {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub ppv: f64,
    pub npv: f64,
    pub fpr: f64,
    pub fnr: f64,
}

pub(crate) struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn rate(num: usize, den: usize, name: &'static str) -> Result<f64> {
        if den == 0 {
            Err(Error::UndefinedRate(name))
        } else {
            Ok(num as f64 / den as f64)
        }
    }

    pub fn ppv(&self) -> Result<f64> {
        Self::rate(self.tp, self.tp + self.fp, "ppv")
    }
    pub fn npv(&self) -> Result<f64> {
        Self::rate(self.tn, self.tn + self.fn_, "npv")
    }
    pub fn fpr(&self) -> Result<f64> {
        Self::rate(self.fp, self.fp + self.tn, "fpr")
    }
    pub fn fnr(&self) -> Result<f64> {
        Self::rate(self.fn_, self.fn_ + self.tp, "fnr")
    }
}

pub(crate) fn confusion_counts(frame: &AnalysisFrame) -> Result<ConfusionCounts> {
    let Some(proxy) = frame.spec.proxy.as_ref() else {
        return Err(Error::UnsupportedModel(
            "confusion summary needs a `||` proxy binding".into(),
        ));
    };
    let surrogate = frame.dense_column(&proxy.surrogate)?;
    let latent = frame.latent_column().expect("proxied frame has latent");
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..frame.n_rows() {
        let Some(truth) = latent[i] else { continue };
        match (surrogate[i] == 1.0, truth == 1.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionCounts { tp, fp, tn, fn_ })
}

/// Accuracy, predictive values, and error rates on the annotated rows.
pub fn confusion_summary(frame: &AnalysisFrame) -> Result<ConfusionSummary> {
    let c = confusion_counts(frame)?;
    let total = c.tp + c.fp + c.tn + c.fn_;
    Ok(ConfusionSummary {
        tp: c.tp,
        fp: c.fp,
        tn: c.tn,
        fn_: c.fn_,
        accuracy: ConfusionCounts::rate(c.tp + c.tn, total, "accuracy")?,
        ppv: c.ppv()?,
        npv: c.npv()?,
        fpr: c.fpr()?,
        fnr: c.fnr()?,
    })
}

/// Gather a model column over `rows`. The latent column resolves to the
/// surrogate when `surrogate_for_latent` is set, otherwise to the recorded
/// truth (rows must then be annotated).
fn column_values(
    frame: &AnalysisFrame,
    name: &str,
    surrogate_for_latent: bool,
    rows: &[usize],
) -> Result<Vec<f64>> {
    if Some(name) == frame.spec.latent() {
        if surrogate_for_latent {
            let surrogate = &frame
                .spec
                .proxy
                .as_ref()
                .expect("latent implies proxy")
                .surrogate;
            let col = frame.dense_column(surrogate)?;
            return Ok(rows.iter().map(|&i| col[i]).collect());
        }
        let col = frame.latent_column().expect("latent implies proxy");
        return rows
            .iter()
            .map(|&i| {
                col[i].ok_or(Error::IncompleteCovariate {
                    column: name.to_string(),
                    row: i + 1,
                })
            })
            .collect();
    }
    let col = frame.dense_column(name)?;
    Ok(rows.iter().map(|&i| col[i]).collect())
}

/// Main-model design over `rows`; term names always follow the model spec.
pub(crate) fn main_design(
    frame: &AnalysisFrame,
    rows: &[usize],
    surrogate_for_latent: bool,
) -> Result<Design> {
    let spec = &frame.spec;
    let y = column_values(frame, &spec.response, surrogate_for_latent, rows)?;
    let cols: Vec<Vec<f64>> = spec
        .terms
        .iter()
        .map(|t| column_values(frame, t, surrogate_for_latent, rows))
        .collect::<Result<_>>()?;
    let named: Vec<(&str, &[f64])> = spec
        .terms
        .iter()
        .zip(&cols)
        .map(|(t, c)| (t.as_str(), c.as_slice()))
        .collect();
    Ok(Design::with_intercept(&named, &y))
}

/// Substitute the classifier output for the truth and fit on all rows,
/// ignoring misclassification.
pub fn fit_naive(
    frame: &AnalysisFrame,
    family: Family,
    options: &OptimOptions,
) -> Result<FitResult> {
    let rows: Vec<usize> = (0..frame.n_rows()).collect();
    let design = main_design(frame, &rows, true)?;
    fit_glm(&design, family, options)
}

/// Fit on the annotated rows only, using the recorded truth.
pub fn fit_feasible(
    frame: &AnalysisFrame,
    family: Family,
    options: &OptimOptions,
) -> Result<FitResult> {
    let needed = frame.spec.terms.len() + 2;
    if frame.n_annotated <= needed {
        return Err(Error::TooFewAnnotations {
            found: frame.n_annotated,
            needed,
        });
    }
    let rows = frame.annotated_rows();
    let design = main_design(frame, &rows, false)?;
    fit_glm(&design, family, options)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_frame, Dataset};
    use crate::formula::parse_formula;
    use approx::assert_abs_diff_eq;

    pub(super) fn frame_from(formula: &str, cols: &[(&str, Vec<Option<f64>>)]) -> AnalysisFrame {
        let mut ds = Dataset::new();
        for (name, col) in cols {
            ds.push_column(name, col.clone()).unwrap();
        }
        build_frame(ds, parse_formula(formula).unwrap()).unwrap()
    }

    pub(super) fn all(v: Vec<f64>) -> Vec<Option<f64>> {
        v.into_iter().map(Some).collect()
    }

    #[test]
    fn confusion_matches_hand_arithmetic() {
        // tp=40, fp=10, tn=40, fn=10
        let mut x = Vec::new();
        let mut w = Vec::new();
        for _ in 0..40 {
            x.push(Some(1.0));
            w.push(Some(1.0));
        }
        for _ in 0..10 {
            x.push(Some(0.0));
            w.push(Some(1.0));
        }
        for _ in 0..40 {
            x.push(Some(0.0));
            w.push(Some(0.0));
        }
        for _ in 0..10 {
            x.push(Some(1.0));
            w.push(Some(0.0));
        }
        let n = x.len();
        let y = all((0..n).map(|i| i as f64 / n as f64).collect());
        let z = all((0..n).map(|i| (i as f64 - 50.0) / 25.0).collect());
        let frame = frame_from("y ~ x || w + z", &[("y", y), ("w", w), ("z", z), ("x", x)]);
        let c = confusion_summary(&frame).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (40, 10, 40, 10));
        assert_abs_diff_eq!(c.accuracy, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(c.ppv, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(c.fnr, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn perfect_classifier_confusion() {
        let x: Vec<Option<f64>> = (0..20).map(|i| Some(f64::from(i % 2 == 0))).collect();
        let w = x.clone();
        let y = all((0..20).map(|i| i as f64).collect());
        let z = all((0..20).map(|i| (i as f64 - 10.0) / 5.0).collect());
        let frame = frame_from("y ~ x || w + z", &[("y", y), ("w", w), ("z", z), ("x", x)]);
        let c = confusion_summary(&frame).unwrap();
        assert_eq!(c.accuracy, 1.0);
        assert_eq!(c.fpr, 0.0);
        assert_eq!(c.fnr, 0.0);
    }

    #[test]
    fn one_sided_confusion_is_undefined() {
        let x: Vec<Option<f64>> = (0..10).map(|_| Some(1.0)).collect();
        let w: Vec<Option<f64>> = (0..10).map(|i| Some(f64::from(i % 2 == 0))).collect();
        let y = all((0..10).map(|i| i as f64).collect());
        let z = all((0..10).map(|i| i as f64 / 10.0).collect());
        let frame = frame_from("y ~ x || w + z", &[("y", y), ("w", w), ("z", z), ("x", x)]);
        assert!(matches!(
            confusion_summary(&frame),
            Err(Error::UndefinedRate(_))
        ));
    }

    #[test]
    fn naive_equals_glm_on_truth_under_perfect_classifier() {
        let mut rng = crate::rng::stream(21, 0, 0);
        use rand::Rng;
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 150;
        let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.3 * x[i] + 0.2 * z[i] + normal.sample(&mut rng))
            .collect();
        let frame = frame_from(
            "y ~ x || w + z",
            &[
                ("y", all(y.clone())),
                ("w", all(x.clone())),
                ("z", all(z.clone())),
                ("x", all(x.clone())),
            ],
        );
        let naive = fit_naive(&frame, Family::GaussianIdentity, &OptimOptions::default()).unwrap();
        let design = Design::with_intercept(&[("x", &x), ("z", &z)], &y);
        let oracle = fit_glm(&design, Family::GaussianIdentity, &OptimOptions::default()).unwrap();
        assert_eq!(naive.estimates, oracle.estimates);
        assert_eq!(naive.term_names, ["(Intercept)", "x", "z", "sigma"]);
    }

    #[test]
    fn feasible_sees_only_annotated_rows() {
        let mut rng = crate::rng::stream(22, 0, 0);
        use rand::Rng;
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let m = 60;
        let z: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.3 * x[i] + 0.2 * z[i] + normal.sample(&mut rng))
            .collect();
        let w: Vec<f64> = x
            .iter()
            .map(|x| {
                if rng.gen::<f64>() < 0.75 {
                    *x
                } else {
                    1.0 - *x
                }
            })
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
                ("w", all(w)),
                ("z", all(z.clone())),
                ("x", latent),
            ],
        );
        let feasible =
            fit_feasible(&frame, Family::GaussianIdentity, &OptimOptions::default()).unwrap();
        assert_eq!(feasible.n_obs_used, m);

        let design = Design::with_intercept(&[("x", &x[..m]), ("z", &z[..m])], &y[..m]);
        let oracle = fit_glm(&design, Family::GaussianIdentity, &OptimOptions::default()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(feasible.estimates[j], oracle.estimates[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn feasible_wants_enough_annotations() {
        let frame = frame_from(
            "y ~ x || w + z",
            &[
                ("y", all(vec![1.0, 2.0, 3.0, 4.0])),
                ("w", all(vec![0.0, 1.0, 0.0, 1.0])),
                ("z", all(vec![0.1, 0.2, 0.3, 0.4])),
                ("x", vec![Some(0.0), Some(1.0), Some(0.0), None]),
            ],
        );
        assert!(matches!(
            fit_feasible(&frame, Family::GaussianIdentity, &OptimOptions::default()),
            Err(Error::TooFewAnnotations { .. })
        ));
    }
}
