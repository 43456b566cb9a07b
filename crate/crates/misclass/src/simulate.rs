//! Synthetic-data generator for the study scenarios.
//!
//! Four families: a mismeasured covariate with clean (`S1a`) or
//! outcome-dependent (`S1b`) classifier errors, and a mismeasured binary
//! outcome with constant (`S2a`) or covariate-dependent (`S2b`) flip
//! probability. Classifier noise is calibrated by bisection against a fixed
//! 200,000-draw sample at a dedicated sub-seed, so the noise scale depends
//! only on the scenario parameters, never on the per-dataset seed.

use crate::data::{build_frame, AnalysisFrame, Dataset};
use crate::error::{Error, Result};
use crate::formula::parse_formula;
use crate::glm::{expit, Family};
use crate::rng;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};
use std::collections::HashMap;
use std::fmt;
use std::sync::Mutex;
use std::sync::OnceLock;

/// Default strength of the outcome channel in the `S1b` classifier score,
/// chosen so the misclassification/residual correlation lands near -0.17 at
/// 74% accuracy.
pub const DEFAULT_S1B_SYSTEMATIC: f64 = -0.43;

/// Default strength of the covariate channel in the `S2b` classifier score,
/// chosen so the misclassification/X correlation lands near 0.1 at 73%
/// accuracy.
pub const DEFAULT_S2B_SYSTEMATIC: f64 = 0.75;

/// Relative weights of `z` and `x` in the `S2b` classifier score; the `z`
/// channel is what the systematic-error sweep exercises.
const S2B_SPLIT_Z: f64 = 1.0;
const S2B_SPLIT_X: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1a,
    S1b,
    S2a,
    S2b,
}

impl Scenario {
    pub fn is_iv(&self) -> bool {
        matches!(self, Scenario::S1a | Scenario::S1b)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::S1a => "s1a",
            Scenario::S1b => "s1b",
            Scenario::S2a => "s2a",
            Scenario::S2b => "s2b",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Scenario> {
        match s {
            "s1a" => Ok(Scenario::S1a),
            "s1b" => Ok(Scenario::S1b),
            "s2a" => Ok(Scenario::S2a),
            "s2b" => Ok(Scenario::S2b),
            other => Err(Error::Usage(format!("unknown scenario `{other}`"))),
        }
    }
}

/// Full parameterization of one simulated dataset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_obs: usize,
    pub n_annotated: usize,
    pub seed: u64,
    /// main-model coefficient on the binary variable
    pub b_x: f64,
    /// main-model coefficient on the clean covariate
    pub b_z: f64,
    /// exposure intercept; moves the balance of the binary variable
    pub p_x_intercept: f64,
    /// exposure coefficient of z on x
    pub zx_coefficient: f64,
    pub target_accuracy: f64,
    /// strength of the systematic channel (outcome residual in `S1b`,
    /// covariates in `S2b`); zero in the `a` scenarios
    pub systematic_coefficient: f64,
    /// share of outcome variance explained by the signal (`S1` family)
    pub r_squared: f64,
    /// scale of the skewed extra noise component (`S1` robustness)
    pub sigma2_extra: f64,
    /// draw z as Bernoulli(0.5) instead of Normal(0, 0.5)
    pub binary_z: bool,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, n_obs: usize, n_annotated: usize, seed: u64) -> ScenarioConfig {
        let (b_x, b_z) = if scenario.is_iv() {
            (0.2, 0.2)
        } else {
            (0.7, -0.7)
        };
        let (target_accuracy, systematic_coefficient) = match scenario {
            Scenario::S1a => (0.72, 0.0),
            Scenario::S1b => (0.74, DEFAULT_S1B_SYSTEMATIC),
            Scenario::S2a => (0.72, 0.0),
            Scenario::S2b => (0.73, DEFAULT_S2B_SYSTEMATIC),
        };
        ScenarioConfig {
            scenario,
            n_obs,
            n_annotated,
            seed,
            b_x,
            b_z,
            p_x_intercept: 0.0,
            zx_coefficient: 1.0,
            target_accuracy,
            systematic_coefficient,
            r_squared: 0.10,
            sigma2_extra: 0.0,
            binary_z: false,
        }
    }

    pub fn formula(&self) -> &'static str {
        if self.scenario.is_iv() {
            "y ~ x || w + z"
        } else {
            "y || w ~ x + z"
        }
    }

    pub fn family(&self) -> Family {
        if self.scenario.is_iv() {
            Family::GaussianIdentity
        } else {
            Family::BernoulliLogit
        }
    }

    /// True value of each main-model coefficient, by term name.
    pub fn true_value(&self, term: &str) -> Option<f64> {
        match term {
            "(Intercept)" => Some(0.0),
            "x" => Some(self.b_x),
            "z" => Some(self.b_z),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_annotated == 0 || self.n_annotated > self.n_obs {
            return Err(Error::BadConfig(format!(
                "need 1 <= n_annotated <= n_obs, got {}/{}",
                self.n_annotated, self.n_obs
            )));
        }
        if !(self.target_accuracy > 0.5 && self.target_accuracy <= 1.0) {
            return Err(Error::CalibrationFailed(format!(
                "target accuracy {} outside (0.5, 1]",
                self.target_accuracy
            )));
        }
        if !(self.r_squared > 0.0 && self.r_squared < 1.0) {
            return Err(Error::BadConfig(format!(
                "r_squared {} outside (0, 1)",
                self.r_squared
            )));
        }
        if self.sigma2_extra < 0.0 {
            return Err(Error::BadConfig("sigma2_extra must be >= 0".into()));
        }
        Ok(())
    }
}

/// Summary statistics realized by one generated dataset.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AchievedStats {
    pub accuracy: f64,
    pub rho_xz: f64,
    /// `S1b`: correlation of the misclassification with the outcome residual
    pub rho_err_resid: Option<f64>,
    /// `S2b`: correlation of the misclassification with the covariate x
    pub rho_err_x: Option<f64>,
    /// realized share of outcome variance explained (`S1` family)
    pub r_squared: Option<f64>,
    /// calibrated noise scale (`S1`: classifier score noise sd; `S2`:
    /// truth-alignment weight in the classifier logit)
    pub noise_scale: f64,
}

/// A simulated frame plus the full truth column for evaluation.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub frame: AnalysisFrame,
    pub truth: Vec<f64>,
    pub achieved: AchievedStats,
}

/// Generate one dataset. Identical configs (seed included) produce bitwise
/// identical output.
pub fn generate(config: &ScenarioConfig) -> Result<GeneratedData> {
    config.validate()?;
    let noise_scale = calibrated_noise(config)?;
    let mut rng = rng::stream(config.seed, 0xDA7A, 0);
    let n = config.n_obs;

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let zi = draw_z(&mut rng, config, &std_normal);
        let xi = f64::from(rng.gen::<f64>() < expit(exposure_logit(config, zi)));
        z.push(zi);
        x.push(xi);
    }

    let (y, w, truth, resid) = match config.scenario {
        Scenario::S1a | Scenario::S1b => {
            let signal: Vec<f64> = (0..n)
                .map(|i| config.b_x * x[i] + config.b_z * z[i])
                .collect();
            let sigma = residual_sd(&signal, config.r_squared);
            let mut resid = Vec::with_capacity(n);
            for _ in 0..n {
                let mut e = sigma
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                if config.sigma2_extra > 0.0 {
                    // half-normal component centered at zero: skews the
                    // outcome without moving its mean
                    let h = (config.sigma2_extra
                        * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                    .abs();
                    e += h - config.sigma2_extra * (2.0 / std::f64::consts::PI).sqrt();
                }
                resid.push(e);
            }
            let y: Vec<f64> = (0..n).map(|i| signal[i] + resid[i]).collect();
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    let score = x[i]
                        + noise_scale
                            * <StandardNormal as Distribution<f64>>::sample(
                                &StandardNormal,
                                &mut rng,
                            )
                        + config.systematic_coefficient * resid[i];
                    f64::from(score > 0.5)
                })
                .collect();
            let truth = x.clone();
            (y, w, truth, resid)
        }
        Scenario::S2a | Scenario::S2b => {
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let p = expit(config.b_x * x[i] + config.b_z * z[i]);
                    f64::from(rng.gen::<f64>() < p)
                })
                .collect();
            // classifier as a logistic model of the truth (plus covariate
            // channels in S2b); with no channels this is a constant flip
            // probability expit(-noise_scale)
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    let p_one = expit(classifier_logit(config, noise_scale, y[i], z[i], x[i]));
                    f64::from(rng.gen::<f64>() < p_one)
                })
                .collect();
            let truth = y.clone();
            (y, w, truth, Vec::new())
        }
    };

    // annotated positions: uniform random subsample
    let mut mask_rng = rng::stream(config.seed, 0x3A5C, 0);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..config.n_annotated.min(n - 1) {
        let j = mask_rng.gen_range(i..n);
        order.swap(i, j);
    }
    let mut annotated = vec![false; n];
    for &i in order.iter().take(config.n_annotated) {
        annotated[i] = true;
    }

    let achieved = achieved_stats(config, &x, &z, &y, &w, &truth, &resid, noise_scale);

    let mut ds = Dataset::new();
    let latent_is_y = !config.scenario.is_iv();
    let opt = |col: &[f64], latent: bool| -> Vec<Option<f64>> {
        col.iter()
            .enumerate()
            .map(|(i, v)| (!latent || annotated[i]).then_some(*v))
            .collect()
    };
    ds.push_column("y", opt(&y, latent_is_y))?;
    ds.push_column("w", opt(&w, false))?;
    ds.push_column("z", opt(&z, false))?;
    ds.push_column("x", opt(&x, !latent_is_y))?;
    let frame = build_frame(ds, parse_formula(config.formula())?)?;

    Ok(GeneratedData {
        frame,
        truth,
        achieved,
    })
}

fn draw_z<R: Rng>(rng: &mut R, config: &ScenarioConfig, std_normal: &Normal<f64>) -> f64 {
    if config.binary_z {
        f64::from(rng.gen::<f64>() < 0.5)
    } else {
        0.5 * std_normal.sample(rng)
    }
}

fn exposure_logit(config: &ScenarioConfig, z: f64) -> f64 {
    let centered = if config.binary_z { z - 0.5 } else { z };
    config.p_x_intercept + config.zx_coefficient * centered
}

/// Log-odds that the classifier outputs 1 given the true outcome and the
/// covariate channels. `align` is the calibrated weight on the truth.
fn classifier_logit(config: &ScenarioConfig, align: f64, y: f64, z: f64, x: f64) -> f64 {
    align * (2.0 * y - 1.0) + config.systematic_coefficient * (S2B_SPLIT_Z * z + S2B_SPLIT_X * x)
}

/// Solve `sigma` so the signal explains `r_squared` of the outcome variance.
fn residual_sd(signal: &[f64], r_squared: f64) -> f64 {
    let var = variance(signal).max(1e-12);
    (var * (1.0 - r_squared) / r_squared).sqrt()
}

#[allow(clippy::too_many_arguments)]
fn achieved_stats(
    config: &ScenarioConfig,
    x: &[f64],
    z: &[f64],
    y: &[f64],
    w: &[f64],
    truth: &[f64],
    resid: &[f64],
    noise_scale: f64,
) -> AchievedStats {
    let n = x.len() as f64;
    let accuracy = w.iter().zip(truth).filter(|(w, t)| w == t).count() as f64 / n;
    let rho_xz = correlation(x, z);
    let err: Vec<f64> = w.iter().zip(truth).map(|(w, t)| w - t).collect();
    let rho_err_resid = (config.scenario == Scenario::S1b).then(|| correlation(&err, resid));
    let rho_err_x = (config.scenario == Scenario::S2b).then(|| correlation(&err, x));
    let r_squared = config
        .scenario
        .is_iv()
        .then(|| 1.0 - variance(resid) / variance(y).max(1e-300));
    AchievedStats {
        accuracy,
        rho_xz,
        rho_err_resid,
        rho_err_x,
        r_squared,
        noise_scale,
    }
}

fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    let denom = (va * vb).sqrt();
    if denom > 0.0 {
        cov / denom
    } else {
        0.0
    }
}

// ---- noise calibration ----

const CALIBRATION_DRAWS: usize = 200_000;
const CALIBRATION_TOLERANCE: f64 = 0.005;
const CALIBRATION_MAX_ITERS: usize = 60;
/// Dedicated sub-seed for the calibration sample; independent of any
/// user-facing seed so the noise scale is a pure function of the scenario
/// parameters.
const CALIBRATION_SEED: u64 = 0xCA11_B8A7;

#[derive(PartialEq, Eq, Hash)]
struct CalibKey {
    scenario: Scenario,
    bits: [u64; 8],
    binary_z: bool,
}

impl CalibKey {
    fn of(config: &ScenarioConfig) -> CalibKey {
        CalibKey {
            scenario: config.scenario,
            bits: [
                config.b_x.to_bits(),
                config.b_z.to_bits(),
                config.p_x_intercept.to_bits(),
                config.zx_coefficient.to_bits(),
                config.target_accuracy.to_bits(),
                config.systematic_coefficient.to_bits(),
                config.r_squared.to_bits(),
                config.sigma2_extra.to_bits(),
            ],
            binary_z: config.binary_z,
        }
    }
}

fn calibration_cache() -> &'static Mutex<HashMap<CalibKey, f64>> {
    static CACHE: OnceLock<Mutex<HashMap<CalibKey, f64>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn calibrated_noise(config: &ScenarioConfig) -> Result<f64> {
    let key = CalibKey::of(config);
    if let Some(&v) = calibration_cache().lock().expect("cache lock").get(&key) {
        return Ok(v);
    }
    let v = calibrate_noise(config)?;
    calibration_cache()
        .lock()
        .expect("cache lock")
        .insert(key, v);
    Ok(v)
}

/// Bisection search for the noise scale hitting `target_accuracy` on a fixed
/// calibration sample. `S1`: the scale is the classifier score noise sd.
/// `S2`: the scale is the flip-logit intercept.
pub fn calibrate_noise(config: &ScenarioConfig) -> Result<f64> {
    if !(config.target_accuracy > 0.5 && config.target_accuracy <= 1.0) {
        return Err(Error::CalibrationFailed(format!(
            "target accuracy {} outside (0.5, 1]",
            config.target_accuracy
        )));
    }
    let mut rng = rng::stream(CALIBRATION_SEED, config.scenario as u64, 0);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let phi = NormalDist::new(0.0, 1.0).expect("unit normal");
    let target = config.target_accuracy;

    match config.scenario {
        Scenario::S1a | Scenario::S1b => {
            // fixed draws of (x, residual); expected accuracy at noise sd s
            let mut xs = Vec::with_capacity(CALIBRATION_DRAWS);
            let mut zs = Vec::with_capacity(CALIBRATION_DRAWS);
            for _ in 0..CALIBRATION_DRAWS {
                let z = draw_z(&mut rng, config, &std_normal);
                let x = f64::from(rng.gen::<f64>() < expit(exposure_logit(config, z)));
                zs.push(z);
                xs.push(x);
            }
            let signal: Vec<f64> = xs
                .iter()
                .zip(&zs)
                .map(|(x, z)| config.b_x * x + config.b_z * z)
                .collect();
            let sigma = residual_sd(&signal, config.r_squared);
            let resid: Vec<f64> = (0..CALIBRATION_DRAWS)
                .map(|_| {
                    let mut e = sigma * std_normal.sample(&mut rng);
                    if config.sigma2_extra > 0.0 {
                        let h = (config.sigma2_extra * std_normal.sample(&mut rng)).abs();
                        e += h - config.sigma2_extra * (2.0 / std::f64::consts::PI).sqrt();
                    }
                    e
                })
                .collect();
            let c = config.systematic_coefficient;
            let accuracy = |s: f64| -> f64 {
                let mut total = 0.0;
                for i in 0..CALIBRATION_DRAWS {
                    // correct when the score stays on the truth's side of 0.5
                    let margin = if xs[i] == 1.0 {
                        0.5 + c * resid[i]
                    } else {
                        0.5 - c * resid[i]
                    };
                    total += phi.cdf(margin / s);
                }
                total / CALIBRATION_DRAWS as f64
            };
            bisect_decreasing(accuracy, 1e-9, 1e3, target)
        }
        Scenario::S2a | Scenario::S2b => {
            // fixed draws of (x, z, y); expected accuracy at alignment a
            let mut sample = Vec::with_capacity(CALIBRATION_DRAWS);
            for _ in 0..CALIBRATION_DRAWS {
                let z = draw_z(&mut rng, config, &std_normal);
                let x = f64::from(rng.gen::<f64>() < expit(exposure_logit(config, z)));
                let y = f64::from(rng.gen::<f64>() < expit(config.b_x * x + config.b_z * z));
                sample.push((z, x, y));
            }
            let accuracy = |a: f64| -> f64 {
                let mut total = 0.0;
                for &(z, x, y) in &sample {
                    // P(W = y) under the classifier model
                    let eta = classifier_logit(config, a, y, z, x);
                    total += if y == 1.0 {
                        expit(eta)
                    } else {
                        1.0 - expit(eta)
                    };
                }
                total / CALIBRATION_DRAWS as f64
            };
            // accuracy is increasing in the alignment weight
            bisect_decreasing(|t| accuracy(-t), -40.0, 40.0, target).map(|t| -t)
        }
    }
}

/// Bisection for a decreasing accuracy function of the noise scale.
fn bisect_decreasing<F: Fn(f64) -> f64>(accuracy: F, lo: f64, hi: f64, target: f64) -> Result<f64> {
    let acc_lo = accuracy(lo);
    if acc_lo + CALIBRATION_TOLERANCE < target {
        return Err(Error::CalibrationFailed(format!(
            "target accuracy {target:.3} unreachable; at most {acc_lo:.3} given the dependence constraints"
        )));
    }
    let mut lo = lo;
    let mut hi = hi;
    if accuracy(hi) > target {
        return Err(Error::CalibrationFailed(format!(
            "target accuracy {target:.3} above the search bracket"
        )));
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..CALIBRATION_MAX_ITERS {
        mid = 0.5 * (lo + hi);
        let acc = accuracy(mid);
        if (acc - target).abs() < CALIBRATION_TOLERANCE {
            return Ok(mid);
        }
        if acc > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let final_acc = accuracy(mid);
    if (final_acc - target).abs() < 2.0 * CALIBRATION_TOLERANCE {
        Ok(mid)
    } else {
        Err(Error::CalibrationFailed(format!(
            "bisection did not reach {target:.3}; landed at {final_acc:.3}"
        )))
    }
}
