//! Shared test fixtures: an independent direct-enumeration likelihood and
//! small frame builders. The oracle below works in plain probability space
//! with its own density formulas so it shares no code path with the crate's
//! log-space evaluation.

use misclass::data::{build_frame, AnalysisFrame, Dataset};
use misclass::formula::parse_formula;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct TinyData {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    /// observed truth where annotated
    pub latent: Vec<Option<f64>>,
}

impl TinyData {
    pub fn n(&self) -> usize {
        self.y.len()
    }
}

fn normal_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    (1.0 / (sigma * two_pi.sqrt())) * (-0.5 * ((y - mu) / sigma).powi(2)).exp()
}

fn sigmoid(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

fn bernoulli_pmf(eta: f64, v: f64) -> f64 {
    let p = sigmoid(eta);
    if v == 1.0 {
        p
    } else {
        1.0 - p
    }
}

/// Direct-sum likelihood for a proxied covariate: per row, the product of
/// the outcome density, the classifier model, and the exposure model, with
/// the unobserved truth enumerated over {0, 1} in probability space.
///
/// Parameter order: main (b0, bx, bz, sigma); error model
/// a0 + a1*x + a2*y + a3*z; exposure g0 + g1*z.
#[allow(clippy::too_many_arguments)]
pub fn oracle_loglik_iv(
    data: &TinyData,
    b0: f64,
    bx: f64,
    bz: f64,
    sigma: f64,
    a: [f64; 4],
    g: [f64; 2],
) -> f64 {
    let mut total = 0.0;
    for i in 0..data.n() {
        let term = |x: f64| -> f64 {
            normal_pdf(data.y[i], b0 + bx * x + bz * data.z[i], sigma)
                * bernoulli_pmf(
                    a[0] + a[1] * x + a[2] * data.y[i] + a[3] * data.z[i],
                    data.w[i],
                )
                * bernoulli_pmf(g[0] + g[1] * data.z[i], x)
        };
        let row = match data.latent[i] {
            Some(x) => term(x),
            None => term(0.0) + term(1.0),
        };
        total += row.ln();
    }
    total
}

/// Direct-sum likelihood for a proxied response: logistic outcome times the
/// classifier model, with the unobserved outcome enumerated over {0, 1}.
///
/// Parameter order: main (b0, bx, bz); error model a0 + a1*y + a2*x + a3*z.
pub fn oracle_loglik_dv(data: &TinyData, b0: f64, bx: f64, bz: f64, a: [f64; 4]) -> f64 {
    // for the DV case `latent` holds the outcome and `y` holds the covariate x
    let mut total = 0.0;
    for i in 0..data.n() {
        let x = data.y[i];
        let term = |yv: f64| -> f64 {
            bernoulli_pmf(b0 + bx * x + bz * data.z[i], yv)
                * bernoulli_pmf(a[0] + a[1] * yv + a[2] * x + a[3] * data.z[i], data.w[i])
        };
        let row = match data.latent[i] {
            Some(yv) => term(yv),
            None => term(0.0) + term(1.0),
        };
        total += row.ln();
    }
    total
}

/// Random small dataset for the proxied-covariate model, with about half the
/// rows annotated (at least one of each class).
pub fn random_iv_data(rng: &mut ChaCha8Rng, n: usize) -> TinyData {
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let w: Vec<f64> = truth
            .iter()
            .map(|x| {
                if rng.gen::<f64>() < 0.75 {
                    *x
                } else {
                    1.0 - *x
                }
            })
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 0.3 * truth[i] - 0.4 * z[i] + rng.gen_range(-1.0..1.0))
            .collect();
        let latent: Vec<Option<f64>> = truth
            .iter()
            .map(|x| rng.gen::<bool>().then_some(*x))
            .collect();
        let seen: Vec<f64> = latent.iter().flatten().copied().collect();
        if seen.contains(&0.0) && seen.contains(&1.0) {
            return TinyData { y, w, z, latent };
        }
    }
}

/// Random small dataset for the proxied-response model. `y` carries the
/// binary covariate x; `latent` carries the partially observed outcome.
pub fn random_dv_data(rng: &mut ChaCha8Rng, n: usize) -> TinyData {
    loop {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.gen::<bool>())).collect();
        let truth: Vec<f64> = (0..n)
            .map(|i| f64::from(rng.gen::<f64>() < sigmoid(0.5 * x[i] - 0.5 * z[i])))
            .collect();
        let w: Vec<f64> = truth
            .iter()
            .map(|y| {
                if rng.gen::<f64>() < 0.75 {
                    *y
                } else {
                    1.0 - *y
                }
            })
            .collect();
        let latent: Vec<Option<f64>> = truth
            .iter()
            .map(|y| rng.gen::<bool>().then_some(*y))
            .collect();
        let seen: Vec<f64> = latent.iter().flatten().copied().collect();
        if seen.contains(&0.0) && seen.contains(&1.0) {
            return TinyData { y: x, w, z, latent };
        }
    }
}

/// Build an analysis frame from tiny data for the IV formula.
pub fn iv_frame(data: &TinyData) -> AnalysisFrame {
    let mut ds = Dataset::new();
    ds.push_column("y", data.y.iter().map(|v| Some(*v)).collect())
        .unwrap();
    ds.push_column("w", data.w.iter().map(|v| Some(*v)).collect())
        .unwrap();
    ds.push_column("z", data.z.iter().map(|v| Some(*v)).collect())
        .unwrap();
    ds.push_column("x", data.latent.clone()).unwrap();
    build_frame(ds, parse_formula("y ~ x || w + z").unwrap()).unwrap()
}

/// Build an analysis frame from tiny data for the DV formula.
pub fn dv_frame(data: &TinyData) -> AnalysisFrame {
    let mut ds = Dataset::new();
    ds.push_column("y", data.latent.clone()).unwrap();
    ds.push_column("w", data.w.iter().map(|v| Some(*v)).collect())
        .unwrap();
    ds.push_column("x", data.y.iter().map(|v| Some(*v)).collect())
        .unwrap();
    ds.push_column("z", data.z.iter().map(|v| Some(*v)).collect())
        .unwrap();
    build_frame(ds, parse_formula("y || w ~ x + z").unwrap()).unwrap()
}
