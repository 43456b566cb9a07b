//! Derivative-free maximization and finite-difference derivatives.
//!
//! The likelihoods in this crate mix observed and integrated-out rows, so
//! gradients are numeric throughout. BFGS search steps use cheap forward
//! differences; convergence is only declared after a central-difference
//! gradient passes the tolerance, and reported curvature (standard errors)
//! always comes from the central-difference Hessian.

use crate::error::{Error, Result};
use crate::glm::OptimOptions;
use nalgebra::{DMatrix, DVector};

/// Central-difference gradient with per-coordinate steps
/// `step_scale * max(1, |theta_i|)`.
pub fn numeric_gradient<F>(objective: F, theta: &[f64], step_scale: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let h = step_scale * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let up = objective(&probe);
        probe[i] = theta[i] - h;
        let down = objective(&probe);
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteObjective);
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Hessian, symmetrized as `(H + H^T) / 2`.
pub fn numeric_hessian<F>(objective: F, theta: &[f64], step_scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let p = theta.len();
    let f0 = objective(theta);
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let steps: Vec<f64> = theta
        .iter()
        .map(|t| step_scale * t.abs().max(1.0))
        .collect();
    let mut probe = theta.to_vec();
    let mut h = DMatrix::zeros(p, p);

    let eval = |probe: &mut Vec<f64>, i: usize, di: f64, j: usize, dj: f64| -> Result<f64> {
        probe[i] += di;
        probe[j] += dj;
        let v = objective(probe);
        probe[i] = theta[i];
        probe[j] = theta[j];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteObjective)
        }
    };

    for i in 0..p {
        let hi = steps[i];
        let up = eval(&mut probe, i, hi, i, 0.0)?;
        let down = eval(&mut probe, i, -hi, i, 0.0)?;
        h[(i, i)] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in (i + 1)..p {
            let hj = steps[j];
            let pp = eval(&mut probe, i, hi, j, hj)?;
            let pm = eval(&mut probe, i, hi, j, -hj)?;
            let mp = eval(&mut probe, i, -hi, j, hj)?;
            let mm = eval(&mut probe, i, -hi, j, -hj)?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Outcome of [`maximize`]; `converged = false` carries the best point found.
#[derive(Debug, Clone)]
pub struct MaximizeOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn forward_gradient<F>(objective: &F, theta: &mut [f64], f0: f64) -> DVector<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let h_scale = f64::EPSILON.sqrt();
    let p = theta.len();
    let mut grad = DVector::zeros(p);
    for i in 0..p {
        let t = theta[i];
        let h = h_scale * t.abs().max(1.0);
        theta[i] = t + h;
        let up = objective(theta);
        theta[i] = t;
        grad[i] = if up.is_finite() { (up - f0) / h } else { 0.0 };
    }
    grad
}

/// Quasi-Newton (BFGS) ascent with numeric gradients.
///
/// Converged means the relative objective change fell below
/// `options.rel_tolerance` and the central-difference gradient max-norm fell
/// below `1e-5 * (1 + |value|)`. Running out of iterations is not an error:
/// the best point is returned with `converged = false`.
pub fn maximize<F>(objective: F, theta0: &[f64], options: &OptimOptions) -> Result<MaximizeOutcome>
where
    F: Fn(&[f64]) -> f64,
{
    let p = theta0.len();
    let mut x = theta0.to_vec();
    let mut fx = objective(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut grad = forward_gradient(&objective, &mut x, fx);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    let mut iterations = 0;
    let mut converged = false;
    let mut first_update = true;

    let grad_tol = |value: f64| 1e-5 * (1.0 + value.abs());

    while iterations < options.max_iterations {
        iterations += 1;

        let mut direction = &h_inv * &grad;
        let mut slope: f64 = direction.dot(&grad);
        if !slope.is_finite() || slope <= 0.0 {
            // stale curvature; restart from steepest ascent
            h_inv = DMatrix::identity(p, p);
            first_update = true;
            direction = grad.clone();
            slope = direction.dot(&grad);
            if slope <= 0.0 {
                break;
            }
        }

        // backtracking Armijo line search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..p).map(|i| x[i] + step * direction[i]).collect();
            let f_trial = objective(&trial);
            if f_trial.is_finite() && f_trial >= fx + 1e-4 * step * slope {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            // no ascent step representable; decide with an accurate gradient
            let g = numeric_gradient(&objective, &x, options.fd_step_scale)?;
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            converged = gmax < grad_tol(fx);
            break;
        };

        let delta_f = f_new - fx;
        let mut x_new = x_new;
        let grad_new = forward_gradient(&objective, &mut x_new, f_new);

        // inverse-Hessian BFGS update on the negated problem
        let s = DVector::from_iterator(p, (0..p).map(|i| x_new[i] - x[i]));
        let y = &grad - &grad_new; // gradient of -f increases along s
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                let yy = y.dot(&y);
                if yy > 0.0 {
                    h_inv = DMatrix::identity(p, p) * (sy / yy);
                }
                first_update = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H += (sy + yHy) * rho^2 * s s^T - rho * (H y s^T + s y^T H)
            let c = (sy + yhy) * rho * rho;
            for a in 0..p {
                for b in 0..p {
                    h_inv[(a, b)] += c * s[a] * s[b] - rho * (hy[a] * s[b] + s[a] * hy[b]);
                }
            }
        }

        x = x_new;
        fx = f_new;
        grad = grad_new;

        if delta_f.abs() < options.rel_tolerance * (1.0 + fx.abs()) {
            let g = numeric_gradient(&objective, &x, options.fd_step_scale)?;
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax < grad_tol(fx) {
                converged = true;
                break;
            }
            grad = DVector::from_vec(g);
        }
    }

    Ok(MaximizeOutcome {
        theta: x,
        value: fx,
        converged,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hessian_of_sum_of_squares_is_twice_identity() {
        let h = numeric_hessian(
            |t: &[f64]| t[0] * t[0] + t[1] * t[1],
            &[0.0, 0.0],
            f64::EPSILON.cbrt(),
        )
        .unwrap();
        assert_abs_diff_eq!(h[(0, 0)], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[(1, 1)], 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[(0, 1)], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn hessian_of_bilinear_form_has_unit_cross_term() {
        let h =
            numeric_hessian(|t: &[f64]| t[0] * t[1], &[0.3, -0.7], f64::EPSILON.cbrt()).unwrap();
        assert_abs_diff_eq!(h[(0, 1)], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[(1, 0)], 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(h[(0, 0)], 0.0, epsilon = 1e-5);
    }

    #[test]
    fn maximize_scalar_quadratic() {
        let out = maximize(
            |t: &[f64]| -(t[0] - 3.0) * (t[0] - 3.0),
            &[0.0],
            &OptimOptions::default(),
        )
        .unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.theta[0], 3.0, epsilon = 1e-6);
    }

    #[test]
    fn maximize_negated_rosenbrock() {
        let rosen = |t: &[f64]| {
            let a = 1.0 - t[0];
            let b = t[1] - t[0] * t[0];
            -(a * a + 100.0 * b * b)
        };
        let out = maximize(rosen, &[-1.2, 1.0], &OptimOptions::default()).unwrap();
        assert!(out.converged, "stopped after {} iterations", out.iterations);
        assert_abs_diff_eq!(out.theta[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(out.theta[1], 1.0, epsilon = 1e-4);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let err = maximize(|_t: &[f64]| f64::NAN, &[0.0], &OptimOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteObjective));
    }

    #[test]
    fn gradient_matches_finer_stencil() {
        let f = |t: &[f64]| (t[0] * t[1]).sin() + (t[0] - 0.5 * t[1]).exp();
        let theta = [0.4, -1.3];
        let coarse = numeric_gradient(f, &theta, f64::EPSILON.cbrt()).unwrap();
        let fine = numeric_gradient(f, &theta, f64::EPSILON.cbrt() / 10.0).unwrap();
        for (c, f) in coarse.iter().zip(&fine) {
            assert!((c - f).abs() <= 1e-4 * f.abs().max(1.0));
        }
    }
}
