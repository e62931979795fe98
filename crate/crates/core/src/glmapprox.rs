//! Gaussian approximation of the Poisson state-space model and the
//! importance-sampling correction that makes it exact.
//!
//! For counts `y_t ~ Poisson(u_t exp(theta_t))` with signal
//! `theta_t = Z_t a_t`, a second-order expansion of the log-likelihood at
//! the current signal `theta` gives a linear Gaussian model with
//!
//! ```text
//! H_t = 1 / (u_t exp(theta_t))
//! y~_t = theta_t + y_t H_t - 1
//! ```
//!
//! Smoothing the pseudo-observations and repeating is a Newton iteration
//! whose fixed point is the posterior mode of the signal. Draws from the
//! approximating model are then weighted by
//! `p(y | theta) / g(y~ | theta)`, anchored at the mode.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::dist::{normal_lpdf, poisson_lpmf};
use crate::kalman::{build_state_space, kalman_filter, log_likelihood, smoothed_means, KalmanError, StateSpace};
use crate::model::{log_prior, Family, ModelSpec, SigmaVector};

pub const MAX_ITERATIONS: usize = 100;
pub const TOLERANCE: f64 = 1e-8;
const MAX_HALVINGS: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ApproxError {
    #[error("gaussian approximation applies to the poisson family only")]
    NotPoisson,
    #[error("signal overflow at time {time}")]
    Overflow { time: usize },
    #[error(transparent)]
    Kalman(#[from] KalmanError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxModel {
    /// Pseudo-observations; `None` where `y` is missing.
    pub y_pseudo: Vec<Option<f64>>,
    /// Pseudo-variances (1 at missing times, where they are unused).
    pub h_pseudo: Vec<f64>,
    pub theta_mode: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl ApproxModel {
    /// State-space form of the approximating linear Gaussian model.
    pub fn state_space(&self, spec: &ModelSpec, sigma: &SigmaVector) -> StateSpace {
        build_state_space(spec, sigma).with_observation_variances(self.h_pseudo.clone())
    }
}

fn pseudo_data(spec: &ModelSpec, theta: &[f64]) -> Result<(Vec<Option<f64>>, Vec<f64>), ApproxError> {
    let n = spec.n_time();
    let mut y_pseudo = vec![None; n];
    let mut h = vec![1.0; n];
    for t in 0..n {
        if let Some(y) = spec.y[t] {
            let rate = spec.exposure[t] * theta[t].exp();
            let ht = 1.0 / rate;
            if !(rate.is_finite() && ht.is_finite() && ht > 0.0) {
                return Err(ApproxError::Overflow { time: t });
            }
            h[t] = ht;
            y_pseudo[t] = Some(theta[t] + y * ht - 1.0);
        }
    }
    Ok((y_pseudo, h))
}

fn signal(spec: &ModelSpec, states: &[nalgebra::DVector<f64>]) -> Vec<f64> {
    states
        .iter()
        .enumerate()
        .map(|(t, a)| spec.signal_row(t).transpose().dot(a))
        .collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Iterates the linearisation to the signal mode given `sigma`.
///
/// Running out of iterations is not an error: the result carries
/// `converged = false`.
pub fn gaussian_approximation(spec: &ModelSpec, sigma: &SigmaVector) -> Result<ApproxModel, ApproxError> {
    if spec.family() != Family::Poisson {
        return Err(ApproxError::NotPoisson);
    }
    let base = build_state_space(spec, sigma);
    let mut theta: Vec<f64> = spec
        .y
        .iter()
        .zip(&spec.exposure)
        .map(|(y, u)| y.map_or(0.0, |y| ((y + 0.1) / u).ln()))
        .collect();

    let mut prev_change = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (y_pseudo, h) = pseudo_data(spec, &theta)?;
        let ssm = base.clone().with_observation_variances(h);
        let filtered = kalman_filter(&ssm, &y_pseudo)?;
        let full = signal(spec, &smoothed_means(&ssm, &filtered, &y_pseudo));

        let mut step = 1.0;
        let full_change = max_abs_diff(&full, &theta);
        let mut change = full_change;
        for _ in 0..MAX_HALVINGS {
            if change <= prev_change {
                break;
            }
            step *= 0.5;
            change = step * full_change;
        }
        for (th, f) in theta.iter_mut().zip(&full) {
            *th += step * (f - *th);
        }
        prev_change = change;
        if change < TOLERANCE {
            converged = true;
            break;
        }
    }

    let (y_pseudo, h_pseudo) = pseudo_data(spec, &theta)?;
    Ok(ApproxModel {
        y_pseudo,
        h_pseudo,
        theta_mode: theta,
        iterations_used: iterations,
        converged,
    })
}

/// `sum_t log p(y_t | theta_t) - log g(y~_t | theta_t)` over observed times.
fn log_density_ratio(spec: &ModelSpec, approx: &ApproxModel, theta: impl Fn(usize) -> f64) -> f64 {
    let mut total = 0.0;
    for t in 0..spec.n_time() {
        if let (Some(y), Some(yp)) = (spec.y[t], approx.y_pseudo[t]) {
            let th = theta(t);
            total += poisson_lpmf(y, spec.exposure[t].ln() + th) - normal_lpdf(yp, th, approx.h_pseudo[t]);
        }
    }
    total
}

/// Mode-corrected approximate log-likelihood `log p(y | sigma)`:
/// the pseudo-model likelihood plus the density ratio at the mode.
pub fn approx_log_likelihood(spec: &ModelSpec, sigma: &SigmaVector, approx: &ApproxModel) -> f64 {
    let ssm = approx.state_space(spec, sigma);
    let ll = match log_likelihood(&ssm, &approx.y_pseudo) {
        Ok(ll) => ll,
        Err(_) => return f64::NEG_INFINITY,
    };
    ll + log_density_ratio(spec, approx, |t| approx.theta_mode[t])
}

/// Surrogate log marginal posterior of `sigma` used as the MCMC target for
/// the Poisson family. `-∞` where the approximation fails.
pub fn approx_log_marginal(spec: &ModelSpec, sigma: &SigmaVector) -> f64 {
    let prior = log_prior(spec, sigma);
    if prior == f64::NEG_INFINITY {
        return prior;
    }
    match gaussian_approximation(spec, sigma) {
        Ok(approx) if approx.converged => approx_log_likelihood(spec, sigma, &approx) + prior,
        _ => f64::NEG_INFINITY,
    }
}

/// Log importance weight of a state path drawn from the approximating
/// model, relative to the mode. Zero when the path's signal is the mode.
pub fn importance_weight(spec: &ModelSpec, approx: &ApproxModel, path: &DMatrix<f64>) -> f64 {
    let at_path = log_density_ratio(spec, approx, |t| spec.signal_row(t).dot(&path.row(t)));
    let at_mode = log_density_ratio(spec, approx, |t| approx.theta_mode[t]);
    at_path - at_mode
}
