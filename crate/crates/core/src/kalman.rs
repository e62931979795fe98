//! State-space form, univariate Kalman filter and fixed-interval smoother.
//!
//! ```text
//! y_t     = Z_t a_t + e_t,          e_t ~ N(0, H_t)
//! a_{t+1} = T a_t + R n_t,          n_t ~ N(0, Q_t)
//! a_1     ~ N(a1, P1)
//! ```
//!
//! Observations are scalar, so the innovation variance `F_t` is a scalar and
//! the recursions never invert a matrix. Missing observations skip the
//! update step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dist::LN_2PI;
use crate::model::{ModelSpec, SigmaVector};

/// Innovation variances below this are treated as a degenerate model.
pub const MIN_INNOVATION_VARIANCE: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum KalmanError {
    #[error("innovation variance {variance} at time {time} is negative or not finite")]
    NumericalBreakdown { time: usize, variance: f64 },
    #[error("innovation variance at time {time} is numerically zero")]
    Degenerate { time: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    /// Observation rows, T × m.
    pub z: DMatrix<f64>,
    pub transition: DMatrix<f64>,
    /// State index loaded by each noise component (the columns of `R`).
    pub noise_states: Vec<usize>,
    /// Noise variances, T × k; row `t` drives the transition out of time `t`.
    pub q: DMatrix<f64>,
    /// Observation noise variance per time point.
    pub h: Vec<f64>,
    pub a1: DVector<f64>,
    /// Diagonal prior covariance of the first state.
    pub p1: DMatrix<f64>,
}

impl StateSpace {
    pub fn n_time(&self) -> usize {
        self.z.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_states.len()
    }

    /// The m × k selection matrix `R`.
    pub fn r_matrix(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.state_dim(), self.noise_dim());
        for (i, &s) in self.noise_states.iter().enumerate() {
            r[(s, i)] = 1.0;
        }
        r
    }

    /// Replaces the observation variances, e.g. with pseudo-variances.
    pub fn with_observation_variances(mut self, h: Vec<f64>) -> Self {
        assert_eq!(h.len(), self.n_time());
        self.h = h;
        self
    }

    fn add_state_noise(&self, p: &mut DMatrix<f64>, t: usize) {
        for (i, &s) in self.noise_states.iter().enumerate() {
            p[(s, s)] += self.q[(t, i)];
        }
    }
}

/// State-space form of `spec` at the given sds. For the Poisson family the
/// observation variances are zero until replaced by pseudo-variances.
pub fn build_state_space(spec: &ModelSpec, sigma: &SigmaVector) -> StateSpace {
    let layout = &spec.layout;
    let m = layout.state_dim();
    let n = spec.n_time();
    let (pf, p1) = (layout.fixed.len(), layout.rw1.len());

    let mut transition = DMatrix::identity(m, m);
    for i in 0..layout.rw2.len() {
        let b = pf + p1 + 2 * i;
        transition[(b, b + 1)] = 1.0;
    }

    let noise: Vec<f64> = sigma.noise().collect();
    assert_eq!(noise.len(), layout.noise_dim(), "sigma dimension mismatch");
    let q = DMatrix::from_fn(n, noise.len(), |t, i| {
        let sd = spec.noise_scale(i, t) * noise[i];
        sd * sd
    });

    let h = match sigma.obs {
        Some(s) => vec![s * s; n],
        None => vec![0.0; n],
    };

    let mut a1 = DVector::zeros(m);
    let mut p1_diag = DVector::zeros(m);
    for (j, prior) in spec.beta_priors.iter().enumerate() {
        let s = layout.coef_state(j);
        a1[s] = prior.mean;
        p1_diag[s] = prior.sd * prior.sd;
    }
    for (i, prior) in spec.nu_priors.iter().enumerate() {
        let s = pf + p1 + 2 * i + 1;
        a1[s] = prior.mean;
        p1_diag[s] = prior.sd * prior.sd;
    }

    StateSpace {
        z: spec.z().clone(),
        transition,
        noise_states: layout.noise_states(),
        q,
        h,
        a1,
        p1: DMatrix::from_diagonal(&p1_diag),
    }
}

#[derive(Debug, Clone)]
pub struct KalmanOutput {
    pub loglik: f64,
    /// Innovations; NaN at missing times.
    pub v: Vec<f64>,
    /// Innovation variances; NaN at missing times.
    pub f: Vec<f64>,
    /// One-step predicted moments `a_t`, `P_t`.
    pub a_pred: Vec<DVector<f64>>,
    pub p_pred: Vec<DMatrix<f64>>,
    pub a_filt: Vec<DVector<f64>>,
    pub p_filt: Vec<DMatrix<f64>>,
    pub a_smooth: Option<Vec<DVector<f64>>>,
    pub p_smooth: Option<Vec<DMatrix<f64>>>,
    /// `P_t Z_t' / F_t`; zero at missing times.
    gain: Vec<DVector<f64>>,
}

fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = s;
            p[(j, i)] = s;
        }
    }
    let floor = -1e-12 * p.trace().abs();
    for i in 0..n {
        if p[(i, i)] < 0.0 && p[(i, i)] > floor {
            p[(i, i)] = 0.0;
        }
    }
}

fn innovation_variance(f: f64, time: usize) -> Result<f64, KalmanError> {
    if !f.is_finite() || f < 0.0 {
        Err(KalmanError::NumericalBreakdown { time, variance: f })
    } else if f < MIN_INNOVATION_VARIANCE {
        Err(KalmanError::Degenerate { time })
    } else {
        Ok(f)
    }
}

/// Log marginal likelihood `log p(y)` without storing the filter path.
/// Degenerate innovation variances give `-∞`.
pub fn log_likelihood(ssm: &StateSpace, y: &[Option<f64>]) -> Result<f64, KalmanError> {
    assert_eq!(y.len(), ssm.n_time(), "y length mismatch");
    let mut a = ssm.a1.clone();
    let mut p = ssm.p1.clone();
    let mut ll = 0.0;
    let tt = &ssm.transition;
    for (t, obs) in y.iter().enumerate() {
        let z = ssm.z.row(t).transpose();
        if let Some(y) = obs {
            let pz = &p * &z;
            let f = match innovation_variance(z.dot(&pz) + ssm.h[t], t) {
                Ok(f) => f,
                Err(KalmanError::Degenerate { .. }) => return Ok(f64::NEG_INFINITY),
                Err(e) => return Err(e),
            };
            let v = y - z.dot(&a);
            ll -= 0.5 * (LN_2PI + f.ln() + v * v / f);
            a.axpy(v / f, &pz, 1.0);
            p.ger(-1.0 / f, &pz, &pz, 1.0);
            symmetrize(&mut p);
        }
        if t + 1 < y.len() {
            a = tt * &a;
            p = tt * &p * tt.transpose();
            ssm.add_state_noise(&mut p, t);
            symmetrize(&mut p);
        }
    }
    Ok(ll)
}

/// Runs the filter and keeps predicted and filtered moments.
pub fn kalman_filter(ssm: &StateSpace, y: &[Option<f64>]) -> Result<KalmanOutput, KalmanError> {
    assert_eq!(y.len(), ssm.n_time(), "y length mismatch");
    let n = y.len();
    let m = ssm.state_dim();
    let tt = &ssm.transition;
    let mut out = KalmanOutput {
        loglik: 0.0,
        v: vec![f64::NAN; n],
        f: vec![f64::NAN; n],
        a_pred: Vec::with_capacity(n),
        p_pred: Vec::with_capacity(n),
        a_filt: Vec::with_capacity(n),
        p_filt: Vec::with_capacity(n),
        a_smooth: None,
        p_smooth: None,
        gain: Vec::with_capacity(n),
    };
    let mut a = ssm.a1.clone();
    let mut p = ssm.p1.clone();
    for (t, obs) in y.iter().enumerate() {
        out.a_pred.push(a.clone());
        out.p_pred.push(p.clone());
        let z = ssm.z.row(t).transpose();
        match obs {
            Some(y) => {
                let pz = &p * &z;
                let f = innovation_variance(z.dot(&pz) + ssm.h[t], t)?;
                let v = y - z.dot(&a);
                out.loglik -= 0.5 * (LN_2PI + f.ln() + v * v / f);
                out.v[t] = v;
                out.f[t] = f;
                a.axpy(v / f, &pz, 1.0);
                p.ger(-1.0 / f, &pz, &pz, 1.0);
                symmetrize(&mut p);
                out.gain.push(pz / f);
            }
            None => out.gain.push(DVector::zeros(m)),
        }
        out.a_filt.push(a.clone());
        out.p_filt.push(p.clone());
        if t + 1 < n {
            a = tt * &a;
            p = tt * &p * tt.transpose();
            ssm.add_state_noise(&mut p, t);
            symmetrize(&mut p);
        }
    }
    Ok(out)
}

/// Filter followed by the backward smoothing pass for means and
/// covariances.
pub fn kalman_smoother(ssm: &StateSpace, y: &[Option<f64>]) -> Result<KalmanOutput, KalmanError> {
    let mut out = kalman_filter(ssm, y)?;
    let n = y.len();
    let m = ssm.state_dim();
    let tt = &ssm.transition;
    let mut r = DVector::zeros(m);
    let mut nn = DMatrix::zeros(m, m);
    let mut a_smooth = vec![DVector::zeros(m); n];
    let mut p_smooth = vec![DMatrix::zeros(m, m); n];
    for t in (0..n).rev() {
        let z = ssm.z.row(t).transpose();
        if y[t].is_some() {
            let f = out.f[t];
            // L = T (I - K z')
            let mut ikz = DMatrix::identity(m, m);
            ikz.ger(-1.0, &out.gain[t], &z, 1.0);
            let l = tt * ikz;
            r = &z * (out.v[t] / f) + l.tr_mul(&r);
            nn = &z * z.transpose() / f + l.tr_mul(&nn) * &l;
        } else {
            r = tt.tr_mul(&r);
            nn = tt.tr_mul(&nn) * tt;
        }
        let p = &out.p_pred[t];
        a_smooth[t] = &out.a_pred[t] + p * &r;
        let mut v = p - p * &nn * p;
        symmetrize(&mut v);
        p_smooth[t] = v;
    }
    out.a_smooth = Some(a_smooth);
    out.p_smooth = Some(p_smooth);
    Ok(out)
}

/// Smoothed state means for observations `y`, reusing the gains of a
/// previous filter run on the same model and missingness pattern.
/// Covariances and gains do not depend on the observed values, so only the
/// mean recursions are rerun.
pub fn smoothed_means(ssm: &StateSpace, filtered: &KalmanOutput, y: &[Option<f64>]) -> Vec<DVector<f64>> {
    let n = y.len();
    let m = ssm.state_dim();
    let tt = &ssm.transition;
    let mut a_pred = Vec::with_capacity(n);
    let mut v = vec![0.0; n];
    let mut a = ssm.a1.clone();
    for t in 0..n {
        a_pred.push(a.clone());
        if let Some(y) = y[t] {
            v[t] = y - ssm.z.row(t).transpose().dot(&a);
            a.axpy(v[t], &filtered.gain[t], 1.0);
        }
        a = tt * a;
    }
    let mut r = DVector::zeros(m);
    let mut out = vec![DVector::zeros(m); n];
    for t in (0..n).rev() {
        let z = ssm.z.row(t).transpose();
        if y[t].is_some() {
            // L' r = (I - z K') T' r
            let tr = tt.tr_mul(&r);
            let k_tr = filtered.gain[t].dot(&tr);
            r = &z * (v[t] / filtered.f[t]) + tr - &z * k_tr;
        } else {
            r = tt.tr_mul(&r);
        }
        out[t] = &a_pred[t] + &filtered.p_pred[t] * &r;
    }
    out
}
