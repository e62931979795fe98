//! MCMC over the standard deviations with the coefficients marginalised out.
//!
//! The chain targets `p(sigma | y)` on the unconstrained scale
//! `u = log sigma`, whose density picks up the Jacobian `sum(u)`. Each kept
//! draw of `sigma` is then completed with one coefficient path drawn from
//! `p(alpha | sigma, y)` by the simulation smoother, so the pairs are draws
//! from the joint posterior.
//!
//! For the Poisson family the chain targets the Gaussian-approximation
//! surrogate and every kept draw carries a log importance weight.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::glmapprox::{approx_log_marginal, gaussian_approximation, importance_weight, ApproxError};
use crate::kalman::{build_state_space, log_likelihood, KalmanError};
use crate::model::{log_prior, Family, Layout, ModelSpec, SigmaVector};
use crate::simsmooth::simulate_states;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Iterations per chain, warmup included.
    pub iter: usize,
    pub warmup: usize,
    pub chains: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub init_jitter: f64,
    /// Metropolis moves per iteration; `None` means three per dimension.
    pub steps_per_iter: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::new(2000)
    }
}

impl SamplerConfig {
    /// `iter` iterations with the first half as warmup, four chains.
    pub fn new(iter: usize) -> Self {
        Self {
            iter,
            warmup: iter / 2,
            chains: 4,
            seed: 0,
            target_accept: 0.234,
            init_jitter: 1.0,
            steps_per_iter: None,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |msg: &str| Err(SamplerError::InvalidConfig(msg.to_string()));
        if self.warmup >= self.iter {
            return bad("warmup must be smaller than iter");
        }
        if self.chains == 0 {
            return bad("at least one chain is required");
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0, 1)");
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return bad("init_jitter must be non-negative");
        }
        if self.steps_per_iter == Some(0) {
            return bad("steps_per_iter must be positive");
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        self.iter - self.warmup
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite starting point in 100 attempts")]
    InitFailure { chain: usize },
    #[error(transparent)]
    Kalman(#[from] KalmanError),
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// Log of the marginal posterior density of `sigma` (up to a constant).
/// `-∞` outside the support or where the filter breaks down.
pub fn log_marginal_posterior(spec: &ModelSpec, sigma: &SigmaVector) -> f64 {
    match spec.family() {
        Family::Poisson => approx_log_marginal(spec, sigma),
        Family::Gaussian => {
            let prior = log_prior(spec, sigma);
            if prior == f64::NEG_INFINITY {
                return prior;
            }
            match log_likelihood(&build_state_space(spec, sigma), &spec.y) {
                Ok(ll) if !ll.is_nan() => ll + prior,
                _ => f64::NEG_INFINITY,
            }
        }
    }
}

/// Metropolis acceptance probability `min(1, exp(proposed - current))`.
pub fn accept_probability(current: f64, proposed: f64) -> f64 {
    let d = proposed - current;
    if d.is_nan() {
        0.0
    } else {
        d.exp().min(1.0)
    }
}

const COV_START: usize = 50;
const COV_USE: usize = 100;

/// Random-walk Metropolis with Gaussian proposals `x + scale * L z`.
///
/// While adapting, `log(scale)` follows a Robbins-Monro recursion towards
/// the target acceptance rate, and from step 100 on `L` is the Cholesky
/// factor of the empirical covariance of the chain so far.
#[derive(Debug, Clone)]
pub struct AdaptiveMetropolis {
    dim: usize,
    chol: DMatrix<f64>,
    log_scale: f64,
    target_accept: f64,
    steps: usize,
    using_cov: bool,
    n_cov: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl AdaptiveMetropolis {
    pub fn new(dim: usize, target_accept: f64) -> Self {
        Self {
            dim,
            chol: DMatrix::identity(dim, dim),
            log_scale: 0.1f64.ln(),
            target_accept,
            steps: 0,
            using_cov: false,
            n_cov: 0,
            mean: DVector::zeros(dim),
            m2: DMatrix::zeros(dim, dim),
        }
    }

    /// Fixed proposal with covariance `scale^2 * cov`; never adapts unless
    /// [`Self::step`] is called with `adapt = true`.
    pub fn with_proposal(cov: &DMatrix<f64>, scale: f64, target_accept: f64) -> Self {
        let mut k = Self::new(cov.nrows(), target_accept);
        k.chol = cov.clone().cholesky().expect("proposal covariance must be PD").l();
        k.log_scale = scale.ln();
        k
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn proposal_covariance(&self) -> DMatrix<f64> {
        let s2 = (2.0 * self.log_scale).exp();
        &self.chol * self.chol.transpose() * s2
    }

    fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol * z * self.scale();
        x.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }

    fn adapt(&mut self, accept_prob: f64, x: &[f64]) {
        self.steps += 1;
        let gain = (self.steps as f64).powf(-0.6);
        self.log_scale += gain * (accept_prob - self.target_accept);

        if self.steps >= COV_START {
            self.n_cov += 1;
            let xv = DVector::from_column_slice(x);
            let delta = &xv - &self.mean;
            self.mean += &delta / self.n_cov as f64;
            let delta2 = &xv - &self.mean;
            self.m2 += &delta * delta2.transpose();
        }
        if self.steps >= COV_USE && self.n_cov > self.dim {
            let cov = &self.m2 / (self.n_cov - 1) as f64 + DMatrix::identity(self.dim, self.dim) * 1e-10;
            if let Some(c) = cov.cholesky() {
                if !self.using_cov {
                    self.using_cov = true;
                    self.log_scale = (2.38 / (self.dim as f64).sqrt()).ln();
                }
                self.chol = c.l();
            }
        }
    }

    /// One Metropolis move. Returns whether the proposal was accepted.
    pub fn step<R, F>(&mut self, x: &mut Vec<f64>, lp: &mut f64, target: F, rng: &mut R, adapt: bool) -> bool
    where
        R: Rng + ?Sized,
        F: FnOnce(&[f64]) -> f64,
    {
        let proposal = self.propose(x, rng);
        let lp_new = target(&proposal);
        let alpha = accept_probability(*lp, lp_new);
        let u: f64 = rng.random();
        let accepted = u < alpha;
        if accepted {
            *x = proposal;
            *lp = lp_new;
        }
        if adapt {
            self.adapt(alpha, x);
        }
        accepted
    }
}

/// Kept draws of one chain.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub chain_id: usize,
    /// 1-based iteration number of each kept draw.
    pub iterations: Vec<usize>,
    /// Flat sigma vectors.
    pub sigma: Vec<Vec<f64>>,
    /// State paths, T × m each.
    pub states: Vec<DMatrix<f64>>,
    pub log_weights: Vec<f64>,
    /// Log marginal posterior of each kept sigma.
    pub lp: Vec<f64>,
    /// Acceptance rate after warmup.
    pub accept_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub layout: Layout,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_kept(&self) -> usize {
        self.chains.iter().map(|c| c.sigma.len()).sum()
    }

    pub fn log_weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.chains.iter().flat_map(|c| c.log_weights.iter().copied())
    }

    /// `1 / sum(w^2)` of the self-normalised importance weights.
    pub fn weight_ess(&self) -> f64 {
        let lw: Vec<f64> = self.log_weights().collect();
        weight_ess(&lw)
    }
}

/// Effective sample size `1 / sum(w_bar^2)` of log weights.
pub fn weight_ess(log_weights: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    s * s / s2
}

/// Random number stream of chain `chain_id`: the ChaCha stream with that id
/// under the run seed.
pub fn chain_rng(seed: u64, chain_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain_id as u64);
    rng
}

fn jacobian(u: &[f64]) -> f64 {
    u.iter().sum()
}

/// One posterior draw of the state path (and its log weight) at `sigma`.
pub fn draw_states<R: Rng + ?Sized>(
    spec: &ModelSpec,
    sigma: &SigmaVector,
    rng: &mut R,
) -> Result<(DMatrix<f64>, f64), SamplerError> {
    match spec.family() {
        Family::Gaussian => {
            let ssm = build_state_space(spec, sigma);
            Ok((simulate_states(&ssm, &spec.y, rng)?, 0.0))
        }
        Family::Poisson => {
            let approx = gaussian_approximation(spec, sigma)?;
            let ssm = approx.state_space(spec, sigma);
            let path = simulate_states(&ssm, &approx.y_pseudo, rng)?;
            let lw = importance_weight(spec, &approx, &path);
            Ok((path, lw))
        }
    }
}

pub fn run_chain(spec: &ModelSpec, config: &SamplerConfig, chain_id: usize) -> Result<ChainDraws, SamplerError> {
    config.validate()?;
    let layout = &spec.layout;
    let dim = layout.sigma_dim();
    let mut rng = chain_rng(config.seed, chain_id);

    let last_lmp = Cell::new(f64::NEG_INFINITY);
    let target = |u: &[f64]| {
        let sigma: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        let lmp = log_marginal_posterior(spec, &SigmaVector::from_flat(layout, &sigma));
        last_lmp.set(lmp);
        lmp + jacobian(u)
    };

    let mut u = vec![0.0; dim];
    let mut lp = f64::NEG_INFINITY;
    for _ in 0..100 {
        for (ui, prior) in u.iter_mut().zip(&spec.sigma_priors) {
            let e: f64 = rng.sample(StandardNormal);
            *ui = (prior.sd / 2.0).ln() + config.init_jitter * e;
        }
        lp = target(&u);
        if lp.is_finite() {
            break;
        }
    }
    if !lp.is_finite() {
        return Err(SamplerError::InitFailure { chain: chain_id });
    }
    let mut lmp = last_lmp.get();

    let steps = config.steps_per_iter.unwrap_or(3 * dim.max(1));
    let mut kernel = AdaptiveMetropolis::new(dim, config.target_accept);
    let kept = config.kept();
    let mut draws = ChainDraws {
        chain_id,
        iterations: Vec::with_capacity(kept),
        sigma: Vec::with_capacity(kept),
        states: Vec::with_capacity(kept),
        log_weights: Vec::with_capacity(kept),
        lp: Vec::with_capacity(kept),
        accept_rate: 0.0,
    };
    let mut accepted = 0usize;
    for it in 0..config.iter {
        let warm = it < config.warmup;
        if dim > 0 {
            for _ in 0..steps {
                if kernel.step(&mut u, &mut lp, target, &mut rng, warm) {
                    lmp = last_lmp.get();
                    if !warm {
                        accepted += 1;
                    }
                }
            }
        }
        if warm {
            continue;
        }
        let sigma: Vec<f64> = u.iter().map(|x| x.exp()).collect();
        let (path, lw) = draw_states(spec, &SigmaVector::from_flat(layout, &sigma), &mut rng)?;
        draws.iterations.push(it + 1);
        draws.sigma.push(sigma);
        draws.states.push(path);
        draws.log_weights.push(lw);
        draws.lp.push(lmp);
    }
    draws.accept_rate = if dim == 0 {
        1.0
    } else {
        accepted as f64 / (kept * steps) as f64
    };
    Ok(draws)
}

/// Runs all chains in parallel; results are ordered by chain id.
pub fn run(spec: &ModelSpec, config: &SamplerConfig) -> Result<PosteriorDraws, SamplerError> {
    config.validate()?;
    let chains = (0..config.chains)
        .into_par_iter()
        .map(|id| run_chain(spec, config, id))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PosteriorDraws {
        layout: spec.layout.clone(),
        chains,
    })
}
