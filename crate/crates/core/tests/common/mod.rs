//! Reference computations for the integration tests.
//!
//! The oracles expand every coefficient path into a linear function of
//! independent Gaussian building blocks (initial values and per-step
//! shocks) and work with the resulting dense T-dimensional signal, without
//! any recursion.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use tvreg::{build_model, parse_formula, Column, DataTable, Family, ModelOptions, ModelSpec, SigmaVector};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Signal `theta = offset + load * w` with `w ~ N(0, diag(var))`, plus the
/// coefficient paths `beta = beta_offset + beta_load * w` (row `t * p + j`).
pub struct Latent {
    pub offset: DVector<f64>,
    pub load: DMatrix<f64>,
    pub beta_offset: DVector<f64>,
    pub beta_load: DMatrix<f64>,
    pub var: DVector<f64>,
}

pub fn latent(spec: &ModelSpec, sigma: &SigmaVector) -> Latent {
    let n = spec.y.len();
    let (pf, p1, p2) = (spec.x_fixed.ncols(), spec.x_rw1.ncols(), spec.x_rw2.ncols());
    let p = pf + p1 + p2;
    let x = |t: usize, j: usize| {
        if j < pf {
            spec.x_fixed[(t, j)]
        } else if j < pf + p1 {
            spec.x_rw1[(t, j - pf)]
        } else {
            spec.x_rw2[(t, j - pf - p1)]
        }
    };

    let mut columns: Vec<(DVector<f64>, f64)> = Vec::new();
    let mut beta_offset = DVector::zeros(n * p);
    for j in 0..p {
        let prior = spec.beta_priors[j];
        let mut col = DVector::zeros(n * p);
        for t in 0..n {
            beta_offset[t * p + j] = prior.mean;
            col[t * p + j] = 1.0;
        }
        columns.push((col, prior.sd * prior.sd));
    }
    for i in 0..p1 {
        let j = pf + i;
        for s in 0..n.saturating_sub(1) {
            let g = spec.gamma.get(i).and_then(|g| g.as_ref()).map_or(1.0, |g| g[s]);
            let sd = g * sigma.rw1[i];
            let mut col = DVector::zeros(n * p);
            for t in s + 1..n {
                col[t * p + j] = 1.0;
            }
            columns.push((col, sd * sd));
        }
    }
    for i in 0..p2 {
        let j = pf + p1 + i;
        let nu = spec.nu_priors[i];
        let mut col = DVector::zeros(n * p);
        for t in 0..n {
            beta_offset[t * p + j] += t as f64 * nu.mean;
            col[t * p + j] = t as f64;
        }
        columns.push((col, nu.sd * nu.sd));
        // a slope shock at step s moves the level from time s + 2 on
        for s in 0..n.saturating_sub(2) {
            let mut col = DVector::zeros(n * p);
            for t in s + 2..n {
                col[t * p + j] = (t - s - 1) as f64;
            }
            columns.push((col, sigma.rw2[i] * sigma.rw2[i]));
        }
    }

    let k = columns.len();
    let beta_load = DMatrix::from_fn(n * p, k, |r, c| columns[c].0[r]);
    let var = DVector::from_iterator(k, columns.iter().map(|c| c.1));
    let xmat = DMatrix::from_fn(n, n * p, |t, r| if r / p == t { x(t, r % p) } else { 0.0 });
    Latent {
        offset: &xmat * &beta_offset,
        load: &xmat * &beta_load,
        beta_offset,
        beta_load,
        var,
    }
}

fn observed(spec: &ModelSpec) -> Vec<usize> {
    (0..spec.y.len()).filter(|&t| spec.y[t].is_some()).collect()
}

/// Log density of the observed responses with all states integrated out.
pub fn dense_loglik(spec: &ModelSpec, sigma: &SigmaVector) -> f64 {
    let lat = latent(spec, sigma);
    let obs = observed(spec);
    if obs.is_empty() {
        return 0.0;
    }
    let s2 = sigma.obs.expect("gaussian model").powi(2);
    let a = DMatrix::from_fn(obs.len(), lat.load.ncols(), |r, c| lat.load[(obs[r], c)]);
    let mut cov = &a * DMatrix::from_diagonal(&lat.var) * a.transpose();
    for r in 0..obs.len() {
        cov[(r, r)] += s2;
    }
    let resid = DVector::from_iterator(obs.len(), obs.iter().map(|&t| spec.y[t].unwrap() - lat.offset[t]));
    mvn_logpdf(&resid, cov)
}

pub fn mvn_logpdf(resid: &DVector<f64>, cov: DMatrix<f64>) -> f64 {
    let chol = cov.cholesky().expect("covariance must be positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(resid));
    -0.5 * (resid.len() as f64 * LN_2PI + logdet + quad)
}

/// Posterior mean and covariance of the coefficient vector (row
/// `t * p + j`) by conditioning the joint Gaussian on the observed `y`.
pub fn coefficient_posterior(spec: &ModelSpec, sigma: &SigmaVector) -> (DVector<f64>, DMatrix<f64>) {
    let lat = latent(spec, sigma);
    let obs = observed(spec);
    let s2 = sigma.obs.expect("gaussian model").powi(2);
    let d = DMatrix::from_diagonal(&lat.var);
    let prior_cov = &lat.beta_load * &d * lat.beta_load.transpose();
    let a = DMatrix::from_fn(obs.len(), lat.load.ncols(), |r, c| lat.load[(obs[r], c)]);
    let mut y_cov = &a * &d * a.transpose();
    for r in 0..obs.len() {
        y_cov[(r, r)] += s2;
    }
    let cross = &lat.beta_load * &d * a.transpose();
    let resid = DVector::from_iterator(obs.len(), obs.iter().map(|&t| spec.y[t].unwrap() - lat.offset[t]));
    let inv = y_cov.try_inverse().expect("invertible");
    let mean = &lat.beta_offset + &cross * &inv * resid;
    let cov = prior_cov - &cross * inv * cross.transpose();
    (mean, cov)
}

/// Mode of the exact Poisson posterior of the states, mapped to the signal,
/// by damped Newton over the latent building blocks with positive variance.
pub fn poisson_mode(spec: &ModelSpec, sigma: &SigmaVector) -> DVector<f64> {
    let lat = latent(spec, sigma);
    let keep: Vec<usize> = (0..lat.var.len()).filter(|&k| lat.var[k] > 0.0).collect();
    let a = DMatrix::from_fn(lat.load.nrows(), keep.len(), |r, c| lat.load[(r, keep[c])]);
    let prec = DVector::from_iterator(keep.len(), keep.iter().map(|&k| 1.0 / lat.var[k]));
    let obs = observed(spec);
    let objective = |w: &DVector<f64>| {
        let theta = &lat.offset + &a * w;
        let ll: f64 = obs
            .iter()
            .map(|&t| spec.y[t].unwrap() * theta[t] - spec.exposure[t] * theta[t].exp())
            .sum();
        ll - 0.5 * w.iter().zip(prec.iter()).map(|(w, p)| w * w * p).sum::<f64>()
    };
    let mut w = DVector::zeros(keep.len());
    for _ in 0..200 {
        let theta = &lat.offset + &a * &w;
        let mut resid = DVector::zeros(theta.len());
        let mut curv = DVector::zeros(theta.len());
        for &t in &obs {
            let mu = spec.exposure[t] * theta[t].exp();
            resid[t] = spec.y[t].unwrap() - mu;
            curv[t] = mu;
        }
        let grad = a.transpose() * resid - prec.component_mul(&w);
        let mut hess = a.transpose() * DMatrix::from_diagonal(&curv) * &a;
        for k in 0..keep.len() {
            hess[(k, k)] += prec[k];
        }
        let step = hess.cholesky().expect("concave objective").solve(&grad);
        let base = objective(&w);
        let mut scale = 1.0;
        let mut next = &w + &step;
        while objective(&next) < base && scale > 1e-10 {
            scale *= 0.5;
            next = &w + &step * scale;
        }
        let change = (&next - &w).amax();
        w = next;
        if change < 1e-13 {
            break;
        }
    }
    &lat.offset + &a * w
}

/// Log prior of a positive sd under a zero-truncated normal.
pub fn half_normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = (x - mean) / sd;
    let mass = 0.5 * libm::erfc(-mean / (sd * std::f64::consts::SQRT_2));
    -0.5 * (LN_2PI + z * z) - sd.ln() - mass.ln()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    assert!(n.is_multiple_of(2));
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Posterior means of a 2-d parameter on a midpoint grid from its log density.
pub fn grid_means_2d<F: Fn(f64, f64) -> f64>(log_density: F, upper: (f64, f64), n: usize) -> (f64, f64) {
    let (h0, h1) = (upper.0 / n as f64, upper.1 / n as f64);
    let mut lp = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = ((i as f64 + 0.5) * h0, (j as f64 + 0.5) * h1);
            lp.push((a, b, log_density(a, b)));
        }
    }
    let max = lp.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m0, mut m1) = (0.0, 0.0, 0.0);
    for (a, b, l) in lp {
        let w = (l - max).exp();
        z += w;
        m0 += w * a;
        m1 += w * b;
    }
    (m0 / z, m1 / z)
}

fn prior_text(rng: &mut ChaCha8Rng, scale: f64) -> String {
    format!(
        "c({:.3}, {:.3})",
        rng.random_range(-0.5..0.5),
        rng.random_range(0.3..1.0) * scale
    )
}

/// A random small model mixing fixed, RW1 and RW2 coefficients, with data.
pub fn random_instance(rng: &mut ChaCha8Rng, family: Family, max_time: usize) -> (ModelSpec, SigmaVector) {
    loop {
        let n = rng.random_range(1..=max_time);
        let p = rng.random_range(1..=3);
        // 0 fixed, 1 rw1, 2 rw2; index 0 is the intercept when `with_intercept`
        let with_intercept = rng.random_bool(0.5);
        let kinds: Vec<usize> = (0..p).map(|_| rng.random_range(0..3)).collect();
        let names: Vec<String> = (0..p)
            .map(|j| {
                if j == 0 && with_intercept {
                    "1".to_string()
                } else {
                    format!("x{j}")
                }
            })
            .collect();

        let mut data = DataTable::new();
        for j in 0..p {
            let col = (0..n).map(|_| Some(rng.sample::<f64, _>(StandardNormal))).collect();
            data.insert(&format!("x{j}"), Column::Numeric(col));
        }
        let block = |k: usize| -> Vec<&str> { (0..p).filter(|&j| kinds[j] == k).map(|j| names[j].as_str()).collect() };
        let body = |terms: &[&str]| {
            let has_one = terms.contains(&"1");
            let rest: Vec<&str> = terms.iter().copied().filter(|t| *t != "1").collect();
            match (has_one, rest.is_empty()) {
                (true, true) => "1".to_string(),
                (true, false) => rest.join(" + "),
                (false, _) => format!("0 + {}", rest.join(" + ")),
            }
        };
        let mut rhs = vec![body(&block(0))];
        if block(0).is_empty() {
            rhs = vec!["0".to_string()];
        }
        let mut rw1 = Vec::new();
        if !block(1).is_empty() {
            rhs.push(format!(
                "rw1(~ {}, beta = {}, sigma = {})",
                body(&block(1)),
                prior_text(rng, 2.0),
                prior_text(rng, 1.0)
            ));
            rw1 = block(1).iter().map(|_| rng.random_range(0.0..0.8)).collect();
        }
        let mut rw2 = Vec::new();
        if !block(2).is_empty() {
            rhs.push(format!(
                "rw2(~ {}, beta = {}, sigma = {}, nu = {})",
                body(&block(2)),
                prior_text(rng, 2.0),
                prior_text(rng, 1.0),
                prior_text(rng, 0.5)
            ));
            rw2 = block(2).iter().map(|_| rng.random_range(0.0..0.4)).collect();
        }
        let formula = format!("y ~ {}", rhs.join(" + "));
        let ast = parse_formula(&formula).unwrap_or_else(|e| panic!("{formula}: {e}"));

        let options = match family {
            Family::Gaussian => {
                let y: Vec<Option<f64>> = (0..n)
                    .map(|_| (!rng.random_bool(0.1)).then(|| 2.0 * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                data.insert("y", Column::Numeric(y));
                ModelOptions {
                    fixed_beta_prior: tvreg::Prior::new(rng.random_range(-0.5..0.5), rng.random_range(0.5..2.0)),
                    ..ModelOptions::default()
                }
            }
            Family::Poisson => {
                let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
                let y = u
                    .iter()
                    .map(|&u| {
                        let z: f64 = Normal::new(1.0, 0.7).unwrap().sample(rng);
                        let rate = u * z.exp();
                        Some(Poisson::new(rate).unwrap().sample(rng))
                    })
                    .collect();
                data.insert("y", Column::Numeric(y));
                data.insert("u", Column::Numeric(u.into_iter().map(Some).collect()));
                ModelOptions {
                    exposure: Some("u".into()),
                    fixed_beta_prior: tvreg::Prior::new(0.0, rng.random_range(0.5..2.0)),
                    ..ModelOptions::poisson()
                }
            }
        };
        let spec = build_model(&ast, &data, &options).unwrap_or_else(|e| panic!("{formula}: {e}"));
        if spec.y.iter().all(Option::is_none) {
            continue;
        }
        let obs = (family == Family::Gaussian).then(|| rng.random_range(0.2..2.0));
        return (spec, SigmaVector { obs, rw1, rw2 });
    }
}
