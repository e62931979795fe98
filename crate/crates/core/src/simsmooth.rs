//! Mean-correction simulation smoother.
//!
//! An unconditional draw `(a+, y+)` from the model is pushed through the
//! smoother, and the draw is recentred on the smoothed mean of the real
//! data:
//!
//! ```text
//! a~ = E[a | y] + a+ - E[a | y+]
//! ```
//!
//! `a~` is an exact draw from `p(a | y)` because the smoothing error
//! `a+ - E[a | y+]` has the posterior covariance and does not depend on `y`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::kalman::{kalman_smoother, smoothed_means, KalmanError, KalmanOutput, StateSpace};

/// Precomputed filter gains and smoothed means for repeated draws from one
/// `(ssm, y)` pair.
#[derive(Debug, Clone)]
pub struct SimulationSmoother<'a> {
    ssm: &'a StateSpace,
    y: &'a [Option<f64>],
    smoothed: KalmanOutput,
}

impl<'a> SimulationSmoother<'a> {
    pub fn new(ssm: &'a StateSpace, y: &'a [Option<f64>]) -> Result<Self, KalmanError> {
        let smoothed = kalman_smoother(ssm, y)?;
        Ok(Self { ssm, y, smoothed })
    }

    /// Smoother output for the real data.
    pub fn smoothed(&self) -> &KalmanOutput {
        &self.smoothed
    }

    /// One state path, T × m.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let ssm = self.ssm;
        let n = ssm.n_time();
        let m = ssm.state_dim();
        let mut plus = DMatrix::zeros(n, m);
        let mut y_plus = vec![None; n];

        let mut state = DVector::from_fn(m, |i, _| {
            let e: f64 = rng.sample(StandardNormal);
            ssm.a1[i] + ssm.p1[(i, i)].sqrt() * e
        });
        for (t, yp) in y_plus.iter_mut().enumerate() {
            plus.set_row(t, &state.transpose());
            if self.y[t].is_some() {
                let e: f64 = rng.sample(StandardNormal);
                let signal = ssm.z.row(t).transpose().dot(&state);
                *yp = Some(signal + ssm.h[t].sqrt() * e);
            }
            if t + 1 < n {
                state = &ssm.transition * state;
                for (i, &s) in ssm.noise_states.iter().enumerate() {
                    let e: f64 = rng.sample(StandardNormal);
                    state[s] += ssm.q[(t, i)].sqrt() * e;
                }
            }
        }

        let hat = self.smoothed.a_smooth.as_ref().expect("smoother output");
        let hat_plus = smoothed_means(ssm, &self.smoothed, &y_plus);
        for t in 0..n {
            let corrected = &hat[t] - &hat_plus[t];
            for i in 0..m {
                plus[(t, i)] += corrected[i];
            }
        }
        plus
    }
}

/// Draws one state path from `p(a | y)`.
pub fn simulate_states<R: Rng + ?Sized>(
    ssm: &StateSpace,
    y: &[Option<f64>],
    rng: &mut R,
) -> Result<DMatrix<f64>, KalmanError> {
    Ok(SimulationSmoother::new(ssm, y)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataTable;
    use crate::formula::parse_formula;
    use crate::kalman::build_state_space;
    use crate::model::{build_model, ModelOptions, ModelSpec, SigmaVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> (ModelSpec, SigmaVector) {
        let n = 8;
        let data = DataTable::new()
            .with_optional_column(
                "y",
                (0..n).map(|t| (t != 4).then(|| (t as f64 * 0.9).sin() + 0.2 * t as f64)),
            )
            .with_column("x", (0..n).map(|t| 1.0 + 0.5 * (t as f64).cos()));
        let ast =
            parse_formula("y ~ 0 + rw1(~ 1, beta = c(0, 2)) + rw2(~ 0 + x, beta = c(0, 1), nu = c(0, 0.5))").unwrap();
        let spec = build_model(&ast, &data, &ModelOptions::default()).unwrap();
        (
            spec,
            SigmaVector {
                obs: Some(0.5),
                rw1: vec![0.4],
                rw2: vec![0.15],
            },
        )
    }

    #[test]
    fn no_noise_path_is_prior_mean() {
        let data = DataTable::new()
            .with_column("y", [1.0, 3.0, -2.0, 0.5])
            .with_column("x", [0.3, 1.0, 2.0, -1.0]);
        let ast = parse_formula("y ~ 0 + rw1(~ 1 + x, beta = c(0.7, 1e-8))").unwrap();
        let spec = build_model(&ast, &data, &ModelOptions::default()).unwrap();
        let ssm = build_state_space(
            &spec,
            &SigmaVector {
                obs: Some(1.0),
                rw1: vec![0.0, 0.0],
                rw2: vec![],
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = simulate_states(&ssm, &spec.y, &mut rng).unwrap();
        for t in 0..4 {
            for i in 0..2 {
                assert!((path[(t, i)] - 0.7).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_path() {
        let (spec, sigma) = model();
        let ssm = build_state_space(&spec, &sigma);
        let a = simulate_states(&ssm, &spec.y, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = simulate_states(&ssm, &spec.y, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let c = simulate_states(&ssm, &spec.y, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn draws_match_smoothed_moments() {
        let (spec, sigma) = model();
        let ssm = build_state_space(&spec, &sigma);
        let sim = SimulationSmoother::new(&ssm, &spec.y).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let (n, m) = (ssm.n_time(), ssm.state_dim());
        let mut sum = DMatrix::<f64>::zeros(n, m);
        let mut sum_sq = DMatrix::<f64>::zeros(n, m);
        for _ in 0..draws {
            let path = sim.draw(&mut rng);
            sum += &path;
            sum_sq += path.component_mul(&path);
        }
        let out = sim.smoothed();
        let (a, p) = (out.a_smooth.as_ref().unwrap(), out.p_smooth.as_ref().unwrap());
        let k = draws as f64;
        for t in 0..n {
            for i in 0..m {
                let mean = sum[(t, i)] / k;
                let var = sum_sq[(t, i)] / k - mean * mean;
                let se = (var / k).sqrt();
                assert!((mean - a[t][i]).abs() < 4.0 * se, "mean ({t},{i})");
                assert!(((var - p[t][(i, i)]) / p[t][(i, i)]).abs() < 0.1, "var ({t},{i})");
            }
        }
    }
}
