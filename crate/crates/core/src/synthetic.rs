//! Synthetic data with known time-varying coefficients.
//!
//! The standard benchmark has a random-walk intercept and two slowly
//! drifting regression coefficients:
//!
//! ```text
//! beta1_t = 0.5 + cumulative sum of N(0, 0.05²)
//! beta2_t = -1  + cumulative sum of N(0, 0.15²)
//! rw_t    = cumulative sum of N(0, 0.5²)
//! x1_t ~ N(2, 1),   x2_t = cos(t)
//! y_t ~ N(rw_t + beta1_t x1_t + beta2_t x2_t, 0.5²)
//! ```
//!
//! Draws come from this crate's own generator, so a seed reproduces the same
//! data across versions of this crate but not across languages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::DataTable;

/// Formula fitting the benchmark data with diffuse priors.
pub const BENCHMARK_FORMULA: &str = "y ~ 0 + rw1(~ x1 + x2, beta = c(0, 10), sigma = c(0, 10))";

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub y: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// True intercept path.
    pub rw: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
}

impl Benchmark {
    /// Columns `y`, `x1`, `x2`.
    pub fn data(&self) -> DataTable {
        DataTable::new()
            .with_column("y", self.y.iter().copied())
            .with_column("x1", self.x1.iter().copied())
            .with_column("x2", self.x2.iter().copied())
    }

    /// Columns `time`, `rw`, `beta1`, `beta2`.
    pub fn truth(&self) -> DataTable {
        DataTable::new()
            .with_column("time", (1..=self.y.len()).map(|t| t as f64))
            .with_column("rw", self.rw.iter().copied())
            .with_column("beta1", self.beta1.iter().copied())
            .with_column("beta2", self.beta2.iter().copied())
    }
}

fn random_walk<R: Rng>(rng: &mut R, start: f64, sd: f64, n: usize) -> Vec<f64> {
    let mut level = start;
    (0..n)
        .map(|t| {
            if t > 0 {
                let e: f64 = rng.sample(StandardNormal);
                level += sd * e;
            }
            level
        })
        .collect()
}

pub fn benchmark(n: usize, seed: u64) -> Benchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta1 = random_walk(&mut rng, 0.5, 0.05, n);
    let beta2 = random_walk(&mut rng, -1.0, 0.15, n);
    let x1_dist = Normal::new(2.0, 1.0).expect("valid normal");
    let x1: Vec<f64> = (0..n).map(|_| x1_dist.sample(&mut rng)).collect();
    let x2: Vec<f64> = (1..=n).map(|t| (t as f64).cos()).collect();
    let mut level = 0.0;
    let rw: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            level += 0.5 * e;
            level
        })
        .collect();
    let y = (0..n)
        .map(|t| {
            let e: f64 = rng.sample(StandardNormal);
            rw[t] + beta1[t] * x1[t] + beta2[t] * x2[t] + 0.5 * e
        })
        .collect();
    Benchmark {
        y,
        x1,
        x2,
        rw,
        beta1,
        beta2,
    }
}
