//! Bayesian regression with time-varying coefficients.
//!
//! Coefficients follow first or second order random walks. A model is
//! written as a formula such as
//!
//! ```text
//! y ~ 0 + rw1(~ x1 + x2, beta = c(0, 10), sigma = c(0, 10))
//! ```
//!
//! and the coefficient paths are integrated out with a Kalman filter, so
//! MCMC only runs over the handful of standard deviations. Paths are then
//! drawn with a simulation smoother. Poisson responses go through a
//! Gaussian approximation corrected by importance weights.
//!
//! ```
//! use tvreg::{build_model, parse_formula, run, synthetic, ModelOptions, SamplerConfig};
//!
//! let data = synthetic::benchmark(40, 1).data();
//! let ast = parse_formula(synthetic::BENCHMARK_FORMULA).unwrap();
//! let spec = build_model(&ast, &data, &ModelOptions::default()).unwrap();
//! let draws = run(&spec, &SamplerConfig { chains: 1, ..SamplerConfig::new(200) }).unwrap();
//! let summary = tvreg::summarize(&draws);
//! assert!(summary.get("tv_x1", Some(40)).is_some());
//! ```

pub mod data;
pub mod diagnostics;
pub mod dist;
pub mod formula;
pub mod glmapprox;
pub mod kalman;
pub mod model;
pub mod sampler;
pub mod simsmooth;
pub mod synthetic;

pub use data::{Column, DataError, DataTable};
pub use diagnostics::{
    pp_check, predict, predict_from_final, summarize, summarize_table, DiagnosticsError, DrawTable, NewData,
    PredictMode, Statistic, Summary, SummaryRow,
};
pub use formula::{parse_formula, FormulaAst, FormulaError, Prior, RwBlock};
pub use glmapprox::{gaussian_approximation, importance_weight, ApproxError, ApproxModel};
pub use kalman::{build_state_space, kalman_filter, kalman_smoother, log_likelihood, KalmanError, StateSpace};
pub use model::{build_model, Family, Layout, ModelError, ModelOptions, ModelSpec, SigmaVector};
pub use sampler::{run, PosteriorDraws, SamplerConfig, SamplerError};
pub use simsmooth::{simulate_states, SimulationSmoother};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/formulas.md")]
    mod formulas {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/kalman.md")]
    mod kalman {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/poisson.md")]
    mod poisson {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
