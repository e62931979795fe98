//! Binding a parsed formula to data.
//!
//! Every coefficient becomes part of the state vector, so the only
//! parameters left for MCMC are the standard deviations collected in
//! [`SigmaVector`]. The state layout is
//!
//! ```text
//! [ fixed_1 .. fixed_pf | rw1_1 .. rw1_p1 | beta_1, nu_1, .., beta_p2, nu_p2 ]
//! ```
//!
//! with fixed coefficients carrying no state noise, RW1 coefficients noise
//! on the level and RW2 coefficients noise on the slope `nu` only.

use nalgebra::{DMatrix, DMatrixView};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Column, DataTable};
use crate::dist::truncated_normal_lpdf;
use crate::formula::{FormulaAst, Prior, DEFAULT_PRIOR, INTERCEPT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
}

impl std::str::FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(Family::Gaussian),
            "poisson" => Ok(Family::Poisson),
            other => Err(format!("unknown family `{other}` (expected gaussian or poisson)")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("column `{0}` is not numeric")]
    NonNumericColumn(String),
    #[error("column `{column}` has a missing or non-finite value in row {row}")]
    MissingPredictor { column: String, row: usize },
    #[error("response has negative count {value} in row {row}")]
    NegativeCount { row: usize, value: f64 },
    #[error("response has non-integer count {value} in row {row}")]
    NonIntegerCount { row: usize, value: f64 },
    #[error("exposure must be positive, got {value} in row {row}")]
    BadExposure { row: usize, value: f64 },
    #[error("an exposure column only applies to the poisson family")]
    ExposureWithGaussian,
    #[error("gamma column `{column}` must be positive, got {value} in row {row}")]
    BadGamma { column: String, row: usize, value: f64 },
    #[error("gamma given for `{0}`, which is not an rw1 term")]
    UnknownGammaTerm(String),
    #[error("model has no coefficients")]
    NoCoefficients,
    #[error("data has no rows")]
    NoRows,
}

/// The data-free part of a model: family and term names per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub family: Family,
    pub response: String,
    pub fixed: Vec<String>,
    pub rw1: Vec<String>,
    pub rw2: Vec<String>,
}

impl Layout {
    pub fn n_coef(&self) -> usize {
        self.fixed.len() + self.rw1.len() + self.rw2.len()
    }

    /// State dimension `m`.
    pub fn state_dim(&self) -> usize {
        self.fixed.len() + self.rw1.len() + 2 * self.rw2.len()
    }

    /// Number of noisy state components `k`.
    pub fn noise_dim(&self) -> usize {
        self.rw1.len() + self.rw2.len()
    }

    pub fn has_obs_sigma(&self) -> bool {
        self.family == Family::Gaussian
    }

    pub fn sigma_dim(&self) -> usize {
        usize::from(self.has_obs_sigma()) + self.noise_dim()
    }

    /// Names in flat sigma order: `sigma_y` (Gaussian), then one per
    /// RW1/RW2 term.
    pub fn sigma_names(&self) -> Vec<String> {
        let obs = self.has_obs_sigma().then(|| "sigma_y".to_string());
        obs.into_iter()
            .chain(self.rw1.iter().chain(&self.rw2).map(|t| format!("sigma_{t}")))
            .collect()
    }

    /// State index holding coefficient `j` (fixed, then rw1, then rw2).
    pub fn coef_state(&self, j: usize) -> usize {
        let (pf, p1) = (self.fixed.len(), self.rw1.len());
        if j < pf + p1 {
            j
        } else {
            pf + p1 + 2 * (j - pf - p1)
        }
    }

    /// State index of each noisy component, in sigma order.
    pub fn noise_states(&self) -> Vec<usize> {
        let (pf, p1) = (self.fixed.len(), self.rw1.len());
        (0..p1)
            .map(|i| pf + i)
            .chain((0..self.rw2.len()).map(|i| pf + p1 + 2 * i + 1))
            .collect()
    }

    /// Coefficient names in state-block order.
    pub fn coef_names(&self) -> impl Iterator<Item = &str> {
        self.fixed.iter().chain(&self.rw1).chain(&self.rw2).map(String::as_str)
    }
}

/// Standard deviations of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaVector {
    /// Observation noise sd; `None` for the Poisson family.
    pub obs: Option<f64>,
    pub rw1: Vec<f64>,
    /// Slope noise sds of the RW2 coefficients.
    pub rw2: Vec<f64>,
}

impl SigmaVector {
    pub fn from_flat(layout: &Layout, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), layout.sigma_dim(), "sigma dimension mismatch");
        let (obs, rest) = if layout.has_obs_sigma() {
            (Some(flat[0]), &flat[1..])
        } else {
            (None, flat)
        };
        let (rw1, rw2) = rest.split_at(layout.rw1.len());
        Self {
            obs,
            rw1: rw1.to_vec(),
            rw2: rw2.to_vec(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.obs
            .into_iter()
            .chain(self.rw1.iter().copied())
            .chain(self.rw2.iter().copied())
            .collect()
    }

    /// Noise sds in noise-component order (rw1 then rw2).
    pub fn noise(&self) -> impl Iterator<Item = f64> + '_ {
        self.rw1.iter().chain(&self.rw2).copied()
    }
}

#[derive(Debug, Clone)]
pub struct ModelOptions {
    pub family: Family,
    pub exposure: Option<String>,
    /// `(rw1 term, column)` pairs scaling that term's noise sd over time.
    pub gamma: Vec<(String, String)>,
    pub sigma_y_prior: Prior,
    /// Prior of time-invariant coefficients.
    pub fixed_beta_prior: Prior,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            family: Family::Gaussian,
            exposure: None,
            gamma: Vec::new(),
            sigma_y_prior: DEFAULT_PRIOR,
            fixed_beta_prior: DEFAULT_PRIOR,
        }
    }
}

impl ModelOptions {
    pub fn poisson() -> Self {
        Self {
            family: Family::Poisson,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub formula: FormulaAst,
    pub layout: Layout,
    /// Response; `None` marks a missing observation.
    pub y: Vec<Option<f64>>,
    pub x_fixed: DMatrix<f64>,
    pub x_rw1: DMatrix<f64>,
    pub x_rw2: DMatrix<f64>,
    /// First-time-point priors, one per coefficient in block order.
    pub beta_priors: Vec<Prior>,
    /// Priors in flat sigma order.
    pub sigma_priors: Vec<Prior>,
    pub nu_priors: Vec<Prior>,
    /// All ones for the Gaussian family.
    pub exposure: Vec<f64>,
    /// Optional noise-sd scaling per RW1 column.
    pub gamma: Vec<Option<Vec<f64>>>,
    z: DMatrix<f64>,
}

impl ModelSpec {
    pub fn n_time(&self) -> usize {
        self.y.len()
    }

    pub fn family(&self) -> Family {
        self.layout.family
    }

    /// Observation rows `Z` (T × m); RW2 slope columns are zero.
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn signal_row(&self, t: usize) -> DMatrixView<'_, f64> {
        self.z.rows(t, 1)
    }

    /// Scaling of noise component `i` for the transition out of time `t`.
    pub fn noise_scale(&self, i: usize, t: usize) -> f64 {
        match self.gamma.get(i) {
            Some(Some(g)) => g[t],
            _ => 1.0,
        }
    }

    /// Last scaling value of each noise component, used when projecting
    /// past the data.
    pub fn final_noise_scales(&self) -> Vec<f64> {
        let last = self.n_time() - 1;
        (0..self.layout.noise_dim())
            .map(|i| self.noise_scale(i, last))
            .collect()
    }
}

fn numeric_column<'a>(data: &'a DataTable, name: &str, rows: usize) -> Result<&'a [Option<f64>], ModelError> {
    match data.get(name) {
        None => Err(ModelError::UnknownColumn(name.to_string())),
        Some(Column::Text(_)) => Err(ModelError::NonNumericColumn(name.to_string())),
        Some(Column::Numeric(v)) if v.len() != rows => Err(ModelError::LengthMismatch {
            column: name.to_string(),
            expected: rows,
            found: v.len(),
        }),
        Some(Column::Numeric(v)) => Ok(v),
    }
}

fn complete_column(data: &DataTable, name: &str, rows: usize) -> Result<Vec<f64>, ModelError> {
    if name == INTERCEPT {
        return Ok(vec![1.0; rows]);
    }
    numeric_column(data, name, rows)?
        .iter()
        .enumerate()
        .map(|(t, v)| match v {
            Some(x) if x.is_finite() => Ok(*x),
            _ => Err(ModelError::MissingPredictor {
                column: name.to_string(),
                row: t + 1,
            }),
        })
        .collect()
}

fn design<'a>(
    data: &DataTable,
    names: impl Iterator<Item = &'a str>,
    rows: usize,
) -> Result<(Vec<String>, DMatrix<f64>), ModelError> {
    let mut cols = Vec::new();
    let mut values = Vec::new();
    for name in names {
        values.extend(complete_column(data, name, rows)?);
        cols.push(name.to_string());
    }
    let x = DMatrix::from_vec(rows, cols.len(), values);
    Ok((cols, x))
}

/// Resolves the formula's columns against `data` and assembles design
/// matrices and priors.
pub fn build_model(ast: &FormulaAst, data: &DataTable, options: &ModelOptions) -> Result<ModelSpec, ModelError> {
    let response = match data.get(&ast.response) {
        None => return Err(ModelError::UnknownColumn(ast.response.clone())),
        Some(Column::Text(_)) => return Err(ModelError::NonNumericColumn(ast.response.clone())),
        Some(Column::Numeric(v)) => v.clone(),
    };
    let rows = response.len();
    if rows == 0 {
        return Err(ModelError::NoRows);
    }

    let (fixed, x_fixed) = design(data, ast.fixed_columns(), rows)?;
    let (rw1, x_rw1) = design(data, ast.rw1_blocks.iter().flat_map(|b| b.columns()), rows)?;
    let (rw2, x_rw2) = design(data, ast.rw2_blocks.iter().flat_map(|b| b.columns()), rows)?;
    if fixed.len() + rw1.len() + rw2.len() == 0 {
        return Err(ModelError::NoCoefficients);
    }

    let y: Vec<Option<f64>> = response.into_iter().map(|v| v.filter(|x| x.is_finite())).collect();
    if options.family == Family::Poisson {
        for (t, v) in y.iter().enumerate() {
            if let Some(v) = *v {
                if v < 0.0 {
                    return Err(ModelError::NegativeCount { row: t + 1, value: v });
                }
                if v.fract() != 0.0 {
                    return Err(ModelError::NonIntegerCount { row: t + 1, value: v });
                }
            }
        }
    }

    let exposure = match (&options.exposure, options.family) {
        (None, _) => vec![1.0; rows],
        (Some(_), Family::Gaussian) => return Err(ModelError::ExposureWithGaussian),
        (Some(col), Family::Poisson) => {
            let u = complete_column(data, col, rows)?;
            if let Some((t, &v)) = u.iter().enumerate().find(|(_, &v)| v <= 0.0) {
                return Err(ModelError::BadExposure { row: t + 1, value: v });
            }
            u
        }
    };

    let mut gamma: Vec<Option<Vec<f64>>> = vec![None; rw1.len()];
    for (term, col) in &options.gamma {
        let i = rw1
            .iter()
            .position(|n| n == term)
            .ok_or_else(|| ModelError::UnknownGammaTerm(term.clone()))?;
        let g = complete_column(data, col, rows)?;
        if let Some((t, &v)) = g.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(ModelError::BadGamma {
                column: col.clone(),
                row: t + 1,
                value: v,
            });
        }
        gamma[i] = Some(g);
    }

    let mut beta_priors = vec![options.fixed_beta_prior; fixed.len()];
    let mut sigma_priors = Vec::new();
    if options.family == Family::Gaussian {
        sigma_priors.push(options.sigma_y_prior);
    }
    let mut nu_priors = Vec::new();
    for b in &ast.rw1_blocks {
        beta_priors.extend(std::iter::repeat_n(b.beta_prior, b.len()));
        sigma_priors.extend(std::iter::repeat_n(b.sigma_prior, b.len()));
    }
    for b in &ast.rw2_blocks {
        beta_priors.extend(std::iter::repeat_n(b.beta_prior, b.len()));
        sigma_priors.extend(std::iter::repeat_n(b.sigma_prior, b.len()));
        nu_priors.extend(std::iter::repeat_n(b.nu_prior, b.len()));
    }

    let layout = Layout {
        family: options.family,
        response: ast.response.clone(),
        fixed,
        rw1,
        rw2,
    };
    let mut z = DMatrix::zeros(rows, layout.state_dim());
    for t in 0..rows {
        let (rf, r1, r2) = (x_fixed.row(t), x_rw1.row(t), x_rw2.row(t));
        for (j, &x) in rf.iter().chain(r1.iter()).chain(r2.iter()).enumerate() {
            z[(t, layout.coef_state(j))] = x;
        }
    }

    Ok(ModelSpec {
        formula: ast.clone(),
        layout,
        y,
        x_fixed,
        x_rw1,
        x_rw2,
        beta_priors,
        sigma_priors,
        nu_priors,
        exposure,
        gamma,
        z,
    })
}

/// Sum of the zero-truncated normal log prior densities of all sds.
/// `-∞` if any entry is negative.
pub fn log_prior(spec: &ModelSpec, sigma: &SigmaVector) -> f64 {
    log_prior_flat(&spec.sigma_priors, &sigma.to_flat())
}

pub fn log_prior_flat(priors: &[Prior], sigma: &[f64]) -> f64 {
    assert_eq!(priors.len(), sigma.len(), "sigma dimension mismatch");
    priors
        .iter()
        .zip(sigma)
        .map(|(&p, &s)| truncated_normal_lpdf(s, p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;

    fn table(n: usize) -> DataTable {
        DataTable::new()
            .with_column("y", (0..n).map(|t| t as f64))
            .with_column("x", (0..n).map(|t| (t as f64).sin()))
            .with_column("x1", (0..n).map(|t| 2.0 + t as f64))
            .with_column("x2", (0..n).map(|t| (t as f64).cos()))
    }

    #[test]
    fn rw1_only_layout() {
        let ast = parse_formula("y ~ 0 + rw1(~ x1 + x2, beta = c(0, 10), sigma = c(0, 10))").unwrap();
        let spec = build_model(&ast, &table(100), &ModelOptions::default()).unwrap();
        assert_eq!(spec.n_time(), 100);
        assert_eq!(spec.layout.fixed.len(), 0);
        assert_eq!(spec.layout.rw1, vec![INTERCEPT, "x1", "x2"]);
        assert_eq!(spec.layout.sigma_dim(), 4);
        assert_eq!(
            spec.layout.sigma_names(),
            vec!["sigma_y", "sigma_(Intercept)", "sigma_x1", "sigma_x2"]
        );
        assert_eq!(
            spec.z().row(3).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 5.0, 3f64.cos()]
        );
    }

    #[test]
    fn plain_regression_layout() {
        let ast = parse_formula("y ~ x").unwrap();
        let spec = build_model(&ast, &table(5), &ModelOptions::default()).unwrap();
        assert_eq!(spec.n_time(), 5);
        assert_eq!(spec.layout.fixed, vec![INTERCEPT, "x"]);
        assert_eq!(spec.layout.noise_dim(), 0);
        assert_eq!(spec.x_fixed.ncols(), 2);
        assert_eq!(spec.beta_priors, vec![DEFAULT_PRIOR; 2]);
    }

    #[test]
    fn rw2_states_interleave_slopes() {
        let ast = parse_formula("y ~ x + rw1(~ 0 + x1) + rw2(~ 0 + x2)").unwrap();
        let spec = build_model(&ast, &table(4), &ModelOptions::default()).unwrap();
        let l = &spec.layout;
        assert_eq!(l.state_dim(), 5);
        assert_eq!(l.noise_states(), vec![2, 4]);
        assert_eq!(l.coef_state(3), 3);
        assert_eq!(spec.z()[(1, 4)], 0.0);
        assert_eq!(spec.z()[(1, 3)], 1f64.cos());
    }

    #[test]
    fn unknown_column() {
        let ast = parse_formula("y ~ w").unwrap();
        assert_eq!(
            build_model(&ast, &table(5), &ModelOptions::default()).unwrap_err(),
            ModelError::UnknownColumn("w".into())
        );
    }

    #[test]
    fn data_errors() {
        let ast = parse_formula("y ~ x").unwrap();
        let short = table(5).with_column("x", [1.0, 2.0]);
        assert!(matches!(
            build_model(&ast, &short, &ModelOptions::default()),
            Err(ModelError::LengthMismatch { .. })
        ));
        let gap = table(3).with_optional_column("x", [Some(1.0), None, Some(2.0)]);
        assert_eq!(
            build_model(&ast, &gap, &ModelOptions::default()).unwrap_err(),
            ModelError::MissingPredictor {
                column: "x".into(),
                row: 2
            }
        );
        let mut text = table(3);
        text.insert("x", Column::Text(vec!["a".into(); 3]));
        assert_eq!(
            build_model(&ast, &text, &ModelOptions::default()).unwrap_err(),
            ModelError::NonNumericColumn("x".into())
        );
    }

    #[test]
    fn poisson_checks_counts_and_exposure() {
        let ast = parse_formula("y ~ x").unwrap();
        let neg = table(3).with_column("y", [1.0, -1.0, 2.0]);
        assert_eq!(
            build_model(&ast, &neg, &ModelOptions::poisson()).unwrap_err(),
            ModelError::NegativeCount { row: 2, value: -1.0 }
        );
        let frac = table(3).with_column("y", [1.5, 1.0, 2.0]);
        assert!(matches!(
            build_model(&ast, &frac, &ModelOptions::poisson()),
            Err(ModelError::NonIntegerCount { .. })
        ));
        let opts = ModelOptions {
            exposure: Some("u".into()),
            ..ModelOptions::poisson()
        };
        let bad = table(3).with_column("u", [1.0, 0.0, 2.0]);
        assert_eq!(
            build_model(&ast, &bad, &opts).unwrap_err(),
            ModelError::BadExposure { row: 2, value: 0.0 }
        );
        let ok = table(3).with_column("u", [1.0, 3.0, 2.0]);
        let spec = build_model(&ast, &ok, &opts).unwrap();
        assert_eq!(spec.exposure, vec![1.0, 3.0, 2.0]);
        assert_eq!(spec.layout.sigma_dim(), 0);
        let gaussian = ModelOptions {
            exposure: Some("u".into()),
            ..ModelOptions::default()
        };
        assert_eq!(
            build_model(&ast, &ok, &gaussian).unwrap_err(),
            ModelError::ExposureWithGaussian
        );
    }

    #[test]
    fn gamma_binds_to_rw1_terms() {
        let ast = parse_formula("y ~ 0 + rw1(~ x)").unwrap();
        let data = table(4).with_column("g", [1.0, 0.5, 0.25, 0.125]);
        let opts = ModelOptions {
            gamma: vec![("x".into(), "g".into())],
            ..ModelOptions::default()
        };
        let spec = build_model(&ast, &data, &opts).unwrap();
        // the block carries an implicit intercept ahead of x
        assert_eq!(spec.noise_scale(0, 2), 1.0);
        assert_eq!(spec.noise_scale(1, 2), 0.25);
        let wrong = ModelOptions {
            gamma: vec![("x1".into(), "g".into())],
            ..ModelOptions::default()
        };
        assert_eq!(
            build_model(&ast, &data, &wrong).unwrap_err(),
            ModelError::UnknownGammaTerm("x1".into())
        );
    }

    #[test]
    fn build_is_deterministic() {
        let ast = parse_formula("y ~ x + rw2(~ 0 + x1)").unwrap();
        let a = build_model(&ast, &table(7), &ModelOptions::default()).unwrap();
        let b = build_model(&ast, &table(7), &ModelOptions::default()).unwrap();
        assert_eq!(a.z(), b.z());
        assert_eq!(a.layout, b.layout);
        assert_eq!(a.beta_priors, b.beta_priors);
        assert_eq!(a.sigma_priors, b.sigma_priors);
    }

    /// Simpson's rule on [0, mean + 40 sd].
    fn truncated_normalizer(prior: Prior) -> f64 {
        let n = 200_000;
        let hi = prior.mean.max(0.0) + 40.0 * prior.sd;
        let h = hi / n as f64;
        let f = |x: f64| {
            let z = (x - prior.mean) / prior.sd;
            (-0.5 * z * z).exp() / (prior.sd * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mut s = f(0.0) + f(hi);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn log_prior_at_zero_matches_quadrature() {
        let prior = Prior::new(0.0, 1.0);
        let oracle = (1.0 / (2.0 * std::f64::consts::PI).sqrt() / truncated_normalizer(prior)).ln();
        assert!((oracle - (-0.225_791_352_644_727_4)).abs() < 1e-9);
        assert!((log_prior_flat(&[prior], &[0.0]) - oracle).abs() < 1e-12);

        for prior in [Prior::new(1.5, 0.7), Prior::new(-2.0, 1.3)] {
            let x = 0.9;
            let z = (x - prior.mean) / prior.sd;
            let dens = (-0.5 * z * z).exp() / (prior.sd * (2.0 * std::f64::consts::PI).sqrt());
            let oracle = (dens / truncated_normalizer(prior)).ln();
            assert!((log_prior_flat(&[prior], &[x]) - oracle).abs() < 1e-9, "{prior:?}");
        }
    }

    #[test]
    fn log_prior_support_and_additivity() {
        let p = Prior::new(0.0, 2.0);
        assert_eq!(log_prior_flat(&[p, p], &[0.3, -0.1]), f64::NEG_INFINITY);
        let c = log_prior_flat(&[p], &[0.7]);
        assert_eq!(log_prior_flat(&[p, p], &[0.7, 0.7]), 2.0 * c);
    }

    #[test]
    fn log_prior_decreases_away_from_mean() {
        let p = Prior::new(1.0, 0.5);
        let mut prev = log_prior_flat(&[p], &[1.0]);
        for i in 1..50 {
            let above = log_prior_flat(&[p], &[1.0 + i as f64 * 0.05]);
            assert!(above < prev);
            prev = above;
        }
    }
}
