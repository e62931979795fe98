//! Posterior summaries, convergence diagnostics, prediction and posterior
//! predictive checks.
//!
//! Summaries work on a [`DrawTable`], the flat `variable × chain × draw`
//! view that is also what `draws.csv` stores, so re-summarising saved draws
//! reproduces the original summary exactly.
//!
//! Means, standard deviations and quantiles honour importance weights when
//! present. `rhat` and `ess` are computed from the unweighted chains: rank
//! normalised split-R̂ (maximum of bulk and folded) and bulk ESS with
//! Geyer's initial positive sequence.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::model::{Family, Layout, ModelSpec};
use crate::sampler::PosteriorDraws;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("predicted rate {0} cannot be sampled")]
    Overflow(f64),
}

type Extractor = Box<dyn Fn(&DMatrix<f64>) -> f64>;

/// Draws of named scalar variables, `values[variable][chain][draw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTable {
    pub names: Vec<String>,
    pub values: Vec<Vec<Vec<f64>>>,
    /// 1-based sampler iteration of each draw, per chain.
    pub iterations: Vec<Vec<usize>>,
    /// Log importance weights per chain; all zero when unweighted.
    pub log_weights: Vec<Vec<f64>>,
}

impl DrawTable {
    pub fn n_chains(&self) -> usize {
        self.log_weights.len()
    }

    pub fn n_draws(&self) -> usize {
        self.log_weights.iter().map(Vec::len).sum()
    }

    /// Flattens posterior draws into named variables: sds, time-invariant
    /// coefficients `beta_<term>`, paths `tv_<term>[t]` and the final RW2
    /// slopes `nu_<term>[T]`.
    pub fn from_posterior(draws: &PosteriorDraws) -> Self {
        let layout = &draws.layout;
        let mut names = layout.sigma_names();
        let mut extract: Vec<Extractor> = Vec::new();
        let n_time = draws
            .chains
            .first()
            .and_then(|c| c.states.first())
            .map_or(0, |s| s.nrows());

        let pf = layout.fixed.len();
        for (j, term) in layout.fixed.iter().enumerate() {
            names.push(format!("beta_{term}"));
            extract.push(Box::new(move |s| s[(0, j)]));
        }
        let tv: Vec<(usize, &String)> = layout
            .rw1
            .iter()
            .chain(&layout.rw2)
            .enumerate()
            .map(|(i, t)| (layout.coef_state(pf + i), t))
            .collect();
        for &(state, term) in &tv {
            for t in 0..n_time {
                names.push(format!("tv_{term}[{}]", t + 1));
                extract.push(Box::new(move |s| s[(t, state)]));
            }
        }
        for (i, term) in layout.rw2.iter().enumerate() {
            let state = layout.coef_state(pf + layout.rw1.len() + i) + 1;
            names.push(format!("nu_{term}[{n_time}]"));
            extract.push(Box::new(move |s| s[(n_time - 1, state)]));
        }

        let n_sigma = layout.sigma_dim();
        let mut values = Vec::with_capacity(names.len());
        for k in 0..n_sigma {
            values.push(
                draws
                    .chains
                    .iter()
                    .map(|c| c.sigma.iter().map(|s| s[k]).collect())
                    .collect(),
            );
        }
        for f in &extract {
            values.push(draws.chains.iter().map(|c| c.states.iter().map(f).collect()).collect());
        }
        Self {
            names,
            values,
            iterations: draws.chains.iter().map(|c| c.iterations.clone()).collect(),
            log_weights: draws.chains.iter().map(|c| c.log_weights.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// Variable name without the time index.
    pub variable: String,
    pub time: Option<usize>,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub ess: f64,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn get(&self, variable: &str, time: Option<usize>) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variable == variable && r.time == time)
    }
}

/// Splits `tv_x[12]` into (`tv_x`, Some(12)).
pub fn split_name(name: &str) -> (&str, Option<usize>) {
    if let Some(open) = name.rfind('[') {
        if let Some(inner) = name[open + 1..].strip_suffix(']') {
            if let Ok(t) = inner.parse() {
                return (&name[..open], Some(t));
            }
        }
    }
    (name, None)
}

/// Sum that does not depend on the order of `values`.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// Unnormalised weights `exp(lw - max)`; exactly 1 when all are equal.
pub fn relative_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_weights.iter().map(|l| (l - max).exp()).collect()
}

/// Weighted moments and type-1 quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedStats {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Moments and quantiles of `values` under weights `weights` (not
/// necessarily normalised). The variance uses the reliability-weights
/// correction, which is the usual `n - 1` form for equal weights.
pub fn weighted_stats(values: &[f64], weights: &[f64]) -> WeightedStats {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let sw: f64 = {
        let mut w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        ordered_sum(&mut w)
    };
    let mean = {
        let mut wx: Vec<f64> = pairs.iter().map(|(x, w)| w * x).collect();
        ordered_sum(&mut wx) / sw
    };
    let var = if pairs.len() < 2 {
        0.0
    } else {
        let mut dev: Vec<f64> = pairs.iter().map(|(x, w)| w * (x - mean) * (x - mean)).collect();
        let mut w2: Vec<f64> = pairs.iter().map(|p| p.1 * p.1).collect();
        let denom = sw - ordered_sum(&mut w2) / sw;
        if denom > 0.0 {
            ordered_sum(&mut dev) / denom
        } else {
            0.0
        }
    };
    let quantile = |p: f64| {
        let target = p * sw;
        let mut cum = 0.0;
        for &(x, w) in &pairs {
            cum += w;
            if cum >= target && w > 0.0 {
                return x;
            }
        }
        pairs.last().map_or(f64::NAN, |p| p.0)
    };
    WeightedStats {
        mean,
        sd: var.sqrt(),
        q025: quantile(0.025),
        q50: quantile(0.5),
        q975: quantile(0.975),
    }
}

/// Splits every chain into two halves, dropping the middle draw of odd
/// chains.
fn split_chains(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of pooled average ranks, in the original shape.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut idx: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, v)| v.iter().enumerate().map(move |(i, &x)| (x, c, i)))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = idx.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && idx[j + 1].0 == idx[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &idx[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Classic potential scale reduction of equal-length chains.
fn rhat_basic(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    let (mut means, mut vars): (Vec<f64>, Vec<f64>) = chains.iter().map(|c| mean_var(c)).unzip();
    let m = chains.len() as f64;
    let w = ordered_sum(&mut vars) / m;
    let grand = ordered_sum(&mut means.clone()) / m;
    let mut dev: Vec<f64> = means.iter_mut().map(|x| (*x - grand) * (*x - grand)).collect();
    let b_over_n = ordered_sum(&mut dev) / (m - 1.0);
    if w <= 0.0 {
        return if b_over_n > 0.0 { f64::INFINITY } else { 1.0 };
    }
    (((n - 1.0) / n * w + b_over_n) / w).sqrt()
}

/// Rank-normalised split-R̂: the larger of the bulk and folded values.
/// NaN with fewer than two draws per split half.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    if is_constant(&split) {
        return 1.0;
    }
    let bulk = rhat_basic(&rank_normalize(&split));
    let pooled = {
        let mut all: Vec<f64> = split.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        let k = all.len();
        if k % 2 == 1 {
            all[k / 2]
        } else {
            0.5 * (all[k / 2 - 1] + all[k / 2])
        }
    };
    let folded: Vec<Vec<f64>> = split
        .iter()
        .map(|c| c.iter().map(|x| (x - pooled).abs()).collect())
        .collect();
    let tail = rhat_basic(&rank_normalize(&folded));
    bulk.max(tail)
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains.iter().flatten().next().copied();
    chains.iter().flatten().all(|&x| Some(x) == first)
}

fn autocovariance(c: &[f64], mean: f64, lag: usize) -> f64 {
    let n = c.len();
    (0..n - lag).map(|i| (c[i] - mean) * (c[i + lag] - mean)).sum::<f64>() / n as f64
}

/// Effective sample size of equal-length chains via Geyer's initial
/// positive sequence with monotone adjustment; capped at the draw count.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.first().map_or(0, Vec::len);
    let total = (m * n) as f64;
    if n < 4 {
        return f64::NAN;
    }
    if is_constant(chains) {
        return total;
    }
    let (means, mut vars): (Vec<f64>, Vec<f64>) = chains.iter().map(|c| mean_var(c)).unzip();
    let mean_var_w = ordered_sum(&mut vars) / m as f64;
    let mut var_plus = mean_var_w * (n as f64 - 1.0) / n as f64;
    if m > 1 {
        let grand = ordered_sum(&mut means.clone()) / m as f64;
        let mut dev: Vec<f64> = means.iter().map(|x| (x - grand) * (x - grand)).collect();
        var_plus += ordered_sum(&mut dev) / (m as f64 - 1.0);
    }
    if var_plus <= 0.0 {
        return total;
    }
    let rho = |lag: usize| {
        let mut acov: Vec<f64> = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocovariance(c, mu, lag))
            .collect();
        1.0 - (mean_var_w - ordered_sum(&mut acov) / m as f64) / var_plus
    };

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t + 5 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t;
    if even > 0.0 && max_t + 1 < n {
        rho_hat[max_t + 1] = even;
    }
    let mut k = 1;
    while k + 3 <= max_t {
        if rho_hat[k + 1] + rho_hat[k + 2] > rho_hat[k - 1] + rho_hat[k] {
            rho_hat[k + 1] = (rho_hat[k - 1] + rho_hat[k]) / 2.0;
            rho_hat[k + 2] = rho_hat[k + 1];
        }
        k += 2;
    }
    let tail = if max_t + 1 < n { rho_hat[max_t + 1] } else { 0.0 };
    let tau = (-1.0 + 2.0 * rho_hat[..max_t].iter().sum::<f64>() + tail).max(1.0 / total.log10());
    (total / tau).min(total)
}

/// Bulk ESS: [`ess`] of the rank-normalised split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    if chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let split = split_chains(chains);
    if is_constant(&split) {
        return chains.iter().map(Vec::len).sum::<usize>() as f64;
    }
    ess(&rank_normalize(&split))
}

/// Summary of every variable in the table.
pub fn summarize_table(table: &DrawTable) -> Summary {
    let lw: Vec<f64> = table.log_weights.iter().flatten().copied().collect();
    let w = relative_weights(&lw);
    let rows = table
        .names
        .iter()
        .zip(&table.values)
        .map(|(name, chains)| {
            let flat: Vec<f64> = chains.iter().flatten().copied().collect();
            let stats = weighted_stats(&flat, &w);
            let (variable, time) = split_name(name);
            SummaryRow {
                variable: variable.to_string(),
                time,
                mean: stats.mean,
                sd: stats.sd,
                q025: stats.q025,
                q50: stats.q50,
                q975: stats.q975,
                ess: bulk_ess(chains),
                rhat: split_rhat(chains),
            }
        })
        .collect();
    Summary { rows }
}

pub fn summarize(draws: &PosteriorDraws) -> Summary {
    summarize_table(&DrawTable::from_posterior(draws))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Expected response: the signal, or `u * exp(signal)` for counts.
    Mean,
    /// Draws of new observations.
    Response,
}

/// Predictor values for `h` future time points.
#[derive(Debug, Clone, PartialEq)]
pub struct NewData {
    /// h × p, columns in coefficient order (fixed, rw1, rw2).
    pub x: DMatrix<f64>,
    /// Poisson exposure per future time point.
    pub exposure: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// h × number of posterior draws.
    pub draws: DMatrix<f64>,
    pub log_weights: Vec<f64>,
}

/// Last state of one posterior draw, the starting point of prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalState {
    pub sigma: Vec<f64>,
    pub state: DVector<f64>,
    pub log_weight: f64,
}

pub fn final_states(draws: &PosteriorDraws) -> Vec<FinalState> {
    draws
        .chains
        .iter()
        .flat_map(|c| {
            c.sigma
                .iter()
                .zip(&c.states)
                .zip(&c.log_weights)
                .map(|((s, path), &lw)| FinalState {
                    sigma: s.clone(),
                    state: path.row(path.nrows() - 1).transpose(),
                    log_weight: lw,
                })
        })
        .collect()
}

fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<f64, DiagnosticsError> {
    if rate == 0.0 {
        return Ok(0.0);
    }
    Poisson::new(rate)
        .map(|d| d.sample(rng))
        .map_err(|_| DiagnosticsError::Overflow(rate))
}

/// Projects each final state `h` steps ahead with fresh state noise.
/// `noise_scales` multiplies each noise sd, as the last observed gamma.
pub fn predict_from_final<R: Rng + ?Sized>(
    layout: &Layout,
    noise_scales: &[f64],
    finals: &[FinalState],
    new: &NewData,
    mode: PredictMode,
    rng: &mut R,
) -> Result<Predictions, DiagnosticsError> {
    let h = new.x.nrows();
    if new.x.ncols() != layout.n_coef() {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "new data has {} columns, model has {} coefficients",
            new.x.ncols(),
            layout.n_coef()
        )));
    }
    if new.exposure.len() != h {
        return Err(DiagnosticsError::DimensionMismatch(format!(
            "{} exposure values for {h} time points",
            new.exposure.len()
        )));
    }
    if noise_scales.len() != layout.noise_dim() {
        return Err(DiagnosticsError::DimensionMismatch("noise scales".into()));
    }
    let obs = usize::from(layout.has_obs_sigma());
    let noise_states = layout.noise_states();
    let rw2_start = layout.fixed.len() + layout.rw1.len();
    let mut out = DMatrix::zeros(h, finals.len());
    for (d, fin) in finals.iter().enumerate() {
        if fin.state.len() != layout.state_dim() || fin.sigma.len() != layout.sigma_dim() {
            return Err(DiagnosticsError::DimensionMismatch("posterior draw".into()));
        }
        let mut a = fin.state.clone();
        for j in 0..h {
            for i in 0..layout.rw2.len() {
                let s = rw2_start + 2 * i;
                a[s] += a[s + 1];
            }
            for (i, &s) in noise_states.iter().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                a[s] += noise_scales[i] * fin.sigma[obs + i] * e;
            }
            let signal: f64 = (0..layout.n_coef())
                .map(|c| new.x[(j, c)] * a[layout.coef_state(c)])
                .sum();
            out[(j, d)] = match (layout.family, mode) {
                (Family::Gaussian, PredictMode::Mean) => signal,
                (Family::Gaussian, PredictMode::Response) => {
                    let e: f64 = rng.sample(StandardNormal);
                    signal + fin.sigma[0] * e
                }
                (Family::Poisson, PredictMode::Mean) => new.exposure[j] * signal.exp(),
                (Family::Poisson, PredictMode::Response) => sample_poisson(new.exposure[j] * signal.exp(), rng)?,
            };
        }
    }
    Ok(Predictions {
        draws: out,
        log_weights: finals.iter().map(|f| f.log_weight).collect(),
    })
}

/// Out-of-sample predictive draws for new predictor rows.
pub fn predict<R: Rng + ?Sized>(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    new: &NewData,
    mode: PredictMode,
    rng: &mut R,
) -> Result<Predictions, DiagnosticsError> {
    predict_from_final(
        &spec.layout,
        &spec.final_noise_scales(),
        &final_states(draws),
        new,
        mode,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    Sd,
    Min,
    Max,
}

impl Statistic {
    pub fn apply(self, v: &[f64]) -> f64 {
        match self {
            Statistic::Mean => v.iter().sum::<f64>() / v.len() as f64,
            Statistic::Sd => {
                if v.len() < 2 {
                    0.0
                } else {
                    mean_var(v).1.sqrt()
                }
            }
            Statistic::Min => v.iter().copied().fold(f64::INFINITY, f64::min),
            Statistic::Max => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpCheck {
    pub statistic: Statistic,
    pub observed: f64,
    pub replicates: Vec<f64>,
    /// Weighted share of replicates with statistic at or above the observed.
    pub tail_prob: f64,
}

/// Simulates one replicate series per posterior draw (observed times only)
/// and compares summary statistics with the data. Replicates ignore the
/// importance weights; tail probabilities use them.
pub fn pp_check<R: Rng + ?Sized>(
    spec: &ModelSpec,
    draws: &PosteriorDraws,
    stats: &[Statistic],
    rng: &mut R,
) -> Result<Vec<PpCheck>, DiagnosticsError> {
    let observed_t: Vec<usize> = (0..spec.n_time()).filter(|&t| spec.y[t].is_some()).collect();
    let y_obs: Vec<f64> = observed_t.iter().map(|&t| spec.y[t].unwrap()).collect();
    let mut reps: Vec<Vec<f64>> = vec![Vec::new(); stats.len()];
    let mut lw = Vec::new();
    let mut y_rep = vec![0.0; observed_t.len()];
    for chain in &draws.chains {
        for ((sigma, path), &w) in chain.sigma.iter().zip(&chain.states).zip(&chain.log_weights) {
            for (k, &t) in observed_t.iter().enumerate() {
                let theta = spec.signal_row(t).dot(&path.row(t));
                y_rep[k] = match spec.family() {
                    Family::Gaussian => {
                        let e: f64 = rng.sample(StandardNormal);
                        theta + sigma[0] * e
                    }
                    Family::Poisson => sample_poisson(spec.exposure[t] * theta.exp(), rng)?,
                };
            }
            for (s, r) in stats.iter().zip(reps.iter_mut()) {
                r.push(s.apply(&y_rep));
            }
            lw.push(w);
        }
    }
    let w = relative_weights(&lw);
    let sw: f64 = w.iter().sum();
    Ok(stats
        .iter()
        .zip(reps)
        .map(|(&statistic, replicates)| {
            let observed = statistic.apply(&y_obs);
            let above: f64 = replicates
                .iter()
                .zip(&w)
                .filter(|(r, _)| **r >= observed)
                .map(|(_, w)| w)
                .sum();
            PpCheck {
                statistic,
                observed,
                replicates,
                tail_prob: above / sw,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn table(chains: Vec<Vec<f64>>, lw: Option<Vec<Vec<f64>>>) -> DrawTable {
        let lw = lw.unwrap_or_else(|| chains.iter().map(|c| vec![0.0; c.len()]).collect());
        DrawTable {
            names: vec!["v".into()],
            iterations: chains.iter().map(|c| (1..=c.len()).collect()).collect(),
            values: vec![chains],
            log_weights: lw,
        }
    }

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn constant_draws() {
        let s = summarize_table(&table(vec![vec![2.5; 10], vec![2.5; 10]], None));
        let r = &s.rows[0];
        assert_eq!(r.sd, 0.0);
        assert_eq!((r.q025, r.q50, r.q975, r.mean), (2.5, 2.5, 2.5, 2.5));
        assert_eq!(r.rhat, 1.0);
        assert_eq!(r.ess, 20.0);
    }

    #[test]
    fn equal_weights_equal_unweighted() {
        let chains = vec![normals(500, 1), normals(500, 2)];
        let plain = summarize_table(&table(chains.clone(), None));
        let same = summarize_table(&table(chains, Some(vec![vec![-3.7; 500]; 2])));
        assert_eq!(plain, same);
    }

    #[test]
    fn iid_normal_summary() {
        let draws = normals(100_000, 7);
        let chains = vec![draws[..50_000].to_vec(), draws[50_000..].to_vec()];
        let r = summarize_table(&table(chains, None)).rows.remove(0);
        assert!(r.mean.abs() < 0.02);
        assert!((r.q025 + 1.959_963_984_540_054).abs() < 0.03);
        assert!((r.q975 - 1.959_963_984_540_054).abs() < 0.03);
        assert!((r.sd - 1.0).abs() < 0.01);
        assert!(r.rhat < 1.01);
    }

    #[test]
    fn ess_of_independent_and_correlated_draws() {
        let n = 4000;
        let iid = vec![normals(n, 3), normals(n, 4)];
        let e = bulk_ess(&iid);
        assert!((e / (2 * n) as f64 - 1.0).abs() < 0.1, "{e}");

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ar: Vec<Vec<f64>> = (0..2)
            .map(|_| {
                let mut x = 0.0;
                (0..n)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        x = 0.9 * x + e;
                        x
                    })
                    .collect()
            })
            .collect();
        let e = bulk_ess(&ar);
        assert!(e < 0.15 * (2 * n) as f64, "{e}");
        assert!(e > 0.02 * (2 * n) as f64, "{e}");
    }

    #[test]
    fn rhat_flags_disagreeing_chains() {
        let a = normals(1000, 8);
        let b: Vec<f64> = normals(1000, 9).iter().map(|x| x + 3.0).collect();
        assert!(split_rhat(&[a.clone(), b]) > 1.5);
        assert!(split_rhat(&[a.clone(), normals(1000, 10)]) < 1.01);
        assert!(split_rhat(&[a[..3].to_vec()]).is_nan());
    }

    #[test]
    fn relabelling_chains_changes_nothing() {
        let chains = vec![normals(300, 11), normals(300, 12), normals(300, 13)];
        let lw = vec![normals(300, 14), normals(300, 15), normals(300, 16)];
        let a = summarize_table(&table(chains.clone(), Some(lw.clone())));
        let perm = |v: &Vec<Vec<f64>>| vec![v[2].clone(), v[0].clone(), v[1].clone()];
        let b = summarize_table(&table(perm(&chains), Some(perm(&lw))));
        assert_eq!(a, b);
    }

    #[test]
    fn weighted_quantiles_follow_weights() {
        let stats = weighted_stats(&[1.0, 2.0, 3.0], &[0.0, 0.0, 5.0]);
        assert_eq!((stats.q025, stats.q50, stats.q975), (3.0, 3.0, 3.0));
        assert_eq!(stats.mean, 3.0);
        let stats = weighted_stats(&[1.0, 2.0, 3.0, 4.0], &[1.0; 4]);
        assert_eq!((stats.q025, stats.q50, stats.q975), (1.0, 2.0, 4.0));
        assert!((stats.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn split_name_parses_time() {
        assert_eq!(split_name("tv_x1[12]"), ("tv_x1", Some(12)));
        assert_eq!(split_name("tv_(Intercept)[1]"), ("tv_(Intercept)", Some(1)));
        assert_eq!(split_name("sigma_y"), ("sigma_y", None));
    }
}
