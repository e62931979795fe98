//! `tvreg` command-line tool.
//!
//! ```text
//! tvreg fit --data d.csv --formula "y ~ 0 + rw1(~ x1 + x2)" --chains 2 --seed 1 --out run1/
//! tvreg summary --draws run1/draws.csv
//! tvreg predict --fit run1/ --data new.csv
//! tvreg simulate --n 100 --seed 1 --out d.csv
//! ```
//!
//! Exit codes: 0 success, 1 output I/O failure, 2 usage, 3 data, 4 numerical.

mod output;
mod plot;

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tvreg::diagnostics::{predict_from_final, relative_weights, summarize_table, weighted_stats, FinalState};
use tvreg::{
    build_model, parse_formula, run, synthetic, Column, DataTable, DrawTable, Family, Layout, ModelError, ModelOptions,
    NewData, PredictMode, Prior, SamplerConfig, SamplerError,
};

use output::{Staging, META_SCHEMA_VERSION};

#[derive(Debug)]
enum CliError {
    Io(String),
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "tvreg",
    version,
    about = "Bayesian regression with time-varying coefficients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model and write draws, summaries and coefficient paths.
    Fit(FitArgs),
    /// Predict from a saved fit for new predictor rows.
    Predict(PredictArgs),
    /// Write the synthetic benchmark data set and its true coefficient paths.
    Simulate(SimulateArgs),
    /// Recompute the summary table from a draws file.
    Summary(SummaryArgs),
}

#[derive(Args)]
struct FitArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    formula: String,
    #[arg(long, default_value = "gaussian")]
    family: String,
    /// Exposure column (poisson family).
    #[arg(long)]
    exposure: Option<String>,
    #[arg(long, default_value_t = 2000)]
    iter: usize,
    /// Defaults to half of `--iter`.
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.234)]
    target_accept: f64,
    /// Noise-scaling columns for rw1 terms, `TERM=COLUMN,...`.
    #[arg(long)]
    gamma: Option<String>,
    /// Prior of the observation sd, `MEAN,SD`.
    #[arg(long, default_value = "0,10")]
    sigma_y: String,
    /// Prior of time-invariant coefficients, `MEAN,SD`.
    #[arg(long, default_value = "0,10")]
    beta: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Mean,
    Response,
}

#[derive(Args)]
struct PredictArgs {
    /// Output directory of a previous `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Predictor values for the future time points, one row each.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "response")]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Data CSV; the true paths go next to it as `<stem>_truth.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SummaryArgs {
    #[arg(long)]
    draws: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_prior(text: &str, flag: &str) -> Result<Prior> {
    let bad = || CliError::Usage(format!("--{flag} expects MEAN,SD with SD > 0, got `{text}`"));
    let (m, s) = text.split_once(',').ok_or_else(bad)?;
    let mean: f64 = m.trim().parse().map_err(|_| bad())?;
    let sd: f64 = s.trim().parse().map_err(|_| bad())?;
    if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
        return Err(bad());
    }
    Ok(Prior::new(mean, sd))
}

fn parse_gamma(text: &str) -> Result<Vec<(String, String)>> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| {
            pair.split_once('=')
                .map(|(t, c)| (t.trim().to_string(), c.trim().to_string()))
                .ok_or_else(|| CliError::Usage(format!("--gamma expects TERM=COLUMN pairs, got `{pair}`")))
        })
        .collect()
}

fn read_table(path: &Path) -> Result<DataTable> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    DataTable::from_csv(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn fit(args: FitArgs) -> Result<String> {
    let started = Instant::now();
    let family: Family = args.family.parse().map_err(CliError::Usage)?;
    let ast = parse_formula(&args.formula).map_err(|e| CliError::Usage(format!("formula: {e}")))?;
    let options = ModelOptions {
        family,
        exposure: args.exposure.clone(),
        gamma: args.gamma.as_deref().map(parse_gamma).transpose()?.unwrap_or_default(),
        sigma_y_prior: parse_prior(&args.sigma_y, "sigma-y")?,
        fixed_beta_prior: parse_prior(&args.beta, "beta")?,
    };
    let config = SamplerConfig {
        iter: args.iter,
        warmup: args.warmup.unwrap_or(args.iter / 2),
        chains: args.chains,
        seed: args.seed,
        target_accept: args.target_accept,
        ..SamplerConfig::new(args.iter)
    };
    config.validate()?;
    let data = read_table(&args.data)?;
    let spec = build_model(&ast, &data, &options)?;

    let draws = run(&spec, &config)?;
    let table = DrawTable::from_posterior(&draws);
    let summary = summarize_table(&table);

    let mut staging = Staging::new(&args.out)?;
    staging.write("draws.csv", |w| output::write_draws(w, &table))?;
    staging.write("summary.csv", |w| output::write_summary(w, &summary))?;
    staging.write("coef_paths.csv", |w| output::write_coef_paths(w, &summary))?;
    if !spec.layout.rw1.is_empty() || !spec.layout.rw2.is_empty() {
        staging.write("coef_paths.svg", |w| plot::write_svg(w, &summary))?;
    }
    let meta = serde_json::json!({
        "schema_version": META_SCHEMA_VERSION,
        "tool": "tvreg",
        "version": env!("CARGO_PKG_VERSION"),
        "formula": args.formula,
        "formula_canonical": ast.to_string(),
        "family": family,
        "exposure": args.exposure,
        "gamma": options.gamma.iter().map(|(t, c)| serde_json::json!({"term": t, "column": c})).collect::<Vec<_>>(),
        "priors": { "sigma_y": options.sigma_y_prior, "beta": options.fixed_beta_prior },
        "data": args.data.display().to_string(),
        "n_time": spec.n_time(),
        "seed": args.seed,
        "config": {
            "iter": config.iter,
            "warmup": config.warmup,
            "chains": config.chains,
            "target_accept": config.target_accept,
            "init_jitter": config.init_jitter,
            "steps_per_iter": config.steps_per_iter,
        },
        "layout": spec.layout,
        "final_noise_scales": spec.final_noise_scales(),
        "accept_rate": draws.chains.iter().map(|c| c.accept_rate).collect::<Vec<_>>(),
        "weight_ess": draws.weight_ess(),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
    });
    staging.write("meta.json", |w| {
        serde_json::to_writer_pretty(&mut *w, &meta)?;
        writeln!(w)
    })?;
    staging.commit()?;
    Ok(format!(
        "wrote {} draws of {} variables to {}",
        draws.n_kept(),
        table.names.len(),
        args.out.display()
    ))
}

fn summary(args: SummaryArgs) -> Result<String> {
    let file = File::open(&args.draws).map_err(|e| CliError::Data(format!("{}: {e}", args.draws.display())))?;
    let table = output::read_draws(file).map_err(|e| CliError::Data(format!("{}: {e}", args.draws.display())))?;
    let summary = summarize_table(&table);
    emit(args.out.as_deref(), |w| output::write_summary(w, &summary))
}

/// Writes to `path` atomically, or to stdout.
fn emit(path: Option<&Path>, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<String> {
    match path {
        Some(p) => {
            output::write_atomic(p, body)?;
            Ok(format!("wrote {}", p.display()))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            body(&mut lock)?;
            Ok(String::new())
        }
    }
}

fn load_meta(dir: &Path) -> Result<serde_json::Value> {
    let path = dir.join("meta.json");
    let file = File::open(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let meta: serde_json::Value =
        serde_json::from_reader(file).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if meta["schema_version"] != META_SCHEMA_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported schema version {}",
            path.display(),
            meta["schema_version"]
        )));
    }
    Ok(meta)
}

/// Rebuilds the last state of every saved draw from the draws table.
fn final_states(table: &DrawTable, layout: &Layout, n_time: usize) -> Result<Vec<FinalState>> {
    let index = |name: &str| {
        table
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Data(format!("draws file lacks `{name}`")))
    };
    let sigma_idx: Vec<usize> = layout.sigma_names().iter().map(|n| index(n)).collect::<Result<_>>()?;
    let pf = layout.fixed.len();
    let mut coef_idx = Vec::new();
    for (j, term) in layout.coef_names().enumerate() {
        let name = if j < pf {
            format!("beta_{term}")
        } else {
            format!("tv_{term}[{n_time}]")
        };
        coef_idx.push(index(&name)?);
    }
    let slope_idx: Vec<usize> = layout
        .rw2
        .iter()
        .map(|t| index(&format!("nu_{t}[{n_time}]")))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for c in 0..table.n_chains() {
        for d in 0..table.log_weights[c].len() {
            let v = |k: usize| table.values[k][c][d];
            let mut state = DVector::zeros(layout.state_dim());
            for (j, &k) in coef_idx.iter().enumerate() {
                state[layout.coef_state(j)] = v(k);
            }
            for (i, &k) in slope_idx.iter().enumerate() {
                state[layout.coef_state(pf + layout.rw1.len() + i) + 1] = v(k);
            }
            out.push(FinalState {
                sigma: sigma_idx.iter().map(|&k| v(k)).collect(),
                state,
                log_weight: table.log_weights[c][d],
            });
        }
    }
    Ok(out)
}

fn predict(args: PredictArgs) -> Result<String> {
    let meta = load_meta(&args.fit)?;
    let layout: Layout =
        serde_json::from_value(meta["layout"].clone()).map_err(|e| CliError::Data(format!("meta.json layout: {e}")))?;
    let n_time = meta["n_time"]
        .as_u64()
        .ok_or_else(|| CliError::Data("meta.json lacks n_time".into()))? as usize;
    let scales: Vec<f64> = serde_json::from_value(meta["final_noise_scales"].clone())
        .map_err(|e| CliError::Data(format!("meta.json final_noise_scales: {e}")))?;
    let draws_path = args.fit.join("draws.csv");
    let file = File::open(&draws_path).map_err(|e| CliError::Data(format!("{}: {e}", draws_path.display())))?;
    let table = output::read_draws(file).map_err(|e| CliError::Data(format!("{}: {e}", draws_path.display())))?;
    let finals = final_states(&table, &layout, n_time)?;

    let data = read_table(&args.data)?;
    let h = data.n_rows();
    if h == 0 {
        return Err(CliError::Data("new data has no rows".into()));
    }
    let numeric = |name: &str| -> Result<Vec<f64>> {
        match data.get(name) {
            Some(Column::Numeric(v)) => v
                .iter()
                .enumerate()
                .map(|(r, x)| {
                    x.filter(|x| x.is_finite())
                        .ok_or_else(|| CliError::Data(format!("column `{name}` has a missing value in row {}", r + 1)))
                })
                .collect(),
            Some(Column::Text(_)) => Err(CliError::Data(format!("column `{name}` is not numeric"))),
            None => Err(CliError::Data(format!("unknown column `{name}`"))),
        }
    };
    let mut x = DMatrix::zeros(h, layout.n_coef());
    for (j, term) in layout.coef_names().enumerate() {
        let col = if term == tvreg::formula::INTERCEPT {
            vec![1.0; h]
        } else {
            numeric(term)?
        };
        x.set_column(j, &DVector::from_vec(col));
    }
    let exposure = match meta["exposure"].as_str() {
        Some(name) if layout.family == Family::Poisson => {
            let u = numeric(name)?;
            if let Some(bad) = u.iter().find(|u| **u <= 0.0) {
                return Err(CliError::Data(format!("exposure must be positive, got {bad}")));
            }
            u
        }
        _ => vec![1.0; h],
    };
    let mode = match args.mode {
        Mode::Mean => PredictMode::Mean,
        Mode::Response => PredictMode::Response,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pred = predict_from_final(&layout, &scales, &finals, &NewData { x, exposure }, mode, &mut rng)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let w = relative_weights(&pred.log_weights);
    emit(args.out.as_deref(), |out| {
        writeln!(out, "time,mean,sd,q2.5,q50,q97.5")?;
        for j in 0..h {
            let row: Vec<f64> = pred.draws.row(j).iter().copied().collect();
            let s = weighted_stats(&row, &w);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                n_time + j + 1,
                s.mean,
                s.sd,
                s.q025,
                s.q50,
                s.q975
            )?;
        }
        Ok(())
    })
}

fn simulate(args: SimulateArgs) -> Result<String> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let bench = synthetic::benchmark(args.n, args.seed);
    let stem = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    let truth_path = args.out.with_file_name(format!("{stem}_truth.csv"));
    output::write_atomic(&args.out, |w| output::write_table(w, &bench.data()))?;
    output::write_atomic(&truth_path, |w| output::write_table(w, &bench.truth()))?;
    Ok(format!("wrote {} and {}", args.out.display(), truth_path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help and --version
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("usage error").trim();
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => simulate(a),
        Command::Summary(a) => summary(a),
    };
    match result {
        Ok(msg) => {
            if !msg.is_empty() {
                eprintln!("{msg}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
