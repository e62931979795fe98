//! Output files and their atomic placement.
//!
//! Floats are printed with Rust's shortest round-trip formatting, so a
//! value read back from any CSV written here is bit-identical.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use tempfile::{NamedTempFile, TempDir};
use tvreg::{Column, DataTable, DrawTable, Summary};

/// Version of the meta.json layout. Bumped on any incompatible change.
pub const META_SCHEMA_VERSION: u64 = 1;

pub const LOG_WEIGHT: &str = "lweight";

/// Files the `fit` subcommand may produce; stale ones are removed on commit.
const FIT_FILES: [&str; 5] = [
    "draws.csv",
    "summary.csv",
    "coef_paths.csv",
    "coef_paths.svg",
    "meta.json",
];

/// A directory of finished files that becomes visible only on `commit`.
/// Dropping it without committing deletes everything written so far.
pub struct Staging {
    target: PathBuf,
    dir: TempDir,
    written: Vec<String>,
}

impl Staging {
    pub fn new(target: &Path) -> io::Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent)?;
        let dir = tempfile::Builder::new().prefix(".tvreg-staging-").tempdir_in(&parent)?;
        Ok(Self {
            target: target.to_path_buf(),
            dir,
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
        let mut w = BufWriter::new(fs::File::create(self.dir.path().join(name))?);
        body(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        self.written.push(name.to_string());
        Ok(())
    }

    /// Moves the staged files into the target directory. A fresh target is
    /// renamed into place in one step; an existing one receives each file by
    /// rename.
    pub fn commit(self) -> io::Result<()> {
        if !self.target.exists() {
            let staged = self.dir.keep();
            return fs::rename(&staged, &self.target).inspect_err(|_| {
                let _ = fs::remove_dir_all(&staged);
            });
        }
        for name in FIT_FILES {
            if !self.written.iter().any(|w| w == name) {
                match fs::remove_file(self.target.join(name)) {
                    Err(e) if e.kind() != io::ErrorKind::NotFound => return Err(e),
                    _ => {}
                }
            }
        }
        for name in &self.written {
            fs::rename(self.dir.path().join(name), self.target.join(name))?;
        }
        Ok(())
    }
}

/// Writes one file through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> io::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(parent)?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Long format: `chain,iteration,variable,value`, chains numbered from 1,
/// with the draw's log weight as variable `lweight`.
pub fn write_draws(w: &mut dyn Write, table: &DrawTable) -> io::Result<()> {
    writeln!(w, "chain,iteration,variable,value")?;
    for c in 0..table.n_chains() {
        for (d, iteration) in table.iterations[c].iter().enumerate() {
            for (k, name) in table.names.iter().enumerate() {
                writeln!(w, "{},{},{},{}", c + 1, iteration, name, table.values[k][c][d])?;
            }
            writeln!(w, "{},{},{},{}", c + 1, iteration, LOG_WEIGHT, table.log_weights[c][d])?;
        }
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Format { line: u64, msg: String },
    #[error("draw (chain {chain}, iteration {iteration}) lacks `{variable}`")]
    Missing {
        chain: String,
        iteration: usize,
        variable: String,
    },
}

/// Reads a draws file back. Variables keep their order of first
/// appearance, chains and draws their file order.
pub fn read_draws(reader: impl Read) -> Result<DrawTable, ReadError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["chain", "iteration", "variable", "value"] {
        return Err(ReadError::Format {
            line: 1,
            msg: "expected header chain,iteration,variable,value".into(),
        });
    }

    let mut names: Vec<String> = Vec::new();
    let mut var_index: HashMap<String, usize> = HashMap::new();
    let mut chain_ids: Vec<String> = Vec::new();
    let mut chain_index: HashMap<String, usize> = HashMap::new();
    // per chain: iterations in order and their (variable -> value) cells
    let mut iterations: Vec<Vec<usize>> = Vec::new();
    let mut draw_index: Vec<HashMap<usize, usize>> = Vec::new();
    let mut cells: Vec<Vec<HashMap<usize, f64>>> = Vec::new();
    let mut weights: Vec<Vec<Option<f64>>> = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |msg: String| ReadError::Format { line, msg };
        let (chain, iteration, variable, value) = (&record[0], &record[1], &record[2], &record[3]);
        let iteration: usize = iteration
            .parse()
            .map_err(|_| bad(format!("bad iteration `{iteration}`")))?;
        let value: f64 = value.parse().map_err(|_| bad(format!("bad value `{value}`")))?;

        let c = *chain_index.entry(chain.to_string()).or_insert_with(|| {
            chain_ids.push(chain.to_string());
            iterations.push(Vec::new());
            draw_index.push(HashMap::new());
            cells.push(Vec::new());
            weights.push(Vec::new());
            chain_ids.len() - 1
        });
        let d = *draw_index[c].entry(iteration).or_insert_with(|| {
            iterations[c].push(iteration);
            cells[c].push(HashMap::new());
            weights[c].push(None);
            iterations[c].len() - 1
        });
        if variable == LOG_WEIGHT {
            weights[c][d] = Some(value);
            continue;
        }
        let k = *var_index.entry(variable.to_string()).or_insert_with(|| {
            names.push(variable.to_string());
            names.len() - 1
        });
        if cells[c][d].insert(k, value).is_some() {
            return Err(bad(format!("duplicate `{variable}` in iteration {iteration}")));
        }
    }

    let missing = |c: usize, d: usize, variable: &str| ReadError::Missing {
        chain: chain_ids[c].clone(),
        iteration: iterations[c][d],
        variable: variable.to_string(),
    };
    let mut values = vec![vec![Vec::new(); chain_ids.len()]; names.len()];
    let mut log_weights = Vec::with_capacity(chain_ids.len());
    for c in 0..chain_ids.len() {
        let mut lw = Vec::with_capacity(iterations[c].len());
        for d in 0..iterations[c].len() {
            for (k, name) in names.iter().enumerate() {
                values[k][c].push(*cells[c][d].get(&k).ok_or_else(|| missing(c, d, name))?);
            }
            lw.push(weights[c][d].ok_or_else(|| missing(c, d, LOG_WEIGHT))?);
        }
        log_weights.push(lw);
    }
    Ok(DrawTable {
        names,
        values,
        iterations,
        log_weights,
    })
}

fn time_cell(time: Option<usize>) -> String {
    time.map(|t| t.to_string()).unwrap_or_default()
}

/// `variable,time,mean,sd,q2.5,q50,q97.5,ess,rhat`; `time` is empty for
/// time-invariant quantities.
pub fn write_summary(w: &mut dyn Write, summary: &Summary) -> io::Result<()> {
    writeln!(w, "variable,time,mean,sd,q2.5,q50,q97.5,ess,rhat")?;
    for r in &summary.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.variable,
            time_cell(r.time),
            r.mean,
            r.sd,
            r.q025,
            r.q50,
            r.q975,
            r.ess,
            r.rhat
        )?;
    }
    Ok(())
}

/// Rows of the coefficient-path table: the `tv_` variables.
pub fn coef_path_rows(summary: &Summary) -> impl Iterator<Item = (&str, usize, f64, f64, f64)> {
    summary.rows.iter().filter_map(|r| {
        let term = r.variable.strip_prefix("tv_")?;
        Some((term, r.time?, r.mean, r.q025, r.q975))
    })
}

/// `variable,time,mean,lwr,upr` with 95% intervals; header only when the
/// model has no time-varying coefficients.
pub fn write_coef_paths(w: &mut dyn Write, summary: &Summary) -> io::Result<()> {
    writeln!(w, "variable,time,mean,lwr,upr")?;
    for (term, time, mean, lwr, upr) in coef_path_rows(summary) {
        writeln!(w, "{term},{time},{mean},{lwr},{upr}")?;
    }
    Ok(())
}

pub fn write_table(w: &mut dyn Write, table: &DataTable) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let names: Vec<&str> = table.names().collect();
    out.write_record(&names)?;
    for row in 0..table.n_rows() {
        let record = names.iter().map(|n| match table.get(n) {
            Some(Column::Numeric(v)) => v[row].map(|x| x.to_string()).unwrap_or_default(),
            Some(Column::Text(v)) => v[row].clone(),
            None => String::new(),
        });
        out.write_record(record)?;
    }
    out.flush()
}
