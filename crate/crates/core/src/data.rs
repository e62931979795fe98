//! Column-oriented data tables read from CSV.

use std::io::Read;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Parsed numbers; `None` marks an empty cell.
    Numeric(Vec<Option<f64>>),
    /// At least one non-empty cell failed to parse as a number.
    Text(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
}

/// Named columns in header order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataTable {
    columns: Vec<(String, Column)>,
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) a complete numeric column.
    pub fn with_column(self, name: &str, values: impl IntoIterator<Item = f64>) -> Self {
        self.with_optional_column(name, values.into_iter().map(Some))
    }

    pub fn with_optional_column(mut self, name: &str, values: impl IntoIterator<Item = Option<f64>>) -> Self {
        self.insert(name, Column::Numeric(values.into_iter().collect()));
        self
    }

    pub fn insert(&mut self, name: &str, column: Column) {
        match self.columns.iter_mut().find(|(n, _)| n == name) {
            Some((_, c)) => *c = column,
            None => self.columns.push((name.to_string(), column)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// Number of rows of the first column (0 for an empty table).
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |(_, c)| c.len())
    }

    /// Reads a headed CSV. Empty cells become missing values; a column with
    /// any non-numeric, non-empty cell is kept as text.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for record in rdr.records() {
            let record = record?;
            for (col, cell) in raw.iter_mut().zip(record.iter()) {
                col.push(cell.to_string());
            }
        }
        let mut table = DataTable::new();
        for (name, cells) in headers.iter().zip(raw) {
            if table.get(name).is_some() {
                return Err(DataError::DuplicateColumn(name.to_string()));
            }
            let parsed: Option<Vec<Option<f64>>> = cells
                .iter()
                .map(|c| {
                    if c.is_empty() {
                        Some(None)
                    } else {
                        c.parse::<f64>().ok().map(Some)
                    }
                })
                .collect();
            let column = match parsed {
                Some(values) => Column::Numeric(values),
                None => Column::Text(cells),
            };
            table.columns.push((name.to_string(), column));
        }
        Ok(table)
    }
}
