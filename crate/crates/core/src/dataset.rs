//! Price ingestion, calendar alignment, forward fill and log returns.
//!
//! The pipeline order is fixed: prices are aligned on the union calendar,
//! gaps are forward filled, and only then are returns taken. A series that
//! did not trade on a calendar date therefore contributes a zero return for
//! that date.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default bound on consecutive forward-filled rows.
pub const DEFAULT_MAX_LOOKBACK: usize = 5;

/// Order in which the panel is built, recorded in run manifests.
pub const PIPELINE_ORDER: &str = "align-fill-then-return";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {message}")]
    Csv { path: String, message: String },
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: cannot parse date `{value}` (expected YYYY-MM-DD)")]
    BadDate { row: usize, value: String },
    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    BadNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("duplicate series name `{0}`")]
    DuplicateSeries(String),
    #[error("column `{column}` starts with missing values (first observation on {first_valid:?})")]
    LeadingMissing {
        column: String,
        first_valid: Option<NaiveDate>,
    },
    #[error("column `{column}`: gap of {length} rows ending {date} exceeds max lookback {max_lookback}")]
    GapTooLong {
        column: String,
        date: NaiveDate,
        length: usize,
        max_lookback: usize,
    },
    #[error("column `{column}` on {date}: price {value} is not strictly positive and finite")]
    NonPositive {
        column: String,
        date: NaiveDate,
        value: f64,
    },
    #[error("column `{column}` on {date}: missing value (run fill_missing first)")]
    Unfilled { column: String, date: NaiveDate },
    #[error("column `{column}` has {count} observations, need at least 2")]
    TooShort { column: String, count: usize },
    #[error("max_lookback must be at least 1")]
    ZeroLookback,
    #[error("panel shape mismatch: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Close prices on a shared calendar; `None` marks a missing quote.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<NaiveDate>,
    pub series_names: Vec<String>,
    /// Row-major T x N.
    pub prices: Vec<Vec<Option<f64>>>,
}

/// Daily log returns, (T-1) x N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnPanel {
    pub dates: Vec<NaiveDate>,
    pub series_names: Vec<String>,
    #[serde(with = "crate::linalg::rows")]
    pub returns: DMatrix<f64>,
}

fn parse_date(raw: &str, row: usize) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| DatasetError::BadDate {
        row,
        value: raw.to_string(),
    })
}

/// Reads a price CSV. `value_columns` empty means every non-date column.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn ingest_csv(
    path: impl AsRef<Path>,
    date_column: &str,
    value_columns: &[String],
) -> Result<PricePanel> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let csv_err = |e: csv::Error| DatasetError::Csv {
        path: shown.clone(),
        message: e.to_string(),
    };
    let header: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();

    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let date_idx = find(date_column)?;
    let names: Vec<String> = if value_columns.is_empty() {
        header.iter().enumerate().filter(|(i, _)| *i != date_idx).map(|(_, h)| h.clone()).collect()
    } else {
        value_columns.to_vec()
    };
    let value_idx = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
    check_unique_names(&names)?;

    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    let mut seen = HashSet::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(csv_err)?;
        let date = parse_date(record.get(date_idx).unwrap_or(""), line)?;
        if !seen.insert(date) {
            return Err(DatasetError::DuplicateDate(date));
        }
        let mut values = Vec::with_capacity(value_idx.len());
        for (&idx, name) in value_idx.iter().zip(&names) {
            let cell = record.get(idx).unwrap_or("");
            if cell.is_empty() {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| DatasetError::BadNumber {
                    row: line,
                    column: name.clone(),
                    value: cell.to_string(),
                })?;
                values.push(Some(v));
            }
        }
        rows.push((date, values));
    }
    rows.sort_by_key(|(d, _)| *d);
    let (dates, prices) = rows.into_iter().unzip();
    Ok(PricePanel {
        dates,
        series_names: names,
        prices,
    })
}

fn check_unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(DatasetError::DuplicateSeries(n.clone()));
        }
    }
    Ok(())
}

/// Merges panels on the union of their calendars. Dates absent from a
/// panel become missing cells.
pub fn align(panels: &[PricePanel]) -> Result<PricePanel> {
    let names: Vec<String> = panels.iter().flat_map(|p| p.series_names.iter().cloned()).collect();
    check_unique_names(&names)?;
    let calendar: BTreeSet<NaiveDate> = panels.iter().flat_map(|p| p.dates.iter().copied()).collect();
    let dates: Vec<NaiveDate> = calendar.into_iter().collect();
    let mut prices = vec![Vec::with_capacity(names.len()); dates.len()];
    for panel in panels {
        let lookup: BTreeMap<NaiveDate, &Vec<Option<f64>>> =
            panel.dates.iter().copied().zip(panel.prices.iter()).collect();
        for (row, date) in prices.iter_mut().zip(&dates) {
            match lookup.get(date) {
                Some(values) => row.extend(values.iter().copied()),
                None => row.extend(std::iter::repeat_n(None, panel.series_names.len())),
            }
        }
    }
    Ok(PricePanel {
        dates,
        series_names: names,
        prices,
    })
}

impl PricePanel {
    pub fn n_series(&self) -> usize {
        self.series_names.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Reorders (or subsets) columns by index.
    pub fn select_columns(&self, order: &[usize]) -> PricePanel {
        PricePanel {
            dates: self.dates.clone(),
            series_names: order.iter().map(|&j| self.series_names[j].clone()).collect(),
            prices: self.prices.iter().map(|row| order.iter().map(|&j| row[j]).collect()).collect(),
        }
    }

    /// Writes the panel in the input CSV layout; missing cells are empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = std::iter::once("date".to_string()).chain(self.series_names.iter().cloned());
        let rows = self.dates.iter().zip(&self.prices).map(|(d, row)| {
            std::iter::once(d.to_string())
                .chain(row.iter().map(|v| v.map(|x| format!("{x}")).unwrap_or_default()))
                .collect::<Vec<_>>()
        });
        write_rows(path.as_ref(), header.collect(), rows)
    }
}

fn write_rows(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let shown = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| DatasetError::Csv {
        path: shown.clone(),
        message: e.to_string(),
    })?;
    let err = |e: csv::Error| DatasetError::Csv {
        path: shown.clone(),
        message: e.to_string(),
    };
    w.write_record(&header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| DatasetError::Io {
        path: shown.clone(),
        source,
    })
}

/// Forward fills each missing cell from the most recent prior value in the
/// same column, allowing at most `max_lookback` consecutive filled rows.
pub fn fill_missing(panel: &PricePanel, max_lookback: usize) -> Result<PricePanel> {
    if max_lookback == 0 {
        return Err(DatasetError::ZeroLookback);
    }
    let mut out = panel.clone();
    for (j, name) in panel.series_names.iter().enumerate() {
        let mut last: Option<f64> = None;
        let mut run = 0usize;
        let mut observed = 0usize;
        for t in 0..panel.len() {
            match panel.prices[t][j] {
                Some(v) => {
                    last = Some(v);
                    run = 0;
                    observed += 1;
                }
                None => {
                    let Some(prev) = last else {
                        let first_valid = (t..panel.len())
                            .find(|&s| panel.prices[s][j].is_some())
                            .map(|s| panel.dates[s]);
                        return Err(DatasetError::LeadingMissing {
                            column: name.clone(),
                            first_valid,
                        });
                    };
                    run += 1;
                    if run > max_lookback {
                        return Err(DatasetError::GapTooLong {
                            column: name.clone(),
                            date: panel.dates[t],
                            length: run,
                            max_lookback,
                        });
                    }
                    out.prices[t][j] = Some(prev);
                }
            }
        }
        if observed < 2 {
            return Err(DatasetError::TooShort {
                column: name.clone(),
                count: observed,
            });
        }
        for t in 0..panel.len() {
            let v = out.prices[t][j].unwrap_or(f64::NAN);
            if !(v > 0.0 && v.is_finite()) {
                return Err(DatasetError::NonPositive {
                    column: name.clone(),
                    date: panel.dates[t],
                    value: v,
                });
            }
        }
    }
    Ok(out)
}

/// r[t] = ln P[t+1] - ln P[t], stamped with the later date.
pub fn log_returns(panel: &PricePanel) -> Result<ReturnPanel> {
    let t_len = panel.len();
    let n = panel.n_series();
    let mut logs = DMatrix::zeros(t_len, n);
    for t in 0..t_len {
        for j in 0..n {
            let v = panel.prices[t][j].ok_or_else(|| DatasetError::Unfilled {
                column: panel.series_names[j].clone(),
                date: panel.dates[t],
            })?;
            if !(v > 0.0 && v.is_finite()) {
                return Err(DatasetError::NonPositive {
                    column: panel.series_names[j].clone(),
                    date: panel.dates[t],
                    value: v,
                });
            }
            logs[(t, j)] = v.ln();
        }
    }
    if t_len < 2 {
        return Err(DatasetError::TooShort {
            column: panel.series_names.first().cloned().unwrap_or_default(),
            count: t_len,
        });
    }
    let returns = DMatrix::from_fn(t_len - 1, n, |t, j| logs[(t + 1, j)] - logs[(t, j)]);
    Ok(ReturnPanel {
        dates: panel.dates[1..].to_vec(),
        series_names: panel.series_names.clone(),
        returns,
    })
}

impl ReturnPanel {
    pub fn new(dates: Vec<NaiveDate>, series_names: Vec<String>, returns: DMatrix<f64>) -> Result<Self> {
        if dates.len() != returns.nrows() || series_names.len() != returns.ncols() {
            return Err(DatasetError::Shape(format!(
                "{} dates and {} names for a {}x{} matrix",
                dates.len(),
                series_names.len(),
                returns.nrows(),
                returns.ncols()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[1] <= w[0]) {
            return Err(DatasetError::DuplicateDate(w[1]));
        }
        check_unique_names(&series_names)?;
        Ok(ReturnPanel {
            dates,
            series_names,
            returns,
        })
    }

    pub fn len(&self) -> usize {
        self.returns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.nrows() == 0
    }

    pub fn n_series(&self) -> usize {
        self.returns.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.returns.column(j).iter().copied().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.returns.iter().all(|v| v.is_finite())
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates[start..end].to_vec(),
            series_names: self.series_names.clone(),
            returns: self.returns.rows(start, end - start).into_owned(),
        }
    }

    pub fn select_columns(&self, order: &[usize]) -> ReturnPanel {
        ReturnPanel {
            dates: self.dates.clone(),
            series_names: order.iter().map(|&j| self.series_names[j].clone()).collect(),
            returns: self.returns.select_columns(order),
        }
    }

    /// Prices obtained by compounding the returns from `base` on the day
    /// before the first return date.
    pub fn to_prices(&self, base: f64) -> PricePanel {
        let n = self.n_series();
        let first = self.dates.first().and_then(|d| d.pred_opt()).unwrap_or(NaiveDate::MIN);
        let mut dates = Vec::with_capacity(self.len() + 1);
        dates.push(first);
        dates.extend(self.dates.iter().copied());
        let mut cumulative = vec![0.0; n];
        let mut prices = vec![vec![Some(base); n]];
        for t in 0..self.len() {
            for (j, c) in cumulative.iter_mut().enumerate() {
                *c += self.returns[(t, j)];
            }
            prices.push(cumulative.iter().map(|c| Some(base * c.exp())).collect());
        }
        PricePanel {
            dates,
            series_names: self.series_names.clone(),
            prices,
        }
    }

    /// Writes the returns in the input CSV layout, full precision.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = std::iter::once("date".to_string()).chain(self.series_names.iter().cloned());
        let rows = (0..self.len()).map(|t| {
            std::iter::once(self.dates[t].to_string())
                .chain(self.returns.row(t).iter().map(|v| format!("{v:e}")))
                .collect::<Vec<_>>()
        });
        write_rows(path.as_ref(), header.collect(), rows)
    }
}
