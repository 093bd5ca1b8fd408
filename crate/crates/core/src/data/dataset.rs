use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use ndarray::{Array2, ArrayView2, Axis};

use super::schema::VariableSchema;
use crate::error::{Error, Result};

pub const TIMESTAMP_COLUMN: &str = "timestamp";

/// Timestamped rows in model column order `[x, w]`. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub schema: VariableSchema,
    pub timestamps: Vec<DateTime<Utc>>,
    pub values: Array2<f64>,
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t.and_utc());
        }
    }
    None
}

impl TimeSeriesDataset {
    pub fn new(
        schema: VariableSchema,
        timestamps: Vec<DateTime<Utc>>,
        values: Array2<f64>,
    ) -> Result<Self> {
        if timestamps.len() != values.nrows() {
            return Err(Error::data("timestamp count does not match row count"));
        }
        if values.ncols() != schema.model_width() {
            return Err(Error::Schema(format!(
                "dataset has {} columns but schema has {} model channels",
                values.ncols(),
                schema.model_width()
            )));
        }
        Ok(Self {
            schema,
            timestamps,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    /// Rows whose index satisfies `keep`, in order.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize, &DateTime<Utc>) -> bool) -> Self {
        let idx: Vec<usize> = self
            .timestamps
            .iter()
            .enumerate()
            .filter(|(i, t)| keep(*i, t))
            .map(|(i, _)| i)
            .collect();
        Self {
            schema: self.schema.clone(),
            timestamps: idx.iter().map(|i| self.timestamps[*i]).collect(),
            values: self.values.select(Axis(0), &idx),
        }
    }

    /// Loads a CSV with a `timestamp` column plus one column per channel.
    ///
    /// Empty fields are missing values. Rows are returned sorted by time.
    pub fn load_csv(path: &Path, schema: &VariableSchema) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, schema: &VariableSchema) -> Result<Self> {
        schema.validate()?;
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::data(format!("cannot read header: {e}")))?
            .clone();
        let ts_col = headers
            .iter()
            .position(|h| h == TIMESTAMP_COLUMN)
            .ok_or_else(|| Error::Schema("file has no `timestamp` column".into()))?;
        let mut cols = Vec::new();
        for name in schema.model_columns() {
            let idx = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("file is missing channel `{name}`")))?;
            cols.push(idx);
        }

        let mut rows: Vec<(DateTime<Utc>, Vec<f64>)> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let rec = rec.map_err(|e| Error::data(format!("line {line}: {e}")))?;
            let ts = rec
                .get(ts_col)
                .and_then(parse_timestamp)
                .ok_or_else(|| Error::data(format!("line {line}: unparseable timestamp")))?;
            let mut vals = Vec::with_capacity(cols.len());
            for (&c, name) in cols.iter().zip(schema.model_columns()) {
                let field = rec.get(c).unwrap_or("");
                if field.is_empty() {
                    vals.push(f64::NAN);
                } else {
                    let v: f64 = field.parse().map_err(|_| {
                        Error::data(format!("line {line}: bad value `{field}` for `{name}`"))
                    })?;
                    vals.push(v);
                }
            }
            rows.push((ts, vals));
        }
        rows.sort_by_key(|(t, _)| *t);
        let width = schema.model_width();
        let mut values = Array2::zeros((rows.len(), width));
        for (r, (_, v)) in rows.iter().enumerate() {
            for (c, x) in v.iter().enumerate() {
                values[[r, c]] = *x;
            }
        }
        Self::new(
            schema.clone(),
            rows.into_iter().map(|(t, _)| t).collect(),
            values,
        )
    }

    /// Writes the dataset in the same CSV format it is read from.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let names: Vec<String> = self
            .schema
            .model_columns()
            .into_iter()
            .map(String::from)
            .collect();
        write_table(writer, &names, &self.timestamps, self.values.view())
    }

    /// Drops rows with any missing measurement or control value.
    ///
    /// Returns the cleaned dataset and the number of removed rows.
    pub fn drop_missing(&self) -> (Self, usize) {
        let out = self.filter_rows(|i, _| self.values.row(i).iter().all(|v| v.is_finite()));
        let removed = self.len() - out.len();
        if removed > 0 {
            log::info!(
                "dropped {removed} of {} rows with missing values",
                self.len()
            );
        }
        if out.is_empty() && !self.is_empty() {
            log::warn!("every row had a missing value; dataset is now empty");
        }
        (out, removed)
    }
}

/// Writes `timestamp,<names...>` rows. NaN is written as an empty field.
pub fn write_table<W: std::io::Write>(
    writer: W,
    names: &[String],
    timestamps: &[DateTime<Utc>],
    values: ArrayView2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![TIMESTAMP_COLUMN.to_string()];
    header.extend(names.iter().cloned());
    let csv_err = |e: csv::Error| Error::data(format!("csv write failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (t, row) in timestamps.iter().zip(values.rows()) {
        let mut rec = vec![format_timestamp(t)];
        rec.extend(row.iter().map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v}")
            }
        }));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::data(format!("csv flush failed: {e}")))?;
    Ok(())
}
