//! Tabular measurement sets: CSV loading, per-column units, and the
//! split into input matrix, output vector, and dimension system.
//!
//! Header cells are `name[unit]` with the unit grammar from [`crate::units`];
//! a bare `name` is dimensionless. Body cells must parse as finite numbers.
//! A row with an empty cell is dropped (counted, not imputed); a row with a
//! non-numeric cell is a hard error naming the row.

use crate::dimension::DimMatrix;
use crate::units::{parse_unit, DimVector};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// One named, unit-annotated measurement column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub unit: DimVector,
    pub values: Vec<f64>,
}

/// A loaded table. All columns have equal length and unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    /// Rows dropped at load time because of missing cells.
    pub dropped_rows: usize,
}

/// Summary statistics for one column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub has_zero: bool,
    pub has_negative: bool,
}

/// Inputs/output split of a dataset, with the dimension system alongside.
#[derive(Debug, Clone)]
pub struct SplitXY {
    pub input_names: Vec<String>,
    /// b×p input matrix in dataset column order (output removed).
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub d_matrix: DimMatrix,
    pub d_out: DimVector,
}

impl Dataset {
    /// Builds a dataset, enforcing unique names and equal column lengths.
    pub fn from_columns(columns: Vec<Column>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InvalidInput("dataset has no columns".into()));
        }
        let len = columns[0].values.len();
        for (i, c) in columns.iter().enumerate() {
            if c.values.len() != len {
                return Err(Error::InvalidInput(format!(
                    "column `{}` has {} values, expected {}",
                    c.name,
                    c.values.len(),
                    len
                )));
            }
            if columns[..i].iter().any(|prev| prev.name == c.name) {
                return Err(Error::Csv(format!("duplicate column name `{}`", c.name)));
            }
        }
        Ok(Self {
            columns,
            dropped_rows: 0,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn num_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn num_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Appends a column; the name must be fresh and the length must match.
    pub fn push_column(&mut self, column: Column) -> Result<()> {
        if self.columns.iter().any(|c| c.name == column.name) {
            return Err(Error::Csv(format!(
                "duplicate column name `{}`",
                column.name
            )));
        }
        if column.values.len() != self.num_rows() {
            return Err(Error::InvalidInput(format!(
                "column `{}` has {} values, expected {}",
                column.name,
                column.values.len(),
                self.num_rows()
            )));
        }
        self.columns.push(column);
        Ok(())
    }

    /// Projection onto the named columns, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<Dataset> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::InvalidInput(format!("no column named `{name}`")))?;
            columns.push(col.clone());
        }
        Dataset::from_columns(columns)
    }

    pub fn load_csv(path: impl AsRef<std::path::Path>) -> Result<Dataset> {
        let bytes = std::fs::read(path)?;
        Self::from_csv_bytes(&bytes)
    }

    pub fn from_csv_bytes(bytes: &[u8]) -> Result<Dataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(bytes);
        let mut records = reader.records();
        let header = match records.next() {
            Some(rec) => rec.map_err(|e| Error::Csv(e.to_string()))?,
            None => return Err(Error::Csv("empty file".into())),
        };

        let mut names = Vec::new();
        let mut units = Vec::new();
        for cell in header.iter() {
            let (name, unit) = parse_header_cell(cell)?;
            if names.contains(&name) {
                return Err(Error::Csv(format!("duplicate column name `{name}`")));
            }
            names.push(name);
            units.push(unit);
        }
        let width = names.len();

        let mut values: Vec<Vec<f64>> = vec![Vec::new(); width];
        let mut dropped = 0usize;
        for (i, rec) in records.enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
            if rec.len() != width {
                return Err(Error::Csv(format!(
                    "row {row} has {} cells, expected {width}",
                    rec.len()
                )));
            }
            if rec.iter().any(|c| c.is_empty()) {
                dropped += 1;
                continue;
            }
            let mut parsed = Vec::with_capacity(width);
            for (j, cell) in rec.iter().enumerate() {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => parsed.push(v),
                    _ => {
                        return Err(Error::BadCell {
                            row,
                            column: names[j].clone(),
                            cell: cell.to_string(),
                        })
                    }
                }
            }
            for (col, v) in values.iter_mut().zip(parsed) {
                col.push(v);
            }
        }
        if values.first().is_none_or(|v| v.is_empty()) {
            return Err(Error::Csv(format!(
                "no usable data rows ({dropped} dropped)"
            )));
        }

        let columns = names
            .into_iter()
            .zip(units)
            .zip(values)
            .map(|((name, unit), values)| Column { name, unit, values })
            .collect();
        let mut ds = Dataset::from_columns(columns)?;
        ds.dropped_rows = dropped;
        Ok(ds)
    }

    /// Serializes back to CSV. Values use the shortest representation that
    /// parses back to the identical float, so a write/load cycle is exact.
    pub fn to_csv_string(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                if c.unit.is_dimensionless() {
                    c.name.clone()
                } else {
                    format!("{}[{}]", c.name, c.unit.canonical())
                }
            })
            .collect();
        wtr.write_record(&header).expect("in-memory write");
        for row in 0..self.num_rows() {
            let cells: Vec<String> = self
                .columns
                .iter()
                .map(|c| format!("{}", c.values[row]))
                .collect();
            wtr.write_record(&cells).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf8")
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn stats(&self, name: &str) -> Result<ColumnStats> {
        let col = self
            .column(name)
            .ok_or_else(|| Error::InvalidInput(format!("no column named `{name}`")))?;
        Ok(column_stats(&col.values))
    }

    /// Splits into inputs (dataset order, output removed) and output,
    /// assembling the dimension system alongside.
    pub fn split_xy(&self, output: &str) -> Result<SplitXY> {
        let out_idx = self
            .column_index(output)
            .ok_or_else(|| Error::InvalidInput(format!("no column named `{output}`")))?;
        let inputs: Vec<&Column> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != out_idx)
            .map(|(_, c)| c)
            .collect();
        if inputs.is_empty() {
            return Err(Error::InvalidInput(
                "dataset needs at least one input column".into(),
            ));
        }
        let b = self.num_rows();
        let p = inputs.len();
        let x = DMatrix::from_fn(b, p, |r, c| inputs[c].values[r]);
        let y = DVector::from_fn(b, |r, _| self.columns[out_idx].values[r]);
        Ok(SplitXY {
            input_names: inputs.iter().map(|c| c.name.clone()).collect(),
            x,
            y,
            d_matrix: DimMatrix::new(inputs.iter().map(|c| c.unit).collect()),
            d_out: self.columns[out_idx].unit,
        })
    }
}

/// Summary statistics of a value slice (population variance).
pub fn column_stats(values: &[f64]) -> ColumnStats {
    assert!(!values.is_empty(), "stats of an empty column");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    ColumnStats {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        variance,
        has_zero: values.iter().any(|v| *v == 0.0),
        has_negative: values.iter().any(|v| *v < 0.0),
    }
}

fn parse_header_cell(cell: &str) -> Result<(String, DimVector)> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err(Error::Csv("empty header cell".into()));
    }
    if let Some(open) = cell.find('[') {
        if !cell.ends_with(']') {
            return Err(Error::Csv(format!(
                "header cell `{cell}` has `[` without closing `]`"
            )));
        }
        let name = cell[..open].trim();
        if name.is_empty() {
            return Err(Error::Csv(format!("header cell `{cell}` has no name")));
        }
        let unit_text = &cell[open + 1..cell.len() - 1];
        let unit = parse_unit(unit_text)
            .map_err(|e| Error::Csv(format!("column `{name}`: {e}")))?;
        Ok((name.to_string(), unit))
    } else {
        Ok((cell.to_string(), DimVector::dimensionless()))
    }
}
