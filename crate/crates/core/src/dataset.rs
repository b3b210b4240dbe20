//! Sensor logs: CSV ingestion, input scaling, correlation ranking and the
//! interleaved train/validation/test division.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::pearson;

/// Smallest sample count for which the 3/1/1 division is possible.
pub const MIN_SAMPLES: usize = 5;

/// Named input columns plus one target column, row aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_names: Vec<String>,
    inputs: DMatrix<f64>,
    target_name: String,
    targets: DVector<f64>,
}

impl Dataset {
    pub fn new(
        input_names: Vec<String>,
        inputs: DMatrix<f64>,
        target_name: impl Into<String>,
        targets: DVector<f64>,
    ) -> Result<Self> {
        let target_name = target_name.into();
        if input_names.is_empty() || inputs.ncols() == 0 {
            return Err(Error::Data("dataset needs at least one input column".into()));
        }
        if input_names.len() != inputs.ncols() {
            return Err(Error::Data(format!(
                "{} input names for {} input columns",
                input_names.len(),
                inputs.ncols()
            )));
        }
        if inputs.nrows() != targets.len() {
            return Err(Error::Data(format!(
                "{} input rows but {} targets",
                inputs.nrows(),
                targets.len()
            )));
        }
        if targets.len() < MIN_SAMPLES {
            return Err(Error::Data(format!(
                "dataset has {} samples, at least {MIN_SAMPLES} required",
                targets.len()
            )));
        }
        for (col, name) in input_names.iter().enumerate() {
            if let Some(row) = inputs.column(col).iter().position(|v| !v.is_finite()) {
                return Err(Error::Cell {
                    row: row + 1,
                    column: name.clone(),
                    message: "non-finite value".into(),
                });
            }
        }
        if let Some(row) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::Cell {
                row: row + 1,
                column: target_name,
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            input_names,
            inputs,
            target_name,
            targets,
        })
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    /// N×d matrix, one row per sample.
    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_inputs(&self) -> usize {
        self.inputs.ncols()
    }

    /// Copy of this dataset with the input matrix replaced.
    fn with_inputs(&self, inputs: DMatrix<f64>) -> Self {
        Self {
            input_names: self.input_names.clone(),
            inputs,
            target_name: self.target_name.clone(),
            targets: self.targets.clone(),
        }
    }

    /// Writes the inputs followed by the target as CSV.
    ///
    /// Floats use the shortest representation that parses back to the same
    /// bits, so a save/load cycle is lossless.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| Error::Data(format!("csv write: {e}"));
        let mut header: Vec<&str> = self.input_names.iter().map(String::as_str).collect();
        header.push(&self.target_name);
        out.write_record(&header).map_err(csv_err)?;
        let mut record = Vec::with_capacity(header.len());
        for row in 0..self.len() {
            record.clear();
            record.extend(self.inputs.row(row).iter().map(|v| v.to_string()));
            record.push(self.targets[row].to_string());
            out.write_record(&record).map_err(csv_err)?;
        }
        out.flush().map_err(|e| Error::Data(format!("csv write: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Reads a sensor log from `path`, taking `target_column` as the target and
/// every other column as an input.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target_column)
}

/// Parses CSV text. Row numbers in errors count data rows from 1; the
/// header is row 0.
pub fn read_csv<R: Read>(reader: R, target_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Data(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Data("missing header row".into()));
    }
    let target_idx = {
        let hits: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, name)| *name == target_column)
            .map(|(i, _)| i)
            .collect();
        match hits.as_slice() {
            [] => {
                return Err(Error::Data(format!(
                    "target column `{target_column}` not in header"
                )))
            }
            [i] => *i,
            _ => {
                return Err(Error::Data(format!(
                    "target column `{target_column}` appears {} times in header",
                    hits.len()
                )))
            }
        }
    };
    if header.len() < 2 {
        return Err(Error::Data("no input columns besides the target".into()));
    }

    let width = header.len();
    let mut values: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Data(format!("row {row}: {e}")))?;
        if record.len() != width {
            return Err(Error::Cell {
                row,
                column: header[width.min(record.len()).saturating_sub(1)].clone(),
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let cell_err = |message: String| Error::Cell {
                row,
                column: header[col].clone(),
                message,
            };
            if cell.is_empty() {
                return Err(cell_err("empty cell".into()));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| cell_err(format!("not a number: `{cell}`")))?;
            if !v.is_finite() {
                return Err(cell_err(format!("non-finite value `{cell}`")));
            }
            if col == target_idx {
                targets.push(v);
            } else {
                values.push(v);
            }
        }
    }

    let input_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, n)| n.clone())
        .collect();
    let n = targets.len();
    let inputs = DMatrix::from_row_slice(n, input_names.len(), &values);
    Dataset::new(
        input_names,
        inputs,
        header[target_idx].clone(),
        DVector::from_vec(targets),
    )
}

/// Train/validation/test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the split is a partition of `0..n`.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of range for {n} samples")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} assigned twice")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("sample {i} missing from split")));
        }
        if self.train.is_empty() {
            return Err(Error::Data("empty training subset".into()));
        }
        Ok(())
    }
}

/// Round-robin 60/20/20 division: sample `i` goes to train when `i % 5` is
/// 0, 1 or 2, to validation when it is 3 and to test when it is 4.
pub fn interleaved_split(n: usize) -> Result<SplitIndices> {
    if n < MIN_SAMPLES {
        return Err(Error::Data(format!(
            "cannot divide {n} samples 60/20/20, need at least {MIN_SAMPLES}"
        )));
    }
    let mut split = SplitIndices {
        train: Vec::with_capacity(n * 3 / 5 + 3),
        val: Vec::with_capacity(n / 5 + 1),
        test: Vec::with_capacity(n / 5 + 1),
    };
    for i in 0..n {
        match i % 5 {
            0..=2 => split.train.push(i),
            3 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

/// Per-column affine map of inputs onto [-1, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler {
    columns: IndexMap<String, ColumnRange>,
}

impl Scaler {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let mut columns = IndexMap::with_capacity(data.n_inputs());
        for (col, name) in data.input_names().iter().enumerate() {
            let column = data.inputs().column(col);
            let min = column.min();
            let max = column.max();
            if max <= min {
                return Err(Error::Data(format!(
                    "input column `{name}` is constant ({min}), cannot scale"
                )));
            }
            columns.insert(name.clone(), ColumnRange { min, max });
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &IndexMap<String, ColumnRange> {
        &self.columns
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.columns.len() {
            return Err(Error::Data(format!(
                "scaler fitted on {} columns, got {cols}",
                self.columns.len()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(inputs.ncols())?;
        let mut out = inputs.clone();
        for (col, range) in self.columns.values().enumerate() {
            let span = range.max - range.min;
            for v in out.column_mut(col).iter_mut() {
                *v = 2.0 * (*v - range.min) / span - 1.0;
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, scaled: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_width(scaled.ncols())?;
        let mut out = scaled.clone();
        for (col, range) in self.columns.values().enumerate() {
            let span = range.max - range.min;
            for v in out.column_mut(col).iter_mut() {
                *v = (*v + 1.0) / 2.0 * span + range.min;
            }
        }
        Ok(out)
    }

    /// Scales one raw input row.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check_width(row.len())?;
        Ok(row
            .iter()
            .zip(self.columns.values())
            .map(|(v, r)| 2.0 * (v - r.min) / (r.max - r.min) - 1.0)
            .collect())
    }
}

/// Fits a [`Scaler`] on the inputs and returns it with the scaled dataset.
/// Targets are left in their physical units.
pub fn fit_apply_scaler(data: &Dataset) -> Result<(Scaler, Dataset)> {
    let scaler = Scaler::fit(data)?;
    let scaled = scaler.apply(data.inputs())?;
    Ok((scaler, data.with_inputs(scaled)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRank {
    pub name: String,
    pub r: f64,
    /// Set when the column has no variance; `r` is then reported as 0.
    pub zero_variance: bool,
}

/// Pearson correlation of every input against the target, strongest first.
pub fn rank_inputs(data: &Dataset) -> Vec<InputRank> {
    let targets = data.targets().as_slice();
    let mut ranks: Vec<InputRank> = data
        .input_names()
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let column: Vec<f64> = data.inputs().column(col).iter().copied().collect();
            match pearson(&column, targets) {
                Some(r) => InputRank {
                    name: name.clone(),
                    r,
                    zero_variance: false,
                },
                None => InputRank {
                    name: name.clone(),
                    r: 0.0,
                    zero_variance: true,
                },
            }
        })
        .collect();
    ranks.sort_by(|a, b| b.r.abs().total_cmp(&a.r.abs()));
    ranks
}
