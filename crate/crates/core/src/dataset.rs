//! CSV ingestion, median/mode imputation, one-hot encoding, z-scoring and
//! event-stratified splitting.
//!
//! Statistics are always fit on the training split and then applied
//! unchanged to validation and test rows:
//!
//! ```text
//! load_csv -> stratified_split -> Imputer::fit(train) -> Encoder::fit(train) -> transform(all)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("no observations")]
    NoObservations,
    #[error("column `{0}` has no observed values")]
    AllMissing(String),
    #[error("column `{0}` still has missing values; impute first")]
    StillMissing(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("split `{0}` would be empty")]
    EmptySplit(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    pub time_column: String,
    pub event_column: String,
}

impl FeatureSchema {
    /// Schema of `d` continuous columns `x1..xd` with `time`/`event` targets.
    pub fn continuous(d: usize) -> Self {
        Self {
            columns: (1..=d)
                .map(|i| ColumnSpec {
                    name: format!("x{i}"),
                    kind: ColumnKind::Continuous,
                })
                .collect(),
            time_column: "time".into(),
            event_column: "event".into(),
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.time_column == self.event_column {
            return Err(DatasetError::Schema(
                "time and event columns must differ".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if c.name == self.time_column || c.name == self.event_column {
                return Err(DatasetError::Schema(format!(
                    "`{}` is both a covariate and a target column",
                    c.name
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DatasetError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RawColumn {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl RawColumn {
    fn missing(&self) -> usize {
        match self {
            RawColumn::Continuous(v) => v.iter().filter(|c| c.is_none()).count(),
            RawColumn::Categorical(v) => v.iter().filter(|c| c.is_none()).count(),
        }
    }

    fn subset(&self, idx: &[usize]) -> RawColumn {
        match self {
            RawColumn::Continuous(v) => RawColumn::Continuous(idx.iter().map(|&i| v[i]).collect()),
            RawColumn::Categorical(v) => {
                RawColumn::Categorical(idx.iter().map(|&i| v[i].clone()).collect())
            }
        }
    }
}

/// Parsed rows before imputation and encoding; covariate cells may be missing.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub schema: FeatureSchema,
    pub columns: Vec<RawColumn>,
    pub t: Vec<f64>,
    pub y: Vec<bool>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.columns.iter().map(RawColumn::missing).sum()
    }

    pub fn subset(&self, idx: &[usize]) -> RawDataset {
        RawDataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.subset(idx)).collect(),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Encoded numeric dataset: `x` is `N x d`, `t` are observed times and `y`
/// marks observed events (`false` = right-censored).
#[derive(Debug, Clone, PartialEq)]
pub struct SurvDataset {
    pub x: Array2<f64>,
    pub t: Vec<f64>,
    pub y: Vec<bool>,
    pub feature_names: Vec<String>,
}

impl SurvDataset {
    pub fn new(
        x: Array2<f64>,
        t: Vec<f64>,
        y: Vec<bool>,
        feature_names: Vec<String>,
    ) -> Result<Self, DatasetError> {
        if t.is_empty() {
            return Err(DatasetError::NoObservations);
        }
        if x.nrows() != t.len() || y.len() != t.len() || feature_names.len() != x.ncols() {
            return Err(DatasetError::Schema(format!(
                "inconsistent sizes: x {:?}, t {}, y {}, names {}",
                x.dim(),
                t.len(),
                y.len(),
                feature_names.len()
            )));
        }
        if let Some(i) = t.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(DatasetError::Row {
                line: i as u64 + 2,
                message: format!("time {} is negative or not finite", t[i]),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Schema("covariates must be finite".into()));
        }
        Ok(Self {
            x,
            t,
            y,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }

    pub fn event_fraction(&self) -> f64 {
        self.y.iter().filter(|&&e| e).count() as f64 / self.len() as f64
    }

    pub fn subset(&self, idx: &[usize]) -> SurvDataset {
        SurvDataset {
            x: self.x.select(ndarray::Axis(0), idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Writes the dataset as CSV with continuous covariate columns followed by
    /// `time` and `event`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.feature_names.clone();
        header.push("time".into());
        header.push("event".into());
        w.write_record(&header)?;
        for n in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(n).iter().map(|v| v.to_string()).collect();
            rec.push(self.t[n].to_string());
            rec.push(if self.y[n] { "1" } else { "0" }.into());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<RawDataset, DatasetError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parses CSV rows against `schema`. Empty cells and `NA` mark missing covariates.
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<RawDataset, DatasetError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::Schema(format!("missing column `{name}`")))
    };
    let time_idx = position(&schema.time_column)?;
    let event_idx = position(&schema.event_column)?;
    let col_idx: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<_, _>>()?;

    let mut columns: Vec<RawColumn> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => RawColumn::Continuous(Vec::new()),
            ColumnKind::Categorical => RawColumn::Categorical(Vec::new()),
        })
        .collect();
    let mut t = Vec::new();
    let mut y = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| DatasetError::Row { line, message };
        let cell = |i: usize| record.get(i).unwrap_or("");

        let time: f64 = cell(time_idx)
            .parse()
            .map_err(|_| row_err(format!("cannot parse time `{}`", cell(time_idx))))?;
        if !time.is_finite() || time < 0.0 {
            return Err(row_err(format!("time {time} must be finite and non-negative")));
        }
        let event = match cell(event_idx) {
            "0" => false,
            "1" => true,
            other => return Err(row_err(format!("event indicator `{other}` is not 0 or 1"))),
        };
        t.push(time);
        y.push(event);

        for ((spec, col), &idx) in schema.columns.iter().zip(columns.iter_mut()).zip(&col_idx) {
            let raw = cell(idx);
            match col {
                RawColumn::Continuous(v) => {
                    if is_missing(raw) {
                        v.push(None);
                    } else {
                        let parsed: f64 = raw.parse().map_err(|_| {
                            row_err(format!("cannot parse `{raw}` in column `{}`", spec.name))
                        })?;
                        v.push(Some(parsed));
                    }
                }
                RawColumn::Categorical(v) => {
                    v.push(if is_missing(raw) { None } else { Some(raw.to_string()) });
                }
            }
        }
    }
    if t.is_empty() {
        return Err(DatasetError::NoObservations);
    }
    Ok(RawDataset {
        schema: schema.clone(),
        columns,
        t,
        y,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FillValue {
    Continuous { median: f64 },
    Categorical { mode: String },
}

/// Median (continuous) / mode (categorical) fill values fit on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub fills: Vec<FillValue>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl Imputer {
    pub fn fit(train: &RawDataset) -> Result<Self, DatasetError> {
        let mut fills = Vec::with_capacity(train.columns.len());
        for (spec, col) in train.schema.columns.iter().zip(&train.columns) {
            match col {
                RawColumn::Continuous(v) => {
                    let mut seen: Vec<f64> = v.iter().flatten().copied().collect();
                    if seen.is_empty() {
                        return Err(DatasetError::AllMissing(spec.name.clone()));
                    }
                    fills.push(FillValue::Continuous {
                        median: median(&mut seen),
                    });
                }
                RawColumn::Categorical(v) => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for s in v.iter().flatten() {
                        *counts.entry(s.as_str()).or_default() += 1;
                    }
                    // Ties resolve to the lexicographically smallest level.
                    let mode = counts
                        .iter()
                        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                        .map(|(k, _)| k.to_string())
                        .ok_or_else(|| DatasetError::AllMissing(spec.name.clone()))?;
                    fills.push(FillValue::Categorical { mode });
                }
            }
        }
        Ok(Self { fills })
    }

    pub fn apply(&self, ds: &RawDataset) -> RawDataset {
        let columns = ds
            .columns
            .iter()
            .zip(&self.fills)
            .map(|(col, fill)| match (col, fill) {
                (RawColumn::Continuous(v), FillValue::Continuous { median }) => {
                    RawColumn::Continuous(v.iter().map(|c| Some(c.unwrap_or(*median))).collect())
                }
                (RawColumn::Categorical(v), FillValue::Categorical { mode }) => {
                    RawColumn::Categorical(
                        v.iter()
                            .map(|c| Some(c.clone().unwrap_or_else(|| mode.clone())))
                            .collect(),
                    )
                }
                (other, _) => other.clone(),
            })
            .collect();
        RawDataset {
            columns,
            ..ds.clone()
        }
    }
}

/// Fits on `ds` and fills its own gaps.
pub fn impute(ds: &RawDataset) -> Result<RawDataset, DatasetError> {
    Ok(Imputer::fit(ds)?.apply(ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnEncoding {
    /// `(x - mean) / std`; `std == 0` means centering only.
    Continuous { mean: f64, std: f64 },
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub names: Vec<String>,
    pub encodings: Vec<ColumnEncoding>,
}

impl Encoder {
    pub fn fit(train: &RawDataset) -> Result<Self, DatasetError> {
        let mut encodings = Vec::new();
        for (spec, col) in train.schema.columns.iter().zip(&train.columns) {
            match col {
                RawColumn::Continuous(v) => {
                    let vals: Vec<f64> = v
                        .iter()
                        .map(|c| c.ok_or_else(|| DatasetError::StillMissing(spec.name.clone())))
                        .collect::<Result<_, _>>()?;
                    let n = vals.len() as f64;
                    let mean = vals.iter().sum::<f64>() / n;
                    let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    if std == 0.0 {
                        warn!("column `{}` has zero variance; centering only", spec.name);
                    }
                    encodings.push(ColumnEncoding::Continuous { mean, std });
                }
                RawColumn::Categorical(v) => {
                    let mut levels: Vec<String> = v
                        .iter()
                        .map(|c| c.clone().ok_or_else(|| DatasetError::StillMissing(spec.name.clone())))
                        .collect::<Result<_, _>>()?;
                    levels.sort();
                    levels.dedup();
                    encodings.push(ColumnEncoding::Categorical { levels });
                }
            }
        }
        Ok(Self {
            names: train.schema.columns.iter().map(|c| c.name.clone()).collect(),
            encodings,
        })
    }

    pub fn width(&self) -> usize {
        self.encodings
            .iter()
            .map(|e| match e {
                ColumnEncoding::Continuous { .. } => 1,
                ColumnEncoding::Categorical { levels } => levels.len(),
            })
            .sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for (name, enc) in self.names.iter().zip(&self.encodings) {
            match enc {
                ColumnEncoding::Continuous { .. } => out.push(name.clone()),
                ColumnEncoding::Categorical { levels } => {
                    out.extend(levels.iter().map(|l| format!("{name}={l}")))
                }
            }
        }
        out
    }

    /// Encodes imputed rows. Categories unseen at fit time encode as all zeros.
    pub fn transform(&self, ds: &RawDataset) -> Result<SurvDataset, DatasetError> {
        let n = ds.len();
        let mut x = Array2::zeros((n, self.width()));
        let mut offset = 0;
        for ((col, enc), name) in ds.columns.iter().zip(&self.encodings).zip(&self.names) {
            match (col, enc) {
                (RawColumn::Continuous(v), ColumnEncoding::Continuous { mean, std }) => {
                    for (r, c) in v.iter().enumerate() {
                        let c = c.ok_or_else(|| DatasetError::StillMissing(name.clone()))?;
                        let centered = c - mean;
                        x[[r, offset]] = if *std > 0.0 { centered / std } else { centered };
                    }
                    offset += 1;
                }
                (RawColumn::Categorical(v), ColumnEncoding::Categorical { levels }) => {
                    for (r, c) in v.iter().enumerate() {
                        let c = c.as_ref().ok_or_else(|| DatasetError::StillMissing(name.clone()))?;
                        if let Ok(k) = levels.binary_search(c) {
                            x[[r, offset + k]] = 1.0;
                        }
                    }
                    offset += levels.len();
                }
                _ => {
                    return Err(DatasetError::Schema(format!(
                        "column `{name}` kind differs from the fitted encoder"
                    )))
                }
            }
        }
        SurvDataset::new(x, ds.t.clone(), ds.y.clone(), self.feature_names())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles events and censored rows separately and cuts each group by the
/// requested fractions, so every split keeps the global event proportion.
pub fn stratified_split(y: &[bool], spec: &SplitSpec) -> Result<SplitIndices, DatasetError> {
    let fr = [spec.train, spec.valid, spec.test];
    if fr.iter().any(|f| !(*f > 0.0)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DatasetError::InvalidSplit(format!(
            "fractions {fr:?} must be positive and sum to 1"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = SplitIndices {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((spec.train * n as f64).round() as usize).min(n);
        let n_valid = ((spec.valid * n as f64).round() as usize).min(n - n_train);
        out.train.extend_from_slice(&idx[..n_train]);
        out.valid.extend_from_slice(&idx[n_train..n_train + n_valid]);
        out.test.extend_from_slice(&idx[n_train + n_valid..]);
    }
    for (name, part) in [("train", &mut out.train), ("valid", &mut out.valid), ("test", &mut out.test)] {
        if part.is_empty() {
            return Err(DatasetError::EmptySplit(name));
        }
        part.sort_unstable();
    }
    Ok(out)
}

/// Train/validation/test datasets with the preprocessing fit on training rows.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: SurvDataset,
    pub valid: SurvDataset,
    pub test: SurvDataset,
    pub imputer: Imputer,
    pub encoder: Encoder,
}

pub fn prepare(raw: &RawDataset, split: &SplitSpec) -> Result<Prepared, DatasetError> {
    let idx = stratified_split(&raw.y, split)?;
    let train_raw = raw.subset(&idx.train);
    let imputer = Imputer::fit(&train_raw)?;
    let train_raw = imputer.apply(&train_raw);
    let encoder = Encoder::fit(&train_raw)?;
    let encode = |rows: &[usize]| encoder.transform(&imputer.apply(&raw.subset(rows)));
    Ok(Prepared {
        train: encoder.transform(&train_raw)?,
        valid: encode(&idx.valid)?,
        test: encode(&idx.test)?,
        imputer: imputer.clone(),
        encoder: encoder.clone(),
    })
}
