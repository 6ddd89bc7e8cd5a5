//! Right-censored datasets: in-memory representation, validation, CSV
//! ingestion and reproducible train/test splitting.
//!
//! The on-disk format is a plain CSV with header `x0,...,x{p-1},y,delta[,t]`.
//! Feature columns are positional; `delta` is 1 for an observed event and 0
//! for a censored response; the optional trailing `t` column carries the
//! latent (uncensored) response for simulated data. Floats are written with
//! 17 significant digits so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CqrfError, Result};

/// Observed data `(X_i, Y_i, delta_i)` with an optional latent response `T_i`.
///
/// Immutable after construction. `new` only checks shapes; value-level
/// invariants are checked by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    p: usize,
    /// Row-major `n x p`.
    features: Vec<f64>,
    y: Vec<f64>,
    delta: Vec<u8>,
    latent_t: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        p: usize,
        y: Vec<f64>,
        delta: Vec<u8>,
        latent_t: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(CqrfError::Validation("dataset has no rows".into()));
        }
        if p == 0 {
            return Err(CqrfError::Validation("dataset has no feature columns".into()));
        }
        if features.len() != n * p {
            return Err(CqrfError::LengthMismatch(format!(
                "feature matrix has {} entries, expected n*p = {}*{}",
                features.len(),
                n,
                p
            )));
        }
        if delta.len() != n {
            return Err(CqrfError::LengthMismatch(format!(
                "delta has {} entries, y has {}",
                delta.len(),
                n
            )));
        }
        if let Some(t) = &latent_t {
            if t.len() != n {
                return Err(CqrfError::LengthMismatch(format!(
                    "latent t has {} entries, y has {}",
                    t.len(),
                    n
                )));
            }
        }
        Ok(Self {
            n,
            p,
            features,
            y,
            delta,
            latent_t,
        })
    }

    /// Builds a dataset from feature rows.
    pub fn from_rows(
        rows: &[Vec<f64>],
        y: Vec<f64>,
        delta: Vec<u8>,
        latent_t: Option<Vec<f64>>,
    ) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != p) {
            return Err(CqrfError::LengthMismatch(format!(
                "row {bad} has {} features, row 0 has {p}",
                rows[bad].len()
            )));
        }
        let features = rows.iter().flatten().copied().collect();
        Self::new(features, p, y, delta, latent_t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.p..(i + 1) * self.p]
    }

    #[inline]
    pub fn feature(&self, i: usize, j: usize) -> f64 {
        self.features[i * self.p + j]
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[u8] {
        &self.delta
    }

    pub fn latent_t(&self) -> Option<&[f64]> {
        self.latent_t.as_deref()
    }

    pub fn censoring_fraction(&self) -> f64 {
        self.delta.iter().filter(|&&d| d == 0).count() as f64 / self.n as f64
    }

    /// Checks every value-level invariant and reports all violations.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for i in 0..self.n {
            for j in 0..self.p {
                if !self.feature(i, j).is_finite() {
                    problems.push(format!("features[{i}][{j}] = {} is not finite", self.feature(i, j)));
                }
            }
            if !self.y[i].is_finite() {
                problems.push(format!("y[{i}] = {} is not finite", self.y[i]));
            }
            if self.delta[i] > 1 {
                problems.push(format!("delta[{i}] = {} is not 0 or 1", self.delta[i]));
            }
        }
        if let Some(t) = &self.latent_t {
            for (i, &ti) in t.iter().enumerate() {
                if !ti.is_finite() {
                    problems.push(format!("t[{i}] = {ti} is not finite"));
                    continue;
                }
                let yi = self.y[i];
                if yi > ti {
                    problems.push(format!("y[{i}] = {yi} exceeds latent t[{i}] = {ti}"));
                }
                match self.delta[i] {
                    1 if yi != ti => {
                        problems.push(format!("delta[{i}] = 1 but y[{i}] = {yi} != t[{i}] = {ti}"))
                    }
                    0 if yi == ti => {
                        problems.push(format!("delta[{i}] = 0 but y[{i}] equals latent t[{i}] = {ti}"))
                    }
                    _ => {}
                }
            }
        }
        if problems.is_empty() {
            return Ok(());
        }
        let total = problems.len();
        let mut msg = problems.into_iter().take(20).collect::<Vec<_>>().join("; ");
        if total > 20 {
            let _ = write!(msg, "; ... ({total} problems in total)");
        }
        Err(CqrfError::Validation(msg))
    }

    /// Rows `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.p);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            n: indices.len(),
            p: self.p,
            features,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            delta: indices.iter().map(|&i| self.delta[i]).collect(),
            latent_t: self
                .latent_t
                .as_ref()
                .map(|t| indices.iter().map(|&i| t[i]).collect()),
        }
    }

    /// The same covariates with the latent response observed directly
    /// (`y = t`, `delta = 1`). Used to train oracle baselines.
    pub fn oracle(&self) -> Result<Dataset> {
        let t = self.latent_t.as_ref().ok_or_else(|| {
            CqrfError::Parameter("oracle view requires a latent t column".into())
        })?;
        Ok(Dataset {
            n: self.n,
            p: self.p,
            features: self.features.clone(),
            y: t.clone(),
            delta: vec![1; self.n],
            latent_t: Some(t.clone()),
        })
    }

    /// Replaces the observed response; used by the censoring injector.
    pub(crate) fn with_response(&self, y: Vec<f64>, delta: Vec<u8>, latent_t: Vec<f64>) -> Dataset {
        Dataset {
            n: self.n,
            p: self.p,
            features: self.features.clone(),
            y,
            delta,
            latent_t: Some(latent_t),
        }
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        let mut header: Vec<String> = (0..self.p).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        header.push("delta".into());
        if self.latent_t.is_some() {
            header.push("t".into());
        }
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for i in 0..self.n {
            line.clear();
            for &v in self.row(i) {
                let _ = write!(line, "{},", format_f64(v));
            }
            let _ = write!(line, "{},{}", format_f64(self.y[i]), self.delta[i]);
            if let Some(t) = &self.latent_t {
                let _ = write!(line, ",{}", format_f64(t[i]));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Loads a dataset. With `has_latent` the trailing `t` column is required,
/// otherwise it must be absent.
pub fn load_csv(path: impl AsRef<Path>, has_latent: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let detected = detect_latent_column(path)?;
    if detected != has_latent {
        let reason = if has_latent {
            "expected a trailing `t` column".to_string()
        } else {
            "unexpected trailing `t` column".to_string()
        };
        return Err(CqrfError::Schema {
            path: path.to_path_buf(),
            reason,
        });
    }
    read_csv(path, has_latent)
}

/// Loads a dataset, accepting files with or without the latent `t` column.
pub fn load_csv_auto(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let has_latent = detect_latent_column(path)?;
    read_csv(path, has_latent)
}

/// Reads only the leading `x0..` feature columns of a CSV, for query files.
/// Trailing `y,delta[,t]` columns are allowed and ignored.
pub fn load_features_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let p = headers
        .iter()
        .enumerate()
        .take_while(|(j, h)| **h == format!("x{j}"))
        .count();
    let rest: Vec<&str> = headers[p..].iter().map(String::as_str).collect();
    if p == 0 || !matches!(rest.as_slice(), [] | ["y", "delta"] | ["y", "delta", "t"]) {
        return Err(CqrfError::Schema {
            path: path.to_path_buf(),
            reason: format!("expected x0..x{{p-1}} optionally followed by y,delta[,t], got {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = (0..p)
            .map(|j| {
                let raw = record[j].trim();
                raw.parse::<f64>().map_err(|_| CqrfError::Parse {
                    row: r + 1,
                    column: j,
                    name: headers[j].clone(),
                    value: raw.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn detect_latent_column(path: &Path) -> Result<bool> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?;
    Ok(headers.iter().next_back().map(str::trim) == Some("t"))
}

fn read_csv(path: &Path, has_latent: bool) -> Result<Dataset> {
    let schema_err = |reason: String| CqrfError::Schema {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let tail = if has_latent { 3 } else { 2 };
    if headers.len() < tail + 1 {
        return Err(schema_err(format!(
            "header has {} columns; need at least one feature plus y,delta{}",
            headers.len(),
            if has_latent { ",t" } else { "" }
        )));
    }
    let p = headers.len() - tail;
    for (j, h) in headers.iter().take(p).enumerate() {
        if *h != format!("x{j}") {
            return Err(schema_err(format!("column {j} is {h:?}, expected \"x{j}\"")));
        }
    }
    let expected_tail: &[&str] = if has_latent { &["y", "delta", "t"] } else { &["y", "delta"] };
    for (k, name) in expected_tail.iter().enumerate() {
        if headers[p + k] != *name {
            return Err(schema_err(format!(
                "column {} is {:?}, expected {:?}",
                p + k,
                headers[p + k],
                name
            )));
        }
    }

    let mut features = Vec::new();
    let mut y = Vec::new();
    let mut delta = Vec::new();
    let mut latent = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // Data rows are numbered from 1; the header is row 0.
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(schema_err(format!(
                "row {row} has {} columns, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let number = |column: usize| -> Result<f64> {
            let raw = record[column].trim();
            raw.parse::<f64>().map_err(|_| CqrfError::Parse {
                row,
                column,
                name: headers[column].clone(),
                value: raw.to_string(),
            })
        };
        for j in 0..p {
            features.push(number(j)?);
        }
        y.push(number(p)?);
        let raw = record[p + 1].trim();
        let d: i64 = raw.parse().map_err(|_| CqrfError::Parse {
            row,
            column: p + 1,
            name: "delta".into(),
            value: raw.to_string(),
        })?;
        if d != 0 && d != 1 {
            return Err(CqrfError::Validation(format!(
                "row {row}: delta = {d} is not 0 or 1"
            )));
        }
        delta.push(d as u8);
        if has_latent {
            latent.push(number(p + 2)?);
        }
    }
    if y.is_empty() {
        return Err(schema_err("file has no data rows".into()));
    }
    let d = Dataset::new(features, p, y, delta, has_latent.then_some(latent))?;
    d.validate()?;
    Ok(d)
}

/// Train/test split parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self { train_fraction, seed }
    }
}

/// Index sets of a random split; each side ascending. The training side has
/// `round(train_fraction * n)` rows, rounding half away from zero.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(CqrfError::Parameter(format!(
            "train fraction {} is outside (0, 1)",
            spec.train_fraction
        )));
    }
    if n < 2 {
        return Err(CqrfError::Parameter(format!("cannot split {n} rows")));
    }
    let n_train = (spec.train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CqrfError::Parameter(format!(
            "train fraction {} of {n} rows leaves one side empty",
            spec.train_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split(d: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(d.n(), spec)?;
    Ok((d.subset(&train), d.subset(&test)))
}
