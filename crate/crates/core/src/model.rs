//! Balanced panel container, evaluation-point specification and ingestion.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::error::DataError;

/// One long-format observation: unit id, period id, outcome and regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub unit: String,
    pub period: String,
    pub y: f64,
    pub x: Vec<f64>,
}

impl Record {
    pub fn new(unit: impl Into<String>, period: impl Into<String>, y: f64, x: Vec<f64>) -> Self {
        Self {
            unit: unit.into(),
            period: period.into(),
            y,
            x,
        }
    }
}

/// Balanced N x T panel of scalar outcomes and d-dimensional regressors.
///
/// Storage is row-major by unit: cell `(i, t)` lives at `i * T + t` in `y`
/// and at `(i * T + t) * d ..` in `x`. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelData {
    n_units: usize,
    n_periods: usize,
    dim: usize,
    y: Vec<f64>,
    x: Vec<f64>,
    unit_labels: Vec<String>,
    period_labels: Vec<String>,
}

impl PanelData {
    /// Builds a panel from dense arrays, using `0..N` / `0..T` as labels.
    pub fn from_dense(
        n_units: usize,
        n_periods: usize,
        dim: usize,
        y: Vec<f64>,
        x: Vec<f64>,
    ) -> Result<Self, DataError> {
        let unit_labels = (0..n_units).map(|i| i.to_string()).collect();
        let period_labels = (0..n_periods).map(|t| t.to_string()).collect();
        Self::from_parts(n_units, n_periods, dim, y, x, unit_labels, period_labels)
    }

    fn from_parts(
        n_units: usize,
        n_periods: usize,
        dim: usize,
        y: Vec<f64>,
        x: Vec<f64>,
        unit_labels: Vec<String>,
        period_labels: Vec<String>,
    ) -> Result<Self, DataError> {
        if n_units == 0 || n_periods == 0 {
            return Err(DataError::Empty);
        }
        if dim == 0 {
            return Err(DataError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        let cells = n_units * n_periods;
        if y.len() != cells {
            return Err(DataError::DimensionMismatch {
                expected: cells,
                found: y.len(),
            });
        }
        if x.len() != cells * dim {
            return Err(DataError::DimensionMismatch {
                expected: cells * dim,
                found: x.len(),
            });
        }
        for c in 0..cells {
            let finite = y[c].is_finite() && x[c * dim..(c + 1) * dim].iter().all(|v| v.is_finite());
            if !finite {
                return Err(DataError::NonFiniteValue {
                    unit: unit_labels[c / n_periods].clone(),
                    period: period_labels[c % n_periods].clone(),
                });
            }
        }
        Ok(Self {
            n_units,
            n_periods,
            dim,
            y,
            x,
            unit_labels,
            period_labels,
        })
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn n_periods(&self) -> usize {
        self.n_periods
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.y[i * self.n_periods + t]
    }

    #[inline]
    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let c = i * self.n_periods + t;
        &self.x[c * self.dim..(c + 1) * self.dim]
    }

    pub fn unit_labels(&self) -> &[String] {
        &self.unit_labels
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    /// Componentwise min and max of the observed regressors.
    pub fn regressor_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![f64::INFINITY; self.dim];
        let mut hi = vec![f64::NEG_INFINITY; self.dim];
        for row in self.x.chunks_exact(self.dim) {
            for k in 0..self.dim {
                lo[k] = lo[k].min(row[k]);
                hi[k] = hi[k].max(row[k]);
            }
        }
        (lo, hi)
    }

    /// Flattens the panel back into long-format records (unit-major order).
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.n_units * self.n_periods);
        for i in 0..self.n_units {
            for t in 0..self.n_periods {
                out.push(Record::new(
                    self.unit_labels[i].clone(),
                    self.period_labels[t].clone(),
                    self.y(i, t),
                    self.x(i, t).to_vec(),
                ));
            }
        }
        out
    }

    /// Sub-panel restricted to the period range `[start, end)`.
    pub fn period_slice(&self, start: usize, end: usize) -> Self {
        assert!(start < end && end <= self.n_periods);
        let len = end - start;
        let mut y = Vec::with_capacity(self.n_units * len);
        let mut x = Vec::with_capacity(self.n_units * len * self.dim);
        for i in 0..self.n_units {
            for t in start..end {
                y.push(self.y(i, t));
                x.extend_from_slice(self.x(i, t));
            }
        }
        Self {
            n_units: self.n_units,
            n_periods: len,
            dim: self.dim,
            y,
            x,
            unit_labels: self.unit_labels.clone(),
            period_labels: self.period_labels[start..end].to_vec(),
        }
    }

    /// Returns a copy with every outcome transformed by `f`.
    pub fn map_y(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// Returns a copy with every regressor vector transformed by `f`.
    pub fn map_x(&self, f: impl Fn(&mut [f64])) -> Self {
        let mut out = self.clone();
        for row in out.x.chunks_exact_mut(self.dim) {
            f(row);
        }
        out
    }
}

/// Builds a dense balanced panel from long-format records.
///
/// Units keep their first-appearance order. Periods keep first-appearance
/// order too, unless every period label parses as a number, in which case
/// they are sorted numerically so that time order survives any row shuffle.
pub fn validate_panel(records: &[Record]) -> Result<PanelData, DataError> {
    let first = records.first().ok_or(DataError::Empty)?;
    let dim = first.x.len();
    if dim == 0 {
        return Err(DataError::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }

    let mut unit_index: HashMap<&str, usize> = HashMap::new();
    let mut units: Vec<&str> = Vec::new();
    let mut period_index: HashMap<&str, usize> = HashMap::new();
    let mut periods: Vec<&str> = Vec::new();
    for r in records {
        if r.x.len() != dim {
            return Err(DataError::DimensionMismatch {
                expected: dim,
                found: r.x.len(),
            });
        }
        if !r.y.is_finite() || r.x.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                unit: r.unit.clone(),
                period: r.period.clone(),
            });
        }
        if !unit_index.contains_key(r.unit.as_str()) {
            unit_index.insert(&r.unit, units.len());
            units.push(&r.unit);
        }
        if !period_index.contains_key(r.period.as_str()) {
            period_index.insert(&r.period, periods.len());
            periods.push(&r.period);
        }
    }

    let numeric: Option<Vec<f64>> = periods.iter().map(|p| p.trim().parse::<f64>().ok()).collect();
    if let Some(keys) = numeric {
        let mut order: Vec<usize> = (0..periods.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        periods = order.iter().map(|&k| periods[k]).collect();
        for (pos, p) in periods.iter().enumerate() {
            period_index.insert(p, pos);
        }
    }

    let n = units.len();
    let t_len = periods.len();
    let mut y = vec![0.0; n * t_len];
    let mut x = vec![0.0; n * t_len * dim];
    let mut seen = vec![false; n * t_len];
    for r in records {
        let c = unit_index[r.unit.as_str()] * t_len + period_index[r.period.as_str()];
        if seen[c] {
            return Err(DataError::DuplicateCell {
                unit: r.unit.clone(),
                period: r.period.clone(),
            });
        }
        seen[c] = true;
        y[c] = r.y;
        x[c * dim..(c + 1) * dim].copy_from_slice(&r.x);
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(DataError::MissingCell {
            unit: units[c / t_len].to_string(),
            period: periods[c % t_len].to_string(),
        });
    }

    PanelData::from_parts(
        n,
        t_len,
        dim,
        y,
        x,
        units.into_iter().map(String::from).collect(),
        periods.into_iter().map(String::from).collect(),
    )
}

/// Splits a panel into its first `floor(T/2)` periods and the remainder.
pub fn split_halves(p: &PanelData) -> Result<(PanelData, PanelData), DataError> {
    let t = p.n_periods();
    if t < 2 {
        return Err(DataError::TooFewPeriods(t));
    }
    let mid = t / 2;
    Ok((p.period_slice(0, mid), p.period_slice(mid, t)))
}

/// Reads a long-format delimited file with header `id,t,y,x1,...,xd`.
pub fn read_panel_csv(path: impl AsRef<Path>, delimiter: u8) -> Result<PanelData, DataError> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_panel_from(file, delimiter)
}

/// Same as [`read_panel_csv`] but from any reader.
pub fn read_panel_from<R: Read>(reader: R, delimiter: u8) -> Result<PanelData, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    if headers.len() < 4 {
        return Err(DataError::Parse {
            line: 1,
            msg: format!("expected header `id,t,y,x1,...`, found {} columns", headers.len()),
        });
    }
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| DataError::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.len() != headers.len() {
            return Err(DataError::Parse {
                line,
                msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let num = |k: usize| -> Result<f64, DataError> {
            rec[k].parse::<f64>().map_err(|_| DataError::Parse {
                line,
                msg: format!("column `{}`: cannot parse `{}` as a number", &headers[k], &rec[k]),
            })
        };
        let y = num(2)?;
        let x = (3..rec.len()).map(num).collect::<Result<Vec<_>, _>>()?;
        records.push(Record::new(&rec[0], &rec[1], y, x));
    }
    validate_panel(&records)
}

/// Evaluation point, quantile level, bandwidths and regressor support.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub x: Vec<f64>,
    pub tau: f64,
    /// Localization bandwidth.
    pub h: f64,
    /// Smoothing bandwidth (LLSQR only).
    pub b: f64,
    pub support_lo: Vec<f64>,
    pub support_hi: Vec<f64>,
    /// True when the support was taken from the observed regressor range.
    pub support_inferred: bool,
}

impl EvalSpec {
    /// Spec with explicit support bounds.
    pub fn new(
        x: Vec<f64>,
        tau: f64,
        h: f64,
        b: f64,
        support_lo: Vec<f64>,
        support_hi: Vec<f64>,
    ) -> Result<Self, DataError> {
        let spec = Self {
            x,
            tau,
            h,
            b,
            support_lo,
            support_hi,
            support_inferred: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec whose support is the observed regressor range of `p`.
    pub fn inferred(p: &PanelData, x: Vec<f64>, tau: f64, h: f64, b: f64) -> Result<Self, DataError> {
        let (lo, hi) = p.regressor_bounds();
        let mut spec = Self::new(x, tau, h, b, lo, hi)?;
        spec.support_inferred = true;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Same spec with another evaluation point.
    pub fn at(&self, x: Vec<f64>) -> Result<Self, DataError> {
        let mut s = self.clone();
        s.x = x;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let d = self.x.len();
        if d == 0 {
            return Err(DataError::InvalidSpec("evaluation point is empty".into()));
        }
        if self.support_lo.len() != d || self.support_hi.len() != d {
            return Err(DataError::DimensionMismatch {
                expected: d,
                found: self.support_lo.len().min(self.support_hi.len()),
            });
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(DataError::InvalidSpec(format!("tau = {} outside (0, 1)", self.tau)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(DataError::InvalidSpec(format!("h = {} must be positive", self.h)));
        }
        if !(self.b > 0.0 && self.b.is_finite()) {
            return Err(DataError::InvalidSpec(format!("b = {} must be positive", self.b)));
        }
        for k in 0..d {
            let (lo, hi, v) = (self.support_lo[k], self.support_hi[k], self.x[k]);
            if !(lo < hi) {
                return Err(DataError::InvalidSpec(format!(
                    "support in coordinate {} is empty: [{lo}, {hi}]",
                    k + 1
                )));
            }
            if !(v >= lo && v <= hi) {
                return Err(DataError::InvalidSpec(format!(
                    "x{} = {v} lies outside the support [{lo}, {hi}]",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    /// Checks the spec against a panel's regressor dimension.
    pub fn check_panel(&self, p: &PanelData) -> Result<(), DataError> {
        self.validate()?;
        if p.dim() != self.dim() {
            return Err(DataError::DimensionMismatch {
                expected: p.dim(),
                found: self.dim(),
            });
        }
        Ok(())
    }
}
