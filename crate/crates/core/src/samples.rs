use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of `d`-dimensional points stored row-major, with a provenance label
/// and the seed that produced it (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
    provenance: String,
    seed: Option<u64>,
}

impl SampleSet {
    pub fn new(dim: usize, data: Vec<f64>, provenance: impl Into<String>, seed: Option<u64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidInput(format!("{} values do not form rows of length {dim}", data.len())));
        }
        Ok(Self { dim, data, provenance: provenance.into(), seed })
    }

    pub fn from_rows(rows: &[Vec<f64>], provenance: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("ragged sample rows".into()));
        }
        Self::new(dim.max(1), rows.concat(), provenance, None)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_label(mut self, provenance: impl Into<String>, seed: Option<u64>) -> Self {
        self.provenance = provenance.into();
        self.seed = seed;
        self
    }

    /// Rows `[start, end)` as a new set with the same labels.
    pub fn slice(&self, start: usize, end: usize) -> SampleSet {
        SampleSet {
            dim: self.dim,
            data: self.data[start * self.dim..end * self.dim].to_vec(),
            provenance: self.provenance.clone(),
            seed: self.seed,
        }
    }

    /// Values of a 1-D set (errors for `d > 1`).
    pub fn values_1d(&self) -> Result<&[f64]> {
        if self.dim != 1 {
            return Err(Error::DimMismatch { expected: 1, actual: self.dim });
        }
        Ok(&self.data)
    }

    /// Per-coordinate sample mean and (population) variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.len() as f64;
        let mut mean = vec![0.0; self.dim];
        for r in self.rows() {
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.dim];
        for r in self.rows() {
            for d in 0..self.dim {
                let e = r[d] - mean[d];
                var[d] += e * e;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        (mean, var)
    }

    /// CSV with a header `x0,x1,...` and one row per sample.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim).map(|d| format!("x{d}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for r in self.rows() {
            let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Schema("empty sample CSV".into()))?;
        let dim = header.split(',').count();
        let mut data = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<&str> = line.split(',').collect();
            if row.len() != dim {
                return Err(Error::Schema(format!("CSV row {} has {} fields, expected {dim}", i + 1, row.len())));
            }
            for v in row {
                data.push(v.trim().parse::<f64>().map_err(|e| Error::Schema(format!("CSV row {}: {e}", i + 1)))?);
            }
        }
        Self::new(dim, data, provenance, None)
    }
}
