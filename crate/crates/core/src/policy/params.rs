//! Weight matrix and its text file format.
//!
//! ```text
//! prco-params 1
//! vocab_size <V>
//! feature_dim <D>
//! version <n>
//! env <slots> <colors> <shapes>
//! <V lines, each D whitespace-separated f64 values>
//! ```
//!
//! Values are written in Rust's shortest round-trip form, so a
//! write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synthenv::EnvConfig;

const MAGIC: &str = "prco-params 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) {
        assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|a| *a *= alpha);
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub weights: Matrix,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(vocab_len: usize, feature_dim: usize) -> Self {
        Self { weights: Matrix::zeros(vocab_len, feature_dim), version: 0 }
    }

    pub fn to_text(&self, env: &EnvConfig) -> String {
        let mut out = String::new();
        let (v, d) = self.weights.shape();
        writeln!(out, "{MAGIC}").unwrap();
        writeln!(out, "vocab_size {v}").unwrap();
        writeln!(out, "feature_dim {d}").unwrap();
        writeln!(out, "version {}", self.version).unwrap();
        writeln!(out, "env {} {} {}", env.slots, env.colors, env.shapes).unwrap();
        write_matrix_rows(&mut out, &self.weights);
        out
    }

    /// Parses a params file; returns the params and the environment
    /// dimensions recorded in the header.
    pub fn from_text(text: &str) -> Result<(Self, EnvConfig)> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::Parse("missing params header".into()));
        }
        let v: usize = header_value(lines.next(), "vocab_size")?;
        let d: usize = header_value(lines.next(), "feature_dim")?;
        let version: u64 = header_value(lines.next(), "version")?;
        let env_line = lines.next().ok_or_else(|| Error::Parse("missing env line".into()))?;
        let dims: Vec<usize> = env_line
            .split_whitespace()
            .skip(1)
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad env line: {env_line}"))))
            .collect::<Result<_>>()?;
        if !env_line.starts_with("env ") || dims.len() != 3 {
            return Err(Error::Parse(format!("bad env line: {env_line}")));
        }
        let env = EnvConfig { slots: dims[0], colors: dims[1], shapes: dims[2], ..Default::default() };
        let weights = read_matrix_rows(&mut lines, v, d)?;
        Ok((Self { weights, version }, env))
    }

    pub fn save(&self, path: &Path, env: &EnvConfig) -> Result<()> {
        std::fs::write(path, self.to_text(env))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, EnvConfig)> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn header_value<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T> {
    let line = line.ok_or_else(|| Error::Parse(format!("missing {key}")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse(format!("expected {key}, got {line:?}")));
    }
    parts
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad value for {key}: {line:?}")))
}

pub(crate) fn write_matrix_rows(out: &mut String, m: &Matrix) {
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

pub(crate) fn read_matrix_rows<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    rows: usize,
    cols: usize,
) -> Result<Matrix> {
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines.next().ok_or_else(|| Error::Parse(format!("missing row {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok.parse().map_err(|_| Error::Parse(format!("bad number {tok:?}")))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("non-finite weight in row {r}")));
            }
            data.push(x);
        }
        if data.len() - before != cols {
            return Err(Error::Dimension {
                expected: format!("{cols} columns"),
                got: format!("{} in row {r}", data.len() - before),
            });
        }
    }
    Ok(Matrix::from_vec(rows, cols, data))
}
