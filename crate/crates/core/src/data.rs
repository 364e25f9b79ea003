//! Core containers: the full dataset, subsampling plans and subsamples.

use serde::{Deserialize, Serialize};

use crate::error::{OsmacError, Result};

/// Tolerance on `Σ π_i = 1` for with-replacement plans.
pub const PLAN_SUM_TOL: f64 = 1e-12;

/// Dense row-major covariates with binary responses.
///
/// If the model has an intercept it is an ordinary all-ones column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<u8>,
    n: usize,
    d: usize,
}

impl Dataset {
    /// Builds a dataset from row-major covariates.
    pub fn new(x: Vec<f64>, y: Vec<u8>, d: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 || d == 0 {
            return Err(OsmacError::InvalidData(format!(
                "need n >= 1 and d >= 1 (n = {n}, d = {d})"
            )));
        }
        if x.len() != n * d {
            return Err(OsmacError::DimensionMismatch {
                expected: n * d,
                got: x.len(),
            });
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(OsmacError::InvalidData(format!(
                "response at row {i} is {}, expected 0 or 1",
                y[i]
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(OsmacError::InvalidData(format!(
                "non-finite covariate at row {}, column {}",
                k / d,
                k % d
            )));
        }
        Ok(Self { x, y, n, d })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<u8>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(OsmacError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(rows.concat(), y, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn y(&self, i: usize) -> u8 {
        self.y[i]
    }

    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn responses(&self) -> &[u8] {
        &self.y
    }

    /// `(n0, n1)`: number of zero and one responses.
    pub fn class_counts(&self) -> (usize, usize) {
        let n1 = self.y.iter().filter(|&&v| v == 1).count();
        (self.n - n1, n1)
    }

    /// A new dataset made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Dataset> {
        let mut x = Vec::with_capacity(rows.len() * self.d);
        let mut y = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n {
                return Err(OsmacError::InvalidData(format!("row index {i} out of range")));
            }
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset::new(x, y, self.d)
    }

    /// Copy with an all-ones column prepended.
    pub fn with_intercept(&self) -> Dataset {
        let d = self.d + 1;
        let mut x = Vec::with_capacity(self.n * d);
        for i in 0..self.n {
            x.push(1.0);
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            x,
            y: self.y.clone(),
            n: self.n,
            d,
        }
    }

    /// Column means and standard deviations (population form).
    pub fn column_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for (m, v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.d];
        for i in 0..self.n {
            for ((s, v), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
    }

    /// Centers and scales every column except those listed in `skip`,
    /// using the supplied moments.
    pub fn standardized_with(&self, mean: &[f64], sd: &[f64], skip: &[usize]) -> Result<Dataset> {
        let mut x = self.x.clone();
        for row in x.chunks_mut(self.d) {
            for (j, v) in row.iter_mut().enumerate() {
                if !skip.contains(&j) && sd[j] > 0.0 {
                    *v = (*v - mean[j]) / sd[j];
                }
            }
        }
        Dataset::new(x, self.y.clone(), self.d)
    }
}

/// Identifies how a plan was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Uniform,
    CaseControl,
    Mmse,
    Mvc,
    LccAcceptance,
}

impl Scheme {
    /// Plans drawn with replacement; their probabilities sum to one.
    pub fn is_replacement(self) -> bool {
        !matches!(self, Scheme::LccAcceptance)
    }
}

/// Per-row subsampling probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pi: Vec<f64>,
    scheme: Scheme,
    pilot: Option<Vec<f64>>,
}

impl SamplingPlan {
    pub fn new(pi: Vec<f64>, scheme: Scheme, pilot: Option<Vec<f64>>) -> Result<Self> {
        if pi.is_empty() {
            return Err(OsmacError::InvalidPlan("empty plan".into()));
        }
        if let Some(i) = pi.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(OsmacError::InvalidPlan(format!(
                "pi[{i}] = {} is not a finite non-negative value",
                pi[i]
            )));
        }
        if scheme.is_replacement() {
            let s = crate::par::sum(&pi);
            if (s - 1.0).abs() > PLAN_SUM_TOL {
                return Err(OsmacError::NotNormalized { sum: s });
            }
        } else if let Some(i) = pi.iter().position(|p| *p > 1.0) {
            return Err(OsmacError::InvalidPlan(format!(
                "acceptance probability pi[{i}] = {} exceeds one",
                pi[i]
            )));
        }
        Ok(Self { pi, scheme, pilot })
    }

    pub fn probs(&self) -> &[f64] {
        &self.pi
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn pilot(&self) -> Option<&[f64]> {
        self.pilot.as_deref()
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Mixes a replacement plan with the uniform plan: `(1-ε)π + ε/n`.
    ///
    /// Every probability is then at least `ε/n`; used to stress-test extreme
    /// inverse-probability weights.
    pub fn floored(&self, eps: f64) -> Result<Self> {
        if !self.scheme.is_replacement() || !(0.0..=1.0).contains(&eps) {
            return Err(OsmacError::InvalidPlan(
                "floor needs a replacement plan and eps in [0, 1]".into(),
            ));
        }
        let u = eps / self.pi.len() as f64;
        let pi = self.pi.iter().map(|p| (1.0 - eps) * p + u).collect();
        Self::new(pi, self.scheme, self.pilot.clone())
    }

    /// `index,pi` lines with a header, for `--dump-ssp`.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.pi.len() * 24);
        s.push_str("index,pi\n");
        for (i, p) in self.pi.iter().enumerate() {
            s.push_str(&format!("{i},{p}\n"));
        }
        s
    }
}

/// Which step of a two-step procedure drew a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Step1,
    Step2,
}

/// Drawn row indices with the probability each was drawn under.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Subsample {
    indices: Vec<usize>,
    probs: Vec<f64>,
    steps: Vec<Step>,
}

impl Subsample {
    pub fn new(indices: Vec<usize>, probs: Vec<f64>, steps: Vec<Step>) -> Result<Self> {
        if indices.len() != probs.len() || indices.len() != steps.len() {
            return Err(OsmacError::InvalidData(
                "indices, probs and step tags differ in length".into(),
            ));
        }
        if probs.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(OsmacError::InvalidData(
                "subsample probabilities must be positive".into(),
            ));
        }
        Ok(Self {
            indices,
            probs,
            steps,
        })
    }

    /// Each index once, with the given probability and step.
    pub fn from_indices(indices: Vec<usize>, prob: f64, step: Step) -> Result<Self> {
        let m = indices.len();
        Self::new(indices, vec![prob; m], vec![step; m])
    }

    pub(crate) fn push(&mut self, index: usize, prob: f64, step: Step) {
        self.indices.push(index);
        self.probs.push(prob);
        self.steps.push(step);
    }

    /// Appends another subsample (pooling two steps).
    pub fn extend(&mut self, other: &Subsample) {
        self.indices.extend_from_slice(&other.indices);
        self.probs.extend_from_slice(&other.probs);
        self.steps.extend_from_slice(&other.steps);
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Inverse-probability weights `1/π*_i`.
    pub fn inverse_prob_weights(&self) -> Vec<f64> {
        self.probs.iter().map(|p| 1.0 / p).collect()
    }

    /// Checks every index against a dataset of `n` rows.
    pub fn check_bounds(&self, n: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n) {
            Some(i) => Err(OsmacError::InvalidData(format!(
                "subsample index {i} out of range for n = {n}"
            ))),
            None => Ok(()),
        }
    }
}
