//! Logistic likelihood primitives and the weighted Newton solver.
//!
//! Everything here works on a [`WeightedSample`]: a view of dataset rows with
//! positive weights. Full-data fits use unit weights over all rows; subsample
//! fits use the drawn rows weighted by `1/π*_i`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OsmacError, Result};
use crate::linalg::{self, SpdFactor};
use crate::par;

/// `|x^T β|` above this means fitted probabilities are saturated.
pub const SATURATED_ETA: f64 = 30.0;

/// `exp(η) / (1 + exp(η))` without overflow.
#[inline]
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(η))`.
#[inline]
pub fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// `y log p + (1-y) log(1-p)` at linear predictor `η`.
#[inline]
fn row_loglik(y: u8, eta: f64) -> f64 {
    if y == 1 {
        -softplus(-eta)
    } else {
        -softplus(eta)
    }
}

/// `y - p`, computed without cancellation when `p` saturates.
#[inline]
pub fn residual(y: u8, eta: f64) -> f64 {
    if y == 1 {
        sigmoid(-eta)
    } else {
        -sigmoid(eta)
    }
}

/// `p (1 - p)`.
#[inline]
pub fn variance_weight(eta: f64) -> f64 {
    sigmoid(eta) * sigmoid(-eta)
}

/// Rows of a dataset with positive weights.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSample<'a> {
    data: &'a Dataset,
    rows: Option<&'a [usize]>,
    weights: Option<&'a [f64]>,
}

impl<'a> WeightedSample<'a> {
    /// All rows, unit weights.
    pub fn full(data: &'a Dataset) -> Self {
        Self {
            data,
            rows: None,
            weights: None,
        }
    }

    /// `rows = None` selects every row; `weights = None` means unit weights.
    pub fn new(
        data: &'a Dataset,
        rows: Option<&'a [usize]>,
        weights: Option<&'a [f64]>,
    ) -> Result<Self> {
        let m = rows.map_or(data.n(), <[usize]>::len);
        if let Some(r) = rows {
            if let Some(&i) = r.iter().find(|&&i| i >= data.n()) {
                return Err(OsmacError::InvalidData(format!("row {i} out of range")));
            }
        }
        if let Some(w) = weights {
            if w.len() != m {
                return Err(OsmacError::DimensionMismatch {
                    expected: m,
                    got: w.len(),
                });
            }
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(OsmacError::InvalidData(
                    "weights must be positive and finite".into(),
                ));
            }
        }
        Ok(Self {
            data,
            rows,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.map_or(self.data.n(), <[usize]>::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.d()
    }

    #[inline]
    fn index(&self, k: usize) -> usize {
        self.rows.map_or(k, |r| r[k])
    }

    #[inline]
    fn weight(&self, k: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[k])
    }

    /// True when every row in the sample has the same response.
    pub fn single_class(&self) -> bool {
        let first = self.data.y(self.index(0));
        (1..self.len()).all(|k| self.data.y(self.index(k)) == first)
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(OsmacError::DimensionMismatch {
                expected: self.dim(),
                got: beta.len(),
            });
        }
        Ok(())
    }
}

/// Weighted log-likelihood `Σ w_i [y_i log p_i + (1-y_i) log(1-p_i)]`.
pub fn loglik(sample: &WeightedSample<'_>, beta: &[f64]) -> Result<f64> {
    sample.check_beta(beta)?;
    Ok(par::fold_chunks(
        sample.len(),
        || 0.0,
        |acc, range| {
            for k in range {
                let i = sample.index(k);
                let eta = linalg::dot(sample.data.row(i), beta);
                *acc += sample.weight(k) * row_loglik(sample.data.y(i), eta);
            }
        },
        |a, b| a + b,
    ))
}

/// Log-likelihood, score and negative Hessian from one pass over the rows.
pub(crate) struct Evaluation {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub neg_hessian: DMatrix<f64>,
    pub max_abs_eta: f64,
}

pub(crate) fn evaluate(sample: &WeightedSample<'_>, beta: &[f64]) -> Evaluation {
    let d = sample.dim();
    let packed = d * (d + 1) / 2;
    // [loglik, max|eta|, gradient (d), packed Hessian]
    let acc = par::fold_chunks(
        sample.len(),
        || vec![0.0; 2 + d + packed],
        |acc, range| {
            let (head, rest) = acc.split_at_mut(2);
            let (grad, hess) = rest.split_at_mut(d);
            for k in range {
                let i = sample.index(k);
                let x = sample.data.row(i);
                let y = sample.data.y(i);
                let w = sample.weight(k);
                let eta = linalg::dot(x, beta);
                head[0] += w * row_loglik(y, eta);
                head[1] = head[1].max(eta.abs());
                let r = w * residual(y, eta);
                for (g, xj) in grad.iter_mut().zip(x) {
                    *g += r * xj;
                }
                linalg::packed_rank1(hess, x, w * variance_weight(eta));
            }
        },
        |a, b| {
            let m = a[1].max(b[1]);
            let mut s = par::add_vecs(a, b);
            s[1] = m;
            s
        },
    );
    Evaluation {
        loglik: acc[0],
        max_abs_eta: acc[1],
        gradient: DVector::from_column_slice(&acc[2..2 + d]),
        neg_hessian: linalg::unpack_upper(&acc[2 + d..], d),
    }
}

/// Score `Σ w_i (y_i - p_i) x_i` and negative Hessian
/// `Σ w_i p_i (1 - p_i) x_i x_i^T`.
pub fn score_and_hessian(
    sample: &WeightedSample<'_>,
    beta: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    sample.check_beta(beta)?;
    let ev = evaluate(sample, beta);
    Ok((ev.gradient, ev.neg_hessian))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Relative step tolerance `‖Δβ‖ / max(1, ‖β‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖β‖` beyond this is taken as divergence.
    pub divergence_norm: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            divergence_norm: 1e8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0;
        if !positive(self.tol) || self.max_iter == 0 || !positive(self.divergence_norm) {
            return Err(OsmacError::InvalidSpec(format!(
                "solver config needs tol > 0, max_iter >= 1, divergence_norm > 0: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub separation_detected: bool,
    pub loglik: f64,
    pub vcov: Option<DMatrix<f64>>,
    pub se: Option<Vec<f64>>,
}

impl FitResult {
    /// Attaches a covariance matrix and the matching standard errors.
    pub fn with_vcov(mut self, vcov: DMatrix<f64>) -> Self {
        self.se = Some((0..vcov.nrows()).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect());
        self.vcov = Some(vcov);
        self
    }
}

/// What the Newton loop observed, for separation checks.
#[derive(Debug, Clone, Default)]
pub struct IterDiagnostics {
    pub loglik_path: Vec<f64>,
    pub beta_norm: f64,
    pub max_abs_eta: f64,
    pub hit_max_iter: bool,
}

/// Heuristic test that the MLE does not exist.
///
/// True when all responses are equal, when `‖β‖` passed the divergence
/// threshold, or when the iteration cap was reached with the
/// log-likelihood still non-decreasing and some `|x_i^T β| > 30`.
pub fn check_separation(
    sample: &WeightedSample<'_>,
    diag: &IterDiagnostics,
    cfg: &SolverConfig,
) -> bool {
    if sample.is_empty() || sample.single_class() {
        return true;
    }
    if !diag.beta_norm.is_finite() || diag.beta_norm > cfg.divergence_norm {
        return true;
    }
    let still_climbing = match diag.loglik_path.as_slice() {
        [.., a, b] => b >= a,
        _ => false,
    };
    diag.hit_max_iter && still_climbing && diag.max_abs_eta > SATURATED_ETA
}

/// Runs Newton's method and reports separation through the result flags.
///
/// Only a singular negative Hessian at unsaturated probabilities is an error
/// here; [`newton_mle`] additionally turns detected separation into an error.
pub fn newton_iterate(
    sample: &WeightedSample<'_>,
    init: &[f64],
    cfg: &SolverConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    sample.check_beta(init)?;
    if sample.is_empty() {
        return Err(OsmacError::InvalidData("empty sample".into()));
    }
    let mut beta = DVector::from_column_slice(init);
    let mut diag = IterDiagnostics::default();
    let mut converged = false;
    let mut iterations = 0;
    let mut separated = false;

    while iterations < cfg.max_iter {
        let ev = evaluate(sample, beta.as_slice());
        diag.loglik_path.push(ev.loglik);
        diag.max_abs_eta = ev.max_abs_eta;
        let Some(factor) = SpdFactor::new(&ev.neg_hessian) else {
            if ev.max_abs_eta > SATURATED_ETA {
                separated = true;
                break;
            }
            return Err(OsmacError::SingularHessian);
        };
        let step = factor.solve(&ev.gradient);
        let rel = step.norm() / beta.norm().max(1.0);
        beta += step;
        iterations += 1;
        diag.beta_norm = beta.norm();
        if !diag.beta_norm.is_finite() || diag.beta_norm > cfg.divergence_norm {
            separated = true;
            break;
        }
        if rel <= cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged && !separated {
        diag.hit_max_iter = true;
        separated = check_separation(sample, &diag, cfg);
    }
    let loglik = if beta.iter().all(|v| v.is_finite()) {
        loglik(sample, beta.as_slice())?
    } else {
        f64::NAN
    };
    Ok(FitResult {
        beta: beta.as_slice().to_vec(),
        converged,
        iterations,
        separation_detected: separated,
        loglik,
        vcov: None,
        se: None,
    })
}

/// Maximizes the weighted log-likelihood from `init`.
pub fn newton_mle(sample: &WeightedSample<'_>, init: &[f64], cfg: &SolverConfig) -> Result<FitResult> {
    let fit = newton_iterate(sample, init, cfg)?;
    if fit.separation_detected {
        return Err(OsmacError::Separation);
    }
    Ok(fit)
}

/// Unit-weight full-data MLE from `β = 0`.
pub fn fit_full(data: &Dataset, cfg: &SolverConfig) -> Result<FitResult> {
    newton_mle(&WeightedSample::full(data), &vec![0.0; data.d()], cfg)
}
