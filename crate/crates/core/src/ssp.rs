//! Subsampling probabilities (SSPs).
//!
//! The asymptotic covariance of a subsample estimator drawn with plan `π` is
//! `V = M_X^{-1} V_c M_X^{-1}` with
//!
//! ```text
//! M_X = n^{-1} Σ p_i (1 - p_i) x_i x_i^T
//! V_c = (r n²)^{-1} Σ (y_i - p_i)² x_i x_i^T / π_i
//! ```
//!
//! By Cauchy–Schwarz, `tr(V)` is minimized by `π_i ∝ |y_i - p_i| ‖M_X^{-1} x_i‖`
//! (mMSE) and `tr(V_c)` by `π_i ∝ |y_i - p_i| ‖x_i‖` (mVc). Both are built at a
//! pilot `β`.

use nalgebra::DMatrix;

use crate::data::{Dataset, SamplingPlan, Scheme, Subsample};
use crate::error::{OsmacError, Result};
use crate::glm::{residual, variance_weight};
use crate::linalg::{self, SpdFactor};
use crate::par;

/// `M_X` at some `β`: symmetric positive semidefinite, `d × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MxMatrix(DMatrix<f64>);

impl MxMatrix {
    /// Wraps a matrix after checking symmetry and positive semidefiniteness.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(OsmacError::InvalidData("M_X must be square".into()));
        }
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        let d = m.nrows();
        for i in 0..d {
            for j in i + 1..d {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(OsmacError::InvalidData("M_X is not symmetric".into()));
                }
            }
        }
        let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-10 * m.trace().abs() {
            return Err(OsmacError::InvalidData(format!(
                "M_X is not positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

fn check_beta(data: &Dataset, beta: &[f64]) -> Result<()> {
    if beta.len() != data.d() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.d(),
            got: beta.len(),
        });
    }
    Ok(())
}

/// `M_X = n^{-1} Σ w_i(β) x_i x_i^T` over the full data. `O(n d²)`.
pub fn compute_mx(data: &Dataset, beta: &[f64]) -> Result<MxMatrix> {
    check_beta(data, beta)?;
    let d = data.d();
    let packed = par::fold_chunks(
        data.n(),
        || vec![0.0; d * (d + 1) / 2],
        |acc, range| {
            for i in range {
                let x = data.row(i);
                linalg::packed_rank1(acc, x, variance_weight(linalg::dot(x, beta)));
            }
        },
        par::add_vecs,
    );
    let mut m = linalg::unpack_upper(&packed, d);
    m /= data.n() as f64;
    Ok(MxMatrix(m))
}

/// Method-of-moments estimate from a subsample:
/// `(n m)^{-1} Σ w*_i(β) x*_i x*_i^T / π*_i`, with `m` the subsample size.
pub fn compute_mx_from_subsample(data: &Dataset, sub: &Subsample, beta: &[f64]) -> Result<MxMatrix> {
    check_beta(data, beta)?;
    sub.check_bounds(data.n())?;
    if sub.is_empty() {
        return Err(OsmacError::InvalidData("empty subsample".into()));
    }
    let d = data.d();
    let mut packed = vec![0.0; d * (d + 1) / 2];
    for (&i, &p) in sub.indices().iter().zip(sub.probs()) {
        let x = data.row(i);
        linalg::packed_rank1(&mut packed, x, variance_weight(linalg::dot(x, beta)) / p);
    }
    let mut m = linalg::unpack_upper(&packed, d);
    m /= data.n() as f64 * sub.len() as f64;
    Ok(MxMatrix(m))
}

/// `π_i = 1/n`.
pub fn ssp_uniform(n: usize) -> Result<SamplingPlan> {
    if n == 0 {
        return Err(OsmacError::InvalidData("n must be >= 1".into()));
    }
    SamplingPlan::new(vec![1.0 / n as f64; n], Scheme::Uniform, None)
}

/// Case-control plan: each response class gets total mass 1/2.
pub fn ssp_case_control(data: &Dataset) -> Result<SamplingPlan> {
    let (n0, n1) = data.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(OsmacError::DegenerateClasses { n0, n1 });
    }
    let (p0, p1) = (0.5 / n0 as f64, 0.5 / n1 as f64);
    let pi = data
        .responses()
        .iter()
        .map(|&y| if y == 1 { p1 } else { p0 })
        .collect();
    SamplingPlan::new(pi, Scheme::CaseControl, None)
}

fn normalized(scores: Vec<f64>, scheme: Scheme, beta: &[f64]) -> Result<SamplingPlan> {
    let total = par::sum(&scores);
    if !(total > 0.0 && total.is_finite()) {
        return Err(OsmacError::ZeroMass);
    }
    let mut pi = scores;
    pi.iter_mut().for_each(|v| *v /= total);
    SamplingPlan::new(pi, scheme, Some(beta.to_vec()))
}

/// mVc plan, `π_i ∝ |y_i - p_i(β)| ‖x_i‖`. `O(n d)`.
pub fn ssp_mvc(data: &Dataset, beta: &[f64]) -> Result<SamplingPlan> {
    check_beta(data, beta)?;
    let mut scores = vec![0.0; data.n()];
    par::fill(&mut scores, |i| {
        let x = data.row(i);
        residual(data.y(i), linalg::dot(x, beta)).abs() * linalg::norm(x)
    });
    normalized(scores, Scheme::Mvc, beta)
}

/// Evaluates `‖M^{-1} x‖` for many rows from one factorization.
///
/// With `M^{-1} = Q R`, `‖M^{-1} x‖ = ‖R x‖`, so each row costs one
/// triangular product (`d²/2` multiply-adds).
pub(crate) struct InverseNorm {
    d: usize,
    // R, packed row-major upper triangle
    r: Vec<f64>,
}

impl InverseNorm {
    pub(crate) fn new(mx: &MxMatrix) -> Result<Self> {
        let inv = SpdFactor::new(mx.matrix())
            .ok_or(OsmacError::SingularMx)?
            .inverse();
        let d = inv.nrows();
        let r_full = inv.qr().unpack_r();
        // upper triangle, column by column
        let mut r = Vec::with_capacity(d * (d + 1) / 2);
        for j in 0..d {
            for i in 0..=j {
                r.push(r_full[(i, j)]);
            }
        }
        Ok(Self { d, r })
    }

    pub(crate) fn scratch(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }

    /// `‖M^{-1} x‖²`, accumulating `R x` one column at a time in `u`.
    #[inline]
    pub(crate) fn norm_sq(&self, x: &[f64], u: &mut [f64]) -> f64 {
        u.fill(0.0);
        let mut k = 0;
        for (j, &xj) in x.iter().enumerate() {
            for (ui, rij) in u[..=j].iter_mut().zip(&self.r[k..=k + j]) {
                *ui += rij * xj;
            }
            k += j + 1;
        }
        u.iter().map(|v| v * v).sum()
    }
}

/// mMSE plan, `π_i ∝ |y_i - p_i(β)| ‖M_X^{-1} x_i‖`. `O(n d²)`.
pub fn ssp_mmse(data: &Dataset, beta: &[f64], mx: &MxMatrix) -> Result<SamplingPlan> {
    check_beta(data, beta)?;
    if mx.dim() != data.d() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.d(),
            got: mx.dim(),
        });
    }
    let inv = InverseNorm::new(mx)?;
    let mut scores = vec![0.0; data.n()];
    par::fill_with(&mut scores, || inv.scratch(), |u, i| {
        let x = data.row(i);
        residual(data.y(i), linalg::dot(x, beta)).abs() * inv.norm_sq(x, u).sqrt()
    });
    normalized(scores, Scheme::Mmse, beta)
}

/// Local case-control acceptance probabilities `|y_i - p_i(β)|`, not
/// normalized; used with Poisson sampling.
pub fn ssp_lcc_acceptance(data: &Dataset, beta: &[f64]) -> Result<SamplingPlan> {
    check_beta(data, beta)?;
    let mut pi = vec![0.0; data.n()];
    par::fill(&mut pi, |i| {
        residual(data.y(i), linalg::dot(data.row(i), beta)).abs()
    });
    SamplingPlan::new(pi, Scheme::LccAcceptance, Some(beta.to_vec()))
}

/// Which asymptotic MSE criterion [`amse_trace`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMode {
    /// `tr(V)`, minimized by mMSE.
    TraceV,
    /// `tr(V_c)`, minimized by mVc.
    TraceVc,
}

/// `tr(V)` or `tr(V_c)` for plan `π` and subsample size `r`:
///
/// ```text
/// (r n²)^{-1} Σ (y_i - p_i)² ‖v_i‖² / π_i,  v_i = M_X^{-1} x_i or x_i
/// ```
///
/// Rows with a zero numerator contribute nothing even if `π_i = 0`.
pub fn amse_trace(
    data: &Dataset,
    plan: &SamplingPlan,
    beta: &[f64],
    mx: &MxMatrix,
    r: usize,
    mode: TraceMode,
) -> Result<f64> {
    check_beta(data, beta)?;
    if plan.len() != data.n() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.n(),
            got: plan.len(),
        });
    }
    if r == 0 {
        return Err(OsmacError::InvalidSpec("r must be >= 1".into()));
    }
    let inv = match mode {
        TraceMode::TraceV => Some(InverseNorm::new(mx)?),
        TraceMode::TraceVc => None,
    };
    let pi = plan.probs();
    let mut terms = vec![0.0; data.n()];
    let scratch = || inv.as_ref().map_or_else(Vec::new, InverseNorm::scratch);
    par::fill_with(&mut terms, scratch, |u, i| {
        let x = data.row(i);
        let res = residual(data.y(i), linalg::dot(x, beta));
        let nsq = match &inv {
            Some(inv) => inv.norm_sq(x, u),
            None => x.iter().map(|v| v * v).sum(),
        };
        let num = res * res * nsq;
        if num == 0.0 {
            0.0
        } else if pi[i] == 0.0 {
            f64::NAN
        } else {
            num / pi[i]
        }
    });
    if let Some(index) = terms.iter().position(|t| t.is_nan()) {
        return Err(OsmacError::DivisionByZeroMass { index });
    }
    let n = data.n() as f64;
    Ok(par::sum(&terms) / (r as f64 * n * n))
}
