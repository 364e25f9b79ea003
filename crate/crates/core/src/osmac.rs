//! Subsample estimators.
//!
//! * [`algorithm1_estimate`]: draw `r` rows with replacement from a plan and
//!   maximize the inverse-probability weighted log-likelihood.
//! * [`two_step_estimate`]: a pilot fit on `r0` rows, an optimal plan built at
//!   the pilot, `r` further rows, and one weighted fit on the pooled rows.
//! * [`lcc_estimate`]: the local case-control baseline.
//! * [`estimate_variance`]: the sandwich covariance estimated from the
//!   subsample alone.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SamplingPlan, Step, Subsample};
use crate::error::{OsmacError, Result};
use crate::glm::{self, residual, FitResult, SolverConfig, WeightedSample};
use crate::linalg::{self, SpdFactor};
use crate::sampler::{self, AliasTable, Rng};
use crate::ssp;

/// Plan used to draw the pilot subsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PilotScheme {
    #[default]
    Uniform,
    CaseControl,
}

/// Optimality criterion for the second-step plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Mmse,
    Mvc,
}

/// Where the mMSE plan takes `M_X` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MxSource {
    /// `M_X` over all `n` rows at the pilot, `O(n d²)`.
    #[default]
    FullData,
    /// Weighted moment estimate from the pilot subsample only.
    PilotSubsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepConfig {
    pub r0: usize,
    pub r: usize,
    pub pilot_scheme: PilotScheme,
    pub criterion: Criterion,
    pub mx_source: MxSource,
    pub solver: SolverConfig,
    /// Mixes the optimal plan with uniform: `(1-ε)π + ε/n`.
    pub floor: Option<f64>,
}

impl TwoStepConfig {
    pub fn new(r0: usize, r: usize, criterion: Criterion) -> Self {
        Self {
            r0,
            r,
            pilot_scheme: PilotScheme::Uniform,
            criterion,
            mx_source: MxSource::FullData,
            solver: SolverConfig::default(),
            floor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r0 == 0 || self.r == 0 {
            return Err(OsmacError::InvalidSpec(format!(
                "r0 and r must be >= 1 (r0 = {}, r = {})",
                self.r0, self.r
            )));
        }
        if let Some(eps) = self.floor {
            if !(0.0..=1.0).contains(&eps) {
                return Err(OsmacError::InvalidSpec(format!("floor {eps} outside [0, 1]")));
            }
        }
        self.solver.validate()
    }
}

/// `V̆ = M̆_X^{-1} V̆_c M̆_X^{-1}` with its two factors.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    pub vcov: DMatrix<f64>,
    pub mx_hat: DMatrix<f64>,
    pub vc_hat: DMatrix<f64>,
}

impl VarianceEstimate {
    pub fn se(&self) -> Vec<f64> {
        (0..self.vcov.nrows())
            .map(|j| self.vcov[(j, j)].max(0.0).sqrt())
            .collect()
    }

    /// `tr(V̆)`, the estimated MSE.
    pub fn trace(&self) -> f64 {
        self.vcov.trace()
    }
}

/// Weighted MLE on a subsample with weights `1/π*_i`.
pub fn subsample_mle(
    data: &Dataset,
    sub: &Subsample,
    init: &[f64],
    solver: &SolverConfig,
) -> Result<FitResult> {
    sub.check_bounds(data.n())?;
    let w = sub.inverse_prob_weights();
    let sample = WeightedSample::new(data, Some(sub.indices()), Some(&w))?;
    glm::newton_mle(&sample, init, solver)
}

/// General subsampling: `r` draws from `plan`, then a weighted fit from `β = 0`.
pub fn algorithm1_estimate(
    data: &Dataset,
    plan: &SamplingPlan,
    r: usize,
    rng: &mut Rng,
    solver: &SolverConfig,
) -> Result<(FitResult, Subsample)> {
    if plan.len() != data.n() {
        return Err(OsmacError::DimensionMismatch {
            expected: data.n(),
            got: plan.len(),
        });
    }
    let table = AliasTable::build(plan)?;
    let sub = sampler::draw_with_replacement(&table, plan, r, rng, Step::Step1)?;
    let fit = subsample_mle(data, &sub, &vec![0.0; data.d()], solver)?;
    Ok((fit, sub))
}

/// Wall-clock split of a two-step run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTiming {
    /// Pilot draw and pilot fit.
    pub pilot: Duration,
    /// Optimal-plan construction, including `M_X` and the alias table.
    pub ssp: Duration,
    /// Second draw, pooled fit and variance estimate.
    pub solve: Duration,
}

#[derive(Debug, Clone)]
pub struct TwoStepOutput {
    /// Pooled estimate, with `vcov` and `se` from [`estimate_variance`].
    pub fit: FitResult,
    pub variance: VarianceEstimate,
    pub pilot: Vec<f64>,
    pub plan: SamplingPlan,
    /// Both steps pooled, each row tagged with its step.
    pub subsample: Subsample,
    pub timing: StepTiming,
    /// Number of full-data `M_X` evaluations performed.
    pub mx_evaluations: usize,
}

fn pilot_plan(data: &Dataset, scheme: PilotScheme) -> Result<SamplingPlan> {
    match scheme {
        PilotScheme::Uniform => ssp::ssp_uniform(data.n()),
        PilotScheme::CaseControl => ssp::ssp_case_control(data),
    }
}

fn pilot_failure(e: OsmacError) -> OsmacError {
    if e.is_estimation_failure() {
        OsmacError::PilotSeparation(Box::new(e))
    } else {
        e
    }
}

/// The two-step estimator.
///
/// Rows keep the probability they were drawn with, so pilot rows are
/// weighted by the pilot plan and second-step rows by the optimal plan.
pub fn two_step_estimate(data: &Dataset, cfg: &TwoStepConfig, rng: &mut Rng) -> Result<TwoStepOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let plan0 = pilot_plan(data, cfg.pilot_scheme)?;
    let table0 = AliasTable::build(&plan0)?;
    let mut pooled = sampler::draw_with_replacement(&table0, &plan0, cfg.r0, rng, Step::Step1)?;
    let pilot = subsample_mle(data, &pooled, &vec![0.0; data.d()], &cfg.solver)
        .map_err(pilot_failure)?
        .beta;

    let t1 = Instant::now();
    let mut mx_evaluations = 0;
    let mut plan = match cfg.criterion {
        Criterion::Mvc => ssp::ssp_mvc(data, &pilot)?,
        Criterion::Mmse => {
            let mx = match cfg.mx_source {
                MxSource::FullData => {
                    mx_evaluations += 1;
                    ssp::compute_mx(data, &pilot)?
                }
                MxSource::PilotSubsample => ssp::compute_mx_from_subsample(data, &pooled, &pilot)?,
            };
            ssp::ssp_mmse(data, &pilot, &mx)?
        }
    };
    if let Some(eps) = cfg.floor {
        plan = plan.floored(eps)?;
    }
    let table = AliasTable::build(&plan)?;

    let t2 = Instant::now();
    let second = sampler::draw_with_replacement(&table, &plan, cfg.r, rng, Step::Step2)?;
    pooled.extend(&second);
    let fit = subsample_mle(data, &pooled, &pilot, &cfg.solver)?;
    let variance = estimate_variance(&pooled, data, &fit.beta)?;
    let fit = fit.with_vcov(variance.vcov.clone());
    let t3 = Instant::now();

    Ok(TwoStepOutput {
        fit,
        variance,
        pilot,
        plan,
        subsample: pooled,
        timing: StepTiming {
            pilot: t1 - t0,
            ssp: t2 - t1,
            solve: t3 - t2,
        },
        mx_evaluations,
    })
}

/// Moment estimate of the sandwich covariance from a subsample of size `m`:
///
/// ```text
/// M̆_X = (n m)^{-1}   Σ w_i(β) x_i x_i^T / π_i
/// V̆_c = (n² m²)^{-1} Σ (y_i - p_i(β))² x_i x_i^T / π_i²
/// V̆   = M̆_X^{-1} V̆_c M̆_X^{-1}
/// ```
pub fn estimate_variance(sub: &Subsample, data: &Dataset, beta: &[f64]) -> Result<VarianceEstimate> {
    let mx_hat = ssp::compute_mx_from_subsample(data, sub, beta)?.into_inner();
    let d = data.d();
    let mut packed = vec![0.0; d * (d + 1) / 2];
    for (&i, &p) in sub.indices().iter().zip(sub.probs()) {
        let x = data.row(i);
        let e = residual(data.y(i), linalg::dot(x, beta)) / p;
        linalg::packed_rank1(&mut packed, x, e * e);
    }
    let nm = data.n() as f64 * sub.len() as f64;
    let mut vc_hat = linalg::unpack_upper(&packed, d);
    vc_hat /= nm * nm;
    let inv = SpdFactor::new(&mx_hat)
        .ok_or(OsmacError::SingularMxHat)?
        .inverse();
    let mut vcov = &inv * &vc_hat * &inv;
    linalg::symmetrize(&mut vcov);
    Ok(VarianceEstimate {
        vcov,
        mx_hat,
        vc_hat,
    })
}

#[derive(Debug, Clone)]
pub struct LccOutput {
    /// `β̃_0 + β̂_S`.
    pub fit: FitResult,
    pub pilot: Vec<f64>,
    /// Accepted rows.
    pub accepted: Subsample,
    /// Scale applied to the acceptance probabilities.
    pub scale: f64,
}

/// Local case-control subsampling.
///
/// A case-control pilot of `r0` rows gives `β̃_0`. Each row is accepted
/// independently with probability `c |y_i - p_i(β̃_0)|`, an unweighted fit on
/// the accepted rows gives `β̂_S`, and the estimate is `β̃_0 + β̂_S`. The
/// pilot rows are not reused. With `target = Some(r)`, `c = min(1, r / Σ_i
/// |y_i - p_i|)` so the expected acceptance count is `r`; otherwise `c = 1`.
/// Because `c` multiplies both classes equally it leaves the log-odds of the
/// accepted rows unchanged.
pub fn lcc_estimate(
    data: &Dataset,
    r0: usize,
    target: Option<usize>,
    rng: &mut Rng,
    solver: &SolverConfig,
) -> Result<LccOutput> {
    if r0 == 0 {
        return Err(OsmacError::InvalidSpec("r0 must be >= 1".into()));
    }
    let plan0 = ssp::ssp_case_control(data)?;
    let (pilot_fit, _) =
        algorithm1_estimate(data, &plan0, r0, rng, solver).map_err(pilot_failure)?;
    let pilot = pilot_fit.beta;

    let mut acceptance = ssp::ssp_lcc_acceptance(data, &pilot)?;
    let mut scale = 1.0;
    if let Some(r) = target {
        let mass = crate::par::sum(acceptance.probs());
        if mass > 0.0 {
            scale = (r as f64 / mass).min(1.0);
        }
        if scale < 1.0 {
            let pi = acceptance.probs().iter().map(|a| a * scale).collect();
            acceptance = SamplingPlan::new(pi, acceptance.scheme(), Some(pilot.clone()))?;
        }
    }
    let accepted = sampler::draw_poisson(&acceptance, rng)?;
    if accepted.is_empty() {
        return Err(OsmacError::EmptyAcceptance);
    }
    let sample = WeightedSample::new(data, Some(accepted.indices()), None)?;
    let mut fit = glm::newton_mle(&sample, &vec![0.0; data.d()], solver)?;
    for (b, p) in fit.beta.iter_mut().zip(&pilot) {
        *b += p;
    }
    fit.loglik = glm::loglik(&sample, &fit.beta)?;
    Ok(LccOutput {
        fit,
        pilot,
        accepted,
        scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Scheme;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed, 0);
        let mut x = Vec::with_capacity(n * 3);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row = [1.0, rng.standard_normal(), rng.standard_normal()];
            let eta = 0.3 + 0.8 * row[1] - 0.5 * row[2];
            y.push((rng.uniform01() < glm::sigmoid(eta)) as u8);
            x.extend_from_slice(&row);
        }
        Dataset::new(x, y, 3).unwrap()
    }

    #[test]
    fn every_row_once_matches_full_mle() {
        let data = toy(400, 1);
        let solver = SolverConfig::default();
        let full = glm::fit_full(&data, &solver).unwrap();
        let n = data.n();
        let sub = Subsample::from_indices((0..n).collect(), 1.0 / n as f64, Step::Step1).unwrap();
        let fit = subsample_mle(&data, &sub, &[0.0; 3], &solver).unwrap();
        for (a, b) in fit.beta.iter().zip(&full.beta) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn one_distinct_row_is_singular() {
        let data = toy(50, 2);
        let sub = Subsample::from_indices(vec![3; 20], 0.02, Step::Step1).unwrap();
        assert!(matches!(
            subsample_mle(&data, &sub, &[0.0; 3], &SolverConfig::default()),
            Err(OsmacError::SingularHessian)
        ));
    }

    #[test]
    fn full_data_variance_collapses_to_mx() {
        let data = toy(300, 3);
        let beta = glm::fit_full(&data, &SolverConfig::default()).unwrap().beta;
        let n = data.n();
        let sub = Subsample::from_indices((0..n).collect(), 1.0 / n as f64, Step::Step1).unwrap();
        let v = estimate_variance(&sub, &data, &beta).unwrap();
        let mx = ssp::compute_mx(&data, &beta).unwrap();
        let diff = (&v.mx_hat - mx.matrix()).abs().max();
        assert!(diff <= 1e-14 * mx.matrix().abs().max());
        assert_eq!(v.vcov, v.vcov.transpose());
        assert!(v.se().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn two_step_is_deterministic_and_tags_steps() {
        let data = toy(2000, 4);
        let cfg = TwoStepConfig::new(100, 300, Criterion::Mmse);
        let a = two_step_estimate(&data, &cfg, &mut Rng::new(8, 1)).unwrap();
        let b = two_step_estimate(&data, &cfg, &mut Rng::new(8, 1)).unwrap();
        assert_eq!(a.fit.beta, b.fit.beta);
        assert_eq!(a.subsample.len(), 400);
        assert!(a.subsample.steps()[..100].iter().all(|s| *s == Step::Step1));
        assert!(a.subsample.steps()[100..].iter().all(|s| *s == Step::Step2));
        assert_eq!(a.plan.scheme(), Scheme::Mmse);
        assert_eq!(a.mx_evaluations, 1);
        assert_eq!(a.fit.se.as_ref().unwrap().len(), 3);
    }

    #[test]
    fn mvc_never_computes_mx() {
        let data = toy(1000, 5);
        let mut cfg = TwoStepConfig::new(100, 200, Criterion::Mvc);
        cfg.mx_source = MxSource::FullData;
        let out = two_step_estimate(&data, &cfg, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(out.mx_evaluations, 0);
        cfg.criterion = Criterion::Mmse;
        cfg.mx_source = MxSource::PilotSubsample;
        let out = two_step_estimate(&data, &cfg, &mut Rng::new(0, 0)).unwrap();
        assert_eq!(out.mx_evaluations, 0);
    }

    #[test]
    fn pilot_failure_is_reported() {
        // a single row in class 1 makes a uniform pilot of 5 rows almost surely one-class
        let mut y = vec![0u8; 500];
        y[0] = 1;
        let x: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let data = Dataset::new(x, y, 1).unwrap();
        let cfg = TwoStepConfig::new(5, 10, Criterion::Mvc);
        assert!(matches!(
            two_step_estimate(&data, &cfg, &mut Rng::new(1, 0)),
            Err(OsmacError::PilotSeparation(_))
        ));
    }

    #[test]
    fn rejects_zero_sizes() {
        let data = toy(100, 6);
        let cfg = TwoStepConfig::new(0, 10, Criterion::Mvc);
        assert!(matches!(
            two_step_estimate(&data, &cfg, &mut Rng::new(1, 0)),
            Err(OsmacError::InvalidSpec(_))
        ));
    }

    #[test]
    fn lcc_target_scales_acceptance() {
        let data = toy(5000, 7);
        let solver = SolverConfig::default();
        let out = lcc_estimate(&data, 200, Some(500), &mut Rng::new(2, 0), &solver).unwrap();
        assert!(out.scale < 1.0);
        let m = out.accepted.len() as f64;
        assert!((m - 500.0).abs() < 5.0 * 500f64.sqrt());
        let free = lcc_estimate(&data, 200, None, &mut Rng::new(2, 0), &solver).unwrap();
        assert_eq!(free.scale, 1.0);
        assert!(free.accepted.len() > out.accepted.len());
    }

    #[test]
    fn lcc_needs_both_classes() {
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![1, 1, 1], 1).unwrap();
        assert!(matches!(
            lcc_estimate(&data, 2, None, &mut Rng::new(0, 0), &SolverConfig::default()),
            Err(OsmacError::DegenerateClasses { .. })
        ));
    }
}
