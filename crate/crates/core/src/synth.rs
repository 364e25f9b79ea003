//! Simulated logistic-regression data.
//!
//! The six main scenarios have seven covariates, no intercept and
//! `β = (0.5, …, 0.5)`. Normal scenarios use `Σ_ij = 0.5` off the diagonal
//! and 1 on it.
//!
//! | name          | covariates                                         |
//! |---------------|----------------------------------------------------|
//! | `mzNormal`    | `N(0, Σ)`                                           |
//! | `nzNormal`    | `N(1.5·1, Σ)`                                       |
//! | `ueNormal`    | `N(0, DΣD)`, `D = diag(1, …, 7)`                    |
//! | `mixNormal`   | `N(1, Σ)` or `N(-1, Σ)` by a fair coin per row      |
//! | `T3`          | `z / sqrt(w/3) / 10`, `z ~ N(0, Σ)`, `w ~ χ²_3`     |
//! | `EXP`         | i.i.d. exponential, rate 2                          |
//! | `rareNormalMean(μ)` | `N(μ·1, Σ)`                                   |
//! | `rareUnivariate(β0)` | intercept and `x ~ N(0, 1)`, `β = (β0, 1)`   |

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{OsmacError, Result};
use crate::glm::sigmoid;
use crate::linalg;
use crate::sampler::Rng;

pub const MAIN_DIM: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ScenarioKind {
    MzNormal,
    NzNormal,
    UeNormal,
    MixNormal,
    T3,
    Exp,
    RareNormalMean(f64),
    RareUnivariate(f64),
}

impl ScenarioKind {
    pub const MAIN: [ScenarioKind; 6] = [
        ScenarioKind::MzNormal,
        ScenarioKind::NzNormal,
        ScenarioKind::UeNormal,
        ScenarioKind::MixNormal,
        ScenarioKind::T3,
        ScenarioKind::Exp,
    ];

    /// Columns of the design, including the intercept of `rareUnivariate`.
    pub fn dim(self) -> usize {
        match self {
            ScenarioKind::RareUnivariate(_) => 2,
            _ => MAIN_DIM,
        }
    }

    pub fn default_beta(self) -> Vec<f64> {
        match self {
            ScenarioKind::RareUnivariate(b0) => vec![b0, 1.0],
            _ => vec![0.5; MAIN_DIM],
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioKind::MzNormal => f.write_str("mzNormal"),
            ScenarioKind::NzNormal => f.write_str("nzNormal"),
            ScenarioKind::UeNormal => f.write_str("ueNormal"),
            ScenarioKind::MixNormal => f.write_str("mixNormal"),
            ScenarioKind::T3 => f.write_str("T3"),
            ScenarioKind::Exp => f.write_str("EXP"),
            ScenarioKind::RareNormalMean(m) => write!(f, "rareNormalMean({m})"),
            ScenarioKind::RareUnivariate(b) => write!(f, "rareUnivariate({b})"),
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = OsmacError;

    /// Case-insensitive; parameterized kinds are written `name(value)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        let param = |prefix: &str| -> Option<Result<f64>> {
            let rest = lower.strip_prefix(prefix)?;
            let inner = rest.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                inner
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| OsmacError::InvalidSpec(format!("scenario {s}: {e}"))),
            )
        };
        if let Some(v) = param("rarenormalmean") {
            return Ok(ScenarioKind::RareNormalMean(v?));
        }
        if let Some(v) = param("rareunivariate") {
            return Ok(ScenarioKind::RareUnivariate(v?));
        }
        Ok(match lower.as_str() {
            "mznormal" => ScenarioKind::MzNormal,
            "nznormal" => ScenarioKind::NzNormal,
            "uenormal" => ScenarioKind::UeNormal,
            "mixnormal" => ScenarioKind::MixNormal,
            "t3" => ScenarioKind::T3,
            "exp" => ScenarioKind::Exp,
            _ => return Err(OsmacError::InvalidSpec(format!("unknown scenario {s:?}"))),
        })
    }
}

impl TryFrom<String> for ScenarioKind {
    type Error = OsmacError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ScenarioKind> for String {
    fn from(k: ScenarioKind) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub n: usize,
    d: usize,
    pub beta_true: Vec<f64>,
}

impl Scenario {
    pub fn new(kind: ScenarioKind, n: usize) -> Self {
        Self {
            kind,
            n,
            d: kind.dim(),
            beta_true: kind.default_beta(),
        }
    }

    /// A main scenario with `d` covariates instead of seven and
    /// `β = (0.5, …, 0.5)`; `ueNormal` column `i` keeps standard deviation `i`.
    pub fn with_dim(kind: ScenarioKind, n: usize, d: usize) -> Result<Self> {
        if matches!(kind, ScenarioKind::RareUnivariate(_)) || d == 0 {
            return Err(OsmacError::InvalidSpec(format!("{kind} cannot have d = {d}")));
        }
        Ok(Self {
            kind,
            n,
            d,
            beta_true: vec![0.5; d],
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(OsmacError::InvalidSpec("scenario n must be >= 1".into()));
        }
        if self.beta_true.len() != self.d() {
            return Err(OsmacError::DimensionMismatch {
                expected: self.d(),
                got: self.beta_true.len(),
            });
        }
        Ok(())
    }
}

/// Lower Cholesky factor of `Σ_ij = 0.5^{I(i≠j)}`, rows scaled by `sd`.
fn correlated_factor(sd: &[f64]) -> DMatrix<f64> {
    let d = sd.len();
    let sigma = DMatrix::from_fn(d, d, |i, j| {
        let rho = if i == j { 1.0 } else { 0.5 };
        rho * sd[i] * sd[j]
    });
    sigma
        .cholesky()
        .expect("equicorrelated covariance is positive definite")
        .unpack()
}

fn correlated_normal(l: &DMatrix<f64>, rng: &mut Rng, z: &mut [f64], out: &mut [f64]) {
    for v in z.iter_mut() {
        *v = rng.standard_normal();
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
    }
}

/// Draws one dataset. Identical `(scenario, rng state)` gives identical data.
pub fn generate(scn: &Scenario, rng: &mut Rng) -> Result<Dataset> {
    scn.validate()?;
    let d = scn.d();
    let l = match scn.kind {
        ScenarioKind::UeNormal => {
            let sd: Vec<f64> = (1..=d).map(|i| i as f64).collect();
            correlated_factor(&sd)
        }
        ScenarioKind::RareUnivariate(_) | ScenarioKind::Exp => DMatrix::zeros(0, 0),
        _ => correlated_factor(&vec![1.0; d]),
    };
    let mut x = vec![0.0; scn.n * d];
    let mut y = vec![0u8; scn.n];
    let mut z = vec![0.0; d];
    for (i, row) in x.chunks_exact_mut(d).enumerate() {
        match scn.kind {
            ScenarioKind::MzNormal | ScenarioKind::UeNormal => correlated_normal(&l, rng, &mut z, row),
            ScenarioKind::NzNormal | ScenarioKind::RareNormalMean(_) => {
                let mu = match scn.kind {
                    ScenarioKind::RareNormalMean(m) => m,
                    _ => 1.5,
                };
                correlated_normal(&l, rng, &mut z, row);
                row.iter_mut().for_each(|v| *v += mu);
            }
            ScenarioKind::MixNormal => {
                let mu = if rng.uniform01() < 0.5 { 1.0 } else { -1.0 };
                correlated_normal(&l, rng, &mut z, row);
                row.iter_mut().for_each(|v| *v += mu);
            }
            ScenarioKind::T3 => {
                correlated_normal(&l, rng, &mut z, row);
                let s = (rng.chi_square(3.0) / 3.0).sqrt() * 10.0;
                row.iter_mut().for_each(|v| *v /= s);
            }
            ScenarioKind::Exp => row.iter_mut().for_each(|v| *v = rng.exponential(2.0)),
            ScenarioKind::RareUnivariate(_) => {
                row[0] = 1.0;
                row[1] = rng.standard_normal();
            }
        }
        let p = sigmoid(linalg::dot(row, &scn.beta_true));
        y[i] = (rng.uniform01() < p) as u8;
    }
    Dataset::new(x, y, d)
}
