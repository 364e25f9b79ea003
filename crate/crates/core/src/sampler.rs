//! Seeded random streams and the samplers built on them.
//!
//! [`Rng`] is ChaCha12 keyed by `(seed, domain)` and positioned on a 64-bit
//! `stream`. The same triple yields the same sequence on every platform.
//! Experiments give repetition `s` the stream `s`, so repetitions are
//! independent of each other and individually reproducible.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared, Distribution, Exp, StandardNormal};

use crate::data::{SamplingPlan, Scheme, Step, Subsample, PLAN_SUM_TOL};
use crate::error::{OsmacError, Result};

#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha12Rng,
    seed: u64,
    domain: u64,
    stream: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::with_domain(seed, 0, stream)
    }

    /// Separate key space per `domain` (data generation vs. subsampling).
    pub fn with_domain(seed: u64, domain: u64, stream: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut inner = ChaCha12Rng::from_seed(key);
        inner.set_stream(stream);
        Self {
            inner,
            seed,
            domain,
            stream,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn domain(&self) -> u64 {
        self.domain
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn chi_square(&mut self, df: f64) -> f64 {
        ChiSquared::new(df)
            .expect("degrees of freedom must be positive")
            .sample(&mut self.inner)
    }

    pub fn exponential(&mut self, rate: f64) -> f64 {
        Exp::new(rate)
            .expect("rate must be positive")
            .sample(&mut self.inner)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Walker/Vose alias table: O(n) build, O(1) draws.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn build(plan: &SamplingPlan) -> Result<Self> {
        if !plan.scheme().is_replacement() {
            return Err(OsmacError::WrongScheme {
                expected: "with-replacement",
            });
        }
        let p = plan.probs();
        let sum = crate::par::sum(p);
        if (sum - 1.0).abs() > PLAN_SUM_TOL {
            return Err(OsmacError::NotNormalized { sum });
        }
        let n = p.len();
        let nf = n as f64;
        let mut scaled: Vec<f64> = p.iter().map(|v| v * nf).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);

        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            large.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for l in large {
            prob[l] = 1.0;
        }
        // Leftover small entries come from rounding; zero-probability rows
        // must stay unreachable.
        let fallback = p.iter().position(|&v| v > 0.0).unwrap_or(0);
        for s in small {
            if p[s] > 0.0 {
                prob[s] = 1.0;
                alias[s] = s;
            } else {
                prob[s] = 0.0;
                alias[s] = fallback;
            }
        }
        Ok(Self { prob, alias })
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    #[inline]
    pub fn draw(&self, rng: &mut Rng) -> usize {
        let i = rng.below(self.prob.len());
        if rng.uniform01() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }

    /// Exact per-index draw probability encoded by the table.
    pub fn implied_probs(&self) -> Vec<f64> {
        let n = self.prob.len() as f64;
        let mut q: Vec<f64> = self.prob.iter().map(|p| p / n).collect();
        for (j, &a) in self.alias.iter().enumerate() {
            q[a] += (1.0 - self.prob[j]) / n;
        }
        q
    }
}

/// Draws `r` rows i.i.d. from `plan`, recording each row's probability.
pub fn draw_with_replacement(
    table: &AliasTable,
    plan: &SamplingPlan,
    r: usize,
    rng: &mut Rng,
    step: Step,
) -> Result<Subsample> {
    if r == 0 {
        return Err(OsmacError::InvalidSpec("subsample size must be >= 1".into()));
    }
    if table.len() != plan.len() {
        return Err(OsmacError::DimensionMismatch {
            expected: plan.len(),
            got: table.len(),
        });
    }
    let pi = plan.probs();
    let mut sub = Subsample::default();
    for _ in 0..r {
        let i = table.draw(rng);
        sub.push(i, pi[i], step);
    }
    Ok(sub)
}

/// Includes each row independently with its acceptance probability.
pub fn draw_poisson(plan: &SamplingPlan, rng: &mut Rng) -> Result<Subsample> {
    if plan.scheme() != Scheme::LccAcceptance {
        return Err(OsmacError::WrongScheme {
            expected: "Poisson acceptance",
        });
    }
    let mut sub = Subsample::default();
    for (i, &p) in plan.probs().iter().enumerate() {
        // uniform01 < 1 always, so p = 1 is always accepted and p = 0 never
        if rng.uniform01() < p {
            sub.push(i, p, Step::Step2);
        }
    }
    Ok(sub)
}
