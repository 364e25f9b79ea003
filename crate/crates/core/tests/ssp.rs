use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use osmac::ssp::{self, MxMatrix, TraceMode};
use osmac::{Dataset, Rng, SamplingPlan, Scheme};

fn p_of(x: &[f64], beta: &[f64]) -> f64 {
    let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    1.0 / (1.0 + (-eta).exp())
}

/// Random `n × d` data with both classes and an unrelated pilot.
fn instance(seed: u64, n: usize, d: usize) -> (Dataset, Vec<f64>) {
    let mut rng = Rng::new(seed, 7);
    loop {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| 2.0 * rng.standard_normal()).collect();
            y.push((rng.uniform01() < 0.5) as u8);
            rows.push(row);
        }
        if y.contains(&0) && y.contains(&1) {
            let pilot = (0..d).map(|_| rng.standard_normal()).collect();
            return (Dataset::from_rows(&rows, y).unwrap(), pilot);
        }
    }
}

fn naive_mx(data: &Dataset, beta: &[f64]) -> DMatrix<f64> {
    let d = data.d();
    let mut m = DMatrix::zeros(d, d);
    for i in 0..data.n() {
        let p = p_of(data.row(i), beta);
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += p * (1.0 - p) * data.row(i)[a] * data.row(i)[b];
            }
        }
    }
    m / data.n() as f64
}

fn naive_plan(data: &Dataset, beta: &[f64], inv: Option<&DMatrix<f64>>) -> Vec<f64> {
    let s: Vec<f64> = (0..data.n())
        .map(|i| {
            let x = DVector::from_column_slice(data.row(i));
            let v = inv.map_or_else(|| x.clone(), |m| m * &x);
            (data.y(i) as f64 - p_of(data.row(i), beta)).abs() * v.norm()
        })
        .collect();
    let t: f64 = s.iter().sum();
    s.iter().map(|v| v / t).collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn trace(data: &Dataset, q: &[f64], beta: &[f64], inv: Option<&DMatrix<f64>>) -> f64 {
    let n = data.n() as f64;
    (0..data.n())
        .map(|i| {
            let x = DVector::from_column_slice(data.row(i));
            let v = inv.map_or_else(|| x.clone(), |m| m * &x);
            let res = data.y(i) as f64 - p_of(data.row(i), beta);
            res * res * v.norm_squared() / q[i]
        })
        .sum::<f64>()
        / (n * n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mx_matches_double_loop(seed in any::<u64>()) {
        let (data, beta) = instance(seed, 20, 3);
        let mx = ssp::compute_mx(&data, &beta).unwrap();
        let naive = naive_mx(&data, &beta);
        prop_assert!(max_rel(mx.matrix().as_slice(), naive.as_slice()) < 1e-12);
    }

    #[test]
    fn mvc_matches_per_row_formula(seed in any::<u64>()) {
        let (data, beta) = instance(seed, 20, 3);
        let plan = ssp::ssp_mvc(&data, &beta).unwrap();
        prop_assert!(max_rel(plan.probs(), &naive_plan(&data, &beta, None)) < 1e-14);
    }

    #[test]
    fn mmse_matches_explicit_inverse(seed in any::<u64>()) {
        let (data, beta) = instance(seed, 20, 3);
        let mx = ssp::compute_mx(&data, &beta).unwrap();
        let inv = mx.matrix().clone().try_inverse().unwrap();
        let plan = ssp::ssp_mmse(&data, &beta, &mx).unwrap();
        prop_assert!(max_rel(plan.probs(), &naive_plan(&data, &beta, Some(&inv))) < 1e-12);
    }

    #[test]
    fn optimal_plans_beat_random_simplex_points(seed in any::<u64>(), qseed in any::<u64>()) {
        let (data, beta) = instance(seed, 20, 3);
        let mx = ssp::compute_mx(&data, &beta).unwrap();
        let inv = mx.matrix().clone().try_inverse().unwrap();
        let mmse = ssp::ssp_mmse(&data, &beta, &mx).unwrap();
        let mvc = ssp::ssp_mvc(&data, &beta).unwrap();
        let mut rng = Rng::new(qseed, 0);
        let raw: Vec<f64> = (0..20).map(|_| rng.exponential(1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let best_v = trace(&data, mmse.probs(), &beta, Some(&inv));
        let best_vc = trace(&data, mvc.probs(), &beta, None);
        prop_assert!(trace(&data, &q, &beta, Some(&inv)) >= best_v * (1.0 - 1e-10));
        prop_assert!(trace(&data, &q, &beta, None) >= best_vc * (1.0 - 1e-10));

        let plan = SamplingPlan::new(q.clone(), Scheme::Uniform, None).unwrap();
        let lib = ssp::amse_trace(&data, &plan, &beta, &mx, 3, TraceMode::TraceV).unwrap();
        let naive = trace(&data, &q, &beta, Some(&inv)) / 3.0;
        prop_assert!((lib - naive).abs() <= 1e-12 * naive);
    }

    #[test]
    fn scaled_identity_gives_mvc(seed in any::<u64>(), c in 0.01f64..100.0) {
        let (data, beta) = instance(seed, 20, 3);
        let mx = MxMatrix::new(DMatrix::identity(3, 3) * c).unwrap();
        let a = ssp::ssp_mmse(&data, &beta, &mx).unwrap();
        let b = ssp::ssp_mvc(&data, &beta).unwrap();
        prop_assert!(max_rel(a.probs(), b.probs()) < 1e-14);
    }
}
