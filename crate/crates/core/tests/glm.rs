use proptest::prelude::*;

use osmac::glm::{self, SolverConfig, WeightedSample};
use osmac::{Dataset, Rng};

fn instance(seed: u64, n: usize, d: usize) -> (Dataset, Vec<f64>, Vec<f64>) {
    let mut rng = Rng::new(seed, 11);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.standard_normal()).collect())
        .collect();
    let y = (0..n).map(|i| (i % 2) as u8).collect();
    let beta = (0..d).map(|_| rng.standard_normal()).collect();
    let w = (0..n).map(|_| 0.1 + 2.0 * rng.uniform01()).collect();
    (Dataset::from_rows(&rows, y).unwrap(), beta, w)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_is_the_loglik_gradient(seed in any::<u64>()) {
        let (data, beta, w) = instance(seed, 5, 3);
        let s = WeightedSample::new(&data, None, Some(&w)).unwrap();
        let (grad, _) = glm::score_and_hessian(&s, &beta).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (glm::loglik(&s, &up).unwrap() - glm::loglik(&s, &dn).unwrap()) / (2.0 * h);
            prop_assert!((fd - grad[j]).abs() < 1e-5, "coordinate {}: {} vs {}", j, fd, grad[j]);
        }
    }

    #[test]
    fn neg_hessian_is_minus_the_score_jacobian(seed in any::<u64>()) {
        let (data, beta, w) = instance(seed, 5, 3);
        let s = WeightedSample::new(&data, None, Some(&w)).unwrap();
        let (_, hess) = glm::score_and_hessian(&s, &beta).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let (mut up, mut dn) = (beta.clone(), beta.clone());
            up[j] += h;
            dn[j] -= h;
            let (gu, _) = glm::score_and_hessian(&s, &up).unwrap();
            let (gd, _) = glm::score_and_hessian(&s, &dn).unwrap();
            for k in 0..3 {
                let fd = -(gu[k] - gd[k]) / (2.0 * h);
                prop_assert!((fd - hess[(k, j)]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn mle_has_zero_score(seed in any::<u64>()) {
        let (data, _, _) = instance(seed, 60, 2);
        let fit = glm::fit_full(&data, &SolverConfig::default());
        // alternating labels on continuous covariates almost never separate
        prop_assume!(fit.is_ok());
        let fit = fit.unwrap();
        let (grad, _) = glm::score_and_hessian(&WeightedSample::full(&data), &fit.beta).unwrap();
        prop_assert!(grad.norm() < 1e-8);
    }
}
