//! Census income data: age, final weight, education years, capital loss and
//! weekly hours, standardized with training moments, plus an intercept.

use std::path::PathBuf;

use osmac::bench;
use osmac::io::{self, ColumnRef};
use osmac::metrics;
use osmac::osmac::{two_step_estimate, Criterion, TwoStepConfig};
use osmac::{Dataset, Rng, SolverConfig};

fn load(name: &str) -> Dataset {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name);
    io::load_csv(path, &ColumnRef::from("income_gt_50k"), false).unwrap()
}

fn prepared() -> (Dataset, Dataset) {
    let train = load("adult_train.csv");
    let (mean, sd) = train.column_moments();
    let test = load("adult_test.csv").standardized_with(&mean, &sd, &[]).unwrap();
    let train = train.standardized_with(&mean, &sd, &[]).unwrap();
    (train.with_intercept(), test.with_intercept())
}

#[test]
fn file_sizes_and_event_rate() {
    let train = load("adult_train.csv");
    let test = load("adult_test.csv");
    assert_eq!((train.n(), test.n()), (32_561, 16_281));
    assert_eq!(train.class_counts().1 + test.class_counts().1, 11_687);
}

#[test]
fn full_fit_reproduces_published_slopes() {
    let (train, _) = prepared();
    let fit = bench::reference_fit(&train, &SolverConfig::default()).unwrap();
    let se = fit.se.unwrap();
    // published to three decimals
    let slopes = [0.637, 0.065, 0.878, 0.234, 0.525];
    let ses = [0.016, 0.015, 0.017, 0.013, 0.016];
    for j in 0..5 {
        assert!((fit.beta[j + 1] - slopes[j]).abs() <= 5e-4, "slope {j}: {}", fit.beta[j + 1]);
        assert!((se[j + 1] - ses[j]).abs() <= 5e-4, "se {j}: {}", se[j + 1]);
    }
}

#[test]
fn two_step_stays_near_the_full_fit() {
    let (train, test) = prepared();
    let full = bench::reference_fit(&train, &SolverConfig::default()).unwrap();
    for criterion in [Criterion::Mmse, Criterion::Mvc] {
        let cfg = TwoStepConfig::new(200, 1000, criterion);
        let out = two_step_estimate(&train, &cfg, &mut Rng::new(31, 0)).unwrap();
        let se = out.fit.se.as_ref().unwrap();
        for (j, ((b, f), s)) in out.fit.beta.iter().zip(&full.beta).zip(se).enumerate() {
            assert!((b - f).abs() < 4.0 * s, "{criterion:?} coef {j}");
        }
        let sub = metrics::classify(&out.fit.beta, &test, 0.5).unwrap().accuracy;
        let all = metrics::classify(&full.beta, &test, 0.5).unwrap().accuracy;
        assert!((sub - all).abs() < 0.02, "{criterion:?}: {sub} vs {all}");
    }
}
