//! Hot kernels on a one-thread rayon pool and on the default pool.
//!
//! `cargo bench -p osmac-core` compares the two pools; run it again with
//! `--no-default-features` for the sequential build (both pool rows then
//! measure the same sequential code).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use serde_json::json;

use osmac::bench::{run_experiment, ExperimentSpec};
use osmac::glm::{self, SolverConfig};
use osmac::ssp;
use osmac::synth::{self, Scenario, ScenarioKind};
use osmac::Rng;

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut sizes = vec![1];
    if default > 1 {
        sizes.push(default);
    }
    sizes
        .into_iter()
        .map(|t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            (format!("{t}-thread"), pool)
        })
        .collect()
}

fn kernels(c: &mut Criterion) {
    let scn = Scenario::with_dim(ScenarioKind::MzNormal, 200_000, 20).unwrap();
    let data = synth::generate(&scn, &mut Rng::new(1, 0)).unwrap();
    let beta = scn.beta_true.clone();
    let mx = ssp::compute_mx(&data, &beta).unwrap();
    let solver = SolverConfig::default();

    let mut group = c.benchmark_group("kernels_n200k_d20");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::new("ssp_mvc", &name), |b| {
            pool.install(|| b.iter(|| ssp::ssp_mvc(&data, &beta).unwrap()))
        });
        group.bench_function(BenchmarkId::new("compute_mx", &name), |b| {
            pool.install(|| b.iter(|| ssp::compute_mx(&data, &beta).unwrap()))
        });
        group.bench_function(BenchmarkId::new("ssp_mmse", &name), |b| {
            pool.install(|| b.iter(|| ssp::ssp_mmse(&data, &beta, &mx).unwrap()))
        });
        group.bench_function(BenchmarkId::new("newton_full_fit", &name), |b| {
            pool.install(|| b.iter(|| glm::fit_full(&data, &solver).unwrap()))
        });
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let spec = ExperimentSpec::from_json(
        &json!({
            "source": {"scenario": "mzNormal", "n": 10000},
            "methods": ["uniform", "mmse", "mvc"],
            "r0": 200, "r_grid": [800], "reps": 16, "seed": 1
        })
        .to_string(),
    )
    .unwrap();
    let mut group = c.benchmark_group("experiment_16_reps");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(BenchmarkId::from_parameter(&name), |b| {
            pool.install(|| b.iter(|| run_experiment(&spec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, experiment);
criterion_main!(benches);
