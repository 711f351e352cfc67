use std::hint::black_box;

use chmm_core::eifm::ifm_step;
use chmm_core::gof::{cvm_statistic, pseudo_observations};
use chmm_core::model::scenario_model;
use chmm_core::rng::seeded;
use chmm_core::{forward_backward, Copula, CopulaFamily, FitConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn copula_kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("copula");
    let pts = Copula::new(CopulaFamily::Frank, 3.0).unwrap().sample(1000, &mut seeded(1));
    for (family, theta) in [
        (CopulaFamily::Frank, 5.0),
        (CopulaFamily::Clayton, 2.0),
        (CopulaFamily::Gumbel, 2.0),
        (CopulaFamily::Joe, 2.0),
        (CopulaFamily::Gauss, 0.5),
    ] {
        let cop = Copula::new(family, theta).unwrap();
        group.bench_function(BenchmarkId::new("ln_pdf", family.as_str()), |b| {
            b.iter(|| pts.iter().map(|p| cop.ln_pdf2(p[0], p[1])).sum::<f64>())
        });
        group.bench_function(BenchmarkId::new("score", family.as_str()), |b| {
            b.iter(|| pts.iter().map(|p| cop.score2(p[0], p[1])).sum::<f64>())
        });
    }
    group.finish();
}

fn forward_backward_lengths(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    let model = scenario_model(1).unwrap();
    for len in [100, 1000, 10_000] {
        let traj = model.simulate(len, &mut seeded(2)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(len), &traj, |b, traj| {
            b.iter(|| forward_backward(black_box(&model), traj).unwrap())
        });
    }
    group.finish();
}

fn ifm_update(c: &mut Criterion) {
    let model = scenario_model(2).unwrap();
    let data = vec![model.simulate(1000, &mut seeded(3)).unwrap()];
    let posts = vec![forward_backward(&model, &data[0]).unwrap()];
    let config = FitConfig::default();
    c.bench_function("ifm_step/1000", |b| b.iter(|| ifm_step(black_box(&model), &posts, &data, &config).unwrap()));
}

fn cvm(c: &mut Criterion) {
    let mut group = c.benchmark_group("cvm_statistic");
    for n in [200, 2000] {
        let rows: Vec<Vec<f64>> = Copula::new(CopulaFamily::Clayton, 2.0)
            .unwrap()
            .sample(n, &mut seeded(4))
            .iter()
            .map(|p| p.to_vec())
            .collect();
        let pobs = pseudo_observations(&rows).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &pobs, |b, pobs| {
            b.iter(|| cvm_statistic(pobs, CopulaFamily::Clayton).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, copula_kernels, forward_backward_lengths, ifm_update, cvm);
criterion_main!(benches);
