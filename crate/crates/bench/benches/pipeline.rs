use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use koopcert::bounds::{compute_d0, Quadrature};
use koopcert::config;
use koopcert::edmd::{build_data_matrices, fit};
use koopcert::scenarios;

fn bench_fit(c: &mut Criterion) {
    let cfg = scenarios::cooked_up();
    let lifting = cfg.lifting().unwrap();
    let samples = config::collect(&cfg).unwrap();
    c.bench_function("fit/cooked_up_5000", |b| {
        b.iter(|| {
            let data = build_data_matrices(&lifting, black_box(&samples)).unwrap();
            fit(&data).unwrap()
        })
    });
}

fn bench_d0(c: &mut Criterion) {
    let cfg = scenarios::cooked_up();
    let plant = cfg.plant().unwrap();
    let lifting = cfg.lifting().unwrap();
    let q = Quadrature::default_for(plant.n());
    c.bench_function("d0/cooked_up_default_quadrature", |b| {
        b.iter(|| compute_d0(&plant, &lifting, black_box(cfg.c_r), cfg.delta, q).unwrap())
    });
}

fn bench_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("design");
    g.sample_size(10);
    for cfg in [scenarios::cooked_up(), scenarios::cooked_up_xy()] {
        let samples = config::collect(&cfg).unwrap();
        let (s, _) = config::fit(&cfg, &samples).unwrap();
        let (u, _) = config::region(&cfg, &s).unwrap();
        g.bench_function(cfg.name.clone(), |b| b.iter(|| config::design(&cfg, &s, black_box(&u)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, bench_fit, bench_d0, bench_solve);
criterion_main!(benches);
