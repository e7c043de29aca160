use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use oulab::numkit::{expm, solve_lyapunov, C64};
use oulab::poly::GaussianMoments;
use oulab::sector::{contour_resolvent, ContourOptions, SectorialMatrix};
use oulab::semigroup::transition_polynomial;
use oulab_bench::{drift, model, polynomial, spd};

fn dense(c: &mut Criterion) {
    let mut g = c.benchmark_group("dense");
    for d in [2, 4, 8, 16] {
        let a = drift(d);
        let q = nalgebra::DMatrix::<f64>::identity(d, d);
        g.bench_with_input(BenchmarkId::new("expm", d), &a, |b, a| b.iter(|| expm(black_box(a), 0.7).unwrap()));
        g.bench_with_input(BenchmarkId::new("lyapunov", d), &a, |b, a| {
            b.iter(|| solve_lyapunov(black_box(a), &q).unwrap())
        });
    }
    g.finish();
}

fn moments(c: &mut Criterion) {
    let mut g = c.benchmark_group("moments");
    for (d, deg) in [(2, 4), (3, 4), (4, 4), (2, 8)] {
        let dm = model(d);
        let p = polynomial(d, deg);
        let sq = &p * &p;
        g.bench_function(BenchmarkId::new("second_moment", format!("d{d}-deg{deg}")), |b| {
            b.iter(|| GaussianMoments::new(dm.qinf.clone()).expectation(black_box(&sq)))
        });
        g.bench_function(BenchmarkId::new("transition", format!("d{d}-deg{deg}")), |b| {
            b.iter(|| transition_polynomial(&dm, 0.5, black_box(&p)).unwrap())
        });
    }
    g.finish();
}

fn contour(c: &mut Criterion) {
    let mut g = c.benchmark_group("contour");
    g.sample_size(10);
    let a = SectorialMatrix::new(spd(3, 1), 0.2).unwrap();
    let b = SectorialMatrix::new(spd(2, 2), 0.2).unwrap();
    let lam = C64::new(-1.0, 0.5);
    for nodes in [100, 400] {
        let opts = ContourOptions {
            nodes_per_segment: Some(nodes),
            ..Default::default()
        };
        g.bench_with_input(BenchmarkId::new("resolvent_3x2", nodes), &opts, |bn, o| {
            bn.iter(|| contour_resolvent(&a, &b, black_box(lam), o).unwrap())
        });
    }
    g.finish();
}

criterion_group!(kernels, dense, moments, contour);
criterion_main!(kernels);
