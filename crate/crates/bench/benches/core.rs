use criterion::{black_box, criterion_group, criterion_main, Criterion};

use lagspaces_core::corpus::CorpusSpec;
use lagspaces_core::dyadic::CubeSet;
use lagspaces_core::kernels::{heat_kernel_closed, heat_kernel_series, patm_integral, KernelQuery};
use lagspaces_core::molecular::{decompose, MoleculeOptions};
use lagspaces_core::spaces::{besov_norm, tl_norm};
use lagspaces_core::specfun::{bessel_i_scaled, phi_column};
use lagspaces_core::spectral::eigenvalue;
use lagspaces_core::{AlphaIndex, QuadGrid, SpaceParams, TGrid};

fn specfun(c: &mut Criterion) {
    c.bench_function("phi_column k<=1000", |b| b.iter(|| phi_column(1000, black_box(0.5), black_box(3.7)).unwrap()));
    c.bench_function("bessel_i_scaled", |b| b.iter(|| bessel_i_scaled(black_box(2.3), black_box(7.5)).unwrap()));
}

fn kernels(c: &mut Criterion) {
    let alpha = AlphaIndex::new(vec![0.5, 1.0]).unwrap();
    let q = KernelQuery::new(0.2, 1, vec![1.0, 1.2], vec![1.3, 0.9], alpha).unwrap();
    c.bench_function("heat closed d=2", |b| b.iter(|| heat_kernel_closed(black_box(&q)).unwrap()));
    c.bench_function("heat series K=60 d=2", |b| b.iter(|| heat_kernel_series(black_box(&q), 60).unwrap()));
    c.bench_function("patm integral d=2", |b| b.iter(|| patm_integral(black_box(&q)).unwrap()));
}

fn spaces(c: &mut Criterion) {
    let f = CorpusSpec::standard().fields().unwrap().remove(0);
    let params = SpaceParams::norm_only(1, 0.5, 1.0, 2.0).unwrap();
    let tg = TGrid::new(-12, 8, 16);
    let xg = QuadGrid::for_spectrum(1, eigenvalue(20, f.alpha()));
    let mut g = c.benchmark_group("norms");
    g.sample_size(10);
    g.bench_function("besov corpus field", |b| b.iter(|| besov_norm(black_box(&f), &params, &tg, &xg).unwrap()));
    g.bench_function("tl corpus field", |b| b.iter(|| tl_norm(black_box(&f), &params, &tg, &xg).unwrap()));
    g.finish();
}

fn molecular(c: &mut Criterion) {
    let f = CorpusSpec::standard().fields().unwrap().remove(0);
    let params = SpaceParams::with_defaults(1, 0.0, 2.0, 2.0).unwrap();
    let set = CubeSet::new(1, -2, 2, 4.0).unwrap();
    let opts = MoleculeOptions::for_field(&f);
    let mut g = c.benchmark_group("molecular");
    g.sample_size(10);
    g.bench_function("decompose nu in [-2,2] B=4", |b| b.iter(|| decompose(black_box(&f), &params, &set, &opts).unwrap()));
    g.finish();
}

criterion_group!(benches, specfun, kernels, spaces, molecular);
criterion_main!(benches);
