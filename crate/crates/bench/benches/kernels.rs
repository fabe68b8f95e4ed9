use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use kolmo::coeff::{CoefficientField, OperatorSpec};
use kolmo::fdsolver::{solve_backward, FdGrid};
use kolmo::grid::SpatialGrid;
use kolmo::group::{validate_blocks, DriftMatrix};
use kolmo::kernel::{ck_residual, GaussianKernel};
use kolmo::simulate::{euler_maruyama, sample_exact};
use nalgebra::DMatrix;

fn prototype() -> DriftMatrix {
    validate_blocks(
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        &[1, 1],
    )
    .unwrap()
}

fn kinetic() -> DriftMatrix {
    let mut b = DMatrix::zeros(4, 4);
    b[(2, 0)] = 1.0;
    b[(3, 1)] = 1.0;
    b[(0, 1)] = 0.3;
    validate_blocks(b, &[2, 2]).unwrap()
}

fn kernel(c: &mut Criterion) {
    let proto = GaussianKernel::new(prototype()).unwrap();
    let kin = GaussianKernel::new(kinetic()).unwrap();
    c.bench_function("covariance/prototype", |b| {
        b.iter(|| proto.covariance(black_box(0.37)).unwrap())
    });
    c.bench_function("covariance/kinetic-4d", |b| {
        b.iter(|| kin.covariance(black_box(0.37)).unwrap())
    });
    let slice = proto.slice(0.0, 1.0).unwrap();
    c.bench_function("density/slice", |b| {
        b.iter(|| slice.density(black_box(&[0.3, -0.2]), black_box(&[0.1, 0.4])))
    });
    c.bench_function("chapman-kolmogorov", |b| {
        b.iter(|| ck_residual(&proto, 0.0, &[0.3, -0.2], 0.5, 1.0, &[0.1, 0.4]).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let k = GaussianKernel::new(prototype()).unwrap();
    let field = CoefficientField::parse(2, &[vec!["0.5"]], &["0"], "0", 1.0).unwrap();
    let spec = OperatorSpec::new(prototype(), Arc::new(field), 2.0).unwrap();
    let mut group = c.benchmark_group("sampling");
    group.sample_size(20);
    group.bench_function("exact/10k", |b| {
        b.iter(|| sample_exact(&k, 0.0, &[0.0, 0.0], 1.0, 10_000, 1).unwrap())
    });
    group.bench_function("euler-maruyama/1k-x-200", |b| {
        b.iter(|| euler_maruyama(&spec, 0.0, &[0.0, 0.0], 1.0, 200, 1_000, 1).unwrap())
    });
    group.finish();
}

fn finite_differences(c: &mut Criterion) {
    let field = CoefficientField::parse(2, &[vec!["1 + 0.5*sin(x2)"]], &["0"], "0", 2.0).unwrap();
    let spec = OperatorSpec::new(prototype(), Arc::new(field), 2.0).unwrap();
    let space = SpatialGrid::cube(2, -4.0, 4.0, 81).unwrap();
    let phi = space.sample(|x| (-(x[0] * x[0] + x[1] * x[1])).exp());
    let grid = FdGrid::new(space, 0.0, 0.1);
    let mut group = c.benchmark_group("fd");
    group.sample_size(10);
    group.bench_function("solve/81x81", |b| {
        b.iter(|| solve_backward(&spec, &phi, &grid).unwrap())
    });
    group.finish();
}

criterion_group!(benches, kernel, sampling, finite_differences);
criterion_main!(benches);
