use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use semitrace::config::RunConfig;
use semitrace::discretize::build_operator;
use semitrace::eig::{dense_hermitian_eig, tridiagonal_ql, tridiagonalize};
use semitrace::hsfc::{build_extension, hs_apply, hs_trace_tridiagonal, HsQuadrature};
use semitrace::model::TestFunction;
use semitrace_bench::random_hermitian;

fn eigen(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigen");
    g.sample_size(10);
    for n in [128, 256, 512] {
        let h = random_hermitian(n, 1);
        g.bench_with_input(BenchmarkId::new("tridiagonalize", n), &h, |b, h| b.iter(|| tridiagonalize(h.clone())));
        g.bench_with_input(BenchmarkId::new("values", n), &h, |b, h| {
            b.iter(|| {
                let t = tridiagonalize(h.clone());
                let mut d = t.diag.clone();
                tridiagonal_ql(&mut d, &t.offdiag, &mut []).unwrap();
                d
            })
        });
        g.bench_with_input(BenchmarkId::new("vectors", n), &h, |b, h| b.iter(|| dense_hermitian_eig(h, true).unwrap()));
    }
    g.finish();
}

fn operator(c: &mut Criterion) {
    let problem = RunConfig::generic().problem.resolve().unwrap();
    let mut g = c.benchmark_group("operator");
    g.sample_size(10);
    for n in [16, 32] {
        let dom = problem.domain.with_grid(n).unwrap();
        let op = build_operator(&dom, &problem.potential, &problem.scalar, 8.0).unwrap();
        let x = vec![semitrace::linalg::C64::new(1.0, 0.0); op.dim()];
        g.bench_with_input(BenchmarkId::new("apply", n), &op, |b, op| b.iter(|| op.apply(&x).unwrap()));
        g.bench_with_input(BenchmarkId::new("assemble_dense", n), &op, |b, op| b.iter(|| op.assemble_dense(4096).unwrap()));
    }
    g.finish();
}

fn functional_calculus(c: &mut Criterion) {
    let phi = TestFunction::bump_on(-2.0, 2.0).unwrap();
    let ext = build_extension(&phi, 4, 1.0).unwrap();
    let quad = HsQuadrature::default();
    let mut g = c.benchmark_group("hsfc");
    g.sample_size(10);
    let h = random_hermitian(24, 2);
    g.bench_function("apply_24", |b| b.iter(|| hs_apply(&ext, &h, quad).unwrap()));
    let t = tridiagonalize(random_hermitian(1024, 3));
    g.bench_function("trace_tridiagonal_1024", |b| b.iter(|| hs_trace_tridiagonal(&ext, &t, quad)));
    g.finish();
}

criterion_group!(benches, eigen, operator, functional_calculus);
criterion_main!(benches);
