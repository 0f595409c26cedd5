use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use rand::Rng;
use viewsim_core::edm::{reconstruct_incremental, reconstruct_spectral};
use viewsim_core::geometry::procrustes_align;
use viewsim_core::rng::substream;
use viewsim_core::DistanceMatrix;

fn cloud(n: usize, count: usize) -> Vec<DVector<f64>> {
    let mut rng = substream(1, "bench/cloud");
    (0..count).map(|_| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect()
}

fn reconstruction(c: &mut Criterion) {
    let mut group = c.benchmark_group("reconstruct");
    for &(n, count) in &[(8, 24), (8, 96), (16, 384)] {
        let d = DistanceMatrix::from_points(&cloud(n, count)).unwrap();
        let id = format!("n{n}/N{count}");
        group.bench_with_input(BenchmarkId::new("incremental", &id), &d, |b, d| {
            b.iter(|| reconstruct_incremental(d, n).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("spectral", &id), &d, |b, d| {
            b.iter(|| reconstruct_spectral(d, n).unwrap())
        });
    }
    group.finish();
}

fn alignment(c: &mut Criterion) {
    let a = cloud(8, 17);
    let b: Vec<DVector<f64>> = a.iter().map(|p| p.map(|x| -x) + DVector::from_element(8, 0.5)).collect();
    c.bench_function("procrustes/n8/N17", |bench| bench.iter(|| procrustes_align(&a, &b, true).unwrap()));
}

criterion_group!(benches, reconstruction, alignment);
criterion_main!(benches);
