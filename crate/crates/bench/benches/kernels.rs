use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cglblow_bench::{params, smooth_field, solver_config};
use cglblow_core::operators::{mehler_propagate, SemigroupVariant};
use cglblow_core::simulator::Simulator;
use cglblow_core::{Complex64, SpectralBasis};

fn projection(c: &mut Criterion) {
    let k = params().k;
    let field = smooth_field(4.0);
    let basis = SpectralBasis::new(field.mesh().clone(), 4.0, k, 2 * k as usize + 2).unwrap();
    c.bench_function("project_all", |b| b.iter(|| basis.project_all(black_box(field.values()))));
}

fn mehler(c: &mut Criterion) {
    let k = params().k;
    let mesh = cglblow_core::hermite::default_spectral_mesh(5.0, k);
    let f = |z: f64| Complex64::new((-z * z / 8.0).exp(), 0.0);
    c.bench_function("mehler_propagate", |b| {
        b.iter(|| mehler_propagate(&f, 4.0, 5.0, k, SemigroupVariant::WithIdentity, mesh.clone()).unwrap())
    });
}

fn imex_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("imex_step");
    group.sample_size(20);
    for nodes in [1024, 4096] {
        let sim = Simulator::new(params(), solver_config(nodes), &[0.0; 4]).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &sim, |b, sim| {
            b.iter_batched(|| sim.clone(), |mut s| s.step().unwrap(), criterion::BatchSize::SmallInput)
        });
    }
    group.finish();
}

criterion_group!(benches, projection, mehler, imex_step);
criterion_main!(benches);
