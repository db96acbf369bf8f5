//! Sequential vs rayon element loops. Build with `--no-default-features`
//! to measure the sequential fallback alone.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use traction_core::fem::{assemble_stiffness_with, StiffnessOperator};
use traction_core::loads::assemble_loads;
use traction_core::nonlinear::evaluate;
use traction_core::{Density, DisplacementField, Exec, LoadSpec, Mesh};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn stiffness(c: &mut Criterion) {
    let d = Density::new(1.0, 1.0).unwrap();
    let mut g = c.benchmark_group("stiffness_assembly");
    for n in [32, 64] {
        let mesh = Mesh::unit_square(n).unwrap();
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, n), &mesh, |b, m| {
                b.iter(|| -> StiffnessOperator { assemble_stiffness_with(black_box(m), &d, exec) })
            });
        }
    }
    g.finish();
}

fn fh_energy_gradient(c: &mut Criterion) {
    let d = Density::new(1.0, 1.0).unwrap();
    let mut g = c.benchmark_group("fh_energy_gradient");
    for n in [32, 64] {
        let mesh = Mesh::unit_square(n).unwrap();
        let loads = assemble_loads(&mesh, &LoadSpec::pressure(&mesh, 16.0)).unwrap();
        let v = DisplacementField::from_fn(&mesh, |x| [x[0] + 0.1 * x[0] * x[1], x[1] - 0.2 * x[0] * x[0]]);
        for (name, exec) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, n), &v, |b, v| {
                b.iter(|| evaluate(&mesh, &d, &loads, black_box(v), 0.1, exec).unwrap().value)
            });
        }
    }
    g.finish();
}

fn stiffness_matvec(c: &mut Criterion) {
    let d = Density::new(1.0, 1.0).unwrap();
    let mesh = Mesh::unit_square(64).unwrap();
    let k = assemble_stiffness_with(&mesh, &d, Exec::Sequential);
    let x: Vec<f64> = (0..mesh.n_dofs()).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut g = c.benchmark_group("stiffness_matvec");
    for (name, exec) in POLICIES {
        g.bench_function(name, |b| b.iter(|| k.apply(black_box(&x), exec)));
    }
    g.finish();
}

criterion_group!(benches, stiffness, fh_energy_gradient, stiffness_matvec);
criterion_main!(benches);
