use aubin_core::cones::Axis;
use aubin_core::lorentz::{family_membership, CoderivFamily, LorentzSpec, SamplingOptions};
use aubin_core::probe::{sample_aubin_modulus, ProbeOptions};
use aubin_core::verify::{verify_aubin, VerifyOptions};
use aubin_core::{fixtures, Execution};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::dvector;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn bench_verify(c: &mut Criterion) {
    let mut group = c.benchmark_group("verify");
    for (name, spec) in [("example1", fixtures::example1()), ("example2", fixtures::example2())] {
        for (label, execution) in MODES {
            let opts = VerifyOptions {
                execution,
                ..VerifyOptions::default()
            };
            group.bench_with_input(BenchmarkId::new(label, name), &spec, |b, spec| {
                b.iter(|| verify_aubin(black_box(spec), &opts).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_probe(c: &mut Criterion) {
    let mut group = c.benchmark_group("probe");
    group.sample_size(10);
    let spec = fixtures::example1();
    for (label, execution) in MODES {
        let opts = ProbeOptions {
            samples: 40,
            execution,
            ..ProbeOptions::default()
        };
        group.bench_function(BenchmarkId::new(label, "example1/40 pairs"), |b| {
            b.iter(|| sample_aubin_modulus(black_box(&spec), &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_membership(c: &mut Criterion) {
    let mut group = c.benchmark_group("family_membership");
    group.sample_size(10);
    let k = LorentzSpec::new(4, Axis::Last);
    // passes the cheap necessary test ⟨y,u*⟩ ≥ ‖y‖², so the sphere sample is scanned
    let ustar = dvector![0.3, -0.2, 0.1, 1.0];
    let y = dvector![0.05, 0.0, 0.0, 0.1];
    for (label, execution) in MODES {
        let opts = SamplingOptions {
            execution,
            ..SamplingOptions::default()
        };
        group.bench_function(BenchmarkId::new(label, "s=4"), |b| {
            b.iter(|| family_membership(&k, CoderivFamily::CFamily, black_box(&ustar), black_box(&y), &opts))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_verify, bench_probe, bench_membership);
criterion_main!(benches);
