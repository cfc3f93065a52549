use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use osv_core::clusterer::response_distance_matrix_with;
use osv_core::harness::{cross_validate, synthetic_library, CrossValidation, DirectoryValidator, ResponderKind, SyntheticProtocolSpec};
use osv_core::protomodel::{build_model_detailed, BuildOptions};
use osv_core::seqalign::ScoringConfig;
use osv_core::Exec;

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn distance_matrix(c: &mut Criterion) {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 200, 1).library;
    let cfg = ScoringConfig::default();
    let mut group = c.benchmark_group("response_distance_matrix_200");
    group.sample_size(10);
    for (name, exec) in EXECS {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| response_distance_matrix_with(black_box(&lib), &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn model_build(c: &mut Criterion) {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 200, 2).library;
    let mut group = c.benchmark_group("build_model_200");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let opts = BuildOptions { exec, ..BuildOptions::new(5) };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| build_model_detailed(black_box(&lib), &opts, None).unwrap())
        });
    }
    group.finish();
}

fn cross_validation(c: &mut Criterion) {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 150, 3).library;
    let mut group = c.benchmark_group("cross_validate_150_5x1");
    group.sample_size(10);
    for (name, exec) in EXECS {
        let opts = BuildOptions { exec, ..BuildOptions::new(5) };
        let cv = CrossValidation { folds: 5, repeats: 1, seed: 1, exec };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_validate(black_box(&lib), ResponderKind::Prototype, &opts, &cv, &DirectoryValidator).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, distance_matrix, model_build, cross_validation);
criterion_main!(benches);
