use osv_core::harness::{
    benchmark, cross_validate, directory_validator, fold_assignment, synthetic_library, CrossValidation,
    DirectoryValidator, HashLookup, Reason, Responder, ResponderKind, SyntheticProtocolSpec, ValidationOutcome,
};
use osv_core::protomodel::{build_model_detailed, encode_model, BuildOptions};
use osv_core::trace::{load_library, save_library};
use osv_core::Exec;

#[test]
fn validator_reproduces_the_examples_table() {
    let expected = b"{id:1,op:SearchRsp,result:Ok,gn:Miao,sn:Du,mobile:5362634}";
    let rows: [(&[u8], ValidationOutcome); 3] = [
        (
            b"{id:1,op:SearchRsp,result:Ok,gn:Steve,sn:Du,mobile:5362634}",
            ValidationOutcome::VALID,
        ),
        (
            b"{id:15,op:AddRsp,result:Ok}",
            ValidationOutcome::invalid(Reason::WrongOperation),
        ),
        (
            b"{id:1,op:SearchRsp,result:Ok,gn:Miao},sn:Du",
            ValidationOutcome::invalid(Reason::ParseFailure),
        ),
    ];
    for (emulated, outcome) in rows {
        assert_eq!(directory_validator(expected, Some(emulated)), outcome);
    }
}

#[test]
fn label_histogram_follows_weights() {
    let spec = SyntheticProtocolSpec::directory();
    let lib = synthetic_library(&spec, 1000, 31);
    let hist = lib.label_histogram();
    let total: f64 = spec.operations.iter().map(|o| o.weight).sum();
    for o in &spec.operations {
        let share = hist[&o.name] as f64 / 1000.0;
        let want = o.weight / total;
        assert!((share - want).abs() <= 0.05, "{}: {share} vs {want}", o.name);
    }
}

#[test]
fn hash_lookup_rarely_hits_held_out_requests() {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 1000, 32).library;
    let folds = fold_assignment(lib.len(), 10, 5, 0);
    let held = &folds[3];
    let training: Vec<usize> = (0..lib.len()).filter(|p| !held.contains(p)).collect();
    let hash = HashLookup::new(&lib.subset(&training));
    let hits = held
        .iter()
        .filter(|&&h| hash.respond(&lib.transactions()[h].request).is_some())
        .count();
    assert!((hits as f64) < 0.05 * held.len() as f64, "{hits} hits");
}

#[test]
fn cross_validation_is_deterministic() {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 200, 33).library;
    let opts = BuildOptions::new(5);
    let cv = CrossValidation {
        folds: 5,
        repeats: 2,
        seed: 7,
        exec: Exec::Parallel,
    };
    let a = cross_validate(&lib, ResponderKind::Prototype, &opts, &cv, &DirectoryValidator).unwrap();
    let b = cross_validate(
        &lib,
        ResponderKind::Prototype,
        &opts,
        &CrossValidation {
            exec: Exec::Sequential,
            ..cv
        },
        &DirectoryValidator,
    )
    .unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.total, 400);
    assert_eq!(a.per_fold.len(), 10);
    assert_eq!(a.valid, a.per_fold.iter().map(|f| f.valid).sum::<usize>());
    assert!((a.accuracy - a.valid as f64 / a.total as f64).abs() < 1e-15);
}

#[test]
fn gen_build_is_bit_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut models = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.trace"));
        save_library(&synthetic_library(&SyntheticProtocolSpec::directory(), 150, 34).library, &path).unwrap();
        let lib = load_library(&path).unwrap();
        models.push(encode_model(&build_model_detailed(&lib, &BuildOptions::new(5), None).unwrap().model));
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(
        std::fs::read(dir.path().join("run0.trace")).unwrap(),
        std::fs::read(dir.path().join("run1.trace")).unwrap()
    );
}

#[test]
fn prototype_timing_is_stable_under_larger_samples() {
    let lib = synthetic_library(&SyntheticProtocolSpec::directory(), 150, 35).library;
    let model = build_model_detailed(&lib, &BuildOptions::new(5), None).unwrap().model;
    let live = synthetic_library(&SyntheticProtocolSpec::directory(), 1000, 36).library;
    let requests: Vec<Vec<u8>> = live.iter().map(|t| t.request.clone()).collect();
    let mean = |n: usize| {
        let r = benchmark(&lib, &model, &requests[..n], 2, 200).unwrap();
        r.timing(ResponderKind::Prototype).unwrap().mean_ms
    };
    // Interleaved best-of-five keeps scheduler noise out of the comparison.
    let (mut small, mut large) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..5 {
        small = small.min(mean(500));
        large = large.min(mean(1000));
    }
    assert!((large / small - 1.0).abs() <= 0.2, "500: {small} ms, 1000: {large} ms");
}
