use uda_core::data::{BatchStrategy, DatasetSpec, DomainPair};
use uda_core::methods::*;
use uda_core::optim::SchedulerConfig;
use uda_core::Error;

fn moons() -> DomainPair {
    DatasetSpec::default_two_moons(7).generate().unwrap()
}

fn dann(epochs: usize, lambda_grl: f64) -> TrainSpec {
    TrainSpec::new(MethodConfig::Dann {
        epochs,
        lambda_grl,
        lambda_ramp: LambdaRamp::Constant,
    })
}

fn dann_fixbi(epochs: usize, warmup: usize) -> TrainSpec {
    let mut spec = TrainSpec::new(MethodConfig::DannFixbi {
        epochs,
        lambda_sd: 0.9,
        lambda_td: 0.7,
        tau0: 0.95,
        warmup,
        beta: 1.0,
        gamma_dom: 1.0,
        lambda_grl: 1.0,
        variant: DomainVariant::SeparateClassifier,
    });
    spec.batch.strategy = BatchStrategy::Concat;
    spec
}

#[test]
fn zero_epochs_records_initial_accuracy_only() {
    let pair = moons();
    let out = train(&TrainSpec::new(MethodConfig::SourceOnly { epochs: 0 }), &pair, 3).unwrap();
    assert_eq!(out.result.target_accuracy.len(), 1);
    assert_eq!(out.result.final_accuracy, out.result.target_accuracy[0]);
    assert_eq!(out.result.method, "source_only");
    assert_eq!(out.result.task, "two_moons");
}

#[test]
fn runs_repeat_bitwise() {
    let pair = moons();
    let mstn = TrainSpec::new(MethodConfig::Mstn {
        epochs: 2,
        lambda: 1.0,
        gamma: 1.0,
        ema_theta: 0.7,
    });
    for spec in [dann(3, 1.0), mstn, dann_fixbi(3, 1)] {
        let a = train(&spec, &pair, 11).unwrap();
        let b = train(&spec, &pair, 11).unwrap();
        assert_eq!(a, b, "{}", spec.method.name());
        let c = train(&spec, &pair, 12).unwrap();
        assert_ne!(a.params, c.params);
    }
}

#[test]
fn dann_without_reversal_matches_source_only() {
    let pair = moons();
    let so = train(&TrainSpec::new(MethodConfig::SourceOnly { epochs: 5 }), &pair, 4).unwrap();
    let d = train(&dann(5, 0.0), &pair, 4).unwrap();
    assert_eq!(so.result.target_accuracy, d.result.target_accuracy);
    for (name, value) in so.params.iter() {
        assert_eq!(d.params.get(name).unwrap(), value, "{name}");
    }
}

#[test]
fn mstn_with_zero_weights_trains() {
    let pair = moons();
    let spec = TrainSpec::new(MethodConfig::Mstn {
        epochs: 2,
        lambda: 0.0,
        gamma: 0.0,
        ema_theta: 0.7,
    });
    assert_eq!(train(&spec, &pair, 1).unwrap().result.target_accuracy.len(), 3);
}

#[test]
fn divergence_names_the_term() {
    let pair = moons();
    let mut spec = TrainSpec::new(MethodConfig::SourceOnly { epochs: 5 });
    spec.optim.scheduler = SchedulerConfig::Constant { lr: 1e300 };
    match train(&spec, &pair, 0) {
        Err(Error::NonFinite { method, term }) => {
            assert_eq!(method, "source_only");
            assert_eq!(term, "classification");
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn fixbi_family_needs_concat_batches() {
    let pair = moons();
    let mut spec = dann_fixbi(1, 1);
    spec.batch.strategy = BatchStrategy::Proportional;
    assert!(matches!(train(&spec, &pair, 0), Err(Error::Validation { .. })));
}

#[test]
fn dann_beats_source_only_on_rotated_moons() {
    let pair = moons();
    let mut so = TrainSpec::new(MethodConfig::SourceOnly { epochs: 30 });
    let mut d = dann(30, 1.0);
    so.model.domain_hidden = 32;
    d.model.domain_hidden = 32;
    let seed = 0;
    let a = train(&so, &pair, seed).unwrap().result.final_accuracy;
    let b = train(&d, &pair, seed).unwrap().result.final_accuracy;
    assert!(b > a, "dann {b} vs source-only {a}");
}

#[test]
fn peer_losses_mirror_when_roles_swap() {
    let pair = moons();
    let model = ModelConfig::default();
    let sd = build_nets(&model, 2, 2, false, 5, 0).unwrap();
    let td = build_nets(&model, 2, 2, false, 5, 1).unwrap();
    let state = FixbiState {
        sd: sd.clone(),
        td: td.clone(),
        lambda_sd: 0.7,
        lambda_td: 0.3,
        tau_sd: 0.6,
        tau_td: 0.8,
        warmup: 0,
        epoch: 0,
    };
    let swapped = FixbiState {
        sd: td,
        td: sd,
        lambda_sd: 0.3,
        lambda_td: 0.7,
        tau_sd: 0.8,
        tau_td: 0.6,
        ..state.clone()
    };
    let idx: Vec<usize> = (0..16).collect();
    let xs = pair.source().inputs().select_rows(&idx);
    let ys: Vec<usize> = idx.iter().map(|&i| pair.source().labels()[i]).collect();
    let xt = pair.target().inputs().select_rows(&idx);
    let a = fixbi_peer_losses(&state, &xs, &ys, &xt, 2).unwrap();
    let b = fixbi_peer_losses(&swapped, &xs, &ys, &xt, 2).unwrap();
    assert_eq!(a.fm, [b.fm[1], b.fm[0]]);
    assert_eq!(a.sp, [b.sp[1], b.sp[0]]);
    assert_eq!(a.bim, [b.bim[1], b.bim[0]]);
    assert!((a.cr - b.cr).abs() < 1e-15);
}
