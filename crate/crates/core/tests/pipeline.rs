//! End-to-end runs on the small `smoke` preset.

use std::fs;

use lsvos::features::write_vosf;
use lsvos::pipeline::{
    ablate, evaluate_bundle, initial_bundle, load_data, load_run, run_experiment, run_with_data, write_run,
    ExperimentConfig, SweepPoint, CHECKPOINT_FILE, MANIFEST_FILE, REPORT_FILE,
};
use lsvos::Error;

fn quick() -> ExperimentConfig {
    ExperimentConfig {
        phase1_epochs: 2,
        phase2_epochs: 2,
        ..ExperimentConfig::smoke()
    }
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let cfg = quick();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_run(a.path(), &cfg, &run_experiment(&cfg).unwrap(), 0.0).unwrap();
    write_run(b.path(), &cfg, &run_experiment(&cfg).unwrap(), 0.0).unwrap();
    for f in [
        REPORT_FILE,
        CHECKPOINT_FILE,
        "scores.csv",
        "roc.csv",
        "pca.csv",
        "history.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let other = ExperimentConfig { seed: 1, ..cfg };
    assert_ne!(
        run_experiment(&other).unwrap().report.methods,
        run_experiment(&quick()).unwrap().report.methods
    );
}

#[test]
fn zero_lambda_leaves_head_untouched() {
    let cfg = ExperimentConfig { lambda: 0.0, ..quick() };
    let data = load_data(&cfg).unwrap();
    let init = initial_bundle(&cfg, data.train.d, data.train.k).unwrap();
    let out = run_with_data(&cfg, &data).unwrap();
    let bits = |n: &lsvos::numerics::DenseNet| -> Vec<u64> {
        n.param_slices()
            .iter()
            .flat_map(|s| s.iter().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(bits(out.bundle.head.net()), bits(init.head.net()));
    assert_eq!(out.bundle.head.updates(), 0);
    assert_ne!(bits(out.bundle.ae.encoder()), bits(init.ae.encoder()));
    assert_ne!(bits(out.bundle.classifier.net()), bits(init.classifier.net()));
}

#[test]
fn queue_fills_then_stays_full() {
    let cfg = quick();
    let out = run_experiment(&cfg).unwrap();
    let occ = &out.queue_occupancy;
    let cap = cfg.queue_capacity * 3;
    assert!(occ.windows(2).all(|w| w[0] <= w[1]));
    let full = occ.iter().position(|&o| o == cap).expect("queue reaches capacity");
    assert!(occ[full..].iter().all(|&o| o == cap));
}

#[test]
fn untrained_head_is_near_chance() {
    let mut total = 0.0;
    let seeds = 8;
    for seed in 0..seeds {
        let cfg = ExperimentConfig {
            phase2_epochs: 0,
            seed,
            ..quick()
        };
        let out = run_experiment(&cfg).unwrap();
        assert_eq!(out.bundle.head.updates(), 0);
        total += out.report.get("uncertainty").unwrap().auroc;
    }
    let mean = total / seeds as f64;
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
}

#[test]
fn empty_override_reproduces_base() {
    let cfg = quick();
    let rows = ablate(&cfg, &[SweepPoint::default()]).unwrap();
    let base = run_experiment(&cfg).unwrap().report;
    assert_eq!(rows[0].metrics.as_ref().unwrap(), &base.methods);
    assert_eq!(rows[0].config_hash.as_deref(), Some(base.config_hash.as_str()));
}

#[test]
fn stored_run_re_evaluates_identically() {
    let cfg = quick();
    let dir = tempfile::tempdir().unwrap();
    let out = run_experiment(&cfg).unwrap();
    let manifest = write_run(dir.path(), &cfg, &out, 1.5).unwrap();
    for f in &manifest.outputs {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert!(manifest.outputs.contains(&MANIFEST_FILE.to_string()));
    let (cfg2, bundle, report) = load_run(dir.path()).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(bundle, out.bundle);
    let (again, _) = evaluate_bundle(&cfg2, &load_data(&cfg2).unwrap(), &bundle).unwrap();
    assert_eq!(again, report);
}

#[test]
fn feature_directory_matches_preset() {
    let cfg = quick();
    let data = load_data(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, ds) in [("train.vosf", &data.train), ("val.vosf", &data.val)] {
        write_vosf(
            fs::File::create(dir.path().join(name)).unwrap(),
            ds.d,
            ds.k,
            &ds.records,
        )
        .unwrap();
    }
    let from_dir = ExperimentConfig {
        dataset: dir.path().to_string_lossy().into_owned(),
        ..cfg.clone()
    };
    let a = run_experiment(&cfg).unwrap().report;
    let b = run_experiment(&from_dir).unwrap().report;
    assert_eq!(a.methods, b.methods);
    assert_ne!(a.config_hash, b.config_hash);
}

#[test]
fn huge_learning_rate_reports_divergence() {
    let cfg = ExperimentConfig { lr: 1e300, ..quick() };
    match run_experiment(&cfg) {
        Err(Error::Divergence { phase, step, .. }) => {
            assert_eq!(phase, "phase 1");
            assert!(step >= 1);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn every_training_synthesizer_runs() {
    for method in ["vos", "linear_mix", "random_noise", "noisy_id", "none"] {
        let mut cfg = quick();
        cfg.apply_overrides(&[format!("synth.method={method}")]).unwrap();
        let out = run_experiment(&cfg).unwrap_or_else(|e| panic!("{method}: {e}"));
        assert!(out.bundle.head.updates() > 0, "{method}");
    }
}

#[test]
fn unknown_dataset_is_a_config_error() {
    let cfg = ExperimentConfig {
        dataset: "/nonexistent/features".into(),
        ..quick()
    };
    assert!(matches!(run_experiment(&cfg), Err(Error::Config { .. })));
}
