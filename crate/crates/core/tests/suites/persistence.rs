use std::fs;

use crate::common::{quick_cfg, synthetic_split, tiny_spec};
use kdgan::checkpoint::{Checkpoint, CheckpointError, Manifest, MANIFEST_FILE, PARAMS_FILE};
use kdgan::config::{ArchConfig, ConfigError, ExperimentConfig, SuiteTarget, DATA_ROOT_ENV};
use kdgan::data::DatasetKind;
use kdgan::distill::{self, GanPair, Objectives, Role};
use kdgan::eval;
use kdgan::nn::AdamConfig;
use kdgan::ArchSpec;
use proptest::prelude::*;

/// Fixed case count; failures are reported, not persisted next to the sources.
fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

fn trained_checkpoint() -> Checkpoint {
    let split = synthetic_split(80, 40);
    let run = distill::train_teacher(&split, &tiny_spec(), &quick_cfg(1, 3), &Objectives::default()).unwrap();
    let mut manifest = Manifest::new(Role::Teacher, tiny_spec(), 3, 1, "synthetic");
    manifest.losses = run.history.epoch_losses.last().map(|e| e.mean);
    manifest.auc = run.history.final_auc(Role::Teacher);
    Checkpoint::from_pair(manifest, &run.pair)
}

pub fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ck = trained_checkpoint();
    ck.save(&a, false).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&b, false).unwrap();
    for file in [MANIFEST_FILE, PARAMS_FILE] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }

    // The restored networks behave identically, running statistics included.
    let split = synthetic_split(80, 40);
    let scores = |gen| eval::score_set(gen, &split.test).unwrap();
    assert_eq!(scores(&ck.gen), scores(&loaded.gen));
    let pair = GanPair::from_networks(loaded.gen.clone(), loaded.disc.clone(), AdamConfig::default());
    assert_eq!(pair.checksum(), GanPair::from_networks(ck.gen.clone(), ck.disc.clone(), AdamConfig::default()).checksum());
}

pub fn checkpoint_refuses_to_clobber() {
    let dir = tempfile::tempdir().unwrap();
    let ck = trained_checkpoint();
    ck.save(dir.path(), false).unwrap();
    assert!(matches!(ck.save(dir.path(), false), Err(CheckpointError::Exists(_))));
    ck.save(dir.path(), true).unwrap();
    assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
}

pub fn checkpoint_for_another_architecture_is_incompatible() {
    let dir = tempfile::tempdir().unwrap();
    trained_checkpoint().save(dir.path(), false).unwrap();
    let err = Checkpoint::load_for(dir.path(), &ArchSpec::new(1, [2, 4, 8], 8)).unwrap_err();
    assert!(err.is_incompatible(), "{err}");
    assert!(Checkpoint::load_for(dir.path(), &tiny_spec()).is_ok());

    let bytes = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
    fs::write(dir.path().join(PARAMS_FILE), &bytes[..bytes.len() - 3]).unwrap();
    assert!(Checkpoint::load(dir.path()).is_err());
}

fn kind() -> impl Strategy<Value = DatasetKind> {
    prop_oneof![Just(DatasetKind::Mnist), Just(DatasetKind::Fmnist), Just(DatasetKind::Cifar10)]
}

fn target() -> impl Strategy<Value = SuiteTarget> {
    prop_oneof![Just(SuiteTarget::Teacher), Just(SuiteTarget::Kdgan), Just(SuiteTarget::Progressive)]
}

prop_compose! {
    fn config()(
        kind in kind(),
        class in 0..10u8,
        limits in (proptest::option::of(1..5000usize), proptest::option::of(1..5000usize)),
        channels in proptest::option::of([1..64usize, 1..64usize, 1..64usize]),
        weights in [0.0..50.0f64, 0.0..50.0f64, 0.0..50.0f64],
        structure in proptest::option::of(1..=4u32),
        variant in proptest::option::of(prop_oneof![Just(23u32), Just(24u32)]),
        epochs in (1..600usize, 1..600usize, 0..600usize),
        batch in 1..64usize,
        lr in 1e-5..1e-1f64,
        seed in any::<u32>(),
        target in target(),
        classes in proptest::collection::vec(0..10u8, 1..10),
        repeats in 1..5usize,
    ) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::for_dataset(kind, Some("/data/root".into()), class);
        (cfg.data.train_limit, cfg.data.test_limit) = limits;
        cfg.student = ArchConfig { channels, ..ArchConfig::default() };
        cfg.loss.w_con = weights[0];
        cfg.distill.wx = weights[1];
        cfg.distill.w2 = weights[2];
        cfg.structure = structure;
        cfg.variant = variant;
        cfg.teacher_train.epochs = epochs.0;
        cfg.student_train.epochs = epochs.1;
        cfg.step2_train.epochs = epochs.2;
        cfg.student_train.batch_size = batch;
        cfg.teacher_train.learning_rate = lr;
        cfg.suite.target = target;
        cfg.suite.classes = classes;
        cfg.suite.repeats = repeats;
        cfg.teacher_checkpoint = structure.map(|_| "runs/teacher/final".into());
        cfg.with_seed(seed as u64)
    }
}

pub fn config_round_trip_is_field_and_text_identical() {
    proptest!(cases(300), |(cfg in config())| {
        let text = cfg.to_toml_string().unwrap();
        let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&parsed, &cfg);
        prop_assert_eq!(parsed.to_toml_string().unwrap(), text);
    });
}



pub fn config_paths_resolve_relative_to_the_file_and_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("data")).unwrap();
    let path = dir.path().join("exp.toml");
    fs::write(&path, "[data]\nkind = \"mnist\"\nroot = \"data\"\nnormal_class = 1\n").unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg.data_root().unwrap(), dir.path().join("data"));

    fs::write(&path, "[data]\nkind = \"mnist\"\n").unwrap();
    std::env::set_var(DATA_ROOT_ENV, dir.path().join("data"));
    assert_eq!(ExperimentConfig::load(&path).unwrap().data_root().unwrap(), dir.path().join("data"));
    std::env::set_var(DATA_ROOT_ENV, dir.path().join("missing"));
    match ExperimentConfig::load(&path) {
        Err(ConfigError::Field { field, .. }) => assert_eq!(field, "data.root"),
        other => panic!("expected a data.root error, got {other:?}"),
    }
    std::env::remove_var(DATA_ROOT_ENV);

    fs::write(&path, "[data]\nkind = \"mnist\"\nroot = \"data\"\nbogus = 1\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(ConfigError::Parse(_))));
}
