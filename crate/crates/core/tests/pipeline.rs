//! Cross-module flows through the public API.

use sfm_core::dataset::{load_csv, prepare, FeatureSchema, SplitSpec};
use sfm_core::estimators::{dkm, km, pkm, CdfMatrix};
use sfm_core::losses::LossConfig;
use sfm_core::metrics::{evaluate, evaluate_detailed, TimeSampler};
use sfm_core::model::{Checkpoint, LogNormalModel, SfmConfig, SfmModel};
use sfm_core::synth::{generate, oracle_cindex, OracleSampler, OracleSpec};
use sfm_core::train::{train, TrainConfig};

fn small_config() -> SfmConfig {
    SfmConfig {
        hidden_units: 16,
        noise_dim: 4,
        ..SfmConfig::default()
    }
}

#[test]
fn csv_round_trip_preserves_dataset() {
    let (ds, _) = generate(300, &OracleSpec::exponential(vec![0.4, -0.2, 0.1], 0.3, 5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
    let raw = load_csv(&path, &FeatureSchema::continuous(3)).unwrap();
    assert_eq!(raw.t, ds.t);
    assert_eq!(raw.y, ds.y);
    assert_eq!(raw.missing_count(), 0);
}

#[test]
fn oracle_sampler_scores_like_the_oracle() {
    let spec = OracleSpec::exponential(vec![0.8, -0.6, 0.4], 0.3, 9);
    let (ds, spec) = generate(1500, &spec).unwrap();
    let sampler = OracleSampler { spec: spec.clone() };
    let ev = evaluate_detailed(&sampler, &ds, 200, 1).unwrap();
    let oracle = oracle_cindex(&spec, &ds).unwrap();
    assert!((ev.report.c_index - oracle).abs() < 0.03, "{} vs {oracle}", ev.report.c_index);
    // Exponential draws have coefficient of variation 1.
    assert!((ev.report.mean_cov - 1.0).abs() < 0.1);
    assert!(ev.report.coverage95 > 0.85);
}

#[test]
fn dkm_of_observed_point_masses_is_km() {
    let (ds, _) = generate(500, &OracleSpec::exponential(vec![0.3; 4], 0.4, 2)).unwrap();
    let k = km(&ds.t, &ds.y).unwrap();
    let d = dkm(&CdfMatrix::point_masses(&ds.t, &k.grid).unwrap(), &ds.y, &k.grid).unwrap();
    assert_eq!(d.survival, k.survival);
    assert_eq!(pkm(&ds.t, &ds.y, &k.grid).unwrap().survival, k.survival);
}

#[test]
fn trained_checkpoint_reproduces_report() {
    let (ds, _) = generate(800, &OracleSpec::exponential(vec![0.5, -0.4, 0.3], 0.3, 4)).unwrap();
    let raw = {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        load_csv(&path, &FeatureSchema::continuous(3)).unwrap()
    };
    let prepared = prepare(&raw, &SplitSpec { seed: 4, ..SplitSpec::default() }).unwrap();
    let cfg = TrainConfig {
        max_epochs: 20,
        seed: 4,
        ..TrainConfig::default()
    };
    let model = SfmModel::init(small_config(), 3, 4).unwrap();
    let out = train(model, &prepared.train, &prepared.valid, &LossConfig::default(), &cfg).unwrap();
    assert!(!out.history.records.is_empty());

    let ckpt = Checkpoint::Sfm(out.model);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let a = evaluate(ckpt.sampler(), &prepared.test, 50, 8).unwrap();
    let b = evaluate(loaded.sampler(), &prepared.test, 50, 8).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn lognormal_baseline_trains_and_samples() {
    let (ds, _) = generate(600, &OracleSpec::exponential(vec![0.5, -0.5], 0.2, 6)).unwrap();
    let idx = sfm_core::dataset::stratified_split(&ds.y, &SplitSpec::default()).unwrap();
    let (tr, va, te) = (ds.subset(&idx.train), ds.subset(&idx.valid), ds.subset(&idx.test));
    let cfg = TrainConfig {
        max_epochs: 15,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let model = LogNormalModel::init(small_config(), 2, 6).unwrap();
    let out = train(model, &tr, &va, &LossConfig::default(), &cfg).unwrap();
    let first = out.history.records.first().unwrap().valid_loss;
    let best = out.history.best().unwrap().valid_loss;
    assert!(best < first);
    let samples = out.model.sample_times(te.x.view(), 30, 1).unwrap();
    assert_eq!((samples.subjects(), samples.draws()), (te.len(), 30));
    assert!(samples.values().iter().all(|v| *v > 0.0));
}
