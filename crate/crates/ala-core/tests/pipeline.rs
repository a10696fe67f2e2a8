//! Cross-module integration: the whole pipeline through on-disk artifacts.

use ala_core::anneal::{
    read_log_jsonl, run_annealing, write_log_jsonl, AnnealConfig, SubsetSignature,
};
use ala_core::data::{load_csv, synth_generate, write_csv, QueryRecord, SynthSpec};
use ala_core::expmodel::eval_throughput;
use ala_core::predictor::{
    load_config_model, predict_throughput, save_config_model, train_all_configs,
};
use ala_core::uncertainty::{
    actual_percent_error, estimate_error_confidence, train_error_predictor, EncodingUniverse,
    ErrorPredictor,
};
use ala_core::TrainConfig;

fn fast_cfg() -> TrainConfig {
    TrainConfig {
        n_trees: 40,
        max_depth: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn fit_artifacts_survive_disk_round_trip() {
    let spec = SynthSpec {
        noise_rel: 0.02,
        replicates: 2,
        ..SynthSpec::default()
    };
    let (d, _) = synth_generate(&spec, 31).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let csv_path = dir.path().join("bench.csv");
    write_csv(&d, &csv_path).unwrap();
    let loaded = load_csv(&csv_path).unwrap();
    assert_eq!(loaded.records, d.records);

    let set = train_all_configs(&loaded, &fast_cfg()).unwrap();
    assert_eq!(set.entries.len(), 1);
    let (key, model) = set.entries.iter().next().unwrap();
    let subdir = dir.path().join(key.slug());
    save_config_model(&subdir, key, model).unwrap();
    let (_, reloaded) = load_config_model(&subdir).unwrap();

    for (ii, oo, bb) in [(16, 16, 1), (64, 128, 8), (777, 33, 20)] {
        let a = predict_throughput(&model.database, &model.predictor, bb, ii, oo).unwrap();
        let b = predict_throughput(&reloaded.database, &reloaded.predictor, bb, ii, oo).unwrap();
        assert_eq!(a.thpt, b.thpt);
        assert_eq!(a.source, b.source);
    }

    // Lookup path reproduces the stored curve exactly.
    for (&(ii, oo), entry) in model.database.iter() {
        let p = predict_throughput(&model.database, &model.predictor, 8, ii, oo).unwrap();
        assert_eq!(p.thpt, eval_throughput(entry.params, 8.0));
    }
}

#[test]
fn anneal_log_feeds_error_and_confidence_estimation() {
    let spec = SynthSpec {
        ii_values: vec![16, 32, 64, 128],
        oo_values: vec![16, 32, 64, 128],
        bb_values: vec![1, 2, 4, 8, 16, 32],
        noise_rel: 0.02,
        ..SynthSpec::default()
    };
    let (d, _) = synth_generate(&spec, 77).unwrap();
    let mut s0 = SubsetSignature::full(&d);
    s0.s_bb.remove(&8);
    s0.s_ii.remove(&32);

    let cfg = fast_cfg();
    let log = run_annealing(
        &d,
        &s0,
        &AnnealConfig {
            n_iters: 20,
            seed: 9,
            ..AnnealConfig::default()
        },
        &cfg,
    )
    .unwrap();
    assert_eq!(log.len(), 21);

    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("anneal.jsonl");
    write_log_jsonl(&log, &log_path).unwrap();
    let log = read_log_jsonl(&log_path).unwrap();

    let universe = EncodingUniverse::from_dataset(&d);
    let f = train_error_predictor(&log, &universe, &cfg).unwrap();
    let model_path = dir.path().join("error_model.json");
    f.save(&model_path).unwrap();
    let f = ErrorPredictor::load(&model_path).unwrap();

    // Identity query: the induced records of a logged subset.
    let entry = &log[5];
    let query: Vec<QueryRecord> = d
        .records
        .iter()
        .filter(|r| entry.signature.contains(r))
        .map(|r| QueryRecord {
            config: r.config.clone(),
            ii: r.ii,
            oo: r.oo,
            bb: r.bb,
            thpt: Some(r.thpt),
        })
        .collect();
    let mut report = estimate_error_confidence("identity", &query, &f, &log, &d).unwrap();
    assert_eq!(report.confidence, 1.0);
    assert_eq!(report.d_min, 0.0);
    assert!(report.predicted_error.is_finite());

    report.actual_error = Some(actual_percent_error(&d, &query, &cfg).unwrap());
    let actual = report.actual_error.unwrap();
    assert!(actual.is_finite() && actual >= 0.0);
}
