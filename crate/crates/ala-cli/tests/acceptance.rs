//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test -p ala-cli --test acceptance`
//! (add `-- --nocapture` to see the lines for passing criteria too).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ala_core::anneal::{
    accept_proposal, read_log_jsonl, run_annealing, temperature_at, write_log_jsonl, AnnealConfig,
    AnnealLog, SubsetSignature,
};
use ala_core::data::{
    load_csv, write_csv, BenchmarkRecord, ConfigKey, Dataset, QueryRecord, SynthSpec,
};
use ala_core::expmodel::{build_param_db, eval_throughput};
use ala_core::gbt;
use ala_core::predictor::{predict_throughput, train_param_predictor};
use ala_core::uncertainty::{
    estimate_error_confidence, subset_distance, train_error_predictor, EncodingUniverse,
    DEFAULT_HISTOGRAM_BINS,
};
use ala_core::TrainConfig;

fn verdict(n: u32, name: &str, result: Result<(), String>) {
    match result {
        Ok(()) => println!("acceptance {n} ({name}): PASS"),
        Err(msg) => {
            println!("acceptance {n} ({name}): FAIL - {msg}");
            panic!("acceptance {n} ({name}) failed: {msg}");
        }
    }
}

fn fixture_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bench_500.csv")
}

fn fast_cfg() -> TrainConfig {
    TrainConfig {
        n_trees: 40,
        max_depth: 3,
        ..TrainConfig::default()
    }
}

/// 10x10 workload grid whose rate surface spans at least one e-folding
/// over the batch-size range.
fn wide_grid_spec() -> SynthSpec {
    SynthSpec {
        ii_values: vec![4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048],
        oo_values: vec![4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048],
        bb_values: vec![1, 2, 4, 8, 16, 32, 64],
        ..SynthSpec::default()
    }
}

#[test]
fn criterion_1_exponential_fit_recovery() {
    verdict(
        1,
        "exponential fit recovery",
        (|| {
            let spec = wide_grid_spec();
            let (d, truth) = synth(&spec, 100);
            // Worst-case rate times batch spread covers >= 1 e-folding.
            let b_min = truth.values().map(|p| p.b).fold(f64::INFINITY, f64::min);
            let span = b_min * (64.0 - 1.0);
            if span < 1.0 {
                return Err(format!("grid spans only {span:.3} e-foldings"));
            }

            let start = Instant::now();
            let build = build_param_db(&d).map_err(|e| e.to_string())?;
            let elapsed = start.elapsed();
            if build.database.len() != 100 {
                return Err(format!(
                    "expected 100 entries, got {}",
                    build.database.len()
                ));
            }
            let mut recovered = 0;
            for (&(ii, oo), entry) in build.database.iter() {
                let t = truth[&(ii, oo)];
                let ok = rel(entry.params.a, t.a) < 1e-3
                    && rel(entry.params.b, t.b) < 1e-3
                    && rel(entry.params.c, t.c) < 1e-3;
                if ok {
                    recovered += 1;
                }
            }
            if recovered != 100 {
                return Err(format!("only {recovered}/100 groups recovered within 0.1%"));
            }
            if elapsed.as_secs_f64() >= 5.0 {
                return Err(format!("fitting took {elapsed:?} (budget 5 s)"));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_2_noisy_fit_robustness() {
    verdict(
        2,
        "noisy fit robustness",
        (|| {
            let spec = SynthSpec {
                bb_values: vec![
                    1, 2, 3, 4, 6, 8, 10, 12, 16, 20, 24, 32, 40, 48, 64, 80, 96, 128, 160, 200,
                ],
                noise_rel: 0.02,
                ..wide_grid_spec()
            };
            let (d, truth) = synth(&spec, 7);
            let build = build_param_db(&d).map_err(|e| e.to_string())?;
            let good = build
                .database
                .iter()
                .filter(|(&(ii, oo), e)| rel(e.params.c, truth[&(ii, oo)].c) < 0.05)
                .count();
            if good < 95 {
                return Err(format!("c within 5% in only {good}/100 groups"));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_3_lookup_exactness() {
    verdict(
        3,
        "lookup exactness",
        (|| {
            let (d, _) = synth(&wide_grid_spec(), 100);
            let build = build_param_db(&d).map_err(|e| e.to_string())?;
            let predictor =
                train_param_predictor(&build.table, &fast_cfg()).map_err(|e| e.to_string())?;
            for (&(ii, oo), entry) in build.database.iter() {
                for bb in [1u32, 8, 64] {
                    let p = predict_throughput(&build.database, &predictor, bb, ii, oo)
                        .map_err(|e| e.to_string())?;
                    let direct = eval_throughput(entry.params, f64::from(bb));
                    if rel(p.thpt, direct) > 1e-12 {
                        return Err(format!(
                            "lookup mismatch at (ii={ii}, oo={oo}, bb={bb}): {} vs {direct}",
                            p.thpt
                        ));
                    }
                }
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_4_predictor_interpolation() {
    verdict(
        4,
        "predictor interpolation",
        (|| {
            let spec = SynthSpec {
                bb_values: vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64],
                ..SynthSpec::default()
            };
            let (d, truth) = synth(&spec, 3);
            let interior = [32u32, 64, 128];
            let mut errors = Vec::new();
            for &ii in &interior {
                for &oo in &interior {
                    let rest = Dataset::new(
                        d.records
                            .iter()
                            .filter(|r| (r.ii, r.oo) != (ii, oo))
                            .cloned()
                            .collect(),
                        "holdout",
                    );
                    let build = build_param_db(&rest).map_err(|e| e.to_string())?;
                    let predictor = train_param_predictor(&build.table, &TrainConfig::default())
                        .map_err(|e| e.to_string())?;
                    let t = truth[&(ii, oo)];
                    for &bb in &spec.bb_values {
                        let p = predict_throughput(&build.database, &predictor, bb, ii, oo)
                            .map_err(|e| e.to_string())?;
                        let want = eval_throughput(t, f64::from(bb));
                        errors.push(100.0 * (p.thpt - want).abs() / want);
                    }
                }
            }
            let median =
                ala_core::expmodel::percentile(&errors, 50.0).map_err(|e| e.to_string())?;
            if median >= 20.0 {
                return Err(format!(
                    "median interpolation error {median:.2}% (limit 20%)"
                ));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_5_gbt_engine_properties() {
    verdict(
        5,
        "gbt engine properties",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(50);
            let x: Vec<Vec<f64>> = (0..80)
                .map(|_| vec![rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
                .collect();
            let y: Vec<f64> = x.iter().map(|r| (r[0]).sin() * 4.0 + r[1] * 0.5).collect();
            let cfg = TrainConfig {
                n_trees: 80,
                ..TrainConfig::default()
            };
            let model = gbt::train(&x, &y, &cfg).map_err(|e| e.to_string())?;

            // Training MSE non-increasing in tree count.
            let mut prev = f64::INFINITY;
            for k in 0..=cfg.n_trees {
                let mse = x
                    .iter()
                    .zip(&y)
                    .map(|(row, &yi)| {
                        let p = model.predict_staged(row, k).unwrap();
                        (p - yi) * (p - yi)
                    })
                    .sum::<f64>()
                    / y.len() as f64;
                if mse > prev + 1e-12 {
                    return Err(format!("training MSE increased at tree {k}"));
                }
                prev = mse;
            }

            // Beats the mean baseline on every non-constant fixture.
            let fixtures: Vec<(Vec<Vec<f64>>, Vec<f64>)> = vec![
                (
                    (1..=20).map(|k| vec![f64::from(k)]).collect(),
                    (1..=20).map(f64::from).collect(),
                ),
                (
                    (0..40).map(|k| vec![f64::from(k) - 20.0]).collect(),
                    (0..40).map(|k| if k < 20 { 1.0 } else { 5.0 }).collect(),
                ),
                (x.clone(), y.clone()),
            ];
            for (i, (fx, fy)) in fixtures.iter().enumerate() {
                let m = gbt::train(fx, fy, &TrainConfig::default()).map_err(|e| e.to_string())?;
                let mean = fy.iter().sum::<f64>() / fy.len() as f64;
                let baseline =
                    fy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / fy.len() as f64;
                let mse = fx
                    .iter()
                    .zip(fy)
                    .map(|(row, &yi)| {
                        let p = m.predict(row).unwrap();
                        (p - yi) * (p - yi)
                    })
                    .sum::<f64>()
                    / fy.len() as f64;
                if mse >= baseline {
                    return Err(format!(
                        "fixture {i}: MSE {mse} did not beat baseline {baseline}"
                    ));
                }
            }

            // Save/load round trip predicts bit-identically on 100 random rows.
            let reloaded =
                ala_core::TreeEnsemble::load(&model.save()).map_err(|e| e.to_string())?;
            for _ in 0..100 {
                let row = vec![rng.gen_range(-5.0..15.0), rng.gen_range(-5.0..15.0)];
                let (a, b) = (
                    model.predict(&row).unwrap(),
                    reloaded.predict(&row).unwrap(),
                );
                if a.to_bits() != b.to_bits() {
                    return Err(format!("round-trip prediction differs: {a} vs {b}"));
                }
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_6_simulated_annealing_correctness() {
    verdict(
        6,
        "simulated annealing correctness",
        (|| {
            let spec = SynthSpec {
                ii_values: vec![16, 32, 64],
                oo_values: vec![16, 32, 64],
                bb_values: vec![1, 2, 4, 8, 16],
                noise_rel: 0.02,
                ..SynthSpec::default()
            };
            let (d, _) = synth(&spec, 60);
            let mut s0 = SubsetSignature::full(&d);
            s0.s_bb.remove(&8);
            let train_cfg = TrainConfig {
                n_trees: 25,
                max_depth: 3,
                ..TrainConfig::default()
            };

            for seed in 0..20u64 {
                let cfg = AnnealConfig {
                    n_iters: 50,
                    seed,
                    ..AnnealConfig::default()
                };
                let log = run_annealing(&d, &s0, &cfg, &train_cfg).map_err(|e| e.to_string())?;
                if log.len() != 51 {
                    return Err(format!(
                        "seed {seed}: log has {} entries, want 51",
                        log.len()
                    ));
                }
                // Temperature schedule is exact and best-so-far never rises.
                let mut best = f64::INFINITY;
                let mut prev_best = f64::INFINITY;
                for (i, entry) in log.iter().enumerate() {
                    let expected = temperature_at(cfg.tau0, cfg.alpha, i);
                    if entry.temperature.to_bits() != expected.to_bits() {
                        return Err(format!(
                            "seed {seed}: temperature at iteration {i} is {}, want {expected}",
                            entry.temperature
                        ));
                    }
                    if entry.accepted {
                        best = best.min(entry.error);
                    }
                    if best > prev_best {
                        return Err(format!("seed {seed}: best-so-far rose at iteration {i}"));
                    }
                    prev_best = best;
                }
            }

            // Acceptance probability matches the closed form.
            let mut rng = ChaCha8Rng::seed_from_u64(123);
            let trials = 10_000;
            let accepted = (0..trials)
                .filter(|_| accept_proposal(10.0, 12.0, 2.0, &mut rng))
                .count();
            let rate = accepted as f64 / trials as f64;
            if (rate - (-1.0f64).exp()).abs() >= 0.02 {
                return Err(format!("empirical acceptance rate {rate:.4} vs exp(-1)"));
            }

            // Identical seeds give byte-identical JSONL logs.
            let cfg = AnnealConfig {
                n_iters: 25,
                seed: 5,
                ..AnnealConfig::default()
            };
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let (p1, p2) = (dir.path().join("1.jsonl"), dir.path().join("2.jsonl"));
            write_log_jsonl(&run_annealing(&d, &s0, &cfg, &train_cfg).unwrap(), &p1)
                .map_err(|e| e.to_string())?;
            write_log_jsonl(&run_annealing(&d, &s0, &cfg, &train_cfg).unwrap(), &p2)
                .map_err(|e| e.to_string())?;
            if fs::read(&p1).unwrap() != fs::read(&p2).unwrap() {
                return Err("same-seed logs differ".to_string());
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_7_error_predictor_sanity() {
    verdict(
        7,
        "error predictor sanity",
        (|| {
            let spec = SynthSpec {
                bb_values: vec![1, 2, 4, 8, 16, 32, 48, 64],
                noise_rel: 0.02,
                ..SynthSpec::default()
            };
            let (d, _) = synth(&spec, 14);
            let mut s0 = SubsetSignature::full(&d);
            s0.s_bb.remove(&16);
            s0.s_ii.remove(&64);
            let train_cfg = fast_cfg();
            let log = run_annealing(
                &d,
                &s0,
                &AnnealConfig {
                    n_iters: 199,
                    seed: 17,
                    ..AnnealConfig::default()
                },
                &train_cfg,
            )
            .map_err(|e| e.to_string())?;
            if log.len() != 200 {
                return Err(format!("log has {} entries, want 200", log.len()));
            }

            let finite: Vec<&_> = log.iter().filter(|e| e.error.is_finite()).collect();
            let mean = finite.iter().map(|e| e.error).sum::<f64>() / finite.len() as f64;
            let std = (finite
                .iter()
                .map(|e| (e.error - mean) * (e.error - mean))
                .sum::<f64>()
                / finite.len() as f64)
                .sqrt();

            let mut indices: Vec<usize> = (0..log.len()).collect();
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
            let cut = log.len() / 5;
            let (held_idx, train_idx) = indices.split_at(cut);
            let train_log: AnnealLog = train_idx.iter().map(|&i| log[i].clone()).collect();
            let universe = EncodingUniverse::from_dataset(&d);
            let f = train_error_predictor(&train_log, &universe, &train_cfg)
                .map_err(|e| e.to_string())?;

            let mut abs_errors: Vec<f64> = Vec::new();
            for &i in held_idx {
                if !log[i].error.is_finite() {
                    continue;
                }
                let predicted = f.predict(&log[i].signature).map_err(|e| e.to_string())?;
                abs_errors.push((predicted - log[i].error).abs());
            }
            let median =
                ala_core::expmodel::percentile(&abs_errors, 50.0).map_err(|e| e.to_string())?;
            if median >= 0.5 * std {
                return Err(format!(
                    "held-out median abs error {median:.4} not below half the log std {std:.4}"
                ));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_8_confidence_distance_axioms() {
    verdict(
        8,
        "confidence/distance axioms",
        (|| {
            let mut rng = ChaCha8Rng::seed_from_u64(88);
            let random_records = |rng: &mut ChaCha8Rng| -> Vec<BenchmarkRecord> {
                let n = rng.gen_range(1..40);
                (0..n)
                    .map(|_| BenchmarkRecord {
                        config: ConfigKey::default(),
                        ii: rng.gen_range(1..2048),
                        oo: rng.gen_range(1..2048),
                        bb: rng.gen_range(1..128),
                        thpt: rng.gen_range(1.0..500.0),
                    })
                    .collect()
            };
            for k in 0..1000 {
                let a = random_records(&mut rng);
                let b = random_records(&mut rng);
                let d_aa =
                    subset_distance(&a, &a, DEFAULT_HISTOGRAM_BINS).map_err(|e| e.to_string())?;
                if d_aa != 0.0 {
                    return Err(format!("pair {k}: d(A,A) = {d_aa}, want 0"));
                }
                let d_ab =
                    subset_distance(&a, &b, DEFAULT_HISTOGRAM_BINS).map_err(|e| e.to_string())?;
                let d_ba =
                    subset_distance(&b, &a, DEFAULT_HISTOGRAM_BINS).map_err(|e| e.to_string())?;
                if d_ab.to_bits() != d_ba.to_bits() {
                    return Err(format!("pair {k}: asymmetric distance {d_ab} vs {d_ba}"));
                }
                if !(0.0..=1.0).contains(&d_ab) {
                    return Err(format!("pair {k}: distance {d_ab} outside [0, 1]"));
                }
            }

            // Confidence closed form and the identity/shift direction on a
            // real pipeline fixture.
            let spec = SynthSpec {
                ii_values: vec![16, 32, 64],
                oo_values: vec![16, 32, 64],
                bb_values: vec![1, 2, 4, 8, 16],
                noise_rel: 0.02,
                ..SynthSpec::default()
            };
            let (d, _) = synth(&spec, 19);
            let mut s0 = SubsetSignature::full(&d);
            s0.s_bb.remove(&4);
            let train_cfg = fast_cfg();
            let log = run_annealing(
                &d,
                &s0,
                &AnnealConfig {
                    n_iters: 20,
                    seed: 2,
                    ..AnnealConfig::default()
                },
                &train_cfg,
            )
            .map_err(|e| e.to_string())?;
            let universe = EncodingUniverse::from_dataset(&d);
            let f =
                train_error_predictor(&log, &universe, &train_cfg).map_err(|e| e.to_string())?;

            let to_query = |records: Vec<BenchmarkRecord>| -> Vec<QueryRecord> {
                records
                    .into_iter()
                    .map(|r| QueryRecord {
                        config: r.config,
                        ii: r.ii,
                        oo: r.oo,
                        bb: r.bb,
                        thpt: Some(r.thpt),
                    })
                    .collect()
            };

            let identity: Vec<BenchmarkRecord> = d
                .records
                .iter()
                .filter(|r| log[3].signature.contains(r))
                .cloned()
                .collect();
            let r_id = estimate_error_confidence("id", &to_query(identity.clone()), &f, &log, &d)
                .map_err(|e| e.to_string())?;
            if r_id.d_min != 0.0 || r_id.confidence != 1.0 {
                return Err(format!(
                    "identity query: d_min={}, confidence={}",
                    r_id.d_min, r_id.confidence
                ));
            }

            // Disjoint batch-size range must lower the confidence strictly.
            let shifted: Vec<BenchmarkRecord> = identity
                .iter()
                .cloned()
                .map(|mut r| {
                    r.bb += 500;
                    r
                })
                .collect();
            let r_shift = estimate_error_confidence("shift", &to_query(shifted), &f, &log, &d)
                .map_err(|e| e.to_string())?;
            if r_shift.confidence != 1.0 / (1.0 + r_shift.d_min) {
                return Err("confidence is not exactly 1/(1+d_min)".to_string());
            }
            if r_shift.d_min == 0.0 || r_shift.confidence >= r_id.confidence {
                return Err(format!(
                    "shifted query should have lower confidence: {} vs {}",
                    r_shift.confidence, r_id.confidence
                ));
            }
            Ok(())
        })(),
    );
}

#[test]
fn criterion_9_end_to_end_fixture() {
    verdict(
        9,
        "end-to-end fixture",
        (|| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let csv = fixture_csv();
            let csv_str = csv.to_str().unwrap();
            let run = |args: &[&str]| -> Result<String, String> {
                let out = Command::new(env!("CARGO_BIN_EXE_ala"))
                    .args(args)
                    .output()
                    .map_err(|e| e.to_string())?;
                if !out.status.success() {
                    return Err(format!(
                        "`ala {}` failed: {}",
                        args.join(" "),
                        String::from_utf8_lossy(&out.stderr)
                    ));
                }
                Ok(String::from_utf8_lossy(&out.stdout).into_owned())
            };

            let start = Instant::now();
            let artifacts = dir.path().join("artifacts");
            run(&["fit", csv_str, artifacts.to_str().unwrap()])?;

            let log_path = dir.path().join("anneal.jsonl");
            run(&[
                "anneal",
                csv_str,
                log_path.to_str().unwrap(),
                "--iters",
                "100",
                "--seed",
                "11",
            ])?;

            let model_path = dir.path().join("error_model.json");
            run(&[
                "train-error-predictor",
                log_path.to_str().unwrap(),
                csv_str,
                model_path.to_str().unwrap(),
            ])?;

            // Query set: the induced records of a logged subset.
            let log = read_log_jsonl(&log_path).map_err(|e| e.to_string())?;
            let d = load_csv(&csv).map_err(|e| e.to_string())?;
            let entry = log
                .iter()
                .rev()
                .find(|e| e.accepted && e.error.is_finite())
                .ok_or("no accepted entry in the log")?;
            let induced: Vec<BenchmarkRecord> = d
                .records
                .iter()
                .filter(|r| entry.signature.contains(r))
                .cloned()
                .collect();
            let query_path = dir.path().join("query.csv");
            write_csv(&Dataset::new(induced, "query"), &query_path).map_err(|e| e.to_string())?;

            let table = run(&[
                "estimate",
                query_path.to_str().unwrap(),
                model_path.to_str().unwrap(),
                log_path.to_str().unwrap(),
                csv_str,
            ])?;
            let elapsed = start.elapsed();

            for column in ["Dataset", "Predicted Error", "Confidence", "Actual Error"] {
                if !table.contains(column) {
                    return Err(format!("report table lacks column {column}:\n{table}"));
                }
            }
            let json = run(&[
                "estimate",
                query_path.to_str().unwrap(),
                model_path.to_str().unwrap(),
                log_path.to_str().unwrap(),
                csv_str,
                "--json",
            ])?;
            let v: serde_json::Value = serde_json::from_str(&json).map_err(|e| e.to_string())?;
            let confidence = v["reports"][0]["confidence"].as_f64().unwrap_or(-1.0);
            if confidence != 1.0 {
                return Err(format!("identity query confidence {confidence}, want 1.0"));
            }
            if !v["reports"][0]["actual_error"].is_f64() {
                return Err("actual error missing from the report".to_string());
            }
            if elapsed.as_secs_f64() >= 60.0 {
                return Err(format!("pipeline took {elapsed:?} (budget 60 s)"));
            }
            Ok(())
        })(),
    );
}

fn synth(spec: &SynthSpec, seed: u64) -> (Dataset, ala_core::data::TruthMap) {
    ala_core::data::synth_generate(spec, seed).expect("synthetic generation failed")
}

fn rel(x: f64, truth: f64) -> f64 {
    (x - truth).abs() / truth.abs()
}
