//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use ala_core::anneal::{
    read_log_jsonl, run_annealing, write_log_jsonl, AnnealConfig, SubsetSignature,
};
use ala_core::data::{
    load_csv, load_query_csv, split_by_config, synth_generate, write_csv, write_truth_json,
    ConfigKey, Dataset, QueryRecord, SynthSpec,
};
use ala_core::expmodel::percentile;
use ala_core::predictor::{
    load_config_model, predict_throughput, save_config_model, train_all_configs, ConfigModel,
};
use ala_core::uncertainty::{
    actual_percent_error, estimate_error_confidence, render_report_table, train_error_predictor,
    ConfidenceReport, EncodingUniverse, ErrorPredictor,
};
use ala_core::TrainConfig;

use crate::manifest::{sibling_manifest_path, ManifestBuilder};
use crate::{AnnealArgs, GbtArgs, SynthArgs};

impl GbtArgs {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            n_trees: self.trees,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            min_samples_leaf: self.min_samples_leaf,
            subsample: self.subsample,
            seed,
        }
    }
}

/// Select one group from a multi-config dataset. Without a selector the
/// dataset must contain exactly one configuration; with one, the selector
/// must match exactly one configuration slug (substring match).
fn select_config(
    groups: BTreeMap<ConfigKey, Dataset>,
    selector: Option<&str>,
) -> Result<(ConfigKey, Dataset)> {
    let candidates: Vec<String> = groups.keys().map(ConfigKey::slug).collect();
    match selector {
        None => {
            if groups.len() == 1 {
                Ok(groups.into_iter().next().unwrap())
            } else {
                bail!(
                    "dataset contains {} configurations; pass --config to pick one of: {}",
                    groups.len(),
                    candidates.join(", ")
                )
            }
        }
        Some(sel) => {
            let mut matches: Vec<(ConfigKey, Dataset)> = groups
                .into_iter()
                .filter(|(k, _)| k.slug().contains(sel))
                .collect();
            match matches.len() {
                1 => Ok(matches.remove(0)),
                0 => bail!(
                    "selector '{sel}' matches no configuration; candidates: {}",
                    candidates.join(", ")
                ),
                n => bail!(
                    "selector '{sel}' is ambiguous ({n} matches): {}",
                    matches
                        .iter()
                        .map(|(k, _)| k.slug())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

pub fn cmd_fit(input: &Path, out_dir: &Path, gbt: &GbtArgs, seed: u64) -> Result<()> {
    #[derive(Serialize)]
    struct Params<'a> {
        gbt: &'a TrainConfig,
    }
    let train_cfg = gbt.to_train_config(seed);
    let manifest = ManifestBuilder::new("fit", &[input], &Params { gbt: &train_cfg }, Some(seed))?;

    let dataset = load_csv(input)?;
    let set = train_all_configs(&dataset, &train_cfg)?;
    for key in &set.skipped {
        eprintln!("warning: skipped configuration [{key}]: no workload produced parameters");
    }
    if set.entries.is_empty() {
        bail!("no configuration produced a model (all groups unfittable)");
    }

    fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    let mut outputs = Vec::new();
    for (key, model) in &set.entries {
        for f in &model.fit_failures {
            eprintln!(
                "warning: [{key}] fit failed for workload (ii={}, oo={}): {}",
                f.ii, f.oo, f.reason
            );
        }
        let subdir = unique_subdir(out_dir, &key.slug())?;
        save_config_model(&subdir, key, model)?;
        println!(
            "{}: {} workloads ({} fitted, {} failed) -> {}",
            key.slug(),
            model.database.len(),
            model
                .database
                .iter()
                .filter(|(_, e)| e.residual.is_some())
                .count(),
            model.fit_failures.len(),
            subdir.display()
        );
        outputs.push(subdir);
    }
    let manifest_path = out_dir.join("run_manifest.json");
    let output_refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    manifest.write(&output_refs, &manifest_path)?;
    Ok(())
}

fn unique_subdir(out_dir: &Path, slug: &str) -> Result<PathBuf> {
    let base = out_dir.join(slug);
    if !base.exists() {
        return Ok(base);
    }
    for k in 2..1000 {
        let candidate = out_dir.join(format!("{slug}-{k}"));
        if !candidate.exists() {
            return Ok(candidate);
        }
    }
    bail!("cannot find a free artifact directory name for {slug}")
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn artifact_subdirs(artifacts: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    let entries = fs::read_dir(artifacts)
        .with_context(|| format!("cannot read artifact directory {}", artifacts.display()))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() && path.join("manifest.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!(
            "{} contains no per-configuration artifacts (expected subdirectories with manifest.json)",
            artifacts.display()
        );
    }
    Ok(dirs)
}

fn select_artifact_dir(artifacts: &Path, selector: Option<&str>) -> Result<PathBuf> {
    let dirs = artifact_subdirs(artifacts)?;
    let names: Vec<String> = dirs
        .iter()
        .map(|d| {
            d.file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned()
        })
        .collect();
    match selector {
        None if dirs.len() == 1 => Ok(dirs.into_iter().next().unwrap()),
        None => bail!(
            "multiple configurations present; pass --config to pick one of: {}",
            names.join(", ")
        ),
        Some(sel) => {
            let matches: Vec<usize> = names
                .iter()
                .enumerate()
                .filter(|(_, n)| n.contains(sel))
                .map(|(i, _)| i)
                .collect();
            match matches.len() {
                1 => Ok(dirs[matches[0]].clone()),
                0 => bail!(
                    "selector '{sel}' matches no configuration; candidates: {}",
                    names.join(", ")
                ),
                _ => bail!(
                    "selector '{sel}' is ambiguous; matches: {}",
                    matches
                        .iter()
                        .map(|&i| names[i].clone())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            }
        }
    }
}

pub fn cmd_predict(
    artifacts: &Path,
    bb: u32,
    ii: u32,
    oo: u32,
    selector: Option<&str>,
    as_json: bool,
) -> Result<()> {
    let dir = select_artifact_dir(artifacts, selector)?;
    let (key, model): (ConfigKey, ConfigModel) = load_config_model(&dir)?;
    let p = predict_throughput(&model.database, &model.predictor, bb, ii, oo)?;
    if as_json {
        let line = json!({
            "thpt": p.thpt,
            "source": p.source.to_string(),
            "a": p.params.a,
            "b": p.params.b,
            "c": p.params.c,
        });
        println!("{line}");
    } else {
        println!("config: {key}");
        println!("workload: ii={ii} oo={oo} bb={bb}");
        println!("thpt: {:.4} tokens/s ({})", p.thpt, p.source);
        println!(
            "params: a={:.6} b={:.6} c={:.6}",
            p.params.a, p.params.b, p.params.c
        );
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// anneal
// ---------------------------------------------------------------------------

/// Default starting subset: a seeded random ~80% of each dimension's
/// unique values (at least 2 per dimension), re-drawn until it induces a
/// valid train/eval split.
fn default_initial_subset(d: &Dataset, seed: u64) -> Result<SubsetSignature> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    for _ in 0..50 {
        let pick = |values: &[u32], rng: &mut ChaCha8Rng| {
            let keep = ((values.len() as f64 * 0.8).ceil() as usize)
                .max(2)
                .min(values.len());
            let mut pool = values.to_vec();
            pool.shuffle(rng);
            pool.truncate(keep);
            pool.into_iter().collect()
        };
        let s = SubsetSignature {
            s_ii: pick(&d.unique_ii(), &mut rng),
            s_oo: pick(&d.unique_oo(), &mut rng),
            s_bb: pick(&d.unique_bb(), &mut rng),
        };
        if s.validate(d).is_ok() {
            return Ok(s);
        }
    }
    bail!("could not draw a valid initial subset; the dataset's workload grid may be too sparse")
}

fn format_signature(s: &SubsetSignature) -> String {
    let fmt = |set: &std::collections::BTreeSet<u32>| {
        set.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    };
    format!(
        "s_ii=[{}] s_oo=[{}] s_bb=[{}]",
        fmt(&s.s_ii),
        fmt(&s.s_oo),
        fmt(&s.s_bb)
    )
}

pub fn cmd_anneal(
    input: &Path,
    out_log: &Path,
    args: &AnnealArgs,
    selector: Option<&str>,
    gbt: &GbtArgs,
) -> Result<()> {
    let anneal_cfg = AnnealConfig {
        tau0: args.tau0,
        alpha: args.alpha,
        n_iters: args.iters,
        seed: args.seed,
    };
    let train_cfg = gbt.to_train_config(args.seed);
    #[derive(Serialize)]
    struct Params<'a> {
        anneal: &'a AnnealConfig,
        gbt: &'a TrainConfig,
        config: Option<&'a str>,
    }
    let manifest = ManifestBuilder::new(
        "anneal",
        &[input],
        &Params {
            anneal: &anneal_cfg,
            gbt: &train_cfg,
            config: selector,
        },
        Some(args.seed),
    )?;

    let dataset = load_csv(input)?;
    let (key, group) = select_config(split_by_config(&dataset)?, selector)?;
    let s0 = default_initial_subset(&group, args.seed)?;
    log::info!(
        "annealing configuration [{key}] from {}",
        format_signature(&s0)
    );

    let log = run_annealing(&group, &s0, &anneal_cfg, &train_cfg)?;
    write_log_jsonl(&log, out_log)?;

    let best = log
        .iter()
        .filter(|e| e.accepted && e.error.is_finite())
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .ok_or_else(|| anyhow!("no accepted finite-error iteration in the log"))?;
    println!("config: {}", key.slug());
    println!("iterations: {} (+1 initial)", anneal_cfg.n_iters);
    println!(
        "best error: {:.4}% at iteration {}",
        best.error, best.iteration
    );
    println!("best subset: {}", format_signature(&best.signature));
    println!("log: {}", out_log.display());

    manifest.write(&[out_log], &sibling_manifest_path(out_log))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train-error-predictor
// ---------------------------------------------------------------------------

pub fn cmd_train_error_predictor(
    log_path: &Path,
    train_csv: &Path,
    out_model: &Path,
    selector: Option<&str>,
    gbt: &GbtArgs,
    seed: u64,
) -> Result<()> {
    let train_cfg = gbt.to_train_config(seed);
    #[derive(Serialize)]
    struct Params<'a> {
        gbt: &'a TrainConfig,
        config: Option<&'a str>,
    }
    let manifest = ManifestBuilder::new(
        "train-error-predictor",
        &[log_path, train_csv],
        &Params {
            gbt: &train_cfg,
            config: selector,
        },
        Some(seed),
    )?;

    let log = read_log_jsonl(log_path)?;
    let dataset = load_csv(train_csv)?;
    let (key, group) = select_config(split_by_config(&dataset)?, selector)?;
    let universe = EncodingUniverse::from_dataset(&group);
    let predictor = train_error_predictor(&log, &universe, &train_cfg)?;
    predictor.save(out_model)?;

    println!("config: {}", key.slug());
    println!(
        "trained on {} log entries ({} infinite-error entries dropped)",
        log.len() - predictor.sentinel_dropped,
        predictor.sentinel_dropped
    );
    println!("encoding width: {}", predictor.universe.width());
    println!("model: {}", out_model.display());

    manifest.write(&[out_model], &sibling_manifest_path(out_model))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_estimate(
    new_csv: &Path,
    error_model: &Path,
    log_path: &Path,
    train_csv: &Path,
    selector: Option<&str>,
    gbt: &GbtArgs,
    seed: u64,
    as_json: bool,
) -> Result<()> {
    let predictor = ErrorPredictor::load(error_model)?;
    let log = read_log_jsonl(log_path)?;
    let train_dataset = load_csv(train_csv)?;
    let (_, train_group) = select_config(split_by_config(&train_dataset)?, selector)?;
    let query = load_query_csv(new_csv)?;
    let train_cfg = gbt.to_train_config(seed);

    // One report per configuration present in the query set.
    let mut groups: BTreeMap<ConfigKey, Vec<QueryRecord>> = BTreeMap::new();
    for r in &query.records {
        groups.entry(r.config.clone()).or_default().push(r.clone());
    }
    let single = groups.len() == 1;
    let stem = file_stem(new_csv);

    let mut reports: Vec<ConfidenceReport> = Vec::new();
    for (key, records) in &groups {
        let label = if single {
            stem.clone()
        } else {
            format!("{stem}[{}]", key.slug())
        };
        let mut report =
            estimate_error_confidence(&label, records, &predictor, &log, &train_group)?;
        if records.iter().all(|r| r.thpt.is_some()) {
            report.actual_error = Some(actual_percent_error(&train_group, records, &train_cfg)?);
        }
        reports.push(report);
    }

    let aggregate = if reports.len() > 1 {
        let predicted: Vec<f64> = reports.iter().map(|r| r.predicted_error).collect();
        let actuals: Vec<f64> = reports.iter().filter_map(|r| r.actual_error).collect();
        Some(ConfidenceReport {
            dataset: format!("{stem} (aggregate)"),
            predicted_error: percentile(&predicted, 50.0)?,
            confidence: reports
                .iter()
                .map(|r| r.confidence)
                .fold(f64::INFINITY, f64::min),
            d_min: reports
                .iter()
                .map(|r| r.d_min)
                .fold(f64::NEG_INFINITY, f64::max),
            nearest_iteration: 0,
            actual_error: if actuals.is_empty() {
                None
            } else {
                Some(percentile(&actuals, 50.0)?)
            },
            n_records: query.records.len(),
        })
    } else {
        None
    };

    if as_json {
        let body = json!({
            "reports": reports,
            "aggregate": aggregate,
        });
        println!("{}", serde_json::to_string_pretty(&body)?);
    } else {
        let mut all = reports.clone();
        if let Some(agg) = &aggregate {
            all.push(agg.clone());
        }
        print!("{}", render_report_table(&all));
        for r in &reports {
            log::info!(
                "{}: d_min={:.6}, nearest logged iteration {}",
                r.dataset,
                r.d_min,
                r.nearest_iteration
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(out_csv: &Path, args: &SynthArgs) -> Result<()> {
    // Same normalization the loader applies, so the CSV round-trips.
    let norm = |s: &str| {
        let t = s.trim();
        if t.is_empty() {
            "na".to_string()
        } else {
            t.to_string()
        }
    };
    let spec = SynthSpec {
        ii_values: args.ii.clone(),
        oo_values: args.oo.clone(),
        bb_values: args.bb.clone(),
        alpha: args.alpha,
        beta: args.beta,
        gamma: args.gamma,
        delta: args.delta,
        noise_rel: args.noise,
        replicates: args.replicates,
        config: ConfigKey {
            acc: norm(&args.acc),
            acc_count: args.acc_count,
            back: norm(&args.back),
            cpu: norm(&args.cpu),
            cpu_count: args.cpu_count,
            dev: norm(&args.dev),
            mode: norm(&args.mode),
            model: norm(&args.model),
            prec: norm(&args.prec),
        },
    };
    let manifest = ManifestBuilder::new("synth", &[], &spec, Some(args.seed))?;

    let (dataset, truth) = synth_generate(&spec, args.seed)?;
    write_csv(&dataset, out_csv)?;
    let truth_path = out_csv.with_extension("truth.json");
    write_truth_json(&truth, &truth_path)?;

    println!(
        "{} rows over {} workloads -> {}",
        dataset.len(),
        truth.len(),
        out_csv.display()
    );
    println!("ground truth: {}", truth_path.display());
    manifest.write(&[out_csv, &truth_path], &sibling_manifest_path(out_csv))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

pub fn cmd_eval(
    input: &Path,
    test_fraction: f64,
    seed: u64,
    gbt: &GbtArgs,
    as_json: bool,
) -> Result<()> {
    let dataset = load_csv(input)?;
    let (train, test) = ala_core::data::train_test_split(&dataset, test_fraction, seed)?;
    let train_cfg = gbt.to_train_config(seed);
    let set = train_all_configs(&train, &train_cfg)?;

    let mut per_config: BTreeMap<ConfigKey, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut skipped = 0usize;
    for r in &test.records {
        match set.entries.get(&r.config) {
            Some(model) => {
                let p = predict_throughput(&model.database, &model.predictor, r.bb, r.ii, r.oo)?;
                let slot = per_config.entry(r.config.clone()).or_default();
                slot.0.push(p.thpt);
                slot.1.push(r.thpt);
            }
            None => skipped += 1,
        }
    }
    if per_config.is_empty() {
        bail!("no test record belongs to a trained configuration");
    }

    let mut rows = Vec::new();
    let mut all_errors: Vec<f64> = Vec::new();
    for (key, (pred, actual)) in &per_config {
        for (&p, &a) in pred.iter().zip(actual) {
            all_errors.push(100.0 * (p - a).abs() / a);
        }
        let med = ala_core::anneal::median_percent_error(pred, actual)?;
        rows.push((key.slug(), pred.len(), med));
    }
    let overall = percentile(&all_errors, 50.0)?;

    if as_json {
        let body = json!({
            "train_records": train.len(),
            "test_records": test.len(),
            "skipped_records": skipped,
            "overall_median_percent_error": overall,
            "per_config": rows
                .iter()
                .map(|(slug, n, med)| json!({
                    "config": slug,
                    "n": n,
                    "median_percent_error": med,
                }))
                .collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&body)?);
    } else {
        println!(
            "split: {} train / {} test (fraction {test_fraction}, seed {seed})",
            train.len(),
            test.len()
        );
        if skipped > 0 {
            println!("skipped: {skipped} test records without a trained configuration");
        }
        for (slug, n, med) in &rows {
            println!("{slug}: n={n} median percent error {med:.3}%");
        }
        println!("overall median percent error: {overall:.3}%");
    }
    Ok(())
}
