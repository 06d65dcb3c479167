//! Experiment orchestration: model training, unlearning sweeps, aggregation,
//! and figure data emission.
//!
//! Layout of an output directory:
//!
//! ```text
//! out/
//!   models/seed<k>/theta0.ckpt        initial model
//!                  theta_ideal.ckpt   retrained-without-forget model
//!                  models.cfg         manifest the pair was built from
//!                  train_log.txt      final training accuracies
//!   runs/<method>-<addon>-s<seed>/manifest.cfg      resolved config (re-runnable)
//!                                    metrics.csv     one row per epoch
//!                                    theta_unlearned.ckpt
//!                                    agree_prob.csv  mid-run agreement dump
//!                                    inner_products.csv
//!   aggregate.csv / aggregate.txt    mean ± std per (method, addon)
//!   figures/metrics_vs_epoch.csv     (x, series, mean, std)
//!           agree_prob_hist.csv
//!           agree_prob_regimes.csv
//! ```
//!
//! A completed run is skipped when its stored manifest matches byte for
//! byte, so interrupted sweeps resume where they stopped.

use rayon::prelude::*;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DatasetKind, ExperimentConfig};
use crate::data::{
    make_gaussian_blobs, make_rings, split_forget, DatasetSplit, Scenario, ScenarioConfig,
};
use crate::error::{Error, Result};
use crate::masks::AggSpec;
use crate::metrics::{
    accuracy, parse_report_csv_row, report_csv_row, MetricsReport, REPORT_CSV_HEADER,
};
use crate::nn::{grad, init_params, LabeledBatch, LossKind, ModelSpec};
use crate::optim::sgd_step;
use crate::params::ParamVector;
use crate::seeding::{derive_seed, streams};
use crate::stats::mean_std;
use crate::unlearn::{
    run_unlearning, AddOnKind, AddOnSpec, MethodName, UnlearnMethodSpec, UnlearnRunParams,
};

pub fn model_spec(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let spec = ModelSpec::new(
        cfg.model_input_dim,
        cfg.model_hidden.clone(),
        cfg.model_num_classes,
        cfg.model_activation,
    )?;
    let expected_dim = match cfg.dataset_kind {
        DatasetKind::Blobs => cfg.dataset_dim,
        DatasetKind::Rings => 2,
    };
    if spec.input_dim != expected_dim {
        return Err(Error::InvalidArgument(format!(
            "model.input_dim = {} does not match the dataset dimension {}",
            spec.input_dim, expected_dim
        )));
    }
    Ok(spec)
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<(LabeledBatch, LabeledBatch)> {
    match cfg.dataset_kind {
        DatasetKind::Blobs => make_gaussian_blobs(
            cfg.model_num_classes,
            cfg.dataset_train_per_class,
            cfg.dataset_test_per_class,
            cfg.dataset_dim,
            cfg.dataset_separation,
            cfg.dataset_seed,
        ),
        DatasetKind::Rings => {
            if cfg.model_num_classes != 2 {
                return Err(Error::InvalidArgument(
                    "the rings dataset has exactly 2 classes".into(),
                ));
            }
            make_rings(
                cfg.dataset_train_per_class,
                cfg.dataset_test_per_class,
                cfg.dataset_noise,
                cfg.dataset_seed,
            )
        }
    }
}

pub fn build_split(cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    let (train, test) = build_dataset(cfg)?;
    let scenario = ScenarioConfig {
        scenario: cfg.scenario_kind,
        fraction: cfg.scenario_fraction,
        target_class: match cfg.scenario_kind {
            Scenario::ClassFraction => Some(cfg.scenario_target_class),
            Scenario::RandomFraction => None,
        },
        seed: cfg.scenario_seed,
    };
    split_forget(&train, &test, &scenario)
}

/// Plain seeded SGD training of a fresh classifier on `data`.
pub fn train_classifier(
    model: &ModelSpec,
    data: &LabeledBatch,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ParamVector> {
    let mut theta = init_params(model, derive_seed(seed, streams::INIT));
    for epoch in 0..epochs {
        let shuffle = derive_seed(derive_seed(seed, streams::TRAIN_BATCHES), epoch as u64);
        for batch in crate::data::batches(data, batch_size, shuffle) {
            let g = grad(model, &theta, &batch, LossKind::CrossEntropy, None)?;
            theta = sgd_step(&theta, &g.scaled(-1.0), lr)?;
        }
        if !theta.is_finite() {
            return Err(Error::NonFinite {
                context: "training",
                detail: format!("diverged at epoch {epoch}"),
            });
        }
    }
    Ok(theta)
}

/// Trained parameters plus the accuracy on their own training data.
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub train_accuracy: f64,
}

/// Train the initial model on the full training set.
pub fn train_initial(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    seed: u64,
) -> Result<TrainOutcome> {
    let model = model_spec(cfg)?;
    let theta = train_classifier(
        &model,
        &split.train,
        cfg.train_epochs,
        cfg.train_lr,
        cfg.batch_size,
        seed,
    )?;
    let train_accuracy = accuracy(&model, &theta, &split.train)?;
    Ok(TrainOutcome {
        theta,
        train_accuracy,
    })
}

/// Train the ideal model on the retain set only, with the same epoch budget
/// and the same initialization seed policy as the initial model.
pub fn train_ideal(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    seed: u64,
) -> Result<TrainOutcome> {
    let model = model_spec(cfg)?;
    let theta = train_classifier(
        &model,
        &split.retain,
        cfg.train_epochs,
        cfg.train_lr,
        cfg.batch_size,
        seed,
    )?;
    let train_accuracy = accuracy(&model, &theta, &split.retain)?;
    Ok(TrainOutcome {
        theta,
        train_accuracy,
    })
}

fn models_manifest(cfg: &ExperimentConfig) -> String {
    // Everything that influences the (theta_0, theta_ideal) pair.
    let mut c = cfg.clone();
    c.run_method = None;
    c.run_addon = None;
    c.run_seed = None;
    c.sweep_methods = vec![MethodName::Ft];
    c.sweep_addons = vec![AddOnKind::None];
    c.sweep_seeds = vec![0];
    c.output_dir = String::new();
    c.sweep_workers = 0;
    c.to_manifest_string()
}

/// Train or reuse the per-seed (theta_0, theta_ideal) checkpoint pair.
pub fn ensure_models(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    seed: u64,
    out_dir: &Path,
) -> Result<(ParamVector, ParamVector)> {
    let model = model_spec(cfg)?;
    let dir = out_dir.join("models").join(format!("seed{seed}"));
    let path0 = dir.join("theta0.ckpt");
    let path_ideal = dir.join("theta_ideal.ckpt");
    let manifest_path = dir.join("models.cfg");
    let manifest = models_manifest(cfg);

    if path0.exists() && path_ideal.exists() {
        if let Ok(stored) = std::fs::read_to_string(&manifest_path) {
            if stored == manifest {
                let (_, theta0) = load_checkpoint(&path0)?;
                let (_, ideal) = load_checkpoint(&path_ideal)?;
                return Ok((theta0, ideal));
            }
        }
    }

    std::fs::create_dir_all(&dir)?;
    let initial = train_initial(cfg, split, seed)?;
    let ideal = train_ideal(cfg, split, seed)?;
    save_checkpoint(&path0, &model, &initial.theta)?;
    save_checkpoint(&path_ideal, &model, &ideal.theta)?;
    std::fs::write(
        dir.join("train_log.txt"),
        format!(
            "initial.final_train_accuracy = {}\nideal.final_retain_accuracy = {}\n",
            initial.train_accuracy, ideal.train_accuracy
        ),
    )?;
    std::fs::write(&manifest_path, manifest)?;
    Ok((initial.theta, ideal.theta))
}

/// One completed unlearning run.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub method: MethodName,
    pub addon: AddOnKind,
    pub seed: u64,
    pub dir: PathBuf,
    pub reports: Vec<MetricsReport>,
    /// True when the run was found complete on disk and skipped.
    pub reused: bool,
}

pub fn run_id(method: MethodName, addon: AddOnKind, seed: u64) -> String {
    format!("{method}-{addon}-s{seed}")
}

pub fn addon_spec(cfg: &ExperimentConfig, kind: AddOnKind) -> Result<AddOnSpec> {
    let agg = match cfg.addon_agg {
        crate::masks::AggKind::Linear => AggSpec::linear(cfg.addon_alpha, cfg.addon_beta)?,
        crate::masks::AggKind::AbsMin => AggSpec::abs_min(),
    };
    let p = (kind == AddOnKind::Prob).then_some(cfg.addon_p);
    Ok(AddOnSpec::new(kind, p, agg)?.with_provider(cfg.addon_variance_provider))
}

pub fn method_spec(
    cfg: &ExperimentConfig,
    name: MethodName,
    theta0: &ParamVector,
) -> Result<UnlearnMethodSpec> {
    UnlearnMethodSpec::for_method(name, cfg.addon_gamma, Some(theta0.clone()))
}

fn metrics_csv(records: &[MetricsReport], run_id: &str, seed: u64, method: &str, addon: &str) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&report_csv_row(run_id, seed, method, addon, r));
        out.push('\n');
    }
    out
}

fn parse_metrics_csv(text: &str, path: &str) -> Result<Vec<MetricsReport>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == REPORT_CSV_HEADER => {}
        _ => {
            return Err(Error::Format {
                path: path.into(),
                message: "missing metrics header".into(),
            })
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_report_csv_row(l).map(|(_, _, _, _, r)| r))
        .collect()
}

/// Execute one (method, addon, seed) run and persist its outputs.
/// Skips the work when an identical completed run already sits in `dir`.
#[allow(clippy::too_many_arguments)]
pub fn execute_run(
    cfg: &ExperimentConfig,
    split: &DatasetSplit,
    theta0: &ParamVector,
    theta_ideal: &ParamVector,
    method_name: MethodName,
    addon_kind: AddOnKind,
    seed: u64,
    out_dir: &Path,
) -> Result<RunRecord> {
    let model = model_spec(cfg)?;
    let id = run_id(method_name, addon_kind, seed);
    let dir = out_dir.join("runs").join(&id);

    // The manifest pins the run triple; sweep bookkeeping (lists, workers,
    // output dir) is normalized so the same run is recognized regardless of
    // which sweep produced it.
    let mut pinned = cfg.clone();
    pinned.run_method = Some(method_name);
    pinned.run_addon = Some(addon_kind);
    pinned.run_seed = Some(seed);
    pinned.sweep_methods = vec![method_name];
    pinned.sweep_addons = vec![addon_kind];
    pinned.sweep_seeds = vec![seed];
    pinned.sweep_workers = 0;
    pinned.output_dir = ExperimentConfig::default().output_dir;
    let manifest = pinned.to_manifest_string();

    let manifest_path = dir.join("manifest.cfg");
    let metrics_path = dir.join("metrics.csv");
    if manifest_path.exists() && metrics_path.exists() {
        let stored = std::fs::read_to_string(&manifest_path)?;
        if stored == manifest {
            if let Ok(reports) = parse_metrics_csv(
                &std::fs::read_to_string(&metrics_path)?,
                &metrics_path.display().to_string(),
            ) {
                if reports.len() == cfg.unlearn_epochs {
                    return Ok(RunRecord {
                        run_id: id,
                        method: method_name,
                        addon: addon_kind,
                        seed,
                        dir,
                        reports,
                        reused: true,
                    });
                }
            }
        }
    }

    std::fs::create_dir_all(&dir)?;
    std::fs::write(&manifest_path, &manifest)?;

    let method = method_spec(cfg, method_name, theta0)?;
    let addon = addon_spec(cfg, addon_kind)?;
    addon.validate_for(&method)?;
    let params = UnlearnRunParams {
        epochs: cfg.unlearn_epochs,
        eta: cfg.unlearn_lr,
        eps: cfg.unlearn_eps,
        batch_size: cfg.batch_size,
        seed,
    };
    let outcome = run_unlearning(&model, theta0, theta_ideal, &method, &addon, split, &params)?;

    std::fs::write(
        &metrics_path,
        metrics_csv(
            &outcome.reports,
            &id,
            seed,
            &method_name.to_string(),
            &addon_kind.to_string(),
        ),
    )?;
    save_checkpoint(&dir.join("theta_unlearned.ckpt"), &model, &outcome.theta_final)?;
    if let Some(weights) = &outcome.agree_snapshot {
        let mask = crate::masks::MaskOrFocus {
            weights: weights.clone(),
            kind: crate::masks::MaskKind::Focus,
        };
        std::fs::write(dir.join("agree_prob.csv"), crate::masks::mask_to_csv(&mask))?;
    }
    let mut ip = String::from("step,g_u_dot_g_c\n");
    for (i, v) in outcome.inner_products.iter().enumerate() {
        ip.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(dir.join("inner_products.csv"), ip)?;

    Ok(RunRecord {
        run_id: id,
        method: method_name,
        addon: addon_kind,
        seed,
        dir,
        reports: outcome.reports,
        reused: false,
    })
}

/// Sweep result: completed runs plus failures (the sweep keeps going when a
/// single run fails).
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<(String, String)>,
}

/// Run every (method, addon, seed) triple the config asks for, then refresh
/// the aggregate table.
pub fn run_sweep(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SweepOutcome> {
    cfg.validate()?;
    let split = build_split(cfg)?;
    let runs = cfg.effective_runs();

    // Validate method/add-on compatibility up front so a bad sweep fails
    // before any training happens.
    for &(m, a, _) in &runs {
        let method = UnlearnMethodSpec::for_method(m, cfg.addon_gamma, Some(ParamVector::zeros(1)))?;
        addon_spec(cfg, a)?.validate_for(&method)?;
    }

    let mut seeds: Vec<u64> = runs.iter().map(|&(_, _, s)| s).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let mut models: BTreeMap<u64, (ParamVector, ParamVector)> = BTreeMap::new();
    for &seed in &seeds {
        models.insert(seed, ensure_models(cfg, &split, seed, out_dir)?);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.sweep_workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<(String, Result<RunRecord>)> = pool.install(|| {
        runs.par_iter()
            .map(|&(m, a, s)| {
                let id = run_id(m, a, s);
                let (theta0, ideal) = &models[&s];
                let record = execute_run(cfg, &split, theta0, ideal, m, a, s, out_dir);
                (id, record)
            })
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(r) => records.push(r),
            Err(e) => {
                let dir = out_dir.join("runs").join(&id);
                let _ = std::fs::create_dir_all(&dir);
                let _ = std::fs::write(dir.join("error.txt"), e.to_string());
                failures.push((id, e.to_string()));
            }
        }
    }

    if !records.is_empty() {
        let rows = aggregate_from_dir(out_dir)?;
        std::fs::write(out_dir.join("aggregate.csv"), aggregate_csv(&rows))?;
        std::fs::write(out_dir.join("aggregate.txt"), aggregate_text(&rows))?;
    }
    Ok(SweepOutcome { records, failures })
}

/// Mean ± std of the final-epoch metrics over seeds for one (method, addon).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: String,
    pub addon: String,
    pub epoch: usize,
    pub runs: usize,
    pub mia_entropy: (f64, f64),
    pub mia_mix_entropy: (f64, f64),
    pub rua: (f64, f64),
    pub rua_abs_mean: f64,
    pub ta: (f64, f64),
    pub ra: (f64, f64),
    pub ua: (f64, f64),
    pub fid: (f64, f64),
    pub rte: (f64, f64),
    /// Mean RTE divided by the mean RTE of the same method with addon=none.
    pub rte_ratio_vs_none: Option<f64>,
}

/// (method, addon, seed, per-epoch reports) parsed from one run directory.
pub type LoadedRun = (String, String, u64, Vec<MetricsReport>);

/// Parse every `runs/*/metrics.csv` under `out_dir`.
pub fn load_run_reports(out_dir: &Path) -> Result<Vec<LoadedRun>> {
    let runs_dir = out_dir.join("runs");
    let mut found = Vec::new();
    if !runs_dir.exists() {
        return Ok(found);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for dir in dirs {
        let metrics_path = dir.join("metrics.csv");
        if !metrics_path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&metrics_path)?;
        let mut method = String::new();
        let mut addon = String::new();
        let mut seed = 0;
        let mut reports = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let (_, s, m, a, r) = parse_report_csv_row(line)?;
            method = m;
            addon = a;
            seed = s;
            reports.push(r);
        }
        if !reports.is_empty() {
            found.push((method, addon, seed, reports));
        }
    }
    Ok(found)
}

/// Recompute the aggregate table from the per-run CSV files on disk.
pub fn aggregate_from_dir(out_dir: &Path) -> Result<Vec<AggregateRow>> {
    let runs = load_run_reports(out_dir)?;
    if runs.is_empty() {
        return Err(Error::Empty("run directory"));
    }
    let mut groups: BTreeMap<(String, String), Vec<&MetricsReport>> = BTreeMap::new();
    for (method, addon, _seed, reports) in &runs {
        let last = reports.last().expect("nonempty reports");
        groups
            .entry((method.clone(), addon.clone()))
            .or_default()
            .push(last);
    }
    let mut none_rte: BTreeMap<String, f64> = BTreeMap::new();
    for ((method, addon), reports) in &groups {
        if addon == "none" {
            let (mean, _) = mean_std(&reports.iter().map(|r| r.rte_seconds).collect::<Vec<_>>());
            none_rte.insert(method.clone(), mean);
        }
    }
    let mut rows = Vec::new();
    for ((method, addon), reports) in groups {
        let collect = |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> {
            reports.iter().map(|r| f(r)).collect()
        };
        let rua_values = collect(&|r| r.rua);
        let rte = mean_std(&collect(&|r| r.rte_seconds));
        let rte_ratio_vs_none = none_rte
            .get(&method)
            .filter(|m| **m > 0.0)
            .map(|m| rte.0 / m);
        rows.push(AggregateRow {
            epoch: reports[0].epoch,
            runs: reports.len(),
            mia_entropy: mean_std(&collect(&|r| r.mia.entropy)),
            mia_mix_entropy: mean_std(&collect(&|r| r.mia.mix_entropy)),
            rua: mean_std(&rua_values),
            rua_abs_mean: rua_values.iter().map(|v| v.abs()).sum::<f64>()
                / rua_values.len() as f64,
            ta: mean_std(&collect(&|r| r.ta)),
            ra: mean_std(&collect(&|r| r.ra)),
            ua: mean_std(&collect(&|r| r.ua)),
            fid: mean_std(&collect(&|r| r.fid)),
            rte,
            rte_ratio_vs_none,
            method,
            addon,
        });
    }
    Ok(rows)
}

pub const AGGREGATE_CSV_HEADER: &str = "method,addon,epoch,runs,\
mia_entropy_mean,mia_entropy_std,mia_mix_entropy_mean,mia_mix_entropy_std,\
rua_mean,rua_std,rua_abs_mean,ta_mean,ta_std,ra_mean,ra_std,\
ua_mean,ua_std,fid_mean,fid_std,rte_mean,rte_std,rte_ratio_vs_none";

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.addon,
            r.epoch,
            r.runs,
            r.mia_entropy.0,
            r.mia_entropy.1,
            r.mia_mix_entropy.0,
            r.mia_mix_entropy.1,
            r.rua.0,
            r.rua.1,
            r.rua_abs_mean,
            r.ta.0,
            r.ta.1,
            r.ra.0,
            r.ra.1,
            r.ua.0,
            r.ua.1,
            r.fid.0,
            r.fid.1,
            r.rte.0,
            r.rte.1,
            r.rte_ratio_vs_none
                .map(|v| v.to_string())
                .unwrap_or_default(),
        ));
    }
    out
}

/// Human-readable aligned table, one row per (method, addon).
pub fn aggregate_text(rows: &[AggregateRow]) -> String {
    let fmt = |(m, s): (f64, f64)| format!("{m:.2} ± {s:.2}");
    let mut table: Vec<[String; 8]> = vec![[
        "method-addon".into(),
        "MIA entropy".into(),
        "rUA".into(),
        "|rUA|".into(),
        "TA".into(),
        "RA".into(),
        "UA".into(),
        "FID".into(),
    ]];
    for r in rows {
        table.push([
            format!("{}-{}", r.method, r.addon),
            fmt(r.mia_entropy),
            fmt(r.rua),
            format!("{:.2}", r.rua_abs_mean),
            fmt(r.ta),
            fmt(r.ra),
            fmt(r.ua),
            fmt(r.fid),
        ]);
    }
    let mut widths = [0usize; 8];
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}", w = w))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Histogram regime masses of one agreement-probability dump.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    pub series: String,
    /// Exact per-run bin total (the number of parameters); identical across
    /// the seeds of one series.
    pub total: f64,
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Emit the figure data files; returns the regime summaries for logging.
pub fn emit_figures(out_dir: &Path) -> Result<Vec<RegimeSummary>> {
    let runs = load_run_reports(out_dir)?;
    if runs.is_empty() {
        return Err(Error::Empty("run directory"));
    }
    let fig_dir = out_dir.join("figures");
    std::fs::create_dir_all(&fig_dir)?;

    // Metric curves: mean ± std across seeds per (method, addon, metric, epoch).
    type Getter = fn(&MetricsReport) -> f64;
    let metric_names: [(&str, Getter); 7] = [
        ("ua", |r| r.ua),
        ("ra", |r| r.ra),
        ("ta", |r| r.ta),
        ("rua", |r| r.rua),
        ("fid", |r| r.fid),
        ("mia_entropy", |r| r.mia.entropy),
        ("mia_mix_entropy", |r| r.mia.mix_entropy),
    ];
    let mut by_group: BTreeMap<(String, String), Vec<&Vec<MetricsReport>>> = BTreeMap::new();
    for (method, addon, _seed, reports) in &runs {
        by_group
            .entry((method.clone(), addon.clone()))
            .or_default()
            .push(reports);
    }
    let mut curves = String::from("x,series,mean,std\n");
    for ((method, addon), group) in &by_group {
        let epochs = group.iter().map(|r| r.len()).min().unwrap_or(0);
        for (name, getter) in &metric_names {
            for e in 0..epochs {
                let values: Vec<f64> = group.iter().map(|r| getter(&r[e])).collect();
                let (mean, std) = mean_std(&values);
                curves.push_str(&format!(
                    "{},{method}-{addon}:{name},{mean},{std}\n",
                    e + 1
                ));
            }
        }
    }
    std::fs::write(fig_dir.join("metrics_vs_epoch.csv"), curves)?;

    // Agreement-probability histogram: bins over [0, 1], counts averaged
    // across seeds. Bin counts of one run always sum to the parameter count.
    let mut hist_groups: BTreeMap<String, Vec<[f64; HISTOGRAM_BINS]>> = BTreeMap::new();
    let mut regime_groups: BTreeMap<String, Vec<[f64; 3]>> = BTreeMap::new();
    let runs_dir = out_dir.join("runs");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    dirs.sort();
    for dir in dirs {
        let dump = dir.join("agree_prob.csv");
        let manifest = dir.join("manifest.cfg");
        if !dump.exists() || !manifest.exists() {
            continue;
        }
        let pinned = ExperimentConfig::from_file(&manifest)?;
        let series = match (pinned.run_method, pinned.run_addon) {
            (Some(m), Some(a)) => format!("{m}-{a}"),
            _ => continue,
        };
        let mut bins = [0.0; HISTOGRAM_BINS];
        let mut regimes = [0.0; 3];
        for line in std::fs::read_to_string(&dump)?.lines() {
            let Some((_, w)) = line.split_once(',') else {
                continue;
            };
            let w: f64 = w.parse().map_err(|_| Error::Format {
                path: dump.display().to_string(),
                message: format!("bad weight `{w}`"),
            })?;
            let bin = ((w * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
            bins[bin] += 1.0;
            if w < 0.35 {
                regimes[0] += 1.0;
            } else if w <= 0.65 {
                regimes[1] += 1.0;
            } else {
                regimes[2] += 1.0;
            }
        }
        hist_groups.entry(series.clone()).or_default().push(bins);
        regime_groups.entry(series).or_default().push(regimes);
    }

    let mut hist = String::from("x,series,mean,std\n");
    for (series, all_bins) in &hist_groups {
        for b in 0..HISTOGRAM_BINS {
            let values: Vec<f64> = all_bins.iter().map(|bins| bins[b]).collect();
            let (mean, std) = mean_std(&values);
            let lower = b as f64 / HISTOGRAM_BINS as f64;
            hist.push_str(&format!("{lower},{series},{mean},{std}\n"));
        }
    }
    std::fs::write(fig_dir.join("agree_prob_hist.csv"), hist)?;

    let mut regimes_csv = String::from("x,series,mean,std\n");
    let mut summaries = Vec::new();
    for (series, all) in &regime_groups {
        let mut means = [0.0; 3];
        for (i, label) in ["low", "mid", "high"].iter().enumerate() {
            let values: Vec<f64> = all.iter().map(|r| r[i]).collect();
            let (mean, std) = mean_std(&values);
            means[i] = mean;
            regimes_csv.push_str(&format!("{label},{series},{mean},{std}\n"));
        }
        // Counts are integer-valued, so each run's regime sum is exact.
        let per_run_totals: Vec<f64> = all.iter().map(|r| r[0] + r[1] + r[2]).collect();
        let total = per_run_totals[0];
        if per_run_totals.iter().any(|t| *t != total) {
            return Err(Error::Format {
                path: "agree_prob dumps".into(),
                message: format!("{series}: inconsistent parameter counts {per_run_totals:?}"),
            });
        }
        summaries.push(RegimeSummary {
            series: series.clone(),
            total,
            low: means[0],
            mid: means[1],
            high: means[2],
        });
    }
    std::fs::write(fig_dir.join("agree_prob_regimes.csv"), regimes_csv)?;
    Ok(summaries)
}

/// The metrics CSV minus its wall-clock column, for determinism comparisons.
pub fn csv_without_rte(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        match line.rfind(',') {
            Some(pos) => out.push_str(&line[..pos]),
            None => out.push_str(line),
        }
        out.push('\n');
    }
    out
}
