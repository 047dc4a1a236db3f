//! End-to-end runs: configuration, ensemble construction under an optional
//! degradation, explanation archives, metric reports and CSV tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{read_archive, write_archive, ExplanationArchive};
use crate::attribution::{explain, AttributionConfig, Method};
use crate::container;
use crate::crosstrain::{
    accuracy_spread, assemble_separation_sets, explain_all, model_id, train_ensemble,
    EnsembleConfig, ExplanationTable, FoldEnsemble, SeparationSets,
};
use crate::datasets::{gen_shapes, load_dataset, load_idx, LabeledDataset};
use crate::degradation::{
    invert_labels, limit_data, randomize_weights, DegradationKind, DegradationSpec,
};
use crate::distance::DistanceKind;
use crate::error::{Error, Result};
use crate::metrics::{
    fidelity_mu, histogram, mege, reco, stability_savg, FidelityConfig, StabilityConfig,
    HISTOGRAM_BINS,
};
use crate::nn::serialize::{load_model, save_model};
use crate::nn::{accuracy, Architecture, Model, TrainConfig, TrainReport};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Shapes {
        n: usize,
        size: usize,
        classes: usize,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
    },
    /// A dataset container written by `gen-data`.
    File { path: PathBuf },
}

impl DatasetSpec {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DatasetSpec::Shapes { n, size, classes, seed } => gen_shapes(*n, *size, *classes, *seed),
            DatasetSpec::Idx { images, labels, limit } => load_idx(images, labels, *limit),
            DatasetSpec::File { path } => load_dataset(path),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DatasetSpec::Shapes { n, size, classes, seed } => {
                format!("shapes(n={n},size={size},classes={classes},seed={seed})")
            }
            DatasetSpec::Idx { images, limit, .. } => {
                format!("idx({},limit={limit})", images.display())
            }
            DatasetSpec::File { path } => format!("file({})", path.display()),
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            DatasetSpec::Shapes { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArchSpec {
    SmallCnn { channels: Vec<usize> },
    Mlp { hidden: Vec<usize> },
    Linear,
}

impl ArchSpec {
    pub fn build(&self, input_shape: [usize; 3], classes: usize) -> Architecture {
        match self {
            ArchSpec::SmallCnn { channels } => Architecture::small_cnn(input_shape, channels, classes),
            ArchSpec::Mlp { hidden } => {
                Architecture::mlp(&input_shape, hidden, crate::nn::Layer::Relu, classes)
            }
            ArchSpec::Linear => Architecture::linear(&input_shape, classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub method: Method,
    pub distance: DistanceKind,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Explain only the first `explain_limit` samples of the training portion.
    pub explain_limit: Option<usize>,
    /// Test samples per model used for μF and S_avg; 0 skips both.
    pub metric_samples: usize,
    pub dataset: DatasetSpec,
    pub arch: ArchSpec,
    pub training: TrainConfig,
    pub ensemble: EnsembleConfig,
    pub attribution: AttributionConfig,
    pub fidelity: FidelityConfig,
    pub stability: StabilityConfig,
    pub degradation: Option<DegradationSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            output_dir: PathBuf::from("xeval-out"),
            method: Method::Saliency,
            distance: DistanceKind::SpearmanAbs,
            test_fraction: 0.2,
            split_seed: 0,
            explain_limit: None,
            metric_samples: 8,
            dataset: DatasetSpec::Shapes {
                n: 4000,
                size: 16,
                classes: 4,
                seed: 0,
            },
            arch: ArchSpec::SmallCnn { channels: vec![8, 16] },
            training: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            attribution: AttributionConfig::default(),
            fidelity: FidelityConfig::default(),
            stability: StabilityConfig::default(),
            degradation: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(container::read_file(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, self.to_toml()?.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            )));
        }
        if let Some(spec) = &self.degradation {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Seeded stratified train/test split of the configured dataset.
pub fn prepare_data(cfg: &RunConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let full = cfg.dataset.load()?;
    let (train, test) = full.split_stratified(1.0 - cfg.test_fraction, cfg.split_seed)?;
    if test.is_empty() {
        return Err(Error::Config("the test split is empty".into()));
    }
    Ok(PreparedData { train, test })
}

/// A trained (and possibly degraded) ensemble plus the dataset D it was
/// cross-trained on, carrying clean labels.
#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub ensemble: FoldEnsemble,
    pub data: LabeledDataset,
    pub test: LabeledDataset,
    pub corrupted_labels: Option<usize>,
}

fn arch_for(cfg: &RunConfig, data: &LabeledDataset) -> Architecture {
    cfg.arch.build(data.sample_shape(), data.classes())
}

/// Applies the data-side degradation, if any, returning (clean D, training D).
fn degraded_data(
    cfg: &RunConfig,
    train: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset, Option<usize>)> {
    match &cfg.degradation {
        Some(spec) if spec.kind == DegradationKind::LimitData => {
            let d = limit_data(train, spec)?;
            Ok((d.clone(), d, None))
        }
        Some(spec) if spec.kind == DegradationKind::InvertLabels => {
            let inv = invert_labels(train, spec)?;
            let count = inv.corrupted.iter().filter(|&&c| c).count();
            Ok((train.clone(), inv.dataset, Some(count)))
        }
        _ => Ok((train.clone(), train.clone(), None)),
    }
}

fn perturb_models(cfg: &RunConfig, models: &mut [Model]) -> Result<()> {
    if let Some(spec) = cfg.degradation.as_ref().filter(|s| s.kind == DegradationKind::RandomizeWeights) {
        for (i, model) in models.iter_mut().enumerate() {
            let fold_spec = DegradationSpec {
                seed: derive_seed(spec.seed, &[i as u64]),
                ..spec.clone()
            };
            *model = randomize_weights(model, &fold_spec)?;
        }
    }
    Ok(())
}

pub fn build_ensemble(cfg: &RunConfig, prepared: &PreparedData) -> Result<EnsembleRun> {
    let (clean, training, corrupted_labels) = degraded_data(cfg, &prepared.train)?;
    let ens_cfg = EnsembleConfig {
        // Degraded accuracy varies by design.
        check_spread: cfg.ensemble.check_spread && cfg.degradation.is_none(),
        ..cfg.ensemble.clone()
    };
    let mut ensemble = train_ensemble(
        &training,
        &prepared.test,
        &arch_for(cfg, &training),
        &ens_cfg,
        &cfg.training,
    )?;
    if cfg
        .degradation
        .as_ref()
        .is_some_and(|s| s.kind == DegradationKind::RandomizeWeights)
    {
        perturb_models(cfg, &mut ensemble.models)?;
        ensemble.accuracies = ensemble
            .models
            .iter()
            .map(|m| accuracy(m, &prepared.test))
            .collect::<Result<_>>()?;
        ensemble.spread = accuracy_spread(&ensemble.accuracies);
    }
    Ok(EnsembleRun {
        ensemble,
        data: clean,
        test: prepared.test.clone(),
        corrupted_labels,
    })
}

fn explained_indices(cfg: &RunConfig, n: usize) -> Vec<usize> {
    (0..cfg.explain_limit.map_or(n, |l| l.min(n))).collect()
}

/// Explanations of every ensemble model on the explained part of D.
pub fn explain_run(cfg: &RunConfig, run: &EnsembleRun, method: Method) -> Result<ExplanationTable> {
    let idx = explained_indices(cfg, run.data.len());
    let data = if idx.len() == run.data.len() {
        run.data.clone()
    } else {
        run.data.subset(&idx)
    };
    explain_all(&run.ensemble.models, &data, method, &cfg.attribution)
}

pub fn separation_sets(
    cfg: &RunConfig,
    run: &EnsembleRun,
    table: &ExplanationTable,
    kind: DistanceKind,
) -> Result<SeparationSets> {
    let block_of = run.ensemble.block_of(run.data.len())?;
    let idx = explained_indices(cfg, run.data.len());
    let labels: Vec<usize> = idx.iter().map(|&i| run.data.labels()[i]).collect();
    let ids: Vec<String> = idx.iter().map(|&i| run.data.sample_ids()[i].clone()).collect();
    let blocks: Vec<usize> = idx.iter().map(|&i| block_of[i]).collect();
    if table.maps.iter().any(|row| row.len() != idx.len()) {
        return Err(Error::Shape(format!(
            "explanation table does not cover the {} explained samples",
            idx.len()
        )));
    }
    assemble_separation_sets(&blocks, &labels, &ids, &table.predictions(), &table.values(), kind)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSeeds {
    pub dataset: Option<u64>,
    pub split: u64,
    pub partition: u64,
    pub training: u64,
    pub model_init: Vec<u64>,
    pub model_train: Vec<u64>,
    pub attribution: u64,
    pub fidelity: u64,
    pub stability: u64,
    pub degradation: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    /// Bins are uniform over `[0, upper]`.
    pub upper: f64,
    pub s_equal_bins: Vec<usize>,
    pub s_diff_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub arch: String,
    pub method: Method,
    pub distance_kind: String,
    pub k: usize,
    pub seeds: ReportSeeds,
    pub accuracies: Vec<f64>,
    pub accuracy_spread: f64,
    pub degradation: Option<DegradationSpec>,
    pub corrupted_labels: Option<usize>,
    /// `None` when S= or S≠ is empty.
    pub reco: Option<f64>,
    pub reco_auc: Option<f64>,
    pub best_gamma: Option<f64>,
    pub mege: Option<f64>,
    pub mu_f_mean: Option<f64>,
    pub s_avg_mean: Option<f64>,
    pub s_equal_count: usize,
    pub s_diff_count: usize,
    pub skipped_pairs: usize,
    pub skipped_degenerate: usize,
    pub histograms: Histograms,
    pub config: RunConfig,
}

impl MetricReport {
    pub fn degradation_label(&self) -> (String, f64) {
        match &self.degradation {
            Some(spec) => (spec.kind.name().to_string(), spec.level),
            None => ("none".to_string(), 0.0),
        }
    }

    pub fn file_name(&self) -> String {
        let (kind, level) = self.degradation_label();
        format!("metrics-{}-{}-{kind}-{level}.json", self.method.code(), self.distance_kind)
    }
}

fn ok_or_warn<T>(what: &str, r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::UndefinedMetric(_) | Error::Degenerate(_))) => {
            log::warn!("{what}: {e}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean μF and S_avg over the first `metric_samples` test samples under
/// every model; degenerate cases are skipped.
fn baseline_metrics(cfg: &RunConfig, run: &EnsembleRun, method: Method) -> Result<(Option<f64>, Option<f64>)> {
    let samples = cfg.metric_samples.min(run.test.len());
    if samples == 0 {
        return Ok((None, None));
    }
    let jobs: Vec<(usize, usize)> = (0..run.ensemble.models.len())
        .flat_map(|m| (0..samples).map(move |s| (m, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(m, s)| {
            let model = &run.ensemble.models[m];
            let x = run.test.image(s);
            let attr = AttributionConfig {
                rng_seed: derive_seed(cfg.attribution.rng_seed, &[0x7e57, s as u64]),
                ..cfg.attribution.clone()
            };
            let phi = explain(method, model, &x, &attr)?;
            let fid = FidelityConfig {
                seed: derive_seed(cfg.fidelity.seed, &[m as u64, s as u64]),
                ..cfg.fidelity.clone()
            };
            let stab = StabilityConfig {
                seed: derive_seed(cfg.stability.seed, &[m as u64, s as u64]),
                ..cfg.stability.clone()
            };
            let mu = ok_or_warn("fidelity", fidelity_mu(model, &x, &phi, &fid))?;
            let sa = ok_or_warn("stability", stability_savg(model, &x, method, &attr, &stab))?;
            Ok((mu, sa.map(|s| s.s_avg)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mus: Vec<f64> = results.iter().filter_map(|r| r.0).collect();
    let savgs: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
    Ok((mean(&mus), mean(&savgs)))
}

pub fn evaluate(
    cfg: &RunConfig,
    run: &EnsembleRun,
    table: &ExplanationTable,
    kind: DistanceKind,
) -> Result<MetricReport> {
    let sets = separation_sets(cfg, run, table, kind)?;
    let reco_result = ok_or_warn("ReCo", reco(&sets))?;
    let mege_result = ok_or_warn("MeGe", mege(&sets))?;
    let (mu_f_mean, s_avg_mean) = baseline_metrics(cfg, run, table.method)?;
    let upper = sets
        .s_equal
        .iter()
        .chain(&sets.s_diff)
        .cloned()
        .fold(0.0, f64::max);
    let ens = &run.ensemble;
    Ok(MetricReport {
        dataset: cfg.dataset.describe(),
        arch: ens.models[0].architecture().id.clone(),
        method: table.method,
        distance_kind: kind.name().to_string(),
        k: ens.k,
        seeds: ReportSeeds {
            dataset: cfg.dataset.seed(),
            split: cfg.split_seed,
            partition: cfg.ensemble.partition_seed,
            training: cfg.training.seed,
            model_init: ens.init_seeds.clone(),
            model_train: ens.train_seeds.clone(),
            attribution: cfg.attribution.rng_seed,
            fidelity: cfg.fidelity.seed,
            stability: cfg.stability.seed,
            degradation: cfg.degradation.as_ref().map(|d| d.seed),
        },
        accuracies: ens.accuracies.clone(),
        accuracy_spread: ens.spread,
        degradation: cfg.degradation.clone(),
        corrupted_labels: run.corrupted_labels,
        reco: reco_result.as_ref().map(|r| r.reco),
        reco_auc: reco_result.as_ref().map(|r| r.reco_auc),
        best_gamma: reco_result.as_ref().map(|r| r.best_threshold),
        mege: mege_result.map(|m| m.mege),
        mu_f_mean,
        s_avg_mean,
        s_equal_count: sets.s_equal.len(),
        s_diff_count: sets.s_diff.len(),
        skipped_pairs: sets.skipped_pairs(),
        skipped_degenerate: sets.skipped_degenerate,
        histograms: Histograms {
            upper,
            s_equal_bins: histogram(&sets.s_equal, upper, HISTOGRAM_BINS),
            s_diff_bins: histogram(&sets.s_diff, upper, HISTOGRAM_BINS),
        },
        config: cfg.clone(),
    })
}

/// Trains, explains and evaluates entirely in memory.
pub fn run_in_memory(cfg: &RunConfig) -> Result<MetricReport> {
    let prepared = prepare_data(cfg)?;
    let run = build_ensemble(cfg, &prepared)?;
    let table = explain_run(cfg, &run, cfg.method)?;
    evaluate(cfg, &run, &table, cfg.distance)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub config: RunConfig,
    pub dataset: String,
    /// Relative to the manifest's directory.
    pub model_files: Vec<String>,
    pub blocks: Vec<Vec<usize>>,
    pub accuracies: Vec<f64>,
    pub accuracy_spread: f64,
    pub spread_violation: bool,
    pub init_seeds: Vec<u64>,
    pub train_seeds: Vec<u64>,
    pub reports: Vec<TrainReport>,
    pub corrupted_labels: Option<usize>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn ensemble_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("ensemble")
}

pub fn archive_path(cfg: &RunConfig, method: Method, fold: usize) -> PathBuf {
    cfg.output_dir
        .join("explanations")
        .join(method.code())
        .join(format!("{}.xta", model_id(fold)))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    container::write_file(path, text.as_bytes())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&container::read_file(path)?).map_err(|e| Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

/// Writes the fold models and the manifest under `dir`.
pub fn save_ensemble(cfg: &RunConfig, run: &EnsembleRun, dir: &Path) -> Result<PathBuf> {
    let ens = &run.ensemble;
    let mut files = Vec::with_capacity(ens.k);
    for (i, model) in ens.models.iter().enumerate() {
        let name = format!("{}.xtm", model_id(i));
        let provenance = serde_json::json!({
            "fold": i,
            "held_out_block": i,
            "test_accuracy": ens.accuracies[i],
            "train": ens.reports[i],
            "degradation": cfg.degradation,
        });
        save_model(model, provenance, &dir.join(&name))?;
        files.push(name);
    }
    let manifest = EnsembleManifest {
        config: cfg.clone(),
        dataset: cfg.dataset.describe(),
        model_files: files,
        blocks: ens.blocks.clone(),
        accuracies: ens.accuracies.clone(),
        accuracy_spread: ens.spread,
        spread_violation: ens.spread_violation,
        init_seeds: ens.init_seeds.clone(),
        train_seeds: ens.train_seeds.clone(),
        reports: ens.reports.clone(),
        corrupted_labels: run.corrupted_labels,
    };
    let path = dir.join(MANIFEST_FILE);
    write_json(&manifest, &path)?;
    Ok(path)
}

/// Reloads an ensemble written by [`save_ensemble`], regenerating D and the
/// test split from the embedded config.
pub fn load_ensemble(manifest_path: &Path) -> Result<(EnsembleManifest, EnsembleRun)> {
    let manifest: EnsembleManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let models = manifest
        .model_files
        .iter()
        .map(|f| load_model(&dir.join(f)).map(|(m, _)| m))
        .collect::<Result<Vec<_>>>()?;
    let prepared = prepare_data(&manifest.config)?;
    let (clean, _, _) = degraded_data(&manifest.config, &prepared.train)?;
    let ensemble = FoldEnsemble {
        k: models.len(),
        blocks: manifest.blocks.clone(),
        models,
        accuracies: manifest.accuracies.clone(),
        reports: manifest.reports.clone(),
        init_seeds: manifest.init_seeds.clone(),
        train_seeds: manifest.train_seeds.clone(),
        spread: manifest.accuracy_spread,
        spread_violation: manifest.spread_violation,
    };
    ensemble.block_of(clean.len())?;
    let run = EnsembleRun {
        ensemble,
        data: clean,
        test: prepared.test,
        corrupted_labels: manifest.corrupted_labels,
    };
    Ok((manifest, run))
}

pub fn save_explanations(cfg: &RunConfig, table: &ExplanationTable) -> Result<Vec<PathBuf>> {
    let map_shape = table
        .maps
        .iter()
        .flatten()
        .next()
        .map_or_else(Vec::new, |m| m.values.shape().to_vec());
    table
        .maps
        .iter()
        .enumerate()
        .map(|(fold, maps)| {
            let archive = ExplanationArchive::from_maps(
                table.method,
                &model_id(fold),
                &map_shape,
                maps,
                cfg.attribution.rng_seed,
            )?;
            let path = archive_path(cfg, table.method, fold);
            write_archive(&archive, &path)?;
            Ok(path)
        })
        .collect()
}

pub fn load_explanations(cfg: &RunConfig, method: Method, k: usize) -> Result<ExplanationTable> {
    let maps = (0..k)
        .map(|fold| {
            let archive = read_archive(&archive_path(cfg, method, fold))?;
            if archive.header.method != method {
                return Err(Error::format(8, format!(
                    "archive for fold {fold} holds {} maps, expected {method}",
                    archive.header.method
                )));
            }
            archive.to_maps()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationTable { method, maps })
}

pub fn save_report(report: &MetricReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join(report.file_name());
    write_json(report, &path)?;
    Ok(path)
}

pub fn load_report(path: &Path) -> Result<MetricReport> {
    read_json(path)
}

/// Runs every stage through the on-disk formats: ensemble, archives, report.
pub fn run_to_disk(cfg: &RunConfig) -> Result<PathBuf> {
    let prepared = prepare_data(cfg)?;
    let run = build_ensemble(cfg, &prepared)?;
    save_ensemble(cfg, &run, &ensemble_dir(cfg))?;
    save_explanations(cfg, &explain_run(cfg, &run, cfg.method)?)?;
    let table = load_explanations(cfg, cfg.method, run.ensemble.k)?;
    let report = evaluate(cfg, &run, &table, cfg.distance)?;
    save_report(&report, &cfg.output_dir.join("reports"))
}

/// The undegraded run followed by every kind at its standard levels.
pub fn sweep_specs(kinds: &[DegradationKind], seed: u64, noise_sigma: f64) -> Vec<Option<DegradationSpec>> {
    let mut specs = vec![None];
    for &kind in kinds {
        for level in kind.standard_levels() {
            specs.push(Some(DegradationSpec {
                noise_sigma,
                ..DegradationSpec::new(kind, level, seed)
            }));
        }
    }
    specs
}

/// Metrics for each method under each degradation; one ensemble per spec.
pub fn degrade_sweep(
    cfg: &RunConfig,
    methods: &[Method],
    specs: &[Option<DegradationSpec>],
) -> Result<Vec<MetricReport>> {
    let prepared = prepare_data(cfg)?;
    let mut reports = Vec::new();
    for spec in specs {
        let run_cfg = RunConfig {
            degradation: spec.clone(),
            ..cfg.clone()
        };
        let run = build_ensemble(&run_cfg, &prepared)?;
        for &method in methods {
            let table = explain_run(&run_cfg, &run, method)?;
            let report = evaluate(&RunConfig { method, ..run_cfg.clone() }, &run, &table, cfg.distance)?;
            log::info!(
                "{method} {:?}: reco {:?} mege {:?}",
                report.degradation_label(),
                report.reco,
                report.mege
            );
            reports.push(report);
        }
    }
    Ok(reports)
}

fn sorted_reports(reports: &[MetricReport]) -> Vec<&MetricReport> {
    let mut sorted: Vec<&MetricReport> = reports.iter().collect();
    sorted.sort_by(|a, b| {
        let (ka, la) = a.degradation_label();
        let (kb, lb) = b.degradation_label();
        a.method
            .code()
            .cmp(b.method.code())
            .then(ka.cmp(&kb))
            .then(la.total_cmp(&lb))
            .then(a.distance_kind.cmp(&b.distance_kind))
    });
    sorted
}

#[derive(Serialize)]
struct TableRow<'a> {
    method: &'a str,
    distance: &'a str,
    degradation: String,
    level: f64,
    k: usize,
    mean_accuracy: Option<f64>,
    accuracy_spread: f64,
    reco: Option<f64>,
    reco_auc: Option<f64>,
    best_gamma: Option<f64>,
    mege: Option<f64>,
    mu_f: Option<f64>,
    s_avg: Option<f64>,
    s_equal: usize,
    s_diff: usize,
    skipped: usize,
}

#[derive(Serialize)]
struct HistogramRow<'a> {
    method: &'a str,
    distance: &'a str,
    degradation: &'a str,
    level: f64,
    set: &'a str,
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
}

fn csv_string<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Format {
            offset: 0,
            message: format!("CSV row: {e}"),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format {
        offset: 0,
        message: format!("CSV flush: {e}"),
    })?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

/// One row per report, ordered by method, then degradation kind and level.
pub fn metrics_table_csv(reports: &[MetricReport]) -> Result<String> {
    csv_string(sorted_reports(reports).into_iter().map(|r| {
        let (degradation, level) = r.degradation_label();
        TableRow {
            method: r.method.code(),
            distance: &r.distance_kind,
            degradation,
            level,
            k: r.k,
            mean_accuracy: mean(&r.accuracies),
            accuracy_spread: r.accuracy_spread,
            reco: r.reco,
            reco_auc: r.reco_auc,
            best_gamma: r.best_gamma,
            mege: r.mege,
            mu_f: r.mu_f_mean,
            s_avg: r.s_avg_mean,
            s_equal: r.s_equal_count,
            s_diff: r.s_diff_count,
            skipped: r.skipped_pairs,
        }
    }))
}

/// Long-format S= / S≠ histogram rows for plotting.
pub fn histogram_csv(reports: &[MetricReport]) -> Result<String> {
    let mut rows = Vec::new();
    let labelled: Vec<(&MetricReport, (String, f64))> = sorted_reports(reports)
        .into_iter()
        .map(|r| (r, r.degradation_label()))
        .collect();
    for (r, (kind, level)) in &labelled {
        let h = &r.histograms;
        let width = h.upper / HISTOGRAM_BINS as f64;
        for (set, bins) in [("s_equal", &h.s_equal_bins), ("s_diff", &h.s_diff_bins)] {
            for (bin, &count) in bins.iter().enumerate() {
                rows.push(HistogramRow {
                    method: r.method.code(),
                    distance: &r.distance_kind,
                    degradation: kind,
                    level: *level,
                    set,
                    bin,
                    lower: bin as f64 * width,
                    upper: (bin + 1) as f64 * width,
                    count,
                });
            }
        }
    }
    csv_string(rows)
}

/// Loads every `*.json` metric report in `dir`, in file-name order.
pub fn collect_reports(dir: &Path) -> Result<Vec<MetricReport>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            paths.insert(path.clone(), ());
        }
    }
    paths.keys().map(|p| load_report(p)).collect()
}

pub fn write_tables(reports: &[MetricReport], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let table = dir.join("metrics.csv");
    let hist = dir.join("histograms.csv");
    container::write_file(&table, metrics_table_csv(reports)?.as_bytes())?;
    container::write_file(&hist, histogram_csv(reports)?.as_bytes())?;
    Ok((table, hist))
}

pub fn write_reports(reports: &[MetricReport], dir: &Path) -> Result<Vec<PathBuf>> {
    reports.iter().map(|r| save_report(r, dir)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig {
            degradation: Some(DegradationSpec::new(DegradationKind::InvertLabels, 0.3, 4)),
            ..RunConfig::default()
        };
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_carry_protocol_constants() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.ensemble.k, 5);
        assert_eq!(cfg.attribution.ig_steps, 60);
        assert_eq!(cfg.attribution.sg_samples, 60);
        assert_eq!(cfg.attribution.sg_sigma, 0.2);
        assert_eq!(cfg.fidelity.subset_fraction, 0.15);
        assert_eq!(cfg.fidelity.baseline, 0.0);
        assert_eq!(cfg.stability.radius, 0.1);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let err = RunConfig::from_toml("methd = \"SM\"\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("methd"), "{err}");
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_toml("method = \"GC\"\n[ensemble]\nk = 3\n").unwrap();
        assert_eq!(cfg.method, Method::GradCam);
        assert_eq!(cfg.ensemble.k, 3);
        assert_eq!(cfg.ensemble.accuracy_tolerance, 0.03);
    }
}
