//! k-fold cross-training: block partition, leave-one-block-out models,
//! explanations under every model, and the S= / S≠ distance multisets.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{explain, AttributionConfig, ExplanationMap, Method};
use crate::datasets::LabeledDataset;
use crate::distance::{distance, DistanceKind};
use crate::error::{Error, Result};
use crate::nn::{accuracy, train, Architecture, Model, TrainConfig, TrainReport};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::Tensor;

/// Splits `0..dataset.len()` into `k` disjoint blocks whose sizes differ by
/// at most one. Stratified mode deals each class round-robin so per-class
/// counts also differ by at most one between blocks.
pub fn partition(
    dataset: &LabeledDataset,
    k: usize,
    seed: u64,
    stratified: bool,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    if k > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds dataset size {}",
            dataset.len()
        )));
    }
    let order: Vec<usize> = if stratified {
        dataset.shuffled_class_indices(seed).concat()
    } else {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        all.shuffle(&mut rng_for(seed, &[]));
        all
    };
    let mut blocks = vec![Vec::new(); k];
    if stratified {
        for (pos, idx) in order.into_iter().enumerate() {
            blocks[pos % k].push(idx);
        }
    } else {
        let (base, extra) = (dataset.len() / k, dataset.len() % k);
        let mut it = order.into_iter();
        for (b, block) in blocks.iter_mut().enumerate() {
            let size = base + usize::from(b < extra);
            block.extend(it.by_ref().take(size));
        }
    }
    for b in &mut blocks {
        b.sort_unstable();
    }
    Ok(blocks)
}

/// `block_of[sample]` for a partition.
pub fn block_assignment(blocks: &[Vec<usize>], n: usize) -> Result<Vec<usize>> {
    let mut owner = vec![usize::MAX; n];
    for (b, block) in blocks.iter().enumerate() {
        for &i in block {
            if i >= n || owner[i] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "index {i} is out of range or in two blocks"
                )));
            }
            owner[i] = b;
        }
    }
    if let Some(missing) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(Error::InvalidArgument(format!("sample {missing} is in no block")));
    }
    Ok(owner)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub k: usize,
    pub partition_seed: u64,
    pub stratified: bool,
    pub accuracy_tolerance: f64,
    /// Abort when the spread exceeds the tolerance instead of warning.
    pub strict: bool,
    /// Skip the spread check entirely (degraded ensembles).
    pub check_spread: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k: 5,
            partition_seed: 0,
            stratified: true,
            accuracy_tolerance: 0.03,
            strict: false,
            check_spread: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FoldEnsemble {
    pub k: usize,
    pub blocks: Vec<Vec<usize>>,
    /// Model `i` was trained on every block except `blocks[i]`.
    pub models: Vec<Model>,
    /// Test-set accuracy of each model.
    pub accuracies: Vec<f64>,
    pub reports: Vec<TrainReport>,
    pub init_seeds: Vec<u64>,
    pub train_seeds: Vec<u64>,
    pub spread: f64,
    pub spread_violation: bool,
}

impl FoldEnsemble {
    pub fn block_of(&self, n: usize) -> Result<Vec<usize>> {
        block_assignment(&self.blocks, n)
    }
}

pub fn accuracy_spread(accuracies: &[f64]) -> f64 {
    let max = accuracies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = accuracies.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Trains the `k` leave-one-block-out models (in parallel) and checks that
/// their test accuracies stay within the configured spread.
pub fn train_ensemble(
    data: &LabeledDataset,
    test: &LabeledDataset,
    arch: &Architecture,
    cfg: &EnsembleConfig,
    train_cfg: &TrainConfig,
) -> Result<FoldEnsemble> {
    let blocks = partition(data, cfg.k, cfg.partition_seed, cfg.stratified)?;
    let init_seeds: Vec<u64> = (0..cfg.k)
        .map(|i| derive_seed(train_cfg.seed, &[1, i as u64]))
        .collect();
    let train_seeds: Vec<u64> = (0..cfg.k)
        .map(|i| derive_seed(train_cfg.seed, &[2, i as u64]))
        .collect();
    let trained = (0..cfg.k)
        .into_par_iter()
        .map(|i| {
            let kept: Vec<usize> = blocks
                .iter()
                .enumerate()
                .filter(|&(b, _)| b != i)
                .flat_map(|(_, block)| block.iter().copied())
                .collect::<Vec<_>>();
            let mut kept = kept;
            kept.sort_unstable();
            let fold_data = data.subset(&kept);
            let model = Model::new(arch.clone(), init_seeds[i])?;
            let fold_cfg = TrainConfig {
                seed: train_seeds[i],
                ..train_cfg.clone()
            };
            let (model, report) = train(&model, &fold_data, &fold_cfg)?;
            let acc = accuracy(&model, test)?;
            log::info!("fold {i}: train acc {:.4}, test acc {acc:.4}", report.train_accuracy);
            Ok((model, report, acc))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut models = Vec::with_capacity(cfg.k);
    let mut reports = Vec::with_capacity(cfg.k);
    let mut accuracies = Vec::with_capacity(cfg.k);
    for (m, r, a) in trained {
        models.push(m);
        reports.push(r);
        accuracies.push(a);
    }
    let spread = accuracy_spread(&accuracies);
    let spread_violation = cfg.check_spread && spread > cfg.accuracy_tolerance;
    if spread_violation {
        if cfg.strict {
            return Err(Error::AccuracySpread {
                spread,
                tolerance: cfg.accuracy_tolerance,
                accuracies,
            });
        }
        log::warn!(
            "fold accuracy spread {spread:.4} exceeds tolerance {:.4}",
            cfg.accuracy_tolerance
        );
    }
    Ok(FoldEnsemble {
        k: cfg.k,
        blocks,
        models,
        accuracies,
        reports,
        init_seeds,
        train_seeds,
        spread,
        spread_violation,
    })
}

/// Explanations and predictions of every model on every sample:
/// `maps[model][sample]`.
#[derive(Debug, Clone)]
pub struct ExplanationTable {
    pub method: Method,
    pub maps: Vec<Vec<ExplanationMap>>,
}

impl ExplanationTable {
    pub fn predictions(&self) -> Vec<Vec<usize>> {
        self.maps
            .iter()
            .map(|row| row.iter().map(|m| m.predicted_class).collect())
            .collect()
    }

    pub fn values(&self) -> Vec<Vec<Tensor>> {
        self.maps
            .iter()
            .map(|row| row.iter().map(|m| m.values.clone()).collect())
            .collect()
    }
}

/// Per-sample attribution config: stochastic methods draw their noise from
/// a seed tied to the sample, shared by every model.
pub fn sample_config(cfg: &AttributionConfig, sample: usize) -> AttributionConfig {
    AttributionConfig {
        rng_seed: derive_seed(cfg.rng_seed, &[sample as u64]),
        ..cfg.clone()
    }
}

pub fn model_id(fold: usize) -> String {
    format!("fold-{fold}")
}

pub fn explain_all(
    models: &[Model],
    data: &LabeledDataset,
    method: Method,
    cfg: &AttributionConfig,
) -> Result<ExplanationTable> {
    let maps = models
        .iter()
        .enumerate()
        .map(|(mi, model)| {
            (0..data.len())
                .into_par_iter()
                .map(|s| {
                    explain(method, model, &data.image(s), &sample_config(cfg, s))
                        .map(|m| m.with_ids(model_id(mi), data.sample_ids()[s].clone()))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExplanationTable { method, maps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub sample_id: String,
    /// Model trained on the sample.
    pub trained: usize,
    /// Model whose held-out block contains the sample.
    pub held_out: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeparationSets {
    pub s_equal: Vec<f64>,
    pub s_diff: Vec<f64>,
    pub equal_pairs: Vec<PairRecord>,
    pub diff_pairs: Vec<PairRecord>,
    /// Pairs where neither model predicted the label.
    pub skipped_neither: usize,
    /// Pairs whose distance was undefined on a degenerate (constant) map.
    pub skipped_degenerate: usize,
    pub total_pairs: usize,
}

impl SeparationSets {
    pub fn skipped_pairs(&self) -> usize {
        self.skipped_neither + self.skipped_degenerate
    }
}

/// Pairs every sample's held-out model with each of the `k - 1` models
/// trained on it, in sample order then trained-model order.
///
/// `predictions[m][s]` and `maps[m][s]` hold model `m`'s prediction and
/// explanation for sample `s`.
pub fn assemble_separation_sets(
    block_of: &[usize],
    labels: &[usize],
    sample_ids: &[String],
    predictions: &[Vec<usize>],
    maps: &[Vec<Tensor>],
    kind: DistanceKind,
) -> Result<SeparationSets> {
    let k = predictions.len();
    if k == 0 || maps.len() != k {
        return Err(Error::InvalidArgument(
            "separation sets need a non-empty ensemble with one map row per model".into(),
        ));
    }
    let n = labels.len();
    if block_of.len() != n
        || sample_ids.len() != n
        || predictions.iter().any(|p| p.len() != n)
        || maps.iter().any(|m| m.len() != n)
    {
        return Err(Error::Shape(format!(
            "inconsistent ensemble tables for {n} samples"
        )));
    }
    let mut sets = SeparationSets::default();
    for s in 0..n {
        let held = block_of[s];
        if held >= k {
            return Err(Error::InvalidArgument(format!(
                "sample {s} is held out by block {held} but there are {k} models"
            )));
        }
        let y = labels[s];
        let held_ok = predictions[held][s] == y;
        for trained in (0..k).filter(|&i| i != held) {
            sets.total_pairs += 1;
            let trained_ok = predictions[trained][s] == y;
            if !trained_ok && !held_ok {
                sets.skipped_neither += 1;
                continue;
            }
            let d = match distance(kind, &maps[trained][s], &maps[held][s]) {
                Ok(d) => d,
                Err(Error::Degenerate(_)) => {
                    sets.skipped_degenerate += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let record = PairRecord {
                sample_id: sample_ids[s].clone(),
                trained,
                held_out: held,
                distance: d,
            };
            if trained_ok && held_ok {
                sets.s_equal.push(d);
                sets.equal_pairs.push(record);
            } else {
                sets.s_diff.push(d);
                sets.diff_pairs.push(record);
            }
        }
    }
    Ok(sets)
}

pub fn separation_sets_from_table(
    ensemble: &FoldEnsemble,
    data: &LabeledDataset,
    table: &ExplanationTable,
    kind: DistanceKind,
) -> Result<SeparationSets> {
    assemble_separation_sets(
        &ensemble.block_of(data.len())?,
        data.labels(),
        data.sample_ids(),
        &table.predictions(),
        &table.values(),
        kind,
    )
}

pub fn build_separation_sets(
    ensemble: &FoldEnsemble,
    data: &LabeledDataset,
    method: Method,
    cfg: &AttributionConfig,
    kind: DistanceKind,
) -> Result<SeparationSets> {
    if ensemble.models.is_empty() {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let table = explain_all(&ensemble.models, data, method, cfg)?;
    separation_sets_from_table(ensemble, data, &table, kind)
}
