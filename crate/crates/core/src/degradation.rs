//! Controlled model degradations: weight noise, label inversion and
//! training-set reduction.

use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    RandomizeWeights,
    InvertLabels,
    LimitData,
}

impl DegradationKind {
    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::RandomizeWeights => "randomize_weights",
            DegradationKind::InvertLabels => "invert_labels",
            DegradationKind::LimitData => "limit_data",
        }
    }

    /// The level grid swept by default.
    pub fn standard_levels(self) -> [f64; 3] {
        match self {
            DegradationKind::RandomizeWeights | DegradationKind::InvertLabels => [0.05, 0.10, 0.30],
            DegradationKind::LimitData => [0.75, 0.50, 0.25],
        }
    }
}

impl std::fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            DegradationKind::RandomizeWeights,
            DegradationKind::InvertLabels,
            DegradationKind::LimitData,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown degradation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    #[default]
    OutputFirst,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub level: f64,
    /// Noise std as a multiple of each layer's parameter std.
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub selection: LayerSelection,
}

fn default_noise_sigma() -> f64 {
    0.5
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, level: f64, seed: u64) -> Self {
        DegradationSpec {
            kind,
            level,
            noise_sigma: default_noise_sigma(),
            seed,
            selection: LayerSelection::OutputFirst,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.level) {
            return Err(Error::InvalidArgument(format!(
                "{} level {} outside [0, 1]",
                self.kind, self.level
            )));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_sigma must be positive, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }

    fn expect(&self, kind: DegradationKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "expected a {kind} spec, got {}",
                self.kind
            )));
        }
        self.validate()
    }
}

/// ⌈level · n⌉, ignoring floating-point excess such as 0.3 · 10.
fn ceil_fraction(level: f64, n: usize) -> usize {
    ((level * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices (into the parameterized layers) of the layers a spec perturbs.
pub fn selected_layers(model: &Model, spec: &DegradationSpec) -> Vec<usize> {
    let mut layers = model.param_layer_indices();
    let count = ceil_fraction(spec.level, layers.len());
    match spec.selection {
        LayerSelection::OutputFirst => layers.reverse(),
        LayerSelection::Random => layers.shuffle(&mut rng_for(spec.seed, &[0x4c])),
    }
    layers.truncate(count);
    layers.sort_unstable();
    layers
}

/// Adds `N(0, (noise_sigma · std)²)` to every parameter of the selected
/// layers, where `std` is the layer's own parameter spread.
pub fn randomize_weights(model: &Model, spec: &DegradationSpec) -> Result<Model> {
    spec.expect(DegradationKind::RandomizeWeights)?;
    let mut out = model.clone();
    for layer in selected_layers(model, spec) {
        let group = &mut out.params_mut()[layer];
        let n: usize = group.iter().map(Vec::len).sum();
        let mean = group.iter().flatten().sum::<f64>() / n as f64;
        let var = group.iter().flatten().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let normal = Normal::new(0.0, spec.noise_sigma * scale)
            .map_err(|e| Error::InvalidArgument(format!("noise distribution: {e}")))?;
        let mut rng = rng_for(spec.seed, &[0x57, layer as u64]);
        for v in group.iter_mut().flatten() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct InvertedLabels {
    pub dataset: LabeledDataset,
    /// `corrupted[i]` is true when sample `i` received a wrong label.
    pub corrupted: Vec<bool>,
}

/// Replaces exactly round(level · N) labels with a label drawn uniformly
/// from the other classes.
pub fn invert_labels(data: &LabeledDataset, spec: &DegradationSpec) -> Result<InvertedLabels> {
    spec.expect(DegradationKind::InvertLabels)?;
    let c = data.classes();
    if c < 2 {
        return Err(Error::InvalidArgument("label inversion needs at least 2 classes".into()));
    }
    let n = data.len();
    let count = ((spec.level * n as f64).round() as usize).min(n);
    let mut rng = rng_for(spec.seed, &[0x494c]);
    let mut chosen: Vec<usize> = sample_indices(&mut rng, n, count).into_vec();
    chosen.sort_unstable();
    let mut labels = data.labels().to_vec();
    let mut corrupted = vec![false; n];
    for i in chosen {
        let r = rng.random_range(0..c - 1);
        labels[i] = if r >= labels[i] { r + 1 } else { r };
        corrupted[i] = true;
    }
    Ok(InvertedLabels {
        dataset: data.with_labels(labels)?,
        corrupted,
    })
}

/// Stratified subsample of ⌈level · N⌉ samples. Per-class quotas follow the
/// largest-remainder rule so the total is exact.
pub fn limit_data(data: &LabeledDataset, spec: &DegradationSpec) -> Result<LabeledDataset> {
    spec.expect(DegradationKind::LimitData)?;
    let target = ceil_fraction(spec.level, data.len());
    let counts = data.class_counts();
    let exact: Vec<f64> = counts
        .iter()
        .map(|&n| spec.level * n as f64)
        .collect();
    let mut quota: Vec<usize> = exact
        .iter()
        .zip(&counts)
        .map(|(&e, &n)| ((e + 1e-9).floor() as usize).min(n))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - quota[a] as f64;
        let fb = exact[b] - quota[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < counts[c] {
            quota[c] += 1;
            missing -= 1;
        }
    }
    if let Some(empty) = (0..counts.len()).find(|&c| counts[c] > 0 && quota[c] == 0) {
        return Err(Error::InvalidArgument(format!(
            "limiting to {} of the data leaves class {empty} without samples",
            spec.level
        )));
    }
    let mut keep = Vec::with_capacity(target);
    for (class, list) in data.shuffled_class_indices(spec.seed).into_iter().enumerate() {
        keep.extend_from_slice(&list[..quota[class]]);
    }
    keep.sort_unstable();
    Ok(data.subset(&keep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_shapes;
    use crate::nn::Architecture;

    fn model() -> Model {
        Model::new(Architecture::small_cnn([1, 8, 8], &[2, 3], 3), 5).unwrap()
    }

    #[test]
    fn zero_level_keeps_model() {
        let m = model();
        let spec = DegradationSpec::new(DegradationKind::RandomizeWeights, 0.0, 1);
        assert_eq!(randomize_weights(&m, &spec).unwrap().params(), m.params());
    }

    #[test]
    fn output_layer_goes_first() {
        let m = model();
        let spec = DegradationSpec::new(DegradationKind::RandomizeWeights, 0.3, 1);
        let sel = selected_layers(&m, &spec);
        assert_eq!(sel, vec![*m.param_layer_indices().last().unwrap()]);
        let out = randomize_weights(&m, &spec).unwrap();
        for (i, (a, b)) in m.params().iter().zip(out.params()).enumerate() {
            assert_eq!(a == b, !sel.contains(&i), "layer {i}");
        }
        assert_eq!(randomize_weights(&m, &spec).unwrap().params(), out.params());
    }

    #[test]
    fn wrong_kind_rejected() {
        let ds = gen_shapes(20, 8, 2, 0).unwrap();
        let spec = DegradationSpec::new(DegradationKind::LimitData, 0.5, 0);
        assert!(invert_labels(&ds, &spec).is_err());
    }

    #[test]
    fn inversion_counts_exactly() {
        let ds = gen_shapes(1000, 8, 4, 0).unwrap();
        let spec = DegradationSpec::new(DegradationKind::InvertLabels, 0.3, 7);
        let inv = invert_labels(&ds, &spec).unwrap();
        assert_eq!(inv.corrupted.iter().filter(|&&c| c).count(), 300);
        for i in 0..ds.len() {
            assert_eq!(inv.corrupted[i], inv.dataset.labels()[i] != ds.labels()[i]);
        }
        let none = invert_labels(&ds, &DegradationSpec { level: 0.0, ..spec }).unwrap();
        assert_eq!(none.dataset.labels(), ds.labels());
    }

    #[test]
    fn two_classes_flip() {
        let ds = gen_shapes(100, 8, 2, 0).unwrap();
        let spec = DegradationSpec::new(DegradationKind::InvertLabels, 0.5, 3);
        let inv = invert_labels(&ds, &spec).unwrap();
        for i in 0..ds.len() {
            if inv.corrupted[i] {
                assert_eq!(inv.dataset.labels()[i], 1 - ds.labels()[i]);
            }
        }
    }

    #[test]
    fn limit_is_stratified_and_deterministic() {
        let ds = gen_shapes(1000, 8, 8, 0).unwrap();
        let spec = DegradationSpec::new(DegradationKind::LimitData, 0.5, 2);
        let half = limit_data(&ds, &spec).unwrap();
        assert_eq!(half.len(), 500);
        assert!(half.class_counts().iter().all(|&c| c.abs_diff(500 / 8) <= 1));
        let q = DegradationSpec { level: 0.25, ..spec.clone() };
        assert_eq!(
            limit_data(&ds, &q).unwrap().sample_ids(),
            limit_data(&ds, &q).unwrap().sample_ids()
        );
        let full = limit_data(&ds, &DegradationSpec { level: 1.0, ..spec }).unwrap();
        assert_eq!(full.sample_ids(), ds.sample_ids());
    }

    #[test]
    fn limit_rejects_emptied_class() {
        let ds = gen_shapes(16, 8, 8, 0).unwrap();
        let spec = DegradationSpec::new(DegradationKind::LimitData, 0.2, 2);
        assert!(limit_data(&ds, &spec).is_err());
    }
}
