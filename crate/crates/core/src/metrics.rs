//! ReCo, ReCo_AUC, MeGe, fidelity (μF), stability (S_avg) and the
//! Gaussian counterexample oracle showing KL and W1 ignore ordering.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::attribution::{explain_class, AttributionConfig, ExplanationMap, Method};
use crate::crosstrain::SeparationSets;
use crate::distance::{distance, pearson, spearman_rho, DistanceKind};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::rng::rng_for;
use crate::tensor::{softmax, Tensor};

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub gamma: f64,
    pub tpr: f64,
    pub tnr: f64,
}

impl ScanPoint {
    pub fn balanced(&self) -> f64 {
        self.tpr + self.tnr - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoResult {
    pub reco: f64,
    pub best_threshold: f64,
    /// One point per distinct distance value, ascending.
    pub scan: Vec<ScanPoint>,
    pub reco_auc: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::InvalidArgument(format!("{name} contains non-finite distance {v}"))),
        None => Ok(()),
    }
}

/// Threshold scan over every distinct value of S= ∪ S≠ with strict
/// inequalities on both sides.
pub fn reco_from(s_equal: &[f64], s_diff: &[f64]) -> Result<RecoResult> {
    if s_equal.is_empty() {
        return Err(Error::UndefinedMetric("ReCo is undefined: S= is empty".into()));
    }
    if s_diff.is_empty() {
        return Err(Error::UndefinedMetric("ReCo is undefined: S≠ is empty".into()));
    }
    check_finite("S=", s_equal)?;
    check_finite("S≠", s_diff)?;
    let mut all: Vec<(f64, bool)> = s_equal
        .iter()
        .map(|&d| (d, true))
        .chain(s_diff.iter().map(|&d| (d, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = all.len();
    let total_diff = s_diff.len();

    let mut scan = Vec::new();
    let (mut eq_below, mut diff_below) = (0usize, 0usize);
    let mut start = 0;
    while start < n {
        let gamma = all[start].0;
        let mut end = start;
        let (mut eq_here, mut diff_here) = (0usize, 0usize);
        while end < n && all[end].0 == gamma {
            if all[end].1 {
                eq_here += 1;
            } else {
                diff_here += 1;
            }
            end += 1;
        }
        let diff_above = total_diff - diff_below - diff_here;
        scan.push(ScanPoint {
            gamma,
            tpr: ratio(eq_below, start),
            tnr: ratio(diff_above, n - end),
        });
        eq_below += eq_here;
        diff_below += diff_here;
        start = end;
    }

    let mut best = 0;
    for (i, p) in scan.iter().enumerate() {
        if p.balanced() > scan[best].balanced() {
            best = i;
        }
    }
    let reco = scan[best].balanced().clamp(0.0, 1.0);
    let reco_auc = if scan.len() == 1 {
        scan[0].balanced()
    } else {
        let range = scan[scan.len() - 1].gamma - scan[0].gamma;
        let area: f64 = scan
            .windows(2)
            .map(|w| 0.5 * (w[0].balanced() + w[1].balanced()) * (w[1].gamma - w[0].gamma))
            .sum();
        area / range
    };
    Ok(RecoResult {
        reco,
        best_threshold: scan[best].gamma,
        scan,
        reco_auc,
    })
}

pub fn reco(sets: &SeparationSets) -> Result<RecoResult> {
    reco_from(&sets.s_equal, &sets.s_diff)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MegeResult {
    pub mege: f64,
    pub mean_s_equal: f64,
    pub count: usize,
}

pub fn mege_from(s_equal: &[f64]) -> Result<MegeResult> {
    if s_equal.is_empty() {
        return Err(Error::UndefinedMetric("MeGe is undefined: S= is empty".into()));
    }
    check_finite("S=", s_equal)?;
    let mean = s_equal.iter().sum::<f64>() / s_equal.len() as f64;
    Ok(MegeResult {
        mege: 1.0 / (1.0 + mean),
        mean_s_equal: mean,
        count: s_equal.len(),
    })
}

pub fn mege(sets: &SeparationSets) -> Result<MegeResult> {
    mege_from(&sets.s_equal)
}

/// Counts of `values` in `bins` uniform bins over `[0, upper]`; the last
/// bin is closed.
pub fn histogram(values: &[f64], upper: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    if bins == 0 {
        return counts;
    }
    for &v in values {
        let b = if upper > 0.0 {
            ((v / upper) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub subset_fraction: f64,
    pub num_subsets: usize,
    pub baseline: f64,
    pub correlation: Correlation,
    /// Score with softmax probabilities instead of logits.
    pub use_probabilities: bool,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        FidelityConfig {
            subset_fraction: 0.15,
            num_subsets: 64,
            baseline: 0.0,
            correlation: Correlation::Pearson,
            use_probabilities: false,
            seed: 0,
        }
    }
}

fn class_score(model: &Model, x: &Tensor, class: usize, probabilities: bool) -> Result<f64> {
    let logits = model.logits(x)?;
    Ok(if probabilities {
        softmax(logits.data())[class]
    } else {
        logits.data()[class]
    })
}

/// Correlation between the attribution mass of random pixel subsets and the
/// score drop when those pixels (all channels) are set to the baseline.
pub fn fidelity_mu(
    model: &Model,
    x: &Tensor,
    explanation: &ExplanationMap,
    cfg: &FidelityConfig,
) -> Result<f64> {
    let [c, h, w] = match *x.shape() {
        [c, h, w] => [c, h, w],
        ref s => return Err(Error::Shape(format!("fidelity expects a [C, H, W] input, got {s:?}"))),
    };
    if explanation.values.shape() != [h, w] {
        return Err(Error::Shape(format!(
            "explanation shape {:?} does not match input spatial shape [{h}, {w}]",
            explanation.values.shape()
        )));
    }
    if !(cfg.subset_fraction > 0.0 && cfg.subset_fraction <= 1.0) || cfg.num_subsets < 2 {
        return Err(Error::InvalidArgument(format!(
            "fidelity needs subset_fraction in (0, 1] and at least 2 subsets, got {} and {}",
            cfg.subset_fraction, cfg.num_subsets
        )));
    }
    let pixels = h * w;
    let size = ((cfg.subset_fraction * pixels as f64).ceil() as usize).clamp(1, pixels);
    let class = explanation.predicted_class;
    let base_score = class_score(model, x, class, cfg.use_probabilities)?;
    let phi = explanation.values.data();
    let mut rng = rng_for(cfg.seed, &[]);
    let mut mass = Vec::with_capacity(cfg.num_subsets);
    let mut drop = Vec::with_capacity(cfg.num_subsets);
    for _ in 0..cfg.num_subsets {
        let subset = sample_indices(&mut rng, pixels, size);
        let mut masked = x.clone();
        let data = masked.data_mut();
        let mut m = 0.0;
        for p in subset.iter() {
            m += phi[p];
            for ch in 0..c {
                data[ch * pixels + p] = cfg.baseline;
            }
        }
        mass.push(m);
        drop.push(base_score - class_score(model, &masked, class, cfg.use_probabilities)?);
    }
    match cfg.correlation {
        Correlation::Pearson => pearson(&mass, &drop),
        Correlation::Spearman => spearman_rho(&mass, &drop),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// ℓ1 radius of the neighbourhood.
    pub radius: f64,
    pub num_neighbors: usize,
    pub distance: DistanceKind,
    pub seed: u64,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            radius: 0.1,
            num_neighbors: 32,
            distance: DistanceKind::SpearmanAbs,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityEstimate {
    pub s_avg: f64,
    pub evaluated: usize,
    pub skipped_degenerate: usize,
}

/// Uniform sample from the ℓ1 ball of `radius` around `center`: the first
/// d of d+1 normalized exponentials are uniform on the solid simplex.
pub fn sample_l1_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..=center.len()).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    center
        .iter()
        .zip(&e)
        .map(|(&c, &ei)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            c + sign * radius * ei / total
        })
        .collect()
}

/// Monte-Carlo average explanation distance over the ℓ1 neighbourhood of
/// `x`. Every neighbour explains the class predicted at `x`.
pub fn stability_savg(
    model: &Model,
    x: &Tensor,
    method: Method,
    attribution: &AttributionConfig,
    cfg: &StabilityConfig,
) -> Result<StabilityEstimate> {
    if cfg.num_neighbors == 0 {
        return Err(Error::InvalidArgument("stability needs at least one neighbour".into()));
    }
    if !(cfg.radius >= 0.0 && cfg.radius.is_finite()) {
        return Err(Error::InvalidArgument(format!("invalid radius {}", cfg.radius)));
    }
    let class = model.predict(x)?;
    let reference = explain_class(method, model, x, class, attribution)?;
    let mut rng = rng_for(cfg.seed, &[]);
    let (mut total, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for _ in 0..cfg.num_neighbors {
        let z = Tensor::new(x.shape().to_vec(), sample_l1_ball(x.data(), cfg.radius, &mut rng))?;
        let map = explain_class(method, model, &z, class, attribution)?;
        match distance(cfg.distance, &reference.values, &map.values) {
            Ok(d) => {
                total += d;
                evaluated += 1;
            }
            Err(Error::Degenerate(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if evaluated == 0 {
        return Err(Error::Degenerate(format!(
            "all {skipped} neighbour explanations were degenerate"
        )));
    }
    Ok(StabilityEstimate {
        s_avg: total / evaluated as f64,
        evaluated,
        skipped_degenerate: skipped,
    })
}

/// KL(N(mu1, s1²) ‖ N(mu2, s2²)).
pub fn gaussian_kl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    (sigma2 / sigma1).ln() + (sigma1 * sigma1 + (mu1 - mu2).powi(2)) / (2.0 * sigma2 * sigma2) - 0.5
}

/// Empirical 1-D Wasserstein-1 distance: ∫ |F_a − F_b|.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("W1 needs two non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Histogram KL(p ‖ q) over `bins` shared uniform bins with a half-count
/// pseudo-count in every bin.
pub fn histogram_kl(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    if p.is_empty() || q.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument("histogram KL needs samples and bins".into()));
    }
    let lo = p.iter().chain(q).cloned().fold(f64::INFINITY, f64::min);
    let hi = p.iter().chain(q).cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted = |v: &[f64]| v.iter().map(|x| x - lo).collect::<Vec<_>>();
    let hp = histogram(&shifted(p), hi - lo, bins);
    let hq = histogram(&shifted(q), hi - lo, bins);
    let tp = p.len() as f64 + 0.5 * bins as f64;
    let tq = q.len() as f64 + 0.5 * bins as f64;
    Ok(hp
        .iter()
        .zip(&hq)
        .map(|(&a, &b)| {
            let pa = (a as f64 + 0.5) / tp;
            let qb = (b as f64 + 0.5) / tq;
            pa * (pa / qb).ln()
        })
        .sum())
}

pub const ORACLE_HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleResult {
    pub kl_closed_form_consistent: f64,
    pub kl_closed_form_inconsistent: f64,
    pub kl_consistent: f64,
    pub kl_inconsistent: f64,
    pub w1_consistent: f64,
    pub w1_inconsistent: f64,
    pub reco_consistent: f64,
    pub reco_inconsistent: f64,
}

/// Consistent case: S= ~ N(mu1, σ1²), S≠ ~ N(mu2, σ2²). Inconsistent case:
/// the mirrored pair N(1 − mu1, σ1²), N(1 − mu2, σ2²), built from the same
/// draws so both cases share their sampling noise.
pub fn appendix_counterexample_oracle(
    mu1: f64,
    mu2: f64,
    sigma1: f64,
    sigma2: f64,
    n: usize,
    seed: u64,
) -> Result<CounterexampleResult> {
    if !(0.0 < mu1 && mu1 < mu2 && mu2 < 1.0) || !(sigma1 > 0.0 && sigma2 > 0.0) || n < 100 {
        return Err(Error::InvalidArgument(format!(
            "oracle needs 0 < mu1 < mu2 < 1, positive sigmas and n >= 100 (got {mu1}, {mu2}, {sigma1}, {sigma2}, {n})"
        )));
    }
    let draw = |mu: f64, sigma: f64, tag: u64| -> Result<Vec<f64>> {
        let normal = Normal::new(mu, sigma)
            .map_err(|e| Error::InvalidArgument(format!("normal distribution: {e}")))?;
        let mut rng = rng_for(seed, &[tag]);
        Ok((0..n).map(|_| normal.sample(&mut rng)).collect())
    };
    let eq1 = draw(mu1, sigma1, 1)?;
    let diff1 = draw(mu2, sigma2, 2)?;
    let mirror = |v: &[f64]| v.iter().map(|x| 1.0 - x).collect::<Vec<_>>();
    let eq2 = mirror(&eq1);
    let diff2 = mirror(&diff1);
    Ok(CounterexampleResult {
        kl_closed_form_consistent: gaussian_kl(mu1, sigma1, mu2, sigma2),
        kl_closed_form_inconsistent: gaussian_kl(1.0 - mu1, sigma1, 1.0 - mu2, sigma2),
        kl_consistent: histogram_kl(&eq1, &diff1, ORACLE_HISTOGRAM_BINS)?,
        kl_inconsistent: histogram_kl(&eq2, &diff2, ORACLE_HISTOGRAM_BINS)?,
        w1_consistent: wasserstein1(&eq1, &diff1)?,
        w1_inconsistent: wasserstein1(&eq2, &diff2)?,
        reco_consistent: reco_from(&eq1, &diff1)?.reco,
        reco_inconsistent: reco_from(&eq2, &diff2)?.reco,
    })
}
