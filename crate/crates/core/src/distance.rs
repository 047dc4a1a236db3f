//! Distances between explanation maps.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::ExplanationMap;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default dice binarization: keep the top 10% of each map.
pub const DEFAULT_DICE_QUANTILE: f64 = 0.9;
pub const SSIM_WINDOW: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceKind {
    /// `1 - |spearman rho|`.
    SpearmanAbs,
    L1,
    L2,
    /// `1 - SSIM`.
    Ssim,
    /// `1 - dice` on the pixels at or above the `quantile` of each map.
    Dice { quantile: f64 },
}

impl DistanceKind {
    pub const SHIPPED: [DistanceKind; 5] = [
        DistanceKind::SpearmanAbs,
        DistanceKind::L1,
        DistanceKind::L2,
        DistanceKind::Ssim,
        DistanceKind::Dice {
            quantile: DEFAULT_DICE_QUANTILE,
        },
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DistanceKind::SpearmanAbs => "spearman_abs",
            DistanceKind::L1 => "l1",
            DistanceKind::L2 => "l2",
            DistanceKind::Ssim => "ssim",
            DistanceKind::Dice { .. } => "dice",
        }
    }
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "spearman_abs" | "spearman" => DistanceKind::SpearmanAbs,
            "l1" => DistanceKind::L1,
            "l2" => DistanceKind::L2,
            "ssim" => DistanceKind::Ssim,
            "dice" => DistanceKind::Dice {
                quantile: DEFAULT_DICE_QUANTILE,
            },
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown distance {s:?} (expected spearman_abs, l1, l2, ssim or dice)"
                )))
            }
        })
    }
}

/// Average (fractional) ranks, 1-based; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation; errors when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 2 values, got {}",
            a.len()
        )));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Degenerate("constant input has zero variance".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} values", a.len(), b.len())));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn spearman_rho_tensors(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    spearman_rho(a.data(), b.data())
}

/// Distance between two raw maps of equal shape.
pub fn distance(kind: DistanceKind, a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    match kind {
        DistanceKind::SpearmanAbs => Ok(1.0 - spearman_rho(a.data(), b.data())?.abs()),
        DistanceKind::L1 => Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum()),
        DistanceKind::L2 => Ok(a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        DistanceKind::Ssim => Ok((1.0 - ssim(a, b)?).max(0.0)),
        DistanceKind::Dice { quantile } => dice_distance(a, b, quantile),
    }
}

/// Distance between two explanation maps; degenerate-input errors carry the sample id.
pub fn map_distance(kind: DistanceKind, a: &ExplanationMap, b: &ExplanationMap) -> Result<f64> {
    distance(kind, &a.values, &b.values).map_err(|e| match e {
        Error::Degenerate(msg) => Error::Degenerate(format!(
            "sample {} ({} vs {}): {msg}",
            a.sample_id, a.model_id, b.model_id
        )),
        other => other,
    })
}

fn map_dims(t: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w)),
        [n] => Ok((1, n)),
        ref s => Err(Error::Shape(format!("expected an H x W map, got {s:?}"))),
    }
}

/// Mean SSIM over all fully contained `7 x 7` uniform windows (smaller
/// odd windows for maps under 7 pixels a side), with `L` the joint dynamic
/// range of both maps and sample covariances.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w) = map_dims(a)?;
    let lo = a.data().iter().chain(b.data()).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.data().iter().chain(b.data()).cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range <= 0.0 {
        return Err(Error::Degenerate("both maps are the same constant (zero dynamic range)".into()));
    }
    let mut win = SSIM_WINDOW.min(h).min(w);
    if win % 2 == 0 {
        win -= 1;
    }
    let c1 = (0.01 * range).powi(2);
    let c2 = (0.03 * range).powi(2);
    let n = (win * win) as f64;
    let cov_norm = if win > 1 { n / (n - 1.0) } else { 1.0 };
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - win {
        for j in 0..=w - win {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in 0..win {
                let row = (i + u) * w + j;
                for v in 0..win {
                    let (x, y) = (da[row + v], db[row + v]);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let va = cov_norm * (saa / n - ma * ma);
            let vb = cov_norm * (sbb / n - mb * mb);
            let vab = cov_norm * (sab / n - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * vab + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Linear-interpolated quantile (`q` in `[0, 1]`) of a sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn dice_distance(a: &Tensor, b: &Tensor, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("dice quantile must lie in (0, 1), got {q}")));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("dice on empty maps".into()));
    }
    let (ta, tb) = (quantile(a.data(), q), quantile(b.data(), q));
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (ina, inb) = (x >= ta, y >= tb);
        na += ina as usize;
        nb += inb as usize;
        inter += (ina && inb) as usize;
    }
    Ok(1.0 - 2.0 * inter as f64 / (na + nb) as f64)
}
