//! Qualification checks for a candidate explanation distance: a sliding
//! spatial-bump test and a progressive-noise test. A distance passes when
//! its response is monotone in the perturbation, measured by the Spearman
//! correlation between the perturbation index and the distance.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distance::{distance, spearman_rho, DistanceKind};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::tensor::Tensor;

pub const SPATIAL_PASS_RHO: f64 = 0.99;
pub const NOISE_PASS_RHO: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityReport {
    pub test: String,
    pub distance: String,
    /// `(step_index, distance)`, one entry per step.
    pub distance_series: Vec<(usize, f64)>,
    /// Perturbation parameter of each step (bump position or noise sigma).
    pub parameters: Vec<f64>,
    pub monotone_fraction: f64,
    pub spearman_vs_index: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl SanityReport {
    fn build(
        test: &str,
        distance: String,
        parameters: Vec<f64>,
        values: Vec<f64>,
        threshold: f64,
    ) -> Self {
        let index: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
        // A flat response has no rank variance and counts as no correlation.
        let rho = spearman_rho(&index, &values).unwrap_or(0.0);
        let steps = values.len().saturating_sub(1).max(1);
        let rising = values
            .windows(2)
            .filter(|w| w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0))
            .count();
        SanityReport {
            test: test.into(),
            distance,
            distance_series: values.iter().copied().enumerate().collect(),
            parameters,
            monotone_fraction: rising as f64 / steps as f64,
            spearman_vs_index: rho,
            threshold,
            passed: rho >= threshold,
        }
    }

    /// `step,parameter,distance` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "parameter", "distance"]).expect("in-memory CSV");
        for ((i, d), p) in self.distance_series.iter().zip(&self.parameters) {
            w.serialize((i, p, d)).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("UTF-8 CSV")
    }
}

/// Anisotropic Gaussian bump centered at `(cx, cy)`.
pub fn gaussian_bump(size: usize, cx: f64, cy: f64, sigma_x: f64, sigma_y: f64) -> Tensor {
    Tensor::from_fn(&[size, size], |p| {
        let (y, x) = ((p / size) as f64, (p % size) as f64);
        (-((x - cx).powi(2) / (2.0 * sigma_x * sigma_x) + (y - cy).powi(2) / (2.0 * sigma_y * sigma_y)))
            .exp()
    })
}

/// Masks of the spatial test: a broad bump centered a quarter-image above
/// the top edge, sliding from the left corner column to the right one.
pub fn spatial_masks(size: usize, steps: usize) -> Vec<(f64, Tensor)> {
    let s = size as f64;
    (0..steps)
        .map(|t| {
            let cx = (s - 1.0) * t as f64 / (steps - 1) as f64;
            (cx, gaussian_bump(size, cx, -s / 4.0, s / 2.0, s / 4.0))
        })
        .collect()
}

pub fn sanity_spatial_with<F>(name: &str, dist: F, image_size: usize, steps: usize) -> Result<SanityReport>
where
    F: Fn(&Tensor, &Tensor) -> Result<f64>,
{
    if steps < 2 || image_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "spatial test needs steps >= 2 and size >= 2, got {steps} and {image_size}"
        )));
    }
    let masks = spatial_masks(image_size, steps);
    let first = &masks[0].1;
    let values = masks
        .iter()
        .map(|(_, m)| dist(first, m))
        .collect::<Result<Vec<_>>>()?;
    let params = masks.iter().map(|(p, _)| *p).collect();
    Ok(SanityReport::build("spatial", name.into(), params, values, SPATIAL_PASS_RHO))
}

pub fn sanity_spatial(kind: DistanceKind, image_size: usize, steps: usize) -> Result<SanityReport> {
    sanity_spatial_with(kind.name(), |a, b| distance(kind, a, b), image_size, steps)
}

pub fn sanity_noise_with<F>(
    name: &str,
    dist: F,
    base: &Tensor,
    sigmas: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<SanityReport>
where
    F: Fn(&Tensor, &Tensor) -> Result<f64>,
{
    if repeats == 0 || sigmas.len() < 2 {
        return Err(Error::InvalidArgument(
            "noise test needs repeats >= 1 and at least two sigmas".into(),
        ));
    }
    if sigmas.windows(2).any(|w| w[1] <= w[0]) || sigmas[0] < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigmas must be non-negative and strictly increasing: {sigmas:?}"
        )));
    }
    let mut values = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        if sigma == 0.0 {
            values.push(dist(base, base)?);
            continue;
        }
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let mut rng = rng_for(seed, &[si as u64]);
        let mut total = 0.0;
        for _ in 0..repeats {
            let noisy = base.map(|v| v + normal.sample(&mut rng));
            total += dist(base, &noisy)?;
        }
        values.push(total / repeats as f64);
    }
    Ok(SanityReport::build("noise", name.into(), sigmas.to_vec(), values, NOISE_PASS_RHO))
}

pub fn sanity_noise(
    kind: DistanceKind,
    base: &Tensor,
    sigmas: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<SanityReport> {
    sanity_noise_with(kind.name(), |a, b| distance(kind, a, b), base, sigmas, repeats, seed)
}

/// Default noise base: an off-center bump on a `size x size` map.
pub fn noise_base(size: usize) -> Tensor {
    let s = size as f64;
    gaussian_bump(size, s * 0.3, s * 0.4, s / 10.0, s / 10.0)
}

/// `{0.05, 0.10, ..., 0.50}`.
pub fn default_sigmas() -> Vec<f64> {
    (1..=10).map(|i| i as f64 * 0.05).collect()
}
