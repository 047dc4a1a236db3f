//! Gradient-based explanation methods: Saliency, Gradient⊙Input,
//! Integrated Gradients (trapezoidal), SmoothGrad and Grad-CAM.
//!
//! Every method returns a single-channel map with the input's spatial
//! shape. Saliency and SmoothGrad reduce channels by max-abs; Gradient⊙Input
//! and Integrated Gradients by signed sum followed by absolute value.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Layer, Model};
use crate::rng::rng_for;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SM")]
    Saliency,
    #[serde(rename = "GI")]
    GradientInput,
    #[serde(rename = "IG")]
    IntegratedGradients,
    #[serde(rename = "SG")]
    SmoothGrad,
    #[serde(rename = "GC")]
    GradCam,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Saliency,
        Method::GradientInput,
        Method::IntegratedGradients,
        Method::SmoothGrad,
        Method::GradCam,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Method::Saliency => "SM",
            Method::GradientInput => "GI",
            Method::IntegratedGradients => "IG",
            Method::SmoothGrad => "SG",
            Method::GradCam => "GC",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown method {s:?} (expected SM, GI, IG, SG or GC)"))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    pub ig_steps: usize,
    /// Constant baseline value for Integrated Gradients.
    pub ig_baseline: f64,
    pub sg_samples: usize,
    pub sg_sigma: f64,
    /// Average |gradient| (true) or the signed gradient (false) in SmoothGrad.
    pub sg_abs: bool,
    pub rng_seed: u64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            ig_steps: 60,
            ig_baseline: 0.0,
            sg_samples: 60,
            sg_sigma: 0.2,
            sg_abs: true,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationMap {
    /// `H x W` relevance scores.
    pub values: Tensor,
    pub method: Method,
    pub model_id: String,
    pub sample_id: String,
    pub predicted_class: usize,
}

impl ExplanationMap {
    pub fn with_ids(mut self, model_id: impl Into<String>, sample_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self.sample_id = sample_id.into();
        self
    }
}

fn image_dims(x: &Tensor) -> Result<[usize; 3]> {
    match *x.shape() {
        [c, h, w] => Ok([c, h, w]),
        ref s => Err(Error::Shape(format!(
            "attribution expects a [C, H, W] input, got {s:?}"
        ))),
    }
}

/// Per-pixel maximum of |value| across channels.
pub fn reduce_max_abs(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = image_dims(t)?;
    let plane = h * w;
    let d = t.data();
    Ok(Tensor::from_fn(&[h, w], |p| {
        (0..c).map(|ch| d[ch * plane + p].abs()).fold(0.0, f64::max)
    }))
}

/// Per-pixel |sum across channels|.
pub fn reduce_sum_abs(t: &Tensor) -> Result<Tensor> {
    let [c, h, w] = image_dims(t)?;
    let plane = h * w;
    let d = t.data();
    Ok(Tensor::from_fn(&[h, w], |p| {
        (0..c).map(|ch| d[ch * plane + p]).sum::<f64>().abs()
    }))
}

fn map(values: Tensor, method: Method, predicted_class: usize) -> ExplanationMap {
    ExplanationMap {
        values,
        method,
        model_id: String::new(),
        sample_id: String::new(),
        predicted_class,
    }
}

pub fn saliency(model: &Model, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    let g = model.grad_wrt_input(x, class_index)?;
    Ok(map(reduce_max_abs(&g)?, Method::Saliency, class_index))
}

/// Unreduced `gradient ⊙ input`, same shape as `x`.
pub fn gradient_input_raw(model: &Model, x: &Tensor, class_index: usize) -> Result<Tensor> {
    model
        .grad_wrt_input(x, class_index)?
        .zip_map(x, |g, v| g * v)
}

pub fn gradient_input(model: &Model, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    let gi = gradient_input_raw(model, x, class_index)?;
    Ok(map(reduce_sum_abs(&gi)?, Method::GradientInput, class_index))
}

/// Unreduced Integrated Gradients along the straight path from `baseline`
/// to `x`, averaging `steps` gradients with trapezoidal weights.
pub fn integrated_gradients_raw(
    model: &Model,
    x: &Tensor,
    class_index: usize,
    baseline: &Tensor,
    steps: usize,
) -> Result<Tensor> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "integrated gradients needs at least 2 steps, got {steps}"
        )));
    }
    x.check_same_shape(baseline)?;
    let diff = x.zip_map(baseline, |a, b| a - b)?;
    let intervals = (steps - 1) as f64;
    let mut avg = vec![0.0; x.len()];
    for j in 0..steps {
        let alpha = j as f64 / intervals;
        let point = baseline.zip_map(&diff, |b, d| b + alpha * d)?;
        let g = model.grad_wrt_input(&point, class_index)?;
        let weight = if j == 0 || j == steps - 1 {
            0.5 / intervals
        } else {
            1.0 / intervals
        };
        for (a, gv) in avg.iter_mut().zip(g.data()) {
            *a += weight * gv;
        }
    }
    Tensor::new(
        x.shape().to_vec(),
        diff.data().iter().zip(&avg).map(|(d, a)| d * a).collect(),
    )
}

pub fn integrated_gradients(
    model: &Model,
    x: &Tensor,
    class_index: usize,
    cfg: &AttributionConfig,
) -> Result<ExplanationMap> {
    let baseline = Tensor::filled(x.shape(), cfg.ig_baseline);
    let ig = integrated_gradients_raw(model, x, class_index, &baseline, cfg.ig_steps)?;
    Ok(map(
        reduce_sum_abs(&ig)?,
        Method::IntegratedGradients,
        class_index,
    ))
}

/// Mean gradient over `sg_samples` Gaussian perturbations of `x`, seeded by
/// `cfg.rng_seed`.
pub fn smoothgrad(
    model: &Model,
    x: &Tensor,
    class_index: usize,
    cfg: &AttributionConfig,
) -> Result<ExplanationMap> {
    if cfg.sg_samples == 0 {
        return Err(Error::InvalidArgument("smoothgrad needs at least one sample".into()));
    }
    let noise = Normal::new(0.0, cfg.sg_sigma)
        .ok()
        .filter(|_| cfg.sg_sigma > 0.0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("smoothgrad sigma must be positive, got {}", cfg.sg_sigma))
        })?;
    let mut rng = rng_for(cfg.rng_seed, &[0x5347]);
    let mut acc = vec![0.0; x.len()];
    for _ in 0..cfg.sg_samples {
        let noisy = x.map(|v| v + noise.sample(&mut rng));
        let g = model.grad_wrt_input(&noisy, class_index)?;
        for (a, gv) in acc.iter_mut().zip(g.data()) {
            *a += if cfg.sg_abs { gv.abs() } else { *gv };
        }
    }
    let m = cfg.sg_samples as f64;
    let mean = Tensor::new(x.shape().to_vec(), acc.into_iter().map(|a| a / m).collect())?;
    Ok(map(reduce_max_abs(&mean)?, Method::SmoothGrad, class_index))
}

/// Grad-CAM on the last convolution. When that convolution feeds a ReLU, the
/// rectified maps are used as the feature maps.
pub fn grad_cam(model: &Model, x: &Tensor, class_index: usize) -> Result<ExplanationMap> {
    let [_, h, w] = image_dims(x)?;
    let conv = model.last_conv_index().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "grad-cam needs a convolution layer; architecture {} has none",
            model.architecture().id
        ))
    })?;
    let feature_layer = match model.layers().get(conv + 1) {
        Some(Layer::Relu) => conv + 1,
        _ => conv,
    };
    let trace = model.forward(x)?;
    let grad = model.grad_wrt_layer_output(&trace, feature_layer, class_index)?;
    let maps = &trace.activations[feature_layer];
    let (k, fh, fw) = match *maps.shape() {
        [k, fh, fw] => (k, fh, fw),
        ref s => return Err(Error::Shape(format!("feature maps {s:?} are not [K, H, W]"))),
    };
    let plane = fh * fw;
    let mut cam = vec![0.0; plane];
    for ch in 0..k {
        let g = &grad.data()[ch * plane..(ch + 1) * plane];
        let alpha = g.iter().sum::<f64>() / plane as f64;
        if alpha == 0.0 {
            continue;
        }
        let a = &maps.data()[ch * plane..(ch + 1) * plane];
        for (c, &av) in cam.iter_mut().zip(a) {
            *c += alpha * av;
        }
    }
    for c in &mut cam {
        *c = c.max(0.0);
    }
    let cam = Tensor::new(vec![fh, fw], cam)?;
    Ok(map(bilinear_resize(&cam, h, w)?, Method::GradCam, class_index))
}

/// Bilinear resampling of an `H x W` map with half-pixel centers and edge clamping.
pub fn bilinear_resize(src: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (ih, iw) = match *src.shape() {
        [ih, iw] => (ih, iw),
        ref s => return Err(Error::Shape(format!("resize expects [H, W], got {s:?}"))),
    };
    if (ih, iw) == (out_h, out_w) {
        return Ok(src.clone());
    }
    let coord = |dst: usize, inn: usize, out: usize| {
        let s = ((dst as f64 + 0.5) * inn as f64 / out as f64 - 0.5).clamp(0.0, (inn - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(inn - 1);
        (lo, hi, s - lo as f64)
    };
    let d = src.data();
    Ok(Tensor::from_fn(&[out_h, out_w], |p| {
        let (y0, y1, fy) = coord(p / out_w, ih, out_h);
        let (x0, x1, fx) = coord(p % out_w, iw, out_w);
        let top = d[y0 * iw + x0] * (1.0 - fx) + d[y0 * iw + x1] * fx;
        let bottom = d[y1 * iw + x0] * (1.0 - fx) + d[y1 * iw + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Explains the model's predicted class for `x` with `method`.
pub fn explain(
    method: Method,
    model: &Model,
    x: &Tensor,
    cfg: &AttributionConfig,
) -> Result<ExplanationMap> {
    let class = model.predict(x)?;
    explain_class(method, model, x, class, cfg)
}

pub fn explain_class(
    method: Method,
    model: &Model,
    x: &Tensor,
    class_index: usize,
    cfg: &AttributionConfig,
) -> Result<ExplanationMap> {
    let m = match method {
        Method::Saliency => saliency(model, x, class_index)?,
        Method::GradientInput => gradient_input(model, x, class_index)?,
        Method::IntegratedGradients => integrated_gradients(model, x, class_index, cfg)?,
        Method::SmoothGrad => smoothgrad(model, x, class_index, cfg)?,
        Method::GradCam => grad_cam(model, x, class_index)?,
    };
    if !m.values.is_finite() {
        return Err(Error::Degenerate(format!("{method} produced non-finite values")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    /// conv 1x1 (w = 1) -> relu -> GAP -> dense with weights `head`.
    fn gap_model(head: [f64; 2]) -> Model {
        let arch = Architecture {
            id: "gap".into(),
            input_shape: vec![1, 4, 4],
            classes: 2,
            layers: vec![
                Layer::Conv2d { in_channels: 1, out_channels: 1, kernel: 1, padding: 0 },
                Layer::Relu,
                Layer::GlobalAvgPool,
                Layer::Dense { inputs: 1, outputs: 2 },
            ],
        };
        let params = vec![vec![vec![1.0], vec![0.0]], vec![], vec![], vec![head.to_vec(), vec![0.0; 2]]];
        Model::from_params(arch, params, 0).unwrap()
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
    }

    fn ramp() -> Tensor {
        Tensor::from_fn(&[1, 4, 4], |i| i as f64 / 16.0)
    }

    #[test]
    fn grad_cam_hand_case() {
        // alpha = 2/16 for class 0, so the map is x / 8.
        let model = gap_model([2.0, -1.0]);
        let x = ramp();
        let cam = grad_cam(&model, &x, 0).unwrap();
        for (c, v) in cam.values.data().iter().zip(x.data()) {
            assert!((c - v / 8.0).abs() < 1e-12);
        }
        // A negative weight gives a negative alpha, which the ReLU zeroes.
        let cam = grad_cam(&model, &x, 1).unwrap();
        assert!(cam.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grad_cam_needs_conv() {
        let model = Model::new(Architecture::linear(&[1, 4, 4], 2), 0).unwrap();
        assert!(matches!(grad_cam(&model, &ramp(), 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn linear_collapses() {
        let model = Model::new(Architecture::linear(&[3, 4, 4], 3), 5).unwrap();
        let x = ramp().map(|v| v + 0.1);
        let x = Tensor::from_fn(&[3, 4, 4], |i| x.data()[i % 16] * (1 + i / 16) as f64);
        let cfg = AttributionConfig::default();
        let sm = saliency(&model, &x, 1).unwrap();
        let sg = smoothgrad(&model, &x, 1, &cfg).unwrap();
        let gi = gradient_input(&model, &x, 1).unwrap();
        let ig = integrated_gradients(&model, &x, 1, &cfg).unwrap();
        assert!(max_diff(&sm.values, &sg.values) < 1e-12);
        assert!(max_diff(&gi.values, &ig.values) < 1e-12);
    }

    #[test]
    fn smoothgrad_is_seeded() {
        let model = Model::new(Architecture::small_cnn([1, 4, 4], &[2], 2), 1).unwrap();
        let cfg = AttributionConfig { sg_samples: 8, ..AttributionConfig::default() };
        let a = smoothgrad(&model, &ramp(), 0, &cfg).unwrap();
        let b = smoothgrad(&model, &ramp(), 0, &cfg).unwrap();
        let c = smoothgrad(&model, &ramp(), 0, &AttributionConfig { rng_seed: 9, ..cfg }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn maps_are_spatial_and_non_negative() {
        let model = Model::new(Architecture::small_cnn([2, 8, 8], &[3], 3), 2).unwrap();
        let x = Tensor::from_fn(&[2, 8, 8], |i| (i % 7) as f64 / 7.0);
        let cfg = AttributionConfig { ig_steps: 8, sg_samples: 4, ..AttributionConfig::default() };
        for method in Method::ALL {
            let m = explain(method, &model, &x, &cfg).unwrap();
            assert_eq!(m.values.shape(), &[8, 8], "{method}");
            assert!(m.values.data().iter().all(|&v| v >= 0.0), "{method}");
        }
    }

    #[test]
    fn bilinear_resize_known_values() {
        let src = Tensor::new(vec![2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = bilinear_resize(&src, 4, 4).unwrap();
        // Corners clamp to the source corners; half-pixel centers put the
        // second column a quarter of the way across.
        assert_eq!(up.data()[0], 0.0);
        assert_eq!(up.data()[15], 3.0);
        assert!((up.data()[1] - 0.25).abs() < 1e-12);
        assert!((up.data()[5] - 0.75).abs() < 1e-12);
        assert_eq!(bilinear_resize(&src, 2, 2).unwrap(), src);
    }

    #[test]
    fn method_codes_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.code().to_lowercase().parse::<Method>().unwrap(), m);
        }
        assert!("XX".parse::<Method>().is_err());
    }
}
