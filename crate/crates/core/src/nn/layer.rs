//! Layer descriptors and their per-sample forward/backward kernels.
//!
//! All kernels work on a single sample (no batch axis). Spatial tensors are
//! laid out channel-first: `[channels, height, width]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    /// Stride-1 convolution with symmetric zero padding.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    Relu,
    Softplus,
    /// Non-overlapping average pooling; trailing rows/cols that do not fill a window are dropped.
    AvgPool2d {
        size: usize,
    },
    GlobalAvgPool,
    Flatten,
}

impl Layer {
    pub fn is_conv(&self) -> bool {
        matches!(self, Layer::Conv2d { .. })
    }

    pub fn has_params(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    /// Shapes of the parameter tensors: weights then bias.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Layer::Dense { inputs, outputs } => vec![vec![outputs, inputs], vec![outputs]],
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            ],
            _ => Vec::new(),
        }
    }

    /// `(fan_in, fan_out)` used by the Glorot initializer.
    pub fn fans(&self) -> (usize, usize) {
        match *self {
            Layer::Dense { inputs, outputs } => (inputs, outputs),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            _ => (0, 0),
        }
    }

    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: String| Error::Shape(format!("layer {index} ({self:?}): {what}"));
        match *self {
            Layer::Dense { inputs, outputs } => {
                if input != [inputs] {
                    return Err(mismatch(format!("expected input [{inputs}], got {input:?}")));
                }
                Ok(vec![outputs])
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => {
                if input.len() != 3 || input[0] != in_channels {
                    return Err(mismatch(format!(
                        "expected input [{in_channels}, H, W], got {input:?}"
                    )));
                }
                if kernel == 0 || input[1] + 2 * padding < kernel || input[2] + 2 * padding < kernel
                {
                    return Err(mismatch(format!("kernel {kernel} does not fit {input:?}")));
                }
                Ok(vec![
                    out_channels,
                    input[1] + 2 * padding - kernel + 1,
                    input[2] + 2 * padding - kernel + 1,
                ])
            }
            Layer::Relu | Layer::Softplus => Ok(input.to_vec()),
            Layer::AvgPool2d { size } => {
                if input.len() != 3 || size == 0 || input[1] < size || input[2] < size {
                    return Err(mismatch(format!("cannot pool {input:?} by {size}")));
                }
                Ok(vec![input[0], input[1] / size, input[2] / size])
            }
            Layer::GlobalAvgPool => {
                if input.len() != 3 {
                    return Err(mismatch(format!("expected [C, H, W], got {input:?}")));
                }
                Ok(vec![input[0]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Forward kernel. `params` holds `[weights, bias]` for parameterized layers.
    pub(crate) fn forward(&self, input: &[f64], in_shape: &[usize], params: &[Vec<f64>]) -> Vec<f64> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                let (w, b) = (&params[0], &params[1]);
                (0..outputs)
                    .map(|o| {
                        let row = &w[o * inputs..(o + 1) * inputs];
                        b[o] + dot(row, input)
                    })
                    .collect()
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => conv_forward(
                input,
                &params[0],
                &params[1],
                ConvDims::new(in_channels, out_channels, kernel, padding, in_shape),
            ),
            Layer::Relu => input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
            Layer::Softplus => input.iter().map(|&v| softplus(v)).collect(),
            Layer::AvgPool2d { size } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h / size, w / size);
                let scale = 1.0 / (size * size) as f64;
                let mut out = vec![0.0; c * oh * ow];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = 0.0;
                            for u in 0..size {
                                let base = (ch * h + i * size + u) * w + j * size;
                                acc += input[base..base + size].iter().sum::<f64>();
                            }
                            out[(ch * oh + i) * ow + j] = acc * scale;
                        }
                    }
                }
                out
            }
            Layer::GlobalAvgPool => {
                let plane = in_shape[1] * in_shape[2];
                input
                    .chunks(plane)
                    .map(|p| p.iter().sum::<f64>() / plane as f64)
                    .collect()
            }
            Layer::Flatten => input.to_vec(),
        }
    }

    /// Backward kernel: returns the gradient w.r.t. the layer input and, when
    /// `param_grads` is given, accumulates parameter gradients into it.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        in_shape: &[usize],
        params: &[Vec<f64>],
        grad_out: &[f64],
        param_grads: Option<&mut [Vec<f64>]>,
    ) -> Vec<f64> {
        match *self {
            Layer::Dense { inputs, outputs } => {
                let w = &params[0];
                let mut grad_in = vec![0.0; inputs];
                for o in 0..outputs {
                    let g = grad_out[o];
                    if g == 0.0 {
                        continue;
                    }
                    let row = &w[o * inputs..(o + 1) * inputs];
                    for (gi, &wv) in grad_in.iter_mut().zip(row) {
                        *gi += g * wv;
                    }
                }
                if let Some(pg) = param_grads {
                    let (gw, gb) = pg.split_at_mut(1);
                    for o in 0..outputs {
                        let g = grad_out[o];
                        gb[0][o] += g;
                        let row = &mut gw[0][o * inputs..(o + 1) * inputs];
                        for (r, &x) in row.iter_mut().zip(input) {
                            *r += g * x;
                        }
                    }
                }
                grad_in
            }
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                padding,
            } => conv_backward(
                input,
                &params[0],
                grad_out,
                ConvDims::new(in_channels, out_channels, kernel, padding, in_shape),
                param_grads,
            ),
            // Subgradient at exactly zero is zero.
            Layer::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Layer::Softplus => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| g * sigmoid(x))
                .collect(),
            Layer::AvgPool2d { size } => {
                let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (h / size, w / size);
                let scale = 1.0 / (size * size) as f64;
                let mut grad_in = vec![0.0; c * h * w];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let g = grad_out[(ch * oh + i) * ow + j] * scale;
                            for u in 0..size {
                                let base = (ch * h + i * size + u) * w + j * size;
                                for v in &mut grad_in[base..base + size] {
                                    *v = g;
                                }
                            }
                        }
                    }
                }
                grad_in
            }
            Layer::GlobalAvgPool => {
                let plane = in_shape[1] * in_shape[2];
                let scale = 1.0 / plane as f64;
                grad_out
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * scale, plane))
                    .collect()
            }
            Layer::Flatten => grad_out.to_vec(),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy)]
struct ConvDims {
    cin: usize,
    cout: usize,
    k: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn new(cin: usize, cout: usize, k: usize, pad: usize, in_shape: &[usize]) -> Self {
        let (h, w) = (in_shape[1], in_shape[2]);
        ConvDims {
            cin,
            cout,
            k,
            pad,
            h,
            w,
            oh: h + 2 * pad - k + 1,
            ow: w + 2 * pad - k + 1,
        }
    }

    /// Output columns `j` for which input column `j + v - pad` is in bounds.
    fn col_range(&self, v: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(v);
        let hi = (self.w + self.pad).saturating_sub(v).min(self.ow);
        (lo, hi.max(lo))
    }
}

fn conv_forward(input: &[f64], weights: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.cout * d.oh * d.ow];
    for o in 0..d.cout {
        let plane = &mut out[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        plane.iter_mut().for_each(|v| *v = bias[o]);
        for c in 0..d.cin {
            for u in 0..d.k {
                for v in 0..d.k {
                    let wv = weights[((o * d.cin + c) * d.k + u) * d.k + v];
                    let (jlo, jhi) = d.col_range(v);
                    for i in 0..d.oh {
                        let row = i + u;
                        if row < d.pad || row - d.pad >= d.h {
                            continue;
                        }
                        let src = (c * d.h + row - d.pad) * d.w;
                        let dst = &mut plane[i * d.ow..(i + 1) * d.ow];
                        for j in jlo..jhi {
                            dst[j] += wv * input[src + j + v - d.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward(
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    d: ConvDims,
    param_grads: Option<&mut [Vec<f64>]>,
) -> Vec<f64> {
    let mut grad_in = vec![0.0; d.cin * d.h * d.w];
    let mut pg = param_grads;
    for o in 0..d.cout {
        let gplane = &grad_out[o * d.oh * d.ow..(o + 1) * d.oh * d.ow];
        if let Some(pg) = pg.as_deref_mut() {
            pg[1][o] += gplane.iter().sum::<f64>();
        }
        for c in 0..d.cin {
            for u in 0..d.k {
                for v in 0..d.k {
                    let widx = ((o * d.cin + c) * d.k + u) * d.k + v;
                    let wv = weights[widx];
                    let (jlo, jhi) = d.col_range(v);
                    let mut gw = 0.0;
                    for i in 0..d.oh {
                        let row = i + u;
                        if row < d.pad || row - d.pad >= d.h {
                            continue;
                        }
                        let src = (c * d.h + row - d.pad) * d.w;
                        let g = &gplane[i * d.ow..(i + 1) * d.ow];
                        for (j, &gj) in g.iter().enumerate().take(jhi).skip(jlo) {
                            let idx = src + j + v - d.pad;
                            grad_in[idx] += wv * gj;
                            gw += input[idx] * gj;
                        }
                    }
                    if let Some(pg) = pg.as_deref_mut() {
                        pg[0][widx] += gw;
                    }
                }
            }
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_same_padding_keeps_spatial_size() {
        let l = Layer::Conv2d {
            in_channels: 2,
            out_channels: 3,
            kernel: 3,
            padding: 1,
        };
        assert_eq!(l.output_shape(0, &[2, 5, 7]).unwrap(), vec![3, 5, 7]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        // 1 channel 3x3 input, 2x2 kernel, no padding.
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let out = conv_forward(
            &input,
            &w,
            &[0.5],
            ConvDims::new(1, 1, 2, 0, &[1, 3, 3]),
        );
        // top-left: 1*1 + 2*2 + 4*3 + 5*4 = 37
        assert_eq!(out, vec![37.5, 47.5, 67.5, 77.5]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
    }

    #[test]
    fn shape_error_names_layer() {
        let err = Layer::Dense { inputs: 4, outputs: 2 }
            .output_shape(3, &[5])
            .unwrap_err();
        assert!(err.to_string().contains("layer 3"));
    }
}
